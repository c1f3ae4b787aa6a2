use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use holotune::bench::bench_messages;
use holotune::hierarchy::{build_hierarchy, Catalog, Hierarchy};
use holotune::ml::{generate_dataset, DatasetKind};
use holotune::oracle::oracle_query;
use holotune::params::SimilarityConstants;
use holotune::protocol::{run_query, QueryError, QueryReport, RunOptions, DEFAULT_FOLDS};
use holotune::query::{parse_query, Query};
use holotune::tuner::DEFAULT_BUDGET;
use serde_json::json;

#[derive(Parser)]
#[command(name = "holotune", version, about = "Agent-tree algorithm selection and hyperparameter tuning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a query through the agent tree.
    Query(RunArgs),
    /// Answer a query by brute force, without the protocol.
    Oracle(RunArgs),
    /// Export the agent tree as Graphviz DOT.
    Dot(DotArgs),
    /// Count messages on worst-case chains.
    BenchMessages(BenchArgs),
    /// Write a synthetic dataset as JSON.
    GenData(GenArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    query: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    #[arg(long, default_value_t = 0.6)]
    alpha: f64,
    #[arg(long, default_value_t = 0.8)]
    tau: f64,
    /// Fold count for queries that do not set one.
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    folds: usize,
    /// Tuning budget for queries that do not set one.
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: usize,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the post-query tree snapshot here.
    #[arg(long)]
    dot: Option<PathBuf>,
    /// Include the message trace in the report.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct DotArgs {
    #[arg(long)]
    catalog: PathBuf,
    /// Output path; stdout when absent.
    #[arg(long)]
    dot: Option<PathBuf>,
    /// Also run this query and check that the tree is unchanged.
    #[arg(long)]
    query: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    /// Odd sizes of the algorithm structure, at least 3.
    #[arg(long, value_delimiter = ',', default_values_t = vec![15, 31, 63, 127])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    kind: String,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 2)]
    centers: usize,
    #[arg(long)]
    name: Option<String>,
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
    report: Option<Box<QueryReport>>,
}

impl Failure {
    fn input(kind: &'static str, message: impl ToString) -> Self {
        Failure {
            code: 2,
            kind,
            message: message.to_string(),
            report: None,
        }
    }
}

impl From<QueryError> for Failure {
    fn from(e: QueryError) -> Self {
        let code = match e {
            QueryError::Invalid(_) | QueryError::DataLoad(_) => 2,
            QueryError::NoMatch(_) | QueryError::EmptySelection(_) => 3,
            QueryError::NoData(_) => 4,
            QueryError::AmbiguousData(_) => 5,
        };
        Failure {
            code,
            kind: e.kind(),
            message: e.to_string(),
            report: e.report().cloned().map(Box::new),
        }
    }
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure::input("io", format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_catalog(path: &Path) -> Result<Hierarchy, Failure> {
    let cat = Catalog::load(path).map_err(|e| Failure::input("invalid_catalog", e))?;
    build_hierarchy(&cat).map_err(|e| Failure::input("invalid_catalog", e))
}

fn load_query(path: &Path) -> Result<Query, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::input("io", format!("{}: {e}", path.display())))?;
    parse_query(&text).map_err(|e| Failure::input("parse_error", e))
}

fn summary(report: &QueryReport) -> String {
    let mut lines = Vec::new();
    if let Some(w) = &report.winner {
        lines.push(format!(
            "winner: {}({}) {}={} via {}",
            w.family,
            w.params.canonical(),
            report.measure.as_str(),
            w.metric,
            w.provenance
        ));
    }
    for (sq, best) in report.subqueries.iter().zip(&report.best) {
        match best {
            Some(b) => lines.push(format!(
                "sq{}: r={} best {}({}) {}={}",
                sq.index,
                sq.r,
                b.family,
                b.params.canonical(),
                report.measure.as_str(),
                b.metric
            )),
            None => lines.push(format!("sq{}: no match (r=-1)", sq.index)),
        }
    }
    if let Some(m) = &report.messages {
        lines.push(format!(
            "messages: first={} second={} data={} bound={}",
            m.first.total, m.second.total, m.data.total, m.bound
        ));
    }
    lines.join("\n") + "\n"
}

fn run(args: &RunArgs, oracle: bool) -> Result<(), Failure> {
    let constants =
        SimilarityConstants::new(args.beta, args.alpha, args.tau).map_err(|e| Failure::input("invalid_constants", e))?;
    let h = load_catalog(&args.catalog)?;
    let q = load_query(&args.query)?;
    let opts = RunOptions {
        constants,
        seed: args.seed,
        folds: args.folds,
        budget: args.budget,
        trace: args.trace,
        ..RunOptions::default()
    };
    let outcome = if oracle {
        oracle_query(&h, &q, &opts)
    } else {
        run_query(&h, &q, &opts)
    };
    if let Some(path) = &args.dot {
        write_out(Some(path), &h.to_dot())?;
    }
    let report = outcome.map_err(Failure::from);
    let (report, failure) = match report {
        Ok(r) => (Some(r), None),
        Err(mut f) => (f.report.take().map(|r| *r), Some(f)),
    };
    if let Some(r) = &report {
        match &args.report {
            Some(path) => {
                write_out(Some(path), &r.to_json())?;
                print!("{}", summary(r));
            }
            None => println!("{}", r.to_json()),
        }
    }
    failure.map_or(Ok(()), Err)
}

fn dot(args: &DotArgs) -> Result<(), Failure> {
    let h = load_catalog(&args.catalog)?;
    let before = h.to_dot();
    if let Some(qpath) = &args.query {
        let q = load_query(qpath)?;
        let opts = RunOptions {
            seed: args.seed,
            ..RunOptions::default()
        };
        run_query(&h, &q, &opts)?;
        if h.to_dot() != before {
            return Err(Failure {
                code: 1,
                kind: "snapshot_changed",
                message: "tree changed while running the query".into(),
                report: None,
            });
        }
        eprintln!("snapshots before and after the query are identical");
    }
    write_out(args.dot.as_deref(), &before)
}

fn bench(args: &BenchArgs) -> Result<(), Failure> {
    if let Some(bad) = args.sizes.iter().find(|&&s| s < 3 || s % 2 == 0) {
        return Err(Failure::input("invalid_size", format!("sizes must be odd and >= 3, got {bad}")));
    }
    let rows = bench_messages(&args.sizes, args.seed).map_err(|e| Failure {
        code: 1,
        kind: "bench_failed",
        message: e.to_string(),
        report: None,
    })?;
    println!("{:>6} {:>6} {:>6} {:>6} {:>6} {:>6}", "|G|", "first", "second", "total", "4|G|", "ratio");
    for r in &rows {
        let ratio = r.ratio.map_or("-".to_string(), |x| format!("{x:.3}"));
        println!(
            "{:>6} {:>6} {:>6} {:>6} {:>6} {:>6}",
            r.size, r.first, r.second, r.total, r.bound, ratio
        );
    }
    Ok(())
}

fn gen_data(args: &GenArgs) -> Result<(), Failure> {
    let kind = DatasetKind::parse(&args.kind).map_err(|e| Failure::input("invalid_dataset", e))?;
    let mut ds =
        generate_dataset(kind, args.n, args.seed, args.noise, args.centers).map_err(|e| Failure::input("invalid_dataset", e))?;
    if let Some(name) = &args.name {
        ds.name = name.clone();
    }
    write_out(args.out.as_deref(), &(ds.to_json() + "\n"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Query(a) => run(a, false),
        Command::Oracle(a) => run(a, true),
        Command::Dot(a) => dot(a),
        Command::BenchMessages(a) => bench(a),
        Command::GenData(a) => gen_data(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", json!({"error": f.kind, "message": f.message}));
            ExitCode::from(f.code)
        }
    }
}
