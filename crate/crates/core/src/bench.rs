//! Message counts on worst-case chains.

use serde::Serialize;

use crate::hierarchy::{worst_case_chain, AgentKind, DataSource, DatasetEntry, HierarchyError, DATA_ROOT};
use crate::ml::{DatasetKind, GeneratorSpec};
use crate::params::{ParamSet, ParamValue};
use crate::protocol::{run_query, MessageStats, QueryError, RunOptions};
use crate::query::{DataSpec, Direction, Measure, NameSpec, OutputSpec, Query, QueryTask, SubQuery, TuneDomain};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub size: usize,
    pub first: usize,
    pub second: usize,
    pub data: usize,
    pub total: usize,
    pub bound: usize,
    /// `total` over the previous row's `total`.
    pub ratio: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("|G|={size}: {total} messages exceed 4|G|={bound}")]
    BoundExceeded { size: usize, total: usize, bound: usize },
}

/// Tuning query used by the benchmark: `knn` with `k` tuned over 1..=5.
pub fn bench_query() -> Query {
    let mut params = ParamSet::new();
    params.insert("k", ParamValue::Tune);
    Query {
        algorithms: vec![SubQuery::new(NameSpec::Named("knn".into()), params)
            .with_domain("k", TuneDomain::IntRange { low: 1, high: 5 })],
        data: DataSpec {
            name: NameSpec::Named("bench".into()),
            params: ParamSet::new(),
        },
        output: OutputSpec {
            task: QueryTask::Tune,
            measure: Measure::Acc,
            direction: Direction::Maximize,
            folds: Some(2),
            budget: Some(4),
            strategy: None,
        },
    }
}

/// Runs [`bench_query`] on a worst-case chain of `size` agents.
pub fn measure_chain(size: usize, seed: u64) -> Result<MessageStats, BenchError> {
    let mut h = worst_case_chain(size, "knn", "k")?;
    h.add_child(
        DATA_ROOT,
        AgentKind::DataTerminal(DatasetEntry {
            name: "bench".into(),
            params: ParamSet::new(),
            source: DataSource::Generate(GeneratorSpec {
                kind: DatasetKind::Blobs,
                n: 24,
                seed: 1,
                noise: 0.3,
                centers: Some(2),
            }),
        }),
    )?;
    h.refresh();
    let opts = RunOptions {
        seed,
        ..RunOptions::default()
    };
    let report = run_query(&h, &bench_query(), &opts)?;
    Ok(report.messages.expect("distributed runs count messages"))
}

pub fn bench_messages(sizes: &[usize], seed: u64) -> Result<Vec<BenchRow>, BenchError> {
    let mut rows: Vec<BenchRow> = Vec::new();
    for &size in sizes {
        let stats = measure_chain(size, seed)?;
        let total = stats.algorithm_total;
        if !stats.within_bound() {
            return Err(BenchError::BoundExceeded {
                size,
                total,
                bound: stats.bound,
            });
        }
        let ratio = rows.last().map(|prev| total as f64 / prev.total as f64);
        rows.push(BenchRow {
            size,
            first: stats.first.total,
            second: stats.second.total,
            data: stats.data.total,
            total,
            bound: stats.bound,
            ratio,
        });
    }
    Ok(rows)
}
