#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use holotune::hierarchy::{
    build_hierarchy, AgentId, AgentKind, AlgorithmEntry, Catalog, DataSource, DatasetEntry, Hierarchy, Resource,
    ALG_ROOT, ROOT,
};
use holotune::ml::{DatasetKind, GeneratorSpec};
use holotune::params::{Concrete, ParamSet, ParamValue};
use holotune::query::{
    parse_query, DataSpec, Direction, Measure, NameSpec, OutputSpec, Query, QueryTask, SubQuery, TuneDomain,
};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn fixture_hierarchy() -> Hierarchy {
    build_hierarchy(&Catalog::load(&fixture("catalog.json")).unwrap()).unwrap()
}

pub fn fixture_query(name: &str) -> Query {
    parse_query(&std::fs::read_to_string(fixture(&format!("queries/{name}"))).unwrap()).unwrap()
}

pub fn fixture_queries() -> Vec<(String, Query)> {
    let mut names: Vec<String> = std::fs::read_dir(fixture("queries"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".json"))
        .collect();
    names.sort();
    names.into_iter().map(|n| (n.clone(), fixture_query(&n))).collect()
}

/// Path from the root down to `id`, following parent links only.
pub fn root_path(h: &Hierarchy, id: AgentId) -> Vec<AgentId> {
    let mut path = vec![id];
    let mut at = id;
    while let Some(p) = h.nodes()[at].parent {
        path.push(p);
        at = p;
    }
    path.reverse();
    path
}

/// Deepest node on every root path, by prefix intersection.
pub fn naive_lca(h: &Hierarchy, ids: &BTreeSet<AgentId>) -> AgentId {
    let paths: Vec<Vec<AgentId>> = ids.iter().map(|&id| root_path(h, id)).collect();
    let mut lca = ROOT;
    for depth in 0.. {
        let Some(&first) = paths[0].get(depth) else { break };
        if paths.iter().all(|p| p.get(depth) == Some(&first)) {
            lca = first;
        } else {
            break;
        }
    }
    lca
}

pub const ABSTRACT_FAMILIES: [&str; 3] = ["fa", "fb", "fc"];
pub const ABSTRACT_NAMES: [&str; 4] = ["p", "q", "r", "s"];
pub const ABSTRACT_VALUES: [&str; 5] = ["1", "2", "3", "x", "y"];

fn random_concrete_params(rng: &mut ChaCha8Rng) -> ParamSet {
    let mut p = ParamSet::new();
    for name in ABSTRACT_NAMES {
        if rng.random_bool(0.6) {
            p.insert(name, ParamValue::concrete(ABSTRACT_VALUES.choose(rng).unwrap()).unwrap());
        }
    }
    p
}

struct Grower {
    left: usize,
    seen: BTreeSet<String>,
    groups: usize,
}

impl Grower {
    fn grow(&mut self, h: &mut Hierarchy, rng: &mut ChaCha8Rng, parent: AgentId, family: &str, depth: usize) {
        let n = rng.random_range(1..=4);
        for _ in 0..n {
            if self.left == 0 {
                return;
            }
            if depth < 4 && self.left >= 2 && rng.random_bool(0.35) {
                self.groups += 1;
                let c = h.add_child(parent, AgentKind::Composite(format!("g{}", self.groups))).unwrap();
                self.grow(h, rng, c, family, depth + 1);
                if h.nodes()[c].children.is_empty() {
                    let res = self.fresh(rng, family);
                    h.add_child(c, AgentKind::Terminal(res)).unwrap();
                }
            } else {
                let res = self.fresh(rng, family);
                h.add_child(parent, AgentKind::Terminal(res)).unwrap();
            }
        }
    }

    /// A configuration not used yet; falls back to a numbered one.
    fn fresh(&mut self, rng: &mut ChaCha8Rng, family: &str) -> Resource {
        self.left = self.left.saturating_sub(1);
        for _ in 0..8 {
            let res = Resource {
                family: family.to_string(),
                params: random_concrete_params(rng),
                task: None,
            };
            if self.seen.insert(res.label()) {
                return res;
            }
        }
        let mut params = random_concrete_params(rng);
        params.insert("id", ParamValue::concrete(self.seen.len().to_string()).unwrap());
        let res = Resource {
            family: family.to_string(),
            params,
            task: None,
        };
        self.seen.insert(res.label());
        res
    }
}

/// Random algorithm tree over abstract families with at most
/// `max_terminals` concrete terminals and composites up to depth 4.
pub fn random_tree(rng: &mut ChaCha8Rng, max_terminals: usize) -> Hierarchy {
    let mut h = Hierarchy::new();
    let mut families = ABSTRACT_FAMILIES.to_vec();
    families.shuffle(rng);
    families.truncate(rng.random_range(1..=families.len()));
    families.sort();
    let mut g = Grower {
        left: rng.random_range(1..=max_terminals),
        seen: BTreeSet::new(),
        groups: 0,
    };
    for family in families {
        let name_agent = h.add_child(ALG_ROOT, AgentKind::NameAgent(family.to_string())).unwrap();
        g.grow(&mut h, rng, name_agent, family, 0);
        if h.nodes()[name_agent].children.is_empty() {
            let res = g.fresh(rng, family);
            h.add_child(name_agent, AgentKind::Terminal(res)).unwrap();
        }
    }
    h.refresh();
    h
}

fn abstract_domain() -> TuneDomain {
    TuneDomain::Choice(ABSTRACT_VALUES.iter().map(|v| Concrete::new(v).unwrap()).collect())
}

/// A single-family sub-query built from a random terminal's parameters, so
/// it matches at least that terminal. `Some(true)` forces at least one `?`,
/// `Some(false)` forbids it. Returns `None` when a `?` is forced on a
/// terminal without parameters.
pub fn covered_subquery(rng: &mut ChaCha8Rng, h: &Hierarchy, tuning: Option<bool>) -> Option<SubQuery> {
    let terminals: Vec<&Resource> = h.terminals().filter_map(|n| n.resource()).collect();
    let t = terminals.choose(rng)?;
    let mut params = ParamSet::new();
    let mut domains = Vec::new();
    for (name, value) in t.params.iter() {
        if !rng.random_bool(0.7) {
            continue;
        }
        let v = match rng.random_range(0..4) {
            3 if tuning == Some(false) => value.clone(),
            0 | 1 => value.clone(),
            2 => ParamValue::Any,
            _ => ParamValue::Tune,
        };
        params.insert(name, v);
    }
    if tuning == Some(true) && !params.iter().any(|(_, v)| *v == ParamValue::Tune) {
        let names: Vec<&str> = t.params.names().collect();
        let name = names.choose(rng)?;
        params.insert(*name, ParamValue::Tune);
    }
    for (name, v) in params.iter() {
        if *v == ParamValue::Tune {
            domains.push(name.to_string());
        }
    }
    let mut sq = SubQuery::new(NameSpec::Named(t.family.clone()), params);
    for name in domains {
        sq = sq.with_domain(name, abstract_domain());
    }
    Some(sq)
}

/// A sub-query with random family and values; it may or may not match.
pub fn random_subquery(rng: &mut ChaCha8Rng) -> SubQuery {
    let family = if rng.random_bool(0.1) {
        "fz"
    } else {
        ABSTRACT_FAMILIES.choose(rng).unwrap()
    };
    let mut params = ParamSet::new();
    for name in ABSTRACT_NAMES {
        if rng.random_bool(0.4) {
            let v = match rng.random_range(0..6) {
                0 => ParamValue::Any,
                1 => ParamValue::Tune,
                _ => ParamValue::concrete(ABSTRACT_VALUES.choose(rng).unwrap()).unwrap(),
            };
            params.insert(name, v);
        }
    }
    let tuned: Vec<String> = params
        .iter()
        .filter(|(_, v)| **v == ParamValue::Tune)
        .map(|(k, _)| k.to_string())
        .collect();
    let mut sq = SubQuery::new(NameSpec::Named(family.to_string()), params);
    for name in tuned {
        sq = sq.with_domain(name, abstract_domain());
    }
    sq
}

/// Wraps sub-queries into a query; the data and output parts are not used
/// by the first pass.
pub fn abstract_query(algorithms: Vec<SubQuery>, task: QueryTask) -> Query {
    Query {
        algorithms,
        data: DataSpec {
            name: NameSpec::Any,
            params: ParamSet::new(),
        },
        output: OutputSpec {
            task,
            measure: Measure::Acc,
            direction: Direction::Maximize,
            folds: None,
            budget: None,
            strategy: None,
        },
    }
}

/// One end-to-end case over real learners.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub catalog: Catalog,
    pub query: Query,
    pub document: String,
}

impl Scenario {
    pub fn hierarchy(&self) -> Hierarchy {
        build_hierarchy(&self.catalog).unwrap()
    }
}

fn param_pool(family: &str) -> Vec<(&'static str, Vec<&'static str>)> {
    match family {
        "ncc" => vec![("metric", vec!["euclidean", "manhattan"])],
        "knn" => vec![("k", vec!["1", "2", "3", "5", "7"])],
        "ridge" => vec![("alpha", vec!["0.001", "0.1", "1", "10"])],
        "kmeans" => vec![("n_clusters", vec!["2", "3", "4"])],
        "dbscan" => vec![
            ("eps", vec!["0.3", "0.6", "1"]),
            ("metric", vec!["euclidean", "manhattan"]),
            ("min_samples", vec!["3", "4"]),
        ],
        _ => unreachable!("unknown family {family}"),
    }
}

fn domain_json(family: &str, param: &str) -> Value {
    match (family, param) {
        (_, "metric") => json!({"kind": "choice", "values": ["euclidean", "manhattan"]}),
        ("knn", "k") => json!({"kind": "intrange", "low": 1, "high": 7}),
        ("ridge", "alpha") => json!({"kind": "loguniform", "low": 0.001, "high": 10.0}),
        ("kmeans", "n_clusters") => json!({"kind": "intrange", "low": 1, "high": 4}),
        ("dbscan", "eps") => json!({"kind": "uniform", "low": 0.2, "high": 1.5}),
        ("dbscan", "min_samples") => json!({"kind": "intrange", "low": 2, "high": 5}),
        _ => unreachable!("no domain for {family}.{param}"),
    }
}

fn is_finite_domain(d: &Value) -> bool {
    matches!(d["kind"].as_str(), Some("choice" | "intrange"))
}

fn random_entries(rng: &mut ChaCha8Rng, family: &str, out: &mut Vec<AlgorithmEntry>) {
    let pool = param_pool(family);
    let groups: [&[&str]; 4] = [&[], &["g1"], &["g1", "h"], &["g2"]];
    let mut seen = BTreeSet::new();
    for _ in 0..rng.random_range(1..=4) {
        let pairs: Vec<(&str, &str)> = pool.iter().map(|(n, vs)| (*n, *vs.choose(rng).unwrap())).collect();
        let params = ParamSet::of(&pairs);
        if seen.insert(params.canonical()) {
            out.push(AlgorithmEntry::new(family, params).grouped(groups.choose(rng).unwrap()));
        }
    }
}

fn random_sq_json(rng: &mut ChaCha8Rng, families: &[&str], force_tune: bool, allow_wild: bool) -> Value {
    if allow_wild && !force_tune && rng.random_bool(0.2) {
        let params = if rng.random_bool(0.5) { json!("*") } else { json!({}) };
        return json!({"name": "*", "params": params});
    }
    let family = *families.choose(rng).unwrap();
    let pool = param_pool(family);
    let mut params = Map::new();
    let mut domains = Map::new();
    for (name, values) in &pool {
        if !rng.random_bool(0.5) {
            continue;
        }
        match rng.random_range(0..10) {
            0..4 => {
                params.insert(name.to_string(), json!(values.choose(rng).unwrap()));
            }
            4..7 => {
                params.insert(name.to_string(), json!("*"));
            }
            _ => {
                params.insert(name.to_string(), json!("?"));
                domains.insert(name.to_string(), domain_json(family, name));
            }
        }
    }
    if force_tune && domains.is_empty() {
        let (name, _) = pool.choose(rng).unwrap();
        params.insert(name.to_string(), json!("?"));
        domains.insert(name.to_string(), domain_json(family, name));
    }
    let mut sq = json!({"name": family, "params": params});
    if !domains.is_empty() {
        sq["domains"] = Value::Object(domains);
    }
    sq
}

/// Random catalog, dataset and query for one task type; tune, select and
/// hybrid queries are mixed.
pub fn random_scenario(rng: &mut ChaCha8Rng) -> Scenario {
    let (families, others, measure, direction, kind): (&[&str], &[&str], &str, &str, DatasetKind) =
        match rng.random_range(0..3) {
            0 => (
                &["ncc", "knn"],
                &["ridge", "kmeans"],
                "acc",
                "max",
                *[DatasetKind::Blobs, DatasetKind::Moons].choose(rng).unwrap(),
            ),
            1 => (
                &["ridge"],
                &["knn"],
                "mse",
                "min",
                *[DatasetKind::LinReg, DatasetKind::Quadratic].choose(rng).unwrap(),
            ),
            _ => (&["kmeans", "dbscan"], &["ncc"], "fms", "max", DatasetKind::Blobs),
        };
    let mut algorithms = Vec::new();
    for f in families {
        random_entries(rng, f, &mut algorithms);
    }
    if rng.random_bool(0.5) {
        let other = *others.choose(rng).unwrap();
        random_entries(rng, other, &mut algorithms);
    }
    algorithms.shuffle(rng);
    let gen = GeneratorSpec {
        kind,
        n: rng.random_range(24..=40),
        seed: rng.random_range(0..1000),
        noise: match kind {
            DatasetKind::Blobs => rng.random_range(0.4..1.4),
            DatasetKind::Moons => rng.random_range(0.05..0.3),
            _ => rng.random_range(0.0..0.5),
        },
        centers: Some(rng.random_range(2..=3)),
    };
    let mut datasets = vec![DatasetEntry {
        name: "d".into(),
        params: ParamSet::of(&[("type", "main")]),
        source: DataSource::Generate(gen),
    }];
    if rng.random_bool(0.5) {
        datasets.push(DatasetEntry {
            name: "other".into(),
            params: ParamSet::new(),
            source: DataSource::Generate(GeneratorSpec {
                kind: DatasetKind::Moons,
                n: 20,
                seed: 1,
                noise: 0.1,
                centers: None,
            }),
        });
    }

    let tune = rng.random_bool(0.4);
    let count = rng.random_range(1..=2);
    let subqueries: Vec<Value> = (0..count)
        .map(|i| random_sq_json(rng, families, tune && i == 0, !tune))
        .collect();
    let finite = subqueries.iter().all(|sq| {
        sq.get("domains")
            .and_then(Value::as_object)
            .is_none_or(|d| d.values().all(is_finite_domain))
    });
    let mut output = json!({
        "task": if tune { "tune" } else { "select" },
        "measure": measure,
        "direction": direction,
        "folds": rng.random_range(2..=3),
        "budget": rng.random_range(2..=6),
    });
    if finite && rng.random_bool(0.3) {
        output["strategy"] = json!("grid");
    }
    let doc = json!({
        "algorithms": subqueries,
        "data": {"name": "d", "params": {"type": "main"}},
        "output": output,
    });
    let document = serde_json::to_string_pretty(&doc).unwrap();
    let query = parse_query(&document).unwrap_or_else(|e| panic!("{e}\n{document}"));
    Scenario {
        catalog: Catalog { algorithms, datasets },
        query,
        document,
    }
}

/// Reverses every child list.
pub fn reverse_children(h: &mut Hierarchy) {
    h.permute_children(|_, c| c.reverse());
}

/// Shuffles every child list.
pub fn shuffle_children(h: &mut Hierarchy, rng: &mut ChaCha8Rng) {
    h.permute_children(|_, c| c.shuffle(rng));
}

pub const BETA: f64 = 0.1;
pub const ALPHA: f64 = 0.6;
pub const TAU: f64 = 0.8;

/// Pairwise similarity on raw value strings.
pub fn oracle_pair(v: &str, w: &str) -> f64 {
    if v == w {
        1.0
    } else if v == "?" || w == "?" {
        TAU
    } else if v == "*" || w == "*" {
        ALPHA
    } else {
        BETA
    }
}

/// Set similarity evaluated directly: equal or `?` pairs are summed, the
/// rest multiplied (missing names count as `BETA`), an empty product is 0,
/// and the total is divided by the query size.
pub fn oracle_similarity(p: &[(String, String)], cap: &[(String, String)]) -> f64 {
    let mut sum = 0.0;
    let mut product = 1.0;
    let mut factors = 0;
    for (name, v) in p {
        match cap.iter().find(|(n, _)| n == name) {
            Some((_, w)) if v == w || v == "?" || w == "?" => sum += oracle_pair(v, w),
            Some((_, w)) => {
                product *= oracle_pair(v, w);
                factors += 1;
            }
            None => {
                product *= BETA;
                factors += 1;
            }
        }
    }
    let product = if factors == 0 { 0.0 } else { product };
    (sum + product) / p.len() as f64
}

pub fn oracle_covers(p: &[(String, String)], cap: &[(String, String)]) -> bool {
    let open = |x: &str| x == "*" || x == "?";
    p.iter().all(|(name, v)| {
        cap.iter()
            .any(|(n, w)| n == name && (v == w || open(v) || open(w)))
    })
}

/// Random pairs over a small alphabet so that every case occurs often.
pub fn random_pairs(rng: &mut ChaCha8Rng, min: usize) -> Vec<(String, String)> {
    const NAMES: [&str; 5] = ["a", "b", "c", "d", "e"];
    const VALUES: [&str; 5] = ["1", "2", "x", "*", "?"];
    let mut names = NAMES.to_vec();
    names.shuffle(rng);
    let len = rng.random_range(min..=NAMES.len());
    names[..len]
        .iter()
        .map(|n| (n.to_string(), VALUES.choose(rng).unwrap().to_string()))
        .collect()
}

pub fn to_set(pairs: &[(String, String)]) -> ParamSet {
    let refs: Vec<(&str, &str)> = pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    ParamSet::of(&refs)
}
