//! Random and grid search seeded by suggestions from the agent tree.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::params::{Capability, Concrete, ParamSet, ParamValue};
use crate::query::{Strategy, SubQuery, TuneDomain};

pub const DEFAULT_BUDGET: usize = 64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TuneError {
    #[error("budget must be at least 1")]
    ZeroBudget,
    #[error("`{0}` is both tunable and enumerable")]
    Overlap(String),
    #[error("grid search needs choice or intrange domains; `{0}` is continuous")]
    ContinuousGrid(String),
}

/// Values offered by one agent for the open parameters `H`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Suggestion {
    pub source: String,
    pub values: BTreeMap<String, Vec<Concrete>>,
}

/// Concrete values that `cap` holds for the names in `open`.
pub fn suggest(source: &str, cap: &Capability, open: &BTreeSet<String>) -> Suggestion {
    let mut values = BTreeMap::new();
    for name in open {
        if let Some(set) = cap.get(name) {
            let list: Vec<Concrete> = set.iter().filter_map(|v| v.as_concrete().cloned()).collect();
            if !list.is_empty() {
                values.insert(name.clone(), list);
            }
        }
    }
    Suggestion {
        source: source.to_string(),
        values,
    }
}

/// Deduplicated union of suggestions, each list sorted.
pub fn integrate(suggestions: &[Suggestion]) -> BTreeMap<String, Vec<Concrete>> {
    let mut merged: BTreeMap<String, BTreeSet<Concrete>> = BTreeMap::new();
    for s in suggestions {
        for (name, values) in &s.values {
            merged.entry(name.clone()).or_default().extend(values.iter().cloned());
        }
    }
    merged.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect()
}

/// One tuning job for a single learner family.
#[derive(Debug, Clone, PartialEq)]
pub struct TuneTask {
    pub family: String,
    pub fixed: ParamSet,
    pub tunables: BTreeMap<String, TuneDomain>,
    /// `*` parameters without a domain, tried over every suggested value.
    pub enumerables: BTreeMap<String, Vec<Concrete>>,
    /// Integrated suggestions for tunables; evaluated before any draw.
    pub seeds: BTreeMap<String, Vec<Concrete>>,
    pub budget: usize,
    pub seed: u64,
    pub strategy: Strategy,
}

impl TuneTask {
    /// Splits the open parameters of `sq` into tunables and enumerables and
    /// keeps the suggestions that fit each domain.
    pub fn for_subquery(
        sq: &SubQuery,
        family: &str,
        suggestions: &BTreeMap<String, Vec<Concrete>>,
        budget: usize,
        seed: u64,
        strategy: Strategy,
    ) -> Self {
        let mut fixed = ParamSet::new();
        let mut tunables = BTreeMap::new();
        let mut enumerables = BTreeMap::new();
        let mut seeds = BTreeMap::new();
        for (name, value) in sq.params.iter() {
            let offered = suggestions.get(name).cloned().unwrap_or_default();
            match (value, sq.domains.get(name)) {
                (ParamValue::Concrete(_), _) => {
                    fixed.insert(name, value.clone());
                }
                (_, Some(domain)) => {
                    tunables.insert(name.to_string(), domain.clone());
                    let inside: Vec<Concrete> = offered.into_iter().filter(|v| domain.contains(v)).collect();
                    if !inside.is_empty() {
                        seeds.insert(name.to_string(), inside);
                    }
                }
                (_, None) => {
                    if !offered.is_empty() {
                        enumerables.insert(name.to_string(), offered);
                    }
                }
            }
        }
        Self {
            family: family.to_string(),
            fixed,
            tunables,
            enumerables,
            seeds,
            budget,
            seed,
            strategy,
        }
    }

    pub fn validate(&self) -> Result<(), TuneError> {
        if self.budget == 0 {
            return Err(TuneError::ZeroBudget);
        }
        if let Some(name) = self.tunables.keys().find(|k| self.enumerables.contains_key(*k)) {
            return Err(TuneError::Overlap(name.clone()));
        }
        if self.strategy == Strategy::Grid {
            if let Some((name, _)) = self.tunables.iter().find(|(_, d)| d.enumerate().is_none()) {
                return Err(TuneError::ContinuousGrid(name.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Seed,
    Draw,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    /// Full configuration handed to the evaluator.
    pub config: ParamSet,
    pub loss: f64,
    pub origin: Origin,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneOutcome {
    pub best: ParamSet,
    /// Values chosen for the tunable and enumerable parameters.
    pub tuned: ParamSet,
    pub loss: f64,
    pub log: Vec<Evaluation>,
    pub warnings: Vec<String>,
}

fn cross(lists: &[(String, Vec<Concrete>)]) -> Vec<Vec<(String, Concrete)>> {
    let mut points = vec![Vec::new()];
    for (name, values) in lists {
        let mut next = Vec::with_capacity(points.len() * values.len());
        for p in &points {
            for v in values {
                let mut q = p.clone();
                q.push((name.clone(), v.clone()));
                next.push(q);
            }
        }
        points = next;
    }
    points
}

fn draw(domain: &TuneDomain, rng: &mut ChaCha8Rng) -> Concrete {
    match domain {
        TuneDomain::Uniform { low, high } => Concrete::from_f64(rng.random_range(*low..*high)),
        TuneDomain::LogUniform { low, high } => Concrete::from_f64(rng.random_range(low.ln()..high.ln()).exp()),
        TuneDomain::Choice(values) => Ok(values[rng.random_range(0..values.len())].clone()),
        TuneDomain::IntRange { low, high } => Ok(Concrete::from_i64(rng.random_range(*low..=*high))),
    }
    .expect("finite draw")
}

/// Runs `task`; `evaluate` maps a full configuration to a loss. Failed
/// evaluations are logged with infinite loss.
pub fn tune<F>(task: &TuneTask, mut evaluate: F) -> Result<TuneOutcome, TuneError>
where
    F: FnMut(&ParamSet) -> Result<f64, String>,
{
    task.validate()?;
    let mut warnings = Vec::new();
    let combos = cross(&task.enumerables.iter().map(|(k, v)| (k.clone(), v.clone())).collect::<Vec<_>>());

    let seed_lists: Vec<(String, Vec<Concrete>)> = task
        .tunables
        .keys()
        .filter_map(|k| task.seeds.get(k).map(|v| (k.clone(), v.clone())))
        .collect();
    let base: Vec<Vec<(String, Concrete)>> = if seed_lists.len() == task.tunables.len() {
        cross(&seed_lists)
    } else {
        Vec::new()
    };
    let mut planned: Vec<(Vec<(String, Concrete)>, Origin)> = Vec::new();
    for b in &base {
        for c in &combos {
            planned.push((b.iter().chain(c).cloned().collect(), Origin::Seed));
        }
    }
    if planned.len() > task.budget {
        warnings.push(format!(
            "{} seed points exceed budget {}; keeping the first {}",
            planned.len(),
            task.budget,
            task.budget
        ));
        planned.truncate(task.budget);
    }

    if !task.tunables.is_empty() {
        match task.strategy {
            Strategy::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
                while planned.len() < task.budget {
                    let mut point: Vec<(String, Concrete)> =
                        task.tunables.iter().map(|(k, d)| (k.clone(), draw(d, &mut rng))).collect();
                    let combo = if combos.len() > 1 {
                        &combos[rng.random_range(0..combos.len())]
                    } else {
                        &combos[0]
                    };
                    point.extend(combo.iter().cloned());
                    planned.push((point, Origin::Draw));
                }
            }
            Strategy::Grid => {
                let grid_lists: Vec<(String, Vec<Concrete>)> = task
                    .tunables
                    .iter()
                    .map(|(k, d)| (k.clone(), d.enumerate().expect("validated")))
                    .collect();
                let seen: BTreeSet<String> = planned.iter().map(|(p, _)| point_key(p)).collect();
                for g in cross(&grid_lists) {
                    for c in &combos {
                        if planned.len() >= task.budget {
                            break;
                        }
                        let point: Vec<(String, Concrete)> = g.iter().chain(c).cloned().collect();
                        if !seen.contains(&point_key(&point)) {
                            planned.push((point, Origin::Grid));
                        }
                    }
                }
            }
        }
    }

    let mut log = Vec::with_capacity(planned.len());
    let mut best: Option<(f64, String, usize)> = None;
    for (point, origin) in planned {
        let mut config = task.fixed.clone();
        for (k, v) in &point {
            config.insert(k.clone(), ParamValue::Concrete(v.clone()));
        }
        let (loss, error) = match evaluate(&config) {
            Ok(l) if !l.is_nan() => (l, None),
            Ok(_) => (f64::INFINITY, Some("loss is NaN".to_string())),
            Err(e) => (f64::INFINITY, Some(e)),
        };
        let key = config.canonical();
        let better = match &best {
            None => true,
            Some((bl, bk, _)) => loss.total_cmp(bl).then_with(|| key.cmp(bk)).is_lt(),
        };
        if better {
            best = Some((loss, key, log.len()));
        }
        log.push(Evaluation {
            config,
            loss,
            origin,
            error,
        });
    }

    let (loss, best_config) = match best {
        Some((l, _, i)) => (l, log[i].config.clone()),
        None => (f64::INFINITY, task.fixed.clone()),
    };
    let tuned: ParamSet = best_config
        .iter()
        .filter(|(k, _)| task.tunables.contains_key(*k) || task.enumerables.contains_key(*k))
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect();
    Ok(TuneOutcome {
        best: best_config,
        tuned,
        loss,
        log,
        warnings,
    })
}

fn point_key(point: &[(String, Concrete)]) -> String {
    let mut parts: Vec<String> = point.iter().map(|(k, v)| format!("{k}={v}")).collect();
    parts.sort();
    parts.join(",")
}
