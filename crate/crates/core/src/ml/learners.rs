//! Native learners of the reduced catalog.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, MlError, TaskKind};
use crate::params::{ParamSet, ParamValue};

/// Families with a native implementation.
pub const FAMILIES: [&str; 5] = ["ncc", "knn", "ridge", "kmeans", "dbscan"];

/// Task served by a known family.
pub fn family_task(family: &str) -> Option<TaskKind> {
    match family {
        "ncc" | "knn" => Some(TaskKind::Classification),
        "ridge" => Some(TaskKind::Regression),
        "kmeans" | "dbscan" => Some(TaskKind::Clustering),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Euclidean,
    Manhattan,
}

impl Metric {
    fn parse(text: &str) -> Option<Self> {
        match text {
            "euclidean" => Some(Metric::Euclidean),
            "manhattan" => Some(Metric::Manhattan),
            _ => None,
        }
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt(),
            Metric::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        }
    }
}

/// A family name plus a concrete hyperparameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerSpec {
    pub family: String,
    pub hyperparams: ParamSet,
}

/// Validated learner configuration, defaults filled in.
#[derive(Debug, Clone, PartialEq)]
pub enum Learner {
    NearestCentroid { metric: Metric },
    Knn { k: usize },
    Ridge { alpha: f64 },
    KMeans { n_clusters: usize },
    Dbscan { eps: f64, metric: Metric, min_samples: usize },
}

impl LearnerSpec {
    pub fn new(family: impl Into<String>, hyperparams: ParamSet) -> Self {
        Self {
            family: family.into(),
            hyperparams,
        }
    }

    pub fn task(&self) -> Option<TaskKind> {
        family_task(&self.family)
    }

    pub fn learner(&self) -> Result<Learner, MlError> {
        let allowed: &[&str] = match self.family.as_str() {
            "ncc" => &["metric"],
            "knn" => &["k"],
            "ridge" => &["alpha"],
            "kmeans" => &["n_clusters"],
            "dbscan" => &["eps", "metric", "min_samples"],
            other => return Err(MlError::UnknownFamily(other.to_string())),
        };
        let mut values = BTreeMap::new();
        for (name, value) in self.hyperparams.iter() {
            if !allowed.contains(&name) {
                return Err(self.bad(name, "unknown hyperparameter"));
            }
            match value {
                ParamValue::Concrete(c) => {
                    values.insert(name, c);
                }
                other => return Err(self.bad(name, &format!("`{other}` is not a concrete value"))),
            }
        }
        let number = |name: &str, default: f64| -> Result<f64, MlError> {
            match values.get(name) {
                None => Ok(default),
                Some(c) => c.as_f64().ok_or_else(|| self.bad(name, "expected a number")),
            }
        };
        let count = |name: &str, default: usize| -> Result<usize, MlError> {
            let x = number(name, default as f64)?;
            if x.fract() != 0.0 || x < 1.0 {
                return Err(self.bad(name, "expected an integer >= 1"));
            }
            Ok(x as usize)
        };
        let metric = |default: Metric| -> Result<Metric, MlError> {
            match values.get("metric") {
                None => Ok(default),
                Some(c) => Metric::parse(c.as_str()).ok_or_else(|| self.bad("metric", "expected euclidean or manhattan")),
            }
        };
        Ok(match self.family.as_str() {
            "ncc" => Learner::NearestCentroid {
                metric: metric(Metric::Euclidean)?,
            },
            "knn" => Learner::Knn { k: count("k", 5)? },
            "ridge" => {
                let alpha = number("alpha", 1.0)?;
                if alpha < 0.0 {
                    return Err(self.bad("alpha", "must be >= 0"));
                }
                Learner::Ridge { alpha }
            }
            "kmeans" => Learner::KMeans {
                n_clusters: count("n_clusters", 2)?,
            },
            "dbscan" => {
                let eps = number("eps", 0.5)?;
                if eps <= 0.0 {
                    return Err(self.bad("eps", "must be > 0"));
                }
                Learner::Dbscan {
                    eps,
                    metric: metric(Metric::Euclidean)?,
                    min_samples: count("min_samples", 5)?,
                }
            }
            _ => unreachable!("family checked above"),
        })
    }

    fn bad(&self, param: &str, reason: &str) -> MlError {
        MlError::InvalidHyperparameter {
            family: self.family.clone(),
            param: param.to_string(),
            reason: reason.to_string(),
        }
    }
}

fn rows<'a>(ds: &'a Dataset, idx: &[usize]) -> Vec<&'a [f64]> {
    idx.iter().map(|&i| ds.features[i].as_slice()).collect()
}

/// Fits `spec` on the `train` rows and predicts the `valid` rows.
///
/// Clusterers return cluster ids; unassigned validation points get unique
/// negative ids so each counts as its own cluster.
pub fn train_evaluate(
    spec: &LearnerSpec,
    ds: &Dataset,
    train: &[usize],
    valid: &[usize],
    seed: u64,
) -> Result<Vec<f64>, MlError> {
    let learner = spec.learner()?;
    if train.is_empty() {
        return Err(MlError::InvalidData("empty training set".into()));
    }
    let x_train = rows(ds, train);
    let y_train: Vec<f64> = train.iter().map(|&i| ds.targets[i]).collect();
    let x_valid = rows(ds, valid);
    match learner {
        Learner::NearestCentroid { metric } => Ok(nearest_centroid(&x_train, &y_train, &x_valid, metric)),
        Learner::Knn { k } => knn(&x_train, &y_train, &x_valid, k),
        Learner::Ridge { alpha } => {
            let w = ridge_fit(&x_train, &y_train, alpha)?;
            Ok(x_valid.iter().map(|row| ridge_predict(&w, row)).collect())
        }
        Learner::KMeans { n_clusters } => {
            let model = KMeans::fit(&x_train, n_clusters, seed)?;
            Ok(x_valid.iter().map(|row| model.assign(row) as f64).collect())
        }
        Learner::Dbscan { eps, metric, min_samples } => {
            let model = Dbscan::fit(&x_train, eps, metric, min_samples);
            Ok(model.predict(&x_valid))
        }
    }
}

fn nearest_centroid(x: &[&[f64]], y: &[f64], queries: &[&[f64]], metric: Metric) -> Vec<f64> {
    let d = x.first().map_or(0, |r| r.len());
    let mut sums: BTreeMap<u64, (f64, Vec<f64>, usize)> = BTreeMap::new();
    for (row, &label) in x.iter().zip(y) {
        let entry = sums.entry(label.to_bits()).or_insert_with(|| (label, vec![0.0; d], 0));
        for (s, v) in entry.1.iter_mut().zip(row.iter()) {
            *s += v;
        }
        entry.2 += 1;
    }
    let mut centroids: Vec<(f64, Vec<f64>)> = sums
        .into_values()
        .map(|(label, sum, n)| (label, sum.into_iter().map(|s| s / n as f64).collect()))
        .collect();
    centroids.sort_by(|a, b| a.0.total_cmp(&b.0));
    queries
        .iter()
        .map(|q| {
            let mut best = (f64::INFINITY, f64::NAN);
            for (label, c) in &centroids {
                let dist = metric.distance(q, c);
                if dist < best.0 {
                    best = (dist, *label);
                }
            }
            best.1
        })
        .collect()
}

fn knn(x: &[&[f64]], y: &[f64], queries: &[&[f64]], k: usize) -> Result<Vec<f64>, MlError> {
    if k > x.len() {
        return Err(MlError::TooFewSamples {
            needed: k,
            available: x.len(),
        });
    }
    let metric = Metric::Euclidean;
    Ok(queries
        .iter()
        .map(|q| {
            let mut dist: Vec<(f64, usize)> = x.iter().enumerate().map(|(i, r)| (metric.distance(q, r), i)).collect();
            dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut votes: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
            for &(_, i) in dist.iter().take(k) {
                votes.entry(y[i].to_bits()).or_insert((y[i], 0)).1 += 1;
            }
            // most votes, then smallest label
            votes
                .into_values()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.total_cmp(&a.0)))
                .map(|(label, _)| label)
                .expect("k >= 1")
        })
        .collect())
}

/// Closed-form ridge with an unpenalized intercept; returns the feature
/// weights followed by the intercept.
pub fn ridge_fit(x: &[&[f64]], y: &[f64], alpha: f64) -> Result<Vec<f64>, MlError> {
    let (a, b) = ridge_system(x, y, alpha);
    let scale = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let chol = a.clone().cholesky().ok_or(MlError::SingularSystem)?;
    let l = chol.l();
    if l.diagonal().iter().any(|v| v * v <= 1e-12 * scale) {
        return Err(MlError::SingularSystem);
    }
    Ok(chol.solve(&b).iter().copied().collect())
}

/// `(X'X + alpha I', X'y)` over the intercept-augmented design, where `I'`
/// leaves the intercept column unpenalized.
pub fn ridge_system(x: &[&[f64]], y: &[f64], alpha: f64) -> (DMatrix<f64>, DVector<f64>) {
    let n = x.len();
    let d = x.first().map_or(0, |r| r.len());
    let design = DMatrix::from_fn(n, d + 1, |i, j| if j < d { x[i][j] } else { 1.0 });
    let target = DVector::from_column_slice(y);
    let mut a = design.transpose() * &design;
    for j in 0..d {
        a[(j, j)] += alpha;
    }
    let b = design.transpose() * target;
    (a, b)
}

pub fn ridge_predict(w: &[f64], row: &[f64]) -> f64 {
    let d = row.len();
    row.iter().zip(&w[..d]).map(|(a, b)| a * b).sum::<f64>() + w[d]
}

/// Lloyd's k-means with k-means++ seeding.
#[derive(Debug, Clone)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances after each assignment step.
    pub inertia_history: Vec<f64>,
}

impl KMeans {
    pub const MAX_ITER: usize = 300;
    pub const TOL: f64 = 1e-8;

    pub fn fit(x: &[&[f64]], k: usize, seed: u64) -> Result<Self, MlError> {
        if k > x.len() {
            return Err(MlError::TooFewSamples {
                needed: k,
                available: x.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>();

        let mut centroids: Vec<Vec<f64>> = vec![x[rng.random_range(0..x.len())].to_vec()];
        while centroids.len() < k {
            let weights: Vec<f64> = x
                .iter()
                .map(|p| centroids.iter().map(|c| sq(p, c)).fold(f64::INFINITY, f64::min))
                .collect();
            let total: f64 = weights.iter().sum();
            let next = if total > 0.0 {
                let mut target = rng.random_range(0.0..total);
                let mut chosen = x.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    if target < *w {
                        chosen = i;
                        break;
                    }
                    target -= w;
                }
                chosen
            } else {
                rng.random_range(0..x.len())
            };
            centroids.push(x[next].to_vec());
        }

        let d = x[0].len();
        let mut history = Vec::new();
        for _ in 0..Self::MAX_ITER {
            let labels: Vec<usize> = x.iter().map(|p| nearest(&centroids, p)).collect();
            history.push(x.iter().zip(&labels).map(|(p, &l)| sq(p, &centroids[l])).sum());

            let mut sums = vec![vec![0.0; d]; k];
            let mut counts = vec![0usize; k];
            for (p, &l) in x.iter().zip(&labels) {
                counts[l] += 1;
                for (s, v) in sums[l].iter_mut().zip(p.iter()) {
                    *s += v;
                }
            }
            let mut shift = 0.0f64;
            for j in 0..k {
                // an empty cluster keeps its previous centroid
                if counts[j] == 0 {
                    continue;
                }
                let updated: Vec<f64> = sums[j].iter().map(|s| s / counts[j] as f64).collect();
                shift = shift.max(sq(&updated, &centroids[j]).sqrt());
                centroids[j] = updated;
            }
            if shift <= Self::TOL {
                break;
            }
        }
        Ok(Self {
            centroids,
            inertia_history: history,
        })
    }

    pub fn assign(&self, p: &[f64]) -> usize {
        nearest(&self.centroids, p)
    }
}

fn nearest(centroids: &[Vec<f64>], p: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (j, c) in centroids.iter().enumerate() {
        let d: f64 = c.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum();
        if d < best.0 {
            best = (d, j);
        }
    }
    best.1
}

/// DBSCAN fitted on training points.
#[derive(Debug, Clone)]
pub struct Dbscan {
    eps: f64,
    metric: Metric,
    /// Core points with their cluster id.
    core: Vec<(Vec<f64>, usize)>,
}

impl Dbscan {
    pub fn fit(x: &[&[f64]], eps: f64, metric: Metric, min_samples: usize) -> Self {
        let n = x.len();
        let neighbors: Vec<Vec<usize>> = (0..n)
            .map(|i| (0..n).filter(|&j| metric.distance(x[i], x[j]) <= eps).collect())
            .collect();
        let is_core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_samples).collect();
        let mut cluster: Vec<Option<usize>> = vec![None; n];
        let mut next_id = 0;
        for start in 0..n {
            if !is_core[start] || cluster[start].is_some() {
                continue;
            }
            cluster[start] = Some(next_id);
            let mut queue = VecDeque::from([start]);
            while let Some(p) = queue.pop_front() {
                if !is_core[p] {
                    continue;
                }
                for &q in &neighbors[p] {
                    if cluster[q].is_none() {
                        cluster[q] = Some(next_id);
                        queue.push_back(q);
                    }
                }
            }
            next_id += 1;
        }
        let core = (0..n)
            .filter(|&i| is_core[i])
            .map(|i| (x[i].to_vec(), cluster[i].expect("core points are clustered")))
            .collect();
        Self { eps, metric, core }
    }

    /// Cluster of the nearest core point within `eps`, else a fresh negative id.
    pub fn predict(&self, x: &[&[f64]]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, p)| {
                let mut best: Option<(f64, usize)> = None;
                for (c, id) in &self.core {
                    let d = self.metric.distance(p, c);
                    if d <= self.eps && best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, *id));
                    }
                }
                match best {
                    Some((_, id)) => id as f64,
                    None => -1.0 - i as f64,
                }
            })
            .collect()
    }
}
