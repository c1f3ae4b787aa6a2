use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::MlError;
use crate::query::Measure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Classification,
    Regression,
    Clustering,
}

impl TaskKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::Classification => "classification",
            TaskKind::Regression => "regression",
            TaskKind::Clustering => "clustering",
        }
    }
}

/// Features, targets and the task they were generated for.
///
/// Classification targets double as ground-truth cluster labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub task: TaskKind,
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        task: TaskKind,
        features: Vec<Vec<f64>>,
        targets: Vec<f64>,
    ) -> Result<Self, MlError> {
        let ds = Self {
            name: name.into(),
            task,
            features,
            targets,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), MlError> {
        if self.features.len() != self.targets.len() {
            return Err(MlError::LengthMismatch {
                left: self.features.len(),
                right: self.targets.len(),
            });
        }
        let d = self.dim();
        if self.features.iter().any(|row| row.len() != d) {
            return Err(MlError::InvalidData("ragged feature matrix".into()));
        }
        let finite = self.features.iter().flatten().chain(&self.targets).all(|x| x.is_finite());
        if !finite {
            return Err(MlError::InvalidData("non-finite value".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Whether `measure` can be computed against these targets.
    pub fn supports(&self, measure: Measure) -> bool {
        match measure {
            Measure::Acc => self.task == TaskKind::Classification,
            Measure::Mse => self.task == TaskKind::Regression,
            Measure::Fms => matches!(self.task, TaskKind::Classification | TaskKind::Clustering),
        }
    }

    pub fn load(path: &Path) -> Result<Self, MlError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MlError::InvalidData(format!("{}: {e}", path.display())))?;
        let ds: Dataset = serde_json::from_str(&text)
            .map_err(|e| MlError::InvalidData(format!("{}: {e}", path.display())))?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}

/// Synthetic dataset families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    /// Isotropic Gaussian clusters around points on a circle of radius 4.
    Blobs,
    /// Two interleaving half circles.
    Moons,
    /// `y = Xw + b + noise`, three features.
    LinReg,
    /// `y = x^2 + noise`, one feature.
    Quadratic,
}

impl DatasetKind {
    pub fn parse(text: &str) -> Result<Self, MlError> {
        match text {
            "blobs" => Ok(DatasetKind::Blobs),
            "moons" => Ok(DatasetKind::Moons),
            "linreg" => Ok(DatasetKind::LinReg),
            "quadratic" => Ok(DatasetKind::Quadratic),
            other => Err(MlError::InvalidData(format!("unknown dataset kind `{other}`"))),
        }
    }
}

/// Generator settings as they appear in catalogs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub kind: DatasetKind,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise: f64,
    /// Blob count; ignored by other kinds.
    #[serde(default)]
    pub centers: Option<usize>,
}

impl GeneratorSpec {
    pub fn generate(&self, name: &str) -> Result<Dataset, MlError> {
        let mut ds = generate_dataset(self.kind, self.n, self.seed, self.noise, self.centers.unwrap_or(2))?;
        ds.name = name.to_string();
        Ok(ds)
    }
}

/// Deterministic synthetic data. `centers` only applies to blobs.
pub fn generate_dataset(
    kind: DatasetKind,
    n: usize,
    seed: u64,
    noise: f64,
    centers: usize,
) -> Result<Dataset, MlError> {
    if n < 4 {
        return Err(MlError::InvalidData(format!("need at least 4 samples, got {n}")));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(MlError::InvalidData(format!("invalid noise level {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");
    let jitter = |rng: &mut ChaCha8Rng| noise * gauss.sample(rng);

    let (name, task, features, targets) = match kind {
        DatasetKind::Blobs => {
            if centers == 0 {
                return Err(MlError::InvalidData("blobs need at least one center".into()));
            }
            let mut x = Vec::with_capacity(n);
            let mut y = Vec::with_capacity(n);
            for i in 0..n {
                let label = i % centers;
                let angle = 2.0 * PI * label as f64 / centers as f64;
                let (cx, cy) = (4.0 * angle.cos(), 4.0 * angle.sin());
                x.push(vec![cx + jitter(&mut rng), cy + jitter(&mut rng)]);
                y.push(label as f64);
            }
            ("blobs", TaskKind::Classification, x, y)
        }
        DatasetKind::Moons => {
            let n_outer = n / 2;
            let n_inner = n - n_outer;
            let mut x = Vec::with_capacity(n);
            let mut y = Vec::with_capacity(n);
            let step = |i: usize, m: usize| if m > 1 { PI * i as f64 / (m - 1) as f64 } else { 0.0 };
            for i in 0..n_outer {
                let t = step(i, n_outer);
                x.push(vec![t.cos() + jitter(&mut rng), t.sin() + jitter(&mut rng)]);
                y.push(0.0);
            }
            for i in 0..n_inner {
                let t = step(i, n_inner);
                x.push(vec![1.0 - t.cos() + jitter(&mut rng), 0.5 - t.sin() + jitter(&mut rng)]);
                y.push(1.0);
            }
            ("moons", TaskKind::Classification, x, y)
        }
        DatasetKind::LinReg => {
            let d = 3;
            let w: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let bias = 0.5;
            let mut x = Vec::with_capacity(n);
            let mut y = Vec::with_capacity(n);
            for _ in 0..n {
                let row: Vec<f64> = (0..d).map(|_| gauss.sample(&mut rng)).collect();
                let target = row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + bias + jitter(&mut rng);
                x.push(row);
                y.push(target);
            }
            ("linreg", TaskKind::Regression, x, y)
        }
        DatasetKind::Quadratic => {
            let mut x = Vec::with_capacity(n);
            let mut y = Vec::with_capacity(n);
            for _ in 0..n {
                let v: f64 = rng.random_range(-2.0..2.0);
                x.push(vec![v]);
                y.push(v * v + jitter(&mut rng));
            }
            ("quadratic", TaskKind::Regression, x, y)
        }
    };
    Dataset::new(name, task, features, targets)
}
