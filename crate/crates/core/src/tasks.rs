//! Desk-scale learning tasks.
//!
//! A client's loss depends only on its label distribution: the loss of a
//! client is the label-weighted mix of per-class losses.

use std::path::{Path, PathBuf};

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelVector;
use crate::topology::Topology;

pub trait Task: Send + Sync {
    fn dimension(&self) -> usize;

    fn num_classes(&self) -> usize;

    /// Loss of a client whose labels follow `labels`.
    fn loss(&self, w: &ModelVector, labels: &[f64]) -> f64;

    /// Exact gradient of [`Task::loss`].
    fn gradient(&self, w: &ModelVector, labels: &[f64]) -> ModelVector;

    /// Gradient estimate from one mini-batch.
    fn stochastic_gradient(&self, w: &ModelVector, labels: &[f64], batch: usize, rng: &mut dyn RngCore)
        -> ModelVector;

    fn initial_model(&self) -> ModelVector {
        ModelVector::zeros(self.dimension())
    }

    /// Label-weighted accuracy, for tasks that classify.
    fn accuracy(&self, _w: &ModelVector, _labels: &[f64]) -> Option<f64> {
        None
    }
}

/// `ℓ_k(w) = Σ_i P_i · ½‖w − μ_i‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTask {
    pub centers: Vec<ModelVector>,
    /// Standard deviation of Gaussian noise added to stochastic gradients.
    pub gradient_noise: f64,
}

impl QuadraticTask {
    /// Centers at `scale · e_(i mod d)`.
    pub fn new(num_classes: usize, dimension: usize, scale: f64) -> Result<Self> {
        if num_classes == 0 || dimension == 0 {
            return Err(Error::Domain("quadratic task needs at least one class and dimension".into()));
        }
        let centers = (0..num_classes)
            .map(|i| {
                let mut c = vec![0.0; dimension];
                c[i % dimension] = scale;
                ModelVector::from_vec(c)
            })
            .collect();
        Ok(Self { centers, gradient_noise: 0.0 })
    }

    pub fn from_centers(centers: Vec<ModelVector>) -> Result<Self> {
        let d = centers.first().map(ModelVector::dim).unwrap_or(0);
        if d == 0 || centers.iter().any(|c| c.dim() != d) {
            return Err(Error::Domain("centers must be nonempty and share a dimension".into()));
        }
        Ok(Self { centers, gradient_noise: 0.0 })
    }

    pub fn with_noise(mut self, std: f64) -> Self {
        self.gradient_noise = std;
        self
    }

    /// `Σ_i P_i μ_i`, the minimizer of a client with labels `P`.
    pub fn mixture(&self, labels: &[f64]) -> ModelVector {
        let mut out = ModelVector::zeros(self.dimension());
        for (c, &p) in self.centers.iter().zip(labels) {
            out.axpy(p, c);
        }
        out
    }
}

impl Task for QuadraticTask {
    fn dimension(&self) -> usize {
        self.centers[0].dim()
    }

    fn num_classes(&self) -> usize {
        self.centers.len()
    }

    fn loss(&self, w: &ModelVector, labels: &[f64]) -> f64 {
        self.centers
            .iter()
            .zip(labels)
            .map(|(c, &p)| p * 0.5 * w.distance(c).powi(2))
            .sum()
    }

    fn gradient(&self, w: &ModelVector, labels: &[f64]) -> ModelVector {
        let mut g = ModelVector::zeros(self.dimension());
        for (c, &p) in self.centers.iter().zip(labels) {
            for ((gi, wi), ci) in g.0.iter_mut().zip(&w.0).zip(&c.0) {
                *gi += p * (wi - ci);
            }
        }
        g
    }

    fn stochastic_gradient(&self, w: &ModelVector, labels: &[f64], _batch: usize, rng: &mut dyn RngCore)
        -> ModelVector {
        let mut g = self.gradient(w, labels);
        if self.gradient_noise > 0.0 {
            for gi in &mut g.0 {
                let z: f64 = StandardNormal.sample(rng);
                *gi += self.gradient_noise * z;
            }
        }
        g
    }
}

/// Linear softmax over fixed per-class feature pools. Parameters are laid
/// out class by class: `m` weights followed by one bias.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticClassificationTask {
    feature_dim: usize,
    pools: Vec<Vec<Vec<f64>>>,
}

impl SyntheticClassificationTask {
    /// Gaussian classes: centers drawn with spread `separation`, samples
    /// scattered around them with spread `noise`.
    pub fn generate<R: Rng + ?Sized>(
        num_classes: usize,
        feature_dim: usize,
        samples_per_class: usize,
        separation: f64,
        noise: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if num_classes < 2 || feature_dim == 0 || samples_per_class == 0 {
            return Err(Error::Domain(
                "classification needs two classes, one feature and one sample per class".into(),
            ));
        }
        let normal = |rng: &mut R| -> f64 { StandardNormal.sample(rng) };
        let centers: Vec<Vec<f64>> = (0..num_classes)
            .map(|_| (0..feature_dim).map(|_| separation * normal(rng)).collect())
            .collect();
        let pools = centers
            .iter()
            .map(|c| {
                (0..samples_per_class)
                    .map(|_| c.iter().map(|&ci| ci + noise * normal(rng)).collect())
                    .collect()
            })
            .collect();
        Ok(Self { feature_dim, pools })
    }

    /// Reads rows of `label,feature_1,...,feature_m` (no header). Labels are
    /// integers in `0..num_classes`; every class needs at least one row.
    pub fn from_csv(path: &Path, num_classes: usize) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let mut pools: Vec<Vec<Vec<f64>>> = vec![Vec::new(); num_classes];
        let mut feature_dim = None;
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| csv_error(path, e))?;
            let bad = |msg: String| Error::Parse { path: path.to_path_buf(), message: format!("row {}: {msg}", line + 1) };
            let mut fields = record.iter();
            let label: usize = fields
                .next()
                .ok_or_else(|| bad("empty row".into()))?
                .parse()
                .map_err(|e| bad(format!("label: {e}")))?;
            if label >= num_classes {
                return Err(bad(format!("label {label} out of range")));
            }
            let x: Vec<f64> = fields
                .map(|f| f.parse::<f64>().map_err(|e| bad(format!("feature: {e}"))))
                .collect::<Result<_>>()?;
            match feature_dim {
                None if x.is_empty() => return Err(bad("no features".into())),
                None => feature_dim = Some(x.len()),
                Some(m) if m != x.len() => return Err(bad(format!("expected {m} features"))),
                _ => {}
            }
            pools[label].push(x);
        }
        let feature_dim = feature_dim.ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            message: "no rows".into(),
        })?;
        if let Some(c) = pools.iter().position(Vec::is_empty) {
            return Err(Error::Parse { path: path.to_path_buf(), message: format!("class {c} has no rows") });
        }
        Ok(Self { feature_dim, pools })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn logits(&self, w: &ModelVector, x: &[f64], out: &mut [f64]) {
        let m = self.feature_dim;
        for (c, o) in out.iter_mut().enumerate() {
            let row = &w.0[c * (m + 1)..(c + 1) * (m + 1)];
            *o = row[m] + row[..m].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Cross-entropy of one sample; accumulates `scale · ∇` into `grad`.
    fn sample_loss(&self, w: &ModelVector, x: &[f64], y: usize, scale: f64, grad: Option<&mut ModelVector>) -> f64 {
        let k = self.pools.len();
        let m = self.feature_dim;
        let mut z = vec![0.0; k];
        self.logits(w, x, &mut z);
        let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - zmax).exp()).sum();
        let loss = zmax + sum.ln() - z[y];
        if let Some(g) = grad {
            for c in 0..k {
                let p = (z[c] - zmax).exp() / sum - if c == y { 1.0 } else { 0.0 };
                let row = &mut g.0[c * (m + 1)..(c + 1) * (m + 1)];
                for (r, xi) in row[..m].iter_mut().zip(x) {
                    *r += scale * p * xi;
                }
                row[m] += scale * p;
            }
        }
        loss
    }

    fn predict(&self, w: &ModelVector, x: &[f64]) -> usize {
        let mut z = vec![0.0; self.pools.len()];
        self.logits(w, x, &mut z);
        let mut best = 0;
        for c in 1..z.len() {
            if z[c] > z[best] {
                best = c;
            }
        }
        best
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Parse { path: path.to_path_buf(), message: e.to_string() }
}

impl Task for SyntheticClassificationTask {
    fn dimension(&self) -> usize {
        self.pools.len() * (self.feature_dim + 1)
    }

    fn num_classes(&self) -> usize {
        self.pools.len()
    }

    fn loss(&self, w: &ModelVector, labels: &[f64]) -> f64 {
        let mut total = 0.0;
        for (y, (pool, &p)) in self.pools.iter().zip(labels).enumerate() {
            if p == 0.0 {
                continue;
            }
            let s: f64 = pool.iter().map(|x| self.sample_loss(w, x, y, 0.0, None)).sum();
            total += p * s / pool.len() as f64;
        }
        total
    }

    fn gradient(&self, w: &ModelVector, labels: &[f64]) -> ModelVector {
        let mut g = ModelVector::zeros(self.dimension());
        for (y, (pool, &p)) in self.pools.iter().zip(labels).enumerate() {
            if p == 0.0 {
                continue;
            }
            let scale = p / pool.len() as f64;
            for x in pool {
                self.sample_loss(w, x, y, scale, Some(&mut g));
            }
        }
        g
    }

    fn stochastic_gradient(&self, w: &ModelVector, labels: &[f64], batch: usize, rng: &mut dyn RngCore)
        -> ModelVector {
        let mut g = ModelVector::zeros(self.dimension());
        let batch = batch.max(1);
        let scale = 1.0 / batch as f64;
        for _ in 0..batch {
            let y = sample_label(labels, rng);
            let pool = &self.pools[y];
            let x = &pool[rng.random_range(0..pool.len())];
            self.sample_loss(w, x, y, scale, Some(&mut g));
        }
        g
    }

    fn accuracy(&self, w: &ModelVector, labels: &[f64]) -> Option<f64> {
        let mut acc = 0.0;
        for (y, (pool, &p)) in self.pools.iter().zip(labels).enumerate() {
            if p == 0.0 {
                continue;
            }
            let hits = pool.iter().filter(|x| self.predict(w, x) == y).count();
            acc += p * hits as f64 / pool.len() as f64;
        }
        Some(acc)
    }
}

fn sample_label(labels: &[f64], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.random::<f64>() * labels.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, &p) in labels.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    labels.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Volume-weighted label distribution over all clients.
pub fn global_label_distribution(topology: &Topology) -> Vec<f64> {
    let classes = topology.clients.first().map_or(0, |c| c.label_distribution.len());
    let total = topology.total_volume as f64;
    let mut out = vec![0.0; classes];
    for c in &topology.clients {
        for (o, &p) in out.iter_mut().zip(&c.label_distribution) {
            *o += c.data_volume as f64 / total * p;
        }
    }
    out
}

/// `Σ_k (n_k / N) ℓ_k(w)`.
pub fn evaluate_global_loss(task: &dyn Task, w: &ModelVector, topology: &Topology) -> f64 {
    let total = topology.total_volume as f64;
    topology
        .clients
        .iter()
        .map(|c| c.data_volume as f64 / total * task.loss(w, &c.label_distribution))
        .sum()
}

/// Volume-weighted accuracy over all clients, when the task classifies.
pub fn evaluate_global_accuracy(task: &dyn Task, w: &ModelVector, topology: &Topology) -> Option<f64> {
    task.accuracy(w, &global_label_distribution(topology))
}

/// Closed-form minimizer of the global quadratic loss.
pub fn quadratic_global_optimum(task: &QuadraticTask, topology: &Topology) -> ModelVector {
    task.mixture(&global_label_distribution(topology))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    Quadratic {
        dimension: usize,
        center_scale: f64,
        #[serde(default)]
        gradient_noise: f64,
    },
    Classification {
        feature_dim: usize,
        samples_per_class: usize,
        separation: f64,
        noise: f64,
    },
    Csv {
        path: PathBuf,
    },
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig::Quadratic { dimension: 10, center_scale: 1.0, gradient_noise: 0.0 }
    }
}

/// A built task; the quadratic variant stays concrete so its optimum is available.
pub enum BuiltTask {
    Quadratic(QuadraticTask),
    Other(Box<dyn Task>),
}

impl BuiltTask {
    pub fn as_task(&self) -> &dyn Task {
        match self {
            BuiltTask::Quadratic(q) => q,
            BuiltTask::Other(t) => t.as_ref(),
        }
    }

    pub fn optimum(&self, topology: &Topology) -> Option<ModelVector> {
        match self {
            BuiltTask::Quadratic(q) => Some(quadratic_global_optimum(q, topology)),
            BuiltTask::Other(_) => None,
        }
    }
}

pub fn build_task<R: Rng + ?Sized>(cfg: &TaskConfig, num_classes: usize, rng: &mut R) -> Result<BuiltTask> {
    match cfg {
        TaskConfig::Quadratic { dimension, center_scale, gradient_noise } => {
            if !(*gradient_noise >= 0.0) {
                return Err(Error::config("task.gradient_noise", "must be nonnegative"));
            }
            let q = QuadraticTask::new(num_classes, *dimension, *center_scale)
                .map_err(|e| Error::config("task", e.to_string()))?;
            Ok(BuiltTask::Quadratic(q.with_noise(*gradient_noise)))
        }
        TaskConfig::Classification { feature_dim, samples_per_class, separation, noise } => {
            let t = SyntheticClassificationTask::generate(num_classes, *feature_dim, *samples_per_class, *separation, *noise, rng)
                .map_err(|e| Error::config("task", e.to_string()))?;
            Ok(BuiltTask::Other(Box::new(t)))
        }
        TaskConfig::Csv { path } => Ok(BuiltTask::Other(Box::new(SyntheticClassificationTask::from_csv(path, num_classes)?))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn finite_difference(task: &dyn Task, w: &ModelVector, labels: &[f64]) -> ModelVector {
        let h = 1e-5;
        let mut g = ModelVector::zeros(w.dim());
        for i in 0..w.dim() {
            let mut up = w.clone();
            let mut down = w.clone();
            up.0[i] += h;
            down.0[i] -= h;
            g.0[i] = (task.loss(&up, labels) - task.loss(&down, labels)) / (2.0 * h);
        }
        g
    }

    fn random_point(rng: &mut ChaCha8Rng, d: usize) -> ModelVector {
        ModelVector::from_vec((0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn random_labels(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..c).map(|_| rng.random::<f64>()).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / s).collect()
    }

    fn assert_gradient_matches(task: &dyn Task, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10 {
            let w = random_point(&mut rng, task.dimension());
            let labels = random_labels(&mut rng, task.num_classes());
            let g = task.gradient(&w, &labels);
            let fd = finite_difference(task, &w, &labels);
            let rel = g.distance(&fd) / fd.norm().max(1e-12);
            assert!(rel <= 1e-4, "relative gradient error {rel}");
        }
    }

    #[test]
    fn quadratic_gradient_matches_differences() {
        assert_gradient_matches(&QuadraticTask::new(10, 4, 2.0).unwrap(), 1);
    }

    #[test]
    fn classification_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = SyntheticClassificationTask::generate(4, 3, 20, 2.0, 1.0, &mut rng).unwrap();
        assert_eq!(t.dimension(), 16);
        assert_gradient_matches(&t, 3);
    }

    #[test]
    fn classification_loss_is_nonnegative_and_learnable() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = SyntheticClassificationTask::generate(3, 2, 50, 4.0, 0.5, &mut rng).unwrap();
        let labels = vec![1.0 / 3.0; 3];
        let mut w = t.initial_model();
        let start = t.loss(&w, &labels);
        assert!((start - 3f64.ln()).abs() < 1e-12);
        for _ in 0..200 {
            let g = t.gradient(&w, &labels);
            w.axpy(-0.5, &g);
        }
        assert!(t.loss(&w, &labels) >= 0.0);
        assert!(t.loss(&w, &labels) < start);
        assert!(t.accuracy(&w, &labels).unwrap() > 0.9);
    }

    #[test]
    fn stochastic_gradient_is_unbiased_in_the_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = SyntheticClassificationTask::generate(3, 2, 10, 1.0, 1.0, &mut rng).unwrap();
        let labels = vec![0.5, 0.5, 0.0];
        let w = random_point(&mut rng, t.dimension());
        let exact = t.gradient(&w, &labels);
        let est = t.stochastic_gradient(&w, &labels, 40_000, &mut rng);
        assert!(est.distance(&exact) < 0.02 * exact.norm().max(1.0));
    }

    #[test]
    fn quadratic_noise_is_optional() {
        let q = QuadraticTask::new(2, 2, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = ModelVector::from_vec(vec![0.3, -0.2]);
        assert_eq!(q.stochastic_gradient(&w, &[0.5, 0.5], 20, &mut rng), q.gradient(&w, &[0.5, 0.5]));
        let noisy = q.clone().with_noise(1.0);
        assert_ne!(noisy.stochastic_gradient(&w, &[0.5, 0.5], 20, &mut rng), q.gradient(&w, &[0.5, 0.5]));
    }

    #[test]
    fn csv_ingestion() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("data.csv");
        std::fs::write(&p, "0,1.0,2.0\n1, -1.0, 0.5\n1,0.0,0.0\n").unwrap();
        let t = SyntheticClassificationTask::from_csv(&p, 2).unwrap();
        assert_eq!(t.feature_dim(), 2);
        assert_eq!(t.dimension(), 6);
        std::fs::write(&p, "0,1.0\n1,1.0,2.0\n").unwrap();
        assert!(matches!(SyntheticClassificationTask::from_csv(&p, 2), Err(Error::Parse { .. })));
        std::fs::write(&p, "0,1.0\n").unwrap();
        assert!(SyntheticClassificationTask::from_csv(&p, 2).is_err());
        std::fs::write(&p, "5,1.0\n").unwrap();
        assert!(SyntheticClassificationTask::from_csv(&p, 2).is_err());
    }

    #[test]
    fn task_config_round_trips() {
        let cfg = TaskConfig::default();
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<TaskConfig>(&s).unwrap(), cfg);
        let bad = r#"{"kind":"quadratic","dimension":3,"center_scale":1.0,"typo":1}"#;
        assert!(serde_json::from_str::<TaskConfig>(bad).is_err());
    }
}
