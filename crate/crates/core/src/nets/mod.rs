//! Binary concept classifiers trained with cross-entropy: a dense network on
//! privileged features and a max-pooled point-set network on clouds.

pub mod dense;
pub mod mlp;
pub mod pointset;

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub use mlp::MlpModel;
pub use pointset::PointSetModel;

/// A differentiable binary classifier over a flat parameter vector.
pub trait Network: Clone {
    type Input: ?Sized;

    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// Output logits for a batch.
    fn logits(&self, batch: &[&Self::Input]) -> Result<Vec<f64>>;

    /// Mean BCE over the batch; writes d(mean loss)/d(params) into `grad`.
    fn loss_and_grad(&self, batch: &[&Self::Input], labels: &[f64], grad: &mut [f64]) -> Result<f64>;

    fn forward_batch(&self, batch: &[&Self::Input]) -> Result<Vec<f64>> {
        Ok(self.logits(batch)?.into_iter().map(dense::sigmoid).collect())
    }

    /// Probability that the concept holds.
    fn forward(&self, input: &Self::Input) -> Result<f64> {
        Ok(self.forward_batch(&[input])?[0])
    }

    fn loss(&self, batch: &[&Self::Input], labels: &[f64]) -> Result<f64> {
        let z = self.logits(batch)?;
        Ok(z.iter().zip(labels).map(|(z, y)| dense::bce_logit(*z, *y)).sum::<f64>() / z.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::low_dim()
    }
}

impl TrainConfig {
    pub fn low_dim() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 60,
            batch_size: 64,
            optimizer: Optimizer::Adam,
            seed: 0,
        }
    }

    pub fn high_dim() -> Self {
        Self {
            epochs: 20,
            ..Self::low_dim()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Minibatch training on mean BCE. Returns the per-epoch mean training
/// loss. Deterministic for a fixed `cfg.seed`.
pub fn train_classifier<N: Network>(
    model: &mut N,
    inputs: &[&N::Input],
    labels: &[u8],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    if inputs.len() != labels.len() {
        return Err(Error::Shape { expected: inputs.len(), got: labels.len() });
    }
    if let Some(bad) = labels.iter().find(|l| **l > 1) {
        return Err(Error::InvalidInput(format!("label {bad} is not binary")));
    }
    let n_params = model.params().len();
    let mut grad = vec![0.0; n_params];
    let mut adam = Adam::new(n_params);
    let mut rng = seed::rng_for(cfg.seed, &[seed::tag("train")]);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut batch_x = Vec::with_capacity(cfg.batch_size);
    let mut batch_y = Vec::with_capacity(cfg.batch_size);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch_x.clear();
            batch_y.clear();
            for &i in chunk {
                batch_x.push(inputs[i]);
                batch_y.push(f64::from(labels[i]));
            }
            let loss = model.loss_and_grad(&batch_x, &batch_y, &mut grad)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence(format!("non-finite loss at epoch {epoch}")));
            }
            total += loss * chunk.len() as f64;
            match cfg.optimizer {
                Optimizer::Adam => adam.step(model.params_mut(), &grad, cfg.learning_rate),
                Optimizer::Sgd => {
                    for (p, g) in model.params_mut().iter_mut().zip(&grad) {
                        *p -= cfg.learning_rate * g;
                    }
                }
            }
        }
        history.push(total / inputs.len() as f64);
    }
    Ok(history)
}

/// Worst relative error between analytic and central-difference parameter
/// gradients of the single-example BCE.
///
/// The relative error of one coordinate is `|a - n| / max(|a|, |n|, 1e-6)`,
/// so coordinates with (near-)zero gradient are compared absolutely.
pub fn gradient_check<N: Network>(model: &N, input: &N::Input, label: u8) -> Result<f64> {
    const STEP: f64 = 1e-5;
    let y = [f64::from(label)];
    let mut analytic = vec![0.0; model.params().len()];
    model.loss_and_grad(&[input], &y, &mut analytic)?;
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + STEP;
        let up = probe.loss(&[input], &y)?;
        probe.params_mut()[i] = orig - STEP;
        let down = probe.loss(&[input], &y)?;
        probe.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Serialized model: architecture descriptor plus the flat weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelFile {
    Mlp {
        layers: Vec<usize>,
        params: Vec<f64>,
    },
    PointSet {
        encoder: Vec<usize>,
        head: Vec<usize>,
        params: Vec<f64>,
    },
}

impl ModelFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    /// Two Gaussian blobs around (±1.5, ±1.5), unit variance, 500 points.
    fn toy_blobs() -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rng = seed::rng(31);
        (0..500)
            .map(|i| {
                let label = (i % 2) as u8;
                let c = if label == 1 { 1.5 } else { -1.5 };
                let x = vec![
                    c + rng.sample::<f64, _>(StandardNormal),
                    c + rng.sample::<f64, _>(StandardNormal),
                ];
                (x, label)
            })
            .unzip()
    }

    #[test]
    fn toy_set_is_nearly_separable() {
        // brute-force oracle: best linear separator x + y = t over a grid of
        // thresholds; the data must admit >= 95% accuracy before we ask the
        // network for it
        let (xs, ys) = toy_blobs();
        let best = (-40..=40)
            .map(|t| {
                let t = t as f64 * 0.05;
                xs.iter().zip(&ys).filter(|(x, y)| u8::from(x[0] + x[1] > t) == **y).count()
            })
            .max()
            .unwrap();
        assert!(best as f64 / xs.len() as f64 >= 0.97, "{best}");
    }

    #[test]
    fn mlp_learns_toy_blobs() {
        let (xs, ys) = toy_blobs();
        let mut model = MlpModel::new(&[2, 16, 16, 1], 3);
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let cfg = TrainConfig { epochs: 30, ..TrainConfig::low_dim() };
        train_classifier(&mut model, &refs, &ys, &cfg).unwrap();
        let p = model.forward_batch(&refs).unwrap();
        let acc = p.iter().zip(&ys).filter(|(p, y)| u8::from(**p >= 0.5) == **y).count() as f64 / 500.0;
        assert!(acc >= 0.95, "{acc}");
    }

    #[test]
    fn memorizes_single_example_monotonically() {
        let x = vec![0.3; 30];
        let xs: Vec<&[f64]> = vec![&x; 32];
        let ys = vec![1u8; 32];
        let mut model = MlpModel::phi_low(7);
        let cfg = TrainConfig { epochs: 40, ..TrainConfig::low_dim() };
        let hist = train_classifier(&mut model, &xs, &ys, &cfg).unwrap();
        assert!(*hist.last().unwrap() < 0.01, "{hist:?}");
        for w in hist.windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "{hist:?}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (xs, ys) = toy_blobs();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let cfg = TrainConfig { epochs: 3, ..TrainConfig::low_dim() }.with_seed(5);
        let run = || {
            let mut m = MlpModel::new(&[2, 8, 1], 1);
            let h = train_classifier(&mut m, &refs, &ys, &cfg).unwrap();
            (h, m)
        };
        let (h1, m1) = run();
        let (h2, m2) = run();
        assert_eq!(h1, h2);
        assert_eq!(m1.params(), m2.params());
    }

    #[test]
    fn rejects_bad_training_input() {
        let mut m = MlpModel::new(&[2, 4, 1], 0);
        let x = [0.0, 1.0];
        let cfg = TrainConfig::low_dim();
        assert!(train_classifier(&mut m, &[], &[], &cfg).is_err());
        assert!(train_classifier(&mut m, &[&x[..]], &[2], &cfg).is_err());
        // single-class data is allowed
        assert!(train_classifier(&mut m, &[&x[..]], &[0], &TrainConfig { epochs: 1, ..cfg }).is_ok());
    }

    #[test]
    fn divergence_is_reported() {
        let x = vec![f64::NAN; 4];
        let mut m = MlpModel::new(&[4, 4, 1], 2);
        let err = train_classifier(&mut m, &[&x[..]], &[1], &TrainConfig { epochs: 2, ..TrainConfig::low_dim() });
        assert!(matches!(err, Err(Error::Divergence(_))), "{err:?}");
    }

    #[test]
    fn saturated_prediction_has_near_zero_gradient() {
        let mut m = MlpModel::new(&[3, 4, 1], 4);
        // push the output bias far positive: p ~ 1 for label 1
        let last_bias = m.params().len() - 1;
        m.params_mut()[last_bias] = 40.0;
        let x = [0.1, 0.2, 0.3];
        let mut g = vec![0.0; m.params().len()];
        m.loss_and_grad(&[&x[..]], &[1.0], &mut g).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
        assert!(gradient_check(&m, &x[..], 1).unwrap() < 1e-4);
    }

    #[test]
    fn model_json_round_trip_is_bit_exact() {
        let mut rng = seed::rng(0);
        let mut m = MlpModel::new(&[5, 7, 1], 9);
        for p in m.params_mut() {
            *p = rng.random::<f64>() * 1e-3 - std::f64::consts::PI;
        }
        let file = m.to_file();
        let text = serde_json::to_string(&file).unwrap();
        let back: ModelFile = serde_json::from_str(&text).unwrap();
        let m2 = MlpModel::from_file(&back).unwrap();
        assert!(m.params().iter().zip(m2.params()).all(|(a, b)| a.to_bits() == b.to_bits()));

        let ps = PointSetModel::small(3);
        let back: ModelFile = serde_json::from_str(&serde_json::to_string(&ps.to_file()).unwrap()).unwrap();
        let ps2 = PointSetModel::from_file(&back).unwrap();
        assert!(ps.params().iter().zip(ps2.params()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(MlpModel::from_file(&back).is_err());
    }
}
