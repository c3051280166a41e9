use crate::error::{Error, Result};
use crate::scene::PRIVILEGED_DIM;
use crate::seed;

use super::dense::{self, Dense};
use super::{ModelFile, Network};

/// Hidden widths of the privileged-feature classifier.
pub const LOW_DIM_HIDDEN: [usize; 3] = [256, 256, 256];

/// Dense rectifier network with a single sigmoid output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    sizes: Vec<usize>,
    layers: Vec<Dense>,
    params: Vec<f64>,
}

impl MlpModel {
    /// Randomly initialized network with layer widths `sizes`
    /// (`[input, hidden..., 1]`).
    pub fn new(sizes: &[usize], seed: u64) -> Self {
        let mut m = Self::zeros(sizes);
        let mut rng = seed::rng_for(seed, &[seed::tag("mlp-init")]);
        dense::init(&m.layers, &mut m.params, &mut rng);
        m
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2 && *sizes.last().unwrap() == 1, "MLP needs a scalar output");
        let (layers, n) = dense::stack(sizes, 0);
        Self {
            sizes: sizes.to_vec(),
            layers,
            params: vec![0.0; n],
        }
    }

    /// The 30 -> 256 -> 256 -> 256 -> 1 privileged-feature classifier.
    pub fn phi_low(seed: u64) -> Self {
        let mut sizes = vec![PRIVILEGED_DIM];
        sizes.extend(LOW_DIM_HIDDEN);
        sizes.push(1);
        Self::new(&sizes, seed)
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile::Mlp {
            layers: self.sizes.clone(),
            params: self.params.clone(),
        }
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        match file {
            ModelFile::Mlp { layers, params } => {
                if layers.len() < 2 || layers.last() != Some(&1) {
                    return Err(Error::Format(format!("bad MLP layers {layers:?}")));
                }
                let mut m = Self::zeros(layers);
                if params.len() != m.params.len() {
                    return Err(Error::Shape { expected: m.params.len(), got: params.len() });
                }
                m.params.copy_from_slice(params);
                Ok(m)
            }
            _ => Err(Error::Format("expected an mlp model file".into())),
        }
    }

    fn stack_inputs(&self, batch: &[&[f64]]) -> Result<Vec<f64>> {
        let d = self.input_dim();
        let mut x = Vec::with_capacity(batch.len() * d);
        for row in batch {
            if row.len() != d {
                return Err(Error::Shape { expected: d, got: row.len() });
            }
            x.extend_from_slice(row);
        }
        Ok(x)
    }

    /// Activations of every layer; the last entry holds the logits.
    fn activations(&self, x: Vec<f64>, rows: usize) -> Vec<Vec<f64>> {
        let mut acts = vec![x];
        for (i, l) in self.layers.iter().enumerate() {
            let mut out = Vec::new();
            let relu = i + 1 < self.layers.len();
            dense::forward(&self.params, l, acts.last().unwrap(), rows, &mut out, relu);
            acts.push(out);
        }
        acts
    }
}

impl Network for MlpModel {
    type Input = [f64];

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn logits(&self, batch: &[&[f64]]) -> Result<Vec<f64>> {
        let x = self.stack_inputs(batch)?;
        Ok(self.activations(x, batch.len()).pop().unwrap())
    }

    fn loss_and_grad(&self, batch: &[&[f64]], labels: &[f64], grad: &mut [f64]) -> Result<f64> {
        let rows = batch.len();
        if labels.len() != rows {
            return Err(Error::Shape { expected: rows, got: labels.len() });
        }
        let acts = self.activations(self.stack_inputs(batch)?, rows);
        grad.fill(0.0);
        let logits = acts.last().unwrap();
        let inv = 1.0 / rows as f64;
        let mut loss = 0.0;
        let mut dz: Vec<f64> = logits
            .iter()
            .zip(labels)
            .map(|(z, y)| {
                loss += dense::bce_logit(*z, *y);
                (dense::sigmoid(*z) - y) * inv
            })
            .collect();
        let mut dx = Vec::new();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let need_dx = i > 0;
            dense::backward(&self.params, l, &acts[i], rows, &dz, grad, need_dx.then_some(&mut dx));
            if need_dx {
                dense::relu_mask(&mut dx, &acts[i]);
                std::mem::swap(&mut dz, &mut dx);
            }
        }
        Ok(loss * inv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::gradient_check;
    use rand::Rng as _;

    #[test]
    fn zero_model_outputs_half() {
        let m = MlpModel::zeros(&[30, 256, 256, 256, 1]);
        let x = vec![1.7; 30];
        assert_eq!(m.forward(&x).unwrap(), 0.5);
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        let m = MlpModel::phi_low(0);
        assert!(matches!(m.forward(&[0.0; 29]), Err(Error::Shape { expected: 30, got: 29 })));
    }

    #[test]
    fn outputs_strictly_inside_unit_interval() {
        let m = MlpModel::phi_low(1);
        let mut rng = seed::rng(1);
        for _ in 0..50 {
            let x: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = m.forward(&x).unwrap();
            assert!(p > 0.0 && p < 1.0 && p.is_finite());
        }
    }

    #[test]
    fn batch_loss_matches_sum_of_singles() {
        let m = MlpModel::new(&[4, 6, 5, 1], 2);
        let xs = [[0.1, -0.3, 0.5, 0.9], [1.0, 0.2, -0.7, 0.0], [-0.4, 0.4, 0.4, -0.4]];
        let refs: Vec<&[f64]> = xs.iter().map(|x| &x[..]).collect();
        let ys = [1.0, 0.0, 1.0];
        let mut g = vec![0.0; m.params().len()];
        let batch = m.loss_and_grad(&refs, &ys, &mut g).unwrap();
        let mut sum_g = vec![0.0; g.len()];
        let mut sum_l = 0.0;
        for (x, y) in refs.iter().zip(ys) {
            let mut gi = vec![0.0; g.len()];
            sum_l += m.loss_and_grad(&[*x], &[y], &mut gi).unwrap();
            for (s, v) in sum_g.iter_mut().zip(gi) {
                *s += v / 3.0;
            }
        }
        assert!((batch - sum_l / 3.0).abs() < 1e-12);
        assert!(g.iter().zip(&sum_g).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seed::rng(77);
        for trial in 0..20 {
            let mut m = MlpModel::new(&[6, 12, 10, 8, 1], trial);
            for p in m.params_mut() {
                *p = rng.random_range(-0.8..0.8);
            }
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let err = gradient_check(&m, &x[..], (trial % 2) as u8).unwrap();
            assert!(err < 1e-4, "trial {trial}: {err}");
        }
    }
}
