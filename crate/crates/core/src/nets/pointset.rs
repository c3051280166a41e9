//! Permutation-invariant point-set classifier: a shared per-point encoder,
//! a channel-wise max over all points, and a small dense head.
//!
//! Input rows are `[x, y, z, segment]`. The max-pool subgradient goes to the
//! first point attaining the maximum, so only those points are
//! back-propagated through the encoder.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::seed;

use super::dense::{self, Dense};
use super::{ModelFile, Network};

pub const POINT_DIM: usize = 4;
pub const ENCODER_SIZES: [usize; 4] = [POINT_DIM, 64, 128, 256];
pub const HEAD_SIZES: [usize; 3] = [256, 128, 1];

#[derive(Debug, Clone, PartialEq)]
pub struct PointSetModel {
    encoder_sizes: Vec<usize>,
    head_sizes: Vec<usize>,
    encoder: Vec<Dense>,
    head: Vec<Dense>,
    params: Vec<f64>,
}

struct Forward {
    /// encoder activations, `acts[0]` is the stacked input
    acts: Vec<Vec<f64>>,
    pooled: Vec<f64>,
    /// global row index of the winning point per (cloud, channel)
    argmax: Vec<usize>,
    head_acts: Vec<Vec<f64>>,
}

impl PointSetModel {
    pub fn new(encoder_sizes: &[usize], head_sizes: &[usize], seed: u64) -> Self {
        let mut m = Self::zeros(encoder_sizes, head_sizes);
        let mut rng = seed::rng_for(seed, &[seed::tag("pointset-init")]);
        dense::init(&m.encoder, &mut m.params, &mut rng);
        dense::init(&m.head, &mut m.params, &mut rng);
        m
    }

    pub fn zeros(encoder_sizes: &[usize], head_sizes: &[usize]) -> Self {
        assert_eq!(encoder_sizes[0], POINT_DIM);
        assert_eq!(encoder_sizes.last(), head_sizes.first(), "pooled width feeds the head");
        assert_eq!(head_sizes.last(), Some(&1));
        let (encoder, n) = dense::stack(encoder_sizes, 0);
        let (head, n) = dense::stack(head_sizes, n);
        Self {
            encoder_sizes: encoder_sizes.to_vec(),
            head_sizes: head_sizes.to_vec(),
            encoder,
            head,
            params: vec![0.0; n],
        }
    }

    /// The full-size cloud classifier.
    pub fn phi_high(seed: u64) -> Self {
        Self::new(&ENCODER_SIZES, &HEAD_SIZES, seed)
    }

    /// Shrunken instance for gradient checks and quick tests.
    pub fn small(seed: u64) -> Self {
        Self::new(&[POINT_DIM, 8, 8, 6], &[6, 5, 1], seed)
    }

    pub fn pooled_dim(&self) -> usize {
        *self.encoder_sizes.last().unwrap()
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile::PointSet {
            encoder: self.encoder_sizes.clone(),
            head: self.head_sizes.clone(),
            params: self.params.clone(),
        }
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        match file {
            ModelFile::PointSet { encoder, head, params } => {
                if encoder.first() != Some(&POINT_DIM) || encoder.last() != head.first() || head.last() != Some(&1) {
                    return Err(Error::Format(format!("bad point-set layers {encoder:?} {head:?}")));
                }
                let mut m = Self::zeros(encoder, head);
                if params.len() != m.params.len() {
                    return Err(Error::Shape { expected: m.params.len(), got: params.len() });
                }
                m.params.copy_from_slice(params);
                Ok(m)
            }
            _ => Err(Error::Format("expected a point_set model file".into())),
        }
    }

    fn encode(&self, x: Vec<f64>, rows: usize) -> Vec<Vec<f64>> {
        let mut acts = vec![x];
        for l in &self.encoder {
            let mut out = Vec::new();
            dense::forward(&self.params, l, acts.last().unwrap(), rows, &mut out, true);
            acts.push(out);
        }
        acts
    }

    fn stack(batch: &[&[[f64; 4]]]) -> Result<(Vec<f64>, Vec<usize>)> {
        let mut x = Vec::new();
        let mut offsets = Vec::with_capacity(batch.len() + 1);
        offsets.push(0);
        for cloud in batch {
            if cloud.is_empty() {
                return Err(Error::InvalidInput("empty point cloud".into()));
            }
            for p in cloud.iter() {
                x.extend_from_slice(p);
            }
            offsets.push(offsets.last().unwrap() + cloud.len());
        }
        Ok((x, offsets))
    }

    fn max_pool(h: &[f64], width: usize, offsets: &[usize]) -> (Vec<f64>, Vec<usize>) {
        let clouds = offsets.len() - 1;
        let mut pooled = vec![f64::NEG_INFINITY; clouds * width];
        let mut argmax = vec![0; clouds * width];
        for c in 0..clouds {
            let best = &mut pooled[c * width..(c + 1) * width];
            let arg = &mut argmax[c * width..(c + 1) * width];
            for r in offsets[c]..offsets[c + 1] {
                let row = &h[r * width..(r + 1) * width];
                for ch in 0..width {
                    if row[ch] > best[ch] {
                        best[ch] = row[ch];
                        arg[ch] = r;
                    }
                }
            }
        }
        (pooled, argmax)
    }

    fn head_forward(&self, pooled: Vec<f64>, rows: usize) -> Vec<Vec<f64>> {
        let mut acts = vec![pooled];
        for (i, l) in self.head.iter().enumerate() {
            let mut out = Vec::new();
            let relu = i + 1 < self.head.len();
            dense::forward(&self.params, l, acts.last().unwrap(), rows, &mut out, relu);
            acts.push(out);
        }
        acts
    }

    fn run(&self, batch: &[&[[f64; 4]]]) -> Result<Forward> {
        let (x, offsets) = Self::stack(batch)?;
        let rows = *offsets.last().unwrap();
        let acts = self.encode(x, rows);
        let (pooled, argmax) = Self::max_pool(acts.last().unwrap(), self.pooled_dim(), &offsets);
        let head_acts = self.head_forward(pooled.clone(), batch.len());
        Ok(Forward { acts, pooled, argmax, head_acts })
    }

    /// Channel-wise max of the encoded points of each block, `blocks.len()
    /// x pooled_dim` row-major. The pooled vector of a union of blocks is
    /// the element-wise max of the blocks' pooled vectors.
    pub fn pool_blocks(&self, blocks: &[&[[f64; 4]]]) -> Result<Vec<f64>> {
        let (x, offsets) = Self::stack(blocks)?;
        let rows = *offsets.last().unwrap();
        let acts = self.encode(x, rows);
        Ok(Self::max_pool(acts.last().unwrap(), self.pooled_dim(), &offsets).0)
    }

    /// Logits from pooled vectors (`rows x pooled_dim`).
    pub fn head_logits(&self, pooled: &[f64], rows: usize) -> Result<Vec<f64>> {
        if pooled.len() != rows * self.pooled_dim() {
            return Err(Error::Shape { expected: rows * self.pooled_dim(), got: pooled.len() });
        }
        Ok(self.head_forward(pooled.to_vec(), rows).pop().unwrap())
    }
}

impl Network for PointSetModel {
    type Input = [[f64; 4]];

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn logits(&self, batch: &[&[[f64; 4]]]) -> Result<Vec<f64>> {
        Ok(self.run(batch)?.head_acts.pop().unwrap())
    }

    fn loss_and_grad(&self, batch: &[&[[f64; 4]]], labels: &[f64], grad: &mut [f64]) -> Result<f64> {
        let b = batch.len();
        if labels.len() != b {
            return Err(Error::Shape { expected: b, got: labels.len() });
        }
        let fw = self.run(batch)?;
        grad.fill(0.0);
        let inv = 1.0 / b as f64;
        let mut loss = 0.0;
        let mut dz: Vec<f64> = fw
            .head_acts
            .last()
            .unwrap()
            .iter()
            .zip(labels)
            .map(|(z, y)| {
                loss += dense::bce_logit(*z, *y);
                (dense::sigmoid(*z) - y) * inv
            })
            .collect();

        // head, down to the pooled vector
        let mut dx = Vec::new();
        for (i, l) in self.head.iter().enumerate().rev() {
            dense::backward(&self.params, l, &fw.head_acts[i], b, &dz, grad, Some(&mut dx));
            if i > 0 {
                dense::relu_mask(&mut dx, &fw.head_acts[i]);
            }
            std::mem::swap(&mut dz, &mut dx);
        }
        let d_pooled = dz;

        // scatter onto the winning points only
        let width = self.pooled_dim();
        let mut compact: HashMap<usize, usize> = HashMap::new();
        let mut winners: Vec<usize> = Vec::new();
        for &r in &fw.argmax {
            compact.entry(r).or_insert_with(|| {
                winners.push(r);
                winners.len() - 1
            });
        }
        let n = winners.len();
        let mut d_top = vec![0.0; n * width];
        for (k, &r) in fw.argmax.iter().enumerate() {
            let ch = k % width;
            d_top[compact[&r] * width + ch] += d_pooled[k];
        }
        let gather = |m: &[f64], w: usize| -> Vec<f64> {
            let mut out = Vec::with_capacity(n * w);
            for &r in &winners {
                out.extend_from_slice(&m[r * w..(r + 1) * w]);
            }
            out
        };
        let acts: Vec<Vec<f64>> = fw
            .acts
            .iter()
            .zip(&self.encoder_sizes)
            .map(|(a, w)| gather(a, *w))
            .collect();
        let mut dz = d_top;
        dense::relu_mask(&mut dz, &acts[self.encoder.len()]);
        for (i, l) in self.encoder.iter().enumerate().rev() {
            let need_dx = i > 0;
            dense::backward(&self.params, l, &acts[i], n, &dz, grad, need_dx.then_some(&mut dx));
            if need_dx {
                dense::relu_mask(&mut dx, &acts[i]);
                std::mem::swap(&mut dz, &mut dx);
            }
        }
        debug_assert_eq!(fw.pooled.len(), b * width);
        Ok(loss * inv)
    }
}
