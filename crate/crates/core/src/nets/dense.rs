//! Fully connected layers over a shared flat parameter vector.

/// One layer's slice of the parameter vector: an `out x in` row-major weight
/// block at `w` followed by `out` biases at `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub inp: usize,
    pub out: usize,
    pub w: usize,
    pub b: usize,
}

impl Dense {
    pub fn param_count(&self) -> usize {
        self.inp * self.out + self.out
    }
}

/// Consecutive layers for `sizes = [in, h1, ..., out]`, starting at `offset`.
pub fn stack(sizes: &[usize], mut offset: usize) -> (Vec<Dense>, usize) {
    let layers = sizes
        .windows(2)
        .map(|w| {
            let d = Dense {
                inp: w[0],
                out: w[1],
                w: offset,
                b: offset + w[0] * w[1],
            };
            offset += d.param_count();
            d
        })
        .collect();
    (layers, offset)
}

/// Uniform fan-in initialization (`±sqrt(6 / fan_in)`), zero biases.
pub fn init<R: rand::Rng>(layers: &[Dense], params: &mut [f64], rng: &mut R) {
    for l in layers {
        let bound = (6.0 / l.inp as f64).sqrt();
        for p in &mut params[l.w..l.w + l.inp * l.out] {
            *p = rng.random_range(-bound..bound);
        }
        params[l.b..l.b + l.out].fill(0.0);
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass buffers sized for the given shapes and strides;
    // `c` is row-major m x n and does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out = x W^T + b` (optionally rectified) for `rows` input rows.
pub fn forward(params: &[f64], l: &Dense, x: &[f64], rows: usize, out: &mut Vec<f64>, relu: bool) {
    out.clear();
    out.resize(rows * l.out, 0.0);
    let w = &params[l.w..l.w + l.inp * l.out];
    gemm(rows, l.inp, l.out, x, l.inp as isize, 1, w, 1, l.inp as isize, 0.0, out);
    let bias = &params[l.b..l.b + l.out];
    for row in out.chunks_exact_mut(l.out) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
            if relu && *v < 0.0 {
                *v = 0.0;
            }
        }
    }
}

/// Accumulates `dW += dz^T x`, `db += colsum(dz)` into `grad` and, if
/// requested, writes `dx = dz W`.
pub fn backward(
    params: &[f64],
    l: &Dense,
    x: &[f64],
    rows: usize,
    dz: &[f64],
    grad: &mut [f64],
    dx: Option<&mut Vec<f64>>,
) {
    {
        let dw = &mut grad[l.w..l.w + l.inp * l.out];
        gemm(l.out, rows, l.inp, dz, 1, l.out as isize, x, l.inp as isize, 1, 1.0, dw);
    }
    let db = &mut grad[l.b..l.b + l.out];
    for row in dz.chunks_exact(l.out) {
        for (g, d) in db.iter_mut().zip(row) {
            *g += d;
        }
    }
    if let Some(dx) = dx {
        dx.clear();
        dx.resize(rows * l.inp, 0.0);
        let w = &params[l.w..l.w + l.inp * l.out];
        gemm(rows, l.out, l.inp, dz, l.out as isize, 1, w, l.inp as isize, 1, 0.0, dx);
    }
}

/// `d *= 1[a > 0]`, the rectifier derivative given its output `a`.
pub fn relu_mask(d: &mut [f64], a: &[f64]) {
    for (g, v) in d.iter_mut().zip(a) {
        if *v <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of logit `z` against label `y`, in the stable
/// `max(z, 0) - z y + ln(1 + e^-|z|)` form.
pub fn bce_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_matches_naive() {
        let (layers, n) = stack(&[3, 2], 0);
        let params: Vec<f64> = (0..n).map(|i| i as f64 * 0.1 - 0.3).collect();
        let x = [1.0, -2.0, 0.5, 0.0, 1.0, 1.0];
        let mut out = Vec::new();
        forward(&params, &layers[0], &x, 2, &mut out, false);
        for r in 0..2 {
            for o in 0..2 {
                let mut acc = params[6 + o];
                for i in 0..3 {
                    acc += params[o * 3 + i] * x[r * 3 + i];
                }
                assert!((out[r * 2 + o] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bce_matches_log_form() {
        for z in [-3.0, -0.2, 0.0, 0.7, 4.0] {
            let p = sigmoid(z);
            for y in [0.0, 1.0] {
                let direct = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
                assert!((bce_logit(z, y) - direct).abs() < 1e-12);
            }
        }
        assert!(bce_logit(800.0, 1.0).is_finite());
    }
}
