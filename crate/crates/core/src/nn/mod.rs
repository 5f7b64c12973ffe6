//! Dense networks, the diagonal-Gaussian policy head and Adam.
//!
//! Everything is plain `f64` slices. A network is a [`ParamStore`]: one flat
//! parameter vector plus the layer layout that says how to slice it. Weights
//! are row-major `rows x cols` (output x input), followed by the `rows`
//! biases; a state-independent log standard deviation block, if any, sits at
//! the very end.

mod adam;
mod gaussian;
mod mlp;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use gaussian::{
    clamp_logstd, gaussian_entropy, gaussian_logprob, gaussian_sample_logprob, GaussianAction,
    LOGSTD_MAX, LOGSTD_MIN,
};
pub use mlp::{backward_batch, forward_batch, mlp_backward, mlp_forward, ForwardCache, Prepared};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MasqError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Tanh,
    Elu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Tanh => x.tanh(),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::Tanh => 1,
            Activation::Elu => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Linear),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Elu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub rows: usize,
    pub cols: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        self.rows * self.cols + self.rows
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub values: Vec<f64>,
    layout: Vec<LayerSpec>,
    offsets: Vec<usize>,
    logstd_len: usize,
}

impl ParamStore {
    /// Zero-initialised store for the given layout.
    pub fn new(layout: Vec<LayerSpec>, logstd_len: usize) -> Result<Self> {
        if layout.is_empty() {
            return Err(MasqError::Config("network needs at least one layer".into()));
        }
        for pair in layout.windows(2) {
            if pair[1].cols != pair[0].rows {
                return Err(MasqError::Config(format!(
                    "layer input {} does not match previous output {}",
                    pair[1].cols, pair[0].rows
                )));
            }
        }
        if layout.iter().any(|l| l.rows == 0 || l.cols == 0) {
            return Err(MasqError::Config("zero-sized layer".into()));
        }
        let mut offsets = Vec::with_capacity(layout.len());
        let mut total = 0;
        for l in &layout {
            offsets.push(total);
            total += l.param_count();
        }
        Ok(Self {
            values: vec![0.0; total + logstd_len],
            layout,
            offsets,
            logstd_len,
        })
    }

    /// Multi-layer perceptron `input -> hidden... -> output`, hidden layers
    /// use `hidden_act`, the output layer is linear.
    pub fn mlp(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_act: Activation,
        logstd_len: usize,
    ) -> Result<Self> {
        let mut layout = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input;
        for &h in hidden {
            layout.push(LayerSpec {
                rows: h,
                cols: prev,
                activation: hidden_act,
            });
            prev = h;
        }
        layout.push(LayerSpec {
            rows: output,
            cols: prev,
            activation: Activation::Linear,
        });
        Self::new(layout, logstd_len)
    }

    /// Orthogonal weights scaled by `hidden_gain` (last layer: `output_gain`),
    /// zero biases, zero log-std.
    pub fn init_orthogonal<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        hidden_gain: f64,
        output_gain: f64,
    ) {
        let n = self.layout.len();
        for l in 0..n {
            let spec = self.layout[l];
            let gain = if l + 1 == n { output_gain } else { hidden_gain };
            let w = orthogonal(rng, spec.rows, spec.cols);
            let off = self.offsets[l];
            for (dst, src) in self.values[off..off + spec.rows * spec.cols]
                .iter_mut()
                .zip(w)
            {
                *dst = gain * src;
            }
            let b = off + spec.rows * spec.cols;
            self.values[b..b + spec.rows].fill(0.0);
        }
        let ls = self.logstd_offset();
        self.values[ls..].fill(0.0);
    }

    pub fn layout(&self) -> &[LayerSpec] {
        &self.layout
    }

    pub fn input_dim(&self) -> usize {
        self.layout[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layout[self.layout.len() - 1].rows
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn logstd_len(&self) -> usize {
        self.logstd_len
    }

    pub fn logstd_offset(&self) -> usize {
        self.values.len() - self.logstd_len
    }

    pub fn logstd(&self) -> &[f64] {
        &self.values[self.logstd_offset()..]
    }

    pub fn logstd_mut(&mut self) -> &mut [f64] {
        let o = self.logstd_offset();
        &mut self.values[o..]
    }

    pub(crate) fn layer_offset(&self, layer: usize) -> usize {
        self.offsets[layer]
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        let s = self.layout[layer];
        let o = self.offsets[layer];
        &self.values[o..o + s.rows * s.cols]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        let s = self.layout[layer];
        let o = self.offsets[layer];
        &mut self.values[o..o + s.rows * s.cols]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let s = self.layout[layer];
        let o = self.offsets[layer] + s.rows * s.cols;
        &self.values[o..o + s.rows]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let s = self.layout[layer];
        let o = self.offsets[layer] + s.rows * s.cols;
        &mut self.values[o..o + s.rows]
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(MasqError::NonFinite("parameter store".into()))
        }
    }

    /// Clamp the log-std block into the allowed policy range.
    pub fn clamp_logstd(&mut self) {
        for v in self.logstd_mut() {
            *v = v.clamp(LOGSTD_MIN, LOGSTD_MAX);
        }
    }
}

/// Random matrix with orthonormal rows (rows <= cols) or columns.
fn orthogonal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Vec<f64> {
    let (n, m) = if rows <= cols {
        (rows, cols)
    } else {
        (cols, rows)
    };
    // n vectors of length m, modified Gram-Schmidt
    let mut vecs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..m).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    for i in 0..n {
        for j in 0..i {
            let d: f64 = vecs[i].iter().zip(&vecs[j]).map(|(a, b)| a * b).sum();
            let (head, tail) = vecs.split_at_mut(i);
            for (a, b) in tail[0].iter_mut().zip(&head[j]) {
                *a -= d * b;
            }
        }
        let norm = vecs[i].iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-12 {
            vecs[i].iter_mut().for_each(|a| *a /= norm);
        }
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = if rows <= cols { vecs[r][c] } else { vecs[c][r] };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn param_count_matches_layout() {
        let p = ParamStore::mlp(35, &[256, 128], 3, Activation::Elu, 3).unwrap();
        let expected = 35 * 256 + 256 + 256 * 128 + 128 + 128 * 3 + 3 + 3;
        assert_eq!(p.len(), expected);
        assert_eq!(p.input_dim(), 35);
        assert_eq!(p.output_dim(), 3);
        assert_eq!(p.logstd().len(), 3);
    }

    #[test]
    fn mismatched_layers_rejected() {
        let layout = vec![
            LayerSpec {
                rows: 4,
                cols: 3,
                activation: Activation::Tanh,
            },
            LayerSpec {
                rows: 2,
                cols: 5,
                activation: Activation::Linear,
            },
        ];
        assert!(ParamStore::new(layout, 0).is_err());
    }

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(r, c) in &[(4usize, 9usize), (9, 4), (5, 5)] {
            let w = orthogonal(&mut rng, r, c);
            let (n, get): (usize, Box<dyn Fn(usize, usize) -> f64>) = if r <= c {
                (r, Box::new(|i, k| w[i * c + k]))
            } else {
                (c, Box::new(|i, k| w[k * c + i]))
            };
            let m = r.max(c);
            for i in 0..n {
                for j in 0..n {
                    let d: f64 = (0..m).map(|k| get(i, k) * get(j, k)).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((d - want).abs() < 1e-10, "{r}x{c} ({i},{j}) = {d}");
                }
            }
        }
    }

    #[test]
    fn output_gain_scales_last_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ParamStore::mlp(6, &[8], 3, Activation::Elu, 3).unwrap();
        p.init_orthogonal(&mut rng, 1.0, 0.01);
        let max_last = p.weights(1).iter().fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(max_last <= 0.01 + 1e-12);
        assert!(p.logstd().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn elu_derivative_is_continuous_at_zero() {
        let a = Activation::Elu;
        let y = a.apply(-1e-12);
        assert!((a.derivative(-1e-12, y) - 1.0).abs() < 1e-9);
    }
}
