use super::ParamStore;
use crate::error::{MasqError, Result};

/// A parameter store with each weight matrix also held transposed
/// (`cols x rows`), which turns the forward pass into contiguous axpy updates.
///
/// Every output is accumulated as `b + x_0 w_0 + x_1 w_1 + ...` in input
/// order regardless of batch size, so batched and single-sample passes agree
/// bit for bit.
pub struct Prepared<'a> {
    params: &'a ParamStore,
    wt: Vec<Vec<f64>>,
}

impl<'a> Prepared<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        let wt = (0..params.layout().len())
            .map(|l| {
                let s = params.layout()[l];
                let w = params.weights(l);
                let mut t = vec![0.0; s.rows * s.cols];
                for r in 0..s.rows {
                    for c in 0..s.cols {
                        t[c * s.rows + r] = w[r * s.cols + c];
                    }
                }
                t
            })
            .collect();
        Self { params, wt }
    }

    pub fn params(&self) -> &ParamStore {
        self.params
    }
}

/// Per-layer activations of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub n: usize,
    /// `post[0]` is the input, `post[l + 1]` the output of layer `l`.
    pub post: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.post.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

/// Forward `n` samples stored row-major in `input`.
pub fn forward_batch(net: &Prepared<'_>, input: &[f64], n: usize) -> Result<ForwardCache> {
    let p = net.params;
    let in_dim = p.input_dim();
    if input.len() != n * in_dim {
        return Err(MasqError::dim("mlp input", n * in_dim, input.len()));
    }
    let layers = p.layout().len();
    let mut post = Vec::with_capacity(layers + 1);
    let mut pre = Vec::with_capacity(layers);
    post.push(input.to_vec());
    for l in 0..layers {
        let spec = p.layout()[l];
        let (rows, cols) = (spec.rows, spec.cols);
        let bias = p.bias(l);
        let wt = &net.wt[l];
        let a = &post[l];
        let mut z = vec![0.0; n * rows];
        let mut s = 0;
        while s + 4 <= n {
            let (z0, rest) = z[s * rows..(s + 4) * rows].split_at_mut(rows);
            let (z1, rest) = rest.split_at_mut(rows);
            let (z2, z3) = rest.split_at_mut(rows);
            z0.copy_from_slice(bias);
            z1.copy_from_slice(bias);
            z2.copy_from_slice(bias);
            z3.copy_from_slice(bias);
            let a0 = &a[s * cols..(s + 1) * cols];
            let a1 = &a[(s + 1) * cols..(s + 2) * cols];
            let a2 = &a[(s + 2) * cols..(s + 3) * cols];
            let a3 = &a[(s + 3) * cols..(s + 4) * cols];
            for c in 0..cols {
                let w = &wt[c * rows..(c + 1) * rows];
                let (x0, x1, x2, x3) = (a0[c], a1[c], a2[c], a3[c]);
                for r in 0..rows {
                    let wr = w[r];
                    z0[r] += x0 * wr;
                    z1[r] += x1 * wr;
                    z2[r] += x2 * wr;
                    z3[r] += x3 * wr;
                }
            }
            s += 4;
        }
        while s < n {
            let zs = &mut z[s * rows..(s + 1) * rows];
            zs.copy_from_slice(bias);
            let as_ = &a[s * cols..(s + 1) * cols];
            for c in 0..cols {
                let w = &wt[c * rows..(c + 1) * rows];
                let x = as_[c];
                for r in 0..rows {
                    zs[r] += x * w[r];
                }
            }
            s += 1;
        }
        let act = spec.activation;
        let out: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
        pre.push(z);
        post.push(out);
    }
    Ok(ForwardCache { n, post, pre })
}

/// Accumulate `d(output . out_grad)/d(params)` into `grads` (same length as
/// the store, log-std slots untouched). Returns the input gradient when asked.
pub fn backward_batch(
    net: &Prepared<'_>,
    cache: &ForwardCache,
    out_grad: &[f64],
    grads: &mut [f64],
    want_input_grad: bool,
) -> Result<Option<Vec<f64>>> {
    let p = net.params;
    let n = cache.n;
    if out_grad.len() != n * p.output_dim() {
        return Err(MasqError::dim(
            "mlp output gradient",
            n * p.output_dim(),
            out_grad.len(),
        ));
    }
    if grads.len() != p.len() {
        return Err(MasqError::dim("gradient buffer", p.len(), grads.len()));
    }
    let layers = p.layout().len();
    let mut da = out_grad.to_vec();
    for l in (0..layers).rev() {
        let spec = p.layout()[l];
        let (rows, cols) = (spec.rows, spec.cols);
        let act = spec.activation;
        let dz: Vec<f64> = da
            .iter()
            .zip(&cache.pre[l])
            .zip(&cache.post[l + 1])
            .map(|((&g, &x), &y)| g * act.derivative(x, y))
            .collect();
        let a = &cache.post[l];
        let off = p.layer_offset(l);
        let (gw, gb) = grads[off..off + rows * cols + rows].split_at_mut(rows * cols);
        for s in 0..n {
            let dzs = &dz[s * rows..(s + 1) * rows];
            for (b, &g) in gb.iter_mut().zip(dzs) {
                *b += g;
            }
        }
        // weight gradient, four samples per pass over the matrix
        let mut s = 0;
        while s + 4 <= n {
            let a0 = &a[s * cols..(s + 1) * cols];
            let a1 = &a[(s + 1) * cols..(s + 2) * cols];
            let a2 = &a[(s + 2) * cols..(s + 3) * cols];
            let a3 = &a[(s + 3) * cols..(s + 4) * cols];
            for r in 0..rows {
                let g0 = dz[s * rows + r];
                let g1 = dz[(s + 1) * rows + r];
                let g2 = dz[(s + 2) * rows + r];
                let g3 = dz[(s + 3) * rows + r];
                let row = &mut gw[r * cols..(r + 1) * cols];
                for c in 0..cols {
                    row[c] += (g0 * a0[c] + g1 * a1[c]) + (g2 * a2[c] + g3 * a3[c]);
                }
            }
            s += 4;
        }
        while s < n {
            let as_ = &a[s * cols..(s + 1) * cols];
            for r in 0..rows {
                let g = dz[s * rows + r];
                let row = &mut gw[r * cols..(r + 1) * cols];
                for c in 0..cols {
                    row[c] += g * as_[c];
                }
            }
            s += 1;
        }
        if l == 0 && !want_input_grad {
            da.clear();
            break;
        }
        let w = p.weights(l);
        let mut prev = vec![0.0; n * cols];
        for s in 0..n {
            let ps = &mut prev[s * cols..(s + 1) * cols];
            let dzs = &dz[s * rows..(s + 1) * rows];
            for r in 0..rows {
                let g = dzs[r];
                let wr = &w[r * cols..(r + 1) * cols];
                for c in 0..cols {
                    ps[c] += g * wr[c];
                }
            }
        }
        da = prev;
    }
    if !grads.iter().all(|g| g.is_finite()) {
        return Err(MasqError::NonFinite("mlp gradient".into()));
    }
    Ok(if want_input_grad { Some(da) } else { None })
}

/// Single-sample forward pass.
pub fn mlp_forward(params: &ParamStore, input: &[f64]) -> Result<Vec<f64>> {
    let net = Prepared::new(params);
    Ok(forward_batch(&net, input, 1)?
        .post
        .pop()
        .unwrap_or_default())
}

/// Gradients of `output . output_grad` with respect to every parameter and
/// the input, for one sample.
pub fn mlp_backward(
    params: &ParamStore,
    input: &[f64],
    output_grad: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let net = Prepared::new(params);
    let cache = forward_batch(&net, input, 1)?;
    let mut grads = vec![0.0; params.len()];
    let dx = backward_batch(&net, &cache, output_grad, &mut grads, true)?.unwrap_or_default();
    Ok((grads, dx))
}
