//! Pairwise cosine-preservation loss, its Matryoshka average over output
//! prefixes, and the analytic gradient with respect to decoder parameters.
//!
//! For a batch of `B` rows the similarity loss is the mean over ordered
//! pairs `i != j` of `(cos(h_i, h_j) - cos(z_i, z_j))^2`. The Matryoshka
//! loss averages it over the model's stops, truncating `H` at each stop and
//! always comparing against the full-width `Z`.
//!
//! Prefix dot products are accumulated column by column in index order, so
//! the Gram matrix of a prefix of length `s` is bit-identical whether it is
//! built from scratch or extended from a shorter prefix.

use super::DecoderModel;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Scalar};

/// Symmetric `n × n` table of prefix dot products.
struct PrefixGram {
    n: usize,
    dots: Vec<f64>,
}

impl PrefixGram {
    fn new(n: usize) -> Self {
        Self {
            n,
            dots: vec![0.0; n * n],
        }
    }

    /// Adds columns `from..to` of the row-major `n × dims` buffer.
    fn extend(&mut self, data: &[f64], dims: usize, from: usize, to: usize) {
        let n = self.n;
        for i in 0..n {
            let ri = &data[i * dims + from..i * dims + to];
            for j in i..n {
                let rj = &data[j * dims + from..j * dims + to];
                let mut acc = self.dots[i * n + j];
                for (a, b) in ri.iter().zip(rj) {
                    acc += a * b;
                }
                self.dots[i * n + j] = acc;
                self.dots[j * n + i] = acc;
            }
        }
    }

    fn norms(&self, label: &str) -> Result<Vec<f64>> {
        (0..self.n)
            .map(|i| {
                let sq = self.dots[i * self.n + i];
                if sq == 0.0 {
                    Err(Error::ZeroVector(format!("{label} row {i}")))
                } else {
                    Ok(sq.sqrt())
                }
            })
            .collect()
    }

    /// Cosine table plus the row norms it was normalized with.
    fn cosines(&self, label: &str) -> Result<(Vec<f64>, Vec<f64>)> {
        let norms = self.norms(label)?;
        let n = self.n;
        let mut cos = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                cos[i * n + j] = self.dots[i * n + j] / (norms[i] * norms[j]);
            }
        }
        Ok((cos, norms))
    }
}

fn to_f64_buffer<T: Scalar>(m: &Matrix<T>) -> Vec<f64> {
    m.as_slice().iter().map(|v| v.to_f64()).collect()
}

fn cosine_table(data: &[f64], rows: usize, dims: usize, label: &str) -> Result<Vec<f64>> {
    let mut gram = PrefixGram::new(rows);
    gram.extend(data, dims, 0, dims);
    Ok(gram.cosines(label)?.0)
}

/// Mean of squared cosine differences over ordered pairs `i != j`.
fn pair_loss(cos: &[f64], target: &[f64], b: usize) -> f64 {
    let mut acc = 0.0f64;
    for i in 0..b {
        for j in 0..b {
            if i != j {
                let d = cos[i * b + j] - target[i * b + j];
                acc += d * d;
            }
        }
    }
    acc / (b * (b - 1)) as f64
}

fn check_batch(h_rows: usize, z_rows: usize) -> Result<usize> {
    if h_rows != z_rows {
        return Err(Error::Dimension(format!(
            "output batch has {h_rows} rows, input batch {z_rows}"
        )));
    }
    if h_rows < 2 {
        return Err(Error::BatchSize(h_rows));
    }
    Ok(h_rows)
}

/// Batch similarity loss between decoder outputs `h` and inputs `z`.
pub fn sim_loss<T: Scalar, U: Scalar>(h: &Matrix<T>, z: &Matrix<U>) -> Result<f64> {
    let b = check_batch(h.rows(), z.rows())?;
    let target = cosine_table(&to_f64_buffer(z), b, z.dims(), "input")?;
    let cos = cosine_table(&to_f64_buffer(h), b, h.dims(), "output")?;
    Ok(pair_loss(&cos, &target, b))
}

/// Per-stop state kept for the backward pass.
struct StopTerm {
    end: usize,
    cos: Vec<f64>,
    norms: Vec<f64>,
}

/// Shared forward path of [`mrl_loss`] and [`mrl_loss_grad`].
fn mrl_forward<U: Scalar>(
    model: &DecoderModel,
    h: &[f64],
    z: &Matrix<U>,
    keep_terms: bool,
) -> Result<(f64, Vec<f64>, Vec<StopTerm>)> {
    let b = z.rows();
    let d_out = model.d_out();
    let target = cosine_table(&to_f64_buffer(z), b, z.dims(), "input")?;
    let mut gram = PrefixGram::new(b);
    let mut start = 0;
    let mut sum = 0.0f64;
    let mut terms = Vec::new();
    for &stop in model.stops() {
        gram.extend(h, d_out, start, stop);
        start = stop;
        let (cos, norms) = gram
            .cosines("output")
            .map_err(|e| e.in_stage(format!("stop {stop}")))?;
        sum += pair_loss(&cos, &target, b);
        if keep_terms {
            terms.push(StopTerm {
                end: stop,
                cos,
                norms,
            });
        }
    }
    Ok((sum / model.stops().len() as f64, target, terms))
}

/// Mean of [`sim_loss`] over the model's stops, each computed on the
/// truncated output against the full-width input.
pub fn mrl_loss<U: Scalar>(model: &DecoderModel, z: &Matrix<U>) -> Result<f64> {
    let h = model.forward_f64(z)?;
    check_batch(h.rows(), z.rows())?;
    Ok(mrl_forward(model, h.as_slice(), z, false)?.0)
}

/// Loss value with its gradient w.r.t. weights (`d_out × d_in`, row-major) and bias.
#[derive(Debug, Clone)]
pub struct LossGradient {
    pub loss: f64,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LossGradient {
    pub fn norm(&self) -> f64 {
        self.weights
            .iter()
            .chain(&self.bias)
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.loss.is_finite() && self.weights.iter().chain(&self.bias).all(|g| g.is_finite())
    }
}

/// Analytic gradient of [`mrl_loss`]; the returned loss equals `mrl_loss` bit for bit.
///
/// With `u_i` the prefix of row `i`, `n_i = |u_i|`, `c_ij` its cosines and
/// `g_ij = 2 (c_ij - t_ij) / (B (B - 1))`, each stop contributes
/// `dL/du_i = sum_j 2 g_ij / (n_i n_j) u_j - (sum_j 2 g_ij c_ij / n_i^2) u_i`.
/// Columns inside several prefixes collect the terms of every stop that covers them.
pub fn mrl_loss_grad<U: Scalar>(model: &DecoderModel, z: &Matrix<U>) -> Result<LossGradient> {
    let h = model.forward_f64(z)?;
    let b = check_batch(h.rows(), z.rows())?;
    let h = h.as_slice();
    let d_out = model.d_out();
    let d_in = model.d_in();
    let (loss, target, terms) = mrl_forward(model, h, z, true)?;

    let k = terms.len() as f64;
    let pair_scale = 2.0 / (b * (b - 1)) as f64;

    // Walk stops from widest to narrowest; `mix` and `self_coef` hold the
    // sums over every stop covering the current column segment.
    let mut mix = vec![0.0f64; b * b];
    let mut self_coef = vec![0.0f64; b];
    let mut grad_h = vec![0.0f64; b * d_out];
    for (idx, term) in terms.iter().enumerate().rev() {
        for i in 0..b {
            let mut diag = 0.0;
            for j in 0..b {
                if i == j {
                    continue;
                }
                let g = pair_scale * (term.cos[i * b + j] - target[i * b + j]);
                mix[i * b + j] += 2.0 * g / (term.norms[i] * term.norms[j]) / k;
                diag += 2.0 * g * term.cos[i * b + j];
            }
            self_coef[i] += diag / (term.norms[i] * term.norms[i]) / k;
        }
        let seg_start = if idx == 0 { 0 } else { terms[idx - 1].end };
        for i in 0..b {
            for c in seg_start..term.end {
                let mut acc = -self_coef[i] * h[i * d_out + c];
                for j in 0..b {
                    acc += mix[i * b + j] * h[j * d_out + c];
                }
                grad_h[i * d_out + c] = acc;
            }
        }
    }

    model.apply_activation_grad(h, &mut grad_h);

    let mut grad_w = vec![0.0f64; d_out * d_in];
    let mut grad_b = vec![0.0f64; d_out];
    for (i, zrow) in z.iter_rows().enumerate() {
        for o in 0..d_out {
            let g = grad_h[i * d_out + o];
            if g == 0.0 {
                continue;
            }
            grad_b[o] += g;
            let wrow = &mut grad_w[o * d_in..(o + 1) * d_in];
            for (w, zi) in wrow.iter_mut().zip(zrow) {
                *w += g * zi.to_f64();
            }
        }
    }
    Ok(LossGradient {
        loss,
        weights: grad_w,
        bias: grad_b,
    })
}
