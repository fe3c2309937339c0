//! Single-layer decoder mapping a concatenated embedding space to a smaller
//! one, trained so that the cosine similarities of every Matryoshka prefix
//! of its output track the cosine similarities of its input.

mod checkpoint;
mod loss;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, EMBD_MAGIC};
pub use loss::{mrl_loss, mrl_loss_grad, sim_loss, LossGradient};
pub use train::{train, train_with_progress, EpochRecord, Optimizer, TrainConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{EmbeddingMatrix, Matrix, Scalar};

/// Output stops used when none are given.
pub const DEFAULT_STOPS: [usize; 9] = [32, 64, 128, 200, 256, 300, 384, 512, 768];

/// Stops for the wide 1024-d decoder variant.
pub const WIDE_STOPS: [usize; 9] = [32, 64, 128, 256, 384, 512, 768, 892, 1024];

/// Optional elementwise nonlinearity after the affine map. `Identity` is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Identity,
    Tanh,
}

impl Activation {
    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Tanh),
            c => Err(Error::Corrupt(format!("unknown activation code {c}"))),
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
        }
    }
}

/// Checks that stops are non-empty, strictly increasing and end at `d_out`.
pub fn validate_stops(stops: &[usize], d_out: usize) -> Result<()> {
    if stops.is_empty() {
        return Err(Error::Validation("stop list is empty".into()));
    }
    if stops[0] == 0 {
        return Err(Error::Validation("stops must be positive".into()));
    }
    if stops.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Validation(format!(
            "stops {stops:?} are not strictly increasing"
        )));
    }
    if *stops.last().unwrap() != d_out {
        return Err(Error::Validation(format!(
            "last stop {} differs from output dims {d_out}",
            stops.last().unwrap()
        )));
    }
    Ok(())
}

/// `h(z) = act(W z + b)` with `W` of shape `d_out × d_in`, plus the
/// Matryoshka stops it was trained for.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderModel {
    d_in: usize,
    d_out: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    stops: Vec<usize>,
    activation: Activation,
    normalize_inputs: bool,
}

impl DecoderModel {
    /// `weights` is row-major `d_out × d_in`; `d_out` is taken from `bias`.
    pub fn new(d_in: usize, weights: Vec<f64>, bias: Vec<f64>, stops: Vec<usize>) -> Result<Self> {
        let d_out = bias.len();
        if d_in == 0 || d_out == 0 {
            return Err(Error::Dimension("decoder needs d_in, d_out >= 1".into()));
        }
        if weights.len() != d_in * d_out {
            return Err(Error::Dimension(format!(
                "{} weights for a {d_out}x{d_in} decoder",
                weights.len()
            )));
        }
        validate_stops(&stops, d_out)?;
        if let Some(pos) = weights.iter().chain(&bias).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("decoder parameter {pos}")));
        }
        Ok(Self {
            d_in,
            d_out,
            weights,
            bias,
            stops,
            activation: Activation::Identity,
            normalize_inputs: false,
        })
    }

    /// Fan-in uniform initialization in ±1/√d_in, zero bias.
    pub fn init(d_in: usize, stops: Vec<usize>, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d_out = *stops
            .last()
            .ok_or_else(|| Error::Validation("stop list is empty".into()))?;
        let bound = 1.0 / (d_in.max(1) as f64).sqrt();
        let weights = (0..d_in * d_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self::new(d_in, weights, vec![0.0; d_out], stops)
    }

    pub fn init_seeded(d_in: usize, stops: Vec<usize>, seed: u64) -> Result<Self> {
        Self::init(d_in, stops, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    /// When set, [`encode`](Self::encode) L2-normalizes input rows before the forward pass.
    pub fn with_input_normalization(mut self, on: bool) -> Self {
        self.normalize_inputs = on;
        self
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn stops(&self) -> &[usize] {
        &self.stops
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn normalizes_inputs(&self) -> bool {
        self.normalize_inputs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn check_input<T: Scalar>(&self, z: &Matrix<T>) -> Result<()> {
        if z.dims() != self.d_in {
            return Err(Error::Dimension(format!(
                "decoder expects {} input dims, got {}",
                self.d_in,
                z.dims()
            )));
        }
        Ok(())
    }

    /// Pre-activation `Z Wᵀ + 1 bᵀ`, row-major `rows × d_out`.
    pub(crate) fn affine<T: Scalar>(&self, z: &Matrix<T>) -> Vec<f64> {
        let mut out = Vec::with_capacity(z.rows() * self.d_out);
        for row in z.iter_rows() {
            for (w, b) in self.weights.chunks_exact(self.d_in).zip(&self.bias) {
                let mut acc = 0.0f64;
                for (wi, zi) in w.iter().zip(row) {
                    acc += wi * zi.to_f64();
                }
                out.push(acc + b);
            }
        }
        out
    }

    /// Forward pass in f64, no input normalization.
    pub fn forward_f64<T: Scalar>(&self, z: &Matrix<T>) -> Result<Matrix<f64>> {
        self.check_input(z)?;
        let mut h = self.affine(z);
        if self.activation != Activation::Identity {
            for v in &mut h {
                *v = self.activation.apply(*v);
            }
        }
        Matrix::new(z.rows(), self.d_out, h)
    }

    /// Forward pass rounded to 32-bit storage, no input normalization.
    pub fn forward<T: Scalar>(&self, z: &Matrix<T>) -> Result<EmbeddingMatrix> {
        self.forward_f64(z)?.convert()
    }

    /// Applies the model's input policy, the forward pass, and optional
    /// truncation to the first `stop` outputs.
    pub fn encode(&self, z: &EmbeddingMatrix, stop: Option<usize>) -> Result<EmbeddingMatrix> {
        if let Some(k) = stop {
            if k == 0 || k > self.d_out {
                return Err(Error::Dimension(format!(
                    "stop {k} outside 1..={}",
                    self.d_out
                )));
            }
        }
        let h = if self.normalize_inputs {
            self.forward(&z.l2_normalize_rows()?)?
        } else {
            self.forward(z)?
        };
        match stop {
            Some(k) => h.truncate(k),
            None => Ok(h),
        }
    }

    /// Chains `grad` (w.r.t. outputs `h`) through the activation.
    pub(crate) fn apply_activation_grad(&self, h: &[f64], grad: &mut [f64]) {
        if self.activation == Activation::Tanh {
            for (g, y) in grad.iter_mut().zip(h) {
                *g *= 1.0 - y * y;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_reproduce_input() {
        let mut w = vec![0.0; 9];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let model = DecoderModel::new(3, w, vec![0.0; 3], vec![3]).unwrap();
        let z = EmbeddingMatrix::from_rows(&[[1.0f32, -2.0, 0.5], [0.0, 3.0, 4.0]]).unwrap();
        assert_eq!(model.forward(&z).unwrap(), z);
    }

    #[test]
    fn hand_affine_example() {
        let model = DecoderModel::new(2, vec![1., 0., 0., 2.], vec![1., 0.], vec![2]).unwrap();
        let z = EmbeddingMatrix::from_rows(&[[3.0f32, 4.0]]).unwrap();
        assert_eq!(model.forward(&z).unwrap().as_slice(), &[4.0, 8.0]);
    }

    #[test]
    fn zero_row_forward_and_dim_errors() {
        let model = DecoderModel::init_seeded(4, vec![2, 3], 1).unwrap();
        let h = model.forward(&EmbeddingMatrix::zeros(0, 4)).unwrap();
        assert_eq!((h.rows(), h.dims()), (0, 3));
        assert!(matches!(
            model.forward(&EmbeddingMatrix::zeros(1, 5)),
            Err(Error::Dimension(_))
        ));
        assert!(model
            .encode(&EmbeddingMatrix::zeros(1, 4), Some(4))
            .is_err());
    }

    #[test]
    fn stop_validation() {
        assert!(validate_stops(&DEFAULT_STOPS, 768).is_ok());
        assert!(validate_stops(&WIDE_STOPS, 1024).is_ok());
        assert!(validate_stops(&[], 4).is_err());
        assert!(validate_stops(&[2, 2, 4], 4).is_err());
        assert!(validate_stops(&[2, 3], 4).is_err());
        assert!(validate_stops(&[0, 4], 4).is_err());
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let a = DecoderModel::init_seeded(16, vec![4, 8], 9).unwrap();
        let b = DecoderModel::init_seeded(16, vec![4, 8], 9).unwrap();
        assert_eq!(a, b);
        assert!(a.weights().iter().all(|w| w.abs() <= 0.25));
        assert!(a.bias().iter().all(|&b| b == 0.0));
        assert_eq!(a.parameter_count(), 16 * 8 + 8);
    }

    #[test]
    fn tanh_activation_is_applied() {
        let model = DecoderModel::new(1, vec![1.0], vec![0.0], vec![1])
            .unwrap()
            .with_activation(Activation::Tanh);
        let z = Matrix::from_rows(&[[0.5f64]]).unwrap();
        assert_eq!(model.forward_f64(&z).unwrap().get(0, 0), 0.5f64.tanh());
    }
}
