use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{mrl_loss, mrl_loss_grad, validate_stops, Activation, Checkpoint, DecoderModel};
use crate::error::{Error, Result};
use crate::linalg::{EmbeddingMatrix, Matrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
    Sgd {
        momentum: f64,
    },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Fraction of rows held out; the best held-out epoch is returned.
    pub validation_fraction: f64,
    /// L2-normalize corpus rows before training (and at encode time).
    pub normalize_inputs: bool,
    pub activation: Activation,
    /// An epoch whose mean loss exceeds this multiple of the first batch
    /// loss counts as divergence.
    pub divergence_ratio: f64,
    /// A single update whose norm exceeds this multiple of the parameter
    /// norm counts as divergence.
    pub max_update_ratio: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            epochs: 100,
            learning_rate: 1e-3,
            optimizer: Optimizer::default(),
            seed: 0,
            validation_fraction: 0.05,
            normalize_inputs: true,
            activation: Activation::Identity,
            divergence_ratio: 4.0,
            max_update_ratio: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Validation(format!(
                "batch size {} < 2; the pairwise loss needs two rows",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Validation(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Validation(format!(
                "validation fraction {} outside [0, 1)",
                self.validation_fraction
            )));
        }
        if self.divergence_ratio.is_nan() || self.divergence_ratio <= 1.0 {
            return Err(Error::Validation("divergence ratio must exceed 1".into()));
        }
        if self.max_update_ratio.is_nan() || self.max_update_ratio <= 0.0 {
            return Err(Error::Validation(
                "max update ratio must be positive".into(),
            ));
        }
        match self.optimizer {
            Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || epsilon <= 0.0 {
                    return Err(Error::Validation(
                        "adam needs betas in [0,1), epsilon > 0".into(),
                    ));
                }
            }
            Optimizer::Sgd { momentum } => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(Error::Validation("momentum must lie in [0,1)".into()));
                }
            }
        }
        Ok(())
    }
}

/// One line of training progress.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

impl std::fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "epoch={}\ttrain_loss={:.8}", self.epoch, self.train_loss)?;
        match self.val_loss {
            Some(v) => write!(f, "\tval_loss={v:.8}"),
            None => write!(f, "\tval_loss=NA"),
        }
    }
}

struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    step: i32,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl OptimizerState {
    fn new(kind: Optimizer, lr: f64, n: usize) -> Self {
        let second = match kind {
            Optimizer::Adam { .. } => vec![0.0; n],
            Optimizer::Sgd { .. } => Vec::new(),
        };
        Self {
            kind,
            lr,
            step: 0,
            first: vec![0.0; n],
            second,
        }
    }

    /// Updates `params` in place; `grads` are laid out the same way.
    /// Returns the squared norms of the parameters before the update and of
    /// the update itself.
    fn step<'a>(
        &mut self,
        params: impl Iterator<Item = &'a mut f64>,
        grads: impl Iterator<Item = f64>,
    ) -> (f64, f64) {
        self.step += 1;
        let (mut before, mut moved) = (0.0, 0.0);
        let mut apply = |p: &mut f64, delta: f64| {
            before += *p * *p;
            moved += delta * delta;
            *p -= delta;
        };
        match self.kind {
            Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                let c1 = 1.0 - beta1.powi(self.step);
                let c2 = 1.0 - beta2.powi(self.step);
                for (((p, g), m), v) in params
                    .zip(grads)
                    .zip(self.first.iter_mut())
                    .zip(self.second.iter_mut())
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    apply(p, self.lr * (*m / c1) / ((*v / c2).sqrt() + epsilon));
                }
            }
            Optimizer::Sgd { momentum } => {
                for ((p, g), vel) in params.zip(grads).zip(self.first.iter_mut()) {
                    *vel = momentum * *vel + g;
                    apply(p, self.lr * *vel);
                }
            }
        }
        (before, moved)
    }
}

fn batches(indices: &[usize], batch_size: usize) -> impl Iterator<Item = &[usize]> {
    indices.chunks(batch_size).filter(|c| c.len() >= 2)
}

fn held_out_loss(
    model: &DecoderModel,
    data: &Matrix<f64>,
    rows: &[usize],
    batch: usize,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for chunk in batches(rows, batch) {
        sum += mrl_loss(model, &data.select_rows(chunk))?;
        count += 1;
    }
    Ok(sum / count.max(1) as f64)
}

/// Trains a decoder whose output width is the last stop.
pub fn train(
    corpus: &EmbeddingMatrix,
    config: &TrainConfig,
    stops: &[usize],
) -> Result<Checkpoint> {
    train_with_progress(corpus, config, stops, |_| {})
}

/// [`train`], reporting each finished epoch to `on_epoch`.
///
/// Everything random (initialization, validation split, batch order) comes
/// from one ChaCha8 stream seeded by `config.seed`, so identical inputs give
/// bit-identical checkpoints.
pub fn train_with_progress(
    corpus: &EmbeddingMatrix,
    config: &TrainConfig,
    stops: &[usize],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Checkpoint> {
    config.validate()?;
    let d_out = *stops
        .last()
        .ok_or_else(|| Error::Validation("stop list is empty".into()))?;
    validate_stops(stops, d_out)?;
    let n = corpus.rows();
    if n < 2 * config.batch_size {
        return Err(Error::InsufficientData(format!(
            "corpus has {n} rows, need at least {} (twice the batch size)",
            2 * config.batch_size
        )));
    }

    let data: Matrix<f64> = if config.normalize_inputs {
        corpus.l2_normalize_rows()?.convert()?
    } else {
        corpus.convert()?
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = DecoderModel::init(corpus.dims(), stops.to_vec(), &mut rng)?
        .with_activation(config.activation)
        .with_input_normalization(config.normalize_inputs);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = if config.validation_fraction > 0.0 {
        ((n as f64 * config.validation_fraction).round() as usize).max(2)
    } else {
        0
    };
    let (val_rows, train_rows) = order.split_at(n_val);
    let val_rows = val_rows.to_vec();
    let mut train_rows = train_rows.to_vec();

    let mut opt = OptimizerState::new(
        config.optimizer,
        config.learning_rate,
        model.parameter_count(),
    );
    let mut train_hist = Vec::with_capacity(config.epochs);
    let mut val_hist = Vec::new();
    let mut best: Option<(f64, usize, DecoderModel)> = None;
    let mut reference: Option<f64> = None;

    for epoch in 1..=config.epochs {
        train_rows.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0usize;
        for chunk in batches(&train_rows, config.batch_size) {
            let batch = data.select_rows(chunk);
            let grad = mrl_loss_grad(&model, &batch).map_err(|e| match e {
                Error::ZeroVector(what) => Error::Diverged {
                    epoch,
                    reason: format!("{what} collapsed to zero"),
                },
                other => other,
            })?;
            if !grad.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: "non-finite loss or gradient".into(),
                });
            }
            reference.get_or_insert(grad.loss);
            sum += grad.loss;
            count += 1;
            let (w, b) = (grad.weights, grad.bias);
            let (mw, mb) = (model.weights.iter_mut(), model.bias.iter_mut());
            let (before, moved) = opt.step(mw.chain(mb), w.into_iter().chain(b));
            let ratio = (moved / before.max(f64::MIN_POSITIVE)).sqrt();
            if ratio.is_nan() || ratio > config.max_update_ratio {
                return Err(Error::Diverged {
                    epoch,
                    reason: format!(
                        "update norm is {ratio:.3e} times the parameter norm (limit {})",
                        config.max_update_ratio
                    ),
                });
            }
        }
        if model
            .weights
            .iter()
            .chain(&model.bias)
            .any(|p| !p.is_finite())
        {
            return Err(Error::Diverged {
                epoch,
                reason: "non-finite parameters".into(),
            });
        }
        let train_loss = sum / count.max(1) as f64;
        let start = reference.unwrap_or(train_loss).max(1e-6);
        if !train_loss.is_finite() || train_loss > config.divergence_ratio * start {
            return Err(Error::Diverged {
                epoch,
                reason: format!("mean loss {train_loss:.6} against initial {start:.6}"),
            });
        }
        train_hist.push(train_loss);

        let val_loss = if val_rows.is_empty() {
            None
        } else {
            let v = held_out_loss(&model, &data, &val_rows, config.batch_size)?;
            val_hist.push(v);
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, epoch, model.clone()));
            }
            Some(v)
        };
        on_epoch(&EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
    }

    let (model, best_epoch) = match best {
        Some((_, epoch, m)) => (m, epoch),
        None => (model, config.epochs),
    };
    Ok(Checkpoint {
        model,
        train_loss_history: train_hist,
        val_loss_history: val_hist,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn small_config() -> TrainConfig {
        TrainConfig {
            batch_size: 32,
            epochs: 5,
            learning_rate: 1e-2,
            validation_fraction: 0.1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn same_seed_gives_identical_checkpoints() {
        let corpus = synth::low_rank_corpus(200, 16, 4, 3);
        let a = train(&corpus, &small_config(), &[4, 8]).unwrap();
        let b = train(&corpus, &small_config(), &[4, 8]).unwrap();
        assert_eq!(a, b);
        let mut ba = Vec::new();
        let mut bb = Vec::new();
        a.encode(&mut ba).unwrap();
        b.encode(&mut bb).unwrap();
        assert_eq!(ba, bb);
        assert_eq!(a.train_loss_history.len(), 5);
        assert_eq!(a.val_loss_history.len(), 5);
    }

    #[test]
    fn progress_records_every_epoch() {
        let corpus = synth::low_rank_corpus(100, 8, 2, 1);
        let mut seen = Vec::new();
        let cfg = TrainConfig {
            validation_fraction: 0.0,
            ..small_config()
        };
        let ckpt = train_with_progress(&corpus, &cfg, &[2, 4], |r| seen.push(*r)).unwrap();
        assert_eq!(seen.len(), 5);
        assert!(seen.iter().all(|r| r.val_loss.is_none()));
        assert_eq!(ckpt.best_epoch, 5);
        assert!(seen[0].to_string().starts_with("epoch=1\ttrain_loss="));
    }

    #[test]
    fn rejects_bad_inputs() {
        let corpus = synth::low_rank_corpus(50, 8, 2, 1);
        let err = train(&corpus, &small_config(), &[2, 4]).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
        let cfg = TrainConfig {
            batch_size: 1,
            ..small_config()
        };
        assert!(matches!(
            train(&corpus, &cfg, &[4]),
            Err(Error::Validation(_))
        ));
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..small_config()
        };
        assert!(train(&corpus, &cfg, &[4]).is_err());
        assert!(train(
            &corpus,
            &TrainConfig {
                batch_size: 4,
                ..small_config()
            },
            &[4, 3]
        )
        .is_err());
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let corpus = synth::gaussian(512, 32, 7);
        let cfg = TrainConfig {
            batch_size: 64,
            epochs: 20,
            learning_rate: 1e3,
            ..TrainConfig::default()
        };
        match train(&corpus, &cfg, &[4, 16]) {
            Err(e @ Error::Diverged { .. }) => {
                assert_eq!(e.exit_code(), 2);
                assert!(e.to_string().contains("epoch 1"), "{e}");
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn sgd_reduces_loss() {
        let corpus = synth::low_rank_corpus(256, 16, 4, 5);
        let cfg = TrainConfig {
            optimizer: Optimizer::Sgd { momentum: 0.9 },
            learning_rate: 0.05,
            epochs: 30,
            ..small_config()
        };
        let ckpt = train(&corpus, &cfg, &[4, 8]).unwrap();
        let h = &ckpt.train_loss_history;
        assert!(h.last().unwrap() < &h[0]);
    }
}
