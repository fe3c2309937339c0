//! EMBD checkpoint files.
//!
//! ```text
//! magic "EMBD" | version u32 | d_in u32 | d_out u32 | activation u8 | normalize_inputs u8
//! | stop_count u32 | stops u32 * stop_count
//! | weights f64 * (d_out * d_in), row-major | bias f64 * d_out
//! | train_len u32 | train_loss f64 * train_len
//! | val_len u32 | val_loss f64 * val_len | best_epoch u32
//! ```
//!
//! All integers and floats little-endian. Parameters are stored as f64 so
//! a checkpoint reloads bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use super::{Activation, DecoderModel};
use crate::embio::{
    expect_eof, open, read_f64, read_magic, read_u32, read_u8, read_version, with_writer,
    FORMAT_VERSION,
};
use crate::error::{Error, Result};

pub const EMBD_MAGIC: [u8; 4] = *b"EMBD";

/// A trained decoder with its loss history.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: DecoderModel,
    /// Mean training loss per epoch.
    pub train_loss_history: Vec<f64>,
    /// Held-out loss per epoch; empty when no validation split was used.
    pub val_loss_history: Vec<f64>,
    /// 1-based epoch whose parameters were kept (0 if no epoch ran).
    pub best_epoch: usize,
}

impl Checkpoint {
    pub fn from_model(model: DecoderModel) -> Self {
        Self {
            model,
            train_loss_history: Vec::new(),
            val_loss_history: Vec::new(),
            best_epoch: 0,
        }
    }

    pub fn encode(&self, w: &mut impl Write) -> std::io::Result<()> {
        let m = &self.model;
        w.write_all(&EMBD_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(m.d_in() as u32).to_le_bytes())?;
        w.write_all(&(m.d_out() as u32).to_le_bytes())?;
        w.write_all(&[m.activation().code(), m.normalizes_inputs() as u8])?;
        w.write_all(&(m.stops().len() as u32).to_le_bytes())?;
        for &s in m.stops() {
            w.write_all(&(s as u32).to_le_bytes())?;
        }
        for v in m.weights().iter().chain(m.bias()) {
            w.write_all(&v.to_le_bytes())?;
        }
        for hist in [&self.train_loss_history, &self.val_loss_history] {
            w.write_all(&(hist.len() as u32).to_le_bytes())?;
            for v in hist {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.write_all(&(self.best_epoch as u32).to_le_bytes())
    }

    pub fn decode(r: &mut impl Read) -> Result<Self> {
        read_magic(r, EMBD_MAGIC)?;
        read_version(r)?;
        let d_in = read_u32(r, "d_in")? as usize;
        let d_out = read_u32(r, "d_out")? as usize;
        let activation = Activation::from_code(read_u8(r, "activation")?)?;
        let normalize = match read_u8(r, "normalize flag")? {
            0 => false,
            1 => true,
            v => return Err(Error::Corrupt(format!("normalize flag {v}"))),
        };
        let n_stops = read_u32(r, "stop count")? as usize;
        if n_stops > d_out {
            return Err(Error::Corrupt(format!(
                "{n_stops} stops for {d_out} outputs"
            )));
        }
        let stops = (0..n_stops)
            .map(|_| read_u32(r, "stops").map(|s| s as usize))
            .collect::<Result<Vec<_>>>()?;
        let weights = read_f64s(r, d_out * d_in, "weights")?;
        let bias = read_f64s(r, d_out, "bias")?;
        let model = DecoderModel::new(d_in, weights, bias, stops)
            .map_err(|e| Error::Corrupt(e.to_string()))?
            .with_activation(activation)
            .with_input_normalization(normalize);
        let n = read_u32(r, "history length")? as usize;
        let train_loss_history = read_f64s(r, n, "train history")?;
        let n = read_u32(r, "history length")? as usize;
        let val_loss_history = read_f64s(r, n, "validation history")?;
        let best_epoch = read_u32(r, "best epoch")? as usize;
        expect_eof(r)?;
        Ok(Self {
            model,
            train_loss_history,
            val_loss_history,
            best_epoch,
        })
    }
}

fn read_f64s(r: &mut impl Read, n: usize, what: &str) -> Result<Vec<f64>> {
    (0..n).map(|_| read_f64(r, what)).collect()
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    with_writer(path.as_ref(), |w| ckpt.encode(w))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    Checkpoint::decode(&mut open(path)?).map_err(|e| match e {
        Error::Io { .. } => e,
        other => other.in_stage(path.display().to_string()),
    })
}
