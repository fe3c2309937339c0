//! Fuse embedding spaces by concatenation, compress them with a
//! Matryoshka-trained linear decoder, quantize with per-dimension percentile
//! break-points, and measure nDCG@10 against raw, truncated and LSH
//! baselines.
//!
//! Each capability has a runnable program under `examples/`; the `embfuse`
//! binary wires the same pieces into pipeline-stage subcommands.

pub mod cli;
pub mod decoder;
pub mod embio;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod lsh;
pub mod quantizer;
pub mod synth;

pub use decoder::{Checkpoint, DecoderModel, TrainConfig};
pub use embio::{Qrels, RunFile};
pub use error::{Error, Result};
pub use eval::{EvalReport, RetrievalTask, Transform};
pub use linalg::{EmbeddingMatrix, Matrix};
pub use lsh::{BitCodes, LshProjector};
pub use quantizer::{QuantizedCodes, QuantizerCalibration};
