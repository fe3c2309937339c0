use std::fmt;

use super::ndcg::{ndcg_at_k_with, EvalReport, Gain};
use super::search::{search, CosineScorer, HammingScorer, RetrievalTask};
use crate::decoder::DecoderModel;
use crate::embio::RunFile;
use crate::error::{Error, Result};
use crate::linalg::EmbeddingMatrix;
use crate::lsh::{BitCodes, LshProjector};
use crate::quantizer::QuantizerCalibration;

/// Embeddings as they flow through a transform chain.
#[derive(Debug, Clone)]
pub enum Representation {
    Dense(EmbeddingMatrix),
    Bits(BitCodes),
}

impl Representation {
    fn dense(self, stage: &str) -> Result<EmbeddingMatrix> {
        match self {
            Representation::Dense(m) => Ok(m),
            Representation::Bits(_) => Err(Error::Validation(format!(
                "`{stage}` needs dense input but received bit codes"
            ))),
        }
    }
}

/// One stage of a representation pipeline.
#[derive(Debug, Clone)]
pub enum Transform {
    Raw,
    Truncate(usize),
    Decoder {
        model: DecoderModel,
        stop: Option<usize>,
    },
    /// Quantize then score on bucket representatives.
    Quantize(QuantizerCalibration),
    Lsh(LshProjector),
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::Raw => write!(f, "raw"),
            Transform::Truncate(k) => write!(f, "trunc[:{k}]"),
            Transform::Decoder {
                model,
                stop: Some(k),
            } => write!(f, "dec{}[:{k}]", model.d_out()),
            Transform::Decoder { model, stop: None } => write!(f, "dec{}", model.d_out()),
            Transform::Quantize(cal) => write!(f, "q{}", cal.bits()),
            Transform::Lsh(p) => write!(f, "lsh{}", p.d_proj()),
        }
    }
}

impl Transform {
    pub fn apply(&self, input: Representation) -> Result<Representation> {
        let stage = self.to_string();
        let out = match self {
            Transform::Raw => Ok(input),
            Transform::Truncate(k) => input.dense(&stage)?.truncate(*k).map(Representation::Dense),
            Transform::Decoder { model, stop } => model
                .encode(&input.dense(&stage)?, *stop)
                .map(Representation::Dense),
            Transform::Quantize(cal) => {
                let m = input.dense(&stage)?;
                cal.quantize(&m)
                    .and_then(|q| cal.dequantize(&q))
                    .map(Representation::Dense)
            }
            Transform::Lsh(p) => p
                .project_and_binarize(&input.dense(&stage)?)
                .map(Representation::Bits),
        };
        out.map_err(|e| e.in_stage(stage))
    }
}

/// Human-readable chain label, e.g. `dec768[:384]+q4`.
pub fn chain_label(chain: &[Transform]) -> String {
    if chain.is_empty() {
        return Transform::Raw.to_string();
    }
    chain
        .iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join("+")
}

/// Applies the chain to a single matrix.
pub fn apply_chain(chain: &[Transform], m: &EmbeddingMatrix) -> Result<Representation> {
    chain
        .iter()
        .try_fold(Representation::Dense(m.clone()), |rep, t| t.apply(rep))
}

/// Transforms queries and documents alike, then searches exhaustively.
pub fn run_pipeline(task: &RetrievalTask, chain: &[Transform]) -> Result<RunFile> {
    let label = chain_label(chain);
    let queries = apply_chain(chain, &task.queries).map_err(|e| e.in_stage("queries"))?;
    let docs = apply_chain(chain, &task.docs).map_err(|e| e.in_stage("documents"))?;
    match (&queries, &docs) {
        (Representation::Dense(q), Representation::Dense(d)) => {
            let scorer = CosineScorer::new(q, d)?;
            search(&task.query_ids, &task.doc_ids, &scorer, task.k, &label)
        }
        (Representation::Bits(q), Representation::Bits(d)) => {
            let scorer = HammingScorer::new(q, d)?;
            search(&task.query_ids, &task.doc_ids, &scorer, task.k, &label)
        }
        _ => unreachable!("queries and documents pass through the same chain"),
    }
}

/// Runs the chain on the task and scores nDCG@k with linear gains.
pub fn evaluate_pipeline(task: &RetrievalTask, chain: &[Transform]) -> Result<EvalReport> {
    evaluate_pipeline_with(task, chain, Gain::Linear)
}

pub fn evaluate_pipeline_with(
    task: &RetrievalTask,
    chain: &[Transform],
    gain: Gain,
) -> Result<EvalReport> {
    let run = run_pipeline(task, chain)?;
    Ok(ndcg_at_k_with(&run, &task.qrels, task.k, gain)?
        .labeled(task.name.clone(), chain_label(chain)))
}
