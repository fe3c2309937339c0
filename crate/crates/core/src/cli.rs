//! `embfuse` command-line surface: one subcommand per pipeline stage.
//!
//! Exit codes: 0 ok, 1 usage or validation, 2 numeric failure, 3 I/O.
//! Settings come from an optional TOML file (`--config`); flags override it.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::decoder::{
    read_checkpoint, train_with_progress, write_checkpoint, Activation, Optimizer, TrainConfig,
    DEFAULT_STOPS,
};
use crate::embio::{read_embeddings, read_ids, read_qrels, write_embeddings, write_run};
use crate::error::{Error, Result};
use crate::eval::{
    chain_label, ndcg_at_k_with, run_pipeline, summary_tsv, Gain, RetrievalTask, Transform,
};
use crate::linalg::{concat, concat_normalized};
use crate::lsh::{read_projector, write_bit_codes, write_projector, LshProjector};
use crate::quantizer::{
    read_calibration, write_calibration, write_quantized, QuantizerCalibration,
};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "EMBFUSE_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "embfuse",
    version,
    about = "Concatenate, compress, quantize and evaluate embeddings"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Concatenate EMBF matrices column-wise (same rows, in order).
    Concat(ConcatArgs),
    /// Train a decoder on a corpus and write an EMBD checkpoint.
    Train(TrainArgs),
    /// Run a checkpoint over an EMBF file, optionally truncating the output.
    Encode(EncodeArgs),
    /// Learn per-dimension percentile break-points from a reference set.
    Calibrate(CalibrateArgs),
    /// Map embeddings to b-bit codes with a calibration file.
    Quantize(QuantizeArgs),
    /// Random-projection LSH to packed sign bits.
    Lsh(LshArgs),
    /// Retrieve with a transform chain and report nDCG@k.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct ConcatArgs {
    /// Input EMBF file; repeat for each source, in order.
    #[arg(short, long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    /// Output EMBF file.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Keep raw vectors instead of L2-normalizing each source first.
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training corpus (EMBF); overrides `paths.corpus`.
    #[arg(short, long)]
    pub input: Option<PathBuf>,
    /// Output checkpoint (EMBD); overrides `paths.checkpoint`.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// TOML pipeline config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Matryoshka stops, comma separated; the last one is the output width.
    #[arg(long, value_delimiter = ',')]
    pub stops: Option<Vec<usize>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerKind>,
    /// Fraction of rows held out to pick the best epoch.
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    /// Train on raw rows instead of L2-normalized ones.
    #[arg(long)]
    pub no_normalize: bool,
    #[arg(long, value_enum)]
    pub activation: Option<ActivationKind>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Decoder checkpoint (EMBD).
    #[arg(short, long)]
    pub checkpoint: PathBuf,
    /// Input EMBF file.
    #[arg(short, long)]
    pub input: PathBuf,
    /// Output EMBF file.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Keep only the first STOP output dimensions.
    #[arg(long)]
    pub stop: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Reference EMBF file (typically decoder outputs).
    #[arg(short, long)]
    pub input: Option<PathBuf>,
    /// Output calibration file (EMBC).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Bits per dimension (1..=8).
    #[arg(long)]
    pub bits: Option<u8>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    /// Calibration file (EMBC).
    #[arg(long)]
    pub calibration: PathBuf,
    /// Input EMBF file.
    #[arg(short, long)]
    pub input: PathBuf,
    /// Output codes (EMBQ).
    #[arg(short, long)]
    pub output: PathBuf,
    /// Also write the dequantized matrix (EMBF) here.
    #[arg(long)]
    pub reconstruct: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LshArgs {
    /// Input EMBF file.
    #[arg(short, long)]
    pub input: PathBuf,
    /// Output sign codes (EMBQ, 1 bit).
    #[arg(short, long)]
    pub output: PathBuf,
    /// Number of projections (bits per row).
    #[arg(long)]
    pub dproj: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the projector descriptor (EMBL) here.
    #[arg(long)]
    pub projector: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Document embeddings (EMBF).
    #[arg(long)]
    pub docs: Option<PathBuf>,
    /// Document ids, one per line, matching EMBF rows.
    #[arg(long)]
    pub doc_ids: Option<PathBuf>,
    /// Query embeddings (EMBF).
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Query ids, one per line.
    #[arg(long)]
    pub query_ids: Option<PathBuf>,
    /// TREC qrels (`qid 0 docid rel`).
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    /// Comma-separated chain: raw, trunc:K, dec:CKPT[@STOP], quant:EMBC, lsh:EMBL or lsh:DPROJ.
    #[arg(long)]
    pub transform: Option<String>,
    /// nDCG cutoff.
    #[arg(long)]
    pub k: Option<usize>,
    /// Seed for `lsh:DPROJ` stages.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Task name for the report.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long, value_enum, default_value_t = GainKind::Linear)]
    pub gain: GainKind,
    /// Summary TSV; printed to stdout when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Append to the summary TSV instead of overwriting it.
    #[arg(long)]
    pub append: bool,
    /// Per-query TSV output.
    #[arg(long)]
    pub per_query: Option<PathBuf>,
    /// TREC run file output.
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Identity,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GainKind {
    Linear,
    Exponential,
}

// ---------------------------------------------------------------------------
// config file

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub quantize: QuantizeSection,
    #[serde(default)]
    pub lsh: LshSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub paths: PathsSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub stops: Option<Vec<usize>>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub optimizer: Option<OptimizerKind>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub epsilon: Option<f64>,
    pub momentum: Option<f64>,
    pub seed: Option<u64>,
    pub validation_fraction: Option<f64>,
    pub normalize_inputs: Option<bool>,
    pub activation: Option<ActivationKind>,
    pub divergence_ratio: Option<f64>,
    pub max_update_ratio: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizeSection {
    pub bits: Option<u8>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LshSection {
    pub dproj: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub k: Option<usize>,
    pub task: Option<String>,
    pub transform: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub corpus: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub docs: Option<PathBuf>,
    pub doc_ids: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub query_ids: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                require_file(p)?;
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::parse(&text).map_err(|e| e.in_stage(p.display().to_string()))
            }
        }
    }

    /// Training settings from the `[train]` section on top of the defaults.
    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        let d = TrainConfig::default();
        let optimizer = match t.optimizer.unwrap_or(OptimizerKind::Adam) {
            OptimizerKind::Adam => Optimizer::Adam {
                beta1: t.beta1.unwrap_or(0.9),
                beta2: t.beta2.unwrap_or(0.999),
                epsilon: t.epsilon.unwrap_or(1e-8),
            },
            OptimizerKind::Sgd => Optimizer::Sgd {
                momentum: t.momentum.unwrap_or(0.9),
            },
        };
        TrainConfig {
            batch_size: t.batch_size.unwrap_or(d.batch_size),
            epochs: t.epochs.unwrap_or(d.epochs),
            learning_rate: t.learning_rate.unwrap_or(d.learning_rate),
            optimizer,
            seed: t.seed.unwrap_or(d.seed),
            validation_fraction: t.validation_fraction.unwrap_or(d.validation_fraction),
            normalize_inputs: t.normalize_inputs.unwrap_or(d.normalize_inputs),
            activation: t.activation.map_or(d.activation, ActivationKind::into),
            divergence_ratio: t.divergence_ratio.unwrap_or(d.divergence_ratio),
            max_update_ratio: t.max_update_ratio.unwrap_or(d.max_update_ratio),
        }
    }
}

impl From<ActivationKind> for Activation {
    fn from(k: ActivationKind) -> Self {
        match k {
            ActivationKind::Identity => Activation::Identity,
            ActivationKind::Tanh => Activation::Tanh,
        }
    }
}

// ---------------------------------------------------------------------------
// path checks

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
        ))
    }
}

fn require_output(path: &Path) -> Result<()> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
    match parent {
        Some(dir) if !dir.is_dir() => Err(Error::io(
            path,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "output directory does not exist",
            ),
        )),
        _ => Ok(()),
    }
}

fn pick(flag: Option<PathBuf>, config: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| config.clone()).ok_or_else(|| {
        Error::Config(format!(
            "missing {name}: pass the flag or set it in the config"
        ))
    })
}

fn say(out: &mut dyn Write, line: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

// ---------------------------------------------------------------------------
// transform chains

/// Parses a comma-separated transform chain, loading referenced files.
pub fn parse_chain(text: &str, lsh_seed: u64) -> Result<Vec<Transform>> {
    let mut chain = Vec::new();
    for stage in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (kind, arg) = stage.split_once(':').unwrap_or((stage, ""));
        let bad = |msg: &str| Error::Config(format!("transform stage `{stage}`: {msg}"));
        let t = match kind {
            "raw" if arg.is_empty() => Transform::Raw,
            "trunc" => Transform::Truncate(arg.parse().map_err(|_| bad("expected trunc:K"))?),
            "dec" => {
                let (path, stop) = match arg.rsplit_once('@') {
                    Some((p, s)) => (
                        p,
                        Some(s.parse().map_err(|_| bad("expected dec:PATH@STOP"))?),
                    ),
                    None => (arg, None),
                };
                if path.is_empty() {
                    return Err(bad("missing checkpoint path"));
                }
                require_file(Path::new(path))?;
                let model = read_checkpoint(path)?.model;
                if let Some(k) = stop {
                    if k == 0 || k > model.d_out() {
                        return Err(Error::Dimension(format!(
                            "stop {k} outside 1..={} for {path}",
                            model.d_out()
                        )));
                    }
                }
                Transform::Decoder { model, stop }
            }
            "quant" => {
                require_file(Path::new(arg))?;
                Transform::Quantize(read_calibration(arg)?)
            }
            "lsh" => match arg.parse::<usize>() {
                // input width is filled in by `resolve_lsh`
                Ok(dproj) => Transform::Lsh(LshProjector::new(1, dproj, lsh_seed)?),
                Err(_) => {
                    require_file(Path::new(arg))?;
                    Transform::Lsh(read_projector(arg)?)
                }
            },
            _ => return Err(bad("unknown stage")),
        };
        chain.push(t);
    }
    if chain.is_empty() {
        chain.push(Transform::Raw);
    }
    Ok(chain)
}

/// Width of the representation entering each stage, used to size inline LSH stages.
fn resolve_lsh(chain: &mut [Transform], input_dims: usize, inline: &[bool]) -> Result<()> {
    let mut dims = input_dims;
    for (t, &is_inline) in chain.iter_mut().zip(inline) {
        match t {
            Transform::Lsh(p) if is_inline => {
                *p = LshProjector::new(dims, p.d_proj(), p.seed())?;
            }
            Transform::Truncate(k) => dims = *k,
            Transform::Decoder { model, stop } => dims = stop.unwrap_or(model.d_out()),
            _ => {}
        }
    }
    Ok(())
}

fn inline_lsh_flags(text: &str) -> Vec<bool> {
    let flags: Vec<bool> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.strip_prefix("lsh:")
                .is_some_and(|a| a.parse::<usize>().is_ok())
        })
        .collect();
    if flags.is_empty() {
        vec![false]
    } else {
        flags
    }
}

// ---------------------------------------------------------------------------
// commands

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Concat(a) => cmd_concat(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Encode(a) => cmd_encode(a, out),
        Command::Calibrate(a) => cmd_calibrate(a, out),
        Command::Quantize(a) => cmd_quantize(a, out),
        Command::Lsh(a) => cmd_lsh(a, out),
        Command::Eval(a) => cmd_eval(a, out),
    }
}

pub fn cmd_concat(a: ConcatArgs, out: &mut dyn Write) -> Result<()> {
    for p in &a.inputs {
        require_file(p)?;
    }
    require_output(&a.output)?;
    let parts = a
        .inputs
        .iter()
        .map(read_embeddings)
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<_> = parts.iter().collect();
    let joined = if a.no_normalize {
        concat(&refs)?
    } else {
        concat_normalized(&refs)?
    };
    write_embeddings(&joined, &a.output)?;
    say(
        out,
        format!("rows={}\tdims={}", joined.rows(), joined.dims()),
    )
}

pub fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = PipelineConfig::load(a.config.as_deref())?;
    let corpus_path = pick(a.input, &cfg.paths.corpus, "corpus (--input)")?;
    let ckpt_path = pick(a.output, &cfg.paths.checkpoint, "checkpoint (--output)")?;
    require_file(&corpus_path)?;
    require_output(&ckpt_path)?;

    let mut tc = cfg.train_config();
    if let Some(v) = a.seed {
        tc.seed = v;
    }
    if let Some(v) = a.epochs {
        tc.epochs = v;
    }
    if let Some(v) = a.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        tc.learning_rate = v;
    }
    if let Some(kind) = a.optimizer {
        tc.optimizer = match kind {
            OptimizerKind::Adam => Optimizer::default(),
            OptimizerKind::Sgd => Optimizer::Sgd {
                momentum: cfg.train.momentum.unwrap_or(0.9),
            },
        };
    }
    if let Some(v) = a.validation_fraction {
        tc.validation_fraction = v;
    }
    if a.no_normalize {
        tc.normalize_inputs = false;
    }
    if let Some(v) = a.activation {
        tc.activation = v.into();
    }
    let stops = a
        .stops
        .or_else(|| cfg.train.stops.clone())
        .unwrap_or_else(|| DEFAULT_STOPS.to_vec());
    tc.validate()?;

    let corpus = read_embeddings(&corpus_path)?;
    let mut log_err = None;
    let ckpt = train_with_progress(&corpus, &tc, &stops, |rec| {
        if let Err(e) = say(out, rec) {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e);
    }
    write_checkpoint(&ckpt, &ckpt_path)?;
    say(
        out,
        format!(
            "checkpoint={}\td_in={}\td_out={}\tbest_epoch={}",
            ckpt_path.display(),
            ckpt.model.d_in(),
            ckpt.model.d_out(),
            ckpt.best_epoch
        ),
    )
}

pub fn cmd_encode(a: EncodeArgs, out: &mut dyn Write) -> Result<()> {
    require_file(&a.checkpoint)?;
    require_file(&a.input)?;
    require_output(&a.output)?;
    let model = read_checkpoint(&a.checkpoint)?.model;
    if let Some(k) = a.stop {
        if k == 0 || k > model.d_out() {
            return Err(Error::Validation(format!(
                "--stop {k} outside 1..={} (checkpoint output width)",
                model.d_out()
            )));
        }
    }
    let h = model.encode(&read_embeddings(&a.input)?, a.stop)?;
    write_embeddings(&h, &a.output)?;
    say(out, format!("rows={}\tdims={}", h.rows(), h.dims()))
}

pub fn cmd_calibrate(a: CalibrateArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = PipelineConfig::load(a.config.as_deref())?;
    let input = pick(a.input, &cfg.paths.reference, "reference (--input)")?;
    let output = pick(a.output, &cfg.paths.calibration, "calibration (--output)")?;
    let bits = a
        .bits
        .or(cfg.quantize.bits)
        .ok_or_else(|| Error::Config("missing --bits".into()))?;
    require_file(&input)?;
    require_output(&output)?;
    let cal = QuantizerCalibration::calibrate(&read_embeddings(&input)?, bits)?;
    write_calibration(&cal, &output)?;
    say(out, format!("dims={}\tbits={}", cal.dims(), cal.bits()))
}

pub fn cmd_quantize(a: QuantizeArgs, out: &mut dyn Write) -> Result<()> {
    require_file(&a.calibration)?;
    require_file(&a.input)?;
    require_output(&a.output)?;
    if let Some(p) = &a.reconstruct {
        require_output(p)?;
    }
    let cal = read_calibration(&a.calibration)?;
    let codes = cal.quantize(&read_embeddings(&a.input)?)?;
    write_quantized(&codes, &a.output)?;
    if let Some(p) = &a.reconstruct {
        write_embeddings(&cal.dequantize(&codes)?, p)?;
    }
    say(
        out,
        format!(
            "rows={}\tdims={}\tbits={}\tcompression {:.1}x",
            codes.rows(),
            codes.dims(),
            codes.bits(),
            codes.compression_factor()
        ),
    )
}

pub fn cmd_lsh(a: LshArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = PipelineConfig::load(a.config.as_deref())?;
    let dproj = a
        .dproj
        .or(cfg.lsh.dproj)
        .ok_or_else(|| Error::Config("missing --dproj".into()))?;
    let seed = a.seed.or(cfg.lsh.seed).unwrap_or(0);
    require_file(&a.input)?;
    require_output(&a.output)?;
    if let Some(p) = &a.projector {
        require_output(p)?;
    }
    let m = read_embeddings(&a.input)?;
    let projector = LshProjector::new(m.dims(), dproj, seed)?;
    let codes = projector.project_and_binarize(&m)?;
    write_bit_codes(&codes, &a.output)?;
    if let Some(p) = &a.projector {
        write_projector(&projector, p)?;
    }
    say(
        out,
        format!(
            "rows={}\tbits={}\tcompression {:.1}x",
            codes.rows(),
            dproj,
            projector.compression_factor()
        ),
    )
}

pub fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = PipelineConfig::load(a.config.as_deref())?;
    let docs = pick(a.docs, &cfg.paths.docs, "--docs")?;
    let doc_ids = pick(a.doc_ids, &cfg.paths.doc_ids, "--doc-ids")?;
    let queries = pick(a.queries, &cfg.paths.queries, "--queries")?;
    let query_ids = pick(a.query_ids, &cfg.paths.query_ids, "--query-ids")?;
    let qrels = pick(a.qrels, &cfg.paths.qrels, "--qrels")?;
    let report_path = a.output.or(cfg.paths.report.clone());
    for p in [&docs, &doc_ids, &queries, &query_ids, &qrels] {
        require_file(p)?;
    }
    for p in [&report_path, &a.per_query, &a.run].into_iter().flatten() {
        require_output(p)?;
    }
    let k = a.k.or(cfg.eval.k).unwrap_or(crate::eval::DEFAULT_CUTOFF);
    let text = a
        .transform
        .or(cfg.eval.transform.clone())
        .unwrap_or_else(|| "raw".into());
    let seed = a.seed.or(cfg.lsh.seed).unwrap_or(0);
    let task_name = a
        .task
        .or(cfg.eval.task.clone())
        .unwrap_or_else(|| "task".into());
    let gain = match a.gain {
        GainKind::Linear => Gain::Linear,
        GainKind::Exponential => Gain::Exponential,
    };

    let mut chain = parse_chain(&text, seed)?;
    let task = RetrievalTask::new(
        task_name,
        read_embeddings(&queries)?,
        read_ids(&query_ids)?,
        read_embeddings(&docs)?,
        read_ids(&doc_ids)?,
        read_qrels(&qrels)?,
    )?
    .with_cutoff(k);
    resolve_lsh(&mut chain, task.docs.dims(), &inline_lsh_flags(&text))?;

    let run = run_pipeline(&task, &chain)?;
    let report =
        ndcg_at_k_with(&run, &task.qrels, k, gain)?.labeled(task.name.clone(), chain_label(&chain));
    if let Some(p) = &a.run {
        write_run(&run, p)?;
    }
    if let Some(p) = &a.per_query {
        std::fs::write(p, report.per_query_tsv()).map_err(|e| Error::io(p, e))?;
    }
    let tsv = summary_tsv(std::slice::from_ref(&report));
    match report_path {
        None => out
            .write_all(tsv.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
        Some(p) => {
            let append =
                a.append && p.is_file() && std::fs::metadata(&p).is_ok_and(|m| m.len() > 0);
            let body = if append {
                tsv.split_once('\n')
                    .map_or("", |(_, rows)| rows)
                    .to_string()
            } else {
                tsv.clone()
            };
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .write(true)
                .append(append)
                .truncate(!append)
                .open(&p)
                .map_err(|e| Error::io(&p, e))?;
            f.write_all(body.as_bytes()).map_err(|e| Error::io(&p, e))?;
            say(out, tsv.lines().nth(1).unwrap_or_default())
        }
    }
}
