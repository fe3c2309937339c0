use std::path::Path;
use std::process::{Command, Output};

use embfuse::cli::{parse_chain, PipelineConfig};
use embfuse::decoder::read_checkpoint;
use embfuse::embio::{read_embeddings, read_run, write_embeddings, write_ids, write_qrels};
use embfuse::lsh::read_bit_codes;
use embfuse::synth::{self, PlantedTask};

fn embfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_embfuse"))
        .args(args)
        .env_remove("EMBFUSE_THREADS")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn concat_reports_dims_and_row_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_embeddings(&synth::gaussian(100, 384, 1), d.join("a.embf")).unwrap();
    write_embeddings(&synth::gaussian(100, 768, 2), d.join("b.embf")).unwrap();
    write_embeddings(&synth::gaussian(99, 8, 3), d.join("c.embf")).unwrap();

    let out = embfuse(&[
        "concat",
        "-i",
        &p(d, "a.embf"),
        "-i",
        &p(d, "b.embf"),
        "-o",
        &p(d, "ab.embf"),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("dims=1152"));
    assert_eq!(read_embeddings(d.join("ab.embf")).unwrap().dims(), 1152);

    let out = embfuse(&[
        "concat",
        "-i",
        &p(d, "a.embf"),
        "-i",
        &p(d, "c.embf"),
        "-o",
        &p(d, "x.embf"),
    ]);
    assert_eq!(code(&out), 1);
    assert!(
        stderr(&out).contains("row count mismatch: 100 vs 99"),
        "{}",
        stderr(&out)
    );
    assert!(!d.join("x.embf").exists());
}

#[test]
fn usage_and_io_exit_codes() {
    assert_eq!(code(&embfuse(&[])), 1);
    assert_eq!(code(&embfuse(&["frobnicate"])), 1);
    assert_eq!(code(&embfuse(&["--help"])), 0);
    let out = embfuse(&["concat", "-i", "/nonexistent/a.embf", "-o", "/tmp/x.embf"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("/nonexistent/a.embf"));

    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("junk.embf"), b"not an embedding file").unwrap();
    let out = embfuse(&[
        "lsh",
        "-i",
        &p(dir.path(), "junk.embf"),
        "-o",
        &p(dir.path(), "o.embq"),
        "--dproj",
        "8",
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));

    // output directory missing: caught before any work
    write_embeddings(&synth::gaussian(4, 4, 1), dir.path().join("m.embf")).unwrap();
    let out = embfuse(&[
        "lsh",
        "-i",
        &p(dir.path(), "m.embf"),
        "-o",
        "/nonexistent/dir/o.embq",
        "--dproj",
        "8",
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn lsh_logs_compression_and_writes_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_embeddings(&synth::gaussian(10, 1536, 4), d.join("c.embf")).unwrap();
    let out = embfuse(&[
        "lsh",
        "-i",
        &p(d, "c.embf"),
        "-o",
        &p(d, "c.embq"),
        "--dproj",
        "1024",
        "--seed",
        "7",
        "--projector",
        &p(d, "p.embl"),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(
        stdout(&out).contains("compression 48.0x"),
        "{}",
        stdout(&out)
    );
    let codes = read_bit_codes(d.join("c.embq")).unwrap();
    assert_eq!((codes.rows(), codes.bits_per_row()), (10, 1024));
    assert!(d.join("p.embl").is_file());
}

#[test]
fn train_encode_and_stop_validation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_embeddings(&synth::low_rank_corpus(300, 24, 4, 1), d.join("z.embf")).unwrap();
    let config = d.join("pipeline.toml");
    std::fs::write(
        &config,
        "[train]\nstops = [4, 8]\nbatch_size = 32\nepochs = 3\nlearning_rate = 0.01\nseed = 9\n",
    )
    .unwrap();

    let out = embfuse(&[
        "train",
        "-i",
        &p(d, "z.embf"),
        "-o",
        &p(d, "m.embd"),
        "--config",
        &p(d, "pipeline.toml"),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let log = stdout(&out);
    assert_eq!(
        log.lines().filter(|l| l.starts_with("epoch=")).count(),
        3,
        "{log}"
    );
    let ckpt = read_checkpoint(d.join("m.embd")).unwrap();
    assert_eq!(ckpt.model.stops(), [4, 8]);
    assert_eq!(ckpt.train_loss_history.len(), 3);

    let out = embfuse(&[
        "encode",
        "-c",
        &p(d, "m.embd"),
        "-i",
        &p(d, "z.embf"),
        "-o",
        &p(d, "h.embf"),
        "--stop",
        "4",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(read_embeddings(d.join("h.embf")).unwrap().dims(), 4);

    let out = embfuse(&[
        "encode",
        "-c",
        &p(d, "m.embd"),
        "-i",
        &p(d, "z.embf"),
        "-o",
        &p(d, "h.embf"),
        "--stop",
        "9",
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("--stop 9"));

    let out = embfuse(&[
        "train",
        "-i",
        &p(d, "z.embf"),
        "-o",
        &p(d, "m2.embd"),
        "--stops",
        "4,8",
        "--batch-size",
        "32",
        "--epochs",
        "3",
        "--learning-rate",
        "1000",
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(
        stderr(&out).contains("diverged at epoch 1"),
        "{}",
        stderr(&out)
    );

    std::fs::write(&config, "[train]\nlearnig_rate = 0.1\n").unwrap();
    let out = embfuse(&[
        "train",
        "-i",
        &p(d, "z.embf"),
        "-o",
        &p(d, "m3.embd"),
        "--config",
        &p(d, "pipeline.toml"),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("learnig_rate"));
}

#[test]
fn quantize_and_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let task = PlantedTask::gaussian(200, 50, 16, 0.3, 5);
    write_embeddings(&task.docs, d.join("docs.embf")).unwrap();
    write_embeddings(&task.queries, d.join("q.embf")).unwrap();
    write_ids(&task.doc_ids, d.join("docs.ids")).unwrap();
    write_ids(&task.query_ids, d.join("q.ids")).unwrap();
    write_qrels(&task.qrels, d.join("qrels.tsv")).unwrap();

    let out = embfuse(&[
        "calibrate",
        "-i",
        &p(d, "docs.embf"),
        "-o",
        &p(d, "c.embc"),
        "--bits",
        "4",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = embfuse(&[
        "quantize",
        "--calibration",
        &p(d, "c.embc"),
        "-i",
        &p(d, "docs.embf"),
        "-o",
        &p(d, "d.embq"),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("compression 8.0x"));

    let eval = |transform: &str, extra: &[&str]| {
        let mut args = vec![
            "eval".to_string(),
            "--docs".into(),
            p(d, "docs.embf"),
            "--doc-ids".into(),
            p(d, "docs.ids"),
            "--queries".into(),
            p(d, "q.embf"),
            "--query-ids".into(),
            p(d, "q.ids"),
            "--qrels".into(),
            p(d, "qrels.tsv"),
            "--task".into(),
            "planted".into(),
            "--transform".into(),
            transform.into(),
        ];
        args.extend(extra.iter().map(|s| s.to_string()));
        embfuse(&args.iter().map(String::as_str).collect::<Vec<_>>())
    };
    let out = eval("raw", &["--run", &p(d, "run.trec")]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        stdout(&out),
        "task\ttransform\tmean_ndcg@10\nplanted\traw\t1.000000\n"
    );
    assert_eq!(read_run(d.join("run.trec")).unwrap().len(), 500);

    let out = eval(
        &format!("quant:{}", p(d, "c.embc")),
        &["-o", &p(d, "r.tsv")],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = eval(
        "trunc:8,lsh:256",
        &["-o", &p(d, "r.tsv"), "--append", "--seed", "3"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = std::fs::read_to_string(d.join("r.tsv")).unwrap();
    let lines: Vec<_> = report.lines().collect();
    assert_eq!(lines.len(), 3, "{report}");
    assert!(lines[1].starts_with("planted\tq4\t"));
    assert!(lines[2].starts_with("planted\ttrunc[:8]+lsh256\t"));

    let out = eval("trunc:99", &[]);
    assert_eq!(code(&out), 1);
    let out = eval("bogus", &[]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("unknown stage"));
}

#[test]
fn config_and_chain_parsing() {
    let cfg =
        PipelineConfig::parse("[quantize]\nbits = 4\n[lsh]\ndproj = 1024\nseed = 2\n").unwrap();
    assert_eq!(cfg.quantize.bits, Some(4));
    assert_eq!(cfg.lsh.dproj, Some(1024));
    assert_eq!(cfg.train_config(), embfuse::TrainConfig::default());
    assert!(PipelineConfig::parse("[nope]\n").is_err());
    assert_eq!(
        PipelineConfig::parse("[eval]\nk = 0.5\n")
            .unwrap_err()
            .exit_code(),
        1
    );

    let chain = parse_chain("raw, trunc:16", 0).unwrap();
    assert_eq!(embfuse::eval::chain_label(&chain), "raw+trunc[:16]");
    assert!(parse_chain("trunc:x", 0).is_err());
    assert_eq!(
        parse_chain("dec:/missing.embd", 0).unwrap_err().exit_code(),
        3
    );
}
