//! Train a Matryoshka decoder and save it as an EMBD checkpoint.
//!
//! Run: `cargo run --release --example train_decoder`

use embfuse::decoder::{
    mrl_loss, read_checkpoint, train_with_progress, write_checkpoint, TrainConfig,
};
use embfuse::synth::LowRankSpace;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> embfuse::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let space = LowRankSpace::new(64, 8, &mut rng);
    let corpus = space.sample(2000, &mut rng);
    let held_out = space.sample(500, &mut rng).l2_normalize_rows()?;

    let config = TrainConfig {
        batch_size: 128,
        epochs: 60,
        learning_rate: 1e-2,
        seed: 1,
        ..TrainConfig::default()
    };
    let ckpt = train_with_progress(&corpus, &config, &[8, 16], |rec| {
        if rec.epoch % 10 == 0 {
            println!("{rec}");
        }
    })?;
    println!(
        "best epoch {}, held-out mrl_loss {:.3e}",
        ckpt.best_epoch,
        mrl_loss(&ckpt.model, &held_out)?
    );

    let path = std::env::temp_dir().join("embfuse_example.embd");
    write_checkpoint(&ckpt, &path)?;
    let back = read_checkpoint(&path)?;
    assert_eq!(back, ckpt);
    println!(
        "wrote {} ({} parameters)",
        path.display(),
        back.model.parameter_count()
    );
    Ok(())
}
