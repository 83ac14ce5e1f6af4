//! Overfits the toy preset on a small synthetic corpus and reports the
//! teacher-forced loss before and after.
//!
//! cargo run --release --example train_toy -- [mode] [steps] [utterances]

use std::time::Instant;

use sentctx::context::AggregationMode;
use sentctx::harness::{
    generate_toy_corpus, mel_mcd, synthesize_utterance, teacher_forced_losses, train_model, Model,
    Preset, TrainingConfig,
};

fn main() -> sentctx::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mode: AggregationMode = args
        .first()
        .map_or(Ok(AggregationMode::Weighted), |s| s.parse())?;
    let steps = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let count = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(10);

    let corpus = generate_toy_corpus(count, 7)?;
    let utterances = corpus.to_utterances()?;
    let frames: usize = utterances.iter().map(|u| u.mel.num_frames()).sum();
    println!("{count} utterances, {frames} frames");

    let mut config = TrainingConfig::new(Preset::Toy, mode);
    config.max_steps = steps;
    let mut model = Model::new(
        config.model_config(corpus.vocab.len())?,
        corpus.vocab.clone(),
        config.seed,
    )?;
    println!(
        "{} ({}): {} parameters",
        mode.system_name(),
        mode,
        model.num_parameters()
    );

    let untrained = model.clone();
    let before = teacher_forced_losses(&model, &utterances)?;
    let start = Instant::now();
    let report = train_model(&mut model, &config, &utterances, None)?;
    let elapsed = start.elapsed().as_secs_f64();
    let after = teacher_forced_losses(&model, &utterances)?;

    for (step, loss) in report.losses.iter().filter(|(s, _)| s % 50 == 0 || *s == 1) {
        println!("step {step:5}  loss {loss:.4}");
    }
    println!(
        "mel loss {:.4} -> {:.4} ({:.1}%)",
        before.mel(),
        after.mel(),
        100.0 * after.mel() / before.mel()
    );
    println!("stop loss {:.4} -> {:.4}", before.stop, after.stop);
    for u in utterances.iter().take(3) {
        let fresh = synthesize_utterance(&untrained, u)?;
        let tuned = synthesize_utterance(&model, u)?;
        println!(
            "{}: {} frames; untrained MCD {:.2} dB; trained MCD {:.2} dB ({} frames, stopped {})",
            u.id,
            u.mel.num_frames(),
            mel_mcd(&u.mel, &fresh.mel)?,
            mel_mcd(&u.mel, &tuned.mel)?,
            tuned.mel.num_frames(),
            tuned.stopped
        );
    }
    println!(
        "{steps} steps in {elapsed:.1}s ({:.3}s/step)",
        elapsed / steps as f64
    );
    Ok(())
}
