//! Trains a small model, saves a checkpoint, reloads it and synthesizes a
//! mel spectrogram and waveform for a symbol file, as the `synth` command does.
//!
//! cargo run --release --example synthesize -- [steps] [out_dir]

use std::path::PathBuf;

use sentctx::context::AggregationMode;
use sentctx::harness::{
    generate_toy_corpus, load_checkpoint, save_checkpoint, synthesize_to_files, train, Preset,
    TrainingConfig,
};

fn main() -> sentctx::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let steps = args.first().and_then(|s| s.parse().ok()).unwrap_or(300);
    let out = PathBuf::from(args.get(1).map_or("synthesize_out", String::as_str));
    std::fs::create_dir_all(&out).map_err(|e| sentctx::Error::io(&out, e))?;

    let corpus = generate_toy_corpus(6, 7)?;
    let mut config = TrainingConfig::new(Preset::Toy, AggregationMode::Weighted);
    config.max_steps = steps;
    let (model, _) = train(&config, &corpus.vocab, &corpus.to_utterances()?, None)?;

    let checkpoint = out.join("model.sckp");
    save_checkpoint(&checkpoint, &model, steps)?;
    let (restored, step) = load_checkpoint(&checkpoint)?;
    println!("checkpoint {} at step {step}", checkpoint.display());

    let symbols = out.join("input.txt");
    let text: Vec<&str> = corpus.utterances[0]
        .symbols
        .iter()
        .map(|&i| corpus.vocab.symbol(i).unwrap())
        .collect();
    std::fs::write(&symbols, text.join(" ")).map_err(|e| sentctx::Error::io(&symbols, e))?;

    let result = synthesize_to_files(
        &restored,
        &symbols,
        &out.join("output.mel"),
        Some(&out.join("output.wav")),
        32,
    )?;
    println!(
        "\"{}\": {} frames in {} steps, {}",
        text.join(" "),
        result.mel.num_frames(),
        result.steps,
        if result.stopped {
            "stopped by the stop token"
        } else {
            "hit the step cap"
        }
    );
    Ok(())
}
