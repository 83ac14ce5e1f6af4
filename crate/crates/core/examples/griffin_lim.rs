//! Reconstructs a waveform from a toy mel spectrogram by Griffin-Lim and
//! writes both the original and the reconstruction as WAV files.
//!
//! cargo run --release --example griffin_lim -- [iterations] [out_dir]

use std::path::PathBuf;

use sentctx::features::{griffin_lim, mel_spectral_convergence, write_wav};
use sentctx::harness::generate_toy_corpus;

fn main() -> sentctx::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let iterations = args.first().and_then(|s| s.parse().ok()).unwrap_or(32);
    let out = PathBuf::from(args.get(1).map_or("griffin_lim_out", String::as_str));

    let corpus = generate_toy_corpus(1, 3)?;
    let utt = &corpus.utterances[0];
    let result = griffin_lim(&utt.mel, iterations, 0)?;
    for (i, sc) in result.spectral_convergence.iter().enumerate() {
        if i % 8 == 0 || i + 1 == iterations {
            println!("iteration {:3}: spectral convergence {sc:.4}", i + 1);
        }
    }
    println!(
        "mel-domain convergence {:.4}",
        mel_spectral_convergence(&utt.mel, &result.waveform)?
    );

    std::fs::create_dir_all(&out).map_err(|e| sentctx::Error::io(&out, e))?;
    write_wav(out.join("original.wav"), &utt.wav)?;
    write_wav(out.join("reconstructed.wav"), &result.waveform)?;
    println!("wrote {}", out.display());
    Ok(())
}
