//! Computes mel spectrograms of two toy utterances and the DTW mel-cepstral
//! distortion between them, and between one utterance and a noisy copy.
//!
//! cargo run --release --example mel_mcd

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sentctx::features::{mcd, mel_cepstrum, mel_spectrogram, AnalysisConfig, Waveform};
use sentctx::harness::{generate_toy_corpus, CEPSTRUM_ORDER};

fn main() -> sentctx::Result<()> {
    let corpus = generate_toy_corpus(2, 11)?;
    let (a, b) = (&corpus.utterances[0], &corpus.utterances[1]);
    let config = AnalysisConfig::new(a.wav.sample_rate);
    println!(
        "{} Hz, window {} / hop {} samples, n_fft {}",
        config.sample_rate,
        config.win_length(),
        config.hop_length(),
        config.n_fft()
    );

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noisy = Waveform::new(
        a.wav
            .samples
            .iter()
            .map(|s| s + 0.01 * rng.random_range(-1.0..1.0))
            .collect(),
        a.wav.sample_rate,
    )?;
    let mel_a = mel_spectrogram(&a.wav, &config)?;
    let mel_b = mel_spectrogram(&b.wav, &config)?;
    let mel_noisy = mel_spectrogram(&noisy, &config)?;

    let cep = |m| mel_cepstrum(m, CEPSTRUM_ORDER);
    let (ca, cb, cn) = (cep(&mel_a)?, cep(&mel_b)?, cep(&mel_noisy)?);
    println!(
        "{}: {} frames, {}: {} frames",
        a.id,
        mel_a.num_frames(),
        b.id,
        mel_b.num_frames()
    );
    println!("MCD(a, a)      = {:.3} dB", mcd(&ca, &ca)?);
    println!("MCD(a, noisy)  = {:.3} dB", mcd(&ca, &cn)?);
    println!("MCD(a, b)      = {:.3} dB", mcd(&ca, &cb)?);
    Ok(())
}
