use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::*;

const SR: u32 = 22050;

fn tone(freq: f64, secs: f64, sr: u32) -> Waveform {
    let n = (secs * sr as f64) as usize;
    let samples = (0..n)
        .map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin())
        .collect();
    Waveform::new(samples, sr).unwrap()
}

fn cepstrum(rows: Vec<Vec<f64>>) -> MelCepstrum {
    MelCepstrum::new(Tensor::from_rows(&rows).unwrap(), true).unwrap()
}

fn random_rows(t: usize, c: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..t)
        .map(|_| (0..c).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect()
}

fn dominant_frequency(wav: &Waveform) -> (f64, f64) {
    let n = wav.len().next_power_of_two();
    let mut buf: Vec<Complex64> = wav
        .samples
        .iter()
        .map(|&s| Complex64::new(s, 0.0))
        .collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let k = (1..n / 2)
        .max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()))
        .unwrap();
    (
        k as f64 * wav.sample_rate as f64 / n as f64,
        wav.sample_rate as f64 / n as f64,
    )
}

#[test]
fn analysis_sizes_follow_the_window_settings() {
    let c = AnalysisConfig::new(22050);
    assert_eq!(
        (c.win_length(), c.hop_length(), c.n_fft()),
        (1103, 276, 2048)
    );
    let c = AnalysisConfig::new(16000);
    assert_eq!(
        (c.win_length(), c.hop_length(), c.n_fft()),
        (800, 200, 1024)
    );
}

#[test]
fn unsupported_sample_rate_is_rejected() {
    assert!(Waveform::new(vec![0.0; 10], 44100).is_err());
    assert!(Waveform::new(vec![f64::NAN], 16000).is_err());
}

#[test]
fn silence_sits_on_the_log_floor() {
    let wav = Waveform::new(vec![0.0; 5000], SR).unwrap();
    let mel = mel_spectrogram(&wav, &AnalysisConfig::new(SR)).unwrap();
    assert_eq!(mel.num_mels(), 80);
    assert!(mel.frames.data().iter().all(|&v| v == LOG_FLOOR.ln()));
}

#[test]
fn empty_waveform_is_an_error() {
    let wav = Waveform::new(Vec::new(), SR).unwrap();
    assert!(mel_spectrogram(&wav, &AnalysisConfig::new(SR)).is_err());
}

#[test]
fn frame_count_follows_framing_arithmetic() {
    let config = AnalysisConfig::new(16000);
    for n in [800, 801, 999, 1000, 1001, 16000, 12345] {
        let wav = Waveform::new(vec![0.1; n], 16000).unwrap();
        let mel = mel_spectrogram(&wav, &config).unwrap();
        assert_eq!(mel.num_frames(), 1 + (n - 800) / 200, "n = {n}");
    }
    let short = Waveform::new(vec![0.1; 10], 16000).unwrap();
    assert_eq!(mel_spectrogram(&short, &config).unwrap().num_frames(), 1);
}

#[test]
fn pure_tone_lands_in_the_band_with_nearest_centre() {
    for sr in [22050, 16000] {
        let config = AnalysisConfig::new(sr);
        let fb = mel_filterbank(&config);
        let expected = (0..fb.num_mels())
            .min_by(|&a, &b| {
                (fb.centers[a] - 440.0)
                    .abs()
                    .total_cmp(&(fb.centers[b] - 440.0).abs())
            })
            .unwrap();
        let mel = mel_spectrogram(&tone(440.0, 0.5, sr), &config).unwrap();
        for t in 0..mel.num_frames() {
            let row = mel.frames.row_slice(t);
            let band = (0..row.len())
                .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                .unwrap();
            assert_eq!(band, expected, "sr {sr}, frame {t}");
        }
    }
}

#[test]
fn mel_analysis_is_bit_deterministic() {
    let wav = tone(300.0, 0.3, SR);
    let config = AnalysisConfig::new(SR);
    assert_eq!(
        mel_spectrogram(&wav, &config).unwrap(),
        mel_spectrogram(&wav, &config).unwrap()
    );
}

#[test]
fn filterbank_is_a_partition_of_unity_between_outer_centres() {
    for sr in [22050, 16000] {
        let config = AnalysisConfig::new(sr);
        let fb = mel_filterbank(&config);
        assert!(fb.weights.iter().all(|row| row.iter().sum::<f64>() > 0.0));
        let bin_hz = sr as f64 / config.n_fft() as f64;
        for k in 0..fb.num_bins() {
            let f = k as f64 * bin_hz;
            let active = fb.weights.iter().filter(|row| row[k] > 0.0).count();
            assert!(active <= 2);
            if f >= fb.centers[0] && f <= fb.centers[79] {
                let total: f64 = fb.weights.iter().map(|row| row[k]).sum();
                assert!((total - 1.0).abs() < 1e-9, "bin {k}: {total}");
            }
        }
    }
}

#[test]
fn constant_log_mel_has_only_c0() {
    let frames = Tensor::filled(&[3, 80], -2.0);
    let mel = MelSpectrogram::with_config(frames, &AnalysisConfig::new(SR)).unwrap();
    let cep = mel_cepstrum(&mel, 13).unwrap();
    assert!(cep.includes_c0);
    for t in 0..3 {
        let row = cep.coeffs.row_slice(t);
        assert!((row[0] + 2.0 * 80f64.sqrt()).abs() < 1e-12);
        assert!(row[1..].iter().all(|c| c.abs() < 1e-12));
    }
}

#[test]
fn mcd_of_identical_sequences_is_zero() {
    let a = cepstrum(random_rows(6, 13, 1));
    assert_eq!(mcd(&a, &a).unwrap(), 0.0);
}

#[test]
fn constant_offset_gives_closed_form_distortion() {
    // Frames far apart, so any warp costs more than staying on the diagonal.
    let rows: Vec<Vec<f64>> = (0..7)
        .map(|t| {
            (0..13)
                .map(|c| {
                    if c == 1 {
                        50.0 * t as f64
                    } else {
                        0.3 * c as f64
                    }
                })
                .collect()
        })
        .collect();
    for delta in [0.01, 0.5, 2.0] {
        let shifted = rows
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .map(|(c, v)| if c == 4 { v + delta } else { *v })
                    .collect()
            })
            .collect();
        let got = mcd(&cepstrum(rows.clone()), &cepstrum(shifted)).unwrap();
        let expected = 10.0 / std::f64::consts::LN_10 * std::f64::consts::SQRT_2 * delta;
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }
}

#[test]
fn c0_is_ignored() {
    let rows = random_rows(4, 13, 2);
    let louder = rows.iter().map(|r| {
        let mut r = r.clone();
        r[0] += 10.0;
        r
    });
    assert_eq!(
        mcd(&cepstrum(rows.clone()), &cepstrum(louder.collect())).unwrap(),
        0.0
    );
}

/// Enumerates every monotone path and keeps the one with least total cost.
fn exhaustive_dtw_mean(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    fn walk(
        i: usize,
        j: usize,
        a: &[Vec<f64>],
        b: &[Vec<f64>],
        sum: f64,
        len: usize,
        best: &mut (f64, usize),
    ) {
        let d: f64 = a[i][1..]
            .iter()
            .zip(&b[j][1..])
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let (sum, len) = (sum + d, len + 1);
        if i + 1 == a.len() && j + 1 == b.len() {
            if sum < best.0 {
                *best = (sum, len);
            }
            return;
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(i + 1, j + 1, a, b, sum, len, best);
        }
        if i + 1 < a.len() {
            walk(i + 1, j, a, b, sum, len, best);
        }
        if j + 1 < b.len() {
            walk(i, j + 1, a, b, sum, len, best);
        }
    }
    let mut best = (f64::INFINITY, 0);
    walk(0, 0, a, b, 0.0, 0, &mut best);
    10.0 / std::f64::consts::LN_10 * std::f64::consts::SQRT_2 * best.0 / best.1 as f64
}

#[test]
fn dtw_matches_exhaustive_path_search() {
    for seed in 0..20 {
        let a = random_rows(5, 13, seed);
        let b = random_rows(4 + (seed as usize % 3), 13, seed + 100);
        let got = mcd(&cepstrum(a.clone()), &cepstrum(b.clone())).unwrap();
        let expected = exhaustive_dtw_mean(&a, &b);
        assert!(
            (got - expected).abs() < 1e-12,
            "seed {seed}: {got} vs {expected}"
        );
    }
}

#[test]
fn single_frame_inputs_are_allowed_and_empty_ones_are_not() {
    let one = cepstrum(random_rows(1, 13, 3));
    let many = cepstrum(random_rows(5, 13, 4));
    assert!(mcd(&one, &many).unwrap() > 0.0);
    let empty = MelCepstrum::new(Tensor::zeros(&[0, 13]), true).unwrap();
    assert!(mcd(&empty, &many).is_err());
}

proptest! {
    #[test]
    fn mcd_is_non_negative_and_no_worse_than_the_diagonal(seed in 0u64..5000, t in 1usize..8) {
        let a = random_rows(t, 13, seed);
        let b = random_rows(t, 13, seed + 1);
        let got = mcd(&cepstrum(a.clone()), &cepstrum(b.clone())).unwrap();
        let diagonal = a.iter().zip(&b)
            .map(|(x, y)| x[1..].iter().zip(&y[1..]).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt())
            .sum::<f64>() / t as f64 * MCD_SCALE;
        prop_assert!(got >= 0.0);
        prop_assert!(got <= diagonal + 1e-12);
    }
}

#[test]
fn griffin_lim_error_does_not_grow_with_iterations() {
    let config = AnalysisConfig::new(SR);
    let mel = mel_spectrogram(&tone(440.0, 0.4, SR), &config).unwrap();
    let one = griffin_lim(&mel, 1, 7).unwrap();
    let many = griffin_lim(&mel, 50, 7).unwrap();
    for pair in many.spectral_convergence.windows(2) {
        assert!(pair[1] <= pair[0] * (1.0 + 1e-9), "{:?}", pair);
    }
    let e1 = mel_spectral_convergence(&mel, &one.waveform).unwrap();
    let e50 = mel_spectral_convergence(&mel, &many.waveform).unwrap();
    assert!(e50 <= e1, "{e50} > {e1}");
}

#[test]
fn griffin_lim_of_silence_is_near_silent() {
    let mel = MelSpectrogram::with_config(
        Tensor::filled(&[20, 80], LOG_FLOOR.ln()),
        &AnalysisConfig::new(SR),
    )
    .unwrap();
    let out = griffin_lim(&mel, 10, 0).unwrap();
    assert!(out.waveform.rms() < LOG_FLOOR, "rms {}", out.waveform.rms());
}

#[test]
fn griffin_lim_recovers_tone_frequency() {
    for sr in [22050, 16000] {
        let config = AnalysisConfig::new(sr);
        let mel = mel_spectrogram(&tone(440.0, 0.5, sr), &config).unwrap();
        let out = griffin_lim(&mel, 50, 3).unwrap();
        let (peak, _) = dominant_frequency(&out.waveform);
        let bin = sr as f64 / config.n_fft() as f64;
        assert!((peak - 440.0).abs() <= bin, "sr {sr}: peak {peak} Hz");
    }
}

#[test]
fn griffin_lim_needs_an_iteration() {
    let mel =
        MelSpectrogram::with_config(Tensor::zeros(&[2, 80]), &AnalysisConfig::new(SR)).unwrap();
    assert!(griffin_lim(&mel, 0, 0).is_err());
}

#[test]
fn wav_round_trips_at_16_bit_precision() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.wav");
    let wav = tone(220.0, 0.1, 16000);
    write_wav(&path, &wav).unwrap();
    let back = read_wav(&path).unwrap();
    assert_eq!(back.sample_rate, 16000);
    assert_eq!(back.len(), wav.len());
    for (a, b) in wav.samples.iter().zip(&back.samples) {
        assert!((a - b).abs() < 2.0 / 32768.0);
    }

    let stereo = dir.path().join("b.wav");
    let spec = hound::WavSpec {
        channels: 2,
        sample_rate: 16000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(&stereo, spec).unwrap();
    w.write_sample(0i16).unwrap();
    w.write_sample(0i16).unwrap();
    w.finalize().unwrap();
    assert_eq!(read_wav(&stereo).unwrap_err().category(), "format");
}

#[test]
fn mel_file_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.mel");
    let mel = mel_spectrogram(&tone(500.0, 0.2, SR), &AnalysisConfig::new(SR)).unwrap();
    write_mel(&path, &mel).unwrap();
    assert_eq!(read_mel(&path).unwrap(), mel);

    let bytes = mel_to_bytes(&mel);
    assert!(mel_from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut wrong = bytes.clone();
    wrong[0] = b'X';
    assert_eq!(mel_from_bytes(&wrong).unwrap_err().category(), "format");
    assert_eq!(
        read_mel(dir.path().join("missing.mel"))
            .unwrap_err()
            .category(),
        "io"
    );
}
