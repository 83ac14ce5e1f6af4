//! WAV (16-bit PCM mono) and binary mel-matrix files.
//!
//! Mel file layout, little-endian: `b"MELS"`, then u32 version, frames,
//! bands, sample rate, hop (samples), window (samples), then `frames × bands`
//! f64 values row-major.

use std::fs;
use std::path::Path;

use super::{AnalysisConfig, MelSpectrogram, Waveform};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

const MEL_MAGIC: &[u8; 4] = b"MELS";
const MEL_VERSION: u32 = 1;
const MEL_HEADER: usize = 4 + 6 * 4;

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1
        || spec.bits_per_sample != 16
        || spec.sample_format != hound::SampleFormat::Int
    {
        return Err(Error::Format {
            kind: "wav",
            detail: format!(
                "{}: expected 16-bit PCM mono, found {} channel(s) at {} bits",
                path.display(),
                spec.channels,
                spec.bits_per_sample
            ),
        });
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Waveform::new(samples, spec.sample_rate)
}

pub fn write_wav(path: impl AsRef<Path>, wav: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wav.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec)?;
    for &s in &wav.samples {
        writer.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    writer.finalize()?;
    Ok(())
}

pub fn mel_to_bytes(mel: &MelSpectrogram) -> Vec<u8> {
    let config = AnalysisConfig::for_mel(mel);
    let mut out = Vec::with_capacity(MEL_HEADER + 8 * mel.frames.numel());
    out.extend_from_slice(MEL_MAGIC);
    for v in [
        MEL_VERSION,
        mel.num_frames() as u32,
        mel.num_mels() as u32,
        mel.sample_rate,
        config.hop_length() as u32,
        config.win_length() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in mel.frames.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn mel_from_bytes(bytes: &[u8]) -> Result<MelSpectrogram> {
    let bad = |detail: String| Error::Format {
        kind: "mel file",
        detail,
    };
    if bytes.len() < MEL_HEADER || &bytes[..4] != MEL_MAGIC {
        return Err(bad("missing MELS header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    if word(0) != MEL_VERSION {
        return Err(bad(format!("unsupported version {}", word(0))));
    }
    let (frames, bands, sr, hop, win) = (
        word(1) as usize,
        word(2) as usize,
        word(3),
        word(4),
        word(5),
    );
    if sr == 0 || hop == 0 || win == 0 {
        return Err(bad("zero sample rate, hop or window".into()));
    }
    let body = &bytes[MEL_HEADER..];
    if body.len() != 8 * frames * bands {
        return Err(bad(format!(
            "header promises {frames}x{bands} values, payload has {} bytes",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let ms = |samples: u32| samples as f64 * 1000.0 / sr as f64;
    MelSpectrogram::new(
        Tensor::new(vec![frames, bands], data)?,
        ms(hop),
        ms(win),
        sr,
    )
}

pub fn write_mel(path: impl AsRef<Path>, mel: &MelSpectrogram) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, mel_to_bytes(mel)).map_err(|e| Error::io(path, e))
}

pub fn read_mel(path: impl AsRef<Path>) -> Result<MelSpectrogram> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    mel_from_bytes(&bytes)
}
