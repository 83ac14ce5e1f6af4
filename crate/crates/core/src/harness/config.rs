//! Model presets and the plain-text `key = value` configuration format.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::context::{AggregationMode, ContextConfig};
use crate::decoder::DecoderConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Toy,
    Paper,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Preset::Toy),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (toy, paper)"
            ))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Toy => "toy",
            Preset::Paper => "paper",
        })
    }
}

/// Parses `key = value` lines; `#` starts a comment. Later keys win.
pub fn parse_key_values(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                detail: format!("expected `key = value`, found {line:?}"),
            });
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                detail: "empty key".into(),
            });
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for `{key}`")))
}

fn parse_pair(key: &str, value: &str) -> Result<[usize; 2]> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => Ok([parse_value(key, a)?, parse_value(key, b)?]),
        _ => Err(Error::Config(format!(
            "`{key}` expects two comma-separated widths, got {value:?}"
        ))),
    }
}

/// Complete architecture description: everything needed to rebuild a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub context_mode: AggregationMode,
    pub context_kernel: usize,
    pub decoder: DecoderConfig,
    /// Sample rate of the training audio; synthesized mels carry it.
    pub sample_rate: u32,
}

impl ModelConfig {
    pub fn preset(preset: Preset, mode: AggregationMode, vocab_size: usize) -> Self {
        let encoder = match preset {
            Preset::Toy => EncoderConfig::toy(vocab_size),
            Preset::Paper => EncoderConfig::paper(vocab_size),
        };
        let decoder = match preset {
            Preset::Toy => DecoderConfig::toy(encoder.model_dim),
            Preset::Paper => DecoderConfig::paper(encoder.model_dim),
        };
        ModelConfig {
            encoder,
            context_mode: mode,
            context_kernel: 3,
            decoder,
            sample_rate: match preset {
                Preset::Toy => 16000,
                Preset::Paper => 22050,
            },
        }
    }

    pub fn context(&self) -> ContextConfig {
        ContextConfig {
            num_blocks: self.encoder.num_blocks,
            model_dim: self.encoder.model_dim,
            num_heads: self.encoder.num_heads,
            ffn_inner_dim: self.encoder.ffn_inner_dim,
            extractor_kernel: self.context_kernel,
            mode: self.context_mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        if self.decoder.memory_dim != self.encoder.model_dim {
            return Err(Error::Config(format!(
                "decoder memory width {} differs from encoder width {}",
                self.decoder.memory_dim, self.encoder.model_dim
            )));
        }
        if !crate::features::SUPPORTED_SAMPLE_RATES.contains(&self.sample_rate) {
            return Err(Error::Config(format!(
                "unsupported sample rate {}",
                self.sample_rate
            )));
        }
        if self.context_kernel == 0 {
            return Err(Error::Config(
                "context kernel width must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Applies one `key = value` setting. The vocabulary size is not a key;
    /// it always comes from the vocabulary.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let e = &mut self.encoder;
        let d = &mut self.decoder;
        match key {
            "encoder.blocks" => e.num_blocks = parse_value(key, value)?,
            "encoder.heads" => e.num_heads = parse_value(key, value)?,
            "encoder.dim" => {
                e.model_dim = parse_value(key, value)?;
                d.memory_dim = e.model_dim;
            }
            "encoder.ffn" => e.ffn_inner_dim = parse_value(key, value)?,
            "encoder.prenet_layers" => e.prenet_layers = parse_value(key, value)?,
            "encoder.prenet_kernel" => e.prenet_kernel = parse_value(key, value)?,
            "encoder.dropout" => e.dropout = parse_value(key, value)?,
            "context.mode" => self.context_mode = parse_value(key, value)?,
            "context.kernel" => self.context_kernel = parse_value(key, value)?,
            "decoder.prenet" => d.prenet_dims = parse_pair(key, value)?,
            "decoder.prenet_dropout" => d.prenet_dropout = parse_value(key, value)?,
            "decoder.lstm" => {
                d.recurrent_dims = parse_pair(key, value)?;
                d.attention.query_dim = d.recurrent_dims[0];
            }
            "decoder.mels" => d.num_mels = parse_value(key, value)?,
            "decoder.reduction" => d.reduction_factor = parse_value(key, value)?,
            "decoder.postnet_layers" => d.postnet_layers = parse_value(key, value)?,
            "decoder.postnet_channels" => d.postnet_channels = parse_value(key, value)?,
            "decoder.postnet_kernel" => d.postnet_kernel = parse_value(key, value)?,
            "decoder.stop_threshold" => d.stop_threshold = parse_value(key, value)?,
            "decoder.max_steps" => d.max_steps = parse_value(key, value)?,
            "attention.mixtures" => d.attention.num_mixtures = parse_value(key, value)?,
            "attention.hidden" => d.attention.hidden_dim = parse_value(key, value)?,
            "attention.initial_step" => d.attention.initial_step = parse_value(key, value)?,
            "attention.initial_scale" => d.attention.initial_scale = parse_value(key, value)?,
            "audio.sample_rate" => self.sample_rate = parse_value(key, value)?,
            other => return Err(Error::Config(format!("unknown model setting `{other}`"))),
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let (e, d) = (&self.encoder, &self.decoder);
        let pair = |p: [usize; 2]| format!("{},{}", p[0], p[1]);
        [
            ("encoder.blocks", e.num_blocks.to_string()),
            ("encoder.heads", e.num_heads.to_string()),
            ("encoder.dim", e.model_dim.to_string()),
            ("encoder.ffn", e.ffn_inner_dim.to_string()),
            ("encoder.prenet_layers", e.prenet_layers.to_string()),
            ("encoder.prenet_kernel", e.prenet_kernel.to_string()),
            ("encoder.dropout", e.dropout.to_string()),
            ("context.mode", self.context_mode.to_string()),
            ("context.kernel", self.context_kernel.to_string()),
            ("decoder.prenet", pair(d.prenet_dims)),
            ("decoder.prenet_dropout", d.prenet_dropout.to_string()),
            ("decoder.lstm", pair(d.recurrent_dims)),
            ("decoder.mels", d.num_mels.to_string()),
            ("decoder.reduction", d.reduction_factor.to_string()),
            ("decoder.postnet_layers", d.postnet_layers.to_string()),
            ("decoder.postnet_channels", d.postnet_channels.to_string()),
            ("decoder.postnet_kernel", d.postnet_kernel.to_string()),
            ("decoder.stop_threshold", d.stop_threshold.to_string()),
            ("decoder.max_steps", d.max_steps.to_string()),
            ("attention.mixtures", d.attention.num_mixtures.to_string()),
            ("attention.hidden", d.attention.hidden_dim.to_string()),
            (
                "attention.initial_step",
                d.attention.initial_step.to_string(),
            ),
            (
                "attention.initial_scale",
                d.attention.initial_scale.to_string(),
            ),
            ("audio.sample_rate", self.sample_rate.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_key_values(pairs: &[(String, String)], vocab_size: usize) -> Result<Self> {
        let mut config = ModelConfig::preset(Preset::Toy, AggregationMode::None, vocab_size);
        for (k, v) in pairs {
            config.set(k, v)?;
        }
        config.validate()?;
        Ok(config)
    }
}

/// Optimisation and bookkeeping settings for [`train`](super::train).
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub preset: Preset,
    pub mode: AggregationMode,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Linear warm-up length in steps; 0 disables it.
    pub warmup_steps: usize,
    /// Multiplicative learning-rate decay applied every `decay_steps`.
    pub decay_rate: f64,
    pub decay_steps: usize,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    /// Checkpoint interval in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    /// Model settings applied on top of the preset.
    pub model_overrides: Vec<(String, String)>,
}

impl TrainingConfig {
    pub fn new(preset: Preset, mode: AggregationMode) -> Self {
        let (learning_rate, warmup_steps) = match preset {
            Preset::Toy => (1e-3, 0),
            Preset::Paper => (1e-4, 4000),
        };
        TrainingConfig {
            preset,
            mode,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            warmup_steps,
            decay_rate: 1.0,
            decay_steps: 1000,
            clip_norm: 1.0,
            batch_size: 2,
            max_steps: 2000,
            seed: 0,
            checkpoint_every: 0,
            model_overrides: Vec::new(),
        }
    }

    /// Learning rate for 1-based `step`.
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        let warm = if self.warmup_steps > 0 {
            (step as f64 / self.warmup_steps as f64).min(1.0)
        } else {
            1.0
        };
        let decay = self
            .decay_rate
            .powf((step.saturating_sub(1) / self.decay_steps.max(1)) as f64);
        self.learning_rate * warm * decay
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "preset" => self.preset = parse_value(key, value)?,
            "mode" | "aggregation_mode" => self.mode = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "beta1" => self.beta1 = parse_value(key, value)?,
            "beta2" => self.beta2 = parse_value(key, value)?,
            "epsilon" => self.epsilon = parse_value(key, value)?,
            "warmup_steps" => self.warmup_steps = parse_value(key, value)?,
            "decay_rate" => self.decay_rate = parse_value(key, value)?,
            "decay_steps" => self.decay_steps = parse_value(key, value)?,
            "clip_norm" => self.clip_norm = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "max_steps" => self.max_steps = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, value)?,
            k if k.contains('.') => {
                // checked against a throwaway model config so typos fail early
                ModelConfig::preset(self.preset, self.mode, 1).set(k, value)?;
                self.model_overrides
                    .push((k.to_string(), value.to_string()));
            }
            other => return Err(Error::Config(format!("unknown training setting `{other}`"))),
        }
        Ok(())
    }

    /// Reads a config file. `preset` and `mode` are applied first so the
    /// defaults they imply never override explicit values.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let pairs = parse_key_values(&text, path)?;
        let find = |key: &str| {
            pairs
                .iter()
                .rev()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
        };
        let preset = find("preset")
            .map(str::parse)
            .transpose()?
            .unwrap_or(Preset::Toy);
        let mode = find("mode")
            .or(find("aggregation_mode"))
            .map(str::parse)
            .transpose()?
            .unwrap_or(AggregationMode::None);
        let mut config = TrainingConfig::new(preset, mode);
        for (k, v) in &pairs {
            config.set(k, v)?;
        }
        Ok(config)
    }

    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        let mut config = ModelConfig::preset(self.preset, self.mode, vocab_size);
        for (k, v) in &self.model_overrides {
            config.set(k, v)?;
        }
        config.context_mode = self.mode;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_steps == 0 {
            return Err(Error::Config(
                "batch_size and max_steps must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Config(
                "learning_rate and clip_norm must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.epsilon > 0.0)
        {
            return Err(Error::Config(
                "Adam betas must lie in [0, 1) and epsilon be positive".into(),
            ));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(Error::Config(format!(
                "decay_rate {} outside (0, 1]",
                self.decay_rate
            )));
        }
        Ok(())
    }
}
