//! Autoregressive mel decoder.
//!
//! Per step: the previous frame goes through a two-layer bottleneck prenet,
//! a first recurrent cell reads it together with the previous attention
//! context, its hidden state queries the GMM attention, and a second cell
//! reads `[h1, context]`. `[h2, context]` is projected to `r` mel frames and
//! `r` stop logits. A five-layer convolutional postnet adds a residual
//! correction to the whole predicted spectrogram.

use rand::Rng;

use crate::attention::{GmmAttention, GmmAttentionConfig, GmmAttentionState};
use crate::error::{Error, Result};
use crate::nn::{Conv1d, Linear, LstmCell, LstmState};
use crate::numcore::{Graph, ParamStore, Tensor, Var};

pub use crate::features::MelSpectrogram;

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderConfig {
    pub memory_dim: usize,
    pub prenet_dims: [usize; 2],
    pub prenet_dropout: f64,
    pub recurrent_dims: [usize; 2],
    pub num_mels: usize,
    pub reduction_factor: usize,
    pub postnet_layers: usize,
    pub postnet_channels: usize,
    pub postnet_kernel: usize,
    pub stop_threshold: f64,
    pub max_steps: usize,
    pub attention: GmmAttentionConfig,
}

impl DecoderConfig {
    /// Prenet 256/256, recurrent cells 1024/1024, postnet 512 channels, one frame per step.
    pub fn paper(memory_dim: usize) -> Self {
        DecoderConfig {
            memory_dim,
            prenet_dims: [256, 256],
            prenet_dropout: 0.5,
            recurrent_dims: [1024, 1024],
            num_mels: 80,
            reduction_factor: 1,
            postnet_layers: 5,
            postnet_channels: 512,
            postnet_kernel: 5,
            stop_threshold: 0.5,
            max_steps: 1000,
            attention: GmmAttentionConfig::new(1024),
        }
    }

    pub fn toy(memory_dim: usize) -> Self {
        DecoderConfig {
            memory_dim,
            prenet_dims: [64, 64],
            prenet_dropout: 0.5,
            recurrent_dims: [128, 128],
            num_mels: 80,
            reduction_factor: 2,
            postnet_layers: 5,
            postnet_channels: 64,
            postnet_kernel: 5,
            stop_threshold: 0.5,
            max_steps: 200,
            attention: GmmAttentionConfig::new(128),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.memory_dim,
            self.prenet_dims[0],
            self.prenet_dims[1],
            self.recurrent_dims[0],
            self.recurrent_dims[1],
            self.num_mels,
            self.reduction_factor,
            self.postnet_channels,
            self.postnet_kernel,
            self.max_steps,
        ];
        if positive.contains(&0) {
            return Err(Error::Config("decoder dimensions must be positive".into()));
        }
        if !(self.stop_threshold > 0.0 && self.stop_threshold < 1.0) {
            return Err(Error::Config(format!(
                "stop_threshold {} outside (0, 1)",
                self.stop_threshold
            )));
        }
        if !(0.0..1.0).contains(&self.prenet_dropout) {
            return Err(Error::Config(format!(
                "prenet_dropout {} outside [0, 1)",
                self.prenet_dropout
            )));
        }
        if self.attention.query_dim != self.recurrent_dims[0] {
            return Err(Error::Config(format!(
                "attention query width {} must equal the first recurrent width {}",
                self.attention.query_dim, self.recurrent_dims[0]
            )));
        }
        self.attention.validate()
    }
}

/// Recurrent state carried between decoder steps.
#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub lstm1: LstmState,
    pub lstm2: LstmState,
    pub attention: GmmAttentionState,
    /// Previous attention context, `[1, memory_dim]`.
    pub context: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    /// `[r, num_mels]`.
    pub frames: Var,
    /// `[1, r]`.
    pub stop_logits: Var,
    /// `[1, memory_length]`.
    pub alignment: Var,
    pub state: DecoderState,
}

/// Teacher-forced outputs trimmed to the target length `T`.
#[derive(Clone, Debug)]
pub struct DecoderOutput {
    pub pre_mel: Var,
    pub post_mel: Var,
    /// `[1, T]`.
    pub stop_logits: Var,
    /// Attention weights per decoder step.
    pub alignments: Vec<Tensor>,
    /// Mixture means after each decoder step.
    pub means: Vec<Vec<f64>>,
}

/// Free-running synthesis result.
#[derive(Clone, Debug)]
pub struct Inference {
    /// Postnet-refined frames, `[steps * r, num_mels]`.
    pub mel: Tensor,
    pub pre_mel: Tensor,
    pub stop_probabilities: Vec<f64>,
    pub alignments: Vec<Tensor>,
    pub means: Vec<Vec<f64>>,
    pub steps: usize,
    /// False when decoding hit `max_steps` without the stop head firing.
    pub stopped: bool,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    config: DecoderConfig,
    prenet: [Linear; 2],
    lstm1: LstmCell,
    lstm2: LstmCell,
    attention: GmmAttention,
    frame_projection: Linear,
    stop: Linear,
    postnet: Vec<Conv1d>,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, config: &DecoderConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (d, m, r) = (config.memory_dim, config.num_mels, config.reduction_factor);
        let [p1, p2] = config.prenet_dims;
        let [h1, h2] = config.recurrent_dims;
        let prenet = [
            Linear::new(store, "decoder.prenet0", m, p1, rng)?,
            Linear::new(store, "decoder.prenet1", p1, p2, rng)?,
        ];
        let lstm1 = LstmCell::new(store, "decoder.lstm0", p2 + d, h1, rng)?;
        let attention = GmmAttention::new(store, "decoder.attention", &config.attention, rng)?;
        let lstm2 = LstmCell::new(store, "decoder.lstm1", h1 + d, h2, rng)?;
        let frame_projection = Linear::new(store, "decoder.frame", h2 + d, m * r, rng)?;
        let stop = Linear::new(store, "decoder.stop", h2 + d, r, rng)?;
        let mut postnet = Vec::with_capacity(config.postnet_layers);
        for i in 0..config.postnet_layers {
            let cin = if i == 0 { m } else { config.postnet_channels };
            let cout = if i + 1 == config.postnet_layers {
                m
            } else {
                config.postnet_channels
            };
            postnet.push(Conv1d::new(
                store,
                &format!("decoder.postnet{i}"),
                config.postnet_kernel,
                cin,
                cout,
                rng,
            )?);
        }
        Ok(Decoder {
            config: config.clone(),
            prenet,
            lstm1,
            lstm2,
            attention,
            frame_projection,
            stop,
            postnet,
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn initial_state(&self, g: &mut Graph, memory: Var) -> Result<DecoderState> {
        let shape = g.shape(memory);
        if shape.len() != 2 || shape[0] == 0 || shape[1] != self.config.memory_dim {
            return Err(Error::Input(format!(
                "decoder memory must be [length > 0, {}], got {shape:?}",
                self.config.memory_dim
            )));
        }
        Ok(DecoderState {
            lstm1: self.lstm1.zero_state(g),
            lstm2: self.lstm2.zero_state(g),
            attention: self.attention.init_state(g, memory)?,
            context: g.constant(Tensor::zeros(&[1, self.config.memory_dim])),
        })
    }

    pub fn prenet(&self, g: &mut Graph, store: &ParamStore, frame: Var) -> Result<Var> {
        let mut x = frame;
        for layer in &self.prenet {
            x = layer.forward(g, store, x)?;
            x = g.relu(x)?;
            x = g.dropout(x, self.config.prenet_dropout)?;
        }
        Ok(x)
    }

    /// One decoder step from the previous frame `[1, num_mels]`.
    pub fn step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        state: DecoderState,
        prev_frame: Var,
    ) -> Result<StepOutput> {
        let p = self.prenet(g, store, prev_frame)?;
        let x1 = g.concat(&[p, state.context], 1)?;
        let lstm1 = self.lstm1.step(g, store, x1, state.lstm1)?;
        let att = self.attention.step(g, store, state.attention, lstm1.h)?;
        let x2 = g.concat(&[lstm1.h, att.context], 1)?;
        let lstm2 = self.lstm2.step(g, store, x2, state.lstm2)?;
        let out = g.concat(&[lstm2.h, att.context], 1)?;
        let flat = self.frame_projection.forward(g, store, out)?;
        let frames = g.reshape(
            flat,
            vec![self.config.reduction_factor, self.config.num_mels],
        )?;
        let stop_logits = self.stop.forward(g, store, out)?;
        Ok(StepOutput {
            frames,
            stop_logits,
            alignment: att.weights,
            state: DecoderState {
                lstm1,
                lstm2,
                attention: att.state,
                context: att.context,
            },
        })
    }

    /// Residual convolutional refinement of `[T, num_mels]` frames.
    pub fn postnet(&self, g: &mut Graph, store: &ParamStore, mel: Var) -> Result<Var> {
        let mut x = mel;
        let last = self.postnet.len().saturating_sub(1);
        for (i, conv) in self.postnet.iter().enumerate() {
            x = conv.forward(g, store, x)?;
            if i < last {
                x = g.tanh(x)?;
            }
        }
        if self.postnet.is_empty() {
            return Ok(mel);
        }
        g.add(mel, x)
    }

    /// Runs one step per group of `r` target frames, feeding ground truth back.
    pub fn teacher_forced_forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        memory: Var,
        target: &MelSpectrogram,
    ) -> Result<DecoderOutput> {
        let (t_len, m, r) = (
            target.num_frames(),
            self.config.num_mels,
            self.config.reduction_factor,
        );
        if t_len == 0 {
            return Err(Error::Input("empty target spectrogram".into()));
        }
        if target.num_mels() != m {
            return Err(Error::shape(
                "teacher_forced_forward",
                format!(
                    "target has {} bands, decoder expects {m}",
                    target.num_mels()
                ),
            ));
        }
        let mut state = self.initial_state(g, memory)?;
        let steps = t_len.div_ceil(r);
        let mut frames = Vec::with_capacity(steps);
        let mut stops = Vec::with_capacity(steps);
        let mut alignments = Vec::with_capacity(steps);
        let mut means = Vec::with_capacity(steps);
        for s in 0..steps {
            let prev = if s == 0 {
                Tensor::zeros(&[1, m])
            } else {
                target.frames.slice(0, s * r - 1, s * r)?
            };
            let prev = g.constant(prev);
            let out = self.step(g, store, state, prev)?;
            state = out.state;
            frames.push(out.frames);
            stops.push(out.stop_logits);
            alignments.push(g.value(out.alignment).clone());
            means.push(state.attention.mean_values(g));
        }
        let pre = g.concat(&frames, 0)?;
        let pre_mel = g.slice_rows(pre, 0, t_len)?;
        let stop = g.concat(&stops, 1)?;
        let stop_logits = g.slice_cols(stop, 0, t_len)?;
        let post_mel = self.postnet(g, store, pre_mel)?;
        Ok(DecoderOutput {
            pre_mel,
            post_mel,
            stop_logits,
            alignments,
            means,
        })
    }

    /// Pre-postnet MSE + post-postnet MSE + stop-token cross-entropy.
    /// The stop target is 1 on the final frame only.
    pub fn loss(
        &self,
        g: &mut Graph,
        output: &DecoderOutput,
        target: &MelSpectrogram,
    ) -> Result<Var> {
        let t_len = target.num_frames();
        let mut stop_targets = vec![0.0; t_len];
        stop_targets[t_len - 1] = 1.0;
        let pre = g.mse(output.pre_mel, &target.frames)?;
        let post = g.mse(output.post_mel, &target.frames)?;
        let stop = g.bce_with_logits(output.stop_logits, &stop_targets)?;
        let mel = g.add(pre, post)?;
        g.add(mel, stop)
    }

    /// Feeds its own predictions back until a stop probability in the current
    /// step exceeds the threshold, or `max_steps` steps have run.
    pub fn infer(&self, g: &mut Graph, store: &ParamStore, memory: Var) -> Result<Inference> {
        let (m, r) = (self.config.num_mels, self.config.reduction_factor);
        let mut state = self.initial_state(g, memory)?;
        let mut prev = g.constant(Tensor::zeros(&[1, m]));
        let mut frames = Vec::new();
        let mut stop_probabilities = Vec::new();
        let mut alignments = Vec::new();
        let mut means = Vec::new();
        let mut stopped = false;
        while frames.len() < self.config.max_steps {
            let out = self.step(g, store, state, prev)?;
            state = out.state;
            frames.push(out.frames);
            alignments.push(g.value(out.alignment).clone());
            means.push(state.attention.mean_values(g));
            let probs: Vec<f64> = g
                .value(out.stop_logits)
                .data()
                .iter()
                .map(|&z| crate::numcore::kernels::sigmoid(z))
                .collect();
            stop_probabilities.extend_from_slice(&probs);
            // detach: inference never back-propagates through earlier steps
            let last = g.value(out.frames).slice(0, r - 1, r)?;
            prev = g.constant(last);
            if probs.iter().any(|&p| p > self.config.stop_threshold) {
                stopped = true;
                break;
            }
        }
        let steps = frames.len();
        let pre = g.concat(&frames, 0)?;
        let post = self.postnet(g, store, pre)?;
        Ok(Inference {
            mel: g.value(post).clone(),
            pre_mel: g.value(pre).clone(),
            stop_probabilities,
            alignments,
            means,
            steps,
            stopped,
        })
    }
}

#[cfg(test)]
mod tests;
