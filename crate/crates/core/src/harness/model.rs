use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::context::{ContextModule, SentenceContext};
use crate::decoder::{Decoder, DecoderOutput, Inference};
use crate::encoder::{Encoder, TextSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::features::MelSpectrogram;
use crate::numcore::{Graph, ParamStore, Var};

/// Parameter-name prefix of each module.
pub const ENCODER_PREFIX: &str = "encoder.";
pub const CONTEXT_PREFIX: &str = "context.";
pub const DECODER_PREFIX: &str = "decoder.";

/// Encoder, sentence-context module and decoder sharing one parameter store.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub context: ContextModule,
    pub decoder: Decoder,
}

/// Memory handed to the decoder plus the sentence context that shaped it.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub memory: Var,
    pub context: SentenceContext,
}

/// Scalar parts of the teacher-forced objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub pre_mel: f64,
    pub post_mel: f64,
    pub stop: f64,
}

impl LossBreakdown {
    pub fn mel(&self) -> f64 {
        self.pre_mel + self.post_mel
    }

    pub fn total(&self) -> f64 {
        self.mel() + self.stop
    }
}

impl Model {
    /// Each module draws its initial values from its own seeded stream, so
    /// the encoder and decoder start identical whatever the aggregation mode.
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        let mut config = config;
        config.encoder.vocab_size = vocab.len();
        config.validate()?;
        let stream = |n: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(n);
            rng
        };
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, &config.encoder, &mut stream(0))?;
        let context = ContextModule::new(&mut store, &config.context(), &mut stream(1))?;
        let decoder = Decoder::new(&mut store, &config.decoder, &mut stream(2))?;
        Ok(Model {
            config,
            vocab,
            store,
            encoder,
            context,
            decoder,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_elements()
    }

    pub fn parse_text(&self, text: &str) -> Result<TextSequence> {
        self.vocab.parse_sequence(text)
    }

    pub fn encode(&self, g: &mut Graph, text: &TextSequence) -> Result<Encoded> {
        let stack = self.encoder.encode(g, &self.store, text)?;
        let (context, memory) = self.context.forward(g, &self.store, &stack)?;
        Ok(Encoded { memory, context })
    }

    pub fn teacher_forced(
        &self,
        g: &mut Graph,
        text: &TextSequence,
        target: &MelSpectrogram,
    ) -> Result<(DecoderOutput, Var)> {
        let enc = self.encode(g, text)?;
        let out = self
            .decoder
            .teacher_forced_forward(g, &self.store, enc.memory, target)?;
        let loss = self.decoder.loss(g, &out, target)?;
        Ok((out, loss))
    }

    /// Teacher-forced loss parts without dropout.
    pub fn evaluate_loss(
        &self,
        text: &TextSequence,
        target: &MelSpectrogram,
    ) -> Result<LossBreakdown> {
        let mut g = Graph::new();
        let enc = self.encode(&mut g, text)?;
        let out = self
            .decoder
            .teacher_forced_forward(&mut g, &self.store, enc.memory, target)?;
        let pre = g.mse(out.pre_mel, &target.frames)?;
        let post = g.mse(out.post_mel, &target.frames)?;
        let t_len = target.num_frames();
        let mut stop_targets = vec![0.0; t_len];
        stop_targets[t_len - 1] = 1.0;
        let stop = g.bce_with_logits(out.stop_logits, &stop_targets)?;
        Ok(LossBreakdown {
            pre_mel: g.scalar(pre),
            post_mel: g.scalar(post),
            stop: g.scalar(stop),
        })
    }

    /// Free-running synthesis.
    pub fn synthesize(&self, text: &TextSequence) -> Result<Inference> {
        let mut g = Graph::new();
        let enc = self.encode(&mut g, text)?;
        self.decoder.infer(&mut g, &self.store, enc.memory)
    }

    /// Name of the first parameter block holding a non-finite value or
    /// gradient, if any.
    pub fn non_finite_block(&self) -> Option<String> {
        self.store
            .iter()
            .find(|p| {
                !p.tensor.is_finite()
                    || p.tensor
                        .grad()
                        .is_some_and(|g| g.iter().any(|v| !v.is_finite()))
            })
            .map(|p| p.name.clone())
    }

    pub fn check_vocabulary(&self, other: &Vocabulary) -> Result<()> {
        if &self.vocab != other {
            return Err(Error::Vocabulary(format!(
                "checkpoint vocabulary has {} symbols, corpus vocabulary {}; they differ",
                self.vocab.len(),
                other.len()
            )));
        }
        Ok(())
    }
}
