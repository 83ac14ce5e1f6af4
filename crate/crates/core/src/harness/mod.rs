//! Training, toy corpus, checkpoints, configuration and evaluation for the
//! SA / SA-DA / SA-WA systems.

mod checkpoint;
mod config;
mod corpus;
mod eval;
mod gradcheck;
mod model;
mod train;

pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint,
};
pub use config::{parse_key_values, ModelConfig, Preset, TrainingConfig};
pub use corpus::{
    generate_toy_corpus, load_corpus, toy_symbol, CorpusManifest, ManifestEntry, ToyCorpus,
    ToySymbol, ToyUtterance, Utterance, MANIFEST_FILE, TOY_MAX_LENGTH, TOY_MIN_LENGTH,
    TOY_SAMPLE_RATE, TOY_SYMBOLS, VOCAB_FILE,
};
pub use eval::{
    attention_durations, evaluate, mel_like, mel_mcd, synthesize_to_files, synthesize_utterance,
    EvalOptions, EvalReport, Metric, SynthesisOutput, SystemOutput, SystemScores, CEPSTRUM_ORDER,
    CORRELATION_TABLE, DIVERSITY_TABLE, MCD_TABLE,
};
pub use gradcheck::{module_gradient_checks, ModuleCheck};
pub use model::{Encoded, LossBreakdown, Model, CONTEXT_PREFIX, DECODER_PREFIX, ENCODER_PREFIX};
pub use train::{
    teacher_forced_losses, train, train_model, Adam, TrainingReport, FINAL_CHECKPOINT,
    LOSS_LOG_FILE,
};
