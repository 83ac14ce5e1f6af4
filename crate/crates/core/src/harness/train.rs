use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::save_checkpoint;
use super::config::TrainingConfig;
use super::corpus::Utterance;
use super::model::{LossBreakdown, Model};
use crate::encoder::Vocabulary;
use crate::error::{Error, Result};
use crate::numcore::Graph;

pub const LOSS_LOG_FILE: &str = "loss.tsv";
pub const FINAL_CHECKPOINT: &str = "final.sckp";

/// Adaptive-moment optimiser state, one moment pair per parameter block.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(model: &Model) -> Self {
        let zeros: Vec<Vec<f64>> = model
            .store
            .iter()
            .map(|p| vec![0.0; p.tensor.numel()])
            .collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// Clips the accumulated gradient to `clip_norm` and applies one update.
    /// Returns the gradient norm before clipping.
    pub fn step(&mut self, model: &mut Model, config: &TrainingConfig, lr: f64) -> f64 {
        let norm = model.store.grad_norm();
        let clip = if norm > config.clip_norm {
            config.clip_norm / norm
        } else {
            1.0
        };
        self.t += 1;
        let (b1, b2) = (config.beta1, config.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for ((p, m), v) in model.store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let Some(grad) = p.tensor.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            for (i, (x, g)) in p.tensor.data_mut().iter_mut().zip(grad).enumerate() {
                let g = g * clip;
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                *x -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + config.epsilon);
            }
        }
        norm
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainingReport {
    /// Mean batch loss after each step, `(step, loss)` with steps from 1.
    pub losses: Vec<(usize, f64)>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainingReport {
    /// `step<TAB>loss` lines.
    pub fn loss_log(&self) -> String {
        let mut s = String::new();
        for (step, loss) in &self.losses {
            writeln!(s, "{step}\t{loss}").unwrap();
        }
        s
    }
}

/// Mean teacher-forced loss parts over `utterances`, without dropout.
pub fn teacher_forced_losses(model: &Model, utterances: &[Utterance]) -> Result<LossBreakdown> {
    if utterances.is_empty() {
        return Err(Error::Input("no utterances to evaluate".into()));
    }
    let mut sum = LossBreakdown {
        pre_mel: 0.0,
        post_mel: 0.0,
        stop: 0.0,
    };
    for u in utterances {
        let l = model.evaluate_loss(&u.text, &u.mel)?;
        sum.pre_mel += l.pre_mel;
        sum.post_mel += l.post_mel;
        sum.stop += l.stop;
    }
    let n = utterances.len() as f64;
    Ok(LossBreakdown {
        pre_mel: sum.pre_mel / n,
        post_mel: sum.post_mel / n,
        stop: sum.stop / n,
    })
}

/// Builds a fresh model for `config` and trains it. See [`train_model`].
pub fn train(
    config: &TrainingConfig,
    vocab: &Vocabulary,
    utterances: &[Utterance],
    out_dir: Option<&Path>,
) -> Result<(Model, TrainingReport)> {
    let mut model_config = config.model_config(vocab.len())?;
    if let Some(first) = utterances.first() {
        model_config.sample_rate = first.mel.sample_rate;
        model_config.decoder.num_mels = first.mel.num_mels();
    }
    let mut model = Model::new(model_config, vocab.clone(), config.seed)?;
    let report = train_model(&mut model, config, utterances, out_dir)?;
    Ok((model, report))
}

/// Runs `config.max_steps` optimiser steps on `model`. Batches are drawn
/// from a per-epoch permutation; each utterance gets its own dropout seed.
/// Everything random derives from `config.seed`, so a rerun reproduces the
/// loss log bit for bit. With `out_dir`, the loss log, periodic checkpoints
/// and `final.sckp` are written there.
pub fn train_model(
    model: &mut Model,
    config: &TrainingConfig,
    utterances: &[Utterance],
    out_dir: Option<&Path>,
) -> Result<TrainingReport> {
    config.validate()?;
    if utterances.is_empty() {
        return Err(Error::Input("training manifest is empty".into()));
    }
    for u in utterances {
        if u.mel.num_mels() != model.config.decoder.num_mels
            || u.mel.sample_rate != model.config.sample_rate
        {
            return Err(Error::Input(format!(
                "utterance `{}` has {} bands at {} Hz, model expects {} at {} Hz",
                u.id,
                u.mel.num_mels(),
                u.mel.sample_rate,
                model.config.decoder.num_mels,
                model.config.sample_rate
            )));
        }
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    order_rng.set_stream(3);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(4);
    let mut adam = Adam::new(model);
    let mut report = TrainingReport::default();
    let mut order: Vec<usize> = Vec::new();
    let batch = config.batch_size.min(utterances.len());

    for step in 1..=config.max_steps {
        model.store.zero_grad();
        let mut total = 0.0;
        for _ in 0..batch {
            if order.is_empty() {
                order = (0..utterances.len()).collect();
                order.shuffle(&mut order_rng);
                order.reverse();
            }
            let u = &utterances[order.pop().unwrap()];
            let mut g = Graph::with_dropout(dropout_rng.random());
            let loss = match model.teacher_forced(&mut g, &u.text, &u.mel) {
                Ok((_, loss)) => loss,
                Err(Error::NonFinite { op }) => {
                    return Err(diverged(
                        model,
                        step,
                        format!("non-finite {op} on `{}`", u.id),
                    ))
                }
                Err(e) => return Err(e),
            };
            let loss = g.scale(loss, 1.0 / batch as f64)?;
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(diverged(model, step, format!("loss {value} on `{}`", u.id)));
            }
            total += value;
            g.backward(loss, &mut model.store)?;
        }
        let grad_norm = model.store.grad_norm();
        if !grad_norm.is_finite() {
            return Err(diverged(model, step, format!("gradient norm {grad_norm}")));
        }
        let lr = config.learning_rate_at(step);
        let norm = adam.step(model, config, lr);
        if let Some(block) = model.non_finite_block() {
            return Err(Error::Diverged {
                step,
                detail: format!("parameter block `{block}` became non-finite"),
            });
        }
        report.losses.push((step, total));
        if step % 100 == 0 || step == 1 {
            tracing::info!(step, loss = total, grad_norm = norm, lr, "train");
        }
        if let Some(dir) = out_dir {
            if config.checkpoint_every > 0
                && step % config.checkpoint_every == 0
                && step < config.max_steps
            {
                let path = dir.join(format!("step{step:06}.sckp"));
                save_checkpoint(&path, model, step)?;
                report.checkpoints.push(path);
            }
        }
    }
    if let Some(dir) = out_dir {
        let path = dir.join(FINAL_CHECKPOINT);
        save_checkpoint(&path, model, config.max_steps)?;
        report.checkpoints.push(path);
        let log = dir.join(LOSS_LOG_FILE);
        fs::write(&log, report.loss_log()).map_err(|e| Error::io(&log, e))?;
    }
    Ok(report)
}

fn diverged(model: &Model, step: usize, what: String) -> Error {
    let block = model.non_finite_block().map_or_else(
        || "no parameter block is non-finite yet".to_string(),
        |b| format!("first non-finite block `{b}`"),
    );
    Error::Diverged {
        step,
        detail: format!("{what}; {block}"),
    }
}
