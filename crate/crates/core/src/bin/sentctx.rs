//! Command-line front end. On failure prints one line,
//! `error[<category>]: <message>`, to stderr and exits nonzero.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sentctx::context::AggregationMode;
use sentctx::encoder::Vocabulary;
use sentctx::harness::{
    evaluate, generate_toy_corpus, load_checkpoint, load_corpus, module_gradient_checks,
    synthesize_to_files, teacher_forced_losses, train, EvalOptions, Metric, Model, Preset,
    TrainingConfig, FINAL_CHECKPOINT, MANIFEST_FILE,
};
use sentctx::numcore::GradCheckOptions;
use sentctx::prosody::CorrelationMode;
use sentctx::{Error, Result};

#[derive(Parser)]
#[command(
    name = "sentctx",
    version,
    about = "Sentential-context TTS acoustic model: train, synthesize, evaluate"
)]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one system on a corpus manifest.
    Train(TrainArgs),
    /// Synthesize a mel spectrogram (and optionally a waveform) from a symbol file.
    Synth(SynthArgs),
    /// Synthesize a test set with one or more checkpoints and write metric tables.
    Eval(EvalArgs),
    /// Write a synthetic corpus with exact phoneme alignments.
    GenCorpus(GenCorpusArgs),
    /// Compare analytic and finite-difference gradients of every module.
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Defaults to vocab.txt beside the manifest.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// `key = value` settings file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    preset: Option<Preset>,
    /// none, direct or weighted.
    #[arg(long)]
    mode: Option<AggregationMode>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Extra `key=value` setting; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    settings: Vec<String>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    symbols: PathBuf,
    #[arg(long)]
    mel: PathBuf,
    #[arg(long)]
    wav: Option<PathBuf>,
    /// Vocabulary the symbol file was written against; must match the checkpoint.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    griffin_lim_iters: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// `PATH` or `NAME=PATH`; repeatable. Unnamed checkpoints are labelled by their mode (SA, SA-DA, SA-WA).
    #[arg(long, required = true)]
    checkpoint: Vec<String>,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Comma-separated subset of mcd, prosody_corr, diversity.
    #[arg(long, default_value = "mcd,prosody_corr,diversity")]
    metrics: String,
    #[arg(long)]
    out: PathBuf,
    /// pooled or per-utterance.
    #[arg(long, default_value = "pooled")]
    correlation: CorrelationMode,
    /// Score the references against themselves.
    #[arg(long)]
    inject_references: bool,
    #[arg(long, default_value = "toy")]
    corpus_name: String,
    #[arg(long, default_value_t = 32)]
    griffin_lim_iters: usize,
}

#[derive(Args)]
struct GenCorpusArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    utterances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn run_train(a: TrainArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(path) => TrainingConfig::load(path)?,
        None => TrainingConfig::new(
            a.preset.unwrap_or(Preset::Toy),
            a.mode.unwrap_or(AggregationMode::None),
        ),
    };
    if let Some(preset) = a.preset {
        config.preset = preset;
    }
    if let Some(mode) = a.mode {
        config.mode = mode;
    }
    if let Some(v) = a.steps {
        config.max_steps = v;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    if let Some(v) = a.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = a.checkpoint_every {
        config.checkpoint_every = v;
    }
    for s in &a.settings {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
        config.set(k.trim(), v.trim())?;
    }
    let (vocab, utterances) = load_corpus(&a.manifest, a.vocab.as_deref())?;
    let (model, report) = train(&config, &vocab, &utterances, Some(&a.out))?;
    let losses = teacher_forced_losses(&model, &utterances)?;
    println!(
        "trained {} for {} steps: final batch loss {:.6}, teacher-forced mel loss {:.6}; checkpoint {}",
        config.mode.system_name(),
        config.max_steps,
        report.losses.last().map_or(f64::NAN, |l| l.1),
        losses.mel(),
        a.out.join(FINAL_CHECKPOINT).display()
    );
    Ok(())
}

fn run_synth(a: SynthArgs) -> Result<()> {
    let (model, _) = load_checkpoint(&a.checkpoint)?;
    if let Some(path) = &a.vocab {
        model.check_vocabulary(&Vocabulary::load(path)?)?;
    }
    let out = synthesize_to_files(
        &model,
        &a.symbols,
        &a.mel,
        a.wav.as_deref(),
        a.griffin_lim_iters,
    )?;
    println!(
        "{} frames in {} steps ({}) -> {}",
        out.mel.num_frames(),
        out.steps,
        if out.stopped {
            "stop token"
        } else {
            "step cap"
        },
        a.mel.display()
    );
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let metrics = a
        .metrics
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<Result<Vec<Metric>>>()?;
    let (vocab, utterances) = load_corpus(&a.manifest, a.vocab.as_deref())?;
    let mut systems: Vec<(String, Model)> = Vec::new();
    for spec in &a.checkpoint {
        let (name, path) = match spec.split_once('=') {
            Some((n, p)) => (Some(n.to_string()), Path::new(p)),
            None => (None, Path::new(spec.as_str())),
        };
        let (model, _) = load_checkpoint(path)?;
        model.check_vocabulary(&vocab)?;
        let name = name.unwrap_or_else(|| model.config.context_mode.system_name().to_string());
        systems.push((name, model));
    }
    let options = EvalOptions {
        metrics,
        correlation: a.correlation,
        griffin_lim_iterations: a.griffin_lim_iters,
        inject_references: a.inject_references,
        corpus_name: a.corpus_name,
        ..Default::default()
    };
    let refs: Vec<(&str, &Model)> = systems.iter().map(|(n, m)| (n.as_str(), m)).collect();
    let report = evaluate(&refs, &utterances, &options)?;
    for path in report.write_tables(&a.out)? {
        println!("{}", path.display());
        print!(
            "{}",
            std::fs::read_to_string(&path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e
            })?
        );
    }
    Ok(())
}

fn run_gen_corpus(a: GenCorpusArgs) -> Result<()> {
    let corpus = generate_toy_corpus(a.utterances, a.seed)?;
    corpus.write(&a.out)?;
    let frames: usize = corpus.utterances.iter().map(|u| u.mel.num_frames()).sum();
    println!(
        "{} utterances, {frames} frames -> {}",
        corpus.utterances.len(),
        a.out.join(MANIFEST_FILE).display()
    );
    Ok(())
}

/// `Ok(false)` when some module fails the check.
fn run_grad_check(a: GradCheckArgs) -> Result<bool> {
    let opts = GradCheckOptions {
        seed: a.seed,
        ..Default::default()
    };
    let checks = module_gradient_checks(a.seed, &opts)?;
    let mut ok = true;
    for c in &checks {
        let status = if c.report.passed() { "PASS" } else { "FAIL" };
        println!(
            "{status}\t{}\tmax_rel_error={:.3e}",
            c.module,
            c.report.max_rel_error()
        );
        ok &= c.report.passed();
    }
    Ok(ok)
}

fn fail(category: &str, message: &str) -> ExitCode {
    eprintln!("error[{category}]: {}", message.replace('\n', " "));
    ExitCode::from(1)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let summary: Vec<&str> = text
                .lines()
                .map(str::trim)
                .take_while(|l| !l.starts_with("Usage:"))
                .filter(|l| !l.is_empty())
                .collect();
            eprintln!(
                "error[usage]: {}",
                summary.join(" ").trim_start_matches("error: ")
            );
            return ExitCode::from(2);
        }
    };
    if cli.verbose {
        tracing_subscriber::fmt()
            .with_writer(std::io::stderr)
            .with_target(false)
            .init();
    }
    let result = match cli.command {
        Command::Train(a) => run_train(a),
        Command::Synth(a) => run_synth(a),
        Command::Eval(a) => run_eval(a),
        Command::GenCorpus(a) => run_gen_corpus(a),
        Command::GradCheck(a) => match run_grad_check(a) {
            Ok(true) => Ok(()),
            Ok(false) => return fail("numeric", "gradient check failed"),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.category(), &e.to_string()),
    }
}
