//! Trains the three systems briefly on a toy corpus, evaluates them on
//! held-out utterances and writes the MCD, correlation and diversity tables.
//!
//! cargo run --release --example evaluate_systems -- [steps] [out_dir]

use std::path::PathBuf;

use sentctx::context::AggregationMode;
use sentctx::harness::{
    evaluate, generate_toy_corpus, train, EvalOptions, Model, Preset, TrainingConfig,
};

fn main() -> sentctx::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let steps = args.first().and_then(|s| s.parse().ok()).unwrap_or(200);
    let out = PathBuf::from(args.get(1).map_or("evaluate_out", String::as_str));

    let corpus = generate_toy_corpus(12, 7)?;
    let utterances = corpus.to_utterances()?;
    let (train_set, test_set) = utterances.split_at(9);

    let mut systems: Vec<(String, Model)> = Vec::new();
    for mode in AggregationMode::ALL {
        let mut config = TrainingConfig::new(Preset::Toy, mode);
        config.max_steps = steps;
        let (model, report) = train(&config, &corpus.vocab, train_set, None)?;
        println!(
            "{}: final batch loss {:.4}",
            mode.system_name(),
            report.losses.last().map_or(f64::NAN, |l| l.1)
        );
        systems.push((mode.system_name().to_string(), model));
    }
    let refs: Vec<(&str, &Model)> = systems.iter().map(|(n, m)| (n.as_str(), m)).collect();
    let report = evaluate(&refs, test_set, &EvalOptions::default())?;
    for table in [
        report.mcd_table(),
        report.correlation_table(),
        report.diversity_table(),
    ]
    .into_iter()
    .flatten()
    {
        println!("{table}");
    }
    for path in report.write_tables(&out)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
