//! Trains SA and SA-WA on the same toy corpus for several seeds and compares
//! their teacher-forced loss on held-out utterances.
//!
//! cargo run --release --example compare_modes -- [train_utts] [held_out] [steps] [seeds]

use sentctx::context::AggregationMode;
use sentctx::harness::{generate_toy_corpus, teacher_forced_losses, train, Preset, TrainingConfig};

fn main() -> sentctx::Result<()> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|s| s.parse().ok())
        .collect();
    let arg = |i: usize, default: usize| args.get(i).copied().unwrap_or(default);
    let (n_train, n_held, steps, seeds) = (arg(0, 10), arg(1, 4), arg(2, 1000), arg(3, 3));

    let corpus = generate_toy_corpus(n_train + n_held, 7)?;
    let utterances = corpus.to_utterances()?;
    let (train_set, held_out) = utterances.split_at(n_train);
    let mut wins = 0;
    for seed in 0..seeds as u64 {
        let mut losses = Vec::new();
        for mode in [AggregationMode::None, AggregationMode::Weighted] {
            let mut config = TrainingConfig::new(Preset::Toy, mode);
            config.max_steps = steps;
            config.seed = seed;
            let (model, _) = train(&config, &corpus.vocab, train_set, None)?;
            let fit = teacher_forced_losses(&model, train_set)?;
            let val = teacher_forced_losses(&model, held_out)?;
            println!(
                "seed {seed} {:6} train {:.4} held-out {:.4} (mel {:.4}, stop {:.4})",
                mode.system_name(),
                fit.total(),
                val.total(),
                val.mel(),
                val.stop
            );
            losses.push(val.total());
        }
        wins += usize::from(losses[1] <= losses[0]);
    }
    println!("SA-WA <= SA in {wins}/{seeds} seeds");
    Ok(())
}
