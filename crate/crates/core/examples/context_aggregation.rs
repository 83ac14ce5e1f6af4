//! Extracts a context vector from every encoder layer and aggregates them
//! in both modes. For weighted aggregation the per-head attention over the
//! layer contexts is printed.
//!
//! cargo run --release --example context_aggregation -- "a m i"

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sentctx::context::{AggregationMode, ContextModule};
use sentctx::encoder::{Encoder, EncoderConfig, Vocabulary};
use sentctx::harness::{ModelConfig, Preset, TOY_SYMBOLS};
use sentctx::numcore::{Graph, ParamStore};

fn main() -> sentctx::Result<()> {
    let text = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "s a m e l o".into());
    let vocab = Vocabulary::new(TOY_SYMBOLS.iter().copied())?;
    let sequence = vocab.parse_sequence(&text)?;

    for mode in [AggregationMode::Direct, AggregationMode::Weighted] {
        let config = ModelConfig::preset(Preset::Toy, mode, vocab.len());
        let mut store = ParamStore::new();
        let encoder = Encoder::new(
            &mut store,
            &EncoderConfig::toy(vocab.len()),
            &mut ChaCha8Rng::seed_from_u64(0),
        )?;
        let context = ContextModule::new(
            &mut store,
            &config.context(),
            &mut ChaCha8Rng::seed_from_u64(1),
        )?;

        let mut g = Graph::new();
        let stack = encoder.encode(&mut g, &store, &sequence)?;
        let set = context.extract_all(&mut g, &store, &stack)?;
        let sentence = context.sentence_context(&mut g, &store, &stack)?;
        let fused = context.fuse_context(&mut g, &store, stack.top(), &sentence)?;

        println!(
            "{} ({mode}): {} layer contexts",
            mode.system_name(),
            set.contexts.len()
        );
        let g_vec = g.value(sentence.vector.expect("aggregating mode"));
        println!(
            "  g[..6] = {:?}",
            g_vec.data()[..6]
                .iter()
                .map(|v| (v * 1e3).round() / 1e3)
                .collect::<Vec<_>>()
        );
        println!("  fused memory {:?}", g.shape(fused));
        if let Some(w) = &sentence.layer_weights {
            println!("  attention of g^L over [g0 .. gL, gL]:");
            for h in 0..w.rows() {
                let row: Vec<String> = w.row_slice(h).iter().map(|x| format!("{x:.3}")).collect();
                println!("    head {h}: {}", row.join(" "));
            }
        }
    }
    Ok(())
}
