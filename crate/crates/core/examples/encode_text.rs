//! Runs the toy encoder over a symbol string and prints the per-layer
//! outputs and the attention of the last block.
//!
//! cargo run --release --example encode_text -- "a m i"

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sentctx::encoder::{Encoder, EncoderConfig, Vocabulary};
use sentctx::harness::TOY_SYMBOLS;
use sentctx::numcore::{Graph, ParamStore};

fn main() -> sentctx::Result<()> {
    let text = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "m a n i s".into());
    let vocab = Vocabulary::new(TOY_SYMBOLS.iter().copied())?;
    let sequence = vocab.parse_sequence(&text)?;

    let mut store = ParamStore::new();
    let encoder = Encoder::new(
        &mut store,
        &EncoderConfig::toy(vocab.len()),
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    let mut g = Graph::new();
    let stack = encoder.encode(&mut g, &store, &sequence)?;

    println!(
        "{} symbols, {} parameters",
        sequence.len(),
        store.num_elements()
    );
    for (l, h) in stack.values(&g).iter().enumerate() {
        let norms: Vec<String> = (0..h.rows())
            .map(|t| {
                format!(
                    "{:.2}",
                    h.row_slice(t).iter().map(|v| v * v).sum::<f64>().sqrt()
                )
            })
            .collect();
        println!("H{l} {:?} row norms [{}]", h.shape(), norms.join(" "));
    }
    if let Some(heads) = stack.attention.last() {
        println!("last block, head 0 attention:");
        for t in 0..heads[0].rows() {
            let row: Vec<String> = heads[0]
                .row_slice(t)
                .iter()
                .map(|w| format!("{w:.2}"))
                .collect();
            println!("  {}", row.join(" "));
        }
    }
    Ok(())
}
