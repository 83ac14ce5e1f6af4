//! Instantiates the paper-scale weighted-aggregation model and lists its
//! parameter blocks and the shape of the layer-aggregation weights.
//!
//! cargo run --release --example paper_shapes

use sentctx::context::AggregationMode;
use sentctx::encoder::Vocabulary;
use sentctx::harness::{Model, ModelConfig, Preset};
use sentctx::numcore::Graph;

fn main() -> sentctx::Result<()> {
    let vocab = Vocabulary::new((0..60).map(|i| format!("p{i}")))?;
    let config = ModelConfig::preset(Preset::Paper, AggregationMode::Weighted, vocab.len());
    let model = Model::new(config, vocab, 0)?;
    for p in model.store.iter() {
        if p.name.starts_with("encoder.block1.")
            || p.name.starts_with("context.")
            || p.name.starts_with("decoder.")
        {
            println!("{:40} {:?}", p.name, p.tensor.shape());
        }
    }
    for prefix in ["encoder.", "context.", "decoder."] {
        println!(
            "{prefix:10} {:>10} parameters",
            model.store.num_elements_with_prefix(prefix)
        );
    }
    let mut g = Graph::new();
    let encoded = model.encode(&mut g, &model.parse_text("p1 p2 p3")?)?;
    if let Some(w) = encoded.context.layer_weights {
        println!("layer weights {:?} (heads x memory slots)", w.shape());
    }
    Ok(())
}
