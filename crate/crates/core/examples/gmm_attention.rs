//! Steps an untrained GMM attention over a random memory and shows the
//! mixture means moving monotonically along the input.
//!
//! cargo run --release --example gmm_attention -- [steps]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sentctx::attention::{GmmAttention, GmmAttentionConfig};
use sentctx::numcore::{normal, Graph, ParamStore};

fn main() -> sentctx::Result<()> {
    let steps = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(12);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let config = GmmAttentionConfig::new(16);
    let mut store = ParamStore::new();
    let attention = GmmAttention::new(&mut store, "attention", &config, &mut rng)?;

    let mut g = Graph::new();
    let memory = g.constant(normal(&[8, 4], 1.0, &mut rng));
    let mut state = attention.init_state(&mut g, memory)?;
    for t in 0..steps {
        let query = g.constant(normal(&[1, 16], 1.0, &mut rng));
        let step = attention.step(&mut g, &store, state, query)?;
        let weights = g.value(step.weights);
        let bars: String = weights
            .data()
            .iter()
            .map(|w| [' ', '.', ':', '+', '#'][((w * 8.0).round() as usize).min(4)])
            .collect();
        let means: Vec<String> = step
            .state
            .mean_values(&g)
            .iter()
            .map(|m| format!("{m:.2}"))
            .collect();
        println!(
            "step {t:2} |{bars}| sum {:.3} means {}",
            weights.data().iter().sum::<f64>(),
            means.join(" ")
        );
        state = step.state;
    }
    Ok(())
}
