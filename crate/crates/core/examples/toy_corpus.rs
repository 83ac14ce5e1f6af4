//! Generates the synthetic corpus and writes it to disk in the layout the
//! training and evaluation commands read.
//!
//! cargo run --release --example toy_corpus -- [utterances] [out_dir]

use std::path::PathBuf;

use sentctx::harness::{generate_toy_corpus, load_corpus, toy_symbol, MANIFEST_FILE, TOY_SYMBOLS};

fn main() -> sentctx::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let count = args.first().and_then(|s| s.parse().ok()).unwrap_or(10);
    let out = PathBuf::from(args.get(1).map_or("toy_corpus", String::as_str));

    for (i, s) in TOY_SYMBOLS.iter().enumerate() {
        let sym = toy_symbol(i);
        println!(
            "{s}: f0 {:.0} Hz, amplitude {:.2}, base {} frames",
            sym.f0, sym.amplitude, sym.base_frames
        );
    }
    let corpus = generate_toy_corpus(count, 0)?;
    for u in corpus.utterances.iter().take(3) {
        println!(
            "{}: symbols {:?} durations {:?} ({} frames)",
            u.id,
            u.symbols,
            u.durations,
            u.mel.num_frames()
        );
    }
    corpus.write(&out)?;
    let (vocab, utterances) = load_corpus(out.join(MANIFEST_FILE), None)?;
    println!(
        "reloaded {} utterances over {} symbols from {}",
        utterances.len(),
        vocab.len(),
        out.display()
    );
    Ok(())
}
