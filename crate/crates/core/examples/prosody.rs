//! Phoneme-level prosody of toy utterances from their exact alignments:
//! relative energy, duration and mean F0, plus the correlation and
//! diversity statistics used in evaluation.
//!
//! cargo run --release --example prosody

use sentctx::features::AnalysisConfig;
use sentctx::harness::generate_toy_corpus;
use sentctx::prosody::{
    attribute_correlation, attribute_diversity, extract_prosody_attributes, Attribute,
    CorrelationMode, PitchConfig,
};

fn main() -> sentctx::Result<()> {
    let corpus = generate_toy_corpus(4, 5)?;
    let mut all = Vec::new();
    for utt in &corpus.utterances {
        let grid = AnalysisConfig::new(utt.wav.sample_rate);
        let attrs =
            extract_prosody_attributes(&utt.wav, &utt.alignment, &grid, &PitchConfig::default())?;
        println!("{}:", utt.id);
        for p in &attrs.phonemes {
            println!(
                "  {:2} energy {:5.2} dur {:3} frames f0 {}",
                p.label,
                p.relative_energy,
                p.duration,
                p.mean_f0.map_or("-".to_string(), |f| format!("{f:.1} Hz"))
            );
        }
        all.push(attrs);
    }
    for attribute in Attribute::ALL {
        let self_corr = attribute_correlation(&all, &all, attribute, CorrelationMode::Pooled)?;
        println!(
            "{:5} diversity {:.3}, self-correlation {self_corr:.3}",
            attribute.heading(),
            attribute_diversity(&all, attribute)?
        );
    }
    Ok(())
}
