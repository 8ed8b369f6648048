//! Fixtures shared by the criterion benches.

use polyfair_core::encoder::{init_params, EncoderDims, EncoderMode, EncoderParams, Vocab};
use polyfair_core::synth::{generate, CorpusSpec};
use polyfair_core::trainer::evaluate;
use polyfair_core::{Dataset, PredictionRecord};

/// The default five-language corpus, scaled to `per_language` samples each.
pub fn corpus(per_language: usize, seed: u64) -> Dataset {
    let mut spec = CorpusSpec::default();
    for l in &mut spec.languages {
        l.samples = per_language;
    }
    generate(&spec, seed).expect("default spec is valid")
}

pub fn params(dataset: &Dataset, dim: usize) -> EncoderParams {
    let dims = EncoderDims {
        embed: dim,
        hidden: dim,
        classes: dataset.num_classes,
    };
    init_params(Vocab::from_dataset(dataset), dims, EncoderMode::Projected, 0).expect("valid dims")
}

/// Predictions of a freshly initialized model with a nudged classifier bias,
/// so both classes occur.
pub fn predictions(dataset: &Dataset) -> Vec<PredictionRecord> {
    let mut p = params(dataset, 16);
    p.classifier_mut().0.fill(0.05);
    p.classifier_mut().0.row_mut(0).fill(-0.05);
    evaluate(&p, dataset, 1)
}
