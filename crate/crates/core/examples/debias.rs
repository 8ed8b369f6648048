//! Trains the baseline, language-fusion and full objectives on the default
//! biased corpus for a few seeds and prints test-split fairness numbers.
//!
//! cargo run --release -p polyfair-core --example debias -- [seeds]

use polyfair_core::synth::{generate, CorpusSpec};
use polyfair_core::trainer::{train, TrainConfig};
use polyfair_core::{LossWeights, Split};

fn main() -> polyfair_core::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let variants = [
        ("baseline", LossWeights::new(0.0, 0.0, 0.1)?),
        ("fusion", LossWeights::new(0.3, 0.0, 0.1)?),
        ("full", LossWeights::new(0.2, 0.3, 0.1)?),
    ];
    println!("{:>4} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}", "seed", "variant", "med_avg", "mued", "mepd", "macro_f", "loss_1", "loss_10");
    for seed in 0..seeds {
        let data = generate(&CorpusSpec::default(), seed)?;
        for (name, weights) in &variants {
            let config = TrainConfig {
                weights: *weights,
                seed,
                ..TrainConfig::default()
            };
            let out = train(&data, &config)?;
            let r = &out.reports[&Split::Test];
            let h = &out.models[0].history.epochs;
            println!(
                "{seed:>4} {name:>9} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
                r.aggregates.med_avg.unwrap_or(f64::NAN),
                r.aggregates.mued.unwrap_or(f64::NAN),
                r.aggregates.mepd,
                r.overall.macro_f,
                h[0].total,
                h[h.len() - 1].total
            );
        }
    }
    Ok(())
}
