//! Fairness evaluation and contrastive debiasing for multilingual text classifiers.
//!
//! The crate has two halves. The evaluation half ([`metrics`]) turns prediction
//! records into per-language and cross-language fairness numbers: the monolingual
//! equality difference (MED), the multilingual equality difference (MUED), the
//! multilingual equality performance difference (MEPD) and strategy
//! destructiveness (SD). The training half ([`encoder`], [`contrastive`],
//! [`trainer`]) fits a small bag-of-embeddings classifier with a language-fusion
//! contrastive loss and a text-debiasing contrastive loss, on corpora produced
//! by [`synth`].

pub mod contrastive;
pub mod encoder;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod trainer;

pub use contrastive::{BatchView, LossBreakdown};
pub use encoder::{EncoderDims, EncoderMode, EncoderParams, Vocab};
pub use error::{Error, Result};
pub use metrics::{ConfusionCounts, MetricReport, Performance, SdMode};
pub use model::{AttributeSpec, Dataset, LossWeights, PredictionRecord, Sample, Split};
pub use synth::CorpusSpec;
pub use trainer::{TrainConfig, TrainHistory, TrainMode, TrainOutcome};
