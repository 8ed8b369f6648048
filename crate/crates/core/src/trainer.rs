//! Mini-batch training of the encoder on the combined objective.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contrastive::{classifier_forward, loss_and_gradient};
use crate::encoder::{init_params, EncoderDims, EncoderMode, EncoderParams, Vocab};
use crate::error::{Error, Result};
use crate::metrics::{full_report, MetricReport};
use crate::model::{validate_dataset, Dataset, LossWeights, PredictionRecord, Sample, Split};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// One model over all languages.
    #[default]
    Merge,
    /// One model per language.
    Individual,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    /// Every batch gets a proportional share of each (label, language, attribute value) stratum.
    #[default]
    Stratified,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
    pub mode: TrainMode,
    /// Sensitive attribute used for the debiasing positives and the reports.
    pub attribute: String,
    pub seed: u64,
    pub sampler: Sampler,
    /// Designated positive class for FPR-based metrics.
    pub positive: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub encoder_mode: EncoderMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-2,
            weights: LossWeights::default(),
            mode: TrainMode::Merge,
            attribute: "gender".into(),
            seed: 0,
            sampler: Sampler::Stratified,
            positive: 1,
            embed_dim: 32,
            hidden_dim: 32,
            encoder_mode: EncoderMode::Projected,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument("batch_size must be >= 2".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        self.weights.validate()
    }
}

/// Mean losses over the batches of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub l_lf: f64,
    pub l_td: f64,
    pub l_ce: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochLosses>,
    /// Final evaluation per held-out split.
    pub reports: BTreeMap<Split, MetricReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    /// `Some(lang)` in individual mode.
    pub language: Option<String>,
    pub params: EncoderParams,
    pub history: TrainHistory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub models: Vec<TrainedModel>,
    /// Predictions of the responsible model(s) per held-out split.
    pub predictions: BTreeMap<Split, Vec<PredictionRecord>>,
    /// Reports over all languages per held-out split.
    pub reports: BTreeMap<Split, MetricReport>,
}

/// Splits the dataset's samples into batches of indices.
///
/// The stratified sampler spreads every (label, language, attribute value)
/// stratum evenly across the epoch, so each batch holds roughly its share of
/// every stratum and in-batch contrastive positives exist whenever the data has
/// them. The final short batch is merged into its predecessor rather than left
/// with a single sample.
pub fn make_batches(
    dataset: &Dataset,
    batch_size: usize,
    sampler: Sampler,
    seed: u64,
    attribute: &str,
) -> Result<Vec<Vec<usize>>> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot batch an empty dataset".into()));
    }
    if batch_size < 2 {
        return Err(Error::InvalidArgument("batch_size must be >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order: Vec<usize> = match sampler {
        Sampler::Uniform => {
            let mut o: Vec<usize> = (0..dataset.len()).collect();
            o.shuffle(&mut rng);
            o
        }
        Sampler::Stratified => stratified_order(&dataset.samples, attribute, &mut rng),
    };
    if batch_size > dataset.len() {
        log::warn!("batch size {batch_size} exceeds dataset size {}; using one batch", dataset.len());
        return Ok(vec![order]);
    }
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        let tail = batches.pop().unwrap_or_default();
        if let Some(prev) = batches.last_mut() {
            prev.extend(tail);
        }
    }
    Ok(batches)
}

fn stratified_order(samples: &[Sample], attribute: &str, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut strata: BTreeMap<(usize, &str, &str), Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        let value = s.attrs.get(attribute).map(String::as_str).unwrap_or("");
        strata.entry((s.label, s.lang.as_str(), value)).or_default().push(i);
    }
    // systematic placement: member r of a stratum of size m sits at (r + u) / m
    let mut keyed: Vec<(f64, u64, usize)> = Vec::with_capacity(samples.len());
    for members in strata.values_mut() {
        members.shuffle(rng);
        let m = members.len() as f64;
        let offset: f64 = rng.random();
        for (r, &i) in members.iter().enumerate() {
            keyed.push(((r as f64 + offset) / m, rng.random(), i));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, _, i)| i).collect()
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grad.len() || state.m.len() != grad.len() || state.v.len() != grad.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} gradient entries, state {}",
            params.len(),
            grad.len(),
            state.m.len()
        )));
    }
    if let Some(j) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite gradient at index {j}: {}", grad[j])));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// One prediction record per sample: argmax class and positive-class probability.
///
/// Only the tokens reach the model; language and attributes are copied onto the
/// records for grouping.
pub fn evaluate(params: &EncoderParams, dataset: &Dataset, positive: usize) -> Vec<PredictionRecord> {
    let (w, b) = params.classifier();
    dataset
        .samples
        .iter()
        .map(|s| {
            let p = classifier_forward(params.encode(&s.tokens).view(), w, b);
            let pred = p
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (c, &x)| if x > best.1 { (c, x) } else { best })
                .0;
            PredictionRecord {
                id: s.id.clone(),
                lang: s.lang.clone(),
                attrs: s.attrs.clone(),
                gold: s.label,
                pred,
                score: p.get(positive).copied().unwrap_or(0.0),
            }
        })
        .collect()
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Fits one parameter set on `train`, returning it with its per-epoch losses.
fn fit(train: &Dataset, config: &TrainConfig, seed: u64) -> Result<(EncoderParams, Vec<EpochLosses>)> {
    let dims = EncoderDims {
        embed: config.embed_dim,
        hidden: config.hidden_dim,
        classes: train.num_classes,
    };
    let mut params = init_params(Vocab::from_dataset(train), dims, config.encoder_mode, seed)?;
    let mut adam = AdamState::new(params.num_params());
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let batches = make_batches(train, config.batch_size, config.sampler, epoch_seed(seed, epoch), &config.attribute)?;
        let mut sums = [0.0; 4];
        for (bi, batch) in batches.iter().enumerate() {
            let refs: Vec<&Sample> = batch.iter().map(|&i| &train.samples[i]).collect();
            let out = loss_and_gradient(&refs, &params, &config.weights, &config.attribute)?;
            if !out.total.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: bi,
                    what: format!("loss {}", out.total),
                });
            }
            adam_step(params.as_flat_mut(), &out.gradient, &mut adam, config.learning_rate).map_err(|e| {
                Error::NonFinite {
                    epoch,
                    batch: bi,
                    what: e.to_string(),
                }
            })?;
            for (s, x) in sums.iter_mut().zip([out.l_lf, out.l_td, out.l_ce, out.total]) {
                *s += x;
            }
        }
        let n = batches.len() as f64;
        let e = EpochLosses {
            epoch: epoch + 1,
            l_lf: sums[0] / n,
            l_td: sums[1] / n,
            l_ce: sums[2] / n,
            total: sums[3] / n,
        };
        log::debug!("epoch {}: total {:.6}", e.epoch, e.total);
        epochs.push(e);
    }
    Ok((params, epochs))
}

fn held_out_reports(
    predictions: &BTreeMap<Split, Vec<PredictionRecord>>,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<BTreeMap<Split, MetricReport>> {
    let spec = dataset
        .attribute(&config.attribute)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown attribute {:?}", config.attribute)))?;
    predictions
        .iter()
        .filter(|(_, recs)| !recs.is_empty())
        .map(|(split, recs)| Ok((*split, full_report(recs, spec, config.positive, &dataset.languages)?)))
        .collect()
}

/// Trains on the `train` split and evaluates on `dev` and `test`.
///
/// Merge mode fits one model on every language; individual mode fits one model
/// per language on that language alone.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let violations = validate_dataset(dataset);
    if !violations.is_empty() {
        return Err(Error::Invalid(violations));
    }
    if dataset.attribute(&config.attribute).is_none() {
        return Err(Error::InvalidArgument(format!("unknown attribute {:?}", config.attribute)));
    }
    if config.positive >= dataset.num_classes {
        return Err(Error::InvalidArgument(format!("positive class {} out of range", config.positive)));
    }

    let runs: Vec<(Option<String>, Dataset)> = match config.mode {
        TrainMode::Merge => vec![(None, dataset.clone())],
        TrainMode::Individual => dataset
            .languages
            .iter()
            .map(|l| (Some(l.clone()), dataset.language(l)))
            .collect(),
    };

    let mut models = Vec::new();
    let mut predictions: BTreeMap<Split, Vec<PredictionRecord>> = BTreeMap::new();
    for (run_index, (language, data)) in runs.into_iter().enumerate() {
        let train_split = data.split(Split::Train);
        if train_split.len() < 2 {
            log::warn!("skipping {:?}: fewer than 2 training samples", language);
            continue;
        }
        let seed = config.seed.wrapping_add(run_index as u64);
        let (params, epochs) = fit(&train_split, config, seed)?;
        let mut own = BTreeMap::new();
        for split in [Split::Dev, Split::Test] {
            let recs = evaluate(&params, &data.split(split), config.positive);
            predictions.entry(split).or_default().extend(recs.iter().cloned());
            own.insert(split, recs);
        }
        let reports = held_out_reports(&own, &data, config)?;
        models.push(TrainedModel {
            language,
            params,
            history: TrainHistory { epochs, reports },
        });
    }
    if models.is_empty() {
        return Err(Error::InvalidArgument("no run had at least 2 training samples".into()));
    }
    let reports = held_out_reports(&predictions, dataset, config)?;
    Ok(TrainOutcome {
        models,
        predictions,
        reports,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub trials: usize,
    pub seed: u64,
    /// Largest allowed macro-F drop (absolute, on the 0–1 scale) versus the unweighted baseline.
    pub macro_f_tolerance: f64,
    /// Upper bound of `alpha + beta`.
    pub simplex_cap: f64,
    pub tau_range: (f64, f64),
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            trials: 10,
            seed: 0,
            macro_f_tolerance: 0.05,
            simplex_cap: 0.9,
            tau_range: (0.03, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub weights: LossWeights,
    pub med_avg: Option<f64>,
    pub macro_f: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: TrainConfig,
    pub best_trial: usize,
    pub baseline_macro_f: f64,
    pub baseline_med_avg: Option<f64>,
    /// True when no trial met the macro-F floor and the lowest MED was taken anyway.
    pub fell_back: bool,
    pub trials: Vec<TrialResult>,
}

/// Draws `(alpha, beta)` uniformly from `{alpha, beta >= 0, alpha + beta <= cap}`
/// and `tau` log-uniformly.
pub fn sample_weights(rng: &mut ChaCha8Rng, config: &SearchConfig) -> LossWeights {
    // uniform on the triangle by reflection of the unit square
    let (mut x, mut y): (f64, f64) = (rng.random(), rng.random());
    if x + y > 1.0 {
        x = 1.0 - x;
        y = 1.0 - y;
    }
    let (lo, hi) = config.tau_range;
    let tau = (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp();
    LossWeights {
        alpha: x * config.simplex_cap,
        beta: y * config.simplex_cap,
        tau,
        tau_td: None,
    }
}

/// Random search over loss weights and temperature.
///
/// Each trial is scored on the dev split: the winner has the lowest mean MED among
/// trials whose pooled macro-F is within `macro_f_tolerance` of the
/// `alpha = beta = 0` baseline.
pub fn random_search(dataset: &Dataset, base: &TrainConfig, search: &SearchConfig) -> Result<SearchOutcome> {
    if search.trials < 1 {
        return Err(Error::InvalidArgument("search needs at least one trial".into()));
    }
    let dev_report = |config: &TrainConfig| -> Result<MetricReport> {
        let out = train(dataset, config)?;
        out.reports
            .get(&Split::Dev)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument("search needs a non-empty dev split".into()))
    };
    let baseline = dev_report(&TrainConfig {
        weights: LossWeights {
            alpha: 0.0,
            beta: 0.0,
            ..base.weights
        },
        ..base.clone()
    })?;
    let floor = baseline.overall.macro_f - search.macro_f_tolerance;

    let mut rng = ChaCha8Rng::seed_from_u64(search.seed);
    let mut trials = Vec::with_capacity(search.trials);
    let mut configs = Vec::with_capacity(search.trials);
    for trial in 0..search.trials {
        let weights = sample_weights(&mut rng, search);
        let config = TrainConfig { weights, ..base.clone() };
        let report = dev_report(&config)?;
        trials.push(TrialResult {
            trial,
            weights,
            med_avg: report.aggregates.med_avg,
            macro_f: report.overall.macro_f,
            feasible: report.overall.macro_f >= floor,
        });
        configs.push(config);
    }

    let key = |t: &TrialResult| t.med_avg.unwrap_or(f64::INFINITY);
    let pick = |feasible_only: bool| {
        trials
            .iter()
            .filter(|t| !feasible_only || t.feasible)
            .min_by(|a, b| key(a).total_cmp(&key(b)).then(a.trial.cmp(&b.trial)))
            .map(|t| t.trial)
    };
    let (best_trial, fell_back) = match pick(true) {
        Some(t) => (t, false),
        None => {
            log::warn!("no trial met the macro-F floor {floor:.4}; taking the lowest MED");
            (pick(false).unwrap_or(0), true)
        }
    };
    Ok(SearchOutcome {
        best: configs[best_trial].clone(),
        best_trial,
        baseline_macro_f: baseline.overall.macro_f,
        baseline_med_avg: baseline.aggregates.med_avg,
        fell_back,
        trials,
    })
}
