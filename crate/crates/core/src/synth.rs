//! Synthetic multilingual corpora with controllable attribute bias.
//!
//! Every language draws from its own token inventory (all tokens carry the
//! language code as a prefix, so vocabularies never overlap):
//!
//! - filler words `{lang}_w{j}`,
//! - class-signal words `{lang}_c{class}_{j}`, injected with probability
//!   `label_signal_strength`,
//! - attribute markers `{lang}_{attr}_{value}`, always injected.
//!
//! The label of a sample is drawn after its attributes. The positive-class
//! probability is the language's `positive_rate` plus `0.3 * bias_strength` for
//! every attribute on which the sample carries the disadvantaged value. A
//! classifier that relies on the markers therefore over-predicts the positive
//! class for disadvantaged negatives, which shows up as an FPR gap.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AttrMap, AttributeSpec, Dataset, Sample, Split, DEFAULT_MAX_LEN};

/// Label-rate shift per unit of bias strength.
pub const BIAS_SHIFT: f64 = 0.3;

/// Number of distinct signal words per (language, class).
const SIGNAL_VARIANTS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageSpec {
    pub code: String,
    pub samples: usize,
    /// Positive-class probability for a sample with no disadvantaged attribute value.
    pub positive_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeGen {
    pub name: String,
    pub values: Vec<String>,
    /// Marginal probability of each value.
    pub probs: Vec<f64>,
    /// Value whose positive-label rate is shifted up; defaults to the last value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disadvantaged: Option<String>,
}

impl AttributeGen {
    pub fn balanced(name: &str, values: &[&str]) -> Self {
        Self {
            name: name.into(),
            values: values.iter().map(|v| v.to_string()).collect(),
            probs: vec![1.0 / values.len() as f64; values.len()],
            disadvantaged: None,
        }
    }

    pub fn disadvantaged_value(&self) -> &str {
        self.disadvantaged
            .as_deref()
            .unwrap_or_else(|| self.values.last().map(String::as_str).unwrap_or(""))
    }

    pub fn spec(&self) -> AttributeSpec {
        AttributeSpec {
            name: self.name.clone(),
            values: self.values.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub languages: Vec<LanguageSpec>,
    pub num_classes: usize,
    /// Class whose rate `positive_rate` and the bias shift refer to.
    #[serde(default = "one")]
    pub positive_class: usize,
    pub attributes: Vec<AttributeGen>,
    /// Filler words per language.
    pub vocab_per_language: usize,
    /// Inclusive range of filler words per sample.
    pub tokens_per_sample: (usize, usize),
    pub label_signal_strength: f64,
    pub bias_strength: f64,
    /// Train and dev fractions; the rest is test.
    #[serde(default = "default_split")]
    pub split: (f64, f64),
    #[serde(default = "default_max_len")]
    pub max_len: usize,
}

fn one() -> usize {
    1
}

fn default_split() -> (f64, f64) {
    (0.8, 0.1)
}

fn default_max_len() -> usize {
    DEFAULT_MAX_LEN
}

impl Default for CorpusSpec {
    /// Five languages with skewed positive rates, two binary attributes, bias 0.8.
    fn default() -> Self {
        let lang = |code: &str, positive_rate: f64| LanguageSpec {
            code: code.into(),
            samples: 3000,
            positive_rate,
        };
        Self {
            languages: vec![
                lang("en", 0.37),
                lang("it", 0.195),
                lang("pl", 0.089),
                lang("pt", 0.205),
                lang("es", 0.397),
            ],
            num_classes: 2,
            positive_class: 1,
            attributes: vec![
                AttributeGen::balanced("gender", &["male", "female"]),
                AttributeGen::balanced("age", &["young", "old"]),
            ],
            vocab_per_language: 60,
            tokens_per_sample: (3, 6),
            label_signal_strength: 0.7,
            bias_strength: 0.8,
            split: default_split(),
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let prob = |x: f64| (0.0..=1.0).contains(&x);
        if self.languages.is_empty() {
            problems.push("no languages".to_string());
        }
        let mut seen = std::collections::BTreeSet::new();
        for l in &self.languages {
            if l.code.is_empty() || !seen.insert(&l.code) {
                problems.push(format!("language code {:?} empty or duplicated", l.code));
            }
            if l.samples < 1 {
                problems.push(format!("language {}: sample count must be >= 1", l.code));
            }
            if !prob(l.positive_rate) {
                problems.push(format!("language {}: positive_rate outside [0,1]", l.code));
            }
        }
        if self.num_classes < 2 {
            problems.push("num_classes must be >= 2".into());
        }
        if self.positive_class >= self.num_classes {
            problems.push("positive_class out of range".into());
        }
        for a in &self.attributes {
            if a.values.len() < 2 || a.values.len() != a.probs.len() {
                problems.push(format!("attribute {}: needs >= 2 values with one probability each", a.name));
            }
            if a.probs.iter().any(|p| !prob(*p)) || (a.probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                problems.push(format!("attribute {}: probabilities must lie in [0,1] and sum to 1", a.name));
            }
            if !a.values.iter().any(|v| v == a.disadvantaged_value()) {
                problems.push(format!("attribute {}: unknown disadvantaged value", a.name));
            }
        }
        if self.vocab_per_language < 1 {
            problems.push("vocab_per_language must be >= 1".into());
        }
        let (lo, hi) = self.tokens_per_sample;
        if lo < 1 || lo > hi {
            problems.push(format!("tokens_per_sample range ({lo}, {hi}) invalid"));
        }
        if hi + 1 + self.attributes.len() > self.max_len {
            problems.push(format!(
                "up to {} tokens per sample exceeds max_len {}",
                hi + 1 + self.attributes.len(),
                self.max_len
            ));
        }
        if !prob(self.label_signal_strength) || !prob(self.bias_strength) {
            problems.push("label_signal_strength and bias_strength must lie in [0,1]".into());
        }
        let (tr, dv) = self.split;
        if !prob(tr) || !prob(dv) || tr + dv > 1.0 {
            problems.push("split fractions must be in [0,1] and sum to at most 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(problems))
        }
    }
}

/// Draws a corpus. Deterministic per `(spec, seed)`.
pub fn generate(spec: &CorpusSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    for lang in &spec.languages {
        let mut block = Vec::with_capacity(lang.samples);
        for idx in 0..lang.samples {
            block.push(draw_sample(spec, lang, idx, &mut rng));
        }
        let mut order: Vec<usize> = (0..block.len()).collect();
        order.shuffle(&mut rng);
        let n_train = (spec.split.0 * block.len() as f64).round() as usize;
        let n_dev = ((spec.split.1 * block.len() as f64).round() as usize).min(block.len() - n_train);
        for (rank, &i) in order.iter().enumerate() {
            block[i].split = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_dev {
                Split::Dev
            } else {
                Split::Test
            };
        }
        samples.extend(block);
    }
    Ok(Dataset {
        samples,
        num_classes: spec.num_classes,
        languages: spec.languages.iter().map(|l| l.code.clone()).collect(),
        attribute_specs: spec.attributes.iter().map(AttributeGen::spec).collect(),
        max_len: spec.max_len,
    })
}

fn draw_sample(spec: &CorpusSpec, lang: &LanguageSpec, idx: usize, rng: &mut ChaCha8Rng) -> Sample {
    let code = &lang.code;
    let mut attrs = AttrMap::new();
    let mut disadvantaged = 0usize;
    for a in &spec.attributes {
        let value = pick(&a.values, &a.probs, rng);
        if value == a.disadvantaged_value() {
            disadvantaged += 1;
        }
        attrs.insert(a.name.clone(), value.to_string());
    }

    let p_pos = (lang.positive_rate + BIAS_SHIFT * spec.bias_strength * disadvantaged as f64).clamp(0.0, 1.0);
    let label = if rng.random_bool(p_pos) {
        spec.positive_class
    } else {
        // remaining classes uniformly
        let others: Vec<usize> = (0..spec.num_classes).filter(|&c| c != spec.positive_class).collect();
        others[rng.random_range(0..others.len())]
    };

    let (lo, hi) = spec.tokens_per_sample;
    let n_fill = rng.random_range(lo..=hi);
    let mut tokens: Vec<String> = (0..n_fill)
        .map(|_| format!("{code}_w{}", rng.random_range(0..spec.vocab_per_language)))
        .collect();
    if rng.random_bool(spec.label_signal_strength) {
        tokens.push(format!("{code}_c{label}_{}", rng.random_range(0..SIGNAL_VARIANTS)));
    }
    for (name, value) in &attrs {
        tokens.push(format!("{code}_{name}_{value}"));
    }
    tokens.shuffle(rng);

    Sample {
        id: format!("{code}-{idx:05}"),
        tokens,
        label,
        attrs,
        lang: code.clone(),
        split: Split::Train,
    }
}

fn pick<'a>(values: &'a [String], probs: &[f64], rng: &mut ChaCha8Rng) -> &'a str {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (v, p) in values.iter().zip(probs) {
        acc += p;
        if u < acc {
            return v;
        }
    }
    values.last().map(String::as_str).unwrap_or("")
}

/// Positive-label rate of one (language, attribute value) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRate {
    pub samples: usize,
    pub positives: usize,
    /// `None` for an empty group.
    pub rate: Option<f64>,
}

/// Per (language, value) positive-label rates for `attribute`, every combination listed.
pub fn measure_corpus_bias(
    dataset: &Dataset,
    attribute: &str,
    positive: usize,
) -> Result<BTreeMap<(String, String), GroupRate>> {
    let spec = dataset
        .attribute(attribute)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown attribute {attribute:?}")))?;
    let mut counts: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
    for lang in &dataset.languages {
        for v in &spec.values {
            counts.insert((lang.clone(), v.clone()), (0, 0));
        }
    }
    for s in &dataset.samples {
        if let Some(v) = s.attrs.get(attribute) {
            if let Some(c) = counts.get_mut(&(s.lang.clone(), v.clone())) {
                c.0 += 1;
                c.1 += usize::from(s.label == positive);
            }
        }
    }
    Ok(counts
        .into_iter()
        .map(|(k, (n, p))| {
            let rate = (n > 0).then(|| p as f64 / n as f64);
            (k, GroupRate { samples: n, positives: p, rate })
        })
        .collect())
}
