//! Shared domain types: samples, datasets, prediction records and loss weights.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on tokens per sample.
pub const DEFAULT_MAX_LEN: usize = 32;

/// Attribute name → attribute value.
pub type AttrMap = BTreeMap<String, String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

/// One training example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub tokens: Vec<String>,
    pub label: usize,
    pub attrs: AttrMap,
    pub lang: String,
    #[serde(default)]
    pub split: Split,
}

/// A sensitive attribute and its admissible (already binarized) values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub values: Vec<String>,
}

impl AttributeSpec {
    pub fn new(name: impl Into<String>, values: &[&str]) -> Self {
        Self {
            name: name.into(),
            values: values.iter().map(|v| v.to_string()).collect(),
        }
    }

    pub fn contains(&self, value: &str) -> bool {
        self.values.iter().any(|v| v == value)
    }

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.values.len() < 2 {
            out.push(format!(
                "attribute {:?}: needs at least 2 values, has {}",
                self.name,
                self.values.len()
            ));
        }
        let distinct: BTreeSet<&String> = self.values.iter().collect();
        if distinct.len() != self.values.len() {
            out.push(format!("attribute {:?}: duplicate values", self.name));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    pub languages: Vec<String>,
    pub attribute_specs: Vec<AttributeSpec>,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
}

fn default_max_len() -> usize {
    DEFAULT_MAX_LEN
}

impl Dataset {
    pub fn new(
        samples: Vec<Sample>,
        num_classes: usize,
        languages: Vec<String>,
        attribute_specs: Vec<AttributeSpec>,
    ) -> Self {
        Self {
            samples,
            num_classes,
            languages,
            attribute_specs,
            max_len: DEFAULT_MAX_LEN,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn attribute(&self, name: &str) -> Option<&AttributeSpec> {
        self.attribute_specs.iter().find(|a| a.name == name)
    }

    /// Same metadata, samples restricted by `keep`.
    pub fn filtered(&self, keep: impl Fn(&Sample) -> bool) -> Dataset {
        Dataset {
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
            num_classes: self.num_classes,
            languages: self.languages.clone(),
            attribute_specs: self.attribute_specs.clone(),
            max_len: self.max_len,
        }
    }

    pub fn split(&self, split: Split) -> Dataset {
        self.filtered(|s| s.split == split)
    }

    pub fn language(&self, lang: &str) -> Dataset {
        let mut d = self.filtered(|s| s.lang == lang);
        d.languages = vec![lang.to_string()];
        d
    }
}

/// Checks every dataset invariant and reports violations as data.
///
/// Each sample-level message starts with the sample id; messages depend only on
/// the offending sample, so the result (as a multiset) does not depend on order.
pub fn validate_dataset(dataset: &Dataset) -> Vec<String> {
    let mut out = Vec::new();
    if dataset.num_classes < 1 {
        out.push("dataset: num_classes must be at least 1".to_string());
    }
    let langs: BTreeSet<&str> = dataset.languages.iter().map(String::as_str).collect();
    if langs.len() != dataset.languages.len() {
        out.push("dataset: duplicate language codes".to_string());
    }
    for spec in &dataset.attribute_specs {
        out.extend(spec.violations());
    }

    for s in &dataset.samples {
        let id = &s.id;
        if s.tokens.is_empty() {
            out.push(format!("sample {id}: empty token sequence"));
        } else if s.tokens.len() > dataset.max_len {
            out.push(format!(
                "sample {id}: {} tokens exceeds max_len {}",
                s.tokens.len(),
                dataset.max_len
            ));
        }
        if s.label >= dataset.num_classes {
            out.push(format!(
                "sample {id}: label {} out of range for {} classes",
                s.label, dataset.num_classes
            ));
        }
        if s.lang.is_empty() {
            out.push(format!("sample {id}: empty language code"));
        } else if !langs.contains(s.lang.as_str()) {
            out.push(format!("sample {id}: language {:?} not in dataset languages", s.lang));
        }
        for (name, value) in &s.attrs {
            match dataset.attribute(name) {
                None => out.push(format!("sample {id}: unknown attribute {name:?}")),
                Some(spec) if !spec.contains(value) => out.push(format!(
                    "sample {id}: value {value:?} not admissible for attribute {name:?}"
                )),
                Some(_) => {}
            }
        }
        for spec in &dataset.attribute_specs {
            if !s.attrs.contains_key(&spec.name) {
                out.push(format!("sample {id}: missing attribute {:?}", spec.name));
            }
        }
    }
    out
}

/// One evaluated example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub lang: String,
    pub attrs: AttrMap,
    pub gold: usize,
    pub pred: usize,
    /// Model probability of the designated positive class.
    pub score: f64,
}

/// Weights of the combined objective `alpha*lf + beta*td + (1-alpha-beta)*ce`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    /// Temperature of the language-fusion loss (and of the debiasing loss unless `tau_td` is set).
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_td: Option<f64>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            tau: 0.1,
            tau_td: None,
        }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64, tau: f64) -> Result<Self> {
        let w = Self {
            alpha,
            beta,
            tau,
            tau_td: None,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn with_tau_td(mut self, tau_td: f64) -> Result<Self> {
        self.tau_td = Some(tau_td);
        self.validate()?;
        Ok(self)
    }

    pub fn tau_lf(&self) -> f64 {
        self.tau
    }

    pub fn tau_td(&self) -> f64 {
        self.tau_td.unwrap_or(self.tau)
    }

    /// Weight of the cross-entropy term.
    pub fn ce_weight(&self) -> f64 {
        1.0 - self.alpha - self.beta
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.alpha.is_finite() && self.beta.is_finite() && self.tau.is_finite();
        if !finite || self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be finite and non-negative (alpha={}, beta={})",
                self.alpha, self.beta
            )));
        }
        // tolerate rounding in sums such as 0.7 + 0.3
        if self.alpha + self.beta > 1.0 + 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "alpha + beta must not exceed 1 (got {})",
                self.alpha + self.beta
            )));
        }
        for (name, t) in [("tau", Some(self.tau)), ("tau_td", self.tau_td)] {
            if let Some(t) = t {
                if !(t > 0.0 && t.is_finite()) {
                    return Err(Error::InvalidArgument(format!("{name} must be > 0 (got {t})")));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, label: usize, lang: &str, gender: &str) -> Sample {
        Sample {
            id: id.to_string(),
            tokens: vec!["a".into(), "b".into()],
            label,
            attrs: [("gender".to_string(), gender.to_string())].into_iter().collect(),
            lang: lang.to_string(),
            split: Split::Train,
        }
    }

    fn dataset(samples: Vec<Sample>) -> Dataset {
        Dataset::new(
            samples,
            2,
            vec!["en".into(), "it".into()],
            vec![AttributeSpec::new("gender", &["m", "f"])],
        )
    }

    #[test]
    fn well_formed_dataset_has_no_violations() {
        let d = dataset(vec![
            sample("1", 0, "en", "m"),
            sample("2", 1, "en", "f"),
            sample("3", 0, "it", "m"),
            sample("4", 1, "it", "f"),
        ]);
        assert!(validate_dataset(&d).is_empty());
    }

    #[test]
    fn unknown_language_is_reported_with_id() {
        let d = dataset(vec![sample("1", 0, "en", "m"), sample("bad", 0, "xx", "m")]);
        let v = validate_dataset(&d);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("bad"), "{v:?}");
    }

    #[test]
    fn label_equal_to_k_is_a_violation() {
        let d = dataset(vec![sample("k", 2, "en", "m")]);
        let v = validate_dataset(&d);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("label 2"));
    }

    #[test]
    fn token_length_bounds() {
        let mut empty = sample("e", 0, "en", "m");
        empty.tokens.clear();
        let mut long = sample("l", 0, "en", "m");
        long.tokens = vec!["t".into(); 33];
        let v = validate_dataset(&dataset(vec![empty, long]));
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn attribute_problems() {
        let mut unknown = sample("u", 0, "en", "m");
        unknown.attrs.insert("age".into(), "old".into());
        let bad_value = sample("b", 0, "en", "x");
        let mut missing = sample("m", 0, "en", "m");
        missing.attrs.clear();
        let v = validate_dataset(&dataset(vec![unknown, bad_value, missing]));
        assert_eq!(v.len(), 3, "{v:?}");

        let mut d = dataset(vec![]);
        d.attribute_specs = vec![AttributeSpec::new("gender", &["m", "m"])];
        assert_eq!(validate_dataset(&d).len(), 1);
    }

    #[test]
    fn loss_weight_bounds() {
        assert!(LossWeights::new(0.3, 0.3, 0.1).is_ok());
        assert!(LossWeights::new(0.7, 0.3, 0.1).is_ok());
        assert!(LossWeights::new(0.7, 0.4, 0.1).is_err());
        assert!(LossWeights::new(-0.1, 0.0, 0.1).is_err());
        assert!(LossWeights::new(0.1, 0.1, 0.0).is_err());
        let w = LossWeights::new(0.2, 0.3, 0.1).unwrap().with_tau_td(0.5).unwrap();
        assert_eq!(w.tau_lf(), 0.1);
        assert_eq!(w.tau_td(), 0.5);
        assert!((w.ce_weight() - 0.5).abs() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn validation_is_order_insensitive_and_idempotent(
                raw in prop::collection::vec((0usize..3, 0usize..3, 0usize..3), 1..20),
                seed in any::<u64>(),
            ) {
                let langs = ["en", "it", "xx"];
                let genders = ["m", "f", "?"];
                let samples: Vec<Sample> = raw
                    .iter()
                    .enumerate()
                    .map(|(i, &(l, g, y))| sample(&i.to_string(), y, langs[l], genders[g]))
                    .collect();
                let d = dataset(samples.clone());
                let mut a = validate_dataset(&d);
                let again = validate_dataset(&d);
                prop_assert_eq!(&a, &again);

                let mut shuffled = samples;
                let n = shuffled.len();
                for i in 0..n {
                    let j = (seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64) % n as u64) as usize;
                    shuffled.swap(i, j);
                }
                let mut b = validate_dataset(&dataset(shuffled));
                a.sort();
                b.sort();
                prop_assert_eq!(a, b);
            }
        }
    }
}
