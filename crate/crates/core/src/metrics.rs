//! Fairness and performance metrics over prediction records.
//!
//! All FPR-based metrics use a binary view of the records against a designated
//! positive class. A group whose records contain no negative-gold example has no
//! false positive rate; such groups are skipped and reported, never counted as 0.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AttributeSpec, PredictionRecord};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn negatives(&self) -> usize {
        self.fp + self.tn
    }

    fn add(&mut self, gold_pos: bool, pred_pos: bool) {
        match (gold_pos, pred_pos) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fn_ += 1,
        }
    }
}

pub fn confusion_counts<'a, I>(records: I, positive: usize) -> ConfusionCounts
where
    I: IntoIterator<Item = &'a PredictionRecord>,
{
    let mut c = ConfusionCounts::default();
    for r in records {
        c.add(r.gold == positive, r.pred == positive);
    }
    c
}

/// `fp / (fp + tn)`, or `None` when there are no negative-gold records.
pub fn false_positive_rate(counts: &ConfusionCounts) -> Option<f64> {
    let neg = counts.negatives();
    (neg > 0).then(|| counts.fp as f64 / neg as f64)
}

/// FPR bookkeeping for one attribute group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFpr {
    pub records: usize,
    pub negatives: usize,
    pub false_positives: usize,
    pub fpr: Option<f64>,
}

impl GroupFpr {
    fn from_counts(c: &ConfusionCounts) -> Self {
        Self {
            records: c.total(),
            negatives: c.negatives(),
            false_positives: c.fp,
            fpr: false_positive_rate(c),
        }
    }
}

/// Sum over attribute groups of `|FPR(group) - FPR(all)|` with its bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqualityDifference {
    pub value: Option<f64>,
    pub overall_fpr: Option<f64>,
    pub groups: BTreeMap<String, GroupFpr>,
    /// Attribute values skipped because their FPR is undefined.
    pub skipped: Vec<String>,
}

fn equality_difference<'a, I>(records: I, attribute: &AttributeSpec, positive: usize) -> EqualityDifference
where
    I: IntoIterator<Item = &'a PredictionRecord>,
{
    let mut overall = ConfusionCounts::default();
    let mut per_group: BTreeMap<&str, ConfusionCounts> =
        attribute.values.iter().map(|v| (v.as_str(), ConfusionCounts::default())).collect();
    for r in records {
        let (g, p) = (r.gold == positive, r.pred == positive);
        overall.add(g, p);
        if let Some(c) = r.attrs.get(&attribute.name).and_then(|v| per_group.get_mut(v.as_str())) {
            c.add(g, p);
        }
    }

    let overall_fpr = false_positive_rate(&overall);
    let mut groups = BTreeMap::new();
    let mut skipped = Vec::new();
    let mut sum = 0.0;
    let mut used = 0usize;
    // iterate in the attribute's declared value order
    for v in &attribute.values {
        let stat = GroupFpr::from_counts(&per_group[v.as_str()]);
        match (stat.fpr, overall_fpr) {
            (Some(g), Some(o)) => {
                sum += (g - o).abs();
                used += 1;
            }
            _ => skipped.push(v.clone()),
        }
        groups.insert(v.clone(), stat);
    }
    EqualityDifference {
        value: (overall_fpr.is_some() && used > 0).then_some(sum),
        overall_fpr,
        groups,
        skipped,
    }
}

/// Monolingual equality difference for one language.
pub fn med_language(
    records: &[PredictionRecord],
    attribute: &AttributeSpec,
    lang: &str,
    positive: usize,
) -> EqualityDifference {
    equality_difference(records.iter().filter(|r| r.lang == lang), attribute, positive)
}

/// Multilingual equality difference: the same gap computed on all languages pooled.
pub fn mued(records: &[PredictionRecord], attribute: &AttributeSpec, positive: usize) -> EqualityDifference {
    equality_difference(records, attribute, positive)
}

/// Mean of the defined per-language MED values.
pub fn med_aggregate(per_language: &BTreeMap<String, Option<f64>>) -> Result<f64> {
    let defined: Vec<f64> = per_language.values().filter_map(|v| *v).collect();
    if defined.is_empty() {
        return Err(Error::Undefined("no language has a defined MED".into()));
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Performance {
    pub accuracy: f64,
    pub macro_f: f64,
    pub weighted_f: f64,
    /// Undefined when either the positive or the negative gold class is absent.
    pub auc: Option<f64>,
}

/// Number of classes implied by a record set: one past the largest label seen.
pub fn inferred_classes(records: &[PredictionRecord], positive: usize) -> usize {
    records
        .iter()
        .map(|r| r.gold.max(r.pred))
        .chain(std::iter::once(positive))
        .max()
        .unwrap_or(0)
        + 1
}

/// Accuracy, macro/weighted F1 and AUC, with the class count inferred from the records.
pub fn performance_metrics(records: &[PredictionRecord], positive: usize) -> Result<Performance> {
    performance_with_classes(records, positive, inferred_classes(records, positive))
}

/// As [`performance_metrics`] with an explicit class count.
///
/// Per-class F1 with a zero denominator counts as 0.
pub fn performance_with_classes(
    records: &[PredictionRecord],
    positive: usize,
    num_classes: usize,
) -> Result<Performance> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("performance metrics need at least one record".into()));
    }
    let k = num_classes.max(inferred_classes(records, positive));
    let mut tp = vec![0usize; k];
    let mut pred_count = vec![0usize; k];
    let mut support = vec![0usize; k];
    let mut correct = 0usize;
    for r in records {
        support[r.gold] += 1;
        pred_count[r.pred] += 1;
        if r.gold == r.pred {
            tp[r.gold] += 1;
            correct += 1;
        }
    }
    let n = records.len() as f64;
    let f1: Vec<f64> = (0..k)
        .map(|c| {
            let denom = pred_count[c] + support[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .collect();
    let macro_f = f1.iter().sum::<f64>() / k as f64;
    let weighted_f = f1.iter().zip(&support).map(|(f, &s)| f * s as f64).sum::<f64>() / n;
    Ok(Performance {
        accuracy: correct as f64 / n,
        macro_f,
        weighted_f,
        auc: auc(records, positive),
    })
}

/// Probability that a random (positive-gold, negative-gold) pair is ordered
/// correctly by score, ties credited one half. Computed from mid-ranks.
pub fn auc(records: &[PredictionRecord], positive: usize) -> Option<f64> {
    let mut scored: Vec<(f64, bool)> = records.iter().map(|r| (r.score, r.gold == positive)).collect();
    let n_pos = scored.iter().filter(|(_, p)| *p).count();
    let n_neg = scored.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    // sum of (doubled) mid-ranks of positives keeps everything in integers
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < scored.len() {
        let mut j = i;
        while j < scored.len() && scored[j].0 == scored[i].0 {
            j += 1;
        }
        // ranks i+1..=j, mid-rank*2 = i+1+j
        let pos_in_tie = scored[i..j].iter().filter(|(_, p)| *p).count() as u128;
        rank_sum2 += pos_in_tie * (i as u128 + 1 + j as u128);
        i = j;
    }
    let np = n_pos as u128;
    let u2 = rank_sum2 - np * (np + 1);
    Some(u2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Mean absolute deviation of per-language macro-F from their mean.
pub fn mepd(per_language_macro_f: &BTreeMap<String, f64>) -> Result<f64> {
    if per_language_macro_f.is_empty() {
        return Err(Error::InvalidArgument("MEPD needs at least one language".into()));
    }
    let n = per_language_macro_f.len() as f64;
    // mean taken relative to the first value, so equal inputs give exactly zero
    let first = *per_language_macro_f.values().next().unwrap_or(&0.0);
    let avg = first + per_language_macro_f.values().map(|f| f - first).sum::<f64>() / n;
    Ok(per_language_macro_f.values().map(|f| (f - avg).abs()).sum::<f64>() / n)
}

/// How the per-attribute MED increase is clipped in strategy destructiveness.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SdMode {
    /// `max(delta, 0)`: only increases in bias count.
    #[default]
    Clip,
    /// `min(delta, 0)`, the formula as usually printed; always ≤ 0.
    Literal,
}

/// Mean clipped MED change on the non-target attributes after debiasing.
pub fn strategy_destructiveness(
    med_baseline: &BTreeMap<String, f64>,
    med_debiased: &BTreeMap<String, f64>,
    mode: SdMode,
) -> Result<f64> {
    if med_baseline.is_empty() {
        return Err(Error::InvalidArgument("SD needs at least one other attribute".into()));
    }
    let a: BTreeSet<&String> = med_baseline.keys().collect();
    let b: BTreeSet<&String> = med_debiased.keys().collect();
    if a != b {
        return Err(Error::InvalidArgument(format!(
            "SD attribute sets differ: baseline {:?} vs debiased {:?}",
            a, b
        )));
    }
    let total: f64 = med_baseline
        .iter()
        .map(|(k, base)| {
            let delta = med_debiased[k] - base;
            match mode {
                SdMode::Clip => delta.max(0.0),
                SdMode::Literal => delta.min(0.0),
            }
        })
        .sum();
    Ok(total / med_baseline.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageMetrics {
    pub records: usize,
    pub accuracy: f64,
    pub macro_f: f64,
    pub weighted_f: f64,
    pub auc: Option<f64>,
    pub med: Option<f64>,
    pub fpr: Option<f64>,
    pub groups: BTreeMap<String, GroupFpr>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub med_avg: Option<f64>,
    pub mued: Option<f64>,
    pub mepd: f64,
}

/// Per-language and cross-language fairness results for one attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub attribute: String,
    pub positive: usize,
    pub num_classes: usize,
    pub records: usize,
    pub per_language: BTreeMap<String, LanguageMetrics>,
    /// Performance on all languages pooled.
    pub overall: Performance,
    pub pooled_groups: BTreeMap<String, GroupFpr>,
    pub aggregates: Aggregates,
    /// Undefined-metric and skipped-group notices.
    pub notices: Vec<String>,
}

/// Computes every per-language block and the aggregates.
///
/// `languages` restricts and orders the language universe; when empty, every
/// language present in `records` is used.
pub fn full_report(
    records: &[PredictionRecord],
    attribute: &AttributeSpec,
    positive: usize,
    languages: &[String],
) -> Result<MetricReport> {
    let mut notices = Vec::new();
    let universe: BTreeSet<String> = if languages.is_empty() {
        records.iter().map(|r| r.lang.clone()).collect()
    } else {
        languages.iter().cloned().collect()
    };
    let kept: Vec<PredictionRecord> = records.iter().filter(|r| universe.contains(&r.lang)).cloned().collect();
    if kept.len() != records.len() {
        notices.push(format!(
            "{} record(s) outside the language set were ignored",
            records.len() - kept.len()
        ));
    }
    if kept.is_empty() {
        return Err(Error::InvalidArgument("report needs at least one record".into()));
    }
    let k = inferred_classes(&kept, positive);

    let mut by_lang: BTreeMap<&str, Vec<PredictionRecord>> = BTreeMap::new();
    for r in &kept {
        by_lang.entry(r.lang.as_str()).or_default().push(r.clone());
    }

    let mut per_language = BTreeMap::new();
    for (lang, recs) in &by_lang {
        let perf = performance_with_classes(recs, positive, k)?;
        let ed = med_language(recs, attribute, lang, positive);
        if perf.auc.is_none() {
            notices.push(format!("{lang}: AUC undefined (one gold class absent)"));
        }
        for v in &ed.skipped {
            notices.push(format!("{lang}: group {}={v} skipped (no negative-gold records)", attribute.name));
        }
        if ed.value.is_none() {
            notices.push(format!("{lang}: MED undefined"));
        }
        per_language.insert(
            lang.to_string(),
            LanguageMetrics {
                records: recs.len(),
                accuracy: perf.accuracy,
                macro_f: perf.macro_f,
                weighted_f: perf.weighted_f,
                auc: perf.auc,
                med: ed.value,
                fpr: ed.overall_fpr,
                groups: ed.groups,
            },
        );
    }
    for lang in &universe {
        if !by_lang.contains_key(lang.as_str()) {
            notices.push(format!("{lang}: no records"));
        }
    }

    let meds: BTreeMap<String, Option<f64>> =
        per_language.iter().map(|(l, m)| (l.clone(), m.med)).collect();
    let med_avg = med_aggregate(&meds).ok();
    let pooled = mued(&kept, attribute, positive);
    for v in &pooled.skipped {
        notices.push(format!("pooled: group {}={v} skipped (no negative-gold records)", attribute.name));
    }
    let macro_fs: BTreeMap<String, f64> = per_language.iter().map(|(l, m)| (l.clone(), m.macro_f)).collect();

    Ok(MetricReport {
        attribute: attribute.name.clone(),
        positive,
        num_classes: k,
        records: kept.len(),
        overall: performance_with_classes(&kept, positive, k)?,
        per_language,
        pooled_groups: pooled.groups,
        aggregates: Aggregates {
            med_avg,
            mued: pooled.value,
            mepd: mepd(&macro_fs)?,
        },
        notices,
    })
}
