//! File formats.
//!
//! - **Samples** (`*.jsonl`): one JSON object per line,
//!   `{"id", "tokens", "label", "attrs", "lang", "split"}`.
//! - **Dataset metadata** (`meta.json`): `{"num_classes", "languages",
//!   "attribute_specs", "max_len"}`. A data directory holds `meta.json` plus
//!   `train.jsonl`, `dev.jsonl` and `test.jsonl`.
//! - **Predictions** (`*.jsonl`): `{"id", "lang", "attrs", "gold", "pred", "score"}` per line.
//! - **Reports** (`*.json`): a [`ReportFile`], keys sorted, reals rounded to 6
//!   significant digits.
//! - **Checkpoints**: line-oriented text, see [`write_checkpoint`].
//!
//! Every file is written to a temporary sibling and renamed into place.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::encoder::{EncoderDims, EncoderMode, EncoderParams, Vocab, UNK};
use crate::error::{Error, Result};
use crate::metrics::{full_report, MetricReport, SdMode};
use crate::model::{validate_dataset, AttributeSpec, Dataset, PredictionRecord, Sample, Split, DEFAULT_MAX_LEN};
use crate::trainer::{TrainConfig, TrainOutcome};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Writes `contents` to `path` via a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        // through Value so object keys come out sorted
        out.push_str(&serde_json::to_string(&serde_json::to_value(item)?)?);
        out.push('\n');
    }
    Ok(out)
}

fn from_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

/// Pretty JSON with sorted keys and a trailing newline.
pub fn to_sorted_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&serde_json::to_value(value)?)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, to_sorted_json(value)?.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Dataset-level metadata stored next to the sample files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub num_classes: usize,
    pub languages: Vec<String>,
    pub attribute_specs: Vec<AttributeSpec>,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
}

fn default_max_len() -> usize {
    DEFAULT_MAX_LEN
}

impl DatasetMeta {
    pub fn of(dataset: &Dataset) -> Self {
        Self {
            num_classes: dataset.num_classes,
            languages: dataset.languages.clone(),
            attribute_specs: dataset.attribute_specs.clone(),
            max_len: dataset.max_len,
        }
    }

    /// Metadata implied by the samples themselves (sorted languages and values).
    pub fn infer(samples: &[Sample]) -> Self {
        let mut langs = std::collections::BTreeSet::new();
        let mut attrs: BTreeMap<&str, std::collections::BTreeSet<&str>> = BTreeMap::new();
        for s in samples {
            langs.insert(s.lang.clone());
            for (k, v) in &s.attrs {
                attrs.entry(k).or_default().insert(v);
            }
        }
        Self {
            num_classes: samples.iter().map(|s| s.label + 1).max().unwrap_or(1),
            languages: langs.into_iter().collect(),
            attribute_specs: attrs
                .into_iter()
                .map(|(k, vs)| AttributeSpec {
                    name: k.to_string(),
                    values: vs.into_iter().map(str::to_string).collect(),
                })
                .collect(),
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

pub fn write_samples(path: &Path, samples: &[Sample]) -> Result<()> {
    write_atomic(path, to_jsonl(samples)?.as_bytes())
}

/// Reads a samples file and validates it against `meta` (inferred when `None`).
pub fn read_samples(path: &Path, meta: Option<&DatasetMeta>) -> Result<Dataset> {
    let samples: Vec<Sample> = from_jsonl(path)?;
    let meta = meta.cloned().unwrap_or_else(|| DatasetMeta::infer(&samples));
    let dataset = Dataset {
        samples,
        num_classes: meta.num_classes,
        languages: meta.languages,
        attribute_specs: meta.attribute_specs,
        max_len: meta.max_len,
    };
    let violations = validate_dataset(&dataset);
    if violations.is_empty() {
        Ok(dataset)
    } else {
        Err(Error::Invalid(violations))
    }
}

pub fn split_file(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{split}.jsonl"))
}

/// Writes `meta.json` and one samples file per split.
pub fn write_data_dir(dir: &Path, dataset: &Dataset) -> Result<()> {
    write_json(&dir.join("meta.json"), &DatasetMeta::of(dataset))?;
    for split in Split::ALL {
        let part: Vec<Sample> = dataset.samples.iter().filter(|s| s.split == split).cloned().collect();
        write_samples(&split_file(dir, split), &part)?;
    }
    Ok(())
}

/// Reads a data directory back into one dataset; missing split files are skipped.
pub fn read_data_dir(dir: &Path) -> Result<Dataset> {
    let meta: DatasetMeta = read_json(&dir.join("meta.json"))?;
    let mut samples = Vec::new();
    for split in Split::ALL {
        let path = split_file(dir, split);
        if !path.exists() {
            continue;
        }
        let part = read_samples(&path, Some(&meta))?;
        if let Some(bad) = part.samples.iter().find(|s| s.split != split) {
            return Err(Error::Invalid(vec![format!(
                "{}: sample {} is tagged {}",
                path.display(),
                bad.id,
                bad.split
            )]));
        }
        samples.extend(part.samples);
    }
    Ok(Dataset {
        samples,
        num_classes: meta.num_classes,
        languages: meta.languages,
        attribute_specs: meta.attribute_specs,
        max_len: meta.max_len,
    })
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    write_atomic(path, to_jsonl(records)?.as_bytes())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let records: Vec<PredictionRecord> = from_jsonl(path)?;
    if records.is_empty() {
        log::warn!("{}: no prediction records", path.display());
    }
    if let Some(r) = records.iter().find(|r| !r.score.is_finite()) {
        return Err(Error::Invalid(vec![format!("record {}: non-finite score", r.id)]));
    }
    Ok(records)
}

/// Definitions a report was computed with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormulaModes {
    /// How per-language MED values are aggregated ("mean").
    pub med_aggregate: String,
    /// MEPD as the mean ("mean") of absolute deviations rather than their sum.
    pub mepd: String,
    /// Clipping used when strategy destructiveness is computed from this report.
    pub sd: SdMode,
}

impl Default for FormulaModes {
    fn default() -> Self {
        Self {
            med_aggregate: "mean".into(),
            mepd: "mean".into(),
            sd: SdMode::Clip,
        }
    }
}

/// A persisted metric report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub toolkit_version: String,
    pub formula_modes: FormulaModes,
    /// Snapshot of whatever configuration produced the predictions.
    pub config: Value,
    pub report: MetricReport,
}

/// Rounds to 6 significant digits.
pub fn round_sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(x) = n.as_f64() {
                if let Some(r) = serde_json::Number::from_f64(round_sig6(x)) {
                    *n = r;
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

impl ReportFile {
    /// Wraps a report; every real is rounded to 6 significant digits so that the
    /// file form and the in-memory form agree exactly.
    pub fn new(report: &MetricReport, config: Value) -> Result<Self> {
        let mut value = serde_json::to_value(report)?;
        round_floats(&mut value);
        let mut config = config;
        round_floats(&mut config);
        Ok(Self {
            toolkit_version: TOOLKIT_VERSION.to_string(),
            formula_modes: FormulaModes::default(),
            config,
            report: serde_json::from_value(value)?,
        })
    }

    pub fn emit(&self) -> Result<String> {
        to_sorted_json(self)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.emit()?.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Writes the checkpoint text format:
///
/// ```text
/// polyfair-checkpoint 1
/// mode projected|identity
/// dims <vocab> <embed> <hidden> <classes>
/// vocab
/// <one token per line, row order; first is <unk>>
/// params <count>
/// <one value per line, flat layout of EncoderParams::as_flat>
/// end
/// ```
///
/// Values use Rust's shortest round-trip formatting, so reading restores them exactly.
pub fn write_checkpoint(path: &Path, params: &EncoderParams) -> Result<()> {
    if let Some(t) = params.vocab.tokens().iter().find(|t| t.contains('\n') || t.contains('\r')) {
        return Err(Error::InvalidArgument(format!("token {t:?} contains a line break")));
    }
    let mut out = String::new();
    let mode = match params.mode {
        EncoderMode::Projected => "projected",
        EncoderMode::Identity => "identity",
    };
    let d = params.dims;
    let _ = writeln!(out, "polyfair-checkpoint 1");
    let _ = writeln!(out, "mode {mode}");
    let _ = writeln!(out, "dims {} {} {} {}", params.vocab.len(), d.embed, d.hidden, d.classes);
    out.push_str("vocab\n");
    for t in params.vocab.tokens() {
        out.push_str(t);
        out.push('\n');
    }
    let _ = writeln!(out, "params {}", params.num_params());
    for x in params.as_flat() {
        let _ = writeln!(out, "{x:?}");
    }
    out.push_str("end\n");
    write_atomic(path, out.as_bytes())
}

pub fn read_checkpoint(path: &Path) -> Result<EncoderParams> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let err = |line: usize, message: String| Error::Parse {
        path: path.display().to_string(),
        line: line + 1,
        message,
    };
    let eof = text.lines().count();
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| err(eof, format!("unexpected end of file, expected {what}")))
    };

    let (n, header) = next("header")?;
    if header != "polyfair-checkpoint 1" {
        return Err(err(n, format!("unrecognized header {header:?}")));
    }
    let (n, mode_line) = next("mode")?;
    let mode = match mode_line {
        "mode projected" => EncoderMode::Projected,
        "mode identity" => EncoderMode::Identity,
        other => return Err(err(n, format!("bad mode line {other:?}"))),
    };
    let (n, dims_line) = next("dims")?;
    let nums: Vec<usize> = dims_line
        .strip_prefix("dims ")
        .map(|r| r.split_whitespace().filter_map(|x| x.parse().ok()).collect())
        .unwrap_or_default();
    let [v, embed, hidden, classes] = nums[..] else {
        return Err(err(n, format!("bad dims line {dims_line:?}")));
    };
    let (n, tag) = next("vocab")?;
    if tag != "vocab" {
        return Err(err(n, "expected 'vocab'".into()));
    }
    let mut tokens = Vec::with_capacity(v);
    for _ in 0..v {
        tokens.push(next("token")?.1.to_string());
    }
    if tokens.first().map(String::as_str) != Some(UNK) {
        return Err(err(n + 1, "first vocabulary row must be <unk>".into()));
    }
    let (n, count_line) = next("params")?;
    let count: usize = count_line
        .strip_prefix("params ")
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| err(n, format!("bad params line {count_line:?}")))?;
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        let (n, l) = next("value")?;
        data.push(l.parse::<f64>().map_err(|e| err(n, format!("bad value {l:?}: {e}")))?);
    }
    let (n, end) = next("end")?;
    if end != "end" {
        return Err(err(n, "expected 'end'".into()));
    }
    EncoderParams::from_flat(Vocab::from_rows(tokens), EncoderDims { embed, hidden, classes }, mode, data)
}

/// One line of a run's history file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryLine {
    /// `"merged"` or the language code of an individual model.
    pub model: String,
    pub epoch: usize,
    pub l_lf: f64,
    pub l_td: f64,
    pub l_ce: f64,
    pub total: f64,
}

/// Writes a run directory:
///
/// - `config.json`: the training configuration,
/// - `history.jsonl`: per-epoch mean losses per model,
/// - `checkpoint.txt` (merge) or `checkpoint.<lang>.txt` (individual),
/// - `predictions.<split>.jsonl` for dev and test,
/// - `report.<split>.<attribute>.json` for every attribute of the dataset.
pub fn write_run(dir: &Path, config: &TrainConfig, outcome: &TrainOutcome, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("config.json"), config)?;

    let mut history = Vec::new();
    for m in &outcome.models {
        let name = m.language.clone().unwrap_or_else(|| "merged".into());
        for e in &m.history.epochs {
            history.push(HistoryLine {
                model: name.clone(),
                epoch: e.epoch,
                l_lf: e.l_lf,
                l_td: e.l_td,
                l_ce: e.l_ce,
                total: e.total,
            });
        }
        let file = match &m.language {
            Some(l) => format!("checkpoint.{l}.txt"),
            None => "checkpoint.txt".into(),
        };
        write_checkpoint(&dir.join(file), &m.params)?;
    }
    write_atomic(&dir.join("history.jsonl"), to_jsonl(&history)?.as_bytes())?;

    let snapshot = serde_json::to_value(config)?;
    for (split, records) in &outcome.predictions {
        write_predictions(&dir.join(format!("predictions.{split}.jsonl")), records)?;
        if records.is_empty() {
            continue;
        }
        for spec in &dataset.attribute_specs {
            let report = full_report(records, spec, config.positive, &dataset.languages)?;
            ReportFile::new(&report, snapshot.clone())?
                .write(&dir.join(format!("report.{split}.{}.json", spec.name)))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_params;
    use crate::synth::{generate, CorpusSpec};

    fn small_corpus() -> Dataset {
        let mut spec = CorpusSpec::default();
        spec.languages.truncate(2);
        for l in &mut spec.languages {
            l.samples = 30;
        }
        generate(&spec, 1).unwrap()
    }

    #[test]
    fn three_line_samples_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        fs::write(
            &p,
            concat!(
                r#"{"id":"a","tokens":["x"],"label":0,"attrs":{"g":"m"},"lang":"en","split":"train"}"#, "\n",
                r#"{"id":"b","tokens":["y","z"],"label":1,"attrs":{"g":"f"},"lang":"en"}"#, "\n",
                r#"{"id":"c","tokens":["x"],"label":1,"attrs":{"g":"f"},"lang":"it","split":"test"}"#, "\n",
            ),
        )
        .unwrap();
        let d = read_samples(&p, None).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.samples[1].split, Split::Train);
        assert_eq!(d.languages, vec!["en", "it"]);
    }

    #[test]
    fn missing_label_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        fs::write(
            &p,
            concat!(
                r#"{"id":"a","tokens":["x"],"label":0,"attrs":{},"lang":"en"}"#, "\n",
                r#"{"id":"b","tokens":["x"],"attrs":{},"lang":"en"}"#, "\n",
            ),
        )
        .unwrap();
        match read_samples(&p, None) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("label"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn validation_failures_are_aggregated() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        fs::write(
            &p,
            concat!(
                r#"{"id":"a","tokens":[],"label":0,"attrs":{"g":"m"},"lang":"en"}"#, "\n",
                r#"{"id":"b","tokens":["x"],"label":0,"attrs":{"g":"f"},"lang":"xx"}"#, "\n",
            ),
        )
        .unwrap();
        let meta = DatasetMeta {
            num_classes: 2,
            languages: vec!["en".into()],
            attribute_specs: vec![AttributeSpec::new("g", &["m", "f"])],
            max_len: 32,
        };
        match read_samples(&p, Some(&meta)) {
            Err(Error::Invalid(v)) => assert_eq!(v.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn data_dir_round_trip() {
        let d = small_corpus();
        let dir = tempfile::tempdir().unwrap();
        write_data_dir(dir.path(), &d).unwrap();
        let back = read_data_dir(dir.path()).unwrap();
        let key = |x: &Dataset| {
            let mut s = x.samples.clone();
            s.sort_by(|a, b| a.id.cmp(&b.id));
            s
        };
        assert_eq!(key(&back), key(&d));
        assert_eq!(DatasetMeta::of(&back), DatasetMeta::of(&d));
    }

    #[test]
    fn predictions_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.jsonl");
        let recs = vec![PredictionRecord {
            id: "1".into(),
            lang: "en".into(),
            attrs: [("g".to_string(), "m".to_string())].into_iter().collect(),
            gold: 1,
            pred: 0,
            score: 0.123456789012345,
        }];
        write_predictions(&p, &recs).unwrap();
        assert_eq!(read_predictions(&p).unwrap(), recs);

        fs::write(&p, "{\"id\":\"1\",\"lang\":\"en\",\"attrs\":{},\"gold\":1,\"pred\":0}\n").unwrap();
        assert!(matches!(read_predictions(&p), Err(Error::Parse { line: 1, .. })));

        fs::write(&p, "").unwrap();
        assert!(read_predictions(&p).unwrap().is_empty());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let d = small_corpus();
        for mode in [EncoderMode::Projected, EncoderMode::Identity] {
            let dims = EncoderDims { embed: 5, hidden: 5, classes: 2 };
            let mut p = init_params(Vocab::from_dataset(&d), dims, mode, 3).unwrap();
            p.classifier_mut().1[0] = 1.0 / 3.0;
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("ck.txt");
            write_checkpoint(&path, &p).unwrap();
            assert_eq!(read_checkpoint(&path).unwrap(), p);
        }
    }

    #[test]
    fn corrupt_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.txt");
        fs::write(&path, "polyfair-checkpoint 1\nmode projected\ndims 2 1 1 2\nvocab\n<unk>\na\nparams 3\n0.1\n").unwrap();
        assert!(read_checkpoint(&path).is_err());
        fs::write(&path, "something else\n").unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn sig6_rounding() {
        assert_eq!(round_sig6(0.0919399999), 0.09194);
        assert_eq!(round_sig6(1234567.0), 1234570.0);
        assert_eq!(round_sig6(0.0), 0.0);
        assert_eq!(round_sig6(-2.0 / 3.0), -0.666667);
    }

    mod props {
        use super::*;
        use crate::metrics::full_report;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn report_file_round_trips(
                raw in prop::collection::vec((0usize..3, 0usize..2, 0usize..2, 0usize..2, 0.0f64..1.0), 1..40)
            ) {
                let recs: Vec<PredictionRecord> = raw
                    .into_iter()
                    .enumerate()
                    .map(|(i, (l, g, gold, pred, score))| PredictionRecord {
                        id: i.to_string(),
                        lang: ["en", "it", "pl"][l].into(),
                        attrs: [("g".to_string(), ["m", "f"][g].to_string())].into_iter().collect(),
                        gold,
                        pred,
                        score,
                    })
                    .collect();
                let report = full_report(&recs, &AttributeSpec::new("g", &["m", "f"]), 1, &[]).unwrap();
                let file = ReportFile::new(&report, serde_json::json!({"seed": 1, "lr": 0.01})).unwrap();
                let text = file.emit().unwrap();
                let back = ReportFile::parse(&text).unwrap();
                prop_assert_eq!(&back, &file);
                prop_assert_eq!(back.emit().unwrap(), text);
            }
        }
    }
}
