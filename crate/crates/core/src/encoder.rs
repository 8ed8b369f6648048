//! Bag-of-embeddings sentence encoder with a softmax classifier head.
//!
//! `v = tanh(P · mean(E[tokens]) + c)`, logits `W v + b`. In identity mode the
//! projection is dropped and `v` is the mean embedding itself.
//!
//! All trainable values live in one flat buffer so that gradients and optimizer
//! state share its layout: embedding (V×E), projection (H×E), projection bias (H),
//! classifier weight (K×H), classifier bias (K). Identity mode has no projection
//! block and no projection bias block.

use std::collections::{BTreeSet, HashMap};
use std::ops::Range;

use ndarray::{Array1, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contrastive::classifier_forward;
use crate::error::{Error, Result};
use crate::model::Dataset;

pub const UNK: &str = "<unk>";

/// Token → embedding row. Row 0 is reserved for unknown tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary from the distinct tokens, in sorted order after the UNK row.
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let distinct: BTreeSet<String> = tokens.into_iter().map(Into::into).filter(|t| t != UNK).collect();
        let tokens: Vec<String> = std::iter::once(UNK.to_string()).chain(distinct).collect();
        Self::from_rows(tokens)
    }

    /// Every token of every sample.
    pub fn from_dataset(dataset: &Dataset) -> Self {
        Self::new(dataset.samples.iter().flat_map(|s| s.tokens.iter().cloned()))
    }

    /// Rows in order; the first must be [`UNK`].
    pub(crate) fn from_rows(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    /// Row for `token`, falling back to the UNK row.
    pub fn get(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Number of rows, UNK included.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// True when there is nothing but the UNK row.
    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub embed: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        Self {
            embed: 32,
            hidden: 32,
            classes: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderMode {
    /// Single tanh projection layer over the pooled embedding.
    #[default]
    Projected,
    /// Mean embedding used directly as the representation (hidden = embed).
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub vocab: Vocab,
    pub dims: EncoderDims,
    pub mode: EncoderMode,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub embedding: Range<usize>,
    pub projection: Range<usize>,
    pub projection_bias: Range<usize>,
    pub classifier_weight: Range<usize>,
    pub classifier_bias: Range<usize>,
}

impl Layout {
    fn new(vocab: usize, dims: EncoderDims, mode: EncoderMode) -> Self {
        let EncoderDims { embed, hidden, classes } = dims;
        let (proj, proj_bias) = match mode {
            EncoderMode::Projected => (hidden * embed, hidden),
            EncoderMode::Identity => (0, 0),
        };
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        Self {
            embedding: take(vocab * embed),
            projection: take(proj),
            projection_bias: take(proj_bias),
            classifier_weight: take(classes * hidden),
            classifier_bias: take(classes),
        }
    }

    pub fn len(&self) -> usize {
        self.classifier_bias.end
    }
}

/// Cached intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub(crate) struct Forward {
    pub rows: Vec<usize>,
    pub pooled: Array1<f64>,
    pub rep: Array1<f64>,
}

/// Seeded initialization: embedding and projection uniform on [-0.1, 0.1],
/// projection bias and classifier zero.
pub fn init_params(vocab: Vocab, dims: EncoderDims, mode: EncoderMode, seed: u64) -> Result<EncoderParams> {
    if vocab.is_empty() {
        return Err(Error::InvalidArgument("vocabulary has no tokens".into()));
    }
    if dims.embed == 0 || dims.hidden == 0 || dims.classes == 0 {
        return Err(Error::InvalidArgument(format!("encoder dims must be >= 1: {dims:?}")));
    }
    if mode == EncoderMode::Identity && dims.hidden != dims.embed {
        return Err(Error::InvalidArgument(format!(
            "identity mode needs hidden == embed (got {} vs {})",
            dims.hidden, dims.embed
        )));
    }
    let layout = Layout::new(vocab.len(), dims, mode);
    let mut data = vec![0.0; layout.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for x in &mut data[layout.embedding.clone()] {
        *x = rng.random_range(-0.1..=0.1);
    }
    for x in &mut data[layout.projection.clone()] {
        *x = rng.random_range(-0.1..=0.1);
    }
    Ok(EncoderParams { vocab, dims, mode, data })
}

impl EncoderParams {
    /// Rebuilds parameters from a flat buffer laid out as described in the module docs.
    pub fn from_flat(vocab: Vocab, dims: EncoderDims, mode: EncoderMode, data: Vec<f64>) -> Result<Self> {
        let expected = Layout::new(vocab.len(), dims, mode).len();
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "parameter buffer has {} values, layout needs {expected}",
                data.len()
            )));
        }
        if mode == EncoderMode::Identity && dims.hidden != dims.embed {
            return Err(Error::Shape("identity mode needs hidden == embed".into()));
        }
        Ok(Self { vocab, dims, mode, data })
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout::new(self.vocab.len(), self.dims, self.mode)
    }

    pub fn num_params(&self) -> usize {
        self.data.len()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn embedding(&self) -> ArrayView2<'_, f64> {
        let l = self.layout();
        view2(&self.data[l.embedding], self.vocab.len(), self.dims.embed)
    }

    pub fn embedding_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        let l = self.layout();
        let (v, e) = (self.vocab.len(), self.dims.embed);
        ArrayViewMut2::from_shape((v, e), &mut self.data[l.embedding]).expect("layout")
    }

    /// `None` in identity mode.
    pub fn projection(&self) -> Option<(ArrayView2<'_, f64>, ArrayView1<'_, f64>)> {
        if self.mode == EncoderMode::Identity {
            return None;
        }
        let l = self.layout();
        Some((
            view2(&self.data[l.projection], self.dims.hidden, self.dims.embed),
            ArrayView1::from(&self.data[l.projection_bias]),
        ))
    }

    pub fn projection_mut(&mut self) -> Option<(ArrayViewMut2<'_, f64>, ArrayViewMut1<'_, f64>)> {
        if self.mode == EncoderMode::Identity {
            return None;
        }
        let l = self.layout();
        let (h, e) = (self.dims.hidden, self.dims.embed);
        let (head, tail) = self.data.split_at_mut(l.projection_bias.start);
        Some((
            ArrayViewMut2::from_shape((h, e), &mut head[l.projection]).expect("layout"),
            ArrayViewMut1::from(&mut tail[..h]),
        ))
    }

    pub fn classifier(&self) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let l = self.layout();
        (
            view2(&self.data[l.classifier_weight], self.dims.classes, self.dims.hidden),
            ArrayView1::from(&self.data[l.classifier_bias]),
        )
    }

    pub fn classifier_mut(&mut self) -> (ArrayViewMut2<'_, f64>, ArrayViewMut1<'_, f64>) {
        let l = self.layout();
        let (k, h) = (self.dims.classes, self.dims.hidden);
        let (head, tail) = self.data.split_at_mut(l.classifier_bias.start);
        (
            ArrayViewMut2::from_shape((k, h), &mut head[l.classifier_weight]).expect("layout"),
            ArrayViewMut1::from(&mut tail[..k]),
        )
    }

    pub(crate) fn forward(&self, tokens: &[String]) -> Forward {
        let rows: Vec<usize> = tokens.iter().map(|t| self.vocab.get(t)).collect();
        let emb = self.embedding();
        let mut pooled = Array1::<f64>::zeros(self.dims.embed);
        for &r in &rows {
            pooled += &emb.row(r);
        }
        if !rows.is_empty() {
            pooled /= rows.len() as f64;
        }
        let rep = match self.projection() {
            Some((proj, bias)) => (proj.dot(&pooled) + bias).mapv(f64::tanh),
            None => pooled.clone(),
        };
        Forward { rows, pooled, rep }
    }

    /// Sentence representation of `tokens`. Unknown tokens use the UNK row.
    pub fn encode(&self, tokens: &[String]) -> Array1<f64> {
        self.forward(tokens).rep
    }

    /// Class probabilities for `tokens`.
    pub fn predict_proba(&self, tokens: &[String]) -> Array1<f64> {
        let (w, b) = self.classifier();
        classifier_forward(self.encode(tokens).view(), w, b)
    }
}

fn view2(data: &[f64], rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), data).expect("layout")
}
