//! Contrastive losses, classifier head and the combined training objective.
//!
//! For an anchor `i` with positive set `P_i` in a batch of `N` representations,
//!
//! ```text
//! L_i = -Σ_{p∈P_i} log( exp(sim(v_i,v_p)/τ) / Σ_{k≠i} exp(sim(v_i,v_k)/τ) )
//! L   = (1/N) Σ_i L_i
//! ```
//!
//! with cosine similarity. The language-fusion loss takes positives with the same
//! label in a different language; the text-debiasing loss takes positives with the
//! same label and a different sensitive-attribute value. Anchors with an empty
//! positive set contribute nothing.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::model::{LossWeights, Sample};

/// Norm floor used for representations during training.
pub const NORM_EPS: f64 = 1e-8;

/// Floor applied to the gold-class probability inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

pub fn cosine_similarity(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("cosine of lengths {} and {}", u.len(), v.len())));
    }
    let (nu, nv) = (u.dot(&u).sqrt(), v.dot(&v).sqrt());
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((u.dot(&v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// The in-batch view the contrastive losses operate on.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchView {
    pub reps: Array2<f64>,
    pub labels: Vec<usize>,
    pub langs: Vec<String>,
    pub attr_values: Vec<String>,
}

impl BatchView {
    pub fn new(reps: Array2<f64>, labels: Vec<usize>, langs: Vec<String>, attr_values: Vec<String>) -> Result<Self> {
        let n = reps.nrows();
        if n < 2 {
            return Err(Error::InvalidArgument(format!("batch needs at least 2 samples, got {n}")));
        }
        if labels.len() != n || langs.len() != n || attr_values.len() != n {
            return Err(Error::Shape(format!(
                "batch lists disagree: {n} reps, {} labels, {} langs, {} attribute values",
                labels.len(),
                langs.len(),
                attr_values.len()
            )));
        }
        if reps.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite representation".into()));
        }
        Ok(Self {
            reps,
            labels,
            langs,
            attr_values,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Same label, different language, not `i`.
pub fn positive_set_lf(i: usize, batch: &BatchView) -> Vec<usize> {
    positives(i, &batch.labels, &batch.langs)
}

/// Same label, different sensitive-attribute value, not `i`.
pub fn positive_set_td(i: usize, batch: &BatchView) -> Vec<usize> {
    positives(i, &batch.labels, &batch.attr_values)
}

pub fn positive_sets_lf(batch: &BatchView) -> Vec<Vec<usize>> {
    (0..batch.len()).map(|i| positive_set_lf(i, batch)).collect()
}

pub fn positive_sets_td(batch: &BatchView) -> Vec<Vec<usize>> {
    (0..batch.len()).map(|i| positive_set_td(i, batch)).collect()
}

fn positives<T: PartialEq>(i: usize, labels: &[usize], group: &[T]) -> Vec<usize> {
    (0..labels.len())
        .filter(|&t| t != i && labels[t] == labels[i] && group[t] != group[i])
        .collect()
}

/// How zero-length representations are treated when normalizing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormPolicy {
    /// Zero norm is an error.
    Strict,
    /// Norms are floored at the given epsilon.
    Guarded(f64),
}

/// Batch contrastive loss for the given positive sets.
pub fn contrastive_loss(reps: ArrayView2<'_, f64>, positive_sets: &[Vec<usize>], tau: f64) -> Result<f64> {
    contrastive_loss_grad(reps, positive_sets, tau, NormPolicy::Strict).map(|(l, _)| l)
}

/// Batch contrastive loss and its gradient with respect to every representation.
pub fn contrastive_loss_grad(
    reps: ArrayView2<'_, f64>,
    positive_sets: &[Vec<usize>],
    tau: f64,
    policy: NormPolicy,
) -> Result<(f64, Array2<f64>)> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {tau}")));
    }
    let n = reps.nrows();
    if positive_sets.len() != n {
        return Err(Error::Shape(format!("{} positive sets for {n} representations", positive_sets.len())));
    }
    let mut grad = Array2::<f64>::zeros(reps.raw_dim());
    if n < 2 || positive_sets.iter().all(Vec::is_empty) {
        return Ok((0.0, grad));
    }

    let mut norms = Array1::<f64>::zeros(n);
    let mut unit = reps.to_owned();
    for (i, mut row) in unit.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.dot(&row).sqrt();
        let norm = match policy {
            NormPolicy::Strict if norm == 0.0 => return Err(Error::ZeroNorm),
            NormPolicy::Strict => norm,
            NormPolicy::Guarded(eps) => norm.max(eps),
        };
        norms[i] = norm;
        row /= norm;
    }
    let sim = unit.dot(&unit.t());

    // dL/dsim for ordered pairs (i, k)
    let mut dsim = Array2::<f64>::zeros((n, n));
    let mut total = 0.0;
    let scale = 1.0 / (n as f64 * tau);
    for (i, pos) in positive_sets.iter().enumerate() {
        if pos.is_empty() {
            continue;
        }
        let logits: Vec<f64> = (0..n).map(|k| sim[[i, k]] / tau).collect();
        let max = (0..n).filter(|&k| k != i).map(|k| logits[k]).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n).filter(|&k| k != i).map(|k| (logits[k] - max).exp()).sum();
        let lse = max + denom.ln();
        let count = pos.len() as f64;
        total += count * lse - pos.iter().map(|&p| logits[p]).sum::<f64>();
        for k in (0..n).filter(|&k| k != i) {
            dsim[[i, k]] += scale * count * (logits[k] - lse).exp();
        }
        for &p in pos {
            dsim[[i, p]] -= scale;
        }
    }

    // sim is symmetric in (i, k): d/du_i collects both orders
    let sym = &dsim + &dsim.t();
    let dunit = sym.dot(&unit);
    for i in 0..n {
        let u = unit.row(i);
        let du = dunit.row(i);
        let g = if norms[i] > reps.row(i).dot(&reps.row(i)).sqrt() {
            // floored norm: the normalization is a constant scale
            &du / norms[i]
        } else {
            (&du - &(&u * u.dot(&du))) / norms[i]
        };
        grad.row_mut(i).assign(&g);
    }
    Ok((total / n as f64, grad))
}

/// Logits `W v + b` followed by a max-shifted softmax.
pub fn classifier_forward(rep: ArrayView1<'_, f64>, weight: ArrayView2<'_, f64>, bias: ArrayView1<'_, f64>) -> Array1<f64> {
    softmax((weight.dot(&rep) + bias).view())
}

pub fn softmax(logits: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut e = logits.mapv(|x| (x - max).exp());
    let s = e.sum();
    e /= s;
    e
}

/// `-(1/K) log P[gold]`: the one-hot cross-entropy averaged over the K label slots.
pub fn cross_entropy(probs: ArrayView1<'_, f64>, gold: usize, num_classes: usize) -> f64 {
    let p = probs[gold];
    if p < PROB_FLOOR {
        log::warn!("gold-class probability {p:e} clamped to {PROB_FLOOR:e}");
    }
    -p.max(PROB_FLOOR).ln() / num_classes as f64
}

pub fn total_loss(l_lf: f64, l_td: f64, l_ce: f64, weights: &LossWeights) -> f64 {
    weights.alpha * l_lf + weights.beta * l_td + weights.ce_weight() * l_ce
}

/// Loss components of one batch and the gradient of the total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_lf: f64,
    pub l_td: f64,
    pub l_ce: f64,
    pub total: f64,
    /// Same layout as [`EncoderParams::as_flat`].
    #[serde(skip)]
    pub gradient: Vec<f64>,
}

/// Forward pass over a batch plus exact backpropagation of the combined objective.
///
/// Representations are norm-guarded with [`NORM_EPS`]. `attribute` names the
/// sensitive attribute whose values define the debiasing positives.
pub fn loss_and_gradient(
    batch: &[&Sample],
    params: &EncoderParams,
    weights: &LossWeights,
    attribute: &str,
) -> Result<LossBreakdown> {
    weights.validate()?;
    let n = batch.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("batch needs at least 2 samples, got {n}")));
    }
    let k = params.dims.classes;
    let h = params.dims.hidden;
    if let Some(s) = batch.iter().find(|s| s.label >= k) {
        return Err(Error::InvalidArgument(format!("sample {}: label {} >= {k} classes", s.id, s.label)));
    }
    let attr_values = batch
        .iter()
        .map(|s| {
            s.attrs
                .get(attribute)
                .cloned()
                .ok_or_else(|| Error::InvalidArgument(format!("sample {} has no attribute {attribute:?}", s.id)))
        })
        .collect::<Result<Vec<_>>>()?;

    let fwd: Vec<_> = batch.iter().map(|s| params.forward(&s.tokens)).collect();
    let mut reps = Array2::<f64>::zeros((n, h));
    for (i, f) in fwd.iter().enumerate() {
        reps.row_mut(i).assign(&f.rep);
    }
    let view = BatchView::new(
        reps,
        batch.iter().map(|s| s.label).collect(),
        batch.iter().map(|s| s.lang.clone()).collect(),
        attr_values,
    )?;

    let guard = NormPolicy::Guarded(NORM_EPS);
    let (l_lf, g_lf) = contrastive_loss_grad(view.reps.view(), &positive_sets_lf(&view), weights.tau_lf(), guard)?;
    let (l_td, g_td) = contrastive_loss_grad(view.reps.view(), &positive_sets_td(&view), weights.tau_td(), guard)?;

    let (w, b) = params.classifier();
    let w_ce = weights.ce_weight();
    let mut l_ce = 0.0;
    // dL/dlogits, already scaled by the ce weight
    let mut dlogits = Array2::<f64>::zeros((n, k));
    for i in 0..n {
        let p = classifier_forward(view.reps.row(i), w, b);
        let gold = view.labels[i];
        l_ce += cross_entropy(p.view(), gold, k);
        let mut d = p;
        d[gold] -= 1.0;
        d *= w_ce / (n as f64 * k as f64);
        dlogits.row_mut(i).assign(&d);
    }
    l_ce /= n as f64;
    let total = total_loss(l_lf, l_td, l_ce, weights);

    let mut grad = vec![0.0; params.num_params()];
    let layout = params.layout();
    {
        let dw = dlogits.t().dot(&view.reps);
        grad[layout.classifier_weight.clone()].copy_from_slice(dw.as_slice().expect("standard layout"));
        let db = dlogits.sum_axis(Axis(0));
        grad[layout.classifier_bias.clone()].copy_from_slice(db.as_slice().expect("standard layout"));
    }
    let drep = g_lf * weights.alpha + g_td * weights.beta + dlogits.dot(&w);

    let dpooled: Array2<f64> = match params.projection() {
        Some((proj, _)) => {
            let mut dz = drep;
            for (mut row, f) in dz.axis_iter_mut(Axis(0)).zip(&fwd) {
                row.zip_mut_with(&f.rep, |d, v| *d *= 1.0 - v * v);
            }
            let e = params.dims.embed;
            let mut pooled = Array2::<f64>::zeros((n, e));
            for (i, f) in fwd.iter().enumerate() {
                pooled.row_mut(i).assign(&f.pooled);
            }
            let dproj = dz.t().dot(&pooled);
            grad[layout.projection.clone()].copy_from_slice(dproj.as_slice().expect("standard layout"));
            let dbias = dz.sum_axis(Axis(0));
            grad[layout.projection_bias.clone()].copy_from_slice(dbias.as_slice().expect("standard layout"));
            dz.dot(&proj)
        }
        None => drep,
    };

    let e = params.dims.embed;
    let emb_grad = &mut grad[layout.embedding.clone()];
    for (f, d) in fwd.iter().zip(dpooled.axis_iter(Axis(0))) {
        let share = 1.0 / f.rows.len() as f64;
        for &r in &f.rows {
            for (g, x) in emb_grad[r * e..(r + 1) * e].iter_mut().zip(d.iter()) {
                *g += share * x;
            }
        }
    }

    Ok(LossBreakdown {
        l_lf,
        l_td,
        l_ce,
        total,
        gradient: grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_params, EncoderDims, EncoderMode, Vocab};
    use crate::model::Split;
    use ndarray::array;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn batch(reps: Array2<f64>, labels: &[usize], langs: &[&str], attrs: &[&str]) -> BatchView {
        BatchView::new(reps, labels.to_vec(), s(langs), s(attrs)).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let u = array![1.0, 2.0, -3.0];
        assert!((cosine_similarity(u.view(), u.view()).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(array![1.0, 0.0].view(), array![0.0, 1.0].view()).unwrap(), 0.0);
        let c = cosine_similarity(array![1.0, 2.0].view(), array![3.0, 4.0].view()).unwrap();
        assert!((c - 11.0 / (5f64.sqrt() * 5.0)).abs() < 1e-15);
        assert!((c - 0.9839).abs() < 1e-4);
        assert!(matches!(
            cosine_similarity(array![0.0, 0.0].view(), array![1.0, 0.0].view()),
            Err(Error::ZeroNorm)
        ));
        assert!(cosine_similarity(array![1.0].view(), array![1.0, 0.0].view()).is_err());
    }

    #[test]
    fn positive_set_examples() {
        let b = batch(Array2::ones((4, 2)), &[0, 0, 0, 0], &["en", "en", "it", "it"], &["m", "f", "m", "f"]);
        assert_eq!(positive_set_lf(0, &b), vec![2, 3]);
        assert_eq!(positive_set_td(0, &b), vec![1, 3]);

        let same = batch(Array2::ones((3, 2)), &[0, 1, 0], &["en", "en", "en"], &["m", "m", "m"]);
        assert!(positive_sets_lf(&same).iter().all(Vec::is_empty));
        assert!(positive_sets_td(&same).iter().all(Vec::is_empty));

        let two = batch(Array2::ones((2, 2)), &[0, 0], &["en", "en"], &["m", "f"]);
        assert_eq!(positive_set_td(0, &two), vec![1]);
    }

    #[test]
    fn batch_view_validation() {
        assert!(BatchView::new(Array2::ones((1, 2)), vec![0], s(&["en"]), s(&["m"])).is_err());
        assert!(BatchView::new(Array2::ones((2, 2)), vec![0], s(&["en", "it"]), s(&["m", "f"])).is_err());
        let mut bad = Array2::ones((2, 2));
        bad[[0, 0]] = f64::NAN;
        assert!(BatchView::new(bad, vec![0, 0], s(&["en", "it"]), s(&["m", "f"])).is_err());
    }

    #[test]
    fn identical_reps_give_uniform_softmax() {
        let b = batch(Array2::ones((4, 3)), &[0, 0, 0, 0], &["en", "en", "it", "it"], &["m"; 4]);
        let l = contrastive_loss(b.reps.view(), &positive_sets_lf(&b), 0.5).unwrap();
        assert!((l - 2.0 * 3f64.ln()).abs() < 1e-12, "{l}");
        assert!((l - 2.1972).abs() < 1e-4);
    }

    #[test]
    fn empty_positive_sets_give_zero() {
        let reps = array![[1.0, 0.0], [0.0, 1.0]];
        let (l, g) = contrastive_loss_grad(reps.view(), &[vec![], vec![]], 0.1, NormPolicy::Strict).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn three_sample_hand_evaluation() {
        // reps (1,0),(0,1),(1,0); langs en,it,en; equal labels; tau 1
        // i=0: T={1}; denom e^0 + e^1 -> -log(1/(1+e))
        // i=1: T={0,2}; denom 2 e^0 -> 2 log 2
        // i=2: T={1}; same as i=0
        let reps = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        let b = batch(reps, &[0, 0, 0], &["en", "it", "en"], &["m"; 3]);
        let l = contrastive_loss(b.reps.view(), &positive_sets_lf(&b), 1.0).unwrap();
        let e = std::f64::consts::E;
        let expect = (2.0 * (1.0 + e).ln() + 2.0 * 2f64.ln()) / 3.0;
        assert!((l - expect).abs() < 1e-12);
        assert!((l - 1.3376).abs() < 1e-4, "{l}");
    }

    #[test]
    fn contrastive_rejects_bad_tau_and_zero_norm() {
        let reps = array![[1.0, 0.0], [0.0, 1.0]];
        let sets = vec![vec![1], vec![0]];
        assert!(contrastive_loss(reps.view(), &sets, 0.0).is_err());
        assert!(contrastive_loss(reps.view(), &sets, -1.0).is_err());
        let zero = array![[0.0, 0.0], [0.0, 1.0]];
        assert!(matches!(contrastive_loss(zero.view(), &sets, 1.0), Err(Error::ZeroNorm)));
        let (l, g) = contrastive_loss_grad(zero.view(), &sets, 1.0, NormPolicy::Guarded(NORM_EPS)).unwrap();
        assert!(l.is_finite() && g.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(array![0.0, 0.0, 0.0].view());
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        let p = softmax(array![1f64.ln(), 3f64.ln()].view());
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
        let shifted = softmax(array![1f64.ln() + 500.0, 3f64.ln() + 500.0].view());
        assert!((&p - &shifted).iter().all(|d| d.abs() < 1e-12));
        let p = classifier_forward(array![1.0, 2.0].view(), Array2::zeros((3, 2)).view(), Array1::zeros(3).view());
        assert!((p.sum() - 1.0).abs() < 1e-12 && (p[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_examples() {
        assert!((cross_entropy(array![0.5, 0.5].view(), 0, 2) - 0.34657).abs() < 1e-5);
        assert_eq!(cross_entropy(array![0.0, 1.0].view(), 1, 2), 0.0);
        let ce = cross_entropy(array![0.25, 0.25, 0.25, 0.25].view(), 3, 4);
        assert!((ce - 4f64.ln() / 4.0).abs() < 1e-15);
        let clamped = cross_entropy(array![1.0, 0.0].view(), 1, 2);
        assert!((clamped - (-PROB_FLOOR.ln() / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn total_loss_examples() {
        let w = LossWeights::new(0.0, 0.0, 0.1).unwrap();
        assert_eq!(total_loss(5.0, 7.0, 3.0, &w), 3.0);
        let w = LossWeights::new(0.3, 0.3, 0.1).unwrap();
        assert!((total_loss(1.0, 2.0, 3.0, &w) - 2.1).abs() < 1e-12);
        let w = LossWeights::new(0.6, 0.4, 0.1).unwrap();
        assert_eq!(w.ce_weight(), 0.0);
        assert!((total_loss(1.0, 2.0, 1e6, &w) - 1.4).abs() < 1e-12);
    }

    fn sample(id: &str, tokens: &[&str], label: usize, lang: &str, g: &str) -> Sample {
        Sample {
            id: id.into(),
            tokens: s(tokens),
            label,
            attrs: [("g".to_string(), g.to_string())].into_iter().collect(),
            lang: lang.into(),
            split: Split::Train,
        }
    }

    fn toy() -> (Vec<Sample>, EncoderParams) {
        let samples = vec![
            sample("0", &["a", "b"], 0, "en", "m"),
            sample("1", &["c"], 0, "it", "f"),
            sample("2", &["a", "d", "d"], 1, "en", "f"),
            sample("3", &["b", "c", "e"], 1, "it", "m"),
        ];
        let vocab = Vocab::new(["a", "b", "c", "d", "e"]);
        let mut p = init_params(vocab, EncoderDims { embed: 4, hidden: 3, classes: 2 }, EncoderMode::Projected, 3).unwrap();
        {
            let (mut w, _) = p.classifier_mut();
            w.assign(&array![[0.3, -0.2, 0.1], [-0.1, 0.4, 0.2]]);
        }
        (samples, p)
    }

    #[test]
    fn ce_only_gradient_leaves_contrastive_out() {
        let (samples, params) = toy();
        let refs: Vec<&Sample> = samples.iter().collect();
        let ce_only = loss_and_gradient(&refs, &params, &LossWeights::new(0.0, 0.0, 0.1).unwrap(), "g").unwrap();
        assert_eq!(ce_only.total, ce_only.l_ce);
        assert!(ce_only.l_lf > 0.0 && ce_only.l_td > 0.0);

        // with a uniform head the CE gradient w.r.t. everything below the head vanishes
        let mut flat = params.clone();
        flat.classifier_mut().0.fill(0.0);
        let g = loss_and_gradient(&refs, &flat, &LossWeights::new(0.0, 0.0, 0.1).unwrap(), "g").unwrap();
        let l = flat.layout();
        assert!(g.gradient[l.embedding].iter().all(|x| *x == 0.0));
        assert!(g.gradient[l.classifier_weight].iter().any(|x| *x != 0.0));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (samples, params) = toy();
        let refs: Vec<&Sample> = samples.iter().collect();
        let w = LossWeights::new(0.3, 0.2, 0.5).unwrap().with_tau_td(0.7).unwrap();
        let analytic = loss_and_gradient(&refs, &params, &w, "g").unwrap();
        let h = 1e-5;
        for j in 0..params.num_params() {
            let mut plus = params.clone();
            plus.as_flat_mut()[j] += h;
            let mut minus = params.clone();
            minus.as_flat_mut()[j] -= h;
            let fp = loss_and_gradient(&refs, &plus, &w, "g").unwrap().total;
            let fm = loss_and_gradient(&refs, &minus, &w, "g").unwrap().total;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.gradient[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            assert!(err < 1e-4, "param {j}: analytic {a} numeric {numeric}");
        }
    }

    #[test]
    fn batch_errors() {
        let (samples, params) = toy();
        let w = LossWeights::default();
        assert!(loss_and_gradient(&[&samples[0]], &params, &w, "g").is_err());
        let refs: Vec<&Sample> = samples.iter().collect();
        assert!(loss_and_gradient(&refs, &params, &w, "age").is_err());
    }

    #[test]
    fn duplicated_batch_is_finite_and_deterministic() {
        let (samples, params) = toy();
        let refs: Vec<&Sample> = samples.iter().chain(samples.iter()).collect();
        let w = LossWeights::new(0.3, 0.3, 0.1).unwrap();
        let a = loss_and_gradient(&refs, &params, &w, "g").unwrap();
        let b = loss_and_gradient(&refs, &params, &w, "g").unwrap();
        assert_eq!(a, b);
        assert!(a.total.is_finite() && a.gradient.iter().all(|x| x.is_finite()));
    }
}
