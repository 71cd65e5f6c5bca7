//! NULL-anchored symmetric contrastive objective and its analytic gradient.
//!
//! For a batch of N pairs with unit image embeddings `I_j` and text
//! embeddings `T_k`, logits are `x[j][k] = <I_j, T_k> / tau` and
//!
//! ```text
//! L = -(1/2N) Σ_j log softmax_k(x[j][·])[j]  -  (1/2N) Σ_k log softmax_j(x[·][k])[k]
//! ```
//!
//! Non-visual rows use the NULL image embedding as `I_j`. The
//! classification-only variant additionally replaces every visual image with
//! one common image.
//!
//! The gradient is exact: `dL/dx[j][k] = (p_row[j][k] + p_col[j][k] - 2δ_jk) / 2N`,
//! pushed through `x = s·<I, T>` (`s = exp(log_inv_tau)`), the unit-norm
//! Jacobian `(I - x̂x̂ᵀ)/‖x‖`, the linear image projector and the text MLP.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::corpus::{ImageBank, Label, LabeledExample};
use crate::error::{Error, Result};
use crate::model::{ImageForward, ModelCheckpoint, Params, TextForward};
use crate::vector::{dot, seeded_random_vector, RawVector, NORM_EPS};

/// Seed of the shared visual anchor used by the classification-only objective.
pub const COMMON_VISUAL_SEED: u64 = 21;

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    texts: Vec<String>,
    image_features: Vec<Option<RawVector>>,
    labels: Vec<Label>,
}

impl Batch {
    /// `image_features[i]` must be present exactly when `labels[i]` is visual.
    pub fn new(
        texts: Vec<String>,
        image_features: Vec<Option<RawVector>>,
        labels: Vec<Label>,
    ) -> Result<Self> {
        if texts.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if texts.len() != image_features.len() || texts.len() != labels.len() {
            return Err(Error::InvalidBatch("texts, features and labels differ in length".into()));
        }
        for (i, (f, l)) in image_features.iter().zip(&labels).enumerate() {
            if f.is_some() != (*l == Label::Visual) {
                return Err(Error::InvalidBatch(format!(
                    "row {i}: visual rows need features, non-visual rows must not have any"
                )));
            }
        }
        Ok(Self {
            texts,
            image_features,
            labels,
        })
    }

    pub fn from_examples(examples: &[LabeledExample], bank: &ImageBank) -> Result<Self> {
        let mut texts = Vec::with_capacity(examples.len());
        let mut feats = Vec::with_capacity(examples.len());
        let mut labels = Vec::with_capacity(examples.len());
        for ex in examples {
            let f = match (&ex.label, &ex.image_id) {
                (Label::Visual, Some(id)) => Some(
                    bank.get(id)
                        .cloned()
                        .ok_or_else(|| Error::UnresolvedImage(id.clone()))?,
                ),
                (Label::NonVisual, None) => None,
                _ => {
                    return Err(Error::InvalidBatch(format!(
                        "example {:?} has inconsistent label and image id",
                        ex.text
                    )))
                }
            };
            texts.push(ex.text.clone());
            feats.push(f);
            labels.push(ex.label);
        }
        Self::new(texts, feats, labels)
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn texts(&self) -> &[String] {
        &self.texts
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    /// Rows taken in `order` (a permutation or any selection).
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            texts: order.iter().map(|&i| self.texts[i].clone()).collect(),
            image_features: order.iter().map(|&i| self.image_features[i].clone()).collect(),
            labels: order.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Concatenation of two batches.
    pub fn concat(&self, other: &Batch) -> Self {
        let mut out = self.clone();
        out.texts.extend(other.texts.iter().cloned());
        out.image_features.extend(other.image_features.iter().cloned());
        out.labels.extend(other.labels.iter().copied());
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    /// `logits[j][k] = <I_j, T_k> / tau`
    pub logits: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    #[default]
    NullAnchored,
    ClassificationOnly,
}

/// Which image each row is matched with.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    /// Visual rows use their own image, non-visual rows the NULL image.
    NullAnchored,
    /// Visual rows share `common_visual`, non-visual rows the NULL image.
    ClassificationOnly { common_visual: RawVector },
}

impl Objective {
    pub fn from_kind(kind: ObjectiveKind, d_img: usize) -> Result<Self> {
        Ok(match kind {
            ObjectiveKind::NullAnchored => Objective::NullAnchored,
            ObjectiveKind::ClassificationOnly => Objective::ClassificationOnly {
                common_visual: seeded_random_vector(COMMON_VISUAL_SEED, d_img)?,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ObjectiveOptions {
    /// Drop off-diagonal logits between two rows that share the same anchor
    /// image (e.g. two NULL rows) from both softmaxes. Off by default, which
    /// evaluates the objective exactly as written.
    pub mask_shared_anchors: bool,
}

/// Loss value and gradient with respect to every trainable parameter.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub report: LossReport,
    pub grads: Params,
}

pub fn contrastive_loss(m: &ModelCheckpoint, b: &Batch) -> Result<LossReport> {
    evaluate(m, b, &Objective::NullAnchored, ObjectiveOptions::default(), false).map(|g| g.report)
}

pub fn contrastive_grad(m: &ModelCheckpoint, b: &Batch) -> Result<Gradient> {
    evaluate(m, b, &Objective::NullAnchored, ObjectiveOptions::default(), true)
}

pub fn classification_only_loss(
    m: &ModelCheckpoint,
    b: &Batch,
    common_visual_features: &RawVector,
) -> Result<LossReport> {
    let obj = Objective::ClassificationOnly {
        common_visual: common_visual_features.clone(),
    };
    evaluate(m, b, &obj, ObjectiveOptions::default(), false).map(|g| g.report)
}

pub fn classification_only_grad(
    m: &ModelCheckpoint,
    b: &Batch,
    common_visual_features: &RawVector,
) -> Result<Gradient> {
    let obj = Objective::ClassificationOnly {
        common_visual: common_visual_features.clone(),
    };
    evaluate(m, b, &obj, ObjectiveOptions::default(), true)
}

pub fn objective_loss(
    m: &ModelCheckpoint,
    b: &Batch,
    objective: &Objective,
    opts: ObjectiveOptions,
) -> Result<LossReport> {
    evaluate(m, b, objective, opts, false).map(|g| g.report)
}

pub fn objective_grad(
    m: &ModelCheckpoint,
    b: &Batch,
    objective: &Objective,
    opts: ObjectiveOptions,
) -> Result<Gradient> {
    evaluate(m, b, objective, opts, true)
}

/// Symmetric cross-entropy over a square logit matrix with the diagonal as
/// targets. Returns the loss and `dL/dlogits`. Entries where `mask` is true
/// are excluded from both softmaxes (the diagonal is never masked).
pub fn symmetric_cross_entropy(
    logits: &Array2<f64>,
    mask: Option<&Array2<bool>>,
) -> Result<(f64, Array2<f64>)> {
    let n = logits.nrows();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if logits.ncols() != n {
        return Err(Error::InvalidBatch("logit matrix must be square".into()));
    }
    let keep = |j: usize, k: usize| j == k || mask.is_none_or(|m| !m[[j, k]]);
    let scale = 1.0 / (2 * n) as f64;
    let mut grad = Array2::<f64>::zeros((n, n));
    let mut row_total = 0.0;
    let mut col_total = 0.0;

    // Image -> text: softmax along each row.
    for j in 0..n {
        let max = (0..n)
            .filter(|&k| keep(j, k))
            .map(|k| logits[[j, k]])
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n)
            .filter(|&k| keep(j, k))
            .map(|k| (logits[[j, k]] - max).exp())
            .sum();
        row_total += max + denom.ln() - logits[[j, j]];
        for k in (0..n).filter(|&k| keep(j, k)) {
            grad[[j, k]] += scale * (logits[[j, k]] - max).exp() / denom;
        }
        grad[[j, j]] -= scale;
    }
    // Text -> image: softmax along each column.
    for k in 0..n {
        let max = (0..n)
            .filter(|&j| keep(j, k))
            .map(|j| logits[[j, k]])
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n)
            .filter(|&j| keep(j, k))
            .map(|j| (logits[[j, k]] - max).exp())
            .sum();
        col_total += max + denom.ln() - logits[[k, k]];
        for j in (0..n).filter(|&j| keep(j, k)) {
            grad[[j, k]] += scale * (logits[[j, k]] - max).exp() / denom;
        }
        grad[[k, k]] -= scale;
    }
    let loss = scale * (row_total + col_total);
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    Ok((loss, grad))
}

enum Anchor<'a> {
    Own(&'a RawVector),
    Null,
    Common,
}

fn evaluate(
    m: &ModelCheckpoint,
    b: &Batch,
    objective: &Objective,
    opts: ObjectiveOptions,
    want_grad: bool,
) -> Result<Gradient> {
    let n = b.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let anchors: Vec<Anchor> = b
        .image_features
        .iter()
        .map(|f| match (f, objective) {
            (None, _) => Anchor::Null,
            (Some(_), Objective::ClassificationOnly { .. }) => Anchor::Common,
            (Some(f), Objective::NullAnchored) => Anchor::Own(f),
        })
        .collect();

    let null_fwd = m.forward_image(m.null_features().as_slice())?;
    let common_fwd = match objective {
        Objective::ClassificationOnly { common_visual } => {
            Some(m.forward_image(common_visual.as_slice())?)
        }
        Objective::NullAnchored => None,
    };
    let own_fwd: Vec<Option<ImageForward>> = anchors
        .iter()
        .map(|a| match a {
            Anchor::Own(f) => m.forward_image(f.as_slice()).map(Some),
            _ => Ok(None),
        })
        .collect::<Result<_>>()?;
    let image_of = |j: usize| -> &ImageForward {
        match anchors[j] {
            Anchor::Own(_) => own_fwd[j].as_ref().expect("own image encoded"),
            Anchor::Null => &null_fwd,
            Anchor::Common => common_fwd.as_ref().expect("common image encoded"),
        }
    };
    let texts: Vec<TextForward> = b
        .texts
        .iter()
        .map(|t| m.forward_text(t))
        .collect::<Result<_>>()?;

    let s = m.inverse_temperature();
    let mut sims = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let ij = image_of(j).embedding.as_slice();
        for k in 0..n {
            sims[[j, k]] = dot(ij, texts[k].embedding.as_slice());
        }
    }
    let logits = &sims * s;

    let mask = opts.mask_shared_anchors.then(|| {
        let shared = |j: usize| !matches!(anchors[j], Anchor::Own(_));
        let same_anchor = |j: usize, k: usize| {
            matches!(
                (&anchors[j], &anchors[k]),
                (Anchor::Null, Anchor::Null) | (Anchor::Common, Anchor::Common)
            )
        };
        Array2::from_shape_fn((n, n), |(j, k)| j != k && shared(j) && same_anchor(j, k))
    });
    let (loss, dlogits) = symmetric_cross_entropy(&logits, mask.as_ref())?;
    let report = LossReport { loss, logits };

    let mut grads = Params::zeros(m.config());
    if !want_grad {
        return Ok(Gradient { report, grads });
    }

    // d loss / d log_inv_tau = s * Σ G ⊙ sims
    grads.log_inv_tau = s * (&dlogits * &sims).sum();
    let dsims = &dlogits * s;

    let d_out = m.config().d_out;
    let mut d_null = Array1::<f64>::zeros(d_out);
    let mut d_common = Array1::<f64>::zeros(d_out);
    for j in 0..n {
        let mut d_img = Array1::<f64>::zeros(d_out);
        for k in 0..n {
            d_img.scaled_add(dsims[[j, k]], &ArrayView1::from(texts[k].embedding.as_slice()));
        }
        match anchors[j] {
            Anchor::Own(f) => backprop_image(&mut grads, own_fwd[j].as_ref().unwrap(), f.as_slice(), &d_img),
            Anchor::Null => d_null += &d_img,
            Anchor::Common => d_common += &d_img,
        }
    }
    if anchors.iter().any(|a| matches!(a, Anchor::Null)) {
        backprop_image(&mut grads, &null_fwd, m.null_features().as_slice(), &d_null);
    }
    if let (Some(fwd), Objective::ClassificationOnly { common_visual }) = (&common_fwd, objective) {
        if anchors.iter().any(|a| matches!(a, Anchor::Common)) {
            backprop_image(&mut grads, fwd, common_visual.as_slice(), &d_common);
        }
    }

    for (k, tf) in texts.iter().enumerate() {
        let mut d_txt = Array1::<f64>::zeros(d_out);
        for j in 0..n {
            d_txt.scaled_add(dsims[[j, k]], &ArrayView1::from(image_of(j).embedding.as_slice()));
        }
        backprop_text(&mut grads, m, tf, &d_txt);
    }

    Ok(Gradient { report, grads })
}

/// Gradient through `y = x / ‖x‖`.
fn unit_norm_backward(x: &Array1<f64>, y: &[f64], dy: &Array1<f64>) -> Array1<f64> {
    let norm = x.dot(x).sqrt().max(NORM_EPS);
    let y = ArrayView1::from(y);
    let proj = y.dot(dy);
    (dy - &(&y * proj)) / norm
}

fn backprop_image(grads: &mut Params, fwd: &ImageForward, features: &[f64], d_emb: &Array1<f64>) {
    let dx = unit_norm_backward(&fwd.out, fwd.embedding.as_slice(), d_emb);
    let f = ArrayView1::from(features);
    for (i, &fi) in f.iter().enumerate() {
        grads.w_img.row_mut(i).scaled_add(fi, &dx);
    }
    grads.b_img += &dx;
}

fn backprop_text(grads: &mut Params, m: &ModelCheckpoint, fwd: &TextForward, d_emb: &Array1<f64>) {
    let p = &m.params;
    let d_out = unit_norm_backward(&fwd.out, fwd.embedding.as_slice(), d_emb);
    for (i, &hi) in fwd.hidden.iter().enumerate() {
        if hi != 0.0 {
            grads.w2.row_mut(i).scaled_add(hi, &d_out);
        }
    }
    grads.b2 += &d_out;
    let d_hidden = p.w2.dot(&d_out);
    let d_pre = Array1::from_shape_fn(d_hidden.len(), |i| {
        if fwd.hidden_pre[i] > 0.0 {
            d_hidden[i]
        } else {
            0.0
        }
    });
    for (i, &xi) in fwd.pooled.iter().enumerate() {
        grads.w1.row_mut(i).scaled_add(xi, &d_pre);
    }
    grads.b1 += &d_pre;
    let d_pooled = p.w1.dot(&d_pre) / fwd.token_ids.len() as f64;
    for &id in &fwd.token_ids {
        grads
            .token_embeddings
            .index_axis_mut(Axis(0), id)
            .scaled_add(1.0, &d_pooled);
    }
}
