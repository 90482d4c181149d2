//! Training objectives: feature contrast, semantic contrast, cross-entropy and
//! their weighted total.
//!
//! Each loss has a tape builder (`*_node`) used during training and a plain
//! function that evaluates the same graph once. The two routes share one
//! implementation, so the value a test checks is the value the trainer
//! differentiates.
//!
//! Both contrast losses are the InfoNCE form
//! `-(1/n) sum_i log( exp(s_ii / t) / sum_j exp(s_ij / t) )` over a
//! similarity matrix `s = a b^T`. The positive term stays in the denominator.
//! For features the rows of `a`/`b` are the per-sample features of the two
//! views; for semantics they are the per-class columns of the two class
//! distribution matrices.

use alloc::format;
use alloc::string::ToString;

use crate::diffcore::{NodeId, Tape};
use crate::error::{shape_err, Error, Result};
use crate::numerics::Tensor;

/// Added inside `log` when taking logs of probabilities.
pub const LOG_EPS: f64 = 1e-12;
/// Norm floor for row normalization.
pub const NORM_EPS: f64 = 1e-12;

/// Relative weights of the three terms in the total loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub ce: f64,
    pub feature: f64,
    pub semantic: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            ce: 1.0,
            feature: 1.0,
            semantic: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(ce: f64, feature: f64, semantic: f64) -> Result<Self> {
        let w = Self {
            ce,
            feature,
            semantic,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("w_ce", self.ce),
            ("w_z", self.feature),
            ("w_q", self.semantic),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!(
                    "{name} must be a finite non-negative number, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// The three loss terms and their weighted sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub ce: f64,
    pub feature_contrast: f64,
    pub semantic_contrast: f64,
    pub total: f64,
    pub weights: LossWeights,
}

/// `total = w_ce * ce + w_z * lz + w_q * lq`.
pub fn total_loss(ce: f64, lz: f64, lq: f64, weights: LossWeights) -> Result<LossBreakdown> {
    weights.validate()?;
    for (name, v) in [
        ("ce", ce),
        ("feature_contrast", lz),
        ("semantic_contrast", lq),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
    }
    Ok(LossBreakdown {
        ce,
        feature_contrast: lz,
        semantic_contrast: lq,
        total: weights.ce * ce + weights.feature * lz + weights.semantic * lq,
        weights,
    })
}

fn check_temperature(name: &str, t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be positive, got {t}")))
    }
}

/// InfoNCE over the rows of `a` (anchors) and `b` (positives at the same row).
fn info_nce_rows(
    tape: &mut Tape,
    a: NodeId,
    b: NodeId,
    temperature: f64,
    normalize: bool,
) -> Result<NodeId> {
    let (a, b) = if normalize {
        (
            tape.l2_normalize_rows(a, NORM_EPS)?,
            tape.l2_normalize_rows(b, NORM_EPS)?,
        )
    } else {
        (a, b)
    };
    let n = tape.value(a).rows();
    let bt = tape.transpose(b)?;
    let sim = tape.matmul(a, bt)?;
    let log_p = tape.log_softmax_rows(sim, temperature)?;
    let eye = tape.leaf(Tensor::eye(n))?;
    let diag = tape.mul(log_p, eye)?;
    let total = tape.sum_all(diag)?;
    tape.scale(total, -1.0 / n as f64)
}

/// Feature contrast over `n x p` features of the clean and augmented views.
pub fn feature_contrast_node(
    tape: &mut Tape,
    z: NodeId,
    z_aug: NodeId,
    tau_f: f64,
    normalize: bool,
) -> Result<NodeId> {
    check_temperature("tau_f", tau_f)?;
    let (zs, za) = (tape.value(z), tape.value(z_aug));
    zs.require_matrix("feature_contrast")?;
    if zs.shape() != za.shape() {
        return Err(shape_err("feature_contrast", zs.shape(), za.shape()));
    }
    info_nce_rows(tape, z, z_aug, tau_f, normalize)
}

/// Semantic contrast over the class columns of two `n x c` distribution matrices.
pub fn semantic_contrast_node(
    tape: &mut Tape,
    q: NodeId,
    q_aug: NodeId,
    tau_s: f64,
    normalize: bool,
) -> Result<NodeId> {
    check_temperature("tau_s", tau_s)?;
    let (qs, qa) = (tape.value(q), tape.value(q_aug));
    qs.require_matrix("semantic_contrast")?;
    if qs.shape() != qa.shape() {
        return Err(shape_err("semantic_contrast", qs.shape(), qa.shape()));
    }
    let qt = tape.transpose(q)?;
    let qat = tape.transpose(q_aug)?;
    info_nce_rows(tape, qt, qat, tau_s, normalize)
}

fn label_mask(rows: usize, classes: usize, labels: &[usize]) -> Result<Tensor> {
    if labels.is_empty() {
        return Err(Error::Contract(
            "cross-entropy needs at least one label".to_string(),
        ));
    }
    if labels.len() > rows {
        return Err(Error::Contract(format!(
            "{} labels for {rows} rows",
            labels.len()
        )));
    }
    let mut mask = Tensor::zeros(&[rows, classes]);
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::Contract(format!(
                "label {y} out of range for {classes} classes"
            )));
        }
        mask.row_mut(i)[y] = 1.0;
    }
    Ok(mask)
}

/// Cross-entropy `-(1/m) sum log(q[i, y_i] + eps)` over the first `m = labels.len()`
/// rows of the probability matrix `q`; remaining rows are unlabeled and ignored.
pub fn cross_entropy_node(tape: &mut Tape, q: NodeId, labels: &[usize]) -> Result<NodeId> {
    let (n, c) = tape.value(q).require_matrix("cross_entropy")?;
    let mask = label_mask(n, c, labels)?;
    let log_q = tape.log(q, LOG_EPS)?;
    let mask = tape.leaf(mask)?;
    let picked = tape.mul(log_q, mask)?;
    let total = tape.sum_all(picked)?;
    tape.scale(total, -1.0 / labels.len() as f64)
}

/// Cross-entropy computed from logits through a fused log-softmax.
///
/// Equal to [`cross_entropy_node`] on `row_softmax(logits, 1)` up to the `eps`
/// term, and never negative.
pub fn cross_entropy_logits_node(
    tape: &mut Tape,
    logits: NodeId,
    labels: &[usize],
) -> Result<NodeId> {
    let (n, c) = tape.value(logits).require_matrix("cross_entropy")?;
    let mask = label_mask(n, c, labels)?;
    let log_q = tape.log_softmax_rows(logits, 1.0)?;
    let mask = tape.leaf(mask)?;
    let picked = tape.mul(log_q, mask)?;
    let total = tape.sum_all(picked)?;
    tape.scale(total, -1.0 / labels.len() as f64)
}

fn eval_pair(
    a: &Tensor,
    b: &Tensor,
    build: impl FnOnce(&mut Tape, NodeId, NodeId) -> Result<NodeId>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let ai = tape.leaf(a.clone())?;
    let bi = tape.leaf(b.clone())?;
    let out = build(&mut tape, ai, bi)?;
    Ok(tape.scalar(out))
}

pub fn feature_contrast_loss(
    z: &Tensor,
    z_aug: &Tensor,
    tau_f: f64,
    normalize: bool,
) -> Result<f64> {
    eval_pair(z, z_aug, |t, a, b| {
        feature_contrast_node(t, a, b, tau_f, normalize)
    })
}

fn check_distribution_rows(name: &'static str, q: &Tensor) -> Result<()> {
    let (n, _) = q.require_matrix(name)?;
    for i in 0..n {
        let row = q.row(i);
        let total: f64 = row.iter().sum();
        if row.iter().any(|&v| v < 0.0) || libm::fabs(total - 1.0) > 1e-9 {
            return Err(Error::Contract(format!(
                "{name}: row {i} is not a probability distribution (sum {total})"
            )));
        }
    }
    Ok(())
}

pub fn semantic_contrast_loss(
    q: &Tensor,
    q_aug: &Tensor,
    tau_s: f64,
    normalize: bool,
) -> Result<f64> {
    check_distribution_rows("semantic_contrast", q)?;
    check_distribution_rows("semantic_contrast", q_aug)?;
    eval_pair(q, q_aug, |t, a, b| {
        semantic_contrast_node(t, a, b, tau_s, normalize)
    })
}

pub fn cross_entropy_loss(q: &Tensor, labels: &[usize]) -> Result<f64> {
    check_distribution_rows("cross_entropy", q)?;
    if labels.len() != q.rows() {
        return Err(Error::Contract(format!(
            "{} labels for {} rows",
            labels.len(),
            q.rows()
        )));
    }
    let mut tape = Tape::new();
    let qi = tape.leaf(q.clone())?;
    let out = cross_entropy_node(&mut tape, qi, labels)?;
    Ok(tape.scalar(out))
}
