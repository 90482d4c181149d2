//! Optimization loop: SGD with momentum, step-decayed learning rate, the
//! double-contrast objective with ablation switches, metrics and evaluation.
//!
//! Random streams are all derived from `Rng::new(cfg.seed)`:
//! tag 1 initializes parameters, tag 2 then the epoch number shuffles batches,
//! tag 3 then the epoch number augments (each sample then uses its own index as
//! a further tag), tag 4 fixes the batches and tag 5 the views of the
//! end-of-epoch loss probe. A run is therefore a pure function of config, data
//! and seed.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::augment::{make_view_pair_indexed, AugmentPolicy};
use crate::data::{batch_iter, BatchIndices, Dataset, SemiSplit};
use crate::diffcore::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::losses::{
    cross_entropy_logits_node, feature_contrast_node, semantic_contrast_node, total_loss,
    LossBreakdown, LossWeights,
};
use crate::model::{classify, encode, init_params, BoundModel, ModelDims, ModelParams};
use crate::numerics::{Rng, Tensor};

/// Softmax temperature of the classification head.
pub const HEAD_TEMPERATURE: f64 = 1.0;

const EVAL_CHUNK: usize = 512;
const DIVERGENCE_FACTOR: f64 = 10.0;
const DIVERGENCE_PATIENCE: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// 1-based epochs from which the learning rate is multiplied by `decay_factor`.
    pub milestones: Vec<usize>,
    pub decay_factor: f64,
    pub batch: usize,
    pub tau_f: f64,
    pub tau_s: f64,
    pub weights: LossWeights,
    pub use_feature_contrast: bool,
    pub use_semantic_contrast: bool,
    /// L2-normalize features and class columns inside the contrast losses.
    pub normalize: bool,
    pub augment: AugmentPolicy,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub seed: u64,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 100,
            milestones: vec![50, 75],
            decay_factor: 0.1,
            batch: 128,
            tau_f: 0.5,
            tau_s: 0.9,
            weights: LossWeights::default(),
            use_feature_contrast: true,
            use_semantic_contrast: true,
            normalize: true,
            augment: AugmentPolicy::default(),
            hidden: vec![128],
            feature_dim: 64,
            seed: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    /// The full-length schedule: 1000 epochs, decays at 500 and 750, batch 512.
    pub fn paper_scale() -> Self {
        Self {
            epochs: 1000,
            milestones: vec![500, 750],
            batch: 512,
            ..Self::default()
        }
    }

    /// Cross-entropy only; both contrast terms off.
    pub fn supervised_only(mut self) -> Self {
        self.use_feature_contrast = false;
        self.use_semantic_contrast = false;
        self
    }

    /// Weights with disabled terms set to zero.
    pub fn effective_weights(&self) -> LossWeights {
        LossWeights {
            ce: self.weights.ce,
            feature: if self.use_feature_contrast {
                self.weights.feature
            } else {
                0.0
            },
            semantic: if self.use_semantic_contrast {
                self.weights.semantic
            } else {
                0.0
            },
        }
    }

    /// True when some contrast term contributes to the objective.
    pub fn contrast_active(&self) -> bool {
        let w = self.effective_weights();
        w.feature > 0.0 || w.semantic > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::Config(msg));
        if !(self.lr0 > 0.0) || !self.lr0.is_finite() {
            return bad(format!("lr0 must be > 0, got {}", self.lr0));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return bad(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            ));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad(format!(
                "decay_factor must lie in (0, 1], got {}",
                self.decay_factor
            ));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!(
                "milestones must be strictly increasing, got {:?}",
                self.milestones
            ));
        }
        for (name, t) in [("tau_f", self.tau_f), ("tau_s", self.tau_s)] {
            if !(t > 0.0) || !t.is_finite() {
                return bad(format!("{name} must be > 0, got {t}"));
            }
        }
        if self.batch < 2 {
            return bad(format!("batch must be >= 2, got {}", self.batch));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1".to_string());
        }
        if self.feature_dim == 0 || self.hidden.contains(&0) {
            return bad(format!(
                "model widths must be >= 1, got hidden {:?} feature {}",
                self.hidden, self.feature_dim
            ));
        }
        self.weights.validate()?;
        self.augment.validate()?;
        let w = self.effective_weights();
        if w.ce == 0.0 && w.feature == 0.0 && w.semantic == 0.0 {
            return bad("every loss term is disabled or has weight 0".to_string());
        }
        Ok(())
    }

    pub fn model_dims(&self, input: usize, classes: usize) -> Result<ModelDims> {
        ModelDims::new(input, self.hidden.clone(), self.feature_dim, classes)
    }
}

/// `lr0 * decay_factor^(number of milestones <= epoch)`.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    let decays = cfg.milestones.iter().filter(|&&m| m <= epoch).count();
    let mut lr = cfg.lr0;
    for _ in 0..decays {
        lr *= cfg.decay_factor;
    }
    lr
}

/// Momentum buffers, shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdState {
    pub velocity: ModelParams,
    pub step_count: u64,
}

impl SgdState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            velocity: params.zeros_like(),
            step_count: 0,
        }
    }
}

/// `v <- momentum * v + g + weight_decay * theta`, then `theta <- theta - lr * v`.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut SgdState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    let gs = grads.tensors();
    if gs.len() != params.tensors().len() || params.dims != state.velocity.dims {
        return Err(Error::Contract(
            "gradient or velocity layout differs from the parameters".to_string(),
        ));
    }
    for (i, (g, p)) in gs.iter().zip(params.tensors()).enumerate() {
        if g.shape() != p.shape() {
            return Err(Error::Shape {
                op: "sgd_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of {}",
                params.tensor_name(i)
            )));
        }
    }
    for ((p, v), g) in params
        .tensors_mut()
        .into_iter()
        .zip(state.velocity.tensors_mut())
        .zip(gs)
    {
        for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vv = momentum * *vv + gv + weight_decay * *pv;
            *pv -= lr * *vv;
        }
    }
    state.step_count += 1;
    Ok(())
}

/// One step's samples. The first `labels.len()` rows of `x` are labeled.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x: Tensor,
    pub labels: Vec<usize>,
    /// Dataset indices of the rows, used to key per-sample augmentation.
    pub ids: Vec<usize>,
}

impl Batch {
    pub fn gather(ds: &Dataset, idx: &BatchIndices) -> Result<Self> {
        let ids = idx.all();
        Ok(Self {
            x: ds.x.select_rows(&ids)?,
            labels: idx.labeled.iter().map(|&i| ds.y[i]).collect(),
            ids,
        })
    }
}

struct Objective {
    total: NodeId,
    ce: Option<NodeId>,
    lz: Option<NodeId>,
    lq: Option<NodeId>,
}

/// Records the weighted objective of `batch` on `tape`.
fn build_objective(
    tape: &mut Tape,
    bound: &BoundModel,
    batch: &Batch,
    cfg: &TrainConfig,
    rng: &Rng,
) -> Result<Objective> {
    let w = cfg.effective_weights();
    if w.ce > 0.0 && batch.labels.is_empty() {
        return Err(Error::Contract(
            "cross-entropy is on but the batch has no labeled rows".to_string(),
        ));
    }
    let x1 = tape.leaf(batch.x.clone().flatten_rows())?;
    let z1 = bound.encode(tape, x1)?;
    let logits1 = bound.logits(tape, z1)?;

    let mut terms: Vec<(f64, NodeId)> = Vec::with_capacity(3);
    let ce = if w.ce > 0.0 {
        let node = cross_entropy_logits_node(tape, logits1, &batch.labels)?;
        terms.push((w.ce, node));
        Some(node)
    } else {
        None
    };
    let (mut lz, mut lq) = (None, None);
    if cfg.contrast_active() {
        let (_, view2) = make_view_pair_indexed(&batch.x, &batch.ids, rng, &cfg.augment)?;
        let x2 = tape.leaf(view2.flatten_rows())?;
        let z2 = bound.encode(tape, x2)?;
        if w.feature > 0.0 {
            let node = feature_contrast_node(tape, z1, z2, cfg.tau_f, cfg.normalize)?;
            terms.push((w.feature, node));
            lz = Some(node);
        }
        if w.semantic > 0.0 {
            let q1 = tape.row_softmax(logits1, HEAD_TEMPERATURE)?;
            let q2 = bound.classify(tape, z2, HEAD_TEMPERATURE)?;
            let node = semantic_contrast_node(tape, q1, q2, cfg.tau_s, cfg.normalize)?;
            terms.push((w.semantic, node));
            lq = Some(node);
        }
    }
    let mut total: Option<NodeId> = None;
    for (weight, node) in terms {
        let scaled = tape.scale(node, weight)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, scaled)?,
            None => scaled,
        });
    }
    let total = total.ok_or_else(|| Error::Config("no active loss term".to_string()))?;
    Ok(Objective { total, ce, lz, lq })
}

fn breakdown(tape: &Tape, obj: &Objective, cfg: &TrainConfig) -> Result<LossBreakdown> {
    let value = |n: Option<NodeId>| n.map_or(0.0, |id| tape.scalar(id));
    total_loss(
        value(obj.ce),
        value(obj.lz),
        value(obj.lq),
        cfg.effective_weights(),
    )
}

/// Loss and parameter gradients of one batch.
///
/// Both views go through the same encoder. Cross-entropy uses the labeled rows
/// of the clean view; the contrast terms use every row of both views.
pub fn train_step(
    params: &ModelParams,
    batch: &Batch,
    cfg: &TrainConfig,
    rng: &Rng,
) -> Result<(ModelParams, LossBreakdown)> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape)?;
    let obj = build_objective(&mut tape, &bound, batch, cfg, rng)?;
    tape.finalize();
    let loss = breakdown(&tape, &obj, cfg)?;
    let grads = tape.backward(obj.total)?;
    Ok((bound.gradients(&grads, params), loss))
}

/// The objective of one batch without gradients.
pub fn batch_loss(
    params: &ModelParams,
    batch: &Batch,
    cfg: &TrainConfig,
    rng: &Rng,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape)?;
    let obj = build_objective(&mut tape, &bound, batch, cfg, rng)?;
    breakdown(&tape, &obj, cfg)
}

/// One evaluation point of a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    /// 1-based epoch.
    pub epoch: usize,
    pub lr: f64,
    /// Objective after the epoch's last update, averaged over one fixed pass
    /// (same batches and views every epoch); `loss_total` is the weighted sum.
    pub loss_total: f64,
    pub loss_ce: f64,
    pub loss_z: f64,
    pub loss_q: f64,
    /// Accuracy on the labeled training samples.
    pub train_acc: f64,
    /// Accuracy on the test set, NaN when none was given.
    pub test_acc: f64,
    pub wall_ms: f64,
}

/// Hooks into [`fit_with`].
pub trait FitObserver {
    /// Milliseconds since the run started. The default reports 0, which keeps
    /// metrics reproducible byte for byte.
    fn elapsed_ms(&mut self) -> f64 {
        0.0
    }

    fn on_row(&mut self, _row: &MetricsRow) {}
}

/// Observer that does nothing.
pub struct Silent;

impl FitObserver for Silent {}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub params: ModelParams,
    pub metrics: Vec<MetricsRow>,
    /// Mean total loss of the training batches of every epoch, measured
    /// during the updates, whether or not the epoch was logged.
    pub running_losses: Vec<f64>,
}

pub fn fit(
    cfg: &TrainConfig,
    train: &Dataset,
    split: &SemiSplit,
    test: Option<&Dataset>,
) -> Result<FitResult> {
    fit_with(cfg, train, split, test, &mut Silent)
}

/// Trains from freshly initialized parameters.
///
/// With no contrast term active only the labeled samples are iterated, so the
/// run does not depend on the unlabeled set at all. The batch size is capped at
/// the number of samples iterated.
pub fn fit_with(
    cfg: &TrainConfig,
    train: &Dataset,
    split: &SemiSplit,
    test: Option<&Dataset>,
    observer: &mut dyn FitObserver,
) -> Result<FitResult> {
    cfg.validate()?;
    let root = Rng::new(cfg.seed);
    let dims = cfg.model_dims(train.sample_width(), train.classes)?;
    let mut params = init_params(&mut root.derive(1), &dims)?;
    let mut result = FitResult {
        params: params.clone(),
        metrics: Vec::new(),
        running_losses: Vec::new(),
    };
    if cfg.epochs == 0 {
        return Ok(result);
    }
    if let Some(&bad) = split
        .labeled
        .iter()
        .chain(&split.unlabeled)
        .find(|&&i| i >= train.len())
    {
        return Err(Error::Config(format!(
            "split index {bad} out of range for {} samples",
            train.len()
        )));
    }
    let pool = if cfg.contrast_active() {
        split.clone()
    } else {
        SemiSplit {
            labeled: split.labeled.clone(),
            unlabeled: Vec::new(),
        }
    };
    let batch_size = cfg.batch.min(pool.len());
    let labeled_set = train.subset(&split.labeled)?;
    let weights = cfg.effective_weights();
    let probe: Vec<Batch> = batch_iter(&pool, batch_size, &mut root.derive(4))?
        .map(|idx| Batch::gather(train, &idx))
        .collect::<Result<_>>()?;
    let probe_rng = root.derive(5);
    let mut state = SgdState::new(&params);
    let mut initial = None;
    let mut over = 0;

    for epoch in 1..=cfg.epochs {
        let lr = lr_at(cfg, epoch);
        let aug_rng = root.derive(3).derive(epoch as u64);
        let mut sums = [0.0; 3];
        let mut steps = 0usize;
        for idx in batch_iter(&pool, batch_size, &mut root.derive(2).derive(epoch as u64))? {
            let batch = Batch::gather(train, &idx)?;
            let (grads, loss) =
                train_step(&params, &batch, cfg, &aug_rng).map_err(|e| match e {
                    Error::NonFinite(_) => Error::Diverged {
                        epoch,
                        loss: f64::NAN,
                    },
                    other => other,
                })?;
            sums[0] += loss.ce;
            sums[1] += loss.feature_contrast;
            sums[2] += loss.semantic_contrast;
            steps += 1;
            sgd_step(
                &mut params,
                &grads,
                &mut state,
                lr,
                cfg.momentum,
                cfg.weight_decay,
            )?;
        }
        let [ce, lz, lq] = sums.map(|s| s / steps as f64);
        let mean = total_loss(ce, lz, lq, weights).map_err(|_| Error::Diverged {
            epoch,
            loss: f64::NAN,
        })?;
        result.running_losses.push(mean.total);

        let first = *initial.get_or_insert(mean.total);
        over = if mean.total > DIVERGENCE_FACTOR * first {
            over + 1
        } else {
            0
        };
        if over >= DIVERGENCE_PATIENCE {
            return Err(Error::Diverged {
                epoch,
                loss: mean.total,
            });
        }

        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let end = probe_loss(&params, &probe, cfg, &probe_rng).map_err(|e| match e {
                Error::NonFinite(_) => Error::Diverged {
                    epoch,
                    loss: f64::NAN,
                },
                other => other,
            })?;
            let row = MetricsRow {
                epoch,
                lr,
                loss_total: end.total,
                loss_ce: end.ce,
                loss_z: end.feature_contrast,
                loss_q: end.semantic_contrast,
                train_acc: evaluate(&params, &labeled_set)?,
                test_acc: match test {
                    Some(t) => evaluate(&params, t)?,
                    None => f64::NAN,
                },
                wall_ms: observer.elapsed_ms(),
            };
            observer.on_row(&row);
            result.metrics.push(row);
        }
    }
    result.params = params;
    Ok(result)
}

/// Component-wise mean of [`batch_loss`] over `batches`.
fn probe_loss(
    params: &ModelParams,
    batches: &[Batch],
    cfg: &TrainConfig,
    rng: &Rng,
) -> Result<LossBreakdown> {
    let mut sums = [0.0; 3];
    for batch in batches {
        let l = batch_loss(params, batch, cfg, rng)?;
        sums[0] += l.ce;
        sums[1] += l.feature_contrast;
        sums[2] += l.semantic_contrast;
    }
    let [ce, lz, lq] = sums.map(|s| s / batches.len() as f64);
    total_loss(ce, lz, lq, cfg.effective_weights())
}

/// Index of the largest entry; ties go to the lowest index.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Predicted class of every sample.
pub fn predict(params: &ModelParams, x: &Tensor) -> Result<Vec<usize>> {
    let n = x.rows();
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let z = encode(params, &x.select_rows(&idx)?)?;
        let q = classify(params, &z, HEAD_TEMPERATURE)?;
        out.extend((0..q.rows()).map(|i| argmax(q.row(i))));
        start = end;
    }
    Ok(out)
}

/// Fraction of samples whose predicted class equals the label.
pub fn evaluate(params: &ModelParams, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Contract(
            "cannot evaluate on an empty dataset".to_string(),
        ));
    }
    let hits = predict(params, &ds.x)?
        .iter()
        .zip(&ds.y)
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / ds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_examples() {
        let cfg = TrainConfig::paper_scale();
        assert_eq!(lr_at(&cfg, 0), 0.1);
        assert!((lr_at(&cfg, 600) - 0.01).abs() < 1e-15);
        assert!((lr_at(&cfg, 800) - 0.001).abs() < 1e-15);
        assert!((lr_at(&cfg, 500) - 0.01).abs() < 1e-15);
        assert_eq!(lr_at(&cfg, 499), 0.1);
        let mut prev = f64::INFINITY;
        for e in 0..1100 {
            assert!(lr_at(&cfg, e) <= prev);
            prev = lr_at(&cfg, e);
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let cases: [fn(&mut TrainConfig); 7] = [
            |c| c.lr0 = 0.0,
            |c| c.momentum = 1.0,
            |c| c.decay_factor = 0.0,
            |c| c.milestones = vec![75, 50],
            |c| c.tau_s = 0.0,
            |c| c.batch = 1,
            |c| {
                c.weights.ce = 0.0;
                c.use_feature_contrast = false;
                c.use_semantic_contrast = false;
            },
        ];
        for break_it in cases {
            let mut c = TrainConfig::default();
            break_it(&mut c);
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.2, 0.7]), 2);
    }
}
