//! Training loss terms and their analytic gradients.
//!
//! Every `*_grad` function returns the loss value together with the gradient
//! with respect to the prediction, in the same layout as the prediction.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{Trajectory, CHANNELS};
use crate::wavelet::{ScopedStack, WaveletPyramid};
use crate::weights::WeightSchedule;

/// `0.5 x²` for `|x| < 1`, `|x| − 0.5` otherwise.
pub fn smooth_l1(diff: f64) -> f64 {
    let a = diff.abs();
    if a < 1.0 {
        0.5 * diff * diff
    } else {
        a - 0.5
    }
}

pub fn smooth_l1_derivative(diff: f64) -> f64 {
    if diff.abs() < 1.0 {
        diff
    } else {
        diff.signum()
    }
}

/// Elementwise smooth-L1 of `pred − target`.
pub fn smooth_l1_elementwise(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "prediction has {} elements, target {}",
            pred.len(),
            target.len()
        )));
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| smooth_l1(p - t))
        .collect())
}

/// Per-step regression loss: mean smooth-L1 over the six channels.
/// Both slices are row-major `T×6`.
pub fn per_step_regression(pred: &[f64], target: &[f64]) -> Vec<f64> {
    pred.chunks_exact(CHANNELS)
        .zip(target.chunks_exact(CHANNELS))
        .map(|(p, t)| {
            p.iter().zip(t).map(|(a, b)| smooth_l1(a - b)).sum::<f64>() / CHANNELS as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionLoss {
    pub value: f64,
    pub per_step: Vec<f64>,
}

/// `(1/T) Σ_t w_t L_t` over two trajectories.
pub fn weighted_regression_loss(
    pred: &Trajectory,
    target: &Trajectory,
    schedule: &WeightSchedule,
) -> Result<RegressionLoss> {
    if pred.len() != target.len() || schedule.len() != pred.len() {
        return Err(Error::Shape(format!(
            "prediction {}, target {} and schedule {} lengths differ",
            pred.len(),
            target.len(),
            schedule.len()
        )));
    }
    let flat = |t: &Trajectory| -> Vec<f64> { t.points.iter().flat_map(|p| p.channels()).collect() };
    let per_step = per_step_regression(&flat(pred), &flat(target));
    let value = weighted_mean(&per_step, &schedule.weights);
    Ok(RegressionLoss { value, per_step })
}

/// `(1/T) Σ_t w_t L_t`, summed in ascending `t`.
pub fn weighted_mean(per_step: &[f64], weights: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (l, w) in per_step.iter().zip(weights) {
        acc += l * w;
    }
    acc / per_step.len() as f64
}

/// Gradient of [`weighted_mean`] of [`per_step_regression`] w.r.t. `pred`.
pub fn weighted_regression_grad(pred: &[f64], target: &[f64], weights: &[f64]) -> Vec<f64> {
    let steps = weights.len() as f64;
    let mut grad = vec![0.0; pred.len()];
    for (t, w) in weights.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        let scale = w / (steps * CHANNELS as f64);
        for c in 0..CHANNELS {
            let i = t * CHANNELS + c;
            grad[i] = scale * smooth_l1_derivative(pred[i] - target[i]);
        }
    }
    grad
}

/// Components compared by the decision-scope loss. A wavelet pyramid has an
/// approximation; a downsampling stack does not.
#[derive(Debug, Clone, PartialEq)]
pub struct ScopeComponents {
    pub approximation: Option<Array2<f64>>,
    pub details: Vec<Array2<f64>>,
}

impl From<&WaveletPyramid> for ScopeComponents {
    fn from(p: &WaveletPyramid) -> Self {
        Self {
            approximation: Some(p.approximation.clone()),
            details: p.details.clone(),
        }
    }
}

impl From<&ScopedStack> for ScopeComponents {
    fn from(s: &ScopedStack) -> Self {
        Self {
            approximation: None,
            details: s.levels.clone(),
        }
    }
}

impl ScopeComponents {
    fn zeros_like(&self) -> Self {
        Self {
            approximation: self.approximation.as_ref().map(|a| Array2::zeros(a.raw_dim())),
            details: self.details.iter().map(|d| Array2::zeros(d.raw_dim())).collect(),
        }
    }

    fn term_count(&self) -> usize {
        self.details.len() + usize::from(self.approximation.is_some())
    }
}

/// Horizon masks `H_l = floor(h / 2^(l-1))` detail samples per level, each
/// capped at the level length.
pub fn level_horizons(h: usize, detail_lengths: &[usize]) -> Vec<usize> {
    detail_lengths
        .iter()
        .enumerate()
        .map(|(i, len)| (h >> i).min(*len))
        .collect()
}

fn check_scope_shapes(
    pred: &ScopeComponents,
    target: &ScopeComponents,
    horizons: &[usize],
) -> Result<()> {
    if pred.details.len() != target.details.len() || horizons.len() != target.details.len() {
        return Err(Error::Shape(format!(
            "{} predicted levels, {} target levels, {} horizons",
            pred.details.len(),
            target.details.len(),
            horizons.len()
        )));
    }
    match (&pred.approximation, &target.approximation) {
        (Some(a), Some(b)) if a.shape() != b.shape() => {
            return Err(Error::Shape(format!(
                "approximation shapes {:?} and {:?} differ",
                a.shape(),
                b.shape()
            )))
        }
        (Some(_), None) | (None, Some(_)) => {
            return Err(Error::Shape("approximation present on one side only".into()))
        }
        _ => {}
    }
    for (l, ((p, t), h)) in pred.details.iter().zip(&target.details).zip(horizons).enumerate() {
        if p.shape() != t.shape() {
            return Err(Error::Shape(format!(
                "level {} shapes {:?} and {:?} differ",
                l + 1,
                p.shape(),
                t.shape()
            )));
        }
        if *h > t.nrows() {
            return Err(Error::Parameter(format!(
                "horizon {h} exceeds level {} length {}",
                l + 1,
                t.nrows()
            )));
        }
    }
    Ok(())
}

/// Frobenius norm of `a[:h] − b[:h]` and, optionally, its gradient w.r.t. `a`.
fn masked_norm(a: &Array2<f64>, b: &Array2<f64>, h: usize, grad: Option<&mut Array2<f64>>) -> f64 {
    let diff = &a.slice(s![..h, ..]) - &b.slice(s![..h, ..]);
    let norm = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    if let Some(g) = grad {
        if norm > 0.0 {
            g.slice_mut(s![..h, ..]).assign(&(diff / norm));
        }
    }
    norm
}

/// Mean over levels (and the approximation, when present) of the masked L2
/// error. The approximation is never masked.
pub fn scope_loss(pred: &ScopeComponents, target: &ScopeComponents, horizons: &[usize]) -> Result<f64> {
    check_scope_shapes(pred, target, horizons)?;
    let mut acc = 0.0;
    for ((p, t), h) in pred.details.iter().zip(&target.details).zip(horizons) {
        acc += masked_norm(p, t, *h, None);
    }
    if let (Some(p), Some(t)) = (&pred.approximation, &target.approximation) {
        acc += masked_norm(p, t, p.nrows(), None);
    }
    Ok(acc / target.term_count() as f64)
}

pub fn scope_loss_grad(
    pred: &ScopeComponents,
    target: &ScopeComponents,
    horizons: &[usize],
) -> Result<(f64, ScopeComponents)> {
    check_scope_shapes(pred, target, horizons)?;
    let n = target.term_count() as f64;
    let mut grad = pred.zeros_like();
    let mut acc = 0.0;
    for (((p, t), h), g) in pred
        .details
        .iter()
        .zip(&target.details)
        .zip(horizons)
        .zip(grad.details.iter_mut())
    {
        acc += masked_norm(p, t, *h, Some(g));
    }
    if let (Some(p), Some(t), Some(g)) = (&pred.approximation, &target.approximation, grad.approximation.as_mut()) {
        acc += masked_norm(p, t, p.nrows(), Some(g));
    }
    grad.details.iter_mut().for_each(|g| *g /= n);
    if let Some(g) = grad.approximation.as_mut() {
        *g /= n;
    }
    Ok((acc / n, grad))
}

/// One ego/agent circle pair at a timestep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CirclePair {
    pub ego_center: [f64; 2],
    pub agent_center: [f64; 2],
    /// Sum of the ego and agent radii, metres.
    pub radius_sum: f64,
    pub tolerance: f64,
}

impl CirclePair {
    pub fn invasion(&self) -> f64 {
        let d = (self.ego_center[0] - self.agent_center[0])
            .hypot(self.ego_center[1] - self.agent_center[1]);
        (self.radius_sum + self.tolerance - d).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CircleSet {
    /// Indexed by timestep; length is the planning horizon.
    pub steps: Vec<Vec<CirclePair>>,
}

/// `(1/T_f) Σ_t Σ_i max(0, R_c + ε − d_i^t)`.
pub fn collision_loss(circles: &CircleSet) -> f64 {
    if circles.steps.is_empty() {
        return 0.0;
    }
    let total: f64 = circles
        .steps
        .iter()
        .map(|pairs| pairs.iter().map(CirclePair::invasion).sum::<f64>())
        .sum();
    total / circles.steps.len() as f64
}

/// Static circular obstacle in the planning frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticCircle {
    pub center: [f64; 2],
    pub radius_sum: f64,
}

/// Collision loss of a planned position sequence against static circles,
/// with the gradient w.r.t. each planned position.
pub fn collision_loss_grad(
    positions: &[[f64; 2]],
    obstacles: &[StaticCircle],
    tolerance: f64,
) -> (f64, Vec<[f64; 2]>) {
    let mut grad = vec![[0.0; 2]; positions.len()];
    if positions.is_empty() || obstacles.is_empty() {
        return (0.0, grad);
    }
    let inv_t = 1.0 / positions.len() as f64;
    let mut total = 0.0;
    for (p, g) in positions.iter().zip(grad.iter_mut()) {
        for o in obstacles {
            let dx = p[0] - o.center[0];
            let dy = p[1] - o.center[1];
            let d = dx.hypot(dy);
            let invasion = o.radius_sum + tolerance - d;
            if invasion > 0.0 {
                total += invasion;
                if d > 0.0 {
                    g[0] -= inv_t * dx / d;
                    g[1] -= inv_t * dy / d;
                }
            }
        }
    }
    (total * inv_t, grad)
}

fn log_sum_exp(scores: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

/// Cross-entropy of `softmax(scores)` against a one-hot target.
pub fn mode_score_loss(scores: &[f64], closest: usize) -> Result<f64> {
    if closest >= scores.len() {
        return Err(Error::Parameter(format!(
            "mode index {closest} out of range for {} modes",
            scores.len()
        )));
    }
    if scores.len() == 1 {
        return Ok(0.0);
    }
    let lse = log_sum_exp(scores);
    if scores[closest].is_infinite() && scores[closest] > 0.0 {
        return Ok(0.0);
    }
    Ok(lse - scores[closest])
}

pub fn mode_score_grad(scores: &[f64], closest: usize) -> Result<(f64, Vec<f64>)> {
    let loss = mode_score_loss(scores, closest)?;
    let lse = log_sum_exp(scores);
    let mut grad: Vec<f64> = scores.iter().map(|s| (s - lse).exp()).collect();
    grad[closest] -= 1.0;
    Ok((loss, grad))
}

/// Index of the mode whose waypoint at `step` is nearest to `target`
/// (lowest index on ties). `modes[m]` is a row-major `T×6` slice.
pub fn closest_mode<'a>(modes: impl IntoIterator<Item = &'a [f64]>, target: &[f64], step: usize) -> usize {
    let (tx, ty) = (target[step * CHANNELS], target[step * CHANNELS + 1]);
    let mut best = (0, f64::INFINITY);
    for (m, traj) in modes.into_iter().enumerate() {
        let d = (traj[step * CHANNELS] - tx).hypot(traj[step * CHANNELS + 1] - ty);
        if d < best.1 {
            best = (m, d);
        }
    }
    best.0
}

/// Which loss terms are active, and their coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossTerms {
    pub reg: Option<f64>,
    pub cls: Option<f64>,
    pub col: Option<f64>,
    pub ds: Option<f64>,
}

impl Default for LossTerms {
    fn default() -> Self {
        Self {
            reg: Some(1.0),
            cls: Some(1.0),
            col: Some(1.0),
            ds: Some(1.0),
        }
    }
}

/// Raw, unscaled loss values for one sample or batch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossParts {
    pub reg: f64,
    pub cls: f64,
    pub col: f64,
    pub ds: f64,
    pub per_step_reg: Vec<f64>,
}

/// Scaled contributions; `total` is their sum.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub reg: f64,
    pub cls: f64,
    pub col: f64,
    pub ds: f64,
    pub total: f64,
    pub per_step_reg: Vec<f64>,
}

pub fn total_loss(parts: &LossParts, terms: &LossTerms) -> LossBreakdown {
    let scaled = |v: f64, c: Option<f64>| c.map_or(0.0, |c| c * v);
    let reg = scaled(parts.reg, terms.reg);
    let cls = scaled(parts.cls, terms.cls);
    let col = scaled(parts.col, terms.col);
    let ds = scaled(parts.ds, terms.ds);
    LossBreakdown {
        reg,
        cls,
        col,
        ds,
        total: reg + cls + col + ds,
        per_step_reg: parts.per_step_reg.clone(),
    }
}
