//! A small fully-connected planning policy with hand-written reverse mode.
//!
//! ```text
//! features ─ tanh(W1·) ─ tanh(W2·) = z0 ─┬─ [idd] z_i = z_{i-1} + tanh(R_i z_{i-1})
//!                                         └─ final hidden ─ trajectory head (M×T×6)
//!                                                          └ score head (M)
//! ```
//! Detail heads map a hidden state to full-resolution position profiles that
//! are downsampled before comparison with the expert's components. In `mdd`
//! mode every detail head reads the final hidden state; in `idd` mode the
//! approximation head reads `z0` and detail head `l` reads `z_l`.
//!
//! All parameters live in one flat vector; [`Layout`] records the offsets.

pub mod checkpoint;
pub mod features;

use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::ScopeComponents;
use crate::observation::{Observation, PlanConfig};
use crate::seed::rng_for;
use crate::sim::{Planner, Scenario};
use crate::trajectory::{Trajectory, Waypoint, CHANNELS};
use crate::wavelet::downsample;

pub use features::{feature_len, featurize};

/// Channels predicted by the detail heads (positions only).
pub const DETAIL_CHANNELS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderMode {
    /// Trajectory and score heads only.
    Plain,
    /// Parallel detail heads on the final hidden state.
    Mdd,
    /// Detail heads on successive residual refinements.
    Idd,
}

/// How expert trajectories are split into supervision components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetailTarget {
    /// Haar pyramid.
    Dwt,
    /// Strided subsampling within a horizon.
    Dwh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: [usize; 2],
    /// Fixed multiplier per trajectory channel applied to the raw head output.
    pub output_scale: [f64; CHANNELS],
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden: [64, 64],
            output_scale: [10.0, 10.0, 1.0, 1.0, 5.0, 5.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub plan: PlanConfig,
    pub network: NetworkConfig,
    pub decoder: DecoderMode,
}

impl PolicyConfig {
    pub fn feature_len(&self) -> usize {
        feature_len(self.plan.history_steps)
    }

    /// Number of detail levels carried by the network.
    pub fn detail_levels(&self) -> usize {
        match self.decoder {
            DecoderMode::Plain => 0,
            _ => self.plan.wavelet_levels,
        }
    }

    fn approx_scale(&self) -> f64 {
        self.network.output_scale[0] * (1u64 << self.detail_levels()) as f64
    }

    fn detail_scale(&self) -> f64 {
        self.network.output_scale[0]
    }

    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        if self.network.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if self.network.output_scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config("output scales must be positive".into()));
        }
        Ok(())
    }
}

/// Offsets of one affine layer inside the flat parameter vector.
/// Weights are row-major `[output][input]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    pub weights: usize,
    pub bias: usize,
}

impl Dense {
    fn allocate(next: &mut usize, input: usize, output: usize) -> Self {
        let weights = *next;
        let bias = weights + input * output;
        *next = bias + output;
        Self {
            input,
            output,
            weights,
            bias,
        }
    }

    fn forward(&self, p: &[f64], x: &[f64], y: &mut [f64]) {
        let w = &p[self.weights..self.bias];
        let b = &p[self.bias..self.bias + self.output];
        for (o, out) in y.iter_mut().enumerate() {
            let row = &w[o * self.input..(o + 1) * self.input];
            *out = b[o] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
        }
    }

    /// Accumulates parameter gradients into `g` and, if given, the input
    /// gradient into `dx`. Rows with zero upstream gradient are skipped.
    fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], g: &mut [f64], mut dx: Option<&mut [f64]>) {
        for (o, d) in dy.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            g[self.bias + o] += d;
            let start = self.weights + o * self.input;
            for (gw, xi) in g[start..start + self.input].iter_mut().zip(x) {
                *gw += d * xi;
            }
            if let Some(dx) = dx.as_deref_mut() {
                for (di, wi) in dx.iter_mut().zip(&p[start..start + self.input]) {
                    *di += d * wi;
                }
            }
        }
    }

    fn param_range(&self) -> std::ops::Range<usize> {
        self.weights..self.bias + self.output
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub trunk: [Dense; 2],
    pub refine: Vec<Dense>,
    pub trajectory: Dense,
    pub score: Dense,
    pub approximation: Option<Dense>,
    pub details: Vec<Dense>,
    pub len: usize,
}

impl Layout {
    pub fn new(config: &PolicyConfig) -> Self {
        let mut next = 0;
        let [h1, h2] = config.network.hidden;
        let plan = &config.plan;
        let levels = config.detail_levels();
        let trunk = [
            Dense::allocate(&mut next, config.feature_len(), h1),
            Dense::allocate(&mut next, h1, h2),
        ];
        let refine = match config.decoder {
            DecoderMode::Idd => (0..levels).map(|_| Dense::allocate(&mut next, h2, h2)).collect(),
            _ => Vec::new(),
        };
        let trajectory = Dense::allocate(
            &mut next,
            h2,
            plan.mode_count * plan.future_steps * CHANNELS,
        );
        let score = Dense::allocate(&mut next, h2, plan.mode_count);
        let head = plan.future_steps * DETAIL_CHANNELS;
        let approximation = (levels > 0).then(|| Dense::allocate(&mut next, h2, head));
        let details = (0..levels).map(|_| Dense::allocate(&mut next, h2, head)).collect();
        Self {
            trunk,
            refine,
            trajectory,
            score,
            approximation,
            details,
            len: next,
        }
    }

    /// Parameter ranges of the read-out heads, zero at initialisation.
    fn head_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut r = vec![self.trajectory.param_range(), self.score.param_range()];
        r.extend(self.approximation.iter().map(Dense::param_range));
        r.extend(self.details.iter().map(Dense::param_range));
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub config: PolicyConfig,
    pub layout: Layout,
    pub values: Vec<f64>,
}

impl PolicyParams {
    /// Trunk and refinement weights uniform in `±1/√fan_in`, biases and all
    /// read-out heads zero.
    pub fn init(config: &PolicyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        let mut values = vec![0.0; layout.len];
        let mut rng = rng_for(seed, "init", 0);
        for d in layout.trunk.iter().chain(&layout.refine) {
            let bound = 1.0 / (d.input as f64).sqrt();
            for v in &mut values[d.weights..d.bias] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        Ok(Self {
            config: config.clone(),
            layout,
            values,
        })
    }

    pub fn from_values(config: &PolicyConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        if values.len() != layout.len {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                layout.len,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector".into()));
        }
        Ok(Self {
            config: config.clone(),
            layout,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Zeroes every read-out head.
    pub fn zero_heads(&mut self) {
        for r in self.layout.head_ranges() {
            self.values[r].fill(0.0);
        }
    }
}

/// Hidden activations kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    pub input: Vec<f64>,
    pub h1: Vec<f64>,
    /// `hidden[0]` is the trunk output; `hidden[i]` the i-th refinement.
    pub hidden: Vec<Vec<f64>>,
    /// `tanh` branch of each refinement block.
    pub branch: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    /// Row-major `M×T×6`.
    pub trajectories: Vec<f64>,
    pub scores: Vec<f64>,
    /// Full-resolution approximation head output, `T×2`, before downsampling.
    pub approx_full: Option<Vec<f64>>,
    /// Full-resolution detail head outputs, `T×2` each.
    pub details_full: Vec<Vec<f64>>,
    pub modes: usize,
    pub steps: usize,
}

impl PolicyOutput {
    pub fn mode(&self, m: usize) -> &[f64] {
        let n = self.steps * CHANNELS;
        &self.trajectories[m * n..(m + 1) * n]
    }

    pub fn modes_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.trajectories.chunks_exact(self.steps * CHANNELS)
    }

    /// Downsampled predictions compared against expert components.
    pub fn scope_components(&self, target: DetailTarget, dwh_horizon: usize) -> ScopeComponents {
        let to_matrix = |v: &[f64]| {
            Array2::from_shape_vec((self.steps, DETAIL_CHANNELS), v.to_vec())
                .expect("detail head has T×2 outputs")
        };
        let levels = self.details_full.len();
        match target {
            DetailTarget::Dwt => ScopeComponents {
                approximation: self
                    .approx_full
                    .as_ref()
                    .map(|a| downsample(to_matrix(a).view(), 1 << levels)),
                details: self
                    .details_full
                    .iter()
                    .enumerate()
                    .map(|(i, d)| downsample(to_matrix(d).view(), 1 << (i + 1)))
                    .collect(),
            },
            DetailTarget::Dwh => ScopeComponents {
                approximation: None,
                details: self
                    .details_full
                    .iter()
                    .enumerate()
                    .map(|(i, d)| {
                        let down = downsample(to_matrix(d).view(), 1 << i);
                        let keep = dwh_horizon.min(down.nrows());
                        down.slice(s![..keep, ..]).to_owned()
                    })
                    .collect(),
            },
        }
    }
}

/// Gradient of a loss with respect to every policy output.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrad {
    pub trajectories: Vec<f64>,
    pub scores: Vec<f64>,
    pub approx_full: Option<Vec<f64>>,
    pub details_full: Vec<Vec<f64>>,
}

impl OutputGrad {
    pub fn zeros_like(out: &PolicyOutput) -> Self {
        Self {
            trajectories: vec![0.0; out.trajectories.len()],
            scores: vec![0.0; out.scores.len()],
            approx_full: out.approx_full.as_ref().map(|a| vec![0.0; a.len()]),
            details_full: out.details_full.iter().map(|d| vec![0.0; d.len()]).collect(),
        }
    }

    /// Scatters the gradient on downsampled components back onto the
    /// full-resolution head outputs (adjoint of [`PolicyOutput::scope_components`]).
    pub fn add_scope_grad(&mut self, target: DetailTarget, grad: &ScopeComponents) {
        let levels = self.details_full.len();
        let scatter = |full: &mut [f64], g: &Array2<f64>, stride: usize| {
            for (r, row) in g.rows().into_iter().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    full[r * stride * DETAIL_CHANNELS + c] += v;
                }
            }
        };
        let (approx_stride, base): (usize, usize) = match target {
            DetailTarget::Dwt => (1 << levels, 1),
            DetailTarget::Dwh => (0, 0),
        };
        if let (Some(full), Some(g)) = (self.approx_full.as_mut(), grad.approximation.as_ref()) {
            scatter(full, g, approx_stride);
        }
        for (i, (full, g)) in self.details_full.iter_mut().zip(&grad.details).enumerate() {
            scatter(full, g, 1 << (i + base));
        }
    }
}

fn tanh_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.tanh());
}

/// Runs the network. Returns outputs and the activations needed by [`backward`].
pub fn forward(params: &PolicyParams, features: &[f64]) -> Result<(PolicyOutput, Activations)> {
    let cfg = &params.config;
    if features.len() != cfg.feature_len() {
        return Err(Error::Shape(format!(
            "policy expects {} features, got {}",
            cfg.feature_len(),
            features.len()
        )));
    }
    let p = &params.values;
    let l = &params.layout;
    let mut h1 = vec![0.0; l.trunk[0].output];
    l.trunk[0].forward(p, features, &mut h1);
    tanh_in_place(&mut h1);
    let mut z0 = vec![0.0; l.trunk[1].output];
    l.trunk[1].forward(p, &h1, &mut z0);
    tanh_in_place(&mut z0);

    let mut hidden = vec![z0];
    let mut branch = Vec::with_capacity(l.refine.len());
    for block in &l.refine {
        let prev = hidden.last().unwrap();
        let mut t = vec![0.0; block.output];
        block.forward(p, prev, &mut t);
        tanh_in_place(&mut t);
        let next = prev.iter().zip(&t).map(|(a, b)| a + b).collect();
        branch.push(t);
        hidden.push(next);
    }
    let last = hidden.last().unwrap();

    let plan = &cfg.plan;
    let mut trajectories = vec![0.0; l.trajectory.output];
    l.trajectory.forward(p, last, &mut trajectories);
    for (i, v) in trajectories.iter_mut().enumerate() {
        *v *= cfg.network.output_scale[i % CHANNELS];
    }
    let mut scores = vec![0.0; l.score.output];
    l.score.forward(p, last, &mut scores);

    let idd = cfg.decoder == DecoderMode::Idd;
    let approx_full = l.approximation.map(|d| {
        let src = if idd { &hidden[0] } else { last };
        let mut out = vec![0.0; d.output];
        d.forward(p, src, &mut out);
        out.iter_mut().for_each(|v| *v *= cfg.approx_scale());
        out
    });
    let details_full = l
        .details
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let src = if idd { &hidden[i + 1] } else { last };
            let mut out = vec![0.0; d.output];
            d.forward(p, src, &mut out);
            out.iter_mut().for_each(|v| *v *= cfg.detail_scale());
            out
        })
        .collect();

    Ok((
        PolicyOutput {
            trajectories,
            scores,
            approx_full,
            details_full,
            modes: plan.mode_count,
            steps: plan.future_steps,
        },
        Activations {
            input: features.to_vec(),
            h1,
            hidden,
            branch,
        },
    ))
}

/// Accumulates `∂loss/∂params` into `grad` given `∂loss/∂outputs`.
pub fn backward(params: &PolicyParams, acts: &Activations, upstream: &OutputGrad, grad: &mut [f64]) {
    let cfg = &params.config;
    let p = &params.values;
    let l = &params.layout;
    let h2 = l.trunk[1].output;
    let levels = acts.hidden.len() - 1;
    let idd = cfg.decoder == DecoderMode::Idd;
    // gradient w.r.t. each hidden state z_0..z_N
    let mut dh: Vec<Vec<f64>> = vec![vec![0.0; h2]; acts.hidden.len()];

    let scaled: Vec<f64> = upstream
        .trajectories
        .iter()
        .enumerate()
        .map(|(i, g)| g * cfg.network.output_scale[i % CHANNELS])
        .collect();
    l.trajectory
        .backward(p, &acts.hidden[levels], &scaled, grad, Some(&mut dh[levels]));
    l.score
        .backward(p, &acts.hidden[levels], &upstream.scores, grad, Some(&mut dh[levels]));

    if let (Some(d), Some(g)) = (l.approximation, upstream.approx_full.as_ref()) {
        let src = if idd { 0 } else { levels };
        let g: Vec<f64> = g.iter().map(|v| v * cfg.approx_scale()).collect();
        d.backward(p, &acts.hidden[src], &g, grad, Some(&mut dh[src]));
    }
    for (i, (d, g)) in l.details.iter().zip(&upstream.details_full).enumerate() {
        let src = if idd { i + 1 } else { levels };
        let g: Vec<f64> = g.iter().map(|v| v * cfg.detail_scale()).collect();
        d.backward(p, &acts.hidden[src], &g, grad, Some(&mut dh[src]));
    }

    // residual refinements, last to first
    for i in (0..l.refine.len()).rev() {
        let (before, after) = dh.split_at_mut(i + 1);
        let dz = &after[0];
        let pre: Vec<f64> = dz
            .iter()
            .zip(&acts.branch[i])
            .map(|(g, t)| g * (1.0 - t * t))
            .collect();
        let dprev = &mut before[i];
        for (a, b) in dprev.iter_mut().zip(dz.iter()) {
            *a += b;
        }
        l.refine[i].backward(p, &acts.hidden[i], &pre, grad, Some(dprev));
    }

    let da2: Vec<f64> = dh[0]
        .iter()
        .zip(&acts.hidden[0])
        .map(|(g, z)| g * (1.0 - z * z))
        .collect();
    let mut dh1 = vec![0.0; l.trunk[0].output];
    l.trunk[1].backward(p, &acts.h1, &da2, grad, Some(&mut dh1));
    let da1: Vec<f64> = dh1
        .iter()
        .zip(&acts.h1)
        .map(|(g, h)| g * (1.0 - h * h))
        .collect();
    l.trunk[0].backward(p, &acts.input, &da1, grad, None);
}

/// Index of the highest-scoring mode, lowest index on ties.
pub fn select_mode_index(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

/// The highest-scoring trajectory. Heading channels are renormalised to a
/// unit vector, falling back to `(1, 0)` when the head outputs zero.
pub fn select_mode(out: &PolicyOutput, dt: f64) -> Trajectory {
    let m = select_mode_index(&out.scores);
    let points = out
        .mode(m)
        .chunks_exact(CHANNELS)
        .map(|c| {
            let norm = c[2].hypot(c[3]);
            let (ch, sh) = if norm > 1e-9 {
                (c[2] / norm, c[3] / norm)
            } else {
                (1.0, 0.0)
            };
            Waypoint::from_channels([c[0], c[1], ch, sh, c[4], c[5]])
        })
        .collect();
    Trajectory::new(points, dt)
}

/// Closed-loop wrapper around trained parameters.
#[derive(Debug, Clone)]
pub struct LearnedPlanner {
    pub params: PolicyParams,
}

impl Planner for LearnedPlanner {
    fn plan(&self, _scenario: &Scenario, obs: &Observation) -> Result<Trajectory> {
        let (out, _) = forward(&self.params, &featurize(obs))?;
        Ok(select_mode(&out, self.params.config.plan.dt))
    }
}
