//! Per-timestep weight schedules for the regression loss.
//!
//! Three schemes: hard time truncation, decreasing-certainty decay derived
//! from a Gaussian-process variance, and batch time normalisation. Time is
//! indexed in integer steps with the current step at `t0 = 0`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::fmt_real;

/// Guard for time normalisation when a batch column has zero mean loss.
pub const DEFAULT_EPS_GUARD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "lowercase")]
pub enum Scheme {
    Uniform,
    Truncation { t_cut: usize },
    Decay { l: f64, p: f64, t0: f64 },
    Timenorm { eps_guard: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSchedule {
    pub weights: Vec<f64>,
    pub scheme: Scheme,
}

impl WeightSchedule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn uniform(horizon: usize) -> Self {
        Self {
            weights: vec![1.0; horizon],
            scheme: Scheme::Uniform,
        }
    }

    /// Index of the last step with non-zero weight, if any.
    pub fn last_supervised_step(&self) -> Option<usize> {
        self.weights.iter().rposition(|w| *w != 0.0)
    }

    /// `t,w` CSV.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "w"])?;
        for (t, v) in self.weights.iter().enumerate() {
            wtr.write_record([t.to_string(), fmt_real(*v)])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Gaussian-process parameters behind the decay scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpParams {
    /// Maximum (function) uncertainty σ_f².
    pub sigma_f2: f64,
    /// Time length scale.
    pub l: f64,
    /// Observable current time.
    pub t0: f64,
    /// Order of the time-difference measurement; 2 gives the RBF form.
    pub p: f64,
}

impl GpParams {
    pub fn new(l: f64, p: f64) -> Self {
        Self {
            sigma_f2: 1.0,
            l,
            t0: 0.0,
            p,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.sigma_f2) || !ok(self.l) || !ok(self.p) || !self.t0.is_finite() {
            return Err(Error::Parameter(format!(
                "gp parameters need sigma_f2 > 0, l > 0, p > 0: {self:?}"
            )));
        }
        Ok(())
    }
}

/// `w_t = 1` for `t < t_cut`, else `0`.
pub fn truncation_weights(t_cut: usize, horizon: usize) -> Result<WeightSchedule> {
    if t_cut == 0 || t_cut > horizon {
        return Err(Error::Parameter(format!(
            "truncation step must lie in 1..={horizon}, got {t_cut}"
        )));
    }
    Ok(WeightSchedule {
        weights: (0..horizon)
            .map(|t| if t < t_cut { 1.0 } else { 0.0 })
            .collect(),
        scheme: Scheme::Truncation { t_cut },
    })
}

/// Predictive variance at `t` given an exactly observed point at `t0`
/// under an RBF kernel.
pub fn gp_variance(t: f64, gp: &GpParams) -> f64 {
    gp.sigma_f2 - gp_compensation(t, gp)
}

/// `σ_f² − σ_t²`, the gap to the maximum uncertainty.
pub fn gp_compensation(t: f64, gp: &GpParams) -> f64 {
    let dt = (t - gp.t0) / gp.l;
    gp.sigma_f2 * (-dt * dt).exp()
}

/// `w_t = exp(−(|t − t0| / l)^p) / Z` with `Z` the mean unnormalised weight.
pub fn decay_weights(horizon: usize, gp: &GpParams) -> Result<WeightSchedule> {
    gp.validate()?;
    if horizon == 0 {
        return Err(Error::Parameter("horizon must be positive".into()));
    }
    let raw: Vec<f64> = (0..horizon)
        .map(|t| (-((t as f64 - gp.t0).abs() / gp.l).powf(gp.p)).exp())
        .collect();
    let z = raw.iter().sum::<f64>() / horizon as f64;
    if !(z > 0.0) {
        return Err(Error::Parameter(
            "decay weights underflow to zero; increase l".into(),
        ));
    }
    Ok(WeightSchedule {
        weights: raw.into_iter().map(|w| w / z).collect(),
        scheme: Scheme::Decay {
            l: gp.l,
            p: gp.p,
            t0: gp.t0,
        },
    })
}

/// Column means of a row-major `B×T` loss matrix, summed in ascending row order.
pub fn batch_step_means(losses: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = losses.first() else {
        return Err(Error::Data("time normalisation needs a non-empty batch".into()));
    };
    let t_len = first.len();
    let mut sums = vec![0.0; t_len];
    for (b, row) in losses.iter().enumerate() {
        if row.len() != t_len {
            return Err(Error::Shape(format!(
                "batch row {b} has {} steps, expected {t_len}",
                row.len()
            )));
        }
        for (t, (s, v)) in sums.iter_mut().zip(row).enumerate() {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::Data(format!(
                    "loss at batch {b}, step {t} is {v}; expected finite and non-negative"
                )));
            }
            *s += v;
        }
    }
    let n = losses.len() as f64;
    Ok(sums.into_iter().map(|s| s / n).collect())
}

/// `w_t = 1 / max(μ_t, eps_guard)` with `μ_t` the batch mean loss at step `t`.
pub fn timenorm_weights(losses: &[Vec<f64>], eps_guard: f64) -> Result<WeightSchedule> {
    if !(eps_guard > 0.0) {
        return Err(Error::Parameter("eps_guard must be positive".into()));
    }
    let means = batch_step_means(losses)?;
    Ok(WeightSchedule {
        weights: means.into_iter().map(|m| 1.0 / m.max(eps_guard)).collect(),
        scheme: Scheme::Timenorm { eps_guard },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::E;

    #[test]
    fn truncation_examples() {
        assert_eq!(truncation_weights(2, 4).unwrap().weights, vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(truncation_weights(5, 5).unwrap().weights, vec![1.0; 5]);
        assert!(matches!(truncation_weights(0, 4), Err(Error::Parameter(_))));
        assert!(matches!(truncation_weights(5, 4), Err(Error::Parameter(_))));
    }

    #[test]
    fn gp_variance_examples() {
        let gp = GpParams {
            sigma_f2: 1.0,
            l: 2.0,
            t0: 0.0,
            p: 2.0,
        };
        assert_eq!(gp_variance(0.0, &gp), 0.0);
        assert!((gp_variance(2.0, &gp) - 0.632_120_558_828_557_7).abs() < 1e-12);
        assert!((gp_variance(1e6, &gp) - 1.0).abs() < 1e-15);
        assert!((gp_compensation(2.0, &gp) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn decay_single_point_is_one() {
        assert_eq!(decay_weights(1, &GpParams::new(E, 1.0)).unwrap().weights, vec![1.0]);
    }

    #[test]
    fn decay_l_e_p_1_values() {
        // exp(-t/e) for t = 0..3 divided by its mean
        let expected = [
            1.598_079_410_359_234,
            1.106_191_570_733_939_8,
            0.765_706_499_458_467_4,
            0.530_022_519_448_358_5,
        ];
        let w = decay_weights(4, &GpParams::new(E, 1.0)).unwrap().weights;
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn decay_p2_is_rbf_compensation() {
        let gp = GpParams::new(7.0, 2.0);
        let w = decay_weights(10, &gp).unwrap().weights;
        let raw: Vec<f64> = (0..10).map(|t| gp_compensation(t as f64, &gp)).collect();
        let z = raw.iter().sum::<f64>() / 10.0;
        for (a, r) in w.iter().zip(&raw) {
            assert!((a - r / z).abs() < 1e-12);
        }
    }

    #[test]
    fn timenorm_examples() {
        let w = timenorm_weights(&[vec![2.0], vec![4.0]], DEFAULT_EPS_GUARD).unwrap();
        assert!((w.weights[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!(((2.0 * w.weights[0] + 4.0 * w.weights[0]) / 2.0 - 1.0).abs() < 1e-15);

        let w = timenorm_weights(&[vec![0.0], vec![0.0]], DEFAULT_EPS_GUARD).unwrap();
        assert_eq!(w.weights[0], 1.0 / DEFAULT_EPS_GUARD);

        let w = timenorm_weights(&[vec![0.5, 3.0]], DEFAULT_EPS_GUARD).unwrap();
        assert_eq!(w.weights, vec![2.0, 1.0 / 3.0]);
    }

    #[test]
    fn timenorm_rejects_non_finite() {
        let err = timenorm_weights(&[vec![f64::NAN]], DEFAULT_EPS_GUARD).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn schedule_csv_layout() {
        let mut buf = Vec::new();
        truncation_weights(1, 2).unwrap().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,w");
        assert_eq!(lines.len(), 3);
    }

    proptest! {
        #[test]
        fn decay_sums_to_horizon_and_is_monotone(horizon in 1usize..120, l in 0.5f64..20.0, p in 0.5f64..3.0) {
            let w = decay_weights(horizon, &GpParams::new(l, p)).unwrap().weights;
            let sum: f64 = w.iter().sum();
            prop_assert!((sum - horizon as f64).abs() <= 1e-12 * horizon as f64);
            prop_assert!(w.windows(2).all(|p| p[1] <= p[0]));
            prop_assert!(w.iter().all(|v| *v >= 0.0));
        }

        #[test]
        fn timenorm_normalises_active_columns(rows in proptest::collection::vec(proptest::collection::vec(0.0f64..50.0, 6), 1..10)) {
            let w = timenorm_weights(&rows, DEFAULT_EPS_GUARD).unwrap();
            let means = batch_step_means(&rows).unwrap();
            for t in 0..6 {
                if means[t] > DEFAULT_EPS_GUARD {
                    let m: f64 = rows.iter().map(|r| w.weights[t] * r[t]).sum::<f64>() / rows.len() as f64;
                    prop_assert!((m - 1.0).abs() <= 1e-9);
                }
            }
        }

        #[test]
        fn gp_variance_monotone_in_distance(a in 0.0f64..50.0, b in 0.0f64..50.0, l in 0.1f64..10.0) {
            let gp = GpParams { sigma_f2: 2.0, l, t0: 3.0, p: 2.0 };
            let (near, far) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(gp_variance(3.0 + near, &gp) <= gp_variance(3.0 - far, &gp));
            let v = gp_variance(3.0 + far, &gp);
            prop_assert!((0.0..=2.0).contains(&v));
        }
    }
}
