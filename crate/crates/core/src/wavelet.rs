//! Haar pyramids and strided horizon stacks over trajectory profiles.
//!
//! Coefficients use the unnormalised sum/difference convention:
//! `a[t] = x[2t] + x[2t+1]`, `d[t] = x[2t] − x[2t+1]`. Switching to the
//! orthonormal convention only requires changing [`ANALYSIS_GAIN`].

use ndarray::{s, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Gain applied to both analysis filters. `1.0` gives sum/difference,
/// `FRAC_1_SQRT_2` would give the orthonormal Haar transform.
pub const ANALYSIS_GAIN: f64 = 1.0;

/// Name recorded in pyramid metadata.
pub const CONVENTION: &str = "haar-sumdiff";

/// Single-level forward transform.
pub fn haar_forward(signal: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if signal.is_empty() || signal.len() % 2 != 0 {
        return Err(Error::Length(format!(
            "haar transform needs a non-empty even-length signal, got length {}",
            signal.len()
        )));
    }
    let (approx, detail) = signal
        .chunks_exact(2)
        .map(|p| (ANALYSIS_GAIN * (p[0] + p[1]), ANALYSIS_GAIN * (p[0] - p[1])))
        .unzip();
    Ok((approx, detail))
}

/// Single-level inverse transform.
pub fn haar_inverse(approx: &[f64], detail: &[f64]) -> Result<Vec<f64>> {
    if approx.len() != detail.len() {
        return Err(Error::Shape(format!(
            "approximation length {} differs from detail length {}",
            approx.len(),
            detail.len()
        )));
    }
    let norm = 2.0 * ANALYSIS_GAIN;
    let mut out = Vec::with_capacity(2 * approx.len());
    for (a, d) in approx.iter().zip(detail) {
        out.push((a + d) / norm);
        out.push((a - d) / norm);
    }
    Ok(out)
}

/// Multi-level decomposition of a T×K matrix, one pyramid per column.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletPyramid {
    /// Approximation at the deepest level, `T/2^N × K`.
    pub approximation: Array2<f64>,
    /// `details[l-1]` is the level-`l` detail, `T/2^l × K`.
    pub details: Vec<Array2<f64>>,
}

impl WaveletPyramid {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    pub fn channels(&self) -> usize {
        self.approximation.ncols()
    }

    pub fn source_length(&self) -> usize {
        self.approximation.nrows() << self.levels()
    }

    fn check_shape(&self) -> Result<()> {
        let n = self.levels();
        if n == 0 {
            return Err(Error::Shape("pyramid has no detail levels".into()));
        }
        let k = self.channels();
        let base = self.details[0].nrows() * 2;
        for (i, d) in self.details.iter().enumerate() {
            let want = base >> (i + 1);
            if d.nrows() != want || d.ncols() != k || want == 0 {
                return Err(Error::Shape(format!(
                    "detail level {} has shape {:?}, expected [{want}, {k}]",
                    i + 1,
                    d.shape()
                )));
            }
        }
        let want = base >> n;
        if self.approximation.nrows() != want {
            return Err(Error::Shape(format!(
                "approximation has {} rows, expected {want}",
                self.approximation.nrows()
            )));
        }
        Ok(())
    }
}

fn required_divisor(levels: usize) -> Result<usize> {
    1usize
        .checked_shl(levels as u32)
        .filter(|d| *d > 0)
        .ok_or_else(|| Error::Parameter(format!("too many levels: {levels}")))
}

/// Recursive Haar decomposition into `levels` detail bands plus an approximation.
pub fn decompose(x: ArrayView2<'_, f64>, levels: usize) -> Result<WaveletPyramid> {
    if levels == 0 {
        return Err(Error::Parameter("levels must be at least 1".into()));
    }
    let t = x.nrows();
    let divisor = required_divisor(levels)?;
    if t == 0 || t % divisor != 0 {
        return Err(Error::Length(format!(
            "signal length {t} must be a positive multiple of 2^{levels} = {divisor}"
        )));
    }
    let k = x.ncols();
    let mut details: Vec<Array2<f64>> = (1..=levels)
        .map(|l| Array2::zeros((t >> l, k)))
        .collect();
    let mut approximation = Array2::zeros((t >> levels, k));
    for (c, column) in x.axis_iter(Axis(1)).enumerate() {
        let mut current: Vec<f64> = column.to_vec();
        for detail in details.iter_mut() {
            let (a, d) = haar_forward(&current)?;
            detail.column_mut(c).assign(&ndarray::ArrayView1::from(&d[..]));
            current = a;
        }
        approximation
            .column_mut(c)
            .assign(&ndarray::ArrayView1::from(&current[..]));
    }
    Ok(WaveletPyramid {
        approximation,
        details,
    })
}

/// Inverse of [`decompose`].
pub fn reconstruct(pyramid: &WaveletPyramid) -> Result<Array2<f64>> {
    pyramid.check_shape()?;
    let k = pyramid.channels();
    let t = pyramid.source_length();
    let mut out = Array2::zeros((t, k));
    for c in 0..k {
        let mut current = pyramid.approximation.column(c).to_vec();
        for detail in pyramid.details.iter().rev() {
            current = haar_inverse(&current, &detail.column(c).to_vec())?;
        }
        out.column_mut(c)
            .assign(&ndarray::ArrayView1::from(&current[..]));
    }
    Ok(out)
}

/// Strided, truncated copies of a signal: level `l` (1-based) keeps every
/// `2^(l-1)`-th sample starting at index 0, truncated to `horizon` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ScopedStack {
    pub levels: Vec<Array2<f64>>,
    pub horizon: usize,
}

impl ScopedStack {
    /// Base timesteps covered by level `l` (1-based).
    pub fn covered_steps(&self, level: usize) -> usize {
        self.levels[level - 1].nrows() << (level - 1)
    }
}

/// Stride-`2^(l-1)` subsampling of a T×K matrix, no filtering.
pub fn downsample(x: ArrayView2<'_, f64>, stride: usize) -> Array2<f64> {
    x.slice(s![..;stride, ..]).to_owned()
}

pub fn dwh_decompose(x: ArrayView2<'_, f64>, levels: usize, horizon: usize) -> Result<ScopedStack> {
    if levels == 0 || horizon == 0 {
        return Err(Error::Parameter(
            "downsampling stack needs levels >= 1 and horizon >= 1".into(),
        ));
    }
    let stacked = (1..=levels)
        .map(|l| {
            let stride = required_divisor(l - 1)?;
            let down = downsample(x, stride);
            let keep = horizon.min(down.nrows());
            Ok(down.slice(s![..keep, ..]).to_owned())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScopedStack {
        levels: stacked,
        horizon,
    })
}

/// Largest absolute elementwise difference; infinite when shapes differ.
pub fn max_abs_error(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
