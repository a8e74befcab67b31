//! Waypoint sequences and their six-channel matrix layout.
//!
//! A trajectory point carries `[px, py, cos_h, sin_h, vx, vy]`. Headings are
//! stored as a unit vector, never as an angle.

use std::fmt;
use std::io::{Read, Write};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of channels per waypoint.
pub const CHANNELS: usize = 6;

/// Channel names in matrix column order.
pub const CHANNEL_NAMES: [&str; CHANNELS] = ["px", "py", "cos_h", "sin_h", "vx", "vy"];

/// Tolerance on `cos_h² + sin_h² − 1`.
pub const HEADING_TOLERANCE: f64 = 1e-6;

/// Default simulation step (10 Hz).
pub const DEFAULT_DT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub px: f64,
    pub py: f64,
    pub cos_h: f64,
    pub sin_h: f64,
    pub vx: f64,
    pub vy: f64,
}

impl Waypoint {
    pub fn new(px: f64, py: f64, heading: f64, vx: f64, vy: f64) -> Self {
        Self {
            px,
            py,
            cos_h: heading.cos(),
            sin_h: heading.sin(),
            vx,
            vy,
        }
    }

    pub fn channels(&self) -> [f64; CHANNELS] {
        [self.px, self.py, self.cos_h, self.sin_h, self.vx, self.vy]
    }

    pub fn from_channels(c: [f64; CHANNELS]) -> Self {
        Self {
            px: c[0],
            py: c[1],
            cos_h: c[2],
            sin_h: c[3],
            vx: c[4],
            vy: c[5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<Waypoint>,
    pub dt: f64,
}

/// One violated trajectory invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyTrajectory,
    NonPositiveDt(f64),
    HeadingNotUnitNorm { index: usize, norm_sq: f64 },
    NonFinite { index: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyTrajectory => write!(f, "empty trajectory"),
            Violation::NonPositiveDt(dt) => write!(f, "dt must be positive, got {dt}"),
            Violation::HeadingNotUnitNorm { index, norm_sq } => write!(
                f,
                "heading not unit-norm at step {index} (cos²+sin² = {norm_sq})"
            ),
            Violation::NonFinite { index } => write!(f, "non-finite channel at step {index}"),
        }
    }
}

impl Trajectory {
    pub fn new(points: Vec<Waypoint>, dt: f64) -> Self {
        Self { points, dt }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Lists every violated invariant; an empty list means the trajectory is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.points.is_empty() {
            out.push(Violation::EmptyTrajectory);
        }
        if !(self.dt > 0.0) {
            out.push(Violation::NonPositiveDt(self.dt));
        }
        for (index, p) in self.points.iter().enumerate() {
            if p.channels().iter().any(|v| !v.is_finite()) {
                out.push(Violation::NonFinite { index });
                continue;
            }
            let norm_sq = p.cos_h * p.cos_h + p.sin_h * p.sin_h;
            if (norm_sq - 1.0).abs() > HEADING_TOLERANCE {
                out.push(Violation::HeadingNotUnitNorm { index, norm_sq });
            }
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }

    /// T×6 matrix, one row per waypoint in channel order.
    pub fn channel_matrix(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.points.len(), CHANNELS));
        for (mut row, p) in m.rows_mut().into_iter().zip(&self.points) {
            for (dst, v) in row.iter_mut().zip(p.channels()) {
                *dst = v;
            }
        }
        m
    }

    /// Inverse of [`Trajectory::channel_matrix`]. The result is validated.
    pub fn from_channel_matrix(m: ArrayView2<'_, f64>, dt: f64) -> Result<Self> {
        if m.ncols() != CHANNELS {
            return Err(Error::Shape(format!(
                "expected {CHANNELS} channels, got {}",
                m.ncols()
            )));
        }
        let points = m
            .rows()
            .into_iter()
            .map(|r| Waypoint::from_channels([r[0], r[1], r[2], r[3], r[4], r[5]]))
            .collect();
        let traj = Trajectory::new(points, dt);
        let violations = traj.validate();
        if let Some(v) = violations.first() {
            return Err(Error::Data(v.to_string()));
        }
        Ok(traj)
    }

    /// Position channels only, T×2.
    pub fn positions(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.points.len(), 2));
        for (t, p) in self.points.iter().enumerate() {
            m[[t, 0]] = p.px;
            m[[t, 1]] = p.py;
        }
        m
    }

    /// Writes the `t,px,py,cos_h,sin_h,vx,vy` CSV layout. `t` is in seconds.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["t"];
        header.extend(CHANNEL_NAMES);
        wtr.write_record(&header)?;
        for (i, p) in self.points.iter().enumerate() {
            let mut rec = vec![fmt_real(i as f64 * self.dt)];
            rec.extend(p.channels().iter().map(|v| fmt_real(*v)));
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Reads the CSV layout written by [`Trajectory::write_csv`]. `dt` is taken
    /// from the spacing of the `t` column, or [`DEFAULT_DT`] for one row.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let expected: Vec<&str> = std::iter::once("t").chain(CHANNEL_NAMES).collect();
        if header.iter().map(str::trim).collect::<Vec<_>>() != expected {
            return Err(Error::Data(format!(
                "trajectory header must be `{}`",
                expected.join(",")
            )));
        }
        let mut times = Vec::new();
        let mut points = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Error::Data(format!("row {}: {e}", line + 1)))?;
            if vals.len() != CHANNELS + 1 {
                return Err(Error::Data(format!("row {}: expected 7 fields", line + 1)));
            }
            times.push(vals[0]);
            points.push(Waypoint::from_channels([
                vals[1], vals[2], vals[3], vals[4], vals[5], vals[6],
            ]));
        }
        let dt = if times.len() >= 2 {
            times[1] - times[0]
        } else {
            DEFAULT_DT
        };
        let traj = Trajectory::new(points, dt);
        if let Some(v) = traj.validate().first() {
            return Err(Error::Data(v.to_string()));
        }
        Ok(traj)
    }
}

/// Decimal rendering with 17 significant digits; parses back bit-exactly.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight(n: usize, speed: f64) -> Trajectory {
        let points = (0..n)
            .map(|i| Waypoint::new(speed * DEFAULT_DT * i as f64, 0.0, 0.0, speed, 0.0))
            .collect();
        Trajectory::new(points, DEFAULT_DT)
    }

    #[test]
    fn unit_heading_trajectory_is_valid() {
        assert!(straight(80, 10.0).validate().is_empty());
    }

    #[test]
    fn non_unit_heading_is_reported() {
        let mut t = straight(3, 1.0);
        t.points[1].sin_h = 1.0;
        let v = t.validate();
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().contains("heading not unit-norm"));
    }

    #[test]
    fn empty_trajectory_is_reported() {
        let t = Trajectory::new(vec![], DEFAULT_DT);
        assert_eq!(t.validate(), vec![Violation::EmptyTrajectory]);
        assert_eq!(t.validate()[0].to_string(), "empty trajectory");
    }

    #[test]
    fn single_waypoint_matrix_layout() {
        let t = Trajectory::new(
            vec![Waypoint::from_channels([1.0, 2.0, 1.0, 0.0, 3.0, 0.0])],
            DEFAULT_DT,
        );
        let m = t.channel_matrix();
        assert_eq!(m.shape(), &[1, 6]);
        assert_eq!(m.row(0).to_vec(), vec![1.0, 2.0, 1.0, 0.0, 3.0, 0.0]);
    }

    #[test]
    fn straight_path_first_column_is_arithmetic() {
        let m = straight(10, 5.0).channel_matrix();
        for t in 1..10 {
            let step = m[[t, 0]] - m[[t - 1, 0]];
            assert!((step - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn matrix_round_trip() {
        let t = straight(12, 3.0);
        let back = Trajectory::from_channel_matrix(t.channel_matrix().view(), t.dt).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let mut t = straight(5, 7.3);
        t.points[2].py = 1.0 / 3.0;
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,px,py,cos_h,sin_h,vx,vy\n"));
        let back = Trajectory::read_csv(&buf[..]).unwrap();
        assert_eq!(back.points, t.points);
        assert!((back.dt - t.dt).abs() < 1e-15);
    }

    #[test]
    fn csv_rejects_wrong_header() {
        let err = Trajectory::read_csv("a,b\n1,2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }
}
