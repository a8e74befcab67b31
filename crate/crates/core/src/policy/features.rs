//! Fixed-length, ego-centred feature vector for the policy trunk.

use crate::observation::{Observation, SignalState};
use crate::sim::world::LANE_LOOKAHEAD;

const POS_SCALE: f64 = 10.0;
const VEL_SCALE: f64 = 10.0;
const OBSTACLE_DX_SCALE: f64 = 20.0;
const OBSTACLE_DY_SCALE: f64 = 4.0;
const STOP_SCALE: f64 = 50.0;
/// Obstacles further behind the ego than this are ignored, metres.
const OBSTACLE_BEHIND: f64 = 5.0;

const OBSTACLE_BLOCK: usize = 4;
const SIGNAL_BLOCK: usize = 3;

/// Length of [`featurize`]'s output for a given history length.
pub fn feature_len(history_steps: usize) -> usize {
    4 * history_steps + LANE_LOOKAHEAD.len() + OBSTACLE_BLOCK + SIGNAL_BLOCK
}

/// Layout: ego history `(dx, dy, vx, vy)` per step relative to the current
/// position, lane centreline lateral offsets, nearest obstacle
/// `(flag, dx, dy, radius)` and signal `(red, stop_ahead, stop_dx)`.
/// Absent blocks are all zeros.
pub fn featurize(obs: &Observation) -> Vec<f64> {
    let cur = *obs.current();
    let mut f = Vec::with_capacity(feature_len(obs.ego_history.len()));
    for s in &obs.ego_history {
        f.push((s.x - cur.x) / POS_SCALE);
        f.push((s.y - cur.y) / POS_SCALE);
        f.push(s.vx / VEL_SCALE);
        f.push(s.vy / VEL_SCALE);
    }
    let width = obs.lane_half_width.max(1e-6);
    for i in 0..LANE_LOOKAHEAD.len() {
        let lane_y = obs.lane.get(i).map_or(0.0, |p| p[1]);
        f.push((lane_y - cur.y) / width);
    }

    let nearest = obs
        .visible_obstacles
        .iter()
        .filter(|o| o.center[0] - cur.x >= -OBSTACLE_BEHIND)
        .min_by(|a, b| {
            let da = (a.center[0] - cur.x).hypot(a.center[1] - cur.y);
            let db = (b.center[0] - cur.x).hypot(b.center[1] - cur.y);
            da.total_cmp(&db)
        });
    match nearest {
        Some(o) => f.extend([
            1.0,
            (o.center[0] - cur.x) / OBSTACLE_DX_SCALE,
            (o.center[1] - cur.y) / OBSTACLE_DY_SCALE,
            o.radius,
        ]),
        None => f.extend([0.0; OBSTACLE_BLOCK]),
    }

    match obs.signal {
        Some(s) if s.stop_x - cur.x > -1.0 => f.extend([
            f64::from(u8::from(s.state == SignalState::Red)),
            1.0,
            ((s.stop_x - cur.x) / STOP_SCALE).clamp(0.0, 2.0),
        ]),
        _ => f.extend([0.0; SIGNAL_BLOCK]),
    }
    f
}
