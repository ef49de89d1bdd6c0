//! Judging waypoint answers from a model asked to plan the path itself.

use gridsynth_agents::extract_code_block;
use gridsynth_core::geometry::RectEncoding;
use gridsynth_core::simulator::{check_reach_avoid, Trajectory};
use gridsynth_core::spec::{ProblemSpec, DEFAULT_DIFF_TOL};
use serde::{Deserialize, Serialize};

/// Largest gap between consecutive states when checking a polyline.
pub const PATH_RESOLUTION: f64 = 0.005;

/// Waypoints in the first fenced block, each `[x, y]` or a full state.
pub fn parse_waypoints(raw: &str) -> Result<Vec<Vec<f64>>, String> {
    let block = extract_code_block(raw).ok_or("the reply contains no fenced code block")?;
    let points: Vec<Vec<f64>> = serde_json::from_str(block).map_err(|e| format!("waypoints: {e}"))?;
    if points.is_empty() {
        return Err("waypoints: empty list".to_string());
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectVerdict {
    pub satisfied: bool,
    pub reason: Option<String>,
}

impl DirectVerdict {
    fn fail(reason: impl Into<String>) -> Self {
        DirectVerdict {
            satisfied: false,
            reason: Some(reason.into()),
        }
    }
}

/// A polyline answer is correct when it starts in the initial set, stays
/// in the workspace, never touches a clearance-grown obstacle and enters
/// the targets in order.
pub fn judge_waypoints(points: &[Vec<f64>], truth: &ProblemSpec) -> DirectVerdict {
    let n = truth.state_dim();
    let mut states = Vec::with_capacity(points.len());
    for (k, p) in points.iter().enumerate() {
        if p.len() != 2 && p.len() != n {
            return DirectVerdict::fail(format!("waypoint {k} has {} coordinates", p.len()));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return DirectVerdict::fail(format!("waypoint {k} is not finite"));
        }
        let mut x = p.clone();
        // a planar answer says nothing about the heading; take one inside the range
        for d in x.len()..n {
            let (lo, hi) = (truth.state_bounds.lower[d], truth.state_bounds.upper[d]);
            x.push(if lo <= 0.0 && 0.0 <= hi { 0.0 } else { lo });
        }
        if !truth.state_bounds.contains_point(&x) {
            return DirectVerdict::fail(format!("waypoint {k} lies outside the workspace"));
        }
        states.push(x);
    }
    let Ok(initial) = truth.initial_rect() else {
        return DirectVerdict::fail("ground truth has no initial set");
    };
    let first = &states[0];
    let starts_inside = (0..points[0].len()).all(|d| {
        initial.lower[d] - DEFAULT_DIFF_TOL <= first[d] && first[d] <= initial.upper[d] + DEFAULT_DIFF_TOL
    });
    if !starts_inside {
        return DirectVerdict::fail("the first waypoint is not in the initial set");
    }
    let Ok(grown) = truth.inflated_obstacles() else {
        return DirectVerdict::fail("ground truth obstacles do not resolve");
    };
    let judged = ProblemSpec {
        obstacles: grown.iter().map(RectEncoding::from_rect).collect(),
        clearance: 0.0,
        ..truth.clone()
    };
    let longest = states
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).take(2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let resolution = ((longest / PATH_RESOLUTION).ceil() as usize).max(1);
    let mut traj = Trajectory::from_waypoints(&states, resolution);
    // targets count when any state along the polyline enters them
    traj.samples = traj
        .dense
        .iter()
        .map(|(t, x)| gridsynth_core::simulator::Sample {
            time: *t,
            state: x.clone(),
            input: None,
        })
        .collect();
    match check_reach_avoid(&traj, &judged) {
        Ok(v) if v.satisfied => DirectVerdict {
            satisfied: true,
            reason: None,
        },
        Ok(v) => match v.first_violation {
            Some((t, i)) => DirectVerdict::fail(format!("touches obstacle {i} at path parameter {t:.3}")),
            None => DirectVerdict::fail("does not enter the targets in order"),
        },
        Err(e) => DirectVerdict::fail(e.to_string()),
    }
}
