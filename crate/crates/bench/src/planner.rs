//! A plain grid path planner for the planar part of a problem. Used to
//! script correct waypoint answers, not by the synthesis pipeline.

use std::collections::VecDeque;

use gridsynth_core::geometry::HyperRect;
use gridsynth_core::spec::{ProblemSpec, SpecError};

/// Occupancy grid spacing.
const STEP: f64 = 0.05;
/// Distance kept from grown obstacles by grid cells.
const MARGIN: f64 = 0.1;
/// Distance kept by straight shortcuts, below `MARGIN` so the grid path
/// itself always qualifies.
const SHORTCUT_MARGIN: f64 = 0.05;

struct Occupancy {
    origin: [f64; 2],
    nx: usize,
    ny: usize,
    free: Vec<bool>,
}

fn grow(r: &HyperRect, m: f64) -> [f64; 4] {
    [r.lower[0] - m, r.lower[1] - m, r.upper[0] + m, r.upper[1] + m]
}

fn inside(b: &[f64; 4], p: [f64; 2]) -> bool {
    b[0] <= p[0] && p[0] <= b[2] && b[1] <= p[1] && p[1] <= b[3]
}

impl Occupancy {
    fn new(spec: &ProblemSpec, obstacles: &[HyperRect]) -> Self {
        let lo = [spec.state_bounds.lower[0], spec.state_bounds.lower[1]];
        let hi = [spec.state_bounds.upper[0], spec.state_bounds.upper[1]];
        let nx = ((hi[0] - lo[0]) / STEP).round() as usize;
        let ny = ((hi[1] - lo[1]) / STEP).round() as usize;
        let grown: Vec<[f64; 4]> = obstacles.iter().map(|o| grow(o, MARGIN)).collect();
        let mut free = vec![false; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let p = [lo[0] + (i as f64 + 0.5) * STEP, lo[1] + (j as f64 + 0.5) * STEP];
                let in_bounds = p[0] >= lo[0] + MARGIN && p[0] <= hi[0] - MARGIN && p[1] >= lo[1] + MARGIN && p[1] <= hi[1] - MARGIN;
                free[j * nx + i] = in_bounds && !grown.iter().any(|g| inside(g, p));
            }
        }
        Occupancy { origin: lo, nx, ny, free }
    }

    fn center(&self, id: usize) -> [f64; 2] {
        [
            self.origin[0] + ((id % self.nx) as f64 + 0.5) * STEP,
            self.origin[1] + ((id / self.nx) as f64 + 0.5) * STEP,
        ]
    }

    fn nearest_free(&self, p: [f64; 2]) -> Option<usize> {
        (0..self.free.len()).filter(|&c| self.free[c]).min_by(|&a, &b| {
            let d = |c: usize| {
                let q = self.center(c);
                (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)
            };
            d(a).total_cmp(&d(b)).then(a.cmp(&b))
        })
    }

    /// Breadth-first search over 8-neighbours to the first goal cell.
    fn search(&self, start: usize, goal: &dyn Fn(usize) -> bool) -> Option<Vec<usize>> {
        let mut parent = vec![usize::MAX; self.free.len()];
        parent[start] = start;
        let mut queue = VecDeque::from([start]);
        while let Some(c) = queue.pop_front() {
            if goal(c) {
                let mut path = vec![c];
                let mut at = c;
                while parent[at] != at {
                    at = parent[at];
                    path.push(at);
                }
                path.reverse();
                return Some(path);
            }
            let (i, j) = ((c % self.nx) as i64, (c / self.nx) as i64);
            for (di, dj) in [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)] {
                let (a, b) = (i + di, j + dj);
                if a < 0 || b < 0 || a >= self.nx as i64 || b >= self.ny as i64 {
                    continue;
                }
                let n = b as usize * self.nx + a as usize;
                // diagonal moves may not cut a blocked corner
                let corner_ok = self.free[j as usize * self.nx + a as usize] && self.free[b as usize * self.nx + i as usize];
                if self.free[n] && parent[n] == usize::MAX && corner_ok {
                    parent[n] = c;
                    queue.push_back(n);
                }
            }
        }
        None
    }
}

fn visible(a: [f64; 2], b: [f64; 2], grown: &[[f64; 4]]) -> bool {
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    let n = (len / 0.005).ceil().max(1.0) as usize;
    (0..=n).all(|k| {
        let s = k as f64 / n as f64;
        let p = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
        !grown.iter().any(|g| inside(g, p))
    })
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

/// Planar waypoints from the center of the initial set through every
/// target in order, keeping clear of the clearance-grown obstacles.
/// `None` when the grid search finds no way through.
pub fn reference_waypoints(spec: &ProblemSpec) -> Result<Option<Vec<[f64; 2]>>, SpecError> {
    let obstacles = spec.inflated_obstacles()?;
    let targets = spec.target_rects()?;
    let init = spec.initial_rect()?.center();
    let start = [init[0], init[1]];
    let occ = Occupancy::new(spec, &obstacles);
    let grown: Vec<[f64; 4]> = obstacles.iter().map(|o| grow(o, SHORTCUT_MARGIN)).collect();
    let Some(mut cell) = occ.nearest_free(start) else {
        return Ok(None);
    };
    let mut cells = vec![cell];
    for t in &targets {
        let shrunk = [t.lower[0] + STEP, t.lower[1] + STEP, t.upper[0] - STEP, t.upper[1] - STEP];
        let Some(path) = occ.search(cell, &|c| inside(&shrunk, occ.center(c))) else {
            return Ok(None);
        };
        cell = *path.last().expect("non-empty path");
        cells.extend_from_slice(&path[1..]);
    }
    // every target-reaching cell must stay on the path; shortcut between them
    let mut anchors = vec![0];
    let mut at = 0;
    let mut stage = 0;
    let reached: Vec<usize> = cells
        .iter()
        .enumerate()
        .filter_map(|(k, &c)| {
            let t = targets.get(stage)?;
            let p = occ.center(c);
            let s = [t.lower[0] + STEP, t.lower[1] + STEP, t.upper[0] - STEP, t.upper[1] - STEP];
            inside(&s, p).then(|| {
                stage += 1;
                k
            })
        })
        .collect();
    for &goal in &reached {
        while at < goal {
            let next = (at + 1..=goal).rev().find(|&k| visible(occ.center(cells[at]), occ.center(cells[k]), &grown)).expect("neighbours are visible");
            anchors.push(next);
            at = next;
        }
    }
    let mut points = vec![start];
    for &k in &anchors {
        let p = occ.center(cells[k]);
        let p = [round3(p[0]), round3(p[1])];
        if points.last() != Some(&p) {
            points.push(p);
        }
    }
    Ok(Some(points))
}
