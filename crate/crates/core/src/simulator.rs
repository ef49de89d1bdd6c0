//! Closed-loop simulation, reach-avoid certification of trajectories and
//! SVG rendering of environments.

use std::fmt::Write as _;

use thiserror::Error;

use crate::dynamics::{integrate_path, VectorField};
use crate::geometry::{HyperRect, UniformGrid};
use crate::spec::{ProblemSpec, SpecError};
use crate::synthesis::{Command, ConcreteController, SymbolicController};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Termination {
    ReachedTarget(f64),
    LeftWinningSet,
    StepLimit,
    ObstacleHit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub time: f64,
    pub state: Vec<f64>,
    /// Input applied from this sample on; `None` at the last sample.
    pub input: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    /// Every integrator substep state, including the initial state.
    pub dense: Vec<(f64, Vec<f64>)>,
    pub termination: Termination,
}

impl Trajectory {
    /// Piecewise-linear trajectory through the given waypoints, resampled
    /// at `resolution` for obstacle checking.
    pub fn from_waypoints(points: &[Vec<f64>], resolution: usize) -> Self {
        let mut samples = Vec::with_capacity(points.len());
        let mut dense = Vec::new();
        for (k, p) in points.iter().enumerate() {
            samples.push(Sample {
                time: k as f64,
                state: p.clone(),
                input: None,
            });
            if k == 0 {
                dense.push((0.0, p.clone()));
                continue;
            }
            let prev = &points[k - 1];
            for j in 1..=resolution.max(1) {
                let s = j as f64 / resolution.max(1) as f64;
                let x: Vec<f64> = prev.iter().zip(p).map(|(a, b)| a + s * (b - a)).collect();
                dense.push(((k - 1) as f64 + s, x));
            }
        }
        Trajectory {
            samples,
            dense,
            termination: Termination::StepLimit,
        }
    }

    /// CSV dump: `t,x1..xn,u1..um`; the final row has empty input cells.
    pub fn to_csv(&self, input_dim: usize) -> String {
        let n = self.samples.first().map_or(0, |s| s.state.len());
        let mut out = String::from("t");
        for i in 1..=n {
            let _ = write!(out, ",x{i}");
        }
        for i in 1..=input_dim {
            let _ = write!(out, ",u{i}");
        }
        out.push('\n');
        for s in &self.samples {
            let _ = write!(out, "{}", s.time);
            for v in &s.state {
                let _ = write!(out, ",{v}");
            }
            match &s.input {
                Some(u) => {
                    for v in u {
                        let _ = write!(out, ",{v}");
                    }
                }
                None => out.push_str(&",".repeat(input_dim)),
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub tau: f64,
    pub substeps: usize,
    pub max_steps: usize,
    /// Original obstacles; entering one ends the run with `ObstacleHit`.
    pub obstacles: Vec<HyperRect>,
}

/// Runs the concretized controller from `x0` until the last stage's goal is
/// entered, the state leaves the winning set, an obstacle is hit or
/// `max_steps` steps have been taken.
pub fn simulate_closed_loop(f: &dyn VectorField, ctrl: &mut ConcreteController<'_>, x0: &[f64], opts: &SimOptions) -> Trajectory {
    let mut x = x0.to_vec();
    ctrl.grid().wrap(&mut x);
    let h = opts.tau / opts.substeps as f64;
    let mut samples = Vec::new();
    let mut dense = vec![(0.0, x.clone())];
    let hit = |x: &[f64]| opts.obstacles.iter().any(|o| o.contains_point(x));
    if hit(&x) {
        samples.push(Sample {
            time: 0.0,
            state: x,
            input: None,
        });
        return Trajectory {
            samples,
            dense,
            termination: Termination::ObstacleHit,
        };
    }
    for step in 0..=opts.max_steps {
        let t = step as f64 * opts.tau;
        let cmd = ctrl.concretize(&x);
        let u = match cmd {
            Ok(Command::Done) => {
                samples.push(Sample {
                    time: t,
                    state: x,
                    input: None,
                });
                return Trajectory {
                    samples,
                    dense,
                    termination: Termination::ReachedTarget(t),
                };
            }
            Err(_) => {
                samples.push(Sample {
                    time: t,
                    state: x,
                    input: None,
                });
                return Trajectory {
                    samples,
                    dense,
                    termination: Termination::LeftWinningSet,
                };
            }
            Ok(Command::Apply(u)) => u,
        };
        if step == opts.max_steps {
            samples.push(Sample {
                time: t,
                state: x,
                input: None,
            });
            break;
        }
        samples.push(Sample {
            time: t,
            state: x.clone(),
            input: Some(u.clone()),
        });
        let Ok(path) = integrate_path(f, &x, &u, opts.tau, opts.substeps) else {
            return Trajectory {
                samples,
                dense,
                termination: Termination::LeftWinningSet,
            };
        };
        for (j, p) in path.iter().enumerate() {
            dense.push((t + h * (j + 1) as f64, p.clone()));
            if hit(p) {
                return Trajectory {
                    samples,
                    dense,
                    termination: Termination::ObstacleHit,
                };
            }
        }
        x = path.last().expect("at least one substep").clone();
    }
    Trajectory {
        samples,
        dense,
        termination: Termination::StepLimit,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReachAvoidVerdict {
    pub satisfied: bool,
    pub t_f: Option<f64>,
    /// Time and obstacle index of the first contact.
    pub first_violation: Option<(f64, usize)>,
}

/// Checks a trajectory against the problem: the targets must be entered in
/// order at sample times, and no recorded state before the final entry may
/// lie in an original (non-inflated) obstacle.
pub fn check_reach_avoid(traj: &Trajectory, spec: &ProblemSpec) -> Result<ReachAvoidVerdict, SpecError> {
    let targets = spec.target_rects()?;
    let obstacles = spec.obstacle_rects()?;
    let mut stage = 0;
    let mut t_f = None;
    for s in &traj.samples {
        while stage < targets.len() && targets[stage].contains_point(&s.state) {
            stage += 1;
        }
        if stage == targets.len() {
            t_f = Some(s.time);
            break;
        }
    }
    let states: Vec<(f64, &Vec<f64>)> = if traj.dense.is_empty() {
        traj.samples.iter().map(|s| (s.time, &s.state)).collect()
    } else {
        traj.dense.iter().map(|(t, x)| (*t, x)).collect()
    };
    let first_violation = states.iter().find_map(|(t, x)| {
        if t_f.is_some_and(|tf| *t >= tf) {
            return None;
        }
        obstacles.iter().position(|o| o.contains_point(x)).map(|i| (*t, i))
    });
    Ok(ReachAvoidVerdict {
        satisfied: t_f.is_some() && first_violation.is_none(),
        t_f,
        first_violation,
    })
}

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("rendering needs at least two state dimensions, got {0}")]
    UnsupportedDimension(usize),
    #[error(transparent)]
    Spec(#[from] SpecError),
}

const SCALE: f64 = 100.0;
const MARGIN: f64 = 20.0;

/// Projection of the winning set onto the first two coordinates.
pub struct WinningOverlay<'a> {
    pub grid: &'a UniformGrid,
    pub ctrl: &'a SymbolicController,
}

/// Deterministic SVG of the environment (position coordinates only):
/// frame, obstacles, numbered targets, initial marker, optional winning
/// shading and trajectory polyline.
pub fn render_svg(spec: &ProblemSpec, traj: Option<&Trajectory>, winning: Option<&WinningOverlay<'_>>) -> Result<String, RenderError> {
    let n = spec.state_dim();
    if n < 2 {
        return Err(RenderError::UnsupportedDimension(n));
    }
    let b = &spec.state_bounds;
    let (x0, y0) = (b.lower[0], b.lower[1]);
    let (w, h) = (b.upper[0] - x0, b.upper[1] - y0);
    let px = |x: f64| MARGIN + (x - x0) * SCALE;
    let py = |y: f64| MARGIN + (h - (y - y0)) * SCALE;
    let rect = |r: &HyperRect| {
        format!(
            "x=\"{:.6}\" y=\"{:.6}\" width=\"{:.6}\" height=\"{:.6}\"",
            px(r.lower[0]),
            py(r.upper[1]),
            (r.upper[0] - r.lower[0]) * SCALE,
            (r.upper[1] - r.lower[1]) * SCALE
        )
    };
    let total_w = w * SCALE + 2.0 * MARGIN;
    let total_h = h * SCALE + 2.0 * MARGIN;
    let mut s = String::new();
    let _ = writeln!(s, "<?xml version=\"1.0\" encoding=\"UTF-8\"?>");
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{total_w:.6}\" height=\"{total_h:.6}\" viewBox=\"0 0 {total_w:.6} {total_h:.6}\">"
    );
    let _ = writeln!(s, "<rect class=\"frame\" {} fill=\"white\" stroke=\"black\" stroke-width=\"2\"/>", rect(b));

    if let Some(ov) = winning {
        let g = ov.grid;
        let (cx, cy) = (g.counts()[0], g.counts()[1]);
        let per_column: usize = g.counts()[2..].iter().product();
        let mut frac = vec![0usize; cx * cy];
        for cell in 0..g.num_cells() {
            if ov.ctrl.stages.first().is_some_and(|st| st.winning[cell]) {
                let m = g.unflatten(cell);
                frac[m[0] * cy + m[1]] += 1;
            }
        }
        let _ = writeln!(s, "<g class=\"winning\">");
        for i in 0..cx {
            for j in 0..cy {
                let k = frac[i * cy + j];
                if k == 0 {
                    continue;
                }
                let mut idx = vec![0; g.dim()];
                idx[0] = i;
                idx[1] = j;
                let cb = g.cell_box(&idx);
                let _ = writeln!(
                    s,
                    "<rect {} fill=\"green\" fill-opacity=\"{:.6}\" stroke=\"none\"/>",
                    rect(&cb),
                    0.4 * k as f64 / per_column as f64
                );
            }
        }
        let _ = writeln!(s, "</g>");
    }

    for o in spec.obstacle_rects()? {
        let _ = writeln!(s, "<rect class=\"obstacle\" {} fill=\"dimgray\" stroke=\"black\"/>", rect(&o));
    }
    for (k, t) in spec.target_rects()?.iter().enumerate() {
        let _ = writeln!(
            s,
            "<rect class=\"target\" {} fill=\"none\" stroke=\"blue\" stroke-width=\"2\"/>",
            rect(t)
        );
        let c = t.center();
        let _ = writeln!(
            s,
            "<text x=\"{:.6}\" y=\"{:.6}\" font-size=\"16\" text-anchor=\"middle\" fill=\"blue\">{}</text>",
            px(c[0]),
            py(c[1]),
            k + 1
        );
    }
    let init = spec.initial_rect()?;
    if init.lower[..2] == init.upper[..2] {
        let _ = writeln!(
            s,
            "<circle class=\"initial\" cx=\"{:.6}\" cy=\"{:.6}\" r=\"5.000000\" fill=\"red\"/>",
            px(init.lower[0]),
            py(init.lower[1])
        );
    } else {
        let _ = writeln!(
            s,
            "<polygon class=\"initial\" points=\"{:.6},{:.6} {:.6},{:.6} {:.6},{:.6} {:.6},{:.6}\" fill=\"red\" fill-opacity=\"0.3\" stroke=\"red\"/>",
            px(init.lower[0]),
            py(init.lower[1]),
            px(init.upper[0]),
            py(init.lower[1]),
            px(init.upper[0]),
            py(init.upper[1]),
            px(init.lower[0]),
            py(init.upper[1])
        );
    }
    if let Some(tr) = traj {
        let pts: Vec<String> = if tr.dense.is_empty() {
            tr.samples.iter().map(|p| &p.state).map(|x| format!("{:.6},{:.6}", px(x[0]), py(x[1]))).collect()
        } else {
            tr.dense.iter().map(|(_, x)| format!("{:.6},{:.6}", px(x[0]), py(x[1]))).collect()
        };
        let _ = writeln!(
            s,
            "<polyline class=\"trajectory\" points=\"{}\" fill=\"none\" stroke=\"orange\" stroke-width=\"2\"/>",
            pts.join(" ")
        );
    }
    let _ = writeln!(s, "</svg>");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::parse_spec;

    fn spec(obstacles: &str) -> ProblemSpec {
        parse_spec(&format!(
            r#"{{"system": "integrator", "state_bounds": {{"lower": [0, 0], "upper": [4, 4]}},
                "input_bounds": {{"lower": [-1, -1], "upper": [1, 1]}}, "eta_x": [0.5, 0.5], "eta_u": [0.5, 0.5],
                "obstacles": {obstacles},
                "targets": [{{"kind": "diagonal", "a": [3, 3], "b": [4, 4]}}],
                "initial": {{"kind": "point", "at": [0.5, 0.5]}}}}"#
        ))
        .unwrap()
    }

    #[test]
    fn trajectory_in_target_is_satisfied_at_zero() {
        let tr = Trajectory::from_waypoints(&[vec![3.5, 3.5], vec![3.6, 3.6]], 4);
        let v = check_reach_avoid(&tr, &spec("[]")).unwrap();
        assert!(v.satisfied);
        assert_eq!(v.t_f, Some(0.0));
    }

    #[test]
    fn obstacle_contact_is_reported() {
        let s = spec(r#"[{"kind": "diagonal", "a": [1.8, 1.8], "b": [2.2, 2.2]}]"#);
        let tr = Trajectory::from_waypoints(&[vec![0.5, 0.5], vec![3.5, 3.5]], 10);
        let v = check_reach_avoid(&tr, &s).unwrap();
        assert!(!v.satisfied);
        let (t, idx) = v.first_violation.unwrap();
        assert_eq!(idx, 0);
        assert!(t > 0.0 && t < 1.0);
        // endpoint-only checking misses the contact
        let sparse = Trajectory {
            dense: Vec::new(),
            ..tr
        };
        assert!(check_reach_avoid(&sparse, &s).unwrap().satisfied);
    }

    #[test]
    fn targets_must_be_visited_in_order() {
        let s = parse_spec(
            r#"{"system": "integrator", "state_bounds": {"lower": [0, 0], "upper": [4, 4]},
                "input_bounds": {"lower": [-1, -1], "upper": [1, 1]}, "eta_x": [0.5, 0.5], "eta_u": [0.5, 0.5],
                "targets": [{"kind": "diagonal", "a": [0, 3], "b": [1, 4]}, {"kind": "diagonal", "a": [3, 0], "b": [4, 1]}],
                "initial": {"kind": "point", "at": [2, 2]}}"#,
        )
        .unwrap();
        let wrong = Trajectory::from_waypoints(&[vec![2.0, 2.0], vec![3.5, 0.5], vec![0.5, 3.5]], 4);
        assert!(!check_reach_avoid(&wrong, &s).unwrap().satisfied);
        let right = Trajectory::from_waypoints(&[vec![2.0, 2.0], vec![0.5, 3.5], vec![3.5, 0.5]], 4);
        let v = check_reach_avoid(&right, &s).unwrap();
        assert!(v.satisfied);
        assert_eq!(v.t_f, Some(2.0));
    }

    #[test]
    fn empty_environment_has_one_rect_beyond_frame() {
        let svg = render_svg(&spec("[]"), None, None).unwrap();
        assert_eq!(svg.matches("<rect").count(), 2);
        assert_eq!(svg, render_svg(&spec("[]"), None, None).unwrap());
    }

    #[test]
    fn csv_layout() {
        let tr = Trajectory {
            samples: vec![
                Sample {
                    time: 0.0,
                    state: vec![1.0, 2.0],
                    input: Some(vec![0.5, 0.0]),
                },
                Sample {
                    time: 0.3,
                    state: vec![1.15, 2.0],
                    input: None,
                },
            ],
            dense: Vec::new(),
            termination: Termination::ReachedTarget(0.3),
        };
        assert_eq!(tr.to_csv(2), "t,x1,x2,u1,u2\n0,1,2,0.5,0\n0.3,1.15,2,,\n");
    }
}
