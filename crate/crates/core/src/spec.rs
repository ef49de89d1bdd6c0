//! The reach-avoid problem file: strict JSON parsing, canonical form and
//! semantic comparison of two problems.
//!
//! ```json
//! {
//!   "system": "bicycle",
//!   "state_bounds": {"lower": [0, 0, -3.141592653589793], "upper": [4, 4, 3.141592653589793]},
//!   "periodic": [false, false, true],
//!   "input_bounds": {"lower": [-1, -1], "upper": [1, 1]},
//!   "eta_x": [0.2, 0.2, 0.2],
//!   "eta_u": [0.3, 0.3],
//!   "tau": 0.3,
//!   "obstacles": [{"kind": "diagonal", "a": [1.6, 0.0], "b": [2.0, 2.8]}],
//!   "targets": [{"kind": "center_sides", "center": [3.4, 0.8], "sides": [0.8, 0.8]}],
//!   "initial": {"kind": "point", "at": [0.6, 0.6, 0.0]},
//!   "clearance": 0.0
//! }
//! ```
//!
//! Regions may list fewer coordinates than the state has; missing
//! coordinates span the full state range.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::ProblemGeometry;
use crate::dynamics::builtin_field;
use crate::geometry::{rect_from_encoding, GeometryError, HyperRect, RectEncoding, UniformGrid};

pub const DEFAULT_TAU: f64 = 0.3;
pub const DEFAULT_SUBSTEPS: usize = 5;
pub const DEFAULT_DIFF_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecError {
    #[error("schema error at `{path}` (line {line}, column {column}): {message}")]
    Schema {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("geometry error at `{path}`: {source}")]
    Geometry { path: String, source: GeometryError },
    #[error("invalid value at `{path}`: {message}")]
    Invalid { path: String, message: String },
    #[error("state dimensions differ: {reference} vs {candidate}")]
    DimensionMismatch { reference: usize, candidate: usize },
}

impl SpecError {
    fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        SpecError::Invalid {
            path: path.into(),
            message: message.into(),
        }
    }

    fn geometry(path: impl Into<String>, source: GeometryError) -> Self {
        SpecError::Geometry {
            path: path.into(),
            source,
        }
    }

    /// Dotted path of the offending field, if any.
    pub fn path(&self) -> Option<&str> {
        match self {
            SpecError::Schema { path, .. } | SpecError::Geometry { path, .. } | SpecError::Invalid { path, .. } => {
                Some(path)
            }
            SpecError::DimensionMismatch { .. } => None,
        }
    }
}

/// Initial condition: a single state or a region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialEncoding {
    Point {
        at: Vec<f64>,
    },
    #[serde(rename = "vertices4")]
    FourVertices {
        vertices: [[f64; 2]; 4],
    },
    Diagonal {
        a: Vec<f64>,
        b: Vec<f64>,
    },
    CenterSides {
        center: Vec<f64>,
        sides: Vec<f64>,
    },
}

impl InitialEncoding {
    fn region(&self) -> Option<RectEncoding> {
        match self.clone() {
            InitialEncoding::Point { .. } => None,
            InitialEncoding::FourVertices { vertices } => Some(RectEncoding::FourVertices { vertices }),
            InitialEncoding::Diagonal { a, b } => Some(RectEncoding::Diagonal { a, b }),
            InitialEncoding::CenterSides { center, sides } => Some(RectEncoding::CenterSides { center, sides }),
        }
    }

    fn rect(&self) -> Result<HyperRect, GeometryError> {
        match self {
            InitialEncoding::Point { at } => {
                let r = HyperRect::point(at);
                r.validate()?;
                Ok(r)
            }
            other => rect_from_encoding(&other.region().expect("region variant")),
        }
    }
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

/// A reach-avoid problem as written in a problem file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub system: String,
    pub state_bounds: HyperRect,
    #[serde(default)]
    pub periodic: Vec<bool>,
    pub input_bounds: HyperRect,
    pub eta_x: Vec<f64>,
    pub eta_u: Vec<f64>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub obstacles: Vec<RectEncoding>,
    pub targets: Vec<RectEncoding>,
    pub initial: InitialEncoding,
    #[serde(default)]
    pub clearance: f64,
}

/// Parses and validates a problem document. Unknown keys are rejected.
pub fn parse_spec(text: &str) -> Result<ProblemSpec, SpecError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut spec: ProblemSpec = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        SpecError::Schema {
            path,
            line: inner.line(),
            column: inner.column(),
            message: inner.to_string(),
        }
    })?;
    if spec.periodic.is_empty() {
        spec.periodic = vec![false; spec.state_bounds.dim()];
    }
    spec.validate()?;
    Ok(spec)
}

/// Pretty JSON with a trailing newline; parses back to an equal spec.
pub fn serialize_spec(spec: &ProblemSpec) -> String {
    let mut s = serde_json::to_string_pretty(spec).expect("spec serializes");
    s.push('\n');
    s
}

impl ProblemSpec {
    pub fn state_dim(&self) -> usize {
        self.state_bounds.dim()
    }

    pub fn input_dim(&self) -> usize {
        self.input_bounds.dim()
    }

    /// Checks every invariant of a problem file.
    pub fn validate(&self) -> Result<(), SpecError> {
        self.state_bounds
            .validate()
            .map_err(|e| SpecError::geometry("state_bounds", e))?;
        self.input_bounds
            .validate()
            .map_err(|e| SpecError::geometry("input_bounds", e))?;
        let n = self.state_dim();
        let m = self.input_dim();
        let field = builtin_field(&self.system, n).map_err(|e| SpecError::invalid("system", e.to_string()))?;
        if field.dim_state() != n {
            return Err(SpecError::invalid(
                "state_bounds",
                format!("system `{}` has {} states, bounds have {n}", self.system, field.dim_state()),
            ));
        }
        if field.dim_input() != m {
            return Err(SpecError::invalid(
                "input_bounds",
                format!("system `{}` has {} inputs, bounds have {m}", self.system, field.dim_input()),
            ));
        }
        if self.periodic.len() != n {
            return Err(SpecError::invalid("periodic", format!("expected {n} entries")));
        }
        if self.eta_x.len() != n {
            return Err(SpecError::invalid("eta_x", format!("expected {n} entries")));
        }
        if self.eta_u.len() != m {
            return Err(SpecError::invalid("eta_u", format!("expected {m} entries")));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(SpecError::invalid("tau", "must be positive"));
        }
        if !(self.clearance >= 0.0) || !self.clearance.is_finite() {
            return Err(SpecError::invalid("clearance", "must be non-negative"));
        }
        self.grid().map_err(|e| SpecError::geometry("eta_x", e))?;
        for (i, e) in self.eta_u.iter().enumerate() {
            if !(*e > 0.0) || !e.is_finite() {
                return Err(SpecError::invalid(format!("eta_u[{i}]"), "must be positive"));
            }
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            self.resolve(o, &format!("obstacles[{i}]"))?;
        }
        if self.targets.is_empty() {
            return Err(SpecError::invalid("targets", "at least one target is required"));
        }
        for (i, t) in self.targets.iter().enumerate() {
            self.resolve(t, &format!("targets[{i}]"))?;
        }
        self.initial_rect()?;
        Ok(())
    }

    /// The state grid described by `state_bounds`, `eta_x` and `periodic`.
    pub fn grid(&self) -> Result<UniformGrid, GeometryError> {
        UniformGrid::new(self.state_bounds.clone(), self.eta_x.clone(), self.periodic.clone())
    }

    /// Lifts a region to full state dimension and checks it lies within
    /// the state bounds.
    fn lift(&self, r: HyperRect, path: &str) -> Result<HyperRect, SpecError> {
        let n = self.state_dim();
        let k = r.dim();
        if k > n {
            return Err(SpecError::geometry(
                path,
                GeometryError::DimensionMismatch { expected: n, actual: k },
            ));
        }
        let mut full = r;
        full.lower.extend_from_slice(&self.state_bounds.lower[k..]);
        full.upper.extend_from_slice(&self.state_bounds.upper[k..]);
        for d in 0..k {
            for v in [full.lower[d], full.upper[d]] {
                if v < self.state_bounds.lower[d] || v > self.state_bounds.upper[d] {
                    return Err(SpecError::geometry(
                        path,
                        GeometryError::OutOfBounds {
                            dim: d,
                            value: v,
                            lower: self.state_bounds.lower[d],
                            upper: self.state_bounds.upper[d],
                        },
                    ));
                }
            }
        }
        Ok(full)
    }

    fn resolve(&self, enc: &RectEncoding, path: &str) -> Result<HyperRect, SpecError> {
        let r = rect_from_encoding(enc).map_err(|e| SpecError::geometry(path, e))?;
        self.lift(r, path)
    }

    pub fn obstacle_rects(&self) -> Result<Vec<HyperRect>, SpecError> {
        self.obstacles
            .iter()
            .enumerate()
            .map(|(i, o)| self.resolve(o, &format!("obstacles[{i}]")))
            .collect()
    }

    pub fn target_rects(&self) -> Result<Vec<HyperRect>, SpecError> {
        self.targets
            .iter()
            .enumerate()
            .map(|(i, t)| self.resolve(t, &format!("targets[{i}]")))
            .collect()
    }

    pub fn initial_rect(&self) -> Result<HyperRect, SpecError> {
        let r = self.initial.rect().map_err(|e| SpecError::geometry("initial", e))?;
        self.lift(r, "initial")
    }

    /// Dimensions the clearance applies to (the two position coordinates).
    pub fn clearance_dims(&self) -> Vec<usize> {
        (0..self.state_dim().min(2)).collect()
    }

    /// Obstacles grown by the clearance in the position coordinates and
    /// clipped to the state bounds.
    pub fn inflated_obstacles(&self) -> Result<Vec<HyperRect>, SpecError> {
        let dims = self.clearance_dims();
        Ok(self
            .obstacle_rects()?
            .into_iter()
            .map(|o| {
                o.inflate(&dims, self.clearance)
                    .clip(&self.state_bounds)
                    .expect("obstacle lies inside the bounds")
            })
            .collect())
    }

    pub fn geometry(&self) -> Result<ProblemGeometry, SpecError> {
        Ok(ProblemGeometry {
            obstacles: self.obstacle_rects()?,
            inflated_obstacles: self.inflated_obstacles()?,
            targets: self.target_rects()?,
            initial: self.initial_rect()?,
        })
    }
}

fn cmp_rect(a: &HyperRect, b: &HyperRect) -> Ordering {
    a.lower
        .iter()
        .chain(&a.upper)
        .zip(b.lower.iter().chain(&b.upper))
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Canonical form: every region as full-dimensional diagonal corners
/// `(lower, upper)`, obstacles sorted lexicographically, target order kept.
pub fn canonicalize(spec: &ProblemSpec) -> Result<ProblemSpec, SpecError> {
    spec.validate()?;
    let mut obstacles = spec.obstacle_rects()?;
    obstacles.sort_by(cmp_rect);
    let targets = spec.target_rects()?;
    let initial = match &spec.initial {
        InitialEncoding::Point { at } if at.len() == spec.state_dim() => InitialEncoding::Point { at: at.clone() },
        _ => {
            let r = spec.initial_rect()?;
            InitialEncoding::Diagonal { a: r.lower, b: r.upper }
        }
    };
    Ok(ProblemSpec {
        obstacles: obstacles.iter().map(RectEncoding::from_rect).collect(),
        targets: targets.iter().map(RectEncoding::from_rect).collect(),
        initial,
        ..spec.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MismatchCategory {
    MissingObstacle,
    ExtraObstacle,
    GeometryMismatch,
    WrongTarget,
    WrongTargetOrder,
    WrongInitial,
    WrongBounds,
    WrongClearance,
    /// System name, grid widths, step length or periodicity differ.
    WrongParameters,
}

impl MismatchCategory {
    pub fn as_str(&self) -> &'static str {
        match self {
            MismatchCategory::MissingObstacle => "missing_obstacle",
            MismatchCategory::ExtraObstacle => "extra_obstacle",
            MismatchCategory::GeometryMismatch => "geometry_mismatch",
            MismatchCategory::WrongTarget => "wrong_target",
            MismatchCategory::WrongTargetOrder => "wrong_target_order",
            MismatchCategory::WrongInitial => "wrong_initial",
            MismatchCategory::WrongBounds => "wrong_bounds",
            MismatchCategory::WrongClearance => "wrong_clearance",
            MismatchCategory::WrongParameters => "wrong_parameters",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub category: MismatchCategory,
    pub detail: String,
    pub expected: Option<HyperRect>,
    pub actual: Option<HyperRect>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MismatchReport {
    pub entries: Vec<Mismatch>,
}

impl MismatchReport {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn count(&self, category: MismatchCategory) -> usize {
        self.entries.iter().filter(|e| e.category == category).count()
    }

    fn push(&mut self, category: MismatchCategory, detail: String, expected: Option<HyperRect>, actual: Option<HyperRect>) {
        self.entries.push(Mismatch {
            category,
            detail,
            expected,
            actual,
        });
    }
}

impl fmt::Display for MismatchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(f, "{}: {}", e.category.as_str(), e.detail)?;
        }
        Ok(())
    }
}

fn rect_distance(a: &HyperRect, b: &HyperRect) -> f64 {
    a.lower
        .iter()
        .chain(&a.upper)
        .zip(b.lower.iter().chain(&b.upper))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn vec_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn fmt_rect(r: &HyperRect) -> String {
    format!("{:?} to {:?}", r.lower, r.upper)
}

/// Lists every semantic difference between a reference problem and a
/// candidate, comparing geometry within `tol`.
pub fn semantic_diff(reference: &ProblemSpec, candidate: &ProblemSpec, tol: f64) -> Result<MismatchReport, SpecError> {
    if reference.state_dim() != candidate.state_dim() {
        return Err(SpecError::DimensionMismatch {
            reference: reference.state_dim(),
            candidate: candidate.state_dim(),
        });
    }
    let reference = canonicalize(reference)?;
    let candidate = canonicalize(candidate)?;
    let mut report = MismatchReport::default();

    if !(vec_close(&reference.state_bounds.lower, &candidate.state_bounds.lower, tol)
        && vec_close(&reference.state_bounds.upper, &candidate.state_bounds.upper, tol))
    {
        report.push(
            MismatchCategory::WrongBounds,
            format!(
                "state bounds should be {}, found {}",
                fmt_rect(&reference.state_bounds),
                fmt_rect(&candidate.state_bounds)
            ),
            Some(reference.state_bounds.clone()),
            Some(candidate.state_bounds.clone()),
        );
    }
    if !(vec_close(&reference.input_bounds.lower, &candidate.input_bounds.lower, tol)
        && vec_close(&reference.input_bounds.upper, &candidate.input_bounds.upper, tol))
    {
        report.push(
            MismatchCategory::WrongBounds,
            format!(
                "input bounds should be {}, found {}",
                fmt_rect(&reference.input_bounds),
                fmt_rect(&candidate.input_bounds)
            ),
            Some(reference.input_bounds.clone()),
            Some(candidate.input_bounds.clone()),
        );
    }
    let mut params = Vec::new();
    if reference.system != candidate.system {
        params.push(format!("system should be `{}`, found `{}`", reference.system, candidate.system));
    }
    if reference.periodic != candidate.periodic {
        params.push(format!("periodic should be {:?}, found {:?}", reference.periodic, candidate.periodic));
    }
    if !vec_close(&reference.eta_x, &candidate.eta_x, tol) {
        params.push(format!("eta_x should be {:?}, found {:?}", reference.eta_x, candidate.eta_x));
    }
    if !vec_close(&reference.eta_u, &candidate.eta_u, tol) {
        params.push(format!("eta_u should be {:?}, found {:?}", reference.eta_u, candidate.eta_u));
    }
    if (reference.tau - candidate.tau).abs() > tol {
        params.push(format!("tau should be {}, found {}", reference.tau, candidate.tau));
    }
    for p in params {
        report.push(MismatchCategory::WrongParameters, p, None, None);
    }
    if (reference.clearance - candidate.clearance).abs() > tol {
        report.push(
            MismatchCategory::WrongClearance,
            format!("clearance should be {}, found {}", reference.clearance, candidate.clearance),
            None,
            None,
        );
    }

    // obstacles: greedy nearest-pair matching
    let ref_obs = reference.obstacle_rects()?;
    let cand_obs = candidate.obstacle_rects()?;
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, a) in ref_obs.iter().enumerate() {
        for (j, b) in cand_obs.iter().enumerate() {
            pairs.push((rect_distance(a, b), i, j));
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut ref_used = vec![false; ref_obs.len()];
    let mut cand_used = vec![false; cand_obs.len()];
    let mut matched = Vec::new();
    for (d, i, j) in pairs {
        if ref_used[i] || cand_used[j] {
            continue;
        }
        ref_used[i] = true;
        cand_used[j] = true;
        matched.push((d, i, j));
    }
    matched.sort_by_key(|m| m.1);
    for (d, i, j) in matched {
        if d > tol {
            report.push(
                MismatchCategory::GeometryMismatch,
                format!(
                    "obstacle {} should span {}, found {}",
                    i + 1,
                    fmt_rect(&ref_obs[i]),
                    fmt_rect(&cand_obs[j])
                ),
                Some(ref_obs[i].clone()),
                Some(cand_obs[j].clone()),
            );
        }
    }
    for (i, r) in ref_obs.iter().enumerate().filter(|(i, _)| !ref_used[*i]) {
        report.push(
            MismatchCategory::MissingObstacle,
            format!("obstacle {} spanning {} is missing", i + 1, fmt_rect(r)),
            Some(r.clone()),
            None,
        );
    }
    for (_, r) in cand_obs.iter().enumerate().filter(|(j, _)| !cand_used[*j]) {
        report.push(
            MismatchCategory::ExtraObstacle,
            format!("obstacle spanning {} is not in the description", fmt_rect(r)),
            None,
            Some(r.clone()),
        );
    }

    // targets: sequential order matters
    let ref_t = reference.target_rects()?;
    let cand_t = candidate.target_rects()?;
    let same = |a: &HyperRect, b: &HyperRect| rect_distance(a, b) <= tol;
    let in_order = ref_t.len() == cand_t.len() && ref_t.iter().zip(&cand_t).all(|(a, b)| same(a, b));
    if !in_order {
        let permutation = ref_t.len() == cand_t.len() && {
            let mut used = vec![false; cand_t.len()];
            ref_t.iter().all(|a| {
                match (0..cand_t.len()).find(|&j| !used[j] && same(a, &cand_t[j])) {
                    Some(j) => {
                        used[j] = true;
                        true
                    }
                    None => false,
                }
            })
        };
        if permutation {
            report.push(
                MismatchCategory::WrongTargetOrder,
                "targets are visited in the wrong order".to_string(),
                None,
                None,
            );
        } else {
            for k in 0..ref_t.len().max(cand_t.len()) {
                let (a, b) = (ref_t.get(k), cand_t.get(k));
                let detail = match (a, b) {
                    (Some(a), Some(b)) if same(a, b) => continue,
                    (Some(a), Some(b)) => format!("target {} should span {}, found {}", k + 1, fmt_rect(a), fmt_rect(b)),
                    (Some(a), None) => format!("target {} spanning {} is missing", k + 1, fmt_rect(a)),
                    (None, Some(b)) => format!("target {} spanning {} is not in the description", k + 1, fmt_rect(b)),
                    (None, None) => unreachable!(),
                };
                report.push(MismatchCategory::WrongTarget, detail, a.cloned(), b.cloned());
            }
        }
    }

    let ri = reference.initial_rect()?;
    let ci = candidate.initial_rect()?;
    if !same(&ri, &ci) {
        report.push(
            MismatchCategory::WrongInitial,
            format!("initial set should be {}, found {}", fmt_rect(&ri), fmt_rect(&ci)),
            Some(ri),
            Some(ci),
        );
    }
    Ok(report)
}
