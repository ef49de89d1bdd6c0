//! Finite transition system built from a gridded continuous system.
//!
//! Pairs `(state, input)` are numbered input-major:
//! `pair = input * num_states + state`. Successor lists live in one flat
//! array indexed by `offsets[pair]..offsets[pair + 1]`.

use std::io::{self, Read, Write};

use log::warn;
use rayon::prelude::*;
use thiserror::Error;

use crate::dynamics::{propagate_tube, VectorField};
use crate::geometry::{GeometryError, HyperRect, UniformGrid};

#[derive(Debug, Error)]
pub enum AbstractionError {
    #[error("no input lattice point inside the input bounds")]
    EmptyInputSet,
    #[error("target stage {stage} contains no complete grid cell")]
    EmptyTarget { stage: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid transition system: {0}")]
    Invalid(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("cache format: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Lattice points `k * eta_u` inside the closed input box, row-major.
pub fn build_input_grid(input_bounds: &HyperRect, eta_u: &[f64]) -> Result<Vec<Vec<f64>>, AbstractionError> {
    input_bounds.validate()?;
    if eta_u.len() != input_bounds.dim() {
        return Err(AbstractionError::DimensionMismatch(format!(
            "eta_u has {} entries, input bounds have {}",
            eta_u.len(),
            input_bounds.dim()
        )));
    }
    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(eta_u.len());
    for (d, &e) in eta_u.iter().enumerate() {
        if !(e > 0.0) || !e.is_finite() {
            return Err(GeometryError::NonPositiveEta { dim: d, eta: e }.into());
        }
        let lo = input_bounds.lower[d];
        let hi = input_bounds.upper[d];
        let tol = 1e-9;
        let k0 = (lo / e - tol).ceil() as i64;
        let k1 = (hi / e + tol).floor() as i64;
        let axis: Vec<f64> = (k0..=k1).map(|k| (k as f64 * e).clamp(lo, hi)).collect();
        if axis.is_empty() {
            return Err(AbstractionError::EmptyInputSet);
        }
        axes.push(axis);
    }
    let mut out = vec![Vec::new()];
    for axis in &axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(*v);
                    p
                })
            })
            .collect();
    }
    Ok(out)
}

/// The abstract system `(X_d, U_d, Delta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteTransitionSystem {
    num_states: usize,
    num_inputs: usize,
    offsets: Vec<u64>,
    successors: Vec<u32>,
    blocked: Vec<bool>,
    /// Optional flow-tube box per pair: `2n` floats, lower then upper.
    tubes: Option<(usize, Vec<f64>)>,
}

impl FiniteTransitionSystem {
    /// Builds a system from per-pair successor lists (input-major order).
    /// Lists are sorted and deduplicated; blocked pairs must be empty.
    pub fn from_lists(
        num_states: usize,
        num_inputs: usize,
        lists: Vec<Vec<u32>>,
        blocked: Vec<bool>,
    ) -> Result<Self, AbstractionError> {
        let pairs = num_states * num_inputs;
        if lists.len() != pairs || blocked.len() != pairs {
            return Err(AbstractionError::Invalid(format!(
                "expected {pairs} pairs, got {} lists and {} blocked flags",
                lists.len(),
                blocked.len()
            )));
        }
        let mut offsets = Vec::with_capacity(pairs + 1);
        let mut successors = Vec::new();
        offsets.push(0u64);
        for (p, mut list) in lists.into_iter().enumerate() {
            list.sort_unstable();
            list.dedup();
            if blocked[p] && !list.is_empty() {
                return Err(AbstractionError::Invalid(format!("blocked pair {p} has successors")));
            }
            if list.last().is_some_and(|&s| s as usize >= num_states) {
                return Err(AbstractionError::Invalid(format!("pair {p} has an out-of-range successor")));
            }
            successors.extend(list);
            offsets.push(successors.len() as u64);
        }
        Ok(Self {
            num_states,
            num_inputs,
            offsets,
            successors,
            blocked,
            tubes: None,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    pub fn num_pairs(&self) -> usize {
        self.num_states * self.num_inputs
    }

    /// Total number of stored transitions `|Delta|`.
    pub fn num_transitions(&self) -> usize {
        self.successors.len()
    }

    #[inline]
    pub fn pair(&self, state: usize, input: usize) -> usize {
        input * self.num_states + state
    }

    #[inline]
    pub fn successors(&self, state: usize, input: usize) -> &[u32] {
        self.pair_successors(self.pair(state, input))
    }

    #[inline]
    pub fn pair_successors(&self, pair: usize) -> &[u32] {
        &self.successors[self.offsets[pair] as usize..self.offsets[pair + 1] as usize]
    }

    pub fn is_blocked(&self, state: usize, input: usize) -> bool {
        self.blocked[self.pair(state, input)]
    }

    pub fn num_blocked(&self) -> usize {
        self.blocked.iter().filter(|b| **b).count()
    }

    /// Box containing every state visited during one step, if recorded.
    pub fn tube(&self, state: usize, input: usize) -> Option<HyperRect> {
        self.pair_tube(self.pair(state, input))
    }

    pub fn pair_tube(&self, pair: usize) -> Option<HyperRect> {
        let (n, data) = self.tubes.as_ref()?;
        let base = pair * 2 * n;
        Some(HyperRect {
            lower: data[base..base + n].to_vec(),
            upper: data[base + n..base + 2 * n].to_vec(),
        })
    }

    pub fn has_tubes(&self) -> bool {
        self.tubes.is_some()
    }
}

/// Diagnostics from [`build_abstraction`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildStats {
    pub blocked: usize,
    pub non_finite: usize,
}

struct PairResult {
    successors: Vec<u32>,
    blocked: bool,
    non_finite: bool,
    tube: Vec<f64>,
}

/// Builds the abstraction: each (cell, input) pair's successors are the
/// cells meeting the propagated box of the cell. Pairs whose box leaves the
/// bounds in a non-periodic dimension are blocked with no successors.
pub fn build_abstraction(
    grid: &UniformGrid,
    inputs: &[Vec<f64>],
    f: &dyn VectorField,
    tau: f64,
    substeps: usize,
) -> Result<(FiniteTransitionSystem, BuildStats), AbstractionError> {
    let n = grid.dim();
    if f.dim_state() != n {
        return Err(AbstractionError::DimensionMismatch(format!(
            "vector field has {} states, grid has {n} dimensions",
            f.dim_state()
        )));
    }
    if let Some(u) = inputs.iter().find(|u| u.len() != f.dim_input()) {
        return Err(AbstractionError::DimensionMismatch(format!(
            "input of length {} for a field with {} inputs",
            u.len(),
            f.dim_input()
        )));
    }
    if inputs.is_empty() {
        return Err(AbstractionError::EmptyInputSet);
    }
    let num_states = grid.num_cells();
    assert!(num_states <= u32::MAX as usize, "state ids must fit in u32");
    let radius = grid.half_eta();
    let pairs = num_states * inputs.len();

    let mut offsets = Vec::with_capacity(pairs + 1);
    offsets.push(0u64);
    let mut successors = Vec::new();
    let mut blocked = Vec::with_capacity(pairs);
    let mut tubes = Vec::with_capacity(pairs * 2 * n);
    let mut stats = BuildStats::default();

    for u in inputs {
        let per_cell: Vec<PairResult> = (0..num_states)
            .into_par_iter()
            .map(|cell| {
                let center = grid.center_of_flat(cell);
                match propagate_tube(f, &center, &radius, u, tau, substeps) {
                    Ok(t) => {
                        let end = t.end.rect();
                        let mut tube = t.tube.lower;
                        tube.extend(t.tube.upper);
                        if grid.exits_bounds(&end) {
                            PairResult {
                                successors: Vec::new(),
                                blocked: true,
                                non_finite: false,
                                tube,
                            }
                        } else {
                            PairResult {
                                successors: grid.cells_overlapping_ids(&end).into_iter().map(|s| s as u32).collect(),
                                blocked: false,
                                non_finite: false,
                                tube,
                            }
                        }
                    }
                    Err(_) => PairResult {
                        successors: Vec::new(),
                        blocked: true,
                        non_finite: true,
                        tube: vec![f64::NEG_INFINITY; n].into_iter().chain(vec![f64::INFINITY; n]).collect(),
                    },
                }
            })
            .collect();
        for r in per_cell {
            stats.blocked += r.blocked as usize;
            stats.non_finite += r.non_finite as usize;
            successors.extend(r.successors);
            offsets.push(successors.len() as u64);
            blocked.push(r.blocked);
            tubes.extend(r.tube);
        }
    }
    if stats.non_finite > 0 {
        warn!("{} (cell, input) pairs produced non-finite states and were blocked", stats.non_finite);
    }
    Ok((
        FiniteTransitionSystem {
            num_states,
            num_inputs: inputs.len(),
            offsets,
            successors,
            blocked,
            tubes: Some((n, tubes)),
        },
        stats,
    ))
}

/// Reach-avoid sets expressed in state coordinates (all full-dimensional).
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemGeometry {
    pub obstacles: Vec<HyperRect>,
    /// Obstacles grown by the clearance margin; equal to `obstacles` when
    /// the clearance is zero.
    pub inflated_obstacles: Vec<HyperRect>,
    pub targets: Vec<HyperRect>,
    pub initial: HyperRect,
}

/// Obstacle, per-stage target and initial cells.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCells {
    pub obstacle_cells: Vec<bool>,
    pub target_cells: Vec<Vec<bool>>,
    pub initial_cells: Vec<usize>,
    /// Boxes that a one-step flow tube must not touch.
    pub obstacle_rects: Vec<HyperRect>,
}

impl LabeledCells {
    pub fn num_stages(&self) -> usize {
        self.target_cells.len()
    }

    pub fn num_obstacle_cells(&self) -> usize {
        self.obstacle_cells.iter().filter(|b| **b).count()
    }
}

/// Marks obstacle cells by closed intersection (outer approximation),
/// target cells by containment (inner approximation) and initial cells by
/// intersection.
pub fn label_cells(grid: &UniformGrid, geometry: &ProblemGeometry) -> Result<LabeledCells, AbstractionError> {
    let num = grid.num_cells();
    let mut obstacle_cells = vec![false; num];
    for o in &geometry.inflated_obstacles {
        for id in grid.cells_overlapping_ids(o) {
            obstacle_cells[id] = true;
        }
    }
    let mut target_cells = Vec::with_capacity(geometry.targets.len());
    for (stage, t) in geometry.targets.iter().enumerate() {
        let mut mask = vec![false; num];
        let mut any = false;
        for id in grid.cells_inside_ids(t) {
            if !obstacle_cells[id] {
                mask[id] = true;
                any = true;
            }
        }
        if !any {
            return Err(AbstractionError::EmptyTarget { stage });
        }
        target_cells.push(mask);
    }
    let init = &geometry.initial;
    let initial_cells = if init.lower == init.upper {
        vec![grid.cell_of(&init.lower)?.flat_id]
    } else {
        grid.cells_overlapping_ids(init)
    };
    Ok(LabeledCells {
        obstacle_cells,
        target_cells,
        initial_cells,
        obstacle_rects: geometry.inflated_obstacles.clone(),
    })
}

const CACHE_MAGIC: &[u8; 5] = b"GSYN1";

/// Writes the system to the binary cache format: magic, dimensions and
/// counts, cell widths and step length (little-endian), a caller-chosen
/// key identifying everything else the transitions depend on, then the
/// arrays.
pub fn write_cache<W: Write>(
    w: &mut W,
    fts: &FiniteTransitionSystem,
    grid: &UniformGrid,
    input_dim: usize,
    tau: f64,
    key: u64,
) -> Result<(), AbstractionError> {
    w.write_all(CACHE_MAGIC)?;
    let n = grid.dim() as u64;
    for v in [
        n,
        input_dim as u64,
        fts.num_states as u64,
        fts.num_inputs as u64,
        fts.successors.len() as u64,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for e in grid.eta() {
        w.write_all(&e.to_le_bytes())?;
    }
    w.write_all(&tau.to_le_bytes())?;
    w.write_all(&key.to_le_bytes())?;
    for o in &fts.offsets {
        w.write_all(&o.to_le_bytes())?;
    }
    for s in &fts.successors {
        w.write_all(&s.to_le_bytes())?;
    }
    for b in &fts.blocked {
        w.write_all(&[*b as u8])?;
    }
    match &fts.tubes {
        Some((_, data)) => {
            w.write_all(&[1])?;
            for v in data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        None => w.write_all(&[0])?,
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

/// Reads a cache written by [`write_cache`]; the header must match the
/// given grid, input dimension, step length and key bit for bit.
pub fn read_cache<R: Read>(
    r: &mut R,
    grid: &UniformGrid,
    input_dim: usize,
    tau: f64,
    key: u64,
) -> Result<FiniteTransitionSystem, AbstractionError> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(AbstractionError::Cache("bad magic".into()));
    }
    let n = read_u64(r)? as usize;
    let m = read_u64(r)? as usize;
    let num_states = read_u64(r)? as usize;
    let num_inputs = read_u64(r)? as usize;
    let num_succ = read_u64(r)? as usize;
    if n != grid.dim() || m != input_dim || num_states != grid.num_cells() {
        return Err(AbstractionError::Cache("header does not match the grid".into()));
    }
    for e in grid.eta() {
        if read_f64(r)?.to_bits() != e.to_bits() {
            return Err(AbstractionError::Cache("cell width mismatch".into()));
        }
    }
    if read_f64(r)?.to_bits() != tau.to_bits() {
        return Err(AbstractionError::Cache("step length mismatch".into()));
    }
    if read_u64(r)? != key {
        return Err(AbstractionError::Cache("cache was built for a different problem".into()));
    }
    let pairs = num_states * num_inputs;
    let offsets = (0..=pairs).map(|_| read_u64(r)).collect::<io::Result<Vec<_>>>()?;
    let mut successors = Vec::with_capacity(num_succ);
    let mut b4 = [0u8; 4];
    for _ in 0..num_succ {
        r.read_exact(&mut b4)?;
        successors.push(u32::from_le_bytes(b4));
    }
    let mut blocked_raw = vec![0u8; pairs];
    r.read_exact(&mut blocked_raw)?;
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let tubes = if flag[0] == 1 {
        let data = (0..pairs * 2 * n).map(|_| read_f64(r)).collect::<io::Result<Vec<_>>>()?;
        Some((n, data))
    } else {
        None
    };
    if offsets.last().copied() != Some(num_succ as u64) {
        return Err(AbstractionError::Cache("offset table inconsistent".into()));
    }
    Ok(FiniteTransitionSystem {
        num_states,
        num_inputs,
        offsets,
        successors,
        blocked: blocked_raw.into_iter().map(|b| b != 0).collect(),
        tubes,
    })
}
