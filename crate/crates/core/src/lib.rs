//! Reach-avoid controller synthesis for continuous systems through a
//! uniform-grid abstraction.
//!
//! The flow is: parse a [`spec::ProblemSpec`], grid the state and input
//! spaces ([`geometry`]), over-approximate one sampling period of the flow
//! for every cell and input ([`abstraction`]), solve the reach-avoid game
//! ([`synthesis`]) and run the concretized controller ([`simulator`]).

pub mod abstraction;
pub mod dynamics;
pub mod geometry;
pub mod simulator;
pub mod spec;
pub mod synthesis;

use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::abstraction::{build_abstraction, build_input_grid, label_cells, AbstractionError, BuildStats, FiniteTransitionSystem, LabeledCells};
use crate::dynamics::{builtin_field, DynamicsError, VectorField};
use crate::geometry::{GeometryError, UniformGrid};
use crate::spec::{ProblemSpec, SpecError, DEFAULT_SUBSTEPS};
use crate::synthesis::{solve_sequential, SymbolicController, SynthesisError};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
}

/// Everything produced by one synthesis run.
#[derive(Debug)]
pub struct Synthesis {
    pub spec: ProblemSpec,
    pub grid: UniformGrid,
    pub inputs: Vec<Vec<f64>>,
    pub field: Box<dyn VectorField>,
    pub fts: FiniteTransitionSystem,
    pub labels: LabeledCells,
    pub controller: SymbolicController,
    pub build_stats: BuildStats,
    pub abstraction_time: Duration,
    pub solve_time: Duration,
}

impl Synthesis {
    pub fn substeps(&self) -> usize {
        DEFAULT_SUBSTEPS
    }

    pub fn num_winning(&self) -> usize {
        self.controller.stages[0].num_winning()
    }

    pub fn winning_fraction(&self) -> f64 {
        self.num_winning() as f64 / self.grid.num_cells() as f64
    }

    /// True when at least one initial cell is winning.
    pub fn initial_winning(&self) -> bool {
        self.labels.initial_cells.iter().any(|&c| self.controller.initial_winning(c))
    }

    /// True when every initial cell is winning.
    pub fn all_initial_winning(&self) -> bool {
        !self.labels.initial_cells.is_empty() && self.labels.initial_cells.iter().all(|&c| self.controller.initial_winning(c))
    }
}

/// Optional prebuilt abstraction, e.g. loaded from a cache file.
pub fn synthesize_with(spec: &ProblemSpec, prebuilt: Option<FiniteTransitionSystem>) -> Result<Synthesis, Error> {
    spec.validate()?;
    let grid = spec.grid()?;
    let inputs = build_input_grid(&spec.input_bounds, &spec.eta_u)?;
    let field = builtin_field(&spec.system, spec.state_dim())?;
    let labels = label_cells(&grid, &spec.geometry()?)?;
    let start = Instant::now();
    let (fts, build_stats) = match prebuilt {
        Some(fts) => (fts, BuildStats::default()),
        None => build_abstraction(&grid, &inputs, field.as_ref(), spec.tau, DEFAULT_SUBSTEPS)?,
    };
    let abstraction_time = start.elapsed();
    let start = Instant::now();
    let controller = solve_sequential(&fts, &labels, &inputs, Some(&grid))?;
    let solve_time = start.elapsed();
    Ok(Synthesis {
        spec: spec.clone(),
        grid,
        inputs,
        field,
        fts,
        labels,
        controller,
        build_stats,
        abstraction_time,
        solve_time,
    })
}

/// Identifies everything the transition relation depends on besides the
/// grid header: system, bounds, periodicity, input lattice and substeps.
/// Obstacles, targets and the initial set do not enter the relation.
pub fn abstraction_key(spec: &ProblemSpec) -> u64 {
    let fields = serde_json::json!({
        "system": spec.system,
        "state_bounds": spec.state_bounds,
        "periodic": spec.periodic,
        "input_bounds": spec.input_bounds,
        "eta_x": spec.eta_x,
        "eta_u": spec.eta_u,
        "tau": spec.tau,
        "substeps": DEFAULT_SUBSTEPS,
    });
    let digest = Sha256::digest(fields.to_string().as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Grids, abstracts and solves a problem.
pub fn synthesize(spec: &ProblemSpec) -> Result<Synthesis, Error> {
    synthesize_with(spec, None)
}
