//! Reach-avoid game solving on a finite transition system and feedback
//! concretization of the resulting controller.
//!
//! An input certifies a state only when every abstract successor is
//! already winning (worst-case nondeterminism). When the system records
//! flow tubes, an input is also rejected if its tube touches an obstacle.

use std::fmt::Write as _;

use log::warn;
use thiserror::Error;

use crate::abstraction::{FiniteTransitionSystem, LabeledCells};
use crate::geometry::{GeometryError, HyperRect, UniformGrid};

#[derive(Debug, Error, PartialEq)]
pub enum SynthesisError {
    #[error("stage {stage} requested but only {stages} target stages exist")]
    NoSuchStage { stage: usize, stages: usize },
    #[error("state {0:?} lies outside the winning set")]
    OutsideWinningSet(Vec<f64>),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("controller table: {0}")]
    Table(String),
}

/// Winning region, value and input choice for one target stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageController {
    /// Cells treated as the goal of this stage.
    pub goal: Vec<bool>,
    pub winning: Vec<bool>,
    /// Worst-case steps to the goal; `u32::MAX` when not winning.
    pub value: Vec<u32>,
    /// Certifying input id; `None` on goal and losing cells.
    pub choice: Vec<Option<u32>>,
}

impl StageController {
    pub fn num_winning(&self) -> usize {
        self.winning.iter().filter(|w| **w).count()
    }
}

/// Deterministic symbolic controller: one stage per sequential target.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolicController {
    pub inputs: Vec<Vec<f64>>,
    pub stages: Vec<StageController>,
}

impl SymbolicController {
    pub fn is_winning(&self, stage: usize, cell: usize) -> bool {
        self.stages[stage].winning[cell]
    }

    /// Winning at the first stage.
    pub fn initial_winning(&self, cell: usize) -> bool {
        self.stages.first().is_some_and(|s| s.winning[cell])
    }
}

fn tube_hits_obstacle(tube: &HyperRect, obstacles: &[HyperRect], grid: Option<&UniformGrid>) -> bool {
    obstacles.iter().any(|o| {
        (0..tube.dim()).all(|d| {
            let periodic = grid.is_some_and(|g| g.periodic()[d]);
            if !periodic {
                return tube.lower[d] <= o.upper[d] && o.lower[d] <= tube.upper[d];
            }
            let g = grid.unwrap();
            let w = g.bounds().upper[d] - g.bounds().lower[d];
            if tube.upper[d] - tube.lower[d] >= w {
                return true;
            }
            let lo = g.wrap_coord(d, tube.lower[d]);
            let hi = lo + (tube.upper[d] - tube.lower[d]);
            [-w, 0.0, w]
                .iter()
                .any(|s| lo + s <= o.upper[d] && o.lower[d] <= hi + s)
        })
    })
}

/// Reverse relation: for each state, the pairs having it as a successor.
struct Predecessors {
    offsets: Vec<usize>,
    pairs: Vec<u32>,
}

impl Predecessors {
    fn new(fts: &FiniteTransitionSystem) -> Self {
        let n = fts.num_states();
        let mut counts = vec![0usize; n + 1];
        for p in 0..fts.num_pairs() {
            for &s in fts.pair_successors(p) {
                counts[s as usize + 1] += 1;
            }
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut fill = counts;
        let mut pairs = vec![0u32; fts.num_transitions()];
        for p in 0..fts.num_pairs() {
            for &s in fts.pair_successors(p) {
                pairs[fill[s as usize]] = p as u32;
                fill[s as usize] += 1;
            }
        }
        Self { offsets, pairs }
    }

    fn of(&self, s: usize) -> &[u32] {
        &self.pairs[self.offsets[s]..self.offsets[s + 1]]
    }
}

fn solve_goal(
    fts: &FiniteTransitionSystem,
    preds: &Predecessors,
    goal: &[bool],
    avoid: &[bool],
    obstacle_rects: &[HyperRect],
    grid: Option<&UniformGrid>,
) -> StageController {
    let n = fts.num_states();
    let mut winning = vec![false; n];
    let mut value = vec![u32::MAX; n];
    let mut choice: Vec<Option<u32>> = vec![None; n];
    let mut remaining: Vec<u32> = (0..fts.num_pairs())
        .map(|p| fts.pair_successors(p).len() as u32)
        .collect();

    let mut level: Vec<usize> = (0..n).filter(|&s| goal[s]).collect();
    for &s in &level {
        winning[s] = true;
        value[s] = 0;
    }
    let mut pending: Vec<Option<u32>> = vec![None; n];
    let mut depth = 0u32;
    while !level.is_empty() {
        let mut next = Vec::new();
        for &s in &level {
            for &p in preds.of(s) {
                let p = p as usize;
                remaining[p] -= 1;
                if remaining[p] != 0 {
                    continue;
                }
                let state = p % n;
                let input = (p / n) as u32;
                if winning[state] || avoid[state] {
                    continue;
                }
                if !obstacle_rects.is_empty() {
                    if let Some(tube) = fts.pair_tube(p) {
                        if tube_hits_obstacle(&tube, obstacle_rects, grid) {
                            continue;
                        }
                    }
                }
                match pending[state] {
                    None => {
                        pending[state] = Some(input);
                        next.push(state);
                    }
                    Some(prev) if input < prev => pending[state] = Some(input),
                    Some(_) => {}
                }
            }
        }
        depth += 1;
        next.sort_unstable();
        for &s in &next {
            winning[s] = true;
            value[s] = depth;
            choice[s] = pending[s].take();
        }
        level = next;
    }
    StageController {
        goal: goal.to_vec(),
        winning,
        value,
        choice,
    }
}

/// Maximal winning set of the reach-avoid game for one target stage.
///
/// `grid` is needed only to handle periodic dimensions when checking flow
/// tubes against obstacles.
pub fn solve_reach_avoid(
    fts: &FiniteTransitionSystem,
    labels: &LabeledCells,
    stage: usize,
    grid: Option<&UniformGrid>,
) -> Result<StageController, SynthesisError> {
    if stage >= labels.num_stages() {
        return Err(SynthesisError::NoSuchStage {
            stage,
            stages: labels.num_stages(),
        });
    }
    let preds = Predecessors::new(fts);
    let ctrl = solve_goal(
        fts,
        &preds,
        &labels.target_cells[stage],
        &labels.obstacle_cells,
        &labels.obstacle_rects,
        grid,
    );
    warn_if_initial_lost(&ctrl, labels, stage);
    Ok(ctrl)
}

fn warn_if_initial_lost(ctrl: &StageController, labels: &LabeledCells, stage: usize) {
    if !labels.initial_cells.is_empty() && !labels.initial_cells.iter().any(|&c| ctrl.winning[c]) {
        warn!("stage {stage}: no initial cell is winning");
    }
}

/// Solves every stage, last to first. Stage `i` aims at its own target
/// restricted to cells winning for stage `i + 1`.
pub fn solve_sequential(
    fts: &FiniteTransitionSystem,
    labels: &LabeledCells,
    inputs: &[Vec<f64>],
    grid: Option<&UniformGrid>,
) -> Result<SymbolicController, SynthesisError> {
    let k = labels.num_stages();
    if k == 0 {
        return Err(SynthesisError::NoSuchStage { stage: 0, stages: 0 });
    }
    let preds = Predecessors::new(fts);
    let mut stages: Vec<StageController> = Vec::with_capacity(k);
    for stage in (0..k).rev() {
        let goal: Vec<bool> = match stages.last() {
            None => labels.target_cells[stage].clone(),
            Some(next) => labels.target_cells[stage]
                .iter()
                .zip(&next.winning)
                .map(|(t, w)| *t && *w)
                .collect(),
        };
        let ctrl = solve_goal(fts, &preds, &goal, &labels.obstacle_cells, &labels.obstacle_rects, grid);
        if stage == 0 {
            warn_if_initial_lost(&ctrl, labels, stage);
        }
        stages.push(ctrl);
    }
    stages.reverse();
    Ok(SymbolicController {
        inputs: inputs.to_vec(),
        stages,
    })
}

/// What the concrete controller asks for at a state.
#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Apply(Vec<f64>),
    /// The final stage's goal has been entered.
    Done,
}

/// Feedback concretization: quantize the state, look up the stage's input.
#[derive(Debug, Clone)]
pub struct ConcreteController<'a> {
    ctrl: &'a SymbolicController,
    grid: &'a UniformGrid,
    stage: usize,
}

impl<'a> ConcreteController<'a> {
    pub fn new(ctrl: &'a SymbolicController, grid: &'a UniformGrid) -> Self {
        Self { ctrl, grid, stage: 0 }
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn grid(&self) -> &UniformGrid {
        self.grid
    }

    pub fn symbolic(&self) -> &SymbolicController {
        self.ctrl
    }

    /// Input for state `x`. Entering the current stage's goal cell advances
    /// the stage first; leaving the winning set is an error and the caller
    /// must stop.
    pub fn concretize(&mut self, x: &[f64]) -> Result<Command, SynthesisError> {
        let cell = self
            .grid
            .cell_of(x)
            .map_err(|_| SynthesisError::OutsideWinningSet(x.to_vec()))?
            .flat_id;
        while self.stage < self.ctrl.stages.len() && self.ctrl.stages[self.stage].goal[cell] {
            self.stage += 1;
        }
        let Some(stage) = self.ctrl.stages.get(self.stage) else {
            return Ok(Command::Done);
        };
        match stage.choice[cell] {
            Some(u) if stage.winning[cell] => Ok(Command::Apply(self.ctrl.inputs[u as usize].clone())),
            _ => Err(SynthesisError::OutsideWinningSet(x.to_vec())),
        }
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// Text export: `#` header with grid and input parameters, then one line
/// per winning cell per stage: `flat_id stage value u_1 .. u_m`; goal
/// cells carry `-` for the input.
pub fn write_controller_table(ctrl: &SymbolicController, grid: &UniformGrid) -> String {
    let mut s = String::new();
    let m = ctrl.inputs.first().map_or(0, Vec::len);
    let _ = writeln!(s, "# gridsynth controller v1");
    let _ = writeln!(s, "# dims {}", grid.dim());
    let _ = writeln!(s, "# lower {}", join(&grid.bounds().lower));
    let _ = writeln!(s, "# upper {}", join(&grid.bounds().upper));
    let _ = writeln!(s, "# eta {}", join(grid.eta()));
    let periodic: Vec<&str> = grid.periodic().iter().map(|p| if *p { "1" } else { "0" }).collect();
    let _ = writeln!(s, "# periodic {}", periodic.join(" "));
    let _ = writeln!(s, "# input_dims {m}");
    let _ = writeln!(s, "# inputs {}", ctrl.inputs.len());
    for (i, u) in ctrl.inputs.iter().enumerate() {
        let _ = writeln!(s, "# input {i} {}", join(u));
    }
    let _ = writeln!(s, "# stages {}", ctrl.stages.len());
    let _ = writeln!(s, "# columns flat_id stage value input");
    for (k, stage) in ctrl.stages.iter().enumerate() {
        for cell in 0..stage.winning.len() {
            if !stage.winning[cell] {
                continue;
            }
            match stage.choice[cell] {
                Some(u) => {
                    let _ = writeln!(s, "{cell} {k} {} {}", stage.value[cell], join(&ctrl.inputs[u as usize]));
                }
                None => {
                    let _ = writeln!(s, "{cell} {k} 0 -");
                }
            }
        }
    }
    s
}

/// Parses a table written by [`write_controller_table`], returning the
/// grid it describes and the controller.
pub fn read_controller_table(text: &str) -> Result<(UniformGrid, SymbolicController), SynthesisError> {
    let bad = |msg: String| SynthesisError::Table(msg);
    let mut lower = None;
    let mut upper = None;
    let mut eta = None;
    let mut periodic = None;
    let mut num_inputs = None;
    let mut num_stages = None;
    let mut inputs: Vec<Vec<f64>> = Vec::new();
    let mut rows = Vec::new();
    let floats = |it: &[&str]| -> Result<Vec<f64>, SynthesisError> {
        it.iter()
            .map(|t| t.parse::<f64>().map_err(|e| bad(format!("`{t}`: {e}"))))
            .collect()
    };
    for (lineno, line) in text.lines().enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks[0] == "#" {
            match toks.get(1).copied() {
                Some("lower") => lower = Some(floats(&toks[2..])?),
                Some("upper") => upper = Some(floats(&toks[2..])?),
                Some("eta") => eta = Some(floats(&toks[2..])?),
                Some("periodic") => periodic = Some(toks[2..].iter().map(|t| *t == "1").collect::<Vec<_>>()),
                Some("inputs") => num_inputs = toks.get(2).and_then(|t| t.parse::<usize>().ok()),
                Some("stages") => num_stages = toks.get(2).and_then(|t| t.parse::<usize>().ok()),
                Some("input") => {
                    let id: usize = toks
                        .get(2)
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| bad(format!("line {}: bad input id", lineno + 1)))?;
                    if id != inputs.len() {
                        return Err(bad(format!("line {}: inputs out of order", lineno + 1)));
                    }
                    inputs.push(floats(&toks[3..])?);
                }
                _ => {}
            }
            continue;
        }
        rows.push((lineno + 1, toks));
    }
    let (Some(lower), Some(upper), Some(eta), Some(periodic), Some(num_inputs), Some(num_stages)) =
        (lower, upper, eta, periodic, num_inputs, num_stages)
    else {
        return Err(bad("incomplete header".into()));
    };
    if inputs.len() != num_inputs {
        return Err(bad(format!("expected {num_inputs} inputs, found {}", inputs.len())));
    }
    let grid = UniformGrid::new(HyperRect::new(lower, upper)?, eta, periodic)?;
    let n = grid.num_cells();
    let mut stages = vec![
        StageController {
            goal: vec![false; n],
            winning: vec![false; n],
            value: vec![u32::MAX; n],
            choice: vec![None; n],
        };
        num_stages
    ];
    for (lineno, toks) in rows {
        if toks.len() < 4 {
            return Err(bad(format!("line {lineno}: too few columns")));
        }
        let parse_usize = |t: &str| t.parse::<usize>().map_err(|e| bad(format!("line {lineno}: {e}")));
        let cell = parse_usize(toks[0])?;
        let k = parse_usize(toks[1])?;
        let value = parse_usize(toks[2])? as u32;
        if cell >= n || k >= num_stages {
            return Err(bad(format!("line {lineno}: cell or stage out of range")));
        }
        let st = &mut stages[k];
        st.winning[cell] = true;
        st.value[cell] = value;
        if toks[3] == "-" {
            st.goal[cell] = true;
        } else {
            let u = floats(&toks[3..])?;
            let id = inputs
                .iter()
                .position(|v| *v == u)
                .ok_or_else(|| bad(format!("line {lineno}: unknown input")))?;
            st.choice[cell] = Some(id as u32);
        }
    }
    Ok((grid, SymbolicController { inputs, stages }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize, targets: Vec<Vec<usize>>, obstacles: &[usize]) -> LabeledCells {
        let mut obstacle_cells = vec![false; n];
        for &o in obstacles {
            obstacle_cells[o] = true;
        }
        LabeledCells {
            obstacle_cells,
            target_cells: targets
                .into_iter()
                .map(|t| {
                    let mut m = vec![false; n];
                    for s in t {
                        m[s] = true;
                    }
                    m
                })
                .collect(),
            initial_cells: vec![0],
            obstacle_rects: Vec::new(),
        }
    }

    #[test]
    fn chain_values() {
        let fts = FiniteTransitionSystem::from_lists(3, 1, vec![vec![1], vec![2], vec![2]], vec![false; 3]).unwrap();
        let c = solve_reach_avoid(&fts, &labels(3, vec![vec![2]], &[]), 0, None).unwrap();
        assert_eq!(c.winning, vec![true, true, true]);
        assert_eq!(c.value, vec![2, 1, 0]);
        assert_eq!(c.choice, vec![Some(0), Some(0), None]);
    }

    #[test]
    fn target_wins_without_transitions() {
        let fts = FiniteTransitionSystem::from_lists(2, 1, vec![vec![], vec![]], vec![false; 2]).unwrap();
        let c = solve_reach_avoid(&fts, &labels(2, vec![vec![1]], &[]), 0, None).unwrap();
        assert_eq!(c.winning, vec![false, true]);
        assert_eq!(c.value[1], 0);
    }

    #[test]
    fn nondeterminism_is_adversarial() {
        // 0 --u0--> {1, 2}; 2 is an obstacle; 0 --u1--> {1}
        let fts = FiniteTransitionSystem::from_lists(
            3,
            2,
            vec![vec![1, 2], vec![], vec![], vec![1], vec![], vec![]],
            vec![false; 6],
        )
        .unwrap();
        let c = solve_reach_avoid(&fts, &labels(3, vec![vec![1]], &[2]), 0, None).unwrap();
        assert!(c.winning[0]);
        assert_eq!(c.choice[0], Some(1));
        assert!(!c.winning[2]);
    }

    #[test]
    fn smallest_input_breaks_ties() {
        let fts = FiniteTransitionSystem::from_lists(2, 3, vec![vec![], vec![], vec![1], vec![], vec![1], vec![]], vec![false; 6])
            .unwrap();
        let c = solve_reach_avoid(&fts, &labels(2, vec![vec![1]], &[]), 0, None).unwrap();
        assert_eq!(c.choice[0], Some(1));
    }

    #[test]
    fn missing_stage() {
        let fts = FiniteTransitionSystem::from_lists(1, 1, vec![vec![]], vec![false]).unwrap();
        assert!(matches!(
            solve_reach_avoid(&fts, &labels(1, vec![vec![0]], &[]), 1, None),
            Err(SynthesisError::NoSuchStage { .. })
        ));
    }

    #[test]
    fn unreachable_second_stage_loses() {
        // 0 -> 1 -> 2 (T0) ; 3 (T1) is unreachable from 2 ; 4 isolated
        let fts = FiniteTransitionSystem::from_lists(
            5,
            1,
            vec![vec![1], vec![2], vec![2], vec![3], vec![4]],
            vec![false; 5],
        )
        .unwrap();
        let l = labels(5, vec![vec![2], vec![3]], &[]);
        let c = solve_sequential(&fts, &l, &[vec![0.0]], None).unwrap();
        assert!(!c.initial_winning(0));
        assert!(c.stages[1].winning[3]);
        // the first stage's goal shrinks to nothing
        assert!(c.stages[0].goal.iter().all(|g| !g));
    }

    #[test]
    fn single_stage_sequential_matches_direct() {
        let fts = FiniteTransitionSystem::from_lists(3, 1, vec![vec![1], vec![2], vec![2]], vec![false; 3]).unwrap();
        let l = labels(3, vec![vec![2]], &[]);
        let seq = solve_sequential(&fts, &l, &[vec![0.0]], None).unwrap();
        assert_eq!(seq.stages[0], solve_reach_avoid(&fts, &l, 0, None).unwrap());
    }

    #[test]
    fn table_round_trip() {
        let grid = UniformGrid::new(HyperRect::new(vec![0.0], vec![3.0]).unwrap(), vec![1.0], vec![false]).unwrap();
        let fts = FiniteTransitionSystem::from_lists(3, 1, vec![vec![1], vec![2], vec![2]], vec![false; 3]).unwrap();
        let l = labels(3, vec![vec![2]], &[]);
        let ctrl = solve_sequential(&fts, &l, &[vec![0.25]], Some(&grid)).unwrap();
        let text = write_controller_table(&ctrl, &grid);
        let (g2, c2) = read_controller_table(&text).unwrap();
        assert_eq!(g2, grid);
        assert_eq!(c2, ctrl);
    }

    #[test]
    fn concretize_in_same_cell_is_constant() {
        let grid = UniformGrid::new(HyperRect::new(vec![0.0], vec![3.0]).unwrap(), vec![1.0], vec![false]).unwrap();
        let fts = FiniteTransitionSystem::from_lists(3, 2, vec![vec![], vec![2], vec![], vec![1], vec![2], vec![]], vec![false; 6])
            .unwrap();
        let l = labels(3, vec![vec![2]], &[]);
        let ctrl = solve_sequential(&fts, &l, &[vec![-1.0], vec![1.0]], Some(&grid)).unwrap();
        let mut cc = ConcreteController::new(&ctrl, &grid);
        assert_eq!(cc.concretize(&[0.5]).unwrap(), Command::Apply(vec![1.0]));
        assert_eq!(cc.concretize(&[0.1]).unwrap(), cc.concretize(&[0.9]).unwrap());
        assert_eq!(cc.concretize(&[2.5]).unwrap(), Command::Done);
    }

    #[test]
    fn concretize_outside_winning_set() {
        let grid = UniformGrid::new(HyperRect::new(vec![0.0], vec![3.0]).unwrap(), vec![1.0], vec![false]).unwrap();
        let fts = FiniteTransitionSystem::from_lists(3, 1, vec![vec![], vec![2], vec![]], vec![false; 3]).unwrap();
        let l = labels(3, vec![vec![2]], &[]);
        let ctrl = solve_sequential(&fts, &l, &[vec![1.0]], Some(&grid)).unwrap();
        let mut cc = ConcreteController::new(&ctrl, &grid);
        assert!(matches!(cc.concretize(&[0.5]), Err(SynthesisError::OutsideWinningSet(_))));
    }
}
