//! The eight acceptance criteria, each returning a pass/fail verdict with
//! a one-line detail. Tolerances and limits are the constants below.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use gridsynth_agents::client::MockClient;
use gridsynth_agents::{pipeline_run, AgentConfig, Outcome, DEFAULT_K_MAX};
use gridsynth_bench::{load_cases, run_benchmark, BenchCase, OutcomeCategory, Strategy};
use gridsynth_core::abstraction::{FiniteTransitionSystem, LabeledCells};
use gridsynth_core::dynamics::bicycle_f;
use gridsynth_core::geometry::{rect_from_encoding, HyperRect, RectEncoding, UniformGrid};
use gridsynth_core::simulator::{check_reach_avoid, render_svg, simulate_closed_loop, SimOptions, Termination, WinningOverlay};
use gridsynth_core::spec::{parse_spec, serialize_spec, ProblemSpec, DEFAULT_SUBSTEPS};
use gridsynth_core::synthesis::{solve_reach_avoid, write_controller_table, ConcreteController};
use gridsynth_core::{synthesize, Synthesis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Closed-loop runs from random winning initial states.
pub const CLOSED_LOOP_RUNS: usize = 100;
/// Sampling periods before a run is cut off.
pub const CLOSED_LOOP_MAX_STEPS: usize = 500;
pub const CLOSED_LOOP_TIME_LIMIT: Duration = Duration::from_secs(300);
/// Slack on `t_f <= value * tau` for the float sum of sample times.
pub const ARRIVAL_TIME_TOL: f64 = 1e-9;

pub const RANDOM_GAMES: usize = 100;
pub const GAME_MAX_STATES: usize = 200;
pub const GAME_MAX_INPUTS: usize = 5;
pub const GAME_TIME_LIMIT: Duration = Duration::from_secs(10);

pub const SOUNDNESS_PAIRS: usize = 100;
pub const SOUNDNESS_SAMPLES: usize = 1000;
/// Substeps of the reference integrator over one sampling period.
pub const REFERENCE_SUBSTEPS: usize = 100;

pub const GEOMETRY_DRAWS: usize = 10_000;
/// Slack on the eta/2 distance bound for rounding in cell centers.
pub const CENTER_TOL: f64 = 1e-12;
/// Heading draws this close to a cell face are skipped in the wrap check;
/// `x + 2 pi k` is rounded before it is wrapped.
pub const FACE_GUARD: f64 = 1e-13;

pub const DYNAMICS_REL_TOL: f64 = 1e-12;
pub const DYNAMICS_DRAWS: usize = 1000;

const BICYCLE_REFERENCE: &str = include_str!("../../core/tests/data/bicycle_f_reference.csv");

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{mark} criterion {}: {}: {}", self.id, self.name, self.detail)
    }
}

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($arg)+));
        }
    };
}

pub fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixture_path() -> PathBuf {
    workspace_root().join("cases/01_desk_wall/spec.json")
}

fn load_fixture() -> Result<ProblemSpec, String> {
    let path = fixture_path();
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_spec(&text).map_err(|e| e.to_string())
}

/// The desk fixture solved once and shared by the criteria that need it.
fn desk() -> Result<&'static (Synthesis, Duration), String> {
    static CELL: OnceLock<Result<(Synthesis, Duration), String>> = OnceLock::new();
    CELL.get_or_init(|| {
        let spec = load_fixture()?;
        let start = Instant::now();
        let s = synthesize(&spec).map_err(|e| e.to_string())?;
        Ok((s, start.elapsed()))
    })
    .as_ref()
    .map_err(Clone::clone)
}

fn random_point_in_cell(rng: &mut ChaCha8Rng, grid: &UniformGrid, cell: usize) -> Vec<f64> {
    let c = grid.center_of_flat(cell);
    grid.half_eta().iter().zip(&c).map(|(h, m)| m + rng.gen_range(-h..*h)).collect()
}

/// Closed-loop certification on the desk bicycle problem.
pub fn criterion_1() -> Check {
    let start = Instant::now();
    let (s, synth_time) = desk()?;
    let starts: Vec<usize> = s.labels.initial_cells.iter().copied().filter(|&c| s.controller.initial_winning(c)).collect();
    ensure!(!starts.is_empty(), "no winning initial cell");
    let obstacles = s.spec.obstacle_rects().map_err(|e| e.to_string())?;
    let opts = SimOptions {
        tau: s.spec.tau,
        substeps: DEFAULT_SUBSTEPS,
        max_steps: CLOSED_LOOP_MAX_STEPS,
        obstacles: obstacles.clone(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut satisfied = 0;
    let mut contacts = 0;
    let mut dense_states = 0;
    let mut failures = Vec::new();
    for run in 0..CLOSED_LOOP_RUNS {
        let cell = starts[rng.gen_range(0..starts.len())];
        let x0 = random_point_in_cell(&mut rng, &s.grid, cell);
        let value = s.controller.stages[0].value[cell];
        let traj = simulate_closed_loop(s.field.as_ref(), &mut ConcreteController::new(&s.controller, &s.grid), &x0, &opts);
        let verdict = check_reach_avoid(&traj, &s.spec).map_err(|e| e.to_string())?;
        // contacts are counted over the whole run, independently of the checker
        let touching = traj.dense.iter().filter(|(_, x)| obstacles.iter().any(|o| o.contains_point(x))).count();
        contacts += touching;
        dense_states += traj.dense.len();
        let in_time = matches!(traj.termination, Termination::ReachedTarget(t) if t <= value as f64 * s.spec.tau + ARRIVAL_TIME_TOL);
        if verdict.satisfied && touching == 0 && in_time {
            satisfied += 1;
        } else if failures.len() < 3 {
            failures.push(format!("run {run} from {x0:?}: {:?}", traj.termination));
        }
    }
    let elapsed = start.elapsed();
    ensure!(
        satisfied == CLOSED_LOOP_RUNS && contacts == 0,
        "{satisfied}/{CLOSED_LOOP_RUNS} runs certified, {contacts} obstacle contacts; {}",
        failures.join("; ")
    );
    ensure!(elapsed <= CLOSED_LOOP_TIME_LIMIT, "took {:.1} s", elapsed.as_secs_f64());
    Ok(format!(
        "{satisfied}/{CLOSED_LOOP_RUNS} runs satisfy reach-avoid, 0 contacts over {dense_states} substep states, synthesis {:.1} s, total {:.1} s",
        synth_time.as_secs_f64(),
        elapsed.as_secs_f64()
    ))
}

struct Game {
    n: usize,
    m: usize,
    /// Successor lists indexed `[state][input]`.
    edges: Vec<Vec<Vec<u32>>>,
    target: Vec<bool>,
    obstacle: Vec<bool>,
}

fn random_game(rng: &mut ChaCha8Rng) -> Game {
    let n = rng.gen_range(2..=GAME_MAX_STATES);
    let m = rng.gen_range(1..=GAME_MAX_INPUTS);
    let p_edge = (rng.gen_range(0.5..2.0) / n as f64).min(1.0);
    let edges = (0..n)
        .map(|_| {
            (0..m)
                .map(|_| {
                    if rng.gen_bool(0.1) {
                        return Vec::new();
                    }
                    let mut succ: Vec<u32> = (0..n as u32).filter(|_| rng.gen_bool(p_edge)).collect();
                    if succ.is_empty() {
                        succ.push(rng.gen_range(0..n as u32));
                    }
                    succ
                })
                .collect()
        })
        .collect();
    let target: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.08)).collect();
    let obstacle = (0..n).map(|s| !target[s] && rng.gen_bool(0.1)).collect();
    Game { n, m, edges, target, obstacle }
}

/// Predecessor iteration: a state joins at round k when some input has a
/// non-empty successor set inside the previous round's winners.
fn brute_force_values(g: &Game) -> Vec<Option<u32>> {
    let mut value: Vec<Option<u32>> = g.target.iter().map(|&t| t.then_some(0)).collect();
    for k in 1.. {
        let prev = value.clone();
        let mut grew = false;
        for s in 0..g.n {
            if prev[s].is_some() || g.obstacle[s] {
                continue;
            }
            if g.edges[s].iter().any(|d| !d.is_empty() && d.iter().all(|&t| prev[t as usize].is_some())) {
                value[s] = Some(k);
                grew = true;
            }
        }
        if !grew {
            break;
        }
    }
    value
}

/// Solver against brute-force predecessor iteration on random games.
pub fn criterion_2() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut interior = 0;
    for trial in 0..RANDOM_GAMES {
        let g = random_game(&mut rng);
        let mut lists = vec![Vec::new(); g.n * g.m];
        let mut blocked = vec![false; g.n * g.m];
        for s in 0..g.n {
            for u in 0..g.m {
                lists[u * g.n + s] = g.edges[s][u].clone();
                blocked[u * g.n + s] = g.edges[s][u].is_empty();
            }
        }
        let fts = FiniteTransitionSystem::from_lists(g.n, g.m, lists, blocked).map_err(|e| e.to_string())?;
        let labels = LabeledCells {
            obstacle_cells: g.obstacle.clone(),
            target_cells: vec![g.target.clone()],
            initial_cells: Vec::new(),
            obstacle_rects: Vec::new(),
        };
        let ctrl = solve_reach_avoid(&fts, &labels, 0, None).map_err(|e| e.to_string())?;
        let expected = brute_force_values(&g);
        let got: Vec<Option<u32>> = (0..g.n).map(|s| ctrl.winning[s].then_some(ctrl.value[s])).collect();
        ensure!(got == expected, "game {trial} ({} states, {} inputs): winning sets or values differ", g.n, g.m);
        interior += expected.iter().filter(|v| v.is_some_and(|k| k > 0)).count();
    }
    let elapsed = start.elapsed();
    ensure!(elapsed <= GAME_TIME_LIMIT, "took {:.2} s", elapsed.as_secs_f64());
    ensure!(interior > 0, "no game had a winning state outside its target");
    Ok(format!(
        "{RANDOM_GAMES} games match exactly ({interior} winning non-target states), {:.2} s",
        elapsed.as_secs_f64()
    ))
}

/// Classic RK4 with plain summation, independent of the library's integrator.
fn reference_flow(x0: &[f64], u: &[f64], tau: f64, substeps: usize) -> [f64; 3] {
    let h = tau / substeps as f64;
    let mut x = [x0[0], x0[1], x0[2]];
    let step = |x: &[f64; 3], k: &[f64; 3], s: f64| [x[0] + s * k[0], x[1] + s * k[1], x[2] + s * k[2]];
    for _ in 0..substeps {
        let k1 = bicycle_f(&x, u);
        let k2 = bicycle_f(&step(&x, &k1, h / 2.0), u);
        let k3 = bicycle_f(&step(&x, &k2, h / 2.0), u);
        let k4 = bicycle_f(&step(&x, &k3, h), u);
        for i in 0..3 {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    x
}

/// Sampled concrete successors land in the abstract successor set.
pub fn criterion_3() -> Check {
    let (s, _) = desk()?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut pairs = 0;
    let mut misses = 0;
    let mut first_miss = None;
    while pairs < SOUNDNESS_PAIRS {
        let cell = rng.gen_range(0..s.grid.num_cells());
        let input = rng.gen_range(0..s.inputs.len());
        if s.fts.is_blocked(cell, input) {
            continue;
        }
        pairs += 1;
        let delta = s.fts.successors(cell, input);
        for _ in 0..SOUNDNESS_SAMPLES {
            let x0 = random_point_in_cell(&mut rng, &s.grid, cell);
            let end = reference_flow(&x0, &s.inputs[input], s.spec.tau, REFERENCE_SUBSTEPS);
            let hit = s.grid.cell_of(&end).is_ok_and(|c| delta.binary_search(&(c.flat_id as u32)).is_ok());
            if !hit {
                misses += 1;
                first_miss.get_or_insert((cell, input, end));
            }
        }
    }
    ensure!(misses == 0, "{misses} successors outside delta, first {first_miss:?}");
    Ok(format!(
        "0 of {} sampled successors outside delta over {SOUNDNESS_PAIRS} pairs",
        SOUNDNESS_PAIRS * SOUNDNESS_SAMPLES
    ))
}

fn random_grid(rng: &mut ChaCha8Rng) -> UniformGrid {
    const ETAS: [f64; 6] = [0.1, 0.2, 0.25, 0.3, 0.5, 1.0];
    let counts = [rng.gen_range(1..25usize), rng.gen_range(1..25usize)];
    let eta = [ETAS[rng.gen_range(0..6)], ETAS[rng.gen_range(0..6)]];
    let lower = [rng.gen_range(-5..5) as f64 * 0.5, rng.gen_range(-5..5) as f64 * 0.5];
    let upper = [lower[0] + counts[0] as f64 * eta[0], lower[1] + counts[1] as f64 * eta[1]];
    let bounds = HyperRect::new(lower.to_vec(), upper.to_vec()).expect("ordered bounds");
    UniformGrid::new(bounds, eta.to_vec(), vec![false, false]).expect("divisible widths")
}

fn random_point(rng: &mut ChaCha8Rng, grid: &UniformGrid) -> Vec<f64> {
    let b = grid.bounds();
    (0..2).map(|d| rng.gen_range(b.lower[d]..=b.upper[d])).collect()
}

/// Quantization soundness, partition, encoding invariance and periodic wrap.
pub fn criterion_4() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for draw in 0..GEOMETRY_DRAWS {
        let grid = random_grid(&mut rng);
        let x = random_point(&mut rng, &grid);
        let c = grid.cell_of(&x).map_err(|e| format!("draw {draw}: {e}"))?;
        let center = grid.center_of(&c).map_err(|e| e.to_string())?;
        for d in 0..2 {
            ensure!(
                (x[d] - center[d]).abs() <= grid.eta()[d] / 2.0 + CENTER_TOL,
                "soundness draw {draw}: {x:?} is {} from its center",
                (x[d] - center[d]).abs()
            );
        }
    }
    for draw in 0..GEOMETRY_DRAWS {
        let grid = random_grid(&mut rng);
        let x = random_point(&mut rng, &grid);
        let owner = grid.cell_of(&x).map_err(|e| e.to_string())?.flat_id;
        let owners: Vec<usize> = (0..grid.num_cells())
            .filter(|&flat| {
                let m = grid.unflatten(flat);
                (0..2).all(|d| {
                    let (lo, hi) = (grid.cell_lower(d, m[d]), grid.cell_upper(d, m[d]));
                    let last = m[d] + 1 == grid.counts()[d];
                    lo <= x[d] && (x[d] < hi || (last && x[d] == hi))
                })
            })
            .collect();
        ensure!(owners == [owner], "partition draw {draw}: {x:?} owned by {owners:?}, cell_of says {owner}");
    }
    for draw in 0..GEOMETRY_DRAWS {
        // dyadic coordinates keep center +- side/2 exact
        let x0 = rng.gen_range(-256..256) as f64 / 64.0;
        let y0 = rng.gen_range(-256..256) as f64 / 64.0;
        let x1 = x0 + rng.gen_range(0..256) as f64 / 64.0;
        let y1 = y0 + rng.gen_range(0..256) as f64 / 64.0;
        let mut vertices = [[x0, y0], [x1, y0], [x1, y1], [x0, y1]];
        vertices.rotate_left(rng.gen_range(0..4));
        let encodings = [
            RectEncoding::FourVertices { vertices },
            RectEncoding::Diagonal { a: vec![x1, y0], b: vec![x0, y1] },
            RectEncoding::CenterSides {
                center: vec![(x0 + x1) / 2.0, (y0 + y1) / 2.0],
                sides: vec![x1 - x0, y1 - y0],
            },
        ];
        for e in &encodings {
            let r = rect_from_encoding(e).map_err(|err| format!("encoding draw {draw}: {err}"))?;
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            ensure!(
                bits(&r.lower) == bits(&[x0, y0]) && bits(&r.upper) == bits(&[x1, y1]),
                "encoding draw {draw}: {e:?} gives {r:?}"
            );
        }
    }
    let exact = UniformGrid::new(HyperRect::new(vec![0.0, 0.0], vec![4.0, 2.0]).expect("box"), vec![0.25, 0.5], vec![true, false]).expect("grid");
    let heading = UniformGrid::new(HyperRect::new(vec![-PI], vec![PI]).expect("box"), vec![0.2], vec![true]).expect("grid");
    let mut guarded = 0;
    for draw in 0..GEOMETRY_DRAWS {
        let (x, y, k) = (rng.gen_range(0.0..4.0), rng.gen_range(0.0..2.0), rng.gen_range(-5..=5) as f64);
        let base = exact.cell_of(&[x, y]).map_err(|e| e.to_string())?;
        let shifted = exact.cell_of(&[x + 4.0 * k, y]).map_err(|e| e.to_string())?;
        ensure!(base == shifted, "wrap draw {draw}: {x} and {x} + 4*{k} fall in different cells");
        let t = rng.gen_range(-PI..PI);
        let k = rng.gen_range(-3..=3) as f64;
        let base = heading.cell_of(&[t]).map_err(|e| e.to_string())?;
        let i = base.multi_index[0];
        if (t - heading.cell_lower(0, i)).min(heading.cell_upper(0, i) - t) <= FACE_GUARD {
            guarded += 1;
            continue;
        }
        let shifted = heading.cell_of(&[t + 2.0 * PI * k]).map_err(|e| e.to_string())?;
        ensure!(base == shifted, "heading wrap draw {draw}: {t} + 2 pi * {k} changes cell");
    }
    Ok(format!(
        "{GEOMETRY_DRAWS} draws each for soundness, partition, encoding invariance and wrap ({guarded} heading draws within {FACE_GUARD:e} of a face skipped)"
    ))
}

fn feedback_case() -> Result<(String, ProblemSpec), String> {
    let dir = workspace_root().join("cases/01_desk_wall");
    let nl = std::fs::read_to_string(dir.join("paraphrase_1.txt")).map_err(|e| e.to_string())?;
    Ok((nl.trim().to_string(), load_fixture()?))
}

fn fenced(spec: &ProblemSpec) -> String {
    format!("```json\n{}\n```", serialize_spec(spec))
}

/// Accept at round 1, accept at round 2, block at k_max = 2.
pub fn criterion_5() -> Check {
    let (nl, truth) = feedback_case()?;
    let config = AgentConfig::default();
    ensure!(config.k_max == 2 && DEFAULT_K_MAX == 2, "k_max is {}", config.k_max);
    let mut wrong = truth.clone();
    wrong.obstacles.truncate(1);
    let (good, bad) = (fenced(&truth), fenced(&wrong));
    let fb1 = "Obstacle 2 (the block near the top right) is missing.";
    let fb2 = "Obstacle 2 is still missing.";

    let mut client = MockClient::from_responses([good.as_str(), "True"]);
    let t = pipeline_run(&mut client, &config, &nl).map_err(|e| e.to_string())?;
    ensure!(t.iterations.len() == 1 && t.accepted() == Some(&truth), "accept@1: {:?}", t.outcome);
    ensure!(t.iterations[0].code_agent_prompt == config.prompts.code_prompt(&nl), "accept@1: first prompt differs");

    let mut client = MockClient::from_responses([bad.as_str(), fb1, good.as_str(), "True"]);
    let t = pipeline_run(&mut client, &config, &nl).map_err(|e| e.to_string())?;
    ensure!(t.iterations.len() == 2 && t.accepted() == Some(&truth), "accept@2: {:?}", t.outcome);
    ensure!(t.iterations[0].spec.as_ref() == Some(&wrong), "accept@2: first draft not recorded");
    ensure!(
        t.iterations[1].code_agent_prompt == config.prompts.retry_prompt(&nl, fb1),
        "accept@2: feedback not carried into the second prompt"
    );

    // two spare replies: the loop must stop after k_max rounds regardless
    let mut client = MockClient::from_responses([bad.as_str(), fb1, bad.as_str(), fb2, good.as_str(), "True"]);
    let t = pipeline_run(&mut client, &config, &nl).map_err(|e| e.to_string())?;
    ensure!(t.iterations.len() == 2, "block@2: {} rounds", t.iterations.len());
    ensure!(client.remaining() == 2, "block@2: {} replies left, expected 2", client.remaining());
    ensure!(t.outcome == Some(Outcome::BlockedWithFeedback(fb2.to_string())), "block@2: {:?}", t.outcome);
    ensure!(t.iterations[1].code_agent_prompt.contains(fb1), "block@2: round-1 feedback not forwarded");
    Ok("accept@1, accept@2 with feedback in the retry prompt, block@2 forwarding the final feedback".to_string())
}

fn benchmark_cases() -> Result<Vec<BenchCase>, String> {
    load_cases(&workspace_root().join("cases")).map_err(|e| e.to_string())
}

fn scripted_report(cases: &[BenchCase], strategy: Strategy, script: &str) -> Result<gridsynth_bench::BenchReport, String> {
    let path = workspace_root().join("scripts").join(script);
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let script = gridsynth_agents::client::MockScript::parse(&text).map_err(|e| e.to_string())?;
    let mut client = MockClient::new(&script);
    Ok(run_benchmark(cases, strategy, &mut client, &AgentConfig::default()))
}

/// (strategy, script, correct of 60, robust, solved) from the reported bar chart.
pub const HEADLINE: [(Strategy, &str, usize, usize, usize); 3] = [
    (Strategy::DirectLlm, "direct_headline.txt", 7, 0, 4),
    (Strategy::CodeAgentOnly, "code_agent_headline.txt", 34, 9, 14),
    (Strategy::FullPipeline, "pipeline_headline.txt", 39, 10, 16),
];

/// Scripted runs reproduce the headline counts through the real harness.
pub fn criterion_6() -> Check {
    let cases = benchmark_cases()?;
    ensure!(cases.len() == 20, "{} cases", cases.len());
    let mut parts = Vec::new();
    for (strategy, script, correct, robust, solved) in HEADLINE {
        let r = scripted_report(&cases, strategy, script)?;
        let s = r.summary();
        let total: usize = OutcomeCategory::ALL.iter().map(|&c| r.count(c)).sum();
        ensure!(total == 60 && s.solved + s.incorrect == 20, "{strategy}: partition broken");
        ensure!(
            (s.correct, s.robust, s.solved) == (correct, robust, solved),
            "{strategy}: got {}/{}/{}, expected {correct}/{robust}/{solved}",
            s.correct,
            s.robust,
            s.solved
        );
        parts.push(format!("{strategy} {}/60 robust {}/{}", s.correct, s.robust, s.solved));
    }
    Ok(parts.join(", "))
}

fn rel_err(got: &[f64], exact: &[f64]) -> f64 {
    let scale = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let err = got.iter().zip(exact).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if scale == 0.0 {
        err
    } else {
        err / scale
    }
}

/// Bicycle field against 40-digit reference values and the slip identities.
pub fn criterion_7() -> Check {
    let mut rows = 0;
    let mut worst = 0.0f64;
    for line in BICYCLE_REFERENCE.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let v: Vec<f64> = line.split(',').map(|s| s.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
        ensure!(v.len() == 8, "reference row {rows} has {} fields", v.len());
        let got = bicycle_f(&v[..3], &v[3..5]);
        worst = worst.max(rel_err(&got, &v[5..8]));
        rows += 1;
    }
    ensure!(rows == DYNAMICS_DRAWS, "{rows} reference rows");
    ensure!(worst <= DYNAMICS_REL_TOL, "worst relative error {worst:e}");
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_identity = 0.0f64;
    for _ in 0..DYNAMICS_DRAWS {
        let u = [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)];
        let x = [rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0), 0.0];
        let f = bicycle_f(&x, &u);
        // at zero heading: f1 = u1 and f2 = tan(u2)/2 * f1
        worst_identity = worst_identity.max(rel_err(&f[..2], &[u[0], u[1].tan() / 2.0 * f[0]]));
        worst_identity = worst_identity.max(rel_err(&f[2..], &[u[0] * u[1].tan()]));
    }
    ensure!(worst_identity <= DYNAMICS_REL_TOL, "identity error {worst_identity:e}");
    Ok(format!(
        "{rows} reference points, worst relative error {worst:.1e}; zero-heading identities within {worst_identity:.1e} on {DYNAMICS_DRAWS} draws"
    ))
}

fn read_reports(dir: &Path) -> Result<Vec<Vec<u8>>, String> {
    ["report.csv", "summary.txt", "transcripts.jsonl"]
        .iter()
        .map(|n| std::fs::read(dir.join(n)).map_err(|e| e.to_string()))
        .collect()
}

/// Controller table, scripted evaluation reports and SVG are byte-identical
/// across two runs.
pub fn criterion_8() -> Check {
    let (s, _) = desk()?;
    let first = write_controller_table(&s.controller, &s.grid);
    let again = synthesize(&s.spec).map_err(|e| e.to_string())?;
    let second = write_controller_table(&again.controller, &again.grid);
    ensure!(first == second, "controller tables differ");

    let cases = benchmark_cases()?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut reports = Vec::new();
    for k in 0..2 {
        let out = tmp.path().join(format!("run{k}"));
        scripted_report(&cases, Strategy::FullPipeline, "pipeline_headline.txt")?
            .write(&out)
            .map_err(|e| e.to_string())?;
        reports.push(read_reports(&out)?);
    }
    ensure!(reports[0] == reports[1], "evaluation reports differ");

    let opts = SimOptions {
        tau: s.spec.tau,
        substeps: DEFAULT_SUBSTEPS,
        max_steps: CLOSED_LOOP_MAX_STEPS,
        obstacles: s.spec.obstacle_rects().map_err(|e| e.to_string())?,
    };
    let x0 = [0.7, 0.7, 0.0];
    let mut svgs = Vec::new();
    for syn in [s, &again] {
        let traj = simulate_closed_loop(syn.field.as_ref(), &mut ConcreteController::new(&syn.controller, &syn.grid), &x0, &opts);
        let overlay = WinningOverlay {
            grid: &syn.grid,
            ctrl: &syn.controller,
        };
        svgs.push(render_svg(&syn.spec, Some(&traj), Some(&overlay)).map_err(|e| e.to_string())?);
    }
    ensure!(svgs[0] == svgs[1], "SVG renderings differ");
    Ok(format!(
        "controller table ({} bytes), evaluation reports ({} bytes) and SVG ({} bytes) identical",
        first.len(),
        reports[0].iter().map(Vec::len).sum::<usize>(),
        svgs[0].len()
    ))
}

/// Number, name and check of one criterion.
pub type Criterion = (u8, &'static str, fn() -> Check);

pub const CRITERIA: [Criterion; 8] = [
    (1, "closed-loop certification", criterion_1),
    (2, "solver oracle equivalence", criterion_2),
    (3, "abstraction soundness sampling", criterion_3),
    (4, "quantization properties", criterion_4),
    (5, "pipeline control flow", criterion_5),
    (6, "harness arithmetic", criterion_6),
    (7, "dynamics oracle", criterion_7),
    (8, "determinism", criterion_8),
];

pub fn run_criterion(id: u8) -> CriterionResult {
    let (id, name, check) = CRITERIA[id as usize - 1];
    let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    let (passed, detail) = match outcome {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    CriterionResult { id, name, passed, detail }
}

pub fn run_all() -> Vec<CriterionResult> {
    CRITERIA.iter().map(|(id, _, _)| run_criterion(*id)).collect()
}
