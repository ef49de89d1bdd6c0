//! `gridsynth`: synthesize, simulate, translate descriptions and run the
//! benchmark from the command line.
//!
//! Exit codes: 0 success, 1 specification or verification failure, 2 usage
//! error (bad flags, unreadable files), 3 language-model service error.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gridsynth_agents::client::{ClientError, LlmClient, MockClient, MockScript, RawExchange, RemoteClient, RemoteConfig};
use gridsynth_agents::{pipeline_run, AgentConfig, Outcome};
use gridsynth_bench::{load_cases, run_benchmark, Strategy};
use gridsynth_core::abstraction::{read_cache, write_cache};
use gridsynth_core::simulator::{check_reach_avoid, render_svg, simulate_closed_loop, SimOptions, Termination, WinningOverlay};
use gridsynth_core::spec::{parse_spec, serialize_spec, ProblemSpec, DEFAULT_SUBSTEPS};
use gridsynth_core::synthesis::{read_controller_table, write_controller_table, ConcreteController};
use gridsynth_core::{abstraction_key, synthesize_with};

#[derive(Parser, Debug)]
#[command(name = "gridsynth", version, about = "Reach-avoid controller synthesis on uniform grids")]
struct Cli {
    /// Worker threads for abstraction building (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Reserved; nothing in the tool is randomized yet.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Abstract and solve a problem file, writing the controller table.
    Synth {
        spec: PathBuf,
        /// Controller table output.
        #[arg(long, short)]
        out: PathBuf,
        /// Abstraction cache file; read when valid, written otherwise.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Run a controller table in closed loop from one initial state.
    Simulate {
        spec: PathBuf,
        controller: PathBuf,
        /// Initial state, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        x0: Vec<f64>,
        /// Maximum number of sampling periods.
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        /// Trajectory CSV output (default: stdout).
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Also render the environment, winning set and trajectory.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Translate a natural-language description into a problem file.
    Nl2spec {
        /// Description file (default: stdin).
        #[arg(long)]
        nl: Option<PathBuf>,
        /// Problem file output (default: stdout).
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Full agent transcript as JSON.
        #[arg(long)]
        transcript: Option<PathBuf>,
        #[command(flatten)]
        client: ClientArgs,
    },
    /// Run one strategy over a directory of benchmark cases.
    Eval {
        #[arg(long)]
        cases: PathBuf,
        /// direct, code-agent or pipeline.
        #[arg(long)]
        strategy: Strategy,
        /// Report directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        client: ClientArgs,
    },
}

#[derive(Args, Debug)]
struct ClientArgs {
    /// Scripted replay file instead of a live endpoint.
    #[arg(long, conflicts_with_all = ["base_url", "model"])]
    mock: Option<PathBuf>,
    /// Chat-completion endpoint base, e.g. https://api.example.com/v1.
    #[arg(long, requires = "model")]
    base_url: Option<String>,
    #[arg(long, requires = "base_url")]
    model: Option<String>,
    /// Record raw request and response bodies in the transcript.
    #[arg(long)]
    log_raw: bool,
    /// Extra attempts on transport errors, 429 and 5xx.
    #[arg(long, default_value_t = 2)]
    max_retries: u32,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }

    fn spec(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }

    fn service(message: impl Into<String>) -> Self {
        Failure { code: 3, message: message.into() }
    }
}

type CmdResult = Result<(), Failure>;

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn load_spec(path: &Path) -> Result<ProblemSpec, Failure> {
    parse_spec(&read_text(path)?).map_err(|e| Failure::spec(format!("{}: {e}", path.display())))
}

fn cmd_synth(spec_path: &Path, out: &Path, cache: Option<&Path>) -> CmdResult {
    let spec = load_spec(spec_path)?;
    let key = abstraction_key(&spec);
    let mut prebuilt = None;
    if let Some(path) = cache.filter(|p| p.exists()) {
        let grid = spec.grid().map_err(|e| Failure::spec(e.to_string()))?;
        let file = fs::File::open(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        match read_cache(&mut io::BufReader::new(file), &grid, spec.input_dim(), spec.tau, key) {
            Ok(fts) => prebuilt = Some(fts),
            Err(e) => log::warn!("ignoring cache {}: {e}", path.display()),
        }
    }
    let from_cache = prebuilt.is_some();
    let s = synthesize_with(&spec, prebuilt).map_err(|e| Failure::spec(e.to_string()))?;
    if let (Some(path), false) = (cache, from_cache) {
        let file = fs::File::create(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        let mut w = io::BufWriter::new(file);
        write_cache(&mut w, &s.fts, &s.grid, spec.input_dim(), spec.tau, key)
            .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        w.flush().map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    }
    write_text(out, &write_controller_table(&s.controller, &s.grid))?;
    eprintln!("cells: {}", s.grid.num_cells());
    eprintln!("inputs: {}", s.inputs.len());
    eprintln!("transitions: {}", s.fts.num_transitions());
    eprintln!("winning: {} ({:.4} of the grid)", s.num_winning(), s.winning_fraction());
    if from_cache {
        eprintln!("abstraction: loaded from cache");
    } else {
        eprintln!("abstraction time: {:.3} s", s.abstraction_time.as_secs_f64());
    }
    eprintln!("solve time: {:.3} s", s.solve_time.as_secs_f64());
    if !s.initial_winning() {
        return Err(Failure::spec("no initial cell is winning"));
    }
    if !s.all_initial_winning() {
        log::warn!("some initial cells are not winning");
    }
    Ok(())
}

fn cmd_simulate(spec_path: &Path, controller: &Path, x0: &[f64], steps: usize, out: Option<&Path>, svg: Option<&Path>) -> CmdResult {
    let spec = load_spec(spec_path)?;
    if x0.len() != spec.state_dim() {
        return Err(Failure::usage(format!("--x0 has {} values, the state has {}", x0.len(), spec.state_dim())));
    }
    let (grid, ctrl) = read_controller_table(&read_text(controller)?).map_err(|e| Failure::spec(format!("{}: {e}", controller.display())))?;
    if spec.grid().ok().as_ref() != Some(&grid) {
        return Err(Failure::spec("the controller was synthesized on a different grid"));
    }
    let mut start = x0.to_vec();
    grid.wrap(&mut start);
    let cell = grid.cell_of(&start).map_err(|e| Failure::spec(format!("x0: {e}")))?;
    if !ctrl.initial_winning(cell.flat_id) {
        return Err(Failure::spec("x0 is not in the winning set"));
    }
    let field = gridsynth_core::dynamics::builtin_field(&spec.system, spec.state_dim()).map_err(|e| Failure::spec(e.to_string()))?;
    let opts = SimOptions {
        tau: spec.tau,
        substeps: DEFAULT_SUBSTEPS,
        max_steps: steps,
        obstacles: spec.obstacle_rects().map_err(|e| Failure::spec(e.to_string()))?,
    };
    let traj = simulate_closed_loop(field.as_ref(), &mut ConcreteController::new(&ctrl, &grid), x0, &opts);
    let csv = traj.to_csv(spec.input_dim());
    match out {
        Some(path) => write_text(path, &csv)?,
        None => io::stdout().write_all(csv.as_bytes()).map_err(|e| Failure::usage(e.to_string()))?,
    }
    if let Some(path) = svg {
        let overlay = WinningOverlay { grid: &grid, ctrl: &ctrl };
        let text = render_svg(&spec, Some(&traj), Some(&overlay)).map_err(|e| Failure::spec(e.to_string()))?;
        write_text(path, &text)?;
    }
    let verdict = check_reach_avoid(&traj, &spec).map_err(|e| Failure::spec(e.to_string()))?;
    match traj.termination {
        Termination::ReachedTarget(t) => eprintln!("reached the target at t = {t}"),
        other => eprintln!("run ended without reaching the target: {other:?}"),
    }
    if !verdict.satisfied {
        return Err(Failure::spec(match verdict.first_violation {
            Some((t, i)) => format!("trajectory touches obstacle {i} at t = {t}"),
            None => "trajectory does not satisfy the problem".to_string(),
        }));
    }
    Ok(())
}

fn make_client(args: &ClientArgs) -> Result<Box<dyn LlmClient>, Failure> {
    if let Some(path) = &args.mock {
        let script = MockScript::parse(&read_text(path)?).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        return Ok(Box::new(MockClient::new(&script)));
    }
    let (Some(base_url), Some(model)) = (&args.base_url, &args.model) else {
        return Err(Failure::usage("no language model configured; pass --mock or --base-url with --model"));
    };
    let mut config = RemoteConfig::from_env(base_url, model).map_err(|e| Failure::usage(e.to_string()))?;
    config.max_retries = args.max_retries;
    config.log_raw = args.log_raw;
    Ok(Box::new(RemoteClient::new(config)))
}

fn client_failure(e: &ClientError) -> Failure {
    match e {
        ClientError::BadScript { .. } | ClientError::MissingApiKey(_) => Failure::usage(e.to_string()),
        _ => Failure::service(e.to_string()),
    }
}

fn transcript_json(transcript: &gridsynth_agents::AgentTranscript, raw: &[RawExchange]) -> String {
    let mut value = serde_json::to_value(transcript).expect("transcripts serialize");
    if !raw.is_empty() {
        value["raw"] = serde_json::to_value(raw).expect("raw exchanges serialize");
    }
    let mut text = serde_json::to_string_pretty(&value).expect("json values serialize");
    text.push('\n');
    text
}

fn cmd_nl2spec(nl: Option<&Path>, out: Option<&Path>, transcript_path: Option<&Path>, args: &ClientArgs) -> CmdResult {
    let mut client = make_client(args)?;
    let text = match nl {
        Some(path) => read_text(path)?,
        None => {
            let mut s = String::new();
            io::stdin().read_to_string(&mut s).map_err(|e| Failure::usage(format!("stdin: {e}")))?;
            s
        }
    };
    let text = text.trim();
    if text.is_empty() {
        return Err(Failure::usage("empty description"));
    }
    let result = pipeline_run(client.as_mut(), &AgentConfig::default(), text);
    let raw = client.take_raw_log();
    let (transcript, error) = match result {
        Ok(t) => (t, None),
        Err(e) => (e.transcript, Some(e.error)),
    };
    if let Some(path) = transcript_path {
        write_text(path, &transcript_json(&transcript, &raw))?;
    }
    if let Some(e) = error {
        return Err(client_failure(&e));
    }
    match transcript.outcome {
        Some(Outcome::AcceptedSpec(spec)) => {
            let mut doc = serialize_spec(&spec);
            doc.push('\n');
            match out {
                Some(path) => write_text(path, &doc)?,
                None => io::stdout().write_all(doc.as_bytes()).map_err(|e| Failure::usage(e.to_string()))?,
            }
            eprintln!("accepted after {} round(s)", transcript.iterations.len());
            Ok(())
        }
        Some(Outcome::BlockedWithFeedback(feedback)) => {
            eprintln!("{}", feedback.trim_end());
            Err(Failure::spec(format!("blocked after {} round(s)", transcript.iterations.len())))
        }
        Some(Outcome::ParseFailure(message)) => Err(Failure::spec(format!("the last draft did not parse: {message}"))),
        None => Err(Failure::service("pipeline ended without an outcome")),
    }
}

fn cmd_eval(cases_dir: &Path, strategy: Strategy, out: &Path, args: &ClientArgs) -> CmdResult {
    let mut client = make_client(args)?;
    let cases = load_cases(cases_dir).map_err(|e| Failure::usage(e.to_string()))?;
    let report = run_benchmark(&cases, strategy, client.as_mut(), &AgentConfig::default());
    report.write(out).map_err(|e| Failure::usage(format!("{}: {e}", out.display())))?;
    let raw = client.take_raw_log();
    if !raw.is_empty() {
        let lines: String = raw.iter().map(|r| serde_json::to_string(r).expect("raw exchanges serialize") + "\n").collect();
        write_text(&out.join("raw.jsonl"), &lines)?;
    }
    eprint!("{}", report.summary());
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Failure::usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::usage(e.to_string()))?;
    }
    if let Some(seed) = cli.seed {
        log::debug!("seed {seed} accepted; nothing uses it");
    }
    match &cli.command {
        Command::Synth { spec, out, cache } => cmd_synth(spec, out, cache.as_deref()),
        Command::Simulate {
            spec,
            controller,
            x0,
            steps,
            out,
            svg,
        } => cmd_simulate(spec, controller, x0, *steps, out.as_deref(), svg.as_deref()),
        Command::Nl2spec { nl, out, transcript, client } => cmd_nl2spec(nl.as_deref(), out.as_deref(), transcript.as_deref(), client),
        Command::Eval { cases, strategy, out, client } => cmd_eval(cases, *strategy, out, client),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
