//! Benchmark harness: fixture environments with three paraphrases each,
//! three ways of turning a description into a plan, the four outcome
//! categories and per-environment robustness.

pub mod direct;
pub mod planner;
pub mod scripts;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use gridsynth_agents::client::{ClientError, LlmClient};
use gridsynth_agents::{code_agent_generate, pipeline_run, AgentConfig, AgentTranscript, Outcome};
use gridsynth_core::spec::{canonicalize, parse_spec, semantic_diff, ProblemSpec, SpecError, DEFAULT_DIFF_TOL};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::direct::{judge_waypoints, parse_waypoints};

pub const PARAPHRASES: usize = 3;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Spec { path: String, source: SpecError },
    #[error("case {0}: paraphrase is empty")]
    EmptyParaphrase(String),
    #[error("no cases found in {0}")]
    NoCases(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchCase {
    pub id: String,
    pub ground_truth: ProblemSpec,
    pub paraphrases: [String; PARAPHRASES],
}

/// Reads `<dir>/<id>/spec.json` and `paraphrase_{1,2,3}.txt` for every
/// subdirectory, sorted by id.
pub fn load_cases(dir: &Path) -> Result<Vec<BenchCase>, BenchError> {
    let mut ids: Vec<String> = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        if entry.file_type().map_err(io_err(dir))?.is_dir() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    if ids.is_empty() {
        return Err(BenchError::NoCases(dir.display().to_string()));
    }
    ids.into_iter()
        .map(|id| {
            let case_dir = dir.join(&id);
            let spec_path = case_dir.join("spec.json");
            let text = fs::read_to_string(&spec_path).map_err(io_err(&spec_path))?;
            let spec = parse_spec(&text).and_then(|s| canonicalize(&s)).map_err(|source| BenchError::Spec {
                path: spec_path.display().to_string(),
                source,
            })?;
            let mut paraphrases: [String; PARAPHRASES] = Default::default();
            for (k, slot) in paraphrases.iter_mut().enumerate() {
                let p = case_dir.join(format!("paraphrase_{}.txt", k + 1));
                *slot = fs::read_to_string(&p).map_err(io_err(&p))?.trim().to_string();
                if slot.is_empty() {
                    return Err(BenchError::EmptyParaphrase(id.clone()));
                }
            }
            Ok(BenchCase {
                id,
                ground_truth: spec,
                paraphrases,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// The model plans waypoints itself.
    DirectLlm,
    /// One generator call, no checker.
    CodeAgentOnly,
    /// Generator and checker with feedback rounds.
    FullPipeline,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::DirectLlm, Strategy::CodeAgentOnly, Strategy::FullPipeline];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::DirectLlm => "direct",
            Strategy::CodeAgentOnly => "code-agent",
            Strategy::FullPipeline => "pipeline",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown strategy `{s}` (expected direct, code-agent or pipeline)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OutcomeCategory {
    IncorrectExecution,
    CorrectNotChecked,
    IncorrectBlocked,
    CorrectChecked,
}

impl OutcomeCategory {
    pub const ALL: [OutcomeCategory; 4] = [
        OutcomeCategory::IncorrectExecution,
        OutcomeCategory::CorrectNotChecked,
        OutcomeCategory::IncorrectBlocked,
        OutcomeCategory::CorrectChecked,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            OutcomeCategory::IncorrectExecution => "incorrect_execution",
            OutcomeCategory::CorrectNotChecked => "correct_not_checked",
            OutcomeCategory::IncorrectBlocked => "incorrect_blocked",
            OutcomeCategory::CorrectChecked => "correct_checked",
        }
    }

    pub fn is_correct(&self) -> bool {
        matches!(self, OutcomeCategory::CorrectNotChecked | OutcomeCategory::CorrectChecked)
    }
}

/// What one strategy produced for one paraphrase.
#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    Direct { waypoints: Option<Vec<Vec<f64>>> },
    CodeAgentOnly { spec: Option<ProblemSpec> },
    /// `spec` is the accepted spec, or the last one that parsed when blocked.
    FullPipeline { accepted: bool, spec: Option<ProblemSpec> },
    /// The client failed before the strategy finished.
    ClientFailure(Strategy),
}

impl RunOutcome {
    pub fn strategy(&self) -> Strategy {
        match self {
            RunOutcome::Direct { .. } => Strategy::DirectLlm,
            RunOutcome::CodeAgentOnly { .. } => Strategy::CodeAgentOnly,
            RunOutcome::FullPipeline { .. } => Strategy::FullPipeline,
            RunOutcome::ClientFailure(s) => *s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Categorized {
    pub category: OutcomeCategory,
    /// The checker blocked a spec that was in fact correct.
    pub false_block: bool,
}

fn spec_matches(truth: &ProblemSpec, spec: &ProblemSpec) -> bool {
    semantic_diff(truth, spec, DEFAULT_DIFF_TOL).is_ok_and(|r| r.is_empty())
}

pub fn categorize(outcome: &RunOutcome, ground_truth: &ProblemSpec) -> Categorized {
    let plain = |category| Categorized {
        category,
        false_block: false,
    };
    let unchecked = |correct: bool| {
        plain(if correct {
            OutcomeCategory::CorrectNotChecked
        } else {
            OutcomeCategory::IncorrectExecution
        })
    };
    match outcome {
        RunOutcome::Direct { waypoints } => {
            unchecked(waypoints.as_ref().is_some_and(|w| judge_waypoints(w, ground_truth).satisfied))
        }
        RunOutcome::CodeAgentOnly { spec } => unchecked(spec.as_ref().is_some_and(|s| spec_matches(ground_truth, s))),
        RunOutcome::FullPipeline { accepted, spec } => {
            let correct = spec.as_ref().is_some_and(|s| spec_matches(ground_truth, s));
            match (accepted, correct) {
                (true, true) => plain(OutcomeCategory::CorrectChecked),
                (true, false) => plain(OutcomeCategory::IncorrectExecution),
                (false, false) => plain(OutcomeCategory::IncorrectBlocked),
                (false, true) => Categorized {
                    category: OutcomeCategory::IncorrectBlocked,
                    false_block: true,
                },
            }
        }
        // nothing ran for the pipeline; the single-shot strategies have nothing to execute
        RunOutcome::ClientFailure(Strategy::FullPipeline) => plain(OutcomeCategory::IncorrectBlocked),
        RunOutcome::ClientFailure(_) => plain(OutcomeCategory::IncorrectExecution),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseVerdict {
    /// All paraphrases correct.
    Robust,
    /// At least one but not all correct.
    Solved,
    Incorrect,
}

impl CaseVerdict {
    pub fn from_correct(correct: &[bool]) -> Self {
        if !correct.is_empty() && correct.iter().all(|&c| c) {
            CaseVerdict::Robust
        } else if correct.iter().any(|&c| c) {
            CaseVerdict::Solved
        } else {
            CaseVerdict::Incorrect
        }
    }

    pub fn is_solved(&self) -> bool {
        !matches!(self, CaseVerdict::Incorrect)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub case: String,
    pub paraphrase: usize,
    pub strategy: Strategy,
    pub category: OutcomeCategory,
    pub false_block: bool,
    pub iterations: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum RunRecord {
    Direct { prompt: String, reply: Option<String>, verdict: Option<String> },
    CodeAgentOnly { prompt: String, reply: Option<String>, parse_error: Option<String> },
    FullPipeline { transcript: AgentTranscript },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub strategy: Strategy,
    pub rows: Vec<ReportRow>,
    /// One record per row, same order.
    pub records: Vec<RunRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BenchSummary {
    pub strategy: Strategy,
    pub paraphrases: usize,
    pub incorrect_execution: usize,
    pub correct_not_checked: usize,
    pub incorrect_blocked: usize,
    pub false_blocks: usize,
    pub correct_checked: usize,
    pub correct: usize,
    pub cases: usize,
    pub robust: usize,
    /// Cases with at least one correct paraphrase, robust ones included.
    pub solved: usize,
    pub incorrect: usize,
}

/// Per-case verdicts in case order.
pub fn robustness(report: &BenchReport) -> Vec<(String, CaseVerdict)> {
    let mut out: Vec<(String, Vec<bool>)> = Vec::new();
    for row in &report.rows {
        match out.last_mut() {
            Some((id, flags)) if *id == row.case => flags.push(row.category.is_correct()),
            _ => out.push((row.case.clone(), vec![row.category.is_correct()])),
        }
    }
    out.into_iter().map(|(id, flags)| (id, CaseVerdict::from_correct(&flags))).collect()
}

impl BenchReport {
    pub fn count(&self, category: OutcomeCategory) -> usize {
        self.rows.iter().filter(|r| r.category == category).count()
    }

    pub fn summary(&self) -> BenchSummary {
        let verdicts = robustness(self);
        BenchSummary {
            strategy: self.strategy,
            paraphrases: self.rows.len(),
            incorrect_execution: self.count(OutcomeCategory::IncorrectExecution),
            correct_not_checked: self.count(OutcomeCategory::CorrectNotChecked),
            incorrect_blocked: self.count(OutcomeCategory::IncorrectBlocked),
            false_blocks: self.rows.iter().filter(|r| r.false_block).count(),
            correct_checked: self.count(OutcomeCategory::CorrectChecked),
            correct: self.rows.iter().filter(|r| r.category.is_correct()).count(),
            cases: verdicts.len(),
            robust: verdicts.iter().filter(|v| v.1 == CaseVerdict::Robust).count(),
            solved: verdicts.iter().filter(|v| v.1.is_solved()).count(),
            incorrect: verdicts.iter().filter(|v| v.1 == CaseVerdict::Incorrect).count(),
        }
    }

    pub fn to_csv(&self) -> Result<String, BenchError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["case", "paraphrase", "strategy", "category", "false_block", "iterations", "error"])?;
        for r in &self.rows {
            w.write_record([
                r.case.as_str(),
                &r.paraphrase.to_string(),
                r.strategy.as_str(),
                r.category.as_str(),
                &r.false_block.to_string(),
                &r.iterations.to_string(),
                r.error.as_deref().unwrap_or(""),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| BenchError::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Writes `report.csv`, `summary.txt` and `transcripts.jsonl`.
    pub fn write(&self, dir: &Path) -> Result<(), BenchError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(io_err(&p))
        };
        write("report.csv", self.to_csv()?)?;
        write("summary.txt", self.summary().to_string())?;
        let mut lines = String::new();
        for rec in &self.records {
            lines.push_str(&serde_json::to_string(rec).expect("records serialize"));
            lines.push('\n');
        }
        write("transcripts.jsonl", lines)
    }
}

impl fmt::Display for BenchSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "strategy: {}", self.strategy)?;
        writeln!(f, "paraphrases: {}", self.paraphrases)?;
        writeln!(f, "incorrect_execution: {}", self.incorrect_execution)?;
        writeln!(f, "correct_not_checked: {}", self.correct_not_checked)?;
        writeln!(f, "incorrect_blocked: {} (false blocks: {})", self.incorrect_blocked, self.false_blocks)?;
        writeln!(f, "correct_checked: {}", self.correct_checked)?;
        writeln!(f, "correct: {} of {}", self.correct, self.paraphrases)?;
        writeln!(f, "cases: {}", self.cases)?;
        writeln!(f, "robust: {}", self.robust)?;
        writeln!(f, "solved: {}", self.solved)?;
        writeln!(f, "incorrect: {}", self.incorrect)
    }
}

fn run_one(client: &mut dyn LlmClient, config: &AgentConfig, strategy: Strategy, nl: &str) -> (RunOutcome, RunRecord, usize, Option<String>) {
    match strategy {
        Strategy::DirectLlm => {
            let prompt = config.prompts.direct_prompt(nl);
            match client.complete(&prompt, config.temperature, config.seed) {
                Ok(reply) => {
                    let parsed = parse_waypoints(&reply);
                    let error = parsed.as_ref().err().cloned();
                    let record = RunRecord::Direct {
                        prompt,
                        reply: Some(reply),
                        verdict: error.clone(),
                    };
                    (RunOutcome::Direct { waypoints: parsed.ok() }, record, 1, error)
                }
                Err(e) => client_failure(strategy, prompt, e),
            }
        }
        Strategy::CodeAgentOnly => match code_agent_generate(client, config, nl, None) {
            Ok(d) => {
                let error = d.parsed.as_ref().err().map(|e| e.to_string());
                let record = RunRecord::CodeAgentOnly {
                    prompt: d.prompt,
                    reply: Some(d.raw),
                    parse_error: error.clone(),
                };
                (RunOutcome::CodeAgentOnly { spec: d.parsed.ok() }, record, 1, error)
            }
            Err(e) => client_failure(strategy, config.prompts.code_prompt(nl), e),
        },
        Strategy::FullPipeline => match pipeline_run(client, config, nl) {
            Ok(t) => {
                let accepted = t.accepted().is_some();
                let spec = t.accepted().or_else(|| t.last_spec()).cloned();
                let error = match &t.outcome {
                    Some(Outcome::BlockedWithFeedback(f)) | Some(Outcome::ParseFailure(f)) => Some(f.clone()),
                    _ => None,
                };
                let n = t.iterations.len();
                (RunOutcome::FullPipeline { accepted, spec }, RunRecord::FullPipeline { transcript: t }, n, error)
            }
            Err(e) => {
                let n = e.transcript.iterations.len();
                (
                    RunOutcome::ClientFailure(strategy),
                    RunRecord::FullPipeline { transcript: e.transcript },
                    n,
                    Some(e.error.to_string()),
                )
            }
        },
    }
}

fn client_failure(strategy: Strategy, prompt: String, e: ClientError) -> (RunOutcome, RunRecord, usize, Option<String>) {
    let record = match strategy {
        Strategy::DirectLlm => RunRecord::Direct {
            prompt,
            reply: None,
            verdict: None,
        },
        _ => RunRecord::CodeAgentOnly {
            prompt,
            reply: None,
            parse_error: None,
        },
    };
    (RunOutcome::ClientFailure(strategy), record, 0, Some(e.to_string()))
}

/// Runs one strategy over every paraphrase of every case, in order, on a
/// single client session. Client errors mark the paraphrase incorrect.
pub fn run_benchmark(cases: &[BenchCase], strategy: Strategy, client: &mut dyn LlmClient, config: &AgentConfig) -> BenchReport {
    let mut report = BenchReport {
        strategy,
        rows: Vec::with_capacity(cases.len() * PARAPHRASES),
        records: Vec::with_capacity(cases.len() * PARAPHRASES),
    };
    for case in cases {
        for (k, nl) in case.paraphrases.iter().enumerate() {
            let (outcome, record, iterations, error) = run_one(client, config, strategy, nl);
            let c = categorize(&outcome, &case.ground_truth);
            report.rows.push(ReportRow {
                case: case.id.clone(),
                paraphrase: k + 1,
                strategy,
                category: c.category,
                false_block: c.false_block,
                iterations,
                error,
            });
            report.records.push(record);
        }
    }
    report
}
