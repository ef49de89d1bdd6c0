//! Builds mock scripts that make each strategy produce a chosen outcome for
//! every paraphrase. Responses are keyed by prompt hash, so a script only
//! replays correctly against the prompt templates it was built with.

use gridsynth_agents::client::{MockClient, MockScript};
use gridsynth_agents::{parse_draft, pipeline_run, AgentConfig, Outcome};
use gridsynth_core::geometry::HyperRect;
use gridsynth_core::spec::{semantic_diff, InitialEncoding, ProblemSpec, DEFAULT_DIFF_TOL};
use serde_json::{json, Value};

use crate::direct::judge_waypoints;
use crate::planner::reference_waypoints;
use crate::{BenchCase, PARAPHRASES};

/// How the pipeline should end for one paraphrase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipelinePlan {
    /// Correct draft, accepted in round one.
    AcceptCorrect,
    /// Wrong draft, real mismatch feedback, correct draft, accepted.
    AcceptAfterFeedback,
    /// Wrong draft that the checker lets through.
    AcceptWrong,
    /// Two wrong drafts, both rejected.
    BlockWrong,
    /// Two correct drafts, both rejected.
    FalseBlock,
    /// Two drafts that do not parse.
    ParseFailure,
}

impl PipelinePlan {
    pub fn is_correct(&self) -> bool {
        matches!(self, PipelinePlan::AcceptCorrect | PipelinePlan::AcceptAfterFeedback)
    }
}

/// Correct-paraphrase counts per case for the three strategies, chosen to
/// total 7, 34 and 39 correct with 0 of 4, 9 of 14 and 10 of 16 cases
/// robust among the solved.
pub const DIRECT_COUNTS: [usize; 20] = [0, 0, 2, 0, 0, 1, 0, 2, 0, 0, 0, 2, 0, 0, 0, 0, 0, 0, 0, 0];
pub const CODE_AGENT_COUNTS: [usize; 20] = [3, 3, 3, 3, 3, 3, 3, 3, 2, 0, 2, 0, 1, 1, 1, 0, 0, 3, 0, 0];
pub const PIPELINE_COUNTS: [usize; 20] = [3, 3, 3, 3, 3, 3, 3, 3, 2, 3, 2, 0, 2, 1, 1, 0, 1, 3, 0, 0];

fn pattern(count: usize) -> [bool; PARAPHRASES] {
    std::array::from_fn(|k| k < count)
}

pub fn correct_flags(counts: &[usize]) -> Vec<[bool; PARAPHRASES]> {
    counts.iter().map(|&c| pattern(c)).collect()
}

/// Pipeline plans consistent with `PIPELINE_COUNTS`: correct paraphrases
/// alternate between first- and second-round acceptance, and incorrect
/// ones cycle through the failure modes.
pub fn headline_pipeline_plans() -> Vec<[PipelinePlan; PARAPHRASES]> {
    use PipelinePlan::*;
    let failures = [BlockWrong, AcceptWrong, BlockWrong, ParseFailure, BlockWrong, FalseBlock, BlockWrong];
    let mut ok = 0;
    let mut bad = 0;
    PIPELINE_COUNTS
        .iter()
        .map(|&c| {
            std::array::from_fn(|k| {
                if k < c {
                    ok += 1;
                    if ok % 4 == 0 {
                        AcceptAfterFeedback
                    } else {
                        AcceptCorrect
                    }
                } else {
                    bad += 1;
                    failures[bad % failures.len()]
                }
            })
        })
        .collect()
}

fn tidy(v: f64) -> f64 {
    let r = (v * 1e9).round() / 1e9;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn region_json(r: &HyperRect, style: usize) -> String {
    let (lo, hi) = ([tidy(r.lower[0]), tidy(r.lower[1])], [tidy(r.upper[0]), tidy(r.upper[1])]);
    let j = |v: Value| serde_json::to_string(&v).expect("json");
    match style % 3 {
        0 => format!(r#"{{"kind": "diagonal", "a": {}, "b": {}}}"#, j(json!(lo)), j(json!(hi))),
        1 => format!(
            r#"{{"kind": "center_sides", "center": {}, "sides": {}}}"#,
            j(json!([tidy((lo[0] + hi[0]) / 2.0), tidy((lo[1] + hi[1]) / 2.0)])),
            j(json!([tidy(hi[0] - lo[0]), tidy(hi[1] - lo[1])]))
        ),
        _ => format!(
            r#"{{"kind": "vertices4", "vertices": {}}}"#,
            j(json!([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]]))
        ),
    }
}

/// A planar spec written the way the worked examples are: one line per
/// field, regions in the given style.
pub fn spec_document(spec: &ProblemSpec, style: usize) -> String {
    let compact = |v: Value| serde_json::to_string(&v).expect("json");
    let bounds = |r: &HyperRect| format!(r#"{{"lower": {}, "upper": {}}}"#, compact(json!(r.lower)), compact(json!(r.upper)));
    let list = |items: Vec<String>| format!("[{}]", items.join(", "));
    let initial = match &spec.initial {
        InitialEncoding::Point { at } => format!(r#"{{"kind": "point", "at": {}}}"#, compact(json!(at))),
        _ => region_json(&spec.initial_rect().expect("valid initial"), style + 1),
    };
    let fields = [
        ("system", compact(json!(spec.system))),
        ("state_bounds", bounds(&spec.state_bounds)),
        ("periodic", compact(json!(spec.periodic))),
        ("input_bounds", bounds(&spec.input_bounds)),
        ("eta_x", compact(json!(spec.eta_x))),
        ("eta_u", compact(json!(spec.eta_u))),
        ("tau", compact(json!(spec.tau))),
        ("obstacles", list(spec.obstacle_rects().expect("valid").iter().map(|r| region_json(r, style)).collect())),
        ("targets", list(spec.target_rects().expect("valid").iter().map(|r| region_json(r, style + 2)).collect())),
        ("initial", initial),
        ("clearance", compact(json!(spec.clearance))),
    ];
    let body: Vec<String> = fields.iter().map(|(k, v)| format!("  \"{k}\": {v}")).collect();
    format!("{{\n{}\n}}\n", body.join(",\n"))
}

fn shift(r: &HyperRect, dim: usize, by: f64, bounds: &HyperRect) -> HyperRect {
    let by = if r.upper[dim] + by <= bounds.upper[dim] { by } else { -by };
    let mut out = r.clone();
    out.lower[dim] += by;
    out.upper[dim] += by;
    out
}

/// A plausible wrong translation; `variant` picks among the applicable
/// mistakes.
pub fn wrong_spec(spec: &ProblemSpec, variant: usize) -> ProblemSpec {
    use gridsynth_core::geometry::RectEncoding;
    let mut options: Vec<ProblemSpec> = Vec::new();
    if !spec.obstacles.is_empty() {
        let mut s = spec.clone();
        s.obstacles.pop();
        options.push(s);
    }
    {
        let mut s = spec.clone();
        let mut t = spec.target_rects().expect("valid");
        let last = t.len() - 1;
        t[last] = shift(&t[last], 0, 0.4, &spec.state_bounds);
        s.targets = t.iter().map(RectEncoding::from_rect).collect();
        options.push(s);
    }
    options.push(ProblemSpec {
        clearance: if spec.clearance > 0.0 { 0.0 } else { 0.5 },
        ..spec.clone()
    });
    if spec.targets.len() > 1 {
        let mut s = spec.clone();
        s.targets.reverse();
        options.push(s);
    }
    {
        let mut s = spec.clone();
        s.initial = match &spec.initial {
            InitialEncoding::Point { at } => {
                let mut at = at.clone();
                at[1] += if at[1] + 0.3 <= spec.state_bounds.upper[1] { 0.3 } else { -0.3 };
                InitialEncoding::Point { at }
            }
            _ => {
                let r = spec.initial_rect().expect("valid");
                let moved = shift(&HyperRect::new(r.lower[..2].to_vec(), r.upper[..2].to_vec()).expect("valid"), 1, 0.2, &spec.state_bounds);
                InitialEncoding::Diagonal {
                    a: moved.lower,
                    b: moved.upper,
                }
            }
        };
        options.push(s);
    }
    options.swap_remove(variant % options.len())
}

fn fenced(doc: &str) -> String {
    format!("```json\n{doc}```")
}

fn paraphrases(cases: &[BenchCase]) -> impl Iterator<Item = (usize, usize, &BenchCase, &str)> {
    cases
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.paraphrases.iter().enumerate().map(move |(k, nl)| (i, k, c, nl.as_str())))
}

fn checked_wrong(case: &BenchCase, variant: usize) -> ProblemSpec {
    let w = wrong_spec(&case.ground_truth, variant);
    let report = semantic_diff(&case.ground_truth, &w, DEFAULT_DIFF_TOL).expect("same dimension");
    assert!(!report.is_empty(), "{}: mutation {variant} is not a mistake", case.id);
    w
}

/// Direct-planning script: correct paraphrases get a planned path, wrong
/// ones a straight dash to the targets or a path that stops short.
pub fn direct_script(cases: &[BenchCase], config: &AgentConfig, correct: &[[bool; PARAPHRASES]]) -> MockScript {
    let mut script = MockScript::default();
    for (i, k, case, nl) in paraphrases(cases) {
        let truth = &case.ground_truth;
        let planned = reference_waypoints(truth).expect("valid").unwrap_or_else(|| panic!("{}: no reference path", case.id));
        let points: Vec<Vec<f64>> = if correct[i][k] {
            planned.iter().map(|p| p.to_vec()).collect()
        } else {
            let dash: Vec<Vec<f64>> = std::iter::once(planned[0].to_vec())
                .chain(truth.target_rects().expect("valid").iter().map(|t| vec![tidy(t.center()[0]), tidy(t.center()[1])]))
                .collect();
            if (i + k) % 2 == 0 && !judge_waypoints(&dash, truth).satisfied {
                dash
            } else {
                planned[..planned.len() - 1].iter().map(|p| p.to_vec()).collect()
            }
        };
        assert_eq!(judge_waypoints(&points, truth).satisfied, correct[i][k], "{} paraphrase {}", case.id, k + 1);
        let reply = format!("```json\n{}\n```", serde_json::to_string(&points).expect("json"));
        script.push_keyed(&config.prompts.direct_prompt(nl), reply);
    }
    script
}

/// Generator-only script.
pub fn code_agent_script(cases: &[BenchCase], config: &AgentConfig, correct: &[[bool; PARAPHRASES]]) -> MockScript {
    let mut script = MockScript::default();
    for (i, k, case, nl) in paraphrases(cases) {
        let spec = if correct[i][k] {
            case.ground_truth.clone()
        } else {
            checked_wrong(case, i + k)
        };
        script.push_keyed(&config.prompts.code_prompt(nl), fenced(&spec_document(&spec, i + k)));
    }
    script
}

fn broken_document(spec: &ProblemSpec, style: usize) -> String {
    let mut v: Value = serde_json::from_str(&spec_document(spec, style)).expect("json");
    v.as_object_mut().expect("object").remove("initial");
    serde_json::to_string_pretty(&v).expect("json") + "\n"
}

/// Full-pipeline script. Every plan is replayed once through the real
/// pipeline to confirm it ends as intended.
pub fn pipeline_script(cases: &[BenchCase], config: &AgentConfig, plans: &[[PipelinePlan; PARAPHRASES]]) -> MockScript {
    let mut script = MockScript::default();
    for (i, k, case, nl) in paraphrases(cases) {
        let truth = &case.ground_truth;
        let plan = plans[i][k];
        let style = i + k;
        let mistake = |v: usize| fenced(&spec_document(&checked_wrong(case, v), style + v));
        let right = |s: usize| fenced(&spec_document(truth, s));
        let diff_feedback = |draft: &str| {
            let (_, parsed) = parse_draft(draft);
            let report = semantic_diff(truth, &parsed.expect("draft parses"), DEFAULT_DIFF_TOL).expect("same dimension");
            report.to_string().trim_end().to_string()
        };
        // (generator reply, checker reply or None when the draft does not parse)
        let rounds: Vec<(String, Option<String>)> = match plan {
            PipelinePlan::AcceptCorrect => vec![(right(style), Some("True".into()))],
            PipelinePlan::AcceptAfterFeedback => {
                let w = mistake(style);
                let fb = diff_feedback(&w);
                vec![(w, Some(fb)), (right(style + 1), Some("True".into()))]
            }
            PipelinePlan::AcceptWrong => vec![(mistake(style), Some("True".into()))],
            PipelinePlan::BlockWrong => {
                let (w1, w2) = (mistake(style), mistake(style + 1));
                let (f1, f2) = (diff_feedback(&w1), diff_feedback(&w2));
                vec![(w1, Some(f1)), (w2, Some(f2))]
            }
            PipelinePlan::FalseBlock => vec![
                (right(style), Some("obstacles: the sizes do not match the description.".into())),
                (right(style + 1), Some("targets: the goal region looks shifted.".into())),
            ],
            PipelinePlan::ParseFailure => vec![
                (fenced(&broken_document(truth, style)), None),
                ("I could not write the file for this task.".into(), None),
            ],
        };
        let mut feedback: Option<String> = None;
        for (reply, verdict) in &rounds {
            let prompt = match &feedback {
                None => config.prompts.code_prompt(nl),
                Some(f) => config.prompts.retry_prompt(nl, f),
            };
            script.push_keyed(&prompt, reply.clone());
            let (text, parsed) = parse_draft(reply);
            feedback = Some(match (parsed, verdict) {
                (Err(e), None) => e.to_string(),
                (Ok(_), Some(v)) => {
                    script.push_keyed(&config.prompts.checker_prompt(nl, &text.expect("parsed")), v.clone());
                    v.clone()
                }
                (p, v) => panic!("{} paraphrase {}: draft parse {:?} with verdict {v:?}", case.id, k + 1, p.is_ok()),
            });
        }
    }
    verify_pipeline(cases, config, plans, &script);
    script
}

fn verify_pipeline(cases: &[BenchCase], config: &AgentConfig, plans: &[[PipelinePlan; PARAPHRASES]], script: &MockScript) {
    let mut client = MockClient::new(script);
    for (i, k, case, nl) in paraphrases(cases) {
        let t = pipeline_run(&mut client, config, nl).expect("script covers every prompt");
        let plan = plans[i][k];
        let ok = match (&t.outcome, plan) {
            (Some(Outcome::AcceptedSpec(_)), PipelinePlan::AcceptCorrect | PipelinePlan::AcceptWrong) => t.iterations.len() == 1,
            (Some(Outcome::AcceptedSpec(_)), PipelinePlan::AcceptAfterFeedback) => t.iterations.len() == 2,
            (Some(Outcome::BlockedWithFeedback(_)), PipelinePlan::BlockWrong | PipelinePlan::FalseBlock) => true,
            (Some(Outcome::ParseFailure(_)), PipelinePlan::ParseFailure) => true,
            _ => false,
        };
        assert!(ok, "{} paraphrase {}: {plan:?} ended as {:?}", case.id, k + 1, t.outcome);
    }
    assert_eq!(client.remaining(), 0, "unused script entries");
}

/// The shipped scripts as (file name, contents).
pub fn shipped_scripts(cases: &[BenchCase], config: &AgentConfig) -> Vec<(&'static str, String)> {
    let all = vec![[true; PARAPHRASES]; cases.len()];
    let none = vec![[false; PARAPHRASES]; cases.len()];
    let header = |what: &str| {
        format!("Mock replies for the bundled cases: {what}.\nRegenerate with `cargo run -p gridsynth-bench --example make_scripts`.")
    };
    vec![
        ("direct_headline.txt", direct_script(cases, config, &correct_flags(&DIRECT_COUNTS)).to_text(&header("direct planning, 7 correct"))),
        (
            "code_agent_headline.txt",
            code_agent_script(cases, config, &correct_flags(&CODE_AGENT_COUNTS)).to_text(&header("generator only, 34 correct")),
        ),
        ("pipeline_headline.txt", pipeline_script(cases, config, &headline_pipeline_plans()).to_text(&header("full pipeline, 39 correct"))),
        (
            "pipeline_all_correct.txt",
            pipeline_script(cases, config, &vec![[PipelinePlan::AcceptCorrect; PARAPHRASES]; cases.len()])
                .to_text(&header("full pipeline, every paraphrase accepted and correct")),
        ),
        (
            "pipeline_all_blocked.txt",
            pipeline_script(cases, config, &vec![[PipelinePlan::BlockWrong; PARAPHRASES]; cases.len()])
                .to_text(&header("full pipeline, every paraphrase blocked")),
        ),
        (
            "code_agent_all_correct.txt",
            code_agent_script(cases, config, &all).to_text(&header("generator only, every paraphrase correct")),
        ),
        ("direct_all_wrong.txt", direct_script(cases, config, &none).to_text(&header("direct planning, no paraphrase correct"))),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_match_the_headline_numbers() {
        let summary = |counts: &[usize]| {
            let correct: usize = counts.iter().sum();
            let robust = counts.iter().filter(|&&c| c == 3).count();
            let solved = counts.iter().filter(|&&c| c > 0).count();
            (correct, robust, solved)
        };
        assert_eq!(summary(&DIRECT_COUNTS), (7, 0, 4));
        assert_eq!(summary(&CODE_AGENT_COUNTS), (34, 9, 14));
        assert_eq!(summary(&PIPELINE_COUNTS), (39, 10, 16));
        let plans = headline_pipeline_plans();
        let correct = plans.iter().flatten().filter(|p| p.is_correct()).count();
        assert_eq!(correct, 39);
    }

    #[test]
    fn documents_parse_back_to_the_same_problem() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../cases");
        for case in crate::load_cases(&dir).unwrap() {
            for style in 0..3 {
                let doc = spec_document(&case.ground_truth, style);
                let back = gridsynth_core::spec::parse_spec(&doc).unwrap();
                assert!(semantic_diff(&case.ground_truth, &back, DEFAULT_DIFF_TOL).unwrap().is_empty(), "{} style {style}", case.id);
            }
            for v in 0..6 {
                let w = wrong_spec(&case.ground_truth, v);
                let back = gridsynth_core::spec::parse_spec(&spec_document(&w, v)).unwrap();
                assert!(!semantic_diff(&case.ground_truth, &back, DEFAULT_DIFF_TOL).unwrap().is_empty(), "{} variant {v}", case.id);
            }
        }
    }
}
