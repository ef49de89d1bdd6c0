use std::path::PathBuf;

use gridsynth_agents::client::{MockClient, MockScript};
use gridsynth_agents::AgentConfig;
use gridsynth_bench::scripts::{headline_pipeline_plans, shipped_scripts, PipelinePlan};
use gridsynth_bench::{load_cases, robustness, run_benchmark, BenchCase, BenchReport, CaseVerdict, OutcomeCategory, Strategy};
use gridsynth_core::abstraction::label_cells;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn cases() -> Vec<BenchCase> {
    load_cases(&root().join("cases")).unwrap()
}

fn run(strategy: Strategy, script: &str) -> BenchReport {
    let text = std::fs::read_to_string(root().join("scripts").join(script)).unwrap();
    let mut client = MockClient::new(&MockScript::parse(&text).unwrap());
    let report = run_benchmark(&cases(), strategy, &mut client, &AgentConfig::default());
    assert_eq!(client.remaining(), 0, "{script} has unused entries");
    report
}

#[test]
fn bundled_cases_are_well_formed() {
    let cases = cases();
    assert_eq!(cases.len(), 20);
    let mut texts = std::collections::HashSet::new();
    for c in &cases {
        assert!(c.paraphrases.iter().all(|p| texts.insert(p.clone())), "{}: repeated paraphrase", c.id);
        let grid = c.ground_truth.grid().unwrap();
        let labels = label_cells(&grid, &c.ground_truth.geometry().unwrap()).unwrap();
        assert!(labels.target_cells.iter().all(|t| t.iter().any(|&b| b)), "{}", c.id);
        assert!(!labels.initial_cells.is_empty());
    }
    // the encodings, goal types and clearance all appear among the ground truths
    let raw: String = cases.iter().map(|c| std::fs::read_to_string(root().join("cases").join(&c.id).join("spec.json")).unwrap()).collect();
    for kind in ["\"diagonal\"", "\"center_sides\"", "\"vertices4\"", "\"point\""] {
        assert!(raw.contains(kind), "{kind}");
    }
    assert!(cases.iter().any(|c| c.ground_truth.targets.len() == 3));
    assert!(cases.iter().any(|c| c.ground_truth.targets.len() == 2));
    assert!(cases.iter().any(|c| c.ground_truth.clearance > 0.0));
    assert!(cases.iter().any(|c| c.ground_truth.obstacles.is_empty()));
}

fn headline(report: &BenchReport) -> (usize, usize, usize) {
    let s = report.summary();
    (s.correct, s.robust, s.solved)
}

#[test]
fn scripted_runs_reproduce_the_headline_counts() {
    let direct = run(Strategy::DirectLlm, "direct_headline.txt");
    let code = run(Strategy::CodeAgentOnly, "code_agent_headline.txt");
    let pipeline = run(Strategy::FullPipeline, "pipeline_headline.txt");
    assert_eq!(headline(&direct), (7, 0, 4));
    assert_eq!(headline(&code), (34, 9, 14));
    assert_eq!(headline(&pipeline), (39, 10, 16));

    let s = code.summary();
    assert_eq!((s.correct_not_checked, s.incorrect_execution), (34, 26));
    let s = pipeline.summary();
    assert_eq!(s.correct_checked, 39);
    assert_eq!(s.incorrect_execution + s.incorrect_blocked, 21);
    let plans: Vec<PipelinePlan> = headline_pipeline_plans().into_iter().flatten().collect();
    let planned = |p: PipelinePlan| plans.iter().filter(|&&q| q == p).count();
    assert_eq!(s.incorrect_execution, planned(PipelinePlan::AcceptWrong));
    assert_eq!(s.false_blocks, planned(PipelinePlan::FalseBlock));
    assert!(s.false_blocks > 0 && s.incorrect_execution > 0);
    assert_eq!(s.correct_not_checked, 0);
    assert_eq!(s.incorrect, 4);
}

#[test]
fn partition_and_monotone_counts() {
    for (strategy, script) in [
        (Strategy::DirectLlm, "direct_headline.txt"),
        (Strategy::DirectLlm, "direct_all_wrong.txt"),
        (Strategy::CodeAgentOnly, "code_agent_headline.txt"),
        (Strategy::CodeAgentOnly, "code_agent_all_correct.txt"),
        (Strategy::FullPipeline, "pipeline_headline.txt"),
        (Strategy::FullPipeline, "pipeline_all_correct.txt"),
        (Strategy::FullPipeline, "pipeline_all_blocked.txt"),
    ] {
        let r = run(strategy, script);
        let total: usize = OutcomeCategory::ALL.iter().map(|&c| r.count(c)).sum();
        assert_eq!(total, 60, "{script}");
        let s = r.summary();
        assert!(s.robust <= s.solved && s.solved <= 20);
        assert_eq!(s.solved + s.incorrect, 20);
        assert!(r.rows.iter().all(|row| row.strategy == strategy));
    }
}

#[test]
fn extreme_scripts() {
    let all = run(Strategy::FullPipeline, "pipeline_all_correct.txt");
    assert_eq!(all.count(OutcomeCategory::CorrectChecked), 60);
    assert_eq!(all.summary().robust, 20);
    assert!(robustness(&all).iter().all(|(_, v)| *v == CaseVerdict::Robust));
    let blocked = run(Strategy::FullPipeline, "pipeline_all_blocked.txt");
    assert_eq!(blocked.count(OutcomeCategory::IncorrectBlocked), 60);
    assert_eq!(blocked.summary().solved, 0);
    assert!(blocked.rows.iter().all(|r| r.iterations == 2 && r.error.is_some()));
    assert_eq!(run(Strategy::CodeAgentOnly, "code_agent_all_correct.txt").summary().robust, 20);
    assert_eq!(run(Strategy::DirectLlm, "direct_all_wrong.txt").summary().solved, 0);
}

#[test]
fn reports_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        run(Strategy::FullPipeline, "pipeline_headline.txt").write(&out).unwrap();
        let read = |n: &str| std::fs::read(out.join(n)).unwrap();
        outputs.push((read("report.csv"), read("summary.txt"), read("transcripts.jsonl")));
    }
    assert_eq!(outputs[0], outputs[1]);
    let csv = String::from_utf8(outputs[0].0.clone()).unwrap();
    assert!(csv.starts_with("case,paraphrase,strategy,category,"));
    assert_eq!(csv.lines().count(), 61);
    let summary = String::from_utf8(outputs[0].1.clone()).unwrap();
    assert!(summary.contains("correct_checked: 39\n") && summary.contains("robust: 10\n") && summary.contains("solved: 16\n"));
    assert_eq!(String::from_utf8(outputs[0].2.clone()).unwrap().lines().count(), 60);
}

#[test]
fn client_failures_mark_paraphrases_incorrect() {
    for strategy in Strategy::ALL {
        let mut client = MockClient::default();
        let r = run_benchmark(&cases(), strategy, &mut client, &AgentConfig::default());
        assert_eq!(r.rows.len(), 60);
        assert_eq!(r.summary().solved, 0);
        assert!(r.rows.iter().all(|row| row.error.as_deref().is_some_and(|e| e.contains("no response left"))));
    }
}

#[test]
fn shipped_scripts_are_current() {
    for (name, text) in shipped_scripts(&cases(), &AgentConfig::default()) {
        let shipped = std::fs::read_to_string(root().join("scripts").join(name)).unwrap();
        assert!(shipped == text, "scripts/{name} is stale; rerun the make_scripts example");
    }
}
