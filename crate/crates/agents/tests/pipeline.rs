use gridsynth_agents::client::{ClientError, MockClient, MockScript};
use gridsynth_agents::{
    approx_tokens, build_code_prompt, checker_agent_validate, code_agent_generate, pipeline_run, AgentConfig, DraftError, Outcome,
    Prompts, PROMPT_TOKEN_BUDGET,
};
use gridsynth_core::spec::parse_spec;
use proptest::prelude::*;

const SPEC: &str = include_str!("../../../cases/01_desk_wall/spec.json");
const NL: &str = include_str!("../../../cases/01_desk_wall/paraphrase_1.txt");

fn fenced(body: &str) -> String {
    format!("Here is the file.\n```json\n{body}```\n")
}

fn wrong_spec() -> String {
    // drops the crate obstacle
    SPEC.replace(r#",
    {
      "kind": "center_sides",
      "center": [
        3.4,
        2.8
      ],
      "sides": [
        0.4,
        0.4
      ]
    }"#, "")
}

#[test]
fn wrong_spec_fixture_really_differs() {
    let a = parse_spec(SPEC).unwrap();
    let b = parse_spec(&wrong_spec()).unwrap();
    assert_eq!(a.obstacles.len(), 2);
    assert_eq!(b.obstacles.len(), 1);
}

#[test]
fn accept_on_first_round() {
    let mut client = MockClient::from_responses([fenced(SPEC), "True".to_string()]);
    let t = pipeline_run(&mut client, &AgentConfig::default(), NL).unwrap();
    assert_eq!(t.iterations.len(), 1);
    assert_eq!(t.outcome, Some(Outcome::AcceptedSpec(parse_spec(SPEC).unwrap())));
    assert!(t.iterations[0].verdict.as_ref().unwrap().ok);
    assert_eq!(client.remaining(), 0);
}

#[test]
fn accept_on_second_round_after_feedback() {
    let feedback = "obstacles: the crate centered at (3.4, 2.8) is missing";
    let mut client = MockClient::from_responses([fenced(&wrong_spec()), feedback.to_string(), fenced(SPEC), " True\n".to_string()]);
    let t = pipeline_run(&mut client, &AgentConfig::default(), NL).unwrap();
    assert_eq!(t.iterations.len(), 2);
    assert!(matches!(t.outcome, Some(Outcome::AcceptedSpec(_))));
    assert_eq!(t.iterations[0].verdict.as_ref().unwrap().feedback, feedback);
    assert!(t.iterations[1].code_agent_prompt.contains(feedback));
    assert!(!t.iterations[0].code_agent_prompt.contains(feedback));
}

#[test]
fn blocked_after_two_rejections_forwards_final_feedback() {
    let mut client = MockClient::from_responses([
        fenced(&wrong_spec()),
        "Obstacle 2 missing".to_string(),
        fenced(&wrong_spec()),
        "Obstacle 2 still missing".to_string(),
        "never used".to_string(),
    ]);
    let t = pipeline_run(&mut client, &AgentConfig::default(), NL).unwrap();
    assert_eq!(t.iterations.len(), 2);
    assert_eq!(t.outcome, Some(Outcome::BlockedWithFeedback("Obstacle 2 still missing".to_string())));
    assert!(t.iterations[1].code_agent_prompt.contains("Obstacle 2 missing"));
    assert_eq!(client.remaining(), 1);
    assert!(t.accepted().is_none());
}

#[test]
fn parse_failures_count_as_rounds() {
    let bad = SPEC.replace("\"center_sides\"", "\"circle\"");
    let mut client = MockClient::from_responses([fenced(&bad), "no code here".to_string()]);
    let t = pipeline_run(&mut client, &AgentConfig::default(), NL).unwrap();
    assert_eq!(t.iterations.len(), 2);
    let first = t.iterations[0].parse_error.clone().unwrap();
    assert!(first.contains("obstacles[1]"), "{first}");
    assert!(t.iterations[1].code_agent_prompt.contains(&first));
    assert!(t.iterations[0].checker_prompt.is_none());
    assert_eq!(t.outcome, Some(Outcome::ParseFailure(DraftError::NoCodeBlock.to_string())));
}

#[test]
fn parse_failure_then_rejection_is_blocked() {
    let mut client = MockClient::from_responses([fenced("{}"), fenced(&wrong_spec()), "missing obstacle".to_string()]);
    let t = pipeline_run(&mut client, &AgentConfig::default(), NL).unwrap();
    assert_eq!(t.outcome, Some(Outcome::BlockedWithFeedback("missing obstacle".to_string())));
}

#[test]
fn client_errors_abort_with_partial_transcript() {
    let mut client = MockClient::from_responses([fenced(&wrong_spec())]);
    let err = pipeline_run(&mut client, &AgentConfig::default(), NL).unwrap_err();
    assert!(matches!(err.error, ClientError::ScriptExhausted { .. }));
    assert_eq!(err.transcript.iterations.len(), 1);
    assert!(err.transcript.outcome.is_none());
    assert!(err.transcript.iterations[0].spec.is_some());
}

#[test]
fn generator_reports_field_path_on_malformed_document() {
    let bad = SPEC.replace("\"tau\": 0.3", "\"tau\": \"fast\"");
    let mut client = MockClient::from_responses([fenced(&bad)]);
    let d = code_agent_generate(&mut client, &AgentConfig::default(), NL, None).unwrap();
    let Err(DraftError::Spec(e)) = d.parsed else { panic!("{:?}", d.parsed) };
    assert_eq!(e.path(), Some("tau"));
}

#[test]
fn generator_parses_valid_document() {
    let mut client = MockClient::from_responses([fenced(SPEC)]);
    let d = code_agent_generate(&mut client, &AgentConfig::default(), NL, None).unwrap();
    assert_eq!(d.parsed.unwrap(), parse_spec(SPEC).unwrap());
    assert_eq!(d.prompt, build_code_prompt(NL));
}

#[test]
fn checker_replies() {
    let cfg = AgentConfig::default();
    for (reply, ok) in [("True", true), ("  True ", true), ("Obstacle 2 missing", false)] {
        let mut client = MockClient::from_responses([reply]);
        let (prompt, raw, v) = checker_agent_validate(&mut client, &cfg, NL, SPEC).unwrap();
        assert!(prompt.contains(SPEC.trim_end()) && prompt.contains(NL.trim()));
        assert_eq!(raw, reply);
        assert_eq!(v.ok, ok);
        assert_eq!(v.feedback.is_empty(), ok);
        if !ok {
            assert_eq!(v.feedback, reply);
        }
    }
}

#[test]
fn transcripts_are_deterministic() {
    let run = || {
        let mut client = MockClient::from_responses([fenced(&wrong_spec()), "fix it".to_string(), fenced(SPEC), "True".to_string()]);
        serde_json::to_string(&pipeline_run(&mut client, &AgentConfig::default(), NL).unwrap()).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn code_prompt_contract() {
    let p = build_code_prompt(NL);
    assert_eq!(p, build_code_prompt(NL));
    for needle in ["\"vertices4\"", "\"diagonal\"", "\"center_sides\"", "Go to", "after visiting", "not get closer than 1 unit", "\"clearance\": 1.0"] {
        assert!(p.contains(needle), "missing {needle}");
    }
    assert!(p.contains(NL.trim()));
    // two worked examples, each a single-target and a sequential-target problem
    assert_eq!(p.matches("```json").count(), 2);
}

#[test]
fn prompts_fit_the_token_budget_on_all_fixtures() {
    let prompts = Prompts::builtin();
    let spec_text = |id: &str| std::fs::read_to_string(format!("{}/../../cases/{id}/spec.json", env!("CARGO_MANIFEST_DIR"))).unwrap();
    let mut worst = 0;
    let mut count = 0;
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../cases");
    for entry in std::fs::read_dir(&dir).unwrap() {
        let id = entry.unwrap().file_name().into_string().unwrap();
        let spec = spec_text(&id);
        for k in 1..=3 {
            let nl = std::fs::read_to_string(dir.join(&id).join(format!("paraphrase_{k}.txt"))).unwrap();
            let feedback = "wrong_target: a long feedback paragraph ".repeat(10);
            for p in [
                prompts.code_prompt(&nl),
                prompts.retry_prompt(&nl, &feedback),
                prompts.checker_prompt(&nl, &spec),
                prompts.direct_prompt(&nl),
            ] {
                worst = worst.max(approx_tokens(&p));
            }
            count += 1;
        }
    }
    assert_eq!(count, 60);
    assert!(worst <= PROMPT_TOKEN_BUDGET, "largest prompt is {worst} tokens");
}

#[test]
fn template_hashes_are_pinned() {
    let p = Prompts::builtin();
    let hash = |s: &str| gridsynth_agents::client::prompt_sha256(s);
    assert_eq!(hash(&p.code), "cd9254ef530545f7ec3537c268349e9248f553d2e54cefcb37040732c722a02d");
    assert_eq!(hash(&p.code_retry), "167445ab1ca95c16d314b50b555bafef757141d8fdb2e34ebac4b4eb57902a29");
    assert_eq!(hash(&p.checker), "df7a6bf0141270b944b6eb9fe944c6f6a173fa2d60796f24bee1b9e9d825d4a8");
    assert_eq!(hash(&p.direct), "0a2ee9d8a2f9b79fe0049859f3a07567ee7a86e4dfde472047fc3ef3de0e10d3");
}

#[test]
fn templates_load_from_a_directory() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("prompts");
    assert_eq!(Prompts::from_dir(&dir).unwrap(), Prompts::builtin());
}

fn response() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("True".to_string()),
        Just(" True\n".to_string()),
        Just(fenced(SPEC)),
        Just(fenced(&wrong_spec())),
        Just(fenced("{")),
        Just("```".to_string()),
        "[a-zA-Z ]{0,20}",
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn loop_is_bounded_and_fail_safe(script in prop::collection::vec(response(), 0..12), k_max in 1usize..4) {
        let mut s = MockScript::default();
        for r in &script {
            s.push_ordered(r.clone());
        }
        let cfg = AgentConfig { k_max, ..AgentConfig::default() };
        let mut client = MockClient::new(&s);
        let t = match pipeline_run(&mut client, &cfg, NL) {
            Ok(t) => t,
            Err(e) => e.transcript,
        };
        prop_assert!(t.iterations.len() <= k_max);
        if let Some(Outcome::AcceptedSpec(spec)) = &t.outcome {
            let last = t.iterations.last().unwrap();
            prop_assert!(last.verdict.as_ref().unwrap().ok);
            prop_assert_eq!(last.spec.as_ref(), Some(spec));
        }
        for w in t.iterations.windows(2) {
            let fb = w[0].feedback().unwrap();
            prop_assert!(w[1].code_agent_prompt.contains(fb));
        }
    }
}
