//! Natural-language front end: a generator model drafts a problem file, a
//! checker model compares the draft with the description, and rejected
//! drafts go back to the generator with the checker's feedback for at most
//! `k_max` rounds.

pub mod client;

use std::fmt;
use std::path::Path;

use gridsynth_core::spec::{parse_spec, ProblemSpec, SpecError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{ClientError, LlmClient, RawExchange, DEFAULT_SEED};

pub const DEFAULT_K_MAX: usize = 2;
/// Upper bound on the size of any generator or checker prompt.
pub const PROMPT_TOKEN_BUDGET: usize = 2048;

const CODE_TEMPLATE: &str = include_str!("../prompts/code_agent.txt");
const RETRY_TEMPLATE: &str = include_str!("../prompts/code_agent_retry.txt");
const CHECKER_TEMPLATE: &str = include_str!("../prompts/checker_agent.txt");
const DIRECT_TEMPLATE: &str = include_str!("../prompts/direct_planner.txt");

/// Rough token count: four bytes per token.
pub fn approx_tokens(text: &str) -> usize {
    text.len().div_ceil(4)
}

/// Substitutes `{{NAME}}` placeholders in one pass, so values that happen
/// to contain placeholder syntax are left alone.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + values.iter().map(|v| v.1.len()).sum::<usize>());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}").and_then(|end| values.iter().find(|(k, _)| *k == &after[..end]).map(|v| (end, v.1))) {
            Some((end, value)) => {
                out.push_str(value);
                rest = &after[end + 2..];
            }
            None => {
                out.push_str("{{");
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// The four prompt templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompts {
    pub code: String,
    pub code_retry: String,
    pub checker: String,
    pub direct: String,
}

impl Default for Prompts {
    fn default() -> Self {
        Prompts::builtin()
    }
}

impl Prompts {
    pub fn builtin() -> Self {
        Prompts {
            code: CODE_TEMPLATE.to_string(),
            code_retry: RETRY_TEMPLATE.to_string(),
            checker: CHECKER_TEMPLATE.to_string(),
            direct: DIRECT_TEMPLATE.to_string(),
        }
    }

    /// Loads `code_agent.txt`, `code_agent_retry.txt`, `checker_agent.txt`
    /// and `direct_planner.txt` from a directory.
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let read = |name: &str| std::fs::read_to_string(dir.join(name));
        Ok(Prompts {
            code: read("code_agent.txt")?,
            code_retry: read("code_agent_retry.txt")?,
            checker: read("checker_agent.txt")?,
            direct: read("direct_planner.txt")?,
        })
    }

    pub fn code_prompt(&self, nl: &str) -> String {
        fill(&self.code, &[("DESCRIPTION", nl.trim())])
    }

    pub fn retry_prompt(&self, nl: &str, feedback: &str) -> String {
        let mut p = self.code_prompt(nl);
        p.push_str(&fill(&self.code_retry, &[("FEEDBACK", feedback)]));
        p
    }

    pub fn checker_prompt(&self, nl: &str, spec_text: &str) -> String {
        fill(&self.checker, &[("DESCRIPTION", nl.trim()), ("SPEC", spec_text.trim_end())])
    }

    pub fn direct_prompt(&self, nl: &str) -> String {
        fill(&self.direct, &[("DESCRIPTION", nl.trim())])
    }
}

/// Generator prompt from the built-in template.
pub fn build_code_prompt(nl: &str) -> String {
    Prompts::builtin().code_prompt(nl)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub prompts: Prompts,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub k_max: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            prompts: Prompts::builtin(),
            temperature: 0.0,
            seed: Some(DEFAULT_SEED),
            k_max: DEFAULT_K_MAX,
        }
    }
}

/// Contents of the first fenced code block, without the fence lines.
pub fn extract_code_block(text: &str) -> Option<&str> {
    let open = text.find("```")?;
    let after_open = &text[open + 3..];
    let body_start = after_open.find('\n')? + 1;
    let body = &after_open[body_start..];
    if body.starts_with("```") {
        return Some("");
    }
    let close = body.find("\n```")?;
    Some(&body[..close + 1])
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DraftError {
    #[error("the reply contains no fenced code block")]
    NoCodeBlock,
    #[error(transparent)]
    Spec(#[from] SpecError),
}

/// Extracts and parses the problem file in a generator reply.
pub fn parse_draft(raw: &str) -> (Option<String>, Result<ProblemSpec, DraftError>) {
    match extract_code_block(raw) {
        None => (None, Err(DraftError::NoCodeBlock)),
        Some(block) => (Some(block.to_string()), parse_spec(block).map_err(DraftError::from)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Draft {
    pub prompt: String,
    pub raw: String,
    pub spec_text: Option<String>,
    pub parsed: Result<ProblemSpec, DraftError>,
}

/// One generator call; `prior_feedback` is appended verbatim on retries.
pub fn code_agent_generate(
    client: &mut dyn LlmClient,
    config: &AgentConfig,
    nl: &str,
    prior_feedback: Option<&str>,
) -> Result<Draft, ClientError> {
    let prompt = match prior_feedback {
        Some(f) => config.prompts.retry_prompt(nl, f),
        None => config.prompts.code_prompt(nl),
    };
    let raw = client.complete(&prompt, config.temperature, config.seed)?;
    let (spec_text, parsed) = parse_draft(&raw);
    Ok(Draft {
        prompt,
        raw,
        spec_text,
        parsed,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckerVerdict {
    pub ok: bool,
    /// Empty exactly when `ok`.
    pub feedback: String,
}

impl CheckerVerdict {
    /// `True` after trimming accepts; any other reply is feedback.
    pub fn from_reply(reply: &str) -> Self {
        if reply.trim() == "True" {
            CheckerVerdict {
                ok: true,
                feedback: String::new(),
            }
        } else {
            CheckerVerdict {
                ok: false,
                feedback: reply.to_string(),
            }
        }
    }
}

pub fn checker_agent_validate(
    client: &mut dyn LlmClient,
    config: &AgentConfig,
    nl: &str,
    spec_text: &str,
) -> Result<(String, String, CheckerVerdict), ClientError> {
    let prompt = config.prompts.checker_prompt(nl, spec_text);
    let raw = client.complete(&prompt, config.temperature, config.seed)?;
    let verdict = CheckerVerdict::from_reply(&raw);
    Ok((prompt, raw, verdict))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iteration {
    pub code_agent_prompt: String,
    pub code_agent_raw_output: String,
    pub spec: Option<ProblemSpec>,
    pub parse_error: Option<String>,
    pub checker_prompt: Option<String>,
    pub checker_raw_output: Option<String>,
    pub verdict: Option<CheckerVerdict>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub raw_exchanges: Vec<RawExchange>,
}

impl Iteration {
    /// Text handed to the next generator call or to the user.
    pub fn feedback(&self) -> Option<&str> {
        match (&self.parse_error, &self.verdict) {
            (Some(e), _) => Some(e),
            (None, Some(v)) if !v.ok => Some(&v.feedback),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Outcome {
    AcceptedSpec(ProblemSpec),
    /// Final checker feedback, forwarded to the user.
    BlockedWithFeedback(String),
    /// The last draft did not parse; carries the parser message.
    ParseFailure(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTranscript {
    pub nl_description: String,
    pub iterations: Vec<Iteration>,
    /// `None` only when a client error cut the run short.
    pub outcome: Option<Outcome>,
}

impl AgentTranscript {
    /// The last spec that parsed, accepted or not.
    pub fn last_spec(&self) -> Option<&ProblemSpec> {
        self.iterations.iter().rev().find_map(|i| i.spec.as_ref())
    }

    pub fn accepted(&self) -> Option<&ProblemSpec> {
        match &self.outcome {
            Some(Outcome::AcceptedSpec(s)) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
#[error("{error}")]
pub struct PipelineError {
    pub error: ClientError,
    pub transcript: AgentTranscript,
}

/// Runs generate, check and feedback rounds until the checker accepts or
/// `config.k_max` rounds are used up.
pub fn pipeline_run(client: &mut dyn LlmClient, config: &AgentConfig, nl: &str) -> Result<AgentTranscript, PipelineError> {
    assert!(config.k_max >= 1, "k_max must be at least 1");
    let mut transcript = AgentTranscript {
        nl_description: nl.to_string(),
        iterations: Vec::new(),
        outcome: None,
    };
    let mut feedback: Option<String> = None;
    for round in 1..=config.k_max {
        let draft = match code_agent_generate(client, config, nl, feedback.as_deref()) {
            Ok(d) => d,
            Err(error) => return Err(PipelineError { error, transcript }),
        };
        let mut it = Iteration {
            code_agent_prompt: draft.prompt,
            code_agent_raw_output: draft.raw,
            spec: None,
            parse_error: None,
            checker_prompt: None,
            checker_raw_output: None,
            verdict: None,
            raw_exchanges: client.take_raw_log(),
        };
        match draft.parsed {
            Err(e) => it.parse_error = Some(e.to_string()),
            Ok(spec) => {
                let text = draft.spec_text.expect("parsed drafts have text");
                let checked = checker_agent_validate(client, config, nl, &text);
                it.raw_exchanges.extend(client.take_raw_log());
                let (prompt, raw, verdict) = match checked {
                    Ok(v) => v,
                    Err(error) => {
                        it.spec = Some(spec);
                        transcript.iterations.push(it);
                        return Err(PipelineError { error, transcript });
                    }
                };
                it.checker_prompt = Some(prompt);
                it.checker_raw_output = Some(raw);
                it.spec = Some(spec.clone());
                let ok = verdict.ok;
                it.verdict = Some(verdict);
                if ok {
                    transcript.iterations.push(it);
                    transcript.outcome = Some(Outcome::AcceptedSpec(spec));
                    return Ok(transcript);
                }
            }
        }
        feedback = it.feedback().map(str::to_string);
        let parse_failed = it.parse_error.is_some();
        transcript.iterations.push(it);
        if round == config.k_max {
            let text = feedback.clone().unwrap_or_default();
            transcript.outcome = Some(if parse_failed {
                Outcome::ParseFailure(text)
            } else {
                Outcome::BlockedWithFeedback(text)
            });
        }
    }
    Ok(transcript)
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::AcceptedSpec(_) => write!(f, "accepted"),
            Outcome::BlockedWithFeedback(_) => write!(f, "blocked"),
            Outcome::ParseFailure(_) => write!(f, "parse failure"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_is_single_pass() {
        assert_eq!(fill("a {{X}} b {{Y}}", &[("X", "{{Y}}"), ("Y", "y")]), "a {{Y}} b y");
        assert_eq!(fill("{{unknown}} {{", &[]), "{{unknown}} {{");
    }

    #[test]
    fn code_block_extraction() {
        assert_eq!(extract_code_block("x\n```json\n{\"a\": 1}\n```\ny"), Some("{\"a\": 1}\n"));
        assert_eq!(extract_code_block("```\nfirst\n```\n```\nsecond\n```"), Some("first\n"));
        assert_eq!(extract_code_block("```json\n```"), Some(""));
        assert_eq!(extract_code_block("no fence"), None);
        assert_eq!(extract_code_block("```json\nunterminated"), None);
    }

    #[test]
    fn verdict_trimming() {
        assert!(CheckerVerdict::from_reply("  True \n").ok);
        let v = CheckerVerdict::from_reply("true");
        assert!(!v.ok);
        assert_eq!(v.feedback, "true");
        assert!(!CheckerVerdict::from_reply("True.").ok);
    }

    #[test]
    fn retry_prompt_extends_code_prompt() {
        let p = Prompts::builtin();
        let base = p.code_prompt("go");
        let retry = p.retry_prompt("go", "obstacles: one missing");
        assert!(retry.starts_with(&base));
        assert!(retry.contains("obstacles: one missing"));
    }
}
