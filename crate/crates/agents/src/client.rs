//! The language-model boundary: a trait, a scripted replay client and an
//! HTTP chat-completion client.

use std::collections::{HashMap, VecDeque};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const API_KEY_VAR: &str = "GRIDSYNTH_LLM_KEY";
pub const DEFAULT_SEED: u64 = 7;
/// Entry delimiter of mock script files.
pub const SCRIPT_DELIMITER: &str = "=====";
const KEY_PREFIX: &str = "prompt-sha256:";

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
pub enum ClientError {
    #[error("mock script has no response left for prompt {prompt_sha256}")]
    ScriptExhausted { prompt_sha256: String },
    #[error("mock script line {line}: {message}")]
    BadScript { line: usize, message: String },
    #[error("environment variable {0} is not set")]
    MissingApiKey(String),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint answered HTTP {status} after {attempts} attempt(s): {body}")]
    Status { status: u16, attempts: u32, body: String },
    #[error("malformed completion response: {0}")]
    BadResponse(String),
}

/// Request and response bodies of one HTTP exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawExchange {
    pub request: String,
    pub response: String,
}

pub trait LlmClient {
    fn complete(&mut self, prompt: &str, temperature: f64, seed: Option<u64>) -> Result<String, ClientError>;

    /// Raw exchanges recorded since the last call, if the client logs them.
    fn take_raw_log(&mut self) -> Vec<RawExchange> {
        Vec::new()
    }
}

pub fn prompt_sha256(prompt: &str) -> String {
    let digest = Sha256::digest(prompt.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptEntry {
    /// Prompt hash this response answers; `None` serves prompts in order.
    pub key: Option<String>,
    pub response: String,
}

/// A plain-text list of responses.
///
/// ```text
/// # comments are allowed before the first entry
/// =====
/// served to the first prompt without a keyed entry
/// ===== prompt-sha256:<64 hex digits>
/// served when the prompt hashes to that value
/// ```
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MockScript {
    pub entries: Vec<ScriptEntry>,
}

impl MockScript {
    pub fn parse(text: &str) -> Result<Self, ClientError> {
        let mut entries: Vec<ScriptEntry> = Vec::new();
        let mut body: Option<Vec<&str>> = None;
        let bad = |line: usize, message: &str| ClientError::BadScript {
            line,
            message: message.to_string(),
        };
        for (i, line) in text.lines().enumerate() {
            if let Some(rest) = line.strip_prefix(SCRIPT_DELIMITER) {
                if let Some(lines) = body.take() {
                    entries.last_mut().expect("open entry").response = lines.join("\n");
                }
                let rest = rest.trim();
                let key = if rest.is_empty() {
                    None
                } else {
                    let hex = rest.strip_prefix(KEY_PREFIX).ok_or_else(|| bad(i + 1, "expected `prompt-sha256:<hex>`"))?;
                    if hex.len() != 64 || !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
                        return Err(bad(i + 1, "prompt hash must be 64 hex digits"));
                    }
                    Some(hex.to_ascii_lowercase())
                };
                entries.push(ScriptEntry {
                    key,
                    response: String::new(),
                });
                body = Some(Vec::new());
            } else if let Some(lines) = body.as_mut() {
                lines.push(line);
            } else if !line.trim().is_empty() && !line.starts_with('#') {
                return Err(bad(i + 1, "text before the first delimiter"));
            }
        }
        if let Some(lines) = body {
            entries.last_mut().expect("open entry").response = lines.join("\n");
        }
        Ok(MockScript { entries })
    }

    pub fn push_ordered(&mut self, response: impl Into<String>) {
        self.entries.push(ScriptEntry {
            key: None,
            response: response.into(),
        });
    }

    pub fn push_keyed(&mut self, prompt: &str, response: impl Into<String>) {
        self.entries.push(ScriptEntry {
            key: Some(prompt_sha256(prompt)),
            response: response.into(),
        });
    }

    /// Inverse of [`MockScript::parse`]. Panics on a response line that
    /// would read as a delimiter.
    pub fn to_text(&self, header: &str) -> String {
        let mut out = String::new();
        for line in header.lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        for e in &self.entries {
            assert!(
                !e.response.lines().any(|l| l.starts_with(SCRIPT_DELIMITER)),
                "response contains a delimiter line"
            );
            out.push_str(SCRIPT_DELIMITER);
            if let Some(k) = &e.key {
                out.push(' ');
                out.push_str(KEY_PREFIX);
                out.push_str(k);
            }
            out.push('\n');
            out.push_str(&e.response);
            out.push('\n');
        }
        out
    }
}

/// Replays a script. Keyed entries for a prompt are used first, in file
/// order; otherwise the next ordered entry is served.
#[derive(Debug, Clone, Default)]
pub struct MockClient {
    ordered: VecDeque<String>,
    keyed: HashMap<String, VecDeque<String>>,
    /// Hashes of every prompt received.
    pub calls: Vec<String>,
}

impl MockClient {
    pub fn new(script: &MockScript) -> Self {
        let mut client = MockClient::default();
        for e in &script.entries {
            match &e.key {
                None => client.ordered.push_back(e.response.clone()),
                Some(k) => client.keyed.entry(k.clone()).or_default().push_back(e.response.clone()),
            }
        }
        client
    }

    pub fn from_responses<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut script = MockScript::default();
        for r in responses {
            script.push_ordered(r);
        }
        MockClient::new(&script)
    }

    pub fn remaining(&self) -> usize {
        self.ordered.len() + self.keyed.values().map(VecDeque::len).sum::<usize>()
    }
}

impl LlmClient for MockClient {
    fn complete(&mut self, prompt: &str, _temperature: f64, _seed: Option<u64>) -> Result<String, ClientError> {
        let key = prompt_sha256(prompt);
        self.calls.push(key.clone());
        if let Some(r) = self.keyed.get_mut(&key).and_then(VecDeque::pop_front) {
            return Ok(r);
        }
        self.ordered.pop_front().ok_or(ClientError::ScriptExhausted { prompt_sha256: key })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    /// Base URL; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    pub api_key: String,
    /// Extra attempts after the first on transport errors, 429 and 5xx.
    pub max_retries: u32,
    pub retry_backoff: Duration,
    pub timeout: Duration,
    pub log_raw: bool,
}

impl RemoteConfig {
    /// Reads the key from the environment.
    pub fn from_env(base_url: &str, model: &str) -> Result<Self, ClientError> {
        let api_key = std::env::var(API_KEY_VAR).map_err(|_| ClientError::MissingApiKey(API_KEY_VAR.to_string()))?;
        Ok(RemoteConfig {
            base_url: base_url.to_string(),
            model: model.to_string(),
            api_key,
            max_retries: 2,
            retry_backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(120),
            log_raw: false,
        })
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    content: Option<String>,
}

/// Blocking chat-completion client.
pub struct RemoteClient {
    config: RemoteConfig,
    agent: ureq::Agent,
    raw: Vec<RawExchange>,
}

impl RemoteClient {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        RemoteClient {
            config,
            agent,
            raw: Vec::new(),
        }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }
}

fn retryable(status: u16) -> bool {
    status == 429 || status >= 500
}

impl LlmClient for RemoteClient {
    fn complete(&mut self, prompt: &str, temperature: f64, seed: Option<u64>) -> Result<String, ClientError> {
        let body = serde_json::to_string(&ChatRequest {
            model: &self.config.model,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature,
            seed,
        })
        .expect("request serializes");
        let url = self.endpoint();
        let mut attempt = 0;
        let text = loop {
            attempt += 1;
            let result = self
                .agent
                .post(&url)
                .set("Authorization", &format!("Bearer {}", self.config.api_key))
                .set("Content-Type", "application/json")
                .send_string(&body);
            let error = match result {
                Ok(resp) => match resp.into_string() {
                    Ok(text) => break text,
                    Err(e) => ClientError::Transport {
                        attempts: attempt,
                        message: e.to_string(),
                    },
                },
                Err(ureq::Error::Status(status, resp)) => {
                    let reply = resp.into_string().unwrap_or_default();
                    if self.config.log_raw {
                        self.raw.push(RawExchange {
                            request: body.clone(),
                            response: reply.clone(),
                        });
                    }
                    let error = ClientError::Status {
                        status,
                        attempts: attempt,
                        body: reply,
                    };
                    if !retryable(status) {
                        return Err(error);
                    }
                    error
                }
                Err(e) => ClientError::Transport {
                    attempts: attempt,
                    message: e.to_string(),
                },
            };
            if attempt > self.config.max_retries {
                return Err(error);
            }
            log::warn!("completion attempt {attempt} failed, retrying: {error}");
            std::thread::sleep(self.config.retry_backoff * attempt);
        };
        if self.config.log_raw {
            self.raw.push(RawExchange {
                request: body.clone(),
                response: text.clone(),
            });
        }
        let parsed: ChatResponse = serde_json::from_str(&text).map_err(|e| ClientError::BadResponse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ClientError::BadResponse("no message content in first choice".to_string()))
    }

    fn take_raw_log(&mut self) -> Vec<RawExchange> {
        std::mem::take(&mut self.raw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn script_round_trips() {
        let mut s = MockScript::default();
        s.push_ordered("first\n\nwith blank line");
        s.push_keyed("some prompt", "keyed");
        s.push_ordered("");
        let text = s.to_text("header line");
        assert!(text.starts_with("# header line\n"));
        assert_eq!(MockScript::parse(&text).unwrap(), s);
    }

    #[test]
    fn keyed_entries_take_precedence_and_queue_per_key() {
        let mut s = MockScript::default();
        s.push_ordered("ordered 1");
        s.push_keyed("p", "keyed 1");
        s.push_keyed("p", "keyed 2");
        s.push_ordered("ordered 2");
        let mut c = MockClient::new(&s);
        assert_eq!(c.complete("q", 0.0, None).unwrap(), "ordered 1");
        assert_eq!(c.complete("p", 0.0, None).unwrap(), "keyed 1");
        assert_eq!(c.complete("p", 0.0, None).unwrap(), "keyed 2");
        assert_eq!(c.complete("p", 0.0, None).unwrap(), "ordered 2");
        assert!(matches!(c.complete("p", 0.0, None), Err(ClientError::ScriptExhausted { .. })));
        assert_eq!(c.calls.len(), 5);
    }

    #[test]
    fn malformed_scripts_are_rejected() {
        assert!(matches!(MockScript::parse("stray\n=====\nx"), Err(ClientError::BadScript { line: 1, .. })));
        assert!(matches!(MockScript::parse("===== prompt-sha256:abc\nx"), Err(ClientError::BadScript { line: 1, .. })));
        assert!(matches!(MockScript::parse("===== key\nx"), Err(ClientError::BadScript { .. })));
        assert_eq!(MockScript::parse("# only comments\n\n").unwrap().entries.len(), 0);
    }

    #[test]
    fn prompt_hash_is_sha256_hex() {
        assert_eq!(prompt_sha256(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
