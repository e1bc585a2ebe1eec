use std::io::BufRead;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{AgentMode, AgentRequest, AgentRole, RuntimeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Live,
    Scripted,
}

/// Something that turns a rendered request into raw model text.
pub trait PolicyBackend: Send + Sync {
    fn kind(&self) -> BackendKind;
    fn complete(&self, request: &AgentRequest) -> Result<String, RuntimeError>;
}

/// One scripted reply. `mode: None` matches any mode of the role.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioEntry {
    pub role: AgentRole,
    pub mode: Option<AgentMode>,
    pub response: String,
}

impl ScenarioEntry {
    pub fn new(role: AgentRole, mode: Option<AgentMode>, response: impl Into<String>) -> Self {
        Self {
            role,
            mode,
            response: response.into(),
        }
    }
}

#[derive(Deserialize)]
struct RawEntry {
    role: String,
    #[serde(default)]
    mode: Option<String>,
    response: Value,
}

/// Deterministic replay keyed by the (role, mode) sequence. Each call takes the
/// first unconsumed entry for its role whose mode matches.
pub struct ScriptedBackend {
    entries: Vec<ScenarioEntry>,
    state: Mutex<ReplayState>,
}

struct ReplayState {
    consumed: Vec<bool>,
    calls: usize,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ScenarioEntry>) -> Self {
        let consumed = vec![false; entries.len()];
        Self {
            entries,
            state: Mutex::new(ReplayState { consumed, calls: 0 }),
        }
    }

    /// Reads a JSON-lines scenario of `{role, mode, response}`. `response` may
    /// be a string or any JSON value (serialized compactly); `mode` may be
    /// `"*"` or absent to match any mode.
    pub fn from_jsonl<R: BufRead>(reader: R) -> Result<Self, String> {
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| format!("line {}: {e}", i + 1))?;
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let raw: RawEntry = serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?;
            let role = raw.role.parse().map_err(|e| format!("line {}: {e}", i + 1))?;
            let mode = match raw.mode.as_deref() {
                None | Some("*") => None,
                Some(m) => Some(m.parse().map_err(|e| format!("line {}: {e}", i + 1))?),
            };
            let response = match raw.response {
                Value::String(s) => s,
                other => other.to_string(),
            };
            entries.push(ScenarioEntry { role, mode, response });
        }
        Ok(Self::new(entries))
    }

    pub fn remaining(&self) -> usize {
        self.state.lock().expect("replay lock").consumed.iter().filter(|c| !**c).count()
    }
}

impl PolicyBackend for ScriptedBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Scripted
    }

    fn complete(&self, request: &AgentRequest) -> Result<String, RuntimeError> {
        let mut state = self.state.lock().expect("replay lock");
        let step = state.calls;
        state.calls += 1;
        let hit = self.entries.iter().enumerate().position(|(i, e)| {
            !state.consumed[i] && e.role == request.role && e.mode.is_none_or(|m| m == request.mode)
        });
        match hit {
            Some(i) => {
                state.consumed[i] = true;
                Ok(self.entries[i].response.clone())
            }
            None => Err(RuntimeError::ScenarioExhausted {
                step,
                role: request.role,
                mode: request.mode,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveConfig {
    /// Base URL of a chat-completions style API, e.g. `http://host/v1`.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub temperature: f64,
}

fn default_key_env() -> String {
    "HYPOGRAPH_API_KEY".into()
}

fn default_timeout() -> u64 {
    120
}

pub struct LiveBackend {
    config: LiveConfig,
    agent: ureq::Agent,
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Self { config, agent }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, body: &Value) -> Result<String, String> {
        let mut req = self.agent.post(&self.endpoint());
        if let Ok(key) = std::env::var(&self.config.api_key_env) {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| e.to_string())?;
        let v: Value = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| "response has no choices[0].message.content".to_string())
    }
}

impl PolicyBackend for LiveBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Live
    }

    fn complete(&self, request: &AgentRequest) -> Result<String, RuntimeError> {
        let body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
        });
        match self.attempt(&body) {
            Ok(text) => Ok(text),
            Err(first) => {
                log::warn!("live backend call failed, retrying once: {first}");
                self.attempt(&body)
                    .map_err(|second| RuntimeError::Backend(format!("{second} (after retry; first error: {first})")))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(role: AgentRole, mode: AgentMode) -> AgentRequest {
        AgentRequest {
            role,
            mode,
            system: String::new(),
            user: String::new(),
        }
    }

    #[test]
    fn replay_and_exhaustion() {
        let b = ScriptedBackend::new(vec![ScenarioEntry::new(AgentRole::Pi, Some(AgentMode::Init), "A")]);
        assert_eq!(b.complete(&req(AgentRole::Pi, AgentMode::Init)).unwrap(), "A");
        let err = b.complete(&req(AgentRole::Pi, AgentMode::Init)).unwrap_err();
        assert!(matches!(err, RuntimeError::ScenarioExhausted { step: 1, .. }), "{err}");
    }

    #[test]
    fn entries_are_matched_per_role() {
        let b = ScriptedBackend::new(vec![
            ScenarioEntry::new(AgentRole::Skeptic, None, "s1"),
            ScenarioEntry::new(AgentRole::Proponent, Some(AgentMode::BuildChain), "p1"),
            ScenarioEntry::new(AgentRole::Skeptic, None, "s2"),
        ]);
        assert_eq!(b.complete(&req(AgentRole::Proponent, AgentMode::BuildChain)).unwrap(), "p1");
        assert_eq!(b.complete(&req(AgentRole::Skeptic, AgentMode::ExecuteActions)).unwrap(), "s1");
        assert_eq!(b.complete(&req(AgentRole::Skeptic, AgentMode::BuildCounterchain)).unwrap(), "s2");
        assert_eq!(b.remaining(), 0);
    }

    #[test]
    fn jsonl_loading() {
        let text = r#"{"role":"PI","mode":"init","response":{"plan":{"rounds":2}}}
{"role":"Proponent","mode":"*","response":"raw text"}
"#;
        let b = ScriptedBackend::from_jsonl(text.as_bytes()).unwrap();
        assert_eq!(b.complete(&req(AgentRole::Pi, AgentMode::Init)).unwrap(), r#"{"plan":{"rounds":2}}"#);
        assert_eq!(b.complete(&req(AgentRole::Proponent, AgentMode::ExecuteActions)).unwrap(), "raw text");
        assert!(ScriptedBackend::from_jsonl(&br#"{"role":"Boss","response":"x"}"#[..]).is_err());
    }

    #[test]
    fn ten_step_replay_is_repeatable() {
        let entries: Vec<_> = (0..10)
            .map(|i| {
                let role = if i % 2 == 0 { AgentRole::Proponent } else { AgentRole::Skeptic };
                ScenarioEntry::new(role, None, format!("r{i}"))
            })
            .collect();
        let transcript = |b: &ScriptedBackend| -> Vec<String> {
            (0..10)
                .map(|i| {
                    let (role, mode) = if i % 2 == 0 {
                        (AgentRole::Proponent, AgentMode::BuildChain)
                    } else {
                        (AgentRole::Skeptic, AgentMode::BuildCounterchain)
                    };
                    b.complete(&req(role, mode)).unwrap()
                })
                .collect()
        };
        let a = transcript(&ScriptedBackend::new(entries.clone()));
        let b = transcript(&ScriptedBackend::new(entries));
        assert_eq!(a, b);
    }
}
