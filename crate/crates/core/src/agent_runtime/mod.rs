//! Agent invocation: prompt rendering, pluggable policy backends, output
//! validation and the LLM call budget.
//!
//! An [`AgentRuntime`] owns one backend, one [`CallBudget`] and the run's
//! audit transcript. All of it is safe to share across threads: budget
//! accounting is a single atomic and transcript appends are serialized.

mod backend;
mod prompt;
mod schema;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use backend::{BackendKind, LiveBackend, LiveConfig, PolicyBackend, ScenarioEntry, ScriptedBackend};
pub use prompt::{
    default_prompt_body, render_prompt, AgentRequest, HistoryView, PromptContext, PromptStore, PromptVersion,
    Thresholds, SHARED_CONSTRAINTS,
};
pub use schema::{extract_json_object, parse_validate, OutputError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgentRole {
    #[serde(rename = "PI")]
    Pi,
    Explorer,
    Proponent,
    Skeptic,
}

impl AgentRole {
    pub const ALL: [AgentRole; 4] = [AgentRole::Pi, AgentRole::Explorer, AgentRole::Proponent, AgentRole::Skeptic];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Pi => "PI",
            AgentRole::Explorer => "Explorer",
            AgentRole::Proponent => "Proponent",
            AgentRole::Skeptic => "Skeptic",
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "PI" | "pi" => Ok(AgentRole::Pi),
            "Explorer" | "explorer" => Ok(AgentRole::Explorer),
            "Proponent" | "proponent" => Ok(AgentRole::Proponent),
            "Skeptic" | "skeptic" => Ok(AgentRole::Skeptic),
            other => Err(format!("unknown agent role `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentMode {
    Init,
    Score,
    Revise,
    ReportAndEvolve,
    BuildChain,
    BuildCounterchain,
    ExecuteActions,
}

impl AgentMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentMode::Init => "init",
            AgentMode::Score => "score",
            AgentMode::Revise => "revise",
            AgentMode::ReportAndEvolve => "report_and_evolve",
            AgentMode::BuildChain => "build_chain",
            AgentMode::BuildCounterchain => "build_counterchain",
            AgentMode::ExecuteActions => "execute_actions",
        }
    }

    pub fn valid_for(self, role: AgentRole) -> bool {
        use AgentMode::*;
        match role {
            AgentRole::Pi => matches!(self, Init | Score | Revise | ReportAndEvolve),
            AgentRole::Proponent => matches!(self, BuildChain | ExecuteActions),
            AgentRole::Skeptic => matches!(self, BuildCounterchain | ExecuteActions),
            AgentRole::Explorer => false,
        }
    }
}

impl fmt::Display for AgentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        use AgentMode::*;
        Ok(match s {
            "init" => Init,
            "score" => Score,
            "revise" => Revise,
            "report_and_evolve" => ReportAndEvolve,
            "build_chain" => BuildChain,
            "build_counterchain" => BuildCounterchain,
            "execute_actions" => ExecuteActions,
            other => return Err(format!("unknown agent mode `{other}`")),
        })
    }
}

/// Hard cap on live backend calls. `used` never exceeds `max_calls`.
#[derive(Debug)]
pub struct CallBudget {
    max_calls: u32,
    used: AtomicU32,
}

impl CallBudget {
    pub fn new(max_calls: u32) -> Self {
        Self {
            max_calls,
            used: AtomicU32::new(0),
        }
    }

    pub fn with_used(max_calls: u32, used: u32) -> Self {
        Self {
            max_calls,
            used: AtomicU32::new(used.min(max_calls)),
        }
    }

    pub fn max_calls(&self) -> u32 {
        self.max_calls
    }

    pub fn used(&self) -> u32 {
        self.used.load(Ordering::SeqCst)
    }

    pub fn has_headroom(&self) -> bool {
        self.used() < self.max_calls
    }

    /// Reserves one call; fails without side effects when exhausted.
    pub fn try_reserve(&self) -> bool {
        self.used
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |u| (u < self.max_calls).then_some(u + 1))
            .is_ok()
    }
}

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("call budget exhausted ({used}/{max} live calls)")]
    BudgetExhausted { used: u32, max: u32 },
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("scenario exhausted at step {step}: no entry for {role}/{mode}")]
    ScenarioExhausted { step: usize, role: AgentRole, mode: AgentMode },
    #[error("{role}/{mode} output rejected after retry: {detail}")]
    Invalid { role: AgentRole, mode: AgentMode, detail: String },
    #[error("missing context field `{0}`")]
    MissingContext(&'static str),
    #[error("mode {mode} is not valid for role {role}")]
    InvalidMode { role: AgentRole, mode: AgentMode },
}

impl RuntimeError {
    /// Errors that end the investigation rather than one agent turn.
    pub fn is_fatal(&self) -> bool {
        matches!(self, RuntimeError::Backend(_) | RuntimeError::ScenarioExhausted { .. })
    }
}

/// One audited backend exchange. Written verbatim to `transcript.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub seq: usize,
    pub role: AgentRole,
    pub mode: AgentMode,
    pub backend: BackendKind,
    pub attempt: u32,
    pub system: String,
    pub user: String,
    pub response: String,
}

pub struct AgentRuntime {
    backend: Arc<dyn PolicyBackend>,
    budget: CallBudget,
    transcript: Mutex<Vec<TranscriptEntry>>,
}

impl AgentRuntime {
    pub fn new(backend: Arc<dyn PolicyBackend>, budget: CallBudget) -> Self {
        Self {
            backend,
            budget,
            transcript: Mutex::new(Vec::new()),
        }
    }

    pub fn budget(&self) -> &CallBudget {
        &self.budget
    }

    pub fn backend_kind(&self) -> BackendKind {
        self.backend.kind()
    }

    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.transcript.lock().expect("transcript lock").clone()
    }

    /// Transcript as JSON lines.
    pub fn transcript_jsonl(&self) -> String {
        self.transcript
            .lock()
            .expect("transcript lock")
            .iter()
            .map(|e| serde_json::to_string(e).expect("transcript entry serializes") + "\n")
            .collect()
    }

    /// Sends one request. Live calls draw one unit from the budget, scripted
    /// replays draw none.
    pub fn invoke(&self, request: &AgentRequest, attempt: u32) -> Result<String, RuntimeError> {
        let kind = self.backend.kind();
        if !self.budget.has_headroom() || (kind == BackendKind::Live && !self.budget.try_reserve()) {
            return Err(RuntimeError::BudgetExhausted {
                used: self.budget.used(),
                max: self.budget.max_calls(),
            });
        }
        let response = self.backend.complete(request)?;
        let mut log = self.transcript.lock().expect("transcript lock");
        let seq = log.len();
        log.push(TranscriptEntry {
            seq,
            role: request.role,
            mode: request.mode,
            backend: kind,
            attempt,
            system: request.system.clone(),
            user: request.user.clone(),
            response: response.clone(),
        });
        Ok(response)
    }

    /// Invokes, validates against the role/mode schema and runs `check` on the
    /// payload. One retry is allowed; the retry request carries the rejection
    /// text so the policy can correct itself.
    pub fn call<T>(
        &self,
        request: &AgentRequest,
        mut check: impl FnMut(&Value) -> Result<T, String>,
    ) -> Result<T, RuntimeError> {
        let mut req = request.clone();
        let mut last_error = String::new();
        for attempt in 0..2 {
            let raw = self.invoke(&req, attempt)?;
            match parse_validate(request.role, request.mode, &raw)
                .map_err(|e| e.to_string())
                .and_then(|payload| check(&payload))
            {
                Ok(out) => return Ok(out),
                Err(e) => {
                    log::warn!("{}/{} output rejected (attempt {attempt}): {e}", request.role, request.mode);
                    last_error = e;
                    req = request.with_correction(&last_error);
                }
            }
        }
        Err(RuntimeError::Invalid {
            role: request.role,
            mode: request.mode,
            detail: last_error,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(role: AgentRole, mode: AgentMode) -> AgentRequest {
        AgentRequest {
            role,
            mode,
            system: "sys".into(),
            user: "{}".into(),
        }
    }

    #[test]
    fn mode_validity() {
        assert!(AgentMode::Score.valid_for(AgentRole::Pi));
        assert!(!AgentMode::Score.valid_for(AgentRole::Proponent));
        assert!(AgentMode::BuildCounterchain.valid_for(AgentRole::Skeptic));
        assert!(!AgentMode::BuildChain.valid_for(AgentRole::Skeptic));
        assert!(!AgentMode::Init.valid_for(AgentRole::Explorer));
    }

    #[test]
    fn scripted_invoke_leaves_budget() {
        let backend = ScriptedBackend::new(vec![ScenarioEntry::new(AgentRole::Pi, Some(AgentMode::Init), "X")]);
        let rt = AgentRuntime::new(Arc::new(backend), CallBudget::new(3));
        assert_eq!(rt.invoke(&request(AgentRole::Pi, AgentMode::Init), 0).unwrap(), "X");
        assert_eq!(rt.budget().used(), 0);
        assert_eq!(rt.transcript().len(), 1);
    }

    #[test]
    fn exhausted_budget_makes_no_call() {
        let backend = ScriptedBackend::new(vec![ScenarioEntry::new(AgentRole::Pi, None, "X")]);
        let rt = AgentRuntime::new(Arc::new(backend), CallBudget::with_used(2, 2));
        let err = rt.invoke(&request(AgentRole::Pi, AgentMode::Init), 0).unwrap_err();
        assert!(matches!(err, RuntimeError::BudgetExhausted { used: 2, max: 2 }));
        assert!(rt.transcript().is_empty());
    }

    #[test]
    fn budget_reservations_are_atomic() {
        let budget = Arc::new(CallBudget::new(50));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let b = Arc::clone(&budget);
                std::thread::spawn(move || (0..20).filter(|_| b.try_reserve()).count())
            })
            .collect();
        let granted: usize = handles.into_iter().map(|h| h.join().unwrap()).sum();
        assert_eq!(granted, 50);
        assert_eq!(budget.used(), 50);
    }

    #[test]
    fn call_retries_once_with_correction() {
        let backend = ScriptedBackend::new(vec![
            ScenarioEntry::new(AgentRole::Pi, None, "not json"),
            ScenarioEntry::new(AgentRole::Pi, None, r#"{"plan":{"rounds":2}}"#),
        ]);
        let rt = AgentRuntime::new(Arc::new(backend), CallBudget::new(5));
        let plan = rt.call(&request(AgentRole::Pi, AgentMode::Init), |v| Ok(v.clone())).unwrap();
        assert_eq!(plan["plan"]["rounds"], 2);
        let log = rt.transcript();
        assert_eq!(log.len(), 2);
        assert_eq!(log[1].attempt, 1);
        assert!(log[1].user.contains("rejected"), "{}", log[1].user);
    }

    #[test]
    fn second_failure_is_final() {
        let backend = ScriptedBackend::new(vec![
            ScenarioEntry::new(AgentRole::Pi, None, "nope"),
            ScenarioEntry::new(AgentRole::Pi, None, "still nope"),
            ScenarioEntry::new(AgentRole::Pi, None, r#"{"plan":{}}"#),
        ]);
        let rt = AgentRuntime::new(Arc::new(backend), CallBudget::new(5));
        let err = rt.call(&request(AgentRole::Pi, AgentMode::Init), |v| Ok(v.clone())).unwrap_err();
        assert!(matches!(err, RuntimeError::Invalid { .. }));
        assert_eq!(rt.transcript().len(), 2);
    }
}
