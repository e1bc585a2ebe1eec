//! The workspace file: one TOML document naming every artifact a command
//! touches. Relative paths resolve against the file's own directory.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use hypograph_core::agent_runtime::{AgentRuntime, CallBudget, LiveBackend, LiveConfig, PolicyBackend, ScriptedBackend};
use hypograph_core::evolution::DEFAULT_QUALITY_THRESHOLD;
use hypograph_core::explorer::TrainConfig;
use hypograph_core::InvestigationConfig;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Scripted { scenario: PathBuf },
    Live(LiveConfig),
}

fn default_prompts() -> PathBuf {
    "prompts".into()
}

fn default_library() -> PathBuf {
    "library.json".into()
}

fn default_runs() -> PathBuf {
    "runs".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct EvolveSettings {
    pub quality_threshold: f64,
}

impl Default for EvolveSettings {
    fn default() -> Self {
        Self {
            quality_threshold: DEFAULT_QUALITY_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkspaceConfig {
    pub kg: PathBuf,
    #[serde(default = "default_format")]
    pub kg_format: String,
    pub embeddings: PathBuf,
    pub params: PathBuf,
    #[serde(default = "default_prompts")]
    pub prompts: PathBuf,
    #[serde(default = "default_library")]
    pub library: PathBuf,
    #[serde(default = "default_runs")]
    pub runs: PathBuf,
    #[serde(default)]
    pub truth: Option<PathBuf>,
    pub backend: BackendSpec,
    #[serde(default)]
    pub investigation: InvestigationConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub evolve: EvolveSettings,
}

fn default_format() -> String {
    "tsv".into()
}

impl WorkspaceConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let mut ws: WorkspaceConfig =
            toml::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut ws.kg, &mut ws.embeddings, &mut ws.params, &mut ws.prompts, &mut ws.library, &mut ws.runs] {
            fix(p);
        }
        if let Some(t) = ws.truth.as_mut() {
            fix(t);
        }
        if let BackendSpec::Scripted { scenario } = &mut ws.backend {
            fix(scenario);
        }
        Ok(ws)
    }

    pub fn run_dir(&self, run_id: &str) -> Result<PathBuf, CliError> {
        let ok = !run_id.is_empty()
            && !run_id.starts_with('.')
            && run_id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
        if !ok {
            return Err(CliError::data(format!("run id `{run_id}` may only use letters, digits, `-`, `_` and `.`")));
        }
        Ok(self.runs.join(run_id))
    }

    /// An existing run directory.
    pub fn existing_run(&self, run_id: &str) -> Result<PathBuf, CliError> {
        let dir = self.run_dir(run_id)?;
        if !dir.join("result.json").is_file() {
            return Err(CliError::data(format!("unknown run `{run_id}`: {} has no result.json", dir.display())));
        }
        Ok(dir)
    }

    /// Builds the agent runtime; `scenario` replaces a scripted backend's file
    /// or turns a live workspace into a replay.
    pub fn runtime(&self, scenario: Option<&Path>, budget: u32) -> Result<AgentRuntime, CliError> {
        let replay = match (scenario, &self.backend) {
            (Some(path), _) => Some(path),
            (None, BackendSpec::Scripted { scenario }) => Some(scenario.as_path()),
            (None, BackendSpec::Live(_)) => None,
        };
        let backend: Arc<dyn PolicyBackend> = match (replay, &self.backend) {
            (Some(path), _) => {
                let file = File::open(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
                let replay = ScriptedBackend::from_jsonl(BufReader::new(file))
                    .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
                Arc::new(replay)
            }
            (None, BackendSpec::Live(config)) => Arc::new(LiveBackend::new(config.clone())),
            (None, BackendSpec::Scripted { .. }) => unreachable!("scripted workspaces always replay"),
        };
        Ok(AgentRuntime::new(backend, CallBudget::new(budget)))
    }
}

pub fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::data(format!("{what} file {} does not exist", path.display())))
    }
}
