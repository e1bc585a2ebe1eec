//! Role prompts, their versions on disk, and request rendering.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{AgentMode, AgentRole, RuntimeError};
use crate::canonical_json;
use crate::evolution::Heuristic;

pub const SHARED_CONSTRAINTS: &str = "\
- Reply with exactly one UTF-8 JSON object. No Markdown, no prose around it.
- Do not invent sources and do not give clinical advice. Say so when evidence is thin.
- Only the Proponent and the Skeptic change the evidence graph; the PI never edits it.
- Use the field names of the reply format. Optional fields may be omitted.";

/// Built-in version-0 instructions for each role.
pub fn default_prompt_body(role: AgentRole) -> &'static str {
    match role {
        AgentRole::Pi => "\
You lead an investigation into whether a candidate entity is linked to the query entity by the target relation.
You judge the evidence graph, rank hypotheses, plan work for the Proponent and the Skeptic, and audit finished runs.
You never add nodes or edges yourself. You may ask for fresh seed hypotheses but never name them.",
        AgentRole::Explorer => "\
You propose candidate entities for the query from knowledge graph embeddings. This role is served by the embedding scorer.",
        AgentRole::Proponent => "\
You argue for the hypothesis in focus. Add mechanistic support chains to the evidence graph, for example
candidate -> Target -> Pathway -> query, aiming for one or two chains that share no edges.
Give every edge a weight in [0, 1] and a one-line rationale. Merge duplicate nodes. Leave risks and refutations to the Skeptic.",
        AgentRole::Skeptic => "\
You challenge the hypothesis in focus. Add counter-evidence: safety and contraindication risks, mechanistic contradictions,
pharmacokinetic barriers, and gaps between phenotype and outcome. Point refutes or contradicts edges at the hypothesis or its claims,
record conflict hotspots, and keep the graph small.",
    }
}

fn reply_format(role: AgentRole, mode: AgentMode) -> &'static str {
    match (role, mode) {
        (AgentRole::Pi, AgentMode::Init) => {
            r#"{"plan":{"rounds":int,"weights":{"alpha_support":..,"beta_refute":..,"gamma_mech":..,"delta_disjoint":..,"lambda_conflict":..},"stopping":{"delta_threshold":number}}}"#
        }
        (AgentRole::Pi, AgentMode::Score) => {
            r#"{"scoring_summary":[{"hypothesis_id":"H1","score":0..1}],"ranking":["H1"],"delta_since_last_round":number,"stop_decision":{"should_stop":bool},"weights":{optional, each in [0,4]}}"#
        }
        (AgentRole::Pi, AgentMode::Revise) => {
            r#"{"revisions":[{"hypothesis_id":"H1","graph_actions":[{"type":"...","assignee":"Proponent|Skeptic","detail":"..."}],"debate_focus":["..."]}],"seed_request":{"should_regenerate":bool,"reason":"..."}}"#
        }
        (AgentRole::Pi, AgentMode::ReportAndEvolve) => {
            r#"{"final_recommendations":[{"hypothesis_id":"H1","score":0..1}],"pivotal_motifs":[{"description":"...","hypothesis_id":"H1","refs":["node id or source->target"]}],"unproductive_paths":[...],"residual_gaps":["..."],"prompt_patches":[{"role":"Proponent","patch":"..."}],"distillable":["..."],"heuristics":["WHEN ..., THEN ..."]}"#
        }
        _ => {
            r#"{"graph_updates":{"add_nodes":[{"id":"n1","type":"Target|Pathway|Phenotype|Mechanism|Risk|Claim","label":"..."}],"add_edges":[{"source":"...","target":"...","relation":"supports|refutes|entails|acts_on|involved_in|contradicts","weight":0..1,"rationale":"..."}],"merge":[{"keep":"...","remove":"..."}],"conflict_hotspots":[{"topic":"...","pro_nodes":[],"con_nodes":[]}]}}"#
        }
    }
}

/// A versioned instruction document for one role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptVersion {
    pub role: AgentRole,
    pub version: u32,
    pub body: String,
    #[serde(default)]
    pub parent_version: Option<u32>,
    #[serde(default)]
    pub patch_note: Option<String>,
}

impl PromptVersion {
    pub fn initial(role: AgentRole) -> Self {
        Self {
            role,
            version: 0,
            body: default_prompt_body(role).to_string(),
            parent_version: None,
            patch_note: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub stop_delta: f64,
    pub saturation_ratio: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            stop_delta: 0.03,
            saturation_ratio: 0.65,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryView {
    pub round: u32,
    pub last_scores: Vec<Value>,
}

/// Everything a request may draw on. Which fields are required depends on the
/// (role, mode) pair.
#[derive(Debug, Clone, Default)]
pub struct PromptContext {
    /// `{"entity", "entity_id", "relation"}`
    pub query: Option<Value>,
    /// `[{"id", "candidate": {"id", "name"}}]`
    pub hypotheses: Option<Vec<Value>>,
    /// The hypothesis a Proponent/Skeptic turn works on.
    pub focus: Option<Value>,
    pub tegraph_snapshot: Option<Value>,
    pub history: Option<HistoryView>,
    pub thresholds: Option<Thresholds>,
    pub directives: Option<Vec<Value>>,
    pub seed_context: Option<Value>,
    /// Additional top-level fields passed through verbatim.
    pub extra: BTreeMap<String, Value>,
}

/// A rendered request: system instructions plus the canonical user payload.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentRequest {
    pub role: AgentRole,
    pub mode: AgentMode,
    pub system: String,
    pub user: String,
}

impl AgentRequest {
    pub fn with_correction(&self, error: &str) -> Self {
        Self {
            user: format!(
                "{}\n\nYour previous reply was rejected: {error}\nReturn one corrected JSON object.",
                self.user
            ),
            ..self.clone()
        }
    }

    pub fn payload(&self) -> Option<Value> {
        serde_json::from_str(&self.user).ok()
    }
}

fn require<T: Clone>(v: &Option<T>, name: &'static str) -> Result<T, RuntimeError> {
    v.clone().ok_or(RuntimeError::MissingContext(name))
}

/// Builds the request for one agent turn.
pub fn render_prompt(
    role: AgentRole,
    mode: AgentMode,
    ctx: &PromptContext,
    prompt: &PromptVersion,
    heuristics: &[Heuristic],
) -> Result<AgentRequest, RuntimeError> {
    if !mode.valid_for(role) {
        return Err(RuntimeError::InvalidMode { role, mode });
    }
    let mut user = Map::new();
    user.insert("mode".into(), json!(mode.as_str()));
    match (role, mode) {
        (AgentRole::Pi, AgentMode::Init) => {
            user.insert("query".into(), require(&ctx.query, "query")?);
            user.insert("thresholds".into(), json!(require(&ctx.thresholds, "thresholds")?));
            if let Some(h) = &ctx.hypotheses {
                user.insert("hypotheses".into(), json!(h));
            }
        }
        (AgentRole::Pi, AgentMode::Score | AgentMode::Revise) => {
            user.insert("query".into(), require(&ctx.query, "query")?);
            user.insert("hypotheses".into(), json!(require(&ctx.hypotheses, "hypotheses")?));
            user.insert("tegraph_snapshot".into(), require(&ctx.tegraph_snapshot, "tegraph_snapshot")?);
            user.insert("history".into(), json!(require(&ctx.history, "history")?));
            user.insert("thresholds".into(), json!(require(&ctx.thresholds, "thresholds")?));
        }
        (AgentRole::Pi, AgentMode::ReportAndEvolve) => {
            if !ctx.extra.contains_key("reports") {
                user.insert("query".into(), require(&ctx.query, "query")?);
                user.insert("tegraph_snapshot".into(), require(&ctx.tegraph_snapshot, "tegraph_snapshot")?);
                if let Some(h) = &ctx.hypotheses {
                    user.insert("hypotheses".into(), json!(h));
                }
                if let Some(h) = &ctx.history {
                    user.insert("history".into(), json!(h));
                }
            }
        }
        (_, AgentMode::BuildChain | AgentMode::BuildCounterchain | AgentMode::ExecuteActions) => {
            user.insert("query".into(), require(&ctx.query, "query")?);
            user.insert("hypothesis".into(), require(&ctx.focus, "hypothesis")?);
            user.insert("tegraph_snapshot".into(), require(&ctx.tegraph_snapshot, "tegraph_snapshot")?);
            let actions = match mode {
                AgentMode::ExecuteActions => {
                    let d = require(&ctx.directives, "graph_actions")?;
                    if d.is_empty() {
                        return Err(RuntimeError::MissingContext("graph_actions"));
                    }
                    d
                }
                _ => ctx.directives.clone().unwrap_or_default(),
            };
            user.insert("graph_actions".into(), Value::Array(actions));
            if role == AgentRole::Proponent {
                user.insert("constraints".into(), json!({"require_disjoint_paths": 2}));
            }
        }
        _ => return Err(RuntimeError::InvalidMode { role, mode }),
    }
    if role == AgentRole::Pi {
        if let Some(s) = &ctx.seed_context {
            user.insert("seed_context".into(), s.clone());
        }
    }
    for (k, v) in &ctx.extra {
        user.entry(k.clone()).or_insert_with(|| v.clone());
    }

    let mut system = String::new();
    system.push_str(prompt.body.trim_end());
    system.push_str("\n\n## SHARED CONSTRAINTS\n");
    system.push_str(SHARED_CONSTRAINTS);
    if !heuristics.is_empty() {
        system.push_str("\n\n## HEURISTICS\n");
        for (i, h) in heuristics.iter().enumerate() {
            system.push_str(&format!("{}. {}\n", i + 1, h.rule_text()));
        }
    }
    system.push_str(&format!("\n\n## MODE {}\nReply format: {}", mode.as_str(), reply_format(role, mode)));

    Ok(AgentRequest {
        role,
        mode,
        system,
        user: canonical_json(&Value::Object(user)),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct PromptIndex {
    roles: BTreeMap<AgentRole, Vec<IndexEntry>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexEntry {
    version: u32,
    parent_version: Option<u32>,
    patch_note: Option<String>,
}

/// Prompt history on disk: `<dir>/<role>/v<N>.txt` plus `<dir>/index.json`.
#[derive(Debug, Clone)]
pub struct PromptStore {
    dir: PathBuf,
    versions: BTreeMap<AgentRole, Vec<PromptVersion>>,
}

impl PromptStore {
    /// Opens a store. Roles without stored versions start at their built-in
    /// version 0.
    pub fn open(dir: impl AsRef<Path>) -> std::io::Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let index: PromptIndex = match fs::read_to_string(dir.join("index.json")) {
            Ok(text) => serde_json::from_str(&text)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("prompt index: {e}")))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => PromptIndex::default(),
            Err(e) => return Err(e),
        };
        let mut versions = BTreeMap::new();
        for role in AgentRole::ALL {
            let mut list = Vec::new();
            for entry in index.roles.get(&role).into_iter().flatten() {
                let body = fs::read_to_string(dir.join(role.as_str()).join(format!("v{}.txt", entry.version)))?;
                list.push(PromptVersion {
                    role,
                    version: entry.version,
                    body,
                    parent_version: entry.parent_version,
                    patch_note: entry.patch_note.clone(),
                });
            }
            if list.is_empty() {
                list.push(PromptVersion::initial(role));
            }
            versions.insert(role, list);
        }
        Ok(Self { dir, versions })
    }

    pub fn current(&self, role: AgentRole) -> &PromptVersion {
        self.versions[&role].last().expect("every role has a version")
    }

    pub fn history(&self, role: AgentRole) -> &[PromptVersion] {
        &self.versions[&role]
    }

    /// Appends a new version; it must extend the current one by exactly one.
    pub fn push(&mut self, version: PromptVersion) -> Result<(), String> {
        let current = self.current(version.role).version;
        if version.version != current + 1 || version.parent_version != Some(current) {
            return Err(format!(
                "{} prompt v{} does not extend current v{current}",
                version.role, version.version
            ));
        }
        self.versions.get_mut(&version.role).unwrap().push(version);
        Ok(())
    }

    pub fn save(&self) -> std::io::Result<()> {
        let mut index = PromptIndex::default();
        for (role, list) in &self.versions {
            let role_dir = self.dir.join(role.as_str());
            fs::create_dir_all(&role_dir)?;
            for v in list {
                fs::write(role_dir.join(format!("v{}.txt", v.version)), &v.body)?;
                index.roles.entry(*role).or_default().push(IndexEntry {
                    version: v.version,
                    parent_version: v.parent_version,
                    patch_note: v.patch_note.clone(),
                });
            }
        }
        fs::write(
            self.dir.join("index.json"),
            serde_json::to_string_pretty(&index).expect("index serializes") + "\n",
        )
    }
}
