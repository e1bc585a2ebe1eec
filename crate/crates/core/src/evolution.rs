//! Post-run audit, prompt patching and the shared heuristic library.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::agent_runtime::{
    render_prompt, AgentMode, AgentRole, AgentRuntime, HistoryView, PromptContext, PromptStore, PromptVersion,
};
use crate::orchestrator::{load_result, InvestigationResult};
use crate::tegraph::EvidenceGraph;

pub const DIRECTIVES_HEADER: &str = "=== LEARNED DIRECTIVES ===";
pub const MAX_DIRECTIVES: usize = 30;
pub const MAX_RULE_WORDS: usize = 60;
pub const DUPLICATE_JACCARD: f64 = 0.8;
/// Minimum top-1 final score for a run's report to feed distillation.
pub const DEFAULT_QUALITY_THRESHOLD: f64 = 0.6;

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("empty patch")]
    EmptyPatch,
    #[error("library file {path}: line {line}, column {column}: {message}")]
    Corrupt {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("refusing to replace library version {on_disk} with older version {attempted}")]
    VersionRegression { on_disk: u64, attempted: u64 },
    #[error("heuristic `{0}` is not in the library")]
    UnknownHeuristic(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub hypothesis_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Motif {
    pub description: String,
    #[serde(default)]
    pub hypothesis_id: Option<String>,
    /// Node ids or `source->target` edge references.
    #[serde(default)]
    pub refs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPatch {
    pub role: AgentRole,
    pub patch: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CreditAssignmentReport {
    pub run_id: String,
    #[serde(default)]
    pub final_recommendations: Vec<Recommendation>,
    #[serde(default)]
    pub pivotal_motifs: Vec<Motif>,
    #[serde(default)]
    pub unproductive_paths: Vec<Motif>,
    #[serde(default)]
    pub residual_gaps: Vec<String>,
    #[serde(default)]
    pub prompt_patches: Vec<PromptPatch>,
    #[serde(default)]
    pub distillable: Vec<String>,
    /// Rules the PI proposed directly in its report.
    #[serde(default)]
    pub heuristics: Vec<String>,
    /// Highest engine score at the end of the run.
    #[serde(default)]
    pub top_score: Option<f64>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub failure: Option<String>,
}

fn resolves(graph: &EvidenceGraph, r: &str) -> bool {
    if let Some((s, t)) = r.split_once("->") {
        let (s, t) = (s.trim(), t.trim());
        return graph.outgoing(s).any(|e| e.target == t);
    }
    graph.node(r.trim()).is_some()
}

fn heuristic_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Object(m) => {
            let c = m.get("condition")?.as_str()?;
            let a = m.get("action")?.as_str()?;
            Some(format!("WHEN {}, THEN {}", strip_keyword(c, "when"), strip_keyword(a, "then")))
        }
        _ => None,
    }
}

fn strip_keyword<'a>(text: &'a str, kw: &str) -> &'a str {
    let t = text.trim();
    if t.len() >= kw.len() && t[..kw.len()].eq_ignore_ascii_case(kw) {
        t[kw.len()..].trim_start()
    } else {
        t
    }
}

impl CreditAssignmentReport {
    pub fn empty(run_id: &str) -> Self {
        Self {
            run_id: run_id.to_string(),
            ..Default::default()
        }
    }

    /// Maps a validated PI report into the report type, dropping references
    /// that do not resolve against `graph`.
    pub fn from_payload(run_id: &str, payload: &Value, graph: &EvidenceGraph) -> Self {
        let mut report = Self::empty(run_id);
        let list = |key: &str| payload.get(key).and_then(Value::as_array).cloned().unwrap_or_default();

        for v in list("final_recommendations") {
            match serde_json::from_value::<Recommendation>(v) {
                Ok(r) if graph.node(&r.hypothesis_id).is_some() => report.final_recommendations.push(r),
                Ok(r) => report
                    .warnings
                    .push(format!("recommendation for unknown hypothesis `{}` dropped", r.hypothesis_id)),
                Err(e) => report.warnings.push(format!("recommendation dropped: {e}")),
            }
        }
        for (key, motifs) in [("pivotal_motifs", 0), ("unproductive_paths", 1)] {
            for v in list(key) {
                let Ok(mut m) = serde_json::from_value::<Motif>(v) else {
                    report.warnings.push(format!("{key}: malformed entry dropped"));
                    continue;
                };
                m.refs.retain(|r| {
                    let ok = resolves(graph, r);
                    if !ok {
                        report.warnings.push(format!("{key}: unresolved ref `{r}` dropped"));
                    }
                    ok
                });
                if m.hypothesis_id.as_deref().is_some_and(|h| graph.node(h).is_none()) {
                    report
                        .warnings
                        .push(format!("{key}: unknown hypothesis `{}` cleared", m.hypothesis_id.take().unwrap()));
                }
                if motifs == 0 {
                    report.pivotal_motifs.push(m);
                } else {
                    report.unproductive_paths.push(m);
                }
            }
        }
        report.residual_gaps = list("residual_gaps").iter().filter_map(|v| v.as_str().map(str::to_string)).collect();
        for v in list("prompt_patches") {
            match serde_json::from_value::<PromptPatch>(v) {
                Ok(p) if !p.patch.trim().is_empty() => report.prompt_patches.push(p),
                Ok(p) => report.warnings.push(format!("empty patch for {} dropped", p.role)),
                Err(e) => report.warnings.push(format!("prompt patch dropped: {e}")),
            }
        }
        report.distillable = list("distillable").iter().filter_map(heuristic_text).collect();
        report.heuristics = list("heuristics").iter().filter_map(heuristic_text).collect();
        report
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// What the PI sees when auditing a finished run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub run_id: String,
    pub query: Value,
    pub hypotheses: Vec<Value>,
    pub graph: EvidenceGraph,
    pub history: HistoryView,
    /// Per-round scores, rankings and termination details.
    pub rounds: Value,
    pub top_score: Option<f64>,
}

/// Runs the PI audit. Failures produce an empty report that records the
/// reason; they never abort the caller.
pub fn generate_credit_report(
    runtime: &AgentRuntime,
    prompt: &PromptVersion,
    trajectory: &Trajectory,
) -> CreditAssignmentReport {
    let mut ctx = PromptContext {
        query: Some(trajectory.query.clone()),
        hypotheses: Some(trajectory.hypotheses.clone()),
        tegraph_snapshot: Some(serde_json::to_value(trajectory.graph.snapshot()).expect("snapshot serializes")),
        history: Some(trajectory.history.clone()),
        ..Default::default()
    };
    ctx.extra.insert("trajectory".into(), trajectory.rounds.clone());
    let outcome = render_prompt(AgentRole::Pi, AgentMode::ReportAndEvolve, &ctx, prompt, &[])
        .and_then(|req| runtime.call(&req, |v| Ok(v.clone())));
    let mut report = match outcome {
        Ok(payload) => CreditAssignmentReport::from_payload(&trajectory.run_id, &payload, &trajectory.graph),
        Err(e) => {
            log::warn!("credit report for {} failed: {e}", trajectory.run_id);
            CreditAssignmentReport {
                failure: Some(e.to_string()),
                ..CreditAssignmentReport::empty(&trajectory.run_id)
            }
        }
    };
    report.top_score = trajectory.top_score;
    report
}

fn directive_lines(patch: &str) -> Vec<String> {
    patch
        .lines()
        .map(|l| l.trim().trim_start_matches("- ").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// Splits a prompt body into the role text and its learned directives.
pub fn split_directives(body: &str) -> (&str, Vec<String>) {
    match body.find(DIRECTIVES_HEADER) {
        Some(at) => (
            body[..at].trim_end(),
            directive_lines(&body[at + DIRECTIVES_HEADER.len()..]),
        ),
        None => (body.trim_end(), Vec::new()),
    }
}

/// Whether applying `patch` would add at least one new directive line.
pub fn patch_adds_directives(current: &PromptVersion, patch: &str) -> bool {
    let (_, existing) = split_directives(&current.body);
    directive_lines(patch).iter().any(|l| !existing.contains(l))
}

/// Appends the patch lines to the learned-directives section, skipping lines
/// already present and dropping the oldest beyond [`MAX_DIRECTIVES`].
pub fn apply_prompt_patch(
    current: &PromptVersion,
    patch: &str,
    patch_note: Option<String>,
) -> Result<PromptVersion, EvolutionError> {
    let lines = directive_lines(patch);
    if lines.is_empty() {
        return Err(EvolutionError::EmptyPatch);
    }
    let (base, mut directives) = split_directives(&current.body);
    for l in lines {
        if !directives.contains(&l) {
            directives.push(l);
        }
    }
    if directives.len() > MAX_DIRECTIVES {
        directives.drain(..directives.len() - MAX_DIRECTIVES);
    }
    let mut body = format!("{base}\n\n{DIRECTIVES_HEADER}\n");
    for d in &directives {
        body.push_str("- ");
        body.push_str(d);
        body.push('\n');
    }
    Ok(PromptVersion {
        role: current.role,
        version: current.version + 1,
        body,
        parent_version: Some(current.version),
        patch_note,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heuristic {
    pub id: String,
    pub condition: String,
    pub action: String,
    #[serde(default)]
    pub provenance: Vec<String>,
    #[serde(default)]
    pub usage_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

impl Heuristic {
    pub fn new(id: impl Into<String>, condition: impl Into<String>, action: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            condition: condition.into(),
            action: action.into(),
            provenance: Vec::new(),
            usage_count: 0,
            embedding: None,
        }
    }

    pub fn rule_text(&self) -> String {
        format!("WHEN {}, THEN {}", self.condition, self.action)
    }
}

/// Splits `WHEN <condition>, THEN <action>` into its clauses. Rules longer
/// than [`MAX_RULE_WORDS`] words or missing a clause are rejected.
pub fn parse_rule(text: &str) -> Result<(String, String), String> {
    let words = text.split_whitespace().count();
    if words > MAX_RULE_WORDS {
        return Err(format!("{words} words exceeds {MAX_RULE_WORDS}"));
    }
    let t = text.trim();
    let upper = t.to_ascii_uppercase();
    if !upper.starts_with("WHEN ") {
        return Err("missing WHEN clause".into());
    }
    let then_at = upper.find(" THEN ").ok_or("missing THEN clause")?;
    let condition = t[5..then_at].trim().trim_end_matches(',').trim();
    let action = t[then_at + 6..].trim();
    if condition.is_empty() || action.is_empty() {
        return Err("empty clause".into());
    }
    Ok((condition.to_string(), action.to_string()))
}

/// Lower-cased alphanumeric tokens.
pub fn tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMode {
    Lexical,
    Embedding,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HeuristicLibrary {
    pub version: u64,
    /// Next numeric id; ids are never reused, even after a prune.
    #[serde(default)]
    pub next_id: u64,
    pub heuristics: BTreeMap<String, Heuristic>,
}

impl HeuristicLibrary {
    pub fn len(&self) -> usize {
        self.heuristics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heuristics.is_empty()
    }

    /// Existing heuristic whose rule text is a near-duplicate of `text`.
    pub fn near_duplicate(&self, text: &str) -> Option<&Heuristic> {
        let t = tokens(text);
        self.heuristics
            .values()
            .find(|h| jaccard(&t, &tokens(&h.rule_text())) >= DUPLICATE_JACCARD)
    }

    /// Adds a rule unless it is a near-duplicate. Returns the new id.
    pub fn add(&mut self, condition: &str, action: &str, provenance: Vec<String>) -> Option<String> {
        let mut h = Heuristic::new(String::new(), condition, action);
        if self.near_duplicate(&h.rule_text()).is_some() {
            return None;
        }
        // Files written without `next_id` never collide with a live id.
        let floor = self
            .heuristics
            .keys()
            .filter_map(|k| k.strip_prefix('K')?.parse::<u64>().ok())
            .max()
            .map_or(0, |m| m + 1);
        self.next_id = self.next_id.max(floor);
        let id = format!("K{:04}", self.next_id);
        self.next_id += 1;
        h.id = id.clone();
        h.provenance = provenance;
        self.heuristics.insert(id.clone(), h);
        self.version += 1;
        Some(id)
    }

    /// Explicit removal; bumps the version once.
    pub fn prune(&mut self, ids: &[&str]) -> Result<(), EvolutionError> {
        if let Some(missing) = ids.iter().find(|id| !self.heuristics.contains_key(**id)) {
            return Err(EvolutionError::UnknownHeuristic(missing.to_string()));
        }
        for id in ids {
            self.heuristics.remove(*id);
        }
        self.version += 1;
        Ok(())
    }

    pub fn similarity_mode(&self, context_embedding: Option<&[f64]>) -> SimilarityMode {
        match context_embedding {
            Some(_) if !self.heuristics.is_empty() && self.heuristics.values().all(|h| h.embedding.is_some()) => {
                SimilarityMode::Embedding
            }
            _ => SimilarityMode::Lexical,
        }
    }
}

/// Top-`j` heuristics for `context`: cosine over embeddings when both sides
/// have them, token Jaccard otherwise. Ties go to the lower id. Returned
/// entries have their usage count incremented.
pub fn retrieve_heuristics(
    library: &mut HeuristicLibrary,
    context: &str,
    j: usize,
    context_embedding: Option<&[f64]>,
) -> Vec<Heuristic> {
    let mode = library.similarity_mode(context_embedding);
    let ctx_tokens = tokens(context);
    let mut scored: Vec<(f64, String)> = library
        .heuristics
        .values()
        .map(|h| {
            let s = match (mode, context_embedding, &h.embedding) {
                (SimilarityMode::Embedding, Some(c), Some(e)) => cosine(c, e),
                _ => jaccard(&ctx_tokens, &tokens(&h.rule_text())),
            };
            (s, h.id.clone())
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    scored
        .into_iter()
        .take(j)
        .map(|(_, id)| {
            let h = library.heuristics.get_mut(&id).expect("listed id");
            h.usage_count += 1;
            h.clone()
        })
        .collect()
}

fn read_version(path: &Path) -> Result<Option<u64>, EvolutionError> {
    match fs::read_to_string(path) {
        Ok(text) => Ok(Some(parse_library(path, &text)?.version)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn parse_library(path: &Path, text: &str) -> Result<HeuristicLibrary, EvolutionError> {
    serde_json::from_str(text).map_err(|e| EvolutionError::Corrupt {
        path: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Writes the library atomically. A file holding a newer version is never
/// overwritten.
pub fn persist_library(library: &HeuristicLibrary, path: &Path) -> Result<(), EvolutionError> {
    if let Some(on_disk) = read_version(path)? {
        if on_disk > library.version {
            return Err(EvolutionError::VersionRegression {
                on_disk,
                attempted: library.version,
            });
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("json.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(serde_json::to_string_pretty(library).expect("library serializes").as_bytes())?;
        f.write_all(b"\n")?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_library(path: &Path) -> Result<HeuristicLibrary, EvolutionError> {
    let text = fs::read_to_string(path)?;
    parse_library(path, &text)
}

/// Loads the library, or an empty one when the file does not exist yet.
pub fn load_library_or_default(path: &Path) -> Result<HeuristicLibrary, EvolutionError> {
    match fs::read_to_string(path) {
        Ok(text) => parse_library(path, &text),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(HeuristicLibrary::default()),
        Err(e) => Err(e.into()),
    }
}

/// A library shared by concurrent investigations. Every mutation holds the
/// write lock until it has been persisted.
pub struct SharedLibrary {
    inner: RwLock<HeuristicLibrary>,
    path: Option<PathBuf>,
}

impl SharedLibrary {
    pub fn new(library: HeuristicLibrary, path: Option<PathBuf>) -> Self {
        Self {
            inner: RwLock::new(library),
            path,
        }
    }

    pub fn snapshot(&self) -> HeuristicLibrary {
        self.inner.read().expect("library lock").clone()
    }

    pub fn update<T>(&self, f: impl FnOnce(&mut HeuristicLibrary) -> T) -> Result<T, EvolutionError> {
        let mut lib = self.inner.write().expect("library lock");
        let out = f(&mut lib);
        if let Some(path) = &self.path {
            persist_library(&lib, path)?;
        }
        Ok(out)
    }

    pub fn retrieve(&self, context: &str, j: usize, embedding: Option<&[f64]>) -> Result<Vec<Heuristic>, EvolutionError> {
        self.update(|lib| retrieve_heuristics(lib, context, j, embedding))
    }
}

/// Reports from runs whose top-1 score reaches `threshold`.
pub fn qualifying_reports(reports: &[CreditAssignmentReport], threshold: f64) -> Vec<&CreditAssignmentReport> {
    reports
        .iter()
        .filter(|r| r.failure.is_none() && r.top_score.is_some_and(|s| s >= threshold))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DistillOutcome {
    pub added: Vec<Heuristic>,
    /// `(rule text, reason)` for every proposal that was not added.
    pub dropped: Vec<(String, String)>,
    pub failure: Option<String>,
}

/// Asks the PI to turn report material into WHEN/THEN rules and adds the
/// well-formed, non-duplicate ones to `library`.
pub fn distill_heuristics(
    runtime: &AgentRuntime,
    prompt: &PromptVersion,
    reports: &[&CreditAssignmentReport],
    library: &mut HeuristicLibrary,
) -> DistillOutcome {
    let mut outcome = DistillOutcome::default();
    let material: Vec<Value> = reports
        .iter()
        .filter(|r| !r.distillable.is_empty() || !r.pivotal_motifs.is_empty())
        .map(|r| {
            json!({
                "run_id": r.run_id,
                "distillable": r.distillable,
                "pivotal_motifs": r.pivotal_motifs,
                "proposed": r.heuristics,
            })
        })
        .collect();
    if material.is_empty() {
        outcome.failure = Some("no report has distillable material".into());
        return outcome;
    }
    let mut ctx = PromptContext::default();
    ctx.extra.insert("task".into(), json!("distill"));
    ctx.extra.insert("reports".into(), Value::Array(material));
    ctx.extra.insert(
        "library".into(),
        json!(library.heuristics.values().map(Heuristic::rule_text).collect::<Vec<_>>()),
    );
    let payload = match render_prompt(AgentRole::Pi, AgentMode::ReportAndEvolve, &ctx, prompt, &[])
        .and_then(|req| runtime.call(&req, |v| Ok(v.clone())))
    {
        Ok(p) => p,
        Err(e) => {
            outcome.failure = Some(e.to_string());
            return outcome;
        }
    };
    let provenance: Vec<String> = reports.iter().map(|r| r.run_id.clone()).collect();
    let proposals: Vec<String> = ["heuristics", "distillable"]
        .iter()
        .flat_map(|k| payload.get(*k).and_then(Value::as_array).cloned().unwrap_or_default())
        .filter_map(|v| heuristic_text(&v))
        .collect();
    for text in proposals {
        match parse_rule(&text) {
            Err(reason) => outcome.dropped.push((text, reason)),
            Ok((cond, action)) => match library.add(&cond, &action, provenance.clone()) {
                Some(id) => outcome.added.push(library.heuristics[&id].clone()),
                None => outcome.dropped.push((text, "near-duplicate of a library entry".into())),
            },
        }
    }
    outcome
}

impl Trajectory {
    /// The audit view of a finished investigation.
    pub fn from_result(r: &InvestigationResult) -> Result<Self, String> {
        let graph = r.graph().map_err(|e| e.to_string())?;
        let last = r.rounds.last();
        let rounds: Vec<Value> = r
            .rounds
            .iter()
            .map(|round| {
                json!({
                    "t": round.t,
                    "micro_rounds": round.micro_rounds.len(),
                    "interrupt": round.interrupt,
                    "max_delta": round.max_delta,
                    "ranking": round.ranking,
                    "scores": round.scores,
                    "directives": round.directives,
                })
            })
            .collect();
        Ok(Self {
            run_id: r.run_id.clone(),
            query: json!({
                "entity": r.query_name,
                "entity_id": r.query.query_entity,
                "relation": r.query.target_relation,
            }),
            hypotheses: r
                .hypotheses
                .iter()
                .map(|h| json!({"id": h.id, "candidate": {"id": h.candidate, "name": h.candidate_name}}))
                .collect(),
            graph,
            history: HistoryView {
                round: last.map_or(0, |l| l.t),
                last_scores: last
                    .map(|l| l.scores.iter().map(|b| json!({"hypothesis_id": b.hypothesis_id, "score": b.score})).collect())
                    .unwrap_or_default(),
            },
            rounds: json!({"rounds": rounds, "termination_reason": r.termination_reason}),
            top_score: r.top_score(),
        })
    }
}

pub const REPORT_FILE: &str = "credit_report.json";

/// What one evolve pass did.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvolveSummary {
    pub reports_generated: Vec<String>,
    pub reports_reused: Vec<String>,
    /// `(run id, reason)` for runs left out of patching and distillation.
    pub skipped: Vec<(String, String)>,
    /// `(role, new version, report path)` per prompt update.
    pub prompt_updates: Vec<(AgentRole, u32, String)>,
    pub added: Vec<Heuristic>,
    pub dropped: Vec<(String, String)>,
    pub library_version_before: u64,
    pub library_version_after: u64,
    pub distill_failure: Option<String>,
}

/// Audits each run (reusing a stored report when present), patches prompts
/// from qualifying reports and distills their material into `library`.
/// Callers persist `prompts` and `library` afterwards.
pub fn evolve_runs(
    runtime: &AgentRuntime,
    prompts: &mut PromptStore,
    library: &mut HeuristicLibrary,
    run_dirs: &[PathBuf],
    quality_threshold: f64,
) -> Result<EvolveSummary, EvolutionError> {
    let mut summary = EvolveSummary {
        library_version_before: library.version,
        ..Default::default()
    };
    let mut reports = Vec::new();
    for dir in run_dirs {
        let result = load_result(dir).map_err(|e| EvolutionError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e)))?;
        let path = dir.join(REPORT_FILE);
        let report = match fs::read_to_string(&path) {
            Ok(text) => {
                summary.reports_reused.push(result.run_id.clone());
                serde_json::from_str(&text).map_err(|e| EvolutionError::Corrupt {
                    path: path.display().to_string(),
                    line: e.line(),
                    column: e.column(),
                    message: e.to_string(),
                })?
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                let trajectory = Trajectory::from_result(&result)
                    .map_err(|e| EvolutionError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e)))?;
                let report = generate_credit_report(runtime, prompts.current(AgentRole::Pi), &trajectory);
                fs::write(&path, report.to_json())?;
                summary.reports_generated.push(result.run_id.clone());
                report
            }
            Err(e) => return Err(e.into()),
        };
        reports.push((path.display().to_string(), report));
    }

    let all: Vec<CreditAssignmentReport> = reports.iter().map(|(_, r)| r.clone()).collect();
    let qualifying = qualifying_reports(&all, quality_threshold);
    for (_, r) in &reports {
        if !qualifying.iter().any(|q| q.run_id == r.run_id) {
            let reason = match (&r.failure, r.top_score) {
                (Some(f), _) => format!("report failed: {f}"),
                (None, Some(s)) => format!("top score {s:.4} below quality threshold {quality_threshold}"),
                (None, None) => format!("no final score; quality threshold {quality_threshold}"),
            };
            summary.skipped.push((r.run_id.clone(), reason));
        }
    }
    if qualifying.is_empty() {
        summary.library_version_after = library.version;
        return Ok(summary);
    }

    for (path, r) in &reports {
        if !qualifying.iter().any(|q| q.run_id == r.run_id) {
            continue;
        }
        for p in &r.prompt_patches {
            let current = prompts.current(p.role);
            if p.patch.trim().is_empty() || !patch_adds_directives(current, &p.patch) {
                continue;
            }
            let next = apply_prompt_patch(current, &p.patch, Some(path.clone()))?;
            let version = next.version;
            prompts.push(next).expect("patched version extends the current one");
            summary.prompt_updates.push((p.role, version, path.clone()));
        }
    }

    let outcome = distill_heuristics(runtime, prompts.current(AgentRole::Pi), &qualifying, library);
    summary.added = outcome.added;
    summary.dropped = outcome.dropped;
    summary.distill_failure = outcome.failure;
    summary.library_version_after = library.version;
    Ok(summary)
}
