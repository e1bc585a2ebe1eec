//! The investigation loop: seed, debate, score, test for convergence, revise.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::agent_runtime::{
    render_prompt, AgentMode, AgentRole, AgentRuntime, HistoryView, PromptContext, PromptStore, RuntimeError,
    Thresholds,
};
use crate::canonical_json;
use crate::evalkit::QueryScores;
use crate::evolution::{Heuristic, SharedLibrary};
use crate::explorer::{rank_candidates, score_pool, seed_delta, seed_tegraph, EmbeddingTable, ExplorerError, Hypothesis, ProjectionParams};
use crate::kg_store::{KnowledgeGraph, RepurposingQuery};
use crate::pi_scoring::{max_score_change, rank, score_all, stop_decision, ScoreBreakdown, ScoringWeights};
use crate::tegraph::{delta_magnitude, EvidenceGraph, GraphDelta, Snapshot};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Explorer(#[from] ExplorerError),
    #[error("backend failure: {0}")]
    Backend(RuntimeError),
    #[error("scoring failed: {0}")]
    Scoring(#[from] crate::pi_scoring::ScoringError),
    #[error("writing run artifacts: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Directive {
    pub hypothesis_id: String,
    #[serde(rename = "type")]
    pub action_type: String,
    pub assignee: AgentRole,
    #[serde(default)]
    pub detail: String,
    #[serde(default)]
    pub debate_focus: Vec<String>,
}

impl Directive {
    fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("directive serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRequest {
    pub should_regenerate: bool,
    #[serde(default)]
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RevisePlan {
    pub directives: Vec<Directive>,
    pub seed_request: Option<SeedRequest>,
}

/// The side an action type belongs to, when it can be told from its name.
fn action_side(action: &str) -> Option<AgentRole> {
    let a = action.to_ascii_lowercase();
    const SKEPTIC: [&str; 6] = ["safety", "risk", "refut", "counter", "contra", "stress"];
    const PROPONENT: [&str; 4] = ["mechanism", "support", "chain", "closure"];
    if SKEPTIC.iter().any(|k| a.contains(k)) {
        Some(AgentRole::Skeptic)
    } else if PROPONENT.iter().any(|k| a.contains(k)) {
        Some(AgentRole::Proponent)
    } else {
        None
    }
}

/// One directive per graph action, in order. The revision's debate focus is
/// attached to each of its directives.
pub fn parse_directives(revise: &Value) -> Result<RevisePlan, String> {
    let mut plan = RevisePlan::default();
    let revisions = revise.get("revisions").and_then(Value::as_array).cloned().unwrap_or_default();
    for (i, r) in revisions.iter().enumerate() {
        let h = r
            .get("hypothesis_id")
            .and_then(Value::as_str)
            .ok_or_else(|| format!("revisions[{i}].hypothesis_id missing"))?;
        let focus: Vec<String> = r
            .get("debate_focus")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
            .unwrap_or_default();
        let actions = r.get("graph_actions").and_then(Value::as_array).cloned().unwrap_or_default();
        for (j, a) in actions.iter().enumerate() {
            let path = format!("revisions[{i}].graph_actions[{j}]");
            let action_type = a.get("type").and_then(Value::as_str).ok_or(format!("{path}.type missing"))?;
            let assignee = match a.get("assignee").and_then(Value::as_str) {
                Some("Proponent") => AgentRole::Proponent,
                Some("Skeptic") => AgentRole::Skeptic,
                other => return Err(format!("{path}.assignee must be Proponent or Skeptic, found {other:?}")),
            };
            if let Some(side) = action_side(action_type) {
                if side != assignee {
                    return Err(format!("{path}: action `{action_type}` belongs to the {side}, not the {assignee}"));
                }
            }
            plan.directives.push(Directive {
                hypothesis_id: h.to_string(),
                action_type: action_type.to_string(),
                assignee,
                detail: a.get("detail").and_then(Value::as_str).unwrap_or_default().to_string(),
                debate_focus: focus.clone(),
            });
        }
    }
    if let Some(s) = revise.get("seed_request").filter(|v| v.is_object()) {
        plan.seed_request = Some(SeedRequest {
            should_regenerate: s.get("should_regenerate").and_then(Value::as_bool).unwrap_or(false),
            reason: s.get("reason").and_then(Value::as_str).unwrap_or_default().to_string(),
        });
    }
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InvestigationConfig {
    pub t_max: u32,
    pub delta_stop: f64,
    pub epsilon_inner: f64,
    pub saturation_ratio: f64,
    pub saturation_window: usize,
    pub k_seeds: usize,
    pub max_micro_rounds: usize,
    pub call_budget: u32,
    pub heuristic_j: usize,
    pub seed: u64,
    pub max_regenerations: u32,
}

impl Default for InvestigationConfig {
    fn default() -> Self {
        Self {
            t_max: 4,
            delta_stop: 0.03,
            epsilon_inner: 0.5,
            saturation_ratio: 0.65,
            saturation_window: 4,
            k_seeds: 5,
            max_micro_rounds: 8,
            call_budget: 60,
            heuristic_j: 3,
            seed: 0,
            max_regenerations: 1,
        }
    }
}

impl InvestigationConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |m: &str| Err(OrchestratorError::Config(m.to_string()));
        if self.t_max == 0 {
            return bad("t_max must be positive");
        }
        if [self.delta_stop, self.epsilon_inner].iter().any(|x| x.is_nan() || *x <= 0.0) {
            return bad("delta_stop and epsilon_inner must be positive");
        }
        if !(self.saturation_ratio > 0.0 && self.saturation_ratio <= 1.0) {
            return bad("saturation_ratio must lie in (0, 1]");
        }
        if self.saturation_window == 0 || self.k_seeds == 0 || self.max_micro_rounds == 0 || self.call_budget == 0 {
            return bad("saturation_window, k_seeds, max_micro_rounds and call_budget must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    ScoreConverged,
    TMaxReached,
    BudgetExhausted,
}

impl TerminationReason {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminationReason::ScoreConverged => "score_converged",
            TerminationReason::TMaxReached => "t_max_reached",
            TerminationReason::BudgetExhausted => "budget_exhausted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interrupt {
    SmallDelta,
    Saturation,
    MaxMicroRounds,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroRound {
    pub index: usize,
    pub focus: String,
    pub proponent_mode: AgentMode,
    pub skeptic_mode: AgentMode,
    pub magnitude: f64,
    pub new_nodes: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: u32,
    pub micro_rounds: Vec<MicroRound>,
    pub interrupt: Option<Interrupt>,
    pub weights: ScoringWeights,
    pub scores: Vec<ScoreBreakdown>,
    pub ranking: Vec<String>,
    /// Largest score change against the previous round.
    pub max_delta: Option<f64>,
    pub stop: bool,
    /// The PI's own view of the round, kept for audit.
    pub pi_assessment: Option<Value>,
    pub directives: Vec<Directive>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisRecord {
    pub id: String,
    pub candidate: String,
    pub candidate_name: String,
    pub seed_score: f64,
    /// Round in which the hypothesis entered the graph.
    pub round: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub rank: usize,
    pub hypothesis_id: String,
    pub candidate: String,
    pub candidate_name: String,
    pub score: f64,
    pub breakdown: ScoreBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvestigationResult {
    pub run_id: String,
    pub query: RepurposingQuery,
    pub query_name: String,
    pub hypotheses: Vec<HypothesisRecord>,
    pub ranked: Vec<RankedEntry>,
    pub rounds: Vec<RoundRecord>,
    pub rounds_executed: u32,
    pub termination_reason: TerminationReason,
    pub heuristics_used: Vec<String>,
    pub live_calls: u32,
    pub regenerations: u32,
    pub warnings: Vec<String>,
    pub final_graph: Snapshot,
    pub transcript: String,
    pub report: String,
}

impl InvestigationResult {
    pub fn graph(&self) -> Result<EvidenceGraph, crate::tegraph::GraphError> {
        EvidenceGraph::restore(self.final_graph.clone())
    }

    pub fn query_scores(&self) -> QueryScores {
        QueryScores {
            query_id: self.query.query_entity.clone(),
            scores: self.ranked.iter().map(|r| (r.candidate.clone(), r.score)).collect(),
        }
    }

    pub fn top_score(&self) -> Option<f64> {
        self.ranked.first().map(|r| r.score)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes") + "\n"
    }
}

/// Everything an investigation reads.
pub struct InvestigationInputs<'a> {
    pub run_id: String,
    pub query: RepurposingQuery,
    pub kg: &'a KnowledgeGraph,
    pub embeddings: &'a EmbeddingTable,
    pub params: &'a ProjectionParams,
    pub prompts: &'a PromptStore,
    pub library: Option<&'a SharedLibrary>,
    /// Where artifacts go; `None` keeps everything in memory.
    pub run_dir: Option<PathBuf>,
}

struct Artifacts {
    dir: Option<PathBuf>,
}

impl Artifacts {
    fn write(&self, rel: &str, content: &str) -> std::io::Result<()> {
        if let Some(dir) = &self.dir {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, content)?;
        }
        Ok(())
    }
}

fn pretty(v: &impl Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

enum Turn<T> {
    Done(T),
    Skipped(String),
    OutOfBudget,
}

/// Budget exhaustion and validation failures are recoverable; everything
/// else ends the run.
fn turn<T>(r: Result<T, RuntimeError>) -> Result<Turn<T>, OrchestratorError> {
    match r {
        Ok(v) => Ok(Turn::Done(v)),
        Err(RuntimeError::BudgetExhausted { .. }) => Ok(Turn::OutOfBudget),
        Err(e) if e.is_fatal() => Err(OrchestratorError::Backend(e)),
        Err(e) => Ok(Turn::Skipped(e.to_string())),
    }
}

struct Session<'a> {
    inputs: &'a InvestigationInputs<'a>,
    config: &'a InvestigationConfig,
    runtime: &'a AgentRuntime,
    query_value: Value,
    hypotheses: Vec<HypothesisRecord>,
    micro_counter: usize,
}

impl Session<'_> {
    fn name_of(&self, id: &str) -> String {
        self.inputs.kg.entity(id).map(|e| e.name.clone()).unwrap_or_else(|_| id.to_string())
    }

    fn hypothesis_values(&self) -> Vec<Value> {
        self.hypotheses
            .iter()
            .map(|h| json!({"id": h.id, "candidate": {"id": h.candidate, "name": h.candidate_name}}))
            .collect()
    }

    fn hypothesis_value(&self, id: &str) -> Value {
        self.hypotheses
            .iter()
            .find(|h| h.id == id)
            .map(|h| json!({"id": h.id, "candidate": {"id": h.candidate, "name": h.candidate_name}}))
            .unwrap_or_else(|| json!({"id": id}))
    }

    fn thresholds(&self) -> Thresholds {
        Thresholds {
            stop_delta: self.config.delta_stop,
            saturation_ratio: self.config.saturation_ratio,
        }
    }

    fn seed_context(&self) -> Value {
        let mut by_round: BTreeMap<u32, Vec<&str>> = BTreeMap::new();
        for h in &self.hypotheses {
            by_round.entry(h.round).or_default().push(&h.candidate);
        }
        json!({
            "target_type": self.inputs.query.direction.candidate_type().as_str(),
            "seed_history": by_round.values().collect::<Vec<_>>(),
        })
    }

    fn pi_context(&self, graph: &EvidenceGraph, history: HistoryView) -> PromptContext {
        PromptContext {
            query: Some(self.query_value.clone()),
            hypotheses: Some(self.hypothesis_values()),
            tegraph_snapshot: Some(serde_json::to_value(graph.snapshot()).expect("snapshot serializes")),
            history: Some(history),
            thresholds: Some(self.thresholds()),
            seed_context: Some(self.seed_context()),
            ..Default::default()
        }
    }

    fn agent_delta(
        &self,
        role: AgentRole,
        mode: AgentMode,
        graph: &EvidenceGraph,
        focus: &str,
        directives: &[Value],
        round: u32,
    ) -> Result<Turn<GraphDelta>, OrchestratorError> {
        let ctx = PromptContext {
            query: Some(self.query_value.clone()),
            focus: Some(self.hypothesis_value(focus)),
            tegraph_snapshot: Some(serde_json::to_value(graph.snapshot()).expect("snapshot serializes")),
            directives: Some(directives.to_vec()),
            ..Default::default()
        };
        let prompt = self.inputs.prompts.current(role);
        let request = match render_prompt(role, mode, &ctx, prompt, &[]) {
            Ok(r) => r,
            Err(e) => return Ok(Turn::Skipped(e.to_string())),
        };
        turn(self.runtime.call(&request, |payload| {
            let delta = GraphDelta::from_agent_updates(&payload["graph_updates"], role, round, Some(focus))
                .map_err(|e| e.to_string())?;
            graph.apply_delta(&delta).map_err(|e| e.to_string())?;
            Ok(delta)
        }))
    }

    /// Proponent/Skeptic micro-rounds until an interrupt fires.
    fn debate_round(
        &mut self,
        graph: EvidenceGraph,
        directives: &[Directive],
        t: u32,
    ) -> Result<(EvidenceGraph, Vec<MicroRound>, Interrupt), OrchestratorError> {
        let mut graph = graph;
        let mut micro = Vec::new();
        // Hypotheses with directives, in first-mention order.
        let mut targets: Vec<String> = Vec::new();
        for d in directives {
            if !targets.contains(&d.hypothesis_id) && graph.node(&d.hypothesis_id).is_some() {
                targets.push(d.hypothesis_id.clone());
            }
        }
        let hyps = graph.hypothesis_ids();
        loop {
            let i = micro.len();
            let focus = if targets.is_empty() {
                let f = hyps[self.micro_counter % hyps.len()].clone();
                self.micro_counter += 1;
                f
            } else {
                targets[i % targets.len()].clone()
            };
            let mut notes = Vec::new();
            let mut deltas = Vec::new();
            let mut modes = Vec::new();
            for (role, free_mode) in [
                (AgentRole::Proponent, AgentMode::BuildChain),
                (AgentRole::Skeptic, AgentMode::BuildCounterchain),
            ] {
                let assigned: Vec<Value> = directives
                    .iter()
                    .filter(|d| d.assignee == role && d.hypothesis_id == focus)
                    .map(Directive::to_value)
                    .collect();
                let mode = if assigned.is_empty() { free_mode } else { AgentMode::ExecuteActions };
                modes.push(mode);
                match self.agent_delta(role, mode, &graph, &focus, &assigned, t)? {
                    Turn::Done(d) => deltas.push(d),
                    Turn::Skipped(why) => {
                        notes.push(format!("{role} turn skipped: {why}"));
                        deltas.push(GraphDelta::default());
                    }
                    Turn::OutOfBudget => {
                        // Keep whatever the Proponent produced this micro-round.
                        if let Some(pro) = deltas.first() {
                            if let Ok(g) = graph.apply_delta(pro) {
                                graph = g;
                            }
                        }
                        return Ok((graph, micro, Interrupt::BudgetExhausted));
                    }
                }
            }
            let before = graph.clone();
            graph = match before.merge(&deltas[0], &deltas[1]) {
                Ok((g, merge_notes)) => {
                    notes.extend(merge_notes);
                    g
                }
                Err(e) => {
                    notes.push(format!("merge rejected, Skeptic delta dropped: {e}"));
                    before.apply_delta(&deltas[0]).unwrap_or_else(|e| {
                        notes.push(format!("Proponent delta dropped: {e}"));
                        before.clone()
                    })
                }
            };
            let magnitude = delta_magnitude(&before, &graph);
            let new_nodes = graph.node_count() - before.node_count().min(graph.node_count());
            micro.push(MicroRound {
                index: i,
                focus,
                proponent_mode: modes[0],
                skeptic_mode: modes[1],
                magnitude,
                new_nodes,
                notes,
            });
            if magnitude < self.config.epsilon_inner {
                return Ok((graph, micro, Interrupt::SmallDelta));
            }
            let w = self.config.saturation_window;
            if micro.len() >= w {
                let idle = micro[micro.len() - w..].iter().filter(|m| m.new_nodes == 0).count();
                if idle as f64 / w as f64 >= self.config.saturation_ratio {
                    return Ok((graph, micro, Interrupt::Saturation));
                }
            }
            if micro.len() >= self.config.max_micro_rounds {
                return Ok((graph, micro, Interrupt::MaxMicroRounds));
            }
        }
    }

    fn add_hypotheses(&mut self, new: &[Hypothesis], round: u32) {
        for h in new {
            self.hypotheses.push(HypothesisRecord {
                id: h.id.clone(),
                candidate: h.candidate.clone(),
                candidate_name: self.name_of(&h.candidate),
                seed_score: h.seed_score,
                round,
            });
        }
    }
}

fn score_map(scores: &[ScoreBreakdown]) -> BTreeMap<String, f64> {
    scores.iter().map(|b| (b.hypothesis_id.clone(), b.score)).collect()
}

fn last_scores(scores: &[ScoreBreakdown]) -> Vec<Value> {
    scores
        .iter()
        .map(|b| json!({"hypothesis_id": b.hypothesis_id, "score": b.score}))
        .collect()
}

/// Checks a PI score reply against the hypothesis set and returns its weight
/// override, if any.
fn check_pi_score(payload: &Value, ids: &BTreeSet<String>) -> Result<Option<ScoringWeights>, String> {
    let covered: BTreeSet<String> = payload["scoring_summary"]
        .as_array()
        .into_iter()
        .flatten()
        .filter_map(|s| s["hypothesis_id"].as_str().map(str::to_string))
        .collect();
    let missing: Vec<&String> = ids.difference(&covered).collect();
    if !missing.is_empty() {
        return Err(format!("scoring_summary must score every hypothesis; missing {missing:?}"));
    }
    match payload.get("weights") {
        Some(w) => ScoringWeights::default().with_override(w).map(Some).map_err(|e| e.to_string()),
        None => Ok(None),
    }
}

/// Runs one investigation end to end.
pub fn run_investigation(
    inputs: &InvestigationInputs,
    config: &InvestigationConfig,
    runtime: &AgentRuntime,
) -> Result<InvestigationResult, OrchestratorError> {
    config.validate()?;
    let artifacts = Artifacts {
        dir: inputs.run_dir.clone(),
    };
    let outcome = investigate(inputs, config, runtime, &artifacts);
    // The transcript survives any failure.
    artifacts.write("transcript.jsonl", &runtime.transcript_jsonl())?;
    let result = outcome?;
    artifacts.write("result.json", &result.to_json())?;
    artifacts.write("report.md", &render_report(&result))?;
    Ok(result)
}

fn investigate(
    inputs: &InvestigationInputs,
    config: &InvestigationConfig,
    runtime: &AgentRuntime,
    artifacts: &Artifacts,
) -> Result<InvestigationResult, OrchestratorError> {
    let query = &inputs.query;
    let query_name = inputs
        .kg
        .entity(&query.query_entity)
        .map(|e| e.name.clone())
        .map_err(|e| OrchestratorError::Config(e.to_string()))?;
    let query_value = json!({
        "entity": query_name,
        "entity_id": query.query_entity,
        "relation": query.target_relation,
    });
    let mut warnings = Vec::new();

    // Heuristics prime the PI only.
    let heuristics: Vec<Heuristic> = match inputs.library {
        Some(lib) if config.heuristic_j > 0 => {
            let description = inputs.kg.entity(&query.query_entity).map(|e| e.description.clone()).unwrap_or_default();
            let context = format!("{query_name} {} {description}", query.target_relation);
            lib.retrieve(&context, config.heuristic_j, None).unwrap_or_else(|e| {
                warnings.push(format!("heuristic retrieval failed: {e}"));
                Vec::new()
            })
        }
        _ => Vec::new(),
    };

    artifacts.write(
        "config.json",
        &pretty(&json!({
            "run_id": inputs.run_id,
            "query": query,
            "investigation": config,
            "backend": runtime.backend_kind(),
            "prompt_versions": AgentRole::ALL.iter().map(|r| (r.as_str(), inputs.prompts.current(*r).version)).collect::<BTreeMap<_, _>>(),
            "heuristics": heuristics.iter().map(|h| h.id.clone()).collect::<Vec<_>>(),
            "heuristic_similarity": "lexical",
        })),
    )?;

    let mut session = Session {
        inputs,
        config,
        runtime,
        query_value: query_value.clone(),
        hypotheses: Vec::new(),
        micro_counter: 0,
    };
    let mut out_of_budget = false;
    let mut base_weights = ScoringWeights::default();

    // PI plan.
    let init_ctx = PromptContext {
        query: Some(query_value.clone()),
        thresholds: Some(session.thresholds()),
        ..Default::default()
    };
    let init_req = render_prompt(AgentRole::Pi, AgentMode::Init, &init_ctx, inputs.prompts.current(AgentRole::Pi), &heuristics)
        .map_err(OrchestratorError::Backend)?;
    match turn(runtime.call(&init_req, |p| {
        match p.pointer("/plan/weights") {
            Some(w) => ScoringWeights::default().with_override(w).map(Some).map_err(|e| e.to_string()),
            None => Ok(None),
        }
    }))? {
        Turn::Done(Some(w)) => base_weights = w,
        Turn::Done(None) => {}
        Turn::Skipped(why) => warnings.push(format!("PI init skipped: {why}")),
        Turn::OutOfBudget => out_of_budget = true,
    }

    // Seeds.
    let ranking = rank_candidates(query, inputs.kg, inputs.embeddings, inputs.params, config.k_seeds)?;
    if ranking.skipped > 0 {
        warnings.push(format!("{} candidates skipped for lack of features", ranking.skipped));
    }
    session.add_hypotheses(&ranking.hypotheses, 0);
    let mut graph = seed_tegraph(query, &ranking.hypotheses, Some(inputs.kg))?;

    let mut rounds: Vec<RoundRecord> = Vec::new();
    let mut history: Vec<BTreeMap<String, f64>> = Vec::new();
    let mut directives: Vec<Directive> = Vec::new();
    let mut regenerations = 0u32;
    let mut termination = TerminationReason::TMaxReached;

    for t in 0..config.t_max {
        let mut notes = Vec::new();
        let (micro, interrupt) = if out_of_budget {
            (Vec::new(), None)
        } else {
            let (g, micro, interrupt) = session.debate_round(graph, &directives, t)?;
            graph = g;
            out_of_budget = interrupt == Interrupt::BudgetExhausted;
            (micro, Some(interrupt))
        };
        graph.round_index = t;

        let prev = rounds.last().map(|r| last_scores(&r.scores)).unwrap_or_default();
        let mut weights = base_weights;
        let mut pi_assessment = None;
        if !out_of_budget {
            let ctx = session.pi_context(&graph, HistoryView { round: t, last_scores: prev });
            let ids: BTreeSet<String> = graph.hypothesis_ids().into_iter().collect();
            let req = render_prompt(AgentRole::Pi, AgentMode::Score, &ctx, inputs.prompts.current(AgentRole::Pi), &heuristics)
                .map_err(OrchestratorError::Backend)?;
            match turn(runtime.call(&req, |p| check_pi_score(p, &ids).map(|w| (w, p.clone()))))? {
                Turn::Done((w, payload)) => {
                    if let Some(w) = w {
                        weights = w;
                    }
                    pi_assessment = Some(payload);
                }
                Turn::Skipped(why) => notes.push(format!("PI score skipped: {why}")),
                Turn::OutOfBudget => out_of_budget = true,
            }
        }
        if out_of_budget {
            weights = ScoringWeights::default();
        }
        let scores = score_all(&graph, &weights)?;
        let order = rank(&scores)?;
        history.push(score_map(&scores));
        let max_delta = (t > 0).then(|| max_score_change(&history[t as usize - 1], &history[t as usize]).0);
        let stop = stop_decision(&history, config.delta_stop, t as usize)?;

        artifacts.write(&format!("rounds/{t}/snapshot.json"), &(graph.to_snapshot_json() + "\n"))?;
        artifacts.write(&format!("rounds/{t}/scores.json"), &pretty(&json!({"weights": weights, "scores": scores, "ranking": order})))?;

        let mut record = RoundRecord {
            t,
            micro_rounds: micro,
            interrupt,
            weights,
            scores,
            ranking: order,
            max_delta,
            stop,
            pi_assessment,
            directives: Vec::new(),
            notes,
        };

        if out_of_budget {
            termination = TerminationReason::BudgetExhausted;
            rounds.push(record);
            break;
        }
        if stop {
            termination = TerminationReason::ScoreConverged;
            rounds.push(record);
            break;
        }
        if t + 1 == config.t_max {
            record.notes.push("last round: revise skipped".into());
            rounds.push(record);
            break;
        }

        // PI revise.
        let ctx = session.pi_context(&graph, HistoryView { round: t, last_scores: last_scores(&record.scores) });
        let req = render_prompt(AgentRole::Pi, AgentMode::Revise, &ctx, inputs.prompts.current(AgentRole::Pi), &heuristics)
            .map_err(OrchestratorError::Backend)?;
        directives = Vec::new();
        match turn(runtime.call(&req, parse_directives))? {
            Turn::Done(plan) => {
                directives = plan.directives;
                if plan.seed_request.as_ref().is_some_and(|s| s.should_regenerate) {
                    if regenerations < config.max_regenerations {
                        let seen: BTreeSet<String> = session.hypotheses.iter().map(|h| h.candidate.clone()).collect();
                        let (pool, _) = score_pool(query, inputs.kg, inputs.embeddings, inputs.params, &seen)?;
                        let offset = session.hypotheses.len();
                        let fresh: Vec<Hypothesis> = pool
                            .into_iter()
                            .take(config.k_seeds)
                            .enumerate()
                            .map(|(i, (candidate, seed_score))| Hypothesis {
                                id: format!("H{}", offset + i + 1),
                                candidate,
                                query: query.clone(),
                                seed_score,
                            })
                            .collect();
                        if fresh.is_empty() {
                            record.notes.push("seed regeneration requested but no unseen candidates remain".into());
                        } else {
                            match graph.apply_delta(&seed_delta(query, &fresh, Some(inputs.kg), t + 1)) {
                                Ok(g) => {
                                    graph = g;
                                    session.add_hypotheses(&fresh, t + 1);
                                    regenerations += 1;
                                    record.notes.push(format!("{} hypotheses added by seed regeneration", fresh.len()));
                                }
                                Err(e) => record.notes.push(format!("seed regeneration failed: {e}")),
                            }
                        }
                    } else {
                        record.notes.push("seed regeneration refused: limit reached".into());
                    }
                }
            }
            Turn::Skipped(why) => record.notes.push(format!("PI revise skipped: {why}")),
            Turn::OutOfBudget => {
                // Scores for this round already exist; stop here.
                record.notes.push("budget exhausted during revise".into());
                termination = TerminationReason::BudgetExhausted;
                rounds.push(record);
                break;
            }
        }
        record.directives = directives.clone();
        rounds.push(record);
    }

    let last = rounds.last().expect("at least one round runs");
    let ranked = last
        .ranking
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let b = last.scores.iter().find(|b| &b.hypothesis_id == id).expect("ranked id was scored").clone();
            let h = session.hypotheses.iter().find(|h| &h.id == id).expect("ranked id is a hypothesis");
            RankedEntry {
                rank: i + 1,
                hypothesis_id: id.clone(),
                candidate: h.candidate.clone(),
                candidate_name: h.candidate_name.clone(),
                score: b.score,
                breakdown: b,
            }
        })
        .collect();
    Ok(InvestigationResult {
        run_id: inputs.run_id.clone(),
        query: query.clone(),
        query_name,
        hypotheses: session.hypotheses,
        ranked,
        rounds_executed: rounds.len() as u32,
        rounds,
        termination_reason: termination,
        heuristics_used: heuristics.iter().map(|h| h.id.clone()).collect(),
        live_calls: runtime.budget().used(),
        regenerations,
        warnings,
        final_graph: graph.snapshot(),
        transcript: "transcript.jsonl".into(),
        report: "report.md".into(),
    })
}

/// Markdown summary of a finished run.
pub fn render_report(r: &InvestigationResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Investigation {}\n", r.run_id);
    let _ = writeln!(
        out,
        "Query: **{}** (`{}`), relation `{}`, searching {}s.\n",
        r.query_name,
        r.query.query_entity,
        r.query.target_relation,
        r.query.direction.candidate_type()
    );
    let _ = writeln!(
        out,
        "Finished after {} round(s): {}. Live calls used: {}.\n",
        r.rounds_executed,
        r.termination_reason.as_str(),
        r.live_calls
    );
    out.push_str("## Ranked candidates\n\n| Rank | Hypothesis | Candidate | Score | Support | Refute | C_mech | D_path | Conflicts |\n|---|---|---|---|---|---|---|---|---|\n");
    for e in &r.ranked {
        let b = &e.breakdown;
        let _ = writeln!(
            out,
            "| {} | {} | {} (`{}`) | {:.4} | {:.2} | {:.2} | {} | {} | {} |",
            e.rank, e.hypothesis_id, e.candidate_name, e.candidate, e.score, b.sum_support, b.sum_refute, b.c_mech, b.d_path, b.conflict_count
        );
    }
    out.push_str("\n## Evidence\n\n");
    if let Ok(g) = r.graph() {
        for e in &r.ranked {
            let _ = writeln!(out, "### {} {}\n", e.hypothesis_id, e.candidate_name);
            let anchor = g.anchor_id(&e.hypothesis_id).ok().flatten().map(str::to_string);
            let mut any = false;
            for edge in g.edges() {
                let touches = edge.target == e.hypothesis_id
                    || anchor.as_deref().is_some_and(|a| edge.source == a || edge.target == a);
                if touches && edge.created_by != AgentRole::Explorer {
                    any = true;
                    let _ = writeln!(
                        out,
                        "- {} -[{} {:.2}]-> {}{}",
                        edge.source,
                        edge.semantics.as_str(),
                        edge.weight,
                        edge.target,
                        if edge.rationale.is_empty() { String::new() } else { format!(": {}", edge.rationale) }
                    );
                }
            }
            if !any {
                out.push_str("- no agent evidence\n");
            }
            out.push('\n');
        }
    }
    out.push_str("## Rounds\n\n");
    for round in &r.rounds {
        let _ = writeln!(
            out,
            "- t={}: {} micro-round(s), interrupt {}, max score change {}, ranking {}",
            round.t,
            round.micro_rounds.len(),
            round.interrupt.map_or("none".to_string(), |i| format!("{i:?}")),
            round.max_delta.map_or("n/a".to_string(), |d| format!("{d:.4}")),
            round.ranking.join(" > ")
        );
        for n in &round.notes {
            let _ = writeln!(out, "  - {n}");
        }
    }
    if !r.warnings.is_empty() {
        out.push_str("\n## Warnings\n\n");
        for w in &r.warnings {
            let _ = writeln!(out, "- {w}");
        }
    }
    out
}

/// Reads `result.json` from a run directory.
pub fn load_result(run_dir: &Path) -> Result<InvestigationResult, String> {
    let path = run_dir.join("result.json");
    let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Canonical form of a result, for byte comparisons.
pub fn canonical_result(r: &InvestigationResult) -> String {
    canonical_json(&serde_json::to_value(r).expect("result serializes"))
}
