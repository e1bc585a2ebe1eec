//! Hypothesis scoring over the evidence graph, ranking and the stop test.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::logistic;
use crate::tegraph::{
    disjoint_support_paths, mechanistic_connectivity, EdgeSemantics, EvidenceGraph, GraphError, PathLimits,
};

/// Upper bound for a PI-supplied weight.
pub const MAX_WEIGHT_OVERRIDE: f64 = 4.0;

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid weight {name}: {value}")]
    InvalidWeight { name: &'static str, value: f64 },
    #[error("duplicate hypothesis id {0}")]
    Duplicate(String),
    #[error("score history is empty")]
    EmptyHistory,
    #[error("round {t} is outside the history of {len} rounds")]
    RoundOutOfRange { t: usize, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringWeights {
    pub alpha_support: f64,
    pub beta_refute: f64,
    pub gamma_mech: f64,
    pub delta_disjoint: f64,
    pub lambda_conflict: f64,
}

impl Default for ScoringWeights {
    fn default() -> Self {
        Self {
            alpha_support: 1.0,
            beta_refute: 1.0,
            gamma_mech: 0.5,
            delta_disjoint: 0.5,
            lambda_conflict: 0.25,
        }
    }
}

impl ScoringWeights {
    fn fields(&self) -> [(&'static str, f64); 5] {
        [
            ("alpha_support", self.alpha_support),
            ("beta_refute", self.beta_refute),
            ("gamma_mech", self.gamma_mech),
            ("delta_disjoint", self.delta_disjoint),
            ("lambda_conflict", self.lambda_conflict),
        ]
    }

    pub fn validate(&self) -> Result<(), ScoringError> {
        for (name, value) in self.fields() {
            if !value.is_finite() || value < 0.0 {
                return Err(ScoringError::InvalidWeight { name, value });
            }
        }
        Ok(())
    }

    /// Applies a PI `weights` object on top of `self`. Missing keys keep their
    /// value; present keys must be numbers in `[0, 4]`.
    pub fn with_override(&self, doc: &Value) -> Result<Self, ScoringError> {
        let mut out = *self;
        let slots: [(&'static str, &mut f64); 5] = [
            ("alpha_support", &mut out.alpha_support),
            ("beta_refute", &mut out.beta_refute),
            ("gamma_mech", &mut out.gamma_mech),
            ("delta_disjoint", &mut out.delta_disjoint),
            ("lambda_conflict", &mut out.lambda_conflict),
        ];
        for (name, slot) in slots {
            if let Some(v) = doc.get(name) {
                let value = v.as_f64().unwrap_or(f64::NAN);
                if !(0.0..=MAX_WEIGHT_OVERRIDE).contains(&value) {
                    return Err(ScoringError::InvalidWeight { name, value });
                }
                *slot = value;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub hypothesis_id: String,
    pub sum_support: f64,
    pub sum_refute: f64,
    pub c_mech: f64,
    pub d_path: usize,
    pub conflict_count: usize,
    pub raw: f64,
    pub score: f64,
}

/// Nodes reachable over supports/entails edges from `starts`, walking
/// backwards (`reverse`) or forwards. The query node is never expanded, so
/// evidence attached to other hypotheses does not leak in.
fn chain_closure(graph: &EvidenceGraph, starts: &[&str], reverse: bool) -> BTreeSet<String> {
    let mut seen: BTreeSet<String> = starts.iter().map(|s| s.to_string()).collect();
    let mut queue: VecDeque<String> = seen.iter().cloned().collect();
    while let Some(at) = queue.pop_front() {
        if at == graph.query_id() {
            continue;
        }
        let next: Vec<&str> = if reverse {
            graph.incoming(&at).filter(|e| e.semantics.is_chain()).map(|e| e.source.as_str()).collect()
        } else {
            graph.outgoing(&at).filter(|e| e.semantics.is_chain()).map(|e| e.target.as_str()).collect()
        };
        for n in next {
            if seen.insert(n.to_string()) {
                queue.push_back(n.to_string());
            }
        }
    }
    seen
}

/// Scores hypothesis `h`:
/// `raw = a*support - b*refute + g*c_mech + d*d_path - l*conflicts`,
/// `score = logistic(raw)`.
///
/// Support sums supports edges inside the hypothesis's evidence component
/// (edges ending on a node that leads into `h` or its anchor, or lying on a
/// chain out of the anchor). Refutation sums refutes edges aimed at `h` or its
/// anchor.
pub fn aggregate_score(graph: &EvidenceGraph, h: &str, weights: &ScoringWeights) -> Result<ScoreBreakdown, ScoringError> {
    weights.validate()?;
    let anchor = graph.anchor(h)?.map(|n| n.id.as_str());
    let mut roots = vec![h];
    roots.extend(anchor);
    let upstream = chain_closure(graph, &roots, true);
    let downstream = match anchor {
        Some(a) => chain_closure(graph, &[a], false),
        None => BTreeSet::new(),
    };
    let query = graph.query_id();

    let mut sum_support = 0.0;
    let mut sum_refute = 0.0;
    for e in graph.edges() {
        match e.semantics {
            EdgeSemantics::Supports => {
                let into = e.target != query && upstream.contains(&e.target);
                let out_of_anchor = e.source != query && downstream.contains(&e.source);
                if into || out_of_anchor {
                    sum_support += e.weight;
                }
            }
            EdgeSemantics::Refutes => {
                if e.target == h || Some(e.target.as_str()) == anchor {
                    sum_refute += e.weight;
                }
            }
            EdgeSemantics::Entails => {}
        }
    }

    let c_mech = mechanistic_connectivity(graph, h, PathLimits::default())?;
    let d_path = disjoint_support_paths(graph, h)?;
    let conflict_count = graph.hotspots().iter().filter(|s| s.touches(&roots)).count();

    let raw = weights.alpha_support * sum_support - weights.beta_refute * sum_refute
        + weights.gamma_mech * c_mech
        + weights.delta_disjoint * d_path as f64
        - weights.lambda_conflict * conflict_count as f64;
    Ok(ScoreBreakdown {
        hypothesis_id: h.to_string(),
        sum_support,
        sum_refute,
        c_mech,
        d_path,
        conflict_count,
        raw,
        score: logistic(raw),
    })
}

/// Scores every hypothesis in the graph, in id order.
pub fn score_all(graph: &EvidenceGraph, weights: &ScoringWeights) -> Result<Vec<ScoreBreakdown>, ScoringError> {
    graph.hypothesis_ids().iter().map(|h| aggregate_score(graph, h, weights)).collect()
}

pub fn compare(a: &ScoreBreakdown, b: &ScoreBreakdown) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(b.d_path.cmp(&a.d_path))
        .then(a.sum_refute.total_cmp(&b.sum_refute))
        .then(a.hypothesis_id.cmp(&b.hypothesis_id))
}

/// Score descending; ties by more disjoint paths, less refutation, then id.
pub fn rank(breakdowns: &[ScoreBreakdown]) -> Result<Vec<String>, ScoringError> {
    let mut ids = BTreeSet::new();
    for b in breakdowns {
        if !ids.insert(b.hypothesis_id.as_str()) {
            return Err(ScoringError::Duplicate(b.hypothesis_id.clone()));
        }
    }
    let mut sorted: Vec<&ScoreBreakdown> = breakdowns.iter().collect();
    sorted.sort_by(|a, b| compare(a, b));
    Ok(sorted.into_iter().map(|b| b.hypothesis_id.clone()).collect())
}

/// Largest absolute score change between two rounds over hypotheses present
/// in both, and the ids present in only one of them.
pub fn max_score_change(prev: &BTreeMap<String, f64>, cur: &BTreeMap<String, f64>) -> (f64, Vec<String>) {
    let mut max = 0.0f64;
    let mut unmatched = Vec::new();
    for (h, s) in cur {
        match prev.get(h) {
            Some(p) => max = max.max((s - p).abs()),
            None => unmatched.push(h.clone()),
        }
    }
    unmatched.extend(prev.keys().filter(|h| !cur.contains_key(*h)).cloned());
    (max, unmatched)
}

/// True when `t > 0` and no score moved by more than `delta_stop` since the
/// previous round.
pub fn stop_decision(history: &[BTreeMap<String, f64>], delta_stop: f64, t: usize) -> Result<bool, ScoringError> {
    if history.is_empty() {
        return Err(ScoringError::EmptyHistory);
    }
    if t >= history.len() {
        return Err(ScoringError::RoundOutOfRange { t, len: history.len() });
    }
    if t == 0 {
        return Ok(false);
    }
    let (max, unmatched) = max_score_change(&history[t - 1], &history[t]);
    if !unmatched.is_empty() {
        log::info!("round {t}: hypotheses without a previous score ignored for the stop test: {unmatched:?}");
    }
    Ok(max <= delta_stop)
}
