//! Graph-grounded multi-agent drug repurposing.
//!
//! An embedding-based explorer proposes candidate hypotheses, two adversarial
//! agents grow a shared evidence graph around them, a PI scores and steers the
//! debate, and finished runs feed a self-evolving prompt and heuristic library.

pub mod agent_runtime;
pub mod evalkit;
pub mod evolution;
pub mod explorer;
pub mod kg_store;
pub mod orchestrator;
pub mod pi_scoring;
pub mod synth;
pub mod tegraph;

pub use agent_runtime::{AgentMode, AgentRole, AgentRuntime, CallBudget};
pub use evalkit::{auprc, auroc, precision_at_k, recall_at_k, MetricsReport};
pub use evolution::{CreditAssignmentReport, Heuristic, HeuristicLibrary};
pub use explorer::{EmbeddingTable, Hypothesis, ProjectionParams};
pub use kg_store::{EntityType, KnowledgeGraph, RepurposingQuery};
pub use orchestrator::{InvestigationConfig, InvestigationResult};
pub use pi_scoring::{ScoreBreakdown, ScoringWeights};
pub use tegraph::{EvidenceGraph, GraphDelta};

use serde_json::Value;

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Compact JSON with object keys sorted at every level.
pub fn canonical_json(v: &Value) -> String {
    let mut out = String::new();
    write_canonical(v, &mut out);
    out
}

fn write_canonical(v: &Value, out: &mut String) {
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}
