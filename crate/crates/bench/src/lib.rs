//! Fixture builders shared by the benchmarks.

use hypograph_core::agent_runtime::AgentRole;
use hypograph_core::evalkit::LabeledRanking;
use hypograph_core::explorer::{train_projections, TrainConfig};
use hypograph_core::kg_store::RepurposingQuery;
use hypograph_core::synth::{demo_world, DemoWorld, DEMO_QUERY, DEMO_RELATION};
use hypograph_core::tegraph::{EdgeSemantics, EvidenceEdge, EvidenceKind, EvidenceNode, GraphDelta, NodeRole};
use hypograph_core::{EvidenceGraph, ProjectionParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `hypotheses` hypotheses, each with `depth` layers of `width` evidence
/// nodes wired towards its anchor, plus a few refutations.
pub fn layered_graph(hypotheses: usize, depth: usize, width: usize, seed: u64) -> EvidenceGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let query = EvidenceNode {
        id: "q".into(),
        role: NodeRole::Query,
        label: "query".into(),
        evidence_kind: None,
        entity: Some("q".into()),
        created_by: AgentRole::Explorer,
        round: 0,
    };
    let mut delta = GraphDelta::default();
    for h in 0..hypotheses {
        let anchor = format!("c{h}");
        delta.add_nodes.push(EvidenceNode {
            id: format!("H{h}"),
            role: NodeRole::Hypothesis,
            label: anchor.clone(),
            evidence_kind: None,
            entity: Some(anchor.clone()),
            created_by: AgentRole::Explorer,
            round: 0,
        });
        delta.add_nodes.push(EvidenceNode::evidence(&anchor, EvidenceKind::Mechanism, &anchor, AgentRole::Explorer, 0));
        let mut previous = vec![anchor];
        for layer in 0..depth {
            let ids: Vec<String> = (0..width).map(|w| format!("e{h}_{layer}_{w}")).collect();
            for id in &ids {
                delta.add_nodes.push(EvidenceNode::evidence(id, EvidenceKind::Target, id, AgentRole::Proponent, 1));
                for p in &previous {
                    if rng.gen_bool(0.6) {
                        let sem = if rng.gen_bool(0.5) { EdgeSemantics::Supports } else { EdgeSemantics::Entails };
                        delta.add_edges.push(EvidenceEdge::new(p, id, sem, rng.gen_range(0.1..1.0), AgentRole::Proponent, 1));
                    }
                }
            }
            previous = ids;
        }
        for p in &previous {
            delta.add_edges.push(EvidenceEdge::new(p, "q", EdgeSemantics::Supports, 0.5, AgentRole::Proponent, 1));
        }
        let risk = format!("r{h}");
        delta.add_nodes.push(EvidenceNode::evidence(&risk, EvidenceKind::Risk, &risk, AgentRole::Skeptic, 1));
        delta.add_edges.push(EvidenceEdge::new(&risk, format!("H{h}"), EdgeSemantics::Refutes, 0.3, AgentRole::Skeptic, 1));
    }
    EvidenceGraph::with_query(query).apply_delta(&delta).expect("generated delta is valid")
}

/// `n` scored items with roughly one positive in five, scores mildly
/// informative.
pub fn labeled_ranking(n: usize, seed: u64) -> LabeledRanking {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LabeledRanking::new((0..n).map(|i| {
        let label = rng.gen_bool(0.2);
        let score = rng.gen_range(0.0..1.0) + if label { 0.3 } else { 0.0 };
        (format!("c{i}"), score, label)
    }))
    .expect("distinct ids")
}

pub struct PoolFixture {
    pub world: DemoWorld,
    pub params: ProjectionParams,
    pub query: RepurposingQuery,
}

/// The demo world with freshly trained projections.
pub fn pool_fixture() -> PoolFixture {
    let world = demo_world(11);
    let params = train_projections(&world.kg, &world.embeddings, TrainConfig::default()).expect("demo world trains");
    let query = RepurposingQuery::infer(&world.kg, DEMO_QUERY, DEMO_RELATION).expect("demo query exists");
    PoolFixture { world, params, query }
}
