//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use hypograph_core::agent_runtime::{
    parse_validate, AgentMode, AgentRole, AgentRuntime, CallBudget, LiveBackend, LiveConfig, PromptStore,
};
use hypograph_core::evalkit::{auprc, auroc, precision_at_k, recall_at_k, LabeledRanking};
use hypograph_core::evolution::{evolve_runs, load_library, load_library_or_default, persist_library, DEFAULT_QUALITY_THRESHOLD};
use hypograph_core::explorer::{score_triplet, train_projections, ComplexEmbedding, TrainConfig};
use hypograph_core::orchestrator::{run_investigation, InvestigationInputs, TerminationReason};
use hypograph_core::pi_scoring::{aggregate_score, ScoringWeights};
use hypograph_core::synth::{held_out_mrr, planted_toy, random_mrr};
use hypograph_core::tegraph::{
    EdgeSemantics, EvidenceEdge, EvidenceGraph, EvidenceKind, EvidenceNode, GraphDelta, MergePair, NodeRole,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// Investigation loop conformance

fn investigation_conformance() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut bytes = Vec::new();
    for i in 0..3 {
        let run = dir.path().join(format!("run{i}"));
        let r = common::run_demo(&run, &dir.path().join(format!("prompts{i}")));
        ensure(r.termination_reason == TerminationReason::ScoreConverged, || {
            format!("run {i} ended with {:?}", r.termination_reason)
        })?;
        ensure(r.rounds_executed == 2, || format!("run {i} executed {} rounds, expected stop at t=1", r.rounds_executed))?;
        ensure(!r.rounds[0].stop, || "stopped at t=0".into())?;
        let d = r.rounds[1].max_delta.ok_or("no delta at t=1")?;
        ensure(d <= 0.03, || format!("t=1 delta {d} above 0.03"))?;
        bytes.push(fs::read(run.join("result.json")).map_err(|e| e.to_string())?);
    }
    ensure(bytes[0] == bytes[1] && bytes[1] == bytes[2], || "result.json differs across runs".into())?;

    // Even with zero score change after round 0, the run must continue.
    let frozen = frozen_scenario(dir.path());
    let d = common::demo();
    let store = PromptStore::open(dir.path().join("p-frozen")).map_err(|e| e.to_string())?;
    let config = common::demo_config();
    let runtime = common::scripted(&frozen, config.call_budget);
    let inputs = InvestigationInputs {
        run_id: "frozen".into(),
        query: d.query.clone(),
        kg: &d.kg,
        embeddings: &d.embeddings,
        params: &d.params,
        prompts: &store,
        library: None,
        run_dir: None,
    };
    let r = run_investigation(&inputs, &config, &runtime).map_err(|e| e.to_string())?;
    ensure(!r.rounds[0].stop && r.rounds_executed == 2, || "frozen scores stopped at t=0".into())?;

    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("converged at t=1 with identical result.json over 3 runs in {elapsed:.2?}"))
}

/// A scenario where nobody adds evidence, so scores never move.
fn frozen_scenario(dir: &Path) -> PathBuf {
    let empty = json!({"graph_updates": {}});
    let score = json!({"scoring_summary": [
        {"hypothesis_id": "H1", "score": 0.5}, {"hypothesis_id": "H2", "score": 0.5}, {"hypothesis_id": "H3", "score": 0.5}], "ranking": ["H1", "H2", "H3"],
        "delta_since_last_round": 0.0, "stop_decision": {"should_stop": true}});
    let mut lines = vec![json!({"role": "PI", "mode": "init", "response": {"plan": {"rounds": 2}}})];
    for _ in 0..4 {
        lines.push(json!({"role": "Proponent", "response": empty}));
        lines.push(json!({"role": "Skeptic", "response": empty}));
    }
    lines.push(json!({"role": "PI", "mode": "score", "response": score}));
    lines.push(json!({"role": "PI", "mode": "revise", "response": {"revisions": []}}));
    lines.push(json!({"role": "PI", "mode": "score", "response": score}));
    let path = dir.join("frozen.jsonl");
    let text: String = lines.iter().map(|l| l.to_string() + "\n").collect();
    fs::write(&path, text).unwrap();
    path
}

// ---------------------------------------------------------------------------
// Bilinear scorer oracle

fn trilinear(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] * b[k] * c[k];
    }
    s
}

fn scorer_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let d = rng.gen_range(1..=16);
        let mut v = || (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect::<Vec<f64>>();
        let (qr, qi, rr, ri, cr, ci) = (v(), v(), v(), v(), v(), v());
        let expected = trilinear(&qr, &rr, &cr) + trilinear(&qi, &rr, &ci) + trilinear(&qr, &ri, &ci) - trilinear(&qi, &ri, &cr);
        let got = score_triplet(
            &ComplexEmbedding::new(qr, qi),
            &ComplexEmbedding::new(rr, ri),
            &ComplexEmbedding::new(cr, ci),
        )
        .map_err(|e| e.to_string())?;
        worst = worst.max((got - expected).abs());
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
    let one = |r: f64, i: f64| ComplexEmbedding::new(vec![r], vec![i]);
    let a = score_triplet(&one(1.0, 0.0), &one(2.0, 0.0), &one(3.0, 0.0)).map_err(|e| e.to_string())?;
    let b = score_triplet(&one(0.0, 1.0), &one(0.0, 1.0), &one(1.0, 0.0)).map_err(|e| e.to_string())?;
    ensure(a == 6.0 && b == -1.0, || format!("hand cases gave {a} and {b}"))?;
    Ok(format!("1000 random cases within {worst:.1e}; hand cases 6 and -1 exact"))
}

// ---------------------------------------------------------------------------
// Explorer learning sanity

fn explorer_learning() -> Outcome {
    let start = Instant::now();
    let toy = planted_toy(3);
    let config = TrainConfig::default();
    let params = train_projections(&toy.kg, &toy.embeddings, config).map_err(|e| e.to_string())?;
    let mrr = held_out_mrr(&toy, &params).map_err(|e| e.to_string())?;
    let baseline = random_mrr(&toy);
    ensure(mrr > baseline, || format!("held-out MRR {mrr:.4} not above random {baseline:.4}"))?;
    let again = train_projections(&toy.kg, &toy.embeddings, config).map_err(|e| e.to_string())?;
    ensure(params.to_json() == again.to_json(), || "retraining with the same seed differs".into())?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("held-out MRR {mrr:.4} vs random {baseline:.4}; retrain bit-identical; {elapsed:.2?}"))
}

// ---------------------------------------------------------------------------
// Evidence graph properties

fn plain_node(id: &str, role: NodeRole, entity: Option<&str>) -> EvidenceNode {
    EvidenceNode {
        id: id.into(),
        role,
        label: id.into(),
        evidence_kind: None,
        entity: entity.map(str::to_string),
        created_by: AgentRole::Explorer,
        round: 0,
    }
}

fn seeded_graph() -> EvidenceGraph {
    let g = EvidenceGraph::with_query(plain_node("q", NodeRole::Query, Some("q")));
    let mut delta = GraphDelta::default();
    for i in 1..=3 {
        delta.add_nodes.push(plain_node(&format!("H{i}"), NodeRole::Hypothesis, Some(&format!("c{i}"))));
        delta.add_edges.push(EvidenceEdge::new("q", format!("H{i}"), EdgeSemantics::Entails, 0.6, AgentRole::Explorer, 0));
    }
    g.apply_delta(&delta).unwrap()
}

const KINDS: [EvidenceKind; 5] = [
    EvidenceKind::Target,
    EvidenceKind::Pathway,
    EvidenceKind::Phenotype,
    EvidenceKind::Risk,
    EvidenceKind::Claim,
];
const SEMANTICS: [EdgeSemantics; 3] = [EdgeSemantics::Supports, EdgeSemantics::Refutes, EdgeSemantics::Entails];

/// A valid random delta. New node ids come from `counter`; anchors `c1..c3`
/// are added when missing.
fn random_delta(g: &EvidenceGraph, rng: &mut ChaCha8Rng, counter: &mut usize, prefix: &str, allow_merge: bool) -> GraphDelta {
    let mut delta = GraphDelta::default();
    let by = if prefix == "s" { AgentRole::Skeptic } else { AgentRole::Proponent };
    for _ in 0..rng.gen_range(0..=3) {
        let kind = KINDS[rng.gen_range(0..KINDS.len())];
        let id = if rng.gen_bool(0.15) {
            format!("c{}", rng.gen_range(1..=3))
        } else {
            *counter += 1;
            format!("{prefix}{counter}")
        };
        if g.node(&id).is_some() || delta.add_nodes.iter().any(|n| n.id == id) {
            continue;
        }
        delta.add_nodes.push(EvidenceNode::evidence(id.clone(), kind, id, by, 1));
    }
    let mut ids: Vec<String> = g.nodes().map(|n| n.id.clone()).collect();
    ids.extend(delta.add_nodes.iter().map(|n| n.id.clone()));
    for _ in 0..rng.gen_range(0..=4) {
        let s = &ids[rng.gen_range(0..ids.len())];
        let t = &ids[rng.gen_range(0..ids.len())];
        let sem = SEMANTICS[rng.gen_range(0..SEMANTICS.len())];
        if s == t || g.edge(s, t, sem).is_some() || delta.add_edges.iter().any(|e| &e.source == s && &e.target == t && e.semantics == sem) {
            continue;
        }
        delta.add_edges.push(EvidenceEdge::new(s.clone(), t.clone(), sem, rng.gen_range(0.0..=1.0), by, 1));
    }
    if allow_merge && rng.gen_bool(0.1) {
        let plain: Vec<&EvidenceNode> = g
            .nodes()
            .filter(|n| n.role == NodeRole::Evidence && !n.id.starts_with('c'))
            .collect();
        if plain.len() >= 2 {
            let a = plain[rng.gen_range(0..plain.len())].id.clone();
            let b = plain[rng.gen_range(0..plain.len())].id.clone();
            if a != b {
                delta.merge_pairs.push(MergePair { keep: a, remove: b });
            }
        }
    }
    delta
}

fn check_invariants(g: &EvidenceGraph) -> Result<(), String> {
    for e in g.edges() {
        ensure((0.0..=1.0).contains(&e.weight), || format!("edge {}->{} weight {}", e.source, e.target, e.weight))?;
        ensure(g.node(&e.source).is_some() && g.node(&e.target).is_some(), || {
            format!("dangling edge {}->{}", e.source, e.target)
        })?;
    }
    ensure(g.node("q").is_some_and(|n| n.role == NodeRole::Query), || "query node lost".into())?;
    for i in 1..=3 {
        let id = format!("H{i}");
        ensure(g.node(&id).is_some_and(|n| n.role == NodeRole::Hypothesis), || format!("{id} lost"))?;
    }
    ensure(g.nodes().filter(|n| n.role == NodeRole::Query).count() == 1, || "query count changed".into())
}

fn tegraph_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut counter = 0;
    let mut g = seeded_graph();
    let mut protected = 0;
    for i in 0..1000 {
        if i % 100 == 0 {
            g = seeded_graph();
        }
        let delta = random_delta(&g, &mut rng, &mut counter, "n", true);
        g = g.apply_delta(&delta).map_err(|e| format!("valid delta {i} rejected: {e}"))?;
        check_invariants(&g).map_err(|e| format!("after delta {i}: {e}"))?;
        if i % 10 == 0 {
            let victim = if i % 20 == 0 { "q" } else { "H2" };
            let keep = g.nodes().find(|n| n.role == NodeRole::Evidence).map(|n| n.id.clone()).unwrap_or("H1".into());
            let attack = GraphDelta {
                merge_pairs: vec![MergePair { keep, remove: victim.into() }],
                ..Default::default()
            };
            ensure(g.apply_delta(&attack).is_err(), || format!("merge removing {victim} accepted"))?;
            let second_query = GraphDelta {
                add_nodes: vec![plain_node("q2", NodeRole::Query, None)],
                ..Default::default()
            };
            ensure(g.apply_delta(&second_query).is_err(), || "second query node accepted".into())?;
            protected += 2;
        }
    }

    // Disjoint deltas merge to the union.
    let mut unions = 0;
    for _ in 0..200 {
        let base = {
            let mut b = seeded_graph();
            for _ in 0..rng.gen_range(0..5) {
                b = b.apply_delta(&random_delta(&b, &mut rng, &mut counter, "n", false)).unwrap();
            }
            b
        };
        let pro = random_delta(&base, &mut rng, &mut counter, "p", false);
        let mut ske = random_delta(&base, &mut rng, &mut counter, "s", false);
        // Keep the deltas disjoint: no shared node ids or edge keys.
        let pro_nodes: BTreeSet<&str> = pro.add_nodes.iter().map(|n| n.id.as_str()).collect();
        ske.add_nodes.retain(|n| !pro_nodes.contains(n.id.as_str()));
        let pro_keys: BTreeSet<_> = pro.add_edges.iter().map(|e| e.key()).collect();
        let ske_ids: BTreeSet<String> = base.nodes().map(|n| n.id.clone()).chain(ske.add_nodes.iter().map(|n| n.id.clone())).collect();
        ske.add_edges.retain(|e| !pro_keys.contains(&e.key()) && ske_ids.contains(&e.source) && ske_ids.contains(&e.target));
        let (merged, _) = base.merge(&pro, &ske).map_err(|e| format!("disjoint merge rejected: {e}"))?;
        let nodes: BTreeSet<String> = merged.nodes().map(|n| n.id.clone()).collect();
        let expected_nodes: BTreeSet<String> = base
            .nodes()
            .map(|n| n.id.clone())
            .chain(pro.add_nodes.iter().chain(&ske.add_nodes).map(|n| n.id.clone()))
            .collect();
        ensure(nodes == expected_nodes, || "merged node set is not the union".into())?;
        let edges: BTreeSet<_> = merged.edges().map(|e| e.key()).collect();
        let expected_edges: BTreeSet<_> = base.edges().chain(&pro.add_edges).chain(&ske.add_edges).map(|e| e.key()).collect();
        ensure(edges == expected_edges, || "merged edge set is not the union".into())?;
        unions += 1;
    }

    // Snapshot round trip.
    for i in 0..200 {
        let mut h = seeded_graph();
        for _ in 0..rng.gen_range(0..8) {
            h = h.apply_delta(&random_delta(&h, &mut rng, &mut counter, "n", true)).unwrap();
        }
        let back = EvidenceGraph::from_snapshot_json(&h.to_snapshot_json()).map_err(|e| e.to_string())?;
        ensure(back == h, || format!("snapshot round trip {i} differs:\n{back:#?}\nvs\n{h:#?}"))?;
    }
    Ok(format!("1000 deltas keep invariants, {protected} protection probes rejected, {unions} disjoint merges equal unions, 200 snapshots round-trip"))
}

// ---------------------------------------------------------------------------
// Score monotonicity

fn random_weights(rng: &mut ChaCha8Rng) -> ScoringWeights {
    ScoringWeights {
        alpha_support: rng.gen_range(0.0..=4.0),
        beta_refute: rng.gen_range(0.0..=4.0),
        gamma_mech: rng.gen_range(0.0..=4.0),
        delta_disjoint: rng.gen_range(0.0..=4.0),
        lambda_conflict: rng.gen_range(0.0..=4.0),
    }
}

fn add_edge(g: &EvidenceGraph, rng: &mut ChaCha8Rng, sem: EdgeSemantics, h: &str) -> Option<EvidenceGraph> {
    let ids: Vec<String> = g.nodes().map(|n| n.id.clone()).collect();
    for _ in 0..50 {
        let s = ids[rng.gen_range(0..ids.len())].clone();
        // Half the time aim straight at the hypothesis.
        let t = if rng.gen_bool(0.5) { h.to_string() } else { ids[rng.gen_range(0..ids.len())].clone() };
        if s == t || g.edge(&s, &t, sem).is_some() {
            continue;
        }
        let delta = GraphDelta {
            add_edges: vec![EvidenceEdge::new(s, t, sem, rng.gen_range(0.0..=1.0), AgentRole::Proponent, 2)],
            ..Default::default()
        };
        return Some(g.apply_delta(&delta).unwrap());
    }
    None
}

fn score_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut counter = 0;
    let mut checked = 0;
    for i in 0..500 {
        let mut g = seeded_graph();
        for _ in 0..rng.gen_range(0..10) {
            g = g.apply_delta(&random_delta(&g, &mut rng, &mut counter, "n", true)).unwrap();
        }
        let h = format!("H{}", rng.gen_range(1..=3));
        let w = random_weights(&mut rng);
        let before = aggregate_score(&g, &h, &w).map_err(|e| e.to_string())?.score;
        if let Some(g2) = add_edge(&g, &mut rng, EdgeSemantics::Supports, &h) {
            let after = aggregate_score(&g2, &h, &w).map_err(|e| e.to_string())?.score;
            ensure(after >= before, || format!("case {i}: supports edge lowered {h} from {before} to {after}"))?;
            checked += 1;
        }
        if let Some(g3) = add_edge(&g, &mut rng, EdgeSemantics::Refutes, &h) {
            let after = aggregate_score(&g3, &h, &w).map_err(|e| e.to_string())?.score;
            ensure(after <= before, || format!("case {i}: refutes edge raised {h} from {before} to {after}"))?;
            checked += 1;
        }
    }
    let empty = aggregate_score(&seeded_graph(), "H1", &ScoringWeights::default()).map_err(|e| e.to_string())?.score;
    ensure(empty == 0.5, || format!("no-evidence score {empty}"))?;
    Ok(format!("{checked} single-edge additions respect direction; no-evidence score exactly 0.5"))
}

// ---------------------------------------------------------------------------
// Metric oracles

fn brute_auroc(items: &[(String, f64, bool)]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for p in items.iter().filter(|i| i.2) {
        for n in items.iter().filter(|i| !i.2) {
            pairs += 1.0;
            if p.1 > n.1 {
                num += 1.0;
            } else if p.1 == n.1 {
                num += 0.5;
            }
        }
    }
    num / pairs
}

fn ordered(items: &[(String, f64, bool)]) -> Vec<(String, f64, bool)> {
    let mut v = items.to_vec();
    v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    v
}

fn brute_auprc(items: &[(String, f64, bool)]) -> f64 {
    let v = ordered(items);
    let positives = v.iter().filter(|i| i.2).count() as f64;
    let mut total = 0.0;
    for (i, it) in v.iter().enumerate() {
        if it.2 {
            let prefix = &v[..=i];
            total += prefix.iter().filter(|x| x.2).count() as f64 / prefix.len() as f64;
        }
    }
    total / positives
}

fn brute_hits(items: &[(String, f64, bool)], k: usize) -> usize {
    ordered(items).iter().take(k).filter(|i| i.2).count()
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let n = rng.gen_range(2..=20);
        let mut items: Vec<(String, f64, bool)> = (0..n)
            .map(|i| (format!("c{i:02}"), (rng.gen_range(0..8) as f64) / 4.0, rng.gen_bool(0.4)))
            .collect();
        // Both classes present.
        items[0].2 = true;
        items[1].2 = false;
        let r = LabeledRanking::new(items.clone()).map_err(|e| e.to_string())?;
        let positives = items.iter().filter(|i| i.2).count();
        let diffs = [
            auroc(&r).map_err(|e| e.to_string())? - brute_auroc(&items),
            auprc(&r).map_err(|e| e.to_string())? - brute_auprc(&items),
        ];
        for d in diffs {
            worst = worst.max(d.abs());
        }
        for k in 1..=n + 2 {
            let p = precision_at_k(&r, k).map_err(|e| e.to_string())?;
            let rc = recall_at_k(&r, k).map_err(|e| e.to_string())?;
            let hits = brute_hits(&items, k);
            worst = worst.max((p - hits as f64 / k as f64).abs());
            worst = worst.max((rc - hits as f64 / positives as f64).abs());
            ensure(p * k as f64 / positives as f64 == rc, || {
                format!("case {case} k={k}: P@k*k/positives = {} but R@k = {rc}", p * k as f64 / positives as f64)
            })?;
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("100 instances agree with brute force within {worst:.1e}; P@k*k/positives = R@k exactly"))
}

// ---------------------------------------------------------------------------
// Schema gate

fn reference_payloads() -> Vec<(AgentRole, AgentMode, Value)> {
    vec![
        (AgentRole::Pi, AgentMode::Init, json!({"plan": {"rounds": 2, "stopping": {"delta_threshold": 0.03}}})),
        (
            AgentRole::Pi,
            AgentMode::Score,
            json!({"scoring_summary": [{"hypothesis_id": "H1", "score": 0.68}], "ranking": ["H1", "H2"],
                   "delta_since_last_round": 0.04, "stop_decision": {"should_stop": false}}),
        ),
        (
            AgentRole::Pi,
            AgentMode::Revise,
            json!({"revisions": [{"hypothesis_id": "H1", "graph_actions": [{"type": "add_mechanism_link", "assignee": "Proponent"}],
                   "debate_focus": ["mechanistic closure & safety hotspots"]}],
                   "seed_request": {"should_regenerate": false, "reason": "example"}}),
        ),
        (
            AgentRole::Pi,
            AgentMode::ReportAndEvolve,
            json!({"final_recommendations": [{"hypothesis_id": "H1", "score": 0.75}], "prompt_patches": [{"role": "Proponent", "patch": "example"}]}),
        ),
        (
            AgentRole::Proponent,
            AgentMode::BuildChain,
            json!({"graph_updates": {"add_nodes": [{"id": "n1", "type": "Target", "label": "..."}, {"id": "n2", "type": "Pathway", "label": "..."}],
                   "add_edges": [{"source": "drugX", "target": "n1", "relation": "acts_on", "weight": 0.8, "rationale": "brief"}],
                   "merge": [{"keep": "n2", "remove": "n2_dup"}]},
                   "subconclusions": [{"id": "C1", "text": "closure formed", "confidence": "medium"}], "uncertainties": ["e.g., BBB unknown"]}),
        ),
        (
            AgentRole::Skeptic,
            AgentMode::BuildCounterchain,
            json!({"graph_updates": {"add_nodes": [{"id": "k1", "type": "Pathway", "label": "RiskPathway"}],
                   "add_edges": [{"source": "drugX", "target": "k1", "relation": "involved_in", "weight": 0.7, "rationale": "brief"},
                                 {"source": "k1", "target": "H1", "relation": "refutes", "weight": 0.85, "rationale": "safety conflict"}],
                   "conflict_hotspots": [{"topic": "supine_hypertension", "pro_nodes": ["..."], "con_nodes": ["..."]}]},
                   "counterclaims": [{"id": "K1", "text": "directional conflict/insufficient PK", "confidence": "medium"}],
                   "falsification_tests": ["minimal falsifiable checks..."]}),
        ),
    ]
}

fn remove(v: &Value, path: &[&str]) -> Value {
    let mut v = v.clone();
    set(&mut v, path, None);
    v
}

fn replace(v: &Value, path: &[&str], new: Value) -> Value {
    let mut v = v.clone();
    set(&mut v, path, Some(new));
    v
}

fn set(v: &mut Value, path: &[&str], new: Option<Value>) {
    let (last, parents) = path.split_last().unwrap();
    let mut cur = v;
    for p in parents {
        cur = match p.parse::<usize>() {
            Ok(i) => &mut cur[i],
            Err(_) => &mut cur[*p],
        };
    }
    match (last.parse::<usize>(), new) {
        (Ok(i), Some(n)) => cur[i] = n,
        (Ok(i), None) => {
            cur.as_array_mut().unwrap().remove(i);
        }
        (Err(_), Some(n)) => cur[*last] = n,
        (Err(_), None) => {
            cur.as_object_mut().unwrap().remove(*last);
        }
    }
}

fn schema_gate() -> Outcome {
    let examples = reference_payloads();
    for (role, mode, payload) in &examples {
        parse_validate(*role, *mode, &payload.to_string()).map_err(|e| format!("{role}/{mode} example rejected: {e}"))?;
    }
    let ex = |i: usize| examples[i].2.clone();
    let (init, score, revise, report, pro, ske) = (ex(0), ex(1), ex(2), ex(3), ex(4), ex(5));
    use AgentMode::*;
    use AgentRole::*;
    let mutations: Vec<(AgentRole, AgentMode, Value, &str)> = vec![
        (Pi, Init, remove(&init, &["plan"]), "plan"),
        (Pi, Init, replace(&init, &["plan", "weights"], json!({"alpha_support": 5.0})), "plan.weights.alpha_support"),
        (Pi, Init, replace(&init, &["plan", "weights"], json!({"beta_refute": -0.5})), "plan.weights.beta_refute"),
        (Pi, Init, replace(&init, &["plan", "stopping", "delta_threshold"], json!("small")), "plan.stopping.delta_threshold"),
        (Pi, Score, remove(&score, &["scoring_summary"]), "scoring_summary"),
        (Pi, Score, remove(&score, &["scoring_summary", "0", "hypothesis_id"]), "scoring_summary[0].hypothesis_id"),
        (Pi, Score, replace(&score, &["scoring_summary", "0", "score"], json!(1.7)), "scoring_summary[0].score"),
        (Pi, Score, remove(&score, &["ranking"]), "ranking"),
        (Pi, Score, replace(&score, &["weights"], json!({"gamma_mech": 9})), "weights.gamma_mech"),
        (Pi, Score, replace(&score, &["stop_decision", "should_stop"], json!("no")), "stop_decision.should_stop"),
        (Pi, Revise, remove(&revise, &["revisions"]), "revisions"),
        (Pi, Revise, replace(&revise, &["revisions", "0", "graph_actions", "0", "assignee"], json!("PI")), "revisions[0].graph_actions[0].assignee"),
        (Pi, Revise, replace(&revise, &["revisions", "0", "graph_actions", "0", "assignee"], json!("Explorer")), "revisions[0].graph_actions[0].assignee"),
        (Pi, Revise, remove(&revise, &["revisions", "0", "graph_actions", "0", "type"]), "revisions[0].graph_actions[0].type"),
        (Pi, Revise, remove(&revise, &["revisions", "0", "hypothesis_id"]), "revisions[0].hypothesis_id"),
        (Pi, ReportAndEvolve, json!({"summary": "no known section"}), "final_recommendations"),
        (Pi, ReportAndEvolve, replace(&report, &["prompt_patches", "0", "role"], json!("Oracle")), "prompt_patches[0].role"),
        (Proponent, BuildChain, remove(&pro, &["graph_updates"]), "graph_updates"),
        (Proponent, BuildChain, replace(&pro, &["graph_updates", "add_edges", "0", "weight"], json!(1.3)), "graph_updates.add_edges[0].weight"),
        (Skeptic, BuildCounterchain, remove(&ske, &["graph_updates", "add_edges", "1", "target"]), "graph_updates.add_edges[1].target"),
    ];
    ensure(mutations.len() == 20, || "expected 20 mutation cases".into())?;
    for (i, (role, mode, payload, path)) in mutations.iter().enumerate() {
        match parse_validate(*role, *mode, &payload.to_string()) {
            Ok(_) => return Err(format!("mutation {i} ({path}) accepted")),
            Err(e) => {
                ensure(e.paths().contains(path), || format!("mutation {i}: error `{e}` does not name `{path}`"))?;
            }
        }
    }
    Ok("6 reference payloads validate; 20 mutations rejected at the mutated path".into())
}

// ---------------------------------------------------------------------------
// Evolution audit chain

fn evolution_audit() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let prompts_dir = dir.path().join("prompts");
    let runs: Vec<PathBuf> = ["run-a", "run-b"].iter().map(|id| dir.path().join("runs").join(id)).collect();
    for r in &runs {
        common::run_demo(r, &prompts_dir);
    }
    let library_path = dir.path().join("library.json");
    let evolve = |scenario: &str| -> Result<_, String> {
        let mut prompts = PromptStore::open(&prompts_dir).map_err(|e| e.to_string())?;
        let mut library = load_library_or_default(&library_path).map_err(|e| e.to_string())?;
        let runtime = common::scripted(&common::fixture(scenario), 20);
        let summary = evolve_runs(&runtime, &mut prompts, &mut library, &runs, DEFAULT_QUALITY_THRESHOLD).map_err(|e| e.to_string())?;
        prompts.save().map_err(|e| e.to_string())?;
        persist_library(&library, &library_path).map_err(|e| e.to_string())?;
        Ok((summary, library))
    };
    let (first, library) = evolve("evolve_scenario.jsonl")?;
    ensure(first.added.len() == 2, || format!("first evolve added {} heuristics", first.added.len()))?;

    let prompts = PromptStore::open(&prompts_dir).map_err(|e| e.to_string())?;
    let mut versions = 0;
    for role in AgentRole::ALL {
        for v in prompts.history(role).iter().filter(|v| v.version > 0) {
            ensure(v.parent_version == Some(v.version - 1), || format!("{role} v{} parent {:?}", v.version, v.parent_version))?;
            let note = v.patch_note.as_deref().ok_or_else(|| format!("{role} v{} has no patch note", v.version))?;
            ensure(Path::new(note).is_file(), || format!("{role} v{} note `{note}` is not a stored report", v.version))?;
            versions += 1;
        }
    }
    ensure(versions >= 3, || format!("only {versions} prompt versions created"))?;

    let (second, again) = evolve("evolve_rerun.jsonl")?;
    ensure(second.added.is_empty(), || format!("re-run added {:?}", second.added))?;
    ensure(second.prompt_updates.is_empty(), || "re-run changed prompts".into())?;
    ensure(again.len() == library.len(), || "library size changed on re-run".into())?;

    let loaded = load_library(&library_path).map_err(|e| e.to_string())?;
    persist_library(&loaded, &dir.path().join("copy.json")).map_err(|e| e.to_string())?;
    let copy = load_library(&dir.path().join("copy.json")).map_err(|e| e.to_string())?;
    ensure(loaded == again && copy == loaded, || "library save/load round trip differs".into())?;
    Ok(format!("{versions} prompt versions chained to stored reports; re-run added 0 heuristics; library round-trips"))
}

// ---------------------------------------------------------------------------
// Call budget

/// A chat-completions stand-in. The Proponent always adds one fresh node so
/// the debate never goes quiet and only the budget can stop it.
fn fake_server() -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let n = counter.fetch_add(1, Ordering::SeqCst);
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap_or(0);
                }
            }
            let mut body = vec![0; length];
            if reader.read_exact(&mut body).is_err() {
                continue;
            }
            let request: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            let content = fake_reply(&request, n);
            let payload = json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string();
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            );
        }
    });
    (format!("http://{addr}/v1"), hits)
}

fn fake_reply(request: &Value, n: usize) -> String {
    let user: Value = request
        .pointer("/messages/1/content")
        .and_then(Value::as_str)
        .and_then(|s| serde_json::from_str(s).ok())
        .unwrap_or(Value::Null);
    let mode = user["mode"].as_str().unwrap_or_default();
    let reply = match mode {
        "init" => json!({"plan": {"rounds": 4}}),
        "score" => json!({
            "scoring_summary": user["hypotheses"].as_array().into_iter().flatten()
                .map(|h| json!({"hypothesis_id": h["id"], "score": 0.5})).collect::<Vec<_>>(),
            "ranking": []
        }),
        "revise" => json!({"revisions": []}),
        "build_chain" | "execute_actions" if user.get("constraints").is_some() => {
            let h = user["hypothesis"]["id"].as_str().unwrap_or("H1");
            json!({"graph_updates": {
                "add_nodes": [{"id": format!("lit{n}"), "type": "Claim", "label": "report"}],
                "add_edges": [{"source": format!("lit{n}"), "target": h, "relation": "supports", "weight": 0.5}]
            }})
        }
        _ => json!({"graph_updates": {}}),
    };
    reply.to_string()
}

fn budget_law() -> Outcome {
    let (url, hits) = fake_server();
    let d = common::demo();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = PromptStore::open(dir.path().join("prompts")).map_err(|e| e.to_string())?;
    let mut seen = BTreeMap::new();
    for n in [1u32, 3, 10] {
        let config = hypograph_core::InvestigationConfig { call_budget: n, ..common::demo_config() };
        let backend = LiveBackend::new(LiveConfig {
            base_url: url.clone(),
            model: "stand-in".into(),
            api_key_env: "HYPOGRAPH_TEST_KEY_UNSET".into(),
            timeout_secs: 10,
            temperature: 0.0,
        });
        let runtime = AgentRuntime::new(Arc::new(backend), CallBudget::new(n));
        let run_dir = dir.path().join(format!("budget{n}"));
        let inputs = InvestigationInputs {
            run_id: format!("budget{n}"),
            query: d.query.clone(),
            kg: &d.kg,
            embeddings: &d.embeddings,
            params: &d.params,
            prompts: &store,
            library: None,
            run_dir: Some(run_dir.clone()),
        };
        let before = hits.load(Ordering::SeqCst);
        let r = run_investigation(&inputs, &config, &runtime).map_err(|e| format!("N={n}: {e}"))?;
        let requests = hits.load(Ordering::SeqCst) - before;
        let transcript = fs::read_to_string(run_dir.join("transcript.jsonl")).map_err(|e| e.to_string())?;
        let live = transcript
            .lines()
            .filter(|l| serde_json::from_str::<Value>(l).is_ok_and(|v| v["backend"] == "live"))
            .count();
        ensure(live <= n as usize, || format!("N={n}: {live} live transcript entries"))?;
        ensure(requests <= n as usize, || format!("N={n}: {requests} requests reached the server"))?;
        ensure(!r.ranked.is_empty(), || format!("N={n}: no ranked result"))?;
        seen.insert(n, (live, r.termination_reason));
    }
    let summary: Vec<String> = seen.iter().map(|(n, (l, t))| format!("N={n}: {l} calls, {}", t.as_str())).collect();
    Ok(summary.join("; "))
}

// ---------------------------------------------------------------------------

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 9] = [
        ("investigation loop conformance", investigation_conformance),
        ("bilinear scorer oracle", scorer_oracle),
        ("explorer learning sanity", explorer_learning),
        ("evidence graph properties", tegraph_properties),
        ("score monotonicity", score_monotonicity),
        ("metric oracles", metric_oracles),
        ("schema gate", schema_gate),
        ("evolution audit chain", evolution_audit),
        ("budget law", budget_law),
    ];
    let mut failed = Vec::new();
    let mut err = std::io::stderr();
    for (name, check) in criteria {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or("panicked".into()))
        });
        // Written to the raw handle so the lines show even when output is captured.
        let line = match &outcome {
            Ok(detail) => format!("ACCEPTANCE PASS  {name}: {detail}\n"),
            Err(why) => {
                failed.push(name);
                format!("ACCEPTANCE FAIL  {name}: {why}\n")
            }
        };
        let _ = err.write_all(line.as_bytes());
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
