use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hypograph_bench::layered_graph;
use hypograph_core::agent_runtime::AgentRole;
use hypograph_core::tegraph::{
    delta_magnitude, disjoint_support_paths, mechanistic_connectivity, EdgeSemantics, EvidenceEdge, EvidenceKind,
    EvidenceNode, GraphDelta, PathLimits,
};
use std::hint::black_box;

fn paths(c: &mut Criterion) {
    let mut group = c.benchmark_group("paths");
    for depth in [2, 4, 6] {
        let g = layered_graph(1, depth, 3, 3);
        group.bench_with_input(BenchmarkId::new("mechanistic_connectivity", depth), &g, |b, g| {
            b.iter(|| mechanistic_connectivity(black_box(g), "H0", PathLimits::default()))
        });
        group.bench_with_input(BenchmarkId::new("disjoint_support_paths", depth), &g, |b, g| {
            b.iter(|| disjoint_support_paths(black_box(g), "H0"))
        });
    }
    group.finish();
}

fn side(role: AgentRole, n: usize) -> GraphDelta {
    let mut d = GraphDelta::default();
    for i in 0..n {
        let id = format!("{role}_{i}");
        d.add_nodes.push(EvidenceNode::evidence(&id, EvidenceKind::Claim, &id, role, 2));
        let sem = if role == AgentRole::Skeptic { EdgeSemantics::Refutes } else { EdgeSemantics::Supports };
        d.add_edges.push(EvidenceEdge::new(&id, format!("H{}", i % 5), sem, 0.4, role, 2));
    }
    d
}

fn updates(c: &mut Criterion) {
    let g = layered_graph(5, 3, 3, 5);
    let (pro, ske) = (side(AgentRole::Proponent, 10), side(AgentRole::Skeptic, 10));
    c.bench_function("apply_delta/10", |b| b.iter(|| g.apply_delta(black_box(&pro))));
    c.bench_function("merge/10+10", |b| b.iter(|| g.merge(black_box(&pro), &ske)));
    let after = g.apply_delta(&pro).unwrap();
    c.bench_function("delta_magnitude", |b| b.iter(|| delta_magnitude(black_box(&g), &after)));
    c.bench_function("snapshot_round_trip", |b| {
        b.iter(|| hypograph_core::EvidenceGraph::from_snapshot_json(&black_box(&g).to_snapshot_json()))
    });
}

criterion_group!(benches, paths, updates);
criterion_main!(benches);
