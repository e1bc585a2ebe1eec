//! Regenerates the demo fixtures under `tests/fixtures/demo`.
//!
//! cargo run -p hypograph-core --example make_demo

use std::fs;
use std::path::Path;

use hypograph_core::explorer::{rank_candidates, train_projections, TrainConfig};
use hypograph_core::kg_store::RepurposingQuery;
use hypograph_core::synth::{demo_world, DEMO_QUERY, DEMO_RELATION};

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/demo");
    fs::create_dir_all(&dir).unwrap();
    let world = demo_world(11);
    let mut kg = Vec::new();
    world.kg.write_tsv(&mut kg).unwrap();
    fs::write(dir.join("kg.tsv"), kg).unwrap();
    let mut emb = Vec::new();
    world.embeddings.write_jsonl(&mut emb).unwrap();
    fs::write(dir.join("embeddings.jsonl"), emb).unwrap();
    let params = train_projections(&world.kg, &world.embeddings, TrainConfig::default()).unwrap();
    fs::write(dir.join("params.json"), params.to_json()).unwrap();

    let query = RepurposingQuery::infer(&world.kg, DEMO_QUERY, DEMO_RELATION).unwrap();
    for h in rank_candidates(&query, &world.kg, &world.embeddings, &params, 8).unwrap().hypotheses {
        println!("{} {} {:.4}", h.id, h.candidate, h.seed_score);
    }
}
