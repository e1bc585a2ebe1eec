#![allow(dead_code)]

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use hypograph_core::agent_runtime::{AgentRuntime, CallBudget, PromptStore, ScriptedBackend};
use hypograph_core::explorer::{load_embeddings, EmbeddingTable, ProjectionParams};
use hypograph_core::kg_store::{load_triples, KnowledgeGraph, RepurposingQuery, TripleFormat};
use hypograph_core::orchestrator::{run_investigation, InvestigationConfig, InvestigationInputs, InvestigationResult};
use hypograph_core::synth::{DEMO_QUERY, DEMO_RELATION};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/demo").join(name)
}

pub struct Demo {
    pub kg: KnowledgeGraph,
    pub embeddings: EmbeddingTable,
    pub params: ProjectionParams,
    pub query: RepurposingQuery,
}

pub fn demo() -> Demo {
    let kg = load_triples(BufReader::new(File::open(fixture("kg.tsv")).unwrap()), TripleFormat::Tsv).unwrap().0;
    let embeddings = load_embeddings(BufReader::new(File::open(fixture("embeddings.jsonl")).unwrap())).unwrap();
    let params = ProjectionParams::from_json(&fs::read_to_string(fixture("params.json")).unwrap()).unwrap();
    let query = RepurposingQuery::infer(&kg, DEMO_QUERY, DEMO_RELATION).unwrap();
    Demo { kg, embeddings, params, query }
}

pub fn demo_config() -> InvestigationConfig {
    InvestigationConfig { k_seeds: 3, ..Default::default() }
}

pub fn scripted(path: &Path, budget: u32) -> AgentRuntime {
    let backend = ScriptedBackend::from_jsonl(BufReader::new(File::open(path).unwrap())).unwrap();
    AgentRuntime::new(Arc::new(backend), CallBudget::new(budget))
}

/// Runs the demo scenario into `run_dir`.
pub fn run_demo(run_dir: &Path, prompts: &Path) -> InvestigationResult {
    let d = demo();
    let store = PromptStore::open(prompts).unwrap();
    let config = demo_config();
    let runtime = scripted(&fixture("scenario.jsonl"), config.call_budget);
    let inputs = InvestigationInputs {
        run_id: "demo".into(),
        query: d.query.clone(),
        kg: &d.kg,
        embeddings: &d.embeddings,
        params: &d.params,
        prompts: &store,
        library: None,
        run_dir: Some(run_dir.to_path_buf()),
    };
    run_investigation(&inputs, &config, &runtime).unwrap()
}
