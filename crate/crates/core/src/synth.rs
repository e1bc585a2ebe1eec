//! Synthetic graphs for tests, benchmarks and the demo workspace.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::explorer::{score_pool, EmbeddingTable, ExplorerError, ProjectionParams};
use crate::kg_store::{load_triples, KnowledgeGraph, QueryDirection, RepurposingQuery, TripleFormat};

pub const TOY_RELATION: &str = "indication";
const TOY_CLUSTERS: usize = 5;
const TOY_DIM: usize = 8;

/// A drug/disease graph with five planted clusters of two drugs and two
/// diseases each. Every drug treats both diseases of its cluster, which gives
/// 20 positives; one per cluster is held out of the graph.
pub struct PlantedToy {
    pub kg: KnowledgeGraph,
    pub embeddings: EmbeddingTable,
    /// `(drug, disease)` pairs removed from `kg`.
    pub held_out: Vec<(String, String)>,
}

fn toy_drug(i: usize) -> String {
    format!("DRUG{i:02}")
}

fn toy_disease(i: usize) -> String {
    format!("DIS{i:02}")
}

fn tsv_row(out: &mut String, h: (&str, &str, &str), rel: &str, t: (&str, &str, &str)) {
    let _ = writeln!(out, "{}\t{}\t{}\t{rel}\t{}\t{}\t{}", h.0, h.1, h.2, t.0, t.1, t.2);
}

fn kg_from_tsv(text: &str) -> KnowledgeGraph {
    load_triples(text.as_bytes(), TripleFormat::Tsv).expect("generated rows are well formed").0
}

/// Cluster one-hot in the first five features, every feature jittered.
fn cluster_feature(cluster: usize, rng: &mut ChaCha8Rng, noise: f64) -> Vec<f64> {
    (0..TOY_DIM)
        .map(|j| if j == cluster { 1.0 } else { 0.0 } + rng.gen_range(-noise..noise))
        .collect()
}

pub fn planted_toy(seed: u64) -> PlantedToy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tsv = String::new();
    let mut held_out = Vec::new();
    let mut embeddings = EmbeddingTable::new();
    for c in 0..TOY_CLUSTERS {
        for a in 0..2 {
            let drug = toy_drug(2 * c + a);
            for b in 0..2 {
                let disease = toy_disease(2 * c + b);
                if a == 1 && b == 1 {
                    held_out.push((drug.clone(), disease));
                    continue;
                }
                tsv_row(&mut tsv, (&drug, "drug", &drug), TOY_RELATION, (&disease, "disease", &disease));
            }
        }
        for a in 0..2 {
            let x = cluster_feature(c, &mut rng, 0.15);
            embeddings.insert(toy_drug(2 * c + a), x).expect("finite features");
            let x = cluster_feature(c, &mut rng, 0.15);
            embeddings.insert(toy_disease(2 * c + a), x).expect("finite features");
        }
    }
    PlantedToy {
        kg: kg_from_tsv(&tsv),
        embeddings,
        held_out,
    }
}

/// Diseases a held-out pair's drug is ranked against: all diseases minus the
/// drug's other known indications.
fn filtered_exclusions(kg: &KnowledgeGraph, drug: &str) -> BTreeSet<String> {
    kg.triplets()
        .iter()
        .filter(|t| t.head == drug && t.relation == TOY_RELATION)
        .map(|t| t.tail.clone())
        .collect()
}

/// Filtered mean reciprocal rank of the held-out diseases.
pub fn held_out_mrr(toy: &PlantedToy, params: &ProjectionParams) -> Result<f64, ExplorerError> {
    let mut total = 0.0;
    for (drug, disease) in &toy.held_out {
        let query = RepurposingQuery {
            query_entity: drug.clone(),
            target_relation: TOY_RELATION.into(),
            direction: QueryDirection::DrugSeeksDisease,
        };
        let exclude = filtered_exclusions(&toy.kg, drug);
        let (pool, _) = score_pool(&query, &toy.kg, &toy.embeddings, params, &exclude)?;
        let rank = pool.iter().position(|(c, _)| c == disease).expect("held-out disease is in the pool") + 1;
        total += 1.0 / rank as f64;
    }
    Ok(total / toy.held_out.len() as f64)
}

/// Expected reciprocal rank of one item placed uniformly among `n`.
pub fn random_rank_mrr(n: usize) -> f64 {
    (1..=n).map(|i| 1.0 / i as f64).sum::<f64>() / n as f64
}

/// The random-ranking expectation for the same filtered candidate sets.
pub fn random_mrr(toy: &PlantedToy) -> f64 {
    let diseases = toy.kg.candidates(crate::kg_store::EntityType::Disease).len();
    let total: f64 = toy
        .held_out
        .iter()
        .map(|(drug, _)| random_rank_mrr(diseases - filtered_exclusions(&toy.kg, drug).len()))
        .sum();
    total / toy.held_out.len() as f64
}

pub const DEMO_RELATION: &str = "indication";
pub const DEMO_QUERY: &str = "DIS_RARE";

/// The 30-entity demo world: 8 drugs, 8 diseases, 8 genes, 3 pathways and
/// 3 phenotypes. Drugs and diseases fall in four mechanistic families. The
/// query disease has a single phenotype link and no indications.
pub struct DemoWorld {
    pub kg: KnowledgeGraph,
    pub embeddings: EmbeddingTable,
}

const DEMO_DRUGS: [(&str, &str); 8] = [
    ("DRUG_ALV", "alvarestat"),
    ("DRUG_BEX", "bexotinib"),
    ("DRUG_COR", "corvalimab"),
    ("DRUG_DAN", "danuprazole"),
    ("DRUG_EPI", "epilorant"),
    ("DRUG_FEN", "fenastrine"),
    ("DRUG_GLY", "glycorex"),
    ("DRUG_HAL", "halomectin"),
];

const DEMO_DISEASES: [(&str, &str); 8] = [
    ("DIS_RARE", "Marrow fibrosis syndrome type 4"),
    ("DIS_ARTH", "Inflammatory arthropathy"),
    ("DIS_NEPH", "Fibrotic nephropathy"),
    ("DIS_MYOP", "Mitochondrial myopathy"),
    ("DIS_LEUK", "Myeloid leukemia"),
    ("DIS_NEUR", "Peripheral neuropathy"),
    ("DIS_CARD", "Dilated cardiomyopathy"),
    ("DIS_SKIN", "Keratinization disorder"),
];

const DEMO_GENES: [&str; 8] = ["JAK2", "TGFB1", "MPL", "PPARG", "SCN9A", "TTN", "KRT1", "STAT3"];
const DEMO_PATHWAYS: [(&str, &str); 3] = [
    ("PW_JAKSTAT", "JAK-STAT signaling"),
    ("PW_FIBRO", "Fibrotic remodeling"),
    ("PW_OXPHOS", "Oxidative phosphorylation"),
];
const DEMO_PHENOTYPES: [(&str, &str); 3] = [
    ("PH_SPLENO", "Splenomegaly"),
    ("PH_ANEMIA", "Anemia"),
    ("PH_FATIGUE", "Exercise intolerance"),
];

/// Family of each drug and of each disease, by index.
const DRUG_FAMILY: [usize; 8] = [0, 0, 1, 2, 0, 3, 2, 1];
const DISEASE_FAMILY: [usize; 8] = [0, 1, 1, 2, 0, 3, 2, 3];

pub fn demo_world(seed: u64) -> DemoWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tsv = String::from("head_id\thead_type\thead_name\trelation\ttail_id\ttail_type\ttail_name\thead_desc\ttail_desc\n");
    let drug = |i: usize| (DEMO_DRUGS[i].0, "drug", DEMO_DRUGS[i].1);
    let disease = |i: usize| (DEMO_DISEASES[i].0, "disease", DEMO_DISEASES[i].1);
    let gene = |i: usize| (DEMO_GENES[i], "gene", DEMO_GENES[i]);
    let pathway = |i: usize| (DEMO_PATHWAYS[i].0, "pathway", DEMO_PATHWAYS[i].1);
    let phenotype = |i: usize| (DEMO_PHENOTYPES[i].0, "phenotype", DEMO_PHENOTYPES[i].1);

    // Known indications, never touching the query disease.
    for (d, s) in [(0, 4), (1, 4), (2, 1), (7, 1), (2, 2), (3, 3), (6, 3), (5, 5), (5, 7), (4, 4), (7, 7), (6, 6)] {
        tsv_row(&mut tsv, drug(d), DEMO_RELATION, disease(s));
    }
    for (d, g) in [(0, 0), (1, 0), (4, 0), (0, 7), (2, 1), (7, 1), (3, 3), (6, 3), (5, 4), (6, 5), (7, 6), (4, 2)] {
        tsv_row(&mut tsv, drug(d), "targets", gene(g));
    }
    for (g, s) in [(0, 4), (1, 2), (3, 3), (4, 5), (5, 6), (6, 7), (7, 1)] {
        tsv_row(&mut tsv, gene(g), "associated_with", disease(s));
    }
    for (g, p) in [(0, 0), (7, 0), (2, 0), (1, 1), (3, 2), (5, 2)] {
        tsv_row(&mut tsv, gene(g), "participates_in", pathway(p));
    }
    for (s, p) in [(4, 0), (4, 1), (3, 2)] {
        tsv_row(&mut tsv, disease(s), "presents", phenotype(p));
    }
    // The query disease is sparse: one phenotype edge.
    let mut text = tsv;
    let _ = writeln!(
        text,
        "{}\tdisease\t{}\tpresents\t{}\tphenotype\t{}\tRare myeloproliferative disorder with bone marrow scarring\t",
        DEMO_DISEASES[0].0, DEMO_DISEASES[0].1, DEMO_PHENOTYPES[0].0, DEMO_PHENOTYPES[0].1
    );
    let kg = kg_from_tsv(&text);

    let mut embeddings = EmbeddingTable::new();
    for (i, (id, _)) in DEMO_DRUGS.iter().enumerate() {
        embeddings.insert(*id, cluster_feature(DRUG_FAMILY[i], &mut rng, 0.2)).expect("finite");
    }
    for (i, (id, _)) in DEMO_DISEASES.iter().enumerate() {
        embeddings.insert(*id, cluster_feature(DISEASE_FAMILY[i], &mut rng, 0.2)).expect("finite");
    }
    DemoWorld { kg, embeddings }
}
