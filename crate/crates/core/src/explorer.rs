//! Embedding-based hypothesis generation.
//!
//! Frozen entity features are mapped by a per-type affine projection to a
//! complex vector and scored against a relation embedding with a trilinear
//! complex product. Projections and relation embeddings are fitted by
//! full-batch gradient descent on a logistic loss.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent_runtime::AgentRole;
use crate::kg_store::{EntityType, KgError, KnowledgeGraph, QueryDirection, RepurposingQuery};
use crate::logistic;
use crate::tegraph::{EdgeSemantics, EvidenceEdge, EvidenceGraph, EvidenceNode, GraphDelta, NodeRole};

#[derive(Debug, Error)]
pub enum ExplorerError {
    #[error("embedding line {line}: {reason}")]
    Load { line: usize, reason: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("entity `{0}` has no embedding")]
    MissingEmbedding(String),
    #[error("no triplet has embeddings for both endpoints")]
    NoTrainableTriplet,
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("params file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Deserialize, Serialize)]
struct EmbeddingRecord {
    entity_id: String,
    vector: Vec<f64>,
}

/// Frozen per-entity feature vectors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    dim_in: Option<usize>,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f64>) -> Result<(), ExplorerError> {
        let id = id.into();
        if let Some(bad) = vector.iter().find(|v| !v.is_finite()) {
            return Err(ExplorerError::Contract(format!("entity `{id}` has non-finite value {bad}")));
        }
        match self.dim_in {
            Some(d) if d != vector.len() => {
                return Err(ExplorerError::Contract(format!(
                    "entity `{id}` has length {} but the table holds length {d}",
                    vector.len()
                )))
            }
            None if vector.is_empty() => {
                return Err(ExplorerError::Contract(format!("entity `{id}` has an empty vector")))
            }
            _ => {}
        }
        self.dim_in = Some(vector.len());
        self.vectors.insert(id, vector);
        Ok(())
    }

    pub fn dim_in(&self) -> Option<usize> {
        self.dim_in
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (id, v) in &self.vectors {
            let rec = EmbeddingRecord {
                entity_id: id.clone(),
                vector: v.clone(),
            };
            writeln!(out, "{}", serde_json::to_string(&rec).map_err(std::io::Error::other)?)?;
        }
        Ok(())
    }
}

/// Reads JSON lines of `{entity_id, vector}`.
pub fn load_embeddings<R: BufRead>(source: R) -> Result<EmbeddingTable, ExplorerError> {
    let mut table = EmbeddingTable::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord = serde_json::from_str(&line).map_err(|e| ExplorerError::Load {
            line: i + 1,
            reason: e.to_string(),
        })?;
        table.insert(rec.entity_id, rec.vector).map_err(|e| ExplorerError::Load {
            line: i + 1,
            reason: e.to_string(),
        })?;
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexEmbedding {
    pub real_part: Vec<f64>,
    pub imag_part: Vec<f64>,
}

impl ComplexEmbedding {
    pub fn new(real_part: Vec<f64>, imag_part: Vec<f64>) -> Self {
        assert_eq!(real_part.len(), imag_part.len(), "complex parts differ in length");
        Self { real_part, imag_part }
    }

    pub fn dim(&self) -> usize {
        self.real_part.len()
    }
}

/// Affine map `x -> W x + b` with `W` of shape `2d x dim_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub matrix: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Projection {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub d: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub negatives: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d: 8,
            epochs: 300,
            learning_rate: 0.2,
            negatives: 4,
            seed: 7,
        }
    }
}

/// Projection key for an entity type. Types other than drug and disease
/// share one map.
pub fn projection_key(t: EntityType) -> &'static str {
    match t {
        EntityType::Drug => "drug",
        EntityType::Disease => "disease",
        _ => "other",
    }
}

const PROJECTION_KEYS: [&str; 3] = ["disease", "drug", "other"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    pub d: usize,
    pub dim_in: usize,
    pub projections: BTreeMap<String, Projection>,
    pub relations: BTreeMap<String, ComplexEmbedding>,
    pub config: TrainConfig,
    /// Mean training loss per epoch.
    #[serde(default)]
    pub loss_log: Vec<f64>,
}

impl ProjectionParams {
    /// Seeded initialization: projection weights uniform in
    /// `[-1/sqrt(dim_in), 1/sqrt(dim_in)]`, zero bias, relation parts uniform
    /// in `[-1/sqrt(d), 1/sqrt(d)]`.
    pub fn init(dim_in: usize, relations: &BTreeSet<String>, config: TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d;
        let a = 1.0 / (dim_in as f64).sqrt();
        let mut projections = BTreeMap::new();
        for key in PROJECTION_KEYS {
            let matrix = (0..2 * d)
                .map(|_| (0..dim_in).map(|_| rng.gen_range(-a..=a)).collect())
                .collect();
            projections.insert(key.to_string(), Projection { matrix, bias: vec![0.0; 2 * d] });
        }
        let r = 1.0 / (d as f64).sqrt();
        let rels = relations
            .iter()
            .map(|name| {
                let re = (0..d).map(|_| rng.gen_range(-r..=r)).collect();
                let im = (0..d).map(|_| rng.gen_range(-r..=r)).collect();
                (name.clone(), ComplexEmbedding::new(re, im))
            })
            .collect();
        Self {
            d,
            dim_in,
            projections,
            relations: rels,
            config,
            loss_log: Vec::new(),
        }
    }

    pub fn relation(&self, name: &str) -> Result<&ComplexEmbedding, ExplorerError> {
        self.relations
            .get(name)
            .ok_or_else(|| ExplorerError::Config(format!("no embedding for relation `{name}`")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("params serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, ExplorerError> {
        let p: Self = serde_json::from_str(text)?;
        for (key, proj) in &p.projections {
            if proj.matrix.len() != 2 * p.d || proj.bias.len() != 2 * p.d || proj.matrix.iter().any(|r| r.len() != p.dim_in) {
                return Err(ExplorerError::Config(format!("projection `{key}` does not match d={} dim_in={}", p.d, p.dim_in)));
            }
        }
        if let Some((name, _)) = p.relations.iter().find(|(_, r)| r.real_part.len() != p.d || r.imag_part.len() != p.d) {
            return Err(ExplorerError::Config(format!("relation `{name}` does not have length {}", p.d)));
        }
        Ok(p)
    }
}

/// Applies the projection for `entity_type`. The first `d` outputs are the
/// real part, the rest the imaginary part.
pub fn project(x: &[f64], entity_type: EntityType, params: &ProjectionParams) -> Result<ComplexEmbedding, ExplorerError> {
    let key = projection_key(entity_type);
    let proj = params
        .projections
        .get(key)
        .ok_or_else(|| ExplorerError::Config(format!("no projection for type `{key}`")))?;
    if x.len() != params.dim_in {
        return Err(ExplorerError::Contract(format!(
            "feature length {} does not match dim_in {}",
            x.len(),
            params.dim_in
        )));
    }
    let mut out = proj.apply(x);
    let imag = out.split_off(params.d);
    Ok(ComplexEmbedding::new(out, imag))
}

fn tri(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    a.iter().zip(b).zip(c).map(|((x, y), z)| x * y * z).sum()
}

/// `<qr,rr,cr> + <qi,rr,ci> + <qr,ri,ci> - <qi,ri,cr>`.
pub fn score_triplet(hq: &ComplexEmbedding, rel: &ComplexEmbedding, hc: &ComplexEmbedding) -> Result<f64, ExplorerError> {
    let d = hq.dim();
    if rel.dim() != d || hc.dim() != d || hq.imag_part.len() != d || rel.imag_part.len() != d || hc.imag_part.len() != d {
        return Err(ExplorerError::Contract(format!(
            "dimension mismatch: {} / {} / {}",
            hq.dim(),
            rel.dim(),
            hc.dim()
        )));
    }
    let (qr, qi) = (&hq.real_part, &hq.imag_part);
    let (rr, ri) = (&rel.real_part, &rel.imag_part);
    let (cr, ci) = (&hc.real_part, &hc.imag_part);
    Ok(tri(qr, rr, cr) + tri(qi, rr, ci) + tri(qr, ri, ci) - tri(qi, ri, cr))
}

/// One training example after feature lookup.
struct Sample<'a> {
    head: &'a [f64],
    head_key: &'static str,
    relation: &'a str,
    tail: &'a [f64],
    tail_key: &'static str,
    label: f64,
}

#[derive(Default)]
struct Grads {
    proj: BTreeMap<&'static str, (Vec<Vec<f64>>, Vec<f64>)>,
    rel: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Grads {
    fn proj_slot(&mut self, key: &'static str, d: usize, dim_in: usize) -> &mut (Vec<Vec<f64>>, Vec<f64>) {
        self.proj
            .entry(key)
            .or_insert_with(|| (vec![vec![0.0; dim_in]; 2 * d], vec![0.0; 2 * d]))
    }

    /// Adds the gradient for output vector `g` (length 2d) of a projection fed `x`.
    fn add_proj(&mut self, key: &'static str, x: &[f64], g: &[f64], dim_in: usize) {
        let d = g.len() / 2;
        let (m, b) = self.proj_slot(key, d, dim_in);
        for (row, gi) in m.iter_mut().zip(g) {
            for (w, xv) in row.iter_mut().zip(x) {
                *w += gi * xv;
            }
        }
        for (bi, gi) in b.iter_mut().zip(g) {
            *bi += gi;
        }
    }
}

fn sample_loss_and_grads(p: &ProjectionParams, s: &Sample, grads: Option<&mut Grads>) -> f64 {
    let d = p.d;
    let hq = p.projections[s.head_key].apply(s.head);
    let hc = p.projections[s.tail_key].apply(s.tail);
    let rel = &p.relations[s.relation];
    let (qr, qi) = hq.split_at(d);
    let (cr, ci) = hc.split_at(d);
    let (rr, ri) = (&rel.real_part, &rel.imag_part);
    let f = tri(qr, rr, cr) + tri(qi, rr, ci) + tri(qr, ri, ci) - tri(qi, ri, cr);
    let margin = s.label * f;
    // log(1 + exp(-margin)), stable for large |margin|.
    let loss = if margin > 0.0 {
        (-margin).exp().ln_1p()
    } else {
        -margin + margin.exp().ln_1p()
    };
    if let Some(grads) = grads {
        let dl_df = -s.label * logistic(-margin);
        let mut gq = vec![0.0; 2 * d];
        let mut gc = vec![0.0; 2 * d];
        let mut grr = vec![0.0; d];
        let mut gri = vec![0.0; d];
        for k in 0..d {
            gq[k] = dl_df * (rr[k] * cr[k] + ri[k] * ci[k]);
            gq[d + k] = dl_df * (rr[k] * ci[k] - ri[k] * cr[k]);
            gc[k] = dl_df * (qr[k] * rr[k] - qi[k] * ri[k]);
            gc[d + k] = dl_df * (qi[k] * rr[k] + qr[k] * ri[k]);
            grr[k] = dl_df * (qr[k] * cr[k] + qi[k] * ci[k]);
            gri[k] = dl_df * (qr[k] * ci[k] - qi[k] * cr[k]);
        }
        grads.add_proj(s.head_key, s.head, &gq, p.dim_in);
        grads.add_proj(s.tail_key, s.tail, &gc, p.dim_in);
        let slot = grads
            .rel
            .entry(s.relation.to_string())
            .or_insert_with(|| (vec![0.0; d], vec![0.0; d]));
        for k in 0..d {
            slot.0[k] += grr[k];
            slot.1[k] += gri[k];
        }
    }
    loss
}

const NEGATIVE_RETRIES: usize = 10;

/// Fits projections and relation embeddings on every triplet whose endpoints
/// both have features. Each positive gets `config.negatives` corruptions of
/// its head or tail (same entity type, known positives avoided), drawn once
/// from the seeded generator.
pub fn train_projections(
    graph: &KnowledgeGraph,
    embeddings: &EmbeddingTable,
    config: TrainConfig,
) -> Result<ProjectionParams, ExplorerError> {
    if config.d == 0 || config.negatives == 0 || config.learning_rate.is_nan() || config.learning_rate <= 0.0 {
        return Err(ExplorerError::Config("d, negatives and learning_rate must be positive".into()));
    }
    let dim_in = embeddings
        .dim_in()
        .ok_or_else(|| ExplorerError::Config("embedding table is empty".into()))?;

    let mut positives = Vec::new();
    for t in graph.triplets() {
        if let (Some(_), Some(_)) = (embeddings.get(&t.head), embeddings.get(&t.tail)) {
            positives.push(t);
        }
    }
    if positives.is_empty() {
        return Err(ExplorerError::NoTrainableTriplet);
    }
    let relations: BTreeSet<String> = positives.iter().map(|t| t.relation.clone()).collect();
    let mut params = ProjectionParams::init(dim_in, &relations, config);
    let known: BTreeSet<(&str, &str, &str)> = graph
        .triplets()
        .iter()
        .map(|t| (t.head.as_str(), t.relation.as_str(), t.tail.as_str()))
        .collect();

    let type_of = |id: &str| graph.entity(id).map(|e| e.entity_type).unwrap_or(EntityType::Other);
    let mut pools: BTreeMap<EntityType, Vec<&str>> = BTreeMap::new();
    for e in graph.entities() {
        if embeddings.get(&e.id).is_some() {
            pools.entry(e.entity_type).or_default().push(e.id.as_str());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005e_ed0f_ae9a_71e5);
    let mut samples = Vec::new();
    for t in &positives {
        let (ht, tt) = (type_of(&t.head), type_of(&t.tail));
        let make = |h: &str, tl: &str, label: f64| Sample {
            head: embeddings.get(h).expect("filtered"),
            head_key: projection_key(ht),
            relation: t.relation.as_str(),
            tail: embeddings.get(tl).expect("filtered"),
            tail_key: projection_key(tt),
            label,
        };
        samples.push(make(&t.head, &t.tail, 1.0));
        for _ in 0..config.negatives {
            let corrupt_head = rng.gen_bool(0.5);
            let pool = &pools[&if corrupt_head { ht } else { tt }];
            let mut pick = (t.head.as_str(), t.tail.as_str());
            for _ in 0..NEGATIVE_RETRIES {
                let e = *pool.choose(&mut rng).expect("pool holds the positive's own endpoint");
                pick = if corrupt_head { (e, t.tail.as_str()) } else { (t.head.as_str(), e) };
                if !known.contains(&(pick.0, t.relation.as_str(), pick.1)) {
                    break;
                }
            }
            if known.contains(&(pick.0, t.relation.as_str(), pick.1)) {
                continue;
            }
            samples.push(make(pick.0, pick.1, -1.0));
        }
    }

    let n = samples.len() as f64;
    for epoch in 0..config.epochs {
        let mut grads = Grads::default();
        let mut total = 0.0;
        for s in &samples {
            total += sample_loss_and_grads(&params, s, Some(&mut grads));
        }
        let mean = total / n;
        if !mean.is_finite() {
            return Err(ExplorerError::Diverged { epoch });
        }
        params.loss_log.push(mean);
        let step = config.learning_rate / n;
        for (key, (gm, gb)) in grads.proj {
            let proj = params.projections.get_mut(key).expect("known key");
            for (row, grow) in proj.matrix.iter_mut().zip(&gm) {
                for (w, g) in row.iter_mut().zip(grow) {
                    *w -= step * g;
                }
            }
            for (b, g) in proj.bias.iter_mut().zip(&gb) {
                *b -= step * g;
            }
        }
        for (name, (gr, gi)) in grads.rel {
            let rel = params.relations.get_mut(&name).expect("known relation");
            for (w, g) in rel.real_part.iter_mut().zip(&gr) {
                *w -= step * g;
            }
            for (w, g) in rel.imag_part.iter_mut().zip(&gi) {
                *w -= step * g;
            }
        }
    }
    Ok(params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub id: String,
    pub candidate: String,
    pub query: RepurposingQuery,
    pub seed_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRanking {
    pub hypotheses: Vec<Hypothesis>,
    /// Pool members skipped because they have no features.
    pub skipped: usize,
}

/// Scores one query/candidate pair. The drug always takes the head slot.
pub fn score_pair(
    query: &RepurposingQuery,
    candidate: &str,
    graph: &KnowledgeGraph,
    embeddings: &EmbeddingTable,
    params: &ProjectionParams,
) -> Result<f64, ExplorerError> {
    let q_vec = embeddings
        .get(&query.query_entity)
        .ok_or_else(|| ExplorerError::MissingEmbedding(query.query_entity.clone()))?;
    let c_vec = embeddings
        .get(candidate)
        .ok_or_else(|| ExplorerError::MissingEmbedding(candidate.to_string()))?;
    let rel = params.relation(&query.target_relation)?;
    let hq = project(q_vec, query.direction.query_type(), params)?;
    let hc = project(c_vec, graph.entity(candidate)?.entity_type, params)?;
    match query.direction {
        QueryDirection::DrugSeeksDisease => score_triplet(&hq, rel, &hc),
        QueryDirection::DiseaseSeeksDrug => score_triplet(&hc, rel, &hq),
    }
}

/// Every candidate of the opposite type not in `exclude`, scored and sorted
/// (score descending, id ascending), plus the number skipped for lack of
/// features.
pub fn score_pool(
    query: &RepurposingQuery,
    graph: &KnowledgeGraph,
    embeddings: &EmbeddingTable,
    params: &ProjectionParams,
    exclude: &BTreeSet<String>,
) -> Result<(Vec<(String, f64)>, usize), ExplorerError> {
    if embeddings.get(&query.query_entity).is_none() {
        return Err(ExplorerError::MissingEmbedding(query.query_entity.clone()));
    }
    let pool = graph.candidates(query.direction.candidate_type());
    if pool.is_empty() {
        return Err(ExplorerError::Contract(format!(
            "no {} candidates in the graph",
            query.direction.candidate_type()
        )));
    }
    let mut skipped = 0;
    let mut scored = Vec::new();
    for c in pool.into_iter().filter(|c| !exclude.contains(c)) {
        if embeddings.get(&c).is_none() {
            skipped += 1;
            continue;
        }
        let s = score_pair(query, &c, graph, embeddings, params)?;
        scored.push((c, s));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok((scored, skipped))
}

/// The top `k` candidates as hypotheses `H1..Hk`.
pub fn rank_candidates(
    query: &RepurposingQuery,
    graph: &KnowledgeGraph,
    embeddings: &EmbeddingTable,
    params: &ProjectionParams,
    k: usize,
) -> Result<CandidateRanking, ExplorerError> {
    if k == 0 {
        return Err(ExplorerError::Contract("k must be positive".into()));
    }
    let (scored, skipped) = score_pool(query, graph, embeddings, params, &BTreeSet::new())?;
    if skipped > 0 {
        log::warn!("{skipped} candidates skipped for lack of features");
    }
    let hypotheses = scored
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, (candidate, seed_score))| Hypothesis {
            id: format!("H{}", i + 1),
            candidate,
            query: query.clone(),
            seed_score,
        })
        .collect();
    Ok(CandidateRanking { hypotheses, skipped })
}

fn entity_name(kg: Option<&KnowledgeGraph>, id: &str) -> String {
    kg.and_then(|g| g.entity(id).ok())
        .map(|e| e.name.clone())
        .unwrap_or_else(|| id.to_string())
}

/// Hypothesis nodes plus `entails` edges from the query node, with weight
/// `logistic(seed_score)`. Names come from `kg` when given.
pub fn seed_delta(
    query: &RepurposingQuery,
    hypotheses: &[Hypothesis],
    kg: Option<&KnowledgeGraph>,
    round: u32,
) -> GraphDelta {
    let mut delta = GraphDelta::default();
    for h in hypotheses {
        delta.add_nodes.push(EvidenceNode {
            id: h.id.clone(),
            role: NodeRole::Hypothesis,
            label: entity_name(kg, &h.candidate),
            evidence_kind: None,
            entity: Some(h.candidate.clone()),
            created_by: AgentRole::Explorer,
            round,
        });
        let mut e = EvidenceEdge::new(
            query.query_entity.clone(),
            h.id.clone(),
            EdgeSemantics::Entails,
            logistic(h.seed_score),
            AgentRole::Explorer,
            round,
        );
        e.rationale = format!("embedding score {:.4}", h.seed_score);
        delta.add_edges.push(e);
    }
    delta
}

/// The initial evidence graph: the query node, one node per hypothesis and an
/// `entails` edge to each.
pub fn seed_tegraph(
    query: &RepurposingQuery,
    hypotheses: &[Hypothesis],
    kg: Option<&KnowledgeGraph>,
) -> Result<EvidenceGraph, ExplorerError> {
    if hypotheses.is_empty() {
        return Err(ExplorerError::Contract("no hypotheses to seed".into()));
    }
    let mut ids = BTreeSet::new();
    for h in hypotheses {
        if !ids.insert(h.id.as_str()) {
            return Err(ExplorerError::Contract(format!("duplicate hypothesis id `{}`", h.id)));
        }
    }
    let root = EvidenceNode {
        id: query.query_entity.clone(),
        role: NodeRole::Query,
        label: entity_name(kg, &query.query_entity),
        evidence_kind: None,
        entity: Some(query.query_entity.clone()),
        created_by: AgentRole::Explorer,
        round: 0,
    };
    EvidenceGraph::with_query(root)
        .apply_delta(&seed_delta(query, hypotheses, kg, 0))
        .map_err(|e| ExplorerError::Contract(e.to_string()))
}
