//! Knowledge graph ingestion and neighborhood queries.
//!
//! The store is built once from a TSV or JSON-lines triplet export and is
//! immutable afterwards. Both a head index and a tail index are kept so a
//! neighborhood lookup touches only the entity's own triplets.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: input is not valid UTF-8")]
    Encoding { line: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown entity `{0}`")]
    NotFound(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityType {
    Drug,
    Disease,
    Gene,
    Pathway,
    Phenotype,
    Other,
}

impl EntityType {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityType::Drug => "drug",
            EntityType::Disease => "disease",
            EntityType::Gene => "gene",
            EntityType::Pathway => "pathway",
            EntityType::Phenotype => "phenotype",
            EntityType::Other => "other",
        }
    }

    /// Lenient parse used during ingestion. Returns `None` for labels that
    /// are not recognised so the caller can count a warning.
    pub fn parse_label(label: &str) -> Option<Self> {
        match label.trim().to_ascii_lowercase().as_str() {
            "drug" => Some(EntityType::Drug),
            "disease" => Some(EntityType::Disease),
            "gene" | "gene/protein" | "protein" => Some(EntityType::Gene),
            "pathway" => Some(EntityType::Pathway),
            "phenotype" | "effect/phenotype" => Some(EntityType::Phenotype),
            "other" => Some(EntityType::Other),
            _ => None,
        }
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityType {
    type Err = KgError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse_label(s).ok_or_else(|| KgError::InvalidQuery(format!("unknown entity type `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub name: String,
    pub entity_type: EntityType,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TripleFormat {
    Tsv,
    JsonLines,
}

impl FromStr for TripleFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tsv" => Ok(TripleFormat::Tsv),
            "jsonl" | "json_lines" | "json-lines" => Ok(TripleFormat::JsonLines),
            other => Err(format!("unknown triple format `{other}` (expected tsv or jsonl)")),
        }
    }
}

/// Summary emitted after ingestion.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub entities: usize,
    pub triplets: usize,
    pub duplicates_dropped: usize,
    pub warnings: usize,
}

/// One ingestion record in JSON-lines form. TSV rows map onto the same shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TripleRecord {
    pub head_id: String,
    pub head_type: String,
    pub head_name: String,
    pub relation: String,
    pub tail_id: String,
    pub tail_type: String,
    pub tail_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_desc: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_desc: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryDirection {
    DrugSeeksDisease,
    DiseaseSeeksDrug,
}

impl QueryDirection {
    pub fn query_type(self) -> EntityType {
        match self {
            QueryDirection::DrugSeeksDisease => EntityType::Drug,
            QueryDirection::DiseaseSeeksDrug => EntityType::Disease,
        }
    }

    pub fn candidate_type(self) -> EntityType {
        match self {
            QueryDirection::DrugSeeksDisease => EntityType::Disease,
            QueryDirection::DiseaseSeeksDrug => EntityType::Drug,
        }
    }
}

impl FromStr for QueryDirection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "drug_seeks_disease" | "drug-seeks-disease" => Ok(QueryDirection::DrugSeeksDisease),
            "disease_seeks_drug" | "disease-seeks-drug" => Ok(QueryDirection::DiseaseSeeksDrug),
            other => Err(format!("unknown direction `{other}`")),
        }
    }
}

/// A repurposing query `(q, r_target)` plus the side being searched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepurposingQuery {
    pub query_entity: String,
    pub target_relation: String,
    pub direction: QueryDirection,
}

impl RepurposingQuery {
    /// Builds a query after checking it against the graph.
    pub fn new(
        graph: &KnowledgeGraph,
        query_entity: &str,
        target_relation: &str,
        direction: QueryDirection,
    ) -> Result<Self, KgError> {
        let entity = graph.entity(query_entity)?;
        if entity.entity_type != direction.query_type() {
            return Err(KgError::InvalidQuery(format!(
                "entity `{query_entity}` is a {} but direction expects a {}",
                entity.entity_type,
                direction.query_type()
            )));
        }
        if !graph.relations().contains(target_relation) {
            return Err(KgError::InvalidQuery(format!(
                "relation `{target_relation}` is not declared in the graph"
            )));
        }
        Ok(Self {
            query_entity: query_entity.to_string(),
            target_relation: target_relation.to_string(),
            direction,
        })
    }

    /// Picks the direction from the query entity's type.
    pub fn infer(graph: &KnowledgeGraph, query_entity: &str, target_relation: &str) -> Result<Self, KgError> {
        let direction = match graph.entity(query_entity)?.entity_type {
            EntityType::Drug => QueryDirection::DrugSeeksDisease,
            EntityType::Disease => QueryDirection::DiseaseSeeksDrug,
            other => {
                return Err(KgError::InvalidQuery(format!(
                    "query entity must be a drug or disease, `{query_entity}` is a {other}"
                )))
            }
        };
        Self::new(graph, query_entity, target_relation, direction)
    }
}

#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    entities: BTreeMap<String, Entity>,
    triplets: Vec<Triplet>,
    by_head: BTreeMap<String, Vec<usize>>,
    by_tail: BTreeMap<String, Vec<usize>>,
    relations: BTreeSet<String>,
}

impl KnowledgeGraph {
    pub fn entity(&self, id: &str) -> Result<&Entity, KgError> {
        self.entities.get(id).ok_or_else(|| KgError::NotFound(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entities.contains_key(id)
    }

    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn relations(&self) -> &BTreeSet<String> {
        &self.relations
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn triplet_count(&self) -> usize {
        self.triplets.len()
    }

    pub fn has_triplet(&self, head: &str, relation: &str, tail: &str) -> bool {
        self.by_head
            .get(head)
            .map(|idx| {
                idx.iter()
                    .any(|&i| self.triplets[i].relation == relation && self.triplets[i].tail == tail)
            })
            .unwrap_or(false)
    }

    /// Union of in- and out-neighbours across every relation label.
    pub fn neighborhood(&self, id: &str) -> Result<BTreeSet<String>, KgError> {
        if !self.entities.contains_key(id) {
            return Err(KgError::NotFound(id.to_string()));
        }
        let mut out = BTreeSet::new();
        for &i in self.by_head.get(id).into_iter().flatten() {
            out.insert(self.triplets[i].tail.clone());
        }
        for &i in self.by_tail.get(id).into_iter().flatten() {
            out.insert(self.triplets[i].head.clone());
        }
        Ok(out)
    }

    /// `|N(q)| <= eps1 && |N(c)| <= eps2`.
    pub fn is_sparse_zero(&self, q: &str, c: &str, eps1: usize, eps2: usize) -> Result<bool, KgError> {
        let nq = self.neighborhood(q)?.len();
        let nc = self.neighborhood(c)?.len();
        Ok(nq <= eps1 && nc <= eps2)
    }

    /// All entities of `wanted`, sorted by id.
    pub fn candidates(&self, wanted: EntityType) -> Vec<String> {
        // BTreeMap iteration is already id-ordered.
        self.entities
            .values()
            .filter(|e| e.entity_type == wanted)
            .map(|e| e.id.clone())
            .collect()
    }

    /// Writes the graph back out in the fixed TSV column order.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for t in &self.triplets {
            let h = &self.entities[&t.head];
            let tl = &self.entities[&t.tail];
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                h.id, h.entity_type, h.name, t.relation, tl.id, tl.entity_type, tl.name, h.description, tl.description
            )?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct GraphBuilder {
    graph: KnowledgeGraph,
    seen: HashSet<Triplet>,
    report: LoadReport,
}

impl GraphBuilder {
    fn add_entity(&mut self, id: &str, type_label: &str, name: &str, desc: Option<&str>) {
        if self.graph.entities.contains_key(id) {
            return;
        }
        let entity_type = EntityType::parse_label(type_label).unwrap_or_else(|| {
            self.report.warnings += 1;
            log::warn!("entity `{id}`: unknown type `{type_label}`, mapped to other");
            EntityType::Other
        });
        self.graph.entities.insert(
            id.to_string(),
            Entity {
                id: id.to_string(),
                name: name.to_string(),
                entity_type,
                description: desc.unwrap_or_default().to_string(),
            },
        );
    }

    fn add(&mut self, rec: &TripleRecord) {
        self.add_entity(&rec.head_id, &rec.head_type, &rec.head_name, rec.head_desc.as_deref());
        self.add_entity(&rec.tail_id, &rec.tail_type, &rec.tail_name, rec.tail_desc.as_deref());
        let triplet = Triplet {
            head: rec.head_id.clone(),
            relation: rec.relation.clone(),
            tail: rec.tail_id.clone(),
        };
        if !self.seen.insert(triplet.clone()) {
            self.report.duplicates_dropped += 1;
            return;
        }
        let idx = self.graph.triplets.len();
        self.graph.by_head.entry(triplet.head.clone()).or_default().push(idx);
        self.graph.by_tail.entry(triplet.tail.clone()).or_default().push(idx);
        self.graph.relations.insert(triplet.relation.clone());
        self.graph.triplets.push(triplet);
    }

    fn finish(mut self) -> (KnowledgeGraph, LoadReport) {
        self.report.entities = self.graph.entities.len();
        self.report.triplets = self.graph.triplets.len();
        (self.graph, self.report)
    }
}

fn parse_tsv_line(line: &str, line_no: usize) -> Result<TripleRecord, KgError> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() < 7 || cols.len() > 9 {
        return Err(KgError::Malformed {
            line: line_no,
            reason: format!("expected 7 to 9 tab-separated columns, found {}", cols.len()),
        });
    }
    for (i, name) in [(0, "head_id"), (3, "relation"), (4, "tail_id")] {
        if cols[i].trim().is_empty() {
            return Err(KgError::Malformed {
                line: line_no,
                reason: format!("empty {name}"),
            });
        }
    }
    let opt = |i: usize| cols.get(i).map(|s| s.to_string()).filter(|s| !s.is_empty());
    Ok(TripleRecord {
        head_id: cols[0].to_string(),
        head_type: cols[1].to_string(),
        head_name: cols[2].to_string(),
        relation: cols[3].to_string(),
        tail_id: cols[4].to_string(),
        tail_type: cols[5].to_string(),
        tail_name: cols[6].to_string(),
        head_desc: opt(7),
        tail_desc: opt(8),
    })
}

fn parse_json_line(line: &str, line_no: usize) -> Result<TripleRecord, KgError> {
    let rec: TripleRecord = serde_json::from_str(line).map_err(|e| KgError::Malformed {
        line: line_no,
        reason: e.to_string(),
    })?;
    if rec.head_id.is_empty() || rec.tail_id.is_empty() || rec.relation.is_empty() {
        return Err(KgError::Malformed {
            line: line_no,
            reason: "head_id, relation and tail_id must be non-empty".into(),
        });
    }
    Ok(rec)
}

/// Reads a whole triplet export. Any malformed record aborts the load.
///
/// TSV input may start with a `head_id\t...` header row; blank lines and
/// lines starting with `#` are skipped in both formats.
pub fn load_triples<R: BufRead>(source: R, format: TripleFormat) -> Result<(KnowledgeGraph, LoadReport), KgError> {
    let mut builder = GraphBuilder::default();
    let mut buf = Vec::new();
    let mut reader = source;
    let mut line_no = 0;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        line_no += 1;
        let line = std::str::from_utf8(&buf).map_err(|_| KgError::Encoding { line: line_no })?;
        let line = line.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let rec = match format {
            TripleFormat::Tsv => {
                if line_no == 1 && line.starts_with("head_id\t") {
                    continue;
                }
                parse_tsv_line(line, line_no)?
            }
            TripleFormat::JsonLines => parse_json_line(line, line_no)?,
        };
        builder.add(&rec);
    }
    Ok(builder.finish())
}
