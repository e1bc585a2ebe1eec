//! Task-specific evidence graph.
//!
//! A directed typed graph with one query node, one node per hypothesis and any
//! number of evidence nodes. Edges carry one of three semantics and a weight in
//! `[0, 1]`. Every update is a [`GraphDelta`] applied functionally: the input
//! graph is never mutated, a new version is returned.
//!
//! Each hypothesis node records the KG entity it proposes. The evidence node
//! whose id equals that entity id is the hypothesis's *candidate anchor*: the
//! start of its mechanistic chains. Anchors are created on first mention, and
//! agents may refer to an anchor or the query node by entity name.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agent_runtime::AgentRole;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Query,
    Hypothesis,
    Evidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EvidenceKind {
    Target,
    Pathway,
    Phenotype,
    Mechanism,
    Risk,
    Claim,
    #[serde(rename = "other")]
    Other,
}

impl EvidenceKind {
    pub fn parse_label(label: &str) -> Self {
        match label.trim().to_ascii_lowercase().as_str() {
            "target" => EvidenceKind::Target,
            "pathway" => EvidenceKind::Pathway,
            "phenotype" => EvidenceKind::Phenotype,
            "mechanism" => EvidenceKind::Mechanism,
            "risk" => EvidenceKind::Risk,
            "claim" => EvidenceKind::Claim,
            _ => EvidenceKind::Other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeSemantics {
    Entails,
    Supports,
    Refutes,
}

impl EdgeSemantics {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeSemantics::Entails => "entails",
            EdgeSemantics::Supports => "supports",
            EdgeSemantics::Refutes => "refutes",
        }
    }

    /// Maps an agent relation label onto edge semantics. Chain-building labels
    /// (`acts_on`, `involved_in`) are support links; `contradicts` refutes.
    pub fn from_relation(label: &str) -> Option<Self> {
        match label.trim().to_ascii_lowercase().as_str() {
            "entails" => Some(EdgeSemantics::Entails),
            "supports" | "acts_on" | "involved_in" => Some(EdgeSemantics::Supports),
            "refutes" | "contradicts" => Some(EdgeSemantics::Refutes),
            _ => None,
        }
    }

    pub fn is_chain(self) -> bool {
        matches!(self, EdgeSemantics::Supports | EdgeSemantics::Entails)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceNode {
    pub id: String,
    pub role: NodeRole,
    pub label: String,
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub evidence_kind: Option<EvidenceKind>,
    /// KG entity this node stands for (query node, hypotheses, anchors).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity: Option<String>,
    pub created_by: AgentRole,
    pub round: u32,
}

impl EvidenceNode {
    pub fn evidence(id: impl Into<String>, kind: EvidenceKind, label: impl Into<String>, by: AgentRole, round: u32) -> Self {
        Self {
            id: id.into(),
            role: NodeRole::Evidence,
            label: label.into(),
            evidence_kind: Some(kind),
            entity: None,
            created_by: by,
            round,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceEdge {
    pub source: String,
    pub target: String,
    pub semantics: EdgeSemantics,
    /// Agent-level sub-label (`acts_on`, `contradicts`, ...), if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<String>,
    pub weight: f64,
    #[serde(default)]
    pub rationale: String,
    pub created_by: AgentRole,
    pub round: u32,
}

impl EvidenceEdge {
    pub fn new(
        source: impl Into<String>,
        target: impl Into<String>,
        semantics: EdgeSemantics,
        weight: f64,
        by: AgentRole,
        round: u32,
    ) -> Self {
        Self {
            source: source.into(),
            target: target.into(),
            semantics,
            relation: None,
            weight,
            rationale: String::new(),
            created_by: by,
            round,
        }
    }

    pub fn key(&self) -> EdgeKey {
        EdgeKey {
            source: self.source.clone(),
            target: self.target.clone(),
            semantics: self.semantics,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeKey {
    pub source: String,
    pub target: String,
    pub semantics: EdgeSemantics,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergePair {
    pub keep: String,
    pub remove: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictHotspot {
    pub topic: String,
    #[serde(default)]
    pub pro_nodes: Vec<String>,
    #[serde(default)]
    pub con_nodes: Vec<String>,
    /// Hypothesis in focus when the hotspot was raised.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypothesis_id: Option<String>,
}

impl ConflictHotspot {
    pub fn touches(&self, ids: &[&str]) -> bool {
        self.hypothesis_id.as_deref().is_some_and(|h| ids.contains(&h))
            || self.pro_nodes.iter().chain(&self.con_nodes).any(|n| ids.contains(&n.as_str()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphDelta {
    #[serde(default)]
    pub add_nodes: Vec<EvidenceNode>,
    #[serde(default)]
    pub add_edges: Vec<EvidenceEdge>,
    #[serde(default)]
    pub merge_pairs: Vec<MergePair>,
    #[serde(default)]
    pub conflict_hotspots: Vec<ConflictHotspot>,
}

impl GraphDelta {
    pub fn is_empty(&self) -> bool {
        self.add_nodes.is_empty() && self.add_edges.is_empty() && self.merge_pairs.is_empty() && self.conflict_hotspots.is_empty()
    }

    /// Converts a validated `graph_updates` object from a Proponent or Skeptic
    /// reply into a delta stamped with the author and round.
    pub fn from_agent_updates(
        updates: &Value,
        author: AgentRole,
        round: u32,
        focus: Option<&str>,
    ) -> Result<Self, DeltaRejected> {
        let mut violations = Vec::new();
        let mut delta = GraphDelta::default();
        let arr = |key: &str| updates.get(key).and_then(Value::as_array).cloned().unwrap_or_default();
        let text = |v: &Value, key: &str| v.get(key).and_then(Value::as_str).map(str::to_string);

        for (i, n) in arr("add_nodes").iter().enumerate() {
            let Some(id) = text(n, "id") else {
                violations.push(format!("add_nodes[{i}].id missing"));
                continue;
            };
            let role = match text(n, "role").as_deref() {
                None | Some("evidence") => NodeRole::Evidence,
                Some("query") => NodeRole::Query,
                Some("hypothesis") => NodeRole::Hypothesis,
                Some(other) => {
                    violations.push(format!("add_nodes[{i}].role `{other}` is not a node role"));
                    continue;
                }
            };
            let kind = text(n, "type").map(|t| EvidenceKind::parse_label(&t)).unwrap_or(EvidenceKind::Other);
            delta.add_nodes.push(EvidenceNode {
                label: text(n, "label").unwrap_or_else(|| id.clone()),
                id,
                role,
                evidence_kind: (role == NodeRole::Evidence).then_some(kind),
                entity: None,
                created_by: author,
                round,
            });
        }
        for (i, e) in arr("add_edges").iter().enumerate() {
            let (Some(source), Some(target)) = (text(e, "source"), text(e, "target")) else {
                violations.push(format!("add_edges[{i}] needs source and target"));
                continue;
            };
            let relation = text(e, "relation").unwrap_or_else(|| "supports".into());
            let Some(semantics) = EdgeSemantics::from_relation(&relation) else {
                violations.push(format!("add_edges[{i}].relation `{relation}` has no edge semantics"));
                continue;
            };
            let Some(weight) = e.get("weight").and_then(Value::as_f64) else {
                violations.push(format!("add_edges[{i}].weight missing"));
                continue;
            };
            delta.add_edges.push(EvidenceEdge {
                source,
                target,
                semantics,
                relation: (relation != semantics.as_str()).then_some(relation),
                weight,
                rationale: text(e, "rationale").unwrap_or_default(),
                created_by: author,
                round,
            });
        }
        let merges = updates.get("merge").or_else(|| updates.get("merge_pairs"));
        for (i, m) in merges.and_then(Value::as_array).into_iter().flatten().enumerate() {
            match (text(m, "keep"), text(m, "remove")) {
                (Some(keep), Some(remove)) => delta.merge_pairs.push(MergePair { keep, remove }),
                _ => violations.push(format!("merge[{i}] needs keep and remove")),
            }
        }
        for (i, h) in arr("conflict_hotspots").iter().enumerate() {
            let Some(topic) = text(h, "topic") else {
                violations.push(format!("conflict_hotspots[{i}].topic missing"));
                continue;
            };
            let ids = |key: &str| -> Vec<String> {
                h.get(key)
                    .and_then(Value::as_array)
                    .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
                    .unwrap_or_default()
            };
            delta.conflict_hotspots.push(ConflictHotspot {
                topic,
                pro_nodes: ids("pro_nodes"),
                con_nodes: ids("con_nodes"),
                hypothesis_id: text(h, "hypothesis_id").or_else(|| focus.map(str::to_string)),
            });
        }
        if violations.is_empty() {
            Ok(delta)
        } else {
            Err(DeltaRejected { violations })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("delta rejected: {}", violations.join("; "))]
pub struct DeltaRejected {
    pub violations: Vec<String>,
}

#[derive(Debug, PartialEq, Error)]
pub enum GraphError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{0}` is not a hypothesis")]
    NotHypothesis(String),
    #[error("snapshot parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("snapshot is inconsistent: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Rejected(#[from] DeltaRejected),
}

/// Bounds for mechanistic path enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLimits {
    pub max_len: usize,
    pub count_cap: usize,
}

impl Default for PathLimits {
    fn default() -> Self {
        Self { max_len: 6, count_cap: 5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceGraph {
    nodes: BTreeMap<String, EvidenceNode>,
    edges: BTreeMap<EdgeKey, EvidenceEdge>,
    out_adj: BTreeMap<String, BTreeSet<EdgeKey>>,
    in_adj: BTreeMap<String, BTreeSet<EdgeKey>>,
    query_id: String,
    pub round_index: u32,
    hotspots: Vec<ConflictHotspot>,
}

impl EvidenceGraph {
    /// A graph holding only the query node.
    pub fn with_query(query: EvidenceNode) -> Self {
        let query = EvidenceNode { role: NodeRole::Query, ..query };
        let query_id = query.id.clone();
        let mut nodes = BTreeMap::new();
        nodes.insert(query_id.clone(), query);
        Self {
            nodes,
            edges: BTreeMap::new(),
            out_adj: BTreeMap::new(),
            in_adj: BTreeMap::new(),
            query_id,
            round_index: 0,
            hotspots: Vec::new(),
        }
    }

    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    pub fn node(&self, id: &str) -> Option<&EvidenceNode> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &EvidenceNode> {
        self.nodes.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = &EvidenceEdge> {
        self.edges.values()
    }

    pub fn edge(&self, source: &str, target: &str, semantics: EdgeSemantics) -> Option<&EvidenceEdge> {
        self.edges.get(&EdgeKey {
            source: source.into(),
            target: target.into(),
            semantics,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn hotspots(&self) -> &[ConflictHotspot] {
        &self.hotspots
    }

    pub fn hypothesis_ids(&self) -> Vec<String> {
        self.nodes
            .values()
            .filter(|n| n.role == NodeRole::Hypothesis)
            .map(|n| n.id.clone())
            .collect()
    }

    pub fn incoming(&self, id: &str) -> impl Iterator<Item = &EvidenceEdge> {
        self.in_adj.get(id).into_iter().flatten().map(|k| &self.edges[k])
    }

    pub fn outgoing(&self, id: &str) -> impl Iterator<Item = &EvidenceEdge> {
        self.out_adj.get(id).into_iter().flatten().map(|k| &self.edges[k])
    }

    /// Checks that `h` names a hypothesis node and returns its anchor id
    /// (which may not exist yet).
    pub fn anchor_id(&self, h: &str) -> Result<Option<&str>, GraphError> {
        let node = self.nodes.get(h).ok_or_else(|| GraphError::UnknownNode(h.to_string()))?;
        if node.role != NodeRole::Hypothesis {
            return Err(GraphError::NotHypothesis(h.to_string()));
        }
        Ok(node.entity.as_deref())
    }

    /// The anchor node of hypothesis `h`, if it has been created.
    pub fn anchor(&self, h: &str) -> Result<Option<&EvidenceNode>, GraphError> {
        Ok(self
            .anchor_id(h)?
            .and_then(|id| self.nodes.get(id))
            .filter(|n| n.role == NodeRole::Evidence))
    }

    fn insert_node(&mut self, node: EvidenceNode) {
        self.nodes.insert(node.id.clone(), node);
    }

    fn insert_edge(&mut self, edge: EvidenceEdge) {
        let key = edge.key();
        self.out_adj.entry(key.source.clone()).or_default().insert(key.clone());
        self.in_adj.entry(key.target.clone()).or_default().insert(key.clone());
        self.edges.insert(key, edge);
    }

    fn remove_edge(&mut self, key: &EdgeKey) -> Option<EvidenceEdge> {
        let edge = self.edges.remove(key)?;
        if let Some(s) = self.out_adj.get_mut(&key.source) {
            s.remove(key);
            if s.is_empty() {
                self.out_adj.remove(&key.source);
            }
        }
        if let Some(s) = self.in_adj.get_mut(&key.target) {
            s.remove(key);
            if s.is_empty() {
                self.in_adj.remove(&key.target);
            }
        }
        Some(edge)
    }

    /// Entity-id and entity-name aliases for the query node and for anchors
    /// (existing or not yet created).
    fn aliases(&self) -> HashMap<String, Alias> {
        let mut out = HashMap::new();
        for n in self.nodes.values() {
            match n.role {
                NodeRole::Query => {
                    out.insert(n.label.to_lowercase(), Alias::Existing(n.id.clone()));
                    if let Some(e) = &n.entity {
                        out.insert(e.to_lowercase(), Alias::Existing(n.id.clone()));
                    }
                }
                NodeRole::Hypothesis => {
                    if let Some(e) = &n.entity {
                        let alias = Alias::Anchor {
                            id: e.clone(),
                            label: n.label.clone(),
                        };
                        out.insert(n.label.to_lowercase(), alias.clone());
                        out.insert(e.to_lowercase(), alias);
                    }
                }
                NodeRole::Evidence => {}
            }
        }
        out
    }

    /// Applies one delta: nodes, then edges, then merges, then hotspots.
    pub fn apply_delta(&self, delta: &GraphDelta) -> Result<EvidenceGraph, DeltaRejected> {
        let mut violations = Vec::new();
        let aliases = self.aliases();
        let mut added: BTreeMap<String, &EvidenceNode> = BTreeMap::new();

        for (i, n) in delta.add_nodes.iter().enumerate() {
            if n.id.trim().is_empty() {
                violations.push(format!("add_nodes[{i}]: empty node id"));
            } else if self.nodes.contains_key(&n.id) || added.contains_key(&n.id) {
                violations.push(format!("add_nodes[{i}]: duplicate node id `{}`", n.id));
            } else {
                match n.role {
                    NodeRole::Query => violations.push(format!("add_nodes[{i}]: a graph holds exactly one query node")),
                    NodeRole::Hypothesis if n.entity.is_none() => {
                        violations.push(format!("add_nodes[{i}]: hypothesis node `{}` needs a candidate entity", n.id))
                    }
                    NodeRole::Evidence if n.evidence_kind.is_none() => {
                        violations.push(format!("add_nodes[{i}]: evidence node `{}` needs a type", n.id))
                    }
                    _ => {}
                }
                added.insert(n.id.clone(), n);
            }
        }

        // Endpoint resolution: existing node, node added by this delta, or alias.
        let mut anchors_to_create: BTreeMap<String, (String, AgentRole, u32)> = BTreeMap::new();
        let mut resolve = |raw: &str, by: AgentRole, round: u32| -> Option<String> {
            if self.nodes.contains_key(raw) || added.contains_key(raw) {
                return Some(raw.to_string());
            }
            match aliases.get(&raw.to_lowercase())? {
                Alias::Existing(id) => Some(id.clone()),
                Alias::Anchor { id, label } => {
                    if !self.nodes.contains_key(id) && !added.contains_key(id) {
                        anchors_to_create.entry(id.clone()).or_insert((label.clone(), by, round));
                    }
                    Some(id.clone())
                }
            }
        };
        let mut edges = Vec::with_capacity(delta.add_edges.len());
        for (i, e) in delta.add_edges.iter().enumerate() {
            let src = resolve(&e.source, e.created_by, e.round);
            let tgt = resolve(&e.target, e.created_by, e.round);
            if src.is_none() {
                violations.push(format!("add_edges[{i}]: unknown source node `{}`", e.source));
            }
            if tgt.is_none() {
                violations.push(format!("add_edges[{i}]: unknown target node `{}`", e.target));
            }
            if !(0.0..=1.0).contains(&e.weight) {
                violations.push(format!("add_edges[{i}]: weight {} outside [0, 1]", e.weight));
            }
            if let (Some(s), Some(t)) = (src, tgt) {
                if s == t {
                    violations.push(format!("add_edges[{i}]: self-loop on `{s}`"));
                }
                edges.push(EvidenceEdge {
                    source: s,
                    target: t,
                    ..e.clone()
                });
            }
        }

        let exists = |id: &str| self.nodes.contains_key(id) || added.contains_key(id);
        for (i, m) in delta.merge_pairs.iter().enumerate() {
            if !exists(&m.keep) {
                violations.push(format!("merge_pairs[{i}]: unknown keep node `{}`", m.keep));
            }
            if m.keep == m.remove {
                violations.push(format!("merge_pairs[{i}]: keep and remove are the same node"));
                continue;
            }
            match self.nodes.get(&m.remove).map(|n| n.role).or_else(|| added.get(&m.remove).map(|n| n.role)) {
                None => violations.push(format!("merge_pairs[{i}]: unknown remove node `{}`", m.remove)),
                Some(NodeRole::Query) => violations.push(format!("merge_pairs[{i}]: the query node cannot be removed")),
                Some(NodeRole::Hypothesis) => {
                    violations.push(format!("merge_pairs[{i}]: hypothesis node `{}` cannot be removed", m.remove))
                }
                Some(NodeRole::Evidence) => {
                    if self.is_anchor(&m.remove) {
                        violations.push(format!("merge_pairs[{i}]: candidate anchor `{}` cannot be removed", m.remove));
                    }
                }
            }
        }
        for (i, h) in delta.conflict_hotspots.iter().enumerate() {
            if h.topic.trim().is_empty() {
                violations.push(format!("conflict_hotspots[{i}]: empty topic"));
            }
        }
        if !violations.is_empty() {
            return Err(DeltaRejected { violations });
        }

        let mut next = self.clone();
        for n in &delta.add_nodes {
            next.insert_node(n.clone());
        }
        for (id, (label, by, round)) in anchors_to_create {
            next.insert_node(EvidenceNode {
                entity: Some(id.clone()),
                ..EvidenceNode::evidence(id, EvidenceKind::Other, label, by, round)
            });
        }
        // Re-asserting an existing edge updates it; repeats inside one delta
        // keep the heavier claim.
        let mut written = BTreeSet::new();
        for e in edges {
            let key = e.key();
            if written.contains(&key) && next.edges[&key].weight >= e.weight {
                continue;
            }
            written.insert(key);
            next.insert_edge(e);
        }
        for m in &delta.merge_pairs {
            next.merge_nodes(&m.keep, &m.remove);
        }
        for h in &delta.conflict_hotspots {
            next.hotspots.push(h.clone());
        }
        Ok(next)
    }

    fn is_anchor(&self, id: &str) -> bool {
        self.nodes
            .values()
            .any(|n| n.role == NodeRole::Hypothesis && n.entity.as_deref() == Some(id))
    }

    /// Re-points every edge of `remove` onto `keep`, collapsing duplicates to
    /// the heaviest edge, then deletes `remove`.
    fn merge_nodes(&mut self, keep: &str, remove: &str) {
        let incident: BTreeSet<EdgeKey> = self
            .out_adj
            .get(remove)
            .into_iter()
            .flatten()
            .chain(self.in_adj.get(remove).into_iter().flatten())
            .cloned()
            .collect();
        for key in incident {
            let Some(mut edge) = self.remove_edge(&key) else { continue };
            if edge.source == remove {
                edge.source = keep.to_string();
            }
            if edge.target == remove {
                edge.target = keep.to_string();
            }
            if edge.source == edge.target {
                continue;
            }
            match self.edges.get(&edge.key()) {
                Some(existing) if existing.weight >= edge.weight => {}
                _ => self.insert_edge(edge),
            }
        }
        self.nodes.remove(remove);
        for h in &mut self.hotspots {
            for id in h.pro_nodes.iter_mut().chain(h.con_nodes.iter_mut()) {
                if id == remove {
                    *id = keep.to_string();
                }
            }
        }
    }

    /// Combines a Proponent delta and a Skeptic delta into the next graph
    /// version. Returns the graph plus consistency notes.
    pub fn merge(&self, pro: &GraphDelta, ske: &GraphDelta) -> Result<(EvidenceGraph, Vec<String>), DeltaRejected> {
        let mut notes = Vec::new();
        let mut violations = Vec::new();
        if let Err(e) = self.apply_delta(pro) {
            violations.extend(e.violations.into_iter().map(|v| format!("Proponent: {v}")));
        }
        if let Err(e) = self.apply_delta(ske) {
            violations.extend(e.violations.into_iter().map(|v| format!("Skeptic: {v}")));
        }
        if !violations.is_empty() {
            return Err(DeltaRejected { violations });
        }

        let mut pro = pro.clone();
        let mut ske = ske.clone();

        // Node-id collisions: the Skeptic's copy is renamed.
        let pro_ids: BTreeSet<String> = pro.add_nodes.iter().map(|n| n.id.clone()).collect();
        let mut renames: HashMap<String, String> = HashMap::new();
        for n in &mut ske.add_nodes {
            if pro_ids.contains(&n.id) {
                let mut candidate = format!("{}_skeptic", n.id);
                let mut i = 2;
                while self.nodes.contains_key(&candidate) || pro_ids.contains(&candidate) {
                    candidate = format!("{}_skeptic{i}", n.id);
                    i += 1;
                }
                notes.push(format!("node id `{}` added by both agents; Skeptic copy renamed to `{candidate}`", n.id));
                renames.insert(n.id.clone(), candidate.clone());
                n.id = candidate;
            }
        }

        // Proponent merges run first; drop Skeptic merges touching the same nodes.
        let touched: BTreeSet<&str> = pro
            .merge_pairs
            .iter()
            .flat_map(|m| [m.keep.as_str(), m.remove.as_str()])
            .collect();
        let mut kept_merges = Vec::new();
        for m in ske.merge_pairs.drain(..) {
            if touched.contains(m.keep.as_str()) || touched.contains(m.remove.as_str()) {
                notes.push(format!(
                    "Skeptic merge {} <- {} dropped: node already merged by Proponent",
                    m.keep, m.remove
                ));
            } else {
                kept_merges.push(m);
            }
        }
        ske.merge_pairs = kept_merges;
        let pro_merged: HashMap<String, String> =
            pro.merge_pairs.iter().map(|m| (m.remove.clone(), m.keep.clone())).collect();

        let remap = |id: &mut String| {
            if let Some(r) = renames.get(id.as_str()) {
                *id = r.clone();
            }
            if let Some(k) = pro_merged.get(id.as_str()) {
                *id = k.clone();
            }
        };
        for e in &mut ske.add_edges {
            remap(&mut e.source);
            remap(&mut e.target);
        }
        for m in &mut ske.merge_pairs {
            remap(&mut m.keep);
            remap(&mut m.remove);
        }
        for h in &mut ske.conflict_hotspots {
            h.pro_nodes.iter_mut().chain(h.con_nodes.iter_mut()).for_each(remap);
        }
        ske.merge_pairs.retain(|m| m.keep != m.remove);

        // Identical edges from both sides: max weight, rationales concatenated.
        let aliases = self.aliases();
        let canon = |id: &str| -> String {
            match aliases.get(&id.to_lowercase()) {
                Some(Alias::Existing(x)) | Some(Alias::Anchor { id: x, .. }) if !self.nodes.contains_key(id) => x.clone(),
                _ => id.to_string(),
            }
        };
        let key_of = |e: &EvidenceEdge| (canon(&e.source), canon(&e.target), e.semantics);
        let mut pro_index: HashMap<(String, String, EdgeSemantics), usize> = HashMap::new();
        for (i, e) in pro.add_edges.iter().enumerate() {
            pro_index.insert(key_of(e), i);
        }
        let mut remaining = Vec::new();
        for e in ske.add_edges.drain(..) {
            match pro_index.get(&key_of(&e)) {
                Some(&i) => {
                    let p = &mut pro.add_edges[i];
                    p.weight = p.weight.max(e.weight);
                    if !e.rationale.is_empty() && e.rationale != p.rationale {
                        p.rationale = if p.rationale.is_empty() {
                            e.rationale.clone()
                        } else {
                            format!("{} | {}", p.rationale, e.rationale)
                        };
                    }
                }
                None => remaining.push(e),
            }
        }
        ske.add_edges = remaining;

        let mid = self.apply_delta(&pro)?;
        let out = mid.apply_delta(&ske)?;
        Ok((out, notes))
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            nodes: self.nodes.values().cloned().collect(),
            edges: self.edges.values().cloned().collect(),
            round_index: self.round_index,
            hotspots: self.hotspots.clone(),
        }
    }

    /// Canonical JSON document: ids sorted, fixed field order, compact.
    pub fn to_snapshot_json(&self) -> String {
        serde_json::to_string(&self.snapshot()).expect("snapshot serializes")
    }

    pub fn from_snapshot_json(doc: &str) -> Result<EvidenceGraph, GraphError> {
        let snap: Snapshot = serde_json::from_str(doc).map_err(|e| GraphError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        EvidenceGraph::restore(snap)
    }

    pub fn restore(snap: Snapshot) -> Result<EvidenceGraph, GraphError> {
        let mut queries = snap.nodes.iter().filter(|n| n.role == NodeRole::Query);
        let query = queries
            .next()
            .ok_or_else(|| GraphError::Inconsistent("no query node".into()))?
            .clone();
        if queries.next().is_some() {
            return Err(GraphError::Inconsistent("more than one query node".into()));
        }
        let mut g = EvidenceGraph::with_query(query);
        g.round_index = snap.round_index;
        for n in snap.nodes {
            if n.role == NodeRole::Query {
                continue;
            }
            if g.nodes.contains_key(&n.id) {
                return Err(GraphError::Inconsistent(format!("duplicate node `{}`", n.id)));
            }
            g.insert_node(n);
        }
        for e in snap.edges {
            if !g.nodes.contains_key(&e.source) || !g.nodes.contains_key(&e.target) {
                return Err(GraphError::Inconsistent(format!("edge {} -> {} has a dangling endpoint", e.source, e.target)));
            }
            if !(0.0..=1.0).contains(&e.weight) {
                return Err(GraphError::Inconsistent(format!("edge {} -> {} weight out of range", e.source, e.target)));
            }
            if g.edges.contains_key(&e.key()) {
                return Err(GraphError::Inconsistent(format!("duplicate edge {} -> {}", e.source, e.target)));
            }
            g.insert_edge(e);
        }
        g.hotspots = snap.hotspots;
        Ok(g)
    }

    /// GraphViz rendering: supports solid, refutes dashed, entails bold.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph tegraph {\n  rankdir=LR;\n");
        for n in self.nodes.values() {
            let shape = match n.role {
                NodeRole::Query => "doubleoctagon",
                NodeRole::Hypothesis => "box",
                NodeRole::Evidence => "ellipse",
            };
            let kind = n.evidence_kind.map(|k| format!(" [{k:?}]")).unwrap_or_default();
            let _ = writeln!(
                out,
                "  \"{}\" [shape={shape}, label=\"{}{}\"];",
                escape(&n.id),
                escape(&n.label),
                escape(&kind)
            );
        }
        for e in self.edges.values() {
            let style = match e.semantics {
                EdgeSemantics::Supports => "solid",
                EdgeSemantics::Refutes => "dashed",
                EdgeSemantics::Entails => "bold",
            };
            let _ = writeln!(
                out,
                "  \"{}\" -> \"{}\" [style={style}, label=\"{} {:.2}\"];",
                escape(&e.source),
                escape(&e.target),
                e.semantics.as_str(),
                e.weight
            );
        }
        out.push_str("}\n");
        out
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

#[derive(Debug, Clone)]
enum Alias {
    Existing(String),
    Anchor { id: String, label: String },
}

/// Serialized form of an [`EvidenceGraph`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub nodes: Vec<EvidenceNode>,
    pub edges: Vec<EvidenceEdge>,
    pub round_index: u32,
    #[serde(default)]
    pub hotspots: Vec<ConflictHotspot>,
}

/// `|added nodes| + |added edges| + sum |weight change|` over surviving edges.
pub fn delta_magnitude(before: &EvidenceGraph, after: &EvidenceGraph) -> f64 {
    let added_nodes = after.nodes.keys().filter(|k| !before.nodes.contains_key(*k)).count();
    let mut added_edges = 0usize;
    let mut drift = 0.0;
    for (k, e) in &after.edges {
        match before.edges.get(k) {
            Some(prev) => drift += (e.weight - prev.weight).abs(),
            None => added_edges += 1,
        }
    }
    (added_nodes + added_edges) as f64 + drift
}

/// Counts simple anchor-to-query chains over supports/entails edges that pass
/// through a Target or Pathway node, up to `limits.max_len` edges, capped at
/// `limits.count_cap`.
pub fn mechanistic_connectivity(graph: &EvidenceGraph, h: &str, limits: PathLimits) -> Result<f64, GraphError> {
    let Some(anchor) = graph.anchor(h)? else { return Ok(0.0) };
    let mut count = 0usize;
    let mut on_path = BTreeSet::new();
    on_path.insert(anchor.id.clone());
    chain_dfs(graph, &anchor.id, 0, false, &mut on_path, limits, &mut count);
    Ok(count.min(limits.count_cap) as f64)
}

fn chain_dfs(
    g: &EvidenceGraph,
    at: &str,
    depth: usize,
    mechanistic: bool,
    on_path: &mut BTreeSet<String>,
    limits: PathLimits,
    count: &mut usize,
) {
    if *count >= limits.count_cap || depth >= limits.max_len {
        return;
    }
    for e in g.outgoing(at) {
        if !e.semantics.is_chain() || on_path.contains(&e.target) {
            continue;
        }
        if e.target == g.query_id {
            if mechanistic {
                *count += 1;
                if *count >= limits.count_cap {
                    return;
                }
            }
            continue;
        }
        let node = &g.nodes[&e.target];
        let hit = mechanistic
            || (node.role == NodeRole::Evidence
                && matches!(node.evidence_kind, Some(EvidenceKind::Target | EvidenceKind::Pathway)));
        on_path.insert(e.target.clone());
        chain_dfs(g, &e.target, depth + 1, hit, on_path, limits, count);
        on_path.remove(&e.target);
    }
}

/// Maximum number of edge-disjoint anchor-to-query paths over supports/entails
/// edges (unit-capacity max-flow).
pub fn disjoint_support_paths(graph: &EvidenceGraph, h: &str) -> Result<usize, GraphError> {
    let Some(anchor) = graph.anchor(h)? else { return Ok(0) };
    let ids: Vec<&str> = graph.nodes.keys().map(String::as_str).collect();
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let n = ids.len();
    // Residual graph as adjacency of edge indices; edge i and i^1 are a pair.
    let mut to = Vec::new();
    let mut cap = Vec::new();
    let mut adj = vec![Vec::new(); n];
    for e in graph.edges.values().filter(|e| e.semantics.is_chain()) {
        let (u, v) = (index[e.source.as_str()], index[e.target.as_str()]);
        adj[u].push(to.len());
        to.push(v);
        cap.push(1i32);
        adj[v].push(to.len());
        to.push(u);
        cap.push(0i32);
    }
    let (s, t) = (index[anchor.id.as_str()], index[graph.query_id.as_str()]);
    let mut flow = 0;
    loop {
        let mut prev_edge = vec![usize::MAX; n];
        let mut seen = vec![false; n];
        seen[s] = true;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            if u == t {
                break;
            }
            for &ei in &adj[u] {
                if cap[ei] > 0 && !seen[to[ei]] {
                    seen[to[ei]] = true;
                    prev_edge[to[ei]] = ei;
                    queue.push_back(to[ei]);
                }
            }
        }
        if !seen[t] {
            break;
        }
        let mut v = t;
        while v != s {
            let ei = prev_edge[v];
            cap[ei] -= 1;
            cap[ei ^ 1] += 1;
            v = to[ei ^ 1];
        }
        flow += 1;
    }
    Ok(flow)
}
