//! Ranking metrics and evaluation of finished investigations against a truth
//! file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orchestrator::InvestigationResult;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("metric undefined: {0}")]
    Undefined(&'static str),
    #[error("invalid ranking: {0}")]
    Invalid(String),
    #[error("truth file line {line}: {reason}")]
    Truth { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledItem {
    pub candidate: String,
    pub score: f64,
    pub label: bool,
}

/// Scored, labelled candidates for one query, kept in rank order (score
/// descending, id ascending).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRanking {
    items: Vec<LabeledItem>,
}

impl LabeledRanking {
    pub fn new(items: impl IntoIterator<Item = (String, f64, bool)>) -> Result<Self, MetricError> {
        let mut items: Vec<LabeledItem> = items
            .into_iter()
            .map(|(candidate, score, label)| LabeledItem { candidate, score, label })
            .collect();
        if items.is_empty() {
            return Err(MetricError::Invalid("no items".into()));
        }
        let mut seen = BTreeSet::new();
        for it in &items {
            if !it.score.is_finite() {
                return Err(MetricError::Invalid(format!("non-finite score for `{}`", it.candidate)));
            }
            if !seen.insert(it.candidate.as_str()) {
                return Err(MetricError::Invalid(format!("duplicate candidate `{}`", it.candidate)));
            }
        }
        items.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.candidate.cmp(&b.candidate)));
        Ok(Self { items })
    }

    pub fn items(&self) -> &[LabeledItem] {
        &self.items
    }

    pub fn positives(&self) -> usize {
        self.items.iter().filter(|i| i.label).count()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Mann-Whitney form: probability a positive outscores a negative, ties
/// counting one half. Computed from mid-ranks.
pub fn auroc(r: &LabeledRanking) -> Result<f64, MetricError> {
    let pos = r.positives();
    let neg = r.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::Undefined("AUROC needs both classes"));
    }
    let mut by_score: Vec<&LabeledItem> = r.items.iter().collect();
    by_score.sort_by(|a, b| a.score.total_cmp(&b.score));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < by_score.len() {
        let mut j = i;
        while j + 1 < by_score.len() && by_score[j + 1].score == by_score[i].score {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean.
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * by_score[i..=j].iter().filter(|x| x.label).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

/// Average precision: mean precision at the rank of each positive.
pub fn auprc(r: &LabeledRanking) -> Result<f64, MetricError> {
    let pos = r.positives();
    if pos == 0 {
        return Err(MetricError::Undefined("AUPRC needs a positive"));
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (i, it) in r.items.iter().enumerate() {
        if it.label {
            hits += 1;
            total += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(total / pos as f64)
}

fn hits_at(r: &LabeledRanking, k: usize) -> usize {
    r.items.iter().take(k).filter(|i| i.label).count()
}

/// Positives in the top `k` divided by `k`, even when the list is shorter.
pub fn precision_at_k(r: &LabeledRanking, k: usize) -> Result<f64, MetricError> {
    if k == 0 {
        return Err(MetricError::Invalid("k must be at least 1".into()));
    }
    Ok(hits_at(r, k) as f64 / k as f64)
}

pub fn recall_at_k(r: &LabeledRanking, k: usize) -> Result<f64, MetricError> {
    if k == 0 {
        return Err(MetricError::Invalid("k must be at least 1".into()));
    }
    let pos = r.positives();
    if pos == 0 {
        return Err(MetricError::Undefined("recall needs a positive"));
    }
    Ok(hits_at(r, k) as f64 / pos as f64)
}

/// Known `(query, candidate) -> label` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TruthTable {
    labels: BTreeMap<String, BTreeMap<String, bool>>,
}

impl TruthTable {
    /// Reads TSV rows `query_id, candidate_id, label` with label 0 or 1. A
    /// header row and `#` comments are skipped.
    pub fn from_tsv<R: BufRead>(source: R) -> Result<Self, MetricError> {
        let mut t = Self::default();
        for (i, line) in source.lines().enumerate() {
            let line = line.map_err(|e| MetricError::Truth {
                line: i + 1,
                reason: e.to_string(),
            })?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = trimmed.split('\t').map(str::trim).collect();
            if i == 0 && cols.first() == Some(&"query_id") {
                continue;
            }
            if cols.len() != 3 {
                return Err(MetricError::Truth {
                    line: i + 1,
                    reason: format!("expected 3 columns, found {}", cols.len()),
                });
            }
            let label = match cols[2] {
                "1" => true,
                "0" => false,
                other => {
                    return Err(MetricError::Truth {
                        line: i + 1,
                        reason: format!("label must be 0 or 1, found `{other}`"),
                    })
                }
            };
            t.insert(cols[0], cols[1], label);
        }
        Ok(t)
    }

    pub fn insert(&mut self, query: &str, candidate: &str, label: bool) {
        self.labels.entry(query.to_string()).or_default().insert(candidate.to_string(), label);
    }

    pub fn has_query(&self, query: &str) -> bool {
        self.labels.contains_key(query)
    }

    pub fn label(&self, query: &str, candidate: &str) -> Option<bool> {
        self.labels.get(query)?.get(candidate).copied()
    }

    pub fn positives(&self, query: &str) -> usize {
        self.labels.get(query).map_or(0, |m| m.values().filter(|v| **v).count())
    }
}

/// Final candidate scores of one investigation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryScores {
    pub query_id: String,
    pub scores: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub candidates: usize,
    pub positives: usize,
    /// Candidates absent from the truth file, counted as negatives.
    pub unlisted: usize,
    /// Truth positives the investigation never ranked.
    pub positives_not_ranked: usize,
    pub auprc: Option<f64>,
    pub auroc: Option<f64>,
    pub p_at_k: BTreeMap<usize, f64>,
    pub r_at_k: BTreeMap<usize, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ks: Vec<usize>,
    /// Mean over queries where the metric is defined.
    pub auprc: Option<f64>,
    pub auroc: Option<f64>,
    /// AUROC over all (query, candidate) pairs pooled.
    pub auroc_micro: Option<f64>,
    pub p_at_k: BTreeMap<usize, f64>,
    pub r_at_k: BTreeMap<usize, Option<f64>>,
    pub per_query: Vec<QueryMetrics>,
    /// Queries left out because the truth file never mentions them.
    pub excluded: Vec<String>,
    pub unlisted_negatives: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Scores each query's ranking against `truth`. Unlisted pairs are negatives.
pub fn evaluate_scores(runs: &[QueryScores], truth: &TruthTable, ks: &[usize]) -> Result<MetricsReport, MetricError> {
    let mut per_query = Vec::new();
    let mut excluded = Vec::new();
    let mut pooled = Vec::new();
    let mut unlisted_total = 0;
    let mut seen = BTreeSet::new();
    for run in runs {
        if !seen.insert(run.query_id.as_str()) {
            return Err(MetricError::Invalid(format!(
                "query `{}` appears in more than one run; evaluate one run per query",
                run.query_id
            )));
        }
        if !truth.has_query(&run.query_id) {
            excluded.push(run.query_id.clone());
            continue;
        }
        let mut unlisted = 0;
        let items: Vec<(String, f64, bool)> = run
            .scores
            .iter()
            .map(|(c, s)| {
                let label = truth.label(&run.query_id, c).unwrap_or_else(|| {
                    unlisted += 1;
                    false
                });
                (c.clone(), *s, label)
            })
            .collect();
        if items.is_empty() {
            excluded.push(run.query_id.clone());
            continue;
        }
        unlisted_total += unlisted;
        pooled.extend(items.iter().map(|(c, s, l)| (format!("{}\t{c}", run.query_id), *s, *l)));
        let r = LabeledRanking::new(items)?;
        let positives = r.positives();
        let mut p_at_k = BTreeMap::new();
        let mut r_at_k = BTreeMap::new();
        for &k in ks {
            p_at_k.insert(k, precision_at_k(&r, k)?);
            r_at_k.insert(k, recall_at_k(&r, k).ok());
        }
        per_query.push(QueryMetrics {
            query_id: run.query_id.clone(),
            candidates: r.len(),
            positives,
            unlisted,
            positives_not_ranked: truth.positives(&run.query_id).saturating_sub(positives),
            auprc: auprc(&r).ok(),
            auroc: auroc(&r).ok(),
            p_at_k,
            r_at_k,
        });
    }
    let auroc_micro = if pooled.is_empty() {
        None
    } else {
        auroc(&LabeledRanking::new(pooled)?).ok()
    };
    let p_at_k = ks
        .iter()
        .filter_map(|k| mean(per_query.iter().map(|q| q.p_at_k[k])).map(|m| (*k, m)))
        .collect();
    let r_at_k = ks
        .iter()
        .map(|k| (*k, mean(per_query.iter().filter_map(|q| q.r_at_k[k]))))
        .collect();
    Ok(MetricsReport {
        ks: ks.to_vec(),
        auprc: mean(per_query.iter().filter_map(|q| q.auprc)),
        auroc: mean(per_query.iter().filter_map(|q| q.auroc)),
        auroc_micro,
        p_at_k,
        r_at_k,
        per_query,
        excluded,
        unlisted_negatives: unlisted_total,
    })
}

/// Evaluates finished investigations by their final engine scores.
pub fn evaluate_runs(results: &[InvestigationResult], truth: &TruthTable, ks: &[usize]) -> Result<MetricsReport, MetricError> {
    let runs: Vec<QueryScores> = results.iter().map(InvestigationResult::query_scores).collect();
    evaluate_scores(&runs, truth, ks)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Plain-text table: one row per query, then the macro row.
    pub fn to_table(&self) -> String {
        let mut head = format!("{:<16} {:>7} {:>7}", "query", "AUPRC", "AUROC");
        for k in &self.ks {
            let _ = write!(head, " {:>7}", format!("P@{k}"));
        }
        for k in &self.ks {
            let _ = write!(head, " {:>7}", format!("R@{k}"));
        }
        let mut out = head.clone();
        out.push('\n');
        out.push_str(&"-".repeat(head.len()));
        out.push('\n');
        for q in &self.per_query {
            let _ = write!(out, "{:<16} {:>7} {:>7}", q.query_id, cell(q.auprc), cell(q.auroc));
            for k in &self.ks {
                let _ = write!(out, " {:>7}", cell(q.p_at_k.get(k).copied()));
            }
            for k in &self.ks {
                let _ = write!(out, " {:>7}", cell(q.r_at_k.get(k).copied().flatten()));
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<16} {:>7} {:>7}", "macro", cell(self.auprc), cell(self.auroc));
        for k in &self.ks {
            let _ = write!(out, " {:>7}", cell(self.p_at_k.get(k).copied()));
        }
        for k in &self.ks {
            let _ = write!(out, " {:>7}", cell(self.r_at_k.get(k).copied().flatten()));
        }
        out.push('\n');
        let _ = writeln!(out, "micro AUROC: {}", cell(self.auroc_micro));
        let _ = writeln!(out, "unlisted pairs counted as negatives: {}", self.unlisted_negatives);
        for q in &self.excluded {
            let _ = writeln!(out, "excluded: {q} (not in truth file)");
        }
        out
    }
}
