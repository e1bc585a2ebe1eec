//! Reply extraction and per-(role, mode) schema checks.
//!
//! Only required fields and value ranges are enforced; unknown fields pass
//! through untouched.

use serde_json::{Map, Value};
use thiserror::Error;

use super::{AgentMode, AgentRole};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OutputError {
    #[error("no JSON object found in output")]
    NoJson,
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error("schema violations: {}", .0.iter().map(|(p, m)| format!("{p}: {m}")).collect::<Vec<_>>().join("; "))]
    Schema(Vec<(String, String)>),
    #[error("mode {mode} is not valid for role {role}")]
    InvalidMode { role: AgentRole, mode: AgentMode },
}

impl OutputError {
    /// Paths of every schema violation, in discovery order.
    pub fn paths(&self) -> Vec<&str> {
        match self {
            OutputError::Schema(v) => v.iter().map(|(p, _)| p.as_str()).collect(),
            _ => Vec::new(),
        }
    }
}

/// Returns the first balanced top-level `{...}` in `raw`, skipping any code
/// fence or surrounding prose. Braces inside JSON strings are ignored.
pub fn extract_json_object(raw: &str) -> Option<&str> {
    let bytes = raw.as_bytes();
    let mut start = None;
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if start.is_none() {
            if b == b'{' {
                start = Some(i);
                depth = 1;
            }
            continue;
        }
        if in_str {
            match (escaped, b) {
                (true, _) => escaped = false,
                (false, b'\\') => escaped = true,
                (false, b'"') => in_str = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&raw[start.unwrap()..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

struct Checker {
    errors: Vec<(String, String)>,
}

impl Checker {
    fn fail(&mut self, path: impl Into<String>, msg: impl Into<String>) {
        self.errors.push((path.into(), msg.into()));
    }

    fn field<'a>(&mut self, obj: &'a Map<String, Value>, path: &str, key: &str) -> Option<&'a Value> {
        let v = obj.get(key);
        if v.is_none() {
            self.fail(join(path, key), "required field missing");
        }
        v
    }

    fn object<'a>(&mut self, v: &'a Value, path: &str) -> Option<&'a Map<String, Value>> {
        let o = v.as_object();
        if o.is_none() {
            self.fail(path, "expected an object");
        }
        o
    }

    fn array<'a>(&mut self, v: &'a Value, path: &str) -> Option<&'a Vec<Value>> {
        let a = v.as_array();
        if a.is_none() {
            self.fail(path, "expected an array");
        }
        a
    }

    fn string(&mut self, obj: &Map<String, Value>, path: &str, key: &str) -> Option<String> {
        match self.field(obj, path, key)? {
            Value::String(s) if !s.trim().is_empty() => Some(s.clone()),
            Value::String(_) => {
                self.fail(join(path, key), "must be non-empty");
                None
            }
            _ => {
                self.fail(join(path, key), "expected a string");
                None
            }
        }
    }

    fn opt_string(&mut self, obj: &Map<String, Value>, path: &str, key: &str) {
        if let Some(v) = obj.get(key) {
            if !v.is_string() {
                self.fail(join(path, key), "expected a string");
            }
        }
    }

    fn number_in(&mut self, v: &Value, path: &str, lo: f64, hi: f64) {
        match v.as_f64() {
            Some(x) if x.is_finite() && (lo..=hi).contains(&x) => {}
            Some(_) => self.fail(path, format!("must be within [{lo}, {hi}]")),
            None => self.fail(path, "expected a number"),
        }
    }

    fn string_list(&mut self, v: &Value, path: &str) {
        if let Some(arr) = self.array(v, path) {
            for (i, s) in arr.iter().enumerate() {
                if !s.is_string() {
                    self.fail(format!("{path}[{i}]"), "expected a string");
                }
            }
        }
    }

    /// Each element must be an object; `f` checks it.
    fn each_object(&mut self, v: &Value, path: &str, mut f: impl FnMut(&mut Self, &Map<String, Value>, &str)) {
        if let Some(arr) = self.array(v, path) {
            for (i, item) in arr.iter().enumerate() {
                let p = format!("{path}[{i}]");
                if let Some(o) = self.object(item, &p) {
                    f(self, o, &p);
                }
            }
        }
    }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

const WEIGHT_KEYS: [&str; 5] = ["alpha_support", "beta_refute", "gamma_mech", "delta_disjoint", "lambda_conflict"];

fn check_weights(c: &mut Checker, v: &Value, path: &str) {
    if let Some(o) = c.object(v, path) {
        for key in WEIGHT_KEYS {
            if let Some(w) = o.get(key) {
                c.number_in(w, &join(path, key), 0.0, 4.0);
            }
        }
    }
}

fn check_pi_init(c: &mut Checker, root: &Map<String, Value>) {
    let Some(plan) = c.field(root, "", "plan") else { return };
    let Some(plan) = c.object(plan, "plan") else { return };
    if let Some(r) = plan.get("rounds") {
        if r.as_u64().is_none_or(|r| r == 0) {
            c.fail("plan.rounds", "expected a positive integer");
        }
    }
    if let Some(w) = plan.get("weights") {
        check_weights(c, w, "plan.weights");
    }
    if let Some(s) = plan.get("stopping") {
        if let Some(s) = c.object(s, "plan.stopping") {
            if let Some(d) = s.get("delta_threshold") {
                c.number_in(d, "plan.stopping.delta_threshold", 0.0, 1.0);
            }
        }
    }
}

fn check_pi_score(c: &mut Checker, root: &Map<String, Value>) {
    if let Some(v) = c.field(root, "", "scoring_summary") {
        c.each_object(v, "scoring_summary", |c, o, p| {
            c.string(o, p, "hypothesis_id");
            if let Some(s) = c.field(o, p, "score") {
                c.number_in(s, &join(p, "score"), 0.0, 1.0);
            }
        });
    }
    if let Some(v) = c.field(root, "", "ranking") {
        c.string_list(v, "ranking");
    }
    if let Some(v) = c.field(root, "", "delta_since_last_round") {
        if v.as_f64().is_none_or(|d| !d.is_finite()) {
            c.fail("delta_since_last_round", "expected a number");
        }
    }
    if let Some(v) = c.field(root, "", "stop_decision") {
        if let Some(o) = c.object(v, "stop_decision") {
            match c.field(o, "stop_decision", "should_stop") {
                Some(Value::Bool(_)) | None => {}
                Some(_) => c.fail("stop_decision.should_stop", "expected a boolean"),
            }
        }
    }
    if let Some(w) = root.get("weights") {
        check_weights(c, w, "weights");
    }
}

fn check_pi_revise(c: &mut Checker, root: &Map<String, Value>) {
    if let Some(v) = c.field(root, "", "revisions") {
        c.each_object(v, "revisions", |c, o, p| {
            c.string(o, p, "hypothesis_id");
            if let Some(actions) = c.field(o, p, "graph_actions") {
                c.each_object(actions, &join(p, "graph_actions"), |c, a, ap| {
                    c.string(a, ap, "type");
                    if let Some(who) = c.string(a, ap, "assignee") {
                        if who != "Proponent" && who != "Skeptic" {
                            c.fail(join(ap, "assignee"), "must be Proponent or Skeptic");
                        }
                    }
                    c.opt_string(a, ap, "detail");
                });
            }
            if let Some(focus) = o.get("debate_focus") {
                c.string_list(focus, &join(p, "debate_focus"));
            }
        });
    }
    if let Some(sr) = root.get("seed_request") {
        if let Some(o) = c.object(sr, "seed_request") {
            match c.field(o, "seed_request", "should_regenerate") {
                Some(Value::Bool(_)) | None => {}
                Some(_) => c.fail("seed_request.should_regenerate", "expected a boolean"),
            }
        }
    }
}

fn check_pi_report(c: &mut Checker, root: &Map<String, Value>) {
    const SECTIONS: [&str; 7] = [
        "final_recommendations",
        "prompt_patches",
        "pivotal_motifs",
        "unproductive_paths",
        "residual_gaps",
        "distillable",
        "heuristics",
    ];
    if !SECTIONS.iter().any(|k| root.contains_key(*k)) {
        c.fail("final_recommendations", "required field missing");
        return;
    }
    if let Some(v) = root.get("final_recommendations") {
        c.each_object(v, "final_recommendations", |c, o, p| {
            c.string(o, p, "hypothesis_id");
            if let Some(s) = o.get("score") {
                c.number_in(s, &join(p, "score"), 0.0, 1.0);
            }
        });
    }
    if let Some(v) = root.get("prompt_patches") {
        c.each_object(v, "prompt_patches", |c, o, p| {
            if let Some(role) = c.string(o, p, "role") {
                if !matches!(role.as_str(), "PI" | "Proponent" | "Skeptic" | "Explorer") {
                    c.fail(join(p, "role"), "unknown agent role");
                }
            }
            c.string(o, p, "patch");
        });
    }
    for key in ["pivotal_motifs", "unproductive_paths"] {
        if let Some(v) = root.get(key) {
            c.each_object(v, key, |c, o, p| {
                c.string(o, p, "description");
                if let Some(refs) = o.get("refs") {
                    c.string_list(refs, &join(p, "refs"));
                }
            });
        }
    }
    for key in ["residual_gaps", "distillable"] {
        if let Some(v) = root.get(key) {
            c.string_list(v, key);
        }
    }
    if let Some(v) = root.get("heuristics") {
        if let Some(arr) = c.array(v, "heuristics") {
            for (i, h) in arr.iter().enumerate() {
                let p = format!("heuristics[{i}]");
                match h {
                    Value::String(_) => {}
                    Value::Object(o) => {
                        c.string(o, &p, "condition");
                        c.string(o, &p, "action");
                    }
                    _ => c.fail(p, "expected a rule string or {condition, action}"),
                }
            }
        }
    }
}

fn check_graph_updates(c: &mut Checker, root: &Map<String, Value>) {
    let Some(gu) = c.field(root, "", "graph_updates") else { return };
    let Some(gu) = c.object(gu, "graph_updates") else { return };
    if let Some(v) = gu.get("add_nodes") {
        c.each_object(v, "graph_updates.add_nodes", |c, o, p| {
            c.string(o, p, "id");
            c.opt_string(o, p, "type");
            c.opt_string(o, p, "label");
        });
    }
    if let Some(v) = gu.get("add_edges") {
        c.each_object(v, "graph_updates.add_edges", |c, o, p| {
            c.string(o, p, "source");
            c.string(o, p, "target");
            c.string(o, p, "relation");
            if let Some(w) = c.field(o, p, "weight") {
                c.number_in(w, &join(p, "weight"), 0.0, 1.0);
            }
            c.opt_string(o, p, "rationale");
        });
    }
    let merge_key = if gu.contains_key("merge") { "merge" } else { "merge_pairs" };
    if let Some(v) = gu.get(merge_key) {
        c.each_object(v, &format!("graph_updates.{merge_key}"), |c, o, p| {
            c.string(o, p, "keep");
            c.string(o, p, "remove");
        });
    }
    if let Some(v) = gu.get("conflict_hotspots") {
        c.each_object(v, "graph_updates.conflict_hotspots", |c, o, p| {
            c.string(o, p, "topic");
            for key in ["pro_nodes", "con_nodes"] {
                if let Some(ids) = o.get(key) {
                    c.string_list(ids, &join(p, key));
                }
            }
        });
    }
}

/// Extracts the reply object and checks it against the (role, mode) schema.
pub fn parse_validate(role: AgentRole, mode: AgentMode, raw: &str) -> Result<Value, OutputError> {
    if !mode.valid_for(role) {
        return Err(OutputError::InvalidMode { role, mode });
    }
    let text = extract_json_object(raw).ok_or(OutputError::NoJson)?;
    let value: Value = serde_json::from_str(text).map_err(|e| OutputError::Json(e.to_string()))?;
    let root = value.as_object().ok_or(OutputError::NoJson)?;
    let mut c = Checker { errors: Vec::new() };
    match (role, mode) {
        (AgentRole::Pi, AgentMode::Init) => check_pi_init(&mut c, root),
        (AgentRole::Pi, AgentMode::Score) => check_pi_score(&mut c, root),
        (AgentRole::Pi, AgentMode::Revise) => check_pi_revise(&mut c, root),
        (AgentRole::Pi, AgentMode::ReportAndEvolve) => check_pi_report(&mut c, root),
        (AgentRole::Proponent | AgentRole::Skeptic, _) => check_graph_updates(&mut c, root),
        _ => unreachable!("mode validity checked above"),
    }
    if c.errors.is_empty() {
        Ok(value)
    } else {
        Err(OutputError::Schema(c.errors))
    }
}
