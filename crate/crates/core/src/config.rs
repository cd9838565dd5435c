//! Validation of JSON run configurations.
//!
//! Every violated field is reported, not just the first one, and the
//! returned configuration has all defaults filled in. Emitting it and
//! validating again gives the same configuration back.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::harness::{default_checkpoints, ExperimentConfig, Tolerances, VarpiReference};
use crate::policies::{PolicyConfig, ReplacementSpec};
use crate::spectral::StructureMatrix;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Which fields a command needs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    /// Only `policy` is required.
    Policy,
    /// `policy`, `Y0` and `n_max` are required.
    Run,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedOptions {
    pub n: u64,
    pub reps: u64,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        Self { n: 3, reps: 10_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunOptions {
    /// Track the martingale decomposition in `simulate`.
    pub diagnostics: bool,
    pub varpi_reference: Option<VarpiReference>,
    pub tolerances: Tolerances,
    pub embed: EmbedOptions,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub policy: PolicyConfig,
    /// Extra nonzero pattern for the class decomposition.
    pub structure: Option<StructureMatrix>,
    /// Present whenever `Y0` is given; always present for [`Scope::Run`].
    pub experiment: Option<ExperimentConfig>,
    pub options: RunOptions,
}

const EXPERIMENT_KEYS: [&str; 8] =
    ["policy", "Y0", "fallback_p", "n_max", "checkpoints", "replications", "master_seed", "nu_sec"];
const OPTION_KEYS: [&str; 5] = ["structure", "diagnostics", "varpi_reference", "tolerances", "embed"];

struct Collector(Vec<FieldError>);

impl Collector {
    fn push(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.0.push(FieldError { field: field.into(), message: message.into() });
    }

    fn parse<T: for<'de> Deserialize<'de>>(&mut self, obj: &Map<String, Value>, key: &str) -> Option<T> {
        match obj.get(key) {
            None | Some(Value::Null) => None,
            Some(v) => match serde_json::from_value(v.clone()) {
                Ok(t) => Some(t),
                Err(e) => {
                    self.push(key, e.to_string());
                    None
                }
            },
        }
    }
}

/// Parses and checks a configuration, collecting one error per violation.
pub fn validate_config(value: &Value, scope: Scope) -> Result<RunConfig, Vec<FieldError>> {
    let mut errs = Collector(Vec::new());
    let Some(obj) = value.as_object() else {
        return Err(vec![FieldError { field: "<root>".into(), message: "expected a JSON object".into() }]);
    };
    for key in obj.keys() {
        if !EXPERIMENT_KEYS.contains(&key.as_str()) && !OPTION_KEYS.contains(&key.as_str()) {
            errs.push(key.clone(), "unknown field");
        }
    }

    if !obj.contains_key("policy") {
        errs.push("policy", "required");
    }
    let policy: Option<PolicyConfig> = errs.parse(obj, "policy");
    let compiled = policy.as_ref().and_then(|p| match ReplacementSpec::from_config(p) {
        Ok(s) => Some(s),
        Err(e) => {
            errs.push("policy", e.to_string());
            None
        }
    });
    let dim = compiled.as_ref().map(|p| p.dim());

    let structure: Option<StructureMatrix> = errs.parse(obj, "structure");
    if let (Some(s), Some(d)) = (&structure, dim) {
        if s.dim() != d {
            errs.push("structure", format!("dimension {} differs from policy dimension {d}", s.dim()));
        }
    }

    let wants_run = scope == Scope::Run || obj.contains_key("Y0");
    let y0: Option<Vec<f64>> = errs.parse(obj, "Y0");
    let n_max: Option<u64> = errs.parse(obj, "n_max");
    if wants_run {
        if !obj.contains_key("Y0") {
            errs.push("Y0", "required");
        }
        if !obj.contains_key("n_max") {
            errs.push("n_max", "required");
        }
    }
    if let Some(y) = &y0 {
        if let Some(d) = dim {
            if y.len() != d {
                errs.push("Y0", format!("length {} differs from policy dimension {d}", y.len()));
            }
        }
        if let Some(k) = y.iter().position(|x| !x.is_finite()) {
            errs.push(format!("Y0[{k}]"), "not finite");
        }
    }
    if n_max == Some(0) {
        errs.push("n_max", "must be at least 1");
    }
    let fallback_p: Option<Vec<f64>> = errs.parse(obj, "fallback_p");
    if let Some(p) = &fallback_p {
        let d = dim.or(y0.as_ref().map(Vec::len));
        if d.is_some_and(|d| d != p.len()) {
            errs.push("fallback_p", "length differs from the policy dimension");
        }
        if p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            errs.push("fallback_p", "must be a probability vector");
        }
    }
    let checkpoints: Option<Vec<u64>> = errs.parse(obj, "checkpoints");
    if let Some(c) = &checkpoints {
        if c.is_empty() || c[0] == 0 || c.windows(2).any(|w| w[0] >= w[1]) {
            errs.push("checkpoints", "must be positive and strictly increasing");
        }
        if n_max.is_some() && c.last() != n_max.as_ref() {
            errs.push("checkpoints", "last checkpoint must equal n_max");
        }
    }
    let replications: Option<u64> = errs.parse(obj, "replications");
    if replications == Some(0) {
        errs.push("replications", "must be at least 1");
    }
    let master_seed: Option<u64> = errs.parse(obj, "master_seed");
    let nu_sec: Option<usize> = errs.parse(obj, "nu_sec");
    if nu_sec == Some(0) {
        errs.push("nu_sec", "must be at least 1");
    }

    let mut options = RunOptions::default();
    if let Some(b) = errs.parse(obj, "diagnostics") {
        options.diagnostics = b;
    }
    options.varpi_reference = errs.parse(obj, "varpi_reference");
    if let Some(VarpiReference::Beta([a, b])) = options.varpi_reference {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            errs.push("varpi_reference", "beta parameters must be positive");
        }
    }
    if let Some(t) = errs.parse::<Tolerances>(obj, "tolerances") {
        if !(t.dist_y > 0.0 && t.dist_n > 0.0) {
            errs.push("tolerances", "must be positive");
        }
        options.tolerances = t;
    }
    if let Some(e) = errs.parse::<EmbedOptions>(obj, "embed") {
        if e.reps == 0 {
            errs.push("embed.reps", "must be at least 1");
        }
        options.embed = e;
    }

    if !errs.0.is_empty() {
        return Err(errs.0);
    }
    let policy = policy.expect("no errors means the policy parsed");
    let experiment = wants_run.then(|| {
        let n_max = n_max.expect("checked above");
        let d = dim.expect("policy compiled");
        ExperimentConfig {
            policy: policy.clone(),
            y0: y0.clone().expect("checked above"),
            fallback_p: Some(fallback_p.unwrap_or_else(|| vec![1.0 / d as f64; d])),
            n_max,
            checkpoints: Some(checkpoints.unwrap_or_else(|| default_checkpoints(n_max))),
            replications: replications.unwrap_or(1),
            master_seed: master_seed.unwrap_or(0),
            nu_sec,
        }
    });
    Ok(RunConfig { policy, structure, experiment, options })
}

/// Flat JSON with every default written out.
pub fn emit_config(cfg: &RunConfig) -> Value {
    let mut obj = match &cfg.experiment {
        Some(e) => match serde_json::to_value(e).expect("serializable") {
            Value::Object(m) => m,
            _ => unreachable!("struct serializes to an object"),
        },
        None => {
            let mut m = Map::new();
            m.insert("policy".into(), serde_json::to_value(&cfg.policy).expect("serializable"));
            m
        }
    };
    if let Some(s) = &cfg.structure {
        obj.insert("structure".into(), serde_json::to_value(s).expect("serializable"));
    }
    let o = &cfg.options;
    obj.insert("diagnostics".into(), Value::Bool(o.diagnostics));
    obj.insert("varpi_reference".into(), serde_json::to_value(o.varpi_reference).expect("serializable"));
    obj.insert("tolerances".into(), serde_json::to_value(o.tolerances).expect("serializable"));
    obj.insert("embed".into(), serde_json::to_value(o.embed).expect("serializable"));
    Value::Object(obj)
}
