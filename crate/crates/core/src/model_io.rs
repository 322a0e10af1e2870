//! JSON model documents: parsing, validation, canonical form.
//!
//! A document has the top-level keys `version`, `environment`, `states`,
//! `analysis` and `simulation`. Parsing is total: every failure comes back
//! as `Error::Invalid` with one diagnostic per finding.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::distributions::{DistributionLaw, ResourceVectorLaw, SubDistribution};
use crate::environment::SemiMarkovEnvironment;
use crate::error::{join_path, Diagnostic, Error, Result};
use crate::linalg::RMatrix;
use crate::map_core::{superpose, MarkedMap, SingleMap};
use crate::metrics::AnalysisConfig;
use crate::model::{Model, StateModel};
use crate::simulator::SimConfig;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnknownKeys {
    #[default]
    Reject,
    Warn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawDoc {
    pub family: String,
    pub params: Vec<f64>,
}

impl LawDoc {
    pub fn new(family: &str, params: &[f64]) -> Self {
        Self {
            family: family.to_string(),
            params: params.to_vec(),
        }
    }
}

impl From<&DistributionLaw> for LawDoc {
    fn from(law: &DistributionLaw) -> Self {
        Self::new(law.family(), &law.params())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelEntryDoc {
    pub weight: f64,
    pub law: LawDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentDoc {
    pub states: Vec<String>,
    pub kernel: Vec<Vec<KernelEntryDoc>>,
    pub repair: Vec<LawDoc>,
    pub initial: Vec<f64>,
}

impl EnvironmentDoc {
    /// Single state that is never left.
    pub fn absorbing() -> Self {
        Self {
            states: vec!["s0".into()],
            kernel: vec![vec![KernelEntryDoc {
                weight: 0.0,
                law: LawDoc::new("deterministic", &[0.0]),
            }]],
            repair: vec![LawDoc::new("deterministic", &[0.0])],
            initial: vec![1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentDoc {
    pub d0: Vec<Vec<f64>>,
    pub d1: Vec<Vec<f64>>,
}

/// Either `components` (one single-type MAP per customer type) or the
/// explicit marked form `d0` plus `marks`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MapDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<Vec<ComponentDoc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d0: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marks: Option<Vec<Vec<Vec<f64>>>>,
}

impl MapDoc {
    pub fn poisson(rates: &[f64]) -> Self {
        Self {
            components: Some(
                rates
                    .iter()
                    .map(|&r| ComponentDoc {
                        d0: vec![vec![-r]],
                        d1: vec![vec![r]],
                    })
                    .collect(),
            ),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDoc {
    pub map: MapDoc,
    pub service: Vec<LawDoc>,
    pub arrival_resources: Vec<Vec<LawDoc>>,
    pub departure_resources: Vec<Vec<LawDoc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisDoc {
    pub grid_step: f64,
    pub horizon: f64,
    pub t_points: Vec<f64>,
    pub z_points: Vec<f64>,
    pub cutoff: usize,
    pub tolerance: f64,
    pub enforce_tolerance: bool,
}

impl Default for AnalysisDoc {
    fn default() -> Self {
        let a = AnalysisConfig::default();
        Self {
            grid_step: a.grid_step,
            horizon: a.horizon,
            t_points: a.t_points,
            z_points: a.z_points,
            cutoff: a.cutoff,
            tolerance: a.tolerance,
            enforce_tolerance: a.enforce_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationDoc {
    pub replications: usize,
    pub seed: u64,
    pub warmup: f64,
    pub horizon: f64,
    pub sample_spacing: f64,
    pub reference_state: usize,
}

impl Default for SimulationDoc {
    fn default() -> Self {
        let s = SimConfig::default();
        Self {
            replications: s.replications,
            seed: s.seed,
            warmup: s.warmup,
            horizon: s.horizon,
            sample_spacing: s.sample_spacing,
            reference_state: s.reference_state,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub version: u64,
    pub environment: EnvironmentDoc,
    pub states: Vec<StateDoc>,
    #[serde(default)]
    pub analysis: AnalysisDoc,
    #[serde(default)]
    pub simulation: SimulationDoc,
}

/// A validated model document together with the objects built from it.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub doc: ModelDoc,
    pub model: Model,
    /// Unknown-key findings accepted in lenient mode.
    pub warnings: Vec<Diagnostic>,
}

impl ModelSpec {
    pub fn analysis(&self) -> AnalysisConfig {
        let a = &self.doc.analysis;
        AnalysisConfig {
            grid_step: a.grid_step,
            horizon: a.horizon,
            t_points: a.t_points.clone(),
            z_points: a.z_points.clone(),
            cutoff: a.cutoff,
            tolerance: a.tolerance,
            enforce_tolerance: a.enforce_tolerance,
        }
    }

    /// Simulation settings; times, PGF points and cutoff come from the
    /// analysis block so both pipelines report the same keys.
    pub fn simulation(&self) -> SimConfig {
        let s = &self.doc.simulation;
        let a = &self.doc.analysis;
        SimConfig {
            replications: s.replications,
            seed: s.seed,
            warmup: s.warmup,
            horizon: s.horizon,
            t_points: a.t_points.clone(),
            z_points: a.z_points.clone(),
            cutoff: a.cutoff,
            sample_spacing: s.sample_spacing,
            reference_state: s.reference_state,
            trace: false,
        }
    }

    pub fn to_json(&self) -> String {
        serialize(&self.doc)
    }

    /// Re-validate after the analysis or simulation block was edited.
    pub fn revalidate(self) -> Result<Self> {
        let mut diags = Vec::new();
        check_settings(&self.doc, self.model.environment().states(), &mut diags);
        if diags.is_empty() {
            Ok(self)
        } else {
            Err(Error::Invalid(diags))
        }
    }
}

pub fn serialize(doc: &ModelDoc) -> String {
    let mut out = serde_json::to_string_pretty(doc).expect("model documents always serialize");
    out.push('\n');
    out
}

pub fn parse_model(text: &str) -> Result<ModelSpec> {
    parse_model_with(text, UnknownKeys::Reject)
}

pub fn parse_model_with(text: &str, unknown: UnknownKeys) -> Result<ModelSpec> {
    let value: Value = serde_json::from_str(text).map_err(|e| {
        Error::invalid(
            "syntax",
            "",
            format!("line {}, column {}: {e}", e.line(), e.column()),
        )
    })?;
    let Some(obj) = value.as_object() else {
        return Err(Error::invalid("type-error", "", "document must be a JSON object"));
    };
    match obj.get("version") {
        None => return Err(Error::invalid("missing-field", "version", "missing field `version`")),
        Some(v) if v.as_u64() == Some(FORMAT_VERSION) => {}
        Some(v) => {
            return Err(Error::invalid(
                "version-mismatch",
                "version",
                format!("unsupported format version {v}; this build reads version {FORMAT_VERSION}"),
            ))
        }
    }

    let mut extra = Vec::new();
    scan_unknown(&value, &mut extra);
    let warnings = match unknown {
        UnknownKeys::Reject if !extra.is_empty() => return Err(Error::Invalid(extra)),
        UnknownKeys::Reject => Vec::new(),
        UnknownKeys::Warn => {
            for d in &extra {
                log::warn!("{d}");
            }
            extra
        }
    };

    let doc: ModelDoc = serde_path_to_error::deserialize(&value).map_err(|e| {
        let path = clean_path(&e.path().to_string());
        let inner = e.into_inner().to_string();
        let code = if inner.starts_with("missing field") {
            "missing-field"
        } else {
            "type-error"
        };
        Error::invalid(code, path, inner)
    })?;
    let model = build_model(&doc)?;
    Ok(ModelSpec { doc, model, warnings })
}

fn clean_path(p: &str) -> String {
    if p == "." {
        String::new()
    } else {
        p.replace(".[", "[")
    }
}

/// Build and validate a `ModelSpec` from an in-memory document.
pub fn from_doc(doc: ModelDoc) -> Result<ModelSpec> {
    if doc.version != FORMAT_VERSION {
        return Err(Error::invalid(
            "version-mismatch",
            "version",
            format!("unsupported format version {}", doc.version),
        ));
    }
    let model = build_model(&doc)?;
    Ok(ModelSpec {
        doc,
        model,
        warnings: Vec::new(),
    })
}

const TOP_KEYS: &[&str] = &["version", "environment", "states", "analysis", "simulation"];
const ENV_KEYS: &[&str] = &["states", "kernel", "repair", "initial"];
const KERNEL_KEYS: &[&str] = &["weight", "law"];
const LAW_KEYS: &[&str] = &["family", "params"];
const STATE_KEYS: &[&str] = &["map", "service", "arrival_resources", "departure_resources"];
const MAP_KEYS: &[&str] = &["components", "d0", "marks"];
const COMPONENT_KEYS: &[&str] = &["d0", "d1"];
const ANALYSIS_KEYS: &[&str] = &[
    "grid_step",
    "horizon",
    "t_points",
    "z_points",
    "cutoff",
    "tolerance",
    "enforce_tolerance",
];
const SIMULATION_KEYS: &[&str] = &[
    "replications",
    "seed",
    "warmup",
    "horizon",
    "sample_spacing",
    "reference_state",
];

fn check_keys(v: &Value, allowed: &[&str], path: &str, out: &mut Vec<Diagnostic>) {
    if let Some(obj) = v.as_object() {
        for key in obj.keys() {
            if !allowed.contains(&key.as_str()) {
                out.push(Diagnostic::new(
                    "unknown-key",
                    join_path(path, key),
                    format!("unknown key '{key}'"),
                ));
            }
        }
    }
}

fn items(v: Option<&Value>) -> &[Value] {
    v.and_then(Value::as_array).map(Vec::as_slice).unwrap_or(&[])
}

fn scan_law(v: &Value, path: &str, out: &mut Vec<Diagnostic>) {
    check_keys(v, LAW_KEYS, path, out);
}

fn scan_unknown(doc: &Value, out: &mut Vec<Diagnostic>) {
    check_keys(doc, TOP_KEYS, "", out);
    if let Some(env) = doc.get("environment") {
        check_keys(env, ENV_KEYS, "environment", out);
        for (i, row) in items(env.get("kernel")).iter().enumerate() {
            for (j, e) in items(Some(row)).iter().enumerate() {
                let p = format!("environment.kernel[{i}][{j}]");
                check_keys(e, KERNEL_KEYS, &p, out);
                if let Some(law) = e.get("law") {
                    scan_law(law, &format!("{p}.law"), out);
                }
            }
        }
        for (i, law) in items(env.get("repair")).iter().enumerate() {
            scan_law(law, &format!("environment.repair[{i}]"), out);
        }
    }
    for (i, st) in items(doc.get("states")).iter().enumerate() {
        let p = format!("states[{i}]");
        check_keys(st, STATE_KEYS, &p, out);
        if let Some(map) = st.get("map") {
            check_keys(map, MAP_KEYS, &format!("{p}.map"), out);
            for (c, comp) in items(map.get("components")).iter().enumerate() {
                check_keys(comp, COMPONENT_KEYS, &format!("{p}.map.components[{c}]"), out);
            }
        }
        for (r, law) in items(st.get("service")).iter().enumerate() {
            scan_law(law, &format!("{p}.service[{r}]"), out);
        }
        for key in ["arrival_resources", "departure_resources"] {
            for (r, vecs) in items(st.get(key)).iter().enumerate() {
                for (c, law) in items(Some(vecs)).iter().enumerate() {
                    scan_law(law, &format!("{p}.{key}[{r}][{c}]"), out);
                }
            }
        }
    }
    if let Some(a) = doc.get("analysis") {
        check_keys(a, ANALYSIS_KEYS, "analysis", out);
    }
    if let Some(s) = doc.get("simulation") {
        check_keys(s, SIMULATION_KEYS, "simulation", out);
    }
}

/// Move the diagnostics of a failed build into `diags`.
fn collect<T>(diags: &mut Vec<Diagnostic>, path: &str, r: Result<T>) -> Option<T> {
    match r {
        Ok(v) => Some(v),
        Err(Error::Invalid(ds)) => {
            diags.extend(ds.into_iter().map(|mut d| {
                d.path = join_path(path, &d.path);
                d
            }));
            None
        }
        Err(other) => {
            diags.push(Diagnostic::new("invalid-parameter", path, other.to_string()));
            None
        }
    }
}

fn law(doc: &LawDoc, path: &str, diags: &mut Vec<Diagnostic>) -> Option<DistributionLaw> {
    collect(diags, path, DistributionLaw::from_family(&doc.family, &doc.params))
}

fn matrix(rows: &[Vec<f64>], path: &str, diags: &mut Vec<Diagnostic>) -> Option<RMatrix> {
    let n = rows.len();
    if n == 0 {
        diags.push(Diagnostic::new("dimension", path, "matrix has no rows"));
        return None;
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n {
            diags.push(Diagnostic::new(
                "dimension",
                format!("{path}[{i}]"),
                format!("expected {n} columns (square matrix), got {}", row.len()),
            ));
            return None;
        }
    }
    Some(RMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn build_map(doc: &MapDoc, path: &str, diags: &mut Vec<Diagnostic>) -> Option<MarkedMap> {
    match (&doc.components, &doc.d0, &doc.marks) {
        (Some(components), None, None) => {
            let before = diags.len();
            let mut singles = Vec::new();
            for (c, comp) in components.iter().enumerate() {
                let p = format!("{path}.components[{c}]");
                let d0 = matrix(&comp.d0, &format!("{p}.d0"), diags);
                let d1 = matrix(&comp.d1, &format!("{p}.d1"), diags);
                if let (Some(d0), Some(d1)) = (d0, d1) {
                    if let Some(m) = collect(diags, &p, SingleMap::new(d0, d1)) {
                        singles.push(m);
                    }
                }
            }
            if diags.len() > before {
                return None;
            }
            collect(diags, path, superpose(&singles))
        }
        (None, Some(d0), Some(marks)) => {
            let before = diags.len();
            let d0 = matrix(d0, &format!("{path}.d0"), diags);
            let marks: Vec<_> = marks
                .iter()
                .enumerate()
                .filter_map(|(r, m)| matrix(m, &format!("{path}.marks[{r}]"), diags))
                .collect();
            if diags.len() > before {
                return None;
            }
            collect(diags, path, MarkedMap::new(d0?, marks))
        }
        _ => {
            diags.push(Diagnostic::new(
                "map-form",
                path,
                "give either `components` or both `d0` and `marks`",
            ));
            None
        }
    }
}

fn build_state(doc: &StateDoc, path: &str, diags: &mut Vec<Diagnostic>) -> Option<StateModel> {
    let before = diags.len();
    let map = build_map(&doc.map, &format!("{path}.map"), diags);
    let service: Vec<_> = doc
        .service
        .iter()
        .enumerate()
        .filter_map(|(r, l)| law(l, &format!("{path}.service[{r}]"), diags))
        .collect();
    let resources = |key: &str, laws: &[Vec<LawDoc>], diags: &mut Vec<Diagnostic>| -> Vec<ResourceVectorLaw> {
        laws.iter()
            .enumerate()
            .filter_map(|(r, comps)| {
                let p = format!("{path}.{key}[{r}]");
                let marginals: Vec<_> = comps
                    .iter()
                    .enumerate()
                    .filter_map(|(c, l)| law(l, &format!("{p}[{c}]"), diags))
                    .collect();
                if marginals.len() != comps.len() {
                    return None;
                }
                collect(diags, &p, ResourceVectorLaw::new(marginals))
            })
            .collect()
    };
    let arrival = resources("arrival_resources", &doc.arrival_resources, diags);
    let departure = resources("departure_resources", &doc.departure_resources, diags);
    if diags.len() > before {
        return None;
    }
    collect(diags, path, StateModel::new(map?, service, arrival, departure))
}

fn build_environment(doc: &EnvironmentDoc, diags: &mut Vec<Diagnostic>) -> Option<SemiMarkovEnvironment> {
    let before = diags.len();
    let mut kernel = Vec::new();
    for (i, row) in doc.kernel.iter().enumerate() {
        let mut out = Vec::new();
        for (j, e) in row.iter().enumerate() {
            let p = format!("environment.kernel[{i}][{j}]");
            if let Some(l) = law(&e.law, &format!("{p}.law"), diags) {
                if let Some(s) = collect(diags, &p, SubDistribution::new(e.weight, l)) {
                    out.push(s);
                }
            }
        }
        kernel.push(out);
    }
    let repair: Vec<_> = doc
        .repair
        .iter()
        .enumerate()
        .filter_map(|(i, l)| law(l, &format!("environment.repair[{i}]"), diags))
        .collect();
    if diags.len() > before {
        return None;
    }
    collect(
        diags,
        "environment",
        SemiMarkovEnvironment::new(doc.states.clone(), kernel, repair, doc.initial.clone()),
    )
}

fn positive(x: f64, path: &str, diags: &mut Vec<Diagnostic>) {
    if !(x.is_finite() && x > 0.0) {
        diags.push(Diagnostic::new(
            "invalid-parameter",
            path,
            format!("must be positive and finite, got {x}"),
        ));
    }
}

fn check_settings(doc: &ModelDoc, env_states: usize, diags: &mut Vec<Diagnostic>) {
    let a = &doc.analysis;
    positive(a.grid_step, "analysis.grid_step", diags);
    positive(a.horizon, "analysis.horizon", diags);
    positive(a.tolerance, "analysis.tolerance", diags);
    if a.cutoff == 0 {
        diags.push(Diagnostic::new("invalid-parameter", "analysis.cutoff", "cutoff must be at least 1"));
    }
    for (n, &t) in a.t_points.iter().enumerate() {
        if !(t.is_finite() && t >= 0.0 && t <= a.horizon) {
            diags.push(Diagnostic::new(
                "invalid-parameter",
                format!("analysis.t_points[{n}]"),
                format!("time {t} must lie in [0, horizon = {}]", a.horizon),
            ));
        }
    }
    for (n, &z) in a.z_points.iter().enumerate() {
        if !(0.0..=1.0).contains(&z) {
            diags.push(Diagnostic::new(
                "invalid-parameter",
                format!("analysis.z_points[{n}]"),
                format!("PGF argument {z} must lie in [0, 1]"),
            ));
        }
    }
    let s = &doc.simulation;
    if s.replications < 2 {
        diags.push(Diagnostic::new(
            "invalid-parameter",
            "simulation.replications",
            "at least 2 replications are needed for a standard error",
        ));
    }
    if !(s.warmup.is_finite() && s.warmup >= 0.0) {
        diags.push(Diagnostic::new(
            "invalid-parameter",
            "simulation.warmup",
            format!("warmup must be nonnegative, got {}", s.warmup),
        ));
    }
    positive(s.horizon, "simulation.horizon", diags);
    positive(s.sample_spacing, "simulation.sample_spacing", diags);
    if s.reference_state >= env_states {
        diags.push(Diagnostic::new(
            "invalid-parameter",
            "simulation.reference_state",
            format!("state index {} out of range for {env_states} states", s.reference_state),
        ));
    }
}

fn build_model(doc: &ModelDoc) -> Result<Model> {
    let mut diags = Vec::new();
    let env = build_environment(&doc.environment, &mut diags);
    let states: Vec<_> = doc
        .states
        .iter()
        .enumerate()
        .filter_map(|(i, s)| build_state(s, &format!("states[{i}]"), &mut diags))
        .collect();
    check_settings(doc, doc.environment.kernel.len(), &mut diags);
    if !diags.is_empty() {
        return Err(Error::Invalid(diags));
    }
    let model = collect(&mut diags, "", Model::new(env.expect("checked"), states));
    match model {
        Some(m) if diags.is_empty() => Ok(m),
        _ => Err(Error::Invalid(diags)),
    }
}

pub const CANONICAL_NAMES: [&str; 5] = ["mg1inf-poisson", "mmpp2", "marked2", "env2-cat", "poisson-product"];

/// Source text of a canonical model.
pub fn canonical_text(name: &str) -> Result<&'static str> {
    Ok(match name {
        "mg1inf-poisson" => include_str!("../models/mg1inf-poisson.json"),
        "mmpp2" => include_str!("../models/mmpp2.json"),
        "marked2" => include_str!("../models/marked2.json"),
        "env2-cat" => include_str!("../models/env2-cat.json"),
        "poisson-product" => include_str!("../models/poisson-product.json"),
        other => {
            return Err(Error::Lookup(format!(
                "no canonical model named '{other}' (known: {})",
                CANONICAL_NAMES.join(", ")
            )))
        }
    })
}

pub fn canonical_model(name: &str) -> Result<ModelSpec> {
    parse_model(canonical_text(name)?)
}

pub fn canonical_test_models() -> Vec<(&'static str, ModelSpec)> {
    CANONICAL_NAMES
        .iter()
        .map(|&n| (n, canonical_model(n).expect("canonical models are valid")))
        .collect()
}

/// One document of the invalid-model corpus with the single diagnostic it
/// must produce.
#[derive(Debug, Clone, Copy)]
pub struct InvalidCase {
    pub name: &'static str,
    pub text: &'static str,
    pub code: &'static str,
    pub path: &'static str,
}

macro_rules! invalid {
    ($name:literal, $code:literal, $path:literal) => {
        InvalidCase {
            name: $name,
            text: include_str!(concat!("../models/invalid/", $name, ".json")),
            code: $code,
            path: $path,
        }
    };
}

pub fn invalid_corpus() -> Vec<InvalidCase> {
    vec![
        invalid!("01-syntax", "syntax", ""),
        invalid!("02-version", "version-mismatch", "version"),
        invalid!("03-unknown-key", "unknown-key", "states[0].colour"),
        invalid!("04-missing-states", "missing-field", ""),
        invalid!("05-type-error", "type-error", "states[0].service[0].params[0]"),
        invalid!("06-negative-rate", "invalid-parameter", "states[0].service[0].params"),
        invalid!("07-unknown-family", "unknown-family", "states[0].service[0].family"),
        invalid!("08-param-count", "param-count", "states[0].service[0].params"),
        invalid!("09-kernel-row-sum", "kernel-row-sum", "environment.kernel[1]"),
        invalid!("10-weight-range", "weight-range", "environment.kernel[0][1].weight"),
        invalid!("11-initial-sum", "initial-sum", "environment.initial"),
        invalid!("12-kernel-dimension", "dimension", "environment.kernel[1]"),
        invalid!("13-reducible-environment", "environment-reducible", "environment.kernel"),
        invalid!("14-map-diagonal", "map-diagonal", "states[0].map.d0[0][0]"),
        invalid!("15-map-row-sum", "map-row-sum", "states[0].map.components[0].d0[1]"),
        invalid!("16-map-negative", "map-negative", "states[0].map.marks[1][0][1]"),
        invalid!("17-type-count", "type-count", "states[0].service"),
        invalid!("18-resource-dimension", "resource-dimension", "states[0].departure_resources[0]"),
        invalid!("19-grid-step", "invalid-parameter", "analysis.grid_step"),
        invalid!("20-map-form", "map-form", "states[0].map"),
    ]
}
