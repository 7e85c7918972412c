//! Scenario files: parsing, overrides, validation and the canonical echo.
//!
//! A scenario is written in TOML or JSON (chosen by file extension). Matrix
//! sequences accept a single matrix (used at every step) or one matrix per
//! step; vector sequences likewise. Resolution produces a [`ScenarioConfig`]
//! with explicit agents and canonical cost weights, and
//! [`ScenarioConfig::to_file`] turns it back into a document that re-parses
//! to an identical config.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::attacks::{AttackKind, AttackSpec, DEFAULT_EPSILON_ISOLATE};
use crate::error::{Diagnostic, Error, Result};
use crate::gauge::Decomposition;
use crate::rhc::{build_bounds, BoundRegime, DeepStateAnchor};
use crate::team::{
    mu, reformulate_weighted_tracking, AgentProfile, BoxBounds, CostWeights, Population, SystemModel,
    CENTER_OF_MASS_TOL, UNBOUNDED_SENTINEL,
};
use crate::{Matrix, Vector};

/// One matrix for every step, or one per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSeq {
    One(Vec<Vec<f64>>),
    Many(Vec<Vec<Vec<f64>>>),
}

/// One vector for every step, or one per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorSeq {
    One(Vec<f64>),
    Many(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub a: MatrixSeq,
    pub b: MatrixSeq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostForm {
    /// `(1/n)Σγ_i(‖x_i − r_i‖_Q + ‖u_i‖_R) + ‖x̄ − s‖_Q̄ + ‖ū‖_R̄`
    #[default]
    Canonical,
    /// `(1/n)Σα_i(‖x_i − F x̄‖_Q + ‖u_i‖_R) + ‖x̄ − s‖_Q̄ + ‖ū‖_R̄` for a
    /// center of mass; rewritten into the canonical form with `γ_i = α_i`.
    WeightedTracking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    #[serde(default)]
    pub form: CostForm,
    pub q: MatrixSeq,
    pub r: MatrixSeq,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qbar: Option<MatrixSeq>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rbar: Option<MatrixSeq>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<VectorSeq>,
    /// Tracking gain `F` of the weighted-tracking form.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<MatrixSeq>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<VectorSeq>,
    pub initial_state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarDist {
    Constant { value: f64 },
    Uniform { low: f64, high: f64 },
}

impl Default for ScalarDist {
    fn default() -> Self {
        ScalarDist::Constant { value: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GammaRule {
    Constant { value: f64 },
    /// `γ_i = α_i`, taken after any attack.
    EqualToAlpha,
}

impl Default for GammaRule {
    fn default() -> Self {
        GammaRule::Constant { value: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateDist {
    Constant { value: Vec<f64> },
    Uniform { low: Vec<f64>, high: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub n: usize,
    #[serde(default)]
    pub alpha: ScalarDist,
    #[serde(default)]
    pub gamma: GammaRule,
    pub initial_state: StateDist,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<VectorSeq>,
    /// Defaults to the scenario seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agents: Option<Vec<AgentSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<GeneratorSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSpec {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub abar: Vec<f64>,
    pub bbar: Vec<f64>,
    pub cbar: Vec<f64>,
    pub dbar: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackFileSpec {
    pub kind: AttackKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub z: Vec<f64>,
    /// 1-based indices of attacked agents; an alternative to `z`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attacked: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_isolate: Option<f64>,
    /// Set in resolved echoes: factors already include the attack.
    #[serde(default)]
    pub applied: bool,
    /// 1-based attacked agent recorded in resolved echoes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attacked_agent: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub stddev: Vec<f64>,
    /// Defaults to the scenario seed plus one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_lambda() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerConfig {
    Lqr {
        #[serde(default)]
        decomposition: Decomposition,
    },
    Rhc {
        horizon: usize,
        #[serde(default = "default_lambda")]
        lambda: f64,
        #[serde(default)]
        regime: BoundRegime,
        #[serde(default)]
        anchor: DeepStateAnchor,
    },
}

/// The document as written by a user (or by [`ScenarioConfig::to_file`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
    pub model: ModelSpec,
    pub cost: CostSpec,
    pub population: PopulationSpec,
    pub controller: ControllerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackFileSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    /// Point used for the final tracking-error metric; defaults to `s_T`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackRecord {
    pub spec: AttackSpec,
    /// 0-based index of the single attacked agent, if any.
    pub attacked: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    pub stddev: Vector,
    pub seed: u64,
}

/// A fully resolved and validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: Option<String>,
    pub seed: u64,
    pub model: SystemModel,
    pub weights: CostWeights,
    /// Agents after any attack.
    pub population: Population,
    pub controller: ControllerConfig,
    pub bounds: Option<BoxBounds>,
    pub attack: Option<AttackRecord>,
    pub noise: Option<NoiseConfig>,
    pub target: Vector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Toml,
    Json,
}

impl Format {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("toml") => Some(Format::Toml),
            Some("json") => Some(Format::Json),
            _ => None,
        }
    }
}

fn parse_value(text: &str, format: Format) -> Result<Value> {
    match format {
        Format::Toml => toml::from_str::<Value>(text).map_err(|e| Error::Parse(e.to_string())),
        Format::Json => serde_json::from_str::<Value>(text).map_err(|e| Error::Parse(e.to_string())),
    }
}

/// Typed parse of the raw text, for error messages with positions.
fn parse_typed(text: &str, format: Format) -> Result<ScenarioFile> {
    match format {
        Format::Toml => toml::from_str::<ScenarioFile>(text).map_err(|e| Error::Parse(e.to_string())),
        Format::Json => serde_json::from_str::<ScenarioFile>(text).map_err(|e| Error::Parse(e.to_string())),
    }
}

/// Sets `key` (dotted path, numeric segments index arrays) to `raw`, read
/// as JSON when possible and as a string otherwise.
pub fn apply_override(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let segments: Vec<&str> = key.split('.').collect();
    if key.is_empty() || segments.iter().any(|s| s.is_empty()) {
        return Err(Error::InvalidInput(format!("bad override key '{key}'")));
    }
    let mut node = root;
    for (depth, seg) in segments.iter().enumerate() {
        let last = depth + 1 == segments.len();
        node = match node {
            Value::Array(items) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("override '{key}': '{seg}' is not an array index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| Error::InvalidInput(format!("override '{key}': index {idx} out of range (len {len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            Value::Object(map) => {
                if last {
                    map.insert(seg.to_string(), value);
                    return Ok(());
                }
                map.entry(seg.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Null => {
                *node = Value::Object(Default::default());
                let Value::Object(map) = node else { unreachable!() };
                if last {
                    map.insert(seg.to_string(), value);
                    return Ok(());
                }
                map.entry(seg.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            _ => {
                return Err(Error::InvalidInput(format!("override '{key}': '{seg}' is inside a non-table value")));
            }
        };
    }
    Ok(())
}

/// `key=value`
pub fn parse_assignment(text: &str) -> Result<(String, String)> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| Error::InvalidInput(format!("expected key=value, got '{text}'")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Parses a scenario document, applies overrides and seed, and returns the
/// typed file.
pub fn load_file(text: &str, format: Format, overrides: &[(String, String)], seed: Option<u64>) -> Result<ScenarioFile> {
    let mut value = parse_value(text, format)?;
    if overrides.is_empty() && seed.is_none() {
        return parse_typed(text, format);
    }
    // surface positional errors of the raw document first
    parse_typed(text, format)?;
    for (k, v) in overrides {
        apply_override(&mut value, k, v)?;
    }
    if let Some(seed) = seed {
        apply_override(&mut value, "seed", &seed.to_string())?;
        if let Some(Value::Object(g)) = value.pointer_mut("/population/generate") {
            g.remove("seed");
        }
        if let Some(Value::Object(n)) = value.pointer_mut("/noise") {
            n.remove("seed");
        }
    }
    serde_json::from_value(value).map_err(|e| Error::Parse(format!("after overrides: {e}")))
}

/// `(alpha, gamma, references, initial state)` before validation.
type RawAgent = (f64, Option<f64>, Vec<Vector>, Vector);

struct Ctx {
    diags: Vec<Diagnostic>,
}

impl Ctx {
    fn push(&mut self, path: impl Into<String>, rule: impl Into<String>) {
        self.diags.push(Diagnostic::new(path, rule));
    }

    fn finish(self) -> Result<()> {
        if self.diags.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(self.diags))
        }
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], path: &str, ctx: &mut Ctx) -> Option<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        ctx.push(path, "matrix must be non-empty");
        return None;
    }
    if rows.iter().any(|row| row.len() != c) {
        ctx.push(path, "matrix rows must have equal length");
        return None;
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        ctx.push(path, "matrix entries must be finite");
        return None;
    }
    Some(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn matrices(seq: &MatrixSeq, horizon: usize, shape: (usize, usize), path: &str, ctx: &mut Ctx) -> Option<Vec<Matrix>> {
    let list: Vec<(String, &Vec<Vec<f64>>)> = match seq {
        MatrixSeq::One(m) => vec![(path.to_string(), m)],
        MatrixSeq::Many(ms) => {
            if ms.len() != horizon {
                ctx.push(path, format!("expected 1 or {horizon} matrices, found {}", ms.len()));
                return None;
            }
            ms.iter().enumerate().map(|(k, m)| (format!("{path}[{k}]"), m)).collect()
        }
    };
    let mut out = Vec::with_capacity(list.len());
    for (p, rows) in list {
        let m = matrix_from_rows(rows, &p, ctx)?;
        if m.shape() != shape {
            ctx.push(p, format!("expected {}x{} matrix, found {}x{}", shape.0, shape.1, m.nrows(), m.ncols()));
            return None;
        }
        out.push(m);
    }
    if out.len() == 1 {
        out = vec![out[0].clone(); horizon];
    }
    Some(out)
}

fn vector(v: &[f64], dim: usize, path: &str, ctx: &mut Ctx) -> Option<Vector> {
    if v.len() != dim {
        ctx.push(path, format!("expected {dim} entries, found {}", v.len()));
        return None;
    }
    if v.iter().any(|x| x.is_nan()) {
        ctx.push(path, "entries must be numbers");
        return None;
    }
    Some(Vector::from_row_slice(v))
}

fn vectors(seq: &VectorSeq, horizon: usize, dim: usize, path: &str, ctx: &mut Ctx) -> Option<Vec<Vector>> {
    match seq {
        VectorSeq::One(v) => Some(vec![vector(v, dim, path, ctx)?; horizon]),
        VectorSeq::Many(vs) => {
            if vs.len() != horizon {
                ctx.push(path, format!("expected 1 or {horizon} vectors, found {}", vs.len()));
                return None;
            }
            vs.iter().enumerate().map(|(k, v)| vector(v, dim, &format!("{path}[{k}]"), ctx)).collect()
        }
    }
}

fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn compact_matrices(seq: &[Matrix]) -> MatrixSeq {
    if seq.iter().all(|m| m == &seq[0]) {
        MatrixSeq::One(matrix_rows(&seq[0]))
    } else {
        MatrixSeq::Many(seq.iter().map(matrix_rows).collect())
    }
}

fn compact_vectors(seq: &[Vector]) -> VectorSeq {
    if seq.iter().all(|v| v == &seq[0]) {
        VectorSeq::One(seq[0].iter().copied().collect())
    } else {
        VectorSeq::Many(seq.iter().map(|v| v.iter().copied().collect()).collect())
    }
}

fn echo_bound(v: &Vector) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            if x == f64::INFINITY {
                UNBOUNDED_SENTINEL
            } else if x == f64::NEG_INFINITY {
                -UNBOUNDED_SENTINEL
            } else {
                x
            }
        })
        .collect()
}

fn generate_agents(spec: &GeneratorSpec, seed: u64, horizon: usize, dx: usize, ctx: &mut Ctx) -> Option<Vec<(f64, Vec<Vector>, Vector)>> {
    if spec.n == 0 {
        ctx.push("population.generate.n", "must be at least 1");
        return None;
    }
    let reference = match &spec.reference {
        Some(r) => vectors(r, horizon, dx, "population.generate.reference", ctx)?,
        None => vec![Vector::zeros(dx); horizon],
    };
    if let ScalarDist::Uniform { low, high } = spec.alpha {
        if !(low <= high) {
            ctx.push("population.generate.alpha", "uniform range needs low <= high");
            return None;
        }
    }
    match &spec.initial_state {
        StateDist::Constant { value } => {
            vector(value, dx, "population.generate.initial_state.value", ctx)?;
        }
        StateDist::Uniform { low, high } => {
            let lo = vector(low, dx, "population.generate.initial_state.low", ctx)?;
            let hi = vector(high, dx, "population.generate.initial_state.high", ctx)?;
            if lo.iter().zip(hi.iter()).any(|(l, h)| !(l <= h)) {
                ctx.push("population.generate.initial_state", "uniform range needs low <= high");
                return None;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.unwrap_or(seed));
    let mut draw = |lo: f64, hi: f64| if lo == hi { lo } else { rng.random_range(lo..hi) };
    let mut out = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let alpha = match spec.alpha {
            ScalarDist::Constant { value } => value,
            ScalarDist::Uniform { low, high } => draw(low, high),
        };
        let x0 = match &spec.initial_state {
            StateDist::Constant { value } => Vector::from_row_slice(value),
            StateDist::Uniform { low, high } => Vector::from_fn(dx, |i, _| draw(low[i], high[i])),
        };
        out.push((alpha, reference.clone(), x0));
    }
    Some(out)
}

fn resolve_attack(spec: &AttackFileSpec, n: usize, ctx: &mut Ctx) -> Option<AttackSpec> {
    if !spec.z.is_empty() && !spec.attacked.is_empty() {
        ctx.push("attack", "give either z or attacked, not both");
        return None;
    }
    let mut z = spec.z.clone();
    if !spec.attacked.is_empty() {
        let (hit, miss) = match spec.kind {
            AttackKind::DenialOfService => (0.0, 1.0),
            _ => (1.0, 0.0),
        };
        z = vec![miss; n];
        for &i in &spec.attacked {
            if i == 0 || i > n {
                ctx.push("attack.attacked", format!("agent index {i} outside 1..={n}"));
                return None;
            }
            z[i - 1] = hit;
        }
    }
    if spec.kind != AttackKind::LeaderAttack && z.len() != n {
        ctx.push("attack.z", format!("expected {n} entries, found {}", z.len()));
        return None;
    }
    if spec.kind == AttackKind::LeaderAttack && !z.is_empty() {
        ctx.push("attack.z", "leader attack picks its target itself");
        return None;
    }
    Some(AttackSpec {
        kind: spec.kind,
        z,
        rho: spec.rho,
        epsilon_isolate: spec.epsilon_isolate.unwrap_or(DEFAULT_EPSILON_ISOLATE),
    })
}

impl ScenarioConfig {
    pub fn from_path(path: &Path, overrides: &[(String, String)], seed: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let format = Format::from_path(path).unwrap_or(if text.trim_start().starts_with('{') { Format::Json } else { Format::Toml });
        Self::from_str_with(&text, format, overrides, seed)
    }

    pub fn from_str_with(text: &str, format: Format, overrides: &[(String, String)], seed: Option<u64>) -> Result<Self> {
        Self::resolve(&load_file(text, format, overrides, seed)?)
    }

    /// Validates a file and resolves it into a config, collecting as many
    /// diagnostics as possible before giving up.
    pub fn resolve(file: &ScenarioFile) -> Result<Self> {
        let mut ctx = Ctx { diags: Vec::new() };
        let horizon = file.horizon;
        if horizon == 0 {
            ctx.push("horizon", "must be at least 1");
            return Err(Error::Validation(ctx.diags));
        }
        let first = |s: &MatrixSeq| match s {
            MatrixSeq::One(m) => m.clone(),
            MatrixSeq::Many(ms) => ms.first().cloned().unwrap_or_default(),
        };
        let dx = first(&file.model.a).len();
        let du = first(&file.model.b).first().map_or(0, Vec::len);
        if dx == 0 || du == 0 {
            ctx.push("model", "state and action dimensions must be positive");
            return Err(Error::Validation(ctx.diags));
        }
        let a = matrices(&file.model.a, horizon, (dx, dx), "model.a", &mut ctx);
        let b = matrices(&file.model.b, horizon, (dx, du), "model.b", &mut ctx);
        let model = match (a, b) {
            (Some(a), Some(b)) => SystemModel::new(a, b).map_err(|e| ctx.push("model", e.to_string())).ok(),
            _ => None,
        };

        // population
        let pop_spec = &file.population;
        let mut gamma_follows_alpha = false;
        let raw_agents: Option<Vec<RawAgent>> = match (&pop_spec.agents, &pop_spec.generate) {
            (Some(_), Some(_)) => {
                ctx.push("population", "give either agents or generate, not both");
                None
            }
            (None, None) => {
                ctx.push("population", "needs agents or generate");
                None
            }
            (Some(agents), None) => {
                if agents.is_empty() {
                    ctx.push("population.agents", "needs at least one agent");
                }
                let mut out = Vec::new();
                let mut ok = true;
                for (i, ag) in agents.iter().enumerate() {
                    let p = format!("population.agents[{i}]");
                    let reference = match &ag.reference {
                        Some(r) => vectors(r, horizon, dx, &format!("{p}.reference"), &mut ctx),
                        None => Some(vec![Vector::zeros(dx); horizon]),
                    };
                    let x0 = vector(&ag.initial_state, dx, &format!("{p}.initial_state"), &mut ctx);
                    if !ag.alpha.is_finite() {
                        ctx.push(format!("{p}.alpha"), "must be finite");
                        ok = false;
                    }
                    if let Some(g) = ag.gamma {
                        if !(g > 0.0) || !g.is_finite() {
                            ctx.push(format!("{p}.gamma"), "must be > 0");
                            ok = false;
                        }
                    }
                    match (reference, x0) {
                        (Some(r), Some(x)) => out.push((ag.alpha, ag.gamma, r, x)),
                        _ => ok = false,
                    }
                }
                (ok && !agents.is_empty()).then_some(out)
            }
            (None, Some(g)) => {
                let gamma = match g.gamma {
                    GammaRule::Constant { value } => {
                        if !(value > 0.0) || !value.is_finite() {
                            ctx.push("population.generate.gamma.value", "must be > 0");
                        }
                        Some(value)
                    }
                    GammaRule::EqualToAlpha => {
                        gamma_follows_alpha = true;
                        None
                    }
                };
                generate_agents(g, file.seed, horizon, dx, &mut ctx)
                    .map(|v| v.into_iter().map(|(a, r, x)| (a, gamma, r, x)).collect())
            }
        };
        let n = raw_agents.as_ref().map_or(0, Vec::len);
        let weighted = file.cost.form == CostForm::WeightedTracking;
        if weighted && pop_spec.generate.as_ref().is_some_and(|g| g.gamma != GammaRule::EqualToAlpha) {
            ctx.push("population.generate.gamma", "weighted_tracking cost form needs gamma = equal_to_alpha");
        }

        // attack
        let attack_spec = match (&file.attack, n) {
            (Some(a), n) if n > 0 => resolve_attack(a, n, &mut ctx).map(|s| (s, a.applied, a.attacked_agent)),
            _ => None,
        };

        let mut population = None;
        let mut attack = None;
        if let Some(raw) = raw_agents {
            let agents: Result<Vec<AgentProfile>> = raw
                .iter()
                .map(|(a, g, r, x)| AgentProfile::new(*a, g.unwrap_or(1.0), r.clone(), x.clone()))
                .collect();
            match agents.and_then(Population::new) {
                Err(e) => ctx.push("population", e.to_string()),
                Ok(mut pop) => {
                    if let Some((spec, applied, recorded)) = attack_spec {
                        if applied {
                            attack = Some(AttackRecord { spec, attacked: recorded.map(|i| i - 1) });
                        } else {
                            match spec.apply(&pop) {
                                Ok(outcome) => {
                                    pop = outcome.population;
                                    attack = Some(AttackRecord { spec, attacked: outcome.attacked });
                                }
                                Err(e) => ctx.push("attack", e.to_string()),
                            }
                        }
                    }
                    let explicit_weighted_mismatch = weighted
                        && pop_spec.agents.is_some()
                        && raw.iter().zip(pop.agents()).any(|((_, g, _, _), ag)| g.is_some_and(|g| g != ag.alpha));
                    if explicit_weighted_mismatch {
                        ctx.push("population.agents", "weighted_tracking cost form needs gamma equal to alpha (or omitted)");
                    }
                    let follow = gamma_follows_alpha || (weighted && pop_spec.agents.is_some());
                    if follow {
                        match pop.with_gammas(&pop.alphas()) {
                            Ok(p) => pop = p,
                            Err(e) => ctx.push("population.gamma", format!("gamma = alpha invalid: {e}")),
                        }
                    }
                    population = Some(pop);
                }
            }
        }

        // cost
        let c = &file.cost;
        let q = matrices(&c.q, horizon, (dx, dx), "cost.q", &mut ctx);
        let r = matrices(&c.r, horizon, (du, du), "cost.r", &mut ctx);
        let qbar = match &c.qbar {
            Some(m) => matrices(m, horizon, (dx, dx), "cost.qbar", &mut ctx),
            None => Some(vec![Matrix::zeros(dx, dx); horizon]),
        };
        let rbar = match &c.rbar {
            Some(m) => matrices(m, horizon, (du, du), "cost.rbar", &mut ctx),
            None => Some(vec![Matrix::zeros(du, du); horizon]),
        };
        let s = match &c.s {
            Some(v) => vectors(v, horizon, dx, "cost.s", &mut ctx),
            None => Some(vec![Vector::zeros(dx); horizon]),
        };
        let mut target = s.as_ref().map(|s| s[horizon - 1].clone());
        if c.f.is_some() && !weighted {
            ctx.push("cost.f", "only used by the weighted_tracking form");
        }
        let mut weights = None;
        if let (Some(q), Some(r), Some(qbar), Some(rbar), Some(s)) = (q, r, qbar, rbar, s) {
            let converted = if weighted {
                let f = match &c.f {
                    Some(f) => matrices(f, horizon, (dx, dx), "cost.f", &mut ctx),
                    None => {
                        ctx.push("cost.f", "weighted_tracking form needs the tracking gain f");
                        None
                    }
                };
                if let Some(pop) = &population {
                    if (pop.mean_alpha() - 1.0).abs() > CENTER_OF_MASS_TOL {
                        ctx.push("population", "weighted_tracking cost form needs mean influence factor 1");
                    }
                    if pop.agents().iter().any(|a| a.reference.iter().any(|r| r.amax() != 0.0)) {
                        ctx.push("population", "weighted_tracking cost form has no local references");
                    }
                }
                f.and_then(|f| match weighted_to_canonical(&q, &qbar, &s, &f) {
                    Ok(v) => Some(v),
                    Err(e) => {
                        ctx.push("cost", e.to_string());
                        None
                    }
                })
            } else {
                Some((qbar, s))
            };
            if let Some((qbar, s)) = converted {
                match CostWeights::new(q, r, qbar, rbar, s) {
                    Ok(w) => weights = Some(w),
                    Err(e) => ctx.push("cost", e.to_string()),
                }
            }
        }

        // controller and bounds
        let controller = file.controller;
        let bounds = file.bounds.as_ref().and_then(|bs| {
            let p = "bounds";
            let get = |v: &Vec<f64>, name: &str, dim: usize, ctx: &mut Ctx| vector(v, dim, &format!("{p}.{name}"), ctx);
            let parts = (
                get(&bs.a, "a", dx, &mut ctx),
                get(&bs.b, "b", dx, &mut ctx),
                get(&bs.c, "c", du, &mut ctx),
                get(&bs.d, "d", du, &mut ctx),
                get(&bs.abar, "abar", dx, &mut ctx),
                get(&bs.bbar, "bbar", dx, &mut ctx),
                get(&bs.cbar, "cbar", du, &mut ctx),
                get(&bs.dbar, "dbar", du, &mut ctx),
            );
            match parts {
                (Some(a), Some(b), Some(c), Some(d), Some(ab), Some(bb), Some(cb), Some(db)) => {
                    match BoxBounds::new(a, b, c, d, ab, bb, cb, db) {
                        Ok(bx) => Some(bx),
                        Err(e) => {
                            ctx.push(p, e.to_string());
                            None
                        }
                    }
                }
                _ => None,
            }
        });
        match controller {
            ControllerConfig::Lqr { decomposition } => {
                if file.bounds.is_some() {
                    ctx.push("bounds", "LQR controller is unconstrained; remove bounds or use RHC");
                }
                if let (Some(w), Some(pop)) = (&weights, &population) {
                    if let Ok(m) = mu(pop) {
                        if let Err(e) = w.validate_convexity(decomposition.global_coefficient(m)) {
                            ctx.push("cost", e.to_string());
                        }
                    }
                }
            }
            ControllerConfig::Rhc { horizon: h, lambda, regime, .. } => {
                if h == 0 {
                    ctx.push("controller.horizon", "must be at least 1");
                }
                if !(lambda > 0.0 && lambda < 1.0) {
                    ctx.push("controller.lambda", "must lie in (0, 1)");
                }
                if file.bounds.is_none() {
                    ctx.push("bounds", "RHC requires bounds");
                }
                if let (Some(w), Some(pop)) = (&weights, &population) {
                    if let Ok(m) = mu(pop) {
                        if m > 2.0 {
                            ctx.push("population", format!("RHC needs mu <= 2, got {m}"));
                        } else if let Err(e) = w.validate_convexity(2.0 - m) {
                            ctx.push("cost", e.to_string());
                        }
                    }
                }
                if let (Some(bx), Some(pop)) = (&bounds, &population) {
                    if lambda > 0.0 && lambda < 1.0 {
                        if let Err(e) = build_bounds(bx, pop, lambda, regime) {
                            ctx.push("bounds", e.to_string());
                        }
                    }
                }
            }
        }

        let noise = file.noise.as_ref().and_then(|ns| {
            let sd = vector(&ns.stddev, dx, "noise.stddev", &mut ctx)?;
            if sd.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
                ctx.push("noise.stddev", "entries must be finite and >= 0");
                return None;
            }
            Some(NoiseConfig { stddev: sd, seed: ns.seed.unwrap_or(file.seed.wrapping_add(1)) })
        });
        if let Some(t) = &file.target {
            target = vector(t, dx, "target", &mut ctx);
        }

        ctx.finish()?;
        Ok(ScenarioConfig {
            name: file.name.clone(),
            seed: file.seed,
            model: model.expect("validated"),
            weights: weights.expect("validated"),
            population: population.expect("validated"),
            controller,
            bounds,
            attack,
            noise,
            target: target.expect("validated"),
        })
    }

    /// Canonical document: explicit agents, canonical cost, attack marked
    /// as applied.
    pub fn to_file(&self) -> ScenarioFile {
        let w = &self.weights;
        let agents = self
            .population
            .agents()
            .iter()
            .map(|a| AgentSpec {
                alpha: a.alpha,
                gamma: Some(a.gamma),
                reference: Some(compact_vectors(&a.reference)),
                initial_state: a.initial_state.iter().copied().collect(),
            })
            .collect();
        ScenarioFile {
            name: self.name.clone(),
            horizon: self.model.horizon(),
            seed: self.seed,
            model: ModelSpec { a: compact_matrices(self.model.a_seq()), b: compact_matrices(self.model.b_seq()) },
            cost: CostSpec {
                form: CostForm::Canonical,
                q: compact_matrices(w.q_seq()),
                r: compact_matrices(w.r_seq()),
                qbar: Some(compact_matrices(w.qbar_seq())),
                rbar: Some(compact_matrices(w.rbar_seq())),
                s: Some(compact_vectors(w.global_reference())),
                f: None,
            },
            population: PopulationSpec { agents: Some(agents), generate: None },
            controller: self.controller,
            bounds: self.bounds.as_ref().map(|b| BoundsSpec {
                a: echo_bound(&b.a),
                b: echo_bound(&b.b),
                c: echo_bound(&b.c),
                d: echo_bound(&b.d),
                abar: echo_bound(&b.abar),
                bbar: echo_bound(&b.bbar),
                cbar: echo_bound(&b.cbar),
                dbar: echo_bound(&b.dbar),
            }),
            attack: self.attack.as_ref().map(|a| AttackFileSpec {
                kind: a.spec.kind,
                z: a.spec.z.clone(),
                attacked: Vec::new(),
                rho: a.spec.rho,
                epsilon_isolate: Some(a.spec.epsilon_isolate),
                applied: true,
                attacked_agent: a.attacked.map(|i| i + 1),
            }),
            noise: self.noise.as_ref().map(|n| NoiseSpec { stddev: n.stddev.iter().copied().collect(), seed: Some(n.seed) }),
            target: Some(self.target.iter().copied().collect()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("scenario serializes")
    }
}

/// Rewrites `(1/n)Σα_i‖x_i − F x̄‖_Q + ‖x̄ − s‖_Q̄` (center of mass) as
/// `(1/n)Σα_i‖x_i‖_Q + ‖x̄ − s'‖_{Q̄'}` plus a constant, returning
/// `(Q̄', s')` with `Q̄' = Q̄ + (I−F)ᵀQ(I−F) − Q` and `Q̄' s' = Q̄ s`.
pub fn weighted_to_canonical(
    q: &[Matrix],
    qbar: &[Matrix],
    s: &[Vector],
    f: &[Matrix],
) -> Result<(Vec<Matrix>, Vec<Vector>)> {
    let mut qb = Vec::with_capacity(q.len());
    let mut ss = Vec::with_capacity(q.len());
    for t in 0..q.len() {
        let combined = &qbar[t] + reformulate_weighted_tracking(&q[t], &f[t])?;
        let rhs = &qbar[t] * &s[t];
        let target = if rhs.amax() == 0.0 {
            Vector::zeros(rhs.len())
        } else {
            combined.clone().lu().solve(&rhs).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "combined deep-state weight is singular at t={}; the target cannot be re-expressed",
                    t + 1
                ))
            })?
        };
        qb.push(combined);
        ss.push(target);
    }
    Ok((qb, ss))
}

/// Constant dropped by [`weighted_to_canonical`] at one step:
/// `sᵀQ̄s − s'ᵀQ̄'s'`.
pub fn weighted_offset(qbar: &Matrix, s: &Vector, qbar_c: &Matrix, s_c: &Vector) -> f64 {
    s.dot(&(qbar * s)) - s_c.dot(&(qbar_c * s_c))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
horizon = 3
seed = 5

[model]
a = [[1.0]]
b = [[1.0]]

[cost]
q = [[1.0]]
r = [[1.0]]
qbar = [[1.0]]
s = [0.5]

[population]
agents = [
  { alpha = 1.0, gamma = 1.0, initial_state = [0.1] },
  { alpha = 1.0, initial_state = [-0.2], reference = [[0.0], [0.1], [0.2]] },
]

[controller]
kind = "lqr"
"#;

    #[test]
    fn parses_small_toml() {
        let c = ScenarioConfig::from_str_with(SMALL, Format::Toml, &[], None).unwrap();
        assert_eq!(c.population.n(), 2);
        assert_eq!(c.model.horizon(), 3);
        assert_eq!(c.population.agents()[1].reference[2][0], 0.2);
        assert_eq!(c.target[0], 0.5);
        assert_eq!(c.controller, ControllerConfig::Lqr { decomposition: Decomposition::Orthogonal });
    }

    #[test]
    fn echo_round_trips() {
        let c = ScenarioConfig::from_str_with(SMALL, Format::Toml, &[], None).unwrap();
        let json = c.to_json();
        let back = ScenarioConfig::from_str_with(&json, Format::Json, &[], None).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn zero_r_is_diagnosed() {
        let text = SMALL.replace("r = [[1.0]]", "r = [[0.0]]");
        let err = ScenarioConfig::from_str_with(&text, Format::Toml, &[], None).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("R_t not positive definite at t=1"), "{err}");
    }

    #[test]
    fn rhc_without_bounds_is_diagnosed() {
        let text = SMALL.replace("kind = \"lqr\"", "kind = \"rhc\"\nhorizon = 2");
        let err = ScenarioConfig::from_str_with(&text, Format::Toml, &[], None).unwrap_err();
        assert!(err.to_string().contains("bounds: RHC requires bounds"), "{err}");
    }

    #[test]
    fn parse_error_has_position() {
        let err = ScenarioConfig::from_str_with("horizon = = 3", Format::Toml, &[], None).unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn overrides_apply() {
        let ov = vec![("population.agents.0.alpha".to_string(), "0.5".to_string()), ("name".to_string(), "demo".to_string())];
        let c = ScenarioConfig::from_str_with(SMALL, Format::Toml, &ov, None).unwrap();
        assert_eq!(c.population.agents()[0].alpha, 0.5);
        assert_eq!(c.name.as_deref(), Some("demo"));
        let bad = vec![("population.agents.9.alpha".to_string(), "1".to_string())];
        assert!(ScenarioConfig::from_str_with(SMALL, Format::Toml, &bad, None).is_err());
    }

    #[test]
    fn matrix_sequence_length_checked() {
        let text = SMALL.replace("a = [[1.0]]", "a = [[[1.0]], [[1.0]]]");
        let err = ScenarioConfig::from_str_with(&text, Format::Toml, &[], None).unwrap_err();
        assert!(err.to_string().contains("model.a: expected 1 or 3 matrices"), "{err}");
    }

    #[test]
    fn generator_is_seeded() {
        let text = SMALL.replace(
            "agents = [\n  { alpha = 1.0, gamma = 1.0, initial_state = [0.1] },\n  { alpha = 1.0, initial_state = [-0.2], reference = [[0.0], [0.1], [0.2]] },\n]",
            "generate = { n = 4, initial_state = { kind = \"uniform\", low = [-1.0], high = [1.0] } }",
        );
        let a = ScenarioConfig::from_str_with(&text, Format::Toml, &[], None).unwrap();
        let b = ScenarioConfig::from_str_with(&text, Format::Toml, &[], None).unwrap();
        let c = ScenarioConfig::from_str_with(&text, Format::Toml, &[], Some(6)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.population.n(), 4);
        assert_ne!(a.population.initial_states(), c.population.initial_states());
    }

    #[test]
    fn weighted_conversion_with_identity_gain() {
        let q = vec![Matrix::from_diagonal(&Vector::from_vec(vec![5.0, 50.0]))];
        let qbar = vec![Matrix::identity(2, 2)];
        let s = vec![Vector::from_vec(vec![2.0, 2.0])];
        let (qb, sc) = weighted_to_canonical(&q, &qbar, &s, &[Matrix::identity(2, 2)]).unwrap();
        assert_eq!(qb[0], Matrix::from_diagonal(&Vector::from_vec(vec![-4.0, -49.0])));
        assert!((&qb[0] * &sc[0] - &s[0]).amax() < 1e-15);
    }
}
