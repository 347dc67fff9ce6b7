//! JSON scenario files.
//!
//! ```json
//! {
//!   "version": 1,
//!   "name": "demo",
//!   "horizon": 300,
//!   "delta": 0.1,
//!   "budget": { "k_total": 5, "k_pred": 2 },
//!   "policy": "adaptive",
//!   "model": {
//!     "a_sampling": { "dist": "uniform", "low": -1, "high": 1, "dim": 4, "target_norm": 1.2 },
//!     "noise": { "cov": [[0.04, 0, 0, 0], [0, 0.04, 0, 0], [0, 0, 0.04, 0], [0, 0, 0, 0.04]] }
//!   },
//!   "replicate_model": 20,
//!   "events": [{ "step": 100, "agents": [20], "noise": { "cov": [[6.25, 0, 0, 0], [0, 6.25, 0, 0], [0, 0, 6.25, 0], [0, 0, 0, 6.25]] } }]
//! }
//! ```

use serde::{Deserialize, Serialize};

use crate::bounds::NoiseIndexing;
use crate::dynamics::{Matrix, Sinusoid, Vector};
use crate::error::{Error, Result};
use crate::scenario::{ASampling, AgentSpec, BudgetCheck, Dynamics, NoiseSpec, Policy, ScenarioConfig, ScenarioEvent};
use crate::scheduling::SlotBudget;

pub const FORMAT_VERSION: u32 = 1;

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    version: u32,
    #[serde(default)]
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_agents: Option<usize>,
    horizon: usize,
    delta: f64,
    budget: BudgetFile,
    #[serde(default = "default_policy")]
    policy: Policy,
    #[serde(default)]
    seed: u64,
    #[serde(default = "one")]
    replicates: usize,
    #[serde(default)]
    noise_indexing: NoiseIndexing,
    #[serde(default)]
    reidentification_lag: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    models: Option<Vec<ModelFile>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model: Option<ModelFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    replicate_model: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    events: Vec<EventFile>,
}

fn default_policy() -> Policy {
    Policy::Adaptive
}

fn one() -> usize {
    1
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BudgetFile {
    k_total: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k_per: Option<usize>,
    k_pred: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    a_matrix: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    a_sampling: Option<SamplingFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    estimator_a: Option<Rows>,
    noise: NoiseFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial_error: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SamplingFile {
    dist: String,
    low: f64,
    high: f64,
    /// Defaults to the size of the noise covariance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target_norm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseFile {
    cov: Rows,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sine: Option<SineFile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SineFile {
    amplitude: Vec<f64>,
    omega: f64,
    #[serde(default)]
    phase: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventFile {
    step: usize,
    agents: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    noise: Option<NoiseFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    a_matrix: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    estimator_a: Option<Rows>,
}

/// Parses and validates a scenario. Errors carry the line and column of the
/// offending value and, for semantic errors, its field path.
pub fn parse_scenario(bytes: &[u8]) -> Result<ScenarioConfig> {
    let file: ScenarioFile = serde_json::from_slice(bytes).map_err(|e| Error::Parse { line: e.line(), column: e.column(), message: e.to_string() })?;
    let config = file.into_config().and_then(|c| c.validate(BudgetCheck::Strict).map(|()| c));
    config.map_err(|e| match e {
        Error::InvalidConfig { field, message } => {
            let (line, column) = locate(bytes, &field);
            Error::Parse { line, column, message: format!("`{field}`: {message}") }
        }
        other => other,
    })
}

/// Serializes `config` so that [`parse_scenario`] gives it back. Homogeneous
/// ensembles use the `model` + `replicate_model` shorthand.
pub fn emit_scenario(config: &ScenarioConfig) -> Result<String> {
    let models: Vec<ModelFile> = config.agents.iter().map(ModelFile::from_spec).collect();
    let homogeneous = models.len() > 1 && models.windows(2).all(|w| w[0] == w[1]);
    let (models, model, replicate_model) = if homogeneous {
        (None, Some(models[0].clone()), Some(models.len()))
    } else {
        (Some(models), None, None)
    };
    let file = ScenarioFile {
        version: FORMAT_VERSION,
        name: config.name.clone(),
        n_agents: Some(config.n_agents),
        horizon: config.horizon,
        delta: config.delta,
        budget: BudgetFile { k_total: config.budget.k_total, k_per: Some(config.budget.k_per), k_pred: config.budget.k_pred },
        policy: config.policy,
        seed: config.seed,
        replicates: config.replicates,
        noise_indexing: config.noise_indexing,
        reidentification_lag: config.reidentification_lag,
        models,
        model,
        replicate_model,
        events: config.events.iter().map(EventFile::from_event).collect(),
    };
    let mut out = serde_json::to_string_pretty(&file).map_err(|e| Error::config("scenario", e.to_string()))?;
    out.push('\n');
    Ok(out)
}

impl ScenarioFile {
    fn into_config(self) -> Result<ScenarioConfig> {
        if self.version != FORMAT_VERSION {
            return Err(Error::config("version", format!("unsupported version {}, expected {FORMAT_VERSION}", self.version)));
        }
        let models = match (self.models, self.model, self.replicate_model) {
            (Some(models), None, None) => models,
            (None, Some(model), Some(n)) => vec![model; n],
            (None, Some(_), None) => return Err(Error::config("replicate_model", "required with `model`")),
            (Some(_), Some(_), _) => return Err(Error::config("model", "give either `models` or `model`, not both")),
            (Some(_), None, Some(_)) => return Err(Error::config("replicate_model", "only allowed with `model`")),
            (None, None, _) => return Err(Error::config("models", "no agent models")),
        };
        let n_agents = self.n_agents.unwrap_or(models.len());
        if n_agents != models.len() {
            return Err(Error::config("n_agents", format!("{n_agents} agents but {} models", models.len())));
        }
        let agents = models
            .into_iter()
            .enumerate()
            .map(|(i, m)| m.into_spec(&format!("models[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        let events = self
            .events
            .into_iter()
            .enumerate()
            .map(|(e, ev)| ev.into_event(&format!("events[{e}]")))
            .collect::<Result<Vec<_>>>()?;
        let budget = SlotBudget { k_total: self.budget.k_total, k_per: self.budget.k_per.unwrap_or(self.budget.k_total), k_pred: self.budget.k_pred };
        Ok(ScenarioConfig {
            name: self.name,
            n_agents,
            horizon: self.horizon,
            delta: self.delta,
            budget,
            policy: self.policy,
            agents,
            events,
            seed: self.seed,
            replicates: self.replicates,
            noise_indexing: self.noise_indexing,
            reidentification_lag: self.reidentification_lag,
        })
    }
}

impl ModelFile {
    fn into_spec(self, path: &str) -> Result<AgentSpec> {
        let dynamics = match (self.a_matrix, self.a_sampling) {
            (Some(rows), None) => Dynamics::Fixed(matrix(&rows, &format!("{path}.a_matrix"))?),
            (None, Some(s)) => {
                if s.dist != "uniform" {
                    return Err(Error::config(format!("{path}.a_sampling.dist"), format!("unsupported distribution `{}`", s.dist)));
                }
                let dim = s.dim.unwrap_or(self.noise.cov.len());
                Dynamics::Sampled(ASampling { dim, low: s.low, high: s.high, target_norm: s.target_norm })
            }
            _ => return Err(Error::config(path, "exactly one of `a_matrix` and `a_sampling` is required")),
        };
        Ok(AgentSpec {
            dynamics,
            estimator_a: self.estimator_a.map(|r| matrix(&r, &format!("{path}.estimator_a"))).transpose()?,
            noise: self.noise.into_spec(&format!("{path}.noise"))?,
            x0: self.x0.map(Vector::from_vec),
            initial_error: self.initial_error.map(Vector::from_vec),
            delta: self.delta,
        })
    }

    fn from_spec(spec: &AgentSpec) -> Self {
        let (a_matrix, a_sampling) = match &spec.dynamics {
            Dynamics::Fixed(a) => (Some(rows(a)), None),
            Dynamics::Sampled(s) => (
                None,
                Some(SamplingFile { dist: "uniform".into(), low: s.low, high: s.high, dim: Some(s.dim), target_norm: s.target_norm }),
            ),
        };
        ModelFile {
            a_matrix,
            a_sampling,
            estimator_a: spec.estimator_a.as_ref().map(rows),
            noise: NoiseFile::from_spec(&spec.noise),
            x0: spec.x0.as_ref().map(|v| v.iter().copied().collect()),
            initial_error: spec.initial_error.as_ref().map(|v| v.iter().copied().collect()),
            delta: spec.delta,
        }
    }
}

impl NoiseFile {
    fn into_spec(self, path: &str) -> Result<NoiseSpec> {
        Ok(NoiseSpec {
            cov: matrix(&self.cov, &format!("{path}.cov"))?,
            mean: self.mean.map(Vector::from_vec),
            sine: self.sine.map(|s| Sinusoid { amplitude: Vector::from_vec(s.amplitude), omega: s.omega, phase: s.phase }),
        })
    }

    fn from_spec(spec: &NoiseSpec) -> Self {
        NoiseFile {
            cov: rows(&spec.cov),
            mean: spec.mean.as_ref().map(|v| v.iter().copied().collect()),
            sine: spec.sine.as_ref().map(|s| SineFile { amplitude: s.amplitude.iter().copied().collect(), omega: s.omega, phase: s.phase }),
        }
    }
}

impl EventFile {
    fn into_event(self, path: &str) -> Result<ScenarioEvent> {
        Ok(ScenarioEvent {
            step: self.step,
            agents: self.agents,
            noise: self.noise.map(|n| n.into_spec(&format!("{path}.noise"))).transpose()?,
            a_matrix: self.a_matrix.map(|r| matrix(&r, &format!("{path}.a_matrix"))).transpose()?,
            estimator_a: self.estimator_a.map(|r| matrix(&r, &format!("{path}.estimator_a"))).transpose()?,
        })
    }

    fn from_event(event: &ScenarioEvent) -> Self {
        EventFile {
            step: event.step,
            agents: event.agents.clone(),
            noise: event.noise.as_ref().map(NoiseFile::from_spec),
            a_matrix: event.a_matrix.as_ref().map(rows),
            estimator_a: event.estimator_a.as_ref().map(rows),
        }
    }
}

fn matrix(rows: &Rows, path: &str) -> Result<Matrix> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if let Some(i) = rows.iter().position(|r| r.len() != m) {
        return Err(Error::config(format!("{path}[{i}]"), format!("row has {} entries, expected {m}", rows[i].len())));
    }
    Ok(Matrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn rows(m: &Matrix) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Line and column (1-based) of the value at `path` (e.g. `models[3].noise.cov`).
/// Paths that do not resolve fall back to the deepest prefix found, then to
/// the document start.
fn locate(bytes: &[u8], path: &str) -> (usize, usize) {
    let mut scanner = Scanner { src: bytes, pos: 0 };
    let mut offset = 0;
    scanner.skip_ws();
    let mut segments = split_path(path);
    // `models[i]` in a `model` + `replicate_model` file points at `model`.
    if segments.len() >= 2 && segments[0] == Segment::Key("models") && !has_key(bytes, "models") {
        segments.splice(0..2, [Segment::Key("model")]);
    }
    for seg in segments {
        let found = match seg {
            Segment::Key(k) => scanner.find_key(k),
            Segment::Index(i) => scanner.find_index(i),
        };
        match found {
            Some(pos) => offset = pos,
            None => break,
        }
    }
    line_col(bytes, offset)
}

fn has_key(bytes: &[u8], key: &str) -> bool {
    let mut scanner = Scanner { src: bytes, pos: 0 };
    scanner.skip_ws();
    scanner.find_key(key).is_some()
}

#[derive(Debug, PartialEq)]
enum Segment<'a> {
    Key(&'a str),
    Index(usize),
}

fn split_path(path: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    for part in path.split('.') {
        let (key, rest) = part.split_once('[').map_or((part, ""), |(k, r)| (k, r));
        if !key.is_empty() {
            out.push(Segment::Key(key));
        }
        for idx in rest.split('[') {
            if let Ok(i) = idx.trim_end_matches(']').parse() {
                out.push(Segment::Index(i));
            }
        }
    }
    out
}

fn line_col(bytes: &[u8], offset: usize) -> (usize, usize) {
    let before = &bytes[..offset.min(bytes.len())];
    let line = before.iter().filter(|&&b| b == b'\n').count() + 1;
    let column = offset - before.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1) + 1;
    (line, column)
}

/// Minimal JSON walker over an already well-formed document.
struct Scanner<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Scanner<'_> {
    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\n' | b'\r' | b'\t')) {
            self.pos += 1;
        }
    }

    fn string(&mut self) -> &[u8] {
        self.pos += 1;
        let start = self.pos;
        while let Some(b) = self.peek() {
            match b {
                b'\\' => self.pos += 2,
                b'"' => break,
                _ => self.pos += 1,
            }
        }
        let s = &self.src[start..self.pos.min(self.src.len())];
        self.pos += 1;
        s
    }

    fn skip_value(&mut self) {
        self.skip_ws();
        match self.peek() {
            Some(b'"') => {
                self.string();
            }
            Some(open @ (b'{' | b'[')) => {
                let close = if open == b'{' { b'}' } else { b']' };
                self.pos += 1;
                loop {
                    self.skip_ws();
                    match self.peek() {
                        None => return,
                        Some(b) if b == close => {
                            self.pos += 1;
                            return;
                        }
                        Some(b',' | b':') => self.pos += 1,
                        Some(_) => self.skip_value(),
                    }
                }
            }
            Some(_) => {
                while !matches!(self.peek(), None | Some(b',' | b'}' | b']' | b' ' | b'\n' | b'\r' | b'\t')) {
                    self.pos += 1;
                }
            }
            None => {}
        }
    }

    /// With the cursor on an object, moves to the value of `key`.
    fn find_key(&mut self, key: &str) -> Option<usize> {
        if self.peek() != Some(b'{') {
            return None;
        }
        self.pos += 1;
        loop {
            self.skip_ws();
            match self.peek()? {
                b'}' => return None,
                b',' => self.pos += 1,
                b'"' => {
                    let name_pos = self.pos;
                    let matches = self.string() == key.as_bytes();
                    self.skip_ws();
                    self.pos += 1;
                    self.skip_ws();
                    if matches {
                        return Some(name_pos);
                    }
                    self.skip_value();
                }
                _ => return None,
            }
        }
    }

    /// With the cursor on an array, moves to element `index`.
    fn find_index(&mut self, index: usize) -> Option<usize> {
        if self.peek() != Some(b'[') {
            return None;
        }
        self.pos += 1;
        for _ in 0..index {
            self.skip_ws();
            if self.peek()? == b']' {
                return None;
            }
            self.skip_value();
            self.skip_ws();
            if self.peek()? != b',' {
                return None;
            }
            self.pos += 1;
        }
        self.skip_ws();
        if self.peek()? == b']' {
            return None;
        }
        Some(self.pos)
    }
}
