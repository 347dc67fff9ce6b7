//! Scenario definitions and their per-replicate realization.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{check_assumption, NoiseIndexing, Scheme};
use crate::dynamics::{spectral_norm, Matrix, NoiseModel, Sinusoid, SystemModel, Vector};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::scheduling::SlotBudget;

/// Cap on how often a sampled state matrix is redrawn before giving up.
pub const MAX_RESAMPLES: usize = 10_000;

/// Scheduling policy of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Periodic,
    Predictive,
    Adaptive,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Periodic, Policy::Predictive, Policy::Adaptive];

    pub fn fixed_scheme(self) -> Option<Scheme> {
        match self {
            Policy::Periodic => Some(Scheme::Periodic),
            Policy::Predictive => Some(Scheme::Predictive),
            Policy::Adaptive => None,
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Periodic => "periodic",
            Policy::Predictive => "predictive",
            Policy::Adaptive => "adaptive",
        })
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "periodic" => Ok(Policy::Periodic),
            "predictive" => Ok(Policy::Predictive),
            "adaptive" => Ok(Policy::Adaptive),
            other => Err(Error::config("policy", format!("unknown policy `{other}`"))),
        }
    }
}

/// Recipe for drawing a state matrix with i.i.d. uniform entries.
#[derive(Clone, Debug, PartialEq)]
pub struct ASampling {
    pub dim: usize,
    pub low: f64,
    pub high: f64,
    /// Rescale each draw to this spectral norm.
    pub target_norm: Option<f64>,
}

impl ASampling {
    fn draw<R: Rng>(&self, rng: &mut R) -> Result<Matrix> {
        let m = Matrix::from_fn(self.dim, self.dim, |_, _| rng.random_range(self.low..self.high));
        match self.target_norm {
            Some(target) => {
                let norm = spectral_norm(&m)?;
                if norm == 0.0 {
                    Ok(m)
                } else {
                    Ok(m * (target / norm))
                }
            }
            None => Ok(m),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Dynamics {
    Fixed(Matrix),
    Sampled(ASampling),
}

impl Dynamics {
    pub fn dim(&self) -> usize {
        match self {
            Dynamics::Fixed(a) => a.nrows(),
            Dynamics::Sampled(s) => s.dim,
        }
    }
}

/// Process noise description: `N(mean + sine(k), cov)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    pub cov: Matrix,
    pub mean: Option<Vector>,
    pub sine: Option<Sinusoid>,
}

impl NoiseSpec {
    pub fn gaussian(cov: Matrix) -> Self {
        NoiseSpec { cov, mean: None, sine: None }
    }

    pub fn build(&self) -> Result<NoiseModel> {
        let mean = self.mean.clone().unwrap_or_else(|| Vector::zeros(self.cov.nrows()));
        NoiseModel::new(mean, self.cov.clone(), self.sine.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentSpec {
    pub dynamics: Dynamics,
    /// Matrix the estimators use. Defaults to the true dynamics.
    pub estimator_a: Option<Matrix>,
    pub noise: NoiseSpec,
    pub x0: Option<Vector>,
    /// `x(0) − x̂(0)`; its squared norm must stay below the agent's threshold.
    pub initial_error: Option<Vector>,
    /// Per-agent trigger threshold overriding the scenario's `delta`.
    pub delta: Option<f64>,
}

impl AgentSpec {
    pub fn new(dynamics: Dynamics, noise: NoiseSpec) -> Self {
        AgentSpec { dynamics, estimator_a: None, noise, x0: None, initial_error: None, delta: None }
    }
}

/// Scripted change of some agents' dynamics and/or noise.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioEvent {
    pub step: usize,
    /// 1-based agent ids.
    pub agents: Vec<usize>,
    pub noise: Option<NoiseSpec>,
    pub a_matrix: Option<Matrix>,
    /// What the estimators switch to. Defaults to the new true matrix.
    pub estimator_a: Option<Matrix>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub n_agents: usize,
    pub horizon: usize,
    pub delta: f64,
    pub budget: SlotBudget,
    pub policy: Policy,
    pub agents: Vec<AgentSpec>,
    pub events: Vec<ScenarioEvent>,
    pub seed: u64,
    pub replicates: usize,
    pub noise_indexing: NoiseIndexing,
    /// Steps between an event and the estimators adopting the new matrices.
    pub reidentification_lag: usize,
}

/// How strictly to check the slot budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BudgetCheck {
    /// `k_pred < k_per = k_total < N`.
    Strict,
    /// Only `1 ≤ k_pred, k_per ≤ N`; allows single-scheme experiments such as
    /// `K_per = 1` or `N = 1`.
    Relaxed,
}

impl ScenarioConfig {
    /// Homogeneous ensemble: `n_agents` copies of `agent`.
    pub fn homogeneous(name: &str, agent: AgentSpec, n_agents: usize, horizon: usize, delta: f64, budget: SlotBudget, policy: Policy) -> Self {
        ScenarioConfig {
            name: name.to_string(),
            n_agents,
            horizon,
            delta,
            budget,
            policy,
            agents: vec![agent; n_agents],
            events: Vec::new(),
            seed: 0,
            replicates: 1,
            noise_indexing: NoiseIndexing::default(),
            reidentification_lag: 0,
        }
    }

    pub fn delta_of(&self, agent_index: usize) -> f64 {
        self.agents[agent_index].delta.unwrap_or(self.delta)
    }

    pub fn validate(&self, check: BudgetCheck) -> Result<()> {
        let n = self.n_agents;
        if n == 0 {
            return Err(Error::config("n_agents", "must be positive"));
        }
        if self.agents.len() != n {
            return Err(Error::config("models", format!("{} agent models for n_agents = {n}", self.agents.len())));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon", "must be positive"));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::config("delta", format!("must be a positive number, got {}", self.delta)));
        }
        if self.replicates == 0 {
            return Err(Error::config("replicates", "must be positive"));
        }
        let strict = check == BudgetCheck::Strict || self.policy == Policy::Adaptive;
        if strict {
            self.budget.validate(n)?;
        } else {
            let b = &self.budget;
            if b.k_per == 0 || b.k_pred == 0 || b.k_per > n || b.k_pred > n || b.k_per != b.k_total {
                return Err(Error::config(
                    "budget",
                    format!("need 1 <= k_pred, k_per = k_total <= N, got k_total = {}, k_per = {}, k_pred = {}, N = {n}", b.k_total, b.k_per, b.k_pred),
                ));
            }
        }
        for (i, agent) in self.agents.iter().enumerate() {
            self.validate_agent(i, agent)?;
        }
        let mut last_step = 0;
        for (e, event) in self.events.iter().enumerate() {
            let field = |name: &str| format!("events[{e}].{name}");
            if event.step < last_step {
                return Err(Error::config(field("step"), "events must be sorted by step"));
            }
            if event.step >= self.horizon {
                return Err(Error::config(field("step"), format!("step {} is not before the horizon {}", event.step, self.horizon)));
            }
            last_step = event.step;
            if event.agents.is_empty() {
                return Err(Error::config(field("agents"), "no agents"));
            }
            for (j, &id) in event.agents.iter().enumerate() {
                if id == 0 || id > n {
                    return Err(Error::config(format!("events[{e}].agents[{j}]"), format!("agent id {id} outside 1..={n}")));
                }
                let dim = self.agents[id - 1].dynamics.dim();
                let wrap = |err: Error| match err {
                    Error::Dimension { what, .. } => Error::config(field("agents"), format!("agent {id}: {what}")),
                    Error::NotPsd { reason, .. } => Error::config(field("noise.cov"), format!("not positive semi-definite: {reason}")),
                    other => other,
                };
                if let Some(noise) = &event.noise {
                    check_noise_dim(noise, dim).map_err(wrap)?;
                    noise.build().map_err(wrap)?;
                }
                for (name, m) in [("a_matrix", &event.a_matrix), ("estimator_a", &event.estimator_a)] {
                    if let Some(m) = m {
                        if m.shape() != (dim, dim) {
                            return Err(Error::config(field(name), format!("agent {id} has dimension {dim}, matrix is {}x{}", m.nrows(), m.ncols())));
                        }
                    }
                }
            }
            if event.noise.is_none() && event.a_matrix.is_none() && event.estimator_a.is_none() {
                return Err(Error::config(format!("events[{e}]"), "event changes nothing"));
            }
        }
        Ok(())
    }

    fn validate_agent(&self, i: usize, agent: &AgentSpec) -> Result<()> {
        let field = |name: &str| format!("models[{i}].{name}");
        let dim = agent.dynamics.dim();
        if dim == 0 {
            return Err(Error::config(field("a_matrix"), "empty state matrix"));
        }
        match &agent.dynamics {
            Dynamics::Fixed(a) if !a.is_square() => {
                return Err(Error::config(field("a_matrix"), format!("not square: {}x{}", a.nrows(), a.ncols())));
            }
            Dynamics::Sampled(s) if !(s.low < s.high && s.low.is_finite() && s.high.is_finite()) => {
                return Err(Error::config(field("a_sampling"), format!("need low < high, got [{}, {}]", s.low, s.high)));
            }
            Dynamics::Sampled(ASampling { target_norm: Some(t), .. }) if !(*t > 0.0 && t.is_finite()) => {
                return Err(Error::config(field("a_sampling.target_norm"), "must be positive"));
            }
            _ => {}
        }
        if let Some(est) = &agent.estimator_a {
            if est.shape() != (dim, dim) {
                return Err(Error::config(field("estimator_a"), format!("expected {dim}x{dim}, got {}x{}", est.nrows(), est.ncols())));
            }
        }
        check_noise_dim(&agent.noise, dim).map_err(|e| Error::config(field("noise"), e.to_string()))?;
        agent.noise.build().map_err(|e| match e {
            Error::NotPsd { reason, .. } => Error::config(field("noise.cov"), format!("not positive semi-definite: {reason}")),
            other => Error::config(field("noise"), other.to_string()),
        })?;
        if let Some(x0) = &agent.x0 {
            if x0.len() != dim {
                return Err(Error::config(field("x0"), format!("length {}, expected {dim}", x0.len())));
            }
        }
        let delta = agent.delta.unwrap_or(self.delta);
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::config(field("delta"), format!("must be a positive number, got {delta}")));
        }
        if let Some(e0) = &agent.initial_error {
            if e0.len() != dim {
                return Err(Error::config(field("initial_error"), format!("length {}, expected {dim}", e0.len())));
            }
            if e0.norm_squared() >= delta {
                return Err(Error::config(
                    field("initial_error"),
                    format!("squared norm {} must stay below the threshold {delta}", e0.norm_squared()),
                ));
            }
        }
        Ok(())
    }

    /// Draws every sampled matrix for `replicate`, redrawing until each
    /// agent satisfies the growth assumption with its initial noise.
    pub fn realize(&self, replicate: u32) -> Result<RealizedScenario> {
        let mut agents = Vec::with_capacity(self.n_agents);
        let mut resamples = Vec::with_capacity(self.n_agents);
        for (i, spec) in self.agents.iter().enumerate() {
            let noise = spec.noise.build().map_err(|e| e.for_agent(i + 1))?;
            let (a, redraws) = match &spec.dynamics {
                Dynamics::Fixed(a) => (a.clone(), 0),
                Dynamics::Sampled(recipe) => {
                    let mut rng = stream(self.seed, replicate, i, Purpose::Dynamics);
                    let mut redraws = 0;
                    loop {
                        let a = recipe.draw(&mut rng)?;
                        let candidate = SystemModel::new(a.clone(), noise.cov().clone()).map_err(|e| e.for_agent(i + 1))?;
                        if check_assumption(&candidate)? {
                            break (a, redraws);
                        }
                        redraws += 1;
                        if redraws >= MAX_RESAMPLES {
                            return Err(Error::config(
                                format!("models[{i}].a_sampling"),
                                format!("no draw satisfied the growth assumption in {MAX_RESAMPLES} attempts"),
                            ));
                        }
                    }
                }
            };
            let truth = SystemModel::new(a.clone(), noise.cov().clone()).map_err(|e| e.for_agent(i + 1))?;
            let estimator_a = spec.estimator_a.clone().unwrap_or(a);
            let x0 = spec.x0.clone().unwrap_or_else(|| Vector::zeros(truth.dim()));
            let initial_error = spec.initial_error.clone().unwrap_or_else(|| Vector::zeros(truth.dim()));
            agents.push(RealizedAgent { truth, estimator_a, noise, x0, initial_error, delta: self.delta_of(i) });
            resamples.push(redraws);
        }
        Ok(RealizedScenario { agents, resamples })
    }
}

fn check_noise_dim(noise: &NoiseSpec, dim: usize) -> Result<()> {
    if noise.cov.shape() != (dim, dim) {
        return Err(Error::dim(None, format!("covariance is {}x{}, expected {dim}x{dim}", noise.cov.nrows(), noise.cov.ncols())));
    }
    if let Some(m) = &noise.mean {
        if m.len() != dim {
            return Err(Error::dim(None, format!("mean has length {}, expected {dim}", m.len())));
        }
    }
    if let Some(s) = &noise.sine {
        if s.amplitude.len() != dim {
            return Err(Error::dim(None, format!("sine amplitude has length {}, expected {dim}", s.amplitude.len())));
        }
    }
    Ok(())
}

/// One agent with every random choice resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct RealizedAgent {
    pub truth: SystemModel,
    pub estimator_a: Matrix,
    pub noise: NoiseModel,
    pub x0: Vector,
    pub initial_error: Vector,
    pub delta: f64,
}

impl RealizedAgent {
    /// The model the estimator side believes in: its matrix with the current
    /// noise covariance. Bounds are evaluated on these.
    pub fn estimator_model(&self) -> Result<SystemModel> {
        SystemModel::new(self.estimator_a.clone(), self.noise.cov().clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RealizedScenario {
    pub agents: Vec<RealizedAgent>,
    /// Redraws needed per agent before the growth assumption held.
    pub resamples: Vec<usize>,
}

impl RealizedScenario {
    pub fn estimator_models(&self) -> Result<Vec<SystemModel>> {
        self.agents.iter().enumerate().map(|(i, a)| a.estimator_model().map_err(|e| e.for_agent(i + 1))).collect()
    }
}
