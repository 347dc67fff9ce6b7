//! Closed-loop simulation of the sensor / scheduler / remote estimator loop.
//!
//! Per step `k`:
//! 1. apply scripted events (new dynamics or noise); under the adaptive
//!    policy re-evaluate the bounds at `k = 0` and at every event step,
//! 2. compute every agent's error from the sensor-side estimator replica,
//! 3. allocate slots with the active scheme,
//! 4. granted agents with `‖e‖² ≥ δ` send their state,
//! 5. both estimator replicas advance (a state sent at `k` lands at `k + 1`),
//! 6. true states advance with fresh process noise.

use std::ops::Range;

use rayon::prelude::*;

use crate::bounds::{choose_scheme, NoiseIndexing, Scheme, SchemeChoice};
use crate::dynamics::{sample_noise_at, step_system, AgentState, Matrix, SystemModel, Vector};
use crate::error::{Error, Result};
use crate::estimation::{compute_error, trigger_decision, update_with, EstimatorPair};
use crate::rng::{stream, Purpose, Stream};
use crate::scenario::{BudgetCheck, Policy, RealizedScenario, ScenarioConfig};
use crate::scheduling::{predictive_allocate_slice, round_robin_allocate, RoundGrant, SlotBudget};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentStep {
    pub error_sq: f64,
    pub gamma: bool,
    pub granted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub policy: Scheme,
    pub agents: Vec<AgentStep>,
    pub mean_error_sq: f64,
}

/// Bound comparison made by the adaptive policy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decision {
    pub step: usize,
    pub choice: SchemeChoice,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationTrace {
    pub policy: Policy,
    pub seed: u64,
    pub replicate: u32,
    pub steps: Vec<StepRecord>,
    pub decisions: Vec<Decision>,
    /// Redraws of sampled state matrices, per agent.
    pub resamples: Vec<usize>,
}

impl SimulationTrace {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn n_agents(&self) -> usize {
        self.steps.first().map_or(0, |s| s.agents.len())
    }

    pub fn mean_series(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.mean_error_sq).collect()
    }
}

/// Runs replicate 0 of `config`.
pub fn run_simulation(config: &ScenarioConfig) -> Result<SimulationTrace> {
    run_replicate(config, 0)
}

/// Runs all `config.replicates` replicates, in parallel.
pub fn run_replicates(config: &ScenarioConfig) -> Result<Vec<SimulationTrace>> {
    config.validate(BudgetCheck::Relaxed)?;
    (0..config.replicates as u32).into_par_iter().map(|r| run_replicate(config, r)).collect()
}

/// Runs one replicate. Noise of agent `i` comes from stream `(seed, r, i)`,
/// so the draws are the same whatever the policy.
pub fn run_replicate(config: &ScenarioConfig, replicate: u32) -> Result<SimulationTrace> {
    config.validate(BudgetCheck::Relaxed)?;
    let realized = config.realize(replicate)?;
    Simulation::new(config, realized, replicate).run()
}

/// Re-evaluates the scheme at event steps and keeps it otherwise.
pub fn adaptive_policy_step(
    current: Scheme,
    event_fired: bool,
    models: &[SystemModel],
    delta: f64,
    budget: &SlotBudget,
    indexing: NoiseIndexing,
) -> Result<(Scheme, Option<SchemeChoice>)> {
    if !event_fired {
        return Ok((current, None));
    }
    let choice = choose_scheme(models, delta, budget, indexing)?;
    Ok((choice.chosen, Some(choice)))
}

struct PendingSwitch {
    due: usize,
    agent: usize,
    a: Matrix,
}

struct Simulation<'a> {
    config: &'a ScenarioConfig,
    scenario: RealizedScenario,
    replicate: u32,
    truth: Vec<AgentState>,
    sensor: Vec<EstimatorPair>,
    remote: Vec<EstimatorPair>,
    noise_rng: Vec<Stream>,
    switches: Vec<PendingSwitch>,
}

impl<'a> Simulation<'a> {
    fn new(config: &'a ScenarioConfig, scenario: RealizedScenario, replicate: u32) -> Self {
        let truth = scenario.agents.iter().map(|a| AgentState::new(a.x0.clone())).collect();
        let estimators: Vec<EstimatorPair> = scenario.agents.iter().map(|a| EstimatorPair::new(&a.x0 - &a.initial_error)).collect();
        let noise_rng = (0..config.n_agents).map(|i| stream(config.seed, replicate, i, Purpose::ProcessNoise)).collect();
        Simulation {
            config,
            scenario,
            replicate,
            truth,
            sensor: estimators.clone(),
            remote: estimators,
            noise_rng,
            switches: Vec::new(),
        }
    }

    fn run(mut self) -> Result<SimulationTrace> {
        let config = self.config;
        let n = config.n_agents;
        let mut active = match config.policy.fixed_scheme() {
            Some(s) => s,
            None => Scheme::Periodic,
        };
        let mut decisions = Vec::new();
        let mut steps = Vec::with_capacity(config.horizon);
        let mut next_event = 0;
        let mut errors = vec![Vector::zeros(0); n];
        let mut error_sq = vec![0.0; n];

        for k in 0..config.horizon {
            let mut fired = k == 0;
            while next_event < config.events.len() && config.events[next_event].step == k {
                self.apply_event(next_event, k)?;
                next_event += 1;
                fired = true;
            }
            self.apply_due_switches(k);
            if config.policy == Policy::Adaptive {
                let models = self.decision_models()?;
                let (scheme, choice) = adaptive_policy_step(active, fired, &models, config.delta, &config.budget, config.noise_indexing)?;
                active = scheme;
                if let Some(choice) = choice {
                    decisions.push(Decision { step: k, choice });
                }
            }

            for i in 0..n {
                let e = compute_error(&self.truth[i].x, &self.sensor[i].x_hat).map_err(|e| invariant(k, i, e))?;
                error_sq[i] = e.norm_squared();
                errors[i] = e;
            }

            let grant = match active {
                Scheme::Periodic => round_robin_allocate(k, n, config.budget.k_per),
                Scheme::Predictive => predictive_allocate_slice(k, &error_sq, config.budget.k_pred),
            };
            let budget = match active {
                Scheme::Periodic => config.budget.k_per,
                Scheme::Predictive => config.budget.k_pred,
            };
            let records = self.transmit(&grant, &errors)?;
            let in_flight = records.iter().filter(|r| r.gamma).count();
            if in_flight > budget {
                return Err(Error::Invariant { step: k, agent: None, message: format!("{in_flight} transmissions exceed the budget {budget}") });
            }

            self.advance(k)?;

            let mean_error_sq = error_sq.iter().sum::<f64>() / n as f64;
            steps.push(StepRecord { step: k, policy: active, agents: records, mean_error_sq });
        }

        Ok(SimulationTrace {
            policy: config.policy,
            seed: config.seed,
            replicate: self.replicate,
            steps,
            decisions,
            resamples: self.scenario.resamples,
        })
    }

    fn apply_event(&mut self, index: usize, k: usize) -> Result<()> {
        let event = &self.config.events[index];
        for &id in &event.agents {
            let i = id - 1;
            let agent = &mut self.scenario.agents[i];
            if let Some(noise) = &event.noise {
                agent.noise = noise.build().map_err(|e| invariant(k, i, e))?;
            }
            let a = event.a_matrix.clone().unwrap_or_else(|| agent.truth.a().clone());
            agent.truth = SystemModel::new(a.clone(), agent.noise.cov().clone()).map_err(|e| invariant(k, i, e))?;
            let estimator_a = match (&event.estimator_a, &event.a_matrix) {
                (Some(est), _) => Some(est.clone()),
                (None, Some(_)) => Some(a),
                (None, None) => None,
            };
            if let Some(a) = estimator_a {
                self.switches.retain(|s| s.agent != i);
                self.switches.push(PendingSwitch { due: k + self.config.reidentification_lag, agent: i, a });
            }
        }
        Ok(())
    }

    fn apply_due_switches(&mut self, k: usize) {
        let agents = &mut self.scenario.agents;
        self.switches.retain(|s| {
            if s.due <= k {
                agents[s.agent].estimator_a = s.a.clone();
                false
            } else {
                true
            }
        });
    }

    /// Models the bounds are evaluated on: the matrices the estimators use,
    /// or are about to adopt, with the current noise.
    fn decision_models(&self) -> Result<Vec<SystemModel>> {
        let mut models = self.scenario.estimator_models()?;
        for s in &self.switches {
            let cov = self.scenario.agents[s.agent].noise.cov().clone();
            models[s.agent] = SystemModel::new(s.a.clone(), cov).map_err(|e| e.for_agent(s.agent + 1))?;
        }
        Ok(models)
    }

    fn transmit(&mut self, grant: &RoundGrant, errors: &[Vector]) -> Result<Vec<AgentStep>> {
        let mut records = Vec::with_capacity(errors.len());
        for (i, e) in errors.iter().enumerate() {
            let granted = grant.contains(i + 1);
            let decision = trigger_decision(e, self.scenario.agents[i].delta);
            let gamma = granted && decision.gamma;
            if gamma {
                let x = self.truth[i].x.clone();
                self.sensor[i].transmit(x.clone());
                self.remote[i].transmit(x);
            }
            records.push(AgentStep { error_sq: decision.error_sq, gamma, granted });
        }
        Ok(records)
    }

    fn advance(&mut self, k: usize) -> Result<()> {
        for i in 0..self.config.n_agents {
            let agent = &self.scenario.agents[i];
            let sensor = update_with(&self.sensor[i], &agent.estimator_a).map_err(|e| invariant(k, i, e))?;
            let remote = update_with(&self.remote[i], &agent.estimator_a).map_err(|e| invariant(k, i, e))?;
            if !bitwise_equal(&sensor.x_hat, &remote.x_hat) {
                return Err(Error::Invariant { step: k, agent: Some(i + 1), message: "estimator replicas diverged".into() });
            }
            self.sensor[i] = sensor;
            self.remote[i] = remote;

            let v = sample_noise_at(&agent.noise, k, &mut self.noise_rng[i]);
            self.truth[i] = step_system(&self.truth[i], &agent.truth, &v).map_err(|e| invariant(k, i, e))?;
        }
        Ok(())
    }
}

fn bitwise_equal(a: &Vector, b: &Vector) -> bool {
    a.len() == b.len() && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn invariant(step: usize, agent: usize, err: Error) -> Error {
    Error::Invariant { step, agent: Some(agent + 1), message: err.to_string() }
}

/// Mean over the steps in `window` of the per-step mean squared error.
pub fn mean_quadratic_error(trace: &SimulationTrace, window: Range<usize>) -> Result<f64> {
    window_mean(&trace.mean_series(), window)
}

pub fn window_mean(series: &[f64], window: Range<usize>) -> Result<f64> {
    if window.start >= window.end || window.end > series.len() {
        return Err(Error::EmptyWindow { start: window.start, end: window.end });
    }
    let slice = &series[window];
    Ok(slice.iter().sum::<f64>() / slice.len() as f64)
}

/// Pointwise mean and standard error of the per-step mean error.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub replicates: usize,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

pub fn aggregate_replicates(traces: &[SimulationTrace]) -> Result<Aggregate> {
    let series: Vec<Vec<f64>> = traces.iter().map(SimulationTrace::mean_series).collect();
    aggregate_series(&series)
}

/// Standard error uses the sample standard deviation; a single replicate has
/// standard error 0.
pub fn aggregate_series(series: &[Vec<f64>]) -> Result<Aggregate> {
    let Some(first) = series.first() else {
        return Err(Error::config("traces", "no replicates to aggregate"));
    };
    let horizon = first.len();
    if let Some(bad) = series.iter().find(|s| s.len() != horizon) {
        return Err(Error::HorizonMismatch { expected: horizon, found: bad.len() });
    }
    let r = series.len() as f64;
    let mut mean = vec![0.0; horizon];
    let mut stderr = vec![0.0; horizon];
    for k in 0..horizon {
        let m = series.iter().map(|s| s[k]).sum::<f64>() / r;
        mean[k] = m;
        if series.len() > 1 {
            let var = series.iter().map(|s| (s[k] - m).powi(2)).sum::<f64>() / (r - 1.0);
            stderr[k] = (var / r).sqrt();
        }
    }
    Ok(Aggregate { replicates: series.len(), mean, stderr })
}
