//! Linearized cart-pole ensemble with a mid-run mass change.
//!
//! State `[cart position, cart velocity, pole angle, pole angular velocity]`,
//! linearized about the upright equilibrium, discretized with a zero-order
//! hold and closed with a fixed state feedback `u = −K x`. The input channel
//! carries a sinusoidal push plus white force noise, so the process noise is
//! `N(B·a·sin(ω t), σ_u² B Bᵀ + ε I)`.

use crate::bounds::{check_assumption, NoiseIndexing};
use crate::dynamics::{identify_lti, Matrix, Sinusoid, SystemModel, Vector};
use crate::error::{Error, Result};
use crate::scenario::{AgentSpec, Dynamics, NoiseSpec, Policy, ScenarioConfig, ScenarioEvent};
use crate::scheduling::SlotBudget;

/// LQR gain for the default cart-pole (Q = diag(1, 1, 10, 1), R = 10, dt = 0.01).
pub const DEFAULT_FEEDBACK: [f64; 4] = [-0.30060404434529436, -0.9809645332229077, -25.018386427416544, -5.431511552395686];

pub const DEFAULT_DT: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct CartPoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_length: f64,
    pub gravity: f64,
    /// Standard deviation of the force noise.
    pub force_std: f64,
    /// Amplitude (N) and angular frequency (rad/s) of the periodic push.
    pub push_amplitude: f64,
    pub push_frequency: f64,
    /// Small isotropic noise keeping the covariance full rank.
    pub state_noise: f64,
    pub n_agents: usize,
    pub horizon: usize,
    /// Step at which the last `changed_agents` carts lose mass, if any.
    pub event_step: Option<usize>,
    pub changed_agents: usize,
    pub mass_divisor: f64,
    /// Noise-free steps used to re-identify the closed-loop matrices.
    pub identification_steps: usize,
    pub seed: u64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        CartPoleParams {
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_length: 0.5,
            gravity: 9.81,
            force_std: 2.0,
            push_amplitude: 3.5,
            push_frequency: 5.0,
            state_noise: 1e-4,
            n_agents: 20,
            horizon: 300,
            event_step: Some(100),
            changed_agents: 5,
            mass_divisor: 3.0,
            identification_steps: 40,
            seed: 0,
        }
    }
}

/// Continuous-time `(A, B)` for the given cart mass.
pub fn linearize(params: &CartPoleParams, cart_mass: f64) -> (Matrix, Vector) {
    let (m, l, g) = (params.pole_mass, params.pole_length, params.gravity);
    let mut a = Matrix::zeros(4, 4);
    a[(0, 1)] = 1.0;
    a[(1, 2)] = -m * g / cart_mass;
    a[(2, 3)] = 1.0;
    a[(3, 2)] = (cart_mass + m) * g / (cart_mass * l);
    let b = Vector::from_row_slice(&[0.0, 1.0 / cart_mass, 0.0, -1.0 / (cart_mass * l)]);
    (a, b)
}

/// Zero-order-hold discretization via the exponential of `[[A, B], [0, 0]]·dt`.
pub fn discretize(a: &Matrix, b: &Vector, dt: f64) -> (Matrix, Vector) {
    let n = a.nrows();
    let mut z = Matrix::zeros(n + 1, n + 1);
    z.view_mut((0, 0), (n, n)).copy_from(a);
    z.view_mut((0, n), (n, 1)).copy_from(b);
    let e = (z * dt).exp();
    (e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, 1)).column(0).into_owned())
}

struct Plant {
    a: Matrix,
    noise: NoiseSpec,
}

fn closed_loop(params: &CartPoleParams, cart_mass: f64, dt: f64, feedback: &[f64]) -> Plant {
    let (ac, bc) = linearize(params, cart_mass);
    let (ad, bd) = discretize(&ac, &bc, dt);
    let k = Vector::from_row_slice(feedback);
    let a = &ad - &bd * k.transpose();
    let cov = &bd * bd.transpose() * params.force_std.powi(2) + Matrix::identity(4, 4) * params.state_noise;
    let sine = Sinusoid { amplitude: &bd * params.push_amplitude, omega: params.push_frequency * dt, phase: 0.0 };
    Plant { a, noise: NoiseSpec { cov, mean: None, sine: Some(sine) } }
}

/// Least-squares estimate of `a` from a noise-free rollout.
fn reidentify(a: &Matrix, steps: usize) -> Result<Matrix> {
    let mut x = Vector::from_row_slice(&[0.1, -0.2, 0.05, 0.3]);
    let mut states = Vec::with_capacity(steps + 1);
    states.push(x.clone());
    for _ in 0..steps {
        x = a * x;
        states.push(x.clone());
    }
    identify_lti(&states)
}

/// 20 cart-poles under the periodic push; at the event step the last five carts
/// have their mass divided and their estimators switch to re-identified
/// matrices.
pub fn build_cartpole_scenario(params: &CartPoleParams, dt: f64, feedback: &[f64]) -> Result<ScenarioConfig> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::config("dt", format!("must be positive, got {dt}")));
    }
    if feedback.len() != 4 {
        return Err(Error::config("feedback", format!("need 4 gains, got {}", feedback.len())));
    }
    if params.changed_agents > params.n_agents {
        return Err(Error::config("changed_agents", "more changed agents than agents"));
    }
    let nominal = closed_loop(params, params.cart_mass, dt, feedback);
    let light = closed_loop(params, params.cart_mass / params.mass_divisor, dt, feedback);
    for (plant, which) in [(&nominal, "nominal"), (&light, "lightened")] {
        let model = SystemModel::new(plant.a.clone(), plant.noise.cov.clone())?;
        if !check_assumption(&model)? {
            return Err(Error::config("feedback", format!("{which} closed loop has ‖A‖ < 1 with this noise; tune the gains or the noise")));
        }
    }

    let mut agent = AgentSpec::new(Dynamics::Fixed(nominal.a.clone()), nominal.noise.clone());
    agent.estimator_a = Some(reidentify(&nominal.a, params.identification_steps)?);
    let budget = SlotBudget { k_total: 5, k_per: 5, k_pred: 4 };
    let mut config = ScenarioConfig::homogeneous("cartpole20", agent, params.n_agents, params.horizon, 0.01, budget, Policy::Adaptive);
    config.seed = params.seed;
    config.noise_indexing = NoiseIndexing::Exclusive;

    if let Some(step) = params.event_step {
        let first = params.n_agents - params.changed_agents + 1;
        config.events.push(ScenarioEvent {
            step,
            agents: (first..=params.n_agents).collect(),
            noise: Some(light.noise.clone()),
            a_matrix: Some(light.a.clone()),
            estimator_a: Some(reidentify(&light.a, params.identification_steps)?),
        });
    }
    Ok(config)
}
