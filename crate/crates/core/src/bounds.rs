//! Worst-case expected squared error under round-robin and predictive
//! scheduling, and the rule that picks the scheme with the smaller bound.
//!
//! All norms are spectral norms. Noise enters both bounds through
//! `Tr(Σ)` weighted by *squared* norms of the propagating matrices.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dynamics::{spectral_norm, Matrix, SystemModel};
use crate::error::{Error, Result};
use crate::scheduling::{cycle_length, SlotBudget};

/// Relative slack on `‖A‖² ≥ 1` to absorb power-iteration round-off.
const UNIT_NORM_TOL: f64 = 1e-9;

/// Which scheduler a decision selected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Periodic,
    Predictive,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Periodic => "periodic",
            Scheme::Predictive => "predictive",
        })
    }
}

/// How the noise term of round `j` is propagated in the predictive bound.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseIndexing {
    /// Round `j`'s noise passes through the representatives of rounds
    /// `j+1..=T`. Reduces to the round-robin bound for identical agents.
    #[default]
    Exclusive,
    /// The product also includes round `j`'s own representative.
    Inclusive,
}

/// Per-agent gains and the agent order that sorts them ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct GainProfile {
    pub gains: Vec<f64>,
    /// Zero-based agent indices, gains non-decreasing along this order
    /// (ties keep the lower index first).
    pub ascending: Vec<usize>,
}

impl GainProfile {
    pub fn new(models: &[SystemModel], delta: f64) -> Result<Self> {
        let gains = models.iter().map(|m| gain(m, delta)).collect::<Result<Vec<_>>>()?;
        let mut ascending: Vec<usize> = (0..models.len()).collect();
        ascending.sort_by(|&a, &b| gains[a].total_cmp(&gains[b]).then(a.cmp(&b)));
        Ok(GainProfile { gains, ascending })
    }
}

/// Outcome of comparing the two bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeChoice {
    pub chosen: Scheme,
    pub periodic_bound_value: f64,
    pub predictive_bound_value: f64,
}

impl SchemeChoice {
    /// Predictive only when strictly smaller.
    pub fn from_bounds(periodic_bound_value: f64, predictive_bound_value: f64) -> Self {
        let chosen = if predictive_bound_value < periodic_bound_value { Scheme::Predictive } else { Scheme::Periodic };
        SchemeChoice { chosen, periodic_bound_value, predictive_bound_value }
    }
}

/// Whether `‖A‖²‖e‖ + Tr(Σ) > ‖e‖` holds for every nonzero error `e`.
///
/// Letting `‖e‖` grow shows this needs `‖A‖² ≥ 1`; at `‖A‖² = 1` it further
/// needs `Tr(Σ) > 0`.
pub fn check_assumption(model: &SystemModel) -> Result<bool> {
    let norm_sq = spectral_norm(model.a())?.powi(2);
    if norm_sq > 1.0 + UNIT_NORM_TOL {
        Ok(true)
    } else if norm_sq >= 1.0 - UNIT_NORM_TOL {
        Ok(model.noise_trace() > 0.0)
    } else {
        Ok(false)
    }
}

/// `ζ = ‖A‖²δ + Tr(Σ)`.
pub fn gain(model: &SystemModel, delta: f64) -> Result<f64> {
    Ok(spectral_norm(model.a())?.powi(2) * delta + model.noise_trace())
}

/// Bound on `E‖e(k+T)‖²` for an agent granted a slot at `k` under
/// round-robin with cycle length `T`:
/// `‖A^T‖²δ + Σ_{j<T} ‖A^{T−j−1}‖² Tr(Σ)`.
pub fn periodic_bound(model: &SystemModel, delta: f64, t_per: usize) -> Result<f64> {
    if t_per == 0 {
        return Err(Error::config("t_per", "must be at least 1"));
    }
    let n = model.dim();
    let trace = model.noise_trace();
    let mut power = Matrix::identity(n, n);
    // Σ_{j<T} ‖A^{T−j−1}‖² = Σ_{p<T} ‖A^p‖².
    let mut noise_term = 0.0;
    for p in 0..t_per {
        let norm = if p == 0 { 1.0 } else { spectral_norm(&power)? };
        noise_term += norm * norm * trace;
        power = &power * model.a();
    }
    let head = spectral_norm(&power)?.powi(2) * delta;
    Ok(head + noise_term)
}

/// Bound on the worst expected squared error under predictive triggering.
///
/// Agents are sorted by ascending gain; the representative of round `j`
/// (1-based) is the agent at sorted position `(j−1)·k_pred`. The initial `δ`
/// is propagated through every representative and each round's noise
/// through the representatives of later rounds (see [`NoiseIndexing`]).
pub fn predictive_bound(models: &[SystemModel], delta: f64, k_pred: usize, indexing: NoiseIndexing) -> Result<f64> {
    let n_agents = models.len();
    if k_pred == 0 || k_pred >= n_agents {
        return Err(Error::config("k_pred", format!("need 1 <= k_pred < N, got k_pred = {k_pred}, N = {n_agents}")));
    }
    require_assumption(models)?;
    let profile = GainProfile::new(models, delta)?;
    let t_pred = cycle_length(n_agents, k_pred);
    let mut bound = delta;
    for j in 0..t_pred {
        let rep = &models[profile.ascending[j * k_pred]];
        let norm_sq = spectral_norm(rep.a())?.powi(2);
        bound = match indexing {
            NoiseIndexing::Exclusive => norm_sq * bound + rep.noise_trace(),
            NoiseIndexing::Inclusive => norm_sq * (bound + rep.noise_trace()),
        };
    }
    Ok(bound)
}

/// Round-robin side of the comparison: the largest per-agent periodic bound.
pub fn max_periodic_bound(models: &[SystemModel], delta: f64, t_per: usize) -> Result<f64> {
    models.iter().try_fold(f64::NEG_INFINITY, |acc, m| Ok(acc.max(periodic_bound(m, delta, t_per)?)))
}

/// Evaluates both bounds for the ensemble and picks the smaller.
pub fn choose_scheme(models: &[SystemModel], delta: f64, budget: &SlotBudget, indexing: NoiseIndexing) -> Result<SchemeChoice> {
    require_assumption(models)?;
    let n = models.len();
    let periodic = max_periodic_bound(models, delta, budget.t_per(n))?;
    let predictive = predictive_bound(models, delta, budget.k_pred, indexing)?;
    let choice = SchemeChoice::from_bounds(periodic, predictive);
    debug_assert_eq!(choice.chosen == Scheme::Predictive, choice.predictive_bound_value < choice.periodic_bound_value);
    Ok(choice)
}

fn require_assumption(models: &[SystemModel]) -> Result<()> {
    let mut offending = Vec::new();
    for (i, m) in models.iter().enumerate() {
        if !check_assumption(m)? {
            offending.push(i + 1);
        }
    }
    if offending.is_empty() {
        Ok(())
    } else {
        Err(Error::AssumptionViolated { agents: offending })
    }
}
