//! Slot allocation under a per-round budget.
//!
//! Agent ids are 1-based throughout this module, matching how rounds are
//! described: round 0 grants agents `1..=K_per`.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

/// Slots per round. `k_per` equals the raw budget; `k_pred` is what remains
/// after the priority exchange.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SlotBudget {
    pub k_total: usize,
    pub k_per: usize,
    pub k_pred: usize,
}

impl SlotBudget {
    /// Validates `1 ≤ k_pred < k_per = k_total < n_agents`.
    pub fn new(k_total: usize, k_pred: usize, n_agents: usize) -> Result<Self> {
        let budget = SlotBudget { k_total, k_per: k_total, k_pred };
        budget.validate(n_agents)?;
        Ok(budget)
    }

    pub fn validate(&self, n_agents: usize) -> Result<()> {
        if self.k_pred == 0 {
            return Err(Error::config("budget.k_pred", "must be at least 1"));
        }
        if self.k_per != self.k_total {
            return Err(Error::config(
                "budget.k_per",
                format!("k_per ({}) must equal k_total ({})", self.k_per, self.k_total),
            ));
        }
        if self.k_pred >= self.k_per {
            return Err(Error::config(
                "budget.k_pred",
                format!("k_pred ({}) must be smaller than k_per ({})", self.k_pred, self.k_per),
            ));
        }
        if self.k_total >= n_agents {
            return Err(Error::config(
                "budget.k_total",
                format!("k_total ({}) must be smaller than the number of agents ({n_agents})", self.k_total),
            ));
        }
        Ok(())
    }

    pub fn t_per(&self, n_agents: usize) -> usize {
        cycle_length(n_agents, self.k_per)
    }

    pub fn t_pred(&self, n_agents: usize) -> usize {
        cycle_length(n_agents, self.k_pred)
    }
}

/// Agents granted a slot in one round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundGrant {
    pub round_index: usize,
    pub granted: BTreeSet<usize>,
}

impl RoundGrant {
    pub fn contains(&self, agent: usize) -> bool {
        self.granted.contains(&agent)
    }
}

/// `k_per` consecutive ids starting at `(round_index·k_per mod N) + 1`,
/// wrapping around.
pub fn round_robin_allocate(round_index: usize, n_agents: usize, k_per: usize) -> RoundGrant {
    assert!(n_agents > 0, "round robin needs at least one agent");
    let k = k_per.min(n_agents);
    let start = ((round_index as u128 * k_per as u128) % n_agents as u128) as usize;
    let granted = (0..k).map(|j| (start + j) % n_agents + 1).collect();
    RoundGrant { round_index, granted }
}

/// Grants the `k_pred` largest priorities, ties going to the smaller id.
pub fn predictive_allocate(round_index: usize, priorities: &BTreeMap<usize, f64>, n_agents: usize, k_pred: usize) -> Result<RoundGrant> {
    if let Some(agent) = (1..=n_agents).find(|id| !priorities.contains_key(id)) {
        return Err(Error::MissingPriority { agent });
    }
    let ranked: Vec<(usize, f64)> = (1..=n_agents).map(|id| (id, priorities[&id])).collect();
    Ok(RoundGrant { round_index, granted: top_k(ranked, k_pred) })
}

/// Slice form used by the simulator: `priorities[i]` belongs to agent `i + 1`.
pub fn predictive_allocate_slice(round_index: usize, priorities: &[f64], k_pred: usize) -> RoundGrant {
    let ranked: Vec<(usize, f64)> = priorities.iter().enumerate().map(|(i, &p)| (i + 1, p)).collect();
    RoundGrant { round_index, granted: top_k(ranked, k_pred) }
}

fn top_k(mut ranked: Vec<(usize, f64)>, k: usize) -> BTreeSet<usize> {
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.into_iter().take(k).map(|(id, _)| id).collect()
}

/// `ceil(n_agents / k_slots)`: the longest gap between two grants of one agent.
pub fn cycle_length(n_agents: usize, k_slots: usize) -> usize {
    assert!(k_slots >= 1, "cycle length needs at least one slot");
    n_agents.div_ceil(k_slots)
}
