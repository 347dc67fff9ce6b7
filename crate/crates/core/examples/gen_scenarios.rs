//! Regenerates the bundled scenario files.
//!
//! ```text
//! cargo run --example gen_scenarios -- crates/core/scenarios
//! ```

use std::path::PathBuf;

use netsched::cartpole::{build_cartpole_scenario, CartPoleParams, DEFAULT_DT, DEFAULT_FEEDBACK};
use netsched::cli::emit_scenario;
use netsched::dynamics::Matrix;
use netsched::scenario::{ASampling, AgentSpec, Dynamics, NoiseSpec, Policy, ScenarioConfig, ScenarioEvent};
use netsched::scheduling::SlotBudget;

fn iso(var: f64) -> NoiseSpec {
    NoiseSpec::gaussian(Matrix::identity(4, 4) * var)
}

/// 20 random 4-dim systems. Agent 20's noise jumps at step 100; at step 200
/// agents 6..20 all become noisier, so demand is spread out again.
fn synthetic20() -> ScenarioConfig {
    let sampling = ASampling { dim: 4, low: -1.0, high: 1.0, target_norm: Some(1.2) };
    let agent = AgentSpec::new(Dynamics::Sampled(sampling), iso(0.04));
    let budget = SlotBudget { k_total: 5, k_per: 5, k_pred: 2 };
    let mut config = ScenarioConfig::homogeneous("synthetic20", agent, 20, 300, 0.1, budget, Policy::Adaptive);
    config.events = vec![
        ScenarioEvent { step: 100, agents: vec![20], noise: Some(iso(6.25)), a_matrix: None, estimator_a: None },
        ScenarioEvent { step: 200, agents: (6..=20).collect(), noise: Some(iso(0.25)), a_matrix: None, estimator_a: None },
    ];
    config
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "scenarios".into()));
    std::fs::create_dir_all(&dir)?;
    let cartpole = build_cartpole_scenario(&CartPoleParams::default(), DEFAULT_DT, &DEFAULT_FEEDBACK)?;
    for config in [synthetic20(), cartpole] {
        let path = dir.join(format!("{}.json", config.name));
        std::fs::write(&path, emit_scenario(&config)?)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
