//! Acceptance suite: one line per criterion, then a non-zero exit if any failed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use netsched::bounds::{max_periodic_bound, predictive_bound, NoiseIndexing, Scheme};
use netsched::cli::{compare, load, ComparisonReport};
use netsched::dynamics::{spectral_norm, step_system, AgentState, Matrix, SystemModel, Vector};
use netsched::estimation::{closed_form_error, compute_error, update_estimator, EstimatorPair};
use netsched::scenario::{AgentSpec, Dynamics, NoiseSpec, Policy, ScenarioConfig};
use netsched::scheduling::{cycle_length, predictive_allocate, round_robin_allocate, SlotBudget};
use netsched::simulator::run_replicate;

type Check = Result<String, String>;

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn seeds() -> Vec<u64> {
    (1..=20).collect()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn scaled(m: Matrix, norm: f64) -> Matrix {
    let current = spectral_norm(&m).unwrap();
    m * (norm / current)
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))
}

/// Symmetric or scaled-orthogonal, so that `‖A^k‖ = ‖A‖^k`.
fn random_normal_matrix(rng: &mut ChaCha8Rng, n: usize, norm: f64) -> Matrix {
    let m = random_matrix(rng, n);
    if rng.random_bool(0.5) {
        scaled(&m + m.transpose(), norm)
    } else {
        m.qr().q() * norm
    }
}

fn random_cov(rng: &mut ChaCha8Rng, n: usize, trace: f64) -> Matrix {
    let l = random_matrix(rng, n);
    let s = &l * l.transpose() + Matrix::identity(n, n) * 1e-3;
    let t = s.trace();
    s * (trace / t)
}

fn homogeneity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = [1, 2, 4][rng.random_range(0..3)];
        let norm = rng.random_range(1.0..=2.0);
        let a = random_normal_matrix(&mut rng, n, norm);
        let trace = rng.random_range(1e-6..=5.0);
        let cov = random_cov(&mut rng, n, trace);
        let delta = rng.random_range(1e-6..=1.0);
        let model = SystemModel::new(a, cov).map_err(|e| e.to_string())?;
        let agents = rng.random_range(3..=20);
        let pairs: Vec<(usize, usize)> = (1..agents)
            .flat_map(|kp| (1..kp).map(move |kq| (kp, kq)))
            .filter(|&(kp, kq)| cycle_length(agents, kp) == cycle_length(agents, kq))
            .collect();
        let Some(&(k_per, k_pred)) = pairs.choose(&mut rng) else { continue };
        let models = vec![model; agents];
        let per = max_periodic_bound(&models, delta, cycle_length(agents, k_per)).map_err(|e| e.to_string())?;
        let pred = predictive_bound(&models, delta, k_pred, NoiseIndexing::Exclusive).map_err(|e| e.to_string())?;
        worst = worst.max((pred - per).abs() / per);
    }
    ensure(worst <= 1e-12, || format!("largest relative gap {worst:.3e} > 1e-12"))?;
    Ok(format!("largest relative gap {worst:.3e}"))
}

fn periodic_validity() -> Check {
    let (a, var, delta, n, replicates, horizon, t) = (1.05, 1.0, 0.1, 4, 10_000u32, 200, 4);
    let agent = AgentSpec::new(Dynamics::Fixed(Matrix::from_element(1, 1, a)), NoiseSpec::gaussian(Matrix::from_element(1, 1, var)));
    let mut config = ScenarioConfig::homogeneous("periodic-validity", agent, n, horizon, delta, SlotBudget { k_total: 1, k_per: 1, k_pred: 1 }, Policy::Periodic);
    config.seed = 2024;
    let model = SystemModel::scalar(a, var).unwrap();
    let bound = max_periodic_bound(&[model], delta, t).map_err(|e| e.to_string())?;

    let steps = horizon - t;
    let zero = || vec![(0.0f64, 0.0f64); steps];
    let sums = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let trace = run_replicate(&config, r).map_err(|e| e.to_string())?;
            let mut acc = zero();
            for k in 0..steps {
                let i = trace.steps[k].agents.iter().position(|s| s.granted).expect("one grant per step");
                let e = trace.steps[k + t].agents[i].error_sq;
                acc[k].0 += e;
                acc[k].1 += e * e;
            }
            Ok::<_, String>(acc)
        })
        .try_reduce(zero, |mut x, y| {
            for (a, b) in x.iter_mut().zip(y) {
                a.0 += b.0;
                a.1 += b.1;
            }
            Ok(x)
        })?;

    let r = replicates as f64;
    let mut worst = f64::NEG_INFINITY;
    let mut worst_mean = 0.0;
    for (k, (s, ss)) in sums.iter().enumerate() {
        let mean = s / r;
        let se = ((ss / r - mean * mean) * r / (r - 1.0)).sqrt() / r.sqrt();
        let slack = mean - (bound + 3.0 * se);
        ensure(slack <= 0.0, || format!("k = {k}: conditional mean {mean:.4} exceeds bound {bound:.4} + 3·{se:.4}"))?;
        if slack > worst {
            worst = slack;
            worst_mean = mean;
        }
    }
    Ok(format!("bound {bound:.4}, closest conditional mean {worst_mean:.4} over {steps} grant steps"))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn predictive_validity() -> Check {
    let gains = [1.05, 1.1, 1.2, 1.3];
    let delta = 0.1;
    let models: Vec<SystemModel> = gains.iter().map(|&a| SystemModel::scalar(a, 0.0).unwrap()).collect();
    let bound = predictive_bound(&models, delta, 1, NoiseIndexing::Exclusive).map_err(|e| e.to_string())?;
    let t_pred = cycle_length(4, 1);

    // Every static order, zero noise, errors starting on the threshold.
    let mut static_worst: f64 = 0.0;
    for order in permutations(4) {
        let mut e: Vec<f64> = vec![delta.sqrt(); 4];
        for &granted in order.iter().take(t_pred) {
            let fire = e[granted] * e[granted] >= delta;
            for i in 0..4 {
                e[i] = if i == granted && fire { 0.0 } else { gains[i] * e[i] };
            }
        }
        static_worst = static_worst.max(e.iter().map(|x| x * x).fold(0.0, f64::max));
    }
    ensure(static_worst <= bound + 1e-9, || format!("static order reaches {static_worst:.6} > {bound:.6}"))?;

    // The predictive scheduler itself, for every assignment of systems to
    // ids (ties go to the smaller id, so this covers every tie order).
    let e0 = delta.sqrt() * (1.0 - 1e-12);
    let mut scheduler_worst: f64 = 0.0;
    for perm in permutations(4) {
        let agents = perm
            .iter()
            .map(|&g| {
                let mut spec = AgentSpec::new(Dynamics::Fixed(Matrix::from_element(1, 1, gains[g])), NoiseSpec::gaussian(Matrix::zeros(1, 1)));
                spec.initial_error = Some(Vector::from_element(1, e0));
                spec.x0 = Some(Vector::from_element(1, 1.0));
                spec
            })
            .collect();
        let config = ScenarioConfig {
            agents,
            ..ScenarioConfig::homogeneous("lemma", AgentSpec::new(Dynamics::Fixed(Matrix::identity(1, 1)), NoiseSpec::gaussian(Matrix::zeros(1, 1))), 4, t_pred + 1, delta, SlotBudget { k_total: 1, k_per: 1, k_pred: 1 }, Policy::Predictive)
        };
        let trace = run_replicate(&config, 0).map_err(|e| e.to_string())?;
        let worst = trace.steps.iter().flat_map(|s| s.agents.iter().map(|a| a.error_sq)).fold(0.0, f64::max);
        scheduler_worst = scheduler_worst.max(worst);
    }
    ensure(scheduler_worst <= bound + 1e-9, || format!("scheduler reaches {scheduler_worst:.6} > {bound:.6}"))?;
    Ok(format!("bound {bound:.6}; static orders max {static_worst:.6}; scheduler max {scheduler_worst:.6}"))
}

fn error_dynamics() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=4);
        let t = rng.random_range(1..=20);
        let a = scaled(random_matrix(&mut rng, n), rng.random_range(0.5..1.3));
        let model = SystemModel::new(a, Matrix::zeros(n, n)).unwrap();
        let x0 = Vector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let e0 = Vector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
        let noises: Vec<Vector> = (0..t).map(|_| Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))).collect();

        let mut truth = AgentState::new(x0.clone());
        let mut est = EstimatorPair::new(&x0 - &e0);
        for v in &noises {
            truth = step_system(&truth, &model, v).map_err(|e| e.to_string())?;
            est = update_estimator(&est, &model).map_err(|e| e.to_string())?;
        }
        let stepped = compute_error(&truth.x, &est.x_hat).map_err(|e| e.to_string())?;
        let closed = closed_form_error(&e0, &model, &noises).map_err(|e| e.to_string())?;
        worst = worst.max((stepped - closed).amax());
    }
    ensure(worst <= 1e-9, || format!("largest entry gap {worst:.3e} > 1e-9"))?;
    Ok(format!("largest entry gap {worst:.3e}"))
}

fn window_orderings(report: &ComparisonReport, w: usize) -> [f64; 3] {
    [report.mean(w, Policy::Periodic), report.mean(w, Policy::Predictive), report.mean(w, Policy::Adaptive)]
}

fn synthetic_orderings() -> Check {
    let config = load(&scenario("synthetic20.json")).map_err(|e| e.to_string())?;
    let report = compare(&config, &seeds(), 20).map_err(|e| e.to_string())?;
    let expected: Vec<std::ops::Range<usize>> = vec![0..100, 120..200, 220..300];
    ensure(report.windows == expected, || format!("windows {:?}", report.windows))?;
    let [p0, q0, _] = window_orderings(&report, 0);
    let [p1, q1, a1] = window_orderings(&report, 1);
    let [p2, q2, a2] = window_orderings(&report, 2);
    ensure(q1 < p1, || format!("[120,200): predictive {q1:.4} not below periodic {p1:.4}"))?;
    ensure(p2 < q2, || format!("[220,300): periodic {p2:.4} not below predictive {q2:.4}"))?;
    ensure(a1 <= p1.min(q1) * 1.05, || format!("[120,200): adaptive {a1:.4} above best {:.4} + 5%", p1.min(q1)))?;
    ensure(a2 <= p2.min(q2) * 1.05, || format!("[220,300): adaptive {a2:.4} above best {:.4} + 5%", p2.min(q2)))?;
    let rel = (q0 - p0).abs() / p0;
    ensure(rel <= 0.25, || format!("[0,100): predictive and periodic differ by {:.1}%", rel * 100.0))?;
    Ok(format!(
        "[0,100) per {p0:.3} pred {q0:.3} ({:.1}%); [120,200) per {p1:.3} pred {q1:.3} ada {a1:.3}; [220,300) per {p2:.3} pred {q2:.3} ada {a2:.3}",
        rel * 100.0
    ))
}

fn cartpole_orderings() -> Check {
    let config = load(&scenario("cartpole20.json")).map_err(|e| e.to_string())?;
    let report = compare(&config, &seeds(), 20).map_err(|e| e.to_string())?;
    ensure(report.windows == vec![0..100, 120..300], || format!("windows {:?}", report.windows))?;
    let pre = window_orderings(&report, 0);
    let lo = pre.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pre.iter().copied().fold(0.0, f64::max);
    ensure(hi <= lo * 1.10, || format!("pre-event spread {:.1}% > 10% ({pre:?})", (hi / lo - 1.0) * 100.0))?;
    let [p, q, a] = window_orderings(&report, 1);
    ensure(q < p, || format!("post-event predictive {q:.5} not below periodic {p:.5}"))?;
    ensure(a <= q * 1.05, || format!("post-event adaptive {a:.5} above predictive {q:.5} + 5%"))?;
    Ok(format!("pre-event spread {:.1}%; post-event per {p:.5} pred {q:.5} ada {a:.5}", (hi / lo - 1.0) * 100.0))
}

fn scheduler_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..10_000 {
        let n = rng.random_range(2..=10);
        let k = rng.random_range(1..n);
        // Coarse values so ties are common.
        let p: BTreeMap<usize, f64> = (1..=n).map(|id| (id, f64::from(rng.random_range(0..6u8)) * 0.5)).collect();
        let mut sorted: Vec<(usize, f64)> = p.iter().map(|(&i, &v)| (i, v)).collect();
        sorted.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let expected: BTreeSet<usize> = sorted.iter().take(k).map(|x| x.0).collect();
        let got = predictive_allocate(0, &p, n, k).map_err(|e| e.to_string())?.granted;
        ensure(got == expected, || format!("trial {trial}: {got:?} != {expected:?} for {p:?}"))?;
    }
    let mut subsets_checked = 0;
    for n in 2..=6usize {
        for k in 1..n {
            for _ in 0..50 {
                let p: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..4u8))).collect();
                let map: BTreeMap<usize, f64> = p.iter().enumerate().map(|(i, &v)| (i + 1, v)).collect();
                let got = predictive_allocate(0, &map, n, k).map_err(|e| e.to_string())?.granted;
                // Best size-k subset: largest total priority, then
                // lexicographically smallest ids.
                let mut best: Option<(f64, Vec<usize>)> = None;
                for mask in 0u32..(1 << n) {
                    if mask.count_ones() as usize != k {
                        continue;
                    }
                    let ids: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| i + 1).collect();
                    let total: f64 = ids.iter().map(|&i| p[i - 1]).sum();
                    let better = match &best {
                        None => true,
                        Some((bt, bids)) => total > *bt || (total == *bt && ids < *bids),
                    };
                    if better {
                        best = Some((total, ids));
                    }
                }
                let expected: BTreeSet<usize> = best.unwrap().1.into_iter().collect();
                ensure(got == expected, || format!("n={n} k={k}: {got:?} != {expected:?} for {p:?}"))?;
                subsets_checked += 1;
            }
        }
    }
    for n in 2..=30usize {
        for k in (1..n).filter(|k| n % k == 0) {
            for offset in [0, 3, 17] {
                let mut counts = vec![0; n + 1];
                for r in offset..offset + cycle_length(n, k) {
                    for id in round_robin_allocate(r, n, k).granted {
                        counts[id] += 1;
                    }
                }
                ensure(counts[1..].iter().all(|&c| c == 1), || format!("n={n} k={k}: counts {:?}", &counts[1..]))?;
            }
        }
    }
    Ok(format!("10000 random maps, {subsets_checked} exhaustive subset checks, round-robin coverage for N ≤ 30"))
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = scenario("synthetic20.json");
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_netsched"))
            .args(["simulate", "--config"])
            .arg(&config)
            .args(["--seed", "11", "--out"])
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || String::from_utf8_lossy(&status.stderr).into_owned())?;
        let trace = std::fs::read(out.join("trace.csv")).map_err(|e| e.to_string())?;
        let summary = std::fs::read(out.join("summary.csv")).map_err(|e| e.to_string())?;
        outputs.push((trace, summary));
    }
    ensure(outputs[0] == outputs[1], || "CSV outputs differ between runs".into())?;
    Ok(format!("trace.csv ({} bytes) and summary.csv identical", outputs[0].0.len()))
}

fn adaptive_decisions() -> Check {
    let config = load(&scenario("synthetic20.json")).map_err(|e| e.to_string())?;
    for seed in seeds() {
        let mut run = config.clone();
        run.seed = seed;
        run.policy = Policy::Adaptive;
        let trace = run_replicate(&run, 0).map_err(|e| e.to_string())?;
        let got: Vec<(usize, Scheme)> = trace.decisions.iter().map(|d| (d.step, d.choice.chosen)).collect();
        let expected = vec![(0, Scheme::Periodic), (100, Scheme::Predictive), (200, Scheme::Periodic)];
        ensure(got == expected, || format!("seed {seed}: decisions {got:?}"))?;
    }
    Ok("periodic → predictive → periodic for all 20 seeds".into())
}

fn main() -> ExitCode {
    type Criterion = (u32, &'static str, Duration, fn() -> Check);
    let criteria: [Criterion; 9] = [
        (1, "homogeneous ensembles give equal bounds", Duration::from_secs(1), homogeneity),
        (2, "periodic bound holds in Monte Carlo", Duration::from_secs(30), periodic_validity),
        (3, "predictive bound holds under adversarial ordering", Duration::from_secs(1), predictive_validity),
        (4, "error recursion matches closed form", Duration::from_secs(5), error_dynamics),
        (5, "synthetic ensemble orderings", Duration::from_secs(120), synthetic_orderings),
        (6, "cart-pole orderings", Duration::from_secs(120), cartpole_orderings),
        (7, "scheduler oracles", Duration::from_secs(5), scheduler_oracles),
        (8, "simulate is byte-for-byte deterministic", Duration::from_secs(120), determinism),
        (9, "adaptive decisions on the synthetic ensemble", Duration::from_secs(120), adaptive_decisions),
    ];
    let only: Option<u32> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (id, name, limit, check) in criteria {
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > limit => Err(format!("{detail}; took {:.2} s, limit {} s", elapsed.as_secs_f64(), limit.as_secs())),
            other => other,
        };
        match result {
            Ok(detail) => println!("criterion {id} PASS  {name}: {detail} ({:.2} s)", elapsed.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("criterion {id} FAIL  {name}: {why} ({:.2} s)", elapsed.as_secs_f64());
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
