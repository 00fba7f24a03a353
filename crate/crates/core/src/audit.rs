//! Randomized oracle checks and invariant audits.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::ExperimentConfig;
use crate::deviation::{DeviationSchedule, Measure, ScheduleKind};
use crate::error::Result;
use crate::estimation::Variant;
use crate::harness::{optimism_audit, run_many, run_observed, Experiment};
use crate::policy::PolicyKind;
use crate::presets::Preset;
use crate::sem::{Dag, Intervention, WeightMatrix};
use crate::theory::{f_paths, lemma3_check, theorem2_instance};

/// DAG on `n` nodes where each node draws up to `max_parents` earlier
/// parents. The last node always has at least one parent when `n > 1`.
pub fn random_dag<R: Rng + ?Sized>(rng: &mut R, n: usize, max_parents: usize) -> Dag {
    let parents = (0..n)
        .map(|i| {
            let mut pool: Vec<usize> = (0..i).collect();
            let lo = usize::from(i == n - 1 && i > 0);
            let k = rng.random_range(lo..=max_parents.min(i).max(lo));
            let mut chosen = Vec::with_capacity(k);
            for _ in 0..k {
                let j = rng.random_range(0..pool.len());
                chosen.push(pool.swap_remove(j));
            }
            chosen.sort_unstable();
            chosen
        })
        .collect();
    Dag::new(parents).expect("generated parents are ordered")
}

/// Columns drawn uniformly in `[-scale, scale]` per entry.
pub fn random_weights<R: Rng + ?Sized>(rng: &mut R, dag: Arc<Dag>, scale: f64) -> WeightMatrix {
    let cols = (0..dag.n_nodes())
        .map(|i| (0..dag.parents(i).len()).map(|_| rng.random_range(-scale..=scale)).collect())
        .collect();
    WeightMatrix::new(dag, cols).expect("shape matches")
}

fn random_unit_column<R: Rng + ?Sized>(rng: &mut R, k: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
    let n = crate::sem::norm(&v).max(1e-300);
    let r: f64 = rng.random::<f64>().powf(1.0 / k as f64);
    v.iter().map(|x| x * r / n).collect()
}

/// `(A, B_a, metrics, beta)` satisfying the compounding-error preconditions.
#[derive(Debug, Clone)]
pub struct CompoundingInstance {
    pub a: WeightMatrix,
    pub b: WeightMatrix,
    pub metrics: Vec<DMatrix<f64>>,
    pub beta: f64,
}

/// Random instance with in-degree at most `max_d` and longest path at most `max_l`.
pub fn random_compounding_instance<R: Rng + ?Sized>(rng: &mut R, max_d: usize, max_l: usize) -> CompoundingInstance {
    let dag = loop {
        let n = rng.random_range(2..=9);
        let d = rng.random_range(1..=max_d);
        let dag = random_dag(rng, n, d);
        if dag.longest_path() <= max_l && dag.max_in_degree() <= max_d {
            break Arc::new(dag);
        }
    };
    let n = dag.n_nodes();
    let beta = rng.random_range(0.0..3.0);
    let mut b_cols = Vec::with_capacity(n);
    let mut a_cols = Vec::with_capacity(n);
    let mut metrics = Vec::with_capacity(n);
    for i in 0..n {
        let k = dag.parents(i).len();
        let b = random_unit_column(rng, k);
        let g = DMatrix::from_fn(k, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let scale = 10f64.powf(rng.random_range(-1.0..3.0));
        let m = DMatrix::identity(k, k) + &g * g.transpose() * scale;
        // Step of M-norm at most beta from b.
        let u = random_unit_column(rng, k);
        let chol = m.clone().cholesky().expect("M is positive definite");
        let mut step = nalgebra::DVector::from_column_slice(&u) * beta;
        chol.l().transpose().solve_upper_triangular_mut(&mut step);
        a_cols.push(b.iter().zip(step.iter()).map(|(x, s)| x + s).collect());
        b_cols.push(b);
        metrics.push(m);
    }
    CompoundingInstance {
        a: WeightMatrix::new(dag.clone(), a_cols).unwrap(),
        b: WeightMatrix::new(dag, b_cols).unwrap(),
        metrics,
        beta,
    }
}

/// Rounds at which a nominal column sits outside its confidence ellipsoid.
pub fn coverage_violations(exp: &Experiment, seed: u64) -> Result<usize> {
    let sem = &exp.sem;
    let mut violations = 0;
    run_observed(exp, seed, |t, policy| {
        let beta = policy.radius(t);
        for i in sem.dag().nodes_with_parents() {
            for (variant, truth) in [
                (Variant::Observational, sem.b_obs().column(i)),
                (Variant::Interventional, sem.b_int().column(i)),
            ] {
                let reg = policy.regressor(i, variant).expect("node has parents");
                if reg.ellipsoid_norm(truth) > beta {
                    violations += 1;
                }
            }
        }
    })?;
    Ok(violations)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn result(name: &'static str, passed: bool, detail: String) -> AuditResult {
    AuditResult { name, passed, detail }
}

fn presets() -> Vec<Preset> {
    vec![
        Preset::Chain { n: 4 },
        Preset::ConfoundedParallel { n: 5 },
        Preset::Hierarchical { layers: vec![3, 3] },
        Preset::Theorem2 { d: 2, l: 2 },
    ]
}

/// Fast audits run by the `check` subcommand.
pub fn run_all(seed: u64) -> Result<Vec<AuditResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(2..=8);
        let dag = Arc::new(random_dag(&mut rng, n, 3));
        let w = random_weights(&mut rng, dag, 1.0);
        let fast = w.reward_map();
        let slow = f_paths(&w)?;
        for (x, y) in fast.iter().zip(&slow) {
            worst = worst.max((x - y).abs());
        }
    }
    out.push(result("reward_map_vs_paths", worst <= 1e-9, format!("max diff {worst:.2e}")));

    let mut failures = 0;
    for _ in 0..200 {
        let inst = random_compounding_instance(&mut rng, 5, 4);
        if !lemma3_check(&inst.a, &inst.b, &inst.metrics, inst.beta)?.holds {
            failures += 1;
        }
    }
    out.push(result("compounding_error_bound", failures == 0, format!("{failures} of 200 violated")));

    let mut bad = Vec::new();
    for p in presets() {
        let sem = p.instance(None)?;
        for measure in [Measure::Df, Measure::Ad] {
            for c in [0.0, 1.0, 7.5, 50.0] {
                let targets: Vec<usize> = sem.dag().nodes_with_parents().collect();
                let flip = DeviationSchedule::early_flip(&sem, measure, c, 2.0, &targets, 1000)?;
                let zero = DeviationSchedule::zeroing(&sem, measure, c, 2.0, 1000)?;
                for s in [flip, zero] {
                    if s.check_budget().is_err() {
                        bad.push(format!("{} {measure} C={c} {:?}", p.name(), s.kind()));
                    }
                }
            }
        }
    }
    out.push(result("schedule_budgets", bad.is_empty(), format!("{} violations {bad:?}", bad.len())));

    let mut gaps = Vec::new();
    for (d, l) in [(1, 1), (3, 2), (4, 2)] {
        let sem = theorem2_instance(d, l)?;
        let r = Intervention::from_nodes([sem.dag().reward_node()]);
        let gap = sem.expected_reward(r) - sem.expected_reward(Intervention::EMPTY);
        gaps.push((gap - (d as f64).powf(l as f64 / 2.0)).abs());
    }
    let max_gap = gaps.iter().copied().fold(0.0, f64::max);
    out.push(result("lower_bound_gap", max_gap <= 1e-9, format!("max error {max_gap:.2e}")));

    let mut cfg = ExperimentConfig::new(Preset::Chain { n: 4 }, 200, PolicyKind::Oracle);
    cfg.seeds = vec![0, 1];
    let curve = run_many(&Experiment::build(&cfg)?, 1)?;
    let zero = curve.points.iter().all(|p| p.mean_regret == 0.0);
    out.push(result("oracle_zero_regret", zero, format!("final {}", curve.final_regret())));

    let mut cfg = ExperimentConfig::new(Preset::Chain { n: 4 }, 300, PolicyKind::RobustLcb);
    cfg.c = 1.0;
    let exp = Experiment::build(&cfg)?;
    let mut min_gap = f64::INFINITY;
    for s in 0..2 {
        for (_, g) in optimism_audit(&exp, s, 10)? {
            min_gap = min_gap.min(g);
        }
    }
    out.push(result("optimism", min_gap >= 0.0, format!("min index - mean {min_gap:.3}")));

    let mut cfg = ExperimentConfig::new(Preset::Chain { n: 4 }, 300, PolicyKind::RobustLcb);
    cfg.measure = Measure::Df;
    cfg.schedule = ScheduleKind::EarlyFlip;
    cfg.c = 10.0;
    let exp = Experiment::build(&cfg)?;
    let mut violations = 0;
    for s in 0..3 {
        violations += coverage_violations(&exp, s)?;
    }
    out.push(result("confidence_coverage", violations == 0, format!("{violations} violations")));

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_instances_meet_preconditions() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let inst = random_compounding_instance(&mut rng, 5, 4);
            let dag = inst.b.dag();
            assert!(dag.max_in_degree() <= 5 && dag.longest_path() <= 4);
            assert!(lemma3_check(&inst.a, &inst.b, &inst.metrics, inst.beta).is_ok());
        }
    }

    #[test]
    fn random_dag_reward_has_parents() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in 2..10 {
            let dag = random_dag(&mut rng, n, 3);
            assert!(!dag.parents(n - 1).is_empty());
            assert!(dag.max_in_degree() <= 3);
        }
    }

    #[test]
    fn shipped_audits_pass() {
        for r in run_all(0).unwrap() {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}
