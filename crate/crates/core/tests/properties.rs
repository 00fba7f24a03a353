use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use causal_bandits::ascent::AscentParams;
use causal_bandits::audit::{random_dag, random_weights};
use causal_bandits::config::{ArmSet, ExperimentConfig};
use causal_bandits::deviation::{DeviationSchedule, Measure, ScheduleKind};
use causal_bandits::estimation::{weight, ConfidenceSpec, NodeRegressor, Variant};
use causal_bandits::harness::{optimism_audit, run_many, run_once, Experiment};
use causal_bandits::policy::{PolicyKind, PolicyState, Solver};
use causal_bandits::presets::Preset;
use causal_bandits::sem::{propagate, Intervention, SemInstance};

fn spec(sem: &SemInstance, c: f64, horizon: usize) -> ConfidenceSpec {
    let delta = 1.0 / (2.0 * sem.n_nodes() as f64 * horizon as f64);
    ConfidenceSpec::new(delta, c, sem.m_x(), sem.dag().max_in_degree()).unwrap()
}

fn pga() -> Solver {
    Solver::ProjectedAscent(AscentParams::default())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn expected_reward_is_linear_in_noise_means(
        seed in any::<u64>(),
        n in 2usize..9,
        nu in prop::collection::vec(-2.0f64..2.0, 9),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dag = Arc::new(random_dag(&mut rng, n, 3));
        let w = random_weights(&mut rng, dag, 1.0);
        let nu = &nu[..n];
        let direct = propagate(&w, nu)[n - 1];
        prop_assert!((w.expected_reward(nu) - direct).abs() <= 1e-9 * (1.0 + direct.abs()));
    }

    #[test]
    fn sample_weights_never_exceed_inverse_budget(
        xs in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 1..30),
        c in 0.5f64..50.0,
    ) {
        let mut reg = NodeRegressor::new(3, Variant::Observational, 3);
        for x in &xs {
            let w = weight(x, &reg, c.max(1.0));
            prop_assert!(w > 0.0 && w <= 1.0 / c.max(1.0) + 1e-15);
            reg.update(w, x, 0.3, 0.0);
        }
    }

    #[test]
    fn generated_schedules_respect_their_budget(
        c in 0.0f64..800.0,
        m_c in 1.0f64..4.0,
        horizon in 1usize..3000,
        preset in 0usize..3,
        ad in any::<bool>(),
    ) {
        let preset = [
            Preset::Chain { n: 4 },
            Preset::ConfoundedParallel { n: 4 },
            Preset::Hierarchical { layers: vec![2, 2] },
        ][preset].clone();
        let sem = preset.instance(None).unwrap();
        let measure = if ad { Measure::Ad } else { Measure::Df };
        let targets: Vec<usize> = sem.dag().nodes_with_parents().collect();
        // Too long for the horizon is a reported error, never a silent overrun.
        for s in [
            DeviationSchedule::early_flip(&sem, measure, c, m_c, &targets, horizon),
            DeviationSchedule::zeroing(&sem, measure, c, m_c, horizon),
        ]
        .into_iter()
        .flatten()
        {
            prop_assert!(s.check_budget().is_ok());
            prop_assert!(s.last_round() <= horizon);
        }
    }
}

/// Random policy state built from `rounds` nominal samples under random arms.
fn random_state(rng: &mut ChaCha8Rng, kind: PolicyKind) -> (PolicyState, usize) {
    let preset = match rng.random_range(0..3) {
        0 => Preset::Chain { n: 4 },
        1 => Preset::ConfoundedParallel { n: 4 },
        _ => Preset::Hierarchical { layers: vec![2, 2] },
    };
    let sem = preset.instance(None).unwrap();
    let arms: Arc<[Intervention]> = Intervention::enumerate_all(sem.n_nodes()).into();
    let horizon = 500;
    let c = [1.0, 5.0, 50.0][rng.random_range(0..3)];
    let mut p = PolicyState::new(kind, &sem, arms.clone(), spec(&sem, c, horizon), horizon, pga())
        .with_restart_seed(rng.random());
    let rounds = rng.random_range(0..60);
    for t in 1..=rounds {
        let k = rng.random_range(0..arms.len());
        let x = sem.sample(&sem.compose_weights(arms[k]), rng).unwrap().x;
        p.observe(k, &x, t);
    }
    (p, rounds + 1)
}

#[test]
fn ascent_index_never_exceeds_bonus_index() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = f64::NEG_INFINITY;
    for state in 0..1000 {
        let kind = [PolicyKind::RobustLcb, PolicyKind::LinSemUcb][state % 2];
        let (p, t) = random_state(&mut rng, kind);
        let a = p.arms()[rng.random_range(0..p.arms().len())];
        let ascent = p.ucb_index_projected_ascent(a, t, &AscentParams::default());
        let bonus = p.ucb_index_bonus(a, t);
        worst = worst.max(ascent - bonus);
        assert!(ascent <= bonus + 1e-9, "state {state}: ascent {ascent} > bonus {bonus}");
    }
    assert!(worst <= 0.0 + 1e-9);
}

#[test]
fn ascent_index_is_at_least_the_estimate_when_it_is_feasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let (p, t) = random_state(&mut rng, PolicyKind::RobustLcb);
        let dag_estimable = (0..p.arms().len()).map(|k| p.arms()[k]).collect::<Vec<_>>();
        for a in dag_estimable.into_iter().take(4) {
            let inside = (0..p.nu().len()).all(|i| {
                let v = Variant::of(a.contains(i));
                p.regressor(i, v)
                    .is_none_or(|r| r.estimate().iter().map(|x| x * x).sum::<f64>() <= 1.0)
            });
            if inside {
                let v = p.ucb_index_projected_ascent(a, t, &AscentParams::default());
                assert!(v >= p.estimated_reward(a) - 1e-12);
            }
        }
    }
}

#[test]
fn optimism_holds_on_chain_runs() {
    let mut cfg = ExperimentConfig::new(Preset::Chain { n: 4 }, 400, PolicyKind::RobustLcb);
    cfg.c = 5.0;
    cfg.measure = Measure::Ad;
    let exp = Experiment::build(&cfg).unwrap();
    for seed in 0..4 {
        for (t, gap) in optimism_audit(&exp, seed, 20).unwrap() {
            assert!(gap >= 0.0, "seed {seed} round {t}: gap {gap}");
        }
    }
}

#[test]
fn node_counts_add_up_to_the_horizon() {
    for algo in [PolicyKind::RobustLcb, PolicyKind::LinSemUcbRobust, PolicyKind::VanillaUcb] {
        let mut cfg = ExperimentConfig::new(Preset::Hierarchical { layers: vec![2, 2] }, 300, algo);
        cfg.c = 10.0;
        cfg.measure = Measure::Df;
        let exp = Experiment::build(&cfg).unwrap();
        let traj = run_once(&exp, 9).unwrap();
        assert_eq!(traj.arm_counts.iter().sum::<usize>(), 300);
        for i in exp.sem.dag().nodes_with_parents() {
            let (obs, int) = traj.node_counts[i];
            if algo.uses_sem() {
                assert_eq!(obs + int, 300, "{algo} node {i}");
            }
        }
    }
}

#[test]
fn worker_count_does_not_change_results() {
    for solver in [Solver::Bonus, pga()] {
        let mut cfg = ExperimentConfig::new(Preset::Chain { n: 4 }, 300, PolicyKind::RobustLcb);
        cfg.c = 17.0;
        cfg.measure = Measure::Ad;
        cfg.solver = solver;
        cfg.seeds = vec![5, 1, 3, 2, 8, 0];
        let exp = Experiment::build(&cfg).unwrap();
        let one = run_many(&exp, 1).unwrap();
        assert_eq!(one, run_many(&exp, 8).unwrap());
        cfg.seeds.reverse();
        assert_eq!(one, run_many(&Experiment::build(&cfg).unwrap(), 3).unwrap());
    }
}

#[test]
fn vanilla_ucb_reads_only_rewards() {
    // Same reward stream, different arm identities, noise means and
    // non-reward coordinates: the selections must coincide.
    let sem = Preset::Chain { n: 4 }.instance(None).unwrap();
    let atomic: Arc<[Intervention]> = Intervention::enumerate_atomic(4).into();
    let other: Arc<[Intervention]> = ArmSet::List(vec![
        Intervention::from_nodes([0, 1, 2, 3]),
        Intervention::from_nodes([1, 2]),
        Intervention::from_nodes([3]),
        Intervention::from_nodes([0, 3]),
        Intervention::EMPTY,
    ])
    .enumerate(4)
    .unwrap()
    .into();
    let s = spec(&sem, 1.0, 2000);
    let mut a = PolicyState::new(PolicyKind::VanillaUcb, &sem, atomic, s, 2000, Solver::Bonus);
    let mut b = PolicyState::new(PolicyKind::VanillaUcb, &sem, other, s, 2000, Solver::Bonus);
    b.set_nu(vec![9.0, -3.0, 0.5, 7.0]);
    let means = [0.2, 0.9, 0.4, 1.1, 0.6];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for t in 1..=2000 {
        let k = a.select(t);
        assert_eq!(k, b.select(t), "round {t}");
        let reward = means[k] + rng.random_range(-1.0..1.0);
        let xa = [rng.random(), rng.random(), rng.random(), reward];
        let xb = [rng.random::<f64>() * 5.0, -1.0, 2.0, reward];
        a.observe(k, &xa, t);
        b.observe(k, &xb, t);
    }
    assert_eq!(a.arm_counts(), b.arm_counts());
}

#[test]
fn unit_budget_recovers_the_time_invariant_estimator() {
    // With |X_1| <= 1 every weight is exactly 1 at C = 1, so the robust
    // policy must retrace the unweighted one when both use the same radius.
    let preset = Preset::Chain { n: 2 };
    let sem = preset.instance(Some(&[0.0, 0.7])).unwrap();
    let arms: Arc<[Intervention]> = Intervention::enumerate_all(2).into();
    let horizon = 1500;
    let s = spec(&sem, 1.0, horizon);
    for solver in [Solver::Bonus, pga()] {
        let mut robust = PolicyState::new(PolicyKind::RobustLcb, &sem, arms.clone(), s, horizon, solver);
        let mut plain = PolicyState::new(PolicyKind::LinSemUcb, &sem, arms.clone(), s, horizon, solver);
        robust.set_radius_override(Some(2.0));
        plain.set_radius_override(Some(2.0));
        // A nonzero belief about nu_1 keeps the indices from tying.
        robust.set_nu(vec![0.4, 0.7]);
        plain.set_nu(vec![0.4, 0.7]);
        let schedule = DeviationSchedule::none(&sem);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut played = Vec::new();
        for t in 1..=horizon {
            let k = robust.select(t);
            assert_eq!(k, plain.select(t), "{solver} round {t}");
            let w = schedule.apply(t, &sem.compose_weights(arms[k]));
            let x = sem.sample(&w, &mut rng).unwrap().x;
            robust.observe(k, &x, t);
            plain.observe(k, &x, t);
            played.push(k);
        }
        for v in [Variant::Observational, Variant::Interventional] {
            assert_eq!(
                robust.regressor(1, v).unwrap().estimate(),
                plain.regressor(1, v).unwrap().estimate()
            );
        }
        assert!(played.iter().any(|&k| k != played[0]));
    }
}

#[test]
fn early_flip_targets_default_to_nodes_with_parents() {
    let mut cfg = ExperimentConfig::new(Preset::Chain { n: 4 }, 1000, PolicyKind::RobustLcb);
    cfg.c = 6.0;
    cfg.measure = Measure::Df;
    cfg.schedule = ScheduleKind::EarlyFlip;
    let exp = Experiment::build(&cfg).unwrap();
    let touched: Vec<usize> = exp.schedule.shifts(1).iter().map(|(i, _)| *i).collect();
    assert_eq!(touched, vec![1, 2, 3]);
}

#[test]
fn emitted_weights_stay_within_their_bounds() {
    for (preset, c) in [
        (Preset::Chain { n: 4 }, 3.0),
        (Preset::Hierarchical { layers: vec![3, 3] }, 40.0),
        (Preset::ConfoundedParallel { n: 5 }, 1.0),
    ] {
        let mut cfg = ExperimentConfig::new(preset, 400, PolicyKind::RobustLcb);
        cfg.c = c;
        cfg.measure = Measure::Ad;
        let exp = Experiment::build(&cfg).unwrap();
        let mut p = exp.policy(4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m_x = exp.sem.m_x();
        for t in 1..=400 {
            let k = p.select(t);
            let a = exp.arms[k];
            let x = exp.sem.sample(&exp.schedule.apply(t, &exp.sem.compose_weights(a)), &mut rng).unwrap().x;
            for i in exp.sem.dag().nodes_with_parents() {
                let reg = p.regressor(i, Variant::of(a.contains(i))).unwrap();
                let x_pa: Vec<f64> = exp.sem.dag().parents(i).iter().map(|&j| x[j]).collect();
                let w = weight(&x_pa, reg, c);
                assert!(w <= 1.0 / c + 1e-15 && w >= 1.0 / (c * m_x) - 1e-15, "w {w}");
                assert!(w * reg.exploration_bonus(&x_pa) <= 1.0 / c + 1e-12);
            }
            p.observe(k, &x, t);
        }
    }
}
