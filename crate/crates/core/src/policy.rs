//! Arm-selection strategies.
//!
//! The SEM-aware policies keep one observational and one interventional
//! regressor per node with parents and score an arm by an optimistic
//! estimate of its mean reward. Two index solvers are available:
//!
//! * `Bonus`: `<f(B_a), nu> + ||nu|| sum_l d^{(l-1)/2} (r+1)^l max_i lambda(M_i)^{-1/2}`,
//!   where `B_a` stacks the estimates selected by the arm and `r` is the
//!   confidence radius. This dominates the maximum over the confidence sets.
//! * `ProjectedAscent`: maximizes `<f(Theta), nu>` over columns restricted to
//!   their ellipsoids intersected with the unit ball.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::ascent::{self, AscentParams, ColumnSet};
use crate::estimation::{weight, ConfidenceSpec, NodeRegressor, Variant};
use crate::sem::{dot, norm, reward_map_columns, Dag, Intervention, SemInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    RobustLcb,
    LinSemUcb,
    LinSemUcbRobust,
    VanillaUcb,
    Oracle,
}

impl PolicyKind {
    pub fn uses_sem(self) -> bool {
        matches!(
            self,
            PolicyKind::RobustLcb | PolicyKind::LinSemUcb | PolicyKind::LinSemUcbRobust
        )
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::RobustLcb => "robust_lcb",
            PolicyKind::LinSemUcb => "linsem_ucb",
            PolicyKind::LinSemUcbRobust => "linsem_ucb_robust",
            PolicyKind::VanillaUcb => "vanilla_ucb",
            PolicyKind::Oracle => "oracle",
        })
    }
}

impl FromStr for PolicyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "robust_lcb" => Ok(PolicyKind::RobustLcb),
            "linsem_ucb" => Ok(PolicyKind::LinSemUcb),
            "linsem_ucb_robust" => Ok(PolicyKind::LinSemUcbRobust),
            "vanilla_ucb" => Ok(PolicyKind::VanillaUcb),
            "oracle" => Ok(PolicyKind::Oracle),
            _ => Err(format!(
                "unknown algorithm `{s}` (expected robust_lcb|linsem_ucb|linsem_ucb_robust|vanilla_ucb|oracle)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Solver {
    Bonus,
    ProjectedAscent(AscentParams),
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Solver::Bonus => "bonus",
            Solver::ProjectedAscent(_) => "pga",
        })
    }
}

/// Radius of the unweighted ridge ellipsoid for a time-invariant model:
/// `1 + sqrt(2 log(1/delta) + d log(1 + m T^2 / d))`.
pub fn linsem_radius(horizon: usize, spec: &ConfidenceSpec) -> f64 {
    let t = horizon as f64;
    let log_term = if spec.d == 0 {
        0.0
    } else {
        let d = spec.d as f64;
        d * (spec.m_x * t * t / d).ln_1p()
    };
    1.0 + (2.0 * (1.0 / spec.delta).ln() + log_term).sqrt()
}

/// Ridge radius inflated to absorb a deviation budget:
/// `1 + C m^2 + sqrt(2 log(1/delta) + d log(1 + m^2 t / d))`.
pub fn linsem_robust_radius(t: usize, spec: &ConfidenceSpec) -> f64 {
    let m = spec.m_x;
    let log_term = if spec.d == 0 {
        0.0
    } else {
        let d = spec.d as f64;
        d * (m * m * t as f64 / d).ln_1p()
    };
    1.0 + spec.c_budget * m * m + (2.0 * (1.0 / spec.delta).ln() + log_term).sqrt()
}

/// `||nu|| sum_{l=1..L} d^{(l-1)/2} (r+1)^l`.
pub fn bonus_coefficient(nu: &[f64], d: usize, l: usize, radius: f64) -> f64 {
    let d = d as f64;
    let s: f64 = (1..=l)
        .map(|k| d.powf((k as f64 - 1.0) / 2.0) * (radius + 1.0).powi(k as i32))
        .sum();
    norm(nu) * s
}

#[derive(Debug, Clone)]
pub struct PolicyState {
    kind: PolicyKind,
    solver: Solver,
    dag: Arc<Dag>,
    nu: Vec<f64>,
    m_x: f64,
    spec: ConfidenceSpec,
    horizon: usize,
    arms: Arc<[Intervention]>,
    /// `[observational, interventional]` per node; `None` for roots.
    regressors: Vec<Option<[NodeRegressor; 2]>>,
    estimable: u64,
    arm_counts: Vec<usize>,
    arm_means: Vec<f64>,
    oracle_arm: usize,
    restart_seed: u64,
    radius_override: Option<f64>,
}

const EMPTY: &[f64] = &[];

impl PolicyState {
    /// The policy sees the graph, the noise means and `m_x`, never the
    /// weights. The oracle additionally reads the nominal best arm.
    pub fn new(
        kind: PolicyKind,
        sem: &SemInstance,
        arms: Arc<[Intervention]>,
        spec: ConfidenceSpec,
        horizon: usize,
        solver: Solver,
    ) -> Self {
        assert!(!arms.is_empty(), "policy needs at least one arm");
        let dag = sem.dag().clone();
        let regressors = (0..dag.n_nodes())
            .map(|i| {
                let k = dag.parents(i).len();
                (k > 0).then(|| {
                    [
                        NodeRegressor::new(i, Variant::Observational, k),
                        NodeRegressor::new(i, Variant::Interventional, k),
                    ]
                })
            })
            .collect();
        let estimable = dag.nodes_with_parents().fold(0u64, |acc, i| acc | 1 << i);
        let oracle_arm = if kind == PolicyKind::Oracle {
            sem.best_arm(&arms).0
        } else {
            0
        };
        Self {
            kind,
            solver,
            nu: sem.nu().to_vec(),
            m_x: sem.m_x(),
            spec,
            horizon,
            arm_counts: vec![0; arms.len()],
            arm_means: vec![0.0; arms.len()],
            arms,
            regressors,
            estimable,
            oracle_arm,
            dag,
            restart_seed: 0,
            radius_override: None,
        }
    }

    /// Seed for the random restarts of the projected solver.
    pub fn with_restart_seed(mut self, seed: u64) -> Self {
        self.restart_seed = seed;
        self
    }

    /// Forces a fixed confidence radius for every SEM policy.
    pub fn set_radius_override(&mut self, radius: Option<f64>) {
        self.radius_override = radius;
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn arms(&self) -> &[Intervention] {
        &self.arms
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    /// Replaces the known noise means (used to probe index scaling).
    pub fn set_nu(&mut self, nu: Vec<f64>) {
        assert_eq!(nu.len(), self.nu.len());
        self.nu = nu;
    }

    pub fn regressor(&self, node: usize, variant: Variant) -> Option<&NodeRegressor> {
        self.regressors[node].as_ref().map(|pair| &pair[variant as usize])
    }

    /// `(N_i, N*_i)`: rounds absorbed by each variant.
    pub fn counts(&self, node: usize) -> (usize, usize) {
        self.regressors[node]
            .as_ref()
            .map_or((0, 0), |[o, s]| (o.count(), s.count()))
    }

    pub fn arm_counts(&self) -> &[usize] {
        &self.arm_counts
    }

    /// Confidence radius used at round `t`.
    pub fn radius(&self, t: usize) -> f64 {
        if let Some(r) = self.radius_override {
            return r;
        }
        match self.kind {
            PolicyKind::RobustLcb => self.spec.beta(t),
            PolicyKind::LinSemUcb => linsem_radius(self.horizon, &self.spec),
            PolicyKind::LinSemUcbRobust => linsem_robust_radius(t, &self.spec),
            PolicyKind::VanillaUcb | PolicyKind::Oracle => 0.0,
        }
    }

    fn variant_reg(&self, node: usize, a: Intervention) -> Option<&NodeRegressor> {
        self.regressor(node, Variant::of(a.contains(node)))
    }

    /// `<f(B_hat_a), nu>` from the current estimates.
    pub fn estimated_reward(&self, a: Intervention) -> f64 {
        let f = reward_map_columns(&self.dag, |i| {
            self.variant_reg(i, a).map_or(EMPTY, NodeRegressor::estimate)
        });
        dot(&f, &self.nu)
    }

    fn inv_sqrt_eigs(&self) -> Vec<[f64; 2]> {
        self.regressors
            .iter()
            .map(|pair| match pair {
                Some([o, s]) => [
                    o.effective_min_eig().powf(-0.5),
                    s.effective_min_eig().powf(-0.5),
                ],
                None => [0.0, 0.0],
            })
            .collect()
    }

    fn bonus_from_cache(&self, a: Intervention, t: usize, cache: &[[f64; 2]]) -> f64 {
        let lam = self
            .dag
            .nodes_with_parents()
            .map(|i| cache[i][a.contains(i) as usize])
            .fold(0.0, f64::max);
        let coef = bonus_coefficient(
            &self.nu,
            self.dag.max_in_degree(),
            self.dag.longest_path(),
            self.radius(t),
        );
        self.estimated_reward(a) + coef * lam
    }

    /// Closed-form optimistic index of arm `a` at round `t`.
    pub fn ucb_index_bonus(&self, a: Intervention, t: usize) -> f64 {
        self.bonus_from_cache(a, t, &self.inv_sqrt_eigs())
    }

    /// The closed-form index with a LinSEM radius in place of the policy's own.
    pub fn linsem_index(&self, a: Intervention, t: usize, robust: bool) -> f64 {
        let r = if robust {
            linsem_robust_radius(t, &self.spec)
        } else {
            linsem_radius(self.horizon, &self.spec)
        };
        let lam = self
            .dag
            .nodes_with_parents()
            .map(|i| self.variant_reg(i, a).unwrap().effective_min_eig().powf(-0.5))
            .fold(0.0, f64::max);
        let coef = bonus_coefficient(&self.nu, self.dag.max_in_degree(), self.dag.longest_path(), r);
        self.estimated_reward(a) + coef * lam
    }

    fn column_sets(&self, t: usize) -> Vec<Option<[ColumnSet; 2]>> {
        let r = self.radius(t);
        self.regressors
            .iter()
            .map(|pair| {
                pair.as_ref()
                    .map(|[o, s]| [ColumnSet::from_regressor(o, r), ColumnSet::from_regressor(s, r)])
            })
            .collect()
    }

    fn ascent_from_sets(
        &self,
        a: Intervention,
        sets: &[Option<[ColumnSet; 2]>],
        params: &AscentParams,
        t: usize,
    ) -> f64 {
        let chosen: Vec<Option<&ColumnSet>> = sets
            .iter()
            .enumerate()
            .map(|(i, s)| s.as_ref().map(|pair| &pair[a.contains(i) as usize]))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.restart_seed);
        rng.set_stream(t as u64);
        ascent::maximize(&self.dag, &self.nu, &chosen, params, || {
            let z: f64 = rng.sample(StandardNormal);
            let u: f64 = rng.random();
            (z, u)
        })
    }

    /// Projected gradient ascent on `<f(Theta), nu>` over the confidence sets.
    pub fn ucb_index_projected_ascent(&self, a: Intervention, t: usize, params: &AscentParams) -> f64 {
        self.ascent_from_sets(a, &self.column_sets(t), params, t)
    }

    /// Index of every arm at round `t`.
    pub fn indices(&self, t: usize) -> Vec<f64> {
        let n_arms = self.arms.len();
        match self.kind {
            PolicyKind::Oracle => (0..n_arms)
                .map(|k| if k == self.oracle_arm { 1.0 } else { 0.0 })
                .collect(),
            PolicyKind::VanillaUcb => {
                let log_t = (t.max(1) as f64).ln();
                (0..n_arms)
                    .map(|k| {
                        let n = self.arm_counts[k];
                        if n == 0 {
                            f64::INFINITY
                        } else {
                            self.arm_means[k] + self.m_x * (2.0 * log_t / n as f64).sqrt()
                        }
                    })
                    .collect()
            }
            _ => {
                // Arms that agree on every node with parents share an index.
                let mut memo: HashMap<u64, f64> = HashMap::new();
                match self.solver {
                    Solver::Bonus => {
                        let cache = self.inv_sqrt_eigs();
                        self.arms
                            .iter()
                            .map(|&a| {
                                *memo
                                    .entry(a.bits() & self.estimable)
                                    .or_insert_with(|| self.bonus_from_cache(a, t, &cache))
                            })
                            .collect()
                    }
                    Solver::ProjectedAscent(params) => {
                        let sets = self.column_sets(t);
                        self.arms
                            .iter()
                            .map(|&a| {
                                *memo
                                    .entry(a.bits() & self.estimable)
                                    .or_insert_with(|| self.ascent_from_sets(a, &sets, &params, t))
                            })
                            .collect()
                    }
                }
            }
        }
    }

    /// Position in the arm list of the largest index; ties go to the lowest position.
    pub fn select(&self, t: usize) -> usize {
        assert!(t >= 1, "rounds are 1-based");
        if self.kind == PolicyKind::Oracle {
            return self.oracle_arm;
        }
        argmax(&self.indices(t))
    }

    /// Absorbs the sample observed after playing `arms[arm]` at round `t`.
    pub fn observe(&mut self, arm: usize, x: &[f64], _t: usize) {
        let a = self.arms[arm];
        self.arm_counts[arm] += 1;
        let reward = x[self.dag.reward_node()];
        let n = self.arm_counts[arm] as f64;
        self.arm_means[arm] += (reward - self.arm_means[arm]) / n;
        if !self.kind.uses_sem() {
            return;
        }
        let c = self.spec.c_budget;
        for i in 0..self.dag.n_nodes() {
            let Some(pair) = self.regressors[i].as_mut() else {
                continue;
            };
            let reg = &mut pair[a.contains(i) as usize];
            let x_pa: Vec<f64> = self.dag.parents(i).iter().map(|&p| x[p]).collect();
            let w = match self.kind {
                PolicyKind::RobustLcb => weight(&x_pa, reg, c),
                _ => 1.0,
            };
            reg.update(w, &x_pa, x[i], self.nu[i]);
        }
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}
