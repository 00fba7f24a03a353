//! Graph presets used by the experiments.
//!
//! * `chain`: `1 -> 2 -> ... -> N`, observational weight 0.5 and
//!   interventional weight 1 on every edge.
//! * `confounded_parallel`: node 1 is a parent of every other node and the
//!   reward node is a child of every other node (so the edge `1 -> N`
//!   exists). Middle nodes use 0.5 / 1; the reward column uses
//!   `0.5/sqrt(N-1)` / `1/sqrt(N-1)`.
//! * `hierarchical`: fully connected layers feeding a reward node; node `i`
//!   uses `0.5/sqrt(|Pa(i)|)` / `1/sqrt(|Pa(i)|)`.
//! * `theorem2`: the lower-bound instance, see [`crate::theory::theorem2_instance`].
//!
//! Unless overridden, noise means are drawn once from `U[0, 2]` with a fixed
//! instance seed and each round adds `U[-1, 1]`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sem::{Dag, NoiseSpec, SemInstance, WeightMatrix};
use crate::theory;

/// Seed for the noise-mean draw shared by every run of a preset.
pub const INSTANCE_SEED: u64 = 0x5eed_0001;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Preset {
    Chain { n: usize },
    ConfoundedParallel { n: usize },
    Hierarchical { layers: Vec<usize> },
    Theorem2 { d: usize, l: usize },
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::Chain { .. } => "chain",
            Preset::ConfoundedParallel { .. } => "confounded_parallel",
            Preset::Hierarchical { .. } => "hierarchical",
            Preset::Theorem2 { .. } => "theorem2",
        }
    }

    pub fn dag(&self) -> Result<Dag> {
        match self {
            Preset::Chain { n } => {
                if *n < 2 {
                    return Err(Error::config("n", "chain needs at least 2 nodes"));
                }
                Dag::chain(*n)
            }
            Preset::ConfoundedParallel { n } => {
                if *n < 3 {
                    return Err(Error::config("n", "confounded_parallel needs at least 3 nodes"));
                }
                let mut parents = vec![vec![]];
                for _ in 1..n - 1 {
                    parents.push(vec![0]);
                }
                parents.push((0..n - 1).collect());
                Dag::new(parents)
            }
            Preset::Hierarchical { layers } => {
                if layers.is_empty() || layers.contains(&0) {
                    return Err(Error::config("layers", "need at least one non-empty layer"));
                }
                Dag::layered(layers)
            }
            Preset::Theorem2 { d, l } => {
                if *d == 0 || *l == 0 {
                    return Err(Error::config("d", "theorem2 needs d >= 1 and L >= 1"));
                }
                Dag::layered(&vec![*d; *l])
            }
        }
    }

    /// Builds the instance. `nu_override` replaces the noise means while
    /// keeping the preset's noise shape.
    pub fn instance(&self, nu_override: Option<&[f64]>) -> Result<SemInstance> {
        if let Preset::Theorem2 { d, l } = self {
            let sem = theory::theorem2_instance(*d, *l)?;
            return match nu_override {
                None => Ok(sem),
                Some(nu) => with_means(&sem, nu),
            };
        }
        let dag = Arc::new(self.dag()?);
        let (obs, int) = self.weights(&dag);
        let n = dag.n_nodes();
        let means: Vec<f64> = match nu_override {
            Some(nu) => {
                if nu.len() != n {
                    return Err(Error::config(
                        "nu_override",
                        format!("expected {n} values, got {}", nu.len()),
                    ));
                }
                nu.to_vec()
            }
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(INSTANCE_SEED);
                (0..n).map(|_| rng.random_range(0.0..=2.0)).collect()
            }
        };
        let noise = means
            .into_iter()
            .map(|mean| NoiseSpec::Uniform {
                mean,
                half_width: 1.0,
            })
            .collect();
        SemInstance::new(
            WeightMatrix::new(dag.clone(), obs)?,
            WeightMatrix::new(dag, int)?,
            noise,
        )
    }

    fn weights(&self, dag: &Dag) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n = dag.n_nodes();
        let mut obs = Vec::with_capacity(n);
        let mut int = Vec::with_capacity(n);
        for i in 0..n {
            let k = dag.parents(i).len();
            let (o, s) = match self {
                Preset::Chain { .. } => (0.5, 1.0),
                Preset::ConfoundedParallel { .. } => {
                    if i == n - 1 {
                        let r = ((n - 1) as f64).sqrt();
                        (0.5 / r, 1.0 / r)
                    } else {
                        (0.5, 1.0)
                    }
                }
                Preset::Hierarchical { .. } | Preset::Theorem2 { .. } => {
                    let r = (k.max(1) as f64).sqrt();
                    (0.5 / r, 1.0 / r)
                }
            };
            obs.push(vec![o; k]);
            int.push(vec![s; k]);
        }
        (obs, int)
    }
}

fn with_means(sem: &SemInstance, nu: &[f64]) -> Result<SemInstance> {
    if nu.len() != sem.n_nodes() {
        return Err(Error::config(
            "nu_override",
            format!("expected {} values, got {}", sem.n_nodes(), nu.len()),
        ));
    }
    let noise = sem
        .noise()
        .iter()
        .zip(nu)
        .map(|(spec, &mean)| match *spec {
            NoiseSpec::Uniform { half_width, .. } => NoiseSpec::Uniform { mean, half_width },
            NoiseSpec::TruncatedGaussian { sd, clip, .. } => {
                NoiseSpec::TruncatedGaussian { mean, sd, clip }
            }
        })
        .collect();
    SemInstance::new(sem.b_obs().clone(), sem.b_int().clone(), noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sem::{norm, Intervention};

    fn all_presets() -> Vec<Preset> {
        let mut v = Vec::new();
        for n in 2..=12 {
            v.push(Preset::Chain { n });
        }
        for n in 3..=12 {
            v.push(Preset::ConfoundedParallel { n });
        }
        for layers in [vec![1], vec![3, 3], vec![9, 3], vec![2, 4, 1], vec![5, 5]] {
            v.push(Preset::Hierarchical { layers });
        }
        for d in 1..=4 {
            for l in 1..=3 {
                v.push(Preset::Theorem2 { d, l });
            }
        }
        v
    }

    #[test]
    fn every_preset_has_unit_bounded_columns() {
        for p in all_presets() {
            let sem = p.instance(None).unwrap();
            for w in [sem.b_obs(), sem.b_int()] {
                for col in w.columns() {
                    assert!(norm(col) <= 1.0 + 1e-12, "{p:?}");
                }
            }
        }
    }

    #[test]
    fn chain_weights() {
        let sem = Preset::Chain { n: 4 }.instance(None).unwrap();
        for i in 1..4 {
            assert_eq!(sem.b_obs().column(i), &[0.5]);
            assert_eq!(sem.b_int().column(i), &[1.0]);
        }
        assert!(sem.nu().iter().all(|&m| (0.0..=2.0).contains(&m)));
    }

    #[test]
    fn confounded_parallel_structure() {
        let dag = Preset::ConfoundedParallel { n: 5 }.dag().unwrap();
        assert_eq!(dag.parents(4), &[0, 1, 2, 3]);
        for i in 1..4 {
            assert_eq!(dag.parents(i), &[0]);
        }
        assert_eq!(dag.max_in_degree(), 4);
        assert_eq!(dag.longest_path(), 2);
        let sem = Preset::ConfoundedParallel { n: 5 }.instance(None).unwrap();
        assert!((norm(sem.b_obs().column(4)) - 0.5).abs() < 1e-12);
        assert!((norm(sem.b_int().column(4)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hierarchical_shape() {
        let dag = Preset::Hierarchical { layers: vec![9, 3] }.dag().unwrap();
        assert_eq!(dag.n_nodes(), 13);
        assert_eq!(dag.max_in_degree(), 9);
        assert_eq!(dag.longest_path(), 2);
    }

    #[test]
    fn nu_override_is_used() {
        let sem = Preset::Chain { n: 3 }
            .instance(Some(&[1.0, 1.0, 1.0]))
            .unwrap();
        assert!((sem.expected_reward(Intervention::EMPTY) - 1.75).abs() < 1e-12);
        assert!(Preset::Chain { n: 3 }.instance(Some(&[1.0])).is_err());
    }

    #[test]
    fn instance_is_reproducible() {
        let a = Preset::Hierarchical { layers: vec![3, 3] }.instance(None).unwrap();
        let b = Preset::Hierarchical { layers: vec![3, 3] }.instance(None).unwrap();
        assert_eq!(a.nu(), b.nu());
    }
}
