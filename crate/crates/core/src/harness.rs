//! Seeded bandit episodes, regret accounting, aggregation and result files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::deviation::{DeviationSchedule, Measure, ScheduleKind};
use crate::error::{Error, Result};
use crate::estimation::ConfidenceSpec;
use crate::policy::PolicyState;
use crate::sem::{Intervention, SemInstance};

const ENV_STREAM: u64 = 0;
const POLICY_STREAM: u64 = 1;

/// Everything derived once from a configuration and shared by all seeds.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub sem: SemInstance,
    pub arms: Arc<[Intervention]>,
    pub schedule: DeviationSchedule,
    pub spec: ConfidenceSpec,
    /// Position, arm and mean of the nominal best arm.
    pub best: (usize, Intervention, f64),
}

impl Experiment {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        let sem = config.preset.instance(config.nu_override.as_deref())?;
        let arms: Arc<[Intervention]> = config.arms.enumerate(sem.n_nodes())?.into();
        if arms.is_empty() {
            return Err(Error::config("arms", "empty arm set"));
        }
        let schedule = build_schedule(config, &sem)?;
        schedule.check_budget()?;
        let n = sem.n_nodes() as f64;
        let delta = config
            .delta
            .unwrap_or(1.0 / (2.0 * n * config.horizon as f64));
        let spec = ConfidenceSpec::new(
            delta,
            config.weight_budget(),
            sem.m_x(),
            sem.dag().max_in_degree(),
        )?;
        let best = sem.best_arm(&arms);
        Ok(Self {
            config: config.clone(),
            sem,
            arms,
            schedule,
            spec,
            best,
        })
    }

    /// Fresh policy for one run.
    pub fn policy(&self, seed: u64) -> PolicyState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(POLICY_STREAM);
        PolicyState::new(
            self.config.algo,
            &self.sem,
            self.arms.clone(),
            self.spec,
            self.config.horizon,
            self.config.solver,
        )
        .with_restart_seed(rng.next_u64())
    }
}

/// Early flips target every node with parents unless the config names nodes.
pub fn build_schedule(config: &ExperimentConfig, sem: &SemInstance) -> Result<DeviationSchedule> {
    if config.measure == Measure::None || config.c == 0.0 {
        return Ok(DeviationSchedule::none(sem));
    }
    match config.schedule {
        ScheduleKind::None => Ok(DeviationSchedule::none(sem)),
        ScheduleKind::EarlyFlip => {
            let targets: Vec<usize> = match &config.targets {
                Some(t) => {
                    if let Some(&k) = t.iter().find(|&&k| k >= sem.n_nodes()) {
                        return Err(Error::config("targets", format!("node {} out of range", k + 1)));
                    }
                    t.clone()
                }
                None => sem.dag().nodes_with_parents().collect(),
            };
            DeviationSchedule::early_flip(
                sem,
                config.measure,
                config.c,
                config.m_c,
                &targets,
                config.horizon,
            )
        }
        ScheduleKind::Zeroing => {
            DeviationSchedule::zeroing(sem, config.measure, config.c, config.m_c, config.horizon)
        }
    }
}

/// Per-round log of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    /// Position in the arm list played at each round.
    pub arms: Vec<usize>,
    /// Realized `X_N`.
    pub rewards: Vec<f64>,
    /// `mu_{a*} - <f(D_{a(t)}(t)), nu>` against the nominal best arm.
    pub regret: Vec<f64>,
    /// Same, against the best arm of the round's deviated model.
    pub fluctuating_regret: Vec<f64>,
    pub arm_counts: Vec<usize>,
    /// `(N_i, N*_i)` per node at the end of the run.
    pub node_counts: Vec<(usize, usize)>,
}

/// Runs one seeded episode.
pub fn run_once(exp: &Experiment, seed: u64) -> Result<Trajectory> {
    run_observed(exp, seed, |_, _| {})
}

/// Runs one episode and calls `inspect(t, policy)` before each selection.
pub fn run_observed<F>(exp: &Experiment, seed: u64, mut inspect: F) -> Result<Trajectory>
where
    F: FnMut(usize, &PolicyState),
{
    let horizon = exp.config.horizon;
    let nu = exp.sem.nu();
    let mu_star = exp.best.2;
    let mut env = ChaCha8Rng::seed_from_u64(seed);
    env.set_stream(ENV_STREAM);
    let mut policy = exp.policy(seed);
    let mut traj = Trajectory {
        seed,
        arms: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        regret: Vec::with_capacity(horizon),
        fluctuating_regret: Vec::with_capacity(horizon),
        arm_counts: Vec::new(),
        node_counts: Vec::new(),
    };
    for t in 1..=horizon {
        inspect(t, &policy);
        let k = policy.select(t);
        let mut w = exp.sem.compose_weights(exp.arms[k]);
        exp.schedule.apply_in_place(t, &mut w);
        let mu_t = w.expected_reward(nu);
        let best_t = if exp.schedule.is_active(t) {
            exp.arms
                .iter()
                .map(|&a| exp.schedule.apply(t, &exp.sem.compose_weights(a)).expected_reward(nu))
                .fold(f64::NEG_INFINITY, f64::max)
        } else {
            mu_star
        };
        let x = exp.sem.sample(&w, &mut env)?.x;
        policy.observe(k, &x, t);
        traj.arms.push(k);
        traj.rewards.push(x[exp.sem.dag().reward_node()]);
        traj.regret.push(mu_star - mu_t);
        traj.fluctuating_regret.push(best_t - mu_t);
    }
    traj.arm_counts = policy.arm_counts().to_vec();
    traj.node_counts = (0..exp.sem.n_nodes()).map(|i| policy.counts(i)).collect();
    Ok(traj)
}

/// Prefix sums of the instantaneous regret.
pub fn pseudo_regret(traj: &Trajectory) -> Vec<f64> {
    cumulative(&traj.regret)
}

pub fn cumulative(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

/// Descriptive fields repeated on every row of a result file.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveMeta {
    pub algo: String,
    pub graph: String,
    pub n_nodes: usize,
    pub d: usize,
    pub l: usize,
    pub measure: String,
    pub c: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub t: usize,
    pub mean_regret: f64,
    pub std_regret: f64,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretCurve {
    pub meta: CurveMeta,
    pub points: Vec<CurvePoint>,
}

impl RegretCurve {
    /// Aggregates trajectories in the given order (population std).
    pub fn from_trajectories(meta: CurveMeta, trajs: &[Trajectory]) -> Self {
        assert!(!trajs.is_empty());
        let horizon = trajs[0].regret.len();
        let cums: Vec<Vec<f64>> = trajs.iter().map(pseudo_regret).collect();
        let s = trajs.len() as f64;
        let points = (0..horizon)
            .map(|k| {
                let mean = cums.iter().map(|c| c[k]).sum::<f64>() / s;
                let var = cums.iter().map(|c| (c[k] - mean).powi(2)).sum::<f64>() / s;
                let reward = trajs.iter().map(|tr| tr.rewards[k]).sum::<f64>() / s;
                CurvePoint {
                    t: k + 1,
                    mean_regret: mean,
                    std_regret: var.sqrt(),
                    mean_reward: reward,
                }
            })
            .collect();
        Self { meta, points }
    }

    /// Keeps rounds `1, k+1, 2k+1, ...` and the last round.
    pub fn downsample(&self, k: usize) -> Self {
        assert!(k >= 1);
        let last = self.points.len().saturating_sub(1);
        let points = self
            .points
            .iter()
            .enumerate()
            .filter(|(i, _)| i % k == 0 || *i == last)
            .map(|(_, p)| *p)
            .collect();
        Self {
            meta: self.meta.clone(),
            points,
        }
    }

    pub fn final_regret(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.mean_regret)
    }

    /// Mean cumulative regret at round `t`, if logged.
    pub fn regret_at(&self, t: usize) -> Option<f64> {
        self.points.iter().find(|p| p.t == t).map(|p| p.mean_regret)
    }
}

pub fn curve_meta(exp: &Experiment, n_seeds: usize) -> CurveMeta {
    let dag = exp.sem.dag();
    CurveMeta {
        algo: exp.config.algo.to_string(),
        graph: exp.config.preset.name().to_string(),
        n_nodes: dag.n_nodes(),
        d: dag.max_in_degree(),
        l: dag.longest_path(),
        measure: exp.schedule.measure().to_string(),
        c: exp.config.c,
        n_seeds,
    }
}

/// Runs every seed on a pool of `workers` threads and aggregates in seed order.
pub fn run_many(exp: &Experiment, workers: usize) -> Result<RegretCurve> {
    let trajs = run_seeds(exp, workers)?;
    Ok(RegretCurve::from_trajectories(curve_meta(exp, trajs.len()), &trajs))
}

/// Trajectories sorted by seed.
pub fn run_seeds(exp: &Experiment, workers: usize) -> Result<Vec<Trajectory>> {
    let mut seeds = exp.config.seeds.clone();
    if seeds.is_empty() {
        return Err(Error::config("seeds", "need at least one seed"));
    }
    seeds.sort_unstable();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Precondition(format!("thread pool: {e}")))?;
    pool.install(|| seeds.par_iter().map(|&s| run_once(exp, s)).collect())
}

pub const COLUMNS: [&str; 12] = [
    "t",
    "algo",
    "graph",
    "n_nodes",
    "d",
    "L",
    "measure",
    "C",
    "mean_regret",
    "std_regret",
    "mean_reward",
    "n_seeds",
];

/// Shortest text of 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_results(curve: &RegretCurve, path: &Path) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let file = File::create(path).map_err(io)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(COLUMNS).map_err(csv_err)?;
    let m = &curve.meta;
    for p in &curve.points {
        w.write_record([
            p.t.to_string(),
            m.algo.clone(),
            m.graph.clone(),
            m.n_nodes.to_string(),
            m.d.to_string(),
            m.l.to_string(),
            m.measure.clone(),
            fmt_float(m.c),
            fmt_float(p.mean_regret),
            fmt_float(p.std_regret),
            fmt_float(p.mean_reward),
            m.n_seeds.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| io(e.into_error()))?
        .flush()
        .map_err(io)
}

pub fn read_results(path: &Path) -> Result<RegretCurve> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    let headers = r
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let mut idx = [0usize; COLUMNS.len()];
    for (k, col) in COLUMNS.iter().enumerate() {
        idx[k] = headers
            .iter()
            .position(|h| h == *col)
            .ok_or_else(|| parse_err(1, format!("missing column `{col}`")))?;
    }
    let mut meta: Option<CurveMeta> = None;
    let mut points = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |k: usize| rec.get(idx[k]).unwrap_or("");
        let int = |k: usize| -> Result<usize> {
            field(k)
                .parse()
                .map_err(|_| parse_err(line, format!("column `{}`: bad integer `{}`", COLUMNS[k], field(k))))
        };
        let float = |k: usize| -> Result<f64> {
            field(k)
                .parse()
                .map_err(|_| parse_err(line, format!("column `{}`: bad number `{}`", COLUMNS[k], field(k))))
        };
        let row_meta = CurveMeta {
            algo: field(1).to_string(),
            graph: field(2).to_string(),
            n_nodes: int(3)?,
            d: int(4)?,
            l: int(5)?,
            measure: field(6).to_string(),
            c: float(7)?,
            n_seeds: int(11)?,
        };
        match &meta {
            None => meta = Some(row_meta),
            Some(m) if *m != row_meta => {
                return Err(parse_err(line, "metadata differs from the first row".into()))
            }
            Some(_) => {}
        }
        let t = int(0)?;
        if points.last().is_some_and(|p: &CurvePoint| p.t >= t) {
            return Err(parse_err(line, format!("round {t} out of order")));
        }
        points.push(CurvePoint {
            t,
            mean_regret: float(8)?,
            std_regret: float(9)?,
            mean_reward: float(10)?,
        });
    }
    let meta = meta.ok_or_else(|| parse_err(2, "no data rows".into()))?;
    Ok(RegretCurve { meta, points })
}

/// Final mean regret per grid value of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub vary: String,
    pub value: String,
    pub algo: String,
    pub final_regret: f64,
    pub final_std: f64,
    pub file: String,
}

pub fn write_summary(rows: &[SweepRow], path: &Path) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["vary", "value", "algo", "final_regret", "final_std", "file"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.vary.clone(),
            r.value.clone(),
            r.algo.clone(),
            fmt_float(r.final_regret),
            fmt_float(r.final_std),
            r.file.clone(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Gap `index(a*) - mu_{a*}` observed every `every` rounds on one run.
pub fn optimism_audit(exp: &Experiment, seed: u64, every: usize) -> Result<Vec<(usize, f64)>> {
    let (_, a_star, mu_star) = exp.best;
    let mut gaps = Vec::new();
    run_observed(exp, seed, |t, p| {
        if t % every.max(1) == 0 || t == 1 {
            gaps.push((t, p.ucb_index_bonus(a_star, t) - mu_star));
        }
    })?;
    Ok(gaps)
}
