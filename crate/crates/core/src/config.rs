//! Flat `key=value` experiment configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Command-line flags use the
//! same keys and override the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::ascent::AscentParams;
use crate::deviation::{Measure, ScheduleKind};
use crate::error::{Error, Result};
use crate::policy::{PolicyKind, Solver};
use crate::presets::Preset;
use crate::sem::{Intervention, MAX_NODES};

/// Every accepted key with a short description.
pub const KEYS: &[(&str, &str)] = &[
    ("graph", "chain | confounded_parallel | hierarchical | theorem2 (required)"),
    ("n", "node count for chain and confounded_parallel"),
    ("layers", "comma-separated layer widths for hierarchical"),
    ("d", "layer width for hierarchical and theorem2"),
    ("L", "layer count for hierarchical and theorem2"),
    ("T", "horizon, >= 1 (required)"),
    ("algo", "robust_lcb | linsem_ucb | linsem_ucb_robust | vanilla_ucb | oracle (required)"),
    ("solver", "bonus | pga (default bonus)"),
    ("arms", "all | atomic | list:{1,2};{3};{} (default all, needs N <= 16)"),
    ("measure", "none | df | ad (default none)"),
    ("C", "deviation budget, >= 0 (default 0)"),
    ("m_c", "per-round deviation cap, > 0 (default 2)"),
    ("schedule", "none | early_flip | zeroing (default early_flip)"),
    ("targets", "1-based nodes flipped by early_flip (default: every node with parents)"),
    ("seeds", "seed count or explicit list such as 3,5,8 (default 10)"),
    ("delta", "confidence level in (0, 1) (default 1/(2NT))"),
    ("c0", "constant of the theory curves (default 1)"),
    ("downsample", "write every k-th round plus the last (default 1)"),
    ("out", "result file path (default results.csv)"),
    ("nu_override", "comma-separated noise means, one per node"),
    ("workers", "parallel runs (default: available cores)"),
    ("pga_restarts", "projected solver restarts (default 2)"),
    ("pga_steps", "projected solver steps per restart (default 20)"),
    ("pga_step_size", "projected solver step size (default 0.5)"),
];

/// Arms offered to the policy.
#[derive(Debug, Clone, PartialEq)]
pub enum ArmSet {
    All,
    Atomic,
    List(Vec<Intervention>),
}

/// Largest graph for which every subset is enumerated.
pub const MAX_FULL_ENUMERATION: usize = 16;

impl ArmSet {
    pub fn enumerate(&self, n_nodes: usize) -> Result<Vec<Intervention>> {
        match self {
            ArmSet::All => {
                if n_nodes > MAX_FULL_ENUMERATION {
                    return Err(Error::EnumerationTooLarge(n_nodes));
                }
                Ok(Intervention::enumerate_all(n_nodes))
            }
            ArmSet::Atomic => Ok(Intervention::enumerate_atomic(n_nodes)),
            ArmSet::List(list) => {
                let full = Intervention::full(n_nodes).bits();
                if let Some(a) = list.iter().find(|a| a.bits() & !full != 0) {
                    return Err(Error::config("arms", format!("arm {a} names a node beyond {n_nodes}")));
                }
                Ok(list.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub horizon: usize,
    pub algo: PolicyKind,
    pub solver: Solver,
    pub arms: ArmSet,
    pub measure: Measure,
    pub c: f64,
    pub m_c: f64,
    pub schedule: ScheduleKind,
    /// Nodes flipped by `early_flip`; `None` means every node with parents.
    pub targets: Option<Vec<usize>>,
    pub seeds: Vec<u64>,
    pub delta: Option<f64>,
    pub c0: f64,
    pub downsample: usize,
    pub out: PathBuf,
    pub nu_override: Option<Vec<f64>>,
    pub workers: usize,
}

impl ExperimentConfig {
    /// Defaults for everything except the graph, horizon and algorithm.
    pub fn new(preset: Preset, horizon: usize, algo: PolicyKind) -> Self {
        Self {
            preset,
            horizon,
            algo,
            solver: Solver::Bonus,
            arms: ArmSet::All,
            measure: Measure::None,
            c: 0.0,
            m_c: 2.0,
            schedule: ScheduleKind::EarlyFlip,
            targets: None,
            seeds: (0..10).collect(),
            delta: None,
            c0: 1.0,
            downsample: 1,
            out: PathBuf::from("results.csv"),
            nu_override: None,
            workers: default_workers(),
        }
    }

    /// Budget used in the robust weights and radii, never below 1.
    pub fn weight_budget(&self) -> f64 {
        self.c.max(1.0)
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Unvalidated key/value pairs.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut raw = Self::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line: (k + 1) as u64,
                    message: format!("expected key=value, got `{line}`"),
                });
            };
            raw.set(key.trim(), value.trim())?;
        }
        Ok(raw)
    }

    /// Sets a key, replacing any earlier value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(Error::config(key, "unknown key"));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies `other` on top of `self`.
    pub fn merge(&mut self, other: &RawConfig) {
        for (k, v) in &other.values {
            self.values.insert(k.clone(), v.clone());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn required(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::config(key, "missing required key"))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::config(key, format!("cannot parse `{v}`")))
            })
            .transpose()
    }

    /// Validates and builds the configuration. Returns warnings alongside.
    pub fn build(&self) -> Result<(ExperimentConfig, Vec<String>)> {
        let mut warnings = Vec::new();
        let preset = self.preset()?;
        let horizon: usize = self
            .required("T")?
            .parse()
            .map_err(|_| Error::config("T", "expected a positive integer"))?;
        if horizon == 0 {
            return Err(Error::config("T", "must be >= 1"));
        }
        let algo: PolicyKind = self
            .required("algo")?
            .parse()
            .map_err(|e: String| Error::config("algo", e))?;
        let mut cfg = ExperimentConfig::new(preset, horizon, algo);

        let mut ascent = AscentParams::default();
        if let Some(r) = self.parsed::<usize>("pga_restarts")? {
            if r == 0 {
                return Err(Error::config("pga_restarts", "must be >= 1"));
            }
            ascent.restarts = r;
        }
        if let Some(s) = self.parsed::<usize>("pga_steps")? {
            ascent.steps = s;
        }
        if let Some(s) = self.parsed::<f64>("pga_step_size")? {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::config("pga_step_size", "must be > 0"));
            }
            ascent.step_size = s;
        }
        cfg.solver = match self.get("solver").unwrap_or("bonus") {
            "bonus" => Solver::Bonus,
            "pga" => Solver::ProjectedAscent(ascent),
            other => return Err(Error::config("solver", format!("unknown solver `{other}`"))),
        };
        if let Some(v) = self.get("arms") {
            cfg.arms = parse_arms(v)?;
        }
        if let Some(v) = self.get("measure") {
            cfg.measure = v.parse().map_err(|e: String| Error::config("measure", e))?;
        }
        if let Some(v) = self.get("schedule") {
            cfg.schedule = v.parse().map_err(|e: String| Error::config("schedule", e))?;
        }
        if let Some(v) = self.get("targets") {
            let nodes = parse_list::<usize>("targets", v)?;
            if nodes.iter().any(|&k| k == 0 || k > MAX_NODES) {
                return Err(Error::config("targets", "nodes are 1-based"));
            }
            cfg.targets = Some(nodes.into_iter().map(|k| k - 1).collect());
        }
        if let Some(c) = self.parsed::<f64>("C")? {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(Error::config("C", format!("must be a finite value >= 0, got {c}")));
            }
            cfg.c = c;
        }
        if let Some(m) = self.parsed::<f64>("m_c")? {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::config("m_c", "must be > 0"));
            }
            cfg.m_c = m;
        }
        if cfg.c < 1.0 && algo == PolicyKind::RobustLcb {
            warnings.push(format!(
                "C = {} is below 1; robust weights and radii use C = 1",
                cfg.c
            ));
        }
        if let Some(v) = self.get("seeds") {
            cfg.seeds = parse_seeds(v)?;
        }
        if let Some(d) = self.parsed::<f64>("delta")? {
            if !(d > 0.0 && d < 1.0) {
                return Err(Error::config("delta", "must lie in (0, 1)"));
            }
            cfg.delta = Some(d);
        }
        if let Some(c0) = self.parsed::<f64>("c0")? {
            if !(c0 > 0.0 && c0.is_finite()) {
                return Err(Error::config("c0", "must be > 0"));
            }
            cfg.c0 = c0;
        }
        if let Some(k) = self.parsed::<usize>("downsample")? {
            if k == 0 {
                return Err(Error::config("downsample", "must be >= 1"));
            }
            cfg.downsample = k;
        }
        if let Some(out) = self.get("out") {
            if out.is_empty() {
                return Err(Error::config("out", "empty path"));
            }
            cfg.out = PathBuf::from(out);
        }
        if let Some(v) = self.get("nu_override") {
            let nu = parse_list::<f64>("nu_override", v)?;
            if nu.iter().any(|x| !x.is_finite()) {
                return Err(Error::config("nu_override", "values must be finite"));
            }
            cfg.nu_override = Some(nu);
        }
        if let Some(w) = self.parsed::<usize>("workers")? {
            if w == 0 {
                return Err(Error::config("workers", "must be >= 1"));
            }
            cfg.workers = w;
        }
        Ok((cfg, warnings))
    }

    fn preset(&self) -> Result<Preset> {
        let graph = self.required("graph")?;
        let size = |key: &str| -> Result<usize> {
            self.parsed::<usize>(key)?
                .ok_or_else(|| Error::config(key, format!("required for graph={graph}")))
        };
        let preset = match graph {
            "chain" => Preset::Chain { n: size("n")? },
            "confounded_parallel" => Preset::ConfoundedParallel { n: size("n")? },
            "hierarchical" => {
                let layers = match self.get("layers") {
                    Some(v) => parse_list::<usize>("layers", v)?,
                    None => vec![size("d")?; size("L")?],
                };
                Preset::Hierarchical { layers }
            }
            "theorem2" => Preset::Theorem2 {
                d: size("d")?,
                l: size("L")?,
            },
            other => return Err(Error::config("graph", format!("unknown graph `{other}`"))),
        };
        let n = match &preset {
            Preset::Chain { n } | Preset::ConfoundedParallel { n } => *n,
            Preset::Hierarchical { layers } => layers.iter().sum::<usize>() + 1,
            Preset::Theorem2 { d, l } => d * l + 1,
        };
        if n > MAX_NODES {
            return Err(Error::config("graph", format!("{n} nodes exceeds the limit of {MAX_NODES}")));
        }
        preset.dag()?;
        Ok(preset)
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| Error::config(key, format!("cannot parse `{}`", s.trim())))
        })
        .collect()
}

fn parse_seeds(v: &str) -> Result<Vec<u64>> {
    if !v.contains(',') {
        let count: u64 = v
            .trim()
            .parse()
            .map_err(|_| Error::config("seeds", format!("cannot parse `{v}`")))?;
        if count == 0 {
            return Err(Error::config("seeds", "need at least one seed"));
        }
        return Ok((0..count).collect());
    }
    let seeds = parse_list::<u64>("seeds", v)?;
    let mut sorted = seeds.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != seeds.len() {
        return Err(Error::config("seeds", "seeds must be distinct"));
    }
    Ok(seeds)
}

/// `all`, `atomic`, or `list:{1,2};{3};{}` with 1-based nodes.
pub fn parse_arms(v: &str) -> Result<ArmSet> {
    match v.trim() {
        "all" => return Ok(ArmSet::All),
        "atomic" => return Ok(ArmSet::Atomic),
        _ => {}
    }
    let body = v
        .trim()
        .strip_prefix("list:")
        .ok_or_else(|| Error::config("arms", format!("expected all, atomic or list:..., got `{v}`")))?;
    let mut arms = Vec::new();
    for part in body.split(';') {
        let inner = part
            .trim()
            .strip_prefix('{')
            .and_then(|s| s.strip_suffix('}'))
            .ok_or_else(|| Error::config("arms", format!("expected {{...}}, got `{part}`")))?;
        let mut nodes = Vec::new();
        for tok in inner.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let k: usize = tok
                .parse()
                .map_err(|_| Error::config("arms", format!("cannot parse node `{tok}`")))?;
            if k == 0 || k > MAX_NODES {
                return Err(Error::config("arms", format!("node {k} out of range (1-based)")));
            }
            nodes.push(k - 1);
        }
        let arm = Intervention::from_nodes(nodes);
        if arms.contains(&arm) {
            return Err(Error::config("arms", format!("duplicate arm {arm}")));
        }
        arms.push(arm);
    }
    Ok(ArmSet::List(arms))
}
