use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};

use causal_bandits::audit;
use causal_bandits::config::{ExperimentConfig, RawConfig, KEYS};
use causal_bandits::harness::{self, Experiment, SweepRow};
use causal_bandits::presets::Preset;
use causal_bandits::theory::{lower_bound_curve, upper_bound_curve, BoundParams};
use causal_bandits::{Error, Result};

const AUDIT_FAILED: u8 = 4;

fn key_help() -> String {
    let mut s = String::from("Configuration keys (file lines key=value, or flags --key=value):\n");
    for (k, desc) in KEYS {
        s.push_str(&format!("  {k:<14} {desc}\n"));
    }
    s
}

fn with_keys(cmd: Command) -> Command {
    let cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("key=value configuration file; flags override it"),
    );
    KEYS.iter().fold(cmd, |cmd, (k, desc)| {
        cmd.arg(
            Arg::new(*k)
                .long(*k)
                .value_name("VALUE")
                .help(*desc)
                .hide(true),
        )
    })
    .after_help(key_help())
}

fn cli() -> Command {
    Command::new("causal-bandits")
        .about("Robust causal bandits on linear structural equation models")
        .subcommand_required(true)
        .subcommand(with_keys(Command::new("run").about("Run one configuration and write its regret curve")))
        .subcommand(with_keys(
            Command::new("sweep")
                .about("Run a grid over one key; writes one file per point plus a summary")
                .arg(Arg::new("vary").long("vary").required(true).value_name("KEY"))
                .arg(
                    Arg::new("values")
                        .long("values")
                        .required(true)
                        .value_name("V1,V2,..."),
                )
                .arg(
                    Arg::new("algos")
                        .long("algos")
                        .value_name("A1,A2,...")
                        .help("algorithms to run at every grid point (default: algo key)"),
                ),
        ))
        .subcommand(
            Command::new("bounds")
                .about("Tabulate the upper and lower regret curves on hierarchical graphs")
                .arg(Arg::new("d").long("d").default_value("1,2,3,4,5").value_name("D1,D2,..."))
                .arg(Arg::new("L").long("L").default_value("2"))
                .arg(Arg::new("T").long("T").default_value("40000"))
                .arg(Arg::new("C").long("C").default_value("200"))
                .arg(Arg::new("c0").long("c0").default_value("1")),
        )
        .subcommand(
            Command::new("check")
                .about("Run the oracle and invariant audits")
                .arg(
                    Arg::new("seed")
                        .long("seed")
                        .default_value("0")
                        .action(ArgAction::Set),
                ),
        )
}

fn load(m: &ArgMatches) -> Result<ExperimentConfig> {
    let mut raw = match m.get_one::<String>("config") {
        Some(path) => RawConfig::from_file(Path::new(path))?,
        None => RawConfig::new(),
    };
    let mut flags = RawConfig::new();
    for (k, _) in KEYS {
        if let Some(v) = m.get_one::<String>(k) {
            flags.set(k, v)?;
        }
    }
    raw.merge(&flags);
    let (cfg, warnings) = raw.build()?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

fn run_config(cfg: &ExperimentConfig, out: &Path) -> Result<harness::RegretCurve> {
    let exp = Experiment::build(cfg)?;
    let curve = harness::run_many(&exp, cfg.workers)?;
    harness::write_results(&curve.downsample(cfg.downsample), out)?;
    Ok(curve)
}

fn cmd_run(m: &ArgMatches) -> Result<()> {
    let cfg = load(m)?;
    let curve = run_config(&cfg, &cfg.out)?;
    let last = curve.points.last().expect("horizon >= 1");
    println!(
        "{} on {}: R({}) = {:.3} (std {:.3}, {} seeds) -> {}",
        cfg.algo,
        cfg.preset.name(),
        last.t,
        last.mean_regret,
        last.std_regret,
        cfg.seeds.len(),
        cfg.out.display()
    );
    Ok(())
}

fn grid_path(out: &Path, algo: &str, key: &str, value: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    let clean: String = value
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    out.with_file_name(format!("{stem}_{algo}_{key}{clean}.csv"))
}

fn cmd_sweep(m: &ArgMatches) -> Result<()> {
    let base = {
        let mut raw = match m.get_one::<String>("config") {
            Some(path) => RawConfig::from_file(Path::new(path))?,
            None => RawConfig::new(),
        };
        let mut flags = RawConfig::new();
        for (k, _) in KEYS {
            if let Some(v) = m.get_one::<String>(k) {
                flags.set(k, v)?;
            }
        }
        raw.merge(&flags);
        raw
    };
    let vary = m.get_one::<String>("vary").expect("required");
    if !KEYS.iter().any(|(k, _)| k == vary) {
        return Err(Error::Config {
            key: vary.clone(),
            message: "unknown key".into(),
        });
    }
    let values: Vec<&str> = m
        .get_one::<String>("values")
        .expect("required")
        .split(',')
        .map(str::trim)
        .collect();
    let algos: Vec<String> = match m.get_one::<String>("algos") {
        Some(a) => a.split(',').map(|s| s.trim().to_string()).collect(),
        None => vec![base.get("algo").unwrap_or("").to_string()],
    };
    let mut rows = Vec::new();
    let mut summary_out = None;
    for algo in &algos {
        for value in &values {
            let mut raw = base.clone();
            raw.set("algo", algo)?;
            raw.set(vary, value)?;
            let (cfg, warnings) = raw.build()?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            let path = grid_path(&cfg.out, algo, vary, value);
            let curve = run_config(&cfg, &path)?;
            let last = curve.points.last().expect("horizon >= 1");
            println!("{algo} {vary}={value}: R({}) = {:.3}", last.t, last.mean_regret);
            rows.push(SweepRow {
                vary: vary.clone(),
                value: value.to_string(),
                algo: algo.clone(),
                final_regret: last.mean_regret,
                final_std: last.std_regret,
                file: path.display().to_string(),
            });
            summary_out.get_or_insert_with(|| {
                let stem = cfg.out.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
                cfg.out.with_file_name(format!("{stem}_summary.csv"))
            });
        }
    }
    let summary = summary_out.expect("at least one grid point");
    harness::write_summary(&rows, &summary)?;
    println!("summary -> {}", summary.display());
    Ok(())
}

fn parse_arg<T: std::str::FromStr>(m: &ArgMatches, key: &str) -> Result<T> {
    let v = m.get_one::<String>(key).expect("has default");
    v.parse().map_err(|_| Error::Config {
        key: key.into(),
        message: format!("cannot parse `{v}`"),
    })
}

fn cmd_bounds(m: &ArgMatches) -> Result<()> {
    let l: usize = parse_arg(m, "L")?;
    let t: f64 = parse_arg(m, "T")?;
    let c: f64 = parse_arg(m, "C")?;
    let c0: f64 = parse_arg(m, "c0")?;
    let ds: Vec<usize> = m
        .get_one::<String>("d")
        .expect("has default")
        .split(',')
        .map(|s| {
            s.trim().parse().map_err(|_| Error::Config {
                key: "d".into(),
                message: format!("cannot parse `{s}`"),
            })
        })
        .collect::<Result<_>>()?;
    println!("d,L,N,T,C,m_x,upper,lower");
    for d in ds {
        let sem = Preset::Hierarchical { layers: vec![d; l] }.instance(None)?;
        let p = BoundParams {
            d,
            l,
            n: sem.n_nodes(),
            m_x: sem.m_x(),
            c0,
        };
        println!(
            "{d},{l},{},{t},{c},{},{},{}",
            p.n,
            harness::fmt_float(p.m_x),
            harness::fmt_float(upper_bound_curve(t, c, &p)),
            harness::fmt_float(lower_bound_curve(t, c, &p))
        );
    }
    Ok(())
}

fn cmd_check(m: &ArgMatches) -> Result<bool> {
    let seed: u64 = parse_arg(m, "seed")?;
    let mut ok = true;
    for r in audit::run_all(seed)? {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        ok &= r.passed;
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    let outcome = match matches.subcommand() {
        Some(("run", m)) => cmd_run(m).map(|_| true),
        Some(("sweep", m)) => cmd_sweep(m).map(|_| true),
        Some(("bounds", m)) => cmd_bounds(m).map(|_| true),
        Some(("check", m)) => cmd_check(m),
        _ => unreachable!("subcommand required"),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(AUDIT_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
