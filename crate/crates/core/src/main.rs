use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gtc_core::cli::{self, exit_code};
use gtc_core::config::{parse_grid, Overrides, ProblemConfig};
use gtc_core::simulation::{Scenario, Schedule};
use gtc_core::{Error, Result};

#[derive(Parser)]
#[command(name = "gtc", version, about = "Guaranteed-time controller synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Problem config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Grid points per axis, e.g. 15x15.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    solver_tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run policy iteration and write a bundle.
    Synthesize {
        #[command(flatten)]
        common: Common,
    },
    /// Sample the certificate conditions of a bundle.
    Certify {
        bundle: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Simulate the closed loop of a bundle.
    Simulate {
        bundle: PathBuf,
        /// Initial state, comma separated; replaces the configured scenarios.
        #[arg(long, allow_hyphen_values = true)]
        x0: Option<String>,
        /// vertex:K | random[:PERIOD] | worst
        #[arg(long)]
        schedule: Option<String>,
        /// Number of random schedules (seeds seed..seed+N) for --schedule random.
        #[arg(long, default_value_t = 1)]
        runs: u64,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Sample V̄ and the time bound on a lattice with level masks.
    ExportLevelsets {
        bundle: PathBuf,
        /// Lattice points per axis, e.g. 200x200.
        #[arg(long)]
        lattice: Option<String>,
        /// Comma separated levels.
        #[arg(long)]
        levels: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Write an SDP as JSON (evaluation of the initial policy, or
    /// improvement for a bundle's certificate).
    DumpSdp {
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Print every config key with its default.
    ConfigReference,
}

impl Common {
    fn overrides(&self) -> Result<Overrides> {
        Ok(Overrides {
            out: self.out.clone(),
            seed: self.seed,
            grid: self.grid.as_deref().map(parse_grid).transpose()?,
            iterations: self.iterations,
            gamma: self.gamma,
            solver_tol: self.solver_tol,
        })
    }

    fn load(&self, fallback: Option<&Path>) -> Result<ProblemConfig> {
        let path = self.config.as_deref().or(fallback).ok_or_else(|| Error::Config("--config is required".into()))?;
        let mut cfg = ProblemConfig::load(path)?;
        cfg.apply(&self.overrides()?);
        Ok(cfg)
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad number list '{s}'"))))
        .collect()
}

fn parse_schedule(s: &str, seed: u64) -> Result<Schedule> {
    let mut parts = s.split(':');
    let bad = || Error::Config(format!("bad schedule '{s}'"));
    match parts.next() {
        Some("vertex") => Ok(Schedule::Vertex {
            index: parts.next().unwrap_or("0").parse().map_err(|_| bad())?,
        }),
        Some("random") => Ok(Schedule::Random {
            seed,
            period: parts.next().map(|p| p.parse()).transpose().map_err(|_| bad())?,
        }),
        Some("worst") => Ok(Schedule::WorstCase),
        _ => Err(bad()),
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synthesize { common } => {
            let cfg = common.load(None)?;
            let out = cfg
                .out
                .clone()
                .ok_or_else(|| Error::Config("an output directory is required (--out or `out`)".into()))?;
            cfg.resolve()?;
            let backend = cli::backend_for(&cfg);
            let bundle = cli::synthesize(&cfg, &backend, |r| {
                eprintln!(
                    "step {:>2} {:<7} objective {:>14.6} status {} residual {:.1e} ({:.1} s)",
                    r.step,
                    format!("{:?}", r.kind).to_lowercase(),
                    r.objective,
                    r.status,
                    r.max_residual,
                    r.wall_time_s
                )
            })?;
            for w in &bundle.summary.warnings {
                eprintln!("warning: {w}");
            }
            cli::write_bundle(&out, &bundle)?;
            for lf in &bundle.summary.doa.levels {
                println!("sublevel {:<5} fraction {:.4}", lf.level, lf.fraction);
            }
            println!("wrote {}", out.display());
        }
        Command::Certify {
            bundle,
            samples,
            tol,
            common,
        } => {
            let loaded = cli::load_bundle(&bundle)?;
            let cfg = &loaded.resolved.config;
            let seed = common.seed.unwrap_or(cfg.seed);
            let report = cli::certify(
                &loaded,
                samples.unwrap_or(cfg.verify.samples),
                seed,
                tol.unwrap_or(cfg.verify.tol),
            )?;
            for f in &report.families {
                println!(
                    "{:<16} checked {:>7} violations {:>6} worst margin {:.3e}{}",
                    f.family,
                    f.checked,
                    f.violations,
                    f.worst_margin,
                    if f.counted { "" } else { " (not counted)" }
                );
            }
            println!("total violations {}", report.total_violations);
            let uncounted: usize = report.families.iter().filter(|f| !f.counted).map(|f| f.violations).sum();
            println!("uncounted violations {uncounted}");
            let out = common.out.unwrap_or(bundle);
            std::fs::create_dir_all(&out)?;
            cli::write_atomic(&out.join(cli::VERIFICATION_FILE), serde_json::to_string_pretty(&report)?.as_bytes())?;
        }
        Command::Simulate {
            bundle,
            x0,
            schedule,
            runs,
            horizon,
            dt,
            common,
        } => {
            let loaded = cli::load_bundle(&bundle)?;
            let mut cfg = match &common.config {
                Some(p) => ProblemConfig::load(p)?,
                None => loaded.resolved.config.clone(),
            };
            let seed = common.seed.unwrap_or(loaded.resolved.config.seed);
            if let Some(h) = horizon {
                cfg.simulation.horizon = Some(h);
            }
            if let Some(d) = dt {
                cfg.simulation.dt = Some(d);
            }
            let mut scenarios = cfg.effective_scenarios();
            if x0.is_some() || schedule.is_some() {
                let x0 = match x0 {
                    Some(s) => parse_list(&s)?,
                    None => scenarios
                        .first()
                        .map(|s| s.x0.clone())
                        .ok_or_else(|| Error::Config("--x0 is required".into()))?,
                };
                let sched = schedule.as_deref().unwrap_or("vertex:0");
                scenarios = (0..runs.max(1))
                    .map(|k| {
                        Ok(Scenario {
                            x0: x0.clone(),
                            schedule: parse_schedule(sched, seed + k)?,
                        })
                    })
                    .collect::<Result<_>>()?;
            }
            if scenarios.is_empty() {
                return Err(Error::Config("no scenarios configured".into()));
            }
            let out = common.out.unwrap_or_else(|| bundle.join("simulation"));
            let summaries = cli::simulate(&loaded, &scenarios, &cfg.sim_options(), cfg.tol_bound(), &out)?;
            for (i, s) in summaries.iter().enumerate() {
                println!(
                    "scenario {i:>3} reach {:>10} bound {:>10} satisfied {:?}{}",
                    s.reach_time.map_or("-".into(), |t| format!("{t:.4}")),
                    s.bound.map_or("-".into(), |b| format!("{b:.4}")),
                    s.satisfied,
                    s.error.as_deref().map_or(String::new(), |e| format!(" error: {e}"))
                );
            }
            println!("wrote {}", out.display());
        }
        Command::ExportLevelsets {
            bundle,
            lattice,
            levels,
            common,
        } => {
            let loaded = cli::load_bundle(&bundle)?;
            let lattice = match lattice {
                Some(s) => parse_grid(&s)?,
                None => loaded
                    .resolved
                    .config
                    .levelsets
                    .lattice
                    .clone()
                    .unwrap_or_else(|| cli::default_lattice(loaded.resolved.tri.dim())),
            };
            let levels = match levels {
                Some(s) => parse_list(&s)?,
                None => loaded
                    .resolved
                    .config
                    .levelsets
                    .levels
                    .clone()
                    .unwrap_or_else(|| cli::DEFAULT_LEVELS.to_vec()),
            };
            let out = common.out.unwrap_or_else(|| bundle.join("levelsets"));
            let summary = cli::export_levelsets(&loaded, &lattice, &levels, &out)?;
            print_json(&summary)?;
        }
        Command::DumpSdp { bundle, common } => {
            let loaded = bundle.as_deref().map(cli::load_bundle).transpose()?;
            let cfg = match &loaded {
                Some(b) if common.config.is_none() => {
                    let mut c = b.resolved.config.clone();
                    c.apply(&common.overrides()?);
                    c
                }
                _ => common.load(None)?,
            };
            match &common.out {
                Some(path) => {
                    let mut buf = Vec::new();
                    cli::dump_sdp(&cfg, loaded.as_ref(), &mut buf)?;
                    cli::write_atomic(path, &buf)?;
                }
                None => cli::dump_sdp(&cfg, loaded.as_ref(), std::io::stdout().lock())?,
            }
        }
        Command::ConfigReference => print!("{}", cli::config_reference()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(3) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
