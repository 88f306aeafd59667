//! Batch commands behind the `gtc` binary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ProblemConfig, Resolved};
use crate::error::{Error, Result};
use crate::pwq::{in_sublevel, write_level_csv, CertificateFile, PwqFunction};
use crate::simulation::{simulate_batch, Scenario, ScenarioSummary, SimOptions, Simulator};
use crate::synthesis::iteration::write_log;
use crate::synthesis::{
    assemble_evaluation, assemble_improvement, policy_iteration, verify_certificate, Backend, ClarabelBackend,
    IterationRecord, StepKind, VerificationReport, VerifyOptions,
};
use crate::systems::{Policy, PolicyFile};

pub const CONFIG_FILE: &str = "config.toml";
pub const CERTIFICATE_FILE: &str = "certificate.json";
pub const POLICY_FILE: &str = "policy.json";
pub const LOG_FILE: &str = "iteration_log.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const VERIFICATION_FILE: &str = "verification.json";

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Infeasible(_) => 2,
        Error::Config(_)
        | Error::InvalidGrid(_)
        | Error::OriginNotRepresentable { .. }
        | Error::DuplicatePoint(_)
        | Error::DegenerateSimplex { .. }
        | Error::Triangulation(_)
        | Error::InvalidModel(_)
        | Error::InvalidPolicy(_)
        | Error::Dimension(_)
        | Error::EmptyGoalSet
        | Error::GridMismatch { .. }
        | Error::OutsideDomain { .. }
        | Error::Json(_) => 3,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 3,
        Error::Solver(_) => 4,
        _ => 1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelFraction {
    pub level: f64,
    pub fraction: f64,
}

/// Monte Carlo estimate of the box fraction inside each sublevel set of V̄.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoaEstimate {
    pub samples: usize,
    pub seed: u64,
    pub levels: Vec<LevelFraction>,
}

pub const DOA_LEVELS: [f64; 5] = [0.25, 0.5, 0.9, 0.99, 1.0];

pub fn estimate_doa(pwq: &PwqFunction, levels: &[f64], samples: usize, seed: u64) -> Result<DoaEstimate> {
    let bounds = pwq.triangulation().bounds().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0usize; levels.len()];
    for _ in 0..samples {
        let x = DVector::from_iterator(bounds.len(), bounds.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)));
        let v = pwq.evaluate(&x)?;
        for (c, &l) in counts.iter_mut().zip(levels) {
            if in_sublevel(v, l) {
                *c += 1;
            }
        }
    }
    Ok(DoaEstimate {
        samples,
        seed,
        levels: levels
            .iter()
            .zip(counts)
            .map(|(&level, c)| LevelFraction {
                level,
                fraction: if samples == 0 { 0.0 } else { c as f64 / samples as f64 },
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub model: String,
    pub seed: u64,
    pub grid_hash: String,
    pub points: usize,
    pub simplices: usize,
    pub goal_simplices: usize,
    pub iterations_requested: usize,
    /// ∫V̄ after each evaluation.
    pub objective_history: Vec<f64>,
    /// ∫R after each improvement.
    pub improvement_history: Vec<f64>,
    /// `eval:optimal`, `improve:near-optimal`, ...
    pub statuses: Vec<String>,
    pub final_objective: f64,
    /// Largest amount by which a vertex input of the returned policy exceeds its bounds.
    pub input_bound_violation: f64,
    pub doa: DoaEstimate,
    pub warnings: Vec<String>,
    pub wall_time_s: f64,
}

pub struct Bundle {
    pub resolved: Resolved,
    pub certificate: PwqFunction,
    pub policy: Policy,
    pub log: Vec<IterationRecord>,
    pub summary: Summary,
    /// Every evaluated (certificate, policy) pair; not written to disk.
    pub evaluated: Vec<(PwqFunction, Policy)>,
}

pub fn backend_for(config: &ProblemConfig) -> ClarabelBackend {
    ClarabelBackend::new(config.solver)
}

/// Run policy iteration in memory; nothing is written.
pub fn synthesize(
    config: &ProblemConfig,
    backend: &dyn Backend,
    on_record: impl FnMut(&IterationRecord),
) -> Result<Bundle> {
    let start = Instant::now();
    let resolved = config.resolve()?;
    let initial = resolved.initial_policy(backend)?;
    let iterations = config.effective_iterations();
    let res = policy_iteration(
        &resolved.tri,
        &resolved.model,
        &initial,
        iterations,
        &config.settings(),
        backend,
        on_record,
    )?;
    let tri = &resolved.tri;
    let history = |k: StepKind| res.log.iter().filter(|r| r.kind == k).map(|r| r.objective).collect::<Vec<_>>();
    let doa = estimate_doa(&res.certificate, &DOA_LEVELS, config.verify.samples, config.seed)?;
    let summary = Summary {
        model: config.model_name(),
        seed: config.seed,
        grid_hash: tri.grid_hash(),
        points: tri.num_points(),
        simplices: tri.num_simplices(),
        goal_simplices: tri.goal_simplices().len(),
        iterations_requested: iterations,
        objective_history: history(StepKind::Eval),
        improvement_history: history(StepKind::Improve),
        statuses: res
            .log
            .iter()
            .map(|r| {
                let kind = match r.kind {
                    StepKind::Eval => "eval",
                    StepKind::Improve => "improve",
                };
                format!("{kind}:{}", r.status)
            })
            .collect(),
        final_objective: res.certificate.integral(),
        input_bound_violation: res.policy.vertex_bound_violation(
            tri,
            resolved.model.u_lower(),
            resolved.model.u_upper(),
        ),
        doa,
        warnings: res.warnings,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok(Bundle {
        resolved,
        certificate: res.certificate,
        policy: res.policy,
        log: res.log,
        summary,
        evaluated: res.evaluated,
    })
}

/// Write `bytes` to a sibling temporary file and rename it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

pub fn write_bundle(dir: &Path, bundle: &Bundle) -> Result<()> {
    let tri = &bundle.resolved.tri;
    let mut log = Vec::new();
    write_log(&mut log, &bundle.log)?;
    let files: Vec<(&str, Vec<u8>)> = vec![
        (CONFIG_FILE, bundle.resolved.config.to_toml_string()?.into_bytes()),
        (CERTIFICATE_FILE, json_bytes(&bundle.certificate.to_file())?),
        (POLICY_FILE, json_bytes(&bundle.policy.to_file(tri))?),
        (LOG_FILE, log),
        (SUMMARY_FILE, json_bytes(&bundle.summary)?),
        ("triangulation.json", json_bytes(&tri.export())?),
    ];
    fs::create_dir_all(dir)?;
    for (name, bytes) in files {
        write_atomic(&dir.join(name), &bytes)?;
    }
    Ok(())
}

/// A bundle read back from disk.
pub struct LoadedBundle {
    pub resolved: Resolved,
    pub certificate: PwqFunction,
    pub policy: Policy,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Config(format!("missing bundle file {}", path.display()))
        } else {
            Error::Io(e)
        }
    })?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_bundle(dir: &Path) -> Result<LoadedBundle> {
    let config_path = dir.join(CONFIG_FILE);
    if !config_path.exists() {
        return Err(Error::Config(format!("missing bundle file {}", config_path.display())));
    }
    let resolved = ProblemConfig::load(&config_path)?.resolve()?;
    let cert: CertificateFile = read_json(&dir.join(CERTIFICATE_FILE))?;
    let policy: PolicyFile = read_json(&dir.join(POLICY_FILE))?;
    let certificate = PwqFunction::from_file(resolved.tri.clone(), &cert)?;
    let policy = Policy::from_file(&resolved.tri, &policy)?;
    Ok(LoadedBundle {
        resolved,
        certificate,
        policy,
    })
}

pub fn certify(bundle: &LoadedBundle, samples: usize, seed: u64, tol: f64) -> Result<VerificationReport> {
    verify_certificate(
        &bundle.resolved.tri,
        &bundle.resolved.model,
        &bundle.certificate,
        &bundle.policy,
        &VerifyOptions {
            samples,
            seed,
            tol,
            gamma: bundle.resolved.config.gamma,
        },
    )
}

/// Simulate every scenario and write one CSV per scenario plus `summary.json`.
pub fn simulate(
    bundle: &LoadedBundle,
    scenarios: &[Scenario],
    opts: &SimOptions,
    tol_bound: f64,
    out: &Path,
) -> Result<Vec<ScenarioSummary>> {
    let tri = &bundle.resolved.tri;
    for sc in scenarios {
        let x0 = DVector::from_vec(sc.x0.clone());
        if sc.x0.len() != tri.dim() {
            return Err(Error::Dimension(format!("x0 {:?} has dimension {}, expected {}", sc.x0, sc.x0.len(), tri.dim())));
        }
        if !tri.contains_box(&x0) {
            return Err(Error::OutsideDomain { point: sc.x0.clone() });
        }
    }
    let sim = Simulator {
        tri,
        model: &bundle.resolved.model,
        policy: &bundle.policy,
        pwq: Some(&bundle.certificate),
    };
    let results = simulate_batch(&sim, scenarios, opts, tol_bound);
    fs::create_dir_all(out)?;
    for (i, (_, traj)) in results.iter().enumerate() {
        if let Some(traj) = traj {
            let mut buf = Vec::new();
            traj.write_csv(&mut buf)?;
            write_atomic(&out.join(format!("scenario_{i:03}.csv")), &buf)?;
        }
    }
    let summaries: Vec<ScenarioSummary> = results.into_iter().map(|(s, _)| s).collect();
    write_atomic(&out.join("summary.json"), &json_bytes(&summaries)?)?;
    Ok(summaries)
}

pub const DEFAULT_LEVELS: [f64; 7] = [0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99];

pub fn default_lattice(dim: usize) -> Vec<usize> {
    vec![if dim <= 2 { 200 } else { 40 }; dim]
}

/// Area (volume) fraction of lattice samples in each sublevel set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelsetSummary {
    pub lattice: Vec<usize>,
    pub levels: Vec<LevelFraction>,
}

pub fn export_levelsets(bundle: &LoadedBundle, lattice: &[usize], levels: &[f64], out: &Path) -> Result<LevelsetSummary> {
    let samples = bundle.certificate.sample_lattice(lattice)?;
    let total = samples.len().max(1) as f64;
    let summary = LevelsetSummary {
        lattice: lattice.to_vec(),
        levels: levels
            .iter()
            .map(|&level| LevelFraction {
                level,
                fraction: samples.iter().filter(|s| in_sublevel(s.vbar, level)).count() as f64 / total,
            })
            .collect(),
    };
    let mut csv = Vec::new();
    write_level_csv(&mut csv, &samples, levels)?;
    fs::create_dir_all(out)?;
    write_atomic(&out.join("levelsets.csv"), &csv)?;
    write_atomic(&out.join("levelsets.json"), &json_bytes(&summary)?)?;
    Ok(summary)
}

/// Write the evaluation program of the initial policy, or with a bundle the
/// improvement program of its certificate.
pub fn dump_sdp<W: Write>(config: &ProblemConfig, bundle: Option<&LoadedBundle>, out: W) -> Result<()> {
    let lmi = config.settings().lmi;
    let asm = match bundle {
        Some(b) => assemble_improvement(&b.resolved.tri, &b.resolved.model, &b.certificate, lmi)?,
        None => {
            let resolved = config.resolve()?;
            let initial = resolved.initial_policy(&backend_for(config))?;
            assemble_evaluation(&resolved.tri, &resolved.model, &initial, lmi)?
        }
    };
    asm.problem.write_json(out)
}

/// Reference listing of every config key with its default.
pub fn config_reference() -> String {
    let defaults = ProblemConfig::default()
        .to_toml_string()
        .unwrap_or_default();
    format!(
        "# gtc problem config: keys and defaults\n\
         #\n\
         # [model] builtin = \"double_tank\" | \"unstable_polytopic\" | \"chua\"\n\
         #   or name, a = [A_1, ...], b = [B] or [B_1, ...], u_lower, u_upper, bounds\n\
         # [grid] points_per_axis (ranges default to the model box), or axes, or points\n\
         # [initial_policy] kind = \"zero\" | \"decay_gain\" (rate) | \"linear\" (k) | \"gains\" (gains)\n\
         #\n\
         # builtin defaults:\n\
         #   double_tank         grid 15x15   iterations 7   initial zero\n\
         #   unstable_polytopic  grid 15x15   iterations 10  initial decay_gain rate 1\n\
         #   chua                grid 11x5x5  iterations 18  initial linear [-38.8017, -31.1041, 25.3298]\n\
         # explicit models default to 5 iterations and the zero policy.\n\
         \n{defaults}"
    )
}
