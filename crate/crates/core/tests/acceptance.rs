//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 6 and 8 are slow and run only with `GTC_SLOW=1` (or `--slow`).
//! Criteria listed in `KNOWN_SHORTFALLS` are reported as FAIL but do not fail
//! the run; any other failure exits nonzero.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gtc_core::cli::{self, Bundle};
use gtc_core::config::ProblemConfig;
use gtc_core::geometry::{FaceKind, GridSpec, Triangulation};
use gtc_core::pwq::{in_sublevel, PwqFunction};
use gtc_core::relaxation::{build_annihilator, kron_i2};
use gtc_core::simulation::{bound_check, Schedule, Simulator};
use gtc_core::synthesis::{
    initial_decay_gain, verify_certificate, ClarabelBackend, SolveStatus, SolverOptions, VerifyOptions,
};
use gtc_core::systems::{unstable_polytopic, Policy, CHUA_BOX};

/// Criteria that do not reach their target; see the README.
const KNOWN_SHORTFALLS: &[u32] = &[5];

const TOL_VERIFY: f64 = 1e-6;
const VERIFY_SAMPLES: usize = 10_000;

struct Line {
    id: u32,
    pass: Option<bool>,
    text: String,
}

struct Check {
    parts: Vec<(String, bool)>,
}

impl Check {
    fn new() -> Self {
        Check { parts: Vec::new() }
    }

    fn add(&mut self, ok: bool, what: impl Into<String>) {
        self.parts.push((what.into(), ok));
    }

    fn pass(&self) -> bool {
        self.parts.iter().all(|p| p.1)
    }

    fn text(&self, start: Instant) -> String {
        let mut s: Vec<String> = self
            .parts
            .iter()
            .map(|(w, ok)| format!("{w} [{}]", if *ok { "ok" } else { "FAILED" }))
            .collect();
        s.push(format!("{:.1} s", start.elapsed().as_secs_f64()));
        s.join("; ")
    }
}

fn line(id: u32, check: &Check, start: Instant) -> Line {
    Line {
        id,
        pass: Some(check.pass()),
        text: check.text(start),
    }
}

/// Verification tallies over every solved evaluation, for criterion 9.
#[derive(Default)]
struct SoundnessTally {
    certificates: usize,
    violations: usize,
    uncounted: usize,
    worst_margin: f64,
    sources: Vec<String>,
}

impl SoundnessTally {
    fn absorb(&mut self, label: &str, bundle: &Bundle, evaluated: &[(PwqFunction, Policy)]) {
        let r = &bundle.resolved;
        for (k, (cert, pol)) in evaluated.iter().enumerate() {
            let rep = verify_certificate(
                &r.tri,
                &r.model,
                cert,
                pol,
                &VerifyOptions {
                    samples: VERIFY_SAMPLES,
                    seed: 100 + k as u64,
                    tol: TOL_VERIFY,
                    gamma: r.config.gamma,
                },
            )
            .expect("verification runs");
            self.certificates += 1;
            self.violations += rep.total_violations;
            for f in &rep.families {
                if !f.counted {
                    self.uncounted += f.violations;
                } else if f.checked > 0 {
                    self.worst_margin = self.worst_margin.min(f.worst_margin);
                }
            }
        }
        self.sources.push(format!("{label}: {}", evaluated.len()));
    }
}

fn backend() -> ClarabelBackend {
    ClarabelBackend::new(SolverOptions::default())
}

fn c1_annihilator() -> Line {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut worst_kron) = (0.0f64, 0.0f64);
    for d in 2..=4 {
        let fam = build_annihilator(d);
        for _ in 0..1000 {
            let mut beta: Vec<f64> = (0..d).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let s: f64 = beta.iter().sum();
            beta.iter_mut().for_each(|b| *b /= s);
            let lam = fam.reconstruct(&beta);
            worst = worst.max((&lam * DVector::from_column_slice(&beta)).amax());
            let b2 = kron_i2(&DMatrix::from_column_slice(d, 1, &beta));
            worst_kron = worst_kron.max((kron_i2(&lam) * b2).amax());
        }
    }
    let mut c = Check::new();
    c.add(worst <= 1e-13, format!("max |Λβ·β| = {worst:.1e}"));
    c.add(worst_kron <= 1e-13, format!("max |(Λβ⊗I2)(β⊗I2)| = {worst_kron:.1e}"));
    c.add(start.elapsed().as_secs_f64() < 1.0, "runtime < 1 s");
    line(1, &c, start)
}

fn c2_geometry() -> Line {
    let start = Instant::now();
    let tank = Triangulation::from_spec(&GridSpec::regular(&[(-2.2, 2.2), (-2.0, 2.0)], &[15, 15])).unwrap();
    let chua = Triangulation::from_spec(&GridSpec::regular(&CHUA_BOX, &[11, 5, 5])).unwrap();
    let mut c = Check::new();
    let t = (tank.num_points(), tank.num_simplices());
    let h = (chua.num_points(), chua.num_simplices());
    c.add(t == (225, 392), format!("tank 15x15: {} points / {} simplices", t.0, t.1));
    c.add(h == (275, 960), format!("chua 11x5x5: {} points / {} simplices", h.0, h.1));
    c.add(start.elapsed().as_secs_f64() < 1.0, "runtime < 1 s");
    line(2, &c, start)
}

fn c3_pwq() -> Line {
    let start = Instant::now();
    let tri = std::sync::Arc::new(
        Triangulation::from_spec(&GridSpec::regular(&[(-1.0, 1.0), (-2.0, 2.0)], &[5, 5])).unwrap(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let interior: Vec<usize> = (0..tri.num_faces())
        .filter(|&f| tri.face_kind(f) != FaceKind::Boundary)
        .collect();
    let (mut worst_cont, mut worst_int) = (0.0f64, 0.0f64);
    for trial in 0..3 {
        let p: Vec<DVector<f64>> = (0..tri.num_points())
            .map(|i| {
                let mut v = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
                v[2] = rng.random_range(2.0..3.0);
                if i == tri.origin_index() {
                    v.fill(0.0);
                }
                v
            })
            .collect();
        let pwq = PwqFunction::new(tri.clone(), p).unwrap();
        for _ in 0..2000 / 3 + 1 {
            let f = interior[rng.random_range(0..interior.len())];
            let verts = &tri.faces()[f];
            let w: Vec<f64> = (0..verts.len()).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let s: f64 = w.iter().sum();
            let x = verts
                .iter()
                .zip(&w)
                .fold(DVector::zeros(2), |acc, (&v, &wi)| acc + &tri.points()[v] * (wi / s));
            let (a, b) = tri.neighbors(f);
            let (va, vb) = (pwq.evaluate_in(a, &x), pwq.evaluate_in(b, &x));
            worst_cont = worst_cont.max((va - vb).abs() / va.abs().max(vb.abs()).max(1e-12));
        }
        // Monte Carlo over the box.
        let n_mc = 1_000_000;
        let mut sum = 0.0;
        let mut mc_rng = ChaCha8Rng::seed_from_u64(30 + trial);
        for _ in 0..n_mc {
            let x = DVector::from_vec(vec![mc_rng.random_range(-1.0..1.0), mc_rng.random_range(-2.0..2.0)]);
            sum += pwq.evaluate(&x).unwrap();
        }
        let mc = sum / n_mc as f64 * tri.box_volume();
        let exact = pwq.integral();
        worst_int = worst_int.max((exact - mc).abs() / exact.abs());
    }
    let mut c = Check::new();
    c.add(worst_cont <= 1e-9, format!("face continuity {worst_cont:.1e} relative"));
    c.add(worst_int <= 0.01, format!("closed-form vs 1e6-sample integral {:.3}%", 100.0 * worst_int));
    c.add(start.elapsed().as_secs_f64() < 30.0, "runtime < 30 s");
    line(3, &c, start)
}

fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

fn c4_initial_gain() -> Line {
    let start = Instant::now();
    let model = unstable_polytopic();
    let mut c = Check::new();
    match initial_decay_gain(&model, 1.0, &backend()) {
        Ok(k) => {
            let target = [-3.2668, -1.0985];
            let rel = (0..2)
                .map(|j| ((k[(0, j)] - target[j]) / target[j]).abs())
                .fold(0.0, f64::max);
            c.add(rel <= 0.05, format!("K = [{:.4}, {:.4}], worst entry {:.2}% off", k[(0, 0)], k[(0, 1)], 100.0 * rel));
            let abscissa = model
                .vertices(0)
                .iter()
                .map(|v| spectral_abscissa(&(&v.a + &v.b * &k)))
                .fold(f64::NEG_INFINITY, f64::max);
            c.add(abscissa <= -1.0 + 1e-6, format!("closed-loop spectral abscissa {abscissa:.4}"));
        }
        Err(e) => c.add(false, format!("gain LMI failed: {e}")),
    }
    c.add(start.elapsed().as_secs_f64() < 5.0, "runtime < 5 s");
    line(4, &c, start)
}

fn config(text: &str) -> ProblemConfig {
    ProblemConfig::from_toml_str(text).expect("acceptance config parses")
}

fn synthesize(cfg: &ProblemConfig) -> gtc_core::Result<(Bundle, Vec<(PwqFunction, Policy)>)> {
    let mut bundle = cli::synthesize(cfg, &cli::backend_for(cfg), |_| {})?;
    let evaluated = std::mem::take(&mut bundle.evaluated);
    Ok((bundle, evaluated))
}

/// Shared end-to-end checks of criteria 5 and 6.
fn tank_end_to_end(id: u32, grid: &str, iterations: usize, coverage_target: f64, tally: &mut SoundnessTally) -> Line {
    let start = Instant::now();
    let cfg = config(&format!(
        "iterations = {iterations}\n[model]\nbuiltin = \"double_tank\"\n[grid]\npoints_per_axis = [{grid}]\n"
    ));
    let mut c = Check::new();
    let (bundle, evaluated) = match synthesize(&cfg) {
        Ok(b) => b,
        Err(e) => {
            c.add(false, format!("synthesis failed: {e}"));
            return line(id, &c, start);
        }
    };
    tally.absorb(&format!("tank {grid}"), &bundle, &evaluated);
    sdp_checks(&mut c, &bundle, cfg.solver.tol);

    let r = &bundle.resolved;
    let rep = verify_certificate(
        &r.tri,
        &r.model,
        &bundle.certificate,
        &bundle.policy,
        &VerifyOptions {
            samples: VERIFY_SAMPLES,
            seed: cfg.seed,
            tol: TOL_VERIFY,
            gamma: cfg.gamma,
        },
    )
    .expect("verification runs");
    c.add(rep.passed(), format!("final certificate: {} violations in 1e4 samples", rep.total_violations));

    let sim = Simulator {
        tri: &r.tri,
        model: &r.model,
        policy: &bundle.policy,
        pwq: Some(&bundle.certificate),
    };
    let x0 = DVector::from_vec(vec![-2.2, -2.0]);
    match sim.simulate(&x0, &Schedule::default(), &cfg.sim_options()) {
        Ok(traj) => {
            let umax = traj.u.iter().flatten().fold(0.0f64, |m, u| m.max(u.abs()));
            c.add(umax <= 0.5 + 1e-9, format!("max |u| = {umax:.4}"));
            match traj.reach_time {
                Some(t) => {
                    let bc = bound_check(&bundle.certificate, &x0, t, cfg.tol_bound()).unwrap();
                    c.add(bc.satisfied, format!("reach time {t:.2} s, V̄(x0) = {:.4}, bound {:.3}", bc.vbar0, bc.bound));
                    // On ∂X the bound is infinite; check it from where the run enters V̄ < 1.
                    let vbar = traj.vbar.as_deref().unwrap_or(&[]);
                    match vbar.iter().position(|&v| v < 1.0) {
                        Some(k) => {
                            let bound = vbar[k] / (1.0 - vbar[k]);
                            let rest = t - traj.t[k];
                            c.add(
                                rest <= bound + cfg.tol_bound(),
                                format!("from t = {:.2} s (V̄ = {:.4}) reach after {rest:.2} s, bound {bound:.3}", traj.t[k], vbar[k]),
                            );
                        }
                        None => c.add(false, "trajectory never enters V̄ < 1"),
                    }
                }
                None => c.add(false, format!("goal set not reached within {} s", cfg.sim_options().horizon)),
            }
        }
        Err(e) => c.add(false, format!("simulation failed: {e}")),
    }

    let samples = bundle.certificate.sample_lattice(&[200, 200]).unwrap();
    let frac = samples.iter().filter(|s| in_sublevel(s.vbar, 0.99)).count() as f64 / samples.len() as f64;
    c.add(
        frac >= coverage_target,
        format!("0.99-sublevel covers {:.1}% of the box (target {:.0}%)", 100.0 * frac, 100.0 * coverage_target),
    );
    line(id, &c, start)
}

fn sdp_checks(c: &mut Check, bundle: &Bundle, solver_tol: f64) {
    let bad: Vec<String> = bundle
        .log
        .iter()
        .filter(|r| !r.status.is_success())
        .map(|r| format!("step {} {}", r.step, r.status))
        .collect();
    c.add(
        bad.is_empty(),
        if bad.is_empty() {
            format!("all {} SDPs optimal/near-optimal", bundle.log.len())
        } else {
            format!("{} of {} SDPs not optimal ({})", bad.len(), bundle.log.len(), bad.join(", "))
        },
    );
    let hist = &bundle.summary.objective_history;
    let rises: Vec<String> = hist
        .windows(2)
        .filter(|w| w[1] > w[0] + 10.0 * solver_tol * w[0].abs().max(1.0))
        .map(|w| format!("{:.4} -> {:.4}", w[0], w[1]))
        .collect();
    c.add(
        rises.is_empty(),
        format!(
            "objective history {}{}",
            hist.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" "),
            if rises.is_empty() { String::new() } else { format!(" rises: {}", rises.join(", ")) }
        ),
    );
}

fn c7_polytopic(tally: &mut SoundnessTally) -> Line {
    let start = Instant::now();
    let cfg = config(
        "iterations = 6\n[model]\nbuiltin = \"unstable_polytopic\"\n[grid]\npoints_per_axis = [9, 9]\n\
         [initial_policy]\nkind = \"linear\"\nk = [[-3.2668, -1.0985]]\n",
    );
    let mut c = Check::new();
    let (bundle, evaluated) = match synthesize(&cfg) {
        Ok(b) => b,
        Err(e) => {
            c.add(false, format!("synthesis failed: {e}"));
            return line(7, &c, start);
        }
    };
    tally.absorb("polytopic 9x9", &bundle, &evaluated);
    let infeasible: Vec<String> = bundle
        .log
        .iter()
        .filter(|r| r.status == SolveStatus::Infeasible)
        .map(|r| format!("step {}", r.step))
        .collect();
    c.add(
        infeasible.is_empty(),
        format!("{} SDPs, none infeasible{}", bundle.log.len(), if infeasible.is_empty() { String::new() } else { format!(" except {}", infeasible.join(", ")) }),
    );
    let r = &bundle.resolved;
    let sim = Simulator {
        tri: &r.tri,
        model: &r.model,
        policy: &bundle.policy,
        pwq: Some(&bundle.certificate),
    };
    let scenarios = cfg.effective_scenarios();
    let results = gtc_core::simulation::simulate_batch(&sim, &scenarios, &cfg.sim_options(), cfg.tol_bound());
    let ok = results.iter().filter(|(s, _)| s.satisfied == Some(true)).count();
    let worst = results
        .iter()
        .filter_map(|(s, _)| Some(s.reach_time? / s.bound?))
        .fold(0.0f64, f64::max);
    c.add(
        ok == 20 && scenarios.len() == 20,
        format!("{ok}/{} random-α runs from [4, -4] reach the goal within the bound (worst reach/bound {worst:.3})", scenarios.len()),
    );
    line(7, &c, start)
}

fn c8_chua(tally: &mut SoundnessTally) -> Line {
    let start = Instant::now();
    let cfg = config("iterations = 6\n[model]\nbuiltin = \"chua\"\n[grid]\npoints_per_axis = [7, 5, 5]\n");
    let mut c = Check::new();
    let (bundle, evaluated) = match synthesize(&cfg) {
        Ok(b) => b,
        Err(e) => {
            c.add(false, format!("synthesis failed: {e}"));
            return line(8, &c, start);
        }
    };
    tally.absorb("chua 7x5x5", &bundle, &evaluated);
    let infeasible = bundle
        .log
        .iter()
        .filter(|r| r.status == SolveStatus::Infeasible)
        .count();
    c.add(infeasible == 0, format!("{} SDPs, {infeasible} infeasible", bundle.log.len()));
    let r = &bundle.resolved;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x0 = (0..100_000).find_map(|_| {
        let x = DVector::from_iterator(3, CHUA_BOX.iter().map(|&(lo, hi)| rng.random_range(lo..hi)));
        let v = bundle.certificate.evaluate(&x).ok()?;
        (v <= 0.9 && !r.tri.in_goal(&x)).then_some(x)
    });
    let Some(x0) = x0 else {
        c.add(false, "no sampled point with V̄ ≤ 0.9 outside the goal set");
        return line(8, &c, start);
    };
    let sim = Simulator {
        tri: &r.tri,
        model: &r.model,
        policy: &bundle.policy,
        pwq: Some(&bundle.certificate),
    };
    match sim.simulate(&x0, &Schedule::default(), &cfg.sim_options()) {
        Ok(traj) => {
            let umax = traj.u.iter().flatten().fold(0.0f64, |m, u| m.max(u.abs()));
            c.add(umax <= 200.0 + 1e-9, format!("max |u| = {umax:.2}"));
            match traj.reach_time {
                Some(t) => {
                    let bc = bound_check(&bundle.certificate, &x0, t, cfg.tol_bound()).unwrap();
                    c.add(
                        bc.satisfied,
                        format!(
                            "from {:?} reach {t:.4} s within bound {:.4}; {} chattering events",
                            x0.as_slice(),
                            bc.bound,
                            traj.chattering.len()
                        ),
                    );
                }
                None => c.add(false, format!("goal set not reached from {:?}", x0.as_slice())),
            }
        }
        Err(e) => c.add(false, format!("simulation failed: {e}")),
    }
    line(8, &c, start)
}

fn c9_soundness(tally: &SoundnessTally) -> Line {
    let start = Instant::now();
    let mut c = Check::new();
    c.add(
        tally.violations == 0 && tally.certificates > 0,
        format!(
            "{} solved evaluations ({}), {} violations over 1e4 samples each, worst margin {:.2e} \
             ({} uncounted violations of the unrelaxed condition where V̄ > 1)",
            tally.certificates,
            tally.sources.join(", "),
            tally.violations,
            tally.worst_margin,
            tally.uncounted
        ),
    );
    line(9, &c, start)
}

fn c10_negative_control() -> Line {
    let start = Instant::now();
    let mut c = Check::new();
    let cfg = config("iterations = 1\n[model]\nbuiltin = \"double_tank\"\n[grid]\npoints_per_axis = [7, 7]\n");
    let bundle = match cli::synthesize(&cfg, &cli::backend_for(&cfg), |_| {}) {
        Ok(b) => b,
        Err(e) => {
            c.add(false, format!("synthesis failed: {e}"));
            return line(10, &c, start);
        }
    };
    let dir = tempfile::tempdir().unwrap();
    cli::write_bundle(dir.path(), &bundle).unwrap();
    let fresh = certify_via_cli(dir.path());
    let path = dir.path().join(cli::CERTIFICATE_FILE);
    let original = std::fs::read_to_string(&path).unwrap();
    let scaled = |k: f64| {
        let mut cert: gtc_core::pwq::CertificateFile = serde_json::from_str(&original).unwrap();
        cert.p_vectors.iter_mut().flatten().for_each(|v| *v *= k);
        std::fs::write(&path, serde_json::to_string(&cert).unwrap()).unwrap();
        certify_via_cli(dir.path())
    };
    let up = scaled(10.0);
    let down = scaled(0.1);
    c.add(matches!(fresh, Some((0, _))), format!("fresh bundle: {}", counts(fresh)));
    c.add(
        matches!(up, Some((t, u)) if t + u >= 1),
        format!("p-vectors ×10: {}", counts(up)),
    );
    c.add(matches!(down, Some((t, _)) if t >= 1), format!("p-vectors ×0.1: {}", counts(down)));
    c.add(start.elapsed().as_secs_f64() < 60.0, "runtime < 1 min");
    line(10, &c, start)
}

fn counts(r: Option<(usize, usize)>) -> String {
    match r {
        Some((t, u)) => format!("{t} counted + {u} uncounted violations"),
        None => "certify failed".into(),
    }
}

fn certify_via_cli(bundle: &Path) -> Option<(usize, usize)> {
    let out = Command::new(env!("CARGO_BIN_EXE_gtc"))
        .arg("certify")
        .arg(bundle)
        .args(["--samples", "10000"])
        .output()
        .ok()?;
    if !out.status.success() {
        return None;
    }
    let text = String::from_utf8_lossy(&out.stdout);
    let find = |key: &str| text.lines().find_map(|l| l.strip_prefix(key)?.trim().parse().ok());
    Some((find("total violations ")?, find("uncounted violations ")?))
}

fn skipped(id: u32, what: &str) -> Line {
    Line {
        id,
        pass: None,
        text: format!("{what}; slow suite, run with GTC_SLOW=1"),
    }
}

fn main() {
    let slow = std::env::var("GTC_SLOW").is_ok_and(|v| v == "1")
        || std::env::args().any(|a| a == "--slow" || a == "--include-ignored" || a == "--ignored");
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut tally = SoundnessTally {
        worst_margin: f64::INFINITY,
        ..Default::default()
    };
    let only: Option<Vec<u32>> = std::env::var("GTC_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |id: u32| only.as_ref().is_none_or(|o| o.contains(&id));
    let mut lines = Vec::new();
    let mut run = |id: u32, f: &mut dyn FnMut(&mut SoundnessTally) -> Line| {
        if wanted(id) {
            lines.push(f(&mut tally));
        }
    };
    run(1, &mut |_| c1_annihilator());
    run(2, &mut |_| c2_geometry());
    run(3, &mut |_| c3_pwq());
    run(4, &mut |_| c4_initial_gain());
    run(5, &mut |t| tank_end_to_end(5, "9, 9", 5, 0.5, t));
    run(6, &mut |t| {
        if slow {
            tank_end_to_end(6, "15, 15", 7, 0.8, t)
        } else {
            skipped(6, "double tank 15x15, 7 iterations")
        }
    });
    run(7, &mut c7_polytopic);
    run(8, &mut |t| if slow { c8_chua(t) } else { skipped(8, "chua 7x5x5, 6 iterations") });
    run(9, &mut |t| c9_soundness(t));
    run(10, &mut |_| c10_negative_control());

    let mut unexpected = 0;
    println!();
    for l in &lines {
        let tag = match l.pass {
            Some(true) => "PASS",
            Some(false) if KNOWN_SHORTFALLS.contains(&l.id) => "FAIL (known shortfall)",
            Some(false) => {
                unexpected += 1;
                "FAIL"
            }
            None => "SKIP",
        };
        println!("criterion {:>2}: {tag}: {}", l.id, l.text);
    }
    println!();
    if unexpected > 0 {
        eprintln!("{unexpected} acceptance criteria failed");
        std::process::exit(1);
    }
}
