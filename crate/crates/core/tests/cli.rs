use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use gtc_core::cli::{self, load_bundle};
use gtc_core::pwq::in_sublevel;
use gtc_core::simulation::{Schedule, SimOptions, Simulator};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

const TANK: &str = "seed = 7\niterations = 1\n[model]\nbuiltin = \"double_tank\"\n[grid]\npoints_per_axis = [7, 7]\n";

fn gtc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gtc")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

/// One synthesized tank bundle shared by the tests in this file.
fn bundle() -> &'static Path {
    static DIR: OnceLock<(TempDir, PathBuf)> = OnceLock::new();
    &DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), "tank.toml", TANK);
        let out = dir.path().join("bundle");
        let res = gtc(&["synthesize", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
        (dir, out)
    })
    .1
}

fn total_violations(out: &Output) -> usize {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .find_map(|l| l.strip_prefix("total violations ")?.trim().parse().ok())
        .unwrap()
}

#[test]
fn bundle_has_every_file() {
    for f in [
        cli::CONFIG_FILE,
        cli::CERTIFICATE_FILE,
        cli::POLICY_FILE,
        cli::LOG_FILE,
        cli::SUMMARY_FILE,
    ] {
        assert!(bundle().join(f).is_file(), "{f}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(bundle().join(cli::SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(summary["seed"], 7);
    assert_eq!(summary["points"], 49);
}

#[test]
fn certify_is_reproducible_after_reload() {
    let b = bundle().to_str().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let a = gtc(&["certify", b, "--samples", "2000", "--out", dir.path().to_str().unwrap()]);
    let c = gtc(&["certify", b, "--samples", "2000", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, c.stdout);
    assert_eq!(total_violations(&a), 0);
    assert!(dir.path().join(cli::VERIFICATION_FILE).is_file());

    let loaded = load_bundle(bundle()).unwrap();
    let original: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(bundle().join(cli::CERTIFICATE_FILE)).unwrap()).unwrap();
    assert_eq!(serde_json::to_value(loaded.certificate.to_file()).unwrap(), original);
}

#[test]
fn malformed_config_exits_3_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    for (name, text) in [
        ("syntax.toml", "iterations = [\n"),
        ("unknown.toml", "[model]\nbuiltin = \"double_tank\"\nflavour = 1\n"),
        ("builtin.toml", "[model]\nbuiltin = \"pendulum\"\n"),
        ("grid.toml", "[model]\nbuiltin = \"double_tank\"\n[grid]\npoints_per_axis = [4, 4]\n"),
    ] {
        let cfg = write_config(dir.path(), name, text);
        let res = gtc(&["synthesize", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code(&res), 3, "{name}: {}", String::from_utf8_lossy(&res.stderr));
        assert!(!out.exists(), "{name}");
    }
    assert_eq!(code(&gtc(&["synthesize", "--bogus"])), 3);
    assert_eq!(code(&gtc(&["certify", dir.path().join("missing").to_str().unwrap()])), 3);
}

#[test]
fn simulate_rejects_x0_outside_the_box() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle().to_str().unwrap();
    let bad = gtc(&["simulate", b, "--x0", "5,0", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&bad), 3);
    let wrong_dim = gtc(&["simulate", b, "--x0", "0.1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&wrong_dim), 3);
    let ok = gtc(&["simulate", b, "--x0", "-1,-1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(dir.path().join("scenario_000.csv").is_file());
}

#[test]
fn level_zero_marks_only_the_origin() {
    let dir = tempfile::tempdir().unwrap();
    let res = gtc(&[
        "export-levelsets",
        bundle().to_str().unwrap(),
        "--lattice",
        "41x41",
        "--levels",
        "0,0.5",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let mut rdr = csv::Reader::from_path(dir.path().join("levelsets.csv")).unwrap();
    let header = rdr.headers().unwrap().clone();
    assert_eq!(&header[4], "level_0");
    let (mut zero, mut half) = (0, 0);
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let x: Vec<f64> = (0..2).map(|i| rec[i].parse().unwrap()).collect();
        let vbar: f64 = rec[2].parse().unwrap();
        if &rec[4] == "1" {
            zero += 1;
            assert!(x.iter().all(|v| v.abs() < 1e-12), "{x:?}");
        }
        if &rec[5] == "1" {
            half += 1;
            assert!(in_sublevel(vbar, 0.5));
        }
    }
    assert_eq!(zero, 1);
    assert!(half > 1);
}

#[test]
fn dump_sdp_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tank.toml", TANK);
    let eval = dir.path().join("eval.json");
    let res = gtc(&["dump-sdp", "--config", cfg.to_str().unwrap(), "--out", eval.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let improve = dir.path().join("improve.json");
    let res = gtc(&["dump-sdp", "--bundle", bundle().to_str().unwrap(), "--out", improve.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    for p in [eval, improve] {
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        assert!(v.is_object());
    }
}

#[test]
fn seeded_runs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tank.toml", TANK);
    let out = dir.path().join("again");
    let res = gtc(&["synthesize", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&res), 0);
    let read = |d: &Path| std::fs::read(d.join(cli::CERTIFICATE_FILE)).unwrap();
    assert_eq!(read(&out), read(bundle()));
}

#[test]
fn reach_times_respect_the_bound() {
    let loaded = load_bundle(bundle()).unwrap();
    let r = &loaded.resolved;
    let sim = Simulator {
        tri: &r.tri,
        model: &r.model,
        policy: &loaded.policy,
        pwq: Some(&loaded.certificate),
    };
    let opts = SimOptions {
        dt: Some(0.05),
        ..SimOptions::with_horizon(100.0)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut runs = 0;
    while runs < 100 {
        let x0 = DVector::from_iterator(2, r.tri.bounds().iter().map(|&(lo, hi)| rng.random_range(lo..hi)));
        let v0 = loaded.certificate.evaluate(&x0).unwrap();
        if v0 > 0.95 || r.tri.in_goal(&x0) {
            continue;
        }
        runs += 1;
        let traj = sim
            .simulate(&x0, &Schedule::Random { seed: runs, period: Some(1.0) }, &opts)
            .unwrap();
        assert!(!traj.left_domain);
        let vbar = traj.vbar.as_ref().unwrap();
        let reached = traj.reach_time.map_or(vbar.len(), |t| traj.t.iter().position(|&s| s >= t).unwrap());
        for w in vbar[..reached].windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "V̄ increased from {} to {}", w[0], w[1]);
        }
        let t = traj.reach_time.expect("goal set reached");
        let bound = v0 / (1.0 - v0);
        assert!(t <= bound + 1e-6, "reach {t} > bound {bound} from {x0:?}");
    }
}
