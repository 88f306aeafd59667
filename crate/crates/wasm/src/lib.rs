//! Browser bindings: triangulate a grid, sample a certified V̄ on a lattice,
//! and simulate the closed loop of a bundle.

use gtc_core::config::{ProblemConfig, Resolved};
use gtc_core::geometry::{GridSpec, Triangulation};
use gtc_core::pwq::{CertificateFile, PwqFunction};
use gtc_core::simulation::{bound_check, Schedule, SimOptions, Simulator};
use gtc_core::systems::{Policy, PolicyFile};
use nalgebra::DVector;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Mesh of a regular grid as JSON: `ranges` holds lo,hi pairs, `counts` the
/// points per axis.
#[wasm_bindgen]
pub fn triangulate(ranges: &[f64], counts: &[u32]) -> Result<String, JsError> {
    if ranges.len() != 2 * counts.len() {
        return Err(JsError::new("ranges must hold one lo,hi pair per axis"));
    }
    let ranges: Vec<(f64, f64)> = ranges.chunks(2).map(|c| (c[0], c[1])).collect();
    let counts: Vec<usize> = counts.iter().map(|&c| c as usize).collect();
    let tri = Triangulation::from_spec(&GridSpec::regular(&ranges, &counts)).map_err(js_err)?;
    serde_json::to_string(&tri.export()).map_err(js_err)
}

#[derive(Serialize)]
struct SimResult {
    t: Vec<f64>,
    x: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    vbar: Vec<f64>,
    reach_time: Option<f64>,
    bound: Option<f64>,
    satisfied: Option<bool>,
    left_domain: bool,
}

/// A loaded bundle (config, certificate and policy).
#[wasm_bindgen]
pub struct Bundle {
    resolved: Resolved,
    certificate: PwqFunction,
    policy: Policy,
}

#[wasm_bindgen]
impl Bundle {
    #[wasm_bindgen(constructor)]
    pub fn new(config_toml: &str, certificate_json: &str, policy_json: &str) -> Result<Bundle, JsError> {
        let resolved = ProblemConfig::from_toml_str(config_toml)
            .and_then(|c| c.resolve())
            .map_err(js_err)?;
        let cert: CertificateFile = serde_json::from_str(certificate_json).map_err(js_err)?;
        let policy: PolicyFile = serde_json::from_str(policy_json).map_err(js_err)?;
        let certificate = PwqFunction::from_file(resolved.tri.clone(), &cert).map_err(js_err)?;
        let policy = Policy::from_file(&resolved.tri, &policy).map_err(js_err)?;
        Ok(Bundle {
            resolved,
            certificate,
            policy,
        })
    }

    pub fn dim(&self) -> usize {
        self.resolved.tri.dim()
    }

    /// Box bounds as lo,hi pairs.
    pub fn bounds(&self) -> Vec<f64> {
        self.resolved.tri.bounds().iter().flat_map(|&(lo, hi)| [lo, hi]).collect()
    }

    /// Mesh of the bundle's triangulation as JSON.
    pub fn mesh(&self) -> Result<String, JsError> {
        serde_json::to_string(&self.resolved.tri.export()).map_err(js_err)
    }

    pub fn vbar(&self, x: &[f64]) -> Result<f64, JsError> {
        self.certificate.evaluate(&DVector::from_column_slice(x)).map_err(js_err)
    }

    /// V̄ on an nx×ny lattice over a 2-D box, row-major with x1 varying fastest.
    pub fn lattice(&self, nx: usize, ny: usize) -> Result<Vec<f64>, JsError> {
        if self.dim() != 2 {
            return Err(JsError::new("lattice sampling is 2-D only"));
        }
        let samples = self.certificate.sample_lattice(&[nx, ny]).map_err(js_err)?;
        let mut grid = vec![0.0; nx * ny];
        for (k, s) in samples.iter().enumerate() {
            // sample_lattice varies the last axis fastest.
            let (i, j) = (k / ny, k % ny);
            grid[j * nx + i] = s.vbar;
        }
        Ok(grid)
    }

    /// Closed-loop trajectory from `x0` as JSON, with the time bound at x0.
    pub fn simulate(&self, x0: &[f64], horizon: f64, vertex: usize) -> Result<String, JsError> {
        let r = &self.resolved;
        let x0 = DVector::from_column_slice(x0);
        let sim = Simulator {
            tri: &r.tri,
            model: &r.model,
            policy: &self.policy,
            pwq: Some(&self.certificate),
        };
        let traj = sim
            .simulate(&x0, &Schedule::Vertex { index: vertex }, &SimOptions::with_horizon(horizon))
            .map_err(js_err)?;
        let check = traj
            .reach_time
            .map(|t| bound_check(&self.certificate, &x0, t, r.config.tol_bound()))
            .transpose()
            .map_err(js_err)?;
        let bound = gtc_core::pwq::harmonic_bound(self.certificate.evaluate(&x0).map_err(js_err)?.max(0.0)).map_err(js_err)?;
        let out = SimResult {
            vbar: traj.vbar.clone().unwrap_or_default(),
            t: traj.t,
            x: traj.x,
            u: traj.u,
            reach_time: traj.reach_time,
            bound: bound.is_finite().then_some(bound),
            satisfied: check.map(|c| c.satisfied),
            left_domain: traj.left_domain,
        };
        serde_json::to_string(&out).map_err(js_err)
    }
}
