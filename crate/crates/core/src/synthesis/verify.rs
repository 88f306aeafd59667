//! Sampling-based check of a certificate against the time-bound conditions.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{augment, FaceKind, Triangulation};
use crate::pwq::PwqFunction;
use crate::systems::{closed_loop_matrix, Policy, PolytopicModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyOptions {
    pub samples: usize,
    pub seed: u64,
    /// Relative tolerance; scaled by the local magnitude of each inequality.
    pub tol: f64,
    /// Lower bound V̄ ≥ γ|x|² checked on the goal set.
    pub gamma: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            samples: 10_000,
            seed: 0,
            tol: 1e-6,
            gamma: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub family: String,
    /// Whether violations count toward `total_violations`.
    #[serde(default = "yes")]
    pub counted: bool,
    pub checked: usize,
    pub violations: usize,
    /// Smallest satisfied margin (negative means violated).
    pub worst_margin: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worst_point: Option<Vec<f64>>,
}

fn yes() -> bool {
    true
}

impl FamilyReport {
    fn new(name: &str) -> Self {
        FamilyReport {
            family: name.into(),
            counted: true,
            checked: 0,
            violations: 0,
            worst_margin: f64::INFINITY,
            worst_point: None,
        }
    }

    fn record(&mut self, margin: f64, tol: f64, x: &DVector<f64>) {
        self.checked += 1;
        if margin < -tol {
            self.violations += 1;
        }
        if margin < self.worst_margin {
            self.worst_margin = margin;
            self.worst_point = Some(x.iter().copied().collect());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub samples: usize,
    pub seed: u64,
    pub tol: f64,
    pub families: Vec<FamilyReport>,
    pub total_violations: usize,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.total_violations == 0
    }

    pub fn family(&self, name: &str) -> Option<&FamilyReport> {
        self.families.iter().find(|f| f.family == name)
    }
}

fn dirichlet(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..d).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

fn combine(tri: &Triangulation, verts: &[usize], w: &[f64]) -> DVector<f64> {
    let mut x = DVector::zeros(tri.dim());
    for (&v, &b) in verts.iter().zip(w) {
        x += &tri.points()[v] * b;
    }
    x
}

/// Derivative of x̄ᵀSx̄ along Ā x̄ with its natural magnitude for tolerance scaling.
fn derivative(s: &DMatrix<f64>, abar: &DMatrix<f64>, xb: &DVector<f64>) -> (f64, f64) {
    let ax = abar * xb;
    let sx = s * xb;
    let v = 2.0 * sx.dot(&ax);
    let scale = 2.0 * sx.norm() * ax.norm();
    (v, scale)
}

/// Check the certificate conditions at random points.
///
/// Families: `positivity` (V̄ ≥ 0, and ≥ γ|x|² on the goal set), `decrease`
/// (V̄̇ + (1 − V̄)² ≤ 0 where V̄ ≤ 1 outside the goal set), `decrease_above`
/// (V̄̇ ≤ 0 where V̄ > 1), `goal_decrease` (V̄̇ ≤ 0 on the goal set),
/// `boundary` (V̄ ≥ 1 on ∂X) and `sliding` (the same decrease conditions on
/// shared faces, with one side's dynamics paired with the other side's
/// quadratic form). These are the scalar conditions the LMIs imply.
///
/// `unrelaxed_above` checks V̄̇ + (1 − V̄)² ≤ 0 where V̄ > 1. The LMIs do not
/// imply it (their nonnegative multipliers only cover 1 − V̄ ≥ 0), so it is
/// reported but not counted.
///
/// Every model vertex is checked at each sampled point, which covers all
/// convex uncertainty weights.
pub fn verify_certificate(
    tri: &Triangulation,
    model: &PolytopicModel,
    pwq: &PwqFunction,
    policy: &Policy,
    opts: &VerifyOptions,
) -> Result<VerificationReport> {
    model.check_triangulation(tri)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n = tri.dim();
    let mut positivity = FamilyReport::new("positivity");
    let mut decrease = FamilyReport::new("decrease");
    let mut goal_decrease = FamilyReport::new("goal_decrease");
    let mut boundary = FamilyReport::new("boundary");
    let mut sliding = FamilyReport::new("sliding");
    let mut decrease_above = FamilyReport::new("decrease_above");
    let mut unrelaxed_above = FamilyReport::new("unrelaxed_above");
    unrelaxed_above.counted = false;

    let abars: Vec<Vec<DMatrix<f64>>> = (0..tri.num_simplices())
        .map(|q| {
            model
                .vertices(q)
                .iter()
                .map(|v| closed_loop_matrix(&v.a, &v.b, policy.gain(q)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    if opts.samples > 0 {
        // Volume-weighted simplex choice.
        let cum: Vec<f64> = (0..tri.num_simplices())
            .scan(0.0, |acc, q| {
                *acc += tri.det(q).abs();
                Some(*acc)
            })
            .collect();
        let total = *cum.last().unwrap();
        for _ in 0..opts.samples {
            let r = rng.random::<f64>() * total;
            let q = cum.partition_point(|&c| c < r).min(tri.num_simplices() - 1);
            let w = dirichlet(&mut rng, n + 1);
            let x = combine(tri, &tri.simplices()[q], &w);
            let xb = augment(&x);
            let s = pwq.local(q);
            let v = xb.dot(&(s * &xb));
            let vscale = 1.0 + (s.norm() * xb.norm_squared());
            let floor = if tri.is_goal(q) { opts.gamma * x.norm_squared() } else { 0.0 };
            positivity.record(v - floor, opts.tol * vscale, &x);
            for abar in &abars[q] {
                let (vd, scale) = derivative(s, abar, &xb);
                if tri.is_goal(q) {
                    goal_decrease.record(-vd, opts.tol * (1.0 + scale), &x);
                } else if v <= 1.0 {
                    decrease.record(-(vd + (1.0 - v).powi(2)), opts.tol * (1.0 + scale + vscale), &x);
                } else {
                    decrease_above.record(-vd, opts.tol * (1.0 + scale), &x);
                    unrelaxed_above.record(-(vd + (1.0 - v).powi(2)), opts.tol * (1.0 + scale + vscale), &x);
                }
            }
        }

        let bfaces = tri.faces_of_kind(FaceKind::Boundary);
        let shared: Vec<usize> = (0..tri.num_faces())
            .filter(|&f| tri.face_kind(f) != FaceKind::Boundary)
            .collect();
        for _ in 0..opts.samples {
            if !bfaces.is_empty() {
                let f = bfaces[rng.random_range(0..bfaces.len())];
                let (a, _) = tri.neighbors(f);
                let x = combine(tri, &tri.faces()[f], &dirichlet(&mut rng, n));
                let v = pwq.evaluate_in(a, &x);
                let xb = augment(&x);
                boundary.record(v - 1.0, opts.tol * (1.0 + pwq.local(a).norm() * xb.norm_squared()), &x);
            }
            if !shared.is_empty() {
                let f = shared[rng.random_range(0..shared.len())];
                let (a, b) = tri.neighbors(f);
                let x = combine(tri, &tri.faces()[f], &dirichlet(&mut rng, n));
                let xb = augment(&x);
                let goal_face = tri.face_kind(f) == FaceKind::Goal;
                for (dyn_q, val_q) in [(a, b), (b, a)] {
                    let s = pwq.local(val_q);
                    let v = xb.dot(&(s * &xb));
                    for abar in &abars[dyn_q] {
                        let (vd, scale) = derivative(s, abar, &xb);
                        if goal_face || v > 1.0 {
                            sliding.record(-vd, opts.tol * (1.0 + scale), &x);
                        } else {
                            sliding.record(-(vd + (1.0 - v).powi(2)), opts.tol * (2.0 + scale), &x);
                        }
                    }
                }
            }
        }
        // Grid points on the boundary, where equality is allowed.
        for (i, x) in tri.points().iter().enumerate() {
            if !tri.contains_box(x) || !on_box_boundary(tri, x) {
                continue;
            }
            let v = pwq.p_vectors()[i].dot(&augment(x));
            boundary.record(v - 1.0, opts.tol * (1.0 + v.abs()), x);
        }
    }

    let families = vec![
        positivity,
        decrease,
        decrease_above,
        goal_decrease,
        boundary,
        sliding,
        unrelaxed_above,
    ];
    let total_violations = families.iter().filter(|f| f.counted).map(|f| f.violations).sum();
    Ok(VerificationReport {
        samples: opts.samples,
        seed: opts.seed,
        tol: opts.tol,
        families,
        total_violations,
    })
}

fn on_box_boundary(tri: &Triangulation, x: &DVector<f64>) -> bool {
    tri.bounds()
        .iter()
        .zip(x.iter())
        .any(|(&(lo, hi), &c)| c == lo || c == hi)
}
