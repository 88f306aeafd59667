//! Continuous piecewise-quadratic functions over a triangulation.
//!
//! Each grid point x_i carries an affine function v̄_i(x) = p_iᵀ x̄. Inside a
//! simplex the function is the barycentric interpolation of the vertex
//! affine functions, which is the quadratic form x̄ᵀ S_q x̄.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{augment, Triangulation};

/// Tolerance on the affine part of the origin's p-vector.
const ORIGIN_TOL: f64 = 1e-7;

/// S = ½(Pᵀ X̄⁻¹ + X̄⁻ᵀ P), where row j of `p_rows` is the p-vector of vertex j.
pub fn local_quadratic(p_rows: &DMatrix<f64>, vertex_inverse: &DMatrix<f64>) -> DMatrix<f64> {
    let half = p_rows.transpose() * vertex_inverse;
    let s = &half + half.transpose();
    s * 0.5
}

/// Same as [`local_quadratic`] but starting from X̄_q.
pub fn local_quadratic_checked(p_rows: &DMatrix<f64>, vertex_matrix: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = vertex_matrix
        .clone()
        .try_inverse()
        .ok_or(Error::Singular("vertex matrix"))?;
    Ok(local_quadratic(p_rows, &inv))
}

/// ∫_Δ x̄ᵀ S x̄ dx via the closed form over the simplex vertices.
pub fn simplex_integral(s: &DMatrix<f64>, vertex_matrix: &DMatrix<f64>, det: f64) -> f64 {
    let n = vertex_matrix.nrows() - 1;
    let gram = vertex_matrix.transpose() * s * vertex_matrix;
    let mut acc = 0.0;
    for i in 0..=n {
        for j in i..=n {
            acc += gram[(i, j)];
        }
    }
    integral_factor(n) * det.abs() * acc
}

/// 2 / ((n+1)(n+2) n!)
pub fn integral_factor(n: usize) -> f64 {
    let fact: f64 = (1..=n).map(|k| k as f64).product();
    2.0 / ((n + 1) as f64 * (n + 2) as f64 * fact)
}

/// V̄/(1 − V̄), or +∞ once V̄ ≥ 1.
pub fn harmonic_bound(vbar: f64) -> Result<f64> {
    if vbar < 0.0 {
        return Err(Error::NegativeValue(vbar));
    }
    if vbar >= 1.0 {
        return Ok(f64::INFINITY);
    }
    Ok(vbar / (1.0 - vbar))
}

#[derive(Debug, Clone)]
pub struct PwqFunction {
    tri: Arc<Triangulation>,
    p: Vec<DVector<f64>>,
    local: Vec<DMatrix<f64>>,
}

impl PwqFunction {
    pub fn new(tri: Arc<Triangulation>, mut p: Vec<DVector<f64>>) -> Result<Self> {
        let n = tri.dim();
        if p.len() != tri.num_points() {
            return Err(Error::Dimension(format!(
                "{} p-vectors for {} grid points",
                p.len(),
                tri.num_points()
            )));
        }
        if p.iter().any(|v| v.len() != n + 1) {
            return Err(Error::Dimension(format!("p-vectors must have length {}", n + 1)));
        }
        let o = tri.origin_index();
        if p[o][n].abs() > ORIGIN_TOL {
            return Err(Error::InvalidModel(format!(
                "origin p-vector has affine part {} (must be 0)",
                p[o][n]
            )));
        }
        p[o][n] = 0.0;
        let local = (0..tri.num_simplices())
            .map(|q| local_quadratic(&Self::rows_for(&tri, &p, q), tri.vertex_inverse(q)))
            .collect();
        Ok(PwqFunction { tri, p, local })
    }

    /// The function with p_i = c·e_{n+1} at every non-origin point.
    pub fn constant_like(tri: Arc<Triangulation>, c: f64) -> Result<Self> {
        let n = tri.dim();
        let o = tri.origin_index();
        let p = (0..tri.num_points())
            .map(|i| {
                let mut v = DVector::zeros(n + 1);
                if i != o {
                    v[n] = c;
                }
                v
            })
            .collect();
        Self::new(tri, p)
    }

    fn rows_for(tri: &Triangulation, p: &[DVector<f64>], q: usize) -> DMatrix<f64> {
        let verts = &tri.simplices()[q];
        let n = tri.dim();
        DMatrix::from_fn(n + 1, n + 1, |r, c| p[verts[r]][c])
    }

    pub fn triangulation(&self) -> &Arc<Triangulation> {
        &self.tri
    }

    pub fn p_vectors(&self) -> &[DVector<f64>] {
        &self.p
    }

    /// Matrix whose row j is the p-vector of vertex j of simplex q.
    pub fn vertex_rows(&self, q: usize) -> DMatrix<f64> {
        Self::rows_for(&self.tri, &self.p, q)
    }

    /// S_q
    pub fn local(&self, q: usize) -> &DMatrix<f64> {
        &self.local[q]
    }

    /// x̄ᵀ S_q x̄ without a membership check.
    pub fn evaluate_in(&self, q: usize, x: &DVector<f64>) -> f64 {
        let xb = augment(x);
        xb.dot(&(&self.local[q] * &xb))
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> Result<f64> {
        let q = self.tri.locate(x)?;
        Ok(self.evaluate_in(q, x))
    }

    /// d/dt V_q along ẋ = `xdot`: 2 x̄ᵀ S_q [ẋ; 0].
    pub fn derivative_in(&self, q: usize, x: &DVector<f64>, xdot: &DVector<f64>) -> f64 {
        let n = x.len();
        let xb = augment(x);
        let mut vb = DVector::zeros(n + 1);
        vb.rows_mut(0, n).copy_from(xdot);
        2.0 * xb.dot(&(&self.local[q] * vb))
    }

    /// Exact ∫_X V̄(x) dx.
    pub fn integral(&self) -> f64 {
        (0..self.tri.num_simplices())
            .map(|q| simplex_integral(&self.local[q], self.tri.vertex_matrix(q), self.tri.det(q)))
            .sum()
    }

    /// Same function with every p-vector multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.tri.clone(),
            self.p.iter().map(|v| v * factor).collect(),
        )
    }

    pub fn to_file(&self) -> CertificateFile {
        CertificateFile {
            grid_hash: self.tri.grid_hash(),
            p_vectors: self.p.iter().map(|v| v.iter().copied().collect()).collect(),
        }
    }

    pub fn from_file(tri: Arc<Triangulation>, file: &CertificateFile) -> Result<Self> {
        let expected = tri.grid_hash();
        if file.grid_hash != expected {
            return Err(Error::GridMismatch {
                expected,
                found: file.grid_hash.clone(),
            });
        }
        Self::new(
            tri,
            file.p_vectors
                .iter()
                .map(|v| DVector::from_column_slice(v))
                .collect(),
        )
    }

    /// Sample V̄ and its time bound on a regular lattice spanning the box.
    pub fn sample_lattice(&self, per_axis: &[usize]) -> Result<Vec<LevelSample>> {
        let bounds = self.tri.bounds();
        if per_axis.len() != bounds.len() || per_axis.iter().any(|&c| c < 2) {
            return Err(Error::Dimension(format!(
                "lattice needs {} axis counts of at least 2",
                bounds.len()
            )));
        }
        let axes: Vec<Vec<f64>> = per_axis
            .iter()
            .zip(bounds)
            .map(|(&c, &(lo, hi))| {
                (0..c)
                    .map(|i| lo + (hi - lo) * i as f64 / (c - 1) as f64)
                    .collect()
            })
            .collect();
        let total: usize = per_axis.iter().product();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; axes.len()];
        for _ in 0..total {
            let x = DVector::from_iterator(axes.len(), idx.iter().enumerate().map(|(a, &i)| axes[a][i]));
            let vbar = self.evaluate(&x)?;
            out.push(LevelSample {
                time_bound: harmonic_bound(vbar.max(0.0))?,
                x: x.iter().copied().collect(),
                vbar,
            });
            for a in (0..axes.len()).rev() {
                idx[a] += 1;
                if idx[a] < axes[a].len() {
                    break;
                }
                idx[a] = 0;
            }
        }
        Ok(out)
    }
}

/// On-disk certificate: grid hash plus one p-vector per grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateFile {
    pub grid_hash: String,
    pub p_vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelSample {
    pub x: Vec<f64>,
    pub vbar: f64,
    pub time_bound: f64,
}

/// Absolute slack on sublevel membership, so that level 0 keeps the origin.
pub const SUBLEVEL_TOL: f64 = 1e-9;

/// Membership in the closed sublevel set {V̄ ≤ level}.
pub fn in_sublevel(vbar: f64, level: f64) -> bool {
    vbar <= level + SUBLEVEL_TOL
}

/// Write lattice samples as CSV with columns x1..xn, vbar, time_bound and one
/// 0/1 membership column per requested level.
pub fn write_level_csv<W: Write>(out: W, samples: &[LevelSample], levels: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = samples.first().map_or(0, |s| s.x.len());
    let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    header.push("vbar".into());
    header.push("time_bound".into());
    header.extend(levels.iter().map(|l| format!("level_{l}")));
    w.write_record(&header)?;
    for s in samples {
        let mut rec: Vec<String> = s.x.iter().map(|v| v.to_string()).collect();
        rec.push(s.vbar.to_string());
        rec.push(if s.time_bound.is_finite() {
            s.time_bound.to_string()
        } else {
            "inf".into()
        });
        rec.extend(levels.iter().map(|&l| if in_sublevel(s.vbar, l) { "1" } else { "0" }.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{FaceKind, GridSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tri(spec: GridSpec) -> Arc<Triangulation> {
        Arc::new(Triangulation::from_spec(&spec).unwrap())
    }

    fn random_pwq(t: Arc<Triangulation>, rng: &mut ChaCha8Rng) -> PwqFunction {
        let n = t.dim();
        let o = t.origin_index();
        let p = (0..t.num_points())
            .map(|i| {
                let mut v = DVector::from_fn(n + 1, |_, _| rng.random_range(-1.0..1.0));
                if i == o {
                    v[n] = 0.0;
                }
                v
            })
            .collect();
        PwqFunction::new(t, p).unwrap()
    }

    fn random_in_simplex(t: &Triangulation, q: usize, rng: &mut ChaCha8Rng) -> (DVector<f64>, Vec<f64>) {
        let d = t.dim() + 1;
        let mut w: Vec<f64> = (0..d).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        let x = t.simplices()[q]
            .iter()
            .zip(&w)
            .map(|(&v, &b)| &t.points()[v] * b)
            .sum();
        (x, w)
    }

    #[test]
    fn identity_case() {
        let t = tri(GridSpec::regular(&[(-1.0, 1.0), (-1.0, 1.0)], &[3, 3]));
        let xm = t.vertex_matrix(2);
        let s = local_quadratic(&xm.transpose(), t.vertex_inverse(2));
        assert!((s - DMatrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn constant_rows_give_constant_function() {
        let t = tri(GridSpec::regular(&[(-1.0, 1.0), (-1.0, 1.0)], &[3, 3]));
        let c = 2.5;
        let mut rows = DMatrix::zeros(3, 3);
        rows.column_mut(2).fill(c);
        let q = 3;
        let s = local_quadratic(&rows, t.vertex_inverse(q));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let (x, _) = random_in_simplex(&t, q, &mut rng);
            let xb = augment(&x);
            assert!((xb.dot(&(&s * &xb)) - c).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_form_matches_barycentric_interpolation() {
        let t = tri(GridSpec::regular(&[(-1.0, 1.0), (-2.0, 2.0), (-1.0, 1.0)], &[3, 3, 3]));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let q = rng.random_range(0..t.num_simplices());
            let rows = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-2.0..2.0));
            let s = local_quadratic(&rows, t.vertex_inverse(q));
            let (x, w) = random_in_simplex(&t, q, &mut rng);
            let xb = augment(&x);
            let direct: f64 = (0..4).map(|j| w[j] * rows.row(j).transpose().dot(&xb)).sum();
            assert!((xb.dot(&(&s * &xb)) - direct).abs() < 1e-10);
            // The vertex-indexed form reproduces the same value through β.
            let beta = DVector::from_column_slice(&w);
            let gram = t.vertex_matrix(q).transpose() * &s * t.vertex_matrix(q);
            assert!((beta.dot(&(&gram * &beta)) - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn evaluate_origin_and_grid_points() {
        let t = tri(GridSpec::regular(&[(-1.0, 1.0), (-1.0, 1.0)], &[5, 5]));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_pwq(t.clone(), &mut rng);
        assert_eq!(f.evaluate(&DVector::zeros(2)).unwrap().abs(), 0.0);
        for (i, x) in t.points().iter().enumerate() {
            let expected = f.p_vectors()[i].dot(&augment(x));
            assert!((f.evaluate(x).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn continuous_across_faces() {
        let t = tri(GridSpec::regular(&[(-1.0, 1.0), (-2.0, 2.0), (-1.0, 1.0)], &[3, 5, 3]));
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = random_pwq(t.clone(), &mut rng);
        for fi in 0..t.num_faces() {
            if t.face_kind(fi) == FaceKind::Boundary {
                continue;
            }
            let (a, b) = t.neighbors(fi);
            for _ in 0..5 {
                let mut w: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
                let s: f64 = w.iter().sum();
                w.iter_mut().for_each(|v| *v /= s);
                let x: DVector<f64> = t.faces()[fi]
                    .iter()
                    .zip(&w)
                    .map(|(&v, &c)| &t.points()[v] * c)
                    .sum();
                let (va, vb) = (f.evaluate_in(a, &x), f.evaluate_in(b, &x));
                assert!((va - vb).abs() <= 1e-9 * (1.0 + va.abs()));
            }
        }
    }

    #[test]
    fn harmonic_bound_values() {
        assert_eq!(harmonic_bound(0.0).unwrap(), 0.0);
        assert_eq!(harmonic_bound(0.5).unwrap(), 1.0);
        assert!(harmonic_bound(1.0).unwrap().is_infinite());
        assert!(harmonic_bound(-0.1).is_err());
    }

    #[test]
    fn integral_of_one_is_box_volume() {
        for spec in [
            GridSpec::regular(&[(-2.2, 2.2), (-2.0, 2.0)], &[7, 5]),
            GridSpec::regular(&[(-1.0, 1.0), (-2.0, 2.0), (-1.0, 1.0)], &[3, 5, 3]),
        ] {
            let t = tri(spec);
            // V̄ ≡ 1 away from the origin vertex is not constant, so use S = e e^T directly.
            let n = t.dim();
            let mut e = DMatrix::zeros(n + 1, n + 1);
            e[(n, n)] = 1.0;
            let total: f64 = (0..t.num_simplices())
                .map(|q| simplex_integral(&e, t.vertex_matrix(q), t.det(q)))
                .sum();
            assert!((total - t.box_volume()).abs() < 1e-12 * t.box_volume());
        }
    }

    #[test]
    fn unit_triangle_area() {
        let xm = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        let mut e = DMatrix::zeros(3, 3);
        e[(2, 2)] = 1.0;
        assert!((simplex_integral(&e, &xm, xm.determinant()) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn augmented_norm_integral() {
        let t = tri(GridSpec::regular(&[(-1.0, 1.0), (-1.0, 1.0)], &[3, 3]));
        // p_i = x̄_i reproduces x̄ᵀx̄ at the vertices, but interpolation is not
        // exact for it, so integrate S = I through the closed form directly.
        let total: f64 = (0..t.num_simplices())
            .map(|q| simplex_integral(&DMatrix::identity(3, 3), t.vertex_matrix(q), t.det(q)))
            .sum();
        let analytic = 4.0 + 8.0 / 3.0;
        assert!((total - analytic).abs() < 1e-12);
        // Monte Carlo cross-check.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = 1_000_000;
        let mc: f64 = (0..m)
            .map(|_| {
                let (a, b): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                a * a + b * b + 1.0
            })
            .sum::<f64>()
            / m as f64
            * 4.0;
        assert!((mc - analytic).abs() / analytic < 1e-2);
    }

    #[test]
    fn integral_is_linear() {
        let t = tri(GridSpec::regular(&[(-1.0, 1.0), (-1.0, 1.0)], &[5, 5]));
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let f = random_pwq(t.clone(), &mut rng);
        let g = random_pwq(t.clone(), &mut rng);
        let (a, b) = (0.7, -1.3);
        let combo = PwqFunction::new(
            t,
            f.p_vectors()
                .iter()
                .zip(g.p_vectors())
                .map(|(u, v)| u * a + v * b)
                .collect(),
        )
        .unwrap();
        let lhs = combo.integral();
        let rhs = a * f.integral() + b * g.integral();
        assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn certificate_round_trip_and_hash_guard() {
        let t = tri(GridSpec::regular(&[(-1.0, 1.0), (-1.0, 1.0)], &[3, 3]));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_pwq(t.clone(), &mut rng);
        let file = f.to_file();
        let json = serde_json::to_string(&file).unwrap();
        let back: CertificateFile = serde_json::from_str(&json).unwrap();
        let g = PwqFunction::from_file(t, &back).unwrap();
        assert_eq!(g.p_vectors(), f.p_vectors());
        let other = tri(GridSpec::regular(&[(-1.0, 1.0), (-1.0, 1.0)], &[5, 5]));
        assert!(matches!(PwqFunction::from_file(other, &back), Err(Error::GridMismatch { .. })));
    }

    #[test]
    fn origin_affine_part_is_enforced() {
        let t = tri(GridSpec::regular(&[(-1.0, 1.0), (-1.0, 1.0)], &[3, 3]));
        let mut p = vec![DVector::zeros(3); 9];
        p[t.origin_index()][2] = 0.5;
        assert!(PwqFunction::new(t, p).is_err());
    }
}
