//! Polytopic models, piecewise-affine policies and the builtin example plants.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{augment, Triangulation};

/// One vertex of a polytopic model: ẋ = A x + B u.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

#[derive(Debug, Clone)]
enum VertexSets {
    Uniform(Arc<Vec<VertexSystem>>),
    PerSimplex(Vec<Arc<Vec<VertexSystem>>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChuaParams {
    pub c1: f64,
    pub c2: f64,
    pub l: f64,
    pub r: f64,
    pub ga: f64,
    pub gb: f64,
    pub e: f64,
}

impl Default for ChuaParams {
    fn default() -> Self {
        ChuaParams {
            c1: 30.14e-6,
            c2: 185.66e-6,
            l: 52.28,
            r: 1673.0,
            ga: -0.801e-3,
            gb: -0.365e-3,
            e: 1.74,
        }
    }
}

impl ChuaParams {
    /// Diode conductance G(V).
    pub fn conductance(&self, v: f64) -> f64 {
        let av = v.abs();
        if av < self.e {
            self.ga
        } else {
            self.gb + (self.ga - self.gb) * self.e / av
        }
    }

    /// Tight (min, max) of G over [lo, hi].
    pub fn sector_bounds(&self, lo: f64, hi: f64) -> (f64, f64) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let near = if lo <= 0.0 && hi >= 0.0 {
            0.0
        } else {
            lo.abs().min(hi.abs())
        };
        let far = lo.abs().max(hi.abs());
        let (g_near, g_far) = (self.conductance(near), self.conductance(far));
        (g_near.min(g_far), g_near.max(g_far))
    }

    /// State matrix with the diode conductance frozen at `g`.
    pub fn a_matrix(&self, g: f64) -> DMatrix<f64> {
        let ChuaParams { c1, c2, l, r, .. } = *self;
        DMatrix::from_row_slice(
            3,
            3,
            &[
                (-1.0 / r - g) / c1,
                1.0 / (r * c1),
                0.0,
                1.0 / (r * c2),
                -1.0 / (r * c2),
                1.0 / (1000.0 * c2),
                0.0,
                -1000.0 / l,
                0.0,
            ],
        )
    }

    pub fn b_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(3, 1, &[1.0 / (1000.0 * self.c1), 0.0, 0.0])
    }

    /// True nonlinear vector field.
    pub fn field(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.a_matrix(self.conductance(x[0])) * x + self.b_matrix() * u
    }
}

/// Vector field used when simulating.
#[derive(Debug, Clone)]
pub enum Plant {
    /// ẋ = Σ α_k (A_k x + B_k u) with a shared vertex set.
    Polytopic(Arc<Vec<VertexSystem>>),
    Chua(ChuaParams),
}

impl Plant {
    /// Number of selectable vertices (1 for deterministic plants).
    pub fn vertex_count(&self) -> usize {
        match self {
            Plant::Polytopic(v) => v.len(),
            Plant::Chua(_) => 1,
        }
    }

    pub fn field(&self, x: &DVector<f64>, u: &DVector<f64>, alpha: &[f64]) -> DVector<f64> {
        match self {
            Plant::Polytopic(verts) => {
                let mut out = DVector::zeros(x.len());
                for (v, &w) in verts.iter().zip(alpha) {
                    if w != 0.0 {
                        out += (&v.a * x + &v.b * u) * w;
                    }
                }
                out
            }
            Plant::Chua(p) => p.field(x, u),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PolytopicModel {
    name: String,
    n: usize,
    m: usize,
    sets: VertexSets,
    u_lower: DVector<f64>,
    u_upper: DVector<f64>,
    bounds: Vec<(f64, f64)>,
    plant: Plant,
}

impl PolytopicModel {
    /// A model whose vertex systems are shared by every simplex.
    pub fn uniform(
        name: &str,
        vertices: Vec<VertexSystem>,
        u_lower: DVector<f64>,
        u_upper: DVector<f64>,
        bounds: Vec<(f64, f64)>,
    ) -> Result<Self> {
        let (n, m) = check_vertices(&vertices)?;
        check_bounds(n, m, &u_lower, &u_upper, &bounds)?;
        let shared = Arc::new(vertices);
        Ok(PolytopicModel {
            name: name.to_string(),
            n,
            m,
            sets: VertexSets::Uniform(shared.clone()),
            u_lower,
            u_upper,
            bounds,
            plant: Plant::Polytopic(shared),
        })
    }

    /// A model with its own vertex list on every simplex.
    pub fn per_simplex(
        name: &str,
        sets: Vec<Vec<VertexSystem>>,
        u_lower: DVector<f64>,
        u_upper: DVector<f64>,
        bounds: Vec<(f64, f64)>,
        plant: Plant,
    ) -> Result<Self> {
        let first = sets
            .first()
            .ok_or_else(|| Error::InvalidModel("no simplices".into()))?;
        let (n, m) = check_vertices(first)?;
        for s in &sets {
            if check_vertices(s)? != (n, m) {
                return Err(Error::InvalidModel("per-simplex vertex sizes differ".into()));
            }
        }
        check_bounds(n, m, &u_lower, &u_upper, &bounds)?;
        Ok(PolytopicModel {
            name: name.to_string(),
            n,
            m,
            sets: VertexSets::PerSimplex(sets.into_iter().map(Arc::new).collect()),
            u_lower,
            u_upper,
            bounds,
            plant,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self.sets, VertexSets::Uniform(_))
    }

    /// Vertex systems active on simplex `q`.
    pub fn vertices(&self, q: usize) -> &[VertexSystem] {
        match &self.sets {
            VertexSets::Uniform(v) => v,
            VertexSets::PerSimplex(v) => &v[q],
        }
    }

    pub fn u_lower(&self) -> &DVector<f64> {
        &self.u_lower
    }

    pub fn u_upper(&self) -> &DVector<f64> {
        &self.u_upper
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    /// Same model with the input box replaced.
    pub fn with_input_bounds(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != self.m || upper.len() != self.m {
            return Err(Error::Dimension("input bound length".into()));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
            return Err(Error::InvalidModel("input lower bound exceeds upper".into()));
        }
        self.u_lower = lower;
        self.u_upper = upper;
        Ok(self)
    }

    /// Check that the model fits a triangulation.
    pub fn check_triangulation(&self, tri: &Triangulation) -> Result<()> {
        if tri.dim() != self.n {
            return Err(Error::Dimension(format!(
                "model has n = {} but grid has dimension {}",
                self.n,
                tri.dim()
            )));
        }
        if let VertexSets::PerSimplex(v) = &self.sets {
            if v.len() != tri.num_simplices() {
                return Err(Error::Dimension(format!(
                    "model covers {} simplices, grid has {}",
                    v.len(),
                    tri.num_simplices()
                )));
            }
        }
        let scale = tri.box_diameter();
        for (a, (&(ml, mh), &(tl, th))) in self.bounds.iter().zip(tri.bounds()).enumerate() {
            if (ml - tl).abs() > 1e-9 * scale || (mh - th).abs() > 1e-9 * scale {
                return Err(Error::Dimension(format!(
                    "axis {a}: model box [{ml}, {mh}] differs from grid box [{tl}, {th}]"
                )));
            }
        }
        Ok(())
    }
}

fn check_vertices(vertices: &[VertexSystem]) -> Result<(usize, usize)> {
    let first = vertices
        .first()
        .ok_or_else(|| Error::InvalidModel("at least one vertex system is required".into()))?;
    let n = first.a.nrows();
    let m = first.b.ncols();
    if n == 0 || m == 0 {
        return Err(Error::InvalidModel("empty state or input dimension".into()));
    }
    for (k, v) in vertices.iter().enumerate() {
        if v.a.shape() != (n, n) || v.b.shape() != (n, m) {
            return Err(Error::Dimension(format!(
                "vertex {k}: A is {:?}, B is {:?}, expected ({n}, {n}) and ({n}, {m})",
                v.a.shape(),
                v.b.shape()
            )));
        }
    }
    Ok((n, m))
}

fn check_bounds(
    n: usize,
    m: usize,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    bounds: &[(f64, f64)],
) -> Result<()> {
    if lo.len() != m || hi.len() != m {
        return Err(Error::Dimension(format!("input bounds must have length {m}")));
    }
    if lo.iter().zip(hi.iter()).any(|(&l, &h)| !(l < 0.0 && 0.0 < h)) {
        return Err(Error::InvalidModel("input box must contain 0 in its interior".into()));
    }
    if bounds.len() != n {
        return Err(Error::Dimension(format!("state box must have {n} axes")));
    }
    if bounds.iter().any(|&(l, h)| !(l < 0.0 && 0.0 < h)) {
        return Err(Error::InvalidModel("state box must contain 0 in its interior".into()));
    }
    Ok(())
}

/// Ā = [[A + B K, B k], [0, 0]] for K̄ = [K k].
pub fn closed_loop_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, kbar: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n || kbar.shape() != (m, n + 1) {
        return Err(Error::Dimension(format!(
            "closed loop: A {:?}, B {:?}, K̄ {:?}",
            a.shape(),
            b.shape(),
            kbar.shape()
        )));
    }
    let mut out = DMatrix::zeros(n + 1, n + 1);
    let bk = b * kbar;
    out.view_mut((0, 0), (n, n + 1)).copy_from(&bk);
    let mut top = out.view_mut((0, 0), (n, n));
    top += a;
    Ok(out)
}

pub struct DoubleTankParams {
    pub c1: f64,
    pub c2: f64,
    pub q_in: f64,
    pub r12: f64,
    pub ro: f64,
}

impl Default for DoubleTankParams {
    fn default() -> Self {
        DoubleTankParams {
            c1: 2.0,
            c2: 4.0,
            q_in: 0.4,
            r12: 1.0,
            ro: 10.0,
        }
    }
}

pub fn double_tank() -> PolytopicModel {
    let p = DoubleTankParams::default();
    let a = DMatrix::from_row_slice(
        2,
        2,
        &[
            -1.0 / (p.r12 * p.c1),
            1.0 / (p.r12 * p.c1),
            1.0 / (p.r12 * p.c2),
            -(p.r12 + p.ro) / (p.r12 * p.ro * p.c2),
        ],
    );
    let b = DMatrix::from_column_slice(2, 1, &[p.q_in / p.c1, 0.0]);
    PolytopicModel::uniform(
        "double_tank",
        vec![VertexSystem { a, b }],
        DVector::from_element(1, -0.5),
        DVector::from_element(1, 0.5),
        vec![(-2.2, 2.2), (-2.0, 2.0)],
    )
    .expect("builtin model is valid")
}

pub fn unstable_polytopic() -> PolytopicModel {
    let a1 = DMatrix::from_row_slice(2, 2, &[-0.2868, -3.5353, -3.5353, -8.7132]);
    let a2 = DMatrix::from_row_slice(2, 2, &[-0.2868, 3.5353, 3.5353, -8.7132]);
    let b = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
    PolytopicModel::uniform(
        "unstable_polytopic",
        vec![VertexSystem { a: a1, b: b.clone() }, VertexSystem { a: a2, b }],
        DVector::from_element(1, -10.0),
        DVector::from_element(1, 10.0),
        vec![(-5.0, 5.0), (-5.0, 5.0)],
    )
    .expect("builtin model is valid")
}

pub const CHUA_BOX: [(f64, f64); 3] = [(-6.0, 6.0), (-3.0, 3.0), (-3.0, 3.0)];

/// Local sector envelope of the Chua circuit over every simplex of `tri`.
pub fn chua_piecewise(tri: &Triangulation) -> Result<PolytopicModel> {
    chua_piecewise_with(tri, ChuaParams::default())
}

pub fn chua_piecewise_with(tri: &Triangulation, params: ChuaParams) -> Result<PolytopicModel> {
    if tri.dim() != 3 {
        return Err(Error::Dimension("the Chua model needs a 3-dimensional grid".into()));
    }
    let tol = 1e-9 * tri.box_diameter();
    for (axis, (&(lo, hi), &(bl, bh))) in tri.bounds().iter().zip(&CHUA_BOX).enumerate() {
        if lo < bl - tol || hi > bh + tol {
            return Err(Error::InvalidModel(format!(
                "grid axis {axis} spans [{lo}, {hi}], outside [{bl}, {bh}]"
            )));
        }
    }
    let b = params.b_matrix();
    let sets = (0..tri.num_simplices())
        .map(|q| {
            let vs = tri.simplices()[q].iter().map(|&v| tri.points()[v][0]);
            let (lo, hi) = vs.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
            let (gmin, gmax) = params.sector_bounds(lo, hi);
            let mut set = vec![VertexSystem {
                a: params.a_matrix(gmin),
                b: b.clone(),
            }];
            if gmax != gmin {
                set.push(VertexSystem {
                    a: params.a_matrix(gmax),
                    b: b.clone(),
                });
            }
            set
        })
        .collect();
    PolytopicModel::per_simplex(
        "chua",
        sets,
        DVector::from_element(1, -200.0),
        DVector::from_element(1, 200.0),
        tri.bounds().to_vec(),
        Plant::Chua(params),
    )
}

/// Builtin model by name; the Chua model needs the triangulation.
pub fn builtin(name: &str, tri: &Triangulation) -> Result<PolytopicModel> {
    match name {
        "double_tank" => Ok(double_tank()),
        "unstable_polytopic" => Ok(unstable_polytopic()),
        "chua" => chua_piecewise(tri),
        other => Err(Error::Config(format!("unknown builtin model '{other}'"))),
    }
}

/// Piecewise-affine state feedback u = K̄_q x̄ on simplex q.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    gains: Vec<DMatrix<f64>>,
}

impl Policy {
    pub fn new(tri: &Triangulation, gains: Vec<DMatrix<f64>>) -> Result<Self> {
        let n = tri.dim();
        if gains.len() != tri.num_simplices() {
            return Err(Error::InvalidPolicy(format!(
                "{} gains for {} simplices",
                gains.len(),
                tri.num_simplices()
            )));
        }
        let m = gains[0].nrows();
        for (q, g) in gains.iter().enumerate() {
            if g.shape() != (m, n + 1) {
                return Err(Error::InvalidPolicy(format!(
                    "gain {q} has shape {:?}, expected ({m}, {})",
                    g.shape(),
                    n + 1
                )));
            }
            if tri.is_goal(q) && g.column(n).iter().any(|&v| v != 0.0) {
                return Err(Error::InvalidPolicy(format!(
                    "goal simplex {q} has a nonzero affine term"
                )));
            }
        }
        Ok(Policy { gains })
    }

    pub fn zero(tri: &Triangulation, m: usize) -> Self {
        Policy {
            gains: vec![DMatrix::zeros(m, tri.dim() + 1); tri.num_simplices()],
        }
    }

    /// The same linear gain K on every simplex.
    pub fn linear(tri: &Triangulation, k: &DMatrix<f64>) -> Result<Self> {
        let n = tri.dim();
        if k.ncols() != n {
            return Err(Error::Dimension(format!("gain must have {n} columns")));
        }
        let mut kbar = DMatrix::zeros(k.nrows(), n + 1);
        kbar.view_mut((0, 0), (k.nrows(), n)).copy_from(k);
        Ok(Policy {
            gains: vec![kbar; tri.num_simplices()],
        })
    }

    pub fn m(&self) -> usize {
        self.gains[0].nrows()
    }

    pub fn gains(&self) -> &[DMatrix<f64>] {
        &self.gains
    }

    pub fn gain(&self, q: usize) -> &DMatrix<f64> {
        &self.gains[q]
    }

    pub fn control_in(&self, q: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.gains[q] * augment(x)
    }

    pub fn control(&self, tri: &Triangulation, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.control_in(tri.locate(x)?, x))
    }

    /// Largest violation of the input box over all simplex vertices (0 when admissible).
    pub fn vertex_bound_violation(&self, tri: &Triangulation, lo: &DVector<f64>, hi: &DVector<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        for q in 0..tri.num_simplices() {
            let u = &self.gains[q] * tri.vertex_matrix(q);
            for v in u.column_iter() {
                for j in 0..v.len() {
                    worst = worst.max(lo[j] - v[j]).max(v[j] - hi[j]);
                }
            }
        }
        worst
    }

    /// Clamp the vertex inputs of every simplex into [lo, hi] and re-interpolate.
    /// Goal simplices must already be admissible.
    pub fn saturated(&self, tri: &Triangulation, lo: &DVector<f64>, hi: &DVector<f64>) -> Result<Policy> {
        let mut gains = Vec::with_capacity(self.gains.len());
        for (q, g) in self.gains.iter().enumerate() {
            let mut u = g * tri.vertex_matrix(q);
            let mut clipped = false;
            for mut col in u.column_iter_mut() {
                for j in 0..col.len() {
                    let v = col[j].clamp(lo[j], hi[j]);
                    clipped |= v != col[j];
                    col[j] = v;
                }
            }
            if !clipped {
                gains.push(g.clone());
            } else if tri.is_goal(q) {
                return Err(Error::InvalidPolicy(format!(
                    "policy saturates on goal simplex {q}"
                )));
            } else {
                gains.push(u * tri.vertex_inverse(q));
            }
        }
        Policy::new(tri, gains)
    }

    pub fn to_file(&self, tri: &Triangulation) -> PolicyFile {
        PolicyFile {
            grid_hash: tri.grid_hash(),
            gains: self
                .gains
                .iter()
                .map(|g| g.row_iter().map(|r| r.iter().copied().collect()).collect())
                .collect(),
        }
    }

    pub fn from_file(tri: &Triangulation, file: &PolicyFile) -> Result<Self> {
        let expected = tri.grid_hash();
        if file.grid_hash != expected {
            return Err(Error::GridMismatch {
                expected,
                found: file.grid_hash.clone(),
            });
        }
        let gains = file
            .gains
            .iter()
            .map(|rows| {
                let m = rows.len();
                let c = rows.first().map_or(0, Vec::len);
                if m == 0 || rows.iter().any(|r| r.len() != c) {
                    return Err(Error::InvalidPolicy("ragged gain matrix".into()));
                }
                Ok(DMatrix::from_fn(m, c, |i, j| rows[i][j]))
            })
            .collect::<Result<Vec<_>>>()?;
        Policy::new(tri, gains)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub grid_hash: String,
    /// One m×(n+1) matrix per simplex, row-major.
    pub gains: Vec<Vec<Vec<f64>>>,
}
