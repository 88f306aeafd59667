//! Assembly of the policy evaluation and policy improvement programs.
//!
//! Both programs share the same block structure. In evaluation the p-vectors
//! are unknown and the closed loop is fixed; in improvement the certificate
//! is fixed and the f-vectors and gains are unknown.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::expr::{AffMat, LinExpr};
use super::problem::{BlockTag, Family, PsdConstraint, SdpProblem, SdpSolution};
use crate::error::{Error, Result};
use crate::geometry::{FaceKind, Triangulation};
use crate::pwq::{integral_factor, PwqFunction};
use crate::relaxation::{build_annihilator, AnnihilatorFamily};
use crate::systems::{closed_loop_matrix, Policy, PolytopicModel};

/// Parameters of the two programs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmiSettings {
    /// Lower bound V̄ ≥ γ|x|² on the goal set.
    pub gamma: f64,
    /// Margin for strict inequalities: M < 0 becomes M + ε X̄ᵀdiag(I, 0)X̄ ⪯ 0.
    pub eps_strict: f64,
    /// Optional box bound on the f-vectors in improvement.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_max: Option<f64>,
    /// Add the equality f_origin[n] = 0 to improvement; it is already implied
    /// by R ≥ 0 together with the goal decay blocks at the origin vertex.
    pub pin_origin_f: bool,
}

impl Default for LmiSettings {
    fn default() -> Self {
        LmiSettings {
            gamma: 1e-3,
            eps_strict: 1e-6,
            f_max: None,
            pin_origin_f: true,
        }
    }
}

const ZERO_DIAGONAL_TOL: f64 = 1e-12;

enum Mode<'a> {
    Evaluation { policy: &'a Policy },
    Improvement { pwq: &'a PwqFunction },
}

/// An assembled program plus the variable layout needed to read it back.
pub struct Assembled {
    pub problem: SdpProblem,
    tri: Arc<Triangulation>,
    point_offset: usize,
    gain_offsets: Vec<usize>,
    m: usize,
}

struct SimplexVars {
    m: usize,
    w1: usize,
    per_k: Vec<(usize, usize)>,
}

enum FaceVars {
    Boundary { g: usize, e1: usize },
    Sided(Vec<(usize, usize, usize, usize)>),
    Skip,
}

struct Ctx<'a> {
    tri: &'a Triangulation,
    mode: Mode<'a>,
    settings: LmiSettings,
    n: usize,
    simplex_fam: Arc<AnnihilatorFamily>,
    face_fam: Arc<AnnihilatorFamily>,
    s_form: Vec<AffMat>,
    r_form: Vec<Option<AffMat>>,
    abar: Vec<Vec<AffMat>>,
}

fn map_indexed<R: Send>(len: usize, f: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..len).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..len).map(f).collect()
    }
}

/// diag(I_n, 0)
fn state_projector(n: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(n + 1, n + 1);
    for i in 0..n {
        d[(i, i)] = 1.0;
    }
    d
}

/// M L + (M L)ᵀ
fn relax(m: &AffMat, l: &DMatrix<f64>) -> AffMat {
    let ml = AffMat::rmul(m, l);
    ml.add(&ml.transpose())
}

/// Cᵀ F C
fn congruence(c: &DMatrix<f64>, f: &AffMat) -> AffMat {
    AffMat::rmul(&AffMat::lmul(&c.transpose(), f), c)
}

/// Interleaved Schur form: block (i, j) is [[a_ij, 1 − v_ij], [1 − v_ij, −1]].
fn schur_form(a: &AffMat, v: &AffMat) -> AffMat {
    let d = a.nrows();
    let mut out = AffMat::zeros(2 * d, 2 * d);
    for i in 0..d {
        for j in 0..d {
            *out.get_mut(2 * i, 2 * j) = a.get(i, j).clone();
            let mut c = v.get(i, j).scaled(-1.0);
            c.constant += 1.0;
            *out.get_mut(2 * i + 1, 2 * j) = c.clone();
            *out.get_mut(2 * i, 2 * j + 1) = c;
            *out.get_mut(2 * i + 1, 2 * j + 1) = LinExpr::constant(-1.0);
        }
    }
    out.sym_part()
}

/// ½(Pᵀ X̄⁻¹ + X̄⁻ᵀ P) for a matrix of per-vertex unknown rows.
fn vertex_form(tri: &Triangulation, q: usize, offset: usize) -> AffMat {
    let n = tri.dim();
    let verts = &tri.simplices()[q];
    let p = AffMat::from_fn(n + 1, n + 1, |r, c| LinExpr::var(offset + verts[r] * (n + 1) + c));
    AffMat::rmul(&p.transpose(), tri.vertex_inverse(q)).sym_part()
}

impl Ctx<'_> {
    fn is_eval(&self) -> bool {
        matches!(self.mode, Mode::Evaluation { .. })
    }

    /// Ā_{k,dyn}ᵀ S_val + S_val Ā_{k,dyn} (+ R_val in improvement).
    fn decay(&self, dyn_q: usize, k: usize, val_q: usize) -> AffMat {
        let sa = AffMat::mul(&self.s_form[val_q], &self.abar[dyn_q][k]);
        let d = sa.add(&sa.transpose());
        match &self.r_form[val_q] {
            Some(r) => d.add(r),
            None => d,
        }
    }

    fn simplex_blocks(&self, q: usize, vars: &SimplexVars) -> Vec<PsdConstraint> {
        let n = self.n;
        let d = n + 1;
        let r1 = self.simplex_fam.rows();
        let xm = self.tri.vertex_matrix(q);
        let goal = self.tri.is_goal(q);
        let proj = state_projector(n);
        let margin = xm.transpose() * &proj * xm * self.settings.eps_strict;
        let value_gram = congruence(xm, &self.s_form[q]);
        let mut out = Vec::new();

        let base = match &self.r_form[q] {
            Some(r) => congruence(xm, r),
            None if goal => value_gram.add_constant(&(xm.transpose() * &proj * xm * -self.settings.gamma)),
            None => value_gram.clone(),
        };
        let mq = AffMat::vars(d, r1, vars.m);
        let w1 = AffMat::sym_vars(d, vars.w1);
        for i in 0..d {
            let blk = base.add(&relax(&mq, self.simplex_fam.vertex(i))).sub(&w1);
            out.push(PsdConstraint {
                tag: BlockTag::with(Family::Positivity, q, i, 0, 0),
                matrix: blk,
            });
        }

        for (k, &(nk, wk)) in vars.per_k.iter().enumerate() {
            let a = congruence(xm, &self.decay(q, k, q));
            if goal {
                let nm = AffMat::vars(d, r1, nk);
                let w2 = AffMat::sym_vars(d, wk);
                for i in 0..d {
                    let blk = a
                        .add(&relax(&nm, self.simplex_fam.vertex(i)))
                        .add(&w2)
                        .add_constant(&margin);
                    out.push(PsdConstraint {
                        tag: BlockTag::with(Family::GoalDecay, q, i, k, 0),
                        matrix: blk.scale(-1.0),
                    });
                }
            } else {
                let qbar = schur_form(&a, &value_gram);
                let nb = AffMat::vars(2 * d, 2 * r1, nk);
                let wb = AffMat::sym_vars(2 * d, wk);
                for i in 0..d {
                    let blk = qbar.add(&relax(&nb, self.simplex_fam.kron(i))).add(&wb);
                    out.push(PsdConstraint {
                        tag: BlockTag::with(Family::Decay, q, i, k, 0),
                        matrix: blk.scale(-1.0),
                    });
                }
            }
        }
        out
    }

    fn face_blocks(&self, f: usize, vars: &FaceVars) -> Vec<PsdConstraint> {
        let n = self.n;
        let r2 = self.face_fam.rows();
        let z = self.tri.face_matrix(f);
        let (a, b) = self.tri.neighbors(f);
        let mut out = Vec::new();
        match vars {
            FaceVars::Skip => {}
            FaceVars::Boundary { g, e1 } => {
                let v = congruence(z, &self.s_form[a]).add_constant(&(-DMatrix::from_element(n, n, 1.0)));
                let gm = AffMat::vars(n, r2, *g);
                let e = AffMat::sym_vars(n, *e1);
                for i in 0..n {
                    let blk = v.add(&relax(&gm, self.face_fam.vertex(i))).sub(&e);
                    out.push(PsdConstraint {
                        tag: BlockTag::with(Family::Boundary, f, i, 0, 0),
                        matrix: blk,
                    });
                }
            }
            FaceVars::Sided(list) => {
                let goal = self.tri.face_kind(f) == FaceKind::Goal;
                let proj = state_projector(n);
                let margin = z.transpose() * &proj * z * self.settings.eps_strict;
                for &(s, k, h, e) in list {
                    let (dyn_q, val_q) = if s == 0 { (a, b) } else { (b, a) };
                    let af = congruence(z, &self.decay(dyn_q, k, val_q));
                    if goal {
                        let hm = AffMat::vars(n, r2, h);
                        let em = AffMat::sym_vars(n, e);
                        for i in 0..n {
                            let blk = af
                                .add(&relax(&hm, self.face_fam.vertex(i)))
                                .add(&em)
                                .add_constant(&margin);
                            out.push(PsdConstraint {
                                tag: BlockTag::with(Family::GoalFace, f, i, k, s),
                                matrix: blk.scale(-1.0),
                            });
                        }
                    } else {
                        let vf = congruence(z, &self.s_form[val_q]);
                        let ybar = schur_form(&af, &vf);
                        let hb = AffMat::vars(2 * n, 2 * r2, h);
                        let eb = AffMat::sym_vars(2 * n, e);
                        for i in 0..n {
                            let blk = ybar.add(&relax(&hb, self.face_fam.kron(i))).add(&eb);
                            out.push(PsdConstraint {
                                tag: BlockTag::with(Family::Face, f, i, k, s),
                                matrix: blk.scale(-1.0),
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

fn nonneg_sym(p: &mut SdpProblem, name: String, d: usize, index: usize) -> usize {
    let len = d * (d + 1) / 2;
    let off = p.add_vars(name, len);
    for v in off..off + len {
        p.add_nonnegative(BlockTag::new(Family::Multiplier, index), LinExpr::var(v));
    }
    off
}

fn check_common(tri: &Triangulation, model: &PolytopicModel) -> Result<()> {
    model.check_triangulation(tri)?;
    if tri.goal_simplices().is_empty() {
        return Err(Error::EmptyGoalSet);
    }
    Ok(())
}

fn assemble(tri: &Arc<Triangulation>, model: &PolytopicModel, mode: Mode<'_>, settings: LmiSettings) -> Result<Assembled> {
    check_common(tri, model)?;
    let n = tri.dim();
    let m = model.m();
    let ns = tri.num_simplices();
    let eval = matches!(mode, Mode::Evaluation { .. });
    let mut p = SdpProblem::new();

    let point_offset = p.add_vars(if eval { "p" } else { "f" }, tri.num_points() * (n + 1));
    let mut gain_offsets = Vec::new();
    if !eval {
        for q in 0..ns {
            let cols = if tri.is_goal(q) { n } else { n + 1 };
            gain_offsets.push(p.add_vars(format!("K[{q}]"), m * cols));
        }
    }

    let r1 = n * (n + 1) / 2;
    let r2 = n * n.saturating_sub(1) / 2;
    let d = n + 1;
    let mut simplex_vars = Vec::with_capacity(ns);
    for q in 0..ns {
        let mv = p.add_vars(format!("M[{q}]"), d * r1);
        let w1 = nonneg_sym(&mut p, format!("W1[{q}]"), d, q);
        let per_k = (0..model.vertices(q).len())
            .map(|k| {
                if tri.is_goal(q) {
                    let nv = p.add_vars(format!("N[{q},{k}]"), d * r1);
                    (nv, nonneg_sym(&mut p, format!("W2[{q},{k}]"), d, q))
                } else {
                    let nv = p.add_vars(format!("Nbar[{q},{k}]"), 4 * d * r1);
                    (nv, nonneg_sym(&mut p, format!("Wbar[{q},{k}]"), 2 * d, q))
                }
            })
            .collect();
        simplex_vars.push(SimplexVars { m: mv, w1, per_k });
    }

    let mut face_vars = Vec::with_capacity(tri.num_faces());
    for f in 0..tri.num_faces() {
        let (a, b) = tri.neighbors(f);
        let fv = match tri.face_kind(f) {
            FaceKind::Boundary if eval => FaceVars::Boundary {
                g: p.add_vars(format!("G[{f}]"), n * r2),
                e1: nonneg_sym(&mut p, format!("E1[{f}]"), n, f),
            },
            FaceKind::Boundary => FaceVars::Skip,
            kind => {
                let goal = kind == FaceKind::Goal;
                let mut list = Vec::new();
                for (s, dyn_q) in [(0, a), (1, b)] {
                    for k in 0..model.vertices(dyn_q).len() {
                        let (h, e) = if goal {
                            let h = p.add_vars(format!("H[{f},{s},{k}]"), n * r2);
                            (h, nonneg_sym(&mut p, format!("E2[{f},{s},{k}]"), n, f))
                        } else {
                            let h = p.add_vars(format!("Hbar[{f},{s},{k}]"), 4 * n * r2);
                            (h, nonneg_sym(&mut p, format!("Ebar[{f},{s},{k}]"), 2 * n, f))
                        };
                        list.push((s, k, h, e));
                    }
                }
                FaceVars::Sided(list)
            }
        };
        face_vars.push(fv);
    }

    // Per-simplex forms.
    let s_form: Vec<AffMat> = match &mode {
        Mode::Evaluation { .. } => map_indexed(ns, |q| vertex_form(tri, q, point_offset)),
        Mode::Improvement { pwq } => (0..ns).map(|q| AffMat::constant(pwq.local(q))).collect(),
    };
    let r_form: Vec<Option<AffMat>> = match &mode {
        Mode::Evaluation { .. } => vec![None; ns],
        Mode::Improvement { .. } => map_indexed(ns, |q| Some(vertex_form(tri, q, point_offset))),
    };
    let abar: Vec<Vec<AffMat>> = match &mode {
        Mode::Evaluation { policy } => {
            if policy.m() != m {
                return Err(Error::Dimension(format!(
                    "policy has {} inputs, model has {m}",
                    policy.m()
                )));
            }
            let mut all = Vec::with_capacity(ns);
            for q in 0..ns {
                if tri.is_goal(q) && policy.gain(q).column(n).iter().any(|&v| v != 0.0) {
                    return Err(Error::InvalidPolicy(format!(
                        "goal simplex {q} has a nonzero affine term"
                    )));
                }
                let mut per = Vec::new();
                for v in model.vertices(q) {
                    per.push(AffMat::constant(&closed_loop_matrix(&v.a, &v.b, policy.gain(q))?));
                }
                all.push(per);
            }
            all
        }
        Mode::Improvement { .. } => (0..ns)
            .map(|q| {
                let kbar = gain_expr(tri, q, m, gain_offsets[q]);
                model
                    .vertices(q)
                    .iter()
                    .map(|v| {
                        let mut bpad = DMatrix::zeros(n + 1, m);
                        bpad.view_mut((0, 0), (n, m)).copy_from(&v.b);
                        let mut apad = DMatrix::zeros(n + 1, n + 1);
                        apad.view_mut((0, 0), (n, n)).copy_from(&v.a);
                        AffMat::lmul(&bpad, &kbar).add_constant(&apad)
                    })
                    .collect()
            })
            .collect(),
    };

    let ctx = Ctx {
        tri,
        mode,
        settings,
        n,
        simplex_fam: build_annihilator(n + 1),
        face_fam: build_annihilator(n),
        s_form,
        r_form,
        abar,
    };

    let simplex_blocks = map_indexed(ns, |q| ctx.simplex_blocks(q, &simplex_vars[q]));
    let face_blocks = map_indexed(tri.num_faces(), |f| ctx.face_blocks(f, &face_vars[f]));
    for blocks in simplex_blocks.into_iter().chain(face_blocks) {
        p.extend_psd(blocks);
    }

    // Objective: the closed-form integral of the unknown quadratic forms.
    let factor = integral_factor(n);
    let mut obj = LinExpr::default();
    for q in 0..ns {
        let verts = &tri.simplices()[q];
        let xm = tri.vertex_matrix(q);
        let w = factor * tri.det(q).abs();
        for i in 0..=n {
            for j in i..=n {
                // x̄_iᵀ S x̄_j = ½(p_iᵀ x̄_j + p_jᵀ x̄_i)
                for c in 0..=n {
                    obj.add_term(point_offset + verts[i] * (n + 1) + c, 0.5 * w * xm[(c, j)]);
                    obj.add_term(point_offset + verts[j] * (n + 1) + c, 0.5 * w * xm[(c, i)]);
                }
            }
        }
    }
    if !ctx.is_eval() {
        obj = obj.scaled(-1.0);
    }
    p.set_objective(obj);

    if eval {
        let o = tri.origin_index();
        p.add_equality(
            BlockTag::new(Family::Origin, o),
            LinExpr::var(point_offset + o * (n + 1) + n),
        );
    } else {
        if settings.pin_origin_f {
            let o = tri.origin_index();
            p.add_equality(
                BlockTag::new(Family::Origin, o),
                LinExpr::var(point_offset + o * (n + 1) + n),
            );
        }
        for q in 0..ns {
            let u = AffMat::rmul(&gain_expr(tri, q, m, gain_offsets[q]), tri.vertex_matrix(q));
            for i in 0..=n {
                for j in 0..m {
                    let e = u.get(j, i);
                    let mut lo = e.clone();
                    lo.constant -= model.u_lower()[j];
                    p.add_nonnegative(BlockTag::with(Family::InputLower, q, i, j, 0), lo);
                    let mut hi = e.scaled(-1.0);
                    hi.constant += model.u_upper()[j];
                    p.add_nonnegative(BlockTag::with(Family::InputUpper, q, i, j, 0), hi);
                }
            }
        }
        if let Some(f_max) = settings.f_max.filter(|v| v.is_finite()) {
            for v in point_offset..point_offset + tri.num_points() * (n + 1) {
                let mut lo = LinExpr::var(v);
                lo.constant = f_max;
                p.add_nonnegative(BlockTag::new(Family::Guard, v - point_offset), lo);
                let mut hi = LinExpr::term(v, -1.0);
                hi.constant = f_max;
                p.add_nonnegative(BlockTag::new(Family::Guard, v - point_offset), hi);
            }
        }
    }

    p.reduce_zero_diagonals(ZERO_DIAGONAL_TOL);

    Ok(Assembled {
        problem: p,
        tri: tri.clone(),
        point_offset,
        gain_offsets,
        m,
    })
}

/// K̄_q with the affine column fixed to zero on goal simplices.
fn gain_expr(tri: &Triangulation, q: usize, m: usize, offset: usize) -> AffMat {
    let n = tri.dim();
    let goal = tri.is_goal(q);
    AffMat::from_fn(m, n + 1, |r, c| {
        if goal && c == n {
            LinExpr::default()
        } else {
            LinExpr::var(offset + c * m + r)
        }
    })
}

/// Policy evaluation program for a fixed policy.
pub fn assemble_evaluation(
    tri: &Arc<Triangulation>,
    model: &PolytopicModel,
    policy: &Policy,
    settings: LmiSettings,
) -> Result<Assembled> {
    if settings.gamma <= 0.0 {
        return Err(Error::Config("gamma must be positive".into()));
    }
    assemble(tri, model, Mode::Evaluation { policy }, settings)
}

/// Policy improvement program for a fixed certificate.
pub fn assemble_improvement(
    tri: &Arc<Triangulation>,
    model: &PolytopicModel,
    pwq: &PwqFunction,
    settings: LmiSettings,
) -> Result<Assembled> {
    if !Arc::ptr_eq(pwq.triangulation(), tri) && pwq.triangulation().grid_hash() != tri.grid_hash() {
        return Err(Error::GridMismatch {
            expected: tri.grid_hash(),
            found: pwq.triangulation().grid_hash(),
        });
    }
    assemble(tri, model, Mode::Improvement { pwq }, settings)
}

impl Assembled {
    /// Per-point vectors (p in evaluation, f in improvement).
    pub fn point_vectors(&self, sol: &SdpSolution) -> Vec<DVector<f64>> {
        let n = self.tri.dim();
        (0..self.tri.num_points())
            .map(|l| {
                let o = self.point_offset + l * (n + 1);
                DVector::from_column_slice(&sol.x[o..o + n + 1])
            })
            .collect()
    }

    /// Certificate from an evaluation solution.
    pub fn certificate(&self, sol: &SdpSolution) -> Result<PwqFunction> {
        let mut p = self.point_vectors(sol);
        let n = self.tri.dim();
        p[self.tri.origin_index()][n] = 0.0;
        PwqFunction::new(self.tri.clone(), p)
    }

    /// Gains from an improvement solution, projected so that every vertex
    /// control value lies inside [lower, upper].
    pub fn policy(&self, sol: &SdpSolution, lower: &DVector<f64>, upper: &DVector<f64>) -> Result<Policy> {
        if self.gain_offsets.is_empty() {
            return Err(Error::InvalidPolicy("program has no gain variables".into()));
        }
        let n = self.tri.dim();
        let mut gains = Vec::with_capacity(self.gain_offsets.len());
        for (q, &off) in self.gain_offsets.iter().enumerate() {
            let expr = gain_expr(&self.tri, q, self.m, off);
            let kbar = expr.eval(&sol.x);
            let xm = self.tri.vertex_matrix(q);
            let mut u = &kbar * xm;
            let mut clipped = false;
            for i in 0..=n {
                for j in 0..self.m {
                    let v = u[(j, i)].clamp(lower[j], upper[j]);
                    clipped |= v != u[(j, i)];
                    u[(j, i)] = v;
                }
            }
            let mut k = if clipped { u * self.tri.vertex_inverse(q) } else { kbar };
            if self.tri.is_goal(q) {
                k.column_mut(n).fill(0.0);
            }
            gains.push(k);
        }
        Policy::new(&self.tri, gains)
    }
}

/// ∫ of the quadratic forms R_q built from per-point vectors.
pub fn integral_of_vectors(tri: &Triangulation, vecs: &[DVector<f64>]) -> f64 {
    let n = tri.dim();
    let factor = integral_factor(n);
    (0..tri.num_simplices())
        .map(|q| {
            let verts = &tri.simplices()[q];
            let xm = tri.vertex_matrix(q);
            let mut acc = 0.0;
            for i in 0..=n {
                for j in i..=n {
                    acc += 0.5 * (vecs[verts[i]].dot(&xm.column(j)) + vecs[verts[j]].dot(&xm.column(i)));
                }
            }
            factor * tri.det(q).abs() * acc
        })
        .sum()
}
