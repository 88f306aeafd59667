//! Simplicial partition of the analysis box.
//!
//! A [`Triangulation`] owns the grid points, the simplices (vertex index
//! tuples), the facets shared between simplices and the augmented vertex
//! matrices `[x_1 .. x_{n+1}; 1 .. 1]` used everywhere downstream.

mod delaunay;
mod grid;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use delaunay::delaunay;
pub use grid::{build_grid, GridSpec};

/// Default barycentric membership tolerance.
pub const TOL_MEMBERSHIP: f64 = 1e-9;

/// Classification of a facet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaceKind {
    /// Lies on the boundary of the box; owned by a single simplex.
    Boundary,
    /// Shared by two goal simplices.
    Goal,
    /// Shared by two simplices, at least one outside the goal set.
    Interior,
}

#[derive(Debug, Clone)]
struct LocateIndex {
    buckets_per_axis: usize,
    buckets: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct Triangulation {
    dim: usize,
    points: Vec<DVector<f64>>,
    simplices: Vec<Vec<usize>>,
    faces: Vec<Vec<usize>>,
    neighbors: Vec<(usize, usize)>,
    vertex_matrices: Vec<DMatrix<f64>>,
    vertex_inverses: Vec<DMatrix<f64>>,
    dets: Vec<f64>,
    face_matrices: Vec<DMatrix<f64>>,
    goal: Vec<bool>,
    face_kinds: Vec<FaceKind>,
    origin: usize,
    bounds: Vec<(f64, f64)>,
    tensor_axes: Option<Vec<Vec<f64>>>,
    index: LocateIndex,
    tol_membership: f64,
}

/// Augmented column `[x; 1]`.
pub fn augment(x: &DVector<f64>) -> DVector<f64> {
    let n = x.len();
    DVector::from_fn(n + 1, |i, _| if i < n { x[i] } else { 1.0 })
}

fn augmented_columns(points: &[DVector<f64>], verts: &[usize]) -> DMatrix<f64> {
    let n = points[0].len();
    DMatrix::from_fn(n + 1, verts.len(), |r, c| {
        if r < n {
            points[verts[c]][r]
        } else {
            1.0
        }
    })
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Detect whether `points` (sorted lexicographically) form a full tensor grid.
fn detect_tensor(points: &[DVector<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = points[0].len();
    let mut axes = Vec::with_capacity(n);
    for a in 0..n {
        let mut coords: Vec<f64> = points.iter().map(|p| p[a]).collect();
        coords.sort_by(f64::total_cmp);
        coords.dedup();
        axes.push(coords);
    }
    let total: usize = axes.iter().map(Vec::len).product();
    if total != points.len() || axes.iter().any(|ax| ax.len() < 2) {
        return None;
    }
    let expected = grid::tensor_product(&axes);
    (expected == points).then_some(axes)
}

/// Permutations of `0..n` in lexicographic order.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for first in 0..n {
        for rest in permutations(n - 1) {
            let mut p = vec![first];
            p.extend(rest.into_iter().map(|r| if r >= first { r + 1 } else { r }));
            out.push(p);
        }
    }
    out
}

/// Box-wise Kuhn triangulation of a tensor grid. Axis 0 is walked downwards
/// so that in 2D each cell is cut along its anti-diagonal.
fn kuhn(axes: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let n = axes.len();
    let counts: Vec<usize> = axes.iter().map(Vec::len).collect();
    let mut strides = vec![1usize; n];
    for a in (0..n.saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * counts[a + 1];
    }
    let perms = permutations(n);
    let cells: usize = counts.iter().map(|c| c - 1).product();
    let mut out = Vec::with_capacity(cells * perms.len());
    let mut cell = vec![0usize; n];
    for _ in 0..cells {
        for perm in &perms {
            let mut idx = cell.clone();
            idx[0] += 1;
            let flat = |idx: &[usize]| idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
            let mut simplex = vec![flat(&idx)];
            for &axis in perm {
                if axis == 0 {
                    idx[0] -= 1;
                } else {
                    idx[axis] += 1;
                }
                simplex.push(flat(&idx));
            }
            out.push(simplex);
        }
        for a in (0..n).rev() {
            cell[a] += 1;
            if cell[a] < counts[a] - 1 {
                break;
            }
            cell[a] = 0;
        }
    }
    out
}

impl Triangulation {
    /// Build the grid described by `spec` and triangulate it.
    pub fn from_spec(spec: &GridSpec) -> Result<Self> {
        triangulate(build_grid(spec)?)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    pub fn simplices(&self) -> &[Vec<usize>] {
        &self.simplices
    }

    pub fn num_simplices(&self) -> usize {
        self.simplices.len()
    }

    pub fn faces(&self) -> &[Vec<usize>] {
        &self.faces
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    /// The two simplices sharing face `f` (smaller index first). Boundary
    /// faces return the same simplex twice.
    pub fn neighbors(&self, f: usize) -> (usize, usize) {
        self.neighbors[f]
    }

    pub fn face_kind(&self, f: usize) -> FaceKind {
        self.face_kinds[f]
    }

    /// Augmented vertex matrix X̄_q, one column per vertex.
    pub fn vertex_matrix(&self, q: usize) -> &DMatrix<f64> {
        &self.vertex_matrices[q]
    }

    pub fn vertex_inverse(&self, q: usize) -> &DMatrix<f64> {
        &self.vertex_inverses[q]
    }

    pub fn det(&self, q: usize) -> f64 {
        self.dets[q]
    }

    /// Augmented face matrix Z̄_f, `(n+1) × n`.
    pub fn face_matrix(&self, f: usize) -> &DMatrix<f64> {
        &self.face_matrices[f]
    }

    pub fn is_goal(&self, q: usize) -> bool {
        self.goal[q]
    }

    pub fn goal_simplices(&self) -> Vec<usize> {
        (0..self.simplices.len()).filter(|&q| self.goal[q]).collect()
    }

    pub fn faces_of_kind(&self, kind: FaceKind) -> Vec<usize> {
        (0..self.faces.len())
            .filter(|&f| self.face_kinds[f] == kind)
            .collect()
    }

    pub fn origin_index(&self) -> usize {
        self.origin
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn tensor_axes(&self) -> Option<&[Vec<f64>]> {
        self.tensor_axes.as_deref()
    }

    pub fn tol_membership(&self) -> f64 {
        self.tol_membership
    }

    pub fn box_volume(&self) -> f64 {
        self.bounds.iter().map(|(lo, hi)| hi - lo).product()
    }

    pub fn box_diameter(&self) -> f64 {
        self.bounds
            .iter()
            .map(|(lo, hi)| (hi - lo).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Σ_q |det X̄_q| / n!
    pub fn total_volume(&self) -> f64 {
        self.dets.iter().map(|d| d.abs()).sum::<f64>() / factorial(self.dim)
    }

    /// Simplices that own at least one boundary face.
    pub fn touches_boundary(&self, q: usize) -> bool {
        let n = self.dim;
        self.simplices[q].iter().any(|&v| {
            (0..n).any(|a| {
                let (lo, hi) = self.bounds[a];
                self.points[v][a] == lo || self.points[v][a] == hi
            })
        })
    }

    pub fn contains_box(&self, x: &DVector<f64>) -> bool {
        let tol = self.tol_membership * self.box_diameter().max(1.0);
        x.len() == self.dim
            && x
                .iter()
                .zip(&self.bounds)
                .all(|(v, (lo, hi))| *v >= lo - tol && *v <= hi + tol)
    }

    /// Barycentric weights of `x` in simplex `q` without a membership check.
    pub fn barycentric_unchecked(&self, q: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.vertex_inverses[q] * augment(x)
    }

    /// Barycentric weights β = X̄_q⁻¹ x̄, rejecting points outside Δ_q.
    pub fn barycentric(&self, q: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        let beta = self.barycentric_unchecked(q, x);
        let min = beta.min();
        if min < -self.tol_membership {
            return Err(Error::OutsideSimplex {
                simplex: q,
                min_weight: min,
            });
        }
        Ok(beta)
    }

    pub fn contains(&self, q: usize, x: &DVector<f64>) -> bool {
        self.barycentric_unchecked(q, x).min() >= -self.tol_membership
    }

    fn bucket_of(&self, x: &DVector<f64>) -> usize {
        let b = self.index.buckets_per_axis;
        let mut flat = 0;
        for a in 0..self.dim {
            let (lo, hi) = self.bounds[a];
            let t = ((x[a] - lo) / (hi - lo) * b as f64).floor();
            let i = (t.max(0.0) as usize).min(b - 1);
            flat = flat * b + i;
        }
        flat
    }

    /// Candidate simplices (ascending) that may contain `x`.
    pub fn candidates(&self, x: &DVector<f64>) -> &[usize] {
        &self.index.buckets[self.bucket_of(x)]
    }

    /// Lowest-index simplex containing `x`.
    pub fn locate(&self, x: &DVector<f64>) -> Result<usize> {
        if !self.contains_box(x) {
            return Err(Error::OutsideDomain {
                point: x.iter().copied().collect(),
            });
        }
        let cands = self.candidates(x);
        if let Some(&q) = cands.iter().find(|&&q| self.contains(q, x)) {
            return Ok(q);
        }
        // Numerical slack beyond tol_membership: fall back to the best fit.
        let (q, w) = cands
            .iter()
            .map(|&q| (q, self.barycentric_unchecked(q, x).min()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or_else(|| Error::OutsideDomain {
                point: x.iter().copied().collect(),
            })?;
        if w >= -1e-6 {
            Ok(q)
        } else {
            Err(Error::OutsideDomain {
                point: x.iter().copied().collect(),
            })
        }
    }

    /// Whether `x` lies in the union of goal simplices.
    pub fn in_goal(&self, x: &DVector<f64>) -> bool {
        self.contains_box(x)
            && self
                .candidates(x)
                .iter()
                .any(|&q| self.goal[q] && self.contains(q, x))
    }

    /// SHA-256 over the point coordinates and simplex tuples.
    pub fn grid_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        for p in &self.points {
            for c in p.iter() {
                h.update(c.to_bits().to_le_bytes());
            }
        }
        for s in &self.simplices {
            for v in s {
                h.update((*v as u64).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn export(&self) -> TriangulationExport {
        TriangulationExport {
            dim: self.dim,
            points: self.points.iter().map(|p| p.iter().copied().collect()).collect(),
            simplices: self.simplices.clone(),
            faces: self.faces.clone(),
            neighbors: self.neighbors.clone(),
            goal_simplices: self.goal_simplices(),
            face_kinds: self.face_kinds.clone(),
            boundary_faces: self.faces_of_kind(FaceKind::Boundary),
        }
    }
}

/// JSON form of a triangulation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TriangulationExport {
    pub dim: usize,
    pub points: Vec<Vec<f64>>,
    pub simplices: Vec<Vec<usize>>,
    pub faces: Vec<Vec<usize>>,
    pub neighbors: Vec<(usize, usize)>,
    pub goal_simplices: Vec<usize>,
    pub face_kinds: Vec<FaceKind>,
    pub boundary_faces: Vec<usize>,
}

/// Triangulate a point set. Tensor grids get the box-wise Kuhn split, other
/// clouds go through Delaunay.
pub fn triangulate(mut points: Vec<DVector<f64>>) -> Result<Triangulation> {
    if points.is_empty() {
        return Err(Error::InvalidGrid("empty point set".into()));
    }
    let n = points[0].len();
    if n == 0 || points.iter().any(|p| p.len() != n) {
        return Err(Error::InvalidGrid("inconsistent point dimensions".into()));
    }
    points.sort_by(grid::lex_cmp);
    for (i, w) in points.windows(2).enumerate() {
        if w[0] == w[1] {
            return Err(Error::DuplicatePoint(i + 1));
        }
    }
    let origin = points
        .iter()
        .position(|p| p.iter().all(|c| *c == 0.0))
        .ok_or_else(|| Error::InvalidGrid("origin is not a grid point".into()))?;

    let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); n];
    for p in &points {
        for a in 0..n {
            bounds[a].0 = bounds[a].0.min(p[a]);
            bounds[a].1 = bounds[a].1.max(p[a]);
        }
    }
    for (a, (lo, hi)) in bounds.iter().enumerate() {
        if !(*lo < 0.0 && 0.0 < *hi) {
            return Err(Error::InvalidGrid(format!(
                "origin is not interior on axis {a}"
            )));
        }
    }

    let tensor_axes = detect_tensor(&points);
    let simplices = match (&tensor_axes, n) {
        (Some(axes), _) => kuhn(axes),
        (None, 1) => (0..points.len() - 1).map(|i| vec![i, i + 1]).collect(),
        (None, _) => delaunay(&points)?,
    };
    assemble(points, simplices, origin, bounds, tensor_axes)
}

fn assemble(
    points: Vec<DVector<f64>>,
    simplices: Vec<Vec<usize>>,
    origin: usize,
    bounds: Vec<(f64, f64)>,
    tensor_axes: Option<Vec<Vec<f64>>>,
) -> Result<Triangulation> {
    let n = points[0].len();
    let diam = bounds
        .iter()
        .map(|(lo, hi)| (hi - lo).powi(2))
        .sum::<f64>()
        .sqrt();
    let tol_degenerate = 1e-12 * diam.powi(n as i32);

    let mut vertex_matrices = Vec::with_capacity(simplices.len());
    let mut vertex_inverses = Vec::with_capacity(simplices.len());
    let mut dets = Vec::with_capacity(simplices.len());
    for (q, s) in simplices.iter().enumerate() {
        let xm = augmented_columns(&points, s);
        let det = xm.determinant();
        if det.abs() <= tol_degenerate {
            return Err(Error::DegenerateSimplex {
                simplex: q,
                det,
                tol: tol_degenerate,
            });
        }
        let inv = xm
            .clone()
            .try_inverse()
            .ok_or(Error::Singular("vertex matrix"))?;
        vertex_matrices.push(xm);
        vertex_inverses.push(inv);
        dets.push(det);
    }

    let box_volume: f64 = bounds.iter().map(|(lo, hi)| hi - lo).product();
    let covered = dets.iter().map(|d| d.abs()).sum::<f64>() / factorial(n);
    if (covered - box_volume).abs() > 1e-9 * box_volume {
        return Err(Error::Triangulation(format!(
            "simplices cover volume {covered} but the box has volume {box_volume}"
        )));
    }

    let mut face_map: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for (q, s) in simplices.iter().enumerate() {
        for skip in 0..s.len() {
            let mut f: Vec<usize> = s
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != skip)
                .map(|(_, &v)| v)
                .collect();
            f.sort_unstable();
            face_map.entry(f).or_default().push(q);
        }
    }

    let goal: Vec<bool> = simplices.iter().map(|s| s.contains(&origin)).collect();
    let scale_tol = 1e-12 * diam.max(1.0);
    let on_box_facet = |verts: &[usize]| {
        (0..n).any(|a| {
            let (lo, hi) = bounds[a];
            verts.iter().all(|&v| (points[v][a] - lo).abs() <= scale_tol)
                || verts.iter().all(|&v| (points[v][a] - hi).abs() <= scale_tol)
        })
    };

    let mut faces = Vec::with_capacity(face_map.len());
    let mut neighbors = Vec::with_capacity(face_map.len());
    let mut face_kinds = Vec::with_capacity(face_map.len());
    let mut face_matrices = Vec::with_capacity(face_map.len());
    for (face, owners) in face_map {
        let kind = match owners.as_slice() {
            [q] => {
                if !on_box_facet(&face) {
                    return Err(Error::Triangulation(format!(
                        "face {face:?} has a single owner {q} but is not on the box boundary"
                    )));
                }
                neighbors.push((*q, *q));
                FaceKind::Boundary
            }
            [a, b] => {
                let (a, b) = (*a.min(b), *a.max(b));
                neighbors.push((a, b));
                if goal[a] && goal[b] {
                    FaceKind::Goal
                } else {
                    FaceKind::Interior
                }
            }
            _ => {
                return Err(Error::Triangulation(format!(
                    "face {face:?} shared by {} simplices",
                    owners.len()
                )))
            }
        };
        face_matrices.push(augmented_columns(&points, &face));
        face_kinds.push(kind);
        faces.push(face);
    }

    let buckets_per_axis = ((simplices.len() as f64).powf(1.0 / n as f64).ceil() as usize).max(1);
    let total_buckets = buckets_per_axis.pow(n as u32);
    let mut buckets = vec![Vec::new(); total_buckets];
    for (q, s) in simplices.iter().enumerate() {
        let mut ranges = Vec::with_capacity(n);
        for a in 0..n {
            let (lo, hi) = bounds[a];
            let mn = s.iter().map(|&v| points[v][a]).fold(f64::INFINITY, f64::min);
            let mx = s.iter().map(|&v| points[v][a]).fold(f64::NEG_INFINITY, f64::max);
            let pad = 1e-6 * (hi - lo);
            let to_bucket = |x: f64| {
                let t = ((x - lo) / (hi - lo) * buckets_per_axis as f64).floor();
                (t.max(0.0) as usize).min(buckets_per_axis - 1)
            };
            ranges.push((to_bucket(mn - pad), to_bucket(mx + pad)));
        }
        let mut idx: Vec<usize> = ranges.iter().map(|r| r.0).collect();
        'outer: loop {
            let flat = idx.iter().fold(0, |acc, &i| acc * buckets_per_axis + i);
            buckets[flat].push(q);
            for a in (0..n).rev() {
                idx[a] += 1;
                if idx[a] <= ranges[a].1 {
                    continue 'outer;
                }
                idx[a] = ranges[a].0;
            }
            break;
        }
    }

    Ok(Triangulation {
        dim: n,
        points,
        simplices,
        faces,
        neighbors,
        vertex_matrices,
        vertex_inverses,
        dets,
        face_matrices,
        goal,
        face_kinds,
        origin,
        bounds,
        tensor_axes,
        index: LocateIndex {
            buckets_per_axis,
            buckets,
        },
        tol_membership: TOL_MEMBERSHIP,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn unit3() -> Triangulation {
        Triangulation::from_spec(&GridSpec::regular(&[(-1.0, 1.0), (-1.0, 1.0)], &[3, 3])).unwrap()
    }

    #[test]
    fn three_by_three_counts() {
        let tri = unit3();
        assert_eq!(tri.num_simplices(), 8);
        // Brute force: a triangle is a goal simplex iff one of its vertices is (0,0).
        let goal_brute = tri
            .simplices()
            .iter()
            .filter(|s| s.iter().any(|&v| tri.points()[v].norm() == 0.0))
            .count();
        assert_eq!(tri.goal_simplices().len(), goal_brute);
        assert_eq!(goal_brute, 6);
    }

    #[test]
    fn three_by_three_boundary_facets() {
        let tri = unit3();
        // Brute force: edges whose two endpoints share a box side.
        let mut brute = 0;
        for s in tri.simplices() {
            for i in 0..3 {
                for j in (i + 1)..3 {
                    let (p, q) = (&tri.points()[s[i]], &tri.points()[s[j]]);
                    let on_side = (0..2).any(|a| p[a] == q[a] && p[a].abs() == 1.0);
                    if on_side {
                        brute += 1;
                    }
                }
            }
        }
        assert_eq!(brute, 8);
        assert_eq!(tri.faces_of_kind(FaceKind::Boundary).len(), brute);
    }

    #[test]
    fn full_scale_grid_counts() {
        let tank =
            Triangulation::from_spec(&GridSpec::regular(&[(-2.2, 2.2), (-2.0, 2.0)], &[15, 15]))
                .unwrap();
        assert_eq!((tank.num_points(), tank.num_simplices()), (225, 392));
        let chua = Triangulation::from_spec(&GridSpec::regular(
            &[(-6.0, 6.0), (-3.0, 3.0), (-3.0, 3.0)],
            &[11, 5, 5],
        ))
        .unwrap();
        assert_eq!((chua.num_points(), chua.num_simplices()), (275, 960));
    }

    #[test]
    fn faces_are_consistent() {
        for tri in [
            unit3(),
            Triangulation::from_spec(&GridSpec::regular(
                &[(-1.0, 1.0), (-2.0, 2.0), (-1.0, 1.0)],
                &[3, 5, 3],
            ))
            .unwrap(),
        ] {
            let n = tri.dim();
            for f in 0..tri.num_faces() {
                let face = &tri.faces()[f];
                assert_eq!(face.len(), n);
                assert!(face.windows(2).all(|w| w[0] < w[1]));
                let (a, b) = tri.neighbors(f);
                assert!(a <= b);
                for v in face {
                    assert!(tri.simplices()[a].contains(v));
                    assert!(tri.simplices()[b].contains(v));
                }
                match tri.face_kind(f) {
                    FaceKind::Boundary => assert_eq!(a, b),
                    FaceKind::Goal => assert!(a != b && tri.is_goal(a) && tri.is_goal(b)),
                    FaceKind::Interior => assert!(a != b && !(tri.is_goal(a) && tri.is_goal(b))),
                }
            }
            // Every facet of every simplex appears exactly once.
            let facets = tri.num_simplices() * (n + 1);
            let boundary = tri.faces_of_kind(FaceKind::Boundary).len();
            assert_eq!(facets, 2 * tri.num_faces() - boundary);
        }
    }

    #[test]
    fn volume_conservation() {
        for spec in [
            GridSpec::regular(&[(-2.2, 2.2), (-2.0, 2.0)], &[15, 15]),
            GridSpec::regular(&[(-6.0, 6.0), (-3.0, 3.0), (-3.0, 3.0)], &[11, 5, 5]),
            GridSpec::Tensor {
                axes: vec![vec![-1.0, -0.3, 0.0, 2.0], vec![-1.0, 0.0, 0.25, 1.0]],
            },
        ] {
            let tri = Triangulation::from_spec(&spec).unwrap();
            let rel = (tri.total_volume() - tri.box_volume()).abs() / tri.box_volume();
            assert!(rel <= 1e-12, "relative volume error {rel}");
        }
    }

    #[test]
    fn barycentric_vertex_and_centroid() {
        let tri = unit3();
        for q in 0..tri.num_simplices() {
            let s = &tri.simplices()[q];
            for (j, &v) in s.iter().enumerate() {
                let beta = tri.barycentric(q, &tri.points()[v]).unwrap();
                for (i, b) in beta.iter().enumerate() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((b - expect).abs() < 1e-14);
                }
            }
            let centroid = s.iter().map(|&v| tri.points()[v].clone()).sum::<DVector<f64>>() / 3.0;
            let beta = tri.barycentric(q, &centroid).unwrap();
            assert!(beta.iter().all(|b| (b - 1.0 / 3.0).abs() < 1e-14));
        }
    }

    #[test]
    fn barycentric_rejects_outside() {
        let tri = unit3();
        let far = DVector::from_vec(vec![0.9, 0.9]);
        let q = (0..tri.num_simplices()).find(|&q| !tri.contains(q, &far)).unwrap();
        assert!(matches!(tri.barycentric(q, &far), Err(Error::OutsideSimplex { .. })));
    }

    #[test]
    fn barycentric_residual_against_independent_solve() {
        let tri = Triangulation::from_spec(&GridSpec::regular(
            &[(-1.0, 1.0), (-2.0, 2.0), (-1.0, 1.0)],
            &[3, 5, 3],
        ))
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let q = rng.random_range(0..tri.num_simplices());
            let mut w: Vec<f64> = (0..4).map(|_| rng.random::<f64>() + 1e-3).collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= s);
            let x: DVector<f64> = tri.simplices()[q]
                .iter()
                .zip(&w)
                .map(|(&v, &b)| &tri.points()[v] * b)
                .sum();
            let beta = tri.barycentric(q, &x).unwrap();
            let xbar = augment(&x);
            let resid = (tri.vertex_matrix(q) * &beta - &xbar).amax();
            assert!(resid <= 1e-10);
            let lu = tri.vertex_matrix(q).clone().lu().solve(&xbar).unwrap();
            assert!((lu - beta).amax() <= 1e-10);
        }
    }

    #[test]
    fn locate_cases() {
        let tri = unit3();
        let q0 = tri.locate(&DVector::zeros(2)).unwrap();
        assert!(tri.is_goal(q0));
        let corner = DVector::from_vec(vec![1.0, 1.0]);
        let qc = tri.locate(&corner).unwrap();
        assert!(tri.touches_boundary(qc));
        assert!(tri.locate(&DVector::from_vec(vec![1.5, 0.0])).is_err());
        // Interior point of each simplex maps back to it.
        for q in 0..tri.num_simplices() {
            let c = tri.simplices()[q].iter().map(|&v| tri.points()[v].clone()).sum::<DVector<f64>>() / 3.0;
            assert_eq!(tri.locate(&c).unwrap(), q);
        }
    }

    #[test]
    fn locate_returns_lowest_index_on_shared_faces() {
        let tri = unit3();
        for f in tri.faces_of_kind(FaceKind::Interior) {
            let face = &tri.faces()[f];
            let mid = (&tri.points()[face[0]] + &tri.points()[face[1]]) * 0.5;
            let (a, _) = tri.neighbors(f);
            assert_eq!(tri.locate(&mid).unwrap(), a);
        }
    }

    #[test]
    fn partition_of_unity_random() {
        let tri =
            Triangulation::from_spec(&GridSpec::regular(&[(-2.2, 2.2), (-2.0, 2.0)], &[15, 15]))
                .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let x = DVector::from_vec(vec![rng.random_range(-2.2..2.2), rng.random_range(-2.0..2.0)]);
            let q = tri.locate(&x).unwrap();
            let beta = tri.barycentric(q, &x).unwrap();
            assert!((beta.sum() - 1.0).abs() <= 1e-10);
            assert!((tri.vertex_matrix(q) * &beta - augment(&x)).amax() <= 1e-10);
        }
    }

    #[test]
    fn goal_set_is_star_shaped() {
        let tri = Triangulation::from_spec(&GridSpec::regular(
            &[(-1.0, 1.0), (-2.0, 2.0), (-1.0, 1.0)],
            &[5, 5, 3],
        ))
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..300 {
            let x = DVector::from_fn(3, |a, _| {
                let (lo, hi) = tri.bounds()[a];
                rng.random_range(lo..hi)
            });
            if tri.in_goal(&x) {
                for t in [0.0, 0.25, 0.5, 0.9] {
                    assert!(tri.in_goal(&(&x * t)));
                }
            }
        }
    }

    #[test]
    fn irregular_cloud_uses_delaunay() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut pts = vec![vec![0.0, 0.0]];
        for c in [[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]] {
            pts.push(c.to_vec());
        }
        for _ in 0..30 {
            pts.push(vec![rng.random_range(-0.99..0.99), rng.random_range(-0.99..0.99)]);
        }
        let tri = Triangulation::from_spec(&GridSpec::Points { points: pts }).unwrap();
        assert!(tri.tensor_axes().is_none());
        assert!((tri.total_volume() - 4.0).abs() < 1e-10);
        assert!(!tri.goal_simplices().is_empty());
    }

    #[test]
    fn duplicate_points_rejected() {
        let pts = vec![
            DVector::from_vec(vec![0.0]),
            DVector::from_vec(vec![-1.0]),
            DVector::from_vec(vec![-1.0]),
            DVector::from_vec(vec![1.0]),
        ];
        assert!(matches!(triangulate(pts), Err(Error::DuplicatePoint(_))));
    }

    #[test]
    fn one_dimensional_grid() {
        let tri = Triangulation::from_spec(&GridSpec::regular(&[(-1.0, 1.0)], &[5])).unwrap();
        assert_eq!(tri.num_simplices(), 4);
        assert_eq!(tri.goal_simplices().len(), 2);
        assert_eq!(tri.faces_of_kind(FaceKind::Boundary).len(), 2);
        assert_eq!(tri.faces_of_kind(FaceKind::Goal).len(), 1);
    }
}
