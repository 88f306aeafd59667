//! Bowyer-Watson Delaunay triangulation for irregular point clouds.
//!
//! Points are inserted in index order and the in-sphere test is strict, so
//! cospherical configurations keep the earlier simplices; that makes the
//! output deterministic for a fixed input order.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

struct Cell {
    vertices: Vec<usize>,
    center: DVector<f64>,
    radius_sq: f64,
}

fn circumsphere(verts: &[usize], pts: &[DVector<f64>]) -> Option<(DVector<f64>, f64)> {
    let n = pts[0].len();
    let v0 = &pts[verts[0]];
    let mut a = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    for (row, &vi) in verts[1..].iter().enumerate() {
        let d = &pts[vi] - v0;
        for c in 0..n {
            a[(row, c)] = 2.0 * d[c];
        }
        rhs[row] = pts[vi].norm_squared() - v0.norm_squared();
    }
    let center = a.lu().solve(&rhs)?;
    let r2 = (&center - v0).norm_squared();
    Some((center, r2))
}

/// Triangulate `points` (dimension ≥ 2). Returns simplices as vertex index lists.
pub fn delaunay(points: &[DVector<f64>]) -> Result<Vec<Vec<usize>>> {
    let n = points[0].len();
    if points.len() < n + 1 {
        return Err(Error::Triangulation(format!(
            "{} points cannot span dimension {n}",
            points.len()
        )));
    }
    let mut lo = points[0].clone();
    let mut hi = points[0].clone();
    for p in points {
        for a in 0..n {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let center = (&lo + &hi) * 0.5;
    let half = ((&hi - &lo) * 0.5).amax().max(1e-12);

    // Super simplex: corner `base` with legs of length `leg` along each axis
    // contains the cube [base, base + leg/n]^n.
    let margin = 1e3 * half;
    let base = center.map(|c| c - margin);
    let leg = n as f64 * (2.0 * margin + half);
    let mut pts: Vec<DVector<f64>> = points.to_vec();
    let first_super = pts.len();
    pts.push(base.clone());
    for a in 0..n {
        let mut v = base.clone();
        v[a] += leg;
        pts.push(v);
    }
    let super_verts: Vec<usize> = (first_super..first_super + n + 1).collect();
    let (c0, r0) = circumsphere(&super_verts, &pts)
        .ok_or_else(|| Error::Triangulation("degenerate super simplex".into()))?;
    let mut cells = vec![Cell {
        vertices: super_verts,
        center: c0,
        radius_sq: r0,
    }];

    for (pi, p) in points.iter().enumerate() {
        let (bad, good): (Vec<Cell>, Vec<Cell>) = cells
            .into_iter()
            .partition(|c| (p - &c.center).norm_squared() < c.radius_sq * (1.0 - 1e-12));
        cells = good;
        if bad.is_empty() {
            return Err(Error::Triangulation(format!(
                "point {pi} not inside any circumsphere"
            )));
        }
        let mut facet_count: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        for cell in &bad {
            for skip in 0..=n {
                let mut f: Vec<usize> = cell
                    .vertices
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != skip)
                    .map(|(_, &v)| v)
                    .collect();
                f.sort_unstable();
                *facet_count.entry(f).or_insert(0) += 1;
            }
        }
        for (facet, count) in facet_count {
            if count != 1 {
                continue;
            }
            let mut verts = facet;
            verts.push(pi);
            match circumsphere(&verts, &pts) {
                Some((center, radius_sq)) => cells.push(Cell {
                    vertices: verts,
                    center,
                    radius_sq,
                }),
                None => {
                    return Err(Error::Triangulation(format!(
                        "point {pi} is coplanar with a cavity facet"
                    )))
                }
            }
        }
    }

    let mut out: Vec<Vec<usize>> = cells
        .into_iter()
        .filter(|c| c.vertices.iter().all(|&v| v < first_super))
        .map(|c| {
            let mut v = c.vertices;
            v.sort_unstable();
            v
        })
        .collect();
    out.sort();
    Ok(out)
}
