use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when snapping grid coordinates to zero and when
/// comparing coordinates for equality.
const COORD_TOL: f64 = 1e-12;

/// Description of the generating point set Γ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridSpec {
    /// Evenly spaced points on each axis.
    Regular {
        axis_ranges: Vec<(f64, f64)>,
        points_per_axis: Vec<usize>,
    },
    /// Tensor product of explicit per-axis coordinates.
    Tensor { axes: Vec<Vec<f64>> },
    /// Arbitrary point cloud; triangulated by Delaunay.
    Points { points: Vec<Vec<f64>> },
}

impl GridSpec {
    pub fn regular(axis_ranges: &[(f64, f64)], points_per_axis: &[usize]) -> Self {
        GridSpec::Regular {
            axis_ranges: axis_ranges.to_vec(),
            points_per_axis: points_per_axis.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            GridSpec::Regular { axis_ranges, .. } => axis_ranges.len(),
            GridSpec::Tensor { axes } => axes.len(),
            GridSpec::Points { points } => points.first().map_or(0, |p| p.len()),
        }
    }

    /// Per-axis coordinates for regular and tensor grids.
    pub fn axes(&self) -> Result<Option<Vec<Vec<f64>>>> {
        match self {
            GridSpec::Regular {
                axis_ranges,
                points_per_axis,
            } => {
                if axis_ranges.len() != points_per_axis.len() {
                    return Err(Error::InvalidGrid(format!(
                        "{} axis ranges but {} point counts",
                        axis_ranges.len(),
                        points_per_axis.len()
                    )));
                }
                let mut axes = Vec::with_capacity(axis_ranges.len());
                for (axis, (&(lo, hi), &count)) in
                    axis_ranges.iter().zip(points_per_axis).enumerate()
                {
                    axes.push(regular_axis(axis, lo, hi, count)?);
                }
                Ok(Some(axes))
            }
            GridSpec::Tensor { axes } => {
                let mut out = Vec::with_capacity(axes.len());
                for (axis, coords) in axes.iter().enumerate() {
                    out.push(tensor_axis(axis, coords)?);
                }
                Ok(Some(out))
            }
            GridSpec::Points { .. } => Ok(None),
        }
    }
}

fn regular_axis(axis: usize, lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo < 0.0 && 0.0 < hi) {
        return Err(Error::InvalidGrid(format!(
            "axis {axis} range [{lo}, {hi}] does not strictly contain 0"
        )));
    }
    if count < 3 {
        return Err(Error::InvalidGrid(format!(
            "axis {axis} needs at least 3 points, got {count}"
        )));
    }
    let step = (hi - lo) / (count - 1) as f64;
    let zero_pos = -lo / step;
    let zero_idx = zero_pos.round();
    if (zero_pos - zero_idx).abs() > 1e-9 {
        return Err(Error::OriginNotRepresentable {
            axis,
            reason: format!("{count} points on [{lo}, {hi}] place no point at 0"),
        });
    }
    let zero_idx = zero_idx as usize;
    Ok((0..count)
        .map(|i| {
            if i == zero_idx {
                0.0
            } else if i == count - 1 {
                hi
            } else {
                lo + step * i as f64
            }
        })
        .collect())
}

fn tensor_axis(axis: usize, coords: &[f64]) -> Result<Vec<f64>> {
    if coords.len() < 2 {
        return Err(Error::InvalidGrid(format!(
            "axis {axis} needs at least 2 coordinates"
        )));
    }
    let mut sorted = coords.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = sorted[0];
    let hi = sorted[sorted.len() - 1];
    if !(lo < 0.0 && 0.0 < hi) {
        return Err(Error::InvalidGrid(format!(
            "axis {axis} range [{lo}, {hi}] does not strictly contain 0"
        )));
    }
    let scale = hi - lo;
    for w in sorted.windows(2) {
        if w[1] - w[0] <= COORD_TOL * scale {
            return Err(Error::InvalidGrid(format!(
                "axis {axis} has repeated coordinate {}",
                w[0]
            )));
        }
    }
    let zeros = sorted.iter().filter(|c| c.abs() <= COORD_TOL * scale).count();
    if zeros != 1 {
        return Err(Error::OriginNotRepresentable {
            axis,
            reason: "0 is not among the axis coordinates".into(),
        });
    }
    for c in sorted.iter_mut() {
        if c.abs() <= COORD_TOL * scale {
            *c = 0.0;
        }
    }
    Ok(sorted)
}

/// Expand a grid specification into its point list, sorted lexicographically.
pub fn build_grid(spec: &GridSpec) -> Result<Vec<DVector<f64>>> {
    let mut points: Vec<DVector<f64>> = match spec.axes()? {
        Some(axes) => tensor_product(&axes),
        None => {
            let GridSpec::Points { points } = spec else {
                unreachable!()
            };
            let n = spec.dim();
            if n == 0 {
                return Err(Error::InvalidGrid("empty point list".into()));
            }
            if points.iter().any(|p| p.len() != n) {
                return Err(Error::InvalidGrid("points of mixed dimension".into()));
            }
            points.iter().map(|p| DVector::from_column_slice(p)).collect()
        }
    };
    points.sort_by(lex_cmp);
    let origins = points.iter().filter(|p| p.iter().all(|c| *c == 0.0)).count();
    if origins != 1 {
        return Err(Error::InvalidGrid(format!(
            "point set must contain the origin exactly once (found {origins})"
        )));
    }
    Ok(points)
}

pub(crate) fn tensor_product(axes: &[Vec<f64>]) -> Vec<DVector<f64>> {
    let n = axes.len();
    let total: usize = axes.iter().map(Vec::len).product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    for _ in 0..total {
        out.push(DVector::from_iterator(
            n,
            idx.iter().enumerate().map(|(a, &i)| axes[a][i]),
        ));
        for a in (0..n).rev() {
            idx[a] += 1;
            if idx[a] < axes[a].len() {
                break;
            }
            idx[a] = 0;
        }
    }
    out
}

pub(crate) fn lex_cmp(a: &DVector<f64>, b: &DVector<f64>) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    std::cmp::Ordering::Equal
}
