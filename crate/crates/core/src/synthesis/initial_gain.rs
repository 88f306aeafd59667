//! Minimum-norm linear gain with a guaranteed decay rate on every vertex.

use nalgebra::DMatrix;

use super::expr::{AffMat, LinExpr};
use super::problem::{Backend, BlockTag, Family, SdpProblem};
use crate::error::{Error, Result};
use crate::systems::PolytopicModel;

/// min s  s.t.  X ⪰ I,  A_kX + XA_kᵀ + B_kY + YᵀB_kᵀ + 2·decay·X ⪯ 0,
/// [[s I, Y], [Yᵀ, X]] ⪰ 0;  returns K = Y X⁻¹.
pub fn initial_decay_gain(model: &PolytopicModel, decay: f64, backend: &dyn Backend) -> Result<DMatrix<f64>> {
    if !model.is_uniform() {
        return Err(Error::InvalidModel("the decay-gain program needs a uniform model".into()));
    }
    let n = model.n();
    let m = model.m();
    let mut p = SdpProblem::new();
    let xo = p.add_vars("X", n * (n + 1) / 2);
    let yo = p.add_vars("Y", m * n);
    let so = p.add_vars("s", 1);
    let x = AffMat::sym_vars(n, xo);
    let y = AffMat::vars(m, n, yo);

    p.add_psd(
        BlockTag::new(Family::Generic, 0),
        x.add_constant(&(-DMatrix::identity(n, n))),
    );
    for (k, v) in model.vertices(0).iter().enumerate() {
        let ax = AffMat::lmul(&v.a, &x);
        let by = AffMat::lmul(&v.b, &y);
        let sum = ax.add(&ax.transpose()).add(&by).add(&by.transpose()).add(&x.scale(2.0 * decay));
        p.add_nsd(BlockTag::with(Family::Decay, 0, 0, k, 0), sum);
    }
    let mut big = AffMat::zeros(m + n, m + n);
    for i in 0..m {
        *big.get_mut(i, i) = LinExpr::var(so);
    }
    big.set_block(0, m, &y);
    big.set_block(m, 0, &y.transpose());
    big.set_block(m, m, &x);
    p.add_psd(BlockTag::new(Family::Generic, 1), big);
    p.set_objective(LinExpr::var(so));

    let sol = backend.solve(&p)?;
    if !sol.status.is_success() {
        return Err(match sol.status {
            super::problem::SolveStatus::Infeasible => {
                Error::Infeasible(format!("no common quadratic certificate with decay rate {decay}"))
            }
            s => Error::Solver(format!("decay-gain program ended {s}")),
        });
    }
    let xv = x.eval(&sol.x);
    let yv = y.eval(&sol.x);
    let xinv = xv.try_inverse().ok_or(Error::Singular("decay-gain X"))?;
    Ok(yv * xinv)
}

#[cfg(all(test, feature = "clarabel"))]
mod tests {
    use super::*;
    use crate::synthesis::ClarabelBackend;
    use crate::systems::{unstable_polytopic, VertexSystem};
    use nalgebra::DVector;

    fn abscissa(m: &DMatrix<f64>) -> f64 {
        m.complex_eigenvalues().iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn unstable_polytopic_gain() {
        let model = unstable_polytopic();
        let k = initial_decay_gain(&model, 1.0, &ClarabelBackend::default()).unwrap();
        let expected = [-3.2668, -1.0985];
        for (got, want) in k.iter().zip(expected) {
            assert!((got - want).abs() <= 0.05 * want.abs(), "{k}");
        }
        for v in model.vertices(0).iter() {
            assert!(abscissa(&(&v.a + &v.b * &k)) <= -1.0 + 1e-6);
        }
    }

    #[test]
    fn stable_scalar_needs_no_gain() {
        let model = PolytopicModel::uniform(
            "scalar",
            vec![VertexSystem {
                a: DMatrix::from_element(1, 1, -1.0),
                b: DMatrix::from_element(1, 1, 1.0),
            }],
            DVector::from_element(1, -1.0),
            DVector::from_element(1, 1.0),
            vec![(-1.0, 1.0)],
        )
        .unwrap();
        let k = initial_decay_gain(&model, 0.0, &ClarabelBackend::default()).unwrap();
        assert!(k[(0, 0)].abs() < 1e-3, "{k}");
    }
}
