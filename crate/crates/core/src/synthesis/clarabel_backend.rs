//! Interior-point backend using Clarabel's PSD triangle cones.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use super::problem::{Backend, SdpProblem, SdpSolution, SolveStatus, SolverOptions};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct ClarabelBackend {
    pub options: SolverOptions,
}

impl ClarabelBackend {
    pub fn new(options: SolverOptions) -> Self {
        ClarabelBackend { options }
    }
}

pub fn map_status(status: SolverStatus) -> SolveStatus {
    match status {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::AlmostSolved => SolveStatus::NearOptimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
        _ => SolveStatus::NumericalFailure,
    }
}

struct Triplets {
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    b: Vec<f64>,
}

impl Triplets {
    /// Append the row s = expr, i.e. b = constant and A = −coefficients.
    fn push_row(&mut self, constant: f64, terms: &[(usize, f64)], scale: f64) {
        let r = self.b.len();
        self.b.push(scale * constant);
        for &(v, a) in terms {
            self.rows.push(r);
            self.cols.push(v);
            self.vals.push(-scale * a);
        }
    }
}

impl Backend for ClarabelBackend {
    fn name(&self) -> &str {
        "clarabel"
    }

    fn solve(&self, problem: &SdpProblem) -> Result<SdpSolution> {
        let n = problem.num_vars();
        let mut t = Triplets {
            rows: Vec::new(),
            cols: Vec::new(),
            vals: Vec::new(),
            b: Vec::new(),
        };
        let mut cones = Vec::new();
        if !problem.equalities().is_empty() {
            for c in problem.equalities() {
                t.push_row(c.expr.constant, &c.expr.terms, 1.0);
            }
            cones.push(SupportedConeT::ZeroConeT(problem.equalities().len()));
        }
        if !problem.nonnegative().is_empty() {
            for c in problem.nonnegative() {
                t.push_row(c.expr.constant, &c.expr.terms, 1.0);
            }
            cones.push(SupportedConeT::NonnegativeConeT(problem.nonnegative().len()));
        }
        let sqrt2 = std::f64::consts::SQRT_2;
        for c in problem.psd() {
            let d = c.matrix.nrows();
            for j in 0..d {
                for i in 0..=j {
                    let e = c.matrix.get(i, j);
                    t.push_row(e.constant, &e.terms, if i == j { 1.0 } else { sqrt2 });
                }
            }
            cones.push(SupportedConeT::PSDTriangleConeT(d));
        }
        let m = t.b.len();
        let a = CscMatrix::new_from_triplets(m, n, t.rows, t.cols, t.vals);
        let p = CscMatrix::zeros((n, n));
        let mut q = vec![0.0; n];
        for &(v, c) in &problem.objective().terms {
            q[v] += c;
        }
        let o = &self.options;
        let settings = DefaultSettingsBuilder::default()
            .verbose(o.verbose)
            .max_iter(o.max_iter)
            .time_limit(o.time_limit_s)
            .tol_gap_abs(o.tol)
            .tol_gap_rel(o.tol)
            .tol_feas(o.tol)
            .static_regularization_constant(o.static_reg)
            .build()
            .map_err(|e| Error::Solver(format!("settings: {e:?}")))?;
        let mut solver = DefaultSolver::new(&p, &q, &a, &t.b, &cones, settings)
            .map_err(|e| Error::Solver(format!("setup: {e}")))?;
        solver.solve();
        let sol = &solver.solution;
        let status = map_status(sol.status);
        let x = sol.x.clone();
        let residuals = problem.residuals(&x);
        Ok(SdpSolution {
            status,
            objective: problem.objective().eval(&x),
            iterations: sol.iterations,
            solve_time_s: sol.solve_time,
            residuals,
            detail: format!("{:?}", sol.status),
            x,
        })
    }
}
