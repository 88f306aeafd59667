//! Backend-neutral semidefinite program.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::expr::{AffMat, LinExpr};
use crate::error::Result;

/// Constraint family, used to tag blocks in diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Positivity,
    GoalDecay,
    Decay,
    GoalFace,
    Face,
    Boundary,
    InputLower,
    InputUpper,
    Multiplier,
    Origin,
    Guard,
    Generic,
}

/// Identifies one constraint block: family, simplex or face id, vertex index
/// i, model vertex k and face side s.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockTag {
    pub family: Family,
    pub index: usize,
    pub i: usize,
    pub k: usize,
    pub s: usize,
}

impl BlockTag {
    pub fn new(family: Family, index: usize) -> Self {
        BlockTag {
            family,
            index,
            i: 0,
            k: 0,
            s: 0,
        }
    }

    pub fn with(family: Family, index: usize, i: usize, k: usize, s: usize) -> Self {
        BlockTag {
            family,
            index,
            i,
            k,
            s,
        }
    }
}

impl fmt::Display for BlockTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?}[{}] i={} k={} s={}",
            self.family, self.index, self.i, self.k, self.s
        )
    }
}

/// Named contiguous range of scalar variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarBlock {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone)]
pub struct PsdConstraint {
    pub tag: BlockTag,
    /// Symmetric; only the upper triangle is read.
    pub matrix: AffMat,
}

#[derive(Debug, Clone)]
pub struct ScalarConstraint {
    pub tag: BlockTag,
    pub expr: LinExpr,
}

/// minimize cᵀx + c0 subject to equalities, expr ≥ 0 and M(x) ⪰ 0.
#[derive(Debug, Clone, Default)]
pub struct SdpProblem {
    num_vars: usize,
    blocks: Vec<VarBlock>,
    objective: LinExpr,
    equalities: Vec<ScalarConstraint>,
    nonnegative: Vec<ScalarConstraint>,
    psd: Vec<PsdConstraint>,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reserve `len` scalar variables and return the first index.
    pub fn add_vars(&mut self, name: impl Into<String>, len: usize) -> usize {
        let offset = self.num_vars;
        self.num_vars += len;
        self.blocks.push(VarBlock {
            name: name.into(),
            offset,
            len,
        });
        offset
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn blocks(&self) -> &[VarBlock] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&VarBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn set_objective(&mut self, mut obj: LinExpr) {
        obj.compact();
        self.objective = obj;
    }

    pub fn objective(&self) -> &LinExpr {
        &self.objective
    }

    pub fn add_equality(&mut self, tag: BlockTag, mut expr: LinExpr) {
        expr.compact();
        self.equalities.push(ScalarConstraint { tag, expr });
    }

    pub fn add_nonnegative(&mut self, tag: BlockTag, mut expr: LinExpr) {
        expr.compact();
        self.nonnegative.push(ScalarConstraint { tag, expr });
    }

    /// Every entry of `m` ≥ 0.
    pub fn add_entrywise_nonnegative(&mut self, tag: BlockTag, m: &AffMat) {
        for e in m.entries() {
            self.add_nonnegative(tag, e.clone());
        }
    }

    pub fn add_psd(&mut self, tag: BlockTag, matrix: AffMat) {
        debug_assert_eq!(matrix.nrows(), matrix.ncols());
        self.psd.push(PsdConstraint { tag, matrix });
    }

    /// M ⪯ 0, stored as −M ⪰ 0.
    pub fn add_nsd(&mut self, tag: BlockTag, matrix: AffMat) {
        self.add_psd(tag, matrix.scale(-1.0));
    }

    pub fn extend_psd(&mut self, items: impl IntoIterator<Item = PsdConstraint>) {
        self.psd.extend(items);
    }

    pub fn equalities(&self) -> &[ScalarConstraint] {
        &self.equalities
    }

    pub fn nonnegative(&self) -> &[ScalarConstraint] {
        &self.nonnegative
    }

    pub fn psd(&self) -> &[PsdConstraint] {
        &self.psd
    }

    pub fn count_psd(&self, family: Family) -> usize {
        self.psd.iter().filter(|c| c.tag.family == family).count()
    }

    /// Sort constraints by tag so the layout does not depend on assembly order.
    pub fn canonicalize(&mut self) {
        self.psd.sort_by_key(|c| c.tag);
        self.nonnegative.sort_by_key(|c| c.tag);
        self.equalities.sort_by_key(|c| c.tag);
    }

    /// Exact facial reduction of PSD blocks with a structurally zero diagonal.
    ///
    /// A diagonal entry qualifies when it is zero up to `drop_tol` once pinned
    /// variables (single-variable equalities `v = 0`) are removed, apart from
    /// nonnegative variables with negative coefficients. Such an entry must be
    /// zero in every feasible point, so those variables are pinned, the rest of
    /// its row becomes equalities and the row and column leave the block. The
    /// feasible set is unchanged. Returns the number of rows removed.
    pub fn reduce_zero_diagonals(&mut self, drop_tol: f64) -> usize {
        let mut pinned: HashSet<usize> = self
            .equalities
            .iter()
            .filter(|c| c.expr.constant == 0.0 && c.expr.terms.len() == 1)
            .map(|c| c.expr.terms[0].0)
            .collect();
        let single_nonneg: HashMap<usize, usize> = self
            .nonnegative
            .iter()
            .enumerate()
            .filter(|(_, c)| c.expr.constant == 0.0 && c.expr.terms.len() == 1 && c.expr.terms[0].1 > 0.0)
            .map(|(i, c)| (c.expr.terms[0].0, i))
            .collect();
        let mut drop_nonneg = HashSet::new();
        let mut removed = 0;
        loop {
            let mut changed = false;
            for c in &mut self.psd {
                'rows: loop {
                    let d = c.matrix.nrows();
                    if d <= 1 {
                        break;
                    }
                    for t in 0..d {
                        let e = c.matrix.get(t, t);
                        if e.constant.abs() > drop_tol {
                            continue;
                        }
                        let mut forced = Vec::new();
                        let ok = e.terms.iter().all(|&(v, a)| {
                            if a.abs() <= drop_tol || pinned.contains(&v) {
                                true
                            } else if a < 0.0 && single_nonneg.contains_key(&v) {
                                forced.push(v);
                                true
                            } else {
                                false
                            }
                        });
                        if !ok {
                            continue;
                        }
                        for v in forced {
                            if pinned.insert(v) {
                                drop_nonneg.insert(single_nonneg[&v]);
                                self.equalities.push(ScalarConstraint {
                                    tag: BlockTag::new(Family::Multiplier, v),
                                    expr: LinExpr::var(v),
                                });
                            }
                        }
                        for j in (0..d).filter(|&j| j != t) {
                            let mut e = c.matrix.get(t, j).clone();
                            e.compact();
                            if e.is_constant() && e.constant == 0.0 {
                                continue;
                            }
                            self.equalities.push(ScalarConstraint { tag: c.tag, expr: e });
                        }
                        let keep: Vec<usize> = (0..d).filter(|&j| j != t).collect();
                        c.matrix = AffMat::from_fn(d - 1, d - 1, |r, s| c.matrix.get(keep[r], keep[s]).clone());
                        removed += 1;
                        changed = true;
                        continue 'rows;
                    }
                    break;
                }
            }
            if !changed {
                break;
            }
        }
        if !drop_nonneg.is_empty() {
            let mut idx = 0;
            self.nonnegative.retain(|_| {
                idx += 1;
                !drop_nonneg.contains(&(idx - 1))
            });
        }
        removed
    }

    /// Residuals of every constraint at `x`; negative values are violations.
    pub fn residuals(&self, x: &[f64]) -> Residuals {
        let mut r = Residuals::default();
        for c in &self.equalities {
            let v = -c.expr.eval(x).abs();
            if r.worst_equality.is_none_or(|(_, w)| v < w) {
                r.worst_equality = Some((c.tag, v));
            }
        }
        for c in &self.nonnegative {
            let v = c.expr.eval(x);
            if r.worst_nonnegative.is_none_or(|(_, w)| v < w) {
                r.worst_nonnegative = Some((c.tag, v));
            }
        }
        let eigs = map_maybe_parallel(&self.psd, |c| {
            let m = c.matrix.eval(x);
            let m = (&m + m.transpose()) * 0.5;
            m.symmetric_eigenvalues().min()
        });
        for (c, v) in self.psd.iter().zip(eigs) {
            if r.worst_psd.is_none_or(|(_, w)| v < w) {
                r.worst_psd = Some((c.tag, v));
            }
        }
        r
    }

    /// JSON dump with constraint matrices in sparse triplet form.
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        let dump = DumpFile {
            num_vars: self.num_vars,
            blocks: self.blocks.clone(),
            objective: DumpLinear::from(&self.objective),
            equalities: self
                .equalities
                .iter()
                .map(|c| DumpScalar {
                    tag: c.tag,
                    expr: DumpLinear::from(&c.expr),
                })
                .collect(),
            nonnegative: self
                .nonnegative
                .iter()
                .map(|c| DumpScalar {
                    tag: c.tag,
                    expr: DumpLinear::from(&c.expr),
                })
                .collect(),
            psd: self.psd.iter().map(DumpPsd::from).collect(),
        };
        serde_json::to_writer(out, &dump)?;
        Ok(())
    }
}

fn map_maybe_parallel<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// −|expr| of the worst equality.
    pub worst_equality: Option<(BlockTag, f64)>,
    pub worst_nonnegative: Option<(BlockTag, f64)>,
    /// Smallest eigenvalue over all PSD blocks.
    pub worst_psd: Option<(BlockTag, f64)>,
}

impl Residuals {
    /// The most negative residual across all constraint kinds (0 if none).
    pub fn worst(&self) -> f64 {
        [self.worst_equality, self.worst_nonnegative, self.worst_psd]
            .iter()
            .flatten()
            .map(|t| t.1)
            .fold(0.0, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    NearOptimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl SolveStatus {
    pub fn is_success(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::NearOptimal)
    }
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::NearOptimal => "near-optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::NumericalFailure => "numerical-failure",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    /// cᵀx + c0 at the returned point.
    pub objective: f64,
    pub iterations: u32,
    pub solve_time_s: f64,
    pub residuals: Residuals,
    pub detail: String,
}

impl SdpSolution {
    pub fn block<'a>(&'a self, problem: &SdpProblem, name: &str) -> Option<&'a [f64]> {
        problem
            .block(name)
            .map(|b| &self.x[b.offset..b.offset + b.len])
    }
}

/// Solver settings shared by all backends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Relative/absolute gap and feasibility tolerance.
    pub tol: f64,
    pub max_iter: u32,
    pub time_limit_s: f64,
    pub verbose: bool,
    /// Static regularization of the interior-point KKT system.
    pub static_reg: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-8,
            max_iter: 200,
            time_limit_s: f64::INFINITY,
            verbose: false,
            static_reg: 1e-7,
        }
    }
}

/// A conic solver able to handle [`SdpProblem`].
pub trait Backend: Sync {
    fn name(&self) -> &str;
    fn solve(&self, problem: &SdpProblem) -> Result<SdpSolution>;
}

#[derive(Serialize)]
struct DumpLinear {
    constant: f64,
    terms: Vec<(usize, f64)>,
}

impl From<&LinExpr> for DumpLinear {
    fn from(e: &LinExpr) -> Self {
        DumpLinear {
            constant: e.constant,
            terms: e.terms.clone(),
        }
    }
}

#[derive(Serialize)]
struct DumpScalar {
    tag: BlockTag,
    expr: DumpLinear,
}

#[derive(Serialize)]
struct DumpPsd {
    tag: BlockTag,
    dim: usize,
    /// (row, col, value) over the upper triangle.
    constant: Vec<(usize, usize, f64)>,
    /// (var, row, col, value) over the upper triangle.
    coefficients: Vec<(usize, usize, usize, f64)>,
}

impl From<&PsdConstraint> for DumpPsd {
    fn from(c: &PsdConstraint) -> Self {
        let d = c.matrix.nrows();
        let mut constant = Vec::new();
        let mut coefficients = Vec::new();
        for j in 0..d {
            for i in 0..=j {
                let e = c.matrix.get(i, j);
                if e.constant != 0.0 {
                    constant.push((i, j, e.constant));
                }
                coefficients.extend(e.terms.iter().map(|&(v, a)| (v, i, j, a)));
            }
        }
        DumpPsd {
            tag: c.tag,
            dim: d,
            constant,
            coefficients,
        }
    }
}

#[derive(Serialize)]
struct DumpFile {
    num_vars: usize,
    blocks: Vec<VarBlock>,
    objective: DumpLinear,
    equalities: Vec<DumpScalar>,
    nonnegative: Vec<DumpScalar>,
    psd: Vec<DumpPsd>,
}
