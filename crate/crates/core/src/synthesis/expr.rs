//! Affine scalar and matrix expressions over the decision vector.

use nalgebra::DMatrix;

/// c + Σ a_v x_v
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        LinExpr {
            constant: c,
            terms: Vec::new(),
        }
    }

    pub fn var(v: usize) -> Self {
        Self::term(v, 1.0)
    }

    pub fn term(v: usize, a: f64) -> Self {
        LinExpr {
            constant: 0.0,
            terms: vec![(v, a)],
        }
    }

    /// self += a · other
    pub fn axpy(&mut self, a: f64, other: &LinExpr) {
        if a == 0.0 {
            return;
        }
        self.constant += a * other.constant;
        self.terms.extend(other.terms.iter().map(|&(v, c)| (v, a * c)));
    }

    pub fn add_term(&mut self, v: usize, a: f64) {
        if a != 0.0 {
            self.terms.push((v, a));
        }
    }

    /// Sort by variable, merge repeats and drop exact zeros.
    pub fn compact(&mut self) {
        if self.terms.len() < 2 {
            self.terms.retain(|t| t.1 != 0.0);
            return;
        }
        self.terms.sort_unstable_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for &(v, a) in &self.terms {
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 += a,
                _ => out.push((v, a)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        self.terms = out;
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(v, a)| a * x[v]).sum::<f64>()
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = LinExpr::default();
        out.axpy(a, self);
        out
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }
}

/// Matrix whose entries are affine in the decision vector (column-major).
#[derive(Debug, Clone, PartialEq)]
pub struct AffMat {
    rows: usize,
    cols: usize,
    data: Vec<LinExpr>,
}

impl AffMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        AffMat {
            rows,
            cols,
            data: vec![LinExpr::default(); rows * cols],
        }
    }

    pub fn constant(m: &DMatrix<f64>) -> Self {
        AffMat {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.iter().map(|&c| LinExpr::constant(c)).collect(),
        }
    }

    /// Free matrix variable; entry (i, j) is variable `offset + j·rows + i`.
    pub fn vars(rows: usize, cols: usize, offset: usize) -> Self {
        AffMat {
            rows,
            cols,
            data: (0..rows * cols).map(|k| LinExpr::var(offset + k)).collect(),
        }
    }

    /// Symmetric matrix variable over d(d+1)/2 scalars, upper triangle by column.
    pub fn sym_vars(d: usize, offset: usize) -> Self {
        let mut m = Self::zeros(d, d);
        let mut k = offset;
        for j in 0..d {
            for i in 0..=j {
                m.data[j * d + i] = LinExpr::var(k);
                m.data[i * d + j] = LinExpr::var(k);
                k += 1;
            }
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> LinExpr) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        AffMat { rows, cols, data }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &LinExpr {
        &self.data[j * self.rows + i]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut LinExpr {
        &mut self.data[j * self.rows + i]
    }

    pub fn add(&self, other: &AffMat) -> AffMat {
        self.combine(1.0, other)
    }

    pub fn sub(&self, other: &AffMat) -> AffMat {
        self.combine(-1.0, other)
    }

    fn combine(&self, a: f64, other: &AffMat) -> AffMat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "shape mismatch");
        let mut out = self.clone();
        for (o, e) in out.data.iter_mut().zip(&other.data) {
            o.axpy(a, e);
            o.compact();
        }
        out
    }

    pub fn add_constant(&self, c: &DMatrix<f64>) -> AffMat {
        assert_eq!((self.rows, self.cols), c.shape(), "shape mismatch");
        let mut out = self.clone();
        for j in 0..self.cols {
            for i in 0..self.rows {
                out.data[j * self.rows + i].constant += c[(i, j)];
            }
        }
        out
    }

    pub fn scale(&self, a: f64) -> AffMat {
        AffMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|e| e.scaled(a)).collect(),
        }
    }

    pub fn transpose(&self) -> AffMat {
        AffMat::from_fn(self.cols, self.rows, |i, j| self.get(j, i).clone())
    }

    /// ½(M + Mᵀ)
    pub fn sym_part(&self) -> AffMat {
        assert_eq!(self.rows, self.cols);
        let mut out = AffMat::zeros(self.rows, self.cols);
        for j in 0..self.cols {
            for i in 0..self.rows {
                let e = out.get_mut(i, j);
                e.axpy(0.5, self.get(i, j));
                e.axpy(0.5, self.get(j, i));
                e.compact();
            }
        }
        out
    }

    /// C · M
    pub fn lmul(c: &DMatrix<f64>, m: &AffMat) -> AffMat {
        assert_eq!(c.ncols(), m.rows, "shape mismatch");
        AffMat::from_fn(c.nrows(), m.cols, |i, j| {
            let mut e = LinExpr::default();
            for k in 0..m.rows {
                e.axpy(c[(i, k)], m.get(k, j));
            }
            e.compact();
            e
        })
    }

    /// M · C
    pub fn rmul(m: &AffMat, c: &DMatrix<f64>) -> AffMat {
        assert_eq!(m.cols, c.nrows(), "shape mismatch");
        AffMat::from_fn(m.rows, c.ncols(), |i, j| {
            let mut e = LinExpr::default();
            for k in 0..m.cols {
                e.axpy(c[(k, j)], m.get(i, k));
            }
            e.compact();
            e
        })
    }

    pub fn is_constant(&self) -> bool {
        self.data.iter().all(LinExpr::is_constant)
    }

    /// A · B where at least one factor is constant.
    pub fn mul(a: &AffMat, b: &AffMat) -> AffMat {
        if a.is_constant() {
            AffMat::lmul(&a.constant_part(), b)
        } else if b.is_constant() {
            AffMat::rmul(a, &b.constant_part())
        } else {
            panic!("product of two non-constant affine matrices is not affine")
        }
    }

    /// Copy `block` into rows r0.., columns c0...
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &AffMat) {
        for j in 0..block.cols {
            for i in 0..block.rows {
                *self.get_mut(r0 + i, c0 + j) = block.get(i, j).clone();
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).eval(x))
    }

    pub fn constant_part(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).constant)
    }

    pub fn entries(&self) -> impl Iterator<Item = &LinExpr> {
        self.data.iter()
    }

    pub fn max_var(&self) -> Option<usize> {
        self.data.iter().flat_map(|e| e.terms.iter().map(|t| t.0)).max()
    }
}
