//! Dense linear-algebra primitives shared by the estimators.
//!
//! Matrices are `nalgebra` column-major matrices, so `vec` is a plain copy of
//! the storage: entry `(r, c)` of a `p × q` matrix lands at `c·p + r`. Every
//! Kronecker-indexed quantity in the crate (`Σ_c ⊗ Σ_s`, missing-entry
//! indices, dataset column order) follows that convention.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

pub type DenseMatrix = DMatrix<f64>;

/// Pivots smaller than this in magnitude are treated as singular by [`sweep`].
pub const PIVOT_TOL: f64 = 1e-12;

/// A symmetric positive-definite matrix together with its Cholesky factor.
///
/// Construction symmetrizes the input as `(A + Aᵀ)/2` and fails if the
/// factorization does not succeed; no jitter is ever added here.
#[derive(Clone, Debug)]
pub struct SpdMatrix {
    mat: DenseMatrix,
    chol: Cholesky<f64, Dyn>,
}

impl SpdMatrix {
    pub fn new(a: DenseMatrix) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "SPD matrix must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite("non-finite entry".into()));
        }
        let mat = symmetrize(&a);
        match Cholesky::new(mat.clone()) {
            Some(chol) if chol.l_dirty().diagonal().iter().all(|d| *d > 0.0 && d.is_finite()) => {
                Ok(Self { mat, chol })
            }
            _ => Err(Error::NotPositiveDefinite(format!(
                "Cholesky factorization failed for {}x{} matrix",
                mat.nrows(),
                mat.ncols()
            ))),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::new(DenseMatrix::identity(n, n)).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn as_matrix(&self) -> &DenseMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.mat
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mat[(i, j)]
    }

    /// Lower-triangular factor `L` with `L Lᵀ = A`.
    pub fn cholesky_l(&self) -> DenseMatrix {
        self.chol.l()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn inverse(&self) -> Result<SpdMatrix> {
        SpdMatrix::new(self.chol.inverse())
    }

    pub fn solve(&self, b: &DenseMatrix) -> DenseMatrix {
        self.chol.solve(b)
    }

    /// `xᵀ A⁻¹ x` for a column vector `x`.
    pub fn inv_quad(&self, x: &DenseMatrix) -> f64 {
        let y = self.chol.l_dirty().solve_lower_triangular(x).expect("non-singular factor");
        y.norm_squared()
    }

    /// Returns `A / A[0,0]` and the divisor.
    pub fn normalized(&self) -> Result<(SpdMatrix, f64)> {
        let scale = self.mat[(0, 0)];
        Ok((SpdMatrix::new(&self.mat / scale)?, scale))
    }
}

impl PartialEq for SpdMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.mat == other.mat
    }
}

/// Inverse of an SPD matrix together with `log|A|`.
pub fn spd_inverse(a: &SpdMatrix) -> Result<(SpdMatrix, f64)> {
    Ok((a.inverse()?, a.log_det()))
}

/// Strictly increasing list of zero-based indices into an ambient dimension.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    pub fn new(indices: Vec<usize>, bound: usize) -> Result<Self> {
        for w in indices.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::Invalid(format!(
                    "index set must be strictly increasing, found {} before {}",
                    w[0], w[1]
                )));
            }
        }
        if let Some(&last) = indices.last() {
            if last >= bound {
                return Err(Error::IndexOutOfRange { index: last, bound });
            }
        }
        Ok(Self(indices))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    /// Indices in `0..bound` not in the set, increasing.
    pub fn complement(&self, bound: usize) -> IndexSet {
        IndexSet((0..bound).filter(|i| !self.contains(*i)).collect())
    }
}

pub fn symmetrize(a: &DenseMatrix) -> DenseMatrix {
    (a + a.transpose()) * 0.5
}

/// Kronecker product; block `(k, l)` of the result is `a[k,l] · b`.
pub fn kron(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    let rows = a.nrows().checked_mul(b.nrows());
    let cols = a.ncols().checked_mul(b.ncols());
    match (rows, cols) {
        (Some(r), Some(c)) if r.checked_mul(c).is_some() => Ok(a.kronecker(b)),
        _ => Err(Error::Dimension(format!(
            "Kronecker product of {}x{} and {}x{} overflows",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        ))),
    }
}

/// Column-stacking vectorization.
pub fn vec(a: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_column_slice(a.len(), 1, a.as_slice())
}

pub fn unvec(v: &DenseMatrix, rows: usize, cols: usize) -> Result<DenseMatrix> {
    if v.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "cannot reshape {} entries into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(DenseMatrix::from_column_slice(rows, cols, v.as_slice()))
}

/// SWEEP operator on the pivot set `Z` of a symmetric matrix.
///
/// Sign convention: with `Y` the complement of `Z`, the result holds
/// `[Z,Z] = A_ZZ⁻¹`, `[Y,Z] = A_YZ A_ZZ⁻¹` (and its transpose in `[Z,Y]`) and
/// `[Y,Y] = A_YY − A_YZ A_ZZ⁻¹ A_ZY`. [`reverse_sweep`] on the same pivots
/// restores the input.
pub fn sweep(a: &DenseMatrix, pivots: &IndexSet) -> Result<DenseMatrix> {
    let mut out = a.clone();
    sweep_in_place(&mut out, pivots.as_slice())?;
    Ok(out)
}

pub fn reverse_sweep(a: &DenseMatrix, pivots: &IndexSet) -> Result<DenseMatrix> {
    let mut out = a.clone();
    reverse_sweep_in_place(&mut out, pivots.as_slice())?;
    Ok(out)
}

fn check_pivots(a: &DenseMatrix, pivots: &[usize]) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!(
            "sweep needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let n = a.nrows();
    let mut seen = vec![false; n];
    for &k in pivots {
        if k >= n {
            return Err(Error::IndexOutOfRange { index: k, bound: n });
        }
        if std::mem::replace(&mut seen[k], true) {
            return Err(Error::Invalid(format!("pivot {k} repeated")));
        }
    }
    Ok(())
}

/// In-place [`sweep`]; returns `log |det A_ZZ|` accumulated from the pivots.
pub fn sweep_in_place(a: &mut DenseMatrix, pivots: &[usize]) -> Result<f64> {
    check_pivots(a, pivots)?;
    let n = a.nrows();
    let mut log_abs_det = 0.0;
    // Pivots are applied in the self-inverse-up-to-sign form (swept diagonal
    // block = -A_ZZ^{-1}); the block sign is flipped once at the end.
    for &k in pivots {
        let d = a[(k, k)];
        if !(d.abs() >= PIVOT_TOL) {
            return Err(Error::SingularPivot { index: k, value: d });
        }
        log_abs_det += d.abs().ln();
        for j in 0..n {
            if j == k {
                continue;
            }
            let akj = a[(k, j)] / d;
            if akj == 0.0 {
                continue;
            }
            for i in 0..n {
                if i != k {
                    a[(i, j)] -= a[(i, k)] * akj;
                }
            }
        }
        for i in 0..n {
            if i != k {
                a[(i, k)] /= d;
                a[(k, i)] /= d;
            }
        }
        a[(k, k)] = -1.0 / d;
    }
    for &i in pivots {
        for &j in pivots {
            a[(i, j)] = -a[(i, j)];
        }
    }
    Ok(log_abs_det)
}

pub fn reverse_sweep_in_place(a: &mut DenseMatrix, pivots: &[usize]) -> Result<()> {
    check_pivots(a, pivots)?;
    let n = a.nrows();
    for &i in pivots {
        for &j in pivots {
            a[(i, j)] = -a[(i, j)];
        }
    }
    for &k in pivots {
        let d = a[(k, k)];
        if !(d.abs() >= PIVOT_TOL) {
            return Err(Error::SingularPivot { index: k, value: d });
        }
        for j in 0..n {
            if j == k {
                continue;
            }
            let akj = a[(k, j)] / d;
            if akj == 0.0 {
                continue;
            }
            for i in 0..n {
                if i != k {
                    a[(i, j)] -= a[(i, k)] * akj;
                }
            }
        }
        for i in 0..n {
            if i != k {
                a[(i, k)] = -a[(i, k)] / d;
                a[(k, i)] = -a[(k, i)] / d;
            }
        }
        a[(k, k)] = -1.0 / d;
    }
    Ok(())
}

/// Mask matrix with one indicator row per entry of `indices`.
///
/// Duplicates are allowed: row and column indices of missing cells repeat.
pub fn eop(indices: &[usize], width: usize) -> Result<DenseMatrix> {
    let mut out = DenseMatrix::zeros(indices.len(), width);
    for (row, &idx) in indices.iter().enumerate() {
        if idx >= width {
            return Err(Error::IndexOutOfRange { index: idx, bound: width });
        }
        out[(row, idx)] = 1.0;
    }
    Ok(out)
}

/// Structure matrix `S_kl = [δ_ik δ_jl + δ_il δ_jk]_ij` of a symmetric matrix.
pub fn structure_matrix(k: usize, l: usize, n: usize) -> Result<DenseMatrix> {
    for idx in [k, l] {
        if idx >= n {
            return Err(Error::IndexOutOfRange { index: idx, bound: n });
        }
    }
    let mut s = DenseMatrix::zeros(n, n);
    s[(k, l)] += 1.0;
    s[(l, k)] += 1.0;
    Ok(s)
}

/// The `p × p` block `(k, l)` of a `(pq) × (pq)` matrix.
pub fn block(v: &DenseMatrix, k: usize, l: usize, p: usize) -> Result<DenseMatrix> {
    if p == 0 || v.nrows() != v.ncols() || v.nrows() % p != 0 {
        return Err(Error::Dimension(format!(
            "{}x{} matrix is not a square grid of {p}x{p} blocks",
            v.nrows(),
            v.ncols()
        )));
    }
    let q = v.nrows() / p;
    for idx in [k, l] {
        if idx >= q {
            return Err(Error::IndexOutOfRange { index: idx, bound: q });
        }
    }
    Ok(v.view((k * p, l * p), (p, p)).into_owned())
}

/// Rows `rows` and columns `cols` of `a`, in the given order.
pub fn submatrix(a: &DenseMatrix, rows: &[usize], cols: &[usize]) -> DenseMatrix {
    DenseMatrix::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}

/// `‖a − b‖_F / ‖b‖_F`, or the absolute distance when `b` is zero.
pub fn rel_frobenius(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    let diff = (a - b).norm();
    let base = b.norm();
    if base > 0.0 {
        diff / base
    } else {
        diff
    }
}
