//! Dense row-major matrices and the thin truncated SVD used for subspace extraction.
//!
//! The SVD works through the small `m x m` Gram matrix `A Aᵀ` instead of the
//! `d x d` one, which is the cheap side in the trajectory regime (`m ≪ d`).

use thiserror::Error;

/// Default relative cut-off below which singular directions are dropped.
pub const DEFAULT_REL_TOL: f64 = 1e-10;

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix data length {len} does not match {rows}x{cols}")]
    Shape { rows: usize, cols: usize, len: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("empty matrix or zero requested rank")]
    Empty,
}

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::Shape { rows, cols, len: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, LinalgError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(LinalgError::Shape { rows: rows.len(), cols, len: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    /// Builds a matrix whose columns are the given equal-length vectors.
    pub fn from_columns<C: AsRef<[f64]>>(columns: &[C]) -> Result<Self, LinalgError> {
        let rows = columns.first().map_or(0, |c| c.as_ref().len());
        let cols = columns.len();
        let mut m = Self::zeros(rows, cols);
        for (j, c) in columns.iter().enumerate() {
            let c = c.as_ref();
            if c.len() != rows {
                return Err(LinalgError::Shape { rows, cols, len: c.len() });
            }
            for (i, &v) in c.iter().enumerate() {
                m.data[i * cols + j] = v;
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// `self * other`.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<Self, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::Shape { rows: other.rows, cols: other.cols, len: self.cols });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (l, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                axpy(a, other.row(l), out_row);
            }
        }
        Ok(out)
    }

    /// `selfᵀ * self`, the `cols x cols` Gram matrix of the columns.
    pub fn gram_of_columns(&self) -> Self {
        let n = self.cols;
        let mut g = Self::zeros(n, n);
        for i in 0..self.rows {
            let r = self.row(i);
            for a in 0..n {
                let ra = r[a];
                if ra == 0.0 {
                    continue;
                }
                for b in a..n {
                    g.data[a * n + b] += ra * r[b];
                }
            }
        }
        for a in 0..n {
            for b in 0..a {
                g.data[a * n + b] = g.data[b * n + a];
            }
        }
        g
    }

    /// `self * selfᵀ`, the `rows x rows` Gram matrix of the rows.
    pub fn gram_of_rows(&self) -> Self {
        let n = self.rows;
        let mut g = Self::zeros(n, n);
        for a in 0..n {
            for b in a..n {
                let v = dot(self.row(a), self.row(b));
                g.data[a * n + b] = v;
                g.data[b * n + a] = v;
            }
        }
        g
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    fn check_finite(&self) -> Result<(), LinalgError> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(p) => Err(LinalgError::NonFinite { row: p / self.cols.max(1), col: p % self.cols.max(1) }),
            None => Ok(()),
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, eigenvectors)` sorted by descending eigenvalue; eigenvector `i`
/// is column `i` of the returned matrix. Iterates until the off-diagonal Frobenius mass
/// drops below `1e-12` of the total, or 100 sweeps.
pub fn symmetric_eigen(a: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix), LinalgError> {
    let n = a.rows;
    if n != a.cols {
        return Err(LinalgError::Shape { rows: a.rows, cols: a.cols, len: a.data.len() });
    }
    a.check_finite()?;
    let mut m = a.clone();
    let mut v = DenseMatrix::identity(n);
    let total = m.frobenius_norm();
    if total == 0.0 {
        return Ok((vec![0.0; n], v));
    }

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m.get(i, j).powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= JACOBI_TOL * total {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                // Rotation angle that annihilates (p, q); the stable small-root form of tan.
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                m.set(p, q, 0.0);
                m.set(q, p, 0.0);
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(j, j).total_cmp(&m.get(i, i)));
    let values = order.iter().map(|&i| m.get(i, i)).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors.set(k, dst, v.get(k, src));
        }
    }
    Ok((values, vectors))
}

/// Emitted when fewer directions than requested survive the rank filter.
#[derive(Debug, Clone, PartialEq)]
pub struct RankDeficiency {
    pub requested: usize,
    pub returned: usize,
}

/// Top singular values and right singular vectors of a short, wide matrix.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// Descending, nonnegative.
    pub singular_values: Vec<f64>,
    /// `d x r`, orthonormal columns.
    pub right_vectors: DenseMatrix,
    /// Eigenvalues of `A Aᵀ` (squared singular values), all `m` of them, descending.
    pub gram_eigenvalues: Vec<f64>,
    pub rank_deficiency: Option<RankDeficiency>,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }
}

/// Thin truncated SVD of `a` (`m x d`) through the `m x m` Gram matrix.
///
/// Keeps at most `k` directions, and only those with `s_i > rel_tol * s_max`. The returned
/// right vectors `w_i = Aᵀ u_i / s_i` get a final modified Gram–Schmidt pass.
pub fn gram_svd_topk(a: &DenseMatrix, k: usize, rel_tol: f64) -> Result<SvdResult, LinalgError> {
    if a.rows == 0 || a.cols == 0 || k == 0 {
        return Err(LinalgError::Empty);
    }
    a.check_finite()?;

    let gram = a.gram_of_rows();
    let (eigenvalues, u) = symmetric_eigen(&gram)?;
    let s_max = eigenvalues.first().copied().unwrap_or(0.0).max(0.0).sqrt();
    let effective = eigenvalues
        .iter()
        .take_while(|&&l| {
            let s = l.max(0.0).sqrt();
            s_max > 0.0 && s > rel_tol * s_max
        })
        .count();
    let r = k.min(effective);

    let d = a.cols;
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(r);
    let mut singular_values = Vec::with_capacity(r);
    for i in 0..r {
        let s = eigenvalues[i].sqrt();
        let mut w = vec![0.0; d];
        for row in 0..a.rows {
            let coeff = u.get(row, i);
            if coeff != 0.0 {
                axpy(coeff, a.row(row), &mut w);
            }
        }
        w.iter_mut().for_each(|x| *x /= s);
        columns.push(w);
        singular_values.push(s);
    }

    modified_gram_schmidt(&mut columns);
    let right_vectors = if columns.is_empty() {
        DenseMatrix::zeros(d, 0)
    } else {
        DenseMatrix::from_columns(&columns)?
    };
    let rank_deficiency = (r < k).then_some(RankDeficiency { requested: k, returned: r });

    Ok(SvdResult {
        singular_values,
        right_vectors,
        gram_eigenvalues: eigenvalues.into_iter().map(|l| l.max(0.0)).collect(),
        rank_deficiency,
    })
}

/// In-place modified Gram–Schmidt over a list of column vectors.
pub fn modified_gram_schmidt(columns: &mut [Vec<f64>]) {
    for j in 0..columns.len() {
        let (done, rest) = columns.split_at_mut(j);
        let col = &mut rest[0];
        for q in done.iter() {
            let proj = dot(q, col);
            axpy(-proj, q, col);
        }
        let n = norm2(col);
        if n > 0.0 {
            col.iter_mut().for_each(|x| *x /= n);
        }
    }
}

/// Max-entry absolute deviation of `PᵀP` from the identity.
pub fn orthonormality_defect(p: &DenseMatrix) -> f64 {
    let g = p.gram_of_columns();
    let k = g.rows();
    let mut worst: f64 = 0.0;
    for i in 0..k {
        for j in 0..k {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g.get(i, j) - target).abs());
        }
    }
    worst
}
