//! Householder QR that processes columns in order and stops at the first
//! column lying (numerically) in the span of its predecessors.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

pub(crate) struct Qr {
    /// Householder vectors below the diagonal, R on and above it.
    packed: Array2<f64>,
    rdiag: Vec<f64>,
    /// Scalar factors of the reflectors, `H = I - tau v v'` with `v[0] = 1`.
    tau: Vec<f64>,
}

/// Factorizes `a` (n x p, n >= p). Returns the index of the first dependent
/// column on failure. A column is dependent when the norm of its component
/// orthogonal to earlier columns is at most `1e-10 * (largest column norm)`.
pub(crate) fn householder_qr(a: ArrayView2<f64>) -> Result<Qr, usize> {
    let (n, p) = a.dim();
    assert!(n >= p, "QR needs at least as many rows as columns");
    let max_norm = (0..p)
        .map(|j| a.column(j).dot(&a.column(j)).sqrt())
        .fold(0.0, f64::max);
    let tol = 1e-10 * max_norm;
    let mut m = a.to_owned();
    let mut rdiag = vec![0.0; p];
    let mut tau = vec![0.0; p];
    for j in 0..p {
        let norm = (j..n).map(|i| m[[i, j]] * m[[i, j]]).sum::<f64>().sqrt();
        if norm <= tol || norm == 0.0 {
            return Err(j);
        }
        let alpha = if m[[j, j]] > 0.0 { -norm } else { norm };
        // v = x - alpha e1, scaled so v[0] = 1.
        let v0 = m[[j, j]] - alpha;
        for i in (j + 1)..n {
            m[[i, j]] /= v0;
        }
        tau[j] = -v0 / alpha;
        rdiag[j] = alpha;
        for k in (j + 1)..p {
            let mut s = m[[j, k]];
            for i in (j + 1)..n {
                s += m[[i, j]] * m[[i, k]];
            }
            s *= tau[j];
            m[[j, k]] -= s;
            for i in (j + 1)..n {
                m[[i, k]] -= s * m[[i, j]];
            }
        }
        m[[j, j]] = alpha;
    }
    Ok(Qr {
        packed: m,
        rdiag,
        tau,
    })
}

impl Qr {
    fn ncols(&self) -> usize {
        self.rdiag.len()
    }

    /// Computes `Q'y`.
    fn qt_mul(&self, y: ArrayView1<f64>) -> Array1<f64> {
        let n = self.packed.nrows();
        let mut z = y.to_owned();
        for j in 0..self.ncols() {
            let mut s = z[j];
            for i in (j + 1)..n {
                s += self.packed[[i, j]] * z[i];
            }
            s *= self.tau[j];
            z[j] -= s;
            for i in (j + 1)..n {
                z[i] -= s * self.packed[[i, j]];
            }
        }
        z
    }

    /// Least-squares solution of `A x = y`.
    pub(crate) fn solve(&self, y: ArrayView1<f64>) -> Array1<f64> {
        let p = self.ncols();
        let z = self.qt_mul(y);
        let mut x = Array1::zeros(p);
        for j in (0..p).rev() {
            let mut s = z[j];
            for k in (j + 1)..p {
                s -= self.packed[[j, k]] * x[k];
            }
            x[j] = s / self.rdiag[j];
        }
        x
    }

    /// Diagonal of `(A'A)^{-1} = R^{-1} R^{-T}`, i.e. squared row norms of
    /// `R^{-1}`.
    pub(crate) fn inverse_gram_diag(&self) -> Vec<f64> {
        let p = self.ncols();
        // Upper-triangular inverse, column by column.
        let mut rinv = Array2::<f64>::zeros((p, p));
        for c in 0..p {
            rinv[[c, c]] = 1.0 / self.rdiag[c];
            for r in (0..c).rev() {
                let mut s = 0.0;
                for k in (r + 1)..=c {
                    s += self.packed[[r, k]] * rinv[[k, c]];
                }
                rinv[[r, c]] = -s / self.rdiag[r];
            }
        }
        (0..p).map(|r| rinv.row(r).dot(&rinv.row(r))).collect()
    }
}
