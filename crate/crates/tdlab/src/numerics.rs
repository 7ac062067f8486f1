//! Minimal dense linear algebra: linear solves, symmetric extreme
//! eigenvalues, and spectral norms.
//!
//! Everything here operates on small dense matrices (feature dimension or
//! state count, at most a few hundred), so Gaussian elimination and the
//! cyclic Jacobi method are entirely adequate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vectors are plain `Vec<f64>`; helpers below cover the needed operations.
pub type Vector = Vec<f64>;

/// Pivot magnitudes below this are treated as singular.
pub const PIVOT_TOL: f64 = 1e-12;

/// Asymmetry tolerance for the symmetric eigensolver.
const SYMMETRY_TOL: f64 = 1e-10;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major storage, length `rows * cols`.
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Build from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r > 0 { rows[0].len() } else { 0 };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Borrow row `i` as a slice.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.at(i, j));
            }
        }
        t
    }

    /// Matrix-vector product.
    pub fn mul_vec(&self, v: &[f64]) -> Vector {
        assert_eq!(self.cols, v.len(), "mul_vec dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Matrix-matrix product.
    pub fn mul_mat(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "mul_mat dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self.at(i, k);
                if aik == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += aik * other.at(k, j);
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    /// Rank-one outer product `u v^T`.
    pub fn outer(u: &[f64], v: &[f64]) -> Matrix {
        let mut m = Matrix::zeros(u.len(), v.len());
        for (i, ui) in u.iter().enumerate() {
            for (j, vj) in v.iter().enumerate() {
                m.set(i, j, ui * vj);
            }
        }
        m
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Maximum absolute asymmetry `max |m_ij - m_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self.at(i, j) - self.at(j, i)).abs());
            }
        }
        worst
    }
}

/// Dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Max-norm.
pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Componentwise `a - b`.
pub fn sub(a: &[f64], b: &[f64]) -> Vector {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Componentwise `a + s * b`.
pub fn axpy(a: &[f64], s: f64, b: &[f64]) -> Vector {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

/// Scale a vector.
pub fn scale(v: &[f64], s: f64) -> Vector {
    v.iter().map(|x| x * s).collect()
}

/// Solve `M x = y` by Gaussian elimination with partial pivoting.
///
/// Returns `SingularMatrix` when the best available pivot magnitude falls
/// below [`PIVOT_TOL`]. The residual satisfies
/// `||M x - y||_inf <= 1e-9 (1 + ||y||_inf)` on well-conditioned systems.
pub fn solve_linear(m: &Matrix, y: &[f64]) -> Result<Vector> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "solve_linear needs a square matrix, got {}x{}",
            m.rows, m.cols
        )));
    }
    if m.rows != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "solve_linear: matrix is {0}x{0} but rhs has length {1}",
            m.rows,
            y.len()
        )));
    }
    let n = m.rows;
    // Augmented working copy.
    let mut a = m.data.clone();
    let mut x: Vector = y.to_vec();

    for col in 0..n {
        // Partial pivoting: pick the largest magnitude in this column.
        let mut pivot_row = col;
        let mut pivot_mag = a[col * n + col].abs();
        for r in (col + 1)..n {
            let mag = a[r * n + col].abs();
            if mag > pivot_mag {
                pivot_mag = mag;
                pivot_row = r;
            }
        }
        if pivot_mag < PIVOT_TOL {
            return Err(Error::SingularMatrix { pivot: pivot_mag });
        }
        if pivot_row != col {
            for j in 0..n {
                a.swap(col * n + j, pivot_row * n + j);
            }
            x.swap(col, pivot_row);
        }
        let pivot = a[col * n + col];
        for r in (col + 1)..n {
            let factor = a[r * n + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            a[r * n + col] = 0.0;
            for j in (col + 1)..n {
                a[r * n + j] -= factor * a[col * n + j];
            }
            x[r] -= factor * x[col];
        }
    }

    // Back substitution.
    for col in (0..n).rev() {
        let mut acc = x[col];
        for j in (col + 1)..n {
            acc -= a[col * n + j] * x[j];
        }
        x[col] = acc / a[col * n + col];
    }
    Ok(x)
}

/// Invert a square matrix column by column via [`solve_linear`].
pub fn invert(m: &Matrix) -> Result<Matrix> {
    let n = m.rows;
    let mut inv = Matrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = solve_linear(m, &e)?;
        for i in 0..n {
            inv.set(i, j, col[i]);
        }
    }
    Ok(inv)
}

/// All eigenvalues of a symmetric matrix.
///
/// Closed form for dimensions <= 2; cyclic Jacobi sweeps otherwise.
pub fn sym_eigenvalues(s: &Matrix) -> Result<Vector> {
    if !s.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "sym_eigenvalues needs a square matrix, got {}x{}",
            s.rows, s.cols
        )));
    }
    let asym = s.asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let n = s.rows;
    match n {
        0 => Ok(vec![]),
        1 => Ok(vec![s.at(0, 0)]),
        2 => {
            // Closed form for [[a, b], [b, c]].
            let (a, b, c) = (s.at(0, 0), 0.5 * (s.at(0, 1) + s.at(1, 0)), s.at(1, 1));
            let mean = 0.5 * (a + c);
            let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            Ok(vec![mean - disc, mean + disc])
        }
        _ => Ok(jacobi_eigenvalues(s)),
    }
}

/// Largest eigenvalue of a symmetric matrix (absolute error <= 1e-8).
pub fn sym_max_eig(s: &Matrix) -> Result<f64> {
    let eigs = sym_eigenvalues(s)?;
    Ok(eigs.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// Spectral norm `sqrt(lambda_max(M^T M))`.
pub fn spectral_norm(m: &Matrix) -> f64 {
    let mtm = m.transpose().mul_mat(m);
    // M^T M is symmetric PSD by construction; tiny numerical asymmetry is
    // symmetrized away before the eigensolve.
    let sym = mtm.add(&mtm.transpose()).scale(0.5);
    let lmax = sym_max_eig(&sym).expect("M^T M is symmetric by construction");
    lmax.max(0.0).sqrt()
}

/// Cyclic Jacobi eigenvalue iteration for symmetric matrices of dim >= 3.
fn jacobi_eigenvalues(s: &Matrix) -> Vector {
    let n = s.rows;
    let mut a = s.data.clone();
    // Scale-aware convergence threshold on the off-diagonal Frobenius mass.
    let fro: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = (1e-14 * fro).max(1e-300);
    let max_sweeps = 100;

    for _ in 0..max_sweeps {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off += 2.0 * a[i * n + j] * a[i * n + j];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= tol / (n as f64) {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                // Classic Jacobi rotation annihilating a_pq.
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - sn * akq;
                    a[k * n + q] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - sn * aqk;
                    a[q * n + k] = sn * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn solve_identity() {
        let x = solve_linear(&Matrix::identity(2), &[3.0, -1.0]).unwrap();
        assert_eq!(x, vec![3.0, -1.0]);
    }

    #[test]
    fn solve_two_state_cycle_system() {
        let m = Matrix::from_rows(&[vec![-0.5, 0.25], vec![0.25, -0.5]]);
        let x = solve_linear(&m, &[-0.5, -0.5]).unwrap();
        assert_abs_diff_eq!(x[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn solve_singular_errors() {
        let m = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]]);
        assert!(matches!(
            solve_linear(&m, &[1.0, 1.0]),
            Err(crate::error::Error::SingularMatrix { .. })
        ));
    }

    #[test]
    fn invert_round_trip() {
        let m = Matrix::from_rows(&[vec![-0.5, 0.25], vec![0.25, -0.5]]);
        let prod = m.mul_mat(&invert(&m).unwrap());
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(prod.at(i, j), expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn sym_max_eig_diagonal() {
        let s = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, -2.0]]);
        assert_abs_diff_eq!(sym_max_eig(&s).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sym_max_eig_scaled_gram() {
        // -4 A^T A with A = [[-.5, .25], [.25, -.5]]: eigenvalues -0.25, -2.25.
        let a = Matrix::from_rows(&[vec![-0.5, 0.25], vec![0.25, -0.5]]);
        let s = a.transpose().mul_mat(&a).scale(-4.0);
        assert_abs_diff_eq!(sym_max_eig(&s).unwrap(), -0.25, epsilon = 1e-10);
    }

    #[test]
    fn sym_max_eig_zero_matrix() {
        assert_eq!(sym_max_eig(&Matrix::zeros(2, 2)).unwrap(), 0.0);
    }

    #[test]
    fn sym_eig_rejects_asymmetric() {
        let s = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]);
        assert!(matches!(
            sym_eigenvalues(&s),
            Err(crate::error::Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn sym_eig_jacobi_matches_known_spectrum() {
        // diag(1, 2, 3) conjugated stays {1, 2, 3}; use a plain symmetric 3x3
        // with known spectrum: circulant-ish [[2,1,0],[1,2,1],[0,1,2]] has
        // eigenvalues 2, 2 - sqrt(2), 2 + sqrt(2).
        let s = Matrix::from_rows(&[
            vec![2.0, 1.0, 0.0],
            vec![1.0, 2.0, 1.0],
            vec![0.0, 1.0, 2.0],
        ]);
        let mut eigs = sym_eigenvalues(&s).unwrap();
        eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_abs_diff_eq!(eigs[0], 2.0 - 2f64.sqrt(), epsilon = 1e-10);
        assert_abs_diff_eq!(eigs[1], 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(eigs[2], 2.0 + 2f64.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn spectral_norm_examples() {
        assert_abs_diff_eq!(spectral_norm(&Matrix::identity(2).scale(3.0)), 3.0, epsilon = 1e-10);
        let shift = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]);
        assert_abs_diff_eq!(spectral_norm(&shift), 1.0, epsilon = 1e-10);
        let a = Matrix::from_rows(&[vec![-0.5, 0.25], vec![0.25, -0.5]]);
        assert_abs_diff_eq!(spectral_norm(&a), 0.75, epsilon = 1e-10);
    }

    /// Random diagonally dominant system (condition number modest by
    /// construction).
    fn well_conditioned(n: usize, entries: Vec<f64>, rhs: Vec<f64>) -> (Matrix, Vector) {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            let mut row_sum = 0.0;
            for j in 0..n {
                let v = entries[i * n + j];
                m.set(i, j, v);
                row_sum += v.abs();
            }
            m.set(i, i, m.at(i, i) + row_sum + 1.0);
        }
        (m, rhs)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn solve_residual_bounded(
            entries in proptest::collection::vec(-1.0f64..1.0, 16),
            rhs in proptest::collection::vec(-10.0f64..10.0, 4),
        ) {
            let (m, y) = well_conditioned(4, entries, rhs);
            let x = solve_linear(&m, &y).unwrap();
            let back = m.mul_vec(&x);
            let resid = norm_inf(&sub(&back, &y));
            prop_assert!(resid <= 1e-9 * (1.0 + norm_inf(&y)));
        }
    }

    proptest! {
        #[test]
        fn rayleigh_quotient_lower_bounds_max_eig(
            entries in proptest::collection::vec(-1.0f64..1.0, 9),
            v in proptest::collection::vec(-1.0f64..1.0, 3),
        ) {
            let mut s = Matrix::zeros(3, 3);
            for i in 0..3 {
                for j in 0..3 {
                    let sym = 0.5 * (entries[i * 3 + j] + entries[j * 3 + i]);
                    s.set(i, j, sym);
                }
            }
            let vv = dot(&v, &v);
            prop_assume!(vv > 1e-6);
            let rayleigh = dot(&v, &s.mul_vec(&v)) / vv;
            prop_assert!(sym_max_eig(&s).unwrap() >= rayleigh - 1e-8);
        }

        #[test]
        fn spectral_norm_transpose_invariant(
            entries in proptest::collection::vec(-5.0f64..5.0, 12),
        ) {
            let mut m = Matrix::zeros(3, 4);
            for i in 0..3 {
                for j in 0..4 {
                    m.set(i, j, entries[i * 4 + j]);
                }
            }
            let d = (spectral_norm(&m) - spectral_norm(&m.transpose())).abs();
            prop_assert!(d <= 1e-8);
        }
    }
}
