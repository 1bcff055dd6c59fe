//! Dense linear algebra shared by the certificate, the solver and the atlas.

use nalgebra::{DMatrix, DVector, Matrix3};

use crate::error::{Error, Result};
use crate::so3::Rotation;

/// Relative residual allowed in `‖M v − λ v‖ ≤ tol · ‖M‖`.
pub const EIGEN_RESIDUAL_TOL: f64 = 1e-8;

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct SymEig {
    pub values: DVector<f64>,
    /// Column `k` is the unit eigenvector of `values[k]`.
    pub vectors: DMatrix<f64>,
}

impl SymEig {
    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Symmetric eigendecomposition with a residual check on every pair.
///
/// The input is symmetrized first. Ties are ordered by the position the
/// underlying solver returned them in, so the output is deterministic.
pub fn sym_eig(m: &DMatrix<f64>) -> Result<SymEig> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::SizeMismatch {
            expected: n,
            actual: m.ncols(),
        });
    }
    if n == 0 {
        return Ok(SymEig {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        });
    }
    let sym = (m + m.transpose()) * 0.5;
    if sym.iter().any(|x| !x.is_finite()) {
        return Err(Error::EigenFailure {
            residual: f64::INFINITY,
        });
    }
    let eig = sym.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }

    let scale = sym.norm().max(f64::MIN_POSITIVE);
    let mut worst = 0.0f64;
    for k in 0..n {
        let v = vectors.column(k);
        let r = (&sym * v - v * values[k]).norm();
        worst = worst.max(r);
    }
    if worst > EIGEN_RESIDUAL_TOL * scale {
        return Err(Error::EigenFailure {
            residual: worst / scale,
        });
    }
    Ok(SymEig { values, vectors })
}

/// Nearest rotation in Frobenius norm (orthogonal polar factor with a
/// determinant fix on the weakest singular direction).
pub fn project_to_so3(m: &Matrix3<f64>) -> Result<Rotation> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Degenerate);
    }
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Degenerate),
    };
    let s = svd.singular_values;
    let smin = s.min();
    if smin <= 1e-12 {
        return Err(Error::Degenerate);
    }
    let mut correction = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        let weakest = s.imin();
        correction[(weakest, weakest)] = -1.0;
    }
    Ok(Rotation::from_matrix_unchecked(u * correction * v_t))
}

/// Orthonormal basis of the complement of the span of `against` (assumed
/// orthonormal), built by Gram-Schmidt over the standard basis in order.
///
/// Standard basis vectors whose remainder is numerically zero are skipped,
/// which makes the result reproducible bit for bit.
pub fn orthonormal_complement(dim: usize, against: &[DVector<f64>]) -> DMatrix<f64> {
    let target = dim - against.len();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(target);
    for k in 0..dim {
        if basis.len() == target {
            break;
        }
        let mut v = DVector::zeros(dim);
        v[k] = 1.0;
        // two passes for numerical orthogonality
        for _ in 0..2 {
            for u in against.iter().chain(basis.iter()) {
                let c = u.dot(&v);
                v.axpy(-c, u, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            basis.push(v / norm);
        }
    }
    if basis.is_empty() {
        return DMatrix::zeros(dim, 0);
    }
    DMatrix::from_columns(&basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;
    use crate::so3::random_uniform;
    use rand::Rng;

    #[test]
    fn diagonal_is_sorted() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 2.0]));
        let e = sym_eig(&m).unwrap();
        assert_eq!(e.values.as_slice(), &[1.0, 2.0, 3.0]);
        assert_eq!(e.vectors[(1, 0)].abs(), 1.0);
    }

    #[test]
    fn cycle_laplacian_spectrum() {
        let n = 5;
        let mut l = DMatrix::zeros(n, n);
        for i in 0..n {
            let j = (i + 1) % n;
            l[(i, i)] += 1.0;
            l[(j, j)] += 1.0;
            l[(i, j)] -= 1.0;
            l[(j, i)] -= 1.0;
        }
        let e = sym_eig(&l).unwrap();
        // circulant closed form 2 − 2cos(2πk/5)
        let mut expected: Vec<f64> = (0..n)
            .map(|k| 2.0 - 2.0 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos())
            .collect();
        expected.sort_by(f64::total_cmp);
        for (a, b) in e.values.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!((e.values[1] - 1.381966011250105).abs() < 1e-9);
    }

    #[test]
    fn large_random_reconstruction() {
        let mut rng = rng_from_seed(9);
        let n = 120;
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let m = &a + a.transpose();
        let e = sym_eig(&m).unwrap();
        let recon = &e.vectors * DMatrix::from_diagonal(&e.values) * e.vectors.transpose();
        assert!((recon - &m).norm() < 1e-8 * m.norm());
        let gram = e.vectors.transpose() * &e.vectors;
        assert!((gram - DMatrix::identity(n, n)).norm() < 1e-10);
    }

    #[test]
    fn psd_spectrum_is_nonnegative() {
        let mut rng = rng_from_seed(10);
        let a = DMatrix::from_fn(30, 10, |_, _| rng.random_range(-1.0..1.0));
        let m = &a * a.transpose();
        assert!(sym_eig(&m).unwrap().min() > -1e-9);
    }

    #[test]
    fn polar_projection_fixed_points() {
        let mut rng = rng_from_seed(4);
        let r = random_uniform(&mut rng);
        let p = project_to_so3(r.matrix()).unwrap();
        assert!((p.matrix() - r.matrix()).norm() < 1e-12);
        let p2 = project_to_so3(&(r.matrix() * 2.0)).unwrap();
        assert!((p2.matrix() - r.matrix()).norm() < 1e-12);
        assert_eq!(project_to_so3(&Matrix3::zeros()), Err(Error::Degenerate));
    }

    #[test]
    fn polar_projection_beats_random_candidates() {
        let mut rng = rng_from_seed(8);
        for _ in 0..5 {
            let m = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let best = project_to_so3(&m).unwrap();
            let best_err = (m - best.matrix()).norm();
            for _ in 0..10_000 {
                let c = random_uniform(&mut rng);
                assert!(best_err <= (m - c.matrix()).norm() + 1e-12);
            }
        }
    }

    #[test]
    fn complement_is_orthonormal() {
        let n = 7;
        let u = DVector::from_element(n, 1.0 / (n as f64).sqrt());
        let b = orthonormal_complement(n, std::slice::from_ref(&u));
        assert_eq!(b.ncols(), n - 1);
        assert!((b.transpose() * &b - DMatrix::identity(n - 1, n - 1)).norm() < 1e-12);
        assert!((b.transpose() * u).norm() < 1e-12);
    }
}
