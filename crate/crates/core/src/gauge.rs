//! Gauge symmetry `R_i ↦ R_i S`: vertical and horizontal spaces, alignment
//! of two solutions and the quotient distance.
//!
//! In vertex-major coordinates the vertical space is spanned by
//! `u_k = (1_n ⊗ e_k)/√n`; the same basis serves every point of SO(3)^n.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::graphmodel::Solution;
use crate::numerics::{orthonormal_complement, project_to_so3};
use crate::so3::{exp_map, geodesic_distance, log_map_lossy, Rotation, TangentVector};

/// Karcher iterations stop once the update is this small.
const KARCHER_STEP_TOL: f64 = 1e-12;
const KARCHER_MAX_ITERS: usize = 100;
/// Alignments whose first-order residual exceeds this are flagged.
pub const KARCHER_RESIDUAL_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct GaugeBasis {
    pub n: usize,
    pub vertical: [DVector<f64>; 3],
    /// `P = I − Σ u_k u_kᵀ`.
    pub horizontal_projector: DMatrix<f64>,
}

pub fn vertical_basis(n: usize) -> GaugeBasis {
    assert!(n >= 1, "gauge basis needs at least one vertex");
    let scale = 1.0 / (n as f64).sqrt();
    let vertical: [DVector<f64>; 3] = std::array::from_fn(|k| {
        DVector::from_fn(3 * n, |r, _| if r % 3 == k { scale } else { 0.0 })
    });
    let mut p = DMatrix::identity(3 * n, 3 * n);
    for u in &vertical {
        p -= u * u.transpose();
    }
    GaugeBasis {
        n,
        vertical,
        horizontal_projector: p,
    }
}

impl GaugeBasis {
    /// `P g`, computed without forming `P`.
    pub fn project_vector(&self, g: &DVector<f64>) -> DVector<f64> {
        let mut out = g.clone();
        for u in &self.vertical {
            let c = u.dot(g);
            out.axpy(-c, u, 1.0);
        }
        out
    }

    /// `P M P`.
    pub fn project_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let p = &self.horizontal_projector;
        p * m * p
    }

    /// Orthonormal `3n × (3n − 3)` basis of the horizontal space.
    pub fn horizontal_basis(&self) -> DMatrix<f64> {
        orthonormal_complement(3 * self.n, &self.vertical)
    }
}

pub fn project_horizontal(g: &DVector<f64>, basis: &GaugeBasis) -> DVector<f64> {
    basis.project_vector(g)
}

pub fn project_horizontal_matrix(m: &DMatrix<f64>, basis: &GaugeBasis) -> DMatrix<f64> {
    basis.project_matrix(m)
}

/// Result of aligning `b` onto `a` over the gauge group.
#[derive(Clone, Debug)]
pub struct Alignment {
    /// Minimizer of `Σ d(a_i, b_i S)²`.
    pub rotation: Rotation,
    pub aligned: Solution,
    /// `‖mean_i log(Sᵀ Q_i)‖` with `Q_i = b_iᵀ a_i`; zero at a Karcher mean.
    pub karcher_residual: f64,
    /// Set when the mean iteration did not settle (antipodal spread).
    pub ambiguous: bool,
}

/// Finds the gauge rotation that brings `b` closest to `a`.
///
/// `d(a_i, b_i S) = d(Q_i, S)` with `Q_i = b_iᵀ a_i`, so the optimal `S` is
/// the intrinsic mean of the `Q_i`. It is initialized at the polar factor of
/// `Σ Q_i` and refined by tangent-space averaging. When the `Q_i` do not all
/// lie within π/2 of the result the mean need not be unique, so the
/// iteration is repeated from a few of the `Q_i` and the best point is kept.
pub fn align(a: &Solution, b: &Solution) -> Result<Alignment> {
    b.check_len(a.len())?;
    if a.is_empty() {
        return Err(Error::InvalidParam("cannot align empty solutions".into()));
    }
    let q: Vec<Rotation> = a
        .rotations
        .iter()
        .zip(&b.rotations)
        .map(|(ai, bi)| bi.transpose() * *ai)
        .collect();
    let sum: Matrix3<f64> = q.iter().map(|r| *r.matrix()).sum();
    let start = project_to_so3(&sum).unwrap_or(q[0]);
    let mut best = karcher_mean(&q, start);
    let spread = q.iter().map(|qi| geodesic_distance(qi, &best.0)).fold(0.0, f64::max);
    if spread >= std::f64::consts::FRAC_PI_2 {
        // restarts drawn from the Q_i themselves, so that the result moves
        // with the inputs under a change of gauge
        for start in restart_points(&q, &best.0) {
            let cand = karcher_mean(&q, start);
            if cand.1 < best.1 {
                best = cand;
            }
        }
    }
    // the identity is the product-distance alignment; never do worse than it
    let at_identity: f64 = q.iter().map(|qi| qi.angle().powi(2)).sum();
    if at_identity < best.1 {
        let cand = karcher_mean(&q, Rotation::identity());
        if cand.1 < best.1 {
            best = cand;
        }
    }
    let (s, _, karcher_residual, contracted) = best;
    Ok(Alignment {
        rotation: s,
        aligned: b.right_mul(&s),
        karcher_residual,
        ambiguous: !contracted && karcher_residual > KARCHER_RESIDUAL_TOL,
    })
}

/// The medoid of `q` and the two members farthest from `current`.
fn restart_points(q: &[Rotation], current: &Rotation) -> Vec<Rotation> {
    let sq_sum = |s: &Rotation| q.iter().map(|qi| geodesic_distance(qi, s).powi(2)).sum::<f64>();
    let medoid = q
        .iter()
        .map(|s| (sq_sum(s), s))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, s)| *s);
    let mut far: Vec<(f64, &Rotation)> = q.iter().map(|qi| (geodesic_distance(qi, current), qi)).collect();
    far.sort_by(|a, b| b.0.total_cmp(&a.0));
    medoid.into_iter().chain(far.into_iter().take(2).map(|(_, s)| *s)).collect()
}

/// Fixed-point iteration for the intrinsic mean from `s`. Returns the
/// point, its objective `Σ d(Q_i, S)²`, the final update norm and whether
/// the update fell below tolerance.
fn karcher_mean(q: &[Rotation], mut s: Rotation) -> (Rotation, f64, f64, bool) {
    let mean_log = |s: &Rotation| -> Vector3<f64> {
        let st = s.transpose();
        let total: Vector3<f64> = q.iter().map(|qi| log_map_lossy(&(st * *qi)).0).sum();
        total / q.len() as f64
    };
    let mut step = mean_log(&s);
    let mut contracted = step.norm() < KARCHER_STEP_TOL;
    if !contracted {
        for _ in 0..KARCHER_MAX_ITERS {
            s = (s * exp_map(&TangentVector(step))).renormalize();
            let next = mean_log(&s);
            let done = next.norm() < KARCHER_STEP_TOL || step.norm() < KARCHER_STEP_TOL;
            step = next;
            if done {
                contracted = true;
                break;
            }
        }
    }
    let objective = q.iter().map(|qi| geodesic_distance(qi, &s).powi(2)).sum();
    (s, objective, step.norm(), contracted)
}

/// Root-sum-square of per-vertex geodesic distances.
pub fn product_distance(a: &Solution, b: &Solution) -> Result<f64> {
    b.check_len(a.len())?;
    Ok(a.rotations
        .iter()
        .zip(&b.rotations)
        .map(|(x, y)| geodesic_distance(x, y).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Product distance after the chordal (polar) gauge alignment; an upper
/// bound on the quotient distance that costs one 3×3 SVD.
pub fn chordal_aligned_distance(a: &Solution, b: &Solution) -> Result<f64> {
    b.check_len(a.len())?;
    let sum: Matrix3<f64> = a
        .rotations
        .iter()
        .zip(&b.rotations)
        .map(|(ai, bi)| *(bi.transpose() * *ai).matrix())
        .sum();
    match project_to_so3(&sum) {
        Ok(s) => product_distance(a, &b.right_mul(&s)),
        Err(_) => Ok(f64::INFINITY),
    }
}

/// `min_S √(Σ d(a_i, b_i S)²)`, together with the alignment used.
///
/// Exact whenever the per-vertex offsets `b_iᵀ a_i` are concentrated (all
/// within π/2 of their mean). For widely spread offsets the minimization is
/// multimodal and the value is the best of several local solutions, so it
/// is an upper bound that never exceeds the product distance.
pub fn quotient_distance_with(a: &Solution, b: &Solution) -> Result<(f64, Alignment)> {
    let al = align(a, b)?;
    let d = product_distance(a, &al.aligned)?;
    Ok((d, al))
}

pub fn quotient_distance(a: &Solution, b: &Solution) -> Result<f64> {
    Ok(quotient_distance_with(a, b)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;
    use crate::so3::{random_tangent_gaussian, random_uniform};
    use crate::numerics::sym_eig;
    use rand::Rng;

    #[test]
    fn basis_shapes() {
        let b1 = vertical_basis(1);
        assert!(b1.horizontal_projector.amax() < 1e-15);
        assert_eq!(b1.horizontal_basis().ncols(), 0);
        let b2 = vertical_basis(2);
        let rank = sym_eig(&b2.horizontal_projector)
            .unwrap()
            .values
            .iter()
            .filter(|v| (**v - 1.0).abs() < 1e-9)
            .count();
        assert_eq!(rank, 3);
    }

    #[test]
    fn projector_is_idempotent_and_kills_vertical() {
        for n in [3, 7, 40] {
            let b = vertical_basis(n);
            let p = &b.horizontal_projector;
            assert!((p * p - p).amax() < 1e-12);
            for u in &b.vertical {
                assert!((p * u).norm() < 1e-12);
                assert!(b.project_vector(u).norm() < 1e-12);
            }
            let h = b.horizontal_basis();
            assert_eq!(h.ncols(), 3 * n - 3);
            assert!((h.transpose() * &h - DMatrix::identity(3 * n - 3, 3 * n - 3)).amax() < 1e-12);
            let x = h.column(0).into_owned();
            assert!((b.project_vector(&x) - &x).norm() < 1e-12);
        }
    }

    #[test]
    fn projected_random_matrix_has_three_zero_modes() {
        let mut rng = rng_from_seed(1);
        let n = 6;
        let a = DMatrix::from_fn(3 * n, 3 * n, |_, _| rng.random_range(-1.0..1.0));
        let m = &a + a.transpose();
        let b = vertical_basis(n);
        let e = sym_eig(&b.project_matrix(&m)).unwrap();
        let zeros = e.values.iter().filter(|v| v.abs() < 1e-9).count();
        assert!(zeros >= 3);
    }

    #[test]
    fn align_recovers_exact_gauge() {
        let mut rng = rng_from_seed(2);
        let a = Solution::random(12, &mut rng);
        let s0 = random_uniform(&mut rng);
        let b = a.right_mul(&s0);
        let al = align(&a, &b).unwrap();
        // b S = a  ⇒  S = s0ᵀ
        assert!((al.rotation.matrix() - s0.transpose().matrix()).norm() < 1e-9);
        assert!(quotient_distance(&a, &b).unwrap() < 1e-8);
        let same = align(&a, &a).unwrap();
        assert!((same.rotation.matrix() - Matrix3::identity()).norm() < 1e-12);
    }

    #[test]
    fn alignment_beats_random_candidates() {
        let mut rng = rng_from_seed(3);
        let a = Solution::random(8, &mut rng);
        // b is a noisy gauge copy so the optimum is well defined
        let s0 = random_uniform(&mut rng);
        let b = Solution::new(
            a.right_mul(&s0)
                .rotations
                .iter()
                .map(|r| *r * exp_map(&random_tangent_gaussian(0.4, &mut rng)))
                .collect(),
        );
        let al = align(&a, &b).unwrap();
        assert!(!al.ambiguous);
        assert!(al.karcher_residual < 1e-9);
        let objective = |s: &Rotation| -> f64 {
            a.rotations
                .iter()
                .zip(&b.rotations)
                .map(|(x, y)| geodesic_distance(x, &(*y * *s)).powi(2))
                .sum()
        };
        let best = objective(&al.rotation);
        for _ in 0..10_000 {
            let c = random_uniform(&mut rng);
            assert!(best <= objective(&c) + 1e-12);
        }
    }

    #[test]
    fn quotient_distance_properties() {
        let mut rng = rng_from_seed(4);
        for _ in 0..100 {
            let a = Solution::random(6, &mut rng);
            let b = Solution::random(6, &mut rng);
            let dab = quotient_distance(&a, &b).unwrap();
            let dba = quotient_distance(&b, &a).unwrap();
            assert!((dab - dba).abs() < 1e-8, "{dab} {dba}");
            assert!(dab <= product_distance(&a, &b).unwrap() + 1e-12);
            let sa = random_uniform(&mut rng);
            let sb = random_uniform(&mut rng);
            let moved = quotient_distance(&a.right_mul(&sa), &b.right_mul(&sb)).unwrap();
            assert!((moved - dab).abs() < 1e-8, "{moved} {dab}");
        }
    }

    #[test]
    fn single_vertex_perturbation_is_bounded() {
        let mut rng = rng_from_seed(5);
        let a = Solution::random(40, &mut rng);
        let mut b = a.clone();
        b.rotations[7] = b.rotations[7] * Rotation::from_axis_angle(&Vector3::new(1.0, 1.0, 0.0), 0.1);
        let d = quotient_distance(&a, &b).unwrap();
        assert!(d <= 0.1 + 1e-12);
        assert!(d > 0.09);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let a = Solution::identity(3);
        let b = Solution::identity(4);
        assert!(matches!(align(&a, &b), Err(Error::SizeMismatch { .. })));
    }
}
