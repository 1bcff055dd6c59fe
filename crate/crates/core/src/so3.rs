//! SO(3) primitives.
//!
//! Rotations are stored as 3x3 matrices. Tangent vectors are angle-axis
//! vectors `θ·v̂` and map to rotations through the Rodrigues formula.
//! Angles are extracted with `atan2(‖skew part‖, (tr − 1)/2)`, which stays
//! well conditioned at both ends of `[0, π]`.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Angles below this use Taylor expansions in exp/log.
const SMALL_ANGLE: f64 = 1e-6;

/// `log_map` refuses rotations whose angle is this close to π.
pub const NEAR_PI_MARGIN: f64 = 1e-6;

/// Tolerance used when validating matrices read from files.
const LOAD_ORTHONORMALITY_TOL: f64 = 1e-9;

/// An element of SO(3).
#[derive(Clone, Copy, PartialEq)]
pub struct Rotation {
    m: Matrix3<f64>,
}

/// An angle-axis tangent vector (radians).
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct TangentVector(pub Vector3<f64>);

/// `[v]_×`, the skew-symmetric matrix with `[v]_× u = v × u`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`] applied to the skew part of `m`.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation {
            m: Matrix3::identity(),
        }
    }

    /// Wraps a matrix the caller knows to be a rotation.
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation { m }
    }

    /// Wraps `m` after checking orthonormality and orientation.
    ///
    /// The matrix is kept bit-for-bit; callers that want a renormalized
    /// matrix should go through [`crate::numerics::project_to_so3`].
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let err = (m.transpose() * m - Matrix3::identity()).norm();
        if !err.is_finite() || err > LOAD_ORTHONORMALITY_TOL || m.determinant() <= 0.0 {
            return Err(Error::Malformed(format!(
                "matrix is not a rotation (orthonormality error {err:e})"
            )));
        }
        Ok(Rotation { m })
    }

    pub fn from_row_major(v: &[f64; 9]) -> Result<Self> {
        Self::from_matrix(Matrix3::from_row_slice(v))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                out[3 * r + c] = self.m[(r, c)];
            }
        }
        out
    }

    /// Rotation by `angle` about `axis` (normalized internally).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        exp_map(&TangentVector(axis.normalize() * angle))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn transpose(&self) -> Self {
        Rotation {
            m: self.m.transpose(),
        }
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let s = vee(&self.m).norm();
        let c = 0.5 * (self.m.trace() - 1.0);
        s.atan2(c)
    }

    /// Angle and unit axis, defined on all of SO(3).
    ///
    /// At θ = 0 the axis is returned as the zero vector. Near θ = π the axis
    /// comes from the symmetric part, with the sign taken from the skew part;
    /// at exactly π either sign is a valid answer.
    pub fn angle_axis(&self) -> (f64, Vector3<f64>) {
        let theta = self.angle();
        let skew = vee(&self.m);
        if theta < SMALL_ANGLE {
            let n = skew.norm();
            let axis = if n > 0.0 { skew / n } else { Vector3::zeros() };
            return (theta, axis);
        }
        if theta < 0.5 * PI {
            return (theta, skew / skew.norm());
        }
        // (m + mᵀ)/2 = cos θ I + (1 − cos θ) a aᵀ
        let c = theta.cos();
        let sym = 0.5 * (self.m + self.m.transpose());
        let outer = (sym - Matrix3::identity() * c) / (1.0 - c);
        let k = (0..3)
            .max_by(|&a, &b| outer[(a, a)].total_cmp(&outer[(b, b)]))
            .unwrap();
        let mut axis: Vector3<f64> = outer.column(k).into_owned();
        axis /= axis.norm();
        if axis.dot(&skew) < 0.0 {
            axis = -axis;
        }
        (theta, axis)
    }

    /// Re-orthonormalizes a matrix that has drifted through repeated products.
    pub fn renormalize(&self) -> Self {
        crate::numerics::project_to_so3(&self.m).unwrap_or(*self)
    }

    pub fn act(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.m * v
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation { m: self.m * rhs.m }
    }
}

impl Mul<&Rotation> for &Rotation {
    type Output = Rotation;
    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation { m: self.m * rhs.m }
    }
}

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Rotation({:?})", self.to_row_major())
    }
}

impl Serialize for Rotation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = <[f64; 9]>::deserialize(d)?;
        Rotation::from_row_major(&raw).map_err(serde::de::Error::custom)
    }
}

impl TangentVector {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        TangentVector(Vector3::new(x, y, z))
    }

    pub fn zero() -> Self {
        TangentVector(Vector3::zeros())
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

impl Serialize for TangentVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.0.x, self.0.y, self.0.z].serialize(s)
    }
}

impl<'de> Deserialize<'de> for TangentVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [x, y, z] = <[f64; 3]>::deserialize(d)?;
        Ok(TangentVector::new(x, y, z))
    }
}

/// Rodrigues formula `I + (sin θ/θ) K + ((1 − cos θ)/θ²) K²` with `K = [t]_×`.
pub fn exp_map(t: &TangentVector) -> Rotation {
    let theta2 = t.0.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(&t.0);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Rotation {
        m: Matrix3::identity() + k * a + k * k * b,
    }
}

/// Principal logarithm. Fails within [`NEAR_PI_MARGIN`] of π.
pub fn log_map(r: &Rotation) -> Result<TangentVector> {
    let (theta, axis) = r.angle_axis();
    if theta >= PI - NEAR_PI_MARGIN {
        return Err(Error::AngleNearPi { angle: theta });
    }
    if theta < SMALL_ANGLE {
        // vee(m) = sin θ · axis, and θ / sin θ ≈ 1 + θ²/6
        return Ok(TangentVector(vee(&r.m) * (1.0 + theta * theta / 6.0)));
    }
    Ok(TangentVector(axis * theta))
}

/// Like [`log_map`], but picks one of the two valid axes at θ ≈ π instead of failing.
pub fn log_map_lossy(r: &Rotation) -> TangentVector {
    let (theta, axis) = r.angle_axis();
    if theta < SMALL_ANGLE {
        return TangentVector(vee(&r.m) * (1.0 + theta * theta / 6.0));
    }
    TangentVector(axis * theta)
}

/// Intrinsic distance `∠(rᵀ s)`.
pub fn geodesic_distance(r: &Rotation, s: &Rotation) -> f64 {
    Rotation::from_matrix_unchecked(r.m.transpose() * s.m).angle()
}

/// Extrinsic distance `‖r − s‖_F`.
pub fn chordal_distance(r: &Rotation, s: &Rotation) -> f64 {
    (r.m - s.m).norm()
}

/// Haar-uniform rotation from a normalized Gaussian quaternion.
pub fn random_uniform<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    loop {
        let q: [f64; 4] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n2: f64 = q.iter().map(|x| x * x).sum();
        if n2 < 1e-20 {
            continue;
        }
        let uq = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
        return Rotation {
            m: uq.to_rotation_matrix().into_inner(),
        };
    }
}

/// Tangent vector with i.i.d. `N(0, sigma²)` coordinates.
pub fn random_tangent_gaussian<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> TangentVector {
    let x: f64 = rng.sample(StandardNormal);
    let y: f64 = rng.sample(StandardNormal);
    let z: f64 = rng.sample(StandardNormal);
    TangentVector::new(sigma * x, sigma * y, sigma * z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_6};

    fn orthonormality_error(r: &Rotation) -> f64 {
        (r.matrix().transpose() * r.matrix() - Matrix3::identity()).norm()
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(exp_map(&TangentVector::zero()), Rotation::identity());
    }

    #[test]
    fn exp_quarter_turn_about_x_maps_y_to_z() {
        let r = exp_map(&TangentVector::new(FRAC_PI_2, 0.0, 0.0));
        let y = r.act(&Vector3::y());
        assert!((y - Vector3::z()).norm() < 1e-15);
    }

    #[test]
    fn log_of_identity_and_quarter_turn() {
        assert_eq!(log_map(&Rotation::identity()).unwrap().0, Vector3::zeros());
        let rz = Rotation::from_matrix(Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0))
            .unwrap();
        let v = log_map(&rz).unwrap().0;
        assert!((v - Vector3::new(0.0, 0.0, FRAC_PI_2)).norm() < 1e-15);
    }

    #[test]
    fn log_near_pi_is_an_error() {
        let r = exp_map(&TangentVector::new(0.0, PI - 1e-8, 0.0));
        assert!(matches!(log_map(&r), Err(Error::AngleNearPi { .. })));
        // the lossy variant still returns an axis-consistent vector
        let v = log_map_lossy(&r);
        assert!((v.norm() - (PI - 1e-8)).abs() < 1e-7);
        assert!(v.0.y.abs() > 3.0);
    }

    #[test]
    fn exp_log_round_trip_random() {
        let mut rng = rng_from_seed(11);
        for _ in 0..1000 {
            let dir = random_tangent_gaussian(1.0, &mut rng).0.normalize();
            let theta: f64 = rng.random_range(0.0..(PI - 1e-3));
            let t = TangentVector(dir * theta);
            let r = exp_map(&t);
            assert!(orthonormality_error(&r) < 1e-12);
            assert!((r.matrix().determinant() - 1.0).abs() < 1e-12);
            let back = log_map(&r).unwrap();
            assert!((back.0 - t.0).norm() < 1e-10, "{t:?} -> {back:?}");
        }
    }

    #[test]
    fn tiny_angle_round_trip() {
        for &s in &[0.0, 1e-12, 1e-9, 3e-7, 2e-6] {
            let t = TangentVector::new(s, -0.5 * s, 0.25 * s);
            let back = log_map(&exp_map(&t)).unwrap();
            assert!((back.0 - t.0).norm() <= 1e-15 + 1e-9 * s);
        }
    }

    #[test]
    fn log_norm_matches_trace_angle_oracle() {
        let mut rng = rng_from_seed(5);
        for _ in 0..500 {
            let r = random_uniform(&mut rng);
            if r.angle() > PI - 1e-3 {
                continue;
            }
            let oracle = ((r.matrix().trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
            let v = log_map(&r).unwrap();
            assert!((v.norm() - oracle).abs() < 1e-7);
            assert!((v.norm() - geodesic_distance(&Rotation::identity(), &r)).abs() < 1e-12);
        }
    }

    #[test]
    fn geodesic_examples() {
        let mut rng = rng_from_seed(2);
        let r = random_uniform(&mut rng);
        assert_eq!(geodesic_distance(&r, &r), 0.0);
        let axis = random_tangent_gaussian(1.0, &mut rng).0;
        let s = Rotation::from_axis_angle(&axis, FRAC_PI_6);
        assert!((geodesic_distance(&Rotation::identity(), &s) - FRAC_PI_6).abs() < 1e-15);
    }

    #[test]
    fn chordal_examples() {
        let r = Rotation::from_axis_angle(&Vector3::x(), PI);
        assert!((chordal_distance(&Rotation::identity(), &r) - 2.0 * 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(chordal_distance(&r, &r), 0.0);
    }

    #[test]
    fn metric_properties_on_random_rotations() {
        let mut rng = rng_from_seed(3);
        for _ in 0..1000 {
            let r = random_uniform(&mut rng);
            let s = random_uniform(&mut rng);
            let q = random_uniform(&mut rng);
            let d = geodesic_distance(&r, &s);
            assert!((0.0..=PI).contains(&d));
            assert!((d - geodesic_distance(&s, &r)).abs() < 1e-12);
            assert!((geodesic_distance(&(q * r), &(q * s)) - d).abs() < 1e-10);
            assert!((geodesic_distance(&(r * q), &(s * q)) - d).abs() < 1e-10);
            let tri = geodesic_distance(&r, &q) + geodesic_distance(&q, &s);
            assert!(d <= tri + 1e-10);
            let chord = chordal_distance(&r, &s);
            assert!((chord - 2.0 * 2f64.sqrt() * (d / 2.0).sin()).abs() < 1e-10);
        }
    }

    #[test]
    fn haar_angle_mean_matches_density() {
        // density (1 − cos θ)/π on [0, π] has mean π/2 + 2/π
        let expected = FRAC_PI_2 + 2.0 / PI;
        let mut rng = rng_from_seed(17);
        let n = 100_000;
        let mut mean_angle = 0.0;
        let mut mean_m = Matrix3::zeros();
        for _ in 0..n {
            let r = random_uniform(&mut rng);
            assert!(orthonormality_error(&r) < 1e-12);
            mean_angle += r.angle();
            mean_m += r.matrix();
        }
        mean_angle /= n as f64;
        mean_m /= n as f64;
        assert!((mean_angle - expected).abs() < 0.01, "{mean_angle}");
        assert!(mean_m.amax() < 0.02, "{mean_m}");
    }

    #[test]
    fn tangent_gaussian_moments() {
        let mut rng = rng_from_seed(23);
        assert_eq!(random_tangent_gaussian(0.0, &mut rng).0, Vector3::zeros());
        let n = 100_000;
        let sigma = 0.1;
        let mut sq = Vector3::zeros();
        let mut norm_mean = 0.0;
        for _ in 0..n {
            let v = random_tangent_gaussian(sigma, &mut rng).0;
            sq += v.component_mul(&v);
            norm_mean += v.norm();
        }
        sq /= n as f64;
        norm_mean /= n as f64;
        for k in 0..3 {
            assert!((sq[k] - 0.01).abs() < 0.0005, "{}", sq[k]);
        }
        // chi(3) mean is 2·sqrt(2/π)
        let chi3 = 2.0 * (2.0 / PI).sqrt() * sigma;
        assert!((norm_mean - chi3).abs() < 0.01 * chi3);
    }

    #[test]
    fn serde_uses_row_major_arrays() {
        let r = Rotation::from_axis_angle(&Vector3::new(1.0, 2.0, 3.0), 0.7);
        let s = serde_json::to_string(&r).unwrap();
        let raw: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(raw.len(), 9);
        assert_eq!(raw[1], r.matrix()[(0, 1)]);
        let back: Rotation = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
        let t = TangentVector::new(0.1, 0.2, 0.3);
        assert_eq!(serde_json::to_string(&t).unwrap(), "[0.1,0.2,0.3]");
        assert!(serde_json::from_str::<Rotation>("[1,0,0,0,1,0,0,0,2]").is_err());
    }
}
