//! The l_p geodesic cost, its Riemannian gradient and exact Hessian.
//!
//! Tangent coordinates are vertex-major: entries `3i..3i+3` perturb vertex
//! `i` as `R_i ↦ R_i exp([x_i]_×)`. Under that convention the residual
//! `E_ij = R_iᵀ R̃_ij R_j` moves to `exp(−[x_i]_×) E_ij exp([x_j]_×)`, and
//! with `E_ij = exp([θ w]_×)` each edge contributes
//!
//! * gradient `−p θ^{p−1} w` on `i` and `+p θ^{p−1} w` on `j`;
//! * Hessian blocks `S` on both diagonal slots, `−S + Aᵀ` at `(i, j)` and
//!   `−S + A` at `(j, i)`, where
//!   `S = p(p−1) θ^{p−2} w wᵀ + (p/2) θ^{p−1} cot(θ/2) (I − w wᵀ)` and
//!   `A = (p/2) θ^{p−1} [w]_×`.
//!
//! The `cot(θ/2)` factor is the curvature of the geodesic distance across
//! the radial direction; dropping it leaves a matrix that does not match
//! finite differences of the cost.

use std::io::Write;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::graphmodel::{Solution, ViewGraph};
use crate::so3::{exp_map, hat, TangentVector};

/// Residual angles below this are treated as zero.
pub const THETA_MIN: f64 = 1e-8;

/// Angle and axis of `R_iᵀ R̃_ij R_j` on one edge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Residual {
    pub i: usize,
    pub j: usize,
    pub theta: f64,
    /// Unit axis, or zero when `theta == 0`.
    pub axis: Vector3<f64>,
}

/// Dense symmetric `3n × 3n` Hessian in vertex-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct HessianMatrix(pub DMatrix<f64>);

impl HessianMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Writes the matrix as comma-separated rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for row in self.0.row_iter() {
            let line: Vec<String> = row.iter().map(|x| format!("{x:e}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::InvalidParam(format!("exponent p = {p} must be >= 1")));
    }
    Ok(())
}

pub fn residuals(vg: &ViewGraph, sol: &Solution) -> Result<Vec<Residual>> {
    sol.check_len(vg.n())?;
    Ok(vg
        .edges()
        .iter()
        .map(|e| {
            let r = sol.rotations[e.i].transpose() * e.measurement * sol.rotations[e.j];
            let (theta, axis) = r.angle_axis();
            Residual {
                i: e.i,
                j: e.j,
                theta,
                axis,
            }
        })
        .collect())
}

/// `φ_p = Σ θ_ij^p`.
pub fn cost(vg: &ViewGraph, sol: &Solution, p: f64) -> Result<f64> {
    check_p(p)?;
    Ok(cost_of(&residuals(vg, sol)?, p))
}

pub(crate) fn cost_of(res: &[Residual], p: f64) -> f64 {
    res.iter().map(|r| r.theta.powf(p)).sum()
}

/// Riemannian gradient (vertex-major, length `3n`).
///
/// For `p > 1` the per-edge term `p θ^{p−1} w` tends to zero with θ, so
/// zero-residual edges simply contribute nothing.
pub fn gradient(vg: &ViewGraph, sol: &Solution, p: f64) -> Result<DVector<f64>> {
    check_p(p)?;
    if p == 1.0 {
        return Err(Error::InvalidParam("gradient requires p > 1".into()));
    }
    Ok(gradient_of(vg.n(), &residuals(vg, sol)?, p))
}

pub(crate) fn gradient_of(n: usize, res: &[Residual], p: f64) -> DVector<f64> {
    let mut g = DVector::zeros(3 * n);
    for r in res {
        if r.theta < THETA_MIN {
            continue;
        }
        let v = r.axis * (p * r.theta.powf(p - 1.0));
        for k in 0..3 {
            g[3 * r.i + k] -= v[k];
            g[3 * r.j + k] += v[k];
        }
    }
    g
}

/// `θ cot(θ/2)`, with its series near zero.
fn theta_cot_half(theta: f64) -> f64 {
    if theta < 1e-4 {
        2.0 - theta * theta / 6.0
    } else {
        theta / (theta / 2.0).tan()
    }
}

/// The symmetric block `S` and skew block `A` of one edge.
///
/// Below [`THETA_MIN`] the blocks take their limits: `S = 2I, A = 0` for
/// `p = 2` and zero for `p > 2`. For `p < 2` the Hessian blows up and
/// the edge is reported as [`Error::NearZeroResidual`].
pub fn edge_blocks(res: &Residual, p: f64) -> Result<(Matrix3<f64>, Matrix3<f64>)> {
    let theta = res.theta;
    if theta < THETA_MIN {
        return if p < 2.0 {
            Err(Error::NearZeroResidual {
                i: res.i,
                j: res.j,
                theta,
            })
        } else if p == 2.0 {
            Ok((Matrix3::identity() * 2.0, Matrix3::zeros()))
        } else {
            Ok((Matrix3::zeros(), Matrix3::zeros()))
        };
    }
    let w = res.axis;
    let wwt = w * w.transpose();
    let radial = p * (p - 1.0) * theta.powf(p - 2.0);
    // (p/2) θ^{p−1} cot(θ/2) = (p/2) θ^{p−2} · θ cot(θ/2)
    let across = 0.5 * p * theta.powf(p - 2.0) * theta_cot_half(theta);
    let s = wwt * radial + (Matrix3::identity() - wwt) * across;
    let a = hat(&w) * (0.5 * p * theta.powf(p - 1.0));
    Ok((s, a))
}

/// Exact Riemannian Hessian of `φ_p`.
pub fn hessian(vg: &ViewGraph, sol: &Solution, p: f64) -> Result<HessianMatrix> {
    check_p(p)?;
    if p == 1.0 {
        return Err(Error::InvalidParam("Hessian requires p > 1".into()));
    }
    hessian_of(vg.n(), &residuals(vg, sol)?, p)
}

pub(crate) fn hessian_of(n: usize, res: &[Residual], p: f64) -> Result<HessianMatrix> {
    let mut h = DMatrix::zeros(3 * n, 3 * n);
    for r in res {
        let (s, a) = edge_blocks(r, p)?;
        let (i, j) = (3 * r.i, 3 * r.j);
        let off_ij = -s + a.transpose();
        let off_ji = -s + a;
        for x in 0..3 {
            for y in 0..3 {
                h[(i + x, i + y)] += s[(x, y)];
                h[(j + x, j + y)] += s[(x, y)];
                h[(i + x, j + y)] += off_ij[(x, y)];
                h[(j + x, i + y)] += off_ji[(x, y)];
            }
        }
    }
    Ok(HessianMatrix(h))
}

/// Gauss-Newton approximation of the Hessian.
///
/// Writes the cost as `Σ ‖θ^{p/2} w‖²` and keeps only first-order terms of
/// the residual vectors. Each edge contributes the positive semidefinite
/// blocks `G` on both diagonals and `−G E`, `−G Eᵀ` off the diagonal, with
/// `E = exp(θ w)` and `G = 2θ^{p−2}((p²/4) wwᵀ + s²(I − wwᵀ))`,
/// `s = (θ/2)/sin(θ/2)`.
pub fn gauss_newton(vg: &ViewGraph, sol: &Solution, p: f64) -> Result<HessianMatrix> {
    check_p(p)?;
    if p == 1.0 {
        return Err(Error::InvalidParam("Gauss-Newton model requires p > 1".into()));
    }
    gauss_newton_of(vg.n(), &residuals(vg, sol)?, p)
}

pub(crate) fn gauss_newton_of(n: usize, res: &[Residual], p: f64) -> Result<HessianMatrix> {
    let mut h = DMatrix::zeros(3 * n, 3 * n);
    for r in res {
        let theta = r.theta;
        let (g, e) = if theta < THETA_MIN {
            if p < 2.0 {
                return Err(Error::NearZeroResidual {
                    i: r.i,
                    j: r.j,
                    theta,
                });
            }
            let scale = if p == 2.0 { 2.0 } else { 0.0 };
            (Matrix3::identity() * scale, Matrix3::identity())
        } else {
            let w = r.axis;
            let wwt = w * w.transpose();
            let half = 0.5 * theta;
            let s = if half < 1e-4 { 1.0 + half * half / 6.0 } else { half / half.sin() };
            let g = (wwt * (0.25 * p * p) + (Matrix3::identity() - wwt) * (s * s))
                * (2.0 * theta.powf(p - 2.0));
            let e = *exp_map(&TangentVector(w * theta)).matrix();
            (g, e)
        };
        let off_ij = -g * e;
        let off_ji = -g * e.transpose();
        let (i, j) = (3 * r.i, 3 * r.j);
        for x in 0..3 {
            for y in 0..3 {
                h[(i + x, i + y)] += g[(x, y)];
                h[(j + x, j + y)] += g[(x, y)];
                h[(i + x, j + y)] += off_ij[(x, y)];
                h[(j + x, i + y)] += off_ji[(x, y)];
            }
        }
    }
    Ok(HessianMatrix(h))
}
