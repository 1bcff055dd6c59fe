//! Local-convexity certificates at a given solution.
//!
//! Three tests, from exact to coarse:
//!
//! 1. the smallest eigenvalue of the Hessian restricted to the horizontal
//!    space (positive ⇒ locally convex on the quotient);
//! 2. the normalized-Laplacian bound: with per-edge isotropic weights
//!    `α_ij` and residual degrees `D_ii = Σ_j (p/2) θ_ij^{p−1}`, the Hessian
//!    dominates `(L(α) − D) ⊗ I₃`, so `xᵀ L(α) x > xᵀ D x` for every
//!    `x ⊥ 1_n` suffices;
//! 3. the separated bound `λ₂(L) > max_i D_ii / min α_ij`.
//!
//! Each later test implies the earlier ones.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cost::{hessian_of, residuals, Residual, THETA_MIN};
use crate::error::{Error, Result};
use crate::gauge::vertical_basis;
use crate::graphmodel::{algebraic_connectivity, laplacian, Solution, ViewGraph};
use crate::numerics::{orthonormal_complement, sym_eig};

fn check_p(p: f64) -> Result<()> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::InvalidParam(format!(
            "certification requires p > 1 (got {p})"
        )));
    }
    Ok(())
}

/// `(p/2) θ^{p−1}`, the skew-block scale and residual-degree contribution.
pub fn degree_weight(theta: f64, p: f64) -> f64 {
    0.5 * p * theta.powf(p - 1.0)
}

/// Isotropic lower bound on the symmetric edge block, `S_ij ⪰ α_ij I₃`.
///
/// `α = min((p/2) θ^{p−1}, p(p−1) θ^{p−2} − (p/2) θ^{p−1})`, additionally
/// capped by the exact across-axis eigenvalue `(p/2) θ^{p−1} cot(θ/2)` of
/// `S_ij`. The cap only binds for `p > 2.57` with residuals beyond π/2.
pub fn alpha(res: &Residual, p: f64) -> Result<f64> {
    let theta = res.theta;
    if p < 2.0 && theta < THETA_MIN {
        return Err(Error::NearZeroResidual {
            i: res.i,
            j: res.j,
            theta,
        });
    }
    let half = degree_weight(theta, p);
    let radial = p * (p - 1.0) * theta.powf(p - 2.0);
    let isotropic = half.min(radial - half);
    let across = half / (0.5 * theta).tan();
    Ok(if theta > 0.0 { isotropic.min(across) } else { isotropic })
}

/// Smallest eigenvalue of `Bᵀ H B` for an orthonormal horizontal basis `B`.
pub fn exact_projected_test(vg: &ViewGraph, sol: &Solution, p: f64) -> Result<f64> {
    check_p(p)?;
    let res = residuals(vg, sol)?;
    exact_from_residuals(vg.n(), &res, p)
}

fn exact_from_residuals(n: usize, res: &[Residual], p: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidParam("a single vertex has no horizontal space".into()));
    }
    let h = hessian_of(n, res, p)?.into_inner();
    let b = vertical_basis(n).horizontal_basis();
    let reduced = b.transpose() * h * &b;
    Ok(sym_eig(&reduced)?.min())
}

/// Second route to the exact test: spectrum of `P H P` with the three
/// eigenpairs that live in the vertical space discarded.
pub fn exact_projected_test_via_projector(vg: &ViewGraph, sol: &Solution, p: f64) -> Result<f64> {
    check_p(p)?;
    let n = vg.n();
    if n < 2 {
        return Err(Error::InvalidParam("a single vertex has no horizontal space".into()));
    }
    let h = hessian_of(n, &residuals(vg, sol)?, p)?.into_inner();
    let gauge = vertical_basis(n);
    let eig = sym_eig(&gauge.project_matrix(&h))?;
    let mut by_vertical: Vec<(usize, f64)> = (0..eig.len())
        .map(|k| {
            let v = eig.vectors.column(k);
            let w: f64 = gauge.vertical.iter().map(|u| u.dot(&v).powi(2)).sum();
            (k, w)
        })
        .collect();
    by_vertical.sort_by(|a, b| b.1.total_cmp(&a.1));
    let dropped: Vec<usize> = by_vertical.iter().take(3).map(|&(k, _)| k).collect();
    Ok((0..eig.len())
        .filter(|k| !dropped.contains(k))
        .map(|k| eig.values[k])
        .fold(f64::INFINITY, f64::min))
}

/// Per-edge inputs shared by the two Laplacian bounds.
#[derive(Clone, Debug)]
struct BoundTerms {
    n: usize,
    edges: Vec<(usize, usize)>,
    alpha: Vec<f64>,
    degree: DVector<f64>,
}

fn bound_terms(n: usize, res: &[Residual], p: f64) -> Result<BoundTerms> {
    let mut degree = DVector::zeros(n);
    let mut alphas = Vec::with_capacity(res.len());
    for r in res {
        alphas.push(alpha(r, p)?);
        let d = degree_weight(r.theta, p);
        degree[r.i] += d;
        degree[r.j] += d;
    }
    Ok(BoundTerms {
        n,
        edges: res.iter().map(|r| (r.i, r.j)).collect(),
        alpha: alphas,
        degree,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LnormBound {
    /// `min_{x ⊥ 1_n} xᵀ L(α) x / xᵀ D x`; the verdict quantity.
    pub min: f64,
    pub pass: bool,
    /// Rayleigh minimum of `D^{-1/2} L(α) D^{-1/2}` over `y ⊥ 1_n`. Equals
    /// `min` when `D` is a multiple of the identity; diagnostic only.
    pub min_unit_complement: f64,
}

pub fn lnorm_bound(vg: &ViewGraph, sol: &Solution, p: f64) -> Result<LnormBound> {
    check_p(p)?;
    let res = residuals(vg, sol)?;
    lnorm_from_terms(&bound_terms(vg.n(), &res, p)?)
}

fn lnorm_from_terms(t: &BoundTerms) -> Result<LnormBound> {
    let n = t.n;
    if n < 2 {
        return Err(Error::InvalidParam("a single vertex has no horizontal space".into()));
    }
    if let Some(vertex) = (0..n).find(|&i| t.degree[i] < 1e-15) {
        return Err(Error::DegenerateDegree { vertex });
    }
    let l = laplacian(n, &t.edges, Some(&t.alpha));
    let ones = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let b = orthonormal_complement(n, &[ones]);

    // x = B z:  zᵀ(BᵀLB)z / zᵀ(BᵀDB)z, reduced with the Cholesky factor of BᵀDB
    let d = DMatrix::from_diagonal(&t.degree);
    let k = b.transpose() * &l * &b;
    let c = b.transpose() * &d * &b;
    let chol = c.cholesky().ok_or(Error::EigenFailure {
        residual: f64::INFINITY,
    })?;
    let g = chol.l();
    let g_inv = g
        .clone()
        .try_inverse()
        .ok_or(Error::EigenFailure { residual: f64::INFINITY })?;
    let reduced = &g_inv * k * g_inv.transpose();
    let min = sym_eig(&reduced)?.min();

    let d_inv_sqrt = DMatrix::from_diagonal(&t.degree.map(|x| 1.0 / x.sqrt()));
    let l_norm = &d_inv_sqrt * &l * &d_inv_sqrt;
    let min_unit_complement = sym_eig(&(b.transpose() * l_norm * &b))?.min();

    Ok(LnormBound {
        min,
        pass: min > 1.0,
        min_unit_complement,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparatedBound {
    /// `λ₂` of the unweighted graph Laplacian.
    pub lhs: f64,
    /// `max_i D_ii / min α`.
    pub rhs: f64,
    pub pass: bool,
    pub alpha_min: f64,
    pub max_weighted_degree: f64,
    /// `λ₂(L(α)) / min α`, the weighted reading of the left side. Diagnostic only.
    pub weighted_lhs: f64,
}

pub fn separated_bound(vg: &ViewGraph, sol: &Solution, p: f64) -> Result<SeparatedBound> {
    check_p(p)?;
    let res = residuals(vg, sol)?;
    separated_from_terms(&bound_terms(vg.n(), &res, p)?)
}

fn separated_from_terms(t: &BoundTerms) -> Result<SeparatedBound> {
    let alpha_min = t.alpha.iter().copied().fold(f64::INFINITY, f64::min);
    if !(alpha_min > 0.0) {
        return Err(Error::AlphaNonpositive { alpha_min });
    }
    let max_weighted_degree = t.degree.max();
    let lhs = algebraic_connectivity(&laplacian(t.n, &t.edges, None))?;
    let weighted_lhs = algebraic_connectivity(&laplacian(t.n, &t.edges, Some(&t.alpha)))? / alpha_min;
    let rhs = max_weighted_degree / alpha_min;
    Ok(SeparatedBound {
        lhs,
        rhs,
        pass: lhs > rhs,
        alpha_min,
        max_weighted_degree,
        weighted_lhs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeTerm {
    pub i: usize,
    pub j: usize,
    pub theta: f64,
    pub alpha: Option<f64>,
}

/// All three tests at one solution. Failures are recorded per test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub p: f64,
    pub exact_min_eig: Option<f64>,
    pub exact_error: Option<String>,
    pub lnorm_min: Option<f64>,
    pub lnorm_pass: bool,
    pub lnorm_min_unit_complement: Option<f64>,
    pub lnorm_error: Option<String>,
    pub separated_lhs: Option<f64>,
    pub separated_rhs: Option<f64>,
    pub separated_pass: bool,
    pub separated_weighted_lhs: Option<f64>,
    pub separated_error: Option<String>,
    pub alpha_min: Option<f64>,
    pub max_weighted_degree: Option<f64>,
    pub edges: Vec<EdgeTerm>,
}

impl ConvexityReport {
    /// True when the exact test found positive curvature.
    pub fn exact_pass(&self) -> bool {
        self.exact_min_eig.is_some_and(|v| v > 0.0)
    }

    /// `separated ⇒ lnorm ⇒ exact`.
    pub fn implication_chain_holds(&self) -> bool {
        (!self.separated_pass || self.lnorm_pass) && (!self.lnorm_pass || self.exact_pass())
    }

    pub fn verdict_lines(&self) -> Vec<String> {
        let word = |b: bool| if b { "PASS" } else { "FAIL" };
        let exact = match (self.exact_min_eig, &self.exact_error) {
            (Some(v), _) => format!("exact:     {}  min horizontal eigenvalue = {v:.6e}", word(v > 0.0)),
            (None, Some(e)) => format!("exact:     ERROR  {e}"),
            _ => "exact:     ERROR".to_string(),
        };
        let lnorm = match (self.lnorm_min, &self.lnorm_error) {
            (Some(v), _) => format!("lnorm:     {}  min Rayleigh quotient = {v:.6} (needs > 1)", word(self.lnorm_pass)),
            (None, Some(e)) => format!("lnorm:     N/A  {e}"),
            _ => "lnorm:     N/A".to_string(),
        };
        let sep = match (self.separated_lhs, self.separated_rhs, &self.separated_error) {
            (Some(l), Some(r), _) => format!(
                "separated: {}  lambda2 = {l:.6}, residual term = {r:.6}",
                word(self.separated_pass)
            ),
            (_, _, Some(e)) => format!("separated: N/A  {e}"),
            _ => "separated: N/A".to_string(),
        };
        vec![exact, lnorm, sep]
    }
}

pub fn certify(vg: &ViewGraph, sol: &Solution, p: f64) -> Result<ConvexityReport> {
    check_p(p)?;
    let res = residuals(vg, sol)?;
    let n = vg.n();
    let mut report = ConvexityReport {
        p,
        exact_min_eig: None,
        exact_error: None,
        lnorm_min: None,
        lnorm_pass: false,
        lnorm_min_unit_complement: None,
        lnorm_error: None,
        separated_lhs: None,
        separated_rhs: None,
        separated_pass: false,
        separated_weighted_lhs: None,
        separated_error: None,
        alpha_min: None,
        max_weighted_degree: None,
        edges: res
            .iter()
            .map(|r| EdgeTerm {
                i: r.i,
                j: r.j,
                theta: r.theta,
                alpha: alpha(r, p).ok(),
            })
            .collect(),
    };

    match exact_from_residuals(n, &res, p) {
        Ok(v) => report.exact_min_eig = Some(v),
        Err(e) => report.exact_error = Some(e.to_string()),
    }

    match bound_terms(n, &res, p) {
        Ok(terms) => {
            report.max_weighted_degree = Some(terms.degree.max());
            report.alpha_min = Some(terms.alpha.iter().copied().fold(f64::INFINITY, f64::min));
            match lnorm_from_terms(&terms) {
                Ok(b) => {
                    report.lnorm_min = Some(b.min);
                    report.lnorm_pass = b.pass;
                    report.lnorm_min_unit_complement = Some(b.min_unit_complement);
                }
                Err(e) => report.lnorm_error = Some(e.to_string()),
            }
            match separated_from_terms(&terms) {
                Ok(b) => {
                    report.separated_lhs = Some(b.lhs);
                    report.separated_rhs = Some(b.rhs);
                    report.separated_pass = b.pass;
                    report.separated_weighted_lhs = Some(b.weighted_lhs);
                }
                Err(e) => report.separated_error = Some(e.to_string()),
            }
        }
        Err(e) => {
            report.lnorm_error = Some(e.to_string());
            report.separated_error = Some(e.to_string());
        }
    }
    Ok(report)
}

/// View graph whose residuals at the identity solution are prescribed:
/// edge `(i, j)` gets measurement `exp(θ_ij w_ij)`.
pub fn graph_with_residuals(
    n: usize,
    edges: &[(usize, usize)],
    residual: impl Fn(usize) -> nalgebra::Vector3<f64>,
) -> Result<ViewGraph> {
    use crate::graphmodel::Edge;
    use crate::so3::{exp_map, TangentVector};
    ViewGraph::new(
        n,
        edges
            .iter()
            .enumerate()
            .map(|(k, &(i, j))| Edge {
                i,
                j,
                measurement: exp_map(&TangentVector(residual(k))),
            })
            .collect(),
    )
}
