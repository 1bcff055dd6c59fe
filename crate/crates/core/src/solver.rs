//! Damped Newton (Levenberg-Marquardt) on the horizontal space and the
//! random-restart campaign built on top of it.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{cost_of, gauss_newton_of, gradient_of, hessian_of, residuals};
use crate::error::{Error, Result};
use crate::gauge::{vertical_basis, GaugeBasis};
use crate::graphmodel::{Solution, ViewGraph};
use crate::rng_for_stream;

/// Slack allowed when comparing the cost of a trial step to the current cost.
pub const DESCENT_SLACK: f64 = 1e-13;
/// Accepted steps must realize this fraction of the model decrease.
const MIN_GAIN_RATIO: f64 = 1e-3;
/// Damping beyond which the solver gives up on finding a descent step.
const LAMBDA_MAX: f64 = 1e14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub p: f64,
    pub max_iters: usize,
    /// Stop once the ∞-norm of the horizontal gradient falls below this.
    pub grad_tol: f64,
    /// Stop once an accepted step is shorter than this (Euclidean norm).
    pub step_tol: f64,
    pub lm_lambda_init: f64,
    pub lm_lambda_up: f64,
    pub lm_lambda_down: f64,
    /// Seeds the initial guesses of a campaign.
    pub seed: u64,
    pub model: CurvatureModel,
}

/// Curvature matrix used in the damped Newton system.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurvatureModel {
    /// The exact Riemannian Hessian.
    #[default]
    Exact,
    /// The Gauss-Newton matrix of the residual vectors `θ^{p/2} w`.
    GaussNewton,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            p: 2.0,
            max_iters: 200,
            grad_tol: 1e-8,
            step_tol: 1e-10,
            lm_lambda_init: 1e-4,
            lm_lambda_up: 10.0,
            lm_lambda_down: 0.5,
            seed: 0,
            model: CurvatureModel::Exact,
        }
    }
}

impl SolveOptions {
    pub fn with_p(p: f64) -> Self {
        SolveOptions {
            p,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParam(what.to_string()));
        if !(self.p > 1.0) || !self.p.is_finite() {
            return bad("solver requires p > 1");
        }
        if !(self.grad_tol > 0.0) || !(self.step_tol > 0.0) || !(self.lm_lambda_init > 0.0) {
            return bad("tolerances and initial damping must be positive");
        }
        if !(self.lm_lambda_up > 1.0) || !(self.lm_lambda_down > 0.0 && self.lm_lambda_down < 1.0) {
            return bad("damping factors must satisfy up > 1 and 0 < down < 1");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTolerance,
    StepTolerance,
    MaxIterations,
    /// No descent step found even under heavy damping.
    Stalled,
    /// The Hessian blew up on a vanishing residual (p < 2).
    NearZeroResidual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub solution: Solution,
    pub final_cost: f64,
    pub converged: bool,
    pub iters: usize,
    /// ∞-norm of the horizontal gradient at the returned solution.
    pub final_grad_norm: f64,
    pub stop_reason: StopReason,
}

struct Evaluation {
    cost: f64,
    grad: DVector<f64>,
    grad_inf: f64,
}

fn evaluate(vg: &ViewGraph, sol: &Solution, p: f64, gauge: &GaugeBasis) -> Result<Evaluation> {
    let res = residuals(vg, sol)?;
    let grad = gauge.project_vector(&gradient_of(vg.n(), &res, p));
    Ok(Evaluation {
        cost: cost_of(&res, p),
        grad_inf: grad.amax(),
        grad,
    })
}

/// Minimizes the l_p cost from `init`.
///
/// Each iteration solves `(P H P + λ I) δ = −P g`, where `P` projects onto
/// the horizontal space, and retracts per vertex. A failed Cholesky
/// factorization or a cost increase raises `λ`; an accepted step lowers it.
pub fn solve_local(vg: &ViewGraph, init: &Solution, opts: &SolveOptions) -> Result<SolveResult> {
    opts.validate()?;
    init.check_len(vg.n())?;
    let n = vg.n();
    let p = opts.p;
    let gauge = vertical_basis(n);

    let mut sol = init.clone();
    let mut cur = evaluate(vg, &sol, p, &gauge)?;
    let mut lambda = opts.lm_lambda_init;
    let mut iters = 0;
    let mut stop = StopReason::MaxIterations;

    'outer: while iters < opts.max_iters {
        if cur.grad_inf < opts.grad_tol {
            stop = StopReason::GradientTolerance;
            break;
        }
        iters += 1;
        let res = residuals(vg, &sol)?;
        let curvature = match opts.model {
            CurvatureModel::Exact => hessian_of(n, &res, p),
            CurvatureModel::GaussNewton => gauss_newton_of(n, &res, p),
        };
        let hess = match curvature {
            Ok(h) => gauge.project_matrix(&h.into_inner()),
            Err(Error::NearZeroResidual { .. }) => {
                stop = StopReason::NearZeroResidual;
                break;
            }
            Err(e) => return Err(e),
        };
        let rhs = -&cur.grad;

        // inner loop: raise damping until a descent step is found
        loop {
            if lambda > LAMBDA_MAX {
                stop = StopReason::Stalled;
                break 'outer;
            }
            let m = &hess + DMatrix::identity(3 * n, 3 * n) * lambda;
            let Some(chol) = m.cholesky() else {
                lambda *= opts.lm_lambda_up;
                continue;
            };
            let step = gauge.project_vector(&chol.solve(&rhs));
            let trial = sol.retract(&step);
            let next = evaluate(vg, &trial, p, &gauge)?;
            // decrease promised by the undamped quadratic model
            let predicted = -(cur.grad.dot(&step) + 0.5 * step.dot(&(&hess * &step)));
            let accept = if predicted > DESCENT_SLACK {
                cur.cost - next.cost >= MIN_GAIN_RATIO * predicted
            } else {
                next.cost <= cur.cost + DESCENT_SLACK
            };
            if accept {
                let step_norm = step.norm();
                sol = trial;
                cur = next;
                lambda = (lambda * opts.lm_lambda_down).max(f64::MIN_POSITIVE);
                if step_norm < opts.step_tol {
                    stop = StopReason::StepTolerance;
                    break 'outer;
                }
                break;
            }
            lambda *= opts.lm_lambda_up;
        }
    }
    if stop == StopReason::MaxIterations && cur.grad_inf < opts.grad_tol {
        stop = StopReason::GradientTolerance;
    }

    let converged = matches!(stop, StopReason::GradientTolerance | StopReason::StepTolerance);
    Ok(SolveResult {
        solution: sol,
        final_cost: cur.cost,
        converged,
        iters,
        final_grad_norm: cur.grad_inf,
        stop_reason: stop,
    })
}

/// `n_runs` solves from independent Haar-uniform starts.
///
/// Run `k` draws its start from the stream `(opts.seed, k)`, so the result
/// list does not depend on scheduling.
pub fn random_restart_campaign(
    vg: &ViewGraph,
    opts: &SolveOptions,
    n_runs: usize,
) -> Result<Vec<SolveResult>> {
    if n_runs == 0 {
        return Err(Error::InvalidParam("campaign needs at least one run".into()));
    }
    opts.validate()?;
    (0..n_runs)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_for_stream(opts.seed, k as u64);
            let init = Solution::random(vg.n(), &mut rng);
            solve_local(vg, &init, opts)
        })
        .collect()
}

/// One line of the campaign log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignRecord {
    pub run_index: usize,
    pub cost: f64,
    pub converged: bool,
    pub iters: usize,
    /// `<sidecar file name>#<line index>`.
    pub solution_ref: String,
}

/// Writes one JSON record per run to `log_path` and the matching solutions,
/// one per line, to `sidecar_path`.
pub fn write_campaign(log_path: &Path, sidecar_path: &Path, results: &[SolveResult]) -> Result<()> {
    let sidecar_name = sidecar_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut log = BufWriter::new(File::create(log_path)?);
    let mut side = BufWriter::new(File::create(sidecar_path)?);
    for (k, r) in results.iter().enumerate() {
        let rec = CampaignRecord {
            run_index: k,
            cost: r.final_cost,
            converged: r.converged,
            iters: r.iters,
            solution_ref: format!("{sidecar_name}#{k}"),
        };
        serde_json::to_writer(&mut log, &rec)?;
        log.write_all(b"\n")?;
        serde_json::to_writer(&mut side, &r.solution)?;
        side.write_all(b"\n")?;
    }
    log.flush()?;
    side.flush()?;
    Ok(())
}

pub fn read_campaign(log_path: &Path, sidecar_path: &Path) -> Result<Vec<(CampaignRecord, Solution)>> {
    let records: Vec<CampaignRecord> = read_lines(log_path)?;
    let solutions: Vec<Solution> = read_lines(sidecar_path)?;
    if records.len() != solutions.len() {
        return Err(Error::SizeMismatch {
            expected: records.len(),
            actual: solutions.len(),
        });
    }
    Ok(records.into_iter().zip(solutions).collect())
}

fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
