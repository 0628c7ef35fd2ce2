//! ADMM, over-relaxed ADMM, and the gradient-descent / conjugate-gradient
//! baselines, all emitting per-iteration error traces against a reference
//! solution.
//!
//! The ADMM family caches the two regularized inversions once per run, since
//! the penalty is fixed across iterations.

use std::time::Instant;

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lqp::LQProblem;
use crate::operators::Field;
use crate::ridge::Ridge;
use crate::spectral;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Admm,
    Oadmm,
    Gd,
    GdN,
    GdNr,
    Cg,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Admm => "admm",
            Method::Oadmm => "oadmm",
            Method::Gd => "gd",
            Method::GdN => "gd-n",
            Method::GdNr => "gd-nr",
            Method::Cg => "cg",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Ok(match s {
            "admm" => Method::Admm,
            "oadmm" => Method::Oadmm,
            "gd" => Method::Gd,
            "gd-n" => Method::GdN,
            "gd-nr" => Method::GdNr,
            "cg" => Method::Cg,
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "unknown method '{s}' (expected admm, oadmm, gd, gd-n, gd-nr or cg)"
                )))
            }
        })
    }
}

#[derive(Debug, Clone)]
pub struct SolverParams {
    pub method: Method,
    /// ADMM-family penalty.
    pub theta: f64,
    /// Over-relaxation parameter (oadmm only).
    pub alpha: f64,
    /// Gradient-family step; `None` means 1/Lipschitz.
    pub step: Option<f64>,
    pub max_iters: usize,
    /// Stop when ||u' - u|| <= tol*(1 + ||u||).
    pub tol: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            method: Method::Admm,
            theta: 1.0,
            alpha: 1.0,
            step: None,
            max_iters: 5000,
            tol: 1e-10,
        }
    }
}

impl SolverParams {
    pub fn admm(theta: f64) -> Self {
        SolverParams {
            method: Method::Admm,
            theta,
            ..SolverParams::default()
        }
    }

    pub fn oadmm(theta: f64, alpha: f64) -> Self {
        SolverParams {
            method: Method::Oadmm,
            theta,
            alpha,
            ..SolverParams::default()
        }
    }

    pub fn baseline(method: Method) -> Self {
        SolverParams {
            method,
            ..SolverParams::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        match self.method {
            Method::Admm | Method::Oadmm => {
                if !(self.theta > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "theta must be positive, got {}",
                        self.theta
                    )));
                }
                if self.method == Method::Oadmm && !(self.alpha > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "alpha must be positive, got {}",
                        self.alpha
                    )));
                }
            }
            Method::Gd | Method::GdN | Method::GdNr => {
                if let Some(s) = self.step {
                    if !(s > 0.0) {
                        return Err(Error::InvalidParameter(format!(
                            "step must be positive, got {s}"
                        )));
                    }
                }
            }
            Method::Cg => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Tol,
    MaxIters,
}

#[derive(Debug, Clone)]
pub struct ConvergenceTrace {
    /// ||u^k - u*|| per iterate, k = 0 included.
    pub iterates_error: Vec<f64>,
    /// Objective value per iterate.
    pub objective: Vec<f64>,
    pub wall_time_per_iter: f64,
    pub stop_reason: StopReason,
}

impl ConvergenceTrace {
    /// First iteration index with error below eps times the initial error.
    pub fn iterations_to_relative(&self, eps: f64) -> Option<usize> {
        let e0 = *self.iterates_error.first()?;
        self.iterates_error.iter().position(|&e| e <= eps * e0)
    }
}

/// Solve with the ground truth computed internally.
pub fn solve(
    problem: &LQProblem,
    params: &SolverParams,
    u0: &DVector<Complex64>,
    b0: &DVector<Complex64>,
) -> Result<(DVector<Complex64>, ConvergenceTrace)> {
    let gt = problem.ground_truth()?;
    solve_with_reference(problem, params, u0, b0, &gt.u_star)
}

/// Solve against a precomputed reference solution for the error trace.
pub fn solve_with_reference(
    problem: &LQProblem,
    params: &SolverParams,
    u0: &DVector<Complex64>,
    b0: &DVector<Complex64>,
    u_star: &DVector<Complex64>,
) -> Result<(DVector<Complex64>, ConvergenceTrace)> {
    params.validate()?;
    let n = problem.n();
    for (name, v) in [("u0", u0), ("b0", b0), ("u_star", u_star)] {
        if v.len() != n {
            let _ = name;
            return Err(Error::dim("solver input", n, v.len()));
        }
    }
    match params.method {
        Method::Admm | Method::Oadmm => run_admm(problem, params, u0, b0, u_star),
        Method::Gd | Method::GdN | Method::GdNr => run_gradient(problem, params, u0, u_star),
        Method::Cg => run_cg(problem, params, u0, u_star),
    }
}

fn scale(v: &DVector<Complex64>, s: f64) -> DVector<Complex64> {
    v * Complex64::new(s, 0.0)
}

fn run_admm(
    problem: &LQProblem,
    params: &SolverParams,
    u0: &DVector<Complex64>,
    b0: &DVector<Complex64>,
    u_star: &DVector<Complex64>,
) -> Result<(DVector<Complex64>, ConvergenceTrace)> {
    let theta = params.theta;
    let alpha = if params.method == Method::Oadmm {
        params.alpha
    } else {
        1.0
    };
    let ridge_l = Ridge::build(&problem.l, 1.0, theta)?;
    let ridge_a = Ridge::build(&problem.a, problem.mu, theta)?;
    let atf = problem.normal_rhs()?;
    let mut u = u0.clone();
    let mut b = b0.clone();
    let mut errors = vec![(&u - u_star).norm()];
    let mut objectives = vec![problem.objective(&u)?];
    let mut stop = StopReason::MaxIters;
    let start = Instant::now();
    let mut iters = 0;
    for _ in 0..params.max_iters {
        iters += 1;
        let w = ridge_l.solve(&scale(&(&u + &b), theta));
        // Relaxation: alpha = 1 leaves w untouched.
        let w_hat = if alpha == 1.0 {
            w
        } else {
            scale(&w, alpha) + scale(&u, 1.0 - alpha)
        };
        let u_next = ridge_a.solve(&(scale(&(&w_hat - &b), theta) + &atf));
        b = &b + &u_next - &w_hat;
        let delta = (&u_next - &u).norm();
        let u_norm = u.norm();
        u = u_next;
        errors.push((&u - u_star).norm());
        objectives.push(problem.objective(&u)?);
        if delta <= params.tol * (1.0 + u_norm) {
            stop = StopReason::Tol;
            break;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    Ok((
        u,
        ConvergenceTrace {
            iterates_error: errors,
            objective: objectives,
            wall_time_per_iter: elapsed / iters as f64,
            stop_reason: stop,
        },
    ))
}

fn run_gradient(
    problem: &LQProblem,
    params: &SolverParams,
    u0: &DVector<Complex64>,
    u_star: &DVector<Complex64>,
) -> Result<(DVector<Complex64>, ConvergenceTrace)> {
    let step = match params.step {
        Some(s) => s,
        None => lipschitz_step(problem)?,
    };
    let rhs = problem.normal_rhs()?;
    let grad = |u: &DVector<Complex64>| -> Result<DVector<Complex64>> {
        Ok(problem.normal_apply(u)? - &rhs)
    };
    let momentum = matches!(params.method, Method::GdN | Method::GdNr);
    let restart = params.method == Method::GdNr;
    let mut u = u0.clone();
    let mut u_prev = u0.clone();
    let mut obj = problem.objective(&u)?;
    let mut errors = vec![(&u - u_star).norm()];
    let mut objectives = vec![obj];
    let mut stop = StopReason::MaxIters;
    let mut k: usize = 0;
    let start = Instant::now();
    let mut iters = 0;
    for _ in 0..params.max_iters {
        iters += 1;
        let y = if momentum && k >= 1 {
            let beta = (k as f64 - 1.0) / (k as f64 + 2.0);
            &u + scale(&(&u - &u_prev), beta)
        } else {
            u.clone()
        };
        let u_next = &y - scale(&grad(&y)?, step);
        let obj_next = problem.objective(&u_next)?;
        if restart && obj_next > obj {
            // Function-value restart: drop the momentum history.
            k = 0;
        } else {
            k += 1;
        }
        let delta = (&u_next - &u).norm();
        let u_norm = u.norm();
        u_prev = std::mem::replace(&mut u, u_next);
        obj = obj_next;
        errors.push((&u - u_star).norm());
        objectives.push(obj);
        if delta <= params.tol * (1.0 + u_norm) {
            stop = StopReason::Tol;
            break;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    Ok((
        u,
        ConvergenceTrace {
            iterates_error: errors,
            objective: objectives,
            wall_time_per_iter: elapsed / iters as f64,
            stop_reason: stop,
        },
    ))
}

fn run_cg(
    problem: &LQProblem,
    params: &SolverParams,
    u0: &DVector<Complex64>,
    u_star: &DVector<Complex64>,
) -> Result<(DVector<Complex64>, ConvergenceTrace)> {
    let rhs = problem.normal_rhs()?;
    let mut u = u0.clone();
    let mut r = &rhs - problem.normal_apply(&u)?;
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    let mut errors = vec![(&u - u_star).norm()];
    let mut objectives = vec![problem.objective(&u)?];
    let mut stop = StopReason::MaxIters;
    let start = Instant::now();
    let mut iters = 0;
    for _ in 0..params.max_iters {
        iters += 1;
        let ap = problem.normal_apply(&p)?;
        let pap = p.dotc(&ap).re;
        if pap < -1e-10 * p.norm_squared() {
            return Err(Error::IndefiniteSystem(format!(
                "negative curvature in the normal equation: p^H N p = {pap}"
            )));
        }
        if pap <= 0.0 {
            stop = StopReason::Tol;
            break;
        }
        let step = rr / pap;
        let u_next = &u + scale(&p, step);
        r -= scale(&ap, step);
        let rr_new = r.norm_squared();
        let delta = (&u_next - &u).norm();
        let u_norm = u.norm();
        u = u_next;
        errors.push((&u - u_star).norm());
        objectives.push(problem.objective(&u)?);
        if delta <= params.tol * (1.0 + u_norm) {
            stop = StopReason::Tol;
            break;
        }
        p = &r + scale(&p, rr_new / rr);
        rr = rr_new;
    }
    let elapsed = start.elapsed().as_secs_f64();
    Ok((
        u,
        ConvergenceTrace {
            iterates_error: errors,
            objective: objectives,
            wall_time_per_iter: elapsed / iters as f64,
            stop_reason: stop,
        },
    ))
}

/// 1/lambda_max(mu*AᴴA + LᴴL), the safe gradient step.
pub fn lipschitz_step(problem: &LQProblem) -> Result<f64> {
    let lmax = if let Some(js) = problem.joint_symbols() {
        js.s_a
            .iter()
            .zip(js.s_l.iter())
            .map(|(&s, &g)| problem.mu * s + g)
            .fold(f64::NEG_INFINITY, f64::max)
    } else if problem.n() <= 512 && problem.field() == Field::Real {
        let a = problem.a.materialize_real()?;
        let l = problem.l.materialize_real()?;
        let normal = a.transpose() * &a * problem.mu + l.transpose() * &l;
        normal
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    } else {
        spectral::power_dominant(problem.n(), |v| problem.normal_apply(v))?
    };
    if !(lmax > 0.0) {
        return Err(Error::DegenerateSpectrum(format!(
            "nonpositive normal-matrix top eigenvalue {lmax}"
        )));
    }
    Ok(1.0 / lmax)
}
