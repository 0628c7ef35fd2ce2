//! Penalty and relaxation parameter selection.
//!
//! Two spectral objectives are minimized over theta: the largest eigenvalue
//! of Q (plain ADMM) and the joint objective (l1 - ln)/(l1 + ln), which is
//! the radius of I + alpha*Q at the closed-form alpha = -2/(l1 + ln). A
//! finite-difference gradient descent with backtracking and log-spaced
//! multistart handles the general case; deblurring and subsampled-Fourier
//! problems additionally get closed forms.

use crate::error::{Error, Result};
use crate::lqp::LQProblem;
use crate::spectral::{build_iteration_operator, extremal_eigenvalues, preferred_mode};

/// Lower projection bound keeping theta strictly positive.
pub const THETA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct TunerConfig {
    /// Initial trial step of each backtracking line search.
    pub step_size: f64,
    /// Central finite-difference half-width.
    pub fd_step: f64,
    pub max_iters: usize,
    /// Stop when the finite-difference gradient falls below this.
    pub grad_tol: f64,
    pub theta_init: f64,
    /// Number of log-spaced starting points (0 or 1 means a single start).
    pub multistart_count: usize,
}

impl Default for TunerConfig {
    fn default() -> Self {
        TunerConfig {
            step_size: 0.1,
            fd_step: 1e-4,
            max_iters: 200,
            grad_tol: 1e-6,
            theta_init: 1.0,
            multistart_count: 3,
        }
    }
}

impl TunerConfig {
    /// Defaults centered on sqrt(mu), the natural penalty scale.
    pub fn for_mu(mu: f64) -> Self {
        let theta_init = mu.sqrt().max(THETA_FLOOR);
        TunerConfig {
            step_size: theta_init / 10.0,
            theta_init,
            ..TunerConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.fd_step > 0.0 && self.grad_tol > 0.0) {
            return Err(Error::InvalidParameter(
                "tuner steps and tolerance must be positive".into(),
            ));
        }
        if !(self.theta_init > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "theta_init must be positive, got {}",
                self.theta_init
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    /// Minimize the largest eigenvalue of Q (plain ADMM rate).
    LambdaN,
    /// Minimize the relaxed radius (l1 - ln)/(l1 + ln).
    Joint,
}

#[derive(Debug, Clone)]
pub struct TunerResult {
    pub theta_star: f64,
    /// Present for the joint objective: the closed-form relaxation parameter
    /// at theta_star.
    pub alpha_star: Option<f64>,
    pub objective_at_optimum: f64,
    /// Accepted (theta, objective) iterates of the winning start.
    pub history: Vec<(f64, f64)>,
    pub converged: bool,
}

/// Partition extremes of the regularizer spectrum over sampled and unsampled
/// Fourier positions: a = min, c = max over sampled; b = min, d = max over
/// unsampled (zero modes excluded there, since they carry no error).
#[derive(Debug, Clone, Copy)]
pub struct MriConstants {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

fn extremes(problem: &LQProblem, theta: f64) -> Result<(f64, f64)> {
    let it = build_iteration_operator(problem, theta, 1.0, preferred_mode(problem))?;
    let s = extremal_eigenvalues(&it)?;
    Ok((s.lambda_1, s.lambda_n))
}

/// Largest eigenvalue of Q(theta); in [-1, 0].
pub fn lambda_n_objective(problem: &LQProblem, theta: f64) -> Result<f64> {
    Ok(extremes(problem, theta)?.1)
}

/// (l1 - ln)/(l1 + ln), the radius of I + alpha*Q at the closed-form alpha.
pub fn joint_objective(problem: &LQProblem, theta: f64) -> Result<f64> {
    let (l1, ln) = extremes(problem, theta)?;
    if l1 + ln >= 0.0 {
        return Err(Error::DegenerateSpectrum(format!(
            "joint objective undefined: lambda_1 + lambda_n = {}",
            l1 + ln
        )));
    }
    Ok((l1 - ln) / (l1 + ln))
}

fn objective_value(problem: &LQProblem, kind: ObjectiveKind, theta: f64) -> Result<f64> {
    match kind {
        ObjectiveKind::LambdaN => lambda_n_objective(problem, theta),
        ObjectiveKind::Joint => joint_objective(problem, theta),
    }
}

/// Closed-form relaxation parameter -2/(l1 + ln) equalizing the two ends of
/// the spectrum of I + alpha*Q.
pub fn optimal_alpha(lambda_1: f64, lambda_n: f64) -> Result<f64> {
    if lambda_1 + lambda_n >= 0.0 {
        return Err(Error::Domain(format!(
            "optimal alpha undefined for lambda_1 + lambda_n = {}",
            lambda_1 + lambda_n
        )));
    }
    Ok(-2.0 / (lambda_1 + lambda_n))
}

/// Finite-difference gradient descent on the chosen spectral objective with
/// backtracking line search and log-spaced multistart.
pub fn tune_theta(
    problem: &LQProblem,
    kind: ObjectiveKind,
    config: &TunerConfig,
) -> Result<TunerResult> {
    config.validate()?;
    let starts = start_points(config);
    let mut best: Option<TunerResult> = None;
    for theta0 in starts {
        let run = descend(problem, kind, config, theta0)?;
        let better = match &best {
            None => true,
            Some(b) => run.objective_at_optimum < b.objective_at_optimum,
        };
        if better {
            best = Some(run);
        }
    }
    let mut result = best.expect("at least one start");
    if kind == ObjectiveKind::Joint {
        let (l1, ln) = extremes(problem, result.theta_star)?;
        result.alpha_star = Some(optimal_alpha(l1, ln)?);
    }
    Ok(result)
}

fn start_points(config: &TunerConfig) -> Vec<f64> {
    let count = config.multistart_count.max(1);
    if count == 1 {
        return vec![config.theta_init];
    }
    (0..count)
        .map(|i| {
            let e = -2.0 + 4.0 * i as f64 / (count - 1) as f64;
            (config.theta_init * 10f64.powf(e)).max(THETA_FLOOR)
        })
        .collect()
}

fn descend(
    problem: &LQProblem,
    kind: ObjectiveKind,
    config: &TunerConfig,
    theta0: f64,
) -> Result<TunerResult> {
    let mut theta = theta0.max(THETA_FLOOR);
    let mut obj = objective_value(problem, kind, theta)?;
    let mut history = vec![(theta, obj)];
    let mut converged = false;
    // The accepted step carries over and doubles after each success, so the
    // search can traverse long shallow slopes that a fixed step would need
    // far more than max_iters iterations to cross.
    let mut step = config.step_size;
    for _ in 0..config.max_iters {
        let eta = config.fd_step.min(theta / 2.0);
        let grad = (objective_value(problem, kind, theta + eta)?
            - objective_value(problem, kind, theta - eta)?)
            / (2.0 * eta);
        if grad.abs() < config.grad_tol {
            converged = true;
            break;
        }
        let mut t = step;
        let mut accepted = false;
        for _ in 0..50 {
            let cand = (theta - t * grad).max(THETA_FLOOR);
            let cand_obj = objective_value(problem, kind, cand)?;
            if cand_obj < obj {
                theta = cand;
                obj = cand_obj;
                history.push((theta, obj));
                accepted = true;
                step = t * 2.0;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // No descent direction at line-search resolution: stationary.
            converged = true;
            break;
        }
    }
    Ok(TunerResult {
        theta_star: theta,
        alpha_star: None,
        objective_at_optimum: obj,
        history,
        converged,
    })
}

/// Log-spaced grid search over theta in [lo, hi]; returns (argmin, min).
pub fn grid_search_theta(
    problem: &LQProblem,
    kind: ObjectiveKind,
    lo: f64,
    hi: f64,
    points: usize,
) -> Result<(f64, f64)> {
    if !(lo > 0.0 && hi > lo) || points < 2 {
        return Err(Error::InvalidParameter(
            "grid search needs 0 < lo < hi and at least 2 points".into(),
        ));
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    let mut best = (lo, f64::INFINITY);
    for i in 0..points {
        let theta = (llo + (lhi - llo) * i as f64 / (points - 1) as f64).exp();
        let obj = objective_value(problem, kind, theta)?;
        if obj < best.1 {
            best = (theta, obj);
        }
    }
    Ok(best)
}

/// Closed-form deblurring penalty: blur spectrum fills [0, 1] and the
/// regularizer is the identity, giving theta* = sqrt(mu) capped at 1 for
/// plain ADMM and (theta*, alpha*) = (1, 2) in the relaxed case.
pub fn closed_form_deblur(mu: f64, relaxed: bool) -> Result<(f64, Option<f64>)> {
    if !(mu > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "mu must be positive, got {mu}"
        )));
    }
    if relaxed {
        Ok((1.0, Some(2.0)))
    } else {
        Ok((if mu <= 1.0 { mu.sqrt() } else { 1.0 }, None))
    }
}

/// Partition extremes of the regularizer symbol over a sampling mask.
pub fn mri_constants(mask: &[bool], g: &[f64]) -> Result<MriConstants> {
    if mask.len() != g.len() {
        return Err(Error::dim("mri_constants", mask.len(), g.len()));
    }
    let mut a = f64::INFINITY;
    let mut c = f64::NEG_INFINITY;
    let mut b = f64::INFINITY;
    let mut d = f64::NEG_INFINITY;
    for (&m, &gi) in mask.iter().zip(g.iter()) {
        if m {
            a = a.min(gi);
            c = c.max(gi);
        } else if gi != 0.0 {
            // Unsampled zero modes are stationary under the iteration and
            // carry no error; they do not constrain the penalty.
            b = b.min(gi);
            d = d.max(gi);
        }
    }
    if !a.is_finite() || !c.is_finite() {
        return Err(Error::EmptyPartition("no sampled positions".into()));
    }
    if !b.is_finite() || !d.is_finite() {
        return Err(Error::EmptyPartition(
            "no unsampled positions with nonzero regularizer response".into(),
        ));
    }
    Ok(MriConstants { a, b, c, d })
}

/// Constants for a problem with a Fourier-sampling data operator and a
/// DFT-diagonalized regularizer.
pub fn mri_constants_for_problem(problem: &LQProblem) -> Result<MriConstants> {
    let mask = problem.a.sampling_mask().ok_or_else(|| {
        Error::UnsupportedKind("mri_constants needs a fourier-sampling data operator".into())
    })?;
    let g = problem.l.gram_symbol().ok_or_else(|| {
        Error::UnsupportedKind("mri_constants needs a DFT-diagonalized regularizer".into())
    })?;
    mri_constants(mask, &g)
}

/// Closed-form penalty for subsampled-Fourier problems, by regime of mu
/// against the partition extremes. Continuous in mu; requires a > 0.
pub fn closed_form_mri(mu: f64, k: &MriConstants) -> Result<f64> {
    if !(mu > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "mu must be positive, got {mu}"
        )));
    }
    let MriConstants { a, b, c, .. } = *k;
    if a <= 0.0 {
        return Err(Error::DegenerateConstants(
            "sampled minimum a is zero: the zero mode is sampled and the first \
             regime would give theta = 0; tune numerically instead"
                .into(),
        ));
    }
    if b <= 0.0 {
        return Err(Error::DegenerateConstants(
            "unsampled minimum b is zero".into(),
        ));
    }
    if mu <= a.min(2.0 * b - a) {
        return Ok((mu * a).sqrt());
    }
    if b < a && mu <= b {
        let den = mu + a - b;
        if den <= 0.0 {
            return Err(Error::DegenerateConstants(format!(
                "nonpositive denominator mu + a - b = {den}"
            )));
        }
        return Ok((mu * a * b / den).sqrt());
    }
    if mu <= b {
        return Ok(mu);
    }
    let den = mu + c - b;
    if den <= 0.0 {
        return Err(Error::DegenerateConstants(format!(
            "nonpositive denominator mu + c - b = {den}"
        )));
    }
    Ok((mu * c * b / den).sqrt())
}
