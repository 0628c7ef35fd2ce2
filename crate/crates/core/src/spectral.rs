//! The fixed-point iteration matrix I + alpha*Q of the consensus ADMM
//! splitting, its extremal eigenvalues, spectral radius, and convergence
//! factor estimates.
//!
//! Q = -(mu*AᴴA + theta*I)^{-1} (LᴴL + theta*I)^{-1} (theta*mu*AᴴA +
//! theta*LᴴL) has spectrum contained in [-1, 0]; when the two Gram matrices
//! share an eigenbasis the spectrum is exactly real and the radius of
//! I + alpha*Q is max(|1 + alpha*l1|, |1 + alpha*ln|) over the extremal
//! eigenvalues l1 <= ln of Q. Complex conjugate pairs can occur for
//! unstructured non-commuting instances; the eigensolvers detect that and
//! report it as a degenerate spectrum rather than tune through it.

use nalgebra::linalg::Schur;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lqp::LQProblem;
use crate::operators::{Field, MATERIALIZE_CAP};
use crate::ridge::Ridge;

const POWER_TOL: f64 = 1e-8;
const POWER_CAP: usize = 10_000;
const POWER_SEED: u64 = 0x51ab_2e77;

/// Above this dimension the automatic routes avoid cubic-cost dense
/// eigendecompositions and fall back to matrix-free iteration.
pub(crate) const DENSE_EIG_CAP: usize = 512;

/// How the iteration operator represents Q.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorMode {
    /// Materialize Q densely (real problems at desk scale).
    Dense,
    /// Structured applications only; eigenvalues by explicit Fourier symbols
    /// when available, two-stage power iteration otherwise.
    MatrixFree,
}

#[derive(Debug)]
enum Inner {
    Dense {
        q: DMatrix<f64>,
    },
    /// Jointly diagonalized problems: per-mode eigenvalues of Q aligned to
    /// the shared basis. `active` lists the modes that carry error (both Gram
    /// symbols zero means the mode is stationary under the iteration).
    Explicit {
        mode_lambdas: Vec<f64>,
        active: Vec<f64>,
    },
    MatrixFree {
        ridge_a: Ridge,
        ridge_l: Ridge,
    },
}

/// One application reproduces the homogeneous part of the ADMM fixed-point
/// iteration: u -> (I + alpha*Q) u.
#[derive(Debug)]
pub struct IterationOperator {
    problem: LQProblem,
    pub theta: f64,
    pub alpha: f64,
    mode: OperatorMode,
    inner: Inner,
}

/// Extremal eigenvalues of Q and the derived radius of I + alpha*Q.
#[derive(Debug, Clone, Copy)]
pub struct SpectralSummary {
    /// Smallest eigenvalue of Q.
    pub lambda_1: f64,
    /// Largest eigenvalue of Q.
    pub lambda_n: f64,
    /// Spectral radius of I + alpha*Q.
    pub rho: f64,
    /// Convergence factor; equals the spectral radius.
    pub zeta: f64,
    /// Largest imaginary magnitude observed among eigenvalues.
    pub max_imag: f64,
}

impl SpectralSummary {
    fn from_extremes(lambda_1: f64, lambda_n: f64, alpha: f64, max_imag: f64) -> Self {
        let rho = radius_from_extremes(lambda_1, lambda_n, alpha);
        SpectralSummary {
            lambda_1,
            lambda_n,
            rho,
            zeta: rho,
            max_imag,
        }
    }
}

/// max(|1 + alpha*l1|, |1 + alpha*ln|).
pub fn radius_from_extremes(lambda_1: f64, lambda_n: f64, alpha: f64) -> f64 {
    (1.0 + alpha * lambda_1).abs().max((1.0 + alpha * lambda_n).abs())
}

/// Per-mode eigenvalue of Q for a jointly diagonalized problem with A-Gram
/// symbol `s` and L-Gram symbol `g`.
pub(crate) fn mode_lambda(mu: f64, theta: f64, s: f64, g: f64) -> f64 {
    let num = theta * g + theta * mu * s;
    -num / (theta * theta + mu * s * g + num)
}

pub fn build_iteration_operator(
    problem: &LQProblem,
    theta: f64,
    alpha: f64,
    mode: OperatorMode,
) -> Result<IterationOperator> {
    if !(theta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "theta must be positive, got {theta}"
        )));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    let inner = match mode {
        OperatorMode::Dense => Inner::Dense {
            q: materialize_q(problem, theta)?,
        },
        OperatorMode::MatrixFree => {
            if let Some(js) = problem.joint_symbols() {
                let mode_lambdas: Vec<f64> = js
                    .s_a
                    .iter()
                    .zip(js.s_l.iter())
                    .map(|(&s, &g)| mode_lambda(problem.mu, theta, s, g))
                    .collect();
                let active: Vec<f64> = js
                    .s_a
                    .iter()
                    .zip(js.s_l.iter())
                    .filter(|(&s, &g)| s != 0.0 || g != 0.0)
                    .map(|(&s, &g)| mode_lambda(problem.mu, theta, s, g))
                    .collect();
                Inner::Explicit {
                    mode_lambdas,
                    active,
                }
            } else {
                Inner::MatrixFree {
                    ridge_a: Ridge::build(&problem.a, problem.mu, theta)?,
                    ridge_l: Ridge::build(&problem.l, 1.0, theta)?,
                }
            }
        }
    };
    Ok(IterationOperator {
        problem: problem.clone(),
        theta,
        alpha,
        mode,
        inner,
    })
}

fn materialize_q(problem: &LQProblem, theta: f64) -> Result<DMatrix<f64>> {
    let n = problem.n();
    if n > MATERIALIZE_CAP {
        return Err(Error::TooLarge {
            context: "dense iteration operator",
            size: n,
            cap: MATERIALIZE_CAP,
        });
    }
    if problem.field() == Field::Complex {
        return Err(Error::UnsupportedKind(
            "dense iteration operator on complex problem".into(),
        ));
    }
    let a = problem.a.materialize_real()?;
    let l = problem.l.materialize_real()?;
    let ata = a.transpose() * &a * problem.mu;
    let ltl = l.transpose() * &l;
    let eye = DMatrix::identity(n, n);
    let m1 = &ata + &eye * theta;
    let m2 = &ltl + &eye * theta;
    let rhs = (&ata + &ltl) * theta;
    let x = m2
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NonConvergence("singular L-subsystem".into()))?;
    let q = m1
        .lu()
        .solve(&x)
        .ok_or_else(|| Error::NonConvergence("singular A-subsystem".into()))?;
    Ok(-q)
}

impl IterationOperator {
    pub fn problem(&self) -> &LQProblem {
        &self.problem
    }

    pub fn mode(&self) -> OperatorMode {
        self.mode
    }

    /// Apply Q.
    pub fn apply_q(&self, u: &DVector<Complex64>) -> Result<DVector<Complex64>> {
        if u.len() != self.problem.n() {
            return Err(Error::dim("iteration operator input", self.problem.n(), u.len()));
        }
        match &self.inner {
            Inner::Dense { q } => {
                let re = q * u.map(|c| c.re);
                let im = q * u.map(|c| c.im);
                Ok(DVector::from_fn(u.len(), |i, _| {
                    Complex64::new(re[i], im[i])
                }))
            }
            Inner::Explicit { mode_lambdas, .. } => {
                let js = self.problem.joint_symbols().expect("basis fixed at build");
                let hat = js.to_basis(u);
                let scaled = DVector::from_fn(u.len(), |i, _| hat[i] * mode_lambdas[i]);
                Ok(js.from_basis(&scaled))
            }
            Inner::MatrixFree { ridge_a, ridge_l } => {
                let t = self.problem.normal_apply(u)? * Complex64::new(self.theta, 0.0);
                let y = ridge_l.solve(&t);
                Ok(-ridge_a.solve(&y))
            }
        }
    }

    /// Apply I + alpha*Q.
    pub fn apply(&self, u: &DVector<Complex64>) -> Result<DVector<Complex64>> {
        let qu = self.apply_q(u)?;
        Ok(u + qu.map(|v| v * Complex64::new(self.alpha, 0.0)))
    }

    /// The materialized I + alpha*Q, when built densely.
    pub fn dense_matrix(&self) -> Option<DMatrix<f64>> {
        match &self.inner {
            Inner::Dense { q } => {
                Some(DMatrix::identity(q.nrows(), q.ncols()) + q * self.alpha)
            }
            _ => None,
        }
    }

    /// Eigenvalues of Q on the error-carrying subspace, when the problem is
    /// jointly diagonalized.
    pub fn explicit_spectrum(&self) -> Option<&[f64]> {
        match &self.inner {
            Inner::Explicit { active, .. } => Some(active),
            _ => None,
        }
    }
}

pub fn extremal_eigenvalues(it: &IterationOperator) -> Result<SpectralSummary> {
    match &it.inner {
        Inner::Dense { q } => {
            // When the two Gram matrices share an eigenbasis Q is symmetric;
            // take the symmetric eigensolver in that case — it cannot stall
            // on the heavily clustered spectra such problems produce.
            let scale = q.amax().max(1.0);
            let asym = (q - q.transpose()).amax();
            if asym <= 1e-9 * scale {
                let sym = (q + q.transpose()) * 0.5;
                let eig = sym.symmetric_eigen().eigenvalues;
                let lambda_1 = eig.iter().cloned().fold(f64::INFINITY, f64::min);
                let lambda_n = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                return Ok(SpectralSummary::from_extremes(
                    lambda_1, lambda_n, it.alpha, 0.0,
                ));
            }
            // complex_eigenvalues() runs Schur with no iteration bound and
            // can spin forever on heavily clustered spectra; bound it and
            // fall back to power iteration when it gives up.
            let eig = match Schur::try_new(q.clone(), f64::EPSILON, 200 * q.nrows().max(10)) {
                Some(schur) => schur.complex_eigenvalues(),
                None => {
                    let lambda_1 = power_iteration(q.nrows(), POWER_SEED, |v| it.apply_q(v))?;
                    let shifted = power_iteration(q.nrows(), POWER_SEED ^ 0xff, |v| {
                        let qv = it.apply_q(v)?;
                        Ok(qv - v.map(|c| c * lambda_1))
                    })?;
                    return Ok(SpectralSummary::from_extremes(
                        lambda_1,
                        (lambda_1 + shifted).min(0.0),
                        it.alpha,
                        0.0,
                    ));
                }
            };
            let mut lambda_1 = f64::INFINITY;
            let mut lambda_n = f64::NEG_INFINITY;
            let mut max_imag: f64 = 0.0;
            for v in eig.iter() {
                lambda_1 = lambda_1.min(v.re);
                lambda_n = lambda_n.max(v.re);
                max_imag = max_imag.max(v.im.abs());
            }
            if max_imag > 1e-6 * (1.0 + lambda_1.abs()) {
                return Err(Error::DegenerateSpectrum(format!(
                    "complex eigenvalues of Q: max imaginary part {max_imag}"
                )));
            }
            Ok(SpectralSummary::from_extremes(
                lambda_1, lambda_n, it.alpha, max_imag,
            ))
        }
        Inner::Explicit { active, .. } => {
            if active.is_empty() {
                return Err(Error::DegenerateSpectrum(
                    "no error-carrying modes: both Gram symbols vanish everywhere".into(),
                ));
            }
            let lambda_1 = active.iter().cloned().fold(f64::INFINITY, f64::min);
            let lambda_n = active.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            Ok(SpectralSummary::from_extremes(
                lambda_1, lambda_n, it.alpha, 0.0,
            ))
        }
        Inner::MatrixFree { .. } => {
            let n = it.problem.n();
            // Spectrum of Q sits in [-1, 0], so the dominant eigenvalue in
            // magnitude is the smallest one.
            let lambda_1 = power_iteration(n, POWER_SEED, |v| it.apply_q(v))?;
            let shifted = power_iteration(n, POWER_SEED ^ 0xff, |v| {
                let qv = it.apply_q(v)?;
                Ok(qv - v.map(|c| c * lambda_1))
            })?;
            let lambda_n = lambda_1 + shifted;
            Ok(SpectralSummary::from_extremes(
                lambda_1,
                lambda_n.min(0.0),
                it.alpha,
                0.0,
            ))
        }
    }
}

/// Dominant eigenvalue of an arbitrary map with real spectrum (used by the
/// gradient-step heuristic for operators beyond the materialization cap).
pub(crate) fn power_dominant<F>(n: usize, apply: F) -> Result<f64>
where
    F: Fn(&DVector<Complex64>) -> Result<DVector<Complex64>>,
{
    power_iteration(n, POWER_SEED, apply)
}

/// Dominant (largest magnitude) eigenvalue of a linear map with real
/// spectrum, by power iteration with Rayleigh-quotient estimates.
fn power_iteration<F>(n: usize, seed: u64, apply: F) -> Result<f64>
where
    F: Fn(&DVector<Complex64>) -> Result<DVector<Complex64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = random_unit(&mut rng, n);
    let mut lambda = 0.0;
    let mut delta = f64::INFINITY;
    let mut restarted = false;
    for k in 0..POWER_CAP {
        let w = apply(&v)?;
        let wnorm = w.norm();
        if wnorm < 1e-15 {
            // The map annihilates a generic vector: dominant eigenvalue 0.
            return Ok(0.0);
        }
        let next = v.dotc(&w).re;
        delta = (next - lambda).abs();
        let done = delta <= POWER_TOL * (1.0 + next.abs());
        lambda = next;
        v = w / Complex64::new(wnorm, 0.0);
        if done && k > 0 {
            return Ok(lambda);
        }
        if !restarted && k == POWER_CAP / 2 {
            v = random_unit(&mut rng, n);
            restarted = true;
        }
    }
    // Tight eigenvalue clusters stagnate just above the target tolerance;
    // the Rayleigh estimate is still accurate there, so accept a nearly
    // settled value and only fail when the iteration is genuinely moving.
    if delta <= 1e-6 * (1.0 + lambda.abs()) {
        return Ok(lambda);
    }
    Err(Error::NonConvergence(format!(
        "power iteration hit the {POWER_CAP}-step cap at estimate {lambda}"
    )))
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> DVector<Complex64> {
    let v = DVector::from_fn(n, |_, _| {
        Complex64::new(rng.sample::<f64, _>(rand_distr::StandardNormal), 0.0)
    });
    let norm = v.norm();
    v / Complex64::new(norm, 0.0)
}

/// Spectral radius of I + alpha*Q at the given parameters, routed through the
/// cheapest representation the problem supports.
pub fn spectral_radius(problem: &LQProblem, theta: f64, alpha: f64) -> Result<f64> {
    let mode = preferred_mode(problem);
    let it = build_iteration_operator(problem, theta, alpha, mode)?;
    Ok(extremal_eigenvalues(&it)?.rho)
}

pub(crate) fn preferred_mode(problem: &LQProblem) -> OperatorMode {
    if problem.joint_symbols().is_some() {
        return OperatorMode::MatrixFree;
    }
    if problem.n() <= DENSE_EIG_CAP && problem.field() == Field::Real {
        OperatorMode::Dense
    } else {
        OperatorMode::MatrixFree
    }
}

/// Tail estimate of the convergence factor from a stored error trace
/// e_k = ||u^k - u*||: the maximum ratio e_{k+1}/e_k over the second half of
/// the iterates that still carry error above 1e-13.
pub fn empirical_convergence_factor(errors: &[f64]) -> Result<f64> {
    let cut = errors
        .iter()
        .position(|&e| e <= 1e-13)
        .unwrap_or(errors.len());
    let usable = &errors[..cut];
    if usable.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "need at least 10 iterates with error above 1e-13, got {}",
            usable.len()
        )));
    }
    let start = usable.len() / 2;
    let mut factor: f64 = 0.0;
    for k in start.max(1)..usable.len() {
        factor = factor.max(usable[k] / usable[k - 1]);
    }
    Ok(factor)
}

/// Iterations needed to bring an error of size sigma below epsilon at linear
/// rate zeta: ceil((log eps - log sigma)/log zeta).
pub fn estimate_iteration_count(zeta: f64, epsilon: f64, sigma: f64) -> Result<usize> {
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(Error::Domain(format!(
            "convergence factor must lie in (0, 1), got {zeta}"
        )));
    }
    if !(epsilon > 0.0 && sigma > 0.0 && epsilon < sigma) {
        return Err(Error::Domain(format!(
            "need 0 < epsilon < sigma, got epsilon {epsilon}, sigma {sigma}"
        )));
    }
    Ok(((epsilon.ln() - sigma.ln()) / zeta.ln()).ceil() as usize)
}
