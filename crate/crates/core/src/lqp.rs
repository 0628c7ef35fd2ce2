//! The linear quadratic problem min_u (mu/2)||Au - f||^2 + (1/2)||Lu||^2,
//! its objective, augmented Lagrangian, and normal-equation ground truth.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::fft::fft2_vec;
use crate::operators::{DiagBasis, Field, GridDims, LinearOperator, MATERIALIZE_CAP};

/// Minimum eigenvalue below which the normal matrix is treated as singular
/// and the least-norm solution is returned.
pub const SINGULARITY_EPS: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LQProblem {
    pub a: LinearOperator,
    pub l: LinearOperator,
    pub mu: f64,
    pub f: DVector<Complex64>,
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub u_star: DVector<Complex64>,
    pub residual_norm: f64,
    pub solvable: bool,
}

/// Joint diagonalization of mu*A^H A and L^H L in a shared unitary basis.
#[derive(Debug, Clone)]
pub(crate) struct JointSymbols {
    /// Grid of the Fourier basis; `None` means the standard basis suffices.
    pub fourier: Option<GridDims>,
    /// Gram symbol of A (unweighted by mu).
    pub s_a: Vec<f64>,
    /// Gram symbol of L.
    pub s_l: Vec<f64>,
}

impl JointSymbols {
    pub fn to_basis(&self, x: &DVector<Complex64>) -> DVector<Complex64> {
        match self.fourier {
            Some(dims) => fft2_vec(x, dims, false),
            None => x.clone(),
        }
    }

    pub fn from_basis(&self, x: &DVector<Complex64>) -> DVector<Complex64> {
        match self.fourier {
            Some(dims) => fft2_vec(x, dims, true),
            None => x.clone(),
        }
    }
}

/// Random dense m-by-n instance. A and L draw independent left factors and
/// log-uniform singular values but share the right singular basis, so their
/// Gram matrices commute and the iteration matrix keeps a real spectrum; the
/// data paths still see fully dense, unstructured matrices.
pub fn random_instance(m: usize, n: usize, mu: f64, rng: &mut impl Rng) -> Result<LQProblem> {
    if m < n || n == 0 {
        return Err(Error::InvalidParameter(format!(
            "random instance needs m >= n >= 1, got {m}x{n}"
        )));
    }
    fn gauss<R: Rng>(rng: &mut R, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
    }
    fn sv<R: Rng>(rng: &mut R, n: usize, scale: f64) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| {
            scale * 10f64.powf(rng.gen_range(-1.0..0.3))
        }))
    }
    let u1 = gauss(rng, m, n).qr().q();
    let u2 = gauss(rng, m, n).qr().q();
    let v = gauss(rng, n, n).qr().q();
    let scale = (m as f64).sqrt();
    let a = &u1 * sv(rng, n, scale) * v.transpose();
    let l = &u2 * sv(rng, n, scale) * v.transpose();
    let f = DVector::from_fn(m, |_, _| {
        Complex64::new(rng.sample::<f64, _>(rand_distr::StandardNormal), 0.0)
    });
    LQProblem::new(LinearOperator::dense(a), LinearOperator::dense(l), mu, f)
}

impl LQProblem {
    pub fn new(
        a: LinearOperator,
        l: LinearOperator,
        mu: f64,
        f: DVector<Complex64>,
    ) -> Result<Self> {
        if !(mu > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "mu must be positive, got {mu}"
            )));
        }
        if a.domain_dim() != l.domain_dim() {
            return Err(Error::dim("A/L domain", a.domain_dim(), l.domain_dim()));
        }
        if f.len() != a.codomain_dim() {
            return Err(Error::dim("f length", a.codomain_dim(), f.len()));
        }
        Ok(LQProblem { a, l, mu, f })
    }

    pub fn n(&self) -> usize {
        self.a.domain_dim()
    }

    pub fn field(&self) -> Field {
        if self.a.field() == Field::Complex
            || self.l.field() == Field::Complex
            || self.f.iter().any(|c| c.im != 0.0)
        {
            Field::Complex
        } else {
            Field::Real
        }
    }

    /// (mu/2)||Au - f||^2 + (1/2)||Lu||^2.
    pub fn objective(&self, u: &DVector<Complex64>) -> Result<f64> {
        if u.len() != self.n() {
            return Err(Error::dim("objective u", self.n(), u.len()));
        }
        let resid = self.a.apply(u, false)? - &self.f;
        let lu = self.l.apply(u, false)?;
        Ok(0.5 * self.mu * resid.norm_squared() + 0.5 * lu.norm_squared())
    }

    /// (mu/2)||Au - f||^2 + (1/2)||Lw||^2 + (theta/2)||w - u - b||^2.
    pub fn augmented_lagrangian(
        &self,
        u: &DVector<Complex64>,
        w: &DVector<Complex64>,
        b: &DVector<Complex64>,
        theta: f64,
    ) -> Result<f64> {
        let n = self.n();
        for v in [u, w, b] {
            if v.len() != n {
                return Err(Error::dim("augmented_lagrangian", n, v.len()));
            }
        }
        if !(theta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "theta must be positive, got {theta}"
            )));
        }
        let resid = self.a.apply(u, false)? - &self.f;
        let lw = self.l.apply(w, false)?;
        let coupling = w - u - b;
        Ok(0.5 * self.mu * resid.norm_squared()
            + 0.5 * lw.norm_squared()
            + 0.5 * theta * coupling.norm_squared())
    }

    /// Apply the normal matrix mu*A^H A + L^H L.
    pub fn normal_apply(&self, x: &DVector<Complex64>) -> Result<DVector<Complex64>> {
        let ata = self.a.gram_apply(x)?;
        let ltl = self.l.gram_apply(x)?;
        Ok(ata * Complex64::new(self.mu, 0.0) + ltl)
    }

    /// Right-hand side mu*A^H f of the normal equation.
    pub fn normal_rhs(&self) -> Result<DVector<Complex64>> {
        Ok(self.a.apply(&self.f, true)? * Complex64::new(self.mu, 0.0))
    }

    pub(crate) fn joint_symbols(&self) -> Option<JointSymbols> {
        let ba = self.a.diag_basis()?;
        let bl = self.l.diag_basis()?;
        let fourier = match (ba, bl) {
            (DiagBasis::Any, DiagBasis::Any) => None,
            (DiagBasis::Fourier(d), DiagBasis::Any) | (DiagBasis::Any, DiagBasis::Fourier(d)) => {
                Some(d)
            }
            (DiagBasis::Fourier(d1), DiagBasis::Fourier(d2)) => {
                if d1 != d2 {
                    return None;
                }
                Some(d1)
            }
        };
        let s_a = self.a.gram_symbol()?;
        let s_l = self.l.gram_symbol()?;
        if s_a.len() != self.n() || s_l.len() != self.n() {
            return None;
        }
        Some(JointSymbols { fourier, s_a, s_l })
    }

    /// Solve the normal equation (mu*A^H A + L^H L) u = mu*A^H f.
    ///
    /// Uses the joint Fourier diagonalization when available, a dense
    /// eigendecomposition at desk scale otherwise, and a conjugate-gradient
    /// solve for structured problems beyond the materialization cap. Singular
    /// systems (minimum eigenvalue below `SINGULARITY_EPS`) fall back to the
    /// least-norm least-squares solution and are flagged `solvable: false`.
    pub fn ground_truth(&self) -> Result<GroundTruth> {
        let rhs = self.normal_rhs()?;
        if let Some(js) = self.joint_symbols() {
            let mut solvable = true;
            let hat = js.to_basis(&rhs);
            let sol_hat = DVector::from_fn(self.n(), |i, _| {
                let d = self.mu * js.s_a[i] + js.s_l[i];
                if d > SINGULARITY_EPS {
                    hat[i] / d
                } else {
                    solvable = false;
                    Complex64::default()
                }
            });
            let u = js.from_basis(&sol_hat);
            let residual_norm = (self.normal_apply(&u)? - &rhs).norm();
            return Ok(GroundTruth {
                u_star: u,
                residual_norm,
                solvable,
            });
        }
        // Dense eigendecomposition only at small sizes; larger structured
        // systems go through conjugate gradients (the normal equation is
        // always consistent), with a dense rescue below the cap when CG
        // stagnates on a semi-definite system.
        if self.n() <= 512 {
            return self.ground_truth_dense(&rhs);
        }
        let cg = self.ground_truth_cg(&rhs)?;
        if !cg.solvable && self.n() <= MATERIALIZE_CAP {
            return self.ground_truth_dense(&rhs);
        }
        Ok(cg)
    }

    fn ground_truth_dense(&self, rhs: &DVector<Complex64>) -> Result<GroundTruth> {
        let n = self.n();
        if self.field() == Field::Real {
            let a = self.a.materialize_real()?;
            let l = self.l.materialize_real()?;
            let normal = a.transpose() * &a * self.mu + l.transpose() * &l;
            let eig = normal.symmetric_eigen();
            let solvable = eig.eigenvalues.iter().all(|&v| v >= SINGULARITY_EPS);
            let rhs_re = rhs.map(|c| c.re);
            let proj = eig.eigenvectors.transpose() * rhs_re;
            let scaled = DVector::from_fn(n, |i, _| {
                if eig.eigenvalues[i] >= SINGULARITY_EPS {
                    proj[i] / eig.eigenvalues[i]
                } else {
                    0.0
                }
            });
            let u_re = &eig.eigenvectors * scaled;
            let u = DVector::from_fn(n, |i, _| Complex64::new(u_re[i], 0.0));
            let residual_norm = (self.normal_apply(&u)? - rhs).norm();
            return Ok(GroundTruth {
                u_star: u,
                residual_norm,
                solvable,
            });
        }
        // Complex Hermitian system: embed as the real symmetric matrix
        // [[re, -im], [im, re]] of size 2n and solve there.
        let a = self.a.materialize()?;
        let l = self.l.materialize()?;
        let normal = a.adjoint() * &a * Complex64::new(self.mu, 0.0) + l.adjoint() * &l;
        let embed = DMatrix::from_fn(2 * n, 2 * n, |i, j| {
            let (bi, bj) = (i % n, j % n);
            match (i / n, j / n) {
                (0, 0) | (1, 1) => normal[(bi, bj)].re,
                (0, 1) => -normal[(bi, bj)].im,
                _ => normal[(bi, bj)].im,
            }
        });
        let eig = embed.symmetric_eigen();
        let solvable = eig.eigenvalues.iter().all(|&v| v >= SINGULARITY_EPS);
        let rhs_embed = DVector::from_fn(2 * n, |i, _| {
            if i < n {
                rhs[i].re
            } else {
                rhs[i - n].im
            }
        });
        let proj = eig.eigenvectors.transpose() * rhs_embed;
        let scaled = DVector::from_fn(2 * n, |i, _| {
            if eig.eigenvalues[i] >= SINGULARITY_EPS {
                proj[i] / eig.eigenvalues[i]
            } else {
                0.0
            }
        });
        let sol = &eig.eigenvectors * scaled;
        let u = DVector::from_fn(n, |i, _| Complex64::new(sol[i], sol[n + i]));
        let residual_norm = (self.normal_apply(&u)? - rhs).norm();
        Ok(GroundTruth {
            u_star: u,
            residual_norm,
            solvable,
        })
    }

    fn ground_truth_cg(&self, rhs: &DVector<Complex64>) -> Result<GroundTruth> {
        let n = self.n();
        let tol = 1e-13 * (1.0 + rhs.norm());
        let mut u = DVector::from_element(n, Complex64::default());
        let mut r = rhs.clone();
        let mut p = r.clone();
        let mut rr = r.norm_squared();
        let max_iters = 20 * n;
        let mut converged = rr.sqrt() <= tol;
        for _ in 0..max_iters {
            if rr.sqrt() <= tol {
                converged = true;
                break;
            }
            let np = self.normal_apply(&p)?;
            let pap = p.dotc(&np).re;
            if pap <= 0.0 {
                break;
            }
            let alpha = Complex64::new(rr / pap, 0.0);
            u += p.map(|v| v * alpha);
            r -= np.map(|v| v * alpha);
            let rr_new = r.norm_squared();
            let beta = Complex64::new(rr_new / rr, 0.0);
            p = &r + p.map(|v| v * beta);
            rr = rr_new;
        }
        let residual_norm = (self.normal_apply(&u)? - rhs).norm();
        Ok(GroundTruth {
            u_star: u,
            residual_norm,
            solvable: converged,
        })
    }
}
