//! Cached solvers for the regularized Gram systems (c*opᴴop + theta*I)x = b
//! that appear in the ADMM sub-problems and in the fixed-point operator.
//!
//! Structured kinds get structured inversions (Fourier-diagonal, per-pixel
//! 2x2 blocks, scalar); dense operators fall back to a cached Cholesky
//! factorization at desk scale.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::fft2_vec;
use crate::operators::{GridDims, LinearOperator, MATERIALIZE_CAP};

#[derive(Debug)]
pub(crate) enum Ridge {
    /// (c + theta)^{-1} * I, for identity-like operators.
    Scale { inv: f64 },
    /// F^H diag(inv) F with inv_i = 1/(c*s_i + theta).
    Fourier { dims: GridDims, inv: Vec<f64> },
    /// Per-pixel 2x2 block inverse of c*JᵀJ + theta*I (registration).
    Blocks2 {
        npix: usize,
        i11: Vec<f64>,
        i12: Vec<f64>,
        i22: Vec<f64>,
    },
    /// Independent blocks along the diagonal.
    BlockDiag { blocks: Vec<(usize, Ridge)> },
    /// Cached Cholesky of the real dense system.
    Dense { chol: Cholesky<f64, Dyn> },
}

impl Ridge {
    /// Build a solver for (c*opᴴop + theta*I).
    pub fn build(op: &LinearOperator, c: f64, theta: f64) -> Result<Ridge> {
        if !(theta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "theta must be positive, got {theta}"
            )));
        }
        if op.kind_name() == "identity" {
            return Ok(Ridge::Scale {
                inv: 1.0 / (c + theta),
            });
        }
        if let (Some(sym), Some(dims)) = (op.gram_symbol(), op.grid_dims()) {
            let inv = sym.iter().map(|s| 1.0 / (c * s + theta)).collect();
            return Ok(Ridge::Fourier { dims, inv });
        }
        if let Some((ix, iy)) = op.registration_fields() {
            let npix = ix.len();
            let mut i11 = Vec::with_capacity(npix);
            let mut i12 = Vec::with_capacity(npix);
            let mut i22 = Vec::with_capacity(npix);
            for i in 0..npix {
                let (gx, gy) = (ix[i], iy[i]);
                let m11 = c * gx * gx + theta;
                let m12 = c * gx * gy;
                let m22 = c * gy * gy + theta;
                let det = m11 * m22 - m12 * m12;
                i11.push(m22 / det);
                i12.push(-m12 / det);
                i22.push(m11 / det);
            }
            return Ok(Ridge::Blocks2 {
                npix,
                i11,
                i12,
                i22,
            });
        }
        if let Some(blocks) = op.block_diag_blocks() {
            let built = blocks
                .iter()
                .map(|b| Ok((b.domain_dim(), Ridge::build(b, c, theta)?)))
                .collect::<Result<Vec<_>>>()?;
            return Ok(Ridge::BlockDiag { blocks: built });
        }
        let n = op.domain_dim();
        if n > MATERIALIZE_CAP {
            return Err(Error::TooLarge {
                context: "dense ridge solver",
                size: n,
                cap: MATERIALIZE_CAP,
            });
        }
        let mat = op.materialize_real()?;
        let sys = mat.transpose() * &mat * c + DMatrix::identity(n, n) * theta;
        let chol = Cholesky::new(sys).ok_or_else(|| {
            Error::NonConvergence("Cholesky of regularized Gram system failed".into())
        })?;
        Ok(Ridge::Dense { chol })
    }

    pub fn solve(&self, b: &DVector<Complex64>) -> DVector<Complex64> {
        match self {
            Ridge::Scale { inv } => b * Complex64::new(*inv, 0.0),
            Ridge::Fourier { dims, inv } => {
                let mut hat = fft2_vec(b, *dims, false);
                for (v, s) in hat.iter_mut().zip(inv.iter()) {
                    *v *= s;
                }
                fft2_vec(&hat, *dims, true)
            }
            Ridge::Blocks2 {
                npix,
                i11,
                i12,
                i22,
            } => DVector::from_fn(2 * npix, |i, _| {
                if i < *npix {
                    b[i] * i11[i] + b[npix + i] * i12[i]
                } else {
                    let p = i - npix;
                    b[p] * i12[p] + b[npix + p] * i22[p]
                }
            }),
            Ridge::BlockDiag { blocks } => {
                let mut out = DVector::from_element(b.len(), Complex64::default());
                let mut off = 0;
                for (len, ridge) in blocks {
                    let sub = DVector::from_fn(*len, |i, _| b[off + i]);
                    let sol = ridge.solve(&sub);
                    for i in 0..*len {
                        out[off + i] = sol[i];
                    }
                    off += len;
                }
                out
            }
            Ridge::Dense { chol } => {
                let re = chol.solve(&b.map(|c| c.re));
                let im = chol.solve(&b.map(|c| c.im));
                DVector::from_fn(b.len(), |i, _| Complex64::new(re[i], im[i]))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn check_ridge(op: &LinearOperator, c: f64, theta: f64, complex: bool) {
        let ridge = Ridge::build(op, c, theta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = op.domain_dim();
        for _ in 0..5 {
            let b = DVector::from_fn(n, |_, _| {
                Complex64::new(
                    rng.sample::<f64, _>(rand_distr::StandardNormal),
                    if complex {
                        rng.sample::<f64, _>(rand_distr::StandardNormal)
                    } else {
                        0.0
                    },
                )
            });
            let x = ridge.solve(&b);
            let back = op.gram_apply(&x).unwrap() * Complex64::new(c, 0.0)
                + x.map(|v| v * Complex64::new(theta, 0.0));
            assert!(
                (back - &b).norm() < 1e-9 * (1.0 + b.norm()),
                "ridge mismatch for {}",
                op.kind_name()
            );
        }
    }

    #[test]
    fn ridge_solvers_invert_their_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let dims = GridDims::new(8, 8).unwrap();
        let mask: Vec<bool> = (0..64).map(|i| i % 3 == 0).collect();
        let ix: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let iy: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        check_ridge(&LinearOperator::identity(9), 2.0, 0.5, false);
        check_ridge(
            &LinearOperator::gaussian_blur(5, 1.5, dims).unwrap(),
            3.0,
            0.7,
            false,
        );
        check_ridge(
            &LinearOperator::fourier_sampling(mask, dims).unwrap(),
            10.0,
            0.3,
            true,
        );
        check_ridge(&LinearOperator::periodic_gradient(dims), 1.0, 1.1, false);
        check_ridge(
            &LinearOperator::registration_jacobian(ix, iy, dims).unwrap(),
            5.0,
            0.2,
            false,
        );
        check_ridge(
            &LinearOperator::block_diag(vec![
                LinearOperator::periodic_gradient(dims),
                LinearOperator::periodic_gradient(dims),
            ])
            .unwrap(),
            1.0,
            0.9,
            false,
        );
        let dense = DMatrix::from_fn(12, 7, |_, _| rng.gen_range(-1.0..1.0));
        check_ridge(&LinearOperator::dense(dense), 1.4, 0.25, false);
    }
}
