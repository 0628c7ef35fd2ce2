//! Structured linear operators with forward/adjoint application, optional
//! explicit Gram spectra, and dense materialization at desk scale.
//!
//! Every operator maps length-n vectors to length-m vectors; the adjoint is
//! the conjugate transpose for complex-valued kinds. Operators are immutable
//! after construction.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::{fft2_inplace, fft2_vec, gradient_symbol};

/// Cap on dense materialization: at most this many columns and at most
/// `MATERIALIZE_CAP^2` total entries.
pub const MATERIALIZE_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Real,
    Complex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridDims {
    pub height: usize,
    pub width: usize,
}

impl GridDims {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidParameter(format!(
                "grid dims must be positive, got {height}x{width}"
            )));
        }
        Ok(GridDims { height, width })
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Which Gram matrix a spectrum describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumOrigin {
    /// Eigenvalues of a materialized Gram matrix.
    MaterializedGram,
    /// Explicit Fourier symbol of the Gram matrix.
    FourierSymbol,
    /// Explicit per-entry structure (e.g. per-pixel rank-1 blocks).
    Explicit,
}

/// Ascending real eigenvalues of a Gram matrix.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub origin: SpectrumOrigin,
}

impl Spectrum {
    fn sorted(mut values: Vec<f64>, origin: SpectrumOrigin) -> Self {
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Spectrum { values, origin }
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        *self.values.last().unwrap()
    }
}

/// Diagonalization basis of a Gram matrix, used to decide whether two
/// operators are simultaneously diagonalizable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum DiagBasis {
    /// Diagonal in any orthonormal basis (scalar multiples of identity).
    Any,
    /// Diagonal in the unitary 2D DFT basis of the given grid.
    Fourier(GridDims),
}

#[derive(Debug, Clone)]
enum OpKind {
    Dense {
        mat: DMatrix<f64>,
    },
    Identity,
    GaussianBlur {
        dims: GridDims,
        /// Unnormalized DFT of the periodically embedded kernel; applying the
        /// blur multiplies the unitary FFT of the input by this symbol.
        symbol: Vec<Complex64>,
    },
    FourierSampling {
        dims: GridDims,
        mask: Vec<bool>,
        sampled: Vec<usize>,
    },
    PeriodicGradient {
        dims: GridDims,
    },
    RegistrationJacobian {
        dims: GridDims,
        ix: Vec<f64>,
        iy: Vec<f64>,
    },
    BlockDiag {
        blocks: Vec<LinearOperator>,
    },
}

#[derive(Debug, Clone)]
pub struct LinearOperator {
    kind: OpKind,
    m: usize,
    n: usize,
}

impl LinearOperator {
    pub fn dense(mat: DMatrix<f64>) -> Self {
        let (m, n) = (mat.nrows(), mat.ncols());
        LinearOperator {
            kind: OpKind::Dense { mat },
            m,
            n,
        }
    }

    pub fn identity(n: usize) -> Self {
        LinearOperator {
            kind: OpKind::Identity,
            m: n,
            n,
        }
    }

    pub fn zeros(m: usize, n: usize) -> Self {
        LinearOperator::dense(DMatrix::zeros(m, n))
    }

    /// Periodic convolution with a normalized (sum-1) Gaussian kernel of odd
    /// `size` and standard deviation `sigma` on an `h x w` grid.
    pub fn gaussian_blur(size: usize, sigma: f64, dims: GridDims) -> Result<Self> {
        if size % 2 == 0 || size == 0 {
            return Err(Error::InvalidParameter(format!(
                "blur kernel size must be odd, got {size}"
            )));
        }
        if !(sigma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "blur standard deviation must be positive, got {sigma}"
            )));
        }
        if size > dims.height || size > dims.width {
            return Err(Error::InvalidParameter(format!(
                "kernel size {size} exceeds grid {}x{}",
                dims.height, dims.width
            )));
        }
        let h = (size / 2) as isize;
        let mut kernel = Vec::with_capacity(size * size);
        let mut sum = 0.0;
        for s in -h..=h {
            for t in -h..=h {
                let v = (-((s * s + t * t) as f64) / (2.0 * sigma * sigma)).exp();
                kernel.push(v);
                sum += v;
            }
        }
        for v in kernel.iter_mut() {
            *v /= sum;
        }
        // Embed with periodic wraparound, kernel center at (0, 0).
        let (gh, gw) = (dims.height as isize, dims.width as isize);
        let mut embedded = vec![Complex64::default(); dims.len()];
        let mut idx = 0;
        for s in -h..=h {
            for t in -h..=h {
                let r = s.rem_euclid(gh) as usize;
                let c = t.rem_euclid(gw) as usize;
                embedded[r * dims.width + c] += Complex64::new(kernel[idx], 0.0);
                idx += 1;
            }
        }
        fft2_inplace(&mut embedded, dims, false);
        let scale = (dims.len() as f64).sqrt();
        let symbol: Vec<Complex64> = embedded.into_iter().map(|c| c * scale).collect();
        Ok(LinearOperator {
            kind: OpKind::GaussianBlur { dims, symbol },
            m: dims.len(),
            n: dims.len(),
        })
    }

    /// Undersampled Fourier operator D*F: unitary 2D DFT followed by selection
    /// of the masked frequency-grid positions (row-major order).
    pub fn fourier_sampling(mask: Vec<bool>, dims: GridDims) -> Result<Self> {
        if mask.len() != dims.len() {
            return Err(Error::dim("fourier_sampling mask", dims.len(), mask.len()));
        }
        let sampled: Vec<usize> = mask
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| s.then_some(i))
            .collect();
        if sampled.is_empty() {
            return Err(Error::InvalidParameter(
                "sampling mask selects no positions".into(),
            ));
        }
        let m = sampled.len();
        Ok(LinearOperator {
            kind: OpKind::FourierSampling {
                dims,
                mask,
                sampled,
            },
            m,
            n: dims.len(),
        })
    }

    /// First-order forward-difference gradient with circulant wraparound,
    /// stacked as a 2n x n map (x-differences then y-differences).
    pub fn periodic_gradient(dims: GridDims) -> Self {
        LinearOperator {
            kind: OpKind::PeriodicGradient { dims },
            m: 2 * dims.len(),
            n: dims.len(),
        }
    }

    /// Registration data operator J = [diag(ix) | diag(iy)], mapping a stacked
    /// velocity field (v_x, v_y) of length 2n to per-pixel residuals.
    pub fn registration_jacobian(ix: Vec<f64>, iy: Vec<f64>, dims: GridDims) -> Result<Self> {
        if ix.len() != dims.len() {
            return Err(Error::dim("registration ix", dims.len(), ix.len()));
        }
        if iy.len() != dims.len() {
            return Err(Error::dim("registration iy", dims.len(), iy.len()));
        }
        Ok(LinearOperator {
            kind: OpKind::RegistrationJacobian { dims, ix, iy },
            m: dims.len(),
            n: 2 * dims.len(),
        })
    }

    pub fn block_diag(blocks: Vec<LinearOperator>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidParameter("block_diag needs blocks".into()));
        }
        let m = blocks.iter().map(|b| b.codomain_dim()).sum();
        let n = blocks.iter().map(|b| b.domain_dim()).sum();
        Ok(LinearOperator {
            kind: OpKind::BlockDiag { blocks },
            m,
            n,
        })
    }

    pub fn domain_dim(&self) -> usize {
        self.n
    }

    pub fn codomain_dim(&self) -> usize {
        self.m
    }

    pub fn field(&self) -> Field {
        match &self.kind {
            OpKind::FourierSampling { .. } => Field::Complex,
            OpKind::BlockDiag { blocks } => {
                if blocks.iter().any(|b| b.field() == Field::Complex) {
                    Field::Complex
                } else {
                    Field::Real
                }
            }
            _ => Field::Real,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match &self.kind {
            OpKind::Dense { .. } => "dense",
            OpKind::Identity => "identity",
            OpKind::GaussianBlur { .. } => "gaussian-blur",
            OpKind::FourierSampling { .. } => "fourier-sampling",
            OpKind::PeriodicGradient { .. } => "periodic-gradient",
            OpKind::RegistrationJacobian { .. } => "registration-jacobian",
            OpKind::BlockDiag { .. } => "block-diag",
        }
    }

    pub fn grid_dims(&self) -> Option<GridDims> {
        match &self.kind {
            OpKind::GaussianBlur { dims, .. }
            | OpKind::FourierSampling { dims, .. }
            | OpKind::PeriodicGradient { dims }
            | OpKind::RegistrationJacobian { dims, .. } => Some(*dims),
            _ => None,
        }
    }

    pub(crate) fn sampling_mask(&self) -> Option<&[bool]> {
        match &self.kind {
            OpKind::FourierSampling { mask, .. } => Some(mask),
            _ => None,
        }
    }

    pub(crate) fn registration_fields(&self) -> Option<(&[f64], &[f64])> {
        match &self.kind {
            OpKind::RegistrationJacobian { ix, iy, .. } => Some((ix, iy)),
            _ => None,
        }
    }

    pub(crate) fn block_diag_blocks(&self) -> Option<&[LinearOperator]> {
        match &self.kind {
            OpKind::BlockDiag { blocks } => Some(blocks),
            _ => None,
        }
    }

    /// Apply the operator (or its adjoint) to a vector.
    pub fn apply(&self, x: &DVector<Complex64>, adjoint: bool) -> Result<DVector<Complex64>> {
        let expected = if adjoint { self.m } else { self.n };
        if x.len() != expected {
            return Err(Error::dim("apply input", expected, x.len()));
        }
        Ok(match &self.kind {
            OpKind::Dense { mat } => {
                let re = x.map(|c| c.re);
                let im = x.map(|c| c.im);
                let (yr, yi) = if adjoint {
                    (mat.transpose() * re, mat.transpose() * im)
                } else {
                    (mat * re, mat * im)
                };
                DVector::from_fn(yr.len(), |i, _| Complex64::new(yr[i], yi[i]))
            }
            OpKind::Identity => x.clone(),
            OpKind::GaussianBlur { dims, symbol, .. } => {
                let mut buf: Vec<Complex64> = x.iter().copied().collect();
                fft2_inplace(&mut buf, *dims, false);
                for (v, s) in buf.iter_mut().zip(symbol.iter()) {
                    *v *= if adjoint { s.conj() } else { *s };
                }
                fft2_inplace(&mut buf, *dims, true);
                DVector::from_vec(buf)
            }
            OpKind::FourierSampling { dims, sampled, .. } => {
                if adjoint {
                    let mut buf = vec![Complex64::default(); dims.len()];
                    for (j, &idx) in sampled.iter().enumerate() {
                        buf[idx] = x[j];
                    }
                    fft2_inplace(&mut buf, *dims, true);
                    DVector::from_vec(buf)
                } else {
                    let freq = fft2_vec(x, *dims, false);
                    DVector::from_fn(sampled.len(), |j, _| freq[sampled[j]])
                }
            }
            OpKind::PeriodicGradient { dims } => {
                let (h, w) = (dims.height, dims.width);
                let npix = dims.len();
                if adjoint {
                    let mut out = DVector::from_element(npix, Complex64::default());
                    for r in 0..h {
                        for c in 0..w {
                            let i = r * w + c;
                            let left = r * w + (c + w - 1) % w;
                            let up = ((r + h - 1) % h) * w + c;
                            out[i] = x[left] - x[i] + x[npix + up] - x[npix + i];
                        }
                    }
                    out
                } else {
                    let mut out = DVector::from_element(2 * npix, Complex64::default());
                    for r in 0..h {
                        for c in 0..w {
                            let i = r * w + c;
                            let right = r * w + (c + 1) % w;
                            let down = ((r + 1) % h) * w + c;
                            out[i] = x[right] - x[i];
                            out[npix + i] = x[down] - x[i];
                        }
                    }
                    out
                }
            }
            OpKind::RegistrationJacobian { ix, iy, .. } => {
                let npix = ix.len();
                if adjoint {
                    DVector::from_fn(2 * npix, |i, _| {
                        if i < npix {
                            x[i] * ix[i]
                        } else {
                            x[i - npix] * iy[i - npix]
                        }
                    })
                } else {
                    DVector::from_fn(npix, |i, _| x[i] * ix[i] + x[npix + i] * iy[i])
                }
            }
            OpKind::BlockDiag { blocks } => {
                let out_len = if adjoint { self.n } else { self.m };
                let mut out = DVector::from_element(out_len, Complex64::default());
                let (mut in_off, mut out_off) = (0, 0);
                for b in blocks {
                    let (ilen, olen) = if adjoint {
                        (b.codomain_dim(), b.domain_dim())
                    } else {
                        (b.domain_dim(), b.codomain_dim())
                    };
                    let sub = DVector::from_fn(ilen, |i, _| x[in_off + i]);
                    let y = b.apply(&sub, adjoint)?;
                    for i in 0..olen {
                        out[out_off + i] = y[i];
                    }
                    in_off += ilen;
                    out_off += olen;
                }
                out
            }
        })
    }

    /// Apply the Gram matrix opᴴop.
    pub fn gram_apply(&self, x: &DVector<Complex64>) -> Result<DVector<Complex64>> {
        let y = self.apply(x, false)?;
        self.apply(&y, true)
    }

    /// Per-Fourier-mode Gram symbol, aligned to the row-major frequency grid,
    /// when the Gram matrix is diagonal in a known basis.
    pub fn gram_symbol(&self) -> Option<Vec<f64>> {
        match &self.kind {
            OpKind::Identity => Some(vec![1.0; self.n]),
            OpKind::GaussianBlur { symbol, .. } => {
                Some(symbol.iter().map(|s| s.norm_sqr()).collect())
            }
            OpKind::FourierSampling { mask, .. } => {
                Some(mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
            }
            OpKind::PeriodicGradient { dims } => Some(gradient_symbol(*dims)),
            _ => None,
        }
    }

    pub(crate) fn diag_basis(&self) -> Option<DiagBasis> {
        match &self.kind {
            OpKind::Identity => Some(DiagBasis::Any),
            OpKind::GaussianBlur { dims, .. }
            | OpKind::FourierSampling { dims, .. }
            | OpKind::PeriodicGradient { dims } => Some(DiagBasis::Fourier(*dims)),
            _ => None,
        }
    }

    /// Ascending eigenvalues of opᴴop (explicit where the structure allows,
    /// dense eigendecomposition otherwise).
    pub fn gram_spectrum(&self) -> Result<Spectrum> {
        match &self.kind {
            OpKind::RegistrationJacobian { ix, iy, .. } => {
                // Per-pixel rank-1 blocks: eigenvalues {0, ix^2 + iy^2}.
                let mut vals = vec![0.0; ix.len()];
                vals.extend(ix.iter().zip(iy.iter()).map(|(a, b)| a * a + b * b));
                Ok(Spectrum::sorted(vals, SpectrumOrigin::Explicit))
            }
            OpKind::BlockDiag { blocks } => {
                let mut vals = Vec::with_capacity(self.n);
                for b in blocks {
                    vals.extend(b.gram_spectrum()?.values);
                }
                Ok(Spectrum::sorted(vals, SpectrumOrigin::Explicit))
            }
            OpKind::Dense { mat } => {
                if self.n > MATERIALIZE_CAP {
                    return Err(Error::TooLarge {
                        context: "dense gram_spectrum",
                        size: self.n,
                        cap: MATERIALIZE_CAP,
                    });
                }
                let gram = mat.transpose() * mat;
                let eig = gram.symmetric_eigen();
                Ok(Spectrum::sorted(
                    eig.eigenvalues.iter().copied().collect(),
                    SpectrumOrigin::MaterializedGram,
                ))
            }
            _ => {
                let sym = self
                    .gram_symbol()
                    .ok_or_else(|| Error::UnsupportedKind("gram_spectrum".into()))?;
                Ok(Spectrum::sorted(sym, SpectrumOrigin::FourierSymbol))
            }
        }
    }

    /// Dense matrix M with M x = apply(x) for all basis vectors, capped at
    /// desk scale.
    pub fn materialize(&self) -> Result<DMatrix<Complex64>> {
        if self.n > MATERIALIZE_CAP || self.m * self.n > MATERIALIZE_CAP * MATERIALIZE_CAP {
            return Err(Error::TooLarge {
                context: "materialize",
                size: self.m * self.n,
                cap: MATERIALIZE_CAP * MATERIALIZE_CAP,
            });
        }
        if let OpKind::Dense { mat } = &self.kind {
            return Ok(mat.map(|v| Complex64::new(v, 0.0)));
        }
        let mut out = DMatrix::from_element(self.m, self.n, Complex64::default());
        let mut e = DVector::from_element(self.n, Complex64::default());
        for j in 0..self.n {
            e[j] = Complex64::new(1.0, 0.0);
            let col = self.apply(&e, false)?;
            out.set_column(j, &col);
            e[j] = Complex64::default();
        }
        Ok(out)
    }

    /// Real part of the materialized matrix; errors if the operator is
    /// genuinely complex.
    pub fn materialize_real(&self) -> Result<DMatrix<f64>> {
        if self.field() == Field::Complex {
            return Err(Error::UnsupportedKind(
                "materialize_real on complex operator".into(),
            ));
        }
        let m = self.materialize()?;
        Ok(m.map(|c| c.re))
    }
}

/// Promote a real slice to a complex vector.
pub fn complexify(x: &[f64]) -> DVector<Complex64> {
    DVector::from_fn(x.len(), |i, _| Complex64::new(x[i], 0.0))
}
