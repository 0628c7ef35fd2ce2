//! Unitary 2D discrete Fourier transforms on row-major grids.
//!
//! All DFT-diagonalized operators in this crate share the same convention:
//! the transform is unitary (scaled by 1/sqrt(h*w) in both directions), so
//! F^H F = I and adjoints of Fourier-domain diagonals are plain conjugates.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DVector;
use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::operators::GridDims;

fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    static PLANS: OnceLock<Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>> = OnceLock::new();
    let cache = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (len, direction == FftDirection::Forward);
    let mut guard = cache.lock().unwrap();
    if let Some(p) = guard.get(&key) {
        return Arc::clone(p);
    }
    let mut planner = FftPlanner::new();
    let p = planner.plan_fft(len, direction);
    guard.insert(key, Arc::clone(&p));
    p
}

/// In-place unitary 2D FFT of a row-major `h x w` grid.
pub fn fft2_inplace(data: &mut [Complex64], dims: GridDims, inverse: bool) {
    let (h, w) = (dims.height, dims.width);
    assert_eq!(data.len(), h * w, "fft2 buffer size");
    let dir = if inverse {
        FftDirection::Inverse
    } else {
        FftDirection::Forward
    };
    let row_fft = plan(w, dir);
    for r in 0..h {
        row_fft.process(&mut data[r * w..(r + 1) * w]);
    }
    let col_fft = plan(h, dir);
    let mut col = vec![Complex64::default(); h];
    for c in 0..w {
        for r in 0..h {
            col[r] = data[r * w + c];
        }
        col_fft.process(&mut col);
        for r in 0..h {
            data[r * w + c] = col[r];
        }
    }
    let scale = 1.0 / ((h * w) as f64).sqrt();
    for v in data.iter_mut() {
        *v *= scale;
    }
}

pub fn fft2_vec(x: &DVector<Complex64>, dims: GridDims, inverse: bool) -> DVector<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().copied().collect();
    fft2_inplace(&mut buf, dims, inverse);
    DVector::from_vec(buf)
}

/// Fourier symbol of the periodic first-order gradient Gram matrix:
/// G(p, q) = (2 - 2cos(2*pi*p/h)) + (2 - 2cos(2*pi*q/w)), row-major.
pub fn gradient_symbol(dims: GridDims) -> Vec<f64> {
    let (h, w) = (dims.height, dims.width);
    let mut g = Vec::with_capacity(h * w);
    for p in 0..h {
        let gp = 2.0 - 2.0 * (2.0 * std::f64::consts::PI * p as f64 / h as f64).cos();
        for q in 0..w {
            let gq = 2.0 - 2.0 * (2.0 * std::f64::consts::PI * q as f64 / w as f64).cos();
            g.push(gp + gq);
        }
    }
    g
}
