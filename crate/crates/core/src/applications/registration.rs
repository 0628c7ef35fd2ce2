//! Diffeomorphic registration: per outer iteration, a linearized optical-flow
//! LQP is tuned and solved for a velocity field, which is integrated by Euler
//! composition and chained onto the running deformation.
//!
//! Deformations store absolute pixel coordinates (identity = the pixel grid);
//! warping samples bilinearly with border clamping.

use nalgebra::DVector;
use num_complex::Complex64;

use super::{ExperimentReport, ImageGrid};
use crate::error::{Error, Result};
use crate::lqp::LQProblem;
use crate::operators::{complexify, GridDims, LinearOperator};
use crate::solvers::{solve_with_reference, SolverParams};
use crate::tuning::{tune_theta, ObjectiveKind, TunerConfig};

/// Per-pixel displacement step, capped so each Euler sub-step stays well
/// inside the diffeomorphic regime.
const MAX_SUBSTEP: f64 = 0.4;

#[derive(Debug, Clone)]
pub struct VelocityField {
    pub v_x: Vec<f64>,
    pub v_y: Vec<f64>,
    pub dims: GridDims,
}

impl VelocityField {
    pub fn new(v_x: Vec<f64>, v_y: Vec<f64>, dims: GridDims) -> Result<Self> {
        if v_x.len() != dims.len() {
            return Err(Error::dim("velocity v_x", dims.len(), v_x.len()));
        }
        if v_y.len() != dims.len() {
            return Err(Error::dim("velocity v_y", dims.len(), v_y.len()));
        }
        Ok(VelocityField { v_x, v_y, dims })
    }
}

/// Absolute-coordinate deformation: pixel (r, c) maps to (phi_y, phi_x).
#[derive(Debug, Clone)]
pub struct DeformationField {
    pub phi_x: Vec<f64>,
    pub phi_y: Vec<f64>,
    pub dims: GridDims,
}

impl DeformationField {
    pub fn identity(dims: GridDims) -> Self {
        let mut phi_x = Vec::with_capacity(dims.len());
        let mut phi_y = Vec::with_capacity(dims.len());
        for r in 0..dims.height {
            for c in 0..dims.width {
                phi_x.push(c as f64);
                phi_y.push(r as f64);
            }
        }
        DeformationField { phi_x, phi_y, dims }
    }
}

fn bilinear(data: &[f64], dims: GridDims, y: f64, x: f64) -> f64 {
    let (h, w) = (dims.height, dims.width);
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    let v00 = data[y0 * w + x0];
    let v01 = data[y0 * w + x1];
    let v10 = data[y1 * w + x0];
    let v11 = data[y1 * w + x1];
    (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11)
}

/// Resample `image` at the deformation's coordinates.
pub fn warp_image(image: &ImageGrid, phi: &DeformationField) -> ImageGrid {
    let dims = image.dims;
    let data = (0..dims.len())
        .map(|i| bilinear(&image.data, dims, phi.phi_y[i], phi.phi_x[i]))
        .collect();
    ImageGrid { dims, data }
}

/// N-fold Euler composition of a stationary velocity field:
/// phi = (Id + v/N) o ... o (Id + v/N).
pub fn compose_deformation(v: &VelocityField, n: usize) -> DeformationField {
    let n = n.max(1);
    let dims = v.dims;
    let npix = dims.len();
    let inv_n = 1.0 / n as f64;
    let mut phi = DeformationField::identity(dims);
    for _ in 0..n {
        let mut next_x = Vec::with_capacity(npix);
        let mut next_y = Vec::with_capacity(npix);
        for i in 0..npix {
            let (r, c) = (i / dims.width, i % dims.width);
            let sx = c as f64 + v.v_x[i] * inv_n;
            let sy = r as f64 + v.v_y[i] * inv_n;
            next_x.push(bilinear(&phi.phi_x, dims, sy, sx));
            next_y.push(bilinear(&phi.phi_y, dims, sy, sx));
        }
        phi.phi_x = next_x;
        phi.phi_y = next_y;
    }
    phi
}

/// outer o inner, sampling the outer field at the inner's coordinates.
pub fn compose_fields(outer: &DeformationField, inner: &DeformationField) -> DeformationField {
    let dims = outer.dims;
    let npix = dims.len();
    let mut phi_x = Vec::with_capacity(npix);
    let mut phi_y = Vec::with_capacity(npix);
    for i in 0..npix {
        phi_x.push(bilinear(&outer.phi_x, dims, inner.phi_y[i], inner.phi_x[i]));
        phi_y.push(bilinear(&outer.phi_y, dims, inner.phi_y[i], inner.phi_x[i]));
    }
    DeformationField { phi_x, phi_y, dims }
}

/// Per-pixel determinant of the 2x2 difference Jacobian of the deformation;
/// central differences inside, one-sided at the borders, so the identity
/// field maps to exactly 1 everywhere.
pub fn jacobian_determinant(phi: &DeformationField) -> Vec<f64> {
    let dims = phi.dims;
    let (h, w) = (dims.height, dims.width);
    let diff_x = |data: &[f64], r: usize, c: usize| -> f64 {
        if w == 1 {
            1.0
        } else if c == 0 {
            data[r * w + 1] - data[r * w]
        } else if c == w - 1 {
            data[r * w + c] - data[r * w + c - 1]
        } else {
            (data[r * w + c + 1] - data[r * w + c - 1]) / 2.0
        }
    };
    let diff_y = |data: &[f64], r: usize, c: usize| -> f64 {
        if h == 1 {
            1.0
        } else if r == 0 {
            data[w + c] - data[c]
        } else if r == h - 1 {
            data[r * w + c] - data[(r - 1) * w + c]
        } else {
            (data[(r + 1) * w + c] - data[(r - 1) * w + c]) / 2.0
        }
    };
    let mut det = Vec::with_capacity(dims.len());
    for r in 0..h {
        for c in 0..w {
            let dxx = diff_x(&phi.phi_x, r, c);
            let dxy = diff_y(&phi.phi_x, r, c);
            let dyx = diff_x(&phi.phi_y, r, c);
            let dyy = diff_y(&phi.phi_y, r, c);
            det.push(dxx * dyy - dxy * dyx);
        }
    }
    det
}

/// Central-difference image gradients with replicated borders.
fn gradients(image: &ImageGrid) -> (Vec<f64>, Vec<f64>) {
    let dims = image.dims;
    let (h, w) = (dims.height, dims.width);
    let mut ix = Vec::with_capacity(dims.len());
    let mut iy = Vec::with_capacity(dims.len());
    for r in 0..h {
        for c in 0..w {
            let cl = c.saturating_sub(1);
            let cr = (c + 1).min(w - 1);
            let ru = r.saturating_sub(1);
            let rd = (r + 1).min(h - 1);
            ix.push((image.get(r, cr) - image.get(r, cl)) / 2.0);
            iy.push((image.get(rd, c) - image.get(ru, c)) / 2.0);
        }
    }
    (ix, iy)
}

/// Two-loop registration: outer warping iterations around tuned inner
/// ADMM/oADMM solves of the linearized flow problem. Returns the final
/// deformation and a report carrying the last inner traces, per-outer tuned
/// parameters and Jacobian checks.
pub fn register(
    source: &ImageGrid,
    target: &ImageGrid,
    mu: f64,
    integration_steps: usize,
    outer_iters: usize,
) -> Result<(DeformationField, ExperimentReport)> {
    if source.dims != target.dims {
        return Err(Error::dim(
            "registration images",
            source.dims.len(),
            target.dims.len(),
        ));
    }
    if integration_steps == 0 || outer_iters == 0 {
        return Err(Error::InvalidParameter(
            "registration needs at least one integration step and outer iteration".into(),
        ));
    }
    let dims = source.dims;
    let npix = dims.len();
    let mut phi = DeformationField::identity(dims);
    let mut report = ExperimentReport {
        problem_descriptor: format!(
            "registration {}x{}: mu {mu}, {integration_steps} Euler steps, {outer_iters} outer iterations",
            dims.height, dims.width
        ),
        tuned: vec![],
        traces: vec![],
        summary: vec![],
        notes: vec![],
        images: vec![],
    };
    let mut prev_theta: Option<f64> = None;
    let n_f = integration_steps as f64;
    for outer in 0..outer_iters {
        let warped = warp_image(source, &phi);
        let (gx, gy) = gradients(&warped);
        let residual: Vec<f64> = warped
            .data
            .iter()
            .zip(target.data.iter())
            .map(|(a, b)| -(a - b))
            .collect();
        let a = LinearOperator::registration_jacobian(gx, gy, dims)?;
        let l = LinearOperator::block_diag(vec![
            LinearOperator::periodic_gradient(dims),
            LinearOperator::periodic_gradient(dims),
        ])?;
        let problem = LQProblem::new(a, l, mu, complexify(&residual))?;

        let mut cfg = TunerConfig::for_mu(mu);
        cfg.multistart_count = 1;
        cfg.max_iters = 30;
        cfg.grad_tol = 1e-4;
        if let Some(t) = prev_theta {
            // Warm start: penalties drift little between warps.
            cfg.theta_init = t;
            cfg.step_size = t / 10.0;
        }
        let tuned = tune_theta(&problem, ObjectiveKind::Joint, &cfg)?;
        let theta = tuned.theta_star;
        let alpha = tuned.alpha_star.expect("joint tuning sets alpha");
        prev_theta = Some(theta);
        report.tuned.push((format!("outer-{outer}"), tuned));

        let gt = problem.ground_truth()?;
        let zero = DVector::from_element(2 * npix, Complex64::default());
        let mut pa = SolverParams::admm(theta);
        pa.max_iters = 100;
        let mut po = SolverParams::oadmm(theta, alpha);
        po.max_iters = 100;
        let (_, trace_admm) = solve_with_reference(&problem, &pa, &zero, &zero, &gt.u_star)?;
        let (sol, trace_oadmm) = solve_with_reference(&problem, &po, &zero, &zero, &gt.u_star)?;
        report.traces = vec![
            ("admm".into(), trace_admm),
            ("oadmm".into(), trace_oadmm),
        ];

        let mut v_x: Vec<f64> = (0..npix).map(|i| sol[i].re).collect();
        let mut v_y: Vec<f64> = (0..npix).map(|i| sol[npix + i].re).collect();
        let vmax = v_x
            .iter()
            .chain(v_y.iter())
            .fold(0.0f64, |m, &v| m.max(v.abs()));
        if vmax / n_f > MAX_SUBSTEP {
            let scale = MAX_SUBSTEP * n_f / vmax;
            for v in v_x.iter_mut().chain(v_y.iter_mut()) {
                *v *= scale;
            }
            report
                .notes
                .push(format!("outer {outer}: velocity scaled by {scale:.4}"));
        }
        let v = VelocityField::new(v_x, v_y, dims)?;
        let dphi = compose_deformation(&v, integration_steps);
        phi = compose_fields(&phi, &dphi);
        let min_det = jacobian_determinant(&phi)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        report.notes.push(format!(
            "outer {outer}: theta* {theta:.6e}, alpha* {alpha:.4}, min Jacobian determinant {min_det:.6}"
        ));
        if min_det <= 0.0 {
            return Err(Error::Domain(format!(
                "deformation lost invertibility at outer iteration {outer}: min det {min_det}"
            )));
        }
    }
    report.images.push(("warped".into(), warp_image(source, &phi)));
    report.summarize();
    Ok((phi, report))
}
