//! Jacobian-vector and vector-Jacobian products of the forward, adjoint,
//! Gram, and regularized-inverse operators with respect to both the image
//! and the trajectory.
//!
//! Conventions:
//!
//! - A trajectory tangent `u` is a flat sample-major `M x D` real matrix;
//!   JVPs return true directional derivatives along `u`.
//! - Every `*_vjp_omega` is the *exact real-inner-product transpose* of
//!   its JVP: `<u, vjp(v)> = Re <v, jvp(u)>` for all probes, to machine
//!   precision, independent of how accurate the underlying transform is.
//! - Gradients of a real scalar loss follow from the transposition rule:
//!   if `g = 2 dL/dz*` is the real-gradient cotangent of the operator
//!   output `z`, then `vjp_omega(.., g)` is exactly `dL/d omega`. The
//!   image-side pullbacks map `dL/d(out)*` to `dL/d(in)*` unscaled, since
//!   the operators are holomorphic in their complex inputs.
//!
//! Every product is assembled from a constant number of forward/adjoint
//! applications and elementwise work, so auxiliary memory does not grow
//! with any iteration count — including the regularized-inverse path,
//! where conjugate gradient solves replace stored iterates.

use num_complex::Complex64;

use crate::mri::Regularizer;
use crate::solvers::{cg_solve, CgReport};
use crate::system::SystemOp;
use crate::{Error, Result};

/// Gradient pair of a real loss under the Wirtinger convention: the
/// conjugate-coordinate gradient for the complex input and the plain real
/// gradient for the trajectory.
#[derive(Debug, Clone)]
pub struct WirtingerGrad {
    /// `dL/d(input)*`; finite differences over the real/imaginary part of
    /// an input entry equal twice the real/imaginary part of this value.
    pub wrt_input_conj: Vec<Complex64>,
    /// `dL/d omega`, flat sample-major `M x D`, real.
    pub wrt_omega: Vec<f64>,
}

/// Conjugate-gradient settings for the regularized-inverse paths.
#[derive(Debug, Clone, Copy)]
pub struct CgConfig {
    pub tol: f64,
    pub max_iters: usize,
    /// When set, a solve that exits above tolerance is an error instead
    /// of a reported residual.
    pub strict: bool,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iters: 100,
            strict: true,
        }
    }
}

impl CgConfig {
    /// Fixed-iteration reconstruction profile (no convergence error).
    pub fn recon(iters: usize) -> Self {
        Self {
            tol: 1e-9,
            max_iters: iters,
            strict: false,
        }
    }

    /// Tight solves for oracle comparisons.
    pub fn tight() -> Self {
        Self {
            tol: 1e-13,
            max_iters: 500,
            strict: true,
        }
    }
}

fn check_tangent(op: &dyn SystemOp, u: &[f64]) -> Result<()> {
    let want = op.m() * op.traj().ndim();
    if u.len() != want {
        return Err(Error::ShapeMismatch(format!(
            "trajectory tangent length {} does not match M x D = {want}",
            u.len()
        )));
    }
    Ok(())
}

/// Image tangent to k-space tangent: `E dx`.
pub fn forward_jvp_x(op: &dyn SystemOp, dx: &[Complex64]) -> Result<Vec<Complex64>> {
    op.forward(dx)
}

/// Pullback of a k-space cotangent to the image: `E' v`.
pub fn forward_vjp_x(op: &dyn SystemOp, v: &[Complex64]) -> Result<Vec<Complex64>> {
    op.adjoint(v)
}

/// Directional derivative of `E(omega) x` along a trajectory tangent:
/// `-i sum_d u_d .* E(x .* r_d)`, where the per-sample tangent broadcasts
/// across coils.
pub fn forward_jvp_omega(
    op: &dyn SystemOp,
    x: &[Complex64],
    u: &[f64],
) -> Result<Vec<Complex64>> {
    check_tangent(op, u)?;
    let grid = op.grid();
    let ndim = grid.ndim();
    let m = op.m();
    let mut out = vec![Complex64::default(); op.m_total()];
    for d in 0..ndim {
        let exr = op.forward(&grid.mul_coord(x, d))?;
        for (idx, val) in exr.iter().enumerate() {
            let l = idx % m;
            // -i * u * val
            out[idx] += Complex64::new(0.0, -u[l * ndim + d]) * val;
        }
    }
    Ok(out)
}

/// Transpose of [`forward_jvp_omega`]: column `d` is
/// `sum_coils Re( conj(-i E(x .* r_d)) .* v )`.
pub fn forward_vjp_omega(op: &dyn SystemOp, x: &[Complex64], v: &[Complex64]) -> Result<Vec<f64>> {
    op.check_kspace(v)?;
    let grid = op.grid();
    let ndim = grid.ndim();
    let m = op.m();
    let mut out = vec![0.0; m * ndim];
    for d in 0..ndim {
        let exr = op.forward(&grid.mul_coord(x, d))?;
        for (idx, val) in exr.iter().enumerate() {
            let l = idx % m;
            // Re( conj(-i val) v ) = Re( i conj(val) v ).
            out[l * ndim + d] += (Complex64::new(0.0, 1.0) * val.conj() * v[idx]).re;
        }
    }
    Ok(out)
}

/// Directional derivative of `E'(omega) y`:
/// `sum_d (i r_d) .* E'(u_d .* y)`.
pub fn adjoint_jvp_omega(op: &dyn SystemOp, y: &[Complex64], u: &[f64]) -> Result<Vec<Complex64>> {
    op.check_kspace(y)?;
    check_tangent(op, u)?;
    let grid = op.grid();
    let ndim = grid.ndim();
    let m = op.m();
    let mut out = vec![Complex64::default(); op.n()];
    for d in 0..ndim {
        let weighted: Vec<Complex64> = y
            .iter()
            .enumerate()
            .map(|(idx, &yv)| yv * u[(idx % m) * ndim + d])
            .collect();
        let img = op.adjoint(&weighted)?;
        for (j, val) in img.iter().enumerate() {
            out[j] += Complex64::new(0.0, grid.coord_at(j, d)) * val;
        }
    }
    Ok(out)
}

/// Transpose of [`adjoint_jvp_omega`] against an image cotangent `v`:
/// column `d` is `sum_coils Re( i conj(E(r_d .* v)) .* y )`.
pub fn adjoint_vjp_omega(op: &dyn SystemOp, y: &[Complex64], v: &[Complex64]) -> Result<Vec<f64>> {
    op.check_kspace(y)?;
    op.check_image(v)?;
    let grid = op.grid();
    let ndim = grid.ndim();
    let m = op.m();
    let mut out = vec![0.0; m * ndim];
    for d in 0..ndim {
        let t = op.forward(&grid.mul_coord(v, d))?;
        for (idx, val) in t.iter().enumerate() {
            let l = idx % m;
            out[l * ndim + d] += (Complex64::new(0.0, 1.0) * val.conj() * y[idx]).re;
        }
    }
    Ok(out)
}

/// Pullback of an image cotangent through `y -> E' y`: returns `E v`.
pub fn adjoint_vjp_y(op: &dyn SystemOp, v: &[Complex64]) -> Result<Vec<Complex64>> {
    op.forward(v)
}

/// Directional derivative of the Gram application `E'E x`:
/// `sum_d [ -i E'(u_d .* E(x .* r_d)) + (i r_d) .* E'(u_d .* E x) ]`.
pub fn gram_jvp_omega(op: &dyn SystemOp, x: &[Complex64], u: &[f64]) -> Result<Vec<Complex64>> {
    op.check_image(x)?;
    check_tangent(op, u)?;
    let grid = op.grid();
    let ndim = grid.ndim();
    let m = op.m();
    let ex = op.forward(x)?;
    let mut out = vec![Complex64::default(); op.n()];
    for d in 0..ndim {
        let exr = op.forward(&grid.mul_coord(x, d))?;
        let w1: Vec<Complex64> = exr
            .iter()
            .enumerate()
            .map(|(idx, &t)| t * u[(idx % m) * ndim + d])
            .collect();
        let term1 = op.adjoint(&w1)?;
        let w2: Vec<Complex64> = ex
            .iter()
            .enumerate()
            .map(|(idx, &t)| t * u[(idx % m) * ndim + d])
            .collect();
        let term2 = op.adjoint(&w2)?;
        for (j, o) in out.iter_mut().enumerate() {
            *o += Complex64::new(0.0, -1.0) * term1[j]
                + Complex64::new(0.0, grid.coord_at(j, d)) * term2[j];
        }
    }
    Ok(out)
}

/// Transpose of [`gram_jvp_omega`] against an image cotangent `v`:
/// column `d` sums `Re(-i conj(E v) .* E(x .* r_d))` and
/// `Re(i conj(E(r_d .* v)) .* E x)` over coils.
pub fn gram_vjp_omega(op: &dyn SystemOp, x: &[Complex64], v: &[Complex64]) -> Result<Vec<f64>> {
    op.check_image(x)?;
    op.check_image(v)?;
    let grid = op.grid();
    let ndim = grid.ndim();
    let m = op.m();
    let ex = op.forward(x)?;
    let ev = op.forward(v)?;
    let mut out = vec![0.0; m * ndim];
    for d in 0..ndim {
        let exr = op.forward(&grid.mul_coord(x, d))?;
        let evr = op.forward(&grid.mul_coord(v, d))?;
        for idx in 0..exr.len() {
            let l = idx % m;
            let term1 = (Complex64::new(0.0, -1.0) * ev[idx].conj() * exr[idx]).re;
            let term2 = (Complex64::new(0.0, 1.0) * evr[idx].conj() * ex[idx]).re;
            out[l * ndim + d] += term1 + term2;
        }
    }
    Ok(out)
}

/// Applies `F = E'E + lambda T'T` once.
pub fn psd_apply(
    op: &dyn SystemOp,
    lambda: f64,
    t: &Regularizer,
    x: &[Complex64],
) -> Result<Vec<Complex64>> {
    let mut out = op.adjoint(&op.forward(x)?)?;
    let reg = t.gram(op.grid(), x)?;
    for (o, r) in out.iter_mut().zip(&reg) {
        *o += r * lambda;
    }
    Ok(out)
}

/// Solves `(E'E + lambda T'T) z = x` by conjugate gradient.
pub fn psd_inverse_apply(
    op: &dyn SystemOp,
    lambda: f64,
    t: &Regularizer,
    x: &[Complex64],
    x0: Option<&[Complex64]>,
    cg: &CgConfig,
) -> Result<(Vec<Complex64>, CgReport)> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "regularization weight must be positive, got {lambda}"
        )));
    }
    op.check_image(x)?;
    let (z, report) = cg_solve(
        |p| psd_apply(op, lambda, t, p),
        x,
        x0,
        cg.tol,
        cg.max_iters,
    )?;
    if cg.strict && !report.converged {
        return Err(Error::NonConvergence(format!(
            "CG stopped at relative residual {:.3e} after {} iterations",
            report.relative_residual, report.iterations
        )));
    }
    Ok((z, report))
}

/// Pullback of an image cotangent through `x -> F^{-1} x`: one more CG
/// solve, since `F` is Hermitian.
pub fn psd_inverse_vjp_x(
    op: &dyn SystemOp,
    lambda: f64,
    t: &Regularizer,
    v: &[Complex64],
    cg: &CgConfig,
) -> Result<Vec<Complex64>> {
    Ok(psd_inverse_apply(op, lambda, t, v, None, cg)?.0)
}

/// Directional derivative of `z(omega) = F^{-1} x` along `u`:
/// `-F^{-1} (gram_jvp_omega at z applied to u)`, using that `T` does not
/// depend on the trajectory.
pub fn psd_inverse_jvp_omega(
    op: &dyn SystemOp,
    lambda: f64,
    t: &Regularizer,
    x: &[Complex64],
    u: &[f64],
    cg: &CgConfig,
) -> Result<Vec<Complex64>> {
    let (z, _) = psd_inverse_apply(op, lambda, t, x, None, cg)?;
    let inner = gram_jvp_omega(op, &z, u)?;
    let (mut dz, _) = psd_inverse_apply(op, lambda, t, &inner, None, cg)?;
    for v in dz.iter_mut() {
        *v = -*v;
    }
    Ok(dz)
}

/// Transpose of [`psd_inverse_jvp_omega`]: with `z = F^{-1} x` and
/// `w = F^{-1} v`, the gradient is `-gram_vjp_omega(z, w)`.
///
/// Two CG solves and a constant number of transform applications; peak
/// auxiliary storage is a fixed set of length-N/M vectors regardless of
/// the iteration budget.
pub fn psd_inverse_vjp_omega(
    op: &dyn SystemOp,
    lambda: f64,
    t: &Regularizer,
    x: &[Complex64],
    v: &[Complex64],
    cg: &CgConfig,
) -> Result<Vec<f64>> {
    let (z, _) = psd_inverse_apply(op, lambda, t, x, None, cg)?;
    let (w, _) = psd_inverse_apply(op, lambda, t, v, None, cg)?;
    let mut g = gram_vjp_omega(op, &z, &w)?;
    for q in g.iter_mut() {
        *q = -*q;
    }
    Ok(g)
}

/// Gradient of the scalar probe `L = ||E x||^2` with respect to `x*` and
/// the trajectory.
pub fn energy_probe_forward(op: &dyn SystemOp, x: &[Complex64]) -> Result<WirtingerGrad> {
    let ex = op.forward(x)?;
    let wrt_input_conj = op.adjoint(&ex)?;
    let cot: Vec<Complex64> = ex.iter().map(|&v| v * 2.0).collect();
    let wrt_omega = forward_vjp_omega(op, x, &cot)?;
    Ok(WirtingerGrad {
        wrt_input_conj,
        wrt_omega,
    })
}

/// Gradient of `L = ||E' y||^2` with respect to `y*` and the trajectory.
pub fn energy_probe_adjoint(op: &dyn SystemOp, y: &[Complex64]) -> Result<WirtingerGrad> {
    let ety = op.adjoint(y)?;
    let wrt_input_conj = op.forward(&ety)?;
    let cot: Vec<Complex64> = ety.iter().map(|&v| v * 2.0).collect();
    let wrt_omega = adjoint_vjp_omega(op, y, &cot)?;
    Ok(WirtingerGrad {
        wrt_input_conj,
        wrt_omega,
    })
}

/// Gradient of `L = ||E'E x||^2` with respect to `x*` and the trajectory.
pub fn energy_probe_gram(op: &dyn SystemOp, x: &[Complex64]) -> Result<WirtingerGrad> {
    let gx = op.adjoint(&op.forward(x)?)?;
    let wrt_input_conj = op.adjoint(&op.forward(&gx)?)?;
    let cot: Vec<Complex64> = gx.iter().map(|&v| v * 2.0).collect();
    let wrt_omega = gram_vjp_omega(op, x, &cot)?;
    Ok(WirtingerGrad {
        wrt_input_conj,
        wrt_omega,
    })
}

/// Gradient of `L = ||F^{-1} x||^2` with respect to `x*` and the
/// trajectory, where `F = E'E + lambda T'T`.
pub fn energy_probe_psd_inverse(
    op: &dyn SystemOp,
    lambda: f64,
    t: &Regularizer,
    x: &[Complex64],
    cg: &CgConfig,
) -> Result<WirtingerGrad> {
    let (z, _) = psd_inverse_apply(op, lambda, t, x, None, cg)?;
    let (wrt_input_conj, _) = psd_inverse_apply(op, lambda, t, &z, None, cg)?;
    let cot: Vec<Complex64> = z.iter().map(|&v| v * 2.0).collect();
    let (w, _) = psd_inverse_apply(op, lambda, t, &cot, None, cg)?;
    let mut wrt_omega = gram_vjp_omega(op, &z, &w)?;
    for q in wrt_omega.iter_mut() {
        *q = -*q;
    }
    Ok(WirtingerGrad {
        wrt_input_conj,
        wrt_omega,
    })
}
