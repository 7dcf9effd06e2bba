//! Generic iterative machinery: conjugate gradient for Hermitian PSD
//! systems, an orthogonal Haar wavelet transform, the proximal optimized
//! gradient method for l1-regularized least squares, and Adam.

use num_complex::Complex64;

use crate::{Error, Result};

/// Outcome of a conjugate-gradient solve.
#[derive(Debug, Clone, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

fn dot_re(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x.conj() * y).re).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Conjugate gradient for `F x = rhs` with `F` Hermitian positive
/// semidefinite (positive definite on the solution subspace). Stops at
/// `||rhs - F x|| / ||rhs|| <= tol` or after `max_iters` iterations;
/// zero-curvature directions are reported as [`Error::Breakdown`],
/// distinct from running out of iterations.
pub fn cg_solve<F>(
    mut apply: F,
    rhs: &[Complex64],
    x0: Option<&[Complex64]>,
    tol: f64,
    max_iters: usize,
) -> Result<(Vec<Complex64>, CgReport)>
where
    F: FnMut(&[Complex64]) -> Result<Vec<Complex64>>,
{
    let n = rhs.len();
    let rhs_norm = norm(rhs);
    if rhs_norm == 0.0 {
        return Ok((
            vec![Complex64::default(); n],
            CgReport {
                iterations: 0,
                relative_residual: 0.0,
                converged: true,
            },
        ));
    }

    let mut x = match x0 {
        Some(v) => {
            if v.len() != n {
                return Err(Error::ShapeMismatch("cg initial guess length mismatch".into()));
            }
            v.to_vec()
        }
        None => vec![Complex64::default(); n],
    };
    let mut r = if x.iter().all(|v| *v == Complex64::default()) {
        rhs.to_vec()
    } else {
        let fx = apply(&x)?;
        rhs.iter().zip(&fx).map(|(b, a)| b - a).collect()
    };
    let mut p = r.clone();
    let mut rr: f64 = r.iter().map(|v| v.norm_sqr()).sum();

    let mut iterations = 0;
    while iterations < max_iters {
        if rr.sqrt() / rhs_norm <= tol {
            break;
        }
        let fp = apply(&p)?;
        let curvature = dot_re(&p, &fp);
        if !(curvature > 0.0) {
            return Err(Error::Breakdown(format!(
                "zero or negative curvature {curvature:.3e} at iteration {iterations}"
            )));
        }
        let alpha = rr / curvature;
        for ((xv, pv), (rv, fv)) in x.iter_mut().zip(&p).zip(r.iter_mut().zip(&fp)) {
            *xv += pv * alpha;
            *rv -= fv * alpha;
        }
        let rr_next: f64 = r.iter().map(|v| v.norm_sqr()).sum();
        let beta = rr_next / rr;
        for (pv, rv) in p.iter_mut().zip(&r) {
            *pv = rv + *pv * beta;
        }
        rr = rr_next;
        iterations += 1;
    }

    let relative_residual = rr.sqrt() / rhs_norm;
    Ok((
        x,
        CgReport {
            iterations,
            relative_residual,
            converged: relative_residual <= tol,
        },
    ))
}

/// Complex soft threshold: `v * max(|v| - tau, 0) / |v|`.
pub fn soft_threshold(v: &[Complex64], tau: f64) -> Vec<Complex64> {
    debug_assert!(tau >= 0.0);
    v.iter()
        .map(|&z| {
            let mag = z.norm();
            if mag <= tau {
                Complex64::default()
            } else {
                z * ((mag - tau) / mag)
            }
        })
        .collect()
}

/// Multi-level orthogonal Haar transform on a flat row-major array.
///
/// Each level rotates adjacent pairs into sum/difference channels scaled
/// by `1/sqrt(2)`; an odd trailing element passes through to the
/// approximation channel unchanged. Every level is therefore exactly
/// orthogonal for any length — no padding — and the full transform
/// preserves norms to machine precision.
#[derive(Debug, Clone)]
pub struct HaarDwt {
    dims: Vec<usize>,
    levels: usize,
}

pub const HAAR_DEFAULT_LEVELS: usize = 3;

impl HaarDwt {
    pub fn new(dims: &[usize], levels: usize) -> Self {
        Self {
            dims: dims.to_vec(),
            levels,
        }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Analysis: image to wavelet coefficients.
    pub fn forward(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.len(), "haar input length mismatch");
        let mut data = x.to_vec();
        let mut cur = self.dims.clone();
        for _ in 0..self.levels {
            for d in 0..self.dims.len() {
                self.pass_dim(&mut data, &cur, d, false);
            }
            for c in cur.iter_mut() {
                *c = (*c + 1) / 2;
            }
        }
        data
    }

    /// Synthesis: exact inverse of [`HaarDwt::forward`].
    pub fn inverse(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(coeffs.len(), self.len(), "haar input length mismatch");
        let mut data = coeffs.to_vec();
        // Recreate the per-level block sizes, then undo levels in reverse.
        let mut sizes = vec![self.dims.clone()];
        for l in 0..self.levels {
            let next: Vec<usize> = sizes[l].iter().map(|&c| (c + 1) / 2).collect();
            sizes.push(next);
        }
        for l in (0..self.levels).rev() {
            let cur = &sizes[l];
            for d in (0..self.dims.len()).rev() {
                self.pass_dim(&mut data, cur, d, true);
            }
        }
        data
    }

    /// One orthogonal pairing pass along dimension `d` of the leading
    /// `block` region.
    fn pass_dim(&self, data: &mut [Complex64], block: &[usize], d: usize, inverse: bool) {
        let n = block[d];
        if n < 2 {
            return;
        }
        let stride: usize = self.dims[..d].iter().product();
        let half = n / 2;
        let na = (n + 1) / 2;
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;

        let mut line = vec![Complex64::default(); n];
        self.for_each_line(block, d, |base| {
            for (k, v) in line.iter_mut().enumerate() {
                *v = data[base + k * stride];
            }
            if !inverse {
                for k in 0..half {
                    let a = line[2 * k];
                    let b = line[2 * k + 1];
                    data[base + k * stride] = (a + b) * inv_sqrt2;
                    data[base + (na + k) * stride] = (a - b) * inv_sqrt2;
                }
                if n % 2 == 1 {
                    data[base + (na - 1) * stride] = line[n - 1];
                }
            } else {
                for k in 0..half {
                    let s = line[k];
                    let t = line[na + k];
                    data[base + 2 * k * stride] = (s + t) * inv_sqrt2;
                    data[base + (2 * k + 1) * stride] = (s - t) * inv_sqrt2;
                }
                if n % 2 == 1 {
                    data[base + (n - 1) * stride] = line[na - 1];
                }
            }
        });
    }

    /// Visits the base flat index of every line along dim `d` within the
    /// leading block region.
    fn for_each_line(&self, block: &[usize], d: usize, mut f: impl FnMut(usize)) {
        let ndim = self.dims.len();
        let mut idx = vec![0usize; ndim];
        loop {
            let mut base = 0usize;
            let mut stride = 1usize;
            for (k, &nd) in self.dims.iter().enumerate() {
                if k != d {
                    base += idx[k] * stride;
                }
                stride *= nd;
            }
            f(base);
            // Odometer over the non-d dims of the block.
            let mut k = 0;
            loop {
                if k == ndim {
                    return;
                }
                if k == d {
                    k += 1;
                    continue;
                }
                idx[k] += 1;
                if idx[k] < block[k] {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }
}

/// Scalars of one POGM iteration, recorded for reverse-mode replay.
#[derive(Debug, Clone, Copy)]
pub struct PogmCoeffs {
    pub beta: f64,
    pub gamma: f64,
    pub c3: f64,
    /// Prox step `zeta_k`; the shrink threshold is `lambda * zeta_k`.
    pub zeta: f64,
    pub restarted: bool,
}

/// Forward-pass record sufficient to replay POGM in reverse: the full
/// iterate and prox-input sequences plus the per-iteration scalars.
#[derive(Debug, Default)]
pub struct PogmTrace {
    pub x: Vec<Vec<Complex64>>,
    pub z: Vec<Vec<Complex64>>,
    pub coeffs: Vec<PogmCoeffs>,
    pub lipschitz: f64,
}

#[derive(Debug, Clone)]
pub struct PogmOptions {
    pub iters: usize,
    pub lambda: f64,
    /// Data-term Lipschitz constant; power-iterated when absent.
    pub lipschitz: Option<f64>,
    pub restart: bool,
}

impl PogmOptions {
    pub fn new(iters: usize, lambda: f64) -> Self {
        Self {
            iters,
            lambda,
            lipschitz: None,
            restart: true,
        }
    }
}

/// Estimates the spectral norm of a Hermitian PSD map by 20 power
/// iterations from a fixed deterministic start, padded by 1%.
pub fn power_iteration_lipschitz<F>(mut apply: F, n: usize) -> Result<f64>
where
    F: FnMut(&[Complex64]) -> Result<Vec<Complex64>>,
{
    let mut v: Vec<Complex64> = (0..n)
        .map(|j| {
            // Fixed low-discrepancy start vector; deterministic across runs.
            let t = (j as f64 * 0.754877666246693) % 1.0;
            Complex64::new(t - 0.5, ((j as f64 * 0.569840290998) % 1.0) - 0.5)
        })
        .collect();
    let mut lam = 1.0f64;
    for _ in 0..20 {
        let nv = norm(&v);
        if nv == 0.0 {
            break;
        }
        for q in v.iter_mut() {
            *q /= nv;
        }
        let fv = apply(&v)?;
        lam = dot_re(&v, &fv).max(0.0);
        v = fv;
    }
    Ok(lam * 1.01)
}

/// Proximal optimized gradient method for
/// `min 0.5 ||E x - y||^2 + lambda ||W x||_1`
/// expressed through `apply_gram(x) = E'E x` and `adjoint_rhs = E' y`.
/// The prox is exact because `W` is orthogonal: `W' o shrink o W`.
///
/// Gradient-based adaptive restart is on by default. When `trace` is
/// given, the iterate and prox-input sequences are recorded so a caller
/// can run reverse-mode accumulation through the iteration.
pub fn pogm_solve<G>(
    mut apply_gram: G,
    adjoint_rhs: &[Complex64],
    x0: &[Complex64],
    wavelet: &HaarDwt,
    opts: &PogmOptions,
    mut trace: Option<&mut PogmTrace>,
) -> Result<Vec<Complex64>>
where
    G: FnMut(&[Complex64]) -> Result<Vec<Complex64>>,
{
    let n = adjoint_rhs.len();
    if x0.len() != n {
        return Err(Error::ShapeMismatch("pogm initial point length mismatch".into()));
    }
    let lip = match opts.lipschitz {
        Some(l) => l,
        None => power_iteration_lipschitz(&mut apply_gram, n)?,
    };
    if !(lip > 0.0) || !lip.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "POGM needs a positive Lipschitz constant, got {lip}"
        )));
    }
    if let Some(t) = trace.as_deref_mut() {
        t.x.clear();
        t.z.clear();
        t.coeffs.clear();
        t.lipschitz = lip;
        t.x.push(x0.to_vec());
    }

    let prox = |z: &[Complex64], tau: f64| -> Vec<Complex64> {
        let c = wavelet.forward(z);
        let s = soft_threshold(&c, tau);
        wavelet.inverse(&s)
    };

    let mut x = x0.to_vec();
    let mut x_prev;
    let mut w = x0.to_vec();
    let mut z = x0.to_vec();
    let mut theta = 1.0f64;
    let mut zeta = 1.0f64 / lip;
    let scale_ref: f64 = x0.iter().map(|v| v.norm_sqr()).sum::<f64>()
        + adjoint_rhs.iter().map(|v| v.norm_sqr()).sum::<f64>() / (lip * lip);

    for k in 1..=opts.iters {
        let theta_old = theta;
        let four_or_eight = if k < opts.iters { 4.0 } else { 8.0 };
        theta = (1.0 + (four_or_eight * theta_old * theta_old + 1.0).sqrt()) / 2.0;
        let beta = (theta_old - 1.0) / theta;
        let gamma = theta_old / theta;
        let c3 = beta / (lip * zeta);
        zeta = (2.0 * theta_old + theta - 1.0) / (lip * theta);

        let gx = apply_gram(&x)?;
        let grad: Vec<Complex64> = gx.iter().zip(adjoint_rhs).map(|(g, b)| g - b).collect();

        let w_old = w;
        w = x.iter().zip(&grad).map(|(xv, gv)| xv - gv / lip).collect();
        let z_new: Vec<Complex64> = (0..n)
            .map(|j| {
                w[j] + (w[j] - w_old[j]) * beta + (w[j] - x[j]) * gamma - (x[j] - z[j]) * c3
            })
            .collect();
        z = z_new;
        x_prev = x;
        x = prox(&z, opts.lambda * zeta);

        let xn2: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        if !xn2.is_finite() {
            return Err(Error::NonFinite(format!(
                "POGM iterate {k} is non-finite (lipschitz {lip:.3e})"
            )));
        }
        if xn2 > 1e16 * (1.0 + scale_ref) {
            return Err(Error::NonFinite(format!(
                "POGM iterate {k} is diverging (norm^2 {xn2:.3e}); the Lipschitz \
                 estimate {lip:.3e} is likely too small"
            )));
        }

        // Gradient-scheme restart: reset the momentum when the composite
        // gradient mapping says the step went uphill.
        let mut restarted = false;
        if opts.restart {
            let uphill: f64 = (0..n)
                .map(|j| {
                    let phi = grad[j] + (z[j] - x[j]) / zeta;
                    (phi.conj() * (x[j] - x_prev[j])).re
                })
                .sum();
            if uphill > 0.0 {
                theta = 1.0;
                restarted = true;
            }
        }

        if let Some(t) = trace.as_deref_mut() {
            t.z.push(z.clone());
            t.x.push(x.clone());
            t.coeffs.push(PogmCoeffs {
                beta,
                gamma,
                c3,
                zeta,
                restarted,
            });
        }
    }
    Ok(x)
}

/// Adam optimizer state over a flat real parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize, alpha: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            alpha,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam expects {} parameters, got {} with {} gradients",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for j in 0..params.len() {
            self.m[j] = self.beta1 * self.m[j] + (1.0 - self.beta1) * grad[j];
            self.v[j] = self.beta2 * self.v[j] + (1.0 - self.beta2) * grad[j] * grad[j];
            let mhat = self.m[j] / bc1;
            let vhat = self.v[j] / bc2;
            params[j] -= self.alpha * mhat / (vhat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}
