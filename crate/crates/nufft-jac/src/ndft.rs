//! Exact O(MN) non-uniform discrete Fourier transform and its
//! finite-difference machinery. This module is the ground truth that the
//! fast paths are measured against; it is intentionally slow and refuses
//! to run above a size cap rather than silently grinding.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::grid::{ImageGrid, Trajectory};
use crate::{Error, Result};

/// Default cap on M*N for exact-transform paths.
pub const DENSE_CAP_DEFAULT: usize = 1 << 24;

fn check_cap(m: usize, n: usize, cap: usize) -> Result<()> {
    let size = m.checked_mul(n).ok_or(Error::OracleTooLarge {
        requested: usize::MAX,
        cap,
    })?;
    if size > cap {
        return Err(Error::OracleTooLarge { requested: size, cap });
    }
    Ok(())
}

fn check_dims(grid: &ImageGrid, traj: &Trajectory) -> Result<()> {
    if grid.ndim() != traj.ndim() {
        return Err(Error::ShapeMismatch(format!(
            "grid is {}-D but trajectory is {}-D",
            grid.ndim(),
            traj.ndim()
        )));
    }
    Ok(())
}

/// The dense `M x N` encoding matrix with entries `exp(-i w_i . r_j)`,
/// row-major. Only built below the size cap.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    entries: Vec<Complex64>,
    m: usize,
    n: usize,
}

impl DenseOperator {
    pub fn build(grid: &ImageGrid, traj: &Trajectory) -> Result<Self> {
        Self::build_capped(grid, traj, DENSE_CAP_DEFAULT)
    }

    pub fn build_capped(grid: &ImageGrid, traj: &Trajectory, cap: usize) -> Result<Self> {
        check_dims(grid, traj)?;
        let (m, n) = (traj.m(), grid.len());
        check_cap(m, n, cap)?;
        let coords: Vec<Vec<f64>> = (0..grid.ndim()).map(|d| grid.coord_vector(d)).collect();
        let mut entries = vec![Complex64::default(); m * n];
        entries
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, row)| {
                let w = traj.sample(i);
                for (j, e) in row.iter_mut().enumerate() {
                    let dot: f64 = w.iter().zip(&coords).map(|(&wd, rd)| wd * rd[j]).sum();
                    *e = Complex64::from_polar(1.0, -dot);
                }
            });
        Ok(Self { entries, m, n })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Row-major entries.
    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        crate::dense::matvec(&self.entries, x, self.m, self.n)
    }

    pub fn apply_adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
        crate::dense::matvec_adjoint(&self.entries, y, self.m, self.n)
    }
}

/// Exact forward transform `y_i = sum_j exp(-i w_i . r_j) x_j` by direct
/// summation.
pub fn ndft_forward(grid: &ImageGrid, traj: &Trajectory, x: &[Complex64]) -> Result<Vec<Complex64>> {
    check_dims(grid, traj)?;
    if x.len() != grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "image length {} does not match grid size {}",
            x.len(),
            grid.len()
        )));
    }
    check_cap(traj.m(), grid.len(), DENSE_CAP_DEFAULT)?;
    let coords: Vec<Vec<f64>> = (0..grid.ndim()).map(|d| grid.coord_vector(d)).collect();
    let out: Vec<Complex64> = (0..traj.m())
        .into_par_iter()
        .map(|i| {
            let w = traj.sample(i);
            let mut acc = Complex64::default();
            for (j, &xj) in x.iter().enumerate() {
                let dot: f64 = w.iter().zip(&coords).map(|(&wd, rd)| wd * rd[j]).sum();
                acc += Complex64::from_polar(1.0, -dot) * xj;
            }
            acc
        })
        .collect();
    Ok(out)
}

/// Exact adjoint `x_j = sum_i exp(+i w_i . r_j) y_i`.
pub fn ndft_adjoint(grid: &ImageGrid, traj: &Trajectory, y: &[Complex64]) -> Result<Vec<Complex64>> {
    check_dims(grid, traj)?;
    if y.len() != traj.m() {
        return Err(Error::ShapeMismatch(format!(
            "k-space length {} does not match sample count {}",
            y.len(),
            traj.m()
        )));
    }
    check_cap(traj.m(), grid.len(), DENSE_CAP_DEFAULT)?;
    let coords: Vec<Vec<f64>> = (0..grid.ndim()).map(|d| grid.coord_vector(d)).collect();
    let out: Vec<Complex64> = (0..grid.len())
        .into_par_iter()
        .map(|j| {
            let mut acc = Complex64::default();
            for (i, &yi) in y.iter().enumerate() {
                let w = traj.sample(i);
                let dot: f64 = w.iter().zip(&coords).map(|(&wd, rd)| wd * rd[j]).sum();
                acc += Complex64::from_polar(1.0, dot) * yi;
            }
            acc
        })
        .collect();
    Ok(out)
}

/// Diagonal of the forward operator's Jacobian along trajectory dimension
/// `d`: entry `i` is `-i [A (x .* r_d)]_i`, evaluated exactly.
pub fn exact_forward_jvp_diag(
    grid: &ImageGrid,
    traj: &Trajectory,
    x: &[Complex64],
    d: usize,
) -> Result<Vec<Complex64>> {
    if d >= grid.ndim() {
        return Err(Error::InvalidArgument(format!(
            "dimension index {d} out of range for {}-D grid",
            grid.ndim()
        )));
    }
    let xr = grid.mul_coord(x, d);
    let mut out = ndft_forward(grid, traj, &xr)?;
    for v in out.iter_mut() {
        *v *= Complex64::new(0.0, -1.0);
    }
    Ok(out)
}

/// Central-difference gradient of a scalar loss over every trajectory
/// coordinate, `(L(w + eps e) - L(w - eps e)) / (2 eps)`. Returns a flat
/// sample-major `M x D` matrix. The probe trajectories bypass the Nyquist
/// box check so boundary samples can be perturbed.
pub fn fd_gradient<F>(loss: F, traj: &Trajectory, eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&Trajectory) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("fd step must be positive, got {eps}")));
    }
    let base = traj.omega_flat().to_vec();
    let mut grad = vec![0.0; base.len()];
    for k in 0..base.len() {
        let mut plus = base.clone();
        plus[k] += eps;
        let mut minus = base.clone();
        minus[k] -= eps;
        let lp = loss(&perturbed(traj, plus))?;
        let lm = loss(&perturbed(traj, minus))?;
        grad[k] = (lp - lm) / (2.0 * eps);
    }
    Ok(grad)
}

/// Builds a trajectory with identical structure but unvalidated
/// coordinates; used by finite-difference probing only.
fn perturbed(traj: &Trajectory, omega: Vec<f64>) -> Trajectory {
    Trajectory::new_relaxed(
        omega,
        traj.ndim(),
        traj.n_shots(),
        traj.samples_per_shot(),
        traj.dwell_ms(),
    )
}
