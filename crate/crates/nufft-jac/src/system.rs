//! The linear system operator abstraction.
//!
//! Every Jacobian formula in this crate is written against [`SystemOp`]:
//! a linear map from an image (length N) to stacked k-space data (length
//! `M * n_coils`, coil blocks contiguous) together with its exact adjoint.
//! Because the trajectory derivatives only touch the operator through
//! forward/adjoint applications and elementwise coordinate weightings,
//! one set of formulas serves the exact transform, the gridding NUFFT,
//! sensitivity encoding, and off-resonance composites alike.

use num_complex::Complex64;

use crate::grid::{ImageGrid, Trajectory};
use crate::ndft;
use crate::nufft::NufftPlan;
use crate::{Error, Result};

/// A trajectory-parameterized linear operator with an exact adjoint.
pub trait SystemOp: Sync {
    fn grid(&self) -> &ImageGrid;

    fn traj(&self) -> &Trajectory;

    /// Number of receive channels stacked in the output.
    fn n_coils(&self) -> usize {
        1
    }

    /// Image (length N) to stacked k-space (length `M * n_coils`).
    fn forward(&self, x: &[Complex64]) -> Result<Vec<Complex64>>;

    /// Stacked k-space to image; the exact transpose-conjugate of
    /// [`SystemOp::forward`].
    fn adjoint(&self, y: &[Complex64]) -> Result<Vec<Complex64>>;

    fn n(&self) -> usize {
        self.grid().len()
    }

    /// Samples per coil.
    fn m(&self) -> usize {
        self.traj().m()
    }

    /// Total stacked output length.
    fn m_total(&self) -> usize {
        self.m() * self.n_coils()
    }

    fn check_image(&self, x: &[Complex64]) -> Result<()> {
        if x.len() != self.n() {
            return Err(Error::ShapeMismatch(format!(
                "image length {} does not match grid size {}",
                x.len(),
                self.n()
            )));
        }
        Ok(())
    }

    fn check_kspace(&self, y: &[Complex64]) -> Result<()> {
        if y.len() != self.m_total() {
            return Err(Error::ShapeMismatch(format!(
                "k-space length {} does not match stacked size {}",
                y.len(),
                self.m_total()
            )));
        }
        Ok(())
    }
}

/// Fast single-coil operator backed by a gridding plan.
pub struct NufftOp {
    plan: NufftPlan,
}

impl NufftOp {
    pub fn new(plan: NufftPlan) -> Self {
        Self { plan }
    }

    pub fn plan(&self) -> &NufftPlan {
        &self.plan
    }
}

impl SystemOp for NufftOp {
    fn grid(&self) -> &ImageGrid {
        self.plan.grid()
    }

    fn traj(&self) -> &Trajectory {
        self.plan.traj()
    }

    fn forward(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        self.plan.forward(x)
    }

    fn adjoint(&self, y: &[Complex64]) -> Result<Vec<Complex64>> {
        self.plan.adjoint(y)
    }
}

/// Exact single-coil operator by direct summation; the oracle backend.
pub struct NdftOp {
    grid: ImageGrid,
    traj: Trajectory,
}

impl NdftOp {
    pub fn new(grid: ImageGrid, traj: Trajectory) -> Result<Self> {
        if grid.ndim() != traj.ndim() {
            return Err(Error::ShapeMismatch(format!(
                "grid is {}-D but trajectory is {}-D",
                grid.ndim(),
                traj.ndim()
            )));
        }
        Ok(Self { grid, traj })
    }
}

impl SystemOp for NdftOp {
    fn grid(&self) -> &ImageGrid {
        &self.grid
    }

    fn traj(&self) -> &Trajectory {
        &self.traj
    }

    fn forward(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        ndft::ndft_forward(&self.grid, &self.traj, x)
    }

    fn adjoint(&self, y: &[Complex64]) -> Result<Vec<Complex64>> {
        ndft::ndft_adjoint(&self.grid, &self.traj, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nufft::{Precision, Preset};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backends_agree_on_smooth_input() {
        let grid = ImageGrid::new(&[12, 12]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let omega: Vec<f64> = (0..40).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let traj = Trajectory::new(omega, 2, 1, 20, 0.01).unwrap();

        let x: Vec<Complex64> = (0..144)
            .map(|idx| {
                let r0 = grid.coord_at(idx, 0) / 6.0;
                let r1 = grid.coord_at(idx, 1) / 6.0;
                Complex64::new((-(r0 * r0 + r1 * r1)).exp(), 0.0)
            })
            .collect();

        let exact = NdftOp::new(grid.clone(), traj.clone()).unwrap();
        let plan = NufftPlan::with_preset(&grid, &traj, Preset::High, Precision::Double).unwrap();
        let fast = NufftOp::new(plan);

        let ye = exact.forward(&x).unwrap();
        let yf = fast.forward(&x).unwrap();
        assert!(crate::metrics::nrmsd(&yf, &ye).unwrap() < 1e-4);
        assert_eq!(exact.m_total(), 20);
        assert_eq!(fast.n_coils(), 1);
    }
}
