//! Core value types: image grids, complex images, k-space data, trajectories.
//!
//! Conventions used throughout the crate:
//!
//! - Voxel coordinates are integer-centered: along a dimension of size `n`
//!   the coordinates are `j - floor(n/2)` for `j = 0..n`, in voxel units.
//! - Sample coordinates `omega` are in rad/sample, restricted to the
//!   Nyquist box `[-pi, pi]^D`.
//! - Flat storage is row-major with dimension 0 fastest: the linear index
//!   of voxel `(j0, j1, j2)` is `j0 + n0*(j1 + n1*j2)`.
//!
//! All types are immutable values after construction and safe to share
//! across threads.

use num_complex::Complex64;

use crate::{Error, Result};

/// Maximum supported number of spatial dimensions.
pub const MAX_DIMS: usize = 3;

/// A Cartesian voxel grid with integer-centered coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    dims: Vec<usize>,
    coords: Vec<Vec<f64>>,
}

impl ImageGrid {
    /// Builds a grid from per-dimension sizes. Rejects zero dimensions and
    /// dimensionality outside 1..=3.
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_DIMS {
            return Err(Error::InvalidArgument(format!(
                "grid dimensionality must be 1..={MAX_DIMS}, got {}",
                dims.len()
            )));
        }
        if dims.iter().any(|&n| n == 0) {
            return Err(Error::InvalidArgument(format!(
                "grid dims must be positive, got {dims:?}"
            )));
        }
        let coords = dims
            .iter()
            .map(|&n| {
                let half = (n / 2) as f64;
                (0..n).map(|j| j as f64 - half).collect()
            })
            .collect();
        Ok(Self {
            dims: dims.to_vec(),
            coords,
        })
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Total number of voxels.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false // dims are validated positive
    }

    /// Centered coordinates along dimension `d`, length `dims[d]`.
    pub fn coords(&self, d: usize) -> &[f64] {
        &self.coords[d]
    }

    /// Stride of dimension `d` in the flat layout (dim 0 fastest).
    pub fn stride(&self, d: usize) -> usize {
        self.dims[..d].iter().product()
    }

    /// Multi-index of a flat index.
    pub fn unravel(&self, mut idx: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.dims.len());
        for &n in &self.dims {
            out.push(idx % n);
            idx /= n;
        }
        out
    }

    /// Centered coordinate of flat voxel `idx` along dimension `d`.
    pub fn coord_at(&self, idx: usize, d: usize) -> f64 {
        let sub = (idx / self.stride(d)) % self.dims[d];
        self.coords[d][sub]
    }

    /// The full length-N coordinate vector `r_d`, expanded over the flat
    /// layout. Used when forming `x .* r_d` products.
    pub fn coord_vector(&self, d: usize) -> Vec<f64> {
        let n = self.len();
        let stride = self.stride(d);
        let nd = self.dims[d];
        let mut out = Vec::with_capacity(n);
        for idx in 0..n {
            out.push(self.coords[d][(idx / stride) % nd]);
        }
        out
    }

    /// Elementwise `x .* r_d` for a flat complex vector on this grid.
    pub fn mul_coord(&self, x: &[Complex64], d: usize) -> Vec<Complex64> {
        let stride = self.stride(d);
        let nd = self.dims[d];
        x.iter()
            .enumerate()
            .map(|(idx, &v)| v * self.coords[d][(idx / stride) % nd])
            .collect()
    }
}

/// A complex image on an [`ImageGrid`], flat row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage {
    pub grid: ImageGrid,
    pub data: Vec<Complex64>,
}

impl ComplexImage {
    pub fn new(grid: ImageGrid, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "image data length {} does not match grid size {}",
                data.len(),
                grid.len()
            )));
        }
        if data.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("image contains non-finite entries".into()));
        }
        Ok(Self { grid, data })
    }

    pub fn zeros(grid: ImageGrid) -> Self {
        let n = grid.len();
        Self {
            grid,
            data: vec![Complex64::default(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Multi-coil k-space samples, one column per coil. Storage is coil-major:
/// coil `c` occupies `samples[c*m .. (c+1)*m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KspaceData {
    samples: Vec<Complex64>,
    m: usize,
    n_coils: usize,
}

impl KspaceData {
    pub fn new(samples: Vec<Complex64>, m: usize, n_coils: usize) -> Result<Self> {
        if m == 0 || n_coils == 0 {
            return Err(Error::InvalidArgument(
                "k-space data needs m >= 1 and n_coils >= 1".into(),
            ));
        }
        if samples.len() != m * n_coils {
            return Err(Error::ShapeMismatch(format!(
                "expected {}x{} = {} samples, got {}",
                m,
                n_coils,
                m * n_coils,
                samples.len()
            )));
        }
        if samples.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("k-space contains non-finite entries".into()));
        }
        Ok(Self { samples, m, n_coils })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_coils(&self) -> usize {
        self.n_coils
    }

    /// All samples, coil-major.
    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn coil(&self, c: usize) -> &[Complex64] {
        &self.samples[c * self.m..(c + 1) * self.m]
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }
}

/// Non-Cartesian sample locations with shot structure and timing.
///
/// `omega` is stored sample-major: coordinate `d` of sample `i` is
/// `omega[i*ndim + d]`. Readout times restart at zero at each shot
/// boundary and advance by the dwell time within a shot.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    omega: Vec<f64>,
    ndim: usize,
    n_shots: usize,
    samples_per_shot: usize,
    dwell_ms: f64,
    readout_times: Vec<f64>,
}

/// Tolerance for the Nyquist box check; accepts exactly pi.
const NYQUIST_SLACK: f64 = 1e-12;

impl Trajectory {
    /// Validating constructor. `omega` is flat sample-major with
    /// `n_shots * samples_per_shot * ndim` entries, all within
    /// `[-pi, pi]`.
    pub fn new(
        omega: Vec<f64>,
        ndim: usize,
        n_shots: usize,
        samples_per_shot: usize,
        dwell_ms: f64,
    ) -> Result<Self> {
        let m = n_shots * samples_per_shot;
        if ndim == 0 || ndim > MAX_DIMS {
            return Err(Error::InvalidArgument(format!(
                "trajectory dimensionality must be 1..={MAX_DIMS}, got {ndim}"
            )));
        }
        if m == 0 {
            return Err(Error::InvalidArgument("trajectory needs at least one sample".into()));
        }
        if omega.len() != m * ndim {
            return Err(Error::ShapeMismatch(format!(
                "expected {m}x{ndim} = {} omega entries, got {}",
                m * ndim,
                omega.len()
            )));
        }
        let bound = std::f64::consts::PI + NYQUIST_SLACK;
        if let Some(bad) = omega.iter().find(|w| !w.is_finite() || w.abs() > bound) {
            return Err(Error::InvalidArgument(format!(
                "omega entry {bad} outside the Nyquist box [-pi, pi]"
            )));
        }
        if !(dwell_ms > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "dwell time must be positive, got {dwell_ms}"
            )));
        }
        let readout_times = (0..m)
            .map(|i| (i % samples_per_shot) as f64 * dwell_ms)
            .collect();
        Ok(Self {
            omega,
            ndim,
            n_shots,
            samples_per_shot,
            dwell_ms,
            readout_times,
        })
    }

    /// Like [`Trajectory::new`] but clips out-of-box entries to `[-pi, pi]`
    /// and reports how many were clipped.
    pub fn clipped(
        mut omega: Vec<f64>,
        ndim: usize,
        n_shots: usize,
        samples_per_shot: usize,
        dwell_ms: f64,
    ) -> Result<(Self, usize)> {
        let mut clips = 0usize;
        let pi = std::f64::consts::PI;
        for w in &mut omega {
            if !w.is_finite() {
                return Err(Error::NonFinite("omega contains a non-finite entry".into()));
            }
            if *w > pi {
                *w = pi;
                clips += 1;
            } else if *w < -pi {
                *w = -pi;
                clips += 1;
            }
        }
        Ok((
            Self::new(omega, ndim, n_shots, samples_per_shot, dwell_ms)?,
            clips,
        ))
    }

    /// Number of samples M.
    pub fn m(&self) -> usize {
        self.n_shots * self.samples_per_shot
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    pub fn n_shots(&self) -> usize {
        self.n_shots
    }

    pub fn samples_per_shot(&self) -> usize {
        self.samples_per_shot
    }

    pub fn dwell_ms(&self) -> f64 {
        self.dwell_ms
    }

    /// Readout time of each sample in ms, restarting at each shot.
    pub fn readout_times(&self) -> &[f64] {
        &self.readout_times
    }

    /// Flat sample-major coordinates.
    pub fn omega_flat(&self) -> &[f64] {
        &self.omega
    }

    /// Coordinate `d` of sample `i`.
    pub fn omega(&self, i: usize, d: usize) -> f64 {
        self.omega[i * self.ndim + d]
    }

    /// Sample `i` as a small coordinate slice.
    pub fn sample(&self, i: usize) -> &[f64] {
        &self.omega[i * self.ndim..(i + 1) * self.ndim]
    }

    /// Column `d` as an owned vector of length M.
    pub fn column(&self, d: usize) -> Vec<f64> {
        (0..self.m()).map(|i| self.omega(i, d)).collect()
    }

    /// A trajectory with the same structure but different coordinates.
    pub fn with_omega(&self, omega: Vec<f64>) -> Result<Self> {
        Self::new(
            omega,
            self.ndim,
            self.n_shots,
            self.samples_per_shot,
            self.dwell_ms,
        )
    }

    /// Construction without the Nyquist box check. Finite-difference
    /// probes use this to nudge samples that sit exactly on the boundary;
    /// everything else should go through [`Trajectory::new`].
    pub fn new_relaxed(
        omega: Vec<f64>,
        ndim: usize,
        n_shots: usize,
        samples_per_shot: usize,
        dwell_ms: f64,
    ) -> Self {
        let m = n_shots * samples_per_shot;
        assert_eq!(omega.len(), m * ndim, "relaxed trajectory shape mismatch");
        let readout_times = (0..m)
            .map(|i| (i % samples_per_shot) as f64 * dwell_ms)
            .collect();
        Self {
            omega,
            ndim,
            n_shots,
            samples_per_shot,
            dwell_ms,
            readout_times,
        }
    }
}
