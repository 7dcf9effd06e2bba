//! Composite MRI system operators: sensitivity encoding, regularizers,
//! off-resonance (field inhomogeneity) composites, and retrospective
//! signal simulation.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{ImageGrid, KspaceData, Trajectory};
use crate::system::SystemOp;
use crate::{Error, Result};

/// Per-coil complex sensitivity profiles, coil-major storage
/// (`maps[c*n .. (c+1)*n]` is coil `c`).
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMaps {
    maps: Vec<Complex64>,
    n_coils: usize,
    n: usize,
}

impl SensitivityMaps {
    pub fn new(maps: Vec<Complex64>, n_coils: usize, n: usize) -> Result<Self> {
        if n_coils == 0 || maps.len() != n_coils * n {
            return Err(Error::ShapeMismatch(format!(
                "expected {n_coils}x{n} map entries, got {}",
                maps.len()
            )));
        }
        if maps.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("sensitivity maps contain non-finite entries".into()));
        }
        Ok(Self { maps, n_coils, n })
    }

    /// Unit maps: the single-coil identity encoding.
    pub fn identity(n: usize) -> Self {
        Self {
            maps: vec![Complex64::new(1.0, 0.0); n],
            n_coils: 1,
            n,
        }
    }

    pub fn n_coils(&self) -> usize {
        self.n_coils
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn coil(&self, c: usize) -> &[Complex64] {
        &self.maps[c * self.n..(c + 1) * self.n]
    }

    /// Rescales so the root-sum-square over coils is 1 at every voxel.
    pub fn normalize_rss(mut self) -> Self {
        for j in 0..self.n {
            let rss: f64 = (0..self.n_coils)
                .map(|c| self.maps[c * self.n + j].norm_sqr())
                .sum::<f64>()
                .sqrt();
            if rss > 0.0 {
                for c in 0..self.n_coils {
                    self.maps[c * self.n + j] /= rss;
                }
            }
        }
        self
    }

    /// Maximum deviation of the per-voxel root-sum-square from 1.
    pub fn rss_deviation(&self) -> f64 {
        (0..self.n)
            .map(|j| {
                let rss: f64 = (0..self.n_coils)
                    .map(|c| self.maps[c * self.n + j].norm_sqr())
                    .sum::<f64>()
                    .sqrt();
                (rss - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Multi-coil SENSE encoding built over any single-coil backend: coil `c`
/// of the output is `inner.forward(s_c .* x)`.
pub struct SenseOp<'a> {
    inner: &'a dyn SystemOp,
    maps: &'a SensitivityMaps,
}

impl<'a> SenseOp<'a> {
    pub fn new(inner: &'a dyn SystemOp, maps: &'a SensitivityMaps) -> Result<Self> {
        if inner.n_coils() != 1 {
            return Err(Error::InvalidArgument(
                "SENSE wraps a single-coil operator".into(),
            ));
        }
        if maps.n() != inner.n() {
            return Err(Error::ShapeMismatch(format!(
                "maps cover {} voxels but the grid has {}",
                maps.n(),
                inner.n()
            )));
        }
        Ok(Self { inner, maps })
    }

    pub fn maps(&self) -> &SensitivityMaps {
        self.maps
    }
}

impl SystemOp for SenseOp<'_> {
    fn grid(&self) -> &ImageGrid {
        self.inner.grid()
    }

    fn traj(&self) -> &Trajectory {
        self.inner.traj()
    }

    fn n_coils(&self) -> usize {
        self.maps.n_coils()
    }

    fn forward(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_image(x)?;
        let m = self.m();
        let mut out = Vec::with_capacity(m * self.n_coils());
        for c in 0..self.maps.n_coils() {
            let s = self.maps.coil(c);
            let weighted: Vec<Complex64> = x.iter().zip(s).map(|(v, w)| v * w).collect();
            out.extend(self.inner.forward(&weighted)?);
        }
        Ok(out)
    }

    fn adjoint(&self, y: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_kspace(y)?;
        let m = self.m();
        let mut out = vec![Complex64::default(); self.n()];
        for c in 0..self.maps.n_coils() {
            let img = self.inner.adjoint(&y[c * m..(c + 1) * m])?;
            let s = self.maps.coil(c);
            for ((o, v), w) in out.iter_mut().zip(&img).zip(s) {
                *o += w.conj() * v;
            }
        }
        Ok(out)
    }
}

/// Known null space of a regularizer, recorded so callers can check that
/// `E'E + lambda T'T` is invertible before relying on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NullSpace {
    Trivial,
    Constants,
}

/// Boundary handling for the finite-difference operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Periodic,
    Zero,
}

/// Linear regularization operator `T`, independent of the trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regularizer {
    Identity,
    /// First-order forward differences along every dimension, stacked.
    FiniteDifference(Boundary),
}

impl Regularizer {
    pub fn null_space(&self) -> NullSpace {
        match self {
            Regularizer::Identity => NullSpace::Trivial,
            Regularizer::FiniteDifference(Boundary::Periodic) => NullSpace::Constants,
            Regularizer::FiniteDifference(Boundary::Zero) => NullSpace::Trivial,
        }
    }

    /// Output length of [`Regularizer::apply`] for a given grid.
    pub fn range_len(&self, grid: &ImageGrid) -> usize {
        match self {
            Regularizer::Identity => grid.len(),
            Regularizer::FiniteDifference(_) => grid.len() * grid.ndim(),
        }
    }

    /// `T x`. Finite differences produce one length-N block per
    /// dimension: `(T x)[d][j] = x[j + e_d] - x[j]` with wrap-around or
    /// zero extension at the boundary.
    pub fn apply(&self, grid: &ImageGrid, x: &[Complex64]) -> Result<Vec<Complex64>> {
        if x.len() != grid.len() {
            return Err(Error::ShapeMismatch("regularizer input length mismatch".into()));
        }
        match self {
            Regularizer::Identity => Ok(x.to_vec()),
            Regularizer::FiniteDifference(boundary) => {
                let n = grid.len();
                let mut out = Vec::with_capacity(n * grid.ndim());
                for d in 0..grid.ndim() {
                    let stride = grid.stride(d);
                    let nd = grid.dims()[d];
                    for (j, &xj) in x.iter().enumerate() {
                        let sub = (j / stride) % nd;
                        let fwd = if sub + 1 < nd {
                            x[j + stride]
                        } else {
                            match boundary {
                                Boundary::Periodic => x[j + stride - nd * stride],
                                Boundary::Zero => Complex64::default(),
                            }
                        };
                        out.push(fwd - xj);
                    }
                }
                Ok(out)
            }
        }
    }

    /// `T' u` for `u` in the stacked range of `T`.
    pub fn apply_adjoint(&self, grid: &ImageGrid, u: &[Complex64]) -> Result<Vec<Complex64>> {
        if u.len() != self.range_len(grid) {
            return Err(Error::ShapeMismatch("regularizer adjoint length mismatch".into()));
        }
        match self {
            Regularizer::Identity => Ok(u.to_vec()),
            Regularizer::FiniteDifference(boundary) => {
                let n = grid.len();
                let mut out = vec![Complex64::default(); n];
                for d in 0..grid.ndim() {
                    let block = &u[d * n..(d + 1) * n];
                    let stride = grid.stride(d);
                    let nd = grid.dims()[d];
                    for (j, &uj) in block.iter().enumerate() {
                        let sub = (j / stride) % nd;
                        // (T_d x)[j] = x[next(j)] - x[j]; the transpose
                        // scatters +u into next(j) and -u into j.
                        out[j] -= uj;
                        if sub + 1 < nd {
                            out[j + stride] += uj;
                        } else if *boundary == Boundary::Periodic {
                            out[j + stride - nd * stride] += uj;
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    /// `T' T x`; for periodic finite differences this is the (negated)
    /// discrete Laplacian.
    pub fn gram(&self, grid: &ImageGrid, x: &[Complex64]) -> Result<Vec<Complex64>> {
        match self {
            Regularizer::Identity => {
                if x.len() != grid.len() {
                    return Err(Error::ShapeMismatch("regularizer input length mismatch".into()));
                }
                Ok(x.to_vec())
            }
            _ => {
                let tx = self.apply(grid, x)?;
                self.apply_adjoint(grid, &tx)
            }
        }
    }
}

/// Off-resonance segmentation tables: the composite operator is
/// `sum_l diag(b_l) A diag(c_l)` with `b_l` of length M and `c_l` of
/// length N. Storage is segment-major: `b[l*m..]`, `c[l*n..]`.
#[derive(Debug, Clone)]
pub struct FieldModel {
    b: Vec<Complex64>,
    c: Vec<Complex64>,
    segments: usize,
    m: usize,
    n: usize,
}

impl FieldModel {
    pub fn new(
        b: Vec<Complex64>,
        c: Vec<Complex64>,
        segments: usize,
        m: usize,
        n: usize,
    ) -> Result<Self> {
        if segments == 0 {
            return Err(Error::InvalidArgument("field model needs at least one segment".into()));
        }
        if b.len() != segments * m || c.len() != segments * n {
            return Err(Error::ShapeMismatch(format!(
                "field tables expect {segments}x{m} and {segments}x{n} entries, got {} and {}",
                b.len(),
                c.len()
            )));
        }
        let finite =
            |v: &[Complex64]| v.iter().all(|z| z.re.is_finite() && z.im.is_finite());
        if !finite(&b) || !finite(&c) {
            return Err(Error::NonFinite("field tables contain non-finite entries".into()));
        }
        Ok(Self {
            b,
            c,
            segments,
            m,
            n,
        })
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn b_segment(&self, l: usize) -> &[Complex64] {
        &self.b[l * self.m..(l + 1) * self.m]
    }

    pub fn c_segment(&self, l: usize) -> &[Complex64] {
        &self.c[l * self.n..(l + 1) * self.n]
    }

    /// Row-major `M x L` table for serialization.
    pub fn b_table_row_major(&self) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.m * self.segments);
        for i in 0..self.m {
            for l in 0..self.segments {
                out.push(self.b[l * self.m + i]);
            }
        }
        out
    }

    /// Row-major `L x N` table for serialization.
    pub fn c_table_row_major(&self) -> Vec<Complex64> {
        self.c.clone()
    }

    pub fn from_tables(
        b_row_major: &[Complex64],
        c_row_major: &[Complex64],
        segments: usize,
        m: usize,
        n: usize,
    ) -> Result<Self> {
        let mut b = vec![Complex64::default(); segments * m];
        for i in 0..m {
            for l in 0..segments {
                b[l * m + i] = b_row_major[i * segments + l];
            }
        }
        Self::new(b, c_row_major.to_vec(), segments, m, n)
    }

    /// Builds time-segmented tables for a given off-resonance map
    /// (rad/ms per voxel) and readout times (ms per sample) by per-sample
    /// least squares against `L` phase basis segments. Intended for
    /// small-scale exact checks; real tables are produced offline and
    /// loaded as inputs.
    pub fn time_segmented(
        fieldmap_rad_per_ms: &[f64],
        times_ms: &[f64],
        segments: usize,
    ) -> Result<Self> {
        let n = fieldmap_rad_per_ms.len();
        let m = times_ms.len();
        if n == 0 || m == 0 || segments == 0 {
            return Err(Error::InvalidArgument("empty field segmentation inputs".into()));
        }
        let tmin = times_ms.iter().cloned().fold(f64::INFINITY, f64::min);
        let tmax = times_ms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let taus: Vec<f64> = if segments == 1 {
            vec![(tmin + tmax) / 2.0]
        } else {
            (0..segments)
                .map(|l| tmin + (tmax - tmin) * l as f64 / (segments - 1) as f64)
                .collect()
        };

        // c_l[j] = exp(-i wj tau_l).
        let mut c = Vec::with_capacity(segments * n);
        for &tau in &taus {
            for &wj in fieldmap_rad_per_ms {
                c.push(Complex64::from_polar(1.0, -wj * tau));
            }
        }

        // Shared Gram over the voxel population, mildly regularized.
        let mut gram = vec![Complex64::default(); segments * segments];
        for (l, &tl) in taus.iter().enumerate() {
            for (l2, &tl2) in taus.iter().enumerate() {
                let mut acc = Complex64::default();
                for &wj in fieldmap_rad_per_ms {
                    acc += Complex64::from_polar(1.0, wj * (tl - tl2));
                }
                gram[l * segments + l2] = acc;
            }
        }
        let ridge = 1e-9 * n as f64;
        for l in 0..segments {
            gram[l * segments + l] += ridge;
        }

        let mut b = vec![Complex64::default(); segments * m];
        for (i, &ti) in times_ms.iter().enumerate() {
            let rhs: Vec<Complex64> = taus
                .iter()
                .map(|&tau| {
                    let mut acc = Complex64::default();
                    for &wj in fieldmap_rad_per_ms {
                        acc += Complex64::from_polar(1.0, wj * tau - wj * ti);
                    }
                    acc
                })
                .collect();
            let coeffs = crate::dense::solve_complex(&gram, &rhs)?;
            for (l, q) in coeffs.into_iter().enumerate() {
                b[l * m + i] = q;
            }
        }
        Self::new(b, c, segments, m, n)
    }
}

/// Off-resonance composite operator over a single-coil backend.
pub struct FieldOp<'a> {
    inner: &'a dyn SystemOp,
    field: &'a FieldModel,
}

impl<'a> FieldOp<'a> {
    pub fn new(inner: &'a dyn SystemOp, field: &'a FieldModel) -> Result<Self> {
        if inner.n_coils() != 1 {
            return Err(Error::InvalidArgument(
                "field composite wraps a single-coil operator".into(),
            ));
        }
        if field.m() != inner.m() || field.n() != inner.n() {
            return Err(Error::ShapeMismatch(format!(
                "field tables sized {}x{} do not match operator {}x{}",
                field.m(),
                field.n(),
                inner.m(),
                inner.n()
            )));
        }
        Ok(Self { inner, field })
    }
}

impl SystemOp for FieldOp<'_> {
    fn grid(&self) -> &ImageGrid {
        self.inner.grid()
    }

    fn traj(&self) -> &Trajectory {
        self.inner.traj()
    }

    fn forward(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_image(x)?;
        let mut out = vec![Complex64::default(); self.m()];
        for l in 0..self.field.segments() {
            let cl = self.field.c_segment(l);
            let weighted: Vec<Complex64> = x.iter().zip(cl).map(|(v, w)| v * w).collect();
            let y = self.inner.forward(&weighted)?;
            let bl = self.field.b_segment(l);
            for ((o, v), w) in out.iter_mut().zip(&y).zip(bl) {
                *o += w * v;
            }
        }
        Ok(out)
    }

    fn adjoint(&self, y: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_kspace(y)?;
        let mut out = vec![Complex64::default(); self.n()];
        for l in 0..self.field.segments() {
            let bl = self.field.b_segment(l);
            let weighted: Vec<Complex64> = y.iter().zip(bl).map(|(v, w)| v * w.conj()).collect();
            let img = self.inner.adjoint(&weighted)?;
            let cl = self.field.c_segment(l);
            for ((o, v), w) in out.iter_mut().zip(&img).zip(cl) {
                *o += w.conj() * v;
            }
        }
        Ok(out)
    }
}

/// Retrospective signal simulation `y = E x`, with optional complex white
/// Gaussian noise of standard deviation `noise_sigma` per component. A
/// zero sigma is bit-identical to the noiseless path.
pub fn simulate_kspace(
    op: &dyn SystemOp,
    x_true: &[Complex64],
    noise_sigma: f64,
    seed: u64,
) -> Result<KspaceData> {
    let mut y = op.forward(x_true)?;
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in y.iter_mut() {
            // Box-Muller from the seeded generator keeps the noise
            // reproducible across platforms.
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let r = (-2.0 * u1.ln()).sqrt() * noise_sigma;
            let ang = 2.0 * std::f64::consts::PI * u2;
            *v += Complex64::new(r * ang.cos(), r * ang.sin());
        }
    }
    KspaceData::new(y, op.m(), op.n_coils())
}
