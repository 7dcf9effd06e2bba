//! Deterministic test-data generation: ellipse phantoms with optional
//! random phase, simulated coil sensitivities, and dataset synthesis.
//!
//! All randomness comes from ChaCha8 seeded with caller-provided 64-bit
//! seeds, so generated data is bit-reproducible across platforms.

use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{ComplexImage, ImageGrid};
use crate::io;
use crate::mri::SensitivityMaps;
use crate::{Error, Result};

/// One ellipse: additive intensity, semi-axes, center, rotation (degrees).
#[derive(Debug, Clone, Copy)]
pub struct Ellipse {
    pub intensity: f64,
    pub a: f64,
    pub b: f64,
    pub x0: f64,
    pub y0: f64,
    pub phi_deg: f64,
}

/// Phantom intensity variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhantomVariant {
    /// The classic ten-ellipse table, intensities scaled by 1/2 so the
    /// accumulated magnitude stays within [0, 1].
    #[default]
    Standard,
    /// The widely used high-contrast re-weighting of the same geometry.
    HighContrast,
}

/// The classic ten-ellipse geometry. `Standard` carries the original
/// intensities scaled by 1/2; `HighContrast` the common re-weighted ones.
pub fn ellipse_table(variant: PhantomVariant) -> Vec<Ellipse> {
    let geometry: [(f64, f64, f64, f64, f64); 10] = [
        (0.69, 0.92, 0.0, 0.0, 0.0),
        (0.6624, 0.8740, 0.0, -0.0184, 0.0),
        (0.1100, 0.3100, 0.22, 0.0, -18.0),
        (0.1600, 0.4100, -0.22, 0.0, 18.0),
        (0.2100, 0.2500, 0.0, 0.35, 0.0),
        (0.0460, 0.0460, 0.0, 0.1, 0.0),
        (0.0460, 0.0460, 0.0, -0.1, 0.0),
        (0.0460, 0.0230, -0.08, -0.605, 0.0),
        (0.0230, 0.0230, 0.0, -0.606, 0.0),
        (0.0230, 0.0460, 0.06, -0.605, 0.0),
    ];
    let intensities: [f64; 10] = match variant {
        PhantomVariant::Standard => [
            1.0, -0.49, -0.01, -0.01, 0.005, 0.005, 0.005, 0.005, 0.005, 0.005,
        ],
        PhantomVariant::HighContrast => [
            1.0, -0.8, -0.2, -0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1,
        ],
    };
    geometry
        .iter()
        .zip(intensities)
        .map(|(&(a, b, x0, y0, phi_deg), intensity)| Ellipse {
            intensity,
            a,
            b,
            x0,
            y0,
            phi_deg,
        })
        .collect()
}

/// Rasterizes a set of ellipses on a 2-D grid whose coordinates are
/// normalized to [-1, 1] per axis.
pub fn rasterize_ellipses(grid: &ImageGrid, ellipses: &[Ellipse]) -> Result<Vec<f64>> {
    if grid.ndim() != 2 {
        return Err(Error::InvalidArgument("phantoms are 2-D".into()));
    }
    let (n0, n1) = (grid.dims()[0], grid.dims()[1]);
    let (h0, h1) = (n0 as f64 / 2.0, n1 as f64 / 2.0);
    let mut img = vec![0.0f64; grid.len()];
    for e in ellipses {
        let phi = e.phi_deg.to_radians();
        let (c, s) = (phi.cos(), phi.sin());
        for j1 in 0..n1 {
            let v = grid.coords(1)[j1] / h1 - e.y0;
            for j0 in 0..n0 {
                let u = grid.coords(0)[j0] / h0 - e.x0;
                let p = (u * c + v * s) / e.a;
                let q = (-u * s + v * c) / e.b;
                if p * p + q * q <= 1.0 {
                    img[j1 * n0 + j0] += e.intensity;
                }
            }
        }
    }
    Ok(img)
}

/// Standard ellipse phantom on the given 2-D grid; when `random_phase` is
/// set, each voxel is rotated by a phase drawn uniformly from [-pi, pi].
pub fn shepp_logan(
    grid: &ImageGrid,
    seed: u64,
    random_phase: bool,
    variant: PhantomVariant,
) -> Result<ComplexImage> {
    let mag = rasterize_ellipses(grid, &ellipse_table(variant))?;
    let data = apply_phase(&mag, seed, random_phase);
    ComplexImage::new(grid.clone(), data)
}

fn apply_phase(mag: &[f64], seed: u64, random_phase: bool) -> Vec<Complex64> {
    if !random_phase {
        return mag.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    mag.iter()
        .map(|&v| {
            let phi: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            Complex64::from_polar(v, phi)
        })
        .collect()
}

/// Center crop preserving the integer-centered coordinate convention: the
/// voxel at coordinate 0 stays at coordinate 0.
pub fn center_crop(image: &ComplexImage, dims: &[usize]) -> Result<ComplexImage> {
    let src = &image.grid;
    if dims.len() != src.ndim() {
        return Err(Error::ShapeMismatch("crop dimensionality mismatch".into()));
    }
    if dims.iter().zip(src.dims()).any(|(&c, &n)| c > n || c == 0) {
        return Err(Error::InvalidArgument(format!(
            "crop {dims:?} does not fit inside {:?}",
            src.dims()
        )));
    }
    let out_grid = ImageGrid::new(dims)?;
    let starts: Vec<usize> = dims
        .iter()
        .zip(src.dims())
        .map(|(&c, &n)| n / 2 - c / 2)
        .collect();
    let mut data = Vec::with_capacity(out_grid.len());
    for idx in 0..out_grid.len() {
        let sub = out_grid.unravel(idx);
        let mut src_idx = 0usize;
        for d in 0..dims.len() {
            src_idx += (starts[d] + sub[d]) * src.stride(d);
        }
        data.push(image.data[src_idx]);
    }
    ComplexImage::new(out_grid, data)
}

/// Simulated receive-coil sensitivities: smooth complex Gaussian lobes
/// centered on a circle around the field of view, normalized to unit
/// root-sum-square at every voxel.
pub fn sim_coils(grid: &ImageGrid, n_coils: usize, seed: u64) -> Result<SensitivityMaps> {
    if n_coils == 0 {
        return Err(Error::InvalidArgument("need at least one coil".into()));
    }
    if grid.ndim() != 2 {
        return Err(Error::InvalidArgument("simulated coil maps are 2-D".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.len();
    let (n0, n1) = (grid.dims()[0], grid.dims()[1]);
    let (h0, h1) = (n0 as f64 / 2.0, n1 as f64 / 2.0);
    let mut maps = Vec::with_capacity(n_coils * n);
    let angle0: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    for c in 0..n_coils {
        let ang = angle0 + std::f64::consts::TAU * c as f64 / n_coils as f64;
        let cx = 1.1 * ang.cos();
        let cy = 1.1 * ang.sin();
        let width = 0.9 + rng.gen_range(-0.05..0.05);
        let phase_slope_x: f64 = rng.gen_range(-0.5..0.5);
        let phase_slope_y: f64 = rng.gen_range(-0.5..0.5);
        let phase0: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        for j1 in 0..n1 {
            let v = grid.coords(1)[j1] / h1;
            for j0 in 0..n0 {
                let u = grid.coords(0)[j0] / h0;
                let d2 = ((u - cx) * (u - cx) + (v - cy) * (v - cy)) / (width * width);
                let mag = (-d2).exp();
                let ph = phase0 + phase_slope_x * u + phase_slope_y * v;
                maps.push(Complex64::from_polar(mag, ph));
            }
        }
    }
    Ok(SensitivityMaps::new(maps, n_coils, n)?.normalize_rss())
}

/// Dataset manifest written alongside generated phantoms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: String,
    pub seed: u64,
    pub dims: Vec<usize>,
    pub count: usize,
    pub jitter: f64,
    pub files: Vec<String>,
}

/// Jitter fraction used by [`make_dataset`].
pub const DATASET_JITTER: f64 = 0.05;

/// Generates `count` phantoms with per-image ellipse jitter (position,
/// size, intensity, each within +-`jitter`) and random phases, written as
/// `CIMG1` files plus a JSON manifest. Identical seeds produce
/// byte-identical files.
pub fn make_dataset(
    count: usize,
    grid: &ImageGrid,
    seed: u64,
    jitter: f64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    make_dataset_opts(count, grid, seed, jitter, true, out_dir)
}

/// [`make_dataset`] with the per-voxel random phase switchable; phase-free
/// sets are the structured targets used for trajectory-learning runs.
pub fn make_dataset_opts(
    count: usize,
    grid: &ImageGrid,
    seed: u64,
    jitter: f64,
    random_phase: bool,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if count == 0 {
        return Err(Error::InvalidArgument("dataset needs at least one image".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut files = Vec::with_capacity(count);
    for idx in 0..count {
        let img = jittered_phantom_opts(grid, seed, idx as u64, jitter, random_phase)?;
        let name = format!("phantom_{idx:04}.cimg");
        io::save_cimg(&out_dir.join(&name), &img)?;
        files.push(name);
    }
    let manifest = DatasetManifest {
        schema: "dataset-v1".into(),
        seed,
        dims: grid.dims().to_vec(),
        count,
        jitter,
        files,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(format!("manifest encode: {e}")))?;
    std::fs::write(out_dir.join("manifest.json"), json)?;
    Ok(manifest)
}

/// One jittered phantom, deterministic in `(seed, index)`.
pub fn jittered_phantom(
    grid: &ImageGrid,
    seed: u64,
    index: u64,
    jitter: f64,
) -> Result<ComplexImage> {
    jittered_phantom_opts(grid, seed, index, jitter, true)
}

/// [`jittered_phantom`] with the random phase switchable.
pub fn jittered_phantom_opts(
    grid: &ImageGrid,
    seed: u64,
    index: u64,
    jitter: f64,
    random_phase: bool,
) -> Result<ComplexImage> {
    jittered_phantom_variant(grid, seed, index, jitter, random_phase, PhantomVariant::Standard)
}

/// [`jittered_phantom_opts`] on a chosen intensity table.
pub fn jittered_phantom_variant(
    grid: &ImageGrid,
    seed: u64,
    index: u64,
    jitter: f64,
    random_phase: bool,
    variant: PhantomVariant,
) -> Result<ComplexImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9e3779b97f4a7c15));
    let mut table = ellipse_table(variant);
    for e in table.iter_mut() {
        e.x0 += rng.gen_range(-jitter..=jitter);
        e.y0 += rng.gen_range(-jitter..=jitter);
        let sa: f64 = rng.gen_range(-jitter..=jitter);
        let sb: f64 = rng.gen_range(-jitter..=jitter);
        e.a *= 1.0 + sa;
        e.b *= 1.0 + sb;
        let si: f64 = rng.gen_range(-jitter..=jitter);
        e.intensity *= 1.0 + si;
    }
    let mag = rasterize_ellipses(grid, &table)?;
    let phase_seed: u64 = rng.gen();
    let data = apply_phase(&mag, phase_seed, random_phase);
    ComplexImage::new(grid.clone(), data)
}

/// Loads a dataset directory written by [`make_dataset`].
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<ComplexImage>)> {
    let manifest: DatasetManifest = serde_json::from_str(
        &std::fs::read_to_string(dir.join("manifest.json"))?,
    )
    .map_err(|e| Error::Format(format!("manifest decode: {e}")))?;
    let mut images = Vec::with_capacity(manifest.files.len());
    for f in &manifest.files {
        images.push(io::load_cimg(&dir.join(f))?);
    }
    Ok((manifest, images))
}
