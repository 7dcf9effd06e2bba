//! Stochastic k-space trajectory learning: spline-parameterized sample
//! coordinates, reconstruction loss with gradient/slew soft penalties,
//! and Adam over shuffled mini-batches.
//!
//! The trajectory is `omega = B c` per shot and axis, where `B` is a
//! uniform quadratic B-spline design matrix whose rows sum to one, so a
//! constant coefficient vector reproduces a constant trajectory and
//! coefficient gradients are the exact transpose pullback `B' g`. The
//! training loss is the mean squared reconstruction error over a
//! mini-batch (data simulated from the candidate trajectory itself) plus
//! soft penalties on the physical gradient amplitude and slew rate.

use std::path::Path;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{ComplexImage, ImageGrid, Trajectory};
use crate::jacobian::forward_vjp_omega;
use crate::mri::{simulate_kspace, SenseOp, SensitivityMaps};
use crate::nufft::{NufftPlan, Precision, Preset};
use crate::recon::{recon_pullback, ReconConfig, ReconMethod};
use crate::solvers::{power_iteration_lipschitz, AdamState};
use crate::system::{NdftOp, NufftOp, SystemOp};
use crate::{io, Error, Result};

/// Uniform quadratic B-spline value with support `|u| < 3/2`.
fn bspline2(u: f64) -> f64 {
    let a = u.abs();
    if a <= 0.5 {
        0.75 - a * a
    } else if a < 1.5 {
        0.5 * (1.5 - a) * (1.5 - a)
    } else {
        0.0
    }
}

/// Per-shot spline design matrix: `samples_per_shot x n_kernels`, rows
/// summing to one (every sample sits in the interior of the kernel
/// support).
#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    values: Vec<f64>,
    samples_per_shot: usize,
    n_kernels: usize,
}

impl SplineBasis {
    pub fn new(samples_per_shot: usize, n_kernels: usize) -> Result<Self> {
        if samples_per_shot < 2 || n_kernels < 3 {
            return Err(Error::InvalidArgument(
                "spline basis needs at least 2 samples and 3 kernels per shot".into(),
            ));
        }
        let mut values = vec![0.0; samples_per_shot * n_kernels];
        let span = (n_kernels - 2) as f64;
        for t in 0..samples_per_shot {
            let s = 0.5 + span * t as f64 / (samples_per_shot - 1) as f64;
            for k in 0..n_kernels {
                values[t * n_kernels + k] = bspline2(s - k as f64);
            }
        }
        Ok(Self {
            values,
            samples_per_shot,
            n_kernels,
        })
    }

    pub fn samples_per_shot(&self) -> usize {
        self.samples_per_shot
    }

    pub fn n_kernels(&self) -> usize {
        self.n_kernels
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_kernels..(t + 1) * self.n_kernels]
    }

    /// `B c` for one shot's coefficient vector.
    pub fn apply(&self, coeffs: &[f64]) -> Vec<f64> {
        (0..self.samples_per_shot)
            .map(|t| self.row(t).iter().zip(coeffs).map(|(b, c)| b * c).sum())
            .collect()
    }

    /// `B' g` for one shot's per-sample gradient.
    pub fn apply_transpose(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_kernels];
        for (t, &gv) in g.iter().enumerate() {
            for (o, b) in out.iter_mut().zip(self.row(t)) {
                *o += b * gv;
            }
        }
        out
    }
}

/// Spline-parameterized trajectory: coefficients laid out
/// `[shot][kernel][dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineParam {
    pub coeffs: Vec<f64>,
    pub n_shots: usize,
    pub n_kernels: usize,
    pub ndim: usize,
    pub basis: SplineBasis,
    pub dwell_ms: f64,
}

impl SplineParam {
    /// Least-squares fit of an existing trajectory, shot by shot.
    pub fn fit(traj: &Trajectory, n_kernels: usize) -> Result<Self> {
        let basis = SplineBasis::new(traj.samples_per_shot(), n_kernels)?;
        let spp = traj.samples_per_shot();
        let ndim = traj.ndim();
        let mut coeffs = vec![0.0; traj.n_shots() * n_kernels * ndim];
        for s in 0..traj.n_shots() {
            for d in 0..ndim {
                let col: Vec<f64> = (0..spp).map(|t| traj.omega(s * spp + t, d)).collect();
                let c = crate::dense::lstsq_real(&basis.values, &col, spp, n_kernels)?;
                for (k, v) in c.into_iter().enumerate() {
                    coeffs[(s * n_kernels + k) * ndim + d] = v;
                }
            }
        }
        Ok(Self {
            coeffs,
            n_shots: traj.n_shots(),
            n_kernels,
            ndim,
            basis,
            dwell_ms: traj.dwell_ms(),
        })
    }

    pub fn m(&self) -> usize {
        self.n_shots * self.basis.samples_per_shot()
    }

    /// Reconstructs the trajectory `omega = B c`, clipping to the Nyquist
    /// box. Returns the trajectory, the per-coordinate clip mask, and the
    /// clip count.
    pub fn to_trajectory(&self) -> Result<(Trajectory, Vec<bool>, usize)> {
        let spp = self.basis.samples_per_shot();
        let m = self.m();
        let mut omega = vec![0.0; m * self.ndim];
        for s in 0..self.n_shots {
            for d in 0..self.ndim {
                let shot_coeffs: Vec<f64> = (0..self.n_kernels)
                    .map(|k| self.coeffs[(s * self.n_kernels + k) * self.ndim + d])
                    .collect();
                let col = self.basis.apply(&shot_coeffs);
                for (t, v) in col.into_iter().enumerate() {
                    omega[(s * spp + t) * self.ndim + d] = v;
                }
            }
        }
        let pi = std::f64::consts::PI;
        let mut mask = vec![false; m * self.ndim];
        let mut clips = 0usize;
        for (w, flag) in omega.iter_mut().zip(mask.iter_mut()) {
            if !w.is_finite() {
                return Err(Error::NonFinite("spline produced a non-finite coordinate".into()));
            }
            if w.abs() > pi {
                *w = w.clamp(-pi, pi);
                *flag = true;
                clips += 1;
            }
        }
        let traj = Trajectory::new(omega, self.ndim, self.n_shots, spp, self.dwell_ms)?;
        Ok((traj, mask, clips))
    }

    /// Exact transpose pullback of a per-sample gradient (flat `M x D`)
    /// to coefficient space; clipped coordinates contribute nothing.
    pub fn grad_to_coeffs(&self, g: &[f64], clip_mask: &[bool]) -> Vec<f64> {
        let spp = self.basis.samples_per_shot();
        let mut out = vec![0.0; self.coeffs.len()];
        let mut shot_g = vec![0.0; spp];
        for s in 0..self.n_shots {
            for d in 0..self.ndim {
                for t in 0..spp {
                    let idx = (s * spp + t) * self.ndim + d;
                    shot_g[t] = if clip_mask[idx] { 0.0 } else { g[idx] };
                }
                let gc = self.basis.apply_transpose(&shot_g);
                for (k, v) in gc.into_iter().enumerate() {
                    out[(s * self.n_kernels + k) * self.ndim + d] = v;
                }
            }
        }
        out
    }
}

fn build_backend(
    grid: &ImageGrid,
    traj: &Trajectory,
    backend: TrainBackend,
) -> Result<Box<dyn SystemOp>> {
    Ok(match backend {
        TrainBackend::Nufft(preset) => Box::new(NufftOp::new(NufftPlan::with_preset(
            grid,
            traj,
            preset,
            Precision::Double,
        )?)),
        TrainBackend::Exact => Box::new(NdftOp::new(grid.clone(), traj.clone())?),
    })
}

/// Uniform-angle diametric spokes through the k-space center, spanning
/// the Nyquist box.
pub fn radial_init(n_shots: usize, samples_per_shot: usize, dwell_ms: f64) -> Result<Trajectory> {
    if n_shots == 0 || samples_per_shot == 0 {
        return Err(Error::InvalidArgument("radial init needs positive counts".into()));
    }
    let mut omega = Vec::with_capacity(2 * n_shots * samples_per_shot);
    for s in 0..n_shots {
        let ang = std::f64::consts::PI * s as f64 / n_shots as f64;
        let (ca, sa) = (ang.cos(), ang.sin());
        for t in 0..samples_per_shot {
            let rho = std::f64::consts::PI
                * (2.0 * (t as f64 + 0.5) / samples_per_shot as f64 - 1.0);
            omega.push(rho * ca);
            omega.push(rho * sa);
        }
    }
    Trajectory::new(omega, 2, n_shots, samples_per_shot, dwell_ms)
}

/// All scalars of the optimization problem.
#[derive(Debug, Clone)]
pub struct TrajOptConfig {
    /// Gradient-amplitude penalty weight.
    pub mu1: f64,
    /// Slew-rate penalty weight.
    pub mu2: f64,
    /// Maximum gradient amplitude, Gauss/cm.
    pub gmax: f64,
    /// Maximum slew rate, Gauss/cm/ms.
    pub smax: f64,
    /// Gyromagnetic ratio, kHz/Gauss.
    pub gamma_khz_per_g: f64,
    /// Field of view, cm.
    pub fov_cm: f64,
    /// Image dimensions the trajectory samples.
    pub img_dims: Vec<usize>,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Optional hard cap on total Adam steps.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub recon: ReconConfig,
    /// Transform backend used during training.
    pub backend: TrainBackend,
}

/// Which transform evaluates the training pipeline: the gridding NUFFT
/// at a preset accuracy (the practical choice) or the exact summation
/// (the oracle, for gradient verification at small scale).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainBackend {
    Nufft(Preset),
    Exact,
}

impl TrajOptConfig {
    pub fn new(img_dims: &[usize], recon: ReconConfig) -> Self {
        Self {
            mu1: 10.0,
            mu2: 10.0,
            gmax: 5.0,
            smax: 15.0,
            gamma_khz_per_g: 4.2576,
            fov_cm: 22.0,
            img_dims: img_dims.to_vec(),
            lr: 1e-4,
            batch: 12,
            epochs: 1,
            max_steps: None,
            seed: 0,
            recon,
            backend: TrainBackend::Nufft(Preset::Low),
        }
    }

    /// rad/sample to cycles/cm along axis `d`.
    fn k_scale(&self, d: usize) -> f64 {
        self.img_dims[d] as f64 / (2.0 * std::f64::consts::PI * self.fov_cm)
    }

    /// First-difference threshold in cycles/cm per sample.
    pub fn gradient_threshold(&self, dwell_ms: f64) -> f64 {
        self.gamma_khz_per_g * dwell_ms * self.gmax
    }

    /// Second-difference threshold in cycles/cm per sample^2.
    pub fn slew_threshold(&self, dwell_ms: f64) -> f64 {
        self.gamma_khz_per_g * dwell_ms * dwell_ms * self.smax
    }
}

/// Soft-constraint evaluation: weighted value, per-coordinate gradient,
/// and the raw (unweighted) violation masses.
#[derive(Debug, Clone)]
pub struct PenaltyResult {
    pub value: f64,
    /// Flat sample-major `M x D` gradient in rad/sample units.
    pub grad: Vec<f64>,
    /// Unweighted first-difference violation mass.
    pub gradient_mass: f64,
    /// Unweighted second-difference violation mass.
    pub slew_mass: f64,
}

/// Hinge penalties on the Euclidean magnitude of the first and second
/// differences of the physical-unit trajectory within each shot:
/// `mu1 sum max(|D1 k| - g_thr, 0) + mu2 sum max(|D2 k| - s_thr, 0)`.
/// The subgradient at a kink (or a zero difference) is zero.
pub fn hardware_penalty(traj: &Trajectory, cfg: &TrajOptConfig) -> Result<PenaltyResult> {
    if traj.samples_per_shot() < 3 {
        return Err(Error::InvalidArgument(
            "hardware penalty needs at least 3 samples per shot".into(),
        ));
    }
    if cfg.img_dims.len() != traj.ndim() {
        return Err(Error::ShapeMismatch(
            "config image dims do not match trajectory dimensionality".into(),
        ));
    }
    let ndim = traj.ndim();
    let spp = traj.samples_per_shot();
    let g_thr = cfg.gradient_threshold(traj.dwell_ms());
    let s_thr = cfg.slew_threshold(traj.dwell_ms());
    let scales: Vec<f64> = (0..ndim).map(|d| cfg.k_scale(d)).collect();

    let mut grad = vec![0.0; traj.m() * ndim];
    let mut gradient_mass = 0.0;
    let mut slew_mass = 0.0;

    let k_at = |i: usize, d: usize| traj.omega(i, d) * scales[d];

    for s in 0..traj.n_shots() {
        let base = s * spp;
        // First differences.
        for t in 0..spp - 1 {
            let mut norm2 = 0.0;
            for d in 0..ndim {
                let diff = k_at(base + t + 1, d) - k_at(base + t, d);
                norm2 += diff * diff;
            }
            let norm = norm2.sqrt();
            if norm > g_thr {
                gradient_mass += norm - g_thr;
                for d in 0..ndim {
                    let diff = k_at(base + t + 1, d) - k_at(base + t, d);
                    let dd = cfg.mu1 * diff / norm * scales[d];
                    grad[(base + t + 1) * ndim + d] += dd;
                    grad[(base + t) * ndim + d] -= dd;
                }
            }
        }
        // Second differences.
        for t in 1..spp - 1 {
            let mut norm2 = 0.0;
            for d in 0..ndim {
                let diff =
                    k_at(base + t + 1, d) - 2.0 * k_at(base + t, d) + k_at(base + t - 1, d);
                norm2 += diff * diff;
            }
            let norm = norm2.sqrt();
            if norm > s_thr {
                slew_mass += norm - s_thr;
                for d in 0..ndim {
                    let diff =
                        k_at(base + t + 1, d) - 2.0 * k_at(base + t, d) + k_at(base + t - 1, d);
                    let dd = cfg.mu2 * diff / norm * scales[d];
                    grad[(base + t + 1) * ndim + d] += dd;
                    grad[(base + t) * ndim + d] -= 2.0 * dd;
                    grad[(base + t - 1) * ndim + d] += dd;
                }
            }
        }
    }

    Ok(PenaltyResult {
        value: cfg.mu1 * gradient_mass + cfg.mu2 * slew_mass,
        grad,
        gradient_mass,
        slew_mass,
    })
}

/// One training example: a reference image and (optionally) its coil
/// maps; a missing map set means single-coil unit sensitivity.
pub struct TrainSample<'a> {
    pub x_true: &'a [Complex64],
    pub maps: Option<&'a SensitivityMaps>,
}

/// Value and coefficient gradient of the mini-batch training loss.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub value: f64,
    pub recon_term: f64,
    pub penalty_term: f64,
    pub coeff_grad: Vec<f64>,
    pub clip_events: usize,
}

/// Mean reconstruction loss over the batch plus hardware penalties, with
/// the full gradient pulled back to spline coefficients. The measured
/// data is simulated from each reference image at the candidate
/// trajectory, and that dependence is part of the gradient.
pub fn training_loss(
    params: &SplineParam,
    grid: &ImageGrid,
    batch: &[TrainSample<'_>],
    cfg: &TrajOptConfig,
) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("training batch is empty".into()));
    }
    let (traj, clip_mask, clip_events) = params.to_trajectory()?;
    let single = build_backend(grid, &traj, cfg.backend)?;
    let single: &dyn SystemOp = single.as_ref();

    let m = traj.m();
    let ndim = traj.ndim();
    let mut recon_term = 0.0;
    let mut omega_grad = vec![0.0; m * ndim];
    let scale = 1.0 / batch.len() as f64;

    for sample in batch {
        let op: &dyn SystemOp;
        let sense;
        match sample.maps {
            Some(maps) => {
                sense = SenseOp::new(single, maps)?;
                op = &sense;
            }
            None => op = single,
        }
        let y = simulate_kspace(op, sample.x_true, 0.0, 0)?;
        let pb = recon_pullback(op, y.samples(), sample.x_true, &cfg.recon)?;
        if !pb.loss.is_finite() {
            return Err(Error::NonFinite("non-finite reconstruction loss".into()));
        }
        recon_term += scale * pb.loss;
        // Fixed-data part plus the simulated-measurement path.
        let sim = forward_vjp_omega(op, sample.x_true, &pb.wrt_y)?;
        for ((o, a), b) in omega_grad.iter_mut().zip(&pb.wrt_omega).zip(&sim) {
            *o += scale * (a + b);
        }
    }

    let pen = hardware_penalty(&traj, cfg)?;
    for (o, p) in omega_grad.iter_mut().zip(&pen.grad) {
        *o += p;
    }

    let coeff_grad = params.grad_to_coeffs(&omega_grad, &clip_mask);
    Ok(LossReport {
        value: recon_term + pen.value,
        recon_term,
        penalty_term: pen.value,
        coeff_grad,
        clip_events,
    })
}

/// One line of the training history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub batch_start: usize,
    pub loss: f64,
    pub recon_term: f64,
    pub penalty_term: f64,
    pub clip_events: usize,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: SplineParam,
    pub history: Vec<StepRecord>,
}

/// Adam over shuffled mini-batches. Checkpoints (trajectory, raw
/// coefficient blob, cumulative JSON history) are written per epoch when
/// an output directory is given. The run is bit-deterministic in the
/// seed.
pub fn train(
    dataset: &[ComplexImage],
    maps: Option<&SensitivityMaps>,
    init: &SplineParam,
    cfg: &TrajOptConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training dataset is empty".into()));
    }
    let grid = dataset[0].grid.clone();
    if grid.dims() != cfg.img_dims.as_slice() {
        return Err(Error::ShapeMismatch(
            "config image dims do not match the dataset grid".into(),
        ));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut params = init.clone();
    let mut adam = AdamState::new(params.coeffs.len(), cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::new();
    let mut step = 0usize;
    let mut recon_cfg = cfg.recon.clone();

    'outer: for epoch in 0..cfg.epochs {
        // Refresh the CS step size once per epoch at the current
        // trajectory (treated as a constant inside each gradient).
        if recon_cfg.method == ReconMethod::Cs {
            let (traj, _, _) = params.to_trajectory()?;
            let single = build_backend(&grid, &traj, cfg.backend)?;
            let single: &dyn SystemOp = single.as_ref();
            let lip = match maps {
                Some(mp) => {
                    let e = SenseOp::new(single, mp)?;
                    power_iteration_lipschitz(|v| e.adjoint(&e.forward(v)?), e.n())?
                }
                None => {
                    power_iteration_lipschitz(|v| single.adjoint(&single.forward(v)?), single.n())?
                }
            };
            recon_cfg.lipschitz = Some(lip * 1.05);
        }
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);

        for chunk in order.chunks(cfg.batch.max(1)) {
            let batch: Vec<TrainSample> = chunk
                .iter()
                .map(|&i| TrainSample {
                    x_true: &dataset[i].data,
                    maps,
                })
                .collect();
            let mut step_cfg = cfg.clone();
            step_cfg.recon = recon_cfg.clone();
            let report = training_loss(&params, &grid, &batch, &step_cfg)?;
            if !report.value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "non-finite loss at step {step} (batch starting at {})",
                    chunk[0]
                )));
            }
            adam.step(&mut params.coeffs, &report.coeff_grad)?;
            history.push(StepRecord {
                step,
                epoch,
                batch_start: chunk[0],
                loss: report.value,
                recon_term: report.recon_term,
                penalty_term: report.penalty_term,
                clip_events: report.clip_events,
            });
            step += 1;
            if cfg.max_steps.is_some_and(|cap| step >= cap) {
                if let Some(dir) = out_dir {
                    write_checkpoint(dir, epoch, &params, &history)?;
                }
                break 'outer;
            }
        }
        if let Some(dir) = out_dir {
            write_checkpoint(dir, epoch, &params, &history)?;
        }
    }

    Ok(TrainOutcome { params, history })
}

fn write_checkpoint(
    dir: &Path,
    epoch: usize,
    params: &SplineParam,
    history: &[StepRecord],
) -> Result<()> {
    let (traj, _, _) = params.to_trajectory()?;
    io::save_traj(&dir.join(format!("checkpoint_ep{epoch:03}.traj")), &traj)?;
    let mut blob = Vec::with_capacity(params.coeffs.len() * 8);
    for c in &params.coeffs {
        blob.extend_from_slice(&c.to_le_bytes());
    }
    std::fs::write(dir.join(format!("checkpoint_ep{epoch:03}.coeffs")), blob)?;
    let json = serde_json::to_string_pretty(history)
        .map_err(|e| Error::Format(format!("history encode: {e}")))?;
    std::fs::write(dir.join("history.json"), json)?;
    Ok(())
}

/// Windowed moving average of the loss history, for convergence checks.
pub fn smoothed_loss(history: &[StepRecord], window: usize) -> Vec<f64> {
    if history.is_empty() || window == 0 {
        return Vec::new();
    }
    let w = window.min(history.len());
    let mut out = Vec::with_capacity(history.len() + 1 - w);
    let mut acc: f64 = history[..w].iter().map(|r| r.loss).sum();
    out.push(acc / w as f64);
    for i in w..history.len() {
        acc += history[i].loss - history[i - w].loss;
        out.push(acc / w as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndft;
    use crate::phantom;
    use rand::Rng;

    #[test]
    fn radial_geometry() {
        let t = radial_init(2, 8, 0.004).unwrap();
        // Shots at angles 0 and pi/2 exactly.
        for i in 0..8 {
            assert_eq!(t.omega(i, 1), 0.0);
            assert_eq!(t.omega(8 + i, 0).abs() < 1e-15, true);
        }
        // Spokes pass through the center at the midpoint within half a
        // sample step.
        let step = 2.0 * std::f64::consts::PI / 8.0;
        for s in 0..2 {
            let mid = (0..8)
                .map(|i| {
                    let r: f64 = (0..2).map(|d| t.omega(s * 8 + i, d).powi(2)).sum();
                    r.sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            assert!(mid <= step / 2.0 + 1e-12);
        }
        // Everything inside the box.
        assert!(t.omega_flat().iter().all(|w| w.abs() < std::f64::consts::PI));
    }

    #[test]
    fn paper_scale_radial_counts() {
        let t = radial_init(16, 1280, 5.0 / 1280.0).unwrap();
        assert_eq!(t.m(), 16 * 1280);
        assert!((t.readout_times()[1279] - (5.0 - 5.0 / 1280.0)).abs() < 1e-9);
    }

    #[test]
    fn basis_rows_sum_to_one() {
        for (spp, k) in [(8usize, 3usize), (40, 7), (320, 40), (13, 5)] {
            let b = SplineBasis::new(spp, k).unwrap();
            for t in 0..spp {
                let s: f64 = b.row(t).iter().sum();
                assert!((s - 1.0).abs() < 1e-12, "row {t} of {spp}x{k} sums to {s}");
            }
        }
    }

    #[test]
    fn constant_coefficients_give_constant_trajectory() {
        let basis = SplineBasis::new(16, 6).unwrap();
        let p = SplineParam {
            coeffs: vec![0.7; 2 * 6 * 2],
            n_shots: 2,
            n_kernels: 6,
            ndim: 2,
            basis,
            dwell_ms: 0.01,
        };
        let (t, _, clips) = p.to_trajectory().unwrap();
        assert_eq!(clips, 0);
        for &w in t.omega_flat() {
            assert!((w - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn transpose_pairing_exact() {
        let basis = SplineBasis::new(24, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let c: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let g: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let bc = basis.apply(&c);
            let btg = basis.apply_transpose(&g);
            let lhs: f64 = btg.iter().zip(&c).map(|(a, b)| a * b).sum();
            let rhs: f64 = g.iter().zip(&bc).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn spline_fit_reproduces_radial_exactly() {
        // Quadratic splines have linear precision on the interior, and
        // every row here has full support, so a straight spoke fits to
        // machine precision (well under the one-sample-step allowance).
        let traj = radial_init(4, 320, 0.004).unwrap();
        let p = SplineParam::fit(&traj, 40).unwrap();
        let (back, _, _) = p.to_trajectory().unwrap();
        let step = 2.0 * std::f64::consts::PI / 320.0;
        let max_dev = traj
            .omega_flat()
            .iter()
            .zip(back.omega_flat())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_dev <= step, "deviation {max_dev} vs step {step}");
        assert!(max_dev < 1e-9, "linear spokes should fit exactly, got {max_dev}");
    }

    #[test]
    fn clipping_counts_and_masks() {
        let basis = SplineBasis::new(8, 4).unwrap();
        let p = SplineParam {
            coeffs: vec![4.0; 1 * 4 * 1],
            n_shots: 1,
            n_kernels: 4,
            ndim: 1,
            basis,
            dwell_ms: 0.01,
        };
        let (t, mask, clips) = p.to_trajectory().unwrap();
        assert_eq!(clips, 8);
        assert!(mask.iter().all(|&b| b));
        assert!(t.omega_flat().iter().all(|&w| w == std::f64::consts::PI));
        // Clipped coordinates pass no gradient.
        let g = vec![1.0; 8];
        let gc = p.grad_to_coeffs(&g, &mask);
        assert!(gc.iter().all(|&v| v == 0.0));
    }

    fn desk_cfg(dims: &[usize]) -> TrajOptConfig {
        TrajOptConfig::new(dims, ReconConfig::cg_sense())
    }

    #[test]
    fn stationary_trajectory_has_zero_penalty() {
        let basis = SplineBasis::new(8, 4).unwrap();
        let p = SplineParam {
            coeffs: vec![0.3; 4 * 2],
            n_shots: 1,
            n_kernels: 4,
            ndim: 2,
            basis,
            dwell_ms: 0.004,
        };
        let (t, _, _) = p.to_trajectory().unwrap();
        let pen = hardware_penalty(&t, &desk_cfg(&[16, 16])).unwrap();
        assert_eq!(pen.value, 0.0);
        assert!(pen.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn threshold_boundary_is_inclusive() {
        // Three collinear samples with the first-difference magnitude
        // exactly at the limit: no violation.
        let cfg = desk_cfg(&[16, 16]);
        let dwell = 0.004;
        let g_thr = cfg.gradient_threshold(dwell);
        let step_rad = g_thr / cfg.k_scale(0);
        let omega = vec![0.0, 0.0, step_rad, 0.0, 2.0 * step_rad, 0.0];
        let t = Trajectory::new(omega, 2, 1, 3, dwell).unwrap();
        let pen = hardware_penalty(&t, &cfg).unwrap();
        assert_eq!(pen.value, 0.0);

        // A hair over the limit violates.
        let omega = vec![0.0, 0.0, step_rad * 1.01, 0.0, 2.02 * step_rad, 0.0];
        let t = Trajectory::new(omega, 2, 1, 3, dwell).unwrap();
        let pen = hardware_penalty(&t, &cfg).unwrap();
        assert!(pen.value > 0.0);
        assert!(pen.gradient_mass > 0.0);
    }

    #[test]
    fn penalty_matches_straight_line_evaluation_and_fd() {
        // A compressed radial trajectory that violates gmax everywhere.
        let traj = radial_init(2, 16, 0.004).unwrap();
        let cfg = desk_cfg(&[64, 64]);
        let pen = hardware_penalty(&traj, &cfg).unwrap();

        // Independent straight-line evaluation of the formula.
        let mut expect = 0.0;
        let scale: Vec<f64> =
            (0..2).map(|_| 64.0 / (2.0 * std::f64::consts::PI * cfg.fov_cm)).collect();
        let (g_thr, s_thr) = (
            cfg.gradient_threshold(0.004),
            cfg.slew_threshold(0.004),
        );
        for s in 0..2 {
            for t in 0..15 {
                let i = s * 16 + t;
                let dx = (traj.omega(i + 1, 0) - traj.omega(i, 0)) * scale[0];
                let dy = (traj.omega(i + 1, 1) - traj.omega(i, 1)) * scale[1];
                expect += cfg.mu1 * ((dx * dx + dy * dy).sqrt() - g_thr).max(0.0);
            }
            for t in 1..15 {
                let i = s * 16 + t;
                let dx = (traj.omega(i + 1, 0) - 2.0 * traj.omega(i, 0)
                    + traj.omega(i - 1, 0))
                    * scale[0];
                let dy = (traj.omega(i + 1, 1) - 2.0 * traj.omega(i, 1)
                    + traj.omega(i - 1, 1))
                    * scale[1];
                expect += cfg.mu2 * ((dx * dx + dy * dy).sqrt() - s_thr).max(0.0);
            }
        }
        assert!(pen.value > 0.0);
        assert!((pen.value - expect).abs() <= 1e-9 * expect);

        // Finite differences, away from the kinks.
        let fd = ndft::fd_gradient(
            |t| Ok(hardware_penalty(t, &cfg)?.value),
            &traj,
            1e-7,
        )
        .unwrap();
        let num: f64 = pen
            .grad
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(num / den < 1e-6, "penalty fd err {}", num / den);
    }

    #[test]
    fn doubling_mu_doubles_penalty_component() {
        let traj = radial_init(2, 12, 0.004).unwrap();
        let mut cfg = desk_cfg(&[64, 64]);
        let base = hardware_penalty(&traj, &cfg).unwrap();
        cfg.mu1 *= 2.0;
        cfg.mu2 *= 2.0;
        let doubled = hardware_penalty(&traj, &cfg).unwrap();
        assert!((doubled.value - 2.0 * base.value).abs() <= 1e-12 * base.value.max(1.0));
        assert_eq!(doubled.gradient_mass, base.gradient_mass);
    }

    #[test]
    fn zero_image_batch_has_zero_loss_and_gradient() {
        let grid = ImageGrid::new(&[12, 12]).unwrap();
        let traj = radial_init(2, 24, 0.004).unwrap();
        let params = SplineParam::fit(&traj, 8).unwrap();
        let cfg = desk_cfg(&[12, 12]);
        let zeros = vec![Complex64::default(); 144];
        let batch = [TrainSample {
            x_true: &zeros,
            maps: None,
        }];
        let report = training_loss(&params, &grid, &batch, &cfg).unwrap();
        assert_eq!(report.recon_term, 0.0);
        assert!(report.coeff_grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn training_loss_gradient_matches_fd_qpls() {
        let grid = ImageGrid::new(&[12, 12]).unwrap();
        let traj = radial_init(1, 24, 0.004).unwrap();
        let params = SplineParam::fit(&traj, 8).unwrap();
        let img = phantom::shepp_logan(&grid, 3, true, phantom::PhantomVariant::Standard).unwrap();

        let mut cfg = desk_cfg(&[12, 12]);
        cfg.recon.tol_mode = true;
        // The finite-difference oracle differentiates the exact-summation
        // pipeline; a heavier penalty keeps the solves well conditioned
        // so solver noise stays out of the quotients.
        cfg.recon.lambda = 1e-2;
        cfg.backend = TrainBackend::Exact;

        let batch = [TrainSample {
            x_true: &img.data,
            maps: None,
        }];
        let report = training_loss(&params, &grid, &batch, &cfg).unwrap();

        // Central differences over a handful of spline coefficients.
        let eps = 1e-4;
        let probe = [0usize, 5, 8, 11, 14];
        for &j in &probe {
            let mut pp = params.clone();
            pp.coeffs[j] += eps;
            let lp = training_loss(&pp, &grid, &batch, &cfg).unwrap().value;
            let mut pm = params.clone();
            pm.coeffs[j] -= eps;
            let lm = training_loss(&pm, &grid, &batch, &cfg).unwrap().value;
            let fd = (lp - lm) / (2.0 * eps);
            let got = report.coeff_grad[j];
            assert!(
                (got - fd).abs() <= 1e-3 * fd.abs().max(1e-6),
                "coeff {j}: analytic {got} vs fd {fd}"
            );
        }
    }

    #[test]
    fn train_smoke_run_is_deterministic() {
        let grid = ImageGrid::new(&[8, 8]).unwrap();
        let dataset: Vec<ComplexImage> = (0..4)
            .map(|i| phantom::jittered_phantom(&grid, 42, i, 0.05).unwrap())
            .collect();
        let traj = radial_init(2, 16, 0.004).unwrap();
        let init = SplineParam::fit(&traj, 5).unwrap();
        let mut cfg = desk_cfg(&[8, 8]);
        cfg.batch = 2;
        cfg.epochs = 2;
        cfg.seed = 9;
        cfg.recon.iters = 5;

        let dir = tempfile::tempdir().unwrap();
        let run1 = train(&dataset, None, &init, &cfg, Some(dir.path())).unwrap();
        let run2 = train(&dataset, None, &init, &cfg, None).unwrap();
        assert_eq!(run1.history.len(), 4);
        assert_eq!(run1.params.coeffs, run2.params.coeffs);
        for (a, b) in run1.history.iter().zip(&run2.history) {
            assert_eq!(a.loss, b.loss);
        }
        assert!(dir.path().join("checkpoint_ep001.traj").exists());
        assert!(dir.path().join("history.json").exists());

        // Zero epochs returns the initialization untouched.
        let mut cfg0 = cfg.clone();
        cfg0.epochs = 0;
        let out = train(&dataset, None, &init, &cfg0, None).unwrap();
        assert_eq!(out.params.coeffs, init.coeffs);
        assert!(out.history.is_empty());
    }

    #[test]
    fn smoothed_loss_window() {
        let mk = |loss: f64, step: usize| StepRecord {
            step,
            epoch: 0,
            batch_start: 0,
            loss,
            recon_term: loss,
            penalty_term: 0.0,
            clip_events: 0,
        };
        let hist: Vec<StepRecord> = [4.0, 2.0, 6.0, 0.0]
            .iter()
            .enumerate()
            .map(|(i, &l)| mk(l, i))
            .collect();
        assert_eq!(smoothed_loss(&hist, 2), vec![3.0, 4.0, 3.0]);
        assert_eq!(smoothed_loss(&hist, 10), vec![3.0]);
    }
}
