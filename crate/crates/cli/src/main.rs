//! Command-line driver: dataset synthesis, signal simulation, image
//! reconstruction, accuracy validation, Jacobian benchmarks, and
//! trajectory optimization.
//!
//! Every command is deterministic given its flags and seed. Outputs are
//! binary (`CIMG1` / `TRAJ1` / `KSPC1`) plus schema-versioned JSON lines
//! for anything measured. Exit codes: 0 success, 2 validation-threshold
//! failure (also CLI usage errors), 3 solver non-convergence, 4 I/O or
//! format error.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;

use nufft_jac::grid::{ComplexImage, ImageGrid, Trajectory};
use nufft_jac::jacobian::{
    energy_probe_adjoint, energy_probe_forward, energy_probe_gram, energy_probe_psd_inverse,
    gram_vjp_omega, psd_inverse_apply, psd_inverse_vjp_omega, CgConfig,
};
use nufft_jac::meter;
use nufft_jac::mri::{Regularizer, SenseOp, SensitivityMaps};
use nufft_jac::ndft;
use nufft_jac::nufft::{NufftPlan, Precision, Preset};
use nufft_jac::recon::{recon_cs, recon_qpls, ReconConfig, ReconMethod, ReconMetrics};
use nufft_jac::system::{NdftOp, NufftOp, SystemOp};
use nufft_jac::trajopt::{
    radial_init, smoothed_loss, train, SplineParam, TrainBackend, TrajOptConfig,
};
use nufft_jac::{io, metrics, phantom, Error};

#[global_allocator]
static ALLOC: meter::MeterAlloc = meter::MeterAlloc;

#[derive(Parser)]
#[command(name = "nufft-jac", version, about = "Non-uniform FFT Jacobian toolkit")]
struct Cli {
    /// Cap the worker thread count (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom dataset (CIMG1 files + JSON manifest).
    Phantom(PhantomArgs),
    /// Simulate k-space data from an image and a trajectory.
    Simulate(SimulateArgs),
    /// Reconstruct an image from k-space data.
    Recon(ReconArgs),
    /// Accuracy validation suites against the exact transform.
    Validate(ValidateArgs),
    /// Wall-time and peak-allocation benchmarks of the Jacobian paths.
    Bench(BenchArgs),
    /// Learn a sampling trajectory from a dataset.
    Optimize(OptimizeArgs),
}

#[derive(Args)]
struct PhantomArgs {
    /// Image dimensions, e.g. 64,64.
    #[arg(long, value_delimiter = ',', required = true)]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ellipse jitter fraction.
    #[arg(long, default_value_t = phantom::DATASET_JITTER)]
    jitter: f64,
    /// Skip the per-voxel random phase (structured targets for training).
    #[arg(long)]
    no_phase: bool,
    #[arg(long, required = true)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, required = true)]
    image: PathBuf,
    #[arg(long, required = true)]
    traj: PathBuf,
    /// Optional coil-map stack (CIMG1 records).
    #[arg(long)]
    maps: Option<PathBuf>,
    /// Complex noise standard deviation per component.
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "high")]
    preset: String,
    #[arg(long, required = true)]
    out: PathBuf,
}

#[derive(Args)]
struct ReconArgs {
    /// cgsense | qpls | cs
    #[arg(long, required = true)]
    method: String,
    #[arg(long, required = true)]
    kspace: PathBuf,
    #[arg(long, required = true)]
    traj: PathBuf,
    #[arg(long)]
    maps: Option<PathBuf>,
    /// Reference image for PSNR/SSIM reporting.
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    /// Image dimensions when no reference is given, e.g. 64,64.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long, default_value = "high")]
    preset: String,
    #[arg(long, required = true)]
    out: PathBuf,
    /// Metrics JSON-lines file (defaults to stdout).
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// jacobians | adjoints | oracle
    #[arg(long, required = true)]
    suite: String,
    /// Grid side length for the oracle suite.
    #[arg(long, default_value_t = 40)]
    size: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Report JSON-lines file (defaults to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional CSV gradient profiles (index + per-method columns).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// gram | inverse
    #[arg(long, required = true)]
    op: String,
    /// small (40x40) | large (400x400)
    #[arg(long, default_value = "small")]
    size: String,
    #[arg(long, default_value_t = 20)]
    cg_iters: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OptimizeArgs {
    /// key = value configuration file.
    #[arg(long, required = true)]
    config: PathBuf,
    #[arg(long, required = true)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::NonConvergence(_) | Error::Breakdown(_) => 3u8,
                Error::Io(_) | Error::Format(_) => 4u8,
                _ => 2u8,
            };
            ExitCode::from(code)
        }
    }
}

fn run(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::Phantom(a) => cmd_phantom(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Recon(a) => cmd_recon(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Optimize(a) => cmd_optimize(a),
    }
}

/// A JSON-lines sink: a file when a path is given, stdout otherwise.
struct Sink {
    file: Option<std::fs::File>,
}

impl Sink {
    fn new(path: Option<&Path>) -> Result<Self, Error> {
        Ok(Self {
            file: path.map(std::fs::File::create).transpose()?,
        })
    }

    fn emit<T: serde::Serialize>(&mut self, record: &T) -> Result<(), Error> {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::Format(format!("json encode: {e}")))?;
        match &mut self.file {
            Some(f) => writeln!(f, "{line}")?,
            None => println!("{line}"),
        }
        Ok(())
    }
}

fn cmd_phantom(a: PhantomArgs) -> Result<ExitCode, Error> {
    let grid = ImageGrid::new(&a.dims)?;
    let manifest =
        phantom::make_dataset_opts(a.count, &grid, a.seed, a.jitter, !a.no_phase, &a.out)?;
    eprintln!(
        "wrote {} phantoms ({:?}) to {}",
        manifest.count,
        manifest.dims,
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn load_maps(path: &Path, n: usize) -> Result<SensitivityMaps, Error> {
    let stack = io::load_cimg_stack(path)?;
    let mut flat = Vec::with_capacity(stack.len() * n);
    for img in &stack {
        if img.grid.len() != n {
            return Err(Error::ShapeMismatch(
                "coil map grid does not match the image grid".into(),
            ));
        }
        flat.extend_from_slice(&img.data);
    }
    SensitivityMaps::new(flat, stack.len(), n)
}

fn cmd_simulate(a: SimulateArgs) -> Result<ExitCode, Error> {
    let image = io::load_cimg(&a.image)?;
    let traj = io::load_traj(&a.traj)?;
    let preset: Preset = a.preset.parse()?;
    let plan = NufftPlan::with_preset(&image.grid, &traj, preset, Precision::Double)?;
    let single = NufftOp::new(plan);
    let ksp = match &a.maps {
        Some(p) => {
            let maps = load_maps(p, image.grid.len())?;
            let op = SenseOp::new(&single, &maps)?;
            nufft_jac::mri::simulate_kspace(&op, &image.data, a.noise_sigma, a.seed)?
        }
        None => nufft_jac::mri::simulate_kspace(&single, &image.data, a.noise_sigma, a.seed)?,
    };
    io::save_kspace(&a.out, &ksp)?;
    eprintln!(
        "simulated {} samples x {} coils to {}",
        ksp.m(),
        ksp.n_coils(),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_recon(a: ReconArgs) -> Result<ExitCode, Error> {
    let method: ReconMethod = a.method.parse()?;
    let ksp = io::load_kspace(&a.kspace)?;
    let traj = io::load_traj(&a.traj)?;
    let reference = a.reference.as_deref().map(io::load_cimg).transpose()?;
    let dims: Vec<usize> = match (&reference, &a.dims) {
        (Some(r), _) => r.grid.dims().to_vec(),
        (None, Some(d)) => d.clone(),
        (None, None) => {
            return Err(Error::InvalidArgument(
                "need --ref or --dims to size the reconstruction".into(),
            ))
        }
    };
    let grid = ImageGrid::new(&dims)?;
    let preset: Preset = a.preset.parse()?;
    let plan = NufftPlan::with_preset(&grid, &traj, preset, Precision::Double)?;
    let single = NufftOp::new(plan);
    let maps = a
        .maps
        .as_deref()
        .map(|p| load_maps(p, grid.len()))
        .transpose()?;
    if ksp.n_coils() != maps.as_ref().map_or(1, |m| m.n_coils()) {
        return Err(Error::ShapeMismatch(format!(
            "k-space has {} coils but the maps describe {}",
            ksp.n_coils(),
            maps.as_ref().map_or(1, |m| m.n_coils())
        )));
    }

    let mut cfg = match method {
        ReconMethod::CgSense => ReconConfig::cg_sense(),
        ReconMethod::Qpls => ReconConfig::qpls(),
        ReconMethod::Cs => ReconConfig::cs(),
    };
    if let Some(l) = a.lambda {
        cfg.lambda = l;
    }
    if let Some(it) = a.iters {
        cfg.iters = it;
    }

    let start = Instant::now();
    let run = |op: &dyn SystemOp| match method {
        ReconMethod::Cs => recon_cs(op, ksp.samples(), &cfg),
        _ => recon_qpls(op, ksp.samples(), &cfg),
    };
    let image = match &maps {
        Some(m) => run(&SenseOp::new(&single, m)?)?,
        None => run(&single)?,
    };
    let runtime_ms = start.elapsed().as_secs_f64() * 1e3;

    let out_img = ComplexImage::new(grid, image)?;
    io::save_cimg(&a.out, &out_img)?;

    let (psnr_db, ssim) = match &reference {
        Some(r) => (
            Some(metrics::psnr(&out_img, r)?),
            if r.grid.ndim() == 2 {
                Some(metrics::ssim(&out_img, r)?)
            } else {
                None
            },
        ),
        None => (None, None),
    };
    let record = ReconMetrics {
        schema: "metrics-v1".into(),
        method: a.method.clone(),
        psnr_db,
        ssim,
        runtime_ms,
    };
    let mut sink = Sink::new(a.metrics.as_deref())?;
    sink.emit(&record)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(serde::Serialize)]
struct ValidationRecord {
    schema: &'static str,
    suite: String,
    case: String,
    backend: String,
    value: f64,
    threshold: f64,
    pass: bool,
}

struct Validation {
    sink: Sink,
    all_pass: bool,
    suite: String,
}

impl Validation {
    fn check(&mut self, case: &str, backend: &str, value: f64, threshold: f64) -> Result<(), Error> {
        let pass = value <= threshold;
        self.all_pass &= pass;
        self.sink.emit(&ValidationRecord {
            schema: "validate-v1",
            suite: self.suite.clone(),
            case: case.into(),
            backend: backend.into(),
            value,
            threshold,
            pass,
        })
    }
}

/// The reference validation scene: a center patch of the ellipse phantom
/// with random phase, simulated coils, and one diametric spoke.
fn validation_scene(
    size: usize,
    seed: u64,
    coils: usize,
    spoke_len: usize,
) -> Result<(ImageGrid, Vec<Complex64>, SensitivityMaps, Trajectory), Error> {
    let big = ImageGrid::new(&[4 * size, 4 * size])?;
    let full = phantom::shepp_logan(&big, seed, true, phantom::PhantomVariant::Standard)?;
    let patch = phantom::center_crop(&full, &[size, size])?;
    let grid = patch.grid.clone();
    let maps = phantom::sim_coils(&grid, coils, seed ^ 0xc0ffee)?;
    let mut omega = Vec::with_capacity(2 * spoke_len);
    let ang = 0.4f64;
    for t in 0..spoke_len {
        let rho = std::f64::consts::PI * (2.0 * (t as f64 + 0.5) / spoke_len as f64 - 1.0);
        omega.push(rho * ang.cos());
        omega.push(rho * ang.sin());
    }
    let traj = Trajectory::new(omega, 2, 1, spoke_len, 0.004)?;
    Ok((grid, patch.data, maps, traj))
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

fn cmd_validate(a: ValidateArgs) -> Result<ExitCode, Error> {
    let mut v = Validation {
        sink: Sink::new(a.out.as_deref())?,
        all_pass: true,
        suite: a.suite.clone(),
    };
    let (grid, x, maps, traj) = validation_scene(a.size, a.seed, 8, 2 * a.size)?;

    match a.suite.as_str() {
        "oracle" => {
            let exact = NdftOp::new(grid.clone(), traj.clone())?;
            let esense = SenseOp::new(&exact, &maps)?;
            let y_exact = esense.forward(&x)?;
            for preset in [Preset::Low, Preset::High] {
                let plan = NufftPlan::with_preset(&grid, &traj, preset, Precision::Double)?;
                let fast = NufftOp::new(plan);
                let fsense = SenseOp::new(&fast, &maps)?;
                let y_fast = fsense.forward(&x)?;
                let err = metrics::nrmsd(&y_fast, &y_exact)?;
                let threshold = match preset {
                    Preset::High => 1e-4,
                    Preset::Low => 2e-2,
                };
                v.check("forward_nrmsd", preset.name(), err, threshold)?;

                let back_exact = esense.adjoint(&y_exact)?;
                let back_fast = fsense.adjoint(&y_exact)?;
                let err = metrics::nrmsd(&back_fast, &back_exact)?;
                v.check("adjoint_nrmsd", preset.name(), err, threshold)?;
            }
        }
        "adjoints" => {
            for preset in [Preset::Low, Preset::High] {
                let plan = NufftPlan::with_preset(&grid, &traj, preset, Precision::Double)?;
                let fast = NufftOp::new(plan);
                let fsense = SenseOp::new(&fast, &maps)?;
                let err = pairing_error(&fsense, a.seed)?;
                v.check("adjoint_pairing", preset.name(), err, 1e-12)?;
            }
            let exact = NdftOp::new(grid.clone(), traj.clone())?;
            let esense = SenseOp::new(&exact, &maps)?;
            v.check("adjoint_pairing", "ndft", pairing_error(&esense, a.seed)?, 1e-12)?;
        }
        "jacobians" => {
            validate_jacobians(&mut v, &grid, &x, &maps, &traj, a.csv.as_deref())?;
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown suite {other:?}; expected jacobians|adjoints|oracle"
            )))
        }
    }

    Ok(if v.all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn pairing_error(op: &dyn SystemOp, seed: u64) -> Result<f64, Error> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let x: Vec<Complex64> = (0..op.n())
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let y: Vec<Complex64> = (0..op.m_total())
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let ax = op.forward(&x)?;
        let aty = op.adjoint(&y)?;
        let lhs: Complex64 = ax.iter().zip(&y).map(|(p, q)| p.conj() * q).sum();
        let rhs: Complex64 = x.iter().zip(&aty).map(|(p, q)| p.conj() * q).sum();
        worst = worst.max((lhs - rhs).norm() / lhs.norm().max(1e-30));
    }
    Ok(worst)
}

/// Reference-methodology gradient comparison: for each operator, the
/// trajectory gradient of an energy probe on the exact backend is checked
/// against finite differences, the fast backend against both finite
/// differences and the exact gradient.
fn validate_jacobians(
    v: &mut Validation,
    grid: &ImageGrid,
    x: &[Complex64],
    maps: &SensitivityMaps,
    traj: &Trajectory,
    csv: Option<&Path>,
) -> Result<(), Error> {
    // A shorter spoke keeps the finite-difference sweep quick and the
    // regularized systems exactly solvable inside the CG budget.
    let m = 16usize;
    let mut omega = Vec::with_capacity(2 * m);
    for t in 0..m {
        let rho = 2.9 * (2.0 * (t as f64 + 0.5) / m as f64 - 1.0);
        omega.push(rho * 0.4f64.cos());
        omega.push(rho * 0.4f64.sin());
    }
    let short = Trajectory::new(omega, 2, 1, m, traj.dwell_ms())?;
    let lambda = 1.0;
    let treg = Regularizer::Identity;
    let cg = CgConfig {
        tol: 1e-9,
        max_iters: 20,
        strict: false,
    };

    let exact = NdftOp::new(grid.clone(), short.clone())?;
    let esense = SenseOp::new(&exact, maps)?;
    let plan = NufftPlan::with_preset(grid, &short, Preset::High, Precision::Double)?;
    let fast = NufftOp::new(plan);
    let fsense = SenseOp::new(&fast, maps)?;

    let y_probe = esense.forward(x)?;

    let mut profiles: Vec<(String, Vec<f64>)> = Vec::new();

    for (case, which) in [
        ("forward", 0usize),
        ("adjoint", 1),
        ("gram", 2),
        ("inverse", 3),
    ] {
        let grad_of = |op: &dyn SystemOp| -> Result<Vec<f64>, Error> {
            Ok(match which {
                0 => energy_probe_forward(op, x)?.wrt_omega,
                1 => energy_probe_adjoint(op, &y_probe)?.wrt_omega,
                2 => energy_probe_gram(op, x)?.wrt_omega,
                _ => energy_probe_psd_inverse(op, lambda, &treg, x, &cg)?.wrt_omega,
            })
        };
        // The inverse probe runs single-coil: its Gram then has at most
        // M+1 distinct eigenvalues, so the fixed 20-iteration CG budget
        // is an exact solve and finite differences are meaningful.
        let loss_of = |t: &Trajectory| -> Result<f64, Error> {
            let ex = NdftOp::new(grid.clone(), t.clone())?;
            let es = SenseOp::new(&ex, maps)?;
            let val: f64 = match which {
                0 => es.forward(x)?.iter().map(|q| q.norm_sqr()).sum(),
                1 => es.adjoint(&y_probe)?.iter().map(|q| q.norm_sqr()).sum(),
                2 => {
                    let g = es.adjoint(&es.forward(x)?)?;
                    g.iter().map(|q| q.norm_sqr()).sum()
                }
                _ => {
                    let (z, _) = psd_inverse_apply(&ex, lambda, &treg, x, None, &cg)?;
                    z.iter().map(|q| q.norm_sqr()).sum()
                }
            };
            Ok(val)
        };

        let (g_exact, g_fast) = if which == 3 {
            (grad_of(&exact)?, grad_of(&fast)?)
        } else {
            (grad_of(&esense)?, grad_of(&fsense)?)
        };
        let fd = ndft::fd_gradient(|t| loss_of(t).map_err(Into::into), &short, 1e-5)?;

        v.check(&format!("{case}_fd"), "ndft", rel_err(&g_exact, &fd), 1e-4)?;
        v.check(&format!("{case}_fd"), "nufft-high", rel_err(&g_fast, &fd), 1e-3)?;
        v.check(
            &format!("{case}_vs_ndft"),
            "nufft-high",
            rel_err(&g_fast, &g_exact),
            1e-3,
        )?;

        profiles.push((format!("{case}_ndft"), g_exact));
        profiles.push((format!("{case}_nufft"), g_fast));
        profiles.push((format!("{case}_fd"), fd));
    }

    if let Some(path) = csv {
        let mut f = std::fs::File::create(path)?;
        write!(f, "index")?;
        for (name, _) in &profiles {
            write!(f, ",{name}")?;
        }
        writeln!(f)?;
        let rows = profiles[0].1.len();
        for i in 0..rows {
            write!(f, "{i}")?;
            for (_, col) in &profiles {
                write!(f, ",{}", col[i])?;
            }
            writeln!(f)?;
        }
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct BenchRecord {
    schema: &'static str,
    op: String,
    size: String,
    m: usize,
    n: usize,
    coils: usize,
    cg_iters: usize,
    wall_ms: f64,
    peak_aux_bytes: usize,
}

fn cmd_bench(a: BenchArgs) -> Result<ExitCode, Error> {
    let side = match a.size.as_str() {
        "small" => 40usize,
        "large" => 400,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown size {other:?}; expected small|large"
            )))
        }
    };
    let (grid, x, maps, traj) = validation_scene(side, a.seed, 8, 2 * side)?;
    let plan = NufftPlan::with_preset(&grid, &traj, Preset::High, Precision::Double)?;
    let fast = NufftOp::new(plan);
    let op = SenseOp::new(&fast, &maps)?;
    let cot: Vec<Complex64> = x.iter().map(|&q| q * 2.0).collect();
    let cg = CgConfig {
        tol: 1e-9,
        max_iters: a.cg_iters,
        strict: false,
    };

    // Warm-up so the measurement sees steady-state allocation churn.
    match a.op.as_str() {
        "gram" => {
            gram_vjp_omega(&op, &x, &cot)?;
        }
        "inverse" => {
            psd_inverse_vjp_omega(&op, 1e-3, &Regularizer::Identity, &x, &cot, &cg)?;
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown op {other:?}; expected gram|inverse"
            )))
        }
    }

    let live0 = meter::live_bytes();
    meter::reset_peak();
    let start = Instant::now();
    match a.op.as_str() {
        "gram" => {
            gram_vjp_omega(&op, &x, &cot)?;
        }
        _ => {
            psd_inverse_vjp_omega(&op, 1e-3, &Regularizer::Identity, &x, &cot, &cg)?;
        }
    }
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let peak_aux_bytes = meter::peak_over(live0);

    let mut sink = Sink::new(a.out.as_deref())?;
    sink.emit(&BenchRecord {
        schema: "bench-v1",
        op: a.op,
        size: a.size,
        m: op.m(),
        n: op.n(),
        coils: op.n_coils(),
        cg_iters: a.cg_iters,
        wall_ms,
        peak_aux_bytes,
    })?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_optimize(a: OptimizeArgs) -> Result<ExitCode, Error> {
    let cfg = OptimizeFile::parse(&std::fs::read_to_string(&a.config)?)?;
    let (_, dataset) = phantom::load_dataset(&cfg.dataset)?;
    let grid = dataset[0].grid.clone();
    let maps = cfg
        .maps
        .as_deref()
        .map(|p| load_maps(p, grid.len()))
        .transpose()?;

    let init = radial_init(cfg.n_shots, cfg.samples_per_shot, cfg.dwell_ms)?;
    let params = SplineParam::fit(&init, cfg.n_kernels)?;
    let outcome = train(&dataset, maps.as_ref(), &params, &cfg.traj, Some(&a.out))?;

    let sm = smoothed_loss(&outcome.history, 50);
    eprintln!(
        "{} steps; smoothed loss {:.6} -> {:.6}",
        outcome.history.len(),
        sm.first().copied().unwrap_or(f64::NAN),
        sm.last().copied().unwrap_or(f64::NAN),
    );
    Ok(ExitCode::SUCCESS)
}

/// Parsed `key = value` optimization configuration.
struct OptimizeFile {
    dataset: PathBuf,
    maps: Option<PathBuf>,
    n_shots: usize,
    samples_per_shot: usize,
    n_kernels: usize,
    dwell_ms: f64,
    traj: TrajOptConfig,
}

impl OptimizeFile {
    fn parse(text: &str) -> Result<Self, Error> {
        use std::collections::HashMap;
        let mut kv = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, val) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!("config line {}: expected key = value", lineno + 1))
            })?;
            kv.insert(k.trim().to_string(), val.trim().to_string());
        }
        let mut take = |key: &str| kv.remove(key);
        let required = |opt: Option<String>, key: &str| {
            opt.ok_or_else(|| Error::Format(format!("config is missing {key:?}")))
        };
        let parse_f = |s: String, key: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Format(format!("config {key:?}: bad number {s:?}")))
        };
        let parse_u = |s: String, key: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("config {key:?}: bad integer {s:?}")))
        };

        let dataset = PathBuf::from(required(take("dataset"), "dataset")?);
        let maps = take("maps").map(PathBuf::from);
        let dims_raw = required(take("dims"), "dims")?;
        let dims: Vec<usize> = dims_raw
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Format(format!("config dims: bad entry {p:?}")))
            })
            .collect::<Result<_, _>>()?;

        let method: ReconMethod = required(take("method"), "method")?.parse()?;
        let mut recon = match method {
            ReconMethod::CgSense => ReconConfig::cg_sense(),
            ReconMethod::Qpls => ReconConfig::qpls(),
            ReconMethod::Cs => ReconConfig::cs(),
        };
        if let Some(s) = take("lambda") {
            recon.lambda = parse_f(s, "lambda")?;
        }
        if let Some(s) = take("iters") {
            recon.iters = parse_u(s, "iters")?;
        }

        let mut traj = TrajOptConfig::new(&dims, recon);
        if let Some(s) = take("mu1") {
            traj.mu1 = parse_f(s, "mu1")?;
        }
        if let Some(s) = take("mu2") {
            traj.mu2 = parse_f(s, "mu2")?;
        }
        if let Some(s) = take("gmax") {
            traj.gmax = parse_f(s, "gmax")?;
        }
        if let Some(s) = take("smax") {
            traj.smax = parse_f(s, "smax")?;
        }
        if let Some(s) = take("gamma") {
            traj.gamma_khz_per_g = parse_f(s, "gamma")?;
        }
        if let Some(s) = take("fov") {
            traj.fov_cm = parse_f(s, "fov")?;
        }
        if let Some(s) = take("lr") {
            traj.lr = parse_f(s, "lr")?;
        }
        if let Some(s) = take("batch") {
            traj.batch = parse_u(s, "batch")?;
        }
        if let Some(s) = take("epochs") {
            traj.epochs = parse_u(s, "epochs")?;
        }
        if let Some(s) = take("max_steps") {
            traj.max_steps = Some(parse_u(s, "max_steps")?);
        }
        if let Some(s) = take("seed") {
            traj.seed = s
                .parse::<u64>()
                .map_err(|_| Error::Format(format!("config seed: bad integer {s:?}")))?;
        }
        if let Some(s) = take("preset") {
            traj.backend = TrainBackend::Nufft(s.parse()?);
        }

        let n_shots = parse_u(required(take("n_shots"), "n_shots")?, "n_shots")?;
        let samples_per_shot = parse_u(
            required(take("samples_per_shot"), "samples_per_shot")?,
            "samples_per_shot",
        )?;
        let n_kernels = parse_u(required(take("n_kernels"), "n_kernels")?, "n_kernels")?;
        let dwell_ms = parse_f(required(take("dwell_ms"), "dwell_ms")?, "dwell_ms")?;

        if let Some(stray) = kv.keys().next() {
            return Err(Error::Format(format!("config has unknown key {stray:?}")));
        }
        Ok(Self {
            dataset,
            maps,
            n_shots,
            samples_per_shot,
            n_kernels,
            dwell_ms,
            traj,
        })
    }
}
