// scratch pilot for the end-to-end training protocol
use num_complex::Complex64;
use nufft_jac::grid::{ComplexImage, ImageGrid};
use nufft_jac::metrics;
use nufft_jac::mri::simulate_kspace;
use nufft_jac::nufft::{NufftPlan, Precision, Preset};
use nufft_jac::phantom;
use nufft_jac::recon::{reconstruct, ReconConfig};
use nufft_jac::system::{NufftOp, SystemOp};
use nufft_jac::trajopt::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let coils: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let method = args.get(2).cloned().unwrap_or_else(|| "cgsense".into());
    let steps: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(500);
    let spp: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(320);
    let batch: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(4);
    let jitter: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(0.05);
    let variant = if args.get(7).map(|s| s.as_str()) == Some("hc") {
        phantom::PhantomVariant::HighContrast
    } else {
        phantom::PhantomVariant::Standard
    };

    let grid = ImageGrid::new(&[64, 64]).unwrap();
    let train_set: Vec<ComplexImage> = (0..100)
        .map(|i| phantom::jittered_phantom_variant(&grid, 11, i, jitter, false, variant).unwrap())
        .collect();
    let test: Vec<ComplexImage> = (0..16)
        .map(|i| phantom::jittered_phantom_variant(&grid, 777, 1000 + i, jitter, false, variant).unwrap())
        .collect();
    let maps = (coils > 1).then(|| phantom::sim_coils(&grid, coils, 5).unwrap());

    let recon_cfg = match method.as_str() {
        "cs" => ReconConfig::cs(),
        _ => ReconConfig::cg_sense(),
    };
    let mut cfg = TrajOptConfig::new(&[64, 64], recon_cfg.clone());
    cfg.batch = batch;
    cfg.epochs = 100000;
    cfg.max_steps = Some(steps);
    cfg.seed = 3;

    let init = radial_init(8, spp, 0.004).unwrap();
    let params = SplineParam::fit(&init, 40.min(spp / 8).max(3)).unwrap();

    let t0 = std::time::Instant::now();
    let out = train(&train_set, maps.as_ref(), &params, &cfg, None).unwrap();
    let secs = t0.elapsed().as_secs_f64();

    let sm = smoothed_loss(&out.history, 50);
    let drop = 1.0 - sm.last().unwrap() / sm.first().unwrap();
    println!(
        "coils={coils} method={method} steps={steps} spp={spp} batch={batch} jitter={jitter}: loss {:.3} -> {:.3} ({:.1}% drop), {secs:.0}s",
        sm.first().unwrap(),
        sm.last().unwrap(),
        100.0 * drop
    );

    // Test-set PSNR with the HIGH preset under the same reconstruction.
    let eval = |traj: &nufft_jac::grid::Trajectory| -> f64 {
        let plan = NufftPlan::with_preset(&grid, traj, Preset::High, Precision::Double).unwrap();
        let single = NufftOp::new(plan);
        let mut acc = 0.0;
        for img in &test {
            let psnr = match &maps {
                Some(m) => {
                    let op = nufft_jac::mri::SenseOp::new(&single, m).unwrap();
                    let y = simulate_kspace(&op, &img.data, 0.0, 0).unwrap();
                    let (z, _) = reconstruct(&op, y.samples(), &recon_cfg).unwrap();
                    let zi = ComplexImage::new(grid.clone(), z).unwrap();
                    metrics::psnr(&zi, img).unwrap()
                }
                None => {
                    let y = simulate_kspace(&single, &img.data, 0.0, 0).unwrap();
                    let (z, _) = reconstruct(&single, y.samples(), &recon_cfg).unwrap();
                    let zi = ComplexImage::new(grid.clone(), z).unwrap();
                    metrics::psnr(&zi, img).unwrap()
                }
            };
            acc += psnr;
        }
        acc / test.len() as f64
    };

    let (learned, _, _) = out.params.to_trajectory().unwrap();
    let p_init = eval(&init);
    let p_learned = eval(&learned);
    println!("test PSNR: init {p_init:.3} dB, learned {p_learned:.3} dB, delta {:+.3} dB", p_learned - p_init);

    // Violation masses.
    let pen_init = hardware_penalty(&init, &cfg).unwrap();
    let pen_learned = hardware_penalty(&learned, &cfg).unwrap();
    let violating = radial_init(8, spp / 10, 0.004 * 10.0).unwrap();
    let mut vcfg = cfg.clone();
    vcfg.img_dims = vec![64, 64];
    let pen_viol = {
        let mut c = vcfg.clone();
        c.mu1 = 1.0;
        c.mu2 = 1.0;
        hardware_penalty(&violating, &c).unwrap()
    };
    println!(
        "violation mass: init {:.3e}, learned {:.3e}, scaled-violating {:.3e}",
        pen_init.gradient_mass + pen_init.slew_mass,
        pen_learned.gradient_mass + pen_learned.slew_mass,
        pen_viol.gradient_mass + pen_viol.slew_mass
    );
    let _ = Complex64::default();
}
