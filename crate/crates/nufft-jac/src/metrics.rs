//! Image-quality and vector-difference metrics.
//!
//! All metrics accept complex inputs; PSNR and SSIM operate on magnitudes.

use num_complex::Complex64;

use crate::grid::ComplexImage;
use crate::{Error, Result};

/// PSNR value reported when the error is exactly zero.
pub const PSNR_CAP_DB: f64 = 300.0;

/// Normalized root-mean-square difference `||a - b|| / ||b||`.
///
/// `b` is the reference and must not be all zero.
pub fn nrmsd(a: &[Complex64], b: &[Complex64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "nrmsd length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let denom: f64 = b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if denom == 0.0 {
        return Err(Error::InvalidArgument("nrmsd reference is all zero".into()));
    }
    let num: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt();
    Ok(num / denom)
}

/// Peak signal-to-noise ratio in dB between the magnitudes of `x` and
/// `reference`, with the peak taken from the reference. Returns
/// [`PSNR_CAP_DB`] when the two magnitude images agree exactly.
pub fn psnr(x: &ComplexImage, reference: &ComplexImage) -> Result<f64> {
    if x.grid != reference.grid {
        return Err(Error::ShapeMismatch("psnr grid mismatch".into()));
    }
    let peak = reference
        .data
        .iter()
        .map(|v| v.norm())
        .fold(0.0f64, f64::max);
    if peak == 0.0 {
        return Err(Error::InvalidArgument("psnr reference is all zero".into()));
    }
    let mse: f64 = x
        .data
        .iter()
        .zip(&reference.data)
        .map(|(a, b)| {
            let d = a.norm() - b.norm();
            d * d
        })
        .sum::<f64>()
        / x.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((20.0 * (peak / mse.sqrt()).log10()).min(PSNR_CAP_DB))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Mean structural similarity between the magnitudes of two 2-D images.
///
/// Local statistics use an 11x11 Gaussian window (sigma 1.5) clipped at the
/// image border with renormalized weights; the dynamic range is the peak
/// reference magnitude.
pub fn ssim(x: &ComplexImage, reference: &ComplexImage) -> Result<f64> {
    if x.grid != reference.grid {
        return Err(Error::ShapeMismatch("ssim grid mismatch".into()));
    }
    if x.grid.ndim() != 2 {
        return Err(Error::InvalidArgument("ssim is defined for 2-D grids only".into()));
    }
    let (w, h) = (x.grid.dims()[0], x.grid.dims()[1]);
    let a: Vec<f64> = x.data.iter().map(|v| v.norm()).collect();
    let b: Vec<f64> = reference.data.iter().map(|v| v.norm()).collect();

    let peak = b.iter().cloned().fold(0.0f64, f64::max);
    if peak == 0.0 {
        return Err(Error::InvalidArgument("ssim reference is all zero".into()));
    }
    let c1 = (SSIM_K1 * peak) * (SSIM_K1 * peak);
    let c2 = (SSIM_K2 * peak) * (SSIM_K2 * peak);

    // Separable Gaussian sums; border windows are renormalized by the
    // clipped weight mass, which also separates per axis.
    let mu_a = gauss_filter(&a, w, h);
    let mu_b = gauss_filter(&b, w, h);
    let aa = gauss_filter(&mul(&a, &a), w, h);
    let bb = gauss_filter(&mul(&b, &b), w, h);
    let ab = gauss_filter(&mul(&a, &b), w, h);

    let mut acc = 0.0;
    for i in 0..w * h {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(acc / (w * h) as f64)
}

fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

fn gauss_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as isize;
    for (k, tap) in taps.iter_mut().enumerate() {
        let d = k as isize - half;
        *tap = (-(d * d) as f64 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    taps
}

/// Weighted local mean with border-clipped, renormalized Gaussian windows.
fn gauss_filter(img: &[f64], w: usize, h: usize) -> Vec<f64> {
    let taps = gauss_taps();
    let half = (SSIM_WINDOW / 2) as isize;
    // Pass along x, tracking the clipped weight mass per position.
    let mut sum_x = vec![0.0; w * h];
    let mut mass_x = vec![0.0; w];
    for i in 0..w as isize {
        let mut m = 0.0;
        for (k, &t) in taps.iter().enumerate() {
            let xi = i + k as isize - half;
            if xi >= 0 && xi < w as isize {
                m += t;
            }
        }
        mass_x[i as usize] = m;
    }
    for j in 0..h {
        for i in 0..w as isize {
            let mut s = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                let xi = i + k as isize - half;
                if xi >= 0 && xi < w as isize {
                    s += t * img[j * w + xi as usize];
                }
            }
            sum_x[j * w + i as usize] = s;
        }
    }
    // Pass along y, then normalize by the separable clipped mass.
    let mut out = vec![0.0; w * h];
    for j in 0..h as isize {
        let mut m = 0.0;
        for (k, &t) in taps.iter().enumerate() {
            let yj = j + k as isize - half;
            if yj >= 0 && yj < h as isize {
                m += t;
            }
        }
        for i in 0..w {
            let mut s = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                let yj = j + k as isize - half;
                if yj >= 0 && yj < h as isize {
                    s += t * sum_x[yj as usize * w + i];
                }
            }
            out[j as usize * w + i] = s / (m * mass_x[i]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ImageGrid;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn image(dims: &[usize], data: Vec<Complex64>) -> ComplexImage {
        ComplexImage::new(ImageGrid::new(dims).unwrap(), data).unwrap()
    }

    #[test]
    fn nrmsd_identity_and_scaling() {
        let b = vec![c(1.0, 0.0), c(0.0, 2.0)];
        assert_eq!(nrmsd(&b, &b).unwrap(), 0.0);
        let a = vec![c(2.0, 0.0)];
        assert_eq!(nrmsd(&a, &[c(1.0, 0.0)]).unwrap(), 1.0);
    }

    #[test]
    fn nrmsd_orthogonal_pair() {
        // a=[1,0], b=[0,1]: ||a-b|| = sqrt(2), ||b|| = 1.
        let a = vec![c(1.0, 0.0), c(0.0, 0.0)];
        let b = vec![c(0.0, 0.0), c(1.0, 0.0)];
        assert!((nrmsd(&a, &b).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn nrmsd_scale_invariance() {
        let a = vec![c(1.0, 2.0), c(-0.5, 0.3)];
        let b = vec![c(0.2, -1.0), c(2.0, 0.0)];
        let base = nrmsd(&a, &b).unwrap();
        for &s in &[2.0, -3.5, 0.1] {
            let sa: Vec<_> = a.iter().map(|v| v * s).collect();
            let sb: Vec<_> = b.iter().map(|v| v * s).collect();
            assert!((nrmsd(&sa, &sb).unwrap() - base).abs() < 1e-12);
        }
    }

    #[test]
    fn nrmsd_errors() {
        assert!(nrmsd(&[c(1.0, 0.0)], &[c(1.0, 0.0), c(0.0, 0.0)]).is_err());
        assert!(nrmsd(&[c(1.0, 0.0)], &[c(0.0, 0.0)]).is_err());
    }

    #[test]
    fn psnr_cap_and_hand_value() {
        let re = image(&[4], vec![c(1.0, 0.0); 4]);
        assert_eq!(psnr(&re, &re).unwrap(), PSNR_CAP_DB);

        let x = image(&[4], vec![c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
        let got = psnr(&x, &re).unwrap();
        assert!((got - 6.020599913279624).abs() < 1e-9, "got {got}");
    }

    #[test]
    fn psnr_error_halving_adds_six_db() {
        let re = image(&[4], vec![c(2.0, 0.0); 4]);
        let e = [0.4, -0.2, 0.1, 0.3];
        let x1 = image(&[4], e.iter().map(|&v| c(2.0 + v, 0.0)).collect());
        let x2 = image(&[4], e.iter().map(|&v| c(2.0 + v / 2.0, 0.0)).collect());
        let d = psnr(&x2, &re).unwrap() - psnr(&x1, &re).unwrap();
        assert!((d - 6.020599913279624).abs() < 1e-9);
    }

    #[test]
    fn psnr_global_phase_invariant() {
        let re = image(&[4], vec![c(1.0, 0.0), c(0.5, 0.0), c(0.25, 0.0), c(0.0, 0.0)]);
        let x = image(&[4], vec![c(0.9, 0.0), c(0.55, 0.0), c(0.2, 0.0), c(0.05, 0.0)]);
        let phase = Complex64::from_polar(1.0, 1.2345);
        let xr = image(&[4], x.data.iter().map(|v| v * phase).collect());
        assert!((psnr(&x, &re).unwrap() - psnr(&xr, &re).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ssim_self_is_one() {
        let n = 16;
        let data: Vec<_> = (0..n * n)
            .map(|i| c(((i * 7919) % 97) as f64 / 97.0 + 0.1, 0.0))
            .collect();
        let img = image(&[n, n], data);
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_degrades_under_noise() {
        let n = 16;
        let base: Vec<_> = (0..n * n)
            .map(|i| c(0.5 + 0.4 * ((i % 13) as f64 / 13.0), 0.0))
            .collect();
        let noisy: Vec<_> = base
            .iter()
            .enumerate()
            .map(|(i, v)| v + c(if i % 2 == 0 { 0.35 } else { -0.35 }, 0.0))
            .collect();
        let a = image(&[n, n], base);
        let b = image(&[n, n], noisy);
        assert!(ssim(&b, &a).unwrap() < 1.0 - 1e-3);
    }

    #[test]
    fn ssim_constant_pair_matches_straight_line_formula() {
        // Constant images: no variance terms, every window identical, so
        // an independent evaluation of the definition collapses to
        // (2*mu_a*mu_b + c1) / (mu_a^2 + mu_b^2 + c1) * (c2 / c2).
        let n = 16;
        let a = image(&[n, n], vec![c(1.0, 0.0); n * n]);
        let b = image(&[n, n], vec![c(0.5, 0.0); n * n]);
        let peak: f64 = 0.5;
        let c1 = (SSIM_K1 * peak) * (SSIM_K1 * peak);
        let expect = (2.0 * 1.0 * 0.5 + c1) / (1.0 * 1.0 + 0.5 * 0.5 + c1);
        let got = ssim(&a, &b).unwrap();
        assert!((got - expect).abs() < 1e-12, "got {got}, expect {expect}");
    }

    #[test]
    fn ssim_rejects_non_2d() {
        let a = image(&[8], vec![c(1.0, 0.0); 8]);
        assert!(ssim(&a, &a).is_err());
    }
}
