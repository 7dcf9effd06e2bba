//! Multi-dimensional FFT on flat row-major buffers (dimension 0 fastest),
//! built from 1-D rustfft plans applied axis by axis.
//!
//! Both directions are unnormalized: `inverse(forward(x)) = len * x`.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftNum, FftPlanner};

pub struct NdFft<T: FftNum> {
    dims: Vec<usize>,
    fwd: Vec<Arc<dyn Fft<T>>>,
    inv: Vec<Arc<dyn Fft<T>>>,
}

impl<T: FftNum + Default> NdFft<T> {
    pub fn new(dims: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = dims.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inv = dims.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        Self {
            dims: dims.to_vec(),
            fwd,
            inv,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// In-place unnormalized forward transform, `exp(-i 2 pi k j / n)`.
    pub fn forward(&self, data: &mut [Complex<T>]) {
        self.transform(data, &self.fwd);
    }

    /// In-place unnormalized inverse transform, `exp(+i 2 pi k j / n)`.
    pub fn inverse(&self, data: &mut [Complex<T>]) {
        self.transform(data, &self.inv);
    }

    fn transform(&self, data: &mut [Complex<T>], plans: &[Arc<dyn Fft<T>>]) {
        let total = self.len();
        assert_eq!(data.len(), total, "buffer does not match planned dims");
        for (d, plan) in plans.iter().enumerate() {
            let n = self.dims[d];
            if n == 1 {
                continue;
            }
            let stride: usize = self.dims[..d].iter().product();
            let mut scratch = vec![Complex::default(); plan.get_inplace_scratch_len()];
            if stride == 1 {
                for chunk in data.chunks_exact_mut(n) {
                    plan.process_with_scratch(chunk, &mut scratch);
                }
            } else {
                let block = n * stride;
                let mut line = vec![Complex::default(); n];
                for base in (0..total).step_by(block) {
                    for inner in 0..stride {
                        let start = base + inner;
                        for (k, v) in line.iter_mut().enumerate() {
                            *v = data[start + k * stride];
                        }
                        plan.process_with_scratch(&mut line, &mut scratch);
                        for (k, v) in line.iter().enumerate() {
                            data[start + k * stride] = *v;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn direct_dft(dims: &[usize], x: &[Complex64], sign: f64) -> Vec<Complex64> {
        let total: usize = dims.iter().product();
        let unravel = |mut idx: usize| -> Vec<usize> {
            dims.iter()
                .map(|&n| {
                    let r = idx % n;
                    idx /= n;
                    r
                })
                .collect()
        };
        (0..total)
            .map(|k| {
                let ks = unravel(k);
                let mut acc = Complex64::default();
                for (j, &xj) in x.iter().enumerate() {
                    let js = unravel(j);
                    let phase: f64 = ks
                        .iter()
                        .zip(&js)
                        .zip(dims)
                        .map(|((&kk, &jj), &n)| {
                            sign * 2.0 * std::f64::consts::PI * (kk * jj) as f64 / n as f64
                        })
                        .sum();
                    acc += Complex64::from_polar(1.0, phase) * xj;
                }
                acc
            })
            .collect()
    }

    #[test]
    fn matches_direct_dft_2d_and_3d() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for dims in [vec![4, 6], vec![3, 2, 5]] {
            let total: usize = dims.iter().product();
            let x: Vec<Complex64> = (0..total)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let fft = NdFft::<f64>::new(&dims);
            let mut got = x.clone();
            fft.forward(&mut got);
            let expect = direct_dft(&dims, &x, -1.0);
            for (a, b) in got.iter().zip(&expect) {
                assert!((a - b).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn inverse_is_unnormalized_adjoint() {
        let dims = [4, 4];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<Complex64> = (0..16)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let fft = NdFft::<f64>::new(&dims);
        let mut buf = x.clone();
        fft.forward(&mut buf);
        fft.inverse(&mut buf);
        for (a, b) in buf.iter().zip(&x) {
            assert!((a / 16.0 - b).norm() < 1e-12);
        }
    }
}
