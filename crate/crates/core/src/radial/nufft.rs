//! Kaiser-Bessel NUFFT on a 2× oversampled grid.
//!
//! Forward: `y(k) = Δx Δy Σ_p x_p exp(-i2π k·r_p)` over pixel centres `r_p`.
//! The adjoint applies the conjugate-transposed chain of the same steps, so the
//! pair is exactly adjoint up to floating-point rounding.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub const OVERSAMPLING: usize = 2;
pub const KERNEL_WIDTH: usize = 4;

/// Beatty et al. shape parameter for a given kernel width and oversampling ratio.
pub fn beatty_beta(width: f64, oversampling: f64) -> f64 {
    PI * ((width / oversampling).powi(2) * (oversampling - 0.5).powi(2) - 0.8).sqrt()
}

/// Modified Bessel function of the first kind, order zero (power series).
pub fn bessel_i0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > 1e-17 * sum {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

#[derive(Debug, Clone, Copy)]
pub struct KaiserBessel {
    pub width: f64,
    pub beta: f64,
}

impl KaiserBessel {
    pub fn standard() -> Self {
        let width = KERNEL_WIDTH as f64;
        Self { width, beta: beatty_beta(width, OVERSAMPLING as f64) }
    }

    /// Kernel value at offset `d` grid cells.
    pub fn eval(&self, d: f64) -> f64 {
        let r = 2.0 * d / self.width;
        if r.abs() > 1.0 {
            0.0
        } else {
            bessel_i0(self.beta * (1.0 - r * r).sqrt())
        }
    }

    /// Continuous Fourier transform of the kernel at `nu` cycles per grid cell.
    pub fn transform(&self, nu: f64) -> f64 {
        let z2 = self.beta * self.beta - (PI * self.width * nu).powi(2);
        if z2 > 1e-12 {
            let z = z2.sqrt();
            self.width * z.sinh() / z
        } else if z2 < -1e-12 {
            let z = (-z2).sqrt();
            self.width * z.sin() / z
        } else {
            self.width
        }
    }
}

struct Axis1 {
    n: usize,
    grid: usize,
    spacing: f64,
    deapod: Vec<f64>,
}

impl Axis1 {
    fn new(n: usize, fov: f64, kernel: &KaiserBessel) -> Self {
        let grid = OVERSAMPLING * n;
        let deapod = (0..n)
            .map(|i| {
                let m = i as f64 - (n / 2) as f64;
                kernel.transform(m / grid as f64)
            })
            .collect();
        Self { n, grid, spacing: fov / n as f64, deapod }
    }

    /// Oversampled-grid coordinate of frequency `k` (cycles per unit length).
    fn grid_coord(&self, k: f64) -> f64 {
        k * self.spacing * self.grid as f64
    }

    /// Grid index of image index `i` (image index `n/2` sits at grid index 0).
    fn grid_index(&self, i: usize) -> usize {
        (i + self.grid - self.n / 2) % self.grid
    }

    /// The four interpolation taps for grid coordinate `u`.
    fn taps(&self, u: f64, kernel: &KaiserBessel) -> [(usize, f64); KERNEL_WIDTH] {
        let base = u.floor() as i64 - (KERNEL_WIDTH as i64 / 2 - 1);
        let g = self.grid as i64;
        std::array::from_fn(|j| {
            let m = base + j as i64;
            (m.rem_euclid(g) as usize, kernel.eval(u - m as f64))
        })
    }
}

/// Reusable NUFFT plan for one image geometry.
pub struct NufftPlan {
    x: Axis1,
    y: Axis1,
    kernel: KaiserBessel,
    fft_x: (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>),
    fft_y: (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>),
}

impl NufftPlan {
    pub fn new(nx: usize, ny: usize, fov: f64) -> Self {
        let kernel = KaiserBessel::standard();
        let x = Axis1::new(nx, fov, &kernel);
        let y = Axis1::new(ny, fov, &kernel);
        let mut planner = FftPlanner::new();
        let fft_x = (planner.plan_fft_forward(x.grid), planner.plan_fft_inverse(x.grid));
        let fft_y = (planner.plan_fft_forward(y.grid), planner.plan_fft_inverse(y.grid));
        Self { x, y, kernel, fft_x, fft_y }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.x.n, self.y.n)
    }

    fn pixel_area(&self) -> f64 {
        self.x.spacing * self.y.spacing
    }

    /// Phase correcting the half-pixel offset between the symmetric pixel grid
    /// and the integer FFT grid.
    fn half_pixel_phase(&self, k: [f64; 2]) -> Complex64 {
        Complex64::from_polar(1.0, -PI * (k[0] * self.x.spacing + k[1] * self.y.spacing))
    }

    fn fft2(&self, grid: &mut Array2<Complex64>, inverse: bool) {
        let (gx, gy) = grid.dim();
        let fy = if inverse { &self.fft_y.1 } else { &self.fft_y.0 };
        let fx = if inverse { &self.fft_x.1 } else { &self.fft_x.0 };
        // rows are contiguous along y
        fy.process(grid.as_slice_mut().expect("standard layout"));
        let mut column = vec![Complex64::new(0.0, 0.0); gx];
        for iy in 0..gy {
            for ix in 0..gx {
                column[ix] = grid[[ix, iy]];
            }
            fx.process(&mut column);
            for ix in 0..gx {
                grid[[ix, iy]] = column[ix];
            }
        }
    }

    /// Evaluates the discrete-space Fourier transform of `image` at `points`.
    pub fn forward(&self, image: ArrayView2<Complex64>, points: &[[f64; 2]]) -> Vec<Complex64> {
        assert_eq!(image.dim(), (self.x.n, self.y.n), "image shape does not match plan");
        let mut grid = Array2::<Complex64>::zeros((self.x.grid, self.y.grid));
        for ((ix, iy), &v) in image.indexed_iter() {
            let g = [self.x.grid_index(ix), self.y.grid_index(iy)];
            grid[g] = v / (self.x.deapod[ix] * self.y.deapod[iy]);
        }
        self.fft2(&mut grid, false);
        let scale = self.pixel_area();
        points
            .iter()
            .map(|&k| {
                let tx = self.x.taps(self.x.grid_coord(k[0]), &self.kernel);
                let ty = self.y.taps(self.y.grid_coord(k[1]), &self.kernel);
                let mut acc = Complex64::new(0.0, 0.0);
                for &(gx, wx) in &tx {
                    for &(gy, wy) in &ty {
                        acc += grid[[gx, gy]] * (wx * wy);
                    }
                }
                acc * self.half_pixel_phase(k) * scale
            })
            .collect()
    }

    /// Exact adjoint of [`NufftPlan::forward`].
    pub fn adjoint(&self, values: &[Complex64], points: &[[f64; 2]]) -> Array2<Complex64> {
        assert_eq!(values.len(), points.len());
        let mut grid = Array2::<Complex64>::zeros((self.x.grid, self.y.grid));
        for (&k, &v) in points.iter().zip(values) {
            let v = v * self.half_pixel_phase(k).conj();
            let tx = self.x.taps(self.x.grid_coord(k[0]), &self.kernel);
            let ty = self.y.taps(self.y.grid_coord(k[1]), &self.kernel);
            for &(gx, wx) in &tx {
                for &(gy, wy) in &ty {
                    grid[[gx, gy]] += v * (wx * wy);
                }
            }
        }
        self.fft2(&mut grid, true);
        let scale = self.pixel_area();
        Array2::from_shape_fn((self.x.n, self.y.n), |(ix, iy)| {
            let g = [self.x.grid_index(ix), self.y.grid_index(iy)];
            grid[g] * (scale / (self.x.deapod[ix] * self.y.deapod[iy]))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::pixel_coordinate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn beatty_beta_for_width_four() {
        // π·sqrt(4·2.25 − 0.8) = π·sqrt(8.2)
        assert!((beatty_beta(4.0, 2.0) - PI * 8.2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn i0_matches_reference_values() {
        // reference values from Abramowitz & Stegun table 9.8
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-14);
        assert!((bessel_i0(5.0) - 27.239_871_823_604_45).abs() < 1e-11);
    }

    #[test]
    fn kernel_transform_matches_numerical_integral() {
        let kb = KaiserBessel::standard();
        for nu in [0.0, 0.1, 0.25, 0.4] {
            let n = 20_000;
            let h = kb.width / n as f64;
            let integral: f64 = (0..n)
                .map(|i| {
                    let d = -kb.width / 2.0 + (i as f64 + 0.5) * h;
                    kb.eval(d) * (2.0 * PI * nu * d).cos() * h
                })
                .sum();
            assert!((integral - kb.transform(nu)).abs() / kb.transform(nu) < 1e-6);
        }
    }

    #[test]
    fn matches_direct_dft() {
        let (nx, ny, fov) = (16, 12, 1.0);
        let plan = NufftPlan::new(nx, ny, fov);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let image = Array2::from_shape_fn((nx, ny), |_| Complex64::new(rng.random(), rng.random()));
        let points: Vec<[f64; 2]> = (0..50)
            .map(|_| [rng.random_range(-8.0..8.0), rng.random_range(-6.0..6.0)])
            .collect();
        let fast = plan.forward(image.view(), &points);
        let area = (fov / nx as f64) * (fov / ny as f64);
        let mut num = 0.0;
        let mut den = 0.0;
        for (k, f) in points.iter().zip(&fast) {
            let mut exact = Complex64::new(0.0, 0.0);
            for ((ix, iy), &v) in image.indexed_iter() {
                let r = [pixel_coordinate(ix, nx, fov), pixel_coordinate(iy, ny, fov)];
                exact += v * Complex64::from_polar(area, -2.0 * PI * (k[0] * r[0] + k[1] * r[1]));
            }
            num += (f - exact).norm_sqr();
            den += exact.norm_sqr();
        }
        assert!((num / den).sqrt() < 2e-3, "relative error {}", (num / den).sqrt());
    }
}
