//! Sampled Gaussian derivative kernels and separable filtering.

use rayon::prelude::*;

use crate::volume::Dims;

/// A 1D correlation kernel with taps at offsets `-radius..=radius`.
#[derive(Clone, Debug)]
pub struct Kernel1d {
    pub radius: usize,
    pub taps: Vec<f64>,
}

impl Kernel1d {
    fn offsets(radius: usize) -> impl Iterator<Item = f64> {
        (0..=2 * radius).map(move |i| i as f64 - radius as f64)
    }

    fn moment(&self, p: i32) -> f64 {
        Self::offsets(self.radius)
            .zip(&self.taps)
            .map(|(j, t)| t * j.powi(p))
            .sum()
    }
}

/// Truncation radius `ceil(4 sigma)`.
pub fn radius_for(sigma: f64) -> usize {
    (4.0 * sigma).ceil().max(1.0) as usize
}

/// Gaussian kernel of derivative `order` (0, 1 or 2).
///
/// Applied as `out[i] = sum_j taps[j] * f[i + j]`. Order 0 sums to one;
/// order 1 returns exactly 1 on `f(x) = x`; order 2 sums to zero and
/// returns exactly 2 on `f(x) = x^2`.
pub fn gaussian_kernel(sigma: f64, order: u8) -> Kernel1d {
    let radius = radius_for(sigma);
    let s2 = sigma * sigma;
    let g: Vec<f64> = Kernel1d::offsets(radius)
        .map(|j| (-j * j / (2.0 * s2)).exp())
        .collect();
    let gsum: f64 = g.iter().sum();
    let g0: Vec<f64> = g.iter().map(|v| v / gsum).collect();
    let taps = match order {
        0 => g0,
        1 => {
            let mut k = Kernel1d {
                radius,
                taps: Kernel1d::offsets(radius).zip(&g0).map(|(j, g)| j / s2 * g).collect(),
            };
            let m1 = k.moment(1);
            k.taps.iter_mut().for_each(|t| *t /= m1);
            k.taps
        }
        2 => {
            let raw: Vec<f64> = Kernel1d::offsets(radius)
                .zip(&g0)
                .map(|(j, g)| (j * j / s2 - 1.0) / s2 * g)
                .collect();
            let total: f64 = raw.iter().sum();
            let mut k = Kernel1d {
                radius,
                taps: raw.iter().zip(&g0).map(|(r, g)| r - total * g).collect(),
            };
            let m2 = k.moment(2);
            k.taps.iter_mut().for_each(|t| *t *= 2.0 / m2);
            k.taps
        }
        _ => panic!("gaussian_kernel supports derivative orders 0..=2"),
    };
    Kernel1d { radius, taps }
}

/// Correlates `src` with `k` along `axis`, clamping indices to the edge.
pub fn filter_axis(src: &[f64], dims: Dims, axis: usize, k: &Kernel1d) -> Vec<f64> {
    let [nx, ny, _] = dims;
    let n = dims[axis];
    let stride = match axis {
        0 => 1,
        1 => nx,
        _ => nx * ny,
    };
    let r = k.radius as isize;
    let slab = nx * ny;
    let mut out = vec![0.0; src.len()];
    // One z-slab per task; a z-pass reads across slabs but writes only its own.
    out.par_chunks_mut(slab).enumerate().for_each(|(z, plane)| {
        for y in 0..ny {
            for x in 0..nx {
                let pos = [x, y, z][axis];
                let base = x + nx * (y + ny * z);
                plane[x + nx * y] = correlate_strided(src, base - pos * stride, stride, n, pos, r, &k.taps);
            }
        }
    });
    out
}

#[inline]
fn correlate_strided(src: &[f64], start: usize, stride: usize, n: usize, pos: usize, r: isize, taps: &[f64]) -> f64 {
    let last = n as isize - 1;
    let mut acc = 0.0;
    for (t, &w) in taps.iter().enumerate() {
        let j = (pos as isize + t as isize - r).clamp(0, last) as usize;
        acc += w * src[start + j * stride];
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_are_exact() {
        for &s in &[0.7, 1.0, 1.5, 2.0, 3.0] {
            let k0 = gaussian_kernel(s, 0);
            let k1 = gaussian_kernel(s, 1);
            let k2 = gaussian_kernel(s, 2);
            assert!((k0.moment(0) - 1.0).abs() < 1e-12);
            assert!(k1.moment(0).abs() < 1e-12);
            assert!((k1.moment(1) - 1.0).abs() < 1e-12);
            assert!(k2.moment(0).abs() < 1e-12);
            assert!(k2.moment(1).abs() < 1e-12);
            assert!((k2.moment(2) - 2.0).abs() < 1e-12);
            assert_eq!(k0.taps.len(), 2 * radius_for(s) + 1);
        }
    }

    #[test]
    fn derivative_of_linear_ramp_along_each_axis() {
        let dims = [12, 13, 14];
        let k1 = gaussian_kernel(1.0, 1);
        for axis in 0..3 {
            let src: Vec<f64> = (0..dims[0] * dims[1] * dims[2])
                .map(|i| {
                    let v = [i % dims[0], (i / dims[0]) % dims[1], i / (dims[0] * dims[1])];
                    3.0 * v[axis] as f64
                })
                .collect();
            let d = filter_axis(&src, dims, axis, &k1);
            let c = [6, 6, 7];
            let i = c[0] + dims[0] * (c[1] + dims[1] * c[2]);
            assert!((d[i] - 3.0).abs() < 1e-9, "axis {axis}: {}", d[i]);
        }
    }
}
