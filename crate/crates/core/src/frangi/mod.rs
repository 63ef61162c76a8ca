//! Multiscale Frangi vesselness for bright tubular structures.
//!
//! At every scale the Hessian is estimated with separable Gaussian
//! derivative filters, scale-normalized by `sigma^gamma`, and its
//! eigenvalues `|l1| <= |l2| <= |l3|` are combined into
//!
//! ```text
//! V = (1 - exp(-Ra²/2α²)) · exp(-Rb²/2β²) · (1 - exp(-S²/2c²))
//! Ra = |l2|/|l3|,  Rb = |l1|/sqrt(|l2 l3|),  S = sqrt(l1² + l2² + l3²)
//! ```
//!
//! with `V = 0` whenever `l2 > 0` or `l3 > 0`. The response is the maximum
//! of `V` over all scales.

mod eigen;
mod kernels;

pub use eigen::{eig_symmetric3, Sym3};
pub use kernels::{filter_axis, gaussian_kernel, radius_for, Kernel1d};

use rayon::prelude::*;

use crate::error::{arg_err, Result};
use crate::volume::Volume3;

/// Weight of the structureness term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StructureWeight {
    /// Half the largest `S` over the volume, resolved per scale.
    Auto,
    Fixed(f64),
}

impl std::str::FromStr for StructureWeight {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(StructureWeight::Auto);
        }
        match s.parse::<f64>() {
            Ok(c) if c >= 0.0 && c.is_finite() => Ok(StructureWeight::Fixed(c)),
            _ => arg_err(format!("structureness weight must be `auto` or a number >= 0, got `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrangiParams {
    pub alpha: f64,
    pub beta: f64,
    pub c: StructureWeight,
    /// Scales in voxels.
    pub sigmas: Vec<f64>,
    /// Scale-normalization exponent.
    pub gamma: f64,
}

impl Default for FrangiParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.5,
            c: StructureWeight::Auto,
            sigmas: vec![1.0, 1.5, 2.0, 3.0],
            gamma: 2.0,
        }
    }
}

impl FrangiParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return arg_err(format!("alpha and beta must be > 0, got {} and {}", self.alpha, self.beta));
        }
        if self.sigmas.is_empty() {
            return arg_err("at least one scale is required");
        }
        if let Some(s) = self.sigmas.iter().find(|&&s| !(s > 0.0 && s.is_finite())) {
            return arg_err(format!("scales must be positive, got {s}"));
        }
        if let StructureWeight::Fixed(c) = self.c {
            if !(c >= 0.0 && c.is_finite()) {
                return arg_err(format!("structureness weight must be >= 0, got {c}"));
            }
        }
        if !self.gamma.is_finite() {
            return arg_err("gamma must be finite");
        }
        Ok(())
    }
}

/// The six distinct entries of the Hessian at every voxel.
#[derive(Clone, Debug)]
pub struct HessianField {
    pub hxx: Volume3,
    pub hyy: Volume3,
    pub hzz: Volume3,
    pub hxy: Volume3,
    pub hxz: Volume3,
    pub hyz: Volume3,
}

impl HessianField {
    pub fn at(&self, i: usize) -> Sym3 {
        Sym3 {
            xx: self.hxx.data()[i] as f64,
            yy: self.hyy.data()[i] as f64,
            zz: self.hzz.data()[i] as f64,
            xy: self.hxy.data()[i] as f64,
            xz: self.hxz.data()[i] as f64,
            yz: self.hyz.data()[i] as f64,
        }
    }
}

/// Hessian components in f64, ordered xx, yy, zz, xy, xz, yz.
fn hessian_components(vol: &Volume3, sigma: f64, gamma: f64) -> Result<[Vec<f64>; 6]> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return arg_err(format!("sigma must be > 0, got {sigma}"));
    }
    let dims = vol.dims();
    // Derivatives ignore a constant offset; removing one makes flat input exactly zero.
    let reference = vol.data()[0] as f64;
    let src: Vec<f64> = vol.data().iter().map(|&v| v as f64 - reference).collect();
    let k = [gaussian_kernel(sigma, 0), gaussian_kernel(sigma, 1), gaussian_kernel(sigma, 2)];

    let x: Vec<Vec<f64>> = k.iter().map(|k| filter_axis(&src, dims, 0, k)).collect();
    let pass = |src: &[f64], axis: usize, order: usize| filter_axis(src, dims, axis, &k[order]);
    let y0x0 = pass(&x[0], 1, 0);
    let y1x0 = pass(&x[0], 1, 1);
    let y2x0 = pass(&x[0], 1, 2);
    let y0x1 = pass(&x[1], 1, 0);
    let y1x1 = pass(&x[1], 1, 1);
    let y0x2 = pass(&x[2], 1, 0);

    let norm = sigma.powf(gamma);
    let finish = |src: &[f64], order: usize| -> Vec<f64> {
        let mut out = pass(src, 2, order);
        out.iter_mut().for_each(|v| *v *= norm);
        out
    };
    Ok([
        finish(&y0x2, 0),
        finish(&y2x0, 0),
        finish(&y0x0, 2),
        finish(&y1x1, 0),
        finish(&y0x1, 1),
        finish(&y1x0, 1),
    ])
}

/// Scale-normalized Gaussian Hessian with clamp-to-edge borders.
pub fn hessian_at_scale(vol: &Volume3, sigma: f64, gamma: f64) -> Result<HessianField> {
    let [xx, yy, zz, xy, xz, yz] = hessian_components(vol, sigma, gamma)?;
    let to_vol = |c: Vec<f64>| vol.same_geometry(c.into_iter().map(|v| v as f32).collect());
    Ok(HessianField {
        hxx: to_vol(xx),
        hyy: to_vol(yy),
        hzz: to_vol(zz),
        hxy: to_vol(xy),
        hxz: to_vol(xz),
        hyz: to_vol(yz),
    })
}

/// Vesselness of one voxel from magnitude-ordered eigenvalues and a resolved `c`.
pub fn vesselness_voxel(l: [f64; 3], alpha: f64, beta: f64, c: f64) -> f64 {
    let [l1, l2, l3] = l;
    if l2 > 0.0 || l3 > 0.0 {
        return 0.0;
    }
    let s2 = l1 * l1 + l2 * l2 + l3 * l3;
    if s2 == 0.0 || c == 0.0 {
        return 0.0;
    }
    let ra = if l3 == 0.0 { 0.0 } else { l2.abs() / l3.abs() };
    let prod = (l2 * l3).abs();
    let rb = if prod == 0.0 { 0.0 } else { l1.abs() / prod.sqrt() };
    let plate = 1.0 - (-ra * ra / (2.0 * alpha * alpha)).exp();
    let blob = (-rb * rb / (2.0 * beta * beta)).exp();
    let structure = 1.0 - (-s2 / (2.0 * c * c)).exp();
    (plate * blob * structure).clamp(0.0, 1.0)
}

/// Per-voxel maximum vesselness over all scales, in `[0, 1]`.
pub fn frangi_filter(vol: &Volume3, p: &FrangiParams) -> Result<Volume3> {
    p.validate()?;
    let mut best = vec![0.0f64; vol.len()];
    for &sigma in &p.sigmas {
        let h = hessian_components(vol, sigma, p.gamma)?;
        let eig: Vec<[f64; 3]> = (0..vol.len())
            .into_par_iter()
            .map(|i| {
                let m = Sym3 {
                    xx: h[0][i],
                    yy: h[1][i],
                    zz: h[2][i],
                    xy: h[3][i],
                    xz: h[4][i],
                    yz: h[5][i],
                };
                let mut l = eigen::eigenvalues_unordered(&m);
                l.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
                l
            })
            .collect();
        let c = match p.c {
            StructureWeight::Fixed(c) => c,
            StructureWeight::Auto => {
                let max_s2 = eig
                    .iter()
                    .map(|l| l[0] * l[0] + l[1] * l[1] + l[2] * l[2])
                    .fold(0.0, f64::max);
                0.5 * max_s2.sqrt()
            }
        };
        best.par_iter_mut().zip(eig.par_iter()).for_each(|(b, l)| {
            let v = vesselness_voxel(*l, p.alpha, p.beta, c);
            if v > *b {
                *b = v;
            }
        });
    }
    Ok(vol.same_geometry(best.into_iter().map(|v| v as f32).collect()))
}
