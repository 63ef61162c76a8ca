//! Synthetic tubular volumes with exact ground truth.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::preprocess::{morph, MorphOp, StructElem};
use crate::volume::{linear_index, Dims, Mask3, Volume3};

/// Spacing between consecutive samples when rasterizing a polyline.
const POLYLINE_STEP: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TubeSpec {
    /// Control points in voxel coordinates.
    pub points: Vec<[f64; 3]>,
    pub radius: f64,
    pub intensity: f32,
}

/// A bright ball that is not part of the ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub center: [f64; 3],
    pub radius: f64,
    pub intensity: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub tubes: Vec<TubeSpec>,
    pub background_intensity: f32,
    pub noise_sigma: f32,
    pub distractors: Vec<BlobSpec>,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 16) {
            return arg_err(format!("phantom dims must be >= 16 per axis, got {:?}", self.dims));
        }
        if !(self.noise_sigma >= 0.0) {
            return arg_err("noise sigma must be >= 0");
        }
        let inside = |p: &[f64; 3]| (0..3).all(|a| p[a] >= 0.0 && p[a] <= (self.dims[a] - 1) as f64);
        for (k, t) in self.tubes.iter().enumerate() {
            if !(t.radius > 0.0) {
                return arg_err(format!("tube {k} needs a positive radius"));
            }
            if t.points.is_empty() {
                return arg_err(format!("tube {k} has no control points"));
            }
            if let Some(p) = t.points.iter().find(|p| !inside(p)) {
                return arg_err(format!("tube {k} point {p:?} lies outside dims {:?}", self.dims));
            }
        }
        for (k, b) in self.distractors.iter().enumerate() {
            if !(b.radius > 0.0) {
                return arg_err(format!("distractor {k} needs a positive radius"));
            }
            if !inside(&b.center) {
                return arg_err(format!("distractor {k} center lies outside dims {:?}", self.dims));
            }
        }
        Ok(())
    }
}

/// Calls `f` on every voxel within `radius` of `c`.
fn for_ball(dims: Dims, c: [f64; 3], radius: f64, mut f: impl FnMut(usize)) {
    let lo: [usize; 3] = std::array::from_fn(|a| (c[a] - radius).ceil().max(0.0) as usize);
    let hi: [usize; 3] = std::array::from_fn(|a| ((c[a] + radius).floor() as usize).min(dims[a] - 1));
    let r2 = radius * radius;
    for z in lo[2]..=hi[2] {
        for y in lo[1]..=hi[1] {
            for x in lo[0]..=hi[0] {
                let d2 = (x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (z as f64 - c[2]).powi(2);
                if d2 <= r2 {
                    f(linear_index(dims, [x, y, z]));
                }
            }
        }
    }
}

/// Points along the polyline no further than [`POLYLINE_STEP`] apart.
fn densify(points: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let mut out = vec![points[0]];
    for w in points.windows(2) {
        let len = (0..3).map(|a| (w[1][a] - w[0][a]).powi(2)).sum::<f64>().sqrt();
        let n = (len / POLYLINE_STEP).ceil().max(1.0) as usize;
        for i in 1..=n {
            let t = i as f64 / n as f64;
            out.push(std::array::from_fn(|a| w[0][a] + t * (w[1][a] - w[0][a])));
        }
    }
    out
}

/// Mask of voxels within each tube's radius of its polyline.
pub fn rasterize_tubes(dims: Dims, tubes: &[TubeSpec]) -> Mask3 {
    let mut mask = Mask3::empty(dims);
    for t in tubes {
        for p in densify(&t.points) {
            for_ball(dims, p, t.radius, |i| mask.data_mut()[i] = true);
        }
    }
    mask
}

/// Renders the phantom image and its ground truth.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(Volume3, Mask3)> {
    spec.validate()?;
    let dims = spec.dims;
    let n = dims.iter().product();
    let mut image = vec![spec.background_intensity; n];
    let mut truth = Mask3::empty(dims);
    let mut tube_value = vec![f32::NEG_INFINITY; n];
    for t in &spec.tubes {
        for p in densify(&t.points) {
            for_ball(dims, p, t.radius, |i| {
                truth.data_mut()[i] = true;
                tube_value[i] = tube_value[i].max(t.intensity);
            });
        }
    }
    for (i, v) in image.iter_mut().enumerate() {
        if truth.data()[i] {
            *v = tube_value[i];
        }
    }
    for (k, b) in spec.distractors.iter().enumerate() {
        let mut hit = false;
        for_ball(dims, b.center, b.radius, |i| hit |= truth.data()[i]);
        if hit {
            return arg_err(format!("distractor {k} overlaps the ground truth"));
        }
        for_ball(dims, b.center, b.radius, |i| image[i] = b.intensity);
    }
    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Argument(e.to_string()))?;
        for v in &mut image {
            *v += rng.sample(normal);
        }
    }
    Ok((Volume3::new(dims, [1.0; 3], image)?, truth))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Train8,
    Eval2,
    Distractor4,
}

impl Preset {
    fn stream(self) -> u64 {
        match self {
            Preset::Train8 => 1,
            Preset::Eval2 => 2,
            Preset::Distractor4 => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Train8 => "train8",
            Preset::Eval2 => "eval2",
            Preset::Distractor4 => "distractor4",
        }
    }

    fn cases(self) -> usize {
        match self {
            Preset::Train8 => 8,
            Preset::Eval2 => 2,
            Preset::Distractor4 => 4,
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train8" => Ok(Preset::Train8),
            "eval2" => Ok(Preset::Eval2),
            "distractor4" => Ok(Preset::Distractor4),
            other => arg_err(format!("unknown phantom preset {other:?} (expected train8, eval2 or distractor4)")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PhantomCase {
    pub id: String,
    pub spec: PhantomSpec,
    pub image: Volume3,
    pub truth: Mask3,
}

pub const SUITE_EDGE: usize = 64;
const TUBE_INTENSITY: f32 = 1.0;
const NOISE_SIGMA: f32 = 0.1;

fn bezier(p: &[[f64; 3]; 4], samples: usize) -> Vec<[f64; 3]> {
    (0..=samples)
        .map(|i| {
            let t = i as f64 / samples as f64;
            let u = 1.0 - t;
            let w = [u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t];
            std::array::from_fn(|a| (0..4).map(|k| w[k] * p[k][a]).sum())
        })
        .collect()
}

fn random_tree(rng: &mut ChaCha8Rng, edge: usize) -> Vec<TubeSpec> {
    let e = edge as f64;
    let axis = rng.random_range(0..3);
    let flip = rng.random_bool(0.5);
    let along = |f: f64| if flip { e - 1.0 - f } else { f };
    let mut ctrl = [[0.0; 3]; 4];
    for (k, c) in ctrl.iter_mut().enumerate() {
        for (a, v) in c.iter_mut().enumerate() {
            *v = if a == axis {
                along(4.0 + (e - 9.0) * k as f64 / 3.0)
            } else if k == 0 || k == 3 {
                rng.random_range(0.25 * e..0.75 * e)
            } else {
                rng.random_range(0.125 * e..0.875 * e)
            };
        }
    }
    let main = bezier(&ctrl, 24);
    let mut tubes = vec![TubeSpec {
        points: main.clone(),
        radius: rng.random_range(2.0..3.0),
        intensity: TUBE_INTENSITY,
    }];
    let branches = rng.random_range(0..=2);
    for _ in 0..branches {
        let start = main[rng.random_range(6..=18)];
        let end = loop {
            let cand: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.125 * e..0.875 * e));
            let d2: f64 = (0..3).map(|a| (cand[a] - start[a]).powi(2)).sum();
            if d2 >= (0.3 * e).powi(2) {
                break cand;
            }
        };
        let bend: [f64; 3] = std::array::from_fn(|a| {
            (0.5 * (start[a] + end[a]) + rng.random_range(-0.1 * e..0.1 * e)).clamp(4.0, e - 5.0)
        });
        let ctrl = [start, bend, bend, end];
        tubes.push(TubeSpec {
            points: bezier(&ctrl, 16),
            radius: rng.random_range(1.5..2.5),
            intensity: TUBE_INTENSITY,
        });
    }
    tubes
}

fn random_blobs(rng: &mut ChaCha8Rng, dims: Dims, truth: &Mask3) -> Vec<BlobSpec> {
    // Blobs may not touch the ground truth, even diagonally.
    let forbidden = morph(truth, MorphOp::Dilate, StructElem::Box3, 1).expect("one iteration");
    let want = rng.random_range(3..=6);
    let mut blobs: Vec<BlobSpec> = Vec::new();
    for _ in 0..10_000 {
        if blobs.len() == want {
            break;
        }
        let radius = rng.random_range(2.0..3.0);
        let center: [f64; 3] = std::array::from_fn(|a| rng.random_range(6.0..(dims[a] as f64 - 7.0)));
        let mut clash = false;
        for_ball(dims, center, radius, |i| clash |= forbidden.data()[i]);
        let apart = blobs.iter().all(|b| {
            let d2: f64 = (0..3).map(|a| (b.center[a] - center[a]).powi(2)).sum();
            d2.sqrt() > b.radius + radius + 2.0
        });
        if !clash && apart {
            blobs.push(BlobSpec {
                center,
                radius,
                intensity: TUBE_INTENSITY,
            });
        }
    }
    blobs
}

/// Fixed-recipe case sets; each preset draws from its own RNG stream.
pub fn phantom_suite(preset: Preset, seed: u64) -> Result<Vec<PhantomCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(preset.stream());
    let dims = [SUITE_EDGE; 3];
    let mut cases = Vec::with_capacity(preset.cases());
    for k in 0..preset.cases() {
        let tubes = random_tree(&mut rng, SUITE_EDGE);
        let distractors = if preset == Preset::Distractor4 {
            random_blobs(&mut rng, dims, &rasterize_tubes(dims, &tubes))
        } else {
            Vec::new()
        };
        let spec = PhantomSpec {
            dims,
            tubes,
            background_intensity: 0.0,
            noise_sigma: NOISE_SIGMA,
            distractors,
            seed: rng.random(),
        };
        let (image, truth) = generate_phantom(&spec)?;
        cases.push(PhantomCase {
            id: format!("{}_{k}", preset.name()),
            spec,
            image,
            truth,
        });
    }
    Ok(cases)
}
