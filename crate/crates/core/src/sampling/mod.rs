//! Balanced VOI manifests: skeleton-centered vessel samples, an equal number
//! of random background samples, cube-symmetry augmentation, and the
//! regular lattice of test-time centers.

mod augment;

pub use augment::{compose, source_voxel, transform_cube, DEFAULT_PLAN, NUM_TRANSFORMS};

use std::path::Path;

use log::warn;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::preprocess::{morph, skeletonize, MorphOp, StructElem};
use crate::volume::{extract_mask_voi, extract_voi, Dims, Mask3, Volume3, Voxel, VOI_SIZE};

pub const MANIFEST_FORMAT: &str = "manifest_v1";

/// A multi-channel VOI and its label.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub size: usize,
    /// One x-fastest `size³` grid per channel.
    pub channels: Vec<Vec<f32>>,
    pub label: Vec<bool>,
    pub center: Voxel,
    pub transform_id: u8,
}

impl Patch {
    /// Cuts the VOI around `center` out of every channel volume and the label.
    pub fn extract(channels: &[&Volume3], label: &Mask3, center: Voxel, size: usize) -> Result<Self> {
        let dims = label.dims();
        if let Some(v) = channels.iter().find(|v| v.dims() != dims) {
            return arg_err(format!("channel dims {:?} differ from label dims {dims:?}", v.dims()));
        }
        Ok(Self {
            size,
            channels: channels
                .iter()
                .map(|v| extract_voi(v, center, size))
                .collect::<Result<_>>()?,
            label: extract_mask_voi(label, center, size)?,
            center,
            transform_id: 0,
        })
    }
}

/// Applies cube symmetry `transform_id` to every channel and the label.
pub fn augment(patch: &Patch, transform_id: u8) -> Result<Patch> {
    Ok(Patch {
        size: patch.size,
        channels: patch
            .channels
            .iter()
            .map(|c| transform_cube(c, patch.size, transform_id))
            .collect::<Result<_>>()?,
        label: transform_cube(&patch.label, patch.size, transform_id)?,
        center: patch.center,
        transform_id: compose(patch.transform_id, transform_id)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleClass {
    Vessel,
    Background,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub case_id: String,
    pub center: Voxel,
    pub class: SampleClass,
    pub transform_id: u8,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub seed: u64,
    pub voi_size: usize,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn count(&self, class: SampleClass) -> usize {
        self.entries.iter().filter(|e| e.class == class).count()
    }

    pub fn is_balanced(&self) -> bool {
        self.count(SampleClass::Vessel) == self.count(SampleClass::Background)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Format(format!(
                "manifest format {:?} is not {MANIFEST_FORMAT:?}",
                m.format
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Skeleton voxels in ascending linear-index order.
pub fn vessel_centers(skeleton: &Mask3) -> Vec<Voxel> {
    skeleton.voxels()
}

/// `n` centers drawn from `region ∖ vessel_mask`.
///
/// Draws are without replacement while enough candidates exist and with
/// replacement otherwise.
pub fn background_centers(region: &Mask3, vessel_mask: &Mask3, n: usize, seed: u64) -> Result<Vec<Voxel>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let candidates = region.and_not(vessel_mask)?.voxels();
    if candidates.is_empty() {
        return arg_err("background sampling domain is empty");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(if n <= candidates.len() {
        index::sample(&mut rng, candidates.len(), n)
            .into_iter()
            .map(|i| candidates[i])
            .collect()
    } else {
        (0..n).map(|_| candidates[rng.random_range(0..candidates.len())]).collect()
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub voi_size: usize,
    /// Transform ids applied to every vessel center.
    pub transforms: Vec<u8>,
    /// Keep at most this many vessel entries per case, chosen at random.
    pub max_vessel_per_case: Option<usize>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            voi_size: VOI_SIZE,
            transforms: DEFAULT_PLAN.to_vec(),
            max_vessel_per_case: None,
        }
    }
}

/// What [`build_dataset`] needs to know about one case.
#[derive(Clone, Copy, Debug)]
pub struct SampleCase<'a> {
    pub id: &'a str,
    pub label: &'a Mask3,
    /// Candidate region; the whole volume when absent.
    pub region: Option<&'a Mask3>,
}

/// Balanced, shuffled manifest over all cases.
pub fn build_dataset(cases: &[SampleCase], cfg: &SamplingConfig, seed: u64) -> Result<DatasetManifest> {
    if cfg.transforms.is_empty() {
        return arg_err("augmentation plan is empty");
    }
    if let Some(&bad) = cfg.transforms.iter().find(|&&t| t >= NUM_TRANSFORMS) {
        return arg_err(format!("transform id must be in 0..48, got {bad}"));
    }
    if cfg.voi_size == 0 {
        return arg_err("VOI size must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for case in cases {
        let label = case.label;
        if let Some(r) = case.region {
            if r.dims() != label.dims() {
                return arg_err(format!("case {}: region and label dims differ", case.id));
            }
        }
        let centers = vessel_centers(&skeletonize(label));
        if centers.is_empty() {
            warn!("case {}: empty skeleton, skipped", case.id);
            continue;
        }
        let mut vessel: Vec<(Voxel, u8)> = centers
            .iter()
            .flat_map(|&c| cfg.transforms.iter().map(move |&t| (c, t)))
            .collect();
        if let Some(cap) = cfg.max_vessel_per_case {
            if cap < vessel.len() {
                let mut keep = index::sample(&mut rng, vessel.len(), cap).into_vec();
                keep.sort_unstable();
                vessel = keep.into_iter().map(|i| vessel[i]).collect();
            }
        }

        let near_vessel = morph(label, MorphOp::Dilate, StructElem::Box3, 1)?;
        let whole = Mask3::from_fn(label.dims(), |_| true);
        let region = case.region.unwrap_or(&whole);
        let mut domain = region.and_not(&near_vessel)?;
        if domain.is_empty() {
            warn!("case {}: no background left in the region, sampling the whole volume", case.id);
            domain = whole.and_not(label)?;
        }
        let bg = background_centers(&domain, label, vessel.len(), rng.random())?;

        entries.extend(vessel.into_iter().map(|(center, transform_id)| ManifestEntry {
            case_id: case.id.to_string(),
            center,
            class: SampleClass::Vessel,
            transform_id,
        }));
        entries.extend(bg.into_iter().enumerate().map(|(k, center)| ManifestEntry {
            case_id: case.id.to_string(),
            center,
            class: SampleClass::Background,
            transform_id: cfg.transforms[k % cfg.transforms.len()],
        }));
    }
    if entries.is_empty() {
        return arg_err("every case has an empty skeleton");
    }
    entries.shuffle(&mut rng);
    Ok(DatasetManifest {
        format: MANIFEST_FORMAT.to_string(),
        seed,
        voi_size: cfg.voi_size,
        entries,
    })
}

fn axis_centers(n: usize, size: usize, stride: usize) -> Vec<usize> {
    let half = size / 2;
    if n <= size {
        return vec![half.min(n - 1)];
    }
    let last = n - half;
    let mut out: Vec<usize> = (half..last).step_by(stride).collect();
    out.push(last);
    out
}

/// Regular lattice of VOI centers whose cubes cover the volume or `region`.
///
/// Along each axis centers start at `size / 2` and advance by `stride`; the
/// last one is pulled in to `n - size / 2` so its cube ends at the border.
/// With a region, only centers whose cube touches the region are kept.
pub fn test_grid_centers(dims: Dims, region: Option<&Mask3>, size: usize, stride: usize) -> Result<Vec<Voxel>> {
    if stride == 0 || stride > size {
        return arg_err(format!("stride must be in 1..={size}, got {stride}"));
    }
    if let Some(r) = region {
        if r.dims() != dims {
            return arg_err(format!("region dims {:?} differ from volume dims {dims:?}", r.dims()));
        }
    }
    let (xs, ys, zs) = (
        axis_centers(dims[0], size, stride),
        axis_centers(dims[1], size, stride),
        axis_centers(dims[2], size, stride),
    );
    let mut out = Vec::with_capacity(xs.len() * ys.len() * zs.len());
    for &z in &zs {
        for &y in &ys {
            for &x in &xs {
                let c = [x, y, z];
                if region.is_none_or(|r| cube_touches(r, c, size)) {
                    out.push(c);
                }
            }
        }
    }
    Ok(out)
}

fn cube_touches(region: &Mask3, c: Voxel, size: usize) -> bool {
    let dims = region.dims();
    let half = size / 2;
    let lo: [usize; 3] = std::array::from_fn(|a| c[a].saturating_sub(half));
    let hi: [usize; 3] = std::array::from_fn(|a| (c[a] + size - half).min(dims[a]));
    for z in lo[2]..hi[2] {
        for y in lo[1]..hi[1] {
            for x in lo[0]..hi[0] {
                if region.get([x, y, z]) {
                    return true;
                }
            }
        }
    }
    false
}
