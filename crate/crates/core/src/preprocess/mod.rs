//! Candidate-region construction: thresholding, binary morphology,
//! component labeling and skeletonization.

pub(crate) mod label;
mod skeleton;

pub use label::{connected_components, keep_largest, Connectivity, LabelField};
pub use skeleton::{has_solid_block, is_simple, skeletonize};

use crate::error::{arg_err, Result};
use crate::volume::{linear_index, voxel_of, Mask3, Volume3, Voxel};

/// Structuring element for morphology.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StructElem {
    /// Full 3×3×3 cube.
    Box3,
    /// Center plus its six face neighbors.
    Cross6,
}

impl StructElem {
    fn offsets(self) -> Vec<[isize; 3]> {
        let conn = match self {
            StructElem::Box3 => Connectivity::TwentySix,
            StructElem::Cross6 => Connectivity::Six,
        };
        let mut v = conn.offsets();
        v.push([0, 0, 0]);
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MorphOp {
    Erode,
    Dilate,
    Open,
    Close,
}

/// `lo <= v <= hi`; pass `f32::NEG_INFINITY` / `f32::INFINITY` for an open side.
pub fn threshold(vol: &Volume3, lo: f32, hi: f32) -> Result<Mask3> {
    if lo > hi {
        return arg_err(format!("threshold needs lo <= hi, got [{lo}, {hi}]"));
    }
    Mask3::new(vol.dims(), vol.data().iter().map(|&v| lo <= v && v <= hi).collect())
}

fn shifted(v: Voxel, d: [isize; 3], dims: [usize; 3]) -> Option<Voxel> {
    let n: [isize; 3] = std::array::from_fn(|a| v[a] as isize + d[a]);
    (0..3)
        .all(|a| n[a] >= 0 && n[a] < dims[a] as isize)
        .then(|| [n[0] as usize, n[1] as usize, n[2] as usize])
}

fn erode_once(mask: &Mask3, offsets: &[[isize; 3]]) -> Mask3 {
    let dims = mask.dims();
    let src = mask.data();
    let data = (0..src.len())
        .map(|i| {
            src[i] && {
                let v = voxel_of(dims, i);
                offsets
                    .iter()
                    .all(|&d| shifted(v, d, dims).is_some_and(|n| src[linear_index(dims, n)]))
            }
        })
        .collect();
    Mask3::new(dims, data).expect("dims unchanged")
}

fn dilate_once(mask: &Mask3, offsets: &[[isize; 3]]) -> Mask3 {
    let dims = mask.dims();
    let mut out = mask.clone();
    for v in mask.voxels() {
        for &d in offsets {
            if let Some(n) = shifted(v, d, dims) {
                out.set(n, true);
            }
        }
    }
    out
}

/// Binary morphology with out-of-bounds treated as background.
///
/// `Open` erodes `iterations` times and then dilates `iterations` times;
/// `Close` does the reverse.
pub fn morph(mask: &Mask3, op: MorphOp, elem: StructElem, iterations: usize) -> Result<Mask3> {
    if iterations == 0 {
        return arg_err("morphology needs at least one iteration");
    }
    let offs = elem.offsets();
    let repeat = |m: Mask3, f: fn(&Mask3, &[[isize; 3]]) -> Mask3| (0..iterations).fold(m, |m, _| f(&m, &offs));
    Ok(match op {
        MorphOp::Erode => repeat(mask.clone(), erode_once),
        MorphOp::Dilate => repeat(mask.clone(), dilate_once),
        MorphOp::Open => repeat(repeat(mask.clone(), erode_once), dilate_once),
        MorphOp::Close => repeat(repeat(mask.clone(), dilate_once), erode_once),
    })
}

/// Half-open voxel box `[lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropBox {
    pub lo: Voxel,
    pub hi: Voxel,
}

impl CropBox {
    pub fn contains(&self, v: Voxel) -> bool {
        (0..3).all(|a| self.lo[a] <= v[a] && v[a] < self.hi[a])
    }
}

impl std::str::FromStr for CropBox {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| crate::Error::Argument(format!("bad crop box `{s}`: {e}")))?;
        if parts.len() != 6 {
            return arg_err(format!("crop box needs x0,y0,z0,x1,y1,z1, got `{s}`"));
        }
        Ok(CropBox {
            lo: [parts[0], parts[1], parts[2]],
            hi: [parts[3], parts[4], parts[5]],
        })
    }
}

/// Recipe for [`candidate_region`].
///
/// The defaults are heuristics: the HU window drops air and lung below and
/// dense bone above, and one cross-shaped opening removes speckle.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateConfig {
    pub hu_lo: f32,
    pub hu_hi: f32,
    pub v_thresh: f32,
    pub crop: Option<CropBox>,
    pub open_iterations: usize,
}

impl Default for CandidateConfig {
    fn default() -> Self {
        Self {
            hu_lo: -24.0,
            hu_hi: 576.0,
            v_thresh: 0.05,
            crop: None,
            open_iterations: 1,
        }
    }
}

pub fn candidate_region(vesselness: &Volume3, cta: &Volume3, cfg: &CandidateConfig) -> Result<Mask3> {
    if vesselness.dims() != cta.dims() {
        return arg_err(format!(
            "vesselness dims {:?} differ from CTA dims {:?}",
            vesselness.dims(),
            cta.dims()
        ));
    }
    let tubular = threshold(vesselness, cfg.v_thresh, f32::INFINITY)?;
    let tissue = threshold(cta, cfg.hu_lo, cfg.hu_hi)?;
    let mut region = tubular.and(&tissue)?;
    if let Some(b) = cfg.crop {
        let dims = region.dims();
        for (i, r) in region.data_mut().iter_mut().enumerate() {
            *r &= b.contains(voxel_of(dims, i));
        }
    }
    if cfg.open_iterations == 0 {
        return Ok(region);
    }
    morph(&region, MorphOp::Open, StructElem::Cross6, cfg.open_iterations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::label::tests::random_mask;

    #[test]
    fn threshold_examples() {
        let vol = Volume3::new([4, 1, 1], [1.0; 3], vec![-100.0, 0.0, 200.0, 800.0]).unwrap();
        let m = threshold(&vol, 100.0, 600.0).unwrap();
        assert_eq!(m.data(), &[false, false, true, false]);
        let c = Volume3::filled([3, 3, 3], 5.0);
        assert_eq!(threshold(&c, 5.0, 5.0).unwrap().count(), 27);
        let open = threshold(&vol, f32::NEG_INFINITY, 0.0).unwrap();
        assert_eq!(open.data(), &[true, true, false, false]);
        assert!(threshold(&vol, 2.0, 1.0).is_err());
    }

    #[test]
    fn single_voxel_dilate_and_erode() {
        let m = Mask3::from_voxels([7, 7, 7], &[[3, 3, 3]]);
        assert_eq!(morph(&m, MorphOp::Dilate, StructElem::Box3, 1).unwrap().count(), 27);
        let corner = Mask3::from_voxels([7, 7, 7], &[[0, 0, 0]]);
        assert_eq!(morph(&corner, MorphOp::Dilate, StructElem::Box3, 1).unwrap().count(), 8);
        assert!(morph(&m, MorphOp::Erode, StructElem::Box3, 1).unwrap().is_empty());
        assert_eq!(morph(&m, MorphOp::Dilate, StructElem::Cross6, 1).unwrap().count(), 7);
        assert!(morph(&m, MorphOp::Dilate, StructElem::Box3, 0).is_err());
    }

    /// Direct set definition: x is kept by erosion iff every x + d is set.
    fn reference_erode(m: &Mask3, elem: StructElem) -> Mask3 {
        let dims = m.dims();
        Mask3::from_fn(dims, |v| {
            elem.offsets().iter().all(|d| {
                let n: Vec<isize> = (0..3).map(|a| v[a] as isize + d[a]).collect();
                (0..3).all(|a| n[a] >= 0 && n[a] < dims[a] as isize)
                    && m.get([n[0] as usize, n[1] as usize, n[2] as usize])
            })
        })
    }

    fn reference_dilate(m: &Mask3, elem: StructElem) -> Mask3 {
        let dims = m.dims();
        Mask3::from_fn(dims, |v| {
            elem.offsets().iter().any(|d| {
                let n: Vec<isize> = (0..3).map(|a| v[a] as isize - d[a]).collect();
                (0..3).all(|a| n[a] >= 0 && n[a] < dims[a] as isize)
                    && m.get([n[0] as usize, n[1] as usize, n[2] as usize])
            })
        })
    }

    #[test]
    fn solid_block_survives_opening() {
        let block = Mask3::from_fn([9, 9, 9], |v| v.iter().all(|&c| (2..7).contains(&c)));
        let eroded = morph(&block, MorphOp::Erode, StructElem::Box3, 1).unwrap();
        assert_eq!(eroded.count(), 27);
        assert_eq!(eroded, reference_erode(&block, StructElem::Box3));
        assert_eq!(morph(&block, MorphOp::Open, StructElem::Box3, 1).unwrap(), block);
        assert_eq!(reference_dilate(&eroded, StructElem::Box3), block);
    }

    #[test]
    fn morphology_matches_reference_on_random_masks() {
        for seed in 0..6 {
            let m = random_mask([8, 8, 8], 0.5, seed);
            for elem in [StructElem::Box3, StructElem::Cross6] {
                assert_eq!(morph(&m, MorphOp::Erode, elem, 1).unwrap(), reference_erode(&m, elem));
                assert_eq!(morph(&m, MorphOp::Dilate, elem, 1).unwrap(), reference_dilate(&m, elem));
            }
        }
    }

    #[test]
    fn close_fills_a_one_voxel_gap() {
        let line: Vec<_> = (1..9).filter(|&x| x != 5).map(|x| [x, 4, 4]).collect();
        let m = Mask3::from_voxels([10, 9, 9], &line);
        let closed = morph(&m, MorphOp::Close, StructElem::Box3, 1).unwrap();
        assert!(closed.get([5, 4, 4]));
    }

    #[test]
    fn candidate_region_cases() {
        let dims = [20, 20, 20];
        let zero = Volume3::filled(dims, 0.0);
        let cta = Volume3::filled(dims, 100.0);
        let cfg = CandidateConfig::default();
        assert!(candidate_region(&zero, &cta, &cfg).unwrap().is_empty());

        let tube = Volume3::from_fn(dims, |[x, y, _]| {
            if (x as f32 - 10.0).powi(2) + (y as f32 - 10.0).powi(2) <= 9.0 { 0.9 } else { 0.0 }
        });
        let full = candidate_region(&tube, &cta, &cfg).unwrap();
        assert!(!full.is_empty());
        let crop = CandidateConfig {
            crop: Some(CropBox { lo: [0, 0, 0], hi: [4, 20, 20] }),
            ..cfg.clone()
        };
        assert!(candidate_region(&tube, &cta, &crop).unwrap().is_empty());
        let hot = Volume3::filled(dims, 2000.0);
        assert!(candidate_region(&tube, &hot, &cfg).unwrap().is_empty());
        assert!(candidate_region(&tube, &Volume3::filled([4, 4, 4], 0.0), &cfg).is_err());
    }

    #[test]
    fn crop_box_parsing() {
        let b: CropBox = "1,2,3,10,20,30".parse().unwrap();
        assert_eq!(b, CropBox { lo: [1, 2, 3], hi: [10, 20, 30] });
        assert!("1,2,3".parse::<CropBox>().is_err());
        assert!("a,b,c,d,e,f".parse::<CropBox>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn dilation_is_dual_to_erosion_in_the_interior(seed in any::<u64>(), density in 0.1f64..0.9) {
                let m = random_mask([8, 8, 8], density, seed);
                for elem in [StructElem::Box3, StructElem::Cross6] {
                    let d = morph(&m, MorphOp::Dilate, elem, 1).unwrap();
                    let dual = morph(&m.complement(), MorphOp::Erode, elem, 1).unwrap().complement();
                    for z in 1..7 { for y in 1..7 { for x in 1..7 {
                        prop_assert_eq!(d.get([x, y, z]), dual.get([x, y, z]));
                    }}}
                }
            }
        }
    }
}
