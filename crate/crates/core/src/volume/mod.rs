//! Scalar and binary 3D grids.
//!
//! All grids are stored x-fastest: the voxel `(x, y, z)` lives at linear
//! index `x + nx * (y + ny * z)`, the same order NIfTI uses on disk.

mod nifti;

pub use nifti::{load_volume, read_nifti, save_volume, write_nifti, Datatype};

use crate::error::{arg_err, Result};

/// Voxel counts along x, y and z.
pub type Dims = [usize; 3];

/// Voxel index `(x, y, z)`.
pub type Voxel = [usize; 3];

/// Default VOI edge length fed to the network.
pub const VOI_SIZE: usize = 32;

#[inline]
pub fn linear_index(dims: Dims, [x, y, z]: Voxel) -> usize {
    x + dims[0] * (y + dims[1] * z)
}

#[inline]
pub fn voxel_of(dims: Dims, idx: usize) -> Voxel {
    let x = idx % dims[0];
    let yz = idx / dims[0];
    [x, yz % dims[1], yz / dims[1]]
}

pub fn voxel_count(dims: Dims) -> usize {
    dims[0] * dims[1] * dims[2]
}

/// A 3D scalar grid with voxel spacing in millimeters.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume3 {
    dims: Dims,
    spacing: [f32; 3],
    data: Vec<f32>,
}

impl Volume3 {
    pub fn new(dims: Dims, spacing: [f32; 3], data: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) {
            return arg_err(format!("volume dims must be positive, got {dims:?}"));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return arg_err(format!("voxel spacing must be positive, got {spacing:?}"));
        }
        if data.len() != voxel_count(dims) {
            return arg_err(format!(
                "volume of dims {dims:?} needs {} values, got {}",
                voxel_count(dims),
                data.len()
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return arg_err(format!("non-finite value at linear index {i}"));
        }
        Ok(Self { dims, spacing, data })
    }

    /// Unit-spacing volume filled with `value`.
    pub fn filled(dims: Dims, value: f32) -> Self {
        Self {
            dims,
            spacing: [1.0; 3],
            data: vec![value; voxel_count(dims)],
        }
    }

    /// Unit-spacing volume sampled from `f(x, y, z)`.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(Voxel) -> f32) -> Self {
        let mut data = Vec::with_capacity(voxel_count(dims));
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f([x, y, z]));
                }
            }
        }
        Self {
            dims,
            spacing: [1.0; 3],
            data,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn with_spacing(mut self, spacing: [f32; 3]) -> Result<Self> {
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return arg_err(format!("voxel spacing must be positive, got {spacing:?}"));
        }
        self.spacing = spacing;
        Ok(self)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Builds a volume with the same geometry from already validated values.
    pub(crate) fn same_geometry(&self, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self {
            dims: self.dims,
            spacing: self.spacing,
            data,
        }
    }

    pub fn get(&self, v: Voxel) -> f32 {
        self.data[linear_index(self.dims, v)]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }
}

/// A binary 3D grid with the same addressing as [`Volume3`].
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask3 {
    dims: Dims,
    data: Vec<bool>,
}

impl Mask3 {
    pub fn new(dims: Dims, data: Vec<bool>) -> Result<Self> {
        if data.len() != voxel_count(dims) {
            return arg_err(format!(
                "mask of dims {dims:?} needs {} values, got {}",
                voxel_count(dims),
                data.len()
            ));
        }
        Ok(Self { dims, data })
    }

    pub fn empty(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![false; voxel_count(dims)],
        }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(Voxel) -> bool) -> Self {
        let mut data = Vec::with_capacity(voxel_count(dims));
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f([x, y, z]));
                }
            }
        }
        Self { dims, data }
    }

    /// Mask with the given voxels set.
    pub fn from_voxels(dims: Dims, voxels: &[Voxel]) -> Self {
        let mut m = Self::empty(dims);
        for &v in voxels {
            m.set(v, true);
        }
        m
    }

    /// Nonzero voxels of a volume (e.g. a mask reloaded from a uint8 file).
    pub fn from_volume(vol: &Volume3) -> Self {
        Self {
            dims: vol.dims,
            data: vol.data.iter().map(|&v| v != 0.0).collect(),
        }
    }

    /// 0.0 / 1.0 volume with unit spacing.
    pub fn to_volume(&self) -> Volume3 {
        Volume3 {
            dims: self.dims,
            spacing: [1.0; 3],
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    pub fn get(&self, v: Voxel) -> bool {
        self.data[linear_index(self.dims, v)]
    }

    pub fn set(&mut self, v: Voxel, value: bool) {
        let i = linear_index(self.dims, v);
        self.data[i] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Foreground voxels in ascending linear-index order.
    pub fn voxels(&self) -> Vec<Voxel> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| voxel_of(self.dims, i))
            .collect()
    }

    pub fn complement(&self) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&b| !b).collect(),
        }
    }

    pub fn and(&self, other: &Mask3) -> Result<Self> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn and_not(&self, other: &Mask3) -> Result<Self> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn or(&self, other: &Mask3) -> Result<Self> {
        self.zip_with(other, |a, b| a || b)
    }

    fn zip_with(&self, other: &Mask3, f: impl Fn(bool, bool) -> bool) -> Result<Self> {
        if self.dims != other.dims {
            return arg_err(format!(
                "mask dims differ: {:?} vs {:?}",
                self.dims, other.dims
            ));
        }
        Ok(Self {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }
}

/// Intensity window mapped linearly onto `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WindowSpec {
    pub lo: f32,
    pub hi: f32,
}

impl WindowSpec {
    pub fn new(lo: f32, hi: f32) -> Result<Self> {
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return arg_err(format!("window needs lo < hi, got [{lo}, {hi}]"));
        }
        Ok(Self { lo, hi })
    }

    #[inline]
    pub fn apply(&self, v: f32) -> f32 {
        ((v - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }
}

pub fn window_normalize(vol: &Volume3, w: WindowSpec) -> Volume3 {
    vol.same_geometry(vol.data.iter().map(|&v| w.apply(v)).collect())
}

/// Copies the cube of side `size` around `center` out of a grid.
///
/// The center lands at local index `size / 2`; for even sizes the low side
/// gets `size / 2` voxels and the high side `size / 2 - 1`. Voxels that fall
/// outside the grid are filled with `fill`.
pub fn extract_cube<T: Copy>(data: &[T], dims: Dims, center: Voxel, size: usize, fill: T) -> Vec<T> {
    let half = (size / 2) as isize;
    let mut out = vec![fill; size * size * size];
    let origin: [isize; 3] = std::array::from_fn(|a| center[a] as isize - half);
    // Range of local indices along each axis that land inside the grid.
    let range = |a: usize| {
        let lo = (-origin[a]).clamp(0, size as isize) as usize;
        let hi = (dims[a] as isize - origin[a]).clamp(0, size as isize) as usize;
        (lo, hi.max(lo))
    };
    let (x0, x1) = range(0);
    let (y0, y1) = range(1);
    let (z0, z1) = range(2);
    if x0 == x1 {
        return out;
    }
    for lz in z0..z1 {
        let sz = (origin[2] + lz as isize) as usize;
        for ly in y0..y1 {
            let sy = (origin[1] + ly as isize) as usize;
            let sx = (origin[0] + x0 as isize) as usize;
            let src = sx + dims[0] * (sy + dims[1] * sz);
            let dst = x0 + size * (ly + size * lz);
            out[dst..dst + (x1 - x0)].copy_from_slice(&data[src..src + (x1 - x0)]);
        }
    }
    out
}

fn check_center(dims: Dims, center: Voxel) -> Result<()> {
    if (0..3).any(|a| center[a] >= dims[a]) {
        return arg_err(format!("VOI center {center:?} outside volume of dims {dims:?}"));
    }
    Ok(())
}

/// Zero-padded VOI of edge `size` around `center`.
pub fn extract_voi(vol: &Volume3, center: Voxel, size: usize) -> Result<Vec<f32>> {
    check_center(vol.dims, center)?;
    Ok(extract_cube(&vol.data, vol.dims, center, size, 0.0))
}

/// Label VOI; outside voxels are background.
pub fn extract_mask_voi(mask: &Mask3, center: Voxel, size: usize) -> Result<Vec<bool>> {
    check_center(mask.dims, center)?;
    Ok(extract_cube(&mask.data, mask.dims, center, size, false))
}
