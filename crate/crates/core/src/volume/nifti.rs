//! Minimal NIfTI-1 reader/writer.
//!
//! Reads little-endian single-file (`n+1`) images and `ni1` header/image
//! pairs with datatypes uint8, int16 and float32. Writes single-file images
//! with `vox_offset = 352` and an empty extension block.

use std::fs;
use std::path::Path;

use super::{voxel_count, Volume3};
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

const OFF_DIM: usize = 40;
const OFF_DATATYPE: usize = 70;
const OFF_BITPIX: usize = 72;
const OFF_PIXDIM: usize = 76;
const OFF_VOX_OFFSET: usize = 108;
const OFF_SCL_SLOPE: usize = 112;
const OFF_SCL_INTER: usize = 116;
const OFF_XYZT_UNITS: usize = 123;
const OFF_DESCRIP: usize = 148;
const OFF_SFORM_CODE: usize = 254;
const OFF_SROW_X: usize = 280;
const OFF_MAGIC: usize = 344;

/// On-disk voxel storage type.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Datatype {
    Uint8,
    Int16,
    Float32,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Datatype::Uint8 => 2,
            Datatype::Int16 => 4,
            Datatype::Float32 => 16,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(Datatype::Uint8),
            4 => Ok(Datatype::Int16),
            16 => Ok(Datatype::Float32),
            other => Err(Error::Unsupported(format!("NIfTI datatype code {other}"))),
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            Datatype::Uint8 => 1,
            Datatype::Int16 => 2,
            Datatype::Float32 => 4,
        }
    }
}

impl std::str::FromStr for Datatype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uint8" | "u8" => Ok(Datatype::Uint8),
            "int16" | "i16" => Ok(Datatype::Int16),
            "float32" | "f32" => Ok(Datatype::Float32),
            other => Err(Error::Argument(format!("unknown datatype `{other}`"))),
        }
    }
}

fn i16_at(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn i32_at(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn f32_at(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

struct Header {
    dims: [usize; 3],
    spacing: [f32; 3],
    datatype: Datatype,
    vox_offset: usize,
    slope: f32,
    inter: f32,
    single_file: bool,
}

fn parse_header(b: &[u8]) -> Result<Header> {
    if b.len() < HEADER_SIZE {
        return Err(Error::Format(format!(
            "file is {} bytes, shorter than a NIfTI-1 header",
            b.len()
        )));
    }
    let single_file = match &b[OFF_MAGIC..OFF_MAGIC + 4] {
        b"n+1\0" => true,
        b"ni1\0" => false,
        m => return Err(Error::Format(format!("bad NIfTI magic {:?}", String::from_utf8_lossy(m)))),
    };
    let sizeof_hdr = i32_at(b, 0);
    if sizeof_hdr != HEADER_SIZE as i32 {
        if sizeof_hdr.swap_bytes() == HEADER_SIZE as i32 {
            return Err(Error::Unsupported("big-endian NIfTI".into()));
        }
        return Err(Error::Format(format!("sizeof_hdr is {sizeof_hdr}, expected 348")));
    }
    let ndim = i16_at(b, OFF_DIM);
    if !(1..=7).contains(&ndim) {
        return Err(Error::Format(format!("dim[0] = {ndim} out of range")));
    }
    let mut dims = [1usize; 3];
    for (a, d) in dims.iter_mut().enumerate().take(ndim.min(3) as usize) {
        let n = i16_at(b, OFF_DIM + 2 * (a + 1));
        if n < 1 {
            return Err(Error::Format(format!("dim[{}] = {n}", a + 1)));
        }
        *d = n as usize;
    }
    let mut spacing = [1.0f32; 3];
    for (a, s) in spacing.iter_mut().enumerate() {
        let p = f32_at(b, OFF_PIXDIM + 4 * (a + 1)).abs();
        // Missing or zero pixdim falls back to 1 mm.
        if p > 0.0 && p.is_finite() {
            *s = p;
        }
    }
    let datatype = Datatype::from_code(i16_at(b, OFF_DATATYPE))?;
    let vox_offset = f32_at(b, OFF_VOX_OFFSET);
    if !(vox_offset >= 0.0 && vox_offset.is_finite()) {
        return Err(Error::Format(format!("vox_offset = {vox_offset}")));
    }
    Ok(Header {
        dims,
        spacing,
        datatype,
        vox_offset: vox_offset as usize,
        slope: f32_at(b, OFF_SCL_SLOPE),
        inter: f32_at(b, OFF_SCL_INTER),
        single_file,
    })
}

fn decode_payload(h: &Header, payload: &[u8]) -> Result<Volume3> {
    let n = voxel_count(h.dims);
    let need = n * h.datatype.bytes();
    if payload.len() < need {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::UnexpectedEof,
            format!("voxel payload has {} bytes, expected {need}", payload.len()),
        )));
    }
    let raw: Vec<f32> = match h.datatype {
        Datatype::Uint8 => payload[..n].iter().map(|&v| v as f32).collect(),
        Datatype::Int16 => payload[..need]
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32)
            .collect(),
        Datatype::Float32 => payload[..need]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    let scaled = if h.slope != 0.0 && h.slope.is_finite() && h.inter.is_finite() && !(h.slope == 1.0 && h.inter == 0.0) {
        raw.into_iter().map(|v| v * h.slope + h.inter).collect()
    } else {
        raw
    };
    Volume3::new(h.dims, h.spacing, scaled).map_err(|e| Error::Format(e.to_string()))
}

/// Decodes a single-file (`n+1`) image held in memory.
pub fn read_nifti(bytes: &[u8]) -> Result<Volume3> {
    let h = parse_header(bytes)?;
    if !h.single_file {
        return Err(Error::Unsupported("`ni1` header without its .img pair".into()));
    }
    let offset = h.vox_offset.max(HEADER_SIZE);
    decode_payload(&h, bytes.get(offset..).unwrap_or(&[]))
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume3> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let h = parse_header(&bytes)?;
    if h.single_file {
        let offset = h.vox_offset.max(HEADER_SIZE);
        decode_payload(&h, bytes.get(offset..).unwrap_or(&[]))
    } else {
        let img = fs::read(path.with_extension("img"))?;
        decode_payload(&h, img.get(h.vox_offset..).unwrap_or(&[]))
    }
}

/// Encodes a volume as a single-file image.
///
/// Integer datatypes clamp to their range and truncate toward zero, so
/// 300.5 stored as int16 reads back as 300.0.
pub fn write_nifti(vol: &Volume3, datatype: Datatype) -> Vec<u8> {
    let mut b = vec![0u8; VOX_OFFSET];
    let put_i16 = |b: &mut [u8], off: usize, v: i16| b[off..off + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |b: &mut [u8], off: usize, v: f32| b[off..off + 4].copy_from_slice(&v.to_le_bytes());

    b[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    b[38] = b'r';
    let dims = vol.dims();
    put_i16(&mut b, OFF_DIM, 3);
    for a in 0..3 {
        put_i16(&mut b, OFF_DIM + 2 * (a + 1), dims[a] as i16);
    }
    for a in 4..8 {
        put_i16(&mut b, OFF_DIM + 2 * a, 1);
    }
    put_i16(&mut b, OFF_DATATYPE, datatype.code());
    put_i16(&mut b, OFF_BITPIX, (datatype.bytes() * 8) as i16);
    put_f32(&mut b, OFF_PIXDIM, 1.0);
    let sp = vol.spacing();
    for a in 0..3 {
        put_f32(&mut b, OFF_PIXDIM + 4 * (a + 1), sp[a]);
    }
    put_f32(&mut b, OFF_VOX_OFFSET, VOX_OFFSET as f32);
    put_f32(&mut b, OFF_SCL_SLOPE, 1.0);
    put_f32(&mut b, OFF_SCL_INTER, 0.0);
    // Millimeters, seconds.
    b[OFF_XYZT_UNITS] = 2 | 8;
    let descrip = b"vesselpipe";
    b[OFF_DESCRIP..OFF_DESCRIP + descrip.len()].copy_from_slice(descrip);
    put_i16(&mut b, OFF_SFORM_CODE, 1);
    for row in 0..3 {
        put_f32(&mut b, OFF_SROW_X + 16 * row + 4 * row, sp[row]);
    }
    b[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(b"n+1\0");

    b.reserve(vol.len() * datatype.bytes());
    match datatype {
        Datatype::Uint8 => b.extend(vol.data().iter().map(|&v| v.clamp(0.0, 255.0) as u8)),
        Datatype::Int16 => {
            for &v in vol.data() {
                let q = v.clamp(i16::MIN as f32, i16::MAX as f32) as i16;
                b.extend_from_slice(&q.to_le_bytes());
            }
        }
        Datatype::Float32 => {
            for &v in vol.data() {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    b
}

pub fn save_volume(vol: &Volume3, path: impl AsRef<Path>, datatype: Datatype) -> Result<()> {
    fs::write(path, write_nifti(vol, datatype))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Header laid out field by field from the NIfTI-1 struct definition.
    fn handmade_int16(dims: [i16; 3], values: &[i16]) -> Vec<u8> {
        let mut b = vec![0u8; 352];
        b[0..4].copy_from_slice(&348i32.to_le_bytes());
        let dim: [i16; 8] = [3, dims[0], dims[1], dims[2], 1, 1, 1, 1];
        for (i, d) in dim.iter().enumerate() {
            b[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_le_bytes());
        }
        b[70..72].copy_from_slice(&4i16.to_le_bytes());
        b[72..74].copy_from_slice(&16i16.to_le_bytes());
        for i in 0..4 {
            b[76 + 4 * i..80 + 4 * i].copy_from_slice(&1.0f32.to_le_bytes());
        }
        b[108..112].copy_from_slice(&352.0f32.to_le_bytes());
        b[344..348].copy_from_slice(b"n+1\0");
        for v in values {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn reads_handmade_int16_file() {
        let bytes = handmade_int16([2, 2, 2], &[0, 1, 2, 3, 4, 5, 6, 7]);
        let v = read_nifti(&bytes).unwrap();
        assert_eq!(v.dims(), [2, 2, 2]);
        assert_eq!(v.data(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        assert_eq!(v.get([1, 0, 0]), 1.0);
        assert_eq!(v.get([0, 1, 0]), 2.0);
        assert_eq!(v.get([0, 0, 1]), 4.0);
    }

    #[test]
    fn applies_scl_slope_and_inter() {
        let mut bytes = handmade_int16([2, 1, 1], &[1, 2]);
        bytes[112..116].copy_from_slice(&2.0f32.to_le_bytes());
        bytes[116..120].copy_from_slice(&(-1000.0f32).to_le_bytes());
        let v = read_nifti(&bytes).unwrap();
        assert_eq!(v.data(), &[-998.0, -996.0]);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = handmade_int16([2, 2, 2], &[0; 8]);
        bytes[344..348].copy_from_slice(b"XXXX");
        assert!(matches!(read_nifti(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_unsupported_datatype() {
        let mut bytes = handmade_int16([2, 2, 2], &[0; 8]);
        bytes[70..72].copy_from_slice(&64i16.to_le_bytes());
        assert!(matches!(read_nifti(&bytes), Err(Error::Unsupported(_))));
    }

    #[test]
    fn truncated_payload_is_io_error() {
        let bytes = handmade_int16([2, 2, 2], &[0; 5]);
        assert!(matches!(read_nifti(&bytes), Err(Error::Io(_))));
    }

    #[test]
    fn constant_roundtrip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.nii");
        save_volume(&Volume3::filled([4, 4, 4], 7.0), &p, Datatype::Float32).unwrap();
        let v = load_volume(&p).unwrap();
        assert_eq!(v.len(), 64);
        assert!(v.data().iter().all(|&x| x == 7.0));
    }

    #[test]
    fn int16_truncates_toward_zero() {
        let vol = Volume3::new([3, 1, 1], [1.0; 3], vec![300.5, -2.7, 1e6]).unwrap();
        let v = read_nifti(&write_nifti(&vol, Datatype::Int16)).unwrap();
        assert_eq!(v.data(), &[300.0, -2.0, 32767.0]);
    }

    #[test]
    fn uint8_mask_roundtrip() {
        let vol = Volume3::from_fn([4, 4, 4], |[x, y, z]| ((x + y + z) % 2) as f32);
        let v = read_nifti(&write_nifti(&vol, Datatype::Uint8)).unwrap();
        assert!(v.data().iter().all(|&x| x == 0.0 || x == 1.0));
        assert_eq!(v, vol);
    }

    #[test]
    fn ni1_pair_reads_img_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut hdr = handmade_int16([2, 1, 1], &[]);
        hdr.truncate(348);
        hdr[344..348].copy_from_slice(b"ni1\0");
        hdr[108..112].copy_from_slice(&0.0f32.to_le_bytes());
        fs::write(dir.path().join("pair.hdr"), &hdr).unwrap();
        let mut img = Vec::new();
        img.extend_from_slice(&5i16.to_le_bytes());
        img.extend_from_slice(&(-3i16).to_le_bytes());
        fs::write(dir.path().join("pair.img"), &img).unwrap();
        let v = load_volume(dir.path().join("pair.hdr")).unwrap();
        assert_eq!(v.data(), &[5.0, -3.0]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn float32_roundtrip_is_exact(
                nx in 1usize..6, ny in 1usize..6, nz in 1usize..6,
                sx in 0.1f32..4.0, sz in 0.1f32..4.0,
                seed in any::<u32>(),
            ) {
                let mut s = seed as u64 | 1;
                let vol = Volume3::from_fn([nx, ny, nz], |_| {
                    s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                    f32::from_bits((s as u32 & 0x807f_ffff) | 0x4000_0000) * 1e3
                })
                .with_spacing([sx, 1.0, sz])
                .unwrap();
                let back = read_nifti(&write_nifti(&vol, Datatype::Float32)).unwrap();
                prop_assert_eq!(back.dims(), vol.dims());
                prop_assert_eq!(back.spacing(), vol.spacing());
                let same = back.data().iter().zip(vol.data()).all(|(a, b)| a.to_bits() == b.to_bits());
                prop_assert!(same);
            }
        }
    }
}
