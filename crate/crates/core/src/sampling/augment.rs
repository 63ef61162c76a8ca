//! The 48 symmetries of the cube acting on VOIs.
//!
//! Transform `id = perm * 8 + flips` first relabels axes by one of six
//! permutations and then mirrors the axes whose bit is set in `flips`
//! (bit 0 = x). Output voxel `o` reads the source voxel `s` with
//! `s[perm[a]] = flip(a) ? n - 1 - o[a] : o[a]`.

use crate::error::{arg_err, Result};

pub const NUM_TRANSFORMS: u8 = 48;

const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// Identity, the three axis mirrors, the quarter, half and three-quarter
/// turns about z, and the x-y diagonal reflection.
pub const DEFAULT_PLAN: [u8; 8] = [0, 1, 2, 4, 17, 3, 18, 16];

fn check_id(id: u8) -> Result<()> {
    if id >= NUM_TRANSFORMS {
        return arg_err(format!("transform id must be in 0..48, got {id}"));
    }
    Ok(())
}

/// Source voxel read by output voxel `o` of an `n`-cube under transform `id`.
#[inline]
pub fn source_voxel(id: u8, n: usize, o: [usize; 3]) -> [usize; 3] {
    let perm = PERMS[(id / 8) as usize];
    let flips = id % 8;
    let mut s = [0; 3];
    for a in 0..3 {
        s[perm[a]] = if flips >> a & 1 == 1 { n - 1 - o[a] } else { o[a] };
    }
    s
}

/// Applies transform `id` to an x-fastest `n`-cube.
pub fn transform_cube<T: Copy>(src: &[T], n: usize, id: u8) -> Result<Vec<T>> {
    check_id(id)?;
    if src.len() != n * n * n {
        return arg_err(format!("cube of edge {n} needs {} values, got {}", n * n * n, src.len()));
    }
    if id == 0 {
        return Ok(src.to_vec());
    }
    let mut out = Vec::with_capacity(src.len());
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let s = source_voxel(id, n, [x, y, z]);
                out.push(src[s[0] + n * (s[1] + n * s[2])]);
            }
        }
    }
    Ok(out)
}

/// The id whose action equals applying `first` and then `second`.
pub fn compose(first: u8, second: u8) -> Result<u8> {
    check_id(first)?;
    check_id(second)?;
    // A 2-cube is enough: each symmetry is determined by where it sends the corners.
    let probe: Vec<u8> = (0..8).collect();
    let target = transform_cube(&transform_cube(&probe, 2, first)?, 2, second)?;
    for id in 0..NUM_TRANSFORMS {
        if transform_cube(&probe, 2, id)? == target {
            return Ok(id);
        }
    }
    unreachable!("the cube symmetries form a group")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cube(n: usize) -> Vec<u32> {
        (0..(n * n * n) as u32).collect()
    }

    #[test]
    fn identity_and_mirror_involution() {
        let c = cube(4);
        assert_eq!(transform_cube(&c, 4, 0).unwrap(), c);
        let m = transform_cube(&c, 4, 1).unwrap();
        assert_ne!(m, c);
        assert_eq!(m[0], 3);
        assert_eq!(transform_cube(&m, 4, 1).unwrap(), c);
        assert!(transform_cube(&c, 4, 48).is_err());
        assert!(transform_cube(&c, 3, 0).is_err());
    }

    #[test]
    fn all_48_are_distinct() {
        let c = cube(3);
        let mut seen: Vec<Vec<u32>> = (0..NUM_TRANSFORMS).map(|id| transform_cube(&c, 3, id).unwrap()).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 48);
    }

    #[test]
    fn default_plan_contents() {
        let c = cube(3);
        let mut plan: Vec<u8> = DEFAULT_PLAN.to_vec();
        plan.sort();
        plan.dedup();
        assert_eq!(plan.len(), 8);
        // 17 is a quarter turn about z: applying it four times is the identity.
        let mut r = c.clone();
        for _ in 0..4 {
            r = transform_cube(&r, 3, 17).unwrap();
        }
        assert_eq!(r, c);
        assert_eq!(compose(17, 17).unwrap(), 3);
        assert_eq!(compose(17, 3).unwrap(), 18);
        // Quarter turns keep every z-slab in place.
        let t = transform_cube(&c, 3, 17).unwrap();
        for (i, v) in t.iter().enumerate() {
            assert_eq!(i / 9, *v as usize / 9);
        }
    }

    proptest! {
        #[test]
        fn preserves_value_multiset(id in 0u8..48, seed in any::<u64>()) {
            let n = 5;
            let src: Vec<u64> = (0..125u64).map(|i| i.wrapping_mul(seed | 1) % 17).collect();
            let mut a = transform_cube(&src, n, id).unwrap();
            let mut b = src.clone();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn composition_closes(a in 0u8..48, b in 0u8..48, seed in any::<u64>()) {
            let n = 4;
            let src: Vec<u64> = (0..64u64).map(|i| i ^ seed).collect();
            let two = transform_cube(&transform_cube(&src, n, a).unwrap(), n, b).unwrap();
            let one = transform_cube(&src, n, compose(a, b).unwrap()).unwrap();
            prop_assert_eq!(two, one);
        }
    }
}
