//! Topology-preserving thinning by directional simple-point peeling.
//!
//! A foreground voxel is simple for the (26, 6) adjacency pair when its
//! 26-neighborhood holds exactly one 26-connected foreground component and
//! its 18-neighborhood holds exactly one 6-connected background component
//! that touches the center through a face. Deleting simple voxels never
//! splits, merges or creates components, cavities or tunnels.

use std::sync::OnceLock;

use crate::volume::{voxel_of, Dims, Mask3};

const CENTER: usize = 13;

#[inline]
fn cell(dx: isize, dy: isize, dz: isize) -> usize {
    ((dx + 1) + 3 * (dy + 1) + 9 * (dz + 1)) as usize
}

fn delta(c: usize) -> [isize; 3] {
    [(c % 3) as isize - 1, ((c / 3) % 3) as isize - 1, (c / 9) as isize - 1]
}

struct Adjacency {
    /// 26-adjacent cells within the 3×3×3 block, center excluded.
    n26: Vec<Vec<usize>>,
    /// 6-adjacent cells restricted to the 18-neighborhood.
    n6_in_18: Vec<Vec<usize>>,
}

fn in_n18(c: usize) -> bool {
    let d = delta(c);
    let m = d[0].abs() + d[1].abs() + d[2].abs();
    c != CENTER && m <= 2
}

fn adjacency() -> &'static Adjacency {
    static ADJ: OnceLock<Adjacency> = OnceLock::new();
    ADJ.get_or_init(|| {
        let mut n26 = vec![Vec::new(); 27];
        let mut n6_in_18 = vec![Vec::new(); 27];
        for a in 0..27 {
            for b in 0..27 {
                if a == b || a == CENTER || b == CENTER {
                    continue;
                }
                let (da, db) = (delta(a), delta(b));
                let diff: Vec<isize> = (0..3).map(|i| (da[i] - db[i]).abs()).collect();
                if diff.iter().all(|&d| d <= 1) {
                    n26[a].push(b);
                }
                if diff.iter().sum::<isize>() == 1 && in_n18(a) && in_n18(b) {
                    n6_in_18[a].push(b);
                }
            }
        }
        Adjacency { n26, n6_in_18 }
    })
}

/// Simple-point test on a 27-cell neighborhood (`true` = foreground).
pub fn is_simple(nb: &[bool; 27]) -> bool {
    let adj = adjacency();

    // Foreground: exactly one 26-component among the 26 neighbors.
    let mut seen = [false; 27];
    let mut fg_components = 0;
    for start in (0..27).filter(|&c| c != CENTER && nb[c]) {
        if seen[start] {
            continue;
        }
        fg_components += 1;
        if fg_components > 1 {
            return false;
        }
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(c) = stack.pop() {
            for &n in &adj.n26[c] {
                if nb[n] && !seen[n] {
                    seen[n] = true;
                    stack.push(n);
                }
            }
        }
    }
    if fg_components != 1 {
        return false;
    }

    // Background: exactly one 6-component in N18 that is face-adjacent to the center.
    let faces = [cell(-1, 0, 0), cell(1, 0, 0), cell(0, -1, 0), cell(0, 1, 0), cell(0, 0, -1), cell(0, 0, 1)];
    let mut seen = [false; 27];
    let mut bg_components = 0;
    for &start in faces.iter().filter(|&&c| !nb[c]) {
        if seen[start] {
            continue;
        }
        bg_components += 1;
        if bg_components > 1 {
            return false;
        }
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(c) = stack.pop() {
            for &n in &adj.n6_in_18[c] {
                if !nb[n] && !seen[n] {
                    seen[n] = true;
                    stack.push(n);
                }
            }
        }
    }
    bg_components == 1
}

fn neighborhood(data: &[bool], dims: Dims, i: usize) -> [bool; 27] {
    let v = voxel_of(dims, i);
    let mut nb = [false; 27];
    for (c, slot) in nb.iter_mut().enumerate() {
        let d = delta(c);
        let n: [isize; 3] = std::array::from_fn(|a| v[a] as isize + d[a]);
        if (0..3).all(|a| n[a] >= 0 && n[a] < dims[a] as isize) {
            *slot = data[n[0] as usize + dims[0] * (n[1] as usize + dims[1] * n[2] as usize)];
        }
    }
    nb
}

fn foreground_neighbors(nb: &[bool; 27]) -> usize {
    nb.iter().enumerate().filter(|&(c, &b)| c != CENTER && b).count()
}

/// Curve skeleton of a binary mask.
///
/// Repeats six directional sub-iterations (-x, +x, -y, +y, -z, +z) until
/// nothing changes. In each, border voxels open in that direction that are
/// simple and not curve endpoints are collected, then deleted one by one in
/// linear order after re-checking simplicity. Out-of-bounds is background.
pub fn skeletonize(mask: &Mask3) -> Mask3 {
    let dims = mask.dims();
    let mut data = mask.data().to_vec();
    let directions = [cell(-1, 0, 0), cell(1, 0, 0), cell(0, -1, 0), cell(0, 1, 0), cell(0, 0, -1), cell(0, 0, 1)];
    let mut active: Vec<usize> = (0..data.len()).filter(|&i| data[i]).collect();
    loop {
        let mut changed = false;
        for &dir in &directions {
            let candidates: Vec<usize> = active
                .iter()
                .copied()
                .filter(|&i| {
                    let nb = neighborhood(&data, dims, i);
                    !nb[dir] && foreground_neighbors(&nb) > 1 && is_simple(&nb)
                })
                .collect();
            for i in candidates {
                let nb = neighborhood(&data, dims, i);
                if foreground_neighbors(&nb) > 1 && is_simple(&nb) {
                    data[i] = false;
                    changed = true;
                }
            }
            active.retain(|&i| data[i]);
        }
        if !changed {
            break;
        }
    }
    Mask3::new(dims, data).expect("dims unchanged")
}

/// True when some 2×2×2 block is entirely foreground.
pub fn has_solid_block(mask: &Mask3) -> bool {
    let [nx, ny, nz] = mask.dims();
    let d = mask.data();
    let at = |x: usize, y: usize, z: usize| d[x + nx * (y + ny * z)];
    for z in 0..nz.saturating_sub(1) {
        for y in 0..ny.saturating_sub(1) {
            for x in 0..nx.saturating_sub(1) {
                if (0..8).all(|k| at(x + (k & 1), y + ((k >> 1) & 1), z + (k >> 2))) {
                    return true;
                }
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{connected_components, Connectivity};

    fn guarantees_hold(input: &Mask3, skel: &Mask3) {
        assert!(skel.data().iter().zip(input.data()).all(|(&s, &i)| !s || i), "not a subset");
        assert_eq!(
            connected_components(skel, Connectivity::TwentySix).num_components(),
            connected_components(input, Connectivity::TwentySix).num_components(),
            "component count changed"
        );
        assert!(!has_solid_block(skel), "skeleton is not thin");
    }

    #[test]
    fn isolated_and_interior_voxels_are_not_simple() {
        let mut nb = [false; 27];
        nb[CENTER] = true;
        assert!(!is_simple(&nb));
        let full = [true; 27];
        assert!(!is_simple(&full));
    }

    #[test]
    fn line_end_is_simple_line_middle_is_not() {
        let mut end = [false; 27];
        end[CENTER] = true;
        end[cell(1, 0, 0)] = true;
        assert!(is_simple(&end));
        let mut mid = end;
        mid[cell(-1, 0, 0)] = true;
        assert!(!is_simple(&mid));
    }

    #[test]
    fn thin_line_is_unchanged() {
        let voxels: Vec<_> = (2..12).map(|z| [4, 4, z]).collect();
        let m = Mask3::from_voxels([9, 9, 14], &voxels);
        assert_eq!(skeletonize(&m), m);
    }

    #[test]
    fn empty_stays_empty() {
        let m = Mask3::empty([5, 5, 5]);
        assert_eq!(skeletonize(&m), m);
    }

    #[test]
    fn solid_bar_thins_to_a_curve() {
        let m = Mask3::from_fn([7, 7, 26], |[x, y, z]| (2..5).contains(&x) && (2..5).contains(&y) && (3..23).contains(&z));
        let s = skeletonize(&m);
        guarantees_hold(&m, &s);
        let n = s.count();
        assert!((15..=26).contains(&n), "skeleton has {n} voxels");
    }

    #[test]
    fn blobs_and_tubes_keep_guarantees() {
        let ball = Mask3::from_fn([15, 15, 15], |[x, y, z]| {
            let d2 = (x as f32 - 7.0).powi(2) + (y as f32 - 7.0).powi(2) + (z as f32 - 7.0).powi(2);
            d2 <= 25.0
        });
        let s = skeletonize(&ball);
        guarantees_hold(&ball, &s);
        assert!(s.count() >= 1);

        let torus = Mask3::from_fn([20, 20, 8], |[x, y, z]| {
            let r = ((x as f32 - 9.5).powi(2) + (y as f32 - 9.5).powi(2)).sqrt();
            (r - 6.0).powi(2) + (z as f32 - 3.5).powi(2) <= 4.0
        });
        let s = skeletonize(&torus);
        guarantees_hold(&torus, &s);
        // The loop cannot be cut open.
        assert!(s.count() >= 20);

        let oblique = Mask3::from_fn([24, 24, 24], |[x, y, z]| {
            let p = [x as f32, y as f32, z as f32];
            let t = (p[0] + p[1] + p[2]) / 3.0;
            let d2: f32 = p.iter().map(|c| (c - t).powi(2)).sum();
            d2 <= 4.0 && (3.0..21.0).contains(&t)
        });
        let s = skeletonize(&oblique);
        guarantees_hold(&oblique, &s);
    }

    #[test]
    fn random_masks_keep_guarantees() {
        for seed in 0..8 {
            let m = crate::preprocess::label::tests::random_mask([12, 12, 12], 0.45, seed);
            guarantees_hold(&m, &skeletonize(&m));
        }
    }
}
