//! Connected-component labeling by union-find over a raster scan.

use crate::error::{arg_err, Result};
use crate::volume::{linear_index, voxel_of, Dims, Mask3};

/// Voxel adjacency used for components.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Connectivity {
    /// Face neighbors only.
    Six,
    /// Face, edge and corner neighbors.
    TwentySix,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Result<Self> {
        match n {
            6 => Ok(Connectivity::Six),
            26 => Ok(Connectivity::TwentySix),
            other => arg_err(format!("connectivity must be 6 or 26, got {other}")),
        }
    }

    /// Neighbor offsets `(dx, dy, dz)`.
    pub fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dz in -1..=1isize {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Connectivity::Six => manhattan == 1,
                        Connectivity::TwentySix => manhattan > 0,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }

    /// Offsets that precede the center in linear order.
    fn backward_offsets(self) -> Vec<[isize; 3]> {
        self.offsets()
            .into_iter()
            .filter(|d| (d[2], d[1], d[0]) < (0, 0, 0))
            .collect()
    }
}

/// Labels `1..=K` ordered by decreasing component size; 0 is background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelField {
    pub dims: Dims,
    pub labels: Vec<u32>,
    /// `sizes[k - 1]` is the voxel count of label `k`.
    pub sizes: Vec<usize>,
}

impl LabelField {
    pub fn num_components(&self) -> usize {
        self.sizes.len()
    }

    pub fn size(&self, label: u32) -> usize {
        self.sizes[label as usize - 1]
    }

    /// Mask of all voxels whose label is in `1..=k`.
    pub fn mask_of_first(&self, k: usize) -> Mask3 {
        let data = self
            .labels
            .iter()
            .map(|&l| l != 0 && (l as usize) <= k)
            .collect();
        Mask3::new(self.dims, data).expect("label field dims are consistent")
    }
}

fn find(parent: &mut [u32], mut a: u32) -> u32 {
    while parent[a as usize] != a {
        let p = parent[a as usize];
        parent[a as usize] = parent[p as usize];
        a = p;
    }
    a
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        // Keep the smaller provisional label as root so roots track first voxels.
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

pub fn connected_components(mask: &Mask3, conn: Connectivity) -> LabelField {
    let dims = mask.dims();
    let back = conn.backward_offsets();
    let mut prov = vec![0u32; mask.data().len()];
    // parent[0] is unused; provisional labels start at 1.
    let mut parent: Vec<u32> = vec![0];
    for (i, &fg) in mask.data().iter().enumerate() {
        if !fg {
            continue;
        }
        let v = voxel_of(dims, i);
        let mut current = 0u32;
        for d in &back {
            let n: [isize; 3] = std::array::from_fn(|a| v[a] as isize + d[a]);
            if (0..3).any(|a| n[a] < 0 || n[a] >= dims[a] as isize) {
                continue;
            }
            let j = linear_index(dims, [n[0] as usize, n[1] as usize, n[2] as usize]);
            let l = prov[j];
            if l == 0 {
                continue;
            }
            if current == 0 {
                current = l;
            } else {
                union(&mut parent, current, l);
            }
        }
        if current == 0 {
            current = parent.len() as u32;
            parent.push(current);
        }
        prov[i] = current;
    }

    // Roots are created in scan order, so a root's id orders components by first voxel.
    let mut root_size = vec![0usize; parent.len()];
    for l in prov.iter_mut().filter(|l| **l != 0) {
        *l = find(&mut parent, *l);
        root_size[*l as usize] += 1;
    }
    let mut roots: Vec<u32> = (1..parent.len() as u32).filter(|&r| root_size[r as usize] > 0).collect();
    roots.sort_by(|&a, &b| root_size[b as usize].cmp(&root_size[a as usize]).then(a.cmp(&b)));
    let mut relabel = vec![0u32; parent.len()];
    for (k, &r) in roots.iter().enumerate() {
        relabel[r as usize] = k as u32 + 1;
    }
    LabelField {
        dims,
        labels: prov.iter().map(|&l| relabel[l as usize]).collect(),
        sizes: roots.iter().map(|&r| root_size[r as usize]).collect(),
    }
}

/// Union of the `k` largest components.
pub fn keep_largest(mask: &Mask3, k: usize, conn: Connectivity) -> Result<Mask3> {
    if k == 0 {
        return arg_err("keep_largest needs k >= 1");
    }
    Ok(connected_components(mask, conn).mask_of_first(k))
}
