//! Layer kernels with explicit backward passes.
//!
//! The 3×3×3 convolution works on a zero-padded copy of each sample. With
//! the padded grid flattened, the input seen by kernel tap `k` at output
//! position `q` is simply `q + offset(k)`, so every tap becomes one strided
//! matrix product over the whole grid and no im2col buffer is needed.
//! Outputs computed at padding positions are discarded.

use super::scalar::{gemm, View};
use super::{Real, Tensor5};
use crate::error::{shape_err, Result};

const TAPS: usize = 27;
const CHUNK: usize = 4096;

#[derive(Clone, Copy, Debug)]
struct PadGeom {
    p: [usize; 3],
    plane: usize,
    total: usize,
    /// First padded index whose 27 taps all stay in the buffer.
    q0: usize,
    /// Number of padded positions evaluated.
    len: usize,
}

impl PadGeom {
    fn new(s: [usize; 3]) -> Self {
        let p = [s[0] + 2, s[1] + 2, s[2] + 2];
        let plane = p[0] * p[1];
        let total = plane * p[2];
        let q0 = plane + p[0] + 1;
        Self {
            p,
            plane,
            total,
            q0,
            len: total - 2 * q0,
        }
    }

    /// Column blocks of the evaluated range, sized to stay cache resident.
    fn chunks(&self) -> impl Iterator<Item = (usize, usize)> {
        let len = self.len;
        (0..len).step_by(CHUNK).map(move |c0| (c0, CHUNK.min(len - c0)))
    }

    fn tap_base(&self, k: usize) -> usize {
        let dx = (k % 3) as isize - 1;
        let dy = ((k / 3) % 3) as isize - 1;
        let dz = (k / 9) as isize - 1;
        (self.q0 as isize + dx + dy * self.p[0] as isize + dz * self.plane as isize) as usize
    }

    /// Calls `f(interior_linear, padded_linear)` for every voxel.
    fn for_each_interior(&self, s: [usize; 3], mut f: impl FnMut(usize, usize)) {
        for z in 0..s[2] {
            for y in 0..s[1] {
                let src = s[0] * (y + s[1] * z);
                let dst = 1 + self.p[0] * ((y + 1) + self.p[1] * (z + 1));
                for x in 0..s[0] {
                    f(src + x, dst + x);
                }
            }
        }
    }
}

fn pad<T: Real>(x: &[T], channels: usize, s: [usize; 3], g: &PadGeom) -> Vec<T> {
    let n = s[0] * s[1] * s[2];
    let mut out = vec![T::zero(); channels * g.total];
    for c in 0..channels {
        let src = &x[c * n..(c + 1) * n];
        let dst = &mut out[c * g.total..(c + 1) * g.total];
        for z in 0..s[2] {
            for y in 0..s[1] {
                let a = s[0] * (y + s[1] * z);
                let b = 1 + g.p[0] * ((y + 1) + g.p[1] * (z + 1));
                dst[b..b + s[0]].copy_from_slice(&src[a..a + s[0]]);
            }
        }
    }
    out
}

fn conv_in_channels(w_len: usize, out_c: usize) -> Result<usize> {
    if out_c == 0 || !w_len.is_multiple_of(out_c * TAPS) {
        return shape_err(format!("conv weight of {w_len} values does not fit {out_c} output channels"));
    }
    Ok(w_len / (out_c * TAPS))
}

/// Same-padded 3×3×3 cross-correlation, stride 1.
///
/// `w` is laid out `(out_c, in_c, kz, ky, kx)` and tap `(kx, ky, kz)` reads
/// input voxel `(x + kx - 1, y + ky - 1, z + kz - 1)`.
pub fn conv3d<T: Real>(x: &Tensor5<T>, w: &[T], b: &[T]) -> Result<Tensor5<T>> {
    let out_c = b.len();
    let in_c = conv_in_channels(w.len(), out_c)?;
    if x.channels() != in_c {
        return shape_err(format!("conv3d expects {in_c} input channels, got {}", x.channels()));
    }
    let s = x.spatial();
    let n = x.voxels();
    let g = PadGeom::new(s);
    let mut out = Tensor5::zeros([x.batch(), out_c, s[0], s[1], s[2]]);
    for bi in 0..x.batch() {
        let xp = pad(x.sample(bi), in_c, s, &g);
        let mut acc = vec![T::zero(); out_c * g.len];
        for (c0, cn) in g.chunks() {
            for k in 0..TAPS {
                gemm(
                    out_c, in_c, cn,
                    w, View::new(k, in_c * TAPS, TAPS),
                    &xp, View::new(g.tap_base(k) + c0, g.total, 1),
                    T::one(),
                    &mut acc, View::new(c0, g.len, 1),
                );
            }
        }
        let y = out.sample_mut(bi);
        for (oc, &bias) in b.iter().enumerate() {
            let row = &acc[oc * g.len..(oc + 1) * g.len];
            let dst = &mut y[oc * n..(oc + 1) * n];
            g.for_each_interior(s, |i, q| dst[i] = row[q - g.q0] + bias);
        }
    }
    Ok(out)
}

/// Gradients of [`conv3d`]; `dw` and `db` are accumulated into.
pub fn conv3d_backward<T: Real>(
    x: &Tensor5<T>,
    w: &[T],
    dy: &Tensor5<T>,
    dw: &mut [T],
    db: &mut [T],
    need_dx: bool,
) -> Result<Option<Tensor5<T>>> {
    let out_c = db.len();
    let in_c = conv_in_channels(w.len(), out_c)?;
    if dy.channels() != out_c || dy.spatial() != x.spatial() || dy.batch() != x.batch() {
        return shape_err(format!("conv3d gradient {:?} does not match input {:?}", dy.shape(), x.shape()));
    }
    let s = x.spatial();
    let n = x.voxels();
    let g = PadGeom::new(s);
    let mut dx = need_dx.then(|| Tensor5::zeros(x.shape()));
    for bi in 0..x.batch() {
        let xp = pad(x.sample(bi), in_c, s, &g);
        let dys = dy.sample(bi);
        let mut dyp = vec![T::zero(); out_c * g.len];
        for oc in 0..out_c {
            let src = &dys[oc * n..(oc + 1) * n];
            db[oc] = db[oc] + src.iter().fold(T::zero(), |a, &v| a + v);
            let row = &mut dyp[oc * g.len..(oc + 1) * g.len];
            g.for_each_interior(s, |i, q| row[q - g.q0] = src[i]);
        }
        for (c0, cn) in g.chunks() {
            for k in 0..TAPS {
                gemm(
                    out_c, cn, in_c,
                    &dyp, View::new(c0, g.len, 1),
                    &xp, View::new(g.tap_base(k) + c0, 1, g.total),
                    T::one(),
                    dw, View::new(k, in_c * TAPS, TAPS),
                );
            }
        }
        if let Some(dx) = dx.as_mut() {
            let mut dxp = vec![T::zero(); in_c * g.total];
            for (c0, cn) in g.chunks() {
                for k in 0..TAPS {
                    gemm(
                        in_c, out_c, cn,
                        w, View::new(k, TAPS, in_c * TAPS),
                        &dyp, View::new(c0, g.len, 1),
                        T::one(),
                        &mut dxp, View::new(g.tap_base(k) + c0, g.total, 1),
                    );
                }
            }
            let dst = dx.sample_mut(bi);
            for ic in 0..in_c {
                let row = &dxp[ic * g.total..(ic + 1) * g.total];
                let out = &mut dst[ic * n..(ic + 1) * n];
                g.for_each_interior(s, |i, q| out[i] = row[q]);
            }
        }
    }
    Ok(dx)
}

/// 1×1×1 convolution; `w` is `(out_c, in_c)`.
pub fn pointwise<T: Real>(x: &Tensor5<T>, w: &[T], b: &[T]) -> Result<Tensor5<T>> {
    let out_c = b.len();
    let in_c = x.channels();
    if w.len() != out_c * in_c {
        return shape_err(format!("pointwise weight has {} values, expected {}", w.len(), out_c * in_c));
    }
    let n = x.voxels();
    let s = x.spatial();
    let mut out = Tensor5::zeros([x.batch(), out_c, s[0], s[1], s[2]]);
    for bi in 0..x.batch() {
        let y = out.sample_mut(bi);
        for (oc, &bias) in b.iter().enumerate() {
            y[oc * n..(oc + 1) * n].iter_mut().for_each(|v| *v = bias);
        }
        gemm(
            out_c, in_c, n,
            w, View::new(0, in_c, 1),
            x.sample(bi), View::new(0, n, 1),
            T::one(),
            y, View::new(0, n, 1),
        );
    }
    Ok(out)
}

pub fn pointwise_backward<T: Real>(x: &Tensor5<T>, w: &[T], dy: &Tensor5<T>, dw: &mut [T], db: &mut [T]) -> Tensor5<T> {
    let out_c = db.len();
    let in_c = x.channels();
    let n = x.voxels();
    let mut dx = Tensor5::zeros(x.shape());
    for bi in 0..x.batch() {
        let dys = dy.sample(bi);
        for oc in 0..out_c {
            db[oc] = db[oc] + dys[oc * n..(oc + 1) * n].iter().fold(T::zero(), |a, &v| a + v);
        }
        gemm(
            out_c, n, in_c,
            dys, View::new(0, n, 1),
            x.sample(bi), View::new(0, 1, n),
            T::one(),
            dw, View::new(0, in_c, 1),
        );
        gemm(
            in_c, out_c, n,
            w, View::new(0, 1, in_c),
            dys, View::new(0, n, 1),
            T::zero(),
            dx.sample_mut(bi), View::new(0, n, 1),
        );
    }
    dx
}

pub fn relu_inplace<T: Real>(x: &mut Tensor5<T>) {
    x.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
}

pub fn relu<T: Real>(x: &Tensor5<T>) -> Tensor5<T> {
    let mut y = x.clone();
    relu_inplace(&mut y);
    y
}

/// Zeroes `grad` wherever the ReLU output is not positive.
pub fn relu_backward_inplace<T: Real>(out: &Tensor5<T>, grad: &mut Tensor5<T>) {
    for (g, &o) in grad.data_mut().iter_mut().zip(out.data()) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2×2×2 max pooling, stride 2.
///
/// Returns the pooled tensor and, for each output, the flat input index of
/// its maximum. Ties go to the lowest linear index in the window.
pub fn maxpool3d<T: Real>(x: &Tensor5<T>) -> Result<(Tensor5<T>, Vec<u32>)> {
    let s = x.spatial();
    if s.iter().any(|&d| d % 2 != 0) {
        return shape_err(format!("max pooling needs even spatial dims, got {s:?}"));
    }
    let h = [s[0] / 2, s[1] / 2, s[2] / 2];
    let mut out = Tensor5::zeros([x.batch(), x.channels(), h[0], h[1], h[2]]);
    let mut arg = vec![0u32; out.data().len()];
    let n_in = x.voxels();
    let n_out = h[0] * h[1] * h[2];
    for plane in 0..x.batch() * x.channels() {
        let src = &x.data()[plane * n_in..(plane + 1) * n_in];
        for z in 0..h[2] {
            for y in 0..h[1] {
                for xo in 0..h[0] {
                    let o = plane * n_out + xo + h[0] * (y + h[1] * z);
                    let mut best = usize::MAX;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let i = (2 * xo + dx) + s[0] * ((2 * y + dy) + s[1] * (2 * z + dz));
                                if best == usize::MAX || src[i] > src[best] {
                                    best = i;
                                }
                            }
                        }
                    }
                    out.data_mut()[o] = src[best];
                    arg[o] = (plane * n_in + best) as u32;
                }
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool3d_backward<T: Real>(input_shape: [usize; 5], arg: &[u32], dy: &Tensor5<T>) -> Tensor5<T> {
    let mut dx = Tensor5::zeros(input_shape);
    for (&a, &g) in arg.iter().zip(dy.data()) {
        let e = &mut dx.data_mut()[a as usize];
        *e = *e + g;
    }
    dx
}

const UP_TAPS: usize = 8;

/// Transposed convolution with a 2×2×2 kernel and stride 2.
///
/// `w` is laid out `(in_c, out_c, kz, ky, kx)`; input voxel `(x, y, z)`
/// writes output voxel `(2x + kx, 2y + ky, 2z + kz)`.
pub fn upconv3d<T: Real>(x: &Tensor5<T>, w: &[T], b: &[T]) -> Result<Tensor5<T>> {
    let out_c = b.len();
    let in_c = x.channels();
    if w.len() != in_c * out_c * UP_TAPS {
        return shape_err(format!(
            "upconv weight has {} values, expected {in_c}×{out_c}×8",
            w.len()
        ));
    }
    let s = x.spatial();
    let n = x.voxels();
    let so = [2 * s[0], 2 * s[1], 2 * s[2]];
    let no = 8 * n;
    let mut out = Tensor5::zeros([x.batch(), out_c, so[0], so[1], so[2]]);
    let mut tmp = vec![T::zero(); out_c * n];
    for bi in 0..x.batch() {
        let y = out.sample_mut(bi);
        for o in 0..UP_TAPS {
            gemm(
                out_c, in_c, n,
                w, View::new(o, UP_TAPS, out_c * UP_TAPS),
                x.sample(bi), View::new(0, n, 1),
                T::zero(),
                &mut tmp, View::new(0, n, 1),
            );
            let (ax, ay, az) = (o & 1, (o >> 1) & 1, o >> 2);
            for oc in 0..out_c {
                let src = &tmp[oc * n..(oc + 1) * n];
                let dst = &mut y[oc * no..(oc + 1) * no];
                for z in 0..s[2] {
                    for yy in 0..s[1] {
                        for xx in 0..s[0] {
                            let i = xx + s[0] * (yy + s[1] * z);
                            let j = (2 * xx + ax) + so[0] * ((2 * yy + ay) + so[1] * (2 * z + az));
                            dst[j] = src[i] + b[oc];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`upconv3d`] with respect to its input, plus weight and bias gradients.
pub fn upconv3d_backward<T: Real>(x: &Tensor5<T>, w: &[T], dy: &Tensor5<T>, dw: &mut [T], db: &mut [T]) -> Tensor5<T> {
    let out_c = db.len();
    let in_c = x.channels();
    let s = x.spatial();
    let n = x.voxels();
    let so = [2 * s[0], 2 * s[1], 2 * s[2]];
    let no = 8 * n;
    let mut dx = Tensor5::zeros(x.shape());
    let mut gathered = vec![T::zero(); out_c * n];
    for bi in 0..x.batch() {
        let dys = dy.sample(bi);
        for oc in 0..out_c {
            db[oc] = db[oc] + dys[oc * no..(oc + 1) * no].iter().fold(T::zero(), |a, &v| a + v);
        }
        for o in 0..UP_TAPS {
            let (ax, ay, az) = (o & 1, (o >> 1) & 1, o >> 2);
            for oc in 0..out_c {
                let src = &dys[oc * no..(oc + 1) * no];
                let dst = &mut gathered[oc * n..(oc + 1) * n];
                for z in 0..s[2] {
                    for yy in 0..s[1] {
                        for xx in 0..s[0] {
                            let i = xx + s[0] * (yy + s[1] * z);
                            let j = (2 * xx + ax) + so[0] * ((2 * yy + ay) + so[1] * (2 * z + az));
                            dst[i] = src[j];
                        }
                    }
                }
            }
            gemm(
                in_c, out_c, n,
                w, View::new(o, out_c * UP_TAPS, UP_TAPS),
                &gathered, View::new(0, n, 1),
                T::one(),
                dx.sample_mut(bi), View::new(0, n, 1),
            );
            gemm(
                in_c, n, out_c,
                x.sample(bi), View::new(0, n, 1),
                &gathered, View::new(0, 1, n),
                T::one(),
                dw, View::new(o, out_c * UP_TAPS, UP_TAPS),
            );
        }
    }
    dx
}

/// Concatenates two tensors along the channel axis, `a` first.
pub fn concat_channels<T: Real>(a: &Tensor5<T>, b: &Tensor5<T>) -> Result<Tensor5<T>> {
    if a.batch() != b.batch() || a.spatial() != b.spatial() {
        return shape_err(format!("cannot concatenate {:?} and {:?}", a.shape(), b.shape()));
    }
    let s = a.spatial();
    let mut out = Vec::with_capacity(a.data().len() + b.data().len());
    for bi in 0..a.batch() {
        out.extend_from_slice(a.sample(bi));
        out.extend_from_slice(b.sample(bi));
    }
    Tensor5::from_vec([a.batch(), a.channels() + b.channels(), s[0], s[1], s[2]], out)
}

/// Splits a channel gradient back into the first `ca` channels and the rest.
pub fn split_channels<T: Real>(g: &Tensor5<T>, ca: usize) -> (Tensor5<T>, Tensor5<T>) {
    let s = g.spatial();
    let n = g.voxels();
    let cb = g.channels() - ca;
    let mut a = Vec::with_capacity(g.batch() * ca * n);
    let mut b = Vec::with_capacity(g.batch() * cb * n);
    for bi in 0..g.batch() {
        let smp = g.sample(bi);
        a.extend_from_slice(&smp[..ca * n]);
        b.extend_from_slice(&smp[ca * n..]);
    }
    (
        Tensor5::from_vec([g.batch(), ca, s[0], s[1], s[2]], a).unwrap(),
        Tensor5::from_vec([g.batch(), cb, s[0], s[1], s[2]], b).unwrap(),
    )
}

pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: [usize; 5], rng: &mut ChaCha8Rng) -> Tensor5<f64> {
        let n = shape.iter().product();
        Tensor5::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Six nested loops straight from the definition.
    fn naive_conv(x: &Tensor5<f64>, w: &[f64], b: &[f64]) -> Tensor5<f64> {
        let [bn, ic, nx, ny, nz] = x.shape();
        let oc = b.len();
        let mut y = Tensor5::zeros([bn, oc, nx, ny, nz]);
        let xi = |bb: usize, c: usize, px: isize, py: isize, pz: isize| {
            if px < 0 || py < 0 || pz < 0 || px >= nx as isize || py >= ny as isize || pz >= nz as isize {
                0.0
            } else {
                x.data()[(((bb * ic + c) * nz + pz as usize) * ny + py as usize) * nx + px as usize]
            }
        };
        for bb in 0..bn {
            for o in 0..oc {
                for z in 0..nz {
                    for yy in 0..ny {
                        for xx in 0..nx {
                            let mut acc = b[o];
                            for c in 0..ic {
                                for kz in 0..3 {
                                    for ky in 0..3 {
                                        for kx in 0..3 {
                                            let wv = w[((o * ic + c) * 3 + kz) * 9 + ky * 3 + kx];
                                            acc += wv
                                                * xi(
                                                    bb,
                                                    c,
                                                    xx as isize + kx as isize - 1,
                                                    yy as isize + ky as isize - 1,
                                                    z as isize + kz as isize - 1,
                                                );
                                        }
                                    }
                                }
                            }
                            y.data_mut()[(((bb * oc + o) * nz + z) * ny + yy) * nx + xx] = acc;
                        }
                    }
                }
            }
        }
        y
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor([1, 1, 5, 4, 3], &mut rng).cast::<f32>();
        let mut w = vec![0.0f32; 27];
        w[13] = 1.0;
        let y = conv3d(&x, &w, &[0.0]).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_counts_in_bounds_taps() {
        let x = Tensor5::from_vec([1, 1, 4, 4, 4], vec![2.0f32; 64]).unwrap();
        let y = conv3d(&x, &[1.0; 27], &[0.0]).unwrap();
        let at = |v: [usize; 3]| y.data()[v[0] + 4 * (v[1] + 4 * v[2])];
        assert_eq!(at([1, 1, 1]), 54.0);
        assert_eq!(at([0, 0, 0]), 16.0);
        assert_eq!(at([0, 1, 1]), 36.0);
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for shape in [[1, 2, 4, 4, 4], [2, 3, 5, 3, 4], [1, 1, 1, 1, 1]] {
            let x = random_tensor(shape, &mut rng);
            let oc = 3;
            let w = random_vec(oc * shape[1] * 27, &mut rng);
            let b = random_vec(oc, &mut rng);
            let fast = conv3d(&x, &w, &b).unwrap();
            let slow = naive_conv(&x, &w, &b);
            for (a, e) in fast.data().iter().zip(slow.data()) {
                assert!((a - e).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn conv_channel_mismatch() {
        let x = Tensor5::<f32>::zeros([1, 2, 4, 4, 4]);
        assert!(conv3d(&x, &[0.0; 27], &[0.0]).is_err());
    }

    #[test]
    fn conv_backward_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = [2, 3, 4, 5, 3];
        let oc = 2;
        let x = random_tensor(shape, &mut rng);
        let w = random_vec(oc * 3 * 27, &mut rng);
        let zero_b = vec![0.0; oc];
        let dy = random_tensor([2, oc, 4, 5, 3], &mut rng);
        let y = conv3d(&x, &w, &zero_b).unwrap();
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; oc];
        let dx = conv3d_backward(&x, &w, &dy, &mut dw, &mut db, true).unwrap().unwrap();
        // <conv(x), dy> = <x, conv^T(dy)>.
        let lhs = y.dot(&dy);
        let rhs = x.dot(&dx);
        assert!((lhs - rhs).abs() < 1e-6 * (1.0 + lhs.abs()));
        // Linear in w as well: <conv_w(x), dy> = <w, dW>.
        let lw: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
        assert!((lhs - lw).abs() < 1e-6 * (1.0 + lhs.abs()));
        let sum_dy: Vec<f64> = (0..oc)
            .map(|o| (0..2).map(|bi| dy.sample(bi)[o * 60..(o + 1) * 60].iter().sum::<f64>()).sum())
            .collect();
        for o in 0..oc {
            assert!((db[o] - sum_dy[o]).abs() < 1e-9);
        }
    }

    #[test]
    fn relu_values_and_mask() {
        let x = Tensor5::from_vec([1, 1, 3, 1, 1], vec![-1.0f32, 0.0, 2.0]).unwrap();
        let y = relu(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let mut g = Tensor5::from_vec([1, 1, 3, 1, 1], vec![1.0f32; 3]).unwrap();
        relu_backward_inplace(&y, &mut g);
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
        let pos = Tensor5::from_vec([1, 1, 2, 1, 1], vec![0.5f32, 3.0]).unwrap();
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn maxpool_block_and_ties() {
        let x = Tensor5::from_vec([1, 1, 2, 2, 2], (0..8).map(|v| v as f32).collect()).unwrap();
        let (y, arg) = maxpool3d(&x).unwrap();
        assert_eq!(y.data(), &[7.0]);
        assert_eq!(arg, vec![7]);

        let c = Tensor5::from_vec([1, 1, 4, 4, 4], vec![3.0f32; 64]).unwrap();
        let (y, arg) = maxpool3d(&c).unwrap();
        assert!(y.data().iter().all(|&v| v == 3.0));
        let g = maxpool3d_backward(c.shape(), &arg, &Tensor5::from_vec([1, 1, 2, 2, 2], vec![1.0f32; 8]).unwrap());
        for z in 0..4 {
            for yy in 0..4 {
                for xx in 0..4 {
                    let first = xx % 2 == 0 && yy % 2 == 0 && z % 2 == 0;
                    assert_eq!(g.data()[xx + 4 * (yy + 4 * z)], if first { 1.0 } else { 0.0 });
                }
            }
        }
        assert!(maxpool3d(&Tensor5::<f32>::zeros([1, 1, 3, 2, 2])).is_err());
    }

    #[test]
    fn maxpool_matches_window_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_tensor([1, 1, 4, 4, 4], &mut rng);
        let (y, _) = maxpool3d(&x).unwrap();
        for z in 0..2 {
            for yy in 0..2 {
                for xx in 0..2 {
                    let mut m = f64::NEG_INFINITY;
                    for d in 0..8 {
                        let (dx, dy, dz) = (d & 1, (d >> 1) & 1, d >> 2);
                        m = m.max(x.data()[(2 * xx + dx) + 4 * ((2 * yy + dy) + 4 * (2 * z + dz))]);
                    }
                    assert_eq!(y.data()[xx + 2 * (yy + 2 * z)], m);
                }
            }
        }
    }

    #[test]
    fn upconv_single_window_and_linearity() {
        let x = Tensor5::from_vec([1, 1, 1, 1, 1], vec![2.5f32]).unwrap();
        let y = upconv3d(&x, &[1.0; 8], &[0.0]).unwrap();
        assert_eq!(y.shape(), [1, 1, 2, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 2.5));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor([1, 3, 2, 3, 2], &mut rng);
        let w = random_vec(3 * 2 * 8, &mut rng);
        let y1 = upconv3d(&x, &w, &[0.0, 0.0]).unwrap();
        let y2 = upconv3d(&x.map(|v| 2.0 * v), &w, &[0.0, 0.0]).unwrap();
        for (a, b) in y1.data().iter().zip(y2.data()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn upconv_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_tensor([2, 3, 2, 3, 2], &mut rng);
        let w = random_vec(3 * 4 * 8, &mut rng);
        let y = upconv3d(&x, &w, &[0.0; 4]).unwrap();
        let g = random_tensor(y.shape(), &mut rng);
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; 4];
        let dx = upconv3d_backward(&x, &w, &g, &mut dw, &mut db);
        let lhs = y.dot(&g);
        assert!((lhs - x.dot(&dx)).abs() < 1e-6 * (1.0 + lhs.abs()));
        let lw: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
        assert!((lhs - lw).abs() < 1e-6 * (1.0 + lhs.abs()));
    }

    #[test]
    fn pointwise_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_tensor([2, 4, 3, 2, 2], &mut rng);
        let w = random_vec(3 * 4, &mut rng);
        let y = pointwise(&x, &w, &[0.0; 3]).unwrap();
        let g = random_tensor(y.shape(), &mut rng);
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; 3];
        let dx = pointwise_backward(&x, &w, &g, &mut dw, &mut db);
        let lhs = y.dot(&g);
        assert!((lhs - x.dot(&dx)).abs() < 1e-6 * (1.0 + lhs.abs()));
        let lw: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
        assert!((lhs - lw).abs() < 1e-6 * (1.0 + lhs.abs()));
    }

    #[test]
    fn maxpool_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_tensor([1, 2, 4, 2, 4], &mut rng);
        let (y, arg) = maxpool3d(&x).unwrap();
        let g = random_tensor(y.shape(), &mut rng);
        let dx = maxpool3d_backward(x.shape(), &arg, &g);
        // Pooling is linear once the argmax pattern is fixed.
        assert!((y.dot(&g) - x.dot(&dx)).abs() < 1e-12);
    }

    #[test]
    fn concat_then_split_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_tensor([2, 2, 2, 2, 2], &mut rng);
        let b = random_tensor([2, 3, 2, 2, 2], &mut rng);
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.channels(), 5);
        let (a2, b2) = split_channels(&c, 2);
        assert_eq!(a2, a);
        assert_eq!(b2, b);
    }
}
