//! Closed-form eigenvalues of a symmetric 3×3 matrix.

use crate::error::{arg_err, Result};

/// Upper triangle of a symmetric 3×3 matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Sym3 {
    pub xx: f64,
    pub yy: f64,
    pub zz: f64,
    pub xy: f64,
    pub xz: f64,
    pub yz: f64,
}

impl Sym3 {
    pub fn diag(a: f64, b: f64, c: f64) -> Self {
        Sym3 {
            xx: a,
            yy: b,
            zz: c,
            ..Default::default()
        }
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy + self.zz
    }

    pub fn det(&self) -> f64 {
        self.xx * (self.yy * self.zz - self.yz * self.yz) - self.xy * (self.xy * self.zz - self.yz * self.xz)
            + self.xz * (self.xy * self.yz - self.yy * self.xz)
    }

    pub fn frobenius(&self) -> f64 {
        (self.xx * self.xx
            + self.yy * self.yy
            + self.zz * self.zz
            + 2.0 * (self.xy * self.xy + self.xz * self.xz + self.yz * self.yz))
            .sqrt()
    }

    fn is_finite(&self) -> bool {
        [self.xx, self.yy, self.zz, self.xy, self.xz, self.yz]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Eigenvalues ordered by ascending magnitude, `|l1| <= |l2| <= |l3|`.
pub fn eig_symmetric3(h: &Sym3) -> Result<[f64; 3]> {
    if !h.is_finite() {
        return arg_err("non-finite Hessian entry");
    }
    let mut l = eigenvalues_unordered(h);
    l.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    Ok(l)
}

/// Trigonometric solution of the characteristic cubic.
pub(crate) fn eigenvalues_unordered(h: &Sym3) -> [f64; 3] {
    let off = h.xy * h.xy + h.xz * h.xz + h.yz * h.yz;
    if off == 0.0 {
        return [h.xx, h.yy, h.zz];
    }
    let q = h.trace() / 3.0;
    let (a, b, c) = (h.xx - q, h.yy - q, h.zz - q);
    let p2 = a * a + b * b + c * c + 2.0 * off;
    let p = (p2 / 6.0).sqrt();
    if p == 0.0 {
        return [q; 3];
    }
    let shifted = Sym3 {
        xx: a / p,
        yy: b / p,
        zz: c / p,
        xy: h.xy / p,
        xz: h.xz / p,
        yz: h.yz / p,
    };
    let r = (shifted.det() / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let hi = q + 2.0 * p * phi.cos();
    let lo = q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos();
    let mid = 3.0 * q - hi - lo;
    [hi, mid, lo]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: [f64; 3], b: [f64; 3]) -> bool {
        a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-6 * (1.0 + y.abs()))
    }

    #[test]
    fn zero_matrix() {
        assert_eq!(eig_symmetric3(&Sym3::default()).unwrap(), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn diagonal_is_ordered_by_magnitude() {
        let l = eig_symmetric3(&Sym3::diag(-4.0, 1.0, -4.0)).unwrap();
        assert_eq!(l, [1.0, -4.0, -4.0]);
    }

    #[test]
    fn block_matrix_by_hand() {
        // [[2,1,0],[1,2,0],[0,0,5]]: the 2×2 block has eigenvalues 1 and 3.
        let h = Sym3 {
            xx: 2.0,
            yy: 2.0,
            zz: 5.0,
            xy: 1.0,
            ..Default::default()
        };
        assert!(close(eig_symmetric3(&h).unwrap(), [1.0, 3.0, 5.0]));
    }

    #[test]
    fn non_finite_is_rejected() {
        let h = Sym3::diag(f64::NAN, 0.0, 0.0);
        assert!(eig_symmetric3(&h).is_err());
    }

    fn sym() -> impl Strategy<Value = Sym3> {
        prop::array::uniform6(-10.0f64..10.0).prop_map(|v| Sym3 {
            xx: v[0],
            yy: v[1],
            zz: v[2],
            xy: v[3],
            xz: v[4],
            yz: v[5],
        })
    }

    /// det(h - l I) expanded directly.
    fn char_poly(h: &Sym3, l: f64) -> f64 {
        Sym3 {
            xx: h.xx - l,
            yy: h.yy - l,
            zz: h.zz - l,
            ..*h
        }
        .det()
    }

    proptest! {
        #[test]
        fn roots_of_characteristic_polynomial(h in sym()) {
            let l = eig_symmetric3(&h).unwrap();
            let norm = h.frobenius();
            for &li in &l {
                prop_assert!(char_poly(&h, li).abs() < 1e-5 * (1.0 + norm), "residual at {li}");
            }
            prop_assert!(l[0].abs() <= l[1].abs() && l[1].abs() <= l[2].abs());
        }

        #[test]
        fn trace_is_preserved(h in sym()) {
            let l = eig_symmetric3(&h).unwrap();
            let sum = l[0] + l[1] + l[2];
            prop_assert!((sum - h.trace()).abs() <= 1e-6 * (1.0 + h.frobenius()));
        }

        #[test]
        fn frobenius_norm_is_preserved(h in sym()) {
            let l = eig_symmetric3(&h).unwrap();
            let s = (l[0] * l[0] + l[1] * l[1] + l[2] * l[2]).sqrt();
            prop_assert!((s - h.frobenius()).abs() <= 1e-6 * (1.0 + h.frobenius()));
        }
    }
}
