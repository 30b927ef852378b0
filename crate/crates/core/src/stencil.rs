//! Triangular stencils and the local Randers update formulas.
//!
//! Neighbors are numbered counter-clockwise starting at the upper-left node,
//! in `(row, col)` offsets with rows increasing downwards:
//!
//! ```text
//!   0  7  6
//!   1  .  5
//!   2  3  4
//! ```
//!
//! Stencil `k` pairs neighbors `k` and `(k + 1) mod 8`, so every stencil
//! joins one axis neighbor and one diagonal neighbor.

use crate::fields::GridSpec;
use crate::linalg::{dot, Sym2, Vec2};

/// `(d_row, d_col)` offsets of the eight neighbors.
pub const NEIGHBOR_OFFSETS: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
];

/// Relative tolerance on `det(M^T G M)` below which a stencil is singular.
pub const SINGULAR_STENCIL_TOL: f64 = 1e-14;

/// The eight neighbor offsets and the eight neighbor pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct StencilTable {
    pub offsets: [(isize, isize); 8],
    pub pairs: [(usize, usize); 8],
}

impl Default for StencilTable {
    fn default() -> Self {
        let mut pairs = [(0, 0); 8];
        for (k, p) in pairs.iter_mut().enumerate() {
            *p = (k, (k + 1) % 8);
        }
        StencilTable {
            offsets: NEIGHBOR_OFFSETS,
            pairs,
        }
    }
}

impl StencilTable {
    /// Physical displacement `h * (d_col, d_row)` of neighbor `n`.
    #[inline]
    pub fn displacement(&self, n: usize, h: f64) -> Vec2 {
        let (dr, dc) = self.offsets[n];
        [dc as f64 * h, dr as f64 * h]
    }

    pub fn displacements(&self, h: f64) -> [Vec2; 8] {
        std::array::from_fn(|n| self.displacement(n, h))
    }

    /// Flat index of neighbor `n` of `(row, col)`, or `None` off the grid.
    #[inline]
    pub fn neighbor(&self, spec: &GridSpec, row: usize, col: usize, n: usize) -> Option<usize> {
        let (dr, dc) = self.offsets[n];
        let r = row as isize + dr;
        let c = col as isize + dc;
        if r < 0 || c < 0 || r >= spec.rows as isize || c >= spec.cols as isize {
            None
        } else {
            Some(r as usize * spec.cols + c as usize)
        }
    }
}

/// Why a two-point candidate was accepted or rejected.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TwoPointStatus {
    Valid,
    /// `det(M^T G M)` vanished relative to its scale.
    SingularStencil,
    NegativeDiscriminant,
    /// Root does not exceed both donor times.
    NotCausal,
    /// A barycentric coordinate is negative.
    OutsideTriangle,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoPointUpdate {
    /// Larger root of the stencil quadratic; NaN when there is no real root.
    pub t0: f64,
    /// Barycentric coordinates `Q (t0 1 - s)`.
    pub lambda: Vec2,
    pub status: TwoPointStatus,
}

impl TwoPointUpdate {
    #[inline]
    pub fn valid(&self) -> bool {
        self.status == TwoPointStatus::Valid
    }

    fn rejected(status: TwoPointStatus) -> Self {
        TwoPointUpdate {
            t0: f64::NAN,
            lambda: [f64::NAN; 2],
            status,
        }
    }
}

/// Inverse stencil metric `Q = (M^T G M)^{-1}` for `M = [m1 | m2]`.
#[inline]
pub fn stencil_q(m1: Vec2, m2: Vec2, g: &Sym2) -> Option<Sym2> {
    let e = Sym2::new(g.quad(m1), g.bilinear(m1, m2), g.quad(m2));
    e.inverse(SINGULAR_STENCIL_TOL)
}

/// Two-donor update: the larger root `t0` of
/// `(s - t0 1)^T Q (s - t0 1) = 1` with `s_i = T_i + m_i . b`.
///
/// The quadratic is solved for `t0 - s_1`, which keeps its coefficients of
/// order one however large the arrival times are.
pub fn two_point_update(t1: f64, t2: f64, m1: Vec2, m2: Vec2, g: &Sym2, b: Vec2) -> TwoPointUpdate {
    let Some(q) = stencil_q(m1, m2, g) else {
        return TwoPointUpdate::rejected(TwoPointStatus::SingularStencil);
    };
    let base = t1 + dot(m1, b);
    let d = [0.0, (t2 - t1) + (dot(m2, b) - dot(m1, b))];
    let qd = q.mul(d);
    let a = q.a11 + 2.0 * q.a12 + q.a22;
    let half_b = qd[0] + qd[1];
    let c = dot(d, qd) - 1.0;
    let disc = half_b * half_b - a * c;
    if !(disc >= 0.0) {
        return TwoPointUpdate::rejected(TwoPointStatus::NegativeDiscriminant);
    }
    let tau = (half_b + disc.sqrt()) / a;
    let t0 = base + tau;
    let lambda = q.mul([tau - d[0], tau - d[1]]);
    let status = if !(t0 > t1.max(t2)) {
        TwoPointStatus::NotCausal
    } else if lambda[0] < 0.0 || lambda[1] < 0.0 {
        TwoPointStatus::OutsideTriangle
    } else {
        TwoPointStatus::Valid
    };
    TwoPointUpdate { t0, lambda, status }
}

/// One-donor update along an edge: `T_i + m . b + sqrt(m^T G m)`.
#[inline]
pub fn one_point_update(ti: f64, m: Vec2, g: &Sym2, b: Vec2) -> f64 {
    ti + dot(m, b) + g.quad(m).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    const I: Sym2 = Sym2::IDENTITY;

    #[test]
    fn table_is_the_moore_neighborhood() {
        let t = StencilTable::default();
        let mut seen = std::collections::HashSet::new();
        for &(dr, dc) in &t.offsets {
            assert!(dr.abs() <= 1 && dc.abs() <= 1 && (dr, dc) != (0, 0));
            assert!(seen.insert((dr, dc)));
        }
        assert_eq!(seen.len(), 8);
        for &(a, b) in &t.pairs {
            let (ma, mb) = (t.displacement(a, 1.0), t.displacement(b, 1.0));
            assert!((ma[0] * mb[1] - ma[1] * mb[0]).abs() > 0.5);
        }
    }

    #[test]
    fn two_point_symmetric_case() {
        let u = two_point_update(0.0, 0.0, [-1.0, 0.0], [0.0, -1.0], &I, [0.0, 0.0]);
        assert!(u.valid());
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((u.t0 - r).abs() < 1e-15);
        assert!((u.lambda[0] - r).abs() < 1e-15);
        assert!((u.lambda[1] - r).abs() < 1e-15);
    }

    #[test]
    fn two_point_far_donor_is_invalid() {
        let u = two_point_update(0.0, 10.0, [-1.0, 0.0], [0.0, -1.0], &I, [0.0, 0.0]);
        assert!(!u.valid());
    }

    #[test]
    fn two_point_outside_triangle() {
        // Real root exists but the characteristic leaves the triangle.
        let u = two_point_update(0.0, 0.9, [-1.0, -1.0], [-1.0, 0.0], &I, [0.0, 0.0]);
        assert_eq!(u.status, TwoPointStatus::OutsideTriangle);
        assert!(u.lambda[1] < 0.0);
    }

    #[test]
    fn two_point_negative_discriminant() {
        let u = two_point_update(0.0, 5.0, [-1.0, 0.0], [0.0, -1.0], &I, [0.0, 0.0]);
        assert_eq!(u.status, TwoPointStatus::NegativeDiscriminant);
        assert!(u.t0.is_nan());
    }

    #[test]
    fn two_point_singular_stencil() {
        let u = two_point_update(0.0, 0.0, [1.0, 0.0], [2.0, 0.0], &I, [0.0, 0.0]);
        assert_eq!(u.status, TwoPointStatus::SingularStencil);
    }

    #[test]
    fn one_point_cases() {
        assert_eq!(one_point_update(0.0, [-1.0, 0.0], &I, [0.0, 0.0]), 1.0);
        assert!((one_point_update(0.0, [-1.0, 0.0], &I, [0.3, 0.0]) - 0.7).abs() < 1e-15);
        assert_eq!(one_point_update(0.0, [-1.0, 0.0], &Sym2::diag(4.0, 0.25), [0.0, 0.0]), 2.0);
    }

    #[test]
    fn two_point_satisfies_its_quadratic() {
        let g = Sym2::new(2.0, 0.3, 0.7);
        let b = [0.1, -0.2];
        let (m1, m2) = ([-1.0, -1.0], [-1.0, 0.0]);
        let u = two_point_update(0.4, 0.9, m1, m2, &g, b);
        assert!(u.t0.is_finite());
        let q = stencil_q(m1, m2, &g).unwrap();
        let s = [0.4 + dot(m1, b), 0.9 + dot(m2, b)];
        let uu = [s[0] - u.t0, s[1] - u.t0];
        assert!((q.quad(uu) - 1.0).abs() < 1e-12);
    }
}
