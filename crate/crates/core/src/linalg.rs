//! Fixed-size 2-D vector and symmetric 2x2 matrix helpers.

pub type Vec2 = [f64; 2];

#[inline]
pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm(a: Vec2) -> f64 {
    dot(a, a).sqrt()
}

/// Symmetric 2x2 matrix `[[a11, a12], [a12, a22]]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sym2 {
    pub a11: f64,
    pub a12: f64,
    pub a22: f64,
}

/// Eigen-decomposition of a [`Sym2`]: `major >= minor`, with `angle` the
/// direction of the major eigenvector measured from the first axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eigen2 {
    pub major: f64,
    pub minor: f64,
    pub angle: f64,
}

impl Sym2 {
    pub const IDENTITY: Sym2 = Sym2 {
        a11: 1.0,
        a12: 0.0,
        a22: 1.0,
    };

    #[inline]
    pub const fn new(a11: f64, a12: f64, a22: f64) -> Self {
        Sym2 { a11, a12, a22 }
    }

    #[inline]
    pub fn diag(a11: f64, a22: f64) -> Self {
        Sym2::new(a11, 0.0, a22)
    }

    #[inline]
    pub fn scaled_identity(s: f64) -> Self {
        Sym2::new(s, 0.0, s)
    }

    /// `R diag(major, minor) R^T` with `R` the rotation by `angle`.
    pub fn from_eigen(major: f64, minor: f64, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Sym2::new(
            major * c * c + minor * s * s,
            (major - minor) * c * s,
            major * s * s + minor * c * c,
        )
    }

    #[inline]
    pub fn det(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a12
    }

    #[inline]
    pub fn trace(&self) -> f64 {
        self.a11 + self.a22
    }

    /// Inverse, or `None` when `|det|` is below `rel_tol` times the squared
    /// magnitude of the entries.
    pub fn inverse(&self, rel_tol: f64) -> Option<Sym2> {
        let det = self.det();
        let scale = self.a11.abs().max(self.a22.abs()).max(self.a12.abs());
        if !(det.abs() > rel_tol * scale * scale) {
            return None;
        }
        Some(Sym2::new(self.a22 / det, -self.a12 / det, self.a11 / det))
    }

    #[inline]
    pub fn mul(&self, v: Vec2) -> Vec2 {
        [
            self.a11 * v[0] + self.a12 * v[1],
            self.a12 * v[0] + self.a22 * v[1],
        ]
    }

    /// `u^T A v`.
    #[inline]
    pub fn bilinear(&self, u: Vec2, v: Vec2) -> f64 {
        dot(u, self.mul(v))
    }

    /// `v^T A v`.
    #[inline]
    pub fn quad(&self, v: Vec2) -> f64 {
        self.a11 * v[0] * v[0] + 2.0 * self.a12 * v[0] * v[1] + self.a22 * v[1] * v[1]
    }

    /// Eigenvalues by the trace-discriminant formula; angle is
    /// `0.5 * atan2(2 a12, a11 - a22)`, which is zero for isotropic input.
    pub fn eigen(&self) -> Eigen2 {
        let half_tr = 0.5 * self.trace();
        let diff = self.a11 - self.a22;
        let disc = (diff * diff + 4.0 * self.a12 * self.a12).sqrt();
        Eigen2 {
            major: half_tr + 0.5 * disc,
            minor: half_tr - 0.5 * disc,
            angle: 0.5 * (2.0 * self.a12).atan2(diff),
        }
    }

    pub fn is_spd(&self) -> bool {
        self.a11 > 0.0 && self.a22 > 0.0 && self.det() > 0.0
    }

    pub fn is_finite(&self) -> bool {
        self.a11.is_finite() && self.a12.is_finite() && self.a22.is_finite()
    }

    /// Squared dual norm `v^T A^{-1} v`, computed without forming the inverse.
    #[inline]
    pub fn inv_quad(&self, v: Vec2) -> f64 {
        (v[0] * v[0] * self.a22 - 2.0 * v[0] * v[1] * self.a12 + v[1] * v[1] * self.a11)
            / self.det()
    }
}
