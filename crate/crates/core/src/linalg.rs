//! Small fixed-size vector and symmetric-matrix helpers.

use serde::{Deserialize, Serialize};

pub type Vec2 = [f64; 2];
pub type Vec3 = [f64; 3];

#[inline]
pub fn sub2(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn dot2(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Scalar 2D cross product `a.x * b.y - a.y * b.x`.
#[inline]
pub fn cross2(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross3(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm3(a: Vec3) -> f64 {
    dot3(a, a).sqrt()
}

/// Symmetric 2×2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub const IDENTITY: Sym2 = Sym2 {
        xx: 1.0,
        xy: 0.0,
        yy: 1.0,
    };

    pub const fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Sym2 { xx, xy, yy }
    }

    pub fn diag(a: f64, b: f64) -> Self {
        Sym2::new(a, 0.0, b)
    }

    pub fn scaled_identity(s: f64) -> Self {
        Sym2::new(s, 0.0, s)
    }

    /// Outer product `v vᵀ`.
    pub fn outer(v: Vec2) -> Self {
        Sym2::new(v[0] * v[0], v[0] * v[1], v[1] * v[1])
    }

    /// `vᵀ S v`.
    #[inline]
    pub fn quad(&self, v: Vec2) -> f64 {
        self.xx * v[0] * v[0] + 2.0 * self.xy * v[0] * v[1] + self.yy * v[1] * v[1]
    }

    /// Bilinear form `aᵀ S b`.
    #[inline]
    pub fn bilinear(&self, a: Vec2, b: Vec2) -> f64 {
        a[0] * (self.xx * b[0] + self.xy * b[1]) + a[1] * (self.xy * b[0] + self.yy * b[1])
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn add(&self, o: &Sym2) -> Sym2 {
        Sym2::new(self.xx + o.xx, self.xy + o.xy, self.yy + o.yy)
    }

    pub fn scale(&self, s: f64) -> Sym2 {
        Sym2::new(self.xx * s, self.xy * s, self.yy * s)
    }

    pub fn inverse(&self) -> Option<Sym2> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        Some(Sym2::new(self.yy / d, -self.xy / d, self.xx / d))
    }

    /// Eigenvalues in ascending order with the unit eigenvector of the
    /// smaller one.
    pub fn eigen(&self) -> ([f64; 2], Vec2) {
        let mean = 0.5 * (self.xx + self.yy);
        let half_diff = 0.5 * (self.xx - self.yy);
        let r = half_diff.hypot(self.xy);
        let (l0, l1) = (mean - r, mean + r);
        let v = if r == 0.0 {
            [1.0, 0.0]
        } else {
            // angle of the major axis, rotated by 90 degrees for the minor one
            let theta = 0.5 * self.xy.atan2(half_diff);
            [-theta.sin(), theta.cos()]
        };
        ([l0, l1], v)
    }

    /// Rebuilds from eigenvalues and the eigenvector of the first one.
    pub fn from_eigen(l: [f64; 2], v0: Vec2) -> Sym2 {
        let v1 = [-v0[1], v0[0]];
        Sym2::outer(v0).scale(l[0]).add(&Sym2::outer(v1).scale(l[1]))
    }

    /// Clamps eigenvalues to at least `lambda_min`.
    pub fn project_spd(&self, lambda_min: f64) -> Sym2 {
        let (l, v) = self.eigen();
        if l[0] >= lambda_min && l.iter().all(|x| x.is_finite()) {
            return *self;
        }
        let clamp = |x: f64| if x.is_finite() { x.max(lambda_min) } else { lambda_min };
        Sym2::from_eigen([clamp(l[0]), clamp(l[1])], v)
    }

    /// `Rᵀ`-style congruence `M S Mᵀ` for a general 2×2 matrix `m` (row major).
    pub fn congruence(&self, m: [[f64; 2]; 2]) -> Sym2 {
        let ms = [
            [m[0][0] * self.xx + m[0][1] * self.xy, m[0][0] * self.xy + m[0][1] * self.yy],
            [m[1][0] * self.xx + m[1][1] * self.xy, m[1][0] * self.xy + m[1][1] * self.yy],
        ];
        Sym2::new(
            ms[0][0] * m[0][0] + ms[0][1] * m[0][1],
            ms[0][0] * m[1][0] + ms[0][1] * m[1][1],
            ms[1][0] * m[1][0] + ms[1][1] * m[1][1],
        )
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.xx, self.xy, self.yy]
    }

    pub fn from_array(a: [f64; 3]) -> Sym2 {
        Sym2::new(a[0], a[1], a[2])
    }
}
