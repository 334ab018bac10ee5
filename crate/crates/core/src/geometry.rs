//! SE(2) pose algebra.
//!
//! Poses and edge measurements are both planar rigid transforms. [`Pose2`] is
//! the `(x, y, psi)` vector form stored in graphs and on the wire, while
//! [`Transform2`] is the rotation/translation form equivalent to the 3x3
//! homogeneous matrix. Headings are always kept in `(-pi, pi]`.

use std::f64::consts::PI;
use std::ops::Mul;

use serde::{Deserialize, Serialize};

/// Wraps an angle into the half-open interval `(-pi, pi]`.
///
/// A non-finite input is a contract violation and is caught in debug builds.
pub fn wrap_angle(theta: f64) -> f64 {
    debug_assert!(theta.is_finite(), "wrap_angle on non-finite value {theta}");
    let r = theta.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Planar pose `(x, y, psi)`: metres, metres, radians.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

impl Pose2 {
    pub const IDENTITY: Pose2 = Pose2 {
        x: 0.0,
        y: 0.0,
        psi: 0.0,
    };

    /// Builds a pose, normalizing the heading.
    pub fn new(x: f64, y: f64, psi: f64) -> Self {
        Pose2 {
            x,
            y,
            psi: wrap_angle(psi),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.psi.is_finite()
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    pub fn to_transform(self) -> Transform2 {
        Transform2 {
            rotation: self.psi,
            translation: (self.x, self.y),
        }
    }

    /// `self * other` in homogeneous form.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        self.to_transform().compose(&other.to_transform()).to_pose()
    }

    pub fn inverse(&self) -> Pose2 {
        self.to_transform().inverse().to_pose()
    }

    /// Relative pose of `other` seen from `self`, i.e. `self^-1 * other`.
    ///
    /// This is the edge prediction between two graph nodes.
    pub fn between(&self, other: &Pose2) -> Pose2 {
        between(self, other)
    }

    pub fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        self.to_transform().apply(p)
    }

    pub fn distance_to(&self, other: &Pose2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.psi]
    }
}

impl Mul for Pose2 {
    type Output = Pose2;

    fn mul(self, rhs: Pose2) -> Pose2 {
        self.compose(&rhs)
    }
}

/// `a^-1 * b`.
pub fn between(a: &Pose2, b: &Pose2) -> Pose2 {
    let (s, c) = a.psi.sin_cos();
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    Pose2 {
        x: c * dx + s * dy,
        y: -s * dx + c * dy,
        psi: wrap_angle(b.psi - a.psi),
    }
}

/// Rigid transform stored as rotation angle plus translation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transform2 {
    pub rotation: f64,
    pub translation: (f64, f64),
}

impl Default for Transform2 {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Transform2 {
    pub const IDENTITY: Transform2 = Transform2 {
        rotation: 0.0,
        translation: (0.0, 0.0),
    };

    pub fn new(rotation: f64, tx: f64, ty: f64) -> Self {
        Transform2 {
            rotation: wrap_angle(rotation),
            translation: (tx, ty),
        }
    }

    pub fn to_pose(self) -> Pose2 {
        Pose2 {
            x: self.translation.0,
            y: self.translation.1,
            psi: wrap_angle(self.rotation),
        }
    }

    /// Homogeneous product `self * other`.
    pub fn compose(&self, other: &Transform2) -> Transform2 {
        let (tx, ty) = self.apply(other.translation);
        Transform2 {
            rotation: wrap_angle(self.rotation + other.rotation),
            translation: (tx, ty),
        }
    }

    pub fn inverse(&self) -> Transform2 {
        let (s, c) = self.rotation.sin_cos();
        let (tx, ty) = self.translation;
        Transform2 {
            rotation: wrap_angle(-self.rotation),
            translation: (-(c * tx + s * ty), s * tx - c * ty),
        }
    }

    pub fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        (
            c * p.0 - s * p.1 + self.translation.0,
            s * p.0 + c * p.1 + self.translation.1,
        )
    }

    /// Row-major 3x3 homogeneous matrix.
    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let (s, c) = self.rotation.sin_cos();
        [
            [c, -s, self.translation.0],
            [s, c, self.translation.1],
            [0.0, 0.0, 1.0],
        ]
    }

    /// Inverse of [`Transform2::to_matrix`]; the rotation block is assumed orthonormal.
    pub fn from_matrix(m: &[[f64; 3]; 3]) -> Self {
        Transform2 {
            rotation: wrap_angle(m[1][0].atan2(m[0][0])),
            translation: (m[0][2], m[1][2]),
        }
    }
}

impl Mul for Transform2 {
    type Output = Transform2;

    fn mul(self, rhs: Transform2) -> Transform2 {
        self.compose(&rhs)
    }
}

impl From<Pose2> for Transform2 {
    fn from(p: Pose2) -> Self {
        p.to_transform()
    }
}

impl From<Transform2> for Pose2 {
    fn from(t: Transform2) -> Self {
        t.to_pose()
    }
}

/// Diagonal information matrix over `(x, y, psi)` residuals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoMatrix3 {
    pub diag: [f64; 3],
}

impl InfoMatrix3 {
    /// Returns `None` unless all weights are finite and strictly positive.
    pub fn new(wx: f64, wy: f64, wpsi: f64) -> Option<Self> {
        let diag = [wx, wy, wpsi];
        diag.iter()
            .all(|w| w.is_finite() && *w > 0.0)
            .then_some(InfoMatrix3 { diag })
    }

    pub fn identity() -> Self {
        InfoMatrix3 {
            diag: [1.0, 1.0, 1.0],
        }
    }

    pub fn is_valid(&self) -> bool {
        self.diag.iter().all(|w| w.is_finite() && *w > 0.0)
    }

    pub fn scaled(&self, k: f64) -> Self {
        InfoMatrix3 {
            diag: self.diag.map(|w| w * k),
        }
    }

    /// `e^T * Omega * e`.
    pub fn weighted_norm(&self, e: &[f64; 3]) -> f64 {
        self.diag[0] * e[0] * e[0] + self.diag[1] * e[1] * e[1] + self.diag[2] * e[2] * e[2]
    }
}
