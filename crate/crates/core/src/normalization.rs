//! Similarity normalization of skeletons into a canonical comparison space.
//!
//! A frame is mapped to canonical coordinates by
//! `p' = s * R(theta) * (p - center) + d`, where the rotation turns the
//! hip-midpoint to shoulder-midpoint vector onto +y and `s` is the inverse
//! torso length. Global normalization puts the body center (the middle of the
//! torso-aligned bounding box) at the origin; local normalization puts a
//! chosen root joint there instead.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix2, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{Frame, JointId, Vec2, JOINT_COUNT};

/// Torso lengths below this many pixels make a frame unusable.
pub const MIN_TORSO_PX: f64 = 1e-6;

/// Per-frame similarity transform from pixel space to canonical space.
///
/// Serialized as `[theta, dx, dy, s, cx, cy]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 6]", from = "[f64; 6]")]
pub struct NormalizationTransform {
    /// Rotation angle in radians, in (-pi, pi].
    pub theta: f64,
    /// Translation applied after rotation and scaling, canonical units.
    pub d: Vec2,
    /// Scale, 1 / torso pixels.
    pub s: f64,
    /// Pixel-space pivot (the body center).
    pub center: Vec2,
}

impl From<NormalizationTransform> for [f64; 6] {
    fn from(t: NormalizationTransform) -> Self {
        [t.theta, t.d.x, t.d.y, t.s, t.center.x, t.center.y]
    }
}

impl From<[f64; 6]> for NormalizationTransform {
    fn from(v: [f64; 6]) -> Self {
        NormalizationTransform {
            theta: v[0],
            d: Vec2::new(v[1], v[2]),
            s: v[3],
            center: Vec2::new(v[4], v[5]),
        }
    }
}

impl NormalizationTransform {
    pub fn identity() -> Self {
        NormalizationTransform {
            theta: 0.0,
            d: Vec2::zeros(),
            s: 1.0,
            center: Vec2::zeros(),
        }
    }

    pub fn rotation(&self) -> Matrix2<f64> {
        rotation(self.theta)
    }

    /// Pixel point to canonical point.
    pub fn apply(&self, p: Vec2) -> Vec2 {
        self.rotate_scale(p) + self.d
    }

    fn rotate_scale(&self, p: Vec2) -> Vec2 {
        self.s * (self.rotation() * (p - self.center))
    }

    /// Canonical point back to pixels.
    pub fn invert(&self, q: Vec2) -> Vec2 {
        self.center + rotation(-self.theta) * ((q - self.d) / self.s)
    }

    /// The transform as one 3x3 homogeneous matrix.
    pub fn to_matrix(&self) -> Matrix3<f64> {
        let (sin, cos) = self.theta.sin_cos();
        let (a, b) = (self.s * cos, self.s * sin);
        let c = self.center;
        Matrix3::new(
            a,
            -b,
            self.d.x - (a * c.x - b * c.y),
            b,
            a,
            self.d.y - (b * c.x + a * c.y),
            0.0,
            0.0,
            1.0,
        )
    }

    /// The transform as its homogeneous factors, leftmost applied last:
    /// translation by `d`, scaling, rotation, translation by `-center`.
    pub fn factors(&self) -> [Matrix3<f64>; 4] {
        let r = self.rotation();
        let rot = Matrix3::new(
            r[(0, 0)],
            r[(0, 1)],
            0.0,
            r[(1, 0)],
            r[(1, 1)],
            0.0,
            0.0,
            0.0,
            1.0,
        );
        [
            translation(self.d),
            Matrix3::new(self.s, 0.0, 0.0, 0.0, self.s, 0.0, 0.0, 0.0, 1.0),
            rot,
            translation(-self.center),
        ]
    }

    pub fn apply_homogeneous(m: &Matrix3<f64>, p: Vec2) -> Vec2 {
        let h = m * Vector3::new(p.x, p.y, 1.0);
        Vec2::new(h.x / h.z, h.y / h.z)
    }
}

fn rotation(theta: f64) -> Matrix2<f64> {
    let (sin, cos) = theta.sin_cos();
    Matrix2::new(cos, -sin, sin, cos)
}

fn translation(t: Vec2) -> Matrix3<f64> {
    Matrix3::new(1.0, 0.0, t.x, 0.0, 1.0, t.y, 0.0, 0.0, 1.0)
}

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a % TAU;
    if a <= -PI {
        a += TAU;
    } else if a > PI {
        a -= TAU;
    }
    a
}

/// Skeleton expressed in canonical units together with the transform used.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalSkeleton {
    pub frame_id: String,
    pub points: [Vec2; JOINT_COUNT],
    pub occluded: [bool; JOINT_COUNT],
    pub transform: NormalizationTransform,
}

impl CanonicalSkeleton {
    pub fn point(&self, joint: JointId) -> Vec2 {
        self.points[joint.index()]
    }

    pub fn is_occluded(&self, joint: JointId) -> bool {
        self.occluded[joint.index()]
    }
}

fn midpoint(frame: &Frame, a: JointId, b: JointId) -> Vec2 {
    (frame.point(a) + frame.point(b)) * 0.5
}

const TORSO_JOINTS: [JointId; 4] = [
    JointId::LeftShoulder,
    JointId::RightShoulder,
    JointId::LeftHip,
    JointId::RightHip,
];

fn torso_axis(frame: &Frame) -> Result<Vec2> {
    for joint in TORSO_JOINTS {
        if frame.is_occluded(joint) {
            return Err(Error::Occluded {
                frame: frame.id().to_string(),
                joint,
            });
        }
    }
    let shoulders = midpoint(frame, JointId::LeftShoulder, JointId::RightShoulder);
    let hips = midpoint(frame, JointId::LeftHip, JointId::RightHip);
    let axis = shoulders - hips;
    let length = axis.norm();
    if length.is_nan() || length < MIN_TORSO_PX {
        return Err(Error::DegenerateTorso {
            frame: frame.id().to_string(),
            length,
        });
    }
    Ok(axis)
}

/// Pixel distance between the shoulder midpoint and the hip midpoint.
pub fn torso_length(frame: &Frame) -> Result<f64> {
    torso_axis(frame).map(|a| a.norm())
}

/// Rotation, scale and body center shared by both normalization modes.
fn upright_transform(frame: &Frame) -> Result<NormalizationTransform> {
    let axis = torso_axis(frame)?;
    let usable = frame.occluded().iter().filter(|&&o| !o).count();
    if usable < 3 {
        return Err(Error::TooFewJoints {
            frame: frame.id().to_string(),
            usable,
            required: 3,
        });
    }
    let theta = wrap_angle(PI / 2.0 - axis.y.atan2(axis.x));
    let r = rotation(theta);
    // Bounding box in the torso-aligned orientation, so the center does not
    // depend on the camera roll.
    let mut lo = Vec2::repeat(f64::INFINITY);
    let mut hi = Vec2::repeat(f64::NEG_INFINITY);
    for (p, _) in frame
        .points()
        .iter()
        .zip(frame.occluded())
        .filter(|(_, &o)| !o)
    {
        let q = r * p;
        lo = lo.inf(&q);
        hi = hi.sup(&q);
    }
    let center = rotation(-theta) * ((lo + hi) * 0.5);
    Ok(NormalizationTransform {
        theta,
        d: Vec2::zeros(),
        s: 1.0 / axis.norm(),
        center,
    })
}

fn apply_all(frame: &Frame, transform: NormalizationTransform) -> CanonicalSkeleton {
    CanonicalSkeleton {
        frame_id: frame.id().to_string(),
        points: frame.points().map(|p| transform.apply(p)),
        occluded: *frame.occluded(),
        transform,
    }
}

/// Center the body at the origin, rotate the torso upright and scale it to unit length.
pub fn normalize_global(frame: &Frame) -> Result<CanonicalSkeleton> {
    let transform = upright_transform(frame)?;
    Ok(apply_all(frame, transform))
}

/// Like [`normalize_global`], but with `root` placed at the origin.
pub fn normalize_local(frame: &Frame, root: JointId) -> Result<CanonicalSkeleton> {
    if frame.is_occluded(root) {
        return Err(Error::Occluded {
            frame: frame.id().to_string(),
            joint: root,
        });
    }
    let mut transform = upright_transform(frame)?;
    transform.d = -transform.rotate_scale(frame.point(root));
    Ok(apply_all(frame, transform))
}

/// Map a canonical point back into the pixel frame of `transform`.
pub fn invert(transform: &NormalizationTransform, point: Vec2) -> Vec2 {
    transform.invert(point)
}
