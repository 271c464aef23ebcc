//! Joint angles, pairwise joint direction descriptors, key-joint selection
//! and range-of-motion checks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normalization::{normalize_global, CanonicalSkeleton};
use crate::skeleton::{AngleRange, Frame, JointId, Sequence, Vec2, JOINT_COUNT};

/// Joints with a defined interior angle, in COCO order.
pub const ANGLE_JOINTS: [JointId; 8] = [
    JointId::LeftShoulder,
    JointId::RightShoulder,
    JointId::LeftElbow,
    JointId::RightElbow,
    JointId::LeftHip,
    JointId::RightHip,
    JointId::LeftKnee,
    JointId::RightKnee,
];

/// Segments shorter than this (in the units of the input) count as collapsed.
const MIN_SEGMENT: f64 = 1e-12;

/// The two joints whose bones meet at `joint`, or `None` for end joints.
pub fn neighbors(joint: JointId) -> Option<(JointId, JointId)> {
    use JointId::*;
    Some(match joint {
        LeftElbow => (LeftShoulder, LeftWrist),
        RightElbow => (RightShoulder, RightWrist),
        LeftKnee => (LeftHip, LeftAnkle),
        RightKnee => (RightHip, RightAnkle),
        LeftShoulder => (LeftElbow, LeftHip),
        RightShoulder => (RightElbow, RightHip),
        LeftHip => (LeftShoulder, LeftKnee),
        RightHip => (RightShoulder, RightKnee),
        _ => return None,
    })
}

pub fn has_angle(joint: JointId) -> bool {
    neighbors(joint).is_some()
}

/// The joint at the far end of the limb segment that `joint` rotates.
pub fn distal(joint: JointId) -> Option<JointId> {
    use JointId::*;
    Some(match joint {
        LeftShoulder => LeftElbow,
        RightShoulder => RightElbow,
        LeftElbow => LeftWrist,
        RightElbow => RightWrist,
        LeftHip => LeftKnee,
        RightHip => RightKnee,
        LeftKnee => LeftAnkle,
        RightKnee => RightAnkle,
        _ => return None,
    })
}

/// The angle-bearing joint whose rotation moves `joint`, if any.
pub fn proximal(joint: JointId) -> Option<JointId> {
    ANGLE_JOINTS
        .iter()
        .copied()
        .find(|&j| distal(j) == Some(joint))
}

fn angle_at(
    frame_id: &str,
    points: &[Vec2; JOINT_COUNT],
    occluded: &[bool; JOINT_COUNT],
    joint: JointId,
) -> Result<f64> {
    let (a, b) = neighbors(joint).ok_or(Error::NoAngle(joint))?;
    for j in [joint, a, b] {
        if occluded[j.index()] {
            return Err(Error::Occluded {
                frame: frame_id.to_string(),
                joint: j,
            });
        }
    }
    let center = points[joint.index()];
    let u = points[a.index()] - center;
    let v = points[b.index()] - center;
    let (nu, nv) = (u.norm(), v.norm());
    if nu < MIN_SEGMENT || nv < MIN_SEGMENT {
        return Err(Error::DegenerateBone {
            frame: frame_id.to_string(),
            joint,
        });
    }
    let cos = (u.dot(&v) / (nu * nv)).clamp(-1.0, 1.0);
    Ok(cos.acos().to_degrees())
}

/// Interior angle at `joint` in degrees, in [0, 180].
pub fn joint_angle(skel: &CanonicalSkeleton, joint: JointId) -> Result<f64> {
    angle_at(&skel.frame_id, &skel.points, &skel.occluded, joint)
}

/// Same as [`joint_angle`] on raw pixel coordinates; similarity maps preserve angles.
pub fn frame_angle(frame: &Frame, joint: JointId) -> Result<f64> {
    angle_at(frame.id(), frame.points(), frame.occluded(), joint)
}

/// Cosine similarity of two 2D directions, computed through the signed angle
/// so that identical inputs give exactly 1 and opposite inputs exactly -1.
pub fn cosine_similarity(u: Vec2, v: Vec2) -> f64 {
    angle_between(u, v).cos()
}

/// Unsigned angle between two directions, radians in [0, pi].
pub fn angle_between(u: Vec2, v: Vec2) -> f64 {
    let cross = u.x * v.y - u.y * v.x;
    cross.atan2(u.dot(&v)).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointVector {
    pub from: JointId,
    pub to: JointId,
    pub direction: Vec2,
}

/// Unit directions between every ordered pair of usable targeted joints in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct JointVectorField {
    pub frame_id: String,
    /// Requested joints, sorted and deduplicated.
    pub targeted: Vec<JointId>,
    /// Requested joints that were not occluded.
    pub usable: Vec<JointId>,
    /// Ordered by (from, to).
    pub vectors: Vec<JointVector>,
    /// Pairs dropped because the joints coincide.
    pub skipped: Vec<(JointId, JointId)>,
}

fn sorted_unique(joints: &[JointId]) -> Vec<JointId> {
    let mut v = joints.to_vec();
    v.sort();
    v.dedup();
    v
}

pub fn joint_vectors(skel: &CanonicalSkeleton, targeted: &[JointId]) -> Result<JointVectorField> {
    let targeted = sorted_unique(targeted);
    let usable: Vec<JointId> = targeted
        .iter()
        .copied()
        .filter(|&j| {
            let occ = skel.is_occluded(j);
            if occ {
                log::warn!(
                    "frame {}: dropping occluded joint {j} from descriptor",
                    skel.frame_id
                );
            }
            !occ
        })
        .collect();
    if usable.len() < 2 {
        return Err(Error::TooFewJoints {
            frame: skel.frame_id.clone(),
            usable: usable.len(),
            required: 2,
        });
    }
    let mut vectors = Vec::with_capacity(usable.len() * (usable.len() - 1));
    let mut skipped = Vec::new();
    for &from in &usable {
        for &to in &usable {
            if from == to {
                continue;
            }
            let delta = skel.point(to) - skel.point(from);
            let length = delta.norm();
            if length < MIN_SEGMENT {
                skipped.push((from, to));
                continue;
            }
            vectors.push(JointVector {
                from,
                to,
                direction: delta / length,
            });
        }
    }
    if !skipped.is_empty() {
        log::warn!(
            "frame {}: {} coincident joint pairs skipped",
            skel.frame_id,
            skipped.len()
        );
    }
    Ok(JointVectorField {
        frame_id: skel.frame_id.clone(),
        targeted,
        usable,
        vectors,
        skipped,
    })
}

/// Pairs of corresponding vectors present in both fields.
pub fn shared_pairs<'a>(
    a: &'a JointVectorField,
    b: &'a JointVectorField,
) -> Result<Vec<(&'a JointVector, &'a JointVector)>> {
    if a.targeted != b.targeted {
        return Err(Error::MismatchedJoints);
    }
    let mut out = Vec::with_capacity(a.vectors.len());
    let (mut i, mut k) = (0, 0);
    while i < a.vectors.len() && k < b.vectors.len() {
        let (va, vb) = (&a.vectors[i], &b.vectors[k]);
        match (va.from, va.to).cmp(&(vb.from, vb.to)) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => k += 1,
            std::cmp::Ordering::Equal => {
                out.push((va, vb));
                i += 1;
                k += 1;
            }
        }
    }
    if out.is_empty() {
        return Err(Error::NoSharedPairs);
    }
    Ok(out)
}

/// Mean cosine similarity between corresponding direction vectors, in [-1, 1].
pub fn frame_cosine(a: &JointVectorField, b: &JointVectorField) -> Result<f64> {
    let pairs = shared_pairs(a, b)?;
    let sum: f64 = pairs
        .iter()
        .map(|(u, v)| cosine_similarity(u.direction, v.direction))
        .sum();
    Ok(sum / pairs.len() as f64)
}

/// Angle-bearing joints whose interior angle changes by at least
/// `threshold_deg` between the first and last frame, largest change first.
pub fn select_key_joints(seq: &Sequence, threshold_deg: f64) -> Result<Vec<JointId>> {
    let first = normalize_global(seq.first())?;
    let last = normalize_global(seq.last())?;
    let mut deviations = Vec::new();
    for joint in ANGLE_JOINTS {
        if let (Ok(a), Ok(b)) = (joint_angle(&first, joint), joint_angle(&last, joint)) {
            deviations.push((joint, (b - a).abs()));
        }
    }
    if deviations.is_empty() {
        return Err(Error::TooFewJoints {
            frame: first.frame_id,
            usable: 0,
            required: 1,
        });
    }
    deviations.retain(|&(_, d)| d >= threshold_deg);
    deviations.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    Ok(deviations.into_iter().map(|(j, _)| j).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RomViolation {
    pub frame_id: String,
    pub joint: JointId,
    pub angle: f64,
}

/// Every (frame, joint) whose interior angle falls outside its limits.
/// Joints that cannot be measured in a frame are skipped.
pub fn rom_check(seq: &Sequence, limits: &BTreeMap<JointId, AngleRange>) -> Vec<RomViolation> {
    let mut out = Vec::new();
    for frame in seq.frames() {
        for (&joint, range) in limits {
            if let Ok(angle) = frame_angle(frame, joint) {
                if !range.contains(angle) {
                    out.push(RomViolation {
                        frame_id: frame.id().to_string(),
                        joint,
                        angle,
                    });
                }
            }
        }
    }
    out
}

/// Default anatomical limits, as interior angles (180 = fully extended).
pub fn default_rom_table() -> BTreeMap<JointId, AngleRange> {
    use JointId::*;
    let mut t = BTreeMap::new();
    for j in [LeftElbow, RightElbow] {
        t.insert(j, AngleRange::new(20.0, 180.0));
    }
    for j in [LeftKnee, RightKnee] {
        t.insert(j, AngleRange::new(20.0, 180.0));
    }
    for j in [LeftHip, RightHip] {
        t.insert(j, AngleRange::new(50.0, 180.0));
    }
    for j in [LeftShoulder, RightShoulder] {
        t.insert(j, AngleRange::new(0.0, 180.0));
    }
    t
}

/// Per-frame interior angle series for `joint`; unmeasurable frames carry
/// the previous value (or the next measurable one at the start).
pub fn angle_series(seq: &Sequence, joint: JointId) -> Result<Vec<f64>> {
    let raw: Vec<Option<f64>> = seq
        .frames()
        .iter()
        .map(|f| frame_angle(f, joint).ok())
        .collect();
    let first = raw
        .iter()
        .flatten()
        .next()
        .copied()
        .ok_or(Error::NoAngle(joint))?;
    let mut last = first;
    Ok(raw
        .into_iter()
        .map(|a| {
            if let Some(a) = a {
                last = a;
            }
            last
        })
        .collect())
}
