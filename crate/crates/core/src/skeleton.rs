//! Keypoint data model: the 17 COCO joints, frames, sequences and annotations.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;

/// Number of keypoints in the COCO body layout.
pub const JOINT_COUNT: usize = 17;

/// Confidence below which a keypoint is treated as occluded.
pub const DEFAULT_OCCLUSION_THRESHOLD: f64 = 0.05;

/// COCO keypoints, with discriminants equal to the COCO index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointId {
    Nose = 0,
    LeftEye = 1,
    RightEye = 2,
    LeftEar = 3,
    RightEar = 4,
    LeftShoulder = 5,
    RightShoulder = 6,
    LeftElbow = 7,
    RightElbow = 8,
    LeftWrist = 9,
    RightWrist = 10,
    LeftHip = 11,
    RightHip = 12,
    LeftKnee = 13,
    RightKnee = 14,
    LeftAnkle = 15,
    RightAnkle = 16,
}

impl JointId {
    pub const ALL: [JointId; JOINT_COUNT] = [
        JointId::Nose,
        JointId::LeftEye,
        JointId::RightEye,
        JointId::LeftEar,
        JointId::RightEar,
        JointId::LeftShoulder,
        JointId::RightShoulder,
        JointId::LeftElbow,
        JointId::RightElbow,
        JointId::LeftWrist,
        JointId::RightWrist,
        JointId::LeftHip,
        JointId::RightHip,
        JointId::LeftKnee,
        JointId::RightKnee,
        JointId::LeftAnkle,
        JointId::RightAnkle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<JointId> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            JointId::Nose => "nose",
            JointId::LeftEye => "left_eye",
            JointId::RightEye => "right_eye",
            JointId::LeftEar => "left_ear",
            JointId::RightEar => "right_ear",
            JointId::LeftShoulder => "left_shoulder",
            JointId::RightShoulder => "right_shoulder",
            JointId::LeftElbow => "left_elbow",
            JointId::RightElbow => "right_elbow",
            JointId::LeftWrist => "left_wrist",
            JointId::RightWrist => "right_wrist",
            JointId::LeftHip => "left_hip",
            JointId::RightHip => "right_hip",
            JointId::LeftKnee => "left_knee",
            JointId::RightKnee => "right_knee",
            JointId::LeftAnkle => "left_ankle",
            JointId::RightAnkle => "right_ankle",
        }
    }

    /// Human-readable name, e.g. "left elbow".
    pub fn label(self) -> String {
        self.name().replace('_', " ")
    }

    pub fn is_left(self) -> bool {
        self.name().starts_with("left_")
    }

    pub fn is_right(self) -> bool {
        self.name().starts_with("right_")
    }

    pub fn is_upper_body(self) -> bool {
        self.index() <= JointId::RightWrist.index()
    }
}

impl fmt::Display for JointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for JointId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        JointId::ALL
            .iter()
            .copied()
            .find(|j| j.name() == s)
            .ok_or_else(|| format!("unknown joint name `{s}`"))
    }
}

/// Recording class of a sequence: reference, correct or wrong performance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    Groundtruth,
    Correct,
    Wrong,
}

impl ClassLabel {
    /// Tag used in report names, e.g. "Bench Press(W)".
    pub fn tag(self) -> &'static str {
        match self {
            ClassLabel::Groundtruth => "GT",
            ClassLabel::Correct => "C",
            ClassLabel::Wrong => "W",
        }
    }
}

/// One pose-estimator output: 17 pixel positions with confidences.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    id: String,
    timestamp: f64,
    points: [Vec2; JOINT_COUNT],
    confidence: [f64; JOINT_COUNT],
    occluded: [bool; JOINT_COUNT],
}

impl Frame {
    pub fn new(
        id: impl Into<String>,
        timestamp: f64,
        points: [Vec2; JOINT_COUNT],
        confidence: [f64; JOINT_COUNT],
    ) -> Result<Frame> {
        Self::with_occlusion_threshold(
            id,
            timestamp,
            points,
            confidence,
            DEFAULT_OCCLUSION_THRESHOLD,
        )
    }

    pub fn with_occlusion_threshold(
        id: impl Into<String>,
        timestamp: f64,
        points: [Vec2; JOINT_COUNT],
        confidence: [f64; JOINT_COUNT],
        occlusion_threshold: f64,
    ) -> Result<Frame> {
        let id = id.into();
        if !timestamp.is_finite() || timestamp < 0.0 {
            return Err(Error::NonFinite(format!(
                "frame {id}: timestamp {timestamp}"
            )));
        }
        for (joint, (p, &c)) in JointId::ALL
            .iter()
            .zip(points.iter().zip(confidence.iter()))
        {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(Error::NonFinite(format!("frame {id}: {joint} coordinates")));
            }
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::Config(format!(
                    "frame {id}: {joint} confidence {c} outside [0, 1]"
                )));
            }
        }
        let occluded = confidence.map(|c| c < occlusion_threshold);
        Ok(Frame {
            id,
            timestamp,
            points,
            confidence,
            occluded,
        })
    }

    /// Frame with every joint fully confident.
    pub fn from_points(
        id: impl Into<String>,
        timestamp: f64,
        points: [Vec2; JOINT_COUNT],
    ) -> Result<Frame> {
        Self::new(id, timestamp, points, [1.0; JOINT_COUNT])
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }

    pub fn points(&self) -> &[Vec2; JOINT_COUNT] {
        &self.points
    }

    pub fn point(&self, joint: JointId) -> Vec2 {
        self.points[joint.index()]
    }

    pub fn confidence(&self) -> &[f64; JOINT_COUNT] {
        &self.confidence
    }

    pub fn occluded(&self) -> &[bool; JOINT_COUNT] {
        &self.occluded
    }

    pub fn is_occluded(&self, joint: JointId) -> bool {
        self.occluded[joint.index()]
    }

    /// Copy with a different timestamp; used when re-timing sequences.
    pub fn retimed(&self, timestamp: f64) -> Frame {
        Frame {
            timestamp,
            ..self.clone()
        }
    }

    /// Copy with points replaced (confidences and occlusion kept).
    pub fn with_points(&self, points: [Vec2; JOINT_COUNT]) -> Frame {
        Frame {
            points,
            ..self.clone()
        }
    }
}

/// An ordered, strictly time-increasing list of frames for one performance.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    exercise_id: String,
    class_label: ClassLabel,
    fps_hint: Option<f64>,
    frames: Vec<Frame>,
}

impl Sequence {
    pub fn new(
        exercise_id: impl Into<String>,
        class_label: ClassLabel,
        fps_hint: Option<f64>,
        frames: Vec<Frame>,
    ) -> Result<Sequence> {
        if frames.len() < 2 {
            return Err(Error::TooFewFrames(frames.len()));
        }
        for (i, pair) in frames.windows(2).enumerate() {
            if pair[1].timestamp.is_nan() || pair[1].timestamp <= pair[0].timestamp {
                return Err(Error::NonMonotonicTimestamp {
                    frame: i + 1,
                    timestamp: pair[1].timestamp,
                    previous: pair[0].timestamp,
                });
            }
        }
        if let Some(fps) = fps_hint {
            if !(fps.is_finite() && fps > 0.0) {
                return Err(Error::Config(format!("fps hint {fps} must be positive")));
            }
        }
        Ok(Sequence {
            exercise_id: exercise_id.into(),
            class_label,
            fps_hint,
            frames,
        })
    }

    pub fn exercise_id(&self) -> &str {
        &self.exercise_id
    }

    pub fn class_label(&self) -> ClassLabel {
        self.class_label
    }

    pub fn fps_hint(&self) -> Option<f64> {
        self.fps_hint
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn first(&self) -> &Frame {
        &self.frames[0]
    }

    pub fn last(&self) -> &Frame {
        &self.frames[self.frames.len() - 1]
    }

    /// Elapsed time between the first and last frame, in seconds.
    pub fn duration(&self) -> f64 {
        self.last().timestamp - self.first().timestamp
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.timestamp).collect()
    }

    pub fn with_class(&self, class_label: ClassLabel) -> Sequence {
        Sequence {
            class_label,
            ..self.clone()
        }
    }
}

/// Closed interval of interior joint angles, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleRange {
    pub min_deg: f64,
    pub max_deg: f64,
}

impl AngleRange {
    pub fn new(min_deg: f64, max_deg: f64) -> AngleRange {
        AngleRange { min_deg, max_deg }
    }

    pub fn width(&self) -> f64 {
        self.max_deg - self.min_deg
    }

    pub fn contains(&self, angle: f64) -> bool {
        angle >= self.min_deg && angle <= self.max_deg
    }

    pub fn is_valid(&self) -> bool {
        self.min_deg.is_finite() && self.max_deg.is_finite() && self.min_deg <= self.max_deg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MistakeNote {
    pub frame_id: String,
    pub joint: JointId,
    #[serde(default)]
    pub note: String,
}

/// Score triple on the 0-100 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreTriple {
    pub joint: f64,
    pub pace: f64,
    pub range: f64,
}

/// Expert annotation of a recording: targeted joints, expected angle ranges,
/// anatomical limits and optional mistake labels and scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub exercise_id: String,
    pub targeted_joints: Vec<JointId>,
    #[serde(default)]
    pub reference_angles: BTreeMap<JointId, AngleRange>,
    #[serde(default)]
    pub rom_limits: BTreeMap<JointId, AngleRange>,
    #[serde(default)]
    pub per_frame_mistakes: Vec<MistakeNote>,
    #[serde(default)]
    pub scores: Option<ScoreTriple>,
}

impl Annotation {
    pub fn validate(&self) -> Result<()> {
        for (joint, range) in self.reference_angles.iter().chain(self.rom_limits.iter()) {
            if !range.is_valid() {
                return Err(Error::Config(format!(
                    "angle range for {joint} has min {} > max {}",
                    range.min_deg, range.max_deg
                )));
            }
        }
        if let Some(s) = self.scores {
            for v in [s.joint, s.pace, s.range] {
                if !(0.0..=100.0).contains(&v) {
                    return Err(Error::Config(format!(
                        "annotation score {v} outside [0, 100]"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn points() -> [Vec2; JOINT_COUNT] {
        std::array::from_fn(|i| Vec2::new(i as f64, 2.0 * i as f64))
    }

    #[test]
    fn joint_codes_follow_coco_order() {
        for (i, j) in JointId::ALL.iter().enumerate() {
            assert_eq!(j.index(), i);
            assert_eq!(JointId::from_index(i), Some(*j));
            assert_eq!(j.name().parse::<JointId>().unwrap(), *j);
        }
        assert_eq!(JointId::from_index(17), None);
        assert_eq!(JointId::LeftShoulder.index(), 5);
        assert_eq!(JointId::RightAnkle.index(), 16);
    }

    #[test]
    fn low_confidence_joints_are_occluded() {
        let mut conf = [1.0; JOINT_COUNT];
        conf[JointId::LeftWrist.index()] = 0.01;
        let f = Frame::new("a", 0.0, points(), conf).unwrap();
        assert!(f.is_occluded(JointId::LeftWrist));
        assert!(!f.is_occluded(JointId::RightWrist));
        let f = Frame::with_occlusion_threshold("a", 0.0, points(), conf, 0.005).unwrap();
        assert!(!f.is_occluded(JointId::LeftWrist));
    }

    #[test]
    fn frame_rejects_bad_values() {
        let mut p = points();
        p[3].x = f64::NAN;
        assert!(Frame::from_points("a", 0.0, p).is_err());
        let mut conf = [1.0; JOINT_COUNT];
        conf[0] = 1.5;
        assert!(Frame::new("a", 0.0, points(), conf).is_err());
        assert!(Frame::from_points("a", -1.0, points()).is_err());
    }

    #[test]
    fn sequence_requires_increasing_time() {
        let f0 = Frame::from_points("0", 0.0, points()).unwrap();
        let f1 = Frame::from_points("1", 0.0, points()).unwrap();
        let err = Sequence::new("x", ClassLabel::Correct, None, vec![f0.clone(), f1]).unwrap_err();
        assert!(matches!(err, Error::NonMonotonicTimestamp { frame: 1, .. }));
        let err = Sequence::new("x", ClassLabel::Correct, None, vec![f0]).unwrap_err();
        assert!(matches!(err, Error::TooFewFrames(1)));
    }

    #[test]
    fn annotation_rejects_inverted_ranges() {
        let mut a = Annotation {
            exercise_id: "squat".into(),
            targeted_joints: vec![JointId::LeftKnee],
            reference_angles: BTreeMap::new(),
            rom_limits: BTreeMap::new(),
            per_frame_mistakes: vec![],
            scores: None,
        };
        assert!(a.validate().is_ok());
        a.reference_angles
            .insert(JointId::LeftKnee, AngleRange::new(120.0, 90.0));
        assert!(a.validate().is_err());
    }
}
