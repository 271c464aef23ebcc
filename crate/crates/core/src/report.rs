//! The assessment report: one row of scores and corrections plus per-frame detail.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::alignment::PaceProfile;
use crate::config::BodyRegion;
use crate::error::{Error, Result};
use crate::kinematics::RomViolation;
use crate::normalization::NormalizationTransform;
use crate::skeleton::{ClassLabel, JointId, ScoreTriple};

/// Range-of-motion score, or not applicable (serialized as `"/"`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RangeScore {
    Score(f64),
    NotApplicable,
}

impl RangeScore {
    pub const SENTINEL: &'static str = "/";

    pub fn value(self) -> Option<f64> {
        match self {
            RangeScore::Score(v) => Some(v),
            RangeScore::NotApplicable => None,
        }
    }
}

impl Serialize for RangeScore {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            RangeScore::Score(v) => serializer.serialize_f64(*v),
            RangeScore::NotApplicable => serializer.serialize_str(Self::SENTINEL),
        }
    }
}

impl<'de> Deserialize<'de> for RangeScore {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct RangeVisitor;

        impl Visitor<'_> for RangeVisitor {
            type Value = RangeScore;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                write!(f, "a number or \"/\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<RangeScore, E> {
                Ok(RangeScore::Score(v))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<RangeScore, E> {
                Ok(RangeScore::Score(v as f64))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<RangeScore, E> {
                Ok(RangeScore::Score(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<RangeScore, E> {
                if v == RangeScore::SENTINEL {
                    Ok(RangeScore::NotApplicable)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }

        deserializer.deserialize_any(RangeVisitor)
    }
}

/// One correction message and the candidate key frames it refers to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub text: String,
    pub joint: JointId,
    pub frames: Vec<String>,
}

/// Deviations at one step of the alignment path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDetail {
    pub candidate_index: usize,
    pub reference_index: usize,
    pub candidate_frame: String,
    pub reference_frame: String,
    /// Per targeted joint, in [0, 1].
    pub deviations: BTreeMap<JointId, f64>,
    /// Candidate interior angles of the targeted angle-bearing joints, degrees.
    pub angles: BTreeMap<JointId, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MistakeFlag {
    pub frame_id: String,
    pub candidate_index: usize,
    pub reference_index: usize,
    pub joint: JointId,
    pub deviation: f64,
    pub phase: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDetail {
    pub exercise_id: String,
    pub candidate_class: ClassLabel,
    pub targeted_joints: Vec<JointId>,
    pub frames: Vec<FrameDetail>,
    pub flags: Vec<MistakeFlag>,
    pub pace: PaceProfile,
    pub fast_phases: Vec<String>,
    pub rom_violations: Vec<RomViolation>,
    /// Candidate per-frame global normalization transforms.
    pub transforms: Vec<NormalizationTransform>,
    /// Transformer scores on the 0-100 scale, when a model was supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auxiliary: Option<ScoreTriple>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssessmentReport {
    pub name: String,
    pub class: BodyRegion,
    pub joint: f64,
    pub pace: f64,
    pub range: RangeScore,
    pub correction: Vec<Correction>,
    pub detail: ReportDetail,
}

impl AssessmentReport {
    pub fn validate(&self) -> Result<()> {
        let in_scale = |name: &str, v: f64| {
            if (0.0..=100.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} score {v} outside [0, 100]")))
            }
        };
        in_scale("joint", self.joint)?;
        in_scale("pace", self.pace)?;
        if let RangeScore::Score(v) = self.range {
            in_scale("range", v)?;
        }
        if let Some(aux) = self.detail.auxiliary {
            in_scale("auxiliary joint", aux.joint)?;
            in_scale("auxiliary pace", aux.pace)?;
            in_scale("auxiliary range", aux.range)?;
        }
        if let Some(c) = self.correction.iter().find(|c| c.frames.is_empty()) {
            return Err(Error::Config(format!(
                "correction {:?} cites no key frame",
                c.text
            )));
        }
        Ok(())
    }
}
