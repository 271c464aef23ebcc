//! Per-exercise configuration: targeted joints, reference ranges, phase
//! conventions, correction rules and scoring constants.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alignment::PhaseConfig;
use crate::error::{Error, Result};
use crate::io::read_json;
use crate::kinematics::default_rom_table;
use crate::skeleton::{AngleRange, JointId, DEFAULT_OCCLUSION_THRESHOLD};

/// Body region an exercise trains, as shown in the report's class column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BodyRegion {
    Upper,
    Lower,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// Candidate interior angle above the value, degrees.
    AngleAbove(f64),
    AngleBelow(f64),
    /// Normalized deviation from the reference above the value.
    DeviationAbove(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    #[serde(flatten)]
    pub condition: Condition,
    /// Restricts the rule to flags raised in this phase (or its numbered repeats).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionRule {
    pub joint: JointId,
    pub predicate: Predicate,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringConfig {
    /// Deviation a local maximum must exceed to be flagged.
    pub mistake_threshold: f64,
    /// Angular difference, degrees, that maps to deviation 1.
    pub deviation_scale_deg: f64,
    /// Arrows shorter than this, pixels, are dropped.
    pub min_arrow_px: f64,
    /// Weight of the duration term in the pace score; the warp term gets the rest.
    pub pace_duration_weight: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            mistake_threshold: 0.25,
            deviation_scale_deg: 45.0,
            min_arrow_px: 2.0,
            pace_duration_weight: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExerciseConfig {
    pub exercise_id: String,
    /// Name shown in reports; defaults to the exercise id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display_name: Option<String>,
    pub class: BodyRegion,
    /// Explicit joint selection; when absent, key joints are picked from the reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targeted_joints: Option<Vec<JointId>>,
    /// Expected interior-angle ranges; when absent the range score is not applicable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_angles: Option<BTreeMap<JointId, AngleRange>>,
    #[serde(default = "default_rom_table")]
    pub rom_limits: BTreeMap<JointId, AngleRange>,
    #[serde(default = "default_key_joint_threshold")]
    pub key_joint_threshold_deg: f64,
    #[serde(default = "default_occlusion_threshold")]
    pub occlusion_threshold: f64,
    #[serde(default)]
    pub phase: PhaseConfig,
    #[serde(default)]
    pub rules: Vec<CorrectionRule>,
    #[serde(default)]
    pub scoring: ScoringConfig,
}

fn default_key_joint_threshold() -> f64 {
    15.0
}

fn default_occlusion_threshold() -> f64 {
    DEFAULT_OCCLUSION_THRESHOLD
}

impl ExerciseConfig {
    pub fn new(exercise_id: impl Into<String>, class: BodyRegion) -> ExerciseConfig {
        ExerciseConfig {
            exercise_id: exercise_id.into(),
            display_name: None,
            class,
            targeted_joints: None,
            reference_angles: None,
            rom_limits: default_rom_table(),
            key_joint_threshold_deg: default_key_joint_threshold(),
            occlusion_threshold: default_occlusion_threshold(),
            phase: PhaseConfig::default(),
            rules: Vec::new(),
            scoring: ScoringConfig::default(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ExerciseConfig> {
        let config: ExerciseConfig = read_json(path.as_ref())?;
        config.validate()?;
        Ok(config)
    }

    pub fn name(&self) -> &str {
        self.display_name.as_deref().unwrap_or(&self.exercise_id)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        positive("key_joint_threshold_deg", self.key_joint_threshold_deg)?;
        unit("occlusion_threshold", self.occlusion_threshold)?;
        positive("phase.min_ratio", self.phase.min_ratio)?;
        positive("phase.min_swing_deg", self.phase.min_swing_deg)?;
        if self.phase.smoothing_window == 0 {
            return Err(Error::Config(
                "phase.smoothing_window must be at least 1".into(),
            ));
        }
        positive("scoring.mistake_threshold", self.scoring.mistake_threshold)?;
        positive(
            "scoring.deviation_scale_deg",
            self.scoring.deviation_scale_deg,
        )?;
        positive("scoring.min_arrow_px", self.scoring.min_arrow_px)?;
        unit(
            "scoring.pace_duration_weight",
            self.scoring.pace_duration_weight,
        )?;
        if let Some(joints) = &self.targeted_joints {
            if joints.len() < 2 {
                return Err(Error::Config(
                    "at least 2 targeted joints are required".into(),
                ));
            }
        }
        let ranges = self
            .reference_angles
            .iter()
            .flatten()
            .chain(&self.rom_limits);
        for (joint, range) in ranges {
            if !range.is_valid() {
                return Err(Error::Config(format!(
                    "angle range for {joint} is not a finite interval with min <= max"
                )));
            }
        }
        for rule in &self.rules {
            let v = match rule.predicate.condition {
                Condition::AngleAbove(v)
                | Condition::AngleBelow(v)
                | Condition::DeviationAbove(v) => v,
            };
            if !v.is_finite() {
                return Err(Error::Config(format!(
                    "rule for {} has a non-finite bound",
                    rule.joint
                )));
            }
        }
        Ok(())
    }
}
