//! Parametric single-repetition motion generator with controlled error
//! injection, emitting keypoint sequences and matching ground-truth annotations.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::alignment::{AngleDirection, PhaseConfig};
use crate::config::{BodyRegion, ExerciseConfig};
use crate::error::{Error, Result};
use crate::kinematics::{default_rom_table, frame_angle};
use crate::skeleton::{
    AngleRange, Annotation, ClassLabel, Frame, JointId, MistakeNote, ScoreTriple, Sequence, Vec2,
    JOINT_COUNT,
};

pub const MIN_FRAMES: usize = 8;

/// Limb lengths in torso units.
const UPPER_ARM: f64 = 0.55;
const FOREARM: f64 = 0.5;
const THIGH: f64 = 0.8;
const SHANK: f64 = 0.75;

/// Pixels per torso unit and the pixel position of the hip midpoint.
const PX_PER_UNIT: f64 = 120.0;
const ORIGIN_PX: (f64, f64) = (320.0, 300.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    Squat,
    Press,
    Pull,
}

impl Template {
    pub fn name(self) -> &'static str {
        match self {
            Template::Squat => "squat",
            Template::Press => "press",
            Template::Pull => "pull",
        }
    }

    /// Start angle and signed default excursion of every joint the template moves.
    pub fn driven(self) -> Vec<(JointId, f64, f64)> {
        use JointId::*;
        let both =
            |l: JointId, r: JointId, start: f64, delta: f64| [(l, start, delta), (r, start, delta)];
        match self {
            Template::Squat => [
                both(LeftHip, RightHip, 175.0, -80.0),
                both(LeftKnee, RightKnee, 175.0, -90.0),
            ]
            .concat(),
            Template::Press => [
                both(LeftShoulder, RightShoulder, 170.0, -80.0),
                both(LeftElbow, RightElbow, 170.0, -90.0),
            ]
            .concat(),
            Template::Pull => [
                both(LeftShoulder, RightShoulder, 170.0, -110.0),
                both(LeftElbow, RightElbow, 170.0, -110.0),
            ]
            .concat(),
        }
    }

    /// Pose of the joints the template holds still.
    pub fn fixed(self) -> Vec<(JointId, f64)> {
        use JointId::*;
        match self {
            Template::Squat => vec![
                (LeftShoulder, 30.0),
                (RightShoulder, 30.0),
                (LeftElbow, 160.0),
                (RightElbow, 160.0),
            ],
            Template::Press | Template::Pull => {
                vec![
                    (LeftHip, 175.0),
                    (RightHip, 175.0),
                    (LeftKnee, 175.0),
                    (RightKnee, 175.0),
                ]
            }
        }
    }

    pub fn targeted_joints(self) -> Vec<JointId> {
        use JointId::*;
        match self {
            Template::Squat => vec![
                LeftHip, RightHip, LeftKnee, RightKnee, LeftAnkle, RightAnkle,
            ],
            Template::Press | Template::Pull => {
                vec![
                    LeftShoulder,
                    RightShoulder,
                    LeftElbow,
                    RightElbow,
                    LeftWrist,
                    RightWrist,
                ]
            }
        }
    }

    pub fn primary_joint(self) -> JointId {
        match self {
            Template::Squat => JointId::LeftKnee,
            Template::Press | Template::Pull => JointId::LeftElbow,
        }
    }

    /// Whether the first half of the repetition (angles moving away from the
    /// start pose) is the lengthening phase.
    fn eccentric_first(self) -> bool {
        !matches!(self, Template::Pull)
    }

    pub fn region(self) -> BodyRegion {
        match self {
            Template::Squat => BodyRegion::Lower,
            Template::Press | Template::Pull => BodyRegion::Upper,
        }
    }

    /// Exercise configuration matching the template's conventions, without
    /// reference ranges.
    pub fn exercise_config(self) -> ExerciseConfig {
        let mut c = ExerciseConfig::new(self.name(), self.region());
        c.targeted_joints = Some(self.targeted_joints());
        c.phase = PhaseConfig {
            primary_joint: self.primary_joint(),
            eccentric_direction: if self.eccentric_first() {
                AngleDirection::Decreasing
            } else {
                AngleDirection::Increasing
            },
            ..PhaseConfig::default()
        };
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorType {
    /// Extra flexion at the joint, degrees.
    AngleOffsetDeg,
    /// Playback speed multiplier for the phase.
    SpeedFactor,
    /// Fraction of the joint's excursion removed.
    RomTruncationFraction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseSelector {
    #[default]
    All,
    Eccentric,
    Concentric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedError {
    pub joint: JointId,
    #[serde(rename = "type")]
    pub kind: ErrorType,
    pub magnitude: f64,
    #[serde(default)]
    pub phase: PhaseSelector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    pub template: Template,
    pub n_frames: usize,
    pub fps: f64,
    /// Excursion magnitude per driven joint, degrees; unlisted joints keep the template's.
    #[serde(default)]
    pub amplitude_deg: BTreeMap<JointId, f64>,
    /// Gaussian pixel noise standard deviation.
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub injected_errors: Vec<InjectedError>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exercise_id: Option<String>,
    /// Label echoed into the sequence; defaults to correct when no errors are injected.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<ClassLabel>,
}

impl MotionSpec {
    pub fn new(template: Template, n_frames: usize, fps: f64) -> MotionSpec {
        MotionSpec {
            template,
            n_frames,
            fps,
            amplitude_deg: BTreeMap::new(),
            noise_std: 0.0,
            injected_errors: Vec::new(),
            exercise_id: None,
            class: None,
        }
    }

    pub fn with_error(
        mut self,
        joint: JointId,
        kind: ErrorType,
        magnitude: f64,
        phase: PhaseSelector,
    ) -> MotionSpec {
        self.injected_errors.push(InjectedError {
            joint,
            kind,
            magnitude,
            phase,
        });
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::MotionSpec(m));
        if self.n_frames < MIN_FRAMES {
            return bad(format!(
                "n_frames {} is below the minimum of {MIN_FRAMES}",
                self.n_frames
            ));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return bad(format!(
                "noise_std must be non-negative, got {}",
                self.noise_std
            ));
        }
        let driven: Vec<JointId> = self.template.driven().iter().map(|d| d.0).collect();
        for (joint, a) in &self.amplitude_deg {
            if !driven.contains(joint) {
                return bad(format!(
                    "{joint} is not driven by the {} template",
                    self.template.name()
                ));
            }
            if !a.is_finite() {
                return bad(format!("amplitude for {joint} is not finite"));
            }
        }
        let angled: Vec<JointId> = driven
            .iter()
            .copied()
            .chain(self.template.fixed().iter().map(|f| f.0))
            .collect();
        for e in &self.injected_errors {
            if !e.magnitude.is_finite() {
                return bad(format!("error magnitude for {} is not finite", e.joint));
            }
            match e.kind {
                ErrorType::AngleOffsetDeg => {
                    if !angled.contains(&e.joint) {
                        return bad(format!("{} has no generated angle to offset", e.joint));
                    }
                }
                ErrorType::SpeedFactor => {
                    if e.magnitude <= 0.0 {
                        return bad(format!(
                            "speed_factor must be positive, got {}",
                            e.magnitude
                        ));
                    }
                }
                ErrorType::RomTruncationFraction => {
                    if !(0.0..=1.0).contains(&e.magnitude) {
                        return bad(format!(
                            "rom_truncation_fraction must lie in [0, 1], got {}",
                            e.magnitude
                        ));
                    }
                    if e.phase != PhaseSelector::All {
                        return bad(
                            "rom_truncation_fraction applies to the whole repetition".into()
                        );
                    }
                    if !driven.contains(&e.joint) {
                        return bad(format!(
                            "{} is not driven by the {} template",
                            e.joint,
                            self.template.name()
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Normalized repetition progress: 0 at the start and end, 1 at the turn.
fn progress(s: f64) -> f64 {
    (1.0 - (2.0 * PI * s).cos()) / 2.0
}

fn rotate(v: Vec2, deg: f64) -> Vec2 {
    let (s, c) = deg.to_radians().sin_cos();
    Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

/// Forward kinematics for a frontal figure in body units (y up, subject's
/// left at +x). Each angle is the interior angle at that joint.
fn pose(angles: &BTreeMap<JointId, f64>) -> [Vec2; JOINT_COUNT] {
    use JointId::*;
    let mut p = [Vec2::zeros(); JOINT_COUNT];
    let mut put = |j: JointId, v: Vec2| p[j.index()] = v;
    put(Nose, Vec2::new(0.0, 1.35));
    put(LeftEye, Vec2::new(0.06, 1.42));
    put(RightEye, Vec2::new(-0.06, 1.42));
    put(LeftEar, Vec2::new(0.12, 1.38));
    put(RightEar, Vec2::new(-0.12, 1.38));
    for (side, sh, el, wr, hp, kn, an) in [
        (
            1.0,
            LeftShoulder,
            LeftElbow,
            LeftWrist,
            LeftHip,
            LeftKnee,
            LeftAnkle,
        ),
        (
            -1.0,
            RightShoulder,
            RightElbow,
            RightWrist,
            RightHip,
            RightKnee,
            RightAnkle,
        ),
    ] {
        let shoulder = Vec2::new(0.2 * side, 1.0);
        let hip = Vec2::new(0.15 * side, 0.0);
        let down = (hip - shoulder).normalize();
        let elbow = shoulder + UPPER_ARM * rotate(down, side * angles[&sh]);
        let wrist = elbow + FOREARM * rotate((shoulder - elbow).normalize(), -side * angles[&el]);
        let up = (shoulder - hip).normalize();
        let knee = hip + THIGH * rotate(up, -side * angles[&hp]);
        let ankle = knee + SHANK * rotate((hip - knee).normalize(), side * angles[&kn]);
        put(sh, shoulder);
        put(el, elbow);
        put(wr, wrist);
        put(hp, hip);
        put(kn, knee);
        put(an, ankle);
    }
    p.map(|v| {
        Vec2::new(
            ORIGIN_PX.0 + PX_PER_UNIT * v.x,
            ORIGIN_PX.1 - PX_PER_UNIT * v.y,
        )
    })
}

fn in_phase(selector: PhaseSelector, first_half: bool, eccentric_first: bool) -> bool {
    match selector {
        PhaseSelector::All => true,
        PhaseSelector::Eccentric => first_half == eccentric_first,
        PhaseSelector::Concentric => first_half != eccentric_first,
    }
}

/// Interior angles of every generated joint at frame `k`, with or without
/// the injected errors.
fn angles_at(spec: &MotionSpec, k: usize, inject: bool) -> BTreeMap<JointId, f64> {
    let s = k as f64 / (spec.n_frames - 1) as f64;
    let first_half = s <= 0.5;
    let p = progress(s);
    let t = spec.template;
    let mut out: BTreeMap<JointId, f64> = t.fixed().into_iter().collect();
    for (joint, start, delta) in t.driven() {
        let mut amp = spec
            .amplitude_deg
            .get(&joint)
            .copied()
            .unwrap_or(delta.abs());
        if inject {
            for e in spec.injected_errors.iter().filter(|e| e.joint == joint) {
                if e.kind == ErrorType::RomTruncationFraction {
                    amp *= 1.0 - e.magnitude;
                }
            }
        }
        out.insert(joint, start + delta.signum() * amp * p);
    }
    if inject {
        for e in &spec.injected_errors {
            if e.kind == ErrorType::AngleOffsetDeg
                && in_phase(e.phase, first_half, t.eccentric_first())
            {
                *out.get_mut(&e.joint).unwrap() -= e.magnitude;
            }
        }
    }
    out
}

fn timestamps(spec: &MotionSpec) -> Vec<f64> {
    let n = spec.n_frames;
    let mut t = vec![0.0; n];
    for k in 1..n {
        let first_half = (k as f64 - 0.5) / (n - 1) as f64 <= 0.5;
        let mut dt = 1.0 / spec.fps;
        for e in &spec.injected_errors {
            if e.kind == ErrorType::SpeedFactor
                && in_phase(e.phase, first_half, spec.template.eccentric_first())
            {
                dt /= e.magnitude;
            }
        }
        t[k] = t[k - 1] + dt;
    }
    t
}

/// Clean, noise-free keypoints for every frame.
pub fn clean_points(spec: &MotionSpec) -> Vec<[Vec2; JOINT_COUNT]> {
    (0..spec.n_frames)
        .map(|k| pose(&angles_at(spec, k, false)))
        .collect()
}

/// Interior angles fed to forward kinematics at each frame, errors included.
pub fn target_angles(spec: &MotionSpec) -> Vec<BTreeMap<JointId, f64>> {
    (0..spec.n_frames)
        .map(|k| angles_at(spec, k, true))
        .collect()
}

/// Deterministic sequence and ground-truth annotation for `spec`.
pub fn generate(spec: &MotionSpec, seed: u64) -> Result<(Sequence, Annotation)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::MotionSpec(e.to_string()))?;
    let times = timestamps(spec);
    let frames = (0..spec.n_frames)
        .map(|k| {
            let mut points = pose(&angles_at(spec, k, true));
            if spec.noise_std > 0.0 {
                for p in points.iter_mut() {
                    p.x += noise.sample(&mut rng);
                    p.y += noise.sample(&mut rng);
                }
            }
            Frame::from_points(k.to_string(), times[k], points)
        })
        .collect::<Result<Vec<_>>>()?;
    let exercise_id = spec
        .exercise_id
        .clone()
        .unwrap_or_else(|| spec.template.name().to_string());
    let class = spec.class.unwrap_or(if spec.injected_errors.is_empty() {
        ClassLabel::Correct
    } else {
        ClassLabel::Wrong
    });
    let seq = Sequence::new(exercise_id.clone(), class, Some(spec.fps), frames)?;

    let clean: Vec<Frame> = clean_points(spec)
        .into_iter()
        .enumerate()
        .map(|(k, p)| Frame::from_points(k.to_string(), k as f64, p))
        .collect::<Result<_>>()?;
    let mut reference_angles = BTreeMap::new();
    for (joint, _, _) in spec.template.driven() {
        let series: Vec<f64> = clean
            .iter()
            .filter_map(|f| frame_angle(f, joint).ok())
            .collect();
        let lo = series.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        reference_angles.insert(joint, AngleRange::new(lo, hi));
    }

    let n = spec.n_frames;
    let mut per_frame_mistakes = Vec::new();
    let mut scores = ScoreTriple {
        joint: 100.0,
        pace: 100.0,
        range: 100.0,
    };
    for e in &spec.injected_errors {
        let frames: Vec<usize> = match e.kind {
            ErrorType::RomTruncationFraction => vec![(n - 1) / 2],
            _ => (0..n)
                .filter(|&k| {
                    in_phase(
                        e.phase,
                        k as f64 / (n - 1) as f64 <= 0.5,
                        spec.template.eccentric_first(),
                    )
                })
                .collect(),
        };
        let note = match e.kind {
            ErrorType::AngleOffsetDeg => {
                scores.joint = 0.0;
                format!("angle offset {} deg", e.magnitude)
            }
            ErrorType::SpeedFactor => {
                scores.pace = 0.0;
                format!("speed factor {}", e.magnitude)
            }
            ErrorType::RomTruncationFraction => {
                scores.range = 0.0;
                format!("range truncated by {}", e.magnitude)
            }
        };
        per_frame_mistakes.extend(frames.into_iter().map(|k| MistakeNote {
            frame_id: k.to_string(),
            joint: e.joint,
            note: note.clone(),
        }));
    }
    let annotation = Annotation {
        exercise_id,
        targeted_joints: spec.template.targeted_joints(),
        reference_angles,
        rom_limits: default_rom_table(),
        per_frame_mistakes,
        scores: Some(scores),
    };
    Ok((seq, annotation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::angle_series;
    use proptest::prelude::*;

    const TEMPLATES: [Template; 3] = [Template::Squat, Template::Press, Template::Pull];

    #[test]
    fn generated_angles_are_measured_back() {
        for t in TEMPLATES {
            let spec = MotionSpec::new(t, 21, 30.0);
            let (seq, _) = generate(&spec, 0).unwrap();
            for (k, target) in target_angles(&spec).iter().enumerate() {
                for (&joint, &angle) in target {
                    let measured = frame_angle(&seq.frames()[k], joint).unwrap();
                    assert!(
                        (measured - angle).abs() < 1e-9,
                        "{t:?} {joint} frame {k}: {measured} vs {angle}"
                    );
                }
            }
        }
    }

    #[test]
    fn zero_amplitude_is_static() {
        for t in TEMPLATES {
            let mut spec = MotionSpec::new(t, 10, 30.0);
            for (j, _, _) in t.driven() {
                spec.amplitude_deg.insert(j, 0.0);
            }
            let (seq, _) = generate(&spec, 3).unwrap();
            assert!(seq
                .frames()
                .iter()
                .all(|f| f.points() == seq.first().points()));
        }
    }

    #[test]
    fn angle_offset_shifts_only_its_joint() {
        let clean = MotionSpec::new(Template::Press, 25, 30.0);
        let hurt = clean.clone().with_error(
            JointId::LeftElbow,
            ErrorType::AngleOffsetDeg,
            30.0,
            PhaseSelector::All,
        );
        let (a, _) = generate(&clean, 1).unwrap();
        let (b, ann) = generate(&hurt, 1).unwrap();
        let ea = angle_series(&a, JointId::LeftElbow).unwrap();
        let eb = angle_series(&b, JointId::LeftElbow).unwrap();
        for (x, y) in ea.iter().zip(&eb) {
            assert!((x - y - 30.0).abs() < 0.01);
        }
        let sa = angle_series(&a, JointId::LeftShoulder).unwrap();
        let sb = angle_series(&b, JointId::LeftShoulder).unwrap();
        assert_eq!(sa, sb);
        assert_eq!(b.class_label(), ClassLabel::Wrong);
        assert_eq!(ann.scores.unwrap().joint, 0.0);
        assert_eq!(ann.per_frame_mistakes.len(), 25);
    }

    #[test]
    fn eccentric_offset_is_confined() {
        let spec = MotionSpec::new(Template::Squat, 21, 30.0).with_error(
            JointId::LeftKnee,
            ErrorType::AngleOffsetDeg,
            10.0,
            PhaseSelector::Eccentric,
        );
        let target = target_angles(&spec);
        let clean = target_angles(&MotionSpec::new(Template::Squat, 21, 30.0));
        for k in 0..21 {
            let d = clean[k][&JointId::LeftKnee] - target[k][&JointId::LeftKnee];
            assert_eq!(d, if k <= 10 { 10.0 } else { 0.0 });
        }
    }

    #[test]
    fn speed_factor_halves_duration() {
        let clean = MotionSpec::new(Template::Squat, 31, 30.0);
        let fast = clean.clone().with_error(
            JointId::LeftKnee,
            ErrorType::SpeedFactor,
            2.0,
            PhaseSelector::All,
        );
        let (a, _) = generate(&clean, 0).unwrap();
        let (b, ann) = generate(&fast, 0).unwrap();
        assert_eq!(b.duration(), a.duration() / 2.0);
        assert_eq!(ann.scores.unwrap().pace, 0.0);
    }

    #[test]
    fn truncation_shrinks_range() {
        let spec = MotionSpec::new(Template::Squat, 41, 30.0).with_error(
            JointId::LeftKnee,
            ErrorType::RomTruncationFraction,
            0.5,
            PhaseSelector::All,
        );
        let (seq, ann) = generate(&spec, 0).unwrap();
        let s = angle_series(&seq, JointId::LeftKnee).unwrap();
        let span =
            s.iter().copied().fold(f64::MIN, f64::max) - s.iter().copied().fold(f64::MAX, f64::min);
        let reference = ann.reference_angles[&JointId::LeftKnee].width();
        assert!((reference - 90.0).abs() < 1e-6);
        assert!((span - 45.0).abs() < 1e-6);
    }

    #[test]
    fn invalid_specs() {
        assert!(matches!(
            generate(&MotionSpec::new(Template::Squat, 4, 30.0), 0),
            Err(Error::MotionSpec(_))
        ));
        let mut s = MotionSpec::new(Template::Squat, 10, 30.0);
        s.noise_std = -1.0;
        assert!(generate(&s, 0).is_err());
        let s = MotionSpec::new(Template::Squat, 10, 30.0).with_error(
            JointId::LeftKnee,
            ErrorType::RomTruncationFraction,
            0.5,
            PhaseSelector::Eccentric,
        );
        assert!(generate(&s, 0).is_err());
        let s = MotionSpec::new(Template::Press, 10, 30.0).with_error(
            JointId::Nose,
            ErrorType::AngleOffsetDeg,
            5.0,
            PhaseSelector::All,
        );
        assert!(generate(&s, 0).is_err());
        let s = MotionSpec::new(Template::Press, 10, 30.0).with_error(
            JointId::Nose,
            ErrorType::SpeedFactor,
            0.0,
            PhaseSelector::All,
        );
        assert!(generate(&s, 0).is_err());
    }

    #[test]
    fn spec_json_shape() {
        let json = r#"{"template": "squat", "n_frames": 30, "fps": 30,
            "injected_errors": [{"joint": "left_knee", "type": "angle_offset_deg", "magnitude": 20, "phase": "eccentric"}]}"#;
        let spec: MotionSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.injected_errors[0].kind, ErrorType::AngleOffsetDeg);
        assert_eq!(spec.noise_std, 0.0);
        spec.validate().unwrap();
    }

    proptest! {
        #[test]
        fn deterministic(seed in any::<u64>(), noise in 0.0..3.0f64, n in 8usize..40) {
            let mut spec = MotionSpec::new(Template::Pull, n, 25.0);
            spec.noise_std = noise;
            let (a, aa) = generate(&spec, seed).unwrap();
            let (b, bb) = generate(&spec, seed).unwrap();
            prop_assert_eq!(a, b);
            prop_assert_eq!(aa, bb);
        }
    }
}
