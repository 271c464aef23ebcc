//! Rule-based scoring of a candidate repetition against a reference:
//! joint alignment, pace and range of motion, with per-frame mistake flags,
//! correction texts and visual aids.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::alignment::{
    detect_fast_eccentric, dtw_align, pace_profile, PaceProfile, Phase, WarpPath,
};
use crate::config::{Condition, CorrectionRule, ExerciseConfig};
use crate::correction::{aid_for_frame, VisualAid};
use crate::error::{Error, Result};
use crate::kinematics::{
    angle_between, angle_series, cosine_similarity, has_angle, joint_angle, joint_vectors,
    proximal, rom_check, select_key_joints, shared_pairs, JointVectorField,
};
use crate::normalization::{normalize_global, CanonicalSkeleton};
use crate::report::{
    AssessmentReport, Correction, FrameDetail, MistakeFlag, RangeScore, ReportDetail,
};
use crate::skeleton::{AngleRange, JointId, Sequence};

/// Globally normalized skeletons and descriptors for every frame.
pub fn describe(
    seq: &Sequence,
    targeted: &[JointId],
) -> Result<(Vec<CanonicalSkeleton>, Vec<JointVectorField>)> {
    let skeletons = seq
        .frames()
        .par_iter()
        .map(normalize_global)
        .collect::<Result<Vec<_>>>()?;
    let fields = skeletons
        .par_iter()
        .map(|s| joint_vectors(s, targeted))
        .collect::<Result<Vec<_>>>()?;
    Ok((skeletons, fields))
}

/// Mean of `(cos + 1) / 2` over every path pair and every shared vector pair, times 100.
pub fn joint_score_fields(
    cand: &[JointVectorField],
    reference: &[JointVectorField],
    path: &WarpPath,
) -> Result<f64> {
    if !path.is_valid(cand.len(), reference.len()) {
        return Err(Error::Shape(
            "warp path does not match descriptor lengths".into(),
        ));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for &(i, j) in &path.pairs {
        for (u, v) in shared_pairs(&cand[i], &reference[j])? {
            sum += (cosine_similarity(u.direction, v.direction) + 1.0) / 2.0;
            count += 1;
        }
    }
    Ok((100.0 * sum / count as f64).clamp(0.0, 100.0))
}

pub fn joint_score(
    cand: &Sequence,
    reference: &Sequence,
    targeted: &[JointId],
    path: &WarpPath,
) -> Result<f64> {
    let (_, cf) = describe(cand, targeted)?;
    let (_, rf) = describe(reference, targeted)?;
    joint_score_fields(&cf, &rf, path)
}

/// Blend of a duration-ratio term and a warp-straightness term, 0-100.
pub fn pace_score_weighted(profile: &PaceProfile, duration_weight: f64) -> f64 {
    let duration = (1.0 - profile.duration_ratio.log2().abs()).max(0.0);
    let warp = 1.0 - profile.warp_deviation;
    (100.0 * (duration_weight * duration + (1.0 - duration_weight) * warp)).clamp(0.0, 100.0)
}

pub fn pace_score(profile: &PaceProfile) -> f64 {
    pace_score_weighted(profile, 0.5)
}

/// Achieved angle span over expected span, clamped to [0, 1] and averaged over
/// the joints with a reference range, times 100. A zero-width reference range
/// counts as fully achieved.
pub fn range_score(
    cand: &Sequence,
    reference_angles: Option<&BTreeMap<JointId, AngleRange>>,
) -> RangeScore {
    let Some(ranges) = reference_angles else {
        return RangeScore::NotApplicable;
    };
    let ratios: Vec<f64> = ranges
        .iter()
        .filter_map(|(&joint, range)| {
            let series = match angle_series(cand, joint) {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("no range for {joint}: {e}");
                    return None;
                }
            };
            let (lo, hi) = series
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| {
                    (lo.min(a), hi.max(a))
                });
            let width = range.width();
            Some(if width <= 0.0 {
                1.0
            } else {
                ((hi - lo) / width).clamp(0.0, 1.0)
            })
        })
        .collect();
    if ratios.is_empty() {
        return RangeScore::NotApplicable;
    }
    RangeScore::Score(100.0 * ratios.iter().sum::<f64>() / ratios.len() as f64)
}

/// Per path step, per targeted joint deviation in [0, 1].
///
/// Angle-bearing joints compare interior angles. End joints whose parent joint
/// is also targeted are covered by the parent. Other end joints compare the
/// directions of their outgoing descriptor vectors. Differences are divided
/// by `scale_deg` and capped at 1.
pub fn frame_detail(
    cand: (&[CanonicalSkeleton], &[JointVectorField]),
    reference: (&[CanonicalSkeleton], &[JointVectorField]),
    targeted: &[JointId],
    path: &WarpPath,
    scale_deg: f64,
) -> Result<Vec<FrameDetail>> {
    let (cs, cf) = cand;
    let (rs, rf) = reference;
    if !path.is_valid(cs.len(), rs.len()) || cs.len() != cf.len() || rs.len() != rf.len() {
        return Err(Error::Shape(
            "frame detail inputs do not match the warp path".into(),
        ));
    }
    let covered = |j: JointId| {
        !has_angle(j) && proximal(j).is_some_and(|p| targeted.contains(&p) && has_angle(p))
    };
    path.pairs
        .iter()
        .map(|&(i, j)| {
            let mut deviations = BTreeMap::new();
            let mut angles = BTreeMap::new();
            for &joint in targeted {
                if has_angle(joint) {
                    if let (Ok(a), Ok(b)) = (joint_angle(&cs[i], joint), joint_angle(&rs[j], joint))
                    {
                        angles.insert(joint, a);
                        deviations.insert(joint, ((a - b).abs() / scale_deg).min(1.0));
                    }
                } else if !covered(joint) {
                    let diffs: Vec<f64> = shared_pairs(&cf[i], &rf[j])?
                        .into_iter()
                        .filter(|(u, _)| u.from == joint)
                        .map(|(u, v)| angle_between(u.direction, v.direction).to_degrees())
                        .collect();
                    if !diffs.is_empty() {
                        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
                        deviations.insert(joint, (mean / scale_deg).min(1.0));
                    }
                }
            }
            Ok(FrameDetail {
                candidate_index: i,
                reference_index: j,
                candidate_frame: cs[i].frame_id.clone(),
                reference_frame: rs[j].frame_id.clone(),
                deviations,
                angles,
            })
        })
        .collect()
}

fn phase_of(phases: &[Phase], index: usize) -> String {
    phases
        .iter()
        .find(|p| p.start <= index && index <= p.end)
        .map_or_else(|| "full".to_string(), |p| p.name.clone())
}

/// Local maxima of each joint's deviation along the path that exceed
/// `threshold`, keeping the largest (earliest on ties) per joint and phase.
///
/// A step is a local maximum when it is at least its predecessor and strictly
/// above its successor; steps without a value for the joint do not count as
/// neighbors. Results are ordered by path position, then joint.
pub fn flag_mistakes(detail: &[FrameDetail], phases: &[Phase], threshold: f64) -> Vec<MistakeFlag> {
    let mut best: BTreeMap<(JointId, String), usize> = BTreeMap::new();
    let joints: std::collections::BTreeSet<JointId> = detail
        .iter()
        .flat_map(|d| d.deviations.keys().copied())
        .collect();
    for joint in joints {
        let value = |k: usize| detail[k].deviations.get(&joint).copied();
        for k in 0..detail.len() {
            let Some(v) = value(k) else { continue };
            let prev_ok = k == 0 || value(k - 1).is_none_or(|p| v >= p);
            let next_ok = k + 1 == detail.len() || value(k + 1).is_none_or(|n| v > n);
            if v > threshold && prev_ok && next_ok {
                let phase = phase_of(phases, detail[k].candidate_index);
                let slot = best.entry((joint, phase)).or_insert(k);
                if v > value(*slot).unwrap() {
                    *slot = k;
                }
            }
        }
    }
    let mut flags: Vec<(usize, MistakeFlag)> = best
        .into_iter()
        .map(|((joint, phase), k)| {
            let d = &detail[k];
            (
                k,
                MistakeFlag {
                    frame_id: d.candidate_frame.clone(),
                    candidate_index: d.candidate_index,
                    reference_index: d.reference_index,
                    joint,
                    deviation: d.deviations[&joint],
                    phase,
                    angle: d.angles.get(&joint).copied(),
                },
            )
        })
        .collect();
    flags.sort_by_key(|(k, f)| (*k, f.joint));
    flags.into_iter().map(|(_, f)| f).collect()
}

fn phase_matches(rule_phase: Option<&str>, phase: &str) -> bool {
    match rule_phase {
        None => true,
        Some(p) => {
            phase == p
                || phase
                    .strip_prefix(p)
                    .is_some_and(|rest| rest.starts_with('_'))
        }
    }
}

fn rule_matches(rule: &CorrectionRule, flag: &MistakeFlag) -> bool {
    rule.joint == flag.joint
        && phase_matches(rule.predicate.phase.as_deref(), &flag.phase)
        && match rule.predicate.condition {
            Condition::AngleAbove(v) => flag.angle.is_some_and(|a| a > v),
            Condition::AngleBelow(v) => flag.angle.is_some_and(|a| a < v),
            Condition::DeviationAbove(v) => flag.deviation > v,
        }
}

pub fn generic_feedback(joint: JointId) -> String {
    format!("adjust {} toward reference", joint.label())
}

/// One message per flag: the first matching rule, or a generic hint.
pub fn textual_feedback(flags: &[MistakeFlag], rules: &[CorrectionRule]) -> Vec<String> {
    flags
        .iter()
        .map(|f| {
            rules
                .iter()
                .find(|r| rule_matches(r, f))
                .map_or_else(|| generic_feedback(f.joint), |r| r.message.clone())
        })
        .collect()
}

/// Merge flags with identical (message, joint) into one correction listing their frames.
pub fn group_corrections(flags: &[MistakeFlag], texts: &[String]) -> Vec<Correction> {
    let mut out: Vec<Correction> = Vec::new();
    for (flag, text) in flags.iter().zip(texts) {
        match out
            .iter_mut()
            .find(|c| &c.text == text && c.joint == flag.joint)
        {
            Some(c) => {
                if !c.frames.contains(&flag.frame_id) {
                    c.frames.push(flag.frame_id.clone());
                }
            }
            None => out.push(Correction {
                text: text.clone(),
                joint: flag.joint,
                frames: vec![flag.frame_id.clone()],
            }),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assessment {
    pub report: AssessmentReport,
    pub aids: Vec<VisualAid>,
}

/// Targeted joints: the configured list, else key joints of the reference.
pub fn targeted_joints(reference: &Sequence, config: &ExerciseConfig) -> Result<Vec<JointId>> {
    let joints = match &config.targeted_joints {
        Some(j) => j.clone(),
        None => select_key_joints(reference, config.key_joint_threshold_deg)?,
    };
    if joints.len() < 2 {
        return Err(Error::Config(format!(
            "{} targeted joints found, at least 2 are required; list them in the exercise config",
            joints.len()
        )));
    }
    Ok(joints)
}

/// The full pipeline for one candidate against one reference.
pub fn assess(
    candidate: &Sequence,
    reference: &Sequence,
    config: &ExerciseConfig,
) -> Result<Assessment> {
    config.validate()?;
    let targeted = targeted_joints(reference, config)?;
    let (cs, cf) = describe(candidate, &targeted)?;
    let (rs, rf) = describe(reference, &targeted)?;
    let path = dtw_align(&cf, &rf)?;

    let joint = joint_score_fields(&cf, &rf, &path)?;
    let profile = pace_profile(candidate, reference, &path, &config.phase)?;
    let pace = pace_score_weighted(&profile, config.scoring.pace_duration_weight);
    let range = range_score(candidate, config.reference_angles.as_ref());
    let fast_phases = detect_fast_eccentric(&profile, config.phase.min_ratio);

    let detail = frame_detail(
        (&cs, &cf),
        (&rs, &rf),
        &targeted,
        &path,
        config.scoring.deviation_scale_deg,
    )?;
    let flags = flag_mistakes(
        &detail,
        &profile.candidate_phases,
        config.scoring.mistake_threshold,
    );
    let texts = textual_feedback(&flags, &config.rules);
    let correction = group_corrections(&flags, &texts);

    let mut by_frame: BTreeMap<usize, Vec<(usize, &MistakeFlag, &String)>> = BTreeMap::new();
    for (flag, text) in flags.iter().zip(&texts) {
        by_frame
            .entry(flag.candidate_index)
            .or_default()
            .push((flag.reference_index, flag, text));
    }
    let mut aids = Vec::new();
    for (ci, group) in by_frame {
        let mut captions: Vec<&str> = Vec::new();
        for (_, _, t) in &group {
            if !captions.contains(&t.as_str()) {
                captions.push(t);
            }
        }
        let caption = captions.join("; ");
        let mut by_ref: BTreeMap<usize, Vec<JointId>> = BTreeMap::new();
        for (ri, flag, _) in &group {
            by_ref.entry(*ri).or_default().push(flag.joint);
        }
        let mut arrows = Vec::new();
        for (ri, joints) in by_ref {
            let aid = aid_for_frame(
                &candidate.frames()[ci],
                &reference.frames()[ri],
                &joints,
                &caption,
                config.scoring.min_arrow_px,
            )?;
            arrows.extend(aid.arrows);
        }
        if arrows.is_empty() {
            continue;
        }
        arrows.sort_by_key(|a| (a.joint, a.marker));
        aids.push(VisualAid {
            frame_id: candidate.frames()[ci].id().to_string(),
            arrows,
            caption,
        });
    }

    let report = AssessmentReport {
        name: format!("{}({})", config.name(), candidate.class_label().tag()),
        class: config.class,
        joint,
        pace,
        range,
        correction,
        detail: ReportDetail {
            exercise_id: config.exercise_id.clone(),
            candidate_class: candidate.class_label(),
            targeted_joints: targeted,
            frames: detail,
            flags,
            pace: profile,
            fast_phases,
            rom_violations: rom_check(candidate, &config.rom_limits),
            transforms: cs.iter().map(|s| s.transform).collect(),
            auxiliary: None,
        },
    };
    report.validate()?;
    Ok(Assessment { report, aids })
}
