//! Corrective visual aids: arrows from mispositioned candidate joints to where
//! the reference pose puts them, drawn over the candidate's own pixel frame.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kinematics::{distal, has_angle};
use crate::normalization::{invert, normalize_local, CanonicalSkeleton, NormalizationTransform};
use crate::skeleton::{Frame, JointId, Vec2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arrow {
    /// The flagged joint this arrow corrects.
    pub joint: JointId,
    /// The joint the arrow is drawn on (the flagged joint, or the end of the
    /// bone it drives).
    pub marker: JointId,
    pub from: Vec2,
    pub to: Vec2,
}

impl Arrow {
    pub fn length(&self) -> f64 {
        (self.to - self.from).norm()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualAid {
    pub frame_id: String,
    pub arrows: Vec<Arrow>,
    pub caption: String,
}

/// Arrows for `flags` from the candidate pixel position to the reference
/// canonical position mapped back through `cand_transform`. Joints occluded in
/// either frame are skipped; arrows shorter than `min_arrow_px` are dropped.
pub fn build_aid(
    cand_frame: &Frame,
    cand_transform: &NormalizationTransform,
    reference: &CanonicalSkeleton,
    flags: &[JointId],
    caption: &str,
    min_arrow_px: f64,
) -> VisualAid {
    let mut joints = flags.to_vec();
    joints.sort();
    joints.dedup();
    let arrows = joints
        .into_iter()
        .filter(|&j| {
            let hidden = cand_frame.is_occluded(j) || reference.is_occluded(j);
            if hidden {
                log::warn!(
                    "frame {}: flagged joint {j} is occluded, no arrow",
                    cand_frame.id()
                );
            }
            !hidden
        })
        .map(|j| Arrow {
            joint: j,
            marker: j,
            from: cand_frame.point(j),
            to: invert(cand_transform, reference.point(j)),
        })
        .filter(|a| a.length() >= min_arrow_px)
        .collect();
    VisualAid {
        frame_id: cand_frame.id().to_string(),
        arrows,
        caption: caption.to_string(),
    }
}

/// Anchor joint for the local comparison and the joint the arrow lands on.
///
/// A joint with an interior angle is corrected by moving the end of the bone
/// it drives, with the joint itself held fixed; any other joint is drawn on
/// itself relative to the same-side shoulder (head and arms) or hip (legs).
pub fn arrow_plan(joint: JointId) -> (JointId, JointId) {
    if has_angle(joint) {
        if let Some(end) = distal(joint) {
            return (joint, end);
        }
    }
    let right = joint.is_right();
    let root = match (joint.is_upper_body(), right) {
        (true, false) => JointId::LeftShoulder,
        (true, true) => JointId::RightShoulder,
        (false, false) => JointId::LeftHip,
        (false, true) => JointId::RightHip,
    };
    (root, joint)
}

/// Visual aid for one candidate key frame against its aligned reference frame,
/// comparing limbs in local coordinates anchored per [`arrow_plan`].
pub fn aid_for_frame(
    cand_frame: &Frame,
    ref_frame: &Frame,
    flags: &[JointId],
    caption: &str,
    min_arrow_px: f64,
) -> Result<VisualAid> {
    let mut by_root: BTreeMap<JointId, Vec<(JointId, JointId)>> = BTreeMap::new();
    for &joint in flags {
        let (root, marker) = arrow_plan(joint);
        by_root.entry(root).or_default().push((joint, marker));
    }
    let mut arrows = Vec::new();
    for (root, plans) in by_root {
        let (cand, reference) = match (
            normalize_local(cand_frame, root),
            normalize_local(ref_frame, root),
        ) {
            (Ok(c), Ok(r)) => (c, r),
            (Err(e), _) | (_, Err(e)) => {
                log::warn!(
                    "frame {}: no local view around {root}: {e}",
                    cand_frame.id()
                );
                continue;
            }
        };
        for (joint, marker) in plans {
            let aid = build_aid(
                cand_frame,
                &cand.transform,
                &reference,
                &[marker],
                caption,
                min_arrow_px,
            );
            arrows.extend(aid.arrows.into_iter().map(|a| Arrow { joint, ..a }));
        }
    }
    arrows.sort_by_key(|a| (a.joint, a.marker));
    arrows.dedup_by_key(|a| (a.joint, a.marker));
    Ok(VisualAid {
        frame_id: cand_frame.id().to_string(),
        arrows,
        caption: caption.to_string(),
    })
}

/// COCO limb segments drawn in overlays.
pub const LIMBS: [(JointId, JointId); 16] = {
    use JointId::*;
    [
        (Nose, LeftEye),
        (Nose, RightEye),
        (LeftEye, LeftEar),
        (RightEye, RightEar),
        (LeftShoulder, RightShoulder),
        (LeftShoulder, LeftElbow),
        (LeftElbow, LeftWrist),
        (RightShoulder, RightElbow),
        (RightElbow, RightWrist),
        (LeftShoulder, LeftHip),
        (RightShoulder, RightHip),
        (LeftHip, RightHip),
        (LeftHip, LeftKnee),
        (LeftKnee, LeftAnkle),
        (RightHip, RightKnee),
        (RightKnee, RightAnkle),
    ]
};

pub const ARROW_MARKER_REF: &str = "url(#arrowhead)";

fn escape_xml(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Canvas that fits every point of `frame` with a margin, at least 640x480.
pub fn canvas_for(frame: &Frame) -> (u32, u32) {
    let (mut w, mut h) = (640.0f64, 480.0f64);
    for p in frame.points() {
        w = w.max(p.x + 20.0);
        h = h.max(p.y + 40.0);
    }
    (w.ceil().min(16384.0) as u32, h.ceil().min(16384.0) as u32)
}

/// SVG 1.1 overlay: skeleton limbs, joints, correction arrows and caption.
/// Coordinates are written with two decimals so output is byte-stable.
pub fn render_svg(aid: &VisualAid, skeleton: &Frame, width: u32, height: u32) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(s, "<defs>");
    let _ = writeln!(
        s,
        r##"<marker id="arrowhead" markerWidth="8" markerHeight="8" refX="7" refY="4" orient="auto" markerUnits="strokeWidth"><path d="M0,0 L8,4 L0,8 z" fill="#d62728"/></marker>"##
    );
    let _ = writeln!(s, "</defs>");
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);

    let _ = writeln!(
        s,
        r##"<g stroke="#1f77b4" stroke-width="3" stroke-linecap="round">"##
    );
    for (a, b) in LIMBS {
        if skeleton.is_occluded(a) || skeleton.is_occluded(b) {
            continue;
        }
        let (p, q) = (skeleton.point(a), skeleton.point(b));
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#,
            p.x, p.y, q.x, q.y
        );
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, r##"<g fill="#2ca02c">"##);
    for j in JointId::ALL {
        if skeleton.is_occluded(j) {
            continue;
        }
        let p = skeleton.point(j);
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4"><title>{}</title></circle>"#,
            p.x,
            p.y,
            j.name()
        );
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(
        s,
        r##"<g stroke="#d62728" stroke-width="2.5" fill="none">"##
    );
    for a in &aid.arrows {
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" marker-end="{ARROW_MARKER_REF}"><title>{}</title></line>"#,
            a.from.x,
            a.from.y,
            a.to.x,
            a.to.y,
            a.joint.name()
        );
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(
        s,
        r##"<text x="10" y="{}" font-family="sans-serif" font-size="16" fill="#000000">{}</text>"##,
        height.saturating_sub(12),
        escape_xml(&aid.caption)
    );
    let _ = writeln!(s, "</svg>");
    s
}
