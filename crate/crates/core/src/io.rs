//! File formats: keypoint sequences, annotations, reports, and atomic writes.
//!
//! A keypoint file holds one sequence:
//!
//! ```json
//! {"exercise_id": "squat", "class": "correct", "fps": 30.0,
//!  "frames": [{"id": "f000", "t": 0.0, "keypoints": [[x, y, conf], ...]}]}
//! ```
//!
//! `keypoints` is either a list of 17 `[x, y, conf]` triples in COCO order
//! (or in the order named by an optional top-level `joint_order`), or an
//! object keyed by joint name. A frame without `t` is timed as `index / fps`;
//! a frame without `id` gets its index as id.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::AssessmentReport;
use crate::skeleton::{
    Annotation, ClassLabel, Frame, JointId, Sequence, Vec2, DEFAULT_OCCLUSION_THRESHOLD,
    JOINT_COUNT,
};

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub occlusion_threshold: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            occlusion_threshold: DEFAULT_OCCLUSION_THRESHOLD,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct KeypointFile {
    exercise_id: String,
    class: ClassLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    joint_order: Option<Vec<String>>,
    frames: Vec<FrameRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t: Option<f64>,
    keypoints: KeypointsRecord,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum KeypointsRecord {
    Ordered(Vec<Vec<f64>>),
    Named(BTreeMap<String, Vec<f64>>),
}

pub fn load_sequence(path: impl AsRef<Path>) -> Result<Sequence> {
    load_sequence_with(path, &LoadOptions::default())
}

pub fn load_sequence_with(path: impl AsRef<Path>, options: &LoadOptions) -> Result<Sequence> {
    let file: KeypointFile = read_json(path.as_ref())?;
    parse_keypoint_file(file, options)
}

/// Parse a keypoint document already held in memory.
pub fn parse_sequence(json: &str, options: &LoadOptions) -> Result<Sequence> {
    let file: KeypointFile = serde_json::from_str(json).map_err(|source| Error::Json {
        path: "<memory>".into(),
        source,
    })?;
    parse_keypoint_file(file, options)
}

fn parse_keypoint_file(file: KeypointFile, options: &LoadOptions) -> Result<Sequence> {
    let order: Vec<JointId> = match &file.joint_order {
        None => JointId::ALL.to_vec(),
        Some(names) => {
            let order = names
                .iter()
                .map(|n| n.parse::<JointId>().map_err(Error::Config))
                .collect::<Result<Vec<_>>>()?;
            let mut seen = [false; JOINT_COUNT];
            for j in &order {
                if std::mem::replace(&mut seen[j.index()], true) {
                    return Err(Error::Config(format!("joint_order lists {j} twice")));
                }
            }
            order
        }
    };

    let mut frames = Vec::with_capacity(file.frames.len());
    for (index, record) in file.frames.into_iter().enumerate() {
        let mut slots: [Option<[f64; 3]>; JOINT_COUNT] = [None; JOINT_COUNT];
        match record.keypoints {
            KeypointsRecord::Ordered(rows) => {
                if rows.len() > order.len() {
                    return Err(Error::frame(
                        index,
                        format!("{} keypoints, expected {}", rows.len(), order.len()),
                    ));
                }
                for (joint, row) in order.iter().zip(rows.iter()) {
                    slots[joint.index()] = Some(triple(index, *joint, row)?);
                }
            }
            KeypointsRecord::Named(map) => {
                for (name, row) in &map {
                    let joint: JointId =
                        name.parse().map_err(|e: String| Error::frame(index, e))?;
                    slots[joint.index()] = Some(triple(index, joint, row)?);
                }
            }
        }
        let mut points = [Vec2::zeros(); JOINT_COUNT];
        let mut confidence = [0.0; JOINT_COUNT];
        for joint in JointId::ALL {
            let [x, y, c] = slots[joint.index()].ok_or(Error::MissingJoint {
                frame: index,
                joint,
            })?;
            points[joint.index()] = Vec2::new(x, y);
            confidence[joint.index()] = c;
        }
        let t = match (record.t, file.fps) {
            (Some(t), _) => t,
            (None, Some(fps)) if fps > 0.0 => index as f64 / fps,
            (None, _) => {
                return Err(Error::frame(
                    index,
                    "no timestamp and no fps to synthesize one",
                ))
            }
        };
        let id = record.id.unwrap_or_else(|| index.to_string());
        let frame =
            Frame::with_occlusion_threshold(id, t, points, confidence, options.occlusion_threshold)
                .map_err(|e| Error::frame(index, e.to_string()))?;
        frames.push(frame);
    }
    Sequence::new(file.exercise_id, file.class, file.fps, frames)
}

fn triple(frame: usize, joint: JointId, row: &[f64]) -> Result<[f64; 3]> {
    match row {
        [x, y, c] => Ok([*x, *y, *c]),
        _ => Err(Error::frame(
            frame,
            format!(
                "{joint}: expected [x, y, confidence], got {} values",
                row.len()
            ),
        )),
    }
}

pub fn sequence_to_json(seq: &Sequence) -> String {
    let file = KeypointFile {
        exercise_id: seq.exercise_id().to_string(),
        class: seq.class_label(),
        fps: seq.fps_hint(),
        joint_order: None,
        frames: seq
            .frames()
            .iter()
            .map(|f| FrameRecord {
                id: Some(f.id().to_string()),
                t: Some(f.timestamp()),
                keypoints: KeypointsRecord::Ordered(
                    JointId::ALL
                        .iter()
                        .map(|&j| {
                            let p = f.point(j);
                            vec![p.x, p.y, f.confidence()[j.index()]]
                        })
                        .collect(),
                ),
            })
            .collect(),
    };
    to_json_pretty(&file)
}

pub fn save_sequence(seq: &Sequence, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), sequence_to_json(seq).as_bytes())
}

pub fn load_annotation(path: impl AsRef<Path>) -> Result<Annotation> {
    let annotation: Annotation = read_json(path.as_ref())?;
    annotation.validate()?;
    Ok(annotation)
}

pub fn save_annotation(annotation: &Annotation, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), to_json_pretty(annotation).as_bytes())
}

pub fn load_report(path: impl AsRef<Path>) -> Result<AssessmentReport> {
    read_json(path.as_ref())
}

pub fn save_report(report: &AssessmentReport, path: impl AsRef<Path>) -> Result<()> {
    report.validate()?;
    write_atomic(path.as_ref(), to_json_pretty(report).as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn to_json_pretty<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("in-memory serialization cannot fail");
    s.push('\n');
    s
}

/// Write via a temporary file in the destination directory and rename it
/// into place, so readers never observe a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let wrap = |source: std::io::Error| Error::Write {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(wrap)?;
    tmp.write_all(bytes).map_err(wrap)?;
    tmp.flush().map_err(wrap)?;
    tmp.persist(path).map_err(|e| wrap(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triple_json(i: usize) -> String {
        format!("[{}.5, {}.25, 0.9]", i, 2 * i)
    }

    fn frame_json(id: &str, t: f64, n: usize) -> String {
        let kps: Vec<String> = (0..n).map(triple_json).collect();
        format!(
            r#"{{"id": "{id}", "t": {t}, "keypoints": [{}]}}"#,
            kps.join(",")
        )
    }

    fn doc(frames: &[String]) -> String {
        format!(
            r#"{{"exercise_id": "squat", "class": "correct", "fps": 30.0, "frames": [{}]}}"#,
            frames.join(",")
        )
    }

    #[test]
    fn minimal_two_frame_file() {
        let json = doc(&[frame_json("a", 0.0, 17), frame_json("b", 0.1, 17)]);
        let seq = parse_sequence(&json, &LoadOptions::default()).unwrap();
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.frames()[1].id(), "b");
        assert_eq!(
            seq.frames()[0].point(JointId::LeftEye),
            Vec2::new(1.5, 2.25)
        );
        assert_eq!(seq.class_label(), ClassLabel::Correct);
    }

    #[test]
    fn missing_joint_is_named() {
        let json = doc(&[frame_json("a", 0.0, 17), frame_json("b", 0.1, 16)]);
        let err = parse_sequence(&json, &LoadOptions::default()).unwrap_err();
        match err {
            Error::MissingJoint { frame, joint } => {
                assert_eq!(frame, 1);
                assert_eq!(joint, JointId::RightAnkle);
            }
            other => panic!("unexpected {other}"),
        }
        assert!(err_string(&json).contains("right_ankle"));
    }

    fn err_string(json: &str) -> String {
        parse_sequence(json, &LoadOptions::default())
            .unwrap_err()
            .to_string()
    }

    #[test]
    fn repeated_timestamp_fails_at_frame_one() {
        let json = doc(&[frame_json("a", 0.0, 17), frame_json("b", 0.0, 17)]);
        let err = parse_sequence(&json, &LoadOptions::default()).unwrap_err();
        assert!(
            matches!(err, Error::NonMonotonicTimestamp { frame: 1, .. }),
            "{err}"
        );
    }

    #[test]
    fn named_keypoints_are_reordered() {
        let mut entries: Vec<String> = JointId::ALL
            .iter()
            .rev()
            .map(|j| format!(r#""{}": [{}, 1.0, 1.0]"#, j.name(), j.index()))
            .collect();
        let frame_a = format!(r#"{{"t": 0.0, "keypoints": {{{}}}}}"#, entries.join(","));
        entries.rotate_left(5);
        let frame_b = format!(r#"{{"t": 0.5, "keypoints": {{{}}}}}"#, entries.join(","));
        let seq = parse_sequence(&doc(&[frame_a, frame_b]), &LoadOptions::default()).unwrap();
        for f in seq.frames() {
            for j in JointId::ALL {
                assert_eq!(f.point(j).x, j.index() as f64);
            }
        }
        assert_eq!(seq.frames()[1].id(), "1");
    }

    #[test]
    fn explicit_joint_order_is_honoured() {
        let mut names: Vec<&str> = JointId::ALL.iter().map(|j| j.name()).collect();
        names.reverse();
        let json = format!(
            r#"{{"exercise_id": "x", "class": "wrong", "joint_order": {}, "frames": [{}, {}]}}"#,
            serde_json::to_string(&names).unwrap(),
            frame_json("a", 0.0, 17),
            frame_json("b", 1.0, 17)
        );
        let seq = parse_sequence(&json, &LoadOptions::default()).unwrap();
        // First triple in the file belongs to right_ankle.
        assert_eq!(seq.first().point(JointId::RightAnkle).x, 0.5);
        assert_eq!(seq.first().point(JointId::Nose).x, 16.5);
    }

    #[test]
    fn timestamps_synthesized_from_fps() {
        let kps: Vec<String> = (0..17).map(triple_json).collect();
        let frame = format!(r#"{{"keypoints": [{}]}}"#, kps.join(","));
        let json = format!(
            r#"{{"exercise_id": "x", "class": "correct", "fps": 25.0, "frames": [{frame}, {frame}, {frame}]}}"#
        );
        let seq = parse_sequence(&json, &LoadOptions::default()).unwrap();
        assert_eq!(seq.timestamps(), vec![0.0, 1.0 / 25.0, 2.0 / 25.0]);

        let json = json.replace(r#""fps": 25.0, "#, "");
        assert!(parse_sequence(&json, &LoadOptions::default()).is_err());
    }

    #[test]
    fn malformed_triple_reports_frame() {
        let json = doc(&[frame_json("a", 0.0, 17), frame_json("b", 0.1, 17)]).replacen(
            "[0.5, 0.25, 0.9]",
            "[0.5, 0.25]",
            1,
        );
        let err = parse_sequence(&json, &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Frame { frame: 0, .. }), "{err}");
    }

    #[test]
    fn atomic_write_to_missing_dir_fails_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("nope").join("file.json");
        let err = write_atomic(&target, b"{}").unwrap_err();
        assert!(matches!(err, Error::Write { .. }));
    }
}
