//! Temporal alignment of candidate and reference performances, and pace analysis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{angle_series, frame_cosine, JointVectorField};
use crate::skeleton::{JointId, Sequence};

/// Monotone frame correspondence between a candidate (first index) and a
/// reference (second index).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpPath {
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
}

impl WarpPath {
    /// One-to-one path for two sequences of equal length.
    pub fn diagonal(len: usize) -> WarpPath {
        WarpPath {
            pairs: (0..len).map(|i| (i, i)).collect(),
            cost: 0.0,
        }
    }

    pub fn is_valid(&self, candidate_len: usize, reference_len: usize) -> bool {
        if candidate_len == 0 || reference_len == 0 {
            return false;
        }
        if self.pairs.first() != Some(&(0, 0))
            || self.pairs.last() != Some(&(candidate_len - 1, reference_len - 1))
        {
            return false;
        }
        self.pairs.windows(2).all(|w| {
            let (di, dj) = (w[1].0.wrapping_sub(w[0].0), w[1].1.wrapping_sub(w[0].1));
            matches!((di, dj), (1, 1) | (1, 0) | (0, 1))
        })
    }

    /// The same path with candidate and reference roles swapped.
    pub fn transposed(&self) -> WarpPath {
        WarpPath {
            pairs: self.pairs.iter().map(|&(i, j)| (j, i)).collect(),
            cost: self.cost,
        }
    }
}

/// Minimal-cost alignment over a precomputed cost matrix (`costs[i][j]` for
/// candidate frame `i` and reference frame `j`).
///
/// Ties are broken toward the diagonal step, then toward a candidate-only step.
pub fn dtw_from_costs(costs: &[Vec<f64>]) -> Result<WarpPath> {
    let n = costs.len();
    let m = costs.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return Err(Error::Empty("alignment input"));
    }
    if costs.iter().any(|row| row.len() != m) {
        return Err(Error::Shape("ragged cost matrix".into()));
    }
    let mut acc = vec![vec![f64::INFINITY; m]; n];
    for i in 0..n {
        for j in 0..m {
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let mut best = f64::INFINITY;
                if i > 0 && j > 0 {
                    best = acc[i - 1][j - 1];
                }
                if i > 0 {
                    best = best.min(acc[i - 1][j]);
                }
                if j > 0 {
                    best = best.min(acc[i][j - 1]);
                }
                best
            };
            acc[i][j] = costs[i][j] + best;
        }
    }

    let (mut i, mut j) = (n - 1, m - 1);
    let mut pairs = vec![(i, j)];
    while (i, j) != (0, 0) {
        let mut step = None;
        let mut best = f64::INFINITY;
        for (di, dj) in [(1, 1), (1, 0), (0, 1)] {
            if i >= di && j >= dj {
                let v = acc[i - di][j - dj];
                if v < best || step.is_none() {
                    best = v;
                    step = Some((di, dj));
                }
            }
        }
        let (di, dj) = step.expect("a predecessor exists away from the origin");
        i -= di;
        j -= dj;
        pairs.push((i, j));
    }
    pairs.reverse();
    Ok(WarpPath {
        pairs,
        cost: acc[n - 1][m - 1],
    })
}

/// Per-frame alignment cost: one minus the mean direction-vector cosine.
pub fn frame_cost(a: &JointVectorField, b: &JointVectorField) -> Result<f64> {
    Ok((1.0 - frame_cosine(a, b)?).max(0.0))
}

/// Dynamic time warping of two descriptor sequences under [`frame_cost`].
pub fn dtw_align(
    candidate: &[JointVectorField],
    reference: &[JointVectorField],
) -> Result<WarpPath> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::Empty("alignment input"));
    }
    let costs = candidate
        .iter()
        .map(|c| {
            reference
                .iter()
                .map(|r| frame_cost(c, r))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    dtw_from_costs(&costs)
}

/// Which way the primary joint angle moves during the eccentric phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleDirection {
    Decreasing,
    Increasing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseConfig {
    pub primary_joint: JointId,
    pub eccentric_direction: AngleDirection,
    /// Phases faster than this fraction of the reference duration are flagged.
    pub min_ratio: f64,
    /// Moving-average window, frames.
    pub smoothing_window: usize,
    /// Smallest swing of the smoothed angle that counts as a turn, degrees.
    pub min_swing_deg: f64,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        PhaseConfig {
            primary_joint: JointId::LeftKnee,
            eccentric_direction: AngleDirection::Decreasing,
            min_ratio: 0.6,
            smoothing_window: 5,
            min_swing_deg: 5.0,
        }
    }
}

/// A contiguous run of frames `start..=end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub name: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDuration {
    pub name: String,
    pub candidate_seconds: f64,
    pub reference_seconds: f64,
}

impl PhaseDuration {
    pub fn ratio(&self) -> f64 {
        self.candidate_seconds / self.reference_seconds
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaceProfile {
    /// Candidate duration over reference duration.
    pub duration_ratio: f64,
    /// Mean normalized distance of the warp path from the diagonal, in [0, 1].
    pub warp_deviation: f64,
    pub phase_durations: Vec<PhaseDuration>,
    /// Candidate phases used for the durations, as frame ranges.
    pub candidate_phases: Vec<Phase>,
}

/// Centered moving average; the window shrinks at the ends.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let half = window.max(1) / 2;
    (0..values.len())
        .map(|k| {
            let lo = k.saturating_sub(half);
            let hi = (k + half).min(values.len() - 1);
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Indices where a series turns by at least `min_swing`, including both ends.
fn turning_points(s: &[f64], min_swing: f64) -> Vec<usize> {
    let n = s.len();
    let mut pivots = vec![0];
    let mut dir = 0i8;
    let mut ext = 0;
    for k in 1..n {
        match dir {
            0 => {
                let (lo, hi) = (0..=k).fold((0, 0), |(lo, hi), i| {
                    (
                        if s[i] < s[lo] { i } else { lo },
                        if s[i] > s[hi] { i } else { hi },
                    )
                });
                if s[hi] - s[0] >= min_swing {
                    dir = 1;
                    ext = hi;
                } else if s[0] - s[lo] >= min_swing {
                    dir = -1;
                    ext = lo;
                }
                // A turn may already be visible inside the prefix.
                if dir != 0 && k > ext && (s[ext] - s[k]).abs() >= min_swing {
                    pivots.push(ext);
                    dir = -dir;
                    ext = k;
                }
            }
            1 => {
                if s[k] > s[ext] {
                    ext = k;
                } else if s[ext] - s[k] >= min_swing {
                    pivots.push(ext);
                    dir = -1;
                    ext = k;
                }
            }
            _ => {
                if s[k] < s[ext] {
                    ext = k;
                } else if s[k] - s[ext] >= min_swing {
                    pivots.push(ext);
                    dir = 1;
                    ext = k;
                }
            }
        }
    }
    if *pivots.last().unwrap() != n - 1 {
        // Merge a final drift smaller than the swing into the last segment.
        if pivots.len() > 1 && (s[n - 1] - s[*pivots.last().unwrap()]).abs() < min_swing {
            pivots.pop();
        }
        pivots.push(n - 1);
    }
    pivots
}

/// Split a repetition into eccentric and concentric phases at the turning
/// points of the smoothed primary joint angle. A series without at least one
/// turn yields a single phase named "full".
pub fn segment_phases(seq: &Sequence, config: &PhaseConfig) -> Vec<Phase> {
    let n = seq.len();
    let full = vec![Phase {
        name: "full".into(),
        start: 0,
        end: n - 1,
    }];
    let Ok(series) = angle_series(seq, config.primary_joint) else {
        return full;
    };
    let smoothed = moving_average(&series, config.smoothing_window);
    let pivots = turning_points(&smoothed, config.min_swing_deg);
    if pivots.len() < 3 {
        return full;
    }
    let mut counts = std::collections::BTreeMap::<&str, usize>::new();
    pivots
        .windows(2)
        .map(|w| {
            let decreasing = smoothed[w[1]] < smoothed[w[0]];
            let eccentric =
                decreasing == (config.eccentric_direction == AngleDirection::Decreasing);
            let base = if eccentric { "eccentric" } else { "concentric" };
            let count = counts.entry(base).or_insert(0);
            *count += 1;
            let name = if *count == 1 {
                base.to_string()
            } else {
                format!("{base}_{count}")
            };
            Phase {
                name,
                start: w[0],
                end: w[1],
            }
        })
        .collect()
}

fn phase_seconds(seq: &Sequence, phase: &Phase) -> f64 {
    seq.frames()[phase.end].timestamp() - seq.frames()[phase.start].timestamp()
}

/// Duration ratio, warp deviation and per-phase durations.
pub fn pace_profile(
    candidate: &Sequence,
    reference: &Sequence,
    path: &WarpPath,
    config: &PhaseConfig,
) -> Result<PaceProfile> {
    let (tc, tr) = (candidate.len(), reference.len());
    if !path.is_valid(tc, tr) {
        return Err(Error::Shape(format!(
            "warp path does not span {tc} x {tr} frames"
        )));
    }
    let duration_ratio = candidate.duration() / reference.duration();
    let mean_offset = path
        .pairs
        .iter()
        .map(|&(i, j)| (i as f64 / (tc - 1) as f64 - j as f64 / (tr - 1) as f64).abs())
        .sum::<f64>()
        / path.pairs.len() as f64;
    let warp_deviation = (2.0 * mean_offset).clamp(0.0, 1.0);

    let mut cand_phases = segment_phases(candidate, config);
    let mut ref_phases = segment_phases(reference, config);
    let same_shape = cand_phases.len() == ref_phases.len()
        && cand_phases
            .iter()
            .zip(&ref_phases)
            .all(|(a, b)| a.name == b.name);
    if !same_shape {
        log::warn!(
            "phase structure differs ({} vs {} phases); comparing whole repetitions",
            cand_phases.len(),
            ref_phases.len()
        );
        cand_phases = vec![Phase {
            name: "full".into(),
            start: 0,
            end: tc - 1,
        }];
        ref_phases = vec![Phase {
            name: "full".into(),
            start: 0,
            end: tr - 1,
        }];
    }
    let phase_durations = cand_phases
        .iter()
        .zip(&ref_phases)
        .map(|(c, r)| PhaseDuration {
            name: c.name.clone(),
            candidate_seconds: phase_seconds(candidate, c),
            reference_seconds: phase_seconds(reference, r),
        })
        .collect();
    Ok(PaceProfile {
        duration_ratio,
        warp_deviation,
        phase_durations,
        candidate_phases: cand_phases,
    })
}

/// Phases whose candidate/reference duration ratio falls below `min_ratio`.
pub fn detect_fast_eccentric(profile: &PaceProfile, min_ratio: f64) -> Vec<String> {
    profile
        .phase_durations
        .iter()
        .filter(|p| p.reference_seconds > 0.0 && p.ratio() < min_ratio)
        .map(|p| p.name.clone())
        .collect()
}
