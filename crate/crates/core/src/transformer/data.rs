//! Model inputs from keypoint sequences, training, and checkpoints.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{loss, Prediction, Target, TransformerConfig, TransformerModel, SCORE_DIM};
use crate::error::{Error, Result};
use crate::io::{read_json, to_json_pretty, write_atomic};
use crate::normalization::normalize_global;
use crate::skeleton::{Annotation, ScoreTriple, Sequence, JOINT_COUNT};

/// Canonical coordinates of every frame, resampled to `seq_len` frames evenly
/// spaced in time by linear interpolation. Occluded joints are zero.
pub fn prepare_input(seq: &Sequence, seq_len: usize) -> Result<Vec<f64>> {
    let canon: Vec<Vec<f64>> = seq
        .frames()
        .iter()
        .map(|f| {
            let c = normalize_global(f)?;
            Ok((0..JOINT_COUNT)
                .flat_map(|j| {
                    if c.occluded[j] {
                        [0.0, 0.0]
                    } else {
                        [c.points[j].x, c.points[j].y]
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let times = seq.timestamps();
    let (t0, t1) = (times[0], times[times.len() - 1]);
    let mut out = Vec::with_capacity(seq_len * JOINT_COUNT * 2);
    let mut k = 0;
    for s in 0..seq_len {
        let t = t0 + (t1 - t0) * s as f64 / (seq_len - 1) as f64;
        while k + 2 < times.len() && times[k + 1] <= t {
            k += 1;
        }
        let w = ((t - times[k]) / (times[k + 1] - times[k])).clamp(0.0, 1.0);
        out.extend(
            canon[k]
                .iter()
                .zip(&canon[k + 1])
                .map(|(a, b)| a + w * (b - a)),
        );
    }
    Ok(out)
}

/// Per resampled frame, the label of the original frame nearest in time.
pub fn resample_labels(seq: &Sequence, labels: &[f64], seq_len: usize) -> Vec<f64> {
    let times = seq.timestamps();
    let (t0, t1) = (times[0], times[times.len() - 1]);
    (0..seq_len)
        .map(|s| {
            let t = t0 + (t1 - t0) * s as f64 / (seq_len - 1) as f64;
            let nearest = times
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
                .map_or(0, |(i, _)| i);
            labels[nearest]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Vec<f64>,
    pub target: Target,
}

impl Example {
    /// Targets from an annotation: its scores scaled to [0, 1] and its
    /// per-frame mistakes as positive frame labels.
    pub fn from_annotated(
        seq: &Sequence,
        annotation: &Annotation,
        seq_len: usize,
    ) -> Result<Example> {
        let scores = annotation.scores.ok_or_else(|| {
            Error::Config(format!(
                "annotation for {} has no scores to train on",
                annotation.exercise_id
            ))
        })?;
        let labels: Vec<f64> = seq
            .frames()
            .iter()
            .map(|f| {
                let hit = annotation
                    .per_frame_mistakes
                    .iter()
                    .any(|m| m.frame_id == f.id());
                if hit {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Example {
            input: prepare_input(seq, seq_len)?,
            target: Target {
                scores: [
                    scores.joint / 100.0,
                    scores.pace / 100.0,
                    scores.range / 100.0,
                ],
                labels: resample_labels(seq, &labels, seq_len),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Seeds the mini-batch shuffling.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            lr: 1e-2,
            batch_size: 8,
            seed: 0,
        }
    }
}

/// Mean loss and mean gradient over `batch`, reduced in input order.
pub fn batch_gradient(model: &TransformerModel, batch: &[&Example]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    let parts = batch
        .par_iter()
        .map(|e| model.loss_and_gradient(&e.input, &e.target))
        .collect::<Result<Vec<_>>>()?;
    let mut grad = vec![0.0; model.params.len()];
    let mut total = 0.0;
    for (l, g) in &parts {
        total += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    let n = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((total / n, grad))
}

pub fn mean_loss(model: &TransformerModel, data: &[Example]) -> Result<f64> {
    let losses = data
        .par_iter()
        .map(|e| loss(&model.forward(&e.input)?, &e.target))
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Plain mini-batch SGD. Returns the dataset loss after each epoch.
pub fn train(
    model: &mut TransformerModel,
    data: &[Example],
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if config.batch_size == 0 || !config.lr.is_finite() || config.lr < 0.0 {
        return Err(Error::Config(
            "batch_size must be positive and lr a non-negative number".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &data[i]).collect();
            let (l, grad) = batch_gradient(model, &batch)?;
            if !l.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, loss: l });
            }
            for (p, g) in model.params.iter_mut().zip(&grad) {
                *p -= config.lr * g;
            }
        }
        let l = mean_loss(model, data)?;
        if !l.is_finite() {
            return Err(Error::Divergence { epoch, loss: l });
        }
        log::info!("epoch {epoch}: loss {l:.6}");
        curve.push(l);
    }
    Ok(curve)
}

pub fn loss_curve_csv(curve: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in curve.iter().enumerate() {
        s.push_str(&format!("{},{}\n", i + 1, l));
    }
    s
}

pub const CHECKPOINT_FORMAT: &str = "posture-transformer";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: TransformerConfig,
    params: Vec<f64>,
}

pub fn checkpoint_json(model: &TransformerModel) -> String {
    to_json_pretty(&Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        params: model.params.clone(),
    })
}

pub fn save_checkpoint(model: &TransformerModel, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), checkpoint_json(model).as_bytes())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TransformerModel> {
    let c: Checkpoint = read_json(path.as_ref())?;
    if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
        return Err(Error::Config(format!(
            "unsupported checkpoint {} v{} (expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION})",
            c.format, c.version
        )));
    }
    TransformerModel::from_params(c.config, c.params)
}

/// Scores for a sequence on the report's 0-100 scale.
pub fn score_sequence(
    model: &TransformerModel,
    seq: &Sequence,
) -> Result<(ScoreTriple, Prediction)> {
    let pred = model.forward(&prepare_input(seq, model.config.seq_len)?)?;
    let [joint, pace, range]: [f64; SCORE_DIM] = pred.scores.map(|s| 100.0 * s);
    Ok((ScoreTriple { joint, pace, range }, pred))
}

/// Central finite-difference derivative of the example loss with respect to
/// parameter `index`.
pub fn numeric_gradient(
    model: &TransformerModel,
    example: &Example,
    index: usize,
    h: f64,
) -> Result<f64> {
    let mut probe = model.clone();
    let original = probe.params[index];
    probe.params[index] = original + h;
    let up = loss(&probe.forward(&example.input)?, &example.target)?;
    probe.params[index] = original - h;
    let down = loss(&probe.forward(&example.input)?, &example.target)?;
    Ok((up - down) / (2.0 * h))
}

/// `|a - n| / max(|a|, |n|, floor)`: relative error that stays meaningful
/// when both derivatives are near zero.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}
