//! Spatial-temporal transformer: per-frame attention over joints, flatten,
//! attention over frames, then a pooled score head and a per-frame mistake head.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{
    bce_with_logit, gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward,
    sigmoid, softmax_rows, NormCache,
};
use crate::error::{Error, Result};
use crate::skeleton::JOINT_COUNT;

pub const SCORE_DIM: usize = 3;
const COORDS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub spatial_layers: usize,
    pub temporal_layers: usize,
    /// Frames per input after resampling.
    pub seq_len: usize,
    pub n_joints: usize,
    /// Hidden width of the feed-forward sublayers.
    pub mlp_hidden: usize,
    pub seed: u64,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            d_model: 32,
            n_heads: 4,
            spatial_layers: 2,
            temporal_layers: 2,
            seq_len: 64,
            n_joints: JOINT_COUNT,
            mlp_hidden: 64,
            seed: 0,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be a positive multiple of n_heads");
        }
        if self.seq_len < 2 {
            return bad("seq_len must be at least 2");
        }
        if self.n_joints != JOINT_COUNT {
            return bad("n_joints must be 17");
        }
        if self.mlp_hidden == 0 {
            return bad("mlp_hidden must be positive");
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.seq_len * self.n_joints * COORDS
    }
}

#[derive(Debug, Clone)]
struct BlockLayout {
    ln1_g: Range<usize>,
    ln1_b: Range<usize>,
    wq: Range<usize>,
    bq: Range<usize>,
    wk: Range<usize>,
    bk: Range<usize>,
    wv: Range<usize>,
    bv: Range<usize>,
    wo: Range<usize>,
    bo: Range<usize>,
    ln2_g: Range<usize>,
    ln2_b: Range<usize>,
    w1: Range<usize>,
    b1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
}

/// How a parameter tensor is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Zero,
    One,
    Normal(f64),
}

/// A named slice of the flat parameter vector.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub name: String,
    pub range: Range<usize>,
    init: Init,
}

/// Offsets of every tensor in the flat parameter vector.
#[derive(Debug, Clone)]
pub struct Layout {
    tensors: Vec<Tensor>,
    embed_w: Range<usize>,
    embed_b: Range<usize>,
    spatial_pos: Range<usize>,
    spatial: Vec<BlockLayout>,
    spatial_ln_g: Range<usize>,
    spatial_ln_b: Range<usize>,
    flat_w: Range<usize>,
    flat_b: Range<usize>,
    temporal_pos: Range<usize>,
    temporal: Vec<BlockLayout>,
    temporal_ln_g: Range<usize>,
    temporal_ln_b: Range<usize>,
    score_w: Range<usize>,
    score_b: Range<usize>,
    mistake_w: Range<usize>,
    mistake_b: Range<usize>,
    len: usize,
}

impl Layout {
    pub fn new(c: &TransformerConfig) -> Layout {
        let d = c.d_model;
        let mut tensors = Vec::new();
        let mut next = 0;
        let mut add = |name: String, size: usize, init: Init| {
            let range = next..next + size;
            next += size;
            tensors.push(Tensor {
                name,
                range: range.clone(),
                init,
            });
            range
        };
        let w = |fan_in: usize| Init::Normal(1.0 / (fan_in as f64).sqrt());
        let embed_w = add("embed.w".into(), COORDS * d, w(COORDS));
        let embed_b = add("embed.b".into(), d, Init::Zero);
        let spatial_pos = add("spatial.pos".into(), c.n_joints * d, Init::Normal(0.1));
        let block = |prefix: String, add: &mut dyn FnMut(String, usize, Init) -> Range<usize>| {
            BlockLayout {
                ln1_g: add(format!("{prefix}.ln1.g"), d, Init::One),
                ln1_b: add(format!("{prefix}.ln1.b"), d, Init::Zero),
                wq: add(format!("{prefix}.attn.wq"), d * d, w(d)),
                bq: add(format!("{prefix}.attn.bq"), d, Init::Zero),
                wk: add(format!("{prefix}.attn.wk"), d * d, w(d)),
                bk: add(format!("{prefix}.attn.bk"), d, Init::Zero),
                wv: add(format!("{prefix}.attn.wv"), d * d, w(d)),
                bv: add(format!("{prefix}.attn.bv"), d, Init::Zero),
                wo: add(format!("{prefix}.attn.wo"), d * d, w(d)),
                bo: add(format!("{prefix}.attn.bo"), d, Init::Zero),
                ln2_g: add(format!("{prefix}.ln2.g"), d, Init::One),
                ln2_b: add(format!("{prefix}.ln2.b"), d, Init::Zero),
                w1: add(format!("{prefix}.mlp.w1"), d * c.mlp_hidden, w(d)),
                b1: add(format!("{prefix}.mlp.b1"), c.mlp_hidden, Init::Zero),
                w2: add(
                    format!("{prefix}.mlp.w2"),
                    c.mlp_hidden * d,
                    w(c.mlp_hidden),
                ),
                b2: add(format!("{prefix}.mlp.b2"), d, Init::Zero),
            }
        };
        let spatial = (0..c.spatial_layers)
            .map(|l| block(format!("spatial.{l}"), &mut add))
            .collect();
        let spatial_ln_g = add("spatial.ln.g".into(), d, Init::One);
        let spatial_ln_b = add("spatial.ln.b".into(), d, Init::Zero);
        let flat_w = add("flatten.w".into(), c.n_joints * d * d, w(c.n_joints * d));
        let flat_b = add("flatten.b".into(), d, Init::Zero);
        let temporal_pos = add("temporal.pos".into(), c.seq_len * d, Init::Normal(0.1));
        let temporal = (0..c.temporal_layers)
            .map(|l| block(format!("temporal.{l}"), &mut add))
            .collect();
        let temporal_ln_g = add("temporal.ln.g".into(), d, Init::One);
        let temporal_ln_b = add("temporal.ln.b".into(), d, Init::Zero);
        let score_w = add("head.score.w".into(), d * SCORE_DIM, w(d));
        let score_b = add("head.score.b".into(), SCORE_DIM, Init::Zero);
        let mistake_w = add("head.mistake.w".into(), d, w(d));
        let mistake_b = add("head.mistake.b".into(), 1, Init::Zero);
        let len = next;
        Layout {
            tensors,
            embed_w,
            embed_b,
            spatial_pos,
            spatial,
            spatial_ln_g,
            spatial_ln_b,
            flat_w,
            flat_b,
            temporal_pos,
            temporal,
            temporal_ln_g,
            temporal_ln_b,
            score_w,
            score_b,
            mistake_w,
            mistake_b,
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Ranges of the two positional embedding tables (spatial, temporal).
    pub fn positional(&self) -> [Range<usize>; 2] {
        [self.spatial_pos.clone(), self.temporal_pos.clone()]
    }

    /// Ranges of the two output heads' weights (score, mistake).
    pub fn head_weights(&self) -> [Range<usize>; 2] {
        [self.score_w.clone(), self.mistake_w.clone()]
    }
}

/// Model outputs for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Joint, pace and range scores in [0, 1].
    pub scores: [f64; SCORE_DIM],
    /// Per-frame mistake logits.
    pub mistake_logits: Vec<f64>,
}

impl Prediction {
    pub fn mistake_probabilities(&self) -> Vec<f64> {
        self.mistake_logits.iter().map(|&z| sigmoid(z)).collect()
    }
}

/// Training target for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub scores: [f64; SCORE_DIM],
    /// Per-frame labels in {0, 1}, one per resampled frame.
    pub labels: Vec<f64>,
}

/// Mean squared score error plus mean per-frame binary cross-entropy.
pub fn loss(pred: &Prediction, target: &Target) -> Result<f64> {
    if pred.mistake_logits.len() != target.labels.len() {
        return Err(Error::Shape(format!(
            "{} mistake logits against {} labels",
            pred.mistake_logits.len(),
            target.labels.len()
        )));
    }
    if target.labels.is_empty() {
        return Err(Error::Shape("no frame labels".into()));
    }
    let mse = pred
        .scores
        .iter()
        .zip(&target.scores)
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / SCORE_DIM as f64;
    let bce = pred
        .mistake_logits
        .iter()
        .zip(&target.labels)
        .map(|(&z, &y)| bce_with_logit(z, y))
        .sum::<f64>()
        / target.labels.len() as f64;
    Ok(mse + bce)
}

struct AttnCache {
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Per head, n×n row-stochastic weights.
    weights: Vec<Vec<f64>>,
    heads: Vec<f64>,
}

struct BlockCache {
    ln1: NormCache,
    attn: AttnCache,
    ln2: NormCache,
    l2: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
}

struct FrameCache {
    raw: Vec<f64>,
    blocks: Vec<BlockCache>,
    ln: NormCache,
    flat: Vec<f64>,
}

/// Intermediate values kept for the backward pass.
pub struct Trace {
    frames: Vec<FrameCache>,
    temporal: Vec<BlockCache>,
    ln: NormCache,
    hidden: Vec<f64>,
    pooled: Vec<f64>,
    pub prediction: Prediction,
}

impl Trace {
    /// Normalized spatial encoder output of frame `f`, `n_joints × d_model`.
    pub fn spatial_output(&self, f: usize) -> &[f64] {
        &self.frames[f].flat
    }

    /// Attention weight matrices of every head, spatial blocks first (per
    /// frame, per layer), then temporal blocks.
    pub fn attention_weights(&self) -> Vec<&[f64]> {
        let spatial = self.frames.iter().flat_map(|f| {
            f.blocks
                .iter()
                .flat_map(|b| b.attn.weights.iter().map(Vec::as_slice))
        });
        let temporal = self
            .temporal
            .iter()
            .flat_map(|b| b.attn.weights.iter().map(Vec::as_slice));
        spatial.chain(temporal).collect()
    }
}

#[derive(Debug, Clone)]
pub struct TransformerModel {
    pub config: TransformerConfig,
    pub params: Vec<f64>,
    layout: Layout,
}

impl PartialEq for TransformerModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

impl TransformerModel {
    /// Freshly initialized model, deterministic in `config.seed`.
    pub fn new(config: TransformerConfig) -> Result<TransformerModel> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = vec![0.0; layout.len()];
        for t in layout.tensors() {
            let slice = &mut params[t.range.clone()];
            match t.init {
                Init::Zero => {}
                Init::One => slice.fill(1.0),
                Init::Normal(std) => {
                    let normal = Normal::new(0.0, std).expect("positive std");
                    for p in slice {
                        *p = normal.sample(&mut rng);
                    }
                }
            }
        }
        Ok(TransformerModel {
            config,
            params,
            layout,
        })
    }

    /// Model with explicit parameters, e.g. restored from a checkpoint.
    pub fn from_params(config: TransformerConfig, params: Vec<f64>) -> Result<TransformerModel> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, found {}",
                layout.len(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(TransformerModel {
            config,
            params,
            layout,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Scores and mistake logits for a `seq_len × 17 × 2` canonical input.
    pub fn forward(&self, input: &[f64]) -> Result<Prediction> {
        Ok(self.trace(input)?.prediction)
    }

    pub fn trace(&self, input: &[f64]) -> Result<Trace> {
        let c = &self.config;
        if input.len() != c.input_len() {
            return Err(Error::Shape(format!(
                "input has {} values, expected {}",
                input.len(),
                c.input_len()
            )));
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("transformer input".into()));
        }
        let (lay, p) = (self.layout(), &self.params);
        let (d, nj, t) = (c.d_model, c.n_joints, c.seq_len);

        let mut frames = Vec::with_capacity(t);
        let mut seq = vec![0.0; t * d];
        for f in 0..t {
            let x = &input[f * nj * COORDS..(f + 1) * nj * COORDS];
            let mut z = linear(
                x,
                nj,
                COORDS,
                &p[lay.embed_w.clone()],
                &p[lay.embed_b.clone()],
                d,
            );
            add_in_place(&mut z, &p[lay.spatial_pos.clone()]);
            let mut blocks = Vec::with_capacity(lay.spatial.len());
            for b in &lay.spatial {
                let (out, cache) = self.block_forward(b, z, nj);
                blocks.push(cache);
                z = out;
            }
            let (flat, ln) = layer_norm(
                &z,
                nj,
                d,
                &p[lay.spatial_ln_g.clone()],
                &p[lay.spatial_ln_b.clone()],
            );
            let e = linear(
                &flat,
                1,
                nj * d,
                &p[lay.flat_w.clone()],
                &p[lay.flat_b.clone()],
                d,
            );
            for (k, s) in seq[f * d..(f + 1) * d].iter_mut().enumerate() {
                *s = e[k] + p[lay.temporal_pos.start + f * d + k];
            }
            frames.push(FrameCache {
                raw: x.to_vec(),
                blocks,
                ln,
                flat,
            });
        }

        let mut temporal = Vec::with_capacity(lay.temporal.len());
        for b in &lay.temporal {
            let (out, cache) = self.block_forward(b, seq, t);
            temporal.push(cache);
            seq = out;
        }
        let (hidden, ln) = layer_norm(
            &seq,
            t,
            d,
            &p[lay.temporal_ln_g.clone()],
            &p[lay.temporal_ln_b.clone()],
        );

        let mut pooled = vec![0.0; d];
        for row in hidden.chunks(d) {
            add_in_place(&mut pooled, row);
        }
        pooled.iter_mut().for_each(|v| *v /= t as f64);
        let logits = linear(
            &pooled,
            1,
            d,
            &p[lay.score_w.clone()],
            &p[lay.score_b.clone()],
            SCORE_DIM,
        );
        let scores = [sigmoid(logits[0]), sigmoid(logits[1]), sigmoid(logits[2])];
        let mistake_logits = linear(
            &hidden,
            t,
            d,
            &p[lay.mistake_w.clone()],
            &p[lay.mistake_b.clone()],
            1,
        );

        Ok(Trace {
            frames,
            temporal,
            ln,
            hidden,
            pooled,
            prediction: Prediction {
                scores,
                mistake_logits,
            },
        })
    }

    fn block_forward(&self, b: &BlockLayout, x: Vec<f64>, n: usize) -> (Vec<f64>, BlockCache) {
        let p = &self.params;
        let (d, m) = (self.config.d_model, self.config.mlp_hidden);
        let (l1, ln1) = layer_norm(&x, n, d, &p[b.ln1_g.clone()], &p[b.ln1_b.clone()]);
        let (a, attn) = self.attention_forward(b, l1, n);
        let mut x1 = x;
        add_in_place(&mut x1, &a);
        let (l2, ln2) = layer_norm(&x1, n, d, &p[b.ln2_g.clone()], &p[b.ln2_b.clone()]);
        let pre = linear(&l2, n, d, &p[b.w1.clone()], &p[b.b1.clone()], m);
        let act: Vec<f64> = pre.iter().map(|&v| gelu(v)).collect();
        let mlp = linear(&act, n, m, &p[b.w2.clone()], &p[b.b2.clone()], d);
        add_in_place(&mut x1, &mlp);
        (
            x1,
            BlockCache {
                ln1,
                attn,
                ln2,
                l2,
                pre,
                act,
            },
        )
    }

    fn attention_forward(&self, b: &BlockLayout, x: Vec<f64>, n: usize) -> (Vec<f64>, AttnCache) {
        let p = &self.params;
        let (d, h) = (self.config.d_model, self.config.n_heads);
        let dh = d / h;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = linear(&x, n, d, &p[b.wq.clone()], &p[b.bq.clone()], d);
        let k = linear(&x, n, d, &p[b.wk.clone()], &p[b.bk.clone()], d);
        let v = linear(&x, n, d, &p[b.wv.clone()], &p[b.bv.clone()], d);
        let mut heads = vec![0.0; n * d];
        let mut weights = Vec::with_capacity(h);
        for head in 0..h {
            let off = head * dh;
            let mut s = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    let mut acc = 0.0;
                    for c in 0..dh {
                        acc += q[i * d + off + c] * k[j * d + off + c];
                    }
                    s[i * n + j] = acc * scale;
                }
            }
            softmax_rows(&mut s, n);
            for i in 0..n {
                for j in 0..n {
                    let a = s[i * n + j];
                    for c in 0..dh {
                        heads[i * d + off + c] += a * v[j * d + off + c];
                    }
                }
            }
            weights.push(s);
        }
        let out = linear(&heads, n, d, &p[b.wo.clone()], &p[b.bo.clone()], d);
        (
            out,
            AttnCache {
                x,
                q,
                k,
                v,
                weights,
                heads,
            },
        )
    }

    /// Loss and its gradient with respect to every parameter, for one example.
    pub fn loss_and_gradient(&self, input: &[f64], target: &Target) -> Result<(f64, Vec<f64>)> {
        let trace = self.trace(input)?;
        let value = loss(&trace.prediction, target)?;
        let grad = self.backward(&trace, target);
        Ok((value, grad))
    }

    /// Gradient of [`loss`] given a forward trace.
    pub fn backward(&self, trace: &Trace, target: &Target) -> Vec<f64> {
        let c = &self.config;
        let (lay, p) = (self.layout(), &self.params);
        let (d, nj, t) = (c.d_model, c.n_joints, c.seq_len);
        let mut g = vec![0.0; p.len()];
        let pred = &trace.prediction;

        // Heads.
        let mut dlogits = [0.0; SCORE_DIM];
        for ((dz, &s), &t) in dlogits.iter_mut().zip(&pred.scores).zip(&target.scores) {
            *dz = 2.0 * (s - t) / SCORE_DIM as f64 * s * (1.0 - s);
        }
        let (sw, sb) = split_two(&mut g, lay.score_w.clone(), lay.score_b.clone());
        let dpooled = linear_backward(
            &trace.pooled,
            1,
            d,
            &p[lay.score_w.clone()],
            SCORE_DIM,
            &dlogits,
            sw,
            sb,
        );
        let dz: Vec<f64> = pred
            .mistake_logits
            .iter()
            .zip(&target.labels)
            .map(|(&z, &y)| (sigmoid(z) - y) / t as f64)
            .collect();
        let (mw, mb) = split_two(&mut g, lay.mistake_w.clone(), lay.mistake_b.clone());
        let mut dhidden = linear_backward(
            &trace.hidden,
            t,
            d,
            &p[lay.mistake_w.clone()],
            1,
            &dz,
            mw,
            mb,
        );
        for row in dhidden.chunks_mut(d) {
            for (r, &dp) in row.iter_mut().zip(&dpooled) {
                *r += dp / t as f64;
            }
        }

        // Temporal encoder.
        let (lg, lb) = split_two(&mut g, lay.temporal_ln_g.clone(), lay.temporal_ln_b.clone());
        let mut dseq = layer_norm_backward(
            &trace.ln,
            t,
            d,
            &p[lay.temporal_ln_g.clone()],
            &dhidden,
            lg,
            lb,
        );
        for (b, cache) in lay.temporal.iter().zip(&trace.temporal).rev() {
            dseq = self.block_backward(b, cache, dseq, t, &mut g);
        }
        for (k, v) in dseq.iter().enumerate() {
            g[lay.temporal_pos.start + k] += v;
        }

        // Spatial encoder, frame by frame.
        for (f, fc) in trace.frames.iter().enumerate() {
            let de = &dseq[f * d..(f + 1) * d];
            let (fw, fb) = split_two(&mut g, lay.flat_w.clone(), lay.flat_b.clone());
            let dflat = linear_backward(&fc.flat, 1, nj * d, &p[lay.flat_w.clone()], d, de, fw, fb);
            let (lg, lb) = split_two(&mut g, lay.spatial_ln_g.clone(), lay.spatial_ln_b.clone());
            let mut dz =
                layer_norm_backward(&fc.ln, nj, d, &p[lay.spatial_ln_g.clone()], &dflat, lg, lb);
            for (b, cache) in lay.spatial.iter().zip(&fc.blocks).rev() {
                dz = self.block_backward(b, cache, dz, nj, &mut g);
            }
            for (k, v) in dz.iter().enumerate() {
                g[lay.spatial_pos.start + k] += v;
            }
            let (ew, eb) = split_two(&mut g, lay.embed_w.clone(), lay.embed_b.clone());
            linear_backward(&fc.raw, nj, COORDS, &p[lay.embed_w.clone()], d, &dz, ew, eb);
        }
        g
    }

    fn block_backward(
        &self,
        b: &BlockLayout,
        c: &BlockCache,
        dy: Vec<f64>,
        n: usize,
        g: &mut [f64],
    ) -> Vec<f64> {
        let p = &self.params;
        let (d, m) = (self.config.d_model, self.config.mlp_hidden);
        // y = x1 + mlp(ln2(x1))
        let (w2, b2) = split_two(g, b.w2.clone(), b.b2.clone());
        let dact = linear_backward(&c.act, n, m, &p[b.w2.clone()], d, &dy, w2, b2);
        let dpre: Vec<f64> = dact
            .iter()
            .zip(&c.pre)
            .map(|(&da, &x)| da * gelu_grad(x))
            .collect();
        let (w1, b1) = split_two(g, b.w1.clone(), b.b1.clone());
        let dl2 = linear_backward(&c.l2, n, d, &p[b.w1.clone()], m, &dpre, w1, b1);
        let (g2, be2) = split_two(g, b.ln2_g.clone(), b.ln2_b.clone());
        let mut dx1 = layer_norm_backward(&c.ln2, n, d, &p[b.ln2_g.clone()], &dl2, g2, be2);
        add_in_place(&mut dx1, &dy);
        // x1 = x + attn(ln1(x))
        let dl1 = self.attention_backward(b, &c.attn, &dx1, n, g);
        let (g1, be1) = split_two(g, b.ln1_g.clone(), b.ln1_b.clone());
        let mut dx = layer_norm_backward(&c.ln1, n, d, &p[b.ln1_g.clone()], &dl1, g1, be1);
        add_in_place(&mut dx, &dx1);
        dx
    }

    fn attention_backward(
        &self,
        b: &BlockLayout,
        c: &AttnCache,
        dy: &[f64],
        n: usize,
        g: &mut [f64],
    ) -> Vec<f64> {
        let p = &self.params;
        let (d, h) = (self.config.d_model, self.config.n_heads);
        let dh = d / h;
        let scale = 1.0 / (dh as f64).sqrt();
        let (wo, bo) = split_two(g, b.wo.clone(), b.bo.clone());
        let dheads = linear_backward(&c.heads, n, d, &p[b.wo.clone()], d, dy, wo, bo);
        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut ds = vec![0.0; n * n];
        for head in 0..h {
            let off = head * dh;
            let a = &c.weights[head];
            for i in 0..n {
                // dA[i][j] = dO_i · V_j, then through the row softmax.
                let mut dot = 0.0;
                for j in 0..n {
                    let mut da = 0.0;
                    for k in 0..dh {
                        da += dheads[i * d + off + k] * c.v[j * d + off + k];
                    }
                    ds[i * n + j] = da;
                    dot += da * a[i * n + j];
                }
                for j in 0..n {
                    ds[i * n + j] = a[i * n + j] * (ds[i * n + j] - dot) * scale;
                }
            }
            for i in 0..n {
                for j in 0..n {
                    let (aij, sij) = (a[i * n + j], ds[i * n + j]);
                    for k in 0..dh {
                        dv[j * d + off + k] += aij * dheads[i * d + off + k];
                        dq[i * d + off + k] += sij * c.k[j * d + off + k];
                        dk[j * d + off + k] += sij * c.q[i * d + off + k];
                    }
                }
            }
        }
        let (wq, bq) = split_two(g, b.wq.clone(), b.bq.clone());
        let mut dx = linear_backward(&c.x, n, d, &p[b.wq.clone()], d, &dq, wq, bq);
        let (wk, bk) = split_two(g, b.wk.clone(), b.bk.clone());
        add_in_place(
            &mut dx,
            &linear_backward(&c.x, n, d, &p[b.wk.clone()], d, &dk, wk, bk),
        );
        let (wv, bv) = split_two(g, b.wv.clone(), b.bv.clone());
        add_in_place(
            &mut dx,
            &linear_backward(&c.x, n, d, &p[b.wv.clone()], d, &dv, wv, bv),
        );
        dx
    }
}

fn add_in_place(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

/// Disjoint mutable views of two non-overlapping ranges, `first` before `second`.
fn split_two(g: &mut [f64], first: Range<usize>, second: Range<usize>) -> (&mut [f64], &mut [f64]) {
    debug_assert!(first.end <= second.start);
    let (a, b) = g.split_at_mut(second.start);
    (&mut a[first], &mut b[..second.end - second.start])
}
