//! Model-free enhancement math: alpha blending, softmax attention over
//! keyframes, nearest-neighbour feature correspondence and propagation, and an
//! injection policy for driving an external denoiser.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::Tensor;

/// Per-pixel `α · fg + (1 − α) · bg`. `alpha` has one channel or as many as
/// the frames.
pub fn blend(foreground: &Image, alpha: &Image, background: &Image) -> Result<Image> {
    foreground.ensure_same_shape(background, "blend background")?;
    if alpha.width != foreground.width || alpha.height != foreground.height {
        return Err(Error::DimensionMismatch(format!(
            "alpha is {}x{}, frame is {}x{}",
            alpha.width, alpha.height, foreground.width, foreground.height
        )));
    }
    if alpha.channels != 1 && alpha.channels != foreground.channels {
        return Err(Error::DimensionMismatch(format!(
            "alpha has {} channels, frame has {}",
            alpha.channels, foreground.channels
        )));
    }
    if let Some(a) = alpha.data.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::InvalidArgument(format!("alpha value {a} outside [0, 1]")));
    }
    let c = foreground.channels;
    let mut out = Image::new(foreground.width, foreground.height, c);
    for (i, o) in out.data.iter_mut().enumerate() {
        let a = if alpha.channels == 1 { alpha.data[i / c] } else { alpha.data[i] };
        let (f, b) = (foreground.data[i], background.data[i]);
        // clamped so rounding cannot leave the segment between f and b
        *o = (a * f + (1.0 - a) * b).clamp(f.min(b), f.max(b));
    }
    Ok(out)
}

fn softmax_rows(scores: &mut DMatrix<f64>) {
    for mut row in scores.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

fn check_dims(q: &DMatrix<f64>, k: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<()> {
    if q.ncols() == 0 {
        return Err(Error::InvalidArgument("attention needs a positive feature dimension".into()));
    }
    if k.ncols() != q.ncols() {
        return Err(Error::DimensionMismatch(format!("query dim {} vs key dim {}", q.ncols(), k.ncols())));
    }
    if v.nrows() != k.nrows() {
        return Err(Error::DimensionMismatch(format!("{} keys vs {} values", k.nrows(), v.nrows())));
    }
    if k.nrows() == 0 {
        return Err(Error::Empty("attention over zero keys".into()));
    }
    Ok(())
}

/// Row-stochastic matrix `Softmax(Q Kᵀ / √d)`.
pub fn attention_weights(q: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dims(q, k, k)?;
    let mut s = q * k.transpose() / (q.ncols() as f64).sqrt();
    softmax_rows(&mut s);
    Ok(s)
}

/// `Softmax(Q Kᵀ / √d) · V`; tokens are rows.
pub fn attention(q: &DMatrix<f64>, k: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dims(q, k, v)?;
    Ok(attention_weights(q, k)? * v)
}

/// Attention of every keyframe's coarse queries over the coarse keys of all
/// keyframes, reading enhanced values. Blocks are processed one at a time
/// against a shared row maximum, without building the concatenation.
pub fn extended_attention(
    queries: &[DMatrix<f64>],
    keys: &[DMatrix<f64>],
    values: &[DMatrix<f64>],
) -> Result<Vec<DMatrix<f64>>> {
    if queries.is_empty() {
        return Err(Error::Empty("no keyframes".into()));
    }
    if keys.len() != queries.len() || values.len() != queries.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} query, {} key and {} value blocks",
            queries.len(),
            keys.len(),
            values.len()
        )));
    }
    let (n, d) = queries[0].shape();
    let dv = values[0].ncols();
    for (i, ((q, k), v)) in queries.iter().zip(keys).zip(values).enumerate() {
        if q.shape() != (n, d) || k.shape() != (n, d) || v.shape() != (n, dv) {
            return Err(Error::DimensionMismatch(format!("keyframe block {i} differs in shape from block 0")));
        }
        check_dims(q, k, v)?;
    }
    let scale = 1.0 / (d as f64).sqrt();
    queries
        .par_iter()
        .map(|q| {
            let scores: Vec<DMatrix<f64>> = keys.iter().map(|k| q * k.transpose() * scale).collect();
            let mut max = vec![f64::NEG_INFINITY; n];
            for s in &scores {
                for (r, m) in max.iter_mut().enumerate() {
                    *m = s.row(r).iter().copied().fold(*m, f64::max);
                }
            }
            let mut sum = vec![0.0; n];
            let mut acc = DMatrix::zeros(n, dv);
            for (mut s, v) in scores.into_iter().zip(values) {
                for r in 0..n {
                    for c in 0..s.ncols() {
                        let e = (s[(r, c)] - max[r]).exp();
                        s[(r, c)] = e;
                        sum[r] += e;
                    }
                }
                acc += s * v;
            }
            for (r, total) in sum.iter().enumerate() {
                acc.row_mut(r).unscale_mut(*total);
            }
            Ok(acc)
        })
        .collect()
}

/// Sorted 1-based keyframe indices of an `N`-frame sequence. Frame 1 is
/// always present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyframeSet {
    frames: Vec<usize>,
    total: usize,
}

/// Where a frame sits relative to the keyframes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Neighbors {
    Keyframe,
    Between { prev: usize, next: usize },
    /// After the last keyframe.
    Trailing { prev: usize },
}

impl KeyframeSet {
    pub fn new(mut frames: Vec<usize>, total: usize) -> Result<Self> {
        frames.sort_unstable();
        frames.dedup();
        if frames.first() != Some(&1) {
            return Err(Error::InvalidArgument("frame 1 must be a keyframe".into()));
        }
        if let Some(bad) = frames.iter().find(|f| **f > total) {
            return Err(Error::InvalidArgument(format!("keyframe {bad} beyond {total} frames")));
        }
        Ok(Self { frames, total })
    }

    pub fn frames(&self) -> &[usize] {
        &self.frames
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.frames.binary_search(&j).is_ok()
    }

    pub fn neighbors(&self, j: usize) -> Result<Neighbors> {
        if j == 0 || j > self.total {
            return Err(Error::InvalidArgument(format!("frame {j} outside 1..={}", self.total)));
        }
        match self.frames.binary_search(&j) {
            Ok(_) => Ok(Neighbors::Keyframe),
            Err(pos) => {
                let prev = self.frames[pos - 1];
                Ok(match self.frames.get(pos) {
                    Some(&next) => Neighbors::Between { prev, next },
                    None => Neighbors::Trailing { prev },
                })
            }
        }
    }
}

/// One keyframe drawn uniformly from each window of `interval` consecutive
/// frames; the first window always yields frame 1.
pub fn select_keyframes(total: usize, interval: usize, seed: u64) -> Result<KeyframeSet> {
    if total == 0 {
        return Err(Error::InvalidArgument("sequence has no frames".into()));
    }
    if interval == 0 {
        return Err(Error::InvalidArgument("keyframe interval must be positive".into()));
    }
    let mut frames = vec![1];
    if interval < total {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut start = 1 + interval;
        while start <= total {
            let end = (start + interval - 1).min(total);
            frames.push(rng.random_range(start..=end));
            start += interval;
        }
    }
    KeyframeSet::new(frames, total)
}

/// A grid of token vectors for one frame, one layer and one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub frame: usize,
    pub height: usize,
    pub width: usize,
    /// `height · width` rows of dimension `d`, row-major over the grid.
    pub tokens: DMatrix<f64>,
    pub layer: String,
    pub stage: Stage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Coarse,
    Enhanced,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Coarse => "coarse",
            Stage::Enhanced => "enhanced",
        })
    }
}

impl FeatureMap {
    pub fn new(frame: usize, height: usize, width: usize, tokens: DMatrix<f64>, layer: impl Into<String>, stage: Stage) -> Result<Self> {
        if tokens.nrows() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} tokens for a {height}x{width} grid",
                tokens.nrows()
            )));
        }
        if tokens.ncols() == 0 {
            return Err(Error::InvalidArgument("token dimension must be positive".into()));
        }
        Ok(Self {
            frame,
            height,
            width,
            tokens,
            layer: layer.into(),
            stage,
        })
    }

    pub fn dim(&self) -> usize {
        self.tokens.ncols()
    }

    /// Tensor of dims `[height, width, d]` tagged `stage:frame:layer`.
    pub fn to_tensor(&self) -> Tensor {
        let d = self.dim();
        let mut data = Vec::with_capacity(self.tokens.len());
        for r in 0..self.tokens.nrows() {
            data.extend(self.tokens.row(r).iter().map(|v| *v as f32));
        }
        Tensor {
            dims: vec![self.height, self.width, d],
            tag: format!("{}:{}:{}", self.stage, self.frame, self.layer),
            data,
        }
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let [h, w, d] = t.dims[..] else {
            return Err(Error::DimensionMismatch(format!("feature tensor needs rank 3, got {:?}", t.dims)));
        };
        let mut parts = t.tag.splitn(3, ':');
        let bad_tag = || Error::InvalidArgument(format!("feature tag '{}' is not stage:frame:layer", t.tag));
        let stage = match parts.next() {
            Some("coarse") => Stage::Coarse,
            Some("enhanced") => Stage::Enhanced,
            _ => return Err(bad_tag()),
        };
        let frame = parts.next().and_then(|f| f.parse().ok()).ok_or_else(bad_tag)?;
        let layer = parts.next().ok_or_else(bad_tag)?;
        let tokens = DMatrix::from_row_iterator(h * w, d, t.data.iter().map(|v| *v as f64));
        Self::new(frame, h, w, tokens, layer, stage)
    }
}

fn cosine_distance_with_norms(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    1.0 - dot / (na * nb)
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `1 − a·b / (‖a‖ ‖b‖)`; 1 when either vector is zero.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    cosine_distance_with_norms(a, b, norm(a), norm(b))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

/// For every frame token, the index of the keyframe token at the smallest
/// cosine distance (first index on ties). With `window = Some(r)` the search
/// is limited to grid cells within Chebyshev distance `r` of the same cell.
pub fn nn_correspondence(frame: &FeatureMap, key: &FeatureMap, window: Option<usize>) -> Result<Vec<usize>> {
    if frame.dim() != key.dim() {
        return Err(Error::DimensionMismatch(format!("token dims {} vs {}", frame.dim(), key.dim())));
    }
    if window.is_some() && (frame.height, frame.width) != (key.height, key.width) {
        return Err(Error::DimensionMismatch("windowed search needs equal grids".into()));
    }
    if key.tokens.nrows() == 0 {
        return Err(Error::Empty("keyframe has no tokens".into()));
    }
    let fr = rows(&frame.tokens);
    let kr = rows(&key.tokens);
    let kn: Vec<f64> = kr.iter().map(|r| norm(r)).collect();
    let w = key.width;
    Ok(fr
        .par_iter()
        .enumerate()
        .map(|(q, a)| {
            let na = norm(a);
            let candidates: Box<dyn Iterator<Item = usize>> = match window {
                None => Box::new(0..kr.len()),
                Some(radius) => {
                    let (y, x) = (q / w, q % w);
                    let (y0, y1) = (y.saturating_sub(radius), (y + radius).min(key.height - 1));
                    let (x0, x1) = (x.saturating_sub(radius), (x + radius).min(w - 1));
                    Box::new((y0..=y1).flat_map(move |yy| (x0..=x1).map(move |xx| yy * w + xx)))
                }
            };
            let mut best = (f64::INFINITY, usize::MAX);
            for c in candidates {
                let dist = cosine_distance_with_norms(a, &kr[c], na, kn[c]);
                if dist < best.0 {
                    best = (dist, c);
                }
            }
            best.1
        })
        .collect())
}

/// `(j − j₋) / (j₊ − j₋)`: the weight of the later keyframe.
pub fn linear_weight(j: usize, prev: usize, next: usize) -> f64 {
    (j - prev) as f64 / (next - prev) as f64
}

/// Lookups and blend weight for one non-key frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceField {
    pub frame: usize,
    pub prev: usize,
    pub next: Option<usize>,
    pub nu_prev: Vec<usize>,
    pub nu_next: Option<Vec<usize>>,
    /// Weight of the later keyframe; 0 in single-neighbour mode.
    pub weight: f64,
}

impl CorrespondenceField {
    /// Matches the coarse features of frame `j` against those of its
    /// neighbouring keyframes. `None` for keyframes.
    pub fn build(
        j: usize,
        keyframes: &KeyframeSet,
        coarse: &FeatureMap,
        coarse_keys: &BTreeMap<usize, FeatureMap>,
        weight: &dyn Fn(usize, usize, usize) -> f64,
        window: Option<usize>,
    ) -> Result<Option<Self>> {
        let lookup = |k: usize| {
            coarse_keys
                .get(&k)
                .ok_or_else(|| Error::InvalidArgument(format!("no coarse features for keyframe {k}")))
        };
        Ok(match keyframes.neighbors(j)? {
            Neighbors::Keyframe => None,
            Neighbors::Between { prev, next } => Some(Self {
                frame: j,
                prev,
                next: Some(next),
                nu_prev: nn_correspondence(coarse, lookup(prev)?, window)?,
                nu_next: Some(nn_correspondence(coarse, lookup(next)?, window)?),
                weight: weight(j, prev, next),
            }),
            Neighbors::Trailing { prev } => Some(Self {
                frame: j,
                prev,
                next: None,
                nu_prev: nn_correspondence(coarse, lookup(prev)?, window)?,
                nu_next: None,
                weight: 0.0,
            }),
        })
    }
}

/// Weighted average of the matched enhanced tokens of the neighbouring
/// keyframes, written as `past + w (future − past)` so equal inputs come back
/// unchanged.
pub fn propagate(field: &CorrespondenceField, enhanced_prev: &DMatrix<f64>, enhanced_next: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>> {
    let n = field.nu_prev.len();
    let d = enhanced_prev.ncols();
    let check = |nu: &[usize], m: &DMatrix<f64>| -> Result<()> {
        if m.ncols() != d {
            return Err(Error::DimensionMismatch("keyframe token dims differ".into()));
        }
        if let Some(bad) = nu.iter().find(|i| **i >= m.nrows()) {
            return Err(Error::DimensionMismatch(format!("correspondence index {bad} out of {} tokens", m.nrows())));
        }
        Ok(())
    };
    check(&field.nu_prev, enhanced_prev)?;
    let mut out = DMatrix::zeros(n, d);
    match (&field.nu_next, enhanced_next) {
        (Some(nu_next), Some(next)) => {
            check(nu_next, next)?;
            let w = field.weight;
            for q in 0..n {
                for c in 0..d {
                    let past = enhanced_prev[(field.nu_prev[q], c)];
                    let future = next[(nu_next[q], c)];
                    out[(q, c)] = past + w * (future - past);
                }
            }
        }
        (None, _) => {
            for q in 0..n {
                out.row_mut(q).copy_from(&enhanced_prev.row(field.nu_prev[q]));
            }
        }
        (Some(_), None) => return Err(Error::InvalidArgument("missing enhanced features of the later keyframe".into())),
    }
    Ok(out)
}

/// Enhanced features for every frame `1..=N`: keyframes pass through, the
/// rest are propagated from their neighbours.
pub fn propagate_sequence(
    keyframes: &KeyframeSet,
    coarse: &[FeatureMap],
    enhanced_keys: &BTreeMap<usize, DMatrix<f64>>,
    weight: &dyn Fn(usize, usize, usize) -> f64,
    window: Option<usize>,
) -> Result<Vec<DMatrix<f64>>> {
    if coarse.len() != keyframes.total() {
        return Err(Error::DimensionMismatch(format!(
            "{} coarse frames for a {}-frame sequence",
            coarse.len(),
            keyframes.total()
        )));
    }
    let coarse_keys: BTreeMap<usize, FeatureMap> = keyframes.frames().iter().map(|&k| (k, coarse[k - 1].clone())).collect();
    let enhanced = |k: usize| {
        enhanced_keys
            .get(&k)
            .ok_or_else(|| Error::InvalidArgument(format!("no enhanced features for keyframe {k}")))
    };
    (1..=keyframes.total())
        .map(|j| match CorrespondenceField::build(j, keyframes, &coarse[j - 1], &coarse_keys, weight, window)? {
            None => Ok(enhanced(j)?.clone()),
            Some(field) => {
                let next = field.next.map(enhanced).transpose()?;
                propagate(&field, enhanced(field.prev)?, next)
            }
        })
        .collect()
}

/// When and how strongly coarse-pass features are fed into the enhanced pass,
/// plus the sampler settings a model host should use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InjectionSchedule {
    pub tau_features: f64,
    pub tau_attention: f64,
    pub sampling_steps: usize,
    pub inversion_steps: usize,
    pub inversion_stride: usize,
    pub inversion_guidance: f64,
    pub sampling_guidance: f64,
    pub keyframe_interval: usize,
}

impl Default for InjectionSchedule {
    fn default() -> Self {
        Self {
            tau_features: 0.8,
            tau_attention: 0.8,
            sampling_steps: 50,
            inversion_steps: 1000,
            inversion_stride: 20,
            inversion_guidance: 1.0,
            sampling_guidance: 7.5,
            keyframe_interval: 5,
        }
    }
}

impl InjectionSchedule {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        for (name, tau) in [("tau_features", self.tau_features), ("tau_attention", self.tau_attention)] {
            if !(tau > 0.0 && tau < 1.0) {
                errs.push(format!("{name} must lie in (0, 1), got {tau}"));
            }
        }
        if self.sampling_steps == 0 {
            errs.push("sampling_steps must be positive".into());
        }
        if self.inversion_stride == 0 || self.inversion_steps == 0 {
            errs.push("inversion steps and stride must be positive".into());
        }
        if self.keyframe_interval == 0 {
            errs.push("keyframe_interval must be positive".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(errs.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Gate {
    pub inject_features: bool,
    pub inject_attention: bool,
}

/// Gate for sampling step `step` of `total`; steps at or past the end inject
/// nothing.
pub fn injection_gate(step: usize, total: usize, schedule: &InjectionSchedule) -> Gate {
    if step >= total {
        return Gate::default();
    }
    let t = step as f64 / total as f64;
    Gate {
        inject_features: t < schedule.tau_features,
        inject_attention: t < schedule.tau_attention,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HookPoint {
    ResidualOut,
    AttnQ,
    AttnK,
    AttnV,
    AttnOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Encoder,
    Middle,
    Decoder,
}

/// A named point inside the denoiser at one sampling step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TapKey {
    pub frame: usize,
    pub layer: usize,
    pub step: usize,
    pub hook: HookPoint,
}

/// Stores coarse-pass activations and hands them back during the enhanced
/// pass when the schedule allows. Only decoder layers are ever injected;
/// residual outputs follow the feature gate, queries and keys the attention
/// gate. Values and attention outputs are never replaced.
#[derive(Debug, Clone, Default)]
pub struct InjectionController {
    pub schedule: InjectionSchedule,
    captured: BTreeMap<TapKey, DMatrix<f64>>,
}

impl InjectionController {
    pub fn new(schedule: InjectionSchedule) -> Result<Self> {
        schedule.validate()?;
        Ok(Self {
            schedule,
            captured: BTreeMap::new(),
        })
    }

    /// Called by the host during the coarse pass.
    pub fn capture(&mut self, key: TapKey, tokens: DMatrix<f64>) {
        self.captured.insert(key, tokens);
    }

    pub fn captured(&self) -> usize {
        self.captured.len()
    }

    pub fn is_injected(&self, key: &TapKey, kind: LayerKind) -> bool {
        if kind != LayerKind::Decoder {
            return false;
        }
        let gate = injection_gate(key.step, self.schedule.sampling_steps, &self.schedule);
        match key.hook {
            HookPoint::ResidualOut => gate.inject_features,
            HookPoint::AttnQ | HookPoint::AttnK => gate.inject_attention,
            HookPoint::AttnV | HookPoint::AttnOut => false,
        }
    }

    /// Called by the host during the enhanced pass: the activation to use in
    /// place of its own, if any.
    pub fn inject(&self, key: &TapKey, kind: LayerKind) -> Option<&DMatrix<f64>> {
        if self.is_injected(key, kind) {
            self.captured.get(key)
        } else {
            None
        }
    }
}
