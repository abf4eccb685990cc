//! Splat refinement against an input image and multi-view depth maps.

mod loss;
mod params;
mod patch;

use log::{debug, info};
use serde::{Deserialize, Serialize};

pub use loss::{color_loss, hard_depth_loss, patch_depth_loss, ColorLoss, HardDepthLoss};
pub use params::{param_grad, KernelParams, ParamGrad};
pub use patch::{mean_std, normalize, patchify, standardize_backward, unpatchify, Patch, NORMALIZE_EPS};

use crate::error::{Error, Result};
use crate::gaussians::{Camera, GaussianKernel, KernelGrad, RenderSettings};
use crate::image::Image;
use crate::math::Vec3;

/// One supervision view: a camera, its target image and an optional
/// relative-scale depth map.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionView {
    pub camera: Camera,
    pub image: Image,
    pub depth: Option<Image>,
    pub is_input_view: bool,
}

impl SupervisionView {
    pub fn validate(&self, index: usize) -> Result<()> {
        self.camera.validate()?;
        let (w, h) = (self.camera.width, self.camera.height);
        if self.image.width != w || self.image.height != h || self.image.channels != 3 {
            return Err(Error::DimensionMismatch(format!(
                "view {index}: image is {}x{}x{}, camera expects {w}x{h}x3",
                self.image.width, self.image.height, self.image.channels
            )));
        }
        if let Some(d) = &self.depth {
            if d.width != w || d.height != h || d.channels != 1 {
                return Err(Error::DimensionMismatch(format!(
                    "view {index}: depth is {}x{}x{}, camera expects {w}x{h}x1",
                    d.width, d.height, d.channels
                )));
            }
        }
        Ok(())
    }
}

/// Per-group step sizes for plain gradient descent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningRates {
    pub position: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
    pub color: f64,
}

impl LearningRates {
    /// Defaults, with the position rate proportional to the scene extent.
    pub fn for_extent(extent: f64) -> Self {
        Self {
            position: 2e-4 * extent,
            opacity: 5e-2,
            scale: 5e-3,
            rotation: 5e-3,
            color: 2.5e-3,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            position: self.position * s,
            opacity: self.opacity * s,
            scale: self.scale * s,
            rotation: self.rotation * s,
            color: self.color * s,
        }
    }
}

/// Diagonal of the bounding box of all kernels, each padded by three standard
/// deviations along every axis.
pub fn scene_extent(kernels: &[GaussianKernel]) -> f64 {
    if kernels.is_empty() {
        return 0.0;
    }
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for k in kernels {
        let h = k.world_covariance;
        let pad = Vec3::new(h[(0, 0)], h[(1, 1)], h[(2, 2)]).map(|v| 3.0 * v.max(0.0).sqrt());
        lo = lo.inf(&(k.center - pad));
        hi = hi.sup(&(k.center + pad));
    }
    (hi - lo).norm()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSchedule {
    pub epochs: usize,
    /// Rates are multiplied by `decay_factor` for epochs after this one.
    pub decay_epoch: usize,
    pub decay_factor: f64,
    /// Hard-depth steps run on epochs `e > hard_depth_start` with
    /// `e % hard_depth_every == 0`.
    pub hard_depth_start: usize,
    pub hard_depth_every: usize,
    pub patch_size: usize,
    pub delta: f64,
    pub lambda: f64,
    /// `None` derives the rates from the scene extent.
    pub rates: Option<LearningRates>,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs: 3000,
            decay_epoch: 1500,
            decay_factor: 0.1,
            hard_depth_start: 500,
            hard_depth_every: 10,
            patch_size: 8,
            delta: 0.99,
            lambda: 0.2,
            rates: None,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.hard_depth_start >= self.epochs {
            errs.push(format!("hard_depth_start ({}) must be below epochs ({})", self.hard_depth_start, self.epochs));
        }
        if self.hard_depth_every == 0 {
            errs.push("hard_depth_every must be positive".to_string());
        }
        if self.patch_size == 0 {
            errs.push("patch_size must be positive".to_string());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            errs.push(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            errs.push(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor.is_finite()) {
            errs.push(format!("decay_factor must be positive, got {}", self.decay_factor));
        }
        if let Some(r) = &self.rates {
            let all = [r.position, r.opacity, r.scale, r.rotation, r.color];
            if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                errs.push("learning rates must be finite and non-negative".to_string());
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(errs.join("; ")))
        }
    }

    /// Learning-rate multiplier for 1-based epoch `e`.
    pub fn lr_scale(&self, epoch: usize) -> f64 {
        if epoch > self.decay_epoch {
            self.decay_factor
        } else {
            1.0
        }
    }

    pub fn hard_depth_active(&self, epoch: usize) -> bool {
        epoch > self.hard_depth_start && epoch.is_multiple_of(self.hard_depth_every)
    }

    pub fn rates_for(&self, kernels: &[GaussianKernel]) -> LearningRates {
        self.rates.unwrap_or_else(|| LearningRates::for_extent(scene_extent(kernels)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr_scale: f64,
    pub color_loss: f64,
    pub hard_depth_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeReport {
    pub kernels: Vec<GaussianKernel>,
    pub history: Vec<EpochLog>,
}

/// One descent step on the color loss of the input view. Every parameter
/// group moves. Returns the loss before the step.
pub fn color_step(
    kernels: &mut [GaussianKernel],
    view: &SupervisionView,
    lambda: f64,
    rates: &LearningRates,
    settings: &RenderSettings,
) -> Result<f64> {
    let out = color_loss(kernels, view, lambda, settings)?;
    // at a zero loss the zero subgradient is exact; skip rounding residue
    if !out.loss.is_finite() || out.loss == 0.0 {
        return Ok(out.loss);
    }
    for (k, g) in kernels.iter_mut().zip(&out.grads) {
        if *g == KernelGrad::default() {
            continue;
        }
        let mut p = KernelParams::from_kernel(k);
        let d = param_grad(&p, g);
        p.position -= rates.position * d.position;
        p.opacity_logit -= rates.opacity * d.opacity_logit;
        p.log_scale -= rates.scale * d.log_scale;
        for (q, dq) in p.rotation.iter_mut().zip(d.rotation) {
            *q -= rates.rotation * dq;
        }
        p.color -= rates.color * d.color;
        p.apply(k);
    }
    Ok(out.loss)
}

/// One descent step on the hard-depth loss. Only centers move; opacity,
/// covariance and color are left untouched bit for bit.
pub fn hard_depth_step(
    kernels: &mut [GaussianKernel],
    views: &[SupervisionView],
    delta: f64,
    patch_size: usize,
    position_rate: f64,
    settings: &RenderSettings,
) -> Result<f64> {
    let out = hard_depth_loss(kernels, views, delta, patch_size, settings)?;
    if !out.loss.is_finite() {
        return Ok(out.loss);
    }
    for (k, g) in kernels.iter_mut().zip(&out.center_grads) {
        let step = g * position_rate;
        k.center -= step;
        k.rest_center -= step;
    }
    Ok(out.loss)
}

fn diverged(epoch: usize, reason: String, kernels: &[GaussianKernel]) -> Error {
    Error::Diverged {
        epoch,
        reason,
        snapshot: Box::new(kernels.to_vec()),
    }
}

/// Runs the full schedule: a color step on the input view every epoch and a
/// hard-depth step on the configured cadence.
pub fn optimize(
    kernels: &[GaussianKernel],
    views: &[SupervisionView],
    schedule: &TrainSchedule,
    settings: &RenderSettings,
) -> Result<OptimizeReport> {
    schedule.validate()?;
    if kernels.is_empty() {
        return Err(Error::Empty("no kernels to optimize".into()));
    }
    for (i, k) in kernels.iter().enumerate() {
        k.validate(i)?;
    }
    for (a, v) in views.iter().enumerate() {
        v.validate(a)?;
    }
    let inputs: Vec<&SupervisionView> = views.iter().filter(|v| v.is_input_view).collect();
    let input = match inputs.as_slice() {
        [one] => *one,
        [] => return Err(Error::InvalidArgument("no input view among the supervision views".into())),
        _ => return Err(Error::InvalidArgument(format!("{} views are marked as input views", inputs.len()))),
    };
    let base = schedule.rates_for(kernels);
    info!(
        "optimizing {} kernels over {} views for {} epochs (position rate {:.3e})",
        kernels.len(),
        views.len(),
        schedule.epochs,
        base.position
    );

    let mut current = kernels.to_vec();
    let mut history = Vec::with_capacity(schedule.epochs);
    for epoch in 1..=schedule.epochs {
        let scale = schedule.lr_scale(epoch);
        let rates = base.scaled(scale);
        let color = color_step(&mut current, input, schedule.lambda, &rates, settings)?;
        if !color.is_finite() {
            return Err(diverged(epoch, format!("color loss is {color}"), &current));
        }
        let hard = if schedule.hard_depth_active(epoch) {
            let l = hard_depth_step(&mut current, views, schedule.delta, schedule.patch_size, rates.position, settings)?;
            if !l.is_finite() {
                return Err(diverged(epoch, format!("hard-depth loss is {l}"), &current));
            }
            Some(l)
        } else {
            None
        };
        if let Some(i) = current.iter().position(|k| !k.is_finite()) {
            return Err(diverged(epoch, format!("kernel {i} became non-finite"), &current));
        }
        if epoch % 100 == 0 {
            debug!("epoch {epoch}: color {color:.6e} hard-depth {hard:?}");
        }
        history.push(EpochLog {
            epoch,
            lr_scale: scale,
            color_loss: color,
            hard_depth_loss: hard,
        });
    }
    Ok(OptimizeReport {
        kernels: current,
        history,
    })
}
