use log::warn;

use super::patch::{mean_std, normalize, patchify, standardize_backward};
use super::SupervisionView;
use crate::error::{Error, Result};
use crate::gaussians::{hard_depth_backward, render, render_backward, render_hard_depth, GaussianKernel, KernelGrad, RenderSettings};
use crate::image::Image;
use crate::math::Vec3;
use crate::metrics::{dssim_with_grad, SsimWindow};

/// Patchwise hard-depth loss of one depth map against its target, and the
/// gradient with respect to the rendered map.
pub fn patch_depth_loss(depth: &Image, target: &Image, patch_size: usize) -> Result<(f64, Image)> {
    depth.ensure_same_shape(target, "hard-depth loss")?;
    if depth.is_empty() {
        return Ok((0.0, depth.clone()));
    }
    let global_d = mean_std(&depth.data);
    let global_t = mean_std(&target.data);
    let pd = patchify(depth, patch_size)?;
    let pt = patchify(target, patch_size)?;
    let mut loss = 0.0;
    let mut grad = Image::new(depth.width, depth.height, 1);
    let mut global_upstream = vec![0.0; depth.data.len()];
    for (a, b) in pd.iter().zip(&pt) {
        let na = normalize(&a.values, global_d);
        let nb = normalize(&b.values, global_t);
        let r: Vec<f64> = na.iter().zip(&nb).map(|(x, y)| x - y).collect();
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        loss += norm;
        if norm == 0.0 {
            continue;
        }
        let half: Vec<f64> = r.iter().map(|v| 0.5 * v / norm).collect();
        let local = standardize_backward(&a.values, &half);
        for ((src, l), h) in a.sources.iter().zip(&local).zip(&half) {
            grad.data[*src] += l;
            global_upstream[*src] += h;
        }
    }
    let global = standardize_backward(&depth.data, &global_upstream);
    for (g, v) in grad.data.iter_mut().zip(global) {
        *g += v;
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardDepthLoss {
    pub loss: f64,
    /// Loss per view; `None` for views without a target depth.
    pub per_view: Vec<Option<f64>>,
    pub center_grads: Vec<Vec3>,
}

/// Sum over views and patches of `‖N(D_hard) − N(D̂)‖₂`. Only kernel centers
/// receive gradients.
pub fn hard_depth_loss(
    kernels: &[GaussianKernel],
    views: &[SupervisionView],
    delta: f64,
    patch_size: usize,
    settings: &RenderSettings,
) -> Result<HardDepthLoss> {
    let mut total = 0.0;
    let mut per_view = Vec::with_capacity(views.len());
    let mut grads = vec![Vec3::zeros(); kernels.len()];
    for (a, view) in views.iter().enumerate() {
        let Some(target) = &view.depth else {
            warn!("view {a} has no depth map; skipped in the hard-depth loss");
            per_view.push(None);
            continue;
        };
        let depth = render_hard_depth(kernels, &view.camera, delta, settings)?;
        let (loss, d_depth) = patch_depth_loss(&depth, target, patch_size)?;
        total += loss;
        per_view.push(Some(loss));
        if loss > 0.0 {
            let g = hard_depth_backward(kernels, &view.camera, delta, settings, &d_depth)?;
            for (acc, v) in grads.iter_mut().zip(g) {
                *acc += v;
            }
        }
    }
    Ok(HardDepthLoss {
        loss: total,
        per_view,
        center_grads: grads,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColorLoss {
    pub loss: f64,
    pub l1: f64,
    pub dssim: f64,
    pub grads: Vec<KernelGrad>,
}

/// `L1 + λ · D-SSIM` of the rendered input view against its image.
pub fn color_loss(kernels: &[GaussianKernel], view: &SupervisionView, lambda: f64, settings: &RenderSettings) -> Result<ColorLoss> {
    if view.image.channels != 3 {
        return Err(Error::InvalidArgument("color supervision needs an RGB image".into()));
    }
    let rendered = render(kernels, &view.camera, settings)?.color;
    rendered.ensure_same_shape(&view.image, "color loss")?;
    let n = rendered.data.len() as f64;
    let mut l1 = 0.0;
    let mut d_color = Image::new(rendered.width, rendered.height, 3);
    for ((g, a), b) in d_color.data.iter_mut().zip(&rendered.data).zip(&view.image.data) {
        let r = a - b;
        l1 += r.abs();
        *g = if r > 0.0 {
            1.0 / n
        } else if r < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    l1 /= n;
    let mut dssim = 0.0;
    if lambda != 0.0 {
        let (d, g) = dssim_with_grad(&rendered, &view.image, &SsimWindow::default())?;
        dssim = d;
        for (acc, v) in d_color.data.iter_mut().zip(g.data) {
            *acc += lambda * v;
        }
    }
    let grads = render_backward(kernels, &view.camera, settings, &d_color)?;
    Ok(ColorLoss {
        loss: l1 + lambda * dssim,
        l1,
        dssim,
        grads,
    })
}
