//! Analytic backward passes of the color and hard-depth renderers.
//!
//! Per-pixel partials are accumulated per tile and reduced in tile order, so
//! gradients are bit-reproducible regardless of thread count.

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;

use super::project::{projection_jacobian, projection_jacobian_derivatives};
use super::{Camera, GaussianKernel, PreparedScene, RenderSettings, Splat2D};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::{Mat3, Vec3};

/// Gradient of a scalar loss with respect to one kernel's render inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelGrad {
    pub center: Vec3,
    pub opacity: f64,
    pub world_covariance: Mat3,
    pub color: Vec3,
}

impl Default for KernelGrad {
    fn default() -> Self {
        Self {
            center: Vec3::zeros(),
            opacity: 0.0,
            world_covariance: Mat3::zeros(),
            color: Vec3::zeros(),
        }
    }
}

/// Partials with respect to the screen-space quantities of one splat.
#[derive(Debug, Clone, Copy)]
struct ScreenGrad {
    mean: Vector2<f64>,
    conic: Matrix2<f64>,
    depth: f64,
    opacity: f64,
    color: Vec3,
}

impl Default for ScreenGrad {
    fn default() -> Self {
        Self {
            mean: Vector2::zeros(),
            conic: Matrix2::zeros(),
            depth: 0.0,
            opacity: 0.0,
            color: Vec3::zeros(),
        }
    }
}

impl ScreenGrad {
    fn add(&mut self, o: &ScreenGrad) {
        self.mean += o.mean;
        self.conic += o.conic;
        self.depth += o.depth;
        self.opacity += o.opacity;
        self.color += o.color;
    }

    /// Chain rule through `g = exp(-½ Δᵀ A Δ)`, `Δ = p − mean`.
    fn add_weight_grad(&mut self, splat: &Splat2D, px: f64, py: f64, g: f64, d_weight: f64) {
        let delta = Vector2::new(px - splat.mean.x, py - splat.mean.y);
        let s = d_weight * g;
        self.mean += splat.conic * delta * s;
        self.conic += delta * delta.transpose() * (-0.5 * s);
    }
}

fn accumulate<F>(scene: &PreparedScene<'_>, pixel: F) -> Vec<ScreenGrad>
where
    F: Fn(usize, usize, &[(usize, usize, f64)], &mut [ScreenGrad]) + Sync,
{
    let per_tile: Vec<Vec<ScreenGrad>> = (0..scene.tile_count())
        .into_par_iter()
        .map(|t| {
            let bin = scene.bin(t);
            let mut local = vec![ScreenGrad::default(); bin.len()];
            let (x0, x1, y0, y1) = scene.tile_bounds(t);
            let mut hits = Vec::new();
            for y in y0..y1 {
                for x in x0..x1 {
                    hits.clear();
                    hits.extend(scene.hits_in_bin(x, y));
                    if !hits.is_empty() {
                        pixel(x, y, &hits, &mut local);
                    }
                }
            }
            local
        })
        .collect();

    let mut total = vec![ScreenGrad::default(); scene.splats.len()];
    for (t, local) in per_tile.iter().enumerate() {
        for (pos, &si) in scene.bin(t).iter().enumerate() {
            total[si as usize].add(&local[pos]);
        }
    }
    total
}

/// Maps screen-space partials of a splat back onto its kernel.
fn splat_backward(kernel: &GaussianKernel, camera: &Camera, splat: &Splat2D, sg: &ScreenGrad) -> KernelGrad {
    let t = splat.camera_point;
    let w = camera.world_to_camera_rotation();
    let j = projection_jacobian(camera, &t);
    let m = w * kernel.world_covariance * w.transpose();
    let a = splat.conic;

    // A = Σ2⁻¹  ⇒  dL/dΣ2 = −A (dL/dA) A
    let d_cov2 = -(a * sg.conic * a);
    let jw = j * w;
    let d_world_cov = jw.transpose() * d_cov2 * jw;

    let mut d_t: Vec3 = j.transpose() * sg.mean;
    let jm = j * m;
    for (i, dj) in projection_jacobian_derivatives(camera, &t).iter().enumerate() {
        // Σ2 = J M Jᵀ: dΣ2/dt_i = J_i M Jᵀ + J M J_iᵀ
        let inner = jm * dj.transpose();
        d_t[i] += 2.0 * d_cov2.component_mul(&inner).sum();
    }
    let mut d_center = w.transpose() * d_t;
    if splat.depth > 0.0 {
        d_center += (kernel.center - camera.position) * (sg.depth / splat.depth);
    }
    KernelGrad {
        center: d_center,
        opacity: sg.opacity,
        world_covariance: d_world_cov,
        color: sg.color,
    }
}

fn to_kernel_grads(scene: &PreparedScene<'_>, screen: &[ScreenGrad]) -> Vec<KernelGrad> {
    let mut out = vec![KernelGrad::default(); scene.kernels.len()];
    for (splat, sg) in scene.splats.iter().zip(screen) {
        out[splat.kernel] = splat_backward(&scene.kernels[splat.kernel], scene.camera, splat, sg);
    }
    out
}

/// Gradient of a loss with respect to every kernel's center, opacity, world
/// covariance and color, given `d_color = ∂L/∂(rendered color)`.
pub fn render_backward(
    kernels: &[GaussianKernel],
    camera: &Camera,
    settings: &RenderSettings,
    d_color: &Image,
) -> Result<Vec<KernelGrad>> {
    if d_color.width != camera.width || d_color.height != camera.height || d_color.channels != 3 {
        return Err(Error::DimensionMismatch("color gradient does not match camera".into()));
    }
    let scene = PreparedScene::new(kernels, camera, settings)?;
    let screen = accumulate(&scene, |x, y, hits, local| {
        let (px, py) = Camera::pixel_center(x, y);
        let upstream = Vec3::from_column_slice(d_color.pixel(x, y));

        // forward replay, honouring early termination
        let mut alphas = Vec::with_capacity(hits.len());
        let mut trans = Vec::with_capacity(hits.len());
        let mut t_acc = 1.0;
        for &(_, si, g) in hits {
            let alpha = kernels[scene.splats[si].kernel].opacity * g;
            alphas.push(alpha);
            trans.push(t_acc);
            t_acc *= 1.0 - alpha;
            if t_acc < settings.min_transmittance {
                break;
            }
        }

        // back to front; `behind` is the color composited behind splat n
        let mut behind = Vec3::zeros();
        for n in (0..alphas.len()).rev() {
            let (pos, si, g) = hits[n];
            let splat = &scene.splats[si];
            let kernel = &kernels[splat.kernel];
            let (alpha, t_n) = (alphas[n], trans[n]);
            let d_alpha = t_n * (kernel.color - behind).dot(&upstream);
            let entry = &mut local[pos];
            entry.color += upstream * (alpha * t_n);
            entry.opacity += d_alpha * g;
            entry.add_weight_grad(splat, px, py, g, d_alpha * kernel.opacity);
            behind = kernel.color * alpha + behind * (1.0 - alpha);
        }
    });
    Ok(to_kernel_grads(&scene, &screen))
}

/// Gradient of a loss with respect to kernel centers through the hard-depth
/// renderer, given `d_depth = ∂L/∂D_hard`.
pub fn hard_depth_backward(
    kernels: &[GaussianKernel],
    camera: &Camera,
    delta: f64,
    settings: &RenderSettings,
    d_depth: &Image,
) -> Result<Vec<Vec3>> {
    if d_depth.width != camera.width || d_depth.height != camera.height || d_depth.channels != 1 {
        return Err(Error::DimensionMismatch("depth gradient does not match camera".into()));
    }
    let scene = PreparedScene::new(kernels, camera, settings)?;
    let screen = accumulate(&scene, |x, y, hits, local| {
        let upstream = d_depth.get(x, y, 0);
        if upstream == 0.0 {
            return;
        }
        let (px, py) = Camera::pixel_center(x, y);
        let mut rank_weight = delta;
        for &(pos, si, g) in hits {
            let splat = &scene.splats[si];
            let mut w = rank_weight;
            if settings.hard_depth_includes_opacity {
                w *= kernels[splat.kernel].opacity;
            }
            let entry = &mut local[pos];
            entry.depth += upstream * w * g;
            entry.add_weight_grad(splat, px, py, g, upstream * w * splat.depth);
            rank_weight *= 1.0 - delta;
        }
    });
    Ok(to_kernel_grads(&scene, &screen).into_iter().map(|g| g.center).collect())
}
