use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{project_kernel, Camera, GaussianKernel, Splat2D};
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSettings {
    /// Isotropic floor (px²) added to every projected covariance.
    pub covariance_floor: f64,
    /// Contributions with a projected weight below this are skipped.
    pub min_weight: f64,
    /// Compositing stops once transmittance drops below this.
    pub min_transmittance: f64,
    /// Multiply hard-depth weights by the kernel opacity.
    pub hard_depth_includes_opacity: bool,
    /// Kernels whose camera-frame depth is not above this are culled.
    pub near: f64,
    pub tile_size: usize,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            covariance_floor: 0.3,
            min_weight: 1e-4,
            min_transmittance: 1e-4,
            hard_depth_includes_opacity: false,
            near: 1e-3,
            tile_size: 16,
        }
    }
}

impl RenderSettings {
    /// No truncation at all: every visible splat contributes to every pixel.
    pub fn exact() -> Self {
        Self {
            min_weight: 0.0,
            min_transmittance: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub color: Image,
    pub depth: Image,
    pub alpha: Image,
}

/// Projected, depth-sorted and tile-binned splats for one camera.
pub struct PreparedScene<'a> {
    pub kernels: &'a [GaussianKernel],
    pub camera: &'a Camera,
    pub settings: &'a RenderSettings,
    /// Visible splats sorted front to back.
    pub splats: Vec<Splat2D>,
    tiles_x: usize,
    tiles_y: usize,
    /// Per tile, indices into `splats` in front-to-back order.
    bins: Vec<Vec<u32>>,
}

fn total_order(a: &GaussianKernel, b: &GaussianKernel) -> Ordering {
    // content-based tie break so that permuting the input cannot change the
    // compositing order of distinct kernels
    let lhs = a.center.iter().chain(std::iter::once(&a.opacity)).chain(a.color.iter()).chain(a.world_covariance.iter());
    let rhs = b.center.iter().chain(std::iter::once(&b.opacity)).chain(b.color.iter()).chain(b.world_covariance.iter());
    for (x, y) in lhs.zip(rhs) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

impl<'a> PreparedScene<'a> {
    pub fn new(kernels: &'a [GaussianKernel], camera: &'a Camera, settings: &'a RenderSettings) -> Result<Self> {
        if let Some(index) = kernels.iter().position(|k| !k.is_finite()) {
            return Err(Error::InvalidKernel {
                index,
                reason: "non-finite value".into(),
            });
        }
        let mut splats: Vec<Splat2D> = kernels
            .par_iter()
            .enumerate()
            .filter_map(|(i, k)| project_kernel(k, camera, i, settings.covariance_floor, settings.near))
            .collect();
        splats.sort_by(|a, b| {
            a.depth
                .total_cmp(&b.depth)
                .then_with(|| total_order(&kernels[a.kernel], &kernels[b.kernel]))
                .then(a.kernel.cmp(&b.kernel))
        });

        let ts = settings.tile_size.max(1);
        let tiles_x = camera.width.div_ceil(ts);
        let tiles_y = camera.height.div_ceil(ts);
        let mut bins = vec![Vec::new(); tiles_x * tiles_y];
        for (si, s) in splats.iter().enumerate() {
            let r = s.cutoff_radius(settings.min_weight);
            let (x0, x1, y0, y1) = if r.is_finite() {
                let lo_x = ((s.mean.x - r) / ts as f64).floor().max(0.0);
                let hi_x = ((s.mean.x + r) / ts as f64).floor().min(tiles_x as f64 - 1.0);
                let lo_y = ((s.mean.y - r) / ts as f64).floor().max(0.0);
                let hi_y = ((s.mean.y + r) / ts as f64).floor().min(tiles_y as f64 - 1.0);
                if hi_x < lo_x || hi_y < lo_y {
                    continue;
                }
                (lo_x as usize, hi_x as usize, lo_y as usize, hi_y as usize)
            } else {
                (0, tiles_x.saturating_sub(1), 0, tiles_y.saturating_sub(1))
            };
            for ty in y0..=y1 {
                for tx in x0..=x1 {
                    bins[ty * tiles_x + tx].push(si as u32);
                }
            }
        }
        Ok(Self {
            kernels,
            camera,
            settings,
            splats,
            tiles_x,
            tiles_y,
            bins,
        })
    }

    pub fn tile_count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    /// Pixel bounds `(x0, x1, y0, y1)` (exclusive upper) of tile `t`.
    pub fn tile_bounds(&self, t: usize) -> (usize, usize, usize, usize) {
        let ts = self.settings.tile_size.max(1);
        let (tx, ty) = (t % self.tiles_x, t / self.tiles_x);
        (
            tx * ts,
            ((tx + 1) * ts).min(self.camera.width),
            ty * ts,
            ((ty + 1) * ts).min(self.camera.height),
        )
    }

    pub fn tile_of(&self, x: usize, y: usize) -> usize {
        let ts = self.settings.tile_size.max(1);
        (y / ts) * self.tiles_x + x / ts
    }

    /// Front-to-back `(splat index, weight)` pairs overlapping pixel `(x, y)`.
    pub fn hits(&self, x: usize, y: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (px, py) = Camera::pixel_center(x, y);
        let min_w = self.settings.min_weight;
        self.bins[self.tile_of(x, y)].iter().filter_map(move |&si| {
            let g = self.splats[si as usize].weight(px, py);
            (g > 0.0 && g >= min_w).then_some((si as usize, g))
        })
    }

    pub(crate) fn bin(&self, t: usize) -> &[u32] {
        &self.bins[t]
    }

    /// Like [`hits`](Self::hits) but also yields the position within the
    /// pixel's tile bin.
    pub(crate) fn hits_in_bin(&self, x: usize, y: usize) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let (px, py) = Camera::pixel_center(x, y);
        let min_w = self.settings.min_weight;
        self.bins[self.tile_of(x, y)].iter().enumerate().filter_map(move |(pos, &si)| {
            let g = self.splats[si as usize].weight(px, py);
            (g > 0.0 && g >= min_w).then_some((pos, si as usize, g))
        })
    }

    fn composite_pixel(&self, x: usize, y: usize) -> ([f64; 3], f64, f64) {
        let mut color = [0.0; 3];
        let mut depth = 0.0;
        let mut accumulated = 0.0;
        let mut transmittance = 1.0;
        for (si, g) in self.hits(x, y) {
            let splat = &self.splats[si];
            let kernel = &self.kernels[splat.kernel];
            let alpha = kernel.opacity * g;
            let w = alpha * transmittance;
            accumulated += w;
            for (c, kc) in color.iter_mut().zip(kernel.color.iter()) {
                *c += w * kc;
            }
            depth += w * splat.depth;
            transmittance *= 1.0 - alpha;
            if transmittance < self.settings.min_transmittance {
                break;
            }
        }
        (color, depth, accumulated)
    }

    fn hard_depth_pixel(&self, x: usize, y: usize, delta: f64) -> f64 {
        let mut out = 0.0;
        let mut rank_weight = delta;
        for (si, g) in self.hits(x, y) {
            let splat = &self.splats[si];
            let mut w = rank_weight * g;
            if self.settings.hard_depth_includes_opacity {
                w *= self.kernels[splat.kernel].opacity;
            }
            out += splat.depth * w;
            rank_weight *= 1.0 - delta;
        }
        out
    }

    pub fn render(&self) -> RenderOutput {
        let (w, h) = (self.camera.width, self.camera.height);
        let pixels: Vec<([f64; 3], f64, f64)> = (0..w * h)
            .into_par_iter()
            .map(|i| self.composite_pixel(i % w, i / w))
            .collect();
        let mut color = Image::new(w, h, 3);
        let mut depth = Image::new(w, h, 1);
        let mut alpha = Image::new(w, h, 1);
        for (i, (c, d, a)) in pixels.into_iter().enumerate() {
            color.data[3 * i..3 * i + 3].copy_from_slice(&c);
            depth.data[i] = d;
            alpha.data[i] = a.clamp(0.0, 1.0);
        }
        RenderOutput { color, depth, alpha }
    }

    pub fn render_hard_depth(&self, delta: f64) -> Image {
        let (w, h) = (self.camera.width, self.camera.height);
        let data = (0..w * h)
            .into_par_iter()
            .map(|i| self.hard_depth_pixel(i % w, i / w, delta))
            .collect();
        Image {
            width: w,
            height: h,
            channels: 1,
            data,
        }
    }
}

/// Composites color, expected depth and accumulated alpha.
pub fn render(kernels: &[GaussianKernel], camera: &Camera, settings: &RenderSettings) -> Result<RenderOutput> {
    Ok(PreparedScene::new(kernels, camera, settings)?.render())
}

/// Depth rendered with opacities replaced by the geometric sequence
/// `δ (1 − δ)^(rank − 1)`, so that only the nearest splats matter.
pub fn render_hard_depth(
    kernels: &[GaussianKernel],
    camera: &Camera,
    delta: f64,
    settings: &RenderSettings,
) -> Result<Image> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("hard-depth delta {delta} outside (0, 1)")));
    }
    Ok(PreparedScene::new(kernels, camera, settings)?.render_hard_depth(delta))
}
