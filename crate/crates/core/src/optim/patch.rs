use crate::error::{Error, Result};
use crate::image::Image;

/// Guard added to standard deviations in [`normalize`].
pub const NORMALIZE_EPS: f64 = 1e-6;

/// One square tile of a single-channel map. `sources[i]` is the map pixel
/// (row-major index) that value `i` was read from; padded entries repeat the
/// nearest edge pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub x0: usize,
    pub y0: usize,
    pub size: usize,
    pub values: Vec<f64>,
    pub sources: Vec<usize>,
}

/// Splits a single-channel map into `size × size` tiles in row-major tile
/// order, padding the right and bottom edges by replication.
pub fn patchify(map: &Image, size: usize) -> Result<Vec<Patch>> {
    if map.channels != 1 {
        return Err(Error::InvalidArgument(format!("patchify needs 1 channel, got {}", map.channels)));
    }
    if size == 0 {
        return Err(Error::InvalidArgument("patch size must be positive".into()));
    }
    if map.is_empty() {
        return Ok(Vec::new());
    }
    let tiles_x = map.width.div_ceil(size);
    let tiles_y = map.height.div_ceil(size);
    let mut out = Vec::with_capacity(tiles_x * tiles_y);
    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            let (x0, y0) = (tx * size, ty * size);
            let mut values = Vec::with_capacity(size * size);
            let mut sources = Vec::with_capacity(size * size);
            for dy in 0..size {
                let y = (y0 + dy).min(map.height - 1);
                for dx in 0..size {
                    let x = (x0 + dx).min(map.width - 1);
                    let src = y * map.width + x;
                    values.push(map.data[src]);
                    sources.push(src);
                }
            }
            out.push(Patch {
                x0,
                y0,
                size,
                values,
                sources,
            });
        }
    }
    Ok(out)
}

/// Inverse of [`patchify`] on the unpadded region.
pub fn unpatchify(patches: &[Patch], width: usize, height: usize) -> Image {
    let mut map = Image::new(width, height, 1);
    for p in patches {
        for dy in 0..p.size {
            for dx in 0..p.size {
                let (x, y) = (p.x0 + dx, p.y0 + dy);
                if x < width && y < height {
                    map.data[y * width + x] = p.values[dy * p.size + dx];
                }
            }
        }
    }
    map
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Balanced local/global standardisation: the average of the patch
/// standardised by its own statistics and by the map's `(mean, std)`.
pub fn normalize(patch: &[f64], global: (f64, f64)) -> Vec<f64> {
    let (lm, ls) = mean_std(patch);
    let (gm, gs) = global;
    patch
        .iter()
        .map(|x| 0.5 * (x - lm) / (ls + NORMALIZE_EPS) + 0.5 * (x - gm) / (gs + NORMALIZE_EPS))
        .collect()
}

/// Vector-Jacobian product of `(x − mean) / (std + ε)` over `values`.
pub fn standardize_backward(values: &[f64], upstream: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let (m, s) = mean_std(values);
    let se = s + NORMALIZE_EPS;
    let g_mean = upstream.iter().sum::<f64>() / n;
    let cross: f64 = upstream.iter().zip(values).map(|(g, x)| g * (x - m)).sum();
    let coupling = if s > 0.0 { cross / (n * s * se * se) } else { 0.0 };
    values
        .iter()
        .zip(upstream)
        .map(|(x, g)| (g - g_mean) / se - (x - m) * coupling)
        .collect()
}
