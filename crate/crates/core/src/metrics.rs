//! Cross-scene score normalisation and structural similarity.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

/// Raw scores, one row per model and one column per scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub models: Vec<String>,
    pub scenes: Vec<String>,
    pub scores: Vec<Vec<f64>>,
}

impl ScoreTable {
    pub fn new(models: Vec<String>, scenes: Vec<String>, scores: Vec<Vec<f64>>) -> Result<Self> {
        let table = Self { models, scenes, scores };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() || self.scenes.is_empty() {
            return Err(Error::Empty("score table needs at least one model and one scene".into()));
        }
        if self.scores.len() != self.models.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} model labels but {} score rows",
                self.models.len(),
                self.scores.len()
            )));
        }
        for (model, row) in self.models.iter().zip(&self.scores) {
            if row.len() != self.scenes.len() {
                return Err(Error::DimensionMismatch(format!(
                    "model '{model}' has {} scores for {} scenes",
                    row.len(),
                    self.scenes.len()
                )));
            }
            if let Some(t) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "model '{model}', scene '{}': score is not a finite number",
                    self.scenes[t]
                )));
            }
        }
        Ok(())
    }

    /// Parses CSV with scene labels in the header row and model labels in
    /// the first column. The top-left header cell is ignored.
    pub fn from_csv(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let scenes: Vec<String> = rdr.headers()?.iter().skip(1).map(str::to_owned).collect();
        let mut models = Vec::new();
        let mut scores = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let mut cells = record.iter();
            let label = cells.next().unwrap_or_default().to_owned();
            let row = cells
                .enumerate()
                .map(|(t, c)| {
                    c.trim().parse::<f64>().map_err(|_| {
                        Error::InvalidArgument(format!("row {}, column {}: '{c}' is not a number", line + 2, t + 2))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            models.push(label);
            scores.push(row);
        }
        Self::new(models, scenes, scores)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(file)
    }

    pub fn to_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(std::iter::once("model").chain(self.scenes.iter().map(String::as_str)))?;
        for (model, row) in self.models.iter().zip(&self.scores) {
            let cells: Vec<String> = std::iter::once(model.clone()).chain(row.iter().map(|v| v.to_string())).collect();
            w.write_record(&cells)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZScores {
    pub table: ScoreTable,
    /// Per-model average z-score over scenes.
    pub model_means: Vec<f64>,
}

/// Standardises every scene column with its mean and population standard
/// deviation across models.
pub fn zscore_normalize(table: &ScoreTable) -> Result<ZScores> {
    table.validate()?;
    let m = table.models.len() as f64;
    let mut z = table.scores.clone();
    for (t, scene) in table.scenes.iter().enumerate() {
        let mean = table.scores.iter().map(|r| r[t]).sum::<f64>() / m;
        let var = table.scores.iter().map(|r| (r[t] - mean).powi(2)).sum::<f64>() / m;
        let std = var.sqrt();
        if !(std > 0.0) || std <= 1e-300 {
            return Err(Error::ZeroVariance { scene: scene.clone() });
        }
        for row in &mut z {
            row[t] = (row[t] - mean) / std;
        }
    }
    let n = table.scenes.len() as f64;
    let model_means = z.iter().map(|r| r.iter().sum::<f64>() / n).collect();
    Ok(ZScores {
        table: ScoreTable {
            models: table.models.clone(),
            scenes: table.scenes.clone(),
            scores: z,
        },
        model_means,
    })
}

/// Gaussian SSIM window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimWindow {
    pub size: usize,
    pub sigma: f64,
}

impl Default for SsimWindow {
    fn default() -> Self {
        Self { size: 11, sigma: 1.5 }
    }
}

const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

impl SsimWindow {
    fn taps(&self) -> Vec<f64> {
        let r = (self.size / 2) as f64;
        let raw: Vec<f64> = (0..self.size)
            .map(|i| (-(i as f64 - r).powi(2) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }
}

/// Separable "same"-size filtering with zero padding. The window is
/// symmetric, so this is also its own adjoint.
fn filter(data: &[f64], width: usize, height: usize, taps: &[f64]) -> Vec<f64> {
    let r = taps.len() as isize / 2;
    let mut tmp = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (i, w) in taps.iter().enumerate() {
                let xx = x as isize + i as isize - r;
                if xx >= 0 && (xx as usize) < width {
                    acc += w * data[y * width + xx as usize];
                }
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (i, w) in taps.iter().enumerate() {
                let yy = y as isize + i as isize - r;
                if yy >= 0 && (yy as usize) < height {
                    acc += w * tmp[yy as usize * width + x];
                }
            }
            out[y * width + x] = acc;
        }
    }
    out
}

struct SsimChannel {
    mean: f64,
    /// Adjoint of the mean SSIM with respect to the first image, unscaled.
    grad: Option<Vec<f64>>,
}

fn ssim_channel(x: &[f64], y: &[f64], width: usize, height: usize, taps: &[f64], want_grad: bool) -> SsimChannel {
    let f = |v: &[f64]| filter(v, width, height, taps);
    let mu_x = f(x);
    let mu_y = f(y);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let s_xx = f(&xx);
    let s_yy = f(&yy);
    let s_xy = f(&xy);
    let n = x.len();
    let mut total = 0.0;
    let (mut da, mut db, mut dc) = if want_grad {
        (vec![0.0; n], vec![0.0; n], vec![0.0; n])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for p in 0..n {
        let (mx, my) = (mu_x[p], mu_y[p]);
        let a1 = 2.0 * mx * my + C1;
        let a2 = 2.0 * (s_xy[p] - mx * my) + C2;
        let b1 = mx * mx + my * my + C1;
        let b2 = (s_xx[p] - mx * mx) + (s_yy[p] - my * my) + C2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        if want_grad {
            da[p] = s * (2.0 * my / a1 - 2.0 * my / a2 - 2.0 * mx / b1 + 2.0 * mx / b2);
            db[p] = -s / b2;
            dc[p] = 2.0 * s / a2;
        }
    }
    let grad = want_grad.then(|| {
        let fa = f(&da);
        let fb = f(&db);
        let fc = f(&dc);
        (0..n).map(|q| fa[q] + 2.0 * x[q] * fb[q] + y[q] * fc[q]).collect()
    });
    SsimChannel {
        mean: total / n as f64,
        grad,
    }
}

fn ssim_impl(a: &Image, b: &Image, window: &SsimWindow, want_grad: bool) -> Result<(f64, Option<Image>)> {
    a.ensure_same_shape(b, "SSIM inputs")?;
    if a.is_empty() {
        return Err(Error::Empty("SSIM of an empty image".into()));
    }
    let taps = window.taps();
    let (w, h, c) = (a.width, a.height, a.channels);
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Image::new(w, h, c));
    let count = (w * h * c) as f64;
    for ch in 0..c {
        let x = a.channel(ch).data;
        let y = b.channel(ch).data;
        let r = ssim_channel(&x, &y, w, h, &taps, want_grad);
        total += r.mean * (w * h) as f64;
        if let (Some(g), Some(rg)) = (grad.as_mut(), r.grad) {
            for (p, v) in rg.into_iter().enumerate() {
                g.data[p * c + ch] = v / count;
            }
        }
    }
    Ok((total / count, grad))
}

/// Mean SSIM over all pixels and channels.
pub fn ssim(a: &Image, b: &Image, window: &SsimWindow) -> Result<f64> {
    Ok(ssim_impl(a, b, window, false)?.0)
}

/// `(1 − SSIM) / 2`.
pub fn dssim(a: &Image, b: &Image, window: &SsimWindow) -> Result<f64> {
    Ok((1.0 - ssim(a, b, window)?) / 2.0)
}

/// D-SSIM and its gradient with respect to `a`.
pub fn dssim_with_grad(a: &Image, b: &Image, window: &SsimWindow) -> Result<(f64, Image)> {
    let (s, g) = ssim_impl(a, b, window, true)?;
    let mut g = g.expect("gradient requested");
    g.data.iter_mut().for_each(|v| *v *= -0.5);
    Ok(((1.0 - s) / 2.0, g))
}
