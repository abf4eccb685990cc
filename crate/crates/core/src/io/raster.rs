use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::gaussians::RenderOutput;
use crate::image::Image;

/// Writes a 1- or 3-channel image as little-endian PFM (rows bottom to top).
pub fn write_pfm(image: &Image, path: &Path) -> Result<()> {
    let tag = match image.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::InvalidArgument(format!("PFM needs 1 or 3 channels, got {c}"))),
    };
    if image.is_empty() {
        return Err(Error::Empty(format!("{}: refusing to write a 0-pixel image", path.display())));
    }
    let mut w = super::create(path)?;
    let mut body = || -> std::io::Result<()> {
        write!(w, "{tag}\n{} {}\n-1.0\n", image.width, image.height)?;
        for y in (0..image.height).rev() {
            let row = y * image.width * image.channels;
            for v in &image.data[row..row + image.width * image.channels] {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

fn header_token(r: &mut impl BufRead, path: &Path) -> Result<String> {
    let mut token = Vec::new();
    let mut byte = [0u8];
    loop {
        match r.read(&mut byte).map_err(|e| Error::io(path, e))? {
            0 => break,
            _ if byte[0].is_ascii_whitespace() => {
                if !token.is_empty() {
                    break;
                }
            }
            _ => token.push(byte[0]),
        }
    }
    if token.is_empty() {
        return Err(Error::format(path, "truncated PFM header"));
    }
    String::from_utf8(token).map_err(|_| Error::format(path, "non-ASCII PFM header"))
}

pub fn read_pfm(path: &Path) -> Result<Image> {
    let mut r = super::open(path)?;
    let channels = match header_token(&mut r, path)?.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(Error::format(path, format!("not a PFM file (magic '{other}')"))),
    };
    let parse = |s: String, what: &str| -> Result<f64> {
        s.parse::<f64>().map_err(|_| Error::format(path, format!("bad PFM {what} '{s}'")))
    };
    let width = parse(header_token(&mut r, path)?, "width")? as usize;
    let height = parse(header_token(&mut r, path)?, "height")? as usize;
    let scale = parse(header_token(&mut r, path)?, "scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format(path, "PFM scale must be non-zero"));
    }
    let little = scale < 0.0;
    let mut raw = vec![0u8; width * height * channels * 4];
    r.read_exact(&mut raw)
        .map_err(|_| Error::format(path, format!("PFM payload shorter than {width}x{height}x{channels}")))?;
    let mut image = Image::new(width, height, channels);
    let row_len = width * channels;
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (file_row, col) = (i / row_len, i % row_len);
        let y = height - 1 - file_row;
        image.data[y * row_len + col] = v as f64;
    }
    Ok(image)
}

/// Writes an 8-bit PNG. Values are clamped to `[0, 1]` and rounded; they are
/// taken as already display-encoded.
pub fn write_png(image: &Image, path: &Path) -> Result<()> {
    if image.is_empty() {
        return Err(Error::Empty(format!("{}: refusing to write a 0-pixel image", path.display())));
    }
    let bytes: Vec<u8> = image.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let color = match image.channels {
        1 => ::image::ExtendedColorType::L8,
        3 => ::image::ExtendedColorType::Rgb8,
        4 => ::image::ExtendedColorType::Rgba8,
        c => return Err(Error::InvalidArgument(format!("PNG needs 1, 3 or 4 channels, got {c}"))),
    };
    let w = super::create(path)?;
    let encoder = ::image::codecs::png::PngEncoder::new(w);
    ::image::ImageEncoder::write_image(encoder, &bytes, image.width as u32, image.height as u32, color)?;
    Ok(())
}

/// Reads a PNG as RGB in `[0, 1]`, dropping any alpha channel.
pub fn read_png(path: &Path) -> Result<Image> {
    let decoded = ::image::ImageReader::new(super::open(path)?)
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()?
        .to_rgb8();
    let (w, h) = decoded.dimensions();
    let data = decoded.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
    Image::from_vec(w as usize, h as usize, 3, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramePaths {
    pub color: PathBuf,
    pub depth: PathBuf,
    pub alpha: PathBuf,
}

impl FramePaths {
    pub fn new(dir: &Path, index: usize) -> Self {
        Self {
            color: dir.join(format!("frame_{index:04}.png")),
            depth: dir.join(format!("depth_{index:04}.pfm")),
            alpha: dir.join(format!("alpha_{index:04}.pfm")),
        }
    }
}

/// Writes `frame_NNNN.png`, `depth_NNNN.pfm` and `alpha_NNNN.pfm`.
pub fn write_frame(output: &RenderOutput, dir: &Path, index: usize) -> Result<FramePaths> {
    if output.color.is_empty() {
        return Err(Error::Empty("cannot write an empty render".into()));
    }
    let paths = FramePaths::new(dir, index);
    write_png(&output.color, &paths.color)?;
    write_pfm(&output.depth, &paths.depth)?;
    write_pfm(&output.alpha, &paths.alpha)?;
    Ok(paths)
}
