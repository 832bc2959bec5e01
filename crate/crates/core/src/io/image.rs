//! 8-bit PNG/PGM loading, bilinear resizing to the network input size, and
//! PNG output.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decoded 8-bit RGB image.
#[derive(Debug, Clone)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            pixels: vec![0; width * height * 3],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }
}

fn decode_png(path: &Path) -> Result<RgbImage> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("{}: bad PNG: {e}", path.display())))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("{}: bad PNG: {e}", path.display())))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!(
            "{}: unsupported bit depth {:?}; only 8-bit images are supported",
            path.display(),
            info.bit_depth
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut img = RgbImage::new(w, h);
    match info.color_type {
        png::ColorType::Grayscale => {
            for (i, &v) in buf[..w * h].iter().enumerate() {
                img.pixels[i * 3..i * 3 + 3].copy_from_slice(&[v, v, v]);
            }
        }
        png::ColorType::GrayscaleAlpha => {
            for i in 0..w * h {
                let v = buf[i * 2];
                img.pixels[i * 3..i * 3 + 3].copy_from_slice(&[v, v, v]);
            }
        }
        png::ColorType::Rgb => img.pixels.copy_from_slice(&buf[..w * h * 3]),
        png::ColorType::Rgba => {
            for i in 0..w * h {
                img.pixels[i * 3..i * 3 + 3].copy_from_slice(&buf[i * 4..i * 4 + 3]);
            }
        }
        other => {
            return Err(Error::Format(format!(
                "{}: unsupported PNG color type {other:?}",
                path.display()
            )))
        }
    }
    Ok(img)
}

fn decode_pgm(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Format(format!(
            "{}: not a binary PGM (P5) file",
            path.display()
        )));
    }
    // Header: P5 <w> <h> <maxval>, whitespace separated, '#' comments.
    let mut pos = 2usize;
    let mut fields = Vec::with_capacity(3);
    while fields.len() < 3 && pos < bytes.len() {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(Error::Format(format!("{}: malformed PGM header", path.display())));
        }
        let field: usize = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("{}: malformed PGM header", path.display())))?;
        fields.push(field);
    }
    if fields.len() != 3 {
        return Err(Error::Format(format!("{}: truncated PGM header", path.display())));
    }
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if maxval > 255 {
        return Err(Error::Format(format!(
            "{}: unsupported bit depth (maxval {maxval}); only 8-bit images are supported",
            path.display()
        )));
    }
    pos += 1; // single whitespace after maxval
    if bytes.len() < pos + w * h {
        return Err(Error::Format(format!("{}: truncated PGM data", path.display())));
    }
    let mut img = RgbImage::new(w, h);
    for (i, &v) in bytes[pos..pos + w * h].iter().enumerate() {
        img.pixels[i * 3..i * 3 + 3].copy_from_slice(&[v, v, v]);
    }
    Ok(img)
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("png") => decode_png(path),
        Some(e) if e.eq_ignore_ascii_case("pgm") => decode_pgm(path),
        _ => Err(Error::Format(format!(
            "{}: unsupported image extension (PNG or PGM expected)",
            path.display()
        ))),
    }
}

/// Bilinear resample of [0,1] channel data (half-pixel centers, edge clamp).
fn resize_channel(
    src: &[f64],
    (sw, sh): (usize, usize),
    (dw, dh): (usize, usize),
    dst: &mut [f64],
) {
    let scale_x = sw as f64 / dw as f64;
    let scale_y = sh as f64 / dh as f64;
    for dy in 0..dh {
        let sy = ((dy as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let fy = sy - y0 as f64;
        for dx in 0..dw {
            let sx = ((dx as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let fx = sx - x0 as f64;
            let top = src[y0 * sw + x0] * (1.0 - fx) + src[y0 * sw + x1] * fx;
            let bot = src[y1 * sw + x0] * (1.0 - fx) + src[y1 * sw + x1] * fx;
            dst[dy * dw + dx] = top * (1.0 - fy) + bot * fy;
        }
    }
}

/// Loads an image, scales values to [0,1], and bilinearly resizes to the
/// target (h, w). Grayscale inputs are replicated to three channels.
/// Output dims: (1, 3, h, w).
pub fn load_image(path: &Path, target: (usize, usize)) -> Result<Tensor> {
    let img = load_rgb(path)?;
    Ok(image_to_tensor(&img, target))
}

pub fn image_to_tensor(img: &RgbImage, target: (usize, usize)) -> Tensor {
    let (th, tw) = target;
    let (sw, sh) = (img.width, img.height);
    let mut out = Tensor::zeros((1, 3, th, tw));
    let mut src = vec![0.0f64; sw * sh];
    for ch in 0..3 {
        for i in 0..sw * sh {
            src[i] = img.pixels[i * 3 + ch] as f64 / 255.0;
        }
        let base = ch * th * tw;
        if (sw, sh) == (tw, th) {
            out.data_mut()[base..base + th * tw].copy_from_slice(&src);
        } else {
            resize_channel(&src, (sw, sh), (tw, th), &mut out.data_mut()[base..base + th * tw]);
        }
    }
    out
}

/// Encodes an RGB image as PNG bytes.
pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut bytes, img.width as u32, img.height as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::Format(format!("PNG encode: {e}")))?;
        writer
            .write_image_data(&img.pixels)
            .map_err(|e| Error::Format(format!("PNG encode: {e}")))?;
    }
    Ok(bytes)
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    super::write_atomic(path, &encode_png(img)?)
}

/// Converts a (1, 3, h, w) tensor with values in [0,1] back to RGB bytes.
pub fn tensor_to_image(t: &Tensor) -> Result<RgbImage> {
    let (n, c, h, w) = t.dims();
    if n != 1 || c != 3 {
        return Err(Error::Shape(format!(
            "expected (1, 3, h, w) tensor for image output, got {:?}",
            t.dims()
        )));
    }
    let mut img = RgbImage::new(w, h);
    for ch in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let v = (t.get(0, ch, y, x).clamp(0.0, 1.0) * 255.0).round() as u8;
                img.pixels[(y * w + x) * 3 + ch] = v;
            }
        }
    }
    Ok(img)
}
