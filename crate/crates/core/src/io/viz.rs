//! Feature-map grids and annotated detection images.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::image::{save_png, tensor_to_image, RgbImage};
use crate::model::Detection;
use crate::tensor::Tensor;

/// 5x7 glyphs for the characters needed in labels: digits, '.', ':', 'c',
/// and space. Rows are 5-bit masks, MSB left.
fn glyph(ch: char) -> [u8; 7] {
    match ch {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        ':' => [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00],
        'c' => [0x00, 0x00, 0x0E, 0x10, 0x10, 0x11, 0x0E],
        _ => [0; 7],
    }
}

fn draw_text(img: &mut RgbImage, x: usize, y: usize, text: &str, rgb: [u8; 3]) {
    let mut cx = x;
    for ch in text.chars() {
        let g = glyph(ch);
        for (ry, row) in g.iter().enumerate() {
            for rx in 0..5 {
                if row & (0x10 >> rx) != 0 {
                    let px = cx + rx;
                    let py = y + ry;
                    if px < img.width && py < img.height {
                        img.put(px, py, rgb);
                    }
                }
            }
        }
        cx += 6;
    }
}

fn class_color(class_id: usize) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 6] = [
        [255, 64, 64],
        [64, 255, 64],
        [64, 128, 255],
        [255, 255, 64],
        [255, 64, 255],
        [64, 255, 255],
    ];
    PALETTE[class_id % PALETTE.len()]
}

/// Tiles the channels of a (1, c, h, w) tensor into one grayscale grid
/// image. Each channel is min-max normalized on its own (constant channels
/// render mid-gray), separated by 1-px borders, and labeled with its index.
pub fn feature_grid(tensor: &Tensor) -> Result<RgbImage> {
    let (n, c, h, w) = tensor.dims();
    if n != 1 {
        return Err(Error::Shape(format!(
            "feature grid needs batch 1, got dims {:?}",
            tensor.dims()
        )));
    }
    if c == 0 {
        return Err(Error::Shape("feature grid of a zero-channel tensor".into()));
    }
    let cols = (c as f64).sqrt().ceil() as usize;
    let rows = c.div_ceil(cols);
    let cell_w = w + 1;
    let cell_h = h + 1;
    let mut img = RgbImage::new(cols * cell_w + 1, rows * cell_h + 1);
    for p in img.pixels.iter_mut() {
        *p = 24; // border/background
    }
    for ch in 0..c {
        let (gx, gy) = (ch % cols, ch / cols);
        let x0 = gx * cell_w + 1;
        let y0 = gy * cell_h + 1;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for y in 0..h {
            for x in 0..w {
                let v = tensor.get(0, ch, y, x);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        for y in 0..h {
            for x in 0..w {
                let v = tensor.get(0, ch, y, x);
                let g = if hi > lo {
                    (((v - lo) / (hi - lo)) * 255.0).round() as u8
                } else {
                    128
                };
                img.put(x0 + x, y0 + y, [g, g, g]);
            }
        }
        draw_text(&mut img, x0 + 1, y0 + 1, &format!("{ch}"), [255, 255, 0]);
    }
    Ok(img)
}

pub fn save_feature_grid(tensor: &Tensor, path: &Path) -> Result<()> {
    save_png(&feature_grid(tensor)?, path)
}

fn draw_rect(img: &mut RgbImage, bbox: (usize, usize, usize, usize), rgb: [u8; 3]) {
    let (x0, y0, x1, y1) = bbox;
    for x in x0..=x1.min(img.width.saturating_sub(1)) {
        for &y in &[y0, y1] {
            if y < img.height {
                img.put(x, y, rgb);
            }
        }
    }
    for y in y0..=y1.min(img.height.saturating_sub(1)) {
        for &x in &[x0, x1] {
            if x < img.width {
                img.put(x, y, rgb);
            }
        }
    }
}

/// Draws detections (box, `c<class>:<score>` label) onto a (1,3,h,w) image
/// tensor with values in [0,1].
pub fn annotate_image(image: &Tensor, detections: &[Detection]) -> Result<RgbImage> {
    let mut img = tensor_to_image(image)?;
    for det in detections {
        let color = class_color(det.class_id);
        let x0 = det.bbox.x_min.round().max(0.0) as usize;
        let y0 = det.bbox.y_min.round().max(0.0) as usize;
        let x1 = det.bbox.x_max.round().max(0.0) as usize;
        let y1 = det.bbox.y_max.round().max(0.0) as usize;
        draw_rect(&mut img, (x0, y0, x1, y1), color);
        let label = format!("c{}:{:.2}", det.class_id, det.score);
        draw_text(&mut img, x0 + 2, y0.saturating_add(2), &label, color);
    }
    Ok(img)
}

pub fn save_annotated_image(image: &Tensor, detections: &[Detection], path: &Path) -> Result<()> {
    save_png(&annotate_image(image, detections)?, path)
}
