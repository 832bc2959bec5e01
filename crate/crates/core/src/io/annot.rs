//! YOLO-style normalized annotations and dataset manifests.
//!
//! An annotation file holds one `class cx cy w h` line per box, all values
//! normalized to [0,1]; the file for `img.png` is `img.txt`. A manifest
//! lists one image path per line (relative paths resolve against the
//! manifest's directory). An empty annotation file is a valid negative
//! image.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

const BOUNDS_SLACK: f64 = 1e-6;

/// One ground-truth box, normalized to image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtBox {
    pub class_id: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl GtBox {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.class_id >= num_classes {
            return Err(Error::Validation(format!(
                "class id {} out of range (num_classes = {num_classes})",
                self.class_id
            )));
        }
        let ok = |lo: f64, hi: f64| lo >= -BOUNDS_SLACK && hi <= 1.0 + BOUNDS_SLACK && lo < hi;
        if self.w <= 0.0
            || self.h <= 0.0
            || !ok(self.cx - self.w / 2.0, self.cx + self.w / 2.0)
            || !ok(self.cy - self.h / 2.0, self.cy + self.h / 2.0)
        {
            return Err(Error::Validation(format!(
                "box (cx={}, cy={}, w={}, h={}) extends outside [0,1]",
                self.cx, self.cy, self.w, self.h
            )));
        }
        Ok(())
    }

    /// Corner box in pixels of an (h, w) image.
    pub fn to_pixels(&self, image_size: (usize, usize)) -> crate::model::PixelBox {
        let (ih, iw) = (image_size.0 as f64, image_size.1 as f64);
        crate::model::PixelBox {
            x_min: (self.cx - self.w / 2.0) * iw,
            y_min: (self.cy - self.h / 2.0) * ih,
            x_max: (self.cx + self.w / 2.0) * iw,
            y_max: (self.cy + self.h / 2.0) * ih,
        }
    }
}

/// An image path plus its ground-truth boxes.
#[derive(Debug, Clone)]
pub struct AnnotatedSample {
    pub image: PathBuf,
    pub boxes: Vec<GtBox>,
}

/// The annotation path for an image: extension swapped to `.txt`.
pub fn annotation_path(image: &Path) -> PathBuf {
    image.with_extension("txt")
}

pub fn parse_annotations(text: &str, num_classes: usize) -> Result<Vec<GtBox>> {
    let mut boxes = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::Parse(format!(
                "annotation line {}: expected `class cx cy w h`, got {} fields",
                lineno + 1,
                fields.len()
            )));
        }
        let class_id: usize = fields[0].parse().map_err(|_| {
            Error::Parse(format!("annotation line {}: bad class id {:?}", lineno + 1, fields[0]))
        })?;
        let mut vals = [0.0f64; 4];
        for (i, f) in fields[1..].iter().enumerate() {
            vals[i] = f.parse().map_err(|_| {
                Error::Parse(format!("annotation line {}: bad number {f:?}", lineno + 1))
            })?;
        }
        let b = GtBox {
            class_id,
            cx: vals[0],
            cy: vals[1],
            w: vals[2],
            h: vals[3],
        };
        b.validate(num_classes)
            .map_err(|e| Error::Validation(format!("annotation line {}: {e}", lineno + 1)))?;
        boxes.push(b);
    }
    Ok(boxes)
}

pub fn load_annotations(path: &Path, num_classes: usize) -> Result<Vec<GtBox>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, num_classes).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn format_annotations(boxes: &[GtBox]) -> String {
    let mut s = String::new();
    for b in boxes {
        s.push_str(&format!("{} {} {} {} {}\n", b.class_id, b.cx, b.cy, b.w, b.h));
    }
    s
}

/// Loads a manifest: image paths, one per line, `#` comments allowed.
/// Annotations are loaded alongside each image.
pub fn load_manifest(path: &Path, num_classes: usize) -> Result<Vec<AnnotatedSample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut samples = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let image = if Path::new(line).is_absolute() {
            PathBuf::from(line)
        } else {
            base.join(line)
        };
        let boxes = load_annotations(&annotation_path(&image), num_classes)?;
        samples.push(AnnotatedSample { image, boxes });
    }
    Ok(samples)
}
