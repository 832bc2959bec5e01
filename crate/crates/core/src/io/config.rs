//! Line-oriented `key = value` model configuration files.
//!
//! Recognized keys: `width_multiplier`, `num_classes`, `input_size`,
//! `anchors`, `strides`, `conf_threshold`, `nms_iou`. Absent keys take
//! defaults; unknown keys are errors so typos never pass silently.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{default_anchors, ModelConfig};

pub fn parse_config(text: &str) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::default();
    let mut explicit_anchors = false;

    for (lineno, raw_line) in text.lines().enumerate() {
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Parse(format!("line {lineno}: expected `key = value`, got {line:?}"))
        })?;
        let (key, value) = (key.trim(), value.trim());
        let num = |v: &str| -> Result<f64> {
            v.parse()
                .map_err(|_| Error::Parse(format!("line {lineno}: non-numeric value {v:?} for {key}")))
        };
        match key {
            "width_multiplier" => {
                let n = num(value)?;
                cfg = cfg.with_multiplier(n).map_err(|e| {
                    Error::Parse(format!("line {lineno}: {e}"))
                })?;
            }
            "num_classes" => {
                cfg.num_classes = num(value)? as usize;
            }
            "input_size" => {
                let parts: Vec<&str> = value.split('x').collect();
                let (h, w) = match parts.as_slice() {
                    [s] => {
                        let v = num(s)? as usize;
                        (v, v)
                    }
                    [w, h] => (num(h)? as usize, num(w)? as usize),
                    _ => {
                        return Err(Error::Parse(format!(
                            "line {lineno}: input_size must be `N` or `WxH`, got {value:?}"
                        )))
                    }
                };
                cfg.input_size = (h, w);
                if !explicit_anchors {
                    cfg.anchors = default_anchors(cfg.input_size);
                }
            }
            "anchors" => {
                let mut anchors = Vec::new();
                for pair in value.split(',') {
                    let pair = pair.trim();
                    let (w, h) = pair.split_once('x').ok_or_else(|| {
                        Error::Parse(format!("line {lineno}: anchor {pair:?} must be WxH"))
                    })?;
                    anchors.push((num(w.trim())?, num(h.trim())?));
                }
                if anchors.len() != 9 {
                    return Err(Error::Parse(format!(
                        "line {lineno}: expected 9 anchors, got {}",
                        anchors.len()
                    )));
                }
                cfg.anchors = anchors;
                explicit_anchors = true;
            }
            "strides" => {
                let vals: Result<Vec<usize>> = value
                    .split(',')
                    .map(|v| num(v.trim()).map(|f| f as usize))
                    .collect();
                let vals = vals?;
                if vals.len() != 3 {
                    return Err(Error::Parse(format!(
                        "line {lineno}: expected 3 strides, got {}",
                        vals.len()
                    )));
                }
                cfg.strides = [vals[0], vals[1], vals[2]];
            }
            "conf_threshold" => cfg.conf_threshold = num(value)?,
            "nms_iou" => cfg.nms_iou = num(value)?,
            other => {
                return Err(Error::Parse(format!("line {lineno}: unknown key {other:?}")));
            }
        }
    }
    cfg.normalize_anchors();
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ModelConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}
