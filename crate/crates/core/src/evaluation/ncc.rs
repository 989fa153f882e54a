//! Grayscale normalized cross-correlation template tracker.
//!
//! The template is cut from the first frame and never updated. Each update
//! scans integer offsets within `search_radius` of the previous position
//! and keeps the best-scoring one; ties go to the smallest displacement.

use serde::{Deserialize, Serialize};

use super::ope::Tracker;
use crate::error::{Error, Result};
use crate::guidance::BBox;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    /// Side of a square template centered on the box; the box extents
    /// are used when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template_size: Option<usize>,
    pub search_radius: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            template_size: None,
            search_radius: 8,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.search_radius == 0 {
            return Err(Error::InvalidArgument("search_radius must be at least 1".into()));
        }
        if self.template_size == Some(0) {
            return Err(Error::InvalidArgument("template_size must be positive".into()));
        }
        Ok(())
    }
}

/// Rec.601 luma plane of a 3×H×W image.
pub fn luma(frame: &Tensor) -> Result<(Vec<f64>, usize, usize)> {
    let (c, h, w) = frame.dims3()?;
    if c != 3 {
        return Err(Error::InvalidArgument(format!("expected 3 channels, got {:?}", frame.shape())));
    }
    let d = frame.data();
    let n = h * w;
    let y = (0..n).map(|i| 0.299 * d[i] + 0.587 * d[n + i] + 0.114 * d[2 * n + i]).collect();
    Ok((y, h, w))
}

/// Zero-mean normalized correlation of two equally sized patches; 0 when
/// either is flat.
pub fn ncc_score(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "patch sizes differ");
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut num, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        num += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    let den = (va * vb).sqrt();
    if den <= f64::EPSILON * n {
        0.0
    } else {
        num / den
    }
}

fn patch(plane: &[f64], width: usize, x: usize, y: usize, pw: usize, ph: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(pw * ph);
    for row in y..y + ph {
        out.extend_from_slice(&plane[row * width + x..row * width + x + pw]);
    }
    out
}

#[derive(Debug, Clone)]
pub struct NccTracker {
    cfg: TrackerConfig,
    template: Vec<f64>,
    /// Template extents and current top-left corner.
    tw: usize,
    th: usize,
    pos: (usize, usize),
    /// Box corner minus template corner.
    offset: (f64, f64),
    size: (f64, f64),
    frame: (usize, usize),
}

impl NccTracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            template: Vec::new(),
            tw: 0,
            th: 0,
            pos: (0, 0),
            offset: (0.0, 0.0),
            size: (0.0, 0.0),
            frame: (0, 0),
        })
    }

    fn current_box(&self) -> BBox {
        BBox {
            x: self.pos.0 as f64 + self.offset.0,
            y: self.pos.1 as f64 + self.offset.1,
            w: self.size.0,
            h: self.size.1,
        }
    }
}

impl Tracker for NccTracker {
    fn init(&mut self, frame: &Tensor, bbox: BBox) -> Result<()> {
        bbox.validate()?;
        let (plane, h, w) = luma(frame)?;
        let (cx, cy) = (bbox.x + bbox.w / 2.0, bbox.y + bbox.h / 2.0);
        let (tw, th) = match self.cfg.template_size {
            Some(s) => (s, s),
            None => (bbox.w.round().max(1.0) as usize, bbox.h.round().max(1.0) as usize),
        };
        let (tw, th) = (tw.min(w), th.min(h));
        let tx = (cx - tw as f64 / 2.0).round().clamp(0.0, (w - tw) as f64) as usize;
        let ty = (cy - th as f64 / 2.0).round().clamp(0.0, (h - th) as f64) as usize;
        self.template = patch(&plane, w, tx, ty, tw, th);
        self.tw = tw;
        self.th = th;
        self.pos = (tx, ty);
        self.offset = (bbox.x - tx as f64, bbox.y - ty as f64);
        self.size = (bbox.w, bbox.h);
        self.frame = (w, h);
        Ok(())
    }

    fn update(&mut self, frame: &Tensor) -> Result<BBox> {
        if self.template.is_empty() {
            return Err(Error::Evaluation("tracker updated before init".into()));
        }
        let (plane, h, w) = luma(frame)?;
        if (w, h) != self.frame {
            return Err(Error::Evaluation(format!(
                "frame size {w}x{h} differs from init frame {}x{}",
                self.frame.0, self.frame.1
            )));
        }
        let r = self.cfg.search_radius;
        let (px, py) = self.pos;
        let (x0, x1) = (px.saturating_sub(r), (px + r).min(w - self.tw));
        let (y0, y1) = (py.saturating_sub(r), (py + r).min(h - self.th));
        let mut best = (f64::NEG_INFINITY, usize::MAX, (px, py));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let s = ncc_score(&self.template, &patch(&plane, w, x, y, self.tw, self.th));
                let dist = x.abs_diff(px) + y.abs_diff(py);
                if s > best.0 || (s == best.0 && dist < best.1) {
                    best = (s, dist, (x, y));
                }
            }
        }
        self.pos = best.2;
        Ok(self.current_box())
    }
}
