//! Success, precision and normalized-precision curves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::{box_center, BBox};

/// Threshold grids. A frame counts as a success at `t` when IoU > t, and
/// as precise at `e` when center error <= e.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricConfig {
    /// IoU thresholds are `i / success_steps` for `i = 0..=success_steps`.
    pub success_steps: usize,
    /// Pixel thresholds `0, 1, ..., precision_max_px`.
    pub precision_max_px: usize,
    /// Pixel threshold reported as the scalar `P`.
    pub precision_at_px: usize,
    pub norm_precision_max: f64,
    /// Normalized thresholds `norm_precision_max * i / norm_precision_steps`.
    pub norm_precision_steps: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            success_steps: 20,
            precision_max_px: 50,
            precision_at_px: 20,
            norm_precision_max: 0.5,
            norm_precision_steps: 50,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.success_steps == 0 || self.norm_precision_steps == 0 {
            return Err(Error::InvalidArgument("metric grids need at least one step".into()));
        }
        if self.precision_at_px > self.precision_max_px {
            return Err(Error::InvalidArgument(format!(
                "precision_at_px {} beyond precision_max_px {}",
                self.precision_at_px, self.precision_max_px
            )));
        }
        if !(self.norm_precision_max.is_finite() && self.norm_precision_max > 0.0) {
            return Err(Error::InvalidArgument("norm_precision_max must be positive".into()));
        }
        Ok(())
    }

    pub fn success_thresholds(&self) -> Vec<f64> {
        (0..=self.success_steps).map(|i| i as f64 / self.success_steps as f64).collect()
    }

    pub fn precision_thresholds(&self) -> Vec<f64> {
        (0..=self.precision_max_px).map(|e| e as f64).collect()
    }

    pub fn norm_precision_thresholds(&self) -> Vec<f64> {
        (0..=self.norm_precision_steps)
            .map(|i| self.norm_precision_max * i as f64 / self.norm_precision_steps as f64)
            .collect()
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.right().min(b.right()) - a.x.max(b.x)).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    (inter / (a.area() + b.area() - inter)).clamp(0.0, 1.0)
}

/// Euclidean distance between box centers, in pixels.
pub fn center_error(a: &BBox, b: &BBox) -> f64 {
    let ((ax, ay), (bx, by)) = (box_center(a), box_center(b));
    (ax - bx).hypot(ay - by)
}

/// Center offset scaled per axis by the ground-truth extents.
pub fn norm_center_error(pred: &BBox, gt: &BBox) -> Result<f64> {
    if !(gt.w > 0.0 && gt.h > 0.0) {
        return Err(Error::InvalidBox(format!("degenerate ground truth {gt:?}")));
    }
    let ((px, py), (gx, gy)) = (box_center(pred), box_center(gt));
    Ok(((px - gx) / gt.w).hypot((py - gy) / gt.h))
}

/// Predictions of one tracker on one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRun {
    pub sequence: String,
    pub boxes: Vec<BBox>,
    /// Seconds spent per frame.
    pub frame_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub sequence: String,
    /// Frames with a ground-truth box.
    pub frames: usize,
    pub success: Vec<f64>,
    pub precision: Vec<f64>,
    pub norm_precision: Vec<f64>,
    pub s_auc: f64,
    pub precision_at: f64,
    pub norm_precision_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub conventions: MetricConfig,
    pub success_thresholds: Vec<f64>,
    pub precision_thresholds: Vec<f64>,
    pub norm_precision_thresholds: Vec<f64>,
    /// Curves averaged over sequences.
    pub success: Vec<f64>,
    pub precision: Vec<f64>,
    pub norm_precision: Vec<f64>,
    pub s_auc: f64,
    pub precision_at: f64,
    pub norm_precision_auc: f64,
    pub sequences: Vec<SequenceMetrics>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sequence_metrics(run: &TrackRun, gt: &[Option<BBox>], cfg: &MetricConfig) -> Result<SequenceMetrics> {
    if run.boxes.len() != gt.len() {
        return Err(Error::Evaluation(format!(
            "sequence {}: {} predictions for {} frames",
            run.sequence,
            run.boxes.len(),
            gt.len()
        )));
    }
    let (st, pt, nt) = (cfg.success_thresholds(), cfg.precision_thresholds(), cfg.norm_precision_thresholds());
    let (mut s, mut p, mut n) = (vec![0.0; st.len()], vec![0.0; pt.len()], vec![0.0; nt.len()]);
    let mut frames = 0usize;
    for (pred, g) in run.boxes.iter().zip(gt) {
        let Some(g) = g else { continue };
        frames += 1;
        let o = iou(pred, g);
        let ce = center_error(pred, g);
        let ne = norm_center_error(pred, g)?;
        for (acc, t) in s.iter_mut().zip(&st) {
            if o > *t {
                *acc += 1.0;
            }
        }
        for (acc, e) in p.iter_mut().zip(&pt) {
            if ce <= *e {
                *acc += 1.0;
            }
        }
        for (acc, e) in n.iter_mut().zip(&nt) {
            if ne <= *e {
                *acc += 1.0;
            }
        }
    }
    if frames == 0 {
        return Err(Error::Evaluation(format!("sequence {} has no annotated frames", run.sequence)));
    }
    for v in s.iter_mut().chain(p.iter_mut()).chain(n.iter_mut()) {
        *v /= frames as f64;
    }
    Ok(SequenceMetrics {
        sequence: run.sequence.clone(),
        frames,
        s_auc: mean(&s),
        precision_at: p[cfg.precision_at_px],
        norm_precision_auc: mean(&n),
        success: s,
        precision: p,
        norm_precision: n,
    })
}

pub fn compute_metrics(runs: &[TrackRun], gt: &[Vec<Option<BBox>>]) -> Result<MetricReport> {
    compute_metrics_with(runs, gt, &MetricConfig::default())
}

/// Per-sequence curves, then an unweighted mean over sequences.
pub fn compute_metrics_with(runs: &[TrackRun], gt: &[Vec<Option<BBox>>], cfg: &MetricConfig) -> Result<MetricReport> {
    cfg.validate()?;
    if runs.is_empty() {
        return Err(Error::Evaluation("no runs to evaluate".into()));
    }
    if runs.len() != gt.len() {
        return Err(Error::Evaluation(format!(
            "{} runs but {} ground-truth sequences",
            runs.len(),
            gt.len()
        )));
    }
    let sequences = runs
        .iter()
        .zip(gt)
        .map(|(r, g)| sequence_metrics(r, g, cfg))
        .collect::<Result<Vec<_>>>()?;
    let k = sequences.len() as f64;
    let avg = |f: fn(&SequenceMetrics) -> &Vec<f64>| -> Vec<f64> {
        let mut out = vec![0.0; f(&sequences[0]).len()];
        for s in &sequences {
            for (o, v) in out.iter_mut().zip(f(s)) {
                *o += v;
            }
        }
        out.iter().map(|v| v / k).collect()
    };
    let success = avg(|s| &s.success);
    let precision = avg(|s| &s.precision);
    let norm_precision = avg(|s| &s.norm_precision);
    Ok(MetricReport {
        conventions: *cfg,
        success_thresholds: cfg.success_thresholds(),
        precision_thresholds: cfg.precision_thresholds(),
        norm_precision_thresholds: cfg.norm_precision_thresholds(),
        s_auc: sequences.iter().map(|s| s.s_auc).sum::<f64>() / k,
        precision_at: sequences.iter().map(|s| s.precision_at).sum::<f64>() / k,
        norm_precision_auc: sequences.iter().map(|s| s.norm_precision_auc).sum::<f64>() / k,
        success,
        precision,
        norm_precision,
        sequences,
    })
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `threshold<TAB>value` rows.
    pub fn curve_tsv(thresholds: &[f64], values: &[f64]) -> String {
        let mut out = String::from("threshold\tvalue\n");
        for (t, v) in thresholds.iter().zip(values) {
            out.push_str(&format!("{t}\t{v}\n"));
        }
        out
    }
}
