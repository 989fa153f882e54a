//! One-pass evaluation: initialize on the first ground-truth box, then
//! update on every later frame with no re-initialization.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::metrics::{compute_metrics_with, MetricConfig, MetricReport, TrackRun};
use super::ncc::{NccTracker, TrackerConfig};
use crate::error::{Error, Result};
use crate::guidance::BBox;
use crate::io::dataset::SequenceRecord;
use crate::tensor::Tensor;

pub trait Tracker: Send {
    fn init(&mut self, frame: &Tensor, bbox: BBox) -> Result<()>;
    fn update(&mut self, frame: &Tensor) -> Result<BBox>;
}

/// Builds one fresh tracker per sequence.
pub trait TrackerFactory: Sync {
    fn name(&self) -> &str;
    fn create(&self, sequence: &SequenceRecord) -> Result<Box<dyn Tracker>>;
}

/// Replays the ground truth, carrying the last box over absent frames.
pub struct OracleTracker {
    boxes: Vec<Option<BBox>>,
    frame: usize,
    last: Option<BBox>,
}

impl Tracker for OracleTracker {
    fn init(&mut self, _frame: &Tensor, bbox: BBox) -> Result<()> {
        self.frame = 0;
        self.last = Some(bbox);
        Ok(())
    }

    fn update(&mut self, _frame: &Tensor) -> Result<BBox> {
        self.frame += 1;
        if let Some(Some(b)) = self.boxes.get(self.frame) {
            self.last = Some(*b);
        }
        self.last.ok_or_else(|| Error::Evaluation("oracle not initialized".into()))
    }
}

/// Always reports the initialization box.
#[derive(Default)]
pub struct StaticTracker {
    bbox: Option<BBox>,
}

impl Tracker for StaticTracker {
    fn init(&mut self, _frame: &Tensor, bbox: BBox) -> Result<()> {
        self.bbox = Some(bbox);
        Ok(())
    }

    fn update(&mut self, _frame: &Tensor) -> Result<BBox> {
        self.bbox.ok_or_else(|| Error::Evaluation("static tracker not initialized".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackerKind {
    Ncc,
    Oracle,
    Static,
}

impl std::str::FromStr for TrackerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ncc" => Ok(TrackerKind::Ncc),
            "oracle" => Ok(TrackerKind::Oracle),
            "static" => Ok(TrackerKind::Static),
            other => Err(Error::InvalidArgument(format!(
                "unknown tracker {other:?} (expected ncc, oracle or static)"
            ))),
        }
    }
}

/// Factory for the built-in trackers.
pub struct BuiltinTracker {
    pub kind: TrackerKind,
    pub ncc: TrackerConfig,
}

impl TrackerFactory for BuiltinTracker {
    fn name(&self) -> &str {
        match self.kind {
            TrackerKind::Ncc => "ncc",
            TrackerKind::Oracle => "oracle",
            TrackerKind::Static => "static",
        }
    }

    fn create(&self, sequence: &SequenceRecord) -> Result<Box<dyn Tracker>> {
        Ok(match self.kind {
            TrackerKind::Ncc => Box::new(NccTracker::new(self.ncc)?),
            TrackerKind::Oracle => Box::new(OracleTracker {
                boxes: sequence.boxes.clone(),
                frame: 0,
                last: None,
            }),
            TrackerKind::Static => Box::new(StaticTracker::default()),
        })
    }
}

/// Frame preprocessing applied before the tracker sees a frame.
pub type Enhancer<'a> = dyn Fn(&Tensor) -> Result<Tensor> + Sync + 'a;

fn track_sequence(seq: &SequenceRecord, factory: &dyn TrackerFactory, enhancer: Option<&Enhancer>) -> Result<TrackRun> {
    if seq.len() < 2 {
        return Err(Error::Evaluation(format!("sequence {} has fewer than 2 frames", seq.id)));
    }
    let Some(first) = seq.boxes[0] else {
        return Err(Error::Evaluation(format!("sequence {} lacks first-frame ground truth", seq.id)));
    };
    let load = |k: usize| -> Result<Tensor> {
        let frame = seq.load_frame(k)?;
        match enhancer {
            Some(f) => f(&frame),
            None => Ok(frame),
        }
    };
    let mut tracker = factory.create(seq)?;
    let mut boxes = Vec::with_capacity(seq.len());
    let mut times = Vec::with_capacity(seq.len());
    let start = Instant::now();
    tracker.init(&load(0)?, first)?;
    boxes.push(first);
    times.push(start.elapsed().as_secs_f64());
    for k in 1..seq.len() {
        let start = Instant::now();
        let last = *boxes.last().expect("first box pushed");
        let b = match load(k).and_then(|f| tracker.update(&f)) {
            Ok(b) if b.validate().is_ok() => b,
            Ok(b) => {
                log::warn!("sequence {} frame {}: invalid prediction {b:?}, keeping last box", seq.id, k + 1);
                last
            }
            Err(e) => {
                log::warn!("sequence {} frame {}: {e}, keeping last box", seq.id, k + 1);
                last
            }
        };
        boxes.push(b);
        times.push(start.elapsed().as_secs_f64());
    }
    Ok(TrackRun {
        sequence: seq.id.clone(),
        boxes,
        frame_times: times,
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OpeOptions {
    /// Worker threads; 0 uses the rayon default.
    pub jobs: usize,
    pub metrics: MetricConfig,
}

/// Tracks every sequence (in parallel, results in input order) and scores
/// the runs.
pub fn run_ope(
    dataset: &[SequenceRecord],
    factory: &dyn TrackerFactory,
    enhancer: Option<&Enhancer>,
    opts: &OpeOptions,
) -> Result<(Vec<TrackRun>, MetricReport)> {
    if dataset.is_empty() {
        return Err(Error::Evaluation("empty dataset".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| Error::Evaluation(e.to_string()))?;
    let runs = pool.install(|| {
        dataset
            .par_iter()
            .map(|s| track_sequence(s, factory, enhancer))
            .collect::<Result<Vec<_>>>()
    })?;
    let gt: Vec<Vec<Option<BBox>>> = dataset.iter().map(|s| s.boxes.clone()).collect();
    let report = compute_metrics_with(&runs, &gt, &opts.metrics)?;
    Ok((runs, report))
}

/// One labelled row of a comparison table.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub label: String,
    pub report: MetricReport,
}

/// Several conditions scored on the same sequences; deltas are taken
/// against the first row, in percentage points.
#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Deltas {
    pub s_auc: f64,
    pub precision: f64,
    pub norm_precision: f64,
}

impl Comparison {
    pub fn deltas(&self, row: usize) -> Deltas {
        let (r, base) = (&self.rows[row].report, &self.rows[0].report);
        Deltas {
            s_auc: 100.0 * (r.s_auc - base.s_auc),
            precision: 100.0 * (r.precision_at - base.precision_at),
            norm_precision: 100.0 * (r.norm_precision_auc - base.norm_precision_auc),
        }
    }

    /// `condition,S_AUC,dS_AUC,P,dP,NormP,dNormP` with scores in percent.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("condition,S_AUC,dS_AUC,P,dP,NormP,dNormP\n");
        for (k, row) in self.rows.iter().enumerate() {
            let d = self.deltas(k);
            let r = &row.report;
            out.push_str(&format!(
                "{},{:.2},{:+.2},{:.2},{:+.2},{:.2},{:+.2}\n",
                row.label,
                100.0 * r.s_auc,
                d.s_auc,
                100.0 * r.precision_at,
                d.precision,
                100.0 * r.norm_precision_auc,
                d.norm_precision
            ));
        }
        out
    }

    /// Full curves and per-sequence metrics of every row.
    pub fn to_report_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes")
    }

    /// Scalars and deltas only.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Row<'a> {
            label: &'a str,
            s_auc: f64,
            precision: f64,
            norm_precision: f64,
            deltas_pp: Deltas,
        }
        let rows: Vec<Row> = self
            .rows
            .iter()
            .enumerate()
            .map(|(k, r)| Row {
                label: &r.label,
                s_auc: r.report.s_auc,
                precision: r.report.precision_at,
                norm_precision: r.report.norm_precision_auc,
                deltas_pp: self.deltas(k),
            })
            .collect();
        serde_json::to_string_pretty(&rows).expect("comparison serializes")
    }
}
