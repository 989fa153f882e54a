//! The four-condition experiment: no enhancement, then an enhancer trained
//! in each of the baseline, TA and TA+MC modes, all scored with the same
//! tracker on the test split.

use std::path::Path;

use crate::enhancement::Mode;
use crate::error::Result;
use crate::evaluation::{run_ope, BuiltinTracker, Comparison, ComparisonRow, OpeOptions, TrackerKind};
use crate::io::config::EngineConfig;
use crate::io::dataset::{load_dataset, Split};
use crate::tensor::Tensor;
use crate::training::{samples_from_records, EpochStats, TaeModel, Trainer};

pub const NO_ENHANCEMENT: &str = "none";

pub struct AblationOutcome {
    pub comparison: Comparison,
    /// Trained model and per-epoch stats for each mode, in [`Mode::ALL`] order.
    pub trained: Vec<(Mode, TaeModel, Vec<EpochStats>)>,
}

/// Trains one enhancer for `mode` from the configured seed.
pub fn train_mode(
    cfg: &EngineConfig,
    samples: &[crate::training::TrainSample],
    mode: Mode,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(TaeModel, Vec<EpochStats>)> {
    let mut tc = cfg.train_config();
    tc.mode = mode;
    let model = TaeModel::init(cfg.seed, cfg.enhancement.alpha_source);
    let mut trainer = Trainer::new(tc, model)?;
    let mut stats = Vec::new();
    for _ in 0..cfg.train.epochs {
        let s = trainer.train_epoch(samples)?;
        on_epoch(&s);
        stats.push(s);
    }
    Ok((trainer.model, stats))
}

pub fn enhancer_for(model: &TaeModel, mode: Mode) -> impl Fn(&Tensor) -> Result<Tensor> + Sync + '_ {
    move |frame| Ok(model.enhance(frame, mode)?.image.values)
}

pub fn run_ablation(
    root: &Path,
    cfg: &EngineConfig,
    jobs: usize,
    mut on_epoch: impl FnMut(Mode, &EpochStats),
) -> Result<AblationOutcome> {
    let train = load_dataset(root, Split::Train)?;
    let test = load_dataset(root, Split::Test)?;
    let samples = samples_from_records(&train, cfg.train.frame_stride)?;
    log::info!(
        "ablation: {} training frames from {} sequences, {} test sequences",
        samples.len(),
        train.len(),
        test.len()
    );
    let tracker = BuiltinTracker {
        kind: TrackerKind::Ncc,
        ncc: cfg.tracker,
    };
    let opts = OpeOptions {
        jobs,
        metrics: cfg.metrics,
    };
    let (_, report) = run_ope(&test, &tracker, None, &opts)?;
    let mut rows = vec![ComparisonRow {
        label: NO_ENHANCEMENT.into(),
        report,
    }];
    let mut trained = Vec::new();
    for mode in Mode::ALL {
        let (model, stats) = train_mode(cfg, &samples, mode, |s| on_epoch(mode, s))?;
        let (_, report) = {
            let enhance = enhancer_for(&model, mode);
            run_ope(&test, &tracker, Some(&enhance), &opts)?
        };
        rows.push(ComparisonRow {
            label: mode.as_str().into(),
            report,
        });
        trained.push((mode, model, stats));
    }
    Ok(AblationOutcome {
        comparison: Comparison { rows },
        trained,
    })
}
