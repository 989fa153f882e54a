use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adamw::{adamw_step, AdamWConfig, AdamWState};
use super::checkpoint::Checkpoint;
use super::model::TaeModel;
use crate::enhancement::{enhance_on_tape, Mode, MIN_PREDICTOR_SIDE};
use crate::error::{Error, Result};
use crate::guidance::{gaussian_soft_label_with, loc_loss, BBox, LabelStyle, Reduction};
use crate::io::dataset::SequenceRecord;
use crate::io::image::resize;
use crate::losses::{color_loss, exposure_loss, total_loss, tv_loss, ExposureConfig, LossWeights};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from the base rate to 0 over the configured epochs.
    Cosine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Square side every training frame is resized to.
    pub input_size: usize,
    pub seed: u64,
    pub mode: Mode,
    pub loss: LossWeights,
    pub exposure: ExposureConfig,
    pub lr_schedule: LrSchedule,
    /// Random horizontal flips with probability 1/2.
    pub hflip: bool,
    pub label_style: LabelStyle,
    pub loc_reduction: Reduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            input_size: 256,
            seed: 0,
            mode: Mode::TargetAwareMultiCurve,
            loss: LossWeights::default(),
            exposure: ExposureConfig::default(),
            lr_schedule: LrSchedule::Constant,
            hflip: false,
            label_style: LabelStyle::Smooth,
            loc_reduction: Reduction::Mean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidArgument(format!("learning_rate {} invalid", self.learning_rate)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(format!("weight_decay {} invalid", self.weight_decay)));
        }
        if self.input_size < MIN_PREDICTOR_SIDE {
            return Err(Error::InvalidArgument(format!(
                "input_size {} below {MIN_PREDICTOR_SIDE}",
                self.input_size
            )));
        }
        self.loss.validate()?;
        self.exposure.validate()
    }

    fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

/// One training frame and its ground-truth box, at source resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub image: Tensor,
    pub bbox: BBox,
}

/// Resizes to `size`×`size` and rescales the box by the same factors.
pub fn prepare_sample(sample: &TrainSample, size: usize) -> Result<(Tensor, BBox)> {
    let (c, h, w) = sample.image.dims3()?;
    if c != 3 || h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!(
            "expected a 3xHxW image, got {:?}",
            sample.image.shape()
        )));
    }
    if !sample.image.data().iter().all(|v| (0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument("pixel values outside [0, 1]".into()));
    }
    sample.bbox.validate()?;
    if !sample.bbox.overlaps_frame(w, h) {
        return Err(Error::InvalidBox(format!("{:?} lies outside the {w}x{h} frame", sample.bbox)));
    }
    if (h, w) == (size, size) {
        return Ok((sample.image.clone(), sample.bbox));
    }
    let image = resize(&sample.image, size, size)?;
    let bbox = sample.bbox.scaled(size as f64 / w as f64, size as f64 / h as f64);
    Ok((image, bbox))
}

fn hflip(image: &Tensor, bbox: &BBox) -> (Tensor, BBox) {
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let flipped = Tensor::from_fn(&[c, h, w], |i| {
        let x = i % w;
        image.data()[i - x + (w - 1 - x)]
    });
    let b = BBox {
        x: w as f64 - bbox.x - bbox.w,
        ..*bbox
    };
    (flipped, b)
}

/// Per-component loss values of one forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub loc: f64,
    pub exp: f64,
    pub color: f64,
    pub tv: f64,
    pub total: f64,
}

impl LossParts {
    fn add(&mut self, o: &LossParts) {
        self.loc += o.loc;
        self.exp += o.exp;
        self.color += o.color;
        self.tv += o.tv;
        self.total += o.total;
    }

    fn scaled(&self, s: f64) -> LossParts {
        LossParts {
            loc: self.loc * s,
            exp: self.exp * s,
            color: self.color * s,
            tv: self.tv * s,
            total: self.total * s,
        }
    }
}

/// Every `stride`-th frame with a ground-truth box, decoded. Unreadable
/// frames are skipped with a warning.
pub fn samples_from_records(records: &[SequenceRecord], stride: usize) -> Result<Vec<TrainSample>> {
    if stride == 0 {
        return Err(Error::InvalidArgument("frame stride must be positive".into()));
    }
    let mut out = Vec::new();
    for rec in records {
        for k in (0..rec.len()).step_by(stride) {
            let Some(bbox) = rec.boxes[k] else { continue };
            match rec.load_frame(k) {
                Ok(image) => out.push(TrainSample { image, bbox }),
                Err(e) => log::warn!("sequence {} frame {}: {e}", rec.id, k + 1),
            }
        }
    }
    Ok(out)
}

/// Losses and gradients for every parameter (zeros for the guidance nets in
/// baseline mode), in [`TaeModel::named_params`] order.
pub fn sample_gradients(
    model: &TaeModel,
    image: &Tensor,
    bbox: &BBox,
    cfg: &TrainConfig,
) -> Result<(LossParts, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let guidance = cfg.mode.uses_guidance().then(|| model.guidance.bind(&mut tape));
    let predictor = model.predictor.bind(&mut tape);
    let x = tape.leaf(image.clone());
    let v = enhance_on_tape(&mut tape, x, guidance.as_ref(), &predictor, cfg.mode)?;
    let loc = match v.objectness {
        Some(o) => {
            let (_, h, w) = image.dims3()?;
            let label = gaussian_soft_label_with(bbox, h, w, cfg.label_style)?;
            let label = tape.leaf(label.values);
            loc_loss(&mut tape, o, label, cfg.loc_reduction)?
        }
        None => tape.leaf(Tensor::scalar(0.0)),
    };
    let exp = exposure_loss(&mut tape, v.enhanced, &cfg.exposure)?;
    let color = color_loss(&mut tape, v.enhanced)?;
    let tv = tv_loss(&mut tape, v.mask)?;
    let total = total_loss(&mut tape, loc, exp, color, tv, &cfg.loss)?;
    let parts = LossParts {
        loc: tape.value(loc).item(),
        exp: tape.value(exp).item(),
        color: tape.value(color).item(),
        tv: tape.value(tv).item(),
        total: tape.value(total).item(),
    };
    if !parts.total.is_finite() {
        return Err(Error::Training(format!("non-finite loss {parts:?}")));
    }
    tape.backward(total)?;
    let mut grads = Vec::new();
    match &guidance {
        Some(g) => grads.extend(g.params().into_iter().map(|p| tape.grad_tensor(p).into_data())),
        None => {
            let sizes = model.param_sizes();
            grads.extend(sizes[..model.guidance_param_count()].iter().map(|&n| vec![0.0; n]));
        }
    }
    grads.extend(predictor.params().into_iter().map(|p| tape.grad_tensor(p).into_data()));
    Ok((parts, grads))
}

/// Mean loss components over one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub losses: LossParts,
    pub samples: usize,
    pub skipped: usize,
    pub learning_rate: f64,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: TaeModel,
    pub optimizer: AdamWState,
    epoch: usize,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, model: TaeModel) -> Result<Self> {
        cfg.validate()?;
        let optimizer = AdamWState::zeros(&model.param_sizes());
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_da7a);
        Ok(Self {
            cfg,
            model,
            optimizer,
            epoch: 0,
            rng,
        })
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn learning_rate(&self) -> f64 {
        match self.cfg.lr_schedule {
            LrSchedule::Constant => self.cfg.learning_rate,
            LrSchedule::Cosine => {
                let total = self.cfg.epochs.max(1) as f64;
                let t = (self.epoch as f64 / total).min(1.0);
                self.cfg.learning_rate * 0.5 * (1.0 + (PI * t).cos())
            }
        }
    }

    pub fn checkpoint(&self, config: String) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            optimizer: self.optimizer.clone(),
            config,
        }
    }

    /// One shuffled pass with an optimizer step per batch. Samples that
    /// fail validation or produce a non-finite loss are skipped.
    pub fn train_epoch(&mut self, samples: &[TrainSample]) -> Result<EpochStats> {
        if samples.is_empty() {
            return Err(Error::Training("empty training set".into()));
        }
        let lr = self.learning_rate();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut self.rng);
        let mut sums = LossParts::default();
        let (mut used, mut skipped) = (0usize, 0usize);
        for batch in order.chunks(self.cfg.batch_size) {
            let mut acc: Option<Vec<Vec<f64>>> = None;
            let mut n = 0usize;
            for &i in batch {
                let flip = self.cfg.hflip && self.rng.random_bool(0.5);
                let result = prepare_sample(&samples[i], self.cfg.input_size).and_then(|(img, b)| {
                    let (img, b) = if flip { hflip(&img, &b) } else { (img, b) };
                    sample_gradients(&self.model, &img, &b, &self.cfg)
                });
                let (parts, grads) = match result {
                    Ok(r) => r,
                    Err(e) => {
                        log::warn!("skipping training sample {i}: {e}");
                        skipped += 1;
                        continue;
                    }
                };
                sums.add(&parts);
                n += 1;
                match &mut acc {
                    None => acc = Some(grads),
                    Some(a) => {
                        for (dst, src) in a.iter_mut().zip(&grads) {
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                }
            }
            let Some(mut grads) = acc else { continue };
            for g in grads.iter_mut().flatten() {
                *g /= n as f64;
            }
            used += n;
            self.apply(&grads, lr)?;
        }
        if used == 0 {
            return Err(Error::Training(format!("all {skipped} samples were skipped")));
        }
        self.epoch += 1;
        Ok(EpochStats {
            epoch: self.epoch,
            losses: sums.scaled(1.0 / used as f64),
            samples: used,
            skipped,
            learning_rate: lr,
        })
    }

    fn apply(&mut self, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        // Baseline never updates the guidance networks or their moments.
        let first = if self.cfg.mode.uses_guidance() {
            0
        } else {
            self.model.guidance_param_count()
        };
        let adamw = self.cfg.adamw();
        let mut sub = AdamWState {
            step: self.optimizer.step,
            m: self.optimizer.m.split_off(first),
            v: self.optimizer.v.split_off(first),
        };
        let mut params = self.model.params_mut();
        let mut slices: Vec<&mut [f64]> = params.drain(first..).map(|t| t.data_mut()).collect();
        let gslices: Vec<&[f64]> = grads[first..].iter().map(|g| g.as_slice()).collect();
        let r = adamw_step(&mut slices, &gslices, &mut sub, lr, &adamw);
        self.optimizer.step = sub.step;
        self.optimizer.m.append(&mut sub.m);
        self.optimizer.v.append(&mut sub.v);
        r
    }
}
