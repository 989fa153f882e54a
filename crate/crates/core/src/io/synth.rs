//! Synthetic low-light tracking sequences: a bright square moving with
//! constant velocity (bouncing off the borders) over a dark noisy
//! background.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{Split, GROUND_TRUTH_FILE};
use super::image::quantize;
use crate::error::{Error, Result};
use crate::guidance::BBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub train_sequences: usize,
    pub test_sequences: usize,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Mean background intensity.
    pub base: f64,
    pub noise_sigma: f64,
    pub target_intensity: f64,
    /// Side of the square target in pixels.
    pub target_size: usize,
    /// Target speed in pixels per frame.
    pub speed: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            train_sequences: 30,
            test_sequences: 10,
            frames: 60,
            width: 48,
            height: 48,
            base: 0.05,
            noise_sigma: 0.02,
            target_intensity: 0.25,
            target_size: 8,
            speed: 1.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.frames == 0 {
            return bad("synth: frames must be positive".into());
        }
        if self.target_size == 0 || self.target_size > self.width.min(self.height) {
            return bad(format!(
                "synth: target_size {} does not fit a {}x{} frame",
                self.target_size, self.width, self.height
            ));
        }
        for (name, v) in [("base", self.base), ("target_intensity", self.target_intensity)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("synth: {name} {v} outside [0, 1]"));
            }
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) || !(self.speed.is_finite() && self.speed >= 0.0) {
            return bad("synth: noise_sigma and speed must be finite and >= 0".into());
        }
        Ok(())
    }
}

/// One generated sequence held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSequence {
    pub id: String,
    pub split: Split,
    pub frames: Vec<RgbImage>,
    pub boxes: Vec<BBox>,
}

/// Target trajectory: rounded top-left corners, one per frame.
fn trajectory(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let s = cfg.target_size as f64;
    let (xmax, ymax) = (cfg.width as f64 - s, cfg.height as f64 - s);
    let (mut x, mut y) = (rng.random_range(0.0..=xmax), rng.random_range(0.0..=ymax));
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (mut vx, mut vy) = (cfg.speed * angle.cos(), cfg.speed * angle.sin());
    let bounce = |p: &mut f64, v: &mut f64, max: f64| {
        for _ in 0..4 {
            if *p < 0.0 {
                *p = -*p;
                *v = -*v;
            } else if *p > max {
                *p = 2.0 * max - *p;
                *v = -*v;
            }
        }
        *p = p.clamp(0.0, max);
    };
    let mut out = Vec::with_capacity(cfg.frames);
    for k in 0..cfg.frames {
        if k > 0 {
            x += vx;
            y += vy;
            bounce(&mut x, &mut vx, xmax);
            bounce(&mut y, &mut vy, ymax);
        }
        out.push((x.round() as usize, y.round() as usize));
    }
    out
}

pub fn synth_sequence(cfg: &SynthConfig, index: usize, split: Split) -> Result<SynthSequence> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let s = cfg.target_size;
    let mut frames = Vec::with_capacity(cfg.frames);
    let mut boxes = Vec::with_capacity(cfg.frames);
    for (x0, y0) in trajectory(cfg, &mut rng) {
        let img = RgbImage::from_fn(cfg.width as u32, cfg.height as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            let inside = (x0..x0 + s).contains(&x) && (y0..y0 + s).contains(&y);
            let level = if inside { cfg.target_intensity } else { cfg.base };
            Rgb([0; 3].map(|_: u8| quantize(level + noise.sample(&mut rng))))
        });
        frames.push(img);
        boxes.push(BBox {
            x: x0 as f64,
            y: y0 as f64,
            w: s as f64,
            h: s as f64,
        });
    }
    let id = format!("{split}_{index:03}");
    Ok(SynthSequence { id, split, frames, boxes })
}

/// Writes `train_sequences + test_sequences` sequences plus split lists
/// under `root`. Returns the sequence ids in generation order.
pub fn synth_dataset(root: &Path, cfg: &SynthConfig) -> Result<Vec<String>> {
    cfg.validate()?;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut ids = Vec::new();
    let plan = [(Split::Train, cfg.train_sequences), (Split::Test, cfg.test_sequences)];
    let mut index = 0;
    for (split, count) in plan {
        let mut listed = String::new();
        for _ in 0..count {
            let seq = synth_sequence(cfg, index, split)?;
            index += 1;
            write_sequence(root, &seq)?;
            listed.push_str(&seq.id);
            listed.push('\n');
            ids.push(seq.id);
        }
        let list = root.join(format!("{split}.txt"));
        fs::write(&list, listed).map_err(|e| Error::io(&list, e))?;
    }
    Ok(ids)
}

pub fn write_sequence(root: &Path, seq: &SynthSequence) -> Result<()> {
    let img_dir = root.join(&seq.id).join("img");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    for (k, frame) in seq.frames.iter().enumerate() {
        let path = img_dir.join(format!("{:04}.png", k + 1));
        frame.save(&path).map_err(|e| Error::Image {
            path: path.clone(),
            message: e.to_string(),
        })?;
    }
    let gt: String = seq
        .boxes
        .iter()
        .map(|b| format!("{},{},{},{}\n", b.x, b.y, b.w, b.h))
        .collect();
    let gt_path = root.join(&seq.id).join(GROUND_TRUTH_FILE);
    fs::write(&gt_path, gt).map_err(|e| Error::io(&gt_path, e))
}
