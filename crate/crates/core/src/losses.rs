//! Unsupervised enhancement losses and the weighted training objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Axis, Tape, Var};

/// Weights of `loc`, exposure, color and smoothness terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_loc: f64,
    pub lambda_exp: f64,
    pub lambda_color: f64,
    pub lambda_tv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_loc: 1.0,
            lambda_exp: 1.0,
            lambda_color: 0.2,
            lambda_tv: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_loc", self.lambda_loc),
            ("lambda_exp", self.lambda_exp),
            ("lambda_color", self.lambda_color),
            ("lambda_tv", self.lambda_tv),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExposureConfig {
    pub patch: usize,
    /// Well-exposedness level `E`.
    pub target: f64,
}

impl Default for ExposureConfig {
    fn default() -> Self {
        Self { patch: 16, target: 0.6 }
    }
}

impl ExposureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 {
            return Err(Error::InvalidArgument("exposure patch must be positive".into()));
        }
        if !(self.target > 0.0 && self.target < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "exposure target {} outside (0, 1)",
                self.target
            )));
        }
        Ok(())
    }
}

/// Mean over `patch`×`patch` tiles of `|mean_rgb(tile) - E|`. Trailing
/// partial tiles are dropped; a frame smaller than one tile counts as a
/// single tile.
pub fn exposure_loss(tape: &mut Tape, enhanced: Var, cfg: &ExposureConfig) -> Result<Var> {
    cfg.validate()?;
    let y = tape.channel_mean(enhanced)?;
    let (h, w) = (tape.shape(y)[1], tape.shape(y)[2]);
    let means = if h < cfg.patch || w < cfg.patch {
        tape.mean(y)?
    } else {
        tape.patch_mean(y, cfg.patch)?
    };
    let dev = tape.add_scalar(means, -cfg.target)?;
    let dev = tape.abs(dev)?;
    Ok(tape.mean(dev)?)
}

/// Sum of squared differences between global channel means over the pairs
/// (R,G), (R,B), (G,B).
pub fn color_loss(tape: &mut Tape, enhanced: Var) -> Result<Var> {
    let shape = tape.shape(enhanced);
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::InvalidArgument(format!("expected a 3xHxW image, got {shape:?}")));
    }
    let j = tape.global_avg_pool(enhanced)?;
    let first = tape.gather(j, &[0, 0, 1], &[3])?;
    let second = tape.gather(j, &[1, 2, 2], &[3])?;
    let d = tape.sub(first, second)?;
    let d = tape.square(d)?;
    Ok(tape.sum(d)?)
}

/// `mean(dx²) + mean(dy²)` over forward differences. A direction with fewer
/// than two samples contributes 0.
pub fn tv_loss(tape: &mut Tape, mask: Var) -> Result<Var> {
    let shape = tape.shape(mask).to_vec();
    if shape.len() != 3 {
        return Err(Error::InvalidArgument(format!("expected a CxHxW map, got {shape:?}")));
    }
    let mut terms = Vec::with_capacity(2);
    for (axis, extent) in [(Axis::Horizontal, shape[2]), (Axis::Vertical, shape[1])] {
        if extent >= 2 {
            let d = tape.spatial_diff(mask, axis)?;
            let d = tape.square(d)?;
            terms.push(tape.mean(d)?);
        }
    }
    Ok(match terms[..] {
        [] => {
            let z = tape.sum(mask)?;
            tape.mul_scalar(z, 0.0)?
        }
        [t] => t,
        [a, b] => tape.add(a, b)?,
        _ => unreachable!(),
    })
}

/// `lambda_loc·loc + lambda_exp·exp + lambda_color·color + lambda_tv·tv`.
pub fn total_loss(tape: &mut Tape, loc: Var, exp: Var, color: Var, tv: Var, w: &LossWeights) -> Result<Var> {
    w.validate()?;
    let mut acc: Option<Var> = None;
    for (v, lambda) in [(loc, w.lambda_loc), (exp, w.lambda_exp), (color, w.lambda_color), (tv, w.lambda_tv)] {
        if !tape.value(v).is_scalar() {
            return Err(Error::InvalidArgument(format!(
                "loss component has shape {:?}, expected a scalar",
                tape.shape(v)
            )));
        }
        let term = tape.mul_scalar(v, lambda)?;
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    Ok(acc.expect("four components"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, Tensor, TensorError};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn te(e: Error) -> TensorError {
        match e {
            Error::Tensor(t) => t,
            other => panic!("{other}"),
        }
    }

    fn eval(t: Tensor, f: impl FnOnce(&mut Tape, Var) -> Result<Var>) -> f64 {
        let mut tape = Tape::new();
        let x = tape.leaf(t);
        let y = f(&mut tape, x).unwrap();
        tape.value(y).item()
    }

    fn exposure(t: Tensor, cfg: ExposureConfig) -> f64 {
        eval(t, |tape, x| exposure_loss(tape, x, &cfg))
    }

    // Straight loops over the definitions.
    fn exposure_ref(img: &Tensor, patch: usize, e: f64) -> f64 {
        let (c, h, w) = img.dims3().unwrap();
        let (ph, pw) = (h / patch, w / patch);
        let mut total = 0.0;
        for py in 0..ph {
            for px in 0..pw {
                let mut s = 0.0;
                for ch in 0..c {
                    for y in py * patch..(py + 1) * patch {
                        for x in px * patch..(px + 1) * patch {
                            s += img.at(ch, y, x);
                        }
                    }
                }
                total += (s / (c * patch * patch) as f64 - e).abs();
            }
        }
        total / (ph * pw) as f64
    }

    fn tv_ref(m: &Tensor) -> f64 {
        let (c, h, w) = m.dims3().unwrap();
        let (mut sh, mut sv) = (0.0, 0.0);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    if x + 1 < w {
                        sh += (m.at(ch, y, x + 1) - m.at(ch, y, x)).powi(2);
                    }
                    if y + 1 < h {
                        sv += (m.at(ch, y + 1, x) - m.at(ch, y, x)).powi(2);
                    }
                }
            }
        }
        let nh = (c * h * (w.saturating_sub(1))) as f64;
        let nv = (c * h.saturating_sub(1) * w) as f64;
        (if nh > 0.0 { sh / nh } else { 0.0 }) + (if nv > 0.0 { sv / nv } else { 0.0 })
    }

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn exposure_examples() {
        let cfg = ExposureConfig::default();
        assert!(exposure(Tensor::full(&[3, 32, 32], 0.6), cfg) < 1e-15);
        assert!((exposure(Tensor::zeros(&[3, 32, 32]), cfg) - 0.6).abs() < 1e-15);
        let two = Tensor::from_fn(&[3, 16, 32], |i| if i % 32 < 16 { 0.5 } else { 0.7 });
        assert!((exposure(two, cfg) - 0.1).abs() < 1e-12);
        // smaller than one patch: global mean
        assert!((exposure(Tensor::full(&[3, 5, 40], 0.2), cfg) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn exposure_matches_loops_and_drops_remainders() {
        for (seed, (h, w)) in [(16, 16), (20, 37), (33, 48)].into_iter().enumerate() {
            let img = random(&[3, h, w], seed as u64);
            let got = exposure(img.clone(), ExposureConfig::default());
            assert!((got - exposure_ref(&img, 16, 0.6)).abs() < 1e-12);
        }
    }

    #[test]
    fn color_examples() {
        let gray = Tensor::from_fn(&[3, 4, 4], |i| (i % 16) as f64 / 16.0);
        assert_eq!(eval(gray, color_loss), 0.0);
        assert_eq!(eval(Tensor::zeros(&[3, 2, 2]), color_loss), 0.0);
        let means = Tensor::from_fn(&[3, 2, 2], |i| [0.5, 0.5, 0.6][i / 4]);
        assert!((eval(means, color_loss) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn color_rejects_non_rgb() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(&[2, 2, 2]));
        assert!(color_loss(&mut t, x).is_err());
    }

    #[test]
    fn tv_examples() {
        assert_eq!(eval(Tensor::full(&[3, 5, 7], 0.3), tv_loss), 0.0);
        let pair = Tensor::new(vec![1, 1, 2], vec![0.2, 0.7]).unwrap();
        assert!((eval(pair, tv_loss) - 0.25).abs() < 1e-15);
        assert_eq!(eval(Tensor::full(&[3, 1, 1], 0.4), tv_loss), 0.0);
        for seed in 0..5 {
            let m = random(&[3, 4, 4], seed);
            assert!((eval(m.clone(), tv_loss) - tv_ref(&m)).abs() < 1e-12);
        }
    }

    #[test]
    fn total_examples() {
        let w = LossWeights::default();
        let run = |vals: [f64; 4], w: LossWeights| -> f64 {
            let mut t = Tape::new();
            let v: Vec<Var> = vals.iter().map(|x| t.leaf(Tensor::scalar(*x))).collect();
            let y = total_loss(&mut t, v[0], v[1], v[2], v[3], &w).unwrap();
            t.value(y).item()
        };
        assert_eq!(run([0.0; 4], w), 0.0);
        assert!((run([1.0; 4], w) - 2.3).abs() < 1e-15);
        let no_loc = LossWeights { lambda_loc: 0.0, ..w };
        assert_eq!(run([5.0, 1.0, 2.0, 3.0], no_loc), run([-9.0, 1.0, 2.0, 3.0], no_loc));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..3.0));
            let b: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..3.0));
            let s = rng.random_range(-2.0..2.0);
            let mix: [f64; 4] = std::array::from_fn(|i| a[i] + s * b[i]);
            assert!((run(mix, w) - (run(a, w) + s * run(b, w))).abs() < 1e-12);
        }
        let bad = LossWeights { lambda_tv: -1.0, ..w };
        let mut t = Tape::new();
        let z = t.leaf(Tensor::scalar(0.0));
        assert!(total_loss(&mut t, z, z, z, z, &bad).is_err());
    }

    #[test]
    fn losses_pass_gradient_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let small = ExposureConfig { patch: 4, target: 0.6 };
        for _ in 0..10 {
            let p = Tensor::from_fn(&[3, 8, 8], |_| rng.random_range(0.0..1.0));
            for (name, r) in [
                ("exposure", grad_check(|t, x| exposure_loss(t, x, &small).map_err(te), &p, 1e-6, 1e-4)),
                ("exposure-global", grad_check(|t, x| exposure_loss(t, x, &ExposureConfig::default()).map_err(te), &p, 1e-6, 1e-4)),
                ("color", grad_check(|t, x| color_loss(t, x).map_err(te), &p, 1e-5, 1e-4)),
                ("tv", grad_check(|t, x| tv_loss(t, x).map_err(te), &p, 1e-5, 1e-4)),
            ] {
                let r = r.unwrap();
                assert!(r.passed, "{name}: {r:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn losses_nonnegative_and_bounded(seed in any::<u64>(), e in 0.05f64..0.95) {
            let img = random(&[3, 8, 12], seed);
            let cfg = ExposureConfig { patch: 4, target: e };
            let ex = exposure(img.clone(), cfg);
            prop_assert!(ex >= 0.0 && ex <= e.max(1.0 - e));
            let c = eval(img.clone(), color_loss);
            prop_assert!((0.0..=2.0).contains(&c));
            prop_assert!(eval(img, tv_loss) >= 0.0);
        }

        #[test]
        fn exposure_invariant_to_patch_permutation(seed in any::<u64>()) {
            let img = random(&[3, 8, 12], seed);
            // swap the 4x4 tiles at (0,0) and (1,2)
            let mut swapped = img.clone();
            for c in 0..3 {
                for y in 0..4 {
                    for x in 0..4 {
                        let (a, b) = (img.at(c, y, x), img.at(c, y + 4, x + 8));
                        swapped.set(c, y, x, b);
                        swapped.set(c, y + 4, x + 8, a);
                    }
                }
            }
            let cfg = ExposureConfig { patch: 4, target: 0.6 };
            prop_assert!((exposure(img, cfg) - exposure(swapped, cfg)).abs() < 1e-12);
        }

        #[test]
        fn tv_invariant_to_shift_and_flip(seed in any::<u64>(), k in -1.0f64..1.0) {
            let m = random(&[3, 5, 6], seed);
            let base = eval(m.clone(), tv_loss);
            let shifted = Tensor::from_fn(&[3, 5, 6], |i| m.data()[i] + k);
            prop_assert!((eval(shifted, tv_loss) - base).abs() < 1e-12);
            let hflip = Tensor::from_fn(&[3, 5, 6], |i| m.at(i / 30, i % 30 / 6, 5 - i % 6));
            prop_assert!((eval(hflip, tv_loss) - base).abs() < 1e-12);
            let vflip = Tensor::from_fn(&[3, 5, 6], |i| m.at(i / 30, 4 - i % 30 / 6, i % 6));
            prop_assert!((eval(vflip, tv_loss) - base).abs() < 1e-12);
        }
    }
}
