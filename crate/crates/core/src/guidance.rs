//! Target-aware guidance: box supervision turned into Gaussian soft labels,
//! the objectness network, its localization loss, and the enhancement-mask
//! network.
//!
//! Pixel `(i, j)` is column `i`, row `j`, with pixel centers at integer
//! coordinates. Every convolution keeps full H×W resolution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{BoundConv, ConvLayer, Tape, Tensor, Var};

/// Clamp applied to predictions before the cross-entropy logs.
pub const BCE_CLAMP: f64 = 1e-7;
/// Guard added to the Dice denominator.
pub const DICE_EPS: f64 = 1e-8;
pub const LEAKY_SLOPE: f64 = 0.1;
pub const FEATURE_CHANNELS: usize = 16;

/// Axis-aligned box: top-left corner and extents, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidBox(format!("non-finite box {self:?}")));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::InvalidBox(format!(
                "degenerate extents w={} h={}",
                self.w, self.h
            )));
        }
        Ok(())
    }

    pub fn center(&self) -> (f64, f64) {
        box_center(self)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }

    /// Box under a resize by `sx` horizontally and `sy` vertically.
    pub fn scaled(&self, sx: f64, sy: f64) -> Self {
        Self {
            x: self.x * sx,
            y: self.y * sy,
            w: self.w * sx,
            h: self.h * sy,
        }
    }

    /// Whether the box overlaps the `width`×`height` frame with positive area.
    pub fn overlaps_frame(&self, width: usize, height: usize) -> bool {
        self.x < width as f64 && self.y < height as f64 && self.right() > 0.0 && self.bottom() > 0.0
    }
}

/// `(x + w/2, y + h/2)`.
pub fn box_center(b: &BBox) -> (f64, f64) {
    (b.x + b.w / 2.0, b.y + b.h / 2.0)
}

/// Whether the Gaussian label decays smoothly over the whole frame or is
/// zeroed outside the box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelStyle {
    #[default]
    Smooth,
    ZeroOutsideBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Sum,
    #[default]
    Mean,
}

/// Gaussian target map, 1×H×W in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelMap {
    pub values: Tensor,
}

/// Sigmoid objectness prediction, 1×H×W in (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectnessMap {
    pub values: Tensor,
}

/// Per-channel enhancement mask, 3×H×W in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancementMask {
    pub values: Tensor,
}

pub fn gaussian_soft_label(b: &BBox, height: usize, width: usize) -> Result<SoftLabelMap> {
    gaussian_soft_label_with(b, height, width, LabelStyle::Smooth)
}

/// `exp(-((i - cx)/sx)^2 / 2 - ((j - cy)/sy)^2 / 2)` with `sx = w/2`,
/// `sy = h/2`, evaluated at every pixel center.
pub fn gaussian_soft_label_with(
    b: &BBox,
    height: usize,
    width: usize,
    style: LabelStyle,
) -> Result<SoftLabelMap> {
    b.validate()?;
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument(format!(
            "soft label needs a non-empty frame, got {height}x{width}"
        )));
    }
    let (cx, cy) = box_center(b);
    let (sx, sy) = (b.w / 2.0, b.h / 2.0);
    let gx: Vec<f64> = (0..width)
        .map(|i| {
            let d = (i as f64 - cx) / sx;
            (-0.5 * d * d).exp()
        })
        .collect();
    let gy: Vec<f64> = (0..height)
        .map(|j| {
            let d = (j as f64 - cy) / sy;
            (-0.5 * d * d).exp()
        })
        .collect();
    let inside = |i: usize, j: usize| {
        let (i, j) = (i as f64, j as f64);
        i >= b.x && i < b.right() && j >= b.y && j < b.bottom()
    };
    let mut values = Tensor::zeros(&[1, height, width]);
    for j in 0..height {
        for i in 0..width {
            let v = match style {
                LabelStyle::ZeroOutsideBox if !inside(i, j) => 0.0,
                _ => (gx[i] * gy[j]).clamp(0.0, 1.0),
            };
            values.set(0, j, i, v);
        }
    }
    Ok(SoftLabelMap { values })
}

/// Backbone, objectness head, and mask network.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceNets {
    pub backbone: [ConvLayer; 3],
    pub objectness: ConvLayer,
    pub mask: [ConvLayer; 3],
}

impl GuidanceNets {
    /// Fan-in uniform hidden layers; both output heads start at zero so the
    /// initial objectness and mask are 0.5 everywhere.
    pub fn init<R: Rng>(rng: &mut R) -> Self {
        let c = FEATURE_CHANNELS;
        Self {
            backbone: [
                ConvLayer::fan_in_uniform(c, 3, 3, 1, 1, rng),
                ConvLayer::fan_in_uniform(c, c, 3, 1, 1, rng),
                ConvLayer::fan_in_uniform(c, c, 3, 1, 1, rng),
            ],
            objectness: ConvLayer::zeros(1, c, 3, 1, 1),
            mask: [
                ConvLayer::fan_in_uniform(c, c + 1, 3, 1, 1, rng),
                ConvLayer::fan_in_uniform(c, c, 3, 1, 1, rng),
                ConvLayer::zeros(3, c, 3, 1, 1),
            ],
        }
    }

    /// Layers with stable names, in parameter order.
    pub fn layers(&self) -> Vec<(String, &ConvLayer)> {
        let mut out = Vec::with_capacity(7);
        for (i, l) in self.backbone.iter().enumerate() {
            out.push((format!("backbone.{i}"), l));
        }
        out.push(("objectness".to_string(), &self.objectness));
        for (i, l) in self.mask.iter().enumerate() {
            out.push((format!("mask.{i}"), l));
        }
        out
    }

    pub fn layers_mut(&mut self) -> Vec<&mut ConvLayer> {
        let mut out: Vec<&mut ConvLayer> = Vec::with_capacity(7);
        out.extend(self.backbone.iter_mut());
        out.push(&mut self.objectness);
        out.extend(self.mask.iter_mut());
        out
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundGuidance {
        BoundGuidance {
            backbone: [
                self.backbone[0].bind(tape),
                self.backbone[1].bind(tape),
                self.backbone[2].bind(tape),
            ],
            objectness: self.objectness.bind(tape),
            mask: [
                self.mask[0].bind(tape),
                self.mask[1].bind(tape),
                self.mask[2].bind(tape),
            ],
        }
    }
}

/// [`GuidanceNets`] parameters recorded on a tape.
#[derive(Debug, Clone)]
pub struct BoundGuidance {
    backbone: [BoundConv; 3],
    objectness: BoundConv,
    mask: [BoundConv; 3],
}

impl BoundGuidance {
    /// Weight and bias handles, matching [`GuidanceNets::layers`] order.
    pub fn params(&self) -> Vec<Var> {
        self.backbone
            .iter()
            .chain(std::iter::once(&self.objectness))
            .chain(self.mask.iter())
            .flat_map(|c| [c.weight, c.bias])
            .collect()
    }
}

fn check_image(tape: &Tape, image: Var) -> Result<(usize, usize)> {
    match tape.shape(image) {
        &[3, h, w] => Ok((h, w)),
        s => Err(Error::InvalidArgument(format!(
            "expected a 3xHxW image, got {s:?}"
        ))),
    }
}

/// Shared backbone features `F` (16×H×W) and objectness `O` (1×H×W).
pub fn objectness_forward(tape: &mut Tape, image: Var, nets: &BoundGuidance) -> Result<(Var, Var)> {
    check_image(tape, image)?;
    let mut x = image;
    for layer in &nets.backbone {
        x = layer.forward(tape, x)?;
        x = tape.leaky_relu(x, LEAKY_SLOPE)?;
    }
    let logits = nets.objectness.forward(tape, x)?;
    let o = tape.sigmoid(logits)?;
    Ok((x, o))
}

/// Mask `M = f(concat(O, F))`, 3×H×W through a final sigmoid.
pub fn mask_forward(tape: &mut Tape, objectness: Var, features: Var, nets: &BoundGuidance) -> Result<Var> {
    let (os, fs) = (tape.shape(objectness), tape.shape(features));
    if os.len() != 3 || fs.len() != 3 || os[0] != 1 || os[1..] != fs[1..] {
        return Err(Error::InvalidArgument(format!(
            "objectness {os:?} and features {fs:?} must share spatial extents"
        )));
    }
    let mut x = tape.concat(&[objectness, features])?;
    for (k, layer) in nets.mask.iter().enumerate() {
        x = layer.forward(tape, x)?;
        if k + 1 < nets.mask.len() {
            x = tape.leaky_relu(x, LEAKY_SLOPE)?;
        }
    }
    Ok(tape.sigmoid(x)?)
}

/// Cross-entropy (reduced per `reduction`) plus Dice loss between the
/// objectness prediction and its soft label.
pub fn loc_loss(tape: &mut Tape, objectness: Var, label: Var, reduction: Reduction) -> Result<Var> {
    if tape.shape(objectness) != tape.shape(label) {
        return Err(Error::InvalidArgument(format!(
            "objectness {:?} and label {:?} differ in shape",
            tape.shape(objectness),
            tape.shape(label)
        )));
    }
    let oc = tape.clamp(objectness, BCE_CLAMP, 1.0 - BCE_CLAMP)?;
    let log_o = tape.log(oc)?;
    let one_minus_o = tape.mul_scalar(oc, -1.0)?;
    let one_minus_o = tape.add_scalar(one_minus_o, 1.0)?;
    let log_1mo = tape.log(one_minus_o)?;
    let one_minus_gt = tape.mul_scalar(label, -1.0)?;
    let one_minus_gt = tape.add_scalar(one_minus_gt, 1.0)?;
    let pos = tape.mul(label, log_o)?;
    let neg = tape.mul(one_minus_gt, log_1mo)?;
    let ll = tape.add(pos, neg)?;
    let ll = match reduction {
        Reduction::Sum => tape.sum(ll)?,
        Reduction::Mean => tape.mean(ll)?,
    };
    let bce = tape.mul_scalar(ll, -1.0)?;

    let overlap = tape.mul(objectness, label)?;
    let overlap = tape.sum(overlap)?;
    let overlap = tape.mul_scalar(overlap, 2.0)?;
    let so = tape.sum(objectness)?;
    let sg = tape.sum(label)?;
    let denom = tape.add(so, sg)?;
    let denom = tape.add_scalar(denom, DICE_EPS)?;
    let ratio = tape.div(overlap, denom)?;
    let dice = tape.mul_scalar(ratio, -1.0)?;
    let dice = tape.add_scalar(dice, 1.0)?;
    Ok(tape.add(bce, dice)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn box_center_examples() {
        assert_eq!(box_center(&BBox::new(10.0, 20.0, 30.0, 40.0).unwrap()), (25.0, 40.0));
        assert_eq!(box_center(&BBox::new(0.0, 0.0, 2.0, 2.0).unwrap()), (1.0, 1.0));
        assert_eq!(box_center(&BBox::new(2.5, 3.0, 5.0, 1.0).unwrap()), (5.0, 3.5));
    }

    #[test]
    fn degenerate_boxes_are_rejected() {
        assert!(BBox::new(0.0, 0.0, 0.0, 3.0).is_err());
        assert!(BBox::new(0.0, 0.0, 3.0, -1.0).is_err());
        let bad = BBox {
            x: 0.0,
            y: 0.0,
            w: 0.0,
            h: 1.0,
        };
        assert!(gaussian_soft_label(&bad, 4, 4).is_err());
    }

    #[test]
    fn soft_label_reference_values() {
        // center (25, 40), sigma (15, 20)
        let b = BBox::new(10.0, 20.0, 30.0, 40.0).unwrap();
        let m = gaussian_soft_label(&b, 64, 64).unwrap().values;
        assert_eq!(m.at(0, 40, 25), 1.0);
        assert!(close(m.at(0, 40, 40), (-0.5f64).exp(), 1e-15));
        assert!(close(m.at(0, 40, 40), 0.606531, 1e-6));
        assert!(close(m.at(0, 60, 40), 0.367879, 1e-6));
    }

    #[test]
    fn zeroed_label_style() {
        let b = BBox::new(4.0, 4.0, 4.0, 4.0).unwrap();
        let m = gaussian_soft_label_with(&b, 16, 16, LabelStyle::ZeroOutsideBox).unwrap().values;
        assert_eq!(m.at(0, 0, 0), 0.0);
        assert_eq!(m.at(0, 6, 6), 1.0);
        assert!(m.at(0, 4, 4) > 0.0);
        assert_eq!(m.at(0, 8, 6), 0.0);
    }

    #[test]
    fn soft_label_is_rank_one() {
        let b = BBox::new(1.3, 2.1, 3.7, 2.4).unwrap();
        let m = gaussian_soft_label(&b, 7, 9).unwrap().values;
        // O(i,j) * O(i',j') == O(i,j') * O(i',j) for a separable map
        for j in 0..7 {
            for i in 0..9 {
                for jj in 0..7 {
                    for ii in 0..9 {
                        let lhs = m.at(0, j, i) * m.at(0, jj, ii);
                        let rhs = m.at(0, jj, i) * m.at(0, j, ii);
                        assert!(close(lhs, rhs, 1e-15));
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn soft_label_translation_equivariant(
            x in 0.0f64..10.0, y in 0.0f64..10.0, w in 1.0f64..8.0, h in 1.0f64..8.0,
            dx in 0usize..5, dy in 0usize..5,
        ) {
            let b = BBox::new(x, y, w, h).unwrap();
            let a = gaussian_soft_label(&b, 24, 24).unwrap().values;
            let s = gaussian_soft_label(&b.translated(dx as f64, dy as f64), 24, 24).unwrap().values;
            for j in 0..24 - dy {
                for i in 0..24 - dx {
                    let (u, v) = (a.at(0, j, i), s.at(0, j + dy, i + dx));
                    prop_assert!((u - v).abs() <= 1e-12 * u.max(v), "{} vs {}", u, v);
                }
            }
        }

        #[test]
        fn soft_label_peak_and_monotone(
            x in 0.0f64..12.0, y in 0.0f64..12.0, w in 1.0f64..10.0, h in 1.0f64..10.0,
        ) {
            let b = BBox::new(x, y, w, h).unwrap();
            let m = gaussian_soft_label(&b, 24, 24).unwrap().values;
            let (cx, cy) = box_center(&b);
            let (pi, pj) = ((cx.round() as usize).min(23), (cy.round() as usize).min(23));
            let max = m.data().iter().cloned().fold(0.0, f64::max);
            prop_assert!(max <= 1.0);
            prop_assert_eq!(m.at(0, pj, pi), max);
            for i in pi..23 {
                prop_assert!(m.at(0, pj, i + 1) <= m.at(0, pj, i));
            }
            for i in (1..=pi).rev() {
                prop_assert!(m.at(0, pj, i - 1) <= m.at(0, pj, i));
            }
            for j in pj..23 {
                prop_assert!(m.at(0, j + 1, pi) <= m.at(0, j, pi));
            }
        }
    }

    fn loc_value(o: &Tensor, gt: &Tensor, red: Reduction) -> f64 {
        let mut t = Tape::new();
        let ov = t.leaf(o.clone());
        let gv = t.leaf(gt.clone());
        let l = loc_loss(&mut t, ov, gv, red).unwrap();
        t.value(l).item()
    }

    #[test]
    fn loc_loss_perfect_prediction() {
        let ones = Tensor::full(&[1, 2, 2], 1.0);
        assert!(loc_value(&ones, &ones, Reduction::Mean) < 1e-6);
    }

    #[test]
    fn loc_loss_uniform_half() {
        let half = Tensor::full(&[1, 2, 2], 0.5);
        let v = loc_value(&half, &half, Reduction::Mean);
        let expected = 2f64.ln() + 0.5;
        // the Dice guard shifts the value by about 1e-9
        assert!(close(v, expected, 1e-8), "{v}");
        assert!(close(v, 1.193147, 1e-6));
        let s = loc_value(&half, &half, Reduction::Sum);
        assert!(close(s, 4.0 * 2f64.ln() + 0.5, 1e-8));
    }

    #[test]
    fn loc_loss_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let gt = Tensor::from_fn(&[1, 3, 3], |_| rng.random_range(0.0..1.0));
            let o = Tensor::from_fn(&[1, 3, 3], |_| rng.random_range(0.05..0.95));
            let r = grad_check(
                |t, x| {
                    let g = t.leaf(gt.clone());
                    loc_loss(t, x, g, Reduction::Mean).map_err(|e| match e {
                        Error::Tensor(te) => te,
                        other => panic!("{other}"),
                    })
                },
                &o,
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn loc_loss_of_binary_maps_with_itself_is_tiny() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let mut o = Tensor::from_fn(&[1, 4, 4], |_| if rng.random_bool(0.4) { 1.0 } else { 0.0 });
            // an all-background map has Dice 1 by construction; keep one foreground pixel
            o.data_mut()[rng.random_range(0..16)] = 1.0;
            assert!(loc_value(&o, &o, Reduction::Mean) <= 1e-5);
        }
    }

    #[test]
    fn loc_loss_prefers_the_label() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let b = BBox::new(
                rng.random_range(0.0..10.0),
                rng.random_range(0.0..10.0),
                rng.random_range(2.0..8.0),
                rng.random_range(2.0..8.0),
            )
            .unwrap();
            let gt = gaussian_soft_label(&b, 16, 16).unwrap().values;
            let at_gt = loc_value(&gt, &gt, Reduction::Mean);
            let flipped = Tensor::from_fn(gt.shape(), |i| 1.0 - gt.data()[i]);
            let half = Tensor::full(gt.shape(), 0.5);
            let random = Tensor::from_fn(gt.shape(), |_| rng.random_range(0.0..1.0));
            for cand in [flipped, half, random] {
                assert!(at_gt < loc_value(&cand, &gt, Reduction::Mean));
            }
        }
    }

    #[test]
    fn zero_heads_give_half_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let nets = GuidanceNets::init(&mut rng);
        let img = Tensor::from_fn(&[3, 6, 5], |_| rng.random_range(0.0..1.0));
        let mut t = Tape::new();
        let bound = nets.bind(&mut t);
        let x = t.leaf(img);
        let (f, o) = objectness_forward(&mut t, x, &bound).unwrap();
        assert_eq!(t.shape(f), &[16, 6, 5]);
        assert_eq!(t.shape(o), &[1, 6, 5]);
        assert!(t.value(o).data().iter().all(|&v| v == 0.5));
        let m = mask_forward(&mut t, o, f, &bound).unwrap();
        assert_eq!(t.shape(m), &[3, 6, 5]);
        assert!(t.value(m).data().iter().all(|&v| v == 0.5));
    }

    fn randomized_nets(seed: u64) -> GuidanceNets {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nets = GuidanceNets::init(&mut rng);
        for layer in nets.layers_mut() {
            for w in layer.weight.data_mut() {
                *w = rng.random_range(-0.3..0.3);
            }
            for b in layer.bias.data_mut() {
                *b = rng.random_range(-0.1..0.1);
            }
        }
        nets
    }

    #[test]
    fn mask_stays_in_unit_interval() {
        for seed in 0..5 {
            let mut nets = randomized_nets(seed);
            for w in nets.mask[2].weight.data_mut() {
                *w *= 50.0;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 10);
            let img = Tensor::from_fn(&[3, 5, 5], |_| rng.random_range(0.0..1.0));
            let mut t = Tape::new();
            let bound = nets.bind(&mut t);
            let x = t.leaf(img);
            let (f, o) = objectness_forward(&mut t, x, &bound).unwrap();
            let m = mask_forward(&mut t, o, f, &bound).unwrap();
            assert!(t.value(m).data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn objectness_gradient_wrt_first_layer() {
        let nets = randomized_nets(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = Tensor::from_fn(&[3, 4, 4], |_| rng.random_range(0.0..1.0));
        let eval = |nets: &GuidanceNets| -> f64 {
            let mut t = Tape::new();
            let bound = nets.bind(&mut t);
            let x = t.leaf(img.clone());
            let (_, o) = objectness_forward(&mut t, x, &bound).unwrap();
            let s = t.sum(o).unwrap();
            t.value(s).item()
        };
        let mut tape = Tape::new();
        let b = nets.bind(&mut tape);
        let x = tape.leaf(img.clone());
        let (_, o) = objectness_forward(&mut tape, x, &b).unwrap();
        let s = tape.sum(o).unwrap();
        tape.backward(s).unwrap();
        let analytic = tape.grad_tensor(b.params()[0]).into_data();
        let w0 = nets.backbone[0].weight.data().to_vec();
        let indices: Vec<usize> = (0..w0.len()).step_by(17).collect();
        let report = crate::tensor::central_difference_check(
            |p| {
                let mut n = nets.clone();
                n.backbone[0].weight.data_mut().copy_from_slice(p);
                Some(eval(&n))
            },
            &w0,
            &analytic,
            &indices,
            1e-5,
            1e-3,
        );
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn mask_gradient_wrt_objectness() {
        let nets = randomized_nets(8);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let feats = Tensor::from_fn(&[16, 4, 4], |_| rng.random_range(-1.0..1.0));
        let o = Tensor::from_fn(&[1, 4, 4], |_| rng.random_range(0.1..0.9));
        let r = grad_check(
            |t, x| {
                let bound = nets.bind(t);
                let f = t.leaf(feats.clone());
                let m = mask_forward(t, x, f, &bound).map_err(|e| match e {
                    Error::Tensor(te) => te,
                    other => panic!("{other}"),
                })?;
                t.sum(m)
            },
            &o,
            1e-5,
            1e-3,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let nets = GuidanceNets::init(&mut ChaCha8Rng::seed_from_u64(0));
        let mut t = Tape::new();
        let bound = nets.bind(&mut t);
        let x = t.leaf(Tensor::zeros(&[1, 4, 4]));
        assert!(objectness_forward(&mut t, x, &bound).is_err());
        let o = t.leaf(Tensor::zeros(&[1, 4, 4]));
        let f = t.leaf(Tensor::zeros(&[16, 5, 4]));
        assert!(mask_forward(&mut t, o, f, &bound).is_err());
    }
}
