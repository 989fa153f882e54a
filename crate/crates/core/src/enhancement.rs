//! Adaptive RGB multi-curve fusion.
//!
//! Each channel is mapped through three curves: a mask-modulated Gamma
//! curve `(I + eps)^(alpha^M)`, a logarithmic curve `log(1 + 10 I) / log 11`,
//! and a sigmoid curve `1 / (1 + exp(-10 (I - 0.5)))`. A small predictor
//! network looks at the whole frame and emits the per-channel Gamma base
//! `alpha` and softmax logits that blend the three curves.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::{
    mask_forward, objectness_forward, BoundGuidance, EnhancementMask, GuidanceNets,
    ObjectnessMap, FEATURE_CHANNELS, LEAKY_SLOPE,
};
use crate::tensor::{BoundConv, ConvLayer, Tape, Tensor, Var};

/// Offset keeping the Gamma base strictly positive.
pub const GAMMA_EPS: f64 = 1e-3;
pub const CURVE_COUNT: usize = 3;
/// Smallest frame side the predictor's three stride-2 layers accept.
pub const MIN_PREDICTOR_SIDE: usize = 8;
const HEAD_OUTPUTS: usize = 12;

/// Which parts of the pipeline are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Single global Gamma curve, mask fixed at 1.
    #[serde(rename = "baseline")]
    Baseline,
    /// Mask-modulated Gamma curve only.
    #[serde(rename = "TA")]
    TargetAware,
    /// Full three-curve fusion.
    #[serde(rename = "TA+MC")]
    TargetAwareMultiCurve,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Baseline, Mode::TargetAware, Mode::TargetAwareMultiCurve];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::TargetAware => "TA",
            Mode::TargetAwareMultiCurve => "TA+MC",
        }
    }

    pub fn uses_guidance(self) -> bool {
        !matches!(self, Mode::Baseline)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "TA" | "ta" => Ok(Mode::TargetAware),
            "TA+MC" | "ta+mc" => Ok(Mode::TargetAwareMultiCurve),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode {other:?} (expected baseline, TA or TA+MC)"
            ))),
        }
    }
}

/// Where the Gamma bases come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaSource {
    /// Image-conditioned output of the predictor head.
    #[default]
    Predicted,
    /// One free learnable value per channel.
    Global,
}

/// Gamma bases in (0, 1] and channel × curve fusion logits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveParams {
    pub alpha: [f64; 3],
    pub fusion_logits: [[f64; CURVE_COUNT]; 3],
}

impl CurveParams {
    pub fn validate(&self) -> Result<()> {
        for a in self.alpha {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::InvalidArgument(format!("alpha {a} outside (0, 1]")));
            }
        }
        if !self.fusion_logits.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite fusion logit".into()));
        }
        Ok(())
    }

    /// Per-channel softmax of the logits.
    pub fn fusion_weights(&self) -> [[f64; CURVE_COUNT]; 3] {
        self.fusion_logits.map(|row| {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e = row.map(|v| (v - max).exp());
            let s: f64 = e.iter().sum();
            e.map(|v| v / s)
        })
    }

    fn from_tape(tape: &Tape, vars: &CurveVars) -> Self {
        let a = tape.value(vars.alpha).data();
        let l = tape.value(vars.logits).data();
        Self {
            alpha: [a[0], a[1], a[2]],
            fusion_logits: [
                [l[0], l[1], l[2]],
                [l[3], l[4], l[5]],
                [l[6], l[7], l[8]],
            ],
        }
    }

    /// Records fixed parameters as tape leaves.
    pub fn to_tape(&self, tape: &mut Tape) -> Result<CurveVars> {
        self.validate()?;
        let alpha = tape.leaf(Tensor::new(vec![3], self.alpha.to_vec())?);
        let logits = tape.leaf(Tensor::new(
            vec![9],
            self.fusion_logits.iter().flatten().copied().collect(),
        )?);
        Ok(CurveVars { alpha, logits })
    }
}

/// [`CurveParams`] on a tape: `alpha` has shape [3], `logits` shape [9]
/// in channel-major order.
#[derive(Debug, Clone, Copy)]
pub struct CurveVars {
    pub alpha: Var,
    pub logits: Var,
}

/// Fused output, 3×H×W clamped to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancedImage {
    pub values: Tensor,
}

/// Global parameter predictor: three stride-2 convolutions, global average
/// pooling, and an affine head emitting 9 fusion logits followed by 3
/// pre-sigmoid alphas.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorNet {
    pub convs: [ConvLayer; 3],
    pub head_weight: Tensor,
    pub head_bias: Tensor,
    /// Pre-sigmoid per-channel alphas used by [`AlphaSource::Global`].
    pub global_alpha: Tensor,
    pub alpha_source: AlphaSource,
}

impl PredictorNet {
    pub fn init<R: Rng>(rng: &mut R, alpha_source: AlphaSource) -> Self {
        let c = FEATURE_CHANNELS;
        Self {
            convs: [
                ConvLayer::fan_in_uniform(c, 3, 3, 2, 1, rng),
                ConvLayer::fan_in_uniform(c, c, 3, 2, 1, rng),
                ConvLayer::fan_in_uniform(c, c, 3, 2, 1, rng),
            ],
            head_weight: Tensor::zeros(&[HEAD_OUTPUTS, c]),
            head_bias: Tensor::zeros(&[HEAD_OUTPUTS]),
            global_alpha: Tensor::zeros(&[3]),
            alpha_source,
        }
    }

    /// Parameter tensors with stable names.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.convs.iter().enumerate() {
            out.push((format!("conv.{i}.weight"), &l.weight));
            out.push((format!("conv.{i}.bias"), &l.bias));
        }
        out.push(("head.weight".into(), &self.head_weight));
        out.push(("head.bias".into(), &self.head_bias));
        out.push(("global_alpha".into(), &self.global_alpha));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.convs {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out.push(&mut self.global_alpha);
        out
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundPredictor {
        BoundPredictor {
            convs: [
                self.convs[0].bind(tape),
                self.convs[1].bind(tape),
                self.convs[2].bind(tape),
            ],
            head_weight: tape.leaf(self.head_weight.clone()),
            head_bias: tape.leaf(self.head_bias.clone()),
            global_alpha: tape.leaf(self.global_alpha.clone()),
            alpha_source: self.alpha_source,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundPredictor {
    convs: [BoundConv; 3],
    head_weight: Var,
    head_bias: Var,
    global_alpha: Var,
    alpha_source: AlphaSource,
}

impl BoundPredictor {
    /// Handles in [`PredictorNet::named_params`] order.
    pub fn params(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self.convs.iter().flat_map(|c| [c.weight, c.bias]).collect();
        out.extend([self.head_weight, self.head_bias, self.global_alpha]);
        out
    }
}

/// Predicts `alpha = sigmoid(head[9..12])` and raw logits `head[0..9]`.
pub fn predict_global_params(tape: &mut Tape, image: Var, net: &BoundPredictor) -> Result<CurveVars> {
    let (h, w) = match tape.shape(image) {
        &[3, h, w] => (h, w),
        s => {
            return Err(Error::InvalidArgument(format!(
                "expected a 3xHxW image, got {s:?}"
            )))
        }
    };
    if h < MIN_PREDICTOR_SIDE || w < MIN_PREDICTOR_SIDE {
        return Err(Error::InvalidArgument(format!(
            "predictor needs at least {MIN_PREDICTOR_SIDE}x{MIN_PREDICTOR_SIDE}, got {h}x{w}"
        )));
    }
    let mut x = image;
    for conv in &net.convs {
        x = conv.forward(tape, x)?;
        x = tape.leaky_relu(x, LEAKY_SLOPE)?;
    }
    let pooled = tape.global_avg_pool(x)?;
    let head = tape.linear(pooled, net.head_weight, net.head_bias)?;
    let logits = tape.narrow(head, 0, 9)?;
    let alpha = match net.alpha_source {
        AlphaSource::Predicted => {
            let pre = tape.narrow(head, 9, 3)?;
            tape.sigmoid(pre)?
        }
        AlphaSource::Global => tape.sigmoid(net.global_alpha)?,
    };
    Ok(CurveVars { alpha, logits })
}

fn check_alpha(tape: &Tape, alpha: Var) -> Result<()> {
    if let Some(a) = tape.value(alpha).data().iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
        return Err(Error::InvalidArgument(format!("alpha {a} outside (0, 1]")));
    }
    Ok(())
}

/// `(I + eps)^(alpha^M)` pixel-wise. `alpha` is a scalar or one value per
/// channel of `image`; `mask` matches `image`.
pub fn gamma_curve(tape: &mut Tape, image: Var, alpha: Var, mask: Var) -> Result<Var> {
    check_alpha(tape, alpha)?;
    if tape.shape(image) != tape.shape(mask) {
        return Err(Error::InvalidArgument(format!(
            "image {:?} and mask {:?} differ in shape",
            tape.shape(image),
            tape.shape(mask)
        )));
    }
    let gamma = tape.pow(alpha, mask)?;
    let base = tape.add_scalar(image, GAMMA_EPS)?;
    Ok(tape.pow(base, gamma)?)
}

/// `log(1 + 10 I) / log 11`.
pub fn log_curve(tape: &mut Tape, image: Var) -> Result<Var> {
    let x = tape.mul_scalar(image, 10.0)?;
    let x = tape.add_scalar(x, 1.0)?;
    let x = tape.log(x)?;
    Ok(tape.mul_scalar(x, 1.0 / 11f64.ln())?)
}

/// `1 / (1 + exp(-10 (I - 0.5)))`.
pub fn sigmoid_curve(tape: &mut Tape, image: Var) -> Result<Var> {
    let x = tape.add_scalar(image, -0.5)?;
    let x = tape.mul_scalar(x, 10.0)?;
    Ok(tape.sigmoid(x)?)
}

/// Softmax-weighted sum of the three curves per channel, before clamping.
pub fn fuse_curves_unclamped(tape: &mut Tape, image: Var, mask: Var, params: &CurveVars) -> Result<Var> {
    let channels = match tape.shape(image) {
        &[c, _, _] => c,
        s => return Err(Error::InvalidArgument(format!("expected CxHxW image, got {s:?}"))),
    };
    if tape.shape(params.alpha) != [channels] || tape.shape(params.logits) != [channels * CURVE_COUNT] {
        return Err(Error::InvalidArgument(format!(
            "curve params {:?}/{:?} do not match {channels} channels",
            tape.shape(params.alpha),
            tape.shape(params.logits)
        )));
    }
    let mut rows = Vec::with_capacity(channels);
    for c in 0..channels {
        let row = tape.narrow(params.logits, c * CURVE_COUNT, CURVE_COUNT)?;
        rows.push(tape.softmax(row)?);
    }
    let weights = tape.concat(&rows)?;
    let curves = [
        gamma_curve(tape, image, params.alpha, mask)?,
        log_curve(tape, image)?,
        sigmoid_curve(tape, image)?,
    ];
    let mut fused: Option<Var> = None;
    for (k, curve) in curves.into_iter().enumerate() {
        let idx: Vec<usize> = (0..channels).map(|c| c * CURVE_COUNT + k).collect();
        let wk = tape.gather(weights, &idx, &[channels])?;
        let term = tape.mul(curve, wk)?;
        fused = Some(match fused {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok(fused.expect("three curves"))
}

/// Fused image clamped to [0, 1].
pub fn fuse_curves(tape: &mut Tape, image: Var, mask: Var, params: &CurveVars) -> Result<Var> {
    let fused = fuse_curves_unclamped(tape, image, mask, params)?;
    Ok(tape.clamp(fused, 0.0, 1.0)?)
}

/// Every intermediate of one enhancement pass recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct EnhanceVars {
    pub enhanced: Var,
    pub features: Option<Var>,
    pub objectness: Option<Var>,
    pub mask: Var,
    pub params: CurveVars,
}

/// Runs the pipeline for `mode` on a tape. `guidance` may be `None` only in
/// baseline mode.
pub fn enhance_on_tape(
    tape: &mut Tape,
    image: Var,
    guidance: Option<&BoundGuidance>,
    predictor: &BoundPredictor,
    mode: Mode,
) -> Result<EnhanceVars> {
    let params = predict_global_params(tape, image, predictor)?;
    let (features, objectness, mask) = if mode.uses_guidance() {
        let g = guidance.ok_or_else(|| {
            Error::InvalidArgument(format!("mode {mode} needs the guidance networks"))
        })?;
        let (f, o) = objectness_forward(tape, image, g)?;
        let m = mask_forward(tape, o, f, g)?;
        (Some(f), Some(o), m)
    } else {
        let ones = Tensor::full(tape.shape(image), 1.0);
        (None, None, tape.leaf(ones))
    };
    let enhanced = match mode {
        Mode::TargetAwareMultiCurve => fuse_curves(tape, image, mask, &params)?,
        Mode::Baseline | Mode::TargetAware => {
            let g = gamma_curve(tape, image, params.alpha, mask)?;
            tape.clamp(g, 0.0, 1.0)?
        }
    };
    Ok(EnhanceVars {
        enhanced,
        features,
        objectness,
        mask,
        params,
    })
}

/// Output of [`enhance_image`].
#[derive(Debug, Clone, PartialEq)]
pub struct Enhancement {
    pub image: EnhancedImage,
    /// Absent in baseline mode, which does not run the guidance networks.
    pub objectness: Option<ObjectnessMap>,
    pub mask: EnhancementMask,
    pub params: CurveParams,
}

/// Inference-only enhancement of a 3×H×W image in [0, 1].
pub fn enhance_image(
    image: &Tensor,
    guidance: &GuidanceNets,
    predictor: &PredictorNet,
    mode: Mode,
) -> Result<Enhancement> {
    let mut tape = Tape::new();
    let g = mode.uses_guidance().then(|| guidance.bind(&mut tape));
    let p = predictor.bind(&mut tape);
    let x = tape.leaf(image.clone());
    let vars = enhance_on_tape(&mut tape, x, g.as_ref(), &p, mode)?;
    Ok(Enhancement {
        image: EnhancedImage {
            values: tape.value(vars.enhanced).clone(),
        },
        objectness: vars.objectness.map(|o| ObjectnessMap {
            values: tape.value(o).clone(),
        }),
        mask: EnhancementMask {
            values: tape.value(vars.mask).clone(),
        },
        params: CurveParams::from_tape(&tape, &vars.params),
    })
}
