use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::enhancement::{enhance_image, AlphaSource, Enhancement, Mode, PredictorNet};
use crate::error::{Error, Result};
use crate::guidance::GuidanceNets;
use crate::tensor::Tensor;

/// Guidance networks plus the global parameter predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct TaeModel {
    pub guidance: GuidanceNets,
    pub predictor: PredictorNet,
}

impl TaeModel {
    pub fn init(seed: u64, alpha_source: AlphaSource) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let guidance = GuidanceNets::init(&mut rng);
        let predictor = PredictorNet::init(&mut rng, alpha_source);
        Self { guidance, predictor }
    }

    /// Number of leading entries of [`Self::named_params`] owned by the
    /// guidance networks.
    pub fn guidance_param_count(&self) -> usize {
        2 * self.guidance.layers().len()
    }

    /// Every parameter tensor with a stable dotted name. Guidance tensors
    /// come first, in the order `BoundGuidance::params` returns them.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (name, layer) in self.guidance.layers() {
            out.push((format!("guidance.{name}.weight"), &layer.weight));
            out.push((format!("guidance.{name}.bias"), &layer.bias));
        }
        for (name, t) in self.predictor.named_params() {
            out.push((format!("predictor.{name}"), t));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in self.guidance.layers_mut() {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
        out.extend(self.predictor.params_mut());
        out
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.named_params().iter().map(|(_, t)| t.len()).collect()
    }

    /// Replaces the tensor called `name`; the shape must match.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let idx = self
            .named_params()
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name:?}")))?;
        let slot = self.params_mut().into_iter().nth(idx).expect("index from named_params");
        if slot.shape() != value.shape() {
            return Err(Error::InvalidArgument(format!(
                "parameter {name}: expected shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    /// CRC32 over the raw parameter bytes in name order.
    pub fn checksum(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for (name, t) in self.named_params() {
            h.update(name.as_bytes());
            for v in t.data() {
                h.update(&v.to_le_bytes());
            }
        }
        h.finalize()
    }

    /// CRC32 over the guidance parameters only.
    pub fn guidance_checksum(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for (_, t) in self.named_params().into_iter().take(self.guidance_param_count()) {
            for v in t.data() {
                h.update(&v.to_le_bytes());
            }
        }
        h.finalize()
    }

    pub fn enhance(&self, image: &Tensor, mode: Mode) -> Result<Enhancement> {
        enhance_image(image, &self.guidance, &self.predictor, mode)
    }
}
