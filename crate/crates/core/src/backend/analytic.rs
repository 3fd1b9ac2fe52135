use serde::{Deserialize, Serialize};

use super::{
    ActivationVector, BackendDescriptor, FeatureMapBundle, LayerInfo, LogitGradient, ModelBackend,
};
use crate::error::{Error, Result};
use crate::image::Image;

pub(crate) const BLOB_INPUT_SIDE: usize = 72;
const BLOB_POOL: usize = 8;
const BLOB_THRESHOLD: f64 = 0.4;

pub const CONV_LAYER: &str = "conv";
pub const POOL_LAYER: &str = "pool";

/// Odd-sized square kernel applied to channel-mean intensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvKernel {
    pub size: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ConvKernel {
    pub fn identity() -> Self {
        ConvKernel {
            size: 1,
            weights: vec![1.0],
            bias: 0.0,
        }
    }

    /// Box average minus a threshold: fires only on bright regions at least
    /// as wide as the box.
    pub fn box_detector(size: usize, threshold: f64) -> Self {
        let n = size * size;
        ConvKernel {
            size,
            weights: vec![1.0 / n as f64; n],
            bias: -threshold,
        }
    }
}

/// Shapes and parameters of an [`AnalyticBackend`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticSpec {
    pub input_side: usize,
    pub kernels: Vec<ConvKernel>,
    /// Non-overlapping average-pooling window; must divide `input_side`.
    pub pool: usize,
    /// One row per class over the flattened pooled activation.
    pub head_weights: Vec<Vec<f64>>,
    pub head_bias: Vec<f64>,
}

/// Closed-form reference model:
///
/// * `conv`: `F_c = ReLU(K_c * gray + b_c)` at input resolution ("same"
///   convolution, replicated borders);
/// * `pool`: `pool`×`pool` average pooling of `F`, flattened channel-major;
/// * logits: `W a + b` over the `pool` activation.
///
/// Every derivative is exact.
#[derive(Debug, Clone)]
pub struct AnalyticBackend {
    spec: AnalyticSpec,
    descriptor: BackendDescriptor,
    pooled_side: usize,
}

impl AnalyticBackend {
    pub fn new(spec: AnalyticSpec) -> Result<Self> {
        let bad = |reason: String| Error::invalid("analytic backend spec", reason);
        if spec.input_side == 0 {
            return Err(bad("input side must be positive".into()));
        }
        if spec.kernels.is_empty() {
            return Err(bad("at least one kernel is required".into()));
        }
        for (i, k) in spec.kernels.iter().enumerate() {
            if k.size % 2 == 0 || k.weights.len() != k.size * k.size {
                return Err(bad(format!("kernel {i} must be odd-sized with size² weights")));
            }
            if k.weights.iter().any(|w| !w.is_finite()) || !k.bias.is_finite() {
                return Err(bad(format!("kernel {i} has non-finite parameters")));
            }
        }
        if spec.pool == 0 || spec.input_side % spec.pool != 0 {
            return Err(bad(format!(
                "pool window {} does not divide input side {}",
                spec.pool, spec.input_side
            )));
        }
        let pooled_side = spec.input_side / spec.pool;
        let channels = spec.kernels.len();
        let act_len = channels * pooled_side * pooled_side;
        if spec.head_weights.len() < 2 || spec.head_bias.len() != spec.head_weights.len() {
            return Err(bad("head needs ≥ 2 classes and one bias per class".into()));
        }
        if let Some(row) = spec.head_weights.iter().find(|r| r.len() != act_len) {
            return Err(bad(format!("head row has {} weights, activation has {act_len}", row.len())));
        }
        let side = spec.input_side;
        let descriptor = BackendDescriptor {
            input_side: side,
            layers: vec![
                LayerInfo {
                    id: CONV_LAYER.into(),
                    len: channels * side * side,
                    spatial: Some([channels, side, side]),
                },
                LayerInfo {
                    id: POOL_LAYER.into(),
                    len: act_len,
                    spatial: None,
                },
            ],
            classes: spec.head_weights.len(),
        };
        descriptor.validate()?;
        Ok(AnalyticBackend {
            spec,
            descriptor,
            pooled_side,
        })
    }

    /// Two-class bright-blob detector: a 3×3 box kernel thresholded at 0.4,
    /// 8×8 pooling, class 1 logit = sum of pooled responses, class 0 its
    /// negation.
    pub fn blob_detector(input_side: usize) -> Result<Self> {
        let pool = if input_side % BLOB_POOL == 0 { BLOB_POOL } else { 1 };
        let pooled = input_side / pool;
        let len = pooled * pooled;
        Self::new(AnalyticSpec {
            input_side,
            kernels: vec![ConvKernel::box_detector(3, BLOB_THRESHOLD)],
            pool,
            head_weights: vec![vec![-1.0; len], vec![1.0; len]],
            head_bias: vec![0.0, 0.0],
        })
    }

    pub fn spec(&self) -> &AnalyticSpec {
        &self.spec
    }

    fn channels(&self) -> usize {
        self.spec.kernels.len()
    }

    /// `F` for all channels, `C x side x side`.
    pub fn feature_maps(&self, image: &Image) -> Result<Vec<f64>> {
        self.descriptor.check_input(image)?;
        let side = self.spec.input_side;
        let gray = image.intensity_plane();
        let mut out = Vec::with_capacity(self.channels() * side * side);
        for kernel in &self.spec.kernels {
            let half = (kernel.size / 2) as isize;
            let last = side as isize - 1;
            for r in 0..side as isize {
                for c in 0..side as isize {
                    let mut acc = kernel.bias;
                    for dr in -half..=half {
                        let rr = (r + dr).clamp(0, last) as usize;
                        let krow = ((dr + half) as usize) * kernel.size;
                        for dc in -half..=half {
                            let cc = (c + dc).clamp(0, last) as usize;
                            acc += kernel.weights[krow + (dc + half) as usize] * gray[rr * side + cc];
                        }
                    }
                    out.push(acc.max(0.0));
                }
            }
        }
        Ok(out)
    }

    pub fn pool_maps(&self, maps: &[f64]) -> Vec<f64> {
        let (side, p, ps) = (self.spec.input_side, self.spec.pool, self.pooled_side);
        let norm = 1.0 / (p * p) as f64;
        let mut out = vec![0.0; self.channels() * ps * ps];
        for ch in 0..self.channels() {
            let plane = &maps[ch * side * side..(ch + 1) * side * side];
            for r in 0..side {
                for c in 0..side {
                    out[ch * ps * ps + (r / p) * ps + c / p] += plane[r * side + c] * norm;
                }
            }
        }
        out
    }

    /// Adjoint of [`Self::pool_maps`] applied to a pooled-space vector.
    fn unpool(&self, pooled: &[f64]) -> Vec<f64> {
        let (side, p, ps) = (self.spec.input_side, self.spec.pool, self.pooled_side);
        let norm = 1.0 / (p * p) as f64;
        let mut out = Vec::with_capacity(self.channels() * side * side);
        for ch in 0..self.channels() {
            for r in 0..side {
                for c in 0..side {
                    out.push(pooled[ch * ps * ps + (r / p) * ps + c / p] * norm);
                }
            }
        }
        out
    }

    fn head(&self, pooled: &[f64], k: usize) -> f64 {
        let w = &self.spec.head_weights[k];
        self.spec.head_bias[k] + w.iter().zip(pooled).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Class logit as a function of the `conv` feature maps.
    pub fn logit_from_maps(&self, maps: &[f64], k: usize) -> Result<f64> {
        self.descriptor.check_class(k)?;
        let expected = self.descriptor.layer(CONV_LAYER)?.len;
        if maps.len() != expected {
            return Err(Error::Shape(format!("{} map values, expected {expected}", maps.len())));
        }
        Ok(self.head(&self.pool_maps(maps), k))
    }

    /// End-to-end class logit for an image.
    pub fn logit(&self, image: &Image, k: usize) -> Result<f64> {
        self.logit_from_maps(&self.feature_maps(image)?, k)
    }
}

impl ModelBackend for AnalyticBackend {
    fn name(&self) -> &str {
        "analytic"
    }

    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn activations(&self, image: &Image, layer_id: &str) -> Result<ActivationVector> {
        let layer = self.descriptor.layer(layer_id)?;
        let maps = self.feature_maps(image)?;
        let values = match layer.id.as_str() {
            CONV_LAYER => maps,
            _ => self.pool_maps(&maps),
        };
        Ok(ActivationVector {
            values,
            layer_id: layer.id.clone(),
            source: image.source_id().to_string(),
        })
    }

    fn feature_maps_and_gradients(
        &self,
        image: &Image,
        k: usize,
        layer_id: &str,
    ) -> Result<FeatureMapBundle> {
        self.descriptor.check_class(k)?;
        let layer = self.descriptor.layer(layer_id)?;
        let shape = layer
            .spatial
            .ok_or_else(|| Error::NotSpatial(layer_id.to_string()))?;
        let maps = self.feature_maps(image)?;
        let grads = self.unpool(&self.spec.head_weights[k]);
        FeatureMapBundle::new(shape, maps, grads)
    }

    fn logit_from_activation(
        &self,
        activation: &ActivationVector,
        k: usize,
    ) -> Result<LogitGradient> {
        self.descriptor.check_class(k)?;
        let layer = self.descriptor.layer(&activation.layer_id)?;
        if activation.values.len() != layer.len {
            return Err(Error::Shape(format!(
                "activation has {} values, layer `{}` has {}",
                activation.values.len(),
                layer.id,
                layer.len
            )));
        }
        let w = &self.spec.head_weights[k];
        Ok(match layer.id.as_str() {
            CONV_LAYER => LogitGradient {
                logit: self.head(&self.pool_maps(&activation.values), k),
                gradient: self.unpool(w),
            },
            _ => LogitGradient {
                logit: self.head(&activation.values, k),
                gradient: w.clone(),
            },
        })
    }
}
