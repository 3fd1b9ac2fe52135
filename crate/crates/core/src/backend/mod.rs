//! Abstraction over the analyzed classifier.
//!
//! A backend evaluates the model up to a named layer, returns Grad-CAM inputs
//! (feature maps and the class-logit gradient with respect to them), and
//! evaluates the head `h_{l,k}` from a flattened activation together with its
//! gradient. Backends are looked up by name in a [`BackendRegistry`].

mod analytic;
pub mod spool;
pub mod tensor;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

pub use analytic::{AnalyticBackend, AnalyticSpec, ConvKernel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerInfo {
    pub id: String,
    /// Length of the flattened activation.
    pub len: usize,
    /// `[channels, height, width]` for convolutional layers.
    pub spatial: Option<[usize; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub input_side: usize,
    pub layers: Vec<LayerInfo>,
    pub classes: usize,
}

impl BackendDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("backend descriptor", "layer catalog is empty"));
        }
        if self.classes < 2 {
            return Err(Error::invalid("backend descriptor", "needs at least two classes"));
        }
        if self.input_side == 0 {
            return Err(Error::invalid("backend descriptor", "input side must be positive"));
        }
        for layer in &self.layers {
            if let Some([c, h, w]) = layer.spatial {
                if c * h * w != layer.len {
                    return Err(Error::invalid(
                        "backend descriptor",
                        format!("layer `{}` shape does not match its length", layer.id),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn layer(&self, id: &str) -> Result<&LayerInfo> {
        self.layers
            .iter()
            .find(|l| l.id == id)
            .ok_or_else(|| Error::UnknownLayer(id.to_string()))
    }

    /// Last spatial layer: the usual Grad-CAM target.
    pub fn default_gradcam_layer(&self) -> Option<&str> {
        self.layers
            .iter()
            .rev()
            .find(|l| l.spatial.is_some())
            .map(|l| l.id.as_str())
    }

    /// Last layer in the catalog: the dense layer feeding the logits.
    pub fn default_activation_layer(&self) -> &str {
        &self.layers.last().expect("validated non-empty").id
    }

    pub fn check_class(&self, k: usize) -> Result<()> {
        if k >= self.classes {
            return Err(Error::invalid(
                "class index",
                format!("{k} is out of range for a {}-class model", self.classes),
            ));
        }
        Ok(())
    }

    pub fn check_input(&self, image: &Image) -> Result<()> {
        if image.height() != self.input_side || image.width() != self.input_side {
            return Err(Error::Shape(format!(
                "{} is {}x{}, backend expects {s}x{s}",
                image.source_id(),
                image.height(),
                image.width(),
                s = self.input_side
            )));
        }
        Ok(())
    }
}

/// Flattened activation `f_l(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationVector {
    pub values: Vec<f64>,
    pub layer_id: String,
    pub source: String,
}

/// Feature maps at a convolutional layer and the gradient of one class logit
/// with respect to them, both `channels x height x width` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapBundle {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub maps: Vec<f64>,
    pub grads: Vec<f64>,
}

impl FeatureMapBundle {
    pub fn new(shape: [usize; 3], maps: Vec<f64>, grads: Vec<f64>) -> Result<Self> {
        let [channels, height, width] = shape;
        let n = channels * height * width;
        if n == 0 || maps.len() != n || grads.len() != n {
            return Err(Error::Shape(format!(
                "feature maps {} / grads {} for shape {channels}x{height}x{width}",
                maps.len(),
                grads.len()
            )));
        }
        if maps.iter().chain(&grads).any(|v| !v.is_finite()) {
            return Err(Error::Backend("non-finite feature maps or gradients".into()));
        }
        Ok(FeatureMapBundle {
            channels,
            height,
            width,
            maps,
            grads,
        })
    }
}

/// `h_{l,k}(a)` and `∇_a h_{l,k}(a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitGradient {
    pub logit: f64,
    pub gradient: Vec<f64>,
}

pub trait ModelBackend: Send + Sync {
    fn name(&self) -> &str;

    fn descriptor(&self) -> &BackendDescriptor;

    fn activations(&self, image: &Image, layer_id: &str) -> Result<ActivationVector>;

    fn feature_maps_and_gradients(
        &self,
        image: &Image,
        k: usize,
        layer_id: &str,
    ) -> Result<FeatureMapBundle>;

    fn logit_from_activation(&self, activation: &ActivationVector, k: usize)
        -> Result<LogitGradient>;
}

/// Options handed to backend factories.
#[derive(Debug, Clone, Default)]
pub struct BackendOptions {
    pub input_side: Option<usize>,
    pub spool_dir: Option<PathBuf>,
}

pub type BackendFactory = fn(&BackendOptions) -> Result<Box<dyn ModelBackend>>;

/// Name-keyed backend constructors.
pub struct BackendRegistry {
    factories: BTreeMap<&'static str, BackendFactory>,
}

impl BackendRegistry {
    pub fn empty() -> Self {
        BackendRegistry {
            factories: BTreeMap::new(),
        }
    }

    /// `analytic-blob` (synthetic reference model) and `spool` (out-of-process
    /// model reached through a spool directory).
    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register("analytic-blob", |opts| {
            let side = opts.input_side.unwrap_or(analytic::BLOB_INPUT_SIDE);
            Ok(Box::new(AnalyticBackend::blob_detector(side)?))
        });
        reg.register("spool", |opts| {
            let dir = opts
                .spool_dir
                .clone()
                .ok_or_else(|| Error::invalid("backend", "`spool` requires spool_dir"))?;
            Ok(Box::new(spool::SpoolBackend::connect(dir)?))
        });
        reg
    }

    pub fn register(&mut self, name: &'static str, factory: BackendFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn create(&self, name: &str, opts: &BackendOptions) -> Result<Box<dyn ModelBackend>> {
        let factory = self.factories.get(name).ok_or_else(|| {
            let known: Vec<_> = self.names().collect();
            Error::invalid("backend", format!("unknown backend `{name}` (known: {})", known.join(", ")))
        })?;
        factory(opts)
    }
}

impl Default for BackendRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}
