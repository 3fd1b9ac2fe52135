//! Run configuration: a flat JSON object whose keys mirror [`RunConfig`]'s
//! fields. Unknown and duplicate keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clustering::OpticsParams;
use crate::error::{Error, Result};
use crate::tcav::TcavParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "SPACE", alias = "space")]
    Space,
    #[serde(rename = "ACE", alias = "ace")]
    Ace,
}

impl Method {
    /// Registry key of the extraction method.
    pub fn key(self) -> &'static str {
        match self {
            Method::Space => "space",
            Method::Ace => "ace",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Space => "SPACE",
            Method::Ace => "ACE",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "space" => Ok(Method::Space),
            "ace" => Ok(Method::Ace),
            _ => Err(Error::invalid("method", format!("`{s}` is neither `space` nor `ace`"))),
        }
    }
}

fn default_n_p() -> f64 {
    10.0
}
fn default_n_pca() -> usize {
    30
}
fn default_repetitions() -> usize {
    20
}
fn default_n_random() -> usize {
    20
}
fn default_alpha() -> f64 {
    0.05
}
fn default_min_size() -> usize {
    crate::clustering::DEFAULT_MIN_SIZE
}
fn default_min_samples() -> usize {
    OpticsParams::default().min_samples
}
fn default_xi() -> f64 {
    OpticsParams::default().xi
}
fn default_method() -> Method {
    Method::Space
}
fn default_n_slic() -> Vec<usize> {
    vec![15, 50, 80]
}
fn default_compactness() -> f64 {
    20.0
}
fn default_sigma() -> f64 {
    1.0
}
fn default_n_k() -> usize {
    25
}
fn default_pad() -> f64 {
    128.0
}
fn default_backend() -> String {
    "analytic-blob".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    pub class_index: usize,
    pub n_s: usize,
    #[serde(default = "default_n_p")]
    pub n_p: f64,
    #[serde(default = "default_n_pca")]
    pub n_pca: usize,
    /// Defaults to the backend's last spatial layer.
    #[serde(default)]
    pub layer_gradcam: Option<String>,
    /// Defaults to the backend's last layer.
    #[serde(default)]
    pub layer_activ: Option<String>,
    #[serde(default = "default_repetitions")]
    pub tcav_repetitions: usize,
    #[serde(default = "default_n_random")]
    pub n_random_concepts: usize,
    /// Members per random concept; defaults to the median extracted concept
    /// size, at least 10.
    #[serde(default)]
    pub random_set_size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_min_size")]
    pub min_size: usize,
    #[serde(default = "default_min_samples")]
    pub optics_min_samples: usize,
    #[serde(default = "default_xi")]
    pub optics_xi: f64,
    /// Unbounded when absent.
    #[serde(default)]
    pub optics_max_eps: Option<f64>,
    #[serde(default = "default_n_slic")]
    pub n_slic: Vec<usize>,
    #[serde(default = "default_compactness")]
    pub compactness: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_n_k")]
    pub n_k: usize,
    /// Padding grey level on the 0..=255 scale.
    #[serde(default = "default_pad")]
    pub pad_value: f64,
    #[serde(default = "default_backend")]
    pub backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spool_dir: Option<PathBuf>,
}

impl RunConfig {
    /// A configuration with every optional field at its default.
    pub fn new(class_index: usize, n_s: usize) -> Self {
        serde_json::from_value(serde_json::json!({ "class_index": class_index, "n_s": n_s }))
            .expect("required fields alone form a valid config")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, reason: &str| Err(Error::invalid(what, reason));
        if self.n_s < 2 {
            return bad("n_s", "must be at least 2");
        }
        if !(self.n_p > 0.0 && self.n_p <= 100.0) {
            return bad("n_p", "must lie in (0, 100]");
        }
        if self.n_pca < 1 {
            return bad("n_pca", "must be at least 1");
        }
        if self.tcav_repetitions < 2 {
            return bad("tcav_repetitions", "must be at least 2");
        }
        if self.n_random_concepts < 2 {
            return bad("n_random_concepts", "must be at least 2");
        }
        if self.random_set_size.is_some_and(|s| s < 3) {
            return bad("random_set_size", "must be at least 3");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha", "must lie in (0, 1)");
        }
        if self.min_size < 2 {
            return bad("min_size", "must be at least 2");
        }
        self.optics().validate()?;
        if self.n_slic.is_empty() || self.n_slic.contains(&0) {
            return bad("n_slic", "must be a non-empty list of positive segment counts");
        }
        if !(self.compactness > 0.0 && self.compactness.is_finite()) {
            return bad("compactness", "must be positive");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma", "must be non-negative");
        }
        if self.n_k < 1 {
            return bad("n_k", "must be at least 1");
        }
        if !(0.0..=255.0).contains(&self.pad_value) {
            return bad("pad_value", "must lie in [0, 255]");
        }
        Ok(())
    }

    pub fn optics(&self) -> OpticsParams {
        OpticsParams {
            min_samples: self.optics_min_samples,
            xi: self.optics_xi,
            max_eps: self.optics_max_eps.unwrap_or(f64::INFINITY),
            min_cluster_size: None,
        }
    }

    pub fn tcav(&self) -> TcavParams {
        TcavParams {
            repetitions: self.tcav_repetitions,
            alpha: self.alpha,
            min_size: self.min_size,
        }
    }

    /// Padding value on the `[0, 1]` image scale.
    pub fn pad_unit(&self) -> f32 {
        (self.pad_value / 255.0) as f32
    }
}

pub fn parse_config_str(text: &str, origin: &Path) -> Result<RunConfig> {
    let config: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config {
        path: origin.to_path_buf(),
        reason: e.to_string(),
    })?;
    config.validate().map_err(|e| Error::Config {
        path: origin.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(config)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    parse_config_str(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        parse_config_str(text, Path::new("test.json"))
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let c = parse(r#"{"dataset": "data", "class_index": 1, "n_s": 8}"#).unwrap();
        assert_eq!(c.n_p, 10.0);
        assert_eq!(c.n_pca, 30);
        assert_eq!(c.tcav_repetitions, 20);
        assert_eq!(c.alpha, 0.05);
        assert_eq!(c.sigma, 1.0);
        assert_eq!(c.compactness, 20.0);
        assert_eq!(c.pad_value, 128.0);
        assert_eq!(c.n_k, 25);
        assert_eq!(c.n_slic, vec![15, 50, 80]);
        assert_eq!(c.method, Method::Space);
        assert_eq!(c, RunConfig { dataset: Some("data".into()), ..RunConfig::new(1, 8) });
    }

    #[test]
    fn invalid_values_name_the_constraint() {
        let err = parse(r#"{"class_index": 1, "n_s": 8, "n_p": 0}"#).unwrap_err();
        assert!(err.to_string().contains("n_p"), "{err}");
        assert!(err.is_validation());
        assert!(parse(r#"{"class_index": 1, "n_s": 8, "n_p": 100}"#).is_ok());
        assert!(parse(r#"{"class_index": 1, "n_s": 1}"#).is_err());
    }

    #[test]
    fn unknown_and_duplicate_keys() {
        let err = parse(r#"{"class_index": 1, "n_s": 8, "n_patches": 3}"#).unwrap_err();
        assert!(err.to_string().contains("n_patches"), "{err}");
        let err = parse(r#"{"class_index": 1, "n_s": 8, "n_s": 4}"#).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn method_spellings() {
        let c = parse(r#"{"class_index": 0, "n_s": 3, "method": "ACE"}"#).unwrap();
        assert_eq!(c.method, Method::Ace);
        assert_eq!("Space".parse::<Method>().unwrap(), Method::Space);
        assert!("kmeans".parse::<Method>().is_err());
    }
}
