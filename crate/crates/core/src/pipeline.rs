//! End-to-end runs: load and preprocess the dataset, resolve layers, and
//! dispatch to the configured extraction method.

use std::cmp::Ordering;
use std::path::Path;

use log::info;

use crate::backend::ModelBackend;
use crate::config::{Method, RunConfig};
use crate::dataset::load_dataset;
use crate::error::{Error, Result, StageExt};
use crate::method::{ExtractionInput, MethodRegistry, StageTiming, TestedConcept};

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub config: RunConfig,
    /// Sorted by descending mean score; untestable concepts last.
    pub concepts: Vec<TestedConcept>,
    pub timing: Vec<StageTiming>,
    pub seed: u64,
    pub method: Method,
    pub class_name: String,
    pub candidates: usize,
}

impl RunResult {
    pub fn top_score(&self) -> Option<f64> {
        self.concepts.iter().filter_map(|c| c.tcav.mean_score).fold(None, |m, s| Some(m.map_or(s, |m: f64| m.max(s))))
    }
}

pub fn run(config: &RunConfig, dataset_root: &Path, backend: &dyn ModelBackend) -> Result<RunResult> {
    run_with(config, dataset_root, backend, &MethodRegistry::builtin())
}

pub fn run_with(
    config: &RunConfig,
    dataset_root: &Path,
    backend: &dyn ModelBackend,
    methods: &MethodRegistry,
) -> Result<RunResult> {
    config.validate()?;
    let mut config = config.clone();
    config.dataset = Some(dataset_root.to_path_buf());

    let desc = backend.descriptor();
    desc.check_class(config.class_index)?;
    let layer_activ = config
        .layer_activ
        .clone()
        .unwrap_or_else(|| desc.default_activation_layer().to_string());
    desc.layer(&layer_activ)?;
    let layer_gradcam = match &config.layer_gradcam {
        Some(l) => {
            if desc.layer(l)?.spatial.is_none() {
                return Err(Error::NotSpatial(l.clone()));
            }
            Some(l.clone())
        }
        None => desc.default_gradcam_layer().map(str::to_string),
    };
    let method = methods.get(config.method.key())?;

    let raw = load_dataset(dataset_root).stage("load")?;
    if config.class_index >= raw.class_names().len() {
        return Err(Error::invalid(
            "class_index",
            format!("{} exceeds the {} classes in the dataset", config.class_index, raw.class_names().len()),
        ));
    }
    let class_name = raw.class_names()[config.class_index].clone();
    let dataset = raw.preprocessed(desc.input_side).stage("load")?;
    info!(
        "{} on class `{class_name}` ({} images, backend {})",
        config.method,
        dataset.len(),
        backend.name()
    );

    let input = ExtractionInput {
        dataset: &dataset,
        backend,
        config: &config,
        layer_gradcam: layer_gradcam.as_deref(),
        layer_activ: &layer_activ,
    };
    let mut extraction = method.extract(&input)?;
    extraction.concepts.sort_by(compare_concepts);
    Ok(RunResult {
        seed: config.seed,
        method: config.method,
        config,
        concepts: extraction.concepts,
        timing: extraction.timing,
        class_name,
        candidates: extraction.candidates,
    })
}

fn compare_concepts(a: &TestedConcept, b: &TestedConcept) -> Ordering {
    match (a.tcav.mean_score, b.tcav.mean_score) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
    .then(a.concept.concept_id.cmp(&b.concept.concept_id))
}
