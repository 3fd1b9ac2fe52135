//! Concept extraction methods behind a common trait, selected by name.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ace::{ace_candidates, kmeans, whole_image_random_concepts};
use crate::backend::{ActivationVector, ModelBackend};
use crate::clustering::{assemble_concepts, encode, optics_cluster, pca_fit_transform, Concept};
use crate::compose::{build_random_concepts, tile, ConceptImage, RandomConceptSet};
use crate::config::RunConfig;
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result, StageExt};
use crate::image::Image;
use crate::patch::extract_patches;
use crate::rng::{self, task};
use crate::tcav::{TcavContext, TcavResult};

/// Everything an extractor needs. `dataset` is already preprocessed to the
/// backend's input side.
pub struct ExtractionInput<'a> {
    pub dataset: &'a LabeledDataset,
    pub backend: &'a dyn ModelBackend,
    pub config: &'a RunConfig,
    pub layer_gradcam: Option<&'a str>,
    pub layer_activ: &'a str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestedConcept {
    pub concept: Concept,
    pub tcav: TcavResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub concepts: Vec<TestedConcept>,
    /// Number of concept-images that entered clustering.
    pub candidates: usize,
    pub timing: Vec<StageTiming>,
}

pub trait ConceptExtractor: Send + Sync {
    fn name(&self) -> &'static str;

    fn extract(&self, input: &ExtractionInput<'_>) -> Result<Extraction>;
}

pub struct MethodRegistry {
    methods: BTreeMap<&'static str, Box<dyn ConceptExtractor>>,
}

impl MethodRegistry {
    pub fn empty() -> Self {
        MethodRegistry { methods: BTreeMap::new() }
    }

    /// `space` and `ace`.
    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register(Box::new(Space));
        reg.register(Box::new(Ace));
        reg
    }

    pub fn register(&mut self, method: Box<dyn ConceptExtractor>) {
        self.methods.insert(method.name(), method);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.methods.keys().copied()
    }

    pub fn get(&self, name: &str) -> Result<&dyn ConceptExtractor> {
        self.methods.get(name).map(|m| m.as_ref()).ok_or_else(|| {
            let known: Vec<_> = self.names().collect();
            Error::invalid("method", format!("unknown method `{name}` (known: {})", known.join(", ")))
        })
    }
}

impl Default for MethodRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

struct Timer {
    timing: Vec<StageTiming>,
    last: Instant,
}

impl Timer {
    fn new() -> Self {
        Timer { timing: Vec::new(), last: Instant::now() }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.timing.push(StageTiming {
            stage: stage.to_string(),
            seconds: (now - self.last).as_secs_f64(),
        });
        self.last = now;
    }
}

/// Scale-preserving extraction: saliency-ranked patches, tiled to the input
/// size, clustered with OPTICS and tested against tiled random crops.
pub struct Space;

impl ConceptExtractor for Space {
    fn name(&self) -> &'static str {
        "space"
    }

    fn extract(&self, input: &ExtractionInput<'_>) -> Result<Extraction> {
        let cfg = input.config;
        let k = cfg.class_index;
        let side = input.backend.descriptor().input_side;
        let mut timer = Timer::new();

        let gradcam_layer = input
            .layer_gradcam
            .ok_or_else(|| Error::invalid("layer_gradcam", "backend exposes no spatial layer"))
            .stage("patch extraction")?;
        let class_images = input.dataset.class_subset(k).stage("patch extraction")?;
        let patches =
            extract_patches(&class_images, k, input.backend, cfg.n_s, cfg.n_p, gradcam_layer).stage("patch extraction")?;
        timer.lap("patch extraction");

        let tiles = patches
            .iter()
            .map(|p| tile(p, cfg.n_s, side))
            .collect::<Result<Vec<_>>>()
            .stage("composition")?;
        timer.lap("composition");

        let activations = encode(&tiles, input.backend, input.layer_activ).stage("encoding")?;
        timer.lap("encoding");

        let reduced = reduce(&activations, cfg.n_pca).stage("clustering")?;
        let labels = optics_cluster(&reduced, &cfg.optics()).stage("clustering")?;
        let concepts = assemble_concepts(&labels, &tiles, &activations, cfg.min_size).stage("clustering")?;
        timer.lap("clustering");

        let others = input.dataset.complement(k).stage("random concepts")?;
        let set_size = random_set_size(cfg, &concepts);
        let randoms =
            build_random_concepts(&others, cfg.n_s, cfg.n_random_concepts, set_size, side, cfg.seed).stage("random concepts")?;
        timer.lap("random concepts");

        let tested = test_all(input, &class_images, &randoms, concepts).stage("tcav")?;
        timer.lap("tcav");
        Ok(Extraction {
            concepts: tested,
            candidates: tiles.len(),
            timing: timer.timing,
        })
    }
}

/// The superpixel baseline: multi-resolution SLIC segments, padded and
/// resized, clustered with k-means and tested against whole images.
pub struct Ace;

impl ConceptExtractor for Ace {
    fn name(&self) -> &'static str {
        "ace"
    }

    fn extract(&self, input: &ExtractionInput<'_>) -> Result<Extraction> {
        let cfg = input.config;
        let k = cfg.class_index;
        let side = input.backend.descriptor().input_side;
        let mut timer = Timer::new();

        let class_images = input.dataset.class_subset(k).stage("segmentation")?;
        if class_images.is_empty() {
            return Err(Error::EmptyClass(format!("class {k} has no images"))).stage("segmentation");
        }
        let mut candidates: Vec<ConceptImage> = Vec::new();
        for img in &class_images {
            candidates.extend(
                ace_candidates(img, &cfg.n_slic, cfg.compactness, cfg.sigma, cfg.pad_unit(), side).stage("segmentation")?,
            );
        }
        timer.lap("segmentation");

        let activations = encode(&candidates, input.backend, input.layer_activ).stage("encoding")?;
        timer.lap("encoding");

        let reduced = reduce(&activations, cfg.n_pca).stage("clustering")?;
        let fit = kmeans(&reduced, cfg.n_k, &mut rng::substream(cfg.seed, task::KMEANS)).stage("clustering")?;
        let labels: Vec<i64> = fit.labels.iter().map(|&l| l as i64).collect();
        let concepts = assemble_concepts(&labels, &candidates, &activations, cfg.min_size).stage("clustering")?;
        timer.lap("clustering");

        let others = input.dataset.complement(k).stage("random concepts")?;
        let set_size = random_set_size(cfg, &concepts);
        let randoms =
            whole_image_random_concepts(&others, cfg.n_random_concepts, set_size, cfg.seed).stage("random concepts")?;
        timer.lap("random concepts");

        let tested = test_all(input, &class_images, &randoms, concepts).stage("tcav")?;
        timer.lap("tcav");
        Ok(Extraction {
            concepts: tested,
            candidates: candidates.len(),
            timing: timer.timing,
        })
    }
}

fn reduce(activations: &[ActivationVector], n_pca: usize) -> Result<Vec<Vec<f64>>> {
    let vectors: Vec<Vec<f64>> = activations.iter().map(|a| a.values.clone()).collect();
    Ok(pca_fit_transform(&vectors, n_pca)?.1)
}

/// Configured size, or the median concept size with a floor of 10.
pub fn random_set_size(cfg: &RunConfig, concepts: &[Concept]) -> usize {
    if let Some(size) = cfg.random_set_size {
        return size;
    }
    let mut sizes: Vec<usize> = concepts.iter().map(Concept::len).collect();
    sizes.sort_unstable();
    let median = match sizes.len() {
        0 => 0,
        n if n % 2 == 1 => sizes[n / 2],
        n => (sizes[n / 2 - 1] + sizes[n / 2]) / 2,
    };
    median.max(10)
}

fn test_all(
    input: &ExtractionInput<'_>,
    class_images: &[&Image],
    randoms: &[RandomConceptSet],
    concepts: Vec<Concept>,
) -> Result<Vec<TestedConcept>> {
    let cfg = input.config;
    if concepts.is_empty() {
        return Ok(Vec::new());
    }
    let ctx = TcavContext::new(input.backend, input.layer_activ, cfg.class_index, class_images, randoms)?;
    let params = cfg.tcav();
    concepts
        .into_iter()
        .map(|mut concept| {
            let mut rng = rng::substream(cfg.seed, task::TCAV + concept.concept_id as u64);
            let tcav = ctx.test(&concept, &params, &mut rng)?;
            concept.score = tcav.mean_score;
            concept.significant = (!tcav.untestable).then_some(tcav.significant);
            Ok(TestedConcept { concept, tcav })
        })
        .collect()
}
