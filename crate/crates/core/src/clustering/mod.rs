//! Encoding of concept-images, dimensionality reduction and density
//! clustering into concepts.

mod optics;
mod pca;

pub use optics::{manhattan, optics_cluster, optics_order, select_intervals, xi_intervals, OpticsParams, Reachability, NOISE};
pub use pca::{pca_fit_transform, PcaModel};

use std::collections::BTreeMap;

use crate::backend::{ActivationVector, ModelBackend};
use crate::compose::ConceptImage;
use crate::error::{Error, Result};

pub const DEFAULT_MIN_SIZE: usize = 4;

/// A cluster of concept-images with its examples and their encodings.
#[derive(Debug, Clone, PartialEq)]
pub struct Concept {
    pub concept_id: usize,
    pub examples: Vec<ConceptImage>,
    pub member_activations: Vec<ActivationVector>,
    pub score: Option<f64>,
    pub significant: Option<bool>,
}

impl Concept {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Encodes each concept-image at `layer`, preserving order.
pub fn encode(images: &[ConceptImage], backend: &dyn ModelBackend, layer: &str) -> Result<Vec<ActivationVector>> {
    if images.is_empty() {
        return Err(Error::invalid("concept images", "nothing to encode"));
    }
    images.iter().map(|img| backend.activations(&img.pixels, layer)).collect()
}

/// Groups concept-images by cluster label. Noise and clusters smaller than
/// `min_size` are dropped; ids follow descending size, then first occurrence.
pub fn assemble_concepts(
    labels: &[i64],
    images: &[ConceptImage],
    activations: &[ActivationVector],
    min_size: usize,
) -> Result<Vec<Concept>> {
    if labels.len() != images.len() || images.len() != activations.len() {
        return Err(Error::Shape(format!(
            "{} labels, {} images, {} activations",
            labels.len(),
            images.len(),
            activations.len()
        )));
    }
    let mut groups: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        if l != NOISE {
            groups.entry(l).or_default().push(i);
        }
    }
    let mut members: Vec<Vec<usize>> = groups.into_values().filter(|m| m.len() >= min_size.max(1)).collect();
    members.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    Ok(members
        .into_iter()
        .enumerate()
        .map(|(concept_id, idx)| Concept {
            concept_id,
            examples: idx.iter().map(|&i| images[i].clone()).collect(),
            member_activations: idx.iter().map(|&i| activations[i].clone()).collect(),
            score: None,
            significant: None,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compose::Provenance;
    use crate::image::Image;

    fn items(n: usize) -> (Vec<ConceptImage>, Vec<ActivationVector>) {
        let imgs = (0..n)
            .map(|i| ConceptImage {
                pixels: Image::filled(2, 2, [0.0; 3], format!("img{i}")),
                provenance: Provenance::Image { source_id: format!("img{i}") },
                is_random: false,
            })
            .collect();
        let acts = (0..n)
            .map(|i| ActivationVector {
                values: vec![i as f64],
                layer_id: "pool".into(),
                source: format!("img{i}"),
            })
            .collect();
        (imgs, acts)
    }

    #[test]
    fn threshold_and_noise() {
        let (imgs, acts) = items(6);
        let concepts = assemble_concepts(&[0, 0, 0, 0, 1, -1], &imgs, &acts, 4).unwrap();
        assert_eq!(concepts.len(), 1);
        assert_eq!(concepts[0].len(), 4);
        assert!(assemble_concepts(&[-1; 6], &imgs, &acts, 4).unwrap().is_empty());
    }

    #[test]
    fn ids_follow_size_then_first_occurrence() {
        let (imgs, acts) = items(16);
        let labels = [3, 3, 3, 3, 3, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1];
        let concepts = assemble_concepts(&labels, &imgs, &acts, 4).unwrap();
        let sizes: Vec<usize> = concepts.iter().map(Concept::len).collect();
        assert_eq!(sizes, vec![7, 5, 4]);
        assert_eq!(concepts[0].member_activations[0].values, vec![5.0]);
        assert_eq!(concepts[1].examples[0].provenance.source_id(), "img0");
        for c in &concepts {
            for (e, a) in c.examples.iter().zip(&c.member_activations) {
                assert_eq!(e.provenance.source_id(), a.source);
            }
        }
    }

    #[test]
    fn misaligned_inputs_are_rejected() {
        let (imgs, acts) = items(3);
        assert!(assemble_concepts(&[0, 0], &imgs, &acts, 1).is_err());
    }
}
