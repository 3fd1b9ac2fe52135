//! The ACE baseline: multi-resolution superpixels, padded and resized to the
//! model input, clustered with k-means and tested against whole-image random
//! concepts.

mod kmeans;
mod slic;

pub use kmeans::{kmeans, KMeansFit, KMEANS_MAX_ITER, KMEANS_RESTARTS, KMEANS_TOL};
pub use slic::{gaussian_blur, slic_labels, slic_segment, to_lab, Superpixel, SLIC_ITERATIONS};

use rand::Rng as _;

use crate::compose::{ConceptImage, Provenance, RandomConceptSet};
use crate::error::{Error, Result};
use crate::image::{Filter, Image, CHANNELS};
use crate::rng::{self, task};

/// Crops the superpixel's bounding box, fills non-member pixels with
/// `pad_value` (on the `[0, 1]` scale) and resizes bicubically to
/// `input_side x input_side`.
pub fn pad_and_resize(image: &Image, sp: &Superpixel, pad_value: f32, input_side: usize) -> Result<ConceptImage> {
    if sp.is_empty() {
        return Err(Error::invalid("superpixel", "has no pixels"));
    }
    let (r0, c0, r1, c1) = sp.bbox;
    if r1 > image.height() || c1 > image.width() || r0 >= r1 || c0 >= c1 {
        return Err(Error::invalid(
            "superpixel",
            format!("bounding box {:?} outside {}x{} image", sp.bbox, image.height(), image.width()),
        ));
    }
    let (h, w) = (r1 - r0, c1 - c0);
    let mut inside = vec![false; h * w];
    for &(r, c) in &sp.pixels {
        inside[(r - r0) * w + (c - c0)] = true;
    }
    let pad = pad_value.clamp(0.0, 1.0);
    let region = Image::from_fn(h, w, image.source_id(), |r, c| {
        if inside[r * w + c] {
            image.get(r + r0, c + c0)
        } else {
            [pad; CHANNELS]
        }
    });
    Ok(ConceptImage {
        pixels: region.resize(input_side, input_side, Filter::Bicubic),
        provenance: Provenance::Superpixel {
            source_id: image.source_id().to_string(),
            bbox: sp.bbox,
        },
        is_random: false,
    })
}

/// Superpixels of `image` at every resolution in `n_slic`, padded and
/// resized.
pub fn ace_candidates(
    image: &Image,
    n_slic: &[usize],
    compactness: f64,
    sigma: f64,
    pad_value: f32,
    input_side: usize,
) -> Result<Vec<ConceptImage>> {
    let mut out = Vec::new();
    for &n in n_slic {
        for sp in slic_segment(image, n, compactness, sigma)? {
            out.push(pad_and_resize(image, &sp, pad_value, input_side)?);
        }
    }
    Ok(out)
}

/// Random concepts made of complete out-of-class images, sampled with
/// replacement, one stream per set.
pub fn whole_image_random_concepts(
    others: &[&Image],
    n_sets: usize,
    set_size: usize,
    seed: u64,
) -> Result<Vec<RandomConceptSet>> {
    if others.is_empty() {
        return Err(Error::NoOutOfClassImages);
    }
    if set_size < 3 {
        return Err(Error::invalid("random set size", "must be at least 3"));
    }
    Ok((0..n_sets)
        .map(|set_id| {
            let mut rng = rng::substream(seed, task::ACE_RANDOM + set_id as u64);
            let members = (0..set_size)
                .map(|_| {
                    let img = others[rng.random_range(0..others.len())];
                    ConceptImage {
                        pixels: img.clone(),
                        provenance: Provenance::Image {
                            source_id: img.source_id().to_string(),
                        },
                        is_random: true,
                    }
                })
                .collect();
            RandomConceptSet { set_id, members }
        })
        .collect())
}
