//! Concept-image composition by tiling, and random concept sets.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, CHANNELS};
use crate::patch::Patch;
use crate::rng::{self, Rng};

/// Where a concept-image's content came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    /// A sliced patch at grid position `origin`.
    Patch {
        source_id: String,
        origin: (usize, usize),
        top_left: (usize, usize),
        side: usize,
    },
    /// A randomly placed square crop.
    Crop {
        source_id: String,
        top_left: (usize, usize),
        side: usize,
    },
    /// A superpixel with bounding box rows `r0..r1`, cols `c0..c1`.
    Superpixel {
        source_id: String,
        bbox: (usize, usize, usize, usize),
    },
    /// A complete dataset image.
    Image { source_id: String },
}

impl Provenance {
    pub fn source_id(&self) -> &str {
        match self {
            Provenance::Patch { source_id, .. }
            | Provenance::Crop { source_id, .. }
            | Provenance::Superpixel { source_id, .. }
            | Provenance::Image { source_id } => source_id,
        }
    }

    /// Source-image region as `(top, left, height, width)`, when bounded.
    pub fn region(&self) -> Option<(usize, usize, usize, usize)> {
        match *self {
            Provenance::Patch { top_left, side, .. } | Provenance::Crop { top_left, side, .. } => {
                Some((top_left.0, top_left.1, side, side))
            }
            Provenance::Superpixel { bbox: (r0, c0, r1, c1), .. } => Some((r0, c0, r1 - r0, c1 - c0)),
            Provenance::Image { .. } => None,
        }
    }
}

/// Model-input-sized image composed from a single patch or region.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptImage {
    pub pixels: Image,
    pub provenance: Provenance,
    pub is_random: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomConceptSet {
    pub set_id: usize,
    pub members: Vec<ConceptImage>,
}

/// Repeats `patch` on an `n_s x n_s` grid, center-cropping to `input_side`
/// when the canvas overshoots. Pixels are copied, never interpolated.
pub fn tile(patch: &Patch, n_s: usize, input_side: usize) -> Result<ConceptImage> {
    let mut img = tile_pixels(&patch.pixels, n_s, input_side)?;
    img = img.with_source_id(patch.source_id.clone());
    Ok(ConceptImage {
        pixels: img,
        provenance: Provenance::Patch {
            source_id: patch.source_id.clone(),
            origin: patch.origin,
            top_left: patch.top_left,
            side: patch.side(),
        },
        is_random: false,
    })
}

fn tile_pixels(patch: &Image, n_s: usize, input_side: usize) -> Result<Image> {
    let side = patch.height();
    if !patch.is_square() {
        return Err(Error::Shape(format!("patch is {}x{}, not square", side, patch.width())));
    }
    let canvas = side * n_s;
    if canvas < input_side {
        return Err(Error::invalid(
            "tiling",
            format!("{n_s} tiles of side {side} cover {canvas} < input side {input_side}"),
        ));
    }
    let offset = (canvas - input_side) / 2;
    let src = patch.pixels();
    let mut pixels = Vec::with_capacity(input_side * input_side * CHANNELS);
    for r in 0..input_side {
        let pr = (r + offset) % side;
        for c in 0..input_side {
            let i = (pr * side + (c + offset) % side) * CHANNELS;
            pixels.extend_from_slice(&src[i..i + CHANNELS]);
        }
    }
    Image::new(input_side, input_side, pixels, patch.source_id())
}

/// Uniformly placed `patch_side` square crop.
pub fn random_crop(image: &Image, patch_side: usize, rng: &mut Rng) -> Result<Patch> {
    if patch_side == 0 || patch_side > image.height() || patch_side > image.width() {
        return Err(Error::invalid(
            "patch side",
            format!("{patch_side} does not fit a {}x{} image", image.height(), image.width()),
        ));
    }
    let top = rng.random_range(0..=image.height() - patch_side);
    let left = rng.random_range(0..=image.width() - patch_side);
    Ok(Patch {
        pixels: image.crop(top, left, patch_side, patch_side)?,
        origin: (0, 0),
        top_left: (top, left),
        source_id: image.source_id().to_string(),
        score: 0.0,
    })
}

/// `n_sets` random concepts of `set_size` tiled crops each. Members sample
/// images from `others` with replacement; set `i` draws from its own stream
/// derived from `(seed, i)`.
pub fn build_random_concepts(
    others: &[&Image],
    n_s: usize,
    n_sets: usize,
    set_size: usize,
    input_side: usize,
    seed: u64,
) -> Result<Vec<RandomConceptSet>> {
    if others.is_empty() {
        return Err(Error::NoOutOfClassImages);
    }
    if set_size < 3 {
        return Err(Error::invalid("random concept size", format!("{set_size} < 3")));
    }
    if n_s == 0 {
        return Err(Error::invalid("n_s", "must be positive"));
    }
    let patch_side = input_side / n_s;
    (0..n_sets)
        .map(|set_id| {
            let mut rng = rng::substream(seed, rng::task::RANDOM_CONCEPTS + set_id as u64);
            let members = (0..set_size)
                .map(|_| {
                    let image = others[rng.random_range(0..others.len())];
                    let crop = random_crop(image, patch_side, &mut rng)?;
                    let mut ci = tile(&crop, n_s, input_side)?;
                    ci.provenance = Provenance::Crop {
                        source_id: crop.source_id,
                        top_left: crop.top_left,
                        side: patch_side,
                    };
                    ci.is_random = true;
                    Ok(ci)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(RandomConceptSet { set_id, members })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::patch::slice;

    fn patch_of(side: usize) -> Patch {
        let img = Image::from_fn(side, side, "src", |r, c| [r as f32 / side as f32, c as f32 / side as f32, 0.5]);
        Patch { pixels: img, origin: (1, 2), top_left: (3, 4), source_id: "src".into(), score: 0.4 }
    }

    #[test]
    fn exact_tiling() {
        let p = patch_of(2);
        let ci = tile(&p, 3, 6).unwrap();
        assert_eq!(ci.pixels.height(), 6);
        for r in 0..6 {
            for c in 0..6 {
                assert_eq!(ci.pixels.get(r, c), p.pixels.get(r % 2, c % 2));
            }
        }
        assert!(!ci.is_random);
    }

    #[test]
    fn single_tile_is_identity() {
        let p = patch_of(5);
        assert_eq!(tile(&p, 1, 5).unwrap().pixels.pixels(), p.pixels.pixels());
    }

    #[test]
    fn undersized_canvas_is_an_error() {
        assert!(tile(&patch_of(2), 3, 7).is_err());
    }

    #[test]
    fn overshooting_canvas_is_center_cropped() {
        let p = patch_of(3);
        let ci = tile(&p, 3, 7).unwrap();
        // canvas 9, offset 1
        assert_eq!(ci.pixels.get(0, 0), p.pixels.get(1, 1));
    }

    #[test]
    fn slice_of_tile_round_trips() {
        let p = patch_of(4);
        let ci = tile(&p, 5, 20).unwrap();
        for (q, _) in slice(&ci.pixels, 5).unwrap() {
            assert_eq!(q.pixels.pixels(), p.pixels.pixels());
        }
    }

    #[test]
    fn full_size_crop_has_one_position() {
        let img = Image::from_fn(6, 6, "x", |r, c| [(r + c) as f32 / 12.0; 3]);
        let mut rng = Rng::seed_from_u64(3);
        let p = random_crop(&img, 6, &mut rng).unwrap();
        assert_eq!(p.pixels, img);
        assert!(random_crop(&img, 7, &mut rng).is_err());
    }

    #[test]
    fn crops_are_seed_deterministic() {
        let img = Image::from_fn(16, 16, "x", |r, c| [(r * 16 + c) as f32 / 256.0; 3]);
        let a = random_crop(&img, 5, &mut Rng::seed_from_u64(11)).unwrap();
        let b = random_crop(&img, 5, &mut Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn crop_corners_are_uniform() {
        // Chi-square goodness of fit over the 49 valid corners of 2x2 crops
        // in an 8x8 image, plus the per-cell frequency bound.
        let img = Image::filled(8, 8, [0.5; 3], "x");
        let mut rng = Rng::seed_from_u64(2024);
        let mut counts = [0usize; 49];
        let draws = 10_000;
        for _ in 0..draws {
            let p = random_crop(&img, 2, &mut rng).unwrap();
            counts[p.top_left.0 * 7 + p.top_left.1] += 1;
        }
        let expected = draws as f64 / 49.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99.9th percentile of chi-square with 48 degrees of freedom.
        assert!(chi2 < 84.04, "chi2 = {chi2}");
        for &c in &counts {
            assert!((c as f64 / draws as f64 - 1.0 / 49.0).abs() <= 0.01);
        }
    }

    #[test]
    fn random_sets_shape_and_provenance() {
        let others: Vec<Image> = (0..4)
            .map(|i| Image::filled(12, 12, [i as f32 / 4.0; 3], format!("neg/{i}.png")))
            .collect();
        let refs: Vec<&Image> = others.iter().collect();
        let sets = build_random_concepts(&refs, 3, 2, 5, 12, 7).unwrap();
        assert_eq!(sets.len(), 2);
        for set in &sets {
            assert_eq!(set.members.len(), 5);
            for m in &set.members {
                assert!(m.is_random);
                assert!(others.iter().any(|o| o.source_id() == m.provenance.source_id()));
                assert_eq!(m.pixels.height(), 12);
            }
        }
        assert_eq!(sets, build_random_concepts(&refs, 3, 2, 5, 12, 7).unwrap());
        assert!(matches!(build_random_concepts(&[], 3, 2, 5, 12, 7), Err(Error::NoOutOfClassImages)));
        assert!(build_random_concepts(&refs, 3, 2, 2, 12, 7).is_err());
    }

    #[test]
    fn sets_use_independent_streams() {
        // Set i's draws do not depend on how many sets precede it, and the
        // draw sequences of different sets are uncorrelated.
        let others: Vec<Image> = (0..50)
            .map(|i| Image::filled(12, 12, [0.5; 3], format!("neg/{i:02}.png")))
            .collect();
        let refs: Vec<&Image> = others.iter().collect();
        let many = build_random_concepts(&refs, 3, 4, 200, 12, 99).unwrap();
        let few = build_random_concepts(&refs, 3, 1, 200, 12, 99).unwrap();
        assert_eq!(many[0], few[0]);
        let idx = |s: &RandomConceptSet| -> Vec<f64> {
            s.members
                .iter()
                .map(|m| m.provenance.source_id()[4..6].parse::<f64>().unwrap())
                .collect()
        };
        let (a, b) = (idx(&many[0]), idx(&many[1]));
        assert_ne!(a, b);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (ma, mb) = (mean(&a), mean(&b));
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        let corr = cov / (va * vb).sqrt();
        // |r| above 0.25 with n = 200 would be a > 3.5 sigma event.
        assert!(corr.abs() < 0.25, "corr = {corr}");
    }
}
