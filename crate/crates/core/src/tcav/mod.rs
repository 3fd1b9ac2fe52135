//! Concept activation vectors and TCAV significance testing.

mod welch;

pub use welch::{welch_t_test, WelchTest};

use std::collections::HashMap;

use log::warn;
use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::backend::{ActivationVector, ModelBackend};
use crate::clustering::Concept;
use crate::compose::RandomConceptSet;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng;

pub const CAV_STEPS: usize = 1000;
pub const CAV_LEARNING_RATE: f64 = 0.01;

/// Unit normal of a linear boundary separating concept activations (positive
/// side) from counterexamples.
#[derive(Debug, Clone, PartialEq)]
pub struct Cav {
    pub direction: Vec<f64>,
    pub layer_id: String,
    pub training_accuracy: f64,
    /// Set when the classifier learned no direction and `direction` is a
    /// random unit vector.
    pub degenerate: bool,
}

/// Trains a logistic-regression CAV by full-batch gradient descent on the
/// mean log-loss, starting from zero weights.
pub fn train_cav(pos: &[ActivationVector], neg: &[ActivationVector], rng: &mut Rng) -> Result<Cav> {
    if pos.len() < 2 || neg.len() < 2 {
        return Err(Error::invalid(
            "CAV training sets",
            format!("need at least 2 examples per side, got {} and {}", pos.len(), neg.len()),
        ));
    }
    let d = pos[0].values.len();
    let layer_id = pos[0].layer_id.clone();
    if pos.iter().chain(neg).any(|a| a.values.len() != d || a.layer_id != layer_id) {
        return Err(Error::Shape("CAV training activations differ in layer or length".into()));
    }
    let samples = Samples::collect(pos, neg, d);
    let n = (pos.len() + neg.len()) as f64;

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut grad = vec![0.0; d];
    for _ in 0..CAV_STEPS {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for (x, y, count) in samples.iter() {
            let err = count * (sigmoid(b + dot(&w, x)) - y);
            grad_b += err;
            grad.iter_mut().zip(x).for_each(|(g, xi)| *g += err * xi);
        }
        w.iter_mut().zip(&grad).for_each(|(wi, g)| *wi -= CAV_LEARNING_RATE * g / n);
        b -= CAV_LEARNING_RATE * grad_b / n;
    }

    let correct: f64 = samples
        .iter()
        .filter(|&(x, y, _)| (b + dot(&w, x) > 0.0) == (y > 0.5))
        .map(|(_, _, count)| count)
        .sum();
    let training_accuracy = correct / n;

    let scale = samples.rows.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let norm = dot(&w, &w).sqrt();
    let (direction, degenerate) = if norm.is_finite() && norm > 1e-10 * (1.0 + scale) {
        (w.iter().map(|wi| wi / norm).collect(), false)
    } else {
        warn!("CAV training found no separating direction; using a random unit vector");
        (random_unit(d, rng), true)
    };
    Ok(Cav {
        direction,
        layer_id,
        training_accuracy,
        degenerate,
    })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Training rows with repeated examples merged into a multiplicity.
struct Samples {
    d: usize,
    rows: Vec<f64>,
    labels: Vec<f64>,
    counts: Vec<f64>,
}

impl Samples {
    fn collect(pos: &[ActivationVector], neg: &[ActivationVector], d: usize) -> Self {
        let mut seen: HashMap<(bool, Vec<u64>), usize> = HashMap::new();
        let mut out = Samples {
            d,
            rows: Vec::new(),
            labels: Vec::new(),
            counts: Vec::new(),
        };
        let tagged = pos.iter().map(|a| (true, a)).chain(neg.iter().map(|a| (false, a)));
        for (positive, a) in tagged {
            let key = (positive, a.values.iter().map(|v| v.to_bits()).collect());
            match seen.get(&key) {
                Some(&i) => out.counts[i] += 1.0,
                None => {
                    seen.insert(key, out.labels.len());
                    out.rows.extend_from_slice(&a.values);
                    out.labels.push(if positive { 1.0 } else { 0.0 });
                    out.counts.push(1.0);
                }
            }
        }
        out
    }

    fn iter(&self) -> impl Iterator<Item = (&[f64], f64, f64)> {
        self.rows
            .chunks_exact(self.d.max(1))
            .zip(&self.labels)
            .zip(&self.counts)
            .map(|((x, &y), &c)| (x, y, c))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn random_unit(d: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Directional derivative of logit `k` along the CAV at `activation`.
pub fn sensitivity(activation: &ActivationVector, k: usize, cav: &Cav, backend: &dyn ModelBackend) -> Result<f64> {
    let lg = backend.logit_from_activation(activation, k)?;
    directional(&lg.gradient, &cav.direction)
}

fn directional(gradient: &[f64], direction: &[f64]) -> Result<f64> {
    if gradient.len() != direction.len() {
        return Err(Error::Shape(format!(
            "gradient has {} entries, CAV has {}",
            gradient.len(),
            direction.len()
        )));
    }
    Ok(dot(gradient, direction))
}

/// Fraction of sensitivities that are strictly positive.
pub fn tcav_score(sensitivities: &[f64]) -> Result<f64> {
    if sensitivities.is_empty() {
        return Err(Error::invalid("sensitivities", "cannot score an empty list"));
    }
    Ok(sensitivities.iter().filter(|&&s| s > 0.0).count() as f64 / sensitivities.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TcavParams {
    pub repetitions: usize,
    pub alpha: f64,
    /// Concepts with fewer examples are reported untestable.
    pub min_size: usize,
}

impl Default for TcavParams {
    fn default() -> Self {
        TcavParams {
            repetitions: 20,
            alpha: 0.05,
            min_size: crate::clustering::DEFAULT_MIN_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcavResult {
    pub concept_id: usize,
    pub per_run_scores: Vec<f64>,
    pub random_baseline_scores: Vec<f64>,
    pub mean_score: Option<f64>,
    pub p_value: Option<f64>,
    pub significant: bool,
    pub untestable: bool,
    pub degenerate_cavs: usize,
}

/// Class-image gradients and random-set encodings shared by every concept
/// tested against the same class and random pool.
pub struct TcavContext {
    k: usize,
    class_gradients: Vec<Vec<f64>>,
    random_sets: Vec<Vec<ActivationVector>>,
}

impl TcavContext {
    pub fn new(
        backend: &dyn ModelBackend,
        layer: &str,
        k: usize,
        class_images: &[&Image],
        randoms: &[RandomConceptSet],
    ) -> Result<Self> {
        if class_images.is_empty() {
            return Err(Error::EmptyClass(format!("class {k} has no images to score")));
        }
        if randoms.len() < 2 {
            return Err(Error::invalid("random concepts", "need at least 2 random sets"));
        }
        let class_gradients = class_images
            .iter()
            .map(|img| {
                let a = backend.activations(img, layer)?;
                Ok(backend.logit_from_activation(&a, k)?.gradient)
            })
            .collect::<Result<_>>()?;
        let random_sets = randoms
            .iter()
            .map(|set| set.members.iter().map(|m| backend.activations(&m.pixels, layer)).collect())
            .collect::<Result<_>>()?;
        Ok(TcavContext {
            k,
            class_gradients,
            random_sets,
        })
    }

    pub fn class(&self) -> usize {
        self.k
    }

    fn score(&self, cav: &Cav) -> Result<f64> {
        let sens = self
            .class_gradients
            .iter()
            .map(|g| directional(g, &cav.direction))
            .collect::<Result<Vec<_>>>()?;
        tcav_score(&sens)
    }

    /// Runs `repetitions` concept-vs-random CAVs (repetition `r` uses random
    /// set `r mod R`) and as many random-vs-random CAVs on sets
    /// `(r mod R, r+1 mod R)`, then compares the two score populations.
    pub fn test(&self, concept: &Concept, params: &TcavParams, rng: &mut Rng) -> Result<TcavResult> {
        if params.repetitions < 2 {
            return Err(Error::invalid("tcav_repetitions", "must be at least 2"));
        }
        if concept.len() < params.min_size.max(2) {
            return Ok(TcavResult {
                concept_id: concept.concept_id,
                per_run_scores: Vec::new(),
                random_baseline_scores: Vec::new(),
                mean_score: None,
                p_value: None,
                significant: false,
                untestable: true,
                degenerate_cavs: 0,
            });
        }
        let n_sets = self.random_sets.len();
        let mut degenerate = 0;
        let mut per_run = Vec::with_capacity(params.repetitions);
        let mut baseline = Vec::with_capacity(params.repetitions);
        for r in 0..params.repetitions {
            let negatives = &self.random_sets[r % n_sets];
            let m = concept.len().min(negatives.len());
            let pos = sample(&concept.member_activations, m, rng);
            let neg = sample(negatives, m, rng);
            let cav = train_cav(&pos, &neg, rng)?;
            degenerate += cav.degenerate as usize;
            per_run.push(self.score(&cav)?);

            let (a, b) = (&self.random_sets[r % n_sets], &self.random_sets[(r + 1) % n_sets]);
            let m = a.len().min(b.len());
            let pos = sample(a, m, rng);
            let neg = sample(b, m, rng);
            let cav = train_cav(&pos, &neg, rng)?;
            degenerate += cav.degenerate as usize;
            baseline.push(self.score(&cav)?);
        }
        let mean = per_run.iter().sum::<f64>() / per_run.len() as f64;
        let test = welch_t_test(&per_run, &baseline)?;
        Ok(TcavResult {
            concept_id: concept.concept_id,
            per_run_scores: per_run,
            random_baseline_scores: baseline,
            mean_score: Some(mean),
            p_value: Some(test.p_value),
            significant: test.p_value < params.alpha,
            untestable: false,
            degenerate_cavs: degenerate,
        })
    }
}

fn sample(pool: &[ActivationVector], m: usize, rng: &mut Rng) -> Vec<ActivationVector> {
    index::sample(rng, pool.len(), m).into_iter().map(|i| pool[i].clone()).collect()
}

/// Tests one concept against a random pool. See [`TcavContext::test`].
#[allow(clippy::too_many_arguments)]
pub fn test_concept(
    concept: &Concept,
    randoms: &[RandomConceptSet],
    class_images: &[&Image],
    backend: &dyn ModelBackend,
    layer: &str,
    k: usize,
    params: &TcavParams,
    rng: &mut Rng,
) -> Result<TcavResult> {
    TcavContext::new(backend, layer, k, class_images, randoms)?.test(concept, params, rng)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_distr::Normal;

    use super::*;

    fn act(values: Vec<f64>) -> ActivationVector {
        ActivationVector {
            values,
            layer_id: "l".into(),
            source: String::new(),
        }
    }

    fn cloud(center: [f64; 2], n: usize, rng: &mut Rng) -> Vec<ActivationVector> {
        let noise = Normal::new(0.0, 0.1).unwrap();
        (0..n)
            .map(|_| act(vec![center[0] + noise.sample(rng), center[1] + noise.sample(rng)]))
            .collect()
    }

    #[test]
    fn separable_clouds() {
        let mut rng = Rng::seed_from_u64(0);
        let pos = cloud([1.0, 0.0], 20, &mut rng);
        let neg = cloud([-1.0, 0.0], 20, &mut rng);
        let cav = train_cav(&pos, &neg, &mut rng).unwrap();
        assert_eq!(cav.training_accuracy, 1.0);
        assert!(cav.direction[0] > 0.95);
        assert!((dot(&cav.direction, &cav.direction) - 1.0).abs() < 1e-9);
        let flipped = train_cav(&neg, &pos, &mut rng).unwrap();
        for (a, b) in cav.direction.iter().zip(&flipped.direction) {
            assert!((a + b).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_sets_are_degenerate() {
        let mut rng = Rng::seed_from_u64(0);
        let pos = cloud([0.5, 0.5], 10, &mut rng);
        let cav = train_cav(&pos, &pos, &mut rng).unwrap();
        assert!(cav.degenerate);
        assert!((cav.training_accuracy - 0.5).abs() < 1e-12);
        assert!((dot(&cav.direction, &cav.direction) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn score_is_strict() {
        assert_eq!(tcav_score(&[1.0, -1.0, 2.0, 0.0]).unwrap(), 0.5);
        assert_eq!(tcav_score(&[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(tcav_score(&[0.1, 3.0]).unwrap(), 1.0);
        assert!(tcav_score(&[]).is_err());
    }

    #[test]
    fn directional_derivative() {
        assert_eq!(directional(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(directional(&[1.0, 2.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert!(directional(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn rejects_small_training_sets() {
        let mut rng = Rng::seed_from_u64(0);
        let one = vec![act(vec![1.0])];
        let two = vec![act(vec![1.0]), act(vec![2.0])];
        assert!(train_cav(&one, &two, &mut rng).is_err());
    }
}
