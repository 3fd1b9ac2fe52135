//! Lloyd's k-means with k-means++ seeding and restarts.

use rand::distr::weighted::WeightedIndex;
use rand::Rng as _;
use rand::distr::Distribution;

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const KMEANS_MAX_ITER: usize = 100;
pub const KMEANS_TOL: f64 = 1e-6;
pub const KMEANS_RESTARTS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each assignment step of the kept restart.
    pub inertia_history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(j, c)| (j, sq_dist(p, c)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn plus_plus(points: &[Vec<f64>], n_k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    while centroids.len() < n_k {
        let next = match WeightedIndex::new(&d2) {
            Ok(dist) => dist.sample(rng),
            // Every remaining point coincides with a centroid.
            Err(_) => {
                let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
                free[rng.random_range(0..free.len())]
            }
        };
        chosen[next] = true;
        centroids.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[next]));
        }
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> KMeansFit {
    let dim = points[0].len();
    let mut labels = vec![0; points.len()];
    let mut history = Vec::new();
    for _ in 0..KMEANS_MAX_ITER {
        let mut inertia = 0.0;
        for (l, p) in labels.iter_mut().zip(points) {
            let (j, d) = nearest(p, &centroids);
            *l = j;
            inertia += d;
        }
        history.push(inertia);
        let mut sums = vec![vec![0.0; dim]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (&l, p) in labels.iter().zip(points) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        let mut shift = 0.0f64;
        for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
            // An emptied cluster keeps its previous centroid.
            if n > 0 {
                let updated: Vec<f64> = s.into_iter().map(|v| v / n as f64).collect();
                shift = shift.max(sq_dist(c, &updated).sqrt());
                *c = updated;
            }
        }
        if shift < KMEANS_TOL {
            break;
        }
    }
    let mut inertia = 0.0;
    for (l, p) in labels.iter_mut().zip(points) {
        let (j, d) = nearest(p, &centroids);
        *l = j;
        inertia += d;
    }
    history.push(inertia);
    KMeansFit {
        labels,
        centroids,
        inertia,
        inertia_history: history,
    }
}

/// Best of [`KMEANS_RESTARTS`] k-means++ seeded runs by inertia.
pub fn kmeans(points: &[Vec<f64>], n_k: usize, rng: &mut Rng) -> Result<KMeansFit> {
    if n_k == 0 {
        return Err(Error::invalid("n_k", "must be at least 1"));
    }
    if n_k > points.len() {
        return Err(Error::invalid("n_k", format!("{n_k} clusters requested for {} points", points.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("k-means points differ in dimension".into()));
    }
    let mut best: Option<KMeansFit> = None;
    for _ in 0..KMEANS_RESTARTS {
        let fit = lloyd(points, plus_plus(points, n_k, rng));
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn far_pairs_are_grouped() {
        let pts = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![50.0, 50.0], vec![51.0, 50.0]];
        let fit = kmeans(&pts, 2, &mut Rng::seed_from_u64(0)).unwrap();
        assert_eq!(fit.labels[0], fit.labels[1]);
        assert_eq!(fit.labels[2], fit.labels[3]);
        assert_ne!(fit.labels[0], fit.labels[2]);
        // Brute force over the three 2+2 splits: pairing the neighbours wins.
        assert!((fit.inertia - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_cluster_and_singletons() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let one = kmeans(&pts, 1, &mut Rng::seed_from_u64(1)).unwrap();
        assert!(one.labels.iter().all(|&l| l == 0));
        let all = kmeans(&pts, 6, &mut Rng::seed_from_u64(1)).unwrap();
        assert_eq!(all.inertia, 0.0);
        let mut seen = all.labels.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 6);
    }

    #[test]
    fn inertia_never_increases_and_runs_repeat() {
        let mut rng = Rng::seed_from_u64(9);
        let pts: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let a = kmeans(&pts, 7, &mut Rng::seed_from_u64(5)).unwrap();
        assert!(a.inertia_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        let b = kmeans(&pts, 7, &mut Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_many_clusters() {
        assert!(kmeans(&[vec![0.0]], 2, &mut Rng::seed_from_u64(0)).is_err());
    }
}
