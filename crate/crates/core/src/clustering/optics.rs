//! OPTICS ordering under the Manhattan metric with xi-steepness cluster
//! extraction.
//!
//! Candidate clusters are the steep-down/steep-up intervals of the
//! reachability plot. A cluster starts at the steepest drop of its downward
//! area and stops before any point of its upward area that is separated by a
//! gap much wider than the cluster's own spacing. A flat partition is then
//! chosen from the candidate hierarchy by maximizing excess of mass on a
//! logarithmic density scale, so a dense group is reported whole rather
//! than as its innermost leaves.

use crate::error::{Error, Result};

pub const NOISE: i64 = -1;

/// A cluster ends before the first point of its upward area whose
/// reachability exceeds this multiple of every reachability inside it.
pub const GAP_FACTOR: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticsParams {
    pub min_samples: usize,
    pub xi: f64,
    pub max_eps: f64,
    /// Smallest interval accepted as a cluster; defaults to `min_samples`.
    pub min_cluster_size: Option<usize>,
}

impl Default for OpticsParams {
    fn default() -> Self {
        OpticsParams {
            min_samples: 5,
            xi: 0.05,
            max_eps: f64::INFINITY,
            min_cluster_size: None,
        }
    }
}

impl OpticsParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_samples < 2 {
            return Err(Error::invalid("min_samples", "must be at least 2"));
        }
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return Err(Error::invalid("xi", "must lie in (0, 1)"));
        }
        if !(self.max_eps > 0.0) {
            return Err(Error::invalid("max_eps", "must be positive"));
        }
        if self.min_cluster_size == Some(0) {
            return Err(Error::invalid("min_cluster_size", "must be positive"));
        }
        Ok(())
    }
}

/// Result of the OPTICS ordering pass. All per-point vectors are indexed by
/// the original point index.
#[derive(Debug, Clone, PartialEq)]
pub struct Reachability {
    pub ordering: Vec<usize>,
    pub reachability: Vec<f64>,
    pub core_distance: Vec<f64>,
    pub predecessor: Vec<Option<usize>>,
}

pub fn manhattan(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn row(points: &[Vec<f64>], i: usize, out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        *o = manhattan(&points[i], &points[j]);
    }
}

/// Computes the OPTICS ordering. The core distance counts the point itself
/// as its own first neighbour.
pub fn optics_order(points: &[Vec<f64>], min_samples: usize, max_eps: f64) -> Reachability {
    let n = points.len();
    let mut dist = vec![0.0; n];
    let mut core_distance = vec![f64::INFINITY; n];
    if n >= min_samples && min_samples > 0 {
        let mut scratch = vec![0.0; n];
        for (i, core) in core_distance.iter_mut().enumerate() {
            row(points, i, &mut scratch);
            let (_, kth, _) = scratch.select_nth_unstable_by(min_samples - 1, f64::total_cmp);
            if *kth <= max_eps {
                *core = *kth;
            }
        }
    }

    let mut reachability = vec![f64::INFINITY; n];
    let mut predecessor = vec![None; n];
    let mut processed = vec![false; n];
    let mut ordering = Vec::with_capacity(n);
    for _ in 0..n {
        let point = (0..n)
            .filter(|&i| !processed[i])
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if reachability[b] <= reachability[i] => Some(b),
                _ => Some(i),
            })
            .expect("an unprocessed point remains");
        processed[point] = true;
        ordering.push(point);
        if core_distance[point].is_infinite() {
            continue;
        }
        row(points, point, &mut dist);
        for o in 0..n {
            if processed[o] || dist[o] > max_eps {
                continue;
            }
            let r = dist[o].max(core_distance[point]);
            if r < reachability[o] {
                reachability[o] = r;
                predecessor[o] = Some(point);
            }
        }
    }
    Reachability {
        ordering,
        reachability,
        core_distance,
        predecessor,
    }
}

struct SteepDown {
    start: usize,
    end: usize,
    mib: f64,
}

fn extend_region(steep: &[bool], xward: &[bool], start: usize, min_samples: usize) -> usize {
    let mut non_xward = 0;
    let mut end = start;
    for index in start..steep.len() {
        if steep[index] {
            non_xward = 0;
            end = index;
        } else if !xward[index] {
            non_xward += 1;
            if non_xward > min_samples {
                break;
            }
        } else {
            return end;
        }
    }
    end
}

fn update_filter_sdas(sdas: Vec<SteepDown>, mib: f64, xc: f64, r: &[f64]) -> Vec<SteepDown> {
    if mib.is_infinite() {
        return Vec::new();
    }
    sdas.into_iter()
        .filter(|d| mib <= r[d.start] * xc)
        .map(|d| SteepDown { mib: d.mib.max(mib), ..d })
        .collect()
}

fn correct_predecessor(r: &[f64], pred: &[Option<usize>], ordering: &[usize], s: usize, mut e: usize) -> Option<(usize, usize)> {
    while s < e {
        if r[s] > r[e] {
            return Some((s, e));
        }
        if let Some(p) = pred[e] {
            if ordering[s..e].contains(&p) {
                return Some((s, e));
            }
        }
        e -= 1;
    }
    None
}

/// Index of the largest value, treating NaN as smallest; first on ties.
fn argmax(values: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        let v = if v.is_nan() { f64::NEG_INFINITY } else { v };
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Candidate cluster intervals `(start, end)` over positions of the
/// reachability plot (inclusive bounds).
pub fn xi_intervals(reach: &Reachability, xi: f64, min_samples: usize, min_cluster_size: usize) -> Vec<(usize, usize)> {
    let n = reach.ordering.len();
    let mut r: Vec<f64> = reach.ordering.iter().map(|&p| reach.reachability[p]).collect();
    r.push(f64::INFINITY);
    let pred: Vec<Option<usize>> = reach.ordering.iter().map(|&p| reach.predecessor[p]).collect();
    let xc = 1.0 - xi;

    let ratio: Vec<f64> = (0..n).map(|i| r[i] / r[i + 1]).collect();
    let steep_up: Vec<bool> = ratio.iter().map(|&q| q <= xc).collect();
    let steep_down: Vec<bool> = ratio.iter().map(|&q| q >= 1.0 / xc).collect();
    let down: Vec<bool> = ratio.iter().map(|&q| q > 1.0).collect();
    let up: Vec<bool> = ratio.iter().map(|&q| q < 1.0).collect();

    let mut sdas: Vec<SteepDown> = Vec::new();
    let mut clusters = Vec::new();
    let mut index = 0;
    let mut mib = 0.0f64;
    for si in (0..n).filter(|&i| steep_up[i] || steep_down[i]) {
        if si < index {
            continue;
        }
        mib = r[index..=si].iter().copied().fold(mib, f64::max);
        sdas = update_filter_sdas(sdas, mib, xc, &r);
        if steep_down[si] {
            let end = extend_region(&steep_down, &up, si, min_samples);
            sdas.push(SteepDown { start: si, end, mib: 0.0 });
            index = end + 1;
            mib = r[index];
            continue;
        }

        let u_start = si;
        let u_end = extend_region(&steep_up, &down, u_start, min_samples);
        index = u_end + 1;
        mib = r[index];
        let mut found = Vec::new();
        for d in &sdas {
            let mut c_start = d.start;
            let mut c_end = u_end;
            if r[c_end + 1] * xc < d.mib {
                continue;
            }
            let d_max = r[d.start];
            if d_max * xc >= r[c_end + 1] {
                while r[c_start + 1] > r[c_end + 1] && c_start < d.end {
                    c_start += 1;
                }
            } else if r[c_end + 1] * xc >= d_max {
                while c_end > u_start && r[c_end - 1] > d_max {
                    c_end -= 1;
                }
            }

            let drop = argmax((d.start..=d.end).map(|i| r[i] / r[i + 1])).unwrap_or(0);
            c_start = c_start.max(d.start + drop);
            let mut inner_max = f64::NEG_INFINITY;
            for i in c_start + 1..=u_end.min(n.saturating_sub(2)) {
                inner_max = inner_max.max(r[i]);
                if i >= u_start && r[i + 1] >= GAP_FACTOR * inner_max {
                    c_end = c_end.min(i);
                    break;
                }
            }

            let Some((s, e)) = correct_predecessor(&r, &pred, &reach.ordering, c_start, c_end) else {
                continue;
            };
            if e + 1 - s < min_cluster_size || s > d.end || e < u_start {
                continue;
            }
            found.push((s, e));
        }
        found.reverse();
        clusters.extend(found);
    }
    clusters
}

/// Picks non-overlapping intervals from the candidate hierarchy by excess of
/// mass and returns one label per reachability-plot position.
///
/// Density is measured as `-ln r`, with infinite reachability capped at the
/// largest finite value. A cluster with a single sub-cluster is treated as
/// that sub-cluster persisting, so only genuine splits compete. An interval
/// covering every point is only reported when it has no sub-clusters.
pub fn select_intervals(reach_plot: &[f64], intervals: &[(usize, usize)]) -> Vec<i64> {
    let n = reach_plot.len();
    let r = |i: usize| if i < n { reach_plot[i] } else { f64::INFINITY };
    let cap = reach_plot.iter().copied().filter(|v| v.is_finite()).reduce(f64::max).unwrap_or(1.0).max(1e-12);
    let level = |v: f64| -v.min(cap).max(1e-12).ln();
    let size = |c: (usize, usize)| c.1 + 1 - c.0;
    let contains = |outer: (usize, usize), inner: (usize, usize)| outer.0 <= inner.0 && inner.1 <= outer.1;
    let birth = |c: (usize, usize)| level(r(c.0).min(r(c.1 + 1)));

    let mut candidates = intervals.to_vec();
    candidates.sort_by_key(|&c| (size(c), c.0));
    candidates.dedup();
    let mut kept: Vec<(usize, usize)> = Vec::new();
    for c in candidates {
        let crosses = kept.iter().any(|&k| !(c.1 < k.0 || c.0 > k.1) && !contains(c, k));
        if !crosses {
            kept.push(c);
        }
    }

    let parent: Vec<Option<usize>> = (0..kept.len())
        .map(|i| (i + 1..kept.len()).find(|&j| contains(kept[j], kept[i])))
        .collect();
    let mut children = vec![Vec::new(); kept.len()];
    for (i, p) in parent.iter().enumerate() {
        if let Some(p) = p {
            children[*p].push(i);
        }
    }

    // Kept intervals are ordered by size, so children precede parents.
    let mut chain = vec![0.0; kept.len()];
    let mut split: Vec<Vec<usize>> = vec![Vec::new(); kept.len()];
    let mut selection: Vec<(f64, Vec<usize>)> = Vec::with_capacity(kept.len());
    for (i, &c) in kept.iter().enumerate() {
        let lb = birth(c);
        let mut in_child = vec![false; size(c)];
        let mut own = 0.0;
        for &ch in &children[i] {
            let k = kept[ch];
            own += size(k) as f64 * (birth(k) - lb).max(0.0);
            in_child[k.0 - c.0..=k.1 - c.0].iter_mut().for_each(|f| *f = true);
        }
        for p in c.0 + 1..=c.1 {
            if !in_child[p - c.0] {
                own += (level(r(p)) - lb).max(0.0);
            }
        }
        if let [only] = children[i][..] {
            chain[i] = own + chain[only];
            split[i] = split[only].clone();
        } else {
            chain[i] = own;
            split[i] = children[i].clone();
        }
        let split_value: f64 = split[i].iter().map(|&j| selection[j].0).sum();
        let spans_all = size(c) == n;
        if !split[i].is_empty() && (split_value > chain[i] || spans_all) {
            let chosen = split[i].iter().flat_map(|&j| selection[j].1.clone()).collect();
            selection.push((split_value, chosen));
        } else {
            selection.push((chain[i], vec![i]));
        }
    }

    let mut chosen: Vec<(usize, usize)> = (0..kept.len())
        .filter(|&i| parent[i].is_none())
        .flat_map(|i| selection[i].1.iter().map(|&j| kept[j]))
        .collect();
    chosen.sort();
    let mut labels = vec![NOISE; n];
    for (label, (s, e)) in chosen.into_iter().enumerate() {
        labels[s..=e].iter_mut().for_each(|l| *l = label as i64);
    }
    labels
}

/// Clusters `points`, returning one label per point (`NOISE` for noise).
/// With fewer points than `min_samples` everything is noise.
pub fn optics_cluster(points: &[Vec<f64>], params: &OpticsParams) -> Result<Vec<i64>> {
    params.validate()?;
    let n = points.len();
    if let Some(d) = points.first().map(Vec::len) {
        if points.iter().any(|p| p.len() != d) {
            return Err(Error::Shape("OPTICS points differ in dimension".into()));
        }
    }
    if n < params.min_samples {
        return Ok(vec![NOISE; n]);
    }
    let reach = optics_order(points, params.min_samples, params.max_eps);
    let mcs = params.min_cluster_size.unwrap_or(params.min_samples);
    let intervals = xi_intervals(&reach, params.xi, params.min_samples, mcs);
    let plot: Vec<f64> = reach.ordering.iter().map(|&p| reach.reachability[p]).collect();
    let by_position = select_intervals(&plot, &intervals);
    let mut labels = vec![NOISE; n];
    for (pos, &p) in reach.ordering.iter().enumerate() {
        labels[p] = by_position[pos];
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;

    fn blob(center: [f64; 2], n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let normal = Normal::new(0.0, 1.0).unwrap();
        (0..n)
            .map(|_| vec![center[0] + normal.sample(rng), center[1] + normal.sample(rng)])
            .collect()
    }

    #[test]
    fn ordering_starts_at_first_point_with_infinite_reach() {
        let pts = vec![vec![0.0], vec![1.0], vec![3.0], vec![6.0]];
        let reach = optics_order(&pts, 2, f64::INFINITY);
        assert_eq!(reach.ordering, vec![0, 1, 2, 3]);
        assert!(reach.reachability[0].is_infinite());
        assert_eq!(&reach.reachability[1..], &[1.0, 2.0, 3.0]);
        assert_eq!(reach.core_distance, vec![1.0, 1.0, 2.0, 3.0]);
        assert_eq!(reach.predecessor, vec![None, Some(0), Some(1), Some(2)]);
    }

    #[test]
    fn max_eps_disconnects() {
        let pts = vec![vec![0.0], vec![1.0], vec![10.0], vec![11.0]];
        let reach = optics_order(&pts, 2, 5.0);
        assert!(reach.reachability[2].is_infinite());
        assert_eq!(reach.reachability[3], 1.0);
    }

    #[test]
    fn two_far_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pts = blob([0.0, 0.0], 25, &mut rng);
        pts.extend(blob([100.0, 100.0], 25, &mut rng));
        let params = OpticsParams { min_samples: 3, ..Default::default() };
        let labels = optics_cluster(&pts, &params).unwrap();
        assert!(labels[..25].iter().all(|&l| l == labels[0] && l != NOISE));
        assert!(labels[25..].iter().all(|&l| l == labels[25] && l != NOISE));
        assert_ne!(labels[0], labels[25]);
    }

    #[test]
    fn identical_points_form_one_cluster() {
        let pts = vec![vec![2.0, 2.0]; 12];
        let labels = optics_cluster(&pts, &OpticsParams::default()).unwrap();
        assert!(labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn far_point_is_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pts = blob([0.0, 0.0], 20, &mut rng);
        pts.push(vec![1000.0, 1000.0]);
        let labels = optics_cluster(&pts, &OpticsParams::default()).unwrap();
        assert_eq!(labels[20], NOISE);
        assert!(labels[..20].iter().all(|&l| l == 0));
    }

    #[test]
    fn too_few_points_are_noise() {
        let pts = vec![vec![0.0]; 3];
        assert_eq!(optics_cluster(&pts, &OpticsParams::default()).unwrap(), vec![NOISE; 3]);
    }

    #[test]
    fn nested_intervals_prefer_dense_children() {
        // Two tight groups joined by a loose envelope.
        let plot = [f64::INFINITY, 0.1, 0.1, 0.1, 5.0, 0.1, 0.1, 0.1];
        let labels = select_intervals(&plot, &[(0, 3), (4, 7), (0, 7)]);
        assert_eq!(labels, vec![0, 0, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn covering_interval_yields_to_its_children() {
        let plot = [f64::INFINITY, 0.001, 0.001, 0.001, 0.5, 0.4, 0.4, 0.5, 0.4, 0.4];
        let labels = select_intervals(&plot, &[(0, 9), (4, 6), (7, 9)]);
        assert_eq!(labels, vec![NOISE, NOISE, NOISE, NOISE, 0, 0, 0, 1, 1, 1]);
        let labels = select_intervals(&plot[..9], &[(0, 8), (4, 6)]);
        assert_eq!(labels, vec![0; 9]);
    }

    #[test]
    fn crossing_intervals_are_dropped() {
        let plot = [f64::INFINITY, 1.0, 1.0, 1.0, 1.0, 1.0];
        let labels = select_intervals(&plot, &[(0, 2), (1, 4)]);
        assert_eq!(labels, vec![0, 0, 0, NOISE, NOISE, NOISE]);
    }

    fn same_partition(a: &[i64], b: &[i64]) -> bool {
        let mut forward = std::collections::HashMap::new();
        let mut backward = std::collections::HashMap::new();
        a.iter().zip(b).all(|(&x, &y)| {
            (x == NOISE) == (y == NOISE)
                && *forward.entry(x).or_insert(y) == y
                && *backward.entry(y).or_insert(x) == x
        })
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]

        #[test]
        fn labels_follow_points_under_permutation(seed in 0u64..10_000) {
            use rand::seq::SliceRandom;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut pts = blob([0.0, 0.0], 20, &mut rng);
            pts.extend(blob([60.0, -30.0], 20, &mut rng));
            let params = OpticsParams::default();
            let labels = optics_cluster(&pts, &params).unwrap();
            let mut perm: Vec<usize> = (0..pts.len()).collect();
            perm.shuffle(&mut rng);
            let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| pts[i].clone()).collect();
            let relabelled = optics_cluster(&shuffled, &params).unwrap();
            let expected: Vec<i64> = perm.iter().map(|&i| labels[i]).collect();
            proptest::prop_assert!(same_partition(&expected, &relabelled));
        }

        #[test]
        fn labels_are_noise_or_dense(n in 0usize..40, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = blob([0.0, 0.0], n, &mut rng);
            let labels = optics_cluster(&pts, &OpticsParams::default()).unwrap();
            proptest::prop_assert_eq!(labels.len(), n);
            let used: std::collections::BTreeSet<i64> = labels.iter().copied().filter(|&l| l != NOISE).collect();
            proptest::prop_assert!(used.iter().copied().eq(0..used.len() as i64));
        }
    }
}
