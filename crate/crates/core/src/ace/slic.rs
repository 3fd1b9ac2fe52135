//! SLIC superpixels: k-means over CIELAB colour and position, seeded on a
//! regular grid, followed by enforcement of 4-connectivity.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

pub const SLIC_ITERATIONS: usize = 10;

/// A 4-connected image region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Superpixel {
    /// Member `(row, col)` coordinates in raster order.
    pub pixels: Vec<(usize, usize)>,
    /// `(row0, col0, row1, col1)` with exclusive upper bounds.
    pub bbox: (usize, usize, usize, usize),
    pub source_id: String,
}

impl Superpixel {
    pub fn from_pixels(pixels: Vec<(usize, usize)>, source_id: impl Into<String>) -> Result<Self> {
        if pixels.is_empty() {
            return Err(Error::invalid("superpixel", "has no pixels"));
        }
        let r0 = pixels.iter().map(|p| p.0).min().unwrap_or(0);
        let c0 = pixels.iter().map(|p| p.1).min().unwrap_or(0);
        let r1 = pixels.iter().map(|p| p.0).max().unwrap_or(0) + 1;
        let c1 = pixels.iter().map(|p| p.1).max().unwrap_or(0) + 1;
        Ok(Superpixel {
            pixels,
            bbox: (r0, c0, r1, c1),
            source_id: source_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Segments `image` into roughly `n_segments` superpixels.
pub fn slic_segment(image: &Image, n_segments: usize, compactness: f64, sigma: f64) -> Result<Vec<Superpixel>> {
    let (labels, count) = slic_labels(image, n_segments, compactness, sigma)?;
    let mut members = vec![Vec::new(); count];
    let w = image.width();
    for (i, &l) in labels.iter().enumerate() {
        members[l].push((i / w, i % w));
    }
    members
        .into_iter()
        .map(|px| Superpixel::from_pixels(px, image.source_id()))
        .collect()
}

/// Label grid (row-major) and number of segments. Labels are dense,
/// numbered in raster order of each segment's first pixel.
pub fn slic_labels(image: &Image, n_segments: usize, compactness: f64, sigma: f64) -> Result<(Vec<usize>, usize)> {
    let (h, w) = (image.height(), image.width());
    if n_segments == 0 || n_segments > h * w {
        return Err(Error::invalid(
            "n_segments",
            format!("{n_segments} segments requested for a {h}x{w} image"),
        ));
    }
    if !(compactness > 0.0 && compactness.is_finite()) {
        return Err(Error::invalid("compactness", "must be positive and finite"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma", "must be non-negative and finite"));
    }

    let rgb = image.planes().map(|p| gaussian_blur(&p, h, w, sigma));
    let lab = to_lab(&rgb);

    let ny = ((n_segments as f64 * h as f64 / w as f64).sqrt().round() as usize).clamp(1, h);
    let nx = ((n_segments as f64 / ny as f64).round() as usize).clamp(1, w);
    let (step_y, step_x) = (h as f64 / ny as f64, w as f64 / nx as f64);
    let step = (step_y * step_x).sqrt();

    // Centre: [L, a, b, row, col].
    let mut centers: Vec<[f64; 5]> = Vec::with_capacity(ny * nx);
    for gy in 0..ny {
        for gx in 0..nx {
            let r = (((gy as f64 + 0.5) * step_y) as usize).min(h - 1);
            let c = (((gx as f64 + 0.5) * step_x) as usize).min(w - 1);
            let (r, c) = lowest_gradient(&lab, h, w, r, c);
            let i = r * w + c;
            centers.push([lab[0][i], lab[1][i], lab[2][i], r as f64, c as f64]);
        }
    }

    let spatial_weight = (compactness / step).powi(2);
    let reach = step.ceil() as isize;
    let mut labels: Vec<usize> = (0..h * w)
        .map(|i| {
            let gy = (((i / w) as f64 / step_y) as usize).min(ny - 1);
            let gx = (((i % w) as f64 / step_x) as usize).min(nx - 1);
            gy * nx + gx
        })
        .collect();
    let mut dist = vec![f64::INFINITY; h * w];
    for _ in 0..SLIC_ITERATIONS {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        for (ci, c) in centers.iter().enumerate() {
            let (cr, cc) = (c[3].round() as isize, c[4].round() as isize);
            for r in (cr - reach).max(0)..(cr + reach + 1).min(h as isize) {
                for col in (cc - reach).max(0)..(cc + reach + 1).min(w as isize) {
                    let i = r as usize * w + col as usize;
                    let dc = (lab[0][i] - c[0]).powi(2) + (lab[1][i] - c[1]).powi(2) + (lab[2][i] - c[2]).powi(2);
                    let ds = (r as f64 - c[3]).powi(2) + (col as f64 - c[4]).powi(2);
                    let d = dc + spatial_weight * ds;
                    if d < dist[i] {
                        dist[i] = d;
                        labels[i] = ci;
                    }
                }
            }
        }
        let mut sums = vec![[0.0f64; 6]; centers.len()];
        for (i, &l) in labels.iter().enumerate() {
            let s = &mut sums[l];
            s[0] += lab[0][i];
            s[1] += lab[1][i];
            s[2] += lab[2][i];
            s[3] += (i / w) as f64;
            s[4] += (i % w) as f64;
            s[5] += 1.0;
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s[5] > 0.0 {
                for j in 0..5 {
                    c[j] = s[j] / s[5];
                }
            }
        }
    }

    let min_size = ((h * w) as f64 / centers.len() as f64 / 4.0) as usize;
    Ok(enforce_connectivity(&labels, h, w, min_size.max(1)))
}

/// Relabels 4-connected components; components smaller than `min_size` are
/// absorbed by an already labelled neighbour of their first pixel.
fn enforce_connectivity(labels: &[usize], h: usize, w: usize, min_size: usize) -> (Vec<usize>, usize) {
    const UNSET: usize = usize::MAX;
    let mut out = vec![UNSET; h * w];
    let mut next = 0;
    let mut queue = VecDeque::new();
    let mut component = Vec::new();
    for start in 0..h * w {
        if out[start] != UNSET {
            continue;
        }
        let (sr, sc) = (start / w, start % w);
        let adjacent = neighbours(sr, sc, h, w).map(|n| out[n]).find(|&l| l != UNSET);

        component.clear();
        out[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            component.push(i);
            for n in neighbours(i / w, i % w, h, w) {
                if out[n] == UNSET && labels[n] == labels[start] {
                    out[n] = next;
                    queue.push_back(n);
                }
            }
        }
        match adjacent {
            Some(a) if component.len() < min_size => component.iter().for_each(|&i| out[i] = a),
            _ => next += 1,
        }
    }
    (out, next)
}

fn neighbours(r: usize, c: usize, h: usize, w: usize) -> impl Iterator<Item = usize> {
    let up = (r > 0).then(|| (r - 1) * w + c);
    let left = (c > 0).then(|| r * w + c - 1);
    let down = (r + 1 < h).then(|| (r + 1) * w + c);
    let right = (c + 1 < w).then(|| r * w + c + 1);
    [up, left, down, right].into_iter().flatten()
}

fn lowest_gradient(lab: &[Vec<f64>; 3], h: usize, w: usize, r: usize, c: usize) -> (usize, usize) {
    let grad = |r: usize, c: usize| -> f64 {
        let (r0, r1) = (r.saturating_sub(1), (r + 1).min(h - 1));
        let (c0, c1) = (c.saturating_sub(1), (c + 1).min(w - 1));
        lab.iter()
            .map(|p| (p[r * w + c1] - p[r * w + c0]).powi(2) + (p[r1 * w + c] - p[r0 * w + c]).powi(2))
            .sum()
    };
    let mut best = (r, c);
    let mut best_g = grad(r, c);
    for rr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
        for cc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
            let g = grad(rr, cc);
            if g < best_g {
                best_g = g;
                best = (rr, cc);
            }
        }
    }
    best
}

/// Separable Gaussian blur with reflected borders, truncated at 4 sigma.
pub fn gaussian_blur(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return plane.to_vec();
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.into_iter().map(|k| k / total).collect();
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let period = 2 * n;
        let m = i.rem_euclid(period);
        (if m < n { m } else { period - 1 - m }) as usize
    };
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            tmp[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(j, k)| k * plane[r * w + reflect(c as isize + j as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(j, k)| k * tmp[reflect(r as isize + j as isize - radius, h) * w + c])
                .sum();
        }
    }
    out
}

/// sRGB planes in `[0, 1]` to CIELAB (D65 white point).
pub fn to_lab(rgb: &[Vec<f64>; 3]) -> [Vec<f64>; 3] {
    let n = rgb[0].len();
    let mut lab: [Vec<f64>; 3] = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let linear = |v: f64| {
        if v <= 0.04045 {
            v / 12.92
        } else {
            ((v + 0.055) / 1.055).powf(2.4)
        }
    };
    let f = |t: f64| {
        if t > 0.008856 {
            t.cbrt()
        } else {
            7.787 * t + 16.0 / 116.0
        }
    };
    for i in 0..n {
        let (r, g, b) = (linear(rgb[0][i]), linear(rgb[1][i]), linear(rgb[2][i]));
        let x = (0.412453 * r + 0.357580 * g + 0.180423 * b) / 0.950456;
        let y = 0.212671 * r + 0.715160 * g + 0.072169 * b;
        let z = (0.019334 * r + 0.119193 * g + 0.950227 * b) / 1.088754;
        let (fx, fy, fz) = (f(x), f(y), f(z));
        lab[0][i] = if y > 0.008856 { 116.0 * y.cbrt() - 16.0 } else { 903.3 * y };
        lab[1][i] = 500.0 * (fx - fy);
        lab[2][i] = 200.0 * (fy - fz);
    }
    lab
}
