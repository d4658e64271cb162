//! SLIC-style superpixels: local k-means in (RGB, x, y) with grid seeding,
//! followed by a pass that makes every superpixel 4-connected.

use std::collections::VecDeque;

use super::{GraphError, RagGraph, RasterImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuperpixelConfig {
    pub target_count: usize,
    /// Weight of the spatial term relative to color distance.
    pub compactness: f64,
    pub max_iters: usize,
}

impl Default for SuperpixelConfig {
    fn default() -> Self {
        Self {
            target_count: 1000,
            compactness: 0.2,
            max_iters: 10,
        }
    }
}

impl SuperpixelConfig {
    pub fn with_target(target_count: usize) -> Self {
        Self {
            target_count,
            ..Self::default()
        }
    }

    fn validate(&self, pixel_count: usize) -> Result<(), GraphError> {
        if self.target_count < 2 {
            return Err(GraphError::Config(format!(
                "target_count {} must be at least 2",
                self.target_count
            )));
        }
        if self.target_count > pixel_count {
            return Err(GraphError::Config(format!(
                "target_count {} exceeds pixel count {pixel_count}",
                self.target_count
            )));
        }
        if !(self.compactness > 0.0 && self.compactness.is_finite()) {
            return Err(GraphError::Config(format!(
                "compactness {} must be positive",
                self.compactness
            )));
        }
        if self.max_iters == 0 {
            return Err(GraphError::Config("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

struct Seed {
    x: f64,
    y: f64,
    color: Vec<f64>,
}

/// Per-pixel superpixel ids, dense and numbered in raster order of first
/// appearance. Every id's pixel set is 4-connected.
pub fn slic_labels(img: &RasterImage, cfg: &SuperpixelConfig) -> Result<Vec<usize>, GraphError> {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let n = w * h;
    cfg.validate(n)?;

    let ny = ((cfg.target_count as f64 * h as f64 / w as f64)
        .sqrt()
        .round() as usize)
        .clamp(1, h);
    let nx = ((cfg.target_count as f64 / ny as f64).round() as usize).clamp(1, w);
    let cell_w = w as f64 / nx as f64;
    let cell_h = h as f64 / ny as f64;
    let step = (n as f64 / cfg.target_count as f64).sqrt();
    let spatial_weight = (cfg.compactness / step).powi(2);

    let mut seeds = Vec::with_capacity(nx * ny);
    for gy in 0..ny {
        for gx in 0..nx {
            let x = (gx as f64 + 0.5) * cell_w;
            let y = (gy as f64 + 0.5) * cell_h;
            let px = (x.floor() as usize).min(w - 1);
            let py = (y.floor() as usize).min(h - 1);
            seeds.push(Seed {
                x,
                y,
                color: img.pixel(py * w + px).to_vec(),
            });
        }
    }

    // initial assignment: the grid cell containing the pixel
    let mut labels: Vec<usize> = (0..n)
        .map(|p| {
            let gx = (((p % w) as f64 + 0.5) / cell_w).floor() as usize;
            let gy = (((p / w) as f64 + 0.5) / cell_h).floor() as usize;
            gy.min(ny - 1) * nx + gx.min(nx - 1)
        })
        .collect();

    let mut best = vec![f64::INFINITY; n];
    for _ in 0..cfg.max_iters {
        best.iter_mut().for_each(|b| *b = f64::INFINITY);
        for (idx, seed) in seeds.iter().enumerate() {
            let x0 = (seed.x - cell_w - 0.5).ceil().max(0.0) as usize;
            let x1 = ((seed.x + cell_w - 0.5).floor() as isize).min(w as isize - 1);
            let y0 = (seed.y - cell_h - 0.5).ceil().max(0.0) as usize;
            let y1 = ((seed.y + cell_h - 0.5).floor() as isize).min(h as isize - 1);
            if x1 < 0 || y1 < 0 {
                continue;
            }
            for py in y0..=y1 as usize {
                for px in x0..=x1 as usize {
                    let p = py * w + px;
                    let color: f64 = img
                        .pixel(p)
                        .iter()
                        .zip(&seed.color)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    let dx = px as f64 + 0.5 - seed.x;
                    let dy = py as f64 + 0.5 - seed.y;
                    let dist = color + spatial_weight * (dx * dx + dy * dy);
                    if dist < best[p] {
                        best[p] = dist;
                        labels[p] = idx;
                    }
                }
            }
        }
        let mut acc = vec![(0.0, 0.0, 0usize); seeds.len()];
        let mut color_acc = vec![0.0; seeds.len() * c];
        for (p, &l) in labels.iter().enumerate() {
            acc[l].0 += (p % w) as f64 + 0.5;
            acc[l].1 += (p / w) as f64 + 0.5;
            acc[l].2 += 1;
            for (ch, v) in img.pixel(p).iter().enumerate() {
                color_acc[l * c + ch] += v;
            }
        }
        for (idx, seed) in seeds.iter_mut().enumerate() {
            let (sx, sy, count) = acc[idx];
            if count > 0 {
                let count = count as f64;
                seed.x = sx / count;
                seed.y = sy / count;
                for ch in 0..c {
                    seed.color[ch] = color_acc[idx * c + ch] / count;
                }
            }
        }
    }

    enforce_connectivity(&mut labels, w, h, seeds.len());
    Ok(relabel_dense(&labels))
}

/// 4-connected components of equal-label pixels, in raster order of their
/// first pixel.
fn components(labels: &[usize], w: usize, h: usize) -> Vec<Vec<usize>> {
    let mut comp_of = vec![usize::MAX; labels.len()];
    let mut comps = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..labels.len() {
        if comp_of[start] != usize::MAX {
            continue;
        }
        let id = comps.len();
        let mut pixels = vec![start];
        comp_of[start] = id;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for q in grid_neighbors(p, w, h).into_iter().flatten() {
                if comp_of[q] == usize::MAX && labels[q] == labels[start] {
                    comp_of[q] = id;
                    pixels.push(q);
                    queue.push_back(q);
                }
            }
        }
        comps.push(pixels);
    }
    comps
}

fn grid_neighbors(p: usize, w: usize, h: usize) -> [Option<usize>; 4] {
    let (x, y) = (p % w, p / w);
    [
        (x > 0).then(|| p - 1),
        (x + 1 < w).then(|| p + 1),
        (y > 0).then(|| p - w),
        (y + 1 < h).then(|| p + w),
    ]
}

/// Keeps the largest component of each label and hands every other
/// component to the neighboring label with which it shares the longest
/// boundary (lowest label on ties). Each reassignment fuses the stray
/// component into an existing one, so the loop terminates.
fn enforce_connectivity(labels: &mut [usize], w: usize, h: usize, label_count: usize) {
    loop {
        let comps = components(labels, w, h);
        let mut keep = vec![usize::MAX; label_count];
        for (idx, comp) in comps.iter().enumerate() {
            let l = labels[comp[0]];
            if keep[l] == usize::MAX || comp.len() > comps[keep[l]].len() {
                keep[l] = idx;
            }
        }
        let mut changed = false;
        for (idx, comp) in comps.iter().enumerate() {
            let own = labels[comp[0]];
            if keep[own] == idx {
                continue;
            }
            let mut shared = vec![0usize; label_count];
            for &p in comp {
                for q in grid_neighbors(p, w, h).into_iter().flatten() {
                    if labels[q] != own {
                        shared[labels[q]] += 1;
                    }
                }
            }
            let target = shared
                .iter()
                .enumerate()
                .filter(|(_, &s)| s > 0)
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(l, _)| l);
            if let Some(target) = target {
                for &p in comp {
                    labels[p] = target;
                }
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
}

fn relabel_dense(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

pub fn build_superpixel_rag(
    img: &RasterImage,
    cfg: &SuperpixelConfig,
) -> Result<RagGraph, GraphError> {
    let labels = slic_labels(img, cfg)?;
    RagGraph::from_label_map(img, labels)
}
