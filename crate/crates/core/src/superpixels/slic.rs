//! SLIC clustering in CIELAB+xy space with grid seeding, a fixed iteration
//! count and a final connectivity pass.

use crate::error::{Error, Result};
use crate::raster::Image;

use super::lab::image_to_lab;
use super::{SuperpixelId, SuperpixelMap};

pub const DEFAULT_COMPACTNESS: f64 = 10.0;
pub const DEFAULT_ITERATIONS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlicParams {
    pub target_count: u32,
    pub compactness: f64,
    pub iterations: usize,
}

impl SlicParams {
    pub fn new(target_count: u32) -> Self {
        Self {
            target_count,
            compactness: DEFAULT_COMPACTNESS,
            iterations: DEFAULT_ITERATIONS,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Center {
    lab: [f64; 3],
    x: f64,
    y: f64,
}

/// Runs SLIC with the default iteration count.
pub fn slic(image: &Image, target_count: u32, compactness: f64) -> Result<SuperpixelMap> {
    slic_with(
        image,
        SlicParams {
            target_count,
            compactness,
            iterations: DEFAULT_ITERATIONS,
        },
    )
}

pub fn slic_with(image: &Image, params: SlicParams) -> Result<SuperpixelMap> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let n = w * h;
    if params.target_count == 0 {
        return Err(Error::InvalidArgument(
            "target superpixel count must be positive".into(),
        ));
    }
    if params.target_count as usize > n {
        return Err(Error::InvalidArgument(format!(
            "target of {} superpixels exceeds the {n} pixels of the image",
            params.target_count
        )));
    }
    if !(params.compactness > 0.0) {
        return Err(Error::InvalidArgument("compactness must be positive".into()));
    }

    let lab = image_to_lab(image.data());
    let (nx, ny) = grid_shape(w, h, params.target_count as usize);
    let step = (n as f64 / (nx * ny) as f64).sqrt();
    let mut centers = seed_centers(&lab, w, h, nx, ny);

    let mut labels = vec![u32::MAX; n];
    let mut dist = vec![f64::INFINITY; n];
    let spatial_weight = (params.compactness / step).powi(2);
    let radius = step.ceil() as i64;
    for _ in 0..params.iterations {
        dist.fill(f64::INFINITY);
        for (k, c) in centers.iter().enumerate() {
            let (cx, cy) = (c.x.round() as i64, c.y.round() as i64);
            let x0 = (cx - radius).max(0) as usize;
            let x1 = ((cx + radius) as usize).min(w - 1);
            let y0 = (cy - radius).max(0) as usize;
            let y1 = ((cy + radius) as usize).min(h - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let i = y * w + x;
                    let d = distance(c, &lab[i], x, y, spatial_weight);
                    if d < dist[i] {
                        dist[i] = d;
                        labels[i] = k as u32;
                    }
                }
            }
        }
        assign_uncovered(&mut labels, &centers, &lab, w, spatial_weight);
        update_centers(&mut centers, &labels, &lab, w);
    }
    if params.iterations == 0 {
        assign_uncovered(&mut labels, &centers, &lab, w, spatial_weight);
    }

    let min_size = ((step * step) / 4.0).floor().max(1.0) as usize;
    let labels = enforce_connectivity(&labels, w, h, min_size);
    SuperpixelMap::from_labels(image.width(), image.height(), labels)
}

fn distance(c: &Center, lab: &[f64; 3], x: usize, y: usize, spatial_weight: f64) -> f64 {
    let dl = c.lab[0] - lab[0];
    let da = c.lab[1] - lab[1];
    let db = c.lab[2] - lab[2];
    let dx = c.x - x as f64;
    let dy = c.y - y as f64;
    dl * dl + da * da + db * db + (dx * dx + dy * dy) * spatial_weight
}

/// Grid of `nx * ny` near-square cells with `nx * ny` close to `target`.
/// Column counts on either side of the ideal are tried; on equal count
/// error the wider grid wins, so two cells on a square image split
/// left/right.
pub(crate) fn grid_shape(w: usize, h: usize, target: usize) -> (usize, usize) {
    let ideal = (target as f64 * w as f64 / h as f64).sqrt();
    let shape = |nx: usize| {
        let nx = nx.clamp(1, w);
        let ny = ((target as f64 / nx as f64).round() as usize).clamp(1, h);
        (nx, ny)
    };
    let narrow = shape(ideal.floor() as usize);
    let wide = shape(ideal.ceil() as usize);
    let err = |(nx, ny): (usize, usize)| (nx * ny).abs_diff(target);
    if err(wide) <= err(narrow) {
        wide
    } else {
        narrow
    }
}

fn seed_centers(lab: &[[f64; 3]], w: usize, h: usize, nx: usize, ny: usize) -> Vec<Center> {
    let gradient = |x: usize, y: usize| {
        let at = |x: usize, y: usize| lab[y * w + x];
        let (l, r) = (at(x.saturating_sub(1), y), at((x + 1).min(w - 1), y));
        let (u, d) = (at(x, y.saturating_sub(1)), at(x, (y + 1).min(h - 1)));
        let sq = |a: [f64; 3], b: [f64; 3]| (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>();
        sq(l, r) + sq(u, d)
    };
    let mut centers = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let sx = ((i as f64 + 0.5) * w as f64 / nx as f64).floor() as usize;
            let sy = ((j as f64 + 0.5) * h as f64 / ny as f64).floor() as usize;
            let (sx, sy) = (sx.min(w - 1), sy.min(h - 1));
            // the seed itself wins ties, then scan order of the 3x3 window
            let mut best = (gradient(sx, sy), sx, sy);
            for y in sy.saturating_sub(1)..=(sy + 1).min(h - 1) {
                for x in sx.saturating_sub(1)..=(sx + 1).min(w - 1) {
                    let g = gradient(x, y);
                    if g < best.0 {
                        best = (g, x, y);
                    }
                }
            }
            let (_, x, y) = best;
            centers.push(Center {
                lab: lab[y * w + x],
                x: x as f64,
                y: y as f64,
            });
        }
    }
    centers
}

/// Pixels no center reached inside its search window go to the nearest
/// center overall.
fn assign_uncovered(labels: &mut [u32], centers: &[Center], lab: &[[f64; 3]], w: usize, spatial_weight: f64) {
    for (i, label) in labels.iter_mut().enumerate() {
        if *label != u32::MAX {
            continue;
        }
        let (x, y) = (i % w, i / w);
        let mut best = (f64::INFINITY, 0u32);
        for (k, c) in centers.iter().enumerate() {
            let d = distance(c, &lab[i], x, y, spatial_weight);
            if d < best.0 {
                best = (d, k as u32);
            }
        }
        *label = best.1;
    }
}

fn update_centers(centers: &mut [Center], labels: &[u32], lab: &[[f64; 3]], w: usize) {
    let mut acc = vec![[0.0f64; 6]; centers.len()];
    for (i, &l) in labels.iter().enumerate() {
        let a = &mut acc[l as usize];
        a[0] += lab[i][0];
        a[1] += lab[i][1];
        a[2] += lab[i][2];
        a[3] += (i % w) as f64;
        a[4] += (i / w) as f64;
        a[5] += 1.0;
    }
    for (c, a) in centers.iter_mut().zip(&acc) {
        if a[5] > 0.0 {
            c.lab = [a[0] / a[5], a[1] / a[5], a[2] / a[5]];
            c.x = a[3] / a[5];
            c.y = a[4] / a[5];
        }
    }
}

/// Relabels so every superpixel is one 4-connected region.
///
/// For each cluster label the largest connected piece survives if it has at
/// least `min_size` pixels; every other piece is an orphan and joins the
/// largest adjacent surviving region (smallest id on ties). Surviving
/// regions are numbered in scan order of their first pixel.
pub(crate) fn enforce_connectivity(labels: &[u32], w: usize, h: usize, min_size: usize) -> Vec<SuperpixelId> {
    let n = w * h;
    let mut comp = vec![usize::MAX; n];
    let mut comp_label = Vec::new();
    let mut comp_size = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = comp_label.len();
        let l = labels[start];
        comp[start] = id;
        stack.push(start);
        let mut size = 0usize;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let neighbors = [
                (x > 0).then(|| i - 1),
                (x + 1 < w).then(|| i + 1),
                (y > 0).then(|| i - w),
                (y + 1 < h).then(|| i + w),
            ];
            for j in neighbors.into_iter().flatten() {
                if comp[j] == usize::MAX && labels[j] == l {
                    comp[j] = id;
                    stack.push(j);
                }
            }
        }
        comp_label.push(l);
        comp_size.push(size);
    }
    let ncomp = comp_label.len();

    let max_label = comp_label.iter().copied().max().unwrap_or(0) as usize;
    let mut largest: Vec<Option<usize>> = vec![None; max_label + 1];
    for c in 0..ncomp {
        let slot = &mut largest[comp_label[c] as usize];
        if slot.is_none_or(|b| comp_size[c] > comp_size[b]) {
            *slot = Some(c);
        }
    }
    let mut kept = vec![false; ncomp];
    for c in largest.iter().flatten().copied() {
        kept[c] = comp_size[c] >= min_size;
    }
    if !kept.iter().any(|&k| k) {
        let biggest = (0..ncomp)
            .max_by(|&a, &b| comp_size[a].cmp(&comp_size[b]).then(b.cmp(&a)))
            .expect("raster is nonempty");
        kept[biggest] = true;
    }

    let mut region: Vec<Option<usize>> = vec![None; ncomp];
    let mut region_size = Vec::new();
    for c in 0..ncomp {
        if kept[c] {
            region[c] = Some(region_size.len());
            region_size.push(comp_size[c]);
        }
    }

    let mut neighbors = vec![Vec::new(); ncomp];
    for i in 0..n {
        let (x, y) = (i % w, i / w);
        for j in [(x + 1 < w).then(|| i + 1), (y + 1 < h).then(|| i + w)]
            .into_iter()
            .flatten()
        {
            let (a, b) = (comp[i], comp[j]);
            if a != b {
                neighbors[a].push(b);
                neighbors[b].push(a);
            }
        }
    }
    for list in &mut neighbors {
        list.sort_unstable();
        list.dedup();
    }

    let mut pending: Vec<usize> = (0..ncomp).filter(|&c| !kept[c]).collect();
    while !pending.is_empty() {
        let before = pending.len();
        pending.retain(|&c| {
            let target = neighbors[c]
                .iter()
                .filter_map(|&nb| region[nb])
                .max_by(|&a, &b| region_size[a].cmp(&region_size[b]).then(b.cmp(&a)));
            match target {
                Some(r) => {
                    region[c] = Some(r);
                    region_size[r] += comp_size[c];
                    false
                }
                None => true,
            }
        });
        assert!(pending.len() < before, "orphan pieces must touch a resolved region");
    }

    comp.iter()
        .map(|&c| region[c].expect("all pieces resolved") as SuperpixelId)
        .collect()
}
