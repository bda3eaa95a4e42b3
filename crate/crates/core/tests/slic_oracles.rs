//! SLIC checked against independent clusterings on images where the answer
//! can be computed another way.

use spbox_core::superpixels::{rgb_to_lab, slic};
use spbox_core::Image;

/// Plain spatial k-means with the SLIC neighborhood restriction dropped: on
/// a uniform image the color term is zero, so assignment is nearest center.
fn spatial_kmeans(w: usize, h: usize, mut centers: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    loop {
        let mut sums = vec![(0.0, 0.0, 0usize); centers.len()];
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f64, y as f64);
                let k = (0..centers.len())
                    .min_by(|&a, &b| {
                        let da = (centers[a].0 - px).powi(2) + (centers[a].1 - py).powi(2);
                        let db = (centers[b].0 - px).powi(2) + (centers[b].1 - py).powi(2);
                        da.total_cmp(&db)
                    })
                    .unwrap();
                sums[k].0 += px;
                sums[k].1 += py;
                sums[k].2 += 1;
            }
        }
        let next: Vec<(f64, f64)> = sums.iter().map(|&(sx, sy, n)| (sx / n as f64, sy / n as f64)).collect();
        let moved = next
            .iter()
            .zip(&centers)
            .map(|(a, b)| (a.0 - b.0).abs().max((a.1 - b.1).abs()))
            .fold(0.0, f64::max);
        centers = next;
        if moved < 1e-9 {
            return centers;
        }
    }
}

#[test]
fn uniform_image_gives_the_converged_spatial_grid() {
    let image = Image::filled(100, 100, [120, 140, 90]).unwrap();
    let sp = slic(&image, 100, 10.0).unwrap();
    assert_eq!(sp.count(), 100);

    let seeds: Vec<(f64, f64)> = (0..10)
        .flat_map(|j| (0..10).map(move |i| (i as f64 * 10.0 + 5.0, j as f64 * 10.0 + 5.0)))
        .collect();
    let oracle = spatial_kmeans(100, 100, seeds.clone());

    for &(cx, cy) in sp.centroids() {
        let nearest = |pts: &[(f64, f64)]| {
            pts.iter()
                .map(|&(x, y)| ((x - cx).powi(2) + (y - cy).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        };
        assert!(nearest(&oracle) <= 1.0, "centroid ({cx}, {cy}) far from converged grid");
        assert!(nearest(&seeds) <= 1.0, "centroid ({cx}, {cy}) far from its seed cell");
    }
}

/// Best 2-means partition of `points`, found by running Lloyd from every
/// pair of distinct starting points.
fn brute_force_two_means(points: &[[f64; 5]]) -> Vec<bool> {
    let dist = |a: &[f64; 5], b: &[f64; 5]| a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
    let mean = |pts: &mut dyn Iterator<Item = &[f64; 5]>| {
        let mut s = [0.0; 5];
        let mut n = 0.0;
        for p in pts {
            for (a, b) in s.iter_mut().zip(p) {
                *a += b;
            }
            n += 1.0;
        }
        s.map(|v| v / n)
    };
    let mut best: Option<(f64, Vec<bool>)> = None;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let (mut c0, mut c1) = (points[i], points[j]);
            if dist(&c0, &c1) == 0.0 {
                continue;
            }
            let mut side = vec![false; points.len()];
            loop {
                let next: Vec<bool> = points.iter().map(|p| dist(p, &c1) < dist(p, &c0)).collect();
                if next.iter().all(|&s| s) || next.iter().all(|&s| !s) {
                    break;
                }
                let stable = next == side;
                side = next;
                if stable {
                    break;
                }
                c0 = mean(&mut points.iter().zip(&side).filter(|(_, &s)| !s).map(|(p, _)| p));
                c1 = mean(&mut points.iter().zip(&side).filter(|(_, &s)| s).map(|(p, _)| p));
            }
            let sse: f64 = points
                .iter()
                .zip(&side)
                .map(|(p, &s)| dist(p, if s { &c1 } else { &c0 }))
                .sum();
            if best.as_ref().is_none_or(|(b, _)| sse < *b) {
                best = Some((sse, side));
            }
        }
    }
    best.unwrap().1
}

#[test]
fn two_tone_halves_match_brute_force_two_means() {
    let (red, blue) = ([220, 30, 30], [30, 40, 210]);
    let full = Image::from_fn(64, 64, |x, _| if x < 32 { red } else { blue }).unwrap();
    let sp = slic(&full, 2, 1.0).unwrap();
    assert_eq!(sp.count(), 2);

    // 8x8 downscale: each cell is one 8x8 block of the full image
    let compactness = 1.0;
    let step = (64.0f64 / 2.0).sqrt();
    let xy_scale = compactness / step;
    let points: Vec<[f64; 5]> = (0..64)
        .map(|i| {
            let (x, y) = (i % 8, i / 8);
            let lab = rgb_to_lab(full.pixel(x * 8, y * 8));
            [lab[0], lab[1], lab[2], x as f64 * xy_scale, y as f64 * xy_scale]
        })
        .collect();
    let oracle = brute_force_two_means(&points);

    let labels = sp.labels();
    let first = labels[0];
    for y in 0..64usize {
        for x in 0..64usize {
            let expected = oracle[(y / 8) * 8 + x / 8] != oracle[0];
            assert_eq!(labels[y * 64 + x] != first, expected, "pixel ({x}, {y})");
        }
    }
    // and the oracle itself splits along the color boundary
    assert!((0..64).all(|i| (oracle[i] != oracle[0]) == (i % 8 >= 4)));
}
