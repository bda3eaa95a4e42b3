//! Seeded simulation of user clicks: the perturbed center click, the first
//! negative click with its box filter, training-style corrective clicks and
//! the largest-error-region policy used for evaluation.

use std::f64::consts::TAU;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::{init_box, BoxMode, BoxPrior, Click, ClickState, Polarity};
use crate::raster::{connected_components, interior_pole, BinaryMask, Component, PixelPoint};
use crate::superpixels::SuperpixelMap;

/// Generator behind every simulated click.
pub type SimRng = ChaCha8Rng;

/// Independent generator for one `(seed, stream)` pair, e.g. one benchmark
/// instance.
pub fn rng_for(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationPolicy {
    pub seed: u64,
    /// Center-click displacement range in pixels.
    pub perturb_min: f64,
    pub perturb_max: f64,
    pub box_iou_threshold: f64,
    pub max_retries: usize,
    /// How many superpixels each side of the prior contributes as
    /// training-style corrective clicks.
    pub corrective_min: usize,
    pub corrective_max: usize,
}

impl Default for SimulationPolicy {
    fn default() -> Self {
        Self {
            seed: 0,
            perturb_min: 20.0,
            perturb_max: 50.0,
            box_iou_threshold: 0.7,
            max_retries: 50,
            corrective_min: 2,
            corrective_max: 5,
        }
    }
}

impl SimulationPolicy {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.perturb_min && self.perturb_min <= self.perturb_max) {
            return Err(Error::InvalidArgument(format!(
                "perturbation range [{}, {}] is invalid",
                self.perturb_min, self.perturb_max
            )));
        }
        if !(self.box_iou_threshold > 0.0 && self.box_iou_threshold <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "box IoU threshold {} must lie in (0, 1]",
                self.box_iou_threshold
            )));
        }
        if self.corrective_min > self.corrective_max {
            return Err(Error::InvalidArgument("corrective_min exceeds corrective_max".into()));
        }
        Ok(())
    }

    pub fn rng(&self, stream: u64) -> SimRng {
        rng_for(self.seed, stream)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterClick {
    pub click: Click,
    /// Centroid, or its in-mask relocation for concave shapes.
    pub origin: PixelPoint,
    /// Sampled displacement radius; 0 when falling back to `origin`.
    pub displacement: f64,
    pub fallback: bool,
}

fn offset_point(from: PixelPoint, radius: f64, angle: f64) -> (i64, i64) {
    (
        (from.x as f64 + radius * angle.cos()).round() as i64,
        (from.y as f64 + radius * angle.sin()).round() as i64,
    )
}

fn in_bounds(mask: &BinaryMask, x: i64, y: i64) -> Option<PixelPoint> {
    (x >= 0 && y >= 0 && x < mask.width() as i64 && y < mask.height() as i64)
        .then(|| PixelPoint::new(x as u32, y as u32))
}

/// Positive click near the object center, displaced by a uniform radius
/// inside `[perturb_min, perturb_max]` at a uniform angle and kept inside
/// the mask.
pub fn simulate_center_click(gt: &BinaryMask, policy: &SimulationPolicy, rng: &mut SimRng) -> Result<CenterClick> {
    let (cx, cy) = gt.centroid().ok_or(Error::EmptyMask)?;
    let rounded = PixelPoint::new(cx.round() as u32, cy.round() as u32);
    let origin = if gt.at(rounded) { rounded } else { interior_pole(gt)? };
    for _ in 0..policy.max_retries {
        let radius = rng.random_range(policy.perturb_min..=policy.perturb_max);
        let angle = rng.random::<f64>() * TAU;
        let (x, y) = offset_point(origin, radius, angle);
        if let Some(p) = in_bounds(gt, x, y).filter(|&p| gt.at(p)) {
            return Ok(CenterClick {
                click: Click::new(Polarity::Positive, p, 0),
                origin,
                displacement: radius,
                fallback: false,
            });
        }
    }
    Ok(CenterClick {
        click: Click::new(Polarity::Positive, origin, 0),
        origin,
        displacement: 0.0,
        fallback: true,
    })
}

/// `d = (r1 - r2) * w + (1 + r2) * h` for given draws.
pub fn distance_from_draws(r1: f64, r2: f64, w: f64, h: f64) -> f64 {
    (r1 - r2) * w + (1.0 + r2) * h
}

/// Minimum center-to-negative distance for a ground-truth box of extent
/// `w x h`, with `r1 ~ U(0, 1)` and `r2 ~ N(0, 1)`. Non-positive values are
/// redrawn.
pub fn sample_distance_d(w: f64, h: f64, rng: &mut SimRng) -> f64 {
    loop {
        let r1 = rng.random::<f64>();
        let r2: f64 = rng.sample(StandardNormal);
        let d = distance_from_draws(r1, r2, w, h);
        if d > 0.0 {
            return d;
        }
    }
}

/// IoU of two closed pixel rectangles.
pub fn rectangle_iou(a: (PixelPoint, PixelPoint), b: (PixelPoint, PixelPoint)) -> f64 {
    let area = |(p, q): (PixelPoint, PixelPoint)| (q.x - p.x + 1) as f64 * (q.y - p.y + 1) as f64;
    let ix0 = a.0.x.max(b.0.x);
    let iy0 = a.0.y.max(b.0.y);
    let ix1 = a.1.x.min(b.1.x);
    let iy1 = a.1.y.min(b.1.y);
    let inter = if ix0 <= ix1 && iy0 <= iy1 {
        (ix1 - ix0 + 1) as f64 * (iy1 - iy0 + 1) as f64
    } else {
        0.0
    };
    inter / (area(a) + area(b) - inter)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstNegative {
    pub click: Click,
    pub prior: BoxPrior,
    /// The last sampled minimum distance.
    pub distance_d: f64,
    /// IoU between the built box and the ground-truth bounding box.
    pub box_iou: f64,
    /// Set when no sampled candidate passed and the corner rule was used.
    pub fallback: bool,
}

/// Background click at least `d` pixels from the center click whose
/// center-corner box overlaps the ground-truth box with IoU at or above the
/// policy threshold. After `max_retries` failures the click goes to the
/// ground-truth box corner farthest from the center (or the nearest
/// background pixel to it) and the result is flagged as a fallback.
pub fn simulate_first_negative(
    gt: &BinaryMask,
    center: &Click,
    sp: &SuperpixelMap,
    policy: &SimulationPolicy,
    rng: &mut SimRng,
) -> Result<FirstNegative> {
    let (g0, g1) = gt.bounding_box().ok_or(Error::EmptyMask)?;
    if gt.area() == gt.bits().len() {
        return Err(Error::Simulation(
            "ground truth covers the whole image; no background to click".into(),
        ));
    }
    let gt_box = (g0, g1);
    let (bw, bh) = ((g1.x - g0.x + 1) as f64, (g1.y - g0.y + 1) as f64);
    let c = center.position;
    let build = |p: PixelPoint| init_box(center, &Click::new(Polarity::Negative, p, 0), sp, BoxMode::CenterCorner);

    let mut d = 0.0;
    for _ in 0..policy.max_retries {
        d = sample_distance_d(bw, bh, rng);
        let radius = rng.random_range(d..=1.5 * d);
        let angle = rng.random::<f64>() * TAU;
        let (x, y) = offset_point(c, radius, angle);
        let p = PixelPoint::new(
            x.clamp(0, gt.width() as i64 - 1) as u32,
            y.clamp(0, gt.height() as i64 - 1) as u32,
        );
        if gt.at(p) || p.distance(c) < d {
            continue;
        }
        let Ok(prior) = build(p) else { continue };
        let box_iou = rectangle_iou((prior.e0(), prior.e1()), gt_box);
        if box_iou >= policy.box_iou_threshold {
            return Ok(FirstNegative {
                click: Click::new(Polarity::Negative, p, 0),
                prior,
                distance_d: d,
                box_iou,
                fallback: false,
            });
        }
    }

    let (w, h) = (gt.width() as i64, gt.height() as i64);
    let corners = |x0: i64, y0: i64, x1: i64, y1: i64| {
        let mut pts: Vec<PixelPoint> = [(x0, y0), (x1, y0), (x0, y1), (x1, y1)]
            .into_iter()
            .map(|(x, y)| PixelPoint::new(x.clamp(0, w - 1) as u32, y.clamp(0, h - 1) as u32))
            .collect();
        // farthest first; the sort is stable so equal distances keep corner order
        pts.sort_by(|a, b| b.distance(c).total_cmp(&a.distance(c)));
        pts
    };
    let (x0, y0, x1, y1) = (g0.x as i64, g0.y as i64, g1.x as i64, g1.y as i64);
    let mut candidates = corners(x0, y0, x1, y1);
    candidates.extend(corners(x0 - 1, y0 - 1, x1 + 1, y1 + 1));
    let farthest = candidates[0];
    for p in candidates {
        if gt.at(p) {
            continue;
        }
        if let Ok(prior) = build(p) {
            let box_iou = rectangle_iou((prior.e0(), prior.e1()), gt_box);
            return Ok(FirstNegative {
                click: Click::new(Polarity::Negative, p, 0),
                prior,
                distance_d: d,
                box_iou,
                fallback: true,
            });
        }
    }
    // nearest usable background pixel to the farthest corner
    let mut best: Option<(f64, PixelPoint, BoxPrior)> = None;
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            let p = PixelPoint::new(x, y);
            if gt.at(p) || p.x == c.x || p.y == c.y {
                continue;
            }
            let dist = p.distance(farthest);
            if best.as_ref().is_none_or(|(bd, _, _)| dist < *bd) {
                if let Ok(prior) = build(p) {
                    best = Some((dist, p, prior));
                }
            }
        }
    }
    let (_, p, prior) = best.ok_or_else(|| Error::Simulation("no background pixel can anchor a box".into()))?;
    let box_iou = rectangle_iou((prior.e0(), prior.e1()), gt_box);
    Ok(FirstNegative {
        click: Click::new(Polarity::Negative, p, 0),
        prior,
        distance_d: d,
        box_iou,
        fallback: true,
    })
}

/// Training-style corrective clicks: a random 2-5 superpixels outside the
/// prior become positive clicks and a random 2-5 inside become negative
/// clicks, each placed on the member pixel nearest the centroid. A side with
/// no superpixels contributes nothing; a side with fewer than the drawn
/// count contributes all it has.
pub fn simulate_corrective_clicks(
    state: &ClickState,
    sp: &SuperpixelMap,
    policy: &SimulationPolicy,
    rng: &mut SimRng,
) -> Result<Vec<Click>> {
    let boxed = state.box_prior().boxed_set();
    let outside: Vec<u32> = (0..sp.count()).filter(|id| !boxed.contains(id)).collect();
    let inside: Vec<u32> = boxed.iter().copied().collect();
    let mut index = state.next_index();
    let mut clicks = Vec::new();
    for (pool, polarity) in [(outside, Polarity::Positive), (inside, Polarity::Negative)] {
        if pool.is_empty() {
            continue;
        }
        let k = rng
            .random_range(policy.corrective_min..=policy.corrective_max)
            .min(pool.len());
        for i in sample(rng, pool.len(), k) {
            let position = sp.representative_pixel(pool[i])?;
            clicks.push(Click::new(polarity, position, index));
            index += 1;
        }
    }
    Ok(clicks)
}

/// Mislabeled regions of a prediction, each list sorted largest first.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRegions {
    pub false_negative_components: Vec<Component>,
    pub false_positive_components: Vec<Component>,
}

pub fn error_regions(pred: &BinaryMask, gt: &BinaryMask) -> Result<ErrorRegions> {
    Ok(ErrorRegions {
        false_negative_components: connected_components(&gt.difference(pred)?),
        false_positive_components: connected_components(&pred.difference(gt)?),
    })
}

/// Evaluation click: the interior pole of the largest mislabeled component,
/// positive for a missed object part and negative for a spurious one. On
/// equal areas the missed part wins.
pub fn next_eval_click(pred: &BinaryMask, gt: &BinaryMask, state: &ClickState, sp: &SuperpixelMap) -> Result<Click> {
    if (pred.width(), pred.height()) != (sp.width(), sp.height()) {
        return Err(Error::DimensionMismatch {
            left_w: pred.width(),
            left_h: pred.height(),
            right_w: sp.width(),
            right_h: sp.height(),
        });
    }
    let regions = error_regions(pred, gt)?;
    let fn_top = regions.false_negative_components.first();
    let fp_top = regions.false_positive_components.first();
    let (component, polarity) = match (fn_top, fp_top) {
        (None, None) => {
            return Err(Error::Simulation("prediction already equals the ground truth".into()));
        }
        (Some(f), None) => (f, Polarity::Positive),
        (None, Some(p)) => (p, Polarity::Negative),
        (Some(f), Some(p)) if f.area() >= p.area() => (f, Polarity::Positive),
        (_, Some(p)) => (p, Polarity::Negative),
    };
    let pole = interior_pole(&component.to_mask(pred.width(), pred.height()))?;
    Ok(Click::new(polarity, pole, state.next_index()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guidance::BoxPrior;

    fn disk(w: u32, h: u32, cx: f64, cy: f64, r: f64) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r)
    }

    fn grid_sp(w: u32, h: u32, cell: u32) -> SuperpixelMap {
        let cols = w.div_ceil(cell);
        let labels = (0..w * h).map(|i| (i % w) / cell + cols * ((i / w) / cell)).collect();
        SuperpixelMap::from_labels(w, h, labels).unwrap()
    }

    #[test]
    fn center_click_in_large_disk() {
        let gt = disk(300, 300, 150.0, 150.0, 120.0);
        let policy = SimulationPolicy::with_seed(7);
        let mut rng = policy.rng(0);
        for _ in 0..200 {
            let c = simulate_center_click(&gt, &policy, &mut rng).unwrap();
            assert!(gt.at(c.click.position));
            assert!(!c.fallback);
            assert!((20.0..=50.0).contains(&c.displacement));
            let moved = c.click.position.distance(c.origin);
            assert!((19.0..=51.0).contains(&moved), "moved {moved}");
        }
    }

    #[test]
    fn center_click_single_pixel_falls_back() {
        let gt = BinaryMask::from_fn(40, 40, |x, y| x == 12 && y == 30);
        let c = simulate_center_click(&gt, &SimulationPolicy::default(), &mut rng_for(1, 0)).unwrap();
        assert_eq!(c.click.position, PixelPoint::new(12, 30));
        assert!(c.fallback);
    }

    #[test]
    fn center_click_on_ring_avoids_hole() {
        let ring = BinaryMask::from_fn(200, 200, |x, y| {
            let d = ((x as f64 - 100.0).powi(2) + (y as f64 - 100.0).powi(2)).sqrt();
            (40.0..=90.0).contains(&d)
        });
        let mut rng = rng_for(3, 0);
        for _ in 0..100 {
            let c = simulate_center_click(&ring, &SimulationPolicy::default(), &mut rng).unwrap();
            assert!(ring.at(c.click.position));
            assert!(ring.at(c.origin));
        }
    }

    #[test]
    fn empty_mask_errors() {
        let gt = BinaryMask::empty(5, 5);
        assert!(simulate_center_click(&gt, &SimulationPolicy::default(), &mut rng_for(0, 0)).is_err());
    }

    #[test]
    fn eq7_substitution() {
        assert_eq!(distance_from_draws(0.5, 0.0, 100.0, 50.0), 100.0);
        assert_eq!(distance_from_draws(0.0, 0.0, 37.0, 81.0), 81.0);
    }

    #[test]
    fn sampled_d_is_positive() {
        let mut rng = rng_for(5, 0);
        for _ in 0..10_000 {
            assert!(sample_distance_d(200.0, 10.0, &mut rng) > 0.0);
        }
    }

    #[test]
    fn rectangle_iou_cases() {
        let a = (PixelPoint::new(0, 0), PixelPoint::new(9, 9));
        assert_eq!(rectangle_iou(a, a), 1.0);
        let b = (PixelPoint::new(10, 0), PixelPoint::new(19, 9));
        assert_eq!(rectangle_iou(a, b), 0.0);
        let c = (PixelPoint::new(0, 0), PixelPoint::new(4, 9));
        assert_eq!(rectangle_iou(a, c), 0.5);
    }

    #[test]
    fn first_negative_contract() {
        let sp = grid_sp(160, 120, 8);
        let policy = SimulationPolicy::with_seed(11);
        let mut accepted = 0;
        for stream in 0..60 {
            let mut rng = policy.rng(stream);
            let r = 20.0 + (stream % 5) as f64 * 12.0;
            let gt = disk(160, 120, 80.0, 60.0, r.min(58.0));
            let center = simulate_center_click(&gt, &policy, &mut rng).unwrap();
            let neg = simulate_first_negative(&gt, &center.click, &sp, &policy, &mut rng).unwrap();
            assert!(!gt.at(neg.click.position));
            assert_eq!(neg.click.polarity, Polarity::Negative);
            if !neg.fallback {
                accepted += 1;
                assert!(neg.box_iou >= 0.7);
                assert!(neg.click.position.distance(center.click.position) >= neg.distance_d);
            }
        }
        assert!(accepted > 0);
    }

    #[test]
    fn first_negative_fallback_on_bordered_gt() {
        let (w, h) = (50, 40);
        let gt = BinaryMask::from_fn(w, h, |x, y| x >= 1 && y >= 1 && x < w - 1 && y < h - 1);
        let sp = grid_sp(w, h, 5);
        let policy = SimulationPolicy {
            max_retries: 0,
            ..SimulationPolicy::default()
        };
        let center = Click::positive(25, 20, 0);
        let neg = simulate_first_negative(&gt, &center, &sp, &policy, &mut rng_for(0, 0)).unwrap();
        assert!(neg.fallback);
        assert!(neg.box_iou >= 0.7, "iou {}", neg.box_iou);
        assert!(!gt.at(neg.click.position));
    }

    #[test]
    fn first_negative_needs_background() {
        let gt = BinaryMask::full(20, 20);
        let sp = grid_sp(20, 20, 5);
        let r = simulate_first_negative(
            &gt,
            &Click::positive(10, 10, 0),
            &sp,
            &SimulationPolicy::default(),
            &mut rng_for(0, 0),
        );
        assert!(matches!(r, Err(Error::Simulation(_))));
    }

    #[test]
    fn first_negative_is_deterministic() {
        let sp = grid_sp(120, 90, 6);
        let gt = disk(120, 90, 50.0, 45.0, 30.0);
        let policy = SimulationPolicy::with_seed(99);
        let run = || {
            let mut rng = policy.rng(4);
            let c = simulate_center_click(&gt, &policy, &mut rng).unwrap();
            simulate_first_negative(&gt, &c.click, &sp, &policy, &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }

    fn prior_state(sp: &SuperpixelMap, ids: &[u32]) -> ClickState {
        let mask = BinaryMask::from_fn(sp.width(), sp.height(), |x, y| {
            ids.contains(&sp.superpixel_of(PixelPoint::new(x, y)).unwrap())
        });
        ClickState::from_prior(BoxPrior::from_mask(sp, &mask).unwrap(), false)
    }

    #[test]
    fn corrective_clicks_respect_sides() {
        let sp = grid_sp(80, 80, 10);
        let state = prior_state(&sp, &[9, 10, 11, 17, 18, 19, 25, 26, 27]);
        let policy = SimulationPolicy::default();
        let mut rng = rng_for(8, 0);
        for _ in 0..50 {
            let clicks = simulate_corrective_clicks(&state, &sp, &policy, &mut rng).unwrap();
            let boxed = state.box_prior().boxed_set();
            let (pos, neg): (Vec<&Click>, Vec<&Click>) = clicks.iter().partition(|c| c.polarity == Polarity::Positive);
            assert!((2..=5).contains(&pos.len()) && (2..=5).contains(&neg.len()));
            for c in &pos {
                assert!(!boxed.contains(&sp.superpixel_of(c.position).unwrap()));
            }
            for c in &neg {
                assert!(boxed.contains(&sp.superpixel_of(c.position).unwrap()));
            }
        }
    }

    #[test]
    fn corrective_clicks_with_everything_boxed() {
        let sp = grid_sp(20, 20, 10);
        let state = prior_state(&sp, &[0, 1, 2, 3]);
        let clicks = simulate_corrective_clicks(&state, &sp, &SimulationPolicy::default(), &mut rng_for(0, 0)).unwrap();
        assert!(clicks.iter().all(|c| c.polarity == Polarity::Negative));
        assert!((2..=4).contains(&clicks.len()));
    }

    #[test]
    fn eval_click_policy() {
        let sp = grid_sp(60, 60, 6);
        let gt = BinaryMask::from_fn(60, 60, |x, y| (10..40).contains(&x) && (10..40).contains(&y));
        let state = prior_state(&sp, &[0]);
        let blob = BinaryMask::from_fn(60, 60, |x, y| (12..17).contains(&x) && (20..25).contains(&y));
        let pred = gt.difference(&blob).unwrap();
        let c = next_eval_click(&pred, &gt, &state, &sp).unwrap();
        assert_eq!(c.polarity, Polarity::Positive);
        assert_eq!(c.position, PixelPoint::new(14, 22));

        let extra = BinaryMask::from_fn(60, 60, |x, y| (45..50).contains(&x) && (45..48).contains(&y));
        let pred = BinaryMask::from_fn(60, 60, |x, y| gt.get(x, y) || extra.get(x, y));
        let c = next_eval_click(&pred, &gt, &state, &sp).unwrap();
        assert_eq!(c.polarity, Polarity::Negative);
        assert_eq!(c.position, PixelPoint::new(47, 46));

        // FN area 100 vs FP area 40
        let fn_blob = BinaryMask::from_fn(60, 60, |x, y| (10..20).contains(&x) && (10..20).contains(&y));
        let fp_blob = BinaryMask::from_fn(60, 60, |x, y| (50..55).contains(&x) && (50..58).contains(&y));
        let pred = BinaryMask::from_fn(60, 60, |x, y| (gt.get(x, y) && !fn_blob.get(x, y)) || fp_blob.get(x, y));
        assert_eq!(
            next_eval_click(&pred, &gt, &state, &sp).unwrap().polarity,
            Polarity::Positive
        );

        assert!(next_eval_click(&gt, &gt, &state, &sp).is_err());
    }
}
