use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{gray_png, PixelPoint};
use crate::superpixels::{SuperpixelId, SuperpixelMap};

use super::{BoxPrior, Click, Polarity};

/// Largest guidance value; also what "no click of this polarity" encodes to.
pub const GUIDANCE_CEILING: f64 = 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceKind {
    EuclideanPos,
    EuclideanNeg,
    SpPos,
    SpNeg,
    Spbox,
    Bbox,
    BboxDt,
    Constant,
}

impl GuidanceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::EuclideanPos => "euclidean_pos",
            Self::EuclideanNeg => "euclidean_neg",
            Self::SpPos => "sp_pos",
            Self::SpNeg => "sp_neg",
            Self::Spbox => "spbox",
            Self::Bbox => "bbox",
            Self::BboxDt => "bbox_dt",
            Self::Constant => "constant",
        }
    }

    pub const ALL: [GuidanceKind; 8] = [
        Self::EuclideanPos,
        Self::EuclideanNeg,
        Self::SpPos,
        Self::SpNeg,
        Self::Spbox,
        Self::Bbox,
        Self::BboxDt,
        Self::Constant,
    ];
}

impl std::str::FromStr for GuidanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownGuidanceKind(s.to_string()))
    }
}

/// A single-channel raster with values in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceMap {
    width: u32,
    height: u32,
    values: Vec<f64>,
    kind: GuidanceKind,
}

impl GuidanceMap {
    fn from_values(width: u32, height: u32, values: Vec<f64>, kind: GuidanceKind) -> Self {
        debug_assert!(values.iter().all(|v| (0.0..=GUIDANCE_CEILING).contains(v)));
        Self {
            width,
            height,
            values,
            kind,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn kind(&self) -> GuidanceKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    /// Elementwise minimum; keeps the kind of `self`.
    pub fn pointwise_min(&self, other: &GuidanceMap) -> Result<GuidanceMap> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::DimensionMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: other.width,
                right_h: other.height,
            });
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a.min(*b)).collect();
        Ok(Self::from_values(self.width, self.height, values, self.kind))
    }

    /// Values rounded to the nearest integer, as an 8-bit PNG.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let raw = self.values.iter().map(|v| v.round() as u8).collect();
        gray_png(self.width, self.height, raw)
    }
}

fn truncate(d: f64) -> f64 {
    d.min(GUIDANCE_CEILING)
}

fn clicked_superpixels(sp: &SuperpixelMap, clicks: &[Click], polarity: Polarity) -> Result<Vec<SuperpixelId>> {
    let mut ids = clicks
        .iter()
        .filter(|c| c.polarity == polarity)
        .map(|c| sp.superpixel_of(c.position))
        .collect::<Result<Vec<_>>>()?;
    ids.sort_unstable();
    ids.dedup();
    Ok(ids)
}

/// Superpixel distance map: each pixel takes the smallest centroid distance
/// from its superpixel to any clicked superpixel of `polarity`, capped at 255.
/// Without such clicks the map is constant 255.
pub fn superpixel_guidance(sp: &SuperpixelMap, clicks: &[Click], polarity: Polarity) -> Result<GuidanceMap> {
    let kind = match polarity {
        Polarity::Positive => GuidanceKind::SpPos,
        Polarity::Negative => GuidanceKind::SpNeg,
    };
    let clicked = clicked_superpixels(sp, clicks, polarity)?;
    if clicked.is_empty() {
        return Ok(constant_map(sp.width(), sp.height(), GUIDANCE_CEILING, kind));
    }
    let centroids = sp.centroids();
    let per_superpixel: Vec<f64> = centroids
        .iter()
        .map(|&(x, y)| {
            let nearest = clicked
                .iter()
                .map(|&z| {
                    let (cx, cy) = centroids[z as usize];
                    let (dx, dy) = (cx - x, cy - y);
                    (dx * dx + dy * dy).sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            truncate(nearest)
        })
        .collect();
    let values = sp.labels().iter().map(|&l| per_superpixel[l as usize]).collect();
    Ok(GuidanceMap::from_values(sp.width(), sp.height(), values, kind))
}

/// Pixel-grid Euclidean distance to the nearest click of `polarity`, capped
/// at 255.
pub fn euclidean_guidance(clicks: &[Click], polarity: Polarity, width: u32, height: u32) -> GuidanceMap {
    let kind = match polarity {
        Polarity::Positive => GuidanceKind::EuclideanPos,
        Polarity::Negative => GuidanceKind::EuclideanNeg,
    };
    let points: Vec<PixelPoint> = clicks
        .iter()
        .filter(|c| c.polarity == polarity)
        .map(|c| c.position)
        .collect();
    if points.is_empty() {
        return constant_map(width, height, GUIDANCE_CEILING, kind);
    }
    let mut values = Vec::with_capacity(width as usize * height as usize);
    for y in 0..height {
        for x in 0..width {
            let p = PixelPoint::new(x, y);
            let d = points.iter().map(|&c| p.distance(c)).fold(f64::INFINITY, f64::min);
            values.push(truncate(d));
        }
    }
    GuidanceMap::from_values(width, height, values, kind)
}

/// 255 on every pixel of a boxed superpixel, 0 elsewhere.
pub fn spbox_guidance(sp: &SuperpixelMap, prior: &BoxPrior) -> GuidanceMap {
    let mut inside = vec![false; sp.count() as usize];
    for &id in prior.boxed_set() {
        if let Some(slot) = inside.get_mut(id as usize) {
            *slot = true;
        }
    }
    let values = sp
        .labels()
        .iter()
        .map(|&l| if inside[l as usize] { GUIDANCE_CEILING } else { 0.0 })
        .collect();
    GuidanceMap::from_values(sp.width(), sp.height(), values, GuidanceKind::Spbox)
}

/// 255 inside the closed rectangle `[e0, e1]`, 0 outside.
pub fn bbox_guidance(prior: &BoxPrior, width: u32, height: u32) -> GuidanceMap {
    let (e0, e1) = (prior.e0(), prior.e1());
    let mut values = Vec::with_capacity(width as usize * height as usize);
    for y in 0..height {
        for x in 0..width {
            let inside = (e0.x..=e1.x).contains(&x) && (e0.y..=e1.y).contains(&y);
            values.push(if inside { GUIDANCE_CEILING } else { 0.0 });
        }
    }
    GuidanceMap::from_values(width, height, values, GuidanceKind::Bbox)
}

/// Euclidean distance to the rectangle outline, 0 on the outline, capped at
/// 255. Inside pixels measure to the nearest edge.
pub fn bbox_dt_guidance(prior: &BoxPrior, width: u32, height: u32) -> GuidanceMap {
    let (x0, y0) = (prior.e0().x as f64, prior.e0().y as f64);
    let (x1, y1) = (prior.e1().x as f64, prior.e1().y as f64);
    let mut values = Vec::with_capacity(width as usize * height as usize);
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x as f64, y as f64);
            let inside = (x0..=x1).contains(&px) && (y0..=y1).contains(&py);
            let d = if inside {
                (px - x0).min(x1 - px).min(py - y0).min(y1 - py)
            } else {
                let dx = (x0 - px).max(0.0).max(px - x1);
                let dy = (y0 - py).max(0.0).max(py - y1);
                (dx * dx + dy * dy).sqrt()
            };
            values.push(truncate(d));
        }
    }
    GuidanceMap::from_values(width, height, values, GuidanceKind::BboxDt)
}

/// A map holding `value` everywhere (clamped into `[0, 255]`).
pub fn constant_guidance(width: u32, height: u32, value: f64) -> GuidanceMap {
    constant_map(width, height, value, GuidanceKind::Constant)
}

fn constant_map(width: u32, height: u32, value: f64, kind: GuidanceKind) -> GuidanceMap {
    let v = value.clamp(0.0, GUIDANCE_CEILING);
    GuidanceMap::from_values(width, height, vec![v; width as usize * height as usize], kind)
}
