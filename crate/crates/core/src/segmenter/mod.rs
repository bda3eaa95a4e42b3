//! Segmentation backends. A backend turns an image, its superpixels, the
//! guidance channels and the click log into a binary mask.
//!
//! The reference backend, [`GraphCut`], minimizes a binary energy over
//! superpixels exactly by min-cut. [`Oracle`] returns the ground truth once
//! enough clicks have been placed and exists to test the harness.

mod gmm;
mod graphcut;
mod maxflow;
mod registry;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::{
    bbox_dt_guidance, bbox_guidance, euclidean_guidance, spbox_guidance, superpixel_guidance, BoxPrior, Click,
    GuidanceKind, GuidanceMap, Polarity, GUIDANCE_CEILING,
};
use crate::raster::{iou, BinaryMask, Image};
use crate::superpixels::SuperpixelMap;

pub use gmm::ColorModel;
pub use graphcut::{EnergyModel, GraphCut, GraphCutParams};
pub use maxflow::FlowGraph;
pub use registry::{BackendRegistry, Oracle};

/// Which click encoding and localization channel feed the backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum EncoderVariant {
    /// Euclidean click maps, no localization channel.
    #[serde(rename = "eu")]
    Euclidean,
    /// Superpixel click maps, no localization channel.
    #[serde(rename = "sp")]
    Superpixel,
    #[serde(rename = "sp+bbox")]
    SuperpixelBbox,
    #[serde(rename = "sp+dt")]
    SuperpixelBboxDt,
    #[default]
    #[serde(rename = "sp+spbox")]
    SuperpixelSpbox,
}

impl EncoderVariant {
    pub const ALL: [EncoderVariant; 5] = [
        Self::Euclidean,
        Self::Superpixel,
        Self::SuperpixelBbox,
        Self::SuperpixelBboxDt,
        Self::SuperpixelSpbox,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Euclidean => "eu",
            Self::Superpixel => "sp",
            Self::SuperpixelBbox => "sp+bbox",
            Self::SuperpixelBboxDt => "sp+dt",
            Self::SuperpixelSpbox => "sp+spbox",
        }
    }

    pub fn localization(self) -> Option<GuidanceKind> {
        match self {
            Self::Euclidean | Self::Superpixel => None,
            Self::SuperpixelBbox => Some(GuidanceKind::Bbox),
            Self::SuperpixelBboxDt => Some(GuidanceKind::BboxDt),
            Self::SuperpixelSpbox => Some(GuidanceKind::Spbox),
        }
    }
}

impl fmt::Display for EncoderVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EncoderVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|v| v.as_str()).collect();
            Error::InvalidArgument(format!("unknown encoder `{s}` (expected one of {})", names.join(", ")))
        })
    }
}

/// The guidance channels handed to a backend. All maps share one extent.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceBundle {
    encoder: EncoderVariant,
    positive: GuidanceMap,
    negative: GuidanceMap,
    localization: Option<GuidanceMap>,
}

impl GuidanceBundle {
    /// Encodes `clicks` with the variant's click encoder. The localization
    /// channel is present only when the variant has one and a box exists.
    pub fn build(
        encoder: EncoderVariant,
        sp: &SuperpixelMap,
        clicks: &[Click],
        prior: Option<&BoxPrior>,
    ) -> Result<Self> {
        let (w, h) = (sp.width(), sp.height());
        let (positive, negative) = match encoder {
            EncoderVariant::Euclidean => (
                euclidean_guidance(clicks, Polarity::Positive, w, h),
                euclidean_guidance(clicks, Polarity::Negative, w, h),
            ),
            _ => (
                superpixel_guidance(sp, clicks, Polarity::Positive)?,
                superpixel_guidance(sp, clicks, Polarity::Negative)?,
            ),
        };
        let localization = match (encoder.localization(), prior) {
            (Some(GuidanceKind::Spbox), Some(p)) => Some(spbox_guidance(sp, p)),
            (Some(GuidanceKind::Bbox), Some(p)) => Some(bbox_guidance(p, w, h)),
            (Some(GuidanceKind::BboxDt), Some(p)) => Some(bbox_dt_guidance(p, w, h)),
            _ => None,
        };
        Self::from_parts(encoder, positive, negative, localization)
    }

    /// Click channels at the ceiling everywhere, as before any click.
    pub fn blank(encoder: EncoderVariant, sp: &SuperpixelMap, prior: Option<&BoxPrior>) -> Result<Self> {
        Self::build(encoder, sp, &[], prior)
    }

    pub fn from_parts(
        encoder: EncoderVariant,
        positive: GuidanceMap,
        negative: GuidanceMap,
        localization: Option<GuidanceMap>,
    ) -> Result<Self> {
        let extent = (positive.width(), positive.height());
        for map in std::iter::once(&negative).chain(localization.as_ref()) {
            if (map.width(), map.height()) != extent {
                return Err(Error::DimensionMismatch {
                    left_w: extent.0,
                    left_h: extent.1,
                    right_w: map.width(),
                    right_h: map.height(),
                });
            }
        }
        if let Some(map) = &localization {
            if !matches!(
                map.kind(),
                GuidanceKind::Spbox | GuidanceKind::Bbox | GuidanceKind::BboxDt
            ) {
                return Err(Error::InvalidArgument(format!(
                    "`{}` is not a localization channel",
                    map.kind().as_str()
                )));
            }
        }
        Ok(Self {
            encoder,
            positive,
            negative,
            localization,
        })
    }

    pub fn encoder(&self) -> EncoderVariant {
        self.encoder
    }

    pub fn width(&self) -> u32 {
        self.positive.width()
    }

    pub fn height(&self) -> u32 {
        self.positive.height()
    }

    pub fn positive(&self) -> &GuidanceMap {
        &self.positive
    }

    pub fn negative(&self) -> &GuidanceMap {
        &self.negative
    }

    pub fn localization(&self) -> Option<&GuidanceMap> {
        self.localization.as_ref()
    }

    /// The channel of the given kind, if this bundle carries it. The click
    /// channels answer to both their superpixel and Euclidean names.
    pub fn channel(&self, kind: GuidanceKind) -> Option<&GuidanceMap> {
        match kind {
            GuidanceKind::SpPos | GuidanceKind::EuclideanPos => Some(&self.positive).filter(|m| m.kind() == kind),
            GuidanceKind::SpNeg | GuidanceKind::EuclideanNeg => Some(&self.negative).filter(|m| m.kind() == kind),
            _ => self.localization.as_ref().filter(|m| m.kind() == kind),
        }
    }
}

/// Everything a backend may look at for one segmentation.
#[derive(Debug, Clone, Copy)]
pub struct SegmentRequest<'a> {
    pub image: &'a Image,
    pub sp: &'a SuperpixelMap,
    pub bundle: &'a GuidanceBundle,
    pub clicks: &'a [Click],
    pub ground_truth: Option<&'a BinaryMask>,
    /// An existing segmentation being refined.
    pub prior_mask: Option<&'a BinaryMask>,
}

impl<'a> SegmentRequest<'a> {
    pub fn new(image: &'a Image, sp: &'a SuperpixelMap, bundle: &'a GuidanceBundle, clicks: &'a [Click]) -> Self {
        Self {
            image,
            sp,
            bundle,
            clicks,
            ground_truth: None,
            prior_mask: None,
        }
    }

    pub fn with_ground_truth(mut self, gt: &'a BinaryMask) -> Self {
        self.ground_truth = Some(gt);
        self
    }

    pub fn with_prior_mask(mut self, mask: &'a BinaryMask) -> Self {
        self.prior_mask = Some(mask);
        self
    }

    fn check_extents(&self) -> Result<()> {
        let (w, h) = (self.image.width(), self.image.height());
        let others = [
            (self.sp.width(), self.sp.height()),
            (self.bundle.width(), self.bundle.height()),
        ]
        .into_iter()
        .chain(self.ground_truth.map(|m| (m.width(), m.height())))
        .chain(self.prior_mask.map(|m| (m.width(), m.height())));
        for (ow, oh) in others {
            if (ow, oh) != (w, h) {
                return Err(Error::DimensionMismatch {
                    left_w: w,
                    left_h: h,
                    right_w: ow,
                    right_h: oh,
                });
            }
        }
        for c in self.clicks {
            if !self.image.contains(c.position) {
                return Err(Error::OutOfBounds {
                    x: c.position.x.into(),
                    y: c.position.y.into(),
                    width: w,
                    height: h,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentationResult {
    #[serde(skip)]
    pub mask: BinaryMask,
    /// `true` = foreground, indexed by superpixel id.
    pub sp_labels: Vec<bool>,
    pub energy: Option<f64>,
    /// Optional per-superpixel foreground scores in `[0, 1]`.
    pub scores: Option<Vec<f64>>,
    /// IoU against the request's ground truth, when one was given.
    pub iou: Option<f64>,
    pub warnings: Vec<String>,
}

impl SegmentationResult {
    /// Pixelizes superpixel labels into a result.
    pub fn from_labels(sp: &SuperpixelMap, sp_labels: Vec<bool>) -> Self {
        let bits = sp.labels().iter().map(|&l| sp_labels[l as usize]).collect();
        let mask = BinaryMask::new(sp.width(), sp.height(), bits).expect("superpixel map extent");
        Self {
            mask,
            sp_labels,
            energy: None,
            scores: None,
            iou: None,
            warnings: Vec::new(),
        }
    }

    /// Wraps a pixel mask; superpixel labels are the per-superpixel majority.
    pub fn from_mask(sp: &SuperpixelMap, mask: BinaryMask) -> Self {
        let sp_labels = majority_labels(sp, &mask);
        Self {
            mask,
            sp_labels,
            energy: None,
            scores: None,
            iou: None,
            warnings: Vec::new(),
        }
    }

    fn with_iou(mut self, gt: Option<&BinaryMask>) -> Result<Self> {
        self.iou = gt.map(|g| iou(&self.mask, g)).transpose()?;
        Ok(self)
    }
}

/// Per superpixel: does at least half of it lie inside `mask`?
pub fn majority_labels(sp: &SuperpixelMap, mask: &BinaryMask) -> Vec<bool> {
    let mut inside = vec![0usize; sp.count() as usize];
    for (&l, &b) in sp.labels().iter().zip(mask.bits()) {
        inside[l as usize] += usize::from(b);
    }
    inside.iter().zip(sp.sizes()).map(|(&i, &s)| 2 * i >= s).collect()
}

/// Mean guidance value over each superpixel.
pub(crate) fn superpixel_means(sp: &SuperpixelMap, map: &GuidanceMap) -> Vec<f64> {
    let mut sums = vec![0.0; sp.count() as usize];
    for (&l, &v) in sp.labels().iter().zip(map.values()) {
        sums[l as usize] += v;
    }
    sums.iter()
        .zip(sp.sizes())
        .map(|(s, &n)| s / n as f64 / GUIDANCE_CEILING)
        .collect()
}

pub trait Segmenter: Send + Sync {
    fn name(&self) -> String;

    fn segment_labels(&self, req: &SegmentRequest<'_>) -> Result<SegmentationResult>;

    /// Validates extents, runs the backend and scores the result against the
    /// ground truth when present.
    fn segment(&self, req: &SegmentRequest<'_>) -> Result<SegmentationResult> {
        req.check_extents()?;
        self.segment_labels(req)?.with_iou(req.ground_truth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guidance::{constant_guidance, init_box, BoxMode};

    fn quadrants() -> SuperpixelMap {
        let labels = (0..16u32).map(|i| (i % 4 / 2) + 2 * (i / 8)).collect();
        SuperpixelMap::from_labels(4, 4, labels).unwrap()
    }

    #[test]
    fn encoder_names_round_trip() {
        for v in EncoderVariant::ALL {
            assert_eq!(v.as_str().parse::<EncoderVariant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.as_str()));
        }
        assert!("box".parse::<EncoderVariant>().is_err());
    }

    #[test]
    fn bundle_channels_follow_the_variant() {
        let sp = quadrants();
        let clicks = [Click::positive(0, 0, 0), Click::negative(3, 3, 0)];
        let prior = init_box(&clicks[0], &clicks[1], &sp, BoxMode::CornerPair).unwrap();
        let sp_box = GuidanceBundle::build(EncoderVariant::SuperpixelSpbox, &sp, &clicks, Some(&prior)).unwrap();
        assert_eq!(sp_box.localization().unwrap().kind(), GuidanceKind::Spbox);
        assert!(sp_box.channel(GuidanceKind::SpPos).is_some());
        assert!(sp_box.channel(GuidanceKind::Bbox).is_none());
        let none = GuidanceBundle::build(EncoderVariant::Superpixel, &sp, &clicks, Some(&prior)).unwrap();
        assert!(none.localization().is_none());
        let eu = GuidanceBundle::build(EncoderVariant::Euclidean, &sp, &clicks, None).unwrap();
        assert_eq!(eu.positive().kind(), GuidanceKind::EuclideanPos);
        let dt = GuidanceBundle::build(EncoderVariant::SuperpixelBboxDt, &sp, &clicks, Some(&prior)).unwrap();
        assert_eq!(dt.localization().unwrap().kind(), GuidanceKind::BboxDt);
    }

    #[test]
    fn bundle_rejects_mixed_extents() {
        let a = constant_guidance(4, 4, 255.0);
        let b = constant_guidance(4, 5, 255.0);
        assert!(GuidanceBundle::from_parts(EncoderVariant::Superpixel, a.clone(), b, None).is_err());
        assert!(GuidanceBundle::from_parts(EncoderVariant::Superpixel, a.clone(), a.clone(), Some(a)).is_err());
    }

    #[test]
    fn majority_counts_half_as_inside() {
        let sp = quadrants();
        // two of the four pixels of superpixel 0, none elsewhere
        let mask = BinaryMask::from_fn(4, 4, |x, y| x < 2 && y == 0);
        assert_eq!(majority_labels(&sp, &mask), vec![true, false, false, false]);
        let r = SegmentationResult::from_labels(&sp, vec![false, true, false, false]);
        assert_eq!(r.mask.area(), 4);
        assert!(r.mask.get(2, 1) && !r.mask.get(1, 1));
    }
}
