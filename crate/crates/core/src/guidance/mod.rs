//! Click-to-guidance transformations and the constrained interaction state.
//!
//! The interaction starts with a positive click near the object center and a
//! negative click on nearby background. That pair fixes a box whose
//! intersecting superpixels form the localization prior. After that,
//! negative clicks are only allowed inside the prior and positive clicks only
//! outside; each one removes or adds a single superpixel.

mod maps;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, PixelPoint};
use crate::superpixels::{SuperpixelId, SuperpixelMap};

pub use maps::{
    bbox_dt_guidance, bbox_guidance, constant_guidance, euclidean_guidance, spbox_guidance, superpixel_guidance,
    GuidanceKind, GuidanceMap, GUIDANCE_CEILING,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

impl std::fmt::Display for Polarity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        })
    }
}

impl std::str::FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" | "pos" | "+" => Ok(Polarity::Positive),
            "negative" | "neg" | "-" => Ok(Polarity::Negative),
            other => Err(Error::InvalidArgument(format!("unknown polarity `{other}`"))),
        }
    }
}

/// One user click. `index` is the interaction round; the initial pair is
/// round 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Click {
    pub polarity: Polarity,
    pub position: PixelPoint,
    pub index: u32,
}

impl Click {
    pub const fn new(polarity: Polarity, position: PixelPoint, index: u32) -> Self {
        Self {
            polarity,
            position,
            index,
        }
    }

    pub const fn positive(x: u32, y: u32, index: u32) -> Self {
        Self::new(Polarity::Positive, PixelPoint::new(x, y), index)
    }

    pub const fn negative(x: u32, y: u32, index: u32) -> Self {
        Self::new(Polarity::Negative, PixelPoint::new(x, y), index)
    }
}

/// How the initial click pair becomes a box.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxMode {
    /// Box centered on the positive click, reaching the negative click's
    /// offset along each axis.
    #[default]
    CenterCorner,
    /// The two clicks are opposite corners.
    CornerPair,
}

impl std::str::FromStr for BoxMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "center_corner" | "center-corner" => Ok(BoxMode::CenterCorner),
            "corner_pair" | "corner-pair" => Ok(BoxMode::CornerPair),
            other => Err(Error::InvalidArgument(format!("unknown box mode `{other}`"))),
        }
    }
}

/// Rectangle corners plus the set of superpixels forming the localization
/// prior.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxPrior {
    e0: PixelPoint,
    e1: PixelPoint,
    boxed_set: BTreeSet<SuperpixelId>,
    mode: BoxMode,
}

impl BoxPrior {
    /// Box over the closed rectangle `[e0, e1]`; the prior holds every
    /// superpixel with at least one pixel in it.
    pub fn from_corners(sp: &SuperpixelMap, e0: PixelPoint, e1: PixelPoint, mode: BoxMode) -> Result<Self> {
        if e0.x > e1.x || e0.y > e1.y {
            return Err(Error::DegenerateBox(format!(
                "corners ({}, {}) and ({}, {}) are not ordered",
                e0.x, e0.y, e1.x, e1.y
            )));
        }
        if e1.x >= sp.width() || e1.y >= sp.height() {
            return Err(Error::OutOfBounds {
                x: e1.x as i64,
                y: e1.y as i64,
                width: sp.width(),
                height: sp.height(),
            });
        }
        let w = sp.width() as usize;
        let labels = sp.labels();
        let mut boxed_set = BTreeSet::new();
        for y in e0.y..=e1.y {
            let row = y as usize * w;
            boxed_set.extend(&labels[row + e0.x as usize..=row + e1.x as usize]);
        }
        Ok(Self {
            e0,
            e1,
            boxed_set,
            mode,
        })
    }

    /// Prior seeded from an existing mask: every superpixel touching the mask,
    /// with corners at the mask's bounding box.
    pub fn from_mask(sp: &SuperpixelMap, mask: &BinaryMask) -> Result<Self> {
        if (mask.width(), mask.height()) != (sp.width(), sp.height()) {
            return Err(Error::DimensionMismatch {
                left_w: mask.width(),
                left_h: mask.height(),
                right_w: sp.width(),
                right_h: sp.height(),
            });
        }
        let (e0, e1) = mask.bounding_box().ok_or(Error::EmptyMask)?;
        let boxed_set = mask
            .bits()
            .iter()
            .zip(sp.labels())
            .filter(|(&b, _)| b)
            .map(|(_, &l)| l)
            .collect();
        Ok(Self {
            e0,
            e1,
            boxed_set,
            mode: BoxMode::CornerPair,
        })
    }

    pub fn e0(&self) -> PixelPoint {
        self.e0
    }

    pub fn e1(&self) -> PixelPoint {
        self.e1
    }

    pub fn boxed_set(&self) -> &BTreeSet<SuperpixelId> {
        &self.boxed_set
    }

    pub fn mode(&self) -> BoxMode {
        self.mode
    }

    pub fn contains_point(&self, p: PixelPoint) -> bool {
        (self.e0.x..=self.e1.x).contains(&p.x) && (self.e0.y..=self.e1.y).contains(&p.y)
    }

    /// The closed rectangle as a mask.
    pub fn rectangle_mask(&self, width: u32, height: u32) -> BinaryMask {
        BinaryMask::from_fn(width, height, |x, y| self.contains_point(PixelPoint::new(x, y)))
    }
}

/// Builds the initial box from the click pair.
pub fn init_box(c0_pos: &Click, c0_neg: &Click, sp: &SuperpixelMap, mode: BoxMode) -> Result<BoxPrior> {
    if c0_pos.polarity != Polarity::Positive || c0_neg.polarity != Polarity::Negative {
        return Err(Error::Protocol(
            "initial pair must be one positive then one negative click".into(),
        ));
    }
    if c0_pos.index != 0 || c0_neg.index != 0 {
        return Err(Error::Protocol("initial pair clicks must have index 0".into()));
    }
    for c in [c0_pos, c0_neg] {
        if c.position.x >= sp.width() || c.position.y >= sp.height() {
            return Err(Error::OutOfBounds {
                x: c.position.x as i64,
                y: c.position.y as i64,
                width: sp.width(),
                height: sp.height(),
            });
        }
    }
    let (p, q) = (c0_pos.position, c0_neg.position);
    let (e0, e1) = match mode {
        BoxMode::CenterCorner => {
            let hx = p.x.abs_diff(q.x);
            let hy = p.y.abs_diff(q.y);
            if hx == 0 || hy == 0 {
                return Err(Error::DegenerateBox(format!(
                    "zero half-extent ({hx}, {hy}) between ({}, {}) and ({}, {})",
                    p.x, p.y, q.x, q.y
                )));
            }
            (
                PixelPoint::new(p.x.saturating_sub(hx), p.y.saturating_sub(hy)),
                PixelPoint::new((p.x + hx).min(sp.width() - 1), (p.y + hy).min(sp.height() - 1)),
            )
        }
        BoxMode::CornerPair => (
            PixelPoint::new(p.x.min(q.x), p.y.min(q.y)),
            PixelPoint::new(p.x.max(q.x), p.y.max(q.y)),
        ),
    };
    BoxPrior::from_corners(sp, e0, e1, mode)
}

/// Why a lenient update left the prior untouched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintWarning {
    pub click: Click,
    pub superpixel: SuperpixelId,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxUpdate {
    pub state: ClickState,
    pub warning: Option<ConstraintWarning>,
}

/// The ordered click log together with the box prior it implies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickState {
    clicks: Vec<Click>,
    initial_box: BoxPrior,
    current: BoxPrior,
    strict: bool,
}

impl ClickState {
    pub fn from_initial_pair(
        c0_pos: Click,
        c0_neg: Click,
        sp: &SuperpixelMap,
        mode: BoxMode,
        strict: bool,
    ) -> Result<Self> {
        let prior = init_box(&c0_pos, &c0_neg, sp, mode)?;
        Ok(Self {
            clicks: vec![c0_pos, c0_neg],
            initial_box: prior.clone(),
            current: prior,
            strict,
        })
    }

    /// A state with no clicks yet, starting from an externally supplied prior.
    pub fn from_prior(prior: BoxPrior, strict: bool) -> Self {
        Self {
            clicks: Vec::new(),
            initial_box: prior.clone(),
            current: prior,
            strict,
        }
    }

    pub fn clicks(&self) -> &[Click] {
        &self.clicks
    }

    pub fn box_prior(&self) -> &BoxPrior {
        &self.current
    }

    pub fn initial_box(&self) -> &BoxPrior {
        &self.initial_box
    }

    pub fn is_strict(&self) -> bool {
        self.strict
    }

    pub fn corrective_clicks(&self) -> impl Iterator<Item = &Click> {
        self.clicks.iter().filter(|c| c.index > 0)
    }

    /// Round number for the next corrective click.
    pub fn next_index(&self) -> u32 {
        self.corrective_clicks().count() as u32 + 1
    }

    /// Applies one corrective click and returns the new state.
    ///
    /// A positive click adds its superpixel to the prior and stretches the
    /// corners to cover it; a negative click removes its superpixel. A
    /// positive click on a superpixel already in the prior, or a negative
    /// click on one outside it, is an error in strict mode and a no-op with
    /// a warning otherwise.
    pub fn update_box(&self, sp: &SuperpixelMap, click: Click) -> Result<BoxUpdate> {
        if click.index == 0 {
            return Err(Error::Protocol("corrective clicks must have index >= 1".into()));
        }
        let z = sp.superpixel_of(click.position)?;
        let mut next = self.clone();
        let in_prior = self.current.boxed_set.contains(&z);
        let violation = match click.polarity {
            Polarity::Positive if in_prior => Some((
                format!("positive click on superpixel {z}, which is already inside the region"),
                "positive clicks must be placed outside the current region".to_string(),
            )),
            Polarity::Negative if !in_prior => Some((
                format!("negative click on superpixel {z}, which is outside the region"),
                "negative clicks must be placed inside the current region".to_string(),
            )),
            _ => None,
        };
        if let Some((message, allowed_region)) = &violation {
            if self.strict {
                return Err(Error::ConstraintViolation {
                    message: message.clone(),
                    allowed_region: allowed_region.clone(),
                });
            }
        }
        match click.polarity {
            Polarity::Positive => {
                next.current.boxed_set.insert(z);
                let (e0, e1) = (&mut next.current.e0, &mut next.current.e1);
                e0.x = e0.x.min(click.position.x);
                e0.y = e0.y.min(click.position.y);
                e1.x = e1.x.max(click.position.x);
                e1.y = e1.y.max(click.position.y);
            }
            Polarity::Negative => {
                next.current.boxed_set.remove(&z);
            }
        }
        next.clicks.push(click);
        Ok(BoxUpdate {
            state: next,
            warning: violation.map(|(message, _)| ConstraintWarning {
                click,
                superpixel: z,
                message,
            }),
        })
    }

    /// Rebuilds a state from a full click log whose first two entries are
    /// the initial pair.
    pub fn replay(
        clicks: &[Click],
        sp: &SuperpixelMap,
        mode: BoxMode,
        strict: bool,
    ) -> Result<(Self, Vec<ConstraintWarning>)> {
        let [pos, neg, rest @ ..] = clicks else {
            return Err(Error::Protocol("a click log needs the initial pair".into()));
        };
        let start = Self::from_initial_pair(*pos, *neg, sp, mode, strict)?;
        start.apply_all(rest, sp)
    }

    /// Rebuilds a state from a prior and the clicks applied on top of it.
    pub fn replay_from_prior(
        prior: BoxPrior,
        clicks: &[Click],
        sp: &SuperpixelMap,
        strict: bool,
    ) -> Result<(Self, Vec<ConstraintWarning>)> {
        Self::from_prior(prior, strict).apply_all(clicks, sp)
    }

    fn apply_all(self, clicks: &[Click], sp: &SuperpixelMap) -> Result<(Self, Vec<ConstraintWarning>)> {
        let mut state = self;
        let mut warnings = Vec::new();
        for &c in clicks {
            let update = state.update_box(sp, c)?;
            state = update.state;
            warnings.extend(update.warning);
        }
        Ok((state, warnings))
    }
}
