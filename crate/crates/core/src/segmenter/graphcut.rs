//! The reference backend: an exact binary energy minimizer over superpixels.
//!
//! Unaries combine the click channels, the localization channel and a color
//! term from per-side Gaussian mixtures. Adjacent superpixels pay a Potts
//! penalty that decays with their mean-color difference. Clicked superpixels
//! are hard-constrained to their click's label.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::gmm::ColorModel;
use super::maxflow::FlowGraph;
use super::{superpixel_means, SegmentRequest, SegmentationResult, Segmenter};
use crate::error::{Error, Result};
use crate::guidance::{GuidanceKind, Polarity};
use crate::superpixels::{image_to_lab, SuperpixelMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphCutParams {
    /// Weight of the click-distance channels.
    pub alpha: f64,
    /// Weight of the localization channel.
    pub beta: f64,
    /// Weight of the color term.
    pub gamma: f64,
    /// Potts weight between adjacent superpixels.
    pub lambda: f64,
    /// Color scale of the pairwise decay; `None` uses the mean color
    /// distance over adjacent superpixel pairs.
    pub sigma: Option<f64>,
    pub gmm_components: usize,
    /// Cost charged per violated hard constraint by [`EnergyModel::energy`].
    pub hard_cost: f64,
}

impl Default for GraphCutParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            lambda: 5.0,
            sigma: None,
            gmm_components: 3,
            hard_cost: 1e9,
        }
    }
}

impl GraphCutParams {
    pub const KEYS: [&'static str; 7] = [
        "alpha",
        "beta",
        "gamma",
        "lambda",
        "sigma",
        "gmm_components",
        "hard_cost",
    ];

    /// Sets one parameter from its textual form. `sigma=auto` restores the
    /// data-driven default.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::InvalidArgument(format!("{key}={value}: {what}"));
        let real = || -> Result<f64> {
            let v: f64 = value.trim().parse().map_err(|_| bad("not a number"))?;
            if !v.is_finite() || v < 0.0 {
                return Err(bad("must be finite and non-negative"));
            }
            Ok(v)
        };
        match key.trim() {
            "alpha" => self.alpha = real()?,
            "beta" => self.beta = real()?,
            "gamma" => self.gamma = real()?,
            "lambda" => self.lambda = real()?,
            "hard_cost" => self.hard_cost = real()?,
            "sigma" if value.trim() == "auto" => self.sigma = None,
            "sigma" => {
                let v = real()?;
                if v == 0.0 {
                    return Err(bad("must be positive"));
                }
                self.sigma = Some(v);
            }
            "gmm_components" => {
                let v: usize = value.trim().parse().map_err(|_| bad("not a count"))?;
                if v == 0 {
                    return Err(bad("must be at least 1"));
                }
                self.gmm_components = v;
            }
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown graph-cut parameter `{other}` (known: {})",
                    Self::KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies `key=value` pairs separated by newlines or commas; `#` starts
    /// a comment.
    pub fn apply(&mut self, text: &str) -> Result<()> {
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("");
            for pair in line.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                let (k, v) = pair
                    .split_once('=')
                    .ok_or_else(|| Error::InvalidArgument(format!("expected key=value, got `{pair}`")))?;
                self.set(k, v)?;
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut params = Self::default();
        params.apply(text)?;
        Ok(params)
    }

    pub fn to_pairs(&self) -> BTreeMap<&'static str, String> {
        BTreeMap::from([
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("gamma", self.gamma.to_string()),
            ("lambda", self.lambda.to_string()),
            (
                "sigma",
                self.sigma.map_or_else(|| "auto".to_string(), |s| s.to_string()),
            ),
            ("gmm_components", self.gmm_components.to_string()),
            ("hard_cost", self.hard_cost.to_string()),
        ])
    }
}

/// A binary labeling energy over `n` nodes: per-node costs for each label,
/// Potts edges, and hard label constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyModel {
    fg_cost: Vec<f64>,
    bg_cost: Vec<f64>,
    edges: Vec<(u32, u32, f64)>,
    hard: Vec<Option<bool>>,
    hard_cost: f64,
}

impl EnergyModel {
    pub fn new(
        fg_cost: Vec<f64>,
        bg_cost: Vec<f64>,
        edges: Vec<(u32, u32, f64)>,
        hard: Vec<Option<bool>>,
        hard_cost: f64,
    ) -> Result<Self> {
        let n = fg_cost.len();
        if bg_cost.len() != n || hard.len() != n {
            return Err(Error::InvalidArgument(
                "unary and constraint vectors differ in length".into(),
            ));
        }
        let finite_nonneg = |v: &f64| v.is_finite() && *v >= 0.0;
        if !fg_cost.iter().chain(&bg_cost).all(finite_nonneg) {
            return Err(Error::InvalidArgument(
                "unary costs must be finite and non-negative".into(),
            ));
        }
        for &(i, j, w) in &edges {
            if i as usize >= n || j as usize >= n || i == j || !finite_nonneg(&w) {
                return Err(Error::InvalidArgument(format!("invalid edge ({i}, {j}, {w})")));
            }
        }
        Ok(Self {
            fg_cost,
            bg_cost,
            edges,
            hard,
            hard_cost,
        })
    }

    pub fn len(&self) -> usize {
        self.fg_cost.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fg_cost.is_empty()
    }

    pub fn fg_cost(&self) -> &[f64] {
        &self.fg_cost
    }

    pub fn bg_cost(&self) -> &[f64] {
        &self.bg_cost
    }

    pub fn edges(&self) -> &[(u32, u32, f64)] {
        &self.edges
    }

    pub fn hard(&self) -> &[Option<bool>] {
        &self.hard
    }

    /// Total cost of a labeling (`true` = foreground).
    pub fn energy(&self, labels: &[bool]) -> f64 {
        assert_eq!(labels.len(), self.len(), "one label per node");
        let unary: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &fg)| if fg { self.fg_cost[i] } else { self.bg_cost[i] })
            .sum();
        let pairwise: f64 = self
            .edges
            .iter()
            .filter(|&&(i, j, _)| labels[i as usize] != labels[j as usize])
            .map(|e| e.2)
            .sum();
        let violations = self
            .hard
            .iter()
            .zip(labels)
            .filter(|(h, &l)| h.is_some_and(|h| h != l))
            .count();
        unary + pairwise + violations as f64 * self.hard_cost
    }

    /// An exact minimizer that never violates a hard constraint. Ties between
    /// equal-cost labelings resolve toward background.
    pub fn minimize(&self) -> Vec<bool> {
        let n = self.len();
        let mut labels: Vec<bool> = self.hard.iter().map(|h| h.unwrap_or(false)).collect();
        let free: Vec<usize> = (0..n).filter(|&i| self.hard[i].is_none()).collect();
        if free.is_empty() {
            return labels;
        }
        let mut slot = vec![usize::MAX; n];
        for (k, &i) in free.iter().enumerate() {
            slot[i] = k;
        }
        let mut fg: Vec<f64> = free.iter().map(|&i| self.fg_cost[i]).collect();
        let mut bg: Vec<f64> = free.iter().map(|&i| self.bg_cost[i]).collect();
        let (source, sink) = (free.len(), free.len() + 1);
        let mut graph = FlowGraph::new(free.len() + 2);
        for &(i, j, w) in &self.edges {
            let (i, j) = (i as usize, j as usize);
            match (self.hard[i], self.hard[j]) {
                (None, None) => graph.add_edge(slot[i], slot[j], w, w),
                // an edge to a fixed node charges the free end for disagreeing
                (None, Some(l)) => *if l { &mut bg[slot[i]] } else { &mut fg[slot[i]] } += w,
                (Some(l), None) => *if l { &mut bg[slot[j]] } else { &mut fg[slot[j]] } += w,
                (Some(_), Some(_)) => {}
            }
        }
        for k in 0..free.len() {
            // source side = foreground: cutting s->k labels k background
            let base = fg[k].min(bg[k]);
            graph.add_edge(source, k, bg[k] - base, 0.0);
            graph.add_edge(k, sink, fg[k] - base, 0.0);
        }
        graph.max_flow(source, sink);
        let side = graph.source_side(source);
        for (k, &i) in free.iter().enumerate() {
            labels[i] = side[k];
        }
        labels
    }
}

/// Superpixel graph-cut segmentation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GraphCut {
    params: GraphCutParams,
}

impl GraphCut {
    pub fn new(params: GraphCutParams) -> Self {
        Self { params }
    }

    pub fn params(&self) -> &GraphCutParams {
        &self.params
    }

    /// Builds the energy for a request, returning any warnings about
    /// conflicting hard constraints.
    pub fn model(&self, req: &SegmentRequest<'_>) -> Result<(EnergyModel, Vec<String>)> {
        let p = &self.params;
        let sp = req.sp;
        let n = sp.count() as usize;

        let (hard, warnings) = hard_constraints(req)?;
        if !hard.contains(&Some(true)) && req.prior_mask.is_none() {
            return Err(Error::Segmentation("at least one positive click is required".into()));
        }

        let pos = superpixel_means(sp, req.bundle.positive());
        let neg = superpixel_means(sp, req.bundle.negative());
        let mut fg: Vec<f64> = pos.iter().map(|d| p.alpha * d).collect();
        let mut bg: Vec<f64> = neg.iter().map(|d| p.alpha * d).collect();

        if let Some(map) = req.bundle.localization() {
            let means = superpixel_means(sp, map);
            for (z, m) in means.into_iter().enumerate() {
                let inside = match map.kind() {
                    // near the rectangle outline counts as inside
                    GuidanceKind::BboxDt => 1.0 - m,
                    _ => m,
                };
                fg[z] += p.beta * (1.0 - inside);
                bg[z] += p.beta * inside;
            }
        }

        let lab = image_to_lab(req.image.data());
        let fg_prob = color_posterior(sp, &lab, &hard, req, p.gmm_components);
        for z in 0..n {
            fg[z] += p.gamma * (1.0 - fg_prob[z]);
            bg[z] += p.gamma * fg_prob[z];
        }

        let edges = pairwise_edges(sp, &lab, p.lambda, p.sigma);
        let model = EnergyModel::new(fg, bg, edges, hard, p.hard_cost)?;
        Ok((model, warnings))
    }

    /// The energy of `sp_labels` under this request.
    pub fn energy(&self, req: &SegmentRequest<'_>, sp_labels: &[bool]) -> Result<f64> {
        if sp_labels.len() != req.sp.count() as usize {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {} superpixels",
                sp_labels.len(),
                req.sp.count()
            )));
        }
        Ok(self.model(req)?.0.energy(sp_labels))
    }
}

impl Segmenter for GraphCut {
    fn name(&self) -> String {
        "graphcut".to_string()
    }

    fn segment_labels(&self, req: &SegmentRequest<'_>) -> Result<SegmentationResult> {
        let (model, warnings) = self.model(req)?;
        let labels = model.minimize();
        let energy = model.energy(&labels);
        let mut result = SegmentationResult::from_labels(req.sp, labels);
        result.energy = Some(energy);
        result.warnings = warnings;
        Ok(result)
    }
}

/// Clicked superpixels take their click's label; a later click on the same
/// superpixel overrides an earlier one of the other polarity.
fn hard_constraints(req: &SegmentRequest<'_>) -> Result<(Vec<Option<bool>>, Vec<String>)> {
    let mut hard = vec![None; req.sp.count() as usize];
    let mut warnings = Vec::new();
    for click in req.clicks {
        let z = req.sp.superpixel_of(click.position)?;
        let label = click.polarity == Polarity::Positive;
        if hard[z as usize] == Some(!label) {
            warnings.push(format!(
                "superpixel {z} clicked with both polarities; click {} ({}) wins",
                click.index, click.polarity
            ));
        }
        hard[z as usize] = Some(label);
    }
    Ok((hard, warnings))
}

/// Per-superpixel foreground posterior from two color mixtures, averaged in
/// log-likelihood over each superpixel's pixels. Without training pixels on
/// both sides every superpixel gets 0.5.
fn color_posterior(
    sp: &SuperpixelMap,
    lab: &[[f64; 3]],
    hard: &[Option<bool>],
    req: &SegmentRequest<'_>,
    components: usize,
) -> Vec<f64> {
    let n = sp.count() as usize;
    let mut fg_samples = Vec::new();
    let mut bg_samples = Vec::new();
    for (z, h) in hard.iter().enumerate() {
        if let Some(label) = h {
            let target = if *label { &mut fg_samples } else { &mut bg_samples };
            target.extend(sp.members(z as u32).expect("id in range").iter().map(|&i| lab[i]));
        }
    }
    if let Some(mask) = req.prior_mask {
        for (i, &inside) in mask.bits().iter().enumerate() {
            if hard[sp.labels()[i] as usize].is_none() {
                if inside { &mut fg_samples } else { &mut bg_samples }.push(lab[i]);
            }
        }
    }
    let (Some(fg_model), Some(bg_model)) = (
        ColorModel::fit(&fg_samples, components),
        ColorModel::fit(&bg_samples, components),
    ) else {
        return vec![0.5; n];
    };
    let mut ratio = vec![0.0; n];
    for (i, &l) in sp.labels().iter().enumerate() {
        ratio[l as usize] += fg_model.log_likelihood(&lab[i]) - bg_model.log_likelihood(&lab[i]);
    }
    ratio
        .iter()
        .zip(sp.sizes())
        .map(|(r, &size)| 1.0 / (1.0 + (-r / size as f64).exp()))
        .collect()
}

fn pairwise_edges(sp: &SuperpixelMap, lab: &[[f64; 3]], lambda: f64, sigma: Option<f64>) -> Vec<(u32, u32, f64)> {
    let n = sp.count() as usize;
    let mut mean = vec![[0.0; 3]; n];
    for (i, &l) in sp.labels().iter().enumerate() {
        for c in 0..3 {
            mean[l as usize][c] += lab[i][c];
        }
    }
    for (m, &size) in mean.iter_mut().zip(sp.sizes()) {
        for v in m.iter_mut() {
            *v /= size as f64;
        }
    }
    let dist2 = |i: usize, j: usize| (0..3).map(|c| (mean[i][c] - mean[j][c]).powi(2)).sum::<f64>();
    let pairs: Vec<(u32, u32)> = sp
        .adjacency()
        .iter()
        .enumerate()
        .flat_map(|(i, nbrs)| {
            nbrs.iter()
                .filter(move |&&j| (i as u32) < j)
                .map(move |&j| (i as u32, j))
        })
        .collect();
    let sigma = sigma.unwrap_or_else(|| {
        let total: f64 = pairs.iter().map(|&(i, j)| dist2(i as usize, j as usize).sqrt()).sum();
        let mean = if pairs.is_empty() {
            0.0
        } else {
            total / pairs.len() as f64
        };
        if mean > 0.0 {
            mean
        } else {
            1.0
        }
    });
    pairs
        .into_iter()
        .map(|(i, j)| {
            (
                i,
                j,
                lambda * (-dist2(i as usize, j as usize) / (2.0 * sigma * sigma)).exp(),
            )
        })
        .collect()
}
