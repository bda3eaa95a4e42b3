//! Refinement of an existing mask: the box prior starts from the superpixels
//! the mask touches, both click channels start at the ceiling, and evaluation
//! clicks are added one at a time.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{segment_with, Instance, RunConfig};
use crate::error::{Error, Result};
use crate::guidance::{BoxPrior, ClickState};
use crate::raster::iou;
use crate::segmenter::Segmenter;
use crate::simulator::next_eval_click;

/// IoU after each click budget. Budget 0 is the initial mask itself. Once
/// the prediction matches the ground truth no further clicks are placed.
pub fn refine_from_mask(
    instance: &Instance,
    config: &RunConfig,
    budgets: &[u32],
    segmenter: &dyn Segmenter,
) -> Result<Vec<f64>> {
    let initial = instance
        .initial
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("instance `{}` has no initial mask", instance.id)))?;
    let gt = &instance.ground_truth;
    let max_budget = budgets.iter().copied().max().unwrap_or(0);
    let sp = instance.superpixels(config.superpixels)?;
    let mut state = ClickState::from_prior(BoxPrior::from_mask(&sp, initial)?, false);

    let mut mask = initial.clone();
    let mut after = vec![iou(&mask, gt)?];
    for _ in 0..max_budget {
        if mask == *gt {
            after.push(1.0);
            continue;
        }
        let click = next_eval_click(&mask, gt, &state, &sp)?;
        state = state.update_box(&sp, click)?.state;
        let (m, i, _) = segment_with(
            segmenter,
            instance,
            &sp,
            config.encoder,
            state.clicks(),
            Some(state.box_prior()),
            Some(initial),
        )?;
        mask = m;
        after.push(i);
    }
    Ok(budgets.iter().map(|&b| after[b as usize]).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRow {
    pub backend: String,
    /// Mean IoU per budget, in budget order.
    pub miou: Vec<f64>,
    pub evaluated: usize,
    pub skipped: usize,
}

/// One row per backend, one column per click budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementTable {
    pub budgets: Vec<u32>,
    pub rows: Vec<RefinementRow>,
}

impl RefinementTable {
    pub fn render(&self) -> String {
        let mut out = format!("{:<12}", "backend");
        for b in &self.budgets {
            out.push_str(&format!(
                " {:>10}",
                format!("{b} click{}", if *b == 1 { "" } else { "s" })
            ));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{:<12}", r.backend));
            for m in &r.miou {
                out.push_str(&format!(" {:>10.4}", m));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<String> = std::iter::once("backend".to_string())
            .chain(self.budgets.iter().map(|b| format!("miou@{b}")))
            .collect();
        w.write_record(&header)?;
        for r in &self.rows {
            let record: Vec<String> = std::iter::once(r.backend.clone())
                .chain(r.miou.iter().map(|m| format!("{m:.6}")))
                .collect();
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Refines every instance with each backend. Budgets are sorted and
/// deduplicated; instances that fail are counted as skipped.
pub fn run_refinement(
    instances: &[Instance],
    config: &RunConfig,
    budgets: &[u32],
    backends: &[String],
) -> Result<RefinementTable> {
    config.validate()?;
    if instances.is_empty() {
        return Err(Error::InvalidArgument("no instances to refine".into()));
    }
    if let Some(inst) = instances.iter().find(|i| i.initial.is_none()) {
        return Err(Error::InvalidArgument(format!(
            "instance `{}` has no initial mask",
            inst.id
        )));
    }
    let mut budgets = budgets.to_vec();
    budgets.sort_unstable();
    budgets.dedup();
    if budgets.is_empty() {
        return Err(Error::InvalidArgument("at least one click budget is required".into()));
    }
    let registry = config.registry();
    let mut rows = Vec::new();
    for name in backends {
        let segmenter = registry.resolve(name)?;
        let outcomes: Vec<Result<Vec<f64>>> = instances
            .par_iter()
            .map(|inst| refine_from_mask(inst, config, &budgets, segmenter.as_ref()))
            .collect();
        let ok: Vec<&Vec<f64>> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
        let miou = (0..budgets.len())
            .map(|j| {
                if ok.is_empty() {
                    0.0
                } else {
                    ok.iter().map(|v| v[j]).sum::<f64>() / ok.len() as f64
                }
            })
            .collect();
        rows.push(RefinementRow {
            backend: name.clone(),
            miou,
            evaluated: ok.len(),
            skipped: outcomes.len() - ok.len(),
        });
    }
    Ok(RefinementTable { budgets, rows })
}
