//! The clicks-to-target benchmark, encoder ablations, mask refinement and a
//! synthetic corpus to run them on.
//!
//! Every instance draws its clicks from its own generator, derived from the
//! run seed and the instance id, so results do not depend on scheduling.

mod manifest;
mod refine;
mod synth;

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::{BoxMode, BoxPrior, Click, ClickState};
use crate::raster::{BinaryMask, Image};
use crate::segmenter::{BackendRegistry, EncoderVariant, GraphCutParams, GuidanceBundle, SegmentRequest, Segmenter};
use crate::simulator::{next_eval_click, rng_for, simulate_center_click, simulate_first_negative, SimulationPolicy};
use crate::superpixels::{slic, SuperpixelMap, DEFAULT_COMPACTNESS};

pub use manifest::{DatasetManifest, ManifestEntry};
pub use refine::{refine_from_mask, run_refinement, RefinementRow, RefinementTable};
pub use synth::{synth_corpus, synth_corpus_with, SynthCorpus, SynthImage, SynthParams};

/// One object to segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    pub image: Arc<Image>,
    pub ground_truth: BinaryMask,
    pub initial: Option<BinaryMask>,
}

impl Instance {
    pub fn new(id: String, image: Arc<Image>, ground_truth: BinaryMask, initial: Option<BinaryMask>) -> Result<Self> {
        let extent = (image.width(), image.height());
        for m in std::iter::once(&ground_truth).chain(initial.as_ref()) {
            if (m.width(), m.height()) != extent {
                return Err(Error::DimensionMismatch {
                    left_w: extent.0,
                    left_h: extent.1,
                    right_w: m.width(),
                    right_h: m.height(),
                });
            }
        }
        Ok(Self {
            id,
            image,
            ground_truth,
            initial,
        })
    }

    /// Generator stream for this instance: FNV-1a of the id, stable across
    /// platforms and releases.
    pub fn stream(&self) -> u64 {
        self.id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
            (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
        })
    }

    fn superpixels(&self, target: u32) -> Result<SuperpixelMap> {
        slic(&self.image, target, DEFAULT_COMPACTNESS)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub encoder: EncoderVariant,
    pub superpixels: u32,
    pub threshold: f64,
    pub max_clicks: u32,
    pub backend: String,
    pub seed: u64,
    pub box_mode: BoxMode,
    pub graphcut: GraphCutParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderVariant::default(),
            superpixels: 1000,
            threshold: 0.90,
            max_clicks: 20,
            backend: "graphcut".into(),
            seed: 0,
            box_mode: BoxMode::default(),
            graphcut: GraphCutParams::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "threshold {} must lie in (0, 1]",
                self.threshold
            )));
        }
        if self.max_clicks < 2 {
            return Err(Error::InvalidArgument(
                "max clicks must cover the initial pair (>= 2)".into(),
            ));
        }
        if self.superpixels == 0 {
            return Err(Error::InvalidArgument("superpixel target must be positive".into()));
        }
        Ok(())
    }

    pub fn registry(&self) -> BackendRegistry {
        BackendRegistry::with_defaults(self.graphcut)
    }

    fn backend(&self) -> Result<Arc<dyn Segmenter>> {
        self.registry().resolve(&self.backend)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    /// Clicks placed, the initial pair included; capped at the budget.
    pub clicks: u32,
    pub reached: bool,
    pub final_iou: f64,
    /// IoU after each click; `trace[k - 1]` follows click `k`.
    pub trace: Vec<f64>,
    /// The first negative click fell back to the box-corner rule.
    pub first_negative_fallback: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedInstance {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub instances: Vec<InstanceRecord>,
    pub skipped: Vec<SkippedInstance>,
    /// `None` when every instance was skipped.
    pub mean_clicks: Option<f64>,
    /// `miou_curve[k - 1]` is the mean IoU after `k` clicks; an instance that
    /// stopped early keeps its final IoU.
    pub miou_curve: Vec<f64>,
}

impl RunReport {
    fn assemble(config: RunConfig, outcomes: Vec<(String, Result<InstanceRecord>)>) -> Self {
        let mut instances = Vec::new();
        let mut skipped = Vec::new();
        for (id, outcome) in outcomes {
            match outcome {
                Ok(r) => instances.push(r),
                Err(e) => skipped.push(SkippedInstance {
                    id,
                    reason: e.to_string(),
                }),
            }
        }
        let n = instances.len() as f64;
        let mean_clicks =
            (!instances.is_empty()).then(|| instances.iter().map(|r| f64::from(r.clicks)).sum::<f64>() / n);
        let miou_curve = if instances.is_empty() {
            Vec::new()
        } else {
            (1..=config.max_clicks as usize)
                .map(|k| instances.iter().map(|r| r.trace[k.min(r.trace.len()) - 1]).sum::<f64>() / n)
                .collect()
        };
        Self {
            config,
            instances,
            skipped,
            mean_clicks,
            miou_curve,
        }
    }

    pub fn miou_at(&self, clicks: u32) -> Option<f64> {
        self.miou_curve.get((clicks as usize).checked_sub(1)?).copied()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// One row per evaluated instance.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "instance_id",
            "clicks",
            "reached",
            "final_iou",
            "first_negative_fallback",
        ])?;
        for r in &self.instances {
            w.write_record([
                r.id.clone(),
                r.clicks.to_string(),
                r.reached.to_string(),
                format!("{:.6}", r.final_iou),
                r.first_negative_fallback.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the JSON report to `path` and the CSV beside it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?)?;
        self.write_csv(std::fs::File::create(path.with_extension("csv"))?)
    }
}

fn segment_with(
    segmenter: &dyn Segmenter,
    instance: &Instance,
    sp: &SuperpixelMap,
    encoder: EncoderVariant,
    clicks: &[Click],
    prior: Option<&BoxPrior>,
    prior_mask: Option<&BinaryMask>,
) -> Result<(BinaryMask, f64, Vec<String>)> {
    let bundle = GuidanceBundle::build(encoder, sp, clicks, prior)?;
    let mut req = SegmentRequest::new(&instance.image, sp, &bundle, clicks).with_ground_truth(&instance.ground_truth);
    if let Some(m) = prior_mask {
        req = req.with_prior_mask(m);
    }
    let result = segmenter.segment(&req)?;
    let iou = result.iou.expect("ground truth was supplied");
    Ok((result.mask, iou, result.warnings))
}

/// Simulates one interactive session: the center click alone, then the
/// initial pair, then one evaluation click at a time until the IoU reaches
/// the threshold or the budget is spent. Stopping is checked from the second
/// click on, since the pair is the least a user can give.
pub fn clicks_to_target(instance: &Instance, config: &RunConfig, segmenter: &dyn Segmenter) -> Result<InstanceRecord> {
    config.validate()?;
    let gt = &instance.ground_truth;
    let policy = SimulationPolicy::with_seed(config.seed);
    let mut rng = rng_for(config.seed, instance.stream());
    let sp = instance.superpixels(config.superpixels)?;
    let center = simulate_center_click(gt, &policy, &mut rng)?;
    let negative = simulate_first_negative(gt, &center.click, &sp, &policy, &mut rng)?;
    let mut warnings = Vec::new();

    let (_, first_iou, w) = segment_with(segmenter, instance, &sp, config.encoder, &[center.click], None, None)?;
    warnings.extend(w);
    let mut trace = vec![first_iou];

    let mut state = ClickState::from_initial_pair(center.click, negative.click, &sp, config.box_mode, false)?;
    let (mut mask, mut iou, w) = segment_with(
        segmenter,
        instance,
        &sp,
        config.encoder,
        state.clicks(),
        Some(state.box_prior()),
        None,
    )?;
    warnings.extend(w);
    trace.push(iou);

    while iou < config.threshold && (trace.len() as u32) < config.max_clicks {
        let click = next_eval_click(&mask, gt, &state, &sp)?;
        let update = state.update_box(&sp, click)?;
        if let Some(w) = update.warning {
            warnings.push(w.message);
        }
        state = update.state;
        let (m, i, w) = segment_with(
            segmenter,
            instance,
            &sp,
            config.encoder,
            state.clicks(),
            Some(state.box_prior()),
            None,
        )?;
        warnings.extend(w);
        (mask, iou) = (m, i);
        trace.push(iou);
    }
    Ok(InstanceRecord {
        id: instance.id.clone(),
        clicks: trace.len() as u32,
        reached: iou >= config.threshold,
        final_iou: iou,
        trace,
        first_negative_fallback: negative.fallback,
        warnings,
    })
}

/// Runs every instance in parallel. Instances whose simulation or
/// segmentation fails are reported as skipped.
pub fn run_benchmark(instances: &[Instance], config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    if instances.is_empty() {
        return Err(Error::InvalidArgument("no instances to benchmark".into()));
    }
    let segmenter = config.backend()?;
    let outcomes = instances
        .par_iter()
        .map(|inst| (inst.id.clone(), clicks_to_target(inst, config, segmenter.as_ref())))
        .collect();
    Ok(RunReport::assemble(config.clone(), outcomes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub encoder: EncoderVariant,
    pub backend: String,
    pub mean_clicks: Option<f64>,
    pub evaluated: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub reports: Vec<RunReport>,
}

impl AblationTable {
    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<10} {:<12} {:>11} {:>9} {:>7}\n",
            "encoder", "backend", "mean clicks", "evaluated", "skipped"
        );
        for r in &self.rows {
            let mean = r.mean_clicks.map_or_else(|| "-".to_string(), |m| format!("{m:.3}"));
            out.push_str(&format!(
                "{:<10} {:<12} {:>11} {:>9} {:>7}\n",
                r.encoder.as_str(),
                r.backend,
                mean,
                r.evaluated,
                r.skipped
            ));
        }
        out
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["encoder", "backend", "mean_clicks", "evaluated", "skipped"])?;
        for r in &self.rows {
            w.write_record([
                r.encoder.as_str().to_string(),
                r.backend.clone(),
                r.mean_clicks.map_or_else(String::new, |m| format!("{m:.6}")),
                r.evaluated.to_string(),
                r.skipped.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One benchmark per configuration, one table row each.
pub fn run_ablation(instances: &[Instance], configs: &[RunConfig]) -> Result<AblationTable> {
    if configs.is_empty() {
        return Err(Error::InvalidArgument(
            "ablation needs at least one configuration".into(),
        ));
    }
    let reports = configs
        .iter()
        .map(|c| run_benchmark(instances, c))
        .collect::<Result<Vec<_>>>()?;
    let rows = reports
        .iter()
        .map(|r| AblationRow {
            encoder: r.config.encoder,
            backend: r.config.backend.clone(),
            mean_clicks: r.mean_clicks,
            evaluated: r.instances.len(),
            skipped: r.skipped.len(),
        })
        .collect();
    Ok(AblationTable { rows, reports })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk_instance(id: &str) -> Instance {
        let image = Image::from_fn(80, 60, |x, y| {
            let inside = (x as i64 - 40).pow(2) + (y as i64 - 30).pow(2) <= 18 * 18;
            if inside {
                [200, 40, 40]
            } else {
                [40, 40, 200]
            }
        })
        .unwrap();
        let gt = BinaryMask::from_fn(80, 60, |x, y| {
            (x as i64 - 40).pow(2) + (y as i64 - 30).pow(2) <= 18 * 18
        });
        Instance::new(id.into(), Arc::new(image), gt, None).unwrap()
    }

    fn oracle_config(k: usize) -> RunConfig {
        RunConfig {
            backend: format!("oracle:{k}"),
            superpixels: 100,
            ..RunConfig::default()
        }
    }

    #[test]
    fn oracle_reports_its_k() {
        let inst = disk_instance("a");
        for k in [2, 3, 7] {
            let report = run_benchmark(std::slice::from_ref(&inst), &oracle_config(k)).unwrap();
            assert_eq!(report.mean_clicks, Some(k as f64));
            assert_eq!(report.instances[0].trace.len(), k);
            assert!(report.instances[0].reached);
        }
    }

    #[test]
    fn unreachable_target_hits_the_cap() {
        let inst = disk_instance("a");
        let report = run_benchmark(&[inst], &oracle_config(30)).unwrap();
        let r = &report.instances[0];
        assert_eq!((r.clicks, r.reached), (20, false));
        assert_eq!(report.miou_curve.len(), 20);
    }

    #[test]
    fn invalid_configs_and_empty_runs() {
        let bad = RunConfig {
            threshold: 0.0,
            ..RunConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = RunConfig {
            max_clicks: 1,
            ..RunConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(run_benchmark(&[], &RunConfig::default()).is_err());
        let unknown = RunConfig {
            backend: "cnn".into(),
            ..RunConfig::default()
        };
        assert!(matches!(
            run_benchmark(&[disk_instance("a")], &unknown),
            Err(Error::UnknownBackend { .. })
        ));
    }

    #[test]
    fn full_frame_object_is_skipped() {
        let image = Arc::new(Image::filled(40, 40, [9, 9, 9]).unwrap());
        let full = Instance::new("full".into(), image, BinaryMask::full(40, 40), None).unwrap();
        let report = run_benchmark(&[full, disk_instance("ok")], &oracle_config(2)).unwrap();
        assert_eq!(report.skipped.len(), 1);
        assert_eq!(report.skipped[0].id, "full");
        assert_eq!(report.instances.len(), 1);
    }

    #[test]
    fn report_round_trips() {
        let report = run_benchmark(&[disk_instance("a"), disk_instance("b")], &oracle_config(4)).unwrap();
        let back = RunReport::from_json(&report.to_json().unwrap()).unwrap();
        assert_eq!(back, report);
        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 3);
    }

    #[test]
    fn graph_cut_segments_a_clean_disk() {
        let config = RunConfig {
            superpixels: 150,
            ..RunConfig::default()
        };
        let report = run_benchmark(&[disk_instance("a")], &config).unwrap();
        let r = &report.instances[0];
        assert!(r.reached, "{r:?}");
        assert!((2..=20).contains(&r.clicks));
        assert_eq!(r.trace.len() as u32, r.clicks);
    }

    #[test]
    fn identical_rows_identical_means() {
        let insts = [disk_instance("a"), disk_instance("b")];
        let c = RunConfig {
            superpixels: 120,
            ..RunConfig::default()
        };
        let table = run_ablation(&insts, &[c.clone(), c]).unwrap();
        assert_eq!(table.rows[0].mean_clicks, table.rows[1].mean_clicks);
        assert!(table.render().contains("sp+spbox"));
    }

    #[test]
    fn instance_streams_differ_by_id() {
        assert_ne!(disk_instance("a").stream(), disk_instance("b").stream());
        assert_eq!(disk_instance("a").stream(), disk_instance("a").stream());
    }
}
