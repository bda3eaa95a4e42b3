use std::collections::BTreeMap;
use std::sync::Arc;

use super::{GraphCut, GraphCutParams, SegmentRequest, SegmentationResult, Segmenter};
use crate::error::{Error, Result};
use crate::raster::BinaryMask;

/// Returns the ground truth once at least `k` clicks have been placed, and
/// the prior mask (or nothing) before that.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Oracle {
    pub k: usize,
}

impl Segmenter for Oracle {
    fn name(&self) -> String {
        format!("oracle:{}", self.k)
    }

    fn segment_labels(&self, req: &SegmentRequest<'_>) -> Result<SegmentationResult> {
        let gt = req
            .ground_truth
            .ok_or_else(|| Error::Segmentation("the oracle backend needs the ground truth".into()))?;
        let mask = if req.clicks.len() >= self.k {
            gt.clone()
        } else {
            req.prior_mask
                .cloned()
                .unwrap_or_else(|| BinaryMask::empty(gt.width(), gt.height()))
        };
        Ok(SegmentationResult::from_mask(req.sp, mask))
    }
}

type Factory = Arc<dyn Fn(Option<&str>) -> Result<Arc<dyn Segmenter>> + Send + Sync>;

struct Entry {
    usage: String,
    factory: Factory,
}

/// Named backend factories. A backend name is `family` or `family:arg`.
#[derive(Clone, Default)]
pub struct BackendRegistry {
    entries: BTreeMap<String, Arc<Entry>>,
}

impl std::fmt::Debug for BackendRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.available()).finish()
    }
}

impl BackendRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// `graphcut` with the given parameters and `oracle:<k>`.
    pub fn with_defaults(params: GraphCutParams) -> Self {
        let mut registry = Self::new();
        registry.register("graphcut", "graphcut", move |arg| match arg {
            None => Ok(Arc::new(GraphCut::new(params)) as Arc<dyn Segmenter>),
            Some(a) => Err(Error::InvalidArgument(format!("graphcut takes no argument, got `{a}`"))),
        });
        registry.register("oracle", "oracle:<k>", |arg| {
            let k = arg
                .and_then(|a| a.parse::<usize>().ok())
                .ok_or_else(|| Error::InvalidArgument("oracle backend is spelled oracle:<k>".into()))?;
            Ok(Arc::new(Oracle { k }) as Arc<dyn Segmenter>)
        });
        registry
    }

    pub fn register(
        &mut self,
        family: &str,
        usage: &str,
        factory: impl Fn(Option<&str>) -> Result<Arc<dyn Segmenter>> + Send + Sync + 'static,
    ) {
        self.entries.insert(
            family.to_string(),
            Arc::new(Entry {
                usage: usage.to_string(),
                factory: Arc::new(factory),
            }),
        );
    }

    pub fn available(&self) -> Vec<String> {
        self.entries.values().map(|e| e.usage.clone()).collect()
    }

    pub fn resolve(&self, name: &str) -> Result<Arc<dyn Segmenter>> {
        let (family, arg) = match name.split_once(':') {
            Some((f, a)) => (f, Some(a)),
            None => (name, None),
        };
        let entry = self.entries.get(family).ok_or_else(|| Error::UnknownBackend {
            name: name.to_string(),
            available: self.available().join(", "),
        })?;
        (entry.factory)(arg)
    }
}
