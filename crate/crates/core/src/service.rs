//! In-memory interactive sessions. A session owns an image, its superpixels
//! and a click log; every observable piece of state is a pure function of
//! that log, so undo is a replay of the log minus its last click.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::{
    bbox_dt_guidance, bbox_guidance, constant_guidance, euclidean_guidance, spbox_guidance, superpixel_guidance,
    BoxMode, Click, ClickState, GuidanceKind, GuidanceMap, Polarity, GUIDANCE_CEILING,
};
use crate::raster::{BinaryMask, Image, PixelPoint};
use crate::segmenter::{
    BackendRegistry, EncoderVariant, GraphCutParams, GuidanceBundle, SegmentRequest, SegmentationResult, Segmenter,
};
use crate::superpixels::{slic, SuperpixelMap, DEFAULT_COMPACTNESS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub encoder: EncoderVariant,
    pub superpixels: u32,
    pub backend: String,
    /// Reject constraint-violating clicks instead of accepting them with a
    /// warning.
    pub strict: bool,
    pub box_mode: BoxMode,
    pub compactness: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderVariant::default(),
            superpixels: 1000,
            backend: "graphcut".into(),
            strict: true,
            box_mode: BoxMode::default(),
            compactness: DEFAULT_COMPACTNESS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    AwaitingInitialPair,
    AwaitingInitialNegative,
    Corrective,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxView {
    pub e0: PixelPoint,
    pub e1: PixelPoint,
    pub mode: BoxMode,
    pub boxed_superpixels: Vec<u32>,
}

/// Everything a client needs to render a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub status: SessionStatus,
    pub width: u32,
    pub height: u32,
    pub superpixel_count: u32,
    pub config: SessionConfig,
    pub clicks: Vec<Click>,
    #[serde(rename = "box")]
    pub box_view: Option<BoxView>,
    pub version: u64,
    pub mask_area: usize,
    /// Warnings raised by the latest accepted click or undo.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickResponse {
    pub state: SessionState,
    pub version: u64,
    pub warnings: Vec<String>,
}

pub struct Session {
    id: String,
    image: Arc<Image>,
    sp: Arc<SuperpixelMap>,
    config: SessionConfig,
    segmenter: Arc<dyn Segmenter>,
    log: Vec<Click>,
    state: Option<ClickState>,
    result: Option<SegmentationResult>,
    version: u64,
    warnings: Vec<String>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("id", &self.id)
            .field("config", &self.config)
            .field("log", &self.log)
            .field("version", &self.version)
            .finish_non_exhaustive()
    }
}

/// Clicks, box state and mask derived from one click log.
struct Derived {
    state: Option<ClickState>,
    result: Option<SegmentationResult>,
    warnings: Vec<String>,
}

impl Session {
    pub fn new(id: String, image: Image, config: SessionConfig, registry: &BackendRegistry) -> Result<Self> {
        let segmenter = registry.resolve(&config.backend)?;
        if config.superpixels == 0 {
            return Err(Error::InvalidArgument("superpixel target must be positive".into()));
        }
        let target = config.superpixels.min(image.width() * image.height());
        let sp = slic(&image, target, config.compactness)?;
        Ok(Self {
            id,
            image: Arc::new(image),
            sp: Arc::new(sp),
            config,
            segmenter,
            log: Vec::new(),
            state: None,
            result: None,
            version: 0,
            warnings: Vec::new(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn image(&self) -> &Image {
        &self.image
    }

    pub fn superpixels(&self) -> &SuperpixelMap {
        &self.sp
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn log(&self) -> &[Click] {
        &self.log
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn status(&self) -> SessionStatus {
        match self.log.len() {
            0 => SessionStatus::AwaitingInitialPair,
            1 => SessionStatus::AwaitingInitialNegative,
            _ => SessionStatus::Corrective,
        }
    }

    fn segment(&self, state: &ClickState) -> Result<SegmentationResult> {
        let bundle = GuidanceBundle::build(self.config.encoder, &self.sp, state.clicks(), Some(state.box_prior()))?;
        self.segmenter
            .segment(&SegmentRequest::new(&self.image, &self.sp, &bundle, state.clicks()))
    }

    /// Applies one click on top of `(state, log)` without touching `self`.
    fn advance(
        &self,
        log: &[Click],
        state: Option<&ClickState>,
        x: u32,
        y: u32,
        polarity: Polarity,
    ) -> Result<Derived> {
        let position = PixelPoint::new(x, y);
        if !self.image.contains(position) {
            return Err(Error::OutOfBounds {
                x: x.into(),
                y: y.into(),
                width: self.image.width(),
                height: self.image.height(),
            });
        }
        match (log.len(), state) {
            (0, _) => {
                if polarity != Polarity::Positive {
                    return Err(Error::Protocol("initial click must be positive".into()));
                }
                Ok(Derived {
                    state: None,
                    result: None,
                    warnings: Vec::new(),
                })
            }
            (1, _) => {
                if polarity != Polarity::Negative {
                    return Err(Error::Protocol("second initial click must be negative".into()));
                }
                let state = ClickState::from_initial_pair(
                    log[0],
                    Click::new(Polarity::Negative, position, 0),
                    &self.sp,
                    self.config.box_mode,
                    self.config.strict,
                )?;
                let result = self.segment(&state)?;
                let warnings = result.warnings.clone();
                Ok(Derived {
                    state: Some(state),
                    result: Some(result),
                    warnings,
                })
            }
            (_, Some(state)) => {
                let click = Click::new(polarity, position, state.next_index());
                let update = state.update_box(&self.sp, click)?;
                let result = self.segment(&update.state)?;
                let mut warnings: Vec<String> = update.warning.into_iter().map(|w| w.message).collect();
                warnings.extend(result.warnings.iter().cloned());
                Ok(Derived {
                    state: Some(update.state),
                    result: Some(result),
                    warnings,
                })
            }
            (_, None) => unreachable!("a log of two or more clicks always has a state"),
        }
    }

    /// Validates, applies and segments one click. A rejected click leaves
    /// the session untouched.
    pub fn post_click(&mut self, x: u32, y: u32, polarity: Polarity) -> Result<ClickResponse> {
        let derived = self.advance(&self.log, self.state.as_ref(), x, y, polarity)?;
        let index = derived
            .state
            .as_ref()
            .map_or(0, |s| s.clicks().last().map_or(0, |c| c.index));
        self.log.push(Click::new(polarity, PixelPoint::new(x, y), index));
        if derived.result.is_some() {
            self.version += 1;
        }
        self.commit(derived);
        Ok(self.click_response())
    }

    fn commit(&mut self, derived: Derived) {
        self.state = derived.state;
        self.result = derived.result;
        self.warnings = derived.warnings;
    }

    fn click_response(&self) -> ClickResponse {
        ClickResponse {
            state: self.state(),
            version: self.version,
            warnings: self.warnings.clone(),
        }
    }

    /// Rebuilds everything from a click log.
    fn replay(&self, log: &[Click]) -> Result<Derived> {
        let mut derived = Derived {
            state: None,
            result: None,
            warnings: Vec::new(),
        };
        for (n, c) in log.iter().enumerate() {
            derived = self.advance(
                &log[..n],
                derived.state.as_ref(),
                c.position.x,
                c.position.y,
                c.polarity,
            )?;
        }
        Ok(derived)
    }

    /// Drops the last click by replaying the rest of the log. The mask
    /// version still moves forward.
    pub fn undo(&mut self) -> Result<SessionState> {
        if self.log.is_empty() {
            return Err(Error::Protocol("nothing to undo".into()));
        }
        let shorter = &self.log[..self.log.len() - 1];
        let derived = self.replay(shorter)?;
        self.log.pop();
        self.version += 1;
        self.commit(derived);
        Ok(self.state())
    }

    pub fn state(&self) -> SessionState {
        SessionState {
            id: self.id.clone(),
            status: self.status(),
            width: self.image.width(),
            height: self.image.height(),
            superpixel_count: self.sp.count(),
            config: self.config.clone(),
            clicks: self.log.clone(),
            box_view: self.state.as_ref().map(|s| {
                let p = s.box_prior();
                BoxView {
                    e0: p.e0(),
                    e1: p.e1(),
                    mode: p.mode(),
                    boxed_superpixels: p.boxed_set().iter().copied().collect(),
                }
            }),
            version: self.version,
            mask_area: self.result.as_ref().map_or(0, |r| r.mask.area()),
            warnings: self.warnings.clone(),
        }
    }

    /// The latest mask; empty before the initial pair is complete.
    pub fn mask(&self) -> BinaryMask {
        self.result.as_ref().map_or_else(
            || BinaryMask::empty(self.image.width(), self.image.height()),
            |r| r.mask.clone(),
        )
    }

    pub fn result(&self) -> Option<&SegmentationResult> {
        self.result.as_ref()
    }

    pub fn click_state(&self) -> Option<&ClickState> {
        self.state.as_ref()
    }

    /// Any guidance channel for the current clicks. Box-derived kinds need
    /// the initial pair.
    pub fn guidance(&self, kind: GuidanceKind) -> Result<GuidanceMap> {
        let (w, h) = (self.image.width(), self.image.height());
        let clicks = self.state.as_ref().map_or(&self.log[..], |s| s.clicks());
        let need_box = || {
            self.state
                .as_ref()
                .map(ClickState::box_prior)
                .ok_or_else(|| Error::Protocol(format!("`{}` needs the initial click pair", kind.as_str())))
        };
        Ok(match kind {
            GuidanceKind::SpPos => superpixel_guidance(&self.sp, clicks, Polarity::Positive)?,
            GuidanceKind::SpNeg => superpixel_guidance(&self.sp, clicks, Polarity::Negative)?,
            GuidanceKind::EuclideanPos => euclidean_guidance(clicks, Polarity::Positive, w, h),
            GuidanceKind::EuclideanNeg => euclidean_guidance(clicks, Polarity::Negative, w, h),
            GuidanceKind::Spbox => spbox_guidance(&self.sp, need_box()?),
            GuidanceKind::Bbox => bbox_guidance(need_box()?, w, h),
            GuidanceKind::BboxDt => bbox_dt_guidance(need_box()?, w, h),
            GuidanceKind::Constant => constant_guidance(w, h, GUIDANCE_CEILING),
        })
    }

    /// What a session reduces to on disk: the image plus the click log.
    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            id: self.id.clone(),
            config: self.config.clone(),
            clicks: self.log.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub id: String,
    pub config: SessionConfig,
    pub clicks: Vec<Click>,
}

/// Concurrent sessions, each behind its own lock so work on one session
/// never waits for another.
#[derive(Debug)]
pub struct SessionStore {
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    registry: BackendRegistry,
}

impl Default for SessionStore {
    fn default() -> Self {
        Self::new(BackendRegistry::with_defaults(GraphCutParams::default()))
    }
}

impl SessionStore {
    pub fn new(registry: BackendRegistry) -> Self {
        Self {
            sessions: RwLock::new(HashMap::new()),
            registry,
        }
    }

    pub fn registry(&self) -> &BackendRegistry {
        &self.registry
    }

    fn insert(&self, session: Session) -> String {
        let id = session.id.clone();
        self.sessions
            .write()
            .expect("session table lock")
            .insert(id.clone(), Arc::new(Mutex::new(session)));
        id
    }

    /// Decodes the image and computes superpixels eagerly.
    pub fn create_session(&self, image_bytes: &[u8], config: SessionConfig) -> Result<String> {
        let image = Image::decode(image_bytes)?;
        let session = Session::new(uuid::Uuid::new_v4().simple().to_string(), image, config, &self.registry)?;
        Ok(self.insert(session))
    }

    pub fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>> {
        self.sessions
            .read()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| Error::UnknownSession(id.to_string()))
    }

    /// Runs `f` with the session locked; calls on one session serialize.
    pub fn with<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> Result<T>) -> Result<T> {
        let session = self.get(id)?;
        let mut guard = session.lock().unwrap_or_else(|poisoned| poisoned.into_inner());
        f(&mut guard)
    }

    pub fn post_click(&self, id: &str, x: u32, y: u32, polarity: Polarity) -> Result<ClickResponse> {
        self.with(id, |s| s.post_click(x, y, polarity))
    }

    pub fn undo(&self, id: &str) -> Result<SessionState> {
        self.with(id, Session::undo)
    }

    pub fn get_state(&self, id: &str) -> Result<SessionState> {
        self.with(id, |s| Ok(s.state()))
    }

    pub fn get_mask_png(&self, id: &str) -> Result<Vec<u8>> {
        self.with(id, |s| s.mask().encode_png())
    }

    pub fn get_guidance_png(&self, id: &str, kind: GuidanceKind) -> Result<Vec<u8>> {
        self.with(id, |s| s.guidance(kind)?.to_png())
    }

    pub fn remove(&self, id: &str) -> Result<()> {
        self.sessions
            .write()
            .expect("session table lock")
            .remove(id)
            .map(|_| ())
            .ok_or_else(|| Error::UnknownSession(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("session table lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes `<dir>/<id>.png` and `<dir>/<id>.json`.
    pub fn save_snapshot(&self, id: &str, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.with(id, |s| {
            std::fs::write(dir.join(format!("{id}.png")), s.image().encode_png()?)?;
            std::fs::write(
                dir.join(format!("{id}.json")),
                serde_json::to_vec_pretty(&s.snapshot())?,
            )?;
            Ok(())
        })
    }

    /// Recreates a saved session under its original id by replaying its log.
    pub fn restore_snapshot(&self, id: &str, dir: impl AsRef<Path>) -> Result<String> {
        let dir = dir.as_ref();
        let snapshot: SessionSnapshot = serde_json::from_slice(&std::fs::read(dir.join(format!("{id}.json")))?)?;
        let image = Image::decode(&std::fs::read(dir.join(format!("{id}.png")))?)?;
        let mut session = Session::new(snapshot.id, image, snapshot.config, &self.registry)?;
        for c in &snapshot.clicks {
            session.post_click(c.position.x, c.position.y, c.polarity)?;
        }
        Ok(self.insert(session))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn png() -> Vec<u8> {
        Image::from_fn(60, 40, |x, y| {
            if (x as i64 - 30).pow(2) + (y as i64 - 20).pow(2) < 100 {
                [220, 50, 50]
            } else {
                [40, 40, 160]
            }
        })
        .unwrap()
        .encode_png()
        .unwrap()
    }

    fn config(strict: bool) -> SessionConfig {
        SessionConfig {
            superpixels: 60,
            strict,
            ..SessionConfig::default()
        }
    }

    fn ready(store: &SessionStore, strict: bool) -> String {
        let id = store.create_session(&png(), config(strict)).unwrap();
        store.post_click(&id, 30, 20, Polarity::Positive).unwrap();
        store.post_click(&id, 45, 30, Polarity::Negative).unwrap();
        id
    }

    #[test]
    fn new_session_waits_for_the_pair() {
        let store = SessionStore::default();
        let id = store.create_session(&png(), config(true)).unwrap();
        let state = store.get_state(&id).unwrap();
        assert_eq!(state.status, SessionStatus::AwaitingInitialPair);
        assert_eq!((state.version, state.mask_area), (0, 0));
        assert!(store.create_session(&[], config(true)).is_err());
    }

    #[test]
    fn initial_pair_order_is_enforced() {
        let store = SessionStore::default();
        let id = store.create_session(&png(), config(true)).unwrap();
        let err = store.post_click(&id, 30, 20, Polarity::Negative).unwrap_err();
        assert!(err.to_string().contains("initial click must be positive"));
        let r = store.post_click(&id, 30, 20, Polarity::Positive).unwrap();
        assert_eq!((r.version, r.state.status), (0, SessionStatus::AwaitingInitialNegative));
        assert!(store.post_click(&id, 50, 30, Polarity::Positive).is_err());
        let r = store.post_click(&id, 45, 30, Polarity::Negative).unwrap();
        assert_eq!(r.version, 1);
        assert!(r.state.box_view.is_some());
        assert!(store.post_click(&id, 99, 0, Polarity::Negative).is_err());
    }

    #[test]
    fn strict_rejects_and_lenient_warns() {
        let store = SessionStore::default();
        let strict = ready(&store, true);
        let before = store.get_state(&strict).unwrap();
        // a positive click inside the boxed region violates the constraint
        let err = store.post_click(&strict, 31, 21, Polarity::Positive).unwrap_err();
        assert!(matches!(err, Error::ConstraintViolation { .. }));
        assert_eq!(store.get_state(&strict).unwrap(), before);

        let lenient = ready(&store, false);
        let before = store.get_state(&lenient).unwrap();
        let r = store.post_click(&lenient, 31, 21, Polarity::Positive).unwrap();
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.version, before.version + 1);
        assert_eq!(
            r.state.box_view.as_ref().unwrap().boxed_superpixels,
            before.box_view.unwrap().boxed_superpixels
        );
    }

    #[test]
    fn undo_matches_a_fresh_replay() {
        let store = SessionStore::default();
        let id = ready(&store, false);
        let two = store.get_state(&id).unwrap();
        let two_mask = store.get_mask_png(&id).unwrap();
        store.post_click(&id, 2, 2, Polarity::Negative).unwrap();
        let undone = store.undo(&id).unwrap();
        assert_eq!(undone.clicks, two.clicks);
        assert_eq!(undone.box_view, two.box_view);
        assert!(undone.version > two.version);
        assert_eq!(store.get_mask_png(&id).unwrap(), two_mask);
        store.undo(&id).unwrap();
        store.undo(&id).unwrap();
        assert!(store.undo(&id).is_err());
        assert_eq!(store.get_state(&id).unwrap().status, SessionStatus::AwaitingInitialPair);
    }

    #[test]
    fn guidance_pngs() {
        let store = SessionStore::default();
        let id = store.create_session(&png(), config(true)).unwrap();
        assert!(store.get_guidance_png(&id, GuidanceKind::Spbox).is_err());
        store.post_click(&id, 30, 20, Polarity::Positive).unwrap();
        store.post_click(&id, 45, 30, Polarity::Negative).unwrap();
        let bytes = store.get_guidance_png(&id, GuidanceKind::Spbox).unwrap();
        let img = image::load_from_memory(&bytes).unwrap().to_luma8();
        assert!(img.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));
        assert!(img.pixels().any(|p| p.0[0] == 255));
        assert!(store.get_guidance_png(&id, GuidanceKind::SpPos).is_ok());
    }

    #[test]
    fn sessions_are_isolated_and_snapshots_restore() {
        let store = SessionStore::default();
        let a = ready(&store, true);
        let b = store.create_session(&png(), config(true)).unwrap();
        assert_eq!(store.get_state(&b).unwrap().version, 0);
        assert!(matches!(store.get_state("nope"), Err(Error::UnknownSession(_))));

        let dir = tempfile::tempdir().unwrap();
        store.save_snapshot(&a, dir.path()).unwrap();
        let other = SessionStore::default();
        let restored = other.restore_snapshot(&a, dir.path()).unwrap();
        assert_eq!(restored, a);
        assert_eq!(other.get_state(&a).unwrap(), store.get_state(&a).unwrap());
        assert_eq!(other.get_mask_png(&a).unwrap(), store.get_mask_png(&a).unwrap());
    }
}
