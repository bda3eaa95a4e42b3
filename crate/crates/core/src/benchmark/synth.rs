//! Seeded synthetic corpus: textured backgrounds carrying one to three blobs
//! of a shared color family, so every blob has look-alike distractors.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, ManifestEntry};
use super::Instance;
use crate::error::{Error, Result};
use crate::raster::{save_image, save_mask, BinaryMask, Image};
use crate::simulator::{rng_for, SimRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub width: u32,
    pub height: u32,
    pub min_blobs: usize,
    pub max_blobs: usize,
    /// Least RGB distance between the blob color family and the background
    /// base color.
    pub color_margin: f64,
    /// Blob lobe radii in pixels.
    pub radius_min: f64,
    pub radius_max: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            width: 480,
            height: 320,
            min_blobs: 1,
            max_blobs: 3,
            color_margin: 60.0,
            radius_min: 34.0,
            radius_max: 72.0,
        }
    }
}

impl SynthParams {
    /// Defaults on a `width x height` canvas, blob radii scaled with the
    /// width.
    pub fn at_size(width: u32, height: u32) -> Self {
        let d = Self::default();
        let scale = width as f64 / d.width as f64;
        Self {
            width,
            height,
            radius_min: d.radius_min * scale,
            radius_max: d.radius_max * scale,
            ..d
        }
    }

    fn validate(&self) -> Result<()> {
        if self.width < 32 || self.height < 32 {
            return Err(Error::InvalidArgument(
                "synthetic images need at least 32x32 pixels".into(),
            ));
        }
        if self.min_blobs == 0 || self.min_blobs > self.max_blobs {
            return Err(Error::InvalidArgument("blob count range is empty".into()));
        }
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max) {
            return Err(Error::InvalidArgument("blob radius range is empty".into()));
        }
        if !(0.0..=200.0).contains(&self.color_margin) {
            return Err(Error::InvalidArgument("color margin must lie in [0, 200]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    pub name: String,
    pub image: Arc<Image>,
    pub masks: Vec<BinaryMask>,
    /// A deliberately imperfect mask per blob, for refinement runs.
    pub initial_masks: Vec<BinaryMask>,
    pub background_color: [f64; 3],
    pub blob_colors: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub images: Vec<SynthImage>,
}

impl SynthCorpus {
    /// One instance per blob, named `<image>_<blob>`.
    pub fn instances(&self) -> Vec<Instance> {
        self.images
            .iter()
            .flat_map(|img| {
                img.masks
                    .iter()
                    .zip(&img.initial_masks)
                    .enumerate()
                    .map(|(k, (m, init))| Instance {
                        id: format!("{}_{k}", img.name),
                        image: Arc::clone(&img.image),
                        ground_truth: m.clone(),
                        initial: Some(init.clone()),
                    })
            })
            .collect()
    }

    /// Writes `images/`, `masks/`, `initial/` and `manifest.tsv` under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<DatasetManifest> {
        let dir = dir.as_ref();
        for sub in ["images", "masks", "initial"] {
            std::fs::create_dir_all(dir.join(sub))?;
        }
        let mut entries = Vec::new();
        for img in &self.images {
            let image_rel = Path::new("images").join(format!("{}.png", img.name));
            save_image(&img.image, dir.join(&image_rel))?;
            for (k, (mask, init)) in img.masks.iter().zip(&img.initial_masks).enumerate() {
                let id = format!("{}_{k}", img.name);
                let mask_rel = Path::new("masks").join(format!("{id}.png"));
                let init_rel = Path::new("initial").join(format!("{id}.png"));
                save_mask(mask, dir.join(&mask_rel))?;
                save_mask(init, dir.join(&init_rel))?;
                entries.push(ManifestEntry {
                    image: image_rel.clone(),
                    mask: mask_rel,
                    instance_id: id,
                    initial: Some(init_rel),
                });
            }
        }
        let manifest = DatasetManifest {
            name: "manifest".into(),
            root: dir.to_path_buf(),
            entries,
        };
        manifest.save(dir.join("manifest.tsv"))?;
        Ok(manifest)
    }
}

pub fn synth_corpus(n: usize, seed: u64) -> Result<SynthCorpus> {
    synth_corpus_with(n, seed, &SynthParams::default())
}

pub fn synth_corpus_with(n: usize, seed: u64, params: &SynthParams) -> Result<SynthCorpus> {
    params.validate()?;
    let images = (0..n)
        .map(|i| synth_image(&format!("{i:03}"), params, &mut rng_for(seed, i as u64)))
        .collect::<Result<_>>()?;
    Ok(SynthCorpus { images })
}

fn random_color(rng: &mut SimRng) -> [f64; 3] {
    [0, 1, 2].map(|_| rng.random_range(30.0..225.0))
}

fn color_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>().sqrt()
}

struct Lobe {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    cos: f64,
    sin: f64,
}

impl Lobe {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0
    }
}

/// A union of two or three rotated ellipses around a common center.
fn blob_mask(params: &SynthParams, rng: &mut SimRng) -> BinaryMask {
    let (w, h) = (params.width as f64, params.height as f64);
    let reach = params.radius_max * 1.6;
    let cx = rng.random_range(reach.min(w / 2.0)..=(w - reach).max(w / 2.0));
    let cy = rng.random_range(reach.min(h / 2.0)..=(h - reach).max(h / 2.0));
    let lobes: Vec<Lobe> = (0..rng.random_range(2..=3))
        .map(|i| {
            let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let shift = if i == 0 {
                0.0
            } else {
                rng.random_range(0.0..params.radius_min)
            };
            let dir: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            Lobe {
                cx: cx + shift * dir.cos(),
                cy: cy + shift * dir.sin(),
                rx: rng.random_range(params.radius_min..=params.radius_max),
                ry: rng.random_range(params.radius_min * 0.6..=params.radius_max * 0.8),
                cos: angle.cos(),
                sin: angle.sin(),
            }
        })
        .collect();
    BinaryMask::from_fn(params.width, params.height, |x, y| {
        lobes.iter().any(|l| l.contains(x as f64, y as f64))
    })
}

fn dilate(mask: &BinaryMask, r: i64) -> BinaryMask {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
        (-r..=r).any(|dy| {
            (-r..=r).any(|dx| {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                nx >= 0 && ny >= 0 && nx < w && ny < h && mask.get(nx as u32, ny as u32)
            })
        })
    })
}

/// The ground truth shifted by a few pixels with one elliptical bite taken
/// out; never empty.
fn initial_mask(gt: &BinaryMask, rng: &mut SimRng) -> BinaryMask {
    let (w, h) = (gt.width() as i64, gt.height() as i64);
    let dx = rng.random_range(-6i64..=6);
    let dy = rng.random_range(-6i64..=6);
    let (b0, b1) = gt.bounding_box().expect("blob masks are nonempty");
    let bite = Lobe {
        cx: rng.random_range(b0.x as f64..=b1.x as f64),
        cy: rng.random_range(b0.y as f64..=b1.y as f64),
        rx: (b1.x - b0.x + 1) as f64 * 0.3,
        ry: (b1.y - b0.y + 1) as f64 * 0.3,
        cos: 1.0,
        sin: 0.0,
    };
    let shifted = BinaryMask::from_fn(gt.width(), gt.height(), |x, y| {
        let (sx, sy) = (x as i64 - dx, y as i64 - dy);
        sx >= 0 && sy >= 0 && sx < w && sy < h && gt.get(sx as u32, sy as u32)
    });
    let bitten = BinaryMask::from_fn(gt.width(), gt.height(), |x, y| {
        shifted.get(x, y) && !bite.contains(x as f64, y as f64)
    });
    if bitten.is_empty() {
        shifted
    } else {
        bitten
    }
}

fn synth_image(name: &str, params: &SynthParams, rng: &mut SimRng) -> Result<SynthImage> {
    let background = random_color(rng);
    let mut family = random_color(rng);
    let mut tries = 0;
    // the family base must clear the margin by the jitter so every blob does
    while color_distance(family, background) < params.color_margin + 20.0 {
        family = random_color(rng);
        tries += 1;
        if tries > 10_000 {
            return Err(Error::Simulation(
                "cannot draw a blob color far enough from the background".into(),
            ));
        }
    }
    let stripe_color = [0, 1, 2].map(|c| (background[c] + rng.random_range(-25.0..25.0)).clamp(0.0, 255.0));
    let stripe_period = rng.random_range(12.0..30.0);
    let stripe_angle: f64 = rng.random_range(0.0..std::f64::consts::PI);

    let wanted = rng.random_range(params.min_blobs..=params.max_blobs);
    let mut masks: Vec<BinaryMask> = Vec::new();
    let mut occupied = BinaryMask::empty(params.width, params.height);
    for _ in 0..200 {
        if masks.len() == wanted {
            break;
        }
        let m = blob_mask(params, rng);
        if m.area() < 50 {
            continue;
        }
        let grown = dilate(&m, 4);
        if grown.bits().iter().zip(occupied.bits()).any(|(&a, &b)| a && b) {
            continue;
        }
        occupied = BinaryMask::from_fn(params.width, params.height, |x, y| {
            occupied.get(x, y) || grown.get(x, y)
        });
        masks.push(m);
    }
    if masks.len() < params.min_blobs {
        return Err(Error::Simulation(format!(
            "could not place {} blobs in image {name}",
            params.min_blobs
        )));
    }
    let blob_colors: Vec<[f64; 3]> = masks
        .iter()
        .map(|_| [0, 1, 2].map(|c| (family[c] + rng.random_range(-10.0..10.0)).clamp(0.0, 255.0)))
        .collect();

    let (ca, sa) = (stripe_angle.cos(), stripe_angle.sin());
    let image = Image::from_fn(params.width, params.height, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        let owner = masks.iter().position(|m| m.get(x, y));
        let base = match owner {
            Some(k) => blob_colors[k],
            None => {
                let phase = ((xf * ca + yf * sa) / stripe_period).rem_euclid(1.0);
                if phase < 0.5 {
                    background
                } else {
                    stripe_color
                }
            }
        };
        let noise = 8.0;
        [0, 1, 2].map(|c| (base[c] + rng.random_range(-noise..=noise)).round().clamp(0.0, 255.0) as u8)
    })?;
    let initial_masks = masks.iter().map(|m| initial_mask(m, rng)).collect();
    Ok(SynthImage {
        name: name.to_string(),
        image: Arc::new(image),
        masks,
        initial_masks,
        background_color: background,
        blob_colors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_corpus() {
        let a = synth_corpus(4, 9).unwrap();
        let b = synth_corpus(4, 9).unwrap();
        assert_eq!(a, b);
        let c = synth_corpus(4, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn masks_nonempty_disjoint_and_margin_respected() {
        let params = SynthParams::default();
        let corpus = synth_corpus(12, 3).unwrap();
        for img in &corpus.images {
            assert!((params.min_blobs..=params.max_blobs).contains(&img.masks.len()));
            for (k, m) in img.masks.iter().enumerate() {
                assert!(!m.is_empty());
                assert_eq!((m.width(), m.height()), (params.width, params.height));
                for other in &img.masks[k + 1..] {
                    assert!(m.bits().iter().zip(other.bits()).all(|(&a, &b)| !(a && b)));
                }
                assert!(color_distance(img.blob_colors[k], img.background_color) >= params.color_margin);
            }
            assert!(img.initial_masks.iter().all(|m| !m.is_empty()));
        }
    }

    #[test]
    fn written_corpus_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = synth_corpus(2, 1).unwrap();
        let written = corpus.write(dir.path()).unwrap();
        let loaded = DatasetManifest::load(dir.path().join("manifest.tsv")).unwrap();
        assert_eq!(loaded.entries, written.entries);
        let instances = loaded.load_instances().unwrap();
        let expected = corpus.instances();
        assert_eq!(instances.len(), expected.len());
        for (a, b) in instances.iter().zip(&expected) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.image, b.image);
            assert_eq!(a.ground_truth, b.ground_truth);
            assert_eq!(a.initial, b.initial);
        }
    }
}
