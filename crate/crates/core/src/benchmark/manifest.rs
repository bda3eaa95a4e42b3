use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::Instance;
use crate::error::{Error, Result};
use crate::raster::{load_image, load_mask, Image};

/// One object instance: its image, its binary mask, and optionally an
/// initial mask to refine. Paths are relative to the manifest's directory
/// unless absolute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub instance_id: String,
    pub initial: Option<PathBuf>,
}

/// A tab-separated list of instances:
///
/// ```text
/// # image      mask            instance_id   [initial]
/// img/0.png    mask/0_0.png    0_0           init/0_0.png
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Parses manifest text without touching the file system.
    pub fn parse(text: &str, name: &str, root: impl Into<PathBuf>, origin: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut ids = HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Manifest {
                path: origin.to_path_buf(),
                line: n + 1,
                message,
            };
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            if !(3..=4).contains(&fields.len()) || fields.iter().any(|f| f.is_empty()) {
                return Err(err(format!(
                    "expected 3 or 4 non-empty tab-separated fields, found {}",
                    fields.len()
                )));
            }
            if !ids.insert(fields[2].to_string()) {
                return Err(err(format!("duplicate instance id `{}`", fields[2])));
            }
            entries.push(ManifestEntry {
                image: fields[0].into(),
                mask: fields[1].into(),
                instance_id: fields[2].to_string(),
                initial: fields.get(3).map(PathBuf::from),
            });
        }
        Ok(Self {
            name: name.to_string(),
            root: root.into(),
            entries,
        })
    }

    /// Reads a manifest and checks that every referenced file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let name = path
            .file_stem()
            .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        let manifest = Self::parse(&text, &name, root, path)?;
        let mut line_of = HashMap::new();
        for (n, raw) in text.lines().enumerate() {
            if let Some(id) = raw.split('\t').nth(2) {
                line_of.entry(id.trim().to_string()).or_insert(n + 1);
            }
        }
        for entry in &manifest.entries {
            let files = [Some(&entry.image), Some(&entry.mask), entry.initial.as_ref()];
            for file in files.into_iter().flatten() {
                let resolved = manifest.resolve(file);
                if !resolved.is_file() {
                    return Err(Error::Manifest {
                        path: path.to_path_buf(),
                        line: line_of.get(&entry.instance_id).copied().unwrap_or(0),
                        message: format!("missing file {}", resolved.display()),
                    });
                }
            }
        }
        Ok(manifest)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# image\tmask\tinstance_id\tinitial\n");
        for e in &self.entries {
            let _ = write!(out, "{}\t{}\t{}", e.image.display(), e.mask.display(), e.instance_id);
            if let Some(init) = &e.initial {
                let _ = write!(out, "\t{}", init.display());
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Decodes every instance. Images shared by several instances are read
    /// once.
    pub fn load_instances(&self) -> Result<Vec<Instance>> {
        if self.entries.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "manifest `{}` has no entries",
                self.name
            )));
        }
        let mut images: HashMap<PathBuf, Arc<Image>> = HashMap::new();
        let mut out = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let image_path = self.resolve(&e.image);
            let image = match images.get(&image_path) {
                Some(img) => Arc::clone(img),
                None => {
                    let img = Arc::new(load_image(&image_path)?);
                    images.insert(image_path, Arc::clone(&img));
                    img
                }
            };
            let ground_truth = load_mask(self.resolve(&e.mask))?;
            let initial = e.initial.as_ref().map(|p| load_mask(self.resolve(p))).transpose()?;
            out.push(Instance::new(e.instance_id.clone(), image, ground_truth, initial)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_optional_column() {
        let text = "# header\n\na.png\tam.png\t1\nb.png\tbm.png\t2\tbi.png\r\n";
        let m = DatasetManifest::parse(text, "t", "/data", Path::new("t.tsv")).unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries[0].initial, None);
        assert_eq!(m.entries[1].initial, Some(PathBuf::from("bi.png")));
        assert_eq!(m.resolve(&m.entries[0].image), PathBuf::from("/data/a.png"));
        let again = DatasetManifest::parse(&m.to_text(), "t", "/data", Path::new("t.tsv")).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn reports_the_offending_line() {
        let text = "a.png\tam.png\t1\na.png\tam.png\n";
        match DatasetManifest::parse(text, "t", "", Path::new("t.tsv")) {
            Err(Error::Manifest { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let dup = "a.png\tam.png\t1\nb.png\tbm.png\t1\n";
        assert!(DatasetManifest::parse(dup, "t", "", Path::new("t.tsv")).is_err());
    }

    #[test]
    fn missing_files_fail_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        std::fs::write(&path, "nope.png\tnope_mask.png\t0\n").unwrap();
        let err = DatasetManifest::load(&path).unwrap_err();
        assert!(err.to_string().contains("missing file"), "{err}");
    }

    #[test]
    fn empty_manifest_has_no_instances() {
        let m = DatasetManifest::parse("# nothing\n", "t", "", Path::new("t.tsv")).unwrap();
        assert!(m.load_instances().is_err());
    }
}
