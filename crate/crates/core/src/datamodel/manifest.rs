use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Validation(format!(
                "unknown split `{other}` (expected train or test)"
            ))),
        }
    }
}

/// One record of `manifest.json`. Paths are relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image_path: PathBuf,
    pub element_mask_path: PathBuf,
    pub defect_mask_path: PathBuf,
    pub split: Split,
    /// Optional instance counts per element class name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instances: Option<BTreeMap<String, u32>>,
}

/// Raw record shape, so unknown split labels surface as validation errors
/// rather than generic parse failures.
#[derive(Deserialize)]
struct RawEntry {
    id: String,
    image_path: PathBuf,
    element_mask_path: PathBuf,
    defect_mask_path: PathBuf,
    split: String,
    #[serde(default)]
    instances: Option<BTreeMap<String, u32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn resolve(&self, relative: &Path) -> PathBuf {
        self.root.join(relative)
    }

    /// Writes `manifest.json` under `root`.
    pub fn save(&self) -> Result<()> {
        let path = self.root.join(MANIFEST_FILE);
        let text =
            serde_json::to_string_pretty(&self.entries).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

/// Loads and validates a manifest. `path` may name the manifest file or the
/// dataset root containing `manifest.json`.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let file = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let root = file
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    let raw: Vec<RawEntry> = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", file.display())))?;

    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(raw.len());
    for r in raw {
        if !seen.insert(r.id.clone()) {
            return Err(Error::Validation(format!("duplicate entry id `{}`", r.id)));
        }
        let split = r.split.parse::<Split>().map_err(|_| {
            Error::Validation(format!("entry `{}`: unknown split `{}`", r.id, r.split))
        })?;
        entries.push(ManifestEntry {
            id: r.id,
            image_path: r.image_path,
            element_mask_path: r.element_mask_path,
            defect_mask_path: r.defect_mask_path,
            split,
            instances: r.instances,
        });
    }
    let manifest = DatasetManifest { root, entries };
    for entry in &manifest.entries {
        for (what, rel) in [
            ("image", &entry.image_path),
            ("element mask", &entry.element_mask_path),
            ("defect mask", &entry.defect_mask_path),
        ] {
            let full = manifest.resolve(rel);
            if !full.is_file() {
                return Err(Error::Entry {
                    id: entry.id.clone(),
                    message: format!("{what} file {} not found", full.display()),
                });
            }
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write_entry_files(root: &Path, id: &str) {
        for dir in ["images", "labels_element", "labels_defect"] {
            std::fs::create_dir_all(root.join(dir)).unwrap();
            std::fs::write(root.join(dir).join(format!("{id}.png")), b"x").unwrap();
        }
    }

    fn record(id: &str, split: &str) -> String {
        format!(
            r#"{{"id":"{id}","image_path":"images/{id}.png","element_mask_path":"labels_element/{id}.png","defect_mask_path":"labels_defect/{id}.png","split":"{split}"}}"#
        )
    }

    #[test]
    fn split_sizes_like_table_one() {
        let dir = tempdir().unwrap();
        let mut records = Vec::new();
        for i in 0..145 {
            let id = format!("img{i:03}");
            write_entry_files(dir.path(), &id);
            records.push(record(&id, if i < 130 { "train" } else { "test" }));
        }
        std::fs::write(
            dir.path().join(MANIFEST_FILE),
            format!("[{}]", records.join(",")),
        )
        .unwrap();
        let m = load_manifest(dir.path()).unwrap();
        assert_eq!(m.entries.len(), 145);
        assert_eq!(m.count(Split::Train), 130);
        assert_eq!(m.count(Split::Test), 15);
    }

    #[test]
    fn empty_manifest_is_valid() {
        let dir = tempdir().unwrap();
        std::fs::write(dir.path().join(MANIFEST_FILE), "[]").unwrap();
        assert!(load_manifest(dir.path()).unwrap().entries.is_empty());
    }

    #[test]
    fn missing_mask_names_entry() {
        let dir = tempdir().unwrap();
        write_entry_files(dir.path(), "a");
        std::fs::remove_file(dir.path().join("labels_defect/a.png")).unwrap();
        std::fs::write(
            dir.path().join(MANIFEST_FILE),
            format!("[{}]", record("a", "train")),
        )
        .unwrap();
        match load_manifest(dir.path()) {
            Err(Error::Entry { id, .. }) => assert_eq!(id, "a"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_and_unknown_split_rejected() {
        let dir = tempdir().unwrap();
        write_entry_files(dir.path(), "a");
        let file = dir.path().join(MANIFEST_FILE);
        std::fs::write(
            &file,
            format!("[{},{}]", record("a", "train"), record("a", "test")),
        )
        .unwrap();
        assert!(
            matches!(load_manifest(&file), Err(Error::Validation(m)) if m.contains("duplicate"))
        );
        std::fs::write(&file, format!("[{}]", record("a", "val"))).unwrap();
        assert!(matches!(load_manifest(&file), Err(Error::Validation(m)) if m.contains("split")));
    }
}
