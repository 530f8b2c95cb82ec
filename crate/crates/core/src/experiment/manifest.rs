use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub track_id: String,
    pub path: PathBuf,
    pub label: String,
    pub fold: usize,
    #[serde(default, deserialize_with = "empty_as_none")]
    pub artist: Option<String>,
}

fn empty_as_none<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<String>, D::Error> {
    let s: Option<String> = Option::deserialize(d)?;
    Ok(s.filter(|s| !s.trim().is_empty()))
}

/// Tracks with labels and fold assignments, read from `track_id,path,label,fold,artist` CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub name: String,
    pub fold_count: usize,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Fold count is one past the largest fold id.
    pub fn new(name: impl Into<String>, entries: Vec<ManifestEntry>) -> Result<Self> {
        let fold_count = entries.iter().map(|e| e.fold + 1).max().unwrap_or(0);
        let m = Self {
            name: name.into(),
            fold_count,
            entries,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::EmptyInput(format!("manifest '{}' has no tracks", self.name)));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if e.track_id.trim().is_empty() {
                return Err(Error::Format("empty track_id in manifest".into()));
            }
            if !seen.insert(e.track_id.as_str()) {
                return Err(Error::Format(format!("duplicate track_id '{}'", e.track_id)));
            }
            if e.label.trim().is_empty() {
                return Err(Error::Format(format!("track '{}' has an empty label", e.track_id)));
            }
            if e.fold >= self.fold_count {
                return Err(Error::Format(format!(
                    "track '{}' has fold {} outside [0, {})",
                    e.track_id, e.fold, self.fold_count
                )));
            }
        }
        Ok(())
    }

    /// Relative audio paths are resolved against the manifest's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let mut entries = Vec::new();
        for rec in r.deserialize() {
            let mut e: ManifestEntry = rec?;
            if e.path.is_relative() {
                e.path = base.join(&e.path);
            }
            entries.push(e);
        }
        // a generic file name says nothing; fall back to the directory
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        let name = match stem.as_deref() {
            Some("manifest") | None => base
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into()),
            Some(s) => s.to_owned(),
        };
        Self::new(name, entries)
    }

    /// Paths under the manifest's directory are written relative to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new(""));
        let mut w = csv::Writer::from_path(path)?;
        for e in &self.entries {
            let mut e = e.clone();
            if let Ok(rel) = e.path.strip_prefix(base) {
                e.path = rel.to_path_buf();
            }
            w.serialize(e)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Sorted distinct label names; a label's index here is its class id.
    pub fn label_names(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.entries.iter().map(|e| e.label.as_str()).collect();
        set.into_iter().map(str::to_owned).collect()
    }

    pub fn label_ids(&self) -> Vec<usize> {
        let names = self.label_names();
        self.entries
            .iter()
            .map(|e| names.binary_search(&e.label).expect("label listed"))
            .collect()
    }

    /// Entry indices of the training and test tracks for `fold`.
    pub fn fold_split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.entries.len()).partition(|&i| self.entries[i].fold != fold)
    }

    /// Artists that appear in more than one fold. Empty when the artist filter holds.
    pub fn artist_violations(&self) -> Vec<String> {
        let mut folds: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
        for e in &self.entries {
            if let Some(a) = &e.artist {
                folds.entry(a.as_str()).or_default().insert(e.fold);
            }
        }
        folds
            .into_iter()
            .filter(|(_, f)| f.len() > 1)
            .map(|(a, _)| a.to_owned())
            .collect()
    }

    pub fn has_artists(&self) -> bool {
        self.entries.iter().any(|e| e.artist.is_some())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, label: &str, fold: usize, artist: Option<&str>) -> ManifestEntry {
        ManifestEntry {
            track_id: id.into(),
            path: format!("{id}.wav").into(),
            label: label.into(),
            fold,
            artist: artist.map(str::to_owned),
        }
    }

    #[test]
    fn csv_roundtrip_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("set.csv");
        std::fs::write(&p, "track_id,path,label,fold,artist\na,a.wav,rock,0,x\nb,/abs/b.wav,jazz,1,\n").unwrap();
        let m = DatasetManifest::load(&p).unwrap();
        assert_eq!(m.name, "set");
        assert_eq!(m.fold_count, 2);
        assert_eq!(m.entries[0].path, dir.path().join("a.wav"));
        assert_eq!(m.entries[1].path, PathBuf::from("/abs/b.wav"));
        assert_eq!(m.entries[1].artist, None);
        assert_eq!(m.label_names(), vec!["jazz", "rock"]);
        assert_eq!(m.label_ids(), vec![1, 0]);
        let q = dir.path().join("copy.csv");
        m.save(&q).unwrap();
        let text = std::fs::read_to_string(&q).unwrap();
        assert!(text.starts_with("track_id,path,label,fold,artist\na,a.wav,rock,0,x\n"));
        let mut back = DatasetManifest::load(&q).unwrap();
        back.name = m.name.clone();
        assert_eq!(back, m);
    }

    #[test]
    fn invalid_manifests_rejected() {
        assert!(DatasetManifest::new("x", vec![]).is_err());
        assert!(DatasetManifest::new("x", vec![entry("a", "r", 0, None), entry("a", "j", 1, None)]).is_err());
        assert!(DatasetManifest::new("x", vec![entry("a", " ", 0, None)]).is_err());
    }

    #[test]
    fn folds_are_disjoint() {
        let m = DatasetManifest::new(
            "x",
            vec![entry("a", "r", 0, None), entry("b", "r", 1, None), entry("c", "j", 2, None)],
        )
        .unwrap();
        for f in 0..m.fold_count {
            let (train, test) = m.fold_split(f);
            assert_eq!(train.len() + test.len(), 3);
            assert!(train.iter().all(|i| !test.contains(i)));
        }
    }

    #[test]
    fn artist_filter_check() {
        let ok = DatasetManifest::new("x", vec![entry("a", "r", 0, Some("p")), entry("b", "r", 0, Some("p"))]).unwrap();
        assert!(ok.artist_violations().is_empty());
        let bad = DatasetManifest::new("x", vec![entry("a", "r", 0, Some("p")), entry("b", "r", 1, Some("p"))]).unwrap();
        assert_eq!(bad.artist_violations(), vec!["p"]);
    }
}
