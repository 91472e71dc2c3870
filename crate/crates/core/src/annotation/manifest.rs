use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidInput(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub annotation: PathBuf,
    pub book: String,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Non-fatal problems found while loading (missing files and the like).
    pub warnings: Vec<String>,
}

#[derive(Deserialize, Serialize)]
struct Record {
    image: String,
    annotation: String,
    book: String,
    split: String,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// `(train, test)` page counts.
    pub fn split_counts(&self) -> (usize, usize) {
        let train = self.split(Split::Train).count();
        (train, self.entries.len() - train)
    }

    /// Per-book `(train, test)` counts.
    pub fn book_counts(&self) -> BTreeMap<String, (usize, usize)> {
        let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for e in &self.entries {
            let c = counts.entry(e.book.clone()).or_default();
            match e.split {
                Split::Train => c.0 += 1,
                Split::Test => c.1 += 1,
            }
        }
        counts
    }

    pub fn check_totals(&self, total: usize, train: usize, test: usize) -> Result<()> {
        let (tr, te) = self.split_counts();
        if self.entries.len() != total || tr != train || te != test {
            return Err(Error::Validation(format!(
                "manifest has {} pages ({tr} train, {te} test), expected {total} ({train} train, {test} test)",
                self.entries.len()
            )));
        }
        Ok(())
    }
}

fn resolve(base: &Path, value: &str) -> PathBuf {
    let p = Path::new(value);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads a CSV manifest (`image,annotation,book,split`). Relative paths are
/// resolved against the manifest's directory. Missing files become warnings.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Import {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    })?;
    let mut manifest = DatasetManifest::default();
    for (i, record) in reader.deserialize::<Record>().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(i + 2, |p| p.line() as usize),
            column: 1,
            message: e.to_string(),
        })?;
        let entry = ManifestEntry {
            image: resolve(&base, &record.image),
            annotation: resolve(&base, &record.annotation),
            book: record.book,
            split: record.split.parse().map_err(|e: Error| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                column: 1,
                message: e.to_string(),
            })?,
        };
        for (kind, p) in [("image", &entry.image), ("annotation", &entry.annotation)] {
            if !p.is_file() {
                let msg = format!("missing {kind} file {}", p.display());
                log::warn!("{msg}");
                manifest.warnings.push(msg);
            }
        }
        manifest.entries.push(entry);
    }
    Ok(manifest)
}

/// Writes entries as CSV, storing paths relative to the manifest directory
/// where possible.
pub fn write_manifest(entries: &[ManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let rel = |p: &Path| {
        p.strip_prefix(base)
            .unwrap_or(p)
            .to_string_lossy()
            .into_owned()
    };
    let mut writer = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidInput(format!("{other:?}")),
    })?;
    for e in entries {
        writer.serialize(Record {
            image: rel(&e.image),
            annotation: rel(&e.annotation),
            book: e.book.clone(),
            split: e.split.to_string(),
        })?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write_pages(dir: &Path, n: usize) -> Vec<ManifestEntry> {
        (0..n)
            .map(|i| {
                let image = dir.join(format!("p{i}.png"));
                let annotation = dir.join(format!("p{i}.json"));
                fs::write(&image, b"x").unwrap();
                fs::write(&annotation, b"{}").unwrap();
                ManifestEntry {
                    image,
                    annotation,
                    book: if i % 2 == 0 { "A".into() } else { "B".into() },
                    split: if i < n / 2 { Split::Train } else { Split::Test },
                }
            })
            .collect()
    }

    #[test]
    fn six_page_manifest_counts() {
        let dir = tempfile::tempdir().unwrap();
        let entries = write_pages(dir.path(), 6);
        let path = dir.path().join("manifest.csv");
        write_manifest(&entries, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("image,annotation,book,split\n"));
        assert!(text.contains("p0.png,p0.json,A,train"));
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.split_counts(), (3, 3));
        assert!(m.warnings.is_empty());
        assert_eq!(m.entries, entries);
        m.check_totals(6, 3, 3).unwrap();
        assert!(m.check_totals(6, 2, 4).is_err());
    }

    #[test]
    fn missing_image_is_a_warning() {
        let dir = tempfile::tempdir().unwrap();
        let entries = write_pages(dir.path(), 3);
        fs::remove_file(&entries[1].image).unwrap();
        let path = dir.path().join("m.csv");
        write_manifest(&entries, &path).unwrap();
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.warnings.len(), 1);
    }

    #[test]
    fn counts_independent_of_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut entries = write_pages(dir.path(), 8);
        let path = dir.path().join("m.csv");
        write_manifest(&entries, &path).unwrap();
        let a = load_manifest(&path).unwrap();
        entries.reverse();
        write_manifest(&entries, &path).unwrap();
        let b = load_manifest(&path).unwrap();
        assert_eq!(a.split_counts(), b.split_counts());
        assert_eq!(a.book_counts(), b.book_counts());
    }

    #[test]
    fn bad_split_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "image,annotation,book,split\na.png,a.json,X,validation\n").unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Parse { line: 2, .. })));
    }
}
