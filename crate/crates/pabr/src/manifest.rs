//! Tab-separated dataset manifests.
//!
//! One sample per line: `sample_id identity camera appearance part split`.
//! Lines starting with `#` and blank lines are skipped. Relative map paths are
//! resolved against the manifest's directory.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use pabr_core::model::{ImageSample, MapRole, SampleLabel, Split};

use crate::error::{Error, Result};
use crate::format::read_feature_file;

pub const HEADER: &str = "# sample_id\tidentity\tcamera\tappearance\tpart\tsplit";

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub label: SampleLabel,
    pub appearance: PathBuf,
    pub part: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths are resolved against.
    pub base: PathBuf,
}

impl Manifest {
    pub fn parse(text: &str, base: impl Into<PathBuf>, name: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut ids = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 6 {
                return Err(Error::parse(name, line_no, format!("expected 6 tab-separated fields, got {}", fields.len())));
            }
            let identity = fields[1]
                .parse::<i64>()
                .map_err(|e| Error::parse(name, line_no, format!("identity {:?}: {e}", fields[1])))?;
            let camera = fields[2]
                .parse::<u32>()
                .map_err(|e| Error::parse(name, line_no, format!("camera {:?}: {e}", fields[2])))?;
            let split = fields[5].parse::<Split>().map_err(|e| Error::parse(name, line_no, e.to_string()))?;
            if !ids.insert(fields[0]) {
                return Err(Error::parse(name, line_no, format!("duplicate sample id {}", fields[0])));
            }
            entries.push(ManifestEntry {
                label: SampleLabel::new(fields[0], identity, camera),
                appearance: PathBuf::from(fields[3]),
                part: PathBuf::from(fields[4]),
                split,
            });
        }
        Ok(Self { entries, base: base.into() })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for e in &self.entries {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                e.label.sample_id,
                e.label.identity,
                e.label.camera,
                e.appearance.display(),
                e.part.display(),
                e.split.as_str()
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Reads both maps of an entry. The appearance file must carry the
    /// appearance or raw role, the part file the part or raw role.
    pub fn load_sample(&self, entry: &ManifestEntry) -> Result<ImageSample> {
        let a = read_feature_file(self.resolve(&entry.appearance))?;
        let p = read_feature_file(self.resolve(&entry.part))?;
        if a.role() == MapRole::Part || p.role() == MapRole::Appearance {
            return Err(Error::Format(format!(
                "{}: appearance file has role {:?}, part file has role {:?}",
                entry.label.sample_id,
                a.role(),
                p.role()
            )));
        }
        Ok(ImageSample::new(entry.label.clone(), a, p)?)
    }

    pub fn load_split(&self, split: Option<Split>) -> Result<Vec<ImageSample>> {
        self.entries.iter().filter(|e| split.is_none_or(|s| e.split == s)).map(|e| self.load_sample(e)).collect()
    }
}
