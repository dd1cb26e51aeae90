//! Writing generated datasets to disk.

use std::fs;
use std::path::{Path, PathBuf};

use pabr_core::synth::SynthDataset;

use crate::error::{Error, Result};
use crate::format::write_feature_file;
use crate::manifest::{Manifest, ManifestEntry};

pub const MANIFEST_NAME: &str = "manifest.tsv";
pub const MAPS_DIR: &str = "maps";

/// Writes `maps/<id>.app.pabr`, `maps/<id>.part.pabr` and `manifest.tsv`
/// under `dir`. Manifest paths are relative to `dir`.
pub fn write_dataset(ds: &SynthDataset, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    let maps = dir.join(MAPS_DIR);
    fs::create_dir_all(&maps).map_err(|e| Error::io(&maps, e))?;
    let mut entries = Vec::with_capacity(ds.samples.len());
    for (s, split) in ds.samples.iter().zip(&ds.splits) {
        let id = &s.label.sample_id;
        let appearance = PathBuf::from(MAPS_DIR).join(format!("{id}.app.pabr"));
        let part = PathBuf::from(MAPS_DIR).join(format!("{id}.part.pabr"));
        write_feature_file(s.appearance(), dir.join(&appearance))?;
        write_feature_file(s.part(), dir.join(&part))?;
        entries.push(ManifestEntry { label: s.label.clone(), appearance, part, split: *split });
    }
    let manifest = Manifest { entries, base: dir.to_path_buf() };
    manifest.write(dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}
