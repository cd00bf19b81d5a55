//! Dataset manifests (JSON), split files and the synthetic dataset writer.

use std::fs;
use std::path::{Path, PathBuf};

use mitosis_core::data::{synth_manifest, synth_slides, DatasetManifest, RawManifest, SlideEntry, SynthSpec};
use mitosis_core::split::SplitSpec;
use mitosis_core::Raster;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::image_io::{load_raster, save_png};
use crate::{io_err, Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// A validated manifest plus the directory its image paths are relative to.
#[derive(Debug, Clone)]
pub struct ManifestFile {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl ManifestFile {
    pub fn load(path: &Path) -> Result<Self> {
        let raw: RawManifest = read_json(path)?;
        let manifest = DatasetManifest::from_raw(raw).map_err(|source| Error::Core {
            path: path.to_path_buf(),
            source,
        })?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, manifest })
    }

    pub fn image_path(&self, entry: &SlideEntry) -> PathBuf {
        self.root.join(&entry.image)
    }

    pub fn slide(&self, id: &str) -> Result<&SlideEntry> {
        self.manifest
            .slide(id)
            .ok_or_else(|| Error::Invalid(format!("slide {id:?} is not in the manifest")))
    }

    /// Load a slide image and check it against the manifest extent.
    pub fn load_image(&self, id: &str) -> Result<Raster> {
        let entry = self.slide(id)?;
        let path = self.image_path(entry);
        let r = load_raster(&path)?;
        if (r.width(), r.height()) != (entry.width, entry.height) {
            return Err(Error::Invalid(format!(
                "{}: image is {}x{}, manifest says {}x{}",
                path.display(),
                r.width(),
                r.height(),
                entry.width,
                entry.height
            )));
        }
        Ok(r)
    }
}

pub fn save_manifest(path: &Path, m: &DatasetManifest) -> Result<()> {
    write_json(path, &m.to_raw())
}

pub fn load_split(path: &Path) -> Result<SplitSpec> {
    read_json(path)
}

pub fn save_split(path: &Path, s: &SplitSpec) -> Result<()> {
    write_json(path, s)
}

/// Render synthetic slides into `dir` as PNGs plus `manifest.json`.
pub fn write_synth_dataset(dir: &Path, spec: &SynthSpec, seed: u64) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let slides = synth_slides(spec, seed)?;
    let manifest = synth_manifest(&slides);
    for (s, entry) in slides.iter().zip(&manifest.slides) {
        save_png(&dir.join(&entry.image), &s.image)?;
    }
    save_manifest(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}
