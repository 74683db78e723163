use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{load_wav, resample, AudioClip, WORKING_RATE};
use crate::error::{Error, Result};

/// One row of a pool manifest (`path,class_label,duration_s`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub path: String,
    pub class_label: String,
    pub duration_s: f64,
}

pub fn read_pool_manifest(path: impl AsRef<Path>) -> Result<Vec<PoolEntry>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["path", "class_label", "duration_s"] {
        return Err(Error::Format(format!(
            "{}: expected header `path,class_label,duration_s`",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for (i, row) in reader.deserialize().enumerate() {
        let entry: PoolEntry =
            row.map_err(|e| Error::Format(format!("{} row {}: {e}", path.display(), i + 2)))?;
        out.push(entry);
    }
    Ok(out)
}

pub fn write_pool_manifest(path: impl AsRef<Path>, entries: &[PoolEntry]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    for e in entries {
        writer.serialize(e)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// A pool clip decoded and resampled to the working rate.
#[derive(Debug, Clone)]
pub struct PooledClip {
    /// Path as written in the manifest.
    pub path: String,
    pub class_label: String,
    pub clip: AudioClip,
}

/// In-memory audio pool. Pools are small reference corpora, so every clip is
/// decoded once up front.
#[derive(Debug, Clone, Default)]
pub struct SourcePool {
    pub clips: Vec<PooledClip>,
}

impl SourcePool {
    pub fn from_clips(clips: Vec<PooledClip>) -> Self {
        Self { clips }
    }

    /// Loads every manifest row, resolving relative paths against the
    /// manifest's directory.
    pub fn load(manifest: impl AsRef<Path>) -> Result<Self> {
        let manifest = manifest.as_ref();
        let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        let entries = read_pool_manifest(manifest)?;
        let clips = entries
            .par_iter()
            .map(|e| {
                let p = resolve(&base, &e.path);
                let clip = resample(&load_wav(&p)?, WORKING_RATE);
                Ok(PooledClip {
                    path: e.path.clone(),
                    class_label: e.class_label.clone(),
                    clip,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { clips })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn get(&self, i: usize) -> &PooledClip {
        &self.clips[i]
    }
}

pub fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}
