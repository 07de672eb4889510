use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::error::{Error, Result};
use crate::image::Image;

const LOSSLESS_EXTENSIONS: &[&str] = &["png", "bmp", "tif", "tiff", "ppm", "pgm", "pnm"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::input(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
}

/// Lexicographically ordered list of decodable images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub split: Split,
    pub entries: Vec<IndexEntry>,
    /// Per-channel mean over every pixel of the training split, in `[0, 1]`.
    /// Absent for test splits, which are centred with the training mean.
    pub channel_mean: Option<[f64; 3]>,
}

pub fn is_lossless_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| LOSSLESS_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Collects every lossless image under `roots` (recursively), sorted by path.
///
/// Undecodable files are skipped with a warning.
pub fn ingest_dataset(roots: &[PathBuf], split: Split) -> Result<DatasetIndex> {
    let mut paths = Vec::new();
    for root in roots {
        if !root.exists() {
            return Err(Error::input(format!("dataset root {} does not exist", root.display())));
        }
        for entry in WalkDir::new(root).follow_links(true) {
            let entry = entry.map_err(|e| Error::input(e.to_string()))?;
            if entry.file_type().is_file() && is_lossless_image(entry.path()) {
                paths.push(entry.into_path());
            }
        }
    }
    paths.sort();

    let mut entries = Vec::with_capacity(paths.len());
    let mut sums = [0f64; 3];
    let mut count = 0u64;
    for path in paths {
        let img = match Image::load(&path) {
            Ok(img) => img,
            Err(e) => {
                tracing::warn!(path = %path.display(), error = %e, "skipping unreadable image");
                continue;
            }
        };
        if split == Split::Train {
            for (c, plane) in img.data().axis_iter(ndarray::Axis(2)).enumerate() {
                sums[c] += plane.iter().map(|&v| v as f64).sum::<f64>();
            }
            count += (img.height() * img.width()) as u64;
        }
        entries.push(IndexEntry {
            width: img.width() as u32,
            height: img.height() as u32,
            path,
        });
    }
    if entries.is_empty() {
        let list = roots
            .iter()
            .map(|r| r.display().to_string())
            .collect::<Vec<_>>()
            .join(", ");
        return Err(Error::EmptyDataset(list));
    }
    let channel_mean = (split == Split::Train).then(|| sums.map(|s| s / count as f64));
    Ok(DatasetIndex {
        split,
        entries,
        channel_mean,
    })
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn mean_f32(&self) -> Option<[f32; 3]> {
        self.channel_mean.map(|m| m.map(|v| v as f32))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        Ok(serde_json::from_reader(r)?)
    }
}
