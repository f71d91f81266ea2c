//! File formats: TUM trajectories, PPM/PFM images, dataset directories
//! and JSON configuration.

pub mod dataset;
pub mod image;
pub mod tum;

use std::path::Path;

pub use dataset::{generate_dataset, load_dataset, Dataset, DatasetManifest, DatasetSpec, FrameEntry, NoiseSpec, OrbitSpec};
pub use image::{read_pfm, read_ppm, write_pfm, write_ppm};
pub use tum::{load_control_trajectory, load_trajectory, save_control_trajectory, save_trajectory};

use crate::error::{Error, Result};
use crate::pipeline::RunConfig;

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes a file, creating missing parent directories.
pub fn write_bytes(path: &Path, data: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, data).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::from_json(&read_text(path)?).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}
