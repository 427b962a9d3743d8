use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DeviceLibrary, FirModel, TrainingTrace};
use crate::{csvio, Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LibraryFile {
    devices: Vec<FirModel>,
}

/// Writes the library as pretty-printed JSON, one block per device.
pub fn save_library(lib: &DeviceLibrary, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = LibraryFile {
        devices: lib.models().to_vec(),
    };
    let mut text = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::Internal(format!("serialize library: {e}")))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_library(path: impl AsRef<Path>) -> Result<DeviceLibrary> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_library(&text, &path.display().to_string())
}

pub(crate) fn parse_library(text: &str, origin: &str) -> Result<DeviceLibrary> {
    let file: LibraryFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        context: format!("{origin} (line {}, column {})", e.line(), e.column()),
        message: e.to_string(),
    })?;
    DeviceLibrary::new(file.devices)
}

/// Reads a `t,watts` or `timestamp,watts` trace.
pub fn read_trace_csv(
    path: impl AsRef<Path>,
    device_name: impl Into<String>,
    sample_period: f64,
) -> Result<TrainingTrace> {
    let samples = csvio::read_series(path)?;
    TrainingTrace::new(device_name, sample_period, samples)
}
