//! Per-clip feature cache.
//!
//! Layout, little-endian: `u32 n_mels`, `u32 n_frames`, `f64 frame_rate`,
//! then `n_mels * n_frames` row-major `f32` values.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{FeatureError, LogMelMatrix};

pub const CACHE_HEADER_BYTES: usize = 16;

pub fn write_cache(path: impl AsRef<Path>, m: &LogMelMatrix) -> Result<(), FeatureError> {
    let mut bytes = Vec::with_capacity(CACHE_HEADER_BYTES + 4 * m.values.len());
    bytes.extend_from_slice(&(m.n_mels as u32).to_le_bytes());
    bytes.extend_from_slice(&(m.n_frames as u32).to_le_bytes());
    bytes.extend_from_slice(&m.frame_rate.to_le_bytes());
    for v in &m.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    // Write-then-rename so an interrupted run never leaves a truncated cache.
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_cache(path: impl AsRef<Path>, clip_id: impl Into<String>) -> Result<LogMelMatrix, FeatureError> {
    let bytes = fs::read(path.as_ref())?;
    if bytes.len() < CACHE_HEADER_BYTES {
        return Err(FeatureError::Cache(format!("{} bytes is shorter than the header", bytes.len())));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let n_mels = u32_at(0);
    let n_frames = u32_at(4);
    let frame_rate = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let expected = CACHE_HEADER_BYTES + 4 * n_mels * n_frames;
    if bytes.len() != expected || n_mels == 0 || n_frames == 0 {
        return Err(FeatureError::Cache(format!(
            "header says {n_mels}x{n_frames} but file has {} bytes",
            bytes.len()
        )));
    }
    let values = bytes[CACHE_HEADER_BYTES..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(LogMelMatrix {
        values,
        n_mels,
        n_frames,
        frame_rate,
        clip_id: clip_id.into(),
    })
}
