//! 16-bit PCM mono WAV IO. Multichannel and non-16-bit files are rejected.

use std::path::Path;

use super::{AudioClip, DatasetError};

fn wav_err(path: &Path, reason: impl ToString) -> DatasetError {
    DatasetError::Wav {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn check_spec(path: &Path, spec: &hound::WavSpec) -> Result<(), DatasetError> {
    if spec.channels != 1 {
        return Err(wav_err(path, format!("expected mono, found {} channels", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(wav_err(
            path,
            format!("expected 16-bit PCM, found {:?} {}-bit", spec.sample_format, spec.bits_per_sample),
        ));
    }
    Ok(())
}

/// Reads a WAV file; the clip id is the file name relative to nothing, so
/// callers usually overwrite it with the manifest `fname`.
pub fn read_wav(path: impl AsRef<Path>, clip_id: impl Into<String>) -> Result<AudioClip, DatasetError> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    check_spec(path, &spec)?;
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<Result<Vec<f32>, _>>()
        .map_err(|e| wav_err(path, e))?;
    AudioClip::new(clip_id, samples, spec.sample_rate).map_err(|e| wav_err(path, e))
}

/// Duration in seconds from the WAV header.
pub fn wav_duration(path: impl AsRef<Path>) -> Result<f64, DatasetError> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    check_spec(path, &spec)?;
    Ok(reader.duration() as f64 / spec.sample_rate as f64)
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in &clip.samples {
        // Same scale as the reader, so read(write(x)) is exact on the 16-bit grid.
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(|e| wav_err(path, e))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}
