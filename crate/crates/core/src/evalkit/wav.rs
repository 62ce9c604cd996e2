use std::path::Path;

use crate::error::{Error, Result};

/// Reads 16-bit PCM WAV as mono samples in [-1, 1); channels are averaged.
pub fn read_wav(path: impl AsRef<Path>) -> Result<(Vec<f64>, u32)> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Audio(format!(
            "{}: only 16-bit PCM is supported ({} bits, {:?})",
            path.display(),
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    let channels = spec.channels.max(1) as usize;
    let raw: Vec<i16> = reader
        .into_samples::<i16>()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    let mono = raw.chunks(channels).map(|frame| frame.iter().map(|&s| f64::from(s) / 32768.0).sum::<f64>() / frame.len() as f64).collect();
    Ok((mono, spec.sample_rate))
}

/// Writes mono 16-bit PCM; samples are clipped to [-1, 1].
pub fn write_wav(path: impl AsRef<Path>, samples: &[f64], sample_rate: u32) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec { channels: 1, sample_rate, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let audio = |e: hound::Error| Error::Audio(format!("{}: {e}", path.display()));
    let mut w = hound::WavWriter::create(path, spec).map_err(audio)?;
    for &s in samples {
        w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16).map_err(audio)?;
    }
    w.finalize().map_err(audio)
}
