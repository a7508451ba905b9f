//! Mono 16 kHz WAV reading (PCM16 or float32) and atomic float32 writing.

use std::fs;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{CliError, CliResult};
use crate::io::{ensure_parent, temp_path};

pub const SAMPLE_RATE: u32 = sbm_core::data::SAMPLE_RATE;

pub fn read(path: &Path) -> CliResult<Vec<f64>> {
    let bad = |m: String| CliError::Data(format!("{}: {m}", path.display()));
    let reader = WavReader::open(path).map_err(|e| bad(e.to_string()))?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(bad(format!("sample rate {} Hz, expected {SAMPLE_RATE} Hz", spec.sample_rate)));
    }
    if spec.channels != 1 {
        return Err(bad(format!("{} channels, expected mono", spec.channels)));
    }
    let samples: Result<Vec<f64>, hound::Error> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader.into_samples::<i16>().map(|s| s.map(|v| v as f64 / 32768.0)).collect(),
        (SampleFormat::Float, 32) => reader.into_samples::<f32>().map(|s| s.map(|v| v as f64)).collect(),
        (fmt, bits) => return Err(bad(format!("unsupported sample format {fmt:?} at {bits} bits"))),
    };
    let samples = samples.map_err(|e| bad(e.to_string()))?;
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite samples".into()));
    }
    Ok(samples)
}

/// Writes float32 mono through a temporary file and an atomic rename.
pub fn write(path: &Path, samples: &[f64]) -> CliResult<()> {
    ensure_parent(path)?;
    let tmp = temp_path(path);
    let spec = WavSpec { channels: 1, sample_rate: SAMPLE_RATE, bits_per_sample: 32, sample_format: SampleFormat::Float };
    let result = (|| -> Result<(), hound::Error> {
        let mut w = WavWriter::create(&tmp, spec)?;
        for &s in samples {
            w.write_sample(s as f32)?;
        }
        w.finalize()?;
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(CliError::Data(format!("{}: {e}", path.display())));
    }
    Ok(())
}
