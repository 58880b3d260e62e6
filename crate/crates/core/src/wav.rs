//! PCM WAV input/output for multichannel signals stored as `signal[channel][sample]`.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// On-disk sample encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Int16,
    Float32,
}

/// Reads a 16-bit integer or 32-bit float WAV file. Integer samples are scaled to [-1, 1).
pub fn read_wav(path: &Path) -> Result<(Vec<Vec<f64>>, u32)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::Config(format!(
                "{}: unsupported WAV encoding {fmt:?}/{bits} bit",
                path.display()
            )))
        }
    };
    let mut out = vec![Vec::with_capacity(interleaved.len() / channels.max(1)); channels];
    for frame in interleaved.chunks_exact(channels) {
        for (c, v) in frame.iter().enumerate() {
            out[c].push(*v);
        }
    }
    Ok((out, spec.sample_rate))
}

pub fn write_wav(path: &Path, signal: &[Vec<f64>], sample_rate: u32, encoding: WavEncoding) -> Result<()> {
    let channels = signal.len();
    if channels == 0 || channels > u16::MAX as usize {
        return Err(Error::Shape(format!("cannot write {channels} channels")));
    }
    let len = signal[0].len();
    if signal.iter().any(|c| c.len() != len) {
        return Err(Error::Shape("channels differ in length".into()));
    }
    let (bits, format) = match encoding {
        WavEncoding::Int16 => (16, SampleFormat::Int),
        WavEncoding::Float32 => (32, SampleFormat::Float),
    };
    let spec = WavSpec {
        channels: channels as u16,
        sample_rate,
        bits_per_sample: bits,
        sample_format: format,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for n in 0..len {
        for c in signal {
            match encoding {
                WavEncoding::Int16 => {
                    let v = (c[n] * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(v)?;
                }
                WavEncoding::Float32 => writer.write_sample(c[n] as f32)?,
            }
        }
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_and_int_files_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let sig = vec![vec![0.0, 0.5, -0.25, 0.125], vec![-1.0, 0.0, 0.75, 0.5]];

        let f = dir.path().join("f.wav");
        write_wav(&f, &sig, 16_000, WavEncoding::Float32).unwrap();
        let (back, sr) = read_wav(&f).unwrap();
        assert_eq!(sr, 16_000);
        assert_eq!(back, sig);

        let i = dir.path().join("i.wav");
        write_wav(&i, &sig, 8000, WavEncoding::Int16).unwrap();
        let (back, sr) = read_wav(&i).unwrap();
        assert_eq!(sr, 8000);
        for (a, b) in back.iter().flatten().zip(sig.iter().flatten()) {
            assert!((a - b).abs() < 1.0 / 32768.0);
        }
    }

    #[test]
    fn missing_file_is_reported() {
        let err = read_wav(Path::new("/nonexistent/x.wav")).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }
}
