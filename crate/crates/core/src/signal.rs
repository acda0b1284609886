//! Audio container, WAV file I/O and elementary DSP.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 44_100;

/// Pre-emphasis coefficient of the loss filter `H(z) = 1 - 0.95 z^-1`.
pub const PRE_EMPHASIS_COEFF: f64 = 0.95;

/// Mono audio at full scale ±1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::Domain("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Numerics(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn silence(len: usize, sample_rate_hz: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate_hz,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self {
            samples,
            sample_rate_hz: self.sample_rate_hz,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WavFormat {
    Pcm16,
    Float32,
}

fn map_hound(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::io(path, e),
        hound::Error::FormatError(msg) => Error::CorruptFile(format!("{}: {msg}", path.display())),
        hound::Error::Unsupported => Error::Format(format!("{}: unsupported WAV variant", path.display())),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

/// Reads a mono 16-bit PCM or 32-bit float WAV file.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    // once the file is open, a failed read means the data ended early
    let read_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::CorruptFile(format!("{}: {io}", path.display())),
        other => map_hound(path, other),
    };
    let mut reader = hound::WavReader::new(std::io::BufReader::new(file)).map_err(read_err)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::ChannelCount(spec.channels));
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>(),
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<Vec<_>, _>>(),
        (fmt, bits) => {
            return Err(Error::Format(format!(
                "{}: {bits}-bit {fmt:?} samples (need 16-bit int or 32-bit float)",
                path.display()
            )))
        }
    }
    .map_err(read_err)?;
    AudioBuffer::new(samples, spec.sample_rate)
}

/// Writes `buffer` as a mono WAV file. PCM16 output is hard-clipped to ±1.
pub fn write_wav(buffer: &AudioBuffer, path: impl AsRef<Path>, format: WavFormat) -> Result<()> {
    let path = path.as_ref();
    if buffer.is_empty() {
        return Err(Error::Domain("refusing to write an empty buffer".into()));
    }
    let (bits_per_sample, sample_format) = match format {
        WavFormat::Pcm16 => (16, hound::SampleFormat::Int),
        WavFormat::Float32 => (32, hound::SampleFormat::Float),
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: buffer.sample_rate_hz,
        bits_per_sample,
        sample_format,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in &buffer.samples {
        let res = match format {
            WavFormat::Pcm16 => writer.write_sample(quantize_pcm16(s)),
            WavFormat::Float32 => writer.write_sample(s as f32),
        };
        res.map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

fn quantize_pcm16(s: f64) -> i16 {
    (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// `out[n] = in[n] - 0.95 in[n-1]` with `in[-1] = 0`.
pub fn pre_emphasis(buffer: &AudioBuffer) -> AudioBuffer {
    buffer.with_samples(pre_emphasis_slice(&buffer.samples))
}

pub fn pre_emphasis_slice(input: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    input
        .iter()
        .map(|&s| {
            let out = s - PRE_EMPHASIS_COEFF * prev;
            prev = s;
            out
        })
        .collect()
}

/// Adjoint of [`pre_emphasis_slice`]: `out[n] = g[n] - 0.95 g[n+1]`.
pub fn pre_emphasis_adjoint(grad: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; grad.len()];
    let mut next = 0.0;
    for (o, &g) in out.iter_mut().zip(grad).rev() {
        *o = g - PRE_EMPHASIS_COEFF * next;
        next = g;
    }
    out
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

pub fn apply_gain_db(buffer: &AudioBuffer, gain_db: f64) -> Result<AudioBuffer> {
    if !gain_db.is_finite() {
        return Err(Error::Domain(format!("gain {gain_db} dB is not finite")));
    }
    let g = db_to_linear(gain_db);
    Ok(buffer.with_samples(buffer.samples.iter().map(|s| s * g).collect()))
}

/// Scales the buffer so its peak sits at `peak_dbfs`. Silent buffers are returned unchanged.
pub fn normalize_peak(buffer: &AudioBuffer, peak_dbfs: f64) -> AudioBuffer {
    let peak = buffer.peak();
    if peak == 0.0 {
        return buffer.clone();
    }
    let g = db_to_linear(peak_dbfs) / peak;
    buffer.with_samples(buffer.samples.iter().map(|s| s * g).collect())
}

/// Splits into consecutive, non-overlapping segments; the trailing remainder is dropped.
pub fn segment(buffer: &AudioBuffer, segment_ms: f64) -> Result<Vec<AudioBuffer>> {
    if !(segment_ms > 0.0) || !segment_ms.is_finite() {
        return Err(Error::Domain(format!("segment length {segment_ms} ms")));
    }
    let len = (segment_ms * buffer.sample_rate_hz as f64 / 1000.0).round() as usize;
    if len == 0 {
        return Err(Error::Domain(format!(
            "{segment_ms} ms is shorter than one sample at {} Hz",
            buffer.sample_rate_hz
        )));
    }
    Ok(buffer
        .samples
        .chunks_exact(len)
        .map(|c| buffer.with_samples(c.to_vec()))
        .collect())
}

pub fn sine(freq_hz: f64, amplitude: f64, duration_s: f64, sample_rate_hz: u32) -> Result<AudioBuffer> {
    let fs = sample_rate_hz as f64;
    if sample_rate_hz == 0 || !(freq_hz > 0.0 && freq_hz < fs / 2.0) {
        return Err(Error::Domain(format!(
            "sine at {freq_hz} Hz must lie strictly between 0 and Nyquist ({} Hz)",
            fs / 2.0
        )));
    }
    if !(duration_s >= 0.0) || !amplitude.is_finite() {
        return Err(Error::Domain("duration must be non-negative and amplitude finite".into()));
    }
    let n = (duration_s * fs).round() as usize;
    let w = 2.0 * PI * freq_hz / fs;
    Ok(AudioBuffer {
        samples: (0..n).map(|i| amplitude * (w * i as f64).sin()).collect(),
        sample_rate_hz,
    })
}
