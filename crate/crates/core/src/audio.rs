//! First-order ambisonics clips and WAV I/O.

use std::path::Path;

use thiserror::Error;

/// Sample rate of every clip the toolkit produces.
pub const SAMPLE_RATE: u32 = 24_000;

/// ACN channel indices.
pub const W: usize = 0;
pub const Y: usize = 1;
pub const Z: usize = 2;
pub const X: usize = 3;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
    #[error("expected 4 FOA channels, found {0}")]
    ChannelCount(u16),
    #[error("unsupported sample format: {0}")]
    SampleFormat(String),
    #[error("channel lengths differ")]
    RaggedChannels,
}

/// 4-channel FOA waveform in ACN order (W, Y, Z, X) with SN3D normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct FoaClip {
    channels: [Vec<f64>; 4],
    sample_rate: u32,
}

impl FoaClip {
    pub fn new(channels: [Vec<f64>; 4], sample_rate: u32) -> Result<Self, AudioError> {
        let n = channels[0].len();
        if channels.iter().any(|c| c.len() != n) {
            return Err(AudioError::RaggedChannels);
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn silent(n_samples: usize, sample_rate: u32) -> Self {
        Self {
            channels: std::array::from_fn(|_| vec![0.0; n_samples]),
            sample_rate,
        }
    }

    pub fn channels(&self) -> &[Vec<f64>; 4] {
        &self.channels
    }

    pub fn channels_mut(&mut self) -> &mut [Vec<f64>; 4] {
        &mut self.channels
    }

    pub fn channel(&self, acn: usize) -> &[f64] {
        &self.channels[acn]
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn n_samples(&self) -> usize {
        self.channels[0].len()
    }

    pub fn duration_secs(&self) -> f64 {
        self.n_samples() as f64 / self.sample_rate as f64
    }

    pub fn scaled(&self, gain: f64) -> FoaClip {
        FoaClip {
            channels: std::array::from_fn(|c| self.channels[c].iter().map(|x| x * gain).collect()),
            sample_rate: self.sample_rate,
        }
    }
}

/// Reads a 4-channel WAV file. 16-bit and 32-bit integer PCM as well as
/// 32-bit float are accepted; integer samples are scaled to [-1, 1).
pub fn read_wav(path: impl AsRef<Path>) -> Result<FoaClip, AudioError> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 4 {
        return Err(AudioError::ChannelCount(spec.channels));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()?,
        (hound::SampleFormat::Int, 32) => reader
            .samples::<i32>()
            .map(|s| s.map(|v| v as f64 / 2_147_483_648.0))
            .collect::<Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()?,
        (fmt, bits) => {
            return Err(AudioError::SampleFormat(format!("{fmt:?} {bits}-bit")));
        }
    };
    let n = interleaved.len() / 4;
    let mut channels: [Vec<f64>; 4] = std::array::from_fn(|_| Vec::with_capacity(n));
    for frame in interleaved.chunks_exact(4) {
        for (c, &s) in frame.iter().enumerate() {
            channels[c].push(s);
        }
    }
    FoaClip::new(channels, spec.sample_rate)
}

/// Writes a clip as 32-bit float WAV.
pub fn write_wav(clip: &FoaClip, path: impl AsRef<Path>) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: 4,
        sample_rate: clip.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for i in 0..clip.n_samples() {
        for c in 0..4 {
            writer.write_sample(clip.channels[c][i] as f32)?;
        }
    }
    writer.finalize()?;
    Ok(())
}

/// Writes a clip as 16-bit integer PCM, clipping to [-1, 1].
pub fn write_wav_i16(clip: &FoaClip, path: impl AsRef<Path>) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: 4,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for i in 0..clip.n_samples() {
        for c in 0..4 {
            let s = (clip.channels[c][i].clamp(-1.0, 1.0) * 32767.0).round() as i16;
            writer.write_sample(s)?;
        }
    }
    writer.finalize()?;
    Ok(())
}
