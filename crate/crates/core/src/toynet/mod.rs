//! A small four-stage audio-visual network with hand-written gradients.
//!
//! Audio features pass through four conv stages. After each stage the
//! embedding is pooled to the video rate and gates the visual stream through
//! an attention stage. The final audio embedding and the gated visual vector
//! are concatenated, mixed over time by a dilated temporal convolution and
//! read out by an activity head (sigmoid, `C`) and a coordinate head
//! (linear, `3C`).

pub mod checkpoint;
pub mod layers;
mod model;
pub mod optim;
pub mod train;

use thiserror::Error;

use crate::attention::AttentionError;
use crate::codec::CodecError;
use crate::features::{FeatureError, AUDIO_CHANNELS, VISUAL_DIM};
use crate::losses::LossError;
use crate::metrics::MetricsError;
use crate::tensor_store::TensorError;

pub use model::{Prediction, Sample, ToyNet, ToyNetParams};
pub use optim::{tri_stage_lr, Adam, ScheduleParams, TrainState};
pub use train::{evaluate_clips, train, EpochReport, LogRow, TrainOptions};

pub const N_STAGES: usize = 4;

#[derive(Debug, Error)]
pub enum ToyNetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyNetConfig {
    pub n_classes: usize,
    pub widths: [usize; N_STAGES],
    pub visual_dim: usize,
    pub att_dim: usize,
    pub context_width: usize,
    pub context_dilation: usize,
    pub head_hidden: usize,
    pub n_mels: usize,
    /// When false every gate is fixed to 1 and the visual stream passes
    /// through unchanged.
    pub attention: bool,
    pub seed: u64,
}

impl Default for ToyNetConfig {
    fn default() -> Self {
        Self {
            n_classes: 3,
            widths: [4, 8, 8, 16],
            visual_dim: VISUAL_DIM,
            att_dim: 32,
            context_width: 64,
            context_dilation: 2,
            head_hidden: 64,
            n_mels: 64,
            attention: true,
            seed: 0,
        }
    }
}

impl ToyNetConfig {
    pub fn validate(&self) -> Result<(), ToyNetError> {
        let bad = |m: &str| Err(ToyNetError::InvalidConfig(m.to_string()));
        if self.widths.iter().any(|&w| w == 0) {
            return bad("stage widths must be positive");
        }
        if self.n_classes == 0 || self.visual_dim == 0 {
            return bad("n_classes and visual_dim must be positive");
        }
        if self.att_dim == 0 || self.context_width == 0 || self.head_hidden == 0 {
            return bad("hidden sizes must be positive");
        }
        if self.context_dilation == 0 {
            return bad("context dilation must be positive");
        }
        if self.n_mels == 0 || self.n_mels % (1 << N_STAGES) != 0 {
            return bad("n_mels must be a positive multiple of 16");
        }
        Ok(())
    }

    /// Frequency bins at the input of stage `s`.
    pub fn stage_freqs(&self, s: usize) -> usize {
        self.n_mels >> s
    }

    pub fn stage_in_channels(&self, s: usize) -> usize {
        if s == 0 {
            AUDIO_CHANNELS
        } else {
            self.widths[s - 1]
        }
    }

    /// Size of the flattened stage-`s` embedding per frame.
    pub fn embedding_dim(&self, s: usize) -> usize {
        self.widths[s] * self.stage_freqs(s + 1)
    }

    pub fn fused_dim(&self) -> usize {
        self.embedding_dim(N_STAGES - 1) + self.visual_dim
    }

    /// Flat `key=value` lines, one per field.
    pub fn to_kv(&self) -> String {
        let w = &self.widths;
        format!(
            "n_classes={}\nwidths={},{},{},{}\nvisual_dim={}\natt_dim={}\ncontext_width={}\n\
             context_dilation={}\nhead_hidden={}\nn_mels={}\nattention={}\nseed={}\n",
            self.n_classes,
            w[0],
            w[1],
            w[2],
            w[3],
            self.visual_dim,
            self.att_dim,
            self.context_width,
            self.context_dilation,
            self.head_hidden,
            self.n_mels,
            self.attention,
            self.seed
        )
    }

    /// Applies one `key=value` setting. Returns false for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, ToyNetError> {
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T, ToyNetError> {
            v.trim()
                .parse()
                .map_err(|_| ToyNetError::InvalidConfig(format!("{k}: cannot parse {v:?}")))
        }
        match key {
            "n_classes" => self.n_classes = num(key, value)?,
            "widths" => {
                let parts: Vec<usize> =
                    value.split(',').map(|p| num(key, p)).collect::<Result<_, _>>()?;
                self.widths = parts.try_into().map_err(|_| {
                    ToyNetError::InvalidConfig(format!("widths needs {N_STAGES} entries"))
                })?;
            }
            "visual_dim" => self.visual_dim = num(key, value)?,
            "att_dim" => self.att_dim = num(key, value)?,
            "context_width" => self.context_width = num(key, value)?,
            "context_dilation" => self.context_dilation = num(key, value)?,
            "head_hidden" => self.head_hidden = num(key, value)?,
            "n_mels" => self.n_mels = num(key, value)?,
            "attention" => self.attention = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_kv(text: &str) -> Result<Self, ToyNetError> {
        let mut cfg = Self::default();
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ToyNetError::InvalidConfig(format!("bad line {line:?}")))?;
            if !cfg.set(k.trim(), v.trim())? {
                return Err(ToyNetError::InvalidConfig(format!("unknown key {k:?}")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Fixed per-channel standardization of the audio feature stack, estimated
/// once from training data.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputNorm {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Mean and standard deviation of every channel over all frames and
    /// bins of the given `channels x T x M` stacks.
    pub fn fit<'a>(stacks: impl IntoIterator<Item = &'a [f64]>, channels: usize) -> Self {
        let mut sum = vec![0.0; channels];
        let mut sq = vec![0.0; channels];
        let mut count = 0usize;
        for s in stacks {
            let plane = s.len() / channels;
            for c in 0..channels {
                for &x in &s[c * plane..(c + 1) * plane] {
                    sum[c] += x;
                    sq[c] += x * x;
                }
            }
            count += plane;
        }
        if count == 0 {
            return Self::identity(channels);
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n - m * m).max(0.0);
                if var > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let channels = self.mean.len();
        let plane = x.len() / channels;
        let mut out = Vec::with_capacity(x.len());
        for c in 0..channels {
            let (m, s) = (self.mean[c], self.std[c]);
            out.extend(x[c * plane..(c + 1) * plane].iter().map(|v| (v - m) / s));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_kv_round_trip() {
        let mut cfg = ToyNetConfig::default();
        cfg.widths = [8, 8, 8, 8];
        cfg.attention = false;
        cfg.seed = 42;
        let back = ToyNetConfig::from_kv(&cfg.to_kv()).unwrap();
        assert_eq!(back, cfg);
        assert!(ToyNetConfig::from_kv("bogus=1").is_err());
        assert!(ToyNetConfig::from_kv("widths=1,2,3").is_err());
    }

    #[test]
    fn validation() {
        let mut cfg = ToyNetConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.widths[2] = 0;
        assert!(cfg.validate().is_err());
        let cfg = ToyNetConfig { n_mels: 40, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn stage_dimensions() {
        let cfg = ToyNetConfig { widths: [4, 8, 8, 16], n_mels: 64, ..Default::default() };
        assert_eq!(cfg.stage_freqs(0), 64);
        assert_eq!(cfg.embedding_dim(0), 4 * 32);
        assert_eq!(cfg.embedding_dim(3), 16 * 4);
        assert_eq!(cfg.fused_dim(), 64 + 49);
        assert_eq!(cfg.stage_in_channels(0), 7);
        assert_eq!(cfg.stage_in_channels(3), 8);
    }

    #[test]
    fn norm_standardizes_channels() {
        let a = [1.0, 3.0, 10.0, 10.0];
        let norm = InputNorm::fit([&a[..]], 2);
        assert_eq!(norm.mean, vec![2.0, 10.0]);
        assert_eq!(norm.std, vec![1.0, 1.0]);
        assert_eq!(norm.apply(&a), vec![-1.0, 1.0, 0.0, 0.0]);
    }
}
