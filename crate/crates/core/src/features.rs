//! Audio feature extraction: STFT, log-mel spectrograms, mel-band intensity
//! vectors, and the audio/visual time-base alignment helpers.
//!
//! A 10 s clip at 24 kHz with a 480-sample hop yields 500 STFT frames. Video
//! runs at 10 fps, so every video frame spans [`FRAMES_PER_VIDEO_FRAME`] audio
//! frames.

use std::ops::Range;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::audio::{FoaClip, SAMPLE_RATE, W, X, Y, Z};
use crate::geom::Vec3;
use crate::tensor_store::{FeatureTensor, TensorError};

/// Audio frames per video frame (20 ms hop vs 100 ms video period).
pub const FRAMES_PER_VIDEO_FRAME: usize = 5;
/// Visual embedding width: a 7x7 spatial map.
pub const VISUAL_DIM: usize = 49;
pub const VISUAL_GRID: usize = 7;
/// Number of stacked audio feature channels (4 log-mel + 3 IV).
pub const AUDIO_CHANNELS: usize = 7;
pub const LOG_FLOOR: f64 = 1e-8;
const IV_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("clip holds fewer samples than one hop")]
    EmptyClip,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("clip sample rate {found} Hz, pipeline expects {expected} Hz")]
    SampleRate { found: u32, expected: u32 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn mismatch(msg: impl Into<String>) -> FeatureError {
    FeatureError::ShapeMismatch(msg.into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub hop: usize,
    pub win_length: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            hop: 480,
            win_length: 960,
            n_fft: 1024,
            n_mels: 64,
            f_min: 50.0,
            f_max: 12_000.0,
        }
    }
}

impl FeatureConfig {
    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Index of the FFT bin closest to `freq` Hz.
    pub fn bin_of(&self, freq: f64) -> usize {
        (freq * self.n_fft as f64 / self.sample_rate as f64).round() as usize
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-scale mel filterbank with unit-peak triangles, stored
/// sparsely as (first bin, weights) per band.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    bands: Vec<(usize, Vec<f64>)>,
    n_bins: usize,
}

impl MelFilterbank {
    pub fn new(cfg: &FeatureConfig) -> Self {
        let n_bins = cfg.n_bins();
        let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
        let bands = (0..cfg.n_mels)
            .map(|m| {
                let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
                let mut first = None;
                let mut weights = Vec::new();
                for k in 0..n_bins {
                    let f = k as f64 * bin_hz;
                    let w = ((f - left) / (center - left)).min((right - f) / (right - center));
                    if w > 0.0 {
                        first.get_or_insert(k);
                        weights.push(w);
                    } else if first.is_some() {
                        break;
                    }
                }
                (first.unwrap_or(0), weights)
            })
            .collect();
        Self { bands, n_bins }
    }

    pub fn n_mels(&self) -> usize {
        self.bands.len()
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    /// Dense weight of band `m` at bin `k`.
    pub fn weight(&self, m: usize, k: usize) -> f64 {
        let (start, w) = &self.bands[m];
        if k < *start {
            return 0.0;
        }
        w.get(k - start).copied().unwrap_or(0.0)
    }

    fn apply(&self, m: usize, spectrum: &[f64]) -> f64 {
        let (start, w) = &self.bands[m];
        w.iter().zip(&spectrum[*start..]).map(|(a, b)| a * b).sum()
    }
}

/// Complex STFT of all four FOA channels, laid out `[channel][frame][bin]`.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    data: Vec<Complex64>,
    n_frames: usize,
    n_bins: usize,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn frame(&self, channel: usize, t: usize) -> &[Complex64] {
        let off = (channel * self.n_frames + t) * self.n_bins;
        &self.data[off..off + self.n_bins]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

/// Feature extractor with a cached FFT plan, window and filterbank.
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    window: Vec<f64>,
    fft: Arc<dyn rustfft::Fft<f64>>,
    mel: MelFilterbank,
}

impl FeatureExtractor {
    pub fn new(cfg: FeatureConfig) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        Self {
            window: hann(cfg.win_length),
            mel: MelFilterbank::new(&cfg),
            fft,
            cfg,
        }
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.mel
    }

    /// Centered Hann-windowed frames with reflection padding; frame `t` is
    /// centered on sample `t * hop` and there are `floor(N / hop)` frames.
    pub fn stft(&self, clip: &FoaClip) -> Result<Spectrogram, FeatureError> {
        if clip.sample_rate() != self.cfg.sample_rate {
            return Err(FeatureError::SampleRate {
                found: clip.sample_rate(),
                expected: self.cfg.sample_rate,
            });
        }
        let n = clip.n_samples();
        let n_frames = n / self.cfg.hop;
        if n_frames == 0 {
            return Err(FeatureError::EmptyClip);
        }
        let n_bins = self.cfg.n_bins();
        let half = (self.cfg.win_length / 2) as isize;
        let mut data = Vec::with_capacity(4 * n_frames * n_bins);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.cfg.n_fft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for c in 0..4 {
            let x = clip.channel(c);
            for t in 0..n_frames {
                let start = (t * self.cfg.hop) as isize - half;
                buf.fill(Complex64::new(0.0, 0.0));
                for (j, w) in self.window.iter().enumerate() {
                    buf[j].re = w * x[reflect(start + j as isize, n)];
                }
                self.fft.process_with_scratch(&mut buf, &mut scratch);
                data.extend_from_slice(&buf[..n_bins]);
            }
        }
        Ok(Spectrogram {
            data,
            n_frames,
            n_bins,
        })
    }

    /// `log(mel(|X|^2) + 1e-8)` per channel, shaped `4 x T x n_mels`.
    pub fn log_mel(&self, spec: &Spectrogram) -> Result<FeatureTensor, FeatureError> {
        self.check_bins(spec)?;
        let (t_len, n_mels) = (spec.n_frames, self.mel.n_mels());
        let mut out = Vec::with_capacity(4 * t_len * n_mels);
        let mut power = vec![0.0; spec.n_bins];
        for c in 0..4 {
            for t in 0..t_len {
                for (p, z) in power.iter_mut().zip(spec.frame(c, t)) {
                    *p = z.norm_sqr();
                }
                for m in 0..n_mels {
                    out.push((self.mel.apply(m, &power) + LOG_FLOOR).ln());
                }
            }
        }
        Ok(FeatureTensor::from_f64(vec![4, t_len, n_mels], out)?)
    }

    /// Mel-band intensity vectors `Re{conj(W) (X, Y, Z)}`, each time-mel cell
    /// divided by `(|I| + 1e-8)`. Shaped `3 x T x n_mels` in (x, y, z) order.
    pub fn intensity_vectors(&self, spec: &Spectrogram) -> Result<FeatureTensor, FeatureError> {
        self.check_bins(spec)?;
        let (t_len, n_mels) = (spec.n_frames, self.mel.n_mels());
        let plane = t_len * n_mels;
        let mut out = vec![0.0; 3 * plane];
        let mut active: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; spec.n_bins]);
        for t in 0..t_len {
            let w = spec.frame(W, t);
            for (axis, acn) in [X, Y, Z].into_iter().enumerate() {
                for ((i, a), b) in active[axis].iter_mut().zip(w).zip(spec.frame(acn, t)) {
                    *i = a.re * b.re + a.im * b.im;
                }
            }
            for m in 0..n_mels {
                let v = [
                    self.mel.apply(m, &active[0]),
                    self.mel.apply(m, &active[1]),
                    self.mel.apply(m, &active[2]),
                ];
                let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() + IV_EPS;
                for axis in 0..3 {
                    out[axis * plane + t * n_mels + m] = v[axis] / norm;
                }
            }
        }
        Ok(FeatureTensor::from_f64(vec![3, t_len, n_mels], out)?)
    }

    /// Full audio stack (`7 x T x n_mels`) of a clip.
    pub fn extract(&self, clip: &FoaClip) -> Result<FeatureTensor, FeatureError> {
        let spec = self.stft(clip)?;
        stack_audio_features(&self.log_mel(&spec)?, &self.intensity_vectors(&spec)?)
    }

    fn check_bins(&self, spec: &Spectrogram) -> Result<(), FeatureError> {
        if spec.n_bins != self.mel.n_bins() {
            return Err(mismatch(format!(
                "spectrogram has {} bins, filterbank expects {}",
                spec.n_bins,
                self.mel.n_bins()
            )));
        }
        Ok(())
    }
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self::new(FeatureConfig::default())
    }
}

/// Channels 0-3 log-mel (W, Y, Z, X), channels 4-6 intensity (x, y, z).
pub fn stack_audio_features(
    logmel: &FeatureTensor,
    ivs: &FeatureTensor,
) -> Result<FeatureTensor, FeatureError> {
    let (ls, is) = (logmel.shape(), ivs.shape());
    if ls.len() != 3 || is.len() != 3 || ls[0] != 4 || is[0] != 3 || ls[1..] != is[1..] {
        return Err(mismatch(format!(
            "cannot stack log-mel {ls:?} with intensity {is:?}"
        )));
    }
    let mut data = logmel.to_f64_vec();
    data.extend(ivs.to_f64_vec());
    Ok(FeatureTensor::from_f64(vec![AUDIO_CHANNELS, ls[1], ls[2]], data)?)
}

/// Repeats every video frame five times so the visual sequence lines up with
/// the audio frames: `F x D -> 5F x D`.
pub fn repeat_visual(v: &FeatureTensor) -> Result<FeatureTensor, FeatureError> {
    let s = v.shape();
    if s.len() != 2 || s[1] != VISUAL_DIM {
        return Err(mismatch(format!("visual features must be F x 49, got {s:?}")));
    }
    let src = v.to_f64_vec();
    let mut out = Vec::with_capacity(src.len() * FRAMES_PER_VIDEO_FRAME);
    for row in src.chunks_exact(VISUAL_DIM) {
        for _ in 0..FRAMES_PER_VIDEO_FRAME {
            out.extend_from_slice(row);
        }
    }
    Ok(FeatureTensor::from_f64(vec![s[0] * FRAMES_PER_VIDEO_FRAME, VISUAL_DIM], out)?)
}

/// Result of temporal pooling to the video rate, with the positions of every
/// window maximum for back-propagation.
#[derive(Debug, Clone)]
pub struct PooledSeq {
    pub values: Vec<f64>,
    pub argmax: Vec<usize>,
    pub n_frames: usize,
    pub dim: usize,
}

/// `out[u] = mean(a[5u..5u+5]) + max(a[5u..5u+5])` for a time-major
/// `T x D` slice. Ties resolve to the earliest frame.
pub fn pool_video_rate(a: &[f64], t_len: usize, dim: usize) -> Result<PooledSeq, FeatureError> {
    if a.len() != t_len * dim {
        return Err(mismatch(format!("{} values for {t_len} x {dim}", a.len())));
    }
    if t_len % FRAMES_PER_VIDEO_FRAME != 0 {
        return Err(mismatch(format!(
            "{t_len} frames not divisible by {FRAMES_PER_VIDEO_FRAME}"
        )));
    }
    let n_frames = t_len / FRAMES_PER_VIDEO_FRAME;
    let mut values = vec![0.0; n_frames * dim];
    let mut argmax = vec![0; n_frames * dim];
    for u in 0..n_frames {
        for j in 0..dim {
            let mut sum = 0.0;
            let mut best = f64::NEG_INFINITY;
            let mut best_t = 0;
            for t in u * FRAMES_PER_VIDEO_FRAME..(u + 1) * FRAMES_PER_VIDEO_FRAME {
                let x = a[t * dim + j];
                sum += x;
                if x > best {
                    best = x;
                    best_t = t;
                }
            }
            values[u * dim + j] = sum / FRAMES_PER_VIDEO_FRAME as f64 + best;
            argmax[u * dim + j] = best_t;
        }
    }
    Ok(PooledSeq {
        values,
        argmax,
        n_frames,
        dim,
    })
}

/// Gradient of [`pool_video_rate`]: scatters `grad` (video-rate, `F x D`)
/// back onto a `T x D` buffer, accumulating.
pub fn pool_video_rate_backward(pooled: &PooledSeq, grad: &[f64], out: &mut [f64]) {
    let dim = pooled.dim;
    let inv = 1.0 / FRAMES_PER_VIDEO_FRAME as f64;
    for u in 0..pooled.n_frames {
        for j in 0..dim {
            let g = grad[u * dim + j];
            for t in u * FRAMES_PER_VIDEO_FRAME..(u + 1) * FRAMES_PER_VIDEO_FRAME {
                out[t * dim + j] += g * inv;
            }
            out[pooled.argmax[u * dim + j] * dim + j] += g;
        }
    }
}

/// Average plus max pooling of a time-major `T x D` tensor down to `T/5 x D`.
pub fn pool_audio_to_video_rate(a: &FeatureTensor) -> Result<FeatureTensor, FeatureError> {
    let s = a.shape();
    if s.len() != 2 {
        return Err(mismatch(format!("expected a T x D tensor, got {s:?}")));
    }
    let pooled = pool_video_rate(&a.to_f64_vec(), s[0], s[1])?;
    Ok(FeatureTensor::from_f64(vec![pooled.n_frames, s[1]], pooled.values)?)
}

/// Power-weighted mean intensity direction over a range of audio frames of a
/// `7 x T x M` feature stack. Each normalized cell vector is weighted by the
/// W-channel mel power so that bands without signal do not dilute the
/// estimate. Returns `None` when no cell carries energy.
pub fn intensity_direction(stack: &FeatureTensor, frames: Range<usize>) -> Option<Vec3> {
    let s = stack.shape();
    assert_eq!(s.len(), 3);
    assert_eq!(s[0], AUDIO_CHANNELS);
    let (t_len, m) = (s[1], s[2]);
    let data = stack.to_f64_vec();
    let plane = t_len * m;
    let mut acc = Vec3::default();
    for t in frames.start.min(t_len)..frames.end.min(t_len) {
        for b in 0..m {
            let cell = t * m + b;
            let weight = (data[cell].exp() - LOG_FLOOR).max(0.0);
            acc = acc
                + Vec3::new(
                    data[4 * plane + cell],
                    data[5 * plane + cell],
                    data[6 * plane + cell],
                )
                .scale(weight);
        }
    }
    (acc.norm() > 0.0).then_some(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{angular_distance_deg, sph_to_cart, Direction};

    fn sine_clip(freq: f64, n: usize, gains: [f64; 4]) -> FoaClip {
        let s: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / SAMPLE_RATE as f64).sin())
            .collect();
        FoaClip::new(
            std::array::from_fn(|c| s.iter().map(|x| x * gains[c]).collect()),
            SAMPLE_RATE,
        )
        .unwrap()
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        // xorshift keeps this test free of the crate's own generators
        let mut state = seed | 1;
        (0..n)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect()
    }

    fn encoded(dir: Direction, n: usize) -> FoaClip {
        let v = sph_to_cart(dir);
        let s = noise(n, 99);
        let gains = [1.0, v.y, v.z, v.x];
        FoaClip::new(std::array::from_fn(|c| s.iter().map(|x| x * gains[c]).collect()), SAMPLE_RATE)
            .unwrap()
    }

    #[test]
    fn ten_second_clip_gives_500_frames() {
        let fx = FeatureExtractor::default();
        let clip = FoaClip::silent(240_000, SAMPLE_RATE);
        let spec = fx.stft(&clip).unwrap();
        assert_eq!(spec.n_frames(), 500);
        assert_eq!(spec.n_bins(), 513);
        assert!(spec.data().iter().all(|z| z.norm() == 0.0));
        let lm = fx.log_mel(&spec).unwrap();
        assert_eq!(lm.shape(), &[4, 500, 64]);
        let floor = LOG_FLOOR.ln();
        assert!(lm.to_f64_vec().iter().all(|&x| x == floor));
        let iv = fx.intensity_vectors(&spec).unwrap();
        assert!(iv.to_f64_vec().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn short_clip_is_rejected() {
        let fx = FeatureExtractor::default();
        assert!(matches!(
            fx.stft(&FoaClip::silent(100, SAMPLE_RATE)),
            Err(FeatureError::EmptyClip)
        ));
        assert!(matches!(
            fx.stft(&FoaClip::silent(48_000, 48_000)),
            Err(FeatureError::SampleRate { .. })
        ));
    }

    #[test]
    fn sine_peaks_at_nearest_bin() {
        let fx = FeatureExtractor::default();
        let spec = fx.stft(&sine_clip(1000.0, 24_000, [1.0, 0.0, 0.0, 0.0])).unwrap();
        let expected = (1000.0f64 * 1024.0 / 24000.0).round() as usize;
        assert_eq!(expected, 43);
        assert_eq!(fx.config().bin_of(1000.0), 43);
        let frame = spec.frame(W, 20);
        let peak = (0..frame.len())
            .max_by(|&a, &b| frame[a].norm().total_cmp(&frame[b].norm()))
            .unwrap();
        assert_eq!(peak, expected);
        assert!(spec.frame(Y, 20).iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn every_mel_band_has_support() {
        let fb = MelFilterbank::new(&FeatureConfig::default());
        assert_eq!(fb.n_mels(), 64);
        for m in 0..64 {
            let total: f64 = (0..fb.n_bins()).map(|k| fb.weight(m, k)).sum();
            assert!(total > 0.0, "band {m} empty");
            for k in 0..fb.n_bins() {
                assert!(fb.weight(m, k) <= 1.0);
            }
        }
        // nothing below 50 Hz or above 12 kHz
        assert_eq!(fb.weight(0, 2), 0.0);
        assert!(fb.weight(63, 512) < 1e-12);
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn gain_of_ten_shifts_log_mel_by_two_ln_ten() {
        let fx = FeatureExtractor::default();
        let clip = encoded(Direction::new(10.0, 5.0).unwrap(), 24_000);
        let a = fx.log_mel(&fx.stft(&clip).unwrap()).unwrap().to_f64_vec();
        let b = fx.log_mel(&fx.stft(&clip.scaled(10.0)).unwrap()).unwrap().to_f64_vec();
        let shift = 2.0 * 10f64.ln();
        let mut checked = 0;
        for (x, y) in a.iter().zip(&b) {
            if *x > 0.0 {
                assert!((y - x - shift).abs() < 1e-6, "{x} {y}");
                checked += 1;
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn intensity_points_at_free_field_source() {
        let fx = FeatureExtractor::default();
        let dir = Direction::new(30.0, 0.0).unwrap();
        let stack = fx.extract(&encoded(dir, 48_000)).unwrap();
        let est = intensity_direction(&stack, 0..100).unwrap();
        let err = angular_distance_deg(est, sph_to_cart(dir)).unwrap();
        assert!(err < 1.0, "error {err}");
        // plain (unweighted) average of the normalized cells agrees too
        let iv = fx.intensity_vectors(&fx.stft(&encoded(dir, 48_000)).unwrap()).unwrap();
        let d = iv.to_f64_vec();
        let plane = d.len() / 3;
        let mean = Vec3::new(
            d[..plane].iter().sum(),
            d[plane..2 * plane].iter().sum(),
            d[2 * plane..].iter().sum(),
        );
        assert!(angular_distance_deg(mean, sph_to_cart(dir)).unwrap() < 1.0);
        for i in 0..plane {
            let n = (d[i].powi(2) + d[plane + i].powi(2) + d[2 * plane + i].powi(2)).sqrt();
            assert!(n <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn flipping_z_flips_iv_z() {
        let fx = FeatureExtractor::default();
        let clip = encoded(Direction::new(-60.0, 25.0).unwrap(), 12_000);
        let mut flipped = clip.clone();
        for s in flipped.channels_mut()[Z].iter_mut() {
            *s = -*s;
        }
        let a = fx.intensity_vectors(&fx.stft(&clip).unwrap()).unwrap().to_f64_vec();
        let b = fx.intensity_vectors(&fx.stft(&flipped).unwrap()).unwrap().to_f64_vec();
        let plane = a.len() / 3;
        assert_eq!(&a[..2 * plane], &b[..2 * plane]);
        for (x, y) in a[2 * plane..].iter().zip(&b[2 * plane..]) {
            assert_eq!(*x, -*y);
        }
    }

    #[test]
    fn stacking_order_and_errors() {
        let lm = FeatureTensor::from_f64(vec![4, 10, 8], (0..320).map(|i| i as f64).collect()).unwrap();
        let iv = FeatureTensor::from_f64(vec![3, 10, 8], (0..240).map(|i| -(i as f64)).collect()).unwrap();
        let st = stack_audio_features(&lm, &iv).unwrap();
        assert_eq!(st.shape(), &[7, 10, 8]);
        let d = st.to_f64_vec();
        assert_eq!(&d[5 * 80..6 * 80], &iv.to_f64_vec()[80..160]);
        let short = FeatureTensor::from_f64(vec![3, 9, 8], vec![0.0; 216]).unwrap();
        assert!(matches!(
            stack_audio_features(&lm, &short),
            Err(FeatureError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn visual_repetition() {
        let v = FeatureTensor::from_f64(
            vec![100, 49],
            (0..4900).map(|i| (i / 49) as f64 + (i % 49) as f64 * 1e-3).collect(),
        )
        .unwrap();
        let r = repeat_visual(&v).unwrap();
        assert_eq!(r.shape(), &[500, 49]);
        let d = r.to_f64_vec();
        for t in 0..500 {
            assert_eq!(&d[t * 49..(t + 1) * 49], &v.to_f64_vec()[(t / 5) * 49..(t / 5 + 1) * 49]);
        }
        let bad = FeatureTensor::from_f64(vec![10, 48], vec![0.0; 480]).unwrap();
        assert!(repeat_visual(&bad).is_err());
    }

    #[test]
    fn pooling_examples() {
        let c = FeatureTensor::from_f64(vec![10, 3], vec![1.5; 30]).unwrap();
        assert_eq!(pool_audio_to_video_rate(&c).unwrap().to_f64_vec(), vec![3.0; 6]);
        let ramp = FeatureTensor::from_f64(vec![5, 1], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(pool_audio_to_video_rate(&ramp).unwrap().to_f64_vec(), vec![8.0]);
        let odd = FeatureTensor::from_f64(vec![7, 1], vec![0.0; 7]).unwrap();
        assert!(matches!(
            pool_audio_to_video_rate(&odd),
            Err(FeatureError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn pooling_matches_window_scan() {
        let (t_len, dim) = (40, 6);
        let a = noise(t_len * dim, 5);
        let pooled = pool_video_rate(&a, t_len, dim).unwrap();
        for u in 0..t_len / 5 {
            for j in 0..dim {
                let w: Vec<f64> = (0..5).map(|i| a[(5 * u + i) * dim + j]).collect();
                let expect = w.iter().sum::<f64>() / 5.0 + w.iter().cloned().fold(f64::MIN, f64::max);
                assert!((pooled.values[u * dim + j] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn pooling_gradient_matches_finite_differences() {
        let (t_len, dim) = (10, 3);
        let a = noise(t_len * dim, 11);
        let g = noise(2 * dim, 12);
        let pooled = pool_video_rate(&a, t_len, dim).unwrap();
        let mut grad = vec![0.0; a.len()];
        pool_video_rate_backward(&pooled, &g, &mut grad);
        let loss = |x: &[f64]| -> f64 {
            let p = pool_video_rate(x, t_len, dim).unwrap();
            p.values.iter().zip(&g).map(|(a, b)| a * b).sum()
        };
        for i in 0..a.len() {
            let mut hi = a.clone();
            hi[i] += 1e-6;
            let mut lo = a.clone();
            lo[i] -= 1e-6;
            let fd = (loss(&hi) - loss(&lo)) / 2e-6;
            assert!((fd - grad[i]).abs() < 1e-8, "{i}: {fd} vs {}", grad[i]);
        }
    }
}
