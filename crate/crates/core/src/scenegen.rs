//! Free-field synthetic FOA scenes with exact ground truth.
//!
//! Each event is a static point source emitting a class-specific noise band
//! or tone, encoded to first-order ambisonics with SN3D gains and scaled by
//! `1 / max(d, 0.5)`. Events start and stop on the 100 ms label grid.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::audio::{FoaClip, SAMPLE_RATE, W, X, Y, Z};
use crate::codec::{Event, FrameEvents};
use crate::features::{VISUAL_DIM, VISUAL_GRID};
use crate::geom::{angle_to_pixel_continuous, wrap_azimuth, Direction};

/// Audio samples per 100 ms label frame.
pub const SAMPLES_PER_FRAME: usize = SAMPLE_RATE as usize / 10;
/// RMS of every source signal at 1 m.
pub const SOURCE_RMS: f64 = 0.1;
pub const DIFFUSE_LEVEL_DB: f64 = -30.0;
pub const MIN_DISTANCE: f64 = 0.5;
pub const MAX_DISTANCE: f64 = 5.0;
pub const MAX_CONCURRENT: usize = 2;

/// Pass band of each class, chosen so that classes occupy disjoint regions
/// of the mel axis.
pub const CLASS_BANDS: [(f64, f64); 6] = [
    (200.0, 700.0),
    (1000.0, 2200.0),
    (2800.0, 5000.0),
    (5600.0, 7600.0),
    (8000.0, 9800.0),
    (10200.0, 11800.0),
];

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene: {0}")]
    InvalidSpec(String),
    #[error("scene line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalKind {
    NoiseBand,
    Tone,
}

impl SignalKind {
    fn as_str(self) -> &'static str {
        match self {
            Self::NoiseBand => "noise",
            Self::Tone => "tone",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventSpec {
    pub class_id: usize,
    /// First active label frame.
    pub onset: usize,
    /// One past the last active label frame.
    pub offset: usize,
    pub direction: Direction,
    pub distance: f64,
    pub signal: SignalKind,
}

impl EventSpec {
    pub fn is_active(&self, frame: usize) -> bool {
        (self.onset..self.offset).contains(&frame)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    /// Clip length in 100 ms label frames.
    pub n_frames: usize,
    pub n_classes: usize,
    pub diffuse_noise: bool,
    pub events: Vec<EventSpec>,
}

/// Sampling ranges for [`SceneSpec::random`].
#[derive(Debug, Clone, PartialEq)]
pub struct SceneOptions {
    pub n_frames: usize,
    pub n_classes: usize,
    pub min_events: usize,
    pub max_events: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub max_elevation: f64,
    pub tone_probability: f64,
    pub diffuse_noise: bool,
}

impl Default for SceneOptions {
    fn default() -> Self {
        Self {
            n_frames: 100,
            n_classes: 3,
            min_events: 2,
            max_events: 5,
            min_len: 10,
            max_len: 40,
            max_elevation: 45.0,
            tone_probability: 0.25,
            diffuse_noise: true,
        }
    }
}

impl SceneSpec {
    pub fn empty(seed: u64, n_frames: usize, n_classes: usize) -> Self {
        Self {
            seed,
            n_frames,
            n_classes,
            diffuse_noise: false,
            events: Vec::new(),
        }
    }

    /// Draws a random valid scene. Candidate events violating the
    /// concurrency limits are rejected, so dense settings may yield fewer
    /// than `min_events` events.
    pub fn random(seed: u64, opts: &SceneOptions) -> Result<Self, SceneError> {
        let mut spec = Self::empty(seed, opts.n_frames, opts.n_classes);
        spec.diffuse_noise = opts.diffuse_noise;
        spec.validate()?;
        if opts.min_len == 0 || opts.min_len > opts.max_len || opts.min_len > opts.n_frames {
            return Err(SceneError::InvalidSpec("bad event length range".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = rng.random_range(opts.min_events..=opts.max_events.max(opts.min_events));
        for _ in 0..200 {
            if spec.events.len() >= target {
                break;
            }
            let class_id = rng.random_range(0..opts.n_classes);
            let len = rng.random_range(opts.min_len..=opts.max_len.min(opts.n_frames));
            let onset = rng.random_range(0..=opts.n_frames - len);
            let az = wrap_azimuth(rng.random_range(-180.0..180.0));
            let el = rng.random_range(-opts.max_elevation..=opts.max_elevation);
            let distance = rng.random_range(MIN_DISTANCE..=MAX_DISTANCE);
            let signal = if rng.random::<f64>() < opts.tone_probability {
                SignalKind::Tone
            } else {
                SignalKind::NoiseBand
            };
            let ev = EventSpec {
                class_id,
                onset,
                offset: onset + len,
                direction: Direction::new(az, el).expect("bounded elevation"),
                distance,
                signal,
            };
            spec.events.push(ev);
            if spec.validate().is_err() {
                spec.events.pop();
            }
        }
        spec.events.sort_by_key(|e| (e.onset, e.class_id));
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::InvalidSpec(m));
        if self.n_classes == 0 || self.n_classes > CLASS_BANDS.len() {
            return bad(format!("n_classes must be in 1..={}", CLASS_BANDS.len()));
        }
        for (i, e) in self.events.iter().enumerate() {
            if e.class_id >= self.n_classes {
                return bad(format!("event {i}: class {} out of range", e.class_id));
            }
            if e.onset >= e.offset || e.offset > self.n_frames {
                return bad(format!("event {i}: frames {}..{} invalid", e.onset, e.offset));
            }
            if !(MIN_DISTANCE..=MAX_DISTANCE).contains(&e.distance) {
                return bad(format!("event {i}: distance {} out of range", e.distance));
            }
        }
        for u in 0..self.n_frames {
            let active: Vec<&EventSpec> = self.events.iter().filter(|e| e.is_active(u)).collect();
            if active.len() > MAX_CONCURRENT {
                return bad(format!("frame {u}: {} concurrent events", active.len()));
            }
            for (i, a) in active.iter().enumerate() {
                if active[i + 1..].iter().any(|b| b.class_id == a.class_id) {
                    return bad(format!("frame {u}: class {} active twice", a.class_id));
                }
            }
        }
        Ok(())
    }

    /// Label frames in which `event` is the only active event.
    pub fn solo_frames(&self, event: usize) -> Vec<usize> {
        let e = &self.events[event];
        (e.onset..e.offset)
            .filter(|&u| self.events.iter().filter(|o| o.is_active(u)).count() == 1)
            .collect()
    }

    pub fn n_samples(&self) -> usize {
        self.n_frames * SAMPLES_PER_FRAME
    }

    pub fn to_kv(&self) -> String {
        let mut s = format!(
            "seed={}\nn_frames={}\nn_classes={}\ndiffuse_noise={}\n",
            self.seed, self.n_frames, self.n_classes, self.diffuse_noise
        );
        for e in &self.events {
            let _ = writeln!(
                s,
                "event={},{},{},{},{},{},{}",
                e.class_id,
                e.onset,
                e.offset,
                e.direction.azimuth(),
                e.direction.elevation(),
                e.distance,
                e.signal.as_str()
            );
        }
        s
    }

    pub fn from_kv(text: &str) -> Result<Self, SceneError> {
        let mut spec = Self::empty(0, 0, 1);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| SceneError::Parse { line: i + 1, msg };
            let (k, v) = line.split_once('=').ok_or_else(|| err("missing '='".into()))?;
            fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
                v.trim().parse().map_err(|_| format!("cannot parse {v:?}"))
            }
            match k.trim() {
                "seed" => spec.seed = num(v).map_err(err)?,
                "n_frames" => spec.n_frames = num(v).map_err(err)?,
                "n_classes" => spec.n_classes = num(v).map_err(err)?,
                "diffuse_noise" => spec.diffuse_noise = num(v).map_err(err)?,
                "event" => {
                    let f: Vec<&str> = v.split(',').map(str::trim).collect();
                    if f.len() != 7 {
                        return Err(err(format!("event needs 7 fields, found {}", f.len())));
                    }
                    let signal = match f[6] {
                        "noise" => SignalKind::NoiseBand,
                        "tone" => SignalKind::Tone,
                        other => return Err(err(format!("unknown signal {other:?}"))),
                    };
                    let direction = Direction::new(num(f[3]).map_err(err)?, num(f[4]).map_err(err)?)
                        .map_err(|e| err(e.to_string()))?;
                    spec.events.push(EventSpec {
                        class_id: num(f[0]).map_err(err)?,
                        onset: num(f[1]).map_err(err)?,
                        offset: num(f[2]).map_err(err)?,
                        direction,
                        distance: num(f[5]).map_err(err)?,
                        signal,
                    });
                }
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SceneError> {
        std::fs::write(path, self.to_kv())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SceneError> {
        Self::from_kv(&std::fs::read_to_string(path)?)
    }
}

fn event_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn normalize_rms(x: &mut [f64], rms: f64) {
    let cur = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if cur > 0.0 {
        let g = rms / cur;
        x.iter_mut().for_each(|v| *v *= g);
    }
}

/// Gaussian noise restricted to `[lo, hi]` Hz by zeroing FFT bins.
pub fn band_noise(n: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.sample(StandardNormal), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let df = SAMPLE_RATE as f64 / n as f64;
    for (k, b) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * df;
        if f < lo || f > hi {
            *b = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    normalize_rms(&mut out, SOURCE_RMS);
    out
}

/// The mono source signal of event `index`, at its 1 m level.
pub fn event_signal(spec: &SceneSpec, index: usize) -> Vec<f64> {
    let e = &spec.events[index];
    let n = (e.offset - e.onset) * SAMPLES_PER_FRAME;
    let (lo, hi) = CLASS_BANDS[e.class_id];
    let mut rng = event_rng(spec.seed, index);
    match e.signal {
        SignalKind::NoiseBand => band_noise(n, lo, hi, &mut rng),
        SignalKind::Tone => {
            let f = 0.5 * (lo + hi);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let w = std::f64::consts::TAU * f / SAMPLE_RATE as f64;
            let a = SOURCE_RMS * std::f64::consts::SQRT_2;
            (0..n).map(|i| a * (w * i as f64 + phase).sin()).collect()
        }
    }
}

/// SN3D first-order gains in ACN order (W, Y, Z, X).
pub fn foa_gains(d: Direction) -> [f64; 4] {
    let (az, el) = (d.azimuth().to_radians(), d.elevation().to_radians());
    let mut g = [0.0; 4];
    g[W] = 1.0;
    g[Y] = el.cos() * az.sin();
    g[Z] = el.sin();
    g[X] = el.cos() * az.cos();
    g
}

pub fn render_audio(spec: &SceneSpec) -> FoaClip {
    let n = spec.n_samples();
    let mut clip = FoaClip::silent(n, SAMPLE_RATE);
    for (i, e) in spec.events.iter().enumerate() {
        let sig = event_signal(spec, i);
        let gains = foa_gains(e.direction);
        let amp = 1.0 / e.distance.max(MIN_DISTANCE);
        let start = e.onset * SAMPLES_PER_FRAME;
        for (c, ch) in clip.channels_mut().iter_mut().enumerate() {
            let g = gains[c] * amp;
            for (o, s) in ch[start..start + sig.len()].iter_mut().zip(&sig) {
                *o += g * s;
            }
        }
    }
    if spec.diffuse_noise {
        let a = SOURCE_RMS * 10f64.powf(DIFFUSE_LEVEL_DB / 20.0);
        let mut rng = event_rng(spec.seed, usize::MAX - 1);
        for (c, ch) in clip.channels_mut().iter_mut().enumerate() {
            let std = if c == W { a } else { a / 3f64.sqrt() };
            for o in ch.iter_mut() {
                *o += std * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    clip
}

/// One `7 x 7` map per label frame (row-major, `n_frames x 49`): a unit
/// Gaussian bump with a one-cell standard deviation at each active source.
pub fn render_visual(spec: &SceneSpec) -> Vec<f64> {
    let g = VISUAL_GRID;
    let mut out = vec![0.0; spec.n_frames * VISUAL_DIM];
    for e in &spec.events {
        let (cc, rc) = angle_to_pixel_continuous(e.direction, g, g);
        let mut bump = [0.0; VISUAL_DIM];
        for r in 0..g {
            for c in 0..g {
                let dc = (c as f64 - cc).rem_euclid(g as f64);
                let dc = dc.min(g as f64 - dc);
                let dr = r as f64 - rc;
                bump[r * g + c] = (-0.5 * (dc * dc + dr * dr)).exp();
            }
        }
        for u in e.onset..e.offset {
            for (o, b) in out[u * VISUAL_DIM..(u + 1) * VISUAL_DIM].iter_mut().zip(&bump) {
                *o += b;
            }
        }
    }
    out
}

/// Non-empty label frames in order, entries sorted by class.
pub fn render_labels(spec: &SceneSpec) -> Vec<FrameEvents> {
    let mut frames = Vec::new();
    for u in 0..spec.n_frames {
        let mut entries: Vec<Event> = spec
            .events
            .iter()
            .filter(|e| e.is_active(u))
            .map(|e| Event {
                class_id: e.class_id,
                direction: e.direction,
                distance: e.distance,
            })
            .collect();
        if entries.is_empty() {
            continue;
        }
        entries.sort_by_key(|e| e.class_id);
        frames.push(FrameEvents { frame_index: u, entries });
    }
    frames
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{decode, encode, parse_csv, to_csv};
    use crate::features::{intensity_direction, FeatureExtractor, FRAMES_PER_VIDEO_FRAME};
    use crate::geom::{angular_distance_deg, cart_to_sph, sph_to_cart};

    fn one_event(az: f64, el: f64, d: f64, signal: SignalKind) -> SceneSpec {
        SceneSpec {
            seed: 1,
            n_frames: 20,
            n_classes: 3,
            diffuse_noise: false,
            events: vec![EventSpec {
                class_id: 1,
                onset: 5,
                offset: 15,
                direction: Direction::new(az, el).unwrap(),
                distance: d,
                signal,
            }],
        }
    }

    #[test]
    fn front_source_has_no_side_or_height_component() {
        let clip = render_audio(&one_event(0.0, 0.0, 1.0, SignalKind::NoiseBand));
        assert!(clip.channel(Y).iter().all(|&v| v == 0.0));
        assert!(clip.channel(Z).iter().all(|&v| v == 0.0));
        assert_eq!(clip.channel(X), clip.channel(W));
        assert_eq!(clip.n_samples(), 20 * 2400);
        let active = &clip.channel(W)[5 * 2400..15 * 2400];
        let rms = (active.iter().map(|v| v * v).sum::<f64>() / active.len() as f64).sqrt();
        assert!((rms - SOURCE_RMS).abs() < 1e-12);
        assert!(clip.channel(W)[..5 * 2400].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn amplitude_follows_inverse_distance() {
        let near = render_audio(&one_event(40.0, 10.0, 1.5, SignalKind::Tone));
        let far = render_audio(&one_event(40.0, 10.0, 3.0, SignalKind::Tone));
        for (a, b) in near.channel(W).iter().zip(far.channel(W)) {
            assert!((a - 2.0 * b).abs() < 1e-15);
        }
        let floor = render_audio(&one_event(40.0, 10.0, 0.5, SignalKind::Tone));
        let peak = floor.channel(W).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak <= 2.0 * SOURCE_RMS * std::f64::consts::SQRT_2 + 1e-12);
    }

    #[test]
    fn band_noise_stays_in_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = band_noise(4800, 1000.0, 2200.0, &mut rng);
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(4800).process(&mut buf);
        let total: f64 = buf.iter().map(|c| c.norm_sqr()).sum();
        let out_of_band: f64 = buf
            .iter()
            .enumerate()
            .filter(|(k, _)| {
                let f = (*k).min(4800 - k) as f64 * 5.0;
                !(1000.0..=2200.0).contains(&f)
            })
            .map(|(_, c)| c.norm_sqr())
            .sum();
        assert!(out_of_band / total < 1e-20);
    }

    #[test]
    fn rendered_direction_matches_intensity_oracle() {
        let fx = FeatureExtractor::default();
        for (az, el, sig) in [(30.0, 0.0, SignalKind::NoiseBand), (-120.0, 35.0, SignalKind::Tone), (170.0, -40.0, SignalKind::NoiseBand)] {
            let mut spec = one_event(az, el, 2.0, sig);
            spec.diffuse_noise = true;
            let stack = fx.extract(&render_audio(&spec)).unwrap();
            let v = intensity_direction(&stack, 5 * FRAMES_PER_VIDEO_FRAME + 1..15 * FRAMES_PER_VIDEO_FRAME - 1).unwrap();
            let err = angular_distance_deg(v, sph_to_cart(spec.events[0].direction)).unwrap();
            assert!(err < 2.0, "({az}, {el}): {err}");
        }
    }

    #[test]
    fn visual_examples() {
        let spec = one_event(0.0, 0.0, 1.0, SignalKind::Tone);
        let v = render_visual(&spec);
        assert_eq!(v.len(), 20 * 49);
        assert!(v[..5 * 49].iter().all(|&x| x == 0.0));
        let frame = &v[5 * 49..6 * 49];
        assert_eq!(frame[3 * 7 + 3], 1.0);
        assert!((frame[3 * 7 + 4] - (-0.5f64).exp()).abs() < 1e-15);
        let best = frame.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(best, 24);

        let mut two = spec.clone();
        two.events.push(EventSpec {
            class_id: 0,
            direction: Direction::new(170.0, 60.0).unwrap(),
            ..spec.events[0]
        });
        let mut other = spec.clone();
        other.events = vec![two.events[1]];
        let sum = render_visual(&two);
        let parts: Vec<f64> = v.iter().zip(render_visual(&other)).map(|(a, b)| a + b).collect();
        assert_eq!(sum, parts);
        // columns wrap: a source at azimuth 180 lights both edge columns equally
        let edge = render_visual(&one_event(180.0, 0.0, 1.0, SignalKind::Tone));
        let f = &edge[5 * 49..6 * 49];
        assert!((f[21] - f[27]).abs() < 1e-15);
    }

    #[test]
    fn label_examples() {
        let mut spec = one_event(10.0, 5.0, 2.0, SignalKind::NoiseBand);
        spec.events[0].onset = 5;
        spec.events[0].offset = 15;
        let labels = render_labels(&spec);
        assert_eq!(labels.len(), 10);
        assert_eq!(labels[0].frame_index, 5);
        assert_eq!(labels[9].frame_index, 14);
        assert!(render_labels(&SceneSpec::empty(0, 100, 3)).is_empty());
        assert_eq!(parse_csv(&to_csv(&labels)).unwrap(), labels);
    }

    #[test]
    fn random_scenes_respect_constraints() {
        let opts = SceneOptions::default();
        for seed in 0..30 {
            let spec = SceneSpec::random(seed, &opts).unwrap();
            spec.validate().unwrap();
            assert!(!spec.events.is_empty());
            assert!(spec.events.iter().all(|e| e.direction.elevation().abs() <= 45.0));
            assert_eq!(SceneSpec::random(seed, &opts).unwrap(), spec);
            let labels = render_labels(&spec);
            for f in &labels {
                let t = encode(f, 3).unwrap();
                let out = crate::codec::ModelFrameOutput { sed: t.activity, sce: t.coords };
                let back = decode(&out, f.frame_index, 0.5).unwrap();
                assert_eq!(back.entries.len(), f.entries.len());
                for (a, b) in back.entries.iter().zip(&f.entries) {
                    assert_eq!(a.class_id, b.class_id);
                    assert!(angular_distance_deg(sph_to_cart(a.direction), sph_to_cart(b.direction)).unwrap() < 1e-9);
                    assert!((a.distance - b.distance).abs() < 1e-12 * b.distance);
                }
            }
        }
    }

    #[test]
    fn validation_rejects_overlaps() {
        let mut spec = one_event(0.0, 0.0, 1.0, SignalKind::Tone);
        spec.events.push(spec.events[0]);
        assert!(spec.validate().is_err());
        spec.events[1].class_id = 0;
        spec.validate().unwrap();
        let mut third = spec.events[0];
        third.class_id = 2;
        spec.events.push(third);
        assert!(spec.validate().is_err());
        let mut far = one_event(0.0, 0.0, 6.0, SignalKind::Tone);
        assert!(far.validate().is_err());
        far.events[0].distance = 5.0;
        far.events[0].offset = 21;
        assert!(far.validate().is_err());
    }

    #[test]
    fn kv_round_trip() {
        let spec = SceneSpec::random(11, &SceneOptions::default()).unwrap();
        let back = SceneSpec::from_kv(&spec.to_kv()).unwrap();
        assert_eq!(back, spec);
        assert_eq!(render_audio(&back), render_audio(&spec));
        assert!(SceneSpec::from_kv("n_frames=10\nn_classes=3\nevent=0,1,2,0,0,1\n").is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scene.txt");
        spec.save(&p).unwrap();
        assert_eq!(SceneSpec::load(&p).unwrap(), spec);
    }

    #[test]
    fn solo_frames_exclude_overlaps() {
        let mut spec = one_event(0.0, 0.0, 1.0, SignalKind::Tone);
        let mut other = spec.events[0];
        other.class_id = 2;
        other.onset = 10;
        other.offset = 18;
        spec.events.push(other);
        assert_eq!(spec.solo_frames(0), (5..10).collect::<Vec<_>>());
        assert_eq!(spec.solo_frames(1), (15..18).collect::<Vec<_>>());
        let (d, _) = cart_to_sph(sph_to_cart(spec.events[0].direction)).unwrap();
        assert_eq!(d.azimuth(), 0.0);
    }
}
