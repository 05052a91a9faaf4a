//! Simulated datasets on disk and their conversion to training samples.
//!
//! A dataset directory holds `manifest.csv` plus, per clip, a float WAV,
//! the `7 x T x 64` audio feature stack and the `F x 49` visual features as
//! tensor files, the label CSV and the scene description.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::audio::{write_wav, AudioError};
use crate::codec::{encode_sequence, read_csv, write_csv, CodecError, FrameEvents};
use crate::features::{FeatureError, FeatureExtractor, FRAMES_PER_VIDEO_FRAME, VISUAL_DIM};
use crate::scenegen::{render_audio, render_labels, render_visual, SceneError, SceneOptions, SceneSpec};
use crate::tensor_store::{self, FeatureTensor, TensorError};
use crate::toynet::Sample;

pub const MANIFEST: &str = "manifest.csv";
const MANIFEST_HEADER: &str = "id,wav,features,visual,labels,scene";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("clip {id}: {msg}")]
    Clip { id: String, msg: String },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// File names of one clip, relative to the dataset directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipEntry {
    pub id: String,
    pub wav: String,
    pub features: String,
    pub visual: String,
    pub labels: String,
    pub scene: String,
}

impl ClipEntry {
    pub fn for_id(id: &str) -> Self {
        Self {
            id: id.to_string(),
            wav: format!("{id}.wav"),
            features: format!("{id}.audio.tnsr"),
            visual: format!("{id}.visual.tnsr"),
            labels: format!("{id}.csv"),
            scene: format!("{id}.scene.txt"),
        }
    }
}

pub fn manifest_to_string(entries: &[ClipEntry]) -> String {
    let mut s = format!("{MANIFEST_HEADER}\n");
    for e in entries {
        let _ = writeln!(s, "{},{},{},{},{},{}", e.id, e.wav, e.features, e.visual, e.labels, e.scene);
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<Vec<ClipEntry>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (i == 0 && line == MANIFEST_HEADER) {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(DatasetError::Manifest {
                line: i + 1,
                msg: format!("expected 6 fields, found {}", f.len()),
            });
        }
        out.push(ClipEntry {
            id: f[0].into(),
            wav: f[1].into(),
            features: f[2].into(),
            visual: f[3].into(),
            labels: f[4].into(),
            scene: f[5].into(),
        });
    }
    Ok(out)
}

/// Seed of clip `index` in a dataset simulated with `seed`.
pub fn clip_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(index as u64)
}

/// A rendered clip held in memory.
#[derive(Debug, Clone)]
pub struct SimulatedClip {
    pub spec: SceneSpec,
    pub audio_features: FeatureTensor,
    pub visual: Vec<f64>,
    pub labels: Vec<FrameEvents>,
}

pub fn simulate_clip(spec: SceneSpec, fx: &FeatureExtractor) -> Result<SimulatedClip, DatasetError> {
    let clip = render_audio(&spec);
    Ok(SimulatedClip {
        audio_features: fx.extract(&clip)?,
        visual: render_visual(&spec),
        labels: render_labels(&spec),
        spec,
    })
}

/// Random scenes for clips `0..n_clips`.
pub fn random_specs(n_clips: usize, seed: u64, opts: &SceneOptions) -> Result<Vec<SceneSpec>, DatasetError> {
    (0..n_clips)
        .map(|i| Ok(SceneSpec::random(clip_seed(seed, i), opts)?))
        .collect()
}

/// Training sample of a rendered clip. Features pass through `f32`, as they
/// would when read back from disk.
pub fn to_sample(c: &SimulatedClip, n_classes: usize) -> Result<Sample, DatasetError> {
    let audio = c.audio_features.to_f32().to_f64_vec();
    let shape = c.audio_features.shape();
    let visual = FeatureTensor::from_f64(vec![c.spec.n_frames, VISUAL_DIM], c.visual.clone())?
        .to_f32()
        .to_f64_vec();
    build_sample(&format!("seed {}", c.spec.seed), audio, shape[1], visual, &c.labels, n_classes)
}

fn build_sample(
    id: &str,
    audio: Vec<f64>,
    n_audio_frames: usize,
    visual: Vec<f64>,
    labels: &[FrameEvents],
    n_classes: usize,
) -> Result<Sample, DatasetError> {
    let n_video = n_audio_frames / FRAMES_PER_VIDEO_FRAME;
    if n_video * FRAMES_PER_VIDEO_FRAME != n_audio_frames || visual.len() != n_video * VISUAL_DIM {
        return Err(DatasetError::Clip {
            id: id.to_string(),
            msg: format!("{n_audio_frames} audio frames vs {} visual values", visual.len()),
        });
    }
    let (activity, coords) = encode_sequence(labels, n_video, n_classes)?;
    Ok(Sample {
        audio,
        n_frames: n_audio_frames,
        visual,
        activity,
        coords,
    })
}

/// Renders `n_clips` random scenes into `dir` and writes the manifest.
/// Output bytes depend only on `seed` and `opts`.
pub fn simulate(dir: impl AsRef<Path>, n_clips: usize, seed: u64, opts: &SceneOptions) -> Result<Vec<ClipEntry>, DatasetError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let fx = FeatureExtractor::default();
    let specs = random_specs(n_clips, seed, opts)?;
    let entries: Vec<ClipEntry> = specs
        .into_par_iter()
        .enumerate()
        .map(|(i, spec)| -> Result<ClipEntry, DatasetError> {
            let e = ClipEntry::for_id(&format!("clip_{i:04}"));
            let clip = render_audio(&spec);
            write_wav(&clip, dir.join(&e.wav))?;
            tensor_store::save(&fx.extract(&clip)?.to_f32(), dir.join(&e.features))?;
            let visual = FeatureTensor::from_f64(vec![spec.n_frames, VISUAL_DIM], render_visual(&spec))?;
            tensor_store::save(&visual.to_f32(), dir.join(&e.visual))?;
            write_csv(&render_labels(&spec), dir.join(&e.labels))?;
            spec.save(dir.join(&e.scene))?;
            Ok(e)
        })
        .collect::<Result<_, _>>()?;
    fs::write(dir.join(MANIFEST), manifest_to_string(&entries))?;
    Ok(entries)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Vec<ClipEntry>, DatasetError> {
    parse_manifest(&fs::read_to_string(dir.as_ref().join(MANIFEST))?)
}

/// A clip loaded back from disk.
#[derive(Debug, Clone)]
pub struct LoadedClip {
    pub entry: ClipEntry,
    pub sample: Sample,
    pub labels: Vec<FrameEvents>,
}

pub fn load_clip(dir: &Path, e: &ClipEntry, n_classes: usize) -> Result<LoadedClip, DatasetError> {
    let feats = tensor_store::load(dir.join(&e.features))?;
    let shape = feats.shape().to_vec();
    if shape.len() != 3 {
        return Err(DatasetError::Clip {
            id: e.id.clone(),
            msg: format!("audio features have shape {shape:?}"),
        });
    }
    let visual = tensor_store::load(dir.join(&e.visual))?;
    let labels = read_csv(dir.join(&e.labels))?;
    let sample = build_sample(&e.id, feats.into_f64(), shape[1], visual.into_f64(), &labels, n_classes)?;
    Ok(LoadedClip {
        entry: e.clone(),
        sample,
        labels,
    })
}

pub fn load_dataset(dir: impl AsRef<Path>, n_classes: usize) -> Result<Vec<LoadedClip>, DatasetError> {
    let dir = dir.as_ref();
    read_manifest(dir)?
        .iter()
        .map(|e| load_clip(dir, e, n_classes))
        .collect()
}
