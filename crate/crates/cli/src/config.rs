//! Run configuration: flat `key=value` text with `#` comments. Command-line
//! flags are applied on top of the file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use seld3d::codec::DEFAULT_SED_THRESHOLD;
use seld3d::scenegen::SceneOptions;
use seld3d::toynet::{ScheduleParams, ToyNetConfig, TrainOptions};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub clips: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub sed_threshold: f64,
    pub augment: bool,
    pub net: ToyNetConfig,
    pub scene: SceneOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainOptions::default();
        Self {
            data: None,
            out: None,
            seed: None,
            clips: 20,
            epochs: train.epochs,
            batch_size: train.batch_size,
            peak_lr: train.schedule.peak,
            sed_threshold: DEFAULT_SED_THRESHOLD,
            augment: train.augment,
            net: ToyNetConfig::default(),
            scene: SceneOptions::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    value.parse().with_context(|| format!("{key}: cannot parse {value:?}"))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!("line {}: expected key=value, got {line:?}", i + 1);
            };
            cfg.set(k.trim(), v.trim()).with_context(|| format!("line {}", i + 1))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data" => self.data = Some(value.into()),
            "out" => self.out = Some(value.into()),
            "seed" => self.seed = Some(parse(key, value)?),
            "clips" => self.clips = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "peak_lr" => self.peak_lr = parse(key, value)?,
            "sed_threshold" => self.sed_threshold = parse(key, value)?,
            "augment" => self.augment = parse(key, value)?,
            "n_classes" => {
                self.net.n_classes = parse(key, value)?;
                self.scene.n_classes = self.net.n_classes;
            }
            "frames" => self.scene.n_frames = parse(key, value)?,
            "min_events" => self.scene.min_events = parse(key, value)?,
            "max_events" => self.scene.max_events = parse(key, value)?,
            "min_len" => self.scene.min_len = parse(key, value)?,
            "max_len" => self.scene.max_len = parse(key, value)?,
            "max_elevation" => self.scene.max_elevation = parse(key, value)?,
            "tone_probability" => self.scene.tone_probability = parse(key, value)?,
            "diffuse_noise" => self.scene.diffuse_noise = parse(key, value)?,
            _ => {
                if !self.net.set(key, value)? {
                    bail!("unknown key {key:?}");
                }
            }
        }
        Ok(())
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed.context("a seed is required (--seed or seed= in the config)")
    }

    pub fn require_data(&self) -> Result<&Path> {
        let dir = self.data.as_deref().context("a data directory is required (--data or data= in the config)")?;
        if !dir.is_dir() {
            bail!("data directory {} does not exist", dir.display());
        }
        Ok(dir)
    }

    pub fn require_out(&self) -> Result<&Path> {
        self.out.as_deref().context("an output directory is required (--out or out= in the config)")
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.epochs,
            batch_size: self.batch_size,
            schedule: ScheduleParams { peak: self.peak_lr, ..Default::default() },
            augment: self.augment,
        }
    }
}
