mod config;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seld3d::audio::{read_wav, write_wav};
use seld3d::augment::{acs_audio, acs_labels, avps_frame, avps_visual_features, load_ppm, save_ppm, SpatialTransform};
use seld3d::codec::{decode, encode, read_csv, write_csv, Event, FrameEvents, ModelFrameOutput};
use seld3d::dataset::{load_dataset, simulate};
use seld3d::features::{FeatureExtractor, AUDIO_CHANNELS};
use seld3d::geom::{angular_distance_deg, sph_to_cart, Direction};
use seld3d::metrics::{evaluate, SeldScores, Thresholds};
use seld3d::tensor_store::{self, FeatureTensor};
use seld3d::toynet::checkpoint;
use seld3d::toynet::train::write_log_csv;
use seld3d::toynet::{evaluate_clips, train, InputNorm, Sample, ToyNet, ToyNetConfig, TrainState};

use config::RunConfig;

/// Audio-visual 3D sound event localization and detection toolkit.
#[derive(Parser)]
#[command(name = "seld3d", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// key=value run configuration; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long = "sed-threshold", global = true)]
    sed_threshold: Option<f64>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(t) = self.sed_threshold {
            cfg.sed_threshold = t;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render random scenes into a dataset directory
    Simulate {
        /// Number of clips (overrides `clips=`)
        #[arg(long)]
        clips: Option<usize>,
    },
    /// Extract the 7-channel audio feature stack of a FOA WAV file
    Features {
        input: PathBuf,
    },
    /// Apply one of the 8 canonical spatial transforms to a clip
    Augment {
        /// Transform id 0-7
        #[arg(long)]
        transform: u32,
        wav: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Visual feature tensor, frames x 49
        #[arg(long)]
        visual: Option<PathBuf>,
        /// Equirectangular video frame (binary PPM)
        #[arg(long)]
        frame: Option<PathBuf>,
    },
    /// Train on a simulated dataset and score the training set
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        augment: bool,
    },
    /// Write predicted label CSVs for every clip of a dataset
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score predicted label CSVs against references (files or directories)
    Eval {
        pred: PathBuf,
        reference: PathBuf,
    },
    /// Round-trip random frames through the output encoding
    Codec {
        #[arg(long, default_value_t = 1000)]
        frames: usize,
    },
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SELD3D_THREADS") {
        let n: usize = v.parse().with_context(|| format!("SELD3D_THREADS={v:?} is not a number"))?;
        ensure!(n > 0, "SELD3D_THREADS must be positive");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let mut cfg = cli.common.resolve()?;
    match cli.command {
        Command::Simulate { clips } => {
            if let Some(n) = clips {
                cfg.clips = n;
            }
            cmd_simulate(&cfg)
        }
        Command::Features { input } => cmd_features(&input, &cfg),
        Command::Augment { transform, wav, labels, visual, frame } => {
            cmd_augment(&cfg, transform, &wav, labels.as_deref(), visual.as_deref(), frame.as_deref())
        }
        Command::Train { data, augment } => {
            if data.is_some() {
                cfg.data = data;
            }
            cfg.augment |= augment;
            cmd_train(&cfg)
        }
        Command::Predict { checkpoint, data } => {
            if data.is_some() {
                cfg.data = data;
            }
            cmd_predict(&cfg, &checkpoint)
        }
        Command::Eval { pred, reference } => cmd_eval(&cfg, &pred, &reference),
        Command::Codec { frames } => cmd_codec(&cfg, frames),
    }
}

fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.require_seed()?;
    let out = cfg.require_out()?;
    let entries = simulate(out, cfg.clips, seed, &cfg.scene)?;
    println!("wrote {} clips to {}", entries.len(), out.display());
    Ok(())
}

fn cmd_features(input: &Path, cfg: &RunConfig) -> Result<()> {
    let out = cfg.require_out()?;
    let clip = read_wav(input)?;
    let stack = FeatureExtractor::default().extract(&clip)?;
    tensor_store::save(&stack.to_f32(), out)?;
    println!("{} -> {} {:?}", input.display(), out.display(), stack.shape());
    Ok(())
}

fn file_name(p: &Path) -> Result<&std::ffi::OsStr> {
    p.file_name().with_context(|| format!("{} has no file name", p.display()))
}

fn cmd_augment(
    cfg: &RunConfig,
    id: u32,
    wav: &Path,
    labels: Option<&Path>,
    visual: Option<&Path>,
    frame: Option<&Path>,
) -> Result<()> {
    let t = SpatialTransform::from_id(id)?;
    let out = cfg.require_out()?;
    fs::create_dir_all(out)?;
    let dst = |p: &Path| -> Result<PathBuf> { Ok(out.join(file_name(p)?)) };
    write_wav(&acs_audio(&read_wav(wav)?, t), dst(wav)?)?;
    if let Some(p) = labels {
        let moved: Vec<FrameEvents> = read_csv(p)?.iter().map(|f| acs_labels(f, t)).collect();
        write_csv(&moved, dst(p)?)?;
    }
    if let Some(p) = visual {
        let v = tensor_store::load(p)?;
        let shape = v.shape().to_vec();
        let moved = FeatureTensor::from_f64(shape, avps_visual_features(&v.to_f64_vec(), t))?;
        tensor_store::save(&moved.to_f32(), dst(p)?)?;
    }
    if let Some(p) = frame {
        save_ppm(&avps_frame(&load_ppm(p)?, t)?, dst(p)?)?;
    }
    println!("transform {id} ({t:?}) written to {}", out.display());
    Ok(())
}

fn report(scores: &SeldScores, out: Option<&Path>) -> Result<()> {
    println!("{}", scores.summary());
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        scores.write_reports(dir.join("scores.txt"), dir.join("scores.csv"))?;
    }
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.require_seed()?;
    let data = cfg.require_data()?;
    let out = cfg.require_out()?;
    let clips = load_dataset(data, cfg.net.n_classes)?;
    ensure!(!clips.is_empty(), "dataset {} has no clips", data.display());
    let samples: Vec<Sample> = clips.iter().map(|c| c.sample.clone()).collect();

    let mut net = ToyNet::new(ToyNetConfig { seed, ..cfg.net.clone() })?;
    net.norm = InputNorm::fit(samples.iter().map(|s| s.audio.as_slice()), AUDIO_CHANNELS);
    let mut state = TrainState::new(net, seed);
    let log = train(&mut state, &samples, &cfg.train_options(), |r| {
        if (r.epoch + 1) % 10 == 0 {
            eprintln!("epoch {:>4}  loss {:.5}  sed {:.5}  sce {:.5}", r.epoch + 1, r.loss, r.sed_loss, r.sce_loss);
        }
    })?;

    fs::create_dir_all(out)?;
    checkpoint::save(&state.model, out.join("checkpoint"))?;
    write_log_csv(&log, out.join("log.csv"))?;
    let pairs: Vec<(&Sample, &[FrameEvents])> = clips.iter().map(|c| (&c.sample, c.labels.as_slice())).collect();
    report(&evaluate_clips(&state.model, &pairs, cfg.sed_threshold)?, Some(out))
}

fn cmd_predict(cfg: &RunConfig, ckpt: &Path) -> Result<()> {
    let data = cfg.require_data()?;
    let out = cfg.require_out()?;
    let model = checkpoint::load(ckpt)?;
    let clips = load_dataset(data, model.cfg.n_classes)?;
    fs::create_dir_all(out)?;
    for c in &clips {
        write_csv(&model.predict_events(&c.sample, cfg.sed_threshold)?, out.join(&c.entry.labels))?;
    }
    println!("wrote predictions for {} clips to {}", clips.len(), out.display());
    Ok(())
}

/// Label files to score: the pair itself, or every `.csv` of the reference
/// directory matched by name in the prediction directory.
fn eval_pairs(pred: &Path, reference: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    match (pred.is_dir(), reference.is_dir()) {
        (false, false) => Ok(vec![(pred.to_path_buf(), reference.to_path_buf())]),
        (true, true) => {
            let mut names: Vec<_> = fs::read_dir(reference)?
                .map(|e| e.map(|e| e.path()))
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .filter(|p| p.extension().is_some_and(|x| x == "csv") && file_name(p).is_ok_and(|n| n != "manifest.csv"))
                .collect();
            names.sort();
            names.into_iter().map(|r| Ok((pred.join(file_name(&r)?), r))).collect()
        }
        _ => bail!("prediction and reference must both be files or both be directories"),
    }
}

fn cmd_eval(cfg: &RunConfig, pred: &Path, reference: &Path) -> Result<()> {
    let mut preds = Vec::new();
    let mut refs = Vec::new();
    let mut offset = 0;
    for (p, r) in eval_pairs(pred, reference)? {
        let p = read_csv(&p).with_context(|| format!("reading {}", p.display()))?;
        let r = read_csv(&r).with_context(|| format!("reading {}", r.display()))?;
        let end = p.iter().chain(&r).map(|f| f.frame_index + 1).max().unwrap_or(0);
        let shift = |mut f: FrameEvents| {
            f.frame_index += offset;
            f
        };
        preds.extend(p.into_iter().map(shift));
        refs.extend(r.into_iter().map(shift));
        offset += end;
    }
    report(&evaluate(&preds, &refs, Thresholds::default())?, cfg.out.as_deref())
}

fn cmd_codec(cfg: &RunConfig, n_frames: usize) -> Result<()> {
    let seed = cfg.seed.unwrap_or(0);
    let n_classes = cfg.net.n_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    let mut worst_angle = 0.0f64;
    let mut worst_dist = 0.0f64;
    for i in 0..n_frames {
        let mut frame = FrameEvents::new(i);
        for class_id in 0..n_classes {
            if !rng.random_bool(0.5) {
                continue;
            }
            let el = rng.random_range(-1.0f64..=1.0).asin().to_degrees();
            frame.entries.push(Event {
                class_id,
                direction: Direction::new(rng.random_range(-180.0..=180.0), el)?,
                distance: rng.random_range(0.1..=10.0),
            });
        }
        let t = encode(&frame, n_classes)?;
        let back = decode(&ModelFrameOutput { sed: t.activity, sce: t.coords }, i, cfg.sed_threshold.min(1.0))?;
        let same_classes = back.entries.len() == frame.entries.len()
            && back.entries.iter().zip(&frame.entries).all(|(a, b)| a.class_id == b.class_id);
        let mut ok = same_classes;
        if same_classes {
            for (a, b) in back.entries.iter().zip(&frame.entries) {
                let angle = angular_distance_deg(sph_to_cart(a.direction), sph_to_cart(b.direction))?;
                let rel = (a.distance - b.distance).abs() / b.distance;
                worst_angle = worst_angle.max(angle);
                worst_dist = worst_dist.max(rel);
                ok &= angle <= 1e-9 && rel <= 1e-12;
            }
        }
        if !ok {
            mismatches += 1;
        }
    }
    println!(
        "frames={n_frames} mismatches={mismatches} max_direction_error_deg={worst_angle:e} max_rel_distance_error={worst_dist:e}"
    );
    if let Some(dir) = &cfg.out {
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join("codec.txt"),
            format!("frames={n_frames}\nmismatches={mismatches}\nmax_direction_error_deg={worst_angle}\nmax_rel_distance_error={worst_dist}\n"),
        )?;
    }
    ensure!(mismatches == 0, "{mismatches} frames did not survive the round trip");
    Ok(())
}
