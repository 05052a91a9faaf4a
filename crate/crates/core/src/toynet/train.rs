//! Epoch loop over an in-memory training set.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use super::model::{Sample, ToyNet};
use super::optim::{tri_stage_lr, ScheduleParams, TrainState};
use super::ToyNetError;
use crate::augment::{acs_sample, SpatialTransform};
use crate::codec::FrameEvents;
use crate::metrics::{evaluate, SeldScores, Thresholds};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: ScheduleParams,
    /// Draw a random canonical spatial transform per clip and step.
    pub augment: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 2,
            schedule: ScheduleParams::default(),
            augment: false,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub sed_loss: f64,
    pub sce_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub loss: f64,
    pub sed_loss: f64,
    pub sce_loss: f64,
}

pub fn steps_per_epoch(n_samples: usize, batch_size: usize) -> usize {
    n_samples.div_ceil(batch_size.max(1))
}

/// Trains for `opts.epochs` epochs, reshuffling the clip order every epoch
/// with the state's RNG. `on_epoch` sees the mean losses of each epoch.
pub fn train(
    state: &mut TrainState,
    samples: &[Sample],
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<Vec<LogRow>, ToyNetError> {
    if samples.is_empty() || opts.epochs == 0 {
        return Ok(Vec::new());
    }
    let per_epoch = steps_per_epoch(samples.len(), opts.batch_size);
    let total = (per_epoch * opts.epochs) as u64;
    let start = state.step;
    let mut log = Vec::with_capacity(total as usize);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..opts.epochs {
        order.shuffle(&mut state.rng);
        let mut sums = [0.0; 3];
        for chunk in order.chunks(opts.batch_size.max(1)) {
            let augmented: Vec<Sample>;
            let batch: Vec<&Sample> = if opts.augment {
                augmented = chunk
                    .iter()
                    .map(|&i| {
                        let t = SpatialTransform::canonical(state.rng.random_range(0..8));
                        acs_sample(&samples[i], t)
                    })
                    .collect();
                augmented.iter().collect()
            } else {
                chunk.iter().map(|&i| &samples[i]).collect()
            };
            let lr = tri_stage_lr(state.step - start, total, opts.schedule);
            let loss = state.train_step(&batch, lr)?;
            sums[0] += loss.total;
            sums[1] += loss.sed_loss;
            sums[2] += loss.sce_loss;
            log.push(LogRow {
                step: state.step,
                lr,
                loss: loss.total,
                sed_loss: loss.sed_loss,
                sce_loss: loss.sce_loss,
            });
        }
        let n = per_epoch as f64;
        on_epoch(&EpochReport {
            epoch,
            loss: sums[0] / n,
            sed_loss: sums[1] / n,
            sce_loss: sums[2] / n,
        });
    }
    Ok(log)
}

/// Scores the model over several clips at once. Frame indices of each clip
/// are offset so that frames of different clips never align.
pub fn evaluate_clips(
    model: &ToyNet,
    clips: &[(&Sample, &[FrameEvents])],
    threshold: f64,
) -> Result<SeldScores, ToyNetError> {
    let mut preds = Vec::new();
    let mut refs = Vec::new();
    let mut offset = 0;
    for (sample, labels) in clips {
        let shift = |mut f: FrameEvents| {
            f.frame_index += offset;
            f
        };
        preds.extend(model.predict_events(sample, threshold)?.into_iter().map(shift));
        refs.extend(labels.iter().cloned().map(shift));
        offset += sample.video_frames();
    }
    Ok(evaluate(&preds, &refs, Thresholds::default())?)
}

pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut s = String::from("step,lr,loss,sed_loss,sce_loss\n");
    for r in rows {
        let _ = writeln!(s, "{},{:e},{},{},{}", r.step, r.lr, r.loss, r.sed_loss, r.sce_loss);
    }
    s
}

pub fn write_log_csv(rows: &[LogRow], path: impl AsRef<Path>) -> Result<(), ToyNetError> {
    std::fs::write(path, log_to_csv(rows))?;
    Ok(())
}
