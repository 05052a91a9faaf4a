//! SED-SCE output representation.
//!
//! Every class gets an activity probability and a Cartesian vector whose
//! direction is the direction of arrival and whose length is the source
//! distance in meters. Labels are exchanged as DCASE-style CSV rows
//! `frame_index,class_id,source_id,azimuth_deg,elevation_deg,distance_m`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::geom::{cart_to_sph, sph_to_cart, Direction, GeomError, Vec3};

pub const DEFAULT_SED_THRESHOLD: f64 = 0.5;
/// Output vectors shorter than this carry no decodable direction.
pub const MIN_DECODABLE_NORM: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("class {class} appears twice in frame {frame}")]
    DuplicateClass { frame: usize, class: usize },
    #[error("class {class} out of range for {n_classes} classes")]
    ClassOutOfRange { class: usize, n_classes: usize },
    #[error("distance {0} must be positive")]
    NonPositiveDistance(f64),
    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error("output has {found} values, expected {expected}")]
    Shape { found: usize, expected: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub class_id: usize,
    pub direction: Direction,
    pub distance: f64,
}

impl Event {
    pub fn position(&self) -> Vec3 {
        sph_to_cart(self.direction).scale(self.distance)
    }
}

/// Events active in one 100 ms label frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameEvents {
    pub frame_index: usize,
    pub entries: Vec<Event>,
}

impl FrameEvents {
    pub fn new(frame_index: usize) -> Self {
        Self {
            frame_index,
            entries: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn by_class(&self, class_id: usize) -> Option<&Event> {
        self.entries.iter().find(|e| e.class_id == class_id)
    }
}

/// Network output for one frame: per-class activity and per-class position.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFrameOutput {
    pub sed: Vec<f64>,
    /// `C x 3`, row-major.
    pub sce: Vec<f64>,
}

impl ModelFrameOutput {
    pub fn n_classes(&self) -> usize {
        self.sed.len()
    }
}

/// Class-wise training targets of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTargets {
    pub activity: Vec<f64>,
    pub coords: Vec<f64>,
}

pub fn encode(events: &FrameEvents, n_classes: usize) -> Result<FrameTargets, CodecError> {
    let mut activity = vec![0.0; n_classes];
    let mut coords = vec![0.0; 3 * n_classes];
    for e in &events.entries {
        if e.class_id >= n_classes {
            return Err(CodecError::ClassOutOfRange {
                class: e.class_id,
                n_classes,
            });
        }
        if !(e.distance > 0.0) {
            return Err(CodecError::NonPositiveDistance(e.distance));
        }
        if activity[e.class_id] != 0.0 {
            return Err(CodecError::DuplicateClass {
                frame: events.frame_index,
                class: e.class_id,
            });
        }
        activity[e.class_id] = 1.0;
        coords[3 * e.class_id..3 * e.class_id + 3].copy_from_slice(&e.position().to_array());
    }
    Ok(FrameTargets { activity, coords })
}

/// A class is reported when its activity reaches `sed_threshold` and its
/// vector is long enough to carry a direction.
pub fn decode(
    out: &ModelFrameOutput,
    frame_index: usize,
    sed_threshold: f64,
) -> Result<FrameEvents, CodecError> {
    let c = out.sed.len();
    if out.sce.len() != 3 * c {
        return Err(CodecError::Shape {
            found: out.sce.len(),
            expected: 3 * c,
        });
    }
    let mut frame = FrameEvents::new(frame_index);
    for class_id in 0..c {
        if !(out.sed[class_id] >= sed_threshold) {
            continue;
        }
        let v = Vec3::from_slice(&out.sce[3 * class_id..3 * class_id + 3]);
        if !(v.norm() >= MIN_DECODABLE_NORM) {
            continue;
        }
        let (direction, distance) = cart_to_sph(v)?;
        frame.entries.push(Event {
            class_id,
            direction,
            distance,
        });
    }
    Ok(frame)
}

/// Dense per-frame targets for a label sequence of `n_frames` frames:
/// activity `n_frames x C`, coordinates `n_frames x C x 3`.
pub fn encode_sequence(
    frames: &[FrameEvents],
    n_frames: usize,
    n_classes: usize,
) -> Result<(Vec<f64>, Vec<f64>), CodecError> {
    let mut activity = vec![0.0; n_frames * n_classes];
    let mut coords = vec![0.0; n_frames * n_classes * 3];
    for f in frames.iter().filter(|f| f.frame_index < n_frames) {
        let t = encode(f, n_classes)?;
        let i = f.frame_index;
        activity[i * n_classes..(i + 1) * n_classes].copy_from_slice(&t.activity);
        coords[i * n_classes * 3..(i + 1) * n_classes * 3].copy_from_slice(&t.coords);
    }
    Ok((activity, coords))
}

/// Expands a sparse frame list into exactly `n_frames` frames; frames past
/// the end are dropped.
pub fn densify(frames: &[FrameEvents], n_frames: usize) -> Vec<FrameEvents> {
    let mut dense: Vec<FrameEvents> = (0..n_frames).map(FrameEvents::new).collect();
    for f in frames.iter().filter(|f| f.frame_index < n_frames) {
        dense[f.frame_index].entries.extend(f.entries.iter().copied());
    }
    dense
}

pub fn to_csv(frames: &[FrameEvents]) -> String {
    let mut s = String::new();
    for f in frames {
        for e in &f.entries {
            // `{}` on f64 prints the shortest string that parses back exactly
            let _ = writeln!(
                s,
                "{},{},0,{},{},{}",
                f.frame_index,
                e.class_id,
                e.direction.azimuth(),
                e.direction.elevation(),
                e.distance
            );
        }
    }
    s
}

/// Parses label rows into frames sorted by index. Blank lines and lines
/// starting with `#` are skipped, as is a leading header row.
pub fn parse_csv(text: &str) -> Result<Vec<FrameEvents>, CodecError> {
    let mut frames: std::collections::BTreeMap<usize, FrameEvents> = Default::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if i == 0 && line.starts_with(|c: char| c.is_ascii_alphabetic()) {
            continue;
        }
        let err = |msg: String| CodecError::Csv { line: i + 1, msg };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", fields.len())));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| err(format!("{s:?}: {e}")));
        let real = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}")));
        let frame_index = int(fields[0])?;
        let class_id = int(fields[1])?;
        let _source = int(fields[2])?;
        let direction = Direction::new(real(fields[3])?, real(fields[4])?)
            .map_err(|e| err(e.to_string()))?;
        let distance = real(fields[5])?;
        if !(distance > 0.0) {
            return Err(err(format!("distance {distance} must be positive")));
        }
        let frame = frames
            .entry(frame_index)
            .or_insert_with(|| FrameEvents::new(frame_index));
        if frame.by_class(class_id).is_some() {
            return Err(CodecError::DuplicateClass {
                frame: frame_index,
                class: class_id,
            });
        }
        frame.entries.push(Event {
            class_id,
            direction,
            distance,
        });
    }
    Ok(frames.into_values().collect())
}

pub fn write_csv(frames: &[FrameEvents], path: impl AsRef<Path>) -> Result<(), CodecError> {
    fs::write(path, to_csv(frames))?;
    Ok(())
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<FrameEvents>, CodecError> {
    parse_csv(&fs::read_to_string(path)?)
}
