//! Spatial augmentation by exact channel and pixel permutations.
//!
//! A transform optionally reflects azimuth (`az -> -az`), then rotates by a
//! multiple of 90 degrees, then optionally negates elevation. On FOA audio
//! this is a signed permutation of the X/Y channels plus a sign on Z; on
//! equirectangular frames it is a mirror, a circular column shift and a
//! vertical mirror.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::audio::{FoaClip, X, Y, Z};
use crate::codec::{Event, FrameEvents};
use crate::features::{AUDIO_CHANNELS, VISUAL_GRID};
use crate::geom::{wrap_azimuth, Direction, Vec3};
use crate::toynet::Sample;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("frame is {width}x{height}; equirectangular frames need width = 2 * height")]
    BadAspect { width: usize, height: usize },
    #[error("transform id {0} is outside 0..8")]
    InvalidTransform(u32),
    #[error("ppm: {0}")]
    Ppm(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SpatialTransform {
    /// Azimuth rotation in quarter turns (0..4).
    pub quarter_turns: u8,
    pub elevation_flip: bool,
    /// Mirror azimuth before rotating. Not part of the canonical set.
    pub reflection: bool,
}

impl SpatialTransform {
    pub const IDENTITY: Self = Self {
        quarter_turns: 0,
        elevation_flip: false,
        reflection: false,
    };

    /// Canonical transform `id` in `0..8`: rotation `(id % 4) * 90` degrees,
    /// elevation flip when `id >= 4`.
    pub fn canonical(id: u32) -> Self {
        Self {
            quarter_turns: (id % 4) as u8,
            elevation_flip: id % 8 >= 4,
            reflection: false,
        }
    }

    pub fn from_id(id: u32) -> Result<Self, AugmentError> {
        if id >= 8 {
            return Err(AugmentError::InvalidTransform(id));
        }
        Ok(Self::canonical(id))
    }

    /// Inverse of [`SpatialTransform::canonical`] for transforms without reflection.
    pub fn id(&self) -> Option<u32> {
        (!self.reflection).then(|| self.quarter_turns as u32 + 4 * self.elevation_flip as u32)
    }

    pub fn all_canonical() -> impl Iterator<Item = Self> {
        (0..8).map(Self::canonical)
    }

    pub fn rotation_deg(&self) -> f64 {
        90.0 * self.quarter_turns as f64
    }

    /// The transform equal to applying `self` first and `then` second.
    pub fn then(self, then: Self) -> Self {
        let k1 = self.quarter_turns as i32;
        let k2 = then.quarter_turns as i32;
        let k = if then.reflection { k2 - k1 } else { k2 + k1 };
        Self {
            quarter_turns: k.rem_euclid(4) as u8,
            elevation_flip: self.elevation_flip ^ then.elevation_flip,
            reflection: self.reflection ^ then.reflection,
        }
    }

    pub fn inverse(self) -> Self {
        let k = if self.reflection {
            self.quarter_turns as i32
        } else {
            -(self.quarter_turns as i32)
        };
        Self {
            quarter_turns: k.rem_euclid(4) as u8,
            ..self
        }
    }

    /// For the transformed x and y components: which source component
    /// (0 = x, 1 = y) they copy and whether it is negated.
    fn xy_map(&self) -> [(usize, bool); 2] {
        let r = self.reflection;
        match self.quarter_turns % 4 {
            0 => [(0, false), (1, r)],
            1 => [(1, !r), (0, false)],
            2 => [(0, true), (1, !r)],
            _ => [(1, r), (0, true)],
        }
    }

    pub fn apply_vec(&self, v: Vec3) -> Vec3 {
        let src = [v.x, v.y];
        let pick = |(i, neg): (usize, bool)| if neg { -src[i] } else { src[i] };
        let [mx, my] = self.xy_map();
        Vec3::new(pick(mx), pick(my), if self.elevation_flip { -v.z } else { v.z })
    }

    pub fn apply_direction(&self, d: Direction) -> Direction {
        let az = if self.reflection { -d.azimuth() } else { d.azimuth() };
        let el = if self.elevation_flip { -d.elevation() } else { d.elevation() };
        Direction::new(wrap_azimuth(az + self.rotation_deg()), el).expect("elevation stays in range")
    }
}

fn signed_copy(src: &[f64], neg: bool) -> Vec<f64> {
    if neg {
        src.iter().map(|v| -v).collect()
    } else {
        src.to_vec()
    }
}

/// Channel-swap augmentation of an FOA clip (ACN order W, Y, Z, X).
pub fn acs_audio(clip: &FoaClip, t: SpatialTransform) -> FoaClip {
    let ch = clip.channels();
    let xy = [&ch[X], &ch[Y]];
    let [mx, my] = t.xy_map();
    let mut out = clip.clone();
    let dst = out.channels_mut();
    dst[X] = signed_copy(xy[mx.0], mx.1);
    dst[Y] = signed_copy(xy[my.0], my.1);
    dst[Z] = signed_copy(&ch[Z], t.elevation_flip);
    out
}

pub fn acs_labels(events: &FrameEvents, t: SpatialTransform) -> FrameEvents {
    FrameEvents {
        frame_index: events.frame_index,
        entries: events
            .entries
            .iter()
            .map(|e| Event {
                direction: t.apply_direction(e.direction),
                ..*e
            })
            .collect(),
    }
}

/// The transform applied directly to a `7 x T x M` feature stack (log-mel
/// W, Y, Z, X then intensity x, y, z). Log-mel channels are permuted and the
/// intensity vectors undergo the same signed permutation as the audio.
pub fn acs_features(stack: &[f64], t: SpatialTransform) -> Vec<f64> {
    let plane = stack.len() / AUDIO_CHANNELS;
    let ch = |c: usize| &stack[c * plane..(c + 1) * plane];
    let [mx, my] = t.xy_map();
    // log-mel channel of x/y components: X is channel 3, Y is channel 1
    let mel_xy = [3, 1];
    let iv_xy = [4, 5];
    let mut out = Vec::with_capacity(stack.len());
    out.extend_from_slice(ch(0));
    out.extend_from_slice(ch(mel_xy[my.0]));
    out.extend_from_slice(ch(2));
    out.extend_from_slice(ch(mel_xy[mx.0]));
    out.extend(signed_copy(ch(iv_xy[mx.0]), mx.1));
    out.extend(signed_copy(ch(iv_xy[my.0]), my.1));
    out.extend(signed_copy(ch(6), t.elevation_flip));
    out
}

/// Transforms a `T x C x 3` block of Cartesian coordinate targets.
pub fn transform_coords(coords: &[f64], t: SpatialTransform) -> Vec<f64> {
    coords
        .chunks_exact(3)
        .flat_map(|c| t.apply_vec(Vec3::from_slice(c)).to_array())
        .collect()
}

/// Applies the transform consistently to every part of a training clip.
pub fn acs_sample(s: &Sample, t: SpatialTransform) -> Sample {
    Sample {
        audio: acs_features(&s.audio, t),
        n_frames: s.n_frames,
        visual: avps_visual_features(&s.visual, t),
        activity: s.activity.clone(),
        coords: transform_coords(&s.coords, t),
    }
}

/// Number of columns an azimuth rotation moves content left on a grid of
/// `width` columns, rounded half up.
pub fn column_shift(t: SpatialTransform, width: usize) -> usize {
    let exact = width as f64 * t.rotation_deg() / 360.0;
    ((exact + 0.5).floor() as usize) % width
}

/// Source column for destination column `col` of a `width`-wide grid.
fn source_column(col: usize, width: usize, shift: usize, reflect: bool) -> usize {
    let c = (col + shift) % width;
    if reflect {
        width - 1 - c
    } else {
        c
    }
}

/// Row-major grid transform shared by frames and visual maps: `cell` is the
/// number of values per grid position.
fn transform_grid<T: Copy>(data: &[T], width: usize, height: usize, cell: usize, shift: usize, t: SpatialTransform) -> Vec<T> {
    let mut out = Vec::with_capacity(data.len());
    for row in 0..height {
        let src_row = if t.elevation_flip { height - 1 - row } else { row };
        for col in 0..width {
            let src = (src_row * width + source_column(col, width, shift, t.reflection)) * cell;
            out.extend_from_slice(&data[src..src + cell]);
        }
    }
    out
}

/// Transforms a sequence of flattened `7 x 7` maps (row-major, row 0 at the
/// top, column 0 at azimuth 180).
pub fn avps_visual_features(v: &[f64], t: SpatialTransform) -> Vec<f64> {
    let g = VISUAL_GRID;
    let shift = column_shift(t, g);
    v.chunks_exact(g * g)
        .flat_map(|m| transform_grid(m, g, g, 1, shift, t))
        .collect()
}

/// An 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            rgb: vec![0; width * height * 3],
        }
    }

    pub fn pixel(&self, col: usize, row: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn set_pixel(&mut self, col: usize, row: usize, px: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.rgb[i..i + 3].copy_from_slice(&px);
    }
}

/// Pixel-swap augmentation of an equirectangular frame: rotation is a
/// circular shift by `width * rotation / 360` columns, then the elevation
/// flip mirrors rows.
pub fn avps_frame(img: &Image, t: SpatialTransform) -> Result<Image, AugmentError> {
    if img.width != 2 * img.height || img.height == 0 {
        return Err(AugmentError::BadAspect {
            width: img.width,
            height: img.height,
        });
    }
    let shift = column_shift(t, img.width);
    Ok(Image {
        width: img.width,
        height: img.height,
        rgb: transform_grid(&img.rgb, img.width, img.height, 3, shift, t),
    })
}

fn ppm_token(r: &mut impl BufRead) -> Result<String, AugmentError> {
    let mut tok = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        match byte[0] {
            b'#' if tok.is_empty() => {
                let mut skip = Vec::new();
                r.read_until(b'\n', &mut skip)?;
            }
            b if b.is_ascii_whitespace() => {
                if !tok.is_empty() {
                    break;
                }
            }
            b => tok.push(b),
        }
    }
    if tok.is_empty() {
        return Err(AugmentError::Ppm("truncated header".into()));
    }
    String::from_utf8(tok).map_err(|_| AugmentError::Ppm("non-ascii header".into()))
}

/// Reads a binary (P6) PPM with maxval 255.
pub fn read_ppm(reader: impl Read) -> Result<Image, AugmentError> {
    let mut r = BufReader::new(reader);
    if ppm_token(&mut r)? != "P6" {
        return Err(AugmentError::Ppm("not a P6 file".into()));
    }
    let mut num = |what: &str| -> Result<usize, AugmentError> {
        let tok = ppm_token(&mut r)?;
        tok.parse().map_err(|_| AugmentError::Ppm(format!("bad {what} {tok:?}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval != 255 {
        return Err(AugmentError::Ppm(format!("unsupported maxval {maxval}")));
    }
    let mut rgb = vec![0; width * height * 3];
    r.read_exact(&mut rgb)
        .map_err(|_| AugmentError::Ppm("truncated pixel data".into()))?;
    Ok(Image { width, height, rgb })
}

pub fn write_ppm(img: &Image, mut w: impl Write) -> Result<(), AugmentError> {
    write!(w, "P6\n{} {}\n255\n", img.width, img.height)?;
    w.write_all(&img.rgb)?;
    Ok(())
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<Image, AugmentError> {
    read_ppm(std::fs::File::open(path)?)
}

pub fn save_ppm(img: &Image, path: impl AsRef<Path>) -> Result<(), AugmentError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_ppm(img, &mut f)?;
    f.flush()?;
    Ok(())
}
