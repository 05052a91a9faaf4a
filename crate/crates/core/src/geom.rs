//! Spherical/Cartesian conversions, angular distances and the equirectangular
//! pixel <-> angle mapping.
//!
//! Axis convention: x points to the front, y to the left, z up. Azimuth is
//! measured counter-clockwise from the front in degrees and lives in the
//! half-open interval (-180, 180]; elevation is in [-90, 90].

use thiserror::Error;

/// Default equirectangular frame size of the panoramic camera.
pub const FRAME_WIDTH: usize = 1920;
pub const FRAME_HEIGHT: usize = 960;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("zero-length vector has no direction")]
    ZeroVector,
    #[error("elevation {0} outside [-90, 90]")]
    ElevationOutOfRange(f64),
    #[error("pixel ({col}, {row}) outside {width}x{height} frame")]
    OutOfBounds {
        col: usize,
        row: usize,
        width: usize,
        height: usize,
    },
}

/// Wraps an azimuth in degrees into (-180, 180].
pub fn wrap_azimuth(az: f64) -> f64 {
    let r = az.rem_euclid(360.0);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    azimuth: f64,
    elevation: f64,
}

impl Direction {
    /// Builds a direction, wrapping the azimuth into its canonical interval.
    pub fn new(azimuth: f64, elevation: f64) -> Result<Self, GeomError> {
        if !(-90.0..=90.0).contains(&elevation) {
            return Err(GeomError::ElevationOutOfRange(elevation));
        }
        Ok(Self {
            azimuth: wrap_azimuth(azimuth),
            elevation,
        })
    }

    pub fn azimuth(&self) -> f64 {
        self.azimuth
    }

    pub fn elevation(&self) -> f64 {
        self.elevation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        // hypot keeps full precision for very small or large components
        self.x.hypot(self.y).hypot(self.z)
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

/// Unit vector pointing along `d`.
pub fn sph_to_cart(d: Direction) -> Vec3 {
    let (saz, caz) = d.azimuth.to_radians().sin_cos();
    let (sel, cel) = d.elevation.to_radians().sin_cos();
    Vec3::new(cel * caz, cel * saz, sel)
}

/// Direction and length of `v`. On the poles the azimuth is reported as 0.
pub fn cart_to_sph(v: Vec3) -> Result<(Direction, f64), GeomError> {
    let len = v.norm();
    if !(len >= 1e-12) {
        return Err(GeomError::ZeroVector);
    }
    let horiz = v.x.hypot(v.y);
    let azimuth = if horiz == 0.0 {
        0.0
    } else {
        wrap_azimuth(v.y.atan2(v.x).to_degrees())
    };
    let elevation = v.z.atan2(horiz).to_degrees().clamp(-90.0, 90.0);
    Ok((
        Direction {
            azimuth,
            elevation,
        },
        len,
    ))
}

/// Great-circle angle between two non-zero vectors, in degrees within [0, 180].
///
/// Uses `atan2(|u x v|, u . v)`, which stays accurate for nearly parallel
/// vectors where the arccos of the dot product loses half its digits.
pub fn angular_distance_deg(u: Vec3, v: Vec3) -> Result<f64, GeomError> {
    let (nu, nv) = (u.norm(), v.norm());
    if !(nu >= 1e-12 && nv >= 1e-12) {
        return Err(GeomError::ZeroVector);
    }
    let (u, v) = (u.scale(1.0 / nu), v.scale(1.0 / nv));
    let angle = u.cross(v).norm().atan2(u.dot(v)).to_degrees();
    Ok(angle.clamp(0.0, 180.0))
}

/// Angle of a pixel center in an equirectangular frame.
///
/// Column 0 sits next to azimuth +180 and row 0 next to elevation +90.
pub fn pixel_to_angle(
    col: usize,
    row: usize,
    width: usize,
    height: usize,
) -> Result<Direction, GeomError> {
    if col >= width || row >= height {
        return Err(GeomError::OutOfBounds {
            col,
            row,
            width,
            height,
        });
    }
    let az = 180.0 - 360.0 * (col as f64 + 0.5) / width as f64;
    let el = 90.0 - 180.0 * (row as f64 + 0.5) / height as f64;
    Ok(Direction {
        azimuth: wrap_azimuth(az),
        elevation: el,
    })
}

/// Continuous (col, row) coordinate of a direction, where integer values are
/// pixel centers.
pub fn angle_to_pixel_continuous(d: Direction, width: usize, height: usize) -> (f64, f64) {
    let col = (180.0 - d.azimuth) / 360.0 * width as f64 - 0.5;
    let row = (90.0 - d.elevation) / 180.0 * height as f64 - 0.5;
    (col, row)
}

/// Pixel whose center is nearest to `d`. Columns wrap around horizontally.
pub fn angle_to_pixel(d: Direction, width: usize, height: usize) -> (usize, usize) {
    let (c, r) = angle_to_pixel_continuous(d, width, height);
    let col = ((c + 0.5).floor() as i64).rem_euclid(width as i64) as usize;
    let row = ((r + 0.5).floor() as i64).clamp(0, height as i64 - 1) as usize;
    (col, row)
}
