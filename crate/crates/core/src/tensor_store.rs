//! Shaped real arrays and their on-disk format.
//!
//! Layout of a tensor file, all integers little-endian:
//!
//! ```text
//! offset  size     field
//! 0       8        magic "SELDTNSR"
//! 8       1        dtype code (0 = f32, 1 = f64)
//! 9       1        rank r
//! 10      8 * r    dimensions as u64
//! ..      n * w    row-major payload, w = 4 or 8 bytes per element
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"SELDTNSR";

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed tensor file: {0}")]
    Format(String),
    #[error("shape {shape:?} holds {expected} elements but data has {actual}")]
    Shape {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }
}

/// Row-major real array with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    shape: Vec<usize>,
    data: TensorData,
}

impl FeatureTensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || expected != data.len() {
            return Err(TensorError::Shape {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn from_f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        Self::new(shape, TensorData::F64(data))
    }

    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        Self::new(shape, TensorData::F32(data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Values widened to f64, copying.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }

    /// Borrow the payload when it is already f64.
    pub fn as_f64(&self) -> Option<&[f64]> {
        match &self.data {
            TensorData::F64(v) => Some(v),
            TensorData::F32(_) => None,
        }
    }

    pub fn into_f64(self) -> Vec<f64> {
        match self.data {
            TensorData::F64(v) => v,
            TensorData::F32(v) => v.into_iter().map(|x| x as f64).collect(),
        }
    }

    /// Narrow to f32 storage.
    pub fn to_f32(&self) -> FeatureTensor {
        let data = match &self.data {
            TensorData::F32(v) => v.clone(),
            TensorData::F64(v) => v.iter().map(|&x| x as f32).collect(),
        };
        FeatureTensor {
            shape: self.shape.clone(),
            data: TensorData::F32(data),
        }
    }

    pub fn all_finite(&self) -> bool {
        match &self.data {
            TensorData::F32(v) => v.iter().all(|x| x.is_finite()),
            TensorData::F64(v) => v.iter().all(|x| x.is_finite()),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let dtype = self.dtype();
        let mut out =
            Vec::with_capacity(10 + 8 * self.shape.len() + dtype.width() * self.data.len());
        out.extend_from_slice(MAGIC);
        out.push(dtype as u8);
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorError> {
        let fmt = |m: &str| TensorError::Format(m.to_string());
        if bytes.len() < 10 {
            return Err(fmt("file shorter than header"));
        }
        if &bytes[..8] != MAGIC {
            return Err(fmt("bad magic"));
        }
        let dtype = match bytes[8] {
            0 => DType::F32,
            1 => DType::F64,
            c => return Err(TensorError::Format(format!("unknown dtype code {c}"))),
        };
        let rank = bytes[9] as usize;
        if rank == 0 {
            return Err(fmt("rank 0"));
        }
        let header = 10 + 8 * rank;
        if bytes.len() < header {
            return Err(fmt("truncated shape"));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut count: usize = 1;
        for chunk in bytes[10..header].chunks_exact(8) {
            let d = u64::from_le_bytes(chunk.try_into().unwrap());
            let d = usize::try_from(d).map_err(|_| fmt("dimension overflow"))?;
            if d == 0 {
                return Err(fmt("zero dimension"));
            }
            count = count.checked_mul(d).ok_or_else(|| fmt("shape overflow"))?;
            shape.push(d);
        }
        let payload = &bytes[header..];
        let need = count
            .checked_mul(dtype.width())
            .ok_or_else(|| fmt("shape overflow"))?;
        if payload.len() != need {
            return Err(TensorError::Format(format!(
                "payload is {} bytes, shape {:?} needs {}",
                payload.len(),
                shape,
                need
            )));
        }
        let data = match dtype {
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::F64 => TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        Ok(Self { shape, data })
    }
}

pub fn save(t: &FeatureTensor, path: impl AsRef<Path>) -> Result<(), TensorError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&t.to_bytes())?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<FeatureTensor, TensorError> {
    FeatureTensor::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = FeatureTensor::from_f32(vec![2, 3], vec![1.0; 6]).unwrap();
        let b = t.to_bytes();
        assert_eq!(&b[..8], b"SELDTNSR");
        assert_eq!(b[8], 0);
        assert_eq!(b[9], 2);
        assert_eq!(&b[10..18], &2u64.to_le_bytes());
        assert_eq!(&b[18..26], &3u64.to_le_bytes());
        assert_eq!(&b[26..30], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 26 + 24);
    }

    #[test]
    fn file_round_trip_feature_stack() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feat.tnsr");
        let data: Vec<f32> = (0..7 * 500 * 64).map(|i| (i as f32 * 0.37).sin()).collect();
        let t = FeatureTensor::from_f32(vec![7, 500, 64], data).unwrap();
        save(&t, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes, t.to_bytes());
        assert_eq!(load(&path).unwrap(), t);
    }

    #[test]
    fn rejects_truncated_and_foreign_files() {
        let t = FeatureTensor::from_f64(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = t.to_bytes();
        assert!(matches!(
            FeatureTensor::from_bytes(&b[..b.len() - 3]),
            Err(TensorError::Format(_))
        ));
        assert!(matches!(
            FeatureTensor::from_bytes(&b[..12]),
            Err(TensorError::Format(_))
        ));
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(
            FeatureTensor::from_bytes(&bad),
            Err(TensorError::Format(_))
        ));
        let mut bad = b;
        bad[8] = 7;
        assert!(matches!(
            FeatureTensor::from_bytes(&bad),
            Err(TensorError::Format(_))
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load("/nonexistent/dir/x.tnsr"),
            Err(TensorError::Io(_))
        ));
    }

    #[test]
    fn shape_must_match_data() {
        assert!(FeatureTensor::from_f64(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(FeatureTensor::from_f64(vec![0], vec![]).is_err());
    }

    fn arb_tensor() -> impl Strategy<Value = FeatureTensor> {
        (prop::collection::vec(1usize..6, 1..=4), any::<bool>()).prop_flat_map(|(shape, wide)| {
            let n: usize = shape.iter().product();
            if wide {
                prop::collection::vec(any::<f64>(), n)
                    .prop_map(move |v| FeatureTensor::from_f64(shape.clone(), v).unwrap())
                    .boxed()
            } else {
                prop::collection::vec(any::<f32>(), n)
                    .prop_map(move |v| FeatureTensor::from_f32(shape.clone(), v).unwrap())
                    .boxed()
            }
        })
    }

    proptest! {
        #[test]
        fn bitwise_round_trip(t in arb_tensor()) {
            let bytes = t.to_bytes();
            let back = FeatureTensor::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
            prop_assert_eq!(back.shape(), t.shape());
        }
    }
}
