//! Model checkpoints: a directory with `config.txt`, a `manifest.txt` listing
//! `name<TAB>dims<TAB>file` per tensor, and one tensor file per entry.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::model::ToyNet;
use super::{ToyNetConfig, ToyNetError};
use crate::nn::Parameterized;
use crate::tensor_store::{self, FeatureTensor};

pub const MANIFEST: &str = "manifest.txt";
pub const CONFIG: &str = "config.txt";

fn dims_to_string(dims: &[usize]) -> String {
    dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

pub fn save(model: &ToyNet, dir: impl AsRef<Path>) -> Result<(), ToyNetError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG), model.cfg.to_kv())?;
    let mut manifest = String::new();
    let mut result = Ok(());
    model.visit(&mut |name, dims, values| {
        if result.is_err() {
            return;
        }
        let file = format!("{name}.tnsr");
        let _ = writeln!(manifest, "{name}\t{}\t{file}", dims_to_string(dims));
        result = FeatureTensor::from_f64(dims.to_vec(), values.to_vec())
            .and_then(|t| tensor_store::save(&t, dir.join(&file)));
    });
    result?;
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

pub fn load(dir: impl AsRef<Path>) -> Result<ToyNet, ToyNetError> {
    let dir = dir.as_ref();
    let cfg = ToyNetConfig::from_kv(&fs::read_to_string(dir.join(CONFIG))?)?;
    let mut entries = HashMap::new();
    for (i, line) in fs::read_to_string(dir.join(MANIFEST))?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(ToyNetError::Checkpoint(format!("manifest line {}: {line:?}", i + 1)));
        }
        entries.insert(parts[0].to_string(), (parts[1].to_string(), parts[2].to_string()));
    }
    let mut model = ToyNet::new(cfg)?;
    let mut expected = Vec::new();
    model.visit(&mut |name, dims, _| expected.push((name.to_string(), dims_to_string(dims))));
    let mut loaded = HashMap::new();
    for (name, dims) in expected {
        let (file_dims, file) = entries
            .remove(&name)
            .ok_or_else(|| ToyNetError::Checkpoint(format!("missing tensor {name}")))?;
        if file_dims != dims {
            return Err(ToyNetError::Checkpoint(format!("{name}: shape {file_dims}, expected {dims}")));
        }
        let t = tensor_store::load(dir.join(&file))?;
        if dims_to_string(t.shape()) != dims {
            return Err(ToyNetError::Checkpoint(format!("{file}: stored shape {:?}", t.shape())));
        }
        loaded.insert(name, t.into_f64());
    }
    if let Some(extra) = entries.keys().next() {
        return Err(ToyNetError::Checkpoint(format!("unexpected tensor {extra}")));
    }
    model.visit_mut(&mut |name, v| v.copy_from_slice(&loaded[name]));
    Ok(model)
}
