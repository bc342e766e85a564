//! Parameter serialization: `<base>.manifest` is a text index (name, dtype,
//! shape, byte offset per line) into `<base>.bin`, a concatenation of raw
//! little-endian values. Round trips are bit-exact. A `<base>.meta` sidecar
//! of `key = value` lines carries model/run descriptors.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn manifest_path(base: &Path) -> PathBuf {
    base.with_extension("manifest")
}
fn bin_path(base: &Path) -> PathBuf {
    base.with_extension("bin")
}
fn meta_path(base: &Path) -> PathBuf {
    base.with_extension("meta")
}

fn to_le_bytes<S: Scalar>(v: S) -> Vec<u8> {
    match S::DTYPE {
        "f32" => (v.to_f64() as f32).to_le_bytes().to_vec(),
        _ => v.to_f64().to_le_bytes().to_vec(),
    }
}

fn scalar_width(dtype: &str) -> Result<usize> {
    match dtype {
        "f32" => Ok(4),
        "f64" => Ok(8),
        other => Err(Error::format(format!("unknown dtype '{other}'"))),
    }
}

/// Writes `<base>.manifest` and `<base>.bin` for the named tensors, in the
/// given order. Names must be unique.
pub fn save_tensors<S: Scalar>(base: &Path, named: &[(String, Tensor<S>)]) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for (name, _) in named {
        if !seen.insert(name) {
            return Err(Error::arg(format!("duplicate tensor name '{name}'")));
        }
    }
    if let Some(dir) = base.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut manifest = String::new();
    let mut bin: Vec<u8> = Vec::new();
    for (name, t) in named {
        let offset = bin.len();
        let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        manifest.push_str(&format!(
            "{name} {} {} {offset}\n",
            S::DTYPE,
            shape.join(",")
        ));
        for &v in t.data().iter() {
            bin.extend_from_slice(&to_le_bytes(v));
        }
    }
    fs::write(manifest_path(base), manifest)?;
    let mut f = fs::File::create(bin_path(base))?;
    f.write_all(&bin)?;
    Ok(())
}

/// Reads every entry of a checkpoint whose dtype matches `S`.
pub fn load_tensors<S: Scalar>(base: &Path) -> Result<Vec<(String, Tensor<S>)>> {
    let manifest = fs::read_to_string(manifest_path(base))?;
    let bin = fs::read(bin_path(base))?;
    let mut out = Vec::new();
    for (lineno, line) in manifest.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(Error::format(format!(
                "manifest line {}: want 'name dtype shape offset'",
                lineno + 1
            )));
        }
        let (name, dtype, shape_s, offset_s) = (parts[0], parts[1], parts[2], parts[3]);
        if dtype != S::DTYPE {
            return Err(Error::format(format!(
                "tensor '{name}' stored as {dtype}, loader expects {}",
                S::DTYPE
            )));
        }
        let shape: Vec<usize> = shape_s
            .split(',')
            .map(|d| {
                d.parse()
                    .map_err(|_| Error::format(format!("bad extent '{d}' for '{name}'")))
            })
            .collect::<Result<_>>()?;
        let offset: usize = offset_s
            .parse()
            .map_err(|_| Error::format(format!("bad offset for '{name}'")))?;
        let n: usize = shape.iter().product();
        let width = scalar_width(dtype)?;
        let end = offset + n * width;
        if end > bin.len() {
            return Err(Error::format(format!(
                "tensor '{name}' overruns buffer ({end} > {})",
                bin.len()
            )));
        }
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let at = offset + i * width;
            let v = match width {
                4 => f32::from_le_bytes(bin[at..at + 4].try_into().unwrap()) as f64,
                _ => f64::from_le_bytes(bin[at..at + 8].try_into().unwrap()),
            };
            data.push(S::from_f64(v));
        }
        out.push((name.to_string(), Tensor::from_vec(&shape, data)?));
    }
    Ok(out)
}

/// Copies checkpoint values into existing parameter tensors, matched by
/// name. Every parameter must be present with an identical shape.
pub fn load_into<S: Scalar>(base: &Path, params: &[(String, Tensor<S>)]) -> Result<()> {
    let loaded = load_tensors::<S>(base)?;
    let by_name: BTreeMap<&str, &Tensor<S>> =
        loaded.iter().map(|(n, t)| (n.as_str(), t)).collect();
    for (name, t) in params {
        let src = by_name.get(name.as_str()).ok_or_else(|| {
            Error::format(format!("checkpoint is missing tensor '{name}'"))
        })?;
        if src.shape() != t.shape() {
            return Err(Error::shape(format!(
                "checkpoint tensor '{name}' has shape {:?}, model wants {:?}",
                src.shape(),
                t.shape()
            )));
        }
        t.data_mut().copy_from_slice(&src.data());
    }
    Ok(())
}

/// Writes the `key = value` sidecar; keys emitted in the given order.
pub fn save_meta(base: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut text = String::new();
    for (k, v) in entries {
        text.push_str(&format!("{k} = {v}\n"));
    }
    fs::write(meta_path(base), text)?;
    Ok(())
}

pub fn load_meta(base: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(meta_path(base))?;
    let mut out = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(format!("bad meta line '{line}'")))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// True if both manifest and buffer exist for `base`.
pub fn exists(base: &Path) -> bool {
    manifest_path(base).exists() && bin_path(base).exists()
}
