//! Network checkpoints: a tensor container with one entry per parameter (plus
//! batch-norm running statistics) and a plain-text manifest next to it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::{EncoderConfig, NormKind, StageConfig};
use super::network::{Norm, YNetwork};
use crate::autodiff::ParameterSet;
use crate::data::container::{self, Entry};
use crate::error::{Error, Result};
use crate::tensor::DType;

pub fn manifest_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("manifest")
}

fn running_stats(net: &YNetwork) -> Vec<(String, &[f64])> {
    let mut out = Vec::new();
    for (prefix, enc) in [("source", &net.source), ("target", &net.target)] {
        for (i, s) in enc.stages.iter().enumerate() {
            if let Norm::Batch(st) = &s.norm {
                out.push((format!("{prefix}.norm{i}.running_mean"), st.running_mean.as_slice()));
                out.push((format!("{prefix}.norm{i}.running_var"), st.running_var.as_slice()));
            }
        }
    }
    out
}

fn format_stages(stages: &[StageConfig]) -> String {
    stages
        .iter()
        .map(|s| format!("{}x{}s{}", s.kernel, s.channels, s.stride))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn parse_stages(text: &str) -> Result<Vec<StageConfig>> {
    text.split(',')
        .map(|tok| {
            let tok = tok.trim();
            let bad = || Error::invalid(format!("bad stage '{tok}' (expected KxCsS, e.g. 3x16s2)"));
            let (k, rest) = tok.split_once('x').ok_or_else(bad)?;
            let (c, s) = rest.split_once('s').ok_or_else(bad)?;
            Ok(StageConfig {
                kernel: k.parse().map_err(|_| bad())?,
                channels: c.parse().map_err(|_| bad())?,
                stride: s.parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

pub fn manifest_text(net: &YNetwork) -> String {
    let c = &net.config;
    let mut s = String::new();
    let _ = writeln!(s, "# network checkpoint manifest");
    let _ = writeln!(s, "classes = {}", net.classes);
    let _ = writeln!(s, "dtype = {}", net.dtype);
    let _ = writeln!(s, "in_channels = {}", c.in_channels);
    let _ = writeln!(s, "height = {}", c.height);
    let _ = writeln!(s, "width = {}", c.width);
    let _ = writeln!(s, "stages = {}", format_stages(&c.stages));
    let _ = writeln!(s, "norm = {}", c.norm);
    let _ = writeln!(s, "embed_dim = {}", c.embed_dim);
    net.for_each_param(&mut |p| {
        let dims: Vec<String> = p.value().shape().iter().map(|d| d.to_string()).collect();
        let _ = writeln!(s, "param {} = {}", p.name(), dims.join(","));
    });
    for (name, v) in running_stats(net) {
        let _ = writeln!(s, "buffer {} = {}", name, v.len());
    }
    s
}

pub fn save_checkpoint(net: &YNetwork, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut entries = Vec::new();
    net.for_each_param(&mut |p| entries.push(Entry::from_tensor(p.name(), p.value())));
    for (name, v) in running_stats(net) {
        entries.push(Entry {
            name,
            shape: vec![v.len()],
            data: container::TensorData::F64(v.to_vec()),
        });
    }
    container::write_container(path, &entries)?;
    let mpath = manifest_path(path);
    std::fs::write(&mpath, manifest_text(net)).map_err(|e| Error::io(format!("writing {}", mpath.display()), e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<YNetwork> {
    let path = path.as_ref();
    let mpath = manifest_path(path);
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(format!("reading {}", mpath.display()), e))?;
    let mut kv = BTreeMap::new();
    let mut params = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("bad manifest line '{line}'")))?;
        let (k, v) = (k.trim(), v.trim());
        if let Some(name) = k.strip_prefix("param ") {
            params.push(name.trim().to_string());
        } else if !k.starts_with("buffer ") {
            kv.insert(k.to_string(), v.to_string());
        }
    }
    let get = |k: &str| {
        kv.get(k)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("manifest {} lacks '{k}'", mpath.display())))
    };
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::invalid(format!("manifest field '{k}' is not an integer")))
    };
    let config = EncoderConfig {
        in_channels: num("in_channels")?,
        height: num("height")?,
        width: num("width")?,
        stages: parse_stages(&get("stages")?)?,
        norm: NormKind::parse(&get("norm")?)?,
        embed_dim: num("embed_dim")?,
    };
    let dtype = DType::parse(&get("dtype")?)?;
    let mut net = YNetwork::init(config, num("classes")?, dtype, 0, false)?;
    if net.param_names() != params {
        return Err(Error::invalid(format!(
            "manifest {} parameter list does not match its architecture",
            mpath.display()
        )));
    }

    let entries = container::read_container(path)?;
    let mut result = Ok(());
    net.for_each_param_mut(&mut |p| {
        let loaded = container::find(&entries, p.name())
            .and_then(|e| e.to_tensor())
            .and_then(|t| p.set_value(t));
        if let Err(e) = loaded {
            if result.is_ok() {
                result = Err(e);
            }
        }
    });
    result?;
    for (prefix, enc) in [("source", &mut net.source), ("target", &mut net.target)] {
        for (i, s) in enc.stages.iter_mut().enumerate() {
            if let Norm::Batch(st) = &mut s.norm {
                for (suffix, buf) in [("running_mean", &mut st.running_mean), ("running_var", &mut st.running_var)] {
                    let e = container::find(&entries, &format!("{prefix}.norm{i}.{suffix}"))?;
                    let t = e.to_tensor()?;
                    if t.numel() != buf.len() {
                        return Err(Error::shape("load_checkpoint", format!("buffer '{}' has wrong length", e.name)));
                    }
                    *buf = t.into_data();
                }
            }
        }
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_network() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.tnsr");
        let cfg = EncoderConfig::desk_scale(1, 16, NormKind::Batch);
        let mut net = YNetwork::init(cfg, 4, DType::F32, 3, false).unwrap();
        if let Norm::Batch(st) = &mut net.target.stages[1].norm {
            st.running_mean[3] = 0.25;
            st.running_var[0] = 4.0;
        }
        save_checkpoint(&net, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, net);
        let manifest = std::fs::read_to_string(manifest_path(&path)).unwrap();
        assert!(manifest.contains("param source.conv0.weight = 16,1,3,3"));
        assert!(manifest.contains("stages = 3x16s2,3x32s2,3x64s2"));
    }

    #[test]
    fn stage_syntax() {
        let s = parse_stages("3x16s2, 5x8s1").unwrap();
        assert_eq!(s[1], StageConfig { kernel: 5, channels: 8, stride: 1 });
        assert!(parse_stages("3-16").is_err());
    }
}
