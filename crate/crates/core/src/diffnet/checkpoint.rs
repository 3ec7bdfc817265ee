//! `EANN1` binary checkpoints with a plain-text architecture manifest.
//!
//! Binary layout: the magic `EANN1`, then for every parameter
//! `u32 name_len | name | u32 rank | u64 dims[rank] | f64 values[..]`,
//! all little-endian. The manifest lives next to the checkpoint with an
//! `.arch` suffix and lists the network name, its layers and the frozen flag.

use std::fs;
use std::path::{Path, PathBuf};

use super::layers::Network;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"EANN1";

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".arch");
    PathBuf::from(p)
}

pub fn encode(net: &Network) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for p in net.params() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn manifest(net: &Network) -> String {
    let mut s = format!("network = {}\n", net.name);
    for layer in net.architecture() {
        s.push_str(&format!("layer = {layer}\n"));
    }
    s.push_str(&format!("frozen = {}\n", net.is_frozen()));
    s
}

pub fn save_network(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(net)).map_err(|e| Error::io(path, e))?;
    let arch = manifest_path(path);
    fs::write(&arch, manifest(net)).map_err(|e| Error::io(&arch, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Decode parameters into `net`, validating names and shapes.
pub fn decode_into(net: &mut Network, bytes: &[u8]) -> Result<()> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("bad magic, expected EANN1".into()));
    }
    let mut loaded: Vec<(String, Tensor)> = Vec::new();
    while !r.done() {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        if rank > 4 {
            return Err(Error::Checkpoint(format!(
                "parameter {name} has rank {rank}"
            )));
        }
        let dims = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count: usize = dims.iter().product();
        let data = (0..count)
            .map(|_| r.u64().map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        loaded.push((name, Tensor::from_vec(&dims, data)?));
    }
    if loaded.len() != net.params().len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} parameters, network {} expects {}",
            loaded.len(),
            net.name,
            net.params().len()
        )));
    }
    for ((name, value), p) in loaded.iter().zip(net.params()) {
        if *name != p.name {
            return Err(Error::Checkpoint(format!(
                "expected parameter {}, found {name}",
                p.name
            )));
        }
        if value.shape() != p.value.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {name}: shape {:?} does not match network shape {:?}",
                value.shape(),
                p.value.shape()
            )));
        }
    }
    for ((_, value), p) in loaded.into_iter().zip(net.params_mut()) {
        p.value = value;
        p.zero_grad();
        p.momentum.fill(0.0);
    }
    Ok(())
}

/// Load a checkpoint into a network built with the matching architecture.
/// The manifest must match the network layer for layer; its frozen flag is
/// applied to the loaded network.
pub fn load_network(net: &mut Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let arch_path = manifest_path(path);
    let text = fs::read_to_string(&arch_path).map_err(|e| Error::io(&arch_path, e))?;
    let mut name = None;
    let mut layers = Vec::new();
    let mut frozen = false;
    for (i, line) in text.lines().enumerate() {
        let Some((k, v)) = line.split_once('=').map(|(k, v)| (k.trim(), v.trim())) else {
            continue;
        };
        match k {
            "network" => name = Some(v.to_string()),
            "layer" => layers.push(v.to_string()),
            "frozen" => frozen = v == "true",
            other => {
                return Err(Error::Parse {
                    path: arch_path.clone(),
                    line: i + 1,
                    msg: format!("unknown manifest key `{other}`"),
                })
            }
        }
    }
    if name.as_deref() != Some(net.name.as_str()) {
        return Err(Error::Checkpoint(format!(
            "checkpoint is for network {:?}, not {}",
            name.unwrap_or_default(),
            net.name
        )));
    }
    if layers != net.architecture() {
        return Err(Error::Checkpoint(format!(
            "architecture mismatch for {}: checkpoint {:?} vs network {:?}",
            net.name,
            layers,
            net.architecture()
        )));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_into(net, &bytes)?;
    net.set_trainable(!frozen);
    Ok(())
}
