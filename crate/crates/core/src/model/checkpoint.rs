//! Named-tensor checkpoint files.
//!
//! Layout: `b"VSRC"`, version byte, `u32` tensor count, then per tensor a
//! `u16` name length, the UTF-8 name, a `u8` rank, `u32` extents and `f32`
//! samples. All integers and floats are little-endian.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use super::config::VesrNetConfig;
use super::net::VesrNet;
use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"VSRC";
const VERSION: u8 = 1;

pub fn encode_tensors<'a>(tensors: impl IntoIterator<Item = (&'a str, &'a Tensor<f32>)>) -> Result<Vec<u8>> {
    let tensors: Vec<_> = tensors.into_iter().collect();
    let mut out = MAGIC.to_vec();
    out.push(VERSION);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("tensor name too long: {name}")))?;
        let rank = u8::try_from(t.rank()).map_err(|_| Error::Format(format!("rank of {name} exceeds 255")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::Format(format!("extent of {name} exceeds u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_owned();
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4).map(|b| (n, b)));
        let (_, nbytes) = n.ok_or_else(|| Error::Format(format!("extents of {name} overflow")))?;
        let data = r
            .take(nbytes)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        out.push((name, Tensor::from_vec(&shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes in checkpoint", bytes.len() - r.pos)));
    }
    Ok(out)
}

pub fn write_tensors<'a>(path: impl AsRef<Path>, tensors: impl IntoIterator<Item = (&'a str, &'a Tensor<f32>)>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_tensors(tensors)?)
}

pub fn read_tensors(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor<f32>)>> {
    decode_tensors(&fs::read(path)?)
}

/// Recovers the architecture from parameter names and shapes. Tensors whose
/// names do not belong to the network are ignored.
pub fn infer_config(tensors: &[(String, Tensor<f32>)]) -> Result<VesrNetConfig> {
    let find = |name: &str| {
        tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))
    };
    let channels = find("encoder.conv1.weight")?.shape()[0];
    let conv9 = find("fusion.conv9.weight")?;
    if channels == 0 || conv9.shape()[1] % channels != 0 {
        return Err(Error::Format("inconsistent fusion width".into()));
    }
    let count_blocks = |prefix: &str| {
        tensors
            .iter()
            .filter_map(|(n, _)| n.strip_prefix(prefix))
            .filter_map(|rest| {
                let rest = rest.strip_prefix("carb").or_else(|| rest.strip_prefix("res"))?;
                let (idx, _) = rest.split_once('.')?;
                idx.parse::<usize>().ok()
            })
            .collect::<BTreeSet<_>>()
            .len()
    };
    let use_carb = tensors.iter().any(|(n, _)| n.contains(".ca_fc1."));
    let reduction = if use_carb {
        let fc1 = tensors
            .iter()
            .find(|(n, _)| n.ends_with(".ca_fc1.weight"))
            .map(|(_, t)| t.shape()[0])
            .unwrap_or(1);
        channels / fc1.max(1)
    } else {
        VesrNetConfig::default().reduction
    };
    let head = tensors.iter().find(|(n, _)| n == "align.cas_warp_head.bias");
    let cfg = VesrNetConfig {
        channels,
        n_frames: conv9.shape()[1] / channels,
        n_encoder_carbs: count_blocks("encoder."),
        n_recon_blocks: count_blocks("recon."),
        scale: 4,
        use_separate_nl: tensors.iter().any(|(n, _)| n.starts_with("fusion.snl.")),
        use_carb,
        use_alignment: head.is_some(),
        reduction,
        align_groups: head.map_or(VesrNetConfig::default().align_groups, |(_, t)| t.numel() / 2),
    };
    cfg.validate()?;
    Ok(cfg.normalized())
}

impl VesrNet<f32> {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_tensors(path, self.params.iter())
    }

    /// Rebuilds a network from named tensors, inferring its configuration.
    pub fn from_tensors(tensors: &[(String, Tensor<f32>)]) -> Result<Self> {
        let cfg = infer_config(tensors)?;
        let mut net = VesrNet::new(&cfg, 0)?;
        let mut src = ParamStore::new();
        for (name, t) in tensors {
            if net.params.find(name).is_some() {
                src.add(name.clone(), t.clone());
            }
        }
        net.params.load_from(&src)?;
        Ok(net)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tensors(&read_tensors(path)?)
    }
}
