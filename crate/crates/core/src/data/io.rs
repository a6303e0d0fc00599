//! Binary clip files and PPM frame dumps.
//!
//! Clip layout: `b"VESR"`, version byte `1`, four little-endian `u32` extents
//! `T, C, H, W`, then `f32` little-endian samples in frame, channel, row,
//! column order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::Clip;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"VESR";
const VERSION: u8 = 1;
const HEADER: usize = 4 + 1 + 16;

pub fn encode_clip(clip: &Clip) -> Vec<u8> {
    let t = clip.frames();
    let mut out = Vec::with_capacity(HEADER + 4 * t.numel());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_clip(bytes: &[u8]) -> Result<Clip> {
    if bytes.len() < HEADER {
        return Err(Error::Format(format!("clip truncated: {} byte header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format(format!("bad clip magic {:?}", &bytes[..4])));
    }
    if bytes[4] != VERSION {
        return Err(Error::Format(format!("unsupported clip version {}", bytes[4])));
    }
    let dims: Vec<usize> = bytes[5..HEADER]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(4).map(|b| (n, b)));
    let (n, payload) = count.ok_or_else(|| Error::Format(format!("clip dimensions {dims:?} overflow")))?;
    if bytes.len() - HEADER != payload {
        return Err(Error::Format(format!(
            "clip {dims:?} needs {payload} data bytes, found {}",
            bytes.len() - HEADER
        )));
    }
    let data: Vec<f32> = bytes[HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    debug_assert_eq!(data.len(), n);
    Clip::new(Tensor::from_vec(&dims, data)?)
}

/// Writes atomically: a temporary sibling file is renamed into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_clip(path: impl AsRef<Path>, clip: &Clip) -> Result<()> {
    write_atomic(path.as_ref(), &encode_clip(clip))
}

pub fn read_clip(path: impl AsRef<Path>) -> Result<Clip> {
    decode_clip(&fs::read(path)?)
}

/// 8-bit code of a sample: `round(255 v)`, clamped.
pub fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PPM (P6) of one `3 x H x W` frame.
pub fn encode_ppm(frame: &Tensor<f32>) -> Result<Vec<u8>> {
    let (h, w) = match *frame.shape() {
        [3, h, w] => (h, w),
        _ => return Err(Error::invalid("ppm", format!("expected 3 x H x W, got {:?}", frame.shape()))),
    };
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    for i in 0..plane {
        for c in 0..3 {
            out.push(quantize_u8(frame.data()[c * plane + i]));
        }
    }
    Ok(out)
}

/// Writes `frame_000.ppm`, `frame_001.ppm`, ... into `dir`, creating it.
pub fn write_ppm_frames(dir: impl AsRef<Path>, clip: &Clip) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    (0..clip.n_frames())
        .map(|t| {
            let path = dir.join(format!("frame_{t:03}.ppm"));
            fs::write(&path, encode_ppm(&clip.frame(t))?)?;
            Ok(path)
        })
        .collect()
}
