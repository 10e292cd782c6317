//! Portable float map: `Pf` (one channel) or `PF` (three channels), then
//! `width height`, then a scale whose sign gives the byte order (negative
//! means little-endian), each on its own line, followed by 32-bit floats
//! with rows stored bottom to top. In memory rows run top to bottom.

use std::fs;
use std::path::Path;

use super::header::Header;
use crate::error::{Error, Result, ResultExt};
use crate::tensor::Tensor;

/// Encode `[C, H, W]` (C = 1 or 3) or `[H, W]`. `scale`'s sign selects the
/// byte order; its magnitude is stored as-is.
pub fn encode_pfm(t: &Tensor<f32>, scale: f32) -> Result<Vec<u8>> {
    let (c, h, w) = match *t.shape() {
        [h, w] => (1, h, w),
        [c, h, w] if c == 1 || c == 3 => (c, h, w),
        _ => return Err(Error::shape("write_pfm", format!("need [1|3, H, W] or [H, W], got {:?}", t.shape()))),
    };
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::config("pfm scale must be finite and non-zero"));
    }
    let magic = if c == 1 { "Pf" } else { "PF" };
    let mut out = format!("{magic}\n{w} {h}\n{scale}\n").into_bytes();
    out.reserve(c * h * w * 4);
    let little = scale < 0.0;
    for y in (0..h).rev() {
        for x in 0..w {
            for ch in 0..c {
                let v = t.data()[(ch * h + y) * w + x];
                out.extend_from_slice(&if little { v.to_le_bytes() } else { v.to_be_bytes() });
            }
        }
    }
    Ok(out)
}

/// Decode to `[C, H, W]` plus the stored scale.
pub fn decode_pfm(bytes: &[u8]) -> Result<(Tensor<f32>, f32)> {
    let mut hd = Header::new(bytes, false);
    let (_, magic) = hd.token("magic")?;
    let c = match magic {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(Error::parse(0, format!("expected Pf or PF, found {other:?}"))),
    };
    let (wat, w): (usize, usize) = hd.number("width")?;
    let (hat, h): (usize, usize) = hd.number("height")?;
    if w == 0 {
        return Err(Error::parse(wat, "zero width"));
    }
    if h == 0 {
        return Err(Error::parse(hat, "zero height"));
    }
    let (sat, scale): (usize, f32) = hd.number("scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::parse(sat, format!("scale must be finite and non-zero, got {scale}")));
    }
    let start = hd.pos;
    let need = c * h * w * 4;
    let have = bytes.len() - start;
    if have < need {
        return Err(Error::parse(
            bytes.len(),
            format!("truncated payload: expected {need} bytes from offset {start}, found {have}"),
        ));
    }
    if have > need {
        return Err(Error::parse(start + need, format!("{} trailing bytes after payload", have - need)));
    }
    let little = scale < 0.0;
    let mut data = vec![0f32; c * h * w];
    let mut p = start;
    for y in (0..h).rev() {
        for x in 0..w {
            for ch in 0..c {
                let b: [u8; 4] = bytes[p..p + 4].try_into().expect("4 bytes");
                data[(ch * h + y) * w + x] = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
                p += 4;
            }
        }
    }
    Ok((Tensor::new(vec![c, h, w], data)?, scale))
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<(Tensor<f32>, f32)> {
    let path = path.as_ref();
    let bytes = fs::read(path).context(path.display().to_string())?;
    decode_pfm(&bytes).context(path.display().to_string())
}

pub fn write_pfm(path: impl AsRef<Path>, t: &Tensor<f32>, scale: f32) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pfm(t, scale)?).context(path.display().to_string())
}
