//! 8-bit binary PGM (`P5`, grey) and PPM (`P6`, RGB) images.
//!
//! Layout: magic, width, height and `255`, whitespace-separated (`#` comments
//! allowed), one whitespace byte, then `H * W * C` bytes row-major from the
//! top row, channels interleaved. In memory images are `[C, H, W]` in `[0, 1]`.

use std::fs;
use std::path::Path;

use super::header::Header;
use crate::error::{Error, Result, ResultExt};
use crate::tensor::Tensor;

pub fn encode_image(t: &Tensor<f32>) -> Result<Vec<u8>> {
    let [c, h, w] = match *t.shape() {
        [c, h, w] if c == 1 || c == 3 => [c, h, w],
        _ => return Err(Error::shape("write_image", format!("need [1|3, H, W], got {:?}", t.shape()))),
    };
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.reserve(c * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = t.data()[(ch * h + y) * w + x];
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

pub fn decode_image(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut hd = Header::new(bytes, true);
    let (_, magic) = hd.token("magic")?;
    let c = match magic {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::parse(0, format!("expected P5 or P6, found {other:?}"))),
    };
    let (wat, w): (usize, usize) = hd.number("width")?;
    let (hat, h): (usize, usize) = hd.number("height")?;
    if w == 0 || h == 0 {
        return Err(Error::parse(if w == 0 { wat } else { hat }, "zero image dimension"));
    }
    let (mat, maxval): (usize, u32) = hd.number("maxval")?;
    if maxval != 255 {
        return Err(Error::parse(mat, format!("only 8-bit images (maxval 255) are supported, got {maxval}")));
    }
    let start = hd.pos;
    let need = c * h * w;
    let have = bytes.len() - start;
    if have != need {
        return Err(Error::parse(
            start + have.min(need),
            format!("payload for {w}x{h}x{c} needs {need} bytes from offset {start}, found {have}"),
        ));
    }
    let payload = &bytes[start..];
    let mut data = vec![0f32; need];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                data[(ch * h + y) * w + x] = payload[(y * w + x) * c + ch] as f32 / 255.0;
            }
        }
    }
    Tensor::new(vec![c, h, w], data)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).context(path.display().to_string())?;
    decode_image(&bytes).context(path.display().to_string())
}

pub fn write_image(path: impl AsRef<Path>, t: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_image(t)?).context(path.display().to_string())
}
