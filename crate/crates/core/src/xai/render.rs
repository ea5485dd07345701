use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use xreg_autograd::Tensor;

use super::cam::{AttentionMap, Normalization};
use crate::error::{Error, Result};

/// A single 2-d plane `(height, width, values)` of a `[1, 1, spatial]`
/// tensor; volumes yield their middle slice along the first axis.
fn plane(t: &Tensor) -> Result<(usize, usize, Vec<f32>)> {
    let s = t.shape();
    match s {
        [1, 1, h, w] => Ok((*h, *w, t.data().to_vec())),
        [1, 1, d, h, w] => {
            let z = d / 2;
            Ok((*h, *w, t.data()[z * h * w..(z + 1) * h * w].to_vec()))
        }
        _ => Err(Error::ShapeMismatch(format!("cannot render a {s:?} tensor"))),
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_pgm(path: impl AsRef<Path>, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Read a binary 8-bit PGM as `(width, height, pixels)`.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if bytes.get(pos) == Some(&b'#') {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(Error::format(path, format!("magic {:?}, expected P5", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::format(path, format!("bad header field {s:?}")));
    let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if max != 255 {
        return Err(Error::format(path, format!("max value {max}, expected 255")));
    }
    let data = bytes.get(pos..pos + w * h).ok_or_else(|| Error::format(path, "truncated pixel data"))?;
    Ok((w, h, data.to_vec()))
}

fn write_png(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let fail = |e: png::EncodingError| Error::format(path, e.to_string());
    let mut w = enc.write_header().map_err(fail)?;
    w.write_image_data(rgb).map_err(fail)?;
    w.finish().map_err(fail)
}

/// Underlay as gray, blended toward a red-to-yellow heat colour
/// `(255, 255·v, 0)` with opacity `v`.
pub fn overlay_rgb(map: &[f32], underlay: &[f32]) -> Vec<u8> {
    let (lo, hi) = underlay
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = Vec::with_capacity(map.len() * 3);
    for (&m, &u) in map.iter().zip(underlay) {
        let gray = quantize((u - lo) / span) as f32;
        let v = m.clamp(0.0, 1.0);
        let heat = [255.0, 255.0 * v, 0.0];
        for h in heat {
            out.push(((1.0 - v) * gray + v * h).round() as u8);
        }
    }
    out
}

/// Write `<stem>.pgm` with the normalized map and `<stem>.png` with the
/// overlay. Returns both paths.
pub fn export_overlay(map: &AttentionMap, underlay: &Tensor, stem: impl AsRef<Path>) -> Result<[PathBuf; 2]> {
    let map = match map.normalization {
        Normalization::MinMax => map.clone(),
        Normalization::Raw => map.normalized(),
    };
    let (h, w, values) = plane(&map.values)?;
    let (uh, uw, under) = plane(underlay)?;
    if (h, w) != (uh, uw) {
        return Err(Error::ShapeMismatch(format!("map {h}x{w} vs underlay {uh}x{uw}")));
    }
    let stem = stem.as_ref();
    let pgm = stem.with_extension("pgm");
    let png_path = stem.with_extension("png");
    let gray: Vec<u8> = values.iter().map(|&v| quantize(v)).collect();
    write_pgm(&pgm, w, h, &gray)?;
    write_png(&png_path, w, h, &overlay_rgb(&values, &under))?;
    Ok([pgm, png_path])
}
