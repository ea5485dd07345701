//! NPY v1.0 container for little-endian `f32` arrays in C order.

use std::fs;
use std::path::Path;

use xreg_autograd::Tensor;

use crate::error::{Error, NpyError, Result};

const MAGIC: &[u8] = b"\x93NUMPY";

pub fn encode_npy(t: &Tensor) -> Vec<u8> {
    let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
    let shape = match dims.len() {
        1 => format!("({},)", dims[0]),
        _ => format!("({})", dims.join(", ")),
    };
    let mut header = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': {shape}, }}");
    // pad so magic + version + length + header is a multiple of 64
    let unpadded = MAGIC.len() + 2 + 2 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');
    let mut out = Vec::with_capacity(10 + header.len() + 4 * t.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn dict_value<'a>(header: &'a str, key: &str) -> std::result::Result<&'a str, NpyError> {
    let tag = format!("'{key}':");
    let start = header
        .find(&tag)
        .ok_or_else(|| NpyError::BadHeader(format!("missing key {key:?}")))?
        + tag.len();
    Ok(header[start..].trim_start())
}

fn parse_header(header: &str) -> std::result::Result<Vec<usize>, NpyError> {
    let descr = dict_value(header, "descr")?;
    let descr = descr
        .strip_prefix('\'')
        .and_then(|d| d.split('\'').next())
        .ok_or_else(|| NpyError::BadHeader("descr is not a string".into()))?;
    if descr != "<f4" {
        return Err(NpyError::UnsupportedDtype(descr.to_string()));
    }
    let order = dict_value(header, "fortran_order")?;
    if order.starts_with("True") {
        return Err(NpyError::FortranOrder);
    }
    if !order.starts_with("False") {
        return Err(NpyError::BadHeader("fortran_order is not a bool".into()));
    }
    let shape = dict_value(header, "shape")?;
    let inner = shape
        .strip_prefix('(')
        .and_then(|s| s.split(')').next())
        .ok_or_else(|| NpyError::BadHeader("shape is not a tuple".into()))?;
    let dims = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| NpyError::BadHeader(format!("bad dimension {s:?}"))))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if dims.is_empty() || dims.contains(&0) {
        return Err(NpyError::EmptyShape(dims));
    }
    Ok(dims)
}

pub fn decode_npy(bytes: &[u8]) -> std::result::Result<Tensor, NpyError> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(NpyError::BadMagic);
    }
    let (major, minor) = (bytes[6], bytes[7]);
    let (header_len, offset) = match major {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 if bytes.len() >= 12 => (u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize, 12),
        _ => return Err(NpyError::UnsupportedVersion(major, minor)),
    };
    let body = offset + header_len;
    if bytes.len() < body {
        return Err(NpyError::BadHeader("header runs past end of file".into()));
    }
    let header = std::str::from_utf8(&bytes[offset..body]).map_err(|_| NpyError::BadHeader("header is not text".into()))?;
    let shape = parse_header(header)?;
    let numel: usize = shape.iter().product();
    let payload = &bytes[body..];
    if payload.len() < numel * 4 {
        return Err(NpyError::Truncated {
            expected: numel * 4,
            found: payload.len(),
        });
    }
    let data = payload[..numel * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Tensor::new(shape, data).expect("shape product checked"))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_npy(&bytes).map_err(|kind| Error::Npy {
        path: path.to_path_buf(),
        kind,
    })
}

pub fn write_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if t.rank() == 0 || t.is_empty() {
        return Err(Error::Npy {
            path: path.to_path_buf(),
            kind: NpyError::EmptyShape(t.shape().to_vec()),
        });
    }
    fs::write(path, encode_npy(t)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_aligned() {
        let bytes = encode_npy(&Tensor::zeros(&[3, 4]));
        let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!((10 + hlen) % 64, 0);
        assert_eq!(bytes[10 + hlen - 1], b'\n');
        assert_eq!(bytes.len(), 10 + hlen + 48);
    }

    #[test]
    fn one_dimensional_shape_has_trailing_comma() {
        let bytes = encode_npy(&Tensor::zeros(&[5]));
        let text = String::from_utf8_lossy(&bytes[10..]);
        assert!(text.contains("'shape': (5,)"));
        assert_eq!(decode_npy(&bytes).unwrap().shape(), &[5]);
    }
}
