//! Middlebury `.flo` files: magic `PIEH`, little-endian `u32` width and
//! height, then row-major interleaved `f32` pairs.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{format, Result};
use crate::eval::FlowField;

const MAGIC: &[u8; 4] = b"PIEH";

pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * flow.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(flow.width as u32).to_le_bytes());
    out.extend_from_slice(&(flow.height as u32).to_le_bytes());
    for [u, v] in &flow.data {
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 12 {
        return Err(format("truncated .flo header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(format("bad .flo magic"));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().unwrap()) as usize;
    let (w, h) = (word(4), word(8));
    if w == 0 || h == 0 {
        return Err(format("empty .flo grid"));
    }
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(12))
        .ok_or_else(|| format(".flo dimensions overflow"))?;
    if bytes.len() != expected {
        return Err(format(format!(
            ".flo payload is {} bytes, expected {expected} for {w}x{h}",
            bytes.len()
        )));
    }
    let f = |k: usize| f32::from_le_bytes(bytes[k..k + 4].try_into().unwrap());
    let data = (0..w * h).map(|i| [f(12 + 8 * i), f(16 + 8 * i)]).collect();
    Ok(FlowField {
        width: w,
        height: h,
        data,
    })
}

pub fn write_flo(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    std::fs::File::create(path)?.write_all(&encode_flo(flow))?;
    Ok(())
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_flo(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_one_is_28_bytes() {
        let bytes = encode_flo(&FlowField::zeros(2, 1));
        assert_eq!(bytes.len(), 28);
        assert_eq!(&bytes[..12], b"PIEH\x02\0\0\0\x01\0\0\0");
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let flow = FlowField::new(3, 2, vec![[0.1, -0.0], [f32::MIN_POSITIVE, 1e30], [-7.25, 3.0], [0.0, 0.5], [1.0 / 3.0, 2.0], [-1e-8, 9.0]]).unwrap();
        let back = decode_flo(&encode_flo(&flow)).unwrap();
        for (a, b) in flow.data.iter().zip(&back.data) {
            assert_eq!(a[0].to_bits(), b[0].to_bits());
            assert_eq!(a[1].to_bits(), b[1].to_bits());
        }
    }

    #[test]
    fn rejects_bad_files() {
        let mut bytes = encode_flo(&FlowField::zeros(2, 2));
        assert!(decode_flo(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_flo(&bytes[..8]).is_err());
        bytes[0] = b'X';
        assert!(matches!(decode_flo(&bytes), Err(crate::Error::Format(_))));
    }
}
