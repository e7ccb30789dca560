//! `SRFD` binary layout: magic, `u32` width, `u32` height (little endian),
//! then `f32` `ux, uy` pairs in row-major order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::DisplacementField;
use crate::error::{Error, Result};
use crate::imaging::write_atomic;

const MAGIC: &[u8; 4] = b"SRFD";

pub fn encode_field(field: &DisplacementField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + field.as_slice().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(field.width() as u32).to_le_bytes());
    out.extend_from_slice(&(field.height() as u32).to_le_bytes());
    for &v in field.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_field(bytes: &[u8]) -> Result<DisplacementField> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::InvalidField("missing SRFD header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (w, h) = (word(4), word(8));
    let payload = &bytes[12..];
    if payload.len() != w * h * 8 {
        return Err(Error::InvalidField(format!(
            "{w}x{h} field needs {} payload bytes, found {}",
            w * h * 8,
            payload.len()
        )));
    }
    let u = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    DisplacementField::new(w, h, u)
}

pub fn save_field(path: impl AsRef<Path>, field: &DisplacementField) -> Result<()> {
    write_atomic(path, &encode_field(field))
}

pub fn load_field(path: impl AsRef<Path>) -> Result<DisplacementField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_field(&bytes)
}

/// `x,y,ux,uy` rows for inspection in a spreadsheet.
pub fn field_to_csv(field: &DisplacementField) -> String {
    let mut s = String::from("x,y,ux,uy\n");
    for y in 0..field.height() {
        for x in 0..field.width() {
            let (ux, uy) = field.at(x, y);
            let _ = writeln!(s, "{x},{y},{ux},{uy}");
        }
    }
    s
}
