use std::fs;
use std::io::Write;
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Loads an 8-bit netpbm (P5, or P6 converted to gray) or 8-bit PNG image.
/// Colour PNGs are reduced to luminance.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

pub(crate) fn decode_image(bytes: &[u8]) -> Result<Image> {
    if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        decode_pnm(bytes)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(bytes)
    } else {
        Err(Error::UnsupportedFormat("expected P5/P6 netpbm or PNG".into()))
    }
}

/// Saves as P5 for `.pgm`/`.pnm`, PNG otherwise. Intensities are quantized
/// with rounding.
pub fn save_image(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    save_gray8(path, img.width(), img.height(), &bytes)
}

pub(crate) fn save_gray8(path: impl AsRef<Path>, w: usize, h: usize, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let encoded = match ext.as_str() {
        "pgm" | "pnm" => encode_pgm(w, h, bytes),
        _ => encode_png(w, h, bytes)?,
    };
    write_atomic(path, &encoded)
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: impl AsRef<Path>, contents: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(contents).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[inline]
fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode_pgm(w: usize, h: usize, bytes: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(bytes);
    out
}

fn encode_png(w: usize, h: usize, bytes: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::UnsupportedFormat(format!("png encode: {e}")))?;
        writer
            .write_image_data(bytes)
            .map_err(|e| Error::UnsupportedFormat(format!("png encode: {e}")))?;
    }
    Ok(out)
}

fn decode_png(bytes: &[u8]) -> Result<Image> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::CorruptHeader(format!("png: {e}")))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::CorruptHeader("png: image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::CorruptHeader(format!("png: {e}")))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat(format!("png bit depth {:?}", info.bit_depth)));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(Error::UnsupportedFormat(format!("png colour type {other:?}"))),
    };
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        let row = &buf[y * info.line_size..y * info.line_size + w * channels];
        for px in row.chunks_exact(channels) {
            data.push(match channels {
                1 | 2 => px[0] as f64 / 255.0,
                _ => luma(px[0], px[1], px[2]),
            });
        }
    }
    Ok(Image::from_raw(w, h, data))
}

fn luma(r: u8, g: u8, b: u8) -> f64 {
    let v = LUMA[0] * r as f64 + LUMA[1] * g as f64 + LUMA[2] * b as f64;
    (v / 255.0).clamp(0.0, 1.0)
}

fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let color = bytes[1] == b'6';
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        *field = next_header_number(bytes, &mut pos)?;
    }
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 {
        return Err(Error::CorruptHeader(format!("zero dimension {w}x{h}")));
    }
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!("netpbm maxval {maxval}, only 255 supported")));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::CorruptHeader("missing raster separator".into()));
    }
    pos += 1;
    let payload = &bytes[pos..];
    let channels = if color { 3 } else { 1 };
    let expected = w * h * channels;
    if payload.len() != expected {
        return Err(Error::CorruptHeader(format!(
            "header declares {w}x{h} ({expected} bytes) but payload has {}",
            payload.len()
        )));
    }
    let data = if color {
        payload.chunks_exact(3).map(|p| luma(p[0], p[1], p[2])).collect()
    } else {
        payload.iter().map(|&b| b as f64 / 255.0).collect()
    };
    Ok(Image::from_raw(w, h, data))
}

fn next_header_number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::CorruptHeader("truncated netpbm header".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::CorruptHeader(format!("bad header number at byte {start}")))
}
