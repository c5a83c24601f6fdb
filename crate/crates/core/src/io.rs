//! File formats: PFM for linear HDR data, 8-bit PNG for LDR observations.
//!
//! PFM layout follows the usual convention: `PF`/`Pf` header, dimensions,
//! a scale line whose sign encodes endianness (negative = little-endian),
//! then raw 32-bit floats with scanlines stored bottom-to-top.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{LdrImage, RadianceImage};

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// Writes interleaved channel data (row-major, row 0 at top) as PFM.
/// `channels` must be 1 (`Pf`) or 3 (`PF`).
pub fn write_pfm(path: &Path, width: usize, height: usize, channels: usize, data: &[f64]) -> Result<()> {
    assert!(channels == 1 || channels == 3, "PFM supports 1 or 3 channels");
    assert_eq!(data.len(), width * height * channels, "PFM data length");
    let mut w = BufWriter::new(File::create(path)?);
    let header = if channels == 3 { "PF" } else { "Pf" };
    write!(w, "{}\n{} {}\n-1.0\n", header, width, height)?;
    // Bottom-to-top scanlines.
    for y in (0..height).rev() {
        let row = &data[y * width * channels..(y + 1) * width * channels];
        for &v in row {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a PFM file; returns (width, height, channels, data) with data
/// row-major, row 0 at top.
pub fn read_pfm(path: &Path) -> Result<(usize, usize, usize, Vec<f64>)> {
    let mut r = BufReader::new(File::open(path)?);
    let header = read_token(&mut r)?;
    let channels = match header.as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(format_err(path, format!("bad PFM header {:?}", other))),
    };
    let width: usize = read_token(&mut r)?
        .parse()
        .map_err(|_| format_err(path, "bad width"))?;
    let height: usize = read_token(&mut r)?
        .parse()
        .map_err(|_| format_err(path, "bad height"))?;
    let scale: f64 = read_token(&mut r)?
        .parse()
        .map_err(|_| format_err(path, "bad scale"))?;
    if scale >= 0.0 {
        return Err(format_err(path, "big-endian PFM not supported"));
    }
    let mut raw = vec![0u8; width * height * channels * 4];
    r.read_exact(&mut raw)
        .map_err(|_| format_err(path, "truncated pixel data"))?;
    let mut data = vec![0.0f64; width * height * channels];
    for y in 0..height {
        let src_row = height - 1 - y;
        for i in 0..width * channels {
            let o = (src_row * width * channels + i) * 4;
            let bits = [raw[o], raw[o + 1], raw[o + 2], raw[o + 3]];
            data[y * width * channels + i] = f32::from_le_bytes(bits) as f64;
        }
    }
    Ok((width, height, channels, data))
}

fn read_token(r: &mut impl BufRead) -> Result<String> {
    let mut tok = Vec::new();
    loop {
        let mut byte = [0u8; 1];
        r.read_exact(&mut byte)?;
        if byte[0].is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(byte[0]);
    }
    String::from_utf8(tok).map_err(|_| Error::Format {
        path: String::new(),
        reason: "non-utf8 PFM header token".into(),
    })
}

pub fn write_pfm_rgb(path: &Path, img: &RadianceImage) -> Result<()> {
    let flat: Vec<f64> = img.pixels().iter().flatten().copied().collect();
    write_pfm(path, img.width(), img.height(), 3, &flat)
}

pub fn read_pfm_rgb(path: &Path) -> Result<RadianceImage> {
    let (w, h, c, data) = read_pfm(path)?;
    if c != 3 {
        return Err(format_err(path, format!("expected 3 channels, got {}", c)));
    }
    let pixels = data.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect();
    RadianceImage::from_pixels(w, h, pixels)
}

/// Writes an LDR image as 8-bit RGB PNG.
pub fn write_png(path: &Path, img: &LdrImage) -> Result<()> {
    let mut buf = image::RgbImage::new(img.width() as u32, img.height() as u32);
    for y in 0..img.height() {
        for x in 0..img.width() {
            let p = img.pixel(x, y);
            let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            buf.put_pixel(x as u32, y as u32, image::Rgb([q(p[0]), q(p[1]), q(p[2])]));
        }
    }
    buf.save(path)
        .map_err(|e| format_err(path, format!("png encode: {}", e)))
}

pub fn read_png(path: &Path) -> Result<LdrImage> {
    let img = image::open(path)
        .map_err(|e| format_err(path, format!("png decode: {}", e)))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Ok(LdrImage::from_fn(w as usize, h as usize, |x, y| {
        let p = img.get_pixel(x as u32, y as u32);
        [
            p[0] as f64 / 255.0,
            p[1] as f64 / 255.0,
            p[2] as f64 / 255.0,
        ]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_round_trip_rgb() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pfm");
        let img = RadianceImage::from_fn(3, 2, |x, y| {
            [x as f64 * 0.5, y as f64 * 2.0, -0.25 + x as f64]
        });
        write_pfm_rgb(&path, &img).unwrap();
        let back = read_pfm_rgb(&path).unwrap();
        assert_eq!(back.width(), 3);
        assert_eq!(back.height(), 2);
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            for c in 0..3 {
                // f32 storage precision
                assert!((a[c] - b[c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn pfm_round_trip_gray() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.pfm");
        let data = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        write_pfm(&path, 3, 2, 1, &data).unwrap();
        let (w, h, c, back) = read_pfm(&path).unwrap();
        assert_eq!((w, h, c), (3, 2, 1));
        for (a, b) in data.iter().zip(&back) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn pfm_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pfm");
        std::fs::write(&path, b"P6\n1 1\n255\n000").unwrap();
        assert!(read_pfm(&path).is_err());
    }

    #[test]
    fn png_round_trip_is_exact_on_the_8bit_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        let img = LdrImage::from_fn(5, 4, |x, y| {
            let v = ((x + 5 * y) % 256) as f64 / 255.0;
            [v, 1.0 - v, 0.5]
        });
        // Snap 0.5 onto the grid the same way degrade does.
        let img = LdrImage::from_fn(5, 4, |x, y| {
            let p = img.pixel(x, y);
            [0, 1, 2].map(|c| (p[c] * 255.0).round() / 255.0)
        });
        write_png(&path, &img).unwrap();
        let back = read_png(&path).unwrap();
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() < 1e-12);
            }
        }
    }
}
