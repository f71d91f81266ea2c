//! Binary PPM (P6, 8-bit) and PFM (little-endian float32) images.
//!
//! PFM rows are stored bottom to top as the format prescribes; in memory
//! every image is row-major from the top-left pixel.

use std::path::Path;

use super::{read_bytes, write_bytes};
use crate::error::{Error, Result};

fn parse_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: msg.into(),
    }
}

/// Reads whitespace-separated header tokens, skipping `#` comments.
/// Returns the tokens and the offset of the byte after the final
/// separator.
fn header_tokens(data: &[u8], n: usize, path: &Path) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < n {
        while i < data.len() && (data[i].is_ascii_whitespace() || data[i] == b'#') {
            if data[i] == b'#' {
                while i < data.len() && data[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < data.len() && !data[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(parse_err(path, "truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&data[start..i]).into_owned());
    }
    if i >= data.len() {
        return Err(parse_err(path, "missing pixel data"));
    }
    Ok((tokens, i + 1))
}

fn dims(tokens: &[String], path: &Path) -> Result<(usize, usize)> {
    let w: usize = tokens[1].parse().map_err(|_| parse_err(path, "bad width"))?;
    let h: usize = tokens[2].parse().map_err(|_| parse_err(path, "bad height"))?;
    if w == 0 || h == 0 {
        return Err(parse_err(path, "empty image"));
    }
    Ok((w, h))
}

/// Encodes colors in [0, 1]; values are clamped and rounded.
pub fn encode_ppm(width: usize, height: usize, pixels: &[[f64; 3]]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.reserve(pixels.len() * 3);
    for px in pixels {
        for c in px {
            out.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

pub fn decode_ppm(data: &[u8], path: &Path) -> Result<(usize, usize, Vec<[f64; 3]>)> {
    let (tokens, start) = header_tokens(data, 4, path)?;
    if tokens[0] != "P6" {
        return Err(parse_err(path, format!("expected P6, found {}", tokens[0])));
    }
    let (w, h) = dims(&tokens, path)?;
    if tokens[3] != "255" {
        return Err(parse_err(path, "only 8-bit PPM is supported"));
    }
    let body = &data[start..];
    if body.len() != w * h * 3 {
        return Err(parse_err(path, format!("expected {} bytes of pixels, found {}", w * h * 3, body.len())));
    }
    let px = body
        .chunks_exact(3)
        .map(|c| [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0])
        .collect();
    Ok((w, h, px))
}

/// Encodes `channels` (1 or 3) floats per pixel.
pub fn encode_pfm(width: usize, height: usize, channels: usize, values: &[f64]) -> Result<Vec<u8>> {
    let magic = match channels {
        1 => "Pf",
        3 => "PF",
        _ => return Err(Error::InvalidArgument(format!("PFM has 1 or 3 channels, not {channels}"))),
    };
    if values.len() != width * height * channels {
        return Err(Error::InvalidArgument("PFM buffer size mismatch".into()));
    }
    let mut out = format!("{magic}\n{width} {height}\n-1.0\n").into_bytes();
    let row = width * channels;
    for r in (0..height).rev() {
        for v in &values[r * row..(r + 1) * row] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Returns width, height, channels and the values top row first.
pub fn decode_pfm(data: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<f64>)> {
    let (tokens, start) = header_tokens(data, 4, path)?;
    let channels = match tokens[0].as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(parse_err(path, format!("expected Pf or PF, found {other}"))),
    };
    let (w, h) = dims(&tokens, path)?;
    let scale: f64 = tokens[3].parse().map_err(|_| parse_err(path, "bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(parse_err(path, "bad scale"));
    }
    let little = scale < 0.0;
    let body = &data[start..];
    let row = w * channels;
    if body.len() != row * h * 4 {
        return Err(parse_err(path, format!("expected {} bytes of pixels, found {}", row * h * 4, body.len())));
    }
    let mut out = vec![0.0; row * h];
    for (k, c) in body.chunks_exact(4).enumerate() {
        let b = [c[0], c[1], c[2], c[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (file_row, col) = (k / row, k % row);
        out[(h - 1 - file_row) * row + col] = v as f64;
    }
    Ok((w, h, channels, out))
}

pub fn write_ppm(path: &Path, width: usize, height: usize, pixels: &[[f64; 3]]) -> Result<()> {
    write_bytes(path, &encode_ppm(width, height, pixels))
}

pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<[f64; 3]>)> {
    decode_ppm(&read_bytes(path)?, path)
}

pub fn write_pfm(path: &Path, width: usize, height: usize, channels: usize, values: &[f64]) -> Result<()> {
    write_bytes(path, &encode_pfm(width, height, channels, values)?)
}

pub fn read_pfm(path: &Path) -> Result<(usize, usize, usize, Vec<f64>)> {
    decode_pfm(&read_bytes(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let px: Vec<[f64; 3]> = (0..6).map(|i| [i as f64 / 5.0, 1.0, 0.0]).collect();
        let bytes = encode_ppm(3, 2, &px);
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        let (w, h, back) = decode_ppm(&bytes, Path::new("m")).unwrap();
        assert_eq!((w, h), (3, 2));
        for (a, b) in px.iter().zip(&back) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn pfm_rows_bottom_up() {
        let vals = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let bytes = encode_pfm(3, 2, 1, &vals).unwrap();
        let header = b"Pf\n3 2\n-1.0\n";
        assert!(bytes.starts_with(header));
        let first = f32::from_le_bytes(bytes[header.len()..header.len() + 4].try_into().unwrap());
        assert_eq!(first, 4.0);
        let (_, _, ch, back) = decode_pfm(&bytes, Path::new("m")).unwrap();
        assert_eq!(ch, 1);
        assert_eq!(back, vals.to_vec());
    }

    #[test]
    fn truncated_rejected() {
        let bytes = encode_pfm(2, 2, 3, &[0.5; 12]).unwrap();
        assert!(decode_pfm(&bytes[..bytes.len() - 1], Path::new("m")).is_err());
        assert!(decode_ppm(b"P5\n1 1\n255\n\0", Path::new("m")).is_err());
    }
}
