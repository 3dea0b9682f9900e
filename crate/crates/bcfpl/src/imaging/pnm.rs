//! Binary PNM codec: P5 (grayscale) and P6 (RGB), 8-bit samples only.
//!
//! Reading divides each sample by the declared maxval; writing quantizes
//! with round-half-up at maxval 255. The codec exists so tests and the CLI
//! can exchange pixel data with exact, dependency-free semantics.

use std::fs;
use std::path::Path;

use super::{Image, ImageError};

/// Pulls the next whitespace-delimited token, skipping `#` comments.
fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8], ImageError> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    if *pos >= bytes.len() {
        return Err(ImageError::Truncated("header ended early".into()));
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    Ok(&bytes[start..*pos])
}

fn parse_dim(token: &[u8]) -> Result<usize, ImageError> {
    std::str::from_utf8(token)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| {
            ImageError::UnsupportedFormat(format!(
                "bad header field {:?}",
                String::from_utf8_lossy(token)
            ))
        })
}

/// Decodes a P5 or P6 image from raw bytes.
pub fn parse_pnm(bytes: &[u8]) -> Result<Image, ImageError> {
    let mut pos = 0usize;
    let magic = next_token(bytes, &mut pos)?;
    let channels = match magic {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(ImageError::UnsupportedFormat(format!(
                "magic {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let width = parse_dim(next_token(bytes, &mut pos)?)?;
    let height = parse_dim(next_token(bytes, &mut pos)?)?;
    let maxval = parse_dim(next_token(bytes, &mut pos)?)?;
    if maxval == 0 || maxval > 255 {
        return Err(ImageError::UnsupportedFormat(format!(
            "maxval {maxval}, only 1..=255 supported"
        )));
    }
    // Exactly one whitespace byte separates the header from the samples.
    if pos >= bytes.len() {
        return Err(ImageError::Truncated("no pixel data".into()));
    }
    if !bytes[pos].is_ascii_whitespace() {
        return Err(ImageError::UnsupportedFormat(
            "missing separator after maxval".into(),
        ));
    }
    pos += 1;
    let expected = width * height * channels;
    let rest = &bytes[pos..];
    if rest.len() < expected {
        return Err(ImageError::Truncated(format!(
            "expected {expected} sample bytes, found {}",
            rest.len()
        )));
    }
    // True division, not reciprocal multiplication: one rounding step, so
    // sample k at maxval m decodes to exactly (k as f32) / (m as f32).
    let data = rest[..expected]
        .iter()
        .map(|&b| b as f32 / maxval as f32)
        .collect();
    Image::new(width, height, channels, data)
}

/// Encodes as P5 (1 channel) or P6 (3 channels) with maxval 255.
/// Quantization is round-half-up: floor(v * 255 + 0.5).
pub fn encode_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| (v * 255.0 + 0.5).floor() as u8));
    out
}

pub fn read_pnm(path: &Path) -> Result<Image, ImageError> {
    let bytes = fs::read(path)?;
    parse_pnm(&bytes)
}

pub fn write_pnm(path: &Path, img: &Image) -> Result<(), ImageError> {
    fs::write(path, encode_pnm(img))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_tiny_p6() {
        let bytes = b"P6\n2 1\n255\n\x00\x00\x00\xff\xff\xff";
        let img = parse_pnm(bytes).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (2, 1, 3));
        assert_eq!(img.data(), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn parses_p5_with_comment_and_maxval() {
        let bytes = b"P5 # a comment\n2 2\n100\n\x00\x32\x64\x19";
        let img = parse_pnm(bytes).unwrap();
        assert_eq!(img.channels(), 1);
        assert_eq!(img.data(), &[0.0, 0.5, 1.0, 0.25]);
    }

    #[test]
    fn quantization_rounds_half_up() {
        // 0.5 * 255 + 0.5 = 128.0 exactly, so 0.5 encodes as 128.
        let img = Image::new(3, 1, 1, vec![0.0, 0.5, 1.0]).unwrap();
        let bytes = encode_pnm(&img);
        assert_eq!(&bytes[bytes.len() - 3..], &[0, 128, 255]);
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        // Start from byte-aligned intensities so the quantizer is exact.
        let data: Vec<f32> = (0..12).map(|i| (i * 20) as f32 / 255.0).collect();
        let img = Image::new(2, 2, 3, data).unwrap();
        let decoded = parse_pnm(&encode_pnm(&img)).unwrap();
        assert_eq!(decoded.data(), img.data());
        assert_eq!(encode_pnm(&decoded), encode_pnm(&img));
    }

    #[test]
    fn rejects_wrong_magic() {
        assert!(matches!(
            parse_pnm(b"P3\n1 1\n255\n0 0 0"),
            Err(ImageError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn rejects_three_byte_file_as_truncated() {
        assert!(matches!(
            parse_pnm(b"P6\n"),
            Err(ImageError::Truncated(_))
        ));
    }

    #[test]
    fn rejects_short_pixel_payload() {
        assert!(matches!(
            parse_pnm(b"P5\n2 2\n255\n\x01\x02"),
            Err(ImageError::Truncated(_))
        ));
    }

    #[test]
    fn rejects_wide_maxval() {
        assert!(matches!(
            parse_pnm(b"P5\n1 1\n65535\n\x00\x00"),
            Err(ImageError::UnsupportedFormat(_))
        ));
    }
}
