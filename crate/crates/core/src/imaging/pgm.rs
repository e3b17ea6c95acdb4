//! Netpbm graymap I/O: binary `P5` and ASCII `P2`, 8-bit (`maxval = 255`) only.

use std::fs;
use std::path::Path;

use super::GrayscaleImage;
use crate::error::{Error, Result};

/// Serializes as binary `P5` with the canonical `"P5\n<w> <h>\n255\n"` header.
pub fn encode_pgm(img: &GrayscaleImage) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", img.width(), img.height());
    let mut out = Vec::with_capacity(header.len() + img.pixels().len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(img.pixels());
    out
}

/// Serializes as ASCII `P2`, at most 16 samples per line.
pub fn encode_pgm_ascii(img: &GrayscaleImage) -> Vec<u8> {
    let mut out = format!("P2\n{} {}\n255\n", img.width(), img.height());
    for row in img.pixels().chunks(img.width()) {
        for line in row.chunks(16) {
            let parts: Vec<String> = line.iter().map(|v| v.to_string()).collect();
            out.push_str(&parts.join(" "));
            out.push('\n');
        }
    }
    out.into_bytes()
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Pgm(format!("expected {what} at byte {start}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Pgm(format!("{what} out of range")))
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayscaleImage> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::Pgm("missing P2/P5 magic".into()));
    }
    let binary = match bytes[1] {
        b'5' => true,
        b'2' => false,
        other => return Err(Error::Pgm(format!("unsupported magic P{}", other as char))),
    };
    let mut reader = HeaderReader { bytes, pos: 2 };
    let width = reader.number("width")?;
    let height = reader.number("height")?;
    let maxval = reader.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Pgm(format!("maxval {maxval} unsupported; only 255 is accepted")));
    }
    let count = width.checked_mul(height).ok_or_else(|| Error::Pgm("image dimensions overflow".into()))?;

    let pixels = if binary {
        match bytes.get(reader.pos) {
            Some(b) if b.is_ascii_whitespace() => reader.pos += 1,
            _ => return Err(Error::Pgm("expected a single whitespace after maxval".into())),
        }
        let raster = &bytes[reader.pos..];
        if raster.len() < count {
            return Err(Error::Pgm(format!("truncated raster: {} of {count} bytes", raster.len())));
        }
        if raster.len() > count {
            return Err(Error::Pgm(format!("{} trailing bytes after raster", raster.len() - count)));
        }
        raster.to_vec()
    } else {
        let mut pixels = Vec::with_capacity(count);
        for _ in 0..count {
            let v = reader.number("sample")?;
            if v > 255 {
                return Err(Error::Pgm(format!("sample {v} exceeds maxval")));
            }
            pixels.push(v as u8);
        }
        reader.skip_whitespace_and_comments();
        if reader.pos != bytes.len() {
            return Err(Error::Pgm("trailing data after ASCII raster".into()));
        }
        pixels
    };
    GrayscaleImage::new(width, height, pixels).map_err(|e| Error::Pgm(e.to_string()))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayscaleImage> {
    decode_pgm(&fs::read(path)?)
}

pub fn write_pgm(path: impl AsRef<Path>, img: &GrayscaleImage) -> Result<()> {
    fs::write(path, encode_pgm(img))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_bit_exact() {
        let img = GrayscaleImage::new(3, 2, vec![0, 1, 2, 3, 4, 255]).unwrap();
        let bytes = encode_pgm(&img);
        assert_eq!(&bytes[..11], b"P5\n3 2\n255\n");
        assert_eq!(&bytes[11..], &[0, 1, 2, 3, 4, 255]);
        assert_eq!(decode_pgm(&bytes).unwrap(), img);
    }

    #[test]
    fn ascii_with_comments() {
        let text = b"P2\n# made by hand\n2 2 # dims\n255\n10 20\n30 40\n";
        let img = decode_pgm(text).unwrap();
        assert_eq!(img.pixels(), &[10, 20, 30, 40]);
        assert_eq!(decode_pgm(&encode_pgm_ascii(&img)).unwrap(), img);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(decode_pgm(b"P6\n1 1\n255\n\0\0\0").is_err());
        assert!(decode_pgm(b"P5\n1 1\n65535\n\0\0").is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\0\0\0").is_err());
        assert!(decode_pgm(b"P5\n1 1\n255\n\0\0").is_err());
        assert!(decode_pgm(b"P5\n0 1\n255\n").is_err());
        assert!(decode_pgm(b"P2\n1 1\n255\n256\n").is_err());
        assert!(decode_pgm(b"").is_err());
    }
}
