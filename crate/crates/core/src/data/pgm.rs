//! Binary greyscale PGM (`P5`) reading and writing, 8- or 16-bit.

use std::path::Path;

use super::Image2D;
use crate::{Error, Result};

/// Raw PGM contents before normalisation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

impl Pgm {
    /// Normalises samples to `[0, 1]` by dividing by `maxval`.
    pub fn to_image(&self) -> Image2D {
        let scale = f64::from(self.maxval);
        let pixels = self.samples.iter().map(|&s| f64::from(s) / scale).collect();
        Image2D::new(self.width, self.height, pixels).expect("samples bounded by maxval")
    }

    pub fn from_image(image: &Image2D, maxval: u16) -> Pgm {
        let scale = f64::from(maxval);
        Pgm {
            width: image.width(),
            height: image.height(),
            maxval,
            samples: image
                .pixels()
                .iter()
                .map(|&p| (p * scale).round() as u16)
                .collect(),
        }
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
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

    fn number(&mut self, what: &str) -> std::result::Result<usize, String> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(format!("missing {what} in PGM header"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("invalid {what} in PGM header"))
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Pgm, String> {
    match bytes.get(..2) {
        Some(b"P5") => {}
        Some(b"P2") => return Err("ASCII PGM (P2) is not supported; expected binary P5".into()),
        Some([b'P', b'1' | b'3' | b'4' | b'6' | b'7']) => {
            return Err("not a greyscale image: expected binary PGM (P5)".into())
        }
        _ => return Err("not a PGM file: missing P5 magic".into()),
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(format!("empty image {width}x{height}"));
    }
    if !(1..=65535).contains(&maxval) {
        return Err(format!("maxval {maxval} outside 1..=65535"));
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return Err("missing whitespace after PGM header".into()),
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| "image dimensions overflow".to_string())?;
    let wide = maxval > 255;
    let need = if wide { 2 * n } else { n };
    let data = &bytes[h.pos..];
    if data.len() < need {
        return Err(format!("truncated pixel data: need {need} bytes, found {}", data.len()));
    }
    let samples: Vec<u16> = if wide {
        data[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        data[..need].iter().map(|&b| u16::from(b)).collect()
    };
    if let Some(s) = samples.iter().find(|&&s| usize::from(s) > maxval) {
        return Err(format!("sample {s} exceeds maxval {maxval}"));
    }
    Ok(Pgm {
        width,
        height,
        maxval: maxval as u16,
        samples,
    })
}

pub fn encode(pgm: &Pgm) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", pgm.width, pgm.height, pgm.maxval).into_bytes();
    if pgm.maxval > 255 {
        for s in &pgm.samples {
            out.extend_from_slice(&s.to_be_bytes());
        }
    } else {
        out.extend(pgm.samples.iter().map(|&s| s as u8));
    }
    out
}

pub fn read(path: &Path) -> Result<Image2D> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
        .map(|p| p.to_image())
        .map_err(|m| Error::format(path, m))
}

pub fn write(path: &Path, image: &Image2D, maxval: u16) -> Result<()> {
    let bytes = encode(&Pgm::from_image(image, maxval));
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
