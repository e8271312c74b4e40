//! Binary netpbm: P5 (PGM) and P6 (PPM).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Decoded PGM samples at their stored bit depth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

/// Grayscale raster with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

/// 8-bit RGB raster, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, fill: f32) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn to_pgm(&self) -> Pgm {
        Pgm {
            width: self.width,
            height: self.height,
            maxval: 255,
            samples: self
                .data
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u16)
                .collect(),
        }
    }
}

impl RgbImage {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_ppm_bytes()).map_err(|e| Error::io(path, e))
    }
}

impl Pgm {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        if self.maxval < 256 {
            out.extend(self.samples.iter().map(|&s| s as u8));
        } else {
            for s in &self.samples {
                out.extend_from_slice(&s.to_be_bytes());
            }
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Samples divided by `maxval`.
    pub fn to_unit(&self) -> Vec<f32> {
        let m = self.maxval as f32;
        self.samples.iter().map(|&s| s as f32 / m).collect()
    }
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: u16,
    data_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::Format("not a netpbm file".into()));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, f) in fields.iter_mut().enumerate() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::Truncated("netpbm header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format(format!("expected a number in header field {}", i + 1)));
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::Format("header number out of range".into()))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        Some(_) => return Err(Error::Format("missing whitespace after maxval".into())),
        None => return Err(Error::Truncated("netpbm header".into())),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::Format("zero image dimension".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("maxval {maxval} outside 1..=65535")));
    }
    Ok(Header {
        magic,
        width,
        height,
        maxval: maxval as u16,
        data_offset: pos,
    })
}

/// Parses a binary P5 file. Samples above `maxval` are rejected.
pub fn decode_pgm(bytes: &[u8]) -> Result<Pgm> {
    let h = parse_header(bytes)?;
    if &h.magic != b"P5" {
        return Err(Error::Unsupported(format!(
            "netpbm variant {} (only binary P5 grayscale is read)",
            String::from_utf8_lossy(&h.magic)
        )));
    }
    let count = h
        .width
        .checked_mul(h.height)
        .ok_or_else(|| Error::Format("image dimensions overflow".into()))?;
    let bps = if h.maxval < 256 { 1 } else { 2 };
    let data = &bytes[h.data_offset..];
    if data.len() < count * bps {
        return Err(Error::Truncated(format!(
            "pixel section holds {} bytes, expected {}",
            data.len(),
            count * bps
        )));
    }
    let samples: Vec<u16> = if bps == 1 {
        data[..count].iter().map(|&b| b as u16).collect()
    } else {
        data[..count * 2]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    if let Some(s) = samples.iter().find(|&&s| s > h.maxval) {
        return Err(Error::Format(format!("sample {s} exceeds maxval {}", h.maxval)));
    }
    Ok(Pgm {
        width: h.width,
        height: h.height,
        maxval: h.maxval,
        samples,
    })
}

/// Parses a binary P6 file with 8-bit samples.
pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let h = parse_header(bytes)?;
    if &h.magic != b"P6" {
        return Err(Error::Unsupported("expected binary P6".into()));
    }
    if h.maxval > 255 {
        return Err(Error::Unsupported("16-bit PPM".into()));
    }
    let count = h.width * h.height * 3;
    let data = &bytes[h.data_offset..];
    if data.len() < count {
        return Err(Error::Truncated("ppm pixel section".into()));
    }
    Ok(RgbImage {
        width: h.width,
        height: h.height,
        data: data[..count].to_vec(),
    })
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Pgm> {
    let path = path.as_ref();
    decode_pgm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
