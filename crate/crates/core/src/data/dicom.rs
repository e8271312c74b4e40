//! Minimal DICOM Part-10 reader for single-frame, uncompressed,
//! explicit-VR little-endian MONOCHROME2 images, and a matching writer used
//! to produce fixtures.
//!
//! The reader walks the element stream by declared lengths and never reads
//! past the end of the buffer; every malformed input maps to a
//! [`DicomError`].

use std::fmt;

use thiserror::Error;

/// Explicit VR Little Endian.
pub const EXPLICIT_VR_LE: &str = "1.2.840.10008.1.2.1";
pub const PREAMBLE_LEN: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tag(pub u16, pub u16);

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:04X},{:04X})", self.0, self.1)
    }
}

pub mod tags {
    use super::Tag;
    pub const TRANSFER_SYNTAX: Tag = Tag(0x0002, 0x0010);
    pub const SAMPLES_PER_PIXEL: Tag = Tag(0x0028, 0x0002);
    pub const PHOTOMETRIC: Tag = Tag(0x0028, 0x0004);
    pub const NUMBER_OF_FRAMES: Tag = Tag(0x0028, 0x0008);
    pub const ROWS: Tag = Tag(0x0028, 0x0010);
    pub const COLUMNS: Tag = Tag(0x0028, 0x0011);
    pub const BITS_ALLOCATED: Tag = Tag(0x0028, 0x0100);
    pub const PIXEL_REPRESENTATION: Tag = Tag(0x0028, 0x0103);
    pub const WINDOW_CENTER: Tag = Tag(0x0028, 0x1050);
    pub const WINDOW_WIDTH: Tag = Tag(0x0028, 0x1051);
    pub const RESCALE_INTERCEPT: Tag = Tag(0x0028, 0x1052);
    pub const RESCALE_SLOPE: Tag = Tag(0x0028, 0x1053);
    pub const PIXEL_DATA: Tag = Tag(0x7FE0, 0x0010);
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DicomError {
    #[error("missing DICM signature after the 128-byte preamble")]
    NotDicom,
    #[error("data ends at byte {offset} while reading {what}")]
    Truncated { offset: usize, what: String },
    #[error("invalid value representation {vr:?} at byte {offset}")]
    InvalidVr { offset: usize, vr: [u8; 2] },
    #[error("element {0} has undefined length, which is not supported")]
    UndefinedLength(Tag),
    #[error("transfer syntax {0} is not supported (explicit VR little endian only)")]
    UnsupportedTransferSyntax(String),
    #[error("required element {0} is missing")]
    MissingTag(Tag),
    #[error("element {tag} has an invalid value: {reason}")]
    InvalidValue { tag: Tag, reason: String },
    #[error("unsupported image: {0}")]
    Unsupported(String),
}

type Result<T> = std::result::Result<T, DicomError>;

/// Decoded image attributes plus the raw pixel buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct DicomImage {
    pub rows: u16,
    pub columns: u16,
    pub bits_allocated: u16,
    pub pixel_representation: u16,
    pub photometric: String,
    pub rescale_slope: Option<f64>,
    pub rescale_intercept: Option<f64>,
    pub window_center: Option<f64>,
    pub window_width: Option<f64>,
    /// Exactly `rows·columns·bits_allocated/8` bytes.
    pub pixel_data: Vec<u8>,
}

impl DicomImage {
    pub fn pixel_count(&self) -> usize {
        self.rows as usize * self.columns as usize
    }

    /// Stored pixel values, sign-extended when `pixel_representation == 1`.
    pub fn raw_values(&self) -> Vec<i32> {
        match (self.bits_allocated, self.pixel_representation) {
            (8, 0) => self.pixel_data.iter().map(|&b| b as i32).collect(),
            (8, _) => self.pixel_data.iter().map(|&b| b as i8 as i32).collect(),
            (_, 0) => self
                .pixel_data
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]) as i32)
                .collect(),
            _ => self
                .pixel_data
                .chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]) as i32)
                .collect(),
        }
    }
}

fn has_long_length(vr: &[u8; 2]) -> bool {
    matches!(
        vr,
        b"OB" | b"OD" | b"OF" | b"OL" | b"OV" | b"OW" | b"SQ" | b"SV" | b"UC" | b"UN" | b"UR" | b"UT" | b"UV"
    )
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        match self.pos.checked_add(n) {
            Some(end) if end <= self.buf.len() => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            _ => Err(DicomError::Truncated {
                offset: self.buf.len(),
                what: what.to_string(),
            }),
        }
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn text_value(tag: Tag, bytes: &[u8]) -> Result<String> {
    let s = std::str::from_utf8(bytes).map_err(|_| DicomError::InvalidValue {
        tag,
        reason: "not ASCII text".into(),
    })?;
    Ok(s.trim_matches(|c: char| c == '\0' || c.is_ascii_whitespace()).to_string())
}

fn us_value(tag: Tag, bytes: &[u8]) -> Result<u16> {
    if bytes.len() < 2 {
        return Err(DicomError::InvalidValue {
            tag,
            reason: format!("US value needs 2 bytes, has {}", bytes.len()),
        });
    }
    Ok(u16::from_le_bytes([bytes[0], bytes[1]]))
}

/// First value of a (possibly multi-valued) decimal string.
fn ds_value(tag: Tag, bytes: &[u8]) -> Result<f64> {
    let s = text_value(tag, bytes)?;
    let first = s.split('\\').next().unwrap_or("").trim();
    first
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| DicomError::InvalidValue {
            tag,
            reason: format!("{first:?} is not a decimal number"),
        })
}

#[derive(Default)]
struct Found {
    rows: Option<u16>,
    columns: Option<u16>,
    bits_allocated: Option<u16>,
    pixel_representation: Option<u16>,
    photometric: Option<String>,
    samples_per_pixel: Option<u16>,
    frames: Option<String>,
    slope: Option<f64>,
    intercept: Option<f64>,
    center: Option<f64>,
    width: Option<f64>,
    pixel_data: Option<Vec<u8>>,
}

/// Parses a Part-10 file held in memory.
pub fn parse_dicom_minimal(bytes: &[u8]) -> Result<DicomImage> {
    if bytes.len() < PREAMBLE_LEN + 4 || &bytes[PREAMBLE_LEN..PREAMBLE_LEN + 4] != b"DICM" {
        return Err(DicomError::NotDicom);
    }
    let mut cur = Cursor {
        buf: bytes,
        pos: PREAMBLE_LEN + 4,
    };
    let mut found = Found::default();
    while cur.pos < bytes.len() {
        let start = cur.pos;
        let tag = Tag(cur.u16("element tag")?, cur.u16("element tag")?);
        let vr: [u8; 2] = cur.take(2, "value representation")?.try_into().unwrap();
        if !vr.iter().all(u8::is_ascii_uppercase) {
            return Err(DicomError::InvalidVr { offset: start + 4, vr });
        }
        let len = if has_long_length(&vr) {
            cur.take(2, "reserved bytes")?;
            cur.u32("element length")?
        } else {
            cur.u16("element length")? as u32
        };
        if len == u32::MAX {
            return Err(DicomError::UndefinedLength(tag));
        }
        let value = cur.take(len as usize, &format!("value of {tag}"))?;
        match tag {
            tags::TRANSFER_SYNTAX => {
                let uid = text_value(tag, value)?;
                if uid != EXPLICIT_VR_LE {
                    return Err(DicomError::UnsupportedTransferSyntax(uid));
                }
            }
            tags::ROWS => found.rows = Some(us_value(tag, value)?),
            tags::COLUMNS => found.columns = Some(us_value(tag, value)?),
            tags::BITS_ALLOCATED => found.bits_allocated = Some(us_value(tag, value)?),
            tags::PIXEL_REPRESENTATION => found.pixel_representation = Some(us_value(tag, value)?),
            tags::SAMPLES_PER_PIXEL => found.samples_per_pixel = Some(us_value(tag, value)?),
            tags::PHOTOMETRIC => found.photometric = Some(text_value(tag, value)?),
            tags::NUMBER_OF_FRAMES => found.frames = Some(text_value(tag, value)?),
            tags::RESCALE_SLOPE => found.slope = Some(ds_value(tag, value)?),
            tags::RESCALE_INTERCEPT => found.intercept = Some(ds_value(tag, value)?),
            tags::WINDOW_CENTER => found.center = Some(ds_value(tag, value)?),
            tags::WINDOW_WIDTH => found.width = Some(ds_value(tag, value)?),
            tags::PIXEL_DATA => found.pixel_data = Some(value.to_vec()),
            _ => {}
        }
    }

    let rows = found.rows.ok_or(DicomError::MissingTag(tags::ROWS))?;
    let columns = found.columns.ok_or(DicomError::MissingTag(tags::COLUMNS))?;
    let bits_allocated = found.bits_allocated.ok_or(DicomError::MissingTag(tags::BITS_ALLOCATED))?;
    let pixel_representation = found
        .pixel_representation
        .ok_or(DicomError::MissingTag(tags::PIXEL_REPRESENTATION))?;
    let photometric = found.photometric.ok_or(DicomError::MissingTag(tags::PHOTOMETRIC))?;
    let mut pixel_data = found.pixel_data.ok_or(DicomError::MissingTag(tags::PIXEL_DATA))?;

    if bits_allocated != 8 && bits_allocated != 16 {
        return Err(DicomError::Unsupported(format!("bits allocated {bits_allocated}")));
    }
    if pixel_representation > 1 {
        return Err(DicomError::InvalidValue {
            tag: tags::PIXEL_REPRESENTATION,
            reason: format!("{pixel_representation} is neither 0 nor 1"),
        });
    }
    if photometric != "MONOCHROME2" {
        return Err(DicomError::Unsupported(format!("photometric interpretation {photometric}")));
    }
    if let Some(spp) = found.samples_per_pixel {
        if spp != 1 {
            return Err(DicomError::Unsupported(format!("{spp} samples per pixel")));
        }
    }
    if let Some(frames) = found.frames {
        if frames.parse::<u32>().map_or(true, |f| f > 1) {
            return Err(DicomError::Unsupported(format!("number of frames {frames:?}")));
        }
    }
    if rows == 0 || columns == 0 {
        return Err(DicomError::InvalidValue {
            tag: if rows == 0 { tags::ROWS } else { tags::COLUMNS },
            reason: "zero image dimension".into(),
        });
    }
    let expected = rows as usize * columns as usize * bits_allocated as usize / 8;
    // odd-length values carry one pad byte
    let padded = expected + expected % 2;
    if pixel_data.len() != expected && pixel_data.len() != padded {
        return Err(DicomError::InvalidValue {
            tag: tags::PIXEL_DATA,
            reason: format!("{} bytes, expected {expected}", pixel_data.len()),
        });
    }
    pixel_data.truncate(expected);

    Ok(DicomImage {
        rows,
        columns,
        bits_allocated,
        pixel_representation,
        photometric,
        rescale_slope: found.slope,
        rescale_intercept: found.intercept,
        window_center: found.center,
        window_width: found.width,
        pixel_data,
    })
}

fn push_element(out: &mut Vec<u8>, tag: Tag, vr: &[u8; 2], value: &[u8]) {
    out.extend_from_slice(&tag.0.to_le_bytes());
    out.extend_from_slice(&tag.1.to_le_bytes());
    out.extend_from_slice(vr);
    if has_long_length(vr) {
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&(value.len() as u32).to_le_bytes());
    } else {
        out.extend_from_slice(&(value.len() as u16).to_le_bytes());
    }
    out.extend_from_slice(value);
}

/// Text value padded to even length with `pad`.
fn even_text(s: &str, pad: u8) -> Vec<u8> {
    let mut v = s.as_bytes().to_vec();
    if v.len() % 2 == 1 {
        v.push(pad);
    }
    v
}

fn ds_text(v: f64) -> Vec<u8> {
    even_text(&format!("{v}"), b' ')
}

/// Serializes `img` as a Part-10 file with a file-meta group and the image
/// pixel module in ascending tag order.
pub fn write_dicom_minimal(img: &DicomImage) -> Vec<u8> {
    let mut out = vec![0u8; PREAMBLE_LEN];
    out.extend_from_slice(b"DICM");

    let mut meta = Vec::new();
    push_element(&mut meta, Tag(0x0002, 0x0001), b"OB", &[0, 1]);
    push_element(&mut meta, tags::TRANSFER_SYNTAX, b"UI", &even_text(EXPLICIT_VR_LE, 0));
    push_element(&mut out, Tag(0x0002, 0x0000), b"UL", &(meta.len() as u32).to_le_bytes());
    out.extend(meta);

    push_element(&mut out, tags::SAMPLES_PER_PIXEL, b"US", &1u16.to_le_bytes());
    push_element(&mut out, tags::PHOTOMETRIC, b"CS", &even_text(&img.photometric, b' '));
    push_element(&mut out, tags::ROWS, b"US", &img.rows.to_le_bytes());
    push_element(&mut out, tags::COLUMNS, b"US", &img.columns.to_le_bytes());
    push_element(&mut out, tags::BITS_ALLOCATED, b"US", &img.bits_allocated.to_le_bytes());
    push_element(&mut out, Tag(0x0028, 0x0101), b"US", &img.bits_allocated.to_le_bytes());
    push_element(&mut out, Tag(0x0028, 0x0102), b"US", &(img.bits_allocated - 1).to_le_bytes());
    push_element(&mut out, tags::PIXEL_REPRESENTATION, b"US", &img.pixel_representation.to_le_bytes());
    if let Some(c) = img.window_center {
        push_element(&mut out, tags::WINDOW_CENTER, b"DS", &ds_text(c));
    }
    if let Some(w) = img.window_width {
        push_element(&mut out, tags::WINDOW_WIDTH, b"DS", &ds_text(w));
    }
    if let Some(i) = img.rescale_intercept {
        push_element(&mut out, tags::RESCALE_INTERCEPT, b"DS", &ds_text(i));
    }
    if let Some(s) = img.rescale_slope {
        push_element(&mut out, tags::RESCALE_SLOPE, b"DS", &ds_text(s));
    }
    let vr = if img.bits_allocated == 8 { b"OB" } else { b"OW" };
    let mut pixels = img.pixel_data.clone();
    if pixels.len() % 2 == 1 {
        pixels.push(0);
    }
    push_element(&mut out, tags::PIXEL_DATA, vr, &pixels);
    out
}
