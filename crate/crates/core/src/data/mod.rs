//! Image ingestion, label manifests and the synthetic corpus generator.

pub mod dicom;
mod manifest;
pub mod netpbm;
pub mod synth;
mod window;

pub use manifest::{Manifest, ManifestRow};
pub use window::{window_to_unit, WindowParams};

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Binary diagnosis label. Cancerous is the positive class and class index 0
/// of the network output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Cancerous,
    NonCancerous,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Cancerous, Label::NonCancerous];

    pub fn class_index(self) -> usize {
        match self {
            Label::Cancerous => 0,
            Label::NonCancerous => 1,
        }
    }

    pub fn from_class_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Cancerous),
            1 => Some(Label::NonCancerous),
            _ => None,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Cancerous
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Cancerous => "cancerous",
            Label::NonCancerous => "non_cancerous",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "cancerous" => Ok(Label::Cancerous),
            "non_cancerous" => Ok(Label::NonCancerous),
            other => Err(Error::Manifest(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageFormat {
    Pgm,
    /// Little-endian unsigned 16-bit samples; extent in a `<file>.extent` sidecar.
    Raw16,
    Dicom,
}

impl ImageFormat {
    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .unwrap_or_default();
        match ext.as_str() {
            "pgm" => Ok(ImageFormat::Pgm),
            "raw" | "raw16" => Ok(ImageFormat::Raw16),
            "dcm" | "dicom" => Ok(ImageFormat::Dicom),
            _ => Err(Error::Unsupported(format!(
                "cannot infer image format of {}",
                path.display()
            ))),
        }
    }
}

impl FromStr for ImageFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgm" => Ok(ImageFormat::Pgm),
            "raw16" => Ok(ImageFormat::Raw16),
            "dicom" => Ok(ImageFormat::Dicom),
            other => Err(Error::InvalidArgument(format!("unknown image format {other:?}"))),
        }
    }
}

/// Where an image came from and how it was mapped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceInfo {
    pub format: ImageFormat,
    pub bit_depth: u16,
    /// Window applied to DICOM data (a display convention, not a clinical one).
    pub window: Option<WindowParams>,
}

/// Square grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub extent: usize,
    pub pixels: Vec<f32>,
    pub source: SourceInfo,
}

impl ImageRecord {
    pub fn new(id: impl Into<String>, extent: usize, pixels: Vec<f32>, source: SourceInfo) -> Result<Self> {
        let id = id.into();
        if pixels.len() != extent * extent {
            return Err(Error::Shape(format!(
                "image {id}: {} pixels for extent {extent}",
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Format(format!("image {id}: intensity {v} outside [0,1]")));
        }
        Ok(Self {
            id,
            extent,
            pixels,
            source,
        })
    }

    /// `[1, extent, extent, 1]` tensor.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_raw(Shape::new(1, self.extent, self.extent, 1), self.pixels.clone())
    }

    pub fn to_gray(&self) -> netpbm::GrayImage {
        netpbm::GrayImage {
            width: self.extent,
            height: self.extent,
            data: self.pixels.clone(),
        }
    }
}

fn square_extent(id: &str, w: usize, h: usize) -> Result<usize> {
    if w != h {
        return Err(Error::Unsupported(format!("image {id} is {w}x{h}; only square images are accepted")));
    }
    Ok(w)
}

fn id_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Reads one image and normalizes it to `[0, 1]`.
///
/// PGM samples are divided by `maxval`, raw16 samples by 65535, and DICOM
/// pixels go through rescale and windowing: `window` overrides the file's
/// window tags, which in turn override the soft-tissue default.
pub fn load_image(path: impl AsRef<Path>, format: ImageFormat, window: Option<WindowParams>) -> Result<ImageRecord> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = id_of(path);
    match format {
        ImageFormat::Pgm => {
            let pgm = netpbm::decode_pgm(&bytes)?;
            let extent = square_extent(&id, pgm.width, pgm.height)?;
            let depth = if pgm.maxval < 256 { 8 } else { 16 };
            ImageRecord::new(
                id,
                extent,
                pgm.to_unit(),
                SourceInfo {
                    format,
                    bit_depth: depth,
                    window: None,
                },
            )
        }
        ImageFormat::Raw16 => {
            let mut sidecar = path.as_os_str().to_owned();
            sidecar.push(".extent");
            let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
            let extent: usize = text
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad extent {:?} in sidecar", text.trim())))?;
            decode_raw16(&id, &bytes, extent)
        }
        ImageFormat::Dicom => {
            let img = dicom::parse_dicom_minimal(&bytes)?;
            dicom_to_record(id, &img, window)
        }
    }
}

/// Little-endian u16 samples divided by 65535.
pub fn decode_raw16(id: &str, bytes: &[u8], extent: usize) -> Result<ImageRecord> {
    let want = extent * extent * 2;
    if bytes.len() < want {
        return Err(Error::Truncated(format!("raw16 image holds {} bytes, expected {want}", bytes.len())));
    }
    if bytes.len() > want {
        return Err(Error::Format(format!("raw16 image holds {} bytes, expected {want}", bytes.len())));
    }
    let pixels = bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]) as f32 / 65535.0)
        .collect();
    ImageRecord::new(
        id,
        extent,
        pixels,
        SourceInfo {
            format: ImageFormat::Raw16,
            bit_depth: 16,
            window: None,
        },
    )
}

pub fn dicom_to_record(id: String, img: &dicom::DicomImage, window: Option<WindowParams>) -> Result<ImageRecord> {
    let extent = square_extent(&id, img.columns as usize, img.rows as usize)?;
    let win = window.unwrap_or(match (img.window_center, img.window_width) {
        (Some(center), Some(width)) => WindowParams { center, width },
        _ => WindowParams::SOFT_TISSUE,
    });
    let slope = img.rescale_slope.unwrap_or(1.0);
    let intercept = img.rescale_intercept.unwrap_or(0.0);
    let pixels = img
        .raw_values()
        .into_iter()
        .map(|raw| window_to_unit(raw as f64, slope, intercept, win.center, win.width).map(|v| v as f32))
        .collect::<Result<Vec<f32>>>()?;
    ImageRecord::new(
        id,
        extent,
        pixels,
        SourceInfo {
            format: ImageFormat::Dicom,
            bit_depth: img.bits_allocated,
            window: Some(win),
        },
    )
}

/// Images with labels, all of one extent.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub extent: usize,
    pub records: Vec<ImageRecord>,
    pub labels: Vec<Label>,
}

impl Dataset {
    pub fn new(records: Vec<ImageRecord>, labels: Vec<Label>) -> Result<Self> {
        if records.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} images but {} labels",
                records.len(),
                labels.len()
            )));
        }
        let extent = records
            .first()
            .map(|r| r.extent)
            .ok_or_else(|| Error::InvalidArgument("empty dataset".into()))?;
        if let Some(r) = records.iter().find(|r| r.extent != extent) {
            return Err(Error::Shape(format!(
                "image {} has extent {}, dataset extent is {extent}",
                r.id, r.extent
            )));
        }
        Ok(Self {
            extent,
            records,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `[indices.len(), extent, extent, 1]` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        let mut data = Vec::with_capacity(indices.len() * self.extent * self.extent);
        for &i in indices {
            let r = self
                .records
                .get(i)
                .ok_or_else(|| Error::InvalidArgument(format!("image index {i} out of range")))?;
            data.extend_from_slice(&r.pixels);
        }
        Ok(Tensor::from_raw(Shape::new(indices.len(), self.extent, self.extent, 1), data))
    }

    pub fn class_targets(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i].class_index()).collect()
    }
}
