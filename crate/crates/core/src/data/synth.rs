//! Seeded synthetic CT-like corpus.
//!
//! Negatives are a smoothed noise field around mid-gray. Positives are the
//! same kind of field with one to three bright Gaussian "nodules" whose
//! centers are recorded, so localization can be checked against ground truth.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, ImageFormat, ImageRecord, Label, Manifest, ManifestRow, SourceInfo};
use crate::error::{Error, Result};
use crate::network::POOL_STAGES;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobParams {
    /// Gaussian sigma as a fraction of the extent.
    pub radius: f64,
    /// Relative sigma jitter, uniform in `[1 - j, 1 + j]`.
    pub radius_jitter: f64,
    /// Peak intensity added at a blob center.
    pub contrast: f64,
    pub min_count: usize,
    pub max_count: usize,
}

impl Default for BlobParams {
    fn default() -> Self {
        Self {
            radius: 0.07,
            radius_jitter: 0.2,
            contrast: 0.5,
            min_count: 1,
            max_count: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub count_pos: usize,
    pub count_neg: usize,
    pub extent: usize,
    pub seed: u64,
    /// Mean background intensity.
    pub background: f64,
    /// Standard deviation of the smoothed background texture.
    pub texture: f64,
    pub blob: BlobParams,
}

impl SynthConfig {
    pub fn new(count_pos: usize, count_neg: usize, extent: usize, seed: u64) -> Self {
        Self {
            count_pos,
            count_neg,
            extent,
            seed,
            background: 0.5,
            texture: 0.05,
            blob: BlobParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobCenter {
    /// Row coordinate in pixels.
    pub y: f64,
    /// Column coordinate in pixels.
    pub x: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub config: SynthConfig,
    pub records: Vec<ImageRecord>,
    pub labels: Vec<Label>,
    /// Empty for negatives.
    pub blobs: Vec<Vec<BlobCenter>>,
}

fn box_blur(field: &mut [f64], n: usize, r: usize) {
    if r == 0 {
        return;
    }
    let mut tmp = vec![0.0; field.len()];
    // horizontal, then vertical, clamped at the border
    for y in 0..n {
        for x in 0..n {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(n - 1);
            let s: f64 = field[y * n + lo..=y * n + hi].iter().sum();
            tmp[y * n + x] = s / (hi - lo + 1) as f64;
        }
    }
    for y in 0..n {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(n - 1);
        for x in 0..n {
            let s: f64 = (lo..=hi).map(|yy| tmp[yy * n + x]).sum();
            field[y * n + x] = s / (hi - lo + 1) as f64;
        }
    }
}

/// Zero-mean, unit-variance smoothed noise.
fn texture_field(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut f: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(rng)).collect();
    let r = (n / 32).max(1);
    box_blur(&mut f, n, r);
    box_blur(&mut f, n, r);
    let mean = f.iter().sum::<f64>() / f.len() as f64;
    let var = f.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / f.len() as f64;
    let sd = var.sqrt().max(1e-12);
    f.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    f
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticCorpus> {
    let div = 1usize << POOL_STAGES;
    if cfg.extent == 0 || cfg.extent % div != 0 {
        return Err(Error::InvalidArgument(format!(
            "synthetic extent {} is not a positive multiple of {div}",
            cfg.extent
        )));
    }
    let b = &cfg.blob;
    if b.min_count == 0 || b.min_count > b.max_count || !(b.radius > 0.0) || !(0.0..1.0).contains(&b.radius_jitter) {
        return Err(Error::InvalidArgument("invalid blob parameters".into()));
    }
    let n = cfg.extent;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::new();
    let mut labels = Vec::new();
    let mut blobs = Vec::new();
    let total = cfg.count_pos + cfg.count_neg;
    for i in 0..total {
        let positive = i < cfg.count_pos;
        let tex = texture_field(&mut rng, n);
        let mut img: Vec<f64> = tex.iter().map(|t| cfg.background + cfg.texture * t).collect();
        let mut centers = Vec::new();
        if positive {
            let count = rng.random_range(b.min_count..=b.max_count);
            let base = b.radius * n as f64;
            for _ in 0..count {
                let sigma = base * rng.random_range(1.0 - b.radius_jitter..=1.0 + b.radius_jitter);
                let margin = (2.0 * sigma).min(n as f64 / 2.0 - 1.0);
                let y = rng.random_range(margin..n as f64 - margin);
                let x = rng.random_range(margin..n as f64 - margin);
                for py in 0..n {
                    for px in 0..n {
                        let dy = py as f64 + 0.5 - y;
                        let dx = px as f64 + 0.5 - x;
                        img[py * n + px] += b.contrast * (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
                    }
                }
                centers.push(BlobCenter { y, x, sigma });
            }
        }
        let (id, label) = if positive {
            (format!("syn_pos_{i:04}"), Label::Cancerous)
        } else {
            (format!("syn_neg_{:04}", i - cfg.count_pos), Label::NonCancerous)
        };
        // quantize to 8 bits so the PGM written to disk reloads bit-exactly
        let pixels = img
            .iter()
            .map(|&v| ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32)
            .collect();
        records.push(ImageRecord::new(
            id,
            n,
            pixels,
            SourceInfo {
                format: ImageFormat::Pgm,
                bit_depth: 8,
                window: None,
            },
        )?);
        labels.push(label);
        blobs.push(centers);
    }
    Ok(SyntheticCorpus {
        config: *cfg,
        records,
        labels,
        blobs,
    })
}

impl SyntheticCorpus {
    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::new(self.records.clone(), self.labels.clone())
    }

    pub fn manifest(&self, root: PathBuf) -> Manifest {
        Manifest {
            root,
            rows: self
                .records
                .iter()
                .zip(&self.labels)
                .map(|(r, &label)| ManifestRow {
                    path: PathBuf::from(format!("{}.pgm", r.id)),
                    label,
                    patient_id: None,
                })
                .collect(),
        }
    }

    /// Writes one PGM per image, `manifest.csv` and `blobs.csv`
    /// (`image_id,y,x,sigma`) into `dir`. Returns the manifest path.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for r in &self.records {
            r.to_gray().to_pgm().write(dir.join(format!("{}.pgm", r.id)))?;
        }
        let manifest = self.manifest(dir.to_path_buf());
        let mpath = dir.join("manifest.csv");
        fs::write(&mpath, manifest.to_csv()).map_err(|e| Error::io(&mpath, e))?;
        let mut blobs = String::from("image_id,y,x,sigma\n");
        for (r, bs) in self.records.iter().zip(&self.blobs) {
            for b in bs {
                blobs.push_str(&format!("{},{},{},{}\n", r.id, b.y, b.x, b.sigma));
            }
        }
        let bpath = dir.join("blobs.csv");
        fs::write(&bpath, blobs).map_err(|e| Error::io(&bpath, e))?;
        Ok(mpath)
    }
}
