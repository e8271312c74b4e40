//! Occlusion sensitivity maps and visualizations of convolution filters and
//! feature maps.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::netpbm::{GrayImage, RgbImage};
use crate::data::{ImageRecord, Label};
use crate::error::{Error, Result};
use crate::layers::{Layer, Mode};
use crate::network::Msnn;
use crate::tensor::{Scalar, Shape, Tensor};

/// Occluded images evaluated per forward pass.
const OCCLUSION_CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionConfig {
    pub mask_size: usize,
    pub stride: usize,
    /// Normalized intensity painted inside the mask.
    pub mask_value: f32,
}

impl OcclusionConfig {
    /// Mask of one eighth of the extent moved by half its size, filled with
    /// mid-gray.
    pub fn for_extent(extent: usize) -> Self {
        let mask_size = (extent / 8).max(1);
        Self {
            mask_size,
            stride: (mask_size / 2).max(1),
            mask_value: 0.5,
        }
    }

    pub fn validate(&self, extent: usize) -> Result<()> {
        if self.mask_size == 0 || self.mask_size > extent {
            return Err(Error::InvalidArgument(format!(
                "mask size {} must lie in [1, {extent}]",
                self.mask_size
            )));
        }
        if self.stride == 0 || self.stride > self.mask_size {
            return Err(Error::InvalidArgument(format!(
                "stride {} must lie in [1, {}]",
                self.stride, self.mask_size
            )));
        }
        if !(0.0..=1.0).contains(&self.mask_value) {
            return Err(Error::InvalidArgument(format!("mask value {} is outside [0, 1]", self.mask_value)));
        }
        Ok(())
    }

    /// Mask positions per axis.
    pub fn grid_extent(&self, extent: usize) -> usize {
        (extent - self.mask_size) / self.stride + 1
    }
}

/// Drop in target-class probability for each mask position. Positive values
/// mark regions that support the classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityMap {
    pub image_id: String,
    pub target: Label,
    pub config: OcclusionConfig,
    pub extent: usize,
    pub rows: usize,
    pub cols: usize,
    /// Target-class probability of the unoccluded image.
    pub baseline: f64,
    /// Row-major, `rows * cols`.
    pub values: Vec<f64>,
}

impl SensitivityMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    /// Grid cell with the largest value; the first in row-major order wins ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best / self.cols, best % self.cols)
    }

    /// Center of a mask position in pixel coordinates `(y, x)`.
    pub fn mask_center(&self, row: usize, col: usize) -> (f64, f64) {
        let half = self.config.mask_size as f64 / 2.0;
        (
            (row * self.config.stride) as f64 + half,
            (col * self.config.stride) as f64 + half,
        )
    }

    /// One line per grid row.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for r in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|c| self.get(r, c).to_string()).collect();
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }
}

/// Copy of `pixels` with the mask at grid cell `(row, col)` painted in.
pub fn occlude(pixels: &[f32], extent: usize, cfg: &OcclusionConfig, row: usize, col: usize) -> Vec<f32> {
    let mut out = pixels.to_vec();
    let (y0, x0) = (row * cfg.stride, col * cfg.stride);
    for y in y0..y0 + cfg.mask_size {
        out[y * extent + x0..y * extent + x0 + cfg.mask_size].fill(cfg.mask_value);
    }
    out
}

/// Probability mass outside `target`, in double precision. With two classes
/// the target probability is one minus this; working with the complement
/// keeps resolution when the target probability saturates near 1 in `f32`.
fn off_target_mass(probs: &[f32], target: usize) -> f64 {
    probs
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != target)
        .map(|(_, &p)| p as f64)
        .sum()
}

pub fn occlusion_map(net: &Msnn<f32>, image: &ImageRecord, target: Label, cfg: &OcclusionConfig) -> Result<SensitivityMap> {
    let extent = net.spec().input_extent;
    if image.extent != extent {
        return Err(Error::Shape(format!(
            "image {} has extent {}, network expects {extent}",
            image.id, image.extent
        )));
    }
    cfg.validate(extent)?;
    let t = target.class_index();
    let base_probs = net.predict(&image.to_tensor())?;
    let base_off = off_target_mass(base_probs.sample(0), t);
    let n = cfg.grid_extent(extent);
    let positions: Vec<(usize, usize)> = (0..n).flat_map(|r| (0..n).map(move |c| (r, c))).collect();
    let chunks = positions
        .par_chunks(OCCLUSION_CHUNK)
        .map(|part| {
            let mut data = Vec::with_capacity(part.len() * extent * extent);
            for &(r, c) in part {
                data.extend(occlude(&image.pixels, extent, cfg, r, c));
            }
            let batch = Tensor::from_vec(Shape::new(part.len(), extent, extent, 1), data)?;
            let probs = net.predict(&batch)?;
            Ok((0..part.len())
                .map(|i| off_target_mass(probs.sample(i), t) - base_off)
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SensitivityMap {
        image_id: image.id.clone(),
        target,
        config: *cfg,
        extent,
        rows: n,
        cols: n,
        baseline: 1.0 - base_off,
        values: chunks.into_iter().flatten().collect(),
    })
}

/// Linear blue to red ramp; `t` is clamped to `[0, 1]`.
pub fn heat_color(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    [t, 0.0, 1.0 - t]
}

/// Values rescaled to `[0, 1]` over their own range; a flat input maps to 0.5.
fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.5; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Grid coordinate of pixel `p`, aligned so that mask centers land on cells.
fn grid_coord(p: usize, cfg: &OcclusionConfig, cells: usize) -> (usize, usize, f64) {
    let u = ((p as f64 + 0.5 - cfg.mask_size as f64 / 2.0) / cfg.stride as f64).clamp(0.0, (cells - 1) as f64);
    let i0 = u.floor() as usize;
    let i1 = (i0 + 1).min(cells - 1);
    (i0, i1, u - i0 as f64)
}

/// The map bilinearly upsampled to `extent x extent` and min-max normalized
/// to `[0, 1]`, row-major.
pub fn upsample_map(map: &SensitivityMap) -> Vec<f64> {
    let e = map.extent;
    let norm = min_max(&map.values);
    let at = |r: usize, c: usize| norm[r * map.cols + c];
    let cols: Vec<_> = (0..e).map(|x| grid_coord(x, &map.config, map.cols)).collect();
    let mut out = Vec::with_capacity(e * e);
    for y in 0..e {
        let (r0, r1, fy) = grid_coord(y, &map.config, map.rows);
        for &(c0, c1, fx) in &cols {
            let top = at(r0, c0) * (1.0 - fx) + at(r0, c1) * fx;
            let bottom = at(r1, c0) * (1.0 - fx) + at(r1, c1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// The upsampled map colored blue to red and alpha-blended over the
/// grayscale image.
pub fn overlay(image: &ImageRecord, map: &SensitivityMap, alpha: f64) -> Result<RgbImage> {
    if image.extent != map.extent {
        return Err(Error::Shape(format!(
            "map was computed at extent {}, image has extent {}",
            map.extent, image.extent
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} is outside [0, 1]")));
    }
    let e = image.extent;
    let mut data = Vec::with_capacity(e * e * 3);
    for (t, &gray) in upsample_map(map).into_iter().zip(&image.pixels) {
        for ch in heat_color(t) {
            data.push((((1.0 - alpha) * gray as f64 + alpha * ch) * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(RgbImage {
        width: e,
        height: e,
        data,
    })
}

/// Tiles laid out row by row in a near-square grid with 1-pixel white
/// separators.
#[derive(Debug, Clone, PartialEq)]
pub struct TileSheet {
    pub image: GrayImage,
    pub tiles: usize,
    pub tile_height: usize,
    pub tile_width: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

impl TileSheet {
    /// Top-left pixel `(x, y)` of tile `i`.
    pub fn tile_origin(&self, i: usize) -> (usize, usize) {
        (
            (i % self.grid_cols) * (self.tile_width + 1),
            (i / self.grid_cols) * (self.tile_height + 1),
        )
    }
}

fn tile(tiles: &[Vec<f64>], th: usize, tw: usize) -> TileSheet {
    let n = tiles.len();
    let cols = (n as f64).sqrt().ceil().max(1.0) as usize;
    let rows = n.div_ceil(cols).max(1);
    let width = cols * tw + cols - 1;
    let height = rows * th + rows - 1;
    let mut image = GrayImage::new(width, height, 1.0);
    for (i, t) in tiles.iter().enumerate() {
        let norm = min_max(t);
        let (ox, oy) = ((i % cols) * (tw + 1), (i / cols) * (th + 1));
        for y in 0..th {
            for x in 0..tw {
                image.data[(oy + y) * width + ox + x] = norm[y * tw + x] as f32;
            }
        }
    }
    TileSheet {
        image,
        tiles: n,
        tile_height: th,
        tile_width: tw,
        grid_rows: rows,
        grid_cols: cols,
    }
}

/// First-input-channel weights of every filter of the `k`-th convolution
/// (1-based), each normalized to `[0, 1]`.
pub fn visualize_filters<T: Scalar>(net: &Msnn<T>, k: usize) -> Result<TileSheet> {
    let i = net.spec().conv_index(k)?;
    let Layer::Conv(conv) = &net.layers()[i] else {
        return Err(Error::InvalidArgument(format!("layer {} is not a convolution", i + 1)));
    };
    let tiles: Vec<Vec<f64>> = (0..conv.out_c)
        .map(|co| {
            (0..conv.filter_h)
                .flat_map(|ky| (0..conv.filter_w).map(move |kx| (ky, kx)))
                .map(|(ky, kx)| conv.weight(ky, kx, 0, co).as_f64())
                .collect()
        })
        .collect();
    Ok(tile(&tiles, conv.filter_h, conv.filter_w))
}

/// Post-ReLU activations of the `k`-th convolution stage for one image, one
/// normalized tile per channel.
pub fn feature_maps(net: &Msnn<f32>, image: &ImageRecord, k: usize) -> Result<TileSheet> {
    let idx = net.spec().conv_activation_index(k)?;
    if image.extent != net.spec().input_extent {
        return Err(Error::Shape(format!(
            "image {} has extent {}, network expects {}",
            image.id,
            image.extent,
            net.spec().input_extent
        )));
    }
    let fwd = net.forward(&image.to_tensor(), Mode::Infer, &[idx])?;
    let act = fwd.capture(idx).expect("activation captured");
    let s = act.shape();
    let tiles: Vec<Vec<f64>> = (0..s.c)
        .map(|c| {
            (0..s.h)
                .flat_map(|y| (0..s.w).map(move |x| (y, x)))
                .map(|(y, x)| act.at(0, y, x, c) as f64)
                .collect()
        })
        .collect();
    Ok(tile(&tiles, s.h, s.w))
}

/// `Cancer image (0.97); Non-Cancerous image (0.03)`.
pub fn caption(probs: &[f32]) -> String {
    format!(
        "Cancer image ({:.2}); Non-Cancerous image ({:.2})",
        probs[Label::Cancerous.class_index()],
        probs[Label::NonCancerous.class_index()]
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ImageFormat, SourceInfo};
    use crate::network::NetworkSpec;

    fn record(extent: usize, pixels: Vec<f32>) -> ImageRecord {
        ImageRecord::new(
            "t",
            extent,
            pixels,
            SourceInfo {
                format: ImageFormat::Pgm,
                bit_depth: 8,
                window: None,
            },
        )
        .unwrap()
    }

    fn net(extent: usize) -> Msnn<f32> {
        Msnn::initialized(NetworkSpec::msnn(extent).unwrap(), 5)
    }

    #[test]
    fn default_geometry() {
        let c = OcclusionConfig::for_extent(64);
        assert_eq!((c.mask_size, c.stride, c.mask_value), (8, 4, 0.5));
        assert_eq!(c.grid_extent(64), 15);
        assert!(OcclusionConfig { mask_size: 0, ..c }.validate(64).is_err());
        assert!(OcclusionConfig { stride: 9, ..c }.validate(64).is_err());
    }

    #[test]
    fn constant_network_gives_zero_map() {
        let mut n = net(32);
        for l in n.layers_mut() {
            if let Layer::Dense(d) = l {
                if d.out_dim == 2 {
                    d.weights.fill(0.0);
                }
            }
        }
        let img = record(32, (0..1024).map(|i| (i % 7) as f32 / 7.0).collect());
        let m = occlusion_map(&n, &img, Label::Cancerous, &OcclusionConfig::for_extent(32)).unwrap();
        assert!(m.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_position_map() {
        let n = net(32);
        let img = record(32, (0..1024).map(|i| (i % 5) as f32 / 5.0).collect());
        let cfg = OcclusionConfig {
            mask_size: 32,
            stride: 32,
            mask_value: 0.5,
        };
        let m = occlusion_map(&n, &img, Label::Cancerous, &cfg).unwrap();
        assert_eq!((m.rows, m.cols), (1, 1));
        let p0 = n.predict(&img.to_tensor()).unwrap();
        let p1 = n.predict(&record(32, vec![0.5; 1024]).to_tensor()).unwrap();
        let expect = p1.data()[1] as f64 - p0.data()[1] as f64;
        assert_eq!(m.values[0], expect);
    }

    #[test]
    fn heat_endpoints() {
        assert_eq!(heat_color(1.0), [1.0, 0.0, 0.0]);
        assert_eq!(heat_color(0.0), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn overlay_extent_and_flat_map() {
        let img = record(32, vec![0.0; 1024]);
        let cfg = OcclusionConfig::for_extent(32);
        let g = cfg.grid_extent(32);
        let map = SensitivityMap {
            image_id: "t".into(),
            target: Label::Cancerous,
            config: cfg,
            extent: 32,
            rows: g,
            cols: g,
            baseline: 0.5,
            values: vec![0.0; g * g],
        };
        let o = overlay(&img, &map, 1.0).unwrap();
        assert_eq!((o.width, o.height), (32, 32));
        assert!(o.data.chunks(3).all(|p| p == [128, 0, 128]));
        assert!(overlay(&record(64, vec![0.0; 4096]), &map, 0.4).is_err());
    }

    #[test]
    fn overlay_extremes_are_red_and_blue() {
        let img = record(32, vec![0.0; 1024]);
        let cfg = OcclusionConfig {
            mask_size: 16,
            stride: 16,
            mask_value: 0.5,
        };
        let map = SensitivityMap {
            image_id: "t".into(),
            target: Label::Cancerous,
            config: cfg,
            extent: 32,
            rows: 2,
            cols: 2,
            baseline: 0.5,
            values: vec![0.3, 0.1, 0.1, -0.2],
        };
        let o = overlay(&img, &map, 1.0).unwrap();
        assert_eq!(o.pixel(0, 0), [255, 0, 0]);
        assert_eq!(o.pixel(31, 31), [0, 0, 255]);
    }

    #[test]
    fn filter_tiles() {
        let n = net(32);
        let s = visualize_filters(&n, 1).unwrap();
        assert_eq!((s.tiles, s.tile_height, s.tile_width), (8, 6, 6));
        let s = visualize_filters(&n, 3).unwrap();
        assert_eq!((s.tiles, s.tile_height, s.tile_width), (32, 3, 3));
        assert!(visualize_filters(&n, 7).is_err());
    }

    #[test]
    fn constant_filter_is_mid_gray() {
        let mut n = net(32);
        if let Layer::Conv(c) = &mut n.layers_mut()[0] {
            c.weights.fill(0.25);
        }
        let s = visualize_filters(&n, 1).unwrap();
        let (ox, oy) = s.tile_origin(0);
        assert_eq!(s.image.data[oy * s.image.width + ox], 0.5);
    }

    #[test]
    fn feature_map_tiles() {
        let mut n = net(32);
        for l in n.layers_mut() {
            if let Layer::Conv(c) = l {
                c.bias.fill(0.0);
            }
        }
        let img = record(32, vec![0.0; 1024]);
        for (k, ch) in [(1, 8), (3, 32), (5, 128)] {
            assert_eq!(feature_maps(&n, &img, k).unwrap().tiles, ch);
        }
        let s = feature_maps(&n, &img, 1).unwrap();
        assert_eq!((s.tile_height, s.tile_width), (32, 32));
        let (ox, oy) = s.tile_origin(0);
        assert_eq!(s.image.data[oy * s.image.width + ox], 0.5);
    }

    #[test]
    fn caption_format() {
        assert_eq!(caption(&[0.97, 0.03]), "Cancer image (0.97); Non-Cancerous image (0.03)");
    }
}
