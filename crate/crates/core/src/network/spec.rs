use std::fmt;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Number of 2×2 pooling stages; the input extent must be divisible by 2^5.
pub const POOL_STAGES: u32 = 5;
pub const CANONICAL_EXTENT: usize = 512;
/// Width of the penultimate dense layer whose activations feed the KNN head.
pub const FEATURE_WIDTH: usize = 512;
pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv { filters: usize, size: usize },
    BatchNorm,
    Relu,
    MaxPool,
    Gap,
    Fc { units: usize },
    Softmax,
}

impl LayerSpec {
    /// Row label in the parameter table.
    pub fn table_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "Conv",
            LayerSpec::BatchNorm => "BN",
            LayerSpec::Relu => "ReLU",
            LayerSpec::MaxPool => "Max Pooling",
            LayerSpec::Gap => "GAP",
            LayerSpec::Fc { .. } => "FC",
            LayerSpec::Softmax => "SM",
        }
    }

    pub(crate) fn code(&self) -> u8 {
        match self {
            LayerSpec::Conv { .. } => 1,
            LayerSpec::BatchNorm => 2,
            LayerSpec::Relu => 3,
            LayerSpec::MaxPool => 4,
            LayerSpec::Gap => 5,
            LayerSpec::Fc { .. } => 6,
            LayerSpec::Softmax => 7,
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv { filters, size } => write!(f, "conv{filters}x{size}"),
            LayerSpec::BatchNorm => f.write_str("bn"),
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::MaxPool => f.write_str("maxpool2"),
            LayerSpec::Gap => f.write_str("gap"),
            LayerSpec::Fc { units } => write!(f, "fc{units}"),
            LayerSpec::Softmax => f.write_str("softmax"),
        }
    }
}

/// Spatial extents and channels of one activation, without the batch axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ActShape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl fmt::Display for ActShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{},{}]", self.h, self.w, self.c)
    }
}

/// Ordered layer description of the network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NetworkSpec {
    pub input_extent: usize,
    pub channels: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Six conv stages (8 filters 6×6, then 16..256 filters 3×3), each followed
    /// by BN and ReLU and, for the first five, 2×2 max pooling; then global
    /// average pooling, FC(512)+BN+ReLU, FC(2) and softmax.
    pub fn msnn(input_extent: usize) -> Result<Self> {
        let div = 1usize << POOL_STAGES;
        if input_extent == 0 || input_extent % div != 0 {
            return Err(Error::InvalidArgument(format!(
                "input extent {input_extent} is not a positive multiple of {div}"
            )));
        }
        let mut layers = Vec::new();
        let stages = [(8, 6), (16, 3), (32, 3), (64, 3), (128, 3), (256, 3)];
        for (i, &(filters, size)) in stages.iter().enumerate() {
            layers.push(LayerSpec::Conv { filters, size });
            layers.push(LayerSpec::BatchNorm);
            layers.push(LayerSpec::Relu);
            if i + 1 < stages.len() {
                layers.push(LayerSpec::MaxPool);
            }
        }
        layers.extend([
            LayerSpec::Gap,
            LayerSpec::Fc { units: FEATURE_WIDTH },
            LayerSpec::BatchNorm,
            LayerSpec::Relu,
            LayerSpec::Fc { units: NUM_CLASSES },
            LayerSpec::Softmax,
        ]);
        Ok(Self {
            input_extent,
            channels: 1,
            layers,
        })
    }

    pub fn input_shape(&self) -> ActShape {
        ActShape {
            h: self.input_extent,
            w: self.input_extent,
            c: self.channels,
        }
    }

    /// Output shape of every layer, in order.
    pub fn shapes(&self) -> Vec<ActShape> {
        let mut cur = self.input_shape();
        self.layers
            .iter()
            .map(|l| {
                cur = match *l {
                    LayerSpec::Conv { filters, .. } => ActShape { c: filters, ..cur },
                    LayerSpec::MaxPool => ActShape {
                        h: cur.h / 2,
                        w: cur.w / 2,
                        c: cur.c,
                    },
                    LayerSpec::Gap => ActShape { h: 1, w: 1, c: cur.c },
                    LayerSpec::Fc { units } => ActShape { h: 1, w: 1, c: units },
                    LayerSpec::BatchNorm | LayerSpec::Relu | LayerSpec::Softmax => cur,
                };
                cur
            })
            .collect()
    }

    /// Input shape of every layer, in order.
    pub fn input_shapes(&self) -> Vec<ActShape> {
        let mut v = vec![self.input_shape()];
        v.extend(self.shapes());
        v.pop();
        v
    }

    /// Layer index of the `k`-th convolution (1-based).
    pub fn conv_index(&self, k: usize) -> Result<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Conv { .. }))
            .nth(k.wrapping_sub(1))
            .map(|(i, _)| i)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("there is no convolution layer number {k}"))
            })
    }

    pub fn conv_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv { .. }))
            .count()
    }

    /// Index of the ReLU following the `k`-th convolution's batch norm.
    pub fn conv_activation_index(&self, k: usize) -> Result<usize> {
        let i = self.conv_index(k)?;
        match self.layers.get(i + 2) {
            Some(LayerSpec::Relu) => Ok(i + 2),
            _ => Err(Error::InvalidArgument(format!(
                "convolution {k} is not followed by batch norm and relu"
            ))),
        }
    }

    /// Index of the ReLU after the FC(512) stage: the feature layer.
    pub fn feature_index(&self) -> usize {
        let fc = self
            .layers
            .iter()
            .position(|l| matches!(l, LayerSpec::Fc { units } if *units == FEATURE_WIDTH))
            .expect("msnn spec has a feature layer");
        fc + 2
    }

    pub fn canonical_string(&self) -> String {
        let body: Vec<String> = self.layers.iter().map(|l| l.to_string()).collect();
        format!(
            "msnn;extent={};channels={};{}",
            self.input_extent,
            self.channels,
            body.join(";")
        )
    }

    pub fn fingerprint(&self) -> [u8; 32] {
        let digest = Sha256::digest(self.canonical_string().as_bytes());
        let mut out = [0u8; 32];
        out.copy_from_slice(&digest);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extent_must_divide_by_32() {
        assert!(NetworkSpec::msnn(100).is_err());
        assert!(NetworkSpec::msnn(0).is_err());
        assert!(NetworkSpec::msnn(64).is_ok());
    }

    #[test]
    fn extent_64_gap_input() {
        let spec = NetworkSpec::msnn(64).unwrap();
        let gap = spec.layers.iter().position(|l| *l == LayerSpec::Gap).unwrap();
        assert_eq!(spec.input_shapes()[gap], ActShape { h: 2, w: 2, c: 256 });
    }

    #[test]
    fn layer_lookup() {
        let spec = NetworkSpec::msnn(64).unwrap();
        assert_eq!(spec.conv_index(1).unwrap(), 0);
        assert_eq!(spec.conv_index(2).unwrap(), 4);
        assert_eq!(spec.conv_activation_index(1).unwrap(), 2);
        assert!(spec.conv_index(7).is_err());
        assert!(spec.conv_index(0).is_err());
        assert_eq!(spec.shapes()[spec.feature_index()].c, 512);
    }

    #[test]
    fn fingerprint_depends_on_extent() {
        let a = NetworkSpec::msnn(64).unwrap().fingerprint();
        let b = NetworkSpec::msnn(512).unwrap().fingerprint();
        assert_ne!(a, b);
    }
}
