//! Binary checkpoint format (all integers and scalars little-endian):
//!
//! ```text
//! "MSNN"                 magic, 4 bytes
//! version                u8
//! input_extent           u32
//! fingerprint            32 bytes, SHA-256 of the canonical layer list
//! seed                   u64
//! epochs_completed       u32
//! layer_count            u32
//! layer_count × {
//!     kind               u8
//!     value_count        u32
//!     values             value_count × f32
//! }
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MSNN";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerBlob {
    pub kind: u8,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub input_extent: u32,
    pub fingerprint: [u8; 32],
    pub seed: u64,
    pub epochs_completed: u32,
    pub blobs: Vec<LayerBlob>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::CorruptCheckpoint(format!("file ends inside {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let values: usize = self.blobs.iter().map(|b| b.values.len()).sum();
        let mut out = Vec::with_capacity(57 + self.blobs.len() * 5 + values * 4);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&self.input_extent.to_le_bytes());
        out.extend_from_slice(&self.fingerprint);
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.epochs_completed.to_le_bytes());
        out.extend_from_slice(&(self.blobs.len() as u32).to_le_bytes());
        for b in &self.blobs {
            out.push(b.kind);
            out.extend_from_slice(&(b.values.len() as u32).to_le_bytes());
            for v in &b.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::CorruptCheckpoint("missing MSNN magic".into()));
        }
        let version = r.u8("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let input_extent = r.u32("header")?;
        let mut fingerprint = [0u8; 32];
        fingerprint.copy_from_slice(r.take(32, "fingerprint")?);
        let seed = r.u64("header")?;
        let epochs_completed = r.u32("header")?;
        let count = r.u32("header")? as usize;
        let mut blobs = Vec::new();
        for i in 0..count {
            let kind = r.u8("layer header")?;
            let n = r.u32("layer header")? as usize;
            let raw = r.take(
                n.checked_mul(4)
                    .ok_or_else(|| Error::CorruptCheckpoint("layer size overflows".into()))?,
                &format!("layer {} values", i + 1),
            )?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            blobs.push(LayerBlob { kind, values });
        }
        if r.pos != bytes.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            input_extent,
            fingerprint,
            seed,
            epochs_completed,
            blobs,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
