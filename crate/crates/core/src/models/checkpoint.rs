//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes  "FQKDCKPT"
//! version      u32      1
//! modality     u8       0 = a, 1 = b
//! residual     u8
//! has_shared   u8
//! reserved     u8       0
//! enc_layers   u32      number of encoder layers
//! tensors      u32      number of entries in the shape table
//! shape table  tensors x (rows u32, cols u32)
//! payload      f64 values of every tensor, in table order
//! checksum     u64      FNV-1a of the payload bytes
//! ```
//!
//! Tensor order: per encoder layer weight then bias, private head weight and
//! bias, then (if present) shared low weight, bias, shared high weight, bias.
//! Biases are stored with shape `1 x out`.

use std::path::Path;

use ndarray::{Array1, Array2};

use super::{hash_tensors, Linear, MlpEncoder, ModelBundle, SharedClassifiers};
use crate::data::Modality;
use crate::util::write_atomic;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FQKDCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub bundle: ModelBundle,
    pub shared: Option<SharedClassifiers>,
}

impl Checkpoint {
    pub fn new(bundle: ModelBundle, shared: Option<SharedClassifiers>) -> Self {
        Self { bundle, shared }
    }

    fn linears(&self) -> Vec<&Linear> {
        let mut v: Vec<&Linear> = self.bundle.encoder.layers.iter().collect();
        v.push(&self.bundle.head);
        if let Some(s) = &self.shared {
            v.push(&s.low);
            v.push(&s.high);
        }
        v
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let linears = self.linears();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(self.bundle.modality.index() as u8);
        out.push(u8::from(self.bundle.encoder.residual));
        out.push(u8::from(self.shared.is_some()));
        out.push(0);
        out.extend_from_slice(&(self.bundle.encoder.layers.len() as u32).to_le_bytes());
        out.extend_from_slice(&((linears.len() * 2) as u32).to_le_bytes());
        for l in &linears {
            for (r, c) in l.shapes() {
                out.extend_from_slice(&(r as u32).to_le_bytes());
                out.extend_from_slice(&(c as u32).to_le_bytes());
            }
        }
        let tensors: Vec<&[f64]> = linears.iter().flat_map(|l| l.tensors()).collect();
        for t in &tensors {
            for v in *t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&hash_tensors(&tensors).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let modality = Modality::from_index(r.u8()? as usize)
            .ok_or_else(|| Error::Checkpoint("unknown modality tag".into()))?;
        let residual = r.u8()? != 0;
        let has_shared = r.u8()? != 0;
        r.u8()?;
        let enc_layers = r.u32()? as usize;
        let count = r.u32()? as usize;
        let expected = 2 * (enc_layers + 1 + if has_shared { 2 } else { 0 });
        if enc_layers == 0 || count != expected {
            return Err(Error::Checkpoint(format!(
                "shape table has {count} entries, expected {expected}"
            )));
        }
        let mut shapes = Vec::with_capacity(count);
        for _ in 0..count {
            shapes.push((r.u32()? as usize, r.u32()? as usize));
        }
        let payload_start = r.pos;
        let mut linears = Vec::with_capacity(count / 2);
        for pair in shapes.chunks(2) {
            let ((rows, cols), (one, bias_len)) = (pair[0], pair[1]);
            if one != 1 || bias_len != cols {
                return Err(Error::Checkpoint(format!(
                    "bias shape {one}x{bias_len} does not match weight {rows}x{cols}"
                )));
            }
            let weight = Array2::from_shape_vec((rows, cols), r.f64s(rows * cols)?)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            let bias = Array1::from(r.f64s(cols)?);
            linears.push(Linear { weight, bias });
        }
        let payload = &bytes[payload_start..r.pos];
        let stored = r.u64()?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after checksum".into()));
        }
        let tensors: Vec<&[f64]> = linears.iter().flat_map(|l| l.tensors()).collect();
        let computed = hash_tensors(&tensors);
        debug_assert_eq!(
            payload.len(),
            tensors.iter().map(|t| t.len() * 8).sum::<usize>()
        );
        if stored != computed {
            return Err(Error::Checkpoint(format!(
                "checksum mismatch: stored {stored:016x}, computed {computed:016x}"
            )));
        }

        let mut it = linears.into_iter();
        let layers: Vec<Linear> = it.by_ref().take(enc_layers).collect();
        for w in layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::Checkpoint(
                    "encoder layer widths do not chain".into(),
                ));
            }
        }
        let encoder = MlpEncoder { layers, residual };
        if residual && encoder.input_dim() != encoder.feature_dim() {
            return Err(Error::Checkpoint(
                "residual encoder with unequal widths".into(),
            ));
        }
        let head = it.next().expect("counted above");
        if head.input_dim() != encoder.feature_dim() {
            return Err(Error::Checkpoint(
                "head width does not match features".into(),
            ));
        }
        let shared = if has_shared {
            let low = it.next().expect("counted above");
            let high = it.next().expect("counted above");
            for l in [&low, &high] {
                if l.input_dim() != encoder.feature_dim() || l.output_dim() != head.output_dim() {
                    return Err(Error::Checkpoint("shared classifier shape mismatch".into()));
                }
            }
            Some(SharedClassifiers { low, high })
        } else {
            None
        };
        Ok(Self {
            bundle: ModelBundle {
                modality,
                encoder,
                head,
            },
            shared,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

impl ModelBundle {
    /// Copies parameters out of `checkpoint`; every tensor shape must match.
    pub fn restore(&mut self, checkpoint: &Checkpoint) -> Result<()> {
        let src = &checkpoint.bundle;
        if self.encoder.shape() != src.encoder.shape()
            || self.head.weight.dim() != src.head.weight.dim()
        {
            return Err(Error::Checkpoint(format!(
                "cannot restore {:?} into {:?}",
                src.encoder.shape().widths(),
                self.encoder.shape().widths()
            )));
        }
        *self = src.clone();
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint(format!(
                "truncated file: wanted {n} bytes at offset {}",
                self.pos
            ))),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("size overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::EncoderShape;

    fn sample(shared: bool) -> Checkpoint {
        let shape = EncoderShape {
            input_dim: 8,
            hidden: vec![5, 7],
            feature_dim: 8,
            residual: true,
        };
        let bundle = ModelBundle::init(Modality::B, &shape, 3, 17).unwrap();
        Checkpoint::new(bundle, shared.then(|| SharedClassifiers::init(8, 3, 17)))
    }

    #[test]
    fn bytes_round_trip_bitwise() {
        for shared in [false, true] {
            let c = sample(shared);
            let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_bytes(), c.to_bytes());
        }
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let mut bytes = sample(true).to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    }

    #[test]
    fn truncated_and_foreign_files_are_rejected() {
        let bytes = sample(false).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"not a checkpoint at all").is_err());
    }

    #[test]
    fn restore_checks_shapes() {
        let c = sample(false);
        let mut same = ModelBundle::init(Modality::B, &c.bundle.encoder.shape(), 3, 99).unwrap();
        same.restore(&c).unwrap();
        assert_eq!(same, c.bundle);

        let other = EncoderShape {
            input_dim: 8,
            hidden: vec![4],
            feature_dim: 8,
            residual: false,
        };
        let mut different = ModelBundle::init(Modality::B, &other, 3, 1).unwrap();
        assert!(matches!(different.restore(&c), Err(Error::Checkpoint(_))));
    }
}
