//! Self-describing binary checkpoint: little-endian floats,
//! length-prefixed block names, optional optimizer moments, and a CRC.
//!
//! Layout (all integers little-endian):
//!   magic "JRT1" | u32 version | u8 float width (4|8)
//!   u64 step | u64 epoch
//!   u32 config length | config JSON bytes
//!   u32 block count
//!   per block: u16 name length | name | u8 rank | u32 dims... | data
//!   u8 optimizer flag
//!   if set: u64 optimizer step | per block: m data | v data
//!   u32 CRC-32 of everything above

use crate::numerics::{Precision, Scalar, Tensor};
use crate::optim::{AdamW, AdamWHyper};
use crate::params::{ModelPar, ParamTree};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"JRT1";
pub const VERSION: u32 = 1;

/// First/second moment vectors per block, in parameter walk order.
pub type MomentBlocks<T> = Vec<(Vec<T>, Vec<T>)>;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    VersionMismatch(u32),
    #[error("checkpoint is {stored} but caller expects {expected}")]
    PrecisionMismatch { stored: Precision, expected: Precision },
    #[error("CRC mismatch: file corrupted")]
    CrcMismatch,
    #[error("truncated checkpoint ({0})")]
    Truncated(&'static str),
    #[error("block {name}: shape {got:?} does not match expected {expect:?}")]
    ShapeMismatch { name: String, got: Vec<usize>, expect: Vec<usize> },
    #[error("parameter block {0} missing from checkpoint")]
    MissingBlock(String),
    #[error("checkpoint holds {got} blocks, model expects {expect}")]
    BlockCount { got: usize, expect: usize },
}

/// Everything a training run needs to resume or evaluate.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub step: u64,
    pub epoch: u64,
    pub config_json: String,
    /// (name, tensor) in parameter walk order.
    pub blocks: Vec<(String, Tensor<T>)>,
    /// Optimizer step count plus (m, v) per block, same order as `blocks`.
    pub optimizer: Option<(u64, MomentBlocks<T>)>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn from_params(
        params: &ModelPar<Tensor<T>>,
        optimizer: Option<&AdamW<T>>,
        step: u64,
        epoch: u64,
        config_json: String,
    ) -> Self {
        let mut blocks = Vec::new();
        params.walk("", &mut |name: &str, t: &Tensor<T>| {
            blocks.push((name.to_string(), t.clone()));
        });
        Checkpoint {
            step,
            epoch,
            config_json,
            blocks,
            optimizer: optimizer.map(|o| (o.step_count, o.moments.clone())),
        }
    }

    /// Copy stored blocks into a parameter tree of the same layout.
    /// Refuses on any missing name or shape mismatch.
    pub fn load_into(&self, params: &mut ModelPar<Tensor<T>>) -> Result<(), CheckpointError> {
        let mut expect = 0;
        params.walk("", &mut |_, _t: &Tensor<T>| expect += 1);
        if self.blocks.len() != expect {
            return Err(CheckpointError::BlockCount { got: self.blocks.len(), expect });
        }
        let mut idx = 0;
        let mut failure: Option<CheckpointError> = None;
        params.walk_mut("", &mut |name: &str, t: &mut Tensor<T>| {
            if failure.is_some() {
                return;
            }
            let (stored_name, stored) = &self.blocks[idx];
            idx += 1;
            if stored_name != name {
                failure = Some(CheckpointError::MissingBlock(name.to_string()));
                return;
            }
            if stored.shape() != t.shape() {
                failure = Some(CheckpointError::ShapeMismatch {
                    name: name.to_string(),
                    got: stored.shape().to_vec(),
                    expect: t.shape().to_vec(),
                });
                return;
            }
            *t = stored.clone();
        });
        match failure {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// Rebuild an optimizer from the stored moments.
    pub fn restore_optimizer(
        &self,
        hyper: AdamWHyper,
        params: &ModelPar<Tensor<T>>,
    ) -> Result<Option<AdamW<T>>, CheckpointError> {
        let Some((step_count, moments)) = &self.optimizer else {
            return Ok(None);
        };
        let mut opt = AdamW::new(hyper, params);
        if moments.len() != opt.moments.len() {
            return Err(CheckpointError::BlockCount {
                got: moments.len(),
                expect: opt.moments.len(),
            });
        }
        opt.step_count = *step_count;
        opt.moments = moments.clone();
        Ok(Some(opt))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(T::BYTE_WIDTH as u8);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&(self.config_json.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_json.as_bytes());
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for (name, tensor) in &self.blocks {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(tensor.ndim() as u8);
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in tensor.data() {
                v.write_le(&mut out);
            }
        }
        match &self.optimizer {
            None => out.push(0),
            Some((step_count, moments)) => {
                out.push(1);
                out.extend_from_slice(&step_count.to_le_bytes());
                for (m, v) in moments {
                    for &x in m {
                        x.write_le(&mut out);
                    }
                    for &x in v {
                        x.write_le(&mut out);
                    }
                }
            }
        }
        let crc = crc32(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::VersionMismatch(version));
        }
        let width = r.u8()? as usize;
        if width != T::BYTE_WIDTH {
            let stored = if width == 4 { Precision::F32 } else { Precision::F64 };
            let expected =
                if T::BYTE_WIDTH == 4 { Precision::F32 } else { Precision::F64 };
            return Err(CheckpointError::PrecisionMismatch { stored, expected });
        }
        // CRC covers everything before the trailing u32.
        if bytes.len() < 4 {
            return Err(CheckpointError::Truncated("crc"));
        }
        let body = &bytes[..bytes.len() - 4];
        let stored_crc =
            u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
        if crc32(body) != stored_crc {
            return Err(CheckpointError::CrcMismatch);
        }

        let step = r.u64()?;
        let epoch = r.u64()?;
        let config_len = r.u32()? as usize;
        let config_json = String::from_utf8(r.take(config_len)?.to_vec())
            .map_err(|_| CheckpointError::Truncated("config utf8"))?;
        let n_blocks = r.u32()? as usize;
        let mut blocks = Vec::with_capacity(n_blocks);
        for _ in 0..n_blocks {
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| CheckpointError::Truncated("name utf8"))?;
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let numel: usize = shape.iter().product();
            let data = r.floats::<T>(numel)?;
            let tensor = Tensor::new(shape, data)
                .map_err(|_| CheckpointError::Truncated("tensor shape"))?;
            blocks.push((name, tensor));
        }
        let optimizer = match r.u8()? {
            0 => None,
            _ => {
                let step_count = r.u64()?;
                let mut moments = Vec::with_capacity(blocks.len());
                for (_, t) in &blocks {
                    let m = r.floats::<T>(t.numel())?;
                    let v = r.floats::<T>(t.numel())?;
                    moments.push((m, v));
                }
                Some((step_count, moments))
            }
        };
        Ok(Checkpoint { step, epoch, config_json, blocks, optimizer })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.encode())
            .map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path)
            .map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
        Self::decode(&bytes)
    }
}

/// Read the float width of a checkpoint without decoding it.
pub fn peek_precision(path: &Path) -> Result<Precision, CheckpointError> {
    let bytes = std::fs::read(path)
        .map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
    if bytes.len() < 9 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch(version));
    }
    match bytes[8] {
        4 => Ok(Precision::F32),
        8 => Ok(Precision::F64),
        _ => Err(CheckpointError::Truncated("float width")),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated("unexpected end"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn floats<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>, CheckpointError> {
        let raw = self.take(n * T::BYTE_WIDTH)?;
        Ok(raw.chunks_exact(T::BYTE_WIDTH).map(T::read_le).collect())
    }
}

/// CRC-32 (IEEE 802.3, reflected 0xEDB88320).
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = !0u32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xEDB8_8320 & mask);
        }
    }
    !crc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{Init, ModelDims};

    fn checkpoint_fixture(seed: u64) -> (ModelPar<Tensor<f64>>, Checkpoint<f64>) {
        let dims = ModelDims::tiny();
        let params: ModelPar<Tensor<f64>> = ModelPar::init(&dims, seed, Init::RandomAll { std: 0.2 });
        let mut opt = AdamW::new(AdamWHyper::default(), &params);
        opt.step_count = 17;
        opt.moments[0].0[0] = 0.5;
        let ckpt = Checkpoint::from_params(&params, Some(&opt), 420, 7, "{\"seed\":1}".into());
        (params, ckpt)
    }

    #[test]
    fn crc32_known_vector() {
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
    }

    #[test]
    fn encode_decode_roundtrip_is_byte_identical() {
        let (_, ckpt) = checkpoint_fixture(1);
        let bytes = ckpt.encode();
        let decoded = Checkpoint::<f64>::decode(&bytes).unwrap();
        let bytes2 = decoded.encode();
        assert_eq!(bytes, bytes2);
        assert_eq!(decoded.step, 420);
        assert_eq!(decoded.epoch, 7);
        assert_eq!(decoded.config_json, "{\"seed\":1}");
    }

    #[test]
    fn load_into_restores_values() {
        let (params, ckpt) = checkpoint_fixture(2);
        let dims = ModelDims::tiny();
        let mut fresh: ModelPar<Tensor<f64>> = ModelPar::init(&dims, 999, Init::Training);
        ckpt.load_into(&mut fresh).unwrap();
        assert_eq!(fresh.named_blocks()[3].2, params.named_blocks()[3].2);
        let opt = ckpt.restore_optimizer(AdamWHyper::default(), &fresh).unwrap().unwrap();
        assert_eq!(opt.step_count, 17);
        assert_eq!(opt.moments[0].0[0], 0.5);
    }

    #[test]
    fn shape_mismatch_is_refused() {
        let (_, ckpt) = checkpoint_fixture(3);
        let mut dims = ModelDims::tiny();
        dims.d_ff = 8; // different hidden width
        let mut other: ModelPar<Tensor<f64>> = ModelPar::init(&dims, 1, Init::Training);
        match ckpt.load_into(&mut other) {
            Err(CheckpointError::ShapeMismatch { .. }) => {}
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_refused() {
        let (_, ckpt) = checkpoint_fixture(4);
        let mut bytes = ckpt.encode();
        bytes[4] = 99; // bump version
        match Checkpoint::<f64>::decode(&bytes) {
            Err(CheckpointError::VersionMismatch(99)) => {}
            other => panic!("expected version mismatch, got {other:?}"),
        }
    }

    #[test]
    fn corruption_is_detected() {
        let (_, ckpt) = checkpoint_fixture(5);
        let mut bytes = ckpt.encode();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xFF;
        match Checkpoint::<f64>::decode(&bytes) {
            Err(CheckpointError::CrcMismatch) => {}
            other => panic!("expected CRC mismatch, got {other:?}"),
        }
    }

    #[test]
    fn precision_mismatch_is_refused() {
        let (_, ckpt) = checkpoint_fixture(6);
        let bytes = ckpt.encode();
        match Checkpoint::<f32>::decode(&bytes) {
            Err(CheckpointError::PrecisionMismatch { .. }) => {}
            other => panic!("expected precision mismatch, got {other:?}"),
        }
    }
}
