//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "GMCK" | version u32 | vocabulary hash [32]
//! config text (u32 length, UTF-8 key=value lines)
//! token list, edge list (u32 count, then u32 length + UTF-8 per entry)
//! epoch u32 | dev graph accuracy f64
//! tensor count u32, then per tensor:
//!   name (u32 length + UTF-8) | dtype u8 | ndim u32 | dims u32* | values
//! SHA-256 of every preceding byte [32]
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{parse_config, config_text, TrainConfig, TrainError};
use crate::model::{Model, ModelConfig};
use crate::tensor::{DType, ParamSet, Real, Tensor};
use crate::vocab::{VocabKind, Vocabulary};

pub const MAGIC: &[u8; 4] = b"GMCK";
pub const VERSION: u32 = 1;

/// A trained model with the settings and dev score it was selected by.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub train: TrainConfig,
    pub epoch: usize,
    pub dev_accuracy: f64,
}

/// SHA-256 over both vocabulary fingerprints.
pub fn vocab_hash(tokens: &Vocabulary, edges: &Vocabulary) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(tokens.fingerprint());
    h.update(edges.fingerprint());
    h.finalize().into()
}

fn put_u32(out: &mut Vec<u8>, x: usize) {
    out.extend_from_slice(&(x as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

fn corrupt(msg: impl Into<String>) -> TrainError {
    TrainError::CorruptCheckpoint(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| corrupt("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, TrainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn str(&mut self) -> Result<String, TrainError> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("invalid UTF-8"))
    }

    fn list(&mut self) -> Result<Vec<String>, TrainError> {
        let n = self.u32()?;
        (0..n).map(|_| self.str()).collect()
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.model;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&vocab_hash(&m.tokens, &m.edges));
        put_str(&mut out, &config_text(&m.config, &self.train));
        for v in [&m.tokens, &m.edges] {
            put_u32(&mut out, v.len());
            for t in v.tokens() {
                put_str(&mut out, t);
            }
        }
        put_u32(&mut out, self.epoch);
        out.extend_from_slice(&self.dev_accuracy.to_le_bytes());
        put_u32(&mut out, m.params.len());
        for (name, t) in m.params.iter() {
            put_str(&mut out, name);
            out.push(f32::DTYPE as u8);
            put_u32(&mut out, t.shape().len());
            for &d in t.shape() {
                put_u32(&mut out, d);
            }
            for &x in t.data() {
                x.write_le(&mut out);
            }
        }
        let digest: [u8; 32] = Sha256::digest(&out).into();
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        if bytes.get(..4) != Some(MAGIC.as_slice()) {
            return Err(corrupt("bad magic"));
        }
        if bytes.len() < 4 + 4 + 32 + 32 {
            return Err(corrupt("truncated"));
        }
        let (bytes, digest) = bytes.split_at(bytes.len() - 32);
        let mut r = Reader { bytes, pos: 4 };
        let version = r.u32()? as u32;
        if version != VERSION {
            let hint = if version.swap_bytes() == VERSION { " (wrong byte order)" } else { "" };
            return Err(corrupt(format!("unsupported version {version}{hint}")));
        }
        if Sha256::digest(bytes).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }
        let hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let text = r.str()?;
        let (mut config, mut train) = (ModelConfig::default(), TrainConfig::default());
        parse_config(&text, &mut config, &mut train).map_err(|e| corrupt(format!("config: {e}")))?;
        let tokens = Vocabulary::from_token_list(VocabKind::Tokens, r.list()?).map_err(|e| corrupt(e.to_string()))?;
        let edges = Vocabulary::from_token_list(VocabKind::Edges, r.list()?).map_err(|e| corrupt(e.to_string()))?;
        if vocab_hash(&tokens, &edges) != hash {
            return Err(corrupt("vocabulary hash mismatch"));
        }
        let epoch = r.u32()?;
        let dev_accuracy = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let count = r.u32()?;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let name = r.str()?;
            let dtype = DType::from_tag(r.take(1)?[0]).ok_or_else(|| corrupt(format!("{name}: unknown dtype")))?;
            if dtype != f32::DTYPE {
                return Err(corrupt(format!("{name}: expected 32-bit values")));
            }
            let ndim = r.u32()?;
            let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| corrupt("shape overflow"))?;
            let raw = r.take(n.checked_mul(dtype.size()).ok_or_else(|| corrupt("shape overflow"))?)?;
            let data = raw.chunks_exact(dtype.size()).map(f32::read_le).collect();
            if params.id(&name).is_some() {
                return Err(corrupt(format!("duplicate tensor {name}")));
            }
            params.insert(name, Tensor::new(shape, data).map_err(|e| corrupt(e.to_string()))?);
        }
        if r.pos != bytes.len() {
            return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let model = Model::from_params(config, tokens, edges, params).map_err(|e| corrupt(e.to_string()))?;
        Ok(Checkpoint { model, train, epoch, dev_accuracy })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EdgeDecoderKind, Fusion};

    fn sample() -> Checkpoint {
        let tokens = Vocabulary::build(VocabKind::Tokens, ["boy", "shirt", "remove"], 1);
        let edges = Vocabulary::build(VocabKind::Edges, ["in"], 1);
        let cfg = ModelConfig {
            layers: 1,
            heads: 2,
            d_model: 8,
            d_ff: 8,
            gru_hidden: 4,
            fusion: Fusion::Gating,
            edge_decoder: EdgeDecoderKind::Adjacency,
            max_decode_nodes: 5,
        };
        let model = Model::new(cfg, tokens, edges, 3).unwrap();
        Checkpoint { model, train: TrainConfig::default(), epoch: 7, dev_accuracy: 0.625 }
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.model.params, c.model.params);
        assert_eq!((back.epoch, back.dev_accuracy), (7, 0.625));
        assert_eq!(back.model.config, c.model.config);
    }

    #[test]
    fn damage_is_rejected() {
        let bytes = sample().to_bytes();
        let bad = |b: &[u8]| matches!(Checkpoint::from_bytes(b), Err(TrainError::CorruptCheckpoint(_)));
        assert!(bad(&bytes[..bytes.len() - 1]));
        assert!(bad(&bytes[..3]));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(bad(&extra));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(bad(&magic));
        let mut version = bytes.clone();
        version[4..8].copy_from_slice(&VERSION.to_be_bytes());
        assert!(bad(&version));
        let mut hash = bytes.clone();
        hash[12] ^= 1;
        assert!(bad(&hash));
        let mut value = bytes.clone();
        let k = value.len() - 40;
        value[k] ^= 0x10;
        assert!(bad(&value));
    }
}
