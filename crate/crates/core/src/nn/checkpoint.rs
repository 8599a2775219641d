//! Versioned binary checkpoints.
//!
//! Layout: the 8-byte magic `NILMCKPT`, a little-endian `u32` format version,
//! a little-endian `u64` header length, a UTF-8 JSON header, then raw
//! little-endian `f64` payloads: every parameter in set order, followed by
//! the Adam first moments and second moments in the same order. Values are
//! stored bit-for-bit, so a save/load round trip is exact.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{data_err, NilmError, Result};
use crate::nn::optim::{AdamConfig, AdamState};
use crate::nn::params::ParameterSet;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"NILMCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Position of a ChaCha stream, enough to resume it exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Decimal string; JSON numbers cannot carry a full `u128`.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| data_err!("bad rng word position {:?}", self.word_pos))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    tensors: Vec<TensorEntry>,
    adam: AdamConfig,
    adam_step: u64,
    rng: RngState,
    meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParameterSet,
    pub adam: AdamState,
    pub rng: RngState,
    /// Caller-defined metadata (model variant, geometry, normalization...).
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            tensors: self
                .params
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            adam: self.adam.config,
            adam_step: self.adam.step,
            rng: self.rng.clone(),
            meta: self.meta.clone(),
        };
        let header = serde_json::to_vec(&header).map_err(|e| data_err!("checkpoint header: {e}"))?;
        let scalars = self.params.num_scalars();
        let mut out = Vec::with_capacity(20 + header.len() + 24 * scalars);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let tensors = self.params.iter().map(|(_, t)| t.data());
        let moments = self.adam.first.iter().chain(&self.adam.second).map(Vec::as_slice);
        for block in tensors.chain(moments) {
            for v in block {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut cursor, &mut magic)?;
        if &magic != MAGIC {
            return Err(data_err!("not a checkpoint (bad magic)"));
        }
        let mut word = [0u8; 4];
        read_exact(&mut cursor, &mut word)?;
        let version = u32::from_le_bytes(word);
        if version != FORMAT_VERSION {
            return Err(data_err!("unsupported checkpoint version {version}"));
        }
        let mut len = [0u8; 8];
        read_exact(&mut cursor, &mut len)?;
        let header_len = u64::from_le_bytes(len) as usize;
        if header_len > cursor.len() {
            return Err(data_err!("truncated checkpoint header"));
        }
        let header: Header = serde_json::from_slice(&cursor[..header_len])
            .map_err(|e| data_err!("checkpoint header: {e}"))?;
        cursor = &cursor[header_len..];

        let mut params = ParameterSet::new();
        for entry in &header.tensors {
            let numel = entry.shape.iter().product();
            let data = read_f64s(&mut cursor, numel)?;
            params.insert(entry.name.clone(), Tensor::new(&entry.shape, data)?)?;
        }
        let mut adam = AdamState::new(&params, header.adam);
        adam.step = header.adam_step;
        let sizes: Vec<usize> = params.iter().map(|(_, t)| t.numel()).collect();
        for (m, &n) in adam.first.iter_mut().zip(&sizes) {
            *m = read_f64s(&mut cursor, n)?;
        }
        for (v, &n) in adam.second.iter_mut().zip(&sizes) {
            *v = read_f64s(&mut cursor, n)?;
        }
        if !cursor.is_empty() {
            return Err(data_err!("{} trailing bytes after checkpoint payload", cursor.len()));
        }
        Ok(Checkpoint {
            params,
            adam,
            rng: header.rng,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut file = fs::File::create(path).map_err(|e| NilmError::io(path, e))?;
        file.write_all(&bytes).map_err(|e| NilmError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| NilmError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn read_exact(cursor: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    cursor
        .read_exact(buf)
        .map_err(|_| data_err!("truncated checkpoint"))
}

fn read_f64s(cursor: &mut &[u8], n: usize) -> Result<Vec<f64>> {
    let bytes = n * 8;
    if cursor.len() < bytes {
        return Err(data_err!("truncated checkpoint payload"));
    }
    let (head, tail) = cursor.split_at(bytes);
    *cursor = tail;
    Ok(head
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init::he_init;
    use rand::{Rng, SeedableRng};

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = ParameterSet::new();
        params.insert("w", he_init(&[3, 4], 3, &mut rng).unwrap()).unwrap();
        params.insert("b", Tensor::vector(vec![0.1, -0.0, 1e-300]).unwrap()).unwrap();
        let mut adam = AdamState::new(&params, AdamConfig::with_lr(3e-4));
        adam.step = 17;
        adam.first[0][2] = std::f64::consts::PI;
        adam.second[1][1] = 1e-17;
        let _: u64 = rng.random();
        Checkpoint {
            params,
            adam,
            rng: RngState::capture(&rng),
            meta: serde_json::json!({"variant": "sgn", "sigma": 123.456}),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn restored_rng_continues_the_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let _: [u64; 3] = rng.random();
        let state = RngState::capture(&rng);
        let mut restored = state.restore().unwrap();
        let a: [u64; 4] = rng.random();
        let b: [u64; 4] = restored.random();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }
}
