//! Parameter checkpoints.
//!
//! Layout: the magic `VTFCKPT1`, a little-endian `u64` header length, the JSON
//! header, then raw little-endian `f32` blocks in header order: parameters,
//! and when `optimizer` is set the Adam first and second moments.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::{Adam, AdamConfig};
use super::{NetConfig, Objective, PolicyNet};
use crate::error::{Error, Result};
use crate::datastore::Normalization;

const MAGIC: &[u8; 8] = b"VTFCKPT1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerInfo {
    pub adam: AdamConfig,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub net: NetConfig,
    pub objective: Objective,
    pub normalization: Normalization,
    pub seed: u64,
    /// Completed training epochs.
    pub epoch: usize,
    pub tensors: Vec<TensorInfo>,
    pub optimizer: Option<OptimizerInfo>,
    /// Free-form run settings echoed for provenance of the artifact.
    #[serde(default)]
    pub run: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f32>,
    pub adam: Option<Adam<f32>>,
}

impl Checkpoint {
    pub fn new(
        net: &PolicyNet,
        objective: Objective,
        normalization: Normalization,
        seed: u64,
        epoch: usize,
        params: Vec<f32>,
        adam: Option<Adam<f32>>,
    ) -> Self {
        let tensors = net
            .layout()
            .entries
            .iter()
            .map(|e| TensorInfo {
                name: e.name.clone(),
                shape: e.shape.clone(),
            })
            .collect();
        let optimizer = adam.as_ref().map(|a| OptimizerInfo {
            adam: a.cfg,
            step: a.step,
        });
        Checkpoint {
            header: CheckpointHeader {
                net: net.cfg.clone(),
                objective,
                normalization,
                seed,
                epoch,
                tensors,
                optimizer,
                run: serde_json::Value::Null,
            },
            params,
            adam,
        }
    }

    /// Rebuilds the network described by the header.
    pub fn net(&self) -> Result<PolicyNet> {
        PolicyNet::new(self.header.net.clone())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let header = serde_json::to_vec(&self.header)?;
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        write_f32s(w, &self.params)?;
        if let Some(a) = &self.adam {
            write_f32s(w, &a.m)?;
            write_f32s(w, &a.v)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::format("magic", "file too short"))?;
        if &magic != MAGIC {
            return Err(Error::format("magic", "not a checkpoint file"));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)
            .map_err(|_| Error::format("header_len", "file too short"))?;
        let len = u64::from_le_bytes(len) as usize;
        let mut header = vec![0u8; len];
        r.read_exact(&mut header)
            .map_err(|_| Error::format("header", "truncated header"))?;
        let header: CheckpointHeader =
            serde_json::from_slice(&header).map_err(|e| Error::format("header", e.to_string()))?;

        let net = PolicyNet::new(header.net.clone())?;
        let expected: Vec<TensorInfo> = net
            .layout()
            .entries
            .iter()
            .map(|e| TensorInfo {
                name: e.name.clone(),
                shape: e.shape.clone(),
            })
            .collect();
        if expected != header.tensors {
            return Err(Error::format("tensors", "shapes do not match the network config"));
        }
        let n = net.num_params();
        let params = read_f32s(r, n, "params")?;
        let adam = match &header.optimizer {
            Some(info) => {
                let m = read_f32s(r, n, "adam.m")?;
                let v = read_f32s(r, n, "adam.v")?;
                Some(Adam {
                    cfg: info.adam,
                    m,
                    v,
                    step: info.step,
                })
            }
            None => None,
        };
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::format("params", format!("{} trailing bytes", rest.len())));
        }
        Ok(Checkpoint { header, params, adam })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

fn write_f32s(w: &mut impl Write, values: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_f32s(r: &mut impl Read, n: usize, field: &str) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format(field, "truncated data block"))?;
    Ok(buf
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowmatch::Normalizer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let net = PolicyNet::new(NetConfig::reduced()).unwrap();
        let params: Vec<f32> = net.init_params(&mut ChaCha8Rng::seed_from_u64(3));
        let mut adam = Adam::new(AdamConfig::default(), params.len());
        adam.step = 7;
        adam.m[0] = 0.25;
        adam.v[1] = 1e-7;
        Checkpoint::new(
            &net,
            Objective::Flow,
            Normalization {
                actions: Normalizer::new([0.1, 0.2, 0.3], [1.0, 2.0, 3.0]),
                twist_mean: [0.5; 6],
                twist_std: [0.25; 6],
            },
            5,
            12,
            params,
            Some(adam),
        )
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ck);
        let bits: Vec<u32> = back.params.iter().map(|v| v.to_bits()).collect();
        let orig: Vec<u32> = ck.params.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, orig);
    }

    #[test]
    fn truncated_file_names_block() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        match Checkpoint::read_from(&mut buf.as_slice()) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "adam.v"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic() {
        let err = Checkpoint::read_from(&mut &b"NOTACKPT\0\0\0\0\0\0\0\0"[..]).unwrap_err();
        assert!(matches!(err, Error::Format { ref field, .. } if field == "magic"));
    }
}
