use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DatasetError;
use crate::features::{ExtractConfig, NormalizerSet};
use crate::model::{BehaveFormer, BehaveFormerConfig};
use crate::numerics::{ParamEntry, ParamStore, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"BHVFCKPT";
const DIGEST_LEN: usize = 32;
/// Magic, version, header length.
const PREAMBLE: usize = 8 + 4 + 8;

/// Everything needed to embed new data with a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: BehaveFormer,
    pub extract: ExtractConfig,
    pub normalizers: NormalizerSet,
    pub seed: u64,
    /// Hex SHA-256 of the training configuration.
    pub config_digest: String,
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: BehaveFormerConfig,
    extract: ExtractConfig,
    normalizers: NormalizerSet,
    seed: u64,
    config_digest: String,
    tensors: Vec<TensorRecord>,
}

/// Layout: magic, `u32` version, `u64` header length, JSON header, little-endian
/// `f64` payload in shape-table order, SHA-256 of all preceding bytes.
pub fn write_checkpoint<W: Write>(c: &Checkpoint, mut out: W) -> Result<(), DatasetError> {
    let header = Header {
        config: c.model.config.clone(),
        extract: c.extract.clone(),
        normalizers: c.normalizers.clone(),
        seed: c.seed,
        config_digest: c.config_digest.clone(),
        tensors: c
            .model
            .params
            .entries()
            .iter()
            .map(|e| TensorRecord {
                name: e.name.clone(),
                shape: e.tensor.shape().to_vec(),
                trainable: e.trainable,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| DatasetError::Corrupt(e.to_string()))?;
    let numel: usize = c.model.params.entries().iter().map(|e| e.tensor.len()).sum();
    let mut buf = Vec::with_capacity(PREAMBLE + json.len() + 8 * numel + DIGEST_LEN);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for e in c.model.params.entries() {
        for v in e.tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint, DatasetError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
        return Err(DatasetError::BadMagic);
    }
    if buf.len() < PREAMBLE + DIGEST_LEN {
        return Err(DatasetError::Truncated(format!("{} bytes", buf.len())));
    }
    let version = u32::from_le_bytes(buf[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(DatasetError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(buf[12..20].try_into().expect("8 bytes")) as usize;
    if buf.len() < PREAMBLE + header_len + DIGEST_LEN {
        return Err(DatasetError::Truncated(format!("header of {header_len} bytes does not fit")));
    }
    let body = buf.len() - DIGEST_LEN;
    if Sha256::digest(&buf[..body])[..] != buf[body..] {
        return Err(DatasetError::Digest);
    }
    let header: Header =
        serde_json::from_slice(&buf[PREAMBLE..PREAMBLE + header_len]).map_err(|e| DatasetError::Corrupt(format!("header: {e}")))?;
    let numel: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    let payload = &buf[PREAMBLE + header_len..body];
    if payload.len() != 8 * numel {
        return Err(DatasetError::Truncated(format!(
            "payload has {} bytes, shape table needs {}",
            payload.len(),
            8 * numel
        )));
    }
    let mut values = payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")));
    let entries = header
        .tensors
        .into_iter()
        .map(|t| {
            let n = t.shape.iter().product();
            let data: Vec<f64> = values.by_ref().take(n).collect();
            let tensor = Tensor::new(t.shape, data).map_err(|e| DatasetError::Corrupt(e.to_string()))?;
            Ok(ParamEntry {
                name: t.name,
                tensor,
                trainable: t.trainable,
            })
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    let params = ParamStore::from_entries(entries).map_err(|e| DatasetError::Corrupt(e.to_string()))?;
    Ok(Checkpoint {
        model: BehaveFormer::from_params(header.config, params)?,
        extract: header.extract,
        normalizers: header.normalizers,
        seed: header.seed,
        config_digest: header.config_digest,
    })
}

pub fn save_checkpoint(c: &Checkpoint, path: &Path) -> Result<(), DatasetError> {
    let mut buf = Vec::new();
    write_checkpoint(c, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, DatasetError> {
    read_checkpoint(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureSchema, NormalizerState, Sensor};
    use crate::model::StdatConfig;

    fn sample_checkpoint(dual: bool) -> Checkpoint {
        let ks = StdatConfig {
            blocks: 1,
            hidden: 8,
            ..StdatConfig::keystroke_hmog(10)
        };
        let config = if dual {
            BehaveFormerConfig::dual(
                ks,
                StdatConfig {
                    blocks: 1,
                    hidden: 8,
                    ..StdatConfig::imu(12)
                },
            )
        } else {
            BehaveFormerConfig::keystroke_only(ks)
        };
        let imu_schema = FeatureSchema::imu(&[Sensor::Gyroscope]);
        Checkpoint {
            model: BehaveFormer::new(config, 4).unwrap(),
            extract: ExtractConfig::default(),
            normalizers: NormalizerSet {
                keystroke: NormalizerState::unfitted(FeatureSchema::full_keystroke(), (0.0, 10.0)),
                imu: dual.then(|| NormalizerState {
                    schema: imu_schema,
                    target: (0.0, 10.0),
                    channels: vec![
                        crate::features::ChannelRule::MinMax {
                            min: 0.1 + 0.2,
                            max: 1.0 / 3.0
                        };
                        12
                    ],
                }),
            },
            seed: 17,
            config_digest: "ab".repeat(32),
        }
    }

    fn bytes(c: &Checkpoint) -> Vec<u8> {
        let mut b = Vec::new();
        write_checkpoint(c, &mut b).unwrap();
        b
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for dual in [false, true] {
            let c = sample_checkpoint(dual);
            let back = read_checkpoint(&bytes(&c)[..]).unwrap();
            assert_eq!(back, c);
            for (a, b) in back.model.params.entries().iter().zip(c.model.params.entries()) {
                assert!(a.tensor.data().iter().zip(b.tensor.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
    }

    #[test]
    fn dual_shape_table_lists_both_towers_and_fusion() {
        let c = sample_checkpoint(true);
        let names: Vec<String> = c.model.shape_table().into_iter().map(|(n, _)| n).collect();
        assert!(names.iter().any(|n| n.starts_with("keystroke.")));
        assert!(names.iter().any(|n| n.starts_with("imu.")));
        assert!(names.contains(&"fusion.w".to_string()) && names.contains(&"fusion.b".to_string()));
    }

    #[test]
    fn corruption_is_rejected() {
        let b = bytes(&sample_checkpoint(false));
        let mut flipped = b.clone();
        let i = b.len() - 100;
        flipped[i] ^= 0x01;
        assert_eq!(read_checkpoint(&flipped[..]).unwrap_err(), DatasetError::Digest);

        let mut versioned = b.clone();
        versioned[8] = 9;
        assert!(matches!(
            read_checkpoint(&versioned[..]),
            Err(DatasetError::Version { found: 9, .. })
        ));

        assert!(matches!(read_checkpoint(&b[..30]), Err(DatasetError::Truncated(_))));
        assert!(read_checkpoint(&b[..b.len() - 1]).is_err());
        assert_eq!(read_checkpoint(&b"not a checkpoint"[..]).unwrap_err(), DatasetError::BadMagic);
    }
}
