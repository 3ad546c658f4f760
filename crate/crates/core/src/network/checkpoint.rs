//! Binary model checkpoint.
//!
//! Layout (all integers little-endian):
//!
//! | bytes        | content                                             |
//! |--------------|-----------------------------------------------------|
//! | 8            | magic `RMTNCKPT`                                    |
//! | 4            | `u32` format version (currently 1)                  |
//! | 8            | `u64` header length `H`                             |
//! | H            | UTF-8 JSON header (network config, label vocab,     |
//! |              | normalization, parameter names and shapes)          |
//! | 8            | `u64` number of parameter values `P`                |
//! | 8·P          | `f64` values in canonical parameter order, row-major |

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MultiTaskNet, NetConfig};
use crate::data::{LabelVocab, NormalizationSpec};
use crate::error::{Error, Result};
use crate::numcore::{Matrix, RngState};

pub const MAGIC: &[u8; 8] = b"RMTNCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    network: NetConfig,
    vocab: LabelVocab,
    normalization: NormalizationSpec,
    parameters: Vec<ParamShape>,
}

/// A trained network together with what is needed to interpret its outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: MultiTaskNet,
    pub vocab: LabelVocab,
    pub norm: NormalizationSpec,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.net.parameters();
        let header = Header {
            network: self.net.config().clone(),
            vocab: self.vocab.clone(),
            normalization: self.norm,
            parameters: params
                .iter()
                .map(|p| ParamShape {
                    name: p.name.clone(),
                    rows: p.value.rows(),
                    cols: p.value.cols(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header)?;
        let values: Vec<f64> = self.net.flat_parameters();

        let mut out = Vec::with_capacity(28 + header.len() + 8 * values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut cur, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(read_array(&mut cur)?);
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let header_len = u64::from_le_bytes(read_array(&mut cur)?) as usize;
        if header_len > cur.len() {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&cur[..header_len])?;
        cur = &cur[header_len..];
        let count = u64::from_le_bytes(read_array(&mut cur)?) as usize;
        if cur.len() != count * 8 {
            return Err(Error::Checkpoint(format!(
                "expected {count} parameter values, found {} bytes",
                cur.len()
            )));
        }

        // Build a net with the right shapes, then overwrite every value.
        let mut net = MultiTaskNet::new(header.network, &mut RngState::new(0))?;
        let names = net.parameter_names();
        if names.len() != header.parameters.len() {
            return Err(Error::Checkpoint("parameter list does not match network config".into()));
        }
        let mut offset = 0;
        for ((slot, name), shape) in net.parameters_mut().into_iter().zip(&names).zip(&header.parameters) {
            if &shape.name != name || (shape.rows, shape.cols) != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` {}x{} does not match expected `{name}` {:?}",
                    shape.name,
                    shape.rows,
                    shape.cols,
                    slot.shape()
                )));
            }
            let n = shape.rows * shape.cols;
            let values = cur[offset * 8..(offset + n) * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            *slot = Matrix::new(shape.rows, shape.cols, values)?;
            offset += n;
        }
        if offset != count {
            return Err(Error::Checkpoint(format!("{count} values stored, {offset} expected")));
        }
        Ok(Checkpoint {
            net,
            vocab: header.vocab,
            norm: header.normalization,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&bytes))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

fn read_exact(cur: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    cur.read_exact(buf)
        .map_err(|_| Error::Checkpoint("unexpected end of file".into()))
}

fn read_array<const N: usize>(cur: &mut &[u8]) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(cur, &mut buf)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossKind;
    use crate::network::HeadSpec;
    use crate::task::TaskMap;

    fn sample() -> Checkpoint {
        let cfg = NetConfig {
            input_dim: 5,
            hidden: 7,
            dropout_rate: 0.2,
            dropout_in_residual: false,
            heads: TaskMap::from_fn(|t| match t {
                crate::Task::State => HeadSpec::classification(2, LossKind::Bce),
                t if t.is_classification() => HeadSpec::classification(3, LossKind::SmoothedCe),
                _ => HeadSpec::regression(),
            }),
        };
        Checkpoint {
            net: MultiTaskNet::new(cfg, &mut RngState::new(12)).unwrap(),
            vocab: LabelVocab {
                subtlety: vec!["1".into(), "2".into(), "3".into()],
                state: vec!["benign".into(), "malignant".into()],
                z: vec!["a".into(), "b".into(), "c".into()],
                diagnosis: vec!["p".into(), "q".into(), "r".into()],
            },
            norm: NormalizationSpec {
                size_divisor_mm: Some(57.5),
                ..Default::default()
            },
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        let a = ck.net.flat_parameters();
        let b = back.net.flat_parameters();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn header_fields() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut bad = bytes;
        bad[8] = 2;
        let err = Checkpoint::from_bytes(&bad).unwrap_err();
        assert!(err.to_string().contains("version 2"));
    }
}
