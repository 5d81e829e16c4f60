//! Binary model checkpoints.
//!
//! Layout: the magic `RIGSKIN\0`, a little-endian `u32` version, a `u64`
//! header length, a JSON header (configurations, degree statistics and the
//! tensor directory), then every tensor's `f64` values little-endian in
//! directory order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::PrecomputeConfig;
use crate::error::{Error, Result};
use crate::graph::{DegreeStats, StatsSource};
use crate::model::{SkinningNet, SkinningNetConfig};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"RIGSKIN\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: SkinningNetConfig,
    pub precompute: PrecomputeConfig,
    pub stats: DegreeStats,
    pub epoch: usize,
    pub params: ParamStore,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: SkinningNetConfig,
    precompute: PrecomputeConfig,
    stats: DegreeStats,
    epoch: usize,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            model: self.model.clone(),
            precompute: self.precompute.clone(),
            stats: self.stats.clone(),
            epoch: self.epoch,
            tensors: self
                .params
                .iter()
                .map(|p| TensorEntry { name: p.name.clone(), shape: p.tensor.shape().to_vec() })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let payload: usize = self.params.iter().map(|p| p.tensor.len() * 8).sum();
        let mut out = Vec::with_capacity(20 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.params.iter() {
            for v in p.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let mut offset = 20 + hlen;
        let mut params = ParamStore::new();
        for t in header.tensors {
            let n: usize = t.shape.iter().product();
            let raw = bytes.get(offset..offset + 8 * n).ok_or_else(|| bad(format!("truncated data for `{}`", t.name)))?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            params.insert(t.name, Tensor::new(t.shape, data)?)?;
            offset += 8 * n;
        }
        if offset != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - offset)));
        }
        let stats = DegreeStats { source: StatsSource::Loaded, ..header.stats };
        Ok(Checkpoint { model: header.model, precompute: header.precompute, stats, epoch: header.epoch, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Rebuilds the network and fills it with the stored parameters; every
    /// parameter must be present with a matching shape.
    pub fn instantiate(&self) -> Result<(SkinningNet, ParamStore)> {
        let (net, mut store) = SkinningNet::new(self.model.clone(), 0)?;
        if store.len() != self.params.len() {
            return Err(bad(format!("checkpoint has {} tensors, model expects {}", self.params.len(), store.len())));
        }
        for p in store.iter_mut() {
            let id = self.params.id(&p.name).ok_or_else(|| bad(format!("missing tensor `{}`", p.name)))?;
            let saved = self.params.get(id);
            if saved.shape() != p.tensor.shape() {
                return Err(bad(format!("tensor `{}` is {:?}, model expects {:?}", p.name, saved.shape(), p.tensor.shape())));
            }
            p.tensor.data_mut().copy_from_slice(saved.data());
        }
        Ok((net, store))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NeighbourhoodKind;

    fn tiny() -> Checkpoint {
        let model = SkinningNetConfig::default().scaled(1.0 / 32.0);
        let (_, params) = SkinningNet::new(model.clone(), 3).unwrap();
        let stats = DegreeStats::new(StatsSource::Computed).with(NeighbourhoodKind::MeshTopology, 5.5);
        Checkpoint { model, precompute: PrecomputeConfig::default(), stats, epoch: 7, params }
    }

    #[test]
    fn roundtrip_bit_exact() {
        let c = tiny();
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back.epoch, 7);
        assert_eq!(back.stats.source, StatsSource::Loaded);
        assert_eq!(back.stats.d_train, c.stats.d_train);
        let (_, store) = back.instantiate().unwrap();
        for (a, b) in store.iter().zip(c.params.iter()) {
            assert_eq!(a.name, b.name);
            assert!(a.tensor.data().iter().zip(b.tensor.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn corruption_detected() {
        let bytes = tiny().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"nonsense and more nonsense").is_err());
        let mut c = tiny();
        c.model.k = 4;
        let err = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap().instantiate().unwrap_err();
        assert!(err.to_string().contains("mesh.input.0.weight"), "{err}");
    }
}
