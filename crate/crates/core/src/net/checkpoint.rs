use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::loss::LossConfig;
use super::model::{EncoderConfig, MorphologyNet};
use super::NetError;

const MAGIC: &[u8; 8] = b"MSMODEL\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub encoder: EncoderConfig,
    pub loss: LossConfig,
    pub seed: u64,
    /// Free-form run information (epoch, metrics, training config).
    pub extra: serde_json::Value,
    pub tensors: Vec<TensorInfo>,
}

/// A network with the settings it was trained under.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub net: MorphologyNet,
    pub loss: LossConfig,
    pub seed: u64,
    pub extra: serde_json::Value,
}

impl Checkpoint {
    /// Magic, version, header length, JSON header, then every tensor as
    /// little-endian `f64` in header order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut net = self.net.clone();
        let mut tensors = Vec::new();
        let mut payload = Vec::new();
        net.visit_params(&mut |name, p| {
            tensors.push(TensorInfo { name: name.to_string(), rows: p.value.nrows(), cols: p.value.ncols() });
            for v in p.value.iter() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        });
        let header = CheckpointHeader {
            version: CHECKPOINT_VERSION,
            encoder: net.config().clone(),
            loss: self.loss,
            seed: self.seed,
            extra: self.extra.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NetError> {
        let bad = |m: String| NetError::Checkpoint(m);
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a model checkpoint".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("checkpoint version {version}, expected {CHECKPOINT_VERSION}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(bad("truncated header".into()));
        }
        let header: CheckpointHeader = serde_json::from_slice(&body[..hlen]).map_err(|e| bad(e.to_string()))?;
        let mut payload = &body[hlen..];
        let mut net = MorphologyNet::new(header.encoder.clone(), header.seed)?;
        let mut expected = header.tensors.iter();
        let mut err = None;
        net.visit_params(&mut |name, p| {
            if err.is_some() {
                return;
            }
            let Some(info) = expected.next() else {
                err = Some(format!("missing tensor {name}"));
                return;
            };
            if info.name != name || (info.rows, info.cols) != p.value.dim() {
                err = Some(format!("tensor {} {}x{} does not fit {name} {:?}", info.name, info.rows, info.cols, p.value.dim()));
                return;
            }
            let n = info.rows * info.cols * 8;
            if payload.len() < n {
                err = Some("truncated payload".into());
                return;
            }
            let vals: Vec<f64> =
                payload[..n].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            p.value = Array2::from_shape_vec((info.rows, info.cols), vals).expect("sizes checked");
            payload = &payload[n..];
        });
        if let Some(e) = err {
            return Err(bad(e));
        }
        if expected.next().is_some() || !payload.is_empty() {
            return Err(bad("extra tensors or trailing bytes".into()));
        }
        net.zero_grad();
        Ok(Checkpoint { net, loss: header.loss, seed: header.seed, extra: header.extra })
    }

    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        Self::from_bytes(&fs::read(path)?)
    }
}
