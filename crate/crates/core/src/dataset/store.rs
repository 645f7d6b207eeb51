use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::codec::HalfConfigCode;
use crate::sim::collect::{Episode, EpisodeMeta, EpisodeSink, CHANNELS, CHANNEL_NAMES};
use crate::sim::gait::TAU;

/// Episodes per shard file.
pub const SHARD_CAPACITY: usize = 256;
pub const SHARD_DIR: &str = "episodes";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE: &str = "f32le";

/// Where an episode lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EpisodeRef {
    pub shard: u32,
    pub index: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarEntry {
    pub code: [u8; 8],
    pub seed: u64,
    /// Byte offset of the episode inside the payload file.
    pub offset: u64,
    pub meta: EpisodeMeta,
}

/// JSON description of one shard payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardSidecar {
    pub version: u32,
    pub dtype: String,
    /// Per-episode shape: cycles, steps, channels.
    pub shape: [usize; 3],
    pub channel_names: Vec<String>,
    pub episodes: Vec<SidecarEntry>,
}

impl ShardSidecar {
    fn new(cycles: usize) -> Self {
        ShardSidecar {
            version: FORMAT_VERSION,
            dtype: DTYPE.to_string(),
            shape: [cycles, TAU, CHANNELS],
            channel_names: CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(),
            episodes: Vec::new(),
        }
    }

    fn episode_bytes(&self) -> u64 {
        (self.shape.iter().product::<usize>() * 4) as u64
    }

    fn check(&self, payload_len: u64) -> Result<(), DatasetError> {
        if self.version != FORMAT_VERSION || self.dtype != DTYPE {
            return Err(DatasetError::Format(format!("unsupported shard {} / {}", self.version, self.dtype)));
        }
        if self.shape[1] != TAU || self.shape[2] != CHANNELS || self.channel_names.len() != CHANNELS {
            return Err(DatasetError::Format(format!("unexpected shard shape {:?}", self.shape)));
        }
        let size = self.episode_bytes();
        for (i, e) in self.episodes.iter().enumerate() {
            if e.offset != i as u64 * size {
                return Err(DatasetError::Format(format!("episode {i} at offset {}, expected {}", e.offset, i as u64 * size)));
            }
        }
        let need = self.episodes.len() as u64 * size;
        if payload_len < need {
            return Err(DatasetError::Format(format!("payload holds {payload_len} bytes, sidecar needs {need}")));
        }
        Ok(())
    }
}

fn shard_stem(shard: u32) -> String {
    format!("shard-{shard:05}")
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Append-only episode shards under `<root>/episodes`.
///
/// A shard is a little-endian `f32` payload plus a JSON sidecar. The sidecar
/// is rewritten after each payload append, so an interrupted write leaves at
/// most unreferenced trailing bytes, which are dropped on the next open.
#[derive(Debug)]
pub struct EpisodeStore {
    root: PathBuf,
    shards: Vec<ShardSidecar>,
    index: BTreeMap<HalfConfigCode, EpisodeRef>,
}

impl EpisodeStore {
    /// Opens the store, creating the directory if needed.
    pub fn open(root: &Path) -> Result<Self, DatasetError> {
        let dir = root.join(SHARD_DIR);
        fs::create_dir_all(&dir)?;
        let mut shards = Vec::new();
        let mut index = BTreeMap::new();
        loop {
            let id = shards.len() as u32;
            let side = dir.join(format!("{}.json", shard_stem(id)));
            if !side.exists() {
                break;
            }
            let sidecar: ShardSidecar = serde_json::from_str(&fs::read_to_string(&side)?)
                .map_err(|e| DatasetError::Format(format!("{}: {e}", side.display())))?;
            let payload = dir.join(format!("{}.bin", shard_stem(id)));
            let len = fs::metadata(&payload).map(|m| m.len()).unwrap_or(0);
            sidecar.check(len)?;
            let need = sidecar.episodes.len() as u64 * sidecar.episode_bytes();
            if len > need {
                log::warn!("dropping {} unreferenced bytes from {}", len - need, payload.display());
                OpenOptions::new().write(true).open(&payload)?.set_len(need)?;
            }
            for (i, e) in sidecar.episodes.iter().enumerate() {
                let code = HalfConfigCode::from_array(e.code);
                if index.insert(code, EpisodeRef { shard: id, index: i as u32 }).is_some() {
                    return Err(DatasetError::Format(format!("code {code} stored twice")));
                }
            }
            shards.push(sidecar);
        }
        Ok(EpisodeStore { root: root.to_path_buf(), shards, index })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Stored codes with their locations, sorted by code.
    pub fn refs(&self) -> &BTreeMap<HalfConfigCode, EpisodeRef> {
        &self.index
    }

    pub fn locate(&self, code: &HalfConfigCode) -> Option<EpisodeRef> {
        self.index.get(code).copied()
    }

    /// Relative paths of all shard payloads.
    pub fn shard_paths(&self) -> Vec<String> {
        (0..self.shards.len() as u32).map(|i| format!("{SHARD_DIR}/{}.bin", shard_stem(i))).collect()
    }

    fn paths(&self, shard: u32) -> (PathBuf, PathBuf) {
        let dir = self.root.join(SHARD_DIR);
        (dir.join(format!("{}.bin", shard_stem(shard))), dir.join(format!("{}.json", shard_stem(shard))))
    }

    /// Appends one episode and returns its location.
    pub fn write_episode(&mut self, ep: &Episode) -> Result<EpisodeRef, DatasetError> {
        let (cycles, steps, channels) = ep.cycles.dim();
        if steps != TAU || channels != CHANNELS || cycles == 0 {
            return Err(DatasetError::Format(format!("episode shape {:?}", ep.cycles.dim())));
        }
        if self.index.contains_key(&ep.code) {
            return Err(DatasetError::Format(format!("code {} already stored", ep.code)));
        }
        let needs_new = self
            .shards
            .last()
            .is_none_or(|s| s.episodes.len() >= SHARD_CAPACITY || s.shape[0] != cycles);
        if needs_new {
            self.shards.push(ShardSidecar::new(cycles));
        }
        let shard = self.shards.len() as u32 - 1;
        let (bin, side) = self.paths(shard);
        let sidecar = self.shards.last_mut().expect("shard exists");
        let offset = sidecar.episodes.len() as u64 * sidecar.episode_bytes();

        let mut bytes = Vec::with_capacity(ep.cycles.len() * 4);
        for v in ep.cycles.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = OpenOptions::new().create(true).write(true).truncate(false).open(&bin)?;
        f.set_len(offset)?;
        f.seek(SeekFrom::Start(offset))?;
        f.write_all(&bytes)?;
        f.sync_data()?;

        sidecar.episodes.push(SidecarEntry { code: ep.code.to_array(), seed: ep.seed, offset, meta: ep.meta.clone() });
        let text = serde_json::to_vec_pretty(&*sidecar).map_err(|e| DatasetError::Format(e.to_string()))?;
        if let Err(e) = write_atomic(&side, &text) {
            sidecar.episodes.pop();
            return Err(e);
        }
        let r = EpisodeRef { shard, index: sidecar.episodes.len() as u32 - 1 };
        self.index.insert(ep.code, r);
        Ok(r)
    }

    pub fn read_episode(&self, r: EpisodeRef) -> Result<Episode, DatasetError> {
        let sidecar = self
            .shards
            .get(r.shard as usize)
            .ok_or_else(|| DatasetError::Format(format!("no shard {}", r.shard)))?;
        let entry = sidecar
            .episodes
            .get(r.index as usize)
            .ok_or_else(|| DatasetError::Format(format!("shard {} has no episode {}", r.shard, r.index)))?;
        let (bin, _) = self.paths(r.shard);
        let mut f = File::open(bin)?;
        f.seek(SeekFrom::Start(entry.offset))?;
        let mut bytes = vec![0u8; sidecar.episode_bytes() as usize];
        f.read_exact(&mut bytes)?;
        let values: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let [c, t, k] = sidecar.shape;
        let cycles = Array3::from_shape_vec((c, t, k), values).map_err(|e| DatasetError::Format(e.to_string()))?;
        Ok(Episode { cycles, code: HalfConfigCode::from_array(entry.code), seed: entry.seed, meta: entry.meta.clone() })
    }

    pub fn read_code(&self, code: &HalfConfigCode) -> Result<Episode, DatasetError> {
        let r = self.locate(code).ok_or_else(|| DatasetError::UnknownCode(code.to_string()))?;
        self.read_episode(r)
    }
}

/// Writes a single episode as `path` plus a sidecar next to it with a
/// `.json` extension, in the shard format.
pub fn write_episode_file(path: &Path, ep: &Episode) -> Result<(), DatasetError> {
    let (cycles, steps, channels) = ep.cycles.dim();
    if steps != TAU || channels != CHANNELS {
        return Err(DatasetError::Format(format!("episode shape {:?}", ep.cycles.dim())));
    }
    let mut sidecar = ShardSidecar::new(cycles);
    sidecar.episodes.push(SidecarEntry { code: ep.code.to_array(), seed: ep.seed, offset: 0, meta: ep.meta.clone() });
    let bytes: Vec<u8> = ep.cycles.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_atomic(path, &bytes)?;
    let text = serde_json::to_vec_pretty(&sidecar).map_err(|e| DatasetError::Format(e.to_string()))?;
    write_atomic(&path.with_extension("json"), &text)
}

pub fn read_episode_file(path: &Path) -> Result<Episode, DatasetError> {
    let side = path.with_extension("json");
    let sidecar: ShardSidecar = serde_json::from_str(&fs::read_to_string(&side)?)
        .map_err(|e| DatasetError::Format(format!("{}: {e}", side.display())))?;
    let bytes = fs::read(path)?;
    sidecar.check(bytes.len() as u64)?;
    if sidecar.episodes.len() != 1 || bytes.len() as u64 != sidecar.episode_bytes() {
        return Err(DatasetError::Format("episode file must hold exactly one episode".into()));
    }
    let entry = &sidecar.episodes[0];
    let values: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let [c, t, k] = sidecar.shape;
    let cycles = Array3::from_shape_vec((c, t, k), values).map_err(|e| DatasetError::Format(e.to_string()))?;
    Ok(Episode { cycles, code: HalfConfigCode::from_array(entry.code), seed: entry.seed, meta: entry.meta.clone() })
}

impl EpisodeSink for EpisodeStore {
    fn contains(&self, code: &HalfConfigCode) -> bool {
        self.index.contains_key(code)
    }

    fn append(&mut self, episode: &Episode) -> Result<(), String> {
        self.write_episode(episode).map(|_| ()).map_err(|e| e.to_string())
    }
}
