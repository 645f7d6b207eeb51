//! Episode shards, the dataset manifest with its train/val/test split, and
//! the input-window sampler.

pub mod store;
pub mod window;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use store::{read_episode_file, write_episode_file, EpisodeRef, EpisodeStore, SHARD_CAPACITY};
pub use window::{drop_com_channels, sample_window, window_at, SampleWindow, WINDOW_CYCLES, WINDOW_STEPS};

use crate::codec::HalfConfigCode;
use crate::factory::FAMILY_MANIFEST;
use crate::sim::collect::Episode;

pub const DATASET_MANIFEST: &str = "dataset.jsonl";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("format error: {0}")]
    Format(String),
    #[error("sizing error: {0}")]
    Sizing(String),
    #[error("unknown code {0}")]
    UnknownCode(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    /// Share of the non-test codes used for training.
    pub train_ratio: f64,
    pub test_count: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { train_ratio: 0.8, test_count: 0, seed: 0 }
    }
}

/// Code-level partition.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitAssignment {
    pub train: Vec<HalfConfigCode>,
    pub val: Vec<HalfConfigCode>,
    pub test: Vec<HalfConfigCode>,
}

impl SplitAssignment {
    pub fn get(&self, split: Split) -> &[HalfConfigCode] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Deterministic split by code: sort, shuffle, hold out the test set, then
/// cut the rest by `train_ratio`.
pub fn split_codes(codes: &[HalfConfigCode], cfg: &SplitConfig) -> Result<SplitAssignment, DatasetError> {
    let unique: BTreeSet<HalfConfigCode> = codes.iter().copied().collect();
    if unique.len() != codes.len() {
        return Err(DatasetError::Format("duplicate codes".into()));
    }
    if !(0.0..=1.0).contains(&cfg.train_ratio) {
        return Err(DatasetError::Sizing(format!("train ratio {} outside [0, 1]", cfg.train_ratio)));
    }
    if cfg.test_count > unique.len() {
        return Err(DatasetError::Sizing(format!("{} test codes requested from {}", cfg.test_count, unique.len())));
    }
    let mut order: Vec<HalfConfigCode> = unique.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let test = order[..cfg.test_count].to_vec();
    let rest = &order[cfg.test_count..];
    let n_train = (rest.len() as f64 * cfg.train_ratio).round() as usize;
    Ok(SplitAssignment { train: rest[..n_train].to_vec(), val: rest[n_train..].to_vec(), test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub version: u32,
    pub family_manifest: String,
    pub shards: Vec<String>,
    pub split: SplitConfig,
    pub collect_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub code: [u8; 8],
    pub shard: u32,
    pub index: u32,
    pub split: Split,
}

/// `dataset.jsonl`: a header line then one line per stored code.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub entries: Vec<ManifestEntry>,
}

/// Splits every episode in the store and builds the manifest.
pub fn split_dataset(store: &EpisodeStore, cfg: &SplitConfig, collect_seed: u64) -> Result<DatasetManifest, DatasetError> {
    let codes: Vec<HalfConfigCode> = store.refs().keys().copied().collect();
    let split = split_codes(&codes, cfg)?;
    let mut entries = Vec::with_capacity(codes.len());
    for s in [Split::Train, Split::Val, Split::Test] {
        for code in split.get(s) {
            let r = store.locate(code).expect("code came from the store");
            entries.push(ManifestEntry { code: code.to_array(), shard: r.shard, index: r.index, split: s });
        }
    }
    entries.sort_by_key(|e| e.code);
    Ok(DatasetManifest {
        header: ManifestHeader {
            version: store::FORMAT_VERSION,
            family_manifest: FAMILY_MANIFEST.to_string(),
            shards: store.shard_paths(),
            split: cfg.clone(),
            collect_seed,
        },
        entries,
    })
}

impl DatasetManifest {
    pub fn codes(&self, split: Split) -> Vec<HalfConfigCode> {
        self.entries.iter().filter(|e| e.split == split).map(|e| HalfConfigCode::from_array(e.code)).collect()
    }

    pub fn assignment(&self) -> SplitAssignment {
        SplitAssignment { train: self.codes(Split::Train), val: self.codes(Split::Val), test: self.codes(Split::Test) }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, DatasetError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: ManifestHeader = serde_json::from_str(lines.next().ok_or_else(|| DatasetError::Format("empty manifest".into()))?)
            .map_err(|e| DatasetError::Format(format!("header: {e}")))?;
        let mut entries = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, l) in lines.enumerate() {
            let e: ManifestEntry = serde_json::from_str(l).map_err(|e| DatasetError::Format(format!("line {}: {e}", i + 2)))?;
            if !seen.insert(e.code) {
                return Err(DatasetError::Format(format!("code {:?} listed twice", e.code)));
            }
            if e.shard as usize >= header.shards.len() {
                return Err(DatasetError::Format(format!("code {:?} points at missing shard {}", e.code, e.shard)));
            }
            entries.push(e);
        }
        Ok(DatasetManifest { header, entries })
    }

    pub fn write(&self, root: &Path) -> Result<(), DatasetError> {
        store::write_atomic(&root.join(DATASET_MANIFEST), self.to_jsonl().as_bytes())
    }

    pub fn read(root: &Path) -> Result<Self, DatasetError> {
        Self::from_jsonl(&fs::read_to_string(root.join(DATASET_MANIFEST))?)
    }
}

/// Reads every episode of one split, in manifest order.
pub fn load_split(store: &EpisodeStore, manifest: &DatasetManifest, split: Split) -> Result<Vec<Episode>, DatasetError> {
    manifest
        .entries
        .iter()
        .filter(|e| e.split == split)
        .map(|e| {
            let ep = store.read_episode(EpisodeRef { shard: e.shard, index: e.index })?;
            if ep.code.to_array() != e.code {
                return Err(DatasetError::Format(format!("manifest and shard disagree on code {:?}", e.code)));
            }
            Ok(ep)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::ConfigSpace;
    use proptest::prelude::*;

    fn codes(n: usize, seed: u64) -> Vec<HalfConfigCode> {
        let space = ConfigSpace::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = BTreeSet::new();
        while set.len() < n {
            set.insert(space.random_half_code(&mut rng));
        }
        set.into_iter().collect()
    }

    #[test]
    fn hundred_codes_split_64_16_20() {
        let s = split_codes(&codes(100, 0), &SplitConfig { test_count: 20, ..Default::default() }).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (64, 16, 20));
    }

    #[test]
    fn too_many_test_codes() {
        let r = split_codes(&codes(5, 0), &SplitConfig { test_count: 6, ..Default::default() });
        assert!(matches!(r, Err(DatasetError::Sizing(_))));
    }

    proptest! {
        #[test]
        fn split_is_deterministic_disjoint_and_exhaustive(n in 1usize..200, seed in any::<u64>(), t in 0usize..50) {
            let cs = codes(n, seed);
            let cfg = SplitConfig { test_count: t.min(n), seed, ..Default::default() };
            let a = split_codes(&cs, &cfg).unwrap();
            let mut shuffled = cs.clone();
            shuffled.reverse();
            prop_assert_eq!(&a, &split_codes(&shuffled, &cfg).unwrap());
            let mut all: Vec<_> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
            prop_assert_eq!(all.len(), n);
            all.sort();
            all.dedup();
            prop_assert_eq!(all, cs);
        }
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = EpisodeStore::open(dir.path()).unwrap();
        for (i, c) in codes(30, 1).iter().enumerate() {
            let mut ep = store::tests::fake_episode(c.to_array(), 10, i as u64);
            ep.code = *c;
            store.write_episode(&ep).unwrap();
        }
        let m = split_dataset(&store, &SplitConfig { test_count: 5, seed: 3, ..Default::default() }, 9).unwrap();
        m.write(dir.path()).unwrap();
        let back = DatasetManifest::read(dir.path()).unwrap();
        assert_eq!(back, m);
        let val = load_split(&store, &back, Split::Val).unwrap();
        assert_eq!(val.len(), 5);
        assert!(matches!(DatasetManifest::from_jsonl("{}"), Err(DatasetError::Format(_))));
    }
}
