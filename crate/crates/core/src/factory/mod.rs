//! Robot generation: URDF documents from configuration codes, validity
//! filtering in simulation, and rejection sampling of whole families.

pub mod geometry;
pub mod urdf;

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use geometry::RobotGeometry;
pub use urdf::{build_urdf, parse_urdf};

use crate::codec::{CodecError, ConfigSpace, HalfConfigCode, Icosahedron};
use crate::sim::adapter::{BasePose, PhysicsAdapter, SimError, JOINT_COUNT};
use crate::sim::engine::{EngineConfig, RigidBodySim};

#[derive(Debug, Error)]
pub enum FactoryError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("bad geometry: {0}")]
    Geometry(String),
    #[error("bad URDF: {0}")]
    Urdf(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("gave up after {attempts} attempts with {accepted} robots accepted")]
    Exhausted { attempts: usize, accepted: usize },
    #[error("family manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One generated robot.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotRecord {
    pub half_code: HalfConfigCode,
    pub urdf: String,
    pub initial_joints: [f64; JOINT_COUNT],
}

impl RobotRecord {
    pub fn new(
        half_code: HalfConfigCode,
        geometry: &RobotGeometry,
        space: &ConfigSpace,
    ) -> Result<Self, FactoryError> {
        let full = space.expand_full(&half_code)?;
        Ok(RobotRecord {
            half_code,
            urdf: build_urdf(&full, geometry, space)?,
            initial_joints: [0.0; JOINT_COUNT],
        })
    }
}

/// Outcome of the load-and-settle check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validity {
    Valid,
    SelfCollision,
    Slipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidityConfig {
    /// Simulator steps at rest before judging.
    pub settle_steps: usize,
    /// Self-collision is re-checked every this many settle steps.
    pub collision_check_interval: usize,
}

impl Default for ValidityConfig {
    fn default() -> Self {
        ValidityConfig { settle_steps: 120, collision_check_interval: 10 }
    }
}

/// Spawns the robot on the ground at `joints`, upright at the origin.
pub fn spawn_on_ground<A: PhysicsAdapter + ?Sized>(
    sim: &mut A,
    joints: &[f64; JOINT_COUNT],
) -> Result<(), SimError> {
    let euler = [0.0; 3];
    let h = sim.resting_height(&euler, joints)?;
    sim.reset(&BasePose { position: [0.0, 0.0, h], euler }, joints)?;
    sim.set_targets(joints);
    Ok(())
}

/// Loads the robot at rest and lets it settle; self-collision at spawn or
/// during the window wins over a slip.
pub fn check_validity<A: PhysicsAdapter + ?Sized>(
    record: &RobotRecord,
    sim: &mut A,
    cfg: &ValidityConfig,
) -> Result<Validity, FactoryError> {
    sim.load(&record.urdf)?;
    spawn_on_ground(sim, &record.initial_joints)?;
    if sim.self_collision() {
        return Ok(Validity::SelfCollision);
    }
    let interval = cfg.collision_check_interval.max(1);
    for step in 1..=cfg.settle_steps {
        sim.step()?;
        if step % interval == 0 && sim.self_collision() {
            return Ok(Validity::SelfCollision);
        }
        if sim.toppled() {
            return Ok(Validity::Slipped);
        }
    }
    Ok(Validity::Valid)
}

/// Everything that determines a family besides its size and seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FactoryConfig {
    pub geometry: RobotGeometry,
    pub engine: EngineConfig,
    pub validity: ValidityConfig,
    pub space: ConfigSpace,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub attempts: usize,
    pub duplicates: usize,
    pub self_collision: usize,
    pub slipped: usize,
    pub accepted: usize,
}

impl GenerationStats {
    /// Fraction of simulated candidates that were filtered out.
    pub fn rejection_rate(&self) -> f64 {
        let simulated = self.self_collision + self.slipped + self.accepted;
        if simulated == 0 {
            0.0
        } else {
            (self.self_collision + self.slipped) as f64 / simulated as f64
        }
    }
}

/// A validated set of unique robots, in acceptance order.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotFamily {
    pub records: Vec<RobotRecord>,
    pub seed: u64,
    pub config: FactoryConfig,
}

impl RobotFamily {
    pub fn codes(&self) -> Vec<HalfConfigCode> {
        self.records.iter().map(|r| r.half_code).collect()
    }

    pub fn get(&self, code: &HalfConfigCode) -> Option<&RobotRecord> {
        self.records.iter().find(|r| &r.half_code == code)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

const CANDIDATE_BATCH: usize = 32;

/// Rejection-samples `n` unique valid robots.
///
/// Candidates are drawn sequentially from the seed and checked in fixed-size
/// batches on `workers` threads; acceptance follows draw order, so the result
/// does not depend on the worker count.
pub fn generate_family(
    n: usize,
    seed: u64,
    config: &FactoryConfig,
    workers: usize,
) -> Result<(RobotFamily, GenerationStats), FactoryError> {
    config.geometry.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| FactoryError::Manifest(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut records = Vec::with_capacity(n);
    let mut stats = GenerationStats::default();
    let max_attempts = 1000 * n.max(1) + 10_000;

    while records.len() < n {
        let mut batch = Vec::with_capacity(CANDIDATE_BATCH);
        while batch.len() < CANDIDATE_BATCH {
            if stats.attempts >= max_attempts {
                return Err(FactoryError::Exhausted { attempts: stats.attempts, accepted: records.len() });
            }
            stats.attempts += 1;
            let code = config.space.random_half_code(&mut rng);
            if !seen.insert(code) {
                stats.duplicates += 1;
                continue;
            }
            batch.push(code);
        }
        let checked: Vec<Result<(RobotRecord, Validity), FactoryError>> = pool.install(|| {
            batch
                .par_iter()
                .map(|code| {
                    let record = RobotRecord::new(*code, &config.geometry, &config.space)?;
                    let mut sim = RigidBodySim::new(config.engine.clone());
                    let v = check_validity(&record, &mut sim, &config.validity)?;
                    Ok((record, v))
                })
                .collect()
        });
        for item in checked {
            if records.len() == n {
                break;
            }
            let (record, validity) = item?;
            match validity {
                Validity::Valid => {
                    stats.accepted += 1;
                    records.push(record);
                }
                Validity::SelfCollision => stats.self_collision += 1,
                Validity::Slipped => stats.slipped += 1,
            }
        }
        log::info!(
            "generated {}/{} robots, rejection rate {:.3}",
            records.len(),
            n,
            stats.rejection_rate()
        );
    }
    Ok((RobotFamily { records, seed, config: config.clone() }, stats))
}

/// One line of `family/manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyManifestLine {
    pub code: [u8; 8],
    pub urdf_path: String,
    pub initial_joints: [f64; JOINT_COUNT],
    pub seed: u64,
}

/// Family-level metadata stored next to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyInfo {
    pub version: u32,
    pub count: usize,
    pub seed: u64,
    pub config: FactoryConfig,
    pub stats: GenerationStats,
}

pub const FAMILY_DIR: &str = "family";
pub const FAMILY_MANIFEST: &str = "family/manifest.jsonl";
pub const FAMILY_INFO: &str = "family/family.json";

/// Writes `family/manifest.jsonl`, `family/family.json`, the URDFs and the body mesh.
pub fn write_family(root: &Path, family: &RobotFamily, stats: &GenerationStats) -> Result<(), FactoryError> {
    let dir = root.join(FAMILY_DIR);
    fs::create_dir_all(dir.join("urdf"))?;
    let radius_scaled = Icosahedron::canonical().to_obj(1.0 / crate::codec::icosahedron::circumradius_per_edge());
    fs::write(dir.join(urdf::BODY_MESH), radius_scaled)?;
    let mut manifest = String::new();
    for r in &family.records {
        let rel = format!("urdf/{}.urdf", r.half_code.file_stem());
        fs::write(dir.join(&rel), &r.urdf)?;
        let line = FamilyManifestLine {
            code: r.half_code.to_array(),
            urdf_path: rel,
            initial_joints: r.initial_joints,
            seed: family.seed,
        };
        manifest.push_str(&serde_json::to_string(&line).map_err(|e| FactoryError::Manifest(e.to_string()))?);
        manifest.push('\n');
    }
    let info = FamilyInfo {
        version: 1,
        count: family.len(),
        seed: family.seed,
        config: family.config.clone(),
        stats: stats.clone(),
    };
    let info_text = serde_json::to_string_pretty(&info).map_err(|e| FactoryError::Manifest(e.to_string()))?;
    let tmp = root.join(FAMILY_MANIFEST).with_extension("jsonl.tmp");
    fs::File::create(&tmp)?.write_all(manifest.as_bytes())?;
    fs::rename(&tmp, root.join(FAMILY_MANIFEST))?;
    fs::write(root.join(FAMILY_INFO), info_text)?;
    Ok(())
}

pub fn read_family_info(root: &Path) -> Result<FamilyInfo, FactoryError> {
    let text = fs::read_to_string(root.join(FAMILY_INFO))?;
    serde_json::from_str(&text).map_err(|e| FactoryError::Manifest(e.to_string()))
}

/// Loads a family written by [`write_family`].
pub fn read_family(root: &Path) -> Result<RobotFamily, FactoryError> {
    let info = read_family_info(root)?;
    let file = fs::File::open(root.join(FAMILY_MANIFEST))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: FamilyManifestLine = serde_json::from_str(&line)
            .map_err(|e| FactoryError::Manifest(format!("line {}: {e}", i + 1)))?;
        let urdf = fs::read_to_string(root.join(FAMILY_DIR).join(&entry.urdf_path))?;
        records.push(RobotRecord {
            half_code: HalfConfigCode::from_array(entry.code),
            urdf,
            initial_joints: entry.initial_joints,
        });
    }
    if records.len() != info.count {
        return Err(FactoryError::Manifest(format!(
            "manifest lists {} robots, info says {}",
            records.len(),
            info.count
        )));
    }
    Ok(RobotFamily { records, seed: info.seed, config: info.config })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_is_unique_valid_and_deterministic() {
        let cfg = FactoryConfig::default();
        let (a, stats) = generate_family(10, 0, &cfg, 1).unwrap();
        let (b, _) = generate_family(10, 0, &cfg, 2).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a.codes(), b.codes());
        let unique: BTreeSet<_> = a.codes().into_iter().collect();
        assert_eq!(unique.len(), 10);
        assert_eq!(stats.accepted, 10);
        for r in &a.records {
            let mut sim = RigidBodySim::new(cfg.engine.clone());
            assert_eq!(check_validity(r, &mut sim, &cfg.validity).unwrap(), Validity::Valid);
        }
    }

    #[test]
    fn manifest_round_trip() {
        let cfg = FactoryConfig::default();
        let (fam, stats) = generate_family(3, 5, &cfg, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_family(dir.path(), &fam, &stats).unwrap();
        let back = read_family(dir.path()).unwrap();
        assert_eq!(back, fam);
        let first = fs::read_to_string(dir.path().join(FAMILY_MANIFEST)).unwrap();
        assert_eq!(first.lines().count(), 3);
        assert!(dir.path().join("family/icosahedron.obj").exists());
    }

    #[test]
    fn unloadable_urdf_is_a_load_error() {
        let record = RobotRecord {
            half_code: HalfConfigCode { faces: [5, 6], joints: [0; 6] },
            urdf: "<robot name='broken'>".into(),
            initial_joints: [0.0; JOINT_COUNT],
        };
        let mut sim = RigidBodySim::default();
        assert!(matches!(
            check_validity(&record, &mut sim, &ValidityConfig::default()),
            Err(FactoryError::Sim(SimError::Load(_)))
        ));
    }
}
