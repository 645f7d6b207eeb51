//! Motor babbling: trials of sine-gait cycles recorded as proprioceptive episodes.

use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::adapter::{PhysicsAdapter, SimError, JOINT_COUNT, STATE_CHANNELS};
use super::engine::{EngineConfig, RigidBodySim};
use super::gait::{sine_gait_targets, GaitParams, GaitRanges, TAU};
use crate::codec::HalfConfigCode;
use crate::factory::{spawn_on_ground, RobotFamily, RobotRecord};

/// Channels per recorded row: 18 state values then 12 next-action targets.
pub const CHANNELS: usize = STATE_CHANNELS + JOINT_COUNT;
/// Channel names in storage order.
pub const CHANNEL_NAMES: [&str; CHANNELS] = [
    "x", "y", "z", "roll", "pitch", "yaw", "q1", "q2", "q3", "q4", "q5", "q6", "q7", "q8", "q9",
    "q10", "q11", "q12", "a1", "a2", "a3", "a4", "a5", "a6", "a7", "a8", "a9", "a10", "a11", "a12",
];
/// How gait parameters are redrawn, recorded in every episode.
pub const RESAMPLING: &str = "theta0_per_trial;amplitude_phase_per_cycle";

/// One babbling cycle, `16 × 30`.
pub type Trajectory = Array2<f32>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub trials: usize,
    pub cycles_per_trial: usize,
    pub resampling: String,
    /// Trials thrown away and rerun.
    pub reruns: usize,
}

/// All cycles of one robot, `cycles × 16 × 30`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub cycles: Array3<f32>,
    pub code: HalfConfigCode,
    pub seed: u64,
    pub meta: EpisodeMeta,
}

impl Episode {
    pub fn cycle_count(&self) -> usize {
        self.cycles.len_of(Axis(0))
    }

    pub fn trajectory(&self, i: usize) -> Trajectory {
        self.cycles.index_axis(Axis(0), i).to_owned()
    }
}

#[derive(Debug, Error)]
pub enum CollectError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("robot {code}: trial {trial} toppled {attempts} times, retry budget exhausted")]
    RetryBudget { code: HalfConfigCode, trial: usize, attempts: usize },
    #[error("bad collection config: {0}")]
    Config(String),
    #[error("sink: {0}")]
    Sink(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectConfig {
    pub trials: usize,
    pub cycles_per_trial: usize,
    /// Reruns allowed per trial before the robot is given up.
    pub retry_budget: usize,
    /// Topples before this cycle count as early aborts in the statistics;
    /// every toppled trial is rerun either way.
    pub min_cycles: usize,
    /// Simulator steps per gait sub-step.
    pub steps_per_substep: usize,
    /// Simulator steps at rest before each trial.
    pub settle_steps: usize,
    pub ranges: GaitRanges,
    pub joint_limit: f64,
    /// Stop once the sink holds this many episodes; robots are taken in
    /// family order, so failures are replaced by the next ones.
    pub max_episodes: Option<usize>,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig {
            trials: 10,
            cycles_per_trial: 10,
            retry_budget: 50,
            min_cycles: 6,
            steps_per_substep: 15,
            settle_steps: 60,
            ranges: GaitRanges::default(),
            joint_limit: std::f64::consts::FRAC_PI_2,
            max_episodes: None,
        }
    }
}

impl CollectConfig {
    pub fn validate(&self) -> Result<(), CollectError> {
        if self.trials == 0 || self.cycles_per_trial == 0 || self.steps_per_substep == 0 {
            return Err(CollectError::Config("trials, cycles and steps must be positive".into()));
        }
        self.ranges.validate().map_err(CollectError::Config)
    }
}

/// Result of one cycle.
#[derive(Debug, Clone, PartialEq)]
pub enum CycleOutcome {
    Completed(Trajectory),
    /// Topple detected after this many sub-steps.
    Toppled { substep: usize },
}

/// Runs one 16-sub-step cycle. Row `t` holds the state observed before
/// sub-step `t + 1` and the targets commanded for it.
pub fn run_cycle<A: PhysicsAdapter + ?Sized>(
    sim: &mut A,
    params: &GaitParams,
    cfg: &CollectConfig,
) -> Result<CycleOutcome, SimError> {
    let mut rows = Array2::<f32>::zeros((TAU, CHANNELS));
    for t in 0..TAU {
        let state = sim.read_state().to_channels();
        let action = sine_gait_targets(params, t + 1, cfg.joint_limit);
        sim.set_targets(&action);
        for _ in 0..cfg.steps_per_substep {
            sim.step()?;
        }
        if sim.toppled() {
            return Ok(CycleOutcome::Toppled { substep: t + 1 });
        }
        let mut row = rows.row_mut(t);
        for (c, v) in state.iter().chain(action.iter()).enumerate() {
            row[c] = *v as f32;
        }
    }
    Ok(CycleOutcome::Completed(rows))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub reruns: usize,
    /// Topples before `min_cycles` completed cycles.
    pub early_topples: usize,
    pub late_topples: usize,
}

/// Deterministic per-robot seed.
pub fn episode_seed(base: u64, code: &HalfConfigCode) -> u64 {
    let mut x = base ^ 0x9E37_79B9_7F4A_7C15;
    for v in code.to_array() {
        x = x.wrapping_add(v as u64 + 1).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x ^= x >> 31;
    }
    x
}

/// Collects `trials × cycles_per_trial` cycles for one robot.
pub fn collect_episode<A: PhysicsAdapter + ?Sized>(
    record: &RobotRecord,
    sim: &mut A,
    seed: u64,
    cfg: &CollectConfig,
) -> Result<(Episode, EpisodeStats), CollectError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sim.load(&record.urdf)?;
    let total = cfg.trials * cfg.cycles_per_trial;
    let mut cycles = Array3::<f32>::zeros((total, TAU, CHANNELS));
    let mut stats = EpisodeStats::default();

    for trial in 0..cfg.trials {
        let mut attempts = 0;
        'attempt: loop {
            attempts += 1;
            if attempts > cfg.retry_budget + 1 {
                return Err(CollectError::RetryBudget { code: record.half_code, trial, attempts: attempts - 1 });
            }
            if attempts > 1 {
                stats.reruns += 1;
            }
            let theta0 = cfg.ranges.sample_theta0(&mut rng);
            let start: [f64; JOINT_COUNT] = theta0.map(|v| v.clamp(-cfg.joint_limit, cfg.joint_limit));
            spawn_on_ground(sim, &start)?;
            for _ in 0..cfg.settle_steps {
                sim.step()?;
            }
            if sim.toppled() {
                stats.early_topples += 1;
                continue 'attempt;
            }
            let mut trial_rows = Vec::with_capacity(cfg.cycles_per_trial);
            for c in 0..cfg.cycles_per_trial {
                let params = cfg.ranges.sample_cycle(&mut rng, theta0);
                match run_cycle(sim, &params, cfg)? {
                    CycleOutcome::Completed(rows) => trial_rows.push(rows),
                    CycleOutcome::Toppled { .. } => {
                        if c < cfg.min_cycles {
                            stats.early_topples += 1;
                        } else {
                            stats.late_topples += 1;
                        }
                        continue 'attempt;
                    }
                }
            }
            for (c, rows) in trial_rows.into_iter().enumerate() {
                cycles.index_axis_mut(Axis(0), trial * cfg.cycles_per_trial + c).assign(&rows);
            }
            break;
        }
    }
    let meta = EpisodeMeta {
        trials: cfg.trials,
        cycles_per_trial: cfg.cycles_per_trial,
        resampling: RESAMPLING.to_string(),
        reruns: stats.reruns,
    };
    Ok((Episode { cycles, code: record.half_code, seed, meta }, stats))
}

/// Destination for collected episodes.
pub trait EpisodeSink {
    fn contains(&self, code: &HalfConfigCode) -> bool;
    /// Stores a whole episode; partial episodes must never become visible.
    fn append(&mut self, episode: &Episode) -> Result<(), String>;
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CollectionStats {
    pub written: usize,
    pub skipped_existing: usize,
    pub reruns: usize,
    pub early_topples: usize,
    pub late_topples: usize,
    pub trials: usize,
    pub failures: Vec<(String, String)>,
}

impl CollectionStats {
    /// Reruns per completed trial.
    pub fn rerun_rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.reruns as f64 / self.trials as f64
        }
    }
}

/// Collects one episode per robot not yet in the sink.
///
/// Robots are simulated in parallel chunks and written in family order.
pub fn collect_family<S: EpisodeSink + ?Sized>(
    family: &RobotFamily,
    cfg: &CollectConfig,
    engine: &EngineConfig,
    seed: u64,
    sink: &mut S,
    workers: usize,
) -> Result<CollectionStats, CollectError> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CollectError::Config(e.to_string()))?;
    let mut stats = CollectionStats::default();
    let pending: Vec<&RobotRecord> = family
        .records
        .iter()
        .filter(|r| {
            let done = sink.contains(&r.half_code);
            if done {
                stats.skipped_existing += 1;
            }
            !done
        })
        .collect();
    let chunk = (workers.max(1) * 4).max(8);
    let limit = cfg.max_episodes.unwrap_or(usize::MAX);
    let mut rest = &pending[..];
    while !rest.is_empty() {
        let stored = stats.written + stats.skipped_existing;
        if stored >= limit {
            break;
        }
        let (group, tail) = rest.split_at(chunk.min(limit - stored).min(rest.len()));
        rest = tail;
        let results: Vec<_> = pool.install(|| {
            group
                .par_iter()
                .map(|r| {
                    let mut sim = RigidBodySim::new(engine.clone());
                    collect_episode(r, &mut sim, episode_seed(seed, &r.half_code), cfg)
                })
                .collect()
        });
        for (record, res) in group.iter().zip(results) {
            match res {
                Ok((episode, s)) => {
                    sink.append(&episode).map_err(CollectError::Sink)?;
                    stats.written += 1;
                    stats.reruns += s.reruns;
                    stats.early_topples += s.early_topples;
                    stats.late_topples += s.late_topples;
                    stats.trials += cfg.trials;
                }
                Err(e) => {
                    log::warn!("robot {} failed: {e}", record.half_code);
                    stats.failures.push((record.half_code.to_string(), e.to_string()));
                }
            }
        }
        log::info!("collected {} episodes", stats.written + stats.skipped_existing);
    }
    Ok(stats)
}
