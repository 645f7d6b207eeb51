use ndarray::{s, Array2, Axis};
use rand::Rng;

use super::DatasetError;
use crate::codec::{ConfigSpace, HalfConfigCode, LegPatternIndex, HALF_JOINTS};
use crate::sim::collect::{Episode, CHANNELS};
use crate::sim::gait::TAU;

/// Consecutive cycles per model input.
pub const WINDOW_CYCLES: usize = 10;
/// Time steps per model input.
pub const WINDOW_STEPS: usize = WINDOW_CYCLES * TAU;
/// Channels dropped by [`drop_com_channels`].
pub const COM_CHANNELS: usize = 3;

/// Ten consecutive cycles flattened to `160 × channels`, row `c·16 + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWindow {
    pub values: Array2<f32>,
    pub label_leg: LegPatternIndex,
    pub label_joints: [u8; HALF_JOINTS],
    /// First cycle of the window inside its episode.
    pub start: usize,
}

impl SampleWindow {
    pub fn channels(&self) -> usize {
        self.values.ncols()
    }
}

/// Labels derived from a half-code.
pub fn labels(code: &HalfConfigCode, space: &ConfigSpace) -> Result<(LegPatternIndex, [u8; HALF_JOINTS]), DatasetError> {
    let leg = space.leg_pattern_index(code.faces).map_err(|e| DatasetError::Format(e.to_string()))?;
    Ok((leg, code.joints))
}

/// Window starting at cycle `start`.
pub fn window_at(ep: &Episode, start: usize, space: &ConfigSpace) -> Result<SampleWindow, DatasetError> {
    let (cycles, steps, channels) = ep.cycles.dim();
    if steps != TAU || channels != CHANNELS {
        return Err(DatasetError::Format(format!("episode shape {:?}", ep.cycles.dim())));
    }
    if start + WINDOW_CYCLES > cycles {
        return Err(DatasetError::Sizing(format!(
            "window [{start}, {}) does not fit in {cycles} cycles",
            start + WINDOW_CYCLES
        )));
    }
    let block = ep.cycles.slice(s![start..start + WINDOW_CYCLES, .., ..]);
    let values = block
        .to_owned()
        .into_shape_with_order((WINDOW_STEPS, CHANNELS))
        .map_err(|e| DatasetError::Format(e.to_string()))?;
    let (label_leg, label_joints) = labels(&ep.code, space)?;
    Ok(SampleWindow { values, label_leg, label_joints, start })
}

/// Window with a start drawn uniformly from every valid offset.
pub fn sample_window<R: Rng + ?Sized>(ep: &Episode, rng: &mut R, space: &ConfigSpace) -> Result<SampleWindow, DatasetError> {
    let cycles = ep.cycles.len_of(Axis(0));
    if cycles < WINDOW_CYCLES {
        return Err(DatasetError::Sizing(format!("episode has {cycles} cycles, need {WINDOW_CYCLES}")));
    }
    let start = rng.random_range(0..=cycles - WINDOW_CYCLES);
    window_at(ep, start, space)
}

/// Removes the body position channels, keeping the order of the rest.
pub fn drop_com_channels(w: &SampleWindow) -> Result<SampleWindow, DatasetError> {
    if w.channels() != CHANNELS {
        return Err(DatasetError::Format(format!("expected {CHANNELS} channels, got {}", w.channels())));
    }
    Ok(SampleWindow { values: w.values.slice(s![.., COM_CHANNELS..]).to_owned(), ..w.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::store::tests::fake_episode;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ep() -> Episode {
        fake_episode([13, 1, 2, 3, 6, 4, 5, 6], 100, 2)
    }

    #[test]
    fn boundaries() {
        let space = ConfigSpace::default();
        let e = ep();
        let w0 = window_at(&e, 0, &space).unwrap();
        assert_eq!(w0.values.dim(), (160, 30));
        assert_eq!(w0.values[[0, 0]], e.cycles[[0, 0, 0]]);
        let w90 = window_at(&e, 90, &space).unwrap();
        assert_eq!(w90.values[[159, 29]], e.cycles[[99, 15, 29]]);
        assert!(matches!(window_at(&e, 91, &space), Err(DatasetError::Sizing(_))));
        assert_eq!(w0.label_joints, [1, 2, 3, 4, 5, 6]);
        assert_eq!(w0.label_leg, space.leg_pattern_index([13, 6]).unwrap());
    }

    #[test]
    fn short_episode_is_sizing_error() {
        let space = ConfigSpace::default();
        let e = fake_episode([13, 1, 2, 3, 6, 4, 5, 6], 9, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_window(&e, &mut rng, &space), Err(DatasetError::Sizing(_))));
    }

    #[test]
    fn every_start_is_reachable() {
        let space = ConfigSpace::default();
        let e = ep();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut seen = [false; 91];
        for _ in 0..5000 {
            seen[sample_window(&e, &mut rng, &space).unwrap().start] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn drop_com_is_a_projection() {
        let space = ConfigSpace::default();
        let w = window_at(&ep(), 7, &space).unwrap();
        let d = drop_com_channels(&w).unwrap();
        assert_eq!(d.channels(), 27);
        for r in 0..160 {
            for c in 0..27 {
                assert_eq!(d.values[[r, c]].to_bits(), w.values[[r, c + 3]].to_bits());
            }
        }
        assert!(matches!(drop_com_channels(&d), Err(DatasetError::Format(_))));
    }

    proptest! {
        #[test]
        fn window_rows_match_episode(seed in any::<u64>()) {
            let space = ConfigSpace::default();
            let e = ep();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = sample_window(&e, &mut rng, &space).unwrap();
            prop_assert!(w.start <= 90);
            for c in 0..WINDOW_CYCLES {
                for t in 0..TAU {
                    for k in 0..CHANNELS {
                        prop_assert_eq!(w.values[[c * TAU + t, k]], e.cycles[[w.start + c, t, k]]);
                    }
                }
            }
        }
    }
}
