use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::codec::circular_joint_distance;
use crate::net::loss::{ConfigLabels, JOINT_HEADS};

/// Accuracy and circular joint error over a set of predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub count: usize,
    pub leg_acc: f64,
    pub jnt_acc: [f64; JOINT_HEADS],
    pub jnt_acc_mean: f64,
    /// All seven heads right.
    pub tot_acc: f64,
    pub err_dist_mean: [f64; JOINT_HEADS],
    pub err_dist_std: [f64; JOINT_HEADS],
    /// Mean over every joint head and sample.
    pub err_dist_mean_all: f64,
}

pub fn compute_metrics(pred: &[ConfigLabels], truth: &[ConfigLabels]) -> Result<MetricsReport, TrainError> {
    if pred.len() != truth.len() {
        return Err(TrainError::Validation(format!("{} predictions for {} labels", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(TrainError::Validation("no predictions".into()));
    }
    let n = pred.len() as f64;
    let mut leg = 0usize;
    let mut tot = 0usize;
    let mut jnt = [0usize; JOINT_HEADS];
    let mut dist = [[0.0f64; 2]; JOINT_HEADS];
    for (p, t) in pred.iter().zip(truth) {
        t.validate().map_err(|e| TrainError::Validation(e.to_string()))?;
        p.validate().map_err(|e| TrainError::Validation(e.to_string()))?;
        let leg_ok = p.leg == t.leg;
        leg += leg_ok as usize;
        let mut all = leg_ok;
        for j in 0..JOINT_HEADS {
            let d = circular_joint_distance(p.joints[j], t.joints[j]).expect("validated") as f64;
            jnt[j] += (d == 0.0) as usize;
            all &= d == 0.0;
            dist[j][0] += d;
            dist[j][1] += d * d;
        }
        tot += all as usize;
    }
    let jnt_acc = jnt.map(|c| c as f64 / n);
    let err_dist_mean = dist.map(|[s, _]| s / n);
    let err_dist_std = std::array::from_fn(|j| (dist[j][1] / n - err_dist_mean[j].powi(2)).max(0.0).sqrt());
    Ok(MetricsReport {
        count: pred.len(),
        leg_acc: leg as f64 / n,
        jnt_acc_mean: jnt_acc.iter().sum::<f64>() / JOINT_HEADS as f64,
        jnt_acc,
        tot_acc: tot as f64 / n,
        err_dist_mean_all: err_dist_mean.iter().sum::<f64>() / JOINT_HEADS as f64,
        err_dist_mean,
        err_dist_std,
    })
}

/// Mean circular distance between two independent uniform joint states,
/// by enumerating all 144 pairs.
pub fn chance_err_dist() -> (f64, f64) {
    let mut s = 0.0;
    let mut s2 = 0.0;
    for a in 0..12u8 {
        for b in 0..12u8 {
            let d = circular_joint_distance(a, b).expect("in range") as f64;
            s += d;
            s2 += d * d;
        }
    }
    let mean = s / 144.0;
    (mean, (s2 / 144.0 - mean * mean).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<ConfigLabels> {
        (0..n)
            .map(|_| ConfigLabels { leg: rng.random_range(0..30), joints: std::array::from_fn(|_| rng.random_range(0..12)) })
            .collect()
    }

    #[test]
    fn perfect_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = random_labels(&mut rng, 20);
        let m = compute_metrics(&t, &t).unwrap();
        assert_eq!((m.leg_acc, m.tot_acc, m.jnt_acc_mean, m.err_dist_mean_all), (1.0, 1.0, 1.0, 0.0));
    }

    #[test]
    fn one_wrong_joint_breaks_total_only() {
        let t = vec![ConfigLabels { leg: 4, joints: [1, 2, 3, 4, 5, 6] }];
        let p = vec![ConfigLabels { leg: 4, joints: [1, 2, 3, 4, 5, 9] }];
        let m = compute_metrics(&p, &t).unwrap();
        assert_eq!((m.leg_acc, m.tot_acc), (1.0, 0.0));
        assert_eq!(m.err_dist_mean[5], 3.0);
    }

    #[test]
    fn length_mismatch_rejected() {
        let t = vec![ConfigLabels { leg: 4, joints: [0; 6] }];
        assert!(matches!(compute_metrics(&[], &t), Err(TrainError::Validation(_))));
    }

    #[test]
    fn chance_distance_is_three() {
        assert_eq!(chance_err_dist().0, 3.0);
    }

    #[test]
    fn uniform_predictions_approach_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = random_labels(&mut rng, 20_000);
        let p = random_labels(&mut rng, 20_000);
        let m = compute_metrics(&p, &t).unwrap();
        assert!((m.err_dist_mean_all - 3.0).abs() < 0.03, "{}", m.err_dist_mean_all);
        assert!((m.leg_acc - 1.0 / 30.0).abs() < 0.005);
    }

    proptest! {
        #[test]
        fn invariants(seed in any::<u64>(), n in 1usize..60) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_labels(&mut rng, n);
            let mut p = random_labels(&mut rng, n);
            for i in 0..n {
                if rng.random_bool(0.5) { p[i] = t[i]; }
            }
            let m = compute_metrics(&p, &t).unwrap();
            prop_assert!(m.tot_acc <= m.leg_acc);
            for j in 0..6 {
                prop_assert!(m.tot_acc <= m.jnt_acc[j]);
                prop_assert!((0.0..=6.0).contains(&m.err_dist_mean[j]));
                prop_assert!(m.err_dist_mean[j] == 0.0 || m.jnt_acc[j] < 1.0);
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.reverse();
            let p2: Vec<_> = order.iter().map(|&i| p[i]).collect();
            let t2: Vec<_> = order.iter().map(|&i| t[i]).collect();
            let m2 = compute_metrics(&p2, &t2).unwrap();
            prop_assert_eq!(m.tot_acc, m2.tot_acc);
            prop_assert!((m.err_dist_mean_all - m2.err_dist_mean_all).abs() < 1e-12);
        }
    }
}
