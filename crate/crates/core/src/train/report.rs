use serde::{Deserialize, Serialize};

use super::metrics::MetricsReport;
use super::{labels_to_code, TrainError};
use crate::codec::{ConfigSpace, HalfConfigCode};
use crate::net::{ConfigLabels, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotPrediction {
    pub code: String,
    pub predicted: String,
    pub window_start: usize,
    pub leg_correct: bool,
    pub joints_correct: usize,
}

impl RobotPrediction {
    pub fn new(code: HalfConfigCode, start: usize, p: &ConfigLabels, space: &ConfigSpace) -> Result<Self, TrainError> {
        let predicted = labels_to_code(p, space)?;
        Ok(RobotPrediction {
            code: code.to_string(),
            predicted: predicted.to_string(),
            window_start: start,
            leg_correct: predicted.faces == code.faces,
            joints_correct: predicted.joints.iter().zip(&code.joints).filter(|(a, b)| a == b).count(),
        })
    }
}

/// Accuracy and joint-error rows with a leg column and one column per joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

impl MetricTable {
    pub fn from_metrics(m: &MetricsReport) -> Self {
        let mut columns = vec!["Leg".to_string()];
        columns.extend((1..=6).map(|i| format!("Jnt {i}")));
        columns.push("Jnt avg".into());
        columns.push("Total".into());
        let mut acc = vec![Some(m.leg_acc)];
        acc.extend(m.jnt_acc.iter().map(|&v| Some(v)));
        acc.push(Some(m.jnt_acc_mean));
        acc.push(Some(m.tot_acc));
        let mut mean = vec![None];
        mean.extend(m.err_dist_mean.iter().map(|&v| Some(v)));
        mean.push(Some(m.err_dist_mean_all));
        mean.push(None);
        let mut std = vec![None];
        std.extend(m.err_dist_std.iter().map(|&v| Some(v)));
        std.push(None);
        std.push(None);
        MetricTable {
            columns,
            rows: vec![("Acc Mean".into(), acc), ("Err-Dist Mean".into(), mean), ("Err-Dist Std".into(), std)],
        }
    }

    pub fn render(&self) -> String {
        let mut out = format!("{:<14}", "");
        for c in &self.columns {
            out.push_str(&format!("{c:>9}"));
        }
        out.push('\n');
        for (name, vals) in &self.rows {
            out.push_str(&format!("{name:<14}"));
            for v in vals {
                match v {
                    Some(v) => out.push_str(&format!("{v:>9.3}")),
                    None => out.push_str(&format!("{:>9}", "-")),
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: Variant,
    pub rm_xyz: bool,
    /// Seed of the evaluation windows.
    pub seed: u64,
    pub windows_per_robot: usize,
    pub loss: f64,
    pub metrics: MetricsReport,
    pub robots: Vec<RobotPrediction>,
}

impl EvalReport {
    pub fn label(&self) -> String {
        format!("{}{}", self.variant.name(), if self.rm_xyz { "-rm_xyz" } else { "" })
    }

    pub fn table(&self) -> MetricTable {
        MetricTable::from_metrics(&self.metrics)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub leg_acc: f64,
    pub jnt_acc_mean: f64,
    pub tot_acc: f64,
    pub err_dist_mean: f64,
    pub rank: usize,
}

/// Side-by-side results ranked by total accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantComparison {
    pub rows: Vec<ComparisonRow>,
    /// Groups of rows whose total accuracy is identical.
    pub ties: Vec<Vec<String>>,
}

impl VariantComparison {
    pub fn render(&self) -> String {
        let mut out = format!("{:<16}{:>6}{:>9}{:>9}{:>9}{:>9}\n", "variant", "rank", "leg", "jnt", "total", "err");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<16}{:>6}{:>9.3}{:>9.3}{:>9.3}{:>9.3}\n",
                r.name, r.rank, r.leg_acc, r.jnt_acc_mean, r.tot_acc, r.err_dist_mean
            ));
        }
        for t in &self.ties {
            out.push_str(&format!("tie: {}\n", t.join(", ")));
        }
        out
    }

    pub fn row(&self, name: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

/// Ranks named reports by total accuracy. Equal totals share a rank and are
/// listed as a tie.
pub fn compare_variants(reports: &[(String, MetricsReport)]) -> Result<VariantComparison, TrainError> {
    if reports.len() < 2 {
        return Err(TrainError::Validation("need at least two reports to compare".into()));
    }
    let mut rows: Vec<ComparisonRow> = reports
        .iter()
        .map(|(name, m)| ComparisonRow {
            name: name.clone(),
            leg_acc: m.leg_acc,
            jnt_acc_mean: m.jnt_acc_mean,
            tot_acc: m.tot_acc,
            err_dist_mean: m.err_dist_mean_all,
            rank: 0,
        })
        .collect();
    rows.sort_by(|a, b| b.tot_acc.total_cmp(&a.tot_acc));
    let mut ties = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        let mut j = i;
        while j + 1 < rows.len() && rows[j + 1].tot_acc == rows[i].tot_acc {
            j += 1;
        }
        for r in &mut rows[i..=j] {
            r.rank = i + 1;
        }
        if j > i {
            ties.push(rows[i..=j].iter().map(|r| r.name.clone()).collect());
        }
        i = j + 1;
    }
    Ok(VariantComparison { rows, ties })
}
