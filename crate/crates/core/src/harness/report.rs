//! Result rows and their CSV forms.
//!
//! `metrics.csv` holds only deterministic quantities; wall-clock seconds go
//! to a separate `timings.csv` keyed by the same columns.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::Regime;
use crate::error::{Error, Result};

pub const METRICS_VERSION: u32 = 1;

pub const METRICS_HEADER: &str = "version,regime,train_seed,eval_seed,ratio,lambda,vehicle_iou,det_p50,det_r50,det_p70,det_r70,payload_bytes,task_loss,rec_loss,total_loss";
pub const TIMINGS_HEADER: &str = "regime,train_seed,eval_seed,ratio,lambda,seconds";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub regime: Regime,
    pub train_seed: u64,
    pub eval_seed: u64,
    pub ratio: f64,
    pub lambda: f64,
    /// Percent.
    pub vehicle_iou: f64,
    pub det_p50: f64,
    pub det_r50: f64,
    pub det_p70: f64,
    pub det_r70: f64,
    /// Mean payload bytes per received message.
    pub payload_bytes: f64,
    pub task_loss: f64,
    pub rec_loss: f64,
    pub total_loss: f64,
    pub seconds: f64,
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{METRICS_VERSION},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.regime,
            self.train_seed,
            self.eval_seed,
            self.ratio,
            self.lambda,
            self.vehicle_iou,
            self.det_p50,
            self.det_r50,
            self.det_p70,
            self.det_r70,
            self.payload_bytes,
            self.task_loss,
            self.rec_loss,
            self.total_loss
        )
    }

    /// Range checks and the loss decomposition identity.
    pub fn check(&self) -> Result<()> {
        let gap = self.total_loss - self.task_loss - self.lambda * self.rec_loss;
        if gap.abs() > 1e-12 * self.total_loss.abs().max(1.0) {
            return Err(Error::Invariant(format!("loss identity off by {gap:e}")));
        }
        if !(0.0..=100.0).contains(&self.vehicle_iou) {
            return Err(Error::Invariant(format!("IoU {} out of range", self.vehicle_iou)));
        }
        for v in [self.det_p50, self.det_r50, self.det_p70, self.det_r70] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Invariant(format!("precision/recall {v} out of range")));
            }
        }
        if self.det_p70 > self.det_p50 || self.det_r70 > self.det_r50 {
            return Err(Error::Invariant("stricter IoU threshold matched more boxes".into()));
        }
        Ok(())
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in rows {
        writeln!(s, "{}", r.csv_line()).unwrap();
    }
    s
}

pub fn timings_csv(rows: &[MetricsRow]) -> String {
    let mut s = format!("{TIMINGS_HEADER}\n");
    for r in rows {
        writeln!(s, "{},{},{},{},{},{:.3}", r.regime, r.train_seed, r.eval_seed, r.ratio, r.lambda, r.seconds).unwrap();
    }
    s
}

/// Writes `metrics.csv` and `timings.csv` into `dir` after checking every
/// row.
pub fn write_metrics(dir: &Path, rows: &[MetricsRow]) -> Result<()> {
    for r in rows {
        r.check()?;
    }
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("metrics.csv"), metrics_csv(rows))?;
    std::fs::write(dir.join("timings.csv"), timings_csv(rows))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: &'static str,
    pub regime: Regime,
    pub lambda: f64,
    pub mean_iou: f64,
    pub rows: Vec<MetricsRow>,
}

impl AblationRow {
    pub fn from_rows(name: &'static str, regime: Regime, lambda: f64, rows: Vec<MetricsRow>) -> Self {
        Self { name, regime, lambda, mean_iou: super::mean_iou(&rows), rows }
    }
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant,collab,recon,lambda,mean_vehicle_iou\n");
    for r in rows {
        writeln!(s, "{},{},{},{},{}", r.name, (r.regime == Regime::Core) as u8, (r.lambda > 0.0) as u8, r.lambda, r.mean_iou).unwrap();
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveRow {
    pub lambda: f64,
    pub seed: u64,
    pub step: usize,
    pub task_loss: f64,
    pub rec_loss: f64,
}

pub fn curves_csv(rows: &[CurveRow]) -> String {
    let mut s = String::from("lambda,seed,step,task_loss,rec_loss\n");
    for r in rows {
        writeln!(s, "{},{},{},{},{}", r.lambda, r.seed, r.step, r.task_loss, r.rec_loss).unwrap();
    }
    s
}
