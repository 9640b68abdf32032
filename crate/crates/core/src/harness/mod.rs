//! Experiment orchestration: regimes, sweeps, ablation, loss curves and
//! CSV output.

pub mod pipeline;
pub mod report;
pub mod seeds;
pub mod train;

use std::time::Instant;

use crate::config::{Regime, ScenarioConfig};
use crate::error::{Error, Result};
use crate::scene::Scene;

pub use report::{AblationRow, CurveRow, MetricsRow};
pub use train::{evaluate, eval_scenes, predict, train, train_scenes, EvalTally, StepLoss, TrainedModel};

/// Spatial ratio reported for a regime: only intermediate fusion transmits
/// features.
pub fn reported_ratio(cfg: &ScenarioConfig, regime: Regime) -> f64 {
    if regime == Regime::Core {
        cfg.spatial_ratio()
    } else {
        0.0
    }
}

pub fn metrics_row(cfg: &ScenarioConfig, model: &TrainedModel, eval_seed: u64, tally: &EvalTally, seconds: f64) -> MetricsRow {
    let losses = model.final_losses();
    MetricsRow {
        regime: cfg.regime,
        train_seed: model.train_seed,
        eval_seed,
        ratio: reported_ratio(cfg, cfg.regime),
        lambda: cfg.lambda,
        vehicle_iou: tally.seg.iou_percent(),
        det_p50: tally.det50.precision(),
        det_r50: tally.det50.recall(),
        det_p70: tally.det70.precision(),
        det_r70: tally.det70.recall(),
        payload_bytes: tally.mean_payload_bytes(),
        task_loss: losses.task_loss,
        rec_loss: losses.rec_loss,
        total_loss: losses.total,
        seconds,
    }
}

/// Prebuilt training and evaluation worlds for one config.
pub struct Datasets {
    pub train: Vec<Scene>,
    pub eval: Vec<(u64, Vec<Scene>)>,
}

impl Datasets {
    pub fn build(cfg: &ScenarioConfig) -> Result<Self> {
        let eval = cfg.eval_seeds.iter().map(|&s| Ok((s, eval_scenes(cfg, s)?))).collect::<Result<_>>()?;
        Ok(Self { train: train_scenes(cfg)?, eval })
    }
}

/// Trains one model per training seed and evaluates it on every eval seed.
/// `on_model` sees each trained model (for checkpointing).
pub fn run_regime_with(cfg: &ScenarioConfig, data: &Datasets, mut on_model: impl FnMut(&TrainedModel) -> Result<()>) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let train_cfg = training_config(cfg);
    for &seed in &cfg.train_seeds {
        let start = Instant::now();
        let model = train(&train_cfg, &data.train, seed)?;
        on_model(&model)?;
        let train_secs = start.elapsed().as_secs_f64();
        for (eval_seed, scenes) in &data.eval {
            let t0 = Instant::now();
            let tally = evaluate(&model.net, cfg, cfg.regime, scenes, *eval_seed)?;
            rows.push(metrics_row(cfg, &model, *eval_seed, &tally, train_secs + t0.elapsed().as_secs_f64()));
        }
    }
    Ok(rows)
}

pub fn run_regime(cfg: &ScenarioConfig) -> Result<Vec<MetricsRow>> {
    run_regime_with(cfg, &Datasets::build(cfg)?, |_| Ok(()))
}

/// Late collaboration trains the single-agent model.
pub fn training_config(cfg: &ScenarioConfig) -> ScenarioConfig {
    let mut c = cfg.clone();
    if c.regime == Regime::Late {
        c.regime = Regime::None;
    }
    c
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Ratio,
    K,
    R,
    Lambda,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ratio" => Ok(SweepAxis::Ratio),
            "K" | "k" => Ok(SweepAxis::K),
            "R" | "r" => Ok(SweepAxis::R),
            "lambda" => Ok(SweepAxis::Lambda),
            _ => Err(Error::Config(format!("unknown sweep axis {s:?} (expected ratio|K|R|lambda)"))),
        }
    }
}

pub fn apply_axis(cfg: &mut ScenarioConfig, axis: SweepAxis, value: f64) {
    match axis {
        SweepAxis::Ratio => cfg.set_spatial_ratio(value),
        SweepAxis::K => cfg.k_percent = value,
        SweepAxis::R => cfg.r_percent = value,
        SweepAxis::Lambda => cfg.lambda = value,
    }
}

/// One configuration per value, same seeds and worlds. With `retrain`
/// unset, compression axes reuse models trained at the base config and
/// only change what is transmitted at evaluation.
pub fn sweep(cfg: &ScenarioConfig, axis: SweepAxis, values: &[f64], retrain: bool) -> Result<Vec<MetricsRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let data = Datasets::build(cfg)?;
    let mut rows = Vec::new();
    if retrain || axis == SweepAxis::Lambda {
        for &v in values {
            let mut c = cfg.clone();
            apply_axis(&mut c, axis, v);
            c.validate()?;
            rows.extend(run_regime_with(&c, &data, |_| Ok(()))?);
        }
        return Ok(rows);
    }
    let train_cfg = training_config(cfg);
    let mut models = Vec::new();
    for &seed in &cfg.train_seeds {
        let t0 = Instant::now();
        let m = train(&train_cfg, &data.train, seed)?;
        models.push((m, t0.elapsed().as_secs_f64()));
    }
    for &v in values {
        let mut c = cfg.clone();
        apply_axis(&mut c, axis, v);
        c.validate()?;
        for (m, secs) in &models {
            for (eval_seed, scenes) in &data.eval {
                let t0 = Instant::now();
                let tally = evaluate(&m.net, &c, c.regime, scenes, *eval_seed)?;
                rows.push(metrics_row(&c, m, *eval_seed, &tally, secs + t0.elapsed().as_secs_f64()));
            }
        }
    }
    Ok(rows)
}

/// Base (no collaboration, no reconstruction), +collaboration and
/// +collaboration+reconstruction, on identical worlds and seeds.
pub fn ablate(cfg: &ScenarioConfig) -> Result<Vec<AblationRow>> {
    let data = Datasets::build(cfg)?;
    let variants = [("base", Regime::None, 0.0), ("+collab", Regime::Core, 0.0), ("+collab+recon", Regime::Core, cfg.lambda)];
    variants
        .into_iter()
        .map(|(name, regime, lambda)| {
            let c = ScenarioConfig { regime, lambda, ..cfg.clone() };
            let rows = run_regime_with(&c, &data, |_| Ok(()))?;
            Ok(AblationRow::from_rows(name, regime, lambda, rows))
        })
        .collect()
}

/// Two training runs per seed that differ only in lambda (0 and 1), with
/// every step's losses. The lambda-0 run still evaluates the
/// reconstruction loss.
pub fn loss_curves(cfg: &ScenarioConfig) -> Result<Vec<CurveRow>> {
    let data = train_scenes(cfg)?;
    let mut out = Vec::new();
    for lambda in [0.0, 1.0] {
        let c = training_config(&ScenarioConfig { lambda, ..cfg.clone() });
        for &seed in &cfg.train_seeds {
            let m = train(&c, &data, seed)?;
            out.extend(m.curve.iter().map(|s| CurveRow { lambda, seed, step: s.step, task_loss: s.task, rec_loss: s.rec }));
        }
    }
    Ok(out)
}

/// Seed-averaged vehicle IoU of a set of rows.
pub fn mean_iou(rows: &[MetricsRow]) -> f64 {
    rows.iter().map(|r| r.vehicle_iou).sum::<f64>() / rows.len().max(1) as f64
}
