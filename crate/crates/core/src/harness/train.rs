//! Training loop and evaluation for every regime.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::SparseFeatureMessage;
use crate::config::{Regime, ScenarioConfig};
use crate::error::{Error, Result};
use crate::geometry::warp_tensor;
use crate::nets::{
    decode_detections, det_loss, det_targets, rec_loss, seg_loss, seg_prediction, total_loss, total_loss_var, Arch,
    nms, DetCounts, Detection, LossBreakdown, Network, SegCounts, NMS_IOU, SCORE_THRESHOLD,
};
use crate::scene::{Aabb, Scene};
use crate::tensor::layers::Session;
use crate::tensor::tape::sigmoid;
use crate::tensor::{Adam, NormMode, OptimizerState, Tensor, Var};

use super::pipeline::{EgoOutputs, Exchange, Heads, InputKind, Pipeline};
use super::seeds::{derive_seed, STREAM_EVAL_WORLDS, STREAM_INIT, STREAM_ORDER, STREAM_SELECT, STREAM_TRAIN_WORLDS};

/// Input raster and whether neighbors are fused, per regime. Late
/// collaboration trains and runs the single-agent pipeline and merges
/// afterwards.
pub fn regime_mode(regime: Regime) -> (InputKind, bool) {
    match regime {
        Regime::None | Regime::Late => (InputKind::Raw, false),
        Regime::Early => (InputKind::Supervisory, false),
        Regime::Core => (InputKind::Raw, true),
    }
}

pub fn build_scenes(cfg: &ScenarioConfig, base: u64, stream: u64, count: usize) -> Result<Vec<Scene>> {
    (0..count).map(|k| Scene::build(cfg, derive_seed(base, stream, k as u64))).collect()
}

pub fn train_scenes(cfg: &ScenarioConfig) -> Result<Vec<Scene>> {
    build_scenes(cfg, cfg.seed, STREAM_TRAIN_WORLDS, cfg.train_worlds)
}

pub fn eval_scenes(cfg: &ScenarioConfig, eval_seed: u64) -> Result<Vec<Scene>> {
    build_scenes(cfg, eval_seed, STREAM_EVAL_WORLDS, cfg.eval_worlds)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLoss {
    pub step: usize,
    pub epoch: usize,
    pub task: f64,
    pub rec: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub net: Network,
    pub regime: Regime,
    pub train_seed: u64,
    pub lambda: f64,
    pub curve: Vec<StepLoss>,
}

impl TrainedModel {
    /// Mean losses over the last epoch.
    pub fn final_losses(&self) -> LossBreakdown {
        let last = self.curve.last().map_or(0, |s| s.epoch);
        let tail: Vec<&StepLoss> = self.curve.iter().filter(|s| s.epoch == last).collect();
        let n = tail.len().max(1) as f64;
        let task = tail.iter().map(|s| s.task).sum::<f64>() / n;
        let rec = tail.iter().map(|s| s.rec).sum::<f64>() / n;
        total_loss(task, rec, self.lambda).expect("lambda validated")
    }
}

fn task_loss(s: &mut Session, out: &EgoOutputs, scene: &Scene, ego: usize, arch: &Arch) -> Result<Var> {
    let truth = &scene.truth[ego];
    let seg = match out.seg {
        Some(logits) => Some(seg_loss(s, logits, &truth.labels)?),
        None => None,
    };
    let det = match out.det {
        Some((cls, reg)) => Some(det_loss(s, cls, reg, &det_targets(&truth.boxes, &arch.det_grid()))?),
        None => None,
    };
    match (seg, det) {
        (Some(a), Some(b)) => s.tape.add(a, b),
        (Some(a), None) | (None, Some(a)) => Ok(a),
        (None, None) => Err(Error::Config("no task head enabled".into())),
    }
}

/// Trains one model. Each step draws one ego agent of one world and a
/// fresh spatial-selection seed.
pub fn train(cfg: &ScenarioConfig, data: &[Scene], train_seed: u64) -> Result<TrainedModel> {
    train_with(cfg, data, train_seed, |_| {})
}

pub fn train_with(cfg: &ScenarioConfig, data: &[Scene], train_seed: u64, mut on_step: impl FnMut(&StepLoss)) -> Result<TrainedModel> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("no training worlds".into()));
    }
    let arch = Arch::from_config(cfg);
    let mut net = Network::new(arch, derive_seed(train_seed, STREAM_INIT, 0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(train_seed, STREAM_ORDER, 0));
    let adam = Adam::default();
    let mut state = OptimizerState::new(&net.store, cfg.lr);
    let (input, collaborate) = regime_mode(cfg.regime);
    let heads = Heads { seg: cfg.task.seg(), det: cfg.task.det(), rec: true };
    let mut curve = Vec::with_capacity(cfg.epochs * data.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let scene = &data[i];
            let ego = rng.random_range(0..scene.n_agents());
            let exchange = Exchange::Masked { seed: rng.random() };
            let mut s = Session::new(&net.store, NormMode::Train);
            let pipe = Pipeline { layers: &net.layers, arch: &net.arch, cfg };
            let out = pipe.forward(&mut s, scene, ego, input, collaborate, exchange, heads)?;
            let task = task_loss(&mut s, &out, scene, ego, &net.arch)?;
            let rec_out = out.rec.expect("reconstruction head requested");
            let rec = rec_loss(&mut s, rec_out, &scene.supervisory[ego].to_tensor())?;
            let total = total_loss_var(&mut s, task, rec, cfg.lambda)?;
            let step = StepLoss {
                step: curve.len(),
                epoch,
                task: s.value(task).item()?,
                rec: s.value(rec).item()?,
                total: s.value(total).item()?,
            };
            if !step.total.is_finite() {
                return Err(Error::Invariant(format!("non-finite loss at step {}", step.step)));
            }
            let outcome = s.finish(total)?;
            let params = outcome.params();
            outcome.apply(&mut net.store)?;
            adam.step(&mut net.store, &mut state, &params)?;
            on_step(&step);
            curve.push(step);
        }
    }
    Ok(TrainedModel { net, regime: cfg.regime, train_seed, lambda: cfg.lambda, curve })
}

/// Accumulated evaluation counts over a set of worlds.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalTally {
    pub seg: SegCounts,
    pub det50: DetCounts,
    pub det70: DetCounts,
    pub messages: u64,
    pub payload_bytes: u64,
    pub wire_bytes: u64,
}

impl EvalTally {
    pub fn mean_payload_bytes(&self) -> f64 {
        if self.messages == 0 {
            0.0
        } else {
            self.payload_bytes as f64 / self.messages as f64
        }
    }
}

/// Segmentation labels and detections for one ego, in its frame.
pub struct EgoPrediction {
    pub labels: Vec<u8>,
    pub detections: Vec<Detection>,
    /// Messages the ego received, empty outside intermediate fusion.
    pub messages: Vec<SparseFeatureMessage>,
}

fn vehicle_probability(logits: &Tensor) -> Tensor {
    let (h, w, _) = logits.dims3().expect("logits are rank 3");
    let p = logits.data().chunks_exact(2).map(|l| sigmoid(l[1] - l[0])).collect();
    Tensor::new(vec![h, w, 1], p).expect("shape matches")
}

/// Runs the regime's pipeline for one ego. `exchange_seed` fixes the
/// spatial selection of neighbor messages.
pub fn predict(net: &Network, cfg: &ScenarioConfig, regime: Regime, scene: &Scene, ego: usize, exchange_seed: u64) -> Result<EgoPrediction> {
    let pipe = Pipeline { layers: &net.layers, arch: &net.arch, cfg };
    let heads = Heads { seg: true, det: true, rec: false };
    let det_grid = net.arch.det_grid();
    let grid = crate::scene::grid_spec(cfg);
    let run = |agent: usize, input, collaborate| -> Result<(Tensor, Tensor, Tensor, Vec<SparseFeatureMessage>)> {
        let mut s = Session::new(&net.store, NormMode::Eval);
        let out = pipe.forward(&mut s, scene, agent, input, collaborate, Exchange::Wire { seed: exchange_seed }, heads)?;
        let (cls, reg) = out.det.expect("detection head requested");
        Ok((s.value(out.seg.expect("seg head requested")).clone(), s.value(cls).clone(), s.value(reg).clone(), out.messages))
    };

    if regime != Regime::Late {
        let (input, collaborate) = regime_mode(regime);
        let (seg, cls, reg, messages) = run(ego, input, collaborate)?;
        let detections = decode_detections(&cls, &reg, &det_grid, SCORE_THRESHOLD, NMS_IOU)?;
        return Ok(EgoPrediction { labels: seg_prediction(&seg), detections, messages });
    }

    let ego_pose = scene.world.agent_poses[ego];
    let mut prob = vec![0.0f64; grid.cells()];
    let mut all = Vec::new();
    for j in 0..scene.n_agents() {
        let (seg, cls, reg, _) = run(j, InputKind::Raw, false)?;
        let pj = scene.world.agent_poses[j];
        let warped = warp_tensor(&vehicle_probability(&seg), &pj, &ego_pose, cfg.meters_per_cell)?;
        for (a, b) in prob.iter_mut().zip(warped.data()) {
            *a = a.max(*b);
        }
        for d in decode_detections(&cls, &reg, &det_grid, SCORE_THRESHOLD, NMS_IOU)? {
            let corners = [d.bbox.min, [d.bbox.max[0], d.bbox.min[1]], d.bbox.max, [d.bbox.min[0], d.bbox.max[1]]]
                .map(|c| ego_pose.apply_inverse(pj.apply(c)));
            let bbox = Aabb {
                min: [corners.iter().map(|c| c[0]).fold(f64::INFINITY, f64::min), corners.iter().map(|c| c[1]).fold(f64::INFINITY, f64::min)],
                max: [corners.iter().map(|c| c[0]).fold(f64::NEG_INFINITY, f64::max), corners.iter().map(|c| c[1]).fold(f64::NEG_INFINITY, f64::max)],
            };
            if det_grid.cell_of(bbox.center()).is_some() {
                all.push(Detection { bbox, score: d.score });
            }
        }
    }
    let labels = prob.iter().map(|&p| (p > 0.5) as u8).collect();
    Ok(EgoPrediction { labels, detections: nms(all, NMS_IOU), messages: Vec::new() })
}

/// Evaluates every agent of every world as ego.
pub fn evaluate(net: &Network, cfg: &ScenarioConfig, regime: Regime, scenes: &[Scene], eval_seed: u64) -> Result<EvalTally> {
    let mut tally = EvalTally::default();
    for (w, scene) in scenes.iter().enumerate() {
        let exchange_seed = derive_seed(eval_seed, STREAM_SELECT, w as u64);
        for ego in 0..scene.n_agents() {
            let pred = predict(net, cfg, regime, scene, ego, exchange_seed)?;
            let truth = &scene.truth[ego];
            tally.seg.add(&pred.labels, &truth.labels);
            tally.det50.add(&pred.detections, &truth.boxes, 0.5);
            tally.det70.add(&pred.detections, &truth.boxes, 0.7);
            for m in &pred.messages {
                tally.messages += 1;
                tally.payload_bytes += m.payload_bytes() as u64;
                tally.wire_bytes += m.wire_size() as u64;
            }
        }
    }
    Ok(tally)
}
