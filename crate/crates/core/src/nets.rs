//! Encoder, reconstruction decoder, task heads, losses, detection decoding
//! and evaluation counters.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{ChannelCompressor, Decompressor};
use crate::collab::CollabParams;
use crate::config::ScenarioConfig;
use crate::error::{dim_err, Error, Result};
use crate::geometry::GridSpec;
use crate::scene::{Aabb, BEV_CHANNELS};
use crate::tensor::layers::{Conv, ConvBlock, Session, UpBlock};
use crate::tensor::tape::sigmoid;
use crate::tensor::{ParamStore, Tensor, Var};

pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;
pub const SCORE_THRESHOLD: f64 = 0.25;
pub const NMS_IOU: f64 = 0.15;
/// Reference box side in meters for the log-size regression targets.
pub const ANCHOR_SIZE: f64 = 3.0;
/// Downsampling of the encoder.
pub const FEATURE_STRIDE: usize = 4;
/// Downsampling of the detection grid relative to the BEV.
pub const DET_STRIDE: usize = 2;

const ENC_WIDTH: usize = 16;
const DEC_WIDTH: usize = 8;
const DEC_WIDTH_FULL: usize = 4;
/// Prior objectness probability used to initialize the class bias.
const DET_PRIOR: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Arch {
    pub grid_h: usize,
    pub grid_w: usize,
    pub meters_per_cell: f64,
    pub c_feature: usize,
    pub c_compressed: usize,
    pub l_kernel: usize,
}

impl Arch {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self {
            grid_h: cfg.grid_h,
            grid_w: cfg.grid_w,
            meters_per_cell: cfg.meters_per_cell,
            c_feature: cfg.c_feature,
            c_compressed: cfg.c_compressed,
            l_kernel: cfg.l_kernel,
        }
    }

    pub fn feature_grid(&self) -> GridSpec {
        GridSpec::new(self.grid_h / FEATURE_STRIDE, self.grid_w / FEATURE_STRIDE, self.meters_per_cell * FEATURE_STRIDE as f64)
    }

    pub fn det_grid(&self) -> GridSpec {
        GridSpec::new(self.grid_h / DET_STRIDE, self.grid_w / DET_STRIDE, self.meters_per_cell * DET_STRIDE as f64)
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub blocks: [ConvBlock; 3],
}

#[derive(Clone, Debug)]
pub struct RecDecoder {
    pub up1: UpBlock,
    pub conv1: ConvBlock,
    pub up2: UpBlock,
    pub conv2: ConvBlock,
    pub conv3: ConvBlock,
    pub out: Conv,
}

#[derive(Clone, Debug)]
pub struct SegHead {
    pub up1: UpBlock,
    pub up2: UpBlock,
    pub out: Conv,
}

#[derive(Clone, Debug)]
pub struct DetHead {
    pub up: UpBlock,
    pub cls: Conv,
    pub reg: Conv,
}

#[derive(Clone, Debug)]
pub struct Layers {
    pub encoder: Encoder,
    pub compressor: ChannelCompressor,
    pub decompressor: Decompressor,
    pub collab: CollabParams,
    pub rec: RecDecoder,
    pub seg: SegHead,
    pub det: DetHead,
}

/// All weights plus the layer structure that indexes them.
#[derive(Clone, Debug)]
pub struct Network {
    pub arch: Arch,
    pub store: ParamStore,
    pub layers: Layers,
}

impl Network {
    pub fn new(arch: Arch, seed: u64) -> Result<Self> {
        if arch.grid_h % FEATURE_STRIDE != 0 || arch.grid_w % FEATURE_STRIDE != 0 {
            return Err(Error::Config(format!("grid must be a multiple of {FEATURE_STRIDE}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let st = &mut store;
        let r = &mut rng;
        let c = arch.c_feature;
        let encoder = Encoder {
            blocks: [
                ConvBlock::register(st, "enc.0", 3, BEV_CHANNELS, ENC_WIDTH, 2, r),
                ConvBlock::register(st, "enc.1", 3, ENC_WIDTH, ENC_WIDTH, 2, r),
                ConvBlock::register(st, "enc.2", 3, ENC_WIDTH, c, 1, r),
            ],
        };
        let compressor = ChannelCompressor::register(st, "com.compress", c, arch.c_compressed, r)?;
        let decompressor = Decompressor::register(st, "com.decompress", arch.c_compressed, c, r);
        let collab = CollabParams::register(st, "col", c, arch.l_kernel, r);
        let rec = RecDecoder {
            up1: UpBlock::register(st, "rec.0.up", c, DEC_WIDTH, r),
            conv1: ConvBlock::register(st, "rec.0.conv", 3, DEC_WIDTH, DEC_WIDTH, 1, r),
            up2: UpBlock::register(st, "rec.1.up", DEC_WIDTH, DEC_WIDTH_FULL, r),
            conv2: ConvBlock::register(st, "rec.1.conv", 3, DEC_WIDTH_FULL, DEC_WIDTH_FULL, 1, r),
            conv3: ConvBlock::register(st, "rec.2.conv", 3, DEC_WIDTH_FULL, DEC_WIDTH_FULL, 1, r),
            out: Conv::register(st, "rec.out", 1, DEC_WIDTH_FULL, BEV_CHANNELS, 1, true, r),
        };
        let seg = SegHead {
            up1: UpBlock::register(st, "seg.0", c, DEC_WIDTH, r),
            up2: UpBlock::register(st, "seg.1", DEC_WIDTH, DEC_WIDTH_FULL, r),
            out: Conv::register(st, "seg.out", 3, DEC_WIDTH_FULL, 2, 1, true, r),
        };
        let det = DetHead {
            up: UpBlock::register(st, "det.up", c, DEC_WIDTH, r),
            cls: Conv::register(st, "det.cls", 1, DEC_WIDTH, 1, 1, true, r),
            reg: Conv::register(st, "det.reg", 1, DEC_WIDTH, 4, 1, true, r),
        };
        let prior = -((1.0 - DET_PRIOR) / DET_PRIOR).ln();
        *store.value_mut(det.cls.b.expect("class branch has a bias")) = Tensor::full(&[1], prior);
        Ok(Self { arch, store, layers: Layers { encoder, compressor, decompressor, collab, rec, seg, det } })
    }
}

impl Encoder {
    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let mut y = x;
        for b in &self.blocks {
            y = b.forward(s, y)?;
        }
        Ok(y)
    }
}

impl RecDecoder {
    pub fn forward(&self, s: &mut Session, f: Var) -> Result<Var> {
        let y = self.up1.forward(s, f)?;
        let y = self.conv1.forward(s, y)?;
        let y = self.up2.forward(s, y)?;
        let y = self.conv2.forward(s, y)?;
        let y = self.conv3.forward(s, y)?;
        self.out.forward(s, y)
    }
}

impl SegHead {
    pub fn forward(&self, s: &mut Session, f: Var) -> Result<Var> {
        let y = self.up1.forward(s, f)?;
        let y = self.up2.forward(s, y)?;
        self.out.forward(s, y)
    }
}

impl DetHead {
    /// Returns `(objectness logits [h, w, 1], regression [h, w, 4])`.
    pub fn forward(&self, s: &mut Session, f: Var) -> Result<(Var, Var)> {
        let y = self.up.forward(s, f)?;
        Ok((self.cls.forward(s, y)?, self.reg.forward(s, y)?))
    }
}

/// Squared error summed over channels and cells, divided by `h * w`.
pub fn rec_loss(s: &mut Session, ihat: Var, itilde: &Tensor) -> Result<Var> {
    let shape = s.tape.shape(ihat).to_vec();
    if shape != itilde.shape() {
        return Err(dim_err!("reconstruction {shape:?} vs target {:?}", itilde.shape()));
    }
    let (h, w, _) = itilde.dims3()?;
    s.tape.mse(ihat, Rc::new(itilde.data().to_vec()), (h * w) as f64)
}

pub fn seg_loss(s: &mut Session, logits: Var, labels: &[u8]) -> Result<Var> {
    s.tape.softmax_xent(logits, Rc::new(labels.to_vec()))
}

/// Per-cell detection targets on the detection grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DetTargets {
    pub objectness: Vec<f64>,
    pub regression: Vec<f64>,
    pub positive: Vec<f64>,
    pub n_pos: usize,
}

/// Assigns each box to the cell holding its center; the first box wins a
/// shared cell. Regression targets are the center offset in cell units and
/// log size relative to the anchor.
pub fn det_targets(boxes: &[Aabb], grid: &GridSpec) -> DetTargets {
    let n = grid.cells();
    let mut t = DetTargets { objectness: vec![0.0; n], regression: vec![0.0; n * 4], positive: vec![0.0; n], n_pos: 0 };
    for b in boxes {
        let c = b.center();
        let Some((r, col)) = grid.cell_of(c) else { continue };
        let idx = r * grid.w + col;
        if t.positive[idx] != 0.0 {
            continue;
        }
        let cc = grid.cell_center(r, col);
        let sz = b.size();
        t.objectness[idx] = 1.0;
        t.positive[idx] = 1.0;
        t.regression[idx * 4..idx * 4 + 4].copy_from_slice(&[
            (c[0] - cc[0]) / grid.meters_per_cell,
            (c[1] - cc[1]) / grid.meters_per_cell,
            (sz[0] / ANCHOR_SIZE).ln(),
            (sz[1] / ANCHOR_SIZE).ln(),
        ]);
        t.n_pos += 1;
    }
    t
}

/// Focal loss on objectness over every cell plus smooth-L1 on positive
/// cells, each divided by `max(1, n_pos)`.
pub fn det_loss(s: &mut Session, cls: Var, reg: Var, t: &DetTargets) -> Result<Var> {
    let norm = t.n_pos.max(1) as f64;
    let fl = s.tape.focal(cls, Rc::new(t.objectness.clone()), FOCAL_ALPHA, FOCAL_GAMMA, norm)?;
    let rl = s.tape.smooth_l1(reg, Rc::new(t.regression.clone()), Rc::new(t.positive.clone()), norm)?;
    s.tape.add(fl, rl)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub task_loss: f64,
    pub rec_loss: f64,
    pub total: f64,
    pub lambda: f64,
}

pub fn total_loss(task: f64, rec: f64, lambda: f64) -> Result<LossBreakdown> {
    if !(lambda >= 0.0) {
        return Err(Error::Contract(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(LossBreakdown { task_loss: task, rec_loss: rec, total: task + lambda * rec, lambda })
}

/// `task + lambda * rec` on the tape.
pub fn total_loss_var(s: &mut Session, task: Var, rec: Var, lambda: f64) -> Result<Var> {
    let weighted = s.tape.affine(rec, lambda, 0.0);
    s.tape.add(task, weighted)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub bbox: Aabb,
    pub score: f64,
}

/// Thresholds sigmoid objectness, decodes boxes and applies greedy NMS.
pub fn decode_detections(cls: &Tensor, reg: &Tensor, grid: &GridSpec, score_thresh: f64, nms_iou: f64) -> Result<Vec<Detection>> {
    let (h, w, k) = cls.dims3()?;
    let (rh, rw, rk) = reg.dims3()?;
    if k != 1 || rk != 4 || (h, w) != (rh, rw) || (h, w) != (grid.h, grid.w) {
        return Err(dim_err!("detection outputs {:?} / {:?} do not match grid {}x{}", cls.shape(), reg.shape(), grid.h, grid.w));
    }
    let mut dets = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let idx = r * w + c;
            let score = sigmoid(cls.data()[idx]);
            if score < score_thresh {
                continue;
            }
            let g = &reg.data()[idx * 4..idx * 4 + 4];
            let cc = grid.cell_center(r, c);
            let center = [cc[0] + g[0] * grid.meters_per_cell, cc[1] + g[1] * grid.meters_per_cell];
            let size = [ANCHOR_SIZE * g[2].clamp(-6.0, 6.0).exp(), ANCHOR_SIZE * g[3].clamp(-6.0, 6.0).exp()];
            dets.push(Detection { bbox: Aabb::from_center(center, size), score });
        }
    }
    Ok(nms(dets, nms_iou))
}

/// Greedy non-maximum suppression: visit by descending score (stable for
/// ties) and drop any box overlapping a kept one by more than `iou`.
pub fn nms(mut dets: Vec<Detection>, iou: f64) -> Vec<Detection> {
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut kept: Vec<Detection> = Vec::new();
    for d in dets {
        if kept.iter().all(|k| k.bbox.iou(&d.bbox) <= iou) {
            kept.push(d);
        }
    }
    kept
}

/// Cell-level intersection and union of the vehicle class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SegCounts {
    pub intersection: u64,
    pub union: u64,
}

impl SegCounts {
    pub fn add(&mut self, pred: &[u8], truth: &[u8]) {
        for (&p, &t) in pred.iter().zip(truth) {
            self.intersection += (p == 1 && t == 1) as u64;
            self.union += (p == 1 || t == 1) as u64;
        }
    }

    /// Percentage; an empty union counts as a perfect score.
    pub fn iou_percent(&self) -> f64 {
        if self.union == 0 {
            100.0
        } else {
            100.0 * self.intersection as f64 / self.union as f64
        }
    }
}

/// Vehicle class where the vehicle logit beats the background logit.
pub fn seg_prediction(logits: &Tensor) -> Vec<u8> {
    logits.data().chunks_exact(2).map(|l| (l[1] > l[0]) as u8).collect()
}

/// Matched / predicted / ground-truth tallies at one IoU threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DetCounts {
    pub true_pos: u64,
    pub predicted: u64,
    pub actual: u64,
}

impl DetCounts {
    /// Greedy matching: predictions by descending score each claim the
    /// unmatched ground-truth box of highest IoU, if it reaches `thresh`.
    pub fn add(&mut self, dets: &[Detection], truth: &[Aabb], thresh: f64) {
        let mut order: Vec<&Detection> = dets.iter().collect();
        order.sort_by(|a, b| b.score.total_cmp(&a.score));
        let mut used = vec![false; truth.len()];
        for d in order {
            let best = truth
                .iter()
                .enumerate()
                .filter(|(i, _)| !used[*i])
                .map(|(i, g)| (i, d.bbox.iou(g)))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            if let Some((i, v)) = best {
                if v >= thresh {
                    used[i] = true;
                    self.true_pos += 1;
                }
            }
        }
        self.predicted += dets.len() as u64;
        self.actual += truth.len() as u64;
    }

    pub fn precision(&self) -> f64 {
        if self.predicted == 0 {
            0.0
        } else {
            self.true_pos as f64 / self.predicted as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.actual == 0 {
            0.0
        } else {
            self.true_pos as f64 / self.actual as f64
        }
    }
}
