//! Parameter-bound layers and the per-forward `Session` that binds store
//! entries into a fresh tape.

use rand::Rng;

use super::tape::NormStats;
use super::{NormMode, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;

pub const NORM_MOMENTUM: f64 = 0.9;

pub struct Session<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
    mode: NormMode,
    stat_updates: Vec<(ParamId, ParamId, NormStats)>,
}

/// Gradients and running-statistic updates produced by one forward/backward.
#[derive(Debug, Default)]
pub struct StepOutcome {
    pub grads: Vec<(ParamId, Vec<f64>)>,
    stat_updates: Vec<(ParamId, ParamId, NormStats)>,
}

impl StepOutcome {
    pub fn params(&self) -> Vec<ParamId> {
        self.grads.iter().map(|(id, _)| *id).collect()
    }

    /// Accumulates gradients and folds the observed statistics into the
    /// running estimates, in forward order.
    pub fn apply(self, store: &mut ParamStore) -> Result<()> {
        for (id, g) in &self.grads {
            store.accumulate_grad(*id, g)?;
        }
        apply_stats(store, self.stat_updates);
        Ok(())
    }
}

fn apply_stats(store: &mut ParamStore, updates: Vec<(ParamId, ParamId, NormStats)>) {
    for (mean_id, var_id, stats) in updates {
        for (r, b) in store.value_mut(mean_id).data_mut().iter_mut().zip(&stats.mean) {
            *r = NORM_MOMENTUM * *r + (1.0 - NORM_MOMENTUM) * b;
        }
        for (r, b) in store.value_mut(var_id).data_mut().iter_mut().zip(&stats.var) {
            *r = NORM_MOMENTUM * *r + (1.0 - NORM_MOMENTUM) * b;
        }
    }
}

impl<'a> Session<'a> {
    pub fn new(store: &'a ParamStore, mode: NormMode) -> Self {
        Self { tape: Tape::new(), store, bound: vec![None; store.len()], mode, stat_updates: Vec::new() }
    }

    pub fn mode(&self) -> NormMode {
        self.mode
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    /// Binds a store entry into the tape once per session.
    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let e = self.store.entry(id);
        let v = if e.trainable && self.mode == NormMode::Train {
            self.tape.param(e.value.clone())
        } else {
            self.tape.constant(e.value.clone())
        };
        self.bound[id.0] = Some(v);
        v
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.tape.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }

    /// Runs backward from `loss` and collects the gradient of every bound
    /// trainable parameter.
    pub fn finish(mut self, loss: Var) -> Result<StepOutcome> {
        self.tape.backward(loss)?;
        let mut grads = Vec::new();
        for (i, slot) in self.bound.iter().enumerate() {
            if let Some(v) = slot {
                if let Some(g) = self.tape.grad(*v) {
                    grads.push((ParamId(i), g.to_vec()));
                }
            }
        }
        Ok(StepOutcome { grads, stat_updates: self.stat_updates })
    }

    /// Ends the session without a backward pass, keeping only the observed
    /// normalization statistics.
    pub fn finish_forward(self) -> StepOutcome {
        StepOutcome { grads: Vec::new(), stat_updates: self.stat_updates }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        k: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = store.add_he(&format!("{name}.w"), &[k, k, cin, cout], k * k * cin, rng);
        let b = bias.then(|| store.add_param(&format!("{name}.b"), Tensor::zeros(&[cout])));
        Self { w, b, stride, pad: k / 2 }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.p(self.w);
        let y = s.tape.conv2d(x, w, self.stride, self.pad)?;
        match self.b {
            Some(b) => {
                let b = s.p(b);
                s.tape.add_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvT {
    pub w: ParamId,
}

impl ConvT {
    pub fn register<R: Rng>(store: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut R) -> Self {
        Self { w: store.add_he(&format!("{name}.w"), &[2, 2, cin, cout], cin, rng) }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.p(self.w);
        s.tape.conv_transpose2x2(x, w)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl Norm {
    pub fn register(store: &mut ParamStore, name: &str, c: usize) -> Self {
        Self {
            gamma: store.add_param(&format!("{name}.gamma"), Tensor::full(&[c], 1.0)),
            beta: store.add_param(&format!("{name}.beta"), Tensor::zeros(&[c])),
            running_mean: store.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[c])),
            running_var: store.add_buffer(&format!("{name}.running_var"), Tensor::full(&[c], 1.0)),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let g = s.p(self.gamma);
        let b = s.p(self.beta);
        let store = s.store;
        let (y, stats) = s.tape.norm(
            x,
            g,
            b,
            s.mode,
            store.value(self.running_mean).data(),
            store.value(self.running_var).data(),
        )?;
        if let Some(stats) = stats {
            s.stat_updates.push((self.running_mean, self.running_var, stats));
        }
        Ok(y)
    }
}

/// Convolution, normalization, ReLU.
#[derive(Clone, Copy, Debug)]
pub struct ConvBlock {
    pub conv: Conv,
    pub norm: Norm,
}

impl ConvBlock {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        k: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            conv: Conv::register(store, &format!("{name}.conv"), k, cin, cout, stride, false, rng),
            norm: Norm::register(store, &format!("{name}.norm"), cout),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let y = self.conv.forward(s, x)?;
        let y = self.norm.forward(s, y)?;
        Ok(s.tape.relu(y))
    }
}

/// 2x2 stride-2 transposed convolution, normalization, ReLU.
#[derive(Clone, Copy, Debug)]
pub struct UpBlock {
    pub up: ConvT,
    pub norm: Norm,
}

impl UpBlock {
    pub fn register<R: Rng>(store: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut R) -> Self {
        Self {
            up: ConvT::register(store, &format!("{name}.up"), cin, cout, rng),
            norm: Norm::register(store, &format!("{name}.norm"), cout),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let y = self.up.forward(s, x)?;
        let y = self.norm.forward(s, y)?;
        Ok(s.tape.relu(y))
    }
}
