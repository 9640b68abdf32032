//! Attentive collaboration: confidence maps, the offer/need attention mask
//! and the masked feature update averaged over neighbors.
//!
//! For ego `i` and warped neighbor feature `f_ji`:
//!
//! ```text
//! M   = R_i * P_j,           R = 1 - P
//! A   = W1 [f_i, f_ji]       (2C -> 2C, per cell)
//! V   = W2 f_ji              (C -> C, per cell)
//! out = DConv(A) * V * M + f_i
//! ```
//!
//! `DConv` is a depthwise `l x l` convolution whose adjacent channel pairs
//! are summed, halving `2C` to `C`.

use rand::Rng;

use crate::error::{dim_err, Result};
use crate::tensor::layers::{Conv, Session};
use crate::tensor::{ParamId, ParamStore, Var};

#[derive(Clone, Debug)]
pub struct CollabParams {
    pub conf_hidden: Conv,
    pub conf_out: Conv,
    pub w1: Conv,
    pub w2: Conv,
    pub dconv: ParamId,
    pub l: usize,
}

impl CollabParams {
    pub fn register<R: Rng>(store: &mut ParamStore, name: &str, c: usize, l: usize, rng: &mut R) -> Self {
        let hidden = (c / 2).max(1);
        Self {
            conf_hidden: Conv::register(store, &format!("{name}.conf.0"), 1, c, hidden, 1, true, rng),
            conf_out: Conv::register(store, &format!("{name}.conf.1"), 1, hidden, 2, 1, true, rng),
            w1: Conv::register(store, &format!("{name}.w1"), 1, 2 * c, 2 * c, 1, false, rng),
            w2: Conv::register(store, &format!("{name}.w2"), 1, c, c, 1, false, rng),
            dconv: store.add_he(&format!("{name}.dconv"), &[l, l, 2 * c], l * l, rng),
            l,
        }
    }
}

/// Offer map `P` (`[H, W, 1]`, the first channel of a two-way softmax) and
/// need map `R = 1 - P`.
pub fn confidence(s: &mut Session, params: &CollabParams, f: Var) -> Result<(Var, Var)> {
    let h = params.conf_hidden.forward(s, f)?;
    let h = s.tape.relu(h);
    let logits = params.conf_out.forward(s, h)?;
    let p = s.tape.two_way_softmax(logits)?;
    let r = s.tape.affine(p, -1.0, 1.0);
    Ok((p, r))
}

pub fn attention_mask(s: &mut Session, r_i: Var, p_j: Var) -> Result<Var> {
    s.tape.mul(r_i, p_j)
}

pub fn fuse_pair(s: &mut Session, params: &CollabParams, fi: Var, fji: Var, m: Var) -> Result<Var> {
    let (si, sj) = (s.tape.shape(fi).to_vec(), s.tape.shape(fji).to_vec());
    if si != sj {
        return Err(dim_err!("ego feature {si:?} and neighbor feature {sj:?} differ"));
    }
    let cat = s.tape.concat_channels(fi, fji)?;
    let a = params.w1.forward(s, cat)?;
    let k = s.p(params.dconv);
    let d = s.tape.depthwise_pair(a, k)?;
    let v = params.w2.forward(s, fji)?;
    let dv = s.tape.mul(d, v)?;
    let gated = s.tape.mul_broadcast(dv, m)?;
    s.tape.add(gated, fi)
}

/// A neighbor's contribution: its id, its feature warped into the ego
/// frame, and the attention mask for the pair.
#[derive(Clone, Copy, Debug)]
pub struct Neighbor {
    pub agent_id: u16,
    pub feature: Var,
    pub mask: Var,
}

/// Mean of `fuse_pair` over neighbors, reduced in ascending agent-id order.
/// With no neighbors the ego feature is returned unchanged.
pub fn fuse_all(s: &mut Session, params: &CollabParams, fi: Var, neighbors: &[Neighbor]) -> Result<Var> {
    if neighbors.is_empty() {
        return Ok(fi);
    }
    let mut sorted = neighbors.to_vec();
    sorted.sort_by_key(|n| n.agent_id);
    let outs = sorted.iter().map(|n| fuse_pair(s, params, fi, n.feature, n.mask)).collect::<Result<Vec<_>>>()?;
    s.tape.mean(&outs)
}
