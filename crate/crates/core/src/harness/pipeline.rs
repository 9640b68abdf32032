//! One forward pass for one ego agent, shared by every regime.

use std::rc::Rc;

use crate::codec::{encode_message, selection_mask, spatial_select, CompressionConfig, SparseFeatureMessage};
use crate::collab::{attention_mask, confidence, fuse_all, Neighbor};
use crate::config::ScenarioConfig;
use crate::error::Result;
use crate::geometry::warp_feature_map;
use crate::nets::{Arch, Layers};
use crate::scene::Scene;
use crate::tensor::layers::Session;
use crate::tensor::Var;

use super::seeds::derive_seed;

/// Which raster the ego encodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputKind {
    Raw,
    Supervisory,
}

/// How neighbor features reach the ego.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exchange {
    /// Differentiable: unselected cells are zeroed on the tape.
    Masked { seed: u64 },
    /// Through the serialized wire format, f32 values.
    Wire { seed: u64 },
}

impl Exchange {
    fn seed(self) -> u64 {
        match self {
            Exchange::Masked { seed } | Exchange::Wire { seed } => seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Heads {
    pub seg: bool,
    pub det: bool,
    pub rec: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct Attention {
    pub sender: u16,
    /// Sender offer map warped into the ego frame.
    pub offer: Var,
    pub mask: Var,
}

#[derive(Debug)]
pub struct EgoOutputs {
    pub fused: Var,
    pub need: Option<Var>,
    pub attention: Vec<Attention>,
    pub seg: Option<Var>,
    pub det: Option<(Var, Var)>,
    pub rec: Option<Var>,
    /// Serialized messages received, in sender order (wire exchange only).
    pub messages: Vec<SparseFeatureMessage>,
}

pub struct Pipeline<'a> {
    pub layers: &'a Layers,
    pub arch: &'a Arch,
    pub cfg: &'a ScenarioConfig,
}

impl<'a> Pipeline<'a> {
    pub fn compression(&self, seed: u64) -> CompressionConfig {
        CompressionConfig {
            k_percent: self.cfg.k_percent,
            r_percent: self.cfg.r_percent,
            c_compressed: self.cfg.c_compressed,
            rng_seed: seed,
        }
    }

    /// Encoder plus channel compression of one agent's raster.
    fn encode_compressed(&self, s: &mut Session, scene: &Scene, agent: usize, input: InputKind) -> Result<Var> {
        let bev = match input {
            InputKind::Raw => &scene.raw[agent],
            InputKind::Supervisory => &scene.supervisory[agent],
        };
        let x = s.constant(bev.to_tensor());
        let f = self.layers.encoder.forward(s, x)?;
        self.layers.compressor.forward(s, f)
    }

    /// The ego keeps every cell; neighbors, when `collaborate` is set, are
    /// spatially selected, decompressed, warped and fused.
    pub fn forward(
        &self,
        s: &mut Session,
        scene: &Scene,
        ego: usize,
        input: InputKind,
        collaborate: bool,
        exchange: Exchange,
        heads: Heads,
    ) -> Result<EgoOutputs> {
        let ci = self.encode_compressed(s, scene, ego, input)?;
        let fi = self.layers.decompressor.forward(s, ci)?;
        let mut out = EgoOutputs { fused: fi, need: None, attention: Vec::new(), seg: None, det: None, rec: None, messages: Vec::new() };

        let fgrid = self.arch.feature_grid();
        let ego_pose = scene.world.agent_poses[ego];
        let mut neighbors = Vec::new();
        if collaborate && scene.n_agents() > 1 {
            let (_, r_i) = confidence(s, &self.layers.collab, fi)?;
            out.need = Some(r_i);
            for j in (0..scene.n_agents()).filter(|&j| j != ego) {
                let cj = self.encode_compressed(s, scene, j, InputKind::Raw)?;
                let comp = self.compression(derive_seed(exchange.seed(), ego as u64, j as u64));
                let selected = spatial_select(s.value(cj), &comp)?;
                let pose_j = scene.world.agent_poses[j];
                let fj = match exchange {
                    Exchange::Masked { .. } => {
                        let mask = Rc::new(selection_mask(fgrid.h, fgrid.w, &selected));
                        let kept = s.tape.cell_mask(cj, mask)?;
                        self.layers.decompressor.forward(s, kept)?
                    }
                    Exchange::Wire { .. } => {
                        let msg = encode_message(s.value(cj), &selected, &pose_j, j as u16)?;
                        let received = SparseFeatureMessage::from_bytes(&msg.to_bytes()?)?;
                        let fj = self.layers.decompressor.reassemble(s, &received)?;
                        out.messages.push(received);
                        fj
                    }
                };
                let (p_j, _) = confidence(s, &self.layers.collab, fj)?;
                let fji = warp_feature_map(&mut s.tape, fj, &pose_j, &ego_pose, fgrid.meters_per_cell)?;
                let pji = warp_feature_map(&mut s.tape, p_j, &pose_j, &ego_pose, fgrid.meters_per_cell)?;
                let m = attention_mask(s, r_i, pji)?;
                out.attention.push(Attention { sender: j as u16, offer: pji, mask: m });
                neighbors.push(Neighbor { agent_id: j as u16, feature: fji, mask: m });
            }
        }
        out.fused = fuse_all(s, &self.layers.collab, fi, &neighbors)?;

        if heads.seg {
            out.seg = Some(self.layers.seg.forward(s, out.fused)?);
        }
        if heads.det {
            out.det = Some(self.layers.det.forward(s, out.fused)?);
        }
        if heads.rec {
            out.rec = Some(self.layers.rec.forward(s, out.fused)?);
        }
        Ok(out)
    }
}
