//! Planar rigid poses, point-cloud transforms and the bilinear feature-map
//! warp used to align a sender's map with a receiver's grid.
//!
//! Grid convention, used everywhere: cell `(row, col)` of an `h x w` grid
//! with `m` meters per cell has its center at
//! `((col + 0.5) * m - w * m / 2, (row + 0.5) * m - h * m / 2)` in the
//! owning agent's frame (x to the right along columns, y down along rows).

use std::f64::consts::PI;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::tape::Taps;
use crate::tensor::{Tape, Tensor, Var};

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t - 2.0 * PI
    } else {
        t
    }
}

/// Agent pose in the world frame: position in meters, heading in radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub const IDENTITY: Pose2D = Pose2D { x: 0.0, y: 0.0, theta: 0.0 };

    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta: normalize_angle(theta) }
    }

    /// Local coordinates to world coordinates.
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [c * p[0] - s * p[1] + self.x, s * p[0] + c * p[1] + self.y]
    }

    /// World coordinates to local coordinates.
    pub fn apply_inverse(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (p[0] - self.x, p[1] - self.y);
        [c * dx + s * dy, -s * dx + c * dy]
    }

    /// `self ∘ other`: first `other`, then `self`.
    pub fn compose(&self, other: &Pose2D) -> Pose2D {
        let [x, y] = self.apply([other.x, other.y]);
        Pose2D::new(x, y, self.theta + other.theta)
    }

    pub fn inverse(&self) -> Pose2D {
        let [x, y] = self.apply_inverse([0.0, 0.0]);
        Pose2D::new(x, y, -self.theta)
    }

    /// The pose of `receiver` expressed in `sender`'s frame, i.e. the map
    /// taking receiver-local coordinates to sender-local coordinates.
    /// Exactly the identity when the two poses are equal.
    pub fn relative(sender: &Pose2D, receiver: &Pose2D) -> Pose2D {
        let (s, c) = sender.theta.sin_cos();
        let (dx, dy) = (receiver.x - sender.x, receiver.y - sender.y);
        Pose2D::new(c * dx + s * dy, -s * dx + c * dy, receiver.theta - sender.theta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Frame {
    World,
    Agent(u16),
}

/// A frame together with its world pose.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Placement {
    pub frame: Frame,
    pub pose: Pose2D,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    /// Class of the surface that produced the point.
    pub class: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub frame: Frame,
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn new(frame: Frame) -> Self {
        Self { frame, points: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Rigidly re-expresses a cloud from `from`'s frame in `to`'s frame.
pub fn warp_points(pc: &PointCloud, from: &Placement, to: &Placement) -> Result<PointCloud> {
    if pc.frame != from.frame {
        return Err(Error::Contract(format!("cloud is in {:?}, source placement is {:?}", pc.frame, from.frame)));
    }
    let points = pc
        .points
        .iter()
        .map(|p| {
            let [x, y] = to.pose.apply_inverse(from.pose.apply([p.x, p.y]));
            Point { x, y, class: p.class }
        })
        .collect();
    Ok(PointCloud { frame: to.frame, points })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub h: usize,
    pub w: usize,
    pub meters_per_cell: f64,
}

impl GridSpec {
    pub fn new(h: usize, w: usize, meters_per_cell: f64) -> Self {
        Self { h, w, meters_per_cell }
    }

    pub fn cells(&self) -> usize {
        self.h * self.w
    }

    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        let m = self.meters_per_cell;
        [
            (col as f64 + 0.5) * m - self.w as f64 * m / 2.0,
            (row as f64 + 0.5) * m - self.h as f64 * m / 2.0,
        ]
    }

    /// The cell containing a local point, if it lies on the grid.
    pub fn cell_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let m = self.meters_per_cell;
        let col = (p[0] / m + self.w as f64 / 2.0).floor();
        let row = (p[1] / m + self.h as f64 / 2.0).floor();
        if col >= 0.0 && row >= 0.0 && (col as usize) < self.w && (row as usize) < self.h {
            Some((row as usize, col as usize))
        } else {
            None
        }
    }

    pub fn half_extent(&self) -> [f64; 2] {
        let m = self.meters_per_cell;
        [self.w as f64 * m / 2.0, self.h as f64 * m / 2.0]
    }
}

/// Bilinear taps realizing the sender-to-receiver warp on a grid shared by
/// both agents. Samples falling off the sender grid contribute zero.
pub fn warp_taps(grid: &GridSpec, sender: &Pose2D, receiver: &Pose2D) -> Taps {
    let rel = Pose2D::relative(sender, receiver);
    let (s, c) = rel.theta.sin_cos();
    let (tx, ty) = (rel.x / grid.meters_per_cell, rel.y / grid.meters_per_cell);
    let (hw, hh) = (grid.w as f64 / 2.0, grid.h as f64 / 2.0);
    let mut taps = Vec::with_capacity(grid.cells());
    for row in 0..grid.h {
        for col in 0..grid.w {
            // Cell-unit offsets from the grid center.
            let px = col as f64 + 0.5 - hw;
            let py = row as f64 + 0.5 - hh;
            let qx = c * px - s * py + tx;
            let qy = s * px + c * py + ty;
            let u = qx + hw - 0.5;
            let v = qy + hh - 0.5;
            taps.push(bilinear_taps(grid, u, v));
        }
    }
    taps
}

fn bilinear_taps(grid: &GridSpec, u: f64, v: f64) -> [(u32, f64); 4] {
    let (u0, v0) = (u.floor(), v.floor());
    let (fu, fv) = (u - u0, v - v0);
    let mut out = [(0u32, 0.0); 4];
    let corners = [(0.0, 0.0, (1.0 - fu) * (1.0 - fv)), (1.0, 0.0, fu * (1.0 - fv)), (0.0, 1.0, (1.0 - fu) * fv), (1.0, 1.0, fu * fv)];
    for (slot, (du, dv, wgt)) in out.iter_mut().zip(corners) {
        let (cu, cv) = (u0 + du, v0 + dv);
        if wgt != 0.0 && cu >= 0.0 && cv >= 0.0 && (cu as usize) < grid.w && (cv as usize) < grid.h {
            *slot = ((cv as usize * grid.w + cu as usize) as u32, wgt);
        }
    }
    out
}

/// Differentiable warp of a sender feature map `[H, W, C]` into the
/// receiver's grid.
pub fn warp_feature_map(tape: &mut Tape, f: Var, sender: &Pose2D, receiver: &Pose2D, meters_per_cell: f64) -> Result<Var> {
    if meters_per_cell <= 0.0 {
        return Err(Error::Contract("meters_per_cell must be positive".into()));
    }
    let (h, w, _) = tape.value(f).dims3()?;
    let grid = GridSpec::new(h, w, meters_per_cell);
    tape.resample(f, Rc::new(warp_taps(&grid, sender, receiver)), (h, w))
}

/// Non-differentiable warp of a plain `[H, W, C]` tensor.
pub fn warp_tensor(f: &Tensor, sender: &Pose2D, receiver: &Pose2D, meters_per_cell: f64) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = tape.constant(f.clone());
    let out = warp_feature_map(&mut tape, v, sender, receiver, meters_per_cell)?;
    Ok(tape.value(out).clone())
}
