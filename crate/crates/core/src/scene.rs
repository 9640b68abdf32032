//! Synthetic worlds, planar ray-cast sensing, BEV rasterization and the
//! multi-agent supervisory BEV.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::geometry::{warp_points, Frame, GridSpec, Placement, Point, PointCloud, Pose2D};
use crate::tensor::Tensor;

pub const CLASS_STATIC: u8 = 0;
pub const CLASS_VEHICLE: u8 = 1;

/// Number of BEV channels: occupancy and vehicle-class occupancy.
pub const BEV_CHANNELS: usize = 2;

const GAP: f64 = 0.5;
const AGENT_MARGIN: f64 = 1.5;
const MIN_AGENT_SPACING: f64 = 4.0;
const EGO_SPAN: f64 = 3.0;
const MAX_TRIES: usize = 400;

/// Axis-aligned rectangle in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub center: [f64; 2],
    pub half: [f64; 2],
    pub class: u8,
}

impl Rect {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        (p[0] - self.center[0]).abs() <= self.half[0] && (p[1] - self.center[1]).abs() <= self.half[1]
    }

    /// True when the rectangles overlap or come closer than `gap`.
    pub fn intersects(&self, other: &Rect, gap: f64) -> bool {
        (0..2).all(|a| (self.center[a] - other.center[a]).abs() < self.half[a] + other.half[a] + gap)
    }

    pub fn distance_to(&self, p: [f64; 2]) -> f64 {
        let dx = ((p[0] - self.center[0]).abs() - self.half[0]).max(0.0);
        let dy = ((p[1] - self.center[1]).abs() - self.half[1]).max(0.0);
        dx.hypot(dy)
    }

    /// Entry distance of the ray `origin + t * dir`, `t > 0`, via the slab
    /// test.
    pub fn ray_entry(&self, origin: [f64; 2], dir: [f64; 2]) -> Option<f64> {
        let mut t_min = f64::NEG_INFINITY;
        let mut t_max = f64::INFINITY;
        for a in 0..2 {
            let lo = self.center[a] - self.half[a];
            let hi = self.center[a] + self.half[a];
            if dir[a] == 0.0 {
                if origin[a] < lo || origin[a] > hi {
                    return None;
                }
            } else {
                let (t0, t1) = ((lo - origin[a]) / dir[a], (hi - origin[a]) / dir[a]);
                t_min = t_min.max(t0.min(t1));
                t_max = t_max.min(t0.max(t1));
            }
        }
        (t_min <= t_max && t_min > 0.0).then_some(t_min)
    }

    pub fn corners(&self) -> [[f64; 2]; 4] {
        let [cx, cy] = self.center;
        let [hx, hy] = self.half;
        [[cx - hx, cy - hy], [cx + hx, cy - hy], [cx + hx, cy + hy], [cx - hx, cy + hy]]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct World {
    /// Width and height in meters; the world is centered on the origin.
    pub extent: [f64; 2],
    pub vehicles: Vec<Rect>,
    pub static_obstacles: Vec<Rect>,
    pub agent_poses: Vec<Pose2D>,
    pub seed: u64,
}

impl World {
    pub fn rects(&self) -> impl Iterator<Item = &Rect> {
        self.vehicles.iter().chain(&self.static_obstacles)
    }

    pub fn placement(&self, agent: usize) -> Placement {
        Placement { frame: Frame::Agent(agent as u16), pose: self.agent_poses[agent] }
    }
}

fn uniform_in(rng: &mut ChaCha8Rng, half: f64) -> f64 {
    rng.random_range(-half..half)
}

/// Generates a world as a pure function of the config and `seed`.
///
/// Agent 0 sits near the origin; the others lie between 4 m and
/// `comm_range` from it. Rectangles never overlap and keep a margin from
/// every agent.
pub fn generate_world(cfg: &ScenarioConfig, seed: u64) -> Result<World> {
    if cfg.n_agents == 0 || !(cfg.world_size > 0.0) {
        return Err(Error::Config("world needs at least one agent and a positive extent".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = cfg.world_size / 2.0;
    let mut agents: Vec<Pose2D> = Vec::with_capacity(cfg.n_agents);
    agents.push(Pose2D::new(
        uniform_in(&mut rng, EGO_SPAN.min(half)),
        uniform_in(&mut rng, EGO_SPAN.min(half)),
        rng.random_range(-PI..PI),
    ));
    let ego = agents[0];
    let min_d = MIN_AGENT_SPACING.min(cfg.comm_range);
    for i in 1..cfg.n_agents {
        let pose = (0..MAX_TRIES)
            .map(|_| {
                let d = rng.random_range(min_d..=cfg.comm_range);
                let a = rng.random_range(-PI..PI);
                Pose2D::new(ego.x + d * a.cos(), ego.y + d * a.sin(), rng.random_range(-PI..PI))
            })
            .find(|p| {
                p.x.abs() <= half - AGENT_MARGIN
                    && p.y.abs() <= half - AGENT_MARGIN
                    && agents.iter().all(|q| (p.x - q.x).hypot(p.y - q.y) >= min_d)
            })
            .ok_or_else(|| Error::Generation(format!("could not place agent {i} (seed {seed})")))?;
        agents.push(pose);
    }

    let mut placed: Vec<Rect> = Vec::new();
    let mut place = |rng: &mut ChaCha8Rng, half_size: [f64; 2], class: u8| -> Result<Rect> {
        for _ in 0..MAX_TRIES {
            let c = [uniform_in(rng, half - half_size[0]), uniform_in(rng, half - half_size[1])];
            let r = Rect { center: c, half: half_size, class };
            if placed.iter().all(|o| !r.intersects(o, GAP)) && agents.iter().all(|a| r.distance_to([a.x, a.y]) >= AGENT_MARGIN) {
                placed.push(r);
                return Ok(r);
            }
        }
        Err(Error::Generation(format!("could not place rectangle (seed {seed})")))
    };

    let n_static = rng.random_range(2..=6);
    let mut static_obstacles = Vec::with_capacity(n_static);
    for _ in 0..n_static {
        let hs = [rng.random_range(0.75..2.5), rng.random_range(0.75..2.5)];
        static_obstacles.push(place(&mut rng, hs, CLASS_STATIC)?);
    }
    let n_vehicles = rng.random_range(3..=12);
    let mut vehicles = Vec::with_capacity(n_vehicles);
    for _ in 0..n_vehicles {
        let long = rng.random_range(2.0..2.4);
        let short = rng.random_range(0.9..1.1);
        let hs = if rng.random_bool(0.5) { [long, short] } else { [short, long] };
        vehicles.push(place(&mut rng, hs, CLASS_VEHICLE)?);
    }

    Ok(World { extent: [cfg.world_size, cfg.world_size], vehicles, static_obstacles, agent_poses: agents, seed })
}

/// Casts `n_rays` evenly spaced rays (bearing `2 pi k / n_rays` in the
/// agent frame) and keeps the first hit of each within `max_range`.
pub fn raycast_sense(world: &World, agent: usize, n_rays: usize, max_range: f64) -> Result<PointCloud> {
    if n_rays < 8 {
        return Err(Error::Contract(format!("n_rays must be >= 8, got {n_rays}")));
    }
    let pose = world.agent_poses[agent];
    let origin = [pose.x, pose.y];
    let mut pc = PointCloud::new(Frame::Agent(agent as u16));
    for k in 0..n_rays {
        let bearing = 2.0 * PI * k as f64 / n_rays as f64;
        let (s, c) = (pose.theta + bearing).sin_cos();
        let hit = world
            .rects()
            .filter_map(|r| r.ray_entry(origin, [c, s]).map(|t| (t, r.class)))
            .min_by(|a, b| a.0.total_cmp(&b.0));
        if let Some((t, class)) = hit {
            if t <= max_range {
                let (bs, bc) = bearing.sin_cos();
                pc.points.push(Point { x: t * bc, y: t * bs, class });
            }
        }
    }
    Ok(pc)
}

/// `h x w x c` raster in an agent frame; row-major, channel-minor.
#[derive(Clone, Debug, PartialEq)]
pub struct BevGrid {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub meters_per_cell: f64,
    pub frame: Frame,
    pub data: Vec<f32>,
}

impl BevGrid {
    pub fn zeros(grid: &GridSpec, frame: Frame) -> Self {
        Self {
            h: grid.h,
            w: grid.w,
            c: BEV_CHANNELS,
            meters_per_cell: grid.meters_per_cell,
            frame,
            data: vec![0.0; grid.cells() * BEV_CHANNELS],
        }
    }

    pub fn at(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.w + col) * self.c + ch]
    }

    /// Row-major indices of cells with nonzero occupancy.
    pub fn occupied(&self) -> Vec<usize> {
        (0..self.h * self.w).filter(|&i| self.data[i * self.c] != 0.0).collect()
    }

    pub fn channel(&self, ch: usize) -> Vec<f64> {
        self.data.chunks_exact(self.c).map(|cell| cell[ch] as f64).collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.h, self.w, self.c], self.data.iter().map(|&v| v as f64).collect()).expect("consistent grid")
    }
}

/// Bins points into cells: occupancy is set for any cell holding a point,
/// the class channel for any cell holding a vehicle point. Off-grid points
/// are dropped.
pub fn rasterize(pc: &PointCloud, grid: &GridSpec) -> BevGrid {
    let mut bev = BevGrid::zeros(grid, pc.frame);
    for p in &pc.points {
        if let Some((r, c)) = grid.cell_of([p.x, p.y]) {
            let base = (r * grid.w + c) * BEV_CHANNELS;
            bev.data[base] = 1.0;
            if p.class == CLASS_VEHICLE {
                bev.data[base + 1] = 1.0;
            }
        }
    }
    bev
}

/// Every cloud warped into the ego frame and stacked, ego points first.
pub fn stack_in_ego_frame(world: &World, ego: usize, clouds: &[PointCloud]) -> Result<PointCloud> {
    let to = world.placement(ego);
    let mut stacked = clouds[ego].clone();
    for (j, pc) in clouds.iter().enumerate() {
        if j != ego {
            stacked.points.extend(warp_points(pc, &world.placement(j), &to)?.points);
        }
    }
    Ok(stacked)
}

/// Supervisory BEV from already sensed clouds (one per agent, in agent
/// order). Rasterization crops to the ego grid.
pub fn supervisory_from_clouds(world: &World, ego: usize, clouds: &[PointCloud], grid: &GridSpec) -> Result<BevGrid> {
    Ok(rasterize(&stack_in_ego_frame(world, ego, clouds)?, grid))
}

pub fn sense_all(world: &World, cfg: &ScenarioConfig) -> Result<Vec<PointCloud>> {
    (0..world.agent_poses.len()).map(|i| raycast_sense(world, i, cfg.n_rays, cfg.max_range)).collect()
}

pub fn build_supervisory_bev(world: &World, ego: usize, cfg: &ScenarioConfig) -> Result<BevGrid> {
    supervisory_from_clouds(world, ego, &sense_all(world, cfg)?, &grid_spec(cfg))
}

pub fn grid_spec(cfg: &ScenarioConfig) -> GridSpec {
    GridSpec::new(cfg.grid_h, cfg.grid_w, cfg.meters_per_cell)
}

/// Axis-aligned box in an agent frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Aabb {
    pub fn center(&self) -> [f64; 2] {
        [(self.min[0] + self.max[0]) / 2.0, (self.min[1] + self.max[1]) / 2.0]
    }

    pub fn size(&self) -> [f64; 2] {
        [self.max[0] - self.min[0], self.max[1] - self.min[1]]
    }

    pub fn from_center(c: [f64; 2], size: [f64; 2]) -> Self {
        Self { min: [c[0] - size[0] / 2.0, c[1] - size[1] / 2.0], max: [c[0] + size[0] / 2.0, c[1] + size[1] / 2.0] }
    }

    pub fn area(&self) -> f64 {
        self.size()[0].max(0.0) * self.size()[1].max(0.0)
    }

    pub fn iou(&self, o: &Aabb) -> f64 {
        let iw = (self.max[0].min(o.max[0]) - self.min[0].max(o.min[0])).max(0.0);
        let ih = (self.max[1].min(o.max[1]) - self.min[1].max(o.min[1])).max(0.0);
        let inter = iw * ih;
        let union = self.area() + o.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }
}

/// Labels in one agent's frame, computed from world geometry alone.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    /// Row-major per-cell class: 1 where the cell center lies in a vehicle.
    pub labels: Vec<u8>,
    /// Agent-frame bounding boxes of vehicles whose center is on the grid.
    pub boxes: Vec<Aabb>,
}

pub fn ground_truth(world: &World, agent: usize, grid: &GridSpec) -> GroundTruth {
    let pose = world.agent_poses[agent];
    let mut labels = vec![0u8; grid.cells()];
    for r in 0..grid.h {
        for c in 0..grid.w {
            let p = pose.apply(grid.cell_center(r, c));
            if world.vehicles.iter().any(|v| v.contains(p)) {
                labels[r * grid.w + c] = 1;
            }
        }
    }
    let boxes = world
        .vehicles
        .iter()
        .filter_map(|v| {
            let local = v.corners().map(|p| pose.apply_inverse(p));
            let min = [local.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min), local.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min)];
            let max = [
                local.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max),
                local.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max),
            ];
            let b = Aabb { min, max };
            grid.cell_of(b.center()).map(|_| b)
        })
        .collect();
    GroundTruth { labels, boxes }
}

/// Everything the pipeline consumes for one world, per agent.
#[derive(Clone, Debug)]
pub struct Scene {
    pub world: World,
    pub raw: Vec<BevGrid>,
    pub supervisory: Vec<BevGrid>,
    pub truth: Vec<GroundTruth>,
}

impl Scene {
    pub fn build(cfg: &ScenarioConfig, seed: u64) -> Result<Scene> {
        let world = generate_world(cfg, seed)?;
        Self::from_world(cfg, world)
    }

    pub fn from_world(cfg: &ScenarioConfig, world: World) -> Result<Scene> {
        let grid = grid_spec(cfg);
        let clouds = sense_all(&world, cfg)?;
        let n = world.agent_poses.len();
        let raw = clouds.iter().map(|pc| rasterize(pc, &grid)).collect();
        let supervisory = (0..n).map(|i| supervisory_from_clouds(&world, i, &clouds, &grid)).collect::<Result<_>>()?;
        let truth = (0..n).map(|i| ground_truth(&world, i, &grid)).collect();
        Ok(Scene { world, raw, supervisory, truth })
    }

    pub fn n_agents(&self) -> usize {
        self.world.agent_poses.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn empty_world(poses: Vec<Pose2D>) -> World {
        World { extent: [40.0, 40.0], vehicles: vec![], static_obstacles: vec![], agent_poses: poses, seed: 0 }
    }

    fn unit_box(x: f64, y: f64) -> Rect {
        Rect { center: [x, y], half: [0.5, 0.5], class: CLASS_STATIC }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = ScenarioConfig::default();
        assert_eq!(generate_world(&cfg, 7).unwrap(), generate_world(&cfg, 7).unwrap());
        assert_ne!(generate_world(&cfg, 7).unwrap(), generate_world(&cfg, 8).unwrap());
    }

    #[test]
    fn worlds_satisfy_placement_rules() {
        let cfg = ScenarioConfig::default();
        for seed in 0..200 {
            let w = generate_world(&cfg, seed).unwrap();
            assert!((3..=12).contains(&w.vehicles.len()));
            assert_eq!(w.agent_poses.len(), cfg.n_agents);
            let rects: Vec<&Rect> = w.rects().collect();
            for (i, a) in rects.iter().enumerate() {
                assert!(a.center[0].abs() + a.half[0] <= 18.0 && a.center[1].abs() + a.half[1] <= 18.0);
                for b in &rects[i + 1..] {
                    assert!(!a.intersects(b, 0.0));
                }
                for p in &w.agent_poses {
                    assert!(!a.contains([p.x, p.y]));
                }
            }
            let ego = w.agent_poses[0];
            for p in &w.agent_poses[1..] {
                assert!((p.x - ego.x).hypot(p.y - ego.y) <= cfg.comm_range + 1e-9);
            }
        }
    }

    #[test]
    fn single_agent_world() {
        let cfg = ScenarioConfig { n_agents: 1, ..Default::default() };
        let s = Scene::build(&cfg, 3).unwrap();
        assert_eq!(s.n_agents(), 1);
        assert_eq!(s.raw[0], s.supervisory[0]);
    }

    #[test]
    fn empty_world_senses_nothing() {
        let w = empty_world(vec![Pose2D::IDENTITY]);
        assert!(raycast_sense(&w, 0, 64, 10.0).unwrap().is_empty());
        assert!(raycast_sense(&w, 0, 4, 10.0).is_err());
    }

    #[test]
    fn front_face_hit_distance() {
        let mut w = empty_world(vec![Pose2D::IDENTITY]);
        w.static_obstacles.push(unit_box(5.0, 0.0));
        let pc = raycast_sense(&w, 0, 8, 10.0).unwrap();
        assert_eq!(pc.len(), 1);
        assert!((pc.points[0].x - 4.5).abs() < 1e-12 && pc.points[0].y.abs() < 1e-12);

        // Same geometry seen from a rotated and translated agent.
        let mut w = empty_world(vec![Pose2D::new(1.0, 2.0, PI / 2.0)]);
        w.static_obstacles.push(unit_box(1.0, 7.0));
        let pc = raycast_sense(&w, 0, 8, 10.0).unwrap();
        assert!((pc.points[0].x - 4.5).abs() < 1e-12 && pc.points[0].y.abs() < 1e-9);
        assert!(raycast_sense(&w, 0, 8, 4.4).unwrap().is_empty());
    }

    #[test]
    fn occluded_box_returns_no_points() {
        let mut w = empty_world(vec![Pose2D::IDENTITY]);
        let front = Rect { center: [5.0, 0.0], half: [0.5, 2.0], class: CLASS_STATIC };
        let back = Rect { center: [8.0, 0.0], half: [0.5, 0.5], class: CLASS_VEHICLE };
        w.static_obstacles.push(front);
        w.vehicles.push(back);
        let pc = raycast_sense(&w, 0, 720, 20.0).unwrap();
        // Every ray that reaches the back box passes through the front one.
        for k in 0..720 {
            let b = 2.0 * PI * k as f64 / 720.0;
            let d = [b.cos(), b.sin()];
            if let Some(tb) = back.ray_entry([0.0, 0.0], d) {
                assert!(front.ray_entry([0.0, 0.0], d).unwrap() < tb);
            }
        }
        assert!(!pc.points.is_empty());
        assert!(pc.points.iter().all(|p| p.class == CLASS_STATIC && p.x < 5.0));
    }

    #[test]
    fn rasterize_bins_points() {
        let grid = GridSpec::new(8, 8, 0.5);
        assert!(rasterize(&PointCloud::new(Frame::Agent(0)), &grid).occupied().is_empty());
        let mut pc = PointCloud::new(Frame::Agent(0));
        let [x, y] = grid.cell_center(2, 5);
        pc.points.push(Point { x, y, class: CLASS_VEHICLE });
        pc.points.push(Point { x: 100.0, y: 0.0, class: CLASS_VEHICLE });
        let bev = rasterize(&pc, &grid);
        assert_eq!(bev.occupied(), vec![2 * 8 + 5]);
        assert_eq!(bev.at(2, 5, 1), 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut pc = PointCloud::new(Frame::Agent(0));
        for _ in 0..50 {
            pc.points.push(Point { x: rng.random_range(-3.0..3.0), y: rng.random_range(-3.0..3.0), class: rng.random_range(0..2) });
        }
        let bev = rasterize(&pc, &grid);
        let mut want = HashSet::new();
        for p in &pc.points {
            let c = ((p.x + 2.0) / 0.5).floor();
            let r = ((p.y + 2.0) / 0.5).floor();
            if (0.0..8.0).contains(&c) && (0.0..8.0).contains(&r) {
                want.insert(r as usize * 8 + c as usize);
            }
        }
        assert_eq!(bev.occupied().into_iter().collect::<HashSet<_>>(), want);
    }

    #[test]
    fn supervisory_is_union_of_warped_rasters() {
        let cfg = ScenarioConfig { n_agents: 2, ..Default::default() };
        let grid = grid_spec(&cfg);
        for seed in 0..20 {
            let w = generate_world(&cfg, seed).unwrap();
            let clouds = sense_all(&w, &cfg).unwrap();
            let sup = supervisory_from_clouds(&w, 0, &clouds, &grid).unwrap();
            let own = rasterize(&clouds[0], &grid);
            let other = rasterize(&warp_points(&clouds[1], &w.placement(1), &w.placement(0)).unwrap(), &grid);
            let union: HashSet<usize> = own.occupied().into_iter().chain(other.occupied()).collect();
            assert_eq!(sup.occupied().into_iter().collect::<HashSet<_>>(), union);
        }
    }

    #[test]
    fn raw_occupancy_is_subset_of_supervisory() {
        let cfg = ScenarioConfig::default();
        for seed in 0..50 {
            let s = Scene::build(&cfg, seed).unwrap();
            for i in 0..s.n_agents() {
                let sup: HashSet<usize> = s.supervisory[i].occupied().into_iter().collect();
                assert!(s.raw[i].occupied().iter().all(|c| sup.contains(c)));
            }
        }
    }

    #[test]
    fn vehicle_hits_land_near_labelled_cells() {
        let cfg = ScenarioConfig::default();
        let grid = grid_spec(&cfg);
        for seed in 0..20 {
            let s = Scene::build(&cfg, seed).unwrap();
            for i in 0..s.n_agents() {
                let labels = &s.truth[i].labels;
                for idx in 0..grid.cells() {
                    if s.raw[i].data[idx * 2 + 1] == 0.0 {
                        continue;
                    }
                    let (r, c) = ((idx / grid.w) as i64, (idx % grid.w) as i64);
                    let near = (-1..=1).any(|dr| {
                        (-1..=1).any(|dc| {
                            let (rr, cc) = (r + dr, c + dc);
                            rr >= 0 && cc >= 0 && rr < grid.h as i64 && cc < grid.w as i64 && labels[(rr * grid.w as i64 + cc) as usize] == 1
                        })
                    });
                    assert!(near, "seed {seed} agent {i} cell {idx}");
                }
            }
        }
    }

    #[test]
    fn iou_of_boxes() {
        let a = Aabb::from_center([0.0, 0.0], [2.0, 2.0]);
        assert_eq!(a.iou(&a), 1.0);
        let b = Aabb::from_center([1.0, 0.0], [2.0, 2.0]);
        assert!((a.iou(&b) - 2.0 / 6.0).abs() < 1e-12);
        assert_eq!(a.iou(&Aabb::from_center([5.0, 5.0], [1.0, 1.0])), 0.0);
    }

    #[test]
    fn ground_truth_boxes_follow_agent_frame() {
        let mut w = empty_world(vec![Pose2D::new(0.0, 0.0, PI / 2.0)]);
        w.vehicles.push(Rect { center: [0.0, 4.0], half: [2.0, 1.0], class: CLASS_VEHICLE });
        let gt = ground_truth(&w, 0, &GridSpec::new(64, 64, 0.4));
        assert_eq!(gt.boxes.len(), 1);
        let b = gt.boxes[0];
        assert!((b.center()[0] - 4.0).abs() < 1e-9 && b.center()[1].abs() < 1e-9);
        assert!((b.size()[0] - 2.0).abs() < 1e-9 && (b.size()[1] - 4.0).abs() < 1e-9);
        assert!(gt.labels.iter().filter(|&&l| l == 1).count() > 0);
    }
}
