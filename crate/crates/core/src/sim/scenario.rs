//! Fixed-step scenario loop binding sensing, exploration, protocol and SLAM.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::agent::{final_cascade, DroneSim, DroneStats, SimContext, SlamParams};
use super::sensing::{uwb_range, NoiseModel};
use super::world::World;
use crate::exploration::ExploreParams;
use crate::geometry::Pose2;
use crate::icp::IcpConfig;
use crate::mapping_eval::{
    assemble_map, assemble_map_3d, ate, density_filter, mapping_error, segment_mapping_error, CoverageGrid,
    GlobalMap, LoopCounts, MapMetrics,
};
use crate::pose_graph::{OptimizeReport, PgoConfig, PoseGraph};
use crate::protocol::{Engine, EngineStats, ProtocolConfig, RangingRecord, SwarmHost, TraceEntry};
use crate::scan::{DepthFrame, MatrixFrame, SensorRig};
use crate::DroneId;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum MappingMode {
    #[default]
    #[serde(rename = "2d")]
    TwoD,
    #[serde(rename = "3d")]
    ThreeD,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalParams {
    pub density_radius: f64,
    pub density_min_neighbors: usize,
    pub coverage_cell: f64,
    /// Coverage time is the first time this fraction of accessible cells is sensed.
    pub coverage_target: f64,
    /// Rays mark cells only up to this distance, metres.
    pub coverage_range: f64,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            density_radius: 0.1,
            density_min_neighbors: 5,
            coverage_cell: 0.25,
            coverage_target: 0.95,
            coverage_range: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Fixture name or path of a segment file.
    pub world: String,
    pub n_drones: usize,
    pub seed: u64,
    /// Simulated seconds.
    pub duration: f64,
    pub dt: f64,
    pub mode: MappingMode,
    /// Flight altitude used by the full-resolution mode, metres.
    pub altitude: f64,
    /// Take-off poses `[x, y, psi]`; chosen automatically when empty.
    pub starts: Vec<[f64; 3]>,
    /// End the run once the coverage target is reached.
    pub stop_at_coverage: bool,
    pub abort_on_collision: bool,
    pub slam: SlamParams,
    pub pgo: PgoConfig,
    pub icp: IcpConfig,
    pub protocol: ProtocolConfig,
    pub explore: ExploreParams,
    pub noise: NoiseModel,
    pub rig: SensorRig,
    pub eval: EvalParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            world: "maze2".into(),
            n_drones: 3,
            seed: 0,
            duration: 120.0,
            dt: 0.05,
            mode: MappingMode::TwoD,
            altitude: 0.4,
            starts: Vec::new(),
            stop_at_coverage: false,
            abort_on_collision: false,
            slam: SlamParams::default(),
            pgo: PgoConfig::default(),
            icp: IcpConfig::default(),
            protocol: ProtocolConfig::default(),
            explore: ExploreParams::default(),
            noise: NoiseModel::default(),
            rig: SensorRig::default(),
            eval: EvalParams::default(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("invalid config: {0}")]
    Config(String),
}

fn prefixed(block: &str, r: Result<(), String>) -> Result<(), String> {
    r.map_err(|e| {
        if e.starts_with(&format!("{block}.")) {
            e
        } else {
            format!("{block}.{e}")
        }
    })
}

impl ScenarioConfig {
    /// Noise-free variant of this configuration.
    pub fn noise_free(mut self) -> Self {
        self.noise = NoiseModel::zero();
        self
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let check = || -> Result<(), String> {
            if self.world.trim().is_empty() {
                return Err("world: must name a fixture or file".into());
            }
            if self.n_drones == 0 || self.n_drones > 64 {
                return Err("n_drones: must be in 1..=64".into());
            }
            if !(self.duration.is_finite() && self.duration > 0.0) {
                return Err("duration: must be positive".into());
            }
            if !(self.dt.is_finite() && self.dt > 0.0 && self.dt <= 1.0) {
                return Err("dt: must be in (0, 1]".into());
            }
            if !(self.altitude.is_finite() && self.altitude > 0.0) {
                return Err("altitude: must be positive".into());
            }
            if !self.starts.is_empty() && self.starts.len() != self.n_drones {
                return Err(format!("starts: expected {} poses, got {}", self.n_drones, self.starts.len()));
            }
            if self.starts.iter().flatten().any(|v| !v.is_finite()) {
                return Err("starts: coordinates must be finite".into());
            }
            prefixed("slam", self.slam.validate())?;
            prefixed("pgo", self.pgo.validate())?;
            prefixed("icp", self.icp.validate())?;
            let mut proto = self.protocol.clone();
            proto.n_drones = self.n_drones;
            prefixed("protocol", proto.validate())?;
            prefixed("explore", self.explore.validate())?;
            prefixed("noise", self.noise.validate())?;
            let e = &self.eval;
            if !(e.density_radius > 0.0 && e.coverage_cell > 0.0 && e.coverage_range > 0.0) {
                return Err("eval.density_radius, eval.coverage_cell and eval.coverage_range must be positive".into());
            }
            if !(e.coverage_target > 0.0 && e.coverage_target <= 1.0) {
                return Err("eval.coverage_target: must be in (0, 1]".into());
            }
            Ok(())
        };
        check().map_err(ScenarioError::Config)
    }
}

/// Default take-off poses: fixed spots for the maze fixture, otherwise a
/// deterministic sweep over free lattice points.
pub fn default_starts(world: &World, n: usize) -> Vec<Pose2> {
    use std::f64::consts::FRAC_PI_2;
    let mut out: Vec<Pose2> = Vec::new();
    if world.name == "maze2" {
        out.extend([
            Pose2::new(0.8, 0.8, FRAC_PI_2),
            Pose2::new(4.2, 4.2, -FRAC_PI_2),
            Pose2::new(2.5, 2.5, 0.0),
            Pose2::new(4.2, 0.8, FRAC_PI_2),
        ]);
    }
    let (x0, y0, x1, y1) = world.bounds;
    let step = 0.5;
    let mut k = 0usize;
    while out.len() < n {
        let cols = (((x1 - x0) / step).floor() as usize).max(1);
        let rows = (((y1 - y0) / step).floor() as usize).max(1);
        if k >= cols * rows {
            break;
        }
        let p = (x0 + step * (k % cols) as f64 + step / 2.0, y0 + step * (k / cols) as f64 + step / 2.0);
        k += 1;
        let clear = world.clearance(p) >= 0.4;
        let spaced = out.iter().all(|q| q.distance_to(&Pose2::new(p.0, p.1, 0.0)) >= 0.8);
        if clear && spaced && world.contains(p) {
            out.push(Pose2::new(p.0, p.1, 0.0));
        }
    }
    out.truncate(n);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub time: f64,
    pub drone: DroneId,
    pub what: String,
}

/// One row per graph node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub time: f64,
    pub drone: DroneId,
    pub pose_id: u32,
    pub truth: Pose2,
    pub estimate: Pose2,
    pub dead_reckoning: Pose2,
}

#[derive(Clone, Debug)]
pub struct ScenarioResult {
    pub config: ScenarioConfig,
    pub world: World,
    pub metrics: MapMetrics,
    /// Graphs after the final cascade.
    pub graphs: Vec<PoseGraph>,
    /// Graphs as they stood before the final cascade.
    pub graphs_before_final: Vec<PoseGraph>,
    pub frames: Vec<Vec<DepthFrame>>,
    pub matrix_frames: Vec<Vec<MatrixFrame>>,
    pub trajectories: Vec<TrajectorySample>,
    pub map: GlobalMap,
    pub filtered_map: GlobalMap,
    pub trace: Vec<TraceEntry>,
    pub protocol_stats: EngineStats,
    /// Every optimize call: `(time, drone, report)`, the final cascade last.
    pub optimize_reports: Vec<(f64, DroneId, OptimizeReport)>,
    pub drone_stats: Vec<DroneStats>,
    pub events: Vec<SimEvent>,
    pub coverage_history: Vec<(f64, f64)>,
    pub coverage: CoverageGrid,
    pub end_time: f64,
}

struct Swarm<'a> {
    ctx: SimContext<'a>,
    drones: Vec<DroneSim>,
    protocol: &'a ProtocolConfig,
    uwb_noise: NoiseModel,
    uwb_rng: ChaCha8Rng,
}

impl SwarmHost for Swarm<'_> {
    fn measure_range(&mut self, a: DroneId, b: DroneId, _now: f64) -> Option<f64> {
        let pa = self.drones[a as usize].true_pose.position();
        let pb = self.drones[b as usize].true_pose.position();
        uwb_range(self.ctx.world, pa, pb, &self.uwb_noise, &mut self.uwb_rng)
    }

    fn position_estimate(&self, id: DroneId) -> Pose2 {
        self.drones[id as usize].estimate()
    }

    fn on_ranging(&mut self, id: DroneId, record: RangingRecord) {
        self.drones[id as usize].on_ranging(record);
    }

    fn process_inbox(&mut self, id: DroneId, _now: f64) {
        let ctx = &self.ctx;
        self.drones[id as usize].process_inbox(ctx);
    }

    fn take_scan(&mut self, id: DroneId, _now: f64) -> Option<Vec<u8>> {
        self.drones[id as usize].take_scan()
    }

    fn deliver_scan(&mut self, to: DroneId, from: DroneId, payload: &[u8], _now: f64) {
        let cap = self.protocol.inbox_cap;
        self.drones[to as usize].deliver_scan(from, payload, self.ctx.rig, cap);
    }

    /// Only drone 0 starts cascades; the others follow its notifications.
    fn pgo_due(&mut self, id: DroneId, now: f64) -> bool {
        let t = &self.protocol.pgo_trigger;
        id == 0 && self.drones[0].pgo_due(now, t.loop_closures, t.period)
    }

    fn run_pgo(&mut self, id: DroneId, now: f64) -> Option<Vec<u8>> {
        let pgo = self.ctx.pgo;
        self.drones[id as usize].run_pgo(now, pgo)
    }

    fn deliver_pose_update(&mut self, to: DroneId, from: DroneId, payload: &[u8], _now: f64) {
        self.drones[to as usize].deliver_pose_update(from, payload);
    }
}

fn key(id: DroneId) -> String {
    id.to_string()
}

/// Runs a scenario to completion. Identical `(config, world)` give identical results.
pub fn run_scenario(cfg: &ScenarioConfig, world: &World) -> Result<ScenarioResult, ScenarioError> {
    cfg.validate()?;
    let starts: Vec<Pose2> = if cfg.starts.is_empty() {
        default_starts(world, cfg.n_drones)
    } else {
        cfg.starts.iter().map(|s| Pose2::new(s[0], s[1], s[2])).collect()
    };
    if starts.len() != cfg.n_drones {
        return Err(ScenarioError::Config(format!(
            "starts: could only place {} of {} drones",
            starts.len(),
            cfg.n_drones
        )));
    }
    for (i, s) in starts.iter().enumerate() {
        if !world.contains(s.position()) || world.clearance(s.position()) < cfg.slam.drone_radius {
            return Err(ScenarioError::Config(format!("starts[{i}]: pose is not in free space")));
        }
    }

    let mut protocol = cfg.protocol.clone();
    protocol.n_drones = cfg.n_drones;
    let altitude = (cfg.mode == MappingMode::ThreeD).then_some(cfg.altitude);
    let mut swarm = Swarm {
        ctx: SimContext {
            world,
            rig: &cfg.rig,
            noise: &cfg.noise,
            explore: &cfg.explore,
            slam: &cfg.slam,
            icp: &cfg.icp,
            pgo: &cfg.pgo,
            dt: cfg.dt,
            altitude,
        },
        drones: starts
            .iter()
            .enumerate()
            .map(|(i, s)| DroneSim::new(i as DroneId, *s, cfg.seed, cfg.pgo.max_total_nodes))
            .collect(),
        protocol: &protocol,
        // Message loss is applied by the protocol engine, not a second time here.
        uwb_noise: NoiseModel {
            msg_loss: 0.0,
            ..cfg.noise.clone()
        },
        uwb_rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0075_7762),
    };
    let mut engine = Engine::new(protocol.clone(), cfg.noise.msg_loss, cfg.seed);
    let start_positions: Vec<(f64, f64)> = starts.iter().map(|s| s.position()).collect();
    let mut coverage = CoverageGrid::new(world, cfg.eval.coverage_cell, &start_positions);
    let mut events = Vec::new();

    let steps = (cfg.duration / cfg.dt).round() as usize;
    let mut end_time = 0.0;
    'outer: for k in 0..steps {
        let now = k as f64 * cfg.dt;
        for i in 0..swarm.drones.len() {
            let before = swarm.drones[i].true_pose;
            let was_full = swarm.drones[i].stats.graph_full;
            let out = swarm.drones[i].tick(now, &swarm.ctx);
            let d = &swarm.drones[i];
            for (s, row) in out.depths.iter().enumerate() {
                for (c, depth) in row.iter().enumerate() {
                    if let Some(mm) = depth {
                        coverage.mark_ray(
                            before.position(),
                            before.psi + cfg.rig.bearing(s, c),
                            (mm / 1000.0).min(cfg.eval.coverage_range),
                        );
                    }
                }
            }
            if d.stats.graph_full && !was_full {
                events.push(SimEvent { time: now, drone: d.id, what: "pose graph full".into() });
            }
            if out.collided {
                events.push(SimEvent { time: now, drone: d.id, what: "collision".into() });
                if cfg.abort_on_collision {
                    end_time = now;
                    break 'outer;
                }
            }
        }
        coverage.record(now);
        end_time = now + cfg.dt;
        if cfg.stop_at_coverage && coverage.fraction() >= cfg.eval.coverage_target {
            break;
        }
        engine.run_until(now + cfg.dt, &mut swarm);
    }

    let drones = swarm.drones;
    let mut graphs: Vec<PoseGraph> = drones.iter().map(|d| d.graph.clone()).collect();
    let graphs_before_final = graphs.clone();
    let mut optimize_reports: Vec<(f64, DroneId, OptimizeReport)> = drones
        .iter()
        .flat_map(|d| d.optimize_reports.iter().map(move |(t, r)| (*t, d.id, r.clone())))
        .collect();
    optimize_reports.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for (i, r) in final_cascade(&mut graphs, &cfg.pgo).into_iter().enumerate() {
        optimize_reports.push((end_time, i as DroneId, r));
    }

    let frames: Vec<Vec<DepthFrame>> = drones.iter().map(|d| d.frames.clone()).collect();
    let matrix_frames: Vec<Vec<MatrixFrame>> = drones.iter().map(|d| d.matrix_frames.clone()).collect();
    let truth: Vec<Vec<Pose2>> = drones.iter().map(|d| d.truth.clone()).collect();
    let dr: Vec<Vec<Pose2>> = drones.iter().map(|d| d.dead_reckoning.clone()).collect();
    let generation = optimize_reports.len() as u64;
    let (map, metrics) = evaluate(
        world,
        &graphs,
        &frames,
        &matrix_frames,
        &truth,
        &dr,
        cfg,
        &coverage.history,
        generation,
    );
    let filtered_map = density_filter(&map, cfg.eval.density_radius, cfg.eval.density_min_neighbors);

    let mut trajectories = Vec::new();
    for (i, g) in graphs.iter().enumerate() {
        for (k, node) in g.nodes().iter().enumerate() {
            trajectories.push(TrajectorySample {
                time: node.timestamp,
                drone: i as DroneId,
                pose_id: node.id,
                truth: truth[i][k],
                estimate: node.pose,
                dead_reckoning: dr[i][k],
            });
        }
    }

    Ok(ScenarioResult {
        config: cfg.clone(),
        world: world.clone(),
        metrics,
        graphs,
        graphs_before_final,
        frames,
        matrix_frames,
        trajectories,
        map,
        filtered_map,
        trace: engine.trace().to_vec(),
        protocol_stats: engine.stats.clone(),
        optimize_reports,
        drone_stats: drones.iter().map(|d| d.stats.clone()).collect(),
        events,
        coverage_history: coverage.history.clone(),
        coverage,
        end_time,
    })
}

/// Metrics of a finished run. Shared with offline replay.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    world: &World,
    graphs: &[PoseGraph],
    frames: &[Vec<DepthFrame>],
    matrix_frames: &[Vec<MatrixFrame>],
    truth: &[Vec<Pose2>],
    dead_reckoning: &[Vec<Pose2>],
    cfg: &ScenarioConfig,
    coverage_history: &[(f64, f64)],
    generation: u64,
) -> (GlobalMap, MapMetrics) {
    let map = match cfg.mode {
        MappingMode::ThreeD if matrix_frames.iter().any(|f| !f.is_empty()) => {
            assemble_map_3d(graphs, matrix_frames, cfg.altitude, &cfg.rig, generation)
        }
        _ => assemble_map(graphs, frames, &cfg.rig, generation),
    }
    .expect("frames reference graph nodes");
    let filtered = density_filter(&map, cfg.eval.density_radius, cfg.eval.density_min_neighbors);
    let pts = filtered.xy();

    let mut metrics = MapMetrics {
        mapping_rmse_m: mapping_error(&pts, world).ok(),
        mapping_rmse_segment_m: segment_mapping_error(&pts, world).ok(),
        coverage_time_s: crate::mapping_eval::coverage_time(coverage_history, cfg.eval.coverage_target),
        coverage_fraction: coverage_history.last().map(|c| c.1).unwrap_or(0.0),
        map_points: map.len(),
        filtered_map_points: filtered.len(),
        ..Default::default()
    };
    let tol = cfg.dt / 2.0;
    for (i, g) in graphs.iter().enumerate() {
        let times: Vec<f64> = g.nodes().iter().map(|n| n.timestamp).collect();
        let series = |poses: &[Pose2]| -> Vec<(f64, (f64, f64))> {
            times.iter().zip(poses).map(|(t, p)| (*t, p.position())).collect()
        };
        let t = series(&truth[i]);
        if let Ok(v) = ate(&series(&g.poses()), &t, tol) {
            metrics.ate_m.insert(key(i as DroneId), v);
        }
        if let Ok(v) = ate(&series(&dead_reckoning[i]), &t, tol) {
            metrics.dead_reckoning_ate_m.insert(key(i as DroneId), v);
        }
        metrics.loop_closures.insert(
            key(i as DroneId),
            LoopCounts {
                intra: g.intra_count(),
                inter: g.inter_count(),
            },
        );
    }
    (map, metrics)
}

impl ScenarioResult {
    pub fn total_collisions(&self) -> usize {
        self.drone_stats.iter().map(|s| s.collisions).sum()
    }

    /// Largest cost decrease over all optimize calls.
    pub fn max_cost_decrease(&self) -> f64 {
        self.optimize_reports
            .iter()
            .map(|(_, _, r)| r.initial_cost - r.final_cost)
            .fold(0.0, f64::max)
    }

    pub fn loop_counts(&self) -> BTreeMap<String, LoopCounts> {
        self.metrics.loop_closures.clone()
    }
}
