//! Browser bindings for three interactive views: a small swarm run, a single
//! ICP alignment, and the protocol scaling curves. Every call returns a JSON
//! string; the plain Rust functions behind the bindings are usable natively.

use std::collections::HashSet;

use cslam::geometry::Pose2;
use cslam::icp::{match_points, IcpConfig};
use cslam::protocol::{
    predict_bandwidth, predict_loop_time, ranging_exchanges, supported_swarm_size, BandwidthParams, ProtocolConfig,
    RADIOS,
};
use cslam::scan::{build_scan, reduce_all, DepthFrame, Scan, SensorRig, FRAMES_PER_SCAN};
use cslam::sim::{fixture, run_scenario, sense_matrices, NoiseModel, ScenarioConfig, Segment, World};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
pub struct DroneTrack {
    pub id: u16,
    pub truth: Vec<[f64; 2]>,
    pub estimate: Vec<[f64; 2]>,
    pub dead_reckoning: Vec<[f64; 2]>,
}

#[derive(Serialize)]
pub struct SwarmView {
    pub walls: Vec<[f64; 4]>,
    pub bounds: [f64; 4],
    pub drones: Vec<DroneTrack>,
    /// `[x, y, drone]`, thinned to one point per drone and 2 cm cell.
    pub points: Vec<[f64; 3]>,
    pub mapping_rmse: Option<f64>,
    pub mean_ate: Option<f64>,
    pub mean_dead_reckoning_ate: Option<f64>,
    pub intra_loops: usize,
    pub inter_loops: usize,
    pub coverage: f64,
    pub messages: usize,
}

fn walls(world: &World) -> Vec<[f64; 4]> {
    world.segments.iter().map(|s| [s.a.0, s.a.1, s.b.0, s.b.1]).collect()
}

pub fn simulate_view(world: &str, n_drones: usize, seed: u64, duration: f64) -> Result<SwarmView, String> {
    let w = fixture(world).ok_or_else(|| format!("unknown world {world}"))?;
    let cfg = ScenarioConfig {
        world: world.into(),
        n_drones,
        seed,
        duration,
        ..Default::default()
    };
    let r = run_scenario(&cfg, &w).map_err(|e| e.to_string())?;
    let drones = (0..n_drones as u16)
        .map(|id| {
            let s: Vec<_> = r.trajectories.iter().filter(|t| t.drone == id).collect();
            DroneTrack {
                id,
                truth: s.iter().map(|t| [t.truth.x, t.truth.y]).collect(),
                estimate: s.iter().map(|t| [t.estimate.x, t.estimate.y]).collect(),
                dead_reckoning: s.iter().map(|t| [t.dead_reckoning.x, t.dead_reckoning.y]).collect(),
            }
        })
        .collect();
    let mut seen = HashSet::new();
    let points = r
        .filtered_map
        .points
        .iter()
        .filter(|p| seen.insert((p.drone, (p.x / 0.02).floor() as i64, (p.y / 0.02).floor() as i64)))
        .map(|p| [p.x, p.y, p.drone as f64])
        .collect();
    let m = &r.metrics;
    let b = w.bounds;
    Ok(SwarmView {
        walls: walls(&w),
        bounds: [b.0, b.1, b.2, b.3],
        drones,
        points,
        mapping_rmse: m.mapping_rmse_m,
        mean_ate: m.mean_ate(),
        mean_dead_reckoning_ate: m.mean_dead_reckoning_ate(),
        intra_loops: m.total_intra(),
        inter_loops: m.total_inter(),
        coverage: m.coverage_fraction,
        messages: r.trace.len(),
    })
}

#[derive(Serialize)]
pub struct IcpView {
    pub walls: Vec<[f64; 4]>,
    pub reference: Vec<[f64; 2]>,
    pub before: Vec<[f64; 2]>,
    pub after: Vec<[f64; 2]>,
    /// Correction found by ICP, `[x, y, psi]`.
    pub transform: [f64; 3],
    /// Residual of the correction against the injected error, metres and degrees.
    pub residual_m: f64,
    pub residual_deg: f64,
    pub rmse: f64,
    pub iterations: usize,
    pub converged: bool,
    pub cost_history: Vec<f64>,
}

fn corner() -> World {
    World::new(
        "corner",
        vec![
            Segment::new(0.0, 0.0, 4.0, 0.0),
            Segment::new(0.0, 0.0, 0.0, 3.0),
            Segment::new(1.6, 1.2, 2.0, 1.2),
            Segment::new(2.0, 1.2, 2.0, 1.6),
        ],
    )
    .expect("non-empty")
}

fn spin_scan(world: &World, at: Pose2, noise: &NoiseModel, rng: &mut ChaCha8Rng) -> Scan {
    let rig = SensorRig::default();
    let frames: Vec<DepthFrame> = (0..FRAMES_PER_SCAN)
        .map(|k| {
            let pose = Pose2::new(at.x, at.y, at.psi + k as f64 * 60f64.to_radians() / 19.0);
            let m = sense_matrices(world, &pose, &rig, noise, rng);
            DepthFrame {
                pose_id: k as u32,
                timestamp_ms: k as u32 * 50,
                pose,
                depths: reduce_all(&m, &rig),
            }
        })
        .collect();
    build_scan(0, 0, &frames, 0, at, &rig).expect("twenty frames")
}

fn xy(points: &[(f64, f64)]) -> Vec<[f64; 2]> {
    points.iter().map(|p| [p.0, p.1]).collect()
}

/// Two scans of a room corner taken from the same spot; the second is placed
/// with an error of `(dx, dy, dpsi_deg)` and ICP pulls it back.
pub fn icp_view(dx: f64, dy: f64, dpsi_deg: f64, noise_mm: f64, seed: u64) -> IcpView {
    let world = corner();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = NoiseModel {
        depth_sigma: noise_mm.max(0.0),
        ..NoiseModel::zero()
    };
    let view = Pose2::new(1.0, 0.7, 0.6);
    let reference = spin_scan(&world, view, &noise, &mut rng);
    let moving = spin_scan(&world, view, &noise, &mut rng);
    let err = Pose2::new(dx, dy, dpsi_deg.to_radians());
    let placed = moving.points_under(&err.compose(&view));
    let target = reference.world_points();
    let r = match_points(&target, &placed, Pose2::IDENTITY, &IcpConfig::default());
    let after: Vec<(f64, f64)> = placed.iter().map(|p| r.transform.apply(*p)).collect();
    let residual = r.transform.compose(&err);
    IcpView {
        walls: walls(&world),
        reference: xy(&target),
        before: xy(&placed),
        after: xy(&after),
        transform: [r.transform.x, r.transform.y, r.transform.psi],
        residual_m: residual.x.hypot(residual.y),
        residual_deg: cslam::wrap_angle(residual.psi).to_degrees().abs(),
        rmse: r.rmse,
        iterations: r.iterations,
        converged: r.converged,
        cost_history: r.cost_history,
    }
}

#[derive(Serialize)]
pub struct ScalingView {
    pub n: Vec<usize>,
    pub rangings: Vec<usize>,
    pub loop_time_s: Vec<f64>,
    pub bandwidth_bps: Vec<f64>,
    /// `(radio, bits per second, largest swarm)`.
    pub radios: Vec<(String, f64, usize)>,
}

pub fn scaling_view(n_max: usize, scans_per_min: f64, scan_bytes: f64) -> ScalingView {
    let cfg = ProtocolConfig::default();
    let bw = BandwidthParams::default();
    let ns: Vec<usize> = (2..=n_max.clamp(2, 1000)).collect();
    ScalingView {
        rangings: ns.iter().map(|n| ranging_exchanges(*n)).collect(),
        loop_time_s: ns.iter().map(|n| predict_loop_time(*n, &cfg, 0.2)).collect(),
        bandwidth_bps: ns
            .iter()
            .map(|n| predict_bandwidth(*n, scans_per_min, scan_bytes, &bw).swarm_total * 8.0)
            .collect(),
        radios: RADIOS
            .iter()
            .map(|r| {
                (
                    r.name.to_string(),
                    r.bits_per_second,
                    supported_swarm_size(r.bits_per_second, scans_per_min, scan_bytes, &bw),
                )
            })
            .collect(),
        n: ns,
    }
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("view serializes")
}

/// Runs a scenario on a built-in world (`maze2`, `empty_room`, `corridor`).
#[wasm_bindgen]
pub fn simulate(world: &str, n_drones: u32, seed: u32, duration: f64) -> Result<String, JsValue> {
    simulate_view(world, n_drones as usize, seed as u64, duration)
        .map(|v| json(&v))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn icp(dx: f64, dy: f64, dpsi_deg: f64, noise_mm: f64, seed: u32) -> String {
    json(&icp_view(dx, dy, dpsi_deg, noise_mm, seed as u64))
}

#[wasm_bindgen]
pub fn scaling(n_max: u32, scans_per_min: f64, scan_bytes: f64) -> String {
    json(&scaling_view(n_max as usize, scans_per_min, scan_bytes))
}
