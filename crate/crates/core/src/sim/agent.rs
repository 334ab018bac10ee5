//! One simulated drone: true state, sensing history and SLAM state.

use std::collections::{BTreeMap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sensing::{odometry_reading, sense_matrices, sense_matrices_3d, twist_motion, NoiseModel};
use super::world::World;
use crate::exploration::{
    classify_neighbors, ExploreInput, ExploreParams, ExploreState, Mode, PeerObservation, SpinDirection,
};
use crate::geometry::Pose2;
use crate::icp::{match_points, should_pair, IcpConfig, IcpResult};
use crate::pose_graph::{optimize, GraphError, LoopKind, NodeId, OptimizeReport, PgoConfig, PoseGraph};
use crate::protocol::{decode_pose_update, encode_pose_update, RangingRecord};
use crate::scan::{
    build_scan, decode_scan_frames, encode_scan_frames, reduce_all, DepthFrame, DepthRow, MatrixFrame, Scan,
    SensorRig, FRAMES_PER_SCAN,
};
use crate::DroneId;

/// Knobs of the per-drone SLAM front end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlamParams {
    /// A graph node is added after this much time...
    pub node_period: f64,
    /// ...or this much translation, whichever comes first.
    pub node_distance: f64,
    /// Node period while a scan is being captured.
    pub scan_frame_period: f64,
    /// Travel since the last scan before a spin triggers a new one, metres.
    pub scan_travel: f64,
    /// Cruising this far without a scan stops the drone for an in-place scan spin.
    pub scan_force_travel: f64,
    /// Scans pair when their anchor estimates are closer than this, metres.
    pub match_radius: f64,
    pub max_match_rmse: f64,
    /// Largest accepted ICP correction.
    pub max_correction: f64,
    pub max_correction_angle: f64,
    /// ICP corrections below both limits are taken as exact agreement.
    pub deadband_translation: f64,
    pub deadband_rotation: f64,
    pub drone_radius: f64,
}

impl Default for SlamParams {
    fn default() -> Self {
        SlamParams {
            node_period: 0.1,
            node_distance: 0.05,
            scan_frame_period: 0.05,
            scan_travel: 1.0,
            scan_force_travel: 2.0,
            match_radius: 1.5,
            max_match_rmse: 0.1,
            max_correction: 1.0,
            max_correction_angle: 30f64.to_radians(),
            deadband_translation: 0.01,
            deadband_rotation: 0.5f64.to_radians(),
            drone_radius: 0.05,
        }
    }
}

impl SlamParams {
    pub fn validate(&self) -> Result<(), String> {
        let pos = [
            ("node_period", self.node_period),
            ("node_distance", self.node_distance),
            ("scan_frame_period", self.scan_frame_period),
            ("scan_travel", self.scan_travel),
            ("scan_force_travel", self.scan_force_travel),
            ("match_radius", self.match_radius),
            ("max_match_rmse", self.max_match_rmse),
            ("max_correction", self.max_correction),
            ("max_correction_angle", self.max_correction_angle),
            ("drone_radius", self.drone_radius),
        ];
        for (name, v) in pos {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("slam.{name} must be positive"));
            }
        }
        for (name, v) in [
            ("deadband_translation", self.deadband_translation),
            ("deadband_rotation", self.deadband_rotation),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("slam.{name} must be non-negative"));
            }
        }
        Ok(())
    }
}

/// Shared, read-only parameters for a tick.
pub struct SimContext<'a> {
    pub world: &'a World,
    pub rig: &'a SensorRig,
    pub noise: &'a NoiseModel,
    pub explore: &'a ExploreParams,
    pub slam: &'a SlamParams,
    pub icp: &'a IcpConfig,
    pub pgo: &'a PgoConfig,
    pub dt: f64,
    /// Flight altitude when full-resolution frames are kept.
    pub altitude: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DroneStats {
    pub scans_built: usize,
    pub scan_build_failures: usize,
    pub scans_received: usize,
    pub inbox_evictions: usize,
    pub intra_attempts: usize,
    pub inter_attempts: usize,
    /// ICP reported a failure (overlap, degeneracy, no convergence).
    pub icp_failures: usize,
    /// ICP converged but the residual or the correction was too large.
    pub icp_rejections: usize,
    pub collisions: usize,
    /// Set once the pose graph reached its capacity.
    pub graph_full: bool,
    pub distance_travelled: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OwnScan {
    pub scan: Scan,
    pub sent: bool,
}

pub struct TickOutput {
    pub depths: DepthRow,
    pub collided: bool,
}

pub struct DroneSim {
    pub id: DroneId,
    pub true_pose: Pose2,
    pub graph: PoseGraph,
    /// One frame per graph node, `frames[k].pose_id == k`.
    pub frames: Vec<DepthFrame>,
    pub matrix_frames: Vec<MatrixFrame>,
    /// True pose at each node.
    pub truth: Vec<Pose2>,
    /// Pure odometry integration at each node.
    pub dead_reckoning: Vec<Pose2>,
    pub explore: ExploreState,
    pub scans: Vec<OwnScan>,
    pub inbox: VecDeque<Scan>,
    pub stats: DroneStats,
    pub optimize_reports: Vec<(f64, OptimizeReport)>,
    external_index: BTreeMap<(DroneId, u32), NodeId>,
    peers: BTreeMap<DroneId, RangingRecord>,
    odom_acc: Pose2,
    steps_since_node: usize,
    dist_since_node: f64,
    travelled_since_scan: f64,
    capture_pending: bool,
    capture_start: Option<NodeId>,
    closures_since_pgo: usize,
    last_pgo: f64,
    rng: ChaCha8Rng,
}

/// Independent stream per drone, so one drone's draws never shift another's.
pub fn drone_rng(seed: u64, id: DroneId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64 + 1);
    rng
}

fn snap(z: Pose2, p: &SlamParams) -> Pose2 {
    if z.x.hypot(z.y) < p.deadband_translation && z.psi.abs() < p.deadband_rotation {
        Pose2::IDENTITY
    } else {
        z
    }
}

impl DroneSim {
    /// The drone starts with a spin in place so its first scan sits at the
    /// take-off pose.
    pub fn new(id: DroneId, start: Pose2, seed: u64, max_nodes: usize) -> Self {
        let mut explore = ExploreState::new();
        explore.begin_spin(SpinDirection::Ccw);
        DroneSim {
            id,
            true_pose: start,
            graph: PoseGraph::new(id, start, 0.0, max_nodes),
            frames: Vec::new(),
            matrix_frames: Vec::new(),
            truth: vec![start],
            dead_reckoning: vec![start],
            explore,
            scans: Vec::new(),
            inbox: VecDeque::new(),
            stats: DroneStats::default(),
            optimize_reports: Vec::new(),
            external_index: BTreeMap::new(),
            peers: BTreeMap::new(),
            odom_acc: Pose2::IDENTITY,
            steps_since_node: 0,
            dist_since_node: 0.0,
            travelled_since_scan: 0.0,
            capture_pending: false,
            capture_start: Some(0),
            closures_since_pgo: 0,
            last_pgo: 0.0,
            rng: drone_rng(seed, id),
        }
    }

    /// Current pose estimate: the newest node plus odometry since.
    pub fn estimate(&self) -> Pose2 {
        self.graph.last().pose.compose(&self.odom_acc)
    }

    pub fn on_ranging(&mut self, record: RangingRecord) {
        self.peers.insert(record.peer, record);
    }

    /// Senses, updates the graph, runs the explorer and moves.
    pub fn tick(&mut self, now: f64, ctx: &SimContext<'_>) -> TickOutput {
        let (depths, matrices) = match ctx.altitude {
            None => {
                let m = sense_matrices(ctx.world, &self.true_pose, ctx.rig, ctx.noise, &mut self.rng);
                (reduce_all(&m, ctx.rig), None)
            }
            Some(alt) => {
                let m = sense_matrices_3d(ctx.world, &self.true_pose, alt, ctx.rig, ctx.noise, &mut self.rng);
                (reduce_all(&m, ctx.rig), Some(m))
            }
        };

        let capturing = self.capture_pending || self.capture_start.is_some();
        let period = if capturing { ctx.slam.scan_frame_period } else { ctx.slam.node_period };
        let period_steps = (period / ctx.dt).round().max(1.0) as usize;
        if self.frames.is_empty() {
            self.store_frame(0, now, depths, matrices);
        } else if self.steps_since_node >= period_steps || self.dist_since_node >= ctx.slam.node_distance {
            self.add_node(now, depths, matrices, ctx);
        }

        let obs: Vec<PeerObservation> = self
            .peers
            .values()
            .map(|r| PeerObservation {
                id: r.peer,
                position: r.peer_position.position(),
                d_uwb: r.distance,
                timestamp: r.timestamp,
            })
            .collect();
        let view = classify_neighbors(&self.estimate(), &obs, now, ctx.explore.neighbor_staleness);
        let input = ExploreInput {
            depths: &depths,
            neighbors: &view,
            dt: ctx.dt,
            hold_spin: self.capture_pending || self.capture_start.is_some(),
        };
        let out = self.explore.step(&input, ctx.rig, ctx.explore, &mut self.rng);
        if out.transition == Some((Mode::Cruise, Mode::Spinning))
            && self.travelled_since_scan >= ctx.slam.scan_travel
            && self.capture_start.is_none()
            && !self.stats.graph_full
        {
            self.capture_pending = true;
        } else if out.transition.is_none()
            && self.explore.mode == Mode::Cruise
            && self.travelled_since_scan >= ctx.slam.scan_force_travel
            && self.capture_start.is_none()
            && !self.capture_pending
            && !self.stats.graph_full
        {
            self.explore.begin_spin(SpinDirection::Ccw);
            self.capture_pending = true;
        }

        let mut delta = twist_motion(&out.command, ctx.dt);
        let candidate = self.true_pose.compose(&delta);
        let collided = ctx.world.clearance(candidate.position()) < ctx.slam.drone_radius
            || ctx.world.walls_between(self.true_pose.position(), candidate.position()) > 0;
        if collided {
            self.stats.collisions += 1;
            delta = Pose2::IDENTITY;
        }
        self.true_pose = self.true_pose.compose(&delta);
        let reading = odometry_reading(&delta, ctx.dt, ctx.noise, &mut self.rng);
        self.odom_acc = self.odom_acc.compose(&reading);
        let moved = delta.x.hypot(delta.y);
        self.dist_since_node += moved;
        self.travelled_since_scan += moved;
        self.stats.distance_travelled += moved;
        self.steps_since_node += 1;
        TickOutput { depths, collided }
    }

    fn store_frame(&mut self, id: NodeId, now: f64, depths: DepthRow, matrices: Option<[crate::scan::SensorMatrix; 4]>) {
        let pose = self.graph.pose(id).expect("node exists");
        let timestamp_ms = (now * 1000.0).round() as u32;
        self.frames.push(DepthFrame { pose_id: id, timestamp_ms, pose, depths });
        if let Some(matrices) = matrices {
            self.matrix_frames.push(MatrixFrame { pose_id: id, timestamp_ms, pose, matrices });
        }
    }

    fn add_node(&mut self, now: f64, depths: DepthRow, matrices: Option<[crate::scan::SensorMatrix; 4]>, ctx: &SimContext<'_>) {
        if self.stats.graph_full {
            return;
        }
        let id = match self.graph.add_pose_with_odometry(self.odom_acc, ctx.pgo.omega_odom, now) {
            Ok(id) => id,
            Err(GraphError::Capacity { .. }) => {
                self.stats.graph_full = true;
                self.capture_pending = false;
                self.capture_start = None;
                return;
            }
            Err(e) => panic!("unexpected graph error: {e}"),
        };
        let dr = self.dead_reckoning.last().expect("seeded").compose(&self.odom_acc);
        self.dead_reckoning.push(dr);
        self.truth.push(self.true_pose);
        self.odom_acc = Pose2::IDENTITY;
        self.steps_since_node = 0;
        self.dist_since_node = 0.0;
        self.store_frame(id, now, depths, matrices);

        if self.capture_pending {
            self.capture_pending = false;
            self.capture_start = Some(id);
        }
        if let Some(start) = self.capture_start {
            if (id - start + 1) as usize == FRAMES_PER_SCAN {
                self.capture_start = None;
                self.finish_scan(start, ctx);
            }
        }
    }

    /// Frames of a scan with poses refreshed from the graph.
    fn scan_frames(&self, start: NodeId) -> Vec<DepthFrame> {
        self.frames[start as usize..start as usize + FRAMES_PER_SCAN]
            .iter()
            .map(|f| DepthFrame {
                pose: self.graph.pose(f.pose_id).expect("frame node"),
                ..f.clone()
            })
            .collect()
    }

    fn finish_scan(&mut self, start: NodeId, ctx: &SimContext<'_>) {
        let frames = self.scan_frames(start);
        let anchor = self.graph.pose(start).expect("frame node");
        let scan = match build_scan(self.scans.len() as u32, self.id, &frames, start, anchor, ctx.rig) {
            Ok(s) => s,
            Err(_) => {
                self.stats.scan_build_failures += 1;
                return;
            }
        };
        self.graph.mark_scan_pose(start).expect("frame node");
        self.stats.scans_built += 1;
        self.travelled_since_scan = 0.0;
        self.scans.push(OwnScan { scan, sent: false });
        self.try_intra(self.scans.len() - 1, ctx);
    }

    fn own_points(&self, scan: &Scan) -> Vec<(f64, f64)> {
        scan.points_under(&self.graph.pose(scan.anchor_pose_id).expect("scan node"))
    }

    /// Nearest own scan (by anchor estimate) to `pose`, among `candidates`.
    fn nearest_scan(&self, pose: &Pose2, candidates: impl Iterator<Item = usize>, radius: f64) -> Option<usize> {
        candidates
            .map(|k| {
                let a = self.graph.pose(self.scans[k].scan.anchor_pose_id).expect("scan node");
                (k, a.distance_to(pose))
            })
            .filter(|(_, d)| should_pair(*d, radius))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(k, _)| k)
    }

    /// Gates an ICP result on its residual and on how far it moves the
    /// anchor of the moving scan.
    fn accept(&mut self, r: &IcpResult, anchor: &Pose2, ctx: &SimContext<'_>) -> Option<Pose2> {
        let z = r.transform;
        if !r.converged {
            self.stats.icp_failures += 1;
            return None;
        }
        let shift = z.compose(anchor).distance_to(anchor);
        let ok = r.rmse <= ctx.slam.max_match_rmse
            && shift <= ctx.slam.max_correction
            && z.psi.abs() <= ctx.slam.max_correction_angle;
        if !ok {
            self.stats.icp_rejections += 1;
            return None;
        }
        Some(snap(z, ctx.slam))
    }

    fn try_intra(&mut self, newest: usize, ctx: &SimContext<'_>) {
        let cur = self.scans[newest].scan.anchor_pose_id;
        let cur_pose = self.graph.pose(cur).expect("scan node");
        let gap = ctx.pgo.min_index_gap;
        let candidates = (0..newest).filter(|k| cur - self.scans[*k].scan.anchor_pose_id >= gap);
        let Some(k) = self.nearest_scan(&cur_pose, candidates, ctx.slam.match_radius) else {
            return;
        };
        self.stats.intra_attempts += 1;
        let reference = self.own_points(&self.scans[k].scan);
        let moving = self.own_points(&self.scans[newest].scan);
        let r = match_points(&reference, &moving, Pose2::IDENTITY, ctx.icp);
        if let Some(z) = self.accept(&r, &cur_pose, ctx) {
            let earlier = self.scans[k].scan.anchor_pose_id;
            if self.graph.add_intra_loop_edge(cur, earlier, z, ctx.pgo.omega_lc, gap).is_ok() {
                self.closures_since_pgo += 1;
            }
        }
    }

    /// Matches buffered external scans against own scans. Scans with no own
    /// scan nearby stay buffered.
    pub fn process_inbox(&mut self, ctx: &SimContext<'_>) {
        let mut keep = VecDeque::new();
        while let Some(ext) = self.inbox.pop_front() {
            let Some(k) = self.nearest_scan(&ext.anchor_pose, 0..self.scans.len(), ctx.slam.match_radius) else {
                keep.push_back(ext);
                continue;
            };
            self.stats.inter_attempts += 1;
            let local = self.scans[k].scan.anchor_pose_id;
            let moving = self.own_points(&self.scans[k].scan);
            let r = match_points(&ext.world_points(), &moving, Pose2::IDENTITY, ctx.icp);
            let anchor = self.graph.pose(local).expect("scan node");
            if let Some(z) = self.accept(&r, &anchor, ctx) {
                let added = self.graph.add_inter_loop_edge(
                    local,
                    z,
                    ext.owner,
                    ext.anchor_pose_id,
                    ext.anchor_pose,
                    ctx.pgo.omega_lc,
                );
                if added.is_ok() {
                    self.closures_since_pgo += 1;
                }
            }
        }
        self.inbox = keep;
    }

    /// Wire payload of the oldest unsent scan: scan id then its frames.
    pub fn take_scan(&mut self) -> Option<Vec<u8>> {
        let k = self.scans.iter().position(|s| !s.sent)?;
        self.scans[k].sent = true;
        let scan = &self.scans[k].scan;
        let mut out = scan.scan_id.to_le_bytes().to_vec();
        out.extend(encode_scan_frames(&self.scan_frames(scan.anchor_pose_id)));
        Some(out)
    }

    pub fn deliver_scan(&mut self, from: DroneId, payload: &[u8], rig: &SensorRig, inbox_cap: usize) {
        if payload.len() < 4 {
            return;
        }
        let scan_id = u32::from_le_bytes(payload[..4].try_into().expect("four bytes"));
        let Ok(frames) = decode_scan_frames(&payload[4..]) else {
            return;
        };
        let Some(first) = frames.first() else {
            return;
        };
        let Ok(scan) = build_scan(scan_id, from, &frames, first.pose_id, first.pose, rig) else {
            return;
        };
        self.stats.scans_received += 1;
        self.external_index.insert((from, scan_id), first.pose_id);
        self.inbox.push_back(scan);
        while self.inbox.len() > inbox_cap.max(1) {
            self.inbox.pop_front();
            self.stats.inbox_evictions += 1;
        }
    }

    pub fn pgo_due(&self, now: f64, trigger_closures: usize, period: f64) -> bool {
        self.closures_since_pgo >= trigger_closures || now - self.last_pgo >= period
    }

    /// Optimizes and returns the pose-update payload: the anchor poses of
    /// every scan sent so far, in scan-id order.
    pub fn run_pgo(&mut self, now: f64, pgo: &PgoConfig) -> Option<Vec<u8>> {
        let report = optimize(&mut self.graph, pgo);
        self.optimize_reports.push((now, report));
        self.closures_since_pgo = 0;
        self.last_pgo = now;
        self.refresh_scan_anchors();
        let poses: Vec<Pose2> = self
            .scans
            .iter()
            .take_while(|s| s.sent)
            .map(|s| s.scan.anchor_pose)
            .collect();
        (!poses.is_empty()).then(|| encode_pose_update(&poses))
    }

    fn refresh_scan_anchors(&mut self) {
        for s in &mut self.scans {
            s.scan.anchor_pose = self.graph.pose(s.scan.anchor_pose_id).expect("scan node");
        }
    }

    pub fn deliver_pose_update(&mut self, from: DroneId, payload: &[u8]) {
        let Some(poses) = decode_pose_update(payload) else {
            return;
        };
        for (sid, pose) in poses.into_iter().enumerate() {
            let sid = sid as u32;
            if let Some(pid) = self.external_index.get(&(from, sid)) {
                self.graph.apply_external_pose_update(from, *pid, pose);
            }
            for s in self.inbox.iter_mut().filter(|s| s.owner == from && s.scan_id == sid) {
                s.anchor_pose = pose;
            }
        }
    }
}

/// Rounds a pose the way the pose-update wire format does.
pub fn wire_pose(p: Pose2) -> Pose2 {
    decode_pose_update(&encode_pose_update(&[p])).expect("one pose")[0]
}

/// Synchronous cascade in ascending drone order: each graph first refreshes
/// its inter-drone edges from the already optimized lower graphs, then
/// optimizes. `graphs[k]` must be owned by drone `k`.
pub fn final_cascade(graphs: &mut [PoseGraph], pgo: &PgoConfig) -> Vec<OptimizeReport> {
    let mut reports = Vec::new();
    for i in 0..graphs.len() {
        let (lower, rest) = graphs.split_at_mut(i);
        let g = &mut rest[0];
        let links: Vec<(DroneId, NodeId)> = g
            .loop_edges()
            .iter()
            .filter_map(|e| match e.kind {
                LoopKind::Inter(l) => Some((l.source_drone, l.source_pose_id)),
                LoopKind::Intra => None,
            })
            .collect();
        for (src, pid) in links {
            if let Some(pose) = lower.get(src as usize).and_then(|s| s.pose(pid)) {
                g.apply_external_pose_update(src, pid, wire_pose(pose));
            }
        }
        reports.push(optimize(g, pgo));
    }
    reports
}
