//! Per-drone pose graph.
//!
//! Node 0 is the take-off pose and anchors the graph: no optimization ever
//! moves it. Inter-drone loop closures are stored as edges from a local pose
//! to node 0, so external poses never become graph nodes; see
//! [`rebase_inter_edge`] and [`update_inter_edge`].

mod io;
mod optimize;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{between, wrap_angle, InfoMatrix3, Pose2};
use crate::DroneId;

pub use io::{dump_graph, load_graph, GraphParseError};
pub use optimize::{optimize, partition_by_travel, OptimizeReport, OptimizeStatus};

pub type NodeId = u32;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("pose graph capacity of {max} nodes exceeded")]
    Capacity { max: usize },
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("loop closure {from}->{to} spans {gap} nodes, minimum is {min}")]
    GapTooSmall {
        from: NodeId,
        to: NodeId,
        gap: u32,
        min: u32,
    },
    #[error("inter-drone edge source {source_drone} is not lower than owner {owner}")]
    SourceNotLower { source_drone: DroneId, owner: DroneId },
    #[error("edge {0} is not an inter-drone edge")]
    NotInter(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseNode {
    pub id: NodeId,
    pub pose: Pose2,
    pub is_scan_pose: bool,
    /// Seconds since mission start.
    pub timestamp: f64,
}

/// Edge between consecutive nodes, `to = from + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdomEdge {
    pub from: NodeId,
    pub to: NodeId,
    pub measurement: Pose2,
    pub info: InfoMatrix3,
}

/// Bookkeeping an inter-drone edge needs to be refreshed without re-running ICP.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterLink {
    pub source_drone: DroneId,
    /// Node id of the external scan pose in the source drone's graph.
    pub source_pose_id: NodeId,
    /// External pose value the measurement was last computed with.
    pub source_pose_snapshot: Pose2,
    /// Cached world-frame ICP correction, kept consistent with the snapshot.
    pub icp_transform: Pose2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LoopKind {
    Intra,
    Inter(InterLink),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopEdge {
    pub from: NodeId,
    pub to: NodeId,
    pub measurement: Pose2,
    pub info: InfoMatrix3,
    pub kind: LoopKind,
}

impl LoopEdge {
    pub fn is_inter(&self) -> bool {
        matches!(self.kind, LoopKind::Inter(_))
    }

    pub fn inter_link(&self) -> Option<&InterLink> {
        match &self.kind {
            LoopKind::Inter(link) => Some(link),
            LoopKind::Intra => None,
        }
    }
}

/// Optimizer and graph sizing parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PgoConfig {
    pub omega_odom: InfoMatrix3,
    pub omega_lc: InfoMatrix3,
    /// Travelled distance covered by one subgraph, metres.
    pub subgraph_travel: f64,
    pub max_subgraph_nodes: usize,
    pub max_total_nodes: usize,
    /// Minimum node-index distance for an intra-drone loop closure.
    pub min_index_gap: u32,
    pub max_iterations: usize,
    /// Relative cost decrease below which iterations stop.
    pub convergence_tol: f64,
}

impl Default for PgoConfig {
    fn default() -> Self {
        PgoConfig {
            omega_odom: InfoMatrix3 {
                diag: [50.0, 50.0, 100.0],
            },
            omega_lc: InfoMatrix3 {
                diag: [200.0, 200.0, 400.0],
            },
            subgraph_travel: 0.8,
            max_subgraph_nodes: 440,
            max_total_nodes: 3000,
            min_index_gap: 50,
            max_iterations: 50,
            convergence_tol: 1e-6,
        }
    }
}

impl PgoConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !self.omega_odom.is_valid() {
            return Err("omega_odom: weights must be positive".into());
        }
        if !self.omega_lc.is_valid() {
            return Err("omega_lc: weights must be positive".into());
        }
        if !(self.subgraph_travel > 0.0 && self.subgraph_travel.is_finite()) {
            return Err("subgraph_travel: must be positive".into());
        }
        if self.max_subgraph_nodes < 2 {
            return Err("max_subgraph_nodes: must be at least 2".into());
        }
        if self.max_subgraph_nodes > self.max_total_nodes {
            return Err("max_subgraph_nodes: must not exceed max_total_nodes".into());
        }
        if self.max_iterations == 0 {
            return Err("max_iterations: must be positive".into());
        }
        if !(self.convergence_tol > 0.0) {
            return Err("convergence_tol: must be positive".into());
        }
        Ok(())
    }
}

/// Pose graph owned by one drone.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseGraph {
    owner: DroneId,
    max_nodes: usize,
    nodes: Vec<PoseNode>,
    odom: Vec<OdomEdge>,
    loops: Vec<LoopEdge>,
}

impl PoseGraph {
    /// Seeds a graph with its anchor (take-off) pose as node 0.
    pub fn new(owner: DroneId, anchor: Pose2, timestamp: f64, max_nodes: usize) -> Self {
        PoseGraph {
            owner,
            max_nodes: max_nodes.max(1),
            nodes: vec![PoseNode {
                id: 0,
                pose: anchor,
                is_scan_pose: false,
                timestamp,
            }],
            odom: Vec::new(),
            loops: Vec::new(),
        }
    }

    pub fn owner(&self) -> DroneId {
        self.owner
    }

    pub fn max_nodes(&self) -> usize {
        self.max_nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn anchor(&self) -> Pose2 {
        self.nodes[0].pose
    }

    pub fn nodes(&self) -> &[PoseNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Option<&PoseNode> {
        self.nodes.get(id as usize)
    }

    pub fn pose(&self, id: NodeId) -> Option<Pose2> {
        self.node(id).map(|n| n.pose)
    }

    pub fn last(&self) -> &PoseNode {
        self.nodes.last().expect("graph always holds its anchor")
    }

    pub fn odometry_edges(&self) -> &[OdomEdge] {
        &self.odom
    }

    pub fn loop_edges(&self) -> &[LoopEdge] {
        &self.loops
    }

    pub fn intra_count(&self) -> usize {
        self.loops.iter().filter(|e| !e.is_inter()).count()
    }

    pub fn inter_count(&self) -> usize {
        self.loops.iter().filter(|e| e.is_inter()).count()
    }

    pub fn mark_scan_pose(&mut self, id: NodeId) -> Result<(), GraphError> {
        let node = self
            .nodes
            .get_mut(id as usize)
            .ok_or(GraphError::UnknownNode(id))?;
        node.is_scan_pose = true;
        Ok(())
    }

    /// Appends a node by forward-integrating `odometry` from the last pose.
    pub fn add_pose_with_odometry(
        &mut self,
        odometry: Pose2,
        info: InfoMatrix3,
        timestamp: f64,
    ) -> Result<NodeId, GraphError> {
        if self.nodes.len() >= self.max_nodes {
            return Err(GraphError::Capacity {
                max: self.max_nodes,
            });
        }
        let last = *self.last();
        let id = last.id + 1;
        self.nodes.push(PoseNode {
            id,
            pose: last.pose.compose(&odometry),
            is_scan_pose: false,
            timestamp,
        });
        self.odom.push(OdomEdge {
            from: last.id,
            to: id,
            measurement: odometry,
            info,
        });
        Ok(id)
    }

    /// Adds an intra-drone loop closure between the scan pose `current` and
    /// the earlier scan pose `earlier`.
    ///
    /// `icp` is the world-frame correction that aligns the current scan onto
    /// the earlier one, so the corrected current pose is `icp * x_current`.
    /// The stored edge runs from `earlier` to `current`.
    pub fn add_intra_loop_edge(
        &mut self,
        current: NodeId,
        earlier: NodeId,
        icp: Pose2,
        info: InfoMatrix3,
        min_index_gap: u32,
    ) -> Result<usize, GraphError> {
        let cur = self.pose(current).ok_or(GraphError::UnknownNode(current))?;
        let old = self.pose(earlier).ok_or(GraphError::UnknownNode(earlier))?;
        let gap = current.saturating_sub(earlier);
        if current <= earlier || gap < min_index_gap {
            return Err(GraphError::GapTooSmall {
                from: current,
                to: earlier,
                gap,
                min: min_index_gap,
            });
        }
        let corrected = icp.compose(&cur);
        self.loops.push(LoopEdge {
            from: earlier,
            to: current,
            measurement: between(&old, &corrected),
            info,
            kind: LoopKind::Intra,
        });
        Ok(self.loops.len() - 1)
    }

    /// Installs an inter-drone loop closure for local scan pose `local` built
    /// from an external scan pose of `source_drone`.
    ///
    /// The edge is rebased onto node 0, so the node count does not change.
    pub fn add_inter_loop_edge(
        &mut self,
        local: NodeId,
        icp: Pose2,
        source_drone: DroneId,
        source_pose_id: NodeId,
        external_pose: Pose2,
        info: InfoMatrix3,
    ) -> Result<usize, GraphError> {
        if source_drone >= self.owner {
            return Err(GraphError::SourceNotLower {
                source_drone,
                owner: self.owner,
            });
        }
        let x_local = self.pose(local).ok_or(GraphError::UnknownNode(local))?;
        self.loops.push(LoopEdge {
            from: local,
            to: 0,
            measurement: rebase_inter_edge(&icp, &x_local, &self.anchor()),
            info,
            kind: LoopKind::Inter(InterLink {
                source_drone,
                source_pose_id,
                source_pose_snapshot: external_pose,
                icp_transform: icp,
            }),
        });
        Ok(self.loops.len() - 1)
    }

    /// Refreshes every inter edge built from `(source_drone, source_pose_id)`
    /// with a newly optimized external pose. Returns how many edges changed.
    pub fn apply_external_pose_update(
        &mut self,
        source_drone: DroneId,
        source_pose_id: NodeId,
        new_pose: Pose2,
    ) -> usize {
        let anchor = self.anchor();
        let mut touched = 0;
        for edge in &mut self.loops {
            let hit = matches!(edge.kind, LoopKind::Inter(l)
                if l.source_drone == source_drone && l.source_pose_id == source_pose_id);
            if hit {
                if let Ok(updated) = update_inter_edge(edge, &new_pose, &anchor) {
                    *edge = updated;
                    touched += 1;
                }
            }
        }
        touched
    }

    /// Replaces node poses after optimization. Node 0 is never written.
    pub(crate) fn set_free_poses(&mut self, poses: &[Pose2]) {
        for (node, pose) in self.nodes.iter_mut().zip(poses).skip(1) {
            node.pose = *pose;
        }
    }

    pub(crate) fn push_raw(
        &mut self,
        nodes: Vec<PoseNode>,
        odom: Vec<OdomEdge>,
        loops: Vec<LoopEdge>,
    ) {
        self.nodes = nodes;
        self.odom = odom;
        self.loops = loops;
    }

    pub fn poses(&self) -> Vec<Pose2> {
        self.nodes.iter().map(|n| n.pose).collect()
    }

    /// Scales every information matrix by `k`.
    pub fn scale_information(&mut self, k: f64) {
        for e in &mut self.odom {
            e.info = e.info.scaled(k);
        }
        for e in &mut self.loops {
            e.info = e.info.scaled(k);
        }
    }
}

/// Residual `z - z_hat` with the heading component wrapped.
pub fn edge_residual(measurement: &Pose2, from: &Pose2, to: &Pose2) -> [f64; 3] {
    let pred = between(from, to);
    [
        measurement.x - pred.x,
        measurement.y - pred.y,
        wrap_angle(measurement.psi - pred.psi),
    ]
}

/// Weighted least-squares objective over odometry, intra and inter edges.
pub fn graph_cost(graph: &PoseGraph) -> f64 {
    let poses = &graph.nodes;
    let term = |from: NodeId, to: NodeId, z: &Pose2, info: &InfoMatrix3| {
        let e = edge_residual(z, &poses[from as usize].pose, &poses[to as usize].pose);
        info.weighted_norm(&e)
    };
    let odom: f64 = graph
        .odom
        .iter()
        .map(|e| term(e.from, e.to, &e.measurement, &e.info))
        .sum();
    let loops: f64 = graph
        .loops
        .iter()
        .map(|e| term(e.from, e.to, &e.measurement, &e.info))
        .sum();
    odom + loops
}

/// Edge value from the local pose to the external pose:
/// `Z_ext = (Z_icp * X_local)^-1 * X_ext`.
pub fn compute_inter_edge(icp: &Pose2, local_pose: &Pose2, external_pose: &Pose2) -> Pose2 {
    icp.compose(local_pose).inverse().compose(external_pose)
}

/// The same constraint re-expressed against the anchor:
/// `Z'_ext = (Z_icp * X_local)^-1 * X_0`.
pub fn rebase_inter_edge(icp: &Pose2, local_pose: &Pose2, anchor_pose: &Pose2) -> Pose2 {
    icp.compose(local_pose).inverse().compose(anchor_pose)
}

/// Recomputes a rebased inter edge after its external pose moved from the
/// cached snapshot to `external_pose_new`:
/// `Z' = (X_new * X_snap^-1 * Z_icp * X_local)^-1 * X_0`.
///
/// `Z_icp * X_local` is recovered from the current measurement as
/// `X_0 * Z'^-1`, and the cached ICP transform is advanced to
/// `X_new * X_snap^-1 * Z_icp`, so chained updates compose exactly.
pub fn update_inter_edge(
    edge: &LoopEdge,
    external_pose_new: &Pose2,
    anchor_pose: &Pose2,
) -> Result<LoopEdge, GraphError> {
    let LoopKind::Inter(link) = edge.kind else {
        return Err(GraphError::NotInter(edge.from as usize));
    };
    let shift = external_pose_new.compose(&link.source_pose_snapshot.inverse());
    let corrected_local = anchor_pose.compose(&edge.measurement.inverse());
    let measurement = shift
        .compose(&corrected_local)
        .inverse()
        .compose(anchor_pose);
    Ok(LoopEdge {
        measurement,
        kind: LoopKind::Inter(InterLink {
            source_pose_snapshot: *external_pose_new,
            icp_transform: shift.compose(&link.icp_transform),
            ..link
        }),
        ..*edge
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn info() -> InfoMatrix3 {
        InfoMatrix3::identity()
    }

    fn close(a: &Pose2, b: &Pose2, tol: f64) -> bool {
        (a.x - b.x).abs() < tol && (a.y - b.y).abs() < tol && wrap_angle(a.psi - b.psi).abs() < tol
    }

    #[test]
    fn odometry_forward_integration() {
        let mut g = PoseGraph::new(1, Pose2::IDENTITY, 0.0, 3000);
        let id = g.add_pose_with_odometry(Pose2::new(1.0, 0.0, 0.0), info(), 0.1).unwrap();
        assert_eq!(id, 1);
        assert_eq!(g.pose(1).unwrap(), Pose2::new(1.0, 0.0, 0.0));

        let mut g = PoseGraph::new(1, Pose2::new(1.0, 0.0, FRAC_PI_2), 0.0, 3000);
        g.add_pose_with_odometry(Pose2::new(1.0, 0.0, 0.0), info(), 0.1).unwrap();
        assert!(close(&g.pose(1).unwrap(), &Pose2::new(1.0, 1.0, FRAC_PI_2), 1e-12));
        assert_eq!(g.odometry_edges()[0].to, g.odometry_edges()[0].from + 1);
    }

    #[test]
    fn capacity_error_at_default_limit() {
        let cfg = PgoConfig::default();
        let mut g = PoseGraph::new(0, Pose2::IDENTITY, 0.0, cfg.max_total_nodes);
        for k in 1..cfg.max_total_nodes {
            g.add_pose_with_odometry(Pose2::new(0.01, 0.0, 0.0), info(), k as f64).unwrap();
        }
        assert_eq!(g.len(), 3000);
        assert_eq!(
            g.add_pose_with_odometry(Pose2::new(0.01, 0.0, 0.0), info(), 0.0),
            Err(GraphError::Capacity { max: 3000 })
        );
    }

    #[test]
    fn intra_edge_contract() {
        let mut g = PoseGraph::new(0, Pose2::IDENTITY, 0.0, 100);
        for _ in 0..60 {
            g.add_pose_with_odometry(Pose2::IDENTITY, info(), 0.0).unwrap();
        }
        let idx = g.add_intra_loop_edge(60, 2, Pose2::IDENTITY, info(), 50).unwrap();
        let e = g.loop_edges()[idx];
        assert!(e.from < e.to);
        assert_eq!(graph_cost(&g), 0.0);
        assert!(matches!(
            g.add_intra_loop_edge(30, 2, Pose2::IDENTITY, info(), 50),
            Err(GraphError::GapTooSmall { .. })
        ));
        assert_eq!(
            g.add_intra_loop_edge(61, 2, Pose2::IDENTITY, info(), 50),
            Err(GraphError::UnknownNode(61))
        );
    }

    #[test]
    fn single_edge_cost() {
        let mut g = PoseGraph::new(0, Pose2::IDENTITY, 0.0, 10);
        g.add_pose_with_odometry(Pose2::new(1.0, 0.0, 0.0), info(), 0.0).unwrap();
        assert_eq!(graph_cost(&g), 0.0);
        g.set_free_poses(&[Pose2::IDENTITY, Pose2::new(0.9, 0.0, 0.0)]);
        assert!((graph_cost(&g) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn inter_edge_examples() {
        let id = Pose2::IDENTITY;
        let p = Pose2::new(0.3, -1.0, 0.4);
        assert!(close(&compute_inter_edge(&id, &p, &p), &id, 1e-12));
        assert!(close(
            &compute_inter_edge(&id, &id, &Pose2::new(2.0, 0.0, 0.0)),
            &Pose2::new(2.0, 0.0, 0.0),
            1e-12
        ));
        assert!(close(
            &compute_inter_edge(&Pose2::new(0.1, 0.0, 0.0), &Pose2::new(1.0, 0.0, 0.0), &Pose2::new(1.1, 0.0, 0.0)),
            &id,
            1e-12
        ));
        assert!(close(&rebase_inter_edge(&id, &p, &p), &id, 1e-12));
        let icp = Pose2::new(0.0, 0.0, FRAC_PI_2);
        let local = Pose2::new(1.0, 1.0, 0.0);
        // (psi = pi/2) * (1, 1, 0) = (-1, 1, pi/2); its inverse is (-1, -1, -pi/2).
        let z = rebase_inter_edge(&icp, &local, &id);
        assert!(close(&z, &icp.compose(&local).inverse(), 1e-12));
        assert!(close(&z, &Pose2::new(-1.0, -1.0, -FRAC_PI_2), 1e-12));
    }

    #[test]
    fn update_identity_and_shift() {
        let mut g = PoseGraph::new(2, Pose2::IDENTITY, 0.0, 10);
        g.add_pose_with_odometry(Pose2::new(2.0, 0.0, 0.0), info(), 0.0).unwrap();
        let snap = Pose2::new(2.0, 0.0, 0.0);
        let idx = g.add_inter_loop_edge(1, Pose2::IDENTITY, 0, 7, snap, info()).unwrap();
        let e = g.loop_edges()[idx];
        assert_eq!((e.from, e.to), (1, 0));
        let same = update_inter_edge(&e, &snap, &g.anchor()).unwrap();
        assert!(close(&same.measurement, &e.measurement, 1e-12));

        let moved = update_inter_edge(&e, &Pose2::new(2.5, 0.0, 0.0), &g.anchor()).unwrap();
        let expected = rebase_inter_edge(&Pose2::new(0.5, 0.0, 0.0), &Pose2::new(2.0, 0.0, 0.0), &g.anchor());
        assert!(close(&moved.measurement, &expected, 1e-12));
        assert!(matches!(update_inter_edge(&LoopEdge { kind: LoopKind::Intra, ..e }, &snap, &g.anchor()), Err(GraphError::NotInter(_))));
    }

    #[test]
    fn inter_source_must_be_lower() {
        let mut g = PoseGraph::new(1, Pose2::IDENTITY, 0.0, 10);
        g.add_pose_with_odometry(Pose2::new(1.0, 0.0, 0.0), info(), 0.0).unwrap();
        assert!(g.add_inter_loop_edge(1, Pose2::IDENTITY, 2, 0, Pose2::IDENTITY, info()).is_err());
        assert!(g.add_inter_loop_edge(1, Pose2::IDENTITY, 0, 0, Pose2::IDENTITY, info()).is_ok());
        assert_eq!(g.len(), 2);
    }
}
