//! Decentralized collaborative SLAM for swarms of small robots.
//!
//! Each robot keeps its own pose graph anchored at its take-off pose. Depth
//! frames from four 8x8 time-of-flight sensors are reduced to 32 planar ranges,
//! grouped into small scans, and matched with ICP to close loops, both against
//! the robot's own scans and against scans received from robots with lower
//! ids. A token-passing protocol schedules ranging and data exchange, and a
//! deterministic simulator ties everything together for evaluation.

pub mod exploration;
pub mod geometry;
pub mod icp;
pub mod mapping_eval;
pub mod pose_graph;
pub mod protocol;
pub mod scan;
pub mod sim;

/// Swarm member id; lower ids act as references for higher ids.
pub type DroneId = u16;

pub use geometry::{between, wrap_angle, InfoMatrix3, Pose2, Transform2};
