//! Deterministic desk-scale simulator: segment worlds, emulated sensors,
//! ideal kinematics with noisy odometry, and the scenario loop.

pub mod agent;
pub mod scenario;
pub mod sensing;
pub mod world;

pub use agent::{drone_rng, final_cascade, DroneSim, DroneStats, SimContext, SlamParams};
pub use scenario::{
    default_starts, evaluate, run_scenario, EvalParams, MappingMode, ScenarioConfig, ScenarioError, ScenarioResult,
    SimEvent, TrajectorySample,
};
pub use sensing::{odometry_reading, sense_matrices, sense_matrices_3d, twist_motion, uwb_range, NoiseModel};
pub use world::{fixture, Segment, World, WorldError};
