//! Files written by `run`, and the replay bundle next to them.
//!
//! ```text
//! <out>/trajectories.csv   time,drone,pose_id,true_x,true_y,true_psi,est_x,est_y,est_psi
//! <out>/map_points.csv     drone,pose_id,x,y,z
//! <out>/metrics.json
//! <out>/messages.log       one protocol message per line
//! <out>/map.svg
//! <out>/replay/            graphs before the final cascade plus everything
//!                          needed to redo it offline
//! ```

use std::fmt::Write as _;
use std::path::Path;

use cslam::mapping_eval::GlobalMap;
use cslam::pose_graph::dump_graph;
use cslam::protocol::format_trace;
use cslam::sim::{MappingMode, ScenarioResult, TrajectorySample};

use crate::config::to_toml;
use crate::render::map_svg;
use crate::{create_dir, write, CliError};

pub const RUN_FILES: [&str; 5] = ["trajectories.csv", "map_points.csv", "metrics.json", "messages.log", "map.svg"];

pub fn trajectories_csv(samples: &[TrajectorySample]) -> String {
    let mut out = String::from("time,drone,pose_id,true_x,true_y,true_psi,est_x,est_y,est_psi\n");
    for s in samples {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            s.time, s.drone, s.pose_id, s.truth.x, s.truth.y, s.truth.psi, s.estimate.x, s.estimate.y, s.estimate.psi
        );
    }
    out
}

pub fn map_points_csv(map: &GlobalMap) -> String {
    let mut out = String::from("drone,pose_id,x,y,z\n");
    for p in &map.points {
        let z = p.z.map(|z| z.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{},{}", p.drone, p.pose_id, p.x, p.y, z);
    }
    out
}

pub fn write_run(dir: &Path, r: &ScenarioResult) -> Result<(), CliError> {
    create_dir(dir)?;
    write(&dir.join("trajectories.csv"), &trajectories_csv(&r.trajectories))?;
    write(&dir.join("map_points.csv"), &map_points_csv(&r.map))?;
    write(&dir.join("metrics.json"), &r.metrics.to_json())?;
    write(&dir.join("messages.log"), &format_trace(&r.trace))?;
    write(&dir.join("map.svg"), &map_svg(&r.world, &r.filtered_map, &r.trajectories))?;
    write_replay_bundle(&dir.join("replay"), r)
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("frames serialize") + "\n"
}

pub fn write_replay_bundle(dir: &Path, r: &ScenarioResult) -> Result<(), CliError> {
    create_dir(dir)?;
    write(&dir.join("scenario.toml"), &to_toml(&r.config))?;
    write(&dir.join("world.txt"), &r.world.to_text())?;
    for (i, g) in r.graphs_before_final.iter().enumerate() {
        write(&dir.join(format!("graph_{i}.txt")), &dump_graph(g))?;
        write(&dir.join(format!("frames_{i}.json")), &json(&r.frames[i]))?;
        if r.config.mode == MappingMode::ThreeD {
            write(&dir.join(format!("matrix_frames_{i}.json")), &json(&r.matrix_frames[i]))?;
        }
    }
    let mut truth = String::from("drone,node,true_x,true_y,true_psi,dr_x,dr_y,dr_psi\n");
    // Samples come in node order, one per node, drone by drone.
    for i in 0..r.graphs_before_final.len() {
        for (k, s) in r.trajectories.iter().filter(|s| s.drone as usize == i).enumerate() {
            let (t, d) = (s.truth, s.dead_reckoning);
            let _ = writeln!(truth, "{i},{k},{},{},{},{},{},{}", t.x, t.y, t.psi, d.x, d.y, d.psi);
        }
    }
    write(&dir.join("truth.csv"), &truth)?;
    let mut cov = String::from("time,fraction\n");
    for (t, f) in &r.coverage_history {
        let _ = writeln!(cov, "{t},{f}");
    }
    write(&dir.join("coverage.csv"), &cov)
}
