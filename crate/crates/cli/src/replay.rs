//! Offline re-optimization of a recorded run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cslam::geometry::Pose2;
use cslam::mapping_eval::{density_filter, GlobalMap, MapMetrics};
use cslam::pose_graph::{graph_cost, load_graph, OptimizeReport, PoseGraph};
use cslam::scan::{DepthFrame, MatrixFrame};
use cslam::sim::{evaluate, final_cascade, MappingMode, ScenarioConfig, TrajectorySample, World};

use crate::artifacts::{map_points_csv, trajectories_csv};
use crate::config::parse_config;
use crate::render::map_svg;
use crate::{create_dir, read, write, CliError};

pub struct ReplayInput {
    pub config: ScenarioConfig,
    pub world: World,
    pub graphs: Vec<PoseGraph>,
    pub frames: Vec<Vec<DepthFrame>>,
    pub matrix_frames: Vec<Vec<MatrixFrame>>,
    pub truth: Vec<Vec<Pose2>>,
    pub dead_reckoning: Vec<Vec<Pose2>>,
    pub coverage: Vec<(f64, f64)>,
}

pub struct ReplayOutcome {
    pub metrics: MapMetrics,
    pub map: GlobalMap,
    pub filtered_map: GlobalMap,
    pub trajectories: Vec<TrajectorySample>,
    pub reports: Vec<OptimizeReport>,
    pub graphs: Vec<PoseGraph>,
}

fn csv_rows(path: &Path, text: &str, width: usize) -> Result<Vec<Vec<f64>>, CliError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Result<Vec<f64>, _> = line.split(',').map(|v| v.trim().parse::<f64>()).collect();
        match vals {
            Ok(v) if v.len() == width => rows.push(v),
            _ => return Err(CliError::input(path, format!("line {}: expected {width} numbers", i + 1))),
        }
    }
    Ok(rows)
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read(path)?).map_err(|e| CliError::input(path, e))
}

/// Reads `graph_<i>.txt`, `frames_<i>.json` and the shared files of a replay bundle.
pub fn load_bundle(dir: &Path) -> Result<ReplayInput, CliError> {
    let cfg_path = dir.join("scenario.toml");
    let config = parse_config(&cfg_path, &read(&cfg_path)?)?;
    let world_path = dir.join("world.txt");
    let world = World::parse(&config.world, &read(&world_path)?).map_err(|e| CliError::input(&world_path, e))?;

    let mut graphs = Vec::new();
    let mut frames = Vec::new();
    let mut matrix_frames = Vec::new();
    loop {
        let i = graphs.len();
        let gp = dir.join(format!("graph_{i}.txt"));
        if !gp.exists() {
            break;
        }
        let g = load_graph(&read(&gp)?).map_err(|e| CliError::input(&gp, e))?;
        if g.owner() as usize != i {
            return Err(CliError::input(&gp, format!("graph belongs to drone {}", g.owner())));
        }
        graphs.push(g);
        frames.push(parse_json(&dir.join(format!("frames_{i}.json")))?);
        let mp = dir.join(format!("matrix_frames_{i}.json"));
        matrix_frames.push(if mp.exists() { parse_json(&mp)? } else { Vec::new() });
    }
    if graphs.is_empty() {
        return Err(CliError::input(dir, "no graph_0.txt dump found"));
    }

    let truth_path = dir.join("truth.csv");
    let mut truth = vec![Vec::new(); graphs.len()];
    let mut dead_reckoning = vec![Vec::new(); graphs.len()];
    for r in csv_rows(&truth_path, &read(&truth_path)?, 8)? {
        let d = r[0] as usize;
        if d >= graphs.len() || r[1] as usize != truth[d].len() {
            return Err(CliError::input(&truth_path, "rows out of order"));
        }
        truth[d].push(Pose2::new(r[2], r[3], r[4]));
        dead_reckoning[d].push(Pose2::new(r[5], r[6], r[7]));
    }
    for (i, g) in graphs.iter().enumerate() {
        if truth[i].len() != g.len() {
            return Err(CliError::input(
                &truth_path,
                format!("drone {i}: {} rows for {} nodes", truth[i].len(), g.len()),
            ));
        }
    }
    let cov_path = dir.join("coverage.csv");
    let coverage = csv_rows(&cov_path, &read(&cov_path)?, 2)?
        .into_iter()
        .map(|r| (r[0], r[1]))
        .collect();
    Ok(ReplayInput {
        config,
        world,
        graphs,
        frames,
        matrix_frames,
        truth,
        dead_reckoning,
        coverage,
    })
}

/// Runs the final cascade on the recorded graphs, with every information
/// matrix multiplied by `info_scale`, and evaluates the result.
pub fn replay(input: &ReplayInput, info_scale: f64) -> ReplayOutcome {
    let mut graphs = input.graphs.clone();
    if info_scale != 1.0 {
        for g in &mut graphs {
            g.scale_information(info_scale);
        }
    }
    let reports = final_cascade(&mut graphs, &input.config.pgo);
    let (map, metrics) = evaluate(
        &input.world,
        &graphs,
        &input.frames,
        &input.matrix_frames,
        &input.truth,
        &input.dead_reckoning,
        &input.config,
        &input.coverage,
        reports.len() as u64,
    );
    let filtered_map = density_filter(&map, input.config.eval.density_radius, input.config.eval.density_min_neighbors);
    let mut trajectories = Vec::new();
    for (i, g) in graphs.iter().enumerate() {
        for (k, n) in g.nodes().iter().enumerate() {
            trajectories.push(TrajectorySample {
                time: n.timestamp,
                drone: i as u16,
                pose_id: n.id,
                truth: input.truth[i][k],
                estimate: n.pose,
                dead_reckoning: input.dead_reckoning[i][k],
            });
        }
    }
    ReplayOutcome {
        metrics,
        map,
        filtered_map,
        trajectories,
        reports,
        graphs,
    }
}

/// Writes metrics.json, trajectories.csv, map_points.csv, map.svg and
/// replay.txt to `out`. Returns the text of replay.txt.
pub fn cmd_replay(run_dir: &Path, out: Option<&Path>, scale: Option<f64>) -> Result<String, CliError> {
    let bundle = if run_dir.join("replay").is_dir() {
        run_dir.join("replay")
    } else {
        run_dir.to_path_buf()
    };
    let input = load_bundle(&bundle)?;
    let out: PathBuf = out.map(Path::to_path_buf).unwrap_or_else(|| run_dir.join("replayed"));
    create_dir(&out)?;
    let base = replay(&input, 1.0);
    write(&out.join("metrics.json"), &base.metrics.to_json())?;
    write(&out.join("trajectories.csv"), &trajectories_csv(&base.trajectories))?;
    write(&out.join("map_points.csv"), &map_points_csv(&base.map))?;
    write(&out.join("map.svg"), &map_svg(&input.world, &base.filtered_map, &base.trajectories))?;

    let mut text = String::new();
    let mode = if input.config.mode == MappingMode::ThreeD { "3d" } else { "2d" };
    let _ = writeln!(text, "replay of {} drones, {mode} map", input.graphs.len());
    for (i, r) in base.reports.iter().enumerate() {
        let _ = writeln!(
            text,
            "drone {i}: cost {:.6} -> {:.6}, {} iterations, {} subgraphs, {:?}",
            r.initial_cost, r.final_cost, r.iterations, r.subgraphs, r.status
        );
    }
    if let Some(k) = scale {
        if !(k.is_finite() && k > 0.0) {
            return Err(CliError::Invalid("--scale-info must be positive".into()));
        }
        let scaled = replay(&input, k);
        let _ = writeln!(text, "information scaled by {k}:");
        let mut worst_pose = 0.0f64;
        for (i, (a, b)) in base.graphs.iter().zip(&scaled.graphs).enumerate() {
            let (ca, cb) = (graph_cost(a), graph_cost(b));
            let ratio = if ca > 0.0 { cb / ca } else { f64::NAN };
            let moved = a.poses().iter().zip(b.poses()).map(|(p, q)| p.distance_to(&q)).fold(0.0, f64::max);
            worst_pose = worst_pose.max(moved);
            let _ = writeln!(text, "drone {i}: final cost {ca:.6} -> {cb:.6}, ratio {ratio:.6}");
        }
        let _ = writeln!(text, "largest pose change {worst_pose:.3e} m");
    }
    write(&out.join("replay.txt"), &text)?;
    Ok(text)
}
