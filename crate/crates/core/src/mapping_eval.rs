//! Global map assembly, filtering and evaluation metrics.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pose_graph::{NodeId, PoseGraph};
use crate::scan::{project_frame_3d, project_depths, DepthFrame, MatrixFrame, SensorRig};
use crate::sim::world::World;
use crate::DroneId;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapPoint {
    pub x: f64,
    pub y: f64,
    /// Height, only set by the full-resolution projection.
    pub z: Option<f64>,
    pub drone: DroneId,
    pub pose_id: NodeId,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GlobalMap {
    pub points: Vec<MapPoint>,
    /// Optimization epoch the poses were taken from.
    pub generation: u64,
}

impl GlobalMap {
    pub fn xy(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.x, p.y)).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("drone {drone}: frame refers to missing pose {pose_id}")]
    DanglingPose { drone: DroneId, pose_id: NodeId },
    #[error("{graphs} graphs but {frames} frame lists")]
    Mismatch { graphs: usize, frames: usize },
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("metric is undefined on an empty map")]
    EmptyMap,
    #[error("no trajectory samples could be associated")]
    NoPairs,
}

/// Re-projects every frame under its node's current pose. `frames[i]` belongs
/// to `graphs[i]`.
pub fn assemble_map(
    graphs: &[PoseGraph],
    frames: &[Vec<DepthFrame>],
    rig: &SensorRig,
    generation: u64,
) -> Result<GlobalMap, MapError> {
    if graphs.len() != frames.len() {
        return Err(MapError::Mismatch {
            graphs: graphs.len(),
            frames: frames.len(),
        });
    }
    let mut points = Vec::new();
    for (g, fs) in graphs.iter().zip(frames) {
        let drone = g.owner();
        for f in fs {
            let pose = g.pose(f.pose_id).ok_or(MapError::DanglingPose {
                drone,
                pose_id: f.pose_id,
            })?;
            points.extend(project_depths(&pose, &f.depths, rig).into_iter().map(|(x, y)| MapPoint {
                x,
                y,
                z: None,
                drone,
                pose_id: f.pose_id,
            }));
        }
    }
    Ok(GlobalMap { points, generation })
}

/// Full-resolution variant: every valid pixel becomes a 3D point.
pub fn assemble_map_3d(
    graphs: &[PoseGraph],
    frames: &[Vec<MatrixFrame>],
    altitude: f64,
    rig: &SensorRig,
    generation: u64,
) -> Result<GlobalMap, MapError> {
    if graphs.len() != frames.len() {
        return Err(MapError::Mismatch {
            graphs: graphs.len(),
            frames: frames.len(),
        });
    }
    let mut points = Vec::new();
    for (g, fs) in graphs.iter().zip(frames) {
        let drone = g.owner();
        for f in fs {
            let pose = g.pose(f.pose_id).ok_or(MapError::DanglingPose {
                drone,
                pose_id: f.pose_id,
            })?;
            let placed = MatrixFrame { pose, ..f.clone() };
            points.extend(project_frame_3d(&placed, altitude, rig).into_iter().map(|[x, y, z]| MapPoint {
                x,
                y,
                z: Some(z),
                drone,
                pose_id: f.pose_id,
            }));
        }
    }
    Ok(GlobalMap { points, generation })
}

fn cell_of(p: (f64, f64), cell: f64) -> (i64, i64) {
    ((p.0 / cell).floor() as i64, (p.1 / cell).floor() as i64)
}

/// Keeps points with at least `min_neighbors` other points within `radius`.
/// Counts are taken on the input set, so the result does not depend on order.
pub fn density_filter(map: &GlobalMap, radius: f64, min_neighbors: usize) -> GlobalMap {
    assert!(radius > 0.0, "density radius must be positive");
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in map.points.iter().enumerate() {
        grid.entry(cell_of((p.x, p.y), radius)).or_default().push(i);
    }
    let r2 = radius * radius;
    let keep = |i: usize| {
        let p = &map.points[i];
        let (cx, cy) = cell_of((p.x, p.y), radius);
        let mut n = 0;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for &j in grid.get(&(cx + dx, cy + dy)).into_iter().flatten() {
                    let q = &map.points[j];
                    if j != i && (q.x - p.x).powi(2) + (q.y - p.y).powi(2) <= r2 {
                        n += 1;
                    }
                }
            }
        }
        n >= min_neighbors
    };
    GlobalMap {
        points: (0..map.points.len()).filter(|i| keep(*i)).map(|i| map.points[i]).collect(),
        generation: map.generation,
    }
}

fn rms(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v * v;
        n += 1;
    }
    (n > 0).then(|| (sum / n as f64).sqrt())
}

/// RMS distance from each point to the closest wall line, walls extended
/// to infinite lines.
pub fn mapping_error(points: &[(f64, f64)], world: &World) -> Result<f64, MetricError> {
    rms(points.iter().map(|p| {
        world
            .segments
            .iter()
            .map(|s| s.line_distance(*p))
            .fold(f64::INFINITY, f64::min)
    }))
    .ok_or(MetricError::EmptyMap)
}

/// Diagnostic companion of [`mapping_error`] measuring to the finite segments.
pub fn segment_mapping_error(points: &[(f64, f64)], world: &World) -> Result<f64, MetricError> {
    rms(points.iter().map(|p| world.clearance(*p))).ok_or(MetricError::EmptyMap)
}

/// Positional RMSE between time-stamped trajectories. Each estimated sample
/// is paired with the nearest true sample no more than `tolerance` away in time.
/// No alignment is applied.
pub fn ate(estimated: &[(f64, (f64, f64))], truth: &[(f64, (f64, f64))], tolerance: f64) -> Result<f64, MetricError> {
    let mut sorted: Vec<_> = truth.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let errors = estimated.iter().filter_map(|(t, p)| {
        let i = sorted.partition_point(|s| s.0 < *t);
        let best = [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter_map(|k| sorted.get(k))
            .min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs()))?;
        ((best.0 - t).abs() <= tolerance).then(|| (p.0 - best.1 .0).hypot(p.1 - best.1 .1))
    });
    rms(errors).ok_or(MetricError::NoPairs)
}

/// Grid over the free space reachable from the start positions, marking
/// cells swept by valid depth rays.
#[derive(Clone, Debug, PartialEq)]
pub struct CoverageGrid {
    cell: f64,
    origin: (f64, f64),
    dims: (usize, usize),
    accessible: Vec<bool>,
    covered: Vec<bool>,
    n_accessible: usize,
    n_covered: usize,
    /// `(time_s, fraction)` samples.
    pub history: Vec<(f64, f64)>,
}

impl CoverageGrid {
    pub fn new(world: &World, cell: f64, starts: &[(f64, f64)]) -> Self {
        assert!(cell > 0.0, "coverage cell must be positive");
        let (x0, y0, x1, y1) = world.bounds;
        let nx = ((x1 - x0) / cell).ceil().max(1.0) as usize;
        let ny = ((y1 - y0) / cell).ceil().max(1.0) as usize;
        let mut g = CoverageGrid {
            cell,
            origin: (x0, y0),
            dims: (nx, ny),
            accessible: vec![false; nx * ny],
            covered: vec![false; nx * ny],
            n_accessible: 0,
            n_covered: 0,
            history: Vec::new(),
        };
        let mut queue: VecDeque<(usize, usize)> = starts.iter().filter_map(|p| g.index_of(*p)).collect();
        for &(i, j) in &queue {
            g.accessible[j * nx + i] = true;
        }
        while let Some((i, j)) = queue.pop_front() {
            let c = g.center(i, j);
            let steps = [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)];
            for (di, dj) in steps {
                let (ni, nj) = (i as i64 + di, j as i64 + dj);
                if ni < 0 || nj < 0 || ni >= nx as i64 || nj >= ny as i64 {
                    continue;
                }
                let (ni, nj) = (ni as usize, nj as usize);
                if g.accessible[nj * nx + ni] || world.walls_between(c, g.center(ni, nj)) > 0 {
                    continue;
                }
                g.accessible[nj * nx + ni] = true;
                queue.push_back((ni, nj));
            }
        }
        g.n_accessible = g.accessible.iter().filter(|a| **a).count();
        g
    }

    fn index_of(&self, p: (f64, f64)) -> Option<(usize, usize)> {
        let i = ((p.0 - self.origin.0) / self.cell).floor();
        let j = ((p.1 - self.origin.1) / self.cell).floor();
        (i >= 0.0 && j >= 0.0 && (i as usize) < self.dims.0 && (j as usize) < self.dims.1)
            .then(|| (i as usize, j as usize))
    }

    fn center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.origin.0 + (i as f64 + 0.5) * self.cell,
            self.origin.1 + (j as f64 + 0.5) * self.cell,
        )
    }

    pub fn accessible_cells(&self) -> usize {
        self.n_accessible
    }

    pub fn covered_cells(&self) -> usize {
        self.n_covered
    }

    fn mark(&mut self, p: (f64, f64)) {
        if let Some((i, j)) = self.index_of(p) {
            let k = j * self.dims.0 + i;
            if self.accessible[k] && !self.covered[k] {
                self.covered[k] = true;
                self.n_covered += 1;
            }
        }
    }

    /// Marks the cells along a ray of length `range` from `origin`.
    pub fn mark_ray(&mut self, origin: (f64, f64), bearing: f64, range: f64) {
        let step = self.cell / 4.0;
        let n = (range / step).ceil() as usize;
        let (c, s) = (bearing.cos(), bearing.sin());
        for k in 0..=n {
            let d = (k as f64 * step).min(range);
            self.mark((origin.0 + d * c, origin.1 + d * s));
        }
    }

    pub fn fraction(&self) -> f64 {
        if self.n_accessible == 0 {
            return 0.0;
        }
        self.n_covered as f64 / self.n_accessible as f64
    }

    pub fn record(&mut self, time: f64) {
        let f = self.fraction();
        self.history.push((time, f));
    }

    pub fn time_to(&self, target: f64) -> Option<f64> {
        coverage_time(&self.history, target)
    }

    /// Row-major `covered` flags with grid size, for rendering.
    pub fn cells(&self) -> ((usize, usize), f64, (f64, f64), Vec<(bool, bool)>) {
        let flags = self.accessible.iter().zip(&self.covered).map(|(a, c)| (*a, *c)).collect();
        (self.dims, self.cell, self.origin, flags)
    }
}

/// First time the coverage fraction reaches `target`.
pub fn coverage_time(history: &[(f64, f64)], target: f64) -> Option<f64> {
    history.iter().find(|(_, f)| *f >= target - 1e-12).map(|(t, _)| *t)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopCounts {
    pub intra: usize,
    pub inter: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MapMetrics {
    pub mapping_rmse_m: Option<f64>,
    pub mapping_rmse_segment_m: Option<f64>,
    pub ate_m: BTreeMap<String, f64>,
    pub dead_reckoning_ate_m: BTreeMap<String, f64>,
    pub coverage_time_s: Option<f64>,
    pub coverage_fraction: f64,
    pub loop_closures: BTreeMap<String, LoopCounts>,
    pub map_points: usize,
    pub filtered_map_points: usize,
}

impl MapMetrics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn mean_ate(&self) -> Option<f64> {
        mean(self.ate_m.values())
    }

    pub fn mean_dead_reckoning_ate(&self) -> Option<f64> {
        mean(self.dead_reckoning_ate_m.values())
    }

    pub fn total_inter(&self) -> usize {
        self.loop_closures.values().map(|c| c.inter).sum()
    }

    pub fn total_intra(&self) -> usize {
        self.loop_closures.values().map(|c| c.intra).sum()
    }
}

fn mean<'a>(v: impl Iterator<Item = &'a f64>) -> Option<f64> {
    let v: Vec<f64> = v.copied().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}
