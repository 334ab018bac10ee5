//! Gauss-Newton pose-graph optimization.
//!
//! The full problem is solved with a skyline (envelope) Cholesky factorization:
//! odometry makes the normal matrix block-tridiagonal, intra loop closures only
//! widen the rows of their later node, and inter edges hit the fixed anchor so
//! they add no fill at all.
//!
//! Large graphs first go through a hierarchical pass. Nodes are split into
//! subgraphs by travelled distance, a skeleton of the subgraph roots is
//! optimized, every subgraph is moved rigidly with its root, and each subgraph
//! is then refined with its own root and all outside nodes held fixed. The
//! result seeds a final global refinement.

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{edge_residual, graph_cost, PgoConfig, PoseGraph};
use crate::geometry::{wrap_angle, InfoMatrix3, Pose2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizeStatus {
    /// Relative cost decrease fell below the tolerance.
    Converged,
    /// Iteration budget exhausted while the cost was still decreasing.
    MaxIterations,
    /// Normal equations stayed singular or no damped step reduced the cost.
    DidNotConverge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub subgraphs: usize,
    pub status: OptimizeStatus,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Factor {
    pub i: usize,
    pub j: usize,
    pub z: Pose2,
    pub info: InfoMatrix3,
}

fn factors_of(graph: &PoseGraph) -> Vec<Factor> {
    let odom = graph.odometry_edges().iter().map(|e| Factor {
        i: e.from as usize,
        j: e.to as usize,
        z: e.measurement,
        info: e.info,
    });
    let loops = graph.loop_edges().iter().map(|e| Factor {
        i: e.from as usize,
        j: e.to as usize,
        z: e.measurement,
        info: e.info,
    });
    odom.chain(loops).collect()
}

fn factor_cost(poses: &[Pose2], f: &Factor) -> f64 {
    f.info
        .weighted_norm(&edge_residual(&f.z, &poses[f.i], &poses[f.j]))
}

fn total_cost(poses: &[Pose2], factors: &[Factor]) -> f64 {
    factors.iter().map(|f| factor_cost(poses, f)).sum()
}

/// Optimizes `graph` in place. Node 0 is never modified and the cost never
/// increases: if no iterate improves on the input the input poses are kept.
pub fn optimize(graph: &mut PoseGraph, config: &PgoConfig) -> OptimizeReport {
    let initial_cost = graph_cost(graph);
    let mut report = OptimizeReport {
        initial_cost,
        final_cost: initial_cost,
        iterations: 0,
        subgraphs: 1,
        status: OptimizeStatus::Converged,
    };
    // Below this the residuals are pure floating-point rounding.
    if graph.len() < 2 || initial_cost <= 1e-20 {
        return report;
    }

    let factors = factors_of(graph);
    let mut poses = graph.poses();
    let mut fixed = vec![false; poses.len()];
    fixed[0] = true;

    let parts = partition_by_travel(&poses, config.subgraph_travel, config.max_subgraph_nodes);
    report.subgraphs = parts.len();
    if parts.len() > 1 && !graph.loop_edges().is_empty() {
        let seeded = hierarchical_seed(&poses, &factors, &parts, config);
        if total_cost(&seeded, &factors) < initial_cost {
            poses = seeded;
        }
    }

    let outcome = gauss_newton(
        &mut poses,
        &fixed,
        &factors,
        config.max_iterations,
        config.convergence_tol,
    );
    report.iterations = outcome.iterations;
    report.status = outcome.status;

    let final_cost = total_cost(&poses, &factors);
    if final_cost <= initial_cost {
        graph.set_free_poses(&poses);
        report.final_cost = final_cost;
    }
    report
}

/// Splits the node sequence into consecutive ranges whose travelled distance
/// (along the current estimates) reaches `travel`, capped at `max_nodes`.
pub fn partition_by_travel(poses: &[Pose2], travel: f64, max_nodes: usize) -> Vec<Range<usize>> {
    let mut parts = Vec::new();
    if poses.is_empty() {
        return parts;
    }
    let max_nodes = max_nodes.max(2);
    let mut start = 0;
    let mut acc = 0.0;
    for k in 1..poses.len() {
        acc += poses[k].distance_to(&poses[k - 1]);
        if acc >= travel || k - start >= max_nodes {
            parts.push(start..k);
            start = k;
            acc = 0.0;
        }
    }
    parts.push(start..poses.len());
    parts
}

fn hierarchical_seed(
    poses: &[Pose2],
    factors: &[Factor],
    parts: &[Range<usize>],
    config: &PgoConfig,
) -> Vec<Pose2> {
    let n = poses.len();
    let mut part_of = vec![0usize; n];
    for (k, r) in parts.iter().enumerate() {
        for i in r.clone() {
            part_of[i] = k;
        }
    }
    let root = |i: usize| parts[part_of[i]].start;
    let mut odom_from: Vec<Option<Pose2>> = vec![None; n];
    for f in factors {
        if f.j == f.i + 1 && odom_from[f.i].is_none() {
            odom_from[f.i] = Some(f.z);
        }
    }
    let offsets: Vec<Pose2> = (0..n).map(|i| poses[root(i)].between(&poses[i])).collect();

    // Skeleton over the subgraph roots.
    let mut skeleton: Vec<Pose2> = parts.iter().map(|r| poses[r.start]).collect();
    let mut sk_factors = Vec::new();
    for f in factors {
        let (pi, pj) = (part_of[f.i], part_of[f.j]);
        if pi == pj {
            continue;
        }
        let is_odom = f.j == f.i + 1;
        let z = offsets[f.i].compose(&f.z).compose(&offsets[f.j].inverse());
        if is_odom {
            // Odometry between consecutive roots: compose the chain through the
            // subgraph, weight shrinks with the number of edges composed.
            let len = (parts[pi].len()).max(1) as f64;
            sk_factors.push(Factor {
                i: pi,
                j: pj,
                z: chain_measurement(&odom_from, parts[pi].start, f.j),
                info: f.info.scaled(1.0 / len),
            });
        } else {
            sk_factors.push(Factor {
                i: pi,
                j: pj,
                z,
                info: f.info,
            });
        }
    }
    let mut sk_fixed = vec![false; skeleton.len()];
    sk_fixed[0] = true;
    gauss_newton(
        &mut skeleton,
        &sk_fixed,
        &sk_factors,
        config.max_iterations,
        config.convergence_tol,
    );

    let mut out: Vec<Pose2> = (0..n)
        .map(|i| skeleton[part_of[i]].compose(&offsets[i]))
        .collect();
    out[0] = poses[0];

    // Per-subgraph refinement with the root and all outside nodes fixed.
    let mut by_part: Vec<Vec<usize>> = vec![Vec::new(); parts.len()];
    for (idx, f) in factors.iter().enumerate() {
        let (pi, pj) = (part_of[f.i], part_of[f.j]);
        by_part[pi].push(idx);
        if pj != pi {
            by_part[pj].push(idx);
        }
    }
    for (k, range) in parts.iter().enumerate() {
        if range.len() < 2 {
            continue;
        }
        let mut local_ids: Vec<usize> = range.clone().collect();
        for &fi in &by_part[k] {
            for v in [factors[fi].i, factors[fi].j] {
                if !range.contains(&v) && !local_ids[range.len()..].contains(&v) {
                    local_ids.push(v);
                }
            }
        }
        let slot_of: HashMap<usize, usize> =
            local_ids.iter().enumerate().map(|(s, &v)| (v, s)).collect();
        let index_of = |v: usize| slot_of[&v];
        let mut local_poses: Vec<Pose2> = local_ids.iter().map(|&v| out[v]).collect();
        let local_fixed: Vec<bool> = local_ids
            .iter()
            .map(|&v| v == range.start || !range.contains(&v))
            .collect();
        let local_factors: Vec<Factor> = by_part[k]
            .iter()
            .map(|&fi| {
                let f = factors[fi];
                Factor {
                    i: index_of(f.i),
                    j: index_of(f.j),
                    ..f
                }
            })
            .collect();
        gauss_newton(
            &mut local_poses,
            &local_fixed,
            &local_factors,
            config.max_iterations,
            config.convergence_tol,
        );
        for (slot, &v) in local_ids.iter().enumerate() {
            if range.contains(&v) {
                out[v] = local_poses[slot];
            }
        }
    }
    out
}

/// Composes the odometry measurements from node `from` to node `to`.
fn chain_measurement(odom_from: &[Option<Pose2>], from: usize, to: usize) -> Pose2 {
    odom_from[from..to]
        .iter()
        .map_while(|z| *z)
        .fold(Pose2::IDENTITY, |acc, z| acc.compose(&z))
}

pub(crate) struct GnOutcome {
    pub iterations: usize,
    pub status: OptimizeStatus,
}

/// Damped Gauss-Newton over the non-fixed poses. Only improving steps are
/// accepted, so the cost is monotone non-increasing.
pub(crate) fn gauss_newton(
    poses: &mut [Pose2],
    fixed: &[bool],
    factors: &[Factor],
    max_iterations: usize,
    tol: f64,
) -> GnOutcome {
    let mut block = vec![usize::MAX; poses.len()];
    let mut nvar = 0;
    for (i, f) in fixed.iter().enumerate() {
        if !f {
            block[i] = nvar;
            nvar += 1;
        }
    }
    let active: Vec<&Factor> = factors
        .iter()
        .filter(|f| block[f.i] != usize::MAX || block[f.j] != usize::MAX)
        .collect();
    if nvar == 0 || active.is_empty() {
        return GnOutcome {
            iterations: 0,
            status: OptimizeStatus::Converged,
        };
    }

    let mut first_block: Vec<usize> = (0..nvar).collect();
    for f in &active {
        let (a, b) = (block[f.i], block[f.j]);
        if a != usize::MAX && b != usize::MAX {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            first_block[hi] = first_block[hi].min(lo);
        }
    }
    let first_row: Vec<usize> = (0..3 * nvar).map(|r| 3 * first_block[r / 3]).collect();

    let cost_of = |p: &[Pose2]| -> f64 { active.iter().map(|f| factor_cost(p, f)).sum() };
    let mut cost = cost_of(poses);
    let mut lambda = 0.0f64;
    let mut iterations = 0;
    let mut status = OptimizeStatus::MaxIterations;

    while iterations < max_iterations {
        if cost <= f64::MIN_POSITIVE {
            status = OptimizeStatus::Converged;
            break;
        }
        iterations += 1;
        let mut h = Skyline::new(first_row.clone());
        let mut g = vec![0.0; 3 * nvar];
        for f in &active {
            accumulate(&mut h, &mut g, poses, &block, f);
        }
        let max_diag = (0..3 * nvar).map(|r| h.get(r, r)).fold(0.0f64, f64::max).max(1e-12);

        let mut accepted = false;
        for _attempt in 0..12 {
            let mut hd = h.clone();
            if lambda > 0.0 {
                for r in 0..3 * nvar {
                    hd.add(r, r, lambda * max_diag);
                }
            }
            if hd.factorize() {
                let mut step: Vec<f64> = g.iter().map(|v| -v).collect();
                hd.solve(&mut step);
                let trial = apply_step(poses, &block, &step);
                let trial_cost = cost_of(&trial);
                if trial_cost.is_finite() && trial_cost <= cost {
                    let decrease = cost - trial_cost;
                    poses.copy_from_slice(&trial);
                    let prev = cost;
                    cost = trial_cost;
                    lambda = if lambda > 0.0 { lambda * 0.1 } else { 0.0 };
                    if lambda < 1e-12 {
                        lambda = 0.0;
                    }
                    accepted = true;
                    if decrease <= tol * prev.max(f64::MIN_POSITIVE) {
                        status = OptimizeStatus::Converged;
                    }
                    break;
                }
            }
            lambda = if lambda == 0.0 { 1e-6 } else { lambda * 10.0 };
        }
        if !accepted {
            status = OptimizeStatus::DidNotConverge;
            break;
        }
        if status == OptimizeStatus::Converged {
            break;
        }
    }
    GnOutcome { iterations, status }
}

fn apply_step(poses: &[Pose2], block: &[usize], step: &[f64]) -> Vec<Pose2> {
    poses
        .iter()
        .zip(block)
        .map(|(p, &b)| {
            if b == usize::MAX {
                *p
            } else {
                Pose2 {
                    x: p.x + step[3 * b],
                    y: p.y + step[3 * b + 1],
                    psi: wrap_angle(p.psi + step[3 * b + 2]),
                }
            }
        })
        .collect()
}

/// Adds one factor's contribution to `H` and `g = J^T Omega e`.
fn accumulate(h: &mut Skyline, g: &mut [f64], poses: &[Pose2], block: &[usize], f: &Factor) {
    let (xi, xj) = (&poses[f.i], &poses[f.j]);
    let e = edge_residual(&f.z, xi, xj);
    let (s, c) = xi.psi.sin_cos();
    let (dx, dy) = (xj.x - xi.x, xj.y - xi.y);
    let zx = c * dx + s * dy;
    let zy = -s * dx + c * dy;
    // Jacobians of the residual (negated prediction Jacobians).
    let a = [[c, s, -zy], [-s, c, zx], [0.0, 0.0, 1.0]];
    let b = [[-c, -s, 0.0], [s, -c, 0.0], [0.0, 0.0, -1.0]];
    let w = f.info.diag;
    let blocks = [(block[f.i], a), (block[f.j], b)];
    for &(br, jr) in &blocks {
        if br == usize::MAX {
            continue;
        }
        for p in 0..3 {
            g[3 * br + p] += (0..3).map(|k| jr[k][p] * w[k] * e[k]).sum::<f64>();
        }
        for &(bc, jc) in &blocks {
            if bc == usize::MAX || bc > br {
                continue;
            }
            for p in 0..3 {
                for q in 0..3 {
                    let (r, col) = (3 * br + p, 3 * bc + q);
                    if col > r {
                        continue;
                    }
                    let v: f64 = (0..3).map(|k| jr[k][p] * w[k] * jc[k][q]).sum();
                    h.add(r, col, v);
                }
            }
        }
    }
}

/// Symmetric matrix in lower skyline storage, factorized in place as `L L^T`.
#[derive(Clone, Debug)]
struct Skyline {
    first: Vec<usize>,
    offset: Vec<usize>,
    data: Vec<f64>,
}

impl Skyline {
    fn new(first: Vec<usize>) -> Self {
        let mut offset = Vec::with_capacity(first.len() + 1);
        let mut at = 0;
        for (r, &f) in first.iter().enumerate() {
            offset.push(at);
            at += r - f + 1;
        }
        offset.push(at);
        Skyline {
            first,
            offset,
            data: vec![0.0; at],
        }
    }

    fn index(&self, r: usize, c: usize) -> usize {
        debug_assert!(c <= r && c >= self.first[r]);
        self.offset[r] + (c - self.first[r])
    }

    fn add(&mut self, r: usize, c: usize, v: f64) {
        let i = self.index(r, c);
        self.data[i] += v;
    }

    fn get(&self, r: usize, c: usize) -> f64 {
        if c < self.first[r] || c > r {
            0.0
        } else {
            self.data[self.index(r, c)]
        }
    }

    fn factorize(&mut self) -> bool {
        let n = self.first.len();
        for i in 0..n {
            let fi = self.first[i];
            for j in fi..i {
                let fj = self.first[j];
                let start = fi.max(fj);
                let (oi, oj) = (self.offset[i] - fi, self.offset[j] - fj);
                let mut s = self.data[oi + j];
                for k in start..j {
                    s -= self.data[oi + k] * self.data[oj + k];
                }
                self.data[oi + j] = s / self.data[oj + j];
            }
            let oi = self.offset[i] - fi;
            let mut d = self.data[oi + i];
            for k in fi..i {
                d -= self.data[oi + k] * self.data[oi + k];
            }
            if !(d > 1e-14) || !d.is_finite() {
                return false;
            }
            self.data[oi + i] = d.sqrt();
        }
        true
    }

    fn solve(&self, b: &mut [f64]) {
        let n = self.first.len();
        for r in 0..n {
            let o = self.offset[r] - self.first[r];
            let mut s = b[r];
            for k in self.first[r]..r {
                s -= self.data[o + k] * b[k];
            }
            b[r] = s / self.data[o + r];
        }
        for r in (0..n).rev() {
            let o = self.offset[r] - self.first[r];
            b[r] /= self.data[o + r];
            let x = b[r];
            for k in self.first[r]..r {
                b[k] -= self.data[o + k] * x;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::InfoMatrix3;

    #[test]
    fn skyline_matches_dense_solve() {
        // Arrow-shaped SPD matrix: tridiagonal plus a full last row.
        let n = 6;
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            dense[i][i] = 4.0 + i as f64;
            if i > 0 {
                dense[i][i - 1] = -1.0;
                dense[i - 1][i] = -1.0;
            }
        }
        for c in 0..n - 1 {
            dense[n - 1][c] += 0.3;
            dense[c][n - 1] += 0.3;
        }
        let mut first: Vec<usize> = (0..n).map(|r| r.saturating_sub(1)).collect();
        first[n - 1] = 0;
        let mut h = Skyline::new(first);
        for r in 0..n {
            for c in 0..=r {
                if dense[r][c] != 0.0 {
                    h.add(r, c, dense[r][c]);
                }
            }
        }
        assert!(h.factorize());
        let b: Vec<f64> = (0..n).map(|i| i as f64 - 2.0).collect();
        let mut x = b.clone();
        h.solve(&mut x);
        for r in 0..n {
            let ax: f64 = (0..n).map(|c| dense[r][c] * x[c]).sum();
            assert!((ax - b[r]).abs() < 1e-12);
        }
    }

    #[test]
    fn skyline_rejects_indefinite() {
        let mut h = Skyline::new(vec![0, 0]);
        h.add(0, 0, 1.0);
        h.add(1, 0, 2.0);
        h.add(1, 1, 1.0);
        assert!(!h.factorize());
    }

    #[test]
    fn partition_respects_travel_and_cap() {
        let poses: Vec<Pose2> = (0..20).map(|k| Pose2::new(0.1 * k as f64, 0.0, 0.0)).collect();
        let parts = partition_by_travel(&poses, 0.8, 440);
        assert_eq!(parts[0], 0..8);
        assert_eq!(parts.iter().map(|r| r.len()).sum::<usize>(), 20);
        let capped = partition_by_travel(&poses, 100.0, 5);
        assert!(capped.iter().all(|r| r.len() <= 5));
    }

    #[test]
    fn consistent_chain_is_untouched() {
        let mut g = PoseGraph::new(0, Pose2::IDENTITY, 0.0, 100);
        for _ in 0..10 {
            g.add_pose_with_odometry(Pose2::new(0.3, 0.0, 0.2), InfoMatrix3::identity(), 0.0)
                .unwrap();
        }
        let before = g.poses();
        let report = optimize(&mut g, &PgoConfig::default());
        assert!(report.final_cost < 1e-20);
        assert_eq!(report.iterations, 0);
        assert_eq!(g.poses(), before);
    }
}
