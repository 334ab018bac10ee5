//! ICP between two scans: point-to-point, finished with a point-to-line pass.
//!
//! Both scans are placed in the world with their anchor estimates. The result
//! is a world-frame correction `z` such that `z * X_moving` aligns the moving
//! scan onto the reference, which is the `Z_icp * X_local` product used when
//! turning a match into a loop edge.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, Pose2};
use crate::scan::Scan;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcpConfig {
    pub max_iterations: usize,
    pub translation_tol: f64,
    pub rotation_tol: f64,
    pub max_correspondence_dist: f64,
    pub min_inlier_fraction: f64,
    /// Soft-correspondence iterations run before the nearest-neighbour
    /// phase. Each moving point is paired with a Gaussian-weighted mean of the
    /// reference points around it, with the kernel width shrinking
    /// geometrically from `anneal_start_sigma` to `anneal_end_sigma`. This
    /// widens the basin and keeps sparse line samples from trapping the
    /// estimate between samples.
    pub anneal_steps: usize,
    pub anneal_start_sigma: f64,
    pub anneal_end_sigma: f64,
    pub max_condition_number: f64,
    /// Point-to-line iterations after the nearest-neighbour phase; 0 disables.
    /// Reference normals come from neighbours within `normal_radius`, and a
    /// point only counts as on a line when its neighbourhood's eigenvalue
    /// ratio is at most `max_line_flatness`.
    pub line_iterations: usize,
    pub normal_radius: f64,
    pub max_line_flatness: f64,
    pub line_gate: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            max_iterations: 30,
            translation_tol: 1e-4,
            rotation_tol: 1e-4,
            max_correspondence_dist: 0.5,
            min_inlier_fraction: 0.3,
            anneal_steps: 12,
            anneal_start_sigma: 0.5,
            anneal_end_sigma: 0.02,
            max_condition_number: 1e4,
            line_iterations: 20,
            normal_radius: 0.1,
            max_line_flatness: 0.05,
            line_gate: 0.2,
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("translation_tol", self.translation_tol),
            ("rotation_tol", self.rotation_tol),
            ("max_correspondence_dist", self.max_correspondence_dist),
            ("max_condition_number", self.max_condition_number),
            ("normal_radius", self.normal_radius),
            ("max_line_flatness", self.max_line_flatness),
            ("line_gate", self.line_gate),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("icp.{name} must be positive"));
            }
        }
        if self.max_iterations == 0 {
            return Err("icp.max_iterations must be positive".into());
        }
        if !(self.min_inlier_fraction > 0.0 && self.min_inlier_fraction <= 1.0) {
            return Err("icp.min_inlier_fraction must be in (0, 1]".into());
        }
        if !(self.anneal_end_sigma > 0.0 && self.anneal_start_sigma >= self.anneal_end_sigma) {
            return Err("icp.anneal sigmas must satisfy 0 < end <= start".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IcpFailure {
    EmptyScan,
    LowOverlap,
    Degenerate,
    NoConvergence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcpResult {
    pub transform: Pose2,
    pub rmse: f64,
    pub iterations: usize,
    pub converged: bool,
    pub inlier_fraction: f64,
    pub failure: Option<IcpFailure>,
    /// Truncated mean squared distance at each nearest-neighbour iteration.
    pub cost_history: Vec<f64>,
}

struct Grid {
    cell: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
    points: Vec<(f64, f64)>,
}

impl Grid {
    fn new(points: Vec<(f64, f64)>, cell: f64) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(*p, cell)).or_default().push(i);
        }
        Grid { cell, cells, points }
    }

    fn key(p: (f64, f64), cell: f64) -> (i64, i64) {
        ((p.0 / cell).floor() as i64, (p.1 / cell).floor() as i64)
    }

    /// Closest point within `gate`; ties go to the lower index.
    fn nearest(&self, p: (f64, f64), gate: f64) -> Option<(usize, f64)> {
        let (cx, cy) = Self::key(p, self.cell);
        let reach = (gate / self.cell).ceil() as i64;
        let mut best: Option<(usize, f64)> = None;
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                let Some(bucket) = self.cells.get(&(cx + dx, cy + dy)) else {
                    continue;
                };
                for &i in bucket {
                    let q = self.points[i];
                    let d2 = (q.0 - p.0).powi(2) + (q.1 - p.1).powi(2);
                    let better = match best {
                        None => true,
                        Some((bi, bd)) => d2 < bd || (d2 == bd && i < bi),
                    };
                    if better {
                        best = Some((i, d2));
                    }
                }
            }
        }
        best.filter(|(_, d2)| *d2 <= gate * gate)
    }
}

/// Closed-form rigid alignment of `src` onto `dst` (paired by index).
fn align(src: &[(f64, f64)], dst: &[(f64, f64)]) -> Pose2 {
    let n = src.len() as f64;
    let mean = |v: &[(f64, f64)]| {
        let s = v.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        (s.0 / n, s.1 / n)
    };
    let (ps, qs) = (mean(src), mean(dst));
    let (mut dot, mut cross) = (0.0, 0.0);
    for (p, q) in src.iter().zip(dst) {
        let (px, py) = (p.0 - ps.0, p.1 - ps.1);
        let (qx, qy) = (q.0 - qs.0, q.1 - qs.1);
        dot += px * qx + py * qy;
        cross += px * qy - py * qx;
    }
    let theta = cross.atan2(dot);
    let (s, c) = theta.sin_cos();
    Pose2 {
        x: qs.0 - (c * ps.0 - s * ps.1),
        y: qs.1 - (s * ps.0 + c * ps.1),
        psi: theta,
    }
}

/// Ratio of the eigenvalues of the 2x2 covariance of `pts`.
fn condition_number(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let (mx, my) = pts
        .iter()
        .fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in pts {
        let (dx, dy) = (p.0 - mx, p.1 - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let tr = sxx + syy;
    let disc = ((sxx - syy).powi(2) + 4.0 * sxy * sxy).sqrt();
    let (hi, lo) = ((tr + disc) / 2.0, (tr - disc) / 2.0);
    if lo <= hi * 1e-15 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

struct Matches {
    src: Vec<(f64, f64)>,
    dst: Vec<(f64, f64)>,
    sq_sum: f64,
    truncated: f64,
}

fn correspond(grid: &Grid, moving: &[(f64, f64)], gate: f64) -> Matches {
    let mut m = Matches {
        src: Vec::new(),
        dst: Vec::new(),
        sq_sum: 0.0,
        truncated: 0.0,
    };
    for p in moving {
        match grid.nearest(*p, gate) {
            Some((i, d2)) => {
                m.src.push(*p);
                m.dst.push(grid.points[i]);
                m.sq_sum += d2;
                m.truncated += d2;
            }
            None => m.truncated += gate * gate,
        }
    }
    m.truncated /= moving.len() as f64;
    m
}

/// Gaussian-weighted mean of the reference points within three sigma.
fn soft_targets(grid: &Grid, moving: &[(f64, f64)], sigma: f64) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
    let radius = 3.0 * sigma;
    let reach = (radius / grid.cell).ceil() as i64;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut src = Vec::with_capacity(moving.len());
    let mut dst = Vec::with_capacity(moving.len());
    for p in moving {
        let (cx, cy) = Grid::key(*p, grid.cell);
        let (mut w, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                let Some(bucket) = grid.cells.get(&(cx + dx, cy + dy)) else {
                    continue;
                };
                for &i in bucket {
                    let q = grid.points[i];
                    let d2 = (q.0 - p.0).powi(2) + (q.1 - p.1).powi(2);
                    if d2 > radius * radius {
                        continue;
                    }
                    let k = (-d2 * inv).exp();
                    w += k;
                    sx += k * q.0;
                    sy += k * q.1;
                }
            }
        }
        if w > 1e-300 {
            src.push(*p);
            dst.push((sx / w, sy / w));
        }
    }
    (src, dst)
}

/// Unit normal of the reference surface at each point, where it is locally a line.
fn line_normals(grid: &Grid, radius: f64, max_flatness: f64) -> Vec<Option<(f64, f64)>> {
    let reach = (radius / grid.cell).ceil() as i64;
    grid.points
        .iter()
        .map(|p| {
            let (cx, cy) = Grid::key(*p, grid.cell);
            let mut near = Vec::new();
            for dx in -reach..=reach {
                for dy in -reach..=reach {
                    if let Some(bucket) = grid.cells.get(&(cx + dx, cy + dy)) {
                        for &i in bucket {
                            let q = grid.points[i];
                            if (q.0 - p.0).powi(2) + (q.1 - p.1).powi(2) <= radius * radius {
                                near.push(q);
                            }
                        }
                    }
                }
            }
            if near.len() < 3 {
                return None;
            }
            let n = near.len() as f64;
            let (mx, my) = near.iter().fold((0.0, 0.0), |a, q| (a.0 + q.0 / n, a.1 + q.1 / n));
            let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
            for q in &near {
                let (dx, dy) = (q.0 - mx, q.1 - my);
                sxx += dx * dx;
                syy += dy * dy;
                sxy += dx * dy;
            }
            let tr = sxx + syy;
            let disc = ((sxx - syy).powi(2) + 4.0 * sxy * sxy).sqrt();
            let (hi, lo) = ((tr + disc) / 2.0, (tr - disc) / 2.0);
            if hi <= 0.0 || lo > hi * max_flatness {
                return None;
            }
            // Eigenvector of the small eigenvalue.
            let (nx, ny) = if sxy.abs() > 1e-15 {
                (sxy, lo - sxx)
            } else if sxx <= syy {
                (1.0, 0.0)
            } else {
                (0.0, 1.0)
            };
            let norm = nx.hypot(ny);
            Some((nx / norm, ny / norm))
        })
        .collect()
}

/// Solves a symmetric positive definite 3x3 system; none when near singular.
fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let scale = a[0][0].max(a[1][1]).max(a[2][2]);
    if scale <= 0.0 {
        return None;
    }
    let mut m = [[0.0; 4]; 3];
    for r in 0..3 {
        m[r][..3].copy_from_slice(&a[r]);
        m[r][3] = b[r];
    }
    for c in 0..3 {
        let piv = (c..3).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))?;
        if m[piv][c].abs() < scale * 1e-9 {
            return None;
        }
        m.swap(c, piv);
        for r in 0..3 {
            if r != c {
                let f = m[r][c] / m[c][c];
                for k in c..4 {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
    }
    Some([m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]])
}

/// Gauss-Newton on point-to-line residuals. Returns the refined transform and
/// whether the last step fell below tolerance; keeps `z` when the lines do not
/// constrain all three degrees of freedom.
fn refine_point_to_line(grid: &Grid, normals: &[Option<(f64, f64)>], moving: &[(f64, f64)], z: Pose2, cfg: &IcpConfig) -> (Pose2, bool) {
    let mut z = z;
    for _ in 0..cfg.line_iterations {
        let placed: Vec<_> = moving.iter().map(|p| z.apply(*p)).collect();
        // Linearise about the centroid for conditioning.
        let n = placed.len() as f64;
        let c = placed.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
        let mut h = [[0.0; 3]; 3];
        let mut g = [0.0; 3];
        let mut used = 0usize;
        for p in &placed {
            let Some((i, _)) = grid.nearest(*p, cfg.line_gate) else {
                continue;
            };
            let Some((nx, ny)) = normals[i] else {
                continue;
            };
            let q = grid.points[i];
            let r = nx * (p.0 - q.0) + ny * (p.1 - q.1);
            let j = [nx, ny, -nx * (p.1 - c.1) + ny * (p.0 - c.0)];
            for a in 0..3 {
                g[a] -= j[a] * r;
                for b in 0..3 {
                    h[a][b] += j[a] * j[b];
                }
            }
            used += 1;
        }
        if used < 10 {
            return (z, false);
        }
        let Some([tx, ty, th]) = solve3(h, g) else {
            return (z, false);
        };
        // Rotation about the centroid, then translation.
        let (s, co) = th.sin_cos();
        let step = Pose2 {
            x: c.0 - (co * c.0 - s * c.1) + tx,
            y: c.1 - (s * c.0 + co * c.1) + ty,
            psi: th,
        };
        z = step.compose(&z);
        if tx.hypot(ty) < cfg.translation_tol * 1e-3 && th.abs() < cfg.rotation_tol * 1e-3 {
            return (z, true);
        }
    }
    (z, false)
}

pub fn match_scans(reference: &Scan, moving: &Scan, initial_guess: Pose2, cfg: &IcpConfig) -> IcpResult {
    match_points(&reference.world_points(), &moving.world_points(), initial_guess, cfg)
}

/// ICP on raw world-frame point sets; `initial_guess` is applied to `moving` first.
pub fn match_points(
    reference: &[(f64, f64)],
    moving: &[(f64, f64)],
    initial_guess: Pose2,
    cfg: &IcpConfig,
) -> IcpResult {
    let mut result = IcpResult {
        transform: initial_guess,
        rmse: 0.0,
        iterations: 0,
        converged: false,
        inlier_fraction: 0.0,
        failure: None,
        cost_history: Vec::new(),
    };
    if reference.is_empty() || moving.is_empty() {
        result.failure = Some(IcpFailure::EmptyScan);
        return result;
    }
    let fine = cfg.max_correspondence_dist;
    let grid = Grid::new(reference.to_vec(), fine);
    let mut z = initial_guess;

    let ratio = if cfg.anneal_steps > 1 {
        (cfg.anneal_end_sigma / cfg.anneal_start_sigma).powf(1.0 / (cfg.anneal_steps - 1) as f64)
    } else {
        1.0
    };
    let mut sigma = cfg.anneal_start_sigma;
    for _ in 0..cfg.anneal_steps {
        let placed: Vec<_> = moving.iter().map(|p| z.apply(*p)).collect();
        let (src, dst) = soft_targets(&grid, &placed, sigma);
        if src.len() >= 3 {
            z = align(&src, &dst).compose(&z);
        }
        sigma *= ratio;
    }

    let mut small_step = false;
    for it in 0..cfg.max_iterations {
        let placed: Vec<_> = moving.iter().map(|p| z.apply(*p)).collect();
        let m = correspond(&grid, &placed, fine);
        result.cost_history.push(m.truncated);
        if m.src.len() < 3 {
            result.iterations = it;
            break;
        }
        let step = align(&m.src, &m.dst);
        z = step.compose(&z);
        result.iterations = it + 1;
        small_step = step.x.hypot(step.y) < cfg.translation_tol && step.psi.abs() < cfg.rotation_tol;
        if small_step {
            break;
        }
    }

    if small_step && cfg.line_iterations > 0 {
        let normals = line_normals(&grid, cfg.normal_radius, cfg.max_line_flatness);
        let (refined, settled) = refine_point_to_line(&grid, &normals, moving, z, cfg);
        if settled {
            z = refined;
        }
    }

    z.psi = wrap_angle(z.psi);
    let placed: Vec<_> = moving.iter().map(|p| z.apply(*p)).collect();
    let m = correspond(&grid, &placed, fine);
    result.transform = z;
    result.inlier_fraction = m.src.len() as f64 / moving.len() as f64;
    result.rmse = if m.src.is_empty() {
        0.0
    } else {
        (m.sq_sum / m.src.len() as f64).sqrt()
    };
    result.failure = if result.inlier_fraction < cfg.min_inlier_fraction || m.src.len() < 3 {
        Some(IcpFailure::LowOverlap)
    } else if condition_number(&m.dst) > cfg.max_condition_number {
        Some(IcpFailure::Degenerate)
    } else if !small_step {
        Some(IcpFailure::NoConvergence)
    } else {
        None
    };
    result.converged = result.failure.is_none();
    result
}

/// Scan pairing rule: strictly closer than the threshold.
pub fn should_pair(distance: f64, threshold: f64) -> bool {
    distance < threshold
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose2;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// Corner-rich room outline sampled every 5 cm: an L plus a short stub.
    fn corner_points() -> Vec<(f64, f64)> {
        let mut pts = Vec::new();
        for k in 0..=40 {
            let t = k as f64 * 0.05;
            pts.push((t, 0.0));
            pts.push((0.0, t));
        }
        for k in 0..=12 {
            pts.push((2.0, k as f64 * 0.05));
            pts.push((k as f64 * 0.05 + 0.6, 1.2));
        }
        pts
    }

    fn close(a: &Pose2, b: &Pose2, lin: f64, ang: f64) -> bool {
        (a.x - b.x).abs() < lin && (a.y - b.y).abs() < lin && wrap_angle(a.psi - b.psi).abs() < ang
    }

    #[test]
    fn identical_sets_give_identity() {
        let pts = corner_points();
        let r = match_points(&pts, &pts, Pose2::IDENTITY, &IcpConfig::default());
        assert!(r.converged, "{r:?}");
        assert!(close(&r.transform, &Pose2::IDENTITY, 1e-12, 1e-12));
        assert!(r.rmse < 1e-12);
    }

    #[test]
    fn recovers_known_displacement() {
        let pts = corner_points();
        let d = Pose2::new(0.2, -0.1, 10f64.to_radians());
        let moved: Vec<_> = pts.iter().map(|p| d.apply(*p)).collect();
        let r = match_points(&pts, &moved, Pose2::IDENTITY, &IcpConfig::default());
        assert!(r.converged, "{r:?}");
        assert!(close(&r.transform, &d.inverse(), 1e-3, 1e-3), "{:?}", r.transform);
    }

    #[test]
    fn noisy_recovery_95th_percentile() {
        let clean = corner_points();
        let d = Pose2::new(0.2, -0.1, 10f64.to_radians());
        let noise = Normal::new(0.0, 0.02).unwrap();
        let mut lin = Vec::new();
        let mut ang = Vec::new();
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Radial noise from a sensor at the origin, as a depth error would be.
            let mut jitter = |p: (f64, f64)| {
                let r = p.0.hypot(p.1).max(1e-9);
                let e = noise.sample(&mut rng);
                (p.0 + e * p.0 / r, p.1 + e * p.1 / r)
            };
            let reference: Vec<_> = clean.iter().map(|p| jitter(*p)).collect();
            let moved: Vec<_> = clean.iter().map(|p| d.apply(jitter(*p))).collect();
            let r = match_points(&reference, &moved, Pose2::IDENTITY, &IcpConfig::default());
            let err = d.compose(&r.transform);
            lin.push(err.x.hypot(err.y));
            ang.push(err.psi.abs());
        }
        lin.sort_by(f64::total_cmp);
        ang.sort_by(f64::total_cmp);
        assert!(lin[94] < 0.02, "p95 translation {}", lin[94]);
        assert!(ang[94] < 1f64.to_radians(), "p95 rotation {}", ang[94]);
    }

    #[test]
    fn straight_wall_is_degenerate() {
        let wall: Vec<_> = (0..60).map(|k| (k as f64 * 0.05, 1.0)).collect();
        let shifted: Vec<_> = wall.iter().map(|p| (p.0 + 0.3, p.1)).collect();
        let r = match_points(&wall, &shifted, Pose2::IDENTITY, &IcpConfig::default());
        assert!(!r.converged);
        assert_eq!(r.failure, Some(IcpFailure::Degenerate));
    }

    #[test]
    fn disjoint_sets_fail_overlap() {
        let a = corner_points();
        let b: Vec<_> = a.iter().map(|p| (p.0 + 20.0, p.1)).collect();
        let r = match_points(&a, &b, Pose2::IDENTITY, &IcpConfig::default());
        assert_eq!(r.failure, Some(IcpFailure::LowOverlap));
    }

    #[test]
    fn pairing_threshold() {
        assert!(should_pair(0.8, 1.0));
        assert!(!should_pair(1.0, 1.0));
        assert!(!should_pair(3.0, 1.0));
    }

    #[test]
    fn scans_use_anchor_estimates() {
        use crate::scan::Scan;
        let pts = corner_points();
        let anchor = Pose2::new(1.0, 1.0, 0.4);
        let reference = Scan { scan_id: 0, owner: 0, anchor_pose_id: 0, anchor_pose: anchor, points: pts.clone() };
        let d = Pose2::new(0.1, 0.05, -0.05);
        let moving = Scan { anchor_pose: d.compose(&anchor), ..reference.clone() };
        let r = match_scans(&reference, &moving, Pose2::IDENTITY, &IcpConfig::default());
        assert!(r.converged);
        // Corrected anchor lands back on the reference anchor.
        assert!(close(&r.transform.compose(&moving.anchor_pose), &anchor, 1e-6, 1e-6));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn basin_is_recovered(x in -0.5..0.5f64, y in -0.5..0.5f64, deg in -30.0..30.0f64) {
            let pts = corner_points();
            let d = Pose2::new(x, y, deg.to_radians());
            let moved: Vec<_> = pts.iter().map(|p| d.apply(*p)).collect();
            let r = match_points(&pts, &moved, Pose2::IDENTITY, &IcpConfig::default());
            prop_assert!(close(&r.transform, &d.inverse(), 1e-3, 1e-3), "{:?} vs {:?}", r.transform, d.inverse());
        }

        #[test]
        fn cost_is_non_increasing(x in -0.3..0.3f64, y in -0.3..0.3f64, deg in -15.0..15.0f64) {
            let pts = corner_points();
            let d = Pose2::new(x, y, deg.to_radians());
            let moved: Vec<_> = pts.iter().map(|p| d.apply(*p)).collect();
            let r = match_points(&pts, &moved, Pose2::IDENTITY, &IcpConfig::default());
            for w in r.cost_history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12, "{:?}", r.cost_history);
            }
        }

        #[test]
        fn forward_and_backward_cancel(x in -0.3..0.3f64, y in -0.3..0.3f64, deg in -15.0..15.0f64) {
            let pts = corner_points();
            let d = Pose2::new(x, y, deg.to_radians());
            let moved: Vec<_> = pts.iter().map(|p| d.apply(*p)).collect();
            let cfg = IcpConfig::default();
            let ab = match_points(&pts, &moved, Pose2::IDENTITY, &cfg);
            let ba = match_points(&moved, &pts, Pose2::IDENTITY, &cfg);
            let c = ab.transform.compose(&ba.transform);
            prop_assert!(close(&c, &Pose2::IDENTITY, 2.0 * cfg.translation_tol, 2.0 * cfg.rotation_tol), "{c:?}");
        }
    }
}
