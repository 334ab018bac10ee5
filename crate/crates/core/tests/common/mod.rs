//! Shared helpers for integration tests: an independent dense pose-graph
//! solver and generators for random graphs and corner scans.
#![allow(dead_code)]

use cslam::geometry::{InfoMatrix3, Pose2};
use cslam::pose_graph::{PgoConfig, PoseGraph};
use cslam::scan::{build_scan, reduce_all, DepthFrame, Scan, SensorRig, FRAMES_PER_SCAN};
use cslam::sim::{sense_matrices, NoiseModel, Segment, World};
use nalgebra::{DMatrix, DVector, Matrix3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub fn homogeneous(p: [f64; 3]) -> Matrix3<f64> {
    let (s, c) = p[2].sin_cos();
    Matrix3::new(c, -s, p[0], s, c, p[1], 0.0, 0.0, 1.0)
}

pub fn from_homogeneous(m: &Matrix3<f64>) -> [f64; 3] {
    [m[(0, 2)], m[(1, 2)], m[(1, 0)].atan2(m[(0, 0)])]
}

pub fn wrap(a: f64) -> f64 {
    let t = a.rem_euclid(std::f64::consts::TAU);
    if t > std::f64::consts::PI {
        t - std::f64::consts::TAU
    } else {
        t
    }
}

pub fn arr(p: &Pose2) -> [f64; 3] {
    [p.x, p.y, p.psi]
}

/// Edge list copied out of a graph: (from, to, measurement, weights).
pub struct Dense {
    pub poses: Vec<[f64; 3]>,
    pub edges: Vec<(usize, usize, [f64; 3], [f64; 3])>,
}

impl Dense {
    pub fn of(g: &PoseGraph) -> Dense {
        let mut edges: Vec<_> = g
            .odometry_edges()
            .iter()
            .map(|e| (e.from as usize, e.to as usize, arr(&e.measurement), e.info.diag))
            .collect();
        edges.extend(
            g.loop_edges()
                .iter()
                .map(|e| (e.from as usize, e.to as usize, arr(&e.measurement), e.info.diag)),
        );
        Dense {
            poses: g.nodes().iter().map(|n| arr(&n.pose)).collect(),
            edges,
        }
    }

    fn residuals(&self, poses: &[[f64; 3]]) -> Vec<f64> {
        let mut r = Vec::with_capacity(self.edges.len() * 3);
        for (i, j, z, w) in &self.edges {
            let pred = from_homogeneous(&(homogeneous(poses[*i]).try_inverse().unwrap() * homogeneous(poses[*j])));
            r.push(w[0].sqrt() * (z[0] - pred[0]));
            r.push(w[1].sqrt() * (z[1] - pred[1]));
            r.push(w[2].sqrt() * wrap(z[2] - pred[2]));
        }
        r
    }

    pub fn cost(&self, poses: &[[f64; 3]]) -> f64 {
        self.residuals(poses).iter().map(|v| v * v).sum()
    }

    /// Levenberg-Marquardt over every pose but node 0, with central-difference
    /// Jacobians and a dense solve.
    pub fn solve(&self) -> (Vec<[f64; 3]>, f64) {
        let n = self.poses.len();
        let mut x = self.poses.clone();
        let mut cost = self.cost(&x);
        let mut lambda = 1e-6;
        let h = 1e-7;
        for _ in 0..300 {
            let r0 = DVector::from_vec(self.residuals(&x));
            let mut jac = DMatrix::zeros(r0.len(), 3 * (n - 1));
            for k in 1..n {
                for d in 0..3 {
                    let mut plus = x.clone();
                    let mut minus = x.clone();
                    plus[k][d] += h;
                    minus[k][d] -= h;
                    let rp = DVector::from_vec(self.residuals(&plus));
                    let rm = DVector::from_vec(self.residuals(&minus));
                    jac.set_column(3 * (k - 1) + d, &((rp - rm) / (2.0 * h)));
                }
            }
            let jt = jac.transpose();
            let hess = &jt * &jac;
            let grad = &jt * &r0;
            let mut improved = false;
            for _ in 0..20 {
                let mut damped = hess.clone();
                for d in 0..damped.nrows() {
                    damped[(d, d)] += lambda * hess[(d, d)].max(1e-12);
                }
                let Some(step) = damped.lu().solve(&(-&grad)) else {
                    lambda *= 10.0;
                    continue;
                };
                let mut trial = x.clone();
                for k in 1..n {
                    for d in 0..3 {
                        trial[k][d] += step[3 * (k - 1) + d];
                    }
                }
                let c = self.cost(&trial);
                if c < cost {
                    let rel = (cost - c) / cost.max(1e-300);
                    x = trial;
                    cost = c;
                    lambda = (lambda * 0.1).max(1e-12);
                    improved = rel > 1e-14;
                    break;
                }
                lambda *= 10.0;
            }
            if !improved {
                break;
            }
        }
        (x, cost)
    }
}

/// Random walk with noisy odometry and 1-3 loop closures between well
/// separated nodes; closures carry the true relative pose plus noise.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize, loops: usize) -> PoseGraph {
    let cfg = PgoConfig::default();
    let anchor = Pose2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-3.0..3.0));
    let mut truth = vec![anchor];
    for _ in 1..n {
        let step = Pose2::new(rng.random_range(0.1..0.5), rng.random_range(-0.1..0.1), rng.random_range(-0.6..0.6));
        truth.push(truth.last().unwrap().compose(&step));
    }
    let odo = Normal::new(0.0, 0.02).unwrap();
    let mut g = PoseGraph::new(1, anchor, 0.0, cfg.max_total_nodes);
    for k in 1..n {
        let t = truth[k - 1].between(&truth[k]);
        let z = Pose2::new(t.x + odo.sample(rng), t.y + odo.sample(rng), t.psi + 0.5 * odo.sample(rng));
        g.add_pose_with_odometry(z, cfg.omega_odom, k as f64).unwrap();
    }
    let lc = Normal::new(0.0, 0.005).unwrap();
    for _ in 0..loops {
        let cur = rng.random_range((n / 2).max(3)..n);
        let earlier = rng.random_range(0..cur - 2);
        let t = truth[earlier].between(&truth[cur]);
        let m = Pose2::new(t.x + lc.sample(rng), t.y + lc.sample(rng), t.psi + lc.sample(rng));
        // The correction that turns the current estimate into old * m.
        let old = g.pose(earlier as u32).unwrap();
        let icp = old.compose(&m).compose(&g.pose(cur as u32).unwrap().inverse());
        g.add_intra_loop_edge(cur as u32, earlier as u32, icp, cfg.omega_lc, 2).unwrap();
    }
    g
}

/// A room corner with a pillar so every translation is constrained.
pub fn corner_world() -> World {
    World::new(
        "corner",
        vec![
            Segment::new(0.0, 0.0, 4.0, 0.0),
            Segment::new(0.0, 0.0, 0.0, 3.0),
            Segment::new(1.6, 1.2, 2.0, 1.2),
            Segment::new(2.0, 1.2, 2.0, 1.6),
        ],
    )
    .unwrap()
}

/// Twenty frames spinning 60 degrees in place at `at`, sensed in `world`.
pub fn spin_scan<R: Rng>(world: &World, at: Pose2, noise: &NoiseModel, rig: &SensorRig, rng: &mut R) -> Scan {
    let frames: Vec<DepthFrame> = (0..FRAMES_PER_SCAN)
        .map(|k| {
            let pose = Pose2::new(at.x, at.y, at.psi + k as f64 * 60f64.to_radians() / 19.0);
            let m = sense_matrices(world, &pose, rig, noise, rng);
            DepthFrame {
                pose_id: k as u32,
                timestamp_ms: k as u32 * 50,
                pose,
                depths: reduce_all(&m, rig),
            }
        })
        .collect();
    build_scan(0, 0, &frames, 0, at, rig).unwrap()
}

pub fn info(w: [f64; 3]) -> InfoMatrix3 {
    InfoMatrix3 { diag: w }
}
