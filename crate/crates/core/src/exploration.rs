//! Reactive exploration: Cruise, Spinning and Caution.
//!
//! The controller only sees the reduced depth row of its own rig and the
//! positions and UWB distances of its peers. It emits body-frame velocities
//! (`v_x` forward, `v_y` left) and a yaw rate, positive counter-clockwise.

use std::f64::consts::{FRAC_PI_4, PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, Pose2};
use crate::scan::{DepthRow, Sensor, SensorRig, COLUMNS};
use crate::DroneId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExploreParams {
    pub v_min: f64,
    pub v_max: f64,
    /// Forward speed gain per metre of clearance beyond `d_s`.
    pub slope_m: f64,
    /// Wall-following distance.
    pub d_obj: f64,
    /// Frontal distance that starts a spin.
    pub d_s: f64,
    pub delta_d: f64,
    /// Critical distance for repulsion during Caution.
    pub d_c: f64,
    pub omega_spin: f64,
    pub k_side: f64,
    pub k_align: f64,
    pub v_rep: f64,
    /// A side fit counts as a flat wall below this RMS residual.
    pub line_rms_max: f64,
    /// Peer records older than this are ignored.
    pub neighbor_staleness: f64,
}

impl Default for ExploreParams {
    fn default() -> Self {
        ExploreParams {
            v_min: 0.1,
            v_max: 0.5,
            slope_m: 0.5,
            d_obj: 0.6,
            d_s: 0.7,
            delta_d: 0.3,
            d_c: 0.25,
            omega_spin: 1.0,
            k_side: 1.0,
            k_align: 1.0,
            v_rep: 0.2,
            line_rms_max: 0.05,
            neighbor_staleness: 5.0,
        }
    }
}

impl ExploreParams {
    pub fn validate(&self) -> Result<(), String> {
        let all = [
            ("v_min", self.v_min),
            ("v_max", self.v_max),
            ("slope_m", self.slope_m),
            ("d_obj", self.d_obj),
            ("d_s", self.d_s),
            ("delta_d", self.delta_d),
            ("d_c", self.d_c),
            ("omega_spin", self.omega_spin),
            ("k_side", self.k_side),
            ("k_align", self.k_align),
            ("v_rep", self.v_rep),
            ("line_rms_max", self.line_rms_max),
            ("neighbor_staleness", self.neighbor_staleness),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("explore.{name} must be positive"));
            }
        }
        if self.v_min >= self.v_max {
            return Err("explore.v_min must be below explore.v_max".into());
        }
        if self.d_c >= self.d_s {
            return Err("explore.d_c must be below explore.d_s".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VelocityCommand {
    pub v_x: f64,
    pub v_y: f64,
    pub omega: f64,
}

impl VelocityCommand {
    pub const ZERO: VelocityCommand = VelocityCommand { v_x: 0.0, v_y: 0.0, omega: 0.0 };

    pub fn is_finite(&self) -> bool {
        self.v_x.is_finite() && self.v_y.is_finite() && self.omega.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Cruise,
    Spinning,
    Caution,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpinDirection {
    Cw,
    Ccw,
}

impl SpinDirection {
    pub fn sign(self) -> f64 {
        match self {
            SpinDirection::Cw => -1.0,
            SpinDirection::Ccw => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Area {
    Front,
    Back,
    Left,
    Right,
}

/// Quadrant of a body-frame point; the front and back sectors span 90 degrees.
pub fn area_of(bearing: f64) -> Area {
    let b = wrap_angle(bearing);
    if b.abs() <= FRAC_PI_4 {
        Area::Front
    } else if b.abs() >= 3.0 * FRAC_PI_4 {
        Area::Back
    } else if b > 0.0 {
        Area::Left
    } else {
        Area::Right
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeerObservation {
    pub id: DroneId,
    pub position: (f64, f64),
    pub d_uwb: f64,
    pub timestamp: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: DroneId,
    pub d_uwb: f64,
    /// Peer position in this drone's body frame.
    pub local: (f64, f64),
    pub area: Area,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NeighborView {
    pub peers: Vec<Neighbor>,
}

impl NeighborView {
    /// Peer in the front area closer than `dist` by UWB.
    pub fn frontal_within(&self, dist: f64) -> bool {
        self.peers.iter().any(|p| p.area == Area::Front && p.d_uwb < dist)
    }

    pub fn count_sides(&self) -> (usize, usize) {
        let left = self.peers.iter().filter(|p| p.local.1 > 0.0).count();
        let right = self.peers.iter().filter(|p| p.local.1 < 0.0).count();
        (left, right)
    }
}

/// Areas come from the shared position estimates, distances from UWB.
pub fn classify_neighbors(
    self_pose: &Pose2,
    peers: &[PeerObservation],
    now: f64,
    staleness: f64,
) -> NeighborView {
    let to_body = self_pose.inverse();
    let peers = peers
        .iter()
        .filter(|p| now - p.timestamp <= staleness && p.d_uwb.is_finite())
        .map(|p| {
            let local = to_body.apply(p.position);
            Neighbor {
                id: p.id,
                d_uwb: p.d_uwb,
                local,
                area: area_of(local.1.atan2(local.0)),
            }
        })
        .collect();
    NeighborView { peers }
}

/// Closest valid reading of one sensor, or the maximum range when none.
pub fn sensor_distance(depths: &DepthRow, sensor: Sensor, rig: &SensorRig) -> f64 {
    depths[sensor as usize]
        .iter()
        .flatten()
        .filter(|d| rig.is_valid_depth(**d))
        .copied()
        .reduce(f64::min)
        .map_or(rig.max_range, |mm| mm / 1000.0)
}

/// Total-least-squares line through a side sensor's points in the body
/// frame. Returns the line direction angle, folded into (-pi/2, pi/2], when
/// at least four points fit with RMS residual below `rms_max`.
pub fn side_line_angle(depths: &DepthRow, sensor: Sensor, rig: &SensorRig, rms_max: f64) -> Option<f64> {
    let s = sensor as usize;
    let pts: Vec<(f64, f64)> = (0..COLUMNS)
        .filter_map(|c| {
            let mm = depths[s][c].filter(|d| rig.is_valid_depth(*d))?;
            let b = rig.bearing(s, c);
            Some((mm / 1000.0 * b.cos(), mm / 1000.0 * b.sin()))
        })
        .collect();
    if pts.len() < 4 {
        return None;
    }
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in &pts {
        let (dx, dy) = (p.0 - mx, p.1 - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let (sn, cs) = theta.sin_cos();
    let resid: f64 = pts
        .iter()
        .map(|p| (-(p.0 - mx) * sn + (p.1 - my) * cs).powi(2))
        .sum();
    if (resid / n).sqrt() >= rms_max {
        return None;
    }
    let mut a = theta;
    if a <= -PI / 2.0 {
        a += PI;
    } else if a > PI / 2.0 {
        a -= PI;
    }
    Some(a)
}

/// Turn away from a close side wall; at an open intersection turn towards
/// the side with fewer peers, breaking ties at random.
pub fn spin_decision<R: Rng + ?Sized>(
    d_l: f64,
    d_r: f64,
    neighbors: &NeighborView,
    params: &ExploreParams,
    rng: &mut R,
) -> SpinDirection {
    if d_l < 2.0 * params.d_obj {
        return SpinDirection::Cw;
    }
    if d_r < 2.0 * params.d_obj {
        return SpinDirection::Ccw;
    }
    let (left, right) = neighbors.count_sides();
    match left.cmp(&right) {
        std::cmp::Ordering::Less => SpinDirection::Ccw,
        std::cmp::Ordering::Greater => SpinDirection::Cw,
        std::cmp::Ordering::Equal => {
            if rng.random_bool(0.5) {
                SpinDirection::Cw
            } else {
                SpinDirection::Ccw
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploreState {
    pub mode: Mode,
    pub spin_direction: SpinDirection,
    /// Heading turned since entering the current Spinning or Caution mode, mod 2 pi.
    pub spin_accumulated: f64,
    caution_turned: f64,
}

impl Default for ExploreState {
    fn default() -> Self {
        ExploreState {
            mode: Mode::Cruise,
            spin_direction: SpinDirection::Ccw,
            spin_accumulated: 0.0,
            caution_turned: 0.0,
        }
    }
}

/// One control tick's inputs.
pub struct ExploreInput<'a> {
    pub depths: &'a DepthRow,
    pub neighbors: &'a NeighborView,
    pub dt: f64,
    /// Keeps the drone spinning, e.g. while a scan is being acquired.
    pub hold_spin: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutput {
    pub command: VelocityCommand,
    /// Set on the tick the mode changed.
    pub transition: Option<(Mode, Mode)>,
}

fn clamp_abs(v: f64, lim: f64) -> f64 {
    v.clamp(-lim, lim)
}

impl ExploreState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step<R: Rng + ?Sized>(
        &mut self,
        input: &ExploreInput<'_>,
        rig: &SensorRig,
        params: &ExploreParams,
        rng: &mut R,
    ) -> StepOutput {
        let before = self.mode;
        let command = match self.mode {
            Mode::Cruise => self.cruise_step(input, rig, params, rng),
            Mode::Spinning => self.spinning_step(input, rig, params),
            Mode::Caution => self.caution_step(input, rig, params),
        };
        debug_assert!(command.is_finite());
        StepOutput {
            command,
            transition: (before != self.mode).then_some((before, self.mode)),
        }
    }

    /// Starts a spin in place, e.g. to capture a scan right after take-off.
    pub fn begin_spin(&mut self, direction: SpinDirection) {
        self.spin_direction = direction;
        self.enter(Mode::Spinning);
    }

    fn enter(&mut self, mode: Mode) {
        self.mode = mode;
        self.spin_accumulated = 0.0;
        self.caution_turned = 0.0;
    }

    fn accumulate(&mut self, omega: f64, dt: f64) {
        self.spin_accumulated = (self.spin_accumulated + omega.abs() * dt) % TAU;
    }

    pub fn cruise_step<R: Rng + ?Sized>(
        &mut self,
        input: &ExploreInput<'_>,
        rig: &SensorRig,
        params: &ExploreParams,
        rng: &mut R,
    ) -> VelocityCommand {
        let d = sensor_distance(input.depths, Sensor::Front, rig);
        let d_l = sensor_distance(input.depths, Sensor::Left, rig);
        let d_r = sensor_distance(input.depths, Sensor::Right, rig);

        if input.neighbors.frontal_within(2.0 * params.d_obj) {
            self.enter(Mode::Caution);
            return VelocityCommand::ZERO;
        }
        if d < params.d_s {
            self.spin_direction = spin_decision(d_l, d_r, input.neighbors, params, rng);
            self.enter(Mode::Spinning);
            return VelocityCommand::ZERO;
        }

        let v_x = (params.slope_m * (d - params.d_s)).clamp(params.v_min, params.v_max);
        // The right wall takes priority when both sides are in reach.
        let side = if d_r < 2.0 * params.d_obj {
            Some((Sensor::Right, d_r, -1.0))
        } else if d_l < 2.0 * params.d_obj {
            Some((Sensor::Left, d_l, 1.0))
        } else {
            None
        };
        let (mut v_y, mut omega) = (0.0, 0.0);
        if let Some((sensor, dist, toward)) = side {
            v_y = clamp_abs(toward * params.k_side * (dist - params.d_obj), params.v_max);
            if let Some(angle) = side_line_angle(input.depths, sensor, rig, params.line_rms_max) {
                omega = clamp_abs(params.k_align * angle, params.omega_spin);
            }
        }
        VelocityCommand { v_x, v_y, omega }
    }

    pub fn spinning_step(&mut self, input: &ExploreInput<'_>, rig: &SensorRig, params: &ExploreParams) -> VelocityCommand {
        let d = sensor_distance(input.depths, Sensor::Front, rig);
        if !input.hold_spin && d > params.d_s + params.delta_d {
            self.enter(Mode::Cruise);
            return VelocityCommand::ZERO;
        }
        let omega = self.spin_direction.sign() * params.omega_spin;
        self.accumulate(omega, input.dt);
        VelocityCommand { v_x: 0.0, v_y: 0.0, omega }
    }

    pub fn caution_step(&mut self, input: &ExploreInput<'_>, rig: &SensorRig, params: &ExploreParams) -> VelocityCommand {
        if self.caution_turned >= PI {
            self.enter(Mode::Cruise);
            return VelocityCommand::ZERO;
        }
        let omega = params.omega_spin;
        self.accumulate(omega, input.dt);
        self.caution_turned += omega * input.dt;

        // Nearest obstacle per area, walls and peers alike; push directly away from it.
        let mut nearest = [
            (sensor_distance(input.depths, Sensor::Front, rig), Area::Front),
            (sensor_distance(input.depths, Sensor::Back, rig), Area::Back),
            (sensor_distance(input.depths, Sensor::Left, rig), Area::Left),
            (sensor_distance(input.depths, Sensor::Right, rig), Area::Right),
        ];
        for p in &input.neighbors.peers {
            let slot = nearest.iter_mut().find(|(_, a)| *a == p.area).expect("all areas present");
            slot.0 = slot.0.min(p.d_uwb);
        }
        let (dist, area) = nearest
            .iter()
            .copied()
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .expect("non-empty");
        let (v_x, v_y) = if dist < params.d_c {
            match area {
                Area::Front => (-params.v_rep, 0.0),
                Area::Back => (params.v_rep, 0.0),
                Area::Left => (0.0, -params.v_rep),
                Area::Right => (0.0, params.v_rep),
            }
        } else {
            (0.0, 0.0)
        };
        VelocityCommand { v_x, v_y, omega }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn row(front: f64, back: f64, left: f64, right: f64) -> DepthRow {
        let mut r = [[None; COLUMNS]; 4];
        for (s, d) in [front, back, left, right].into_iter().enumerate() {
            if d.is_finite() {
                r[s] = [Some(d * 1000.0); COLUMNS];
            }
        }
        r
    }

    /// Side sensor readings of an infinite wall parallel to the heading at
    /// perpendicular distance `dist`, as a raycaster would return them.
    fn parallel_wall(depths: &mut DepthRow, sensor: Sensor, dist: f64, rig: &SensorRig) {
        for c in 0..COLUMNS {
            let b = rig.bearing(sensor as usize, c);
            depths[sensor as usize][c] = Some(dist / b.sin().abs() * 1000.0);
        }
    }

    fn run_once(state: &mut ExploreState, depths: &DepthRow, view: &NeighborView) -> StepOutput {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = ExploreInput { depths, neighbors: view, dt: 0.05, hold_spin: false };
        state.step(&input, &SensorRig::default(), &ExploreParams::default(), &mut rng)
    }

    #[test]
    fn open_space_cruises_at_top_speed() {
        let mut s = ExploreState::new();
        let out = run_once(&mut s, &row(4.0, f64::NAN, f64::NAN, f64::NAN), &NeighborView::default());
        assert_eq!(out.command, VelocityCommand { v_x: 0.5, v_y: 0.0, omega: 0.0 });
        // All-invalid front counts as clear.
        let out = run_once(&mut s, &row(f64::NAN, f64::NAN, f64::NAN, f64::NAN), &NeighborView::default());
        assert_eq!(out.command.v_x, 0.5);
    }

    #[test]
    fn spin_threshold_is_strict() {
        let p = ExploreParams::default();
        let mut s = ExploreState::new();
        let out = run_once(&mut s, &row(p.d_s, f64::NAN, f64::NAN, f64::NAN), &NeighborView::default());
        assert_eq!(out.command.v_x, p.v_min);
        assert_eq!(s.mode, Mode::Cruise);
        let out = run_once(&mut s, &row(p.d_s - 1e-3, f64::NAN, f64::NAN, f64::NAN), &NeighborView::default());
        assert_eq!(out.transition, Some((Mode::Cruise, Mode::Spinning)));
    }

    #[test]
    fn right_wall_following() {
        let p = ExploreParams::default();
        let rig = SensorRig::default();
        let mut depths = row(4.0, f64::NAN, f64::NAN, f64::NAN);
        parallel_wall(&mut depths, Sensor::Right, 1.2 * p.d_obj, &rig);
        let mut s = ExploreState::new();
        let out = run_once(&mut s, &depths, &NeighborView::default());
        let d_r = sensor_distance(&depths, Sensor::Right, &rig);
        let expected = -(p.k_side * (d_r - p.d_obj)).min(p.v_max);
        assert!((out.command.v_y - expected).abs() < 1e-12);
        assert!(out.command.v_y < 0.0);
        assert!(out.command.omega.abs() < 1e-9);

        // A wall yawed by 0.1 rad is followed by turning the same way.
        let yaw = 0.1f64;
        for c in 0..COLUMNS {
            let b = rig.bearing(Sensor::Right as usize, c);
            // Wall through (0, -0.7) with direction (cos yaw, sin yaw).
            let r = (-0.7 * yaw.cos()) / (b.sin() * yaw.cos() - b.cos() * yaw.sin());
            depths[Sensor::Right as usize][c] = Some(r * 1000.0);
        }
        let out = run_once(&mut ExploreState::new(), &depths, &NeighborView::default());
        assert!((out.command.omega - p.k_align * yaw).abs() < 1e-9, "{:?}", out.command);
    }

    #[test]
    fn spin_direction_rules() {
        let p = ExploreParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let empty = NeighborView::default();
        assert_eq!(spin_decision(0.3, 4.0, &empty, &p, &mut rng), SpinDirection::Cw);
        assert_eq!(spin_decision(4.0, 0.3, &empty, &p, &mut rng), SpinDirection::Ccw);

        let peer = |y: f64| Neighbor { id: 1, d_uwb: 2.0, local: (0.0, y), area: area_of(y.atan2(0.0)) };
        let two_left = NeighborView { peers: vec![peer(1.0), peer(2.0)] };
        assert_eq!(spin_decision(4.0, 4.0, &two_left, &p, &mut rng), SpinDirection::Cw);
        let two_right = NeighborView { peers: vec![peer(-1.0), peer(-2.0)] };
        assert_eq!(spin_decision(4.0, 4.0, &two_right, &p, &mut rng), SpinDirection::Ccw);

        let tie = NeighborView { peers: vec![peer(1.0), peer(-1.0)] };
        let pick = |seed| spin_decision(4.0, 4.0, &tie, &p, &mut ChaCha8Rng::seed_from_u64(seed));
        for seed in 0..20 {
            assert_eq!(pick(seed), pick(seed));
        }
        assert!((0..20).any(|s| pick(s) == SpinDirection::Cw) && (0..20).any(|s| pick(s) == SpinDirection::Ccw));
    }

    #[test]
    fn spinning_hysteresis_and_exit() {
        let p = ExploreParams::default();
        let mut s = ExploreState { mode: Mode::Spinning, ..Default::default() };
        let out = run_once(&mut s, &row(p.d_s + 0.2, f64::NAN, f64::NAN, f64::NAN), &NeighborView::default());
        assert_eq!(s.mode, Mode::Spinning);
        assert_eq!((out.command.v_x, out.command.v_y), (0.0, 0.0));
        assert_eq!(out.command.omega.abs(), p.omega_spin);
        run_once(&mut s, &row(p.d_s + 0.31, f64::NAN, f64::NAN, f64::NAN), &NeighborView::default());
        assert_eq!(s.mode, Mode::Cruise);

        // Boxed in: spins forever.
        let mut s = ExploreState { mode: Mode::Spinning, ..Default::default() };
        for _ in 0..1000 {
            let out = run_once(&mut s, &row(0.3, 0.3, 0.3, 0.3), &NeighborView::default());
            assert_eq!((out.command.v_x, out.command.v_y), (0.0, 0.0));
        }
        assert_eq!(s.mode, Mode::Spinning);
        assert!(s.spin_accumulated >= 0.0 && s.spin_accumulated < TAU);
    }

    #[test]
    fn caution_turns_half_a_circle() {
        let p = ExploreParams::default();
        let mut s = ExploreState::new();
        let view = NeighborView {
            peers: vec![Neighbor { id: 0, d_uwb: 1.0, local: (1.0, 0.0), area: Area::Front }],
        };
        let out = run_once(&mut s, &row(4.0, f64::NAN, f64::NAN, f64::NAN), &view);
        assert_eq!(out.transition, Some((Mode::Cruise, Mode::Caution)));

        let none = NeighborView::default();
        let out = run_once(&mut s, &row(4.0, f64::NAN, f64::NAN, f64::NAN), &none);
        assert_eq!((out.command.v_x, out.command.v_y), (0.0, 0.0));
        assert!(out.command.omega > 0.0);

        let out = run_once(&mut s, &row(4.0, 0.2, f64::NAN, f64::NAN), &none);
        assert_eq!((out.command.v_x, out.command.v_y), (p.v_rep, 0.0));

        let ticks = (PI / (p.omega_spin * 0.05)).ceil() as usize;
        for _ in 0..ticks {
            run_once(&mut s, &row(4.0, f64::NAN, f64::NAN, f64::NAN), &none);
        }
        assert_eq!(s.mode, Mode::Cruise);
    }

    #[test]
    fn neighbor_classification() {
        let me = Pose2::new(0.0, 0.0, 0.0);
        let obs = |pos, d| PeerObservation { id: 1, position: pos, d_uwb: d, timestamp: 0.0 };
        let view = classify_neighbors(&me, &[obs((1.0, 0.0), 1.0)], 0.0, 5.0);
        assert_eq!(view.peers[0].area, Area::Front);
        assert!(view.frontal_within(1.2));
        let view = classify_neighbors(&me, &[obs((-1.0, 0.0), 0.5)], 0.0, 5.0);
        assert_eq!(view.peers[0].area, Area::Back);
        assert!(!view.frontal_within(1.2));
        assert!(classify_neighbors(&me, &[], 0.0, 5.0).peers.is_empty());
        assert!(classify_neighbors(&me, &[obs((1.0, 0.0), 1.0)], 10.0, 5.0).peers.is_empty());
        // Heading matters: facing +y, a peer at +y is in front.
        let facing = Pose2::new(0.0, 0.0, PI / 2.0);
        assert_eq!(classify_neighbors(&facing, &[obs((0.0, 2.0), 2.0)], 0.0, 5.0).peers[0].area, Area::Front);
    }

    fn arb_depth() -> impl Strategy<Value = Option<f64>> {
        prop_oneof![Just(None), (1.0..4000.0f64).prop_map(Some)]
    }

    fn arb_row() -> impl Strategy<Value = DepthRow> {
        prop::collection::vec(arb_depth(), 32).prop_map(|v| {
            let mut r = [[None; COLUMNS]; 4];
            for (k, d) in v.into_iter().enumerate() {
                r[k / COLUMNS][k % COLUMNS] = d;
            }
            r
        })
    }

    proptest! {
        #[test]
        fn commands_are_bounded(rows in prop::collection::vec(arb_row(), 1..40), peer in prop::option::of((-3.0..3.0f64, -3.0..3.0f64, 0.1..4.0f64)), seed in 0u64..100) {
            let p = ExploreParams::default();
            let rig = SensorRig::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = ExploreState::new();
            let view = match peer {
                Some((x, y, d)) => NeighborView { peers: vec![Neighbor { id: 1, d_uwb: d, local: (x, y), area: area_of(y.atan2(x)) }] },
                None => NeighborView::default(),
            };
            for r in &rows {
                let mode = s.mode;
                let out = s.step(&ExploreInput { depths: r, neighbors: &view, dt: 0.05, hold_spin: false }, &rig, &p, &mut rng);
                prop_assert!(out.command.is_finite());
                prop_assert!(out.command.v_x.abs() <= p.v_max && out.command.v_y.abs() <= p.v_max);
                if mode == Mode::Cruise && s.mode == Mode::Cruise {
                    prop_assert!(out.command.v_x >= p.v_min && out.command.v_x <= p.v_max);
                }
                prop_assert!(s.spin_accumulated >= 0.0 && s.spin_accumulated < TAU);
            }
        }

        #[test]
        fn hysteresis_band_never_toggles(ds in prop::collection::vec(0.0..1.0f64, 1..60)) {
            let p = ExploreParams::default();
            let mut s = ExploreState { mode: Mode::Spinning, ..Default::default() };
            for f in ds {
                let d = p.d_s + 1e-6 + f * (p.delta_d - 2e-6);
                run_once(&mut s, &row(d, f64::NAN, f64::NAN, f64::NAN), &NeighborView::default());
                prop_assert_eq!(s.mode, Mode::Spinning);
            }
            let mut s = ExploreState::new();
            for f in 0..20 {
                let d = p.d_s + 1e-6 + (f as f64 / 20.0) * (p.delta_d - 2e-6);
                run_once(&mut s, &row(d, f64::NAN, f64::NAN, f64::NAN), &NeighborView::default());
                prop_assert_eq!(s.mode, Mode::Cruise);
            }
        }

        #[test]
        fn deterministic_for_seed(rows in prop::collection::vec(arb_row(), 1..20), seed in 0u64..1000) {
            let run = || {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut s = ExploreState::new();
                rows.iter().map(|r| s.step(&ExploreInput { depths: r, neighbors: &NeighborView::default(), dt: 0.05, hold_spin: false }, &SensorRig::default(), &ExploreParams::default(), &mut rng).command).collect::<Vec<_>>()
            };
            prop_assert_eq!(run(), run());
        }
    }
}
