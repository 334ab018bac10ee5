//! Depth frames, their reduction and projection, and scan (map tile) assembly.
//!
//! A rig carries four 8x8 time-of-flight sensors facing front, back, left and
//! right. Each 8x8 matrix is reduced to one row by taking the median of every
//! column, giving 32 planar ranges per time step. Twenty consecutive reduced
//! frames recorded while the robot spins form a scan of at most 640 points,
//! stored relative to the pose where acquisition started.
//!
//! Wire layout of a frame (little-endian):
//!
//! | field      | format            | 2D    | 3D     |
//! |------------|-------------------|-------|--------|
//! | pose id    | int32             | 4 B   | 4 B    |
//! | timestamp  | int32 (ms)        | 4 B   | 4 B    |
//! | pose       | 3 x float32       | 12 B  | 12 B   |
//! | depth      | int16 mm, 0 = invalid | 64 B (4x8) | 512 B (4x64) |
//!
//! Depths are kept as `f64` millimetres in memory and rounded to whole
//! millimetres on the wire.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_angle, Pose2};
use crate::pose_graph::NodeId;
use crate::DroneId;

pub const SENSORS: usize = 4;
pub const COLUMNS: usize = 8;
pub const ROWS: usize = 8;
pub const FRAME_2D_BYTES: usize = 84;
pub const FRAME_3D_BYTES: usize = 532;
pub const FRAMES_PER_SCAN: usize = 20;
pub const MAX_SCAN_POINTS: usize = FRAMES_PER_SCAN * SENSORS * COLUMNS;
const HEADER_BYTES: usize = 20;

/// Sensor order used everywhere: front, back, left, right.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sensor {
    Front = 0,
    Back = 1,
    Left = 2,
    Right = 3,
}

/// One planar range per sensor column, in millimetres. `None` is invalid.
pub type DepthRow = [[Option<f64>; COLUMNS]; SENSORS];
/// One sensor's full 8x8 matrix, indexed `[row][column]`.
pub type SensorMatrix = [[Option<f64>; COLUMNS]; ROWS];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorRig {
    /// Mounting yaw per sensor in body frame, radians.
    pub yaws: [f64; SENSORS],
    /// Horizontal field of view per sensor, radians.
    pub fov: f64,
    /// Vertical field of view per sensor, radians.
    pub vertical_fov: f64,
    /// Maximum range, metres.
    pub max_range: f64,
    /// Columns with fewer valid pixels than this reduce to invalid.
    pub min_valid_pixels: usize,
}

impl Default for SensorRig {
    fn default() -> Self {
        SensorRig {
            yaws: [0.0, PI, FRAC_PI_2, -FRAC_PI_2],
            fov: 45f64.to_radians(),
            vertical_fov: 45f64.to_radians(),
            max_range: 4.0,
            min_valid_pixels: 3,
        }
    }
}

impl SensorRig {
    /// Column bearing offset inside the sensor's field of view, columns
    /// uniformly spaced at `(k + 0.5) / 8 * fov - fov / 2`.
    pub fn column_offset(&self, column: usize) -> f64 {
        (column as f64 + 0.5) / COLUMNS as f64 * self.fov - self.fov / 2.0
    }

    /// Body-frame bearing of a sensor column.
    pub fn bearing(&self, sensor: usize, column: usize) -> f64 {
        wrap_angle(self.yaws[sensor] + self.column_offset(column))
    }

    /// Elevation of a matrix row; row 0 looks highest.
    pub fn row_elevation(&self, row: usize) -> f64 {
        self.vertical_fov / 2.0 - (row as f64 + 0.5) / ROWS as f64 * self.vertical_fov
    }

    pub fn cumulative_fov(&self) -> f64 {
        self.fov * SENSORS as f64
    }

    pub fn max_range_mm(&self) -> f64 {
        self.max_range * 1000.0
    }

    pub fn is_valid_depth(&self, mm: f64) -> bool {
        mm.is_finite() && mm > 0.0 && mm <= self.max_range_mm()
    }
}

/// Median of each column's valid pixels; even counts take the lower median.
pub fn reduce_matrix_frame(matrix: &SensorMatrix, rig: &SensorRig) -> [Option<f64>; COLUMNS] {
    let mut out = [None; COLUMNS];
    let mut column = Vec::with_capacity(ROWS);
    for (c, slot) in out.iter_mut().enumerate() {
        column.clear();
        column.extend(
            matrix
                .iter()
                .filter_map(|row| row[c])
                .filter(|v| rig.is_valid_depth(*v)),
        );
        if column.len() < rig.min_valid_pixels.max(1) {
            continue;
        }
        column.sort_by(|a, b| a.total_cmp(b));
        *slot = Some(column[(column.len() - 1) / 2]);
    }
    out
}

/// Reduces all four sensor matrices of a time step.
pub fn reduce_all(matrices: &[SensorMatrix; SENSORS], rig: &SensorRig) -> DepthRow {
    let mut row = [[None; COLUMNS]; SENSORS];
    for (s, m) in matrices.iter().enumerate() {
        row[s] = reduce_matrix_frame(m, rig);
    }
    row
}

/// Reduced planar depth frame tied to a graph node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthFrame {
    pub pose_id: NodeId,
    pub timestamp_ms: u32,
    pub pose: Pose2,
    pub depths: DepthRow,
}

impl DepthFrame {
    pub fn valid_count(&self) -> usize {
        self.depths.iter().flatten().filter(|d| d.is_some()).count()
    }

    pub fn sensor_min(&self, sensor: Sensor) -> Option<f64> {
        self.depths[sensor as usize]
            .iter()
            .flatten()
            .copied()
            .reduce(f64::min)
    }
}

/// Full-resolution frame kept for 3D mapping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixFrame {
    pub pose_id: NodeId,
    pub timestamp_ms: u32,
    pub pose: Pose2,
    pub matrices: [SensorMatrix; SENSORS],
}

/// Projects a row of ranges from `pose` into world points.
pub fn project_depths(pose: &Pose2, depths: &DepthRow, rig: &SensorRig) -> Vec<(f64, f64)> {
    let mut pts = Vec::with_capacity(SENSORS * COLUMNS);
    for (s, sensor) in depths.iter().enumerate() {
        for (c, d) in sensor.iter().enumerate() {
            let Some(mm) = d else { continue };
            if !rig.is_valid_depth(*mm) {
                continue;
            }
            let r = mm / 1000.0;
            let b = rig.bearing(s, c);
            pts.push(pose.apply((r * b.cos(), r * b.sin())));
        }
    }
    pts
}

pub fn project_frame(frame: &DepthFrame, rig: &SensorRig) -> Vec<(f64, f64)> {
    project_depths(&frame.pose, &frame.depths, rig)
}

/// Projects every pixel of a full-resolution frame into 3D world points,
/// with the sensors mounted at `altitude`.
pub fn project_frame_3d(frame: &MatrixFrame, altitude: f64, rig: &SensorRig) -> Vec<[f64; 3]> {
    let mut pts = Vec::new();
    for (s, m) in frame.matrices.iter().enumerate() {
        for (r, row) in m.iter().enumerate() {
            let elev = rig.row_elevation(r);
            for (c, d) in row.iter().enumerate() {
                let Some(mm) = d else { continue };
                if !rig.is_valid_depth(*mm) {
                    continue;
                }
                let range = mm / 1000.0;
                let horiz = range * elev.cos();
                let b = rig.bearing(s, c);
                let (x, y) = frame.pose.apply((horiz * b.cos(), horiz * b.sin()));
                pts.push([x, y, altitude + range * elev.sin()]);
            }
        }
    }
    pts
}

#[derive(Debug, Error, PartialEq)]
pub enum ScanError {
    #[error("a scan needs exactly {FRAMES_PER_SCAN} frames, got {0}")]
    FrameCount(usize),
    #[error("heading span {span_deg:.1} deg is below the required {min_deg:.1} deg")]
    InsufficientRotation { span_deg: f64, min_deg: f64 },
}

/// Map tile built from consecutive frames; points are relative to `anchor_pose`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scan {
    pub scan_id: u32,
    pub owner: DroneId,
    pub anchor_pose_id: NodeId,
    pub anchor_pose: Pose2,
    pub points: Vec<(f64, f64)>,
}

impl Scan {
    pub fn world_points(&self) -> Vec<(f64, f64)> {
        self.points_under(&self.anchor_pose)
    }

    /// Points placed under an arbitrary anchor estimate.
    pub fn points_under(&self, anchor: &Pose2) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| anchor.apply(*p)).collect()
    }

    /// Applies a rigid transform to the stored (anchor-frame) points.
    pub fn transformed(&self, t: &Pose2) -> Scan {
        Scan {
            points: self.points.iter().map(|p| t.apply(*p)).collect(),
            ..self.clone()
        }
    }
}

/// Total heading swept by a frame sequence, following the shortest turn
/// between consecutive frames.
pub fn heading_span(frames: &[DepthFrame]) -> f64 {
    let mut acc = 0.0f64;
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for w in frames.windows(2) {
        acc += wrap_angle(w[1].pose.psi - w[0].pose.psi);
        lo = lo.min(acc);
        hi = hi.max(acc);
    }
    hi - lo
}

pub const MIN_SCAN_ROTATION: f64 = PI / 4.0;

/// Assembles a scan from exactly twenty frames recorded during a spin of at
/// least 45 degrees. Points are re-expressed relative to `anchor`.
pub fn build_scan(
    scan_id: u32,
    owner: DroneId,
    frames: &[DepthFrame],
    anchor_pose_id: NodeId,
    anchor: Pose2,
    rig: &SensorRig,
) -> Result<Scan, ScanError> {
    if frames.len() != FRAMES_PER_SCAN {
        return Err(ScanError::FrameCount(frames.len()));
    }
    let span = heading_span(frames);
    // Small slack so a spin sampled exactly at 45 degrees is not rejected by rounding.
    if span + 1e-9 < MIN_SCAN_ROTATION {
        return Err(ScanError::InsufficientRotation {
            span_deg: span.to_degrees(),
            min_deg: MIN_SCAN_ROTATION.to_degrees(),
        });
    }
    let to_anchor = anchor.inverse();
    let points = frames
        .iter()
        .flat_map(|f| project_frame(f, rig))
        .map(|p| to_anchor.apply(p))
        .collect();
    Ok(Scan {
        scan_id,
        owner,
        anchor_pose_id,
        anchor_pose: anchor,
        points,
    })
}

#[derive(Debug, Error, PartialEq)]
pub enum FrameDecodeError {
    #[error("frame buffer holds {got} bytes, expected {expected}")]
    Length { expected: usize, got: usize },
}

fn encode_depth(mm: Option<f64>) -> i16 {
    match mm {
        Some(v) if v.is_finite() && v > 0.0 => (v.round().clamp(1.0, i16::MAX as f64)) as i16,
        _ => 0,
    }
}

fn decode_depth(raw: i16) -> Option<f64> {
    (raw > 0).then_some(raw as f64)
}

fn write_header(out: &mut Vec<u8>, pose_id: NodeId, timestamp_ms: u32, pose: &Pose2) {
    out.extend_from_slice(&(pose_id as i32).to_le_bytes());
    out.extend_from_slice(&(timestamp_ms as i32).to_le_bytes());
    for v in [pose.x, pose.y, pose.psi] {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn read_header(buf: &[u8]) -> (NodeId, u32, Pose2) {
    let i32_at = |o: usize| i32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
    let f32_at = |o: usize| f32::from_le_bytes(buf[o..o + 4].try_into().unwrap()) as f64;
    (
        i32_at(0) as NodeId,
        i32_at(4) as u32,
        Pose2 {
            x: f32_at(8),
            y: f32_at(12),
            psi: f32_at(16),
        },
    )
}

fn i16_at(buf: &[u8], o: usize) -> i16 {
    i16::from_le_bytes([buf[o], buf[o + 1]])
}

/// Encodes a reduced frame into its 84-byte wire form.
pub fn serialize_frame(frame: &DepthFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(FRAME_2D_BYTES);
    write_header(&mut out, frame.pose_id, frame.timestamp_ms, &frame.pose);
    for d in frame.depths.iter().flatten() {
        out.extend_from_slice(&encode_depth(*d).to_le_bytes());
    }
    debug_assert_eq!(out.len(), FRAME_2D_BYTES);
    out
}

pub fn deserialize_frame(buf: &[u8]) -> Result<DepthFrame, FrameDecodeError> {
    if buf.len() != FRAME_2D_BYTES {
        return Err(FrameDecodeError::Length {
            expected: FRAME_2D_BYTES,
            got: buf.len(),
        });
    }
    let (pose_id, timestamp_ms, pose) = read_header(buf);
    let mut depths = [[None; COLUMNS]; SENSORS];
    for (k, d) in depths.iter_mut().flatten().enumerate() {
        *d = decode_depth(i16_at(buf, HEADER_BYTES + 2 * k));
    }
    Ok(DepthFrame {
        pose_id,
        timestamp_ms,
        pose,
        depths,
    })
}

/// Encodes a full-resolution frame into its 532-byte wire form.
pub fn serialize_matrix_frame(frame: &MatrixFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(FRAME_3D_BYTES);
    write_header(&mut out, frame.pose_id, frame.timestamp_ms, &frame.pose);
    for d in frame.matrices.iter().flatten().flatten() {
        out.extend_from_slice(&encode_depth(*d).to_le_bytes());
    }
    debug_assert_eq!(out.len(), FRAME_3D_BYTES);
    out
}

pub fn deserialize_matrix_frame(buf: &[u8]) -> Result<MatrixFrame, FrameDecodeError> {
    if buf.len() != FRAME_3D_BYTES {
        return Err(FrameDecodeError::Length {
            expected: FRAME_3D_BYTES,
            got: buf.len(),
        });
    }
    let (pose_id, timestamp_ms, pose) = read_header(buf);
    let mut matrices = [[[None; COLUMNS]; ROWS]; SENSORS];
    for (k, d) in matrices.iter_mut().flatten().flatten().enumerate() {
        *d = decode_depth(i16_at(buf, HEADER_BYTES + 2 * k));
    }
    Ok(MatrixFrame {
        pose_id,
        timestamp_ms,
        pose,
        matrices,
    })
}

/// A scan on the wire: its frames' encodings back to back.
pub fn encode_scan_frames(frames: &[DepthFrame]) -> Vec<u8> {
    frames.iter().flat_map(serialize_frame).collect()
}

pub fn decode_scan_frames(buf: &[u8]) -> Result<Vec<DepthFrame>, FrameDecodeError> {
    if buf.len() % FRAME_2D_BYTES != 0 {
        return Err(FrameDecodeError::Length {
            expected: (buf.len() / FRAME_2D_BYTES + 1) * FRAME_2D_BYTES,
            got: buf.len(),
        });
    }
    buf.chunks(FRAME_2D_BYTES).map(deserialize_frame).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rig() -> SensorRig {
        SensorRig::default()
    }

    fn frame_with(pose: Pose2, depth: Option<f64>) -> DepthFrame {
        DepthFrame {
            pose_id: 0,
            timestamp_ms: 0,
            pose,
            depths: [[depth; COLUMNS]; SENSORS],
        }
    }

    #[test]
    fn median_reduction() {
        let rig = rig();
        let m: SensorMatrix = [[Some(1234.0); COLUMNS]; ROWS];
        assert_eq!(reduce_matrix_frame(&m, &rig), [Some(1234.0); COLUMNS]);

        let col = [980.0, 990.0, 995.0, 1000.0, 1005.0, 1010.0, 1020.0];
        let mut m: SensorMatrix = [[None; COLUMNS]; ROWS];
        for (r, v) in col.iter().enumerate() {
            m[r][2] = Some(*v);
        }
        let out = reduce_matrix_frame(&m, &rig);
        assert_eq!(out[2], Some(1000.0));
        assert_eq!(out[0], None);

        // Even count: lower median.
        let mut m: SensorMatrix = [[None; COLUMNS]; ROWS];
        for (r, v) in [10.0, 20.0, 30.0, 40.0].iter().enumerate() {
            m[r][0] = Some(*v);
        }
        assert_eq!(reduce_matrix_frame(&m, &rig)[0], Some(20.0));

        // Below min_valid_pixels.
        let mut m: SensorMatrix = [[None; COLUMNS]; ROWS];
        m[0][0] = Some(500.0);
        m[1][0] = Some(510.0);
        assert_eq!(reduce_matrix_frame(&m, &rig)[0], None);
    }

    #[test]
    fn column_bearings_cover_fov() {
        let rig = rig();
        assert!((rig.column_offset(0) + 22.5f64.to_radians() * 7.0 / 8.0).abs() < 1e-12);
        assert!((rig.column_offset(7) - 22.5f64.to_radians() * 7.0 / 8.0).abs() < 1e-12);
        assert!((rig.cumulative_fov() - PI).abs() < 1e-12);
    }

    #[test]
    fn projection_of_front_column() {
        let rig = rig();
        let mut f = frame_with(Pose2::IDENTITY, None);
        f.depths[0][4] = Some(1000.0);
        let pts = project_frame(&f, &rig);
        assert_eq!(pts.len(), 1);
        let b = 22.5f64.to_radians() / 8.0;
        assert!((pts[0].0 - b.cos()).abs() < 1e-12);
        assert!((pts[0].1 - b.sin()).abs() < 1e-12);

        f.pose = Pose2::new(0.0, 0.0, FRAC_PI_2);
        let rotated = project_frame(&f, &rig);
        assert!((rotated[0].0 + pts[0].1).abs() < 1e-12);
        assert!((rotated[0].1 - pts[0].0).abs() < 1e-12);

        assert!(project_frame(&frame_with(Pose2::IDENTITY, None), &rig).is_empty());
    }

    fn spin_frames(total: f64, depth: Option<f64>) -> Vec<DepthFrame> {
        (0..FRAMES_PER_SCAN)
            .map(|k| {
                let psi = total * k as f64 / (FRAMES_PER_SCAN - 1) as f64;
                let mut f = frame_with(Pose2::new(1.0, 2.0, psi), depth);
                f.pose_id = k as u32;
                f
            })
            .collect()
    }

    #[test]
    fn scan_assembly() {
        let rig = rig();
        let frames = spin_frames(60f64.to_radians(), Some(1500.0));
        let scan = build_scan(0, 1, &frames, 0, frames[0].pose, &rig).unwrap();
        assert_eq!(scan.points.len(), MAX_SCAN_POINTS);
        assert_eq!(MAX_SCAN_POINTS, 640);

        let short = spin_frames(30f64.to_radians(), Some(1500.0));
        assert!(matches!(
            build_scan(0, 1, &short, 0, short[0].pose, &rig),
            Err(ScanError::InsufficientRotation { .. })
        ));
        assert_eq!(
            build_scan(0, 1, &frames[..19], 0, frames[0].pose, &rig),
            Err(ScanError::FrameCount(19))
        );

        let t = Pose2::new(0.3, -0.7, 1.1);
        let back = scan.transformed(&t).transformed(&t.inverse());
        for (a, b) in back.points.iter().zip(&scan.points) {
            assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);
        }
    }

    #[test]
    fn wire_sizes_and_truncation() {
        let f = frame_with(Pose2::new(1.0, 2.0, 0.5), Some(1000.0));
        assert_eq!(serialize_frame(&f).len(), 84);
        let m = MatrixFrame {
            pose_id: 3,
            timestamp_ms: 7,
            pose: Pose2::IDENTITY,
            matrices: [[[Some(900.0); COLUMNS]; ROWS]; SENSORS],
        };
        assert_eq!(serialize_matrix_frame(&m).len(), 532);
        assert_eq!(deserialize_matrix_frame(&serialize_matrix_frame(&m)).unwrap(), m);
        assert!(matches!(
            deserialize_frame(&serialize_frame(&f)[..80]),
            Err(FrameDecodeError::Length { expected: 84, got: 80 })
        ));
    }

    #[test]
    fn projection_3d() {
        let rig = rig();
        let mut matrices = [[[None; COLUMNS]; ROWS]; SENSORS];
        matrices[0][4][4] = Some(1000.0);
        let frame = MatrixFrame {
            pose_id: 0,
            timestamp_ms: 0,
            pose: Pose2::IDENTITY,
            matrices,
        };
        let pts = project_frame_3d(&frame, 0.5, &rig);
        assert_eq!(pts.len(), 1);
        let (b, e) = (rig.column_offset(4), rig.row_elevation(4));
        assert!((pts[0][0] - e.cos() * b.cos()).abs() < 1e-12);
        assert!((pts[0][1] - e.cos() * b.sin()).abs() < 1e-12);
        assert!((pts[0][2] - (0.5 + e.sin())).abs() < 1e-12);
        assert!((pts[0][0] - 1.0).abs() < 5e-3 && (pts[0][2] - 0.5).abs() < 0.05);

        let empty = MatrixFrame {
            matrices: [[[None; COLUMNS]; ROWS]; SENSORS],
            ..frame
        };
        assert!(project_frame_3d(&empty, 0.5, &rig).is_empty());
    }

    fn arb_depth() -> impl Strategy<Value = Option<f64>> {
        prop_oneof![Just(None), (1u32..=4000).prop_map(|v| Some(v as f64))]
    }

    proptest! {
        #[test]
        fn frame_round_trip(
            id in 0u32..1_000_000, ts in 0u32..2_000_000_000,
            x in -100.0f32..100.0, y in -100.0f32..100.0, psi in -3.14f32..3.14,
            depths in prop::collection::vec(arb_depth(), 32)
        ) {
            let mut row = [[None; COLUMNS]; SENSORS];
            for (k, d) in depths.iter().enumerate() {
                row[k / COLUMNS][k % COLUMNS] = *d;
            }
            let f = DepthFrame { pose_id: id, timestamp_ms: ts, pose: Pose2 { x: x as f64, y: y as f64, psi: psi as f64 }, depths: row };
            let bytes = serialize_frame(&f);
            prop_assert_eq!(bytes.len(), 84);
            prop_assert_eq!(deserialize_frame(&bytes).unwrap(), f);
        }

        #[test]
        fn median_is_permutation_invariant(mut col in prop::collection::vec(prop_oneof![Just(None), (1.0..4000.0f64).prop_map(Some)], 8), rot in 0usize..8) {
            let rig = SensorRig::default();
            let mut a: SensorMatrix = [[None; COLUMNS]; ROWS];
            for (r, v) in col.iter().enumerate() { a[r][0] = *v; }
            col.rotate_left(rot);
            col.reverse();
            let mut b: SensorMatrix = [[None; COLUMNS]; ROWS];
            for (r, v) in col.iter().enumerate() { b[r][0] = *v; }
            prop_assert_eq!(reduce_matrix_frame(&a, &rig)[0], reduce_matrix_frame(&b, &rig)[0]);
        }

        #[test]
        fn projection_is_rigid(t in (-5.0..5.0f64, -5.0..5.0f64, -3.0..3.0f64), p in (-5.0..5.0f64, -5.0..5.0f64, -3.0..3.0f64), d in 100.0..4000.0f64) {
            let rig = SensorRig::default();
            let t = Pose2::new(t.0, t.1, t.2);
            let p = Pose2::new(p.0, p.1, p.2);
            let base = project_frame(&frame_with(p, Some(d)), &rig);
            let moved = project_frame(&frame_with(t.compose(&p), Some(d)), &rig);
            prop_assert!(base.len() == 32 && moved.len() == 32);
            for (a, b) in base.iter().zip(&moved) {
                let ta = t.apply(*a);
                prop_assert!((ta.0 - b.0).abs() < 1e-9 && (ta.1 - b.1).abs() < 1e-9);
            }
        }
    }
}
