//! Token-based swarm protocol: ranging, scan exchange, cascaded PGO and
//! pose-update distribution, plus the analytic loop-time and bandwidth models.
//!
//! One drone transmits at a time. The holder runs, in order:
//!
//! 1. ranging with every higher id,
//! 2. matching of buffered external scans,
//! 3. broadcast of its newest own scan to higher ids,
//! 4. pose graph optimization when a cascade reached it,
//! 5. distribution of the updated scan poses to higher ids,
//!
//! and then passes the token to the next responsive drone.

mod engine;

pub use engine::{Engine, EngineStats, NullHost, SwarmHost};

use serde::{Deserialize, Serialize};

use crate::geometry::Pose2;
use crate::DroneId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PgoTrigger {
    pub loop_closures: usize,
    /// Seconds.
    pub period: f64,
}

impl Default for PgoTrigger {
    fn default() -> Self {
        PgoTrigger {
            loop_closures: 3,
            period: 60.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub n_drones: usize,
    /// One double-sided two-way ranging exchange, seconds.
    pub t_range: f64,
    pub retry_limit: u32,
    pub listen_window_max: f64,
    /// Drone i reclaims after `reclaim_base * (i + 1)` seconds without the token.
    pub reclaim_base: f64,
    pub pgo_trigger: PgoTrigger,
    /// Successful token hand-over, seconds.
    pub t_token_overhead: f64,
    /// One scan transmission, seconds.
    pub t_scan_tx: f64,
    /// Small data message (pose update, PGO notify), seconds.
    pub t_msg: f64,
    /// Wait for an acknowledgement before counting a send as failed, seconds.
    pub ack_timeout: f64,
    pub inbox_cap: usize,
    /// Standard deviation of UWB range noise, metres.
    pub uwb_sigma: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            n_drones: 3,
            t_range: 0.004,
            retry_limit: 3,
            listen_window_max: 0.020,
            reclaim_base: 2.0,
            pgo_trigger: PgoTrigger::default(),
            t_token_overhead: 0.002,
            t_scan_tx: 0.010,
            t_msg: 0.001,
            ack_timeout: 0.010,
            inbox_cap: 8,
            uwb_sigma: 0.05,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_drones == 0 || self.n_drones > u16::MAX as usize {
            return Err("protocol.n_drones must be in 1..=65535".into());
        }
        if self.retry_limit == 0 {
            return Err("protocol.retry_limit must be at least 1".into());
        }
        if self.inbox_cap == 0 {
            return Err("protocol.inbox_cap must be at least 1".into());
        }
        if self.pgo_trigger.loop_closures == 0 {
            return Err("protocol.pgo_trigger.loop_closures must be at least 1".into());
        }
        let positive = [
            ("t_range", self.t_range),
            ("listen_window_max", self.listen_window_max),
            ("reclaim_base", self.reclaim_base),
            ("pgo_trigger.period", self.pgo_trigger.period),
            ("t_token_overhead", self.t_token_overhead),
            ("t_scan_tx", self.t_scan_tx),
            ("t_msg", self.t_msg),
            ("ack_timeout", self.ack_timeout),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("protocol.{name} must be positive"));
            }
        }
        if !(self.uwb_sigma.is_finite() && self.uwb_sigma >= 0.0) {
            return Err("protocol.uwb_sigma must be non-negative".into());
        }
        Ok(())
    }

    pub fn reclaim_timeout(&self, id: DroneId) -> f64 {
        self.reclaim_base * (id as f64 + 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangingRecord {
    pub peer: DroneId,
    pub distance: f64,
    pub peer_position: Pose2,
    pub timestamp: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    TokenPass,
    RangeRequest,
    RangeReply,
    ScanBroadcast,
    PoseUpdate,
    PgoNotify,
    Ack,
}

impl MessageKind {
    pub fn name(self) -> &'static str {
        match self {
            MessageKind::TokenPass => "TokenPass",
            MessageKind::RangeRequest => "RangeRequest",
            MessageKind::RangeReply => "RangeReply",
            MessageKind::ScanBroadcast => "ScanBroadcast",
            MessageKind::PoseUpdate => "PoseUpdate",
            MessageKind::PgoNotify => "PgoNotify",
            MessageKind::Ack => "Ack",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "TokenPass" => MessageKind::TokenPass,
            "RangeRequest" => MessageKind::RangeRequest,
            "RangeReply" => MessageKind::RangeReply,
            "ScanBroadcast" => MessageKind::ScanBroadcast,
            "PoseUpdate" => MessageKind::PoseUpdate,
            "PgoNotify" => MessageKind::PgoNotify,
            "Ack" => MessageKind::Ack,
            _ => return None,
        })
    }
}

/// Wire sizes of the fixed-size messages, bytes.
pub const TOKEN_PASS_BYTES: usize = 4;
pub const RANGE_MSG_BYTES: usize = 24;
pub const ACK_BYTES: usize = 4;
pub const PGO_NOTIFY_BYTES: usize = 4;
pub const POSE_UPDATE_BYTES_PER_POSE: usize = 12;
/// Scan id prefix in front of the frames of a scan broadcast.
pub const SCAN_HEADER_BYTES: usize = 4;

/// Encodes pose values as consecutive little-endian `f32` triples.
pub fn encode_pose_update(poses: &[Pose2]) -> Vec<u8> {
    let mut out = Vec::with_capacity(poses.len() * POSE_UPDATE_BYTES_PER_POSE);
    for p in poses {
        for v in [p.x, p.y, p.psi] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_pose_update(buf: &[u8]) -> Option<Vec<Pose2>> {
    if buf.len() % POSE_UPDATE_BYTES_PER_POSE != 0 {
        return None;
    }
    let f = |c: &[u8]| f32::from_le_bytes(c.try_into().unwrap()) as f64;
    Some(
        buf.chunks(POSE_UPDATE_BYTES_PER_POSE)
            .map(|c| Pose2 {
                x: f(&c[0..4]),
                y: f(&c[4..8]),
                psi: f(&c[8..12]),
            })
            .collect(),
    )
}

/// One line of the message trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub time_us: u64,
    pub kind: MessageKind,
    pub src: DroneId,
    /// `None` for broadcasts.
    pub dst: Option<DroneId>,
    pub size: usize,
    pub seq: u64,
    pub delivered: bool,
}

impl TraceEntry {
    /// `<time_us> <kind> <src> <dst|*> <size> <seq> <ok|lost>`
    pub fn to_line(&self) -> String {
        let dst = self.dst.map_or("*".to_string(), |d| d.to_string());
        format!(
            "{} {} {} {} {} {} {}",
            self.time_us,
            self.kind.name(),
            self.src,
            dst,
            self.size,
            self.seq,
            if self.delivered { "ok" } else { "lost" }
        )
    }

    pub fn parse_line(line: &str) -> Option<TraceEntry> {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 7 {
            return None;
        }
        Some(TraceEntry {
            time_us: f[0].parse().ok()?,
            kind: MessageKind::parse(f[1])?,
            src: f[2].parse().ok()?,
            dst: if f[3] == "*" { None } else { Some(f[3].parse().ok()?) },
            size: f[4].parse().ok()?,
            seq: f[5].parse().ok()?,
            delivered: match f[6] {
                "ok" => true,
                "lost" => false,
                _ => return None,
            },
        })
    }
}

pub const TRACE_HEADER: &str = "# time_us kind src dst size seq status";

pub fn format_trace(entries: &[TraceEntry]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for e in entries {
        out.push_str(&e.to_line());
        out.push('\n');
    }
    out
}

pub fn ranging_exchanges(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Expected time for the token to visit every drone once, seconds. Each
/// turn pays the hand-over plus on average half a listen window.
pub fn predict_loop_time(n: usize, cfg: &ProtocolConfig, scan_fraction: f64) -> f64 {
    let n_f = n as f64;
    ranging_exchanges(n) as f64 * cfg.t_range
        + n_f * (cfg.t_token_overhead + cfg.listen_window_max / 2.0)
        + scan_fraction * n_f * cfg.t_scan_tx
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BandwidthParams {
    /// Bytes exchanged per ranging (request plus reply).
    pub ranging_bytes: f64,
    /// Ranging rounds per second between every pair.
    pub position_rate_hz: f64,
}

impl Default for BandwidthParams {
    fn default() -> Self {
        BandwidthParams {
            ranging_bytes: (2 * RANGE_MSG_BYTES) as f64,
            position_rate_hz: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandwidthEstimate {
    /// Bytes per second.
    pub swarm_total: f64,
    pub drone0: f64,
    pub scan_component: f64,
}

/// Pairwise ranging traffic plus every drone's scans. Drone 0 takes part
/// in ranging with all others and, as the lowest id, sends its scans to all
/// of them.
pub fn predict_bandwidth(n: usize, scans_per_min: f64, scan_size: f64, p: &BandwidthParams) -> BandwidthEstimate {
    if n < 2 {
        return BandwidthEstimate {
            swarm_total: 0.0,
            drone0: 0.0,
            scan_component: 0.0,
        };
    }
    let n_f = n as f64;
    let rate = scans_per_min / 60.0;
    let ranging = ranging_exchanges(n) as f64 * p.ranging_bytes * p.position_rate_hz;
    let scans = n_f * rate * scan_size;
    BandwidthEstimate {
        swarm_total: ranging + scans,
        drone0: (n_f - 1.0) * p.ranging_bytes * p.position_rate_hz + (n_f - 1.0) * rate * scan_size,
        scan_component: scans,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadioLink {
    pub name: &'static str,
    pub bits_per_second: f64,
}

pub const RADIOS: [RadioLink; 3] = [
    RadioLink {
        name: "BLE",
        bits_per_second: 1e6,
    },
    RadioLink {
        name: "UWB",
        bits_per_second: 6.8e6,
    },
    RadioLink {
        name: "WiFi",
        bits_per_second: 25e6,
    },
];

/// Largest swarm whose total traffic fits in the link capacity.
pub fn supported_swarm_size(bits_per_second: f64, scans_per_min: f64, scan_size: f64, p: &BandwidthParams) -> usize {
    let fits = |n| predict_bandwidth(n, scans_per_min, scan_size, p).swarm_total * 8.0 <= bits_per_second;
    if !fits(2) {
        return 1;
    }
    let (mut lo, mut hi) = (2usize, 4usize);
    while fits(hi) {
        lo = hi;
        hi *= 2;
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn loop_time_model() {
        let cfg = ProtocolConfig::default();
        let per_turn = cfg.t_token_overhead + cfg.listen_window_max / 2.0;
        assert!((predict_loop_time(2, &cfg, 0.0) - (0.004 + 2.0 * per_turn)).abs() < 1e-15);
        assert_eq!(ranging_exchanges(200), 19900);
        let d = predict_loop_time(10, &cfg, 0.2) - predict_loop_time(10, &cfg, 0.0);
        assert!((d - 0.2 * 10.0 * cfg.t_scan_tx).abs() < 1e-12);
    }

    #[test]
    fn bandwidth_model() {
        let p = BandwidthParams::default();
        let b = predict_bandwidth(10, 5.0, 2048.0, &p);
        assert!((b.scan_component - 10.0 * 5.0 * 2048.0 / 60.0).abs() < 1e-9);
        assert!((b.scan_component - 1706.67).abs() < 0.01);
        assert_eq!(predict_bandwidth(1, 5.0, 2048.0, &p).swarm_total, 0.0);

        let sizes: Vec<_> = RADIOS
            .iter()
            .map(|r| supported_swarm_size(r.bits_per_second, 5.0, 2048.0, &p))
            .collect();
        assert!(sizes[0] < sizes[1] && sizes[1] < sizes[2], "{sizes:?}");
    }

    #[test]
    fn pose_update_payload() {
        let poses = [Pose2::new(1.0, 2.0, 0.5), Pose2::new(-3.0, 0.25, -1.0)];
        let bytes = encode_pose_update(&poses);
        assert_eq!(bytes.len(), 24);
        assert_eq!(decode_pose_update(&bytes).unwrap(), poses);
        assert!(decode_pose_update(&bytes[..23]).is_none());
    }

    #[test]
    fn trace_line_round_trip() {
        let e = TraceEntry {
            time_us: 1234,
            kind: MessageKind::ScanBroadcast,
            src: 1,
            dst: None,
            size: 1684,
            seq: 9,
            delivered: false,
        };
        assert_eq!(e.to_line(), "1234 ScanBroadcast 1 * 1684 9 lost");
        assert_eq!(TraceEntry::parse_line(&e.to_line()), Some(e));
    }

    proptest! {
        #[test]
        fn models_are_monotone(n in 2usize..500) {
            let cfg = ProtocolConfig::default();
            let p = BandwidthParams::default();
            prop_assert!(predict_loop_time(n + 1, &cfg, 0.2) > predict_loop_time(n, &cfg, 0.2));
            let a = predict_bandwidth(n, 5.0, 2048.0, &p);
            let b = predict_bandwidth(n + 1, 5.0, 2048.0, &p);
            prop_assert!(b.swarm_total > a.swarm_total && b.drone0 > a.drone0);
        }
    }
}
