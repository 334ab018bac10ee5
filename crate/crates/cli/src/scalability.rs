//! Loop time and bandwidth against swarm size: analytic models, with the
//! protocol simulator overlaid for small swarms.

use std::fmt::Write as _;
use std::path::Path;

use cslam::protocol::{
    predict_bandwidth, predict_loop_time, ranging_exchanges, BandwidthParams, Engine, NullHost, ProtocolConfig,
};

use crate::render::{chart, svg_document, Series, PALETTE};
use crate::{create_dir, write, CliError};

#[derive(Clone, Debug)]
pub struct ScalabilityParams {
    pub n_min: usize,
    pub n_max: usize,
    /// Share of turns that carry a scan broadcast.
    pub scan_fraction: f64,
    pub scans_per_min: f64,
    pub scan_bytes: f64,
    /// Largest swarm that is also simulated.
    pub sim_max: usize,
    /// Simulated seconds per swarm size.
    pub sim_seconds: f64,
    pub seed: u64,
    pub protocol: ProtocolConfig,
    pub bandwidth: BandwidthParams,
}

impl Default for ScalabilityParams {
    fn default() -> Self {
        ScalabilityParams {
            n_min: 2,
            n_max: 200,
            scan_fraction: 0.2,
            scans_per_min: 5.0,
            scan_bytes: 1684.0,
            sim_max: 16,
            sim_seconds: 60.0,
            seed: 0,
            protocol: ProtocolConfig::default(),
            bandwidth: BandwidthParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub n: usize,
    pub rangings: usize,
    pub loop_time_model: f64,
    pub loop_time_sim: Option<f64>,
    pub bandwidth_total: f64,
    pub bandwidth_drone0: f64,
    pub bandwidth_scans: f64,
}

fn simulate(n: usize, p: &ScalabilityParams) -> Option<f64> {
    let cfg = ProtocolConfig {
        n_drones: n,
        ..p.protocol.clone()
    };
    let mut e = Engine::new(cfg, 0.0, p.seed);
    let mut host = NullHost::new(p.seed);
    host.scan_probability = p.scan_fraction;
    host.scan_bytes = p.scan_bytes as usize;
    e.run_until(p.sim_seconds, &mut host);
    e.stats.mean_cycle(0, 1.0)
}

pub fn table(p: &ScalabilityParams) -> Result<Vec<Row>, CliError> {
    if !(2 <= p.n_min && p.n_min <= p.n_max && p.n_max <= 1000) {
        return Err(CliError::Invalid("need 2 <= n_min <= n_max <= 1000".into()));
    }
    let simulated: Vec<usize> = (p.n_min..=p.n_max.min(p.sim_max)).collect();
    let sims: Vec<Option<f64>> = std::thread::scope(|s| {
        let handles: Vec<_> = simulated.iter().map(|n| s.spawn(move || simulate(*n, p))).collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread")).collect()
    });
    Ok((p.n_min..=p.n_max)
        .map(|n| {
            let bw = predict_bandwidth(n, p.scans_per_min, p.scan_bytes, &p.bandwidth);
            Row {
                n,
                rangings: ranging_exchanges(n),
                loop_time_model: predict_loop_time(n, &p.protocol, p.scan_fraction),
                loop_time_sim: simulated.iter().position(|m| *m == n).and_then(|k| sims[k]),
                bandwidth_total: bw.swarm_total,
                bandwidth_drone0: bw.drone0,
                bandwidth_scans: bw.scan_component,
            }
        })
        .collect())
}

pub fn to_csv(rows: &[Row]) -> String {
    let mut out = String::from("n,rangings,loop_time_model_s,loop_time_sim_s,bandwidth_total_Bps,bandwidth_drone0_Bps,bandwidth_scans_Bps\n");
    for r in rows {
        let sim = r.loop_time_sim.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.n, r.rangings, r.loop_time_model, sim, r.bandwidth_total, r.bandwidth_drone0, r.bandwidth_scans
        );
    }
    out
}

pub fn to_svg(rows: &[Row]) -> String {
    let n = |r: &Row| r.n as f64;
    let mut body = String::new();
    chart(
        &mut body,
        (0.0, 0.0),
        (640.0, 320.0),
        "Loop time",
        "seconds",
        &[
            Series {
                name: "model".into(),
                color: PALETTE[0],
                points: rows.iter().map(|r| (n(r), r.loop_time_model)).collect(),
                dots: false,
            },
            Series {
                name: "simulated".into(),
                color: PALETTE[1],
                points: rows.iter().filter_map(|r| r.loop_time_sim.map(|v| (n(r), v))).collect(),
                dots: true,
            },
        ],
    );
    chart(
        &mut body,
        (0.0, 320.0),
        (640.0, 320.0),
        "Bandwidth",
        "kB/s",
        &[
            Series {
                name: "swarm total".into(),
                color: PALETTE[0],
                points: rows.iter().map(|r| (n(r), r.bandwidth_total / 1e3)).collect(),
                dots: false,
            },
            Series {
                name: "drone 0".into(),
                color: PALETTE[2],
                points: rows.iter().map(|r| (n(r), r.bandwidth_drone0 / 1e3)).collect(),
                dots: false,
            },
        ],
    );
    svg_document(640.0, 640.0, &body)
}

pub fn cmd_scalability(out: &Path, p: &ScalabilityParams) -> Result<Vec<Row>, CliError> {
    let rows = table(p)?;
    create_dir(out)?;
    write(&out.join("scalability.csv"), &to_csv(&rows))?;
    write(&out.join("scalability.svg"), &to_svg(&rows))?;
    Ok(rows)
}
