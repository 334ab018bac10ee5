use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cslam::sim::{run_scenario, MappingMode, ScenarioConfig};

use cslam_cli::artifacts::write_run;
use cslam_cli::config::{load_config, resolve_world, to_toml, Overrides};
use cslam_cli::replay::cmd_replay;
use cslam_cli::report::cmd_report;
use cslam_cli::scalability::{cmd_scalability, ScalabilityParams};
use cslam_cli::CliError;

#[derive(Parser)]
#[command(name = "cslam", version, about = "Collaborative SLAM swarm simulator")]
struct Cli {
    /// Scenario file (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    /// Print the effective scenario config and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    #[value(name = "2d")]
    TwoD,
    #[value(name = "3d")]
    ThreeD,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its artifacts.
    Run,
    /// Re-run the final optimization of a recorded run.
    Replay {
        /// Directory written by `run`.
        run_dir: PathBuf,
        /// Multiply every information matrix by this factor and compare costs.
        #[arg(long)]
        scale_info: Option<f64>,
    },
    /// Loop time and bandwidth against swarm size.
    Scalability {
        #[arg(long, default_value_t = 2)]
        n_min: usize,
        #[arg(long, default_value_t = 200)]
        n_max: usize,
        /// Largest swarm that is also simulated.
        #[arg(long, default_value_t = 16)]
        sim_max: usize,
        #[arg(long, default_value_t = 5.0)]
        scans_per_min: f64,
        #[arg(long, default_value_t = 1684.0)]
        scan_bytes: f64,
    },
    /// Summarize messages.log and metrics.json of a run.
    Report { run_dir: PathBuf },
}

fn scenario(cli: &Cli) -> Result<ScenarioConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => ScenarioConfig::default(),
    };
    Overrides {
        seed: cli.seed,
        mode: cli.mode.map(|m| match m {
            Mode::TwoD => MappingMode::TwoD,
            Mode::ThreeD => MappingMode::ThreeD,
        }),
    }
    .apply(&mut cfg);
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if cli.print_config {
        print!("{}", to_toml(&scenario(cli)?));
        return Ok(());
    }
    match &cli.command {
        Command::Run => {
            let cfg = scenario(cli)?;
            cfg.validate().map_err(|e| CliError::Invalid(e.to_string()))?;
            let base = cli.config.as_deref().and_then(Path::parent);
            let world = resolve_world(&cfg.world, base)?;
            let result = run_scenario(&cfg, &world).map_err(|e| CliError::Invalid(e.to_string()))?;
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            write_run(&out, &result)?;
            let m = &result.metrics;
            println!(
                "{} drones, {:.1} s: {} map points, rmse {}, mean ATE {}, {} intra / {} inter loop closures -> {}",
                cfg.n_drones,
                result.end_time,
                m.map_points,
                m.mapping_rmse_m.map_or("n/a".into(), |v| format!("{v:.3} m")),
                m.mean_ate().map_or("n/a".into(), |v| format!("{v:.3} m")),
                m.total_intra(),
                m.total_inter(),
                out.display()
            );
        }
        Command::Replay { run_dir, scale_info } => {
            print!("{}", cmd_replay(run_dir, cli.out.as_deref(), *scale_info)?);
        }
        Command::Scalability {
            n_min,
            n_max,
            sim_max,
            scans_per_min,
            scan_bytes,
        } => {
            let cfg = scenario(cli)?;
            let params = ScalabilityParams {
                n_min: *n_min,
                n_max: *n_max,
                sim_max: *sim_max,
                scans_per_min: *scans_per_min,
                scan_bytes: *scan_bytes,
                seed: cfg.seed,
                protocol: cfg.protocol,
                ..Default::default()
            };
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("scalability"));
            let rows = cmd_scalability(&out, &params)?;
            for r in rows.iter().filter(|r| r.loop_time_sim.is_some()) {
                println!(
                    "N={:<3} loop time model {:.1} ms, simulated {:.1} ms",
                    r.n,
                    r.loop_time_model * 1e3,
                    r.loop_time_sim.unwrap_or(f64::NAN) * 1e3
                );
            }
            println!("{} rows -> {}", rows.len(), out.display());
        }
        Command::Report { run_dir } => print!("{}", cmd_report(run_dir)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
