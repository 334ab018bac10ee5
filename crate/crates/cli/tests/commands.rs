use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cslam::mapping_eval::MapMetrics;
use cslam::sim::fixture;

fn cslam(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cslam"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.display().to_string()
}

#[test]
fn one_drone_run_writes_five_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "world = \"empty_room\"\nn_drones = 1\nduration = 10.0\n");
    let o = cslam(&["run", "--config", &cfg, "--out", "out"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    for f in cslam_cli::artifacts::RUN_FILES {
        let p = tmp.path().join("out").join(f);
        assert!(p.is_file(), "missing {f}");
        assert!(fs::metadata(&p).unwrap().len() > 0, "empty {f}");
    }
    let svg = fs::read_to_string(tmp.path().join("out/map.svg")).unwrap();
    assert_eq!(svg.matches("class=\"wall\"").count(), fixture("empty_room").unwrap().segments.len());
    assert_eq!(svg.matches("class=\"trajectory\"").count(), 1);
    assert!(svg.matches("class=\"point\"").count() > 0);
    let traj = fs::read_to_string(tmp.path().join("out/trajectories.csv")).unwrap();
    assert!(traj.starts_with("time,drone,pose_id,true_x"));
}

#[test]
fn missing_world_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "world = \"nowhere.txt\"\nn_drones = 1\nduration = 5.0\n");
    let o = cslam(&["run", "--config", &cfg], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("world fixture not found"), "{}", stderr(&o));
}

#[test]
fn bad_configs_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        ("n_drones = 0\n", "n_drones"),
        ("[icp]\nmax_iterations = 0\n", "icp."),
        ("[noise]\nmsg_loss = 1.5\n", "noise.msg_loss"),
        ("bogus = 1\n", "bogus"),
        ("[pgo]\nspeed = 3\n", "speed"),
    ];
    for (k, (body, needle)) in cases.iter().enumerate() {
        let cfg = write_config(tmp.path(), &format!("c{k}.toml"), body);
        let o = cslam(&["run", "--config", &cfg], tmp.path());
        assert_eq!(o.status.code(), Some(2), "{body}");
        assert!(stderr(&o).contains(needle), "{body}: {}", stderr(&o));
    }
}

#[test]
fn world_file_is_resolved_next_to_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    fs::create_dir(tmp.path().join("w")).unwrap();
    fs::write(tmp.path().join("w/box.txt"), "0 0 3 0\n3 0 3 3\n3 3 0 3\n0 3 0 0\n").unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "world = \"w/box.txt\"\nn_drones = 1\nduration = 5.0\n");
    let elsewhere = tempfile::tempdir().unwrap();
    let o = cslam(&["run", "--config", &cfg, "--out", "o"], elsewhere.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let world = fs::read_to_string(elsewhere.path().join("o/replay/world.txt")).unwrap();
    assert_eq!(world.lines().filter(|l| !l.starts_with('#')).count(), 4);
}

#[test]
fn maze_runs_repeat_exactly_and_replay_reproduces_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "world = \"maze2\"\nn_drones = 3\nduration = 30.0\n");
    for out in ["a", "b"] {
        let o = cslam(&["run", "--config", &cfg, "--seed", "4", "--out", out], tmp.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in cslam_cli::artifacts::RUN_FILES {
        let a = fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = fs::read(tmp.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs between identical runs");
    }

    let o = cslam(&["replay", "a", "--scale-info", "2"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let original = fs::read_to_string(tmp.path().join("a/metrics.json")).unwrap();
    let replayed = fs::read_to_string(tmp.path().join("a/replayed/metrics.json")).unwrap();
    assert_eq!(original, replayed);
    let m = MapMetrics::from_json(&replayed).unwrap();
    assert_eq!(m.ate_m.len(), 3);

    let text = stdout(&o);
    let ratios: Vec<f64> = text
        .lines()
        .filter_map(|l| l.split("ratio ").nth(1))
        .map(|r| r.trim().parse().unwrap())
        .collect();
    assert_eq!(ratios.len(), 3, "{text}");
    for r in ratios.iter().filter(|r| r.is_finite()) {
        assert!((r - 2.0).abs() < 1e-6, "{text}");
    }

    let o = cslam(&["report", "a"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let report = stdout(&o);
    let trace = fs::read_to_string(tmp.path().join("a/messages.log")).unwrap();
    let entries = trace.lines().filter(|l| !l.starts_with('#')).count();
    assert!(report.starts_with(&format!("messages: {entries} ")), "{report}");
    assert!(report.contains("RangeRequest"));
}

#[test]
fn replay_rejects_empty_and_malformed_dumps() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "world = \"empty_room\"\nn_drones = 1\nduration = 5.0\n");
    let o = cslam(&["run", "--config", &cfg, "--out", "r"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let dump = tmp.path().join("r/replay/graph_0.txt");
    let good = fs::read_to_string(&dump).unwrap();

    fs::write(&dump, "").unwrap();
    let o = cslam(&["replay", "r"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("empty"), "{}", stderr(&o));

    let mut lines: Vec<&str> = good.lines().collect();
    lines[3] = "NODE what";
    fs::write(&dump, lines.join("\n")).unwrap();
    let o = cslam(&["replay", "r"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
}

#[test]
fn scalability_table_has_the_expected_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cslam(&["scalability", "--n-min", "2", "--n-max", "200", "--out", "s"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("s/scalability.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 199);
    let model: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(model.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(rows.last().unwrap()[1], "19900");
    let n8 = &rows[6];
    assert_eq!(n8[0], "8");
    let (m, s): (f64, f64) = (n8[2].parse().unwrap(), n8[3].parse().unwrap());
    assert!((s - m).abs() / m < 0.10, "N=8 model {m} simulated {s}");
    assert!(rows[20][3].is_empty());
    let svg = fs::read_to_string(tmp.path().join("s/scalability.svg")).unwrap();
    assert_eq!(svg.matches("<circle class=\"series\"").count(), 15);

    let o = cslam(&["scalability", "--n-min", "5", "--n-max", "3"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn print_config_reparses_to_the_same_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "n_drones = 4\n[icp]\nline_gate = 0.3\n");
    let o = cslam(&["run", "--config", &cfg, "--seed", "9", "--mode", "3d", "--print-config"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let printed = stdout(&o);
    let parsed = cslam_cli::config::parse_config(Path::new("printed"), &printed).unwrap();
    assert_eq!(parsed.n_drones, 4);
    assert_eq!(parsed.seed, 9);
    assert_eq!(parsed.mode, cslam::sim::MappingMode::ThreeD);
    assert_eq!(parsed.icp.line_gate, 0.3);
    assert_eq!(cslam_cli::config::to_toml(&parsed), printed);
}

#[test]
fn shipped_configs_are_valid() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(&root).unwrap() {
        let p = entry.unwrap().path();
        let cfg = cslam_cli::config::load_config(&p).unwrap();
        cfg.validate().unwrap();
        cslam_cli::config::resolve_world(&cfg.world, Some(&root)).unwrap();
        n += 1;
    }
    assert!(n >= 3);
}
