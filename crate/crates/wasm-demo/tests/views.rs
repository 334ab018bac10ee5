use cslam_wasm_demo::{icp_view, scaling_view, simulate_view};

#[test]
fn icp_pulls_the_scan_back() {
    let v = icp_view(0.2, -0.15, 12.0, 0.0, 7);
    assert!(v.converged);
    assert!(v.residual_m < 1e-3 && v.residual_deg < 0.1, "{} m {} deg", v.residual_m, v.residual_deg);
    assert_eq!(v.before.len(), v.after.len());
    assert!(!v.reference.is_empty());
}

#[test]
fn scaling_curves_cover_the_range() {
    let v = scaling_view(200, 5.0, 1684.0);
    assert_eq!(v.n.len(), 199);
    assert_eq!(*v.rangings.last().unwrap(), 19900);
    assert!(v.loop_time_s.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(v.radios.len(), 3);
    assert!(v.radios[0].2 < v.radios[2].2);
}

#[test]
fn small_run_produces_a_map() {
    let v = simulate_view("empty_room", 1, 0, 15.0).unwrap();
    assert_eq!(v.drones.len(), 1);
    assert!(!v.points.is_empty());
    assert_eq!(v.walls.len(), 4);
    let json = cslam_wasm_demo::simulate("corridor", 2, 0, 5.0).unwrap();
    assert!(json.contains("\"drones\""));
    assert!(simulate_view("atlantis", 1, 0, 5.0).is_err());
}
