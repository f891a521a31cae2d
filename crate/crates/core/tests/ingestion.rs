use std::fs;
use std::path::{Path, PathBuf};

use pdra_core::error::PdraError;
use pdra_core::problem::instance_file::{load_instance, parse_instance};
use pdra_core::problems::{
    dc_ptdf, gen_powernet_instance, load_network_data, load_network_from_branches, read_branches, read_buses,
    read_ptdf, running_example, PowerNetParams,
};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/threebus")
}

#[test]
fn stored_ptdf_matches_the_branch_derivation() {
    let dir = fixture();
    let buses = read_buses(&dir.join("buses.csv")).unwrap();
    let branches = read_branches(&dir.join("branches.csv"), &buses).unwrap();
    let p = dc_ptdf(buses.len(), &branches).unwrap();
    let stored = read_ptdf(&dir.join("ptdf.csv"), buses.len()).unwrap();
    assert_eq!(stored.len(), 2 * p.len());
    for (b, row) in p.iter().enumerate() {
        for j in 0..buses.len() {
            // stored rows are [−P; P]
            assert!((stored[b][j] + row[j]).abs() < 1e-12, "row {b} col {j}");
            assert!((stored[b + p.len()][j] - row[j]).abs() < 1e-12, "row {b} col {j}");
        }
    }
}

#[test]
fn three_bus_ptdf_hand_values() {
    // Reduced B on buses 2,3 (slack 1): [[15, −5], [−5, 9]], inverse /110.
    // Line 1→2 flow for a unit injection at bus 2 is −(X·b)/x_12 = −9/11.
    let dir = fixture();
    let buses = read_buses(&dir.join("buses.csv")).unwrap();
    let branches = read_branches(&dir.join("branches.csv"), &buses).unwrap();
    let p = dc_ptdf(3, &branches).unwrap();
    let expect = [[0.0, -9.0 / 11.0, -5.0 / 11.0], [0.0, 2.0 / 11.0, -5.0 / 11.0], [0.0, -2.0 / 11.0, -6.0 / 11.0]];
    for (r, e) in p.iter().zip(&expect) {
        for (a, b) in r.iter().zip(e) {
            assert!((a - b).abs() < 1e-12, "{p:?}");
        }
    }
}

#[test]
fn both_network_sources_give_the_same_instance() {
    let dir = fixture();
    let stored = load_network_data(&dir).unwrap();
    let buses = read_buses(&dir.join("buses.csv")).unwrap();
    let derived = load_network_from_branches(&dir, buses).unwrap();
    assert_eq!(stored.limits, derived.limits);
    let a = gen_powernet_instance(&PowerNetParams::new(stored, 1e-6, 0)).unwrap();
    let b = gen_powernet_instance(&PowerNetParams::new(derived, 1e-6, 0)).unwrap();
    assert_eq!(a.n_agents, 6);
    assert_eq!(a.n_constraints(), 2 + 6);
    for (x, y) in a.constraints.iter().zip(&b.constraints) {
        let (gx, gy) = (x.linear_gradient().unwrap(), y.linear_gradient().unwrap());
        assert!(gx.iter().zip(&gy).all(|(u, v)| (u - v).abs() < 1e-12));
    }
}

fn copy_fixture(tmp: &Path) {
    for f in ["buses.csv", "branches.csv", "ptdf.csv", "limits.csv"] {
        fs::copy(fixture().join(f), tmp.join(f)).unwrap();
    }
}

fn ingestion_line(e: PdraError) -> usize {
    match e {
        PdraError::Ingestion { line, .. } => line,
        other => panic!("expected an ingestion error, got {other:?}"),
    }
}

#[test]
fn malformed_bus_row_names_its_line() {
    let tmp = tempfile::tempdir().unwrap();
    copy_fixture(tmp.path());
    let text = fs::read_to_string(tmp.path().join("buses.csv")).unwrap();
    fs::write(tmp.path().join("buses.csv"), text.replace("d_max=10;c=0.011", "d_max=ten;c=0.011")).unwrap();
    assert_eq!(ingestion_line(load_network_data(tmp.path()).unwrap_err()), 3);
}

#[test]
fn unknown_branch_endpoint_names_its_line() {
    let tmp = tempfile::tempdir().unwrap();
    copy_fixture(tmp.path());
    fs::remove_file(tmp.path().join("ptdf.csv")).unwrap();
    fs::remove_file(tmp.path().join("limits.csv")).unwrap();
    let text = fs::read_to_string(tmp.path().join("branches.csv")).unwrap();
    fs::write(tmp.path().join("branches.csv"), text.replace("2,3,0.2", "2,9,0.2")).unwrap();
    assert_eq!(ingestion_line(load_network_data(tmp.path()).unwrap_err()), 3);
}

#[test]
fn short_ptdf_row_names_its_line() {
    let tmp = tempfile::tempdir().unwrap();
    copy_fixture(tmp.path());
    let mut lines: Vec<String> = fs::read_to_string(tmp.path().join("ptdf.csv")).unwrap().lines().map(String::from).collect();
    lines[4] = "0.0,0.1".into();
    fs::write(tmp.path().join("ptdf.csv"), lines.join("\n")).unwrap();
    assert_eq!(ingestion_line(load_network_data(tmp.path()).unwrap_err()), 5);
}

#[test]
fn missing_network_file_is_an_ingestion_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(matches!(load_network_data(tmp.path()), Err(PdraError::Ingestion { .. })));
}

#[test]
fn instance_file_reproduces_the_running_example() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/running_example.toml");
    let spec = load_instance(&path).unwrap();
    let reference = running_example();
    assert_eq!(spec.costs, reference.costs);
    assert_eq!(spec.constraints, reference.constraints);
    assert_eq!(spec.feasible_sets, reference.feasible_sets);
    assert_eq!(spec.reg.upsilon, reference.reg.upsilon);
    assert!(parse_instance("upsilon = 0.1\n", "empty.toml").is_err());
}
