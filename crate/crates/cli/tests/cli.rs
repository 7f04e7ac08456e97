use std::path::Path;
use std::process::Command;

use flexrb::coupling::SolverKind;
use flexrb::ffd::ParameterVector;
use flexrb::mesh::Mesh;
use flexrb_cli::bench::{cmd_bench, Phase};
use flexrb_cli::commands::{cmd_couple, cmd_mesh, cmd_offline, cmd_solve, EIM_FILE, MANIFEST_FILE, RB_FILE};
use flexrb_cli::{CliError, RunConfig};
use tempfile::TempDir;

fn coarse(dir: &Path) -> RunConfig {
    let mut c = RunConfig::from_toml(
        "[discretization]\nnx = 24\nny = 8\n[eim]\ntrain_size = 60\n[rb]\nn_max = 8\ntrain_size = 40\ntest_size = 5\n",
    )
    .unwrap();
    c.output.dir = dir.to_path_buf();
    c
}

fn write_config(dir: &Path, config: &RunConfig) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, config.to_toml()).unwrap();
    path
}

fn flexrb(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_flexrb")).args(args).output().unwrap()
}

#[test]
fn mesh_files_count_and_reload() {
    let tmp = TempDir::new().unwrap();
    let mut c = coarse(tmp.path());
    c.discretization.nx = 1;
    c.discretization.ny = 1;
    let mesh = Mesh::from_text(&std::fs::read_to_string(cmd_mesh(&c).unwrap()).unwrap()).unwrap();
    assert_eq!(mesh.n_triangles(), 4);

    let c = RunConfig {
        output: c.output.clone(),
        ..RunConfig::default()
    };
    let text = std::fs::read_to_string(cmd_mesh(&c).unwrap()).unwrap();
    let mesh = Mesh::from_text(&text).unwrap();
    assert_eq!(mesh.n_nodes(), 61 * 21 + 60 * 20);
    assert_eq!(mesh.to_text(), text);
}

#[test]
fn rest_solve_reports_poiseuille_pressure_drop() {
    let tmp = TempDir::new().unwrap();
    let c = coarse(tmp.path());
    let out = cmd_solve(&c, &ParameterVector::zeros(6), SolverKind::FullFem).unwrap();
    assert!((out.summary.pressure_drop - 25.2).abs() <= 1e-6 * 25.2, "{}", out.summary.pressure_drop);
    assert!((out.summary.flow_rate - 20.0).abs() <= 1e-9);
    assert!(out.files.iter().all(|f| f.exists()));
}

#[test]
fn usage_and_config_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let c = coarse(tmp.path());
    let path = write_config(tmp.path(), &c);
    let cfg = path.to_str().unwrap();
    let bad_mu = flexrb(&["solve", "--config", cfg, "--mu", "0,0,zero"]);
    assert_eq!(bad_mu.status.code(), Some(2));
    let short_mu = flexrb(&["solve", "--config", cfg, "--mu", "0,0"]);
    assert_eq!(short_mu.status.code(), Some(2));
    let bad_solver = flexrb(&["solve", "--config", cfg, "--mu", "0,0,0,0,0,0", "--solver", "exact"]);
    assert_eq!(bad_solver.status.code(), Some(2));

    let mut relaxed = c.clone();
    relaxed.coupling.omega = 0.0;
    let path = write_config(tmp.path(), &relaxed);
    let out = flexrb(&["couple", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("relaxation"));

    std::fs::write(tmp.path().join("typo.toml"), "[physics]\nviscosity = 1.0\n").unwrap();
    let out = flexrb(&["mesh", "--config", tmp.path().join("typo.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reduced_solvers_need_artifacts() {
    let tmp = TempDir::new().unwrap();
    let c = coarse(tmp.path());
    for kind in [SolverKind::ReducedFem, SolverKind::Rb] {
        match cmd_solve(&c, &ParameterVector::zeros(6), kind) {
            Err(CliError::MissingArtifacts(msg)) => assert!(msg.contains("flexrb offline"), "{msg}"),
            other => panic!("expected missing artifacts, got {:?}", other.err()),
        }
    }
    assert!(matches!(cmd_bench(&c, &[10]), Err(CliError::MissingArtifacts(_))));
}

#[test]
fn degenerate_parameter_exits_with_four() {
    let tmp = TempDir::new().unwrap();
    let path = write_config(tmp.path(), &coarse(tmp.path()));
    let out = flexrb(&["solve", "--config", path.to_str().unwrap(), "--mu", "-3,-3,-3,-3,-3,-3"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn offline_is_deterministic_and_reports_counts() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let first = cmd_offline(&coarse(a.path())).unwrap();
    cmd_offline(&coarse(b.path())).unwrap();
    for name in [EIM_FILE, RB_FILE, MANIFEST_FILE, "error_decay.csv"] {
        let (x, y) = (std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
        assert!(x == y, "{name} differs between identical runs");
    }
    let report = std::fs::read_to_string(a.path().join("offline_report.txt")).unwrap();
    for entry in ["nu_11", "nu_22", "chi_21", "det"] {
        assert!(report.contains(entry), "{report}");
    }
    assert!(report.contains(&format!("N = {}", first.rb.n())));

    let mut loose = coarse(a.path());
    loose.eim.tol = 1e-3;
    let loose_run = cmd_offline(&loose).unwrap();
    let total = |counts: Vec<(flexrb::eim::TensorEntry, usize)>| counts.iter().map(|c| c.1).sum::<usize>();
    assert!(total(loose_run.eim.term_counts()) < total(first.eim.term_counts()));

    // the loose run replaced the artifacts, so the first configuration no longer matches
    let stale = cmd_solve(&coarse(a.path()), &ParameterVector::zeros(6), SolverKind::Rb);
    assert!(matches!(stale, Err(CliError::MissingArtifacts(_))));
}

#[test]
fn rb_solve_and_bench_after_offline() {
    let tmp = TempDir::new().unwrap();
    let c = coarse(tmp.path());
    cmd_offline(&c).unwrap();
    let mu = ParameterVector::zeros(6);
    let full = cmd_solve(&c, &mu, SolverKind::FullFem).unwrap().summary;
    let rb = cmd_solve(&c, &mu, SolverKind::Rb).unwrap().summary;
    let reduced = cmd_solve(&c, &mu, SolverKind::ReducedFem).unwrap().summary;
    assert!((rb.pressure_drop - full.pressure_drop).abs() <= 1e-2 * full.pressure_drop);
    assert!((reduced.pressure_drop - full.pressure_drop).abs() <= 1e-6 * full.pressure_drop);

    let header_only = cmd_bench(&c, &[0]).unwrap();
    assert!(header_only.records.is_empty());
    assert_eq!(std::fs::read_to_string(tmp.path().join("bench.csv")).unwrap().lines().count(), 1);

    let out = cmd_bench(&c, &[1, 10, 100]).unwrap();
    assert_eq!(out.records.len(), 3 * 4);
    for kind in [SolverKind::FullFem, SolverKind::ReducedFem, SolverKind::Rb] {
        let rows: Vec<_> = out.records.iter().filter(|r| r.solver == kind).collect();
        for w in rows.windows(2) {
            assert!(w[1].cumulative_s >= w[0].cumulative_s);
        }
    }
    let full_offline = out
        .records
        .iter()
        .find(|r| r.solver == SolverKind::FullFem && r.phase == Phase::Offline)
        .unwrap();
    assert_eq!(full_offline.cumulative_s, 0.0);
    let csv = std::fs::read_to_string(tmp.path().join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 13);
}

#[test]
fn rigid_wall_coupling_and_non_convergence_status() {
    let tmp = TempDir::new().unwrap();
    let mut c = coarse(tmp.path());
    c.physics.spring = 1e9;
    let state = cmd_couple(&c, SolverKind::FullFem).unwrap();
    assert!(state.iterations() <= 3);
    let shape = std::fs::read_to_string(tmp.path().join("coupling_shape_full_fem.csv")).unwrap();
    let max_eta = shape
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap().abs())
        .fold(0.0_f64, f64::max);
    assert!(max_eta <= 1e-6, "{max_eta:e}");

    let mut stubborn = coarse(tmp.path());
    stubborn.physics.spring = 2000.0;
    stubborn.coupling.max_iter = 1;
    stubborn.coupling.tol = 1e-14;
    let path = write_config(tmp.path(), &stubborn);
    let out = flexrb(&["couple", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let trace = std::fs::read_to_string(tmp.path().join("coupling_trace_full_fem.csv")).unwrap();
    assert_eq!(trace.lines().count(), 2);
}
