use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use flexrb::artifact;
use flexrb::coupling::{couple, CouplingState, FluidSolver, FullFem, RbSolver, SolverKind, WallModel, WallProjector};
use flexrb::eim::TensorEim;
use flexrb::fem::{deformed_mesh_csv, FlowSummary, FluidModel, FluidSolution};
use flexrb::ffd::ParameterVector;
use flexrb::rb::{error_decay, error_decay_csv, greedy_build, AffineSystem, ReducedModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{CliError, RunConfig};

pub const EIM_FILE: &str = "eim.bin";
pub const RB_FILE: &str = "rb.bin";
pub const MANIFEST_FILE: &str = "offline_manifest.bin";
pub const TIMINGS_FILE: &str = "offline_timings.toml";
pub const REPORT_FILE: &str = "offline_report.txt";
pub const DECAY_FILE: &str = "error_decay.csv";
const MANIFEST_KIND: &str = "offline-manifest";

/// Wall-clock seconds of each offline stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OfflineTimings {
    pub eim_s: f64,
    pub affine_s: f64,
    pub greedy_s: f64,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    fingerprint: String,
    eim_converged: bool,
    greedy_reached_tol: bool,
}

pub struct OfflineArtifacts {
    pub eim: TensorEim,
    pub rb: ReducedModel,
    pub timings: OfflineTimings,
    /// `(N, max training indicator, max held-out error)` per basis size.
    pub decay: Vec<(usize, f64, f64)>,
}

impl OfflineArtifacts {
    pub fn greedy_reached_tol(&self) -> bool {
        self.rb
            .history()
            .last()
            .is_some_and(|s| s.max_indicator <= self.rb.config().tol)
    }

    pub fn report(&self, config: &RunConfig) -> String {
        let mut s = String::new();
        let e = &config.eim;
        let _ = writeln!(s, "empirical interpolation: tol {:e}, {} training parameters, seed {}", e.tol, e.train_size, e.seed);
        let _ = writeln!(s, "{:<8} {:>6} {:>14} {:>10}", "entry", "terms", "train_error", "converged");
        for entry in flexrb::eim::TensorEntry::ALL {
            let b = &self.eim.entry(entry).basis;
            let _ = writeln!(
                s,
                "{:<8} {:>6} {:>14.3e} {:>10}",
                entry.to_string(),
                b.n_terms(),
                b.achieved_error(),
                b.converged
            );
        }
        let counts = self.eim.term_counts();
        let max_m = counts.iter().map(|(_, m)| *m).max().unwrap_or(0);
        let _ = writeln!(s, "largest term count: {max_m}");
        let _ = writeln!(s, "eim converged: {}", self.eim.converged());
        let r = &config.rb;
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "reduced basis: N = {} (n_max {}, tol {:e}, indicator {}, {} training parameters, seed {})",
            self.rb.n(),
            r.n_max,
            r.tol,
            r.indicator,
            r.train_size,
            r.seed
        );
        let _ = writeln!(s, "velocity dimension {}, pressure dimension {}", self.rb.velocity_dim(), self.rb.pressure_dim());
        let _ = writeln!(s, "greedy reached tol: {}", self.greedy_reached_tol());
        let _ = writeln!(s, "error decay on {} held-out parameters (seed {}):", r.test_size, r.test_seed);
        s.push_str(&error_decay_csv(&self.decay));
        let t = &self.timings;
        let _ = writeln!(s);
        let _ = writeln!(s, "timings: eim {:.2} s, affine {:.2} s, greedy {:.2} s", t.eim_s, t.affine_s, t.greedy_s);
        s
    }
}

fn out_path(config: &RunConfig, name: &str) -> PathBuf {
    config.output.dir.join(name)
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Core(e.into()))
}

/// Writes the rest mesh as `mesh.txt`.
pub fn cmd_mesh(config: &RunConfig) -> Result<PathBuf, CliError> {
    config.validate()?;
    let d = &config.discretization;
    let mesh = flexrb::mesh::build_mesh(d.nx, d.ny, &config.reference_box()?)?;
    let path = out_path(config, "mesh.txt");
    write(&path, &mesh.to_text())?;
    Ok(path)
}

pub fn parse_mu(text: &str, config: &RunConfig) -> Result<ParameterVector, CliError> {
    let mu = ParameterVector::parse(text).map_err(|e| CliError::Usage(format!("--mu: {e}")))?;
    let n = config.geometry.movable_l.len();
    if mu.len() != n {
        return Err(CliError::Usage(format!("--mu needs {n} comma separated values, got {}", mu.len())));
    }
    Ok(mu)
}

pub struct SolveOutcome {
    pub solution: FluidSolution,
    pub summary: FlowSummary,
    pub solve_seconds: f64,
    pub files: Vec<PathBuf>,
}

fn missing(config: &RunConfig, what: &str) -> CliError {
    CliError::MissingArtifacts(format!(
        "{what} not found in {}; build them with `flexrb offline --config <file>` using the same configuration",
        config.output.dir.display()
    ))
}

/// Loads the tensor interpolation written by `offline`.
pub fn load_eim(config: &RunConfig) -> Result<TensorEim, CliError> {
    check_manifest(config)?;
    let path = out_path(config, EIM_FILE);
    if !path.exists() {
        return Err(missing(config, EIM_FILE));
    }
    Ok(TensorEim::load(&path)?)
}

pub fn load_rb(config: &RunConfig) -> Result<ReducedModel, CliError> {
    check_manifest(config)?;
    let path = out_path(config, RB_FILE);
    if !path.exists() {
        return Err(missing(config, RB_FILE));
    }
    Ok(ReducedModel::load(&path)?)
}

pub fn load_timings(config: &RunConfig) -> Result<OfflineTimings, CliError> {
    let path = out_path(config, TIMINGS_FILE);
    let text = std::fs::read_to_string(&path).map_err(|_| missing(config, TIMINGS_FILE))?;
    toml::from_str(&text).map_err(|e| CliError::Core(flexrb::Error::Parse(format!("{}: {e}", path.display()))))
}

fn check_manifest(config: &RunConfig) -> Result<(), CliError> {
    let path = out_path(config, MANIFEST_FILE);
    if !path.exists() {
        return Err(missing(config, MANIFEST_FILE));
    }
    let manifest: Manifest = artifact::load(&path, MANIFEST_KIND)?;
    if manifest.fingerprint != config.offline_fingerprint() {
        return Err(CliError::MissingArtifacts(format!(
            "the artifacts in {} were built with a different configuration; rerun `flexrb offline` with this one",
            config.output.dir.display()
        )));
    }
    Ok(())
}

/// Solves the flow at `mu` with the chosen discretization and writes
/// `solution_<kind>.csv` and `deformed_mesh.csv`.
pub fn cmd_solve(config: &RunConfig, mu: &ParameterVector, kind: SolverKind) -> Result<SolveOutcome, CliError> {
    config.validate()?;
    config.domain()?;
    let (eim, rb) = match kind {
        SolverKind::FullFem => (None, None),
        SolverKind::ReducedFem => (Some(load_eim(config)?), None),
        SolverKind::Rb => (None, Some(load_rb(config)?)),
    };
    let fe = config.fluid_model()?;
    let start = Instant::now();
    let solution = match kind {
        SolverKind::FullFem => fe.solve_full(mu)?,
        SolverKind::ReducedFem => {
            let sys = AffineSystem::build(&fe, eim.expect("loaded above"))?;
            FluidSolver::solve(&sys, mu)?
        }
        SolverKind::Rb => RbSolver {
            fe: &fe,
            rb: rb.as_ref().expect("loaded above"),
        }
        .solve(mu)?,
    };
    let solve_seconds = start.elapsed().as_secs_f64();
    let summary = fe.summary(&solution)?;
    let sol_path = out_path(config, &format!("solution_{}.csv", kind.name()));
    write(&sol_path, &fe.solution_csv(&solution)?)?;
    let mesh_path = out_path(config, "deformed_mesh.csv");
    write(&mesh_path, &deformed_mesh_csv(fe.space().mesh(), fe.lattice(), mu)?)?;
    Ok(SolveOutcome {
        solution,
        summary,
        solve_seconds,
        files: vec![sol_path, mesh_path],
    })
}

/// Runs the offline stage in memory: interpolation, affine system, greedy
/// and the held-out error decay.
pub fn run_offline(config: &RunConfig, fe: &FluidModel) -> Result<OfflineArtifacts, CliError> {
    config.validate_values()?;
    let domain = config.domain()?;
    let greedy = config.greedy()?;

    let start = Instant::now();
    let eim = TensorEim::train(fe, &domain, &config.eim_config())?;
    let eim_s = start.elapsed().as_secs_f64();
    if !eim.converged() {
        log::warn!("empirical interpolation did not reach tol {:e}", config.eim.tol);
    }

    let start = Instant::now();
    let sys = AffineSystem::build(fe, eim.clone())?;
    let affine_s = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let rb = greedy_build(&sys, &domain, &greedy)?;
    let greedy_s = start.elapsed().as_secs_f64();

    let test = domain.sample_n(&mut ChaCha8Rng::seed_from_u64(config.rb.test_seed), config.rb.test_size);
    let truths = test.iter().map(|mu| sys.solve(mu)).collect::<Result<Vec<_>, _>>()?;
    let decay = error_decay(fe, &rb, &test, &truths)?;

    let artifacts = OfflineArtifacts {
        eim,
        rb,
        timings: OfflineTimings { eim_s, affine_s, greedy_s },
        decay,
    };
    if !artifacts.greedy_reached_tol() {
        log::warn!(
            "greedy stopped at N = {} above tol {:e}",
            artifacts.rb.n(),
            config.rb.tol
        );
    }
    Ok(artifacts)
}

/// Writes the artifacts, the report and the error-decay table.
pub fn write_offline(config: &RunConfig, artifacts: &OfflineArtifacts) -> Result<(), CliError> {
    artifacts.eim.save(&out_path(config, EIM_FILE))?;
    artifacts.rb.save(&out_path(config, RB_FILE))?;
    artifact::save(
        &out_path(config, MANIFEST_FILE),
        MANIFEST_KIND,
        &Manifest {
            fingerprint: config.offline_fingerprint(),
            eim_converged: artifacts.eim.converged(),
            greedy_reached_tol: artifacts.greedy_reached_tol(),
        },
    )?;
    write(
        &out_path(config, TIMINGS_FILE),
        &toml::to_string(&artifacts.timings).expect("timings serialize"),
    )?;
    write(&out_path(config, REPORT_FILE), &artifacts.report(config))?;
    write(&out_path(config, DECAY_FILE), &error_decay_csv(&artifacts.decay))?;
    Ok(())
}

/// Offline stage with artifacts on disk. An interpolation that misses its
/// tolerance is reported as non-convergence after everything is written.
pub fn cmd_offline(config: &RunConfig) -> Result<OfflineArtifacts, CliError> {
    config.validate()?;
    let fe = config.fluid_model()?;
    let artifacts = run_offline(config, &fe)?;
    write_offline(config, &artifacts)?;
    if !artifacts.eim.converged() {
        return Err(CliError::NotConverged(format!(
            "empirical interpolation missed tol {:e}; see {}",
            config.eim.tol,
            out_path(config, REPORT_FILE).display()
        )));
    }
    Ok(artifacts)
}

/// Runs the coupling loop with any solver on an existing model.
pub fn run_couple(
    config: &RunConfig,
    fe: &FluidModel,
    solver: &dyn FluidSolver,
) -> Result<(CouplingState, WallProjector), CliError> {
    let projector = WallProjector::new(WallModel::from_fluid(fe)?, fe.lattice().clone(), config.domain()?)?;
    let mu0 = ParameterVector::zeros(fe.lattice().n_params());
    let state = couple(solver, &projector, &mu0, &config.coupling()?)?;
    Ok((state, projector))
}

/// Couples fluid and wall and writes `coupling_trace_<kind>.csv` and
/// `coupling_shape_<kind>.csv`. Non-convergence is returned as an error
/// after both files are written.
pub fn cmd_couple(config: &RunConfig, kind: SolverKind) -> Result<CouplingState, CliError> {
    config.validate()?;
    let (eim, rb) = match kind {
        SolverKind::FullFem => (None, None),
        SolverKind::ReducedFem => (Some(load_eim(config)?), None),
        SolverKind::Rb => (None, Some(load_rb(config)?)),
    };
    let fe = config.fluid_model()?;
    let (state, projector) = match kind {
        SolverKind::FullFem => run_couple(config, &fe, &FullFem(&fe))?,
        SolverKind::ReducedFem => {
            let sys = AffineSystem::build(&fe, eim.expect("loaded above"))?;
            run_couple(config, &fe, &sys)?
        }
        SolverKind::Rb => run_couple(
            config,
            &fe,
            &RbSolver {
                fe: &fe,
                rb: rb.as_ref().expect("loaded above"),
            },
        )?,
    };
    write(&out_path(config, &format!("coupling_trace_{}.csv", kind.name())), &state.trace_csv())?;
    write(
        &out_path(config, &format!("coupling_shape_{}.csv", kind.name())),
        &state.shape_csv(&projector)?,
    )?;
    if !state.converged {
        return Err(CliError::NotConverged(format!(
            "coupling did not reach step tol {:e} in {} iterations",
            config.coupling.tol, config.coupling.max_iter
        )));
    }
    Ok(state)
}
