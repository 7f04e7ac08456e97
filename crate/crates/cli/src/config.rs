//! Run configuration read from a TOML file.
//!
//! Every section and key is optional; missing values fall back to the
//! channel experiment defaults. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use flexrb::coupling::{CouplingConfig, SolverKind};
use flexrb::eim::EimConfig;
use flexrb::fem::{FluidModel, PhysicalConstants};
use flexrb::ffd::{Axis, FfdLattice, MovableComponent, ParameterDomain, ReferenceBox};
use flexrb::mesh::build_mesh;
use flexrb::rb::{GreedyConfig, GreedyIndicator};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometrySection,
    pub discretization: DiscretizationSection,
    pub physics: PhysicsSection,
    pub eim: EimSection,
    pub rb: RbSection,
    pub coupling: CouplingSection,
    pub bench: BenchSection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    /// `[x1_min, x1_max, x2_min, x2_max]` in cm.
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    /// Lattice degrees; a 10 x 2 point lattice has degrees `[9, 1]`.
    pub degrees: [usize; 2],
    /// Lattice columns `l` of the movable control points.
    pub movable_l: Vec<usize>,
    /// Lattice row of the movable control points.
    pub movable_m: usize,
    /// Displacement direction, `"x1"` or `"x2"`.
    pub axis: String,
    /// Uniform parameter bounds `[lower, upper]`.
    pub bounds: [f64; 2],
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self {
            bbox: [0.0, 3.0, -0.5, 0.5],
            degrees: [9, 1],
            movable_l: (2..=7).collect(),
            movable_m: 1,
            axis: "x2".into(),
            bounds: [-0.1, 0.1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscretizationSection {
    pub nx: usize,
    pub ny: usize,
    pub quadrature: usize,
}

impl Default for DiscretizationSection {
    fn default() -> Self {
        Self {
            nx: 60,
            ny: 20,
            quadrature: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsSection {
    pub nu: f64,
    pub v0: f64,
    pub spring: f64,
    pub force: [f64; 2],
}

impl Default for PhysicsSection {
    fn default() -> Self {
        let c = PhysicalConstants::default();
        Self {
            nu: c.nu,
            v0: c.v0,
            spring: c.spring,
            force: c.force,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EimSection {
    pub tol: f64,
    pub train_size: usize,
    pub seed: u64,
    pub max_terms: usize,
}

impl Default for EimSection {
    fn default() -> Self {
        let c = EimConfig::default();
        Self {
            tol: c.tol,
            train_size: c.train_size,
            seed: c.seed,
            max_terms: c.max_terms,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RbSection {
    pub n_max: usize,
    pub tol: f64,
    pub train_size: usize,
    pub seed: u64,
    /// `"residual"` or `"true_error"`.
    pub indicator: String,
    /// Held-out parameters for the error-decay report.
    pub test_size: usize,
    pub test_seed: u64,
}

impl Default for RbSection {
    fn default() -> Self {
        let c = GreedyConfig::default();
        Self {
            n_max: c.n_max,
            tol: c.tol,
            train_size: c.train_size,
            seed: c.seed,
            indicator: "residual".into(),
            test_size: 20,
            test_seed: 20_240_603,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingSection {
    pub tol: f64,
    pub max_iter: usize,
    pub omega: f64,
    pub solver: String,
}

impl Default for CouplingSection {
    fn default() -> Self {
        Self {
            tol: 1e-5,
            max_iter: 1000,
            omega: 1.0,
            solver: "full_fem".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    /// Timed solves per finite element solver kind.
    pub samples: usize,
    /// Minimum wall time of one batched reduced basis measurement, seconds.
    pub min_batch_seconds: f64,
    pub seed: u64,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            samples: 10,
            min_batch_seconds: 0.2,
            seed: 20_240_604,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| config_error(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Derives every stage seed from one base value.
    pub fn reseed(&mut self, seed: u64) {
        self.eim.seed = seed;
        self.rb.seed = seed.wrapping_add(1);
        self.rb.test_seed = seed.wrapping_add(2);
        self.bench.seed = seed.wrapping_add(3);
    }

    /// Checks the whole configuration, including that the output directory
    /// can be written.
    pub fn validate(&self) -> Result<(), CliError> {
        self.validate_values()?;
        let dir = &self.output.dir;
        std::fs::create_dir_all(dir).map_err(|e| config_error(format!("cannot create {}: {e}", dir.display())))?;
        let probe = dir.join(".flexrb-write-probe");
        std::fs::write(&probe, b"")
            .and_then(|_| std::fs::remove_file(&probe))
            .map_err(|e| config_error(format!("output directory {} is not writable: {e}", dir.display())))
    }

    /// Value checks only; touches no files.
    pub fn validate_values(&self) -> Result<(), CliError> {
        self.lattice()?;
        self.domain()?;
        self.constants()?;
        self.greedy()?;
        self.coupling()?;
        self.solver()?;
        let d = &self.discretization;
        if d.nx == 0 || d.ny == 0 {
            return Err(config_error("discretization.nx and ny must be positive"));
        }
        if ![4, 5].contains(&d.quadrature) {
            return Err(config_error(format!(
                "discretization.quadrature must be 4 or 5, got {}",
                d.quadrature
            )));
        }
        let e = &self.eim;
        if !(e.tol > 0.0) || e.train_size == 0 || e.max_terms == 0 {
            return Err(config_error("eim.tol, eim.train_size and eim.max_terms must be positive"));
        }
        let b = &self.bench;
        if b.samples == 0 || !(b.min_batch_seconds > 0.0) {
            return Err(config_error("bench.samples and bench.min_batch_seconds must be positive"));
        }
        Ok(())
    }

    pub fn reference_box(&self) -> Result<ReferenceBox, CliError> {
        let [a, b, c, d] = self.geometry.bbox;
        ReferenceBox::new(a, b, c, d).map_err(|e| config_error(format!("geometry.box: {e}")))
    }

    pub fn lattice(&self) -> Result<FfdLattice, CliError> {
        let g = &self.geometry;
        let axis = match g.axis.as_str() {
            "x1" => Axis::X1,
            "x2" => Axis::X2,
            other => return Err(config_error(format!("geometry.axis must be \"x1\" or \"x2\", got \"{other}\""))),
        };
        if g.movable_l.is_empty() {
            return Err(config_error("geometry.movable_l is empty"));
        }
        let movable = g
            .movable_l
            .iter()
            .map(|&l| MovableComponent { l, m: g.movable_m, axis })
            .collect();
        FfdLattice::new(g.degrees[0], g.degrees[1], movable, self.reference_box()?)
            .map_err(|e| config_error(format!("geometry: {e}")))
    }

    pub fn domain(&self) -> Result<ParameterDomain, CliError> {
        let [lo, hi] = self.geometry.bounds;
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(config_error("geometry.bounds must be finite"));
        }
        ParameterDomain::uniform(self.geometry.movable_l.len(), lo, hi)
            .map_err(|e| config_error(format!("geometry.bounds: {e}")))
    }

    pub fn constants(&self) -> Result<PhysicalConstants, CliError> {
        let p = &self.physics;
        let c = PhysicalConstants {
            nu: p.nu,
            v0: p.v0,
            force: p.force,
            spring: p.spring,
        };
        c.validate().map_err(|e| config_error(format!("physics: {e}")))?;
        Ok(c)
    }

    pub fn eim_config(&self) -> EimConfig {
        EimConfig {
            tol: self.eim.tol,
            train_size: self.eim.train_size,
            seed: self.eim.seed,
            max_terms: self.eim.max_terms,
        }
    }

    pub fn greedy(&self) -> Result<GreedyConfig, CliError> {
        let r = &self.rb;
        let indicator = match r.indicator.as_str() {
            "residual" => GreedyIndicator::Residual,
            "true_error" => GreedyIndicator::TrueError,
            other => {
                return Err(config_error(format!(
                    "rb.indicator must be \"residual\" or \"true_error\", got \"{other}\""
                )))
            }
        };
        if r.n_max == 0 || r.train_size == 0 || !(r.tol > 0.0) {
            return Err(config_error("rb.n_max, rb.train_size and rb.tol must be positive"));
        }
        Ok(GreedyConfig {
            n_max: r.n_max,
            tol: r.tol,
            train_size: r.train_size,
            seed: r.seed,
            indicator,
        })
    }

    pub fn coupling(&self) -> Result<CouplingConfig, CliError> {
        let c = CouplingConfig {
            tol: self.coupling.tol,
            max_iter: self.coupling.max_iter,
            omega: self.coupling.omega,
        };
        c.validate().map_err(|e| config_error(format!("coupling: {e}")))?;
        Ok(c)
    }

    pub fn solver(&self) -> Result<SolverKind, CliError> {
        parse_solver(&self.coupling.solver)
    }

    /// Builds the mesh and the finite element model.
    pub fn fluid_model(&self) -> Result<FluidModel, CliError> {
        let d = &self.discretization;
        let mesh = build_mesh(d.nx, d.ny, &self.reference_box()?)?;
        Ok(FluidModel::new(mesh, self.lattice()?, self.constants()?, d.quadrature)?)
    }

    /// Text identifying everything the offline artifacts depend on.
    pub fn offline_fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct Fingerprint<'a> {
            geometry: &'a GeometrySection,
            discretization: &'a DiscretizationSection,
            nu: f64,
            v0: f64,
            force: [f64; 2],
            eim: &'a EimSection,
            rb: &'a RbSection,
        }
        toml::to_string(&Fingerprint {
            geometry: &self.geometry,
            discretization: &self.discretization,
            nu: self.physics.nu,
            v0: self.physics.v0,
            force: self.physics.force,
            eim: &self.eim,
            rb: &self.rb,
        })
        .expect("fingerprint serializes")
    }
}

pub fn parse_solver(text: &str) -> Result<SolverKind, CliError> {
    text.parse::<SolverKind>().map_err(|e| config_error(e.to_string()))
}
