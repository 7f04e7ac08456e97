//! Elastic membrane on the flexible wall and the fixed-point coupling in
//! parameter space.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{FluidModel, FluidSolution};
use crate::ffd::{FfdLattice, ParameterDomain, ParameterVector};
use crate::quadrature::gauss_legendre;
use crate::rb::{AffineSystem, ReducedModel};
use crate::sparse::solve_tridiagonal;

/// Gauss points per wall element; exact for the degree-18 misfit integrand
/// of a degree-9 lattice.
const WALL_GAUSS: usize = 10;

/// Clamped P1 membrane `-(K eta')' = tau` on the rest wall.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallModel {
    /// Node abscissae, strictly increasing.
    x: Vec<f64>,
    /// Spring constant per element.
    spring: Vec<f64>,
}

impl WallModel {
    pub fn new(x: Vec<f64>, spring: Vec<f64>) -> Result<Self> {
        if x.len() < 2 {
            return Err(Error::Argument("the wall needs at least two nodes".into()));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Argument("wall nodes must be strictly increasing".into()));
        }
        if spring.len() != x.len() - 1 || spring.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
            return Err(Error::Argument("one positive spring constant per wall element is required".into()));
        }
        Ok(Self { x, spring })
    }

    pub fn uniform(x: Vec<f64>, spring: f64) -> Result<Self> {
        let n = x.len().saturating_sub(1);
        Self::new(x, vec![spring; n])
    }

    /// Wall of a fluid model with its physical spring constant.
    pub fn from_fluid(model: &FluidModel) -> Result<Self> {
        Self::uniform(model.wall_x1(), model.constants().spring)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.x
    }

    pub fn n_nodes(&self) -> usize {
        self.x.len()
    }

    /// Solves `int K eta' phi' = int tau phi` for nodal `tau`, with
    /// `eta = 0` at both ends.
    pub fn solve_membrane(&self, tau: &[f64]) -> Result<Vec<f64>> {
        let n = self.x.len();
        if tau.len() != n {
            return Err(Error::Argument(format!("traction has {} values, the wall has {n} nodes", tau.len())));
        }
        let mut eta = vec![0.0; n];
        if n == 2 {
            return Ok(eta);
        }
        let m = n - 2;
        let mut diag = vec![0.0; m];
        let mut off = vec![0.0; m.saturating_sub(1)];
        let mut load = vec![0.0; m];
        for e in 0..n - 1 {
            let h = self.x[e + 1] - self.x[e];
            let k = self.spring[e] / h;
            // consistent load of the P1 traction
            let (l0, l1) = (h * (2.0 * tau[e] + tau[e + 1]) / 6.0, h * (tau[e] + 2.0 * tau[e + 1]) / 6.0);
            if e >= 1 {
                diag[e - 1] += k;
                load[e - 1] += l0;
            }
            if e + 1 <= m {
                diag[e] += k;
                load[e] += l1;
            }
            if e >= 1 && e + 1 <= m {
                off[e - 1] = -k;
            }
        }
        let inner = solve_tridiagonal(&off, &diag, &off, &load);
        eta[1..n - 1].copy_from_slice(&inner);
        Ok(eta)
    }

    /// Gauss points `(x, weight, element, local coordinate)` over the wall.
    fn quadrature(&self) -> Vec<(f64, f64, usize, f64)> {
        let (gx, gw) = gauss_legendre(WALL_GAUSS);
        let mut out = Vec::with_capacity((self.x.len() - 1) * WALL_GAUSS);
        for e in 0..self.x.len() - 1 {
            let h = self.x[e + 1] - self.x[e];
            for (s, w) in gx.iter().zip(&gw) {
                out.push((self.x[e] + s * h, w * h, e, *s));
            }
        }
        out
    }

    fn p1_value_slope(&self, eta: &[f64], e: usize, s: f64) -> (f64, f64) {
        let h = self.x[e + 1] - self.x[e];
        ((1.0 - s) * eta[e] + s * eta[e + 1], (eta[e + 1] - eta[e]) / h)
    }

    /// Strong-form residual `1/2 int |K eta'' + tau|^2` of the FFD wall
    /// `eta(mu)`, using second differences at interior nodes.
    pub fn strong_form_residual(&self, lattice: &FfdLattice, mu: &ParameterVector, tau: &[f64]) -> Result<f64> {
        let eta = self
            .x
            .iter()
            .map(|&x| lattice.boundary_displacement(lattice.wall_coordinate(x), mu))
            .collect::<Result<Vec<_>>>()?;
        let mut total = 0.0;
        for i in 1..self.x.len() - 1 {
            let (hl, hr) = (self.x[i] - self.x[i - 1], self.x[i + 1] - self.x[i]);
            let second = 2.0 * (hl * eta[i + 1] - (hl + hr) * eta[i] + hr * eta[i - 1]) / (hl * hr * (hl + hr));
            let k = 0.5 * (self.spring[i - 1] + self.spring[i]);
            let r = k * second + tau[i];
            total += 0.5 * (hl + hr) * r * r;
        }
        Ok(0.5 * total)
    }
}

/// H1 least-squares projection of wall displacements onto the FFD span.
#[derive(Clone, Debug)]
pub struct WallProjector {
    wall: WallModel,
    lattice: FfdLattice,
    domain: ParameterDomain,
    points: Vec<(f64, f64, usize, f64)>,
    basis: Vec<Vec<f64>>,
    slopes: Vec<Vec<f64>>,
    gram: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl WallProjector {
    pub fn new(wall: WallModel, lattice: FfdLattice, domain: ParameterDomain) -> Result<Self> {
        if domain.dim() != lattice.n_params() {
            return Err(Error::Argument(format!(
                "parameter domain has dimension {}, the lattice {}",
                domain.dim(),
                lattice.n_params()
            )));
        }
        let points = wall.quadrature();
        let basis: Vec<Vec<f64>> = points
            .iter()
            .map(|p| lattice.displacement_basis(lattice.wall_coordinate(p.0)))
            .collect();
        let slopes: Vec<Vec<f64>> = points
            .iter()
            .map(|p| lattice.displacement_basis_slope(lattice.wall_coordinate(p.0)))
            .collect();
        let np = lattice.n_params();
        let mut g = DMatrix::zeros(np, np);
        for ((p, b), d) in points.iter().zip(&basis).zip(&slopes) {
            for i in 0..np {
                for j in 0..np {
                    g[(i, j)] += p.1 * (b[i] * b[j] + d[i] * d[j]);
                }
            }
        }
        let gram = g
            .cholesky()
            .ok_or_else(|| Error::Solver("singular displacement Gram matrix".into()))?;
        Ok(Self {
            wall,
            lattice,
            domain,
            points,
            basis,
            slopes,
            gram,
        })
    }

    pub fn wall(&self) -> &WallModel {
        &self.wall
    }

    pub fn lattice(&self) -> &FfdLattice {
        &self.lattice
    }

    /// Unconstrained minimizer of [`Self::misfit`], clipped to the parameter
    /// bounds. The flag reports whether clipping was needed.
    pub fn project(&self, eta_hat: &[f64]) -> Result<(ParameterVector, bool)> {
        self.check(eta_hat)?;
        let np = self.lattice.n_params();
        let mut rhs = DVector::zeros(np);
        for ((p, b), d) in self.points.iter().zip(&self.basis).zip(&self.slopes) {
            let (v, s) = self.wall.p1_value_slope(eta_hat, p.2, p.3);
            for i in 0..np {
                rhs[i] += p.1 * (b[i] * v + d[i] * s);
            }
        }
        let mu = self.gram.solve(&rhs);
        let mut mu = ParameterVector(mu.iter().copied().collect());
        let clipped = self.domain.clip(&mut mu);
        if clipped {
            log::warn!("projected parameters left the bounds and were clipped to {:?}", mu.0);
        }
        Ok((mu, clipped))
    }

    /// `1/2 int (eta(mu) - eta_hat)^2 + (eta(mu)' - eta_hat')^2` over the wall.
    pub fn misfit(&self, mu: &ParameterVector, eta_hat: &[f64]) -> Result<f64> {
        self.check(eta_hat)?;
        if mu.len() != self.lattice.n_params() {
            return Err(Error::Argument(format!("expected {} parameters, got {}", self.lattice.n_params(), mu.len())));
        }
        let mut total = 0.0;
        for ((p, b), d) in self.points.iter().zip(&self.basis).zip(&self.slopes) {
            let (v, s) = self.wall.p1_value_slope(eta_hat, p.2, p.3);
            let eta: f64 = b.iter().zip(&mu.0).map(|(x, m)| x * m).sum();
            let slope: f64 = d.iter().zip(&mu.0).map(|(x, m)| x * m).sum();
            total += p.1 * ((eta - v).powi(2) + (slope - s).powi(2));
        }
        Ok(0.5 * total)
    }

    /// Nodal values of `eta(mu)` on the wall.
    pub fn displacement(&self, mu: &ParameterVector) -> Result<Vec<f64>> {
        self.wall
            .x
            .iter()
            .map(|&x| self.lattice.boundary_displacement(self.lattice.wall_coordinate(x), mu))
            .collect()
    }

    fn check(&self, eta_hat: &[f64]) -> Result<()> {
        if eta_hat.len() != self.wall.n_nodes() {
            return Err(Error::Argument(format!(
                "displacement has {} values, the wall has {} nodes",
                eta_hat.len(),
                self.wall.n_nodes()
            )));
        }
        Ok(())
    }
}

/// Fluid discretization used inside the coupling loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    FullFem,
    ReducedFem,
    Rb,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::FullFem => "full_fem",
            SolverKind::ReducedFem => "reduced_fem",
            SolverKind::Rb => "rb",
        }
    }
}

impl std::str::FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full_fem" => Ok(SolverKind::FullFem),
            "reduced_fem" => Ok(SolverKind::ReducedFem),
            "rb" => Ok(SolverKind::Rb),
            other => Err(Error::Parse(format!("unknown solver kind '{other}' (full_fem, reduced_fem, rb)"))),
        }
    }
}

/// Maps a parameter to finite element fields.
pub trait FluidSolver {
    fn kind(&self) -> SolverKind;
    fn model(&self) -> &FluidModel;
    fn solve(&self, mu: &ParameterVector) -> Result<FluidSolution>;
}

pub struct FullFem<'a>(pub &'a FluidModel);

impl FluidSolver for FullFem<'_> {
    fn kind(&self) -> SolverKind {
        SolverKind::FullFem
    }

    fn model(&self) -> &FluidModel {
        self.0
    }

    fn solve(&self, mu: &ParameterVector) -> Result<FluidSolution> {
        self.0.solve_full(mu)
    }
}

impl FluidSolver for AffineSystem<'_> {
    fn kind(&self) -> SolverKind {
        SolverKind::ReducedFem
    }

    fn model(&self) -> &FluidModel {
        AffineSystem::model(self)
    }

    fn solve(&self, mu: &ParameterVector) -> Result<FluidSolution> {
        AffineSystem::solve(self, mu)
    }
}

pub struct RbSolver<'a> {
    pub fe: &'a FluidModel,
    pub rb: &'a ReducedModel,
}

impl FluidSolver for RbSolver<'_> {
    fn kind(&self) -> SolverKind {
        SolverKind::Rb
    }

    fn model(&self) -> &FluidModel {
        self.fe
    }

    fn solve(&self, mu: &ParameterVector) -> Result<FluidSolution> {
        // a folded geometry has no meaningful reduced solution either
        self.fe.exact_tensors(mu)?;
        self.rb.solve_fe(self.fe, mu)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub omega: f64,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        Self {
            tol: 1e-5,
            max_iter: 500,
            omega: 1.0,
        }
    }
}

impl CouplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Argument(format!("coupling tolerance must be positive, got {}", self.tol)));
        }
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return Err(Error::Argument(format!("relaxation must lie in (0, 1], got {}", self.omega)));
        }
        if self.max_iter == 0 {
            return Err(Error::Argument("max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// One fixed-point iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingStep {
    pub k: usize,
    /// The parameter after the update, `mu^{k+1}`.
    pub mu: ParameterVector,
    pub step_norm: f64,
    /// Misfit of `eta(mu^{k+1})` against this iteration's membrane displacement.
    pub misfit: f64,
    pub strong_residual: f64,
    pub clipped: bool,
    pub fluid_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingState {
    pub solver: SolverKind,
    pub mu0: ParameterVector,
    pub mu: ParameterVector,
    pub eta_hat: Vec<f64>,
    pub converged: bool,
    pub history: Vec<CouplingStep>,
}

impl CouplingState {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }

    pub fn final_misfit(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |s| s.misfit)
    }

    /// Columns `k, mu_1..mu_n, step_norm, J_k, fluid_solve_ms`.
    pub fn trace_csv(&self) -> String {
        let np = self.mu.len();
        let mut out = String::from("k");
        for j in 1..=np {
            let _ = write!(out, ",mu_{j}");
        }
        out.push_str(",step_norm,J_k,fluid_solve_ms\n");
        for s in &self.history {
            let _ = write!(out, "{}", s.k);
            for m in &s.mu.0 {
                let _ = write!(out, ",{m:.12e}");
            }
            let _ = writeln!(out, ",{:.6e},{:.6e},{:.3}", s.step_norm, s.misfit, s.fluid_ms);
        }
        out
    }

    /// Columns `x1, eta, eta_hat` at the wall nodes.
    pub fn shape_csv(&self, projector: &WallProjector) -> Result<String> {
        let eta = projector.displacement(&self.mu)?;
        let mut out = String::from("x1,eta,eta_hat\n");
        for ((x, e), h) in projector.wall().nodes().iter().zip(&eta).zip(&self.eta_hat) {
            let _ = writeln!(out, "{x:.9},{e:.12e},{h:.12e}");
        }
        Ok(out)
    }
}

/// Fixed-point iteration `mu^{k+1} = mu^k + omega (P(eta_hat(mu^k)) - mu^k)`
/// started from `mu0`. Returns the state also when `max_iter` is reached;
/// check [`CouplingState::converged`].
pub fn couple(
    solver: &dyn FluidSolver,
    projector: &WallProjector,
    mu0: &ParameterVector,
    config: &CouplingConfig,
) -> Result<CouplingState> {
    config.validate()?;
    let fe = solver.model();
    let mut state = CouplingState {
        solver: solver.kind(),
        mu0: mu0.clone(),
        mu: mu0.clone(),
        eta_hat: vec![0.0; projector.wall().n_nodes()],
        converged: false,
        history: Vec::new(),
    };
    for k in 0..config.max_iter {
        let start = Instant::now();
        let sol = solver.solve(&state.mu)?;
        let fluid_ms = start.elapsed().as_secs_f64() * 1e3;
        let tau = fe.traction(&sol)?;
        let eta_hat = projector.wall().solve_membrane(&tau)?;
        let (target, clipped) = projector.project(&eta_hat)?;
        let next = ParameterVector(
            state
                .mu
                .0
                .iter()
                .zip(&target.0)
                .map(|(m, t)| m + config.omega * (t - m))
                .collect(),
        );
        let step_norm = next.distance(&state.mu);
        let misfit = projector.misfit(&next, &eta_hat)?;
        let strong_residual = projector.wall().strong_form_residual(projector.lattice(), &next, &tau)?;
        log::debug!("coupling k = {k}: step {step_norm:.3e}, J = {misfit:.3e}");
        state.history.push(CouplingStep {
            k,
            mu: next.clone(),
            step_norm,
            misfit,
            strong_residual,
            clipped,
            fluid_ms,
        });
        state.mu = next;
        state.eta_hat = eta_hat;
        if step_norm < config.tol {
            state.converged = true;
            break;
        }
    }
    if !state.converged {
        log::warn!("coupling stopped after {} iterations without convergence", config.max_iter);
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wall(n: usize, k: f64) -> WallModel {
        WallModel::uniform((0..=n).map(|i| 3.0 * i as f64 / n as f64).collect(), k).unwrap()
    }

    fn projector(n: usize) -> WallProjector {
        WallProjector::new(
            wall(n, 62.5),
            FfdLattice::channel_default(),
            ParameterDomain::uniform(6, -0.1, 0.1).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn membrane_matches_parabola() {
        let w = wall(60, 62.5);
        let eta = w.solve_membrane(&vec![10.0; 61]).unwrap();
        for (x, e) in w.nodes().iter().zip(&eta) {
            let exact = 10.0 * x * (3.0 - x) / (2.0 * 62.5);
            assert!((e - exact).abs() <= 1e-10, "{e} vs {exact}");
        }
        assert!((eta[30] - 0.18).abs() <= 1e-10);
        assert!(eta[1..60].iter().all(|e| *e > 0.0));
        assert!(w.solve_membrane(&vec![0.0; 61]).unwrap().iter().all(|e| *e == 0.0));
    }

    #[test]
    fn membrane_is_linear() {
        let w = wall(17, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f64> = (0..18).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..18).map(|_| rng.random_range(-5.0..5.0)).collect();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - y).collect();
        let (ea, eb, es) = (w.solve_membrane(&a).unwrap(), w.solve_membrane(&b).unwrap(), w.solve_membrane(&sum).unwrap());
        for i in 0..18 {
            assert!((es[i] - (2.0 * ea[i] - eb[i])).abs() <= 1e-14);
        }
    }

    #[test]
    fn wall_validation() {
        assert!(WallModel::uniform(vec![0.0], 1.0).is_err());
        assert!(WallModel::uniform(vec![0.0, 0.0, 1.0], 1.0).is_err());
        assert!(WallModel::uniform(vec![0.0, 1.0], -1.0).is_err());
        assert!(wall(4, 1.0).solve_membrane(&[0.0; 3]).is_err());
    }

    #[test]
    fn projection_of_zero_and_of_span() {
        let p = projector(60);
        let (mu, clipped) = p.project(&vec![0.0; 61]).unwrap();
        assert!(mu.0.iter().all(|m| *m == 0.0) && !clipped);

        // a P1 wall cannot represent eta(mu) exactly, so compare with the
        // projection of the interpolant on a fine wall
        let fine = projector(3000);
        let target = ParameterVector(vec![0.03, -0.02, 0.05, 0.01, -0.04, 0.02]);
        let eta = fine.displacement(&target).unwrap();
        let (mu, _) = fine.project(&eta).unwrap();
        for (a, b) in mu.0.iter().zip(&target.0) {
            assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
        }
        assert!(fine.misfit(&target, &eta).unwrap() <= 1e-9);
    }

    #[test]
    fn projection_minimizes_misfit() {
        let p = projector(40);
        let eta_hat: Vec<f64> = p.wall().nodes().iter().map(|x| 0.005 * (x * (3.0 - x)) * (1.0 - 0.5 * x)).collect();
        let (mu, clipped) = p.project(&eta_hat).unwrap();
        assert!(!clipped);
        let best = p.misfit(&mu, &eta_hat).unwrap();
        assert!(best >= 0.0);
        for j in 0..6 {
            for d in [-1e-4, 1e-4] {
                let mut m = mu.clone();
                m.0[j] += d;
                assert!(p.misfit(&m, &eta_hat).unwrap() >= best);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let domain = ParameterDomain::uniform(6, -0.1, 0.1).unwrap();
        for m in domain.sample_n(&mut rng, 100) {
            assert!(p.misfit(&m, &eta_hat).unwrap() >= best);
        }
    }

    #[test]
    fn projection_clips_out_of_bounds() {
        let p = projector(40);
        let eta_hat: Vec<f64> = p.wall().nodes().iter().map(|x| 0.5 * x * (3.0 - x)).collect();
        let (mu, clipped) = p.project(&eta_hat).unwrap();
        assert!(clipped);
        assert!(mu.0.iter().all(|m| m.abs() <= 0.1));
    }

    #[test]
    fn solver_kind_parsing() {
        for kind in [SolverKind::FullFem, SolverKind::ReducedFem, SolverKind::Rb] {
            assert_eq!(kind.name().parse::<SolverKind>().unwrap(), kind);
        }
        assert!("fem".parse::<SolverKind>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(CouplingConfig::default().validate().is_ok());
        let bad = CouplingConfig {
            omega: 0.0,
            ..CouplingConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
