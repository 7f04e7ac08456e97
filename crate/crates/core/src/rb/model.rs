//! Supremizer-enriched reduced basis built by a greedy loop over a training set.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::affine::{AffineSystem, ThetaMap, Thetas};
use crate::eim::TensorEim;
use crate::error::{Error, Result};
use crate::fem::{FluidModel, FluidSolution};
use crate::ffd::{ParameterDomain, ParameterVector};

const ARTIFACT_KIND: &str = "reduced-model";

/// Error indicator driving the greedy selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GreedyIndicator {
    /// Dual norm of the high-fidelity residual, relative to the dual norm of
    /// the right-hand side.
    Residual,
    /// Relative energy error against precomputed high-fidelity solutions.
    TrueError,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedyConfig {
    pub n_max: usize,
    pub tol: f64,
    pub train_size: usize,
    pub seed: u64,
    pub indicator: GreedyIndicator,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        Self {
            n_max: 30,
            tol: 1e-6,
            train_size: 200,
            seed: 20_240_602,
            indicator: GreedyIndicator::Residual,
        }
    }
}

/// Record of one greedy sweep: the largest indicator over the training set
/// for a model with `n` snapshots, and the parameter picked next.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedyStep {
    pub n: usize,
    pub max_indicator: f64,
    pub picked: Option<ParameterVector>,
}

/// Column kind of the velocity basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VelocityMode {
    Snapshot,
    Supremizer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReducedSolution {
    pub mu: ParameterVector,
    pub velocity: DVector<f64>,
    pub pressure: DVector<f64>,
}

/// Orthonormal reduced spaces with the projected affine terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedModel {
    eim: TensorEim,
    theta_map: ThetaMap,
    n_velocity_fe: usize,
    n_pressure_fe: usize,
    /// H1-orthonormal free-velocity vectors (homogeneous, lifting removed).
    velocity_basis: Vec<Vec<f64>>,
    velocity_modes: Vec<VelocityMode>,
    /// L2-orthonormal pressure vectors.
    pressure_basis: Vec<Vec<f64>>,
    /// Number of velocity columns after each snapshot.
    velocity_counts: Vec<usize>,
    /// Number of pressure columns after each snapshot.
    pressure_counts: Vec<usize>,
    /// Coordinates of each homogeneous snapshot velocity in the velocity basis.
    snapshot_coords: Vec<Vec<f64>>,
    a_red: Vec<DMatrix<f64>>,
    b_red: Vec<DMatrix<f64>>,
    a_lift_red: Vec<DVector<f64>>,
    b_lift_red: Vec<DVector<f64>>,
    f_red: Vec<DVector<f64>>,
    snapshots: Vec<ParameterVector>,
    history: Vec<GreedyStep>,
    config: GreedyConfig,
}

/// Orthogonalizes `v` against `basis` (whose Gram-weighted images are `images`)
/// with two modified Gram-Schmidt passes. Returns the coefficients removed.
fn mgs(v: &mut [f64], basis: &[Vec<f64>], images: &[Vec<f64>]) -> Vec<f64> {
    let mut coeffs = vec![0.0; basis.len()];
    for _ in 0..2 {
        for (k, (b, gb)) in basis.iter().zip(images).enumerate() {
            let c = dot(v, gb);
            coeffs[k] += c;
            for (x, y) in v.iter_mut().zip(b) {
                *x -= c * y;
            }
        }
    }
    coeffs
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Working state of the greedy loop; owns the FE-sized helper vectors.
struct Builder<'s, 'a> {
    system: &'s AffineSystem<'a>,
    model: ReducedModel,
    velocity_images: Vec<Vec<f64>>,
    pressure_images: Vec<Vec<f64>>,
}

impl<'s, 'a> Builder<'s, 'a> {
    fn new(system: &'s AffineSystem<'a>, config: GreedyConfig) -> Self {
        let fe = system.model();
        let model = ReducedModel {
            eim: system.eim().clone(),
            theta_map: system.theta_map().clone(),
            n_velocity_fe: fe.space().n_velocity(),
            n_pressure_fe: fe.space().n_p1(),
            velocity_basis: Vec::new(),
            velocity_modes: Vec::new(),
            pressure_basis: Vec::new(),
            velocity_counts: Vec::new(),
            pressure_counts: Vec::new(),
            snapshot_coords: Vec::new(),
            a_red: vec![DMatrix::zeros(0, 0); system.n_a()],
            b_red: vec![DMatrix::zeros(0, 0); system.n_b()],
            a_lift_red: vec![DVector::zeros(0); system.n_a()],
            b_lift_red: vec![DVector::zeros(0); system.n_b()],
            f_red: vec![DVector::zeros(0); system.f_terms().len()],
            snapshots: Vec::new(),
            history: Vec::new(),
            config,
        };
        Self {
            system,
            model,
            velocity_images: Vec::new(),
            pressure_images: Vec::new(),
        }
    }

    /// Adds a velocity direction; returns `false` if it is numerically dependent.
    fn push_velocity(&mut self, mut v: Vec<f64>, mode: VelocityMode) -> bool {
        let fe = self.system.model();
        let norm0 = fe.velocity_norm(&v);
        if norm0 == 0.0 {
            return false;
        }
        mgs(&mut v, &self.model.velocity_basis, &self.velocity_images);
        let norm = fe.velocity_norm(&v);
        if norm < 1e-10 * norm0 {
            return false;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        let image = fe.apply_y(&v);

        let k = self.model.velocity_basis.len();
        let nv = v.len();
        let mut tmp = vec![0.0; nv];
        for (m, red) in self.model.a_red.iter_mut().enumerate() {
            let mut grown = red.clone().resize(k + 1, k + 1, 0.0);
            // column k: xi_j^T A^m v, row k: v^T A^m xi_j
            tmp.fill(0.0);
            self.system.apply_a_term(m, &v, &mut tmp);
            for (j, xi) in self.model.velocity_basis.iter().chain(std::iter::once(&v)).enumerate() {
                grown[(j, k)] = dot(xi, &tmp);
            }
            let term = &self.system.a_terms()[m].matrix;
            let nf = nv / 2;
            tmp.fill(0.0);
            for c in 0..2 {
                term.mul_transpose_vec_add(1.0, &v[c * nf..(c + 1) * nf], &mut tmp[c * nf..(c + 1) * nf]);
            }
            for (j, xi) in self.model.velocity_basis.iter().enumerate() {
                grown[(k, j)] = dot(xi, &tmp);
            }
            *red = grown;
            let lift = &self.system.a_terms()[m].lifting;
            let l = &mut self.model.a_lift_red[m];
            *l = l.clone().resize_vertically(k + 1, 0.0);
            l[k] = dot(&v, lift);
        }
        let np = self.model.pressure_basis.len();
        let mut ptmp = vec![0.0; self.model.n_pressure_fe];
        for (m, red) in self.model.b_red.iter_mut().enumerate() {
            let mut grown = red.clone().resize(np, k + 1, 0.0);
            ptmp.fill(0.0);
            self.system.apply_b_term(m, &v, &mut ptmp);
            for (i, eta) in self.model.pressure_basis.iter().enumerate() {
                grown[(i, k)] = dot(eta, &ptmp);
            }
            *red = grown;
        }
        for (m, f) in self.system.f_terms().iter().enumerate() {
            let l = &mut self.model.f_red[m];
            *l = l.clone().resize_vertically(k + 1, 0.0);
            l[k] = dot(&v, f);
        }
        self.model.velocity_basis.push(v);
        self.model.velocity_modes.push(mode);
        self.velocity_images.push(image);
        true
    }

    fn push_pressure(&mut self, mut q: Vec<f64>) -> bool {
        let fe = self.system.model();
        let norm0 = fe.pressure_norm(&q);
        if norm0 == 0.0 {
            return false;
        }
        mgs(&mut q, &self.model.pressure_basis, &self.pressure_images);
        let norm = fe.pressure_norm(&q);
        if norm < 1e-10 * norm0 {
            return false;
        }
        q.iter_mut().for_each(|x| *x /= norm);
        let image = fe.mass_p().mul_vec(&q);

        let i = self.model.pressure_basis.len();
        let nvb = self.model.velocity_basis.len();
        let mut tmp = vec![0.0; self.model.n_velocity_fe];
        for (m, red) in self.model.b_red.iter_mut().enumerate() {
            let mut grown = red.clone().resize(i + 1, nvb, 0.0);
            tmp.fill(0.0);
            self.system.apply_bt_term(m, &q, &mut tmp);
            for (j, xi) in self.model.velocity_basis.iter().enumerate() {
                grown[(i, j)] = dot(xi, &tmp);
            }
            *red = grown;
            let lift = &self.system.b_terms()[m].1.lifting;
            let l = &mut self.model.b_lift_red[m];
            *l = l.clone().resize_vertically(i + 1, 0.0);
            l[i] = dot(&q, lift);
        }
        self.model.pressure_basis.push(q);
        self.pressure_images.push(image);
        true
    }

    /// Enriches the spaces with the snapshot at `mu` and its supremizer.
    fn add_snapshot(&mut self, mu: &ParameterVector, snapshot: &FluidSolution) -> Result<()> {
        let fe = self.system.model();
        let u = fe.homogeneous_velocity(snapshot);
        let sup = self.system.supremizer(&snapshot.pressure, mu)?;
        if !self.push_velocity(u.clone(), VelocityMode::Snapshot) {
            log::warn!("snapshot velocity at {:?} is linearly dependent, skipped", mu.0);
        }
        if !self.push_velocity(sup, VelocityMode::Supremizer) {
            log::warn!("supremizer at {:?} is linearly dependent, skipped", mu.0);
        }
        if !self.push_pressure(snapshot.pressure.clone()) {
            log::warn!("snapshot pressure at {:?} is linearly dependent, skipped", mu.0);
        }
        let coords: Vec<f64> = self.velocity_images.iter().map(|g| dot(&u, g)).collect();
        self.model.snapshot_coords.push(coords);
        self.model.velocity_counts.push(self.model.velocity_basis.len());
        self.model.pressure_counts.push(self.model.pressure_basis.len());
        self.model.snapshots.push(mu.clone());
        Ok(())
    }
}

/// Relative residual dual norm of a reduced solution at `mu`.
fn residual_indicator(system: &AffineSystem, rb: &ReducedModel, mu: &ParameterVector, rhs_norm: f64) -> Result<f64> {
    let fe = system.model();
    let theta = system.thetas(mu)?;
    let (f, mut g) = system.rhs(&theta);
    let sol = rb.solve_with_thetas(mu, &theta)?;
    let (u, p) = (rb.velocity_vector(&sol), rb.pressure_vector(&sol));
    let (a, b) = system.operators(&theta);
    let nf = fe.space().n_free();
    let mut ru = f;
    for c in 0..2 {
        a.mul_vec_add(-1.0, &u[c * nf..(c + 1) * nf], &mut ru[c * nf..(c + 1) * nf]);
        b[c].mul_transpose_vec_add(-1.0, &p, &mut ru[c * nf..(c + 1) * nf]);
        b[c].mul_vec_add(-1.0, &u[c * nf..(c + 1) * nf], &mut g);
    }
    fe.deflate_continuity(&mut g);
    Ok(fe.dual_norm(&ru, &g) / rhs_norm)
}

fn rhs_dual_norm(system: &AffineSystem, mu: &ParameterVector) -> Result<f64> {
    let (f, mut g) = system.rhs(&system.thetas(mu)?);
    system.model().deflate_continuity(&mut g);
    let n = system.model().dual_norm(&f, &g);
    Ok(if n > 0.0 { n } else { 1.0 })
}

/// Relative error of `approx` against `truth` in the H1 x L2 energy norm of
/// the homogeneous velocity and the pressure.
pub fn relative_error(fe: &FluidModel, truth: &FluidSolution, approx: &FluidSolution) -> f64 {
    let ut = fe.homogeneous_velocity(truth);
    let ua = fe.homogeneous_velocity(approx);
    let du: Vec<f64> = ut.iter().zip(&ua).map(|(a, b)| a - b).collect();
    let dp: Vec<f64> = truth.pressure.iter().zip(&approx.pressure).map(|(a, b)| a - b).collect();
    let err = (fe.velocity_norm(&du).powi(2) + fe.pressure_norm(&dp).powi(2)).sqrt();
    let scale = (fe.velocity_norm(&ut).powi(2) + fe.pressure_norm(&truth.pressure).powi(2)).sqrt();
    if scale > 0.0 {
        err / scale
    } else {
        err
    }
}

/// Greedy construction over the seeded training set of `config`.
pub fn greedy_build(system: &AffineSystem, domain: &ParameterDomain, config: &GreedyConfig) -> Result<ReducedModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let train = domain.sample_n(&mut rng, config.train_size);
    greedy_build_on(system, &train, config)
}

pub fn greedy_build_on(system: &AffineSystem, train: &[ParameterVector], config: &GreedyConfig) -> Result<ReducedModel> {
    if train.is_empty() {
        return Err(Error::Argument("greedy training set is empty".into()));
    }
    let fe = system.model();
    let mut builder = Builder::new(system, *config);

    enum Cache {
        RhsNorms(Vec<f64>),
        Truths(Vec<FluidSolution>),
    }
    let cache = match config.indicator {
        GreedyIndicator::Residual => Cache::RhsNorms(train.iter().map(|mu| rhs_dual_norm(system, mu)).collect::<Result<_>>()?),
        GreedyIndicator::TrueError => Cache::Truths(train.iter().map(|mu| system.solve(mu)).collect::<Result<_>>()?),
    };

    // the first snapshot is the first training parameter; sweeps start at N = 1
    let mut picked = vec![false; train.len()];
    picked[0] = true;
    let first = match &cache {
        Cache::Truths(truths) => truths[0].clone(),
        Cache::RhsNorms(_) => system.solve(&train[0])?,
    };
    if config.n_max > 0 {
        builder.add_snapshot(&train[0], &first)?;
    }
    loop {
        let rb = &builder.model;
        let mut best = (usize::MAX, -1.0_f64);
        for (i, mu) in train.iter().enumerate() {
            let value = match &cache {
                Cache::RhsNorms(norms) => residual_indicator(system, rb, mu, norms[i])?,
                Cache::Truths(truths) => relative_error(fe, &truths[i], &rb.solve_fe(fe, mu)?),
            };
            if value > best.1 && !picked[i] {
                best = (i, value);
            }
        }
        let n = builder.model.n();
        let done = best.1 <= config.tol || n >= config.n_max || best.0 == usize::MAX;
        log::info!("greedy N = {n}: max indicator {:.3e}", best.1);
        builder.model.history.push(GreedyStep {
            n,
            max_indicator: best.1.max(0.0),
            picked: (!done).then(|| train[best.0].clone()),
        });
        if done {
            break;
        }
        picked[best.0] = true;
        let mu = &train[best.0];
        let snapshot = match &cache {
            Cache::Truths(truths) => truths[best.0].clone(),
            Cache::RhsNorms(_) => system.solve(mu)?,
        };
        builder.add_snapshot(mu, &snapshot)?;
    }
    Ok(builder.model)
}

impl ReducedModel {
    /// Number of snapshots.
    pub fn n(&self) -> usize {
        self.snapshots.len()
    }

    pub fn velocity_dim(&self) -> usize {
        self.velocity_basis.len()
    }

    pub fn pressure_dim(&self) -> usize {
        self.pressure_basis.len()
    }

    pub fn snapshots(&self) -> &[ParameterVector] {
        &self.snapshots
    }

    pub fn history(&self) -> &[GreedyStep] {
        &self.history
    }

    pub fn config(&self) -> &GreedyConfig {
        &self.config
    }

    pub fn eim(&self) -> &TensorEim {
        &self.eim
    }

    pub fn velocity_basis(&self) -> &[Vec<f64>] {
        &self.velocity_basis
    }

    pub fn velocity_modes(&self) -> &[VelocityMode] {
        &self.velocity_modes
    }

    pub fn pressure_basis(&self) -> &[Vec<f64>] {
        &self.pressure_basis
    }

    pub fn reduced_a(&self) -> &[DMatrix<f64>] {
        &self.a_red
    }

    pub fn reduced_b(&self) -> &[DMatrix<f64>] {
        &self.b_red
    }

    /// The model spanned by the first `n` snapshots, identical to stopping the
    /// greedy loop there.
    pub fn truncated(&self, n: usize) -> ReducedModel {
        let n = n.min(self.n());
        let nv = if n == 0 { 0 } else { self.velocity_counts[n - 1] };
        let np = if n == 0 { 0 } else { self.pressure_counts[n - 1] };
        ReducedModel {
            eim: self.eim.clone(),
            theta_map: self.theta_map.clone(),
            n_velocity_fe: self.n_velocity_fe,
            n_pressure_fe: self.n_pressure_fe,
            velocity_basis: self.velocity_basis[..nv].to_vec(),
            velocity_modes: self.velocity_modes[..nv].to_vec(),
            pressure_basis: self.pressure_basis[..np].to_vec(),
            velocity_counts: self.velocity_counts[..n].to_vec(),
            pressure_counts: self.pressure_counts[..n].to_vec(),
            snapshot_coords: self.snapshot_coords[..n].iter().map(|c| c[..c.len().min(nv)].to_vec()).collect(),
            a_red: self.a_red.iter().map(|m| m.view((0, 0), (nv, nv)).into_owned()).collect(),
            b_red: self.b_red.iter().map(|m| m.view((0, 0), (np, nv)).into_owned()).collect(),
            a_lift_red: self.a_lift_red.iter().map(|v| v.rows(0, nv).into_owned()).collect(),
            b_lift_red: self.b_lift_red.iter().map(|v| v.rows(0, np).into_owned()).collect(),
            f_red: self.f_red.iter().map(|v| v.rows(0, nv).into_owned()).collect(),
            snapshots: self.snapshots[..n].to_vec(),
            history: self.history.iter().filter(|s| s.n <= n).cloned().collect(),
            config: self.config,
        }
    }

    pub fn thetas(&self, mu: &ParameterVector) -> Result<Thetas> {
        self.theta_map.evaluate(&self.eim, mu)
    }

    /// Reduced `(A_N, B_N)` at the given coefficients.
    pub fn reduced_operators(&self, theta: &Thetas) -> (DMatrix<f64>, DMatrix<f64>) {
        let (nv, np) = (self.velocity_dim(), self.pressure_dim());
        let mut a = DMatrix::zeros(nv, nv);
        for (m, th) in self.a_red.iter().zip(&theta.a) {
            a += m * *th;
        }
        let mut b = DMatrix::zeros(np, nv);
        for (m, th) in self.b_red.iter().zip(&theta.b) {
            b += m * *th;
        }
        (a, b)
    }

    /// Online solve of the `(nv + np)`-square reduced saddle-point system.
    pub fn solve(&self, mu: &ParameterVector) -> Result<ReducedSolution> {
        let theta = self.thetas(mu)?;
        self.solve_with_thetas(mu, &theta)
    }

    fn solve_with_thetas(&self, mu: &ParameterVector, theta: &Thetas) -> Result<ReducedSolution> {
        let (nv, np) = (self.velocity_dim(), self.pressure_dim());
        let (a, b) = self.reduced_operators(theta);
        let mut k = DMatrix::zeros(nv + np, nv + np);
        k.view_mut((0, 0), (nv, nv)).copy_from(&a);
        k.view_mut((nv, 0), (np, nv)).copy_from(&b);
        k.view_mut((0, nv), (nv, np)).copy_from(&b.transpose());
        let mut rhs = DVector::zeros(nv + np);
        for (l, th) in self.a_lift_red.iter().zip(&theta.a) {
            rhs.rows_mut(0, nv).axpy(-th, l, 1.0);
        }
        for (l, th) in self.f_red.iter().zip(&theta.f) {
            rhs.rows_mut(0, nv).axpy(*th, l, 1.0);
        }
        for (l, th) in self.b_lift_red.iter().zip(&theta.b) {
            rhs.rows_mut(nv, np).axpy(-th, l, 1.0);
        }
        let singular = || Error::SingularReducedSystem { mu: mu.0.clone() };
        let x = k.lu().solve(&rhs).ok_or_else(singular)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(singular());
        }
        Ok(ReducedSolution {
            mu: mu.clone(),
            velocity: x.rows(0, nv).into_owned(),
            pressure: x.rows(nv, np).into_owned(),
        })
    }

    /// Homogeneous free-velocity vector of a reduced solution.
    pub fn velocity_vector(&self, sol: &ReducedSolution) -> Vec<f64> {
        let mut u = vec![0.0; self.n_velocity_fe];
        for (xi, c) in self.velocity_basis.iter().zip(sol.velocity.iter()) {
            for (x, y) in u.iter_mut().zip(xi) {
                *x += c * y;
            }
        }
        u
    }

    pub fn pressure_vector(&self, sol: &ReducedSolution) -> Vec<f64> {
        let mut p = vec![0.0; self.n_pressure_fe];
        for (eta, c) in self.pressure_basis.iter().zip(sol.pressure.iter()) {
            for (x, y) in p.iter_mut().zip(eta) {
                *x += c * y;
            }
        }
        p
    }

    /// Finite element fields (lifting included) of a reduced solution.
    pub fn reconstruct(&self, fe: &FluidModel, sol: &ReducedSolution) -> Result<FluidSolution> {
        if fe.space().n_velocity() != self.n_velocity_fe || fe.space().n_p1() != self.n_pressure_fe {
            return Err(Error::Artifact(format!(
                "reduced model was built for {} velocity and {} pressure unknowns, the mesh has {} and {}",
                self.n_velocity_fe,
                self.n_pressure_fe,
                fe.space().n_velocity(),
                fe.space().n_p1()
            )));
        }
        let u = self.velocity_vector(sol);
        Ok(fe.solution_from_parts(&sol.mu, &u, self.pressure_vector(sol), 0.0))
    }

    /// Online solve followed by reconstruction.
    pub fn solve_fe(&self, fe: &FluidModel, mu: &ParameterVector) -> Result<FluidSolution> {
        self.reconstruct(fe, &self.solve(mu)?)
    }

    /// Reduced inf-sup constant: smallest singular value of `B_N` over the
    /// orthonormal bases (zero when the pressure space is larger).
    pub fn inf_sup(&self, mu: &ParameterVector) -> Result<f64> {
        let (_, b) = self.reduced_operators(&self.thetas(mu)?);
        Ok(min_singular(&b))
    }

    /// Reduced inf-sup constant with the supremizers removed from the
    /// velocity space.
    pub fn inf_sup_without_supremizers(&self, mu: &ParameterVector) -> Result<f64> {
        let (_, b) = self.reduced_operators(&self.thetas(mu)?);
        let nv = self.velocity_dim();
        let mut coords = DMatrix::zeros(nv, self.snapshot_coords.len());
        for (j, c) in self.snapshot_coords.iter().enumerate() {
            for (i, v) in c.iter().enumerate() {
                coords[(i, j)] = *v;
            }
        }
        if coords.ncols() == 0 {
            return Ok(0.0);
        }
        let q = coords.qr().q();
        Ok(min_singular(&(b * q)))
    }

    /// Orthonormality defects `(max |X^T Y X - I|, max |Q^T M Q - I|)`.
    pub fn orthonormality_defect(&self, fe: &FluidModel) -> (f64, f64) {
        let defect = |basis: &[Vec<f64>], inner: &dyn Fn(&[f64], &[f64]) -> f64| {
            let mut worst: f64 = 0.0;
            for (i, x) in basis.iter().enumerate() {
                for (j, y) in basis.iter().enumerate() {
                    let target = if i == j { 1.0 } else { 0.0 };
                    worst = worst.max((inner(x, y) - target).abs());
                }
            }
            worst
        };
        let v = defect(&self.velocity_basis, &|x, y| fe.velocity_inner(x, y));
        let p = defect(&self.pressure_basis, &|x, y| fe.mass_p().bilinear(x, y));
        (v, p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::artifact::save(path, ARTIFACT_KIND, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::artifact::load(path, ARTIFACT_KIND)
    }
}

/// `sqrt(lambda_min(B B^T))` for a `p x v` matrix.
fn min_singular(b: &DMatrix<f64>) -> f64 {
    if b.nrows() == 0 {
        return 0.0;
    }
    let gram = b * b.transpose();
    let eig = SymmetricEigen::new(gram);
    eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min).max(0.0).sqrt()
}

/// Error-decay table: for every `N`, the greedy indicator and the largest
/// relative error over `test` against the given truths.
pub fn error_decay(
    fe: &FluidModel,
    rb: &ReducedModel,
    test: &[ParameterVector],
    truths: &[FluidSolution],
) -> Result<Vec<(usize, f64, f64)>> {
    let mut rows = Vec::new();
    for n in 1..=rb.n() {
        let sub = rb.truncated(n);
        let mut worst: f64 = 0.0;
        for (mu, truth) in test.iter().zip(truths) {
            worst = worst.max(relative_error(fe, truth, &sub.solve_fe(fe, mu)?));
        }
        let train = rb.history.iter().find(|s| s.n == n).map_or(f64::NAN, |s| s.max_indicator);
        rows.push((n, train, worst));
    }
    Ok(rows)
}

pub fn error_decay_csv(rows: &[(usize, f64, f64)]) -> String {
    let mut out = String::from("N,max_train_residual,max_test_error\n");
    for (n, r, e) in rows {
        out.push_str(&format!("{n},{r:.6e},{e:.6e}\n"));
    }
    out
}
