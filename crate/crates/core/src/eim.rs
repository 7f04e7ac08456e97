//! Empirical interpolation of the nonaffine transformation tensors.
//!
//! Every scalar entry of `nu_T`, `chi_T` and `det J` is treated as a field
//! sampled on the quadrature-point set of the finite element model and gets
//! its own greedy basis `zeta_m` with magic points `x_m`. The coefficients of
//! the interpolant follow from a unit lower-triangular solve against field
//! values at the magic points.

use std::fmt;

use nalgebra::Matrix2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::FluidModel;
use crate::ffd::{ParameterDomain, ParameterVector, Point, TransformTensors};

/// A scalar field depending on a parameter and sampled on a fixed point set.
pub trait ParametricField {
    fn n_points(&self) -> usize;

    /// Writes the field values for `mu` into `out` (length `n_points`).
    fn evaluate(&self, mu: &ParameterVector, out: &mut [f64]) -> Result<()>;

    /// Field value at a single point; the default evaluates everywhere.
    fn evaluate_at(&self, mu: &ParameterVector, point: usize) -> Result<f64> {
        let mut buf = vec![0.0; self.n_points()];
        self.evaluate(mu, &mut buf)?;
        Ok(buf[point])
    }
}

/// Greedy EIM basis for one scalar field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EimBasis {
    /// `zeta[m]` holds the values of the m-th interpolation function.
    pub zeta: Vec<Vec<f64>>,
    pub magic_points: Vec<usize>,
    /// Indices into the training set of the greedy picks.
    pub picks: Vec<usize>,
    /// Max training error with `m` terms, `m = 0..=M`.
    pub training_errors: Vec<f64>,
    pub tol: f64,
    pub converged: bool,
}

impl EimBasis {
    pub fn n_terms(&self) -> usize {
        self.zeta.len()
    }

    pub fn achieved_error(&self) -> f64 {
        *self.training_errors.last().unwrap_or(&0.0)
    }

    /// Entry `(i, j)` of the interpolation matrix, `zeta_j(x_i)`.
    pub fn interpolation_matrix(&self) -> Vec<Vec<f64>> {
        self.magic_points
            .iter()
            .map(|&x| self.zeta.iter().map(|z| z[x]).collect())
            .collect()
    }

    /// Coefficients from field values at the magic points (forward substitution).
    pub fn coefficients_from_values(&self, magic_values: &[f64]) -> Vec<f64> {
        let m = self.n_terms();
        let mut theta = vec![0.0; m];
        for i in 0..m {
            let xi = self.magic_points[i];
            let mut s = magic_values[i];
            for j in 0..i {
                s -= self.zeta[j][xi] * theta[j];
            }
            theta[i] = s;
        }
        theta
    }

    pub fn coefficients(&self, field: &dyn ParametricField, mu: &ParameterVector) -> Result<Vec<f64>> {
        let values = self
            .magic_points
            .iter()
            .map(|&x| field.evaluate_at(mu, x))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.coefficients_from_values(&values))
    }

    /// Interpolant values `sum_m theta_m zeta_m` at all points.
    pub fn reconstruct(&self, theta: &[f64]) -> Vec<f64> {
        let n = self.zeta.first().map_or(0, Vec::len);
        let mut out = vec![0.0; n];
        for (z, t) in self.zeta.iter().zip(theta) {
            for (o, v) in out.iter_mut().zip(z) {
                *o += t * v;
            }
        }
        out
    }

    /// The first `m` terms, identical to stopping the greedy loop after `m` steps.
    pub fn truncated(&self, m: usize) -> EimBasis {
        let m = m.min(self.n_terms());
        EimBasis {
            zeta: self.zeta[..m].to_vec(),
            magic_points: self.magic_points[..m].to_vec(),
            picks: self.picks[..m].to_vec(),
            training_errors: self.training_errors[..=m].to_vec(),
            tol: self.tol,
            converged: self.training_errors[m] <= self.tol,
        }
    }

    /// Maximum interpolation error over `test_set` and all points.
    pub fn validate(&self, field: &dyn ParametricField, test_set: &[ParameterVector]) -> Result<f64> {
        let mut values = vec![0.0; field.n_points()];
        let mut worst: f64 = 0.0;
        for mu in test_set {
            field.evaluate(mu, &mut values)?;
            let magic: Vec<f64> = self.magic_points.iter().map(|&x| values[x]).collect();
            let approx = self.reconstruct(&self.coefficients_from_values(&magic));
            if approx.is_empty() {
                worst = values.iter().fold(worst, |w, v| w.max(v.abs()));
            } else {
                worst = values.iter().zip(&approx).fold(worst, |w, (v, a)| w.max((v - a).abs()));
            }
        }
        Ok(worst)
    }
}

fn arg_max_abs(v: &[f64]) -> (usize, f64) {
    v.iter()
        .enumerate()
        .fold((0, 0.0_f64), |(bi, bv), (i, x)| if x.abs() > bv { (i, x.abs()) } else { (bi, bv) })
}

/// Greedy EIM training over `train_set`.
///
/// The residual of every training snapshot is kept and updated in place, so
/// each step costs one pass over the `train_set.len() x n_points` residual
/// table. Returns a basis flagged `converged = false` if `mmax` terms do not
/// reach `tol`.
pub fn eim_train(field: &dyn ParametricField, train_set: &[ParameterVector], tol: f64, mmax: usize) -> Result<EimBasis> {
    if train_set.is_empty() {
        return Err(Error::Argument("EIM training set is empty".into()));
    }
    if !(tol >= 0.0) {
        return Err(Error::Argument(format!("EIM tolerance must be nonnegative, got {tol}")));
    }
    let np = field.n_points();
    let mut residuals = vec![0.0; train_set.len() * np];
    for (mu, row) in train_set.iter().zip(residuals.chunks_mut(np)) {
        field.evaluate(mu, row)?;
    }
    let mut row_max: Vec<(usize, f64)> = residuals.chunks(np).map(arg_max_abs).collect();

    let mut basis = EimBasis {
        zeta: Vec::new(),
        magic_points: Vec::new(),
        picks: Vec::new(),
        training_errors: Vec::new(),
        tol,
        converged: false,
    };
    loop {
        let (pick, &(point, err)) = row_max
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
            .expect("nonempty training set");
        basis.training_errors.push(err);
        if err <= tol {
            basis.converged = true;
            break;
        }
        if basis.n_terms() >= mmax {
            break;
        }
        let scale = residuals[pick * np + point];
        let zeta: Vec<f64> = residuals[pick * np..(pick + 1) * np].iter().map(|r| r / scale).collect();
        for (row, best) in residuals.chunks_mut(np).zip(row_max.iter_mut()) {
            let c = row[point];
            if c != 0.0 {
                for (r, z) in row.iter_mut().zip(&zeta) {
                    *r -= c * z;
                }
            }
            row[point] = 0.0;
            *best = arg_max_abs(row);
        }
        basis.zeta.push(zeta);
        basis.magic_points.push(point);
        basis.picks.push(pick);
    }
    Ok(basis)
}

/// One scalar entry of the transformation tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TensorEntry {
    Nu(usize, usize),
    Chi(usize, usize),
    Det,
}

impl TensorEntry {
    pub const ALL: [TensorEntry; 9] = [
        TensorEntry::Nu(0, 0),
        TensorEntry::Nu(0, 1),
        TensorEntry::Nu(1, 0),
        TensorEntry::Nu(1, 1),
        TensorEntry::Chi(0, 0),
        TensorEntry::Chi(0, 1),
        TensorEntry::Chi(1, 0),
        TensorEntry::Chi(1, 1),
        TensorEntry::Det,
    ];

    pub fn value(self, t: &TransformTensors) -> f64 {
        match self {
            TensorEntry::Nu(i, j) => t.nu[(i, j)],
            TensorEntry::Chi(i, j) => t.chi[(i, j)],
            TensorEntry::Det => t.det,
        }
    }
}

impl fmt::Display for TensorEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorEntry::Nu(i, j) => write!(f, "nu_{}{}", i + 1, j + 1),
            TensorEntry::Chi(i, j) => write!(f, "chi_{}{}", i + 1, j + 1),
            TensorEntry::Det => write!(f, "det"),
        }
    }
}

/// A tensor entry of a [`FluidModel`] viewed as a field on its quadrature points.
pub struct TensorField<'a> {
    pub model: &'a FluidModel,
    pub entry: TensorEntry,
}

impl TensorField<'_> {
    fn tensors_at(&self, mu: &ParameterVector, q: usize) -> Result<TransformTensors> {
        let j = self.model.jacobian_at(q, mu);
        TransformTensors::from_jacobian(&j).ok_or_else(|| Error::DegenerateGeometry {
            point: self.model.space().qp_points()[q],
            mu: mu.0.clone(),
            det: j.determinant(),
        })
    }
}

impl ParametricField for TensorField<'_> {
    fn n_points(&self) -> usize {
        self.model.space().n_qp()
    }

    fn evaluate(&self, mu: &ParameterVector, out: &mut [f64]) -> Result<()> {
        for (q, o) in out.iter_mut().enumerate() {
            *o = self.entry.value(&self.tensors_at(mu, q)?);
        }
        Ok(())
    }

    fn evaluate_at(&self, mu: &ParameterVector, point: usize) -> Result<f64> {
        Ok(self.entry.value(&self.tensors_at(mu, point)?))
    }
}

/// Training design for the tensor interpolation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EimConfig {
    pub tol: f64,
    pub train_size: usize,
    pub seed: u64,
    pub max_terms: usize,
}

impl Default for EimConfig {
    fn default() -> Self {
        Self {
            tol: 1e-5,
            train_size: 200,
            seed: 20_240_601,
            max_terms: 50,
        }
    }
}

/// Basis of one tensor entry plus what is needed to evaluate its coefficients
/// without touching the finite element model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryBasis {
    pub entry: TensorEntry,
    pub basis: EimBasis,
    pub magic_coords: Vec<Point>,
    /// `dJ/dmu_j` at each magic point, column-major 2x2 blocks.
    pub magic_sensitivities: Vec<Vec<[f64; 4]>>,
}

impl EntryBasis {
    fn magic_values(&self, mu: &ParameterVector) -> Result<Vec<f64>> {
        self.magic_sensitivities
            .iter()
            .zip(&self.magic_coords)
            .map(|(sens, x)| {
                let mut j = Matrix2::identity();
                for (s, m) in sens.iter().zip(&mu.0) {
                    j += Matrix2::from_column_slice(s) * *m;
                }
                TransformTensors::from_jacobian(&j)
                    .map(|t| self.entry.value(&t))
                    .ok_or_else(|| Error::DegenerateGeometry {
                        point: *x,
                        mu: mu.0.clone(),
                        det: j.determinant(),
                    })
            })
            .collect()
    }

    pub fn coefficients(&self, mu: &ParameterVector) -> Result<Vec<f64>> {
        Ok(self.basis.coefficients_from_values(&self.magic_values(mu)?))
    }
}

const ARTIFACT_KIND: &str = "tensor-eim";

/// Independent EIM bases for all nine tensor entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEim {
    pub config: EimConfig,
    pub n_params: usize,
    pub n_points: usize,
    pub entries: Vec<EntryBasis>,
}

impl TensorEim {
    /// Samples the training set with `config.seed` and trains every entry.
    pub fn train(model: &FluidModel, domain: &ParameterDomain, config: &EimConfig) -> Result<Self> {
        if config.train_size == 0 {
            return Err(Error::Argument("EIM training set size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let train = domain.sample_n(&mut rng, config.train_size);
        Self::train_on(model, &train, config)
    }

    pub fn train_on(model: &FluidModel, train: &[ParameterVector], config: &EimConfig) -> Result<Self> {
        let mut entries = Vec::with_capacity(TensorEntry::ALL.len());
        for entry in TensorEntry::ALL {
            let field = TensorField { model, entry };
            let basis = eim_train(&field, train, config.tol, config.max_terms)?;
            if !basis.converged {
                log::warn!(
                    "EIM for {entry} stopped at {} terms with error {:.3e} > {:.1e}",
                    basis.n_terms(),
                    basis.achieved_error(),
                    config.tol
                );
            } else {
                log::info!("EIM for {entry}: {} terms, error {:.3e}", basis.n_terms(), basis.achieved_error());
            }
            let magic_coords = basis.magic_points.iter().map(|&q| model.space().qp_points()[q]).collect();
            let magic_sensitivities = basis
                .magic_points
                .iter()
                .map(|&q| {
                    model
                        .sensitivities(q)
                        .iter()
                        .map(|s| [s[(0, 0)], s[(1, 0)], s[(0, 1)], s[(1, 1)]])
                        .collect()
                })
                .collect();
            entries.push(EntryBasis {
                entry,
                basis,
                magic_coords,
                magic_sensitivities,
            });
        }
        Ok(Self {
            config: *config,
            n_params: model.lattice().n_params(),
            n_points: model.space().n_qp(),
            entries,
        })
    }

    pub fn entry(&self, entry: TensorEntry) -> &EntryBasis {
        self.entries.iter().find(|e| e.entry == entry).expect("all entries are trained")
    }

    pub fn converged(&self) -> bool {
        self.entries.iter().all(|e| e.basis.converged)
    }

    /// Error for the first entry that missed the tolerance.
    pub fn require_converged(&self) -> Result<()> {
        match self.entries.iter().find(|e| !e.basis.converged) {
            None => Ok(()),
            Some(e) => Err(Error::EimNotConverged {
                entry: e.entry.to_string(),
                tol: e.basis.tol,
                achieved: e.basis.achieved_error(),
                terms: e.basis.n_terms(),
            }),
        }
    }

    pub fn term_counts(&self) -> Vec<(TensorEntry, usize)> {
        self.entries.iter().map(|e| (e.entry, e.basis.n_terms())).collect()
    }

    /// Coefficients of every entry, in the order of [`TensorEntry::ALL`].
    pub fn coefficients(&self, mu: &ParameterVector) -> Result<Vec<Vec<f64>>> {
        if mu.len() != self.n_params {
            return Err(Error::Argument(format!("expected {} parameters, got {}", self.n_params, mu.len())));
        }
        self.entries.iter().map(|e| e.coefficients(mu)).collect()
    }

    /// Interpolated tensors at every quadrature point.
    pub fn interpolated_tensors(&self, mu: &ParameterVector) -> Result<Vec<TransformTensors>> {
        let coeffs = self.coefficients(mu)?;
        let mut out = vec![
            TransformTensors {
                nu: Matrix2::zeros(),
                chi: Matrix2::zeros(),
                det: 0.0,
            };
            self.n_points
        ];
        for (e, theta) in self.entries.iter().zip(&coeffs) {
            for (z, t) in e.basis.zeta.iter().zip(theta) {
                for (o, v) in out.iter_mut().zip(z) {
                    let target = match e.entry {
                        TensorEntry::Nu(i, j) => &mut o.nu[(i, j)],
                        TensorEntry::Chi(i, j) => &mut o.chi[(i, j)],
                        TensorEntry::Det => &mut o.det,
                    };
                    *target += t * v;
                }
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::artifact::save(path, ARTIFACT_KIND, self)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        crate::artifact::load(path, ARTIFACT_KIND)
    }

    /// Max interpolation error of each entry over `test_set`.
    pub fn validate(&self, model: &FluidModel, test_set: &[ParameterVector]) -> Result<Vec<(TensorEntry, f64)>> {
        self.entries
            .iter()
            .map(|e| {
                let field = TensorField { model, entry: e.entry };
                Ok((e.entry, e.basis.validate(&field, test_set)?))
            })
            .collect()
    }
}
