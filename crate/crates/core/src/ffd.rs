//! Free-form deformation of the rest channel.
//!
//! The reference box is mapped affinely onto the unit square, a regular
//! `(L+1) x (M+1)` grid of control points is laid over it and a subset of the
//! control point coordinates is displaced by the parameter vector. Bernstein
//! tensor-product blending turns the displaced lattice into a smooth map
//! `T(x; mu)` of the box onto itself plus a deformation.
//!
//! Because the lattice at rest reproduces the identity and the displacements
//! enter linearly, `T(x; mu) = x + sum_j mu_j * s_j * b_j(Psi(x)) * e_axis(j)`,
//! where `s_j` is the box extent along the displaced axis. The Jacobian is
//! therefore affine in `mu`; the transformation tensors are not.

use nalgebra::{DMatrix, Matrix2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Axis-aligned box containing the rest domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceBox {
    pub x1_min: f64,
    pub x1_max: f64,
    pub x2_min: f64,
    pub x2_max: f64,
}

impl Default for ReferenceBox {
    /// Channel of length 3 cm and half-width 0.5 cm.
    fn default() -> Self {
        Self {
            x1_min: 0.0,
            x1_max: 3.0,
            x2_min: -0.5,
            x2_max: 0.5,
        }
    }
}

impl ReferenceBox {
    pub fn new(x1_min: f64, x1_max: f64, x2_min: f64, x2_max: f64) -> Result<Self> {
        let b = Self {
            x1_min,
            x1_max,
            x2_min,
            x2_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x1_min, self.x1_max, self.x2_min, self.x2_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x1_max <= self.x1_min || self.x2_max <= self.x2_min {
            return Err(Error::Argument(format!("degenerate reference box {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x1_max - self.x1_min
    }

    pub fn height(&self) -> f64 {
        self.x2_max - self.x2_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Extent of the box along `axis` (the scale of `Psi^{-1}` in that direction).
    pub fn extent(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X1 => self.width(),
            Axis::X2 => self.height(),
        }
    }

    /// `Psi`: box to unit square.
    pub fn to_unit(&self, x: Point) -> Point {
        [
            (x[0] - self.x1_min) / self.width(),
            (x[1] - self.x2_min) / self.height(),
        ]
    }

    /// `Psi^{-1}`: unit square to box.
    pub fn from_unit(&self, st: Point) -> Point {
        [
            self.x1_min + self.width() * st[0],
            self.x2_min + self.height() * st[1],
        ]
    }

    /// Closure membership, with a relative slack of 1e-12 for round-off.
    pub fn contains(&self, x: Point) -> bool {
        let e1 = 1e-12 * self.width();
        let e2 = 1e-12 * self.height();
        x[0] >= self.x1_min - e1
            && x[0] <= self.x1_max + e1
            && x[1] >= self.x2_min - e2
            && x[1] <= self.x2_max + e2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X1,
    X2,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X1 => 0,
            Axis::X2 => 1,
        }
    }
}

/// One free displacement component of the control lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MovableComponent {
    pub l: usize,
    pub m: usize,
    pub axis: Axis,
}

/// Ordered FFD parameters `mu`, one entry per movable lattice component,
/// expressed in unit-square coordinates (equal to cm for the default box).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector(pub Vec<f64>);

impl ParameterVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Parses a comma separated list such as `"0.01,0,0,0,0,-0.02"`.
    pub fn parse(text: &str) -> Result<Self> {
        let values = text
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad parameter component '{}'", t.trim())))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse(format!("non-finite parameter in '{text}'")));
        }
        Ok(Self(values))
    }
}

impl From<Vec<f64>> for ParameterVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Box-shaped parameter domain `D`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParameterDomain {
    pub fn uniform(n: usize, lower: f64, upper: f64) -> Result<Self> {
        if !(lower < upper) {
            return Err(Error::Argument(format!(
                "empty parameter interval [{lower}, {upper}]"
            )));
        }
        Ok(Self {
            lower: vec![lower; n],
            upper: vec![upper; n],
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, mu: &ParameterVector) -> bool {
        mu.len() == self.dim()
            && mu
                .0
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn check(&self, mu: &ParameterVector) -> Result<()> {
        if mu.len() != self.dim() {
            return Err(Error::Argument(format!(
                "expected {} parameters, got {}",
                self.dim(),
                mu.len()
            )));
        }
        if !self.contains(mu) {
            return Err(Error::Argument(format!("mu = {:?} outside parameter bounds", mu.0)));
        }
        Ok(())
    }

    /// Clamps `mu` into the box; returns whether any component moved.
    pub fn clip(&self, mu: &mut ParameterVector) -> bool {
        let mut clipped = false;
        for (v, (lo, hi)) in mu.0.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            let c = v.clamp(*lo, *hi);
            if c != *v {
                clipped = true;
                *v = c;
            }
        }
        clipped
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParameterVector {
        ParameterVector(
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(lo, hi)| rng.random_range(*lo..=*hi))
                .collect(),
        )
    }

    pub fn sample_n<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<ParameterVector> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c
}

/// Bernstein polynomial `C(degree, index) (1-s)^(degree-index) s^index`.
pub fn bernstein(degree: usize, index: usize, s: f64) -> Result<f64> {
    if index > degree {
        return Err(Error::Argument(format!(
            "Bernstein index {index} exceeds degree {degree}"
        )));
    }
    Ok(bernstein_unchecked(degree, index, s))
}

#[inline]
fn bernstein_unchecked(degree: usize, index: usize, s: f64) -> f64 {
    binomial(degree, index) * (1.0 - s).powi((degree - index) as i32) * s.powi(index as i32)
}

/// `d/ds b_index^degree(s) = degree (b_{index-1}^{degree-1} - b_index^{degree-1})`.
#[inline]
fn bernstein_derivative(degree: usize, index: usize, s: f64) -> f64 {
    if degree == 0 {
        return 0.0;
    }
    let left = if index >= 1 {
        bernstein_unchecked(degree - 1, index - 1, s)
    } else {
        0.0
    };
    let right = if index < degree {
        bernstein_unchecked(degree - 1, index, s)
    } else {
        0.0
    };
    degree as f64 * (left - right)
}

/// Viscous and pressure-divergence transformation tensors at one point.
///
/// With the Jacobian `J_ij = dT_i/dx_j`, the pulled-back forms read
/// `nu_T = det(J) J^{-1} J^{-T}` contracted as `d_i u_k [nu_T]_ij d_j v_k` and
/// `chi_T = det(J) J^{-T}` (the cofactor matrix) contracted as `[chi_T]_kj d_j v_k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformTensors {
    pub nu: Matrix2<f64>,
    pub chi: Matrix2<f64>,
    pub det: f64,
}

impl TransformTensors {
    pub fn identity() -> Self {
        Self {
            nu: Matrix2::identity(),
            chi: Matrix2::identity(),
            det: 1.0,
        }
    }

    /// `None` when `det J <= 0`.
    pub fn from_jacobian(j: &Matrix2<f64>) -> Option<Self> {
        let det = j[(0, 0)] * j[(1, 1)] - j[(0, 1)] * j[(1, 0)];
        if !(det > 0.0) {
            return None;
        }
        let cof = Matrix2::new(j[(1, 1)], -j[(1, 0)], -j[(0, 1)], j[(0, 0)]);
        // adj(J) = cof^T, nu = adj adj^T / det = cof^T cof / det
        let mut nu = cof.transpose() * cof / det;
        let off = 0.5 * (nu[(0, 1)] + nu[(1, 0)]);
        nu[(0, 1)] = off;
        nu[(1, 0)] = off;
        Some(Self { nu, chi: cof, det })
    }
}

/// Control lattice with its movable components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FfdLattice {
    degree_l: usize,
    degree_m: usize,
    movable: Vec<MovableComponent>,
    bbox: ReferenceBox,
}

impl FfdLattice {
    pub fn new(
        degree_l: usize,
        degree_m: usize,
        movable: Vec<MovableComponent>,
        bbox: ReferenceBox,
    ) -> Result<Self> {
        bbox.validate()?;
        if degree_l == 0 || degree_m == 0 {
            return Err(Error::Argument("lattice degrees must be at least 1".into()));
        }
        for (i, c) in movable.iter().enumerate() {
            if c.l > degree_l || c.m > degree_m {
                return Err(Error::Argument(format!("movable component {c:?} outside lattice")));
            }
            if c.l == 0 || c.l == degree_l {
                return Err(Error::Argument(format!(
                    "control points at l = 0 and l = {degree_l} pin the channel ends and cannot move ({c:?})"
                )));
            }
            if movable[..i].contains(c) {
                return Err(Error::Argument(format!("duplicate movable component {c:?}")));
            }
        }
        Ok(Self {
            degree_l,
            degree_m,
            movable,
            bbox,
        })
    }

    /// The 10 x 2 channel lattice with the six top-row points `l = 2..=7` moving vertically.
    pub fn channel_default() -> Self {
        let movable = (2..=7)
            .map(|l| MovableComponent {
                l,
                m: 1,
                axis: Axis::X2,
            })
            .collect();
        Self::new(9, 1, movable, ReferenceBox::default()).expect("default lattice is valid")
    }

    pub fn degree_l(&self) -> usize {
        self.degree_l
    }

    pub fn degree_m(&self) -> usize {
        self.degree_m
    }

    pub fn movable(&self) -> &[MovableComponent] {
        &self.movable
    }

    pub fn reference_box(&self) -> &ReferenceBox {
        &self.bbox
    }

    pub fn n_params(&self) -> usize {
        self.movable.len()
    }

    /// Rest position `P0_{l,m} = (l/L, m/M)` in unit-square coordinates.
    pub fn base_point(&self, l: usize, m: usize) -> Point {
        [l as f64 / self.degree_l as f64, m as f64 / self.degree_m as f64]
    }

    fn check_inputs(&self, x: Point, mu: &ParameterVector) -> Result<()> {
        if !self.bbox.contains(x) {
            return Err(Error::Argument(format!(
                "point ({}, {}) outside reference box",
                x[0], x[1]
            )));
        }
        if mu.len() != self.n_params() {
            return Err(Error::Argument(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                mu.len()
            )));
        }
        Ok(())
    }

    /// Displaced control point `P0_{l,m} + mu_{l,m}` in unit-square coordinates.
    fn control_point(&self, l: usize, m: usize, mu: &ParameterVector) -> Point {
        let mut p = self.base_point(l, m);
        for (c, v) in self.movable.iter().zip(&mu.0) {
            if c.l == l && c.m == m {
                p[c.axis.index()] += v;
            }
        }
        p
    }

    /// `T(x; mu) = Psi^{-1}( sum_{l,m} b_{l,m}(Psi(x)) (P0_{l,m} + mu_{l,m}) )`.
    pub fn map(&self, x: Point, mu: &ParameterVector) -> Result<Point> {
        self.check_inputs(x, mu)?;
        let [s, t] = self.bbox.to_unit(x);
        let mut y = [0.0; 2];
        for l in 0..=self.degree_l {
            let bl = bernstein_unchecked(self.degree_l, l, s);
            for m in 0..=self.degree_m {
                let w = bl * bernstein_unchecked(self.degree_m, m, t);
                let p = self.control_point(l, m, mu);
                y[0] += w * p[0];
                y[1] += w * p[1];
            }
        }
        Ok(self.bbox.from_unit(y))
    }

    /// Jacobian `J_ij = dT_i/dx_j`, from the Bernstein derivative recurrence.
    pub fn jacobian(&self, x: Point, mu: &ParameterVector) -> Result<Matrix2<f64>> {
        self.check_inputs(x, mu)?;
        let [s, t] = self.bbox.to_unit(x);
        // d(sum b P)/d(s,t) in unit coordinates
        let mut g = Matrix2::<f64>::zeros();
        for l in 0..=self.degree_l {
            let bl = bernstein_unchecked(self.degree_l, l, s);
            let dbl = bernstein_derivative(self.degree_l, l, s);
            for m in 0..=self.degree_m {
                let bm = bernstein_unchecked(self.degree_m, m, t);
                let dbm = bernstein_derivative(self.degree_m, m, t);
                let p = self.control_point(l, m, mu);
                for i in 0..2 {
                    g[(i, 0)] += dbl * bm * p[i];
                    g[(i, 1)] += bl * dbm * p[i];
                }
            }
        }
        let scale = [self.bbox.width(), self.bbox.height()];
        Ok(Matrix2::from_fn(|i, j| scale[i] * g[(i, j)] / scale[j]))
    }

    /// Partial derivatives `dJ/dmu_j` at `x`; `J(x; mu) = I + sum_j mu_j S_j(x)`.
    pub fn jacobian_sensitivities(&self, x: Point) -> Result<Vec<Matrix2<f64>>> {
        if !self.bbox.contains(x) {
            return Err(Error::Argument(format!(
                "point ({}, {}) outside reference box",
                x[0], x[1]
            )));
        }
        let [s, t] = self.bbox.to_unit(x);
        let scale = [self.bbox.width(), self.bbox.height()];
        Ok(self
            .movable
            .iter()
            .map(|c| {
                let grad = [
                    bernstein_derivative(self.degree_l, c.l, s)
                        * bernstein_unchecked(self.degree_m, c.m, t),
                    bernstein_unchecked(self.degree_l, c.l, s)
                        * bernstein_derivative(self.degree_m, c.m, t),
                ];
                let a = c.axis.index();
                let mut d = Matrix2::zeros();
                for j in 0..2 {
                    d[(a, j)] = scale[a] * grad[j] / scale[j];
                }
                d
            })
            .collect())
    }

    pub fn transform_tensors(&self, x: Point, mu: &ParameterVector) -> Result<TransformTensors> {
        let j = self.jacobian(x, mu)?;
        TransformTensors::from_jacobian(&j).ok_or_else(|| Error::DegenerateGeometry {
            point: x,
            mu: mu.0.clone(),
            det: j.determinant(),
        })
    }

    /// `d eta / d mu_j` at arclength coordinate `s in [0,1]` along the top wall.
    pub fn displacement_basis(&self, s: f64) -> Vec<f64> {
        let h = self.bbox.height();
        self.movable
            .iter()
            .map(|c| match c.axis {
                Axis::X2 => {
                    h * bernstein_unchecked(self.degree_l, c.l, s)
                        * bernstein_unchecked(self.degree_m, c.m, 1.0)
                }
                Axis::X1 => 0.0,
            })
            .collect()
    }

    /// `d/dx1 (d eta / d mu_j)` at `s`.
    pub fn displacement_basis_slope(&self, s: f64) -> Vec<f64> {
        let h = self.bbox.height();
        let w = self.bbox.width();
        self.movable
            .iter()
            .map(|c| match c.axis {
                Axis::X2 => {
                    h / w
                        * bernstein_derivative(self.degree_l, c.l, s)
                        * bernstein_unchecked(self.degree_m, c.m, 1.0)
                }
                Axis::X1 => 0.0,
            })
            .collect()
    }

    /// Normal displacement `eta(s; mu)` of the flexible top wall, in cm.
    pub fn boundary_displacement(&self, s: f64, mu: &ParameterVector) -> Result<f64> {
        self.check_wall_inputs(s, mu)?;
        Ok(dot(&self.displacement_basis(s), &mu.0))
    }

    /// `d eta / d x1` at `s`.
    pub fn boundary_slope(&self, s: f64, mu: &ParameterVector) -> Result<f64> {
        self.check_wall_inputs(s, mu)?;
        Ok(dot(&self.displacement_basis_slope(s), &mu.0))
    }

    fn check_wall_inputs(&self, s: f64, mu: &ParameterVector) -> Result<()> {
        if !(-1e-12..=1.0 + 1e-12).contains(&s) {
            return Err(Error::Argument(format!("wall coordinate s = {s} outside [0, 1]")));
        }
        if mu.len() != self.n_params() {
            return Err(Error::Argument(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                mu.len()
            )));
        }
        Ok(())
    }

    /// Rows: points, columns: parameters; entry `(i, j) = d eta(s_i) / d mu_j`.
    pub fn displacement_basis_matrix(&self, points: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(points.len(), self.n_params());
        for (i, &s) in points.iter().enumerate() {
            for (j, v) in self.displacement_basis(s).into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        out
    }

    /// Wall coordinate `s` of a reference abscissa `x1`.
    pub fn wall_coordinate(&self, x1: f64) -> f64 {
        (x1 - self.bbox.x1_min) / self.bbox.width()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn all(v: f64) -> ParameterVector {
        ParameterVector(vec![v; 6])
    }

    #[test]
    fn bernstein_values() {
        assert_eq!(bernstein(1, 0, 0.0).unwrap(), 1.0);
        assert!((bernstein(2, 1, 0.5).unwrap() - 0.5).abs() < 1e-15);
        let sum: f64 = (0..=9).map(|l| bernstein(9, l, 0.37).unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-14);
        assert!(bernstein(3, 4, 0.2).is_err());
    }

    #[test]
    fn derivative_matches_difference_quotient() {
        let h = 1e-6;
        for l in 0..=9 {
            for &s in &[0.1, 0.45, 0.9] {
                let fd = (bernstein_unchecked(9, l, s + h) - bernstein_unchecked(9, l, s - h)) / (2.0 * h);
                assert!((fd - bernstein_derivative(9, l, s)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn corner_displacement_on_bilinear_lattice() {
        let bbox = ReferenceBox::default();
        let lat = FfdLattice::new(
            1,
            1,
            vec![MovableComponent {
                l: 1,
                m: 1,
                axis: Axis::X2,
            }],
            bbox,
        );
        // l = L = 1 is an end column, which the channel lattice forbids
        assert!(lat.is_err());

        // The corner check uses a lattice that allows moving l = L.
        let lat = FfdLattice {
            degree_l: 1,
            degree_m: 1,
            movable: vec![
                MovableComponent { l: 1, m: 1, axis: Axis::X1 },
                MovableComponent { l: 1, m: 1, axis: Axis::X2 },
            ],
            bbox,
        };
        let delta = [0.02, -0.03];
        let y = lat
            .map([bbox.x1_max, bbox.x2_max], &ParameterVector(delta.to_vec()))
            .unwrap();
        assert!((y[0] - (bbox.x1_max + delta[0] * bbox.width())).abs() < 1e-14);
        assert!((y[1] - (bbox.x2_max + delta[1] * bbox.height())).abs() < 1e-14);
    }

    #[test]
    fn midpoint_displacement() {
        let lat = FfdLattice::channel_default();
        let eta = lat.boundary_displacement(0.5, &all(0.05)).unwrap();
        assert!((eta - 0.048046875).abs() < 1e-15);
        let x = lat.map([1.5, 0.5], &all(0.05)).unwrap();
        assert!((x[1] - 0.5 - 0.048046875).abs() < 1e-14);
        assert!((x[0] - 1.5).abs() < 1e-14);
    }

    #[test]
    fn basis_matrix_rows() {
        let lat = FfdLattice::channel_default();
        let m = lat.displacement_basis_matrix(&[0.0, 0.5, 1.0]);
        assert!((m.row(1).sum() - 0.9609375).abs() < 1e-15);
        assert_eq!(m.row(0).iter().map(|v| v.abs()).sum::<f64>(), 0.0);
        assert_eq!(m.row(2).iter().map(|v| v.abs()).sum::<f64>(), 0.0);
        let mu = ParameterVector(vec![0.01, -0.02, 0.03, 0.0, 0.05, -0.07]);
        for &s in &[0.13, 0.5, 0.77] {
            let row = lat.displacement_basis_matrix(&[s]);
            let via_matrix: f64 = (0..6).map(|j| row[(0, j)] * mu.0[j]).sum();
            assert!((via_matrix - lat.boundary_displacement(s, &mu).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn rest_tensors_are_identity() {
        let lat = FfdLattice::channel_default();
        let t = lat.transform_tensors([0.7, -0.1], &ParameterVector::zeros(6)).unwrap();
        assert!((t.nu - Matrix2::identity()).norm() < 1e-14);
        assert!((t.chi - Matrix2::identity()).norm() < 1e-14);
        assert!((t.det - 1.0).abs() < 1e-14);
    }

    #[test]
    fn outside_point_rejected() {
        let lat = FfdLattice::channel_default();
        let mu = ParameterVector::zeros(6);
        assert!(lat.map([3.1, 0.0], &mu).is_err());
        assert!(lat.jacobian([1.0, 0.6], &mu).is_err());
        assert!(lat.map([1.0, 0.0], &ParameterVector::zeros(5)).is_err());
    }

    #[test]
    fn folded_geometry_reports_point() {
        let lat = FfdLattice::channel_default();
        let mu = all(-2.0);
        match lat.transform_tensors([1.5, 0.4], &mu) {
            Err(Error::DegenerateGeometry { point, mu, .. }) => {
                assert_eq!(point, [1.5, 0.4]);
                assert_eq!(mu.len(), 6);
            }
            other => panic!("expected degenerate geometry, got {other:?}"),
        }
    }

    #[test]
    fn sensitivities_reconstruct_jacobian() {
        let lat = FfdLattice::channel_default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dom = ParameterDomain::uniform(6, -0.1, 0.1).unwrap();
        for _ in 0..10 {
            let mu = dom.sample(&mut rng);
            let x = [rng.random_range(0.0..3.0), rng.random_range(-0.5..0.5)];
            let sens = lat.jacobian_sensitivities(x).unwrap();
            let mut j = Matrix2::identity();
            for (s, v) in sens.iter().zip(&mu.0) {
                j += s * *v;
            }
            assert!((j - lat.jacobian(x, &mu).unwrap()).norm() < 1e-13);
        }
    }

    #[test]
    fn lattice_validation() {
        let bbox = ReferenceBox::default();
        let c = MovableComponent { l: 3, m: 1, axis: Axis::X2 };
        assert!(FfdLattice::new(9, 1, vec![c, c], bbox).is_err());
        assert!(FfdLattice::new(9, 1, vec![MovableComponent { l: 10, m: 1, axis: Axis::X2 }], bbox).is_err());
        assert!(ReferenceBox::new(1.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn parameter_parsing_and_clipping() {
        let mu = ParameterVector::parse("0.01, 0,0,0,0,-0.2").unwrap();
        assert_eq!(mu.len(), 6);
        assert!(ParameterVector::parse("0.1,abc").is_err());
        let dom = ParameterDomain::uniform(6, -0.1, 0.1).unwrap();
        assert!(dom.check(&mu).is_err());
        let mut m2 = mu.clone();
        assert!(dom.clip(&mut m2));
        assert_eq!(m2.0[5], -0.1);
        assert!(dom.contains(&m2));
    }
}
