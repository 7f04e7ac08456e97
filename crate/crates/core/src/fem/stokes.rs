use std::fmt::Write as _;

use nalgebra::{DMatrix, Matrix2, SymmetricEigen, Vector2};

use super::space::{TaylorHoodSpace, CONSTRAINED};
use super::PhysicalConstants;
use crate::error::{Error, Result};
use crate::ffd::{FfdLattice, ParameterVector, Point, TransformTensors};
use crate::mesh::{EdgeTag, Mesh};
use crate::quadrature::gauss_legendre;
use crate::sparse::{solve_tridiagonal, CsrMatrix, SparseCholesky, SymmetricPattern};

/// Which symmetric operator fills the velocity-velocity block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VelocityBlock {
    /// `nu * int grad(u) : nu_T grad(v)`, the pulled-back viscous form.
    Viscous,
    /// The reference H1 inner product, used for inf-sup computations.
    H1Gram,
}

/// Finite element solution on the reference channel.
#[derive(Clone, Debug)]
pub struct FluidSolution {
    pub mu: ParameterVector,
    /// `[u1, u2]` over all scalar P2 dofs, lifting included.
    pub velocity: Vec<f64>,
    /// P1 pressure at mesh vertices, mean zero over the rest domain.
    pub pressure: Vec<f64>,
    /// Relative residual of the linear system that produced the solution.
    pub linear_residual: f64,
}

/// Scalar diagnostics printed by the solve command.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowSummary {
    pub flow_rate: f64,
    pub pressure_drop: f64,
    pub mean_pressure: f64,
    pub traction_min: f64,
    pub traction_max: f64,
}

#[derive(Default)]
struct Element {
    a: [[f64; 6]; 6],
    b: [[[f64; 6]; 3]; 2],
    f: [[f64; 6]; 2],
}

/// Saddle point system as unsorted triplets.
pub struct SaddleSystem {
    pub n: usize,
    pub triplets: Vec<(usize, usize, f64)>,
    pub rhs: Vec<f64>,
}

/// The discrete parametric Stokes model: space, geometry, lifting and the
/// parameter-independent Gram matrices.
pub struct FluidModel {
    space: TaylorHoodSpace,
    lattice: FfdLattice,
    constants: PhysicalConstants,
    sensitivities: Vec<Matrix2<f64>>,
    lifting: Vec<f64>,
    y_free: CsrMatrix,
    y_chol: SparseCholesky,
    mass_p: CsrMatrix,
    mass_p_chol: SparseCholesky,
    pressure_weights: Vec<f64>,
    wall_vertices: Vec<usize>,
}

impl FluidModel {
    pub fn new(mesh: Mesh, lattice: FfdLattice, constants: PhysicalConstants, quadrature_degree: usize) -> Result<Self> {
        constants.validate()?;
        let bbox = *lattice.reference_box();
        if let Some(x) = mesh.nodes.iter().find(|x| !bbox.contains(**x)) {
            return Err(Error::Argument(format!("mesh node ({}, {}) outside the lattice box", x[0], x[1])));
        }
        let space = TaylorHoodSpace::new(mesh, quadrature_degree)?;
        let mut sensitivities = Vec::with_capacity(space.n_qp() * lattice.n_params());
        for x in space.qp_points() {
            sensitivities.extend(lattice.jacobian_sensitivities(*x)?);
        }

        let center = 0.5 * (bbox.x2_min + bbox.x2_max);
        let half = 0.5 * bbox.height();
        let n = space.n_p2();
        let mut lifting = vec![0.0; 2 * n];
        for (d, x) in space.dof_coords().iter().enumerate() {
            let r = (x[1] - center) / half;
            lifting[d] = constants.v0 * (1.0 - r * r);
        }

        let mut y_full = CsrMatrix::zeros(space.p2_pattern().clone());
        let mut mass_p = CsrMatrix::zeros(space.p1_pattern().clone());
        let mut pressure_weights = vec![0.0; space.n_p1()];
        let nq = space.qp_per_triangle();
        for t in 0..space.mesh().n_triangles() {
            let dofs = *space.element_dofs(t);
            let verts = space.mesh().triangles[t];
            for k in 0..nq {
                let q = t * nq + k;
                let w = space.qp_weight(q);
                let g = space.qp_grad_p2(q);
                let phi = space.rule_p2(k);
                let psi = space.rule_p1(k);
                for a in 0..6 {
                    for b in 0..6 {
                        let v = w * (g[a][0] * g[b][0] + g[a][1] * g[b][1] + phi[a] * phi[b]);
                        let pos = space.p2_pattern().find(dofs[a], dofs[b]).expect("element entry");
                        y_full.values_mut()[pos] += v;
                    }
                }
                for r in 0..3 {
                    pressure_weights[verts[r]] += w * psi[r];
                    for s in 0..3 {
                        let pos = space.p1_pattern().find(verts[r], verts[s]).expect("element entry");
                        mass_p.values_mut()[pos] += w * psi[r] * psi[s];
                    }
                }
            }
        }
        let free = space.free_index();
        let nf = space.n_free();
        let (y_pattern, y_map) = space.p2_pattern().restrict(free, free, nf, nf);
        let mut y_free = CsrMatrix::zeros(std::sync::Arc::new(y_pattern));
        for (k, &m) in y_map.iter().enumerate() {
            if m != CONSTRAINED {
                y_free.values_mut()[m] = y_full.values()[k];
            }
        }
        let y_chol = SparseCholesky::new(&y_free)?;
        let mass_p_chol = SparseCholesky::new(&mass_p)?;
        let wall_vertices = space.mesh().wall_vertices();

        Ok(Self {
            space,
            lattice,
            constants,
            sensitivities,
            lifting,
            y_free,
            y_chol,
            mass_p,
            mass_p_chol,
            pressure_weights,
            wall_vertices,
        })
    }

    pub fn space(&self) -> &TaylorHoodSpace {
        &self.space
    }

    pub fn lattice(&self) -> &FfdLattice {
        &self.lattice
    }

    pub fn constants(&self) -> &PhysicalConstants {
        &self.constants
    }

    /// Poiseuille interpolant `[u1, u2]` over all P2 dofs.
    pub fn lifting(&self) -> &[f64] {
        &self.lifting
    }

    /// Scalar H1 Gram matrix on free P2 dofs (one velocity component).
    pub fn y_free(&self) -> &CsrMatrix {
        &self.y_free
    }

    pub fn y_cholesky(&self) -> &SparseCholesky {
        &self.y_chol
    }

    /// P1 mass matrix.
    pub fn mass_p(&self) -> &CsrMatrix {
        &self.mass_p
    }

    pub fn mass_p_cholesky(&self) -> &SparseCholesky {
        &self.mass_p_chol
    }

    /// `int psi_a` over the rest domain for each pressure dof.
    pub fn pressure_weights(&self) -> &[f64] {
        &self.pressure_weights
    }

    /// `dJ/dmu_j` at quadrature point `q`.
    pub fn sensitivities(&self, q: usize) -> &[Matrix2<f64>] {
        let np = self.lattice.n_params();
        &self.sensitivities[q * np..(q + 1) * np]
    }

    /// Jacobian of the deformation at quadrature point `q`.
    pub fn jacobian_at(&self, q: usize, mu: &ParameterVector) -> Matrix2<f64> {
        let mut j = Matrix2::identity();
        for (s, m) in self.sensitivities(q).iter().zip(&mu.0) {
            j += s * *m;
        }
        j
    }

    fn check_mu(&self, mu: &ParameterVector) -> Result<()> {
        if mu.len() != self.lattice.n_params() {
            return Err(Error::Argument(format!(
                "expected {} parameters, got {}",
                self.lattice.n_params(),
                mu.len()
            )));
        }
        Ok(())
    }

    /// Transformation tensors at every quadrature point.
    pub fn exact_tensors(&self, mu: &ParameterVector) -> Result<Vec<TransformTensors>> {
        self.check_mu(mu)?;
        (0..self.space.n_qp())
            .map(|q| {
                let j = self.jacobian_at(q, mu);
                TransformTensors::from_jacobian(&j).ok_or_else(|| Error::DegenerateGeometry {
                    point: self.space.qp_points()[q],
                    mu: mu.0.clone(),
                    det: j.determinant(),
                })
            })
            .collect()
    }

    fn element(&self, t: usize, tensors: &[TransformTensors], block: VelocityBlock) -> Element {
        let space = &self.space;
        let nq = space.qp_per_triangle();
        let force = self.constants.force;
        let has_force = force.iter().any(|f| *f != 0.0);
        let mut e = Element::default();
        for k in 0..nq {
            let q = t * nq + k;
            let w = space.qp_weight(q);
            let g = space.qp_grad_p2(q);
            let phi = space.rule_p2(k);
            let psi = space.rule_p1(k);
            let tt = &tensors[q];
            match block {
                VelocityBlock::Viscous => {
                    let s = self.constants.nu * w;
                    for a in 0..6 {
                        let ta = tt.nu * Vector2::new(g[a][0], g[a][1]);
                        for b in 0..6 {
                            e.a[a][b] += s * (g[b][0] * ta[0] + g[b][1] * ta[1]);
                        }
                    }
                }
                VelocityBlock::H1Gram => {
                    for a in 0..6 {
                        for b in 0..6 {
                            e.a[a][b] += w * (g[a][0] * g[b][0] + g[a][1] * g[b][1] + phi[a] * phi[b]);
                        }
                    }
                }
            }
            for c in 0..2 {
                for a in 0..6 {
                    let div = tt.chi[(c, 0)] * g[a][0] + tt.chi[(c, 1)] * g[a][1];
                    for r in 0..3 {
                        e.b[c][r][a] -= w * psi[r] * div;
                    }
                    if has_force {
                        e.f[c][a] += w * tt.det * force[c] * phi[a];
                    }
                }
            }
        }
        e
    }

    /// Unknown layout: `[u1 free, u2 free, p, lambda]`.
    pub fn system_size(&self) -> usize {
        self.space.n_velocity() + self.space.n_p1() + 1
    }

    pub fn assemble(&self, tensors: &[TransformTensors], block: VelocityBlock) -> SaddleSystem {
        let space = &self.space;
        let (n, nf, nv) = (space.n_p2(), space.n_free(), space.n_p1());
        let free = space.free_index();
        let p_off = 2 * nf;
        let lam = p_off + nv;
        let size = lam + 1;
        let mut triplets = Vec::with_capacity(space.mesh().n_triangles() * 160 + 2 * nv);
        let mut rhs = vec![0.0; size];
        for t in 0..space.mesh().n_triangles() {
            let e = self.element(t, tensors, block);
            let dofs = space.element_dofs(t);
            let verts = space.mesh().triangles[t];
            for c in 0..2 {
                for a in 0..6 {
                    let fa = free[dofs[a]];
                    if fa == CONSTRAINED {
                        continue;
                    }
                    let row = c * nf + fa;
                    for b in 0..6 {
                        let v = e.a[a][b];
                        let fb = free[dofs[b]];
                        if fb != CONSTRAINED {
                            triplets.push((row, c * nf + fb, v));
                        }
                        rhs[row] -= v * self.lifting[c * n + dofs[b]];
                    }
                    rhs[row] += e.f[c][a];
                }
            }
            for r in 0..3 {
                let prow = p_off + verts[r];
                for c in 0..2 {
                    for a in 0..6 {
                        let v = e.b[c][r][a];
                        let fa = free[dofs[a]];
                        if fa != CONSTRAINED {
                            triplets.push((prow, c * nf + fa, v));
                            triplets.push((c * nf + fa, prow, v));
                        }
                        rhs[prow] -= v * self.lifting[c * n + dofs[a]];
                    }
                }
            }
        }
        for (v, w) in self.pressure_weights.iter().enumerate() {
            triplets.push((p_off + v, lam, *w));
            triplets.push((lam, p_off + v, *w));
        }
        SaddleSystem { n: size, triplets, rhs }
    }

    /// Residual `rhs - K x` of the pulled-back Stokes equations for free velocity
    /// `u` and pressure `p`, split into momentum and continuity parts. The
    /// multiplier takes the value that balances the continuity residual, i.e.
    /// the component of `r_p` along the pressure weights is removed.
    pub fn residual(&self, tensors: &[TransformTensors], u: &[f64], p: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let space = &self.space;
        let (n, nf, nv) = (space.n_p2(), space.n_free(), space.n_p1());
        let free = space.free_index();
        let mut ru = vec![0.0; 2 * nf];
        let mut rp = vec![0.0; nv];
        // current velocity on element dofs, lifting included
        let full = space.expand_velocity(u, &self.lifting);
        for t in 0..space.mesh().n_triangles() {
            let e = self.element(t, tensors, VelocityBlock::Viscous);
            let dofs = space.element_dofs(t);
            let verts = space.mesh().triangles[t];
            let pl = verts.map(|v| p[v]);
            for c in 0..2 {
                let ul: [f64; 6] = std::array::from_fn(|a| full[c * n + dofs[a]]);
                for a in 0..6 {
                    let fa = free[dofs[a]];
                    if fa != CONSTRAINED {
                        let mut s = e.f[c][a];
                        for b in 0..6 {
                            s -= e.a[a][b] * ul[b];
                        }
                        for r in 0..3 {
                            s -= e.b[c][r][a] * pl[r];
                        }
                        ru[c * nf + fa] += s;
                    }
                }
                for r in 0..3 {
                    let mut s = 0.0;
                    for a in 0..6 {
                        s += e.b[c][r][a] * ul[a];
                    }
                    rp[verts[r]] -= s;
                }
            }
        }
        self.deflate_continuity(&mut rp);
        (ru, rp)
    }

    /// Removes the multiple of the pressure weights that the mean-value
    /// multiplier absorbs, so the continuity residual sums to zero.
    pub fn deflate_continuity(&self, rp: &mut [f64]) {
        let w = &self.pressure_weights;
        let lambda = rp.iter().sum::<f64>() / w.iter().sum::<f64>();
        rp.iter_mut().zip(w).for_each(|(r, w)| *r -= lambda * w);
    }

    /// `sqrt(r_u^T Y^-1 r_u + r_p^T M^-1 r_p)`.
    pub fn dual_norm(&self, ru: &[f64], rp: &[f64]) -> f64 {
        let nf = self.space.n_free();
        let mut total = 0.0;
        for c in 0..2 {
            let r = &ru[c * nf..(c + 1) * nf];
            let z = self.y_chol.solve(r);
            total += dot(r, &z);
        }
        let z = self.mass_p_chol.solve(rp);
        total += dot(rp, &z);
        total.max(0.0).sqrt()
    }

    /// H1 norm of a free velocity vector.
    pub fn velocity_norm(&self, u: &[f64]) -> f64 {
        let nf = self.space.n_free();
        (0..2)
            .map(|c| {
                let x = &u[c * nf..(c + 1) * nf];
                self.y_free.bilinear(x, x)
            })
            .sum::<f64>()
            .max(0.0)
            .sqrt()
    }

    /// `(u, v)_Y` for free velocity vectors.
    pub fn velocity_inner(&self, u: &[f64], v: &[f64]) -> f64 {
        let nf = self.space.n_free();
        (0..2)
            .map(|c| self.y_free.bilinear(&u[c * nf..(c + 1) * nf], &v[c * nf..(c + 1) * nf]))
            .sum()
    }

    /// `Y u` for a free velocity vector.
    pub fn apply_y(&self, u: &[f64]) -> Vec<f64> {
        let nf = self.space.n_free();
        let mut out = Vec::with_capacity(2 * nf);
        for c in 0..2 {
            out.extend(self.y_free.mul_vec(&u[c * nf..(c + 1) * nf]));
        }
        out
    }

    /// Solves `Y x = r` blockwise.
    pub fn solve_y(&self, r: &[f64]) -> Vec<f64> {
        let nf = self.space.n_free();
        let mut out = Vec::with_capacity(2 * nf);
        for c in 0..2 {
            out.extend(self.y_chol.solve(&r[c * nf..(c + 1) * nf]));
        }
        out
    }

    pub fn pressure_norm(&self, p: &[f64]) -> f64 {
        self.mass_p.bilinear(p, p).max(0.0).sqrt()
    }

    /// Packs free velocity and pressure into a solution.
    pub fn solution_from_parts(&self, mu: &ParameterVector, u: &[f64], p: Vec<f64>, linear_residual: f64) -> FluidSolution {
        FluidSolution {
            mu: mu.clone(),
            velocity: self.space.expand_velocity(u, &self.lifting),
            pressure: p,
            linear_residual,
        }
    }

    /// Assembles with the given tensors and solves with a fresh sparse
    /// factorization (symbolic analysis included).
    pub fn solve_with_tensors(&self, mu: &ParameterVector, tensors: &[TransformTensors]) -> Result<FluidSolution> {
        let sys = self.assemble(tensors, VelocityBlock::Viscous);
        let factor = SymmetricPattern::factorize_triplets(sys.n, self.space.n_velocity(), &sys.triplets)?;
        let mut x = sys.rhs.clone();
        factor.solve_in_place(&mut x);
        let residual = relative_residual(&sys, &x);
        let nf = self.space.n_free();
        let nv = self.space.n_p1();
        Ok(self.solution_from_parts(mu, &x[..2 * nf], x[2 * nf..2 * nf + nv].to_vec(), residual))
    }

    /// High-fidelity solve with the exact transformation tensors.
    pub fn solve_full(&self, mu: &ParameterVector) -> Result<FluidSolution> {
        let tensors = self.exact_tensors(mu)?;
        self.solve_with_tensors(mu, &tensors)
    }

    /// Free-dof velocity of a solution with the lifting removed.
    pub fn homogeneous_velocity(&self, sol: &FluidSolution) -> Vec<f64> {
        let shifted: Vec<f64> = sol.velocity.iter().zip(&self.lifting).map(|(u, l)| u - l).collect();
        self.space.restrict_velocity(&shifted)
    }

    /// Net outflow `int u . n` over the deformed boundary, via Nanson's formula.
    pub fn boundary_flux(&self, sol: &FluidSolution) -> Result<f64> {
        self.check_mu(&sol.mu)?;
        let (gx, gw) = gauss_legendre(3);
        let mesh = self.space.mesh();
        let n = self.space.n_p2();
        let mut flux = 0.0;
        for edge in &mesh.edges {
            let normal = match edge.tag {
                Some(EdgeTag::Inflow) => [-1.0, 0.0],
                Some(EdgeTag::Outflow) => [1.0, 0.0],
                Some(EdgeTag::BottomWall) => [0.0, -1.0],
                Some(EdgeTag::FlexibleWall) => [0.0, 1.0],
                None => continue,
            };
            let (t, la, lb) = self.edge_locals(edge.triangles.0, edge.vertices);
            let [xa, xb] = edge.vertices.map(|v| mesh.nodes[v]);
            let len = ((xb[0] - xa[0]).powi(2) + (xb[1] - xa[1]).powi(2)).sqrt();
            for (s, w) in gx.iter().zip(&gw) {
                let mut l = [0.0; 3];
                l[la] = 1.0 - s;
                l[lb] = *s;
                let x = [xa[0] + s * (xb[0] - xa[0]), xa[1] + s * (xb[1] - xa[1])];
                let j = self.lattice.jacobian(x, &sol.mu)?;
                let cof = Matrix2::new(j[(1, 1)], -j[(1, 0)], -j[(0, 1)], j[(0, 0)]);
                let nn = cof * Vector2::new(normal[0], normal[1]);
                let (u1, _) = self.space.eval_p2(t, l, &sol.velocity[..n]);
                let (u2, _) = self.space.eval_p2(t, l, &sol.velocity[n..]);
                flux += w * len * (u1 * nn[0] + u2 * nn[1]);
            }
        }
        Ok(flux)
    }

    fn edge_locals(&self, t: usize, vertices: [usize; 2]) -> (usize, usize, usize) {
        let tri = self.space.mesh().triangles[t];
        let pos = |v: usize| tri.iter().position(|&w| w == v).expect("edge vertex in triangle");
        (t, pos(vertices[0]), pos(vertices[1]))
    }

    /// Vertices on the flexible wall, by increasing `x1`.
    pub fn wall_vertices(&self) -> &[usize] {
        &self.wall_vertices
    }

    pub fn wall_x1(&self) -> Vec<f64> {
        self.wall_vertices.iter().map(|&v| self.space.mesh().nodes[v][0]).collect()
    }

    /// L2 projection onto the P1 trace space of the wall, given the load
    /// vector `int f phi_i` at the wall vertices.
    fn wall_mass_solve(&self, load: &[f64]) -> Vec<f64> {
        let x = self.wall_x1();
        let n = x.len();
        let mut diag = vec![0.0; n];
        let mut off = vec![0.0; n.saturating_sub(1)];
        for i in 0..n.saturating_sub(1) {
            let h = x[i + 1] - x[i];
            diag[i] += h / 3.0;
            diag[i + 1] += h / 3.0;
            off[i] = h / 6.0;
        }
        solve_tridiagonal(&off, &diag, &off, load)
    }

    /// L2 projection of a function of `x1` onto the P1 wall trace space.
    pub fn project_to_wall(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let x = self.wall_x1();
        let (gx, gw) = gauss_legendre(4);
        let mut load = vec![0.0; x.len()];
        for i in 0..x.len().saturating_sub(1) {
            let h = x[i + 1] - x[i];
            for (s, w) in gx.iter().zip(&gw) {
                let v = f(x[i] + s * h);
                load[i] += w * h * (1.0 - s) * v;
                load[i + 1] += w * h * s * v;
            }
        }
        self.wall_mass_solve(&load)
    }

    /// Normal traction `tau = [p n - nu (grad u + grad u^T) n] . e2` on the
    /// deformed flexible wall, L2-projected onto P1 at the wall vertices.
    pub fn traction(&self, sol: &FluidSolution) -> Result<Vec<f64>> {
        self.check_mu(&sol.mu)?;
        let mesh = self.space.mesh();
        let n = self.space.n_p2();
        let mut index = vec![usize::MAX; mesh.n_nodes()];
        for (i, &v) in self.wall_vertices.iter().enumerate() {
            index[v] = i;
        }
        let (gx, gw) = gauss_legendre(4);
        let mut load = vec![0.0; self.wall_vertices.len()];
        for (_, edge) in mesh.edges_with_tag(EdgeTag::FlexibleWall) {
            let (t, la, lb) = self.edge_locals(edge.triangles.0, edge.vertices);
            let [xa, xb] = edge.vertices.map(|v| mesh.nodes[v]);
            let [ia, ib] = edge.vertices.map(|v| index[v]);
            let [pa, pb] = edge.vertices.map(|v| sol.pressure[v]);
            let len = ((xb[0] - xa[0]).powi(2) + (xb[1] - xa[1]).powi(2)).sqrt();
            for (s, w) in gx.iter().zip(&gw) {
                let mut l = [0.0; 3];
                l[la] = 1.0 - s;
                l[lb] = *s;
                let x = [xa[0] + s * (xb[0] - xa[0]), xa[1] + s * (xb[1] - xa[1])];
                let j = self.lattice.jacobian(x, &sol.mu)?;
                let jinv = j.try_inverse().filter(|_| j.determinant() > 0.0).ok_or_else(|| {
                    Error::DegenerateGeometry {
                        point: x,
                        mu: sol.mu.0.clone(),
                        det: j.determinant(),
                    }
                })?;
                let (_, g1) = self.space.eval_p2(t, l, &sol.velocity[..n]);
                let (_, g2) = self.space.eval_p2(t, l, &sol.velocity[n..]);
                let grad_ref = Matrix2::new(g1[0], g1[1], g2[0], g2[1]);
                // physical gradient: d u_k / d y_l = sum_i d u_k / d x_i (J^-1)_il
                let grad = grad_ref * jinv;
                let normal = (jinv.transpose() * Vector2::new(0.0, 1.0)).normalize();
                let p = (1.0 - s) * pa + s * pb;
                let mut viscous = 0.0;
                for i in 0..2 {
                    viscous += (grad[(1, i)] + grad[(i, 1)]) * normal[i];
                }
                let tau = p * normal[1] - self.constants.nu * viscous;
                load[ia] += w * len * (1.0 - s) * tau;
                load[ib] += w * len * s * tau;
            }
        }
        Ok(self.wall_mass_solve(&load))
    }

    /// Reference-domain gradient of the P1 pressure on triangle `t`.
    pub fn pressure_gradient(&self, t: usize, pressure: &[f64]) -> [f64; 2] {
        let g = self.space.grad_p1(t);
        let verts = self.space.mesh().triangles[t];
        let mut out = [0.0; 2];
        for r in 0..3 {
            out[0] += pressure[verts[r]] * g[r][0];
            out[1] += pressure[verts[r]] * g[r][1];
        }
        out
    }

    fn boundary_pressure_mean(&self, sol: &FluidSolution, tag: EdgeTag) -> f64 {
        let mesh = self.space.mesh();
        let (mut total, mut length) = (0.0, 0.0);
        for (_, edge) in mesh.edges_with_tag(tag) {
            let [a, b] = edge.vertices;
            let h = ((mesh.nodes[a][0] - mesh.nodes[b][0]).powi(2) + (mesh.nodes[a][1] - mesh.nodes[b][1]).powi(2)).sqrt();
            total += 0.5 * h * (sol.pressure[a] + sol.pressure[b]);
            length += h;
        }
        total / length
    }

    pub fn summary(&self, sol: &FluidSolution) -> Result<FlowSummary> {
        let mesh = self.space.mesh();
        let n = self.space.n_p2();
        let (gx, gw) = gauss_legendre(3);
        let mut flow_rate = 0.0;
        for (_, edge) in mesh.edges_with_tag(EdgeTag::Inflow) {
            let (t, la, lb) = self.edge_locals(edge.triangles.0, edge.vertices);
            let [xa, xb] = edge.vertices.map(|v| mesh.nodes[v]);
            let len = ((xb[0] - xa[0]).powi(2) + (xb[1] - xa[1]).powi(2)).sqrt();
            for (s, w) in gx.iter().zip(&gw) {
                let mut l = [0.0; 3];
                l[la] = 1.0 - s;
                l[lb] = *s;
                flow_rate += w * len * self.space.eval_p2(t, l, &sol.velocity[..n]).0;
            }
        }
        let tau = self.traction(sol)?;
        let area = mesh.area();
        Ok(FlowSummary {
            flow_rate,
            pressure_drop: self.boundary_pressure_mean(sol, EdgeTag::Inflow) - self.boundary_pressure_mean(sol, EdgeTag::Outflow),
            mean_pressure: dot(&self.pressure_weights, &sol.pressure) / area,
            traction_min: tau.iter().copied().fold(f64::INFINITY, f64::min),
            traction_max: tau.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }

    /// Discrete inf-sup constant
    /// `beta_h = inf_q sup_v b(q, v) / (|q|_L2 |v|_H1)` over mean-zero pressures,
    /// from Lanczos iterations on the inverse pressure Schur complement.
    pub fn inf_sup(&self, mu: &ParameterVector) -> Result<f64> {
        self.inf_sup_with_tensors(&self.exact_tensors(mu)?)
    }

    /// Discrete inf-sup constant of the divergence form built from `tensors`.
    pub fn inf_sup_with_tensors(&self, tensors: &[TransformTensors]) -> Result<f64> {
        let sys = self.assemble(tensors, VelocityBlock::H1Gram);
        let factor = SymmetricPattern::factorize_triplets(sys.n, self.space.n_velocity(), &sys.triplets)?;
        let nf2 = self.space.n_velocity();
        let nv = self.space.n_p1();
        let weights = &self.pressure_weights;
        let total: f64 = weights.iter().sum();
        let deflate = |x: &mut [f64]| {
            let m = dot(weights, x) / total;
            x.iter_mut().for_each(|v| *v -= m);
        };
        let apply = |x: &[f64]| -> Vec<f64> {
            let g = self.mass_p.mul_vec(x);
            let mut rhs = vec![0.0; sys.n];
            rhs[nf2..nf2 + nv].copy_from_slice(&g);
            factor.solve_in_place(&mut rhs);
            rhs[nf2..nf2 + nv].iter().map(|v| -v).collect()
        };
        let m_inner = |a: &[f64], b: &[f64]| self.mass_p.bilinear(a, b);

        let mut q: Vec<f64> = (0..nv).map(|i| ((i as f64) * 0.7548776662).sin() + 0.1).collect();
        deflate(&mut q);
        let norm = m_inner(&q, &q).sqrt();
        q.iter_mut().for_each(|v| *v /= norm);
        let mut basis: Vec<Vec<f64>> = vec![q];
        let (mut alpha, mut beta): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
        let mut theta_prev = 0.0;
        let max_iter = nv.saturating_sub(1).clamp(1, 300);
        for k in 0..max_iter {
            let mut w = apply(&basis[k]);
            deflate(&mut w);
            let a = m_inner(&w, &basis[k]);
            alpha.push(a);
            // full reorthogonalization in the M inner product, twice
            for _ in 0..2 {
                for v in &basis {
                    let c = m_inner(&w, v);
                    w.iter_mut().zip(v).for_each(|(x, y)| *x -= c * y);
                }
            }
            let b = m_inner(&w, &w).max(0.0).sqrt();
            let m = alpha.len();
            let t = DMatrix::from_fn(m, m, |i, j| {
                if i == j {
                    alpha[i]
                } else if i + 1 == j {
                    beta[i]
                } else if j + 1 == i {
                    beta[j]
                } else {
                    0.0
                }
            });
            let theta = SymmetricEigen::new(t).eigenvalues.max();
            let converged = k > 2 && (theta - theta_prev).abs() <= 1e-12 * theta.abs();
            theta_prev = theta;
            if converged || b <= 1e-13 * theta.abs() {
                break;
            }
            beta.push(b);
            basis.push(w.into_iter().map(|x| x / b).collect());
        }
        if !(theta_prev > 0.0 && theta_prev.is_finite()) {
            return Err(Error::Solver(format!("inf-sup eigenvalue iteration failed (theta = {theta_prev})")));
        }
        Ok(1.0 / theta_prev.sqrt())
    }

    /// Solution table, one row per P2 node: reference and deformed position,
    /// velocity, and pressure (midpoints interpolated linearly).
    pub fn solution_csv(&self, sol: &FluidSolution) -> Result<String> {
        let mesh = self.space.mesh();
        let nv = mesh.n_nodes();
        let n = self.space.n_p2();
        let mut out = String::from("x1,x2,y1,y2,u1,u2,p\n");
        for (d, x) in self.space.dof_coords().iter().enumerate() {
            let y = self.lattice.map(*x, &sol.mu)?;
            let p = if d < nv {
                sol.pressure[d]
            } else {
                let [a, b] = mesh.edges[d - nv].vertices;
                0.5 * (sol.pressure[a] + sol.pressure[b])
            };
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                x[0], x[1], y[0], y[1], sol.velocity[d], sol.velocity[n + d], p
            )
            .expect("write to string");
        }
        Ok(out)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn relative_residual(sys: &SaddleSystem, x: &[f64]) -> f64 {
    let mut r = sys.rhs.clone();
    for &(i, j, v) in &sys.triplets {
        r[i] -= v * x[j];
    }
    let rn = dot(&r, &r).sqrt();
    let bn = dot(&sys.rhs, &sys.rhs).sqrt();
    if bn > 0.0 {
        rn / bn
    } else {
        rn
    }
}

/// Mesh nodes with their images under the deformation: `x1,x2,x1',x2'`.
pub fn deformed_mesh_csv(mesh: &Mesh, lattice: &FfdLattice, mu: &ParameterVector) -> Result<String> {
    let mut out = String::from("x1,x2,x1_def,x2_def\n");
    for x in &mesh.nodes {
        let y: Point = lattice.map(*x, mu)?;
        writeln!(out, "{},{},{},{}", x[0], x[1], y[0], y[1]).expect("write to string");
    }
    Ok(out)
}
