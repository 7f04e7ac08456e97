//! Affine decomposition of the pulled-back Stokes operators induced by the
//! tensor interpolation: every interpolation function `zeta_m` of every
//! tensor entry yields one parameter-independent matrix.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::eim::{TensorEim, TensorEntry};
use crate::error::Result;
use crate::fem::{FluidModel, FluidSolution, CONSTRAINED};
use crate::ffd::{ParameterVector, TransformTensors};
use crate::sparse::{CsrMatrix, SparsityPattern, SymmetricPattern};

/// One affine term: the EIM entry index, the term index inside that entry and
/// the frozen-coefficient matrix.
#[derive(Clone, Debug)]
pub struct AffineTerm {
    pub entry: usize,
    pub term: usize,
    pub matrix: CsrMatrix,
    /// The matrix applied to the lifting, restricted to free rows.
    pub lifting: Vec<f64>,
}

/// Where each affine coefficient comes from: `(EIM entry, term)` pairs for
/// the viscous, divergence and volume-force expansions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaMap {
    pub a: Vec<(usize, usize)>,
    pub b: Vec<(usize, usize)>,
    pub f: Vec<(usize, usize)>,
}

/// Affine coefficients at one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Thetas {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub f: Vec<f64>,
}

impl ThetaMap {
    pub fn evaluate(&self, eim: &TensorEim, mu: &ParameterVector) -> Result<Thetas> {
        let coeffs = eim.coefficients(mu)?;
        let pick = |idx: &[(usize, usize)]| idx.iter().map(|&(e, m)| coeffs[e][m]).collect();
        Ok(Thetas {
            a: pick(&self.a),
            b: pick(&self.b),
            f: pick(&self.f),
        })
    }
}

/// Per-component scatter list from term storage into the saddle-point values.
#[derive(Clone, Debug, Default)]
struct Scatter {
    a: [Vec<(usize, usize)>; 2],
    b: [Vec<(usize, usize)>; 2],
    weights: Vec<usize>,
}

/// `A(mu) = sum_m theta_a^m(mu) A^m`, `B_k(mu) = sum_m theta_b^m(mu) B_k^m`
/// and the matching right-hand sides, on free velocity dofs.
///
/// `A^m` acts identically on both velocity components; `B^m` belongs to the
/// component `k` of its `chi_kj` entry.
pub struct AffineSystem<'a> {
    model: &'a FluidModel,
    eim: TensorEim,
    a_terms: Vec<AffineTerm>,
    b_terms: Vec<(usize, AffineTerm)>,
    /// Volume-force terms from the `det J` expansion, on free velocity dofs.
    f_terms: Vec<Vec<f64>>,
    theta_map: ThetaMap,
    a_pattern: Arc<SparsityPattern>,
    b_pattern: Arc<SparsityPattern>,
    saddle: Arc<SymmetricPattern>,
    scatter: Scatter,
}

impl<'a> AffineSystem<'a> {
    /// Assembles one matrix per interpolation term. Non-converged bases are
    /// accepted; the flag is available through [`TensorEim::converged`].
    pub fn build(model: &'a FluidModel, eim: TensorEim) -> Result<Self> {
        let space = model.space();
        let (n, nf, nv) = (space.n_p2(), space.n_free(), space.n_p1());
        let free = space.free_index();
        let nq = space.qp_per_triangle();
        let p2 = space.p2_pattern();
        let p1p2 = space.p1p2_pattern();
        let nt = space.mesh().n_triangles();

        // storage positions of every element entry
        let mut pos_a = Vec::with_capacity(nt * 36);
        let mut pos_b = Vec::with_capacity(nt * 18);
        for t in 0..nt {
            let dofs = space.element_dofs(t);
            let verts = space.mesh().triangles[t];
            for a in 0..6 {
                for b in 0..6 {
                    pos_a.push(p2.find(dofs[a], dofs[b]).expect("element entry"));
                }
            }
            for r in 0..3 {
                for a in 0..6 {
                    pos_b.push(p1p2.find(verts[r], dofs[a]).expect("element entry"));
                }
            }
        }

        let nu = model.constants().nu;
        let force = model.constants().force;
        let lifting = model.lifting();
        let (a_pattern, a_map) = p2.restrict(free, free, nf, nf);
        let all_p1: Vec<usize> = (0..nv).collect();
        let (b_pattern, b_map) = p1p2.restrict(&all_p1, free, nv, nf);
        let (a_pattern, b_pattern) = (Arc::new(a_pattern), Arc::new(b_pattern));
        let restrict = |full: &CsrMatrix, map: &[usize], pattern: &Arc<SparsityPattern>| {
            let mut m = CsrMatrix::zeros(pattern.clone());
            for (k, &p) in map.iter().enumerate() {
                if p != CONSTRAINED {
                    m.values_mut()[p] = full.values()[k];
                }
            }
            m
        };

        let mut a_terms = Vec::new();
        let mut b_terms = Vec::new();
        let mut f_terms = Vec::new();
        for (ei, e) in eim.entries.iter().enumerate() {
            for (m, zeta) in e.basis.zeta.iter().enumerate() {
                match e.entry {
                    TensorEntry::Nu(i, j) => {
                        let mut full = CsrMatrix::zeros(p2.clone());
                        let vals = full.values_mut();
                        for t in 0..nt {
                            for k in 0..nq {
                                let q = t * nq + k;
                                let s = nu * space.qp_weight(q) * zeta[q];
                                let g = space.qp_grad_p2(q);
                                for a in 0..6 {
                                    for b in 0..6 {
                                        vals[pos_a[t * 36 + a * 6 + b]] += s * g[b][i] * g[a][j];
                                    }
                                }
                            }
                        }
                        let mut lift = vec![0.0; 2 * nf];
                        for c in 0..2 {
                            let applied = full.mul_vec(&lifting[c * n..(c + 1) * n]);
                            lift[c * nf..(c + 1) * nf].copy_from_slice(&space.restrict_scalar(&applied));
                        }
                        a_terms.push(AffineTerm {
                            entry: ei,
                            term: m,
                            matrix: restrict(&full, &a_map, &a_pattern),
                            lifting: lift,
                        });
                    }
                    TensorEntry::Chi(k, j) => {
                        let mut full = CsrMatrix::zeros(p1p2.clone());
                        let vals = full.values_mut();
                        for t in 0..nt {
                            for kq in 0..nq {
                                let q = t * nq + kq;
                                let s = space.qp_weight(q) * zeta[q];
                                let g = space.qp_grad_p2(q);
                                let psi = space.rule_p1(kq);
                                for r in 0..3 {
                                    for a in 0..6 {
                                        vals[pos_b[t * 18 + r * 6 + a]] -= s * psi[r] * g[a][j];
                                    }
                                }
                            }
                        }
                        let lift = full.mul_vec(&lifting[k * n..(k + 1) * n]);
                        b_terms.push((
                            k,
                            AffineTerm {
                                entry: ei,
                                term: m,
                                matrix: restrict(&full, &b_map, &b_pattern),
                                lifting: lift,
                            },
                        ));
                    }
                    TensorEntry::Det => {
                        if force.iter().all(|f| *f == 0.0) {
                            continue;
                        }
                        let mut vec_full = vec![0.0; 2 * n];
                        for t in 0..nt {
                            let dofs = space.element_dofs(t);
                            for kq in 0..nq {
                                let q = t * nq + kq;
                                let s = space.qp_weight(q) * zeta[q];
                                let phi = space.rule_p2(kq);
                                for c in 0..2 {
                                    for a in 0..6 {
                                        vec_full[c * n + dofs[a]] += s * force[c] * phi[a];
                                    }
                                }
                            }
                        }
                        f_terms.push((ei, m, space.restrict_velocity(&vec_full)));
                    }
                }
            }
        }

        // lower-triangular saddle pattern: [u1, u2, p, lambda]
        let p_off = 2 * nf;
        let lam = p_off + nv;
        let mut entries = Vec::new();
        let mut kinds = Vec::new();
        for c in 0..2 {
            for (k, (r, col)) in a_pattern.entries().enumerate() {
                if r >= col {
                    entries.push((c * nf + r, c * nf + col));
                    kinds.push((0u8, c, k));
                }
            }
        }
        for c in 0..2 {
            for (k, (r, col)) in b_pattern.entries().enumerate() {
                entries.push((p_off + r, c * nf + col));
                kinds.push((1u8, c, k));
            }
        }
        for v in 0..nv {
            entries.push((lam, p_off + v));
            kinds.push((2u8, 0, v));
        }
        let (saddle, positions) = SymmetricPattern::from_entries(lam + 1, 2 * nf, &entries)?;
        let mut scatter = Scatter::default();
        for (&(kind, c, k), &pos) in kinds.iter().zip(&positions) {
            match kind {
                0 => scatter.a[c].push((k, pos)),
                1 => scatter.b[c].push((k, pos)),
                _ => scatter.weights.push(pos),
            }
        }

        let theta_map = ThetaMap {
            a: a_terms.iter().map(|t| (t.entry, t.term)).collect(),
            b: b_terms.iter().map(|(_, t)| (t.entry, t.term)).collect(),
            f: f_terms.iter().map(|(e, m, _)| (*e, *m)).collect(),
        };
        let f_terms = f_terms.into_iter().map(|(_, _, v)| v).collect();
        Ok(Self {
            model,
            eim,
            a_terms,
            b_terms,
            f_terms,
            theta_map,
            a_pattern,
            b_pattern,
            saddle: Arc::new(saddle),
            scatter,
        })
    }

    pub fn model(&self) -> &'a FluidModel {
        self.model
    }

    pub fn eim(&self) -> &TensorEim {
        &self.eim
    }

    pub fn a_terms(&self) -> &[AffineTerm] {
        &self.a_terms
    }

    /// `(component, term)` pairs of the divergence operator.
    pub fn b_terms(&self) -> &[(usize, AffineTerm)] {
        &self.b_terms
    }

    pub fn n_a(&self) -> usize {
        self.a_terms.len()
    }

    pub fn n_b(&self) -> usize {
        self.b_terms.len()
    }

    pub fn theta_map(&self) -> &ThetaMap {
        &self.theta_map
    }

    pub fn thetas(&self, mu: &ParameterVector) -> Result<Thetas> {
        self.theta_map.evaluate(&self.eim, mu)
    }

    /// Volume-force vectors on free velocity dofs, one per `det J` term.
    pub fn f_terms(&self) -> &[Vec<f64>] {
        &self.f_terms
    }

    /// Combined scalar viscous matrix and per-component divergence matrices.
    pub fn operators(&self, theta: &Thetas) -> (CsrMatrix, [CsrMatrix; 2]) {
        let mut a = CsrMatrix::zeros(self.a_pattern.clone());
        for (t, th) in self.a_terms.iter().zip(&theta.a) {
            a.axpy(*th, &t.matrix);
        }
        let mut b = [CsrMatrix::zeros(self.b_pattern.clone()), CsrMatrix::zeros(self.b_pattern.clone())];
        for ((c, t), th) in self.b_terms.iter().zip(&theta.b) {
            b[*c].axpy(*th, &t.matrix);
        }
        (a, b)
    }

    /// Operators assembled directly from pointwise tensors on the same patterns.
    pub fn direct_operators(&self, tensors: &[TransformTensors]) -> (CsrMatrix, [CsrMatrix; 2]) {
        let space = self.model.space();
        let free = space.free_index();
        let nq = space.qp_per_triangle();
        let nu = self.model.constants().nu;
        let mut a = CsrMatrix::zeros(self.a_pattern.clone());
        let mut b = [CsrMatrix::zeros(self.b_pattern.clone()), CsrMatrix::zeros(self.b_pattern.clone())];
        for t in 0..space.mesh().n_triangles() {
            let dofs = space.element_dofs(t);
            let verts = space.mesh().triangles[t];
            for k in 0..nq {
                let q = t * nq + k;
                let w = space.qp_weight(q);
                let g = space.qp_grad_p2(q);
                let psi = space.rule_p1(k);
                let tt = &tensors[q];
                for a_ in 0..6 {
                    let fa = free[dofs[a_]];
                    if fa == CONSTRAINED {
                        continue;
                    }
                    for b_ in 0..6 {
                        let fb = free[dofs[b_]];
                        if fb == CONSTRAINED {
                            continue;
                        }
                        let mut v = 0.0;
                        for i in 0..2 {
                            for j in 0..2 {
                                v += g[b_][i] * tt.nu[(i, j)] * g[a_][j];
                            }
                        }
                        let pos = self.a_pattern.find(fa, fb).expect("entry");
                        a.values_mut()[pos] += nu * w * v;
                    }
                    for (c, bc) in b.iter_mut().enumerate() {
                        let div = tt.chi[(c, 0)] * g[a_][0] + tt.chi[(c, 1)] * g[a_][1];
                        for r in 0..3 {
                            let pos = self.b_pattern.find(verts[r], fa).expect("entry");
                            bc.values_mut()[pos] -= w * psi[r] * div;
                        }
                    }
                }
            }
        }
        (a, b)
    }

    /// Right-hand side `[F; G]` on free velocity and pressure dofs.
    pub fn rhs(&self, theta: &Thetas) -> (Vec<f64>, Vec<f64>) {
        let space = self.model.space();
        let mut f = vec![0.0; space.n_velocity()];
        for (t, th) in self.a_terms.iter().zip(&theta.a) {
            for (x, l) in f.iter_mut().zip(&t.lifting) {
                *x -= th * l;
            }
        }
        for (v, th) in self.f_terms.iter().zip(&theta.f) {
            for (x, l) in f.iter_mut().zip(v) {
                *x += th * l;
            }
        }
        let mut g = vec![0.0; space.n_p1()];
        for ((_, t), th) in self.b_terms.iter().zip(&theta.b) {
            for (x, l) in g.iter_mut().zip(&t.lifting) {
                *x -= th * l;
            }
        }
        (f, g)
    }

    /// `A^m u` for a free velocity vector, both components.
    pub fn apply_a_term(&self, m: usize, u: &[f64], out: &mut [f64]) {
        let nf = self.model.space().n_free();
        let mat = &self.a_terms[m].matrix;
        for c in 0..2 {
            mat.mul_vec_add(1.0, &u[c * nf..(c + 1) * nf], &mut out[c * nf..(c + 1) * nf]);
        }
    }

    /// `B^m u` (pressure rows) for a free velocity vector.
    pub fn apply_b_term(&self, m: usize, u: &[f64], out: &mut [f64]) {
        let nf = self.model.space().n_free();
        let (c, t) = &self.b_terms[m];
        t.matrix.mul_vec_add(1.0, &u[c * nf..(c + 1) * nf], out);
    }

    /// `(B^m)^T p` into free velocity rows.
    pub fn apply_bt_term(&self, m: usize, p: &[f64], out: &mut [f64]) {
        let nf = self.model.space().n_free();
        let (c, t) = &self.b_terms[m];
        t.matrix.mul_transpose_vec_add(1.0, p, &mut out[c * nf..(c + 1) * nf]);
    }

    /// `B(mu)^T p` on free velocity dofs.
    pub fn apply_bt(&self, theta_b: &[f64], p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.model.space().n_velocity()];
        let mut tmp = vec![0.0; out.len()];
        for (m, th) in theta_b.iter().enumerate() {
            tmp.fill(0.0);
            self.apply_bt_term(m, p, &mut tmp);
            for (o, t) in out.iter_mut().zip(&tmp) {
                *o += th * t;
            }
        }
        out
    }

    /// Supremizer `T^mu q`: the Riesz representer in the H1 product of
    /// `v -> b(q, v; mu)`.
    pub fn supremizer(&self, q: &[f64], mu: &ParameterVector) -> Result<Vec<f64>> {
        let theta = self.thetas(mu)?;
        Ok(self.model.solve_y(&self.apply_bt(&theta.b, q)))
    }

    /// Tensors at every quadrature point as seen by this decomposition.
    pub fn tensors(&self, mu: &ParameterVector) -> Result<Vec<TransformTensors>> {
        self.eim.interpolated_tensors(mu)
    }

    /// High-fidelity solve with the affine operators ("reduced FEM"); reuses
    /// the symbolic factorization of the saddle-point pattern.
    pub fn solve(&self, mu: &ParameterVector) -> Result<FluidSolution> {
        let theta = self.thetas(mu)?;
        let (a, b) = self.operators(&theta);
        let mut values = vec![0.0; self.saddle.nnz()];
        for c in 0..2 {
            for &(k, pos) in &self.scatter.a[c] {
                values[pos] += a.values()[k];
            }
            for &(k, pos) in &self.scatter.b[c] {
                values[pos] += b[c].values()[k];
            }
        }
        for (&pos, w) in self.scatter.weights.iter().zip(self.model.pressure_weights()) {
            values[pos] += w;
        }
        let factor = self.saddle.factorize(values)?;
        let (f, g) = self.rhs(&theta);
        let nvel = f.len();
        let np = g.len();
        let mut x = f;
        x.extend_from_slice(&g);
        x.push(0.0);
        let residual = factor.solve_in_place(&mut x);
        let p = x[nvel..nvel + np].to_vec();
        Ok(self.model.solution_from_parts(mu, &x[..nvel], p, residual))
    }

    /// Max entry differences `(|A - A_direct|, |B - B_direct|)` relative to
    /// the largest direct entry.
    pub fn consistency(&self, mu: &ParameterVector) -> Result<(f64, f64)> {
        let (a, b) = self.operators(&self.thetas(mu)?);
        let exact = self.model.exact_tensors(mu)?;
        let (ad, bd) = self.direct_operators(&exact);
        let diff = |x: &CsrMatrix, y: &CsrMatrix| x.values().iter().zip(y.values()).fold(0.0_f64, |m, (p, q)| m.max((p - q).abs()));
        let ea = diff(&a, &ad) / ad.max_abs();
        let bmax = bd[0].max_abs().max(bd[1].max_abs());
        let eb = diff(&b[0], &bd[0]).max(diff(&b[1], &bd[1])) / bmax;
        Ok((ea, eb))
    }
}
