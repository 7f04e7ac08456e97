//! P2 velocity / P1 pressure numbering and per-quadrature-point basis data.

use std::sync::Arc;

use crate::error::Result;
use crate::ffd::Point;
use crate::mesh::{EdgeTag, Mesh, LOCAL_EDGES};
use crate::quadrature::TriangleRule;
use crate::sparse::SparsityPattern;

/// Marker for constrained entries in [`TaylorHoodSpace::free_index`].
pub const CONSTRAINED: usize = usize::MAX;

/// Taylor-Hood space on a reference mesh where every boundary edge carries
/// Dirichlet data for both velocity components.
///
/// Scalar P2 dofs are the mesh vertices followed by the edge midpoints. Vector
/// velocity unknowns are restricted to interior ("free") P2 dofs and stored
/// component-blocked: `[u1 on free dofs, u2 on free dofs]`.
#[derive(Debug)]
pub struct TaylorHoodSpace {
    mesh: Mesh,
    rule: TriangleRule,
    n_p2: usize,
    free_index: Vec<usize>,
    free_dofs: Vec<usize>,
    element_dofs: Vec<[usize; 6]>,
    dof_coords: Vec<Point>,
    qp_points: Vec<Point>,
    qp_weights: Vec<f64>,
    /// P2 gradients at each quadrature point.
    qp_grad_p2: Vec<[[f64; 2]; 6]>,
    /// P2 and P1 values at the rule points (identical on every element).
    rule_p2: Vec<[f64; 6]>,
    rule_p1: Vec<[f64; 3]>,
    grad_p1: Vec<[[f64; 2]; 3]>,
    p2_pattern: Arc<SparsityPattern>,
    p1p2_pattern: Arc<SparsityPattern>,
    p1_pattern: Arc<SparsityPattern>,
}

/// Scalar P2 shape functions on barycentric coordinates.
pub fn p2_values(l: [f64; 3]) -> [f64; 6] {
    let mut v = [0.0; 6];
    for i in 0..3 {
        v[i] = l[i] * (2.0 * l[i] - 1.0);
    }
    for (k, [a, b]) in LOCAL_EDGES.iter().enumerate() {
        v[3 + k] = 4.0 * l[*a] * l[*b];
    }
    v
}

fn p2_gradients(l: [f64; 3], gl: &[[f64; 2]; 3]) -> [[f64; 2]; 6] {
    let mut g = [[0.0; 2]; 6];
    for i in 0..3 {
        for d in 0..2 {
            g[i][d] = (4.0 * l[i] - 1.0) * gl[i][d];
        }
    }
    for (k, [a, b]) in LOCAL_EDGES.iter().enumerate() {
        for d in 0..2 {
            g[3 + k][d] = 4.0 * (l[*a] * gl[*b][d] + l[*b] * gl[*a][d]);
        }
    }
    g
}

fn barycentric_gradients(p: [Point; 3]) -> [[f64; 2]; 3] {
    let area2 = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let mut g = [[0.0; 2]; 3];
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        g[i] = [(p[j][1] - p[k][1]) / area2, (p[k][0] - p[j][0]) / area2];
    }
    g
}

impl TaylorHoodSpace {
    pub fn new(mesh: Mesh, quadrature_degree: usize) -> Result<Self> {
        let rule = TriangleRule::new(quadrature_degree)?;
        let nv = mesh.n_nodes();
        let n_p2 = nv + mesh.edges.len();

        let mut constrained = vec![false; n_p2];
        for (e, edge) in mesh.edges.iter().enumerate() {
            if edge.tag.is_some() {
                constrained[edge.vertices[0]] = true;
                constrained[edge.vertices[1]] = true;
                constrained[nv + e] = true;
            }
        }
        let mut free_index = vec![CONSTRAINED; n_p2];
        let mut free_dofs = Vec::new();
        for (d, c) in constrained.iter().enumerate() {
            if !c {
                free_index[d] = free_dofs.len();
                free_dofs.push(d);
            }
        }

        let mut dof_coords = mesh.nodes.clone();
        for edge in &mesh.edges {
            let [a, b] = edge.vertices.map(|v| mesh.nodes[v]);
            dof_coords.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
        }

        let element_dofs: Vec<[usize; 6]> = mesh
            .triangles
            .iter()
            .zip(&mesh.triangle_edges)
            .map(|(t, e)| [t[0], t[1], t[2], nv + e[0], nv + e[1], nv + e[2]])
            .collect();

        let rule_p2: Vec<[f64; 6]> = rule.points.iter().map(|l| p2_values(*l)).collect();
        let rule_p1: Vec<[f64; 3]> = rule.points.clone();

        let nq = rule.len();
        let nt = mesh.n_triangles();
        let mut qp_points = Vec::with_capacity(nt * nq);
        let mut qp_weights = Vec::with_capacity(nt * nq);
        let mut qp_grad_p2 = Vec::with_capacity(nt * nq);
        let mut grad_p1 = Vec::with_capacity(nt);
        for t in 0..nt {
            let p = mesh.triangles[t].map(|v| mesh.nodes[v]);
            let gl = barycentric_gradients(p);
            let area = mesh.triangle_area(t);
            for (l, w) in rule.points.iter().zip(&rule.weights) {
                qp_points.push([
                    l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0],
                    l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1],
                ]);
                qp_weights.push(w * area);
                qp_grad_p2.push(p2_gradients(*l, &gl));
            }
            grad_p1.push(gl);
        }

        let mut p2_rows = vec![Vec::new(); n_p2];
        let mut p1p2_rows = vec![Vec::new(); nv];
        let mut p1_rows = vec![Vec::new(); nv];
        for (t, dofs) in element_dofs.iter().enumerate() {
            for &a in dofs {
                p2_rows[a].extend_from_slice(dofs);
            }
            for &v in &mesh.triangles[t] {
                p1p2_rows[v].extend_from_slice(dofs);
                p1_rows[v].extend_from_slice(&mesh.triangles[t]);
            }
        }

        Ok(Self {
            p2_pattern: Arc::new(SparsityPattern::from_rows(n_p2, n_p2, p2_rows)),
            p1p2_pattern: Arc::new(SparsityPattern::from_rows(nv, n_p2, p1p2_rows)),
            p1_pattern: Arc::new(SparsityPattern::from_rows(nv, nv, p1_rows)),
            mesh,
            rule,
            n_p2,
            free_index,
            free_dofs,
            element_dofs,
            dof_coords,
            qp_points,
            qp_weights,
            qp_grad_p2,
            rule_p2,
            rule_p1,
            grad_p1,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn rule(&self) -> &TriangleRule {
        &self.rule
    }

    /// Scalar P2 dof count (vertices plus edges).
    pub fn n_p2(&self) -> usize {
        self.n_p2
    }

    /// Pressure dof count.
    pub fn n_p1(&self) -> usize {
        self.mesh.n_nodes()
    }

    /// Interior scalar P2 dof count.
    pub fn n_free(&self) -> usize {
        self.free_dofs.len()
    }

    /// Length of a free velocity vector (both components).
    pub fn n_velocity(&self) -> usize {
        2 * self.free_dofs.len()
    }

    pub fn free_index(&self) -> &[usize] {
        &self.free_index
    }

    pub fn free_dofs(&self) -> &[usize] {
        &self.free_dofs
    }

    pub fn element_dofs(&self, t: usize) -> &[usize; 6] {
        &self.element_dofs[t]
    }

    pub fn dof_coords(&self) -> &[Point] {
        &self.dof_coords
    }

    pub fn n_qp(&self) -> usize {
        self.qp_points.len()
    }

    pub fn qp_per_triangle(&self) -> usize {
        self.rule.len()
    }

    pub fn qp_points(&self) -> &[Point] {
        &self.qp_points
    }

    pub fn qp_weight(&self, q: usize) -> f64 {
        self.qp_weights[q]
    }

    pub fn qp_grad_p2(&self, q: usize) -> &[[f64; 2]; 6] {
        &self.qp_grad_p2[q]
    }

    /// P2 values at local rule point `k`.
    pub fn rule_p2(&self, k: usize) -> &[f64; 6] {
        &self.rule_p2[k]
    }

    /// P1 values at local rule point `k`.
    pub fn rule_p1(&self, k: usize) -> &[f64; 3] {
        &self.rule_p1[k]
    }

    pub fn grad_p1(&self, t: usize) -> &[[f64; 2]; 3] {
        &self.grad_p1[t]
    }

    /// Scalar P2 x P2 pattern over all dofs.
    pub fn p2_pattern(&self) -> &Arc<SparsityPattern> {
        &self.p2_pattern
    }

    /// P1 rows x P2 columns over all dofs.
    pub fn p1p2_pattern(&self) -> &Arc<SparsityPattern> {
        &self.p1p2_pattern
    }

    pub fn p1_pattern(&self) -> &Arc<SparsityPattern> {
        &self.p1_pattern
    }

    /// Scalar field on free dofs to all P2 dofs (zero on the boundary).
    pub fn expand_scalar(&self, free: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_p2];
        for (v, &d) in free.iter().zip(&self.free_dofs) {
            full[d] = *v;
        }
        full
    }

    pub fn restrict_scalar(&self, full: &[f64]) -> Vec<f64> {
        self.free_dofs.iter().map(|&d| full[d]).collect()
    }

    /// Full velocity `[u1 (n_p2), u2 (n_p2)]` from free values plus a lifting.
    pub fn expand_velocity(&self, free: &[f64], lifting: &[f64]) -> Vec<f64> {
        let (n, nf) = (self.n_p2, self.n_free());
        let mut full = lifting.to_vec();
        for c in 0..2 {
            for (k, &d) in self.free_dofs.iter().enumerate() {
                full[c * n + d] += free[c * nf + k];
            }
        }
        full
    }

    /// Free part of a full velocity vector.
    pub fn restrict_velocity(&self, full: &[f64]) -> Vec<f64> {
        let n = self.n_p2;
        let mut out = Vec::with_capacity(self.n_velocity());
        for c in 0..2 {
            out.extend(self.free_dofs.iter().map(|&d| full[c * n + d]));
        }
        out
    }

    /// Scalar P2 dofs on edges carrying `tag` (vertices and midpoints).
    pub fn boundary_dofs(&self, tag: EdgeTag) -> Vec<usize> {
        let nv = self.mesh.n_nodes();
        let mut d: Vec<usize> = self
            .mesh
            .edges_with_tag(tag)
            .flat_map(|(e, edge)| [edge.vertices[0], edge.vertices[1], nv + e])
            .collect();
        d.sort_unstable();
        d.dedup();
        d
    }

    /// Evaluates a P2 function (all dofs) and its gradient at barycentric `l` in triangle `t`.
    pub fn eval_p2(&self, t: usize, l: [f64; 3], coeffs: &[f64]) -> (f64, [f64; 2]) {
        let dofs = &self.element_dofs[t];
        let vals = p2_values(l);
        let grads = p2_gradients(l, &self.grad_p1[t]);
        let mut v = 0.0;
        let mut g = [0.0; 2];
        for a in 0..6 {
            let c = coeffs[dofs[a]];
            v += c * vals[a];
            g[0] += c * grads[a][0];
            g[1] += c * grads[a][1];
        }
        (v, g)
    }
}
