//! Tensor-product space-time finite element spaces on prisms: Lagrange
//! bases, global spatial node sets, DOF management over the active elements
//! of a slab, and evaluation of FE functions.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mesh::Triangulation;
use crate::quadrature::gauss_lobatto_01;

/// Lagrange basis of total degree `k` on the reference triangle with
/// equispaced nodes, represented in the monomial basis.
#[derive(Debug, Clone)]
pub struct TriangleBasis {
    pub degree: usize,
    pub nodes: Vec<[f64; 2]>,
    /// Barycentric multi-index (a0, a1, a2) of each node, sum = degree.
    pub multi: Vec<[usize; 3]>,
    /// coeff[(j, i)]: coefficient of monomial j in basis function i.
    coeff: DMatrix<f64>,
    monomials: Vec<(i32, i32)>,
}

impl TriangleBasis {
    pub fn new(degree: usize) -> Self {
        assert!(degree >= 1);
        let k = degree;
        let mut nodes = Vec::new();
        let mut multi = Vec::new();
        for a2 in 0..=k {
            for a1 in 0..=(k - a2) {
                let a0 = k - a1 - a2;
                multi.push([a0, a1, a2]);
                nodes.push([a1 as f64 / k as f64, a2 as f64 / k as f64]);
            }
        }
        let monomials: Vec<(i32, i32)> = (0..=k as i32)
            .flat_map(|q| (0..=(k as i32 - q)).map(move |p| (p, q)))
            .collect();
        let n = nodes.len();
        debug_assert_eq!(n, monomials.len());
        let vander = DMatrix::from_fn(n, n, |i, j| {
            let (p, q) = monomials[j];
            nodes[i][0].powi(p) * nodes[i][1].powi(q)
        });
        let coeff = vander
            .lu()
            .solve(&DMatrix::identity(n, n))
            .expect("Lagrange Vandermonde matrix is invertible");
        TriangleBasis {
            degree,
            nodes,
            multi,
            coeff,
            monomials,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Values and reference gradients of all basis functions at `xi`. Also
    /// valid outside the reference triangle (polynomial extension).
    pub fn eval(&self, xi: [f64; 2]) -> (Vec<f64>, Vec<[f64; 2]>) {
        let n = self.n_nodes();
        let mut vals = vec![0.0; n];
        let mut grads = vec![[0.0; 2]; n];
        self.eval_into(xi, &mut vals, &mut grads);
        (vals, grads)
    }

    /// Allocation-free variant writing into caller buffers of length
    /// `n_nodes()`.
    pub fn eval_into(&self, xi: [f64; 2], vals: &mut [f64], grads: &mut [[f64; 2]]) {
        let n = self.n_nodes();
        vals[..n].fill(0.0);
        grads[..n].fill([0.0; 2]);
        for (j, &(p, q)) in self.monomials.iter().enumerate() {
            let xp = xi[0].powi(p);
            let yq = xi[1].powi(q);
            let dx = if p > 0 {
                p as f64 * xi[0].powi(p - 1) * yq
            } else {
                0.0
            };
            let dy = if q > 0 {
                q as f64 * xi[1].powi(q - 1) * xp
            } else {
                0.0
            };
            let m = xp * yq;
            for i in 0..n {
                let c = self.coeff[(j, i)];
                vals[i] += c * m;
                grads[i][0] += c * dx;
                grads[i][1] += c * dy;
            }
        }
    }
}

/// Stack-buffer capacities for the no-allocation evaluation paths.
pub const MAX_SPACE_NODES: usize = 15;
pub const MAX_TIME_NODES: usize = 6;
pub const MAX_LOCAL: usize = MAX_SPACE_NODES * MAX_TIME_NODES;

/// 1D Lagrange basis on arbitrary (pairwise distinct) nodes.
#[derive(Debug, Clone)]
pub struct LagrangeBasis1D {
    pub nodes: Vec<f64>,
}

impl LagrangeBasis1D {
    pub fn new(nodes: Vec<f64>) -> Self {
        LagrangeBasis1D { nodes }
    }

    /// Gauss-Lobatto nodes for temporal degree `k` scaled to `[a, b]`.
    pub fn lobatto(k: usize, a: f64, b: f64) -> Self {
        let nodes = gauss_lobatto_01(k)
            .into_iter()
            .map(|s| a + (b - a) * s)
            .collect();
        LagrangeBasis1D { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Values and first derivatives of all basis polynomials at `t`.
    pub fn eval(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.nodes.len();
        let mut vals = vec![0.0; n];
        let mut ders = vec![0.0; n];
        self.eval_into(t, &mut vals, &mut ders);
        (vals, ders)
    }

    /// Allocation-free variant writing into caller buffers of length
    /// `len()`.
    pub fn eval_into(&self, t: f64, vals: &mut [f64], ders: &mut [f64]) {
        let n = self.nodes.len();
        vals[..n].fill(1.0);
        ders[..n].fill(0.0);
        if n == 1 {
            return;
        }
        for i in 0..n {
            for j in 0..n {
                if j == i {
                    continue;
                }
                let denom = self.nodes[i] - self.nodes[j];
                // d/dt of the running product, then extend the product.
                let factor = (t - self.nodes[j]) / denom;
                ders[i] = ders[i] * factor + vals[i] / denom;
                vals[i] *= factor;
            }
        }
    }
}

/// Global Lagrange nodes of a given degree over the whole mesh: vertex nodes
/// first (ids equal vertex ids), then edge nodes, then interior nodes.
#[derive(Debug, Clone)]
pub struct SpatialNodeSet {
    pub degree: usize,
    pub basis: TriangleBasis,
    pub coords: Vec<[f64; 2]>,
    /// Per triangle, global node ids aligned with `basis.nodes`.
    pub element_nodes: Vec<Vec<usize>>,
}

impl SpatialNodeSet {
    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }
}

pub fn spatial_nodes(mesh: &Triangulation, degree: usize) -> SpatialNodeSet {
    let basis = TriangleBasis::new(degree);
    let k = degree;
    let nv = mesh.vertices.len();
    let ne = mesh.edges.len();
    let per_edge = k - 1;
    let per_tri = if k >= 3 { (k - 1) * (k - 2) / 2 } else { 0 };
    let n_total = nv + ne * per_edge + mesh.triangles.len() * per_tri;
    let mut coords = vec![[0.0; 2]; n_total];
    for (v, c) in mesh.vertices.iter().enumerate() {
        coords[v] = *c;
    }
    let mut element_nodes = Vec::with_capacity(mesh.triangles.len());
    for t in 0..mesh.triangles.len() {
        let tri = mesh.triangles[t];
        let verts = mesh.tri_vertices(t);
        let mut ids = Vec::with_capacity(basis.n_nodes());
        let mut interior_seen = 0usize;
        for (local, m) in basis.multi.iter().enumerate() {
            let zero_count = m.iter().filter(|&&a| a == 0).count();
            let id = if zero_count == 2 {
                // Vertex node.
                let i = m.iter().position(|&a| a == k).unwrap();
                tri[i]
            } else if zero_count == 1 {
                // Edge node on the edge opposite the vanishing barycentric.
                let i = m.iter().position(|&a| a == 0).unwrap();
                let (j, l) = ((i + 1) % 3, (i + 2) % 3);
                let edge = mesh.tri_edges[t][i];
                // Position counted from the endpoint with smaller vertex id.
                let pos = if tri[j] < tri[l] { m[l] - 1 } else { m[j] - 1 };
                nv + edge * per_edge + pos
            } else {
                let id = nv + ne * per_edge + t * per_tri + interior_seen;
                interior_seen += 1;
                id
            };
            let xi = basis.nodes[local];
            coords[id] = [
                verts[0][0]
                    + (verts[1][0] - verts[0][0]) * xi[0]
                    + (verts[2][0] - verts[0][0]) * xi[1],
                verts[0][1]
                    + (verts[1][1] - verts[0][1]) * xi[0]
                    + (verts[2][1] - verts[0][1]) * xi[1],
            ];
            ids.push(id);
        }
        element_nodes.push(ids);
    }
    SpatialNodeSet {
        degree,
        basis,
        coords,
        element_nodes,
    }
}

/// Tensor-product basis: spatial Lagrange (degree `k_s`) times temporal
/// Lagrange on Gauss-Lobatto points (degree `k_q`).
#[derive(Debug, Clone)]
pub struct TensorBasis {
    pub k_s: usize,
    pub k_q: usize,
    pub space: TriangleBasis,
    /// Temporal basis on the reference interval [0, 1].
    pub time: LagrangeBasis1D,
}

impl TensorBasis {
    pub fn new(k_s: usize, k_q: usize) -> Self {
        TensorBasis {
            k_s,
            k_q,
            space: TriangleBasis::new(k_s),
            time: LagrangeBasis1D::new(gauss_lobatto_01(k_q)),
        }
    }

    pub fn n_space(&self) -> usize {
        self.space.n_nodes()
    }

    pub fn n_time(&self) -> usize {
        self.time.len()
    }

    pub fn n_local(&self) -> usize {
        self.n_space() * self.n_time()
    }

    /// Local index of (spatial node p, temporal node m).
    pub fn local_index(&self, p: usize, m: usize) -> usize {
        p * self.n_time() + m
    }

    /// Values and reference space-time gradients (d/dxi, d/deta, d/dtheta) of
    /// all products at reference coordinates.
    pub fn eval(&self, xi: [f64; 2], theta: f64) -> (Vec<f64>, Vec<[f64; 3]>) {
        let mut vals = vec![0.0; self.n_local()];
        let mut grads = vec![[0.0; 3]; self.n_local()];
        self.eval_into(xi, theta, &mut vals, &mut grads);
        (vals, grads)
    }

    /// Allocation-free variant writing into caller buffers of length
    /// `n_local()`.
    pub fn eval_into(&self, xi: [f64; 2], theta: f64, vals: &mut [f64], grads: &mut [[f64; 3]]) {
        let mut sv = [0.0; MAX_SPACE_NODES];
        let mut sg = [[0.0; 2]; MAX_SPACE_NODES];
        let mut tv = [0.0; MAX_TIME_NODES];
        let mut td = [0.0; MAX_TIME_NODES];
        self.space.eval_into(xi, &mut sv, &mut sg);
        self.time.eval_into(theta, &mut tv, &mut td);
        let n_t = self.n_time();
        for p in 0..self.n_space() {
            for m in 0..n_t {
                let i = self.local_index(p, m);
                vals[i] = sv[p] * tv[m];
                grads[i] = [sg[p][0] * tv[m], sg[p][1] * tv[m], sv[p] * td[m]];
            }
        }
    }
}

/// DOF map over the active elements of one slab. Spatial nodes shared by
/// adjacent active elements share DOFs; temporal nodes are slab-local.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub slab: usize,
    pub k_s: usize,
    pub k_q: usize,
    pub active: Vec<usize>,
    /// Compact spatial index per global spatial node id.
    pub spatial_compact: HashMap<usize, usize>,
    pub compact_spatial: Vec<usize>,
    /// Per active element (parallel to `active`), local-to-global dof ids,
    /// local ordering `p * (k_q + 1) + m`.
    pub element_dofs: Vec<Vec<usize>>,
    active_pos: HashMap<usize, usize>,
}

impl DofMap {
    pub fn n_dofs(&self) -> usize {
        self.compact_spatial.len() * (self.k_q + 1)
    }

    pub fn n_spatial(&self) -> usize {
        self.compact_spatial.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn active_position(&self, tri: usize) -> Option<usize> {
        self.active_pos.get(&tri).copied()
    }

    pub fn dof(&self, compact_spatial: usize, m: usize) -> usize {
        compact_spatial * (self.k_q + 1) + m
    }
}

pub fn build_dofmap(active: &[usize], nodes: &SpatialNodeSet, slab: usize, k_q: usize) -> DofMap {
    let mut spatial_compact = HashMap::new();
    let mut compact_spatial = Vec::new();
    let mut element_dofs = Vec::with_capacity(active.len());
    let mut active_pos = HashMap::new();
    let n_t = k_q + 1;
    for (pos, &tri) in active.iter().enumerate() {
        active_pos.insert(tri, pos);
        let mut dofs = Vec::with_capacity(nodes.basis.n_nodes() * n_t);
        for &node in &nodes.element_nodes[tri] {
            let next = spatial_compact.len();
            let c = *spatial_compact.entry(node).or_insert_with(|| {
                compact_spatial.push(node);
                next
            });
            for m in 0..n_t {
                dofs.push(c * n_t + m);
            }
        }
        element_dofs.push(dofs);
    }
    DofMap {
        slab,
        k_s: nodes.degree,
        k_q,
        active: active.to_vec(),
        spatial_compact,
        compact_spatial,
        element_dofs,
        active_pos,
    }
}

/// Coefficients of one FE function over a slab's [`DofMap`].
#[derive(Debug, Clone)]
pub struct FEFunction {
    pub slab: usize,
    pub k_s: usize,
    pub k_q: usize,
    pub coeffs: Vec<f64>,
}

/// Everything needed to evaluate FE functions on one slab.
pub struct SlabSpace<'a> {
    pub mesh: &'a Triangulation,
    pub nodes: &'a SpatialNodeSet,
    pub basis: TensorBasis,
    pub dofmap: DofMap,
    pub interval: (f64, f64),
}

impl<'a> SlabSpace<'a> {
    pub fn new(
        mesh: &'a Triangulation,
        nodes: &'a SpatialNodeSet,
        dofmap: DofMap,
        k_q: usize,
        interval: (f64, f64),
    ) -> Self {
        SlabSpace {
            mesh,
            nodes,
            basis: TensorBasis::new(nodes.degree, k_q),
            dofmap,
            interval,
        }
    }

    pub fn reference_coords(&self, tri: usize, x: [f64; 2], t: f64) -> ([f64; 2], f64) {
        let b = self.mesh.barycentric(tri, x);
        let theta = (t - self.interval.0) / (self.interval.1 - self.interval.0);
        ([b[1], b[2]], theta)
    }

    /// Value of `f` at a point of an active element.
    pub fn eval(&self, f: &FEFunction, tri: usize, x: [f64; 2], t: f64) -> Result<f64> {
        Ok(self.eval_with_gradient(f, tri, x, t)?.0)
    }

    /// Value and undeformed space-time gradient `(d/dx, d/dy, d/dt)`.
    pub fn eval_with_gradient(
        &self,
        f: &FEFunction,
        tri: usize,
        x: [f64; 2],
        t: f64,
    ) -> Result<(f64, [f64; 3])> {
        let pos = self
            .dofmap
            .active_position(tri)
            .ok_or(Error::PointLocation { x: x[0], y: x[1] })?;
        let (xi, theta) = self.reference_coords(tri, x, t);
        let mut vals = [0.0; MAX_LOCAL];
        let mut grads = [[0.0; 3]; MAX_LOCAL];
        self.basis.eval_into(xi, theta, &mut vals, &mut grads);
        let jac_inv_t = inverse_transpose_affine(self.mesh, tri);
        let dt_scale = 1.0 / (self.interval.1 - self.interval.0);
        let dofs = &self.dofmap.element_dofs[pos];
        let mut value = 0.0;
        let mut grad = [0.0; 3];
        for (i, &dof) in dofs.iter().enumerate() {
            let c = f.coeffs[dof];
            value += c * vals[i];
            let g = grads[i];
            grad[0] += c * (jac_inv_t[0][0] * g[0] + jac_inv_t[0][1] * g[1]);
            grad[1] += c * (jac_inv_t[1][0] * g[0] + jac_inv_t[1][1] * g[1]);
            grad[2] += c * g[2] * dt_scale;
        }
        Ok((value, grad))
    }

    /// Nodal space-time interpolation of a function onto this space.
    pub fn interpolate(&self, f: impl Fn([f64; 2], f64) -> f64) -> FEFunction {
        let n_t = self.basis.n_time();
        let t_nodes: Vec<f64> = self
            .basis
            .time
            .nodes
            .iter()
            .map(|s| self.interval.0 + (self.interval.1 - self.interval.0) * s)
            .collect();
        let mut coeffs = vec![0.0; self.dofmap.n_dofs()];
        for (c, &node) in self.dofmap.compact_spatial.iter().enumerate() {
            let x = self.nodes.coords[node];
            for m in 0..n_t {
                coeffs[c * n_t + m] = f(x, t_nodes[m]);
            }
        }
        FEFunction {
            slab: self.dofmap.slab,
            k_s: self.dofmap.k_s,
            k_q: self.dofmap.k_q,
            coeffs,
        }
    }
}

/// Inverse transpose of the affine element map's Jacobian; maps reference
/// gradients to physical ones.
pub fn inverse_transpose_affine(mesh: &Triangulation, tri: usize) -> [[f64; 2]; 2] {
    let [a, b, c] = mesh.tri_vertices(tri);
    let j = [[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    // inv(J) = adj(J)/det; we need inv(J)^T.
    [
        [j[1][1] / det, -j[1][0] / det],
        [-j[0][1] / det, j[0][0] / det],
    ]
}
