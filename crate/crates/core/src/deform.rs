//! Parametric space-time mesh deformation: at each temporal node of a slab a
//! spatial displacement field lifts the piecewise linear zero level towards
//! the zero level of the higher order interpolation; temporal blending
//! through the nodal basis yields the space-time map, which preserves time.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::femspace::{inverse_transpose_affine, LagrangeBasis1D, SpatialNodeSet};
use crate::levelset::{oswald_average, AlphaField, DiscreteLevelSet, SpaceTimeField};
use crate::mesh::Triangulation;

/// Spatial displacement fields at the temporal nodes of one slab, blended in
/// time through the nodal basis. Nodes without an entry do not move.
#[derive(Debug, Clone)]
pub struct SpaceTimeDeformation {
    pub slab: usize,
    pub k_gs: usize,
    pub k_gq: usize,
    pub t_basis: LagrangeBasis1D,
    /// Per temporal node: global spatial node id -> displacement.
    pub disp: Vec<HashMap<usize, [f64; 2]>>,
    /// Elements whose displacement was reset to zero to avoid inversion.
    pub frozen: Vec<usize>,
}

impl SpaceTimeDeformation {
    pub fn identity(slab: usize, k_gs: usize, k_gq: usize, interval: (f64, f64)) -> Self {
        let t_basis = LagrangeBasis1D::lobatto(k_gq, interval.0, interval.1);
        let n = t_basis.len();
        SpaceTimeDeformation {
            slab,
            k_gs,
            k_gq,
            t_basis,
            disp: vec![HashMap::new(); n],
            frozen: Vec::new(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.disp.iter().all(|d| d.is_empty())
    }

    /// Nodal displacement coefficients of one element, or None when the
    /// element does not move at all.
    pub fn element_coeffs(
        &self,
        nodes_g: &SpatialNodeSet,
        tri: usize,
    ) -> Option<Vec<Vec<[f64; 2]>>> {
        let ids = &nodes_g.element_nodes[tri];
        let mut any = false;
        let coeffs: Vec<Vec<[f64; 2]>> = self
            .disp
            .iter()
            .map(|map| {
                ids.iter()
                    .map(|id| {
                        let d = map.get(id).copied().unwrap_or([0.0, 0.0]);
                        any |= d != [0.0, 0.0];
                        d
                    })
                    .collect()
            })
            .collect();
        any.then_some(coeffs)
    }
}

/// Geometry data of one mapped point: image, Jacobians, normals, the
/// discrete normal velocity and the surface-measure stretch.
#[derive(Debug, Clone, Copy)]
pub struct MappedPointData {
    pub reference: ([f64; 2], f64),
    pub image: ([f64; 2], f64),
    /// Spatial Jacobian of the spatial part.
    pub jac_s: [[f64; 2]; 2],
    /// Time derivative of the spatial part.
    pub dt_theta: [f64; 2],
    pub det_s: f64,
    pub n_lin: [f64; 2],
    pub n_slin: [f64; 3],
    pub n_h: [f64; 2],
    pub n_sh: [f64; 3],
    pub v_h: f64,
    /// `|det DΘ_s| * ||DΘ_s^{-T} n_lin||`: the stretch of the curve measure.
    pub j_geom: f64,
}

impl MappedPointData {
    /// The full surface-measure factor for iterated surface integrals,
    /// including the `sqrt(1 + V_h^2)` transformation and the `1/alpha_h`
    /// weighting of the bilinear form.
    pub fn j_alpha(&self, alpha_h: f64) -> f64 {
        self.j_geom * (1.0 + self.v_h * self.v_h).sqrt() / alpha_h
    }

    /// Spatial projector `I - n_h n_h^T` applied to a spatial vector.
    pub fn project_h(&self, v: [f64; 2]) -> [f64; 2] {
        let d = self.n_h[0] * v[0] + self.n_h[1] * v[1];
        [v[0] - d * self.n_h[0], v[1] - d * self.n_h[1]]
    }

    /// Space-time projector `I - n_Sh n_Sh^T` applied to a space-time vector.
    pub fn project_sh(&self, v: [f64; 3]) -> [f64; 3] {
        let d = self.n_sh[0] * v[0] + self.n_sh[1] * v[1] + self.n_sh[2] * v[2];
        [
            v[0] - d * self.n_sh[0],
            v[1] - d * self.n_sh[1],
            v[2] - d * self.n_sh[2],
        ]
    }

    /// Push an undeformed space-time gradient to the deformed geometry:
    /// `D_{(x,t)}Θ^{-T} grad`.
    pub fn push_gradient(&self, grad: [f64; 3]) -> [f64; 3] {
        let gx = inv_t_apply(self.jac_s, self.det_s, [grad[0], grad[1]]);
        let ainv_b = inv_apply(self.jac_s, self.det_s, self.dt_theta);
        [
            gx[0],
            gx[1],
            grad[2] - ainv_b[0] * grad[0] - ainv_b[1] * grad[1],
        ]
    }

    /// Spatial gradient pushed at fixed time: `DΘ_s^{-T} grad`.
    pub fn push_spatial_gradient(&self, grad: [f64; 2]) -> [f64; 2] {
        inv_t_apply(self.jac_s, self.det_s, grad)
    }
}

fn inv_apply(a: [[f64; 2]; 2], det: f64, v: [f64; 2]) -> [f64; 2] {
    [
        (a[1][1] * v[0] - a[0][1] * v[1]) / det,
        (-a[1][0] * v[0] + a[0][0] * v[1]) / det,
    ]
}

fn inv_t_apply(a: [[f64; 2]; 2], det: f64, v: [f64; 2]) -> [f64; 2] {
    [
        (a[1][1] * v[0] - a[1][0] * v[1]) / det,
        (-a[0][1] * v[0] + a[0][0] * v[1]) / det,
    ]
}

/// Everything needed to evaluate the deformed geometry of one slab.
pub struct SlabGeometry<'a> {
    pub mesh: &'a Triangulation,
    pub nodes_g: &'a SpatialNodeSet,
    pub ls: &'a DiscreteLevelSet,
    pub deform: &'a SpaceTimeDeformation,
}

impl<'a> SlabGeometry<'a> {
    /// Map a reference point of triangle `tri` and collect all geometric
    /// factors of the deformed geometry there.
    pub fn map_point(&self, tri: usize, x: [f64; 2], t: f64) -> Result<MappedPointData> {
        let coeffs = self.deform.element_coeffs(self.nodes_g, tri);
        self.map_point_cached(tri, x, t, coeffs.as_ref())
    }

    /// As [`map_point`](Self::map_point) with precomputed element
    /// displacement coefficients; assembly loops reuse them per element.
    pub fn map_point_cached(
        &self,
        tri: usize,
        x: [f64; 2],
        t: f64,
        coeffs: Option<&Vec<Vec<[f64; 2]>>>,
    ) -> Result<MappedPointData> {
        let hat = self.ls.hat_at(self.mesh, tri, x, t);
        let gn = (hat.grad[0] * hat.grad[0] + hat.grad[1] * hat.grad[1]).sqrt();
        if gn < 1e-14 * (1.0 + self.ls.hat_scale) {
            return Err(Error::DegenerateGradient {
                x: x[0],
                y: x[1],
                t,
            });
        }
        let n_lin = [hat.grad[0] / gn, hat.grad[1] / gn];
        let sn = (gn * gn + hat.dt * hat.dt).sqrt();
        let n_slin = [hat.grad[0] / sn, hat.grad[1] / sn, hat.dt / sn];

        let (image_s, jac_s, dt_theta) = match coeffs {
            None => (x, [[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0]),
            Some(c) => {
                use crate::femspace::{MAX_SPACE_NODES, MAX_TIME_NODES};
                let bary = self.mesh.barycentric(tri, x);
                let mut sv = [0.0; MAX_SPACE_NODES];
                let mut sg = [[0.0; 2]; MAX_SPACE_NODES];
                self.nodes_g
                    .basis
                    .eval_into([bary[1], bary[2]], &mut sv, &mut sg);
                let jt = inverse_transpose_affine(self.mesh, tri);
                let mut tv = [0.0; MAX_TIME_NODES];
                let mut td = [0.0; MAX_TIME_NODES];
                self.deform.t_basis.eval_into(t, &mut tv, &mut td);
                let mut img = x;
                let mut jac = [[1.0, 0.0], [0.0, 1.0]];
                let mut dt = [0.0, 0.0];
                for (m, row) in c.iter().enumerate() {
                    let mut d_m = [0.0, 0.0];
                    let mut grad_ref = [[0.0, 0.0], [0.0, 0.0]];
                    for (p, d) in row.iter().enumerate() {
                        d_m[0] += d[0] * sv[p];
                        d_m[1] += d[1] * sv[p];
                        grad_ref[0][0] += d[0] * sg[p][0];
                        grad_ref[0][1] += d[0] * sg[p][1];
                        grad_ref[1][0] += d[1] * sg[p][0];
                        grad_ref[1][1] += d[1] * sg[p][1];
                    }
                    img[0] += tv[m] * d_m[0];
                    img[1] += tv[m] * d_m[1];
                    dt[0] += td[m] * d_m[0];
                    dt[1] += td[m] * d_m[1];
                    for i in 0..2 {
                        let gx = jt[0][0] * grad_ref[i][0] + jt[0][1] * grad_ref[i][1];
                        let gy = jt[1][0] * grad_ref[i][0] + jt[1][1] * grad_ref[i][1];
                        jac[i][0] += tv[m] * gx;
                        jac[i][1] += tv[m] * gy;
                    }
                }
                (img, jac, dt)
            }
        };
        let det_s = jac_s[0][0] * jac_s[1][1] - jac_s[0][1] * jac_s[1][0];
        if det_s.abs() < 1e-14 {
            return Err(Error::Deformation(format!(
                "singular spatial Jacobian on triangle {tri}"
            )));
        }

        // Chain rule: derivatives of `phi_hat ∘ Θ^{-1}` at the image point.
        let g = inv_t_apply(jac_s, det_s, hat.grad);
        let g_norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
        let dt_comp = hat.dt - g[0] * dt_theta[0] - g[1] * dt_theta[1];
        let v_h = -dt_comp / g_norm;

        let n_h = [g[0] / g_norm, g[1] / g_norm];
        let pushed = {
            let gx = inv_t_apply(jac_s, det_s, [n_slin[0], n_slin[1]]);
            let ainv_b = inv_apply(jac_s, det_s, dt_theta);
            [
                gx[0],
                gx[1],
                n_slin[2] - ainv_b[0] * n_slin[0] - ainv_b[1] * n_slin[1],
            ]
        };
        let pn = (pushed[0] * pushed[0] + pushed[1] * pushed[1] + pushed[2] * pushed[2]).sqrt();
        let n_sh = [pushed[0] / pn, pushed[1] / pn, pushed[2] / pn];

        let stretched = inv_t_apply(jac_s, det_s, n_lin);
        let j_geom =
            det_s.abs() * (stretched[0] * stretched[0] + stretched[1] * stretched[1]).sqrt();

        Ok(MappedPointData {
            reference: (x, t),
            image: (image_s, t),
            jac_s,
            dt_theta,
            det_s,
            n_lin,
            n_slin,
            n_h,
            n_sh,
            v_h,
            j_geom,
        })
    }

    /// Discrete normal velocity at the image of a reference point.
    pub fn v_h(&self, tri: usize, x: [f64; 2], t: f64) -> Result<f64> {
        Ok(self.map_point(tri, x, t)?.v_h)
    }

    /// The measure factor `alpha_h` at a mapped point.
    pub fn alpha_at(&self, alpha: &AlphaField, tri: usize, mpd: &MappedPointData) -> f64 {
        match alpha {
            AlphaField::Simple => (1.0 + mpd.v_h * mpd.v_h).sqrt(),
            AlphaField::Improved(field) => {
                field
                    .eval(
                        self.mesh,
                        self.nodes_g,
                        tri,
                        mpd.reference.0,
                        mpd.reference.1,
                    )
                    .value
            }
        }
    }

    /// Invert the spatial map at time `t`: find the reference point that
    /// `Θ_{h,s}` sends to `y`, searching the located element and two rings
    /// of its neighbors.
    pub fn invert_map(&self, y: [f64; 2], t: f64, seed: usize) -> Result<[f64; 2]> {
        let h = self.mesh.h;
        let start = self
            .mesh
            .locate(y, seed)
            .ok_or_else(|| Error::Inversion(format!("({}, {}) outside the mesh", y[0], y[1])))?;
        let mut candidates = vec![start];
        for _ in 0..2 {
            let mut next = candidates.clone();
            for &t_id in &candidates {
                for n in self.mesh.neighbors[t_id].iter().flatten() {
                    if !next.contains(n) {
                        next.push(*n);
                    }
                }
            }
            candidates = next;
        }
        let tol = 1e-12 * h;
        for &tri in &candidates {
            let coeffs = self.deform.element_coeffs(self.nodes_g, tri);
            let mut x = {
                let [a, b, c] = self.mesh.tri_vertices(tri);
                [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
            };
            let mut converged = false;
            for _ in 0..50 {
                let Ok(mpd) = self.map_point_cached(tri, x, t, coeffs.as_ref()) else {
                    break;
                };
                let e = [mpd.image.0[0] - y[0], mpd.image.0[1] - y[1]];
                if (e[0] * e[0] + e[1] * e[1]).sqrt() <= tol {
                    converged = true;
                    break;
                }
                let step = inv_apply(mpd.jac_s, mpd.det_s, e);
                x[0] -= step[0];
                x[1] -= step[1];
                if (x[0] - y[0]).abs() > 3.0 * h || (x[1] - y[1]).abs() > 3.0 * h {
                    break;
                }
            }
            if converged {
                let bary = self.mesh.barycentric(tri, x);
                if bary.iter().all(|&b| b >= -1e-9) {
                    return Ok(x);
                }
            }
        }
        Err(Error::Inversion(format!(
            "no preimage of ({}, {}) at t = {t}",
            y[0], y[1]
        )))
    }
}

/// Build the slab deformation from the level set: at each temporal node,
/// lift every Lagrange node of every active element along the fixed
/// direction `grad phi_hat / |grad phi_hat|` so that the higher order field
/// matches the piecewise linear level value, then average nodal proposals
/// into a continuous field. Nodes not on active elements stay fixed.
///
/// For `k_gs = 1` the map is the identity.
pub fn build_deformation(
    ls: &DiscreteLevelSet,
    phi_ho: &SpaceTimeField,
    nodes_ho: &SpatialNodeSet,
    topo: &crate::cutgeom::CutTopologySlab,
    mesh: &Triangulation,
    nodes_g: &SpatialNodeSet,
) -> Result<SpaceTimeDeformation> {
    let mut out = SpaceTimeDeformation::identity(ls.slab, ls.k_gs, ls.k_gq, ls.interval);
    if ls.k_gs == 1 {
        return Ok(out);
    }
    let d_max = 0.5 * mesh.h;
    let scale = 1.0 + phi_ho.max_abs();
    let taus: Vec<f64> = out.t_basis.nodes.clone();
    for (m, &tau) in taus.iter().enumerate() {
        let mut proposals: Vec<(usize, [f64; 2])> = Vec::new();
        for &tri in &topo.active {
            let verts = mesh.tri_vertices(tri);
            let vals = ls.hat_vertex_values(mesh, tri, tau);
            // Elementwise constant gradient of the P1 field as the search
            // direction.
            let jt = inverse_transpose_affine(mesh, tri);
            let g_ref = [vals[1] - vals[0], vals[2] - vals[0]];
            let g = [
                jt[0][0] * g_ref[0] + jt[0][1] * g_ref[1],
                jt[1][0] * g_ref[0] + jt[1][1] * g_ref[1],
            ];
            let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
            if gn < 1e-14 * scale {
                continue;
            }
            let dir = [g[0] / gn, g[1] / gn];
            for (p, &node) in nodes_g.element_nodes[tri].iter().enumerate() {
                let xi = nodes_g.basis.nodes[p];
                let xp = [
                    verts[0][0]
                        + (verts[1][0] - verts[0][0]) * xi[0]
                        + (verts[2][0] - verts[0][0]) * xi[1],
                    verts[0][1]
                        + (verts[1][1] - verts[0][1]) * xi[0]
                        + (verts[2][1] - verts[0][1]) * xi[1],
                ];
                let target = vals[0] * (1.0 - xi[0] - xi[1]) + vals[1] * xi[0] + vals[2] * xi[1];
                if let Some(d) = line_search(
                    |d| {
                        let q = [xp[0] + d * dir[0], xp[1] + d * dir[1]];
                        phi_ho.eval(mesh, nodes_ho, tri, q, tau).value - target
                    },
                    |d| {
                        let q = [xp[0] + d * dir[0], xp[1] + d * dir[1]];
                        let fd = phi_ho.eval(mesh, nodes_ho, tri, q, tau);
                        fd.grad[0] * dir[0] + fd.grad[1] * dir[1]
                    },
                    d_max,
                    1e-13 * scale,
                ) {
                    proposals.push((node, [d * dir[0], d * dir[1]]));
                }
            }
        }
        let avg_x = oswald_average(nodes_g.n_nodes(), proposals.iter().map(|(n, d)| (*n, d[0])));
        let avg_y = oswald_average(nodes_g.n_nodes(), proposals.iter().map(|(n, d)| (*n, d[1])));
        let mut touched: Vec<usize> = proposals.iter().map(|(n, _)| *n).collect();
        touched.sort_unstable();
        touched.dedup();
        out.disp[m] = touched
            .into_iter()
            .map(|n| (n, [avg_x[n], avg_y[n]]))
            .collect();
    }
    freeze_inverted_elements(&mut out, topo, mesh, nodes_g)?;
    Ok(out)
}

/// Safeguarded 1D root search on `[-d_max, d_max]`: Newton from zero with a
/// bracketed bisection fallback; None when no root is bracketed.
fn line_search(
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    d_max: f64,
    tol: f64,
) -> Option<f64> {
    let mut d = 0.0;
    for _ in 0..30 {
        let r = f(d);
        if r.abs() <= tol {
            return Some(d);
        }
        let slope = df(d);
        if slope.abs() < 1e-14 {
            break;
        }
        let next = d - r / slope;
        if next.abs() > d_max {
            break;
        }
        if (next - d).abs() < 1e-16 * d_max.max(1.0) {
            return Some(next);
        }
        d = next;
    }
    let samples = 32;
    let mut best: Option<(f64, f64)> = None;
    let mut prev = (-d_max, f(-d_max));
    for i in 1..=samples {
        let x = -d_max + 2.0 * d_max * i as f64 / samples as f64;
        let v = f(x);
        if (prev.1 < 0.0) != (v < 0.0) {
            let mid_new = 0.5 * (prev.0 + x);
            let better = match best {
                None => true,
                Some((a, b)) => mid_new.abs() < 0.5 * (a + b).abs(),
            };
            if better {
                best = Some((prev.0, x));
            }
        }
        prev = (x, v);
    }
    let (mut a, mut b) = best?;
    let mut fa = f(a);
    for _ in 0..80 {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm.abs() <= tol || (b - a).abs() < 1e-15 {
            return Some(m);
        }
        if (fa < 0.0) != (fm < 0.0) {
            b = m;
        } else {
            a = m;
            fa = fm;
        }
    }
    Some(0.5 * (a + b))
}

/// Reset the displacement of elements whose deformed Jacobian is not safely
/// positive; keeps under-resolved meshes usable at reduced geometric order.
fn freeze_inverted_elements(
    def: &mut SpaceTimeDeformation,
    topo: &crate::cutgeom::CutTopologySlab,
    mesh: &Triangulation,
    nodes_g: &SpatialNodeSet,
) -> Result<()> {
    for _pass in 0..5 {
        let mut offenders = Vec::new();
        for &tri in &topo.active {
            let Some(coeffs) = def.element_coeffs(nodes_g, tri) else {
                continue;
            };
            let jt = inverse_transpose_affine(mesh, tri);
            'rows: for row in &coeffs {
                for xi in nodes_g.basis.nodes.iter() {
                    let (_, sg) = nodes_g.basis.eval(*xi);
                    let mut jac = [[1.0, 0.0], [0.0, 1.0]];
                    for (p, d) in row.iter().enumerate() {
                        let gx = jt[0][0] * sg[p][0] + jt[0][1] * sg[p][1];
                        let gy = jt[1][0] * sg[p][0] + jt[1][1] * sg[p][1];
                        jac[0][0] += d[0] * gx;
                        jac[0][1] += d[0] * gy;
                        jac[1][0] += d[1] * gx;
                        jac[1][1] += d[1] * gy;
                    }
                    let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
                    if det <= 1e-10 {
                        offenders.push(tri);
                        break 'rows;
                    }
                }
            }
        }
        if offenders.is_empty() {
            return Ok(());
        }
        for &tri in &offenders {
            log::warn!(
                "slab {}: freezing deformation of triangle {tri} to avoid inversion",
                def.slab
            );
            for map in def.disp.iter_mut() {
                for id in &nodes_g.element_nodes[tri] {
                    map.remove(id);
                }
            }
            def.frozen.push(tri);
        }
    }
    Err(Error::Deformation(
        "element inversion persisted after freezing".into(),
    ))
}
