//! Space-time nodal interpolation of the level set function, its spatially
//! piecewise linear restriction, discrete normals, and the measure factor
//! field `alpha_h`.

use crate::error::{Error, Result};
use crate::femspace::{LagrangeBasis1D, SpatialNodeSet};
use crate::mesh::{TimeGrid, Triangulation};
use crate::scenes::AnalyticScene;

/// Value, spatial gradient and time derivative of a space-time field at one
/// point.
#[derive(Debug, Clone, Copy)]
pub struct FieldData {
    pub value: f64,
    pub grad: [f64; 2],
    pub dt: f64,
}

/// Scalar FE field on one slab: spatial Lagrange coefficients per temporal
/// node, interpolated in time through those nodes.
#[derive(Debug, Clone)]
pub struct SpaceTimeField {
    pub k_s: usize,
    pub k_q: usize,
    /// Temporal Lagrange basis at physical times within the slab.
    pub t_basis: LagrangeBasis1D,
    /// coeffs[m][spatial node id] at temporal node m.
    pub coeffs: Vec<Vec<f64>>,
}

impl SpaceTimeField {
    /// Evaluate inside (or, by polynomial extension, near) triangle `tri`.
    pub fn eval(
        &self,
        mesh: &Triangulation,
        nodes: &SpatialNodeSet,
        tri: usize,
        x: [f64; 2],
        t: f64,
    ) -> FieldData {
        use crate::femspace::{MAX_SPACE_NODES, MAX_TIME_NODES};
        let bary = mesh.barycentric(tri, x);
        let mut sv = [0.0; MAX_SPACE_NODES];
        let mut sg = [[0.0; 2]; MAX_SPACE_NODES];
        nodes.basis.eval_into([bary[1], bary[2]], &mut sv, &mut sg);
        let jt = crate::femspace::inverse_transpose_affine(mesh, tri);
        let mut tv = [0.0; MAX_TIME_NODES];
        let mut td = [0.0; MAX_TIME_NODES];
        self.t_basis.eval_into(t, &mut tv, &mut td);
        let ids = &nodes.element_nodes[tri];
        let mut value = 0.0;
        let mut grad = [0.0; 2];
        let mut dt = 0.0;
        for (m, row) in self.coeffs.iter().enumerate() {
            let mut v_m = 0.0;
            let mut g_m = [0.0, 0.0];
            for (p, &id) in ids.iter().enumerate() {
                let c = row[id];
                v_m += c * sv[p];
                g_m[0] += c * sg[p][0];
                g_m[1] += c * sg[p][1];
            }
            let gx = jt[0][0] * g_m[0] + jt[0][1] * g_m[1];
            let gy = jt[1][0] * g_m[0] + jt[1][1] * g_m[1];
            value += tv[m] * v_m;
            grad[0] += tv[m] * gx;
            grad[1] += tv[m] * gy;
            dt += td[m] * v_m;
        }
        FieldData { value, grad, dt }
    }

    /// Largest coefficient magnitude; the natural scale of the field.
    pub fn max_abs(&self) -> f64 {
        self.coeffs
            .iter()
            .flat_map(|row| row.iter())
            .fold(0.0, |acc: f64, v| acc.max(v.abs()))
    }
}

/// Nodal values far from the zero level are clamped to this magnitude: away
/// from the band only the sign of the level set matters, and scenes defined
/// through poles (for example two merging circles) can be singular deep
/// inside the enclosed region, even exactly at mesh nodes.
pub const LEVELSET_CLAMP: f64 = 1e2;

/// Nodal space-time interpolation of the scene's level set at the given
/// orders over one slab.
pub fn interpolate_field(
    scene: &AnalyticScene,
    nodes: &SpatialNodeSet,
    k_q: usize,
    interval: (f64, f64),
) -> SpaceTimeField {
    let t_basis = LagrangeBasis1D::lobatto(k_q, interval.0, interval.1);
    let coeffs = t_basis
        .nodes
        .iter()
        .map(|&t| {
            nodes
                .coords
                .iter()
                .map(|&x| {
                    let v = scene.phi(x, t);
                    if v.is_nan() {
                        LEVELSET_CLAMP
                    } else {
                        v.clamp(-LEVELSET_CLAMP, LEVELSET_CLAMP)
                    }
                })
                .collect()
        })
        .collect();
    SpaceTimeField {
        k_s: nodes.degree,
        k_q,
        t_basis,
        coeffs,
    }
}

/// Discrete level set on one slab: the interpolation `phi_h` at the geometry
/// orders plus its spatially piecewise linear vertex restriction.
#[derive(Debug, Clone)]
pub struct DiscreteLevelSet {
    pub slab: usize,
    pub k_gs: usize,
    pub k_gq: usize,
    pub interval: (f64, f64),
    pub phi: SpaceTimeField,
    pub hat: SpaceTimeField,
    /// Cached sup of the vertex coefficients; the field's natural scale.
    pub hat_scale: f64,
}

pub fn interpolate_levelset(
    scene: &AnalyticScene,
    mesh: &Triangulation,
    nodes_g: &SpatialNodeSet,
    grid: &TimeGrid,
    slab: usize,
    k_gq: usize,
) -> DiscreteLevelSet {
    let interval = grid.slab(slab);
    let phi = interpolate_field(scene, nodes_g, k_gq, interval);
    // Vertex nodes come first in the node set, so the spatial-P1 restriction
    // shares phi's vertex coefficients exactly.
    let nv = mesh.vertices.len();
    let hat = SpaceTimeField {
        k_s: 1,
        k_q: phi.k_q,
        t_basis: phi.t_basis.clone(),
        coeffs: phi.coeffs.iter().map(|row| row[..nv].to_vec()).collect(),
    };
    let hat_scale = hat.max_abs();
    DiscreteLevelSet {
        slab,
        k_gs: nodes_g.degree,
        k_gq: phi.k_q,
        interval,
        phi,
        hat,
        hat_scale,
    }
}

impl DiscreteLevelSet {
    /// The piecewise linear field at a point of triangle `tri`. Uses a P1
    /// node set view backed by the triangle's vertices.
    pub fn hat_at(&self, mesh: &Triangulation, tri: usize, x: [f64; 2], t: f64) -> FieldData {
        use crate::femspace::MAX_TIME_NODES;
        let bary = mesh.barycentric(tri, x);
        let jt = crate::femspace::inverse_transpose_affine(mesh, tri);
        let mut tv = [0.0; MAX_TIME_NODES];
        let mut td = [0.0; MAX_TIME_NODES];
        self.hat.t_basis.eval_into(t, &mut tv, &mut td);
        let verts = mesh.triangles[tri];
        let mut value = 0.0;
        let mut grad = [0.0; 2];
        let mut dt = 0.0;
        // P1 reference gradients are (-1,-1), (1,0), (0,1).
        let ref_g = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
        for (m, row) in self.hat.coeffs.iter().enumerate() {
            let mut v_m = 0.0;
            let mut g_m = [0.0, 0.0];
            for i in 0..3 {
                let c = row[verts[i]];
                v_m += c * bary[i];
                g_m[0] += c * ref_g[i][0];
                g_m[1] += c * ref_g[i][1];
            }
            value += tv[m] * v_m;
            grad[0] += tv[m] * (jt[0][0] * g_m[0] + jt[0][1] * g_m[1]);
            grad[1] += tv[m] * (jt[1][0] * g_m[0] + jt[1][1] * g_m[1]);
            dt += td[m] * v_m;
        }
        FieldData { value, grad, dt }
    }

    /// Values of `phi_hat` at the three vertices of `tri` at time `t`.
    pub fn hat_vertex_values(&self, mesh: &Triangulation, tri: usize, t: f64) -> [f64; 3] {
        use crate::femspace::MAX_TIME_NODES;
        let mut tv = [0.0; MAX_TIME_NODES];
        let mut td = [0.0; MAX_TIME_NODES];
        self.hat.t_basis.eval_into(t, &mut tv, &mut td);
        let verts = mesh.triangles[tri];
        let mut out = [0.0; 3];
        for (m, row) in self.hat.coeffs.iter().enumerate() {
            for i in 0..3 {
                out[i] += tv[m] * row[verts[i]];
            }
        }
        out
    }

    /// Temporal nodal values of `phi_hat` at one vertex.
    pub fn hat_vertex_series(&self, vertex: usize) -> Vec<f64> {
        self.hat.coeffs.iter().map(|row| row[vertex]).collect()
    }
}

/// Spatial and space-time unit normals of the piecewise planar reference
/// geometry at a point.
pub fn eval_normals_lin(
    ls: &DiscreteLevelSet,
    mesh: &Triangulation,
    tri: usize,
    x: [f64; 2],
    t: f64,
) -> Result<([f64; 2], [f64; 3])> {
    let d = ls.hat_at(mesh, tri, x, t);
    let gn = (d.grad[0] * d.grad[0] + d.grad[1] * d.grad[1]).sqrt();
    if gn < 1e-14 * (1.0 + ls.hat_scale) {
        return Err(Error::DegenerateGradient {
            x: x[0],
            y: x[1],
            t,
        });
    }
    let n_lin = [d.grad[0] / gn, d.grad[1] / gn];
    let sn = (gn * gn + d.dt * d.dt).sqrt();
    let n_slin = [d.grad[0] / sn, d.grad[1] / sn, d.dt / sn];
    Ok((n_lin, n_slin))
}

/// Arithmetic-mean nodal averaging: turns per-element nodal proposals into a
/// single value per node.
pub fn oswald_average(
    n_nodes: usize,
    proposals: impl IntoIterator<Item = (usize, f64)>,
) -> Vec<f64> {
    let mut sum = vec![0.0; n_nodes];
    let mut count = vec![0usize; n_nodes];
    for (node, value) in proposals {
        sum[node] += value;
        count[node] += 1;
    }
    for (s, &c) in sum.iter_mut().zip(&count) {
        if c > 0 {
            *s /= c as f64;
        }
    }
    sum
}

/// The measure factor approximation used in the bilinear form.
pub enum AlphaField {
    /// `sqrt(1 + V_h^2)` from the deformed-geometry normal velocity.
    Simple,
    /// Oswald projection of `sqrt(1 + V~_h^2)` built from a one-order-higher
    /// level set interpolation; a continuous FE field at the geometry orders.
    Improved(SpaceTimeField),
}

/// Build the improved `alpha_h` field: interpolate the level set at orders
/// `(k_gs + 1, k_gq + 1)`, evaluate `sqrt(1 + V~_h^2)` element-locally at the
/// projection nodes of the active elements, and average at shared nodes.
pub fn build_improved_alpha(
    scene: &AnalyticScene,
    mesh: &Triangulation,
    nodes_g: &SpatialNodeSet,
    nodes_tilde: &SpatialNodeSet,
    active: &[usize],
    k_gq: usize,
    interval: (f64, f64),
) -> SpaceTimeField {
    let tilde = interpolate_field(scene, nodes_tilde, k_gq + 1, interval);
    let t_basis = LagrangeBasis1D::lobatto(k_gq, interval.0, interval.1);
    let coeffs = t_basis
        .nodes
        .iter()
        .map(|&tau| {
            let tilde = &tilde;
            let proposals = active.iter().flat_map(move |&tri| {
                nodes_g.element_nodes[tri].iter().map(move |&node| {
                    let d = tilde.eval(mesh, nodes_tilde, tri, nodes_g.coords[node], tau);
                    let gn = (d.grad[0] * d.grad[0] + d.grad[1] * d.grad[1]).sqrt();
                    let v = -d.dt / gn;
                    (node, (1.0 + v * v).sqrt())
                })
            });
            oswald_average(nodes_g.n_nodes(), proposals)
        })
        .collect();
    SpaceTimeField {
        k_s: nodes_g.degree,
        k_q: k_gq,
        t_basis,
        coeffs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::femspace::spatial_nodes;
    use crate::mesh::{build_structured_mesh, build_time_grid};
    use crate::scenes::{AnalyticScene, MovingCircle, PlaneScene};

    #[test]
    fn linear_levelset_reproduced_exactly() {
        let scene = AnalyticScene::new(PlaneScene {
            coeffs: [1.0, 0.5, -1.0, 0.1],
        });
        let mesh = build_structured_mesh([-1.0, -1.0], [1.0, 1.0], 0.5).unwrap();
        let grid = build_time_grid(1.0, 0.25, 0).unwrap();
        for k_g in 1..=2 {
            let nodes = spatial_nodes(&mesh, k_g);
            let ls = interpolate_levelset(&scene, &mesh, &nodes, &grid, 2, k_g);
            for &(x, y, t) in &[(0.3, -0.2, 0.3), (-0.7, 0.4, 0.45), (0.9, 0.9, 0.5)] {
                let tri = mesh.locate([x, y], 0).unwrap();
                let d = ls.phi.eval(&mesh, &nodes, tri, [x, y], t);
                let exact = scene.phi([x, y], t);
                assert!((d.value - exact).abs() < 1e-13);
                assert!((d.grad[0] - 1.0).abs() < 1e-12);
                assert!((d.grad[1] - 0.5).abs() < 1e-12);
                assert!((d.dt + 1.0).abs() < 1e-12);
                // The vertex restriction agrees with phi_h at vertices.
                let h = ls.hat_at(&mesh, tri, [x, y], t);
                assert!((h.value - exact).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn hat_shares_vertex_coefficients() {
        let scene = AnalyticScene::new(MovingCircle);
        let mesh = build_structured_mesh([-1.0, -1.0], [1.0, 1.0], 0.25).unwrap();
        let grid = build_time_grid(1.0, 0.125, 0).unwrap();
        let nodes = spatial_nodes(&mesh, 2);
        let ls = interpolate_levelset(&scene, &mesh, &nodes, &grid, 3, 2);
        for m in 0..ls.hat.coeffs.len() {
            for v in 0..mesh.vertices.len() {
                assert_eq!(ls.hat.coeffs[m][v], ls.phi.coeffs[m][v]);
            }
        }
    }

    #[test]
    fn slab_continuity_of_coefficients() {
        // Shared temporal nodes of adjacent slabs carry identical values.
        let scene = AnalyticScene::new(MovingCircle);
        let mesh = build_structured_mesh([-1.0, -1.0], [1.0, 1.0], 0.25).unwrap();
        let grid = build_time_grid(1.0, 0.125, 0).unwrap();
        let nodes = spatial_nodes(&mesh, 2);
        let a = interpolate_levelset(&scene, &mesh, &nodes, &grid, 4, 2);
        let b = interpolate_levelset(&scene, &mesh, &nodes, &grid, 5, 2);
        let last = a.phi.coeffs.last().unwrap();
        let first = b.phi.coeffs.first().unwrap();
        assert_eq!(last, first);
    }

    #[test]
    fn normals_for_plane_scenes() {
        let mesh = build_structured_mesh([-1.0, -1.0], [1.0, 1.0], 0.5).unwrap();
        let grid = build_time_grid(1.0, 0.5, 0).unwrap();
        let nodes = spatial_nodes(&mesh, 1);

        let stationary = AnalyticScene::new(PlaneScene {
            coeffs: [1.0, 0.0, 0.0, 0.0],
        });
        let ls = interpolate_levelset(&stationary, &mesh, &nodes, &grid, 1, 1);
        let tri = mesh.locate([0.05, 0.3], 0).unwrap();
        let (n, ns) = eval_normals_lin(&ls, &mesh, tri, [0.05, 0.3], 0.2).unwrap();
        assert!((n[0] - 1.0).abs() < 1e-14 && n[1].abs() < 1e-14);
        assert!((ns[0] - 1.0).abs() < 1e-14 && ns[1].abs() < 1e-14 && ns[2].abs() < 1e-14);

        let moving = AnalyticScene::new(PlaneScene {
            coeffs: [1.0, 0.0, -1.0, 0.0],
        });
        let ls = interpolate_levelset(&moving, &mesh, &nodes, &grid, 1, 1);
        let (n, ns) = eval_normals_lin(&ls, &mesh, tri, [0.05, 0.3], 0.2).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert!((n[0] - 1.0).abs() < 1e-14);
        assert!((ns[0] - s).abs() < 1e-14);
        assert!(ns[1].abs() < 1e-14);
        assert!((ns[2] + s).abs() < 1e-14);
    }

    #[test]
    fn space_time_normal_matches_finite_differences() {
        let scene = AnalyticScene::new(MovingCircle);
        let mesh = build_structured_mesh([-1.0, -1.0], [1.0, 1.0], 0.125).unwrap();
        let grid = build_time_grid(1.0, 0.125, 0).unwrap();
        let nodes = spatial_nodes(&mesh, 1);
        let ls = interpolate_levelset(&scene, &mesh, &nodes, &grid, 2, 1);
        // A point near the zero level in the second slab.
        let t = 0.19;
        let x = [0.5 + 0.45 * 0.96, 0.05];
        let tri = mesh.locate(x, 0).unwrap();
        let (_, ns) = eval_normals_lin(&ls, &mesh, tri, x, t).unwrap();
        let eps = 1e-6;
        let f = |p: [f64; 2], tt: f64| ls.hat_at(&mesh, tri, p, tt).value;
        let g = [
            (f([x[0] + eps, x[1]], t) - f([x[0] - eps, x[1]], t)) / (2.0 * eps),
            (f([x[0], x[1] + eps], t) - f([x[0], x[1] - eps], t)) / (2.0 * eps),
            (f(x, t + eps) - f(x, t - eps)) / (2.0 * eps),
        ];
        let norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        for i in 0..3 {
            assert!((ns[i] - g[i] / norm).abs() < 1e-8);
        }
        let len = (ns[0] * ns[0] + ns[1] * ns[1] + ns[2] * ns[2]).sqrt();
        assert!((len - 1.0).abs() < 1e-14);
    }

    #[test]
    fn oswald_projection_fixes_continuous_fields() {
        let proposals = vec![
            (0, 2.0),
            (0, 2.0),
            (1, -1.5),
            (2, 0.25),
            (2, 0.25),
            (2, 0.25),
        ];
        let avg = oswald_average(3, proposals);
        assert_eq!(avg, vec![2.0, -1.5, 0.25]);
    }

    #[test]
    fn improved_alpha_exact_for_plane() {
        // phi = x - t is reproduced at any order, so V~ = 1 and the Oswald
        // projection of the constant sqrt(2) is exact.
        let scene = AnalyticScene::new(PlaneScene {
            coeffs: [1.0, 0.0, -1.0, 0.0],
        });
        let mesh = build_structured_mesh([-1.0, -1.0], [1.0, 1.0], 0.25).unwrap();
        let grid = build_time_grid(1.0, 0.25, 0).unwrap();
        let nodes_g = spatial_nodes(&mesh, 1);
        let nodes_t = spatial_nodes(&mesh, 2);
        let active: Vec<usize> = (0..mesh.triangles.len()).collect();
        let alpha =
            build_improved_alpha(&scene, &mesh, &nodes_g, &nodes_t, &active, 1, grid.slab(1));
        let d = alpha.eval(&mesh, &nodes_g, 5, [0.1, -0.3], 0.13);
        assert!((d.value - 2f64.sqrt()).abs() < 1e-12);
    }
}
