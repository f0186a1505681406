//! Cut topology per slab: which elements the piecewise linear zero level
//! crosses at any time within the slab, the temporal breakpoints where the
//! cut pattern changes, and quadrature rules assembled from that structure.

use crate::error::{Error, Result};
use crate::levelset::DiscreteLevelSet;
use crate::mesh::Triangulation;
use crate::quadrature::{gauss_legendre_on, triangle_rule};

/// Near-zero vertex values are shifted to `+eps * scale` before sign
/// classification, giving a consistent convention for ties.
pub const TIE_EPS: f64 = 1e-12;

/// Cut data of one active triangle over one slab.
#[derive(Debug, Clone)]
pub struct TriangleCut {
    pub tri: usize,
    /// Sorted temporal breakpoints, first = slab start, last = slab end.
    pub breakpoints: Vec<f64>,
    /// Per window between consecutive breakpoints: the local vertex with the
    /// minority sign, or None when the window is uncut.
    pub windows: Vec<Option<usize>>,
}

impl TriangleCut {
    pub fn is_cut_somewhere(&self) -> bool {
        self.windows.iter().any(|w| w.is_some())
    }
}

/// Cut topology of one slab.
#[derive(Debug, Clone)]
pub struct CutTopologySlab {
    pub slab: usize,
    pub interval: (f64, f64),
    pub cuts: Vec<TriangleCut>,
    /// Active triangle ids, sorted ascending (parallel to `cuts`).
    pub active: Vec<usize>,
    /// Perturbation threshold: `TIE_EPS` times the sup of `phi_hat`.
    pub eps: f64,
}

impl CutTopologySlab {
    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn cut_for(&self, tri: usize) -> Option<&TriangleCut> {
        self.active
            .binary_search(&tri)
            .ok()
            .map(|pos| &self.cuts[pos])
    }
}

fn snap(v: f64, eps: f64) -> f64 {
    if v.abs() < eps {
        eps
    } else {
        v
    }
}

/// Roots of the temporal polynomial through `values` at the Lagrange nodes
/// of `basis`, restricted to the open interval. Bisection on sign-change
/// brackets found by sampling.
fn polynomial_roots(
    basis: &crate::femspace::LagrangeBasis1D,
    values: &[f64],
    interval: (f64, f64),
) -> Vec<f64> {
    let eval = |t: f64| -> f64 {
        let (b, _) = basis.eval(t);
        b.iter().zip(values).map(|(bi, vi)| bi * vi).sum()
    };
    let degree = values.len() - 1;
    if degree == 1 {
        let (v0, v1) = (values[0], values[1]);
        if (v0 < 0.0) != (v1 < 0.0) && v0 != v1 {
            let (t0, t1) = (basis.nodes[0], basis.nodes[1]);
            let t = t0 + (t1 - t0) * v0 / (v0 - v1);
            if t > interval.0 && t < interval.1 {
                return vec![t];
            }
        }
        return Vec::new();
    }
    // Sample finely enough to bracket all sign changes of a low-degree
    // polynomial, then bisect each bracket.
    let samples = 16 * degree.max(1);
    let dt = (interval.1 - interval.0) / samples as f64;
    let tol = 1e-13 * (interval.1 - interval.0);
    let mut roots = Vec::new();
    let mut prev_t = interval.0;
    let mut prev_v = eval(prev_t);
    for i in 1..=samples {
        let t = interval.0 + dt * i as f64;
        let v = eval(t);
        if (prev_v < 0.0) != (v < 0.0) {
            let (mut a, mut b) = (prev_t, t);
            let mut fa = prev_v;
            while b - a > tol {
                let m = 0.5 * (a + b);
                let fm = eval(m);
                if (fa < 0.0) != (fm < 0.0) {
                    b = m;
                } else {
                    a = m;
                    fa = fm;
                }
            }
            let r = 0.5 * (a + b);
            if r > interval.0 + tol && r < interval.1 - tol {
                roots.push(r);
            }
        }
        prev_t = t;
        prev_v = v;
    }
    roots
}

/// Detect the active elements and their temporal cut structure.
pub fn detect_active(ls: &DiscreteLevelSet, mesh: &Triangulation) -> CutTopologySlab {
    let eps = TIE_EPS * ls.hat_scale;
    let interval = ls.interval;
    let mut cuts = Vec::new();
    let mut active = Vec::new();
    for tri in 0..mesh.triangles.len() {
        let verts = mesh.triangles[tri];
        // Quick reject: a triangle whose vertex polynomials never change
        // sign and agree in sign over the whole slab is never cut.
        let mut bps = vec![interval.0, interval.1];
        for v in verts {
            let series = ls.hat_vertex_series(v);
            bps.extend(polynomial_roots(&ls.hat.t_basis, &series, interval));
        }
        bps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        bps.dedup_by(|a, b| (*a - *b).abs() < 1e-13 * (interval.1 - interval.0));
        let mut windows = Vec::with_capacity(bps.len() - 1);
        let mut any = false;
        for w in bps.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let vals = ls.hat_vertex_values(mesh, tri, mid);
            let signs = vals.map(|v| snap(v, eps) > 0.0);
            let pattern = minority_vertex(signs);
            any |= pattern.is_some();
            windows.push(pattern);
        }
        if any {
            active.push(tri);
            cuts.push(TriangleCut {
                tri,
                breakpoints: bps,
                windows,
            });
        }
    }
    CutTopologySlab {
        slab: ls.slab,
        interval,
        cuts,
        active,
        eps,
    }
}

fn minority_vertex(signs: [bool; 3]) -> Option<usize> {
    let pos = signs.iter().filter(|&&s| s).count();
    match pos {
        0 | 3 => None,
        1 => signs.iter().position(|&s| s),
        _ => signs.iter().position(|&s| !s),
    }
}

/// The straight cut of a triangle by the linear interpolant of the given
/// vertex values: endpoints on the two sign-change edges, or None.
pub fn cut_segment(
    coords: [[f64; 2]; 3],
    values: [f64; 3],
    eps: f64,
) -> Result<Option<[[f64; 2]; 2]>> {
    if values.iter().all(|v| *v == 0.0) {
        // The interpolant vanishes identically: the surface contains the
        // whole triangle.
        return Err(Error::DegenerateCut { tri: usize::MAX });
    }
    let v = values.map(|v| snap(v, eps));
    let signs = v.map(|v| v > 0.0);
    let Some(i) = minority_vertex(signs) else {
        return Ok(None);
    };
    let (j, k) = ((i + 1) % 3, (i + 2) % 3);
    let zero_on = |a: usize, b: usize| -> [f64; 2] {
        let s = v[a] / (v[a] - v[b]);
        [
            coords[a][0] + s * (coords[b][0] - coords[a][0]),
            coords[a][1] + s * (coords[b][1] - coords[a][1]),
        ]
    };
    // Order endpoints by the crossed edge: first (i, j), then (i, k).
    Ok(Some([zero_on(i, j), zero_on(i, k)]))
}

/// One temporal slice of the surface quadrature: Gauss points on the cut
/// segment of a triangle at a fixed time.
#[derive(Debug, Clone)]
pub struct SurfaceSlice {
    pub tri: usize,
    pub t: f64,
    /// Temporal quadrature weight.
    pub omega: f64,
    /// Points on the segment with arclength weights.
    pub points: Vec<([f64; 2], f64)>,
}

/// Space-time surface quadrature over the reference geometry, grouped by
/// triangle in ascending id order.
#[derive(Debug, Clone)]
pub struct SurfaceQuadrature {
    pub slices: Vec<SurfaceSlice>,
    pub temporal_points: usize,
}

impl SurfaceQuadrature {
    /// Apply to an integrand on (triangle, point, time).
    pub fn integrate(&self, mut f: impl FnMut(usize, [f64; 2], f64) -> f64) -> f64 {
        let mut acc = 0.0;
        for s in &self.slices {
            for &(x, w) in &s.points {
                acc += s.omega * w * f(s.tri, x, s.t);
            }
        }
        acc
    }
}

/// Build the topology-aware space-time surface rule: per active triangle and
/// cut window, `temporal_points` Gauss times, each carrying a spatial Gauss
/// rule on the segment.
pub fn build_surface_quadrature(
    topo: &CutTopologySlab,
    ls: &DiscreteLevelSet,
    mesh: &Triangulation,
    temporal_points: usize,
    segment_points: usize,
) -> Result<SurfaceQuadrature> {
    assert!(temporal_points >= 1 && segment_points >= 1);
    let (gs, gw) = crate::quadrature::gauss_legendre(segment_points);
    let dt_slab = topo.interval.1 - topo.interval.0;
    let mut slices = Vec::new();
    for cut in &topo.cuts {
        let coords = mesh.tri_vertices(cut.tri);
        for (w, pattern) in cut.breakpoints.windows(2).zip(&cut.windows) {
            if pattern.is_none() {
                continue;
            }
            if w[1] - w[0] < 1e-14 * dt_slab {
                continue;
            }
            let (ts, tw) = gauss_legendre_on(temporal_points, w[0], w[1]);
            for (t, omega) in ts.iter().zip(&tw) {
                let vals = ls.hat_vertex_values(mesh, cut.tri, *t);
                let seg = cut_segment(coords, vals, topo.eps)
                    .map_err(|_| Error::DegenerateCut { tri: cut.tri })?;
                let Some([a, b]) = seg else {
                    // A vertex value wandered through the snap band inside
                    // the window (possible near topological singularities):
                    // the cut there has near-zero measure, skip the slice.
                    continue;
                };
                let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
                let points = gs
                    .iter()
                    .zip(&gw)
                    .map(|(s, w)| {
                        let s01 = 0.5 * (s + 1.0);
                        (
                            [a[0] + s01 * (b[0] - a[0]), a[1] + s01 * (b[1] - a[1])],
                            0.5 * w * len,
                        )
                    })
                    .collect();
                slices.push(SurfaceSlice {
                    tri: cut.tri,
                    t: *t,
                    omega: *omega,
                    points,
                });
            }
        }
    }
    Ok(SurfaceQuadrature {
        slices,
        temporal_points,
    })
}

/// Spatial quadrature on the cut segments at one fixed time (used for slab
/// boundary integrals and time-slice norms).
pub fn build_slice_quadrature(
    topo: &CutTopologySlab,
    ls: &DiscreteLevelSet,
    mesh: &Triangulation,
    t: f64,
    segment_points: usize,
) -> Result<Vec<SurfaceSlice>> {
    let (gs, gw) = crate::quadrature::gauss_legendre(segment_points);
    let mut out = Vec::new();
    for cut in &topo.cuts {
        let coords = mesh.tri_vertices(cut.tri);
        let vals = ls.hat_vertex_values(mesh, cut.tri, t);
        let seg = cut_segment(coords, vals, topo.eps)
            .map_err(|_| Error::DegenerateCut { tri: cut.tri })?;
        let Some([a, b]) = seg else { continue };
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        if len < 1e-300 {
            continue;
        }
        let points = gs
            .iter()
            .zip(&gw)
            .map(|(s, w)| {
                let s01 = 0.5 * (s + 1.0);
                (
                    [a[0] + s01 * (b[0] - a[0]), a[1] + s01 * (b[1] - a[1])],
                    0.5 * w * len,
                )
            })
            .collect();
        out.push(SurfaceSlice {
            tri: cut.tri,
            t,
            omega: 1.0,
            points,
        });
    }
    Ok(out)
}

/// Tensor quadrature over the (undeformed) space-time prisms of the active
/// elements.
#[derive(Debug, Clone)]
pub struct PrismQuadrature {
    /// Per active triangle: (x, t, weight) with weights summing to
    /// area(K) * dt per prism.
    pub prisms: Vec<(usize, Vec<([f64; 2], f64, f64)>)>,
}

impl PrismQuadrature {
    pub fn total_weight(&self) -> f64 {
        self.prisms
            .iter()
            .flat_map(|(_, pts)| pts.iter().map(|p| p.2))
            .sum()
    }

    pub fn integrate(&self, mut f: impl FnMut(usize, [f64; 2], f64) -> f64) -> f64 {
        let mut acc = 0.0;
        for (tri, pts) in &self.prisms {
            for &(x, t, w) in pts {
                acc += w * f(*tri, x, t);
            }
        }
        acc
    }
}

/// Symmetric triangle rule of the given exactness degree, tensorized with
/// Gauss-Legendre in time.
pub fn build_prism_quadrature(
    topo: &CutTopologySlab,
    mesh: &Triangulation,
    spatial_degree: usize,
    temporal_points: usize,
) -> PrismQuadrature {
    let tri_rule = triangle_rule(spatial_degree);
    let (ts, tw) = gauss_legendre_on(temporal_points.max(1), topo.interval.0, topo.interval.1);
    let mut prisms = Vec::with_capacity(topo.active.len());
    for &tri in &topo.active {
        let [a, b, c] = mesh.tri_vertices(tri);
        let area2 = ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])).abs();
        let mut pts = Vec::with_capacity(tri_rule.points.len() * ts.len());
        for (xi, wx) in tri_rule.points.iter().zip(&tri_rule.weights) {
            let x = [
                a[0] + (b[0] - a[0]) * xi[0] + (c[0] - a[0]) * xi[1],
                a[1] + (b[1] - a[1]) * xi[0] + (c[1] - a[1]) * xi[1],
            ];
            for (t, wt) in ts.iter().zip(&tw) {
                pts.push((x, *t, wx * area2 * wt));
            }
        }
        prisms.push((tri, pts));
    }
    PrismQuadrature { prisms }
}
