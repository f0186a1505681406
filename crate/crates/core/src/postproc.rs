//! Error measures over a finished space-time solution: the energy norm with
//! its slab-end traces, discrete jumps, surface terms and the stabilization
//! contribution; the discrete max-in-time L2 norm; mass and area series; and
//! experimental orders of convergence.

use crate::cutgeom::{build_prism_quadrature, build_slice_quadrature, build_surface_quadrature};
use crate::deform::SlabGeometry;
use crate::error::{Error, Result};
use crate::femspace::{SlabSpace, SpatialNodeSet};
use crate::levelset::interpolate_levelset;
use crate::mesh::Triangulation;
use crate::scenes::AnalyticScene;
use crate::solver::SpaceTimeSolution;

/// How the exact solution is extended off the exact surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtensionMode {
    /// Constant extension in spatial normal direction via the scene's
    /// closest point map; required for the stabilization term of the
    /// energy norm.
    ClosestPoint,
    /// The scene's own smooth extension.
    Analytic,
}

/// All error measures of one run.
#[derive(Debug, Clone)]
pub struct ErrorReport {
    /// Full energy norm; None when the closest point map is unavailable and
    /// the stabilization term cannot be measured meaningfully.
    pub energy: Option<f64>,
    /// Energy norm without the stabilization term.
    pub surface_energy: f64,
    pub linf_l2: f64,
    /// The five squared pieces: max trace, jumps, L2, tangential, xi-term.
    pub parts: [f64; 5],
    pub jumps: Vec<f64>,
}

/// Shared inputs for post-processing.
pub struct PostprocContext<'a> {
    pub scene: &'a AnalyticScene,
    pub mesh: &'a Triangulation,
    pub nodes_g: &'a SpatialNodeSet,
    pub nodes_u: &'a SpatialNodeSet,
}

struct SlabView<'a> {
    ls: crate::levelset::DiscreteLevelSet,
    record: &'a crate::solver::SlabRecord,
}

impl<'a> SlabView<'a> {
    fn geometry(&'a self, ctx: &'a PostprocContext) -> SlabGeometry<'a> {
        SlabGeometry {
            mesh: ctx.mesh,
            nodes_g: ctx.nodes_g,
            ls: &self.ls,
            deform: &self.record.deform,
        }
    }

    fn space(&self, ctx: &'a PostprocContext<'a>) -> SlabSpace<'a> {
        SlabSpace::new(
            ctx.mesh,
            ctx.nodes_u,
            self.record.dofmap.clone(),
            self.record.fe.k_q,
            self.ls.interval,
        )
    }
}

fn slab_view<'a>(ctx: &PostprocContext, sol: &'a SpaceTimeSolution, n: usize) -> SlabView<'a> {
    let ls = interpolate_levelset(
        ctx.scene,
        ctx.mesh,
        ctx.nodes_g,
        &sol.grid,
        n,
        sol.params.k_gq,
    );
    SlabView {
        ls,
        record: &sol.slabs[n - 1],
    }
}

/// Value of the initial parametric interpolant at a point of slab 1.
fn eval_initial(
    sol: &SpaceTimeSolution,
    space: &SlabSpace,
    tri: usize,
    x: [f64; 2],
) -> Result<f64> {
    let pos = space
        .dofmap
        .active_position(tri)
        .ok_or(Error::PointLocation { x: x[0], y: x[1] })?;
    let bary = space.mesh.barycentric(tri, x);
    let (sv, _) = space.nodes.basis.eval([bary[1], bary[2]]);
    let n_t = space.basis.n_time();
    let mut v = 0.0;
    for (p, val) in sv.iter().enumerate() {
        let compact = space.dofmap.element_dofs[pos][p * n_t] / n_t;
        v += sol.initial[compact] * val;
    }
    Ok(v)
}

fn extension_value(
    scene: &AnalyticScene,
    mode: ExtensionMode,
    y: [f64; 2],
    t: f64,
) -> Result<(f64, [f64; 2])> {
    let jet = match mode {
        ExtensionMode::ClosestPoint => scene.extension_jet(y, t),
        ExtensionMode::Analytic => scene.exact_jet(y, t),
    };
    jet.map(|j| (j.value, j.grad))
        .ok_or_else(|| Error::UnsupportedScene("no exact solution".into()))
}

/// Energy-norm error of the discrete solution against the scene's exact
/// solution. Falls back to the surface energy norm (without the
/// stabilization term) when no closest point map is available.
pub fn energy_error(
    ctx: &PostprocContext,
    sol: &SpaceTimeSolution,
    mode: ExtensionMode,
) -> Result<ErrorReport> {
    if !ctx.scene.has_exact() {
        return Err(Error::UnsupportedScene(
            "error norms need an exact solution".into(),
        ));
    }
    let mode = match mode {
        ExtensionMode::ClosestPoint if !ctx.scene.has_closest_point() => {
            log::warn!("closest point map unavailable; reporting the surface energy norm only");
            ExtensionMode::Analytic
        }
        m => m,
    };
    let include_xi = mode == ExtensionMode::ClosestPoint;
    let params = &sol.params;
    let n_slabs = sol.grid.n_slabs();
    let l_norm = params.temporal_points() + 1;
    let q_norm = params.segment_points() + 1;
    let xi = params.xi_value(ctx.mesh.h);

    let mut max_trace2 = 0.0f64;
    let mut jump2_sum = 0.0;
    let mut jumps = Vec::with_capacity(n_slabs);
    let mut l2_sh = 0.0;
    let mut grad_sh = 0.0;
    let mut xi_term = 0.0;
    let mut linf_l2 = 0.0f64;

    let mut prev: Option<SlabView> = None;
    for n in 1..=n_slabs {
        let view = slab_view(ctx, sol, n);
        let geom = view.geometry(ctx);
        let space = view.space(ctx);
        let (t0, t1) = view.ls.interval;
        let mut cache = CoeffCache::default();

        // Space-time surface terms.
        let surf = build_surface_quadrature(&view.record.topo, &view.ls, ctx.mesh, l_norm, q_norm)?;
        for slice in &surf.slices {
            let coeffs = cache.get(&geom, slice.tri);
            for &(x, w_sp) in &slice.points {
                let mpd = geom.map_point_cached(slice.tri, x, slice.t, coeffs)?;
                let (ue, grad_ue) = extension_value(ctx.scene, mode, mpd.image.0, slice.t)?;
                let (uh, grad_uh) =
                    space.eval_with_gradient(&view.record.fe, slice.tri, x, slice.t)?;
                let e = ue - uh;
                let gh = mpd.push_spatial_gradient([grad_uh[0], grad_uh[1]]);
                let ge = mpd.project_h([grad_ue[0] - gh[0], grad_ue[1] - gh[1]]);
                let sqrt_v = (1.0 + mpd.v_h * mpd.v_h).sqrt();
                let w = slice.omega * w_sp * mpd.j_geom * sqrt_v;
                l2_sh += w * e * e;
                grad_sh += w * (ge[0] * ge[0] + ge[1] * ge[1]);
            }
        }

        // Stabilization term over the deformed prisms.
        if include_xi {
            let prism = build_prism_quadrature(
                &view.record.topo,
                ctx.mesh,
                2 * (params.k_s + 1),
                params.k_q + 2,
            );
            for (tri, pts) in &prism.prisms {
                let coeffs = cache.get(&geom, *tri);
                for &(x, t, w) in pts {
                    let mpd = geom.map_point_cached(*tri, x, t, coeffs)?;
                    let (_, grad_ue) = extension_value(ctx.scene, mode, mpd.image.0, t)?;
                    let (_, grad_uh) = space.eval_with_gradient(&view.record.fe, *tri, x, t)?;
                    let gh = mpd.push_spatial_gradient([grad_uh[0], grad_uh[1]]);
                    let nd = mpd.n_h[0] * (grad_ue[0] - gh[0]) + mpd.n_h[1] * (grad_ue[1] - gh[1]);
                    xi_term += xi * w * mpd.det_s.abs() * nd * nd;
                }
            }
        }

        // Slab-end trace at t_n.
        let top = build_slice_quadrature(&view.record.topo, &view.ls, ctx.mesh, t1, q_norm)?;
        let mut trace2 = 0.0;
        for slice in &top {
            let coeffs = cache.get(&geom, slice.tri);
            for &(x, w_sp) in &slice.points {
                let mpd = geom.map_point_cached(slice.tri, x, t1, coeffs)?;
                let (ue, _) = extension_value(ctx.scene, mode, mpd.image.0, t1)?;
                let uh = space.eval(&view.record.fe, slice.tri, x, t1)?;
                trace2 += w_sp * mpd.j_geom * (ue - uh) * (ue - uh);
            }
        }
        max_trace2 = max_trace2.max(trace2);
        linf_l2 = linf_l2.max(trace2.sqrt());

        // Jump at t_{n-1} on this slab's bottom geometry.
        let prev_parts = prev
            .as_ref()
            .map(|p| (p.geometry(ctx), p.space(ctx), &p.record.fe));
        let bottom = build_slice_quadrature(&view.record.topo, &view.ls, ctx.mesh, t0, q_norm)?;
        let mut jump2 = 0.0;
        for slice in &bottom {
            let coeffs = cache.get(&geom, slice.tri);
            for &(x, w_sp) in &slice.points {
                let mpd = geom.map_point_cached(slice.tri, x, t0, coeffs)?;
                let (ue_plus, _) = extension_value(ctx.scene, mode, mpd.image.0, t0)?;
                let uh_plus = space.eval(&view.record.fe, slice.tri, x, t0)?;
                let e_plus = ue_plus - uh_plus;
                let e_minus = match &prev_parts {
                    None => {
                        // Same geometry; the trace from below is the initial
                        // parametric interpolant.
                        let u0h = eval_initial(sol, &space, slice.tri, x)?;
                        ue_plus - u0h
                    }
                    Some((p_geom, p_space, p_fe)) => {
                        let tri_prev = if p_space.dofmap.active_position(slice.tri).is_some() {
                            slice.tri
                        } else {
                            nearest_active(ctx.mesh, p_space, slice.tri)
                                .ok_or(Error::PointLocation { x: x[0], y: x[1] })?
                        };
                        let mpd_prev = p_geom.map_point(tri_prev, x, t0)?;
                        let (ue_minus, _) = extension_value(ctx.scene, mode, mpd_prev.image.0, t0)?;
                        let uh_minus = p_space.eval(p_fe, tri_prev, x, t0)?;
                        ue_minus - uh_minus
                    }
                };
                let d = e_plus - e_minus;
                jump2 += w_sp * mpd.j_geom * d * d;
            }
        }
        jumps.push(jump2.sqrt());
        jump2_sum += jump2;

        drop(prev_parts);
        prev = Some(view);
    }

    let surface_energy2 = max_trace2 + jump2_sum + l2_sh + grad_sh;
    let energy = include_xi.then(|| (surface_energy2 + xi_term).sqrt());
    Ok(ErrorReport {
        energy,
        surface_energy: surface_energy2.sqrt(),
        linf_l2,
        parts: [max_trace2, jump2_sum, l2_sh, grad_sh, xi_term],
        jumps,
    })
}

/// Per-element displacement coefficients, cached while consecutive rule
/// entries stay on the same triangle.
#[derive(Default)]
struct CoeffCache {
    tri: Option<usize>,
    coeffs: Option<Vec<Vec<[f64; 2]>>>,
}

impl CoeffCache {
    fn get(&mut self, geom: &SlabGeometry, tri: usize) -> Option<&Vec<Vec<[f64; 2]>>> {
        if self.tri != Some(tri) {
            self.tri = Some(tri);
            self.coeffs = geom.deform.element_coeffs(geom.nodes_g, tri);
        }
        self.coeffs.as_ref()
    }
}

fn nearest_active(mesh: &Triangulation, space: &SlabSpace, tri: usize) -> Option<usize> {
    let mut ring = vec![tri];
    for _ in 0..2 {
        let mut next = ring.clone();
        for &t in &ring {
            for n in mesh.neighbors[t].iter().flatten() {
                if !next.contains(n) {
                    next.push(*n);
                }
            }
        }
        ring = next;
    }
    ring.into_iter()
        .skip(1)
        .find(|t| space.dofmap.active_position(*t).is_some())
        .or_else(|| {
            let [a, b, c] = mesh.tri_vertices(tri);
            let x = [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0];
            crate::assembly::nearest_active_element(mesh, &space.dofmap, x)
        })
}

/// Discrete max-in-time L2 error over the slab-end surfaces.
pub fn linf_l2_error(ctx: &PostprocContext, sol: &SpaceTimeSolution) -> Result<f64> {
    Ok(energy_error(ctx, sol, ExtensionMode::ClosestPoint)?.linf_l2)
}

/// Mass and area series at the slab endpoints, plus the maximum mass drift.
pub fn mass_area_series(
    ctx: &PostprocContext,
    sol: &SpaceTimeSolution,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let n_slabs = sol.grid.n_slabs();
    let q = sol.params.segment_points() + 1;
    let mut mass = Vec::with_capacity(n_slabs + 1);
    let mut area = Vec::with_capacity(n_slabs + 1);

    // n = 0: the first slab's geometry at t0 with the initial interpolant.
    {
        let view = slab_view(ctx, sol, 1);
        let geom = view.geometry(ctx);
        let space = view.space(ctx);
        let t0 = view.ls.interval.0;
        let rule = build_slice_quadrature(&view.record.topo, &view.ls, ctx.mesh, t0, q)?;
        let (mut m, mut a) = (0.0, 0.0);
        for slice in &rule {
            for &(x, w_sp) in &slice.points {
                let mpd = geom.map_point(slice.tri, x, t0)?;
                let u0 = eval_initial(sol, &space, slice.tri, x)?;
                m += w_sp * mpd.j_geom * u0;
                a += w_sp * mpd.j_geom;
            }
        }
        mass.push(m);
        area.push(a);
    }

    for n in 1..=n_slabs {
        let view = slab_view(ctx, sol, n);
        let geom = view.geometry(ctx);
        let space = view.space(ctx);
        let t1 = view.ls.interval.1;
        let rule = build_slice_quadrature(&view.record.topo, &view.ls, ctx.mesh, t1, q)?;
        let (mut m, mut a) = (0.0, 0.0);
        for slice in &rule {
            for &(x, w_sp) in &slice.points {
                let mpd = geom.map_point(slice.tri, x, t1)?;
                let uh = space.eval(&view.record.fe, slice.tri, x, t1)?;
                m += w_sp * mpd.j_geom * uh;
                a += w_sp * mpd.j_geom;
            }
        }
        mass.push(m);
        area.push(a);
    }

    let e_mass = mass
        .iter()
        .map(|m| (m - mass[0]).abs())
        .fold(0.0f64, f64::max);
    Ok((mass, area, e_mass))
}

/// Experimental orders of convergence: `log2(e_l / e_{l+1})` per refinement
/// pair; None for nonpositive errors.
pub fn compute_eoc(errors: &[f64]) -> Vec<Option<f64>> {
    errors
        .windows(2)
        .map(|w| {
            if w[0] > 0.0 && w[1] > 0.0 {
                Some((w[0] / w[1]).log2())
            } else {
                None
            }
        })
        .collect()
}

/// One row of a convergence study.
#[derive(Debug, Clone)]
pub struct LevelResult {
    pub l_s: u32,
    pub l_q: u32,
    pub h: f64,
    pub dt: f64,
    pub err_energy: Option<f64>,
    pub err_surface_energy: Option<f64>,
    pub err_linf_l2: Option<f64>,
    pub e_mass: Option<f64>,
}

/// Per-level results with EOC columns along the requested direction.
#[derive(Debug, Clone, Default)]
pub struct ConvergenceReport {
    pub rows: Vec<LevelResult>,
    pub eoc_s: Vec<Option<f64>>,
    pub eoc_q: Vec<Option<f64>>,
    pub eoc_qs: Vec<Option<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eoc_examples() {
        let e = compute_eoc(&[0.1, 0.05]);
        assert!((e[0].unwrap() - 1.0).abs() < 1e-13);
        let e = compute_eoc(&[0.1, 0.025]);
        assert!((e[0].unwrap() - 2.0).abs() < 1e-13);
        let e = compute_eoc(&[0.1, 0.1]);
        assert!(e[0].unwrap().abs() < 1e-13);
        let e = compute_eoc(&[0.1, 0.0]);
        assert!(e[0].is_none());
    }
}
