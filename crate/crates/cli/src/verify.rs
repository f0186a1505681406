//! Runtime property suites: `verify --suite invariants` runs fast algebraic
//! checks, `verify --suite oracles` compares against independent references.

use tracefem::assembly::{manufactured_source, MethodParams, RMode};
use tracefem::cutgeom::{
    build_prism_quadrature, build_surface_quadrature, cut_segment, detect_active,
};
use tracefem::deform::{build_deformation, SlabGeometry};
use tracefem::femspace::{build_dofmap, spatial_nodes, SlabSpace, TensorBasis};
use tracefem::levelset::interpolate_levelset;
use tracefem::mesh::{build_structured_mesh, build_time_grid, refine_uniform};
use tracefem::postproc::{mass_area_series, PostprocContext};
use tracefem::quadrature::{gauss_legendre, triangle_rule};
use tracefem::scenes::{by_name, AnalyticScene, MovingCircle, StationaryCircle};
use tracefem::solver::march;

type Check = (&'static str, fn() -> Result<(), String>);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn gauss_exactness() -> Result<(), String> {
    for n in 1..=12 {
        let (xs, ws) = gauss_legendre(n);
        ensure(
            ws.iter().all(|w| *w > 0.0),
            format!("negative weight at n={n}"),
        )?;
        for deg in 0..2 * n {
            let approx: f64 = xs
                .iter()
                .zip(&ws)
                .map(|(x, w)| w * x.powi(deg as i32))
                .sum();
            let exact = if deg % 2 == 0 {
                2.0 / (deg as f64 + 1.0)
            } else {
                0.0
            };
            ensure(
                (approx - exact).abs() < 1e-13,
                format!("Gauss rule n={n} misses degree {deg}"),
            )?;
        }
    }
    for degree in 0..=8 {
        let rule = triangle_rule(degree);
        ensure(
            rule.weights.iter().all(|w| *w > 0.0),
            format!("negative triangle weight at degree {degree}"),
        )?;
        let total: f64 = rule.weights.iter().sum();
        ensure(
            (total - 0.5).abs() < 1e-13,
            format!("triangle rule degree {degree}: weights sum to {total}"),
        )?;
    }
    Ok(())
}

fn partition_of_unity() -> Result<(), String> {
    for (k_s, k_q) in [(1, 1), (2, 2), (3, 2)] {
        let basis = TensorBasis::new(k_s, k_q);
        for &(a, b, th) in &[(0.25, 0.3, 0.6), (0.05, 0.9, 0.0), (0.4, 0.4, 1.0)] {
            let (vals, _) = basis.eval([a, b], th);
            let s: f64 = vals.iter().sum();
            ensure(
                (s - 1.0).abs() < 1e-13,
                format!("partition of unity off by {} at k=({k_s},{k_q})", s - 1.0),
            )?;
        }
    }
    Ok(())
}

fn basis_gradients_fd() -> Result<(), String> {
    let basis = TensorBasis::new(2, 1);
    let eps = 1e-6;
    let pts = [(0.3, 0.25, 0.4), (0.15, 0.6, 0.8)];
    for (xi, eta, th) in pts {
        let (_, grads) = basis.eval([xi, eta], th);
        for i in 0..basis.n_local() {
            let f = |a: f64, b: f64, c: f64| basis.eval([a, b], c).0[i];
            let fd = [
                (f(xi + eps, eta, th) - f(xi - eps, eta, th)) / (2.0 * eps),
                (f(xi, eta + eps, th) - f(xi, eta - eps, th)) / (2.0 * eps),
                (f(xi, eta, th + eps) - f(xi, eta, th - eps)) / (2.0 * eps),
            ];
            for d in 0..3 {
                ensure(
                    (grads[i][d] - fd[d]).abs() < 1e-7,
                    format!("basis gradient dof {i} dir {d} off"),
                )?;
            }
        }
    }
    Ok(())
}

fn polynomial_reproduction() -> Result<(), String> {
    let mesh = build_structured_mesh([0.0, 0.0], [1.0, 1.0], 0.5).map_err(|e| e.to_string())?;
    let nodes = spatial_nodes(&mesh, 2);
    let active: Vec<usize> = (0..mesh.triangles.len()).collect();
    let dm = build_dofmap(&active, &nodes, 1, 2);
    let space = SlabSpace::new(&mesh, &nodes, dm, 2, (0.0, 1.0));
    let poly = |x: [f64; 2], t: f64| (x[0] * x[1] + x[0] * x[0]) * (1.0 + t + t * t);
    let f = space.interpolate(poly);
    for &(x, y, t) in &[(0.33, 0.21, 0.5), (0.77, 0.92, 0.1)] {
        let tri = mesh.locate([x, y], 0).ok_or("locate failed")?;
        let v = space.eval(&f, tri, [x, y], t).map_err(|e| e.to_string())?;
        ensure(
            (v - poly([x, y], t)).abs() < 1e-12,
            format!("polynomial not reproduced: {v} vs {}", poly([x, y], t)),
        )?;
    }
    Ok(())
}

fn normals_unit_length() -> Result<(), String> {
    let scene = AnalyticScene::new(MovingCircle);
    let mesh = build_structured_mesh([-1.0, -1.0], [1.0, 1.0], 0.125).map_err(|e| e.to_string())?;
    let grid = build_time_grid(1.0, 0.125, 0).map_err(|e| e.to_string())?;
    let nodes_g = spatial_nodes(&mesh, 2);
    let ls = interpolate_levelset(&scene, &mesh, &nodes_g, &grid, 1, 2);
    let topo = detect_active(&ls, &mesh);
    let deform = build_deformation(&ls, &ls.phi, &nodes_g, &topo, &mesh, &nodes_g)
        .map_err(|e| e.to_string())?;
    let geom = SlabGeometry {
        mesh: &mesh,
        nodes_g: &nodes_g,
        ls: &ls,
        deform: &deform,
    };
    let surf = build_surface_quadrature(&topo, &ls, &mesh, 3, 2).map_err(|e| e.to_string())?;
    for slice in surf.slices.iter().step_by(5) {
        for &(x, _) in &slice.points {
            let mpd = geom
                .map_point(slice.tri, x, slice.t)
                .map_err(|e| e.to_string())?;
            let n2 = (mpd.n_h[0].powi(2) + mpd.n_h[1].powi(2)).sqrt();
            let n3 = (mpd.n_sh[0].powi(2) + mpd.n_sh[1].powi(2) + mpd.n_sh[2].powi(2)).sqrt();
            ensure((n2 - 1.0).abs() < 1e-14, "spatial normal not unit")?;
            ensure((n3 - 1.0).abs() < 1e-14, "space-time normal not unit")?;
        }
    }
    Ok(())
}

fn cut_and_prism_rules() -> Result<(), String> {
    let coords = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
    let seg = cut_segment(coords, [1.0, -1.0, -1.0], 1e-12)
        .map_err(|e| e.to_string())?
        .ok_or("expected a cut")?;
    ensure(
        (seg[0][0] - 0.5).abs() < 1e-14 && (seg[1][1] - 0.5).abs() < 1e-14,
        "reference cut endpoints off",
    )?;
    let scene = AnalyticScene::new(StationaryCircle::default());
    let mesh = build_structured_mesh([-1.0, -1.0], [1.0, 1.0], 0.125).map_err(|e| e.to_string())?;
    let grid = build_time_grid(1.0, 0.25, 0).map_err(|e| e.to_string())?;
    let nodes_g = spatial_nodes(&mesh, 1);
    let ls = interpolate_levelset(&scene, &mesh, &nodes_g, &grid, 1, 1);
    let topo = detect_active(&ls, &mesh);
    let prisms = build_prism_quadrature(&topo, &mesh, 2, 2);
    let expect: f64 = topo
        .active
        .iter()
        .map(|&t| mesh.signed_area(t) * 0.25)
        .sum();
    let total = prisms.total_weight();
    ensure(
        (total - expect).abs() < 1e-12 * expect,
        format!("prism weights {total} vs {expect}"),
    )?;
    let surf = build_surface_quadrature(&topo, &ls, &mesh, 3, 2).map_err(|e| e.to_string())?;
    ensure(
        surf.slices
            .iter()
            .all(|s| s.omega > 0.0 && s.points.iter().all(|(_, w)| *w > 0.0)),
        "nonpositive quadrature weight",
    )?;
    Ok(())
}

fn mesh_refinement() -> Result<(), String> {
    let m0 = build_structured_mesh([-1.0, -1.0], [1.0, 1.0], 0.25).map_err(|e| e.to_string())?;
    let m1 = refine_uniform(&m0);
    ensure(m1.triangles.len() == 4 * m0.triangles.len(), "child count")?;
    ensure(
        (m1.total_area() - m0.total_area()).abs() < 1e-12 * m0.total_area(),
        "area not conserved",
    )?;
    ensure((m1.h - 0.5 * m0.h).abs() < 1e-15, "h not halved")?;
    Ok(())
}

pub fn invariants() -> Vec<Check> {
    vec![
        ("gauss-and-triangle-rules", gauss_exactness),
        ("partition-of-unity", partition_of_unity),
        ("basis-gradients-vs-fd", basis_gradients_fd),
        ("polynomial-reproduction", polynomial_reproduction),
        ("unit-normals", normals_unit_length),
        ("cut-and-prism-rules", cut_and_prism_rules),
        ("mesh-refinement", mesh_refinement),
    ]
}

fn active_set_brute_force() -> Result<(), String> {
    let scene = AnalyticScene::new(StationaryCircle::default());
    let mesh = build_structured_mesh([-1.0, -1.0], [1.0, 1.0], 0.125).map_err(|e| e.to_string())?;
    let grid = build_time_grid(1.0, 0.125, 0).map_err(|e| e.to_string())?;
    let nodes_g = spatial_nodes(&mesh, 1);
    let ls = interpolate_levelset(&scene, &mesh, &nodes_g, &grid, 1, 1);
    let topo = detect_active(&ls, &mesh);
    let mut brute = Vec::new();
    for tri in 0..mesh.triangles.len() {
        for k in 0..=100 {
            let t = ls.interval.0 + (ls.interval.1 - ls.interval.0) * k as f64 / 100.0;
            let vals = ls.hat_vertex_values(&mesh, tri, t);
            // Ties snap positive, matching the cut classification.
            let pos = vals.iter().filter(|&&v| v > -topo.eps).count();
            if pos == 1 || pos == 2 {
                brute.push(tri);
                break;
            }
        }
    }
    ensure(topo.active == brute, "active set differs from brute force")
}

fn surface_rule_polyline_oracle() -> Result<(), String> {
    let scene = AnalyticScene::new(StationaryCircle::default());
    let mesh = build_structured_mesh([-1.0, -1.0], [1.0, 1.0], 0.125).map_err(|e| e.to_string())?;
    let grid = build_time_grid(1.0, 0.125, 0).map_err(|e| e.to_string())?;
    let nodes_g = spatial_nodes(&mesh, 1);
    let ls = interpolate_levelset(&scene, &mesh, &nodes_g, &grid, 1, 1);
    let topo = detect_active(&ls, &mesh);
    let quad = build_surface_quadrature(&topo, &ls, &mesh, 3, 2).map_err(|e| e.to_string())?;
    let total = quad.integrate(|_, _, _| 1.0);
    let mut len = 0.0;
    for cut in &topo.cuts {
        let coords = mesh.tri_vertices(cut.tri);
        let vals = ls.hat_vertex_values(&mesh, cut.tri, ls.interval.0);
        if let Some([a, b]) = cut_segment(coords, vals, topo.eps).map_err(|e| e.to_string())? {
            len += ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        }
    }
    let expect = len * (ls.interval.1 - ls.interval.0);
    ensure(
        (total - expect).abs() <= 1e-12 * expect,
        format!("surface rule {total} vs polyline {expect}"),
    )
}

fn source_eigenfunction_oracle() -> Result<(), String> {
    let scene = AnalyticScene::new(StationaryCircle { radius: 1.0 });
    for th in [0.3f64, 1.7, 3.9, 5.5] {
        let x = [th.cos(), th.sin()];
        let f = manufactured_source(&scene, x, 0.0, 1.0).map_err(|e| e.to_string())?;
        ensure(
            (f - x[0]).abs() < 1e-12,
            format!("Laplace-Beltrami eigenfunction: f = {f} vs {}", x[0]),
        )?;
    }
    Ok(())
}

fn beta_independence_oracle() -> Result<(), String> {
    let cfg = crate::config::parse(
        "scene = stationary_circle\nk = 1\nlevels = 1..1\nh_init = 0.25\ndt_init = 0.25\n",
        std::path::Path::new("."),
    )
    .map_err(|e| e.to_string())?;
    let dev = crate::experiment::beta_independence_check(&cfg).map_err(|e| e.to_string())?;
    ensure(dev <= 1e-12, format!("beta dependence {dev:.3e}"))
}

fn geometry_order_oracle() -> Result<(), String> {
    let scene = AnalyticScene::new(MovingCircle);
    let mut sups = Vec::new();
    for (h, dt) in [(0.125, 0.125), (0.0625, 0.0625), (0.03125, 0.03125)] {
        let mesh = build_structured_mesh([-1.0, -1.0], [1.0, 1.0], h).map_err(|e| e.to_string())?;
        let grid = build_time_grid(1.0, dt, 0).map_err(|e| e.to_string())?;
        let nodes_g = spatial_nodes(&mesh, 2);
        let ls = interpolate_levelset(&scene, &mesh, &nodes_g, &grid, 1, 2);
        let topo = detect_active(&ls, &mesh);
        let deform = build_deformation(&ls, &ls.phi, &nodes_g, &topo, &mesh, &nodes_g)
            .map_err(|e| e.to_string())?;
        let geom = SlabGeometry {
            mesh: &mesh,
            nodes_g: &nodes_g,
            ls: &ls,
            deform: &deform,
        };
        let (t0, t1) = ls.interval;
        let mut sup = 0.0f64;
        for k in 1..=5 {
            let t = t0 + (t1 - t0) * (k as f64 - 0.5) / 5.0;
            let rule = tracefem::cutgeom::build_slice_quadrature(&topo, &ls, &mesh, t, 2)
                .map_err(|e| e.to_string())?;
            for s in &rule {
                for (x, _) in &s.points {
                    let y = geom
                        .map_point(s.tri, *x, t)
                        .map_err(|e| e.to_string())?
                        .image
                        .0;
                    let c = [
                        0.5 * (std::f64::consts::PI * t).cos(),
                        0.5 * (std::f64::consts::PI * t).sin(),
                    ];
                    let r = 0.45 * (-t / 4.0f64).exp();
                    sup = sup
                        .max(((((y[0] - c[0]).powi(2) + (y[1] - c[1]).powi(2)).sqrt()) - r).abs());
                }
            }
        }
        sups.push(sup);
    }
    let eocs: Vec<f64> = sups.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    ensure(
        eocs.iter().all(|e| *e >= 2.7),
        format!("geometry order EOC {eocs:?} below 2.7 (sups {sups:?})"),
    )
}

fn constant_solution_oracle() -> Result<(), String> {
    use tracefem::jet::Real;
    use tracefem::scenes::LevelSetScene;
    struct ConstCircle;
    impl LevelSetScene for ConstCircle {
        fn name(&self) -> &'static str {
            "const_circle"
        }
        fn phi<R: Real>(&self, x: R, y: R, _t: R) -> R {
            (x * x + y * y).sqrt() - R::constant(0.5)
        }
        fn velocity<R: Real>(&self, _x: R, _y: R, _t: R) -> [R; 2] {
            [R::constant(0.0), R::constant(0.0)]
        }
        fn exact<R: Real>(&self, _x: R, _y: R, _t: R) -> Option<R> {
            Some(R::constant(2.0))
        }
    }
    let scene = AnalyticScene::new(ConstCircle);
    let mesh = build_structured_mesh([-1.0, -1.0], [1.0, 1.0], 0.125).map_err(|e| e.to_string())?;
    let grid = build_time_grid(0.5, 0.25, 0).map_err(|e| e.to_string())?;
    let params = MethodParams::new(1, 1);
    let sol = march(&params, &scene, &mesh, &grid).map_err(|e| e.to_string())?;
    for rec in &sol.slabs {
        for c in &rec.fe.coeffs {
            ensure((c - 2.0).abs() < 1e-10, format!("coefficient {c} deviates"))?;
        }
    }
    Ok(())
}

fn mass_conservation_oracle() -> Result<(), String> {
    let scene = by_name("merging_circles").map_err(|e| e.to_string())?;
    let mesh = build_structured_mesh([-3.0, -3.0], [3.0, 3.0], 0.25).map_err(|e| e.to_string())?;
    let grid = build_time_grid(1.0, 0.0625, 0).map_err(|e| e.to_string())?;
    let mut params = MethodParams::new(1, 1);
    params.beta = 1.0;
    params.r_mode = RMode::One;
    let sol = march(&params, &scene, &mesh, &grid).map_err(|e| e.to_string())?;
    let nodes = spatial_nodes(&mesh, 1);
    let ctx = PostprocContext {
        scene: &scene,
        mesh: &mesh,
        nodes_g: &nodes,
        nodes_u: &nodes,
    };
    let (mass, _, e_mass) = mass_area_series(&ctx, &sol).map_err(|e| e.to_string())?;
    ensure(
        e_mass <= 1e-9 * mass[0].abs(),
        format!("mass drift {e_mass:.3e} of {:.3}", mass[0]),
    )
}

fn quadrature_l_convergence() -> Result<(), String> {
    let scene = AnalyticScene::new(MovingCircle);
    let mesh = build_structured_mesh([-1.0, -1.0], [1.0, 1.0], 0.125).map_err(|e| e.to_string())?;
    let grid = build_time_grid(1.0, 0.125, 0).map_err(|e| e.to_string())?;
    let nodes_g = spatial_nodes(&mesh, 1);
    let ls = interpolate_levelset(&scene, &mesh, &nodes_g, &grid, 2, 1);
    let topo = detect_active(&ls, &mesh);
    let integrand = |_: usize, x: [f64; 2], t: f64| 1.0 + x[0] * x[0] + (x[1] + t).sin();
    let values: Vec<f64> = (2..=8)
        .map(|l| {
            build_surface_quadrature(&topo, &ls, &mesh, l, 3)
                .map(|q| q.integrate(integrand))
                .map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    let reference = values.last().unwrap();
    for (i, v) in values.iter().enumerate() {
        if i + 2 >= 4 {
            ensure(
                (v - reference).abs() <= 1e-8 * reference.abs(),
                format!("L = {} deviates by {:.3e}", i + 2, (v - reference).abs()),
            )?;
        }
    }
    Ok(())
}

/// The integral transformation identity at the lowest geometry order: the
/// iterated-in-time quadrature of `g` equals the direct facet integral of
/// `g / sqrt(1 + V_h^2)` with the cross-product surface measure.
fn transformation_identity() -> Result<(), String> {
    use tracefem::quadrature::gauss_legendre_on;
    let scene = AnalyticScene::new(MovingCircle);
    let mesh = build_structured_mesh([-1.0, -1.0], [1.0, 1.0], 0.125).map_err(|e| e.to_string())?;
    let grid = build_time_grid(1.0, 0.125, 0).map_err(|e| e.to_string())?;
    let nodes_g = spatial_nodes(&mesh, 1);
    let ls = interpolate_levelset(&scene, &mesh, &nodes_g, &grid, 2, 1);
    let topo = detect_active(&ls, &mesh);
    let deform = build_deformation(&ls, &ls.phi, &nodes_g, &topo, &mesh, &nodes_g)
        .map_err(|e| e.to_string())?;
    let geom = SlabGeometry {
        mesh: &mesh,
        nodes_g: &nodes_g,
        ls: &ls,
        deform: &deform,
    };
    let dofmap = build_dofmap(&topo.active, &nodes_g, 2, 1);
    let space = SlabSpace::new(&mesh, &nodes_g, dofmap, 1, ls.interval);
    let g = space.interpolate(|x, t| 1.0 + x[0] * x[0] + 0.5 * x[1] + (1.0 + t).sin());

    let surf = build_surface_quadrature(&topo, &ls, &mesh, 6, 4).map_err(|e| e.to_string())?;
    let mut iterated = 0.0;
    for slice in &surf.slices {
        for &(x, w) in &slice.points {
            iterated += slice.omega
                * w
                * space
                    .eval(&g, slice.tri, x, slice.t)
                    .map_err(|e| e.to_string())?;
        }
    }

    let (gs, gw) = gauss_legendre_on(6, 0.0, 1.0);
    let mut direct = 0.0;
    for cut in &topo.cuts {
        let coords = mesh.tri_vertices(cut.tri);
        for (w, pattern) in cut.breakpoints.windows(2).zip(&cut.windows) {
            if pattern.is_none() || w[1] - w[0] < 1e-13 {
                continue;
            }
            let endpoints = |t: f64| {
                let vals = ls.hat_vertex_values(&mesh, cut.tri, t);
                cut_segment(coords, vals, topo.eps).ok().flatten()
            };
            for (tau_ref, wt) in gs.iter().zip(&gw) {
                let tau = w[0] + (w[1] - w[0]) * tau_ref;
                let Some([a, b]) = endpoints(tau) else {
                    continue;
                };
                let dt_fd = 1e-7 * (w[1] - w[0]);
                let (Some([ap, bp]), Some([am, bm])) =
                    (endpoints(tau + dt_fd), endpoints(tau - dt_fd))
                else {
                    continue;
                };
                let da = [
                    (ap[0] - am[0]) / (2.0 * dt_fd),
                    (ap[1] - am[1]) / (2.0 * dt_fd),
                ];
                let db = [
                    (bp[0] - bm[0]) / (2.0 * dt_fd),
                    (bp[1] - bm[1]) / (2.0 * dt_fd),
                ];
                for (s_ref, ws) in gs.iter().zip(&gw) {
                    let x = [a[0] + (b[0] - a[0]) * s_ref, a[1] + (b[1] - a[1]) * s_ref];
                    let ts = [b[0] - a[0], b[1] - a[1], 0.0];
                    let tt = [
                        da[0] + (db[0] - da[0]) * s_ref,
                        da[1] + (db[1] - da[1]) * s_ref,
                        1.0,
                    ];
                    let cross = [
                        ts[1] * tt[2] - ts[2] * tt[1],
                        ts[2] * tt[0] - ts[0] * tt[2],
                        ts[0] * tt[1] - ts[1] * tt[0],
                    ];
                    let measure =
                        (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
                    let mpd = geom.map_point(cut.tri, x, tau).map_err(|e| e.to_string())?;
                    let gv = space.eval(&g, cut.tri, x, tau).map_err(|e| e.to_string())?;
                    direct +=
                        wt * (w[1] - w[0]) * ws * measure * gv / (1.0 + mpd.v_h * mpd.v_h).sqrt();
                }
            }
        }
    }
    let rel = (iterated - direct).abs() / direct.abs();
    ensure(
        rel <= 1e-6,
        format!("transformation identity off by {rel:.3e}"),
    )
}

/// Stabilization consistency: the quadratic form applied to the interpolant
/// of the constant-in-normal-direction extension decays at 2 k_s - 1.
fn stabilization_consistency() -> Result<(), String> {
    use tracefem::assembly::{assemble_slab_with_flags, PreviousTrace, TermFlags};
    use tracefem::levelset::AlphaField;
    let scene = AnalyticScene::new(MovingCircle);
    for k in [1usize, 2] {
        let mut values = Vec::new();
        for (h, dt) in [(0.125, 0.125), (0.0625, 0.0625), (0.03125, 0.03125)] {
            let mesh =
                build_structured_mesh([-1.0, -1.0], [1.0, 1.0], h).map_err(|e| e.to_string())?;
            let grid = build_time_grid(1.0, dt, 0).map_err(|e| e.to_string())?;
            let nodes_g = spatial_nodes(&mesh, k);
            let ls = interpolate_levelset(&scene, &mesh, &nodes_g, &grid, 1, k);
            let topo = detect_active(&ls, &mesh);
            let deform = build_deformation(&ls, &ls.phi, &nodes_g, &topo, &mesh, &nodes_g)
                .map_err(|e| e.to_string())?;
            let geom = SlabGeometry {
                mesh: &mesh,
                nodes_g: &nodes_g,
                ls: &ls,
                deform: &deform,
            };
            let nodes_u = spatial_nodes(&mesh, k);
            let dofmap = build_dofmap(&topo.active, &nodes_u, 1, k);
            let space = SlabSpace::new(&mesh, &nodes_u, dofmap, k, ls.interval);
            let ext = space.interpolate(|x, t| {
                let p = scene.closest_point(x, t).unwrap();
                scene.exact(p, t).unwrap()
            });
            let params = MethodParams::new(k, k);
            let surf = build_surface_quadrature(
                &topo,
                &ls,
                &mesh,
                params.temporal_points(),
                params.segment_points(),
            )
            .map_err(|e| e.to_string())?;
            let prisms = build_prism_quadrature(&topo, &mesh, 2 * k, k + 1);
            let init = vec![0.0; space.dofmap.n_spatial()];
            let sys = assemble_slab_with_flags(
                &params,
                &scene,
                &geom,
                &topo,
                &space,
                &AlphaField::Simple,
                &surf,
                &prisms,
                &PreviousTrace::Initial(&init),
                TermFlags {
                    material: false,
                    divergence: false,
                    diffusion: false,
                    boundary: false,
                    stabilization: true,
                    source: false,
                },
            )
            .map_err(|e| e.to_string())?;
            let av = sys.matrix.matvec(&ext.coeffs);
            values.push(av.iter().zip(&ext.coeffs).map(|(a, b)| a * b).sum::<f64>());
        }
        let eocs: Vec<f64> = values.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
        let required = (2 * k) as f64 - 1.0;
        ensure(
            eocs.iter().all(|e| *e >= required - 0.3),
            format!("k={k}: stabilization decay {eocs:?}, need about {required}"),
        )?;
    }
    Ok(())
}

pub fn oracles() -> Vec<Check> {
    vec![
        ("active-set-brute-force", active_set_brute_force),
        ("surface-rule-polyline", surface_rule_polyline_oracle),
        ("source-eigenfunction", source_eigenfunction_oracle),
        ("beta-independence", beta_independence_oracle),
        ("geometry-order", geometry_order_oracle),
        ("transformation-identity", transformation_identity),
        ("stabilization-consistency", stabilization_consistency),
        ("constant-solution", constant_solution_oracle),
        ("exact-mass-conservation", mass_conservation_oracle),
        ("quadrature-l-convergence", quadrature_l_convergence),
    ]
}

/// Run a suite, print one line per check, return the failure count.
pub fn run_suite(checks: &[Check]) -> usize {
    let mut failures = 0;
    for (name, f) in checks {
        match f() {
            Ok(()) => println!("{name}: PASS"),
            Err(msg) => {
                println!("{name}: FAIL ({msg})");
                failures += 1;
            }
        }
    }
    failures
}
