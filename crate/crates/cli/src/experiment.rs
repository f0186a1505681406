//! Experiment orchestration: level loops, post-processing, CSV emission and
//! the plain-text convergence table.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use tracefem::assembly::{assemble_slab, MethodParams, PreviousTrace};
use tracefem::cutgeom::{build_prism_quadrature, build_surface_quadrature, detect_active};
use tracefem::deform::{build_deformation, SlabGeometry};
use tracefem::femspace::{build_dofmap, spatial_nodes, SlabSpace};
use tracefem::levelset::{interpolate_levelset, AlphaField};
use tracefem::mesh::{build_structured_mesh, build_time_grid, refine_uniform, Triangulation};
use tracefem::postproc::{
    compute_eoc, energy_error, mass_area_series, ConvergenceReport, ExtensionMode, LevelResult,
    PostprocContext,
};
use tracefem::scenes::by_name;
use tracefem::solver::march;
use tracefem::sparse::CsrMatrix;
use tracefem::Result;

use crate::config::ExperimentConfig;

pub struct ExperimentOutcome {
    pub report: ConvergenceReport,
    pub failures: Vec<(u32, u32, String)>,
    pub csv_path: std::path::PathBuf,
}

impl ExperimentOutcome {
    pub fn rows(&self) -> &[LevelResult] {
        &self.report.rows
    }
}

fn mesh_at_level(cfg: &ExperimentConfig, l_s: u32) -> Result<Triangulation> {
    let mut mesh = build_structured_mesh(cfg.domain.0, cfg.domain.1, cfg.h_init)?;
    for _ in 0..l_s {
        mesh = refine_uniform(&mesh);
    }
    Ok(mesh)
}

fn run_level(
    cfg: &ExperimentConfig,
    params: &MethodParams,
    l_s: u32,
    l_q: u32,
) -> Result<LevelResult> {
    let scene = by_name(&cfg.scene)?;
    let mesh = mesh_at_level(cfg, l_s)?;
    let grid = build_time_grid(cfg.t_end, cfg.dt_init, l_q)?;
    let sol = march(params, &scene, &mesh, &grid)?;
    let nodes_g = spatial_nodes(&mesh, params.k_gs);
    let nodes_u = spatial_nodes(&mesh, params.k_s);
    let ctx = PostprocContext {
        scene: &scene,
        mesh: &mesh,
        nodes_g: &nodes_g,
        nodes_u: &nodes_u,
    };
    let (err_energy, err_surface_energy, err_linf_l2) = if scene.has_exact() {
        let rep = energy_error(&ctx, &sol, ExtensionMode::ClosestPoint)?;
        (rep.energy, Some(rep.surface_energy), Some(rep.linf_l2))
    } else {
        (None, None, None)
    };
    let (_, _, e_mass) = mass_area_series(&ctx, &sol)?;
    Ok(LevelResult {
        l_s,
        l_q,
        h: mesh.h,
        dt: grid.dt,
        err_energy,
        err_surface_energy,
        err_linf_l2,
        e_mass: Some(e_mass),
    })
}

/// Mass and area series of a single-level run (robustness studies).
pub fn mass_series_at(
    cfg: &ExperimentConfig,
    l_s: u32,
    l_q: u32,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let scene = by_name(&cfg.scene)?;
    let params = cfg.params();
    let mesh = mesh_at_level(cfg, l_s)?;
    let grid = build_time_grid(cfg.t_end, cfg.dt_init, l_q)?;
    let sol = march(&params, &scene, &mesh, &grid)?;
    let nodes_g = spatial_nodes(&mesh, params.k_gs);
    let nodes_u = spatial_nodes(&mesh, params.k_s);
    let ctx = PostprocContext {
        scene: &scene,
        mesh: &mesh,
        nodes_g: &nodes_g,
        nodes_u: &nodes_u,
    };
    mass_area_series(&ctx, &sol)
}

/// Assemble the first-slab matrix for several beta values and compare
/// entrywise; the discrete forms agree for stationary scenes.
pub fn beta_independence_check(cfg: &ExperimentConfig) -> Result<f64> {
    let scene = by_name(&cfg.scene)?;
    let mesh = mesh_at_level(cfg, *cfg.levels_s.start())?;
    let grid = build_time_grid(cfg.t_end, cfg.dt_init, *cfg.levels_q.start())?;
    let nodes_g = spatial_nodes(&mesh, cfg.k_g);
    let nodes_u = spatial_nodes(&mesh, cfg.k);
    let ls = interpolate_levelset(&scene, &mesh, &nodes_g, &grid, 1, cfg.k_g);
    let topo = detect_active(&ls, &mesh);
    let deform = build_deformation(&ls, &ls.phi, &nodes_g, &topo, &mesh, &nodes_g)?;
    let geom = SlabGeometry {
        mesh: &mesh,
        nodes_g: &nodes_g,
        ls: &ls,
        deform: &deform,
    };
    let mut mats: Vec<CsrMatrix> = Vec::new();
    for beta in [0.0, 0.5, 1.0] {
        let mut params = cfg.params();
        params.beta = beta;
        let dofmap = build_dofmap(&topo.active, &nodes_u, 1, params.k_q);
        let space = SlabSpace::new(&mesh, &nodes_u, dofmap, params.k_q, ls.interval);
        let surface = build_surface_quadrature(
            &topo,
            &ls,
            &mesh,
            params.temporal_points(),
            params.segment_points(),
        )?;
        let prism = build_prism_quadrature(&topo, &mesh, 2 * params.k_s, params.k_q + 1);
        let init = vec![0.0; space.dofmap.n_spatial()];
        let sys = assemble_slab(
            &params,
            &scene,
            &geom,
            &topo,
            &space,
            &AlphaField::Simple,
            &surface,
            &prism,
            &PreviousTrace::Initial(&init),
        )?;
        mats.push(sys.matrix);
    }
    let scale = mats[0].max_abs().max(1.0);
    let worst = mats[1..]
        .iter()
        .map(|m| mats[0].max_abs_diff(m))
        .fold(0.0f64, f64::max);
    Ok(worst / scale)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.12e}")).unwrap_or_default()
}

/// Run the configured level loop, write the CSV, print the table. Failures
/// are recorded per level and the remaining levels still run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let params = cfg.params();
    let pairs: Vec<(u32, u32)> = if cfg.diagonal {
        let offset_q = *cfg.levels_q.start() as i64 - *cfg.levels_s.start() as i64;
        cfg.levels_s
            .clone()
            .map(|l| (l, (l as i64 + offset_q) as u32))
            .collect()
    } else {
        cfg.levels_q
            .clone()
            .flat_map(|lq| cfg.levels_s.clone().map(move |ls| (ls, lq)))
            .collect()
    };

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &(l_s, l_q) in &pairs {
        log::info!("running level l_s = {l_s}, l_q = {l_q}");
        match run_level(cfg, &params, l_s, l_q) {
            Ok(row) => rows.push(row),
            Err(e) => {
                log::error!("level (l_s = {l_s}, l_q = {l_q}) failed: {e}");
                failures.push((l_s, l_q, e.to_string()));
            }
        }
    }

    let mut report = ConvergenceReport {
        rows,
        ..Default::default()
    };
    let pick = |row: &LevelResult| row.err_energy.or(row.err_surface_energy).or(row.e_mass);
    if cfg.diagonal {
        let errs: Vec<f64> = report.rows.iter().filter_map(pick).collect();
        if errs.len() == report.rows.len() {
            report.eoc_qs = compute_eoc(&errs);
        }
    } else {
        // Spatial EOC along the finest temporal level, temporal EOC along
        // the finest spatial level.
        let max_q = *cfg.levels_q.end();
        let max_s = *cfg.levels_s.end();
        let row_err = |ls: u32, lq: u32| {
            report
                .rows
                .iter()
                .find(|r| r.l_s == ls && r.l_q == lq)
                .and_then(pick)
        };
        let s_errs: Vec<f64> = cfg
            .levels_s
            .clone()
            .filter_map(|ls| row_err(ls, max_q))
            .collect();
        let q_errs: Vec<f64> = cfg
            .levels_q
            .clone()
            .filter_map(|lq| row_err(max_s, lq))
            .collect();
        report.eoc_s = compute_eoc(&s_errs);
        report.eoc_q = compute_eoc(&q_errs);
        let d_errs: Vec<f64> = cfg
            .levels_s
            .clone()
            .zip(cfg.levels_q.clone())
            .filter_map(|(ls, lq)| row_err(ls, lq))
            .collect();
        report.eoc_qs = compute_eoc(&d_errs);
    }

    fs::create_dir_all(&cfg.out).map_err(|e| {
        tracefem::Error::Config(format!("cannot create output dir {:?}: {e}", cfg.out))
    })?;
    let csv_path = cfg.out.join("report.csv");
    write_csv(&csv_path, cfg, &report)?;
    print_table(cfg, &report);

    if cfg.scene == "stationary_circle" {
        let dev = beta_independence_check(cfg)?;
        let verdict = if dev <= 1e-12 { "PASS" } else { "FAIL" };
        println!("beta-independence: {verdict} (max relative deviation {dev:.3e})");
    }
    Ok(ExperimentOutcome {
        report,
        failures,
        csv_path,
    })
}

fn write_csv(path: &Path, cfg: &ExperimentConfig, report: &ConvergenceReport) -> Result<()> {
    let mut out = String::from(
        "level,h,dt,err_energy,err_surface_energy,err_linf_l2,e_mass,eoc_s,eoc_q,eoc_qs\n",
    );
    for (i, row) in report.rows.iter().enumerate() {
        let eoc_at = |eocs: &Vec<Option<f64>>, idx: usize| -> String {
            if idx == 0 {
                String::new()
            } else {
                eocs.get(idx - 1)
                    .copied()
                    .flatten()
                    .map(|v| format!("{v:.6}"))
                    .unwrap_or_default()
            }
        };
        let (eoc_s, eoc_q, eoc_qs) = if cfg.diagonal {
            (String::new(), String::new(), eoc_at(&report.eoc_qs, i))
        } else {
            // Grid mode: attach directional EOCs to the rows they end on.
            let s = if row.l_q == *cfg.levels_q.end() {
                eoc_at(&report.eoc_s, (row.l_s - cfg.levels_s.start()) as usize)
            } else {
                String::new()
            };
            let q = if row.l_s == *cfg.levels_s.end() {
                eoc_at(&report.eoc_q, (row.l_q - cfg.levels_q.start()) as usize)
            } else {
                String::new()
            };
            (s, q, String::new())
        };
        let _ = writeln!(
            out,
            "{},{:.12e},{:.12e},{},{},{},{},{},{},{}",
            row.l_s,
            row.h,
            row.dt,
            fmt_opt(row.err_energy),
            fmt_opt(row.err_surface_energy),
            fmt_opt(row.err_linf_l2),
            fmt_opt(row.e_mass),
            eoc_s,
            eoc_q,
            eoc_qs,
        );
    }
    fs::write(path, out)
        .map_err(|e| tracefem::Error::Config(format!("cannot write {path:?}: {e}")))?;
    Ok(())
}

fn print_table(cfg: &ExperimentConfig, report: &ConvergenceReport) {
    println!(
        "scene {} | k = {}, k_g = {}, beta = {}, xi = {:?}, alpha = {:?}, R = {:?}",
        cfg.scene, cfg.k, cfg.k_g, cfg.beta, cfg.xi, cfg.alpha, cfg.r_mode
    );
    if cfg.diagonal {
        println!(
            "{:>4} {:>4} {:>12} {:>12} {:>13} {:>13} {:>13} {:>8}",
            "l_s", "l_q", "h", "dt", "energy", "linf_l2", "e_mass", "eoc_qs"
        );
        for (i, row) in report.rows.iter().enumerate() {
            let eoc = if i == 0 {
                String::from("-")
            } else {
                report
                    .eoc_qs
                    .get(i - 1)
                    .copied()
                    .flatten()
                    .map(|v| format!("{v:.3}"))
                    .unwrap_or_else(|| "-".into())
            };
            println!(
                "{:>4} {:>4} {:>12.6} {:>12.6} {:>13} {:>13} {:>13} {:>8}",
                row.l_s,
                row.l_q,
                row.h,
                row.dt,
                row.err_energy
                    .map(|v| format!("{v:.4e}"))
                    .unwrap_or_else(|| "-".into()),
                row.err_linf_l2
                    .map(|v| format!("{v:.4e}"))
                    .unwrap_or_else(|| "-".into()),
                row.e_mass
                    .map(|v| format!("{v:.4e}"))
                    .unwrap_or_else(|| "-".into()),
                eoc,
            );
        }
    } else {
        // Error matrix: temporal levels as rows, spatial levels as columns.
        print!("{:>6}", "lq\\ls");
        for ls in cfg.levels_s.clone() {
            print!(" {ls:>12}");
        }
        println!(" {:>8}", "eoc_q");
        for (qi, lq) in cfg.levels_q.clone().enumerate() {
            print!("{lq:>6}");
            for ls in cfg.levels_s.clone() {
                let v = report
                    .rows
                    .iter()
                    .find(|r| r.l_s == ls && r.l_q == lq)
                    .and_then(|r| r.err_energy.or(r.err_surface_energy).or(r.e_mass));
                match v {
                    Some(v) => print!(" {v:>12.4e}"),
                    None => print!(" {:>12}", "-"),
                }
            }
            let eoc = if qi == 0 {
                String::from("-")
            } else {
                report
                    .eoc_q
                    .get(qi - 1)
                    .copied()
                    .flatten()
                    .map(|v| format!("{v:.3}"))
                    .unwrap_or_else(|| "-".into())
            };
            println!(" {eoc:>8}");
        }
        print!("{:>6}", "eoc_s");
        for (si, _) in cfg.levels_s.clone().enumerate() {
            let eoc = if si == 0 {
                String::from("-")
            } else {
                report
                    .eoc_s
                    .get(si - 1)
                    .copied()
                    .flatten()
                    .map(|v| format!("{v:.3}"))
                    .unwrap_or_else(|| "-".into())
            };
            print!(" {eoc:>12}");
        }
        println!();
    }
}
