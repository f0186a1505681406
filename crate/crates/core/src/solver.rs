//! Per-slab direct solve and the slab-marching driver.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};

use crate::assembly::{
    assemble_slab, parametric_initial_condition, MethodParams, PreviousTrace, SlabSystem,
};
use crate::cutgeom::{
    build_prism_quadrature, build_surface_quadrature, detect_active, CutTopologySlab,
};
use crate::deform::{build_deformation, SlabGeometry, SpaceTimeDeformation};
use crate::error::{Error, Result};
use crate::femspace::{build_dofmap, spatial_nodes, FEFunction, SlabSpace};
use crate::levelset::{build_improved_alpha, interpolate_levelset, AlphaField};
use crate::mesh::{TimeGrid, Triangulation};
use crate::scenes::AnalyticScene;

/// Solve the sparse slab system by LU with partial pivoting and verify the
/// residual.
pub fn solve_slab(system: &SlabSystem, slab: usize) -> Result<Vec<f64>> {
    let n = system.rhs.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut triplets = Vec::with_capacity(system.matrix.nnz());
    for r in 0..n {
        let (cols, vals) = system.matrix.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            triplets.push(Triplet::new(r, c, v));
        }
    }
    let mat = SparseColMat::try_new_from_triplets(n, n, &triplets).map_err(|e| Error::Solve {
        slab,
        reason: format!("matrix construction failed: {e:?}"),
    })?;
    let lu = mat.sp_lu().map_err(|e| Error::Solve {
        slab,
        reason: format!("LU factorization failed: {e:?}"),
    })?;
    let b = Mat::from_fn(n, 1, |i, _| system.rhs[i]);
    let x = lu.solve(&b);
    let coeffs: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();

    let b_norm = system.rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let residual = system
        .matrix
        .matvec(&coeffs)
        .iter()
        .zip(&system.rhs)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if residual > 1e-10 * (b_norm + 1.0) {
        return Err(Error::Solve {
            slab,
            reason: format!("residual {residual:.3e} exceeds tolerance (|b| = {b_norm:.3e})"),
        });
    }
    Ok(coeffs)
}

/// Retained per-slab data of a finished march.
pub struct SlabRecord {
    pub fe: FEFunction,
    pub dofmap: crate::femspace::DofMap,
    pub topo: CutTopologySlab,
    pub deform: SpaceTimeDeformation,
}

/// The discrete space-time solution over all slabs.
pub struct SpaceTimeSolution {
    pub params: MethodParams,
    pub grid: TimeGrid,
    /// Spatial coefficients of the parametric initial interpolant on the
    /// first slab's DOF map.
    pub initial: Vec<f64>,
    pub slabs: Vec<SlabRecord>,
}

/// March slab by slab: interpolate the level set, detect the cut topology,
/// build the deformation, assemble and solve, then transfer the trace.
pub fn march(
    params: &MethodParams,
    scene: &AnalyticScene,
    mesh: &Triangulation,
    grid: &TimeGrid,
) -> Result<SpaceTimeSolution> {
    let nodes_g = spatial_nodes(mesh, params.k_gs);
    let nodes_u = spatial_nodes(mesh, params.k_s);
    let nodes_tilde = matches!(params.alpha, crate::assembly::AlphaMode::Improved)
        .then(|| spatial_nodes(mesh, params.k_gs + 1));
    let mut slabs: Vec<SlabRecord> = Vec::with_capacity(grid.n_slabs());
    let mut initial = Vec::new();
    for n in 1..=grid.n_slabs() {
        let ls = interpolate_levelset(scene, mesh, &nodes_g, grid, n, params.k_gq);
        let topo = detect_active(&ls, mesh);
        if topo.is_empty() {
            return Err(Error::EmptyActiveSet { slab: n });
        }
        let deform = build_deformation(&ls, &ls.phi, &nodes_g, &topo, mesh, &nodes_g)?;
        let geom = SlabGeometry {
            mesh,
            nodes_g: &nodes_g,
            ls: &ls,
            deform: &deform,
        };
        let alpha = match &nodes_tilde {
            Some(nt) => AlphaField::Improved(build_improved_alpha(
                scene,
                mesh,
                &nodes_g,
                nt,
                &topo.active,
                params.k_gq,
                ls.interval,
            )),
            None => AlphaField::Simple,
        };
        let dofmap = build_dofmap(&topo.active, &nodes_u, n, params.k_q);
        let space = SlabSpace::new(mesh, &nodes_u, dofmap, params.k_q, ls.interval);
        let surface = build_surface_quadrature(
            &topo,
            &ls,
            mesh,
            params.temporal_points(),
            params.segment_points(),
        )?;
        let prism = build_prism_quadrature(&topo, mesh, 2 * params.k_s, params.k_q + 1);
        if n == 1 {
            initial = parametric_initial_condition(scene, &geom, &space)?;
        }
        let prev = match slabs.last() {
            None => PreviousTrace::Initial(&initial),
            Some(last) => PreviousTrace::Slab {
                fe: &last.fe,
                dofmap: &last.dofmap,
                interval: grid.slab(n - 1),
            },
        };
        let system = assemble_slab(
            params, scene, &geom, &topo, &space, &alpha, &surface, &prism, &prev,
        )?;
        let coeffs = solve_slab(&system, n)?;
        let fe = FEFunction {
            slab: n,
            k_s: params.k_s,
            k_q: params.k_q,
            coeffs,
        };
        slabs.push(SlabRecord {
            fe,
            dofmap: space.dofmap,
            topo,
            deform,
        });
    }
    Ok(SpaceTimeSolution {
        params: params.clone(),
        grid: grid.clone(),
        initial,
        slabs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::CsrMatrix;

    #[test]
    fn one_dof_system() {
        let sys = SlabSystem {
            matrix: CsrMatrix::from_triplets(1, 1, &[(0, 0, 2.0)]),
            rhs: vec![4.0],
        };
        let x = solve_slab(&sys, 1).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn random_spd_system_residual() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let n = 50;
        // SPD by construction: A = M^T M + n I, dense but stored sparsely.
        let m: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let mut triplets = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let mut v = 0.0;
                for k in 0..n {
                    v += m[k][i] * m[k][j];
                }
                if i == j {
                    v += n as f64;
                }
                triplets.push((i, j, v));
            }
        }
        let rhs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sys = SlabSystem {
            matrix: CsrMatrix::from_triplets(n, n, &triplets),
            rhs: rhs.clone(),
        };
        let x = solve_slab(&sys, 3).unwrap();
        let r: f64 = sys
            .matrix
            .matvec(&x)
            .iter()
            .zip(&rhs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(r <= 1e-10, "residual {r}");
    }

    #[test]
    fn singular_system_reports_slab() {
        let sys = SlabSystem {
            matrix: CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 0, 1.0)]),
            rhs: vec![1.0, 2.0],
        };
        match solve_slab(&sys, 7) {
            Err(Error::Solve { slab, .. }) => assert_eq!(slab, 7),
            other => panic!("expected solve error, got {other:?}"),
        }
    }
}
