//! Fixed 2D background triangulation and the uniform partition of `[0, T]`
//! into time slabs.

use crate::error::{Error, Result};

/// An edge between two vertices together with the triangles it borders.
#[derive(Debug, Clone)]
pub struct Edge {
    /// Vertex indices with `v[0] < v[1]`.
    pub v: [usize; 2],
    /// Adjacent triangles; interior edges have two, boundary edges one.
    pub tris: Vec<usize>,
}

/// Conforming triangle mesh. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Triangulation {
    pub vertices: Vec<[f64; 2]>,
    /// Vertex index triples, positively oriented.
    pub triangles: Vec<[usize; 3]>,
    pub edges: Vec<Edge>,
    /// Per triangle, edge ids opposite to the local vertices 0, 1, 2.
    pub tri_edges: Vec<[usize; 3]>,
    /// Neighbor triangle across the edge opposite local vertex i, if any.
    pub neighbors: Vec<[Option<usize>; 3]>,
    /// Mesh size: the maximum edge length.
    pub h: f64,
}

impl Triangulation {
    fn from_cells(vertices: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>) -> Self {
        use std::collections::HashMap;
        let mut edge_ids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        let mut tri_edges = vec![[0usize; 3]; triangles.len()];
        for (t, tri) in triangles.iter().enumerate() {
            for i in 0..3 {
                let a = tri[(i + 1) % 3];
                let b = tri[(i + 2) % 3];
                let key = (a.min(b), a.max(b));
                let id = *edge_ids.entry(key).or_insert_with(|| {
                    edges.push(Edge {
                        v: [key.0, key.1],
                        tris: Vec::new(),
                    });
                    edges.len() - 1
                });
                edges[id].tris.push(t);
                tri_edges[t][i] = id;
            }
        }
        let mut neighbors = vec![[None; 3]; triangles.len()];
        for (t, te) in tri_edges.iter().enumerate() {
            for i in 0..3 {
                neighbors[t][i] = edges[te[i]].tris.iter().copied().find(|&s| s != t);
            }
        }
        let h = edges
            .iter()
            .map(|e| {
                let a = vertices[e.v[0]];
                let b = vertices[e.v[1]];
                ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
            })
            .fold(0.0, f64::max);
        Triangulation {
            vertices,
            triangles,
            edges,
            tri_edges,
            neighbors,
            h,
        }
    }

    pub fn tri_vertices(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.tri_vertices(t);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.signed_area(t)).sum()
    }

    /// Barycentric coordinates of `x` with respect to triangle `t`.
    pub fn barycentric(&self, t: usize, x: [f64; 2]) -> [f64; 3] {
        let [a, b, c] = self.tri_vertices(t);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        let l1 = ((x[0] - a[0]) * (c[1] - a[1]) - (x[1] - a[1]) * (c[0] - a[0])) / det;
        let l2 = ((b[0] - a[0]) * (x[1] - a[1]) - (b[1] - a[1]) * (x[0] - a[0])) / det;
        [1.0 - l1 - l2, l1, l2]
    }

    /// Locate the triangle containing `x` by walking across edges from
    /// `seed`, with an exhaustive scan as fallback.
    pub fn locate(&self, x: [f64; 2], seed: usize) -> Option<usize> {
        let mut cur = seed.min(self.triangles.len().saturating_sub(1));
        for _ in 0..self.triangles.len() {
            let bary = self.barycentric(cur, x);
            let (imin, &bmin) = bary
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap();
            if bmin >= -1e-12 {
                return Some(cur);
            }
            match self.neighbors[cur][imin] {
                Some(next) => cur = next,
                None => break,
            }
        }
        (0..self.triangles.len()).find(|&t| {
            let b = self.barycentric(t, x);
            b.iter().all(|&v| v >= -1e-12)
        })
    }
}

/// Build a structured criss-cross grid on an axis-aligned rectangle: squares
/// of side `h_init`, each split into two triangles along the same diagonal.
pub fn build_structured_mesh(
    lower: [f64; 2],
    upper: [f64; 2],
    h_init: f64,
) -> Result<Triangulation> {
    if h_init <= 0.0 {
        return Err(Error::Config(format!("h_init = {h_init} must be positive")));
    }
    let len = [upper[0] - lower[0], upper[1] - lower[1]];
    let mut n = [0usize; 2];
    for d in 0..2 {
        let ratio = len[d] / h_init;
        let rounded = ratio.round();
        if rounded < 1.0 || (ratio - rounded).abs() > 1e-12 * ratio.max(1.0) {
            return Err(Error::Config(format!(
                "h_init = {h_init} does not divide side length {}",
                len[d]
            )));
        }
        n[d] = rounded as usize;
    }
    let (nx, ny) = (n[0], n[1]);
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([
                lower[0] + len[0] * i as f64 / nx as f64,
                lower[1] + len[1] * j as f64 / ny as f64,
            ]);
        }
    }
    let vid = |i: usize, j: usize| j * (nx + 1) + i;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    Ok(Triangulation::from_cells(vertices, triangles))
}

/// Split every triangle into four congruent children through the edge
/// midpoints; `h` halves exactly.
pub fn refine_uniform(mesh: &Triangulation) -> Triangulation {
    let nv = mesh.vertices.len();
    let mut vertices = mesh.vertices.clone();
    // One new vertex per edge, indexed nv + edge id.
    for e in &mesh.edges {
        let a = mesh.vertices[e.v[0]];
        let b = mesh.vertices[e.v[1]];
        vertices.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
    }
    let mut triangles = Vec::with_capacity(4 * mesh.triangles.len());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let [v0, v1, v2] = *tri;
        let m0 = nv + mesh.tri_edges[t][0]; // midpoint of (v1, v2)
        let m1 = nv + mesh.tri_edges[t][1]; // midpoint of (v2, v0)
        let m2 = nv + mesh.tri_edges[t][2]; // midpoint of (v0, v1)
        triangles.push([v0, m2, m1]);
        triangles.push([m2, v1, m0]);
        triangles.push([m1, m0, v2]);
        triangles.push([m0, m1, m2]);
    }
    Triangulation::from_cells(vertices, triangles)
}

/// Uniform partition of `[0, T]` into slabs `I_n = [t_{n-1}, t_n]`.
#[derive(Debug, Clone)]
pub struct TimeGrid {
    pub t_nodes: Vec<f64>,
    pub dt: f64,
}

impl TimeGrid {
    pub fn n_slabs(&self) -> usize {
        self.t_nodes.len() - 1
    }

    pub fn t_end(&self) -> f64 {
        *self.t_nodes.last().unwrap()
    }

    /// Slab interval `I_n` for `n` in `1..=N`.
    pub fn slab(&self, n: usize) -> (f64, f64) {
        (self.t_nodes[n - 1], self.t_nodes[n])
    }
}

/// Time grid with step `dt_init * 2^{-level}`; the step must divide `T`.
pub fn build_time_grid(t_end: f64, dt_init: f64, level: u32) -> Result<TimeGrid> {
    if t_end <= 0.0 || dt_init <= 0.0 {
        return Err(Error::Config("T and dt_init must be positive".into()));
    }
    let dt = dt_init * 0.5f64.powi(level as i32);
    let ratio = t_end / dt;
    let n = ratio.round();
    if n < 1.0 || (ratio - n).abs() > 1e-12 * ratio {
        return Err(Error::Config(format!(
            "time step {dt} does not divide T = {t_end} into an integral number of slabs"
        )));
    }
    let n = n as usize;
    let t_nodes = (0..=n).map(|i| t_end * i as f64 / n as f64).collect();
    Ok(TimeGrid { t_nodes, dt })
}
