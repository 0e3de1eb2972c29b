//! Network conductivity tensor from boundary-clamped Kirchhoff problems.
//!
//! For a direction `ξ`, nodes near `∂Q_N` are clamped to `u_I = ξ·x_I` and the
//! pure gap energy `Σ_e 2 μ_e (u_a − u_b)²` is minimized over the remaining
//! nodes. The energy density `e(ξ) = E_min / |Q_N|` is a quadratic form in `ξ`;
//! `A_net` is recovered by polarization from the three axes and three face
//! diagonals.
//!
//! `A_net` covers the inclusion network only. The ambient medium's conductance
//! is not added, and there is no mass term.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

use crate::criteria::{check_grid, CellError, CellTiming, CriteriaError};
use crate::geometry::{components, GeometryError, ModelParams, SphereConfig};
use crate::multigraph::{build_graph, GraphError, InclusionGraph};
use crate::solver::{PreparedSystem, SolverError, SolverOptions, SymmetricMatrix};
use crate::stats::{cell_seed, mean, stderr};
use crate::union_find::UnionFind;
use crate::vec3::{self, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum EffectiveError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Criteria(#[from] CriteriaError),
}

/// The six probing directions: axes, then `e1+e2`, `e1+e3`, `e2+e3`.
pub const DIRECTIONS: [Vec3; 6] = [
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 1.0, 0.0],
    [1.0, 0.0, 1.0],
    [0.0, 1.0, 1.0],
];

/// Largest `max_i |c_i|_∞ + r_i` over the node's spheres; falls back to the
/// centroid and diameter when the node has no geometry.
fn outer_extent(g: &InclusionGraph, i: usize) -> f64 {
    let n = &g.nodes[i];
    if n.spheres.is_empty() {
        return vec3::max_abs(n.centroid) + n.diameter;
    }
    n.spheres
        .iter()
        .map(|s| vec3::max_abs(s.center) + s.radius)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Nodes whose inclusion reaches `{x : dist(x, ∂Q_N) ≤ layer_width}`.
pub fn boundary_nodes(g: &InclusionGraph, layer_width: f64) -> Result<Vec<usize>, EffectiveError> {
    if !(layer_width > 0.0 && layer_width.is_finite()) {
        return Err(EffectiveError::InvalidParameter(format!(
            "layer width must be positive, got {layer_width}"
        )));
    }
    let inner = g.half_width - layer_width;
    Ok((0..g.node_count()).filter(|&i| outer_extent(g, i) >= inner).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionEnergy {
    pub xi: Vec3,
    pub energy_density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveTensor {
    /// Row-major symmetric 3×3 matrix.
    pub matrix: [[f64; 3]; 3],
    pub directions: Vec<DirectionEnergy>,
    #[serde(rename = "N")]
    pub half_width: f64,
    pub delta: f64,
    pub layer_width: f64,
    pub boundary_count: usize,
    pub interior_count: usize,
}

impl EffectiveTensor {
    pub fn trace(&self) -> f64 {
        self.matrix[0][0] + self.matrix[1][1] + self.matrix[2][2]
    }

    /// Upper triangle `a11, a12, a13, a22, a23, a33`.
    pub fn upper(&self) -> [f64; 6] {
        let m = &self.matrix;
        [m[0][0], m[0][1], m[0][2], m[1][1], m[1][2], m[2][2]]
    }
}

/// Boundary-clamped minimizer, factored once and reused for every direction.
struct ClampedProblem<'g> {
    graph: &'g InclusionGraph,
    clamped: Vec<bool>,
    /// Position of each free anchored node in the reduced system.
    slot: Vec<Option<usize>>,
    system: Option<PreparedSystem>,
}

impl<'g> ClampedProblem<'g> {
    fn new(graph: &'g InclusionGraph, boundary: &[usize], opts: SolverOptions) -> Result<Self, EffectiveError> {
        let n = graph.node_count();
        let mut clamped = vec![false; n];
        for &i in boundary {
            clamped[i] = true;
        }
        // Free nodes not connected to any clamped node through free nodes float;
        // their optimum is any constant, with zero energy.
        let mut uf = UnionFind::new(n + 1);
        let ground = n;
        for e in &graph.edges {
            let a = if clamped[e.a] { ground } else { e.a };
            let b = if clamped[e.b] { ground } else { e.b };
            uf.union(a, b);
        }
        let root = uf.find(ground);
        let mut slot = vec![None; n];
        let mut count = 0;
        for i in 0..n {
            if !clamped[i] && uf.find(i) == root {
                slot[i] = Some(count);
                count += 1;
            }
        }
        let system = if count == 0 {
            None
        } else {
            let mut diag = vec![0.0; count];
            let mut off = Vec::new();
            for e in &graph.edges {
                match (slot[e.a], slot[e.b]) {
                    (Some(i), Some(j)) => {
                        diag[i] += e.mu;
                        diag[j] += e.mu;
                        off.push((i, j, -e.mu));
                    }
                    (Some(i), None) | (None, Some(i)) => diag[i] += e.mu,
                    (None, None) => {}
                }
            }
            Some(PreparedSystem::new(SymmetricMatrix::from_triplets(diag, off), opts)?)
        };
        Ok(Self {
            graph,
            clamped,
            slot,
            system,
        })
    }

    /// Minimal gap energy for direction `xi`.
    fn energy(&self, xi: Vec3) -> Result<f64, EffectiveError> {
        let g = self.graph;
        let n = g.node_count();
        let mut u = vec![0.0; n];
        for i in 0..n {
            if self.clamped[i] {
                u[i] = vec3::dot(xi, g.nodes[i].centroid);
            }
        }
        if let Some(system) = &self.system {
            let mut rhs = vec![0.0; system.matrix().dim()];
            for e in &g.edges {
                match (self.slot[e.a], self.slot[e.b]) {
                    (Some(i), None) if self.clamped[e.b] => rhs[i] += e.mu * u[e.b],
                    (None, Some(j)) if self.clamped[e.a] => rhs[j] += e.mu * u[e.a],
                    _ => {}
                }
            }
            let sol = system.solve(&rhs)?;
            for i in 0..n {
                if let Some(k) = self.slot[i] {
                    u[i] = sol.x[k];
                }
            }
        }
        Ok(g.edges
            .iter()
            .map(|e| {
                let r = u[e.a] - u[e.b];
                2.0 * e.mu * r * r
            })
            .sum())
    }
}

/// Network tensor of a graph with clamping layer `layer_width`.
pub fn network_effective_tensor(
    g: &InclusionGraph,
    layer_width: f64,
    opts: SolverOptions,
) -> Result<EffectiveTensor, EffectiveError> {
    if g.node_count() == 0 {
        return Err(EffectiveError::EmptyGraph);
    }
    let boundary = boundary_nodes(g, layer_width)?;
    let problem = ClampedProblem::new(g, &boundary, opts)?;
    let q = g.box_volume();
    let e: Vec<f64> = DIRECTIONS
        .par_iter()
        .map(|xi| problem.energy(*xi).map(|v| v / q))
        .collect::<Result<_, _>>()?;
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        m[i][i] = e[i];
    }
    for (k, (i, j)) in [(0, 1), (0, 2), (1, 2)].into_iter().enumerate() {
        let v = 0.5 * (e[3 + k] - e[i] - e[j]);
        m[i][j] = v;
        m[j][i] = v;
    }
    Ok(EffectiveTensor {
        matrix: m,
        directions: DIRECTIONS
            .iter()
            .zip(&e)
            .map(|(xi, v)| DirectionEnergy {
                xi: *xi,
                energy_density: *v,
            })
            .collect(),
        half_width: g.half_width,
        delta: g.delta,
        layer_width,
        boundary_count: boundary.len(),
        interior_count: g.node_count() - boundary.len(),
    })
}

/// Graph of the whole configuration, boundary-crossing components included.
pub fn full_graph(config: &SphereConfig, delta: f64) -> Result<InclusionGraph, EffectiveError> {
    Ok(build_graph(&components(config), config, delta)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveCell {
    #[serde(rename = "N")]
    pub half_width: f64,
    pub seed_index: usize,
    pub seed: u64,
    pub tensor: EffectiveTensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveSummary {
    #[serde(rename = "N")]
    pub half_width: f64,
    pub samples: usize,
    /// Entrywise mean tensor.
    pub mean: [[f64; 3]; 3],
    /// Entrywise standard errors.
    pub stderr: [[f64; 3]; 3],
    /// Frobenius norm of `stderr`.
    pub stderr_frobenius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveScan {
    pub cells: Vec<EffectiveCell>,
    pub summary: Vec<EffectiveSummary>,
    pub errors: Vec<CellError>,
    #[serde(skip)]
    pub cell_seconds: Vec<CellTiming>,
}

/// Tensors for every `(N, seed index)` cell, with per-N aggregates.
///
/// The clamping layer defaults to `delta`.
#[allow(clippy::too_many_arguments)]
pub fn effective_scan(
    model: &ModelParams,
    delta: f64,
    n_grid: &[f64],
    n_seeds: usize,
    base_seed: u64,
    layer_width: Option<f64>,
    opts: SolverOptions,
) -> Result<EffectiveScan, EffectiveError> {
    check_grid(n_grid, n_seeds)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(GraphError::InvalidDelta(delta).into());
    }
    model.validate()?;
    let w = layer_width.unwrap_or(delta);
    if !(w > 0.0) {
        return Err(EffectiveError::InvalidParameter("layer width must be positive".into()));
    }
    let keys: Vec<(usize, usize)> = (0..n_grid.len()).flat_map(|i| (0..n_seeds).map(move |j| (i, j))).collect();
    let results: Vec<(Result<EffectiveTensor, String>, f64)> = keys
        .par_iter()
        .map(|&(i, j)| {
            let start = Instant::now();
            let n = n_grid[i];
            let seed = cell_seed(base_seed, n, j as u64);
            let r = model
                .generate(seed, n)
                .map_err(EffectiveError::from)
                .and_then(|c| full_graph(&c, delta))
                .and_then(|g| network_effective_tensor(&g, w, opts))
                .map_err(|e| e.to_string());
            (r, start.elapsed().as_secs_f64())
        })
        .collect();
    let mut cells = Vec::new();
    let mut errors = Vec::new();
    let mut cell_seconds = Vec::new();
    for (&(i, j), (r, seconds)) in keys.iter().zip(results) {
        let half_width = n_grid[i];
        let seed = cell_seed(base_seed, half_width, j as u64);
        cell_seconds.push(CellTiming { half_width, seed_index: j, seconds });
        match r {
            Ok(tensor) => cells.push(EffectiveCell {
                half_width,
                seed_index: j,
                seed,
                tensor,
            }),
            Err(message) => errors.push(CellError {
                half_width,
                seed_index: j,
                seed,
                message,
            }),
        }
    }
    let summary = n_grid
        .iter()
        .map(|&n| {
            let ts: Vec<&EffectiveTensor> = cells.iter().filter(|c| c.half_width == n).map(|c| &c.tensor).collect();
            let mut mean_m = [[f64::NAN; 3]; 3];
            let mut err_m = [[f64::NAN; 3]; 3];
            for r in 0..3 {
                for c in 0..3 {
                    let xs: Vec<f64> = ts.iter().map(|t| t.matrix[r][c]).collect();
                    mean_m[r][c] = mean(&xs);
                    err_m[r][c] = if xs.is_empty() { f64::NAN } else { stderr(&xs) };
                }
            }
            let fro = err_m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
            EffectiveSummary {
                half_width: n,
                samples: ts.len(),
                mean: mean_m,
                stderr: err_m,
                stderr_frobenius: fro,
            }
        })
        .collect();
    Ok(EffectiveScan {
        cells,
        summary,
        errors,
        cell_seconds,
    })
}
