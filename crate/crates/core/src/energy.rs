//! The discrete energy
//!
//! ```text
//! E(F, u, b) = Σ_{I,J} Σ_{e: I↔J} μ_e |b_IJe − b_JIe + u_I − u_J|² + Σ_I |I| u_I²
//! ```
//!
//! The double sum runs over ordered node pairs, so every undirected edge
//! contributes twice. Minimizing over `u` gives the SPD system
//! `(D + 2L) u = −2 Bᵀ W β` with `D = diag(|I|)`, `L` the weighted graph
//! Laplacian with `μ_IJ = Σ_e μ_e`, and `β_e = b_abe − b_bae`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::multigraph::{is_cycle_free, InclusionGraph, Short};
use crate::solver::{PreparedSystem, SolverError, SolverOptions, SymmetricMatrix};
use crate::vec3::{self, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum EnergyError {
    #[error("{what} has {got} entries, graph has {expected}")]
    IndexMismatch { what: &'static str, expected: usize, got: usize },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("graph contains a cycle")]
    Cyclic,
    #[error("family value {value} on edge {edge} exceeds the bound {bound}")]
    FamilyBound { edge: u32, value: f64, bound: f64 },
    #[error("invalid root: {0}")]
    InvalidRoot(String),
}

/// Two oriented values per edge: `[b_abe, b_bae]` where `(a, b)` are the edge
/// endpoints as stored in the graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BoundaryFamily(pub Vec<[f64; 2]>);

impl BoundaryFamily {
    pub fn zeros(edges: usize) -> Self {
        Self(vec![[0.0; 2]; edges])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Antisymmetric part `β_e = b_abe − b_bae`.
    pub fn antisymmetric(&self) -> Vec<f64> {
        self.0.iter().map(|[p, q]| p - q).collect()
    }

    pub fn scaled(&self, t: f64) -> Self {
        Self(self.0.iter().map(|[p, q]| [t * p, t * q]).collect())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|[p, q]| *p == 0.0 && *q == 0.0)
    }
}

/// One potential per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PotentialFamily(pub Vec<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    #[serde(rename = "gap")]
    pub gap_term: f64,
    #[serde(rename = "mass")]
    pub mass_term: f64,
    pub total: f64,
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), EnergyError> {
    if expected == got {
        Ok(())
    } else {
        Err(EnergyError::IndexMismatch { what, expected, got })
    }
}

fn mass_of(g: &InclusionGraph, identity_mass: bool) -> Vec<f64> {
    if identity_mass {
        vec![1.0; g.node_count()]
    } else {
        g.nodes.iter().map(|n| n.volume).collect()
    }
}

/// Evaluate the energy with the volume mass term.
pub fn energy(g: &InclusionGraph, u: &PotentialFamily, b: &BoundaryFamily) -> Result<EnergyBreakdown, EnergyError> {
    energy_with_mass(g, u, b, false)
}

pub fn energy_with_mass(
    g: &InclusionGraph,
    u: &PotentialFamily,
    b: &BoundaryFamily,
    identity_mass: bool,
) -> Result<EnergyBreakdown, EnergyError> {
    check_len("potential family", g.node_count(), u.0.len())?;
    check_len("boundary family", g.edge_count(), b.len())?;
    let gap_term: f64 = g
        .edges
        .iter()
        .zip(&b.0)
        .map(|(e, [bab, bba])| {
            let r = bab - bba + u.0[e.a] - u.0[e.b];
            2.0 * e.mu * r * r
        })
        .sum();
    let mass = mass_of(g, identity_mass);
    let mass_term: f64 = mass.iter().zip(&u.0).map(|(m, x)| m * x * x).sum();
    Ok(EnergyBreakdown {
        gap_term,
        mass_term,
        total: gap_term + mass_term,
    })
}

/// `∂E/∂u`.
pub fn energy_gradient(
    g: &InclusionGraph,
    u: &PotentialFamily,
    b: &BoundaryFamily,
    identity_mass: bool,
) -> Result<Vec<f64>, EnergyError> {
    check_len("potential family", g.node_count(), u.0.len())?;
    check_len("boundary family", g.edge_count(), b.len())?;
    let mass = mass_of(g, identity_mass);
    let mut grad: Vec<f64> = mass.iter().zip(&u.0).map(|(m, x)| 2.0 * m * x).collect();
    for (e, [bab, bba]) in g.edges.iter().zip(&b.0) {
        let r = bab - bba + u.0[e.a] - u.0[e.b];
        grad[e.a] += 4.0 * e.mu * r;
        grad[e.b] -= 4.0 * e.mu * r;
    }
    Ok(grad)
}

/// Weighted Laplacian `L` and mass diagonal `D` of a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianAssembly {
    pub laplacian: SymmetricMatrix,
    pub mass: Vec<f64>,
}

impl LaplacianAssembly {
    pub fn new(g: &InclusionGraph, identity_mass: bool) -> Self {
        let mut diag = vec![0.0; g.node_count()];
        for e in &g.edges {
            diag[e.a] += e.mu;
            diag[e.b] += e.mu;
        }
        let laplacian = SymmetricMatrix::from_triplets(diag, g.edges.iter().map(|e| (e.a, e.b, -e.mu)));
        Self {
            laplacian,
            mass: mass_of(g, identity_mass),
        }
    }

    /// `D + 2L`.
    pub fn system(&self) -> SymmetricMatrix {
        let n = self.mass.len();
        let diag = (0..n).map(|i| self.mass[i] + 2.0 * self.laplacian.diag[i]).collect();
        let mut off = Vec::new();
        for i in 0..n {
            for (j, v) in self.laplacian.row(i) {
                if j > i {
                    off.push((i, j, 2.0 * v));
                }
            }
        }
        SymmetricMatrix::from_triplets(diag, off)
    }

    /// Right-hand side `−2 Σ_e μ_e β_e (1_a − 1_b)` for antisymmetric parts `β`.
    pub fn rhs(g: &InclusionGraph, beta: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; g.node_count()];
        for (e, be) in g.edges.iter().zip(beta) {
            r[e.a] -= 2.0 * e.mu * be;
            r[e.b] += 2.0 * e.mu * be;
        }
        r
    }
}

/// Minimizer of the energy over `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub u: PotentialFamily,
    pub energy: EnergyBreakdown,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Energy minimizer prepared for a fixed graph, reusable across boundary families.
pub struct EnergyMinimizer<'g> {
    graph: &'g InclusionGraph,
    system: PreparedSystem,
    identity_mass: bool,
}

impl<'g> EnergyMinimizer<'g> {
    pub fn new(graph: &'g InclusionGraph, opts: SolverOptions) -> Result<Self, EnergyError> {
        let asm = LaplacianAssembly::new(graph, opts.identity_mass);
        let system = PreparedSystem::new(asm.system(), opts)?;
        Ok(Self {
            graph,
            system,
            identity_mass: opts.identity_mass,
        })
    }

    /// Minimizer for the given antisymmetric parts `β`.
    pub fn solve_antisymmetric(&self, beta: &[f64]) -> Result<(Vec<f64>, usize, f64), EnergyError> {
        check_len("antisymmetric part", self.graph.edge_count(), beta.len())?;
        let sol = self.system.solve(&LaplacianAssembly::rhs(self.graph, beta))?;
        Ok((sol.x, sol.iterations, sol.relative_residual))
    }

    /// `min_u E(u, b)` expressed through `β` only, with its minimizer.
    pub fn min_energy_antisymmetric(&self, beta: &[f64]) -> Result<(f64, Vec<f64>), EnergyError> {
        let (u, _, _) = self.solve_antisymmetric(beta)?;
        let g = self.graph;
        let mass = mass_of(g, self.identity_mass);
        let gap: f64 = g
            .edges
            .iter()
            .zip(beta)
            .map(|(e, be)| {
                let r = be + u[e.a] - u[e.b];
                2.0 * e.mu * r * r
            })
            .sum();
        let m: f64 = mass.iter().zip(&u).map(|(m, x)| m * x * x).sum();
        Ok((gap + m, u))
    }

    pub fn minimize(&self, b: &BoundaryFamily) -> Result<Minimum, EnergyError> {
        check_len("boundary family", self.graph.edge_count(), b.len())?;
        let (u, iterations, relative_residual) = self.solve_antisymmetric(&b.antisymmetric())?;
        let u = PotentialFamily(u);
        let energy = energy_with_mass(self.graph, &u, b, self.identity_mass)?;
        Ok(Minimum {
            u,
            energy,
            iterations,
            relative_residual,
        })
    }
}

/// Minimize the energy over `u` for a fixed boundary family.
pub fn minimize_energy(g: &InclusionGraph, b: &BoundaryFamily, opts: SolverOptions) -> Result<Minimum, EnergyError> {
    EnergyMinimizer::new(g, opts)?.minimize(b)
}

/// `b_IJe = ξ · x_I`.
pub fn affine_boundary_family(g: &InclusionGraph, xi: Vec3) -> BoundaryFamily {
    BoundaryFamily(
        g.edges
            .iter()
            .map(|e| [vec3::dot(xi, g.nodes[e.a].centroid), vec3::dot(xi, g.nodes[e.b].centroid)])
            .collect(),
    )
}

/// `b_IJe = ξ · (x_I − m_e)` with `m_e` the midpoint of the edge's contact points.
///
/// Fails if some value exceeds `|ξ| (diam(I) + δ)`.
pub fn midpoint_boundary_family(g: &InclusionGraph, xi: Vec3) -> Result<BoundaryFamily, EnergyError> {
    let xi_norm = vec3::norm(xi);
    let mut out = Vec::with_capacity(g.edge_count());
    for e in &g.edges {
        let mid = vec3::scale(vec3::add(e.xa, e.xb), 0.5);
        let mut pair = [0.0; 2];
        for (slot, node) in [e.a, e.b].into_iter().enumerate() {
            let n = &g.nodes[node];
            let v = vec3::dot(xi, vec3::sub(n.centroid, mid));
            let bound = xi_norm * (n.diameter + g.delta);
            if v.abs() > bound * (1.0 + 1e-12) {
                return Err(EnergyError::FamilyBound { edge: e.id, value: v, bound });
            }
            pair[slot] = v;
        }
        out.push(pair);
    }
    Ok(BoundaryFamily(out))
}

/// Potentials that cancel every gap residual on a cycle-free graph.
///
/// Each cluster is rooted (at `roots[c]` if given, else its smallest node) and
/// `u` accumulates the oriented antisymmetric parts along the unique branch
/// from the root, so `u_root = 0` and the gap term of the energy vanishes.
/// Potentials are chosen so that each residual is exactly zero in floating
/// point, not only up to rounding.
pub fn cycle_free_potentials(
    g: &InclusionGraph,
    b: &BoundaryFamily,
    roots: Option<&[usize]>,
) -> Result<PotentialFamily, EnergyError> {
    check_len("boundary family", g.edge_count(), b.len())?;
    if !is_cycle_free(g) {
        return Err(EnergyError::Cyclic);
    }
    let n = g.node_count();
    let inc = g.incidence();
    let (labels, k) = crate::multigraph::cluster_labels(g);
    let mut root_of = vec![usize::MAX; k];
    match roots {
        Some(rs) => {
            for &r in rs {
                if r >= n {
                    return Err(EnergyError::InvalidRoot(format!("node {r} does not exist")));
                }
                if root_of[labels[r]] != usize::MAX {
                    return Err(EnergyError::InvalidRoot(format!("two roots in the cluster of node {r}")));
                }
                root_of[labels[r]] = r;
            }
            if root_of.contains(&usize::MAX) {
                return Err(EnergyError::InvalidRoot("a cluster has no root".into()));
            }
        }
        None => {
            for i in (0..n).rev() {
                root_of[labels[i]] = i;
            }
        }
    }
    let mut u = vec![0.0; n];
    let mut seen = vec![false; n];
    for &root in &root_of {
        seen[root] = true;
        let mut stack = vec![root];
        while let Some(p) = stack.pop() {
            for &k in &inc[p] {
                let e = &g.edges[k];
                let [bab, bba] = b.0[k];
                let child = if e.a == p { e.b } else { e.a };
                if seen[child] {
                    continue;
                }
                seen[child] = true;
                let beta = bab - bba;
                u[child] = if child == e.b {
                    beta + u[p]
                } else {
                    solve_left(beta, u[p])
                };
                stack.push(child);
            }
        }
    }
    Ok(PotentialFamily(u))
}

/// A float `x` with `(beta + x) - target == 0` in floating point, when one
/// exists near `target - beta`, so the edge residual vanishes exactly as the
/// energy evaluates it.
fn solve_left(beta: f64, target: f64) -> f64 {
    let guess = target - beta;
    let (mut up, mut down) = (guess, guess);
    for _ in 0..64 {
        if beta + up == target {
            return up;
        }
        if beta + down == target {
            return down;
        }
        up = up.next_up();
        down = down.next_down();
    }
    guess
}

/// Lift potentials from a short `F′` back to `F`:
/// `u_I = ξ · x_I + u′_{I′} − ξ · x_{I′}` for `I ⊂ I′`.
pub fn lift_short_potentials(
    fine: &InclusionGraph,
    short: &Short,
    u_prime: &PotentialFamily,
    xi: Vec3,
) -> Result<PotentialFamily, EnergyError> {
    check_len("merge map", fine.node_count(), short.merge_map.len())?;
    check_len("potential family", short.graph.node_count(), u_prime.0.len())?;
    let u = fine
        .nodes
        .iter()
        .zip(&short.merge_map)
        .map(|(n, &p)| {
            let parent = &short.graph.nodes[p];
            u_prime.0[p] + (vec3::dot(xi, n.centroid) - vec3::dot(xi, parent.centroid))
        })
        .collect();
    Ok(PotentialFamily(u))
}
