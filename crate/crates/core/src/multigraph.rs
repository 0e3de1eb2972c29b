//! The δ-multigraph of inclusions.
//!
//! Nodes are connected components of the sphere union; every pair of spheres
//! from distinct components whose surfaces are at most δ apart contributes one
//! edge, so parallel edges between a node pair are expected. Edge weights are
//! `μ_e = |ln d_e|` with `d_e ≤ δ < 1`.
//!
//! Shorts are graph operations: the nodes of a short are groups of original
//! nodes, carrying summed volumes, volume-weighted centroids and the exact
//! union diameter of their spheres.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{union_diameter, ComponentSet, Sphere, SphereConfig};
use crate::spatial::SpatialGrid;
use crate::union_find::UnionFind;
use crate::vec3::{self, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("delta must lie in (0, 1), got {0}")]
    InvalidDelta(f64),
    #[error("kappa must lie in (0, 1), got {0}")]
    InvalidKappa(f64),
    #[error("spheres overlap or touch (center distance {dist} <= radius sum {radius_sum})")]
    Overlap { dist: f64, radius_sum: f64 },
    #[error("node {0} does not exist")]
    MissingNode(usize),
    #[error("edge id {0} does not exist")]
    MissingEdge(u32),
    #[error("component set does not match the configuration")]
    ComponentMismatch,
    #[error("invalid graph: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    #[serde(rename = "vol")]
    pub volume: f64,
    #[serde(rename = "x")]
    pub centroid: Vec3,
    #[serde(rename = "diam")]
    pub diameter: f64,
    /// The node reaches the δ-layer along the box boundary.
    pub boundary: bool,
    /// Geometry of the inclusion; empty for purely combinatorial graphs.
    #[serde(default)]
    pub spheres: Vec<Sphere>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    /// Stable identifier, preserved through shorts.
    pub id: u32,
    pub a: usize,
    pub b: usize,
    /// Contact point on node `a`.
    pub xa: Vec3,
    /// Contact point on node `b`.
    pub xb: Vec3,
    #[serde(rename = "d")]
    pub gap: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclusionGraph {
    pub delta: f64,
    #[serde(rename = "N")]
    pub half_width: f64,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    /// False when two gaps on the same inclusion have contact points closer
    /// than 2δ, i.e. the pairwise gap-separation condition fails.
    #[serde(default = "default_true")]
    pub gap_separation_ok: bool,
}

fn default_true() -> bool {
    true
}

impl InclusionGraph {
    /// Assemble a graph from explicit nodes and edges, checking structural invariants.
    pub fn from_parts(
        delta: f64,
        half_width: f64,
        nodes: Vec<Node>,
        edges: Vec<Edge>,
    ) -> Result<Self, GraphError> {
        let g = Self {
            delta,
            half_width,
            nodes,
            edges,
            gap_separation_ok: true,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(GraphError::InvalidDelta(self.delta));
        }
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(GraphError::Invalid("half-width must be positive".into()));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return Err(GraphError::Invalid(format!("node at position {i} has id {}", n.id)));
            }
            if !(n.volume > 0.0 && n.volume.is_finite()) || !vec3::is_finite(n.centroid) {
                return Err(GraphError::Invalid(format!("node {i} has invalid volume or centroid")));
            }
            if !(n.diameter >= 0.0 && n.diameter.is_finite()) {
                return Err(GraphError::Invalid(format!("node {i} has invalid diameter")));
            }
        }
        let n = self.nodes.len();
        let mut seen = std::collections::HashSet::new();
        for e in &self.edges {
            if e.a >= n || e.b >= n {
                return Err(GraphError::MissingNode(e.a.max(e.b)));
            }
            if e.a == e.b {
                return Err(GraphError::Invalid(format!("edge {} is a self-loop", e.id)));
            }
            if !(e.gap > 0.0 && e.gap <= self.delta) {
                return Err(GraphError::Invalid(format!("edge {} has gap {} outside (0, δ]", e.id, e.gap)));
            }
            if !(e.mu > 0.0 && e.mu.is_finite()) {
                return Err(GraphError::Invalid(format!("edge {} has non-positive weight", e.id)));
            }
            if !seen.insert(e.id) {
                return Err(GraphError::Invalid(format!("duplicate edge id {}", e.id)));
            }
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// `|Q_N| = (2N)^3`.
    pub fn box_volume(&self) -> f64 {
        (2.0 * self.half_width).powi(3)
    }

    pub fn total_volume(&self) -> f64 {
        self.nodes.iter().map(|n| n.volume).sum()
    }

    /// Position of the edge with the given stable id.
    pub fn edge_position(&self, id: u32) -> Option<usize> {
        self.edges.iter().position(|e| e.id == id)
    }

    /// Subgraph induced by the nodes with `keep[i] = true`. Nodes are renumbered
    /// in their original order; edge ids are preserved.
    pub fn induced_subgraph(&self, keep: &[bool]) -> InclusionGraph {
        assert_eq!(keep.len(), self.nodes.len(), "mask length must match node count");
        let mut new_id = vec![usize::MAX; self.nodes.len()];
        let mut nodes = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if keep[i] {
                new_id[i] = nodes.len();
                nodes.push(Node { id: nodes.len(), ..n.clone() });
            }
        }
        let edges = self
            .edges
            .iter()
            .filter(|e| keep[e.a] && keep[e.b])
            .map(|e| Edge { a: new_id[e.a], b: new_id[e.b], ..e.clone() })
            .collect();
        InclusionGraph {
            delta: self.delta,
            half_width: self.half_width,
            nodes,
            edges,
            gap_separation_ok: self.gap_separation_ok,
        }
    }

    /// Copy with every edge weight multiplied by `t`.
    pub fn with_scaled_weights(&self, t: f64) -> InclusionGraph {
        let mut g = self.clone();
        for e in &mut g.edges {
            e.mu *= t;
        }
        g
    }

    /// Positions of the edges incident to each node.
    pub fn incidence(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.nodes.len()];
        for (k, e) in self.edges.iter().enumerate() {
            inc[e.a].push(k);
            inc[e.b].push(k);
        }
        inc
    }
}

/// Closest points of two disjoint spheres and their surface distance.
pub fn closest_points(a: &Sphere, b: &Sphere) -> Result<(Vec3, Vec3, f64), GraphError> {
    let delta = vec3::sub(b.center, a.center);
    let dist = vec3::norm(delta);
    let radius_sum = a.radius + b.radius;
    if dist <= radius_sum {
        return Err(GraphError::Overlap { dist, radius_sum });
    }
    let u = vec3::scale(delta, 1.0 / dist);
    let xa = vec3::add(a.center, vec3::scale(u, a.radius));
    let xb = vec3::sub(b.center, vec3::scale(u, b.radius));
    Ok((xa, xb, dist - radius_sum))
}

/// Build the δ-multigraph of the configuration.
///
/// Every pair of spheres in distinct components with surface gap `≤ δ` yields
/// one edge. Edges are sorted by `(a, b, d)` and numbered in that order.
pub fn build_graph(
    comps: &ComponentSet,
    config: &SphereConfig,
    delta: f64,
) -> Result<InclusionGraph, GraphError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(GraphError::InvalidDelta(delta));
    }
    let spheres = &config.spheres;
    if comps.sphere_component.len() != spheres.len() {
        return Err(GraphError::ComponentMismatch);
    }
    let n_box = config.box_half_width;
    let nodes: Vec<Node> = comps
        .components
        .iter()
        .enumerate()
        .map(|(id, c)| Node {
            id,
            volume: c.volume,
            centroid: c.centroid,
            diameter: c.diameter,
            boundary: c
                .spheres
                .iter()
                .any(|&i| vec3::max_abs(spheres[i].center) + spheres[i].radius >= n_box - delta),
            spheres: c.spheres.iter().map(|&i| spheres[i]).collect(),
        })
        .collect();

    // (a, b, gap, sphere_a, sphere_b, xa, xb)
    let mut raw: Vec<(usize, usize, f64, usize, usize, Vec3, Vec3)> = Vec::new();
    if !spheres.is_empty() {
        let reach = 2.0 * config.max_radius() + delta;
        let grid = SpatialGrid::from_points(reach, spheres.iter().map(|s| s.center));
        for i in 0..spheres.len() {
            let ci = comps.sphere_component[i];
            let mut err = None;
            grid.for_each_near(spheres[i].center, |j| {
                if j <= i || err.is_some() {
                    return;
                }
                let cj = comps.sphere_component[j];
                if ci == cj {
                    return;
                }
                let d = vec3::dist(spheres[i].center, spheres[j].center)
                    - spheres[i].radius
                    - spheres[j].radius;
                if d > delta {
                    return;
                }
                match closest_points(&spheres[i], &spheres[j]) {
                    Ok((xi, xj, gap)) => {
                        if ci < cj {
                            raw.push((ci, cj, gap, i, j, xi, xj));
                        } else {
                            raw.push((cj, ci, gap, j, i, xj, xi));
                        }
                    }
                    Err(e) => err = Some(e),
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
        }
    }
    raw.sort_by(|p, q| {
        (p.0, p.1)
            .cmp(&(q.0, q.1))
            .then(p.2.total_cmp(&q.2))
            .then((p.3, p.4).cmp(&(q.3, q.4)))
    });
    let edges: Vec<Edge> = raw
        .into_iter()
        .enumerate()
        .map(|(k, (a, b, gap, _, _, xa, xb))| Edge {
            id: k as u32,
            a,
            b,
            xa,
            xb,
            gap,
            mu: gap.ln().abs(),
        })
        .collect();

    let mut g = InclusionGraph {
        delta,
        half_width: n_box,
        nodes,
        edges,
        gap_separation_ok: true,
    };
    g.gap_separation_ok = gaps_separated(&g);
    Ok(g)
}

fn gaps_separated(g: &InclusionGraph) -> bool {
    let mut contacts: Vec<Vec<Vec3>> = vec![Vec::new(); g.nodes.len()];
    for e in &g.edges {
        contacts[e.a].push(e.xa);
        contacts[e.b].push(e.xb);
    }
    contacts.iter().all(|pts| {
        pts.iter().enumerate().all(|(i, p)| {
            pts[i + 1..]
                .iter()
                .all(|q| vec3::dist(*p, *q) >= 2.0 * g.delta)
        })
    })
}

fn node_labels(g: &InclusionGraph) -> (Vec<usize>, usize) {
    let mut uf = UnionFind::new(g.nodes.len());
    for e in &g.edges {
        uf.union(e.a, e.b);
    }
    uf.labels()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub nodes: Vec<usize>,
    /// Diameter of the union of the member inclusions.
    pub diameter: f64,
    pub volume: f64,
}

impl Cluster {
    /// Number of inclusions `♯C`.
    pub fn cardinality(&self) -> usize {
        self.nodes.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPartition {
    pub node_cluster: Vec<usize>,
    pub clusters: Vec<Cluster>,
}

/// Diameter of a group of nodes: exact over their spheres when every node
/// carries geometry, otherwise a centroid-based upper bound.
fn group_diameter(g: &InclusionGraph, members: &[usize]) -> f64 {
    if members.len() == 1 {
        return g.nodes[members[0]].diameter;
    }
    if members.iter().all(|&i| !g.nodes[i].spheres.is_empty()) {
        let spheres: Vec<&Sphere> = members.iter().flat_map(|&i| g.nodes[i].spheres.iter()).collect();
        if spheres.len() > 2048 {
            return spheres
                .par_iter()
                .enumerate()
                .map(|(i, s)| {
                    spheres[i + 1..]
                        .iter()
                        .map(|t| vec3::dist(s.center, t.center) + s.radius + t.radius)
                        .fold(2.0 * s.radius, f64::max)
                })
                .reduce(|| 0.0, f64::max);
        }
        return union_diameter(spheres);
    }
    let mut best = 0.0f64;
    for (k, &i) in members.iter().enumerate() {
        let ni = &g.nodes[i];
        best = best.max(ni.diameter);
        for &j in &members[k + 1..] {
            let nj = &g.nodes[j];
            best = best.max(vec3::dist(ni.centroid, nj.centroid) + 0.5 * (ni.diameter + nj.diameter));
        }
    }
    best
}

/// Connected components of the multigraph.
pub fn clusters(g: &InclusionGraph) -> ClusterPartition {
    let (labels, k) = node_labels(g);
    let mut members = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    let clusters = members
        .into_iter()
        .map(|nodes| Cluster {
            diameter: group_diameter(g, &nodes),
            volume: nodes.iter().map(|&i| g.nodes[i].volume).sum(),
            nodes,
        })
        .collect();
    ClusterPartition { node_cluster: labels, clusters }
}

/// Cluster label per node and the number of clusters, without cluster statistics.
pub fn cluster_labels(g: &InclusionGraph) -> (Vec<usize>, usize) {
    node_labels(g)
}

/// True iff the multigraph has no cycle; two parallel edges form a cycle.
pub fn is_cycle_free(g: &InclusionGraph) -> bool {
    let mut uf = UnionFind::new(g.nodes.len());
    g.edges.iter().all(|e| uf.union(e.a, e.b))
}

/// A shorted graph together with the map from original nodes to merged nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Short {
    pub graph: InclusionGraph,
    /// `merge_map[i]` is the node of `graph` containing original node `i`.
    pub merge_map: Vec<usize>,
}

fn contract(g: &InclusionGraph, uf: &mut UnionFind) -> Short {
    let (labels, k) = uf.labels();
    let mut members = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    let nodes: Vec<Node> = members
        .iter()
        .enumerate()
        .map(|(id, m)| {
            if m.len() == 1 {
                return Node { id, ..g.nodes[m[0]].clone() };
            }
            let volume: f64 = m.iter().map(|&i| g.nodes[i].volume).sum();
            let moment = m.iter().fold([0.0; 3], |acc, &i| {
                vec3::add(acc, vec3::scale(g.nodes[i].centroid, g.nodes[i].volume))
            });
            Node {
                id,
                volume,
                centroid: vec3::scale(moment, 1.0 / volume),
                diameter: group_diameter(g, m),
                boundary: m.iter().any(|&i| g.nodes[i].boundary),
                spheres: m.iter().flat_map(|&i| g.nodes[i].spheres.iter().copied()).collect(),
            }
        })
        .collect();
    let mut edges: Vec<Edge> = g
        .edges
        .iter()
        .filter(|e| labels[e.a] != labels[e.b])
        .map(|e| {
            let (a, b) = (labels[e.a], labels[e.b]);
            if a < b {
                Edge { a, b, ..e.clone() }
            } else {
                Edge { a: b, b: a, xa: e.xb, xb: e.xa, ..e.clone() }
            }
        })
        .collect();
    edges.sort_by(|p, q| {
        (p.a, p.b)
            .cmp(&(q.a, q.b))
            .then(p.gap.total_cmp(&q.gap))
            .then(p.id.cmp(&q.id))
    });
    let mut graph = InclusionGraph {
        delta: g.delta,
        half_width: g.half_width,
        nodes,
        edges,
        gap_separation_ok: true,
    };
    graph.gap_separation_ok = gaps_separated(&graph);
    Short { graph, merge_map: labels }
}

/// Identify the nodes of each pair (transitively) and drop the edges joining
/// merged nodes.
pub fn short_at(g: &InclusionGraph, pairs: &[(usize, usize)]) -> Result<Short, GraphError> {
    let n = g.nodes.len();
    let mut uf = UnionFind::new(n);
    for &(i, j) in pairs {
        if i >= n {
            return Err(GraphError::MissingNode(i));
        }
        if j >= n {
            return Err(GraphError::MissingNode(j));
        }
        if i == j {
            return Err(GraphError::Invalid(format!("short pair ({i}, {i}) is not distinct")));
        }
        uf.union(i, j);
    }
    Ok(contract(g, &mut uf))
}

/// κ-short relative to the kept edge set `Ed(F′)`: every edge outside
/// `kept_ids` with gap `< κ` is shorted; the surviving edges are `Ed(F′)` and
/// the edges with gap `≥ κ`, minus those internal to merged nodes.
pub fn short_kappa(g: &InclusionGraph, kept_ids: &[u32], kappa: f64) -> Result<Short, GraphError> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(GraphError::InvalidKappa(kappa));
    }
    let ids: std::collections::HashSet<u32> = g.edges.iter().map(|e| e.id).collect();
    if let Some(&missing) = kept_ids.iter().find(|id| !ids.contains(id)) {
        return Err(GraphError::MissingEdge(missing));
    }
    let kept: std::collections::HashSet<u32> = kept_ids.iter().copied().collect();
    let mut uf = UnionFind::new(g.nodes.len());
    for e in &g.edges {
        if !kept.contains(&e.id) && e.gap < kappa {
            uf.union(e.a, e.b);
        }
    }
    Ok(contract(g, &mut uf))
}
