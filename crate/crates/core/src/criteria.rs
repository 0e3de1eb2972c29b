//! Criterion statistics and box-size scans.
//!
//! Graph statistics are evaluated on the restriction `F_N` of a configuration
//! (components entirely inside the open box) unless stated otherwise.
//!
//! The sup over families in the second criterion reduces to the antisymmetric
//! parts `β_e = b_abe − b_bae`: for fixed `β` the ordered-pair `ℓ_s` sum is
//! smallest at `b = (β/2, −β/2)`, which gives
//!
//! ```text
//! sup_b ratio = 4^{1−2/s} |Q_N|^{−(1−2/s)} sup_β Q(β) / ‖β‖_s²,   Q(β) = min_u E
//! ```
//!
//! `Q` is a positive semidefinite quadratic form that splits over clusters, so
//! the sup over `β` is the `ℓ_k` norm (`k = s/(s−2)`) of the per-cluster sups.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

use crate::energy::{
    affine_boundary_family, midpoint_boundary_family, minimize_energy, BoundaryFamily, EnergyError,
    EnergyMinimizer,
};
use crate::geometry::{components, restrict_box, GeometryError, ModelParams, SphereConfig};
use crate::multigraph::{build_graph, clusters, short_kappa, GraphError, InclusionGraph};
use crate::solver::{SolverError, SolverOptions};
use crate::spatial::SpatialGrid;
use crate::stats::{cell_seed, mean, stderr};
use crate::vec3::{self, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum CriteriaError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("boundary family is identically zero")]
    ZeroFamily,
    #[error("graph has no edges")]
    NoEdges,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

fn invalid(msg: impl Into<String>) -> CriteriaError {
    CriteriaError::InvalidParameter(msg.into())
}

/// δ-multigraph of `F_N`: the components of `config` lying inside its open box.
pub fn box_graph(config: &SphereConfig, delta: f64) -> Result<InclusionGraph, CriteriaError> {
    let inner = restrict_box(config, config.box_half_width)?;
    let comps = components(&inner);
    Ok(build_graph(&comps, &inner, delta)?)
}

/// Normalized minimal energy with the affine family `b_IJe = ξ·x_I` on `F_N`.
pub fn h1_statistic(config: &SphereConfig, delta: f64, xi: Vec3, solver: SolverOptions) -> Result<f64, CriteriaError> {
    if !(vec3::norm(xi) > 0.0) || !vec3::is_finite(xi) {
        return Err(invalid("xi must be a nonzero finite vector"));
    }
    let g = box_graph(config, delta)?;
    h1_on_graph(&g, xi, solver)
}

/// Same as [`h1_statistic`] on an already built graph.
pub fn h1_on_graph(g: &InclusionGraph, xi: Vec3, solver: SolverOptions) -> Result<f64, CriteriaError> {
    let b = affine_boundary_family(g, xi);
    Ok(minimize_energy(g, &b, solver)?.energy.total / g.box_volume())
}

fn check_exponent(s: f64) -> Result<(), CriteriaError> {
    if !(s >= 2.0 && s.is_finite()) {
        return Err(invalid(format!("s must be finite and at least 2, got {s}")));
    }
    Ok(())
}

/// Ordered-pair sum `2 Σ_e (|b_abe|^s + |b_bae|^s)`.
fn ordered_power_sum(b: &BoundaryFamily, s: f64) -> f64 {
    2.0 * b.0.iter().map(|[p, q]| p.abs().powf(s) + q.abs().powf(s)).sum::<f64>()
}

/// `min_u E / (|Q_N| · (|Q_N|⁻¹ Σ |b|^s)^{2/s})`.
pub fn h2_ratio(g: &InclusionGraph, b: &BoundaryFamily, s: f64) -> Result<f64, CriteriaError> {
    h2_ratio_with(g, b, s, SolverOptions::default())
}

pub fn h2_ratio_with(g: &InclusionGraph, b: &BoundaryFamily, s: f64, solver: SolverOptions) -> Result<f64, CriteriaError> {
    check_exponent(s)?;
    if b.len() != g.edge_count() {
        return Err(EnergyError::IndexMismatch {
            what: "boundary family",
            expected: g.edge_count(),
            got: b.len(),
        }
        .into());
    }
    if b.is_zero() {
        return Err(CriteriaError::ZeroFamily);
    }
    let q = g.box_volume();
    let num = minimize_energy(g, b, solver)?.energy.total;
    // Factor the normalization as |Q|^{1−2/s} Σ^{2/s} scaled by the largest
    // entry so that tiny or huge families do not under- or overflow.
    let scale = b.0.iter().flat_map(|p| p.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    let sum = ordered_power_sum(&b.scaled(1.0 / scale), s);
    let den = q.powf(1.0 - 2.0 / s) * sum.powf(2.0 / s) * scale * scale;
    Ok(num / den)
}

/// Options of the sup estimate in the second criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct H2Options {
    pub s: f64,
    /// Random Gaussian starts per cluster (canonical starts come on top).
    pub n_starts: usize,
    pub max_ascent_iters: usize,
    /// Relative gain below which an ascent run counts as stalled.
    pub tol: f64,
    /// The zero family is never a candidate; kept for the record.
    pub exclude_zero: bool,
    /// Seed of the random starts.
    pub seed: u64,
    /// Add affine and midpoint families along the axes as starts.
    pub canonical_starts: bool,
    /// For `s = 2`, also solve the eigenproblem exactly up to this many nodes.
    pub exact_max_nodes: usize,
    /// Clusters with at most this many edges get their edge form assembled densely.
    pub dense_edges: usize,
    pub solver: SolverOptions,
}

impl Default for H2Options {
    fn default() -> Self {
        Self {
            s: 4.0,
            n_starts: 16,
            max_ascent_iters: 500,
            tol: 1e-8,
            exclude_zero: true,
            seed: 0,
            canonical_starts: true,
            exact_max_nodes: 20,
            dense_edges: 400,
            solver: SolverOptions::default(),
        }
    }
}

impl H2Options {
    pub fn validate(&self) -> Result<(), CriteriaError> {
        check_exponent(self.s)?;
        if self.n_starts == 0 && !self.canonical_starts {
            return Err(invalid("at least one start is required"));
        }
        if self.max_ascent_iters == 0 {
            return Err(invalid("max_ascent_iters must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(invalid("tol must be positive"));
        }
        if !self.exclude_zero {
            return Err(invalid("the zero family cannot be included"));
        }
        Ok(())
    }

    /// Dual exponent `s/(s−2)`; infinite for `s = 2`.
    pub fn dual_exponent(&self) -> f64 {
        if self.s == 2.0 {
            f64::INFINITY
        } else {
            self.s / (self.s - 2.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H2Estimate {
    /// Reported value: the exact sup when it was computed, otherwise the ascent value.
    pub value: f64,
    /// Best value found by the ascent; a lower bound on the sup.
    pub ascent_value: f64,
    pub exact: Option<f64>,
    /// Value reached from each start index, combined over clusters.
    pub per_start: Vec<f64>,
    pub start_labels: Vec<String>,
    /// Ratio at each canonical family on the whole graph.
    pub canonical_ratios: Vec<(String, f64)>,
    pub clusters_with_edges: usize,
}

/// Positive semidefinite form `β ↦ Q(β) = βᵀMβ` on the edges of one cluster.
enum EdgeForm<'g> {
    Dense(DMatrix<f64>),
    Operator {
        graph: &'g InclusionGraph,
        minimizer: EnergyMinimizer<'g>,
    },
}

impl<'g> EdgeForm<'g> {
    fn operator(graph: &'g InclusionGraph, solver: SolverOptions) -> Result<Self, CriteriaError> {
        Ok(EdgeForm::Operator {
            graph,
            minimizer: EnergyMinimizer::new(graph, solver)?,
        })
    }

    /// `(Q(β), Mβ)`.
    fn apply(&self, beta: &[f64]) -> Result<(f64, Vec<f64>), CriteriaError> {
        match self {
            EdgeForm::Dense(m) => {
                let mb: Vec<f64> = (0..m.nrows()).map(|i| m.row(i).iter().zip(beta).map(|(a, b)| a * b).sum()).collect();
                Ok((dot(beta, &mb).max(0.0), mb))
            }
            EdgeForm::Operator { graph, minimizer } => {
                let (q, u) = minimizer.min_energy_antisymmetric(beta)?;
                // ∇Q = 4W(β + Bu*) by the envelope theorem and ∇Q = 2Mβ.
                let mb = graph
                    .edges
                    .iter()
                    .zip(beta)
                    .map(|(e, b)| 2.0 * e.mu * (b + u[e.a] - u[e.b]))
                    .collect();
                Ok((q, mb))
            }
        }
    }

    fn dim(&self) -> usize {
        match self {
            EdgeForm::Dense(m) => m.nrows(),
            EdgeForm::Operator { graph, .. } => graph.edge_count(),
        }
    }

    fn to_dense(&self) -> Result<DMatrix<f64>, CriteriaError> {
        if let EdgeForm::Dense(m) = self {
            return Ok(m.clone());
        }
        let m = self.dim();
        let mut out = DMatrix::zeros(m, m);
        let mut e = vec![0.0; m];
        for j in 0..m {
            e[j] = 1.0;
            let (_, col) = self.apply(&e)?;
            e[j] = 0.0;
            for i in 0..m {
                out[(i, j)] = col[i];
            }
        }
        Ok((&out + out.transpose()) * 0.5)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `|v|^s`, with integer exponents taken by repeated multiplication.
fn abs_pow(v: f64, s: f64) -> f64 {
    if s.fract() == 0.0 && s <= 16.0 {
        v.abs().powi(s as i32)
    } else {
        v.abs().powf(s)
    }
}

fn s_norm(x: &[f64], s: f64) -> f64 {
    let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m == 0.0 {
        return 0.0;
    }
    if s == 2.0 {
        return dot(x, x).sqrt();
    }
    m * x.iter().map(|v| abs_pow(v / m, s)).sum::<f64>().powf(1.0 / s)
}

/// Gradient of `‖x‖_s` at a point with `‖x‖_s = 1`.
fn s_norm_gradient(x: &[f64], s: f64) -> Vec<f64> {
    if s == 2.0 {
        return x.to_vec();
    }
    x.iter().map(|v| v.signum() * abs_pow(*v, s - 1.0)).collect()
}

/// Ratio `cᵀHc / ‖Vc‖_s²` on a subspace of dimension at most 3.
struct SubspaceRatio<'a> {
    h: &'a DMatrix<f64>,
    v: &'a [Vec<f64>],
    s: f64,
    x: Vec<f64>,
}

impl SubspaceRatio<'_> {
    fn combine(&mut self, c: &[f64]) {
        for (r, x) in self.x.iter_mut().enumerate() {
            *x = self.v.iter().zip(c).map(|(vj, cj)| cj * vj[r]).sum();
        }
    }

    fn quad(&self, c: &[f64]) -> f64 {
        let k = c.len();
        (0..k).map(|i| c[i] * (0..k).map(|j| self.h[(i, j)] * c[j]).sum::<f64>()).sum()
    }

    fn eval(&mut self, c: &[f64]) -> f64 {
        self.combine(c);
        let n = s_norm(&self.x, self.s);
        if n == 0.0 {
            return f64::NEG_INFINITY;
        }
        self.quad(c) / (n * n)
    }
}

/// Maximize `cᵀHc / ‖Vc‖_s²` over coefficient vectors `c`, starting from `c0`.
fn maximize_in_subspace(h: &DMatrix<f64>, v: &[Vec<f64>], c0: &[f64], s: f64) -> Vec<f64> {
    let k = c0.len();
    let eig = SymmetricEigen::new(h.clone());
    let top = (0..k)
        .max_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]))
        .unwrap();
    let c_eig: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
    let mut f = SubspaceRatio {
        h,
        v,
        s,
        x: vec![0.0; v[0].len()],
    };
    if s == 2.0 {
        // V is orthonormal, so the Rayleigh quotient of H is exact.
        return if f.eval(&c_eig) >= f.eval(c0) { c_eig } else { c0.to_vec() };
    }
    let mut best = c0.to_vec();
    let mut best_val = f.eval(c0);
    let mut trial = vec![0.0; k];
    for start in [c0.to_vec(), c_eig] {
        let mut c = start;
        let mut val = f.eval(&c);
        let mut step = 1.0;
        for _ in 0..200 {
            f.combine(&c);
            let n = s_norm(&f.x, s);
            let xn: Vec<f64> = f.x.iter().map(|t| t / n).collect();
            let cn: Vec<f64> = c.iter().map(|t| t / n).collect();
            let gn = s_norm_gradient(&xn, s);
            let q = f.quad(&cn);
            let grad: Vec<f64> = (0..k)
                .map(|j| 2.0 * (0..k).map(|i| h[(j, i)] * cn[i]).sum::<f64>() - 2.0 * q * dot(&v[j], &gn))
                .collect();
            let gnorm = dot(&grad, &grad).sqrt();
            if gnorm <= 1e-15 * (1.0 + q.abs()) {
                break;
            }
            let mut gain = None;
            while step > 1e-12 {
                for j in 0..k {
                    trial[j] = cn[j] + step * grad[j];
                }
                let tv = f.eval(&trial);
                if tv > val {
                    gain = Some(tv - val);
                    c.copy_from_slice(&trial);
                    val = tv;
                    step *= 2.0;
                    break;
                }
                step *= 0.5;
            }
            match gain {
                Some(d) if d > 1e-14 * val.abs() => {}
                _ => break,
            }
        }
        if val > best_val {
            best_val = val;
            best = c;
        }
    }
    best
}

/// Locally optimal subspace ascent of `Q(β)/‖β‖_s²` from `start`.
///
/// Each step maximizes over `span{β, g, p}` where `g` is the gradient and `p`
/// the previous step, so the objective never decreases. For `s = 2` the inner
/// maximization is an exact Rayleigh–Ritz step.
fn ascend(form: &EdgeForm, start: &[f64], opts: &H2Options) -> Result<f64, CriteriaError> {
    let s = opts.s;
    let n0 = s_norm(start, s);
    if n0 == 0.0 {
        return Ok(0.0);
    }
    let mut beta: Vec<f64> = start.iter().map(|x| x / n0).collect();
    let (mut q, mut mb) = form.apply(&beta)?;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut stalls = 0;
    for _ in 0..opts.max_ascent_iters {
        let w = s_norm_gradient(&beta, s);
        let g: Vec<f64> = mb.iter().zip(&w).map(|(m, w)| 2.0 * m - 2.0 * q * w).collect();
        let g_norm = dot(&g, &g).sqrt();
        if g_norm <= 1e-14 * (q.abs() + 1e-300) * (beta.len() as f64).sqrt() {
            break;
        }
        let (_, mg) = form.apply(&g)?;
        let mut basis = vec![(beta.clone(), mb.clone()), (g, mg)];
        if let Some(p) = prev.take() {
            basis.push(p);
        }
        // Modified Gram–Schmidt, images carried along linearly.
        let mut v: Vec<Vec<f64>> = Vec::new();
        let mut mv: Vec<Vec<f64>> = Vec::new();
        let mut coef_beta = Vec::new();
        for (idx, (mut x, mut mx)) in basis.into_iter().enumerate() {
            let orig = dot(&x, &x).sqrt();
            for (vj, mvj) in v.iter().zip(&mv) {
                let c = dot(&x, vj);
                for r in 0..x.len() {
                    x[r] -= c * vj[r];
                    mx[r] -= c * mvj[r];
                }
            }
            let n = dot(&x, &x).sqrt();
            if n <= 1e-10 * orig || n == 0.0 {
                continue;
            }
            if idx == 0 {
                coef_beta.push(n);
            }
            v.push(x.iter().map(|t| t / n).collect());
            mv.push(mx.iter().map(|t| t / n).collect());
        }
        let k = v.len();
        if k < 2 {
            break;
        }
        let mut h = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                h[(i, j)] = 0.5 * (dot(&v[i], &mv[j]) + dot(&v[j], &mv[i]));
            }
        }
        let mut c0 = vec![0.0; k];
        c0[0] = coef_beta[0];
        let c = maximize_in_subspace(&h, &v, &c0, s);
        let mut next: Vec<f64> = (0..beta.len()).map(|r| (0..k).map(|j| c[j] * v[j][r]).sum()).collect();
        let n = s_norm(&next, s);
        if n == 0.0 {
            break;
        }
        next.iter_mut().for_each(|t| *t /= n);
        let (q_next, mb_next) = form.apply(&next)?;
        if q_next < q {
            // Roundoff in the subspace step; keep the current point.
            break;
        }
        let gain = q_next - q;
        let step: Vec<f64> = next.iter().zip(&beta).map(|(a, b)| a - b).collect();
        let mstep: Vec<f64> = mb_next.iter().zip(&mb).map(|(a, b)| a - b).collect();
        prev = Some((step, mstep));
        beta = next;
        q = q_next;
        mb = mb_next;
        if gain <= opts.tol * q {
            stalls += 1;
            if stalls >= 3 {
                break;
            }
        } else {
            stalls = 0;
        }
    }
    Ok(q)
}

/// `ℓ_k` norm of per-cluster sups (max for `k = ∞`), scaled to the ratio.
fn combine_clusters(values: &[f64], opts: &H2Options, box_volume: f64) -> f64 {
    let s = opts.s;
    let k = opts.dual_exponent();
    let top = values.iter().fold(0.0f64, |m, v| m.max(*v));
    let norm = if top == 0.0 || k.is_infinite() {
        top
    } else {
        top * values.iter().map(|v| (v / top).powf(k)).sum::<f64>().powf(1.0 / k)
    };
    4f64.powf(1.0 - 2.0 / s) * norm / box_volume.powf(1.0 - 2.0 / s)
}

fn canonical_families(g: &InclusionGraph) -> Vec<(String, BoundaryFamily)> {
    let axes = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut out = Vec::new();
    for (i, xi) in axes.iter().enumerate() {
        out.push((format!("affine_e{}", i + 1), affine_boundary_family(g, *xi)));
    }
    for (i, xi) in axes.iter().enumerate() {
        if let Ok(b) = midpoint_boundary_family(g, *xi) {
            out.push((format!("midpoint_e{}", i + 1), b));
        }
    }
    out
}

/// Estimate the sup over nonzero families of [`h2_ratio`].
///
/// The ascent value is a lower bound on the sup. For `s = 2` on graphs with at
/// most `exact_max_nodes` nodes the top eigenvalue of the edge form is computed
/// as well and reported as the value.
pub fn h2_statistic(g: &InclusionGraph, opts: &H2Options) -> Result<H2Estimate, CriteriaError> {
    opts.validate()?;
    if g.edge_count() == 0 {
        return Err(CriteriaError::NoEdges);
    }
    let canon = if opts.canonical_starts { canonical_families(g) } else { Vec::new() };
    let mut start_labels: Vec<String> = (0..opts.n_starts).map(|i| format!("random_{i}")).collect();
    start_labels.extend(canon.iter().map(|(l, _)| l.clone()));
    let canon_betas: Vec<Vec<f64>> = canon.iter().map(|(_, b)| b.antisymmetric()).collect();

    let part = clusters(g);
    let mut edge_groups: Vec<Vec<usize>> = vec![Vec::new(); part.clusters.len()];
    for (k, e) in g.edges.iter().enumerate() {
        edge_groups[part.node_cluster[e.a]].push(k);
    }
    let work: Vec<(usize, Vec<usize>)> = edge_groups.into_iter().enumerate().filter(|(_, es)| !es.is_empty()).collect();
    let exact_wanted = opts.s == 2.0 && g.node_count() <= opts.exact_max_nodes;

    // Per cluster: value from each start, and the exact top eigenvalue if wanted.
    let per_cluster: Vec<(Vec<f64>, Option<f64>)> = work
        .par_iter()
        .map(|(c, edge_pos)| -> Result<(Vec<f64>, Option<f64>), CriteriaError> {
            let keep: Vec<bool> = part.node_cluster.iter().map(|l| l == c).collect();
            let sub = g.induced_subgraph(&keep);
            let op = EdgeForm::operator(&sub, opts.solver)?;
            let form = if sub.edge_count() <= opts.dense_edges {
                EdgeForm::Dense(op.to_dense()?)
            } else {
                op
            };
            let m = sub.edge_count();
            let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(opts.seed, 0.0, *c as u64));
            let mut vals = Vec::with_capacity(start_labels.len());
            for _ in 0..opts.n_starts {
                let start: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
                vals.push(ascend(&form, &start, opts)?);
            }
            for beta in &canon_betas {
                let start: Vec<f64> = edge_pos.iter().map(|&k| beta[k]).collect();
                vals.push(ascend(&form, &start, opts)?);
            }
            let exact = if exact_wanted {
                let eig = SymmetricEigen::new(form.to_dense()?);
                Some(eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(*v)))
            } else {
                None
            };
            Ok((vals, exact))
        })
        .collect::<Result<_, _>>()?;

    let q = g.box_volume();
    let per_start: Vec<f64> = (0..start_labels.len())
        .map(|i| {
            let v: Vec<f64> = per_cluster.iter().map(|(vals, _)| vals[i]).collect();
            combine_clusters(&v, opts, q)
        })
        .collect();
    let best: Vec<f64> = per_cluster
        .iter()
        .map(|(vals, _)| vals.iter().fold(0.0f64, |m, v| m.max(*v)))
        .collect();
    let ascent_value = combine_clusters(&best, opts, q);
    let exact = if exact_wanted {
        let v: Vec<f64> = per_cluster.iter().map(|(_, e)| e.unwrap_or(0.0)).collect();
        Some(combine_clusters(&v, opts, q))
    } else {
        None
    };
    let canonical_ratios = canon
        .iter()
        .filter(|(_, b)| !b.is_zero())
        .map(|(l, b)| Ok((l.clone(), h2_ratio_with(g, b, opts.s, opts.solver)?)))
        .collect::<Result<Vec<_>, CriteriaError>>()?;
    Ok(H2Estimate {
        value: exact.unwrap_or(ascent_value),
        ascent_value,
        exact,
        per_start,
        start_labels,
        canonical_ratios,
        clusters_with_edges: work.len(),
    })
}

/// `|Q_N|⁻¹ Σ_e μ_e^k`, each undirected edge once.
pub fn log_moment_statistic(g: &InclusionGraph, k: f64) -> Result<f64, CriteriaError> {
    if !(k >= 1.0 && k.is_finite()) {
        return Err(invalid(format!("k must be at least 1, got {k}")));
    }
    Ok(g.edges.iter().map(|e| e.mu.powf(k)).sum::<f64>() / g.box_volume())
}

/// Total component volume over `|Q_N|`.
pub fn density_estimate(config: &SphereConfig) -> f64 {
    components(config).components.iter().map(|c| c.volume).sum::<f64>() / config.box_volume()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub mean: f64,
    pub stderr: f64,
}

/// Which cluster size enters the cluster moment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterSize {
    #[default]
    Diameter,
    Cardinality,
}

/// Monte Carlo average over uniform `y ∈ Q_N` of `size(C_y)^p`, where `C_y` is
/// the cluster containing `y` and the size is 0 off the inclusions.
///
/// The graph must carry sphere geometry on its nodes.
pub fn cluster_moment_statistic(
    config: &SphereConfig,
    g: &InclusionGraph,
    p: f64,
    n_samples: usize,
    seed: u64,
    size: ClusterSize,
) -> Result<MomentEstimate, CriteriaError> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(invalid("p must be positive"));
    }
    if n_samples == 0 {
        return Err(invalid("n_samples must be at least 1"));
    }
    if g.nodes.iter().any(|n| n.spheres.is_empty()) {
        return Err(invalid("graph nodes carry no sphere geometry"));
    }
    let part = clusters(g);
    let cluster_value: Vec<f64> = part
        .clusters
        .iter()
        .map(|c| match size {
            ClusterSize::Diameter => c.diameter.powf(p),
            ClusterSize::Cardinality => (c.cardinality() as f64).powf(p),
        })
        .collect();
    let balls: Vec<(crate::geometry::Sphere, usize)> = g
        .nodes
        .iter()
        .enumerate()
        .flat_map(|(i, n)| n.spheres.iter().map(move |s| (*s, i)))
        .collect();
    let r_max = balls.iter().fold(0.0f64, |m, (s, _)| m.max(s.radius));
    let n_box = config.box_half_width;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coord = Uniform::new(-n_box, n_box).map_err(|e| invalid(e.to_string()))?;
    let samples: Vec<f64> = if balls.is_empty() {
        vec![0.0; n_samples]
    } else {
        let grid = SpatialGrid::from_points(r_max, balls.iter().map(|(s, _)| s.center));
        (0..n_samples)
            .map(|_| {
                let y = [coord.sample(&mut rng), coord.sample(&mut rng), coord.sample(&mut rng)];
                let mut hit = None;
                grid.for_each_near(y, |i| {
                    if hit.is_none() && vec3::dist(balls[i].0.center, y) <= balls[i].0.radius {
                        hit = Some(balls[i].1);
                    }
                });
                hit.map_or(0.0, |node| cluster_value[part.node_cluster[node]])
            })
            .collect()
    };
    Ok(MomentEstimate {
        mean: mean(&samples),
        stderr: stderr(&samples),
    })
}

/// Statistic evaluated per scan cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Statistic {
    Density,
    H1 {
        xi: Vec3,
    },
    H2 {
        #[serde(default)]
        options: H2Options,
    },
    LogMoment {
        k: f64,
    },
    ClusterMoment {
        p: f64,
        n_samples: usize,
        #[serde(default)]
        size: ClusterSize,
    },
}

impl Statistic {
    pub fn label(&self) -> &'static str {
        match self {
            Statistic::Density => "density",
            Statistic::H1 { .. } => "h1",
            Statistic::H2 { .. } => "h2",
            Statistic::LogMoment { .. } => "logmoment",
            Statistic::ClusterMoment { .. } => "clustermoment",
        }
    }

    pub fn validate(&self) -> Result<(), CriteriaError> {
        match self {
            Statistic::Density => Ok(()),
            Statistic::H1 { xi } if vec3::norm(*xi) > 0.0 && vec3::is_finite(*xi) => Ok(()),
            Statistic::H1 { .. } => Err(invalid("xi must be a nonzero finite vector")),
            Statistic::H2 { options } => options.validate(),
            Statistic::LogMoment { k } if *k >= 1.0 && k.is_finite() => Ok(()),
            Statistic::LogMoment { k } => Err(invalid(format!("k must be at least 1, got {k}"))),
            Statistic::ClusterMoment { p, n_samples, .. } if *p > 0.0 && *n_samples > 0 => Ok(()),
            Statistic::ClusterMoment { .. } => Err(invalid("p must be positive and n_samples at least 1")),
        }
    }

    /// Evaluate on a configuration generated in `Q_N` with the given cell seed.
    pub fn evaluate(&self, config: &SphereConfig, delta: f64, seed: u64, opts: &ScanOptions) -> Result<f64, CriteriaError> {
        let graph = || -> Result<InclusionGraph, CriteriaError> {
            let g = box_graph(config, delta)?;
            Ok(match opts.kappa {
                Some(kappa) => short_kappa(&g, &[], kappa)?.graph,
                None => g,
            })
        };
        match self {
            Statistic::Density => Ok(density_estimate(config)),
            Statistic::H1 { xi } => {
                if !(vec3::norm(*xi) > 0.0) {
                    return Err(invalid("xi must be a nonzero finite vector"));
                }
                h1_on_graph(&graph()?, *xi, opts.solver)
            }
            Statistic::H2 { options } => {
                let h2 = H2Options { seed, solver: opts.solver, ..*options };
                Ok(h2_statistic(&graph()?, &h2)?.value)
            }
            Statistic::LogMoment { k } => log_moment_statistic(&graph()?, *k),
            Statistic::ClusterMoment { p, n_samples, size } => {
                // Shorts merge nodes within clusters, so clusters do not depend on κ.
                let g = box_graph(config, delta)?;
                Ok(cluster_moment_statistic(config, &g, *p, *n_samples, seed, *size)?.mean)
            }
        }
    }
}

/// Settings shared by every cell of a scan.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanOptions {
    pub solver: SolverOptions,
    /// Evaluate graph statistics on the κ-short of `F_N` with no kept edges.
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    #[serde(rename = "N")]
    pub half_width: f64,
    pub seed_index: usize,
    pub seed: u64,
    pub message: String,
}

/// Values of a statistic over a grid of box sizes and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionSeries {
    pub statistic: String,
    #[serde(rename = "N_grid")]
    pub n_grid: Vec<f64>,
    /// Cell seed per (N, seed index).
    pub seeds: Vec<Vec<u64>>,
    /// Successful values per N, in seed-index order.
    pub values: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub plateau_estimate: f64,
    pub plateau_ok: bool,
    pub errors: Vec<CellError>,
    /// Wall-clock time per cell; not serialized so that outputs stay reproducible.
    #[serde(skip)]
    pub cell_seconds: Vec<CellTiming>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    #[serde(rename = "N")]
    pub half_width: f64,
    pub seed_index: usize,
    pub seconds: f64,
}

/// Plateau estimate and stability flag of a sequence of means.
///
/// Uses the last `⌈n/2⌉` entries (at least two): the estimate is their max and
/// the flag requires the last-to-first ratio to lie in `[0.5, 2]`.
pub fn plateau(means: &[f64]) -> (f64, bool) {
    let n = means.len();
    if n == 0 {
        return (f64::NAN, false);
    }
    let half = n.div_ceil(2).max(2).min(n);
    let tail = &means[n - half..];
    if tail.iter().any(|m| !m.is_finite()) {
        let est = tail.iter().copied().filter(|m| m.is_finite()).fold(f64::NAN, f64::max);
        return (est, false);
    }
    let est = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let first = tail[0];
    let last = tail[tail.len() - 1];
    let ok = if first == 0.0 && last == 0.0 {
        true
    } else if first == 0.0 {
        false
    } else {
        let r = last / first;
        (0.5..=2.0).contains(&r)
    };
    (est, ok)
}

pub(crate) fn check_grid(n_grid: &[f64], n_seeds: usize) -> Result<(), CriteriaError> {
    if n_grid.len() < 3 {
        return Err(invalid("N grid needs at least 3 entries"));
    }
    if n_grid.iter().any(|n| !(*n > 0.0 && n.is_finite())) {
        return Err(invalid("N grid entries must be positive"));
    }
    if n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("N grid must be strictly increasing"));
    }
    if n_seeds == 0 {
        return Err(invalid("n_seeds must be at least 1"));
    }
    Ok(())
}

/// Evaluate a statistic on fresh configurations for every `(N, seed index)` cell.
///
/// Cells run in parallel. A failing cell is recorded in `errors` and left out
/// of the aggregates; it does not stop the scan.
pub fn scan_limsup(
    model: &ModelParams,
    delta: f64,
    n_grid: &[f64],
    n_seeds: usize,
    base_seed: u64,
    statistic: &Statistic,
    opts: &ScanOptions,
) -> Result<CriterionSeries, CriteriaError> {
    check_grid(n_grid, n_seeds)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(GraphError::InvalidDelta(delta).into());
    }
    if let Some(k) = opts.kappa {
        if !(k > 0.0 && k < 1.0) {
            return Err(GraphError::InvalidKappa(k).into());
        }
    }
    model.validate()?;
    statistic.validate()?;
    let cells: Vec<(usize, usize)> = (0..n_grid.len()).flat_map(|i| (0..n_seeds).map(move |j| (i, j))).collect();
    let results: Vec<(Result<f64, String>, f64)> = cells
        .par_iter()
        .map(|&(i, j)| {
            let start = Instant::now();
            let n = n_grid[i];
            let seed = cell_seed(base_seed, n, j as u64);
            let r = model
                .generate(seed, n)
                .map_err(CriteriaError::from)
                .and_then(|config| statistic.evaluate(&config, delta, seed, opts))
                .map_err(|e| e.to_string());
            (r, start.elapsed().as_secs_f64())
        })
        .collect();
    let mut seeds = vec![Vec::with_capacity(n_seeds); n_grid.len()];
    let mut values = vec![Vec::new(); n_grid.len()];
    let mut errors = Vec::new();
    let mut cell_seconds = Vec::with_capacity(cells.len());
    for (&(i, j), (r, secs)) in cells.iter().zip(results) {
        let seed = cell_seed(base_seed, n_grid[i], j as u64);
        seeds[i].push(seed);
        cell_seconds.push(CellTiming { half_width: n_grid[i], seed_index: j, seconds: secs });
        match r {
            Ok(v) => values[i].push(v),
            Err(message) => errors.push(CellError {
                half_width: n_grid[i],
                seed_index: j,
                seed,
                message,
            }),
        }
    }
    let means: Vec<f64> = values.iter().map(|v| mean(v)).collect();
    let errs: Vec<f64> = values.iter().map(|v| stderr(v)).collect();
    let (plateau_estimate, plateau_ok) = plateau(&means);
    Ok(CriterionSeries {
        statistic: statistic.label().to_string(),
        n_grid: n_grid.to_vec(),
        seeds,
        values,
        mean: means,
        stderr: errs,
        plateau_estimate,
        plateau_ok,
        errors,
        cell_seconds,
    })
}
