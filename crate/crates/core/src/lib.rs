//! Network approximation of dense stiff-inclusion composites.
//!
//! The crate generates random sphere configurations, builds the δ-multigraph
//! of their connected components, minimizes the discrete gap energy on it,
//! evaluates the homogenization criteria statistics over growing boxes, and
//! computes a boundary-clamped network conductivity tensor.
//!
//! Module map:
//! - [`geometry`]: sphere configurations, generators, components, box restriction.
//! - [`multigraph`]: the δ-multigraph, clusters, cycles and graph shorts.
//! - [`energy`]: the discrete energy, its minimizer and canonical families.
//! - [`keller`]: gap-function energies for two facing paraboloids.
//! - [`criteria`]: (H1)/(H2)/log-moment statistics and box-size scans.
//! - [`effective`]: network effective-conductivity tensor.
//! - [`experiment`]: reproducible experiment specs and the runner.
//! - [`io`]: JSON/CSV persistence.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod criteria;
pub mod effective;
pub mod energy;
pub mod experiment;
pub mod geometry;
pub mod io;
pub mod keller;
pub mod multigraph;
pub mod solver;
pub mod stats;
pub mod vec3;

mod spatial;
mod union_find;

pub use criteria::{
    box_graph, cluster_moment_statistic, density_estimate, h1_statistic, h2_ratio, h2_statistic,
    log_moment_statistic, scan_limsup, ClusterSize, CriterionSeries, H2Estimate, H2Options,
    MomentEstimate, ScanOptions, Statistic,
};
pub use effective::{
    boundary_nodes, effective_scan, full_graph, network_effective_tensor, EffectiveScan,
    EffectiveTensor,
};
pub use energy::{
    affine_boundary_family, cycle_free_potentials, energy, lift_short_potentials,
    midpoint_boundary_family, minimize_energy, BoundaryFamily, EnergyBreakdown, EnergyError,
    EnergyMinimizer, LaplacianAssembly, PotentialFamily,
};
pub use experiment::{run_experiment, ExperimentSpec};
pub use geometry::{
    components, generate_chain_forest, generate_hardcore, generate_lattice_jitter, restrict_box,
    ComponentSet, ModelParams, Sphere, SphereConfig,
};
pub use keller::{keller_energy, keller_table, KellerEnergy, KellerParams, KellerTable, QuadratureGrid};
pub use multigraph::{
    build_graph, closest_points, clusters, is_cycle_free, short_at, short_kappa, ClusterPartition,
    Edge, InclusionGraph, Node, Short,
};
pub use solver::SolverOptions;
pub use vec3::Vec3;
