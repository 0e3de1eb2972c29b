//! Reproducible experiment specs and their runner.
//!
//! An experiment spec names a generator, a box-size grid, seeds and a list of
//! tasks. The runner writes `summary.json`, one CSV per task and
//! `timings.json`. Everything except `timings.json` is a deterministic function
//! of the experiment spec and the tool version.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::criteria::{scan_limsup, CellTiming, ClusterSize, CriterionSeries, H2Options, ScanOptions, Statistic};
use crate::effective::{effective_scan, EffectiveScan, DIRECTIONS};
use crate::geometry::ModelParams;
use crate::io::{csv_string, fmt_float, to_json_string, IoError, FORMAT_VERSION};
use crate::keller::{keller_table, KellerParams, KellerTable, QuadratureGrid};
use crate::solver::SolverOptions;
use crate::vec3::Vec3;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("cannot parse spec: {0}")]
    Parse(String),
    #[error("invalid spec: {0}")]
    Validation(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("i/o error: {0}")]
    File(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Density,
    H1,
    H2,
    Logmoment,
    Clustermoment,
    Effective,
    Keller,
}

impl Task {
    fn needs_scan(self) -> bool {
        self != Task::Keller
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KellerTask {
    pub a: f64,
    pub d: f64,
    pub gamma: f64,
    pub nus: Vec<f64>,
    pub grid: QuadratureGrid,
}

impl Default for KellerTask {
    fn default() -> Self {
        Self {
            a: 1.0,
            d: 1.0,
            gamma: 1.0,
            nus: vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
            grid: QuadratureGrid::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskParams {
    /// Directions for the affine-family statistic.
    pub xi: Vec<Vec3>,
    pub h2: H2Options,
    /// Exponent of the log-moment statistic.
    pub k: f64,
    /// Exponent of the cluster moment.
    pub p: f64,
    pub n_samples: usize,
    pub cluster_size: ClusterSize,
    pub kappa: Option<f64>,
    /// Clamping layer of the network tensor; defaults to `delta`.
    pub layer_width: Option<f64>,
    pub keller: KellerTask,
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            xi: DIRECTIONS.to_vec(),
            h2: H2Options::default(),
            k: 2.0,
            p: 2.0,
            n_samples: 10_000,
            cluster_size: ClusterSize::Diameter,
            kappa: None,
            layer_width: None,
            keller: KellerTask::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(rename = "N_grid", default)]
    pub n_grid: Vec<f64>,
    #[serde(default = "one")]
    pub n_seeds: usize,
    #[serde(default)]
    pub base_seed: u64,
    pub tasks: Vec<Task>,
    #[serde(default)]
    pub params: TaskParams,
    #[serde(default)]
    pub solver: SolverOptions,
    /// Output directory; the caller may override it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn one() -> usize {
    1
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let spec: Self = serde_json::from_str(text).map_err(|e| ExperimentError::Parse(e.to_string()))?;
        if spec.version != FORMAT_VERSION {
            return Err(ExperimentError::Parse(format!(
                "unsupported spec version {}, expected {FORMAT_VERSION}",
                spec.version
            )));
        }
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|e| ExperimentError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Validation(m));
        if self.tasks.is_empty() {
            return bad("tasks must not be empty".into());
        }
        let mut seen = self.tasks.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.tasks.len() {
            return bad("tasks must not repeat".into());
        }
        let opts = self.scan_options();
        if self.tasks.iter().any(|t| t.needs_scan()) {
            let Some(model) = &self.model else {
                return bad("model is required for scan tasks".into());
            };
            model.validate().map_err(|e| ExperimentError::Validation(e.to_string()))?;
            let Some(delta) = self.delta else {
                return bad("delta is required for scan tasks".into());
            };
            if !(delta > 0.0 && delta < 1.0) {
                return bad(format!("delta must lie in (0, 1), got {delta}"));
            }
            crate::criteria::check_grid(&self.n_grid, self.n_seeds).map_err(|e| ExperimentError::Validation(e.to_string()))?;
            if let Some(k) = opts.kappa {
                if !(k > 0.0 && k < 1.0) {
                    return bad(format!("kappa must lie in (0, 1), got {k}"));
                }
            }
            if let Some(w) = self.params.layer_width {
                if !(w > 0.0) {
                    return bad("layer_width must be positive".into());
                }
            }
        }
        for task in &self.tasks {
            for stat in self.statistics(*task) {
                stat.validate().map_err(|e| ExperimentError::Validation(e.to_string()))?;
            }
        }
        if self.tasks.contains(&Task::H1) && self.params.xi.is_empty() {
            return bad("xi list must not be empty".into());
        }
        if self.tasks.contains(&Task::Keller) {
            let k = &self.params.keller;
            if k.nus.len() < 2 {
                return bad("keller needs at least two nu values".into());
            }
            for &nu in &k.nus {
                KellerParams { a: k.a, nu, d: k.d, gamma: k.gamma }
                    .validate()
                    .map_err(|e| ExperimentError::Validation(e.to_string()))?;
            }
            if k.grid.n_r < crate::keller::MIN_GRID || k.grid.n_t < crate::keller::MIN_GRID {
                return bad("keller grid needs at least 16 points per axis".into());
            }
        }
        Ok(())
    }

    fn scan_options(&self) -> ScanOptions {
        ScanOptions {
            solver: self.solver,
            kappa: self.params.kappa,
        }
    }

    fn statistics(&self, task: Task) -> Vec<Statistic> {
        let p = &self.params;
        match task {
            Task::Density => vec![Statistic::Density],
            Task::H1 => p.xi.iter().map(|xi| Statistic::H1 { xi: *xi }).collect(),
            Task::H2 => vec![Statistic::H2 { options: p.h2 }],
            Task::Logmoment => vec![Statistic::LogMoment { k: p.k }],
            Task::Clustermoment => vec![Statistic::ClusterMoment {
                p: p.p,
                n_samples: p.n_samples,
                size: p.cluster_size,
            }],
            Task::Effective | Task::Keller => vec![],
        }
    }

    /// SHA-256 of the canonical JSON form of the experiment spec, output directory excluded.
    pub fn hash(&self) -> String {
        let canonical = ExperimentSpec {
            output_dir: None,
            ..self.clone()
        };
        let text = to_json_string(&canonical).expect("spec serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionSeries {
    pub xi: Vec3,
    pub series: CriterionSeries,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskOutputs {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density: Option<CriterionSeries>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h1: Option<Vec<DirectionSeries>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h2: Option<CriterionSeries>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub logmoment: Option<CriterionSeries>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clustermoment: Option<CriterionSeries>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effective: Option<EffectiveScan>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub keller: Option<KellerTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub spec_hash: String,
    pub tool_version: String,
    pub spec: ExperimentSpec,
    pub outputs: TaskOutputs,
    pub cell_errors: usize,
}

#[derive(Debug, Clone, Serialize)]
struct Timings {
    task_seconds: BTreeMap<String, f64>,
    cells: BTreeMap<String, Vec<CellTiming>>,
}

fn series_rows(s: &CriterionSeries) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (i, n) in s.n_grid.iter().enumerate() {
        let failed: Vec<u64> = s.errors.iter().filter(|e| e.half_width == *n).map(|e| e.seed).collect();
        let mut values = s.values[i].iter();
        for seed in &s.seeds[i] {
            if failed.contains(seed) {
                continue;
            }
            let v = values.next().expect("one value per successful cell");
            rows.push(vec![fmt_float(*n), seed.to_string(), fmt_float(*v)]);
        }
    }
    rows
}

/// CSV with columns `N, seed, value`; failed cells are omitted.
pub fn series_csv(s: &CriterionSeries) -> Result<String, IoError> {
    csv_string(&["N", "seed", "value"], &series_rows(s))
}

/// CSV with columns `N, seed` and the six upper-triangle tensor entries.
pub fn effective_csv(scan: &EffectiveScan) -> Result<String, IoError> {
    let rows: Vec<Vec<String>> = scan
        .cells
        .iter()
        .map(|c| {
            let mut r = vec![fmt_float(c.half_width), c.seed.to_string()];
            r.extend(c.tensor.upper().iter().map(|v| fmt_float(*v)));
            r
        })
        .collect();
    csv_string(&["N", "seed", "a11", "a12", "a13", "a22", "a23", "a33"], &rows)
}

pub fn keller_csv(table: &KellerTable) -> Result<String, IoError> {
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            vec![
                fmt_float(r.params.nu),
                fmt_float(-r.params.nu.ln()),
                fmt_float(r.z_closed_form),
                fmt_float(r.z_quadrature),
                fmt_float(r.full_quadrature),
                fmt_float(r.weighted_quadrature),
            ]
        })
        .collect();
    csv_string(
        &["nu", "log_inv_nu", "z_closed_form", "z_quadrature", "full_quadrature", "weighted_quadrature"],
        &rows,
    )
}

fn write_series(dir: &Path, name: &str, s: &CriterionSeries) -> Result<(), ExperimentError> {
    fs::write(dir.join(name), series_csv(s)?)?;
    Ok(())
}

/// Outcome of a run: the record plus the number of failed cells.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: ResultRecord,
    pub cell_errors: usize,
    pub files: Vec<PathBuf>,
}

/// Validate an experiment spec, execute every task and write the outputs to `out_dir`.
///
/// Failing cells do not abort the run; they are counted in the outcome and
/// listed in the summary.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path) -> Result<RunOutcome, ExperimentError> {
    spec.validate()?;
    fs::create_dir_all(out_dir)?;
    let opts = spec.scan_options();
    let mut outputs = TaskOutputs::default();
    let mut timings = Timings {
        task_seconds: BTreeMap::new(),
        cells: BTreeMap::new(),
    };
    let mut files = Vec::new();
    let mut cell_errors = 0;
    let scan = |stat: &Statistic| -> Result<CriterionSeries, ExperimentError> {
        let model = spec.model.as_ref().expect("validated");
        scan_limsup(model, spec.delta.expect("validated"), &spec.n_grid, spec.n_seeds, spec.base_seed, stat, &opts)
            .map_err(|e| ExperimentError::Validation(e.to_string()))
    };
    let mut tasks = spec.tasks.clone();
    tasks.sort();
    for task in tasks {
        let start = Instant::now();
        let label = format!("{task:?}").to_lowercase();
        match task {
            Task::Density | Task::H2 | Task::Logmoment | Task::Clustermoment => {
                let stat = &spec.statistics(task)[0];
                let series = scan(stat)?;
                cell_errors += series.errors.len();
                let name = format!("{label}.csv");
                write_series(out_dir, &name, &series)?;
                files.push(out_dir.join(name));
                timings.cells.insert(label.clone(), series.cell_seconds.clone());
                match task {
                    Task::Density => outputs.density = Some(series),
                    Task::H2 => outputs.h2 = Some(series),
                    Task::Logmoment => outputs.logmoment = Some(series),
                    _ => outputs.clustermoment = Some(series),
                }
            }
            Task::H1 => {
                let mut all = Vec::new();
                for (i, stat) in spec.statistics(task).iter().enumerate() {
                    let series = scan(stat)?;
                    cell_errors += series.errors.len();
                    let name = format!("h1_xi{i}.csv");
                    write_series(out_dir, &name, &series)?;
                    files.push(out_dir.join(name));
                    timings.cells.insert(format!("h1_xi{i}"), series.cell_seconds.clone());
                    let Statistic::H1 { xi } = stat else { unreachable!() };
                    all.push(DirectionSeries { xi: *xi, series });
                }
                outputs.h1 = Some(all);
            }
            Task::Effective => {
                let model = spec.model.as_ref().expect("validated");
                let res = effective_scan(
                    model,
                    spec.delta.expect("validated"),
                    &spec.n_grid,
                    spec.n_seeds,
                    spec.base_seed,
                    spec.params.layer_width,
                    spec.solver,
                )
                .map_err(|e| ExperimentError::Validation(e.to_string()))?;
                cell_errors += res.errors.len();
                let path = out_dir.join("effective.csv");
                fs::write(&path, effective_csv(&res)?)?;
                files.push(path);
                timings.cells.insert(label.clone(), res.cell_seconds.clone());
                outputs.effective = Some(res);
            }
            Task::Keller => {
                let k = &spec.params.keller;
                let base = KellerParams { a: k.a, nu: k.nus[0], d: k.d, gamma: k.gamma };
                let table = keller_table(base, &k.nus, k.grid).map_err(|e| ExperimentError::Validation(e.to_string()))?;
                let path = out_dir.join("keller.csv");
                fs::write(&path, keller_csv(&table)?)?;
                files.push(path);
                outputs.keller = Some(table);
            }
        }
        timings.task_seconds.insert(label, start.elapsed().as_secs_f64());
    }
    let record = ResultRecord {
        spec_hash: spec.hash(),
        tool_version: TOOL_VERSION.to_string(),
        spec: spec.clone(),
        outputs,
        cell_errors,
    };
    let summary = out_dir.join("summary.json");
    fs::write(&summary, to_json_string(&record)?)?;
    files.push(summary);
    let timing_path = out_dir.join("timings.json");
    fs::write(&timing_path, to_json_string(&timings)?)?;
    files.push(timing_path);
    Ok(RunOutcome {
        record,
        cell_errors,
        files,
    })
}
