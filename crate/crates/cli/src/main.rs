//! Command-line front end: generate configurations, build graphs, minimize
//! energies, scan statistics, compute network tensors and run experiment specs.
//!
//! Exit codes: 0 success, 1 runtime or cell failure, 2 unreadable or
//! unparsable input, 3 invalid parameters.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use stiffnet::criteria::{CriterionSeries, H2Options, ScanOptions, Statistic};
use stiffnet::effective::{effective_scan, full_graph, network_effective_tensor, EffectiveTensor};
use stiffnet::energy::{affine_boundary_family, midpoint_boundary_family, minimize_energy, Minimum};
use stiffnet::experiment::{effective_csv, keller_csv, run_experiment, series_csv, ExperimentError, ExperimentSpec};
use stiffnet::geometry::{components, restrict_box, ModelParams};
use stiffnet::io::{csv_string, fmt_float, load_config, load_graph, to_json_string, to_versioned_json, IoError};
use stiffnet::keller::{keller_table, KellerParams, QuadratureGrid};
use stiffnet::multigraph::build_graph;
use stiffnet::{scan_limsup, SolverOptions, Vec3};

#[derive(Parser)]
#[command(name = "stiffnet", version, about = "Inclusion multigraphs, gap energies and network conductivity")]
struct Cli {
    /// Seed for generation, or base seed for scans.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; for `run`, the output directory. Defaults to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Family {
    Affine,
    Midpoint,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StatKind {
    Density,
    H1,
    H2,
    Logmoment,
    Clustermoment,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a sphere configuration.
    Generate {
        /// Model as inline JSON or a path to a JSON file.
        #[arg(long)]
        model: String,
        /// Box half-width N.
        #[arg(long = "half-width")]
        half_width: f64,
    },
    /// Build the δ-multigraph of a saved configuration.
    Graph {
        config: PathBuf,
        #[arg(long)]
        delta: f64,
        /// Restrict to the inclusions inside the box of this half-width first.
        #[arg(long = "box")]
        restrict: Option<f64>,
    },
    /// Minimize the energy on a saved graph for a canonical boundary family.
    Energy {
        graph: PathBuf,
        #[arg(long, value_enum, default_value_t = Family::Affine)]
        family: Family,
        #[arg(long, value_delimiter = ',', num_args = 1, default_value = "1,0,0")]
        xi: Vec<f64>,
        /// Use the identity instead of the volume mass matrix.
        #[arg(long)]
        identity_mass: bool,
    },
    /// Scan a statistic over box sizes and seeds.
    Criteria {
        #[arg(long)]
        model: String,
        #[arg(long)]
        delta: f64,
        /// Comma-separated box half-widths.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        #[arg(long, value_enum)]
        statistic: StatKind,
        #[arg(long, value_delimiter = ',', default_value = "1,0,0")]
        xi: Vec<f64>,
        /// Exponent of the ℓ_s norm in the h2 ratio.
        #[arg(long, default_value_t = 4.0)]
        s: f64,
        /// Exponent of the log-moment statistic.
        #[arg(long, default_value_t = 2.0)]
        k: f64,
        /// Exponent of the cluster moment.
        #[arg(long, default_value_t = 2.0)]
        p: f64,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Short all gaps narrower than this before evaluating.
        #[arg(long)]
        kappa: Option<f64>,
    },
    /// Network tensor of a saved configuration, or a scan over a model.
    Effective {
        #[arg(long, conflicts_with_all = ["model", "grid"])]
        config: Option<PathBuf>,
        #[arg(long, requires = "grid")]
        model: Option<String>,
        #[arg(long)]
        delta: f64,
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        /// Clamping layer width; defaults to delta.
        #[arg(long)]
        layer_width: Option<f64>,
    },
    /// Gap-function energies over a list of gap widths.
    Keller {
        #[arg(long, default_value_t = 1.0)]
        a: f64,
        #[arg(long, default_value_t = 1.0)]
        d: f64,
        #[arg(long, default_value_t = 0.0)]
        gamma: f64,
        #[arg(long, value_delimiter = ',', default_value = "1e-2,1e-3,1e-4,1e-5,1e-6")]
        nu: Vec<f64>,
        #[arg(long, default_value_t = 256)]
        n_r: usize,
        #[arg(long, default_value_t = 32)]
        n_t: usize,
    },
    /// Execute an experiment spec file.
    Run { spec: PathBuf },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

fn unreadable(e: impl Display) -> Failure {
    Failure { code: 2, message: e.to_string() }
}

fn invalid(e: impl Display) -> Failure {
    Failure { code: 3, message: e.to_string() }
}

fn runtime(e: impl Display) -> Failure {
    Failure { code: 1, message: e.to_string() }
}

fn load_failure(e: IoError) -> Failure {
    match e {
        IoError::Invalid(_) => invalid(e),
        _ => unreadable(e),
    }
}

fn parse_model(arg: &str) -> Result<ModelParams, Failure> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        fs::read_to_string(arg).map_err(|e| unreadable(format!("{arg}: {e}")))?
    };
    serde_json::from_str(&text).map_err(|e| unreadable(format!("model: {e}")))
}

fn direction(xi: &[f64]) -> Result<Vec3, Failure> {
    match xi {
        [x, y, z] => Ok([*x, *y, *z]),
        _ => Err(invalid(format!("xi needs three components, got {}", xi.len()))),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json<T: Serialize>(value: &T) -> Result<String, Failure> {
    to_json_string(value).map_err(runtime)
}

#[derive(Serialize)]
struct EnergyReport {
    family: &'static str,
    xi: Vec3,
    minimum: Minimum,
}

fn tensor_csv(t: &EffectiveTensor, seed: u64) -> Result<String, Failure> {
    let mut row = vec![fmt_float(t.half_width), seed.to_string()];
    row.extend(t.upper().iter().map(|v| fmt_float(*v)));
    csv_string(&["N", "seed", "a11", "a12", "a13", "a22", "a23", "a33"], &[row]).map_err(runtime)
}

/// Write a scan and turn recorded cell errors into exit code 1.
fn finish_series(cli: &Cli, series: &CriterionSeries) -> Result<(), Failure> {
    let text = match cli.format {
        Format::Json => json(series)?,
        Format::Csv => series_csv(series).map_err(runtime)?,
    };
    emit(cli.out.as_deref(), &text)?;
    report_cells(series.errors.len())
}

fn report_cells(errors: usize) -> Result<(), Failure> {
    if errors > 0 {
        return Err(runtime(format!("{errors} cell(s) failed; partial results written")));
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let seed = cli.seed.unwrap_or(0);
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Generate { model, half_width } => {
            let model = parse_model(model)?;
            let config = model.generate(seed, *half_width).map_err(invalid)?;
            let text = match cli.format {
                Format::Json => to_versioned_json(&config).map_err(runtime)?,
                Format::Csv => {
                    let rows: Vec<Vec<String>> = config
                        .spheres
                        .iter()
                        .map(|s| {
                            let mut r: Vec<String> = s.center.iter().map(|c| fmt_float(*c)).collect();
                            r.push(fmt_float(s.radius));
                            r
                        })
                        .collect();
                    csv_string(&["x", "y", "z", "radius"], &rows).map_err(runtime)?
                }
            };
            emit(out, &text)
        }
        Command::Graph { config, delta, restrict } => {
            let mut config = load_config(config).map_err(load_failure)?;
            if let Some(m) = restrict {
                config = restrict_box(&config, *m).map_err(invalid)?;
            }
            let g = build_graph(&components(&config), &config, *delta).map_err(invalid)?;
            let text = match cli.format {
                Format::Json => to_versioned_json(&g).map_err(runtime)?,
                Format::Csv => {
                    let rows: Vec<Vec<String>> = g
                        .edges
                        .iter()
                        .map(|e| {
                            vec![e.id.to_string(), e.a.to_string(), e.b.to_string(), fmt_float(e.gap), fmt_float(e.mu)]
                        })
                        .collect();
                    csv_string(&["id", "a", "b", "d", "mu"], &rows).map_err(runtime)?
                }
            };
            emit(out, &text)
        }
        Command::Energy {
            graph,
            family,
            xi,
            identity_mass,
        } => {
            let g = load_graph(graph).map_err(load_failure)?;
            let xi = direction(xi)?;
            let (name, b) = match family {
                Family::Affine => ("affine", affine_boundary_family(&g, xi)),
                Family::Midpoint => ("midpoint", midpoint_boundary_family(&g, xi).map_err(invalid)?),
            };
            let opts = SolverOptions {
                identity_mass: *identity_mass,
                ..SolverOptions::default()
            };
            let minimum = minimize_energy(&g, &b, opts).map_err(runtime)?;
            let text = match cli.format {
                Format::Json => json(&EnergyReport { family: name, xi, minimum })?,
                Format::Csv => {
                    let rows: Vec<Vec<String>> = minimum
                        .u
                        .0
                        .iter()
                        .enumerate()
                        .map(|(i, u)| vec![i.to_string(), fmt_float(*u)])
                        .collect();
                    csv_string(&["node", "u"], &rows).map_err(runtime)?
                }
            };
            emit(out, &text)
        }
        Command::Criteria {
            model,
            delta,
            grid,
            seeds,
            statistic,
            xi,
            s,
            k,
            p,
            samples,
            kappa,
        } => {
            let model = parse_model(model)?;
            let stat = match statistic {
                StatKind::Density => Statistic::Density,
                StatKind::H1 => Statistic::H1 { xi: direction(xi)? },
                StatKind::H2 => Statistic::H2 {
                    options: H2Options { s: *s, ..H2Options::default() },
                },
                StatKind::Logmoment => Statistic::LogMoment { k: *k },
                StatKind::Clustermoment => Statistic::ClusterMoment {
                    p: *p,
                    n_samples: *samples,
                    size: Default::default(),
                },
            };
            stat.validate().map_err(invalid)?;
            let opts = ScanOptions {
                solver: SolverOptions::default(),
                kappa: *kappa,
            };
            let series = scan_limsup(&model, *delta, grid, *seeds, seed, &stat, &opts).map_err(invalid)?;
            finish_series(cli, &series)
        }
        Command::Effective {
            config,
            model,
            delta,
            grid,
            seeds,
            layer_width,
        } => {
            let opts = SolverOptions::default();
            if let Some(path) = config {
                let config = load_config(path).map_err(load_failure)?;
                let g = full_graph(&config, *delta).map_err(invalid)?;
                let t = network_effective_tensor(&g, layer_width.unwrap_or(*delta), opts).map_err(invalid)?;
                let text = match cli.format {
                    Format::Json => json(&t)?,
                    Format::Csv => tensor_csv(&t, config.seed)?,
                };
                return emit(out, &text);
            }
            let (Some(model), Some(grid)) = (model, grid) else {
                return Err(invalid("either --config or --model with --grid is required"));
            };
            let model = parse_model(model)?;
            let scan = effective_scan(&model, *delta, grid, *seeds, seed, *layer_width, opts).map_err(invalid)?;
            let text = match cli.format {
                Format::Json => json(&scan)?,
                Format::Csv => effective_csv(&scan).map_err(runtime)?,
            };
            emit(out, &text)?;
            report_cells(scan.errors.len())
        }
        Command::Keller { a, d, gamma, nu, n_r, n_t } => {
            let base = KellerParams {
                a: *a,
                nu: nu.first().copied().unwrap_or(f64::NAN),
                d: *d,
                gamma: *gamma,
            };
            let table = keller_table(base, nu, QuadratureGrid { n_r: *n_r, n_t: *n_t }).map_err(invalid)?;
            let text = match cli.format {
                Format::Json => json(&table)?,
                Format::Csv => keller_csv(&table).map_err(runtime)?,
            };
            emit(out, &text)
        }
        Command::Run { spec } => {
            let mut spec = ExperimentSpec::load(spec).map_err(unreadable)?;
            if let Some(s) = cli.seed {
                spec.base_seed = s;
            }
            let dir = out
                .map(Path::to_path_buf)
                .or_else(|| spec.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("results"));
            let outcome = run_experiment(&spec, &dir).map_err(|e| match e {
                ExperimentError::Parse(_) => unreadable(e),
                ExperimentError::Validation(_) => invalid(e),
                _ => runtime(e),
            })?;
            eprintln!("wrote {} file(s) to {}", outcome.files.len(), dir.display());
            report_cells(outcome.cell_errors)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(3);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
