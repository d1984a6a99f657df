//! Declarative experiment sweeps: data generation or loading, VB runs, the
//! zero-fill and oracle-Laplacian baselines, and report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, Matrix3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{
    generate_bandlimited_signals, harary_graph, kronecker_probability_matrix, load_sensor_csv,
    default_seed_matrix, random_sampling_operator, sample_adjacency, BandlimitedSpec, DatasetError,
    KroneckerSpec,
};
use crate::gcch::GcchParams;
use crate::graph::{laplacian_from_weights, LaplacianEstimate, StackedObservations, WeightedGraph};
use crate::metrics::{nmse_laplacian, nmse_signal, MetricsError};
use crate::vb::{run_vb_with, IterationRecord, Truth, VbConfig, VbError, VbOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    SyntheticKronecker,
    TemperatureHarary,
    CustomCsv,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::SyntheticKronecker => "synthetic_kronecker",
            Scenario::TemperatureHarary => "temperature_harary",
            Scenario::CustomCsv => "custom_csv",
        }
    }
}

fn default_kron_order() -> u32 {
    4
}
fn default_sensors() -> usize {
    54
}
fn default_connectivity() -> Vec<usize> {
    vec![5]
}

/// Experiment file schema (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    /// Sampled vertex counts M.
    pub sweep: Vec<usize>,
    /// Bandwidths ω (ignored for custom_csv).
    #[serde(default)]
    pub omegas: Vec<usize>,
    /// Snapshot counts K; one entry for a plain M sweep.
    pub k: Vec<usize>,
    #[serde(default)]
    pub snr_db: f64,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub vb: VbConfig,
    pub output_dir: PathBuf,
    /// Synthetic: number of Kronecker factors (N = 3^kron_order).
    #[serde(default = "default_kron_order")]
    pub kron_order: u32,
    /// Synthetic: 3×3 Bernoulli seed matrix, row major.
    #[serde(default)]
    pub seed_matrix: Option<[[f64; 3]; 3]>,
    /// Sensor scenarios: number of sensors N.
    #[serde(default = "default_sensors")]
    pub n_sensors: usize,
    /// Sensor scenarios: Harary connectivities P (edges VB may learn).
    #[serde(default = "default_connectivity")]
    pub connectivity: Vec<usize>,
    /// custom_csv: measurement file, one column per sensor.
    #[serde(default)]
    pub csv_path: Option<PathBuf>,
    /// Write per-iteration trace files.
    #[serde(default = "default_true")]
    pub traces: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(String),
}

fn field_err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field: field.to_string(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| match e.span() {
            Some(span) => ConfigError::Syntax(format!("{} (bytes {}..{})", e.message(), span.start, span.end)),
            None => ConfigError::Syntax(e.message().to_string()),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn n_vertices(&self) -> usize {
        match self.scenario {
            Scenario::SyntheticKronecker => 3usize.pow(self.kron_order),
            _ => self.n_sensors,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.scenario == Scenario::SyntheticKronecker && !(1..=8).contains(&self.kron_order) {
            return Err(field_err("kron_order", "must be in [1, 8]"));
        }
        let n = self.n_vertices();
        if n < 2 {
            return Err(field_err("n_sensors", "need at least 2 vertices"));
        }
        if self.sweep.is_empty() {
            return Err(field_err("sweep", "at least one M value is required"));
        }
        if let Some(m) = self.sweep.iter().find(|&&m| m == 0 || m > n) {
            return Err(field_err("sweep", format!("M = {m} is outside [1, {n}]")));
        }
        if self.seeds.is_empty() {
            return Err(field_err("seeds", "at least one seed is required"));
        }
        if self.k.is_empty() || self.k.contains(&0) {
            return Err(field_err("k", "need at least one snapshot count, all >= 1"));
        }
        if self.scenario != Scenario::CustomCsv {
            if self.omegas.is_empty() {
                return Err(field_err("omegas", "at least one bandwidth is required"));
            }
            if let Some(w) = self.omegas.iter().find(|&&w| w == 0 || w > n) {
                return Err(field_err("omegas", format!("omega = {w} is outside [1, {n}]")));
            }
            if !self.snr_db.is_finite() {
                return Err(field_err("snr_db", "must be finite"));
            }
        }
        if self.scenario != Scenario::SyntheticKronecker {
            if self.connectivity.is_empty() {
                return Err(field_err("connectivity", "at least one Harary connectivity is required"));
            }
            if let Some(p) = self.connectivity.iter().find(|&&p| p < 2 || p >= n) {
                return Err(field_err("connectivity", format!("P = {p} is outside [2, {})", n)));
            }
        }
        if self.scenario == Scenario::CustomCsv && self.csv_path.is_none() {
            return Err(field_err("csv_path", "required for the custom_csv scenario"));
        }
        if let Some(m) = &self.seed_matrix {
            if m.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(field_err("seed_matrix", "entries must be probabilities in [0, 1]"));
            }
        }
        self.vb.validate().map_err(|e| field_err("vb", e.to_string()))?;
        Ok(())
    }

    fn seed_matrix(&self) -> Matrix3<f64> {
        match &self.seed_matrix {
            Some(rows) => Matrix3::from_fn(|i, j| rows[i][j]),
            None => default_seed_matrix(),
        }
    }

    /// All cells in canonical order (M, ω, K, P, seed).
    pub fn cells(&self) -> Vec<Cell> {
        let omegas: Vec<Option<usize>> = match self.scenario {
            Scenario::CustomCsv => vec![None],
            _ => self.omegas.iter().copied().map(Some).collect(),
        };
        let connectivity: Vec<Option<usize>> = match self.scenario {
            Scenario::SyntheticKronecker => vec![None],
            _ => self.connectivity.iter().copied().map(Some).collect(),
        };
        let mut cells = Vec::new();
        for &m in &self.sweep {
            for &omega in &omegas {
                for &k in &self.k {
                    for &p in &connectivity {
                        for &seed in &self.seeds {
                            cells.push(Cell {
                                m,
                                omega,
                                k,
                                connectivity: p,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        cells.sort();
        cells.dedup();
        cells
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Cell {
    pub m: usize,
    pub omega: Option<usize>,
    pub k: usize,
    pub connectivity: Option<usize>,
    pub seed: u64,
}

impl Cell {
    pub fn label(&self) -> String {
        let mut s = format!("m{}", self.m);
        if let Some(w) = self.omega {
            let _ = write!(s, "_w{w}");
        }
        let _ = write!(s, "_k{}", self.k);
        if let Some(p) = self.connectivity {
            let _ = write!(s, "_p{p}");
        }
        let _ = write!(s, "_s{}", self.seed);
        s
    }
}

#[derive(Debug, Error)]
pub enum CellError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Vb(#[from] VbError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellMetrics {
    pub iterations: usize,
    pub converged: bool,
    pub final_rel_change: f64,
    pub nmse_vb: f64,
    pub nmse_zero_fill: f64,
    pub nmse_oracle: Option<f64>,
    pub nmse_laplacian: Option<f64>,
    pub noise_variance_est: f64,
    pub noise_variance_true: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub cell: Cell,
    pub result: Result<CellMetrics, String>,
    pub trace: Vec<IterationRecord>,
    pub gcch_tuples: Vec<GcchParams>,
}

/// Data for one cell: truth, observations and optional reference Laplacian.
struct CellData {
    clean: DMatrix<f64>,
    observed: DMatrix<f64>,
    noise_variance: Option<f64>,
    truth_laplacian: Option<LaplacianEstimate>,
    edge_support: Option<Vec<(usize, usize)>>,
}

/// Shared inputs that do not depend on the cell (loaded CSV).
#[derive(Debug, Clone, Default)]
pub struct SharedInputs {
    sensors: Option<DMatrix<f64>>,
}

impl SharedInputs {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self, DatasetError> {
        if cfg.scenario != Scenario::CustomCsv {
            return Ok(Self::default());
        }
        let path = cfg.csv_path.as_deref().expect("validated");
        let max_k = cfg.k.iter().copied().max().unwrap_or(1);
        let ds = load_sensor_csv(path, cfg.n_sensors, max_k)?;
        if let Some(&k) = cfg.k.iter().find(|&&k| k > ds.snapshots.nrows()) {
            return Err(DatasetError::TooFewSnapshots {
                found: ds.snapshots.nrows(),
                needed: k,
            });
        }
        Ok(Self {
            sensors: Some(ds.snapshots),
        })
    }
}

fn cycle_graph(n: usize) -> Result<WeightedGraph, DatasetError> {
    harary_graph(n, 2)
}

fn cell_data(cfg: &ExperimentConfig, shared: &SharedInputs, cell: &Cell) -> Result<CellData, CellError> {
    match cfg.scenario {
        Scenario::SyntheticKronecker => {
            let p = kronecker_probability_matrix(&KroneckerSpec {
                seed_matrix: cfg.seed_matrix(),
                kron_order: cfg.kron_order,
                rng_seed: cell.seed,
            })?;
            let l = laplacian_from_weights(&sample_adjacency(&p, cell.seed)?);
            let s = generate_bandlimited_signals(
                &l,
                &BandlimitedSpec {
                    omega: cell.omega.expect("synthetic cells carry omega"),
                    k: cell.k,
                    snr_db: cfg.snr_db,
                    rng_seed: cell.seed,
                },
            )?;
            Ok(CellData {
                clean: s.clean,
                observed: s.noisy,
                noise_variance: Some(s.noise_variance),
                truth_laplacian: Some(l),
                edge_support: None,
            })
        }
        Scenario::TemperatureHarary => {
            // Stand-in field: smooth along the sensor ring.
            let l = laplacian_from_weights(&cycle_graph(cfg.n_sensors)?);
            let s = generate_bandlimited_signals(
                &l,
                &BandlimitedSpec {
                    omega: cell.omega.expect("sensor cells carry omega"),
                    k: cell.k,
                    snr_db: cfg.snr_db,
                    rng_seed: cell.seed,
                },
            )?;
            let support = harary_graph(cfg.n_sensors, cell.connectivity.expect("P"))?.edges();
            Ok(CellData {
                clean: s.clean,
                observed: s.noisy,
                noise_variance: Some(s.noise_variance),
                truth_laplacian: Some(l),
                edge_support: Some(support),
            })
        }
        Scenario::CustomCsv => {
            let all = shared.sensors.as_ref().expect("sensor data loaded");
            let snapshots = all.rows(0, cell.k).into_owned();
            let support = harary_graph(cfg.n_sensors, cell.connectivity.expect("P"))?.edges();
            Ok(CellData {
                clean: snapshots.clone(),
                observed: snapshots,
                noise_variance: None,
                truth_laplacian: None,
                edge_support: Some(support),
            })
        }
    }
}

/// Runs VB and the baselines for one cell.
pub fn run_cell(
    cfg: &ExperimentConfig,
    shared: &SharedInputs,
    cell: &Cell,
    record_gcch: bool,
) -> CellOutcome {
    let mut trace = Vec::new();
    let mut gcch_tuples = Vec::new();
    let result = run_cell_inner(cfg, shared, cell, record_gcch, &mut trace, &mut gcch_tuples)
        .map_err(|e| e.to_string());
    if let Err(e) = &result {
        log::warn!("cell {} failed: {e}", cell.label());
    }
    CellOutcome {
        cell: *cell,
        result,
        trace,
        gcch_tuples,
    }
}

fn run_cell_inner(
    cfg: &ExperimentConfig,
    shared: &SharedInputs,
    cell: &Cell,
    record_gcch: bool,
    trace: &mut Vec<IterationRecord>,
    gcch_tuples: &mut Vec<GcchParams>,
) -> Result<CellMetrics, CellError> {
    let data = cell_data(cfg, shared, cell)?;
    let n = data.clean.ncols();
    let op = random_sampling_operator(n, cell.k, cell.m, cell.seed)?;
    let obs = StackedObservations::from_signals(&data.observed, &op)?;

    let zero_fill = op.adjoint(obs.y())?;
    let zero_fill = DMatrix::from_fn(cell.k, n, |k, i| zero_fill[k * n + i]);
    let nmse_zero_fill = nmse_signal(&zero_fill, &data.clean)?;

    let opts = VbOptions {
        edge_support: data.edge_support.clone(),
        truth: Some(Truth {
            signals: data.clean.clone(),
            laplacian: data.truth_laplacian.clone(),
        }),
        record_gcch,
        ..VbOptions::default()
    };
    let state = run_vb_with(&obs, &op, &cfg.vb, &opts)?;
    let nmse_vb = nmse_signal(&state.signal.estimates(), &data.clean)?;
    let nmse_lap = match &data.truth_laplacian {
        Some(l) => Some(nmse_laplacian(&state.laplacian, l)?),
        None => None,
    };

    let nmse_oracle = match &data.truth_laplacian {
        Some(l) => {
            let oracle = run_vb_with(
                &obs,
                &op,
                &cfg.vb,
                &VbOptions {
                    fixed_laplacian: Some(l.clone()),
                    ..VbOptions::default()
                },
            )?;
            Some(nmse_signal(&oracle.signal.estimates(), &data.clean)?)
        }
        None => None,
    };

    *trace = state.trace.clone();
    *gcch_tuples = state.gcch_tuples;
    log::info!(
        "cell {}: vb {:.4e}, zero-fill {:.4e}, {} iterations",
        cell.label(),
        nmse_vb,
        nmse_zero_fill,
        state.iteration
    );
    Ok(CellMetrics {
        iterations: state.iteration,
        converged: state.converged,
        final_rel_change: state.trace.last().map_or(f64::NAN, |r| r.rel_change),
        nmse_vb,
        nmse_zero_fill,
        nmse_oracle,
        nmse_laplacian: nmse_lap,
        noise_variance_est: state.noise.variance_estimate(),
        noise_variance_true: data.noise_variance,
    })
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    /// Canonically ordered.
    pub outcomes: Vec<CellOutcome>,
}

impl ExperimentResult {
    pub fn all_succeeded(&self) -> bool {
        self.outcomes.iter().all(|o| o.result.is_ok())
    }
}

/// Runs every cell (in parallel on the current rayon pool) and sorts the outcomes.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, ConfigError> {
    run_experiment_with(cfg, false)
}

pub fn run_experiment_with(cfg: &ExperimentConfig, record_gcch: bool) -> Result<ExperimentResult, ConfigError> {
    cfg.validate()?;
    let shared = SharedInputs::load(cfg).map_err(|e| field_err("csv_path", e.to_string()))?;
    let mut outcomes: Vec<CellOutcome> = cfg
        .cells()
        .par_iter()
        .map(|cell| run_cell(cfg, &shared, cell, record_gcch))
        .collect();
    outcomes.sort_by(|a, b| a.cell.cmp(&b.cell));
    Ok(ExperimentResult {
        config: cfg.clone(),
        outcomes,
    })
}

const RESULT_HEADER: [&str; 23] = [
    "scenario",
    "m",
    "omega",
    "k",
    "connectivity",
    "seed",
    "status",
    "error",
    "iterations",
    "converged",
    "final_rel_change",
    "nmse_vb",
    "nmse_zero_fill",
    "nmse_oracle_laplacian",
    "nmse_laplacian",
    "noise_variance_est",
    "noise_variance_true",
    "epsilon",
    "lambda_init",
    "rho_e",
    "xi_e",
    "max_iters",
    "rel_tol",
];

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn opt_int(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `results.csv` content.
pub fn results_csv(result: &ExperimentResult) -> Result<Vec<u8>, csv::Error> {
    let vb = &result.config.vb;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULT_HEADER)?;
    for o in &result.outcomes {
        let c = &o.cell;
        let mut row = vec![
            result.config.scenario.as_str().to_string(),
            c.m.to_string(),
            opt_int(c.omega),
            c.k.to_string(),
            opt_int(c.connectivity),
            c.seed.to_string(),
        ];
        match &o.result {
            Ok(m) => row.extend([
                "ok".to_string(),
                String::new(),
                m.iterations.to_string(),
                m.converged.to_string(),
                num(m.final_rel_change),
                num(m.nmse_vb),
                num(m.nmse_zero_fill),
                opt_num(m.nmse_oracle),
                opt_num(m.nmse_laplacian),
                num(m.noise_variance_est),
                opt_num(m.noise_variance_true),
            ]),
            Err(e) => {
                row.extend(["failed".to_string(), e.clone()]);
                row.extend(std::iter::repeat_n(String::new(), 9));
            }
        }
        row.extend([
            num(vb.epsilon),
            num(vb.lambda_init),
            num(vb.rho_e),
            num(vb.xi_e),
            vb.max_iters.to_string(),
            num(vb.rel_tol),
        ]);
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

/// Median of the finite values; `None` when there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub m: usize,
    pub omega: Option<usize>,
    pub k: usize,
    pub connectivity: Option<usize>,
    pub runs: usize,
    pub failed: usize,
    pub median_nmse_vb: Option<f64>,
    pub median_nmse_zero_fill: Option<f64>,
    pub median_nmse_oracle_laplacian: Option<f64>,
    pub median_nmse_laplacian: Option<f64>,
    pub median_noise_variance_est: Option<f64>,
    pub median_iterations: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub scenario: Scenario,
    pub vb: VbConfig,
    pub seeds: Vec<u64>,
    pub groups: Vec<SummaryRow>,
}

/// Per-(M, ω, K, P) medians over seeds.
pub fn summarize(result: &ExperimentResult) -> Summary {
    let mut groups: BTreeMap<(usize, Option<usize>, usize, Option<usize>), Vec<&CellOutcome>> = BTreeMap::new();
    for o in &result.outcomes {
        let c = &o.cell;
        groups.entry((c.m, c.omega, c.k, c.connectivity)).or_default().push(o);
    }
    let rows = groups
        .into_iter()
        .map(|((m, omega, k, connectivity), outs)| {
            let ok: Vec<&CellMetrics> = outs.iter().filter_map(|o| o.result.as_ref().ok()).collect();
            let col = |f: &dyn Fn(&CellMetrics) -> Option<f64>| median(&ok.iter().filter_map(|m| f(m)).collect::<Vec<_>>());
            SummaryRow {
                m,
                omega,
                k,
                connectivity,
                runs: outs.len(),
                failed: outs.len() - ok.len(),
                median_nmse_vb: col(&|m| Some(m.nmse_vb)),
                median_nmse_zero_fill: col(&|m| Some(m.nmse_zero_fill)),
                median_nmse_oracle_laplacian: col(&|m| m.nmse_oracle),
                median_nmse_laplacian: col(&|m| m.nmse_laplacian),
                median_noise_variance_est: col(&|m| Some(m.noise_variance_est)),
                median_iterations: col(&|m| Some(m.iterations as f64)),
            }
        })
        .collect();
    Summary {
        scenario: result.config.scenario,
        vb: result.config.vb,
        seeds: result.config.seeds.clone(),
        groups: rows,
    }
}

/// Per-iteration trace as CSV.
pub fn trace_csv(trace: &[IterationRecord]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "iteration",
        "rel_change",
        "alpha_mean",
        "noise_variance",
        "nmse_signal",
        "nmse_laplacian",
        "edges_closed_form",
        "edges_quadrature",
        "edges_skipped",
        "lambda_guarded",
    ])?;
    for r in trace {
        w.write_record([
            r.iteration.to_string(),
            num(r.rel_change),
            num(r.alpha_mean),
            num(r.noise_variance),
            opt_num(r.nmse_signal),
            opt_num(r.nmse_laplacian),
            r.edges_closed_form.to_string(),
            r.edges_quadrature.to_string(),
            r.edges_skipped.to_string(),
            r.lambda_guarded.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no results to report")]
    Empty,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ReportError> {
    std::fs::write(path, bytes).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes `results.csv`, `summary.json` and `trace_<cell>.csv` files; returns the paths written.
pub fn emit_report(result: &ExperimentResult, output_dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    if result.outcomes.is_empty() {
        return Err(ReportError::Empty);
    }
    std::fs::create_dir_all(output_dir).map_err(|source| ReportError::Io {
        path: output_dir.display().to_string(),
        source,
    })?;
    let mut written = Vec::new();
    let results = output_dir.join("results.csv");
    write_file(&results, &results_csv(result)?)?;
    written.push(results);

    let summary = output_dir.join("summary.json");
    let mut json = serde_json::to_vec_pretty(&summarize(result))?;
    json.push(b'\n');
    write_file(&summary, &json)?;
    written.push(summary);

    if result.config.traces {
        for o in result.outcomes.iter().filter(|o| !o.trace.is_empty()) {
            let path = output_dir.join(format!("trace_{}.csv", o.cell.label()));
            write_file(&path, &trace_csv(&o.trace)?)?;
            written.push(path);
        }
    }
    Ok(written)
}
