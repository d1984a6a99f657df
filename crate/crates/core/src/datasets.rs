//! Synthetic Kronecker graphs with bandlimited signals, Harary graphs, sensor
//! CSV ingestion and random vertex sampling.

use std::path::Path;

use nalgebra::{DMatrix, Matrix3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::graph::{GraphError, LaplacianEstimate, SamplingOperator, WeightedGraph};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("eigendecomposition produced non-finite values")]
    EigenFailure,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at row {row}, column {column}: {message}")]
    ParseError {
        row: usize,
        column: usize,
        message: String,
    },
    #[error("only {found} usable snapshots (need at least {needed})")]
    TooFewSnapshots { found: usize, needed: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

// Separate ChaCha streams keep generators independent for a shared seed.
const STREAM_ADJACENCY: u64 = 1;
const STREAM_SIGNALS: u64 = 2;
const STREAM_SAMPLING: u64 = 3;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed matrix of the synthetic experiment.
pub fn default_seed_matrix() -> Matrix3<f64> {
    Matrix3::new(0.6, 0.1, 0.7, 0.3, 0.1, 0.5, 0.0, 1.0, 0.1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KroneckerSpec {
    pub seed_matrix: Matrix3<f64>,
    pub kron_order: u32,
    pub rng_seed: u64,
}

impl KroneckerSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.kron_order == 0 {
            return Err(DatasetError::InvalidParams("kron_order must be at least 1".into()));
        }
        if let Some(v) = self.seed_matrix.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DatasetError::InvalidParams(format!(
                "seed matrix entry {v} is not a probability"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandlimitedSpec {
    pub omega: usize,
    pub k: usize,
    pub snr_db: f64,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorDataset {
    pub n_sensors: usize,
    /// K×N, one row per snapshot.
    pub snapshots: DMatrix<f64>,
    pub harary_connectivity: Option<usize>,
    /// 1-based data-row numbers that were dropped during ingestion.
    pub dropped_rows: Vec<usize>,
}

/// `kron_order`-fold Kronecker power of the seed matrix.
pub fn kronecker_probability_matrix(spec: &KroneckerSpec) -> Result<DMatrix<f64>, DatasetError> {
    spec.validate()?;
    let p0 = DMatrix::from_iterator(3, 3, spec.seed_matrix.iter().copied());
    let mut p = p0.clone();
    for _ in 1..spec.kron_order {
        p = p.kronecker(&p0);
    }
    Ok(p)
}

/// `W_ij ~ Bernoulli(P_ij)`, then `W ∨ Wᵀ` with a zero diagonal.
pub fn sample_adjacency(p: &DMatrix<f64>, rng_seed: u64) -> Result<WeightedGraph, DatasetError> {
    if p.nrows() != p.ncols() {
        return Err(DatasetError::InvalidParams("probability matrix must be square".into()));
    }
    if let Some(v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(DatasetError::InvalidParams(format!("entry {v} is not a probability")));
    }
    let n = p.nrows();
    let mut rng = rng_for(rng_seed, STREAM_ADJACENCY);
    let mut draw = DMatrix::from_element(n, n, false);
    for j in 0..n {
        for i in 0..n {
            draw[(i, j)] = rng.random::<f64>() < p[(i, j)];
        }
    }
    let w = DMatrix::from_fn(n, n, |i, j| {
        if i != j && (draw[(i, j)] || draw[(j, i)]) {
            1.0
        } else {
            0.0
        }
    });
    Ok(WeightedGraph::new(w)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandlimitedSignals {
    /// K×N.
    pub clean: DMatrix<f64>,
    /// K×N.
    pub noisy: DMatrix<f64>,
    pub noise_variance: f64,
}

/// Snapshots `Σ_{i ≤ ω} γ_k^(i) r^(i)` with standard normal `γ`, plus white noise
/// scaled so that mean signal power over `σ²` hits `snr_db`.
pub fn generate_bandlimited_signals(
    l: &LaplacianEstimate,
    spec: &BandlimitedSpec,
) -> Result<BandlimitedSignals, DatasetError> {
    let n = l.n();
    if spec.omega == 0 || spec.omega > n {
        return Err(DatasetError::InvalidParams(format!(
            "omega must be in [1, {n}] (got {})",
            spec.omega
        )));
    }
    if spec.k == 0 {
        return Err(DatasetError::InvalidParams("K must be at least 1".into()));
    }
    if !spec.snr_db.is_finite() {
        return Err(DatasetError::InvalidParams("snr_db must be finite".into()));
    }
    let (values, vectors) = l.eigen_sorted();
    if values.iter().chain(vectors.iter()).any(|v| !v.is_finite()) {
        return Err(DatasetError::EigenFailure);
    }
    let basis = vectors.columns(0, spec.omega);
    let mut rng = rng_for(spec.rng_seed, STREAM_SIGNALS);
    let gamma = DMatrix::from_fn(spec.k, spec.omega, |_, _| rng.sample::<f64, _>(StandardNormal));
    let clean = gamma * basis.transpose();
    let power = clean.norm_squared() / (clean.len() as f64);
    let noise_variance = power / 10f64.powf(spec.snr_db / 10.0);
    let sd = noise_variance.sqrt();
    let noise = DMatrix::from_fn(spec.k, n, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
    Ok(BandlimitedSignals {
        noisy: &clean + noise,
        clean,
        noise_variance,
    })
}

/// Harary graph `H_{P,n}` with unit weights.
pub fn harary_graph(n: usize, connectivity: usize) -> Result<WeightedGraph, DatasetError> {
    if connectivity < 2 || connectivity >= n {
        return Err(DatasetError::InvalidParams(format!(
            "connectivity must satisfy 2 <= P < n (P = {connectivity}, n = {n})"
        )));
    }
    let mut w = DMatrix::zeros(n, n);
    let mut link = |a: usize, b: usize| {
        if a != b {
            w[(a, b)] = 1.0;
            w[(b, a)] = 1.0;
        }
    };
    let half = connectivity / 2;
    for i in 0..n {
        for step in 1..=half {
            link(i, (i + step) % n);
        }
    }
    if connectivity % 2 == 1 {
        if n % 2 == 0 {
            for i in 0..n / 2 {
                link(i, i + n / 2);
            }
        } else {
            // Odd n: i ~ i + (n+1)/2 for 0 ≤ i ≤ (n-1)/2, and 0 ~ (n-1)/2.
            let jump = (n + 1) / 2;
            for i in 0..=(n - 1) / 2 {
                link(i, (i + jump) % n);
            }
            link(0, (n - 1) / 2);
        }
    }
    Ok(WeightedGraph::new(w)?)
}

/// Reads one column per sensor and one row per snapshot (header line required).
/// Rows with missing, extra or non-numeric cells are dropped with a warning.
pub fn load_sensor_csv(
    path: &Path,
    expected_sensors: usize,
    max_snapshots: usize,
) -> Result<SensorDataset, DatasetError> {
    let io_err = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(csv_error(e, path)),
    };
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(DatasetError::TooFewSnapshots { found: 0, needed: 1 });
    }
    if headers.len() != expected_sensors {
        return Err(DatasetError::ParseError {
            row: 0,
            column: headers.len().min(expected_sensors) + 1,
            message: format!("expected {expected_sensors} sensor columns, header has {}", headers.len()),
        });
    }
    let mut data = Vec::new();
    let mut dropped = Vec::new();
    let mut kept = 0;
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => return Err(csv_error(e, path)),
        };
        match parse_row(&record, expected_sensors) {
            Ok(values) => {
                if kept < max_snapshots {
                    data.extend(values);
                    kept += 1;
                }
            }
            Err((column, why)) => {
                log::warn!("{}: dropping row {row} (column {column}: {why})", path.display());
                dropped.push(row);
            }
        }
    }
    if kept == 0 {
        return Err(DatasetError::TooFewSnapshots { found: 0, needed: 1 });
    }
    Ok(SensorDataset {
        n_sensors: expected_sensors,
        snapshots: DMatrix::from_row_slice(kept, expected_sensors, &data),
        harary_connectivity: None,
        dropped_rows: dropped,
    })
}

fn parse_row(record: &csv::StringRecord, width: usize) -> Result<Vec<f64>, (usize, String)> {
    if record.len() != width {
        return Err((record.len().min(width) + 1, format!("{} cells, expected {width}", record.len())));
    }
    record
        .iter()
        .enumerate()
        .map(|(c, cell)| match cell.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ if cell.is_empty() => Err((c + 1, "missing value".to_string())),
            _ => Err((c + 1, format!("not a number: {cell:?}"))),
        })
        .collect()
}

fn csv_error(e: csv::Error, path: &Path) -> DatasetError {
    let row = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => DatasetError::Io {
            path: path.display().to_string(),
            source,
        },
        other => DatasetError::ParseError {
            row,
            column: 0,
            message: format!("{other:?}"),
        },
    }
}

/// `m` distinct vertices drawn once and used for all `k` snapshots.
pub fn random_sampling_operator(
    n: usize,
    k: usize,
    m: usize,
    rng_seed: u64,
) -> Result<SamplingOperator, DatasetError> {
    if m == 0 || m > n {
        return Err(DatasetError::InvalidParams(format!("M must be in [1, {n}] (got {m})")));
    }
    let mut rng = rng_for(rng_seed, STREAM_SAMPLING);
    let mut selection = sample(&mut rng, n, m).into_vec();
    selection.sort_unstable();
    Ok(SamplingOperator::replicated(n, k, selection)?)
}
