//! Rate fits over a result CSV, behind `mda rates`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use mda_core::diagnostics::{rate_fit, RateFit};
use serde::Deserialize;

use crate::error::{CliError, Result};

#[derive(Debug, Deserialize)]
struct CsvRow {
    scheme: String,
    seed: u64,
    n_iters: usize,
    ni_avg: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SeedRate {
    pub seed: u64,
    pub fit: RateFit,
}

#[derive(Debug, Clone)]
pub struct RateTable {
    pub scheme: String,
    pub per_seed: Vec<SeedRate>,
}

impl RateTable {
    pub fn worst_slope(&self) -> f64 {
        self.per_seed.iter().map(|r| r.fit.slope).fold(f64::NEG_INFINITY, f64::max)
    }
}

impl fmt::Display for RateTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.per_seed {
            writeln!(
                f,
                "scheme={} seed={} points={} slope={:.6}",
                self.scheme,
                r.seed,
                r.fit.points.len(),
                r.fit.slope
            )?;
        }
        write!(f, "scheme={} worst_slope={:.6}", self.scheme, self.worst_slope())
    }
}

/// Fits `log ni_avg` against `log n_iters` for each seed of `scheme`.
/// Flagged rows (empty `ni_avg`) are ignored.
pub fn rates_from_csv(path: &Path, scheme: &str) -> Result<RateTable> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| read_error(path, e))?;
    let mut groups: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
    for row in reader.deserialize::<CsvRow>() {
        let row = row.map_err(|e| read_error(path, e))?;
        if row.scheme == scheme {
            if let Some(ni) = row.ni_avg {
                groups.entry(row.seed).or_default().push((row.n_iters as f64, ni));
            }
        }
    }
    if groups.is_empty() {
        return Err(CliError::Config(format!("no rows for scheme '{scheme}' in {}", path.display())));
    }
    let per_seed = groups
        .into_iter()
        .map(|(seed, points)| Ok(SeedRate { seed, fit: rate_fit(&points)? }))
        .collect::<Result<_>>()?;
    Ok(RateTable {
        scheme: scheme.to_owned(),
        per_seed,
    })
}

fn read_error(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Config(format!("malformed CSV {}: {other:?}", path.display())),
    }
}
