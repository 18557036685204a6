//! Parallel sweeps over `(scheme, seed, N)` and their result files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use mda_core::diagnostics::{ni_value, rate_fit};
use mda_core::{
    analytic_constants, d0_bound, run, theoretical_stepsize, DiscreteMeasure, Geometries, IterateTrace, MdaError,
    PayoffConstants, Scheme, SolverConfig,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::catalog::{build_game, build_geometries, rng_for, Game, Purpose};
use crate::config::{ExperimentConfig, StartSpec, StepRule};
use crate::error::{CliError, Result};

/// Fixed CSV column order.
pub const CSV_HEADER: [&str; 15] = [
    "scheme", "seed", "k_nu", "k_mu", "n_iters", "tau", "ni_avg", "ni_last", "dh_to_mne", "lf", "kappa", "lhstar",
    "m_bound", "d0", "wall_s",
];

/// One `(scheme, seed, N)` result. Empty optional fields are written as
/// empty CSV cells.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub scheme: String,
    pub seed: u64,
    pub k_nu: usize,
    pub k_mu: usize,
    pub n_iters: usize,
    pub tau: f64,
    pub ni_avg: Option<f64>,
    pub ni_last: Option<f64>,
    pub dh_to_mne: Option<f64>,
    pub lf: Option<f64>,
    pub kappa: Option<f64>,
    pub lhstar: Option<f64>,
    pub m_bound: Option<f64>,
    pub d0: Option<f64>,
    pub wall_s: Option<f64>,
}

/// Everything that depends on the seed but not on the scheme or `N`.
#[derive(Debug, Clone)]
pub struct SeedSetup {
    pub seed: u64,
    pub game: Game,
    pub geometries: Geometries,
    pub nu0: DiscreteMeasure,
    pub mu0: DiscreteMeasure,
    /// Analytic constants; present for the entropy geometry.
    pub constants: Option<PayoffConstants>,
    pub d0: Option<f64>,
    /// `L_{h*}` from the worst-case bound at zero potential with directions
    /// bounded by `max(C_ν, C_μ)`.
    pub l_hstar: Option<f64>,
}

impl SeedSetup {
    pub fn new(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let game = build_game(&cfg.game, seed)?;
        let geometries = build_geometries(&cfg.geometry, &game)?;
        let (nu0, mu0) = match cfg.solver.start {
            StartSpec::Uniform => mda_core::solvers::uniform_start(game.payoff()),
            StartSpec::Random => {
                let mut rng = rng_for(seed, Purpose::Start);
                let p = game.payoff();
                (
                    DiscreteMeasure::random_interior(p.grid_nu().clone(), &mut rng),
                    DiscreteMeasure::random_interior(p.grid_mu().clone(), &mut rng),
                )
            }
        };
        let (constants, d0, l_hstar) = if geometries.is_entropy() {
            let c = analytic_constants(game.payoff(), geometries.nu.kind())?;
            let g_sup = c.c_nu.max(c.c_mu);
            let lh = geometries
                .nu
                .dual_lipschitz_constants_for_bounds(0.0, g_sup)?
                .l_hstar()
                .max(geometries.mu.dual_lipschitz_constants_for_bounds(0.0, g_sup)?.l_hstar());
            (Some(c), Some(d0_bound(&geometries, &nu0, &mu0)?), Some(lh))
        } else {
            (None, None, None)
        };
        Ok(Self {
            seed,
            game,
            geometries,
            nu0,
            mu0,
            constants,
            d0,
            l_hstar,
        })
    }

    pub fn tau(&self, rule: &StepRule, scheme: Scheme, n: usize) -> Result<f64> {
        match *rule {
            StepRule::Fixed { tau } => Ok(tau),
            StepRule::Theoretical { tau_max } => match (self.constants, self.d0, self.l_hstar) {
                (Some(c), Some(d0), Some(lh)) => Ok(theoretical_stepsize(scheme, &c, d0, n, lh, tau_max)?),
                _ => Err(CliError::Config(
                    "the theoretical step rule needs the entropy geometry; use a fixed step".into(),
                )),
            },
        }
    }
}

/// A finished run, or the reason it produced no iterates.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub scheme: Scheme,
    pub seed: u64,
    pub n: usize,
    pub row: ResultRow,
    pub trace: Option<IterateTrace>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SlopeEntry {
    pub scheme: String,
    pub seed: u64,
    pub slope: f64,
    pub intercept: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct FailureEntry {
    pub scheme: String,
    pub seed: u64,
    pub n_iters: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RngRecord {
    pub generator: &'static str,
    pub seeds: Vec<u64>,
    pub streams: BTreeMap<&'static str, u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub rows: usize,
    pub rng: RngRecord,
    /// NI(averaged) against `N`, one fit per scheme and seed.
    pub rate_fits: Vec<SlopeEntry>,
    /// Largest (least negative) fitted slope per scheme.
    pub worst_slope: BTreeMap<String, f64>,
    pub failures: Vec<FailureEntry>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub outcomes: Vec<RunOutcome>,
    pub summary: SweepSummary,
}

impl SweepResult {
    pub fn rows(&self) -> Vec<ResultRow> {
        self.outcomes.iter().map(|o| o.row.clone()).collect()
    }
}

fn run_one(cfg: &ExperimentConfig, setup: &SeedSetup, scheme: Scheme, n: usize, keep_wall: bool) -> Result<RunOutcome> {
    let tau = setup.tau(&cfg.solver.step, scheme, n)?;
    let solver = SolverConfig::new(scheme, tau, n)
        .record_every(cfg.solver.record_every.unwrap_or(n))
        .implicit(cfg.solver.implicit_tol, cfg.solver.implicit_max_inner);
    let payoff = setup.game.payoff();
    let c = setup.constants;
    let mut row = ResultRow {
        scheme: scheme.as_str().to_owned(),
        seed: setup.seed,
        k_nu: setup.game.k_nu(),
        k_mu: setup.game.k_mu(),
        n_iters: n,
        tau,
        ni_avg: None,
        ni_last: None,
        dh_to_mne: None,
        lf: c.map(|c| c.l_f),
        kappa: c.map(|c| c.kappa),
        lhstar: setup.l_hstar,
        m_bound: c.map(|c| c.m_bound),
        d0: setup.d0,
        wall_s: None,
    };
    let start = Instant::now();
    let trace = match run(payoff, &setup.geometries, &setup.nu0, &setup.mu0, &solver) {
        Ok(t) => t,
        Err(e @ MdaError::NonConvergence { .. }) => {
            warn!("{scheme} seed={} N={n}: {e}", setup.seed);
            return Ok(RunOutcome {
                scheme,
                seed: setup.seed,
                n,
                row,
                trace: None,
                failure: Some(e.to_string()),
            });
        }
        Err(e) => return Err(e.into()),
    };
    row.ni_avg = Some(ni_value(payoff, &trace.nu_avg, &trace.mu_avg)?);
    row.ni_last = Some(ni_value(payoff, &trace.nu_last, &trace.mu_last)?);
    if let Some((nu_star, mu_star)) = &setup.game.mne {
        let g = &setup.geometries;
        row.dh_to_mne = Some(
            g.nu.bregman_divergence(&trace.nu_avg, nu_star)? + g.mu.bregman_divergence(&trace.mu_avg, mu_star)?,
        );
    }
    if keep_wall {
        row.wall_s = Some(start.elapsed().as_secs_f64());
    }
    for w in &trace.warnings {
        warn!("{scheme} seed={} N={n}: {w}", setup.seed);
    }
    Ok(RunOutcome {
        scheme,
        seed: setup.seed,
        n,
        row,
        trace: Some(trace),
        failure: None,
    })
}

/// Runs every `(scheme, seed, N)` combination on a pool of `threads`
/// workers (`None` lets rayon decide). Outcomes are sorted by scheme, seed
/// and `N` whatever the completion order.
pub fn run_sweep(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<SweepResult> {
    cfg.validate()?;
    let mut schemes = cfg.schemes()?;
    schemes.sort();
    let mut seeds = cfg.solver.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Config(format!("cannot build thread pool: {e}")))?;

    pool.install(|| {
        let setups: Vec<SeedSetup> = seeds
            .par_iter()
            .map(|&s| SeedSetup::new(cfg, s))
            .collect::<Result<_>>()?;
        let tasks: Vec<(Scheme, &SeedSetup, usize)> = schemes
            .iter()
            .flat_map(|&sc| setups.iter().flat_map(move |st| cfg.solver.n_list.iter().map(move |&n| (sc, st, n))))
            .collect();
        let outcomes: Vec<RunOutcome> = tasks
            .par_iter()
            .map(|&(sc, st, n)| {
                info!("running {sc} seed={} N={n}", st.seed);
                run_one(cfg, st, sc, n, cfg.output.wall_clock)
            })
            .collect::<Result<_>>()?;
        let summary = summarize(&outcomes, &seeds);
        Ok(SweepResult { outcomes, summary })
    })
}

fn summarize(outcomes: &[RunOutcome], seeds: &[u64]) -> SweepSummary {
    let mut groups: BTreeMap<(Scheme, u64), Vec<(f64, f64)>> = BTreeMap::new();
    let mut failures = Vec::new();
    let mut warnings = Vec::new();
    for o in outcomes {
        match (o.row.ni_avg, &o.failure) {
            (Some(ni), None) => groups.entry((o.scheme, o.seed)).or_default().push((o.n as f64, ni)),
            (_, Some(reason)) => failures.push(FailureEntry {
                scheme: o.scheme.as_str().into(),
                seed: o.seed,
                n_iters: o.n,
                reason: reason.clone(),
            }),
            _ => {}
        }
        if let Some(t) = &o.trace {
            warnings.extend(t.warnings.iter().map(|w| format!("{} seed={} N={}: {w}", o.scheme, o.seed, o.n)));
        }
    }
    let mut rate_fits = Vec::new();
    let mut worst_slope: BTreeMap<String, f64> = BTreeMap::new();
    for ((scheme, seed), points) in groups {
        match rate_fit(&points) {
            Ok(fit) => {
                let w = worst_slope.entry(scheme.as_str().into()).or_insert(f64::NEG_INFINITY);
                *w = w.max(fit.slope);
                rate_fits.push(SlopeEntry {
                    scheme: scheme.as_str().into(),
                    seed,
                    slope: fit.slope,
                    intercept: fit.intercept,
                    points: fit.points.len(),
                });
            }
            Err(e) => warnings.push(format!("{scheme} seed={seed}: no rate fit ({e})")),
        }
    }
    let streams = [
        ("game", Purpose::Game),
        ("start", Purpose::Start),
        ("gan_source", Purpose::GanSource),
        ("gan_data", Purpose::GanData),
        ("verify", Purpose::Verify),
    ]
    .into_iter()
    .map(|(k, p)| (k, p as u64))
    .collect();
    SweepSummary {
        rows: outcomes.len(),
        rng: RngRecord {
            generator: "ChaCha8",
            seeds: seeds.to_vec(),
            streams,
        },
        rate_fits,
        worst_slope,
        failures,
        warnings,
    }
}

pub fn write_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    if rows.is_empty() {
        w.write_record(CSV_HEADER).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Config(format!("cannot write {}: {other:?}", path.display())),
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("plain data serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowFormat {
    Csv,
    Json,
}

/// Files written by [`write_outputs`].
#[derive(Debug, Clone)]
pub struct OutputPaths {
    pub rows: PathBuf,
    pub summary: PathBuf,
}

/// Writes the rows (CSV or JSON) and the summary into `dir`.
pub fn write_outputs(cfg: &ExperimentConfig, dir: &Path, result: &SweepResult, format: RowFormat) -> Result<OutputPaths> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let rows = result.rows();
    let rows_path = match format {
        RowFormat::Csv => {
            let p = dir.join(&cfg.output.csv);
            write_csv(&p, &rows)?;
            p
        }
        RowFormat::Json => {
            let p = dir.join(&cfg.output.json);
            write_json(&p, &rows)?;
            p
        }
    };
    let summary = dir.join(&cfg.output.summary);
    write_json(&summary, &result.summary)?;
    Ok(OutputPaths {
        rows: rows_path,
        summary,
    })
}
