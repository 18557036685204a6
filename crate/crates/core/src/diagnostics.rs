//! Nikaidò-Isoda errors, rate fits and numerical checks of the inequalities
//! behind the convergence guarantees.
//!
//! Every check returns a [`CheckReport`] with a signed worst-case margin
//! (bound minus observed value; negative means violated). Checks whose
//! hypotheses fail are reported as skipped rather than failed.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::error::{MdaError, Result};
use crate::geometry::{log_sum_exp, BregmanGeometry, DualPotential, Phi};
use crate::measures::{
    check_grid, convex_combination, kl_divergence, pairing, pairing_difference, tv_distance, DiscreteMeasure,
    GridFunction, StrategyGrid,
};
use crate::payoffs::{BilinearPayoff, Payoff, PayoffConstants, PayoffStructure, RegularizedBilinearPayoff};
use crate::solvers::{run_observed, Geometries, IterateTrace, Scheme, SolverConfig, StepRecord, StepView};

/// Values below this are excluded from log-log fits.
pub const NI_FLOOR: f64 = 1e-12;

/// Default iteration budget of the inner best-response solves.
pub const DEFAULT_INNER_BUDGET: usize = 2_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiMethod {
    VertexExact,
    ClosedForm,
    InnerSolveEstimate,
}

impl NiMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            NiMethod::VertexExact => "vertex-exact",
            NiMethod::ClosedForm => "closed-form",
            NiMethod::InnerSolveEstimate => "inner-solve-estimate",
        }
    }
}

/// A best response: a pure strategy or a mixed one.
#[derive(Debug, Clone, PartialEq)]
pub enum BestResponse {
    Vertex(usize),
    Measure(DiscreteMeasure),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NIReport {
    pub ni_value: f64,
    /// `max_{μ'} F(ν, μ')` (or its estimate).
    pub upper_value: f64,
    /// `min_{ν'} F(ν', μ)` (or its estimate).
    pub lower_value: f64,
    /// Minimizing player's best response to `μ`.
    pub best_response_nu: BestResponse,
    /// Maximizing player's best response to `ν`.
    pub best_response_mu: BestResponse,
    pub method: NiMethod,
    /// For estimates: the true error lies in `[ni_value, ni_value + gap]`.
    pub gap_bound: Option<f64>,
}

fn argmax(xs: &[f64]) -> (usize, f64) {
    xs.iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, x)| if x > best.1 { (i, x) } else { best })
}

fn argmin(xs: &[f64]) -> (usize, f64) {
    xs.iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, x)| if x < best.1 { (i, x) } else { best })
}

fn bilinear_ni(b: &BilinearPayoff, nu: &DiscreteMeasure, mu: &DiscreteMeasure) -> NIReport {
    let col = b.matrix().tr_mul_vec(nu.weights());
    let row = b.matrix().mul_vec(mu.weights());
    let (j, upper) = argmax(&col);
    let (i, lower) = argmin(&row);
    NIReport {
        ni_value: upper - lower,
        upper_value: upper,
        lower_value: lower,
        best_response_nu: BestResponse::Vertex(i),
        best_response_mu: BestResponse::Vertex(j),
        method: NiMethod::VertexExact,
        gap_bound: None,
    }
}

/// `log Σ_j π_j exp(x_j)` and the Gibbs measure `∝ π e^x`.
fn gibbs(grid: &Arc<StrategyGrid>, reference: &DiscreteMeasure, x: &[f64]) -> Result<(f64, DiscreteMeasure)> {
    let logs: Vec<f64> = reference
        .weights()
        .iter()
        .zip(x)
        .map(|(p, v)| if *p > 0.0 { p.ln() + v } else { f64::NEG_INFINITY })
        .collect();
    let lse = log_sum_exp(logs.iter().copied());
    Ok((lse, DiscreteMeasure::from_log_weights(grid.clone(), &logs)?))
}

fn regularized_ni(r: &RegularizedBilinearPayoff, nu: &DiscreteMeasure, mu: &DiscreteMeasure) -> Result<NIReport> {
    let a = r.base().matrix();
    let (s_nu, s_mu) = (r.sigma_nu(), r.sigma_mu());
    let kl_nu = kl_divergence(nu, r.reference_nu())?;
    let kl_mu = kl_divergence(mu, r.reference_mu())?;
    let col: Vec<f64> = a.tr_mul_vec(nu.weights()).iter().map(|v| v / s_mu).collect();
    let row: Vec<f64> = a.mul_vec(mu.weights()).iter().map(|v| -v / s_nu).collect();
    let (lse_mu, br_mu) = gibbs(r.grid_mu(), r.reference_mu(), &col)?;
    let (lse_nu, br_nu) = gibbs(r.grid_nu(), r.reference_nu(), &row)?;
    // max_{μ'} νᵀAμ' - σ_μ KL(μ',π_μ) = σ_μ lse_μ, and symmetrically.
    let upper = s_nu * kl_nu + s_mu * lse_mu;
    let lower = -s_mu * kl_mu - s_nu * lse_nu;
    Ok(NIReport {
        ni_value: upper - lower,
        upper_value: upper,
        lower_value: lower,
        best_response_nu: BestResponse::Measure(br_nu),
        best_response_mu: BestResponse::Measure(br_mu),
        method: NiMethod::ClosedForm,
        gap_bound: None,
    })
}

/// Nikaidò-Isoda error `max_{μ'} F(ν,μ') - min_{ν'} F(ν',μ)`.
///
/// Exact for bilinear (vertex enumeration) and entropy-regularized bilinear
/// payoffs (Gibbs variational formula); general payoffs fall back to an
/// inner mirror-descent solve with a Frank-Wolfe gap certificate.
pub fn ni_error<P: Payoff + ?Sized>(f: &P, nu: &DiscreteMeasure, mu: &DiscreteMeasure) -> Result<NIReport> {
    check_grid(f.grid_nu(), nu.grid(), "ni_error (ν)")?;
    check_grid(f.grid_mu(), mu.grid(), "ni_error (μ)")?;
    match f.structure() {
        PayoffStructure::Bilinear(b) => Ok(bilinear_ni(b, nu, mu)),
        PayoffStructure::Regularized(r) => regularized_ni(r, nu, mu),
        PayoffStructure::General => ni_error_inner_solve(f, nu, mu, DEFAULT_INNER_BUDGET),
    }
}

/// The NI value alone.
pub fn ni_value<P: Payoff + ?Sized>(f: &P, nu: &DiscreteMeasure, mu: &DiscreteMeasure) -> Result<f64> {
    Ok(ni_error(f, nu, mu)?.ni_value)
}

struct InnerSolve {
    point: DiscreteMeasure,
    value: f64,
    gap: f64,
}

/// Entropic mirror ascent on `m ↦ sign·F`, returning the averaged iterate,
/// its value and its Frank-Wolfe gap.
fn inner_solve(
    grid: &Arc<StrategyGrid>,
    budget: usize,
    value: &dyn Fn(&DiscreteMeasure) -> Result<f64>,
    gradient: &dyn Fn(&DiscreteMeasure) -> Result<GridFunction>,
) -> Result<InnerSolve> {
    let geom = BregmanGeometry::uniform_entropy(grid.clone());
    let mut m = DiscreteMeasure::uniform(grid.clone());
    let g0 = gradient(&m)?;
    let lf = 4.0 * g0.sup_norm().max(1e-12).powi(2);
    let tau = 0.5 * ((grid.len() as f64).ln().max(1e-12) / (lf * budget as f64)).sqrt();
    let mut sum = vec![0.0; grid.len()];
    for _ in 0..budget {
        for (s, w) in sum.iter_mut().zip(m.weights()) {
            *s += w;
        }
        let g = gradient(&m)?;
        m = geom.prox_step(&m, &g, tau, crate::geometry::Direction::Ascent)?;
    }
    let avg = DiscreteMeasure::new(grid.clone(), sum)?;
    let certify = |p: &DiscreteMeasure| -> Result<(f64, f64)> {
        let g = gradient(p)?;
        let gap = g.max() - pairing(&g, p)?;
        Ok((value(p)?, gap.max(0.0)))
    };
    let (va, ga) = certify(&avg)?;
    let (vl, gl) = certify(&m)?;
    Ok(if gl < ga {
        InnerSolve { point: m, value: vl, gap: gl }
    } else {
        InnerSolve { point: avg, value: va, gap: ga }
    })
}

/// NI estimate from inner best-response solves. The reported value is a
/// lower bound and `gap_bound` certifies how far above it the true error can
/// lie (valid for convex-concave payoffs).
pub fn ni_error_inner_solve<P: Payoff + ?Sized>(
    f: &P,
    nu: &DiscreteMeasure,
    mu: &DiscreteMeasure,
    budget: usize,
) -> Result<NIReport> {
    if budget == 0 {
        return Err(MdaError::InvalidArgument("inner budget must be positive".into()));
    }
    check_grid(f.grid_nu(), nu.grid(), "ni_error (ν)")?;
    check_grid(f.grid_mu(), mu.grid(), "ni_error (μ)")?;
    let up = inner_solve(
        f.grid_mu(),
        budget,
        &|m| f.value(nu, m),
        &|m| f.flat_derivative_mu_raw(nu, m),
    )?;
    let down = inner_solve(
        f.grid_nu(),
        budget,
        &|m| Ok(-f.value(m, mu)?),
        &|m| Ok(f.flat_derivative_nu_raw(m, mu)?.scaled(-1.0)),
    )?;
    let upper = up.value;
    let lower = -down.value;
    Ok(NIReport {
        ni_value: upper - lower,
        upper_value: upper,
        lower_value: lower,
        best_response_nu: BestResponse::Measure(down.point),
        best_response_mu: BestResponse::Measure(up.point),
        method: NiMethod::InnerSolveEstimate,
        gap_bound: Some(up.gap + down.gap),
    })
}

/// The unique equilibrium of an entropy-regularized bilinear game, by
/// log-space damped fixed-point iteration on
/// `ν ∝ π_ν e^{-Aμ/σ_ν}`, `μ ∝ π_μ e^{Aᵀν/σ_μ}`.
pub fn mne_regularized(
    f: &RegularizedBilinearPayoff,
    tol: f64,
    max_iterations: usize,
) -> Result<(DiscreteMeasure, DiscreteMeasure)> {
    if !(tol > 0.0) {
        return Err(MdaError::InvalidArgument("tolerance must be positive".into()));
    }
    let a = f.base().matrix();
    let (s_nu, s_mu) = (f.sigma_nu(), f.sigma_mu());
    let mut nu = f.reference_nu().clone();
    let mut mu = f.reference_mu().clone();
    let mut eta: f64 = 1.0;
    let mut last = f64::INFINITY;
    for _ in 0..max_iterations {
        let row: Vec<f64> = a.mul_vec(mu.weights()).iter().map(|v| -v / s_nu).collect();
        let col: Vec<f64> = a.tr_mul_vec(nu.weights()).iter().map(|v| v / s_mu).collect();
        let (_, nu_t) = gibbs(f.grid_nu(), f.reference_nu(), &row)?;
        let (_, mu_t) = gibbs(f.grid_mu(), f.reference_mu(), &col)?;
        let residual = tv_distance(&nu_t, &nu)?.max(tv_distance(&mu_t, &mu)?);
        if residual < tol {
            return Ok((nu_t, mu_t));
        }
        if residual > last {
            eta = (eta * 0.5).max(1e-4);
        }
        last = residual;
        let mix = |cur: &DiscreteMeasure, target: &DiscreteMeasure| -> Result<DiscreteMeasure> {
            let logs: Vec<f64> = cur
                .weights()
                .iter()
                .zip(target.weights())
                .map(|(c, t)| (1.0 - eta) * c.ln() + eta * t.ln())
                .collect();
            DiscreteMeasure::from_log_weights(cur.grid().clone(), &logs)
        };
        nu = mix(&nu, &nu_t)?;
        mu = mix(&mu, &mu_t)?;
    }
    Err(MdaError::NonConvergence {
        operation: "regularized equilibrium fixed point",
        iterations: max_iterations,
        residual: last,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CheckStatus {
    Passed,
    Failed,
    Skipped(String),
}

/// Outcome of one numerical check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    /// The property being verified.
    pub property: &'static str,
    pub status: CheckStatus,
    /// Smallest `bound - observed` seen (`+inf` when nothing was measured).
    pub worst_margin: f64,
    pub samples: usize,
    pub violations: usize,
    pub details: Vec<(String, f64)>,
}

impl CheckReport {
    fn new(name: impl Into<String>, property: &'static str) -> Self {
        Self {
            name: name.into(),
            property,
            status: CheckStatus::Passed,
            worst_margin: f64::INFINITY,
            samples: 0,
            violations: 0,
            details: Vec::new(),
        }
    }

    /// A report for a check whose hypotheses do not hold.
    pub fn skipped(name: impl Into<String>, property: &'static str, reason: impl Into<String>) -> Self {
        Self {
            status: CheckStatus::Skipped(reason.into()),
            ..Self::new(name, property)
        }
    }

    /// Records `observed ≤ bound`.
    fn record(&mut self, observed: f64, bound: f64) {
        let margin = bound - observed;
        self.samples += 1;
        if margin.is_nan() || margin < 0.0 {
            self.violations += 1;
        }
        if margin.is_nan() {
            self.worst_margin = f64::NAN;
        } else if !self.worst_margin.is_nan() {
            self.worst_margin = self.worst_margin.min(margin);
        }
    }

    fn detail(&mut self, key: impl Into<String>, value: f64) {
        self.details.push((key.into(), value));
    }

    fn finish(mut self) -> Self {
        if self.status == CheckStatus::Passed && self.violations > 0 {
            self.status = CheckStatus::Failed;
        }
        self
    }

    pub fn passed(&self) -> bool {
        self.status == CheckStatus::Passed
    }

    pub fn failed(&self) -> bool {
        self.status == CheckStatus::Failed
    }

    pub fn is_skipped(&self) -> bool {
        matches!(self.status, CheckStatus::Skipped(_))
    }

    pub fn status_str(&self) -> &'static str {
        match self.status {
            CheckStatus::Passed => "pass",
            CheckStatus::Failed => "fail",
            CheckStatus::Skipped(_) => "skipped",
        }
    }

    pub fn detail_value(&self, key: &str) -> Option<f64> {
        self.details.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }
}

impl fmt::Display for CheckReport {
    /// `key=value` lines.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "check={}", self.name)?;
        writeln!(f, "property={}", self.property)?;
        writeln!(f, "status={}", self.status_str())?;
        if let CheckStatus::Skipped(reason) = &self.status {
            writeln!(f, "reason={reason}")?;
        }
        writeln!(f, "worst_margin={:e}", self.worst_margin)?;
        writeln!(f, "samples={}", self.samples)?;
        writeln!(f, "violations={}", self.violations)?;
        for (k, v) in &self.details {
            writeln!(f, "detail.{k}={v:e}")?;
        }
        Ok(())
    }
}

/// `D_h(ν^{n+1},ν^n) ≤ 4 L_F τ² + 1e-9` (and likewise for μ) over every
/// step of an explicit run. Skipped when `τ·L > ½`.
pub fn check_tau2_bound(trace: &IterateTrace, constants: &PayoffConstants) -> CheckReport {
    let name = "tau2_bound";
    let property = "consecutive Bregman divergences are O(τ²)";
    if trace.scheme == Scheme::Implicit {
        return CheckReport::skipped(name, property, "stated for the explicit schemes");
    }
    if trace.tau * constants.l() > 0.5 {
        return CheckReport::skipped(
            name,
            property,
            format!("τ·L = {} exceeds 1/2", trace.tau * constants.l()),
        );
    }
    let bound = 4.0 * constants.l_f * trace.tau * trace.tau;
    let mut report = CheckReport::new(name, property);
    let mut ratio = 0.0_f64;
    let mut observe = |v: f64, report: &mut CheckReport| {
        report.record(v, bound + 1e-9);
        if bound > 0.0 {
            ratio = ratio.max(v / bound);
        } else if v > 0.0 {
            ratio = f64::INFINITY;
        }
    };
    for r in &trace.records {
        observe(r.dh_nu_forward, &mut report);
        observe(r.dh_mu_forward, &mut report);
    }
    observe(trace.summary.max_dh_nu_forward, &mut report);
    observe(trace.summary.max_dh_mu_forward, &mut report);
    report.detail("max_ratio", ratio);
    report.detail("bound", bound);
    report.finish()
}

/// Least-squares fit of `log y` against `log x`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    /// Points used in the fit.
    pub points: Vec<(f64, f64)>,
    /// Points dropped for falling below the floor.
    pub excluded: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    /// Euclidean norm of the log-space residuals.
    pub residual_norm: f64,
}

/// Power-law fit of `(x, y)` samples, dropping `y < floor`.
pub fn power_law_fit(points: &[(f64, f64)], floor: f64) -> Result<RateFit> {
    let (used, excluded): (Vec<_>, Vec<_>) = points.iter().copied().partition(|(x, y)| *y >= floor && *x > 0.0);
    if used.len() < 3 {
        return Err(MdaError::InvalidArgument(format!(
            "need at least 3 usable points for a rate fit, got {} ({} below the floor)",
            used.len(),
            excluded.len()
        )));
    }
    if let Some((x, y)) = used.iter().find(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(MdaError::InvalidArgument(format!("non-finite rate sample ({x}, {y})")));
    }
    let n = used.len() as f64;
    let lx: Vec<f64> = used.iter().map(|(x, _)| x.ln()).collect();
    let ly: Vec<f64> = used.iter().map(|(_, y)| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(MdaError::InvalidArgument("rate fit needs distinct abscissae".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual_norm = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(RateFit {
        points: used,
        excluded,
        slope,
        intercept,
        residual_norm,
    })
}

/// Slope of `log NI` against `log N`, excluding NI values below
/// [`NI_FLOOR`].
pub fn rate_fit(points: &[(f64, f64)]) -> Result<RateFit> {
    power_law_fit(points, NI_FLOOR)
}

/// Below this every commutator counts as zero.
pub const COMMUTATOR_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct CommutatorScaling {
    /// `(τ, max_n |commutator_n|)`.
    pub points: Vec<(f64, f64)>,
    /// `(τ, max_n commutator_n)` with the sign kept.
    pub signed_max: Vec<(f64, f64)>,
    /// `None` when every commutator vanishes.
    pub fit: Option<RateFit>,
    pub exact_symmetry: bool,
}

/// Runs `n` steps for each `τ` and fits the largest Bregman commutator
/// against `τ`.
pub fn bregman_commutator_scaling<P: Payoff + ?Sized>(
    f: &P,
    geometries: &Geometries,
    nu0: &DiscreteMeasure,
    mu0: &DiscreteMeasure,
    scheme: Scheme,
    taus: &[f64],
    n: usize,
) -> Result<CommutatorScaling> {
    if taus.len() < 3 {
        return Err(MdaError::InvalidArgument("commutator scaling needs at least 3 step sizes".into()));
    }
    let lo = taus.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = taus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi >= 4.0 * lo) {
        return Err(MdaError::InvalidArgument("step sizes must span at least a factor of 4".into()));
    }
    let mut points = Vec::new();
    let mut signed_max = Vec::new();
    for &tau in taus {
        let mut largest = 0.0_f64;
        let mut observer = |s: &StepView<'_>| -> Result<()> {
            let c = (geometries.nu.bregman_divergence(s.nu, s.nu_next)?
                - geometries.nu.bregman_divergence(s.nu_next, s.nu)?)
                + (geometries.mu.bregman_divergence(s.mu, s.mu_next)?
                    - geometries.mu.bregman_divergence(s.mu_next, s.mu)?);
            largest = largest.max(c.abs());
            Ok(())
        };
        let cfg = SolverConfig::new(scheme, tau, n);
        let trace = run_observed(f, geometries, nu0, mu0, &cfg, &mut observer)?;
        points.push((tau, largest));
        signed_max.push((tau, trace.summary.max_commutator));
    }
    let exact_symmetry = points.iter().all(|(_, c)| *c <= COMMUTATOR_FLOOR);
    let fit = if exact_symmetry {
        None
    } else {
        Some(power_law_fit(&points, COMMUTATOR_FLOOR)?)
    };
    Ok(CommutatorScaling {
        points,
        signed_max,
        fit,
        exact_symmetry,
    })
}

/// `NI(ν,μ) ≥ ℓ (KL(ν,ν*) + KL(μ,μ*)) - 1e-8` at random interior pairs.
pub fn quadratic_growth_check<R: Rng + ?Sized>(
    f: &RegularizedBilinearPayoff,
    mne: (&DiscreteMeasure, &DiscreteMeasure),
    samples: usize,
    rng: &mut R,
) -> Result<CheckReport> {
    let mut report = CheckReport::new("quadratic_growth", "NI error grows quadratically away from the equilibrium");
    let ell = f.sigma_nu().min(f.sigma_mu());
    report.detail("ell", ell);
    report.record(-ni_value(f, mne.0, mne.1)?, 1e-8);
    for _ in 0..samples {
        let nu = DiscreteMeasure::random_interior(f.grid_nu().clone(), rng);
        let mu = DiscreteMeasure::random_interior(f.grid_mu().clone(), rng);
        growth_sample(f, mne, &nu, &mu, ell, &mut report)?;
    }
    Ok(report.finish())
}

fn growth_sample(
    f: &RegularizedBilinearPayoff,
    mne: (&DiscreteMeasure, &DiscreteMeasure),
    nu: &DiscreteMeasure,
    mu: &DiscreteMeasure,
    ell: f64,
    report: &mut CheckReport,
) -> Result<()> {
    let ni = ni_value(f, nu, mu)?;
    let d = kl_divergence(nu, mne.0)? + kl_divergence(mu, mne.1)?;
    report.record(ell * d - 1e-8, ni);
    Ok(())
}

/// Quadratic growth at the averaged iterates of every recorded step.
pub fn quadratic_growth_along(
    f: &RegularizedBilinearPayoff,
    mne: (&DiscreteMeasure, &DiscreteMeasure),
    records: &[StepRecord],
) -> Result<CheckReport> {
    let mut report = CheckReport::new(
        "quadratic_growth_along_run",
        "distance of averaged iterates to the equilibrium is controlled by their NI error",
    );
    let ell = f.sigma_nu().min(f.sigma_mu());
    for r in records {
        growth_sample(f, mne, &r.nu_avg, &r.mu_avg, ell, &mut report)?;
    }
    Ok(report.finish())
}

/// Finite-difference check of both flat derivatives along random
/// directions.
///
/// For bilinear payoffs the difference quotient must match the pairing to
/// `1e-12` at every `ε`. Otherwise `eps` must halve at each step and the
/// error ratio between consecutive `ε` must lie in `[0.3, 0.7]` (first-order
/// convergence) whenever the error is above round-off.
pub fn finite_difference_check<P: Payoff + ?Sized, R: Rng + ?Sized>(
    f: &P,
    nu: &DiscreteMeasure,
    mu: &DiscreteMeasure,
    directions: usize,
    eps: &[f64],
    rng: &mut R,
) -> Result<CheckReport> {
    if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
        return Err(MdaError::InvalidArgument("ε values must lie in (0, 1]".into()));
    }
    let bilinear = matches!(f.structure(), PayoffStructure::Bilinear(_));
    let mut report = CheckReport::new("finite_differences", "flat derivatives match difference quotients");
    let base = f.value(nu, mu)?;
    let g_nu = f.flat_derivative_nu(nu, mu)?;
    let g_mu = f.flat_derivative_mu(nu, mu)?;
    let mut worst_error = 0.0_f64;
    let mut worst_ratio_dev = 0.0_f64;
    for d in 0..directions {
        let dir_nu = if d == 0 { nu.clone() } else { DiscreteMeasure::random_interior(nu.grid().clone(), rng) };
        let dir_mu = if d == 0 { mu.clone() } else { DiscreteMeasure::random_interior(mu.grid().clone(), rng) };
        let lin_nu = pairing_difference(&g_nu, &dir_nu, nu)?;
        let lin_mu = pairing_difference(&g_mu, &dir_mu, mu)?;
        let mut errs_nu = Vec::new();
        let mut errs_mu = Vec::new();
        for &e in eps {
            let moved_nu = convex_combination(nu, &dir_nu, e)?;
            let moved_mu = convex_combination(mu, &dir_mu, e)?;
            errs_nu.push(((f.value(&moved_nu, mu)? - base) / e - lin_nu).abs());
            errs_mu.push(((f.value(nu, &moved_mu)? - base) / e - lin_mu).abs());
        }
        for errs in [&errs_nu, &errs_mu] {
            worst_error = errs.iter().copied().fold(worst_error, f64::max);
            if bilinear {
                for e in errs {
                    report.record(*e, 1e-12);
                }
                continue;
            }
            for w in errs.windows(2) {
                if w[0] < 1e-9 {
                    report.record(w[1], 1e-9);
                    continue;
                }
                let ratio = w[1] / w[0];
                let dev = (ratio - 0.5).abs();
                worst_ratio_dev = worst_ratio_dev.max(dev);
                report.record(dev, 0.2);
            }
        }
    }
    report.detail("max_error", worst_error);
    if !bilinear {
        if eps.windows(2).any(|w| (w[1] / w[0] - 0.5).abs() > 1e-12) {
            return Err(MdaError::InvalidArgument("ε list must halve at each step for the ratio test".into()));
        }
        report.detail("max_ratio_deviation_from_half", worst_ratio_dev);
    }
    Ok(report.finish())
}

/// `4·√(L_F D0 / N)`.
pub fn simultaneous_bound(constants: &PayoffConstants, d0: f64, n: usize) -> f64 {
    4.0 * (constants.l_f * d0 / n as f64).sqrt()
}

/// `D0/(Nτ) + (½ κ L_{h*} + 4 L_F L) τ² + M/N`, valid for any `τ` with
/// `τ L ≤ ½`.
pub fn sequential_bound(constants: &PayoffConstants, d0: f64, n: usize, tau: f64, l_hstar: f64) -> f64 {
    let n = n as f64;
    d0 / (n * tau)
        + (0.5 * constants.kappa * l_hstar + 4.0 * constants.l_f * constants.l()) * tau * tau
        + constants.m_bound / n
}

/// The closed form `(3 D0^{2/3} (κ L_{h*} + 2 L_F L)^{1/3} + 2M) / (2 N^{2/3})`.
pub fn sequential_bound_closed_form(constants: &PayoffConstants, d0: f64, n: usize, l_hstar: f64) -> f64 {
    let k = constants.kappa * l_hstar + 2.0 * constants.l_f * constants.l();
    (3.0 * d0.powf(2.0 / 3.0) * k.cbrt() + 2.0 * constants.m_bound) / (2.0 * (n as f64).powf(2.0 / 3.0))
}

/// `D0 / (Nτ)`.
pub fn implicit_bound(d0: f64, n: usize, tau: f64) -> f64 {
    d0 / (n as f64 * tau)
}

/// `observed ≤ bound·(1 + rel)` for each `(label, observed, bound)`.
pub fn bound_check(
    name: &str,
    property: &'static str,
    samples: &[(String, f64, f64)],
    rel: f64,
) -> CheckReport {
    let mut report = CheckReport::new(name, property);
    for (label, observed, bound) in samples {
        report.record(*observed, bound * (1.0 + rel));
        report.detail(format!("{label}.ratio"), observed / bound);
    }
    report.finish()
}

/// Sup-minus-inf of the first-order residuals of one step.
///
/// For the entropy geometry the update `m' = prox(m, g, τ)` is equivalent to
/// `δh/δm(m') - δh/δm(m) ± τ g` being constant; the gradients are evaluated
/// at the pairs each scheme prescribes.
pub fn first_order_residuals<P: Payoff + ?Sized>(
    f: &P,
    geometries: &Geometries,
    scheme: Scheme,
    tau: f64,
    nu: &DiscreteMeasure,
    mu: &DiscreteMeasure,
    nu_next: &DiscreteMeasure,
    mu_next: &DiscreteMeasure,
) -> Result<(f64, f64)> {
    let (g_nu, g_mu) = match scheme {
        Scheme::Simultaneous => (f.flat_derivative_nu_raw(nu, mu)?, f.flat_derivative_mu_raw(nu, mu)?),
        Scheme::Sequential => (f.flat_derivative_nu_raw(nu, mu)?, f.flat_derivative_mu_raw(nu_next, mu)?),
        Scheme::Implicit => (
            f.flat_derivative_nu_raw(nu, mu_next)?,
            f.flat_derivative_mu_raw(nu_next, mu)?,
        ),
    };
    let r_nu = geometries
        .nu
        .flat_derivative_unshifted(nu_next)?
        .sub(&geometries.nu.flat_derivative_unshifted(nu)?)?
        .add(&g_nu.scaled(tau))?;
    let r_mu = geometries
        .mu
        .flat_derivative_unshifted(mu_next)?
        .sub(&geometries.mu.flat_derivative_unshifted(mu)?)?
        .sub(&g_mu.scaled(tau))?;
    Ok((r_nu.oscillation(), r_mu.oscillation()))
}

/// Runs `solver_payoff` and checks the first-order conditions of every step
/// against `reference`. The two payoffs coincide except under fault
/// injection.
pub fn first_order_conditions_check<P: Payoff + ?Sized, Q: Payoff + ?Sized>(
    solver_payoff: &P,
    reference: &Q,
    geometries: &Geometries,
    nu0: &DiscreteMeasure,
    mu0: &DiscreteMeasure,
    cfg: &SolverConfig,
) -> Result<CheckReport> {
    let name = "first_order_conditions";
    let property = "each mirror step satisfies its first-order optimality condition";
    if !geometries.is_entropy() {
        return Ok(CheckReport::skipped(name, property, "stated for the entropy geometry"));
    }
    let tol = match cfg.scheme {
        Scheme::Implicit => 10.0 * cfg.implicit_tol,
        _ => 1e-9,
    };
    let mut report = CheckReport::new(name, property);
    let mut observer = |s: &StepView<'_>| -> Result<()> {
        if s.nu_next.is_interior() && s.mu_next.is_interior() {
            let (a, b) = first_order_residuals(reference, geometries, cfg.scheme, s.tau, s.nu, s.mu, s.nu_next, s.mu_next)?;
            report.record(a.max(b), tol);
        }
        Ok(())
    };
    run_observed(solver_payoff, geometries, nu0, mu0, cfg, &mut observer)?;
    report.detail("tolerance", tol);
    Ok(report.finish())
}

/// Along a simultaneous run: `F(ν^{n+1},μ^n) ≤ F(ν^n,μ^n) ≤ F(ν^n,μ^{n+1})`
/// up to `1e-10`. Skipped when `τ·L > ½`.
pub fn competitive_chain_check<P: Payoff + ?Sized>(
    f: &P,
    geometries: &Geometries,
    nu0: &DiscreteMeasure,
    mu0: &DiscreteMeasure,
    cfg: &SolverConfig,
    constants: &PayoffConstants,
) -> Result<CheckReport> {
    let name = "competitive_chain";
    let property = "each player's mirror step improves its own payoff";
    if cfg.tau * constants.l() > 0.5 {
        return Ok(CheckReport::skipped(name, property, "τ·L exceeds 1/2"));
    }
    let cfg = SolverConfig { scheme: Scheme::Simultaneous, ..cfg.clone() };
    let mut report = CheckReport::new(name, property);
    let mut observer = |s: &StepView<'_>| -> Result<()> {
        let here = f.value(s.nu, s.mu)?;
        report.record(f.value(s.nu_next, s.mu)?, here + 1e-10);
        report.record(here, f.value(s.nu, s.mu_next)? + 1e-10);
        Ok(())
    };
    run_observed(f, geometries, nu0, mu0, &cfg, &mut observer)?;
    Ok(report.finish())
}

/// NI at the running averages never exceeds the running mean of the
/// per-iterate NI errors (joint convexity of NI).
pub fn jensen_check<P: Payoff + ?Sized>(
    f: &P,
    geometries: &Geometries,
    nu0: &DiscreteMeasure,
    mu0: &DiscreteMeasure,
    cfg: &SolverConfig,
) -> Result<CheckReport> {
    let mut report = CheckReport::new("jensen", "NI of averaged iterates is at most the average NI");
    let mut total = 0.0;
    let mut count = 0usize;
    let scheme = cfg.scheme;
    let mut observer = |s: &StepView<'_>| -> Result<()> {
        let (a, b) = match scheme {
            Scheme::Simultaneous => (s.nu, s.mu),
            Scheme::Sequential => (s.nu_next, s.mu),
            Scheme::Implicit => (s.nu_next, s.mu_next),
        };
        total += ni_value(f, a, b)?;
        count += 1;
        let at_avg = ni_value(f, s.nu_avg, s.mu_avg)?;
        report.record(at_avg, total / count as f64 + 1e-9);
        Ok(())
    };
    run_observed(f, geometries, nu0, mu0, cfg, &mut observer)?;
    Ok(report.finish())
}

/// `|D_h(m',m) - D_{h*}(f, f')| ≤ 1e-8 (1 + D_h(m',m))` where `f`, `f'` are
/// the flat derivatives of `h` at `m`, `m'`. `pairs` holds `(m, m')`.
pub fn primal_dual_identity_check(geom: &BregmanGeometry, pairs: &[(DiscreteMeasure, DiscreteMeasure)]) -> Result<CheckReport> {
    let mut report = CheckReport::new(
        "primal_dual_identity",
        "primal Bregman divergence equals the dual divergence of the potentials",
    );
    if !geom.is_entropy() {
        return Ok(CheckReport::skipped(report.name, report.property, "stated for the entropy geometry"));
    }
    let mut worst = 0.0_f64;
    for (m, m_next) in pairs {
        if !m.is_interior() || !m_next.is_interior() {
            continue;
        }
        let primal = geom.bregman_divergence(m_next, m)?;
        let f = DualPotential::new(geom.flat_derivative_h(m)?);
        let f_next = DualPotential::new(geom.flat_derivative_h(m_next)?);
        let dual = geom.dual_bregman(&f, &f_next)?;
        let gap = (primal - dual).abs();
        worst = worst.max(gap / (1.0 + primal));
        report.record(gap, 1e-8 * (1.0 + primal));
    }
    report.detail("max_relative_gap", worst);
    Ok(report.finish())
}

/// A random grid of `k` equispaced points on `[0, 1]`.
fn random_grid<R: Rng + ?Sized>(rng: &mut R, max_k: usize) -> Arc<StrategyGrid> {
    let k = rng.random_range(2..=max_k.max(2));
    StrategyGrid::uniform_1d(0.0, 1.0, k).expect("k ≥ 2").into_shared()
}

/// Pinsker: `KL(a,b) ≥ 2 TV(a,b)²` with `TV = ½‖a-b‖₁`.
pub fn pinsker_check<R: Rng + ?Sized>(samples: usize, max_k: usize, rng: &mut R) -> Result<CheckReport> {
    let mut report = CheckReport::new("pinsker", "KL divergence dominates twice the squared total variation");
    for _ in 0..samples {
        let grid = random_grid(rng, max_k);
        let a = DiscreteMeasure::random_interior(grid.clone(), rng);
        let b = DiscreteMeasure::random_interior(grid, rng);
        let tv = tv_distance(&a, &b)?;
        report.record(2.0 * tv * tv, kl_divergence(&a, &b)? + 1e-12);
    }
    Ok(report.finish())
}

/// Three-point inequality for a linear objective `G = τ⟨g,·⟩`:
/// with `m̄ = argmin G + D_h(·, m)`,
/// `G(p) + D_h(p,m) ≥ G(m̄) + D_h(m̄,m) + D_h(p,m̄)` for every `p`.
/// Exercised for the entropy and a quadratic Tsallis geometry.
pub fn three_point_check<R: Rng + ?Sized>(samples: usize, max_k: usize, rng: &mut R) -> Result<CheckReport> {
    let mut report = CheckReport::new("three_point", "Bregman proximal three-point inequality");
    for s in 0..samples {
        let grid = random_grid(rng, max_k);
        let reference = DiscreteMeasure::uniform(grid.clone());
        let geom = if s % 2 == 0 {
            BregmanGeometry::relative_entropy(reference)?
        } else {
            BregmanGeometry::separable(Phi::Tsallis { q: 2.0 }, reference)?
        };
        let m = DiscreteMeasure::random_interior(grid.clone(), rng);
        let p = DiscreteMeasure::random_interior(grid.clone(), rng);
        let g = GridFunction::random(grid, -1.0, 1.0, rng);
        let tau = rng.random_range(0.01..2.0);
        let bar = geom.prox_step(&m, &g, tau, crate::geometry::Direction::Descent)?;
        let lhs = tau * pairing(&g, &p)? + geom.bregman_divergence(&p, &m)?;
        let rhs = tau * pairing(&g, &bar)? + geom.bregman_divergence(&bar, &m)? + geom.bregman_divergence(&p, &bar)?;
        report.record(rhs, lhs + 1e-10);
    }
    Ok(report.finish())
}

/// First-order convexity in `ν` and concavity in `μ` at random triples.
pub fn convexity_concavity_check<P: Payoff + ?Sized, R: Rng + ?Sized>(
    f: &P,
    samples: usize,
    rng: &mut R,
) -> Result<CheckReport> {
    let mut report = CheckReport::new("convexity_concavity", "F is convex in ν and concave in μ");
    for _ in 0..samples {
        let nu = DiscreteMeasure::random_interior(f.grid_nu().clone(), rng);
        let nu2 = DiscreteMeasure::random_interior(f.grid_nu().clone(), rng);
        let mu = DiscreteMeasure::random_interior(f.grid_mu().clone(), rng);
        let mu2 = DiscreteMeasure::random_interior(f.grid_mu().clone(), rng);
        let base = f.value(&nu, &mu)?;
        let lin_nu = pairing_difference(&f.flat_derivative_nu(&nu, &mu)?, &nu2, &nu)?;
        let lin_mu = pairing_difference(&f.flat_derivative_mu(&nu, &mu)?, &mu2, &mu)?;
        report.record(base + lin_nu, f.value(&nu2, &mu)? + 1e-10);
        report.record(f.value(&nu, &mu2)?, base + lin_mu + 1e-10);
    }
    Ok(report.finish())
}

/// `∇h*(δh/δm(m)) = m` to `1e-12` in every coordinate, and
/// `δh/δm(∇h*(f)) = f` up to an additive constant (oscillation of the
/// difference below `1e-10`).
pub fn legendre_round_trip_check<R: Rng + ?Sized>(
    geom: &BregmanGeometry,
    samples: usize,
    rng: &mut R,
) -> Result<CheckReport> {
    let mut report = CheckReport::new("legendre_round_trip", "first variations of h and h* are mutually inverse");
    let grid = geom.grid().clone();
    let mut worst_primal = 0.0_f64;
    let mut worst_dual = 0.0_f64;
    for _ in 0..samples {
        let m = DiscreteMeasure::random_interior(grid.clone(), rng);
        let back = geom.conjugate_first_variation(&DualPotential::new(geom.flat_derivative_h(&m)?))?;
        let err = m
            .weights()
            .iter()
            .zip(back.weights())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst_primal = worst_primal.max(err);
        report.record(err, 1e-12);

        let f = GridFunction::random(grid.clone(), -5.0, 5.0, rng);
        let rho = geom.conjugate_first_variation(&DualPotential::new(f.clone()))?;
        let osc = geom.flat_derivative_h(&rho)?.sub(&f)?.oscillation();
        worst_dual = worst_dual.max(osc);
        report.record(osc, 1e-10);
    }
    report.detail("max_measure_error", worst_primal);
    report.detail("max_potential_oscillation", worst_dual);
    Ok(report.finish())
}

/// The two-sided Lipschitz bound on the entropic second variation at random
/// potentials and test functions.
pub fn dual_lipschitz_check<R: Rng + ?Sized>(geom: &BregmanGeometry, samples: usize, rng: &mut R) -> Result<CheckReport> {
    let mut report = CheckReport::new("dual_lipschitz", "second variation of h* is two-sided Lipschitz");
    let grid = geom.grid().clone();
    let mut worst = 0.0_f64;
    for _ in 0..samples {
        let scale = rng.random_range(0.01..3.0);
        let pot = |r: &mut R| GridFunction::random(grid.clone(), -scale, scale, r);
        let f = DualPotential::new(pot(rng));
        let g = pot(rng);
        let f2 = DualPotential::new(pot(rng));
        let g2 = pot(rng);
        let psi = pot(rng);
        let s = geom.dual_lipschitz_sample(&f, &g, &f2, &g2, &psi)?;
        if s.rhs > 0.0 {
            worst = worst.max(s.lhs / s.rhs);
        }
        report.record(s.lhs, s.rhs * (1.0 + 1e-12) + 1e-15);
    }
    report.detail("max_ratio", worst);
    Ok(report.finish())
}

/// On a bilinear game, the inner-solve estimate brackets the exact NI:
/// `estimate ≤ exact ≤ estimate + gap` (up to `1e-9`).
pub fn ni_oracle_equivalence_check(
    f: &BilinearPayoff,
    pairs: &[(DiscreteMeasure, DiscreteMeasure)],
    budget: usize,
) -> Result<CheckReport> {
    let mut report = CheckReport::new("ni_oracle_equivalence", "inner-solve NI brackets the exact NI");
    for (nu, mu) in pairs {
        let exact = ni_value(f, nu, mu)?;
        let est = ni_error_inner_solve(f, nu, mu, budget)?;
        let gap = est.gap_bound.unwrap_or(0.0);
        report.record(est.ni_value, exact + 1e-9);
        report.record(exact, est.ni_value + gap + 1e-9);
    }
    Ok(report.finish())
}

/// A payoff whose flat derivatives have the wrong sign, so mirror steps
/// move the wrong way. Used to confirm the first-order check can fail.
#[derive(Debug, Clone)]
pub struct SignFlipped<P>(pub P);

impl<P: Payoff> Payoff for SignFlipped<P> {
    fn grid_nu(&self) -> &Arc<StrategyGrid> {
        self.0.grid_nu()
    }

    fn grid_mu(&self) -> &Arc<StrategyGrid> {
        self.0.grid_mu()
    }

    fn value(&self, nu: &DiscreteMeasure, mu: &DiscreteMeasure) -> Result<f64> {
        self.0.value(nu, mu)
    }

    fn flat_derivative_nu_raw(&self, nu: &DiscreteMeasure, mu: &DiscreteMeasure) -> Result<GridFunction> {
        Ok(self.0.flat_derivative_nu_raw(nu, mu)?.scaled(-1.0))
    }

    fn flat_derivative_mu_raw(&self, nu: &DiscreteMeasure, mu: &DiscreteMeasure) -> Result<GridFunction> {
        Ok(self.0.flat_derivative_mu_raw(nu, mu)?.scaled(-1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::payoffs::{analytic_constants, DenseMatrix};
    use crate::solvers::{d0_bound, run, uniform_start};
    use crate::geometry::GeometryKind;
    use rand::SeedableRng;

    fn rng() -> rand::rngs::StdRng {
        rand::rngs::StdRng::seed_from_u64(7)
    }

    fn pennies() -> BilinearPayoff {
        BilinearPayoff::matching_pennies()
    }

    fn m(g: &Arc<StrategyGrid>, w: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::new(g.clone(), w.to_vec()).unwrap()
    }

    /// A payoff with no closed-form NI, wrapping a bilinear one.
    struct Opaque(BilinearPayoff);

    impl Payoff for Opaque {
        fn grid_nu(&self) -> &Arc<StrategyGrid> {
            self.0.grid_nu()
        }
        fn grid_mu(&self) -> &Arc<StrategyGrid> {
            self.0.grid_mu()
        }
        fn value(&self, nu: &DiscreteMeasure, mu: &DiscreteMeasure) -> Result<f64> {
            self.0.value(nu, mu)
        }
        fn flat_derivative_nu_raw(&self, nu: &DiscreteMeasure, mu: &DiscreteMeasure) -> Result<GridFunction> {
            self.0.flat_derivative_nu_raw(nu, mu)
        }
        fn flat_derivative_mu_raw(&self, nu: &DiscreteMeasure, mu: &DiscreteMeasure) -> Result<GridFunction> {
            self.0.flat_derivative_mu_raw(nu, mu)
        }
    }

    #[test]
    fn ni_examples() {
        let p = pennies();
        let (u, v) = uniform_start(&p);
        let r = ni_error(&p, &u, &v).unwrap();
        assert_eq!(r.ni_value, 0.0);
        assert_eq!(r.method, NiMethod::VertexExact);
        let d = DiscreteMeasure::dirac(p.grid_nu().clone(), 0).unwrap();
        let r = ni_error(&p, &d, &v).unwrap();
        assert_eq!(r.ni_value, 1.0);
        assert_eq!(r.best_response_mu, BestResponse::Vertex(0));
    }

    #[test]
    fn ni_is_nonnegative_and_oracles_agree() {
        let p = pennies();
        let mut rng = rng();
        let mut pairs = Vec::new();
        for _ in 0..20 {
            let nu = DiscreteMeasure::random_interior(p.grid_nu().clone(), &mut rng);
            let mu = DiscreteMeasure::random_interior(p.grid_mu().clone(), &mut rng);
            assert!(ni_value(&p, &nu, &mu).unwrap() >= -1e-12);
            pairs.push((nu, mu));
        }
        let report = ni_oracle_equivalence_check(&p, &pairs, 2_000).unwrap();
        assert!(report.passed(), "{report}");
        let opaque = Opaque(pennies());
        let r = ni_error(&opaque, &pairs[0].0, &pairs[0].1).unwrap();
        assert_eq!(r.method, NiMethod::InnerSolveEstimate);
        let exact = ni_value(&p, &pairs[0].0, &pairs[0].1).unwrap();
        assert!(r.ni_value <= exact + 1e-9 && exact <= r.ni_value + r.gap_bound.unwrap() + 1e-9);
    }

    #[test]
    fn regularized_closed_form_matches_inner_solve() {
        let r = RegularizedBilinearPayoff::with_uniform_references(pennies(), 0.5, 0.7).unwrap();
        let g = r.grid_nu().clone();
        let nu = m(&g, &[0.8, 0.2]);
        let mu = m(&g, &[0.3, 0.7]);
        let exact = ni_error(&r, &nu, &mu).unwrap();
        assert_eq!(exact.method, NiMethod::ClosedForm);
        let est = ni_error_inner_solve(&r, &nu, &mu, 5_000).unwrap();
        assert!((est.ni_value - exact.ni_value).abs() < 1e-3, "{} vs {}", est.ni_value, exact.ni_value);
        assert!(est.ni_value <= exact.ni_value + 1e-9);
        // The Gibbs best responses attain the closed-form values.
        if let (BestResponse::Measure(bn), BestResponse::Measure(bm)) = (&exact.best_response_nu, &exact.best_response_mu) {
            assert!((r.value(&nu, bm).unwrap() - exact.upper_value).abs() < 1e-12);
            assert!((r.value(bn, &mu).unwrap() - exact.lower_value).abs() < 1e-12);
        } else {
            panic!("expected measure best responses");
        }
    }

    #[test]
    fn regularized_equilibria() {
        let g = pennies().grid_nu().clone();
        let zero = BilinearPayoff::new(DenseMatrix::zeros(2, 2), g.clone(), g.clone()).unwrap();
        let pi_nu = m(&g, &[0.2, 0.8]);
        let pi_mu = m(&g, &[0.6, 0.4]);
        let r = RegularizedBilinearPayoff::new(zero, 0.3, 0.4, pi_nu.clone(), pi_mu.clone()).unwrap();
        let (a, b) = mne_regularized(&r, 1e-12, 1_000).unwrap();
        assert!(tv_distance(&a, &pi_nu).unwrap() < 1e-12);
        assert!(tv_distance(&b, &pi_mu).unwrap() < 1e-12);

        let r = RegularizedBilinearPayoff::with_uniform_references(pennies(), 1.0, 1.0).unwrap();
        let (a, b) = mne_regularized(&r, 1e-12, 10_000).unwrap();
        assert!((a.weights()[0] - 0.5).abs() < 1e-12 && (b.weights()[0] - 0.5).abs() < 1e-12);

        let mut rng = rng();
        let grid = StrategyGrid::uniform_1d(0.0, 1.0, 6).unwrap().into_shared();
        let a = DenseMatrix::new(6, 6, (0..36).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let base = BilinearPayoff::new(a, grid.clone(), grid).unwrap();
        let r = RegularizedBilinearPayoff::with_uniform_references(base, 0.5, 0.5).unwrap();
        let (a, b) = mne_regularized(&r, 1e-10, 100_000).unwrap();
        assert!(ni_value(&r, &a, &b).unwrap() < 1e-8);
    }

    #[test]
    fn tau2_bound_examples() {
        let p = pennies();
        let g = Geometries::uniform_entropy(&p);
        let c = analytic_constants(&p, GeometryKind::RelativeEntropy).unwrap();
        let (u, v) = uniform_start(&p);
        let t = run(&p, &g, &u, &v, &SolverConfig::new(Scheme::Simultaneous, 0.05, 100).record_every(1)).unwrap();
        let r = check_tau2_bound(&t, &c);
        assert!(r.passed());
        assert_eq!(r.detail_value("max_ratio"), Some(0.0));

        let nu0 = m(p.grid_nu(), &[0.8, 0.2]);
        let mu0 = m(p.grid_mu(), &[0.3, 0.7]);
        for scheme in [Scheme::Simultaneous, Scheme::Sequential] {
            let t = run(&p, &g, &nu0, &mu0, &SolverConfig::new(scheme, 0.05, 1000).record_every(10)).unwrap();
            let r = check_tau2_bound(&t, &c);
            assert!(r.passed(), "{r}");
            assert!(r.detail_value("max_ratio").unwrap() <= 1.0);
        }

        let reg = RegularizedBilinearPayoff::with_uniform_references(pennies(), 0.5, 0.5).unwrap();
        let cr = analytic_constants(&reg, GeometryKind::RelativeEntropy).unwrap();
        let t = run(&reg, &g, &nu0, &mu0, &SolverConfig::new(Scheme::Simultaneous, 1.5, 5)).unwrap();
        assert!(check_tau2_bound(&t, &cr).is_skipped());
    }

    #[test]
    fn commutator_scaling_examples() {
        let p = pennies();
        let g = Geometries::uniform_entropy(&p);
        let (u, v) = uniform_start(&p);
        let taus = [0.4, 0.2, 0.1, 0.05];
        let s = bregman_commutator_scaling(&p, &g, &u, &v, Scheme::Sequential, &taus, 50).unwrap();
        assert!(s.exact_symmetry && s.fit.is_none());

        let nu0 = m(p.grid_nu(), &[0.8, 0.2]);
        let mu0 = m(p.grid_mu(), &[0.3, 0.7]);
        let s = bregman_commutator_scaling(&p, &g, &nu0, &mu0, Scheme::Sequential, &taus, 500).unwrap();
        assert!(s.fit.unwrap().slope >= 2.7);

        let quad = Geometries::new(
            BregmanGeometry::separable(Phi::Tsallis { q: 2.0 }, u.clone()).unwrap(),
            BregmanGeometry::separable(Phi::Tsallis { q: 2.0 }, v.clone()).unwrap(),
        );
        let s = bregman_commutator_scaling(&p, &quad, &nu0, &mu0, Scheme::Sequential, &taus, 50).unwrap();
        assert!(s.exact_symmetry, "{:?}", s.points);
        assert!(bregman_commutator_scaling(&p, &g, &nu0, &mu0, Scheme::Sequential, &[0.1, 0.2], 5).is_err());
        assert!(bregman_commutator_scaling(&p, &g, &nu0, &mu0, Scheme::Sequential, &[0.1, 0.2, 0.3], 5).is_err());
    }

    #[test]
    fn rate_fit_examples() {
        let ns = [100.0, 400.0, 1600.0, 6400.0];
        for (exp, expect) in [(0.5, -0.5), (2.0 / 3.0, -2.0 / 3.0), (1.0, -1.0)] {
            let pts: Vec<(f64, f64)> = ns.iter().map(|n: &f64| (*n, 3.0 / n.powf(exp))).collect();
            let fit = rate_fit(&pts).unwrap();
            assert!((fit.slope - expect).abs() < 1e-12);
            assert!((fit.intercept - 3f64.ln()).abs() < 1e-10);
            assert!(fit.residual_norm < 1e-10);
        }
        let pts = [(1.0, 1.0), (2.0, 0.5), (4.0, 0.0), (8.0, 0.125)];
        let fit = rate_fit(&pts).unwrap();
        assert_eq!(fit.excluded, vec![(4.0, 0.0)]);
        assert!((fit.slope + 1.0).abs() < 1e-12);
        assert!(rate_fit(&pts[..2]).is_err());
    }

    #[test]
    fn quadratic_growth_examples() {
        let r = RegularizedBilinearPayoff::with_uniform_references(pennies(), 0.5, 0.5).unwrap();
        let (a, b) = mne_regularized(&r, 1e-12, 10_000).unwrap();
        let report = quadratic_growth_check(&r, (&a, &b), 1000, &mut rng()).unwrap();
        assert!(report.passed(), "{report}");
        assert_eq!(report.samples, 1001);
    }

    #[test]
    fn finite_difference_examples() {
        let mut rng = rng();
        let p = pennies();
        let nu = m(p.grid_nu(), &[0.8, 0.2]);
        let mu = m(p.grid_mu(), &[0.3, 0.7]);
        let r = finite_difference_check(&p, &nu, &mu, 5, &[1.0, 0.5, 0.1, 1e-3], &mut rng).unwrap();
        assert!(r.passed(), "{r}");
        let reg = RegularizedBilinearPayoff::with_uniform_references(pennies(), 0.5, 0.5).unwrap();
        let r = finite_difference_check(&reg, &nu, &mu, 5, &[0.04, 0.02, 0.01, 0.005], &mut rng).unwrap();
        assert!(r.passed(), "{r}");
        assert!(finite_difference_check(&reg, &nu, &mu, 2, &[0.04, 0.03], &mut rng).is_err());
    }

    #[test]
    fn property_checks_pass() {
        let mut rng = rng();
        assert!(pinsker_check(500, 30, &mut rng).unwrap().passed());
        let tp = three_point_check(200, 20, &mut rng).unwrap();
        assert!(tp.passed(), "{tp}");
        let reg = RegularizedBilinearPayoff::with_uniform_references(pennies(), 0.5, 0.5).unwrap();
        assert!(convexity_concavity_check(&reg, 200, &mut rng).unwrap().passed());
        let h = BregmanGeometry::uniform_entropy(StrategyGrid::uniform_1d(0.0, 1.0, 20).unwrap().into_shared());
        let lr = legendre_round_trip_check(&h, 100, &mut rng).unwrap();
        assert!(lr.passed(), "{lr}");
        let dl = dual_lipschitz_check(&h, 200, &mut rng).unwrap();
        assert!(dl.passed(), "{dl}");
    }

    #[test]
    fn run_based_checks() {
        let p = pennies();
        let g = Geometries::uniform_entropy(&p);
        let c = analytic_constants(&p, GeometryKind::RelativeEntropy).unwrap();
        let nu0 = m(p.grid_nu(), &[0.8, 0.2]);
        let mu0 = m(p.grid_mu(), &[0.3, 0.7]);
        for scheme in Scheme::ALL {
            let cfg = SolverConfig::new(scheme, 0.1, 200);
            let r = first_order_conditions_check(&p, &p, &g, &nu0, &mu0, &cfg).unwrap();
            assert!(r.passed(), "{scheme}: {r}");
            let r = jensen_check(&p, &g, &nu0, &mu0, &cfg).unwrap();
            assert!(r.passed(), "{scheme}: {r}");
        }
        let cfg = SolverConfig::new(Scheme::Sequential, 0.1, 50);
        let r = first_order_conditions_check(&SignFlipped(pennies()), &p, &g, &nu0, &mu0, &cfg).unwrap();
        assert!(r.failed());
        let r = competitive_chain_check(&p, &g, &nu0, &mu0, &SolverConfig::new(Scheme::Simultaneous, 0.1, 200), &c).unwrap();
        assert!(r.passed(), "{r}");

        let t = run(&p, &g, &nu0, &mu0, &SolverConfig::new(Scheme::Simultaneous, 0.1, 100).record_every(1)).unwrap();
        let pairs: Vec<_> = t.records.iter().map(|r| (r.nu.clone(), r.nu_next.clone())).collect();
        let r = primal_dual_identity_check(&g.nu, &pairs).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn rate_bounds_hold_on_pennies() {
        let p = pennies();
        let g = Geometries::uniform_entropy(&p);
        let c = analytic_constants(&p, GeometryKind::RelativeEntropy).unwrap();
        let (u, v) = (m(p.grid_nu(), &[0.8, 0.2]), m(p.grid_mu(), &[0.3, 0.7]));
        let d0 = d0_bound(&g, &u, &v).unwrap();
        for n in [10, 100, 1000] {
            let tau = crate::solvers::theoretical_stepsize(Scheme::Simultaneous, &c, d0, n, 0.0, 1.0).unwrap();
            let t = run(&p, &g, &u, &v, &SolverConfig::new(Scheme::Simultaneous, tau, n)).unwrap();
            assert!(ni_value(&p, &t.nu_avg, &t.mu_avg).unwrap() <= simultaneous_bound(&c, d0, n));
            let t = run(&p, &g, &u, &v, &SolverConfig::new(Scheme::Implicit, 0.5, n)).unwrap();
            assert!(ni_value(&p, &t.nu_avg, &t.mu_avg).unwrap() <= implicit_bound(d0, n, 0.5));
        }
        // With L = 0 the general bound at the optimal step equals the closed form.
        let tau = crate::solvers::theoretical_stepsize(Scheme::Sequential, &c, d0, 1000, 6.0, 1.0).unwrap();
        let general = sequential_bound(&c, d0, 1000, tau, 6.0);
        let closed = sequential_bound_closed_form(&c, d0, 1000, 6.0);
        assert!(general <= closed * (1.0 + 1e-12));
        let n23 = 1000f64.powf(2.0 / 3.0);
        assert!((closed - general - (c.m_bound / n23 - c.m_bound / 1000.0)).abs() < 1e-12);
    }

    #[test]
    fn report_formatting() {
        let r = bound_check("demo", "x ≤ y", &[("a".into(), 1.0, 2.0), ("b".into(), 3.0, 2.0)], 0.0);
        assert!(r.failed());
        assert_eq!(r.violations, 1);
        let text = r.to_string();
        assert!(text.contains("status=fail"));
        assert!(text.contains("detail.a.ratio="));
        let s = CheckReport::skipped("x", "y", "because");
        assert!(s.to_string().contains("reason=because"));
    }
}
