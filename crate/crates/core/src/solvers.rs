//! Simultaneous, sequential and implicit mirror descent-ascent.
//!
//! Each run keeps the current pair of iterates, the time averages prescribed
//! by the scheme's convergence guarantee, and a thinned history of
//! [`StepRecord`]s. Per-step Bregman statistics are folded into a
//! [`StepSummary`] at every step, so bounds can be checked over the whole run
//! without storing it.
//!
//! Averaging conventions:
//!
//! | scheme       | ν average            | μ average            |
//! |--------------|----------------------|----------------------|
//! | simultaneous | `ν^0 .. ν^{N-1}`     | `μ^0 .. μ^{N-1}`     |
//! | sequential   | `ν^1 .. ν^N`         | `μ^0 .. μ^{N-1}`     |
//! | implicit     | `ν^1 .. ν^N`         | `μ^1 .. μ^N`         |

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::error::{MdaError, Result};
use crate::geometry::{BregmanGeometry, Direction, GeometryKind};
use crate::measures::{check_grid, convex_combination, running_average, tv_distance, DiscreteMeasure, GridFunction};
use crate::payoffs::{analytic_constants, Payoff, PayoffConstants};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    Simultaneous,
    Sequential,
    Implicit,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Simultaneous, Scheme::Sequential, Scheme::Implicit];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Simultaneous => "simultaneous",
            Scheme::Sequential => "sequential",
            Scheme::Implicit => "implicit",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = MdaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simultaneous" => Ok(Scheme::Simultaneous),
            "sequential" => Ok(Scheme::Sequential),
            "implicit" => Ok(Scheme::Implicit),
            other => Err(MdaError::InvalidArgument(format!("unknown scheme '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub scheme: Scheme,
    pub tau: f64,
    pub iterations: usize,
    pub record_every: usize,
    /// TV tolerance of the implicit inner fixed point.
    pub implicit_tol: f64,
    pub implicit_max_inner: usize,
}

impl SolverConfig {
    pub fn new(scheme: Scheme, tau: f64, iterations: usize) -> Self {
        Self {
            scheme,
            tau,
            iterations,
            record_every: iterations.max(1),
            implicit_tol: 1e-12,
            implicit_max_inner: 1_000,
        }
    }

    pub fn record_every(mut self, every: usize) -> Self {
        self.record_every = every;
        self
    }

    pub fn implicit(mut self, tol: f64, max_inner: usize) -> Self {
        self.implicit_tol = tol;
        self.implicit_max_inner = max_inner;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(MdaError::InvalidArgument(format!(
                "step size must be positive and finite, got {}",
                self.tau
            )));
        }
        if self.iterations == 0 {
            return Err(MdaError::InvalidArgument("iteration count must be at least 1".into()));
        }
        if self.record_every == 0 {
            return Err(MdaError::InvalidArgument("record_every must be at least 1".into()));
        }
        if !(self.implicit_tol > 0.0) {
            return Err(MdaError::InvalidArgument("implicit tolerance must be positive".into()));
        }
        if self.implicit_max_inner == 0 {
            return Err(MdaError::InvalidArgument("implicit_max_inner must be at least 1".into()));
        }
        Ok(())
    }
}

/// One geometry per player. Both players may share a grid.
#[derive(Debug, Clone)]
pub struct Geometries {
    pub nu: BregmanGeometry,
    pub mu: BregmanGeometry,
}

impl Geometries {
    pub fn new(nu: BregmanGeometry, mu: BregmanGeometry) -> Self {
        Self { nu, mu }
    }

    /// Relative entropy to the uniform measure on each player's grid.
    pub fn uniform_entropy<P: Payoff + ?Sized>(payoff: &P) -> Self {
        Self {
            nu: BregmanGeometry::uniform_entropy(payoff.grid_nu().clone()),
            mu: BregmanGeometry::uniform_entropy(payoff.grid_mu().clone()),
        }
    }

    /// The common geometry kind, if both players use the same one.
    pub fn kind(&self) -> Option<GeometryKind> {
        (self.nu.kind() == self.mu.kind()).then(|| self.nu.kind())
    }

    pub fn is_entropy(&self) -> bool {
        self.nu.is_entropy() && self.mu.is_entropy()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// `n`; the record describes the transition `n → n+1`.
    pub index: usize,
    pub nu: DiscreteMeasure,
    pub mu: DiscreteMeasure,
    pub nu_next: DiscreteMeasure,
    pub mu_next: DiscreteMeasure,
    /// Scheme averages after folding in step `n`.
    pub nu_avg: DiscreteMeasure,
    pub mu_avg: DiscreteMeasure,
    /// `D_h(ν^{n+1}, ν^n)`.
    pub dh_nu_forward: f64,
    /// `D_h(ν^n, ν^{n+1})`.
    pub dh_nu_backward: f64,
    pub dh_mu_forward: f64,
    pub dh_mu_backward: f64,
    /// `F(ν^n, μ^n)`.
    pub payoff: f64,
    /// Inner fixed-point residuals (implicit scheme only).
    pub inner_residuals: Vec<f64>,
}

impl StepRecord {
    /// `D_h(ν^n,ν^{n+1}) - D_h(ν^{n+1},ν^n) + D_h(μ^n,μ^{n+1}) - D_h(μ^{n+1},μ^n)`.
    pub fn commutator(&self) -> f64 {
        (self.dh_nu_backward - self.dh_nu_forward) + (self.dh_mu_backward - self.dh_mu_forward)
    }
}

/// Statistics accumulated over every step of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSummary {
    pub steps: usize,
    pub max_dh_nu_forward: f64,
    pub max_dh_mu_forward: f64,
    pub max_commutator: f64,
    pub min_commutator: f64,
    pub max_inner_iterations: usize,
    pub total_inner_iterations: usize,
}

impl Default for StepSummary {
    fn default() -> Self {
        Self {
            steps: 0,
            max_dh_nu_forward: 0.0,
            max_dh_mu_forward: 0.0,
            max_commutator: f64::NEG_INFINITY,
            min_commutator: f64::INFINITY,
            max_inner_iterations: 0,
            total_inner_iterations: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IterateTrace {
    pub scheme: Scheme,
    pub tau: f64,
    pub iterations: usize,
    pub records: Vec<StepRecord>,
    pub nu_avg: DiscreteMeasure,
    pub mu_avg: DiscreteMeasure,
    pub nu_last: DiscreteMeasure,
    pub mu_last: DiscreteMeasure,
    pub summary: StepSummary,
    pub warnings: Vec<String>,
    pub wall_clock: Duration,
}

impl IterateTrace {
    /// Equality of everything except wall-clock time.
    pub fn same_iterates(&self, other: &Self) -> bool {
        self.scheme == other.scheme
            && self.tau.to_bits() == other.tau.to_bits()
            && self.iterations == other.iterations
            && self.records == other.records
            && self.nu_avg == other.nu_avg
            && self.mu_avg == other.mu_avg
            && self.nu_last == other.nu_last
            && self.mu_last == other.mu_last
            && self.summary == other.summary
    }
}

/// The transition `n → n+1` as seen by an observer.
pub struct StepView<'a> {
    pub index: usize,
    pub nu: &'a DiscreteMeasure,
    pub mu: &'a DiscreteMeasure,
    pub nu_next: &'a DiscreteMeasure,
    pub mu_next: &'a DiscreteMeasure,
    /// Scheme averages after folding in this step.
    pub nu_avg: &'a DiscreteMeasure,
    pub mu_avg: &'a DiscreteMeasure,
    /// The (unshifted) flat derivatives that drove this step.
    pub gradient_nu: &'a GridFunction,
    pub gradient_mu: &'a GridFunction,
    pub tau: f64,
}

/// Hook invoked after every step.
pub trait StepObserver {
    fn observe(&mut self, step: &StepView<'_>) -> Result<()>;
}

impl<F> StepObserver for F
where
    F: FnMut(&StepView<'_>) -> Result<()>,
{
    fn observe(&mut self, step: &StepView<'_>) -> Result<()> {
        self(step)
    }
}

struct NoObserver;

impl StepObserver for NoObserver {
    fn observe(&mut self, _: &StepView<'_>) -> Result<()> {
        Ok(())
    }
}

pub fn run_simultaneous<P: Payoff + ?Sized>(
    payoff: &P,
    geometries: &Geometries,
    nu0: &DiscreteMeasure,
    mu0: &DiscreteMeasure,
    cfg: &SolverConfig,
) -> Result<IterateTrace> {
    run_scheme(payoff, geometries, nu0, mu0, cfg, Scheme::Simultaneous, &mut NoObserver)
}

pub fn run_sequential<P: Payoff + ?Sized>(
    payoff: &P,
    geometries: &Geometries,
    nu0: &DiscreteMeasure,
    mu0: &DiscreteMeasure,
    cfg: &SolverConfig,
) -> Result<IterateTrace> {
    run_scheme(payoff, geometries, nu0, mu0, cfg, Scheme::Sequential, &mut NoObserver)
}

pub fn run_implicit<P: Payoff + ?Sized>(
    payoff: &P,
    geometries: &Geometries,
    nu0: &DiscreteMeasure,
    mu0: &DiscreteMeasure,
    cfg: &SolverConfig,
) -> Result<IterateTrace> {
    run_scheme(payoff, geometries, nu0, mu0, cfg, Scheme::Implicit, &mut NoObserver)
}

/// Runs `cfg.scheme`.
pub fn run<P: Payoff + ?Sized>(
    payoff: &P,
    geometries: &Geometries,
    nu0: &DiscreteMeasure,
    mu0: &DiscreteMeasure,
    cfg: &SolverConfig,
) -> Result<IterateTrace> {
    run_scheme(payoff, geometries, nu0, mu0, cfg, cfg.scheme, &mut NoObserver)
}

/// Runs `cfg.scheme`, calling `observer` after every step.
pub fn run_observed<P: Payoff + ?Sized, O: StepObserver>(
    payoff: &P,
    geometries: &Geometries,
    nu0: &DiscreteMeasure,
    mu0: &DiscreteMeasure,
    cfg: &SolverConfig,
    observer: &mut O,
) -> Result<IterateTrace> {
    run_scheme(payoff, geometries, nu0, mu0, cfg, cfg.scheme, observer)
}

struct Transition {
    nu_next: DiscreteMeasure,
    mu_next: DiscreteMeasure,
    gradient_nu: GridFunction,
    gradient_mu: GridFunction,
    inner_residuals: Vec<f64>,
}

fn explicit_step<P: Payoff + ?Sized>(
    payoff: &P,
    geometries: &Geometries,
    nu: &DiscreteMeasure,
    mu: &DiscreteMeasure,
    tau: f64,
    sequential: bool,
) -> Result<Transition> {
    let gradient_nu = payoff.flat_derivative_nu_raw(nu, mu)?;
    let nu_next = geometries.nu.prox_step(nu, &gradient_nu, tau, Direction::Descent)?;
    let gradient_mu = if sequential {
        payoff.flat_derivative_mu_raw(&nu_next, mu)?
    } else {
        payoff.flat_derivative_mu_raw(nu, mu)?
    };
    let mu_next = geometries.mu.prox_step(mu, &gradient_mu, tau, Direction::Ascent)?;
    Ok(Transition {
        nu_next,
        mu_next,
        gradient_nu,
        gradient_mu,
        inner_residuals: Vec::new(),
    })
}

const DAMPING_TRIGGER: usize = 5;
const DAMPING_FACTOR: f64 = 0.5;
const MIN_RELAXATION: f64 = 1e-3;

/// Solves the coupled implicit step by Picard iteration on `μ^{n+1}`.
/// Whenever the residual fails to decrease for five consecutive inner steps
/// the relaxation weight on the new candidate is halved.
fn implicit_step<P: Payoff + ?Sized>(
    payoff: &P,
    geometries: &Geometries,
    nu: &DiscreteMeasure,
    mu: &DiscreteMeasure,
    cfg: &SolverConfig,
) -> Result<Transition> {
    let mut mu_guess = mu.clone();
    let mut nu_prev = nu.clone();
    let mut residuals = Vec::new();
    let mut relaxation = 1.0;
    let mut stalls = 0;
    let mut last = f64::INFINITY;
    for _ in 0..cfg.implicit_max_inner {
        let gradient_nu = payoff.flat_derivative_nu_raw(nu, &mu_guess)?;
        let nu_cand = geometries.nu.prox_step(nu, &gradient_nu, cfg.tau, Direction::Descent)?;
        let gradient_mu = payoff.flat_derivative_mu_raw(&nu_cand, mu)?;
        let mu_cand = geometries.mu.prox_step(mu, &gradient_mu, cfg.tau, Direction::Ascent)?;
        let residual = tv_distance(&nu_cand, &nu_prev)?.max(tv_distance(&mu_cand, &mu_guess)?);
        residuals.push(residual);
        if residual < cfg.implicit_tol {
            return Ok(Transition {
                nu_next: nu_cand,
                mu_next: mu_cand,
                gradient_nu,
                gradient_mu,
                inner_residuals: residuals,
            });
        }
        if residual >= last {
            stalls += 1;
        } else {
            stalls = 0;
        }
        if stalls >= DAMPING_TRIGGER {
            relaxation = (relaxation * DAMPING_FACTOR).max(MIN_RELAXATION);
            stalls = 0;
        }
        last = residual;
        mu_guess = if relaxation < 1.0 {
            convex_combination(&mu_guess, &mu_cand, relaxation)?
        } else {
            mu_cand
        };
        nu_prev = nu_cand;
    }
    Err(MdaError::NonConvergence {
        operation: "implicit inner fixed point",
        iterations: cfg.implicit_max_inner,
        residual: last,
    })
}

struct Averager {
    avg: Option<DiscreteMeasure>,
    count: usize,
}

impl Averager {
    fn new() -> Self {
        Self { avg: None, count: 0 }
    }

    fn push(&mut self, m: &DiscreteMeasure) -> Result<()> {
        self.count += 1;
        self.avg = Some(match &self.avg {
            None => m.clone(),
            Some(a) => running_average(a, m, self.count)?,
        });
        Ok(())
    }

    fn get(&self) -> &DiscreteMeasure {
        self.avg.as_ref().expect("at least one point averaged")
    }
}

fn smoothness_warning<P: Payoff + ?Sized>(payoff: &P, geometries: &Geometries, scheme: Scheme, tau: f64) -> Option<String> {
    let kind = geometries.kind()?;
    let constants = analytic_constants(payoff, kind).ok()?;
    let limit = match scheme {
        Scheme::Implicit => 1.0,
        _ => 0.5,
    };
    let product = tau * constants.l();
    (product > limit).then(|| {
        format!("τ·L = {product:.4} exceeds {limit}; the {scheme} convergence guarantee does not apply")
    })
}

fn run_scheme<P: Payoff + ?Sized, O: StepObserver>(
    payoff: &P,
    geometries: &Geometries,
    nu0: &DiscreteMeasure,
    mu0: &DiscreteMeasure,
    cfg: &SolverConfig,
    scheme: Scheme,
    observer: &mut O,
) -> Result<IterateTrace> {
    cfg.validate()?;
    check_grid(payoff.grid_nu(), nu0.grid(), "initial ν")?;
    check_grid(payoff.grid_mu(), mu0.grid(), "initial μ")?;
    check_grid(payoff.grid_nu(), geometries.nu.grid(), "ν geometry")?;
    check_grid(payoff.grid_mu(), geometries.mu.grid(), "μ geometry")?;
    if !nu0.is_interior() || !mu0.is_interior() {
        return Err(MdaError::Domain("initial measures must be interior".into()));
    }

    let started = Instant::now();
    let mut warnings = Vec::new();
    if let Some(w) = smoothness_warning(payoff, geometries, scheme, cfg.tau) {
        warnings.push(w);
    }

    let mut nu = nu0.clone();
    let mut mu = mu0.clone();
    let mut nu_avg = Averager::new();
    let mut mu_avg = Averager::new();
    let mut summary = StepSummary::default();
    let mut records = Vec::new();

    for n in 0..cfg.iterations {
        let t = match scheme {
            Scheme::Simultaneous => explicit_step(payoff, geometries, &nu, &mu, cfg.tau, false)?,
            Scheme::Sequential => explicit_step(payoff, geometries, &nu, &mu, cfg.tau, true)?,
            Scheme::Implicit => implicit_step(payoff, geometries, &nu, &mu, cfg)?,
        };
        match scheme {
            Scheme::Simultaneous => {
                nu_avg.push(&nu)?;
                mu_avg.push(&mu)?;
            }
            Scheme::Sequential => {
                nu_avg.push(&t.nu_next)?;
                mu_avg.push(&mu)?;
            }
            Scheme::Implicit => {
                nu_avg.push(&t.nu_next)?;
                mu_avg.push(&t.mu_next)?;
            }
        }

        let dh_nu_forward = geometries.nu.bregman_divergence(&t.nu_next, &nu)?;
        let dh_nu_backward = geometries.nu.bregman_divergence(&nu, &t.nu_next)?;
        let dh_mu_forward = geometries.mu.bregman_divergence(&t.mu_next, &mu)?;
        let dh_mu_backward = geometries.mu.bregman_divergence(&mu, &t.mu_next)?;
        let commutator = (dh_nu_backward - dh_nu_forward) + (dh_mu_backward - dh_mu_forward);
        summary.steps += 1;
        summary.max_dh_nu_forward = summary.max_dh_nu_forward.max(dh_nu_forward);
        summary.max_dh_mu_forward = summary.max_dh_mu_forward.max(dh_mu_forward);
        summary.max_commutator = summary.max_commutator.max(commutator);
        summary.min_commutator = summary.min_commutator.min(commutator);
        summary.max_inner_iterations = summary.max_inner_iterations.max(t.inner_residuals.len());
        summary.total_inner_iterations += t.inner_residuals.len();

        observer.observe(&StepView {
            index: n,
            nu: &nu,
            mu: &mu,
            nu_next: &t.nu_next,
            mu_next: &t.mu_next,
            nu_avg: nu_avg.get(),
            mu_avg: mu_avg.get(),
            gradient_nu: &t.gradient_nu,
            gradient_mu: &t.gradient_mu,
            tau: cfg.tau,
        })?;

        if n % cfg.record_every == 0 || n + 1 == cfg.iterations {
            records.push(StepRecord {
                index: n,
                payoff: payoff.value(&nu, &mu)?,
                nu: nu.clone(),
                mu: mu.clone(),
                nu_next: t.nu_next.clone(),
                mu_next: t.mu_next.clone(),
                nu_avg: nu_avg.get().clone(),
                mu_avg: mu_avg.get().clone(),
                dh_nu_forward,
                dh_nu_backward,
                dh_mu_forward,
                dh_mu_backward,
                inner_residuals: t.inner_residuals,
            });
        }
        nu = t.nu_next;
        mu = t.mu_next;
    }

    Ok(IterateTrace {
        scheme,
        tau: cfg.tau,
        iterations: cfg.iterations,
        records,
        nu_avg: nu_avg.get().clone(),
        mu_avg: mu_avg.get().clone(),
        nu_last: nu,
        mu_last: mu,
        summary,
        warnings,
        wall_clock: started.elapsed(),
    })
}

/// Step size minimizing the scheme's convergence bound.
///
/// * simultaneous: `½·√(D0 / (L_F N))`;
/// * sequential: `(D0 / (N (κ L_{h*} + 2 L_F L)))^{1/3}`, falling back to the
///   simultaneous rule when the denominator vanishes;
/// * implicit: `min(1/L, τ_max)`.
///
/// Degenerate cases (zero Lipschitz constants) return `tau_max`.
pub fn theoretical_stepsize(
    scheme: Scheme,
    constants: &PayoffConstants,
    d0: f64,
    iterations: usize,
    l_hstar: f64,
    tau_max: f64,
) -> Result<f64> {
    if !(d0 > 0.0) || !d0.is_finite() {
        return Err(MdaError::InvalidArgument(format!("D0 must be positive and finite, got {d0}")));
    }
    if iterations == 0 {
        return Err(MdaError::InvalidArgument("iteration count must be at least 1".into()));
    }
    if !(tau_max > 0.0) {
        return Err(MdaError::InvalidArgument("τ_max must be positive".into()));
    }
    let n = iterations as f64;
    let simultaneous = || {
        if constants.l_f > 0.0 {
            0.5 * (d0 / (constants.l_f * n)).sqrt()
        } else {
            tau_max
        }
    };
    let tau = match scheme {
        Scheme::Simultaneous => simultaneous(),
        Scheme::Sequential => {
            let denom = constants.kappa * l_hstar + 2.0 * constants.l_f * constants.l();
            if denom > 0.0 && denom.is_finite() {
                (d0 / (n * denom)).cbrt()
            } else {
                simultaneous()
            }
        }
        Scheme::Implicit => {
            let l = constants.l();
            if l > 0.0 {
                (1.0 / l).min(tau_max)
            } else {
                tau_max
            }
        }
    };
    Ok(tau)
}

/// `max_i log(1/ν0_i) + max_j log(1/μ0_j)`: the supremum of
/// `KL(·, ν0) + KL(·, μ0)` over both simplices, attained at vertices.
pub fn d0_bound(geometries: &Geometries, nu0: &DiscreteMeasure, mu0: &DiscreteMeasure) -> Result<f64> {
    if !geometries.is_entropy() {
        return Err(MdaError::Unsupported("D0 bound is derived for relative entropy".into()));
    }
    check_grid(geometries.nu.grid(), nu0.grid(), "D0 (ν)")?;
    check_grid(geometries.mu.grid(), mu0.grid(), "D0 (μ)")?;
    let worst = |m: &DiscreteMeasure| -> Result<f64> {
        let min = m.min_weight();
        if min <= 0.0 {
            return Err(MdaError::Domain("D0 is infinite for a start with a zero-mass point".into()));
        }
        Ok(-min.ln())
    };
    Ok(worst(nu0)? + worst(mu0)?)
}

/// Convenience: both players start at their uniform measure.
pub fn uniform_start<P: Payoff + ?Sized>(payoff: &P) -> (DiscreteMeasure, DiscreteMeasure) {
    (
        DiscreteMeasure::uniform(Arc::clone(payoff.grid_nu())),
        DiscreteMeasure::uniform(Arc::clone(payoff.grid_mu())),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::StrategyGrid;
    use crate::payoffs::{BilinearPayoff, DenseMatrix, RegularizedBilinearPayoff};

    fn pennies() -> (BilinearPayoff, Geometries) {
        let p = BilinearPayoff::matching_pennies();
        let g = Geometries::uniform_entropy(&p);
        (p, g)
    }

    fn m(p: &BilinearPayoff, w: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::new(p.grid_nu().clone(), w.to_vec()).unwrap()
    }

    #[test]
    fn stationary_at_equilibrium() {
        let (p, g) = pennies();
        let (u, v) = uniform_start(&p);
        for scheme in Scheme::ALL {
            let cfg = SolverConfig::new(scheme, 0.3, 20).record_every(1);
            let t = run(&p, &g, &u, &v, &cfg).unwrap();
            assert_eq!(t.nu_last.weights(), u.weights());
            assert_eq!(t.mu_last.weights(), v.weights());
            assert_eq!(t.summary.max_dh_nu_forward, 0.0);
            if scheme == Scheme::Implicit {
                assert!(t.records.iter().all(|r| r.inner_residuals.len() == 1));
            }
        }
    }

    #[test]
    fn one_simultaneous_step() {
        let (p, g) = pennies();
        let nu0 = m(&p, &[0.8, 0.2]);
        let mu0 = DiscreteMeasure::uniform(p.grid_mu().clone());
        let t = run_simultaneous(&p, &g, &nu0, &mu0, &SolverConfig::new(Scheme::Simultaneous, 0.5, 1)).unwrap();
        for (a, b) in t.nu_last.weights().iter().zip(nu0.weights()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((t.mu_last.weights()[0] - 0.645656).abs() < 1e-6);
        assert!((t.mu_last.weights()[1] - 0.354344).abs() < 1e-6);
        // Averages over n = 0 only.
        assert_eq!(t.nu_avg.weights(), nu0.weights());
    }

    #[test]
    fn one_sequential_step() {
        let (p, g) = pennies();
        let nu0 = m(&p, &[0.8, 0.2]);
        let mu0 = m(&p, &[0.3, 0.7]);
        let t = run_sequential(&p, &g, &nu0, &mu0, &SolverConfig::new(Scheme::Sequential, 0.5, 1)).unwrap();
        // Hand computation: ν gradient (-0.4, 0.4), then μ gradient (2ν1_0 - 1)(1, -1).
        let a = 0.8 * (0.2f64).exp();
        let b = 0.2 * (-0.2f64).exp();
        let nu1 = a / (a + b);
        let s = 2.0 * nu1 - 1.0;
        let c = 0.3 * (0.5 * s).exp();
        let d = 0.7 * (-0.5 * s).exp();
        let mu1 = c / (c + d);
        assert!((t.nu_last.weights()[0] - nu1).abs() < 1e-14);
        assert!((t.mu_last.weights()[0] - mu1).abs() < 1e-14);
        assert!((nu1 - 0.856465).abs() < 1e-5);
        assert!((mu1 - 0.466459).abs() < 1e-5);
        assert_eq!(t.nu_avg.weights(), t.nu_last.weights());
        assert_eq!(t.mu_avg.weights(), mu0.weights());
    }

    #[test]
    fn tiny_step_barely_moves() {
        let (p, g) = pennies();
        let nu0 = m(&p, &[0.8, 0.2]);
        let mu0 = m(&p, &[0.3, 0.7]);
        let tau = 1e-9;
        let t = run_simultaneous(&p, &g, &nu0, &mu0, &SolverConfig::new(Scheme::Simultaneous, tau, 1)).unwrap();
        let moved = tv_distance(&t.nu_last, &nu0).unwrap() + tv_distance(&t.mu_last, &mu0).unwrap();
        assert!(moved / tau < 1.0 + 1e-6, "{}", moved / tau);
        assert!(moved < 1e-8);
    }

    #[test]
    fn sequential_equals_simultaneous_without_coupling() {
        // F depends on μ only: the fresh ν does not change the μ gradient.
        let grid = StrategyGrid::uniform_1d(0.0, 1.0, 3).unwrap().into_shared();
        let a = DenseMatrix::from_rows(&vec![vec![0.1, -0.5, 0.9]; 3]).unwrap();
        let p = BilinearPayoff::new(a, grid.clone(), grid.clone()).unwrap();
        let g = Geometries::uniform_entropy(&p);
        let nu0 = DiscreteMeasure::new(grid.clone(), vec![0.2, 0.3, 0.5]).unwrap();
        let mu0 = DiscreteMeasure::new(grid, vec![0.6, 0.3, 0.1]).unwrap();
        let a = run_simultaneous(&p, &g, &nu0, &mu0, &SolverConfig::new(Scheme::Simultaneous, 0.2, 30)).unwrap();
        let b = run_sequential(&p, &g, &nu0, &mu0, &SolverConfig::new(Scheme::Sequential, 0.2, 30)).unwrap();
        for (x, y) in a.mu_last.weights().iter().zip(b.mu_last.weights()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn implicit_inner_residuals_contract() {
        let (p, g) = pennies();
        let nu0 = m(&p, &[0.8, 0.2]);
        let mu0 = m(&p, &[0.3, 0.7]);
        let cfg = SolverConfig::new(Scheme::Implicit, 0.1, 5).record_every(1).implicit(1e-13, 200);
        let t = run_implicit(&p, &g, &nu0, &mu0, &cfg).unwrap();
        for r in &t.records {
            let res = &r.inner_residuals;
            assert!(res.len() > 1);
            for w in res.windows(2) {
                assert!(w[1] < w[0], "{res:?}");
            }
        }
        // No smoothness restriction on τ for a bilinear game.
        let cfg = SolverConfig::new(Scheme::Implicit, 1.5, 3).implicit(1e-10, 5_000);
        let t = run_implicit(&p, &g, &nu0, &mu0, &cfg).unwrap();
        assert!(t.warnings.is_empty());
    }

    #[test]
    fn implicit_reports_non_convergence() {
        let (p, g) = pennies();
        let nu0 = m(&p, &[0.8, 0.2]);
        let mu0 = m(&p, &[0.3, 0.7]);
        let cfg = SolverConfig::new(Scheme::Implicit, 0.5, 3).implicit(1e-15, 2);
        match run_implicit(&p, &g, &nu0, &mu0, &cfg) {
            Err(MdaError::NonConvergence { residual, .. }) => assert!(residual > 0.0),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let (p, g) = pennies();
        let (u, v) = uniform_start(&p);
        assert!(run(&p, &g, &u, &v, &SolverConfig::new(Scheme::Simultaneous, 0.0, 3)).is_err());
        assert!(run(&p, &g, &u, &v, &SolverConfig::new(Scheme::Simultaneous, 0.1, 0)).is_err());
        let d = DiscreteMeasure::dirac(p.grid_nu().clone(), 0).unwrap();
        assert!(matches!(
            run(&p, &g, &d, &v, &SolverConfig::new(Scheme::Simultaneous, 0.1, 3)),
            Err(MdaError::Domain(_))
        ));
    }

    #[test]
    fn warns_on_large_steps_for_smooth_games() {
        let r = RegularizedBilinearPayoff::with_uniform_references(BilinearPayoff::matching_pennies(), 0.5, 0.5)
            .unwrap();
        let g = Geometries::uniform_entropy(&r);
        let (u, v) = uniform_start(&r);
        let t = run(&r, &g, &u, &v, &SolverConfig::new(Scheme::Simultaneous, 2.0, 2)).unwrap();
        assert_eq!(t.warnings.len(), 1);
        let t = run(&r, &g, &u, &v, &SolverConfig::new(Scheme::Simultaneous, 0.5, 2)).unwrap();
        assert!(t.warnings.is_empty());
    }

    #[test]
    fn step_rules() {
        let c = PayoffConstants {
            c_nu: 1.0,
            c_mu: 1.0,
            m_bound: 1.0,
            l_f: 4.0,
            l_nu: 0.0,
            l_mu: 0.0,
            ell_nu: 0.0,
            ell_mu: 0.0,
            kappa: 0.0,
        };
        let d0 = 2.0 * 2f64.ln();
        let tau = theoretical_stepsize(Scheme::Simultaneous, &c, d0, 100, 0.0, 1.0).unwrap();
        assert!((tau - 0.5 * (d0 / 400.0).sqrt()).abs() < 1e-15);
        assert!((tau - 0.029436).abs() < 1e-6);
        let mut prev = f64::INFINITY;
        for n in [1, 10, 100, 1000, 10_000] {
            let t = theoretical_stepsize(Scheme::Simultaneous, &c, d0, n, 0.0, 1.0).unwrap();
            assert!(t < prev);
            prev = t;
        }
        // κ L_{h*} + 2 L_F L = 1.
        let seq = PayoffConstants { kappa: 0.5, ..c };
        let tau = theoretical_stepsize(Scheme::Sequential, &seq, 1.0, 1000, 2.0, 1.0).unwrap();
        assert!((tau - 0.1).abs() < 1e-12);
        // Degenerate sequential denominator falls back to the simultaneous rule.
        let fallback = theoretical_stepsize(Scheme::Sequential, &c, d0, 100, 0.0, 1.0).unwrap();
        assert_eq!(fallback, theoretical_stepsize(Scheme::Simultaneous, &c, d0, 100, 0.0, 1.0).unwrap());
        let zero = PayoffConstants { l_f: 0.0, ..c };
        assert_eq!(theoretical_stepsize(Scheme::Simultaneous, &zero, d0, 100, 0.0, 0.7).unwrap(), 0.7);
        assert_eq!(theoretical_stepsize(Scheme::Implicit, &c, d0, 100, 0.0, 0.5).unwrap(), 0.5);
        let smooth = PayoffConstants { l_nu: 4.0, ..c };
        assert_eq!(theoretical_stepsize(Scheme::Implicit, &smooth, d0, 100, 0.0, 0.5).unwrap(), 0.25);
        assert!(theoretical_stepsize(Scheme::Simultaneous, &c, 0.0, 100, 0.0, 1.0).is_err());
    }

    #[test]
    fn d0_examples() {
        let (p, g) = pennies();
        let (u, v) = uniform_start(&p);
        assert!((d0_bound(&g, &u, &v).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-15);
        let grid = StrategyGrid::uniform_1d(0.0, 1.0, 7).unwrap().into_shared();
        let g7 = Geometries::new(
            BregmanGeometry::uniform_entropy(grid.clone()),
            BregmanGeometry::uniform_entropy(grid.clone()),
        );
        let u7 = DiscreteMeasure::uniform(grid);
        assert!((d0_bound(&g7, &u7, &u7).unwrap() - 2.0 * 7f64.ln()).abs() < 1e-14);
        let nu0 = m(&p, &[0.9, 0.1]);
        assert!((d0_bound(&g, &nu0, &v).unwrap() - (10f64.ln() + 2f64.ln())).abs() < 1e-14);
        let d = DiscreteMeasure::dirac(p.grid_nu().clone(), 0).unwrap();
        assert!(d0_bound(&g, &d, &v).is_err());
    }
}
