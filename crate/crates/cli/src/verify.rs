//! The verification suite behind `mda verify`.

use std::fmt;

use log::info;
use mda_core::diagnostics::{
    bregman_commutator_scaling, check_tau2_bound, competitive_chain_check, convexity_concavity_check,
    dual_lipschitz_check, finite_difference_check, first_order_conditions_check, jensen_check,
    legendre_round_trip_check, pinsker_check, primal_dual_identity_check, quadratic_growth_along,
    quadratic_growth_check, three_point_check, CheckReport, CheckStatus, SignFlipped,
};
use mda_core::measures::convex_combination;
use mda_core::{run, DiscreteMeasure, Payoff, Scheme, SolverConfig};
use serde::Serialize;

use crate::catalog::{rng_for, GamePayoff, Purpose};
use crate::config::{ExperimentConfig, Fault};
use crate::error::{CliError, Result};
use crate::sweep::SeedSetup;

/// Largest grid size drawn by the randomized inequality checks.
const PROPERTY_MAX_K: usize = 100;
/// Finite-difference step sizes; each halves the previous one. Bilinear
/// payoffs are checked for exactness, where larger steps keep round-off
/// below the tolerance.
const FD_EPS_BILINEAR: [f64; 4] = [1e-2, 5e-3, 2.5e-3, 1.25e-3];
const FD_EPS_CURVED: [f64; 4] = [1e-4, 5e-5, 2.5e-5, 1.25e-5];
const FD_DIRECTIONS: usize = 20;

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub checks: Vec<CheckReport>,
}

impl VerifyReport {
    pub fn failed(&self) -> usize {
        self.checks.iter().filter(|c| c.failed()).count()
    }

    pub fn skipped(&self) -> usize {
        self.checks.iter().filter(|c| c.is_skipped()).count()
    }

    pub fn passed(&self) -> usize {
        self.checks.iter().filter(|c| c.passed()).count()
    }

    pub fn find(&self, name: &str) -> Vec<&CheckReport> {
        self.checks.iter().filter(|c| c.name == name || c.name.starts_with(&format!("{name}/"))).collect()
    }

    /// `Err(Verification)` when any enabled check failed.
    pub fn into_result(self) -> Result<Self> {
        match self.failed() {
            0 => Ok(self),
            failed => Err(CliError::Verification {
                failed,
                total: self.checks.len(),
            }),
        }
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Entry<'a> {
            name: &'a str,
            property: &'a str,
            status: &'a str,
            reason: Option<&'a str>,
            worst_margin: Option<f64>,
            samples: usize,
            violations: usize,
            details: Vec<(&'a str, Option<f64>)>,
        }
        let finite = |v: f64| v.is_finite().then_some(v);
        let entries: Vec<Entry<'_>> = self
            .checks
            .iter()
            .map(|c| Entry {
                name: &c.name,
                property: c.property,
                status: c.status_str(),
                reason: match &c.status {
                    CheckStatus::Skipped(r) => Some(r),
                    _ => None,
                },
                worst_margin: finite(c.worst_margin),
                samples: c.samples,
                violations: c.violations,
                details: c.details.iter().map(|(k, v)| (k.as_str(), finite(*v))).collect(),
            })
            .collect();
        serde_json::to_string_pretty(&entries).expect("plain data serializes")
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        write!(
            f,
            "checks={} passed={} failed={} skipped={}",
            self.checks.len(),
            self.passed(),
            self.failed(),
            self.skipped()
        )
    }
}

fn renamed(mut r: CheckReport, suffix: &str) -> CheckReport {
    r.name = format!("{}/{suffix}", r.name);
    r
}

fn commutator_report(min_slope: f64, points: &[(f64, f64)], slope: Option<f64>) -> CheckReport {
    let mut details: Vec<(String, f64)> = points.iter().map(|(t, c)| (format!("max_commutator@tau={t}"), *c)).collect();
    let (status, margin) = match slope {
        None => (CheckStatus::Passed, f64::INFINITY),
        Some(s) => {
            details.push(("slope".into(), s));
            let margin = s - min_slope;
            (if margin >= 0.0 { CheckStatus::Passed } else { CheckStatus::Failed }, margin)
        }
    };
    details.push(("min_slope".into(), min_slope));
    CheckReport {
        name: "commutator_scaling".into(),
        property: "Bregman commutator along sequential steps is of order τ³",
        violations: usize::from(status == CheckStatus::Failed),
        status,
        worst_margin: margin,
        samples: points.len(),
        details,
    }
}

/// Runs every enabled check on the first configured seed.
pub fn run_verify(cfg: &ExperimentConfig) -> Result<VerifyReport> {
    cfg.validate()?;
    let v = &cfg.verify;
    let seed = *cfg.solver.seeds.iter().min().expect("validated nonempty");
    let setup = SeedSetup::new(cfg, seed)?;
    let payoff = setup.game.payoff();
    let geoms = &setup.geometries;
    let mut rng = rng_for(seed, Purpose::Verify);
    let mut schemes = cfg.schemes()?;
    schemes.sort();

    // Trajectory checks start away from any equilibrium so that every step
    // moves.
    let nu0 = DiscreteMeasure::random_interior(payoff.grid_nu().clone(), &mut rng);
    let mu0 = DiscreteMeasure::random_interior(payoff.grid_mu().clone(), &mut rng);
    let solver_cfg = |scheme: Scheme| -> Result<SolverConfig> {
        let tau = setup.tau(&cfg.solver.step, scheme, v.run_steps)?;
        Ok(SolverConfig::new(scheme, tau, v.run_steps)
            .record_every(1)
            .implicit(cfg.solver.implicit_tol, cfg.solver.implicit_max_inner))
    };
    let no_constants = |name: &str, property: &'static str| {
        CheckReport::skipped(name, property, "analytic constants need the entropy geometry")
    };

    let flipped: Box<dyn Payoff> = match &setup.game.payoff {
        GamePayoff::Bilinear(b) => Box::new(SignFlipped(b.clone())),
        GamePayoff::Regularized(r) => Box::new(SignFlipped(r.clone())),
    };
    let solver_payoff: &dyn Payoff = match v.fault {
        Fault::None => payoff,
        Fault::FlippedProx => flipped.as_ref(),
    };

    let mut checks = Vec::new();
    let mut push = |r: CheckReport| {
        info!("{} {}", r.name, r.status_str());
        checks.push(r);
    };

    if v.tau2_bound {
        for &scheme in schemes.iter().filter(|s| **s != Scheme::Implicit) {
            let r = match &setup.constants {
                Some(c) => check_tau2_bound(&run(payoff, geoms, &nu0, &mu0, &solver_cfg(scheme)?)?, c),
                None => no_constants("tau2_bound", "consecutive Bregman divergences are O(τ²)"),
            };
            push(renamed(r, scheme.as_str()));
        }
    }
    if v.first_order {
        for &scheme in &schemes {
            let r = first_order_conditions_check(solver_payoff, payoff, geoms, &nu0, &mu0, &solver_cfg(scheme)?)?;
            push(renamed(r, scheme.as_str()));
        }
    }
    if v.competitive_chain {
        push(match &setup.constants {
            Some(c) => competitive_chain_check(payoff, geoms, &nu0, &mu0, &solver_cfg(Scheme::Simultaneous)?, c)?,
            None => no_constants("competitive_chain", "each player's mirror step improves its own payoff"),
        });
    }
    if v.jensen {
        for &scheme in &schemes {
            let r = jensen_check(payoff, geoms, &nu0, &mu0, &solver_cfg(scheme)?)?;
            push(renamed(r, scheme.as_str()));
        }
    }
    if v.primal_dual {
        let trace = run(payoff, geoms, &nu0, &mu0, &solver_cfg(Scheme::Simultaneous)?)?;
        let nu_pairs: Vec<_> = trace.records.iter().map(|r| (r.nu.clone(), r.nu_next.clone())).collect();
        let mu_pairs: Vec<_> = trace.records.iter().map(|r| (r.mu.clone(), r.mu_next.clone())).collect();
        push(renamed(primal_dual_identity_check(&geoms.nu, &nu_pairs)?, "nu"));
        push(renamed(primal_dual_identity_check(&geoms.mu, &mu_pairs)?, "mu"));
    }
    if v.commutator {
        let s = bregman_commutator_scaling(
            payoff,
            geoms,
            &nu0,
            &mu0,
            Scheme::Sequential,
            &v.commutator_taus,
            v.commutator_steps,
        )?;
        push(commutator_report(v.min_commutator_slope, &s.points, s.fit.map(|f| f.slope)));
    }
    if v.quadratic_growth {
        let name = "quadratic_growth";
        let property = "NI error grows quadratically away from the equilibrium";
        match (&setup.game.payoff, &setup.game.mne) {
            (GamePayoff::Regularized(reg), Some((ns, ms))) => {
                push(quadratic_growth_check(reg, (ns, ms), v.samples, &mut rng)?);
                let trace = run(payoff, geoms, &nu0, &mu0, &solver_cfg(Scheme::Simultaneous)?)?;
                push(quadratic_growth_along(reg, (ns, ms), &trace.records)?);
            }
            _ => push(CheckReport::skipped(name, property, "needs an entropy-regularized game")),
        }
    }
    if v.finite_differences {
        // Base points keep every mass at least 1/(2K).
        let mut inner = |g: &std::sync::Arc<mda_core::StrategyGrid>| {
            let r = DiscreteMeasure::random_interior(g.clone(), &mut rng);
            convex_combination(&DiscreteMeasure::uniform(g.clone()), &r, 0.5)
        };
        let nu = inner(payoff.grid_nu())?;
        let mu = inner(payoff.grid_mu())?;
        let eps = match setup.game.payoff {
            GamePayoff::Bilinear(_) => &FD_EPS_BILINEAR,
            GamePayoff::Regularized(_) => &FD_EPS_CURVED,
        };
        push(finite_difference_check(payoff, &nu, &mu, FD_DIRECTIONS, eps, &mut rng)?);
    }
    if v.convexity {
        push(convexity_concavity_check(payoff, v.samples, &mut rng)?);
    }
    if v.legendre {
        push(renamed(legendre_round_trip_check(&geoms.nu, v.samples, &mut rng)?, "nu"));
        push(renamed(legendre_round_trip_check(&geoms.mu, v.samples, &mut rng)?, "mu"));
    }
    if v.dual_lipschitz {
        push(if geoms.is_entropy() {
            dual_lipschitz_check(&geoms.nu, v.samples, &mut rng)?
        } else {
            CheckReport::skipped(
                "dual_lipschitz",
                "second variation of h* is two-sided Lipschitz",
                "stated for the entropy geometry",
            )
        });
    }
    if v.pinsker {
        push(pinsker_check(v.samples, PROPERTY_MAX_K, &mut rng)?);
    }
    if v.three_point {
        push(three_point_check(v.samples, PROPERTY_MAX_K, &mut rng)?);
    }
    Ok(VerifyReport { checks })
}
