//! Bregman geometries on the simplex and their convex conjugates.
//!
//! Two families are supported:
//!
//! * relative entropy `h(m) = KL(m, π)`, where every operation has a closed
//!   form (softmax, log-sum-exp) evaluated in log space;
//! * separable regularizers `h(m) = Σ π_i φ(m_i/π_i)` for a scalar convex `φ`,
//!   where proximal steps and conjugate maximizers are found by bisection on
//!   the normalization multiplier.
//!
//! Flat derivatives are only defined up to an additive constant. Internally
//! they are kept unshifted; [`BregmanGeometry::flat_derivative_h`] applies
//! the normalization `⟨δh/δm, m⟩ = 0` for reporting.

use std::ops::Deref;
use std::sync::Arc;

use crate::error::{MdaError, Result};
use crate::measures::{
    check_grid, kl_slices, pairing, pairing_difference, DiscreteMeasure, GridFunction,
    StrategyGrid,
};

const BISECTION_MASS_TOL: f64 = 1e-13;
const BISECTION_MAX_ITERS: usize = 200;
const BRACKET_MAX_EXPANSIONS: usize = 200;

/// Scalar convex generators for separable regularizers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Phi {
    /// `φ(t) = t log t`; recovers relative entropy.
    XLogX,
    /// `φ(t) = (t^q - t)/(q(q-1))` for `q > 1`. At `q = 2` the divergence is
    /// the symmetric weighted squared distance.
    Tsallis { q: f64 },
}

impl Phi {
    fn validate(&self) -> Result<()> {
        match *self {
            Phi::XLogX => Ok(()),
            Phi::Tsallis { q } if q > 1.0 && q.is_finite() => Ok(()),
            Phi::Tsallis { q } => Err(MdaError::InvalidArgument(format!(
                "Tsallis exponent must be finite and > 1, got {q}"
            ))),
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Phi::XLogX => {
                if t == 0.0 {
                    0.0
                } else {
                    t * t.ln()
                }
            }
            Phi::Tsallis { q } => (t.powf(q) - t) / (q * (q - 1.0)),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            Phi::XLogX => t.ln() + 1.0,
            Phi::Tsallis { q } => (q * t.powf(q - 1.0) - 1.0) / (q * (q - 1.0)),
        }
    }

    /// Inverse of `φ'`, extended by 0 below the range of `φ'` (the
    /// nonnegativity constraint is active there).
    pub fn inverse_derivative(&self, s: f64) -> f64 {
        match *self {
            Phi::XLogX => (s - 1.0).exp(),
            Phi::Tsallis { q } => {
                let base = (s * q * (q - 1.0) + 1.0) / q;
                if base <= 0.0 {
                    0.0
                } else {
                    base.powf(1.0 / (q - 1.0))
                }
            }
        }
    }

    fn finite_at_zero(&self) -> bool {
        matches!(self, Phi::Tsallis { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeometryKind {
    RelativeEntropy,
    SeparablePhi(Phi),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Descent,
    Ascent,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Descent => -1.0,
            Direction::Ascent => 1.0,
        }
    }
}

/// An element of the dual space: a bounded potential on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPotential(GridFunction);

impl DualPotential {
    pub fn new(f: GridFunction) -> Self {
        Self(f)
    }

    pub fn into_inner(self) -> GridFunction {
        self.0
    }
}

impl From<GridFunction> for DualPotential {
    fn from(f: GridFunction) -> Self {
        Self(f)
    }
}

impl Deref for DualPotential {
    type Target = GridFunction;

    fn deref(&self) -> &GridFunction {
        &self.0
    }
}

/// A regularizer `h` together with its reference measure.
#[derive(Debug, Clone)]
pub struct BregmanGeometry {
    kind: GeometryKind,
    reference: DiscreteMeasure,
    log_reference: Vec<f64>,
}

impl BregmanGeometry {
    pub fn relative_entropy(reference: DiscreteMeasure) -> Result<Self> {
        Self::new(GeometryKind::RelativeEntropy, reference)
    }

    /// Relative entropy with respect to the uniform measure on `grid`.
    pub fn uniform_entropy(grid: Arc<StrategyGrid>) -> Self {
        Self::new(GeometryKind::RelativeEntropy, DiscreteMeasure::uniform(grid))
            .expect("uniform reference is interior")
    }

    pub fn separable(phi: Phi, reference: DiscreteMeasure) -> Result<Self> {
        phi.validate()?;
        Self::new(GeometryKind::SeparablePhi(phi), reference)
    }

    pub fn new(kind: GeometryKind, reference: DiscreteMeasure) -> Result<Self> {
        if let GeometryKind::SeparablePhi(phi) = kind {
            phi.validate()?;
        }
        if !reference.is_interior() {
            return Err(MdaError::Domain(
                "reference measure must be strictly positive".into(),
            ));
        }
        let log_reference = reference.weights().iter().map(|p| p.ln()).collect();
        Ok(Self {
            kind,
            reference,
            log_reference,
        })
    }

    pub fn kind(&self) -> GeometryKind {
        self.kind
    }

    pub fn is_entropy(&self) -> bool {
        matches!(self.kind, GeometryKind::RelativeEntropy)
    }

    pub fn reference(&self) -> &DiscreteMeasure {
        &self.reference
    }

    pub fn grid(&self) -> &Arc<StrategyGrid> {
        self.reference.grid()
    }

    fn check(&self, m: &DiscreteMeasure, what: &str) -> Result<()> {
        check_grid(self.reference.grid(), m.grid(), what)
    }

    fn check_fn(&self, f: &GridFunction, what: &str) -> Result<()> {
        check_grid(self.reference.grid(), f.grid(), what)
    }

    pub fn h_value(&self, m: &DiscreteMeasure) -> Result<f64> {
        self.check(m, "h_value")?;
        match self.kind {
            GeometryKind::RelativeEntropy => {
                if !m.is_interior() {
                    return Err(MdaError::Domain(
                        "relative entropy requires an interior measure".into(),
                    ));
                }
                Ok(kl_slices(m.weights(), self.reference.weights()))
            }
            GeometryKind::SeparablePhi(phi) => Ok(m
                .weights()
                .iter()
                .zip(self.reference.weights())
                .map(|(w, p)| phi.value(w / p) * p)
                .sum()),
        }
    }

    /// Flat derivative without the normalizing shift.
    pub fn flat_derivative_unshifted(&self, m: &DiscreteMeasure) -> Result<GridFunction> {
        self.check(m, "flat_derivative_h")?;
        let needs_interior = match self.kind {
            GeometryKind::RelativeEntropy => true,
            GeometryKind::SeparablePhi(phi) => !phi.finite_at_zero(),
        };
        if needs_interior {
            if let Some(i) = m.weights().iter().position(|w| *w == 0.0) {
                return Err(MdaError::Domain(format!(
                    "flat derivative undefined at zero-mass coordinate {i}"
                )));
            }
        }
        let values = match self.kind {
            GeometryKind::RelativeEntropy => m
                .weights()
                .iter()
                .zip(&self.log_reference)
                .map(|(w, lp)| w.ln() - lp)
                .collect(),
            GeometryKind::SeparablePhi(phi) => m
                .weights()
                .iter()
                .zip(self.reference.weights())
                .map(|(w, p)| phi.derivative(w / p))
                .collect(),
        };
        GridFunction::new(m.grid().clone(), values)
    }

    /// Flat derivative normalized so that its pairing with `m` is zero.
    pub fn flat_derivative_h(&self, m: &DiscreteMeasure) -> Result<GridFunction> {
        self.flat_derivative_unshifted(m)?.centered(m)
    }

    /// `D_h(m_new, m_base) = h(m_new) - h(m_base) - ⟨δh/δm(m_base), m_new - m_base⟩`.
    ///
    /// For relative entropy this is evaluated directly as `KL(m_new, m_base)`,
    /// returning `+inf` when `m_new` charges a point outside the support of
    /// `m_base`.
    pub fn bregman_divergence(&self, m_new: &DiscreteMeasure, m_base: &DiscreteMeasure) -> Result<f64> {
        self.check(m_new, "bregman_divergence")?;
        self.check(m_base, "bregman_divergence")?;
        match self.kind {
            GeometryKind::RelativeEntropy => Ok(kl_slices(m_new.weights(), m_base.weights())),
            GeometryKind::SeparablePhi(Phi::XLogX) => {
                // Same quantity, expanded termwise to avoid cancellation.
                let mut total = 0.0;
                for (a, b) in m_new.weights().iter().zip(m_base.weights()) {
                    if *b == 0.0 {
                        if *a > 0.0 {
                            return Ok(f64::INFINITY);
                        }
                        continue;
                    }
                    let t = if *a == 0.0 { 0.0 } else { a * (a / b).ln() };
                    total += t - a + b;
                }
                Ok(total.max(0.0))
            }
            GeometryKind::SeparablePhi(phi) => {
                let total: f64 = m_new
                    .weights()
                    .iter()
                    .zip(m_base.weights())
                    .zip(self.reference.weights())
                    .map(|((a, b), p)| {
                        let (ta, tb) = (a / p, b / p);
                        p * (phi.value(ta) - phi.value(tb) - phi.derivative(tb) * (ta - tb))
                    })
                    .sum();
                Ok(total.max(0.0))
            }
        }
    }

    /// Mirror step: the minimizer over the simplex of
    /// `⟨gradient, m - base⟩ + D_h(m, base)/τ` (descent), or the maximizer of
    /// `⟨gradient, m - base⟩ - D_h(m, base)/τ` (ascent).
    pub fn prox_step(
        &self,
        base: &DiscreteMeasure,
        gradient: &GridFunction,
        tau: f64,
        direction: Direction,
    ) -> Result<DiscreteMeasure> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(MdaError::InvalidArgument(format!(
                "step size must be positive and finite, got {tau}"
            )));
        }
        self.check(base, "prox_step")?;
        self.check_fn(gradient, "prox_step")?;
        let step = direction.sign() * tau;
        match self.kind {
            GeometryKind::RelativeEntropy => {
                let logs: Vec<f64> = base
                    .weights()
                    .iter()
                    .zip(gradient.values())
                    .map(|(w, g)| w.ln() + step * g)
                    .collect();
                DiscreteMeasure::from_log_weights(base.grid().clone(), &logs)
            }
            GeometryKind::SeparablePhi(phi) => {
                let s: Vec<f64> = base
                    .weights()
                    .iter()
                    .zip(self.reference.weights())
                    .zip(gradient.values())
                    .map(|((w, p), g)| phi.derivative(w / p) + step * g)
                    .collect();
                if s.iter().any(|v| v.is_nan()) {
                    return Err(MdaError::Domain(
                        "prox base outside the regularizer domain".into(),
                    ));
                }
                self.solve_multiplier(phi, &s)
            }
        }
    }

    /// Solves `φ'(w_i/π_i) = s_i + λ` (with `w_i ≥ 0`) for the scalar `λ`
    /// making `w` a probability vector.
    fn solve_multiplier(&self, phi: Phi, s: &[f64]) -> Result<DiscreteMeasure> {
        let pi = self.reference.weights();
        let s_max = s.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
        if !s_max.is_finite() {
            return Err(MdaError::Numeric("no finite first-order target".into()));
        }
        let mass = |lambda: f64| -> f64 {
            s.iter()
                .zip(pi)
                .map(|(si, p)| p * phi.inverse_derivative(si - s_max + lambda))
                .sum()
        };

        let (mut lo, mut hi) = (-1.0_f64, 1.0_f64);
        let mut expansions = 0;
        while mass(hi) < 1.0 {
            hi = hi * 2.0 + 1.0;
            expansions += 1;
            if expansions > BRACKET_MAX_EXPANSIONS {
                return Err(MdaError::NonConvergence {
                    operation: "multiplier bracket (upper)",
                    iterations: expansions,
                    residual: 1.0 - mass(hi),
                });
            }
        }
        expansions = 0;
        while mass(lo) > 1.0 {
            lo = lo * 2.0 - 1.0;
            expansions += 1;
            if expansions > BRACKET_MAX_EXPANSIONS {
                return Err(MdaError::NonConvergence {
                    operation: "multiplier bracket (lower)",
                    iterations: expansions,
                    residual: mass(lo) - 1.0,
                });
            }
        }

        let mut mid = 0.5 * (lo + hi);
        let mut residual = mass(mid) - 1.0;
        let mut iters = 0;
        while residual.abs() > BISECTION_MASS_TOL {
            if iters >= BISECTION_MAX_ITERS {
                return Err(MdaError::NonConvergence {
                    operation: "prox multiplier bisection",
                    iterations: iters,
                    residual,
                });
            }
            if residual > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
            mid = 0.5 * (lo + hi);
            residual = mass(mid) - 1.0;
            iters += 1;
        }
        let weights = s
            .iter()
            .zip(pi)
            .map(|(si, p)| p * phi.inverse_derivative(si - s_max + mid))
            .collect();
        DiscreteMeasure::new(self.reference.grid().clone(), weights)
    }

    /// `h*(f) = sup_m ⟨f, m⟩ - h(m)`.
    pub fn conjugate_value(&self, f: &DualPotential) -> Result<f64> {
        self.check_fn(f, "conjugate_value")?;
        match self.kind {
            GeometryKind::RelativeEntropy => Ok(log_sum_exp(
                f.values().iter().zip(&self.log_reference).map(|(v, lp)| v + lp),
            )),
            GeometryKind::SeparablePhi(_) => {
                let m = self.conjugate_first_variation(f)?;
                Ok(pairing(f, &m)? - self.h_value(&m)?)
            }
        }
    }

    /// The maximizer of `m ↦ ⟨f, m⟩ - h(m)`; the Gibbs measure `π e^f / Z`
    /// for relative entropy.
    pub fn conjugate_first_variation(&self, f: &DualPotential) -> Result<DiscreteMeasure> {
        self.check_fn(f, "conjugate_first_variation")?;
        match self.kind {
            GeometryKind::RelativeEntropy => {
                let logs: Vec<f64> = f
                    .values()
                    .iter()
                    .zip(&self.log_reference)
                    .map(|(v, lp)| v + lp)
                    .collect();
                DiscreteMeasure::from_log_weights(f.grid().clone(), &logs)
            }
            GeometryKind::SeparablePhi(phi) => self.solve_multiplier(phi, f.values()),
        }
    }

    /// `D_{h*}(f_new, f_base) = h*(f_new) - h*(f_base) - ⟨f_new - f_base, ∇h*(f_base)⟩`.
    pub fn dual_bregman(&self, f_new: &DualPotential, f_base: &DualPotential) -> Result<f64> {
        self.check_fn(f_new, "dual_bregman")?;
        self.check_fn(f_base, "dual_bregman")?;
        let rho = self.conjugate_first_variation(f_base)?;
        let delta = f_new.sub(f_base)?;
        match self.kind {
            GeometryKind::RelativeEntropy => {
                // log Σ ρ e^Δ - ⟨Δ, ρ⟩, which avoids subtracting two large
                // log-partition values.
                let lse = log_sum_exp(
                    rho.weights()
                        .iter()
                        .zip(delta.values())
                        .filter(|(r, _)| **r > 0.0)
                        .map(|(r, d)| r.ln() + d),
                );
                Ok((lse - pairing(&delta, &rho)?).max(0.0))
            }
            GeometryKind::SeparablePhi(_) => {
                let value = self.conjugate_value(f_new)? - self.conjugate_value(f_base)?
                    - pairing(&delta, &rho)?;
                Ok(value.max(0.0))
            }
        }
    }

    /// The second variation of the entropic conjugate at `f`, applied to `g`
    /// and paired with `ψ`: `Σ ψ_i (g_i - E_ρ g) ρ_i` with `ρ = ∇h*(f)`.
    pub fn entropy_second_variation_apply(
        &self,
        f: &DualPotential,
        g: &GridFunction,
        psi: &GridFunction,
    ) -> Result<f64> {
        if !self.is_entropy() {
            return Err(MdaError::Unsupported(
                "second variation is only available for relative entropy".into(),
            ));
        }
        let rho = self.conjugate_first_variation(f)?;
        Ok(self.second_variation_masses(&rho, g)?
            .iter()
            .zip(psi.values())
            .map(|(s, p)| s * p)
            .sum())
    }

    fn second_variation_masses(&self, rho: &DiscreteMeasure, g: &GridFunction) -> Result<Vec<f64>> {
        self.check_fn(g, "second variation")?;
        let mean = pairing(g, rho)?;
        Ok(g.values()
            .iter()
            .zip(rho.weights())
            .map(|(gi, r)| (gi - mean) * r)
            .collect())
    }

    /// Density bound `sup_i ρ_i / w_i` over all Gibbs measures whose potential
    /// has oscillation at most `oscillation`.
    fn gibbs_density_bound(&self, oscillation: f64) -> f64 {
        let boost = oscillation.exp();
        self.reference
            .weights()
            .iter()
            .zip(self.grid().cell_weights())
            .map(|(p, w)| {
                let r = if boost.is_finite() {
                    p * boost / (p * boost + (1.0 - p))
                } else {
                    1.0
                };
                r / w
            })
            .fold(0.0, f64::max)
    }

    /// Constants of the two-sided Lipschitz bound for the entropic second
    /// variation, evaluated at the potentials `f`, `f'`, `g'`.
    pub fn dual_lipschitz_constants(
        &self,
        f: &DualPotential,
        f_prime: &DualPotential,
        g_prime: &GridFunction,
    ) -> Result<DualLipschitzConstants> {
        if !self.is_entropy() {
            return Err(MdaError::Unsupported(
                "dual Lipschitz constants are only assembled for relative entropy".into(),
            ));
        }
        let w = self.grid().cell_weights();
        let density = |m: &DiscreteMeasure| {
            m.weights().iter().zip(w).map(|(r, c)| r / c).fold(0.0, f64::max)
        };
        let rho = self.conjugate_first_variation(f)?;
        let rho_prime = self.conjugate_first_variation(f_prime)?;
        let osc = f.oscillation().max(f_prime.oscillation());
        Ok(DualLipschitzConstants {
            density_f: density(&rho),
            density_f_prime: density(&rho_prime),
            sup_g_prime: g_prime.sup_norm(),
            softmax_lipschitz: 2.0 * self.gibbs_density_bound(osc),
            quadrature_mass: self.grid().total_cell_weight(),
        })
    }

    /// Worst-case constants over all potentials with oscillation at most
    /// `oscillation` and directions bounded by `g_sup` in sup norm.
    pub fn dual_lipschitz_constants_for_bounds(
        &self,
        oscillation: f64,
        g_sup: f64,
    ) -> Result<DualLipschitzConstants> {
        if !self.is_entropy() {
            return Err(MdaError::Unsupported(
                "dual Lipschitz constants are only assembled for relative entropy".into(),
            ));
        }
        let c = self.gibbs_density_bound(oscillation);
        Ok(DualLipschitzConstants {
            density_f: c,
            density_f_prime: c,
            sup_g_prime: g_sup,
            softmax_lipschitz: 2.0 * c,
            quadrature_mass: self.grid().total_cell_weight(),
        })
    }

    /// Evaluates both sides of the two-sided Lipschitz inequality
    /// `Σ |ψ_i| |S(f')(g')_i - S(f)(g)_i| ≤ L (‖f'-f‖∞ + ‖g'-g‖∞) Σ w_i |ψ_i|`,
    /// where `S(f)(g)` is the second variation measure and `w` the cell
    /// weights.
    pub fn dual_lipschitz_sample(
        &self,
        f: &DualPotential,
        g: &GridFunction,
        f_prime: &DualPotential,
        g_prime: &GridFunction,
        psi: &GridFunction,
    ) -> Result<DualLipschitzSample> {
        let constants = self.dual_lipschitz_constants(f, f_prime, g_prime)?;
        let rho = self.conjugate_first_variation(f)?;
        let rho_prime = self.conjugate_first_variation(f_prime)?;
        let s = self.second_variation_masses(&rho, g)?;
        let s_prime = self.second_variation_masses(&rho_prime, g_prime)?;
        let lhs: f64 = psi
            .values()
            .iter()
            .zip(s.iter().zip(&s_prime))
            .map(|(p, (a, b))| p.abs() * (b - a).abs())
            .sum();
        let psi_mass: f64 = psi
            .values()
            .iter()
            .zip(self.grid().cell_weights())
            .map(|(p, w)| p.abs() * w)
            .sum();
        let shift = f_prime.sub(f)?.sup_norm() + g_prime.sub(g)?.sup_norm();
        let constant = constants.l_hstar();
        Ok(DualLipschitzSample {
            lhs,
            rhs: constant * shift * psi_mass,
            constant,
        })
    }

    /// Checks that `f` and `m` live on this geometry's grid.
    pub fn check_pair(&self, f: &GridFunction, m: &DiscreteMeasure) -> Result<()> {
        self.check_fn(f, "geometry")?;
        self.check(m, "geometry")
    }

    /// `⟨δh/δm(base), m_new - m_base⟩` without materializing the shift.
    pub fn linearization(&self, base: &DiscreteMeasure, m_new: &DiscreteMeasure) -> Result<f64> {
        let d = self.flat_derivative_unshifted(base)?;
        pairing_difference(&d, m_new, base)
    }
}

/// Bounds entering the entropic two-sided Lipschitz constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualLipschitzConstants {
    /// `C_f`: sup of the Gibbs density at `f`.
    pub density_f: f64,
    /// `C_{f'}`.
    pub density_f_prime: f64,
    /// `C_{g'}`: sup norm of `g'`.
    pub sup_g_prime: f64,
    /// `L_φ`: pointwise Lipschitz constant of the Gibbs density map.
    pub softmax_lipschitz: f64,
    /// Total cell weight of the grid (the quadrature volume).
    pub quadrature_mass: f64,
}

impl DualLipschitzConstants {
    /// `max{C_{g'} L_φ, C_f} + m·max{C_f², (C_f + C_{f'}) C_{g'} L_φ}` with
    /// `m = max(1, quadrature mass)`; `m = 1` under the default `1/K` cell
    /// weights.
    pub fn l_hstar(&self) -> f64 {
        let m = self.quadrature_mass.max(1.0);
        let first = (self.sup_g_prime * self.softmax_lipschitz).max(self.density_f);
        let second = (self.density_f * self.density_f).max(
            (self.density_f + self.density_f_prime) * self.sup_g_prime * self.softmax_lipschitz,
        );
        first + m * second
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualLipschitzSample {
    pub lhs: f64,
    pub rhs: f64,
    pub constant: f64,
}

/// `log Σ exp(x_i)` with max-subtraction.
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
