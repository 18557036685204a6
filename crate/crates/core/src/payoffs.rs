//! Convex-concave payoffs over pairs of discrete measures.
//!
//! The minimizing player holds `ν` (rows), the maximizing player `μ`
//! (columns). Flat derivatives are exposed both raw and normalized against
//! the current measure; solvers use the raw form because every proximal
//! update is invariant under constant shifts.

use std::sync::Arc;

use crate::error::{MdaError, Result};
use crate::geometry::GeometryKind;
use crate::measures::{check_grid, kl_divergence, DiscreteMeasure, GridFunction, StrategyGrid};

/// Lower mass bound defining the iterate domain of regularized payoffs.
pub const DELTA_FLOOR: f64 = 1e-12;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(MdaError::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(MdaError::Construction(format!(
                "non-finite matrix entry at ({}, {})",
                k / cols.max(1),
                k % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(MdaError::Dimension("ragged matrix rows".into()));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `Aᵀ y`.
    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, yi) in y.iter().enumerate() {
            if *yi == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += yi * a;
            }
        }
        out
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter()
            .zip(self.mul_vec(y))
            .map(|(a, b)| a * b)
            .sum()
    }
}

/// Which closed forms apply to a payoff.
#[derive(Debug, Clone, Copy)]
pub enum PayoffStructure<'a> {
    Bilinear(&'a BilinearPayoff),
    Regularized(&'a RegularizedBilinearPayoff),
    General,
}

/// A payoff `F(ν, μ)`, convex in `ν` and concave in `μ`.
pub trait Payoff: Send + Sync {
    fn grid_nu(&self) -> &Arc<StrategyGrid>;
    fn grid_mu(&self) -> &Arc<StrategyGrid>;
    fn value(&self, nu: &DiscreteMeasure, mu: &DiscreteMeasure) -> Result<f64>;
    /// `δF/δν(ν, μ, ·)` up to an additive constant.
    fn flat_derivative_nu_raw(&self, nu: &DiscreteMeasure, mu: &DiscreteMeasure) -> Result<GridFunction>;
    /// `δF/δμ(ν, μ, ·)` up to an additive constant.
    fn flat_derivative_mu_raw(&self, nu: &DiscreteMeasure, mu: &DiscreteMeasure) -> Result<GridFunction>;

    fn flat_derivative_nu(&self, nu: &DiscreteMeasure, mu: &DiscreteMeasure) -> Result<GridFunction> {
        self.flat_derivative_nu_raw(nu, mu)?.centered(nu)
    }

    fn flat_derivative_mu(&self, nu: &DiscreteMeasure, mu: &DiscreteMeasure) -> Result<GridFunction> {
        self.flat_derivative_mu_raw(nu, mu)?.centered(mu)
    }

    fn structure(&self) -> PayoffStructure<'_> {
        PayoffStructure::General
    }
}

fn check_players(f: &impl Payoff, nu: &DiscreteMeasure, mu: &DiscreteMeasure) -> Result<()> {
    check_grid(f.grid_nu(), nu.grid(), "payoff (ν)")?;
    check_grid(f.grid_mu(), mu.grid(), "payoff (μ)")
}

/// `F(ν, μ) = νᵀ A μ` with `A[i][j] = f(x_i, y_j)`.
#[derive(Debug, Clone)]
pub struct BilinearPayoff {
    matrix: DenseMatrix,
    grid_nu: Arc<StrategyGrid>,
    grid_mu: Arc<StrategyGrid>,
}

impl BilinearPayoff {
    pub fn new(matrix: DenseMatrix, grid_nu: Arc<StrategyGrid>, grid_mu: Arc<StrategyGrid>) -> Result<Self> {
        if matrix.rows() != grid_nu.len() || matrix.cols() != grid_mu.len() {
            return Err(MdaError::Dimension(format!(
                "{}x{} matrix for grids of {} and {} points",
                matrix.rows(),
                matrix.cols(),
                grid_nu.len(),
                grid_mu.len()
            )));
        }
        Ok(Self {
            matrix,
            grid_nu,
            grid_mu,
        })
    }

    /// `f(x, y) = x·y` on `{-1, 1} × {-1, 1}`.
    pub fn matching_pennies() -> Self {
        let grid = StrategyGrid::new(vec![vec![1.0], vec![-1.0]])
            .expect("two points")
            .into_shared();
        bilinear_from_kernel(|x, y| x[0] * y[0], grid.clone(), grid).expect("finite kernel")
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }
}

impl Payoff for BilinearPayoff {
    fn grid_nu(&self) -> &Arc<StrategyGrid> {
        &self.grid_nu
    }

    fn grid_mu(&self) -> &Arc<StrategyGrid> {
        &self.grid_mu
    }

    fn value(&self, nu: &DiscreteMeasure, mu: &DiscreteMeasure) -> Result<f64> {
        check_players(self, nu, mu)?;
        Ok(self.matrix.bilinear(nu.weights(), mu.weights()))
    }

    fn flat_derivative_nu_raw(&self, nu: &DiscreteMeasure, mu: &DiscreteMeasure) -> Result<GridFunction> {
        check_players(self, nu, mu)?;
        GridFunction::new(self.grid_nu.clone(), self.matrix.mul_vec(mu.weights()))
    }

    fn flat_derivative_mu_raw(&self, nu: &DiscreteMeasure, mu: &DiscreteMeasure) -> Result<GridFunction> {
        check_players(self, nu, mu)?;
        GridFunction::new(self.grid_mu.clone(), self.matrix.tr_mul_vec(nu.weights()))
    }

    fn structure(&self) -> PayoffStructure<'_> {
        PayoffStructure::Bilinear(self)
    }
}

/// Tabulates `A[i][j] = kernel(x_i, y_j)`.
pub fn bilinear_from_kernel<K>(kernel: K, grid_nu: Arc<StrategyGrid>, grid_mu: Arc<StrategyGrid>) -> Result<BilinearPayoff>
where
    K: Fn(&[f64], &[f64]) -> f64,
{
    let mut data = Vec::with_capacity(grid_nu.len() * grid_mu.len());
    for (i, x) in grid_nu.points().iter().enumerate() {
        for (j, y) in grid_mu.points().iter().enumerate() {
            let v = kernel(x, y);
            if !v.is_finite() {
                return Err(MdaError::Construction(format!(
                    "kernel is not finite at pair ({i}, {j}): f({x:?}, {y:?}) = {v}"
                )));
            }
            data.push(v);
        }
    }
    let matrix = DenseMatrix::new(grid_nu.len(), grid_mu.len(), data)?;
    BilinearPayoff::new(matrix, grid_nu, grid_mu)
}

/// `F(ν, μ) = νᵀAμ + σ_ν KL(ν, π_ν) - σ_μ KL(μ, π_μ)`: strongly convex-concave
/// relative to entropy with constants `σ_ν`, `σ_μ`.
#[derive(Debug, Clone)]
pub struct RegularizedBilinearPayoff {
    base: BilinearPayoff,
    sigma_nu: f64,
    sigma_mu: f64,
    reference_nu: DiscreteMeasure,
    reference_mu: DiscreteMeasure,
    log_ref_nu: Vec<f64>,
    log_ref_mu: Vec<f64>,
}

impl RegularizedBilinearPayoff {
    pub fn new(
        base: BilinearPayoff,
        sigma_nu: f64,
        sigma_mu: f64,
        reference_nu: DiscreteMeasure,
        reference_mu: DiscreteMeasure,
    ) -> Result<Self> {
        for (name, s) in [("σ_ν", sigma_nu), ("σ_μ", sigma_mu)] {
            if !(s > 0.0) || !s.is_finite() {
                return Err(MdaError::InvalidArgument(format!(
                    "{name} must be positive and finite, got {s}"
                )));
            }
        }
        check_grid(base.grid_nu(), reference_nu.grid(), "reference ν")?;
        check_grid(base.grid_mu(), reference_mu.grid(), "reference μ")?;
        if !reference_nu.is_interior() || !reference_mu.is_interior() {
            return Err(MdaError::Domain("reference measures must be interior".into()));
        }
        let log_ref_nu = reference_nu.weights().iter().map(|p| p.ln()).collect();
        let log_ref_mu = reference_mu.weights().iter().map(|p| p.ln()).collect();
        Ok(Self {
            base,
            sigma_nu,
            sigma_mu,
            reference_nu,
            reference_mu,
            log_ref_nu,
            log_ref_mu,
        })
    }

    /// Uniform references on both sides.
    pub fn with_uniform_references(base: BilinearPayoff, sigma_nu: f64, sigma_mu: f64) -> Result<Self> {
        let rn = DiscreteMeasure::uniform(base.grid_nu().clone());
        let rm = DiscreteMeasure::uniform(base.grid_mu().clone());
        Self::new(base, sigma_nu, sigma_mu, rn, rm)
    }

    pub fn base(&self) -> &BilinearPayoff {
        &self.base
    }

    pub fn sigma_nu(&self) -> f64 {
        self.sigma_nu
    }

    pub fn sigma_mu(&self) -> f64 {
        self.sigma_mu
    }

    pub fn reference_nu(&self) -> &DiscreteMeasure {
        &self.reference_nu
    }

    pub fn reference_mu(&self) -> &DiscreteMeasure {
        &self.reference_mu
    }
}

fn log_ratio(m: &DiscreteMeasure, log_ref: &[f64], player: &str) -> Result<Vec<f64>> {
    if let Some(i) = m.weights().iter().position(|w| *w == 0.0) {
        return Err(MdaError::Domain(format!(
            "regularized flat derivative needs an interior {player}; coordinate {i} has zero mass"
        )));
    }
    Ok(m.weights().iter().zip(log_ref).map(|(w, lp)| w.ln() - lp).collect())
}

impl Payoff for RegularizedBilinearPayoff {
    fn grid_nu(&self) -> &Arc<StrategyGrid> {
        self.base.grid_nu()
    }

    fn grid_mu(&self) -> &Arc<StrategyGrid> {
        self.base.grid_mu()
    }

    fn value(&self, nu: &DiscreteMeasure, mu: &DiscreteMeasure) -> Result<f64> {
        let bilinear = self.base.value(nu, mu)?;
        let kl_nu = kl_divergence(nu, &self.reference_nu)?;
        let kl_mu = kl_divergence(mu, &self.reference_mu)?;
        Ok(bilinear + self.sigma_nu * kl_nu - self.sigma_mu * kl_mu)
    }

    fn flat_derivative_nu_raw(&self, nu: &DiscreteMeasure, mu: &DiscreteMeasure) -> Result<GridFunction> {
        let lin = self.base.flat_derivative_nu_raw(nu, mu)?;
        let lr = log_ratio(nu, &self.log_ref_nu, "ν")?;
        let values = lin
            .values()
            .iter()
            .zip(lr)
            .map(|(a, l)| a + self.sigma_nu * l)
            .collect();
        GridFunction::new(nu.grid().clone(), values)
    }

    fn flat_derivative_mu_raw(&self, nu: &DiscreteMeasure, mu: &DiscreteMeasure) -> Result<GridFunction> {
        let lin = self.base.flat_derivative_mu_raw(nu, mu)?;
        let lr = log_ratio(mu, &self.log_ref_mu, "μ")?;
        let values = lin
            .values()
            .iter()
            .zip(lr)
            .map(|(a, l)| a - self.sigma_mu * l)
            .collect();
        GridFunction::new(mu.grid().clone(), values)
    }

    fn structure(&self) -> PayoffStructure<'_> {
        PayoffStructure::Regularized(self)
    }
}

/// Constants of a payoff relative to the entropic geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PayoffConstants {
    /// Sup bound on `δF/δν`.
    pub c_nu: f64,
    /// Sup bound on `δF/δμ`.
    pub c_mu: f64,
    /// Bound on `|F|` over the iterate domain.
    pub m_bound: f64,
    /// Relative Lipschitz constant: `|ΔF|² ≤ L_F (D_h(ν',ν) + D_h(μ',μ))`.
    pub l_f: f64,
    pub l_nu: f64,
    pub l_mu: f64,
    /// Relative strong convexity / concavity (0 for bilinear payoffs).
    pub ell_nu: f64,
    pub ell_mu: f64,
    /// `diam_ν² C_ν³ + diam_μ² C_μ³`.
    pub kappa: f64,
}

impl PayoffConstants {
    /// `max(L_ν, L_μ)`.
    pub fn l(&self) -> f64 {
        self.l_nu.max(self.l_mu)
    }

    /// `min(ℓ_ν, ℓ_μ)`.
    pub fn ell(&self) -> f64 {
        self.ell_nu.min(self.ell_mu)
    }

    /// `κ` recomputed from the sup bounds and grid diameters.
    pub fn kappa_for(c_nu: f64, c_mu: f64, diam_nu: f64, diam_mu: f64) -> f64 {
        diam_nu * diam_nu * c_nu.powi(3) + diam_mu * diam_mu * c_mu.powi(3)
    }
}

/// Sup of `|log(m_i/π_i)|` over measures with every mass in `[δ, 1]`.
fn log_ratio_bound(reference: &DiscreteMeasure) -> f64 {
    reference
        .weights()
        .iter()
        .map(|p| (DELTA_FLOOR / p).ln().abs().max((1.0 / p).ln().abs()))
        .fold(0.0, f64::max)
}

fn max_kl_to(reference: &DiscreteMeasure) -> f64 {
    reference.weights().iter().map(|p| (1.0 / p).ln()).fold(0.0, f64::max)
}

/// Analytic constants for bilinear and entropy-regularized payoffs under the
/// relative-entropy geometry.
///
/// `L_F` chains the sup bound on the flat derivatives with Pinsker's
/// inequality. With `TV = ½‖·‖₁` one has `|∫ g d(ν'-ν)| ≤ 2‖g‖∞ TV`, hence
/// `|ΔF|² ≤ 8 max(C)² (TV_ν² + TV_μ²) ≤ 4 max(C)² (KL_ν + KL_μ)`.
pub fn analytic_constants<P: Payoff + ?Sized>(f: &P, geometry: GeometryKind) -> Result<PayoffConstants> {
    if geometry != GeometryKind::RelativeEntropy {
        return Err(MdaError::Unsupported(
            "analytic constants are derived for the relative-entropy geometry only".into(),
        ));
    }
    let (c_nu, c_mu, m_bound, l_nu, l_mu, base) = match f.structure() {
        PayoffStructure::Bilinear(b) => {
            let a = b.matrix().max_abs();
            (a, a, a, 0.0, 0.0, b)
        }
        PayoffStructure::Regularized(r) => {
            let a = r.base().matrix().max_abs();
            let c_nu = a + r.sigma_nu() * log_ratio_bound(r.reference_nu());
            let c_mu = a + r.sigma_mu() * log_ratio_bound(r.reference_mu());
            let m = a
                + r.sigma_nu() * max_kl_to(r.reference_nu())
                + r.sigma_mu() * max_kl_to(r.reference_mu());
            (c_nu, c_mu, m, r.sigma_nu(), r.sigma_mu(), r.base())
        }
        PayoffStructure::General => {
            return Err(MdaError::Unsupported(
                "no analytic constants for a general payoff".into(),
            ))
        }
    };
    let (ell_nu, ell_mu) = (l_nu, l_mu);
    let c = c_nu.max(c_mu);
    Ok(PayoffConstants {
        c_nu,
        c_mu,
        m_bound,
        l_f: 4.0 * c * c,
        l_nu,
        l_mu,
        ell_nu,
        ell_mu,
        kappa: PayoffConstants::kappa_for(
            c_nu,
            c_mu,
            base.grid_nu().diameter(),
            base.grid_mu().diameter(),
        ),
    })
}

/// Pushforward maps `z ↦ T_θ(z)` parametrized by a generator grid point.
pub trait GeneratorFamily: Send + Sync {
    fn push(&self, theta: &[f64], z: &[f64]) -> Vec<f64>;
}

/// Test functions `x ↦ D_θ(x)` parametrized by a discriminator grid point.
pub trait DiscriminatorFamily: Send + Sync {
    fn eval(&self, theta: &[f64], x: &[f64]) -> f64;
}

/// `T_θ(z) = z + θ`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ShiftGenerator;

impl GeneratorFamily for ShiftGenerator {
    fn push(&self, theta: &[f64], z: &[f64]) -> Vec<f64> {
        z.iter().zip(theta.iter().cycle()).map(|(a, b)| a + b).collect()
    }
}

/// `D_c(x) = exp(-|x - c|² / (2h²))`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianBumpDiscriminator {
    pub bandwidth: f64,
}

impl DiscriminatorFamily for GaussianBumpDiscriminator {
    fn eval(&self, theta: &[f64], x: &[f64]) -> f64 {
        let d2: f64 = x.iter().zip(theta.iter().cycle()).map(|(a, b)| (a - b) * (a - b)).sum();
        (-d2 / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }
}

/// `D_θ(x) = tanh(θ·x)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct TanhDiscriminator;

impl DiscriminatorFamily for TanhDiscriminator {
    fn eval(&self, theta: &[f64], x: &[f64]) -> f64 {
        x.iter().zip(theta.iter().cycle()).map(|(a, b)| a * b).sum::<f64>().tanh()
    }
}

/// Lifts a generator/discriminator pair to a bilinear game over parameter
/// measures: `A[g][d] = mean_z D_d(T_g(z)) - mean_x D_d(x)`.
pub fn gan_payoff_matrix(
    generator: &dyn GeneratorFamily,
    theta_g: Arc<StrategyGrid>,
    discriminator: &dyn DiscriminatorFamily,
    theta_d: Arc<StrategyGrid>,
    source_samples: &[Vec<f64>],
    data_samples: &[Vec<f64>],
) -> Result<BilinearPayoff> {
    if source_samples.is_empty() || data_samples.is_empty() {
        return Err(MdaError::InvalidArgument("GAN sample sets must be nonempty".into()));
    }
    let data_means: Vec<f64> = theta_d
        .points()
        .iter()
        .map(|d| data_samples.iter().map(|x| discriminator.eval(d, x)).sum::<f64>() / data_samples.len() as f64)
        .collect();
    let mut data = Vec::with_capacity(theta_g.len() * theta_d.len());
    for (gi, g) in theta_g.points().iter().enumerate() {
        let pushed: Vec<Vec<f64>> = source_samples.iter().map(|z| generator.push(g, z)).collect();
        for (di, d) in theta_d.points().iter().enumerate() {
            let gen_mean = pushed.iter().map(|x| discriminator.eval(d, x)).sum::<f64>() / pushed.len() as f64;
            let v = gen_mean - data_means[di];
            if !v.is_finite() {
                return Err(MdaError::Construction(format!(
                    "non-finite GAN payoff at generator {gi}, discriminator {di}"
                )));
            }
            data.push(v);
        }
    }
    let matrix = DenseMatrix::new(theta_g.len(), theta_d.len(), data)?;
    BilinearPayoff::new(matrix, theta_g, theta_d)
}
