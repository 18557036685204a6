//! Strategy grids, probability measures on them, and the elementary
//! divergences shared by every other module.
//!
//! Measures carry an [`Arc`] to their grid so that two measures can be
//! checked for compatibility cheaply. All values are immutable once built.

use std::sync::Arc;

use rand::Rng;

use crate::error::{MdaError, Result};

/// Weights below this are treated as exact zeros.
pub const MASS_FLOOR: f64 = 1e-300;

/// A finite set of pure strategies in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyGrid {
    points: Vec<Vec<f64>>,
    cell_weights: Vec<f64>,
    diameter: f64,
}

impl StrategyGrid {
    /// Builds a grid with the default cell weight `1/K`.
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let k = points.len();
        let w = if k == 0 { 0.0 } else { 1.0 / k as f64 };
        Self::with_cell_weights(points, vec![w; k])
    }

    pub fn with_cell_weights(points: Vec<Vec<f64>>, cell_weights: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(MdaError::Construction(format!(
                "a strategy grid needs at least 2 points, got {}",
                points.len()
            )));
        }
        if cell_weights.len() != points.len() {
            return Err(MdaError::Dimension(format!(
                "{} cell weights for {} points",
                cell_weights.len(),
                points.len()
            )));
        }
        let dim = points[0].len();
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(MdaError::Construction(
                "grid points must share a positive dimension".into(),
            ));
        }
        if points.iter().flatten().any(|x| !x.is_finite()) {
            return Err(MdaError::Construction("non-finite grid coordinate".into()));
        }
        if let Some(w) = cell_weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(MdaError::Construction(format!(
                "cell weights must be positive and finite, got {w}"
            )));
        }
        let diameter = max_pairwise_distance(&points);
        Ok(Self {
            points,
            cell_weights,
            diameter,
        })
    }

    /// `k` equispaced points on `[lo, hi]`.
    pub fn uniform_1d(lo: f64, hi: f64, k: usize) -> Result<Self> {
        if k < 2 {
            return Self::new(vec![vec![lo]; k]);
        }
        let step = (hi - lo) / (k - 1) as f64;
        Self::new((0..k).map(|i| vec![lo + step * i as f64]).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn cell_weights(&self) -> &[f64] {
        &self.cell_weights
    }

    pub fn total_cell_weight(&self) -> f64 {
        self.cell_weights.iter().sum()
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn into_shared(self) -> Arc<Self> {
        Arc::new(self)
    }
}

fn max_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut best: f64 = 0.0;
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            let d2: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            best = best.max(d2);
        }
    }
    best.sqrt()
}

pub(crate) fn same_grid(a: &Arc<StrategyGrid>, b: &Arc<StrategyGrid>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

pub(crate) fn check_grid(a: &Arc<StrategyGrid>, b: &Arc<StrategyGrid>, what: &str) -> Result<()> {
    if same_grid(a, b) {
        Ok(())
    } else {
        Err(MdaError::Dimension(format!(
            "{what}: grids differ ({} vs {} points)",
            a.len(),
            b.len()
        )))
    }
}

/// A probability measure on a [`StrategyGrid`].
#[derive(Debug, Clone)]
pub struct DiscreteMeasure {
    grid: Arc<StrategyGrid>,
    weights: Vec<f64>,
}

impl PartialEq for DiscreteMeasure {
    fn eq(&self, other: &Self) -> bool {
        same_grid(&self.grid, &other.grid) && self.weights == other.weights
    }
}

impl DiscreteMeasure {
    /// Validates and renormalizes `weights`. Entries below [`MASS_FLOOR`]
    /// are set to zero.
    pub fn new(grid: Arc<StrategyGrid>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.len() {
            return Err(MdaError::Dimension(format!(
                "{} weights for a grid of {} points",
                weights.len(),
                grid.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(MdaError::InvalidMeasure(format!(
                "weights must be finite and nonnegative, got {w}"
            )));
        }
        Self::normalized(grid, weights)
    }

    fn normalized(grid: Arc<StrategyGrid>, mut weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(MdaError::InvalidMeasure(format!(
                "total mass must be positive and finite, got {total}"
            )));
        }
        for w in weights.iter_mut() {
            *w /= total;
            if *w < MASS_FLOOR {
                *w = 0.0;
            }
        }
        Ok(Self { grid, weights })
    }

    /// Builds a measure from unnormalized log-weights with max-subtraction.
    /// Entries equal to `-inf` get zero mass.
    pub fn from_log_weights(grid: Arc<StrategyGrid>, log_weights: &[f64]) -> Result<Self> {
        if log_weights.len() != grid.len() {
            return Err(MdaError::Dimension(format!(
                "{} log-weights for a grid of {} points",
                log_weights.len(),
                grid.len()
            )));
        }
        let max = log_weights
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(MdaError::Numeric(format!(
                "log-weights have no finite maximum ({max})"
            )));
        }
        if log_weights.iter().any(|x| x.is_nan()) {
            return Err(MdaError::Numeric("NaN log-weight".into()));
        }
        let weights = log_weights.iter().map(|l| (l - max).exp()).collect();
        Self::normalized(grid, weights)
    }

    pub fn uniform(grid: Arc<StrategyGrid>) -> Self {
        let k = grid.len();
        Self {
            grid,
            weights: vec![1.0 / k as f64; k],
        }
    }

    pub fn dirac(grid: Arc<StrategyGrid>, index: usize) -> Result<Self> {
        if index >= grid.len() {
            return Err(MdaError::InvalidArgument(format!(
                "vertex {index} out of range for {} points",
                grid.len()
            )));
        }
        let mut weights = vec![0.0; grid.len()];
        weights[index] = 1.0;
        Ok(Self { grid, weights })
    }

    /// A random strictly positive measure. Concentration varies between
    /// draws so samples cover both flat and peaked measures.
    pub fn random_interior<R: Rng + ?Sized>(grid: Arc<StrategyGrid>, rng: &mut R) -> Self {
        let power = rng.random_range(0.5..4.0);
        let weights: Vec<f64> = (0..grid.len())
            .map(|_| {
                let u: f64 = rng.random_range(1e-12..1.0);
                (-u.ln()).powf(power) + 1e-9
            })
            .collect();
        Self::normalized(grid, weights).expect("positive weights")
    }

    pub fn grid(&self) -> &Arc<StrategyGrid> {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn is_interior(&self) -> bool {
        self.weights.iter().all(|w| *w > 0.0)
    }

    pub fn min_weight(&self) -> f64 {
        self.weights.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn pairing(&self, f: &GridFunction) -> Result<f64> {
        pairing(f, self)
    }

    pub fn tv_distance(&self, other: &Self) -> Result<f64> {
        tv_distance(self, other)
    }

    pub fn kl_divergence(&self, other: &Self) -> Result<f64> {
        kl_divergence(self, other)
    }
}

/// Real values over a grid: flat derivatives and dual potentials.
#[derive(Debug, Clone)]
pub struct GridFunction {
    grid: Arc<StrategyGrid>,
    values: Vec<f64>,
}

impl PartialEq for GridFunction {
    fn eq(&self, other: &Self) -> bool {
        same_grid(&self.grid, &other.grid) && self.values == other.values
    }
}

impl GridFunction {
    pub fn new(grid: Arc<StrategyGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(MdaError::Dimension(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(MdaError::Numeric(format!("non-finite grid function value {v}")));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<StrategyGrid>) -> Self {
        let k = grid.len();
        Self {
            grid,
            values: vec![0.0; k],
        }
    }

    pub fn constant(grid: Arc<StrategyGrid>, c: f64) -> Self {
        let k = grid.len();
        Self {
            grid,
            values: vec![c; k],
        }
    }

    pub fn grid(&self) -> &Arc<StrategyGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max - min` of the values.
    pub fn oscillation(&self) -> f64 {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(*v), hi.max(*v))
            });
        hi - lo
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Adds `c` to every value.
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v + c).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    /// Shifts by a constant so that the pairing with `m` vanishes.
    pub fn centered(&self, m: &DiscreteMeasure) -> Result<Self> {
        let mean = pairing(self, m)?;
        Ok(self.shifted(-mean))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_grid(&self.grid, &other.grid, "grid function sum")?;
        Ok(Self {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_grid(&self.grid, &other.grid, "grid function difference")?;
        Ok(Self {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn random<R: Rng + ?Sized>(grid: Arc<StrategyGrid>, lo: f64, hi: f64, rng: &mut R) -> Self {
        let values = (0..grid.len()).map(|_| rng.random_range(lo..=hi)).collect();
        Self { grid, values }
    }
}

/// `Σ f_i m_i`.
pub fn pairing(f: &GridFunction, m: &DiscreteMeasure) -> Result<f64> {
    check_grid(&f.grid, &m.grid, "pairing")?;
    Ok(f.values.iter().zip(&m.weights).map(|(a, b)| a * b).sum())
}

/// Pairing of `f` against the signed measure `m_new - m_base`.
pub fn pairing_difference(
    f: &GridFunction,
    m_new: &DiscreteMeasure,
    m_base: &DiscreteMeasure,
) -> Result<f64> {
    check_grid(&f.grid, &m_new.grid, "pairing")?;
    check_grid(&f.grid, &m_base.grid, "pairing")?;
    Ok(f.values
        .iter()
        .zip(m_new.weights.iter().zip(&m_base.weights))
        .map(|(v, (a, b))| v * (a - b))
        .sum())
}

/// Total variation with the `½·L1` normalization.
pub fn tv_distance(m1: &DiscreteMeasure, m2: &DiscreteMeasure) -> Result<f64> {
    check_grid(&m1.grid, &m2.grid, "tv_distance")?;
    Ok(0.5
        * m1.weights
            .iter()
            .zip(&m2.weights)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>())
}

/// `Σ m1 log(m1/m2)` with `0 log 0 = 0`. Returns `+inf` when `m1` charges a
/// point where `m2` has no mass.
pub fn kl_divergence(m1: &DiscreteMeasure, m2: &DiscreteMeasure) -> Result<f64> {
    check_grid(&m1.grid, &m2.grid, "kl_divergence")?;
    Ok(kl_slices(&m1.weights, &m2.weights))
}

pub(crate) fn kl_slices(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (a, b) in p.iter().zip(q) {
        if *a == 0.0 {
            continue;
        }
        if *b == 0.0 {
            return f64::INFINITY;
        }
        total += a * (a / b).ln();
    }
    // Rounding can leave tiny negative totals for nearly equal inputs.
    total.max(0.0)
}

/// `(1-λ) m1 + λ m2`.
pub fn convex_combination(
    m1: &DiscreteMeasure,
    m2: &DiscreteMeasure,
    lambda: f64,
) -> Result<DiscreteMeasure> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(MdaError::InvalidArgument(format!(
            "convex combination weight {lambda} outside [0, 1]"
        )));
    }
    check_grid(&m1.grid, &m2.grid, "convex_combination")?;
    if lambda == 0.0 {
        return Ok(m1.clone());
    }
    if lambda == 1.0 {
        return Ok(m2.clone());
    }
    let weights = m1
        .weights
        .iter()
        .zip(&m2.weights)
        .map(|(a, b)| (1.0 - lambda) * a + lambda * b)
        .collect();
    DiscreteMeasure::normalized(m1.grid.clone(), weights)
}

/// `((count-1)·avg + new)/count`.
pub fn running_average(
    current_avg: &DiscreteMeasure,
    new_point: &DiscreteMeasure,
    count: usize,
) -> Result<DiscreteMeasure> {
    if count == 0 {
        return Err(MdaError::InvalidArgument(
            "running average count must be at least 1".into(),
        ));
    }
    if count == 1 {
        check_grid(&current_avg.grid, &new_point.grid, "running_average")?;
        return Ok(new_point.clone());
    }
    convex_combination(current_avg, new_point, 1.0 / count as f64)
}
