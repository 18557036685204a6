//! Named games, kernels, GAN families and seeded random streams.

use std::sync::Arc;

use mda_core::diagnostics::mne_regularized;
use mda_core::geometry::Phi;
use mda_core::payoffs::{
    bilinear_from_kernel, gan_payoff_matrix, DiscriminatorFamily, GaussianBumpDiscriminator, GeneratorFamily,
    ShiftGenerator, TanhDiscriminator,
};
use mda_core::{
    BilinearPayoff, BregmanGeometry, DenseMatrix, DiscreteMeasure, Geometries, Payoff, RegularizedBilinearPayoff,
    StrategyGrid,
};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{GameSpec, GanSpec, GeometrySpec, GridSpec, Regularization};
use crate::error::{CliError, Result};

/// Independent random streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Game = 1,
    Start = 2,
    GanSource = 3,
    GanData = 4,
    Verify = 5,
}

/// The generator for `(seed, purpose)`: ChaCha8 keyed by `seed`, on the
/// stream numbered by `purpose`.
pub fn rng_for(seed: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

pub const KERNELS: [&str; 4] = ["product", "cosine", "abs-diff", "squared-diff"];

type Kernel = fn(&[f64], &[f64]) -> f64;

fn kernel(name: &str) -> Option<Kernel> {
    fn product(x: &[f64], y: &[f64]) -> f64 {
        x.iter().zip(y).map(|(a, b)| a * b).sum()
    }
    fn cosine(x: &[f64], y: &[f64]) -> f64 {
        (std::f64::consts::PI * (x[0] - y[0])).cos()
    }
    fn abs_diff(x: &[f64], y: &[f64]) -> f64 {
        (x[0] - y[0]).abs()
    }
    fn squared_diff(x: &[f64], y: &[f64]) -> f64 {
        (x[0] - y[0]).powi(2)
    }
    match name {
        "product" => Some(product),
        "cosine" => Some(cosine),
        "abs-diff" => Some(abs_diff),
        "squared-diff" => Some(squared_diff),
        _ => None,
    }
}

fn generator(name: &str) -> Option<Box<dyn GeneratorFamily>> {
    match name {
        "shift" => Some(Box::new(ShiftGenerator)),
        _ => None,
    }
}

fn discriminator(name: &str, bandwidth: f64) -> Option<Box<dyn DiscriminatorFamily>> {
    match name {
        "gaussian-bump" => Some(Box::new(GaussianBumpDiscriminator { bandwidth })),
        "tanh" => Some(Box::new(TanhDiscriminator)),
        _ => None,
    }
}

fn check_regularization(r: &Option<Regularization>) -> Result<()> {
    match r {
        Some(r) if !(r.sigma_nu > 0.0 && r.sigma_mu > 0.0) => Err(CliError::Config(
            "regularization strengths must be positive".into(),
        )),
        _ => Ok(()),
    }
}

fn check_grid(what: &str, g: &GridSpec) -> Result<()> {
    if g.points < 2 || !(g.hi > g.lo) {
        return Err(CliError::Config(format!(
            "{what} needs at least 2 points and hi > lo"
        )));
    }
    Ok(())
}

/// Name resolution and parameter checks, without building anything.
pub fn validate_game(spec: &GameSpec) -> Result<()> {
    match spec {
        GameSpec::MatchingPennies { regularization } => check_regularization(regularization),
        GameSpec::RandomMatrix {
            k_nu,
            k_mu,
            entry_range,
            regularization,
        } => {
            if *k_nu == 0 || *k_mu == 0 {
                return Err(CliError::Config("random-matrix sizes must be positive".into()));
            }
            if !(entry_range[1] > entry_range[0]) {
                return Err(CliError::Config("entry_range must satisfy lo < hi".into()));
            }
            check_regularization(regularization)
        }
        GameSpec::Kernel {
            name,
            k_nu,
            k_mu,
            range,
            regularization,
        } => {
            if kernel(name).is_none() {
                return Err(CliError::Config(format!(
                    "unknown kernel '{name}' (known: {})",
                    KERNELS.join(", ")
                )));
            }
            if *k_nu < 2 || *k_mu < 2 || !(range[1] > range[0]) {
                return Err(CliError::Config("kernel grids need ≥ 2 points and lo < hi".into()));
            }
            check_regularization(regularization)
        }
        GameSpec::GanToy(g) => {
            if generator(&g.generator).is_none() {
                return Err(CliError::Config(format!("unknown generator family '{}'", g.generator)));
            }
            if discriminator(&g.discriminator, g.bandwidth).is_none() {
                return Err(CliError::Config(format!(
                    "unknown discriminator family '{}'",
                    g.discriminator
                )));
            }
            if !(g.bandwidth > 0.0) || g.samples == 0 {
                return Err(CliError::Config("GAN bandwidth and sample count must be positive".into()));
            }
            check_grid("theta_g", &g.theta_g)?;
            check_grid("theta_d", &g.theta_d)
        }
    }
}

#[derive(Debug, Clone)]
pub enum GamePayoff {
    Bilinear(BilinearPayoff),
    Regularized(RegularizedBilinearPayoff),
}

impl GamePayoff {
    pub fn as_payoff(&self) -> &dyn Payoff {
        match self {
            GamePayoff::Bilinear(b) => b,
            GamePayoff::Regularized(r) => r,
        }
    }

    pub fn bilinear_part(&self) -> &BilinearPayoff {
        match self {
            GamePayoff::Bilinear(b) => b,
            GamePayoff::Regularized(r) => r.base(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Game {
    pub payoff: GamePayoff,
    /// An equilibrium, when one is known in closed form or computable.
    pub mne: Option<(DiscreteMeasure, DiscreteMeasure)>,
    /// Generator grid step and true shift, for GAN toys.
    pub gan: Option<GanInfo>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanInfo {
    pub true_shift: f64,
    pub cell: f64,
}

impl Game {
    pub fn payoff(&self) -> &dyn Payoff {
        self.payoff.as_payoff()
    }

    pub fn k_nu(&self) -> usize {
        self.payoff().grid_nu().len()
    }

    pub fn k_mu(&self) -> usize {
        self.payoff().grid_mu().len()
    }
}

fn grid(spec: &GridSpec) -> Result<Arc<StrategyGrid>> {
    Ok(StrategyGrid::uniform_1d(spec.lo, spec.hi, spec.points)?.into_shared())
}

/// Standard normal source samples and shifted data samples, each on its own
/// stream of `data_seed`.
pub fn gan_samples(spec: &GanSpec) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut src = rng_for(spec.data_seed, Purpose::GanSource);
    let mut dat = rng_for(spec.data_seed, Purpose::GanData);
    let source = (0..spec.samples)
        .map(|_| vec![src.sample::<f64, _>(StandardNormal)])
        .collect();
    let data = (0..spec.samples)
        .map(|_| vec![dat.sample::<f64, _>(StandardNormal) + spec.true_shift])
        .collect();
    (source, data)
}

fn regularize(base: BilinearPayoff, reg: &Option<Regularization>) -> Result<GamePayoff> {
    Ok(match reg {
        None => GamePayoff::Bilinear(base),
        Some(r) => GamePayoff::Regularized(RegularizedBilinearPayoff::with_uniform_references(
            base,
            r.sigma_nu,
            r.sigma_mu,
        )?),
    })
}

const MNE_TOL: f64 = 1e-12;
const MNE_MAX_ITERATIONS: usize = 1_000_000;

/// Builds the game for one run seed.
pub fn build_game(spec: &GameSpec, seed: u64) -> Result<Game> {
    validate_game(spec)?;
    let (payoff, gan) = match spec {
        GameSpec::MatchingPennies { regularization } => {
            (regularize(BilinearPayoff::matching_pennies(), regularization)?, None)
        }
        GameSpec::RandomMatrix {
            k_nu,
            k_mu,
            entry_range,
            regularization,
        } => {
            let mut rng = rng_for(seed, Purpose::Game);
            let [lo, hi] = *entry_range;
            let data = (0..k_nu * k_mu).map(|_| rng.random_range(lo..=hi)).collect();
            let a = DenseMatrix::new(*k_nu, *k_mu, data)?;
            let gn = StrategyGrid::uniform_1d(0.0, 1.0, *k_nu)?.into_shared();
            let gm = StrategyGrid::uniform_1d(0.0, 1.0, *k_mu)?.into_shared();
            (regularize(BilinearPayoff::new(a, gn, gm)?, regularization)?, None)
        }
        GameSpec::Kernel {
            name,
            k_nu,
            k_mu,
            range,
            regularization,
        } => {
            let k = kernel(name).expect("validated");
            let gn = StrategyGrid::uniform_1d(range[0], range[1], *k_nu)?.into_shared();
            let gm = StrategyGrid::uniform_1d(range[0], range[1], *k_mu)?.into_shared();
            (regularize(bilinear_from_kernel(k, gn, gm)?, regularization)?, None)
        }
        GameSpec::GanToy(g) => {
            let (source, data) = gan_samples(g);
            let gen = generator(&g.generator).expect("validated");
            let disc = discriminator(&g.discriminator, g.bandwidth).expect("validated");
            let b = gan_payoff_matrix(gen.as_ref(), grid(&g.theta_g)?, disc.as_ref(), grid(&g.theta_d)?, &source, &data)?;
            let cell = (g.theta_g.hi - g.theta_g.lo) / (g.theta_g.points - 1) as f64;
            (
                GamePayoff::Bilinear(b),
                Some(GanInfo {
                    true_shift: g.true_shift,
                    cell,
                }),
            )
        }
    };
    let mne = match (&payoff, spec) {
        (GamePayoff::Regularized(r), _) => Some(mne_regularized(r, MNE_TOL, MNE_MAX_ITERATIONS)?),
        (GamePayoff::Bilinear(b), GameSpec::MatchingPennies { .. }) => Some((
            DiscreteMeasure::uniform(b.grid_nu().clone()),
            DiscreteMeasure::uniform(b.grid_mu().clone()),
        )),
        _ => None,
    };
    Ok(Game { payoff, mne, gan })
}

pub fn build_geometries(spec: &GeometrySpec, game: &Game) -> Result<Geometries> {
    let p = game.payoff();
    Ok(match spec {
        GeometrySpec::Entropy => Geometries::uniform_entropy(p),
        GeometrySpec::Tsallis { q } => Geometries::new(
            BregmanGeometry::separable(Phi::Tsallis { q: *q }, DiscreteMeasure::uniform(p.grid_nu().clone()))?,
            BregmanGeometry::separable(Phi::Tsallis { q: *q }, DiscreteMeasure::uniform(p.grid_mu().clone()))?,
        ),
    })
}

/// Mass of `nu` on generator parameters within one grid cell of the true
/// shift.
pub fn mass_near_shift(nu: &DiscreteMeasure, info: &GanInfo) -> f64 {
    nu.grid()
        .points()
        .iter()
        .zip(nu.weights())
        .filter(|(x, _)| (x[0] - info.true_shift).abs() <= info.cell * (1.0 + 1e-9))
        .map(|(_, w)| w)
        .sum()
}
