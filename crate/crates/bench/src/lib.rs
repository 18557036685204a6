//! Fixtures shared by the solver benchmarks.

use mda_core::{BilinearPayoff, DenseMatrix, DiscreteMeasure, Geometries, StrategyGrid};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A `k × k` bilinear game on `[0, 1]` with entries uniform in `[-1, 1]`.
pub fn random_game(k: usize, seed: u64) -> BilinearPayoff {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..k * k).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let matrix = DenseMatrix::new(k, k, data).expect("k > 0");
    let grid = StrategyGrid::uniform_1d(0.0, 1.0, k).expect("k > 0").into_shared();
    BilinearPayoff::new(matrix, grid.clone(), grid).expect("shapes agree")
}

/// The game, entropic geometries and a uniform start.
pub fn fixture(k: usize, seed: u64) -> (BilinearPayoff, Geometries, DiscreteMeasure, DiscreteMeasure) {
    let game = random_game(k, seed);
    let geoms = Geometries::uniform_entropy(&game);
    let (nu0, mu0) = mda_core::solvers::uniform_start(&game);
    (game, geoms, nu0, mu0)
}

/// A random interior measure on the game's first grid.
pub fn random_measure(game: &BilinearPayoff, seed: u64) -> DiscreteMeasure {
    use mda_core::Payoff;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DiscreteMeasure::random_interior(game.grid_nu().clone(), &mut rng)
}
