//! Market simulation: correlated GBM prices and a regime-switching chain.

mod gbm;
mod market;
mod markov;

pub use gbm::{generate_path, step_prices, PricePath};
pub use market::{MarketParams, RegimeModel};
pub use markov::{generator, rescale_transition, sample_regime_path, NEGATIVE_ENTRY_TOL};

pub(crate) use market::check_stochastic;
