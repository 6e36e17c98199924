//! Learned factorized prior over bottleneck channels and the integer tables
//! that let the range coder use it.

mod prior;
mod table;

pub use prior::{FactorizedPrior, LIKELIHOOD_FLOOR};
pub use table::{
    build_cdf_tables, build_tables, channel_table, quantize, quantize_pmf, support_bounds,
    CdfTable, ChannelTable, DEFAULT_TAIL_MASS, MAX_SUPPORT,
};

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::error::Result;
use crate::nn::ParamStore;

/// Adds `U(-1/2, 1/2)` noise, the training-time proxy for rounding.
pub fn add_uniform_noise<R: Rng>(y: ArrayView2<f64>, rng: &mut R) -> Array2<f64> {
    y.mapv(|v| v + rng.random_range(-0.5..0.5))
}

/// Likelihoods of `y` after adding uniform noise.
pub fn noisy_likelihood<R: Rng>(
    prior: &FactorizedPrior,
    params: &ParamStore,
    y: ArrayView2<f64>,
    rng: &mut R,
) -> Result<Array2<f64>> {
    prior.likelihood(params, add_uniform_noise(y, rng).view())
}

/// `sum -log2 p(y)`.
pub fn estimate_bits(prior: &FactorizedPrior, params: &ParamStore, y: ArrayView2<f64>) -> Result<f64> {
    prior.bits(params, y)
}
