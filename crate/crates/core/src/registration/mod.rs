//! Sensor registration: estimating each in-neighbor's drift and orientation
//! relative to the local frame from exchanged multi-target densities.

mod estimate;
mod hypothesis;
mod irf;
mod total_cost;
mod triplet;

pub use estimate::{
    candidate_points, instantaneous_estimate, instantaneous_estimate_with, refine, EstimateConfig,
    InstantaneousEstimate,
};
pub use hypothesis::{hypothesis_update, Hypothesis, HypothesisConfig, HypothesisSet};
pub use irf::{build_irf, Associations, IrfComponent, IrfEval, IrfMixture};
pub use total_cost::{instantaneous_mixture, tc_update, TotalCostConfig, TotalCostState};
pub use triplet::{
    best_ordering, fit_triplet, triplet_initial_point, TripletFit, TripletInit, AMBIGUITY_TOLERANCE, PERMUTATIONS,
};

use crate::cphd::IidClusterDensity;
use crate::error::{Error, Result};
use crate::fusion::{instantaneous_cost_from, ln_card_product};

/// Coefficients `c^n = prod_j p_j(n)^{w_j}` for `n = 0..=n_max`.
pub fn cardinality_coefficients(densities: &[IidClusterDensity], weights: &[f64]) -> Result<Vec<f64>> {
    if densities.is_empty() || densities.len() != weights.len() {
        return Err(Error::InvalidArgument(format!(
            "{} densities with {} weights",
            densities.len(),
            weights.len()
        )));
    }
    let n_max = densities.iter().map(IidClusterDensity::n_max).min().unwrap_or(0);
    Ok((0..=n_max).map(|n| ln_card_product(densities, weights, n).exp()).collect())
}

/// Instantaneous cost `-ln(sum_n c^n W^n)` given the reward `W`.
pub fn instantaneous_cost(densities: &[IidClusterDensity], weights: &[f64], w: f64) -> Result<f64> {
    Ok(instantaneous_cost_from(&cardinality_coefficients(densities, weights)?, w))
}
