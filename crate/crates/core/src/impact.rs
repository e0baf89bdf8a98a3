//! Temporary and permanent market impact.
//!
//! A trade of `Y` shares executed at a constant rate over one period moves the
//! execution price by `eta * Y / dt` (temporary) and `gamma * y(t)` (permanent,
//! where `y(t)` is the amount traded so far). The execution cost uses the
//! linear-path approximation
//!
//! ```text
//! C = Y [ 1/2 (1 + eta Y / dt) (S_end - S_start) + gamma Y (S_end / 3 + S_start / 6) ]
//! ```
//!
//! which is the excess over paying `Y * S_start`. The permanent part also
//! leaves a lasting multiplicative factor `exp(gamma Y)` on the price.
//!
//! The temporary term above is not the exact integral along a linear path
//! (that would carry `(eta/dt) Y^2 (S_start + S_end) / 2`); the linearised
//! form is kept as the model definition.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpactParams {
    /// Temporary impact per unit trading rate (shares per year).
    pub eta: f64,
    /// Permanent impact per share.
    pub gamma: f64,
}

impl ImpactParams {
    pub fn new(eta: f64, gamma: f64) -> Result<Self> {
        if !(eta >= 0.0 && eta.is_finite()) || !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::config(format!("impact coefficients must be non-negative, got eta={eta}, gamma={gamma}")));
        }
        Ok(Self { eta, gamma })
    }

    pub fn none() -> Self {
        Self { eta: 0.0, gamma: 0.0 }
    }

    /// eta = 1e-9, gamma = 1e-7.
    pub fn standard() -> Self {
        Self { eta: 1e-9, gamma: 1e-7 }
    }
}

/// Cumulative permanent-impact factor per asset.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactState {
    pub multipliers: Vec<f64>,
}

impl ImpactState {
    pub fn new(n_assets: usize) -> Self {
        Self { multipliers: vec![1.0; n_assets] }
    }
}

pub fn trade_cost(s_start: f64, s_end: f64, shares: f64, dt: f64, params: &ImpactParams) -> f64 {
    let y = shares;
    y * (0.5 * (1.0 + params.eta * y / dt) * (s_end - s_start) + params.gamma * y * (s_end / 3.0 + s_start / 6.0))
}

/// Folds one rebalance into the permanent multipliers: `m_i <- m_i exp(gamma Y_i)`.
pub fn apply_permanent_impact(state: &ImpactState, shares: &[f64], params: &ImpactParams) -> ImpactState {
    let mut next = state.clone();
    apply_permanent_impact_in_place(&mut next, shares, params);
    next
}

pub(crate) fn apply_permanent_impact_in_place(state: &mut ImpactState, shares: &[f64], params: &ImpactParams) {
    debug_assert_eq!(state.multipliers.len(), shares.len());
    if params.gamma == 0.0 {
        return;
    }
    for (m, y) in state.multipliers.iter_mut().zip(shares) {
        *m *= (params.gamma * y).exp();
    }
}
