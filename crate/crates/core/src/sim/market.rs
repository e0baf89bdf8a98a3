use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;

/// Drift, volatility and correlation of the stock universe plus the cash rate,
/// all per annum.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketParams {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub corr: DMatrix<f64>,
    pub cash_rate: f64,
    chol: DMatrix<f64>,
}

impl MarketParams {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>, corr: DMatrix<f64>, cash_rate: f64) -> Result<Self> {
        let n = mu.len();
        if n == 0 {
            return Err(Error::config("market needs at least one asset"));
        }
        if sigma.len() != n || corr.nrows() != n || corr.ncols() != n {
            return Err(Error::config(format!(
                "dimension mismatch: {} drifts, {} volatilities, {}x{} correlation",
                n,
                sigma.len(),
                corr.nrows(),
                corr.ncols()
            )));
        }
        if mu.iter().any(|v| !v.is_finite()) || !cash_rate.is_finite() {
            return Err(Error::config("drifts and cash rate must be finite"));
        }
        if let Some((i, s)) = sigma.iter().enumerate().find(|(_, s)| !(**s >= 0.0 && s.is_finite())) {
            return Err(Error::config(format!("volatility {i} must be non-negative, got {s}")));
        }
        for i in 0..n {
            if (corr[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::config(format!("correlation diagonal entry {i} is {}, expected 1", corr[(i, i)])));
            }
            for j in 0..n {
                let c = corr[(i, j)];
                if !(-1.0..=1.0).contains(&c) {
                    return Err(Error::config(format!("correlation ({i},{j}) = {c} outside [-1, 1]")));
                }
                if (c - corr[(j, i)]).abs() > 1e-12 {
                    return Err(Error::config(format!("correlation matrix is not symmetric at ({i},{j})")));
                }
            }
        }
        let chol = linalg::cholesky(&corr)?;
        Ok(Self { mu, sigma, corr, cash_rate, chol })
    }

    /// Builds parameters from the upper triangle of the correlation matrix,
    /// listed row by row: `(0,1), (0,2), ..., (1,2), ...`.
    pub fn from_upper(mu: Vec<f64>, sigma: Vec<f64>, upper: &[f64], cash_rate: f64) -> Result<Self> {
        let n = mu.len();
        if upper.len() != n * n.saturating_sub(1) / 2 {
            return Err(Error::config(format!("expected {} correlations, got {}", n * (n - 1) / 2, upper.len())));
        }
        let mut corr = DMatrix::<f64>::identity(n, n);
        let mut k = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                corr[(i, j)] = upper[k];
                corr[(j, i)] = upper[k];
                k += 1;
            }
        }
        Self::new(mu, sigma, corr, cash_rate)
    }

    pub fn n_assets(&self) -> usize {
        self.mu.len()
    }

    /// Lower Cholesky factor of the correlation matrix.
    pub fn corr_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// Annualised covariance `sigma_i sigma_j rho_ij`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let n = self.n_assets();
        DMatrix::from_fn(n, n, |i, j| self.sigma[i] * self.sigma[j] * self.corr[(i, j)])
    }

    /// Expected per-period log return `(mu_i - sigma_i^2 / 2) dt`.
    pub fn log_drift(&self, dt: f64) -> Vec<f64> {
        self.mu.iter().zip(&self.sigma).map(|(m, s)| (m - 0.5 * s * s) * dt).collect()
    }

    /// Sub-universe restricted to the listed assets.
    pub fn select(&self, assets: &[usize]) -> Result<Self> {
        if let Some(a) = assets.iter().find(|a| **a >= self.n_assets()) {
            return Err(Error::config(format!("asset index {a} out of range")));
        }
        let mu = assets.iter().map(|&i| self.mu[i]).collect();
        let sigma = assets.iter().map(|&i| self.sigma[i]).collect();
        let corr = DMatrix::from_fn(assets.len(), assets.len(), |i, j| self.corr[(assets[i], assets[j])]);
        Self::new(mu, sigma, corr, self.cash_rate)
    }

    /// VUG / VTV / GLD estimates with a 4% cash rate.
    pub fn etf_universe() -> Self {
        Self::from_upper(vec![0.124, 0.105, 0.072], vec![0.255, 0.209, 0.145], &[0.81, 0.12, 0.08], 0.04)
            .expect("tabulated parameters are valid")
    }

    /// Bullish regime of the US / Germany / UK two-regime market.
    pub fn bull_regime() -> Self {
        Self::from_upper(vec![0.103, 0.138, 0.140], vec![0.120, 0.166, 0.166], &[0.41, 0.26, 0.43], 0.05)
            .expect("tabulated parameters are valid")
    }

    /// Bearish regime of the US / Germany / UK two-regime market.
    pub fn bear_regime() -> Self {
        Self::from_upper(vec![-0.021, 0.097, 0.042], vec![0.216, 0.379, 0.288], &[0.60, 0.45, 0.45], 0.01)
            .expect("tabulated parameters are valid")
    }

    /// One stock with drift 12%, volatility 20%, cash at 4%.
    pub fn single_asset() -> Self {
        Self::new(vec![0.12], vec![0.2], DMatrix::identity(1, 1), 0.04).expect("valid")
    }
}

/// A set of market regimes with a per-period transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeModel {
    pub regimes: Vec<MarketParams>,
    pub transition: DMatrix<f64>,
    pub initial_dist: Vec<f64>,
}

impl RegimeModel {
    pub fn new(regimes: Vec<MarketParams>, transition: DMatrix<f64>, initial_dist: Vec<f64>) -> Result<Self> {
        let k = regimes.len();
        if k == 0 {
            return Err(Error::config("regime model needs at least one regime"));
        }
        let n = regimes[0].n_assets();
        if regimes.iter().any(|r| r.n_assets() != n) {
            return Err(Error::config("all regimes must cover the same assets"));
        }
        if transition.nrows() != k || transition.ncols() != k || initial_dist.len() != k {
            return Err(Error::config(format!(
                "{k} regimes need a {k}x{k} transition matrix and {k} initial probabilities"
            )));
        }
        check_stochastic(&transition)?;
        if initial_dist.iter().any(|p| !(*p >= 0.0)) || (initial_dist.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::config("initial distribution must be non-negative and sum to 1"));
        }
        Ok(Self { regimes, transition, initial_dist })
    }

    pub fn single(params: MarketParams) -> Self {
        Self { regimes: vec![params], transition: DMatrix::identity(1, 1), initial_dist: vec![1.0] }
    }

    /// Two-regime US / Germany / UK market with the daily transition table.
    pub fn bull_bear() -> Self {
        let p = DMatrix::from_row_slice(2, 2, &[0.997, 0.003, 0.009, 0.991]);
        Self::new(vec![MarketParams::bull_regime(), MarketParams::bear_regime()], p, vec![0.75, 0.25])
            .expect("tabulated parameters are valid")
    }

    pub fn n_regimes(&self) -> usize {
        self.regimes.len()
    }

    pub fn n_assets(&self) -> usize {
        self.regimes[0].n_assets()
    }
}

pub(crate) fn check_stochastic(p: &DMatrix<f64>) -> Result<()> {
    if p.nrows() != p.ncols() {
        return Err(Error::config("transition matrix must be square"));
    }
    for i in 0..p.nrows() {
        let row = p.row(i);
        if row.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::config(format!("transition row {i} has a negative or NaN entry")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::config(format!("transition row {i} sums to {s}, expected 1")));
        }
    }
    Ok(())
}
