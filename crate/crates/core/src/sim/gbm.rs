//! Correlated geometric Brownian motion with regime switching.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;

use super::market::{MarketParams, RegimeModel};
use super::markov::sample_regime_path;
use crate::error::Result;

/// Advances prices one period with the exact log-normal update
/// `S' = S exp((mu - sigma^2/2) dt + sigma dB)`, `dB = sqrt(dt) L z`.
pub fn step_prices(prices: &[f64], params: &MarketParams, dt: f64, draws: &[f64]) -> Vec<f64> {
    let mut out = prices.to_vec();
    step_prices_in_place(&mut out, params, dt, draws);
    out
}

pub(crate) fn step_prices_in_place(prices: &mut [f64], params: &MarketParams, dt: f64, draws: &[f64]) {
    let n = params.n_assets();
    debug_assert_eq!(prices.len(), n);
    debug_assert_eq!(draws.len(), n);
    let l = params.corr_factor();
    let sqrt_dt = dt.sqrt();
    for i in 0..n {
        let mut db = 0.0;
        for (k, z) in draws.iter().enumerate().take(i + 1) {
            db += l[(i, k)] * z;
        }
        let s = params.sigma[i];
        prices[i] *= ((params.mu[i] - 0.5 * s * s) * dt + s * sqrt_dt * db).exp();
    }
}

/// A simulated path of unaffected prices.
///
/// Rows run from `t = -warmup` to `t = n_periods`; the row at `t = 0` is all
/// ones. `regime(t)` is the regime governing the move from `t` to `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePath {
    n_assets: usize,
    warmup: usize,
    n_periods: usize,
    pub dt: f64,
    prices: Vec<f64>,
    regimes: Vec<usize>,
}

impl PricePath {
    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn warmup(&self) -> usize {
        self.warmup
    }

    fn index(&self, t: isize) -> usize {
        let i = t + self.warmup as isize;
        assert!(i >= 0 && (i as usize) <= self.warmup + self.n_periods, "period {t} outside the path");
        i as usize
    }

    pub fn prices(&self, t: isize) -> &[f64] {
        let i = self.index(t);
        &self.prices[i * self.n_assets..(i + 1) * self.n_assets]
    }

    pub fn regime(&self, t: isize) -> usize {
        self.regimes[self.index(t)]
    }

    /// Regime labels for the episode proper, `t = 0..=n_periods`.
    pub fn episode_regimes(&self) -> &[usize] {
        &self.regimes[self.warmup..]
    }

    /// Per-period log returns over the rows `t0..=t1`, one row per move.
    pub fn log_returns(&self, t0: isize, t1: isize) -> Vec<Vec<f64>> {
        ((t0 + 1)..=t1)
            .map(|t| {
                let prev = self.prices(t - 1);
                self.prices(t).iter().zip(prev).map(|(a, b)| (a / b).ln()).collect()
            })
            .collect()
    }

    /// Writes the episode rows as `t,asset_0,...,asset_{n-1},regime`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "t")?;
        for i in 0..self.n_assets {
            write!(w, ",asset_{i}")?;
        }
        writeln!(w, ",regime")?;
        for t in 0..=self.n_periods as isize {
            write!(w, "{t}")?;
            for p in self.prices(t) {
                write!(w, ",{p}")?;
            }
            writeln!(w, ",{}", self.regime(t))?;
        }
        Ok(())
    }
}

/// Simulates `warmup` pre-episode periods followed by `n_periods` episode
/// periods, then rescales every asset so its price at the episode start is 1.
///
/// The regime chain starts `warmup` periods before the episode, so warm-up
/// prices follow whichever regimes the chain visits.
pub fn generate_path<R: Rng + ?Sized>(
    model: &RegimeModel,
    n_periods: usize,
    dt: f64,
    warmup: usize,
    rng: &mut R,
) -> PricePath {
    let n = model.n_assets();
    let rows = warmup + n_periods + 1;
    let regimes = sample_regime_path(model, rows - 1, rng);
    let mut prices = vec![1.0; rows * n];
    let mut draws = vec![0.0; n];
    for r in 0..rows - 1 {
        for z in draws.iter_mut() {
            *z = rng.sample(StandardNormal);
        }
        let (head, tail) = prices.split_at_mut((r + 1) * n);
        let next = &mut tail[..n];
        next.copy_from_slice(&head[r * n..]);
        step_prices_in_place(next, &model.regimes[regimes[r]], dt, &draws);
    }
    let base: Vec<f64> = prices[warmup * n..(warmup + 1) * n].to_vec();
    for row in prices.chunks_mut(n) {
        for (p, b) in row.iter_mut().zip(&base) {
            *p /= b;
        }
    }
    PricePath { n_assets: n, warmup, n_periods, dt, prices, regimes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use nalgebra::DMatrix;

    #[test]
    fn deterministic_limit() {
        let p = MarketParams::new(vec![0.1], vec![0.0], DMatrix::identity(1, 1), 0.0).unwrap();
        let s = step_prices(&[1.0], &p, 1.0, &[0.0]);
        assert!((s[0] - 0.1f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn zero_noise_step() {
        let p = MarketParams::etf_universe();
        let s = step_prices(&[1.0; 3], &p, 0.5, &[0.0; 3]);
        for i in 0..3 {
            let expect = ((p.mu[i] - 0.5 * p.sigma[i].powi(2)) * 0.5).exp();
            assert!((s[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn log_return_moments() {
        // Monte Carlo oracle: sample mean and covariance of log returns
        // against the log-normal law, each within 3 standard errors.
        let p = MarketParams::etf_universe();
        let dt = 1.0 / 256.0;
        let n = 100_000;
        let mut rng = stream(3, Domain::Simulation, 0);
        let mut rets = vec![[0.0f64; 3]; n];
        let mut draws = [0.0; 3];
        for r in rets.iter_mut() {
            for z in draws.iter_mut() {
                *z = rng.sample(StandardNormal);
            }
            let s = step_prices(&[1.0; 3], &p, dt, &draws);
            for i in 0..3 {
                r[i] = s[i].ln();
            }
        }
        let cov = p.covariance() * dt;
        let drift = p.log_drift(dt);
        for i in 0..3 {
            let mean = rets.iter().map(|r| r[i]).sum::<f64>() / n as f64;
            let se = (cov[(i, i)] / n as f64).sqrt();
            assert!((mean - drift[i]).abs() < 3.0 * se, "mean {i}");
            for j in 0..3 {
                let c = rets.iter().map(|r| (r[i] - drift[i]) * (r[j] - drift[j])).sum::<f64>() / n as f64;
                // Var of a product of jointly normal variables: s_ii s_jj + s_ij^2.
                let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / n as f64).sqrt();
                assert!((c - cov[(i, j)]).abs() < 3.0 * se, "cov {i}{j}: {c} vs {}", cov[(i, j)]);
            }
        }
        // Empirical correlation of the first pair converges to rho.
        let sd = |i: usize| (rets.iter().map(|r| (r[i] - drift[i]).powi(2)).sum::<f64>() / n as f64).sqrt();
        let c01 = rets.iter().map(|r| (r[0] - drift[0]) * (r[1] - drift[1])).sum::<f64>() / n as f64;
        let rho = c01 / (sd(0) * sd(1));
        let se = (1.0 - 0.81f64 * 0.81) / (n as f64).sqrt();
        assert!((rho - 0.81).abs() < 3.0 * se);
    }

    #[test]
    fn warmup_zero_starts_at_one() {
        let m = RegimeModel::single(MarketParams::etf_universe());
        let path = generate_path(&m, 20, 1.0 / 256.0, 0, &mut stream(1, Domain::Simulation, 0));
        assert_eq!(path.prices(0), &[1.0, 1.0, 1.0]);
        assert_eq!(path.log_returns(0, 20).len(), 20);
    }

    #[test]
    fn warmup_rescales_to_one_at_episode_start() {
        let m = RegimeModel::bull_bear();
        let path = generate_path(&m, 50, 1.0 / 256.0, 59, &mut stream(2, Domain::Simulation, 0));
        assert_eq!(path.prices(0), &[1.0, 1.0, 1.0]);
        assert!(path.prices(-59).iter().all(|p| *p > 0.0 && *p != 1.0));
        assert_eq!(path.episode_regimes().len(), 51);
    }

    #[test]
    fn zero_volatility_is_exponential() {
        let p = MarketParams::new(vec![0.08], vec![0.0], DMatrix::identity(1, 1), 0.0).unwrap();
        let m = RegimeModel::single(p);
        let dt = 1.0 / 256.0;
        let path = generate_path(&m, 256, dt, 5, &mut stream(9, Domain::Simulation, 0));
        for t in -5..=256isize {
            let expect = (0.08 * dt * t as f64).exp();
            assert!((path.prices(t)[0] / expect - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn seeds_determine_paths() {
        let m = RegimeModel::bull_bear();
        let a = generate_path(&m, 100, 1.0 / 256.0, 10, &mut stream(5, Domain::Simulation, 0));
        let b = generate_path(&m, 100, 1.0 / 256.0, 10, &mut stream(5, Domain::Simulation, 0));
        let c = generate_path(&m, 100, 1.0 / 256.0, 10, &mut stream(5, Domain::Simulation, 1));
        assert_eq!(a, b);
        for t in -10..=100isize {
            if t == 0 {
                continue;
            }
            for (x, y) in a.prices(t).iter().zip(c.prices(t)) {
                assert_ne!(x, y);
            }
        }
    }

    #[test]
    fn csv_layout() {
        let m = RegimeModel::single(MarketParams::etf_universe());
        let path = generate_path(&m, 3, 1.0 / 256.0, 2, &mut stream(1, Domain::Simulation, 0));
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,asset_0,asset_1,asset_2,regime");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1], "0,1,1,1,0");
    }
}
