//! Discretised continuous-time Markov chain for the market regime.

use nalgebra::DMatrix;
use rand::Rng;

use super::market::{check_stochastic, RegimeModel};
use crate::error::{Error, Result};
use crate::linalg;

/// Entries of a rescaled matrix below this are rejected; entries between it
/// and zero are round-off and get clamped.
pub const NEGATIVE_ENTRY_TOL: f64 = 1e-9;

fn sample_categorical<R: Rng + ?Sized>(probs: impl Iterator<Item = f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        acc += p;
        if p > 0.0 {
            last = i;
        }
        if u < acc {
            return i;
        }
    }
    last
}

/// Samples `Z_0, ..., Z_n` with `Z_0` from the initial distribution and each
/// subsequent label from the transition row of its predecessor.
pub fn sample_regime_path<R: Rng + ?Sized>(model: &RegimeModel, n_periods: usize, rng: &mut R) -> Vec<usize> {
    let mut path = Vec::with_capacity(n_periods + 1);
    if model.n_regimes() == 1 {
        path.resize(n_periods + 1, 0);
        return path;
    }
    let mut z = sample_categorical(model.initial_dist.iter().copied(), rng);
    path.push(z);
    for _ in 0..n_periods {
        z = sample_categorical(model.transition.row(z).iter().copied(), rng);
        path.push(z);
    }
    path
}

/// Re-expresses a transition matrix measured over `from_dt` as one over
/// `to_dt`, i.e. `exp((to_dt / from_dt) log P)`.
///
/// Two-state chains use the spectral form `P = Pi + lambda (I - Pi)`, where `Pi`
/// has the stationary distribution in every row and `lambda = 1 - a - b`, so
/// `P^s = Pi + lambda^s (I - Pi)`. Larger chains go through the general
/// matrix logarithm.
pub fn rescale_transition(p: &DMatrix<f64>, from_dt: f64, to_dt: f64) -> Result<DMatrix<f64>> {
    check_stochastic(p).map_err(|e| Error::Markov(e.to_string()))?;
    if !(from_dt > 0.0 && to_dt > 0.0) {
        return Err(Error::Markov("time steps must be positive".into()));
    }
    let s = to_dt / from_dt;
    let k = p.nrows();
    let raw = if k == 1 {
        p.clone()
    } else if k == 2 {
        let a = p[(0, 1)];
        let b = p[(1, 0)];
        if a + b == 0.0 {
            p.clone()
        } else {
            let lambda = 1.0 - a - b;
            if lambda <= 0.0 {
                return Err(Error::Markov(format!(
                    "second eigenvalue {lambda} is not positive; no real principal logarithm"
                )));
            }
            let pi = [b / (a + b), a / (a + b)];
            let ls = lambda.powf(s);
            DMatrix::from_fn(2, 2, |i, j| {
                let id = if i == j { 1.0 } else { 0.0 };
                pi[j] + ls * (id - pi[j])
            })
        }
    } else {
        let q = linalg::logm(p)?;
        linalg::expm(&(q * s))
    };
    let mut out = raw;
    for i in 0..k {
        for j in 0..k {
            let v = out[(i, j)];
            if !v.is_finite() {
                return Err(Error::Markov("rescaled matrix is not finite".into()));
            }
            if v < -NEGATIVE_ENTRY_TOL {
                return Err(Error::Markov(format!(
                    "rescaled entry ({i},{j}) = {v:e} is negative; the generator is invalid"
                )));
            }
            if v < 0.0 {
                out[(i, j)] = 0.0;
            }
        }
        let sum: f64 = out.row(i).sum();
        for j in 0..k {
            out[(i, j)] /= sum;
        }
    }
    Ok(out)
}

/// Infinitesimal generator `Q = log(P) / dt`.
pub fn generator(p: &DMatrix<f64>, dt: f64) -> Result<DMatrix<f64>> {
    Ok(linalg::logm(p)? / dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use crate::sim::market::MarketParams;

    fn daily() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.997, 0.003, 0.009, 0.991])
    }

    #[test]
    fn absorbing_chain_stays_put() {
        let p = MarketParams::etf_universe();
        let m = RegimeModel::new(vec![p.clone(), p], DMatrix::identity(2, 2), vec![1.0, 0.0]).unwrap();
        let path = sample_regime_path(&m, 500, &mut stream(1, Domain::Simulation, 0));
        assert_eq!(path.len(), 501);
        assert!(path.iter().all(|z| *z == 0));
    }

    #[test]
    fn single_regime_is_all_zero() {
        let m = RegimeModel::single(MarketParams::etf_universe());
        let path = sample_regime_path(&m, 10, &mut stream(1, Domain::Simulation, 0));
        assert_eq!(path, vec![0; 11]);
    }

    #[test]
    fn switch_frequencies_match_table() {
        let m = RegimeModel::bull_bear();
        let n = 1_000_000;
        let path = sample_regime_path(&m, n, &mut stream(11, Domain::Simulation, 0));
        let mut counts = [[0usize; 2]; 2];
        for w in path.windows(2) {
            counts[w[0]][w[1]] += 1;
        }
        for (i, expect) in [0.003, 0.009].iter().enumerate() {
            let from = counts[i][0] + counts[i][1];
            let freq = counts[i][1 - i] as f64 / from as f64;
            let se = (expect * (1.0 - expect) / from as f64).sqrt();
            assert!((freq - expect).abs() < 3.0 * se, "row {i}: {freq} vs {expect} (se {se})");
        }
        // Long-run occupancy against the stationary (0.75, 0.25); the chain is
        // autocorrelated so the standard error is inflated by (1+l)/(1-l).
        let lambda: f64 = 1.0 - 0.012;
        let occ = path.iter().filter(|z| **z == 0).count() as f64 / path.len() as f64;
        let se = (0.75 * 0.25 / path.len() as f64 * (1.0 + lambda) / (1.0 - lambda)).sqrt();
        assert!((occ - 0.75).abs() < 3.0 * se, "occupancy {occ} (se {se})");
    }

    #[test]
    fn identity_rescale() {
        let p = daily();
        let r = rescale_transition(&p, 1.0 / 256.0, 1.0 / 256.0).unwrap();
        assert!((r - &p).amax() < 1e-12);
    }

    #[test]
    fn doubling_is_squaring() {
        let p = daily();
        let r = rescale_transition(&p, 0.5, 1.0).unwrap();
        assert!((r - &p * &p).amax() < 1e-10);
        let p3 = DMatrix::from_row_slice(3, 3, &[0.9, 0.07, 0.03, 0.1, 0.85, 0.05, 0.02, 0.08, 0.9]);
        let r3 = rescale_transition(&p3, 1.0, 2.0).unwrap();
        assert!((r3 - &p3 * &p3).amax() < 1e-10);
    }

    #[test]
    fn monthly_round_trip() {
        let p = daily();
        let monthly = rescale_transition(&p, 1.0 / 256.0, 1.0 / 12.0).unwrap();
        let back = rescale_transition(&monthly, 1.0 / 12.0, 1.0 / 256.0).unwrap();
        assert!((back - &p).amax() < 1e-8);
        // The general logarithm agrees with the two-state closed form.
        let q = generator(&p, 1.0 / 256.0).unwrap();
        let via_log = linalg::expm(&(q / 12.0));
        assert!((via_log - &monthly).amax() < 1e-10);
    }

    #[test]
    fn negative_eigenvalue_is_rejected() {
        let flip = DMatrix::from_row_slice(2, 2, &[0.2, 0.8, 0.9, 0.1]);
        assert!(rescale_transition(&flip, 1.0, 0.5).is_err());
    }
}
