//! Episode evaluation and the mean / MAD summaries used in result tables.

use std::fmt;

use rayon::prelude::*;

use crate::env::{run_episode, EnvConfig, EpisodeResult, Policy, PortfolioEnv};
use crate::error::Result;
use crate::rng::{stream, Domain};

pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Mean absolute deviation about the mean.
pub fn mad(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    Some(xs.iter().map(|x| (x - m).abs()).sum::<f64>() / xs.len() as f64)
}

/// Sample standard deviation (n - 1 denominator).
pub fn std_dev(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    Some((xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt())
}

/// Growth statistics over a set of episodes. Bankrupt episodes are counted
/// but excluded from the mean and MAD, which are `None` when every episode
/// went bankrupt.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalStats {
    pub episodes: usize,
    pub bankruptcies: usize,
    pub mean_growth: Option<f64>,
    pub mad: Option<f64>,
    pub growths: Vec<f64>,
}

impl EvalStats {
    pub fn from_growths(growths: &[Option<f64>]) -> Self {
        let ok: Vec<f64> = growths.iter().flatten().copied().collect();
        Self {
            episodes: growths.len(),
            bankruptcies: growths.len() - ok.len(),
            mean_growth: mean(&ok),
            mad: mad(&ok),
            growths: ok,
        }
    }

    /// Standard error of the mean growth.
    pub fn std_error(&self) -> Option<f64> {
        std_dev(&self.growths).map(|s| s / (self.growths.len() as f64).sqrt())
    }
}

impl fmt::Display for EvalStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
        write!(
            f,
            "mean growth {}  MAD {}  bankruptcies {}/{}",
            opt(self.mean_growth),
            opt(self.mad),
            self.bankruptcies,
            self.episodes
        )
    }
}

/// Runs `n_episodes` of a policy in parallel. Episode `i` always uses the
/// evaluation path stream `(seed, i)`, so different policies evaluated with
/// the same seed see the same markets.
pub fn evaluate_policy<P, F>(config: &EnvConfig, make_policy: F, n_episodes: usize, seed: u64) -> Result<EvalStats>
where
    P: Policy,
    F: Fn() -> P + Sync,
{
    let results = run_episodes(config, make_policy, n_episodes, seed, false)?;
    Ok(EvalStats::from_growths(&results.iter().map(|r| r.growth).collect::<Vec<_>>()))
}

pub fn run_episodes<P, F>(
    config: &EnvConfig,
    make_policy: F,
    n_episodes: usize,
    seed: u64,
    record_trace: bool,
) -> Result<Vec<EpisodeResult>>
where
    P: Policy,
    F: Fn() -> P + Sync,
{
    PortfolioEnv::new(config.clone())?;
    (0..n_episodes)
        .into_par_iter()
        .map(|i| {
            let mut env = PortfolioEnv::new(config.clone())?;
            let mut policy = make_policy();
            run_episode(&mut env, &mut policy, &mut stream(seed, Domain::EvalPath, i as u64), record_trace)
        })
        .collect()
}
