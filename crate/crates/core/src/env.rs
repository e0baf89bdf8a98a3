//! Finite-horizon portfolio MDP.
//!
//! Each step rebalances to the target stock weights given by the action,
//! pays execution costs, accrues cash interest, advances the market one
//! period and books the log change in wealth as the reward. The unaffected
//! price path for the whole episode is drawn at reset, so the market noise
//! does not depend on the actions taken.

use std::collections::VecDeque;
use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};
use crate::impact::{apply_permanent_impact_in_place, trade_cost, ImpactParams, ImpactState};
use crate::rng::{stream, Domain};
use crate::sim::{generate_path, MarketParams, PricePath, RegimeModel};

/// Reward booked on the step where wealth reaches zero or below.
pub const BANKRUPTCY_REWARD: f64 = -10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub horizon_years: f64,
    pub periods_per_year: usize,
    pub n_periods: usize,
    pub window: usize,
    pub initial_wealth: f64,
    pub market: RegimeModel,
    pub impact: ImpactParams,
    pub discount: f64,
}

impl EnvConfig {
    /// Config with `n_periods = horizon_years * periods_per_year` and a
    /// discount of 0.99.
    pub fn new(
        market: RegimeModel,
        impact: ImpactParams,
        horizon_years: f64,
        periods_per_year: usize,
        window: usize,
        initial_wealth: f64,
    ) -> Result<Self> {
        let cfg = Self {
            horizon_years,
            periods_per_year,
            n_periods: (horizon_years * periods_per_year as f64).round() as usize,
            window,
            initial_wealth,
            market,
            impact,
            discount: 0.99,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Five years of 256 periods, a 60-period window and the standard impact.
    pub fn standard(market: RegimeModel, initial_wealth: f64) -> Self {
        Self::new(market, ImpactParams::standard(), 5.0, 256, 60, initial_wealth).expect("valid")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon_years > 0.0) || self.periods_per_year == 0 {
            return Err(Error::config("horizon and periods per year must be positive"));
        }
        let n = self.horizon_years * self.periods_per_year as f64;
        if (n - self.n_periods as f64).abs() > 1e-9 || self.n_periods == 0 {
            return Err(Error::config(format!(
                "n_periods = {} but horizon x periods per year = {n}",
                self.n_periods
            )));
        }
        if self.window == 0 {
            return Err(Error::config("observation window must be at least 1"));
        }
        if !(self.initial_wealth > 0.0 && self.initial_wealth.is_finite()) {
            return Err(Error::config("initial wealth must be positive"));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::config(format!("discount {} outside (0, 1]", self.discount)));
        }
        ImpactParams::new(self.impact.eta, self.impact.gamma)?;
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.periods_per_year as f64
    }

    pub fn n_assets(&self) -> usize {
        self.market.n_assets()
    }

    /// `n l + n + 1`: price window, stock weights, wealth.
    pub fn obs_dim(&self) -> usize {
        let n = self.n_assets();
        n * self.window + n + 1
    }
}

/// Flat observation vector: the window of prices (oldest first, assets
/// interleaved per period), the current stock weights, then `W_t / W_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub bankrupt: bool,
    /// Regime in force for the next period.
    pub regime: usize,
    pub cost_paid: f64,
    pub wealth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone)]
pub struct PortfolioEnv {
    config: EnvConfig,
    path: Option<PricePath>,
    t: usize,
    prices: Vec<f64>,
    history: VecDeque<Vec<f64>>,
    holdings: Vec<f64>,
    cash: f64,
    wealth: f64,
    impact: ImpactState,
    done: bool,
    bankrupt: bool,
}

impl PortfolioEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let n = config.n_assets();
        Ok(Self {
            path: None,
            t: 0,
            prices: vec![1.0; n],
            history: VecDeque::with_capacity(config.window),
            holdings: vec![0.0; n],
            cash: config.initial_wealth,
            wealth: config.initial_wealth,
            impact: ImpactState::new(n),
            done: true,
            bankrupt: false,
            config,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    /// Starts an episode on a fresh path drawn from the simulation stream of `seed`.
    pub fn reset(&mut self, seed: u64) -> Observation {
        self.reset_from_rng(&mut stream(seed, Domain::Simulation, 0))
    }

    pub fn reset_from_rng<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Observation {
        let c = &self.config;
        let path = generate_path(&c.market, c.n_periods, c.dt(), c.window - 1, rng);
        self.reset_with_path(path).expect("generated path matches the config")
    }

    pub fn reset_with_path(&mut self, path: PricePath) -> Result<Observation> {
        let c = &self.config;
        if path.n_assets() != c.n_assets() || path.n_periods() != c.n_periods || path.warmup() + 1 < c.window {
            return Err(Error::dim("price path does not match the environment config"));
        }
        let n = c.n_assets();
        self.t = 0;
        self.history.clear();
        for t in (1 - c.window as isize)..=0 {
            self.history.push_back(path.prices(t).to_vec());
        }
        self.prices = path.prices(0).to_vec();
        self.holdings = vec![0.0; n];
        self.cash = c.initial_wealth;
        self.wealth = c.initial_wealth;
        self.impact = ImpactState::new(n);
        self.done = false;
        self.bankrupt = false;
        self.path = Some(path);
        Ok(self.observe())
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.done {
            return Err(Error::Lifecycle("step called on a finished episode; call reset first".into()));
        }
        let n = self.config.n_assets();
        if action.len() != n {
            return Err(Error::dim(format!("action has {} weights, expected {n}", action.len())));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::Numerical("action contains a non-finite weight".into()));
        }
        let path = self.path.as_ref().expect("episode in progress has a path");
        let dt = self.config.dt();
        let regime = path.regime(self.t as isize);
        let params: &MarketParams = &self.config.market.regimes[regime];
        let w_t = self.wealth;

        // (1) target holdings and trades.
        let target: Vec<f64> = (0..n).map(|i| action[i] * w_t / self.prices[i]).collect();
        let trades: Vec<f64> = (0..n).map(|i| target[i] - self.holdings[i]).collect();

        // (2) principal at the period-start price plus execution cost, using
        // the period-end price before this trade's permanent impact.
        let unaffected_end = path.prices(self.t as isize + 1);
        let mut cost = 0.0;
        let mut principal = 0.0;
        for i in 0..n {
            let end = unaffected_end[i] * self.impact.multipliers[i];
            cost += trade_cost(self.prices[i], end, trades[i], dt, &self.config.impact);
            principal += trades[i] * self.prices[i];
        }
        self.cash -= principal + cost;

        // (3) interest under the current regime.
        self.cash *= (params.cash_rate * dt).exp();

        // (4)-(5) market move, then the permanent impact of this trade.
        apply_permanent_impact_in_place(&mut self.impact, &trades, &self.config.impact);
        for i in 0..n {
            self.prices[i] = unaffected_end[i] * self.impact.multipliers[i];
        }
        self.holdings = target;
        self.t += 1;
        let next_regime = path.regime(self.t as isize);

        // (6) valuation and reward.
        let wealth: f64 = self.cash + self.holdings.iter().zip(&self.prices).map(|(h, p)| h * p).sum::<f64>();
        self.wealth = wealth;
        let reward = if wealth > 0.0 && wealth.is_finite() {
            (wealth / w_t).ln()
        } else {
            self.bankrupt = true;
            BANKRUPTCY_REWARD
        };
        self.done = self.bankrupt || self.t == self.config.n_periods;
        self.history.pop_front();
        self.history.push_back(self.prices.clone());

        Ok(StepResult {
            observation: self.observe(),
            reward,
            done: self.done,
            info: StepInfo { bankrupt: self.bankrupt, regime: next_regime, cost_paid: cost, wealth },
        })
    }

    fn observe(&self) -> Observation {
        let n = self.config.n_assets();
        let mut v = Vec::with_capacity(self.config.obs_dim());
        for row in &self.history {
            v.extend_from_slice(row);
        }
        v.extend(self.weights());
        debug_assert_eq!(v.len(), n * self.config.window + n);
        v.push(self.wealth / self.config.initial_wealth);
        Observation(v)
    }

    /// Current stock weights `n_i S_i / W`, from holdings marked at the
    /// current price. Zero once wealth is not positive.
    pub fn weights(&self) -> Vec<f64> {
        if !(self.wealth > 0.0) {
            return vec![0.0; self.config.n_assets()];
        }
        self.holdings.iter().zip(&self.prices).map(|(h, p)| h * p / self.wealth).collect()
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn is_bankrupt(&self) -> bool {
        self.bankrupt
    }

    pub fn wealth(&self) -> f64 {
        self.wealth
    }

    pub fn cash(&self) -> f64 {
        self.cash
    }

    pub fn holdings(&self) -> &[f64] {
        &self.holdings
    }

    /// Impact-adjusted prices at the current period.
    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn impact_state(&self) -> &ImpactState {
        &self.impact
    }

    /// True regime governing the next period. Never part of the observation.
    pub fn current_regime(&self) -> usize {
        self.path.as_ref().map_or(0, |p| p.regime(self.t as isize))
    }

    pub fn path(&self) -> Option<&PricePath> {
        self.path.as_ref()
    }

    /// Log returns of the observed (impact-adjusted) prices in the window:
    /// `window - 1` rows of `n_assets` values.
    pub fn log_return_window(&self) -> Vec<Vec<f64>> {
        self.history
            .iter()
            .zip(self.history.iter().skip(1))
            .map(|(a, b)| b.iter().zip(a).map(|(x, y)| (x / y).ln()).collect())
            .collect()
    }
}

/// Per-annum growth `sum(r) / T`; `None` for a bankrupt episode.
pub fn episode_growth_rate(rewards: &[f64], horizon_years: f64, bankrupt: bool) -> Option<f64> {
    if bankrupt {
        return None;
    }
    Some(rewards.iter().sum::<f64>() / horizon_years)
}

/// Anything that maps an observation to target weights.
///
/// Policies get read access to the environment so that baselines with
/// foresight can read the true regime and clock; learned policies use only
/// the observation (plus, for context policies, HMM inference on the
/// observed returns).
pub trait Policy {
    fn reset(&mut self) {}
    fn act(&mut self, env: &PortfolioEnv, obs: &Observation) -> Vec<f64>;
}

impl<F: FnMut(&PortfolioEnv, &Observation) -> Vec<f64>> Policy for F {
    fn act(&mut self, env: &PortfolioEnv, obs: &Observation) -> Vec<f64> {
        self(env, obs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub wealth: f64,
    pub cash: f64,
    /// Cash weight first, then the stock weights.
    pub weights: Vec<f64>,
    pub reward: f64,
    pub regime: usize,
    pub cost_paid: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeTrace {
    pub rows: Vec<TraceRow>,
}

impl EpisodeTrace {
    fn push(&mut self, env: &PortfolioEnv, reward: f64, cost_paid: f64) {
        let stocks = env.weights();
        let mut weights = Vec::with_capacity(stocks.len() + 1);
        weights.push(1.0 - stocks.iter().sum::<f64>());
        weights.extend(stocks);
        self.rows.push(TraceRow {
            t: env.t(),
            wealth: env.wealth(),
            cash: env.cash(),
            weights,
            reward,
            regime: env.current_regime(),
            cost_paid,
        });
    }

    /// `t,wealth,cash,w_0,...,w_n,reward,regime,cost_paid`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.rows.first().map_or(0, |r| r.weights.len());
        write!(w, "t,wealth,cash")?;
        for i in 0..n {
            write!(w, ",w_{i}")?;
        }
        writeln!(w, ",reward,regime,cost_paid")?;
        for r in &self.rows {
            write!(w, "{},{},{}", r.t, r.wealth, r.cash)?;
            for x in &r.weights {
                write!(w, ",{x}")?;
            }
            writeln!(w, ",{},{},{}", r.reward, r.regime, r.cost_paid)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub rewards: Vec<f64>,
    pub bankrupt: bool,
    pub final_wealth: f64,
    pub growth: Option<f64>,
    pub total_cost: f64,
    pub trace: Option<EpisodeTrace>,
}

/// Runs one full episode of `policy` on the path drawn from `rng`.
pub fn run_episode<P: Policy + ?Sized, R: Rng + ?Sized>(
    env: &mut PortfolioEnv,
    policy: &mut P,
    rng: &mut R,
    record_trace: bool,
) -> Result<EpisodeResult> {
    let mut obs = env.reset_from_rng(rng);
    policy.reset();
    let mut trace = record_trace.then(EpisodeTrace::default);
    if let Some(tr) = trace.as_mut() {
        tr.push(env, 0.0, 0.0);
    }
    let mut rewards = Vec::with_capacity(env.config().n_periods);
    let mut total_cost = 0.0;
    loop {
        let action = policy.act(env, &obs);
        let step = env.step(&action)?;
        rewards.push(step.reward);
        total_cost += step.info.cost_paid;
        if let Some(tr) = trace.as_mut() {
            tr.push(env, step.reward, step.info.cost_paid);
        }
        obs = step.observation;
        if step.done {
            break;
        }
    }
    let bankrupt = env.is_bankrupt();
    Ok(EpisodeResult {
        growth: episode_growth_rate(&rewards, env.config().horizon_years, bankrupt),
        rewards,
        bankrupt,
        final_wealth: env.wealth(),
        total_cost,
        trace,
    })
}
