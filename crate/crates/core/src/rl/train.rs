//! Rollout collection, the training loop and deterministic evaluation of
//! trained networks.

use std::io::Write;
use std::sync::Arc;

use super::algo::{a2c_update, ppo_update, Adam, Algo, RolloutBuffer, TrainConfig, UpdateStats};
use super::policy::{sample_action, ActorCritic, AnyPolicy, ContextPolicyNet, PolicyNet};
use crate::env::{EnvConfig, Observation, Policy, PortfolioEnv};
use crate::error::{Error, Result};
use crate::hmm::{self, predict_current, GaussianHmmModel, HmmFitConfig};
use crate::rng::{stream, Domain};
use crate::stats::{self, evaluate_policy, EvalStats};

/// Regime inference feeding a context network.
#[derive(Debug, Clone)]
pub struct ContextSpec {
    pub hmm: HmmFitConfig,
    /// Training episodes whose observed returns the HMM is fit on.
    pub fit_episodes: usize,
}

impl Default for ContextSpec {
    fn default() -> Self {
        Self { hmm: HmmFitConfig::default(), fit_episodes: 10 }
    }
}

/// Builds the network a run starts from, seeded from the init stream.
pub fn init_network(env: &EnvConfig, cfg: &TrainConfig, context: Option<&ContextSpec>, seed: u64) -> AnyPolicy {
    let mut rng = stream(seed, Domain::Init, 0);
    match context {
        None => AnyPolicy::Plain(PolicyNet::new(env.obs_dim(), env.n_assets(), cfg.log_std_init, &mut rng)),
        Some(c) => AnyPolicy::Context(ContextPolicyNet::new(
            env.obs_dim(),
            env.n_assets(),
            c.hmm.n_states,
            cfg.log_std_init,
            &mut rng,
        )),
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    /// Environment steps taken so far, this episode included.
    pub steps: usize,
    /// Mean of the chosen weights over the episode, cash first.
    pub mean_weights: Vec<f64>,
    /// Mean absolute deviation of the chosen weights within the episode.
    pub mad_weights: Vec<f64>,
    pub growth: Option<f64>,
    pub bankrupt: bool,
    /// Diagnostics of the latest update, if any had run.
    pub clip_fraction: Option<f64>,
    pub approx_kl: Option<f64>,
}

pub fn write_training_log<W: Write>(rows: &[EpisodeLog], mut w: W) -> Result<()> {
    let n = rows.first().map_or(0, |r| r.mean_weights.len());
    write!(w, "episode,steps")?;
    for i in 0..n {
        write!(w, ",mean_w{i}")?;
    }
    for i in 0..n {
        write!(w, ",mad_w{i}")?;
    }
    writeln!(w, ",growth,bankrupt,clip_fraction,approx_kl")?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:?}"));
    for r in rows {
        write!(w, "{},{}", r.episode, r.steps)?;
        for x in r.mean_weights.iter().chain(&r.mad_weights) {
            write!(w, ",{x:?}")?;
        }
        writeln!(w, ",{},{},{},{}", opt(r.growth), r.bankrupt as u8, opt(r.clip_fraction), opt(r.approx_kl))?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: AnyPolicy,
    /// Frozen regime model of a context run.
    pub hmm: Option<Arc<GaussianHmmModel>>,
    pub log: Vec<EpisodeLog>,
    pub updates: Vec<UpdateStats>,
    pub steps: usize,
}

impl TrainOutcome {
    /// Mean approximate KL over all updates.
    pub fn mean_approx_kl(&self) -> Option<f64> {
        stats::mean(&self.updates.iter().map(|u| u.approx_kl).collect::<Vec<_>>())
    }
}

#[derive(Default)]
struct EpisodeAcc {
    weights: Vec<Vec<f64>>,
    rewards: Vec<f64>,
    returns: Vec<Vec<f64>>,
}

fn with_cash(stocks: &[f64]) -> Vec<f64> {
    let mut w = Vec::with_capacity(stocks.len() + 1);
    w.push(1.0 - stocks.iter().sum::<f64>());
    w.extend_from_slice(stocks);
    w
}

fn log_returns(a: &[f64], b: &[f64]) -> Vec<f64> {
    b.iter().zip(a).map(|(x, y)| (x / y).ln()).collect()
}

fn context_of(model: Option<&GaussianHmmModel>, env: &PortfolioEnv) -> usize {
    model.map_or(0, |m| predict_current(m, &env.log_return_window()))
}

/// Trains `net` on fresh paths until `cfg.total_steps` environment steps
/// have been collected, updating after every `cfg.n_steps`.
///
/// Episode `e` runs on the training path stream `(seed, e)`; action noise,
/// minibatch order and HMM restarts have their own streams, so a fixed seed
/// reproduces the run exactly. With a `context`, observations carry the
/// HMM's current-state estimate: state 0 until the model has been fit on the
/// first `fit_episodes` episodes, the frozen model's estimate afterwards.
pub fn train(
    env_cfg: &EnvConfig,
    net: AnyPolicy,
    cfg: &TrainConfig,
    context: Option<&ContextSpec>,
    seed: u64,
) -> Result<TrainOutcome> {
    train_with_progress(env_cfg, net, cfg, context, seed, |_| {})
}

pub fn train_with_progress<F: FnMut(&EpisodeLog)>(
    env_cfg: &EnvConfig,
    mut net: AnyPolicy,
    cfg: &TrainConfig,
    context: Option<&ContextSpec>,
    seed: u64,
    mut progress: F,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut env = PortfolioEnv::new(env_cfg.clone())?;
    if net.obs_dim() != env_cfg.obs_dim() || net.action_dim() != env_cfg.n_assets() {
        return Err(Error::dim(format!(
            "network maps {} -> {} but the environment has {} observations and {} assets",
            net.obs_dim(),
            net.action_dim(),
            env_cfg.obs_dim(),
            env_cfg.n_assets()
        )));
    }
    match (context, &net) {
        (Some(c), AnyPolicy::Context(_)) => {
            c.hmm.validate()?;
            if c.fit_episodes == 0 {
                return Err(Error::config("the context HMM needs at least one fitting episode"));
            }
            if net.n_contexts() != c.hmm.n_states {
                return Err(Error::config("context network and HMM disagree on the number of states"));
            }
        }
        (None, AnyPolicy::Plain(_)) => {}
        _ => return Err(Error::config("a context network needs an HMM context spec and vice versa")),
    }

    let mut policy_rng = stream(seed, Domain::Policy, 0);
    let mut shuffle_rng = stream(seed, Domain::Shuffle, 0);
    let mut opt = Adam::new(net.n_params(), cfg.learning_rate);
    let mut buf = RolloutBuffer::default();
    let mut hmm_model: Option<Arc<GaussianHmmModel>> = None;
    let mut hmm_data: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut log = Vec::new();
    let mut updates: Vec<UpdateStats> = Vec::new();

    let mut steps = 0usize;
    let mut episode = 0usize;
    let mut obs = env.reset_from_rng(&mut stream(seed, Domain::TrainPath, 0));
    let mut acc = EpisodeAcc::default();
    if context.is_some() {
        acc.returns = env.log_return_window();
    }
    let mut ctx = context_of(hmm_model.as_deref(), &env);

    while steps < cfg.total_steps {
        // Collect one rollout, possibly spanning episode boundaries.
        buf.clear();
        while buf.len() < cfg.n_steps {
            let (action, log_prob) = sample_action(&net, obs.as_slice(), ctx, &mut policy_rng, false);
            let value = net.forward(obs.as_slice(), ctx).value;
            let before = env.prices().to_vec();
            let step = env.step(&action)?;
            steps += 1;
            acc.weights.push(with_cash(&action));
            acc.rewards.push(step.reward);
            if context.is_some() && !step.info.bankrupt {
                acc.returns.push(log_returns(&before, env.prices()));
            }
            buf.push(obs.0, ctx, action, log_prob, step.reward, value, step.done);
            obs = step.observation;

            if step.done {
                let mut row = episode_row(episode, steps, &acc, env_cfg.horizon_years, step.info.bankrupt);
                if let Some(last) = updates.last() {
                    row.clip_fraction = Some(last.clip_fraction);
                    row.approx_kl = Some(last.approx_kl);
                }
                progress(&row);
                log.push(row);
                if let Some(c) = context {
                    if hmm_model.is_none() {
                        hmm_data.push(std::mem::take(&mut acc.returns));
                        if hmm_data.len() == c.fit_episodes {
                            let report = hmm::fit(&hmm_data, &c.hmm, &mut stream(seed, Domain::HmmInit, 0))?;
                            hmm_model = Some(Arc::new(report.model));
                            hmm_data.clear();
                        }
                    }
                }
                episode += 1;
                obs = env.reset_from_rng(&mut stream(seed, Domain::TrainPath, episode as u64));
                acc = EpisodeAcc::default();
                if context.is_some() && hmm_model.is_none() {
                    acc.returns = env.log_return_window();
                }
            }
            ctx = context_of(hmm_model.as_deref(), &env);
        }

        let last_done = *buf.dones.last().expect("rollout is non-empty");
        let bootstrap = if last_done { 0.0 } else { net.forward(obs.as_slice(), ctx).value };
        buf.compute_advantages(bootstrap, cfg.gamma, cfg.gae_lambda);
        let stats = match cfg.algo {
            Algo::Ppo => ppo_update(&mut net, &buf, cfg, &mut opt, &mut shuffle_rng)?,
            Algo::A2c => a2c_update(&mut net, &buf, cfg, &mut opt)?,
        };
        updates.push(stats);
    }
    Ok(TrainOutcome { net, hmm: hmm_model, log, updates, steps })
}

fn episode_row(episode: usize, steps: usize, acc: &EpisodeAcc, horizon: f64, bankrupt: bool) -> EpisodeLog {
    let n = acc.weights.first().map_or(0, |w| w.len());
    let column = |i: usize| acc.weights.iter().map(|w| w[i]).collect::<Vec<_>>();
    EpisodeLog {
        episode,
        steps,
        mean_weights: (0..n).map(|i| stats::mean(&column(i)).unwrap_or(0.0)).collect(),
        mad_weights: (0..n).map(|i| stats::mad(&column(i)).unwrap_or(0.0)).collect(),
        growth: crate::env::episode_growth_rate(&acc.rewards, horizon, bankrupt),
        bankrupt,
        clip_fraction: None,
        approx_kl: None,
    }
}

/// A trained network acting deterministically (the Gaussian mean).
#[derive(Debug, Clone)]
pub struct NetPolicy {
    pub net: Arc<AnyPolicy>,
    pub hmm: Option<Arc<GaussianHmmModel>>,
}

impl NetPolicy {
    pub fn new(net: AnyPolicy, hmm: Option<Arc<GaussianHmmModel>>) -> Self {
        Self { net: Arc::new(net), hmm }
    }
}

impl Policy for NetPolicy {
    fn act(&mut self, env: &PortfolioEnv, obs: &Observation) -> Vec<f64> {
        let ctx = context_of(self.hmm.as_deref(), env);
        self.net.forward(obs.as_slice(), ctx).mean
    }
}

/// Evaluates a trained network on `n_episodes` evaluation paths of `seed`.
pub fn evaluate(env_cfg: &EnvConfig, policy: &NetPolicy, n_episodes: usize, seed: u64) -> Result<EvalStats> {
    if policy.net.obs_dim() != env_cfg.obs_dim() || policy.net.action_dim() != env_cfg.n_assets() {
        return Err(Error::dim("network does not match the environment"));
    }
    evaluate_policy(env_cfg, || policy.clone(), n_episodes, seed)
}
