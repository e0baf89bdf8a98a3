//! Diagonal-Gaussian actor-critic networks.

use rand::Rng;
use rand_distr::StandardNormal;

use super::nn::{Activation, Dense, Mlp};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct Cache {
    trunk: Vec<Vec<f64>>,
    regime: Vec<Vec<f64>>,
    shared: Vec<Vec<f64>>,
    combined: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub mean: Vec<f64>,
    pub value: f64,
    cache: Cache,
}

/// A network with a Gaussian policy head and a scalar value head sharing a
/// trunk. All parameters, including the state-independent log standard
/// deviations, live in one flat vector.
pub trait ActorCritic: Clone + Send + Sync + std::fmt::Debug {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Number of regime labels the network conditions on; 0 if it ignores context.
    fn n_contexts(&self) -> usize;
    fn log_std_offset(&self) -> usize;
    fn forward(&self, obs: &[f64], context: usize) -> Forward;
    /// Accumulates into `grad` the gradient of a loss whose derivatives with
    /// respect to the action mean and the value are `d_mean` and `d_value`.
    fn backward(&self, fwd: &Forward, d_mean: &[f64], d_value: f64, grad: &mut [f64]);

    fn n_params(&self) -> usize {
        self.params().len()
    }

    /// Log standard deviations after clamping to `[LOG_STD_MIN, LOG_STD_MAX]`.
    fn log_std(&self) -> Vec<f64> {
        let o = self.log_std_offset();
        self.params()[o..o + self.action_dim()].iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect()
    }
}

/// Exact log-density of a diagonal Gaussian.
pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, ls), a)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - HALF_LN_2PI
        })
        .sum()
}

/// Draws `mean + exp(log_std) * z`, or returns the mean when deterministic,
/// together with the log-density of the returned action.
pub fn sample_action<N: ActorCritic, R: Rng + ?Sized>(
    net: &N,
    obs: &[f64],
    context: usize,
    rng: &mut R,
    deterministic: bool,
) -> (Vec<f64>, f64) {
    let fwd = net.forward(obs, context);
    let log_std = net.log_std();
    let action: Vec<f64> = if deterministic {
        fwd.mean.clone()
    } else {
        fwd.mean.iter().zip(&log_std).map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal)).collect()
    };
    let lp = gaussian_log_prob(&fwd.mean, &log_std, &action);
    (action, lp)
}

fn heads(offset: usize, width: usize, act: usize) -> (Dense, Dense, usize) {
    let actor = Dense { input: width, output: act, offset, activation: Activation::Identity };
    let critic = Dense { input: width, output: 1, offset: offset + actor.n_params(), activation: Activation::Identity };
    let end = critic.offset + critic.n_params();
    (actor, critic, end)
}

/// Two tanh layers of 64 feeding linear actor and critic heads.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    params: Vec<f64>,
    trunk: Mlp,
    actor: Dense,
    critic: Dense,
    log_std_offset: usize,
}

impl PolicyNet {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, action_dim: usize, log_std_init: f64, rng: &mut R) -> Self {
        Self::with_widths(obs_dim, action_dim, &[64, 64], log_std_init, rng)
    }

    pub fn with_widths<R: Rng + ?Sized>(
        obs_dim: usize,
        action_dim: usize,
        widths: &[usize],
        log_std_init: f64,
        rng: &mut R,
    ) -> Self {
        let (trunk, off) = Mlp::build(0, obs_dim, widths, Activation::Tanh);
        let (actor, critic, end) = heads(off, trunk.output(), action_dim);
        let mut params = vec![0.0; end + action_dim];
        trunk.init_orthogonal(&mut params, std::f64::consts::SQRT_2, rng);
        actor.init_orthogonal(&mut params, 0.01, rng);
        critic.init_orthogonal(&mut params, 1.0, rng);
        params[end..].fill(log_std_init);
        Self { params, trunk, actor, critic, log_std_offset: end }
    }

    pub(crate) fn layout(&self) -> Vec<usize> {
        self.trunk.layers.iter().map(|l| l.output).collect()
    }
}

impl ActorCritic for PolicyNet {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn obs_dim(&self) -> usize {
        self.trunk.input()
    }

    fn action_dim(&self) -> usize {
        self.actor.output
    }

    fn n_contexts(&self) -> usize {
        0
    }

    fn log_std_offset(&self) -> usize {
        self.log_std_offset
    }

    fn forward(&self, obs: &[f64], _context: usize) -> Forward {
        let mut cache = Cache::default();
        self.trunk.forward(&self.params, obs, &mut cache.trunk);
        let h = cache.trunk.last().expect("trunk output");
        let mut mean = Vec::new();
        let mut v = Vec::new();
        self.actor.forward(&self.params, h, &mut mean);
        self.critic.forward(&self.params, h, &mut v);
        Forward { mean, value: v[0], cache }
    }

    fn backward(&self, fwd: &Forward, d_mean: &[f64], d_value: f64, grad: &mut [f64]) {
        let h = fwd.cache.trunk.last().expect("trunk output");
        let mut dh_a = Vec::new();
        let mut dh_c = Vec::new();
        self.actor.backward(&self.params, h, &fwd.mean, d_mean, grad, Some(&mut dh_a));
        self.critic.backward(&self.params, h, &[fwd.value], &[d_value], grad, Some(&mut dh_c));
        for (a, c) in dh_a.iter_mut().zip(&dh_c) {
            *a += c;
        }
        self.trunk.backward(&self.params, &fwd.cache.trunk, &dh_a, grad, false);
    }
}

/// Regime-conditioned network: a tanh feature net (256/128/64) on the
/// observation and a ReLU regime net (64/64/64) on the one-hot regime,
/// combined by elementwise product, then two shared tanh layers of 64.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextPolicyNet {
    params: Vec<f64>,
    features: Mlp,
    regime: Mlp,
    shared: Mlp,
    actor: Dense,
    critic: Dense,
    log_std_offset: usize,
}

impl ContextPolicyNet {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, action_dim: usize, n_regimes: usize, log_std_init: f64, rng: &mut R) -> Self {
        Self::with_widths(obs_dim, action_dim, n_regimes, &[256, 128, 64], &[64, 64, 64], &[64, 64], log_std_init, rng)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_widths<R: Rng + ?Sized>(
        obs_dim: usize,
        action_dim: usize,
        n_regimes: usize,
        feature_widths: &[usize],
        regime_widths: &[usize],
        shared_widths: &[usize],
        log_std_init: f64,
        rng: &mut R,
    ) -> Self {
        assert_eq!(feature_widths.last(), regime_widths.last(), "feature and regime nets must end at the same width");
        let (features, off) = Mlp::build(0, obs_dim, feature_widths, Activation::Tanh);
        let (regime, off) = Mlp::build(off, n_regimes, regime_widths, Activation::Relu);
        let (shared, off) = Mlp::build(off, features.output(), shared_widths, Activation::Tanh);
        let (actor, critic, end) = heads(off, shared.output(), action_dim);
        let mut params = vec![0.0; end + action_dim];
        let g = std::f64::consts::SQRT_2;
        features.init_orthogonal(&mut params, g, rng);
        regime.init_orthogonal(&mut params, g, rng);
        shared.init_orthogonal(&mut params, g, rng);
        actor.init_orthogonal(&mut params, 0.01, rng);
        critic.init_orthogonal(&mut params, 1.0, rng);
        params[end..].fill(log_std_init);
        Self { params, features, regime, shared, actor, critic, log_std_offset: end }
    }

    pub(crate) fn layout(&self) -> [Vec<usize>; 3] {
        let w = |m: &Mlp| m.layers.iter().map(|l| l.output).collect();
        [w(&self.features), w(&self.regime), w(&self.shared)]
    }
}

impl ActorCritic for ContextPolicyNet {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn obs_dim(&self) -> usize {
        self.features.input()
    }

    fn action_dim(&self) -> usize {
        self.actor.output
    }

    fn n_contexts(&self) -> usize {
        self.regime.input()
    }

    fn log_std_offset(&self) -> usize {
        self.log_std_offset
    }

    fn forward(&self, obs: &[f64], context: usize) -> Forward {
        let k = self.n_contexts();
        assert!(context < k, "context {context} out of range for {k} regimes");
        let mut cache = Cache::default();
        self.features.forward(&self.params, obs, &mut cache.trunk);
        let mut one_hot = vec![0.0; k];
        one_hot[context] = 1.0;
        self.regime.forward(&self.params, &one_hot, &mut cache.regime);
        let f = cache.trunk.last().expect("feature output");
        let g = cache.regime.last().expect("regime output");
        cache.combined = f.iter().zip(g).map(|(a, b)| a * b).collect();
        self.shared.forward(&self.params, &cache.combined, &mut cache.shared);
        let h = cache.shared.last().expect("shared output");
        let mut mean = Vec::new();
        let mut v = Vec::new();
        self.actor.forward(&self.params, h, &mut mean);
        self.critic.forward(&self.params, h, &mut v);
        Forward { mean, value: v[0], cache }
    }

    fn backward(&self, fwd: &Forward, d_mean: &[f64], d_value: f64, grad: &mut [f64]) {
        let c = &fwd.cache;
        let h = c.shared.last().expect("shared output");
        let mut dh_a = Vec::new();
        let mut dh_c = Vec::new();
        self.actor.backward(&self.params, h, &fwd.mean, d_mean, grad, Some(&mut dh_a));
        self.critic.backward(&self.params, h, &[fwd.value], &[d_value], grad, Some(&mut dh_c));
        for (a, b) in dh_a.iter_mut().zip(&dh_c) {
            *a += b;
        }
        let d_comb = self.shared.backward(&self.params, &c.shared, &dh_a, grad, true);
        let f = c.trunk.last().expect("feature output");
        let g = c.regime.last().expect("regime output");
        let df: Vec<f64> = d_comb.iter().zip(g).map(|(d, b)| d * b).collect();
        let dg: Vec<f64> = d_comb.iter().zip(f).map(|(d, a)| d * a).collect();
        self.features.backward(&self.params, &c.trunk, &df, grad, false);
        self.regime.backward(&self.params, &c.regime, &dg, grad, false);
    }
}

/// Either architecture behind one type, for checkpoints and the CLI.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyPolicy {
    Plain(PolicyNet),
    Context(ContextPolicyNet),
}

macro_rules! delegate {
    ($self:ident, $n:ident => $e:expr) => {
        match $self {
            AnyPolicy::Plain($n) => $e,
            AnyPolicy::Context($n) => $e,
        }
    };
}

impl ActorCritic for AnyPolicy {
    fn params(&self) -> &[f64] {
        delegate!(self, n => n.params())
    }

    fn params_mut(&mut self) -> &mut [f64] {
        delegate!(self, n => n.params_mut())
    }

    fn obs_dim(&self) -> usize {
        delegate!(self, n => n.obs_dim())
    }

    fn action_dim(&self) -> usize {
        delegate!(self, n => n.action_dim())
    }

    fn n_contexts(&self) -> usize {
        delegate!(self, n => n.n_contexts())
    }

    fn log_std_offset(&self) -> usize {
        delegate!(self, n => n.log_std_offset())
    }

    fn forward(&self, obs: &[f64], context: usize) -> Forward {
        delegate!(self, n => n.forward(obs, context))
    }

    fn backward(&self, fwd: &Forward, d_mean: &[f64], d_value: f64, grad: &mut [f64]) {
        delegate!(self, n => n.backward(fwd, d_mean, d_value, grad))
    }
}
