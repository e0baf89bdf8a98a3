//! Experiment configuration files (TOML).
//!
//! A file names a market (a preset or explicit regimes), the impact model,
//! the environment, and optionally the learning algorithm, the HMM, the
//! baselines and the Q-surface grid. Everything is validated at load;
//! errors carry the line of the offending table.
//!
//! ```toml
//! version = 1
//!
//! [market]
//! preset = "etf"            # or [[market.regimes]] tables
//!
//! [env]
//! initial_wealth = 1000.0
//!
//! [algo]
//! algo = "ppo"
//! total_steps = 200000
//! ```

use std::path::Path;

use nalgebra::DMatrix;
use serde::de::IgnoredAny;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::Spanned;

use crate::analytic::{self, Axis, DEFAULT_ADJUSTMENT_PERIODS, DEFAULT_FRACTIONS};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::hmm::HmmFitConfig;
use crate::impact::ImpactParams;
use crate::rl::{Algo, ContextSpec, TrainConfig};
use crate::sim::{rescale_transition, MarketParams, RegimeModel};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub market: MarketSection,
    #[serde(default)]
    pub impact: ImpactSection,
    #[serde(default)]
    pub env: EnvSection,
    pub algo: Option<AlgoSection>,
    pub hmm: Option<HmmSection>,
    #[serde(default)]
    pub run: RunSection,
    pub baseline: Option<BaselineSection>,
    pub qsurface: Option<QSurfaceSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarketPreset {
    /// The three-ETF market with a 4% cash rate.
    Etf,
    /// The two-regime bull / bear market.
    BullBear,
    /// One stock, drift 12%, volatility 20%, cash 4%.
    SingleAsset,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub preset: Option<MarketPreset>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub regimes: Vec<RegimeSection>,
    /// Regime transition matrix, rows summing to one.
    pub transition: Option<Vec<Vec<f64>>>,
    /// Time step (years) the transition matrix refers to; defaults to the
    /// environment period.
    pub transition_dt: Option<f64>,
    pub initial_dist: Option<Vec<f64>>,
    /// Keep only these assets (by index).
    pub assets: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSection {
    pub name: Option<String>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Full correlation matrix.
    pub corr: Vec<Vec<f64>>,
    pub cash_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpactSection {
    pub eta: f64,
    pub gamma: f64,
}

impl Default for ImpactSection {
    fn default() -> Self {
        let s = ImpactParams::standard();
        Self { eta: s.eta, gamma: s.gamma }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub horizon_years: f64,
    pub periods_per_year: usize,
    pub window: usize,
    pub initial_wealth: f64,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self { horizon_years: 5.0, periods_per_year: 256, window: 60, initial_wealth: 1000.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    #[default]
    Plain,
    /// Regime-conditioned network fed by the HMM.
    Context,
}

/// Learning settings; unset fields take the algorithm's defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgoSection {
    pub algo: Algo,
    #[serde(default)]
    pub network: NetworkKind,
    pub total_steps: usize,
    pub gamma: Option<f64>,
    pub gae_lambda: Option<f64>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub n_steps: Option<usize>,
    pub n_epochs: Option<usize>,
    pub clip_range: Option<f64>,
    pub clipping_enabled: Option<bool>,
    pub vf_coef: Option<f64>,
    pub ent_coef: Option<f64>,
    pub max_grad_norm: Option<f64>,
    pub log_std_init: Option<f64>,
    pub normalize_advantage: Option<bool>,
}

impl AlgoSection {
    pub fn train_config(&self) -> TrainConfig {
        let mut c = match self.algo {
            Algo::Ppo => TrainConfig::ppo(self.total_steps),
            Algo::A2c => TrainConfig::a2c(self.total_steps),
        };
        macro_rules! overlay {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        overlay!(
            gamma, gae_lambda, learning_rate, batch_size, n_steps, n_epochs, clip_range,
            clipping_enabled, vf_coef, ent_coef, max_grad_norm, log_std_init, normalize_advantage
        );
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HmmSection {
    pub n_states: usize,
    pub n_init: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub mean_prior: f64,
    pub covar_prior: f64,
    pub min_covar: f64,
    /// Episodes of data the HMM is fit on.
    pub fit_episodes: usize,
}

impl Default for HmmSection {
    fn default() -> Self {
        let d = HmmFitConfig::default();
        Self {
            n_states: d.n_states,
            n_init: d.n_init,
            max_iter: d.max_iter,
            tol: d.tol,
            mean_prior: d.mean_prior,
            covar_prior: d.covar_prior,
            min_covar: d.min_covar,
            fit_episodes: 10,
        }
    }
}

impl HmmSection {
    pub fn fit_config(&self) -> HmmFitConfig {
        HmmFitConfig {
            n_states: self.n_states,
            n_init: self.n_init,
            max_iter: self.max_iter,
            tol: self.tol,
            mean_prior: self.mean_prior,
            covar_prior: self.covar_prior,
            min_covar: self.min_covar,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    /// Seeds for multi-seed commands; `[seed]` when empty.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<u64>,
    pub eval_episodes: usize,
    /// Master seed of the evaluation paths, shared by every policy so that
    /// comparisons use common random numbers.
    pub eval_seed: u64,
    pub output_dir: Option<String>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seed: 0, seeds: Vec::new(), eval_episodes: 100, eval_seed: 1_000_000, output_dir: None }
    }
}

impl RunSection {
    pub fn seed_list(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKindConfig {
    #[default]
    Fixed,
    Staggered,
    RegimeSwitching,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeSourceConfig {
    /// The true regime.
    #[default]
    Foresight,
    /// An HMM fit on separate simulated data.
    Hmm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    pub kind: BaselineKindConfig,
    pub fraction: f64,
    pub adjustment_periods: usize,
    pub source: RegimeSourceConfig,
    pub grid_fractions: Vec<f64>,
    pub grid_periods: Vec<usize>,
    pub grid_episodes: usize,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            kind: BaselineKindConfig::Fixed,
            fraction: 1.0,
            adjustment_periods: 1,
            source: RegimeSourceConfig::Foresight,
            grid_fractions: DEFAULT_FRACTIONS.to_vec(),
            grid_periods: DEFAULT_ADJUSTMENT_PERIODS.to_vec(),
            grid_episodes: 20,
        }
    }
}

/// Grid axes as `[min, max, points]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QSurfaceSection {
    pub w1: [f64; 3],
    pub w2: [f64; 3],
}

impl Default for QSurfaceSection {
    fn default() -> Self {
        Self { w1: [-1.0, 4.0, 101.0], w2: [-1.0, 4.0, 101.0] }
    }
}

impl QSurfaceSection {
    pub fn axes(&self) -> Result<(Axis, Axis)> {
        let axis = |a: [f64; 3]| {
            if a[2] < 2.0 || a[2].fract() != 0.0 {
                return Err(Error::config("grid axes need an integral point count of at least 2"));
            }
            Axis::new(a[0], a[1], a[2] as usize)
        };
        Ok((axis(self.w1)?, axis(self.w2)?))
    }
}

/// Source positions of the tables, for error messages.
#[derive(Deserialize, Default)]
#[serde(default)]
struct Spans {
    market: Option<Spanned<MarketSpans>>,
    impact: Option<Spanned<IgnoredAny>>,
    env: Option<Spanned<IgnoredAny>>,
    algo: Option<Spanned<IgnoredAny>>,
    hmm: Option<Spanned<IgnoredAny>>,
    run: Option<Spanned<IgnoredAny>>,
    baseline: Option<Spanned<IgnoredAny>>,
    qsurface: Option<Spanned<IgnoredAny>>,
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct MarketSpans {
    regimes: Vec<Spanned<IgnoredAny>>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::config(format!("{what} must be a non-empty square matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl ExperimentConfig {
    /// A configuration with the given market and every other block at its default.
    pub fn with_preset(preset: MarketPreset) -> Self {
        Self {
            version: CONFIG_VERSION,
            market: MarketSection { preset: Some(preset), ..Default::default() },
            impact: ImpactSection::default(),
            env: EnvSection::default(),
            algo: None,
            hmm: None,
            run: RunSection::default(),
            baseline: None,
            qsurface: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string().trim_end().to_string()))?;
        let spans: Spans = toml::from_str(text).unwrap_or_default();
        cfg.check().map_err(|(section, regime, e)| {
            let span = match (section, regime) {
                ("market", Some(i)) => spans
                    .market
                    .as_ref()
                    .and_then(|m| m.get_ref().regimes.get(i).map(|r| r.span()))
                    .or_else(|| spans.market.as_ref().map(|m| m.span())),
                ("market", None) => spans.market.as_ref().map(|m| m.span()),
                ("impact", _) => spans.impact.as_ref().map(|s| s.span()),
                ("env", _) => spans.env.as_ref().map(|s| s.span()),
                ("algo", _) => spans.algo.as_ref().map(|s| s.span()),
                ("hmm", _) => spans.hmm.as_ref().map(|s| s.span()),
                ("run", _) => spans.run.as_ref().map(|s| s.span()),
                ("baseline", _) => spans.baseline.as_ref().map(|s| s.span()),
                ("qsurface", _) => spans.qsurface.as_ref().map(|s| s.span()),
                _ => None,
            };
            let table = match regime {
                Some(i) => format!("[[market.regimes]] #{}", i + 1),
                None => format!("[{section}]"),
            };
            let msg = match e {
                Error::Config(m) | Error::Markov(m) | Error::Singular(m) => m,
                other => other.to_string(),
            };
            match span {
                Some(s) => Error::Config(format!("line {}: {table}: {msg}", line_of(text, s.start))),
                None => Error::Config(format!("{table}: {msg}")),
            }
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    /// SHA-256 of the canonical serialisation, as lowercase hex.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml_string().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Validates every block; the error names the section (and regime) at fault.
    fn check(&self) -> std::result::Result<(), (&'static str, Option<usize>, Error)> {
        if self.version != CONFIG_VERSION {
            return Err(("version", None, Error::config(format!("unsupported config version {}", self.version))));
        }
        self.regime_model_checked()?;
        ImpactParams::new(self.impact.eta, self.impact.gamma).map_err(|e| ("impact", None, e))?;
        self.env_config().map_err(|e| ("env", None, e))?;
        if let Some(a) = &self.algo {
            a.train_config().validate().map_err(|e| ("algo", None, e))?;
            if a.network == NetworkKind::Context && self.hmm.is_none() {
                return Err(("algo", None, Error::config("a context network needs an [hmm] table")));
            }
        }
        if let Some(h) = &self.hmm {
            h.fit_config().validate().map_err(|e| ("hmm", None, e))?;
            if h.fit_episodes == 0 {
                return Err(("hmm", None, Error::config("fit_episodes must be positive")));
            }
        }
        if self.run.eval_episodes == 0 {
            return Err(("run", None, Error::config("eval_episodes must be positive")));
        }
        if let Some(b) = &self.baseline {
            let bad = |m: &str| Err(("baseline", None, Error::config(m.to_string())));
            if !(b.fraction > 0.0 && b.fraction <= 1.0) || b.grid_fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
                return bad("fractions must lie in (0, 1]");
            }
            if b.adjustment_periods == 0 || b.grid_periods.contains(&0) {
                return bad("adjustment periods must be positive");
            }
            if b.grid_fractions.is_empty() || b.grid_periods.is_empty() || b.grid_episodes == 0 {
                return bad("the grid needs fractions, periods and a positive episode count");
            }
            if b.source == RegimeSourceConfig::Hmm && self.hmm.is_none() {
                return bad("an HMM regime source needs an [hmm] table");
            }
        }
        if let Some(q) = &self.qsurface {
            q.axes().map_err(|e| ("qsurface", None, e))?;
        }
        Ok(())
    }

    fn regime_model_checked(&self) -> std::result::Result<RegimeModel, (&'static str, Option<usize>, Error)> {
        let m = &self.market;
        let err = |e: Error| ("market", None, e);
        let mut model = match (m.preset, m.regimes.is_empty()) {
            (Some(_), false) => return Err(err(Error::config("give either a preset or regimes, not both"))),
            (None, true) => return Err(err(Error::config("give a preset or at least one regime"))),
            (Some(p), true) => {
                if m.transition.is_some() || m.initial_dist.is_some() {
                    return Err(err(Error::config("a preset fixes its own transition matrix and initial distribution")));
                }
                match p {
                    MarketPreset::Etf => RegimeModel::single(MarketParams::etf_universe()),
                    MarketPreset::BullBear => RegimeModel::bull_bear(),
                    MarketPreset::SingleAsset => RegimeModel::single(MarketParams::single_asset()),
                }
            }
            (None, false) => {
                let mut regimes = Vec::with_capacity(m.regimes.len());
                for (i, r) in m.regimes.iter().enumerate() {
                    let corr = matrix(&r.corr, "corr").map_err(|e| ("market", Some(i), e))?;
                    let p = MarketParams::new(r.mu.clone(), r.sigma.clone(), corr, r.cash_rate)
                        .map_err(|e| ("market", Some(i), e))?;
                    regimes.push(p);
                }
                let k = regimes.len();
                let transition = match &m.transition {
                    Some(t) => matrix(t, "transition").map_err(err)?,
                    None if k == 1 => DMatrix::identity(1, 1),
                    None => return Err(err(Error::config("several regimes need a transition matrix"))),
                };
                let initial = match &m.initial_dist {
                    Some(d) => d.clone(),
                    None if k == 1 => vec![1.0],
                    None => analytic::stationary_distribution(&transition).map_err(err)?,
                };
                RegimeModel::new(regimes, transition, initial).map_err(err)?
            }
        };
        if let Some(dt) = m.transition_dt {
            if self.env.periods_per_year == 0 {
                return Err(("env", None, Error::config("periods_per_year must be positive")));
            }
            let to = 1.0 / self.env.periods_per_year as f64;
            model.transition = rescale_transition(&model.transition, dt, to).map_err(err)?;
        }
        if let Some(assets) = &m.assets {
            let n = model.n_assets();
            if assets.is_empty() || assets.iter().any(|&a| a >= n) {
                return Err(err(Error::config(format!("asset selection must be non-empty indices below {n}"))));
            }
            for r in model.regimes.iter_mut() {
                *r = r.select(assets).map_err(err)?;
            }
        }
        Ok(model)
    }

    pub fn regime_model(&self) -> Result<RegimeModel> {
        self.regime_model_checked().map_err(|(_, _, e)| e)
    }

    pub fn impact_params(&self) -> Result<ImpactParams> {
        ImpactParams::new(self.impact.eta, self.impact.gamma)
    }

    pub fn env_config(&self) -> Result<EnvConfig> {
        let e = &self.env;
        EnvConfig::new(
            self.regime_model()?,
            self.impact_params()?,
            e.horizon_years,
            e.periods_per_year,
            e.window,
            e.initial_wealth,
        )
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        self.algo
            .as_ref()
            .map(|a| a.train_config())
            .ok_or_else(|| Error::config("the configuration has no [algo] table"))
    }

    pub fn hmm_section(&self) -> HmmSection {
        self.hmm.unwrap_or_default()
    }

    /// The HMM context of a context-network run, `None` for a plain network.
    pub fn context_spec(&self) -> Option<ContextSpec> {
        let a = self.algo.as_ref()?;
        (a.network == NetworkKind::Context).then(|| {
            let h = self.hmm_section();
            ContextSpec { hmm: h.fit_config(), fit_episodes: h.fit_episodes }
        })
    }

    pub fn baseline_section(&self) -> BaselineSection {
        self.baseline.clone().unwrap_or_default()
    }

    pub fn qsurface_section(&self) -> QSurfaceSection {
        self.qsurface.unwrap_or_default()
    }

    /// Copy with `key` (a dotted path such as `algo.gae_lambda`) set to `value`.
    pub fn with_override(&self, key: &str, value: &toml::Value) -> Result<Self> {
        let mut root = toml::Value::try_from(self).map_err(|e| Error::Parse(e.to_string()))?;
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::config(format!("bad parameter path '{key}'")));
        }
        let mut node = &mut root;
        for p in &parts[..parts.len() - 1] {
            let table = node.as_table_mut().ok_or_else(|| Error::config(format!("'{key}' does not name a table entry")))?;
            node = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
        }
        let table = node.as_table_mut().ok_or_else(|| Error::config(format!("'{key}' does not name a table entry")))?;
        table.insert(parts[parts.len() - 1].to_string(), value.clone());
        let text = toml::to_string(&root).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_toml_str(&text).map_err(|e| Error::config(format!("override {key} = {value}: {e}")))
    }
}

/// A one-parameter sweep: the experiment is repeated for every value.
///
/// ```toml
/// parameter = "algo.gae_lambda"
/// values = [0.0, 0.5, 0.9, 1.0]
/// seeds = [0, 1, 2]     # optional; defaults to the config's seeds
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: String,
    pub values: Vec<toml::Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string().trim_end().to_string()))?;
        if s.values.is_empty() {
            return Err(Error::config("a sweep needs at least one value"));
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// One configuration per value, validated.
    pub fn expand(&self, base: &ExperimentConfig) -> Result<Vec<(toml::Value, ExperimentConfig)>> {
        self.values.iter().map(|v| Ok((v.clone(), base.with_override(&self.parameter, v)?))).collect()
    }
}
