//! Closed-form Kelly machinery and the heuristic baseline policies.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::env::{EnvConfig, Observation, Policy, PortfolioEnv};
use crate::error::{Error, Result};
use crate::hmm::{predict_current, GaussianHmmModel};
use crate::linalg;
use crate::sim::{MarketParams, RegimeModel};
use crate::stats::{evaluate_policy, EvalStats};

/// Stock weights with the cash weight implied as `1 - sum(w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    stocks: Vec<f64>,
}

impl WeightVector {
    pub fn new(stocks: Vec<f64>) -> Self {
        Self { stocks }
    }

    pub fn stocks(&self) -> &[f64] {
        &self.stocks
    }

    pub fn cash(&self) -> f64 {
        1.0 - self.stocks.iter().sum::<f64>()
    }

    /// Cash weight followed by the stock weights.
    pub fn all(&self) -> Vec<f64> {
        std::iter::once(self.cash()).chain(self.stocks.iter().copied()).collect()
    }
}

/// Kelly-optimal weights: the solution of `Sigma w = mu - r`.
pub fn optimal_weights(params: &MarketParams) -> Result<WeightVector> {
    let rhs = DVector::from_iterator(params.n_assets(), params.mu.iter().map(|m| m - params.cash_rate));
    let w = linalg::solve(&params.covariance(), &rhs)
        .map_err(|_| Error::Singular("covariance matrix is singular; the Kelly system has no unique solution".into()))?;
    Ok(WeightVector::new(w.iter().copied().collect()))
}

/// Expected log growth per annum,
/// `L(w) = w_0 r + sum_i [w_i mu_i - 1/2 sum_j w_i w_j sigma_i sigma_j rho_ij]`.
pub fn expected_growth(w: &WeightVector, params: &MarketParams) -> f64 {
    let cov = params.covariance();
    let s = w.stocks();
    let mut l = w.cash() * params.cash_rate;
    for i in 0..s.len() {
        l += s[i] * params.mu[i];
        for j in 0..s.len() {
            l -= 0.5 * s[i] * s[j] * cov[(i, j)];
        }
    }
    l
}

/// `dL/dw = mu - r - Sigma w`.
pub fn growth_gradient(w: &WeightVector, params: &MarketParams) -> Vec<f64> {
    let cov = params.covariance();
    let s = DVector::from_column_slice(w.stocks());
    let sw = cov * s;
    (0..params.n_assets()).map(|i| params.mu[i] - params.cash_rate - sw[i]).collect()
}

/// Volatility of log wealth, `sqrt(w' Sigma w)`.
pub fn portfolio_volatility(w: &WeightVector, params: &MarketParams) -> f64 {
    let s = DVector::from_column_slice(w.stocks());
    (s.transpose() * params.covariance() * &s)[(0, 0)].max(0.0).sqrt()
}

/// Scales the stock weights by `f`; cash takes up the rest.
pub fn fractional_weights(w_star: &WeightVector, f: f64) -> Result<WeightVector> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::config(format!("Kelly fraction {f} outside (0, 1]")));
    }
    Ok(WeightVector::new(w_star.stocks().iter().map(|w| w * f).collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub weights: WeightVector,
    pub growth: f64,
    /// `max |Sigma w - (mu - r)|`.
    pub residual: f64,
}

pub fn solve(params: &MarketParams) -> Result<SolverReport> {
    let weights = optimal_weights(params)?;
    let residual = growth_gradient(&weights, params).iter().fold(0.0f64, |m, g| m.max(g.abs()));
    Ok(SolverReport { growth: expected_growth(&weights, params), weights, residual })
}

impl fmt::Display for SolverReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "weights  cash {:.4}", self.weights.cash())?;
        for (i, w) in self.weights.stocks().iter().enumerate() {
            write!(f, "  w_{} {:.4}", i + 1, w)?;
        }
        write!(f, "\ngrowth   {:.6}\nresidual {:.3e}", self.growth, self.residual)
    }
}

/// Per-regime optima plus the growth of switching between them.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeSolution {
    pub regimes: Vec<SolverReport>,
    pub stationary: Vec<f64>,
    pub switching_growth: f64,
}

pub fn solve_regimes(model: &RegimeModel) -> Result<RegimeSolution> {
    let regimes = model.regimes.iter().map(solve).collect::<Result<Vec<_>>>()?;
    let stationary =
        if model.n_regimes() == 1 { vec![1.0] } else { stationary_distribution(&model.transition)? };
    let growths: Vec<f64> = regimes.iter().map(|r| r.growth).collect();
    Ok(RegimeSolution { switching_growth: switching_growth(&growths, &stationary)?, regimes, stationary })
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Limiting distribution `pi P = pi`, solved directly.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<Vec<f64>> {
    crate::sim::check_stochastic(p).map_err(|e| Error::Markov(e.to_string()))?;
    let k = p.nrows();
    // Irreducibility: every state reaches every other through positive entries.
    for start in 0..k {
        let mut seen = vec![false; k];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            for j in 0..k {
                if p[(i, j)] > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(Error::Markov(format!("chain is reducible: state {j} is unreachable from state {start}")));
        }
    }
    // Period: gcd of level[u] + 1 - level[v] over all edges of a BFS tree.
    let mut level = vec![usize::MAX; k];
    level[0] = 0;
    let mut queue = std::collections::VecDeque::from([0]);
    while let Some(i) = queue.pop_front() {
        for j in 0..k {
            if p[(i, j)] > 0.0 && level[j] == usize::MAX {
                level[j] = level[i] + 1;
                queue.push_back(j);
            }
        }
    }
    let mut period = 0;
    for i in 0..k {
        for j in 0..k {
            if p[(i, j)] > 0.0 {
                period = gcd(period, (level[i] as isize + 1 - level[j] as isize).unsigned_abs());
            }
        }
    }
    if period != 1 {
        return Err(Error::Markov(format!("chain is periodic with period {period}")));
    }
    let mut a = p.transpose() - DMatrix::identity(k, k);
    for j in 0..k {
        a[(k - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(k);
    b[k - 1] = 1.0;
    let pi = linalg::solve(&a, &b)?;
    Ok(pi.iter().copied().collect())
}

/// `sum_k pi_k L_k`.
pub fn switching_growth(growths: &[f64], pi: &[f64]) -> Result<f64> {
    if growths.len() != pi.len() {
        return Err(Error::dim(format!("{} growths for {} probabilities", growths.len(), pi.len())));
    }
    Ok(growths.iter().zip(pi).map(|(g, p)| g * p).sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, points: usize) -> Result<Self> {
        if points < 2 || !(max > min) {
            return Err(Error::config(format!("grid axis [{min}, {max}] with {points} points is empty")));
        }
        Ok(Self { min, max, points })
    }

    pub fn step(&self) -> f64 {
        (self.max - self.min) / (self.points - 1) as f64
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.min + i as f64 * self.step()).collect()
    }
}

/// Expected growth over a rectangular grid of two stock weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QSurface {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    /// `values[(i, j)] = L(w1[i], w2[j])`.
    pub values: DMatrix<f64>,
}

impl QSurface {
    pub fn argmax(&self) -> (f64, f64, f64) {
        let (mut bi, mut bj) = (0, 0);
        for i in 0..self.w1.len() {
            for j in 0..self.w2.len() {
                if self.values[(i, j)] > self.values[(bi, bj)] {
                    (bi, bj) = (i, j);
                }
            }
        }
        (self.w1[bi], self.w2[bj], self.values[(bi, bj)])
    }

    /// `w1,w2,L`, `w2` varying fastest.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "w1,w2,L")?;
        for (i, a) in self.w1.iter().enumerate() {
            for (j, b) in self.w2.iter().enumerate() {
                writeln!(w, "{a},{b},{}", self.values[(i, j)])?;
            }
        }
        Ok(())
    }
}

pub fn q_surface(params: &MarketParams, w1: Axis, w2: Axis) -> Result<QSurface> {
    if params.n_assets() != 2 {
        return Err(Error::dim(format!("q surface needs a 2-asset market, got {}", params.n_assets())));
    }
    let (a, b) = (w1.values(), w2.values());
    let values = DMatrix::from_fn(a.len(), b.len(), |i, j| expected_growth(&WeightVector::new(vec![a[i], b[j]]), params));
    Ok(QSurface { w1: a, w2: b, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    FixedWeight,
    Staggered,
    RegimeSwitching,
}

/// Where a regime-switching baseline learns the current regime.
#[derive(Debug, Clone)]
pub enum RegimeSource {
    /// Reads the simulator's true regime.
    Foresight,
    /// Infers it from the observed return window; `perm` maps HMM states to
    /// regime indices.
    Hmm { model: Arc<GaussianHmmModel>, perm: Vec<usize> },
}

/// Heuristic policy that holds (a fraction of) the Kelly weights, moving to
/// them linearly over `n` periods whenever the target changes.
///
/// At period `k` after a change the target is
/// `from + (k + 1) / n * (goal - from)`, where `from` is the previous target
/// (all cash at the episode start).
#[derive(Debug, Clone)]
pub struct BaselinePolicy {
    pub kind: BaselineKind,
    pub targets: Vec<WeightVector>,
    pub adjustment_periods: usize,
    pub fraction: f64,
    pub source: RegimeSource,
    active: Option<usize>,
    from: Vec<f64>,
    last: Vec<f64>,
    k: usize,
}

impl BaselinePolicy {
    fn build(kind: BaselineKind, targets: Vec<WeightVector>, n: usize, f: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("adjustment period must be at least 1"));
        }
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::config(format!("Kelly fraction {f} outside (0, 1]")));
        }
        let dim = targets[0].stocks().len();
        Ok(Self {
            kind,
            targets,
            adjustment_periods: n,
            fraction: f,
            source: RegimeSource::Foresight,
            active: None,
            from: vec![0.0; dim],
            last: vec![0.0; dim],
            k: 0,
        })
    }

    pub fn fixed(w: WeightVector) -> Self {
        Self::build(BaselineKind::FixedWeight, vec![w], 1, 1.0).expect("valid")
    }

    /// Fractional Kelly per regime with an `n`-period ramp after each regime change.
    pub fn regime_switching(model: &RegimeModel, f: f64, n: usize) -> Result<Self> {
        let targets = model.regimes.iter().map(optimal_weights).collect::<Result<Vec<_>>>()?;
        Self::build(BaselineKind::RegimeSwitching, targets, n, f)
    }

    pub fn with_fraction(mut self, f: f64) -> Result<Self> {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::config(format!("Kelly fraction {f} outside (0, 1]")));
        }
        self.fraction = f;
        Ok(self)
    }

    pub fn with_source(mut self, source: RegimeSource) -> Self {
        self.source = source;
        self
    }

    fn regime(&self, env: &PortfolioEnv) -> usize {
        if self.kind != BaselineKind::RegimeSwitching {
            return 0;
        }
        match &self.source {
            RegimeSource::Foresight => env.current_regime(),
            RegimeSource::Hmm { model, perm } => perm[predict_current(model, &env.log_return_window())],
        }
    }

    /// Target for the next period given the regime in force.
    pub fn next_target(&mut self, regime: usize) -> Vec<f64> {
        if self.active != Some(regime) {
            self.active = Some(regime);
            self.from = self.last.clone();
            self.k = 0;
        }
        let goal: Vec<f64> = self.targets[regime].stocks().iter().map(|w| w * self.fraction).collect();
        let n = self.adjustment_periods;
        let out = if self.k + 1 >= n {
            goal
        } else {
            let s = (self.k + 1) as f64 / n as f64;
            self.from.iter().zip(&goal).map(|(a, b)| a + s * (b - a)).collect()
        };
        self.k += 1;
        self.last = out.clone();
        out
    }
}

/// Ramps from all cash to `w_star` over the first `n` periods.
pub fn staggered_policy(w_star: &WeightVector, n: usize) -> Result<BaselinePolicy> {
    BaselinePolicy::build(BaselineKind::Staggered, vec![w_star.clone()], n, 1.0)
}

impl Policy for BaselinePolicy {
    fn reset(&mut self) {
        self.active = None;
        self.from.iter_mut().for_each(|x| *x = 0.0);
        self.last.iter_mut().for_each(|x| *x = 0.0);
        self.k = 0;
    }

    fn act(&mut self, env: &PortfolioEnv, _obs: &Observation) -> Vec<f64> {
        let z = self.regime(env);
        self.next_target(z)
    }
}

pub const DEFAULT_FRACTIONS: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
pub const DEFAULT_ADJUSTMENT_PERIODS: [usize; 7] = [1, 2, 4, 8, 16, 32, 64];

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub fraction: f64,
    pub n: usize,
    pub stats: EvalStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    pub cells: Vec<GridCell>,
    pub best: usize,
}

impl GridSearchResult {
    pub fn best_cell(&self) -> &GridCell {
        &self.cells[self.best]
    }

    /// `fraction,n,mean_growth,mad,bankruptcies,episodes`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "fraction,n,mean_growth,mad,bankruptcies,episodes")?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for c in &self.cells {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                c.fraction,
                c.n,
                opt(c.stats.mean_growth),
                opt(c.stats.mad),
                c.stats.bankruptcies,
                c.stats.episodes
            )?;
        }
        Ok(())
    }
}

/// Ranks cells: fewer bankruptcies, then higher mean growth, then larger
/// fraction, then shorter adjustment.
fn rank(a: &GridCell, b: &GridCell) -> Ordering {
    b.stats
        .bankruptcies
        .cmp(&a.stats.bankruptcies)
        .then_with(|| {
            let g = |c: &GridCell| c.stats.mean_growth.unwrap_or(f64::NEG_INFINITY);
            g(a).total_cmp(&g(b))
        })
        .then_with(|| a.fraction.total_cmp(&b.fraction))
        .then_with(|| b.n.cmp(&a.n))
}

/// Evaluates the fractional, staggered regime-switching baseline on every
/// `(fraction, n)` cell. All cells see the same `episodes_per_cell` markets.
pub fn rs_baseline_grid_search(
    config: &EnvConfig,
    fractions: &[f64],
    ns: &[usize],
    episodes_per_cell: usize,
    seed: u64,
    source: &RegimeSource,
) -> Result<GridSearchResult> {
    if fractions.is_empty() || ns.is_empty() || episodes_per_cell == 0 {
        return Err(Error::config("grid search needs non-empty grids and at least one episode per cell"));
    }
    let mut cells = Vec::with_capacity(fractions.len() * ns.len());
    for &f in fractions {
        for &n in ns {
            let proto = BaselinePolicy::regime_switching(&config.market, f, n)?.with_source(source.clone());
            let stats = evaluate_policy(config, || proto.clone(), episodes_per_cell, seed)?;
            cells.push(GridCell { fraction: f, n, stats });
        }
    }
    let best = (0..cells.len()).max_by(|&a, &b| rank(&cells[a], &cells[b])).expect("non-empty grid");
    Ok(GridSearchResult { cells, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::impact::ImpactParams;
    use crate::rng::{stream, Domain};
    use rand::Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn single_asset_closed_form() {
        let p = MarketParams::single_asset();
        let w = optimal_weights(&p).unwrap();
        assert!(close(w.stocks()[0], 2.0, 1e-12));
        assert!(close(w.cash(), -1.0, 1e-12));
        assert!(close(expected_growth(&w, &p), 0.12, 1e-12));
        assert!(close(expected_growth(&WeightVector::new(vec![0.0]), &p), 0.04, 1e-15));
    }

    /// Values from an independent dense solve of the tabulated parameters.
    #[test]
    fn tabulated_optima() {
        let r = solve(&MarketParams::etf_universe()).unwrap();
        let expect = [0.766_513_40, 0.659_256_05, 1.284_217_82];
        for (w, e) in r.weights.stocks().iter().zip(expect) {
            assert!(close(*w, e, 1e-7), "{w} vs {e}");
        }
        assert!(close(r.growth, 0.114_166_870, 1e-8));
        assert!(r.residual < 1e-10);

        let bull = solve(&MarketParams::bull_regime()).unwrap();
        for (w, e) in bull.weights.stocks().iter().zip([1.943_906_18, 1.680_828_67, 2.177_959_34]) {
            assert!(close(*w, e, 1e-7), "{w} vs {e}");
        }
        assert!(close(bull.growth, 0.273_478_146, 1e-8));

        let bear = solve(&MarketParams::bear_regime()).unwrap();
        for (w, e) in bear.weights.stocks().iter().zip([-2.186_025_11, 1.215_022_43, 0.404_064_85]) {
            assert!(close(*w, e, 1e-7), "{w} vs {e}");
        }
        assert!(close(bear.weights.cash(), 1.566_937_83, 1e-7));
        assert!(close(bear.growth, 0.103_201_902, 1e-8));
    }

    #[test]
    fn singular_covariance_is_an_error() {
        let p = MarketParams::from_upper(vec![0.1, 0.1], vec![0.2, 0.2], &[1.0], 0.0).unwrap();
        assert!(matches!(optimal_weights(&p), Err(Error::Singular(_))));
    }

    #[test]
    fn optimum_is_a_local_maximum() {
        let p = MarketParams::etf_universe();
        let w = optimal_weights(&p).unwrap();
        let best = expected_growth(&w, &p);
        assert!(growth_gradient(&w, &p).iter().all(|g| g.abs() < 1e-8));
        let mut rng = stream(0, Domain::Simulation, 0);
        for _ in 0..1000 {
            let d: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            let scale = rng.random_range(0.0..0.1) / norm;
            let moved = WeightVector::new(w.stocks().iter().zip(&d).map(|(a, b)| a + b * scale).collect());
            assert!(best >= expected_growth(&moved, &p));
        }
    }

    #[test]
    fn fractional_frontier() {
        let p = MarketParams::single_asset();
        let w = optimal_weights(&p).unwrap();
        assert_eq!(fractional_weights(&w, 1.0).unwrap(), w);
        let half = fractional_weights(&w, 0.5).unwrap();
        assert!(close(half.stocks()[0], 1.0, 1e-15));
        assert!(close(expected_growth(&half, &p), 0.10, 1e-12));
        assert!(fractional_weights(&w, 0.0).is_err());

        let p = MarketParams::etf_universe();
        let w = optimal_weights(&p).unwrap();
        let lw = expected_growth(&w, &p) - p.cash_rate;
        let s = DVector::from_column_slice(w.stocks());
        let wsw = (s.transpose() * p.covariance() * &s)[(0, 0)];
        let vol = portfolio_volatility(&w, &p);
        let fs: Vec<f64> = (1..=20).map(|i| i as f64 / 20.0).collect();
        let excess: Vec<f64> = fs
            .iter()
            .map(|&f| {
                let fw = fractional_weights(&w, f).unwrap();
                assert!(close(portfolio_volatility(&fw, &p), f * vol, 1e-12));
                let e = expected_growth(&fw, &p) - p.cash_rate;
                assert!(close(e, f * lw + 0.5 * f * (1.0 - f) * wsw, 1e-12));
                e
            })
            .collect();
        for w3 in excess.windows(3) {
            assert!(w3[0] - 2.0 * w3[1] + w3[2] <= 1e-12);
        }
    }

    #[test]
    fn stationary_distributions() {
        let id = DMatrix::<f64>::identity(2, 2);
        assert!(stationary_distribution(&id).is_err());
        let flip = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(stationary_distribution(&flip), Err(Error::Markov(m)) if m.contains("periodic")));
        let sym = DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.3, 0.7]);
        let pi = stationary_distribution(&sym).unwrap();
        assert!(close(pi[0], 0.5, 1e-15) && close(pi[1], 0.5, 1e-15));
        let p = RegimeModel::bull_bear().transition;
        let pi = stationary_distribution(&p).unwrap();
        assert!(close(pi[0], 0.75, 1e-12) && close(pi[1], 0.25, 1e-12));
        let res = DMatrix::from_row_slice(1, 2, &pi) * &p - DMatrix::from_row_slice(1, 2, &pi);
        assert!(res.amax() < 1e-12);
    }

    #[test]
    fn switching_growth_cases() {
        assert_eq!(switching_growth(&[0.274, 0.104], &[1.0, 0.0]).unwrap(), 0.274);
        assert!(close(switching_growth(&[0.274, 0.104], &[0.75, 0.25]).unwrap(), 0.2315, 1e-12));
        assert!(close(switching_growth(&[0.2, 0.2], &[0.3, 0.7]).unwrap(), 0.2, 1e-15));
        assert!(switching_growth(&[0.1], &[0.5, 0.5]).is_err());
        let sol = solve_regimes(&RegimeModel::bull_bear()).unwrap();
        assert!(close(sol.switching_growth, 0.230_91, 1e-4));
    }

    #[test]
    fn q_surface_properties() {
        let p = MarketParams::etf_universe().select(&[0, 2]).unwrap();
        let w = optimal_weights(&p).unwrap();
        let a1 = Axis::new(-1.0, 3.0, 81).unwrap();
        let a2 = Axis::new(-1.0, 3.0, 81).unwrap();
        let q = q_surface(&p, a1, a2).unwrap();
        let (b1, b2, _) = q.argmax();
        assert!((b1 - w.stocks()[0]).abs() <= a1.step() && (b2 - w.stocks()[1]).abs() <= a2.step());
        let i0 = q.w1.iter().position(|v| v.abs() < 1e-12).unwrap();
        let j0 = q.w2.iter().position(|v| v.abs() < 1e-12).unwrap();
        assert!(close(q.values[(i0, j0)], p.cash_rate, 1e-15));
        for i in 0..81 {
            for j in 1..80 {
                assert!(q.values[(i, j - 1)] - 2.0 * q.values[(i, j)] + q.values[(i, j + 1)] <= 1e-12);
                assert!(q.values[(j - 1, i)] - 2.0 * q.values[(j, i)] + q.values[(j + 1, i)] <= 1e-12);
            }
        }
        let mut buf = Vec::new();
        q.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 81 * 81 + 1);
        assert!(q_surface(&MarketParams::etf_universe(), a1, a2).is_err());
    }

    #[test]
    fn staggered_ramp() {
        let w = WeightVector::new(vec![2.0, -1.0]);
        let mut one = staggered_policy(&w, 1).unwrap();
        assert_eq!(one.next_target(0), vec![2.0, -1.0]);
        let mut four = staggered_policy(&w, 4).unwrap();
        let seq: Vec<Vec<f64>> = (0..6).map(|_| four.next_target(0)).collect();
        assert_eq!(seq[0], vec![0.5, -0.25]);
        assert_eq!(seq[1], vec![1.0, -0.5]);
        assert_eq!(seq[2], vec![1.5, -0.75]);
        assert_eq!(seq[3], vec![2.0, -1.0]);
        assert_eq!(seq[5], vec![2.0, -1.0]);
        assert!(staggered_policy(&w, 0).is_err());
    }

    #[test]
    fn regime_ramp_restarts_from_previous_target() {
        let mut p = BaselinePolicy::regime_switching(&RegimeModel::bull_bear(), 0.5, 2).unwrap();
        let bull: Vec<f64> = p.targets[0].stocks().iter().map(|w| w * 0.5).collect();
        let bear: Vec<f64> = p.targets[1].stocks().iter().map(|w| w * 0.5).collect();
        let t0 = p.next_target(0);
        assert!(t0.iter().zip(&bull).all(|(a, b)| close(*a, b / 2.0, 1e-15)));
        assert_eq!(p.next_target(0), bull);
        let mid = p.next_target(1);
        for i in 0..3 {
            assert!(close(mid[i], 0.5 * (bull[i] + bear[i]), 1e-15));
        }
        assert_eq!(p.next_target(1), bear);
        p.reset();
        assert!(close(p.next_target(1)[0], bear[0] / 2.0, 1e-15));
    }

    #[test]
    fn grid_search_single_cell_and_ranking() {
        let cfg = EnvConfig::new(RegimeModel::bull_bear(), ImpactParams::standard(), 0.25, 256, 2, 1000.0).unwrap();
        let r = rs_baseline_grid_search(&cfg, &[0.7], &[4], 3, 1, &RegimeSource::Foresight).unwrap();
        assert_eq!(r.cells.len(), 1);
        assert_eq!((r.best_cell().fraction, r.best_cell().n), (0.7, 4));

        let cell = |f: f64, n: usize, g: Option<f64>, b: usize| GridCell {
            fraction: f,
            n,
            stats: EvalStats { episodes: 2, bankruptcies: b, mean_growth: g, mad: Some(0.0), growths: vec![] },
        };
        let a = cell(0.5, 4, Some(0.2), 0);
        assert_eq!(rank(&a, &cell(1.0, 1, Some(0.3), 1)), Ordering::Greater);
        assert_eq!(rank(&a, &cell(0.5, 4, Some(0.1), 0)), Ordering::Greater);
        assert_eq!(rank(&a, &cell(0.6, 4, Some(0.2), 0)), Ordering::Less);
        assert_eq!(rank(&a, &cell(0.5, 2, Some(0.2), 0)), Ordering::Less);
    }

    #[test]
    fn fixed_optimum_matches_expected_growth_without_impact() {
        let market = RegimeModel::single(MarketParams::etf_universe());
        let cfg = EnvConfig::new(market, ImpactParams::none(), 5.0, 256, 1, 1000.0).unwrap();
        let w = optimal_weights(&MarketParams::etf_universe()).unwrap();
        let stats = evaluate_policy(&cfg, || BaselinePolicy::fixed(w.clone()), 240, 17).unwrap();
        let se = stats.std_error().unwrap();
        let m = stats.mean_growth.unwrap();
        assert_eq!(stats.bankruptcies, 0);
        assert!((m - 0.114_167).abs() < 3.0 * se, "{m} vs 0.114167 (se {se})");
    }
}
