//! Multivariate Gaussian hidden Markov model over per-period log returns.
//!
//! Fitting is Viterbi training (hard EM). Each iteration decodes the most
//! likely state path under the current parameters, then re-estimates the
//! parameters from that assignment. The re-estimation is the exact maximiser
//! of the penalised objective
//!
//! ```text
//! J = log p(x, z | theta) - sum_k [ mean_prior/2 mu_k' S_k^-1 mu_k + covar_prior/2 tr(S_k^-1) ]
//! ```
//!
//! subject to every covariance eigenvalue being at least `min_covar`, so `J`
//! never decreases from one iteration to the next.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{StandardNormal, Uniform};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{stream, Domain};
use crate::sim::{generate_path, MarketParams, PricePath, RegimeModel};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const FORMAT_HEADER: &str = "kelly-lab-hmm v1";

#[derive(Debug, Clone, PartialEq)]
struct Emission {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
    log_norm: f64,
}

impl Emission {
    fn new(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Hmm("emission covariance is not positive definite".into()))?
            .l();
        let log_det: f64 = 2.0 * chol.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Self { mean: mean.clone(), log_norm: -0.5 * (mean.len() as f64 * LN_2PI + log_det), chol })
    }

    fn log_pdf(&self, x: &[f64]) -> f64 {
        let d = self.mean.len();
        // Forward substitution for L y = x - mu.
        let mut y = [0.0f64; 16];
        let mut heap;
        let y: &mut [f64] = if d <= 16 {
            &mut y[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        let mut q = 0.0;
        for i in 0..d {
            let mut s = x[i] - self.mean[i];
            for j in 0..i {
                s -= self.chol[(i, j)] * y[j];
            }
            y[i] = s / self.chol[(i, i)];
            q += y[i] * y[i];
        }
        self.log_norm - 0.5 * q
    }

    /// `mu' S^-1 mu` and `tr(S^-1)`.
    fn prior_terms(&self) -> (f64, f64) {
        let d = self.mean.len();
        let inv_l = self.chol.clone().solve_lower_triangular(&DMatrix::identity(d, d)).expect("nonsingular");
        let z = &inv_l * &self.mean;
        (z.norm_squared(), inv_l.norm_squared())
    }
}

/// Gaussian HMM with full covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHmmModel {
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
    transition: DMatrix<f64>,
    initial: Vec<f64>,
    emissions: Vec<Emission>,
}

impl GaussianHmmModel {
    pub fn new(
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
        transition: DMatrix<f64>,
        initial: Vec<f64>,
    ) -> Result<Self> {
        let k = means.len();
        if k == 0 {
            return Err(Error::Hmm("model needs at least one state".into()));
        }
        let d = means[0].len();
        if covariances.len() != k || initial.len() != k || transition.shape() != (k, k) {
            return Err(Error::Hmm(format!("inconsistent shapes for a {k}-state model")));
        }
        if means.iter().any(|m| m.len() != d) || covariances.iter().any(|c| c.shape() != (d, d)) {
            return Err(Error::Hmm("means and covariances must share one dimension".into()));
        }
        for c in &covariances {
            if (c - c.transpose()).amax() > 1e-12 * c.amax().max(1e-300) {
                return Err(Error::Hmm("covariance is not symmetric".into()));
            }
        }
        crate::sim::check_stochastic(&transition).map_err(|e| Error::Hmm(e.to_string()))?;
        if initial.iter().any(|p| !(*p >= 0.0)) || (initial.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Hmm("initial distribution must be non-negative and sum to 1".into()));
        }
        let emissions = means.iter().zip(&covariances).map(|(m, c)| Emission::new(m, c)).collect::<Result<_>>()?;
        Ok(Self { means, covariances, transition, initial, emissions })
    }

    pub fn n_states(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// Same model with state `i` moved to position `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        let k = self.n_states();
        check_permutation(perm, k)?;
        let mut inv = vec![0; k];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        Self::new(
            inv.iter().map(|&i| self.means[i].clone()).collect(),
            inv.iter().map(|&i| self.covariances[i].clone()).collect(),
            DMatrix::from_fn(k, k, |a, b| self.transition[(inv[a], inv[b])]),
            inv.iter().map(|&i| self.initial[i]).collect(),
        )
    }

    pub fn emission_log_pdf(&self, state: usize, x: &[f64]) -> f64 {
        self.emissions[state].log_pdf(x)
    }

    /// Log joint probability of observations and a given state path.
    pub fn path_log_prob(&self, seq: &[Vec<f64>], path: &[usize]) -> f64 {
        let mut lp = 0.0;
        for (t, (x, &z)) in seq.iter().zip(path).enumerate() {
            lp += if t == 0 { self.initial[z].ln() } else { self.transition[(path[t - 1], z)].ln() };
            lp += self.emission_log_pdf(z, x);
        }
        lp
    }

    fn log_prior(&self, cfg: &HmmFitConfig) -> f64 {
        self.emissions
            .iter()
            .map(|e| {
                let (quad, trace) = e.prior_terms();
                -0.5 * (cfg.mean_prior * quad + cfg.covar_prior * trace)
            })
            .sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Plain-text parameter file. Numbers use the shortest representation
    /// that parses back to the same `f64`.
    ///
    /// ```text
    /// kelly-lab-hmm v1
    /// states K
    /// dim D
    /// initial p_1 ... p_K
    /// transition        (K rows follow)
    /// mean k            (one row of D values)
    /// covariance k      (D rows follow)
    /// ```
    pub fn to_text(&self) -> String {
        let row = |v: &mut String, xs: &mut dyn Iterator<Item = f64>| {
            let items: Vec<String> = xs.map(|x| format!("{x:?}")).collect();
            let _ = writeln!(v, "{}", items.join(" "));
        };
        let mut s = String::new();
        let _ = writeln!(s, "{FORMAT_HEADER}\nstates {}\ndim {}", self.n_states(), self.dim());
        s.push_str("initial ");
        row(&mut s, &mut self.initial.iter().copied());
        s.push_str("transition\n");
        for r in self.transition.row_iter() {
            row(&mut s, &mut r.iter().copied());
        }
        for k in 0..self.n_states() {
            let _ = writeln!(s, "mean {k}");
            row(&mut s, &mut self.means[k].iter().copied());
            let _ = writeln!(s, "covariance {k}");
            for r in self.covariances[k].row_iter() {
                row(&mut s, &mut r.iter().copied());
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut next = |what: &str| -> Result<(usize, &str)> {
            lines.next().map(|(i, l)| (i + 1, l.trim())).ok_or_else(|| Error::Parse(format!("missing {what}")))
        };
        let (_, header) = next("header")?;
        if header != FORMAT_HEADER {
            return Err(Error::Parse(format!("unsupported hmm file header '{header}'")));
        }
        let keyed = |(ln, l): (usize, &str), key: &str| -> Result<String> {
            l.strip_prefix(key)
                .map(|r| r.trim().to_string())
                .ok_or_else(|| Error::Parse(format!("line {ln}: expected '{key}'")))
        };
        let int = |s: String, ln: usize| s.parse::<usize>().map_err(|e| Error::Parse(format!("line {ln}: {e}")));
        let nums = |s: &str, n: usize, ln: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = s
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("line {ln}: {e}")))?;
            if v.len() != n {
                return Err(Error::Parse(format!("line {ln}: expected {n} values, found {}", v.len())));
            }
            Ok(v)
        };
        let l = next("states")?;
        let k = int(keyed(l, "states")?, l.0)?;
        let l = next("dim")?;
        let d = int(keyed(l, "dim")?, l.0)?;
        let l = next("initial")?;
        let initial = nums(&keyed(l, "initial")?, k, l.0)?;
        let l = next("transition")?;
        keyed(l, "transition")?;
        let mut trans = Vec::with_capacity(k * k);
        for _ in 0..k {
            let (ln, row) = next("transition row")?;
            trans.extend(nums(row, k, ln)?);
        }
        let mut means = Vec::with_capacity(k);
        let mut covs = Vec::with_capacity(k);
        for s in 0..k {
            let l = next("mean")?;
            if int(keyed(l, "mean")?, l.0)? != s {
                return Err(Error::Parse(format!("line {}: expected mean {s}", l.0)));
            }
            let (ln, row) = next("mean row")?;
            means.push(DVector::from_vec(nums(row, d, ln)?));
            let l = next("covariance")?;
            if int(keyed(l, "covariance")?, l.0)? != s {
                return Err(Error::Parse(format!("line {}: expected covariance {s}", l.0)));
            }
            let mut c = Vec::with_capacity(d * d);
            for _ in 0..d {
                let (ln, row) = next("covariance row")?;
                c.extend(nums(row, d, ln)?);
            }
            covs.push(DMatrix::from_row_slice(d, d, &c));
        }
        Self::new(means, covs, DMatrix::from_row_slice(k, k, &trans), initial)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HmmFitConfig {
    pub n_states: usize,
    pub n_init: usize,
    pub max_iter: usize,
    /// Stop once the objective improves by less than this.
    pub tol: f64,
    pub mean_prior: f64,
    pub covar_prior: f64,
    /// Floor on every covariance eigenvalue.
    pub min_covar: f64,
}

impl Default for HmmFitConfig {
    fn default() -> Self {
        Self { n_states: 2, n_init: 10, max_iter: 100, tol: 1e-7, mean_prior: 1e-4, covar_prior: 1e-4, min_covar: 1e-6 }
    }
}

impl HmmFitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.tol, self.mean_prior, self.covar_prior, self.min_covar];
        if self.n_states == 0 || self.n_init == 0 || self.max_iter == 0 || positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::config("hmm settings must all be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: GaussianHmmModel,
    /// Final penalised objective of the winning restart.
    pub objective: f64,
    /// Objective after each decode of the winning restart.
    pub history: Vec<f64>,
    pub iterations: usize,
    /// Restarts that had to be reinitialised because a state lost all its
    /// observations.
    pub reinitialisations: usize,
}

const MAX_REINIT: usize = 20;

/// Fits a Gaussian HMM by Viterbi training, keeping the best of
/// `config.n_init` restarts.
pub fn fit<R: Rng + ?Sized>(sequences: &[Vec<Vec<f64>>], config: &HmmFitConfig, rng: &mut R) -> Result<FitReport> {
    config.validate()?;
    let k = config.n_states;
    if sequences.is_empty() {
        return Err(Error::Hmm("no training sequences".into()));
    }
    let d = sequences[0].first().map_or(0, |r| r.len());
    if d == 0 {
        return Err(Error::Hmm("training rows must be non-empty".into()));
    }
    for (i, s) in sequences.iter().enumerate() {
        if s.len() < 10 * k {
            return Err(Error::Hmm(format!("sequence {i} has {} rows; at least {} needed", s.len(), 10 * k)));
        }
        if s.iter().any(|r| r.len() != d || r.iter().any(|x| !x.is_finite())) {
            return Err(Error::Hmm(format!("sequence {i} has ragged or non-finite rows")));
        }
    }
    let master: u64 = rng.random();
    let runs: Vec<(Option<Run>, usize)> = (0..config.n_init)
        .into_par_iter()
        .map(|i| {
            let mut r = stream(master, Domain::HmmInit, i as u64);
            let mut reinit = 0;
            loop {
                let init = initial_model(sequences, config, &mut r);
                match init.and_then(|m| run_restart(m, sequences, config)) {
                    Ok(Some(run)) => return (Some(run), reinit),
                    _ if reinit + 1 >= MAX_REINIT => return (None, reinit + 1),
                    _ => reinit += 1,
                }
            }
        })
        .collect();
    let reinitialisations = runs.iter().map(|(_, n)| n).sum();
    let best = runs
        .into_iter()
        .filter_map(|(r, _)| r)
        .fold(None::<Run>, |best, r| match best {
            Some(b) if b.objective >= r.objective => Some(b),
            _ => Some(r),
        })
        .ok_or_else(|| Error::Hmm("every restart degenerated (a state received no observations)".into()))?;
    Ok(FitReport {
        model: best.model,
        objective: best.objective,
        iterations: best.history.len(),
        history: best.history,
        reinitialisations,
    })
}

struct Run {
    model: GaussianHmmModel,
    objective: f64,
    history: Vec<f64>,
}

fn pooled_moments(sequences: &[Vec<Vec<f64>>], d: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n: usize = sequences.iter().map(|s| s.len()).sum();
    let mut mean = DVector::zeros(d);
    for x in sequences.iter().flatten() {
        mean += DVector::from_column_slice(x);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for x in sequences.iter().flatten() {
        let c = DVector::from_column_slice(x) - &mean;
        cov += &c * c.transpose();
    }
    (mean, cov / n as f64)
}

/// Random start: means jittered around the pooled mean by half a standard
/// deviation, covariances the pooled covariance scaled by `e^u`, `u ~ U(-1, 1)`.
fn initial_model<R: Rng + ?Sized>(
    sequences: &[Vec<Vec<f64>>],
    cfg: &HmmFitConfig,
    rng: &mut R,
) -> Result<GaussianHmmModel> {
    let k = cfg.n_states;
    let d = sequences[0][0].len();
    let (mean, cov) = pooled_moments(sequences, d);
    let cov = floor_eigenvalues(cov, cfg.min_covar);
    let l = cov.clone().cholesky().expect("floored covariance is positive definite").l();
    let unit = Uniform::new(-1.0f64, 1.0).expect("valid range");
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    for _ in 0..k {
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        means.push(&mean + &l * z * 0.5);
        covs.push(floor_eigenvalues(&cov * rng.sample(unit).exp(), cfg.min_covar));
    }
    let stay = if k == 1 { 1.0 } else { 0.9 };
    let trans = DMatrix::from_fn(k, k, |i, j| if i == j { stay } else { (1.0 - stay) / (k - 1) as f64 });
    GaussianHmmModel::new(means, covs, trans, vec![1.0 / k as f64; k])
}

fn floor_eigenvalues(c: DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = (&c + c.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    (&out + out.transpose()) * 0.5
}

/// Hard-EM iterations from one starting model. `None` when a state ends up
/// with no observations.
fn run_restart(
    mut model: GaussianHmmModel,
    sequences: &[Vec<Vec<f64>>],
    cfg: &HmmFitConfig,
) -> Result<Option<Run>> {
    let mut history = Vec::new();
    for _ in 0..cfg.max_iter {
        let mut paths = Vec::with_capacity(sequences.len());
        let mut objective = model.log_prior(cfg);
        for s in sequences {
            let (p, lp) = viterbi(&model, s);
            objective += lp;
            paths.push(p);
        }
        if !objective.is_finite() {
            return Ok(None);
        }
        let converged = history.last().is_some_and(|prev: &f64| objective - prev < cfg.tol);
        history.push(objective);
        if converged {
            break;
        }
        match reestimate(&model, sequences, &paths, cfg)? {
            Some(m) => model = m,
            None => return Ok(None),
        }
    }
    let objective = *history.last().expect("at least one iteration");
    Ok(Some(Run { model, objective, history }))
}

fn reestimate(
    prev: &GaussianHmmModel,
    sequences: &[Vec<Vec<f64>>],
    paths: &[Vec<usize>],
    cfg: &HmmFitConfig,
) -> Result<Option<GaussianHmmModel>> {
    let k = cfg.n_states;
    let d = prev.dim();
    let mut counts = vec![0usize; k];
    let mut sums = vec![DVector::<f64>::zeros(d); k];
    let mut trans = DMatrix::<f64>::zeros(k, k);
    let mut first = vec![0.0; k];
    for (s, p) in sequences.iter().zip(paths) {
        first[p[0]] += 1.0;
        for (t, (x, &z)) in s.iter().zip(p).enumerate() {
            counts[z] += 1;
            sums[z] += DVector::from_column_slice(x);
            if t > 0 {
                trans[(p[t - 1], z)] += 1.0;
            }
        }
    }
    if counts.contains(&0) {
        return Ok(None);
    }
    let means: Vec<DVector<f64>> = (0..k).map(|j| &sums[j] / (counts[j] as f64 + cfg.mean_prior)).collect();
    let mut scatter = vec![DMatrix::<f64>::zeros(d, d); k];
    for (s, p) in sequences.iter().zip(paths) {
        for (x, &z) in s.iter().zip(p) {
            let c = DVector::from_column_slice(x) - &means[z];
            scatter[z] += &c * c.transpose();
        }
    }
    let covs: Vec<DMatrix<f64>> = (0..k)
        .map(|j| {
            let a = &scatter[j]
                + &means[j] * means[j].transpose() * cfg.mean_prior
                + DMatrix::identity(d, d) * cfg.covar_prior;
            floor_eigenvalues(a / counts[j] as f64, cfg.min_covar)
        })
        .collect();
    for i in 0..k {
        let total: f64 = trans.row(i).sum();
        for j in 0..k {
            trans[(i, j)] = if total > 0.0 { trans[(i, j)] / total } else { prev.transition[(i, j)] };
        }
    }
    let n_seq = sequences.len() as f64;
    let initial = first.iter().map(|c| c / n_seq).collect();
    GaussianHmmModel::new(means, covs, trans, initial).map(Some)
}

/// Log-domain Viterbi: MAP state path and its log joint probability.
/// Ties go to the lowest state index.
fn viterbi(model: &GaussianHmmModel, seq: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let k = model.n_states();
    let t_len = seq.len();
    if t_len == 0 {
        return (Vec::new(), 0.0);
    }
    let log_a = model.transition.map(f64::ln);
    let mut delta: Vec<f64> = (0..k).map(|j| model.initial[j].ln() + model.emissions[j].log_pdf(&seq[0])).collect();
    let mut back = vec![0usize; t_len * k];
    let mut next = vec![0.0; k];
    for t in 1..t_len {
        for j in 0..k {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (i, d) in delta.iter().enumerate() {
                let v = d + log_a[(i, j)];
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            back[t * k + j] = arg;
            next[j] = best + model.emissions[j].log_pdf(&seq[t]);
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let (mut z, mut best) = (0, f64::NEG_INFINITY);
    for (j, d) in delta.iter().enumerate() {
        if *d > best {
            best = *d;
            z = j;
        }
    }
    let mut path = vec![0; t_len];
    path[t_len - 1] = z;
    for t in (1..t_len).rev() {
        z = back[t * k + z];
        path[t - 1] = z;
    }
    (path, best)
}

/// Most likely state path.
pub fn decode(model: &GaussianHmmModel, sequence: &[Vec<f64>]) -> Vec<usize> {
    viterbi(model, sequence).0
}

pub fn decode_with_log_prob(model: &GaussianHmmModel, sequence: &[Vec<f64>]) -> (Vec<usize>, f64) {
    viterbi(model, sequence)
}

/// Regime label for the latest return in the window: the last state of the
/// decoded path. An empty window falls back to the most likely initial state.
pub fn predict_current(model: &GaussianHmmModel, window: &[Vec<f64>]) -> usize {
    if window.is_empty() {
        return (0..model.n_states()).fold(0, |b, j| if model.initial[j] > model.initial[b] { j } else { b });
    }
    *viterbi(model, window).0.last().expect("non-empty window")
}

/// Simulates `n_episodes` paths of `n_periods` periods (plus `warmup`
/// earlier ones) on the stream family `(seed, domain)`.
pub fn simulate_paths(
    model: &RegimeModel,
    n_periods: usize,
    dt: f64,
    warmup: usize,
    n_episodes: usize,
    seed: u64,
    domain: Domain,
) -> Vec<PricePath> {
    (0..n_episodes)
        .into_par_iter()
        .map(|i| generate_path(model, n_periods, dt, warmup, &mut stream(seed, domain, i as u64)))
        .collect()
}

/// Every log return of a path, warm-up included, with the regime that
/// generated each one.
pub fn labelled_returns(path: &PricePath) -> (Vec<Vec<f64>>, Vec<usize>) {
    let t0 = -(path.warmup() as isize);
    let t1 = path.n_periods() as isize;
    let truth = (t0..t1).map(|t| path.regime(t)).collect();
    (path.log_returns(t0, t1), truth)
}

/// Accuracy of filtering the regime online: at each episode period the model
/// decodes the trailing `window - 1` returns, and the mapped label of the
/// latest return is scored against the regime that generated it.
pub fn online_accuracy(model: &GaussianHmmModel, perm: &[usize], paths: &[PricePath], window: usize) -> Result<f64> {
    if window < 2 {
        return Err(Error::Hmm("online decoding needs a window of at least two prices".into()));
    }
    let lag = window as isize - 1;
    let mut predicted = Vec::new();
    let mut truth = Vec::new();
    for p in paths {
        if (p.warmup() as isize) < lag {
            return Err(Error::Hmm("paths carry too little history for the window".into()));
        }
        for t in 0..p.n_periods() as isize {
            predicted.push(predict_current(model, &p.log_returns(t - lag, t)));
            truth.push(p.regime(t - 1));
        }
    }
    accuracy_with(&predicted, &truth, perm)
}

/// KL divergence `KL(N(m0, c0) || N(m1, c1))`.
fn gaussian_kl(m0: &DVector<f64>, c0: &DMatrix<f64>, m1: &DVector<f64>, c1: &DMatrix<f64>) -> Result<f64> {
    let d = m0.len() as f64;
    let ch1 = c1.clone().cholesky().ok_or_else(|| Error::Hmm("regime covariance is not positive definite".into()))?;
    let ch0 = c0.clone().cholesky().ok_or_else(|| Error::Hmm("state covariance is not positive definite".into()))?;
    let diff = m1 - m0;
    let tr = ch1.solve(c0).trace();
    let quad = diff.dot(&ch1.solve(&diff));
    let ld = |l: &DMatrix<f64>| 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(0.5 * (tr + quad - d + ld(&ch1.l()) - ld(&ch0.l())))
}

/// Maps HMM states to simulator regimes: `perm[state] = regime`.
///
/// Each state is matched to the regime whose per-period log-return law
/// `N((mu - sigma^2/2) dt, Sigma dt)` is nearest in KL divergence. Means
/// alone are too close for daily data to separate reliably, so the
/// covariances take part in the match.
pub fn align_labels(model: &GaussianHmmModel, regimes: &[MarketParams], dt: f64) -> Result<Vec<usize>> {
    let k = model.n_states();
    if regimes.len() != k {
        return Err(Error::Hmm(format!("{k} states but {} regimes", regimes.len())));
    }
    if regimes.iter().any(|r| r.n_assets() != model.dim()) {
        return Err(Error::Hmm("regime dimension differs from the model".into()));
    }
    let targets: Vec<(DVector<f64>, DMatrix<f64>)> = regimes
        .iter()
        .map(|r| (DVector::from_vec(r.log_drift(dt)), r.covariance() * dt))
        .collect();
    let mut perm = Vec::with_capacity(k);
    for s in 0..k {
        let mut best = (f64::INFINITY, 0);
        for (j, (m, c)) in targets.iter().enumerate() {
            let kl = gaussian_kl(&model.means[s], &model.covariances[s], m, c)?;
            if kl < best.0 {
                best = (kl, j);
            }
        }
        perm.push(best.1);
    }
    check_permutation(&perm, k).map_err(|_| Error::Hmm(format!("state-to-regime matching {perm:?} is not a bijection")))?;
    Ok(perm)
}

fn check_permutation(perm: &[usize], k: usize) -> Result<()> {
    let mut seen = vec![false; k];
    if perm.len() != k {
        return Err(Error::dim(format!("permutation of length {} for {k} states", perm.len())));
    }
    for &p in perm {
        if p >= k || seen[p] {
            return Err(Error::Hmm(format!("{perm:?} is not a permutation")));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Fraction of positions where `perm[predicted] == truth`.
pub fn accuracy_with(predicted: &[usize], truth: &[usize], perm: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::dim(format!("{} predictions for {} labels", predicted.len(), truth.len())));
    }
    if predicted.is_empty() {
        return Err(Error::dim("no labels to score"));
    }
    if predicted.iter().any(|&p| p >= perm.len()) {
        return Err(Error::dim("predicted label outside the permutation"));
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| perm[**p] == **t).count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// Accuracy under the best relabelling of the predictions.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    let k = predicted.iter().chain(truth).max().map_or(1, |m| m + 1);
    if k > 8 {
        return Err(Error::Hmm("label alphabet too large for exhaustive alignment".into()));
    }
    let mut best = 0.0f64;
    for perm in permutations(k) {
        best = best.max(accuracy_with(predicted, truth, &perm)?);
    }
    Ok(best)
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn go(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                go(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::with_capacity(k), &mut vec![false; k], &mut out);
    out
}
