use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use super::manifest::ManifestBuilder;
use super::{Command, Common, OUT_ENV};
use crate::analytic::{self, optimal_weights, staggered_policy, BaselinePolicy, RegimeSource};
use crate::config::{BaselineKindConfig, ExperimentConfig, RegimeSourceConfig, SweepSpec};
use crate::env::{run_episode, EnvConfig, EpisodeResult, PortfolioEnv};
use crate::error::{Error, Result};
use crate::hmm::{self, align_labels, labelled_returns, online_accuracy, simulate_paths, FitReport, GaussianHmmModel};
use crate::rl::checkpoint::Checkpoint;
use crate::rl::train::{train_with_progress, write_training_log};
use crate::rl::{init_network, ActorCritic, NetPolicy};
use crate::rng::{stream, Domain};
use crate::sim::generate_path;
use crate::stats::{run_episodes, EvalStats};

pub(super) fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate(c) => simulate(&c),
        Command::Solve(c) => solve(&c),
        Command::Train { common, sweep } => train(&common, sweep.as_deref()),
        Command::Evaluate { common, checkpoint, episodes } => evaluate(&common, &checkpoint, episodes),
        Command::Baseline { common, episodes, sweep } => baseline(&common, episodes, sweep.as_deref()),
        Command::Qsurface(c) => qsurface(&c),
        Command::HmmFit { common, episodes } => hmm_fit(&common, episodes),
        Command::Gridsearch { common, episodes } => gridsearch(&common, episodes),
    }
}

struct Run {
    cfg: ExperimentConfig,
    out: PathBuf,
    seeds: Vec<u64>,
    manifest: ManifestBuilder,
}

impl Run {
    fn start(name: &str, c: &Common) -> Result<Self> {
        let cfg = ExperimentConfig::load(&c.config)?;
        let out = match &c.out {
            Some(p) => p.clone(),
            None => {
                let root = std::env::var_os(OUT_ENV)
                    .map(PathBuf::from)
                    .or_else(|| cfg.run.output_dir.as_ref().map(PathBuf::from))
                    .unwrap_or_else(|| PathBuf::from("runs"));
                root.join(name)
            }
        };
        std::fs::create_dir_all(&out)?;
        let seeds = c.seed.map_or_else(|| cfg.run.seed_list(), |s| vec![s]);
        let mut manifest = ManifestBuilder::new(name, &c.config, &cfg);
        manifest.seeds(&seeds);
        Ok(Self { cfg, out, seeds, manifest })
    }

    fn write(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        write_file(&self.out.join(name), f)?;
        self.manifest.output(name);
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let out = self.out.clone();
        self.manifest.finish(&out)?;
        println!("wrote {}", out.display());
        Ok(())
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:?}"))
}

fn write_episodes<W: Write>(w: &mut W, rows: &[(String, u64, Vec<EpisodeResult>)]) -> Result<()> {
    writeln!(w, "value,seed,episode,growth,bankrupt,final_wealth,total_cost")?;
    for (value, seed, eps) in rows {
        for (i, e) in eps.iter().enumerate() {
            writeln!(
                w,
                "{value},{seed},{i},{},{},{:?},{:?}",
                opt(e.growth),
                e.bankrupt as u8,
                e.final_wealth,
                e.total_cost
            )?;
        }
    }
    Ok(())
}

fn summarise(eps: &[EpisodeResult]) -> EvalStats {
    EvalStats::from_growths(&eps.iter().map(|e| e.growth).collect::<Vec<_>>())
}

fn write_summary<W: Write>(w: &mut W, rows: &[(String, u64, EvalStats)]) -> Result<()> {
    writeln!(w, "value,seed,mean_growth,mad,bankruptcies,episodes")?;
    for (value, seed, s) in rows {
        writeln!(w, "{value},{seed},{},{},{},{}", opt(s.mean_growth), opt(s.mad), s.bankruptcies, s.episodes)?;
    }
    Ok(())
}

/// The base configuration, or one per sweep value (labelled by the value).
type SweepPoints = (Vec<(String, ExperimentConfig)>, Option<SweepSpec>);

fn sweep_points(cfg: &ExperimentConfig, sweep: Option<&Path>) -> Result<SweepPoints> {
    match sweep {
        None => Ok((vec![(String::new(), cfg.clone())], None)),
        Some(p) => {
            let spec = SweepSpec::load(p)?;
            let points = spec.expand(cfg)?.into_iter().map(|(v, c)| (v.to_string(), c)).collect();
            Ok((points, Some(spec)))
        }
    }
}

fn simulate(c: &Common) -> Result<()> {
    let mut run = Run::start("simulate", c)?;
    let env = run.cfg.env_config()?;
    let seed = run.seeds[0];
    let path = generate_path(&env.market, env.n_periods, env.dt(), env.window - 1, &mut stream(seed, Domain::Simulation, 0));
    run.write("path.csv", |w| path.write_csv(w))?;
    run.finish()
}

fn solve(c: &Common) -> Result<()> {
    let mut run = Run::start("solve", c)?;
    let model = run.cfg.regime_model()?;
    let sol = analytic::solve_regimes(&model)?;
    let n = model.n_assets();
    run.write("solve.csv", |w| {
        write!(w, "regime,stationary,growth,residual,w_0")?;
        for i in 1..=n {
            write!(w, ",w_{i}")?;
        }
        writeln!(w)?;
        for (k, r) in sol.regimes.iter().enumerate() {
            write!(w, "{k},{:?},{:?},{:?}", sol.stationary[k], r.growth, r.residual)?;
            for x in r.weights.all() {
                write!(w, ",{x:?}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    })?;
    for (k, r) in sol.regimes.iter().enumerate() {
        println!("regime {k} (stationary probability {:.4})\n{r}", sol.stationary[k]);
    }
    if model.n_regimes() > 1 {
        println!("switching growth {:.6}", sol.switching_growth);
    }
    run.finish()
}

fn train(c: &Common, sweep: Option<&Path>) -> Result<()> {
    let mut run = Run::start("train", c)?;
    let (points, spec) = sweep_points(&run.cfg, sweep)?;
    let seeds = spec.as_ref().filter(|s| !s.seeds.is_empty() && c.seed.is_none()).map_or(run.seeds.clone(), |s| s.seeds.clone());
    let jobs: Vec<(usize, u64)> = (0..points.len()).flat_map(|p| seeds.iter().map(move |&s| (p, s))).collect();
    let nested = points.len() > 1 || seeds.len() > 1;
    let out = run.out.clone();
    let results: Vec<(usize, u64, EvalStats, Vec<String>)> = jobs
        .par_iter()
        .map(|&(p, seed)| {
            let rel = if nested { PathBuf::from(format!("point-{p}")).join(format!("seed-{seed}")) } else { PathBuf::new() };
            let dir = out.join(&rel);
            std::fs::create_dir_all(&dir)?;
            let (stats, files) = train_one(&points[p].1, seed, &dir, &points[p].0)?;
            let files = files.into_iter().map(|f| rel.join(f).display().to_string()).collect();
            Ok((p, seed, stats, files))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (p, seed, stats, files) in results {
        files.into_iter().for_each(|f| run.manifest.output(f));
        rows.push((points[p].0.clone(), seed, stats));
    }
    run.write("summary.csv", |w| write_summary(w, &rows))?;
    if let Some(s) = &spec {
        println!("sweep over {}", s.parameter);
    }
    for (v, seed, s) in &rows {
        println!("{}seed {seed}: {s}", if v.is_empty() { String::new() } else { format!("{v} ") });
    }
    run.finish()
}

fn train_one(cfg: &ExperimentConfig, seed: u64, dir: &Path, label: &str) -> Result<(EvalStats, Vec<String>)> {
    let env = cfg.env_config()?;
    let tcfg = cfg.train_config()?;
    let spec = cfg.context_spec();
    let net = init_network(&env, &tcfg, spec.as_ref(), seed);
    let tag = if label.is_empty() { format!("seed {seed}") } else { format!("{label} seed {seed}") };
    let out = train_with_progress(&env, net, &tcfg, spec.as_ref(), seed, |row| {
        if (row.episode + 1) % 25 == 0 {
            eprintln!("[{tag}] episode {} steps {} growth {}", row.episode + 1, row.steps, opt(row.growth));
        }
    })?;
    write_file(&dir.join("training_log.csv"), |w| write_training_log(&out.log, w))?;
    Checkpoint::new(out.net.clone(), out.hmm.clone()).save(&dir.join("checkpoint.txt"))?;
    let policy = NetPolicy::new(out.net, out.hmm);
    let eps = run_episodes(&env, || policy.clone(), cfg.run.eval_episodes, cfg.run.eval_seed, false)?;
    write_file(&dir.join("evaluation.csv"), |w| write_episodes(w, &[(label.to_string(), seed, eps.clone())]))?;
    let files = ["training_log.csv", "checkpoint.txt", "evaluation.csv"].map(String::from).to_vec();
    Ok((summarise(&eps), files))
}

fn evaluate(c: &Common, checkpoint: &Path, episodes: Option<usize>) -> Result<()> {
    let mut run = Run::start("evaluate", c)?;
    let env = run.cfg.env_config()?;
    let ck = Checkpoint::load(checkpoint)?;
    let policy = NetPolicy::new(ck.net, ck.hmm);
    let n = episodes.unwrap_or(run.cfg.run.eval_episodes);
    // The evaluation paths come from `--seed` when given.
    let seed = c.seed.unwrap_or(run.cfg.run.eval_seed);
    if policy.net.obs_dim() != env.obs_dim() || policy.net.action_dim() != env.n_assets() {
        return Err(Error::dim("checkpoint does not match the configured environment"));
    }
    let eps = run_episodes(&env, || policy.clone(), n, seed, false)?;
    let stats = summarise(&eps);
    run.write("evaluation.csv", |w| write_episodes(w, &[(String::new(), seed, eps)]))?;
    run.write("summary.csv", |w| write_summary(w, &[(String::new(), seed, stats.clone())]))?;
    println!("{stats}");
    run.finish()
}

/// Fits the configured HMM on simulated episodes and maps its states to regimes.
fn fitted_hmm(cfg: &ExperimentConfig, env: &EnvConfig, seed: u64) -> Result<(FitReport, Vec<usize>)> {
    let h = cfg.hmm.ok_or_else(|| Error::config("this command needs an [hmm] table"))?;
    let paths = simulate_paths(&env.market, env.n_periods, env.dt(), env.window - 1, h.fit_episodes, seed, Domain::HmmData);
    let seqs: Vec<Vec<Vec<f64>>> = paths.iter().map(|p| labelled_returns(p).0).collect();
    let report = hmm::fit(&seqs, &h.fit_config(), &mut stream(seed, Domain::HmmInit, 0))?;
    let perm = align_labels(&report.model, &env.market.regimes, env.dt())?;
    Ok((report, perm))
}

fn regime_source(cfg: &ExperimentConfig, env: &EnvConfig, seed: u64, source: RegimeSourceConfig) -> Result<RegimeSource> {
    Ok(match source {
        RegimeSourceConfig::Foresight => RegimeSource::Foresight,
        RegimeSourceConfig::Hmm => {
            let (report, perm) = fitted_hmm(cfg, env, seed)?;
            RegimeSource::Hmm { model: Arc::new(report.model), perm }
        }
    })
}

fn baseline_policy(cfg: &ExperimentConfig, env: &EnvConfig, seed: u64) -> Result<BaselinePolicy> {
    let b = cfg.baseline_section();
    let single = || {
        if env.market.n_regimes() != 1 {
            return Err(Error::config("fixed and staggered baselines need a single-regime market"));
        }
        optimal_weights(&env.market.regimes[0])
    };
    match b.kind {
        BaselineKindConfig::Fixed => BaselinePolicy::fixed(single()?).with_fraction(b.fraction),
        BaselineKindConfig::Staggered => staggered_policy(&single()?, b.adjustment_periods)?.with_fraction(b.fraction),
        BaselineKindConfig::RegimeSwitching => Ok(BaselinePolicy::regime_switching(&env.market, b.fraction, b.adjustment_periods)?
            .with_source(regime_source(cfg, env, seed, b.source)?)),
    }
}

fn baseline(c: &Common, episodes: Option<usize>, sweep: Option<&Path>) -> Result<()> {
    let mut run = Run::start("baseline", c)?;
    let (points, spec) = sweep_points(&run.cfg, sweep)?;
    let seeds = spec.as_ref().filter(|s| !s.seeds.is_empty() && c.seed.is_none()).map_or(run.seeds.clone(), |s| s.seeds.clone());
    let mut episodes_out = Vec::new();
    let mut rows = Vec::new();
    let mut trace = None;
    for (label, cfg) in &points {
        let env = cfg.env_config()?;
        let n = episodes.unwrap_or(cfg.run.eval_episodes);
        for &seed in &seeds {
            let policy = baseline_policy(cfg, &env, seed)?;
            let eps = run_episodes(&env, || policy.clone(), n, seed, false)?;
            if trace.is_none() {
                let mut p = policy.clone();
                let mut e = PortfolioEnv::new(env.clone())?;
                trace = run_episode(&mut e, &mut p, &mut stream(seed, Domain::EvalPath, 0), true)?.trace;
            }
            rows.push((label.clone(), seed, summarise(&eps)));
            episodes_out.push((label.clone(), seed, eps));
        }
    }
    run.write("evaluation.csv", |w| write_episodes(w, &episodes_out))?;
    run.write("summary.csv", |w| write_summary(w, &rows))?;
    if let Some(t) = trace {
        run.write("trace.csv", |w| t.write_csv(w))?;
    }
    for (v, seed, s) in &rows {
        println!("{}seed {seed}: {s}", if v.is_empty() { String::new() } else { format!("{v} ") });
    }
    run.finish()
}

fn qsurface(c: &Common) -> Result<()> {
    let mut run = Run::start("qsurface", c)?;
    let model = run.cfg.regime_model()?;
    if model.n_regimes() != 1 {
        return Err(Error::config("the Q surface is defined for a single-regime market"));
    }
    let params = &model.regimes[0];
    let (a, b) = run.cfg.qsurface_section().axes()?;
    let surface = analytic::q_surface(params, a, b)?;
    run.write("qsurface.csv", |w| surface.write_csv(w))?;
    let (w1, w2, l) = surface.argmax();
    let opt = analytic::solve(params)?;
    println!("grid argmax  w_1 {w1:.4}  w_2 {w2:.4}  L {l:.6}");
    println!("optimum      w_1 {:.4}  w_2 {:.4}  L {:.6}", opt.weights.stocks()[0], opt.weights.stocks()[1], opt.growth);
    run.finish()
}

fn hmm_fit(c: &Common, episodes: Option<usize>) -> Result<()> {
    let mut run = Run::start("hmm-fit", c)?;
    let env = run.cfg.env_config()?;
    let h = run.cfg.hmm.ok_or_else(|| Error::config("hmm-fit needs an [hmm] table"))?;
    let seed = run.seeds[0];
    let (report, perm) = fitted_hmm(&run.cfg, &env, seed)?;
    let window = env.window;
    let train = simulate_paths(&env.market, env.n_periods, env.dt(), window - 1, h.fit_episodes, seed, Domain::HmmData);
    let n_test = episodes.unwrap_or(h.fit_episodes);
    let test = simulate_paths(&env.market, env.n_periods, env.dt(), window - 1, n_test, seed, Domain::EvalPath);
    let score = |paths: &[crate::sim::PricePath]| -> Result<(f64, f64)> {
        let online = online_accuracy(&report.model, &perm, paths, window)?;
        let mut pred = Vec::new();
        let mut truth = Vec::new();
        for p in paths {
            let (rows, labels) = labelled_returns(p);
            pred.extend(hmm::decode(&report.model, &rows));
            truth.extend(labels);
        }
        Ok((online, hmm::accuracy_with(&pred, &truth, &perm)?))
    };
    let (train_online, train_full) = score(&train)?;
    let (test_online, test_full) = score(&test)?;
    let model: GaussianHmmModel = report.model.relabel(&perm)?;
    run.write("hmm.txt", |w| Ok(w.write_all(model.to_text().as_bytes())?))?;
    run.write("hmm_report.csv", |w| {
        writeln!(w, "split,episodes,online_accuracy,viterbi_accuracy")?;
        writeln!(w, "train,{},{train_online:?},{train_full:?}", train.len())?;
        writeln!(w, "test,{},{test_online:?},{test_full:?}", test.len())?;
        Ok(())
    })?;
    println!(
        "objective {:.3} after {} iterations ({} reinitialisations)",
        report.objective, report.iterations, report.reinitialisations
    );
    println!("accuracy  train online {train_online:.4} viterbi {train_full:.4}");
    println!("          test  online {test_online:.4} viterbi {test_full:.4}");
    run.finish()
}

fn gridsearch(c: &Common, episodes: Option<usize>) -> Result<()> {
    let mut run = Run::start("gridsearch", c)?;
    let env = run.cfg.env_config()?;
    let b = run.cfg.baseline_section();
    let seed = run.seeds[0];
    let source = regime_source(&run.cfg, &env, seed, b.source)?;
    let n = episodes.unwrap_or(b.grid_episodes);
    let result = analytic::rs_baseline_grid_search(&env, &b.grid_fractions, &b.grid_periods, n, seed, &source)?;
    run.write("grid.csv", |w| result.write_csv(w))?;
    let best = result.best_cell();
    println!("best  fraction {}  n {}  {}", best.fraction, best.n, best.stats);
    run.finish()
}
