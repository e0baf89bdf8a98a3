use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use kelly_lab::config::ExperimentConfig;
use kelly_lab::rl::{init_network, Checkpoint};
use kelly_lab_ffi::*;
use tempfile::TempDir;

const SMALL: &str = "version = 1\n[market]\npreset = \"etf\"\n[env]\nhorizon_years = 1.0\nperiods_per_year = 32\nwindow = 4\n";

fn config(toml: &str) -> *mut KlConfig {
    let text = CString::new(toml).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { kl_config_parse(text.as_ptr(), &mut cfg) }, KlStatus::Ok);
    assert!(!cfg.is_null());
    cfg
}

fn last_error() -> String {
    let p = kl_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(kl_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn solve_returns_cash_first_weights() {
    let cfg = config(SMALL);
    let mut w = [0.0; 4];
    let mut growth = 0.0;
    unsafe {
        assert_eq!(kl_solve(cfg, 0, w.as_mut_ptr(), 4, &mut growth), KlStatus::Ok);
        assert!((growth - 0.114167).abs() < 1e-6, "{growth}");
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(kl_solve(cfg, 0, w.as_mut_ptr(), 3, &mut growth), KlStatus::Dimension);
        assert_eq!(kl_solve(cfg, 1, w.as_mut_ptr(), 4, &mut growth), KlStatus::InvalidArgument);
        assert!(last_error().contains("regime 1"));
        let mut n = 0usize;
        assert_eq!(kl_config_n_assets(cfg, &mut n), KlStatus::Ok);
        assert_eq!(n, 3);
        kl_config_free(cfg);
    }
}

#[test]
fn hash_matches_the_library() {
    let cfg = config(SMALL);
    let want = ExperimentConfig::from_toml_str(SMALL).unwrap().hash();
    let mut buf = [0 as std::ffi::c_char; 65];
    unsafe {
        assert_eq!(kl_config_hash(cfg, buf.as_mut_ptr(), 65), KlStatus::Ok);
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_str().unwrap(), want);
        assert_eq!(kl_config_hash(cfg, buf.as_mut_ptr(), 64), KlStatus::InvalidArgument);
        kl_config_free(cfg);
    }
}

#[test]
fn bad_config_reports_status_and_message() {
    let text = CString::new("version = 1\n[market]\npreset = \"etf\"\n[impact]\neta = -1.0\ngamma = 0.0\n").unwrap();
    let mut cfg = ptr::null_mut();
    unsafe {
        assert_eq!(kl_config_parse(text.as_ptr(), &mut cfg), KlStatus::Config);
        assert!(cfg.is_null());
        assert!(last_error().contains("line 4"), "{}", last_error());
        let missing = CString::new("/nonexistent/x.toml").unwrap();
        assert_eq!(kl_config_load(missing.as_ptr(), &mut cfg), KlStatus::Io);
        assert!(last_error().contains("/nonexistent/x.toml"));
        assert_eq!(kl_config_parse(ptr::null(), &mut cfg), KlStatus::NullPointer);
    }
}

#[test]
fn trade_cost_matches_the_library() {
    let mut c = 0.0;
    unsafe {
        assert_eq!(kl_trade_cost(100.0, 101.0, 500.0, 1.0 / 256.0, 1e-9, 1e-7, &mut c), KlStatus::Ok);
        let p = kelly_lab::impact::ImpactParams::standard();
        assert_eq!(c, kelly_lab::impact::trade_cost(100.0, 101.0, 500.0, 1.0 / 256.0, &p));
        assert_eq!(kl_trade_cost(100.0, 101.0, 500.0, 1.0 / 256.0, -1.0, 0.0, &mut c), KlStatus::Config);
        assert_eq!(kl_trade_cost(100.0, 101.0, 500.0, 0.0, 0.0, 0.0, &mut c), KlStatus::InvalidArgument);
    }
}

#[test]
fn environment_episode_runs_to_the_horizon() {
    let cfg = config(SMALL);
    let mut env = ptr::null_mut();
    unsafe {
        assert_eq!(kl_env_new(cfg, &mut env), KlStatus::Ok);
        let d = kl_env_obs_dim(env);
        assert_eq!((d, kl_env_n_assets(env)), (3 * 4 + 3 + 1, 3));
        let mut obs = vec![0.0; d];
        let (mut reward, mut done, mut bankrupt) = (0.0, false, false);
        let a = [0.5, 0.3, 0.2];
        assert_eq!(kl_env_step(env, a.as_ptr(), 3, obs.as_mut_ptr(), d, &mut reward, &mut done, ptr::null_mut()), KlStatus::Lifecycle);
        assert_eq!(kl_env_reset(env, 3, obs.as_mut_ptr(), d), KlStatus::Ok);
        assert_eq!(obs[d - 1], 1.0);
        let mut total = 0.0;
        let mut steps = 0;
        while !done {
            let s = kl_env_step(env, a.as_ptr(), 3, obs.as_mut_ptr(), d, &mut reward, &mut done, &mut bankrupt);
            assert_eq!(s, KlStatus::Ok);
            total += reward;
            steps += 1;
        }
        assert_eq!(steps, 32);
        assert!(!bankrupt);
        assert!((total - (kl_env_wealth(env) / 1000.0).ln()).abs() < 1e-9);
        assert_eq!(kl_env_step(env, a.as_ptr(), 2, obs.as_mut_ptr(), d, &mut reward, &mut done, ptr::null_mut()), KlStatus::Dimension);
        kl_env_free(env);
        kl_config_free(cfg);
    }
}

#[test]
fn null_handles_are_rejected() {
    let mut obs = [0.0; 4];
    unsafe {
        assert_eq!(kl_env_reset(ptr::null_mut(), 0, obs.as_mut_ptr(), 4), KlStatus::NullPointer);
        assert_eq!(kl_env_obs_dim(ptr::null()), 0);
        assert!(kl_env_wealth(ptr::null()).is_nan());
        kl_env_free(ptr::null_mut());
        kl_config_free(ptr::null_mut());
        kl_policy_free(ptr::null_mut());
    }
}

#[test]
fn policy_checkpoint_acts_and_evaluates() {
    let tmp = TempDir::new().unwrap();
    let exp = ExperimentConfig::from_toml_str(SMALL).unwrap();
    let env_cfg = exp.env_config().unwrap();
    let net = init_network(&env_cfg, &kelly_lab::rl::TrainConfig::ppo(1280), None, 9);
    let path = tmp.path().join("policy.txt");
    Checkpoint::new(net, None).save(&path).unwrap();

    let cfg = config(SMALL);
    let (mut policy, mut env) = (ptr::null_mut(), ptr::null_mut());
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    unsafe {
        assert_eq!(kl_policy_load(cpath.as_ptr(), &mut policy), KlStatus::Ok);
        assert_eq!(kl_env_new(cfg, &mut env), KlStatus::Ok);
        let d = kl_env_obs_dim(env);
        let mut obs = vec![0.0; d];
        let mut action = [0.0; 3];
        assert_eq!(kl_env_reset(env, 0, obs.as_mut_ptr(), d), KlStatus::Ok);
        assert_eq!(kl_policy_act(policy, env, obs.as_ptr(), d, action.as_mut_ptr(), 3), KlStatus::Ok);
        assert!(action.iter().all(|a| a.is_finite()));

        let mut a = KlEvalStats { episodes: 0, bankruptcies: 0, mean_growth: 0.0, mad: 0.0 };
        let mut b = a;
        assert_eq!(kl_policy_evaluate(policy, cfg, 4, 7, &mut a), KlStatus::Ok);
        assert_eq!(kl_policy_evaluate(policy, cfg, 4, 7, &mut b), KlStatus::Ok);
        assert_eq!(a, b);
        assert_eq!(a.episodes, 4);
        assert_eq!(kl_policy_evaluate(policy, cfg, 0, 7, &mut a), KlStatus::InvalidArgument);

        let other = config("version = 1\n[market]\npreset = \"single_asset\"\n[env]\nhorizon_years = 1.0\nperiods_per_year = 32\nwindow = 4\n");
        let mut env1 = ptr::null_mut();
        assert_eq!(kl_env_new(other, &mut env1), KlStatus::Ok);
        let d1 = kl_env_obs_dim(env1);
        let mut obs1 = vec![0.0; d1];
        kl_env_reset(env1, 0, obs1.as_mut_ptr(), d1);
        assert_eq!(kl_policy_act(policy, env1, obs1.as_ptr(), d1, action.as_mut_ptr(), 1), KlStatus::Dimension);

        for h in [env, env1] {
            kl_env_free(h);
        }
        kl_config_free(other);
        kl_config_free(cfg);
        kl_policy_free(policy);
    }
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    assert!(include.join("kelly_lab.h").exists());
    let tmp = TempDir::new().unwrap();
    let src = tmp.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"kelly_lab.h\"\n\
         int use(void) {\n\
           KlConfig *cfg = NULL;\n\
           KlStatus s = kl_config_parse(\"version = 1\", &cfg);\n\
           double w[4]; double g;\n\
           if (s == KL_STATUS_OK) { s = kl_solve(cfg, 0, w, 4, &g); kl_config_free(cfg); }\n\
           return s == KL_STATUS_OK ? 0 : (int)s;\n\
         }\n",
    )
    .unwrap();
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let out = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg("-I")
            .arg(&include)
            .arg(&src)
            .output();
        match out {
            Ok(o) => assert!(o.status.success(), "{compiler}: {}", String::from_utf8_lossy(&o.stderr)),
            Err(e) => panic!("{compiler} not runnable: {e}"),
        }
    }
}
