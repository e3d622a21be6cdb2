use std::fs;
use std::path::PathBuf;

use proptest::prelude::*;
use rand::Rng as _;

use super::*;
use crate::agent::{AgentConfig, HyperParams};
use crate::baselines::{KSchedule, Variant};
use crate::envs::EnvId;
use crate::eval::Policy;
use crate::evolution::{evaluate_fitness, SearchSpace};
use crate::rng::{stream, Stream};

fn rng(x: u64) -> crate::rng::Rng {
    stream(13, Stream::Custom(x))
}

fn pairs(list: &[(&str, &str)]) -> Vec<(String, String)> {
    list.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn small_aac(out: PathBuf, seed: u64) -> RunConfig {
    RunConfig::from_pairs(&pairs(&[
        ("mode", "aac"),
        ("env", "pendulum"),
        ("seed", &seed.to_string()),
        ("out", out.to_str().unwrap()),
        ("agent.hidden", "8"),
        ("agent.batch_size", "16"),
        ("evolution.population", "3"),
        ("evolution.epochs", "2"),
        ("evolution.steps_per_epoch", "20"),
        ("evolution.warmup", "100"),
        ("evolution.eval_episodes", "1"),
        ("env.max_steps", "50"),
    ]))
    .unwrap()
}

fn small_baseline(mode: &str, out: PathBuf, seed: u64) -> RunConfig {
    RunConfig::from_pairs(&pairs(&[
        ("mode", mode),
        ("env", "pendulum"),
        ("seed", &seed.to_string()),
        ("out", out.to_str().unwrap()),
        ("steps", "400"),
        ("agent.hidden", "8"),
        ("agent.batch_size", "16"),
        ("baseline.warmup", "100"),
        ("baseline.eval_interval", "150"),
        ("baseline.eval_episodes", "1"),
        ("env.max_steps", "50"),
    ]))
    .unwrap()
}

#[test]
fn defaults_follow_mode_and_environment() {
    let aac = RunConfig::new(Mode::Aac, EnvId::PointMass, 3);
    let evo = aac.evolution().unwrap();
    assert_eq!(evo.population, 20);
    assert_eq!(evo.space.k.max, 15);
    assert_eq!(evo.agent.batch_size, 128);
    assert!(aac.baseline().is_none());
    assert_eq!(aac.steps, None);

    let sac = RunConfig::new(Mode::Baseline(Variant::Sac), EnvId::Pendulum, 3);
    let b = sac.baseline().unwrap();
    assert_eq!((b.tau, b.target_delay, b.warmup), (0.005, 2, 1000));
    assert!(sac.evolution().is_none());
    assert_eq!(sac.steps, Some(DEFAULT_BASELINE_STEPS));
    assert_eq!(sac.out, PathBuf::from("runs/sac-pendulum-seed3"));
}

#[test]
fn every_table_constant_is_overridable() {
    let base = pairs(&[("mode", "aac"), ("env", "pendulum")]);
    let with = |k: &str, v: &str| {
        let mut p = base.clone();
        p.push((k.into(), v.into()));
        RunConfig::from_pairs(&p).unwrap()
    };
    let evo = |c: RunConfig| c.evolution().unwrap().clone();
    assert_eq!(evo(with("evolution.population", "7")).population, 7);
    assert_eq!(evo(with("evolution.epochs", "9")).epochs, 9);
    assert_eq!(evo(with("evolution.steps_per_epoch", "11")).steps_per_epoch, 11);
    assert_eq!(evo(with("evolution.exchange_fraction", "0.3")).exchange_fraction, 0.3);
    assert_eq!(evo(with("evolution.eval_episodes", "2")).eval_episodes, 2);
    assert_eq!(evo(with("evolution.warmup", "50")).warmup, 50);
    assert_eq!(evo(with("evolution.replay_capacity", "999")).replay_capacity, 999);
    assert_eq!(evo(with("space.a.max", "4")).space.a.max, 4);
    assert_eq!(evo(with("space.c.delta", "3")).space.c.delta, 3);
    assert_eq!(evo(with("space.h.min", "0.5")).space.h.min, 0.5);
    assert_eq!(evo(with("space.k.max", "3")).space.k.max, 3);
    assert_eq!(evo(with("space.g.delta", "0.25")).space.g.delta, 0.25);
    assert_eq!(evo(with("agent.hidden", "32, 16")).agent.hidden, vec![32, 16]);
    assert_eq!(evo(with("agent.actor_lr", "1e-3")).agent.actor_lr, 1e-3);
    assert_eq!(evo(with("agent.critic_lr", "2e-3")).agent.critic_lr, 2e-3);
    assert_eq!(evo(with("agent.alpha_lr", "5e-4")).agent.alpha_lr, 5e-4);
    assert_eq!(evo(with("agent.init_alpha", "0.2")).agent.init_alpha, 0.2);
    assert_eq!(evo(with("agent.batch_size", "512")).agent.batch_size, 512);
    assert!(!evo(with("agent.self_regularize", "false")).agent.self_regularize);
    assert_eq!(evo(with("agent.bootstrap_offset", "0")).agent.bootstrap_offset, 0);
    assert_eq!(with("env.gravity", "9.81").env.overrides["gravity"], 9.81);
    assert_eq!(with("threads", "4").evolution_config().unwrap().threads, 4);
    assert_eq!(with("steps", "1234").evolution_config().unwrap().env_step_budget, Some(1234));

    let base = pairs(&[("mode", "sr-sac"), ("env", "pendulum")]);
    let with = |k: &str, v: &str| {
        let mut p = base.clone();
        p.push((k.into(), v.into()));
        RunConfig::from_pairs(&p).unwrap().baseline().unwrap().clone()
    };
    assert_eq!(with("baseline.tau", "0.01").tau, 0.01);
    assert_eq!(with("baseline.target_delay", "1").target_delay, 1);
    assert_eq!(with("baseline.warmup", "10").warmup, 10);
    assert_eq!(with("baseline.beta_init", "60").beta_init, 60.0);
    assert_eq!(with("baseline.beta_final", "95").beta_final, 95.0);
    assert_eq!(with("baseline.sr_max_updates", "8").sr_max_updates, 8);
    assert_eq!(with("baseline.k_max", "7").k_max, 7);
    assert_eq!(with("baseline.schedule", "fixed:1").schedule, KSchedule::Fixed(1));
    assert_eq!(with("baseline.eval_interval", "100").eval_interval, 100);
    assert_eq!(with("baseline.eval_episodes", "3").eval_episodes, 3);
    assert_eq!(with("baseline.replay_capacity", "77").replay_capacity, 77);
    assert_eq!(with("hyper.a", "2").hyper.a, 2);
    assert_eq!(with("hyper.c", "3").hyper.c, 3);
    assert_eq!(with("hyper.h", "0.5").hyper.h, 0.5);
    assert_eq!(with("hyper.g", "-3").hyper.g, -3.0);
    assert!((with("hyper.gamma", "0.95").hyper.gamma() - 0.95).abs() < 1e-12);
}

#[test]
fn bad_settings_are_rejected() {
    let try_with = |extra: &[(&str, &str)]| {
        let mut p = pairs(&[("mode", "sac"), ("env", "pendulum")]);
        p.extend(pairs(extra));
        RunConfig::from_pairs(&p)
    };
    assert!(matches!(try_with(&[("agent.dropout", "0.1")]), Err(Error::Config(_))));
    assert!(matches!(try_with(&[("evolution.epochs", "3")]), Err(Error::Config(_))));
    assert!(matches!(try_with(&[("space.a.max", "3")]), Err(Error::Config(_))));
    assert!(matches!(try_with(&[("env.warp", "1")]), Err(Error::Config(_))));
    assert!(matches!(try_with(&[("baseline.tau", "fast")]), Err(Error::Config(_))));
    assert!(matches!(try_with(&[("baseline.tau", "0")]), Err(Error::Config(_))));
    assert!(matches!(try_with(&[("threads", "0")]), Err(Error::Config(_))));
    assert!(matches!(try_with(&[("nonsense", "1")]), Err(Error::Config(_))));
    assert!(RunConfig::from_pairs(&pairs(&[("env", "pendulum")])).is_err());
    assert!(RunConfig::from_pairs(&pairs(&[("mode", "sac"), ("env", "mars")])).is_err());
    assert!(RunConfig::from_pairs(&pairs(&[("mode", "td3"), ("env", "pendulum")])).is_err());
    assert!(parse_pairs("mode aac").is_err());
}

#[test]
fn text_parses_comments_and_later_values_win() {
    let text = "# a comment\nmode = aac\nenv = pendulum   # trailing\n\nseed = 4\nseed = 5\n";
    let c = RunConfig::parse(text).unwrap();
    assert_eq!(c.seed, 5);
    assert_eq!(c.out, PathBuf::from("runs/aac-pendulum-seed5"));
}

fn override_strategy() -> impl Strategy<Value = Vec<(String, String)>> {
    prop::collection::vec(
        prop_oneof![
            (0u64..1000).prop_map(|s| ("seed".to_string(), s.to_string())),
            (1usize..5).prop_map(|t| ("threads".to_string(), t.to_string())),
            (2usize..40).prop_map(|m| ("evolution.population".to_string(), m.to_string())),
            (1e-5f64..1e-2).prop_map(|lr| ("agent.actor_lr".to_string(), lr.to_string())),
            (0.1f64..1.0).prop_map(|h| ("space.h.min".to_string(), h.to_string())),
            (-6.0f64..-3.0).prop_map(|g| ("space.g.min".to_string(), g.to_string())),
            (1usize..4).prop_map(|k| ("space.k.max".to_string(), k.to_string())),
            (1.0f64..20.0).prop_map(|x| ("env.gravity".to_string(), x.to_string())),
            prop::collection::vec(1usize..300, 1..4)
                .prop_map(|h| ("agent.hidden".to_string(), h.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","))),
        ],
        0..8,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canonical_text_round_trips(overrides in override_strategy()) {
        let mut p = pairs(&[("mode", "aac"), ("env", "pendulum")]);
        p.extend(overrides);
        let c = RunConfig::from_pairs(&p).unwrap();
        let back = RunConfig::parse(&c.to_text()).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.config_hash(), c.config_hash());
    }

    #[test]
    fn rand_sac_draws_stay_in_range(seed in 0u64..10_000) {
        let c = RunConfig::new(Mode::Baseline(Variant::RandSac), EnvId::Pendulum, seed);
        let b = resolved_baseline(&c).unwrap();
        prop_assert!(SearchSpace::standard(5).contains(&b.hyper));
        prop_assert!((0.001..=0.05).contains(&b.tau));
        prop_assert!(b.validate().is_ok());
    }
}

#[test]
fn hash_tracks_results_not_output_location() {
    let a = RunConfig::new(Mode::Aac, EnvId::Pendulum, 1);
    let mut b = a.clone();
    b.out = PathBuf::from("elsewhere");
    b.threads = 4;
    assert_eq!(a.config_hash(), b.config_hash());
    assert_eq!(a.config_hash().len(), 16);
    let mut c = a.clone();
    c.seed = 2;
    assert_ne!(a.config_hash(), c.config_hash());
    let mut d = a.clone();
    d.set("agent.critic_lr", "0.001").unwrap();
    assert_ne!(a.config_hash(), d.config_hash());
}

#[test]
fn rand_sac_draws_depend_on_seed_only() {
    let draw = |seed| resolved_baseline(&RunConfig::new(Mode::Baseline(Variant::RandSac), EnvId::Pendulum, seed)).unwrap();
    assert_eq!(draw(3), draw(3));
    assert_ne!(draw(3).hyper, draw(4).hyper);
    let sac = RunConfig::new(Mode::Baseline(Variant::Sac), EnvId::Pendulum, 3);
    assert_eq!(&resolved_baseline(&sac).unwrap(), sac.baseline().unwrap());
}

#[test]
fn discounted_return_examples() {
    assert_eq!(discounted_return(&[1.0, 1.0, 1.0], 1.0), 3.0);
    assert_eq!(discounted_return(&[1.0, 1.0], 0.5), 1.5);
    assert_eq!(discounted_return(&[], 0.9), 0.0);
}

fn agent(seed: u64, hidden: usize) -> Agent {
    let config = AgentConfig { hidden: vec![hidden], ..AgentConfig::aac() };
    Agent::new(4, 1, HyperParams::sac_default(), config, &mut rng(seed)).unwrap()
}

#[test]
fn ensemble_of_copies_acts_like_the_member() {
    let a = agent(1, 8);
    let e = EnsemblePolicy::from_agents([&a, &a, &a]).unwrap();
    assert_eq!(e.len(), 3);
    let factory = EnvFactory::new(EnvId::Pendulum);
    let single = eval_frequency_sweep(&a, &factory, &[1, 2, 3], 5, 2, false, 9).unwrap();
    let many = eval_frequency_sweep(&e, &factory, &[1, 2, 3], 5, 2, false, 9).unwrap();
    assert_eq!(single, many);
}

#[test]
fn ensemble_action_is_member_mean() {
    let mut r = rng(2);
    for trial in 0..50 {
        let agents: Vec<Agent> = (0..1 + trial % 6).map(|i| agent(100 * trial as u64 + i as u64, 6)).collect();
        let e = EnsemblePolicy::from_agents(&agents).unwrap();
        let obs: Vec<f64> = (0..4).map(|_| r.random_range(-3.0..3.0)).collect();
        let mut oracle = 0.0;
        for a in &agents {
            let raw = a.actor.forward(&obs).unwrap();
            oracle += raw[0].tanh();
        }
        oracle /= agents.len() as f64;
        let got = e.action(&obs).unwrap();
        assert!((got[0] - oracle).abs() < 1e-12);
        assert!(got[0].abs() <= 1.0);
    }
}

#[test]
fn ensemble_rejects_empty_or_mixed_shapes() {
    assert!(EnsemblePolicy::new(Vec::new()).is_err());
    let (a, b) = (agent(1, 8), agent(2, 8));
    let other = Agent::new(5, 1, HyperParams::sac_default(), AgentConfig { hidden: vec![8], ..AgentConfig::aac() }, &mut rng(3)).unwrap();
    assert!(EnsemblePolicy::from_agents([&a, &b]).is_ok());
    assert!(EnsemblePolicy::from_agents([&a, &other]).is_err());
}

#[test]
fn misleading_mode_coincides_at_k_one() {
    let a = agent(4, 8);
    let factory = EnvFactory::new(EnvId::Pendulum);
    let normal = eval_frequency_sweep(&a, &factory, &[1], 5, 3, false, 5).unwrap();
    let misleading = eval_frequency_sweep(&a, &factory, &[1], 5, 3, true, 5).unwrap();
    assert_eq!(normal, misleading);
    let normal = eval_frequency_sweep(&a, &factory, &[3], 5, 3, false, 5).unwrap();
    let misleading = eval_frequency_sweep(&a, &factory, &[3], 5, 3, true, 5).unwrap();
    assert_ne!(normal, misleading);
}

#[test]
fn sweep_at_own_k_matches_fitness() {
    let factory = EnvFactory::new(EnvId::PointMass);
    for k in [1, 4, 9] {
        let hp = HyperParams { k, ..HyperParams::sac_default() };
        let a = Agent::new(5, 2, hp, AgentConfig { hidden: vec![8], ..AgentConfig::aac() }, &mut rng(k as u64)).unwrap();
        let fitness = evaluate_fitness(&a, &factory, 15, 3, 21).unwrap();
        let rows = eval_frequency_sweep(&a, &factory, &[k], 15, 3, false, 21).unwrap();
        assert_eq!(rows[0].mean, fitness);
    }
}

#[test]
fn evolution_run_writes_its_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_aac(tmp.path().join("run"), 7);
    let summary = train(&config).unwrap();
    let dir = &summary.dir;
    for f in ["config.txt", "manifest.json", "population.csv", "returns.csv", "metrics.csv", "exchanges.csv"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    assert_eq!(load_checkpoints(dir).unwrap().len(), 3);
    let hash = config.config_hash();
    for f in ["population.csv", "returns.csv", "metrics.csv", "exchanges.csv"] {
        let text = fs::read_to_string(dir.join(f)).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().ends_with("seed,config_hash"));
        for line in lines {
            assert!(line.ends_with(&format!(",7,{hash}")), "{f}: {line}");
        }
    }
    let population = fs::read_to_string(dir.join("population.csv")).unwrap();
    assert_eq!(population.lines().count(), 1 + 3 * 3);
    let manifest = read_manifest(dir).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config_hash"], hash.as_str());
    assert_eq!(manifest["mode"], "aac");
    let reloaded = RunConfig::load(&dir.join("config.txt")).unwrap();
    assert_eq!(reloaded, config);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    for (make, files) in [
        (Box::new(|p| small_aac(p, 3)) as Box<dyn Fn(PathBuf) -> RunConfig>, vec!["population.csv", "returns.csv", "metrics.csv", "exchanges.csv"]),
        (Box::new(|p| small_baseline("k-sac", p, 3)), vec!["returns.csv", "metrics.csv", "ksac.csv"]),
    ] {
        let a = train(&make(tmp.path().join("a"))).unwrap();
        let b = train(&make(tmp.path().join("b"))).unwrap();
        for f in files.iter().chain(&["manifest.json"]) {
            assert_eq!(fs::read(a.dir.join(f)).unwrap(), fs::read(b.dir.join(f)).unwrap(), "{f}");
        }
        fs::remove_dir_all(tmp.path().join("a")).unwrap();
        fs::remove_dir_all(tmp.path().join("b")).unwrap();
    }
}

#[test]
fn baseline_runs_write_variant_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let ksac = train(&small_baseline("k-sac", tmp.path().join("k"), 1)).unwrap();
    assert!(ksac.files.contains(&"ksac.csv".to_string()));
    let table = fs::read_to_string(ksac.dir.join("ksac.csv")).unwrap();
    // 5 persistence values at every evaluation
    assert_eq!((table.lines().count() - 1) % 5, 0);
    let sac = train(&small_baseline("sac", tmp.path().join("s"), 1)).unwrap();
    assert!(!sac.dir.join("ksac.csv").exists());
    let rand = train(&small_baseline("rand-sac", tmp.path().join("r"), 1)).unwrap();
    let m = read_manifest(&rand.dir).unwrap();
    assert!((0.001..=0.05).contains(&m["settings"]["tau"].as_f64().unwrap()));
    assert_eq!(load_checkpoints(&rand.dir).unwrap().len(), 1);
}

#[test]
fn plot_data_separates_seeds_and_lists_five_parameters() {
    let tmp = tempfile::tempdir().unwrap();
    let s1 = train(&small_baseline("sac", tmp.path().join("s1"), 1)).unwrap();
    let s2 = train(&small_baseline("sac", tmp.path().join("s2"), 2)).unwrap();
    let aac = train(&small_aac(tmp.path().join("aac"), 1)).unwrap();
    let files = emit_plot_data(&[s1.dir, s2.dir, aac.dir], &tmp.path().join("plots")).unwrap();

    let mut reader = csv::Reader::from_path(&files.returns).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    let seeds_of = |alg: &str| {
        let mut s: Vec<String> = rows.iter().filter(|r| &r[1] == alg).map(|r| r[2].to_string()).collect();
        s.dedup();
        s
    };
    assert_eq!(seeds_of("sac"), vec!["1", "2"]);
    assert_eq!(seeds_of("aac"), vec!["1"]);

    let mut reader = csv::Reader::from_path(&files.hyperparams).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 3 * 5);
    for (epoch, chunk) in rows.chunks(5).enumerate() {
        let params: Vec<&str> = chunk.iter().map(|r| &r[4]).collect();
        assert_eq!(params, ["a", "c", "h", "k", "g"]);
        assert!(chunk.iter().all(|r| r[3] == *epoch.to_string()));
    }
}

#[test]
fn plot_data_rejects_bad_input_without_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("plots");
    assert!(matches!(emit_plot_data(&[], &out), Err(Error::InvalidInput(_))));
    assert!(!out.exists());

    let missing = tmp.path().join("nowhere");
    let err = emit_plot_data(std::slice::from_ref(&missing), &out).unwrap_err();
    assert!(err.to_string().contains("nowhere"), "{err}");
    assert!(!out.exists());

    let corrupt = tmp.path().join("corrupt");
    fs::create_dir_all(&corrupt).unwrap();
    fs::write(corrupt.join("manifest.json"), "{ not json").unwrap();
    let err = emit_plot_data(&[corrupt], &out).unwrap_err();
    assert!(err.to_string().contains("corrupt"), "{err}");
    assert!(!out.exists());
}

#[test]
fn cli_reports_usage_errors() {
    assert_eq!(cli::run_cli(["aac", "train", "--mode", "sac", "--env", "mars"]), cli::EXIT_USAGE);
    assert_eq!(cli::run_cli(["aac", "train", "--env", "pendulum"]), cli::EXIT_USAGE);
    assert_eq!(cli::run_cli(["aac", "frobnicate"]), cli::EXIT_USAGE);
    assert_eq!(cli::run_cli(["aac", "train", "--mode", "sac", "--env", "pendulum", "--set", "oops"]), cli::EXIT_USAGE);
    assert_eq!(cli::run_cli(["aac", "inspect-checkpoint", "/definitely/missing.ckpt"]), cli::EXIT_RUNTIME);
}
