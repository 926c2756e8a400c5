//! Subcommand implementations.

use crate::common::*;

pub mod theorems {
    use super::*;
    use emaq::exact::{verify_theorems, TheoremReport};
    use emaq::tabular::{DiscretePolicy, TabularMdp};
    use serde::{Deserialize, Serialize};
    use std::path::PathBuf;

    #[derive(clap::Args, Deserialize, Default)]
    #[serde(default, deny_unknown_fields)]
    pub struct Opts {
        #[arg(long)]
        pub seed: Option<u64>,
        /// Number of random MDP instances.
        #[arg(long)]
        pub instances: Option<usize>,
        #[arg(long)]
        pub states: Option<usize>,
        #[arg(long)]
        pub actions: Option<usize>,
        #[arg(long)]
        pub gamma: Option<f64>,
        /// Comma-separated N values, e.g. "1,2,5,20".
        #[arg(long)]
        pub n_list: Option<String>,
        /// Random Q-pairs per contraction check.
        #[arg(long)]
        pub trials: Option<usize>,
        #[arg(long)]
        pub tol: Option<f64>,
    }

    #[derive(clap::Args)]
    pub struct Args {
        /// JSON config file; flags override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: Opts,
    }

    #[derive(Serialize)]
    struct Effective {
        mode: &'static str,
        seed: u64,
        instances: usize,
        states: usize,
        actions: usize,
        gamma: f64,
        n_list: Vec<usize>,
        trials: usize,
        tol: f64,
        threads: usize,
    }

    #[derive(Serialize)]
    struct Aggregate {
        gamma: f64,
        instances: usize,
        worst: TheoremReport,
        per_instance: Vec<TheoremReport>,
    }

    pub fn run(args: Args) -> CliResult<()> {
        let threads = thread_cap()?;
        let file: Option<Opts> = load_config_file(args.config.as_deref())?;
        let file = file.unwrap_or_default();
        let f = args.opts;
        let cfg = Effective {
            mode: "verify-theorems",
            seed: pick(f.seed, file.seed, 0),
            instances: pick(f.instances, file.instances, 20),
            states: pick(f.states, file.states, 8),
            actions: pick(f.actions, file.actions, 3),
            gamma: pick(f.gamma, file.gamma, 0.9),
            n_list: parse_usize_list(&pick(f.n_list, file.n_list, "1,2,5,20".into()))?,
            trials: pick(f.trials, file.trials, 200),
            tol: pick(f.tol, file.tol, 1e-10),
            threads,
        };
        with_run_dir(&args.out, |dir| {
            dir.record_config(args.config.as_deref(), &cfg)?;
            let mut per_instance = Vec::with_capacity(cfg.instances);
            for i in 0..cfg.instances as u64 {
                let mut rng = emaq::rng::stream(cfg.seed, &[0x7e0, i]);
                let mdp = TabularMdp::random(cfg.states, cfg.actions, cfg.gamma, &mut rng);
                let behavior = DiscretePolicy::random(cfg.states, cfg.actions, &mut rng);
                let report = verify_theorems(
                    &mdp,
                    &behavior,
                    &cfg.n_list,
                    cfg.trials,
                    emaq::rng::derive_seed(cfg.seed, &[i, 1]),
                    cfg.tol,
                )?;
                per_instance.push(report);
            }
            let worst = TheoremReport {
                contraction_ratio: per_instance
                    .iter()
                    .map(|r| r.contraction_ratio)
                    .fold(0.0, f64::max),
                monotonicity_violation: per_instance
                    .iter()
                    .map(|r| r.monotonicity_violation)
                    .fold(f64::NEG_INFINITY, f64::max),
                bound_slack: per_instance
                    .iter()
                    .map(|r| r.bound_slack)
                    .fold(f64::INFINITY, f64::min),
                mu_star_min: per_instance
                    .iter()
                    .map(|r| r.mu_star_min)
                    .fold(f64::INFINITY, f64::min),
            };
            let aggregate = Aggregate {
                gamma: cfg.gamma,
                instances: cfg.instances,
                worst,
                per_instance,
            };
            dir.write_json("theorem_report.json", &aggregate)?;
            println!(
                "verify-theorems: contraction_ratio={} (gamma={}), monotonicity_violation={}, bound_slack={}",
                aggregate.worst.contraction_ratio,
                cfg.gamma,
                aggregate.worst.monotonicity_violation,
                aggregate.worst.bound_slack
            );
            Ok(())
        })
    }
}

pub mod gendata {
    use super::*;
    use emaq::behavior::AutoregressiveBehaviorModel;
    use emaq::dataset::{
        collect_transitions, generate_dataset, save_dataset_file, Actor, Regime, RegimeSources,
        Transition,
    };
    use emaq::policies::{Policy, TestPolicy};
    use emaq::tabular::q_learning_fixed_point;
    use emaq::trainer::{load_ensemble, QEnsemble};
    use rand_chacha::ChaCha8Rng;
    use std::fs::File;
    use std::path::{Path, PathBuf};

    #[derive(clap::Args)]
    pub struct Args {
        #[arg(long)]
        env: String,
        #[arg(long)]
        regime: String,
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output dataset file.
        #[arg(long)]
        out: PathBuf,
        /// Run directory holding trained checkpoints (required for pointmass
        /// medium/expert/mixed): ensemble_{half,final}.ckpt,
        /// behavior_{half,final}.ckpt, buffer.emaq.
        #[arg(long)]
        source_run: Option<PathBuf>,
    }

    /// A trained test policy as a data-collection actor, with epsilon-uniform
    /// exploration so the logged actions cover the action space (the
    /// continuous counterpart of the gridworld's eps-greedy regimes).
    struct PolicyActor {
        ensemble: QEnsemble,
        behavior: AutoregressiveBehaviorModel,
        eps: f64,
        label: String,
    }

    impl Actor for PolicyActor {
        fn act(&self, state: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
            use rand::Rng;
            if rng.gen::<f64>() < self.eps {
                let cfg = self.behavior.config();
                return cfg
                    .action_low
                    .iter()
                    .zip(&cfg.action_high)
                    .map(|(&lo, &hi)| rng.gen_range(lo..hi))
                    .collect();
            }
            TestPolicy::from_ensemble(&self.ensemble, &self.behavior)
                .and_then(|p| p.act(state, rng))
                .expect("trained policy action")
        }

        fn describe(&self) -> String {
            self.label.clone()
        }
    }

    fn load_policy_actor(dir: &Path, stage: &str, eps: f64) -> CliResult<PolicyActor> {
        let ens_path = dir.join(format!("ensemble_{stage}.ckpt"));
        let beh_path = dir.join(format!("behavior_{stage}.ckpt"));
        let ensemble = load_ensemble(&mut File::open(&ens_path).map_err(|e| {
            ErrorReport::new("config", format!("missing checkpoint '{}': {e}", ens_path.display()))
        })?)?;
        let behavior = AutoregressiveBehaviorModel::load(&mut File::open(&beh_path).map_err(
            |e| ErrorReport::new("config", format!("missing checkpoint '{}': {e}", beh_path.display())),
        )?)?;
        Ok(PolicyActor {
            ensemble,
            behavior,
            eps,
            label: format!("online {stage}-budget snapshot, eps = {eps}"),
        })
    }

    pub fn run(args: Args) -> CliResult<()> {
        thread_cap()?;
        let regime = Regime::parse(&args.regime)?;
        let created = dataset_timestamp();
        let dataset = match args.env.as_str() {
            "gridworld" => {
                let (env, mdp) = make_gridworld()?;
                let qstar = q_learning_fixed_point(&mdp, 1e-10)?;
                let medium = emaq::envs::TabularEpsGreedyActor {
                    q: &qstar,
                    eps: 0.5,
                    label: "eps-greedy(0.5) on exact Q*".into(),
                };
                let expert = emaq::envs::TabularEpsGreedyActor {
                    q: &qstar,
                    eps: 0.05,
                    label: "eps-greedy(0.05) on exact Q*".into(),
                };
                // "Mixed" analog: a logged annealing schedule from fully
                // random down to the expert's exploration level.
                let mixed_log: Option<Vec<Transition>> = if regime == Regime::Mixed {
                    let schedule = [1.0, 0.85, 0.7, 0.55, 0.4, 0.25, 0.1, 0.05];
                    let mut log = Vec::with_capacity(args.size);
                    for (i, eps) in schedule.iter().enumerate() {
                        let chunk = if i + 1 == schedule.len() {
                            args.size - log.len()
                        } else {
                            args.size / schedule.len()
                        };
                        let actor = emaq::envs::TabularEpsGreedyActor {
                            q: &qstar,
                            eps: *eps,
                            label: format!("eps-greedy({eps})"),
                        };
                        let mut rng = emaq::rng::stream(seeds::env(args.seed), &[i as u64]);
                        log.extend(collect_transitions(&env, &actor, chunk, &mut rng));
                    }
                    Some(log)
                } else {
                    None
                };
                let sources = RegimeSources {
                    medium: Some(&medium),
                    expert: Some(&expert),
                    mixed_log,
                };
                generate_dataset(&env, regime, args.size, args.seed, &sources, &created)?
            }
            "pointmass" => {
                let env = emaq::envs::pointmass_env(emaq::envs::PointMassConfig::default());
                let need_run = !matches!(regime, Regime::Random);
                let run_dir = if need_run {
                    Some(args.source_run.clone().ok_or_else(|| {
                        ErrorReport::new(
                            "config",
                            format!(
                                "pointmass regime '{}' requires --source-run with trained checkpoints",
                                regime.as_str()
                            ),
                        )
                    })?)
                } else {
                    None
                };
                let medium = match &run_dir {
                    Some(d) if matches!(regime, Regime::Medium | Regime::MediumExpert) => {
                        Some(load_policy_actor(d, "half", 0.3)?)
                    }
                    _ => None,
                };
                let expert = match &run_dir {
                    Some(d) if matches!(regime, Regime::MediumExpert) => {
                        Some(load_policy_actor(d, "final", 0.05)?)
                    }
                    _ => None,
                };
                let mixed_log = match &run_dir {
                    Some(d) if regime == Regime::Mixed => {
                        let buffer = emaq::dataset::load_dataset_file(d.join("buffer.emaq"))?;
                        Some(buffer.transitions)
                    }
                    _ => None,
                };
                let sources = RegimeSources {
                    medium: medium.as_ref().map(|a| a as &dyn Actor),
                    expert: expert.as_ref().map(|a| a as &dyn Actor),
                    mixed_log,
                };
                generate_dataset(&env, regime, args.size, args.seed, &sources, &created)?
            }
            other => {
                return Err(ErrorReport::new(
                    "config",
                    format!("unknown environment '{other}'"),
                ))
            }
        };
        save_dataset_file(&args.out, &dataset)?;
        println!(
            "gen-data: wrote {} transitions ({} {}) to {}",
            dataset.len(),
            args.env,
            regime.as_str(),
            args.out.display()
        );
        Ok(())
    }
}

pub mod fitbehavior {
    use super::*;
    use emaq::behavior::{fit, AutoregressiveBehaviorModel, BehaviorConfig, BehaviorFitConfig};
    use serde::{Deserialize, Serialize};
    use std::fs::File;
    use std::path::PathBuf;

    #[derive(clap::Args, Deserialize, Default)]
    #[serde(default, deny_unknown_fields)]
    pub struct Opts {
        #[arg(long)]
        pub seed: Option<u64>,
        #[arg(long)]
        pub steps: Option<usize>,
        #[arg(long)]
        pub batch: Option<usize>,
        #[arg(long)]
        pub lr: Option<f64>,
        #[arg(long)]
        pub bins: Option<usize>,
        #[arg(long)]
        pub embed_dim: Option<usize>,
        /// Comma-separated hidden widths for the state embedder.
        #[arg(long)]
        pub embed_hidden: Option<String>,
        /// Comma-separated hidden widths for the per-dimension heads.
        #[arg(long)]
        pub head_hidden: Option<String>,
        #[arg(long)]
        pub linear_prefix: Option<bool>,
    }

    #[derive(clap::Args)]
    pub struct Args {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Input dataset file.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: Opts,
    }

    #[derive(Serialize)]
    struct Effective {
        mode: &'static str,
        data: String,
        seed: u64,
        steps: usize,
        batch: usize,
        lr: f64,
        bins: usize,
        embed_dim: usize,
        embed_hidden: Vec<usize>,
        head_hidden: Vec<usize>,
        linear_prefix: bool,
        threads: usize,
    }

    #[derive(Serialize)]
    struct Summary {
        mode: &'static str,
        env: String,
        seed: u64,
        steps: usize,
        initial_loss: f64,
        final_loss: f64,
    }

    pub fn run(args: Args) -> CliResult<()> {
        let threads = thread_cap()?;
        let file: Option<Opts> = load_config_file(args.config.as_deref())?;
        let file = file.unwrap_or_default();
        let f = args.opts;
        let cfg = Effective {
            mode: "fit-behavior",
            data: args.data.display().to_string(),
            seed: pick(f.seed, file.seed, 0),
            steps: pick(f.steps, file.steps, 3000),
            batch: pick(f.batch, file.batch, 128),
            lr: pick(f.lr, file.lr, 5e-4),
            bins: pick(f.bins, file.bins, 40),
            embed_dim: pick(f.embed_dim, file.embed_dim, 64),
            embed_hidden: parse_usize_list(&pick(f.embed_hidden, file.embed_hidden, "64".into()))?,
            head_hidden: parse_usize_list(&pick(f.head_hidden, file.head_hidden, "64".into()))?,
            linear_prefix: pick(f.linear_prefix, file.linear_prefix, false),
            threads,
        };
        with_run_dir(&args.out, |dir| {
            dir.record_config(args.config.as_deref(), &cfg)?;
            let dataset = emaq::dataset::load_dataset_file(&args.data)?;
            let model_config = BehaviorConfig {
                state_dim: dataset.metadata.state_dim,
                action_low: dataset.metadata.action_low.clone(),
                action_high: dataset.metadata.action_high.clone(),
                num_bins: cfg.bins,
                embed_dim: cfg.embed_dim,
                embed_hidden: cfg.embed_hidden.clone(),
                head_hidden: cfg.head_hidden.clone(),
                linear_prefix: cfg.linear_prefix,
            };
            let mut init_rng = emaq::rng::named_stream(seeds::behavior_fit(cfg.seed), "init");
            let mut model = AutoregressiveBehaviorModel::new(model_config, &mut init_rng)?;
            let trace = fit(
                &mut model,
                &dataset,
                &BehaviorFitConfig {
                    steps: cfg.steps,
                    batch_size: cfg.batch,
                    learning_rate: cfg.lr,
                    seed: seeds::behavior_fit(cfg.seed),
                },
            )?;
            let mut out_file = File::create(dir.path().join("behavior.ckpt"))?;
            model.save(&mut out_file)?;
            let mut csv = String::from("step,nll\n");
            for (i, loss) in trace.iter().enumerate() {
                csv.push_str(&format!("{},{}\n", i + 1, loss));
            }
            dir.write_text("loss.csv", &csv)?;
            let summary = Summary {
                mode: "fit-behavior",
                env: dataset.metadata.env.clone(),
                seed: cfg.seed,
                steps: cfg.steps,
                initial_loss: trace.first().copied().unwrap_or(f64::NAN),
                final_loss: trace.last().copied().unwrap_or(f64::NAN),
            };
            dir.write_json("summary.json", &summary)?;
            println!(
                "fit-behavior: NLL {} -> {} over {} steps; checkpoint at {}",
                summary.initial_loss,
                summary.final_loss,
                cfg.steps,
                dir.path().join("behavior.ckpt").display()
            );
            Ok(())
        })
    }
}

pub mod train {
    use super::*;
    use emaq::behavior::AutoregressiveBehaviorModel;
    use emaq::policies::{evaluate_policy_rollouts, TestPolicy};
    use emaq::trainer::{
        metrics_to_csv, save_ensemble, train, EnsembleConfig, QEnsemble, TrainConfig,
    };
    use serde::{Deserialize, Serialize};
    use std::fs::File;
    use std::path::PathBuf;

    #[derive(clap::Args, Deserialize, Default)]
    #[serde(default, deny_unknown_fields)]
    pub struct Opts {
        #[arg(long)]
        pub seed: Option<u64>,
        /// N: behavior samples per bootstrapped target.
        #[arg(long)]
        pub n: Option<usize>,
        /// K: ensemble members.
        #[arg(long)]
        pub k: Option<usize>,
        #[arg(long)]
        pub hidden: Option<String>,
        #[arg(long)]
        pub lambda: Option<f64>,
        #[arg(long)]
        pub alpha: Option<f64>,
        #[arg(long)]
        pub gamma: Option<f64>,
        #[arg(long)]
        pub updates: Option<usize>,
        #[arg(long)]
        pub batch: Option<usize>,
        #[arg(long)]
        pub lr: Option<f64>,
        #[arg(long)]
        pub eval_interval: Option<usize>,
        #[arg(long)]
        pub eval_episodes: Option<usize>,
    }

    #[derive(clap::Args)]
    pub struct Args {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Behavior-model checkpoint (from fit-behavior).
        #[arg(long)]
        behavior: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: Opts,
    }

    #[derive(Serialize, Clone)]
    pub struct Effective {
        pub mode: &'static str,
        pub data: String,
        pub behavior: String,
        pub seed: u64,
        pub n: usize,
        pub k: usize,
        pub hidden: Vec<usize>,
        pub lambda: f64,
        pub alpha: f64,
        pub gamma: f64,
        pub updates: usize,
        pub batch: usize,
        pub lr: f64,
        pub eval_interval: usize,
        pub eval_episodes: usize,
        pub threads: usize,
    }

    #[derive(Serialize)]
    struct Summary {
        mode: &'static str,
        env: String,
        n_samples: usize,
        seed: u64,
        return_mean: f64,
        return_std: f64,
        final_mean_loss: f64,
        updates: usize,
    }

    pub fn resolve(file: Opts, f: Opts, data: &PathBuf, behavior: &PathBuf, threads: usize) -> CliResult<Effective> {
        Ok(Effective {
            mode: "train-offline",
            data: data.display().to_string(),
            behavior: behavior.display().to_string(),
            seed: pick(f.seed, file.seed, 0),
            n: pick(f.n, file.n, 16),
            k: pick(f.k, file.k, 4),
            hidden: parse_usize_list(&pick(f.hidden, file.hidden, "48,48".into()))?,
            lambda: pick(f.lambda, file.lambda, 1.0),
            alpha: pick(f.alpha, file.alpha, 0.995),
            gamma: pick(f.gamma, file.gamma, 0.99),
            updates: pick(f.updates, file.updates, 10_000),
            batch: pick(f.batch, file.batch, 128),
            lr: pick(f.lr, file.lr, 1e-4),
            eval_interval: pick(f.eval_interval, file.eval_interval, 1000),
            eval_episodes: pick(f.eval_episodes, file.eval_episodes, 10),
            threads,
        })
    }

    /// Core pipeline, reused by sweep-n. Returns (final eval mean, std,
    /// final mean loss, trained ensemble, metrics CSV).
    pub fn train_and_eval(
        cfg: &Effective,
        dataset: &emaq::dataset::OfflineDataset,
        behavior: &AutoregressiveBehaviorModel,
        env: &dyn emaq::envs::Environment,
    ) -> CliResult<(f64, f64, f64, QEnsemble, String)> {
        let ens_config = EnsembleConfig {
            state_dim: dataset.metadata.state_dim,
            action_dim: dataset.metadata.action_dim,
            hidden: cfg.hidden.clone(),
            num_members: cfg.k,
            lambda_mix: cfg.lambda,
            alpha_ema: cfg.alpha,
            n_samples: cfg.n,
            gamma: cfg.gamma,
        };
        let mut init_rng = emaq::rng::named_stream(seeds::trainer(cfg.seed), "init");
        let mut ensemble = QEnsemble::new(ens_config, &mut init_rng)?;
        let train_config = TrainConfig {
            num_updates: cfg.updates,
            batch_size: cfg.batch,
            learning_rate: cfg.lr,
            eval_interval: cfg.eval_interval,
            seed: seeds::trainer(cfg.seed),
        };
        let eval_seed = seeds::eval(cfg.seed);
        let eval_episodes = cfg.eval_episodes;
        let n = cfg.n;
        let lambda = cfg.lambda;
        let mut eval_counter = 0u64;
        let mut eval_fn = |ens: &QEnsemble| -> emaq::Result<(f64, f64)> {
            let policy = TestPolicy::new(ens, behavior, n, lambda)?;
            let mut rng = emaq::rng::stream(eval_seed, &[eval_counter]);
            eval_counter += 1;
            let stats = evaluate_policy_rollouts(&policy, env, eval_episodes, &mut rng)?;
            Ok((stats.mean, stats.std))
        };
        let rows = train(
            &mut ensemble,
            behavior,
            dataset,
            &train_config,
            Some(&mut eval_fn),
        )?;
        let last = rows.last().expect("train always records at least one row");
        let (mean, std) = (
            last.eval_mean.unwrap_or(f64::NAN),
            last.eval_std.unwrap_or(f64::NAN),
        );
        let loss = last.mean_loss;
        Ok((mean, std, loss, ensemble, metrics_to_csv(&rows)))
    }

    pub fn run(args: Args) -> CliResult<()> {
        let threads = thread_cap()?;
        let file: Option<Opts> = load_config_file(args.config.as_deref())?;
        let cfg = resolve(
            file.unwrap_or_default(),
            args.opts,
            &args.data,
            &args.behavior,
            threads,
        )?;
        with_run_dir(&args.out, |dir| {
            dir.record_config(args.config.as_deref(), &cfg)?;
            let dataset = emaq::dataset::load_dataset_file(&args.data)?;
            let behavior =
                AutoregressiveBehaviorModel::load(&mut File::open(&args.behavior)?)?;
            let env = make_env(&dataset.metadata.env)?;
            let (mean, std, loss, ensemble, csv) =
                train_and_eval(&cfg, &dataset, &behavior, &*env)?;
            dir.write_text("metrics.csv", &csv)?;
            let mut ckpt = File::create(dir.path().join("ensemble.ckpt"))?;
            save_ensemble(&mut ckpt, &ensemble)?;
            let summary = Summary {
                mode: "train-offline",
                env: dataset.metadata.env.clone(),
                n_samples: cfg.n,
                seed: cfg.seed,
                return_mean: mean,
                return_std: std,
                final_mean_loss: loss,
                updates: cfg.updates,
            };
            dir.write_json("summary.json", &summary)?;
            println!(
                "train-offline: N={} K={} updates={} -> return {} +/- {}",
                cfg.n, cfg.k, cfg.updates, mean, std
            );
            Ok(())
        })
    }
}

pub mod eval {
    use super::*;
    use emaq::behavior::AutoregressiveBehaviorModel;
    use emaq::policies::{evaluate_policy_rollouts, BehaviorPolicy, TestPolicy};
    use emaq::trainer::load_ensemble;
    use serde::Serialize;
    use std::fs::File;
    use std::path::PathBuf;

    #[derive(clap::Args)]
    pub struct Args {
        /// Ensemble checkpoint; omit together with --behavior-only to roll
        /// out the raw behavior model.
        #[arg(long)]
        ensemble: Option<PathBuf>,
        #[arg(long)]
        behavior: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Roll out the behavior model directly (ignores --ensemble/--n).
        #[arg(long, default_value_t = false)]
        behavior_only: bool,
        #[arg(long)]
        out: PathBuf,
    }

    #[derive(Serialize)]
    struct Summary {
        mode: &'static str,
        env: String,
        n_samples: usize,
        seed: u64,
        return_mean: f64,
        return_std: f64,
        return_min: f64,
        return_max: f64,
        episodes: usize,
        behavior_only: bool,
    }

    pub fn run(args: Args) -> CliResult<()> {
        let threads = thread_cap()?;
        let _ = threads;
        with_run_dir(&args.out, |dir| {
            let env = make_env(&args.env)?;
            let behavior = AutoregressiveBehaviorModel::load(&mut File::open(&args.behavior)?)?;
            let mut rng = emaq::rng::named_stream(seeds::eval(args.seed), "rollouts");
            let stats = if args.behavior_only {
                evaluate_policy_rollouts(&BehaviorPolicy(&behavior), &*env, args.episodes, &mut rng)?
            } else {
                let path = args.ensemble.as_ref().ok_or_else(|| {
                    ErrorReport::new(
                        "config",
                        "--ensemble is required unless --behavior-only is set".into(),
                    )
                })?;
                let ensemble = load_ensemble(&mut File::open(path)?)?;
                let policy =
                    TestPolicy::new(&ensemble, &behavior, args.n, ensemble.config().lambda_mix)?;
                evaluate_policy_rollouts(&policy, &*env, args.episodes, &mut rng)?
            };
            let summary = Summary {
                mode: "eval",
                env: args.env.clone(),
                n_samples: if args.behavior_only { 1 } else { args.n },
                seed: args.seed,
                return_mean: stats.mean,
                return_std: stats.std,
                return_min: stats.min,
                return_max: stats.max,
                episodes: stats.episodes,
                behavior_only: args.behavior_only,
            };
            dir.record_config(None, &summary)?;
            dir.write_json("summary.json", &summary)?;
            println!(
                "eval: {} episodes -> return {} +/- {}",
                stats.episodes, stats.mean, stats.std
            );
            Ok(())
        })
    }
}

pub mod sweep {
    use super::*;
    use emaq::behavior::AutoregressiveBehaviorModel;
    use emaq::policies::{evaluate_policy_rollouts, BehaviorPolicy};
    use serde::{Deserialize, Serialize};
    use std::fs::File;
    use std::path::PathBuf;

    #[derive(clap::Args, Deserialize, Default)]
    #[serde(default, deny_unknown_fields)]
    pub struct Opts {
        #[arg(long)]
        pub seed: Option<u64>,
        /// Comma-separated N values.
        #[arg(long)]
        pub n_list: Option<String>,
        /// Number of training seeds per N.
        #[arg(long)]
        pub seeds: Option<usize>,
        #[arg(long)]
        pub k: Option<usize>,
        #[arg(long)]
        pub hidden: Option<String>,
        #[arg(long)]
        pub lambda: Option<f64>,
        #[arg(long)]
        pub alpha: Option<f64>,
        #[arg(long)]
        pub gamma: Option<f64>,
        #[arg(long)]
        pub updates: Option<usize>,
        #[arg(long)]
        pub batch: Option<usize>,
        #[arg(long)]
        pub lr: Option<f64>,
        #[arg(long)]
        pub eval_episodes: Option<usize>,
    }

    #[derive(clap::Args)]
    pub struct Args {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        behavior: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: Opts,
    }

    #[derive(Serialize)]
    struct Effective {
        mode: &'static str,
        data: String,
        behavior: String,
        seed: u64,
        n_list: Vec<usize>,
        seeds: usize,
        k: usize,
        hidden: Vec<usize>,
        lambda: f64,
        alpha: f64,
        gamma: f64,
        updates: usize,
        batch: usize,
        lr: f64,
        eval_episodes: usize,
        threads: usize,
    }

    #[derive(Serialize)]
    struct SweepRow {
        n: usize,
        mean_return: f64,
        std_over_seeds: f64,
        behavior_return: f64,
        per_seed_returns: Vec<f64>,
    }

    #[derive(Serialize)]
    struct Summary {
        mode: &'static str,
        env: String,
        seed: u64,
        behavior_return: f64,
        behavior_return_std: f64,
        rows: Vec<SweepRow>,
    }

    pub fn run(args: Args) -> CliResult<()> {
        let threads = thread_cap()?;
        let file: Option<Opts> = load_config_file(args.config.as_deref())?;
        let file = file.unwrap_or_default();
        let f = args.opts;
        let mut n_list = parse_usize_list(&pick(f.n_list, file.n_list, "1,2,4,8,16,32,64".into()))?;
        n_list.sort_unstable();
        n_list.dedup();
        let cfg = Effective {
            mode: "sweep-n",
            data: args.data.display().to_string(),
            behavior: args.behavior.display().to_string(),
            seed: pick(f.seed, file.seed, 0),
            n_list,
            seeds: pick(f.seeds, file.seeds, 3),
            k: pick(f.k, file.k, 4),
            hidden: parse_usize_list(&pick(f.hidden, file.hidden, "48,48".into()))?,
            lambda: pick(f.lambda, file.lambda, 1.0),
            alpha: pick(f.alpha, file.alpha, 0.995),
            gamma: pick(f.gamma, file.gamma, 0.99),
            updates: pick(f.updates, file.updates, 10_000),
            batch: pick(f.batch, file.batch, 128),
            lr: pick(f.lr, file.lr, 1e-4),
            eval_episodes: pick(f.eval_episodes, file.eval_episodes, 20),
            threads,
        };
        if cfg.seeds == 0 {
            return Err(ErrorReport::new("config", "seeds must be at least 1".into()));
        }
        with_run_dir(&args.out, |dir| {
            dir.record_config(args.config.as_deref(), &cfg)?;
            let dataset = emaq::dataset::load_dataset_file(&args.data)?;
            let behavior = AutoregressiveBehaviorModel::load(&mut File::open(&args.behavior)?)?;
            let env = make_env(&dataset.metadata.env)?;

            // Behavior-policy baseline.
            let mut base_rng = emaq::rng::named_stream(seeds::eval(cfg.seed), "behavior-baseline");
            let baseline = evaluate_policy_rollouts(
                &BehaviorPolicy(&behavior),
                &*env,
                cfg.eval_episodes * cfg.seeds,
                &mut base_rng,
            )?;

            let mut rows = Vec::with_capacity(cfg.n_list.len());
            for &n in &cfg.n_list {
                let mut per_seed = Vec::with_capacity(cfg.seeds);
                for seed_idx in 0..cfg.seeds {
                    let master = emaq::rng::derive_seed(cfg.seed, &[n as u64, seed_idx as u64]);
                    let run_cfg = train::Effective {
                        mode: "train-offline",
                        data: cfg.data.clone(),
                        behavior: cfg.behavior.clone(),
                        seed: master,
                        n,
                        k: cfg.k,
                        hidden: cfg.hidden.clone(),
                        lambda: cfg.lambda,
                        alpha: cfg.alpha,
                        gamma: cfg.gamma,
                        updates: cfg.updates,
                        batch: cfg.batch,
                        lr: cfg.lr,
                        // Evaluate only at the end; the sweep needs finals.
                        eval_interval: cfg.updates.max(1),
                        eval_episodes: cfg.eval_episodes,
                        threads: cfg.threads,
                    };
                    let (mean, _, _, ensemble, _) =
                        train::train_and_eval(&run_cfg, &dataset, &behavior, &*env)?;
                    let name = format!("ensemble_n{n}_seed{seed_idx}.ckpt");
                    let mut ckpt = File::create(dir.path().join(&name))?;
                    emaq::trainer::save_ensemble(&mut ckpt, &ensemble)?;
                    per_seed.push(mean);
                    println!("sweep-n: N={n} seed {seed_idx} -> return {mean}");
                }
                let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
                let std = (per_seed.iter().map(|r| (r - mean).powi(2)).sum::<f64>()
                    / per_seed.len() as f64)
                    .sqrt();
                rows.push(SweepRow {
                    n,
                    mean_return: mean,
                    std_over_seeds: std,
                    behavior_return: baseline.mean,
                    per_seed_returns: per_seed,
                });
            }
            let mut csv = String::from("n,mean_return,std_over_seeds,behavior_return\n");
            for row in &rows {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    row.n, row.mean_return, row.std_over_seeds, row.behavior_return
                ));
            }
            dir.write_text("sweep.csv", &csv)?;
            let summary = Summary {
                mode: "sweep-n",
                env: dataset.metadata.env.clone(),
                seed: cfg.seed,
                behavior_return: baseline.mean,
                behavior_return_std: baseline.std,
                rows,
            };
            dir.write_json("summary.json", &summary)?;
            println!("sweep-n: wrote {}", dir.path().join("sweep.csv").display());
            Ok(())
        })
    }
}

pub mod online {
    use super::*;
    use emaq::behavior::BehaviorConfig;
    use emaq::dataset::{DatasetMetadata, OfflineDataset};
    use emaq::policies::{
        evaluate_policy_rollouts, online_loop, online_trace_to_csv, OnlineConfig, UniformPolicy,
    };
    use emaq::trainer::{save_ensemble, EnsembleConfig};
    use serde::{Deserialize, Serialize};
    use std::fs::File;
    use std::path::PathBuf;

    #[derive(clap::Args, Deserialize, Default)]
    #[serde(default, deny_unknown_fields)]
    pub struct Opts {
        #[arg(long)]
        pub seed: Option<u64>,
        #[arg(long)]
        pub total_steps: Option<usize>,
        /// M: env steps per collection phase (matched by M RL updates).
        #[arg(long)]
        pub m: Option<usize>,
        #[arg(long)]
        pub n: Option<usize>,
        #[arg(long)]
        pub beta: Option<f64>,
        #[arg(long)]
        pub tau: Option<f64>,
        #[arg(long)]
        pub k: Option<usize>,
        #[arg(long)]
        pub hidden: Option<String>,
        #[arg(long)]
        pub gamma: Option<f64>,
        #[arg(long)]
        pub batch: Option<usize>,
        #[arg(long)]
        pub lr: Option<f64>,
        #[arg(long)]
        pub bins: Option<usize>,
        #[arg(long)]
        pub embed_dim: Option<usize>,
        #[arg(long)]
        pub behavior_fit_steps: Option<usize>,
        #[arg(long)]
        pub behavior_lr: Option<f64>,
        #[arg(long)]
        pub eval_episodes: Option<usize>,
    }

    #[derive(clap::Args)]
    pub struct Args {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "pointmass")]
        env: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: Opts,
    }

    #[derive(Serialize)]
    struct Effective {
        mode: &'static str,
        env: String,
        seed: u64,
        total_steps: usize,
        m: usize,
        n: usize,
        beta: f64,
        tau: f64,
        k: usize,
        hidden: Vec<usize>,
        gamma: f64,
        batch: usize,
        lr: f64,
        bins: usize,
        embed_dim: usize,
        behavior_fit_steps: usize,
        behavior_lr: f64,
        eval_episodes: usize,
        threads: usize,
    }

    #[derive(Serialize)]
    struct Summary {
        mode: &'static str,
        env: String,
        n_samples: usize,
        seed: u64,
        return_mean: f64,
        return_std: f64,
        random_return_mean: f64,
        random_return_std: f64,
        total_env_steps: usize,
        phases: usize,
    }

    pub fn run(args: Args) -> CliResult<()> {
        let threads = thread_cap()?;
        let file: Option<Opts> = load_config_file(args.config.as_deref())?;
        let file = file.unwrap_or_default();
        let f = args.opts;
        let cfg = Effective {
            mode: "online",
            env: args.env.clone(),
            seed: pick(f.seed, file.seed, 0),
            total_steps: pick(f.total_steps, file.total_steps, 50_000),
            m: pick(f.m, file.m, 500),
            n: pick(f.n, file.n, 32),
            beta: pick(f.beta, file.beta, 1.0),
            tau: pick(f.tau, file.tau, 5.0),
            k: pick(f.k, file.k, 4),
            hidden: parse_usize_list(&pick(f.hidden, file.hidden, "32,32".into()))?,
            gamma: pick(f.gamma, file.gamma, 0.99),
            batch: pick(f.batch, file.batch, 64),
            lr: pick(f.lr, file.lr, 1e-3),
            bins: pick(f.bins, file.bins, 8),
            embed_dim: pick(f.embed_dim, file.embed_dim, 16),
            behavior_fit_steps: pick(f.behavior_fit_steps, file.behavior_fit_steps, 400),
            behavior_lr: pick(f.behavior_lr, file.behavior_lr, 1e-3),
            eval_episodes: pick(f.eval_episodes, file.eval_episodes, 5),
            threads,
        };
        with_run_dir(&args.out, |dir| {
            dir.record_config(args.config.as_deref(), &cfg)?;
            let env = make_env(&cfg.env)?;
            let ens_config = EnsembleConfig {
                state_dim: env.state_dim(),
                action_dim: env.action_dim(),
                hidden: cfg.hidden.clone(),
                num_members: cfg.k,
                lambda_mix: 1.0,
                alpha_ema: 0.995,
                n_samples: cfg.n,
                gamma: cfg.gamma,
            };
            let behavior_template = BehaviorConfig {
                state_dim: env.state_dim(),
                action_low: env.action_low().to_vec(),
                action_high: env.action_high().to_vec(),
                num_bins: cfg.bins,
                embed_dim: cfg.embed_dim,
                embed_hidden: vec![32],
                head_hidden: vec![32],
                linear_prefix: false,
            };
            let online_config = OnlineConfig {
                total_env_steps: cfg.total_steps,
                batch_env_steps: cfg.m,
                n_samples: cfg.n,
                beta: cfg.beta,
                tau: cfg.tau,
                batch_size: cfg.batch,
                learning_rate: cfg.lr,
                behavior_fit_steps: cfg.behavior_fit_steps,
                behavior_learning_rate: cfg.behavior_lr,
                eval_episodes: cfg.eval_episodes,
                seed: cfg.seed,
            };
            let outcome = online_loop(&*env, ens_config, behavior_template, &online_config)?;

            dir.write_text("trace.csv", &online_trace_to_csv(&outcome.trace))?;
            let mut ens_file = File::create(dir.path().join("ensemble_final.ckpt"))?;
            save_ensemble(&mut ens_file, &outcome.ensemble)?;
            let mut beh_file = File::create(dir.path().join("behavior_final.ckpt"))?;
            outcome.behavior.save(&mut beh_file)?;
            if let Some((ens_bytes, beh_bytes)) = &outcome.half_budget_checkpoint {
                std::fs::write(dir.path().join("ensemble_half.ckpt"), ens_bytes)?;
                std::fs::write(dir.path().join("behavior_half.ckpt"), beh_bytes)?;
            }
            let buffer_dataset = OfflineDataset {
                metadata: DatasetMetadata {
                    env: env.name().to_string(),
                    state_dim: env.state_dim(),
                    action_dim: env.action_dim(),
                    action_low: env.action_low().to_vec(),
                    action_high: env.action_high().to_vec(),
                    policy: "online replay buffer".into(),
                    seed: cfg.seed,
                    created: dataset_timestamp(),
                    num_transitions: outcome.buffer.len(),
                },
                transitions: outcome.buffer.clone(),
            };
            emaq::dataset::save_dataset_file(dir.path().join("buffer.emaq"), &buffer_dataset)?;

            // Random-policy baseline for context.
            let mut rand_rng = emaq::rng::named_stream(seeds::eval(cfg.seed), "random-baseline");
            let random_stats = evaluate_policy_rollouts(
                &UniformPolicy {
                    low: env.action_low().to_vec(),
                    high: env.action_high().to_vec(),
                },
                &*env,
                100,
                &mut rand_rng,
            )?;

            let last = outcome.trace.last().expect("online loop runs >= 1 phase");
            let summary = Summary {
                mode: "online",
                env: cfg.env.clone(),
                n_samples: cfg.n,
                seed: cfg.seed,
                return_mean: last.eval_mean,
                return_std: last.eval_std,
                random_return_mean: random_stats.mean,
                random_return_std: random_stats.std,
                total_env_steps: last.env_steps,
                phases: outcome.trace.len(),
            };
            dir.write_json("summary.json", &summary)?;
            println!(
                "online: {} phases, final return {} +/- {} (random baseline {} +/- {})",
                summary.phases,
                summary.return_mean,
                summary.return_std,
                random_stats.mean,
                random_stats.std
            );
            Ok(())
        })
    }
}

pub mod summarize {
    use super::*;
    use serde::{Deserialize, Serialize};
    use std::path::PathBuf;

    #[derive(clap::Args)]
    pub struct Args {
        /// Run directories, each containing a summary.json.
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Optional output CSV file (printed to stdout regardless).
        #[arg(long)]
        out: Option<PathBuf>,
    }

    #[derive(Deserialize)]
    struct RunSummary {
        mode: String,
        env: String,
        n_samples: usize,
        #[allow(dead_code)]
        seed: u64,
        return_mean: f64,
    }

    #[derive(Serialize)]
    struct AggregateRow {
        mode: String,
        env: String,
        n_samples: usize,
        num_runs: usize,
        mean_return: f64,
        std_return: f64,
    }

    pub fn run(args: Args) -> CliResult<()> {
        let mut summaries = Vec::with_capacity(args.dirs.len());
        let mut bad_dirs = Vec::new();
        for dir in &args.dirs {
            let path = dir.join("summary.json");
            match std::fs::read_to_string(&path)
                .map_err(|e| e.to_string())
                .and_then(|text| {
                    serde_json::from_str::<RunSummary>(&text).map_err(|e| e.to_string())
                }) {
                Ok(s) => summaries.push((dir.clone(), s)),
                Err(e) => bad_dirs.push(format!("{}: {e}", dir.display())),
            }
        }
        if !bad_dirs.is_empty() {
            return Err(ErrorReport::new(
                "validation",
                format!("missing or unreadable summaries in: {}", bad_dirs.join("; ")),
            ));
        }
        let key = |s: &RunSummary| (s.mode.clone(), s.env.clone(), s.n_samples);
        let first_key = key(&summaries[0].1);
        let mismatched: Vec<String> = summaries
            .iter()
            .filter(|(_, s)| key(s) != first_key)
            .map(|(d, s)| {
                format!(
                    "{} (mode={}, env={}, n={})",
                    d.display(),
                    s.mode,
                    s.env,
                    s.n_samples
                )
            })
            .collect();
        if !mismatched.is_empty() {
            return Err(ErrorReport::new(
                "validation",
                format!(
                    "mixed configurations in one aggregation (expected mode={}, env={}, n={}): {}",
                    first_key.0,
                    first_key.1,
                    first_key.2,
                    mismatched.join("; ")
                ),
            ));
        }
        let returns: Vec<f64> = summaries.iter().map(|(_, s)| s.return_mean).collect();
        let mean = returns.iter().sum::<f64>() / returns.len() as f64;
        let std =
            (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / returns.len() as f64).sqrt();
        let row = AggregateRow {
            mode: first_key.0,
            env: first_key.1,
            n_samples: first_key.2,
            num_runs: returns.len(),
            mean_return: mean,
            std_return: std,
        };
        let csv = format!(
            "mode,env,n_samples,num_runs,mean_return,std_return\n{},{},{},{},{},{}\n",
            row.mode, row.env, row.n_samples, row.num_runs, row.mean_return, row.std_return
        );
        print!("{csv}");
        if let Some(out) = &args.out {
            std::fs::write(out, &csv)?;
        }
        Ok(())
    }
}
