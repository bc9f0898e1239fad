use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lfd_cli::config::{Mode, RunConfig};
use lfd_cli::experiment::{self, Init, MethodRun, Pretrained};
use lfd_cli::rundir::{runs_root, RunDir};
use lfd_core::demo::{dataset_stats, DemoDataset, StatsReport};
use lfd_core::env::{make_game, GameConfig, GameId, WrappedEnv};
use lfd_core::eval::evaluate_policy;
use lfd_core::gradcam::{capture_episode, render_sequence, write_outputs, CamMode, CamModels, CamTarget};
use lfd_core::network::{build_policy_value, load_model, save_model, LayerSet};
use lfd_core::proxy::record_proxy;
use lfd_service::{serve, ServerConfig};

#[derive(Parser)]
#[command(name = "lfd", version, about = "Demonstration pre-training for actor-critic agents on small pixel games")]
struct Cli {
    /// Root for run directories (overrides LFD_RUNS_DIR).
    #[arg(long, global = true)]
    runs_dir: Option<PathBuf>,
    /// Log level filter, e.g. `info` or `lfd_core=debug`.
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the play client and record human demonstrations.
    Record {
        #[arg(long)]
        game: Option<GameId>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Built play client to serve instead of the bundled page.
        #[arg(long)]
        static_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        cell_px: usize,
    },
    /// Record demonstrations from the scripted non-expert proxy.
    Proxy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        games: usize,
        #[arg(long)]
        skill: Option<f64>,
    },
    /// Print size and quality of demonstration datasets.
    Stats {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Pre-train the classifier on a demonstration dataset.
    Pretrain {
        #[command(flatten)]
        common: Common,
    },
    /// Train one method on every configured seed.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Train several methods on the same seeds and compare them.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Comma-separated methods; the first is the baseline.
        #[arg(long, value_delimiter = ',', default_values_t = Mode::ALL.to_vec())]
        methods: Vec<Mode>,
    },
    /// Compare transferring each of the five layer sets.
    Ablation {
        #[command(flatten)]
        common: Common,
    },
    /// Score a saved model.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Evaluation seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Saliency maps of a random, a pre-trained and a trained agent.
    Gradcam {
        #[command(flatten)]
        common: Common,
        /// Trained agent snapshot.
        #[arg(long = "final")]
        final_model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        target: Option<CamTarget>,
        #[arg(long)]
        cam_mode: Option<CamMode>,
        #[arg(long)]
        shared_action: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// The config file plus flags that override its fields.
#[derive(Args, Clone, Default)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    game: Option<GameId>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    layers: Option<LayerSet>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Environment steps per seed, summed over workers.
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    eval_interval: Option<u64>,
    #[arg(long)]
    eval_steps: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    early_stop: Option<f64>,
    /// Pre-training iterations.
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    demos: Option<PathBuf>,
    #[arg(long)]
    pretrained: Option<PathBuf>,
    /// Record this many proxy games into the run directory when no
    /// demonstrations or snapshot are given.
    #[arg(long)]
    proxy_games: Option<usize>,
}

impl Common {
    fn config(&self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(g) = self.game {
            c.game.id = g;
        }
        if let Some(m) = self.mode {
            c.mode = m;
        }
        if let Some(l) = self.layers {
            c.layers = l;
        }
        if let Some(s) = &self.seeds {
            c.seeds = s.clone();
        }
        if let Some(b) = self.budget {
            c.a3c.step_budget = b;
        }
        if let Some(w) = self.workers {
            c.a3c.workers = w;
        }
        if let Some(i) = self.eval_interval {
            c.a3c.eval_interval = i;
        }
        if let Some(s) = self.eval_steps {
            c.a3c.eval_steps = s;
        }
        if let Some(lr) = self.lr {
            c.a3c.rmsprop.learning_rate = lr;
        }
        if self.early_stop.is_some() {
            c.a3c.early_stop_score = self.early_stop;
        }
        if let Some(i) = self.iterations {
            c.pretrain.iterations = i;
        }
        if self.demos.is_some() {
            c.paths.demos = self.demos.clone();
        }
        if self.pretrained.is_some() {
            c.paths.pretrained = self.pretrained.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_new(&cli.log).context("bad --log filter")?)
        .with_writer(std::io::stderr)
        .init();
    let runs = cli.runs_dir.as_deref();
    match cli.command {
        Command::Record {
            game,
            out,
            port,
            static_dir,
            cell_px,
        } => record(game, out, port, static_dir, cell_px),
        Command::Proxy {
            common,
            out,
            games,
            skill,
        } => proxy(&common, &out, games, skill),
        Command::Stats { dirs, json } => stats(&dirs, json),
        Command::Pretrain { common } => pretrain(&common, runs),
        Command::Train { common } => train(&common, runs),
        Command::Experiment { common, methods } => run_experiment(&common, runs, &methods),
        Command::Ablation { common } => ablation(&common, runs),
        Command::Eval { common, model, seed } => eval(&common, &model, seed),
        Command::Gradcam {
            common,
            final_model,
            out,
            target,
            cam_mode,
            shared_action,
            seed,
        } => gradcam(&common, runs, &final_model, out, target, cam_mode, shared_action, seed),
    }
}

fn record(game: Option<GameId>, out: PathBuf, port: u16, static_dir: Option<PathBuf>, cell_px: usize) -> anyhow::Result<()> {
    let mut config = ServerConfig::new(&out);
    config.static_dir = static_dir;
    config.cell_px = cell_px;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(("0.0.0.0", port))
            .await
            .with_context(|| format!("cannot listen on port {port}"))?;
        let hint = game.map(|g| format!(" (suggested game: {g})")).unwrap_or_default();
        println!("recording into {} — open http://localhost:{port}/{hint}", out.display());
        serve(listener, config).await?;
        Ok(())
    })
}

fn proxy(common: &Common, out: &Path, games: usize, skill: Option<f64>) -> anyhow::Result<()> {
    let config = common.config()?;
    let mut p = config.proxy.clone();
    if let Some(s) = skill {
        p.skill = s;
    }
    let seed = config.seeds[0];
    let meta = record_proxy(&config.game, games, &p, seed, out)?;
    print_stats(&[lfd_core::demo::meta_stats(&meta)]);
    Ok(())
}

fn print_stats(reports: &[StatsReport]) {
    println!(
        "{:<14} {:>12} {:>12} {:>10} {:>10}",
        "game", "worst score", "best score", "# states", "# episodes"
    );
    for r in reports {
        println!(
            "{:<14} {:>12.2} {:>12.2} {:>10} {:>10}",
            r.game.as_str(),
            r.worst_score,
            r.best_score,
            r.states,
            r.episodes
        );
    }
    for r in reports {
        let hist: Vec<String> = r.action_histogram.iter().map(|(a, n)| format!("{a} {n}")).collect();
        println!("{}: {}", r.game, hist.join(", "));
    }
}

fn stats(dirs: &[PathBuf], json: bool) -> anyhow::Result<()> {
    let mut reports = Vec::new();
    for d in dirs {
        let ds = DemoDataset::load(d).with_context(|| format!("loading {}", d.display()))?;
        reports.push(dataset_stats(&ds));
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&reports)?);
    } else {
        print_stats(&reports);
    }
    Ok(())
}

/// Uses the configured snapshot, else pre-trains on the configured
/// demonstrations, else on freshly recorded proxy games.
fn obtain_pretrained(common: &Common, config: &RunConfig, dir: &RunDir) -> anyhow::Result<Pretrained> {
    if let Some(p) = &config.paths.pretrained {
        return Ok(Pretrained::load(p)?);
    }
    let demos = match (&config.paths.demos, common.proxy_games) {
        (Some(d), _) => d.clone(),
        (None, Some(games)) => {
            let d = dir.file("demos");
            record_proxy(&config.game, games, &config.proxy, config.seeds[0], &d)?;
            d
        }
        (None, None) => bail!("paths.demos: give --demos, --pretrained or --proxy-games"),
    };
    let ds = DemoDataset::load(&demos).with_context(|| format!("loading {}", demos.display()))?;
    let outcome = experiment::pretrain(config, &ds)?;
    let game = config.game.id.as_str();
    let p = Pretrained::from_outcome(&outcome, game);
    save_model(dir.file("classifier.snap"), &p.params, &p.meta)?;
    dir.write_json("pretrain_report.json", &outcome.report(game, config.pretrain.iterations))?;
    Ok(p)
}

fn pretrain(common: &Common, runs: Option<&Path>) -> anyhow::Result<()> {
    let mut config = common.config()?;
    config.paths.pretrained = None;
    let dir = RunDir::create(&runs_root(runs, &config), "pretrain", &config)?;
    let p = obtain_pretrained(common, &config, &dir)?;
    println!(
        "classifier saved to {} (output-layer max {:.4})",
        dir.file("classifier.snap").display(),
        p.meta.tracked_max.unwrap_or(0.0)
    );
    Ok(())
}

fn finish(dir: &RunDir, config: &RunConfig, methods: &[MethodRun], baseline: &str) -> anyhow::Result<()> {
    for m in methods {
        experiment::write_method(dir, config, m)?;
    }
    let report = experiment::report(config, methods, baseline)?;
    dir.write_json("report.json", &report)?;
    if let Some(s) = &report.summary {
        print!("{}", s.table());
    }
    println!("artifacts in {}", dir.path.display());
    let errors: Vec<String> = methods.iter().flat_map(|m| m.errors()).collect();
    if !errors.is_empty() {
        bail!("some runs failed:\n{}", errors.join("\n"));
    }
    Ok(())
}

fn train(common: &Common, runs: Option<&Path>) -> anyhow::Result<()> {
    let config = common.config()?;
    let needs_snapshot = config.mode.pretrained() && common.proxy_games.is_none() && config.paths.demos.is_none();
    if needs_snapshot {
        config.validate_for_training(config.mode)?;
    }
    let dir = RunDir::create(&runs_root(runs, &config), "train", &config)?;
    let pretrained = if config.mode.pretrained() {
        Some(obtain_pretrained(common, &config, &dir)?)
    } else {
        None
    };
    let init = if config.mode.pretrained() {
        Init::Transfer(config.layers)
    } else {
        Init::Random
    };
    let run = experiment::run_method(&config, config.mode.as_str(), config.mode, init, pretrained.as_ref())?;
    finish(&dir, &config, &[run], config.mode.as_str())
}

fn run_experiment(common: &Common, runs: Option<&Path>, methods: &[Mode]) -> anyhow::Result<()> {
    let config = common.config()?;
    if methods.is_empty() {
        bail!("methods: at least one method is required");
    }
    let dir = RunDir::create(&runs_root(runs, &config), "experiment", &config)?;
    let pretrained = if methods.iter().any(|m| m.pretrained()) {
        Some(obtain_pretrained(common, &config, &dir)?)
    } else {
        None
    };
    let runs = experiment::run_experiment(&config, methods, pretrained.as_ref())?;
    finish(&dir, &config, &runs, methods[0].as_str())
}

fn ablation(common: &Common, runs: Option<&Path>) -> anyhow::Result<()> {
    let config = common.config()?;
    let dir = RunDir::create(&runs_root(runs, &config), "ablation", &config)?;
    let pretrained = obtain_pretrained(common, &config, &dir)?;
    let mode = if config.mode.pretrained() { config.mode } else { Mode::Pmfa3cTb };
    let runs = experiment::run_ablation(&config, mode, &pretrained)?;
    finish(&dir, &config, &runs, "none")
}

fn eval(common: &Common, model: &Path, seed: u64) -> anyhow::Result<()> {
    let config = common.config()?;
    let (mut graph, meta) = load_model(model).with_context(|| format!("loading {}", model.display()))?;
    if let Some(g) = &meta.game {
        if g != config.game.id.as_str() {
            bail!("game: model was trained on {g}, config says {}", config.game.id);
        }
    }
    let mut env = WrappedEnv::new(make_game(&config.game)?, config.wrapper.for_evaluation(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let result = evaluate_policy(&mut graph, &mut env, config.a3c.eval_steps, &mut rng)?;
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn gradcam(
    common: &Common,
    runs: Option<&Path>,
    final_model: &Path,
    out: Option<PathBuf>,
    target: Option<CamTarget>,
    cam_mode: Option<CamMode>,
    shared_action: bool,
    seed: u64,
) -> anyhow::Result<()> {
    let mut config = common.config()?;
    if let Some(t) = target {
        config.gradcam.target = t;
    }
    if let Some(m) = cam_mode {
        config.gradcam.mode = m;
    }
    config.gradcam.shared_action |= shared_action;
    let Some(pretrained_path) = config.paths.pretrained.clone() else {
        bail!("paths.pretrained: the pre-trained classifier is required");
    };
    let (mut pretrained, _) =
        load_model(&pretrained_path).with_context(|| format!("loading {}", pretrained_path.display()))?;
    let (mut final_rl, meta) = load_model(final_model).with_context(|| format!("loading {}", final_model.display()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut random = build_policy_value(&meta.network, &mut rng)?;
    let game = GameConfig {
        id: config.game.id,
        ..config.game.clone()
    };
    let mut env = WrappedEnv::new(make_game(&game)?, config.wrapper.for_evaluation(), seed)?;
    let capture = capture_episode(&mut final_rl, &mut env, config.gradcam.max_steps, &mut rng)?;
    let mut models = CamModels {
        random: &mut random,
        pretrained: &mut pretrained,
        final_rl: &mut final_rl,
    };
    let cams = render_sequence(&mut models, &capture, &config.gradcam)?;
    let out = match out {
        Some(o) => o,
        None => RunDir::create(&runs_root(runs, &config), "gradcam", &config)?.path,
    };
    let manifest = write_outputs(&out, &cams, &capture, &config.gradcam)?;
    println!(
        "{} frames, episode score {:.1}; saliency written to {}",
        manifest.frames.len(),
        manifest.episode_score,
        out.display()
    );
    Ok(())
}
