use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use pcb_core::active_query::{run_active_loop, ActiveLoopConfig, LowDimConcept, QuerySource, QueryStrategy, StrategyKind};
use pcb_core::dataset::LabeledDataset;
use pcb_core::experiment::{self, ExperimentConfig, ExperimentId, Scale};
use pcb_core::nets::{ModelFile, PointSetModel};
use pcb_core::oracle::ConceptId;
use pcb_core::pipeline::{
    bootstrap_dataset, build_balanced_testset, classification_accuracy, optimization_accuracy, render_pool,
    train_high_dim, zero_value_problems, OracleClassifier, StateClassifier,
};
use pcb_core::scene::Catalog;
use pcb_core::seed;

#[derive(Parser)]
#[command(name = "pcb", version, about = "Concept bootstrapping lab")]
struct Cli {
    /// JSON experiment config; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    scale: Option<ScaleArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Paper,
}

#[derive(Subcommand)]
enum Command {
    /// Sample (and optionally render) a labeled dataset and cache it.
    GenData(GenData),
    /// Learn a low-dimensional concept from simulated human queries.
    TrainLowdim(TrainLowdim),
    /// Label rendered random scenes with a low-dimensional concept.
    Bootstrap(Bootstrap),
    /// Train a point-cloud concept on a cached rendered dataset.
    TrainHighdim(TrainHighdim),
    /// Evaluate a saved model.
    Eval(Eval),
    /// Run one of the experiment studies and write results.csv.
    Experiment(ExperimentArgs),
    /// Seed-averaged learning curves from a results file.
    Summarize(SummarizeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    /// Exactly half positive, by rejection sampling.
    Balanced,
    /// Scene-sampler distribution with oracle labels.
    Random,
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    concept: ConceptId,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, value_enum, default_value_t = DataKind::Balanced)]
    kind: DataKind,
    /// Store point clouds with each record.
    #[arg(long)]
    render: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Random,
    Confusion,
    Confrand,
    Demo,
}

#[derive(Args)]
struct TrainLowdim {
    #[arg(long)]
    concept: ConceptId,
    #[arg(long, default_value_t = 500)]
    budget: usize,
    #[arg(long, value_enum, default_value_t = StrategyArg::Confrand)]
    strategy: StrategyArg,
    #[arg(long)]
    augment: bool,
    /// Ask feature queries before the first label query.
    #[arg(long)]
    features: bool,
    /// Probability that the simulated human flips a label.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
}

#[derive(Args)]
struct Bootstrap {
    /// Low-dimensional concept saved by train-lowdim.
    #[arg(long)]
    model: PathBuf,
    /// Number of records (defaults to the scale's bootstrap size).
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args)]
struct TrainHighdim {
    /// Dataset cache with rendered clouds.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Classification,
    Optimization,
}

#[derive(Args)]
struct Eval {
    /// Saved model (low-dimensional concept or point-set model). Omit to
    /// score the ground-truth oracle.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    concept: Option<ConceptId>,
    #[arg(long, value_enum, default_value_t = MetricArg::Classification)]
    metric: MetricArg,
    /// Evaluate on a cached dataset instead of a fresh balanced test set.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Test-set size or problem count (defaults to the scale's).
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment id (overrides the config).
    #[arg(long)]
    experiment: Option<ExperimentId>,
}

#[derive(Args)]
struct SummarizeArgs {
    /// results.csv to read (defaults to OUT/results.csv).
    #[arg(long)]
    results: Option<PathBuf>,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.root_seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = cli.scale {
        cfg.scale = match s {
            ScaleArg::Desk => Scale::Desk,
            ScaleArg::Paper => Scale::Paper,
        };
    }
    Ok(cfg)
}

fn out_file(cfg: &ExperimentConfig, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    Ok(cfg.output_dir.join(name))
}

enum Loaded {
    Low(LowDimConcept),
    High(PointSetModel),
}

fn load_model(path: &Path) -> Result<Loaded> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(m) = LowDimConcept::from_json(&text) {
        return Ok(Loaded::Low(m));
    }
    let file: ModelFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Loaded::High(PointSetModel::from_file(&file)?))
}

fn gen_data(cfg: &ExperimentConfig, args: &GenData) -> Result<()> {
    let catalog = Catalog::primitives();
    let sim = cfg.sim();
    let s = seed::derive(cfg.root_seed, &[seed::tag("gen-data"), seed::tag(args.concept.name())]);
    let data = match args.kind {
        DataKind::Balanced => build_balanced_testset(args.concept, args.n, &catalog, &sim, args.render, s)?,
        DataKind::Random if args.render => {
            let mut d = render_pool(args.concept, args.n, &catalog, &sim, s)?;
            pcb_core::pipeline::relabel(&mut d, &OracleClassifier(args.concept))?;
            d
        }
        DataKind::Random => {
            let mut rng = seed::rng(s);
            let mut d = LabeledDataset::new(args.concept);
            for _ in 0..args.n {
                let scene = pcb_core::scene::sample_scene(&catalog, &sim.workspace, args.concept, &mut rng)?;
                d.records.push(pcb_core::dataset::Record {
                    scene,
                    privileged: pcb_core::active_query::observe(&scene, None),
                    cloud: None,
                    label: pcb_core::oracle::true_label(args.concept, &scene)?,
                });
            }
            d
        }
    };
    let path = out_file(cfg, &format!("{}_data.bin", args.concept))?;
    data.save(&path, s)?;
    println!("{} records ({} positive) -> {}", data.len(), data.positives(), path.display());
    Ok(())
}

fn train_lowdim(cfg: &ExperimentConfig, args: &TrainLowdim) -> Result<()> {
    let kind = match args.strategy {
        StrategyArg::Random => Some(StrategyKind::Random),
        StrategyArg::Confusion => Some(StrategyKind::Confusion),
        StrategyArg::Confrand => Some(StrategyKind::Confrand),
        StrategyArg::Demo => None,
    };
    let source = match kind {
        Some(k) => QuerySource::Label(QueryStrategy::new(k, args.augment)),
        None if args.augment => bail!("--augment applies to label queries only"),
        None => QuerySource::Demo,
    };
    let s = seed::derive(cfg.root_seed, &[seed::tag("train-lowdim"), seed::tag(args.concept.name())]);
    let mut loop_cfg = ActiveLoopConfig::new(args.concept, args.budget, source, args.features, s);
    loop_cfg.batch_size = cfg.batch_size;
    loop_cfg.noise = args.noise;
    loop_cfg.train = cfg.low_dim_train.clone();
    loop_cfg.query_cem = cfg.query_cem.clone();
    let run = run_active_loop(&loop_cfg, &Catalog::primitives(), &cfg.workspace)?;
    let model_path = out_file(cfg, &format!("{}_phi_l.json", args.concept))?;
    run.final_model().save(&model_path)?;
    let data_path = out_file(cfg, &format!("{}_queries.bin", args.concept))?;
    run.dataset.save(&data_path, s)?;
    println!(
        "{} queries ({} positive) -> {}, {}",
        run.dataset.len(),
        run.dataset.positives(),
        model_path.display(),
        data_path.display()
    );
    Ok(())
}

fn bootstrap(cfg: &ExperimentConfig, args: &Bootstrap) -> Result<()> {
    let Loaded::Low(phi_l) = load_model(&args.model)? else {
        bail!("{} is not a low-dimensional concept", args.model.display());
    };
    let n = args.n.unwrap_or(cfg.params().bootstrap_size);
    let s = seed::derive(cfg.root_seed, &[seed::tag("bootstrap"), seed::tag(phi_l.concept.name())]);
    let data = bootstrap_dataset(&phi_l, n, &Catalog::primitives(), &cfg.sim(), s)?;
    let path = out_file(cfg, &format!("{}_bootstrap.bin", phi_l.concept))?;
    data.save(&path, s)?;
    println!("{} records ({} labeled positive) -> {}", data.len(), data.positives(), path.display());
    Ok(())
}

fn train_highdim(cfg: &ExperimentConfig, args: &TrainHighdim) -> Result<()> {
    let (data, header) = LabeledDataset::load(&args.data)?;
    let s = seed::derive(cfg.root_seed, &[seed::tag("train-highdim"), header.seed]);
    let model = train_high_dim(&data, &cfg.high_dim_train, s)?;
    let path = out_file(cfg, &format!("{}_phi_h.json", data.concept))?;
    model.to_file().save(&path)?;
    println!("trained on {} records -> {}", data.len(), path.display());
    Ok(())
}

fn eval(cfg: &ExperimentConfig, args: &Eval) -> Result<()> {
    let model = args.model.as_deref().map(load_model).transpose()?;
    let cached = args.data.as_deref().map(LabeledDataset::load).transpose()?.map(|(d, _)| d);
    let concept = match (&model, args.concept, &cached) {
        (Some(Loaded::Low(m)), _, _) => m.concept,
        (_, Some(c), _) => c,
        (_, None, Some(d)) => d.concept,
        _ => bail!("--concept is required for this model"),
    };
    let catalog = Catalog::primitives();
    let sim = cfg.sim();
    let s = seed::derive(cfg.root_seed, &[seed::tag("eval"), seed::tag(concept.name())]);
    let value = match args.metric {
        MetricArg::Classification => {
            let render = matches!(model, Some(Loaded::High(_)));
            let data = match cached {
                Some(d) => d,
                None => build_balanced_testset(concept, args.n.unwrap_or(cfg.params().test_size), &catalog, &sim, render, s)?,
            };
            let classifier: Box<dyn StateClassifier> = match model {
                Some(Loaded::Low(m)) => Box::new(m),
                Some(Loaded::High(m)) => Box::new(m),
                None => Box::new(OracleClassifier(concept)),
            };
            classification_accuracy(classifier.as_ref(), &data)?
        }
        MetricArg::Optimization => {
            let Some(Loaded::High(m)) = model else {
                bail!("optimization accuracy needs a point-set model");
            };
            let n = args.n.unwrap_or(cfg.params().opt_problems);
            let problems = zero_value_problems(concept, n, &catalog, &sim, &cfg.pose_cem, s)?;
            optimization_accuracy(&m, concept, &problems, &cfg.workspace)?
        }
    };
    println!("{concept} {value:.4}");
    Ok(())
}

fn run_experiment(mut cfg: ExperimentConfig, args: &ExperimentArgs) -> Result<()> {
    if let Some(id) = args.experiment {
        cfg.experiment = id;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
    info!("running {} into {}", cfg.experiment.name(), cfg.output_dir.display());
    let path = experiment::run_experiment(&cfg)?;
    println!("{}", path.display());
    Ok(())
}

fn summarize(cfg: &ExperimentConfig, args: &SummarizeArgs) -> Result<()> {
    let path = args.results.clone().unwrap_or_else(|| cfg.output_dir.join("results.csv"));
    let rows = experiment::read_results(&path).with_context(|| format!("reading {}", path.display()))?;
    let cells = experiment::summarize(&rows)?;
    print!("{}", experiment::render_table(&cells));
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::GenData(a) => gen_data(&cfg, a),
        Command::TrainLowdim(a) => train_lowdim(&cfg, a),
        Command::Bootstrap(a) => bootstrap(&cfg, a),
        Command::TrainHighdim(a) => train_highdim(&cfg, a),
        Command::Eval(a) => eval(&cfg, a),
        Command::Experiment(a) => run_experiment(cfg, a),
        Command::Summarize(a) => summarize(&cfg, a),
    }
}
