//! Experiment definitions, the cell runner and the results table.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::active_query::{
    confusion_cem, run_active_loop, ActiveLoopConfig, ActiveRun, QuerySource, QueryStrategy, StrategyKind,
};
use crate::cem::CemConfig;
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::nets::{PointSetModel, TrainConfig};
use crate::oracle::ConceptId;
use crate::pipeline::{
    build_balanced_testset, classification_accuracy, optimization_accuracy, pose_cem, relabel, render_pool,
    train_baseline_direct, train_high_dim, zero_value_problems, PoseOptProblem, SimConfig,
};
use crate::scene::{Catalog, RenderConfig, Workspace};
use crate::seed;

pub const NOISE_LEVELS: [f64; 6] = [0.0, 0.01, 0.05, 0.10, 0.25, 0.50];
pub const CSV_HEADER: [&str; 7] = ["concept", "experiment", "method", "n_queries", "seed", "metric", "value"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    PcbVsBaseline,
    QueryFactorial,
    ActiveFactorial,
    NoiseAblation,
    DemoPcb,
    OptAccuracy,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 6] = [
        ExperimentId::PcbVsBaseline,
        ExperimentId::QueryFactorial,
        ExperimentId::ActiveFactorial,
        ExperimentId::NoiseAblation,
        ExperimentId::DemoPcb,
        ExperimentId::OptAccuracy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::PcbVsBaseline => "pcb_vs_baseline",
            ExperimentId::QueryFactorial => "query_factorial",
            ExperimentId::ActiveFactorial => "active_factorial",
            ExperimentId::NoiseAblation => "noise_ablation",
            ExperimentId::DemoPcb => "demo_pcb",
            ExperimentId::OptAccuracy => "opt_accuracy",
        }
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown experiment {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Desk,
    Paper,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            _ => Err(Error::Usage(format!("unknown scale {s:?} (expected desk or paper)"))),
        }
    }
}

/// Dataset and evaluation sizes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleParams {
    pub bootstrap_size: usize,
    pub test_size: usize,
    pub opt_problems: usize,
}

impl Scale {
    pub fn params(self) -> ScaleParams {
        match self {
            Scale::Desk => ScaleParams {
                bootstrap_size: 8000,
                test_size: 2000,
                opt_problems: 100,
            },
            Scale::Paper => ScaleParams {
                bootstrap_size: 80000,
                test_size: 20000,
                opt_problems: 1000,
            },
        }
    }
}

/// Per-field replacements of the scale presets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScaleOverrides {
    pub bootstrap_size: Option<usize>,
    pub test_size: Option<usize>,
    /// Size of the rendered test sets used for point-cloud models
    /// (defaults to `test_size`).
    pub cloud_test_size: Option<usize>,
    pub opt_problems: Option<usize>,
}

/// One file fully determines a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub concepts: Vec<ConceptId>,
    pub budgets: Vec<usize>,
    pub seeds: Vec<u64>,
    pub root_seed: u64,
    pub scale: Scale,
    pub overrides: ScaleOverrides,
    pub batch_size: usize,
    pub noise_levels: Vec<f64>,
    pub low_dim_train: TrainConfig,
    pub high_dim_train: TrainConfig,
    pub query_cem: CemConfig,
    pub pose_cem: CemConfig,
    pub workspace: Workspace,
    pub render: RenderConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentId::PcbVsBaseline,
            concepts: ConceptId::ALL.to_vec(),
            budgets: (1..=10).map(|i| i * 100).collect(),
            seeds: vec![0, 1, 2],
            root_seed: 0,
            scale: Scale::Desk,
            overrides: ScaleOverrides::default(),
            batch_size: 100,
            noise_levels: NOISE_LEVELS.to_vec(),
            low_dim_train: TrainConfig::low_dim(),
            high_dim_train: TrainConfig::high_dim(),
            query_cem: confusion_cem(),
            pose_cem: pose_cem(),
            workspace: Workspace::default(),
            render: RenderConfig::default(),
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.concepts.is_empty() {
            return Err(Error::Config("no concepts".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.batch_size == 0 || self.budgets.is_empty() || self.budgets.iter().any(|b| *b == 0 || b % self.batch_size != 0) {
            return Err(Error::Config(format!(
                "budgets {:?} must be positive multiples of the batch size {}",
                self.budgets, self.batch_size
            )));
        }
        if self.noise_levels.iter().any(|n| !(0.0..=1.0).contains(n)) {
            return Err(Error::Config(format!("noise levels {:?} outside [0, 1]", self.noise_levels)));
        }
        let p = self.params();
        if p.test_size == 0 || p.test_size % 2 != 0 || self.cloud_test_size() % 2 != 0 || self.cloud_test_size() == 0 {
            return Err(Error::Config("test set sizes must be positive and even".into()));
        }
        if p.bootstrap_size == 0 || p.opt_problems == 0 {
            return Err(Error::Config("bootstrap size and problem count must be positive".into()));
        }
        self.low_dim_train.validate()?;
        self.high_dim_train.validate()?;
        self.query_cem.validate(6)?;
        self.pose_cem.validate(6)?;
        self.sim().validate()
    }

    pub fn params(&self) -> ScaleParams {
        let base = self.scale.params();
        let o = &self.overrides;
        ScaleParams {
            bootstrap_size: o.bootstrap_size.unwrap_or(base.bootstrap_size),
            test_size: o.test_size.unwrap_or(base.test_size),
            opt_problems: o.opt_problems.unwrap_or(base.opt_problems),
        }
    }

    pub fn cloud_test_size(&self) -> usize {
        self.overrides.cloud_test_size.unwrap_or(self.params().test_size)
    }

    pub fn sim(&self) -> SimConfig {
        SimConfig {
            workspace: self.workspace.clone(),
            render: self.render.clone(),
        }
    }

    fn max_budget(&self) -> usize {
        *self.budgets.iter().max().expect("validated non-empty")
    }

    fn sorted_budgets(&self) -> Vec<usize> {
        let mut b = self.budgets.clone();
        b.sort_unstable();
        b.dedup();
        b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub concept: ConceptId,
    pub experiment: ExperimentId,
    pub method: String,
    pub n_queries: usize,
    pub seed: u64,
    pub metric: Metric,
    /// NaN marks a cell that failed.
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ClassificationAccuracy,
    OptimizationAccuracy,
}

/// Destination of result rows; called once per finished cell.
pub trait RowSink {
    fn write_rows(&mut self, rows: &[ResultRow]) -> Result<()>;
}

impl RowSink for Vec<ResultRow> {
    fn write_rows(&mut self, rows: &[ResultRow]) -> Result<()> {
        self.extend_from_slice(rows);
        Ok(())
    }
}

/// Appends rows to a CSV file and flushes after every cell.
pub struct CsvSink {
    writer: csv::Writer<File>,
}

impl CsvSink {
    /// Creates (truncating) `path` and writes the header.
    pub fn create(path: &Path) -> Result<Self> {
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
        writer.write_record(CSV_HEADER)?;
        writer.flush()?;
        Ok(Self { writer })
    }

    /// Continues an existing file, writing the header only if it is empty.
    pub fn append(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let empty = file.metadata()?.len() == 0;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if empty {
            writer.write_record(CSV_HEADER)?;
            writer.flush()?;
        }
        Ok(Self { writer })
    }
}

impl RowSink for CsvSink {
    fn write_rows(&mut self, rows: &[ResultRow]) -> Result<()> {
        for r in rows {
            self.writer.serialize(r)?;
        }
        self.writer.flush()?;
        Ok(())
    }
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Format(format!("unexpected results header {header:?}")));
    }
    Ok(reader.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>()?)
}

/// Label-query strategy used by the bootstrapped pipeline.
pub fn pcb_strategy() -> QueryStrategy {
    QueryStrategy::new(StrategyKind::Confrand, true)
}

/// Which human-query loop feeds a point-set model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuerySet {
    /// confrand + augment label queries with feature queries.
    Pcb,
    /// Random label queries, no feature queries.
    Random,
    /// Demonstrations with feature queries.
    Demo,
}

/// A method label resolved into what it runs.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    /// Low-dimensional concept from an active loop, scored on privileged
    /// features.
    LowDim {
        source: QuerySource,
        features: bool,
        noise: f64,
    },
    /// Point-set model, either bootstrapped from the loop's low-dimensional
    /// concept or trained directly on the loop's queries.
    HighDim { queries: QuerySet, bootstrap: bool },
}

impl Method {
    /// Parses labels such as `random`, `demo+features`,
    /// `confrand+augment+features`, `noise=0.1`, `pcb` or `demo_direct`.
    pub fn parse(label: &str) -> Result<Self> {
        let high = |queries, bootstrap| Ok(Method::HighDim { queries, bootstrap });
        match label {
            "pcb" => return high(QuerySet::Pcb, true),
            "baseline_random" => return high(QuerySet::Random, false),
            "baseline_active" => return high(QuerySet::Pcb, false),
            "demo_pcb" => return high(QuerySet::Demo, true),
            "demo_direct" => return high(QuerySet::Demo, false),
            _ => {}
        }
        let bad = || Error::Usage(format!("unknown method {label:?}"));
        if let Some(level) = label.strip_prefix("noise=") {
            let noise: f64 = level.parse().map_err(|_| bad())?;
            return Ok(Method::LowDim {
                source: QuerySource::Label(pcb_strategy()),
                features: true,
                noise,
            });
        }
        let mut parts = label.split('+');
        let head = parts.next().ok_or_else(bad)?;
        let (mut augment, mut features) = (false, false);
        for p in parts {
            match p {
                "augment" if !augment && !features => augment = true,
                "features" if !features => features = true,
                _ => return Err(bad()),
            }
        }
        let source = match head {
            "demo" if !augment => QuerySource::Demo,
            _ => {
                let kind = StrategyKind::ALL.into_iter().find(|k| k.name() == head).ok_or_else(bad)?;
                QuerySource::Label(QueryStrategy::new(kind, augment))
            }
        };
        Ok(Method::LowDim { source, features, noise: 0.0 })
    }
}

fn method_label(source: &QuerySource, features: bool) -> String {
    if features {
        format!("{}+features", source.label())
    } else {
        source.label()
    }
}

/// Method labels of an experiment, in output order.
pub fn experiment_methods(id: ExperimentId, noise_levels: &[f64]) -> Vec<String> {
    let strings = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
    match id {
        ExperimentId::QueryFactorial => {
            let random = QuerySource::Label(QueryStrategy::new(StrategyKind::Random, false));
            [QuerySource::Demo, random]
                .iter()
                .flat_map(|s| [true, false].map(|f| method_label(s, f)))
                .collect()
        }
        ExperimentId::ActiveFactorial => StrategyKind::ALL
            .into_iter()
            .flat_map(|k| [false, true].map(|aug| method_label(&QuerySource::Label(QueryStrategy::new(k, aug)), true)))
            .collect(),
        ExperimentId::NoiseAblation => noise_levels.iter().map(|n| format!("noise={n}")).collect(),
        ExperimentId::PcbVsBaseline | ExperimentId::OptAccuracy => strings(&["pcb", "baseline_random", "baseline_active"]),
        ExperimentId::DemoPcb => strings(&["demo_pcb", "demo_direct"]),
    }
}

/// Runs cells and memoizes the expensive intermediate products, so that
/// experiments sharing a loop configuration or a test set compute it once.
pub struct Runner {
    cfg: ExperimentConfig,
    catalog: Catalog,
    loops: HashMap<String, ActiveRun>,
    privileged_tests: HashMap<ConceptId, LabeledDataset>,
    cloud_tests: HashMap<ConceptId, LabeledDataset>,
    pools: HashMap<(ConceptId, u64), LabeledDataset>,
    problems: HashMap<ConceptId, Vec<PoseOptProblem>>,
    phi_h: HashMap<String, PointSetModel>,
}

impl Runner {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            catalog: Catalog::primitives(),
            loops: HashMap::new(),
            privileged_tests: HashMap::new(),
            cloud_tests: HashMap::new(),
            pools: HashMap::new(),
            problems: HashMap::new(),
            phi_h: HashMap::new(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    /// Switches the experiment id while keeping every cache.
    pub fn set_experiment(&mut self, id: ExperimentId) {
        self.cfg.experiment = id;
    }

    /// Replaces the seed list while keeping every cache.
    pub fn set_seeds(&mut self, seeds: Vec<u64>) -> Result<()> {
        if seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.cfg.seeds = seeds;
        Ok(())
    }

    fn run_seed(&self, concept: ConceptId, seed: u64) -> u64 {
        seed::derive(self.cfg.root_seed, &[seed::tag(concept.name()), seed])
    }

    /// Loop configuration behind a low-dimensional method, run to the
    /// largest budget with a checkpoint at every budget.
    pub fn loop_config(&self, concept: ConceptId, source: QuerySource, features: bool, noise: f64, seed: u64) -> ActiveLoopConfig {
        ActiveLoopConfig {
            concept,
            budget: self.cfg.max_budget(),
            batch_size: self.cfg.batch_size,
            source,
            feature_queries: features,
            noise,
            seed: self.run_seed(concept, seed),
            train: self.cfg.low_dim_train.clone(),
            query_cem: self.cfg.query_cem.clone(),
            train_at: Some(self.cfg.budgets.clone()),
        }
    }

    fn query_loop(&self, concept: ConceptId, queries: QuerySet, seed: u64) -> ActiveLoopConfig {
        match queries {
            QuerySet::Pcb => self.loop_config(concept, QuerySource::Label(pcb_strategy()), true, 0.0, seed),
            QuerySet::Random => {
                self.loop_config(concept, QuerySource::Label(QueryStrategy::new(StrategyKind::Random, false)), false, 0.0, seed)
            }
            QuerySet::Demo => self.loop_config(concept, QuerySource::Demo, true, 0.0, seed),
        }
    }

    /// The active loop for a configuration, computed once.
    pub fn active_run(&mut self, cfg: &ActiveLoopConfig) -> Result<&ActiveRun> {
        let key = serde_json::to_string(cfg)?;
        if !self.loops.contains_key(&key) {
            let run = run_active_loop(cfg, &self.catalog, &self.cfg.workspace)?;
            self.loops.insert(key.clone(), run);
        }
        Ok(&self.loops[&key])
    }

    pub fn privileged_test(&mut self, concept: ConceptId) -> Result<&LabeledDataset> {
        if !self.privileged_tests.contains_key(&concept) {
            let seed = seed::derive(self.cfg.root_seed, &[seed::tag("test-privileged"), seed::tag(concept.name())]);
            let data = build_balanced_testset(concept, self.cfg.params().test_size, &self.catalog, &self.cfg.sim(), false, seed)?;
            self.privileged_tests.insert(concept, data);
        }
        Ok(&self.privileged_tests[&concept])
    }

    pub fn cloud_test(&mut self, concept: ConceptId) -> Result<&LabeledDataset> {
        if !self.cloud_tests.contains_key(&concept) {
            let seed = seed::derive(self.cfg.root_seed, &[seed::tag("test-cloud"), seed::tag(concept.name())]);
            let data = build_balanced_testset(concept, self.cfg.cloud_test_size(), &self.catalog, &self.cfg.sim(), true, seed)?;
            self.cloud_tests.insert(concept, data);
        }
        Ok(&self.cloud_tests[&concept])
    }

    fn pool(&mut self, concept: ConceptId, seed: u64) -> Result<&LabeledDataset> {
        if !self.pools.contains_key(&(concept, seed)) {
            let s = seed::derive(self.run_seed(concept, seed), &[seed::tag("bootstrap")]);
            let data = render_pool(concept, self.cfg.params().bootstrap_size, &self.catalog, &self.cfg.sim(), s)?;
            self.pools.insert((concept, seed), data);
        }
        Ok(&self.pools[&(concept, seed)])
    }

    pub fn opt_problems(&mut self, concept: ConceptId) -> Result<&[PoseOptProblem]> {
        if !self.problems.contains_key(&concept) {
            let seed = seed::derive(self.cfg.root_seed, &[seed::tag("opt"), seed::tag(concept.name())]);
            let p = zero_value_problems(concept, self.cfg.params().opt_problems, &self.catalog, &self.cfg.sim(), &self.cfg.pose_cem, seed)?;
            self.problems.insert(concept, p);
        }
        Ok(&self.problems[&concept])
    }

    /// Low-dimensional concept of a loop after `budget` queries.
    pub fn low_dim_model(&mut self, loop_cfg: &ActiveLoopConfig, budget: usize) -> Result<crate::active_query::LowDimConcept> {
        Ok(self
            .active_run(loop_cfg)?
            .checkpoint_at(budget)
            .ok_or_else(|| Error::Config(format!("no checkpoint at {budget} queries")))?
            .clone())
    }

    /// Point-set model of a high-dimensional method after `budget` queries.
    pub fn high_dim_model(&mut self, concept: ConceptId, queries: QuerySet, bootstrap: bool, seed: u64, budget: usize) -> Result<PointSetModel> {
        let loop_cfg = self.query_loop(concept, queries, seed);
        let key = format!("{}|{budget}|{bootstrap}", serde_json::to_string(&loop_cfg)?);
        if let Some(m) = self.phi_h.get(&key) {
            return Ok(m.clone());
        }
        let train_seed = seed::derive(loop_cfg.seed, &[seed::tag("phi_h"), budget as u64]);
        let model = if bootstrap {
            let phi_l = self.low_dim_model(&loop_cfg, budget)?;
            let mut data = self.pool(concept, seed)?.clone();
            relabel(&mut data, &phi_l)?;
            log::info!("{concept}: bootstrap set has {} / {} positives", data.positives(), data.len());
            train_high_dim(&data, &self.cfg.high_dim_train, train_seed)?
        } else {
            let queries = self.active_run(&loop_cfg)?.dataset.prefix(budget);
            train_baseline_direct(&queries, &self.cfg.render, &self.cfg.high_dim_train, train_seed)?
        };
        self.phi_h.insert(key, model.clone());
        Ok(model)
    }

    /// One result value: `method` on `concept` after `budget` queries.
    /// Low-dimensional methods only support classification accuracy.
    pub fn evaluate(&mut self, concept: ConceptId, method: &str, seed: u64, budget: usize, metric: Metric) -> Result<f64> {
        match (Method::parse(method)?, metric) {
            (Method::LowDim { source, features, noise }, Metric::ClassificationAccuracy) => {
                let cfg = self.loop_config(concept, source, features, noise, seed);
                let model = self.low_dim_model(&cfg, budget)?;
                classification_accuracy(&model, self.privileged_test(concept)?)
            }
            (Method::LowDim { .. }, Metric::OptimizationAccuracy) => {
                Err(Error::Usage(format!("{method} has no point-cloud model to optimize with")))
            }
            (Method::HighDim { queries, bootstrap }, metric) => {
                let model = self.high_dim_model(concept, queries, bootstrap, seed, budget)?;
                match metric {
                    Metric::ClassificationAccuracy => classification_accuracy(&model, self.cloud_test(concept)?),
                    Metric::OptimizationAccuracy => {
                        let ws = self.cfg.workspace.clone();
                        optimization_accuracy(&model, concept, self.opt_problems(concept)?, &ws)
                    }
                }
            }
        }
    }

    /// Cells of the configured experiment as `(concept, method, seed)`.
    pub fn cells(&self) -> Vec<(ConceptId, String, u64)> {
        let methods = experiment_methods(self.cfg.experiment, &self.cfg.noise_levels);
        let mut out = Vec::new();
        for &concept in &self.cfg.concepts {
            for &seed in &self.cfg.seeds {
                for m in &methods {
                    out.push((concept, m.clone(), seed));
                }
            }
        }
        out
    }

    pub fn metric(&self) -> Metric {
        match self.cfg.experiment {
            ExperimentId::OptAccuracy => Metric::OptimizationAccuracy,
            _ => Metric::ClassificationAccuracy,
        }
    }

    /// Runs every cell of the configured experiment, handing each finished
    /// cell's rows to `sink`. A failing cell is logged and recorded with NaN
    /// values; the run continues. Returns the number of failed cells.
    pub fn run(&mut self, sink: &mut dyn RowSink) -> Result<usize> {
        let experiment = self.cfg.experiment;
        let metric = self.metric();
        let mut failures = 0;
        for (concept, method, seed) in self.cells() {
            log::info!("{} {concept} {method} seed {seed}", experiment.name());
            let values = self
                .cfg
                .sorted_budgets()
                .into_iter()
                .map(|b| self.evaluate(concept, &method, seed, b, metric).map(|v| (b, v)))
                .collect::<Result<Vec<_>>>();
            let values = values.unwrap_or_else(|e| {
                log::error!("{} {concept} {method} seed {seed} failed: {e}", experiment.name());
                failures += 1;
                self.cfg.sorted_budgets().into_iter().map(|b| (b, f64::NAN)).collect()
            });
            let rows: Vec<ResultRow> = values
                .into_iter()
                .map(|(n_queries, value)| ResultRow {
                    concept,
                    experiment,
                    method: method.clone(),
                    n_queries,
                    seed,
                    metric,
                    value,
                })
                .collect();
            sink.write_rows(&rows)?;
        }
        Ok(failures)
    }
}

/// Runs `cfg` and writes `results.csv` into its output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join("results.csv");
    let mut sink = CsvSink::create(&path)?;
    let failures = Runner::new(cfg.clone())?.run(&mut sink)?;
    if failures > 0 {
        log::warn!("{failures} cells failed; their rows hold NaN");
    }
    Ok(path)
}

/// Seed mean of one (experiment, concept, method, metric, budget) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryCell {
    pub experiment: ExperimentId,
    pub concept: ConceptId,
    pub method: String,
    pub metric: Metric,
    pub n_queries: usize,
    pub mean: f64,
    pub seeds: usize,
    pub failed: usize,
}

/// Seed-averaged means; failed (NaN) rows are counted but not averaged.
pub fn summarize(rows: &[ResultRow]) -> Result<Vec<SummaryCell>> {
    if rows.is_empty() {
        return Err(Error::Usage("no result rows to summarize".into()));
    }
    let mut groups: BTreeMap<(ExperimentId, ConceptId, String, Metric, usize), (f64, usize, usize)> = BTreeMap::new();
    for r in rows {
        let g = groups
            .entry((r.experiment, r.concept, r.method.clone(), r.metric, r.n_queries))
            .or_insert((0.0, 0, 0));
        if r.value.is_nan() {
            g.2 += 1;
        } else {
            g.0 += r.value;
            g.1 += 1;
        }
    }
    Ok(groups
        .into_iter()
        .map(|((experiment, concept, method, metric, n_queries), (sum, n, failed))| SummaryCell {
            experiment,
            concept,
            method,
            metric,
            n_queries,
            mean: if n > 0 { sum / n as f64 } else { f64::NAN },
            seeds: n,
            failed,
        })
        .collect())
}

/// Plain-text learning curves: one line per (experiment, metric, concept,
/// method), one column per budget.
pub fn render_table(cells: &[SummaryCell]) -> String {
    let mut budgets: Vec<usize> = cells.iter().map(|c| c.n_queries).collect();
    budgets.sort_unstable();
    budgets.dedup();
    let mut lines: BTreeMap<(ExperimentId, Metric, ConceptId, String), BTreeMap<usize, f64>> = BTreeMap::new();
    for c in cells {
        lines
            .entry((c.experiment, c.metric, c.concept, c.method.clone()))
            .or_default()
            .insert(c.n_queries, c.mean);
    }
    let mut out = String::new();
    let mut current = None;
    for ((exp, metric, concept, method), curve) in &lines {
        if current != Some((*exp, *metric)) {
            current = Some((*exp, *metric));
            let metric_name = match metric {
                Metric::ClassificationAccuracy => "classification_accuracy",
                Metric::OptimizationAccuracy => "optimization_accuracy",
            };
            let _ = write!(out, "\n{} / {metric_name}\n{:<14} {:<28}", exp.name(), "concept", "method");
            for b in &budgets {
                let _ = write!(out, " {b:>6}");
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<14} {:<28}", concept.name(), method);
        for b in &budgets {
            match curve.get(b) {
                Some(v) if v.is_nan() => out.push_str("   fail"),
                Some(v) => {
                    let _ = write!(out, " {v:>6.3}");
                }
                None => out.push_str("      -"),
            }
        }
        out.push('\n');
    }
    out
}
