//! Query synthesis and the batched active-learning loop that trains the
//! privileged-feature concept from simulated-human answers.

use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cem::{cem_minimize_batch, CemConfig};
use crate::dataset::{LabeledDataset, Record};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};
use crate::nets::{train_classifier, MlpModel, ModelFile, Network, TrainConfig};
use crate::oracle::{ConceptId, FeatureAnswers, SimulatedHuman};
use crate::scene::{
    apply_feature_mask, privileged_features, sample_scene, Catalog, PrivilegedObservation, SceneState, Workspace,
};
use crate::seed;

/// Position noise (m) of an augmented query.
pub const AUGMENT_POSITION_STD: f64 = 0.03;
/// Axis-angle noise (rad) of an augmented query.
pub const AUGMENT_ROTATION_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Random,
    Confusion,
    Confrand,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [StrategyKind::Random, StrategyKind::Confusion, StrategyKind::Confrand];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Random => "random",
            StrategyKind::Confusion => "confusion",
            StrategyKind::Confrand => "confrand",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryStrategy {
    pub kind: StrategyKind,
    pub augment: bool,
    /// Probability of perturbing a stored rarer-class example instead.
    pub exploit: f64,
    /// Probability that confrand picks the confusion branch.
    pub coin: f64,
}

impl QueryStrategy {
    pub fn new(kind: StrategyKind, augment: bool) -> Self {
        Self {
            kind,
            augment,
            exploit: 0.5,
            coin: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.exploit) || !(0.0..=1.0).contains(&self.coin) {
            return Err(Error::Config(format!("strategy probabilities outside [0, 1]: {self:?}")));
        }
        Ok(())
    }

    /// Whether synthesis can use a trained model.
    pub fn uses_model(&self) -> bool {
        match self.kind {
            StrategyKind::Random => false,
            StrategyKind::Confusion => true,
            StrategyKind::Confrand => self.coin > 0.0,
        }
    }

    /// Short label such as `confrand+augment`.
    pub fn label(&self) -> String {
        if self.augment {
            format!("{}+augment", self.kind.name())
        } else {
            self.kind.name().to_string()
        }
    }
}

/// Where queries come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuerySource {
    /// The system synthesizes states and the human labels them.
    Label(QueryStrategy),
    /// The human builds states for alternating desired labels 1, 0, 1, ...
    Demo,
}

impl QuerySource {
    pub fn label(&self) -> String {
        match self {
            QuerySource::Label(s) => s.label(),
            QuerySource::Demo => "demo".into(),
        }
    }
}

/// Everything labeled so far, split by (human-given) label.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryMemory {
    positives: Vec<SceneState>,
    negatives: Vec<SceneState>,
}

impl QueryMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, scene: SceneState, label: u8) {
        if label == 1 {
            self.positives.push(scene);
        } else {
            self.negatives.push(scene);
        }
    }

    pub fn positives(&self) -> &[SceneState] {
        &self.positives
    }

    pub fn negatives(&self) -> &[SceneState] {
        &self.negatives
    }

    pub fn counts(&self) -> (usize, usize) {
        (self.positives.len(), self.negatives.len())
    }

    /// The label with fewer stored examples; ties go to positives.
    pub fn rarer_label(&self) -> u8 {
        u8::from(self.positives.len() <= self.negatives.len())
    }
}

/// A privileged-feature concept: the trained network plus the feature
/// answers whose mask its inputs were built with.
#[derive(Debug, Clone, PartialEq)]
pub struct LowDimConcept {
    pub concept: ConceptId,
    pub answers: Option<FeatureAnswers>,
    pub model: MlpModel,
}

#[derive(Serialize, Deserialize)]
struct LowDimFile {
    concept: ConceptId,
    feature_answers: Option<FeatureAnswers>,
    model: ModelFile,
}

impl LowDimConcept {
    /// The (masked) privileged observation this model consumes.
    pub fn observe(&self, scene: &SceneState) -> PrivilegedObservation {
        observe(scene, self.answers.as_ref())
    }

    pub fn predict(&self, scene: &SceneState) -> Result<f64> {
        self.model.forward(&self.observe(scene).features)
    }

    pub fn predict_batch(&self, scenes: &[SceneState]) -> Result<Vec<f64>> {
        let obs: Vec<_> = scenes.iter().map(|s| self.observe(s)).collect();
        let refs: Vec<&[f64]> = obs.iter().map(|o| &o.features[..]).collect();
        self.model.forward_batch(&refs)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&LowDimFile {
            concept: self.concept,
            feature_answers: self.answers,
            model: self.model.to_file(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: LowDimFile = serde_json::from_str(s)?;
        let model = MlpModel::from_file(&f.model)?;
        if model.input_dim() != crate::scene::PRIVILEGED_DIM {
            return Err(Error::Format(format!("privileged model expects {} inputs", model.input_dim())));
        }
        Ok(Self {
            concept: f.concept,
            answers: f.feature_answers,
            model,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn observe(scene: &SceneState, answers: Option<&FeatureAnswers>) -> PrivilegedObservation {
    let obs = privileged_features(scene);
    match answers {
        Some(a) => apply_feature_mask(&obs, a),
        None => obs,
    }
}

/// Shared inputs of query synthesis.
#[derive(Debug, Clone)]
pub struct QueryContext<'a> {
    pub concept: ConceptId,
    pub catalog: &'a Catalog,
    pub workspace: &'a Workspace,
    /// Budget of the confusion search; the seed is drawn per query.
    pub cem: CemConfig,
}

/// Default search budget for confusion queries.
pub fn confusion_cem() -> CemConfig {
    CemConfig {
        population: 32,
        elite_fraction: 0.125,
        iterations: 10,
        init_std: vec![0.15, 0.15, 0.15, 1.0, 1.0, 1.0],
        stop_below: Some(0.01),
        ..Default::default()
    }
}

/// Distance by which `p` leaves the moving object's workspace box.
fn workspace_violation(ws: &Workspace, half_height: f64, p: &Vec3) -> f64 {
    let [lo, hi] = ws.moving_z_range(half_height);
    let out = |v: f64, a: f64, b: f64| (a - v).max(0.0) + (v - b).max(0.0);
    out(p.x, -ws.xy_half, ws.xy_half) + out(p.y, -ws.xy_half, ws.xy_half) + out(p.z, lo, hi)
}

fn pose_from_vec(v: &[f64]) -> Pose {
    Pose::from_axis_angle(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5]))
}

/// State near the model's decision boundary: CEM over the moving object's
/// pose (translation + axis-angle) in a random scene, minimizing
/// `|phi(o_l) - 0.5|` plus a workspace penalty.
pub fn confusion_query<R: rand::Rng>(model: &LowDimConcept, ctx: &QueryContext, rng: &mut R) -> Result<SceneState> {
    let base = sample_scene(ctx.catalog, ctx.workspace, ctx.concept, rng)?;
    let start = base.moving.pose;
    let r = start.rotation_vector();
    let init = [start.position.x, start.position.y, start.position.z, r.x, r.y, r.z];
    let cfg = CemConfig {
        seed: rng.random(),
        ..ctx.cem.clone()
    };
    let half_height = base.moving.spec.half_extents.half().z;
    let result = cem_minimize_batch(
        |pop, n| {
            let scenes: Vec<SceneState> = pop.chunks_exact(6).map(|v| base.with_moving_pose(pose_from_vec(v))).collect();
            match model.predict_batch(&scenes) {
                Ok(p) => p
                    .iter()
                    .zip(&scenes)
                    .map(|(p, s)| {
                        let out = workspace_violation(ctx.workspace, half_height, &s.moving.pose.position);
                        (p - 0.5).abs() + if out > 0.0 { 10.0 + out } else { 0.0 }
                    })
                    .collect(),
                Err(_) => vec![f64::NAN; n],
            }
        },
        &init,
        &cfg,
    )?;
    Ok(base.with_moving_pose(pose_from_vec(&result.best_x)))
}

/// Perturbs the moving object of `scene` by Gaussian position and
/// axis-angle noise.
pub fn perturb<R: rand::Rng>(scene: &SceneState, rng: &mut R) -> SceneState {
    let pos = Normal::new(0.0, AUGMENT_POSITION_STD).unwrap();
    let rot = Normal::new(0.0, AUGMENT_ROTATION_STD).unwrap();
    let dp = Vec3::new(pos.sample(rng), pos.sample(rng), pos.sample(rng));
    let dr = Vec3::new(rot.sample(rng), rot.sample(rng), rot.sample(rng));
    let m = scene.moving.pose;
    let noise = Pose::from_axis_angle(Vec3::zeros(), dr);
    scene.with_moving_pose(Pose::new(m.position + dp, *noise.orientation() * m.orientation()))
}

/// One synthesized label query.
///
/// The exploit and confrand coins are drawn for every strategy so that
/// strategies differing only in those probabilities share random streams.
pub fn synthesize_query<R: rand::Rng>(
    strategy: &QueryStrategy,
    model: Option<&LowDimConcept>,
    memory: &QueryMemory,
    ctx: &QueryContext,
    rng: &mut R,
) -> Result<SceneState> {
    strategy.validate()?;
    let exploit_draw: f64 = rng.random();
    let coin_draw: f64 = rng.random();
    if strategy.augment && exploit_draw < strategy.exploit {
        let pool = if memory.rarer_label() == 1 { memory.positives() } else { memory.negatives() };
        if !pool.is_empty() {
            let pick = pool[rng.random_range(0..pool.len())];
            return Ok(perturb(&pick, rng));
        }
    }
    let confusion = match strategy.kind {
        StrategyKind::Random => false,
        StrategyKind::Confusion => true,
        StrategyKind::Confrand => coin_draw < strategy.coin,
    };
    match (confusion, model) {
        (true, Some(m)) => confusion_query(m, ctx, rng),
        // cold start: no model yet
        _ => sample_scene(ctx.catalog, ctx.workspace, ctx.concept, rng),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveLoopConfig {
    pub concept: ConceptId,
    pub budget: usize,
    pub batch_size: usize,
    pub source: QuerySource,
    pub feature_queries: bool,
    pub noise: f64,
    pub seed: u64,
    pub train: TrainConfig,
    pub query_cem: CemConfig,
    /// Query counts after which to train a checkpoint. `None` trains every
    /// round; rounds whose successor needs a model for synthesis and the
    /// last round are always trained.
    pub train_at: Option<Vec<usize>>,
}

impl ActiveLoopConfig {
    pub fn new(concept: ConceptId, budget: usize, source: QuerySource, feature_queries: bool, seed: u64) -> Self {
        Self {
            concept,
            budget,
            batch_size: 100,
            source,
            feature_queries,
            noise: 0.0,
            seed,
            train: TrainConfig::low_dim(),
            query_cem: confusion_cem(),
            train_at: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.budget == 0 || self.budget % self.batch_size != 0 {
            return Err(Error::Config(format!(
                "budget {} must be a positive multiple of the batch size {}",
                self.budget, self.batch_size
            )));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::Config(format!("noise level {} outside [0, 1]", self.noise)));
        }
        if let QuerySource::Label(s) = &self.source {
            s.validate()?;
        }
        self.train.validate()
    }

    fn needs_model(&self) -> bool {
        matches!(self.source, QuerySource::Label(s) if s.uses_model())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub round: usize,
    pub n_queries: usize,
    pub model: LowDimConcept,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveRun {
    pub dataset: LabeledDataset,
    pub checkpoints: Vec<Checkpoint>,
    pub answers: Option<FeatureAnswers>,
}

impl ActiveRun {
    pub fn final_model(&self) -> &LowDimConcept {
        &self.checkpoints.last().expect("a run always trains its last round").model
    }

    pub fn checkpoint_at(&self, n_queries: usize) -> Option<&LowDimConcept> {
        self.checkpoints.iter().find(|c| c.n_queries == n_queries).map(|c| &c.model)
    }
}

/// Trains a fresh privileged-feature classifier on `data`.
pub fn train_low_dim(
    data: &LabeledDataset,
    answers: Option<FeatureAnswers>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<LowDimConcept> {
    let mut model = MlpModel::phi_low(seed::derive(seed, &[seed::tag("phi_l-init")]));
    let tc = cfg.clone().with_seed(seed::derive(seed, &[seed::tag("phi_l-train")]));
    train_classifier(&mut model, &data.privileged_inputs(), &data.labels(), &tc)?;
    Ok(LowDimConcept {
        concept: data.concept,
        answers,
        model,
    })
}

/// Runs the loop with a simulated human built from the config.
pub fn run_active_loop(cfg: &ActiveLoopConfig, catalog: &Catalog, workspace: &Workspace) -> Result<ActiveRun> {
    cfg.validate()?;
    let mut human = SimulatedHuman::new(cfg.concept, cfg.noise, seed::derive(cfg.seed, &[seed::tag("human")]))?;
    run_active_loop_with(cfg, &mut human, catalog, workspace)
}

/// Batched active learning: each round synthesizes `batch_size` queries,
/// has `human` label them and retrains the classifier from scratch on
/// everything labeled so far.
pub fn run_active_loop_with(
    cfg: &ActiveLoopConfig,
    human: &mut SimulatedHuman,
    catalog: &Catalog,
    workspace: &Workspace,
) -> Result<ActiveRun> {
    cfg.validate()?;
    if human.concept != cfg.concept {
        return Err(Error::Config(format!("human answers for {}, loop is for {}", human.concept, cfg.concept)));
    }
    let answers = cfg.feature_queries.then(|| human.answer_feature_queries());
    let ctx = QueryContext {
        concept: cfg.concept,
        catalog,
        workspace,
        cem: cfg.query_cem.clone(),
    };
    let mut rng = seed::rng_for(cfg.seed, &[seed::tag("queries")]);
    let mut memory = QueryMemory::new();
    let mut dataset = LabeledDataset::new(cfg.concept);
    let mut checkpoints: Vec<Checkpoint> = Vec::new();
    let rounds = cfg.budget / cfg.batch_size;

    for round in 0..rounds {
        let current = if cfg.needs_model() { checkpoints.last().map(|c| &c.model) } else { None };
        for _ in 0..cfg.batch_size {
            let (scene, label) = match &cfg.source {
                QuerySource::Demo => {
                    let desired = u8::from(dataset.len() % 2 == 0);
                    human.answer_demo_query(catalog, workspace, desired, &mut rng)?
                }
                QuerySource::Label(strategy) => {
                    let scene = synthesize_query(strategy, current, &memory, &ctx, &mut rng)?;
                    let label = human.answer_label_query(&scene)?;
                    (scene, label)
                }
            };
            memory.record(scene, label);
            dataset.records.push(Record {
                scene,
                privileged: observe(&scene, answers.as_ref()),
                cloud: None,
                label,
            });
        }
        let n_queries = dataset.len();
        let last = round + 1 == rounds;
        let wanted = cfg.train_at.as_ref().is_none_or(|b| b.contains(&n_queries));
        if last || wanted || cfg.needs_model() {
            let model = train_low_dim(&dataset, answers, &cfg.train, seed::derive(cfg.seed, &[seed::tag("round"), round as u64]))?;
            log::debug!("{} {} round {round}: {n_queries} queries", cfg.concept, cfg.source.label());
            checkpoints.push(Checkpoint { round, n_queries, model });
        }
    }
    Ok(ActiveRun {
        dataset,
        checkpoints,
        answers,
    })
}
