//! Bootstrapping a point-cloud concept from a privileged one, the direct
//! training baselines, and both evaluation metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::active_query::{observe, LowDimConcept};
use crate::cem::{cem_minimize_batch, CemConfig};
use crate::dataset::{LabeledDataset, Record};
use crate::error::{Error, Result};
use crate::geometry::{quat_cost, Pose, Vec3};
use crate::nets::{train_classifier, Network, PointSetModel, TrainConfig};
use crate::oracle::{concept_value, true_label, ConceptId};
use crate::scene::render::apply_cloud_delta;
use crate::scene::{
    render_segmented_cloud, sample_scene, transform_moving_cloud, Catalog, PointCloudObservation, RenderConfig,
    SceneState, Workspace,
};
use crate::seed;

/// Rejection-sampling attempts per requested record before giving up.
const ATTEMPTS_PER_RECORD: usize = 1000;

/// Scene distribution and renderer shared by every pipeline stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub workspace: Workspace,
    pub render: RenderConfig,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.workspace.validate()?;
        self.render.validate()
    }
}

/// Classifier output thresholded at 0.5.
pub fn decide(p: f64) -> u8 {
    u8::from(p >= 0.5)
}

/// A model that scores stored records, whichever observation it reads.
pub trait StateClassifier: Sync {
    fn predict_records(&self, records: &[Record]) -> Result<Vec<f64>>;
}

impl StateClassifier for LowDimConcept {
    fn predict_records(&self, records: &[Record]) -> Result<Vec<f64>> {
        let scenes: Vec<SceneState> = records.iter().map(|r| r.scene).collect();
        self.predict_batch(&scenes)
    }
}

impl StateClassifier for PointSetModel {
    fn predict_records(&self, records: &[Record]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(records.len());
        for chunk in records.chunks(64) {
            let rows = chunk
                .iter()
                .map(|r| {
                    r.cloud
                        .as_ref()
                        .map(|c| c.rows())
                        .ok_or_else(|| Error::InvalidInput("record has no rendered cloud".into()))
                })
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&[[f64; 4]]> = rows.iter().map(|r| &r[..]).collect();
            out.extend(self.forward_batch(&refs)?);
        }
        Ok(out)
    }
}

/// Ground truth as a classifier: outputs the noiseless label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleClassifier(pub ConceptId);

impl StateClassifier for OracleClassifier {
    fn predict_records(&self, records: &[Record]) -> Result<Vec<f64>> {
        records.iter().map(|r| Ok(f64::from(true_label(self.0, &r.scene)?))).collect()
    }
}

/// Scores a cloud whose moving block is rigidly moved by each delta (see
/// [`transform_moving_cloud`]).
pub trait CloudConcept: Sync {
    fn score_deltas(&self, cloud: &PointCloudObservation, deltas: &[Pose]) -> Result<Vec<f64>>;
}

impl CloudConcept for PointSetModel {
    fn score_deltas(&self, cloud: &PointCloudObservation, deltas: &[Pose]) -> Result<Vec<f64>> {
        let tag = |pts: &[Vec3], s: f64| pts.iter().map(|p| [p.x, p.y, p.z, s]).collect::<Vec<_>>();
        let anchor_rows = tag(&cloud.anchor, PointCloudObservation::ANCHOR_SEGMENT);
        let anchor = self.pool_blocks(&[&anchor_rows])?;
        let moved: Vec<Vec<[f64; 4]>> = deltas
            .iter()
            .map(|d| tag(&transform_moving_cloud(cloud, d).moving, PointCloudObservation::MOVING_SEGMENT))
            .collect();
        let refs: Vec<&[[f64; 4]]> = moved.iter().map(|m| &m[..]).collect();
        let mut pooled = self.pool_blocks(&refs)?;
        for row in pooled.chunks_exact_mut(anchor.len()) {
            for (v, a) in row.iter_mut().zip(&anchor) {
                *v = v.max(*a);
            }
        }
        Ok(self
            .head_logits(&pooled, deltas.len())?
            .into_iter()
            .map(crate::nets::dense::sigmoid)
            .collect())
    }
}

/// Samples `n` scenes for `concept` and renders them, replacing scenes the
/// renderer rejects. Labels are left at 0.
pub fn render_pool(concept: ConceptId, n: usize, catalog: &Catalog, sim: &SimConfig, seed: u64) -> Result<LabeledDataset> {
    sim.validate()?;
    let records = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng_for(seed, &[seed::tag("pool"), i as u64]);
            for attempt in 0..ATTEMPTS_PER_RECORD {
                let scene = sample_scene(catalog, &sim.workspace, concept, &mut rng)?;
                match render_segmented_cloud(&scene, &sim.render, seed::derive(seed, &[i as u64, attempt as u64])) {
                    Ok(cloud) => {
                        return Ok(Record {
                            scene,
                            privileged: observe(&scene, None),
                            cloud: Some(cloud),
                            label: 0,
                        })
                    }
                    Err(Error::OcclusionReject { .. }) => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::Sampler {
                what: "renderable scene".into(),
                attempts: ATTEMPTS_PER_RECORD,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LabeledDataset { concept, records })
}

/// Overwrites every label with the thresholded output of `labeler`.
pub fn relabel(data: &mut LabeledDataset, labeler: &dyn StateClassifier) -> Result<()> {
    let p = labeler.predict_records(&data.records)?;
    for (r, p) in data.records.iter_mut().zip(p) {
        r.label = decide(p);
    }
    Ok(())
}

/// The bootstrap set: `n` random rendered scenes labeled by `phi_l`.
pub fn bootstrap_dataset(
    phi_l: &LowDimConcept,
    n: usize,
    catalog: &Catalog,
    sim: &SimConfig,
    seed: u64,
) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(Error::InvalidInput("bootstrap set needs at least one record".into()));
    }
    let mut pool = render_pool(phi_l.concept, n, catalog, sim, seed)?;
    relabel(&mut pool, phi_l)?;
    Ok(pool)
}

/// Exactly `n / 2` noiseless positives and `n / 2` negatives, drawn by
/// rejection from the random scene distribution, interleaved. Records are
/// rendered when `render` is set (unrenderable draws are skipped).
pub fn build_balanced_testset(
    concept: ConceptId,
    n: usize,
    catalog: &Catalog,
    sim: &SimConfig,
    render: bool,
    seed: u64,
) -> Result<LabeledDataset> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::InvalidInput(format!("balanced set size {n} must be positive and even")));
    }
    sim.validate()?;
    let half = n / 2;
    let mut rng = seed::rng_for(seed, &[seed::tag("testset")]);
    let mut by_label: [Vec<Record>; 2] = [Vec::with_capacity(half), Vec::with_capacity(half)];
    let max_attempts = ATTEMPTS_PER_RECORD * n;
    let mut attempts = 0;
    while by_label[0].len() < half || by_label[1].len() < half {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Sampler {
                what: format!("balanced {concept} test set"),
                attempts: max_attempts,
            });
        }
        let scene = sample_scene(catalog, &sim.workspace, concept, &mut rng)?;
        let label = true_label(concept, &scene)?;
        let bucket = &mut by_label[usize::from(label)];
        if bucket.len() == half {
            continue;
        }
        let cloud = if render {
            match render_segmented_cloud(&scene, &sim.render, seed::derive(seed, &[attempts as u64])) {
                Ok(c) => Some(c),
                Err(Error::OcclusionReject { .. }) => continue,
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        bucket.push(Record {
            scene,
            privileged: observe(&scene, None),
            cloud,
            label,
        });
    }
    let [neg, pos] = by_label;
    let records = pos.into_iter().zip(neg).flat_map(|(p, q)| [p, q]).collect();
    Ok(LabeledDataset { concept, records })
}

/// Fraction of records where the thresholded prediction equals the stored
/// label.
pub fn classification_accuracy(model: &dyn StateClassifier, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidInput("empty evaluation set".into()));
    }
    let p = model.predict_records(&data.records)?;
    let hits = p.iter().zip(&data.records).filter(|(p, r)| decide(**p) == r.label).count();
    Ok(hits as f64 / data.len() as f64)
}

/// Trains a fresh point-set classifier on the rendered records of `data`.
pub fn train_high_dim(data: &LabeledDataset, cfg: &TrainConfig, seed: u64) -> Result<PointSetModel> {
    let rows = data
        .records
        .iter()
        .map(|r| {
            r.cloud
                .as_ref()
                .map(|c| c.rows())
                .ok_or_else(|| Error::InvalidInput("training record has no rendered cloud".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&[[f64; 4]]> = rows.iter().map(|r| &r[..]).collect();
    let mut model = PointSetModel::phi_high(seed::derive(seed, &[seed::tag("phi_h-init")]));
    let tc = cfg.clone().with_seed(seed::derive(seed, &[seed::tag("phi_h-train")]));
    train_classifier(&mut model, &refs, &data.labels(), &tc)?;
    Ok(model)
}

/// Renders every record that lacks a cloud; records the renderer rejects
/// are dropped. Returns the number dropped.
pub fn attach_clouds(data: &mut LabeledDataset, render: &RenderConfig, seed: u64) -> Result<usize> {
    let before = data.len();
    let mut kept = Vec::with_capacity(before);
    for (i, mut r) in std::mem::take(&mut data.records).into_iter().enumerate() {
        if r.cloud.is_none() {
            match render_segmented_cloud(&r.scene, render, seed::derive(seed, &[seed::tag("attach"), i as u64])) {
                Ok(c) => r.cloud = Some(c),
                Err(Error::OcclusionReject { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        kept.push(r);
    }
    data.records = kept;
    Ok(before - data.len())
}

/// The direct baseline: a point-set classifier trained on the human-labeled
/// queries themselves, with the same training setup as the bootstrapped one.
pub fn train_baseline_direct(
    queries: &LabeledDataset,
    render: &RenderConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<PointSetModel> {
    let mut data = queries.clone();
    let dropped = attach_clouds(&mut data, render, seed)?;
    if dropped > 0 {
        log::info!("baseline: {dropped} of {} queries could not be rendered", queries.len());
    }
    if data.is_empty() {
        return Err(Error::InvalidInput("no renderable queries for the baseline".into()));
    }
    train_high_dim(&data, cfg, seed)
}

/// One pose-optimization instance. `scene` is only used to carry the
/// optimized delta back to a ground-truth state and to place the workspace
/// bounds in the camera frame; the search itself sees the cloud alone.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseOptProblem {
    pub scene: SceneState,
    pub cloud: PointCloudObservation,
    pub cem: CemConfig,
    pub lambda: f64,
}

/// Default search budget for pose optimization.
pub fn pose_cem() -> CemConfig {
    CemConfig {
        population: 64,
        elite_fraction: 0.1,
        iterations: 30,
        init_std: vec![0.15, 0.15, 0.15, 0.8, 0.8, 0.8],
        ..Default::default()
    }
}

pub const POSE_LAMBDA: f64 = 0.001;

fn delta_from_vec(v: &[f64]) -> Pose {
    Pose::from_axis_angle(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5]))
}

/// Finds a camera-frame delta for the moving block maximizing `phi_h`,
/// regularized toward no rotation, and applies it to the true state.
pub fn optimize_pose(problem: &PoseOptProblem, phi_h: &dyn CloudConcept, workspace: &Workspace) -> Result<(Pose, SceneState)> {
    let cam = problem.scene.camera;
    let centroid = problem.cloud.moving_centroid();
    let lambda = problem.lambda;
    let identity = nalgebra::UnitQuaternion::identity();
    let result = cem_minimize_batch(
        |pop, n| {
            let deltas: Vec<Pose> = pop.chunks_exact(6).map(delta_from_vec).collect();
            let scores = match phi_h.score_deltas(&problem.cloud, &deltas) {
                Ok(s) => s,
                Err(_) => return vec![f64::NAN; n],
            };
            deltas
                .iter()
                .zip(scores)
                .map(|(d, p)| {
                    let c = cam.transform_point(&(centroid + d.position));
                    let out = (c.x.abs() - workspace.xy_half).max(0.0)
                        + (c.y.abs() - workspace.xy_half).max(0.0)
                        + (workspace.table_height - c.z).max(0.0)
                        + (c.z - workspace.z_max).max(0.0);
                    let penalty = if out > 0.0 { 10.0 + out } else { 0.0 };
                    1.0 - p + quat_cost(d.orientation(), &identity, lambda) + penalty
                })
                .collect()
        },
        &[0.0; 6],
        &problem.cem,
    )?;
    let delta = delta_from_vec(&result.best_x);
    Ok((delta, apply_cloud_delta(&problem.scene, &centroid, &delta)))
}

/// Rendered scenes whose true concept value is exactly 0.
pub fn zero_value_problems(
    concept: ConceptId,
    n: usize,
    catalog: &Catalog,
    sim: &SimConfig,
    cem: &CemConfig,
    seed: u64,
) -> Result<Vec<PoseOptProblem>> {
    sim.validate()?;
    let mut rng = seed::rng_for(seed, &[seed::tag("opt-problems")]);
    let mut out = Vec::with_capacity(n);
    let max_attempts = ATTEMPTS_PER_RECORD * n.max(1);
    let mut attempts = 0;
    while out.len() < n {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Sampler {
                what: format!("zero-valued {concept} scene"),
                attempts: max_attempts,
            });
        }
        let scene = sample_scene(catalog, &sim.workspace, concept, &mut rng)?;
        if concept_value(concept, &scene)? > 0.0 {
            continue;
        }
        match render_segmented_cloud(&scene, &sim.render, seed::derive(seed, &[attempts as u64])) {
            Ok(cloud) => out.push(PoseOptProblem {
                scene,
                cloud,
                cem: CemConfig {
                    seed: seed::derive(seed, &[seed::tag("opt-cem"), out.len() as u64]),
                    ..cem.clone()
                },
                lambda: POSE_LAMBDA,
            }),
            Err(Error::OcclusionReject { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Fraction of problems whose optimized state is a true positive of
/// `concept`. The ground truth is consulted only after each search.
pub fn optimization_accuracy(
    phi_h: &dyn CloudConcept,
    concept: ConceptId,
    problems: &[PoseOptProblem],
    workspace: &Workspace,
) -> Result<f64> {
    if problems.is_empty() {
        return Err(Error::InvalidInput("no optimization problems".into()));
    }
    let optimized = problems
        .par_iter()
        .map(|p| optimize_pose(p, phi_h, workspace).map(|(_, s)| s))
        .collect::<Result<Vec<_>>>()?;
    let mut hits = 0;
    for s in &optimized {
        hits += usize::from(true_label(concept, s)?);
    }
    Ok(hits as f64 / problems.len() as f64)
}
