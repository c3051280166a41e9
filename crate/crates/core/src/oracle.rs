//! Ground-truth spatial concepts and the simulated human that answers label,
//! demonstration and feature queries about them.

use std::fmt;
use std::str::FromStr;

use nalgebra::UnitQuaternion;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angle_between, projected_aabb_intersection, projected_rect, Pose, Vec3};
use crate::scene::{random_orientation, sample_scene, Catalog, ObjectSpec, SceneState, Workspace};
use crate::seed::Rng;

/// Attempts before a demo sampler gives up.
pub const DEMO_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptId {
    Above,
    AboveBb,
    Near,
    Upright,
    AlignedHoriz,
    AlignedVert,
    Forward,
    Front,
    Top,
}

impl ConceptId {
    pub const ALL: [ConceptId; 9] = [
        ConceptId::Above,
        ConceptId::AboveBb,
        ConceptId::Near,
        ConceptId::Upright,
        ConceptId::AlignedHoriz,
        ConceptId::AlignedVert,
        ConceptId::Forward,
        ConceptId::Front,
        ConceptId::Top,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConceptId::Above => "above",
            ConceptId::AboveBb => "above_bb",
            ConceptId::Near => "near",
            ConceptId::Upright => "upright",
            ConceptId::AlignedHoriz => "aligned_horiz",
            ConceptId::AlignedVert => "aligned_vert",
            ConceptId::Forward => "forward",
            ConceptId::Front => "front",
            ConceptId::Top => "top",
        }
    }

    /// Ramp cutoff: degrees for angular concepts, meters for `near`, `None`
    /// for the area-based `above_bb`.
    pub fn cutoff(self) -> Option<f64> {
        match self {
            ConceptId::Near => Some(0.3),
            ConceptId::Forward => Some(90.0),
            ConceptId::AboveBb => None,
            _ => Some(45.0),
        }
    }

    /// Whether `object` may take part in a scene for this concept.
    pub fn applicable(self, object: &ObjectSpec) -> bool {
        let a = &object.affordances;
        match self {
            ConceptId::Above | ConceptId::AboveBb | ConceptId::Near => true,
            ConceptId::Upright | ConceptId::Top => a.has_up,
            ConceptId::AlignedHoriz => a.horizontally_alignable,
            ConceptId::AlignedVert => a.vertically_alignable,
            ConceptId::Forward | ConceptId::Front => a.has_front,
        }
    }

    /// Concepts whose applicability depends on object shape.
    pub fn involves_affordance(self) -> bool {
        !matches!(self, ConceptId::Above | ConceptId::AboveBb | ConceptId::Near)
    }
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConceptId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ConceptId::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown concept {s:?}")))
    }
}

/// `clamp(1 - x / cutoff, 0, 1)`.
pub fn ramp(x: f64, cutoff: f64) -> f64 {
    (1.0 - x / cutoff).clamp(0.0, 1.0)
}

fn check_applicable(concept: ConceptId, scene: &SceneState) -> Result<()> {
    for obj in [&scene.anchor.spec, &scene.moving.spec] {
        if !concept.applicable(obj) {
            return Err(Error::Applicability {
                concept: concept.to_string(),
                shape: obj.shape.to_string(),
            });
        }
    }
    Ok(())
}

/// Continuous ground-truth concept value in `[0, 1]`.
pub fn concept_value(concept: ConceptId, scene: &SceneState) -> Result<f64> {
    check_applicable(concept, scene)?;
    let a = &scene.anchor.pose;
    let m = &scene.moving.pose;
    let diff = m.position - a.position;
    let angular = |u: &Vec3, v: &Vec3| -> Result<f64> {
        Ok(ramp(angle_between(u, v)?, concept.cutoff().expect("angular cutoff")))
    };
    match concept {
        ConceptId::Above => angular(&diff, &Vec3::z()),
        ConceptId::AboveBb => {
            if m.position.z <= a.position.z {
                return Ok(0.0);
            }
            let (ea, em) = (&scene.anchor.spec.half_extents, &scene.moving.spec.half_extents);
            let moving_area = projected_rect(m, em).area();
            Ok((projected_aabb_intersection(a, ea, m, em) / moving_area).clamp(0.0, 1.0))
        }
        ConceptId::Near => Ok(ramp(diff.norm(), 0.3)),
        ConceptId::Upright => angular(&m.z_axis(), &Vec3::z()),
        ConceptId::AlignedHoriz => angular(&a.x_axis(), &m.x_axis()),
        ConceptId::AlignedVert => angular(&a.z_axis(), &m.z_axis()),
        ConceptId::Forward | ConceptId::Front => angular(&a.x_axis(), &diff),
        ConceptId::Top => angular(&a.z_axis(), &diff),
    }
}

/// 1 inside the cutoff (value > 0), else 0.
pub fn binarize(value: f64) -> u8 {
    u8::from(value > 0.0)
}

/// Noiseless binary label of `scene`.
pub fn true_label(concept: ConceptId, scene: &SceneState) -> Result<u8> {
    concept_value(concept, scene).map(binarize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameAnswer {
    Absolute,
    Relative,
    /// Both frames matter; keeps every pose block.
    Both,
}

/// Answers to the three feature questions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureAnswers {
    /// F1: does the concept concern a single object?
    pub single_object: bool,
    /// F2: absolute poses or the relative one?
    pub frame: FrameAnswer,
    /// F3: do the object sizes matter?
    pub sizes_matter: bool,
}

/// Answers derived from each concept's dependency set.
pub fn answer_feature_queries(concept: ConceptId) -> FeatureAnswers {
    FeatureAnswers {
        single_object: concept == ConceptId::Upright,
        frame: if matches!(concept, ConceptId::Above | ConceptId::Upright) {
            FrameAnswer::Absolute
        } else {
            FrameAnswer::Relative
        },
        sizes_matter: concept == ConceptId::AboveBb,
    }
}

/// A labeler that knows the true concept and flips each label with
/// probability `noise_level`.
#[derive(Debug, Clone)]
pub struct SimulatedHuman {
    pub concept: ConceptId,
    pub noise_level: f64,
    rng: Rng,
}

impl SimulatedHuman {
    pub fn new(concept: ConceptId, noise_level: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&noise_level) {
            return Err(Error::InvalidInput(format!("noise level {noise_level} outside [0, 1]")));
        }
        Ok(Self {
            concept,
            noise_level,
            rng: crate::seed::rng(seed),
        })
    }

    /// Passes a true label through the flip channel (one RNG draw).
    fn noisy(&mut self, label: u8) -> u8 {
        if self.rng.random::<f64>() < self.noise_level {
            1 - label
        } else {
            label
        }
    }

    pub fn answer_label_query(&mut self, scene: &SceneState) -> Result<u8> {
        let label = true_label(self.concept, scene)?;
        Ok(self.noisy(label))
    }

    /// Builds a scene whose noiseless label is `desired` (positives
    /// constructively, negatives by rejection) and labels it.
    pub fn answer_demo_query<R: rand::Rng>(
        &mut self,
        catalog: &Catalog,
        workspace: &Workspace,
        desired: u8,
        rng: &mut R,
    ) -> Result<(SceneState, u8)> {
        let scene = demo_scene(self.concept, catalog, workspace, desired, rng)?;
        Ok((scene, self.noisy(desired)))
    }

    pub fn answer_feature_queries(&self) -> FeatureAnswers {
        answer_feature_queries(self.concept)
    }
}

/// Unit vector within `half_angle_deg` of `axis`, uniform on the spherical
/// cap (the boundary itself is excluded).
pub fn sample_cone<R: rand::Rng>(axis: &Vec3, half_angle_deg: f64, rng: &mut R) -> Vec3 {
    let axis = axis.normalize();
    let cos_max = half_angle_deg.to_radians().cos();
    // cos in (cos_max, 1]
    let cos_t = 1.0 - rng.random::<f64>() * (1.0 - cos_max);
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let phi = rng.random::<f64>() * std::f64::consts::TAU;
    let helper = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = axis.cross(&helper).normalize();
    let v = axis.cross(&u);
    axis * cos_t + (u * phi.cos() + v * phi.sin()) * sin_t
}

/// Rotation by an angle uniform in `[0, max_deg)` about a random axis.
fn small_rotation<R: rand::Rng>(max_deg: f64, rng: &mut R) -> UnitQuaternion<f64> {
    let axis = sample_cone(&Vec3::z(), 180.0, rng);
    let angle = rng.random::<f64>() * max_deg.to_radians();
    UnitQuaternion::from_scaled_axis(axis * angle)
}

fn constructive_positive<R: rand::Rng>(
    concept: ConceptId,
    base: &SceneState,
    workspace: &Workspace,
    rng: &mut R,
) -> SceneState {
    let a = base.anchor.pose;
    let m = base.moving.pose;
    let offset = |axis: Vec3, half_angle: f64, rng: &mut R| {
        let dist = rng.random_range(0.05..0.6);
        a.position + sample_cone(&axis, half_angle, rng) * dist
    };
    let moved = match concept {
        ConceptId::Near => {
            let r = 0.3 * rng.random::<f64>().cbrt();
            Pose::new(a.position + sample_cone(&Vec3::z(), 180.0, rng) * r, *m.orientation())
        }
        ConceptId::Above => Pose::new(offset(Vec3::z(), 45.0, rng), *m.orientation()),
        ConceptId::Top => Pose::new(offset(a.z_axis(), 45.0, rng), *m.orientation()),
        ConceptId::Front => Pose::new(offset(a.x_axis(), 45.0, rng), *m.orientation()),
        ConceptId::Forward => Pose::new(offset(a.x_axis(), 90.0, rng), *m.orientation()),
        ConceptId::AboveBb => {
            let rect = projected_rect(&a, &base.anchor.spec.half_extents);
            let x = rng.random_range(rect.min[0]..rect.max[0]);
            let y = rng.random_range(rect.min[1]..rect.max[1]);
            let z = rng.random_range(a.position.z..=workspace.z_max);
            Pose::new(Vec3::new(x, y, z), random_orientation(rng))
        }
        ConceptId::Upright => {
            let yaw = UnitQuaternion::from_scaled_axis(Vec3::z() * rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
            let tilt_axis = sample_cone(&Vec3::z(), 90.0, rng);
            let tilt_axis = Vec3::new(tilt_axis.x, tilt_axis.y, 0.0);
            let tilt = if tilt_axis.norm() > 1e-9 {
                let cos_t = 1.0 - rng.random::<f64>() * (1.0 - 45f64.to_radians().cos());
                UnitQuaternion::from_scaled_axis(tilt_axis.normalize() * cos_t.acos())
            } else {
                UnitQuaternion::identity()
            };
            Pose::new(m.position, tilt * yaw)
        }
        ConceptId::AlignedHoriz | ConceptId::AlignedVert => {
            Pose::new(m.position, a.orientation() * small_rotation(45.0, rng))
        }
    };
    base.with_moving_pose(moved)
}

/// Scene with noiseless label `desired` for `concept`.
pub fn demo_scene<R: rand::Rng>(
    concept: ConceptId,
    catalog: &Catalog,
    workspace: &Workspace,
    desired: u8,
    rng: &mut R,
) -> Result<SceneState> {
    for _ in 0..DEMO_ATTEMPTS {
        let base = sample_scene(catalog, workspace, concept, rng)?;
        let scene = if desired == 1 {
            constructive_positive(concept, &base, workspace, rng)
        } else {
            base
        };
        if !workspace.contains_moving(&scene.moving.spec, &scene.moving.pose.position) {
            continue;
        }
        match true_label(concept, &scene) {
            Ok(l) if l == desired => return Ok(scene),
            Ok(_) | Err(Error::Degenerate(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Err(Error::Sampler {
        what: format!("{concept} scene with label {desired}"),
        attempts: DEMO_ATTEMPTS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{ObjectSpec, PlacedObject, ShapeId};
    use crate::seed;

    fn scene(anchor: Pose, moving: Pose, shape: ShapeId) -> SceneState {
        SceneState {
            anchor: PlacedObject { spec: ObjectSpec::of(shape), pose: anchor },
            moving: PlacedObject { spec: ObjectSpec::of(shape), pose: moving },
            camera: Pose::identity(),
            table_height: 0.0,
        }
    }

    fn at(x: f64, y: f64, z: f64) -> Pose {
        Pose::from_translation(Vec3::new(x, y, z))
    }

    #[test]
    fn value_examples() {
        let s = scene(at(0.0, 0.0, 0.0), at(0.4, 0.0, 0.0), ShapeId::Box);
        assert_eq!(concept_value(ConceptId::Near, &s).unwrap(), 0.0);
        let s = scene(at(0.0, 0.0, 0.0), at(0.15, 0.0, 0.0), ShapeId::Box);
        assert!((concept_value(ConceptId::Near, &s).unwrap() - 0.5).abs() < 1e-12);
        let s = scene(at(0.0, 0.0, 0.0), at(0.0, 0.0, 0.3), ShapeId::Box);
        assert_eq!(concept_value(ConceptId::Above, &s).unwrap(), 1.0);
        // coincident footprints, moving center below anchor center
        let s = scene(at(0.0, 0.0, 0.2), at(0.0, 0.0, 0.1), ShapeId::Box);
        assert_eq!(concept_value(ConceptId::AboveBb, &s).unwrap(), 0.0);
        let s = scene(at(0.0, 0.0, 0.1), at(0.0, 0.0, 0.2), ShapeId::Box);
        assert_eq!(concept_value(ConceptId::AboveBb, &s).unwrap(), 1.0);
    }

    #[test]
    fn binarize_boundary() {
        assert_eq!(binarize(0.7), 1);
        assert_eq!(binarize(0.0), 0);
        let height = 0.3;
        for (deg, want) in [(44.9, 1), (45.1, 0)] {
            let r = height * f64::tan(f64::to_radians(deg));
            let s = scene(at(0.0, 0.0, 0.0), at(r, 0.0, height), ShapeId::Box);
            assert_eq!(true_label(ConceptId::Above, &s).unwrap(), want, "{deg}");
        }
    }

    #[test]
    fn applicability_is_checked() {
        let s = scene(at(0.0, 0.0, 0.0), at(0.1, 0.0, 0.0), ShapeId::Box);
        assert!(matches!(concept_value(ConceptId::Front, &s), Err(Error::Applicability { .. })));
        assert!(concept_value(ConceptId::AlignedVert, &s).is_ok());
    }

    #[test]
    fn feature_table() {
        let up = answer_feature_queries(ConceptId::Upright);
        assert!(up.single_object);
        assert_eq!(up.frame, FrameAnswer::Absolute);
        assert!(answer_feature_queries(ConceptId::AboveBb).sizes_matter);
        let near = answer_feature_queries(ConceptId::Near);
        assert_eq!(near.frame, FrameAnswer::Relative);
        assert!(!near.sizes_matter && !near.single_object);
        assert_eq!(answer_feature_queries(ConceptId::Above).frame, FrameAnswer::Absolute);
    }

    #[test]
    fn noise_channel_rates() {
        let catalog = Catalog::primitives();
        let ws = Workspace::default();
        let mut scene_rng = seed::rng(3);
        let scenes: Vec<_> = (0..10_000)
            .map(|_| sample_scene(&catalog, &ws, ConceptId::Near, &mut scene_rng).unwrap())
            .collect();
        for (noise, lo, hi) in [(0.0, 1.0, 1.0), (0.1, 0.88, 0.92), (0.5, 0.47, 0.53)] {
            let mut human = SimulatedHuman::new(ConceptId::Near, noise, 17).unwrap();
            let agree = scenes
                .iter()
                .filter(|s| human.answer_label_query(s).unwrap() == true_label(ConceptId::Near, s).unwrap())
                .count() as f64
                / scenes.len() as f64;
            assert!((lo..=hi).contains(&agree), "noise {noise}: {agree}");
        }
        assert!(SimulatedHuman::new(ConceptId::Near, 1.5, 0).is_err());
    }

    #[test]
    fn demo_queries_hit_requested_label() {
        let catalog = Catalog::primitives();
        let ws = Workspace::default();
        let mut rng = seed::rng(21);
        for concept in ConceptId::ALL {
            let mut human = SimulatedHuman::new(concept, 0.0, 1).unwrap();
            let mut positives = 0;
            for i in 0..200 {
                let desired = (i % 2 == 0) as u8;
                let (s, label) = human.answer_demo_query(&catalog, &ws, desired, &mut rng).unwrap();
                assert_eq!(label, desired);
                assert_eq!(true_label(concept, &s).unwrap(), desired, "{concept}");
                assert!(ws.contains_moving(&s.moving.spec, &s.moving.pose.position));
                positives += label as usize;
            }
            assert_eq!(positives, 100);
        }
    }

    #[test]
    fn demo_examples() {
        let catalog = Catalog::primitives();
        let ws = Workspace::default();
        let mut rng = seed::rng(5);
        let s = demo_scene(ConceptId::Above, &catalog, &ws, 1, &mut rng).unwrap();
        let d = s.moving.pose.position - s.anchor.pose.position;
        assert!(angle_between(&d, &Vec3::z()).unwrap() < 45.0);
        let s = demo_scene(ConceptId::Near, &catalog, &ws, 0, &mut rng).unwrap();
        assert!((s.moving.pose.position - s.anchor.pose.position).norm() > 0.3);
    }
}
