//! Procedural scene synthesis: object pairs on a table seen by a randomized
//! camera, plus the two observation transforms (privileged features and
//! segmented point clouds).

pub mod catalog;
pub mod features;
pub mod render;

use std::f64::consts::PI;

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use catalog::{Affordances, Catalog, ObjectSpec, ShapeId};
pub use features::{apply_feature_mask, privileged_features, FeatureGroup, PrivilegedObservation, PRIVILEGED_DIM};
pub use render::{render_segmented_cloud, transform_moving_cloud, PointCloudObservation, RenderConfig};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};
use crate::oracle::ConceptId;

/// Table and camera sampling ranges (meters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Workspace {
    pub table_height: f64,
    /// Object positions are uniform in `[-xy_half, xy_half]²`.
    pub xy_half: f64,
    /// Upper bound of the moving object's center height above the table.
    pub z_max: f64,
    pub camera_radius: [f64; 2],
    pub camera_height: [f64; 2],
    pub look_at: [f64; 3],
}

impl Default for Workspace {
    fn default() -> Self {
        Self {
            table_height: 0.0,
            xy_half: 0.35,
            z_max: 0.35,
            camera_radius: [1.0, 1.5],
            camera_height: [0.4, 0.8],
            look_at: [0.0, 0.0, 0.1],
        }
    }
}

impl Workspace {
    pub fn validate(&self) -> Result<()> {
        let ok = self.xy_half > 0.0
            && self.z_max > self.table_height
            && self.camera_radius[0] > 0.0
            && self.camera_radius[0] <= self.camera_radius[1]
            && self.camera_height[0] <= self.camera_height[1]
            && self.camera_height[0] > self.table_height;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid workspace {self:?}")))
        }
    }

    /// Height range of the moving object's center for an object of the given
    /// half-height.
    pub fn moving_z_range(&self, half_height: f64) -> [f64; 2] {
        let lo = self.table_height + half_height;
        [lo, self.z_max.max(lo)]
    }

    pub fn contains_moving(&self, object: &ObjectSpec, position: &Vec3) -> bool {
        let [lo, hi] = self.moving_z_range(object.half_extents.half().z);
        position.x.abs() <= self.xy_half
            && position.y.abs() <= self.xy_half
            && position.z >= lo - 1e-12
            && position.z <= hi + 1e-12
    }

    pub fn sample_moving_position<R: rand::Rng>(&self, object: &ObjectSpec, rng: &mut R) -> Vec3 {
        let [lo, hi] = self.moving_z_range(object.half_extents.half().z);
        Vec3::new(
            rng.random_range(-self.xy_half..=self.xy_half),
            rng.random_range(-self.xy_half..=self.xy_half),
            rng.random_range(lo..=hi),
        )
    }

    /// Table-resting pose with uniform position and yaw.
    pub fn sample_resting_pose<R: rand::Rng>(&self, object: &ObjectSpec, rng: &mut R) -> Pose {
        let position = Vec3::new(
            rng.random_range(-self.xy_half..=self.xy_half),
            rng.random_range(-self.xy_half..=self.xy_half),
            self.table_height + object.half_extents.half().z,
        );
        let yaw = rng.random_range(-PI..PI);
        Pose::from_axis_angle(position, Vec3::z() * yaw)
    }

    /// Camera on a ring around the table looking at `look_at`.
    pub fn sample_camera<R: rand::Rng>(&self, rng: &mut R) -> Pose {
        let azimuth = rng.random_range(-PI..PI);
        let radius = rng.random_range(self.camera_radius[0]..=self.camera_radius[1]);
        let height = rng.random_range(self.camera_height[0]..=self.camera_height[1]);
        let eye = Vec3::new(radius * azimuth.cos(), radius * azimuth.sin(), self.table_height + height);
        look_at(&eye, &Vec3::from(self.look_at))
    }
}

/// Camera pose with optical axis `+z` through `target`, `+x` right and `+y`
/// down in the image (no roll).
pub fn look_at(eye: &Vec3, target: &Vec3) -> Pose {
    let forward = (target - eye).normalize();
    let mut right = forward.cross(&Vec3::z());
    if right.norm() < 1e-9 {
        right = Vec3::x();
    }
    let right = right.normalize();
    let down = forward.cross(&right);
    let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[right, down, forward]));
    Pose::new(*eye, UnitQuaternion::from_rotation_matrix(&rot))
}

pub fn random_orientation<R: rand::Rng>(rng: &mut R) -> UnitQuaternion<f64> {
    loop {
        let q = Quaternion::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        if q.norm() > 1e-6 {
            return UnitQuaternion::new_normalize(q);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacedObject {
    pub spec: ObjectSpec,
    pub pose: Pose,
}

/// Full simulator state: the object pair, the camera and the table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneState {
    pub anchor: PlacedObject,
    pub moving: PlacedObject,
    pub camera: Pose,
    pub table_height: f64,
}

/// Number of scalars in [`SceneState::to_flat`].
pub const SCENE_FLAT_DIM: usize = 30;

impl SceneState {
    pub fn with_moving_pose(&self, pose: Pose) -> Self {
        let mut out = *self;
        out.moving.pose = pose;
        out
    }

    /// Flat encoding: per object `[shape, half-extents(3), position(3),
    /// quaternion xyzw(4)]`, then camera position and quaternion, then the
    /// table height.
    pub fn to_flat(&self) -> [f64; SCENE_FLAT_DIM] {
        let mut out = [0.0; SCENE_FLAT_DIM];
        let mut i = 0;
        let mut push = |vals: &[f64]| {
            out[i..i + vals.len()].copy_from_slice(vals);
            i += vals.len();
        };
        for obj in [&self.anchor, &self.moving] {
            push(&[obj.spec.shape.index() as f64]);
            push(obj.spec.half_extents.half().as_slice());
            push(obj.pose.position.as_slice());
            push(&obj.pose.xyzw());
        }
        push(self.camera.position.as_slice());
        push(&self.camera.xyzw());
        push(&[self.table_height]);
        out
    }

    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.len() != SCENE_FLAT_DIM {
            return Err(Error::Shape {
                expected: SCENE_FLAT_DIM,
                got: v.len(),
            });
        }
        let object = |o: &[f64]| -> Result<PlacedObject> {
            let shape = ShapeId::from_index(o[0] as usize)?;
            let mut spec = ObjectSpec::of(shape);
            spec.half_extents = crate::geometry::ObbExtents::new(Vec3::new(o[1], o[2], o[3]))?;
            let pose = Pose::from_xyzw([o[4], o[5], o[6]], [o[7], o[8], o[9], o[10]])?;
            Ok(PlacedObject { spec, pose })
        };
        Ok(Self {
            anchor: object(&v[0..11])?,
            moving: object(&v[11..22])?,
            camera: Pose::from_xyzw([v[22], v[23], v[24]], [v[25], v[26], v[27], v[28]])?,
            table_height: v[29],
        })
    }
}

/// Draws a random scene for `concept`: both objects from the concept's
/// applicable subset, anchor resting on the table, moving object anywhere in
/// the workspace with a uniform orientation, camera on the ring.
pub fn sample_scene<R: rand::Rng>(
    catalog: &Catalog,
    workspace: &Workspace,
    concept: ConceptId,
    rng: &mut R,
) -> Result<SceneState> {
    let subset = catalog.filter(|o| concept.applicable(o));
    if subset.is_empty() {
        return Err(Error::Config(format!(
            "no catalog object is applicable to {concept}"
        )));
    }
    let anchor = subset[rng.random_range(0..subset.len())];
    let moving = subset[rng.random_range(0..subset.len())];
    let anchor_pose = workspace.sample_resting_pose(&anchor, rng);
    let moving_pose = Pose::new(
        workspace.sample_moving_position(&moving, rng),
        random_orientation(rng),
    );
    let camera = workspace.sample_camera(rng);
    Ok(SceneState {
        anchor: PlacedObject { spec: anchor, pose: anchor_pose },
        moving: PlacedObject { spec: moving, pose: moving_pose },
        camera,
        table_height: workspace.table_height,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn near_uses_full_catalog_and_upright_needs_up() {
        let catalog = Catalog::primitives();
        let ws = Workspace::default();
        let mut rng = seed::rng(5);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..500 {
            let s = sample_scene(&catalog, &ws, ConceptId::Near, &mut rng).unwrap();
            seen.insert(s.anchor.spec.shape);
            seen.insert(s.moving.spec.shape);
        }
        assert_eq!(seen.len(), ShapeId::ALL.len());
        for _ in 0..200 {
            let s = sample_scene(&catalog, &ws, ConceptId::Upright, &mut rng).unwrap();
            assert!(s.moving.spec.affordances.has_up);
        }
    }

    #[test]
    fn samples_stay_in_workspace() {
        let catalog = Catalog::primitives();
        let ws = Workspace::default();
        let mut rng = seed::rng(9);
        for i in 0..1000 {
            let concept = ConceptId::ALL[i % ConceptId::ALL.len()];
            let s = sample_scene(&catalog, &ws, concept, &mut rng).unwrap();
            assert!(ws.contains_moving(&s.moving.spec, &s.moving.pose.position));
            let a = s.anchor.pose.position;
            assert!(a.x.abs() <= ws.xy_half && a.y.abs() <= ws.xy_half);
            let bottom = a.z - s.anchor.spec.half_extents.half().z;
            assert!((bottom - ws.table_height).abs() < 1e-12);
            // anchor only yaws
            assert!((s.anchor.pose.z_axis() - Vec3::z()).norm() < 1e-9);
            // camera looks at the workspace center
            let to_center = Vec3::from(ws.look_at) - s.camera.position;
            assert!((s.camera.z_axis() - to_center.normalize()).norm() < 1e-9);
        }
    }

    #[test]
    fn empty_subset_is_config_error() {
        let catalog = Catalog::from_shapes(&[ShapeId::Box]).unwrap();
        let mut rng = seed::rng(1);
        let err = sample_scene(&catalog, &Workspace::default(), ConceptId::Front, &mut rng);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn flat_encoding_round_trips() {
        let catalog = Catalog::primitives();
        let mut rng = seed::rng(2);
        let s = sample_scene(&catalog, &Workspace::default(), ConceptId::Near, &mut rng).unwrap();
        let back = SceneState::from_flat(&s.to_flat()).unwrap();
        assert_eq!(back.to_flat(), s.to_flat());
    }
}
