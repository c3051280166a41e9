//! Segmented point-cloud rendering through a pinhole camera with a z-buffer.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};
use crate::seed;

use super::SceneState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    /// Candidate surface samples per object.
    pub candidates: usize,
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in degrees.
    pub fov_deg: f64,
    pub near_clip: f64,
    /// Points per object after resampling.
    pub points_per_object: usize,
    pub min_visible: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            candidates: 4096,
            width: 160,
            height: 120,
            fov_deg: 70.0,
            near_clip: 0.05,
            points_per_object: 256,
            min_visible: 20,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidates == 0
            || self.width == 0
            || self.height == 0
            || self.points_per_object == 0
            || !(self.fov_deg > 0.0 && self.fov_deg < 180.0)
            || self.near_clip <= 0.0
        {
            return Err(Error::Config(format!("invalid render config {self:?}")));
        }
        Ok(())
    }

    fn focal(&self) -> f64 {
        0.5 * self.width as f64 / (0.5 * self.fov_deg.to_radians()).tan()
    }

    /// Pixel hit by a camera-frame point, if it is in front of the camera
    /// and inside the image.
    pub fn project(&self, p: &Vec3) -> Option<usize> {
        if p.z <= self.near_clip {
            return None;
        }
        let f = self.focal();
        let u = f * p.x / p.z + 0.5 * self.width as f64;
        let v = f * p.y / p.z + 0.5 * self.height as f64;
        if u < 0.0 || v < 0.0 {
            return None;
        }
        let (u, v) = (u as usize, v as usize);
        (u < self.width && v < self.height).then_some(v * self.width + u)
    }
}

/// Per-object visible points in the camera frame; the anchor block carries
/// segment id 0 and the moving block segment id 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudObservation {
    pub anchor: Vec<Vec3>,
    pub moving: Vec<Vec3>,
}

impl PointCloudObservation {
    pub const ANCHOR_SEGMENT: f64 = 0.0;
    pub const MOVING_SEGMENT: f64 = 1.0;

    /// `[x, y, z, segment]` rows, anchor block first.
    pub fn rows(&self) -> Vec<[f64; 4]> {
        let tag = |pts: &[Vec3], s: f64| pts.iter().map(move |p| [p.x, p.y, p.z, s]).collect::<Vec<_>>();
        let mut out = tag(&self.anchor, Self::ANCHOR_SEGMENT);
        out.extend(tag(&self.moving, Self::MOVING_SEGMENT));
        out
    }

    pub fn from_rows(rows: &[[f64; 4]]) -> Self {
        let mut out = Self { anchor: Vec::new(), moving: Vec::new() };
        for r in rows {
            let p = Vec3::new(r[0], r[1], r[2]);
            if r[3] == Self::MOVING_SEGMENT {
                out.moving.push(p);
            } else {
                out.anchor.push(p);
            }
        }
        out
    }

    pub fn moving_centroid(&self) -> Vec3 {
        centroid(&self.moving)
    }
}

pub fn centroid(points: &[Vec3]) -> Vec3 {
    if points.is_empty() {
        return Vec3::zeros();
    }
    points.iter().fold(Vec3::zeros(), |a, p| a + p) / points.len() as f64
}

/// Candidate surface points of both objects in the camera frame, before
/// visibility. The renderer keeps a subset of exactly these points.
pub fn candidate_points(scene: &SceneState, cfg: &RenderConfig, seed: u64) -> [Vec<Vec3>; 2] {
    let world_to_cam = scene.camera.inverse();
    [&scene.anchor, &scene.moving]
        .into_iter()
        .enumerate()
        .map(|(slot, obj)| {
            obj.spec
                .sample_surface(seed::derive(seed, &[slot as u64]), cfg.candidates)
                .into_iter()
                .map(|p| world_to_cam.transform_point(&obj.pose.transform_point(&p)))
                .collect()
        })
        .collect::<Vec<Vec<Vec3>>>()
        .try_into()
        .expect("two objects")
}

/// Renders the segmented cloud of `scene`; `seed` fixes the surface samples
/// and the resampling so identical inputs give identical clouds.
pub fn render_segmented_cloud(scene: &SceneState, cfg: &RenderConfig, seed: u64) -> Result<PointCloudObservation> {
    cfg.validate()?;
    let candidates = candidate_points(scene, cfg, seed);
    let cam_to_world = &scene.camera;

    // (depth, object, candidate index) of the nearest point in each pixel
    let mut zbuf: Vec<Option<(f64, usize, usize)>> = vec![None; cfg.width * cfg.height];
    for (obj, pts) in candidates.iter().enumerate() {
        for (i, p) in pts.iter().enumerate() {
            // the camera is above the table, so the table plane hides
            // exactly the points below it
            if cam_to_world.transform_point(p).z < scene.table_height {
                continue;
            }
            let Some(px) = cfg.project(p) else { continue };
            match zbuf[px] {
                Some((d, _, _)) if d <= p.z => {}
                _ => zbuf[px] = Some((p.z, obj, i)),
            }
        }
    }

    let mut visible: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (_, obj, i) in zbuf.iter().flatten() {
        visible[*obj].push(*i);
    }
    for (obj, name) in [(0, "anchor"), (1, "moving")] {
        if visible[obj].len() < cfg.min_visible {
            return Err(Error::OcclusionReject {
                object: name,
                visible: visible[obj].len(),
                required: cfg.min_visible,
            });
        }
    }

    let mut rng = seed::rng_for(seed, &[2]);
    let mut resample = |obj: usize| -> Vec<Vec3> {
        (0..cfg.points_per_object)
            .map(|_| candidates[obj][visible[obj][rng.random_range(0..visible[obj].len())]])
            .collect()
    };
    let anchor = resample(0);
    let moving = resample(1);
    Ok(PointCloudObservation { anchor, moving })
}

/// Rigidly moves the moving block about its centroid `c`:
/// `p' = R (p - c) + c + t`. The anchor block is untouched.
pub fn transform_moving_cloud(obs: &PointCloudObservation, delta: &Pose) -> PointCloudObservation {
    let c = obs.moving_centroid();
    PointCloudObservation {
        anchor: obs.anchor.clone(),
        moving: obs
            .moving
            .iter()
            .map(|p| delta.rotate(&(p - c)) + c + delta.position)
            .collect(),
    }
}

/// Inverse of `delta` under the centroid parameterization of
/// [`transform_moving_cloud`]: rotation inverted, translation negated.
pub fn centroid_delta_inverse(delta: &Pose) -> Pose {
    Pose::new(-delta.position, delta.orientation().inverse())
}

/// Applies a camera-frame centroid delta to the moving object's true pose.
pub fn apply_cloud_delta(scene: &SceneState, cloud_centroid: &Vec3, delta: &Pose) -> SceneState {
    let cam = &scene.camera;
    let c_world = cam.transform_point(cloud_centroid);
    let rot_world = cam.orientation() * delta.orientation() * cam.orientation().inverse();
    let t_world = cam.rotate(&delta.position);
    let m = &scene.moving.pose;
    let position = c_world + rot_world.transform_vector(&(m.position - c_world)) + t_world;
    scene.with_moving_pose(Pose::new(position, rot_world * m.orientation()))
}
