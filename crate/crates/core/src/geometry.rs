//! Rigid poses, oriented boxes and the angular/area primitives used by the
//! concept definitions.
//!
//! Quaternions are stored scalar-last `(x, y, z, w)` and canonicalized to
//! `w >= 0`, so `q` and `-q` produce the same [`Pose`].

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Largest deviation of `‖q‖` from 1 accepted by the checked constructors.
pub const UNIT_TOLERANCE: f64 = 1e-6;

const MIN_VECTOR_NORM: f64 = 1e-9;

/// Canonical representative of a rotation in the double cover (`w >= 0`).
pub fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

/// Builds a unit quaternion from scalar-last components, rejecting inputs
/// whose norm is off by more than [`UNIT_TOLERANCE`].
pub fn unit_quat(xyzw: [f64; 4]) -> Result<UnitQuaternion<f64>> {
    let q = Quaternion::new(xyzw[3], xyzw[0], xyzw[1], xyzw[2]);
    check_unit(&q)?;
    // already-unit inputs are kept bit-for-bit so flat encodings round-trip
    let unit = if (q.norm() - 1.0).abs() <= 1e-12 {
        UnitQuaternion::new_unchecked(q)
    } else {
        UnitQuaternion::new_normalize(q)
    };
    Ok(canonical(unit))
}

/// Scalar-last components of `q`.
pub fn quat_xyzw(q: &UnitQuaternion<f64>) -> [f64; 4] {
    [q.i, q.j, q.k, q.w]
}

fn check_unit(q: &Quaternion<f64>) -> Result<()> {
    let norm = q.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::InvalidInput(format!(
            "quaternion norm {norm} is not 1"
        )));
    }
    Ok(())
}

/// Rotates `v` by the (unit) quaternion `q`.
pub fn quat_rotate(q: &Quaternion<f64>, v: &Vec3) -> Result<Vec3> {
    check_unit(q)?;
    Ok(UnitQuaternion::new_normalize(*q).transform_vector(v))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    orientation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn new(position: Vec3, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation: canonical(orientation),
        }
    }

    pub fn identity() -> Self {
        Self::new(Vec3::zeros(), UnitQuaternion::identity())
    }

    pub fn from_translation(position: Vec3) -> Self {
        Self::new(position, UnitQuaternion::identity())
    }

    /// Pose from a position and a rotation vector (axis times angle, radians).
    pub fn from_axis_angle(position: Vec3, rotation: Vec3) -> Self {
        Self::new(position, UnitQuaternion::from_scaled_axis(rotation))
    }

    /// Checked constructor from raw scalar-last quaternion components.
    pub fn from_xyzw(position: [f64; 3], xyzw: [f64; 4]) -> Result<Self> {
        Ok(Self::new(Vec3::from(position), unit_quat(xyzw)?))
    }

    pub fn orientation(&self) -> &UnitQuaternion<f64> {
        &self.orientation
    }

    pub fn set_orientation(&mut self, q: UnitQuaternion<f64>) {
        self.orientation = canonical(q);
    }

    pub fn rotation_vector(&self) -> Vec3 {
        self.orientation.scaled_axis()
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.position + self.orientation.transform_vector(&other.position),
            self.orientation * other.orientation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.orientation.inverse();
        Pose::new(-(inv.transform_vector(&self.position)), inv)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.position + self.orientation.transform_vector(p)
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.orientation.transform_vector(v)
    }

    pub fn x_axis(&self) -> Vec3 {
        self.rotate(&Vec3::x())
    }

    pub fn y_axis(&self) -> Vec3 {
        self.rotate(&Vec3::y())
    }

    pub fn z_axis(&self) -> Vec3 {
        self.rotate(&Vec3::z())
    }

    pub fn xyzw(&self) -> [f64; 4] {
        quat_xyzw(&self.orientation)
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

/// `moving` expressed in the frame of `anchor`.
pub fn relative_pose(anchor: &Pose, moving: &Pose) -> Pose {
    anchor.inverse().compose(moving)
}

/// Unsigned angle between two vectors, in degrees.
pub fn angle_between(u: &Vec3, v: &Vec3) -> Result<f64> {
    let (nu, nv) = (u.norm(), v.norm());
    if !(nu > MIN_VECTOR_NORM && nv > MIN_VECTOR_NORM) {
        return Err(Error::Degenerate(format!(
            "angle between vectors of norm {nu} and {nv}"
        )));
    }
    let cos = (u.dot(v) / (nu * nv)).clamp(-1.0, 1.0);
    Ok(cos.acos().to_degrees())
}

/// Half-extents of an oriented box in its local frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObbExtents(Vec3);

impl ObbExtents {
    pub fn new(half_extents: Vec3) -> Result<Self> {
        if half_extents.iter().all(|h| h.is_finite() && *h > 0.0) {
            Ok(Self(half_extents))
        } else {
            Err(Error::InvalidInput(format!(
                "half extents must be positive, got {half_extents:?}"
            )))
        }
    }

    pub fn cube(half: f64) -> Result<Self> {
        Self::new(Vec3::repeat(half))
    }

    pub fn half(&self) -> &Vec3 {
        &self.0
    }

    /// The eight box corners in the box's local frame.
    pub fn corners(&self) -> [Vec3; 8] {
        let h = self.0;
        let mut out = [Vec3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
            *c = Vec3::new(sx * h.x, sy * h.y, sz * h.z);
        }
        out
    }
}

/// Axis-aligned rectangle on the world xy-plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Rect {
    pub fn area(&self) -> f64 {
        (self.max[0] - self.min[0]).max(0.0) * (self.max[1] - self.min[1]).max(0.0)
    }

    pub fn intersection_area(&self, other: &Rect) -> f64 {
        let w = self.max[0].min(other.max[0]) - self.min[0].max(other.min[0]);
        let h = self.max[1].min(other.max[1]) - self.min[1].max(other.min[1]);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }
}

/// World-axis-aligned rectangle enclosing the xy-projection of a posed box.
pub fn projected_rect(pose: &Pose, ext: &ObbExtents) -> Rect {
    let mut rect = Rect {
        min: [f64::INFINITY; 2],
        max: [f64::NEG_INFINITY; 2],
    };
    for c in ext.corners() {
        let w = pose.transform_point(&c);
        for axis in 0..2 {
            rect.min[axis] = rect.min[axis].min(w[axis]);
            rect.max[axis] = rect.max[axis].max(w[axis]);
        }
    }
    rect
}

/// Overlap area of the two boxes' projected world rectangles (m²).
pub fn projected_aabb_intersection(
    pose_a: &Pose,
    ext_a: &ObbExtents,
    pose_b: &Pose,
    ext_b: &ObbExtents,
) -> f64 {
    projected_rect(pose_a, ext_a).intersection_area(&projected_rect(pose_b, ext_b))
}

/// `lambda * (1 - <q1, q2>)` with the inner product taken over the double
/// cover, i.e. `|<q1, q2>|`.
pub fn quat_cost(q1: &UnitQuaternion<f64>, q2: &UnitQuaternion<f64>, lambda: f64) -> f64 {
    let dot = q1.coords.dot(&q2.coords).abs().min(1.0);
    lambda * (1.0 - dot)
}
