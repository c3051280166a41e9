//! Privileged low-dimensional observation of a scene.
//!
//! Layout of the 30-vector:
//!
//! | range  | group            |
//! |--------|------------------|
//! | 0..7   | anchor pose      |
//! | 7..14  | moving pose      |
//! | 14..21 | relative pose    |
//! | 21..24 | p_moving - p_anchor |
//! | 24..27 | anchor half-extents |
//! | 27..30 | moving half-extents |
//!
//! Poses are `position(3) ++ quaternion xyzw(4)`.

use std::ops::Range;

use crate::geometry::{relative_pose, Pose};
use crate::oracle::{FeatureAnswers, FrameAnswer};

use super::SceneState;

pub const PRIVILEGED_DIM: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureGroup {
    AnchorPose,
    MovingPose,
    RelativePose,
    PositionDifference,
    AnchorExtents,
    MovingExtents,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 6] = [
        FeatureGroup::AnchorPose,
        FeatureGroup::MovingPose,
        FeatureGroup::RelativePose,
        FeatureGroup::PositionDifference,
        FeatureGroup::AnchorExtents,
        FeatureGroup::MovingExtents,
    ];

    pub fn range(self) -> Range<usize> {
        match self {
            FeatureGroup::AnchorPose => 0..7,
            FeatureGroup::MovingPose => 7..14,
            FeatureGroup::RelativePose => 14..21,
            FeatureGroup::PositionDifference => 21..24,
            FeatureGroup::AnchorExtents => 24..27,
            FeatureGroup::MovingExtents => 27..30,
        }
    }

    /// Groups that carry information about the anchor object.
    pub fn involves_anchor(self) -> bool {
        !matches!(self, FeatureGroup::MovingPose | FeatureGroup::MovingExtents)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrivilegedObservation {
    pub features: [f64; PRIVILEGED_DIM],
    pub mask: [bool; PRIVILEGED_DIM],
}

impl PrivilegedObservation {
    pub fn group(&self, g: FeatureGroup) -> &[f64] {
        &self.features[g.range()]
    }

    pub fn drop_group(&mut self, g: FeatureGroup) {
        for i in g.range() {
            self.features[i] = 0.0;
            self.mask[i] = false;
        }
    }

    pub fn is_active(&self, g: FeatureGroup) -> bool {
        g.range().all(|i| self.mask[i])
    }
}

fn write_pose(out: &mut [f64], pose: &Pose) {
    out[..3].copy_from_slice(pose.position.as_slice());
    out[3..7].copy_from_slice(&pose.xyzw());
}

/// Deterministic privileged features of `scene`, all dimensions active.
pub fn privileged_features(scene: &SceneState) -> PrivilegedObservation {
    let mut f = [0.0; PRIVILEGED_DIM];
    let (a, m) = (&scene.anchor.pose, &scene.moving.pose);
    write_pose(&mut f[FeatureGroup::AnchorPose.range()], a);
    write_pose(&mut f[FeatureGroup::MovingPose.range()], m);
    write_pose(&mut f[FeatureGroup::RelativePose.range()], &relative_pose(a, m));
    f[FeatureGroup::PositionDifference.range()]
        .copy_from_slice((m.position - a.position).as_slice());
    f[FeatureGroup::AnchorExtents.range()].copy_from_slice(scene.anchor.spec.half_extents.half().as_slice());
    f[FeatureGroup::MovingExtents.range()].copy_from_slice(scene.moving.spec.half_extents.half().as_slice());
    PrivilegedObservation {
        features: f,
        mask: [true; PRIVILEGED_DIM],
    }
}

/// Zeroes the groups ruled out by the feature-query answers.
pub fn apply_feature_mask(obs: &PrivilegedObservation, answers: &FeatureAnswers) -> PrivilegedObservation {
    let mut out = obs.clone();
    for g in FeatureGroup::ALL {
        let drop = (answers.single_object && g.involves_anchor())
            || match answers.frame {
                FrameAnswer::Relative => {
                    matches!(g, FeatureGroup::AnchorPose | FeatureGroup::MovingPose)
                }
                // the positional difference is expressed in world axes, so
                // it survives an "absolute" answer
                FrameAnswer::Absolute => g == FeatureGroup::RelativePose,
                FrameAnswer::Both => false,
            }
            || (!answers.sizes_matter
                && matches!(g, FeatureGroup::AnchorExtents | FeatureGroup::MovingExtents));
        if drop {
            out.drop_group(g);
        }
    }
    out
}
