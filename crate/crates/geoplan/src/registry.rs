//! Time-indexed store of component point clouds.
//!
//! Clouds are keyed by (part, object). Timestamp −1 retrieves the current
//! snapshot, −2 the snapshot at grasp time while a grasp is active, and the
//! snapshot at the start of the current stage otherwise. Components of the
//! grasped object move rigidly with the gripper; gripper approach/binormal
//! clouds are synthesized from the gripper pose so PCA heading extraction
//! works on them unmodified.

use crate::dsl::GeometricComponentRef;
use crate::geometry::{PointCloud, RigidTransform, Vec3};
use std::collections::BTreeMap;
use thiserror::Error;

/// The object token under which the gripper's synthetic components live.
pub const GRIPPER_OBJECT: &str = "the robot";
pub const GRIPPER_APPROACH_PART: &str = "the gripper approach";
pub const GRIPPER_BINORMAL_PART: &str = "the gripper binormal";
pub const GRIPPER_PART: &str = "the gripper";

/// Half-length of the synthetic gripper direction segments (total 0.10 m).
const GRIPPER_SEGMENT_HALF: f64 = 0.05;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum RegistryError {
    #[error("unknown component `{0}`")]
    UnknownComponent(String),
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("already grasping `{0}`")]
    DoubleGrasp(String),
    #[error("no grasp to release")]
    NoGrasp,
    #[error("no history snapshot recorded yet")]
    NoHistory,
    #[error("timestamp {0} is not supported; use -1 (current) or -2 (previous)")]
    BadTimestamp(i64),
}

/// Part-level lookup key; the geometry token of a component reference does
/// not affect which cloud is stored.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ComponentKey {
    pub part: String,
    pub object: String,
}

impl ComponentKey {
    pub fn new(part: &str, object: &str) -> Self {
        Self {
            part: part.to_string(),
            object: object.to_string(),
        }
    }

    pub fn text(&self) -> String {
        format!("{} of {}", self.part, self.object)
    }
}

impl From<&GeometricComponentRef> for ComponentKey {
    fn from(r: &GeometricComponentRef) -> Self {
        ComponentKey::new(&r.part, &r.object)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Timestamp {
    /// −1: the live scene.
    Current,
    /// −2: at grasp time while grasping, else at the current stage start.
    Previous,
}

impl Timestamp {
    pub fn from_int(t: i64) -> Result<Self, RegistryError> {
        match t {
            -1 => Ok(Timestamp::Current),
            -2 => Ok(Timestamp::Previous),
            other => Err(RegistryError::BadTimestamp(other)),
        }
    }

    pub fn as_int(&self) -> i64 {
        match self {
            Timestamp::Current => -1,
            Timestamp::Previous => -2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GripperAxis {
    Approach,
    Binormal,
}

/// Read-only view used by cost evaluation; implemented by the registry itself
/// and by the solver's candidate-pose overlay.
pub trait CloudSource {
    fn cloud(&self, key: &ComponentKey, ts: Timestamp) -> Result<PointCloud, RegistryError>;
}

#[derive(Debug, Clone)]
struct Snapshot {
    clouds: BTreeMap<ComponentKey, PointCloud>,
    gripper_pose: RigidTransform,
}

#[derive(Debug, Clone)]
pub struct ComponentRegistry {
    current: BTreeMap<ComponentKey, PointCloud>,
    gripper_pose: RigidTransform,
    grasped_object: Option<String>,
    /// Monotonic counter ordering the recorded snapshots.
    snapshot_seq: u64,
    at_grasp: Option<(u64, Snapshot)>,
    stage_start: Option<(u64, usize, Snapshot)>,
}

impl Default for ComponentRegistry {
    fn default() -> Self {
        Self::new(RigidTransform::identity())
    }
}

impl ComponentRegistry {
    pub fn new(gripper_home: RigidTransform) -> Self {
        Self {
            current: BTreeMap::new(),
            gripper_pose: gripper_home,
            grasped_object: None,
            snapshot_seq: 0,
            at_grasp: None,
            stage_start: None,
        }
    }

    pub fn register(&mut self, key: ComponentKey, cloud: PointCloud) {
        self.current.insert(key, cloud);
    }

    /// Places the gripper during scene setup, before any snapshot exists.
    pub fn set_gripper_home(&mut self, pose: RigidTransform) {
        self.gripper_pose = pose;
    }

    pub fn keys(&self) -> impl Iterator<Item = &ComponentKey> {
        self.current.keys()
    }

    pub fn contains_object(&self, object: &str) -> bool {
        self.current.keys().any(|k| k.object == object)
    }

    pub fn parts_of(&self, object: &str) -> Vec<ComponentKey> {
        self.current.keys().filter(|k| k.object == object).cloned().collect()
    }

    pub fn gripper_pose(&self) -> RigidTransform {
        self.gripper_pose
    }

    pub fn grasped_object(&self) -> Option<&str> {
        self.grasped_object.as_deref()
    }

    /// Components rigidly attached to the gripper: the synthetic gripper
    /// components always, plus every part of the grasped object.
    pub fn is_moving(&self, key: &ComponentKey) -> bool {
        if key.object == GRIPPER_OBJECT {
            return true;
        }
        self.grasped_object.as_deref() == Some(key.object.as_str())
    }

    fn synthetic_gripper_cloud(&self, part: &str, pose: &RigidTransform) -> Option<PointCloud> {
        // Three collinear samples: the segment endpoints plus the gripper
        // origin, which keeps the cloud above the PCA minimum of 3 points.
        let seg = |axis: Vec3| {
            vec![
                pose.apply(&(axis * -GRIPPER_SEGMENT_HALF)),
                pose.apply(&Vec3::zeros()),
                pose.apply(&(axis * GRIPPER_SEGMENT_HALF)),
            ]
        };
        let points = match part {
            GRIPPER_APPROACH_PART => seg(Vec3::z()),
            GRIPPER_BINORMAL_PART => seg(Vec3::x()),
            GRIPPER_PART => {
                let mut pts = seg(Vec3::z());
                pts.extend(seg(Vec3::x()));
                pts
            }
            _ => return None,
        };
        Some(PointCloud::new(points).expect("synthetic gripper cloud is finite and non-empty"))
    }

    /// Two-point cloud of length 0.10 m through the gripper origin along the
    /// approach (tool z) or binormal (finger-opening, tool x) axis.
    pub fn gripper_direction_cloud(&self, which: GripperAxis) -> PointCloud {
        let part = match which {
            GripperAxis::Approach => GRIPPER_APPROACH_PART,
            GripperAxis::Binormal => GRIPPER_BINORMAL_PART,
        };
        self.synthetic_gripper_cloud(part, &self.gripper_pose).unwrap()
    }

    /// The newest recorded snapshot wins: the grasp-time snapshot right after
    /// a grasp, the stage-start snapshot once the next stage begins. Repeated
    /// stage visits re-record their start, so per-visit relative targets
    /// (rotate by 30° each iteration) accumulate.
    fn previous_snapshot(&self) -> Result<&Snapshot, RegistryError> {
        let grasp = self.at_grasp.as_ref().map(|(seq, s)| (*seq, s));
        let stage = self.stage_start.as_ref().map(|(seq, _, s)| (*seq, s));
        match (grasp, stage) {
            (Some((ga, a)), Some((sb, b))) => Ok(if ga > sb { a } else { b }),
            (Some((_, s)), None) | (None, Some((_, s))) => Ok(s),
            (None, None) => Err(RegistryError::NoHistory),
        }
    }

    pub fn get_point_cloud(&self, r: &GeometricComponentRef, timestamp: i64) -> Result<PointCloud, RegistryError> {
        self.cloud(&ComponentKey::from(r), Timestamp::from_int(timestamp)?)
    }

    /// Records the snapshot used as timestamp −2 for this stage visit.
    pub fn begin_stage(&mut self, stage_index: usize) {
        self.snapshot_seq += 1;
        self.stage_start = Some((
            self.snapshot_seq,
            stage_index,
            Snapshot {
                clouds: self.current.clone(),
                gripper_pose: self.gripper_pose,
            },
        ));
    }

    pub fn stage_started(&self) -> Option<usize> {
        self.stage_start.as_ref().map(|(_, k, _)| *k)
    }

    /// Applies a relative world-frame motion to the gripper and to every
    /// moving cloud; stationary clouds are untouched.
    pub fn apply_gripper_motion(&mut self, motion: &RigidTransform) {
        self.gripper_pose = motion.compose(&self.gripper_pose);
        self.gripper_pose.rotation = self.gripper_pose.rotation.orthonormalized();
        let moving: Vec<ComponentKey> = self.current.keys().filter(|k| self.is_moving(k)).cloned().collect();
        for key in moving {
            let cloud = self.current.get(&key).unwrap();
            let transformed = cloud.transformed(&motion.rotation, &motion.translation);
            self.current.insert(key, transformed);
        }
    }

    /// Attaches every part of `object` to the gripper and freezes the AtGrasp
    /// snapshot.
    pub fn set_grasp(&mut self, object: &str) -> Result<(), RegistryError> {
        if let Some(held) = &self.grasped_object {
            return Err(RegistryError::DoubleGrasp(held.clone()));
        }
        if !self.contains_object(object) {
            return Err(RegistryError::UnknownObject(object.to_string()));
        }
        self.grasped_object = Some(object.to_string());
        self.snapshot_seq += 1;
        self.at_grasp = Some((
            self.snapshot_seq,
            Snapshot {
                clouds: self.current.clone(),
                gripper_pose: self.gripper_pose,
            },
        ));
        Ok(())
    }

    pub fn clear_grasp(&mut self) -> Result<(), RegistryError> {
        if self.grasped_object.is_none() {
            return Err(RegistryError::NoGrasp);
        }
        self.grasped_object = None;
        Ok(())
    }

    /// Overwrites a current cloud in place; used by the scene simulator when
    /// projecting articulated parts onto their joint.
    pub fn set_current_cloud(&mut self, key: &ComponentKey, cloud: PointCloud) {
        self.current.insert(key.clone(), cloud);
    }
}

impl CloudSource for ComponentRegistry {
    fn cloud(&self, key: &ComponentKey, ts: Timestamp) -> Result<PointCloud, RegistryError> {
        if key.object == GRIPPER_OBJECT {
            let pose = match ts {
                Timestamp::Current => self.gripper_pose,
                Timestamp::Previous => self.previous_snapshot()?.gripper_pose,
            };
            return self
                .synthetic_gripper_cloud(&key.part, &pose)
                .ok_or_else(|| RegistryError::UnknownComponent(key.text()));
        }
        let map = match ts {
            Timestamp::Current => &self.current,
            Timestamp::Previous => &self.previous_snapshot()?.clouds,
        };
        map.get(key)
            .cloned()
            .ok_or_else(|| RegistryError::UnknownComponent(key.text()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{major_axis, RotationMatrix};
    use approx::assert_abs_diff_eq;

    fn knife_scene() -> ComponentRegistry {
        let mut reg = ComponentRegistry::new(RigidTransform::identity());
        reg.register(
            ComponentKey::new("the blade", "the knife"),
            PointCloud::from_coords(&[[0.2, 0.0, 0.02], [0.25, 0.0, 0.02], [0.3, 0.0, 0.03]]).unwrap(),
        );
        reg.register(
            ComponentKey::new("the handle", "the knife"),
            PointCloud::from_coords(&[[0.1, 0.0, 0.02], [0.15, 0.0, 0.02], [0.12, 0.01, 0.02]]).unwrap(),
        );
        reg.register(
            ComponentKey::new("the body", "the carrot"),
            PointCloud::from_coords(&[[0.0, 0.3, 0.01], [0.0, 0.35, 0.01], [0.0, 0.4, 0.01]]).unwrap(),
        );
        reg.begin_stage(1);
        reg
    }

    #[test]
    fn grasped_clouds_follow_the_gripper() {
        let mut reg = knife_scene();
        reg.set_grasp("the knife").unwrap();
        let motion = RigidTransform::new(RotationMatrix::identity(), Vec3::new(0.0, 0.0, 0.1));
        reg.apply_gripper_motion(&motion);

        let blade = ComponentKey::new("the blade", "the knife");
        let now = reg.cloud(&blade, Timestamp::Current).unwrap();
        let before = reg.cloud(&blade, Timestamp::Previous).unwrap();
        for (a, b) in now.points().iter().zip(before.points()) {
            assert_abs_diff_eq!(a.z - b.z, 0.1, epsilon = 1e-12);
        }

        let carrot = ComponentKey::new("the body", "the carrot");
        let carrot_now = reg.cloud(&carrot, Timestamp::Current).unwrap();
        let carrot_before = reg.cloud(&carrot, Timestamp::Previous).unwrap();
        assert_eq!(carrot_now, carrot_before);
    }

    #[test]
    fn identity_motion_changes_nothing() {
        let mut reg = knife_scene();
        let before = reg.cloud(&ComponentKey::new("the blade", "the knife"), Timestamp::Current).unwrap();
        reg.apply_gripper_motion(&RigidTransform::identity());
        let after = reg.cloud(&ComponentKey::new("the blade", "the knife"), Timestamp::Current).unwrap();
        for (a, b) in before.points().iter().zip(after.points()) {
            assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn rotation_preserves_pairwise_distances_in_moving_clouds() {
        let mut reg = knife_scene();
        reg.set_grasp("the knife").unwrap();
        let blade = ComponentKey::new("the blade", "the knife");
        let before = reg.cloud(&blade, Timestamp::Current).unwrap();
        let motion = RigidTransform::new(RotationMatrix::rot_z(0.7), Vec3::new(0.05, -0.02, 0.0));
        reg.apply_gripper_motion(&motion);
        let after = reg.cloud(&blade, Timestamp::Current).unwrap();
        for i in 0..before.len() {
            for j in 0..before.len() {
                let d0 = (before.points()[i] - before.points()[j]).norm();
                let d1 = (after.points()[i] - after.points()[j]).norm();
                assert_abs_diff_eq!(d0, d1, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn accumulated_motion_links_current_to_grasp_snapshot() {
        let mut reg = knife_scene();
        reg.set_grasp("the knife").unwrap();
        let m1 = RigidTransform::new(RotationMatrix::rot_z(0.3), Vec3::new(0.02, 0.0, 0.05));
        let m2 = RigidTransform::new(RotationMatrix::rot_x(-0.2), Vec3::new(0.0, 0.04, 0.0));
        let pose_at_grasp = reg.gripper_pose();
        reg.apply_gripper_motion(&m1);
        reg.apply_gripper_motion(&m2);
        let rel = RigidTransform::relative_motion(&pose_at_grasp, &reg.gripper_pose());

        let blade = ComponentKey::new("the blade", "the knife");
        let now = reg.cloud(&blade, Timestamp::Current).unwrap();
        let at_grasp = reg.cloud(&blade, Timestamp::Previous).unwrap();
        for (a, b) in now.points().iter().zip(at_grasp.points()) {
            assert_abs_diff_eq!((a - rel.apply(b)).norm(), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn grasp_errors() {
        let mut reg = knife_scene();
        assert_eq!(reg.clear_grasp(), Err(RegistryError::NoGrasp));
        assert!(matches!(reg.set_grasp("the spoon"), Err(RegistryError::UnknownObject(_))));
        reg.set_grasp("the knife").unwrap();
        assert!(matches!(reg.set_grasp("the carrot"), Err(RegistryError::DoubleGrasp(_))));
        reg.clear_grasp().unwrap();
    }

    #[test]
    fn unknown_component_and_bad_timestamp() {
        let reg = knife_scene();
        let ghost = GeometricComponentRef::new("the center", "the lid", "the pot");
        assert!(matches!(reg.get_point_cloud(&ghost, -1), Err(RegistryError::UnknownComponent(_))));
        let blade = GeometricComponentRef::new("the center", "the blade", "the knife");
        assert!(matches!(reg.get_point_cloud(&blade, 0), Err(RegistryError::BadTimestamp(0))));
    }

    #[test]
    fn previous_before_any_snapshot_is_no_history() {
        let mut reg = ComponentRegistry::new(RigidTransform::identity());
        reg.register(
            ComponentKey::new("the body", "the cube"),
            PointCloud::from_coords(&[[0.0, 0.0, 0.0]]).unwrap(),
        );
        let cube = ComponentKey::new("the body", "the cube");
        assert_eq!(reg.cloud(&cube, Timestamp::Previous), Err(RegistryError::NoHistory));
    }

    #[test]
    fn repeated_previous_reads_are_identical() {
        let mut reg = knife_scene();
        reg.set_grasp("the knife").unwrap();
        reg.apply_gripper_motion(&RigidTransform::new(RotationMatrix::identity(), Vec3::new(0.0, 0.0, 0.2)));
        let blade = ComponentKey::new("the blade", "the knife");
        let a = reg.cloud(&blade, Timestamp::Previous).unwrap();
        let b = reg.cloud(&blade, Timestamp::Previous).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn approach_cloud_at_identity_pose() {
        let reg = ComponentRegistry::new(RigidTransform::identity());
        let pc = reg.gripper_direction_cloud(GripperAxis::Approach);
        let first = pc.points()[0];
        let last = pc.points()[pc.len() - 1];
        assert_abs_diff_eq!((first - Vec3::new(0.0, 0.0, -0.05)).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((last - Vec3::new(0.0, 0.0, 0.05)).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((first - last).norm(), 0.10, epsilon = 1e-15);
        assert_abs_diff_eq!(pc.centroid().norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn direction_clouds_rotate_with_the_pose() {
        let pose = RigidTransform::new(RotationMatrix::rot_y(0.9), Vec3::new(0.1, 0.2, 0.3));
        let reg = ComponentRegistry::new(pose);
        let pc = reg.gripper_direction_cloud(GripperAxis::Approach);
        let tool_z = pose.rotation.apply(&Vec3::z());
        let axis = major_axis(&pc).unwrap();
        assert!(axis.vector().dot(&tool_z).abs() > 1.0 - 1e-9);
    }

    #[test]
    fn gripper_centroid_tracks_translation() {
        let pose = RigidTransform::new(RotationMatrix::rot_z(0.3), Vec3::new(0.4, -0.1, 0.2));
        let reg = ComponentRegistry::new(pose);
        let key = ComponentKey::new(GRIPPER_PART, GRIPPER_OBJECT);
        let pc = reg.cloud(&key, Timestamp::Current).unwrap();
        assert_abs_diff_eq!((pc.centroid() - pose.translation).norm(), 0.0, epsilon = 1e-12);
    }
}
