//! Synthetic desk-scale scenes: part-labelled point clouds sampled from
//! primitive shapes, a floating-gripper kinematic model with 1-DoF joint
//! projection for articulated objects, per-task success predicates, and
//! ground-truth label rendering for the vision pipeline.
//!
//! Scene files are TOML with a `format = "scene-v1"` tag.

use crate::geometry::{major_axis, rodrigues, PointCloud, RigidTransform, RotationMatrix, UnitVector, Vec3};
use crate::registry::{ComponentKey, ComponentRegistry, RegistryError, Timestamp};
use crate::registry::CloudSource;
use crate::solver::{GripEvent, SolverError, Trajectory, TrajectoryWorld};
use crate::vision::{CameraIntrinsics, DepthImage, Mask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

pub const SCENE_FORMAT: &str = "scene-v1";

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("bad scene spec: {0}")]
    Spec(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

// ---------------------------------------------------------------------------
// Scene spec (the TOML schema)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub format: String,
    pub task: String,
    #[serde(default)]
    pub seed: u64,
    pub gripper: GripperSpec,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub success: Option<SuccessSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GripperSpec {
    pub position: [f64; 3],
    #[serde(default)]
    pub rpy_deg: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub name: String,
    #[serde(default)]
    pub fixed: bool,
    pub position: [f64; 3],
    #[serde(default)]
    pub yaw_deg: f64,
    pub parts: Vec<PartSpec>,
    #[serde(default)]
    pub joint: Option<JointSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartSpec {
    pub name: String,
    pub shape: ShapeSpec,
    #[serde(default)]
    pub center: [f64; 3],
    pub points: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ShapeSpec {
    /// Uniform samples in a box volume.
    Box { size: [f64; 3] },
    /// Uniform samples in a cylinder volume around `axis`.
    Cylinder {
        radius: f64,
        length: f64,
        #[serde(default = "default_axis")]
        axis: [f64; 3],
    },
    /// Uniform samples in a rectangle in the local xy plane.
    Plane { size: [f64; 2] },
    /// Evenly spaced samples on a line segment along `axis`.
    Segment {
        length: f64,
        #[serde(default = "default_axis")]
        axis: [f64; 3],
    },
}

fn default_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointSpec {
    /// "revolute" or "prismatic".
    pub kind: String,
    /// Part whose major axis and centroid define the joint (revolute).
    #[serde(default)]
    pub axis_part: Option<String>,
    /// Direction in the object frame (prismatic, or revolute without a part).
    #[serde(default)]
    pub axis: Option<[f64; 3]>,
    pub moving_parts: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuccessSpec {
    /// "part-rotated", "part-translated", "reach", "above", "intersects",
    /// or "orbit".
    pub kind: String,
    #[serde(default)]
    pub object: Option<String>,
    #[serde(default)]
    pub min_degrees: Option<f64>,
    #[serde(default)]
    pub min_meters: Option<f64>,
    #[serde(default)]
    pub max_meters: Option<f64>,
    #[serde(default)]
    pub subject: Option<[String; 2]>,
    #[serde(default)]
    pub target: Option<[String; 2]>,
    #[serde(default)]
    pub pivot: Option<[String; 2]>,
    #[serde(default)]
    pub max_horizontal: Option<f64>,
    #[serde(default)]
    pub min_height: Option<f64>,
    #[serde(default)]
    pub max_height: Option<f64>,
    #[serde(default)]
    pub margin: Option<f64>,
}

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self, SceneError> {
        let spec: SceneSpec = toml::from_str(text)?;
        if spec.format != SCENE_FORMAT {
            return Err(SceneError::Spec(format!(
                "unsupported scene format `{}`; expected `{SCENE_FORMAT}`",
                spec.format
            )));
        }
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self, SceneError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene spec serializes")
    }
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

fn fnv1a(text: &str) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in text.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn orthonormal_frame(axis: Vec3) -> (Vec3, Vec3, Vec3) {
    let a = axis.normalize();
    let helper = if a.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = a.cross(&helper).normalize();
    let v = a.cross(&u);
    (a, u, v)
}

fn sample_shape(shape: &ShapeSpec, points: usize, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(points);
    match shape {
        ShapeSpec::Box { size } => {
            for _ in 0..points {
                out.push(Vec3::new(
                    rng.random_range(-0.5..0.5) * size[0],
                    rng.random_range(-0.5..0.5) * size[1],
                    rng.random_range(-0.5..0.5) * size[2],
                ));
            }
        }
        ShapeSpec::Cylinder { radius, length, axis } => {
            let (a, u, v) = orthonormal_frame(Vec3::new(axis[0], axis[1], axis[2]));
            for _ in 0..points {
                let r = radius * rng.random_range(0.0..1.0f64).sqrt();
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                let h = rng.random_range(-0.5..0.5) * length;
                out.push(a * h + u * (r * theta.cos()) + v * (r * theta.sin()));
            }
        }
        ShapeSpec::Plane { size } => {
            for _ in 0..points {
                out.push(Vec3::new(
                    rng.random_range(-0.5..0.5) * size[0],
                    rng.random_range(-0.5..0.5) * size[1],
                    0.0,
                ));
            }
        }
        ShapeSpec::Segment { length, axis } => {
            let a = Vec3::new(axis[0], axis[1], axis[2]).normalize();
            for i in 0..points {
                let t = if points > 1 {
                    i as f64 / (points - 1) as f64 - 0.5
                } else {
                    0.0
                };
                out.push(a * (t * length));
            }
        }
    }
    out
}

fn object_pose(o: &ObjectSpec) -> RigidTransform {
    RigidTransform::new(
        RotationMatrix::rot_z(o.yaw_deg.to_radians()),
        Vec3::new(o.position[0], o.position[1], o.position[2]),
    )
}

fn gripper_pose(g: &GripperSpec) -> RigidTransform {
    let r = RotationMatrix::rot_z(g.rpy_deg[2].to_radians())
        .compose(&RotationMatrix::rot_y(g.rpy_deg[1].to_radians()))
        .compose(&RotationMatrix::rot_x(g.rpy_deg[0].to_radians()));
    RigidTransform::new(r, Vec3::new(g.position[0], g.position[1], g.position[2]))
}

// ---------------------------------------------------------------------------
// Runtime scene
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum JointKind {
    Revolute { point: Vec3, axis: UnitVector },
    Prismatic { axis: Vec3 },
}

#[derive(Debug, Clone)]
struct Articulation {
    object: String,
    kind: JointKind,
    moving_parts: Vec<String>,
    q: f64,
}

#[derive(Debug, Clone)]
struct OrbitTracker {
    subject: ComponentKey,
    pivot_point: Vec3,
    pivot_axis: Vec3,
    last_angle: Option<f64>,
    accumulated: f64,
}

#[derive(Debug, Clone)]
enum SuccessPredicate {
    PartRotated { object: String, min_radians: f64 },
    PartTranslated { object: String, min_meters: f64 },
    Reach { subject: ComponentKey, target: ComponentKey, max_meters: f64 },
    Above {
        subject: ComponentKey,
        target: ComponentKey,
        max_horizontal: f64,
        min_height: f64,
        max_height: f64,
    },
    Intersects { a: ComponentKey, b: ComponentKey, margin: f64 },
    Orbit { min_radians: f64 },
}

pub struct Scene {
    spec: SceneSpec,
    registry: ComponentRegistry,
    articulations: Vec<Articulation>,
    orbit: Option<OrbitTracker>,
    predicate: Option<SuccessPredicate>,
    build_clouds: BTreeMap<ComponentKey, PointCloud>,
}

fn key2(pair: &Option<[String; 2]>, what: &str) -> Result<ComponentKey, SceneError> {
    let p = pair
        .as_ref()
        .ok_or_else(|| SceneError::Spec(format!("success predicate is missing `{what}` = [part, object]")))?;
    Ok(ComponentKey::new(&p[0], &p[1]))
}

/// Samples every part into the registry, places the gripper at its home pose,
/// and prepares joints and the success predicate. Deterministic for a fixed
/// `seed`.
pub fn build_scene(spec: &SceneSpec, seed: u64) -> Result<Scene, SceneError> {
    let mut spec = spec.clone();
    spec.seed = seed;
    let mut registry = ComponentRegistry::new(gripper_pose(&spec.gripper));
    let mut build_clouds = BTreeMap::new();

    for object in &spec.objects {
        let pose = object_pose(object);
        let mut seen = std::collections::BTreeSet::new();
        for part in &object.parts {
            if !seen.insert(part.name.clone()) {
                return Err(SceneError::Spec(format!(
                    "object `{}` has duplicate part `{}`",
                    object.name, part.name
                )));
            }
            if part.points < 20 {
                return Err(SceneError::Spec(format!(
                    "part `{}` of `{}` has {} points; at least 20 required",
                    part.name, object.name, part.points
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(&format!("{}/{}", object.name, part.name)));
            let center = Vec3::new(part.center[0], part.center[1], part.center[2]);
            let points: Vec<Vec3> = sample_shape(&part.shape, part.points, &mut rng)
                .into_iter()
                .map(|p| pose.apply(&(p + center)))
                .collect();
            let cloud = PointCloud::new(points).map_err(|e| SceneError::Spec(e.to_string()))?;
            let key = ComponentKey::new(&part.name, &object.name);
            build_clouds.insert(key.clone(), cloud.clone());
            registry.register(key, cloud);
        }
    }

    let mut articulations = Vec::new();
    for object in &spec.objects {
        let Some(joint) = &object.joint else { continue };
        for part in &joint.moving_parts {
            let key = ComponentKey::new(part, &object.name);
            if !build_clouds.contains_key(&key) {
                return Err(SceneError::Spec(format!(
                    "joint of `{}` names unknown moving part `{part}`",
                    object.name
                )));
            }
        }
        let pose = object_pose(object);
        let kind = match joint.kind.as_str() {
            "revolute" => {
                let part = joint.axis_part.as_ref().ok_or_else(|| {
                    SceneError::Spec(format!("revolute joint of `{}` needs axis_part", object.name))
                })?;
                let key = ComponentKey::new(part, &object.name);
                let cloud = build_clouds
                    .get(&key)
                    .ok_or_else(|| SceneError::Spec(format!("axis part `{part}` of `{}` not found", object.name)))?;
                JointKind::Revolute {
                    point: cloud.centroid(),
                    axis: major_axis(cloud)?,
                }
            }
            "prismatic" => {
                let axis = joint.axis.ok_or_else(|| {
                    SceneError::Spec(format!("prismatic joint of `{}` needs an axis", object.name))
                })?;
                JointKind::Prismatic {
                    axis: pose.rotation.apply(&Vec3::new(axis[0], axis[1], axis[2])).normalize(),
                }
            }
            other => return Err(SceneError::Spec(format!("unknown joint kind `{other}`"))),
        };
        articulations.push(Articulation {
            object: object.name.clone(),
            kind,
            moving_parts: joint.moving_parts.clone(),
            q: 0.0,
        });
    }

    let mut orbit = None;
    let predicate = match &spec.success {
        None => None,
        Some(s) => Some(match s.kind.as_str() {
            "part-rotated" => SuccessPredicate::PartRotated {
                object: s
                    .object
                    .clone()
                    .ok_or_else(|| SceneError::Spec("part-rotated needs `object`".into()))?,
                min_radians: s
                    .min_degrees
                    .ok_or_else(|| SceneError::Spec("part-rotated needs `min_degrees`".into()))?
                    .to_radians(),
            },
            "part-translated" => SuccessPredicate::PartTranslated {
                object: s
                    .object
                    .clone()
                    .ok_or_else(|| SceneError::Spec("part-translated needs `object`".into()))?,
                min_meters: s
                    .min_meters
                    .ok_or_else(|| SceneError::Spec("part-translated needs `min_meters`".into()))?,
            },
            "reach" => SuccessPredicate::Reach {
                subject: key2(&s.subject, "subject")?,
                target: key2(&s.target, "target")?,
                max_meters: s.max_meters.ok_or_else(|| SceneError::Spec("reach needs `max_meters`".into()))?,
            },
            "above" => SuccessPredicate::Above {
                subject: key2(&s.subject, "subject")?,
                target: key2(&s.target, "target")?,
                max_horizontal: s
                    .max_horizontal
                    .ok_or_else(|| SceneError::Spec("above needs `max_horizontal`".into()))?,
                min_height: s.min_height.unwrap_or(0.0),
                max_height: s.max_height.unwrap_or(f64::INFINITY),
            },
            "intersects" => SuccessPredicate::Intersects {
                a: key2(&s.subject, "subject")?,
                b: key2(&s.target, "target")?,
                margin: s.margin.unwrap_or(0.0),
            },
            "orbit" => {
                let subject = key2(&s.subject, "subject")?;
                let pivot = key2(&s.pivot, "pivot")?;
                let pivot_cloud = build_clouds
                    .get(&pivot)
                    .ok_or_else(|| SceneError::Spec(format!("orbit pivot `{}` not found", pivot.text())))?;
                let pivot_point = pivot_cloud.centroid();
                let pivot_axis = major_axis(pivot_cloud)?.vector();
                let initial = build_clouds
                    .get(&subject)
                    .map(|c| radial_angle(&c.centroid(), &pivot_point, &pivot_axis))
                    .unwrap_or(None);
                orbit = Some(OrbitTracker {
                    subject: subject.clone(),
                    pivot_point,
                    pivot_axis,
                    last_angle: initial,
                    accumulated: 0.0,
                });
                SuccessPredicate::Orbit {
                    min_radians: s
                        .min_degrees
                        .ok_or_else(|| SceneError::Spec("orbit needs `min_degrees`".into()))?
                        .to_radians(),
                }
            }
            other => return Err(SceneError::Spec(format!("unknown success kind `{other}`"))),
        }),
    };

    Ok(Scene {
        spec,
        registry,
        articulations,
        orbit,
        predicate,
        build_clouds,
    })
}

impl Scene {
    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn task(&self) -> &str {
        &self.spec.task
    }

    pub fn registry(&self) -> &ComponentRegistry {
        &self.registry
    }

    pub fn registry_mut(&mut self) -> &mut ComponentRegistry {
        &mut self.registry
    }

    /// Joint coordinate of an articulated object (radians or meters).
    pub fn joint_value(&self, object: &str) -> Option<f64> {
        self.articulations.iter().find(|a| a.object == object).map(|a| a.q)
    }

    /// Net orbit angle accumulated by the tracked subject, radians.
    pub fn orbit_accumulated(&self) -> f64 {
        self.orbit.as_ref().map(|o| o.accumulated).unwrap_or(0.0)
    }

    fn project_articulation(&mut self, index: usize) {
        let articulation = &self.articulations[index];
        // Least-squares joint coordinate from the raw-moved centroids of the
        // moving parts versus their build centroids.
        let q = match &articulation.kind {
            JointKind::Revolute { point, axis } => {
                let a = axis.vector();
                let mut sin_sum = 0.0;
                let mut cos_sum = 0.0;
                for part in &articulation.moving_parts {
                    let key = ComponentKey::new(part, &articulation.object);
                    let (Some(build), Ok(now)) =
                        (self.build_clouds.get(&key), self.registry.cloud(&key, Timestamp::Current))
                    else {
                        continue;
                    };
                    let u = build.centroid() - point;
                    let v = now.centroid() - point;
                    let u = u - a * u.dot(&a);
                    let v = v - a * v.dot(&a);
                    cos_sum += u.dot(&v);
                    sin_sum += u.cross(&v).dot(&a);
                }
                f64::atan2(sin_sum, cos_sum)
            }
            JointKind::Prismatic { axis } => {
                let mut total = 0.0;
                let mut count = 0.0;
                for part in &articulation.moving_parts {
                    let key = ComponentKey::new(part, &articulation.object);
                    let (Some(build), Ok(now)) =
                        (self.build_clouds.get(&key), self.registry.cloud(&key, Timestamp::Current))
                    else {
                        continue;
                    };
                    total += (now.centroid() - build.centroid()).dot(axis);
                    count += 1.0;
                }
                if count > 0.0 {
                    total / count
                } else {
                    0.0
                }
            }
        };

        let articulation = &mut self.articulations[index];
        articulation.q = q;
        let object = articulation.object.clone();
        let moving = articulation.moving_parts.clone();
        let kind = articulation.kind.clone();
        // Place every part of the object at the joint-consistent pose: moving
        // parts at coordinate q, everything else back at its build pose.
        let keys: Vec<ComponentKey> = self.build_clouds.keys().filter(|k| k.object == object).cloned().collect();
        for key in keys {
            let build = self.build_clouds.get(&key).unwrap().clone();
            let placed = if moving.contains(&key.part) {
                match &kind {
                    JointKind::Revolute { point, axis } => {
                        crate::geometry::rotate_about_point(&build, point, &rodrigues(axis, q))
                    }
                    JointKind::Prismatic { axis } => build.translated(&(axis * q)),
                }
            } else {
                build
            };
            self.registry.set_current_cloud(&key, placed);
        }
    }

    fn update_orbit_tracker(&mut self) {
        let Some(tracker) = &mut self.orbit else { return };
        let Ok(cloud) = self.registry.cloud(&tracker.subject, Timestamp::Current) else {
            return;
        };
        let Some(angle) = radial_angle(&cloud.centroid(), &tracker.pivot_point, &tracker.pivot_axis) else {
            return;
        };
        if let Some(last) = tracker.last_angle {
            let mut delta = angle - last;
            while delta > std::f64::consts::PI {
                delta -= std::f64::consts::TAU;
            }
            while delta < -std::f64::consts::PI {
                delta += std::f64::consts::TAU;
            }
            tracker.accumulated += delta;
        }
        tracker.last_angle = Some(angle);
    }

    fn step_waypoint(&mut self, waypoint: &RigidTransform) {
        let motion = RigidTransform::relative_motion(&self.registry.gripper_pose(), waypoint);
        self.registry.apply_gripper_motion(&motion);
        if let Some(held) = self.registry.grasped_object().map(str::to_string) {
            if let Some(idx) = self.articulations.iter().position(|a| a.object == held) {
                self.project_articulation(idx);
            }
        }
        self.update_orbit_tracker();
    }

    /// Evaluates the scene's registered success predicate for `task`.
    pub fn check_success(&self, task: &str) -> Result<bool, SceneError> {
        if task != self.spec.task {
            return Err(SceneError::UnknownTask(task.to_string()));
        }
        let Some(predicate) = &self.predicate else {
            return Ok(false);
        };
        Ok(match predicate {
            SuccessPredicate::PartRotated { object, min_radians } => {
                self.joint_value(object).map(|q| q.abs() >= *min_radians).unwrap_or(false)
            }
            SuccessPredicate::PartTranslated { object, min_meters } => {
                self.joint_value(object).map(|q| q.abs() >= *min_meters).unwrap_or(false)
            }
            SuccessPredicate::Reach {
                subject,
                target,
                max_meters,
            } => {
                let a = self.registry.cloud(subject, Timestamp::Current)?;
                let b = self.registry.cloud(target, Timestamp::Current)?;
                (a.centroid() - b.centroid()).norm() <= *max_meters
            }
            SuccessPredicate::Above {
                subject,
                target,
                max_horizontal,
                min_height,
                max_height,
            } => {
                let s = self.registry.cloud(subject, Timestamp::Current)?.centroid();
                let t = self.registry.cloud(target, Timestamp::Current)?.centroid();
                let horizontal = ((s.x - t.x).powi(2) + (s.y - t.y).powi(2)).sqrt();
                let height = s.z - t.z;
                horizontal <= *max_horizontal && height >= *min_height && height <= *max_height
            }
            SuccessPredicate::Intersects { a, b, margin } => {
                let ca = self.registry.cloud(a, Timestamp::Current)?;
                let cb = self.registry.cloud(b, Timestamp::Current)?;
                aabb_overlap(&ca, &cb, *margin)
            }
            SuccessPredicate::Orbit { min_radians } => self.orbit_accumulated().abs() >= *min_radians,
        })
    }
}

/// Angle of a point about an axis line, measured in a fixed frame ⊥ the axis;
/// `None` on the axis itself.
fn radial_angle(point: &Vec3, pivot: &Vec3, axis: &Vec3) -> Option<f64> {
    let rel = point - pivot;
    let radial = rel - axis * rel.dot(axis);
    if radial.norm() < 1e-9 {
        return None;
    }
    let (_, u, v) = orthonormal_frame(*axis);
    Some(f64::atan2(radial.dot(&v), radial.dot(&u)))
}

fn aabb_overlap(a: &PointCloud, b: &PointCloud, margin: f64) -> bool {
    let bounds = |pc: &PointCloud| {
        let mut lo = Vec3::new(f64::MAX, f64::MAX, f64::MAX);
        let mut hi = Vec3::new(f64::MIN, f64::MIN, f64::MIN);
        for p in pc.points() {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    };
    let (alo, ahi) = bounds(a);
    let (blo, bhi) = bounds(b);
    (0..3).all(|i| alo[i] - margin <= bhi[i] && blo[i] - margin <= ahi[i])
}

impl TrajectoryWorld for Scene {
    fn registry(&self) -> &ComponentRegistry {
        &self.registry
    }

    fn registry_mut(&mut self) -> &mut ComponentRegistry {
        &mut self.registry
    }

    fn apply_trajectory(&mut self, trajectory: &Trajectory) -> Result<(), SolverError> {
        for (i, waypoint) in trajectory.waypoints.iter().enumerate() {
            self.step_waypoint(waypoint);
            for (idx, event) in &trajectory.events {
                if *idx == i {
                    match event {
                        GripEvent::Grasp { object: Some(object) } => self.registry.set_grasp(object)?,
                        GripEvent::Grasp { object: None } => {}
                        GripEvent::Release => self.registry.clear_grasp()?,
                    }
                }
            }
        }
        Ok(())
    }
}

/// Randomizes non-fixed object poses: uniform xy translation within
/// ±`pos_jitter` meters and yaw within ±`yaw_jitter_deg` degrees.
pub fn jitter_spec(spec: &SceneSpec, rng: &mut ChaCha8Rng, pos_jitter: f64, yaw_jitter_deg: f64) -> SceneSpec {
    let mut out = spec.clone();
    for object in &mut out.objects {
        if object.fixed {
            continue;
        }
        object.position[0] += rng.random_range(-pos_jitter..=pos_jitter);
        object.position[1] += rng.random_range(-pos_jitter..=pos_jitter);
        object.yaw_deg += rng.random_range(-yaw_jitter_deg..=yaw_jitter_deg);
    }
    out
}

// ---------------------------------------------------------------------------
// Ground-truth label rendering
// ---------------------------------------------------------------------------

/// Overhead camera for label rendering: pose maps camera frame to world.
#[derive(Debug, Clone)]
pub struct RenderCamera {
    pub width: usize,
    pub height: usize,
    pub intrinsics: CameraIntrinsics,
    pub pose: RigidTransform,
}

impl RenderCamera {
    /// Camera at `eye` viewing `target` with world +z as up.
    pub fn look_at(eye: Vec3, target: Vec3) -> RigidTransform {
        let forward = (target - eye).normalize();
        let right = forward.cross(&Vec3::z()).normalize();
        let down = forward.cross(&right);
        let rotation = RotationMatrix::from_matrix(crate::geometry::Mat3::from_columns(&[right, down, forward]))
            .expect("look-at basis is orthonormal");
        RigidTransform::new(rotation, eye)
    }
}

impl Default for RenderCamera {
    fn default() -> Self {
        // A front-top view: vertical structures (hinges, sticks) stay visible
        // instead of collapsing to a single pixel under a straight-down view.
        Self {
            width: 256,
            height: 256,
            intrinsics: CameraIntrinsics {
                fx: 300.0,
                fy: 300.0,
                cx: 128.0,
                cy: 128.0,
            },
            pose: Self::look_at(Vec3::new(0.0, -0.35, 1.0), Vec3::new(0.0, 0.3, 0.0)),
        }
    }
}

/// Per-part ground-truth masks plus the shared depth image: each cloud point
/// is splatted to its pixel, nearest depth wins pixel ownership.
pub struct LabelRender {
    pub masks: Vec<(ComponentKey, Mask)>,
    pub depth: DepthImage,
    pub intrinsics: CameraIntrinsics,
}

pub fn render_labels(scene: &Scene, camera: &RenderCamera) -> LabelRender {
    let keys: Vec<ComponentKey> = scene.registry.keys().cloned().collect();
    let mut depth = DepthImage::new(camera.width, camera.height);
    let mut owner: Vec<Option<usize>> = vec![None; camera.width * camera.height];
    let mut masks: Vec<(ComponentKey, Mask)> = keys
        .iter()
        .map(|k| (k.clone(), Mask::new(camera.width, camera.height)))
        .collect();

    for (ki, key) in keys.iter().enumerate() {
        let cloud = scene.registry.cloud(key, Timestamp::Current).expect("registered key");
        for p in cloud.points() {
            let local = camera.pose.rotation.transpose().apply(&(p - camera.pose.translation));
            if local.z <= 0.05 {
                continue;
            }
            let u = (camera.intrinsics.fx * local.x / local.z + camera.intrinsics.cx).round();
            let v = (camera.intrinsics.fy * local.y / local.z + camera.intrinsics.cy).round();
            if u < 0.0 || v < 0.0 || u >= camera.width as f64 || v >= camera.height as f64 {
                continue;
            }
            let (r, c) = (v as usize, u as usize);
            let nearer = match depth.get(r, c) {
                Some(existing) => local.z < existing,
                None => true,
            };
            if nearer {
                if let Some(previous) = owner[r * camera.width + c] {
                    masks[previous].1.set(r, c, false);
                }
                depth.set(r, c, local.z);
                owner[r * camera.width + c] = Some(ki);
                masks[ki].1.set(r, c, true);
            }
        }
    }
    LabelRender {
        masks,
        depth,
        intrinsics: camera.intrinsics,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn door_toml() -> &'static str {
        r#"
format = "scene-v1"
task = "open the door"

[gripper]
position = [0.0, 0.25, 0.45]
rpy_deg = [180.0, 0.0, 0.0]

[[objects]]
name = "the door"
position = [0.25, 0.45, 0.0]

[[objects.parts]]
name = "the hinge"
shape = { kind = "segment", length = 0.4, axis = [0.0, 0.0, 1.0] }
center = [0.25, 0.0, 0.2]
points = 24

[[objects.parts]]
name = "the surface"
shape = { kind = "box", size = [0.48, 0.02, 0.38] }
center = [0.0, 0.0, 0.2]
points = 60

[[objects.parts]]
name = "the handle"
shape = { kind = "segment", length = 0.12, axis = [0.0, 0.0, 1.0] }
center = [-0.2, -0.03, 0.2]
points = 24

[objects.joint]
kind = "revolute"
axis_part = "the hinge"
moving_parts = ["the surface", "the handle"]

[success]
kind = "part-rotated"
object = "the door"
min_degrees = 45.0
"#
    }

    #[test]
    fn build_scene_is_deterministic_and_registers_parts() {
        let spec = SceneSpec::from_toml(door_toml()).unwrap();
        let a = build_scene(&spec, 7).unwrap();
        let b = build_scene(&spec, 7).unwrap();
        let key = ComponentKey::new("the surface", "the door");
        assert_eq!(
            a.registry.cloud(&key, Timestamp::Current).unwrap(),
            b.registry.cloud(&key, Timestamp::Current).unwrap()
        );
        let c = build_scene(&spec, 8).unwrap();
        assert_ne!(
            a.registry.cloud(&key, Timestamp::Current).unwrap(),
            c.registry.cloud(&key, Timestamp::Current).unwrap()
        );
        assert_eq!(a.registry.parts_of("the door").len(), 3);
    }

    #[test]
    fn malformed_specs_error() {
        assert!(matches!(
            SceneSpec::from_toml("format = \"scene-v2\"\ntask = \"x\"\n[gripper]\nposition = [0,0,0]"),
            Err(SceneError::Spec(_))
        ));
        assert!(SceneSpec::from_toml("this is not toml at all [").is_err());

        let mut spec = SceneSpec::from_toml(door_toml()).unwrap();
        spec.objects[0].parts[0].points = 5;
        assert!(matches!(build_scene(&spec, 1), Err(SceneError::Spec(_))));
    }

    #[test]
    fn door_handle_follows_hinge_arc() {
        let spec = SceneSpec::from_toml(door_toml()).unwrap();
        let mut scene = build_scene(&spec, 3).unwrap();
        let handle = ComponentKey::new("the handle", "the door");
        let hinge = ComponentKey::new("the hinge", "the door");
        let hinge_point = scene.registry.cloud(&hinge, Timestamp::Current).unwrap().centroid();
        let start = scene.registry.cloud(&handle, Timestamp::Current).unwrap().centroid();
        let radius0 = ((start.x - hinge_point.x).powi(2) + (start.y - hinge_point.y).powi(2)).sqrt();

        // Grasp the handle and move the gripper along a 60° arc in three
        // steps; the joint projection keeps the door rigid about the hinge.
        scene.registry_mut().set_gripper_home(RigidTransform::new(RotationMatrix::identity(), start));
        scene.registry_mut().begin_stage(1);
        scene.registry_mut().set_grasp("the door").unwrap();
        for step in 1..=3 {
            let angle = 60f64.to_radians() * step as f64 / 3.0;
            let rot = RotationMatrix::rot_z(angle);
            let target = rot.apply(&(start - hinge_point)) + hinge_point;
            let pose = RigidTransform::new(rot, target);
            let traj = Trajectory {
                waypoints: vec![pose],
                events: vec![],
                stage_index: 1,
            };
            scene.apply_trajectory(&traj).unwrap();
        }

        let q = scene.joint_value("the door").unwrap();
        assert_abs_diff_eq!(q.to_degrees(), 60.0, epsilon = 1.0);
        assert!(scene.check_success("open the door").unwrap());

        // Handle-to-hinge distance is preserved.
        let now = scene.registry.cloud(&handle, Timestamp::Current).unwrap().centroid();
        let radius = ((now.x - hinge_point.x).powi(2) + (now.y - hinge_point.y).powi(2)).sqrt();
        assert_abs_diff_eq!(radius, radius0, epsilon = 1e-6);

        // The hinge itself never moves.
        let hinge_now = scene.registry.cloud(&hinge, Timestamp::Current).unwrap().centroid();
        assert_abs_diff_eq!((hinge_now - hinge_point).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rigid_conservation_within_parts() {
        let spec = SceneSpec::from_toml(door_toml()).unwrap();
        let mut scene = build_scene(&spec, 5).unwrap();
        let key = ComponentKey::new("the surface", "the door");
        let before = scene.registry.cloud(&key, Timestamp::Current).unwrap();
        scene.registry_mut().begin_stage(1);
        scene.registry_mut().set_grasp("the door").unwrap();
        let traj = Trajectory {
            waypoints: vec![RigidTransform::new(RotationMatrix::rot_z(0.3), Vec3::new(0.05, -0.02, 0.1))],
            events: vec![],
            stage_index: 1,
        };
        scene.apply_trajectory(&traj).unwrap();
        let after = scene.registry.cloud(&key, Timestamp::Current).unwrap();
        for i in (0..before.len()).step_by(7) {
            for j in (0..before.len()).step_by(11) {
                let d0 = (before.points()[i] - before.points()[j]).norm();
                let d1 = (after.points()[i] - after.points()[j]).norm();
                assert_abs_diff_eq!(d0, d1, epsilon = 1e-9);
            }
        }
    }

    fn drawer_toml() -> &'static str {
        r#"
format = "scene-v1"
task = "open the drawer"

[gripper]
position = [0.0, 0.25, 0.45]
rpy_deg = [180.0, 0.0, 0.0]

[[objects]]
name = "the drawer"
position = [0.0, 0.55, 0.15]

[[objects.parts]]
name = "the front"
shape = { kind = "box", size = [0.3, 0.02, 0.2] }
center = [0.0, -0.15, 0.0]
points = 40

[[objects.parts]]
name = "the handle"
shape = { kind = "segment", length = 0.1, axis = [1.0, 0.0, 0.0] }
center = [0.0, -0.17, 0.0]
points = 24

[[objects.parts]]
name = "the body"
shape = { kind = "box", size = [0.28, 0.26, 0.18] }
center = [0.0, 0.0, 0.0]
points = 60

[objects.joint]
kind = "prismatic"
axis = [0.0, -1.0, 0.0]
moving_parts = ["the front", "the handle", "the body"]

[success]
kind = "part-translated"
object = "the drawer"
min_meters = 0.2
"#
    }

    #[test]
    fn drawer_slides_along_its_axis() {
        let spec = SceneSpec::from_toml(drawer_toml()).unwrap();
        let mut scene = build_scene(&spec, 2).unwrap();
        let handle = ComponentKey::new("the handle", "the drawer");
        let body = ComponentKey::new("the body", "the drawer");
        let start_handle = scene.registry.cloud(&handle, Timestamp::Current).unwrap().centroid();
        let start_body = scene.registry.cloud(&body, Timestamp::Current).unwrap().centroid();

        scene
            .registry_mut()
            .set_gripper_home(RigidTransform::new(RotationMatrix::identity(), start_handle));
        scene.registry_mut().begin_stage(1);
        scene.registry_mut().set_grasp("the drawer").unwrap();
        // Pull 0.3 m toward the robot with a slight sideways drift; the
        // prismatic projection keeps only the slide component.
        let target = start_handle + Vec3::new(0.02, -0.3, 0.01);
        let traj = Trajectory {
            waypoints: vec![RigidTransform::new(RotationMatrix::identity(), target)],
            events: vec![],
            stage_index: 1,
        };
        scene.apply_trajectory(&traj).unwrap();

        let q = scene.joint_value("the drawer").unwrap();
        assert_abs_diff_eq!(q, 0.3, epsilon = 1e-9);
        let now_body = scene.registry.cloud(&body, Timestamp::Current).unwrap().centroid();
        assert_abs_diff_eq!((now_body - (start_body + Vec3::new(0.0, -0.3, 0.0))).norm(), 0.0, epsilon = 1e-9);
        assert!(scene.check_success("open the drawer").unwrap());
        assert!(matches!(
            scene.check_success("paint the drawer"),
            Err(SceneError::UnknownTask(_))
        ));
    }

    #[test]
    fn jitter_respects_fixed_objects() {
        let mut spec = SceneSpec::from_toml(door_toml()).unwrap();
        spec.objects[0].fixed = false;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let jittered = jitter_spec(&spec, &mut rng, 0.05, 15.0);
        assert_ne!(jittered.objects[0].position, spec.objects[0].position);
        assert!((jittered.objects[0].position[0] - spec.objects[0].position[0]).abs() <= 0.05);
        assert!((jittered.objects[0].yaw_deg - spec.objects[0].yaw_deg).abs() <= 15.0);

        spec.objects[0].fixed = true;
        let pinned = jitter_spec(&spec, &mut rng, 0.05, 15.0);
        assert_eq!(pinned.objects[0].position, spec.objects[0].position);
    }

    #[test]
    fn spec_roundtrips_through_toml() {
        let spec = SceneSpec::from_toml(drawer_toml()).unwrap();
        let text = spec.to_toml();
        let again = SceneSpec::from_toml(&text).unwrap();
        assert_eq!(again.objects.len(), spec.objects.len());
        assert_eq!(again.task, spec.task);
        let a = build_scene(&spec, 11).unwrap();
        let b = build_scene(&again, 11).unwrap();
        let key = ComponentKey::new("the body", "the drawer");
        assert_eq!(
            a.registry.cloud(&key, Timestamp::Current).unwrap(),
            b.registry.cloud(&key, Timestamp::Current).unwrap()
        );
    }

    #[test]
    fn render_labels_projects_every_part() {
        let spec = SceneSpec::from_toml(door_toml()).unwrap();
        let scene = build_scene(&spec, 4).unwrap();
        let render = render_labels(&scene, &RenderCamera::default());
        for (key, mask) in &render.masks {
            assert!(
                mask.count_true() >= 3,
                "part {} rendered only {} pixels",
                key.text(),
                mask.count_true()
            );
        }
        // Depth pixels correspond exactly to the union of masks.
        let mut union = 0;
        for (_, mask) in &render.masks {
            union += mask.count_true();
        }
        let mut valid = 0;
        for r in 0..256 {
            for c in 0..256 {
                if render.depth.get(r, c).is_some() {
                    valid += 1;
                }
            }
        }
        assert_eq!(union, valid);
    }

    #[test]
    fn orbit_tracker_accumulates_full_turn() {
        let toml = r#"
format = "scene-v1"
task = "stir"

[gripper]
position = [0.0, 0.25, 0.45]
rpy_deg = [180.0, 0.0, 0.0]

[[objects]]
name = "the container"
fixed = true
position = [0.1, 0.35, 0.0]

[[objects.parts]]
name = "the body"
shape = { kind = "cylinder", radius = 0.05, length = 0.15 }
center = [0.0, 0.0, 0.075]
points = 50

[[objects]]
name = "the stick"
fixed = true
position = [0.13, 0.35, 0.12]

[[objects.parts]]
name = "the body"
shape = { kind = "cylinder", radius = 0.004, length = 0.12 }
center = [0.0, 0.0, 0.0]
points = 30

[success]
kind = "orbit"
subject = ["the body", "the stick"]
pivot = ["the body", "the container"]
min_degrees = 350.0
"#;
        let spec = SceneSpec::from_toml(toml).unwrap();
        let mut scene = build_scene(&spec, 6).unwrap();
        let stick_start = scene
            .registry
            .cloud(&ComponentKey::new("the body", "the stick"), Timestamp::Current)
            .unwrap()
            .centroid();
        scene
            .registry_mut()
            .set_gripper_home(RigidTransform::new(RotationMatrix::identity(), stick_start));
        scene.registry_mut().begin_stage(1);
        scene.registry_mut().set_grasp("the stick").unwrap();
        let pivot = Vec3::new(0.1, 0.35, stick_start.z);
        for i in 1..=12 {
            let angle = 30f64.to_radians() * i as f64;
            let target = RotationMatrix::rot_z(angle).apply(&(stick_start - pivot)) + pivot;
            let traj = Trajectory {
                waypoints: vec![RigidTransform::new(RotationMatrix::identity(), target)],
                events: vec![],
                stage_index: 1,
            };
            scene.apply_trajectory(&traj).unwrap();
        }
        assert_abs_diff_eq!(scene.orbit_accumulated().to_degrees(), 360.0, epsilon = 1.0);
        assert!(scene.check_success("stir").unwrap());
    }
}
