//! SE(3) sub-goal solving and control-point trajectory generation.
//!
//! The sub-goal objective is the mean of the stage's sub-goal costs evaluated
//! with the moving clouds carried by the candidate pose, plus a translation
//! regularizer α‖t − t₀‖₂ and a rotation regularizer β‖euler(R·R₀⁻¹)‖₁ that
//! anchor the solution at the previous pose. Interior control points are
//! interpolated between the start and the solved pose and refined against the
//! path costs with the same regularizers anchored at their interpolated pose.

use crate::cost::{compile_stage, mean_cost, CostError, CostSet};
use crate::dsl::Stage;
use crate::geometry::{euler_of, interpolate_pose, PointCloud, RigidTransform, RotationMatrix, Vec3};
use crate::optim::{minimize, MinimizeOptions};
use crate::registry::{CloudSource, ComponentKey, ComponentRegistry, RegistryError, Timestamp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::cell::RefCell;
use thiserror::Error;

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Translation regularizer weight.
    pub alpha: f64,
    /// Rotation regularizer weight.
    pub beta: f64,
    /// Iteration cap for the gradient phase of each solve.
    pub max_iterations: usize,
    /// A solve converged when the residual (mean constraint cost, without
    /// regularizers) is at or below this.
    pub convergence_tol: f64,
    /// Central finite-difference step, meters and radians.
    pub fd_step: f64,
    /// Target spacing between interior control points, meters.
    pub control_point_spacing: f64,
    /// Inclusive bounds on the interior control-point count.
    pub control_point_bounds: (usize, usize),
    /// Perturbed restarts attempted when the first solve misses the tolerance.
    pub restarts: usize,
    /// Seed for the restart perturbations.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: 0.02,
            beta: 0.075,
            max_iterations: 150,
            convergence_tol: 1e-2,
            fd_step: 1e-4,
            control_point_spacing: 0.05,
            control_point_bounds: (3, 20),
            restarts: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GripEvent {
    Grasp { object: Option<String> },
    Release,
}

/// A sequence of gripper poses plus grasp/release events at waypoint indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub waypoints: Vec<RigidTransform>,
    pub events: Vec<(usize, GripEvent)>,
    pub stage_index: usize,
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("solver did not converge: residual {residual:.6}{}", control_point.map(|i| format!(" at control point {i}")).unwrap_or_default())]
    NoConvergence {
        residual: f64,
        best: RigidTransform,
        control_point: Option<usize>,
    },
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

/// Read-only registry overlay that carries the moving clouds by a candidate
/// relative motion. Previous-timestamp and stationary clouds are untouched.
pub struct PoseCandidateView<'a> {
    registry: &'a ComponentRegistry,
    motion: RigidTransform,
}

impl<'a> PoseCandidateView<'a> {
    pub fn new(registry: &'a ComponentRegistry, motion: RigidTransform) -> Self {
        Self { registry, motion }
    }
}

impl CloudSource for PoseCandidateView<'_> {
    fn cloud(&self, key: &ComponentKey, ts: Timestamp) -> Result<PointCloud, RegistryError> {
        let base = self.registry.cloud(key, ts)?;
        if ts == Timestamp::Current && self.registry.is_moving(key) {
            Ok(base.transformed(&self.motion.rotation, &self.motion.translation))
        } else {
            Ok(base)
        }
    }
}

/// (pose, relative world-frame motion from `pose0`) encoded by a 6-vector:
/// rotation vector relative to R₀ followed by the absolute translation.
fn decode_params(x: &[f64], pose0: &RigidTransform) -> (RigidTransform, RigidTransform) {
    let w = Vec3::new(x[0], x[1], x[2]);
    let t = Vec3::new(x[3], x[4], x[5]);
    let rel_rot = RotationMatrix::from_rotation_vector(&w);
    let pose = RigidTransform::new(rel_rot.compose(&pose0.rotation), t);
    let motion = RigidTransform::new(rel_rot, t - rel_rot.apply(&pose0.translation));
    (pose, motion)
}

struct ObjectiveContext<'a> {
    registry: &'a ComponentRegistry,
    costs: &'a [crate::cost::CostFunction],
    pose0: RigidTransform,
    anchor: RigidTransform,
    alpha: f64,
    beta: f64,
    error: RefCell<Option<CostError>>,
}

impl ObjectiveContext<'_> {
    fn objective(&self, x: &[f64]) -> f64 {
        let (pose, motion) = decode_params(x, &self.pose0);
        let view = PoseCandidateView::new(self.registry, motion);
        let cost = match mean_cost(self.costs, &view) {
            Ok(v) => v,
            Err(e) => {
                let mut slot = self.error.borrow_mut();
                if slot.is_none() {
                    *slot = Some(e);
                }
                return f64::INFINITY;
            }
        };
        let translation_reg = self.alpha * (pose.translation - self.anchor.translation).norm();
        let rel_to_anchor = pose.rotation.compose(&self.anchor.rotation.transpose());
        let rotation_reg = self.beta * euler_of(&rel_to_anchor).l1_norm();
        cost + translation_reg + rotation_reg
    }

    fn residual(&self, x: &[f64]) -> Result<f64, CostError> {
        let (_, motion) = decode_params(x, &self.pose0);
        let view = PoseCandidateView::new(self.registry, motion);
        mean_cost(self.costs, &view)
    }

    fn take_error(&self) -> Option<CostError> {
        self.error.borrow_mut().take()
    }
}

fn minimize_options(cfg: &SolverConfig) -> MinimizeOptions {
    let mut opts = MinimizeOptions::new(6, cfg.max_iterations, cfg.fd_step);
    opts.polish_scales = vec![0.05, 0.05, 0.05, 0.02, 0.02, 0.02];
    opts
}

fn run_solve(
    ctx: &ObjectiveContext<'_>,
    x0: Vec<f64>,
    frozen_rotation: bool,
    frozen_translation: bool,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, f64), SolverError> {
    let opts = minimize_options(cfg);
    let solve_from = |start: &[f64]| -> (Vec<f64>, f64) {
        let mut masked = |x: &[f64]| ctx.objective(x);
        if !frozen_rotation && !frozen_translation {
            return minimize(&mut masked, start, &opts);
        }
        // Optimize the unfrozen block only, splicing the frozen values back.
        let (range, scales): (std::ops::Range<usize>, Vec<f64>) = if frozen_rotation {
            (3..6, vec![0.02; 3])
        } else {
            (0..3, vec![0.05; 3])
        };
        let fixed = start.to_vec();
        let mut sub = |xs: &[f64]| {
            let mut full = fixed.clone();
            full[range.clone()].copy_from_slice(xs);
            ctx.objective(&full)
        };
        let mut sub_opts = MinimizeOptions::new(3, cfg.max_iterations, cfg.fd_step);
        sub_opts.polish_scales = scales;
        let (xs, fx) = minimize(&mut sub, &start[range.clone()], &sub_opts);
        let mut full = fixed;
        full[range].copy_from_slice(&xs);
        (full, fx)
    };

    let (mut best_x, mut best_f) = solve_from(&x0);
    if let Some(e) = ctx.take_error() {
        return Err(e.into());
    }
    if ctx.residual(&best_x)? > cfg.convergence_tol && cfg.restarts > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for _ in 0..cfg.restarts {
            let mut start = x0.clone();
            if !frozen_rotation {
                for v in &mut start[0..3] {
                    *v += rng.random_range(-0.26..0.26);
                }
            }
            if !frozen_translation {
                for v in &mut start[3..6] {
                    *v += rng.random_range(-0.05..0.05);
                }
            }
            let (x, fx) = solve_from(&start);
            if let Some(e) = ctx.take_error() {
                return Err(e.into());
            }
            if fx < best_f {
                best_x = x;
                best_f = fx;
            }
            if ctx.residual(&best_x)? <= cfg.convergence_tol {
                break;
            }
        }
    }
    Ok((best_x, best_f))
}

/// Solves the sub-goal pose from `pose0`, which must be the registry's
/// current gripper pose. An empty sub-goal cost list returns `pose0`
/// unchanged; a residual above the tolerance after the multi-start budget is
/// a `NoConvergence` carrying the best pose found.
pub fn solve_subgoal(
    costs: &CostSet,
    registry: &ComponentRegistry,
    pose0: &RigidTransform,
    cfg: &SolverConfig,
) -> Result<RigidTransform, SolverError> {
    solve_pose(&costs.subgoal, registry, pose0, *pose0, false, cfg)
}

/// Rotation-only variant used for grasp orientation: the translation stays at
/// `target`, only the rotation block is optimized.
pub fn solve_subgoal_orientation(
    costs: &CostSet,
    registry: &ComponentRegistry,
    pose0: &RigidTransform,
    target_translation: &Vec3,
    cfg: &SolverConfig,
) -> Result<RigidTransform, SolverError> {
    let anchored = RigidTransform::new(pose0.rotation, *target_translation);
    let mut start = RigidTransform::new(pose0.rotation, *target_translation);
    start.translation = *target_translation;
    solve_pose_with_start(&costs.subgoal, registry, pose0, anchored, &start, true, cfg)
}

fn solve_pose(
    costs: &[crate::cost::CostFunction],
    registry: &ComponentRegistry,
    pose0: &RigidTransform,
    anchor: RigidTransform,
    frozen_translation: bool,
    cfg: &SolverConfig,
) -> Result<RigidTransform, SolverError> {
    solve_pose_with_start(costs, registry, pose0, anchor, pose0, frozen_translation, cfg)
}

fn solve_pose_with_start(
    costs: &[crate::cost::CostFunction],
    registry: &ComponentRegistry,
    pose0: &RigidTransform,
    anchor: RigidTransform,
    start: &RigidTransform,
    frozen_translation: bool,
    cfg: &SolverConfig,
) -> Result<RigidTransform, SolverError> {
    if costs.is_empty() {
        return Ok(if frozen_translation { *start } else { *pose0 });
    }
    let ctx = ObjectiveContext {
        registry,
        costs,
        pose0: *pose0,
        anchor,
        alpha: cfg.alpha,
        beta: cfg.beta,
        error: RefCell::new(None),
    };
    let start_rel = start.rotation.compose(&pose0.rotation.transpose()).rotation_vector();
    let x0 = vec![
        start_rel.x,
        start_rel.y,
        start_rel.z,
        start.translation.x,
        start.translation.y,
        start.translation.z,
    ];
    let (best_x, _) = run_solve(&ctx, x0, false, frozen_translation, cfg)?;
    let residual = ctx.residual(&best_x)?;
    let (pose, _) = decode_params(&best_x, pose0);
    if residual > cfg.convergence_tol {
        return Err(SolverError::NoConvergence {
            residual,
            best: pose,
            control_point: None,
        });
    }
    Ok(pose)
}

/// Interior control-point count: one per spacing of translation plus one per
/// 15° of net rotation, clamped to the configured bounds.
fn control_point_count(pose0: &RigidTransform, goal: &RigidTransform, cfg: &SolverConfig) -> usize {
    let dist = (goal.translation - pose0.translation).norm();
    let net_rotation = goal.rotation.compose(&pose0.rotation.transpose()).angle();
    let k = (dist / cfg.control_point_spacing).ceil() as usize + (net_rotation / 15f64.to_radians()).floor() as usize;
    k.clamp(cfg.control_point_bounds.0, cfg.control_point_bounds.1)
}

/// Interpolates control points from `pose0` to `pose_goal` and refines each
/// interior point against the path costs; endpoints stay fixed.
pub fn plan_path(
    pose0: &RigidTransform,
    pose_goal: &RigidTransform,
    costs: &CostSet,
    registry: &ComponentRegistry,
    cfg: &SolverConfig,
) -> Result<Trajectory, SolverError> {
    let k = control_point_count(pose0, pose_goal, cfg);
    let mut waypoints = Vec::with_capacity(k + 2);
    waypoints.push(*pose0);
    for i in 1..=k {
        let s = i as f64 / (k + 1) as f64;
        let anchor = interpolate_pose(pose0, pose_goal, s).expect("interpolation fraction is in [0,1]");
        if costs.path.is_empty() {
            waypoints.push(anchor);
            continue;
        }
        let ctx = ObjectiveContext {
            registry,
            costs: &costs.path,
            pose0: *pose0,
            anchor,
            alpha: cfg.alpha,
            beta: cfg.beta,
            error: RefCell::new(None),
        };
        let rel = anchor.rotation.compose(&pose0.rotation.transpose()).rotation_vector();
        let x0 = vec![
            rel.x,
            rel.y,
            rel.z,
            anchor.translation.x,
            anchor.translation.y,
            anchor.translation.z,
        ];
        let (best_x, _) = run_solve(&ctx, x0, false, false, cfg)?;
        let residual = ctx.residual(&best_x)?;
        let (pose, _) = decode_params(&best_x, pose0);
        if residual > cfg.convergence_tol {
            return Err(SolverError::NoConvergence {
                residual,
                best: pose,
                control_point: Some(i),
            });
        }
        waypoints.push(pose);
    }
    waypoints.push(*pose_goal);
    Ok(Trajectory {
        waypoints,
        events: Vec::new(),
        stage_index: 0,
    })
}

/// A world that can apply trajectories; the scene simulator implements this
/// with articulation projection on top of the registry's rigid attachment.
pub trait TrajectoryWorld {
    fn registry(&self) -> &ComponentRegistry;
    fn registry_mut(&mut self) -> &mut ComponentRegistry;
    fn apply_trajectory(&mut self, trajectory: &Trajectory) -> Result<(), SolverError>;
}

/// Minimal world with no articulation: waypoints drive the registry directly.
pub struct RegistryWorld {
    pub registry: ComponentRegistry,
}

impl TrajectoryWorld for RegistryWorld {
    fn registry(&self) -> &ComponentRegistry {
        &self.registry
    }

    fn registry_mut(&mut self) -> &mut ComponentRegistry {
        &mut self.registry
    }

    fn apply_trajectory(&mut self, trajectory: &Trajectory) -> Result<(), SolverError> {
        apply_to_registry(&mut self.registry, trajectory)?;
        Ok(())
    }
}

/// Replays waypoints and events onto a registry: relative motions between
/// consecutive poses, grasp/release at their waypoint indices.
pub fn apply_to_registry(registry: &mut ComponentRegistry, trajectory: &Trajectory) -> Result<(), RegistryError> {
    for (i, waypoint) in trajectory.waypoints.iter().enumerate() {
        let motion = RigidTransform::relative_motion(&registry.gripper_pose(), waypoint);
        registry.apply_gripper_motion(&motion);
        for (idx, event) in &trajectory.events {
            if *idx == i {
                match event {
                    GripEvent::Grasp { object: Some(object) } => registry.set_grasp(object)?,
                    GripEvent::Grasp { object: None } => {}
                    GripEvent::Release => registry.clear_grasp()?,
                }
            }
        }
    }
    Ok(())
}

/// Executes one stage: snapshots the stage start, compiles its costs, resolves
/// grasp/release, solves the sub-goal, plans the path, and applies the result
/// to the world.
pub fn execute_stage(
    stage: &Stage,
    world: &mut dyn TrajectoryWorld,
    cfg: &SolverConfig,
) -> Result<Trajectory, SolverError> {
    world.registry_mut().begin_stage(stage.index);
    let costs = compile_stage(stage, world.registry())?;
    let pose0 = world.registry().gripper_pose();

    let mut trajectory = if let Some(grasp) = stage.grasp() {
        let (target, object) = match grasp.components.first() {
            Some(r) => {
                let key = ComponentKey::from(r);
                let cloud = world.registry().cloud(&key, Timestamp::Current)?;
                (cloud.centroid(), Some(r.object.clone()))
            }
            None => (pose0.translation, None),
        };
        let goal = solve_subgoal_orientation(&costs, world.registry(), &pose0, &target, cfg)?;
        let mut traj = plan_path(&pose0, &goal, &costs, world.registry(), cfg)?;
        traj.events.push((traj.waypoints.len() - 1, GripEvent::Grasp { object }));
        traj
    } else if stage.has_release() && costs.subgoal.is_empty() {
        Trajectory {
            waypoints: vec![pose0],
            events: vec![(0, GripEvent::Release)],
            stage_index: stage.index,
        }
    } else {
        let goal = solve_subgoal(&costs, world.registry(), &pose0, cfg)?;
        let mut traj = if costs.subgoal.is_empty() {
            // No motion requested: hold the pose.
            Trajectory {
                waypoints: vec![pose0],
                events: Vec::new(),
                stage_index: stage.index,
            }
        } else {
            plan_path(&pose0, &goal, &costs, world.registry(), cfg)?
        };
        if stage.has_release() {
            traj.events.push((traj.waypoints.len() - 1, GripEvent::Release));
        }
        traj
    };
    trajectory.stage_index = stage.index;
    world.apply_trajectory(&trajectory)?;
    Ok(trajectory)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_constraint;
    use crate::geometry::{major_axis, rodrigues, rotate_about_point, UnitVector};
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;

    fn marker(center: [f64; 3]) -> PointCloud {
        let c = Vec3::new(center[0], center[1], center[2]);
        PointCloud::new(vec![
            c + Vec3::new(0.01, 0.0, 0.0),
            c - Vec3::new(0.01, 0.0, 0.0),
            c + Vec3::new(0.0, 0.01, 0.0),
            c - Vec3::new(0.0, 0.01, 0.0),
        ])
        .unwrap()
    }

    fn zero_cost_set(registry: &ComponentRegistry) -> CostSet {
        // A reach constraint from a component to itself is identically zero.
        let c = parse_constraint(
            r#"<"sub-goal constraints", "the center of the body of the anchor marker", "the center of the body of the anchor marker", "the center of the body of the anchor marker reaches the center of the body of the anchor marker">"#,
        )
        .unwrap();
        CostSet {
            subgoal: vec![crate::cost::compile(&c, registry).unwrap()],
            path: Vec::new(),
        }
    }

    #[test]
    fn empty_cost_set_returns_pose0() {
        let mut reg = ComponentRegistry::default();
        reg.register(ComponentKey::new("the body", "the anchor marker"), marker([0.0, 0.0, 0.0]));
        reg.begin_stage(1);
        let pose0 = RigidTransform::new(RotationMatrix::rot_z(0.4), Vec3::new(0.1, 0.2, 0.3));
        let got = solve_subgoal(&CostSet::default(), &reg, &pose0, &SolverConfig::default()).unwrap();
        assert_eq!(got, pose0);
    }

    #[test]
    fn all_zero_costs_anchor_at_pose0() {
        let mut rng = StdRng::seed_from_u64(11);
        let mut reg = ComponentRegistry::default();
        reg.register(ComponentKey::new("the body", "the anchor marker"), marker([0.0, 0.0, 0.0]));
        reg.begin_stage(1);
        let costs = zero_cost_set(&reg);
        let cfg = SolverConfig::default();
        for _ in 0..10 {
            let w = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let t = Vec3::new(
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
                rng.random_range(0.0..0.5),
            );
            let pose0 = RigidTransform::new(RotationMatrix::from_rotation_vector(&w), t);
            reg.set_gripper_home(pose0);
            reg.begin_stage(1);
            let got = solve_subgoal(&costs, &reg, &pose0, &cfg).unwrap();
            assert!((got.translation - pose0.translation).norm() < 1e-6);
            let delta = got.rotation.compose(&pose0.rotation.transpose()).angle();
            assert!(delta < 1e-6);
        }
    }

    #[test]
    fn reach_converges_to_the_target_point() {
        let pose0 = RigidTransform::new(RotationMatrix::identity(), Vec3::new(0.0, 0.0, 0.4));
        let mut reg = ComponentRegistry::new(pose0);
        let target = [0.25, 0.15, 0.1];
        reg.register(ComponentKey::new("the body", "the target marker"), marker(target));
        reg.begin_stage(1);
        let c = parse_constraint(
            r#"<"sub-goal constraints", "the center of the gripper of the robot", "the center of the body of the target marker", "the center of the gripper of the robot reaches the center of the body of the target marker">"#,
        )
        .unwrap();
        let costs = CostSet {
            subgoal: vec![crate::cost::compile(&c, &reg).unwrap()],
            path: Vec::new(),
        };
        let got = solve_subgoal(&costs, &reg, &pose0, &SolverConfig::default()).unwrap();
        let t = Vec3::new(target[0], target[1], target[2]);
        assert!(
            (got.translation - t).norm() < 1e-3,
            "translation {:?} vs target {t:?}",
            got.translation
        );
    }

    fn door_registry() -> (ComponentRegistry, Vec3) {
        // Vertical hinge at x=0.5; door surface extends toward -x.
        let mut reg = ComponentRegistry::default();
        let hinge_base = Vec3::new(0.5, 0.3, 0.0);
        let mut hinge_pts = Vec::new();
        for i in 0..9 {
            hinge_pts.push(hinge_base + Vec3::new(0.0, 0.0, 0.05 * i as f64));
        }
        let mut surface_pts = Vec::new();
        for i in 0..8 {
            for j in 0..5 {
                surface_pts.push(Vec3::new(
                    0.5 - 0.06 * i as f64,
                    0.3,
                    0.05 + 0.08 * j as f64,
                ));
            }
        }
        let handle_pts: Vec<Vec3> = (0..5)
            .map(|i| Vec3::new(0.06, 0.28, 0.18 + 0.01 * i as f64))
            .collect();
        reg.register(ComponentKey::new("the hinge", "the door"), PointCloud::new(hinge_pts).unwrap());
        reg.register(
            ComponentKey::new("the surface", "the door"),
            PointCloud::new(surface_pts).unwrap(),
        );
        reg.register(ComponentKey::new("the handle", "the door"), PointCloud::new(handle_pts).unwrap());
        (reg, hinge_base)
    }

    #[test]
    fn door_rotation_subgoal_recovers_sixty_degrees() {
        let (mut reg, _) = door_registry();
        let handle_center = reg
            .cloud(&ComponentKey::new("the handle", "the door"), Timestamp::Current)
            .unwrap()
            .centroid();
        let pose0 = RigidTransform::new(RotationMatrix::rot_x(std::f64::consts::PI), handle_center);
        reg.set_gripper_home(pose0);
        reg.set_grasp("the door").unwrap();
        reg.begin_stage(2);

        let c = parse_constraint(
            r#"<"sub-goal constraints", "the plane of the surface of the door", "the axis of the hinge of the door", "the plane of the surface of the door rotates around the axis of the hinge of the door by 60 degrees">"#,
        )
        .unwrap();
        let costs = CostSet {
            subgoal: vec![crate::cost::compile(&c, &reg).unwrap()],
            path: Vec::new(),
        };
        let got = solve_subgoal(&costs, &reg, &pose0, &SolverConfig::default()).unwrap();
        let rel = got.rotation.compose(&pose0.rotation.transpose());
        let w = rel.rotation_vector();
        let angle = w.norm().to_degrees();
        assert!((angle - 60.0).abs() <= 1.0, "recovered angle {angle}");
        let axis_alignment = (w / w.norm()).dot(&Vec3::z()).abs();
        assert!(axis_alignment >= 0.999, "axis alignment {axis_alignment}");
    }

    #[test]
    fn distance_unchanged_path_bends_onto_the_arc() {
        let (mut reg, hinge_base) = door_registry();
        let handle_key = ComponentKey::new("the handle", "the door");
        let handle_center = reg.cloud(&handle_key, Timestamp::Current).unwrap().centroid();
        let pose0 = RigidTransform::new(RotationMatrix::rot_x(std::f64::consts::PI), handle_center);
        reg.set_gripper_home(pose0);
        reg.set_grasp("the door").unwrap();
        reg.begin_stage(2);

        // Goal: handle carried 60° around the hinge.
        let hinge_cloud = reg.cloud(&ComponentKey::new("the hinge", "the door"), Timestamp::Current).unwrap();
        let axis = major_axis(&hinge_cloud).unwrap();
        let rot = rodrigues(&axis, 60f64.to_radians());
        let goal_t = rot.apply(&(handle_center - hinge_cloud.centroid())) + hinge_cloud.centroid();
        let goal = RigidTransform::new(rot.compose(&pose0.rotation), goal_t);

        let c = parse_constraint(
            r#"<"path constraints", "the center of the handle of the door", "the axis of the hinge of the door", "the distance between the center of the handle of the door and the axis of the hinge of the door remains unchanged">"#,
        )
        .unwrap();
        let costs = CostSet {
            subgoal: Vec::new(),
            path: vec![crate::cost::compile(&c, &reg).unwrap()],
        };
        let traj = plan_path(&pose0, &goal, &costs, &reg, &SolverConfig::default()).unwrap();
        assert!(traj.waypoints.len() >= 5);

        // Every waypoint's handle position must stay on the hinge circle.
        let radius0 = horizontal_radius(&handle_center, &hinge_base);
        for wp in &traj.waypoints {
            let motion = RigidTransform::relative_motion(&pose0, wp);
            let carried = motion.apply(&handle_center);
            let r = horizontal_radius(&carried, &hinge_base);
            assert!((r - radius0).abs() <= 1e-2, "radius error {}", (r - radius0).abs());
        }
    }

    fn horizontal_radius(p: &Vec3, hinge_base: &Vec3) -> f64 {
        ((p.x - hinge_base.x).powi(2) + (p.y - hinge_base.y).powi(2)).sqrt()
    }

    #[test]
    fn short_move_clamps_to_three_interior_points() {
        let cfg = SolverConfig::default();
        let pose0 = RigidTransform::identity();
        let goal = RigidTransform::new(RotationMatrix::identity(), Vec3::new(0.04, 0.0, 0.0));
        assert_eq!(control_point_count(&pose0, &goal, &cfg), 3);
        let traj = plan_path(&pose0, &goal, &CostSet::default(), &ComponentRegistry::default(), &cfg).unwrap();
        assert_eq!(traj.waypoints.len(), 5);
    }

    #[test]
    fn empty_path_costs_yield_pure_interpolation() {
        let cfg = SolverConfig::default();
        let pose0 = RigidTransform::identity();
        let goal = RigidTransform::new(RotationMatrix::rot_z(1.0), Vec3::new(0.3, 0.0, 0.0));
        let traj = plan_path(&pose0, &goal, &CostSet::default(), &ComponentRegistry::default(), &cfg).unwrap();
        let k = traj.waypoints.len() - 2;
        for (i, wp) in traj.waypoints.iter().enumerate() {
            let s = i as f64 / (k + 1) as f64;
            let expect = interpolate_pose(&pose0, &goal, s.min(1.0)).unwrap();
            assert_abs_diff_eq!((wp.translation - expect.translation).norm(), 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(
                (wp.rotation.matrix() - expect.rotation.matrix()).norm(),
                0.0,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn transform_consistency_between_solver_and_registry() {
        // Applying the solved pose through the registry reproduces exactly the
        // clouds the candidate view showed the optimizer.
        let (mut reg, _) = door_registry();
        reg.set_grasp("the door").unwrap();
        reg.begin_stage(2);
        let pose0 = reg.gripper_pose();
        let target = RigidTransform::new(
            RotationMatrix::rot_z(0.7).compose(&pose0.rotation),
            pose0.translation + Vec3::new(0.1, -0.05, 0.2),
        );
        let motion = RigidTransform::relative_motion(&pose0, &target);
        let view = PoseCandidateView::new(&reg, motion);
        let key = ComponentKey::new("the surface", "the door");
        let predicted = view.cloud(&key, Timestamp::Current).unwrap();

        reg.apply_gripper_motion(&motion);
        let actual = reg.cloud(&key, Timestamp::Current).unwrap();
        for (a, b) in predicted.points().iter().zip(actual.points()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn determinism_bitwise_for_identical_inputs() {
        let (reg, _) = door_registry();
        let mut reg = reg;
        let pose0 = RigidTransform::new(
            RotationMatrix::rot_x(std::f64::consts::PI),
            Vec3::new(0.06, 0.28, 0.2),
        );
        reg.set_gripper_home(pose0);
        reg.set_grasp("the door").unwrap();
        reg.begin_stage(2);
        let c = parse_constraint(
            r#"<"sub-goal constraints", "the plane of the surface of the door", "the axis of the hinge of the door", "the plane of the surface of the door rotates around the axis of the hinge of the door by 30 degrees">"#,
        )
        .unwrap();
        let costs = CostSet {
            subgoal: vec![crate::cost::compile(&c, &reg).unwrap()],
            path: Vec::new(),
        };
        let cfg = SolverConfig::default();
        let a = solve_subgoal(&costs, &reg, &pose0, &cfg).unwrap();
        let b = solve_subgoal(&costs, &reg, &pose0, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn monotone_improvement_objective_never_worse_than_start() {
        let pose0 = RigidTransform::new(RotationMatrix::identity(), Vec3::new(-0.2, 0.1, 0.5));
        let mut reg = ComponentRegistry::new(pose0);
        reg.register(ComponentKey::new("the body", "the target marker"), marker([0.3, 0.0, 0.2]));
        reg.begin_stage(1);
        let c = parse_constraint(
            r#"<"sub-goal constraints", "the center of the gripper of the robot", "the center of the body of the target marker", "the center of the gripper of the robot reaches the center of the body of the target marker">"#,
        )
        .unwrap();
        let costs = CostSet {
            subgoal: vec![crate::cost::compile(&c, &reg).unwrap()],
            path: Vec::new(),
        };
        let cfg = SolverConfig::default();
        let got = solve_subgoal(&costs, &reg, &pose0, &cfg).unwrap();

        let eval = |pose: &RigidTransform| {
            let motion = RigidTransform::relative_motion(&pose0, pose);
            let view = PoseCandidateView::new(&reg, motion);
            mean_cost(&costs.subgoal, &view).unwrap()
                + cfg.alpha * (pose.translation - pose0.translation).norm()
                + cfg.beta * euler_of(&pose.rotation.compose(&pose0.rotation.transpose())).l1_norm()
        };
        assert!(eval(&got) <= eval(&pose0) + 1e-12);
    }

    #[test]
    fn execute_release_only_stage() {
        let mut reg = ComponentRegistry::default();
        reg.register(ComponentKey::new("the body", "the cube"), marker([0.1, 0.0, 0.0]));
        reg.begin_stage(1);
        reg.set_grasp("the cube").unwrap();
        let mut world = RegistryWorld { registry: reg };
        let plan = crate::dsl::parse_plan("- \"let go\" (stage 1)\n<\"release\">\n").unwrap();
        let traj = execute_stage(&plan.stages[0], &mut world, &SolverConfig::default()).unwrap();
        assert_eq!(traj.waypoints.len(), 1);
        assert_eq!(traj.events, vec![(0, GripEvent::Release)]);
        assert!(world.registry().grasped_object().is_none());
    }

    #[test]
    fn execute_grasp_stage_aligns_approach_with_table_normal() {
        let mut reg = ComponentRegistry::new(RigidTransform::new(
            // Start with the approach axis horizontal so the solver must
            // rotate it down to the table normal.
            RotationMatrix::rot_y(std::f64::consts::FRAC_PI_2),
            Vec3::new(0.0, 0.0, 0.4),
        ));
        let mut table = Vec::new();
        for i in 0..8 {
            for j in 0..8 {
                table.push(Vec3::new(-0.4 + 0.1 * i as f64, -0.3 + 0.08 * j as f64, 0.0));
            }
        }
        reg.register(ComponentKey::new("the surface", "the table"), PointCloud::new(table).unwrap());
        let mut block = Vec::new();
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..24 {
            block.push(Vec3::new(
                0.15 + rng.random_range(-0.02..0.02),
                0.1 + rng.random_range(-0.02..0.02),
                0.02 + rng.random_range(-0.015..0.015),
            ));
        }
        reg.register(ComponentKey::new("the body", "the red block"), PointCloud::new(block).unwrap());

        let plan_text = r#"- "grasp red block" (stage 1)
<"grasp", "the body of the red block">
<"sub-goal constraints", "the heading direction of the gripper approach of the robot", "the plane of the surface of the table", "the heading direction of the gripper approach of the robot is parallel to the normal of the surface of the table">
"#;
        let plan = crate::dsl::parse_plan(plan_text).unwrap();
        let mut world = RegistryWorld { registry: reg };
        let traj = execute_stage(&plan.stages[0], &mut world, &SolverConfig::default()).unwrap();

        assert!(matches!(traj.events.last(), Some((_, GripEvent::Grasp { object: Some(o) })) if o == "the red block"));
        assert_eq!(world.registry().grasped_object(), Some("the red block"));

        // Approach axis parallel to the table normal within 1°.
        let pose = world.registry().gripper_pose();
        let approach = pose.rotation.apply(&Vec3::z());
        let angle = approach.dot(&Vec3::z()).abs().acos().to_degrees();
        assert!(angle <= 1.0, "approach is {angle}° off the table normal");

        // Gripper translation at the grasp component centroid.
        let block_center = world
            .registry()
            .cloud(&ComponentKey::new("the body", "the red block"), Timestamp::Current)
            .unwrap()
            .centroid();
        assert!((pose.translation - block_center).norm() < 1e-9);
    }

    #[test]
    fn rotated_gripper_moves_cloud_in_view() {
        // The candidate view must rotate gripper-attached clouds about the
        // candidate pose, not about the origin.
        let mut reg = ComponentRegistry::default();
        reg.register(ComponentKey::new("the body", "the cube"), marker([0.2, 0.0, 0.0]));
        reg.begin_stage(1);
        reg.set_grasp("the cube").unwrap();
        let pose0 = reg.gripper_pose();
        let candidate = RigidTransform::new(RotationMatrix::rot_z(0.5), Vec3::new(0.05, 0.0, 0.0));
        let motion = RigidTransform::relative_motion(&pose0, &candidate);
        let view = PoseCandidateView::new(&reg, motion);
        let moved = view.cloud(&ComponentKey::new("the body", "the cube"), Timestamp::Current).unwrap();
        let expect = RotationMatrix::rot_z(0.5).apply(&Vec3::new(0.2, 0.0, 0.0)) + Vec3::new(0.05, 0.0, 0.0);
        assert!((moved.centroid() - expect).norm() < 1e-9);
        // Rotating about a point: verify with the analytic formula.
        let direct = rotate_about_point(
            &reg.cloud(&ComponentKey::new("the body", "the cube"), Timestamp::Current).unwrap(),
            &Vec3::zeros(),
            &RotationMatrix::rot_z(0.5),
        )
        .translated(&Vec3::new(0.05, 0.0, 0.0));
        for (a, b) in moved.points().iter().zip(direct.points()) {
            assert!((a - b).norm() < 1e-9);
        }
        let _ = UnitVector::from_vector(Vec3::z()).unwrap();
    }
}
