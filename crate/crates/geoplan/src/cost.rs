//! Cost primitives over component point clouds and the compiler from parsed
//! constraints to evaluable cost functions.
//!
//! Every primitive returns a non-negative value that reaches exactly 0 when
//! its relation is satisfied. Angular costs carry the factor 5, which weights
//! them against metric costs when a stage mixes both.

use crate::dsl::{Constraint, ConstraintKind, GeometricComponentRef, OffsetDirection, RelationKind, Stage};
use crate::geometry::{
    major_axis, rodrigues, rotate_about_point, surface_normal, GeometryError, PointCloud, UnitVector, Vec3,
};
use crate::registry::{CloudSource, ComponentKey, ComponentRegistry, RegistryError, Timestamp, GRIPPER_OBJECT};
use thiserror::Error;

/// Penalty added when a vertical-ordering constraint is on the wrong side.
pub const VERTICAL_ORDER_PENALTY: f64 = 1000.0;

/// Weight on angular (dot-product) costs.
pub const ANGULAR_SCALE: f64 = 5.0;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CostError {
    #[error("constraint cannot be compiled into a cost: {0}")]
    UncompilableRelation(String),
    #[error("point correspondence mismatch: {now} now vs {prev} previous")]
    CardinalityMismatch { now: usize, prev: usize },
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

/// 5·(1 − |a·b|): zero when the directions are parallel.
pub fn cost_parallel(a: &UnitVector, b: &UnitVector) -> f64 {
    ANGULAR_SCALE * (1.0 - a.dot(b).abs())
}

/// 5·|a·b|: zero when the directions are perpendicular.
pub fn cost_perpendicular(a: &UnitVector, b: &UnitVector) -> f64 {
    ANGULAR_SCALE * a.dot(b).abs()
}

fn vertical_offset_cost(subject: &PointCloud, reference: &PointCloud, d: Option<f64>, above: bool) -> f64 {
    let cs = subject.centroid();
    let cr = reference.centroid();
    let gap = if above { cs.z - cr.z } else { cr.z - cs.z };
    let horizontal = ((cs.x - cr.x).powi(2) + (cs.y - cr.y).powi(2)).sqrt();
    let mut cost = horizontal;
    match d {
        Some(d) => cost += (gap - d).abs(),
        // Without a target distance only wrong ordering is charged for the
        // vertical term.
        None if gap < 0.0 => cost += gap.abs(),
        None => {}
    }
    if gap < 0.0 {
        cost += VERTICAL_ORDER_PENALTY;
    }
    cost
}

/// |z gap − d| plus horizontal centroid distance; wrong vertical ordering adds
/// the large penalty. `d = None` constrains the ordering and alignment only.
pub fn cost_directly_above_by(pc_upper: &PointCloud, pc_lower: &PointCloud, d: Option<f64>) -> f64 {
    vertical_offset_cost(pc_upper, pc_lower, d, true)
}

pub fn cost_directly_below_by(pc_lower: &PointCloud, pc_upper: &PointCloud, d: Option<f64>) -> f64 {
    vertical_offset_cost(pc_lower, pc_upper, d, false)
}

/// |signed axis gap − d| plus the off-axis absolute deviations, where the gap
/// is (centroid_b − centroid_a) projected on the direction's world vector.
pub fn cost_offset_along(pc_a: &PointCloud, pc_b: &PointCloud, direction: OffsetDirection, d: f64) -> f64 {
    let diff = pc_b.centroid() - pc_a.centroid();
    let e = direction.vector();
    let e = Vec3::new(e[0], e[1], e[2]);
    let gap = diff.dot(&e);
    let off_axis = diff - e * gap;
    (gap - d).abs() + off_axis.x.abs() + off_axis.y.abs() + off_axis.z.abs()
}

fn check_cardinality(now: &PointCloud, prev: &PointCloud) -> Result<(), CostError> {
    if now.len() != prev.len() {
        return Err(CostError::CardinalityMismatch {
            now: now.len(),
            prev: prev.len(),
        });
    }
    Ok(())
}

fn summed_point_distance(a: &PointCloud, b: &PointCloud) -> f64 {
    a.points().iter().zip(b.points()).map(|(p, q)| (p - q).norm()).sum()
}

/// Σ‖now − target‖ where the target is the previous cloud rotated by `angle`
/// about the axis cloud's major axis through its centroid.
pub fn cost_rotate_about_axis(
    pc_now: &PointCloud,
    pc_prev: &PointCloud,
    axis_cloud_prev: &PointCloud,
    angle: f64,
) -> Result<f64, CostError> {
    check_cardinality(pc_now, pc_prev)?;
    let axis = major_axis(axis_cloud_prev)?;
    let target = rotate_about_point(pc_prev, &axis_cloud_prev.centroid(), &rodrigues(&axis, angle));
    Ok(summed_point_distance(pc_now, &target))
}

/// Like rotation, but the target preserves the subject's orientation: the
/// previous cloud is translated so its centroid lands on the orbited centroid.
pub fn cost_orbit_about_axis(
    pc_now: &PointCloud,
    pc_prev: &PointCloud,
    axis_cloud_prev: &PointCloud,
    angle: f64,
) -> Result<f64, CostError> {
    check_cardinality(pc_now, pc_prev)?;
    let axis = major_axis(axis_cloud_prev)?;
    let pivot = axis_cloud_prev.centroid();
    let c_prev = pc_prev.centroid();
    let rotated_center = rodrigues(&axis, angle).apply(&(c_prev - pivot)) + pivot;
    let target = pc_prev.translated(&(rotated_center - c_prev));
    Ok(summed_point_distance(pc_now, &target))
}

/// |‖centroid_a − centroid_b‖ − d|.
pub fn cost_distance_equals(pc_a: &PointCloud, pc_b: &PointCloud, d: f64) -> f64 {
    ((pc_a.centroid() - pc_b.centroid()).norm() - d).abs()
}

/// |dist(now, ref) − dist(prev, ref)| between centroids.
pub fn cost_distance_unchanged(pc_now: &PointCloud, pc_prev: &PointCloud, ref_cloud: &PointCloud) -> f64 {
    let c_ref = ref_cloud.centroid();
    ((pc_now.centroid() - c_ref).norm() - (pc_prev.centroid() - c_ref).norm()).abs()
}

/// Distance from the current centroid to the goal point d meters from the
/// previous centroid toward (or away from) the target centroid.
pub fn cost_move_toward(
    pc_now: &PointCloud,
    pc_prev: &PointCloud,
    target_cloud: &PointCloud,
    d: f64,
    away: bool,
) -> Result<f64, CostError> {
    let c_prev = pc_prev.centroid();
    let to_target = target_cloud.centroid() - c_prev;
    let norm = to_target.norm();
    if norm < 1e-12 {
        return Err(CostError::Geometry(GeometryError::DegeneratePointCloud(
            "move direction undefined: previous and target centroids coincide".into(),
        )));
    }
    let dir = to_target / norm;
    let goal = if away { c_prev - dir * d } else { c_prev + dir * d };
    Ok((pc_now.centroid() - goal).norm())
}

/// Distance from the point centroid to the object's axis line (no distance
/// given) or to the nearer of the two points d meters along the axis from the
/// object centroid (distance given; the text never carries the sign).
pub fn cost_colinear(pc_point: &PointCloud, pc_object: &PointCloud, d: Option<f64>) -> Result<f64, CostError> {
    let axis = major_axis(pc_object)?;
    colinear_with_axis(pc_point, &pc_object.centroid(), &axis, d)
}

fn colinear_with_axis(
    pc_point: &PointCloud,
    line_origin: &Vec3,
    axis: &UnitVector,
    d: Option<f64>,
) -> Result<f64, CostError> {
    let rel = pc_point.centroid() - line_origin;
    let a = axis.vector();
    Ok(match d {
        None => (rel - a * rel.dot(&a)).norm(),
        Some(d) => {
            let plus = (rel - a * d).norm();
            let minus = (rel + a * d).norm();
            plus.min(minus)
        }
    })
}

/// ‖centroid_a − centroid_b‖.
pub fn cost_reach(pc_a: &PointCloud, pc_b: &PointCloud) -> f64 {
    (pc_a.centroid() - pc_b.centroid()).norm()
}

// ---------------------------------------------------------------------------
// Compilation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DirExtract {
    MajorAxis,
    SurfaceNormal,
}

impl DirExtract {
    fn extract(&self, pc: &PointCloud) -> Result<UnitVector, GeometryError> {
        match self {
            DirExtract::MajorAxis => major_axis(pc),
            DirExtract::SurfaceNormal => surface_normal(pc),
        }
    }
}

/// Direction slot: which cloud and which PCA component to read, and whether
/// the token named a plane (which flips parallel/perpendicular against
/// non-plane partners).
#[derive(Debug, Clone)]
struct DirSlot {
    key: ComponentKey,
    extract: DirExtract,
    is_plane: bool,
}

fn direction_slot(r: &GeometricComponentRef) -> Result<DirSlot, CostError> {
    let (extract, is_plane) = match r.geometry.as_str() {
        "the axis" | "the heading direction" | "the heading" => (DirExtract::MajorAxis, false),
        "the normal" => (DirExtract::SurfaceNormal, false),
        "the plane" => (DirExtract::SurfaceNormal, true),
        other => {
            return Err(CostError::UncompilableRelation(format!(
                "geometry `{other}` of `{}` does not define a direction",
                ComponentKey::from(r).text()
            )))
        }
    };
    Ok(DirSlot {
        key: ComponentKey::from(r),
        extract,
        is_plane,
    })
}

fn axis_extract(r: &GeometricComponentRef) -> Result<DirExtract, CostError> {
    match r.geometry.as_str() {
        "the axis" | "the heading direction" | "the heading" => Ok(DirExtract::MajorAxis),
        "the normal" => Ok(DirExtract::SurfaceNormal),
        other => Err(CostError::UncompilableRelation(format!(
            "geometry `{other}` cannot serve as a rotation axis"
        ))),
    }
}

fn is_direction_geometry(r: &GeometricComponentRef) -> bool {
    matches!(
        r.geometry.as_str(),
        "the axis" | "the heading direction" | "the heading" | "the normal"
    )
}

#[derive(Debug, Clone)]
enum Term {
    Angle {
        a: DirSlot,
        b: DirSlot,
        perpendicular: bool,
    },
    VerticalOffset {
        subject: ComponentKey,
        reference: ComponentKey,
        d: Option<f64>,
        above: bool,
    },
    Offset {
        subject: ComponentKey,
        reference: ComponentKey,
        direction: OffsetDirection,
        d: f64,
    },
    Rotate {
        subject: ComponentKey,
        axis: ComponentKey,
        axis_extract: DirExtract,
        angle: f64,
        orbit: bool,
    },
    DistanceEquals {
        a: ComponentKey,
        b: ComponentKey,
        d: f64,
    },
    DistanceUnchanged {
        subject: ComponentKey,
        reference: ComponentKey,
    },
    Move {
        subject: ComponentKey,
        target: ComponentKey,
        d: f64,
        away: bool,
    },
    Colinear {
        point: ComponentKey,
        line: ComponentKey,
        line_extract: DirExtract,
        d: Option<f64>,
    },
    Reach {
        a: ComponentKey,
        b: ComponentKey,
    },
}

/// A compiled, immutable evaluator bound to component lookups with fixed
/// timestamps.
#[derive(Debug, Clone)]
pub struct CostFunction {
    kind: RelationKind,
    term: Term,
    referenced: Vec<(ComponentKey, Timestamp)>,
}

impl CostFunction {
    pub fn kind(&self) -> RelationKind {
        self.kind
    }

    pub fn referenced_components(&self) -> &[(ComponentKey, Timestamp)] {
        &self.referenced
    }

    pub fn evaluate(&self, src: &dyn CloudSource) -> Result<f64, CostError> {
        let now = |key: &ComponentKey| src.cloud(key, Timestamp::Current);
        let prev = |key: &ComponentKey| src.cloud(key, Timestamp::Previous);
        match &self.term {
            Term::Angle { a, b, perpendicular } => {
                let da = a.extract.extract(&now(&a.key)?)?;
                let db = b.extract.extract(&now(&b.key)?)?;
                Ok(if *perpendicular {
                    cost_perpendicular(&da, &db)
                } else {
                    cost_parallel(&da, &db)
                })
            }
            Term::VerticalOffset {
                subject,
                reference,
                d,
                above,
            } => Ok(vertical_offset_cost(&now(subject)?, &now(reference)?, *d, *above)),
            Term::Offset {
                subject,
                reference,
                direction,
                d,
            } => Ok(cost_offset_along(&now(reference)?, &now(subject)?, *direction, *d)),
            Term::Rotate {
                subject,
                axis,
                axis_extract,
                angle,
                orbit,
            } => {
                let pc_now = now(subject)?;
                let pc_prev = prev(subject)?;
                let axis_cloud = prev(axis)?;
                check_cardinality(&pc_now, &pc_prev)?;
                let a = axis_extract.extract(&axis_cloud)?;
                let pivot = axis_cloud.centroid();
                let target = if *orbit {
                    let c_prev = pc_prev.centroid();
                    let rotated_center = rodrigues(&a, *angle).apply(&(c_prev - pivot)) + pivot;
                    pc_prev.translated(&(rotated_center - c_prev))
                } else {
                    rotate_about_point(&pc_prev, &pivot, &rodrigues(&a, *angle))
                };
                Ok(summed_point_distance(&pc_now, &target))
            }
            Term::DistanceEquals { a, b, d } => Ok(cost_distance_equals(&now(a)?, &now(b)?, *d)),
            Term::DistanceUnchanged { subject, reference } => {
                Ok(cost_distance_unchanged(&now(subject)?, &prev(subject)?, &prev(reference)?))
            }
            Term::Move { subject, target, d, away } => {
                cost_move_toward(&now(subject)?, &prev(subject)?, &prev(target)?, *d, *away)
            }
            Term::Colinear {
                point,
                line,
                line_extract,
                d,
            } => {
                let line_cloud = now(line)?;
                let axis = line_extract.extract(&line_cloud)?;
                colinear_with_axis(&now(point)?, &line_cloud.centroid(), &axis, *d)
            }
            Term::Reach { a, b } => Ok(cost_reach(&now(a)?, &now(b)?)),
        }
    }
}

fn two_components(c: &Constraint) -> Result<(&GeometricComponentRef, &GeometricComponentRef), CostError> {
    match (c.components.first(), c.components.get(1)) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(CostError::UncompilableRelation(format!(
            "relation needs two components, got {}",
            c.components.len()
        ))),
    }
}

fn validate_key(key: &ComponentKey, registry: &ComponentRegistry) -> Result<(), CostError> {
    if key.object == GRIPPER_OBJECT {
        // Synthetic components resolve against the gripper pose.
        registry.cloud(key, Timestamp::Current)?;
        return Ok(());
    }
    registry.cloud(key, Timestamp::Current)?;
    Ok(())
}

/// Compiles a sub-goal or path constraint into a cost function bound to
/// registry lookups. Grasp, release and flow constraints are not costs.
pub fn compile(constraint: &Constraint, registry: &ComponentRegistry) -> Result<CostFunction, CostError> {
    if !matches!(constraint.kind, ConstraintKind::SubGoal | ConstraintKind::Path) {
        return Err(CostError::UncompilableRelation(format!(
            "{:?} constraints do not compile into costs",
            constraint.kind
        )));
    }
    let relation = constraint
        .relation
        .as_ref()
        .ok_or_else(|| CostError::UncompilableRelation("constraint has no relation".into()))?;
    let kind = relation.kind;
    let magnitude = relation.magnitude;

    let (term, referenced) = match kind {
        RelationKind::Parallel | RelationKind::Perpendicular => {
            let (ca, cb) = two_components(constraint)?;
            let a = direction_slot(ca)?;
            let b = direction_slot(cb)?;
            // Exactly one plane flips the relation: a vector parallel to a
            // plane is perpendicular to its normal.
            let flip = a.is_plane ^ b.is_plane;
            let perpendicular = (kind == RelationKind::Perpendicular) ^ flip;
            let refs = vec![(a.key.clone(), Timestamp::Current), (b.key.clone(), Timestamp::Current)];
            (Term::Angle { a, b, perpendicular }, refs)
        }
        RelationKind::DirectlyAboveBy | RelationKind::DirectlyBelowBy => {
            let (cs, cr) = two_components(constraint)?;
            let subject = ComponentKey::from(cs);
            let reference = ComponentKey::from(cr);
            let refs = vec![
                (subject.clone(), Timestamp::Current),
                (reference.clone(), Timestamp::Current),
            ];
            (
                Term::VerticalOffset {
                    subject,
                    reference,
                    d: magnitude,
                    above: kind == RelationKind::DirectlyAboveBy,
                },
                refs,
            )
        }
        RelationKind::OffsetAlongAxisBy(direction) => {
            let (cs, cr) = two_components(constraint)?;
            let subject = ComponentKey::from(cs);
            let reference = ComponentKey::from(cr);
            let d = magnitude
                .ok_or_else(|| CostError::UncompilableRelation("offset relation is missing its distance".into()))?;
            let refs = vec![
                (subject.clone(), Timestamp::Current),
                (reference.clone(), Timestamp::Current),
            ];
            (
                Term::Offset {
                    subject,
                    reference,
                    direction,
                    d,
                },
                refs,
            )
        }
        RelationKind::RotateAroundAxisBy | RelationKind::OrbitAroundAxisBy => {
            let (cs, ca) = two_components(constraint)?;
            let subject = ComponentKey::from(cs);
            let axis = ComponentKey::from(ca);
            let angle = magnitude
                .ok_or_else(|| CostError::UncompilableRelation("rotation relation is missing its angle".into()))?;
            let refs = vec![
                (subject.clone(), Timestamp::Current),
                (subject.clone(), Timestamp::Previous),
                (axis.clone(), Timestamp::Previous),
            ];
            (
                Term::Rotate {
                    subject,
                    axis,
                    axis_extract: axis_extract(ca)?,
                    angle,
                    orbit: kind == RelationKind::OrbitAroundAxisBy,
                },
                refs,
            )
        }
        RelationKind::DistanceEquals => {
            let (ca, cb) = two_components(constraint)?;
            let a = ComponentKey::from(ca);
            let b = ComponentKey::from(cb);
            let d = magnitude
                .ok_or_else(|| CostError::UncompilableRelation("distance relation is missing its value".into()))?;
            let refs = vec![(a.clone(), Timestamp::Current), (b.clone(), Timestamp::Current)];
            (Term::DistanceEquals { a, b, d }, refs)
        }
        RelationKind::DistanceUnchanged => {
            let (cs, cr) = two_components(constraint)?;
            let subject = ComponentKey::from(cs);
            let reference = ComponentKey::from(cr);
            let refs = vec![
                (subject.clone(), Timestamp::Current),
                (subject.clone(), Timestamp::Previous),
                (reference.clone(), Timestamp::Previous),
            ];
            (Term::DistanceUnchanged { subject, reference }, refs)
        }
        RelationKind::MoveTowardBy | RelationKind::MoveAwayBy => {
            let (cs, ct) = two_components(constraint)?;
            let subject = ComponentKey::from(cs);
            let target = ComponentKey::from(ct);
            let d = magnitude
                .ok_or_else(|| CostError::UncompilableRelation("move relation is missing its distance".into()))?;
            let refs = vec![
                (subject.clone(), Timestamp::Current),
                (subject.clone(), Timestamp::Previous),
                (target.clone(), Timestamp::Previous),
            ];
            (
                Term::Move {
                    subject,
                    target,
                    d,
                    away: kind == RelationKind::MoveAwayBy,
                },
                refs,
            )
        }
        RelationKind::Colinear => {
            let (c0, c1) = two_components(constraint)?;
            let (point_ref, line_ref) = match (is_direction_geometry(c0), is_direction_geometry(c1)) {
                (false, true) => (c0, c1),
                (true, false) => (c1, c0),
                (true, true) => (c1, c0),
                (false, false) => {
                    return Err(CostError::UncompilableRelation(
                        "colinear relation needs an axis, heading or normal component".into(),
                    ))
                }
            };
            let point = ComponentKey::from(point_ref);
            let line = ComponentKey::from(line_ref);
            let refs = vec![(point.clone(), Timestamp::Current), (line.clone(), Timestamp::Current)];
            (
                Term::Colinear {
                    point,
                    line,
                    line_extract: axis_extract(line_ref)?,
                    d: magnitude,
                },
                refs,
            )
        }
        RelationKind::Reach => {
            let (ca, cb) = two_components(constraint)?;
            let a = ComponentKey::from(ca);
            let b = ComponentKey::from(cb);
            let refs = vec![(a.clone(), Timestamp::Current), (b.clone(), Timestamp::Current)];
            (Term::Reach { a, b }, refs)
        }
    };

    for (key, _) in &referenced {
        validate_key(key, registry)?;
    }
    Ok(CostFunction {
        kind,
        term,
        referenced,
    })
}

/// The compiled sub-goal and path cost lists of one stage.
#[derive(Debug, Clone, Default)]
pub struct CostSet {
    pub subgoal: Vec<CostFunction>,
    pub path: Vec<CostFunction>,
}

impl CostSet {
    pub fn is_empty(&self) -> bool {
        self.subgoal.is_empty() && self.path.is_empty()
    }
}

/// Mean cost of a list (the 1/K normalization); zero for an empty list.
pub fn mean_cost(costs: &[CostFunction], src: &dyn CloudSource) -> Result<f64, CostError> {
    if costs.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for c in costs {
        total += c.evaluate(src)?;
    }
    Ok(total / costs.len() as f64)
}

/// Compiles every sub-goal and path constraint of a stage; grasp, release and
/// flow constraints are skipped (they are handled by the executor).
pub fn compile_stage(stage: &Stage, registry: &ComponentRegistry) -> Result<CostSet, CostError> {
    let mut set = CostSet::default();
    for c in &stage.constraints {
        match c.kind {
            ConstraintKind::SubGoal => set.subgoal.push(compile(c, registry)?),
            ConstraintKind::Path => set.path.push(compile(c, registry)?),
            ConstraintKind::Grasp | ConstraintKind::Release | ConstraintKind::Flow => {}
        }
    }
    Ok(set)
}
