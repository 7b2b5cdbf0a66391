//! Constraint tuples, stages and task plans, plus the textual grammar.
//!
//! A plan file is UTF-8 text: `task:` line, stage headers of the form
//! `- "name" (stage N)`, one angle-bracketed constraint tuple per line, and
//! `#` comments. The closed relation vocabulary is documented in
//! `docs/grammar.md`.

use std::fmt::Write as _;
use thiserror::Error;

/// Length magnitudes are stored in meters, angles in radians.
const CM: f64 = 0.01;

#[derive(Debug, Clone, Error, PartialEq)]
#[error("parse error at offset {offset}: {reason}")]
pub struct ParseError {
    pub offset: usize,
    pub reason: String,
}

impl ParseError {
    fn new(offset: usize, reason: impl Into<String>) -> Self {
        Self { offset, reason: reason.into() }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: ParseError,
    },
    #[error("invalid plan: {0}")]
    Validation(String),
}

/// `geometry` of `the object part` of `the object`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GeometricComponentRef {
    pub geometry: String,
    pub part: String,
    pub object: String,
}

impl GeometricComponentRef {
    pub fn new(geometry: &str, part: &str, object: &str) -> Self {
        Self {
            geometry: normalize(geometry),
            part: normalize(part),
            object: normalize(object),
        }
    }

    pub fn canonical_text(&self) -> String {
        format!("{} of {} of {}", self.geometry, self.part, self.object)
    }

    /// Parses a component reference. A missing part segment is filled with
    /// "the body" when the leading segment is a geometry token, and a missing
    /// geometry defaults to "the area". Zero `of` separators is an error.
    pub fn parse(text: &str, offset: usize) -> Result<Self, ParseError> {
        let text = normalize(text);
        let segments: Vec<&str> = text.split(" of ").collect();
        if segments.len() < 2 {
            return Err(ParseError::new(
                offset,
                format!("component `{text}` is missing `of`: expected `geometry` of `part` of `object`"),
            ));
        }
        let first_is_geometry = GEOMETRY_TOKENS.contains(&segments[0]);
        let r = if segments.len() == 2 {
            if first_is_geometry {
                Self::new(segments[0], "the body", segments[1])
            } else {
                Self::new("the area", segments[0], segments[1])
            }
        } else if first_is_geometry {
            Self::new(segments[0], segments[1], &segments[2..].join(" of "))
        } else {
            Self::new("the area", segments[0], &segments[1..].join(" of "))
        };
        if r.geometry.is_empty() || r.part.is_empty() || r.object.is_empty() {
            return Err(ParseError::new(offset, format!("component `{text}` has an empty token")));
        }
        Ok(r)
    }
}

/// Geometry tokens the grammar recognizes in leading position.
pub const GEOMETRY_TOKENS: &[&str] = &[
    "the axis",
    "the heading direction",
    "the heading",
    "the normal",
    "the plane",
    "the center",
    "the center point",
    "the area",
    "the edge",
    "the edges",
    "the left edge",
    "the right edge",
    "the top edge",
    "the bottom edge",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffsetDirection {
    Left,
    Right,
    Front,
    Back,
    Up,
    Down,
}

impl OffsetDirection {
    /// World-frame unit vector: left −x, right +x, front +y, back −y,
    /// up +z, down −z.
    pub fn vector(&self) -> [f64; 3] {
        match self {
            OffsetDirection::Left => [-1.0, 0.0, 0.0],
            OffsetDirection::Right => [1.0, 0.0, 0.0],
            OffsetDirection::Front => [0.0, 1.0, 0.0],
            OffsetDirection::Back => [0.0, -1.0, 0.0],
            OffsetDirection::Up => [0.0, 0.0, 1.0],
            OffsetDirection::Down => [0.0, 0.0, -1.0],
        }
    }

    fn phrase(&self) -> &'static str {
        match self {
            OffsetDirection::Left => "to the left of",
            OffsetDirection::Right => "to the right of",
            OffsetDirection::Front => "in front of",
            OffsetDirection::Back => "behind",
            OffsetDirection::Up => "offset up from",
            OffsetDirection::Down => "offset down from",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RelationKind {
    Parallel,
    Perpendicular,
    DirectlyAboveBy,
    DirectlyBelowBy,
    OffsetAlongAxisBy(OffsetDirection),
    DistanceEquals,
    DistanceUnchanged,
    RotateAroundAxisBy,
    OrbitAroundAxisBy,
    MoveTowardBy,
    MoveAwayBy,
    Colinear,
    Reach,
}

/// A classified relation. `raw_text` keeps the original description for
/// provenance; it is excluded from equality so canonical re-rendering keeps
/// round-trips stable.
#[derive(Debug, Clone)]
pub struct RelationSpec {
    pub kind: RelationKind,
    pub magnitude: Option<f64>,
    pub raw_text: String,
}

impl PartialEq for RelationSpec {
    fn eq(&self, other: &Self) -> bool {
        if self.kind != other.kind {
            return false;
        }
        match (self.magnitude, other.magnitude) {
            (None, None) => true,
            (Some(a), Some(b)) => (a - b).abs() <= 1e-9,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    SubGoal,
    Path,
    Grasp,
    Release,
    Flow,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FlowSpec {
    /// Revisit this stage until it has executed `count` times, then advance.
    Repeat { count: u32 },
    /// Ask the condition oracle; `None` targets default to the next stage
    /// when satisfied and this stage when not.
    Condition {
        question: String,
        when_satisfied: Option<usize>,
        when_unsatisfied: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub kind: ConstraintKind,
    pub components: Vec<GeometricComponentRef>,
    pub relation: Option<RelationSpec>,
    pub flow: Option<FlowSpec>,
}

impl Constraint {
    pub fn release() -> Self {
        Constraint {
            kind: ConstraintKind::Release,
            components: Vec::new(),
            relation: None,
            flow: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    /// 1-based, contiguous within a plan.
    pub index: usize,
    pub name: String,
    pub constraints: Vec<Constraint>,
}

impl Stage {
    pub fn flow(&self) -> Option<&FlowSpec> {
        self.constraints.iter().find_map(|c| c.flow.as_ref())
    }

    pub fn grasp(&self) -> Option<&Constraint> {
        self.constraints.iter().find(|c| c.kind == ConstraintKind::Grasp)
    }

    pub fn has_release(&self) -> bool {
        self.constraints.iter().any(|c| c.kind == ConstraintKind::Release)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskPlan {
    pub task_description: String,
    pub stages: Vec<Stage>,
}

impl TaskPlan {
    pub fn stage(&self, index: usize) -> Option<&Stage> {
        self.stages.get(index.checked_sub(1)?)
    }
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Word-boundary match for a lowercase word or phrase.
fn has_phrase(text: &str, phrase: &str) -> bool {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(pos) = text[start..].find(phrase) {
        let begin = start + pos;
        let end = begin + phrase.len();
        let left_ok = begin == 0 || !bytes[begin - 1].is_ascii_alphabetic();
        let right_ok = end == bytes.len() || !bytes[end].is_ascii_alphabetic();
        if left_ok && right_ok {
            return true;
        }
        start = begin + 1;
    }
    false
}

fn has_any(text: &str, phrases: &[&str]) -> bool {
    phrases.iter().any(|p| has_phrase(text, p))
}

/// Scans for `<number> <unit>` pairs; returns (value in SI, is_angle) of the
/// last occurrence.
fn last_magnitude(text: &str) -> Option<(f64, bool)> {
    let mut result = None;
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let neg = c == '-'
            && i + 1 < bytes.len()
            && (bytes[i + 1] as char).is_ascii_digit()
            && (i == 0 || !(bytes[i - 1] as char).is_ascii_alphanumeric());
        if c.is_ascii_digit() || neg {
            let start = i;
            if neg {
                i += 1;
            }
            while i < bytes.len() && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            let number: f64 = match text[start..i].parse() {
                Ok(v) => v,
                Err(_) => continue,
            };
            let rest = text[i..].trim_start();
            let unit: String = rest.chars().take_while(|c| c.is_ascii_alphabetic()).collect();
            let parsed = match unit.as_str() {
                "cm" | "centimeter" | "centimeters" | "centimetre" | "centimetres" => Some((number * CM, false)),
                "mm" | "millimeter" | "millimeters" => Some((number * 0.001, false)),
                "m" | "meter" | "meters" | "metre" | "metres" => Some((number, false)),
                "degress" | "degrees" | "degree" | "deg" => Some((number.to_radians(), true)),
                "radians" | "radian" | "rad" => Some((number, true)),
                _ => None,
            };
            if let Some(v) = parsed {
                result = Some(v);
            }
        } else {
            i += 1;
        }
    }
    result
}

/// The description restates each component with a geometry token; when that
/// mention disagrees with the component list (the list says "the plane", the
/// description says "parallel to the normal"), the description wins. The
/// last mention decides, matching the predicate position.
fn refine_geometry_from_description(components: &mut [GeometricComponentRef], description: &str) {
    for r in components.iter_mut() {
        let mut best: Option<(usize, &str)> = None;
        for token in GEOMETRY_TOKENS {
            let with_part = format!("{token} of {} of {}", r.part, r.object);
            let mut candidates = vec![with_part];
            if r.part == "the body" {
                candidates.push(format!("{token} of {}", r.object));
            }
            for pattern in candidates {
                let mut from = 0;
                while let Some(pos) = description[from..].find(&pattern) {
                    let at = from + pos;
                    let better = match best {
                        None => true,
                        Some((p, t)) => at > p || (at == p && token.len() > t.len()),
                    };
                    if better {
                        best = Some((at, token));
                    }
                    from = at + 1;
                }
            }
        }
        if let Some((_, token)) = best {
            r.geometry = token.to_string();
        }
    }
}

/// Keyword classification of a relation description. Unknown phrasings are a
/// parse error rather than a silent fallback.
fn classify_relation(text: &str, offset: usize) -> Result<RelationSpec, ParseError> {
    let t = normalize(text);
    let mag = last_magnitude(&t);
    let length = mag.filter(|(_, angle)| !angle).map(|(v, _)| v);
    let angle = mag.filter(|(_, angle)| *angle).map(|(v, _)| v);
    let need = |m: Option<f64>, what: &str| {
        m.ok_or_else(|| ParseError::new(offset, format!("relation `{t}` is missing a {what} magnitude")))
    };
    let signed_angle = |a: f64| {
        if has_any(&t, &["clockwise", "clockwisely"]) {
            -a.abs()
        } else {
            a
        }
    };

    let (kind, magnitude) = if has_any(&t, &["orbit", "orbits", "orbiting"]) {
        (RelationKind::OrbitAroundAxisBy, Some(signed_angle(need(angle, "rotation angle")?)))
    } else if has_any(&t, &["rotate", "rotates", "rotated", "rotating"]) {
        (RelationKind::RotateAroundAxisBy, Some(signed_angle(need(angle, "rotation angle")?)))
    } else if has_any(&t, &["colinear", "collinear"]) {
        (RelationKind::Colinear, length)
    } else if has_any(&t, &["reach", "reaches"]) {
        (RelationKind::Reach, None)
    } else if has_phrase(&t, "perpendicular") {
        (RelationKind::Perpendicular, None)
    } else if has_phrase(&t, "parallel") {
        (RelationKind::Parallel, None)
    } else if has_phrase(&t, "unchanged") {
        (RelationKind::DistanceUnchanged, None)
    } else if has_any(&t, &["away", "backward", "backwards", "against"]) && has_any(&t, &["move", "moves", "moved"]) {
        (RelationKind::MoveAwayBy, Some(need(length, "length")?))
    } else if has_any(&t, &["toward", "towards"]) && has_any(&t, &["move", "moves", "moved"]) {
        (RelationKind::MoveTowardBy, Some(need(length, "length")?))
    } else if has_phrase(&t, "to the left") {
        (RelationKind::OffsetAlongAxisBy(OffsetDirection::Left), Some(need(length, "length")?))
    } else if has_phrase(&t, "to the right") {
        (RelationKind::OffsetAlongAxisBy(OffsetDirection::Right), Some(need(length, "length")?))
    } else if has_phrase(&t, "in front of") {
        (RelationKind::OffsetAlongAxisBy(OffsetDirection::Front), Some(need(length, "length")?))
    } else if has_phrase(&t, "behind") {
        (RelationKind::OffsetAlongAxisBy(OffsetDirection::Back), Some(need(length, "length")?))
    } else if has_phrase(&t, "offset up") {
        (RelationKind::OffsetAlongAxisBy(OffsetDirection::Up), Some(need(length, "length")?))
    } else if has_phrase(&t, "offset down") {
        (RelationKind::OffsetAlongAxisBy(OffsetDirection::Down), Some(need(length, "length")?))
    } else if has_phrase(&t, "distance") {
        (RelationKind::DistanceEquals, Some(need(length, "length")?))
    } else if has_phrase(&t, "above") {
        (RelationKind::DirectlyAboveBy, length)
    } else if has_phrase(&t, "below") {
        (RelationKind::DirectlyBelowBy, length)
    } else {
        return Err(ParseError::new(offset, format!("unknown relation phrasing: `{t}`")));
    };
    Ok(RelationSpec { kind, magnitude, raw_text: t })
}

/// Splits `<"a", "b", ...>` into quoted elements with byte offsets, returning
/// the trailing suffix after `>` as well.
fn split_tuple(line: &str) -> Result<(Vec<(usize, String)>, String), ParseError> {
    let trimmed = line.trim_start();
    let base = line.len() - trimmed.len();
    let (body, base) = match trimmed.strip_prefix("- ") {
        Some(s) => (s, base + 2),
        None => (trimmed, base),
    };
    if !body.starts_with('<') {
        return Err(ParseError::new(base, "expected `<` to open a constraint tuple"));
    }
    let close = body
        .find('>')
        .ok_or_else(|| ParseError::new(base + body.len(), "unterminated tuple: missing `>`"))?;
    let inner = &body[1..close];
    let mut elements = Vec::new();
    let mut chars = inner.char_indices();
    loop {
        // Seek the opening quote of the next element.
        let mut start = None;
        for (i, c) in chars.by_ref() {
            if c == '"' {
                start = Some(i + 1);
                break;
            }
            if !c.is_whitespace() && c != ',' {
                return Err(ParseError::new(base + 1 + i, format!("unexpected character `{c}` in tuple")));
            }
        }
        let Some(s) = start else { break };
        let mut end = None;
        for (i, c) in chars.by_ref() {
            if c == '"' {
                end = Some(i);
                break;
            }
        }
        let e = end.ok_or_else(|| ParseError::new(base + 1 + s, "unterminated quoted element"))?;
        elements.push((base + 1 + s, inner[s..e].to_string()));
    }
    if elements.is_empty() {
        return Err(ParseError::new(base, "tuple has no quoted elements"));
    }
    Ok((elements, body[close + 1..].trim().to_string()))
}

fn integers(text: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_ascii_digit() {
            current.push(c);
        } else if !current.is_empty() {
            if let Ok(v) = current.parse() {
                out.push(v);
            }
            current.clear();
        }
    }
    if !current.is_empty() {
        if let Ok(v) = current.parse() {
            out.push(v);
        }
    }
    out
}

fn parse_flow(condition: &str, suffix: &str, offset: usize) -> Result<FlowSpec, ParseError> {
    let cond = normalize(condition);
    if has_phrase(&cond, "repeat") && has_any(&cond, &["time", "times"]) {
        // "repeat this stage for N times"; parenthesized extras like a total
        // angle may follow, so take the integer right before "times".
        let before_times = cond.split("time").next().unwrap_or("");
        let count = integers(before_times)
            .last()
            .copied()
            .ok_or_else(|| ParseError::new(offset, "repeat flow constraint is missing a count"))?;
        return Ok(FlowSpec::Repeat { count: count as u32 });
    }
    let mut when_satisfied = None;
    let mut when_unsatisfied = None;
    for segment in suffix.split(';') {
        let seg = normalize(segment);
        if !has_phrase(&seg, "stage") {
            continue;
        }
        let target = integers(&seg).last().copied();
        if has_phrase(&seg, "not satisfied") {
            when_unsatisfied = target;
        } else if has_phrase(&seg, "satisfied") {
            when_satisfied = target;
        }
    }
    Ok(FlowSpec::Condition {
        question: cond,
        when_satisfied,
        when_unsatisfied,
    })
}

/// Parses one angle-bracketed constraint tuple.
pub fn parse_constraint(line: &str) -> Result<Constraint, ParseError> {
    let (elements, suffix) = split_tuple(line)?;
    let (tag_offset, tag_raw) = &elements[0];
    let tag = normalize(tag_raw);
    match tag.as_str() {
        "grasp" => {
            if elements.len() > 2 {
                return Err(ParseError::new(elements[2].0, "grasp takes at most one component"));
            }
            let components = match elements.get(1) {
                None => Vec::new(),
                Some((_, text)) if text.trim().is_empty() => Vec::new(),
                Some((off, text)) => vec![GeometricComponentRef::parse(text, *off)?],
            };
            Ok(Constraint {
                kind: ConstraintKind::Grasp,
                components,
                relation: None,
                flow: None,
            })
        }
        "release" => {
            if elements.len() > 1 {
                return Err(ParseError::new(elements[1].0, "release takes no components"));
            }
            Ok(Constraint::release())
        }
        "flow constraint" | "flow constraints" | "flow constaints" => {
            let (off, cond) = elements
                .get(1)
                .ok_or_else(|| ParseError::new(*tag_offset, "flow constraint is missing its condition"))?;
            Ok(Constraint {
                kind: ConstraintKind::Flow,
                components: Vec::new(),
                relation: None,
                flow: Some(parse_flow(cond, &suffix, *off)?),
            })
        }
        "sub-goal constraints" | "sub-goal constraint" | "sub-goal constaints" | "subgoal constraints"
        | "subgoal constraint" | "path constraints" | "path constraint" | "path constaints" => {
            let kind = if tag.starts_with("path") {
                ConstraintKind::Path
            } else {
                ConstraintKind::SubGoal
            };
            if elements.len() < 3 {
                return Err(ParseError::new(
                    *tag_offset,
                    "constraint tuple needs at least one component and a description",
                ));
            }
            let mut components = Vec::new();
            for (off, text) in &elements[1..elements.len() - 1] {
                components.push(GeometricComponentRef::parse(text, *off)?);
            }
            let (desc_off, desc) = &elements[elements.len() - 1];
            let relation = classify_relation(desc, *desc_off)?;
            refine_geometry_from_description(&mut components, &relation.raw_text);
            Ok(Constraint {
                kind,
                components,
                relation: Some(relation),
                flow: None,
            })
        }
        other => Err(ParseError::new(
            *tag_offset,
            format!("unknown constraint type `{other}`"),
        )),
    }
}

fn parse_stage_header(line: &str) -> Option<(String, Option<usize>)> {
    let t = line.trim_start().strip_prefix('-')?.trim_start();
    let name = if let Some(rest) = t.strip_prefix('"') {
        rest.split('"').next().unwrap_or("").to_string()
    } else {
        t.split('(').next().unwrap_or("").trim().to_string()
    };
    let index = t.rfind("(stage").and_then(|p| integers(&t[p..]).first().copied());
    Some((name, index))
}

/// Parses a full plan file. Stages without flow constraints implicitly
/// transition to the next stage in order.
pub fn parse_plan(text: &str) -> Result<TaskPlan, PlanError> {
    let mut task_description = String::new();
    let mut stages: Vec<Stage> = Vec::new();
    for (line_no, raw) in text.lines().enumerate() {
        let line_no = line_no + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("task:") {
            task_description = rest.trim().to_string();
            continue;
        }
        let is_tuple =
            line.starts_with('<') || line.strip_prefix("- ").map(|s| s.trim_start().starts_with('<')).unwrap_or(false);
        if is_tuple {
            let constraint = parse_constraint(raw).map_err(|source| PlanError::Parse { line: line_no, source })?;
            match stages.last_mut() {
                Some(stage) => stage.constraints.push(constraint),
                None => {
                    return Err(PlanError::Parse {
                        line: line_no,
                        source: ParseError::new(0, "constraint appears before any stage header"),
                    })
                }
            }
            continue;
        }
        if let Some((name, index)) = parse_stage_header(line) {
            let index = index.unwrap_or(stages.len() + 1);
            stages.push(Stage {
                index,
                name,
                constraints: Vec::new(),
            });
            continue;
        }
        return Err(PlanError::Parse {
            line: line_no,
            source: ParseError::new(0, format!("unrecognized line: `{line}`")),
        });
    }
    let plan = TaskPlan { task_description, stages };
    validate_plan(&plan)?;
    Ok(plan)
}

/// Structural validation: contiguous 1-based indices, one flow constraint per
/// stage, and no dangling flow targets.
pub fn validate_plan(plan: &TaskPlan) -> Result<(), PlanError> {
    if plan.stages.is_empty() {
        return Err(PlanError::Validation("plan has no stages".into()));
    }
    let n = plan.stages.len();
    for (i, stage) in plan.stages.iter().enumerate() {
        if stage.index != i + 1 {
            return Err(PlanError::Validation(format!(
                "stage indices must be contiguous starting at 1; position {} has index {}",
                i + 1,
                stage.index
            )));
        }
        let flows: Vec<&FlowSpec> = stage.constraints.iter().filter_map(|c| c.flow.as_ref()).collect();
        if flows.len() > 1 {
            return Err(PlanError::Validation(format!(
                "stage {} has {} flow constraints; only one is allowed",
                stage.index,
                flows.len()
            )));
        }
        if let Some(FlowSpec::Condition {
            when_satisfied,
            when_unsatisfied,
            ..
        }) = flows.first()
        {
            for target in [when_satisfied, when_unsatisfied].into_iter().flatten() {
                if *target < 1 || *target > n {
                    return Err(PlanError::Validation(format!(
                        "stage {} flow constraint targets stage {target}, which does not exist",
                        stage.index
                    )));
                }
            }
        }
    }
    Ok(())
}

fn format_quantity(value: f64) -> String {
    let rounded = (value * 1e9).round() / 1e9;
    if rounded == rounded.trunc() && rounded.abs() < 1e15 {
        format!("{}", rounded as i64)
    } else {
        format!("{rounded}")
    }
}

fn canonical_length(meters: f64) -> String {
    format!("{} centimeters", format_quantity(meters / CM))
}

fn canonical_angle(radians: f64) -> String {
    format!("{} degrees", format_quantity(radians.to_degrees()))
}

fn canonical_description(relation: &RelationSpec, components: &[GeometricComponentRef]) -> String {
    let c0 = components.first().map(|c| c.canonical_text()).unwrap_or_default();
    let c1 = components.last().map(|c| c.canonical_text()).unwrap_or_default();
    let mag = relation.magnitude;
    match relation.kind {
        RelationKind::Parallel => format!("{c0} is parallel to {c1}"),
        RelationKind::Perpendicular => format!("{c0} is perpendicular to {c1}"),
        RelationKind::DirectlyAboveBy => match mag {
            Some(d) => format!("{c0} is directly above {c1} by {}", canonical_length(d)),
            None => format!("{c0} is directly above {c1}"),
        },
        RelationKind::DirectlyBelowBy => match mag {
            Some(d) => format!("{c0} is directly below {c1} by {}", canonical_length(d)),
            None => format!("{c0} is directly below {c1}"),
        },
        RelationKind::OffsetAlongAxisBy(dir) => format!(
            "{c0} is {} {c1} by {}",
            dir.phrase(),
            canonical_length(mag.unwrap_or(0.0))
        ),
        RelationKind::DistanceEquals => format!(
            "the distance between {c0} and {c1} is {}",
            canonical_length(mag.unwrap_or(0.0))
        ),
        RelationKind::DistanceUnchanged => {
            format!("the distance between {c0} and {c1} remains unchanged")
        }
        RelationKind::RotateAroundAxisBy => format!(
            "{c0} rotates around {c1} by {}",
            canonical_angle(mag.unwrap_or(0.0))
        ),
        RelationKind::OrbitAroundAxisBy => format!(
            "{c0} orbits around {c1} by {}",
            canonical_angle(mag.unwrap_or(0.0))
        ),
        RelationKind::MoveTowardBy => format!(
            "{c0} moves toward {c1} by {}",
            canonical_length(mag.unwrap_or(0.0))
        ),
        RelationKind::MoveAwayBy => format!(
            "{c0} moves away from {c1} by {}",
            canonical_length(mag.unwrap_or(0.0))
        ),
        RelationKind::Colinear => match mag {
            Some(d) => format!("{c0} is colinear with {c1} by {}", canonical_length(d)),
            None => format!("{c0} is colinear with {c1}"),
        },
        RelationKind::Reach => format!("{c0} reaches {c1}"),
    }
}

fn serialize_constraint(c: &Constraint, out: &mut String) {
    match c.kind {
        ConstraintKind::Grasp => {
            let comp = c
                .components
                .first()
                .map(|r| format!("{} of {}", r.part, r.object))
                .unwrap_or_default();
            let _ = writeln!(out, "<\"grasp\", \"{comp}\">");
        }
        ConstraintKind::Release => {
            let _ = writeln!(out, "<\"release\">");
        }
        ConstraintKind::Flow => match c.flow.as_ref() {
            Some(FlowSpec::Repeat { count }) => {
                let _ = writeln!(out, "<\"flow constraints\", \"repeat this stage for {count} times\">");
            }
            Some(FlowSpec::Condition {
                question,
                when_satisfied,
                when_unsatisfied,
            }) => {
                let mut suffix = String::new();
                if when_satisfied.is_some() || when_unsatisfied.is_some() {
                    let yes = when_satisfied.map(|t| format!("go to stage {t} if satisfied"));
                    let no = when_unsatisfied.map(|t| format!("go to stage {t} if not satisfied"));
                    let joined: Vec<String> = [yes, no].into_iter().flatten().collect();
                    suffix = format!(" ({})", joined.join("; "));
                }
                let _ = writeln!(out, "<\"flow constraints\", \"{question}\">{suffix}");
            }
            None => {}
        },
        ConstraintKind::SubGoal | ConstraintKind::Path => {
            let tag = if c.kind == ConstraintKind::Path {
                "path constraints"
            } else {
                "sub-goal constraints"
            };
            let mut elements: Vec<String> = vec![tag.to_string()];
            for comp in &c.components {
                elements.push(comp.canonical_text());
            }
            if let Some(rel) = &c.relation {
                elements.push(canonical_description(rel, &c.components));
            }
            let quoted: Vec<String> = elements.iter().map(|e| format!("\"{e}\"")).collect();
            let _ = writeln!(out, "<{}>", quoted.join(", "));
        }
    }
}

/// Canonical text form; `parse_plan` maps it back to an equal plan.
pub fn serialize_plan(plan: &TaskPlan) -> String {
    let mut out = String::new();
    if !plan.task_description.is_empty() {
        let _ = writeln!(out, "task: {}", plan.task_description);
        out.push('\n');
    }
    for stage in &plan.stages {
        let name = if stage.name.is_empty() {
            format!("stage {}", stage.index)
        } else {
            stage.name.clone()
        };
        let _ = writeln!(out, "- \"{name}\" (stage {})", stage.index);
        for c in &stage.constraints {
            serialize_constraint(c, &mut out);
        }
        out.push('\n');
    }
    out
}
