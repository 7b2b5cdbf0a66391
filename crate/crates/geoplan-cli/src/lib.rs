//! Command implementations behind the `geoplan` binary: run episodes, export
//! randomized-pose datasets, trace per-waypoint costs, and emit plot tables.

use geoplan::cost::{compile_stage, mean_cost, CostError};
use geoplan::dsl::{parse_plan, PlanError, TaskPlan};
use geoplan::fixtures;
use geoplan::flow::{
    episode_log_to_jsonl, run_episode, ConditionOracle, EpisodeResult, FlowError, PredicateOracle, StageVisit, YesNo,
};
use geoplan::geometry::{RigidTransform, RotationMatrix, Vec3};
use geoplan::planner::{generate_plan, scene_summary, HttpBackend, PlannerError, PromptBundle};
use geoplan::registry::CloudSource;
use geoplan::sim::{build_scene, jitter_spec, Scene, SceneError, SceneSpec};
use geoplan::solver::{GripEvent, SolverConfig, SolverError, Trajectory, TrajectoryWorld};
use geoplan::Timestamp;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

/// Errors partitioned into the exit-code classes of the binary.
#[derive(Debug)]
pub enum CliError {
    /// Exit 2: unreadable or unparseable inputs, invalid plans and scenes.
    Parse(String),
    /// Exit 3: the solver failed to converge or a cost could not be evaluated.
    Solver(String),
    /// Exit 4: a plan or oracle backend failed.
    Backend(String),
    /// Exit 5: the episode hit its step budget.
    Budget(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Backend(_) => 4,
            CliError::Budget(_) => 5,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Parse(m) | CliError::Solver(m) | CliError::Backend(m) | CliError::Budget(m) => m,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message())
    }
}

impl From<PlanError> for CliError {
    fn from(e: PlanError) -> Self {
        CliError::Parse(e.to_string())
    }
}

impl From<SceneError> for CliError {
    fn from(e: SceneError) -> Self {
        CliError::Parse(e.to_string())
    }
}

impl From<CostError> for CliError {
    fn from(e: CostError) -> Self {
        CliError::Parse(format!("plan does not fit the scene: {e}"))
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        CliError::Solver(e.to_string())
    }
}

impl From<PlannerError> for CliError {
    fn from(e: PlannerError) -> Self {
        CliError::Backend(e.to_string())
    }
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        match e {
            FlowError::Oracle(m) => CliError::Backend(m),
            FlowError::MissingStage(i) => CliError::Parse(format!("plan has no stage {i}")),
            FlowError::Solver(s) => s.into(),
            FlowError::Cost(c) => CliError::Solver(c.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Parse(e.to_string())
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Where the plan text comes from.
#[derive(Debug, Clone)]
pub enum PlanSource {
    File(PathBuf),
    Fixture(String),
    Backend(String),
}

/// Planner backend settings read from the key=value config file.
#[derive(Debug, Clone)]
pub struct BackendConfig {
    pub model: String,
    pub timeout_secs: u64,
    pub credential_env: Option<String>,
    pub prompt_dir: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            model: "default".into(),
            timeout_secs: 30,
            credential_env: Some("PLANNER_API_KEY".into()),
            prompt_dir: None,
        }
    }
}

/// Parses the `key=value` config file onto the solver and backend settings.
/// `#` starts a comment; unknown keys are an error.
pub fn apply_config_file(path: &Path, solver: &mut SolverConfig, backend: &mut BackendConfig) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path)?;
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Parse(format!(
                "{}:{}: expected key=value, got `{line}`",
                path.display(),
                line_no + 1
            )));
        };
        let key = key.trim();
        let value = value.trim();
        let bad = |what: &str| CliError::Parse(format!("{}:{}: bad {what} `{value}`", path.display(), line_no + 1));
        let number = || value.parse::<f64>().map_err(|_| bad("number"));
        let integer = || value.parse::<u64>().map_err(|_| bad("integer"));
        match key {
            "alpha" => solver.alpha = number()?,
            "beta" => solver.beta = number()?,
            "max_iterations" => solver.max_iterations = integer()? as usize,
            "convergence_tol" => solver.convergence_tol = number()?,
            "fd_step" => solver.fd_step = number()?,
            "control_point_spacing" => solver.control_point_spacing = number()?,
            "control_point_min" => solver.control_point_bounds.0 = integer()? as usize,
            "control_point_max" => solver.control_point_bounds.1 = integer()? as usize,
            "restarts" => solver.restarts = integer()? as usize,
            "backend_model" => backend.model = value.to_string(),
            "backend_timeout_s" => backend.timeout_secs = integer()?,
            "backend_credential_env" => backend.credential_env = Some(value.to_string()),
            "prompt_dir" => backend.prompt_dir = Some(PathBuf::from(value)),
            other => return Err(CliError::Parse(format!("unknown config key `{other}`"))),
        }
    }
    Ok(())
}

/// Loads the scene spec for a run; fixtures resolve to their embedded scenes
/// when no explicit scene file is given.
pub fn resolve_scene_spec(scene: Option<&Path>, plan: &PlanSource) -> Result<SceneSpec, CliError> {
    if let Some(path) = scene {
        return Ok(SceneSpec::from_file(path)?);
    }
    if let PlanSource::Fixture(name) = plan {
        if let Some(fixture) = fixtures::fixture(name) {
            return Ok(SceneSpec::from_toml(fixture.scene_toml)?);
        }
    }
    Err(CliError::Parse("no scene: pass --scene or use --fixture".into()))
}

/// Resolves plan text from a file, an embedded fixture, or a chat backend.
pub fn resolve_plan(source: &PlanSource, scene: &Scene, backend_cfg: &BackendConfig) -> Result<TaskPlan, CliError> {
    match source {
        PlanSource::File(path) => Ok(parse_plan(&std::fs::read_to_string(path)?)?),
        PlanSource::Fixture(name) => {
            let fixture =
                fixtures::fixture(name).ok_or_else(|| CliError::Parse(format!("no fixture named `{name}`")))?;
            Ok(parse_plan(fixture.plan_text)?)
        }
        PlanSource::Backend(endpoint) => {
            let prompts = match &backend_cfg.prompt_dir {
                Some(dir) => PromptBundle::load(dir)?,
                None => PromptBundle::builtin(),
            };
            let mut backend = HttpBackend {
                endpoint: endpoint.clone(),
                model: backend_cfg.model.clone(),
                timeout: Duration::from_secs(backend_cfg.timeout_secs),
                credential_env: backend_cfg.credential_env.clone(),
            };
            let summary = scene_summary(scene.registry(), scene);
            Ok(generate_plan(&mut backend, scene.task(), &summary, &prompts)?)
        }
    }
}

// ---------------------------------------------------------------------------
// Trajectory files
// ---------------------------------------------------------------------------

/// One waypoint per line: index, translation, row-major rotation, event flag.
/// Stage boundaries are comment lines so dumb parsers can skip them.
pub fn trajectories_to_text(trajectories: &[Trajectory], plan: &TaskPlan) -> String {
    let mut out = String::from("# geoplan trajectory v1\n");
    let mut index = 0usize;
    for trajectory in trajectories {
        let name = plan
            .stage(trajectory.stage_index)
            .map(|s| s.name.clone())
            .unwrap_or_default();
        let _ = writeln!(out, "# stage {} \"{}\"", trajectory.stage_index, name);
        for (i, wp) in trajectory.waypoints.iter().enumerate() {
            let event = trajectory
                .events
                .iter()
                .find(|(idx, _)| *idx == i)
                .map(|(_, e)| match e {
                    GripEvent::Grasp { .. } => "grasp",
                    GripEvent::Release => "release",
                })
                .unwrap_or("-");
            let m = wp.rotation.matrix();
            let _ = write!(out, "{index} {} {} {}", wp.translation.x, wp.translation.y, wp.translation.z);
            for r in 0..3 {
                for c in 0..3 {
                    let _ = write!(out, " {}", m[(r, c)]);
                }
            }
            let _ = writeln!(out, " {event}");
            index += 1;
        }
    }
    out
}

/// Parses a trajectory file back into per-stage waypoint lists. Grasp events
/// recover their object from the plan's grasp tuple for that stage.
pub fn trajectories_from_text(text: &str, plan: &TaskPlan) -> Result<Vec<Trajectory>, CliError> {
    let mut result: Vec<Trajectory> = Vec::new();
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("# stage ") {
            let stage_index: usize = rest
                .split_whitespace()
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| CliError::Parse(format!("line {}: bad stage header", line_no + 1)))?;
            result.push(Trajectory {
                waypoints: Vec::new(),
                events: Vec::new(),
                stage_index,
            });
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 14 {
            return Err(CliError::Parse(format!(
                "line {}: expected 14 fields, got {}",
                line_no + 1,
                fields.len()
            )));
        }
        let mut values = [0.0f64; 12];
        for (i, v) in values.iter_mut().enumerate() {
            *v = fields[i + 1]
                .parse()
                .map_err(|_| CliError::Parse(format!("line {}: bad number `{}`", line_no + 1, fields[i + 1])))?;
        }
        let translation = Vec3::new(values[0], values[1], values[2]);
        let m = geoplan::geometry::Mat3::new(
            values[3], values[4], values[5], values[6], values[7], values[8], values[9], values[10], values[11],
        );
        let rotation =
            RotationMatrix::from_matrix(m).map_err(|e| CliError::Parse(format!("line {}: {e}", line_no + 1)))?;
        let trajectory = result
            .last_mut()
            .ok_or_else(|| CliError::Parse(format!("line {}: waypoint before any stage header", line_no + 1)))?;
        let index = trajectory.waypoints.len();
        trajectory.waypoints.push(RigidTransform::new(rotation, translation));
        match fields[13] {
            "-" => {}
            "grasp" => {
                let object = plan
                    .stage(trajectory.stage_index)
                    .and_then(|s| s.grasp())
                    .and_then(|g| g.components.first())
                    .map(|r| r.object.clone());
                trajectory.events.push((index, GripEvent::Grasp { object }));
            }
            "release" => trajectory.events.push((index, GripEvent::Release)),
            other => return Err(CliError::Parse(format!("line {}: unknown event `{other}`", line_no + 1))),
        }
    }
    Ok(result)
}

// ---------------------------------------------------------------------------
// cmd_run
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub task: String,
    pub success: bool,
    pub timed_out: bool,
    pub seed: u64,
    pub stages: Vec<StageVisit>,
    pub trajectory_path: String,
    pub episode_log_path: String,
}

pub struct RunOptions {
    pub scene: Option<PathBuf>,
    pub plan: PlanSource,
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub step_budget: usize,
    pub out_dir: PathBuf,
}

/// Default oracle for CLI runs: condition questions are answered by the
/// scene's success predicate when it is computable from clouds alone, and by
/// No otherwise, leaving the step budget to bound the loop.
fn default_oracle(spec: &SceneSpec) -> Box<dyn ConditionOracle> {
    if let Some(success) = spec.success.clone() {
        if matches!(success.kind.as_str(), "reach" | "above" | "intersects") {
            if let (Some(s), Some(t)) = (success.subject.clone(), success.target.clone()) {
                let s_key = geoplan::ComponentKey::new(&s[0], &s[1]);
                let t_key = geoplan::ComponentKey::new(&t[0], &t[1]);
                let predicate = move |reg: &geoplan::ComponentRegistry| -> bool {
                    let (Ok(a), Ok(b)) = (reg.cloud(&s_key, Timestamp::Current), reg.cloud(&t_key, Timestamp::Current))
                    else {
                        return false;
                    };
                    let d = a.centroid() - b.centroid();
                    match success.kind.as_str() {
                        "reach" => d.norm() <= success.max_meters.unwrap_or(f64::INFINITY),
                        "above" => {
                            let horizontal = (d.x * d.x + d.y * d.y).sqrt();
                            horizontal <= success.max_horizontal.unwrap_or(f64::INFINITY)
                                && d.z >= success.min_height.unwrap_or(0.0)
                                && d.z <= success.max_height.unwrap_or(f64::INFINITY)
                        }
                        _ => d.norm() <= success.margin.unwrap_or(0.0) + 0.1,
                    }
                };
                return Box::new(PredicateOracle::new(predicate));
            }
        }
    }
    struct AlwaysNo;
    impl ConditionOracle for AlwaysNo {
        fn query(&mut self, _q: &str, _o: &geoplan::ComponentRegistry) -> Result<YesNo, FlowError> {
            Ok(YesNo::No)
        }
    }
    Box::new(AlwaysNo)
}

/// Builds the scene, validates that every stage compiles, and runs one
/// episode; the reusable core of `cmd_run` and the dataset exporter.
pub fn run_episode_to_result(
    spec: &SceneSpec,
    plan: &TaskPlan,
    cfg: &SolverConfig,
    step_budget: usize,
    oracle: &mut dyn ConditionOracle,
) -> Result<(Scene, EpisodeResult), CliError> {
    let mut scene = build_scene(spec, cfg.seed)?;
    for stage in &plan.stages {
        compile_stage(stage, scene.registry())?;
    }
    let task = scene.task().to_string();
    let episode = run_episode(plan, &mut scene, oracle, cfg, step_budget, |world| {
        world.check_success(&task).unwrap_or(false)
    })?;
    Ok((scene, episode))
}

pub fn cmd_run(opts: &RunOptions) -> Result<RunReport, CliError> {
    let mut solver = SolverConfig {
        seed: opts.seed,
        ..SolverConfig::default()
    };
    let mut backend_cfg = BackendConfig::default();
    if let Some(config) = &opts.config {
        apply_config_file(config, &mut solver, &mut backend_cfg)?;
        solver.seed = opts.seed;
    }
    let spec = resolve_scene_spec(opts.scene.as_deref(), &opts.plan)?;
    let probe_scene = build_scene(&spec, opts.seed)?;
    let plan = resolve_plan(&opts.plan, &probe_scene, &backend_cfg)?;
    drop(probe_scene);

    let mut oracle = default_oracle(&spec);
    let (_, episode) = run_episode_to_result(&spec, &plan, &solver, opts.step_budget, oracle.as_mut())?;

    std::fs::create_dir_all(&opts.out_dir)?;
    let trajectory_path = opts.out_dir.join("trajectory.txt");
    std::fs::write(&trajectory_path, trajectories_to_text(&episode.trajectories, &plan))?;
    let log_path = opts.out_dir.join("episode_log.jsonl");
    std::fs::write(&log_path, episode_log_to_jsonl(&episode.log))?;

    let report = RunReport {
        task: plan.task_description.clone(),
        success: episode.success,
        timed_out: episode.timed_out,
        seed: opts.seed,
        stages: episode.log.clone(),
        trajectory_path: trajectory_path.display().to_string(),
        episode_log_path: log_path.display().to_string(),
    };
    let report_path = opts.out_dir.join("report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report).expect("report serializes"))?;

    if episode.timed_out {
        return Err(CliError::Budget(format!(
            "episode stopped after {} steps without terminating (artifacts in {})",
            opts.step_budget,
            opts.out_dir.display()
        )));
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// cmd_export_dataset
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub seed: u64,
    pub success: bool,
    pub timed_out: bool,
    pub error: Option<String>,
    pub stages: Vec<StageVisit>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetReport {
    pub episodes: usize,
    pub successes: usize,
    pub out_dir: String,
}

pub struct ExportOptions {
    pub scene: Option<PathBuf>,
    pub plan: PlanSource,
    pub count: usize,
    pub seed: u64,
    pub position_jitter: f64,
    pub yaw_jitter_deg: f64,
    pub step_budget: usize,
    pub out_dir: PathBuf,
    pub workers: usize,
}

fn export_one(
    base_spec: &SceneSpec,
    plan: &TaskPlan,
    opts: &ExportOptions,
    episode: usize,
) -> Result<EpisodeRecord, CliError> {
    let seed = opts.seed.wrapping_add(episode as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    let spec = jitter_spec(base_spec, &mut rng, opts.position_jitter, opts.yaw_jitter_deg);
    let solver = SolverConfig {
        seed,
        ..SolverConfig::default()
    };

    let dir = opts.out_dir.join(format!("ep_{episode:03}"));
    std::fs::create_dir_all(&dir)?;

    let mut oracle = default_oracle(&spec);
    let outcome = run_episode_to_result(&spec, plan, &solver, opts.step_budget, oracle.as_mut());
    let (record, trajectories) = match outcome {
        Ok((scene, result)) => {
            // The stored spec carries the sampling seed, so replaying the
            // record rebuilds an identical scene.
            std::fs::write(dir.join("scene.toml"), scene.spec().to_toml())?;
            (
                EpisodeRecord {
                    episode,
                    seed,
                    success: result.success,
                    timed_out: result.timed_out,
                    error: None,
                    stages: result.log.clone(),
                },
                result.trajectories,
            )
        }
        Err(e) => {
            std::fs::write(dir.join("scene.toml"), spec.to_toml())?;
            (
                EpisodeRecord {
                    episode,
                    seed,
                    success: false,
                    timed_out: false,
                    error: Some(e.to_string()),
                    stages: Vec::new(),
                },
                Vec::new(),
            )
        }
    };
    std::fs::write(dir.join("trajectory.txt"), trajectories_to_text(&trajectories, plan))?;
    std::fs::write(
        dir.join("result.json"),
        serde_json::to_string_pretty(&record).expect("record serializes"),
    )?;
    Ok(record)
}

/// Runs `count` episodes with randomized initial object poses and writes one
/// record directory per episode plus a manifest. Failed episodes are
/// recorded, never dropped.
pub fn cmd_export_dataset(opts: &ExportOptions) -> Result<DatasetReport, CliError> {
    let spec = resolve_scene_spec(opts.scene.as_deref(), &opts.plan)?;
    let probe = build_scene(&spec, opts.seed)?;
    let backend_cfg = BackendConfig::default();
    let plan = resolve_plan(&opts.plan, &probe, &backend_cfg)?;
    drop(probe);
    std::fs::create_dir_all(&opts.out_dir)?;

    let workers = opts.workers.max(1);
    let mut records: Vec<Option<EpisodeRecord>> = (0..opts.count).map(|_| None).collect();
    if workers == 1 || opts.count <= 1 {
        for (episode, slot) in records.iter_mut().enumerate() {
            *slot = Some(export_one(&spec, &plan, opts, episode)?);
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let results = std::sync::Mutex::new(Vec::new());
        std::thread::scope(|scope| {
            for _ in 0..workers.min(opts.count) {
                scope.spawn(|| loop {
                    let episode = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if episode >= opts.count {
                        break;
                    }
                    let outcome = export_one(&spec, &plan, opts, episode);
                    results.lock().unwrap().push((episode, outcome));
                });
            }
        });
        for (episode, outcome) in results.into_inner().unwrap() {
            records[episode] = Some(outcome?);
        }
    }

    let mut manifest = String::new();
    let mut successes = 0;
    for record in records.iter().flatten() {
        if record.success {
            successes += 1;
        }
        manifest.push_str(&serde_json::to_string(record).expect("record serializes"));
        manifest.push('\n');
    }
    std::fs::write(opts.out_dir.join("manifest.jsonl"), manifest)?;
    Ok(DatasetReport {
        episodes: opts.count,
        successes,
        out_dir: opts.out_dir.display().to_string(),
    })
}

// ---------------------------------------------------------------------------
// cmd_trace_costs
// ---------------------------------------------------------------------------

/// Per-waypoint evaluation of every stage cost, written as a CSV time series
/// (negate the cost columns to obtain rewards). Returns the row count.
pub fn cmd_trace_costs(
    spec: &SceneSpec,
    plan: &TaskPlan,
    cfg: &SolverConfig,
    step_budget: usize,
    out_path: &Path,
) -> Result<usize, CliError> {
    let mut oracle = default_oracle(spec);
    let (_, episode) = run_episode_to_result(spec, plan, cfg, step_budget, oracle.as_mut())?;

    // Replay on a fresh scene, evaluating the stage costs after every
    // waypoint exactly as the executor stepped them.
    let mut scene = build_scene(spec, cfg.seed)?;
    let mut out = String::from("index,stage,waypoint,subgoal_cost,path_cost,n_subgoal,n_path\n");
    let mut index = 0usize;
    for trajectory in &episode.trajectories {
        let stage = plan.stage(trajectory.stage_index).ok_or_else(|| {
            CliError::Parse(format!("trajectory references missing stage {}", trajectory.stage_index))
        })?;
        scene.registry_mut().begin_stage(stage.index);
        let costs = compile_stage(stage, scene.registry())?;
        for (i, waypoint) in trajectory.waypoints.iter().enumerate() {
            let step = Trajectory {
                waypoints: vec![*waypoint],
                events: trajectory
                    .events
                    .iter()
                    .filter(|(idx, _)| *idx == i)
                    .map(|(_, e)| (0, e.clone()))
                    .collect(),
                stage_index: stage.index,
            };
            scene.apply_trajectory(&step).map_err(CliError::from)?;
            let subgoal = mean_cost(&costs.subgoal, scene.registry()).map_err(|e| CliError::Solver(e.to_string()))?;
            let path = mean_cost(&costs.path, scene.registry()).map_err(|e| CliError::Solver(e.to_string()))?;
            let _ = writeln!(
                out,
                "{index},{},{i},{subgoal},{path},{},{}",
                stage.index,
                costs.subgoal.len(),
                costs.path.len()
            );
            index += 1;
        }
    }
    std::fs::write(out_path, out)?;
    Ok(index)
}

// ---------------------------------------------------------------------------
// cmd_plot_data
// ---------------------------------------------------------------------------

/// Emits plot-ready tables from a finished run directory: waypoint positions,
/// per-stage residual costs, and final component centroids.
pub fn cmd_plot_data(spec: &SceneSpec, plan: &TaskPlan, run_dir: &Path, out_dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir)?;
    let trajectory_text = std::fs::read_to_string(run_dir.join("trajectory.txt"))?;
    let trajectories = trajectories_from_text(&trajectory_text, plan)?;

    let mut waypoints = String::from("index,stage,x,y,z\n");
    let mut index = 0usize;
    for trajectory in &trajectories {
        for wp in &trajectory.waypoints {
            let _ = writeln!(
                waypoints,
                "{index},{},{},{},{}",
                trajectory.stage_index, wp.translation.x, wp.translation.y, wp.translation.z
            );
            index += 1;
        }
    }
    std::fs::write(out_dir.join("waypoints.csv"), waypoints)?;

    let log_text = std::fs::read_to_string(run_dir.join("episode_log.jsonl"))?;
    let mut costs = String::from("stage,visit,subgoal_residual,solve_ms\n");
    for line in log_text.lines().filter(|l| !l.trim().is_empty()) {
        let visit: StageVisit =
            serde_json::from_str(line).map_err(|e| CliError::Parse(format!("bad episode log line: {e}")))?;
        let _ = writeln!(costs, "{},{},{},{}", visit.stage, visit.visit, visit.subgoal_residual, visit.solve_ms);
    }
    std::fs::write(out_dir.join("stage_costs.csv"), costs)?;

    // Final component centroids come from replaying the trajectories.
    let mut scene = build_scene(spec, spec.seed)?;
    for trajectory in &trajectories {
        scene.registry_mut().begin_stage(trajectory.stage_index);
        scene.apply_trajectory(trajectory).map_err(CliError::from)?;
    }
    let mut centroids = String::from("part,object,x,y,z\n");
    let keys: Vec<geoplan::ComponentKey> = scene.registry().keys().cloned().collect();
    for key in keys {
        let c = scene
            .registry()
            .cloud(&key, Timestamp::Current)
            .map_err(|e| CliError::Parse(e.to_string()))?
            .centroid();
        let _ = writeln!(centroids, "{},{},{},{},{}", key.part, key.object, c.x, c.y, c.z);
    }
    std::fs::write(out_dir.join("centroids.csv"), centroids)?;
    Ok(())
}

/// Replays an exported episode record into a fresh scene; returns the scene
/// in its final state.
pub fn replay_record(record_dir: &Path, plan: &TaskPlan) -> Result<Scene, CliError> {
    let spec = SceneSpec::from_file(&record_dir.join("scene.toml"))?;
    let mut scene = build_scene(&spec, spec.seed)?;
    let text = std::fs::read_to_string(record_dir.join("trajectory.txt"))?;
    let trajectories = trajectories_from_text(&text, plan)?;
    for trajectory in &trajectories {
        scene.registry_mut().begin_stage(trajectory.stage_index);
        scene.apply_trajectory(trajectory).map_err(CliError::from)?;
    }
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_partition_error_classes() {
        assert_eq!(CliError::Parse("x".into()).exit_code(), 2);
        assert_eq!(CliError::Solver("x".into()).exit_code(), 3);
        assert_eq!(CliError::Backend("x".into()).exit_code(), 4);
        assert_eq!(CliError::Budget("x".into()).exit_code(), 5);
    }

    #[test]
    fn config_file_overrides_solver_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("solver.conf");
        std::fs::write(&path, "alpha=0.5\nbeta = 0.25 # rotation weight\ncontrol_point_max=12\n").unwrap();
        let mut solver = SolverConfig::default();
        let mut backend = BackendConfig::default();
        apply_config_file(&path, &mut solver, &mut backend).unwrap();
        assert_eq!(solver.alpha, 0.5);
        assert_eq!(solver.beta, 0.25);
        assert_eq!(solver.control_point_bounds.1, 12);

        std::fs::write(&path, "wibble=1\n").unwrap();
        assert!(matches!(
            apply_config_file(&path, &mut solver, &mut backend),
            Err(CliError::Parse(_))
        ));
    }

    #[test]
    fn trajectory_text_roundtrip() {
        let plan = parse_plan(fixtures::fixture("pick-place").unwrap().plan_text).unwrap();
        let trajectories = vec![
            Trajectory {
                waypoints: vec![
                    RigidTransform::identity(),
                    RigidTransform::new(RotationMatrix::rot_z(0.37), Vec3::new(0.1, -0.2, 0.3)),
                ],
                events: vec![(
                    1,
                    GripEvent::Grasp {
                        object: Some("the red block".into()),
                    },
                )],
                stage_index: 1,
            },
            Trajectory {
                waypoints: vec![RigidTransform::new(RotationMatrix::rot_x(1.1), Vec3::new(0.0, 0.5, 0.2))],
                events: vec![(0, GripEvent::Release)],
                stage_index: 3,
            },
        ];
        let text = trajectories_to_text(&trajectories, &plan);
        let parsed = trajectories_from_text(&text, &plan).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].stage_index, 1);
        assert_eq!(parsed[0].waypoints.len(), 2);
        // Bitwise round-trip through the shortest-float formatting.
        for (a, b) in trajectories[0].waypoints.iter().zip(&parsed[0].waypoints) {
            assert_eq!(a.translation, b.translation);
            assert_eq!(a.rotation.matrix(), b.rotation.matrix());
        }
        assert_eq!(
            parsed[0].events,
            vec![(
                1,
                GripEvent::Grasp {
                    object: Some("the red block".into())
                }
            )]
        );
        assert_eq!(parsed[1].events, vec![(0, GripEvent::Release)]);
    }
}
