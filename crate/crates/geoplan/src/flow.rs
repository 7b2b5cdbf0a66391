//! Stage transition engine: sequential default, repeat-N counters, and
//! condition-oracle branching, plus the episode loop that drives stage
//! execution.

use crate::cost::{compile_stage, mean_cost};
use crate::dsl::{FlowSpec, Stage, TaskPlan};
use crate::registry::ComponentRegistry;
use crate::solver::{execute_stage, SolverConfig, SolverError, Trajectory, TrajectoryWorld};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum YesNo {
    Yes,
    No,
}

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("condition oracle failed: {0}")]
    Oracle(String),
    #[error("plan has no stage {0}")]
    MissingStage(usize),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Cost(#[from] crate::cost::CostError),
}

/// Answers stage-transition questions from the current observation.
pub trait ConditionOracle {
    fn query(&mut self, question: &str, observation: &ComponentRegistry) -> Result<YesNo, FlowError>;
}

/// Replays a fixed answer sequence; exhausting it is an oracle failure.
pub struct ScriptedOracle {
    answers: VecDeque<YesNo>,
}

impl ScriptedOracle {
    pub fn new(answers: impl IntoIterator<Item = YesNo>) -> Self {
        Self {
            answers: answers.into_iter().collect(),
        }
    }
}

impl ConditionOracle for ScriptedOracle {
    fn query(&mut self, question: &str, _observation: &ComponentRegistry) -> Result<YesNo, FlowError> {
        self.answers
            .pop_front()
            .ok_or_else(|| FlowError::Oracle(format!("scripted answers exhausted at question `{question}`")))
    }
}

/// Evaluates a geometric predicate over the registry.
pub struct PredicateOracle<F: FnMut(&ComponentRegistry) -> bool> {
    predicate: F,
}

impl<F: FnMut(&ComponentRegistry) -> bool> PredicateOracle<F> {
    pub fn new(predicate: F) -> Self {
        Self { predicate }
    }
}

impl<F: FnMut(&ComponentRegistry) -> bool> ConditionOracle for PredicateOracle<F> {
    fn query(&mut self, _question: &str, observation: &ComponentRegistry) -> Result<YesNo, FlowError> {
        Ok(if (self.predicate)(observation) { YesNo::Yes } else { YesNo::No })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transition {
    Goto(usize),
    Terminate,
}

impl Transition {
    fn label(&self, from: usize) -> String {
        match self {
            Transition::Terminate => "terminate".to_string(),
            Transition::Goto(i) if *i == from => "stay".to_string(),
            Transition::Goto(i) if *i == from + 1 => "advance".to_string(),
            Transition::Goto(i) => format!("goto:{i}"),
        }
    }
}

/// Per-episode flow state: the repeat counters reset to zero when their loop
/// exits.
#[derive(Debug, Default, Clone)]
pub struct FlowState {
    counters: BTreeMap<usize, u32>,
}

impl FlowState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn counter(&self, stage: usize) -> u32 {
        self.counters.get(&stage).copied().unwrap_or(0)
    }
}

/// Decides where to go after `stage` has executed. Stages without flow
/// constraints advance sequentially; a repeat-N stage is visited exactly N
/// times before advancing; a condition stage asks the oracle and falls back
/// to advance-on-yes / stay-on-no when the tuple named no explicit targets.
pub fn next_stage(
    state: &mut FlowState,
    stage: &Stage,
    total_stages: usize,
    oracle: &mut dyn ConditionOracle,
    observation: &ComponentRegistry,
) -> Result<Transition, FlowError> {
    let advance = |index: usize| {
        if index >= total_stages {
            Transition::Terminate
        } else {
            Transition::Goto(index + 1)
        }
    };
    match stage.flow() {
        None => Ok(advance(stage.index)),
        Some(FlowSpec::Repeat { count }) => {
            let counter = state.counters.entry(stage.index).or_insert(0);
            *counter += 1;
            if *counter < *count {
                Ok(Transition::Goto(stage.index))
            } else {
                *counter = 0;
                Ok(advance(stage.index))
            }
        }
        Some(FlowSpec::Condition {
            question,
            when_satisfied,
            when_unsatisfied,
        }) => {
            let answer = oracle.query(question, observation)?;
            let target = match answer {
                YesNo::Yes => match when_satisfied {
                    Some(t) => Transition::Goto(*t),
                    None => advance(stage.index),
                },
                YesNo::No => match when_unsatisfied {
                    Some(t) => Transition::Goto(*t),
                    None => Transition::Goto(stage.index),
                },
            };
            Ok(target)
        }
    }
}

/// One record per stage visit, the unit of the episode log file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageVisit {
    pub stage: usize,
    pub name: String,
    pub visit: u32,
    pub subgoal_residual: f64,
    pub transition: String,
    pub solve_ms: u64,
}

#[derive(Debug, Default)]
pub struct EpisodeResult {
    pub trajectories: Vec<Trajectory>,
    pub log: Vec<StageVisit>,
    pub success: bool,
    pub timed_out: bool,
    /// Stages never visited during the episode.
    pub unvisited: Vec<usize>,
}

/// Serializes the episode log as line-delimited JSON records.
pub fn episode_log_to_jsonl(log: &[StageVisit]) -> String {
    let mut out = String::new();
    for visit in log {
        out.push_str(&serde_json::to_string(visit).expect("stage visit serializes"));
        out.push('\n');
    }
    out
}

/// Executes stages from stage 1, routing transitions until Terminate or the
/// step budget runs out. Budget exhaustion sets `timed_out` instead of
/// erroring; solver and oracle failures propagate.
pub fn run_episode<W: TrajectoryWorld>(
    plan: &TaskPlan,
    world: &mut W,
    oracle: &mut dyn ConditionOracle,
    cfg: &SolverConfig,
    step_budget: usize,
    success: impl FnOnce(&mut W) -> bool,
) -> Result<EpisodeResult, FlowError> {
    let mut state = FlowState::new();
    let mut result = EpisodeResult::default();
    let mut visits: BTreeMap<usize, u32> = BTreeMap::new();
    let mut current = 1;
    let mut steps = 0;
    loop {
        if steps >= step_budget {
            result.timed_out = true;
            break;
        }
        let stage = plan.stage(current).ok_or(FlowError::MissingStage(current))?;
        let started = Instant::now();
        let trajectory = execute_stage(stage, world, cfg)?;
        let solve_ms = started.elapsed().as_millis() as u64;
        let costs = compile_stage(stage, world.registry())?;
        let subgoal_residual = mean_cost(&costs.subgoal, world.registry())?;
        let transition = next_stage(&mut state, stage, plan.stages.len(), oracle, world.registry())?;
        let visit = visits.entry(current).or_insert(0);
        *visit += 1;
        result.log.push(StageVisit {
            stage: current,
            name: stage.name.clone(),
            visit: *visit,
            subgoal_residual,
            transition: transition.label(current),
            solve_ms,
        });
        result.trajectories.push(trajectory);
        steps += 1;
        match transition {
            Transition::Terminate => break,
            Transition::Goto(next) => current = next,
        }
    }
    result.unvisited = plan
        .stages
        .iter()
        .map(|s| s.index)
        .filter(|i| !visits.contains_key(i))
        .collect();
    result.success = success(world);
    Ok(result)
}
