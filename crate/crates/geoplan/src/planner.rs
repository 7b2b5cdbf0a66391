//! Pluggable constraint-plan generation: offline fixtures for every test, and
//! an optional chat-completion HTTP backend assembled from the prompt bundle.

use crate::dsl::{parse_plan, PlanError, TaskPlan};
use crate::fixtures;
use crate::registry::{ComponentRegistry, Timestamp};
use crate::registry::CloudSource;
use crate::sim::Scene;
use sha2::{Digest, Sha256};
use std::path::Path;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("plan text did not parse: {message}")]
    UnparseablePlan { message: String, raw: String },
    #[error("prompt bundle: {0}")]
    PromptBundle(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The three prompt components sent to a generation backend.
#[derive(Debug, Clone)]
pub struct PromptBundle {
    pub scheme: String,
    pub examples: String,
    pub knowledge: String,
}

impl PromptBundle {
    /// The bundle shipped with the crate.
    pub fn builtin() -> Self {
        Self {
            scheme: fixtures::SCHEME_PROMPT.to_string(),
            examples: fixtures::EXAMPLES_PROMPT.to_string(),
            knowledge: fixtures::KNOWLEDGE_PROMPT.to_string(),
        }
    }

    /// Loads scheme.txt, examples.txt and knowledge.txt from a directory.
    pub fn load(dir: &Path) -> Result<Self, PlannerError> {
        let read = |name: &str| -> Result<String, PlannerError> {
            let text = std::fs::read_to_string(dir.join(name))?;
            if text.trim().is_empty() {
                return Err(PlannerError::PromptBundle(format!("{name} is empty")));
            }
            Ok(text)
        };
        Ok(Self {
            scheme: read("scheme.txt")?,
            examples: read("examples.txt")?,
            knowledge: read("knowledge.txt")?,
        })
    }

    /// SHA-256 over the concatenated components, hex-encoded.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.scheme.as_bytes());
        hasher.update(self.examples.as_bytes());
        hasher.update(self.knowledge.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn system_text(&self) -> String {
        format!("{}\n\n{}\n\n{}", self.scheme, self.knowledge, self.examples)
    }
}

/// Produces plan text for a task given a scene summary.
pub trait PlannerBackend {
    fn generate(&mut self, task: &str, scene_summary: &str, prompts: &PromptBundle) -> Result<String, PlannerError>;
}

/// Fully offline backend returning a shipped fixture plan verbatim.
pub struct FixtureBackend {
    plan_text: String,
}

impl FixtureBackend {
    pub fn new(name: &str) -> Result<Self, PlannerError> {
        let fixture = fixtures::fixture(name)
            .ok_or_else(|| PlannerError::BackendUnavailable(format!("no fixture named `{name}`")))?;
        Ok(Self {
            plan_text: fixture.plan_text.to_string(),
        })
    }
}

impl PlannerBackend for FixtureBackend {
    fn generate(&mut self, _task: &str, _scene: &str, _prompts: &PromptBundle) -> Result<String, PlannerError> {
        Ok(self.plan_text.clone())
    }
}

/// Generic chat-completion client: one system message carrying the prompt
/// bundle, one user message carrying the task and scene summary, temperature
/// zero. Never required by the test suite.
pub struct HttpBackend {
    pub endpoint: String,
    pub model: String,
    pub timeout: Duration,
    /// Name of the environment variable holding the bearer credential.
    pub credential_env: Option<String>,
}

impl PlannerBackend for HttpBackend {
    fn generate(&mut self, task: &str, scene_summary: &str, prompts: &PromptBundle) -> Result<String, PlannerError> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": 0,
            "messages": [
                { "role": "system", "content": prompts.system_text() },
                { "role": "user", "content": format!("Task: {task}\n\nScene:\n{scene_summary}") },
            ],
        });
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut request = agent.post(&self.endpoint);
        if let Some(var) = &self.credential_env {
            if let Ok(credential) = std::env::var(var) {
                request = request.header("authorization", &format!("Bearer {credential}"));
            }
        }
        let mut response = request
            .send_json(&body)
            .map_err(|e| PlannerError::BackendUnavailable(e.to_string()))?;
        let payload: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|e| PlannerError::BackendUnavailable(format!("bad response body: {e}")))?;
        payload["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| PlannerError::BackendUnavailable("response carries no message content".into()))
    }
}

fn describe_parse_error(e: &PlanError) -> String {
    e.to_string()
}

/// Asks the backend for a plan and parses it; one retry with the parse error
/// appended to the request, then the raw text is surfaced for inspection.
pub fn generate_plan(
    backend: &mut dyn PlannerBackend,
    task: &str,
    scene_summary: &str,
    prompts: &PromptBundle,
) -> Result<TaskPlan, PlannerError> {
    let text = backend.generate(task, scene_summary, prompts)?;
    let first_error = match parse_plan(&text) {
        Ok(plan) => return Ok(plan),
        Err(e) => describe_parse_error(&e),
    };
    let retry_task = format!(
        "{task}\n\nYour previous plan failed to parse: {first_error}\nReply with corrected plan text only."
    );
    let retry_text = backend.generate(&retry_task, scene_summary, prompts)?;
    match parse_plan(&retry_text) {
        Ok(plan) => Ok(plan),
        Err(e) => Err(PlannerError::UnparseablePlan {
            message: describe_parse_error(&e),
            raw: retry_text,
        }),
    }
}

/// Deterministic text listing of the scene contents, the stand-in for image
/// input: object names, their parts, and coarse centroid positions.
pub fn scene_summary(registry: &ComponentRegistry, scene: &Scene) -> String {
    let mut objects: Vec<String> = Vec::new();
    for object in &scene.spec().objects {
        let mut parts = Vec::new();
        for part in &object.parts {
            let key = crate::registry::ComponentKey::new(&part.name, &object.name);
            let centroid = registry
                .cloud(&key, Timestamp::Current)
                .map(|c| c.centroid())
                .unwrap_or_default();
            parts.push(format!(
                "    {} at ({:.2}, {:.2}, {:.2})",
                part.name, centroid.x, centroid.y, centroid.z
            ));
        }
        objects.push(format!("- {}\n{}", object.name, parts.join("\n")));
    }
    if objects.is_empty() {
        return "no objects".to_string();
    }
    objects.join("\n")
}
