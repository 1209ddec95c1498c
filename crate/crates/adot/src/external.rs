//! Planner and replanner backed by an external command.
//!
//! The command runs through `sh -c`. The planner writes the question to the
//! child's standard input and expects plan JSON on standard output. The
//! replanner writes `{"plan", "schema", "feedback"}` and accepts either a
//! plan or empty output (no alternative).

use std::io::Write;
use std::process::{Command, Stdio};

use adot_core::dataops::{FeedbackItem, Replanner};
use adot_core::plan::{parse_plan, plan_to_json};
use adot_core::{GlobalSchema, Plan, Planner};
use adot_core::adapters::PlannerError;

fn run(command: &str, input: &[u8]) -> Result<String, String> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| format!("cannot start `{command}`: {e}"))?;
    if let Some(mut stdin) = child.stdin.take() {
        // A child that ignores its input may close the pipe early.
        let _ = stdin.write_all(input);
    }
    let out = child
        .wait_with_output()
        .map_err(|e| format!("`{command}`: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "`{command}` exited with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    String::from_utf8(out.stdout).map_err(|e| format!("`{command}` wrote invalid UTF-8: {e}"))
}

#[derive(Debug, Clone)]
pub struct ExternalPlanner {
    command: String,
}

impl ExternalPlanner {
    pub fn new(command: impl Into<String>) -> Self {
        ExternalPlanner {
            command: command.into(),
        }
    }
}

impl Planner for ExternalPlanner {
    fn plan(&self, question: &str, _: &GlobalSchema) -> Result<Plan, PlannerError> {
        let out = run(&self.command, question.as_bytes()).map_err(PlannerError::Failed)?;
        if out.trim().is_empty() {
            return Err(PlannerError::Miss(question.to_string()));
        }
        let mut plan = parse_plan(&out).map_err(|e| PlannerError::Failed(e.to_string()))?;
        plan.source_query = question.to_string();
        Ok(plan)
    }
}

#[derive(Debug, Clone)]
pub struct ExternalReplanner {
    command: String,
}

impl ExternalReplanner {
    pub fn new(command: impl Into<String>) -> Self {
        ExternalReplanner {
            command: command.into(),
        }
    }
}

impl Replanner for ExternalReplanner {
    fn replan(
        &self,
        plan: &Plan,
        schema: &GlobalSchema,
        feedback: &[FeedbackItem],
    ) -> Result<Option<Plan>, String> {
        let request = serde_json::json!({
            "plan": plan_to_json(plan),
            "schema": schema,
            "feedback": feedback,
        });
        let out = run(&self.command, request.to_string().as_bytes())?;
        if out.trim().is_empty() {
            return Ok(None);
        }
        parse_plan(&out).map(Some).map_err(|e| e.to_string())
    }
}
