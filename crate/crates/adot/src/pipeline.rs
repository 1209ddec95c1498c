//! End-to-end orchestration: cache, planner, validation and audit,
//! remediation, execution, synthesis.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use adot_core::adapters::{PatternTranslator, PlannerError, StructuredAdapter, VectorAdapter};
use adot_core::cache::CacheStats;
use adot_core::dataops::{diagnose, remediate, NoopReplanner, Replanner};
use adot_core::exec::{SynthError, Synthesizer, TemplateSynthesizer};
use adot_core::validate::{audit_plan, Auditor, HeuristicAuditor, NullAuditor};
use adot_core::{
    CacheStrategy, Context, DataLake, DataOpsAction, EditHistory, Embedder, ExecutionEvent,
    ExecutionFeedback, FeedbackClass, FeedbackItem, HashedBowEmbedder, LineageRecord, Plan,
    PlanCache, Planner, RecordKind, RecordStatus, ValidationReport, VariableStore, validate_plan,
};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::executor::{AdapterSet, EventSink, ExecOptions, Executor};
use crate::lineage_log::LineageLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Answered,
    NoPlan,
    InvalidPlan,
    ExecutionFailed,
    Unrecoverable,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Answered => 0,
            RunStatus::InvalidPlan => 2,
            RunStatus::ExecutionFailed => 3,
            RunStatus::NoPlan | RunStatus::Unrecoverable => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Answered => "answered",
            RunStatus::NoPlan => "no_plan",
            RunStatus::InvalidPlan => "invalid_plan",
            RunStatus::ExecutionFailed => "execution_failed",
            RunStatus::Unrecoverable => "unrecoverable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExposedAnswer {
    pub node_index: usize,
    pub description: String,
    pub value: String,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub status: RunStatus,
    pub answer: Option<String>,
    pub exposed: Vec<ExposedAnswer>,
    /// The last plan the pipeline worked on.
    pub plan: Option<Plan>,
    /// The last validation report.
    pub validation: Option<ValidationReport>,
    /// Every runtime failure seen, including ones later repaired.
    pub feedback: Vec<ExecutionFeedback>,
    pub history: EditHistory,
    pub recommendations: Vec<String>,
    pub cache_strategy: Option<CacheStrategy>,
    pub message: Option<String>,
    pub peak_parallel: usize,
    /// Bindings of the final execution attempt.
    pub store: Option<VariableStore>,
}

impl RunReport {
    fn new(status: RunStatus) -> Self {
        RunReport {
            status,
            answer: None,
            exposed: Vec::new(),
            plan: None,
            validation: None,
            feedback: Vec::new(),
            history: EditHistory::default(),
            recommendations: Vec::new(),
            cache_strategy: None,
            message: None,
            peak_parallel: 0,
            store: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub planner_calls: usize,
    pub validations: usize,
    pub executions: usize,
}

#[derive(Default)]
struct AtomicCounters {
    planner_calls: AtomicUsize,
    validations: AtomicUsize,
    executions: AtomicUsize,
}

pub struct Engine {
    lake: Arc<DataLake>,
    embedder: Arc<dyn Embedder>,
    adapters: AdapterSet,
    planner: Option<Box<dyn Planner>>,
    replanner: Box<dyn Replanner>,
    auditor: Box<dyn Auditor>,
    synthesizer: Box<dyn Synthesizer>,
    cache: Mutex<PlanCache>,
    config: PipelineConfig,
    lineage: Arc<LineageLog>,
    counters: AtomicCounters,
}

impl Engine {
    /// Reference components: hashed bag-of-words embeddings, the pattern
    /// translator, the keyword auditor (when enabled) and no replanner.
    pub fn new(lake: DataLake, config: PipelineConfig) -> Self {
        let lake = Arc::new(lake);
        let embedder: Arc<dyn Embedder> = Arc::new(HashedBowEmbedder::new(lake.index.dim().max(1)));
        let mut vector = VectorAdapter::new(Arc::new(lake.index.clone()), embedder.clone());
        vector.top_k = config.top_k;
        let adapters = AdapterSet {
            structured: Arc::new(StructuredAdapter::new(
                Arc::new(lake.tables.clone()),
                Box::new(PatternTranslator::new(lake.schema.clone())),
            )),
            vector: Arc::new(vector),
        };
        let auditor: Box<dyn Auditor> = if config.audit {
            Box::new(HeuristicAuditor)
        } else {
            Box::new(NullAuditor)
        };
        Engine {
            embedder,
            adapters,
            planner: None,
            replanner: Box::new(NoopReplanner),
            auditor,
            synthesizer: Box::new(TemplateSynthesizer),
            cache: Mutex::new(PlanCache::new(config.cache_capacity, config.cache_threshold)),
            lineage: Arc::new(LineageLog::in_memory()),
            counters: AtomicCounters::default(),
            lake,
            config,
        }
    }

    pub fn with_planner(mut self, planner: Box<dyn Planner>) -> Self {
        self.planner = Some(planner);
        self
    }

    pub fn with_replanner(mut self, replanner: Box<dyn Replanner>) -> Self {
        self.replanner = replanner;
        self
    }

    pub fn with_auditor(mut self, auditor: Box<dyn Auditor>) -> Self {
        self.auditor = auditor;
        self
    }

    pub fn with_adapters(mut self, adapters: AdapterSet) -> Self {
        self.adapters = adapters;
        self
    }

    pub fn with_synthesizer(mut self, synthesizer: Box<dyn Synthesizer>) -> Self {
        self.synthesizer = synthesizer;
        self
    }

    pub fn with_cache(self, cache: PlanCache) -> Self {
        *self.cache.lock().expect("cache lock") = cache;
        self
    }

    pub fn with_lineage(mut self, log: Arc<LineageLog>) -> Self {
        self.lineage = log;
        self
    }

    pub fn lake(&self) -> &DataLake {
        &self.lake
    }

    pub fn lineage(&self) -> &LineageLog {
        &self.lineage
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn counters(&self) -> Counters {
        Counters {
            planner_calls: self.counters.planner_calls.load(Ordering::SeqCst),
            validations: self.counters.validations.load(Ordering::SeqCst),
            executions: self.counters.executions.load(Ordering::SeqCst),
        }
    }

    pub fn cache_stats(&self) -> CacheStats {
        self.cache.lock().expect("cache lock").stats()
    }

    pub fn cache_snapshot(&self) -> adot_core::cache::CacheSnapshot {
        self.cache.lock().expect("cache lock").snapshot()
    }

    fn log(&self, mut record: LineageRecord) {
        let t = self.lineage.tick();
        record.started = t;
        record.finished = t;
        let _ = self.lineage.append(record);
    }

    fn exec_options(&self) -> ExecOptions {
        ExecOptions {
            max_parallel: self.config.max_parallel,
            slimming: self.config.slimming,
            inline_threshold: self.config.inline_threshold,
            node_timeout: Duration::from_millis(self.config.node_timeout_ms),
        }
    }

    /// Structural validation followed by the semantic audit.
    pub fn validate(&self, plan: &Plan, query: &str) -> ValidationReport {
        self.counters.validations.fetch_add(1, Ordering::SeqCst);
        let report = validate_plan(plan, &self.lake.schema);
        if !report.is_valid || query.trim().is_empty() {
            return report;
        }
        match audit_plan(plan, query, &self.lake.schema, self.auditor.as_ref()) {
            Ok(audit) => report.merge(audit),
            Err(e) => {
                self.log(LineageRecord::event(0, RecordKind::Dataops, format!("audit skipped: {e}")));
                report
            }
        }
    }

    fn log_action(&self, action: &DataOpsAction, history: &EditHistory) {
        let mut r = LineageRecord::event(0, RecordKind::Dataops, "");
        let entry = history.entries.last();
        r.detail = Some(format!(
            "{:?}: {}",
            action.kind(),
            entry.map(|e| e.delta.join("; ")).unwrap_or_default()
        ));
        if let DataOpsAction::Abort { .. } = action {
            r.status = RecordStatus::Failed;
        }
        self.log(r);
    }

    /// Asks a question: cache, then planner, then [`Engine::run_plan`].
    pub fn ask(&self, question: &str, context: &Context, events: Option<EventSink<'_>>) -> RunReport {
        let sigma = self.lake.signature();
        let gamma = context.fingerprint();
        let hit = if self.config.cache_enabled {
            self.cache
                .lock()
                .expect("cache lock")
                .lookup(question, &sigma, &gamma, self.embedder.as_ref())
        } else {
            None
        };
        let mut strategy = None;
        let plan = match hit {
            Some(hit) => {
                let mut r = LineageRecord::event(0, RecordKind::Cache, format!("cache hit on entry {}", hit.entry_id));
                r.strategy = Some(format!("{:?}", hit.strategy).to_lowercase());
                self.log(r);
                strategy = Some(hit.strategy);
                hit.plan
            }
            None => {
                if self.config.cache_enabled {
                    self.log(LineageRecord::event(0, RecordKind::Cache, "cache miss"));
                }
                let Some(planner) = &self.planner else {
                    return self.finish(RunReport::new(RunStatus::NoPlan).message("no planner configured"), events);
                };
                self.counters.planner_calls.fetch_add(1, Ordering::SeqCst);
                match planner.plan(question, &self.lake.schema) {
                    Ok(p) => p,
                    Err(e @ PlannerError::Miss(_)) | Err(e @ PlannerError::Failed(_)) => {
                        return self.finish(RunReport::new(RunStatus::NoPlan).message(&e.to_string()), events);
                    }
                }
            }
        };
        let mut plan = plan;
        plan.source_query = question.to_string();
        plan.schema_signature = sigma.clone();
        plan.context = context.clone();
        let mut report = self.drive(plan, question, None);
        report.cache_strategy = strategy;
        if report.status == RunStatus::InvalidPlan {
            report.status = RunStatus::Unrecoverable;
        }
        if report.status == RunStatus::Answered && self.config.cache_enabled && strategy != Some(CacheStrategy::Exact) {
            if let Some(p) = &report.plan {
                self.cache
                    .lock()
                    .expect("cache lock")
                    .insert(question, &sigma, &gamma, p, self.embedder.as_ref());
            }
        }
        self.finish(report, events)
    }

    /// Validates, remediates and executes a given plan.
    pub fn run_plan(&self, plan: Plan, events: Option<EventSink<'_>>) -> RunReport {
        let query = plan.source_query.clone();
        let report = self.drive(plan, &query, events);
        self.finish(report, events)
    }

    fn finish(&self, report: RunReport, events: Option<EventSink<'_>>) -> RunReport {
        let mut r = LineageRecord::event(0, RecordKind::Final, report.answer.clone().unwrap_or_default());
        r.status = if report.status == RunStatus::Answered {
            RecordStatus::Ok
        } else {
            RecordStatus::Failed
        };
        r.error_class = (report.status != RunStatus::Answered).then(|| report.status.as_str().to_string());
        self.log(r);
        if let Some(sink) = events {
            sink(&ExecutionEvent::plan_completed(Some(report.status.as_str().to_string())));
        }
        report
    }

    fn drive(&self, mut plan: Plan, query: &str, events: Option<EventSink<'_>>) -> RunReport {
        let mut report = RunReport::new(RunStatus::Answered);
        let budget = self.config.max_fix_iterations;
        let mut store = VariableStore::new();
        // Validate (and remediate) before every execution attempt.
        'attempt: loop {
            let validation = self.validate(&plan, query);
            report.validation = Some(validation.clone());
            if !validation.is_valid {
                if !self.config.dataops {
                    report.status = RunStatus::InvalidPlan;
                    report.plan = Some(plan);
                    return report.message("plan failed validation");
                }
                let diagnoses = diagnose(&FeedbackItem::from_report(&validation));
                let action = remediate(&plan, &self.lake.schema, &diagnoses, &mut report.history, self.replanner.as_ref(), budget);
                self.log_action(&action, &report.history);
                match action {
                    DataOpsAction::Fix { plan: p, .. } => plan = p,
                    DataOpsAction::Replan(p) => {
                        plan = p;
                        store = VariableStore::new();
                    }
                    DataOpsAction::Recommend(r) => {
                        report.recommendations = r;
                        report.status = RunStatus::Unrecoverable;
                        report.plan = Some(plan);
                        return report;
                    }
                    DataOpsAction::Abort { reason } => {
                        report.status = RunStatus::Unrecoverable;
                        report.plan = Some(plan);
                        return report.message(&reason);
                    }
                }
                continue 'attempt;
            }

            self.counters.executions.fetch_add(1, Ordering::SeqCst);
            let executor = Executor::new(&self.adapters, &self.lake.schema, self.exec_options()).with_lineage(&self.lineage);
            let executor = match events {
                Some(sink) => executor.with_events(sink),
                None => executor,
            };
            let outcome = match executor.execute(&plan, store) {
                Ok(o) => o,
                Err(cycle) => {
                    report.status = RunStatus::InvalidPlan;
                    report.plan = Some(plan);
                    return report.message(&cycle.to_string());
                }
            };
            report.peak_parallel = report.peak_parallel.max(outcome.peak_parallel);
            report.feedback.extend(outcome.feedback.iter().cloned());
            plan = outcome.plan;
            store = outcome.store;
            let failures: Vec<ExecutionFeedback> = outcome
                .feedback
                .iter()
                .filter(|f| f.error_class != FeedbackClass::Skipped)
                .cloned()
                .collect();
            if failures.is_empty() {
                break;
            }
            if !self.config.dataops {
                report.status = RunStatus::ExecutionFailed;
                report.plan = Some(plan);
                report.store = Some(store);
                return report.message("execution produced feedback");
            }
            let items: Vec<FeedbackItem> = failures.into_iter().map(FeedbackItem::Execution).collect();
            let action = remediate(&plan, &self.lake.schema, &diagnose(&items), &mut report.history, self.replanner.as_ref(), budget);
            self.log_action(&action, &report.history);
            match action {
                DataOpsAction::Fix { plan: p, .. } => {
                    // Executed nodes keep their status; only the rest reruns.
                    plan = p;
                }
                DataOpsAction::Replan(p) => {
                    plan = p;
                    store = VariableStore::new();
                }
                DataOpsAction::Recommend(r) => {
                    report.recommendations = r;
                    report.status = RunStatus::Unrecoverable;
                    report.plan = Some(plan);
                    report.store = Some(store);
                    return report;
                }
                DataOpsAction::Abort { reason } => {
                    report.status = RunStatus::Unrecoverable;
                    report.plan = Some(plan);
                    report.store = Some(store);
                    return report.message(&reason);
                }
            }
        }

        report.exposed = plan
            .subquestions
            .iter()
            .filter(|q| q.exposes())
            .filter_map(|q| {
                store.get(&q.binding_label()).map(|b| ExposedAnswer {
                    node_index: q.index,
                    description: q.answer_description.clone().unwrap_or_default(),
                    value: b.answer.render(),
                })
            })
            .collect();
        let pairs: Vec<(String, String)> = report
            .exposed
            .iter()
            .map(|e| (e.description.clone(), e.value.clone()))
            .collect();
        match self.synthesizer.synthesize(&pairs) {
            Ok(text) => report.answer = Some(text),
            Err(SynthError::NoExposedResults) => {
                report.status = RunStatus::ExecutionFailed;
                report.message = Some(SynthError::NoExposedResults.to_string());
            }
        }
        report.plan = Some(plan.reset_statuses());
        report.store = Some(store);
        report
    }
}

impl RunReport {
    fn message(mut self, m: &str) -> Self {
        self.message = Some(m.to_string());
        self
    }
}
