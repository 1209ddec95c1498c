//! Wave-parallel plan execution.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use adot_core::adapters::{AdapterError, AdapterOutput, ResolvedSubQuery, ToolAdapter};
use adot_core::exec::{
    full_view, required_keys, resolve_question, slim_binding, topological_waves, CycleDetected,
    INLINE_THRESHOLD,
};
use adot_core::lineage::{OutputSummary, SUMMARY_SAMPLES};
use adot_core::plan::{build_dependency_graph, extract_var_refs, label_for};
use adot_core::{
    Binding, ExecutionEvent, ExecutionFeedback, FeedbackClass, GlobalSchema, LineageRecord, Plan,
    RecordKind, RecordStatus, Status, Tool, VariableStore,
};

use crate::lineage_log::LineageLog;

pub const DEFAULT_NODE_TIMEOUT: Duration = Duration::from_secs(30);
pub const MAX_DEFAULT_PARALLEL: usize = 8;

#[derive(Debug, Clone)]
pub struct ExecOptions {
    /// `None` means the width of the widest wave, capped at 8.
    pub max_parallel: Option<usize>,
    pub slimming: bool,
    pub inline_threshold: usize,
    pub node_timeout: Duration,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            max_parallel: None,
            slimming: true,
            inline_threshold: INLINE_THRESHOLD,
            node_timeout: DEFAULT_NODE_TIMEOUT,
        }
    }
}

/// One adapter per tool.
#[derive(Clone)]
pub struct AdapterSet {
    pub structured: Arc<dyn ToolAdapter>,
    pub vector: Arc<dyn ToolAdapter>,
}

impl AdapterSet {
    pub fn get(&self, tool: Tool) -> Arc<dyn ToolAdapter> {
        match tool {
            Tool::Structured => self.structured.clone(),
            Tool::Vector => self.vector.clone(),
        }
    }
}

pub type EventSink<'a> = &'a (dyn Fn(&ExecutionEvent) + Sync);

#[derive(Debug)]
pub struct ExecutionOutcome {
    /// The input plan with statuses and result columns updated.
    pub plan: Plan,
    pub store: VariableStore,
    pub feedback: Vec<ExecutionFeedback>,
    pub waves: Vec<Vec<usize>>,
    /// Largest number of adapter calls observed in flight at once.
    pub peak_parallel: usize,
}

impl ExecutionOutcome {
    /// Failures other than dependents skipped because of them.
    pub fn failures(&self) -> Vec<&ExecutionFeedback> {
        self.feedback
            .iter()
            .filter(|f| f.error_class != FeedbackClass::Skipped)
            .collect()
    }
}

pub struct Executor<'a> {
    adapters: &'a AdapterSet,
    schema: &'a GlobalSchema,
    options: ExecOptions,
    lineage: Option<&'a LineageLog>,
    events: Option<EventSink<'a>>,
}

type NodeResult = Result<AdapterOutput, AdapterError>;

impl<'a> Executor<'a> {
    pub fn new(adapters: &'a AdapterSet, schema: &'a GlobalSchema, options: ExecOptions) -> Self {
        Executor {
            adapters,
            schema,
            options,
            lineage: None,
            events: None,
        }
    }

    pub fn with_lineage(mut self, log: &'a LineageLog) -> Self {
        self.lineage = Some(log);
        self
    }

    pub fn with_events(mut self, sink: EventSink<'a>) -> Self {
        self.events = Some(sink);
        self
    }

    fn emit(&self, e: ExecutionEvent) {
        if let Some(sink) = self.events {
            sink(&e);
        }
    }

    fn tick(&self) -> u64 {
        self.lineage.map_or(0, LineageLog::tick)
    }

    fn record(&self, r: LineageRecord) {
        if let Some(log) = self.lineage {
            // Lineage is best effort; a broken file must not fail the plan.
            let _ = log.append(r);
        }
    }

    fn node_record(plan: &Plan, index: usize, started: u64, finished: u64) -> LineageRecord {
        let node = plan.node(index);
        let mut r = LineageRecord::event(0, RecordKind::Node, "");
        r.detail = None;
        r.node_index = Some(index);
        r.label = Some(label_for(index));
        r.tool = node
            .and_then(|n| n.known_tool())
            .map(|t| t.canonical_name().to_string());
        r.inputs = node
            .map(|n| {
                extract_var_refs(n.question_text())
                    .into_iter()
                    .map(|v| v.label())
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect()
            })
            .unwrap_or_default();
        r.started = started;
        r.finished = finished;
        r
    }

    #[allow(clippy::too_many_arguments)]
    fn fail(
        &self,
        plan: &mut Plan,
        store: &VariableStore,
        feedback: &mut Vec<ExecutionFeedback>,
        index: usize,
        error: AdapterError,
        question: Option<String>,
        started: u64,
        wall: Duration,
    ) {
        let status = if error.class == FeedbackClass::Skipped {
            RecordStatus::Skipped
        } else {
            if let Some(n) = plan.node_mut(index) {
                n.status = Status::Failed;
            }
            RecordStatus::Failed
        };
        let mut r = Self::node_record(plan, index, started, self.tick());
        r.question_resolved = question;
        r.status = status;
        r.error_class = Some(error.class.as_str().to_string());
        r.detail = Some(error.message.clone());
        r.wall_ms = wall.as_millis() as u64;
        self.record(r);
        self.emit(ExecutionEvent::node_failed(index, error.message.clone()));
        feedback.push(ExecutionFeedback {
            node_index: index,
            error_class: error.class,
            message: error.message,
            infrastructure: error.infrastructure,
            observed: error.observed.map(|a| format!("[{}]", a.render())),
            bound_labels: store.labels(),
        });
    }

    fn succeed(
        &self,
        plan: &mut Plan,
        store: &mut VariableStore,
        rq: ResolvedSubQuery,
        out: AdapterOutput,
        started: u64,
        wall: Duration,
    ) -> Result<(), AdapterError> {
        let index = rq.node_index;
        let view = if self.options.slimming {
            let keys = required_keys(plan, self.schema, index, &out.data);
            slim_binding(&out.data, &keys)
                .map_err(|e| AdapterError::new(FeedbackClass::UnknownVariableAtRuntime, e.to_string()))?
        } else {
            full_view(&out.data)
        };
        let mut r = Self::node_record(plan, index, started, self.tick());
        r.question_resolved = Some(rq.question.clone());
        r.inputs = rq.bindings_in.keys().cloned().collect();
        r.provenance_refs = out.data.provenance();
        r.output_summary = OutputSummary {
            row_count: out.data.len(),
            columns: out.data.keys(),
            samples: out.data.samples(SUMMARY_SAMPLES),
        };
        r.wall_ms = wall.as_millis() as u64;
        let rendered = out.answer.render();
        let columns = out.data.keys();
        store
            .bind(Binding {
                label: label_for(index),
                full_result: out.data,
                slim_view: view,
                answer: out.answer,
                produced_by: index,
            })
            .map_err(|e| AdapterError::new(FeedbackClass::StoreError, e.to_string()))?;
        let node = plan.node_mut(index).expect("node exists");
        node.status = Status::Executed;
        node.partial_result_columns = Some(columns);
        let exposed = node
            .exposes()
            .then(|| node.answer_description.clone().unwrap_or_default());
        self.record(r);
        self.emit(ExecutionEvent::node_completed(index));
        if let Some(desc) = exposed {
            self.emit(ExecutionEvent::partial_answer(index, desc, rendered));
        }
        Ok(())
    }

    fn run_batch(&self, batch: &[(ResolvedSubQuery, Tool, u64)], peak: &Arc<(AtomicUsize, AtomicUsize)>) -> Vec<(NodeResult, Duration)> {
        let started = Instant::now();
        let receivers: Vec<mpsc::Receiver<NodeResult>> = batch
            .iter()
            .map(|(rq, tool, _)| {
                let (tx, rx) = mpsc::channel();
                let adapter = self.adapters.get(*tool);
                let rq = rq.clone();
                let peak = peak.clone();
                thread::spawn(move || {
                    let now = peak.0.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.1.fetch_max(now, Ordering::SeqCst);
                    let result = adapter.run(&rq);
                    peak.0.fetch_sub(1, Ordering::SeqCst);
                    let _ = tx.send(result);
                });
                rx
            })
            .collect();
        let deadline = started + self.options.node_timeout;
        receivers
            .into_iter()
            .map(|rx| {
                let wait = deadline.saturating_duration_since(Instant::now());
                let result = match rx.recv_timeout(wait) {
                    Ok(r) => r,
                    Err(mpsc::RecvTimeoutError::Timeout) => Err(AdapterError::infrastructure(
                        FeedbackClass::Timeout,
                        format!("no response within {} ms", self.options.node_timeout.as_millis()),
                    )),
                    Err(mpsc::RecvTimeoutError::Disconnected) => Err(AdapterError::new(
                        FeedbackClass::StoreError,
                        "adapter terminated without a result",
                    )),
                };
                (result, started.elapsed())
            })
            .collect()
    }

    /// Runs every node that is not yet executed. Nodes already executed must
    /// have their bindings in `store`.
    pub fn execute(&self, plan: &Plan, mut store: VariableStore) -> Result<ExecutionOutcome, CycleDetected> {
        let waves = topological_waves(plan)?;
        let graph = build_dependency_graph(plan);
        let widest = waves.iter().map(BTreeSet::len).max().unwrap_or(1);
        let limit = self
            .options
            .max_parallel
            .unwrap_or_else(|| widest.min(MAX_DEFAULT_PARALLEL))
            .max(1);
        let mut plan = plan.clone();
        let mut feedback = Vec::new();
        let mut broken: BTreeSet<usize> = BTreeSet::new();
        let peak = Arc::new((AtomicUsize::new(0), AtomicUsize::new(0)));

        for wave in &waves {
            let mut runnable = Vec::new();
            for &u in wave {
                let started = self.tick();
                if let Some(d) = graph.dependencies_of(u).find(|d| broken.contains(d)) {
                    broken.insert(u);
                    let err = AdapterError::new(
                        FeedbackClass::Skipped,
                        format!("skipped because {} did not complete", label_for(d)),
                    );
                    self.fail(&mut plan, &store, &mut feedback, u, err, None, started, Duration::ZERO);
                    continue;
                }
                let node = plan.node(u).expect("wave node exists").clone();
                let rq = match resolve_question(&node, &store, self.options.inline_threshold) {
                    Ok(rq) => rq,
                    Err(e) => {
                        broken.insert(u);
                        let err = AdapterError::new(FeedbackClass::UnknownVariableAtRuntime, e.to_string());
                        self.fail(&mut plan, &store, &mut feedback, u, err, None, started, Duration::ZERO);
                        continue;
                    }
                };
                let empty = rq
                    .bindings_in
                    .iter()
                    .flat_map(|(label, view)| {
                        extract_var_refs(node.question_text())
                            .into_iter()
                            .filter(move |r| r.label() == *label)
                            .filter_map(|r| r.column)
                            .filter(|c| view.get(c).is_some_and(Vec::is_empty))
                            .map(move |c| format!("{label}.{c}"))
                    })
                    .next();
                if let Some(var) = empty {
                    broken.insert(u);
                    let err = AdapterError::new(FeedbackClass::EmptyDependency, format!("{var} has no values"));
                    self.fail(&mut plan, &store, &mut feedback, u, err, Some(rq.question), started, Duration::ZERO);
                    continue;
                }
                let Some(tool) = node.known_tool() else {
                    broken.insert(u);
                    let err = AdapterError::new(FeedbackClass::TranslationFailed, "node has no usable tool");
                    self.fail(&mut plan, &store, &mut feedback, u, err, Some(rq.question), started, Duration::ZERO);
                    continue;
                };
                runnable.push((rq, tool, started));
            }
            for batch in runnable.chunks(limit) {
                let results = self.run_batch(batch, &peak);
                for ((rq, _, started), (result, wall)) in batch.iter().cloned().zip(results) {
                    let index = rq.node_index;
                    let question = rq.question.clone();
                    let outcome = result.and_then(|out| self.succeed(&mut plan, &mut store, rq, out, started, wall));
                    if let Err(err) = outcome {
                        broken.insert(index);
                        self.fail(&mut plan, &store, &mut feedback, index, err, Some(question), started, wall);
                    }
                }
            }
        }
        Ok(ExecutionOutcome {
            plan,
            store,
            feedback,
            waves: waves.iter().map(|w| w.iter().copied().collect()).collect(),
            peak_parallel: peak.1.load(Ordering::SeqCst),
        })
    }
}
