#![allow(dead_code)]

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use adot::executor::{AdapterSet, ExecOptions, ExecutionOutcome, Executor};
use adot::lineage_log::LineageLog;
use adot_core::adapters::{AdapterError, AdapterOutput, Answer, NodeData, ResolvedSubQuery, ToolAdapter};
use adot_core::exec::topological_waves;
use adot_core::table::ResultSet;
use adot_core::vector::ChunkHit;
use adot_core::{FeedbackClass, GlobalSchema, LineageRecord, Plan, SourceRef, SubQuery, Tool, Value, VariableStore};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn hash(s: &str) -> u64 {
    let mut h = DefaultHasher::new();
    s.hash(&mut h);
    h.finish()
}

/// Deterministic adapter: output is a pure function of the resolved
/// question; a random sleep perturbs completion order.
pub struct Sim {
    hits: bool,
    jitter_ms: u64,
}

impl ToolAdapter for Sim {
    fn run(&self, rq: &ResolvedSubQuery) -> Result<AdapterOutput, AdapterError> {
        if self.jitter_ms > 0 {
            thread::sleep(Duration::from_micros(rand::thread_rng().gen_range(0..self.jitter_ms * 1000)));
        }
        let h = hash(&rq.question);
        if h % 11 == 0 {
            return Err(AdapterError::new(FeedbackClass::NoMatch, format!("nothing for {h}")));
        }
        let n = 1 + (h % 3) as usize;
        let ids: Vec<i64> = (0..n).map(|i| ((h >> (i * 8)) % 50) as i64).collect();
        let vs: Vec<String> = (0..n).map(|i| format!("v{}", (h >> (i * 5)) % 97)).collect();
        let data = if self.hits {
            NodeData::Hits(
                ids.iter()
                    .zip(&vs)
                    .enumerate()
                    .map(|(i, (&d, v))| ChunkHit {
                        chunk_id: i as u64,
                        document_id: d,
                        score: 1.0 / (i as f64 + 1.0),
                        dense: 0.0,
                        sparse: 0.0,
                        text: rq.question.clone(),
                        metadata: BTreeMap::from([("v".to_string(), Value::Text(v.clone()))]),
                    })
                    .collect(),
            )
        } else {
            let mut rs = ResultSet::new(vec!["document_id".into(), "v".into()]);
            for (i, (d, v)) in ids.iter().zip(&vs).enumerate() {
                rs.push(vec![Value::Int(*d), Value::Text(v.clone())], vec![SourceRef::Row { table: "t".into(), row_id: i as u64 }]);
            }
            NodeData::Rows(rs)
        };
        Ok(AdapterOutput { data, answer: Answer::Values(vs.into_iter().map(Value::Text).collect()) })
    }
}

pub fn sim_adapters(jitter_ms: u64) -> AdapterSet {
    AdapterSet {
        structured: Arc::new(Sim { hits: false, jitter_ms }),
        vector: Arc::new(Sim { hits: true, jitter_ms }),
    }
}

/// Random DAG with up to eight nodes; dependencies may point forwards.
pub fn random_plan(rng: &mut StdRng) -> Plan {
    let n = rng.gen_range(1..=8);
    let mut order: Vec<usize> = (1..=n).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
    let nodes = (1..=n)
        .map(|i| {
            let pos = order.iter().position(|&o| o == i).unwrap();
            let mut q = format!("question {i} salt {}", rng.gen_range(0..1000));
            for &d in &order[..pos] {
                if rng.gen_bool(0.4) {
                    let form = ["", ".v", ".document_id"][rng.gen_range(0..3)];
                    q.push_str(&format!(" uses $var_{d}{form}"));
                }
            }
            let tool = if rng.gen_bool(0.5) { Tool::Structured } else { Tool::Vector };
            let node = SubQuery::new(i, q, tool);
            if rng.gen_bool(0.4) || i == n {
                node.exposed(format!("answer {i}"))
            } else {
                node
            }
        })
        .collect();
    Plan::new(nodes)
}

pub fn run(plan: &Plan, adapters: &AdapterSet, max_parallel: Option<usize>) -> (ExecutionOutcome, Vec<LineageRecord>) {
    let schema = GlobalSchema::default();
    let log = LineageLog::in_memory();
    let options = ExecOptions { max_parallel, ..ExecOptions::default() };
    let out = Executor::new(adapters, &schema, options).with_lineage(&log).execute(plan, VariableStore::new()).unwrap();
    (out, log.records())
}

pub fn normalized(mut records: Vec<LineageRecord>) -> Vec<LineageRecord> {
    for r in &mut records {
        r.seq = 0;
        r.started = 0;
        r.finished = 0;
        r.wall_ms = 0;
    }
    records.sort_by_key(|r| r.node_index);
    records
}

pub fn parallel_matches_sequential_on_random_dags() {
    let mut rng = StdRng::seed_from_u64(0xe7ec);
    let adapters = sim_adapters(2);
    let mut failures_seen = 0;
    for _ in 0..200 {
        let plan = random_plan(&mut rng);
        let (seq, seq_log) = run(&plan, &adapters, Some(1));
        let (par, par_log) = run(&plan, &adapters, Some(8));
        assert_eq!(seq.store.labels(), par.store.labels());
        for l in seq.store.labels() {
            assert_eq!(seq.store.get(&l), par.store.get(&l), "{l}");
        }
        assert_eq!(seq.plan, par.plan);
        let fb = |o: &ExecutionOutcome| {
            let mut v: Vec<_> = o.feedback.iter().map(|f| (f.node_index, f.error_class, f.message.clone(), f.observed.clone())).collect();
            v.sort_by_key(|f| f.0);
            v
        };
        assert_eq!(fb(&seq), fb(&par));
        assert_eq!(normalized(seq_log), normalized(par_log));
        assert!(seq.peak_parallel <= 1);
        failures_seen += usize::from(!seq.feedback.is_empty());

        // each node either bound exactly once or reported
        for q in &plan.subquestions {
            let bound = seq.store.get(&format!("$var_{}", q.index)).is_some();
            let reported = seq.feedback.iter().any(|f| f.node_index == q.index);
            assert!(bound ^ reported);
        }
    }
    assert!(failures_seen > 0);
}

/// Sleeps for the nodes listed in `slow`.
pub struct Sleepy {
    pub slow: Vec<usize>,
    pub delay: Duration,
}

impl ToolAdapter for Sleepy {
    fn run(&self, rq: &ResolvedSubQuery) -> Result<AdapterOutput, AdapterError> {
        if self.slow.contains(&rq.node_index) {
            thread::sleep(self.delay);
        }
        let mut rs = ResultSet::new(vec!["document_id".into()]);
        rs.push(vec![Value::Int(rq.node_index as i64)], vec![]);
        Ok(AdapterOutput { data: NodeData::Rows(rs), answer: Answer::Text(format!("n{}", rq.node_index)) })
    }
}

pub fn diamond() -> Plan {
    Plan::new(vec![
        SubQuery::new(1, "root", Tool::Structured),
        SubQuery::new(2, "left $var_1.document_id", Tool::Structured),
        SubQuery::new(3, "right $var_1.document_id", Tool::Structured),
        SubQuery::new(4, "join $var_2 and $var_3", Tool::Structured).exposed("joined"),
    ])
}

pub fn diamond_wave_runs_concurrently() {
    let plan = diamond();
    let waves: Vec<Vec<usize>> = topological_waves(&plan).unwrap().into_iter().map(|w| w.into_iter().collect()).collect();
    assert_eq!(waves, vec![vec![1], vec![2, 3], vec![4]]);
    let sleepy: Arc<dyn ToolAdapter> = Arc::new(Sleepy { slow: vec![2, 3], delay: Duration::from_millis(100) });
    let adapters = AdapterSet { structured: sleepy.clone(), vector: sleepy };
    let schema = GlobalSchema::default();

    let timed = |max_parallel| {
        let t = Instant::now();
        let out = Executor::new(&adapters, &schema, ExecOptions { max_parallel, ..ExecOptions::default() })
            .execute(&plan, VariableStore::new())
            .unwrap();
        (t.elapsed(), out)
    };
    let (par, out) = timed(Some(2));
    assert!(par < Duration::from_millis(160), "parallel took {par:?}");
    assert_eq!(out.peak_parallel, 2);
    let (default, _) = timed(None);
    assert!(default < Duration::from_millis(160), "default took {default:?}");
    let (seq, _) = timed(Some(1));
    assert!(seq >= Duration::from_millis(200), "sequential took {seq:?}");
}
