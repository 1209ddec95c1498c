#![allow(dead_code)]

use std::collections::BTreeSet;

use adot_core::dataops::{diagnose, remediate, NoopReplanner, Replanner, DEFAULT_MAX_ITERATIONS};
use adot_core::plan::{build_dependency_graph, label_for, parse_plan, ToolSpec};
use adot_core::{validate_plan, DataOpsAction, EditHistory, FeedbackItem, GlobalSchema, Plan, Status};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

pub fn lakes() -> Vec<(Plan, GlobalSchema)> {
    let pairs = [
        (
            include_str!("../../../adot/fixtures/queensland/example2_plan.json"),
            include_str!("../../../adot/fixtures/queensland/store/schema.json"),
        ),
        (
            include_str!("../../../adot/fixtures/teen/example1_plan.json"),
            include_str!("../../../adot/fixtures/teen/store/schema.json"),
        ),
        (
            include_str!("../../../adot/fixtures/athletes/plan.json"),
            include_str!("../../../adot/fixtures/athletes/store/schema.json"),
        ),
    ];
    pairs
        .iter()
        .map(|(p, s)| {
            let plan = parse_plan(p).unwrap();
            let schema: GlobalSchema = serde_json::from_str(s).unwrap();
            assert!(validate_plan(&plan, &schema).is_valid);
            (plan, schema)
        })
        .collect()
}

pub fn edges(plan: &Plan) -> BTreeSet<(usize, usize)> {
    build_dependency_graph(plan).edges().clone()
}

pub fn levenshtein(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.chars().enumerate() {
        let mut cur = vec![i + 1];
        for (j, cb) in b.iter().enumerate() {
            cur.push((prev[j] + usize::from(ca != *cb)).min(prev[j + 1] + 1).min(cur[j] + 1));
        }
        prev = cur;
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fault {
    Label,
    Tool,
    Description,
    Column,
    OffByOne,
}

pub const FAULTS: [Fault; 5] = [Fault::Label, Fault::Tool, Fault::Description, Fault::Column, Fault::OffByOne];

/// Rewrites every `$var_<from>` reference into `$var_<to>` in all questions.
pub fn retarget(plan: &mut Plan, map: &dyn Fn(usize) -> usize) {
    for q in &mut plan.subquestions {
        let Some(text) = q.question.clone() else { continue };
        let mut out = String::new();
        let mut last = 0;
        for (span, r) in adot_core::plan::scan_var_refs(&text) {
            out.push_str(&text[last..span.start]);
            out.push_str(&label_for(map(r.target_index)));
            if let Some(c) = &r.column {
                out.push('.');
                out.push_str(c);
            }
            last = span.end;
        }
        out.push_str(&text[last..]);
        q.question = Some(out);
    }
}

/// Moves a referenced node to the end so a forward reference exists, then
/// returns (clean, corrupted) with the forward reference pointing one past
/// the end.
pub fn off_by_one(plan: &Plan, rng: &mut StdRng) -> Option<(Plan, Plan)> {
    let n = plan.len();
    let g = edges(plan);
    let producers: Vec<usize> = g.iter().map(|&(_, v)| v).collect::<BTreeSet<_>>().into_iter().collect();
    let &moved = producers.choose(rng)?;
    let order: Vec<usize> = (1..=n).filter(|&i| i != moved).chain([moved]).collect();
    let new_index = |old: usize| order.iter().position(|&o| o == old).unwrap() + 1;
    let mut clean = Plan::new(order.iter().map(|&o| plan.node(o).unwrap().clone()).collect());
    clean.source_query = plan.source_query.clone();
    retarget(&mut clean, &new_index);
    for (i, q) in clean.subquestions.iter_mut().enumerate() {
        q.index = i + 1;
        q.label = Some(label_for(i + 1));
    }
    let mut bad = clean.clone();
    retarget(&mut bad, &|t| if t == n { n + 1 } else { t });
    Some((clean, bad))
}

pub fn corrupt(plan: &Plan, schema: &GlobalSchema, fault: Fault, rng: &mut StdRng) -> Option<(Plan, Plan)> {
    let n = plan.len();
    let mut bad = plan.clone();
    match fault {
        Fault::Label => {
            let i = rng.gen_range(1..=n);
            let style = rng.gen_range(0..4);
            let new = match style {
                0 => format!("$v{i}"),
                1 => format!("var_{i}"),
                2 => format!("$VAR{i}"),
                _ => format!("$node{i}"),
            };
            if new.starts_with('$') {
                retarget_label(&mut bad, &label_for(i), &new);
            }
            bad.node_mut(i)?.label = Some(new);
        }
        Fault::Tool => {
            let i = rng.gen_range(1..=n);
            let name = *["postgres", "graph", "elastic", "spreadsheet"].choose(rng).unwrap();
            bad.node_mut(i)?.tool = Some(ToolSpec::Unrecognized(name.into()));
        }
        Fault::Description => {
            let exposed: Vec<usize> =
                (1..=n).filter(|&i| plan.node(i).unwrap().should_expose_answer == Some(true)).collect();
            let &i = exposed.choose(rng)?;
            bad.node_mut(i)?.answer_description = if rng.gen_bool(0.5) { None } else { Some("  ".into()) };
        }
        Fault::Column => {
            let (node, col) = (1..=n)
                .flat_map(|i| {
                    adot_core::plan::extract_var_refs(plan.node(i).unwrap().question_text())
                        .into_iter()
                        .filter_map(move |r| r.column.map(|c| (i, c)))
                })
                .collect::<Vec<_>>()
                .choose(rng)?
                .clone();
            let typo = typo(&col, rng);
            let known = schema.known_attributes();
            let candidates = known.iter().filter(|a| levenshtein(a, &typo) <= 2).count();
            if known.contains(typo.as_str()) || candidates != 1 || !typo.starts_with(|c: char| c.is_ascii_alphabetic()) {
                return None;
            }
            let q = bad.node_mut(node)?;
            let text = q.question.clone()?;
            q.question = Some(text.replace(&format!(".{col}"), &format!(".{typo}")));
        }
        Fault::OffByOne => return off_by_one(plan, rng),
    }
    Some((plan.clone(), bad))
}

pub fn retarget_label(plan: &mut Plan, old: &str, new: &str) {
    for q in &mut plan.subquestions {
        if let Some(t) = &mut q.question {
            let refs = adot_core::plan::scan_var_refs(t);
            let mut out = String::new();
            let mut last = 0;
            for (span, r) in refs {
                if label_for(r.target_index) == old {
                    out.push_str(&t[last..span.start]);
                    out.push_str(new);
                    if let Some(c) = &r.column {
                        out.push('.');
                        out.push_str(c);
                    }
                    last = span.end;
                }
            }
            out.push_str(&t[last..]);
            *t = out;
        }
    }
}

pub fn typo(word: &str, rng: &mut StdRng) -> String {
    let mut c: Vec<char> = word.chars().collect();
    let i = rng.gen_range(0..c.len());
    match rng.gen_range(0..3) {
        0 if c.len() > 1 && i + 1 < c.len() => c.swap(i, i + 1),
        1 if c.len() > 2 => {
            c.remove(i);
        }
        _ => c[i] = if c[i] == 'x' { 'z' } else { 'x' },
    }
    c.into_iter().collect()
}

/// Runs validate → diagnose → remediate until the plan validates or the
/// loop stops; returns the final plan, the iterations used and the history.
pub fn repair(plan: &Plan, schema: &GlobalSchema, replanner: &dyn Replanner, budget: usize) -> (Plan, usize, EditHistory, Vec<DataOpsAction>) {
    let mut current = plan.clone();
    let mut history = EditHistory::default();
    let mut actions = Vec::new();
    loop {
        let report = validate_plan(&current, schema);
        if report.is_valid {
            break;
        }
        let d = diagnose(&FeedbackItem::from_report(&report));
        let action = remediate(&current, schema, &d, &mut history, replanner, budget);
        actions.push(action.clone());
        match action {
            DataOpsAction::Fix { plan, .. } | DataOpsAction::Replan(plan) => current = plan,
            _ => break,
        }
        assert!(actions.len() <= budget + 1, "loop exceeded budget");
    }
    (current, actions.len(), history, actions)
}

pub fn seeded_corpus_is_repaired_within_two_iterations() {
    let mut rng = StdRng::seed_from_u64(0xda7a);
    let mut per_class = [0usize; 5];
    for (base, schema) in lakes() {
        for _ in 0..200 {
            let k = rng.gen_range(0..FAULTS.len());
            let Some((clean, bad)) = corrupt(&base, &schema, FAULTS[k], &mut rng) else { continue };
            assert!(validate_plan(&clean, &schema).is_valid);
            // some untouched nodes already ran
            let mut bad = bad;
            for (q, c) in bad.subquestions.iter_mut().zip(&clean.subquestions) {
                if q == c && rng.gen_bool(0.3) {
                    q.status = Status::Executed;
                    q.partial_result_columns = Some(vec!["document_id".into()]);
                }
            }
            let report = validate_plan(&bad, &schema);
            assert!(!report.is_valid, "{:?} produced a valid plan", FAULTS[k]);

            let (fixed, iters, history, actions) = repair(&bad, &schema, &NoopReplanner, DEFAULT_MAX_ITERATIONS);
            assert!(validate_plan(&fixed, &schema).is_valid, "{:?} not repaired: {actions:?}", FAULTS[k]);
            assert!(iters <= 2, "{:?} took {iters} iterations", FAULTS[k]);
            assert!(actions.iter().all(|a| matches!(a, DataOpsAction::Fix { .. })));
            assert_eq!(history.len(), iters);

            assert_eq!(fixed.len(), bad.len());
            assert_eq!(edges(&fixed), edges(&clean));
            for (before, after) in bad.subquestions.iter().zip(&fixed.subquestions) {
                if before.status == Status::Executed {
                    assert_eq!(after, before);
                }
            }
            per_class[k] += 1;
        }
    }
    assert!(per_class.iter().all(|&c| c >= 20), "{per_class:?}");
}

pub fn bundled_seeded_plans_are_repaired() {
    let schema: GlobalSchema =
        serde_json::from_str(include_str!("../../../adot/fixtures/queensland/store/schema.json")).unwrap();
    let seeded = [
        include_str!("../../../adot/fixtures/seeded/bad_label.json"),
        include_str!("../../../adot/fixtures/seeded/tool_mismatch.json"),
        include_str!("../../../adot/fixtures/seeded/missing_description.json"),
        include_str!("../../../adot/fixtures/seeded/schema_drift.json"),
        include_str!("../../../adot/fixtures/seeded/off_by_one_reference.json"),
    ];
    for text in seeded {
        let plan = parse_plan(text).unwrap();
        assert!(!validate_plan(&plan, &schema).is_valid);
        let (fixed, iters, _, _) = repair(&plan, &schema, &NoopReplanner, DEFAULT_MAX_ITERATIONS);
        assert!(validate_plan(&fixed, &schema).is_valid);
        assert_eq!(iters, 1);
    }
}

/// Always offers a plan that is still broken.
pub struct Stubborn(u64);

impl Replanner for Stubborn {
    fn replan(&self, plan: &Plan, _: &GlobalSchema, _: &[FeedbackItem]) -> Result<Option<Plan>, String> {
        let mut p = plan.clone();
        for q in &mut p.subquestions {
            q.question = Some(format!("{} $var_{}", q.question_text(), 90 + self.0));
        }
        Ok(Some(p))
    }
}

pub fn loop_terminates_within_budget() {
    let mut rng = StdRng::seed_from_u64(7);
    let (base, schema) = lakes().remove(0);
    for budget in 0..6 {
        for _ in 0..50 {
            let mut plan = base.clone();
            for q in &mut plan.subquestions {
                match rng.gen_range(0..4) {
                    0 => q.question = Some(format!("{} $var_{}", q.question_text(), rng.gen_range(3..9))),
                    1 => q.tool = Some(ToolSpec::Unrecognized("graph".into())),
                    2 => q.label = Some("oops".into()),
                    _ => {}
                }
            }
            let stubborn = Stubborn(rng.gen_range(0..5));
            let (_, actions, history, _) = repair(&plan, &schema, &stubborn, budget);
            assert!(history.len() <= budget);
            assert!(actions <= budget + 1);
        }
    }
}
