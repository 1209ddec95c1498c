#![allow(dead_code)]

use std::collections::BTreeSet;

use adot_core::plan::parse_plan;
use adot_core::schema::{CollectionSchema, ColumnDef, ColumnType, TableSchema};
use adot_core::{validate_plan, GlobalSchema, Plan, SubQuery, Tool, ValidationCode};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use regex::Regex;
use serde_json::{json, Value as Json};

pub const COLUMNS: &[&str] = &["document_id", "club", "venue", "league", "amount"];
pub const META: &[&str] = &["title"];

pub fn schema() -> GlobalSchema {
    GlobalSchema {
        tables: vec![TableSchema {
            name: "sport_in_queensland".into(),
            columns: COLUMNS
                .iter()
                .map(|c| ColumnDef {
                    name: c.to_string(),
                    ty: ColumnType::Text,
                })
                .collect(),
            primary_key: None,
            foreign_keys: vec![],
        }],
        collections: vec![CollectionSchema {
            name: "documents".into(),
            metadata_keys: META.iter().map(|s| s.to_string()).collect(),
        }],
        cross_links: vec![],
    }
}

/// Closure by repeated squaring of the adjacency relation.
pub fn has_cycle(n: usize, edges: &BTreeSet<(usize, usize)>) -> bool {
    let mut reach = vec![vec![false; n + 1]; n + 1];
    for &(u, v) in edges {
        reach[u][v] = true;
    }
    for k in 1..=n {
        for i in 1..=n {
            for j in 1..=n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    (1..=n).any(|i| reach[i][i])
}

/// Independent reading of the plan rules, straight from raw JSON.
pub fn brute_force(plan: &Json, attributes: &BTreeSet<&str>) -> Vec<(String, Option<usize>)> {
    let nodes = plan["subquestions"].as_array().unwrap();
    let n = nodes.len();
    if n == 0 {
        return vec![("EmptyPlan".into(), None)];
    }
    let re = Regex::new(r"\$var_([0-9]+)(?:\.([A-Za-z_][A-Za-z0-9_]*))?").unwrap();
    let mut out = Vec::new();
    let mut edges = BTreeSet::new();
    let mut any_exposed = false;
    for (pos, node) in nodes.iter().enumerate() {
        let i = pos + 1;
        let exposed = node.get("should_expose_answer") == Some(&Json::Bool(true));
        any_exposed |= exposed;
        let question = node.get("question").and_then(Json::as_str).unwrap_or("");
        for cap in re.captures_iter(question) {
            let d: usize = cap[1].parse().unwrap();
            if d >= 1 && d <= n {
                edges.insert((i, d));
            }
        }
        if node.get("status").and_then(Json::as_str) == Some("executed") {
            continue;
        }
        let here = Some(i);
        for f in ["question", "tool", "label"] {
            if node.get(f).is_none_or(Json::is_null) {
                out.push(("MissingField".into(), here));
            }
        }
        if !node.get("should_expose_answer").is_some_and(Json::is_boolean) {
            out.push(("MissingField".into(), here));
        }
        if let Some(q) = node.get("question").and_then(Json::as_str) {
            if q.trim().is_empty() {
                out.push(("BadQuestion".into(), here));
            }
        }
        if let Some(t) = node.get("tool").and_then(Json::as_str) {
            let t = t.trim().to_ascii_lowercase();
            if !["sql", "iceberg", "structured", "vector", "milvus"].contains(&t.as_str()) {
                out.push(("BadTool".into(), here));
            }
        }
        if let Some(l) = node.get("label").and_then(Json::as_str) {
            if l != format!("$var_{i}") {
                out.push(("BadLabel".into(), here));
            }
        }
        let desc_ok = node
            .get("answer_description")
            .and_then(Json::as_str)
            .is_some_and(|d| !d.trim().is_empty());
        if exposed && !desc_ok {
            out.push(("MissingAnswerDescription".into(), here));
        }
        for cap in re.captures_iter(question) {
            let d: usize = cap[1].parse().unwrap();
            if d == 0 || d > n {
                out.push(("UnknownVariable".into(), here));
                continue;
            }
            if let Some(c) = cap.get(2) {
                let partial = nodes[d - 1]
                    .get("partial_result_columns")
                    .and_then(Json::as_array)
                    .is_some_and(|cols| cols.iter().any(|x| x.as_str() == Some(c.as_str())));
                if !attributes.contains(c.as_str()) && !partial {
                    out.push(("UnknownColumn".into(), here));
                }
            }
        }
    }
    if !any_exposed {
        out.push(("NoExposedAnswer".into(), None));
    }
    if has_cycle(n, &edges) {
        out.push(("CyclicDependency".into(), None));
    }
    out.sort();
    out
}

pub fn implementation(plan: &Json, schema: &GlobalSchema) -> Vec<(String, Option<usize>)> {
    let parsed = parse_plan(&plan.to_string()).unwrap();
    let report = validate_plan(&parsed, schema);
    assert_eq!(report.is_valid, report.errors.is_empty());
    let mut out: Vec<(String, Option<usize>)> = report
        .errors
        .iter()
        .map(|e| {
            let code = format!("{:?}", e.code);
            // The cycle's reported node depends on traversal order.
            let node = if e.code == ValidationCode::CyclicDependency { None } else { e.node_index };
            (code, node)
        })
        .collect();
    out.sort();
    out
}

pub fn base_plan(rng: &mut StdRng) -> Json {
    let n = rng.gen_range(1..=6);
    let mut nodes = Vec::new();
    for i in 1..=n {
        let mut q = format!("What is the {} of the club", COLUMNS.choose(rng).unwrap());
        for d in 1..i {
            if rng.gen_bool(0.4) {
                let attr = if rng.gen_bool(0.5) {
                    format!(".{}", COLUMNS.choose(rng).unwrap())
                } else if rng.gen_bool(0.3) {
                    format!(".{}", META[0])
                } else {
                    String::new()
                };
                q.push_str(&format!(" with key in $var_{d}{attr}"));
            }
        }
        q.push('?');
        let tool = ["iceberg", "milvus", "sql", "vector"].choose(rng).unwrap();
        let mut node = json!({
            "question": q,
            "tool": tool,
            "label": format!("$var_{i}"),
            "should_expose_answer": i == n,
        });
        if i == n {
            node["answer_description"] = json!("answer");
        }
        nodes.push(node);
    }
    json!({ "subquestions": nodes })
}

pub fn mutate(plan: &mut Json, rng: &mut StdRng) {
    let nodes = plan["subquestions"].as_array_mut().unwrap();
    let n = nodes.len();
    if n == 0 {
        return;
    }
    let i = rng.gen_range(0..n);
    match rng.gen_range(0..12) {
        0 => {
            let f = ["question", "tool", "label", "should_expose_answer"].choose(rng).unwrap();
            nodes[i].as_object_mut().unwrap().remove(*f);
        }
        1 => nodes[i]["label"] = json!(["$v1", "$var_x", "var_1", "$var_0", "$var_99"].choose(rng).unwrap()),
        2 => {
            let d = *[0, n + 1, n + 3].choose(rng).unwrap();
            let q = nodes[i]["question"].as_str().unwrap_or("").to_string();
            nodes[i]["question"] = json!(format!("{q} and $var_{d}"));
        }
        3 => {
            let d = rng.gen_range(1..=n);
            let q = nodes[i]["question"].as_str().unwrap_or("").to_string();
            nodes[i]["question"] = json!(format!("{q} using $var_{d}.nonexistent_col"));
        }
        4 => {
            // a reference back from an earlier node closes a cycle when a path exists
            let j = rng.gen_range(0..n);
            let q = nodes[i]["question"].as_str().unwrap_or("").to_string();
            nodes[i]["question"] = json!(format!("{q} then $var_{}", j + 1));
        }
        5 => {
            for node in nodes.iter_mut() {
                node["should_expose_answer"] = json!(false);
            }
        }
        6 => nodes[i]["should_expose_answer"] = json!("true"),
        7 => nodes[i]["question"] = json!("   "),
        8 => nodes[i]["tool"] = json!(["graph", "postgres", "Milvus", " sql "].choose(rng).unwrap()),
        9 => {
            nodes[i]["should_expose_answer"] = json!(true);
            nodes[i].as_object_mut().unwrap().remove("answer_description");
        }
        10 => {
            nodes[i]["status"] = json!("executed");
            nodes[i]["partial_result_columns"] = json!(["exotic_col"]);
            let q = nodes[i]["question"].as_str().unwrap_or("").to_string();
            nodes[i]["question"] = json!(format!("{q} via $var_{}", n + 5));
            if i + 1 < n {
                let q = nodes[i + 1]["question"].as_str().unwrap_or("").to_string();
                nodes[i + 1]["question"] = json!(format!("{q} $var_{}.exotic_col", i + 1));
            }
        }
        _ => {
            nodes.clear();
        }
    }
}

pub fn validator_matches_brute_force_on_mutated_plans() {
    let schema = schema();
    let attributes: BTreeSet<&str> = COLUMNS.iter().chain(META).copied().collect();
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let mut invalid = 0;
    for case in 0..1000 {
        let mut plan = base_plan(&mut rng);
        let mutations = rng.gen_range(0..=3);
        for _ in 0..mutations {
            mutate(&mut plan, &mut rng);
        }
        let expected = brute_force(&plan, &attributes);
        let got = implementation(&plan, &schema);
        assert_eq!(got, expected, "case {case}: {plan}");
        invalid += usize::from(!expected.is_empty());
    }
    // the corpus exercises both verdicts
    assert!(invalid > 300 && invalid < 1000, "{invalid} invalid plans");
}

pub fn plan_from_edges(n: usize, edges: &BTreeSet<(usize, usize)>) -> Plan {
    let nodes = (1..=n)
        .map(|i| {
            let refs: Vec<String> = edges
                .iter()
                .filter(|(u, _)| *u == i)
                .map(|(_, v)| format!("$var_{v}"))
                .collect();
            SubQuery::new(i, format!("node {i} {}", refs.join(" ")), Tool::Structured).exposed("d")
        })
        .collect();
    Plan::new(nodes)
}

pub fn cycle_detection_is_exact_on_all_small_digraphs() {
    let schema = schema();
    for n in 1..=5usize {
        // self-loops are enumerated up to 4 nodes; 5-node graphs use the 20 proper edges
        let self_loops = n <= 4;
        let pairs: Vec<(usize, usize)> = (1..=n)
            .flat_map(|u| (1..=n).map(move |v| (u, v)))
            .filter(|(u, v)| self_loops || u != v)
            .collect();
        for mask in 0u32..(1 << pairs.len()) {
            let edges: BTreeSet<(usize, usize)> = pairs
                .iter()
                .enumerate()
                .filter(|(b, _)| mask >> b & 1 == 1)
                .map(|(_, e)| *e)
                .collect();
            let report = validate_plan(&plan_from_edges(n, &edges), &schema);
            let cyclic = report.codes().contains(&ValidationCode::CyclicDependency);
            assert_eq!(cyclic, has_cycle(n, &edges), "n={n} edges={edges:?}");
            assert_eq!(report.is_valid, !cyclic);
        }
    }
}
