#![allow(dead_code)]

use std::collections::BTreeMap;

use adot_core::cache::{normalize_query, SlotType, Template};
use adot_core::embed::Embedder;
use adot_core::{CacheStrategy, HashedBowEmbedder, Plan, PlanCache, SubQuery, Tool};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

pub const SIG: &str = "sig";
pub const CTX: &str = "ctx";

pub fn plan_for(q: &str) -> Plan {
    let mut p = Plan::new(vec![SubQuery::new(1, q, Tool::Structured).exposed("answer")]);
    p.source_query = q.to_string();
    p
}

pub fn cos(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
    let na: f64 = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub fn template_hit_instantiates_slots() {
    let e = HashedBowEmbedder::default();
    let mut c = PlanCache::default();
    let concrete = Plan::new(vec![
        SubQuery::new(1, "Find the invoice receivers located in Texas", Tool::Structured),
        SubQuery::new(2, "What is the average of total_amount for receivers in $var_1.state?", Tool::Structured)
            .exposed("Average total amount for receivers from Texas"),
    ]);
    let (template, skeleton) = Template::derive(
        "average total amount for invoice receivers from Texas",
        &concrete,
        &[("Texas", "state", SlotType::Identifier)],
    )
    .unwrap();
    assert_eq!(template.text(), "average total amount for invoice receivers from {state:identifier}");
    c.insert_template(template, SIG, CTX, &skeleton);

    let hit = c.lookup("Average total amount for invoice receivers from Ohio", SIG, CTX, &e).unwrap();
    assert_eq!(hit.strategy, CacheStrategy::Template);
    assert_eq!(hit.slot_values, BTreeMap::from([("state".to_string(), "ohio".to_string())]));
    assert!(hit.plan.subquestions[0].question.as_deref().unwrap().contains("ohio"));
    assert!(hit.plan.subquestions[1].answer_description.as_deref().unwrap().contains("ohio"));
    assert!(!hit.plan.subquestions.iter().any(|q| q.question_text().contains("Texas")));

    // a slot absorbs exactly one token of its type
    assert!(c.lookup("average total amount for invoice receivers from New York", SIG, CTX, &e).is_none());
    let parsed = Template::parse("count of rows above {n:number}").unwrap();
    assert!(parsed.matches("count of rows above 42").is_some());
    assert!(parsed.matches("count of rows above many").is_none());
}

pub const WORDS: &[&str] = &["venue", "club", "bathurst", "hour", "winner", "year", "born", "event", "state", "teen"];

pub fn random_query(rng: &mut StdRng) -> String {
    let n = rng.gen_range(1..=5);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

pub fn semantic_decisions_match_brute_force_cosine() {
    let e = HashedBowEmbedder::default();
    let mut rng = StdRng::seed_from_u64(11);
    let (mut semantic, mut misses) = (0, 0);
    for _ in 0..200 {
        let mut cache = PlanCache::new(64, 0.85);
        let mut stored: Vec<(String, u64)> = Vec::new();
        for _ in 0..rng.gen_range(1..8) {
            let q = random_query(&mut rng);
            let id = cache.insert(&q, SIG, CTX, &plan_for(&q), &e).unwrap();
            if !stored.iter().any(|(s, _)| *s == normalize_query(&q)) {
                stored.push((normalize_query(&q), id));
            }
        }
        let probe = random_query(&mut rng);
        let norm = normalize_query(&probe);
        let hit = cache.lookup(&probe, SIG, CTX, &e);
        if let Some((_, id)) = stored.iter().find(|(s, _)| *s == norm) {
            let hit = hit.unwrap();
            assert_eq!((hit.strategy, hit.entry_id), (CacheStrategy::Exact, *id));
            continue;
        }
        let qv = e.embed(&norm);
        let mut best: Option<(f64, u64, &str)> = None;
        for (s, id) in &stored {
            let sim = cos(&qv, &e.embed(s));
            if best.is_none_or(|(b, bid, _)| sim > b || (sim == b && *id < bid)) {
                best = Some((sim, *id, s));
            }
        }
        let (sim, id, text) = best.unwrap();
        if sim >= 0.85 {
            let hit = hit.unwrap_or_else(|| panic!("expected semantic hit for {probe:?} ~ {text:?} ({sim})"));
            assert_eq!(hit.strategy, CacheStrategy::Semantic);
            assert_eq!(hit.entry_id, id);
            assert!((hit.similarity.unwrap() - sim).abs() < 1e-12);
            semantic += 1;
        } else {
            assert!(hit.is_none(), "unexpected hit for {probe:?} ({sim})");
            misses += 1;
        }
    }
    assert!(semantic > 0 && misses > 0, "semantic={semantic} misses={misses}");
}

/// Reference LRU over exact keys.
pub struct ModelLru {
    cap: usize,
    clock: u64,
    entries: Vec<(String, u64)>,
}

impl ModelLru {
    fn insert(&mut self, k: &str) -> Option<String> {
        self.clock += 1;
        if let Some(e) = self.entries.iter_mut().find(|e| e.0 == k) {
            e.1 = self.clock;
            return None;
        }
        let mut evicted = None;
        if self.entries.len() >= self.cap {
            let pos = (0..self.entries.len()).min_by_key(|&i| self.entries[i].1).unwrap();
            evicted = Some(self.entries.remove(pos).0);
        }
        self.entries.push((k.to_string(), self.clock));
        evicted
    }

    fn lookup(&mut self, k: &str) -> bool {
        self.clock += 1;
        match self.entries.iter_mut().find(|e| e.0 == k) {
            Some(e) => {
                e.1 = self.clock;
                true
            }
            None => false,
        }
    }

    fn keys(&self) -> Vec<String> {
        let mut e = self.entries.clone();
        e.sort_by(|a, b| b.1.cmp(&a.1));
        e.into_iter().map(|x| x.0).collect()
    }
}

pub fn lru_eviction_order_matches_model() {
    let e = HashedBowEmbedder::default();
    let keys: Vec<String> = (0..12).map(|i| format!("query number {i}")).collect();
    for cap in [1usize, 2, 8] {
        let mut rng = StdRng::seed_from_u64(cap as u64);
        // a threshold above 1 disables semantic hits so only exact keys count
        let mut cache = PlanCache::new(cap, 2.0);
        let mut model = ModelLru { cap, clock: 0, entries: Vec::new() };
        let mut evictions = 0;
        for step in 0..500 {
            let k = keys.choose(&mut rng).unwrap();
            if rng.gen_bool(0.5) {
                cache.insert(k, SIG, CTX, &plan_for(k), &e);
                evictions += u64::from(model.insert(k).is_some());
            } else {
                let hit = cache.lookup(k, SIG, CTX, &e).is_some();
                assert_eq!(hit, model.lookup(k), "cap {cap} step {step}");
            }
            assert_eq!(cache.keys(), model.keys(), "cap {cap} step {step}");
            assert!(cache.len() <= cap);
        }
        assert_eq!(cache.stats().evictions, evictions);
    }
}
