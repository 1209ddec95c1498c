#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use adot_core::vector::search_vector;
use adot_core::{Chunk, HashedBowEmbedder, VectorIndex};

// ---- embedding oracle -------------------------------------------------------

pub const STOP: &str = "a an and are as at be been by did do does for from had has have he her his how in into is it its no not of on or she than that the their them then there these they this those to was were what when where which who whom whose with";

pub fn oracle_tokens(text: &str) -> Vec<String> {
    let stop: BTreeSet<&str> = STOP.split(' ').collect();
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars().chain(std::iter::once(' ')) {
        if ch.is_alphanumeric() || ch == '_' {
            cur.push(ch);
        } else if !cur.is_empty() {
            let w = cur.to_lowercase();
            if !stop.contains(w.as_str()) {
                out.push(w);
            }
            cur.clear();
        }
    }
    out
}

pub fn oracle_fnv(bytes: &[u8]) -> u64 {
    bytes.iter().fold(14695981039346656037u64, |h, &b| (h ^ b as u64).wrapping_mul(1099511628211))
}

pub fn oracle_embed(text: &str) -> Vec<f32> {
    let mut v = vec![0f64; 256];
    for t in oracle_tokens(text) {
        v[(oracle_fnv(t.as_bytes()) % 256) as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; 256];
    }
    v.iter().map(|x| (x / norm) as f32).collect()
}

pub fn oracle_sparse(text: &str) -> BTreeMap<String, f32> {
    let mut tf: BTreeMap<String, f64> = BTreeMap::new();
    for t in oracle_tokens(text) {
        *tf.entry(t).or_default() += 1.0;
    }
    let norm = tf.values().map(|x| x * x).sum::<f64>().sqrt();
    tf.into_iter().map(|(k, v)| (k, (v / norm) as f32)).collect()
}

pub fn oracle_cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

// ---- fused retrieval oracle -------------------------------------------------

pub const TWENTY: [(u64, i64, &str); 20] = [
    (1, 1, "Queensland Raceway hosts endurance racing at Willowbank."),
    (2, 1, "The Bathurst 12 Hour is an endurance race at Mount Panorama."),
    (3, 2, "Suncorp Stadium is home to rugby league and rugby union."),
    (4, 2, "The Gabba hosts cricket and Australian rules football."),
    (5, 3, "Brisbane Broncos won six premierships in rugby league."),
    (6, 3, "Endurance racing teams prepare cars for twelve hours."),
    (7, 4, "Marathon runners from 39 countries started the race."),
    (8, 4, "Marathon runners from 39 countries started the race."),
    (9, 5, "The event had 70 competitors and 64 finishers."),
    (10, 5, "Cricket matches at the Gabba draw large crowds."),
    (11, 6, "Rugby union in Queensland is played at Ballymore."),
    (12, 6, "The club won the Bathurst 12 Hour with a factory car."),
    (13, 7, "Willowbank is a locality in the City of Ipswich."),
    (14, 7, "Motor racing at Queensland Raceway began in 1999."),
    (15, 8, "The athlete was born in 1971 near Addis Ababa."),
    (16, 8, "Distance running champions train at altitude."),
    (17, 9, "Endurance racing at Willowbank draws motorsport fans."),
    (18, 9, "A basketball league plays at the Entertainment Centre."),
    (19, 10, "Rugby league State of Origin matches sell out."),
    (20, 10, "Endurance racing teams prepare cars for twelve hours."),
];

pub fn twenty(alpha: f64) -> VectorIndex {
    let e = HashedBowEmbedder::default();
    let mut idx = VectorIndex::new(256).with_alpha(alpha);
    for (cid, did, text) in TWENTY {
        idx.add(Chunk::embedded(cid, did, text, BTreeMap::new(), &e)).unwrap();
    }
    idx
}

pub fn brute_force_rank(query: &str, alpha: f64, k: usize, filter: Option<&BTreeSet<i64>>) -> Vec<(u64, f64)> {
    let qd = oracle_embed(query);
    let qs = oracle_sparse(query);
    let mut scored: Vec<(u64, f64)> = TWENTY
        .iter()
        .filter(|(_, d, _)| filter.is_none_or(|f| f.contains(d)))
        .map(|(cid, _, text)| {
            let dense = oracle_cosine(&qd, &oracle_embed(text));
            let ds = oracle_sparse(text);
            let sparse: f64 = qs.iter().filter_map(|(t, w)| ds.get(t).map(|x| *w as f64 * *x as f64)).sum();
            (*cid, alpha * dense + (1.0 - alpha) * sparse)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

pub fn top_k_matches_brute_force_on_twenty_chunks() {
    let e = HashedBowEmbedder::default();
    let queries = [
        "endurance racing at Willowbank",
        "Marathon runners from 39 countries",
        "rugby league premierships",
        "Endurance racing teams prepare cars for twelve hours.",
        "cricket",
        "nothing matches zzz",
    ];
    let filter = BTreeSet::from([3, 9]);
    for alpha in [0.0, 0.5, 1.0] {
        let idx = twenty(alpha);
        for q in queries {
            for k in [1, 3, 5] {
                for f in [None, Some(&filter)] {
                    let got: Vec<(u64, f64)> = search_vector(&idx, &e, q, k, f)
                        .unwrap()
                        .iter()
                        .map(|h| (h.chunk_id, h.score))
                        .collect();
                    let want = brute_force_rank(q, alpha, k, f);
                    let ids = |v: &[(u64, f64)]| v.iter().map(|x| x.0).collect::<Vec<_>>();
                    assert_eq!(ids(&got), ids(&want), "q={q} k={k} alpha={alpha} filter={f:?}");
                    for (g, w) in got.iter().zip(&want) {
                        assert!((g.1 - w.1).abs() < 1e-9);
                    }
                    if let Some(f) = f {
                        assert!(got.len() <= k);
                        let docs: BTreeSet<i64> = search_vector(&idx, &e, q, k, Some(f))
                            .unwrap()
                            .iter()
                            .map(|h| h.document_id)
                            .collect();
                        assert!(docs.is_subset(f));
                    }
                }
            }
        }
    }
    // identical texts 6 and 20 tie; the lower chunk id ranks first
    let idx = twenty(0.5);
    let hits = search_vector(&idx, &e, "Endurance racing teams prepare cars for twelve hours.", 2, None).unwrap();
    assert_eq!(hits.iter().map(|h| h.chunk_id).collect::<Vec<_>>(), vec![6, 20]);
}
