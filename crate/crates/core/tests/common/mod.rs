#![allow(dead_code)]

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use syntaxeval::ast::ConfounderVector;
use syntaxeval::causal::EvaluationRecord;
use syntaxeval::metrics::SimilarityScores;

const NAMES: [&str; 12] = [
    "total", "count", "items", "value", "result", "acc", "node", "key", "buf", "idx", "limit",
    "data",
];
const FUNCS: [&str; 6] = ["process", "compute", "update", "render", "collect", "merge"];

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs[rng.random_range(0..xs.len())]
}

/// A syntactically valid Python function touching every default node type
/// in a few lines, so no construct dominates the token count.
pub fn python_snippet(i: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
    let f = pick(&mut rng, &FUNCS);
    let a = pick(&mut rng, &NAMES[..4]);
    let b = pick(&mut rng, &NAMES[4..8]);
    let c = pick(&mut rng, &NAMES[8..]);
    let k = rng.random_range(1..50);
    let m = rng.random_range(2..9);
    let mut src = format!("def {f}_{i}({a}, {b}, {c}={k}):\n");
    src.push_str(&format!("    out = []\n    label = \"{f}-{i}\"\n"));
    match i % 3 {
        0 => src.push_str(&format!(
            "    for x in {a}:\n        if x > {c} and x != {b}:\n            out.append(x * {m})\n"
        )),
        1 => src.push_str(&format!(
            "    for x in range({c}):\n        if x % {m} == 0 or x < {b}:\n            out.append(x)\n"
        )),
        _ => src.push_str(&format!(
            "    for x in {a}:\n        if not x or x >= {k}:\n            continue\n        out.append(x + {m})\n"
        )),
    }
    src.push_str(&format!(
        "    while len(out) > {c} and {b}:\n        out.pop()\n"
    ));
    src.push_str("    evens = [y for y in out if y % 2 == 0]\n    print(label, len(evens))\n");
    if i.is_multiple_of(2) {
        src.push_str(&format!("    if {b} is None:\n        return evens\n"));
    }
    src.push_str("    return out\n");
    src
}

pub fn write_corpus(path: &Path, n: usize) {
    let mut f = std::fs::File::create(path).unwrap();
    for i in 0..n {
        let line = serde_json::json!({
            "id": format!("snip{i:04}"),
            "source": python_snippet(i),
            "origin": format!("fixture/{i}.py"),
        });
        writeln!(f, "{line}").unwrap();
    }
}

fn scores(y: f64) -> SimilarityScores {
    SimilarityScores {
        jaccard: y,
        levenshtein: y,
        sorensen_dice: y,
    }
}

fn random_confounders(rng: &mut ChaCha8Rng) -> ConfounderVector {
    let loc = rng.random_range(1..60);
    ConfounderVector {
        parse_errors: rng.random_range(0..3),
        ast_height: rng.random_range(3..15),
        ast_nodes: loc * rng.random_range(5..12),
        whitespaces: loc * rng.random_range(4..20),
        loc,
        cyclo: rng.random_range(1..10),
        token_count: loc * rng.random_range(3..8),
    }
}

/// `Y = 0.8 + delta * T + N(0, 0.05^2)` with confounders independent of T.
/// Every record is its own snippet.
pub fn synthetic_unconfounded(n: usize, delta: f64, seed: u64) -> Vec<EvaluationRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.05).unwrap();
    (0..n)
        .map(|i| {
            let t = rng.random_bool(0.5);
            let y = 0.8 + if t { delta } else { 0.0 } + noise.sample(&mut rng);
            EvaluationRecord {
                snippet_id: format!("s{i:05}"),
                node_type: "identifier".into(),
                treatment: t as u8,
                outcomes: scores(y),
                confounders: random_confounders(&mut rng),
            }
        })
        .collect()
}

/// Lines of code drive both treatment assignment and the outcome.
/// Returns the records and the true effect.
pub fn synthetic_confounded(n: usize, seed: u64) -> (Vec<EvaluationRecord>, f64) {
    let delta = -0.1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let records = (0..n)
        .map(|i| {
            let mut z = random_confounders(&mut rng);
            z.loc = rng.random_range(1..=60);
            let loc_std = (z.loc as f64 - 30.5) / 17.3;
            let p = 1.0 / (1.0 + (-1.2 * loc_std).exp());
            let t = rng.random_bool(p);
            let y = 0.8 + delta * t as u8 as f64 + 0.08 * loc_std + noise.sample(&mut rng);
            EvaluationRecord {
                snippet_id: format!("s{i:05}"),
                node_type: "identifier".into(),
                treatment: t as u8,
                outcomes: scores(y),
                confounders: z,
            }
        })
        .collect();
    (records, delta)
}

/// Each snippet contributes a treated and a control record with the same
/// confounders.
pub fn synthetic_paired(n_snippets: usize, delta: f64, seed: u64) -> Vec<EvaluationRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let mut out = Vec::with_capacity(2 * n_snippets);
    for i in 0..n_snippets {
        let z = random_confounders(&mut rng);
        for t in [1u8, 0] {
            let y = 0.8 + delta * t as f64 + noise.sample(&mut rng);
            out.push(EvaluationRecord {
                snippet_id: format!("p{i:05}"),
                node_type: "identifier".into(),
                treatment: t,
                outcomes: scores(y),
                confounders: z,
            });
        }
    }
    out
}

// ---- oracles ----

/// Textbook recursive definition, no memoisation.
pub fn lev_rec(a: &[u8], b: &[u8]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            if x == y {
                lev_rec(ra, rb)
            } else {
                1 + lev_rec(ra, b).min(lev_rec(a, rb)).min(lev_rec(ra, rb))
            }
        }
    }
}

pub fn all_sequences(max_len: usize, alphabet: u8) -> Vec<Vec<u8>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for c in 0..alphabet {
                let mut t: Vec<u8> = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

pub fn jaccard_def(a: &[u8], b: &[u8]) -> f64 {
    let sa: HashSet<_> = a.iter().collect();
    let sb: HashSet<_> = b.iter().collect();
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / sa.union(&sb).count() as f64
}

pub fn dice_def(a: &[u8], b: &[u8]) -> f64 {
    let sa: HashSet<_> = a.iter().collect();
    let sb: HashSet<_> = b.iter().collect();
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    2.0 * sa.intersection(&sb).count() as f64 / (sa.len() + sb.len()) as f64
}

/// Random design with an intercept column and responses drawn from a
/// logistic model.
pub fn random_logistic_dataset(rng: &mut ChaCha8Rng) -> (DMatrix<f64>, Vec<f64>) {
    let n = rng.random_range(30..200);
    let p = rng.random_range(1..6);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let x = DMatrix::from_fn(
        n,
        p + 1,
        |_, c| if c == 0 { 1.0 } else { normal.sample(rng) },
    );
    let truth = DVector::from_fn(p + 1, |_, _| normal.sample(rng));
    let eta = &x * &truth;
    let y = eta
        .iter()
        .map(|e: &f64| rng.random_bool(1.0 / (1.0 + (-*e).exp())) as u8 as f64)
        .collect();
    (x, y)
}
