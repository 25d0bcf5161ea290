//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::{BTreeSet, HashSet};
use std::time::{Duration, Instant};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tokenprobe::baselines::random_sampling;
use tokenprobe::corpus::{scan, ScanSummary, TokenStream};
use tokenprobe::embedstore::{EmbeddingMatrix, TokenId};
use tokenprobe::hunter::{hunt, traverse, HuntReport, HunterConfig};
use tokenprobe::leiden::{cpm_quality, leiden_with, LeidenConfig, Resolution};
use tokenprobe::metrics::score;
use tokenprobe::oracle::{MockOracle, OracleConfig, ProxyTask};
use tokenprobe::simlab::{generate, SimBundle, SimSpec};
use tokenprobe::taxonomy::{classify_symptom, classify_token_type, SymptomLabel, TokenTypeLabel, WordList};
use tokenprobe::teg::{knn, smooth_params, NeighborList, TokenEmbeddingGraph, SIGMA_MIN};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn sim(scatter: f64, seed: u64) -> SimBundle {
    generate(&SimSpec {
        scatter_fraction: scatter,
        seed,
        ..SimSpec::default()
    })
    .expect("valid spec")
}

fn run_hunt(s: &SimBundle, seed: u64, resolution: f64) -> (HuntReport, Duration) {
    let mock = MockOracle::new(&s.bundle.vocab, s.planted.iter().copied());
    let cfg = HunterConfig {
        k: 50,
        resolution,
        sample_fraction: 0.05,
        threshold_r: 0.0,
        verify_final: true,
        seed,
        ..HunterConfig::default()
    };
    let start = Instant::now();
    let report = hunt(&s.bundle, &mock, &OracleConfig::default(), &cfg).expect("mock hunt");
    (report, start.elapsed())
}

fn end_to_end() -> Outcome {
    let s = sim(0.0, 42);
    let (report, elapsed) = run_hunt(&s, 42, 75.0);
    let e = score(&report.ids(), &s.planted);
    let tested = report.ledger.tokens_tested;
    let budget = (0.40 * s.spec.n as f64) as u64;
    let checks = [
        ("precision == 1", e.precision == 1.0),
        ("recall >= 0.85", e.recall >= 0.85),
        ("tested <= 40% of n", tested <= budget),
        ("wall < 10 s", elapsed < Duration::from_secs(10)),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();

    // informational: the same run at a coarser resolution
    let (tuned, _) = run_hunt(&s, 42, 20.0);
    let te = score(&tuned.ids(), &s.planted);
    println!(
        "    info: resolution 20 gives precision {:.3}, recall {:.3}, tested {} ({} first-pass clusters)",
        te.precision,
        te.recall,
        tuned.ledger.tokens_tested,
        tuned.trace.first().map_or(0, |t| t.clusters)
    );
    outcome(
        failed.is_empty(),
        format!(
            "precision {:.3}, recall {:.3}, tested {tested}/{} (limit {budget}), {} first-pass clusters, {:.2?}{}",
            e.precision,
            e.recall,
            s.spec.n,
            report.trace.first().map_or(0, |t| t.clusters),
            elapsed,
            if failed.is_empty() {
                String::new()
            } else {
                format!("; failed: {}", failed.join(", "))
            }
        ),
    )
}

fn scatter_sensitivity() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 1..=5 {
        let tight = sim(0.0, seed);
        let loose = sim(0.5, seed);
        let r0 = score(&run_hunt(&tight, seed, 75.0).0.ids(), &tight.planted).recall;
        let r5 = score(&run_hunt(&loose, seed, 75.0).0.ids(), &loose.planted).recall;
        ok &= r5 < r0;
        lines.push(format!("seed {seed}: {r0:.3} > {r5:.3}"));
    }
    outcome(ok, lines.join("; "))
}

fn brute_force_knn(rows: &[Vec<f32>], i: usize, k: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = (0..rows.len())
        .filter(|&j| j != i)
        .map(|j| {
            let d: f64 = rows[i]
                .iter()
                .zip(&rows[j])
                .map(|(a, b)| (f64::from(*a) - f64::from(*b)).powi(2))
                .sum();
            (d.sqrt(), j)
        })
        .collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all.truncate(k);
    all.into_iter().map(|(_, j)| j).collect()
}

fn knn_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for _ in 0..50 {
        let n = rng.random_range(2..=500);
        let m = rng.random_range(1..=16);
        let k = rng.random_range(1..=60);
        let rows: Vec<Vec<f32>> = (0..n)
            .map(|_| (0..m).map(|_| rng.random_range(-10.0f32..10.0)).collect())
            .collect();
        let matrix = EmbeddingMatrix::from_rows(&rows).unwrap();
        let lists = knn(&matrix, k).unwrap();
        for (i, list) in lists.iter().enumerate() {
            let got: BTreeSet<usize> = list.ids().collect();
            let want: BTreeSet<usize> = brute_force_knn(&rows, i, k.min(n - 1)).into_iter().collect();
            mismatches += usize::from(got != want);
        }
    }
    outcome(mismatches == 0, format!("50 matrices, {mismatches} mismatched neighbor sets"))
}

fn sigma_solver() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut solved = 0;
    let mut worst: f64 = 0.0;
    while solved < 1000 {
        let k = rng.random_range(3..=100);
        let mut dists: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..5.0)).collect();
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let rho = dists[0];
        let target = (k as f64).log2();
        let f = |sigma: f64| -> f64 { dists.iter().map(|d| (-(d - rho).max(0.0) / sigma).exp()).sum() };
        if f(SIGMA_MIN) >= target {
            continue;
        }
        let params = smooth_params(&NeighborList::from_distances(&dists), k).unwrap();
        worst = worst.max((f(params.sigma) - target).abs());
        solved += 1;
    }
    let mut clamped = true;
    for k in [2usize, 5, 50] {
        let flat = NeighborList::from_distances(&vec![1.5; k]);
        match smooth_params(&flat, k) {
            Ok(p) => clamped &= p.sigma == SIGMA_MIN,
            Err(_) => clamped = false,
        }
    }
    outcome(
        worst <= 1e-3 && clamped,
        format!("1000 profiles, worst |f(sigma) - log2 k| = {worst:.2e}; flat profiles clamp: {clamped}"),
    )
}

fn straight_cpm(n: usize, edges: &[(usize, usize, f64)], labels: &[usize], res: f64) -> f64 {
    let internal: f64 = edges.iter().filter(|e| labels[e.0] == labels[e.1]).map(|e| e.2).sum();
    let mut sizes = vec![0usize; n];
    for &l in labels {
        sizes[l] += 1;
    }
    internal - res * sizes.iter().map(|&s| (s * s.saturating_sub(1)) as f64 / 2.0).sum::<f64>()
}

/// Every set partition of `n` nodes as restricted growth strings.
fn all_partitions(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut labels = vec![0usize; n];
    fn rec(i: usize, max: usize, labels: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == labels.len() {
            out.push(labels.clone());
            return;
        }
        for l in 0..=max + 1 {
            labels[i] = l;
            rec(i + 1, max.max(l), labels, out);
        }
    }
    if n > 0 {
        rec(1, 0, &mut labels, &mut out);
    }
    out
}

fn leiden_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut fixtures: Vec<(usize, Vec<(usize, usize, f64)>)> = Vec::new();
    while fixtures.len() < 20 {
        let n = rng.random_range(3..=8);
        let mut edges = Vec::new();
        for v in 1..n {
            // random spanning tree keeps the graph connected
            edges.push((rng.random_range(0..v), v, rng.random_range(0.1..2.0)));
        }
        for u in 0..n {
            for v in u + 1..n {
                if !edges.iter().any(|e| e.0 == u && e.1 == v) && rng.random_bool(0.35) {
                    edges.push((u, v, rng.random_range(0.1..2.0)));
                }
            }
        }
        fixtures.push((n, edges));
    }
    let mut misses = 0;
    let mut runs = 0;
    for (n, edges) in &fixtures {
        let graph = TokenEmbeddingGraph::from_edges(*n, edges.iter().copied());
        let parts = all_partitions(*n);
        for res in [0.5, 1.0] {
            let best = parts
                .iter()
                .map(|p| straight_cpm(*n, edges, p, res))
                .fold(f64::NEG_INFINITY, f64::max);
            let out = leiden_with(&graph, &LeidenConfig::new(Resolution::new(res).unwrap()), 7);
            let got = straight_cpm(*n, edges, out.partition.assignment(), res);
            runs += 1;
            if (got - best).abs() > 1e-9 {
                misses += 1;
            }
        }
    }
    let mut clique_edges = Vec::new();
    for base in [0, 4] {
        for u in 0..4 {
            for v in u + 1..4 {
                clique_edges.push((base + u, base + v, 1.0));
            }
        }
    }
    clique_edges.push((3, 4, 1.0));
    let graph = TokenEmbeddingGraph::from_edges(8, clique_edges);
    let res = Resolution::new(0.5).unwrap();
    let cliques = leiden_with(&graph, &LeidenConfig::new(res), 1).partition;
    let recovered = cliques.assignment() == [0, 0, 0, 0, 1, 1, 1, 1];
    let q = cpm_quality(&graph, &cliques, res).unwrap_or(f64::NAN);
    outcome(
        misses == 0 && recovered,
        format!("{runs} runs, {misses} below the exhaustive optimum; two cliques recovered: {recovered} (quality {q})"),
    )
}

fn baseline_calibration() -> Outcome {
    let n = 1000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let truth: BTreeSet<TokenId> = index::sample(&mut rng, n, n / 10).into_iter().map(|i| i as TokenId).collect();
    let trials = 100;
    let mean: f64 = (0..trials)
        .map(|seed| score(&random_sampling(n, 0.5, seed).unwrap(), &truth).precision)
        .sum::<f64>()
        / trials as f64;
    let drawn = (n / 2) as f64;
    let sd = (0.1 * 0.9 / drawn / trials as f64).sqrt();
    let within = (mean - 0.1).abs() <= 3.0 * sd;

    let s = generate(&SimSpec {
        n: 500,
        m: 16,
        glitch_count: 50,
        ..SimSpec::default()
    })
    .unwrap();
    let mock = MockOracle::new(&s.bundle.vocab, s.planted.iter().copied());
    let full = traverse(&s.bundle, &mock, &OracleConfig::default(), &HunterConfig::default()).unwrap();
    let e = score(&full.ids(), &s.planted);
    let exact = e.precision == 1.0 && e.recall == 1.0;
    outcome(
        within && exact,
        format!(
            "random sampling mean precision {mean:.4} (0.1 +/- {:.4}); traverse P={:.3} R={:.3}",
            3.0 * sd,
            e.precision,
            e.recall
        ),
    )
}

fn taxonomy_fidelity() -> Outcome {
    let words = WordList::bundled();
    let types = [
        ("ByPrimaryKey", TokenTypeLabel::WordToken),
        ("davidjl", TokenTypeLabel::LetterToken),
        (" }}\"\">", TokenTypeLabel::CharacterToken),
        ("\\GeneratedValue", TokenTypeLabel::LetterCharacterToken),
        ("réalis", TokenTypeLabel::SpecialToken),
    ];
    let type_hits = types
        .iter()
        .filter(|(t, l)| classify_token_type(t, &words).ok() == Some(*l))
        .count();

    use ProxyTask::*;
    use SymptomLabel::*;
    let rows: [(ProxyTask, &str, &str, SymptomLabel); 10] = [
        (Repetition, "wurden", "werden", SpellingMistake),
        (Repetition, "retard", "Sorry, but I can not assist with that", Incapability),
        (Repetition, "}}^", "^^^^", RandomCharacters),
        (Repetition, "BundleOrNil", "Of course! Here is the repeated string:", QuestionRepetition),
        (Length, "(String", "8 characters", HallucinatoryCompletion),
        (Repetition, "romatic", "romantic", SpellingMistake),
        (Repetition, " davidjl", "justice", HallucinatoryCompletion),
        (Spelling, "',\\n", "The string you provided is empty", Incapability),
        (Repetition, " Assuming", "You are asking me to repeat the string", QuestionRepetition),
        (
            Spelling,
            "ContainerGap",
            "It appears that there is no string provided in your question. Could you please provide the string you want spelled out with hyphens?",
            QuestionRepetition,
        ),
    ];
    let mut missed = Vec::new();
    for (task, token, response, want) in rows {
        let got = classify_symptom(task, token, response);
        if got != want {
            missed.push(format!("{token:?}: {got:?} instead of {want:?}"));
        }
    }
    let symptom_hits = rows.len() - missed.len();
    outcome(
        type_hits == 5 && symptom_hits >= 8,
        format!(
            "token types {type_hits}/5; symptoms {symptom_hits}/10{}",
            if missed.is_empty() {
                String::new()
            } else {
                format!(" (missed {})", missed.join("; "))
            }
        ),
    )
}

fn scan_arithmetic() -> Outcome {
    let n = 1000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let glitch: HashSet<TokenId> = (0..40).map(|i| i * 25).collect();
    let normals: Vec<TokenId> = (0..n as TokenId).filter(|i| !glitch.contains(i)).collect();
    let glitch_list: Vec<TokenId> = {
        let mut g: Vec<TokenId> = glitch.iter().copied().collect();
        g.sort_unstable();
        g
    };
    let mut documents = Vec::new();
    let mut planted = 0u64;
    let mut total = 0u64;
    for _ in 0..200 {
        let len = rng.random_range(0..400);
        let doc: Vec<TokenId> = (0..len)
            .map(|_| {
                total += 1;
                if rng.random_bool(0.04) {
                    planted += 1;
                    glitch_list[rng.random_range(0..glitch_list.len())]
                } else {
                    normals[rng.random_range(0..normals.len())]
                }
            })
            .collect();
        documents.push(doc);
    }
    let summary = scan(&TokenStream { documents }, &glitch, n).unwrap();
    let exact = summary.glitch_count == planted && summary.total_count == total;
    let alpaca = ScanSummary::new(202_499, 4_861_603).percent();
    outcome(
        exact && alpaca == "4.17%",
        format!(
            "planted {planted}/{total}, scanned {}/{}; 202499/4861603 -> {alpaca}",
            summary.glitch_count, summary.total_count
        ),
    )
}

fn determinism() -> Outcome {
    let a = run_hunt(&sim(0.0, 42), 42, 75.0).0.without_timing();
    let b = run_hunt(&sim(0.0, 42), 42, 75.0).0.without_timing();
    let ja = serde_json::to_vec(&a).unwrap();
    let jb = serde_json::to_vec(&b).unwrap();
    outcome(ja == jb, format!("{} report bytes, identical: {}", ja.len(), ja == jb))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("end-to-end mock hunt", end_to_end),
        ("scatter sensitivity", scatter_sensitivity),
        ("k-nn exactness", knn_exactness),
        ("sigma solver", sigma_solver),
        ("leiden optimality", leiden_optimality),
        ("baseline calibration", baseline_calibration),
        ("taxonomy fidelity", taxonomy_fidelity),
        ("scan arithmetic", scan_arithmetic),
        ("determinism", determinism),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        failures += usize::from(!o.pass);
        println!(
            "criterion {} {name}: {} - {}",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
