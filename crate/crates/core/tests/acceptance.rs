//! Acceptance suite. Every criterion runs in sequence inside one test so the
//! runtime limits are measured without other tests competing for cores.
//! Each prints a PASS or FAIL line straight to stderr.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use dialog_forge::analytics::{dataset_stats, diversity_stats, StatsRow};
use dialog_forge::dialog_filter::{
    apply_frequency_filter, apply_score_filter, compute_tau1, filter_candidates, tau2_sweep, Attachment,
    MatchedDialogue,
};
use dialog_forge::eval::{
    bm25_rank, candidate_pool, make_eval_instances, recall_at_k, Bm25Index, Bm25Params, Protocol, Task, POOL_SIZE,
};
use dialog_forge::matcher::{
    combined_score, compute_zscore_stats, match_topk, Candidate, CandidateSet, ImageGallery, PipelineConfig,
    UtteranceSet, ZScoreStats,
};
use dialog_forge::pipeline::{Pipeline, RunConfig, Stage};
use dialog_forge::source::{
    filter_image_caption_pairs, split_pairs, Dialogue, ImageCaptionPair, Split, Turn, DEFAULT_PAIR_THRESHOLD,
};
use dialog_forge::stats::{BlockMoments, Moments};
use dialog_forge::store::EmbeddingStore;
use dialog_forge::synthetic::{write_fixture, FixtureSpec};
use dialog_forge::text::HypernymLexicon;
use dialog_forge::Error;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn criterion(results: &mut Vec<Outcome>, name: &'static str, limit: Option<Duration>, f: impl FnOnce()) {
    let start = Instant::now();
    let run = catch_unwind(AssertUnwindSafe(f));
    let elapsed = start.elapsed();
    let (passed, detail) = match (run, limit) {
        (Err(e), _) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
        (Ok(()), Some(l)) if elapsed >= l => (false, format!("exceeded runtime limit of {l:?}")),
        (Ok(()), _) => (true, String::new()),
    };
    let limit_txt = limit.map(|l| format!(" (limit {:.0}s)", l.as_secs_f64())).unwrap_or_default();
    let line = format!(
        "[{}] {name}: {:.2}s{limit_txt}{}{}\n",
        if passed { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        if detail.is_empty() { "" } else { " " },
        detail
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    results.push(Outcome { name, passed, detail });
}

#[test]
fn acceptance() {
    let mut results = Vec::new();
    let secs = Duration::from_secs;
    criterion(&mut results, "combined score matches reference", Some(secs(1)), combined_score_oracle);
    criterion(&mut results, "block-merged moments are exact", Some(secs(10)), zscore_exactness);
    criterion(&mut results, "top-k matching equals brute force", Some(secs(30)), matching_oracle);
    criterion(&mut results, "score and frequency filter semantics", Some(secs(5)), filter_semantics);
    criterion(&mut results, "source filtering and splits", Some(secs(20)), source_filtering);
    criterion(&mut results, "end-to-end determinism", None, end_to_end);
    criterion(&mut results, "evaluation harness", Some(secs(10)), eval_harness);
    criterion(&mut results, "dataset analytics", None, analytics);
    criterion(&mut results, "frequency threshold ablation", None, ablation);

    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{}: {}", r.name, r.detail))
        .collect();
    let _ = writeln!(
        std::io::stderr(),
        "acceptance: {} of {} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    assert!(failed.is_empty(), "failed criteria: {failed:#?}");
}

fn zstats(mean_ui: f64, std_ui: f64, mean_uc: f64, std_uc: f64) -> ZScoreStats {
    ZScoreStats {
        mean_ui,
        std_ui,
        mean_uc,
        std_uc,
        population_size: 2,
        computed_on: Split::Train,
        seed: 0,
        sampled: false,
    }
}

fn combined_score_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    for _ in 0..1000 {
        let (s_ui, s_uc): (f64, f64) = (rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0));
        let (m_ui, m_uc): (f64, f64) = (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
        let (d_ui, d_uc): (f64, f64) = (rng.gen_range(0.01..1.0), rng.gen_range(0.01..1.0));
        let alpha: f64 = rng.gen_range(0.0..=1.0);
        let stats = zstats(m_ui, d_ui, m_uc, d_uc);

        // Single fraction over the common denominator.
        let reference = (alpha * (s_ui - m_ui) * d_uc + (1.0 - alpha) * (s_uc - m_uc) * d_ui) / (d_ui * d_uc);
        let got = combined_score(s_ui, s_uc, &stats, alpha);
        assert!((got - reference).abs() <= 1e-9, "{got} vs {reference}");

        assert_eq!(combined_score(s_ui, s_uc, &stats, 1.0), (s_ui - m_ui) / d_ui);
        assert_eq!(combined_score(s_ui, s_uc, &stats, 0.0), (s_uc - m_uc) / d_uc);
    }
}

fn two_pass(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

fn rel_err(got: f64, exact: f64) -> f64 {
    (got - exact).abs() / exact.abs().max(1e-300)
}

fn random_store(rng: &mut ChaCha8Rng, prefix: &str, n: usize, dim: usize, lo: i32, hi: i32) -> EmbeddingStore {
    let ids: Vec<String> = (0..n).map(|i| format!("{prefix}{i:04}")).collect();
    let rows: Vec<Vec<f32>> = (0..n)
        .map(|_| loop {
            let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(lo..=hi) as f32).collect();
            if v.iter().any(|&x| x != 0.0) {
                break v;
            }
        })
        .collect();
    EmbeddingStore::from_rows(dim, &ids, &rows).unwrap()
}

fn zscore_exactness() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (n, offset, block) in [(2usize, 1.0, 1usize), (1_000, 3.0, 7), (100_000, -50.0, 4096), (1_000_000, 1e3, 4096)] {
        let xs: Vec<f64> = (0..n).map(|_| offset + rng.gen_range(-1.0..1.0) * rng.gen_range(0.0..2.0)).collect();
        let mut stream = BlockMoments::new(block);
        stream.extend(xs.iter().copied());
        let m = stream.finish();
        let (mean, var) = two_pass(&xs);
        assert_eq!(m.n, n as u64);
        assert!(rel_err(m.mean, mean) < 1e-6, "mean n={n}");
        assert!(rel_err(m.population_variance(), var) < 1e-6, "variance n={n}");
    }

    // Moments the matcher computes over every train utterance × image pair.
    let u_ids: Vec<String> = (0..300).map(|i| format!("d{}#{}", i / 5, i % 5)).collect();
    let u_rows: Vec<Vec<f32>> = (0..300).map(|_| (0..16).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).collect();
    let utts = EmbeddingStore::from_rows(16, &u_ids, &u_rows).unwrap();
    let images = random_store(&mut rng, "img", 400, 16, -4, 4);
    let captions = random_store(&mut rng, "img", 400, 16, -4, 4);
    let set = UtteranceSet::all(&utts).unwrap();
    let gallery = ImageGallery::all(&images, &captions).unwrap();
    let stats = compute_zscore_stats(&set, &gallery, &PipelineConfig::default()).unwrap();
    let cos = |a: &[f32], b: &[f32]| {
        let d: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
        let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        d / (na * nb)
    };
    let mut ui = Vec::new();
    let mut uc = Vec::new();
    for u in utts.rows() {
        for j in 0..images.len() {
            ui.push(cos(u, images.row(j)));
            uc.push(cos(u, captions.row(j)));
        }
    }
    let ((mu, vu), (mc, vc)) = (two_pass(&ui), two_pass(&uc));
    assert_eq!(stats.population_size, 120_000);
    assert!(rel_err(stats.mean_ui, mu) < 1e-6 && rel_err(stats.std_ui, vu.sqrt()) < 1e-6);
    assert!(rel_err(stats.mean_uc, mc) < 1e-6 && rel_err(stats.std_uc, vc.sqrt()) < 1e-6);

    // Constant populations have exactly zero variance and are rejected.
    let constant = Moments::merged(&[Moments::from_slice(&[0.3; 1000]), Moments::from_slice(&[0.3; 17])]);
    assert_eq!(constant.population_variance(), 0.0);
    let same_u = EmbeddingStore::from_rows(3, &["a#0", "a#1"], &[[1.0f32, 2.0, 3.0], [1.0, 2.0, 3.0]]).unwrap();
    let same_i = EmbeddingStore::from_rows(3, &["x", "y"], &[[0.5f32, 0.1, 0.2], [0.5, 0.1, 0.2]]).unwrap();
    let err = compute_zscore_stats(
        &UtteranceSet::all(&same_u).unwrap(),
        &ImageGallery::all(&same_i, &same_i).unwrap(),
        &PipelineConfig::default(),
    );
    assert!(matches!(err, Err(Error::ZeroVariance(_))), "{err:?}");
}

fn brute_force(
    utts: &EmbeddingStore,
    images: &EmbeddingStore,
    captions: &EmbeddingStore,
    stats: &ZScoreStats,
    alpha: f64,
    k: usize,
) -> Vec<(String, usize, String, f64)> {
    let cos = |a: &[f32], b: &[f32]| {
        let d: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
        let na = a.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
        (d / (na * nb)).clamp(-1.0, 1.0)
    };
    let mut out = Vec::new();
    for (i, u) in utts.rows().enumerate() {
        let (dlg, turn) = utts.id(i).rsplit_once('#').unwrap();
        let mut row: Vec<(f64, &str)> = (0..images.len())
            .map(|j| {
                let s_ui = cos(u, images.row(j));
                let s_uc = cos(u, captions.row(j));
                let z = alpha * ((s_ui - stats.mean_ui) / stats.std_ui)
                    + (1.0 - alpha) * ((s_uc - stats.mean_uc) / stats.std_uc);
                (z, images.id(j))
            })
            .collect();
        row.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
        for (z, id) in row.into_iter().take(k) {
            out.push((dlg.to_string(), turn.parse().unwrap(), id.to_string(), z));
        }
    }
    out
}

fn matching_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let pools: Vec<rayon::ThreadPool> = [1, 4]
        .iter()
        .map(|&t| rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap())
        .collect();
    for instance in 0..200 {
        let n = rng.gen_range(1..=50);
        let m = rng.gen_range(1..=200);
        let dim = rng.gen_range(2..=12);
        // Small integer coordinates make exact score ties common.
        let u_ids: Vec<String> = (0..n).map(|i| format!("dlg{}#{}", i / 4, i % 4)).collect();
        let u_rows: Vec<Vec<f32>> = (0..n)
            .map(|_| loop {
                let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-2..=2) as f32).collect();
                if v.iter().any(|&x| x != 0.0) {
                    break v;
                }
            })
            .collect();
        let utts = EmbeddingStore::from_rows(dim, &u_ids, &u_rows).unwrap();
        let images = random_store(&mut rng, "img", m, dim, -2, 2);
        let captions = random_store(&mut rng, "img", m, dim, -2, 2);
        let stats = zstats(
            rng.gen_range(-0.3..0.3),
            rng.gen_range(0.05..0.5),
            rng.gen_range(-0.3..0.3),
            rng.gen_range(0.05..0.5),
        );
        let alpha = [0.0, 0.5, 1.0, rng.gen_range(0.0..1.0)][instance % 4];
        let k = rng.gen_range(1..=m + 5);
        let expected = brute_force(&utts, &images, &captions, &stats, alpha, k);

        let set = UtteranceSet::all(&utts).unwrap();
        let gallery = ImageGallery::all(&images, &captions).unwrap();
        let mut first: Option<CandidateSet> = None;
        for block in [1, 7, m] {
            for pool in &pools {
                let config = PipelineConfig {
                    alpha,
                    k,
                    block_size: block,
                    ..Default::default()
                };
                let got = pool.install(|| match_topk(&set, &gallery, &stats, &config)).unwrap();
                match &first {
                    None => {
                        assert_eq!(got.entries.len(), expected.len(), "instance {instance}");
                        for (c, e) in got.entries.iter().zip(&expected) {
                            assert_eq!((&c.dialogue_id, c.turn_index, &c.image_id), (&e.0, e.1, &e.2), "instance {instance}");
                            assert!((c.combined - e.3).abs() <= 1e-6);
                        }
                        first = Some(got);
                    }
                    Some(f) => assert_eq!(&got, f, "instance {instance} block {block}"),
                }
            }
        }
    }
}

fn random_candidates(rng: &mut ChaCha8Rng) -> CandidateSet {
    let utterances = rng.gen_range(1..40);
    let images = rng.gen_range(1..30);
    let mut entries = Vec::new();
    for u in 0..utterances {
        let mut ids: Vec<usize> = (0..images).collect();
        ids.shuffle(rng);
        let take = rng.gen_range(1..=images);
        let mut group: Vec<Candidate> = ids[..take]
            .iter()
            .map(|&j| {
                // Coarse scores so the median is frequently tied.
                let combined = rng.gen_range(-10..10) as f64 / 4.0;
                Candidate {
                    dialogue_id: format!("d{:03}", u / 3),
                    turn_index: u % 3,
                    image_id: format!("i{j:03}"),
                    s_ui: 0.0,
                    s_uc: 0.0,
                    combined,
                }
            })
            .collect();
        group.sort_by(|a, b| b.combined.partial_cmp(&a.combined).unwrap().then(a.image_id.cmp(&b.image_id)));
        entries.extend(group);
    }
    CandidateSet { k: images, entries }
}

fn naive_frequency_filter(cands: &CandidateSet, p: f64) -> Vec<Candidate> {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for c in &cands.entries {
        *counts.entry(&c.image_id).or_default() += 1;
    }
    if counts.is_empty() {
        return Vec::new();
    }
    let mut sorted: Vec<u64> = counts.values().copied().collect();
    sorted.sort();
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    let cut = sorted[rank - 1];
    cands.entries.iter().filter(|c| counts[c.image_id.as_str()] <= cut).cloned().collect()
}

fn filter_semantics() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..100 {
        let cands = random_candidates(&mut rng);
        let mut scores: Vec<f64> = cands.entries.iter().map(|c| c.combined).collect();
        scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = scores[(scores.len() - 1) / 2];
        let tau1 = compute_tau1(&cands).unwrap();
        assert_eq!(tau1, median);
        let kept = apply_score_filter(&cands, tau1);
        let naive: Vec<Candidate> = cands.entries.iter().filter(|c| c.combined >= median).cloned().collect();
        assert_eq!(kept.entries, naive);
        assert!(2 * kept.len() >= cands.len());

        assert_eq!(apply_frequency_filter(&kept, 100.0).entries, kept.entries);
        for p in [25.0, 50.0, 75.0, rng.gen_range(0.5..100.0)] {
            assert_eq!(apply_frequency_filter(&kept, p).entries, naive_frequency_filter(&kept, p), "p={p}");
        }
        let (filtered, stats) = filter_candidates(&cands, 75.0);
        assert_eq!(filtered.entries, naive_frequency_filter(&kept, 75.0));
        assert_eq!(stats.tau1, Some(median));
    }

    // Images matched 1, 2, 3 and 100 times: p75 drops only the 100-count image.
    let mut entries = Vec::new();
    for (img, count) in [("a", 1), ("b", 2), ("c", 3), ("z", 100)] {
        for u in 0..count {
            entries.push(Candidate {
                dialogue_id: format!("d{u:03}"),
                turn_index: 0,
                image_id: img.into(),
                s_ui: 0.0,
                s_uc: 0.0,
                combined: 1.0,
            });
        }
    }
    entries.sort_by(|a, b| (&a.dialogue_id, &a.image_id).cmp(&(&b.dialogue_id, &b.image_id)));
    let cands = CandidateSet { k: 4, entries };
    let kept = apply_frequency_filter(&cands, 75.0);
    let images: HashSet<&str> = kept.entries.iter().map(|c| c.image_id.as_str()).collect();
    assert_eq!(images, HashSet::from(["a", "b", "c"]));
    assert_eq!(kept.len(), 6);
}

/// b, c, d, e with b² + c² + d² + e² = target.
fn four_squares(target: i64) -> [i64; 4] {
    let r = (target as f64).sqrt() as i64;
    for b in 0..=r {
        for c in b..=r {
            for d in c..=r {
                let rest = target - b * b - c * c - d * d;
                if rest < d * d {
                    break;
                }
                let e = (rest as f64).sqrt() as i64;
                if e * e == rest {
                    return [b, c, d, e];
                }
            }
        }
    }
    unreachable!("every integer is a sum of four squares")
}

fn source_filtering() {
    // cos = 37 / 200 = 0.185 exactly as computed in f64.
    let [b, c, d, e] = four_squares(200 * 200 - 37 * 37);
    let at = [37.0f32, b as f32, c as f32, d as f32, e as f32];
    let unit = [1.0f32, 0.0, 0.0, 0.0, 0.0];
    let above = [0.1851f32, (1.0f32 - 0.1851 * 0.1851).sqrt(), 0.0, 0.0, 0.0];
    let below = [0.1849f32, (1.0f32 - 0.1849 * 0.1849).sqrt(), 0.0, 0.0, 0.0];
    let ids = ["at", "above", "below", "dup"];
    let images = EmbeddingStore::from_rows(5, &ids, &[unit, unit, unit, unit]).unwrap();
    let captions = EmbeddingStore::from_rows(5, &ids, &[at, above, below, above]).unwrap();
    let pairs: Vec<ImageCaptionPair> = ids
        .iter()
        .map(|id| ImageCaptionPair {
            image_id: id.to_string(),
            caption: String::new(),
            content_hash: Some(if *id == "dup" { "h-above".into() } else { format!("h-{id}") }),
        })
        .collect();
    let out = filter_image_caption_pairs(&pairs, &images, &captions, DEFAULT_PAIR_THRESHOLD).unwrap();
    assert_eq!(out.kept, vec!["at", "above"]);
    assert_eq!((out.hash_duplicates, out.below_threshold), (1, 1));
    let strict = filter_image_caption_pairs(&pairs, &images, &captions, f64::from_bits(0.185f64.to_bits() + 1)).unwrap();
    assert_eq!(strict.kept, vec!["above"]);

    let seven: Vec<String> = (0..7).map(|i| format!("x{i}")).collect();
    assert_eq!(split_pairs(&seven, (5, 1, 1), 3).unwrap().sizes(), (5, 1, 1));

    let n = 2_440_485usize;
    let ids: Vec<String> = (0..n).map(|i| format!("img{i:07}")).collect();
    let split = split_pairs(&ids, (5, 1, 1), 42).unwrap();
    let (train, valid, test) = split.sizes();
    let cut1 = n as f64 * 5.0 / 7.0;
    let cut2 = n as f64 * 6.0 / 7.0;
    assert!((train as f64 - cut1).abs() <= 1.0);
    assert!(((train + valid) as f64 - cut2).abs() <= 1.0);
    assert_eq!(train + valid + test, n);
    let mut all: Vec<&String> = split.train.iter().chain(&split.valid).chain(&split.test).collect();
    all.sort_unstable();
    assert!(all.iter().zip(&ids).all(|(a, b)| *a == b), "split is not a partition");
    // 1.7M / 0.3M / 0.3M at one decimal.
    let millions = |x: usize| (x as f64 / 1e5).round() / 10.0;
    assert_eq!((millions(train), millions(valid), millions(test)), (1.7, 0.3, 0.3));
}

fn run_pipeline(config: &Path, out: &Path, threads: usize) -> BTreeMap<String, String> {
    let mut cfg = RunConfig::load(config).unwrap();
    cfg.out = out.to_path_buf();
    cfg.threads = Some(threads);
    let start = Instant::now();
    let mut pipeline = Pipeline::new(cfg, false).unwrap();
    let manifest = pipeline.run_all().unwrap();
    let elapsed = start.elapsed();
    assert!(manifest.all_completed());
    assert!(elapsed < Duration::from_secs(60), "pipeline took {elapsed:?}");
    let _ = writeln!(std::io::stderr(), "    pipeline run with {threads} thread(s): {:.2}s", elapsed.as_secs_f64());
    manifest.output_digests()
}

fn end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let spec = FixtureSpec {
        dialogues: 1000,
        images: 10_000,
        dim: 64,
        seed: 11,
        ..Default::default()
    };
    let config = write_fixture(dir.path(), &spec).unwrap();
    let a = run_pipeline(&config, &dir.path().join("a"), 1);
    let b = run_pipeline(&config, &dir.path().join("b"), 1);
    let c = run_pipeline(&config, &dir.path().join("c"), 4);
    assert!(a.len() >= 20);
    assert_eq!(a, b);
    assert_eq!(a, c);
    for name in a.keys() {
        let bytes = std::fs::read(dir.path().join("a").join(name)).unwrap();
        assert_eq!(bytes, std::fs::read(dir.path().join("c").join(name)).unwrap(), "{name}");
    }
}

fn naive_bm25(docs: &[(String, Vec<String>)], query: &[String], k1: f64, b: f64) -> Vec<(f64, String)> {
    let n = docs.len() as f64;
    let total: usize = docs.iter().map(|d| d.1.len()).sum();
    let avg = total as f64 / n;
    let mut terms: Vec<&String> = Vec::new();
    for t in query {
        if !terms.contains(&t) {
            terms.push(t);
        }
    }
    let mut scored: Vec<(f64, String)> = docs
        .iter()
        .map(|(id, toks)| {
            let len = toks.len() as f64;
            let mut s = 0.0;
            for t in &terms {
                let tf = toks.iter().filter(|x| x == t).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let df = docs.iter().filter(|d| d.1.contains(t)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                let norm = if avg > 0.0 { k1 * (1.0 - b + b * len / avg) } else { k1 };
                s += idf * tf * (k1 + 1.0) / (tf + norm);
            }
            (s, id.clone())
        })
        .collect();
    scored.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
    scored
}

fn oracle_dataset(dialogues: usize) -> Vec<MatchedDialogue> {
    (0..dialogues)
        .map(|i| MatchedDialogue {
            dialogue: Dialogue {
                dialogue_id: format!("d{i:04}"),
                source: "s".into(),
                skill: None,
                split: None,
                turns: (0..4)
                    .map(|t| Turn {
                        speaker: t % 2,
                        text: format!("turn {t} of {i}"),
                    })
                    .collect(),
            },
            attachments: [(1 + i % 2, vec![Attachment { image_id: format!("img{i:04}"), score: 1.0 }])]
                .into_iter()
                .collect(),
        })
        .collect()
}

fn eval_harness() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let vocab: Vec<String> = (0..30).map(|i| format!("w{i}")).collect();
    for corpus in 0..20 {
        let docs: Vec<(String, Vec<String>)> = (0..50)
            .map(|d| {
                let len = rng.gen_range(0..20);
                (format!("doc{d:02}"), (0..len).map(|_| vocab.choose(&mut rng).unwrap().clone()).collect())
            })
            .collect();
        let params = Bm25Params {
            k1: [1.2, 0.9, 2.0][corpus % 3],
            b: [0.75, 0.4, 1.0][corpus % 3],
        };
        let index = Bm25Index::build(docs.iter().map(|(id, t)| (id.as_str(), t.join(" "))), params).unwrap();
        let ids: Vec<&str> = docs.iter().map(|d| d.0.as_str()).collect();
        for _ in 0..10 {
            let query: Vec<String> = (0..rng.gen_range(1..6)).map(|_| vocab.choose(&mut rng).unwrap().clone()).collect();
            let expected = naive_bm25(&docs, &query, params.k1, params.b);
            let q = query.join(" ");
            for (score, id) in &expected {
                assert_eq!(index.score(&q, id).unwrap(), *score);
            }
            let ranked = bm25_rank(&index, &q, &ids, 50).unwrap();
            assert_eq!(ranked, expected.iter().map(|e| e.1.clone()).collect::<Vec<_>>());
        }
    }

    // An oracle scorer that puts the gold first under both protocols.
    let dataset = oracle_dataset(150);
    for task in Task::ALL {
        let instances = make_eval_instances(&dataset, task);
        assert_eq!(instances.len(), 150);
        let mut universe: Vec<String> = instances.iter().map(|i| i.gold.clone()).collect();
        universe.sort();
        universe.dedup();
        let golds: Vec<&str> = instances.iter().map(|i| i.gold.as_str()).collect();
        for protocol in Protocol::ALL {
            let rankings: Vec<Vec<String>> = instances
                .iter()
                .enumerate()
                .map(|(n, inst)| {
                    let mut pool = match protocol {
                        Protocol::Full => universe.clone(),
                        Protocol::Candidates100 => candidate_pool(&inst.gold, &universe, POOL_SIZE, n as u64).unwrap(),
                    };
                    let expected_len = match protocol {
                        Protocol::Full => universe.len(),
                        Protocol::Candidates100 => POOL_SIZE.min(universe.len()),
                    };
                    assert_eq!(pool.len(), expected_len);
                    assert!(pool.contains(&inst.gold));
                    pool.sort_by_key(|x| *x != inst.gold);
                    pool
                })
                .collect();
            let report = recall_at_k(task, protocol, "oracle", &rankings, &golds).unwrap();
            assert_eq!((report.r1, report.r5, report.r10), (100.0, 100.0, 100.0));
        }
    }

    // Monotone in K over random rankings.
    let mut rankings = Vec::new();
    let mut golds = Vec::new();
    for i in 0..1000 {
        let size = rng.gen_range(1..=100);
        let mut pool: Vec<String> = (0..size).map(|j| format!("c{i}-{j}")).collect();
        pool.shuffle(&mut rng);
        golds.push(pool[rng.gen_range(0..size)].clone());
        rankings.push(pool);
    }
    for chunk in (0..1000).collect::<Vec<_>>().chunks(37) {
        let r = recall_at_k(
            Task::NextTurn,
            Protocol::Candidates100,
            "random",
            &rankings[chunk[0]..=chunk[chunk.len() - 1]],
            &golds[chunk[0]..=chunk[chunk.len() - 1]],
        )
        .unwrap();
        assert!(0.0 <= r.r1 && r.r1 <= r.r5 && r.r5 <= r.r10 && r.r10 <= 100.0);
    }
    let all = recall_at_k(Task::NextTurn, Protocol::Full, "random", &rankings, &golds).unwrap();
    assert!(all.r1 <= all.r5 && all.r5 <= all.r10);

    let fixed: Vec<Vec<String>> = [1usize, 2, 6, 30]
        .iter()
        .map(|&rank| (1..=30).map(|r| if r == rank { "g".to_string() } else { format!("x{r}") }).collect())
        .collect();
    let r = recall_at_k(Task::CurrentTurn, Protocol::Full, "fixed", &fixed, &["g"; 4]).unwrap();
    assert_eq!((r.r1, r.r5, r.r10), (25.0, 50.0, 75.0));
}

/// Twenty dialogues with hand-countable shapes. Dialogue `i` has `i % 4 + 2`
/// turns, images `img{i}` and `img{i+1 mod 20}` on turn 0 and, for even `i`,
/// `img{i}` again on turn 1.
fn analytics_fixture() -> (Vec<MatchedDialogue>, HashMap<String, String>) {
    let dataset = (0..20usize)
        .map(|i| {
            let turns = (0..i % 4 + 2)
                .map(|t| {
                    let text = match (t, i) {
                        (0, 0..=5) => "my dog runs",
                        (0, 6..=8) => "a cat sleeps",
                        (0, 9..=13) => "the car is red",
                        _ => "hello world",
                    };
                    Turn { speaker: (t % 2) as u32, text: text.into() }
                })
                .collect();
            let att = |j: usize| Attachment { image_id: format!("img{j:02}"), score: 1.0 };
            let mut attachments = BTreeMap::from([(0, vec![att(i), att((i + 1) % 20)])]);
            if i % 2 == 0 {
                attachments.insert(1, vec![att(i)]);
            }
            MatchedDialogue {
                dialogue: Dialogue {
                    dialogue_id: format!("d{i:02}"),
                    source: "s".into(),
                    skill: None,
                    split: None,
                    turns,
                },
                attachments,
            }
        })
        .collect();
    let captions = (0..20usize)
        .map(|j| {
            let text = match j {
                0 => "a dog photo",
                1..=4 => "a bus",
                5..=16 => "an apple",
                _ => "a view",
            };
            (format!("img{j:02}"), text.to_string())
        })
        .collect();
    (dataset, captions)
}

fn analytics() {
    let (ds, captions) = analytics_fixture();
    let report = dataset_stats(&[("train", &ds[..14]), ("valid", &ds[14..17]), ("test", &ds[17..])]);
    let row = |split: &str, dialogues, turns: f64, images, att: f64, utts: f64| StatsRow {
        split: split.into(),
        unique_dialogues: dialogues,
        avg_turns: turns / dialogues as f64,
        unique_images: images,
        avg_images_per_dialogue: att / dialogues as f64,
        avg_images_per_utterance: att / utts,
    };
    assert_eq!(report.splits[0], row("train", 14, 47.0, 15, 35.0, 21.0));
    assert_eq!(report.splits[1], row("valid", 3, 11.0, 4, 8.0, 5.0));
    assert_eq!(report.splits[2], row("test", 3, 12.0, 4, 7.0, 4.0));
    assert_eq!(report.total, row("total", 20, 70.0, 20, 50.0, 30.0));
    assert_eq!(report.total.avg_turns, 3.5);
    assert_eq!(report.total.avg_images_per_dialogue, 2.5);

    let lexicon = HypernymLexicon::from_pairs([
        ("dog", "animal"),
        ("cat", "animal"),
        ("car", "vehicle"),
        ("bus", "vehicle"),
        ("apple", "fruit"),
    ]);
    // animal: 6 + 3 in turns, 1 in captions = 10, kept.
    // vehicle: 5 in turns, 4 in captions = 9, dropped.
    // fruit: 12 in captions, kept.
    let div = diversity_stats(&ds, &captions, &lexicon, 10).unwrap();
    assert_eq!(div.unique_hypernyms_dialogue, 1);
    assert_eq!(div.unique_hypernyms_caption, 2);
    assert_eq!(div.unique_hypernyms_total, 2);
    assert_eq!(div.unique_words_dialogue, 12);
    assert_eq!(div.unique_words_caption, 7);
    assert_eq!(div.unique_words_total, 17);

    // One fewer animal mention drops it below the cutoff.
    let mut fewer = captions.clone();
    fewer.insert("img00".into(), "a photo".into());
    let div = diversity_stats(&ds, &fewer, &lexicon, 10).unwrap();
    assert_eq!((div.unique_hypernyms_dialogue, div.unique_hypernyms_total), (0, 1));

    // Without a cutoff every mapped hypernym counts.
    let div = diversity_stats(&ds, &captions, &lexicon, 1).unwrap();
    assert_eq!((div.unique_hypernyms_dialogue, div.unique_hypernyms_caption, div.unique_hypernyms_total), (2, 3, 3));
}

fn ablation() {
    let dir = tempfile::tempdir().unwrap();
    let spec = FixtureSpec {
        dialogues: 200,
        images: 2000,
        dim: 32,
        seed: 5,
        ..Default::default()
    };
    let config = write_fixture(dir.path(), &spec).unwrap();
    let mut pipeline = Pipeline::new(RunConfig::load(&config).unwrap(), false).unwrap();
    for stage in [Stage::Ingest, Stage::FilterSource, Stage::StatsZ, Stage::Match, Stage::Ablate] {
        pipeline.run_stage(stage).unwrap();
    }
    let out = pipeline.out_dir().to_path_buf();
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("ablation_tau2.json")).unwrap()).unwrap();
    for split in Split::ALL {
        let rows = report[split.as_str()]["rows"].as_array().unwrap();
        let pct: Vec<f64> = rows.iter().map(|r| r["percentile"].as_f64().unwrap()).collect();
        assert_eq!(pct, [25.0, 50.0, 75.0, 100.0]);
        let links: Vec<u64> = rows.iter().map(|r| r["links_retained"].as_u64().unwrap()).collect();
        let images: Vec<u64> = rows.iter().map(|r| r["images_retained"].as_u64().unwrap()).collect();
        assert!(links.windows(2).all(|w| w[0] <= w[1]), "{split}: {links:?}");
        assert!(images.windows(2).all(|w| w[0] <= w[1]), "{split}: {images:?}");
        assert_eq!(links[3], report[split.as_str()]["links_before"].as_u64().unwrap());
        assert!(links[0] < links[3], "{split}: sweep should bite on the fixture");

        let candidates = CandidateSet::read_jsonl(&out.join(format!("candidates.{split}.jsonl")), 100).unwrap();
        let scored = apply_score_filter(&candidates, compute_tau1(&candidates).unwrap());
        let direct: Vec<u64> = tau2_sweep(&scored, &[25.0, 50.0, 75.0, 100.0])
            .iter()
            .map(|r| r.links_retained as u64)
            .collect();
        assert_eq!(direct, links);
    }
}
