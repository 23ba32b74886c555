//! Acceptance suite: one PASS/FAIL line per criterion; exits non-zero when any fails.
//!
//! Every derived value is checked against an oracle written here, not against
//! the library's own helpers.

// The oracles index their windows explicitly to mirror the formulas.
#![allow(clippy::needless_range_loop)]

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chartsmith::agents::{AgentBackends, AgentKind, Endpoint, SamplingConfig, TemplateSet};
use chartsmith::evaluator::{evaluate_task, facet_f1, Facet, FacetF1, PinnedTraces, TypeVocabulary};
use chartsmith::fixtures;
use chartsmith::gateway::{ScriptStep, ScriptedBackend, TokenUsage};
use chartsmith::imaging;
use chartsmith::orchestrator::{
    run_best_of_n, run_direct, run_metal, run_variant, ChartTask, Deps, LoopConfig, RunTrace, Variant,
};
use chartsmith::persist::{RunDir, RunManifest, TaskRecord, TaskStatus};
use chartsmith::render::{ElementTrace, FixtureRenderer, RenderOutcome};
use chartsmith::verifier::{
    color_score, cosine_similarity, hsv_histogram, jaccard, raw_ssim, structure_score, text_score, tokenize, verify,
    ChartScorer, ColorBin, GrayMatrix, PassDecision, ThresholdSchedule, VerifierScores,
};
use image::{Rgb, RgbImage};
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::{Config as PtConfig, TestRunner};

// ---------------------------------------------------------------------------
// Plumbing

/// Accumulates sub-check failures so a criterion reports all of them at once.
#[derive(Default)]
struct Checks {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }

    fn finish(self) -> Result<String, String> {
        if self.failures.is_empty() {
            Ok(self.notes.join("; "))
        } else {
            Err(self.failures.join("; "))
        }
    }
}

fn sample<S: Strategy>(runner: &mut TestRunner, s: &S) -> S::Value {
    s.new_tree(runner).expect("strategy").current()
}

fn runner() -> TestRunner {
    TestRunner::new_with_rng(
        PtConfig::default(),
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    )
}

// ---------------------------------------------------------------------------
// Scripted loop harness: each program source renders to its own solid image,
// and the scorer maps image digests to pinned verifier scores.

struct DigestScorer {
    by_sha: HashMap<String, VerifierScores>,
    schedule: ThresholdSchedule,
}

impl ChartScorer for DigestScorer {
    fn score(&self, rendered: &RenderOutcome, _reference: &RgbImage, round: u32) -> PassDecision {
        let scores = rendered
            .image_sha256
            .as_ref()
            .and_then(|s| self.by_sha.get(s))
            .copied()
            .unwrap_or(VerifierScores::ZERO);
        verify(scores, &self.schedule, round)
    }
}

struct Harness {
    renderer: FixtureRenderer,
    scorer: DigestScorer,
    backend: Arc<ScriptedBackend>,
    backends: AgentBackends,
    templates: TemplateSet,
    sampling: SamplingConfig,
}

impl Harness {
    fn new(programs: &[(&str, f64)], script: Vec<ScriptStep>) -> Self {
        let mut renderer = FixtureRenderer::new();
        let mut by_sha = HashMap::new();
        for (i, (src, mean)) in programs.iter().enumerate() {
            let png = imaging::encode_png(&RgbImage::from_pixel(12, 12, Rgb([i as u8, 7, 0])));
            by_sha.insert(imaging::sha256_hex(&png), VerifierScores::new(*mean, *mean, *mean));
            renderer = renderer.with_image(*src, png);
        }
        let backend = Arc::new(ScriptedBackend::new(script).expect("script"));
        Harness {
            renderer,
            scorer: DigestScorer {
                by_sha,
                schedule: ThresholdSchedule::default(),
            },
            backends: AgentBackends::uniform(Endpoint::new(backend.clone(), "scripted")),
            backend,
            templates: TemplateSet::builtin(),
            sampling: SamplingConfig::default(),
        }
    }

    fn run<T>(&self, task_id: &str, f: impl FnOnce(&ChartTask, &Deps<'_>) -> T) -> T {
        let deps = Deps {
            backends: &self.backends,
            templates: &self.templates,
            sampling: &self.sampling,
            renderer: &self.renderer,
            scorer: &self.scorer,
            cancel: None,
        };
        let task = ChartTask::new(task_id, imaging::encode_png(&RgbImage::new(12, 12))).expect("task");
        f(&task, &deps)
    }
}

fn fence(src: &str) -> String {
    format!("Here is the code.\n```python\n{src}\n```")
}

fn reply(text: &str, completion: u64) -> ScriptStep {
    ScriptStep::reply(text, TokenUsage::new(20, completion))
}

/// Generation then (visual, code, revision) per later program.
fn full_script(sources: &[&str]) -> Vec<ScriptStep> {
    let mut s = vec![reply(&fence(sources[0]), 100)];
    for next in &sources[1..] {
        s.push(reply("The bars are the wrong color.", 50));
        s.push(reply("Set color explicitly.", 40));
        s.push(reply(&fence(next), 100));
    }
    s
}

fn scored(sources: &[&str], means: &[f64]) -> Vec<(String, f64)> {
    sources.iter().zip(means).map(|(s, m)| (s.to_string(), *m)).collect()
}

fn as_refs(v: &[(String, f64)]) -> Vec<(&str, f64)> {
    v.iter().map(|(s, m)| (s.as_str(), *m)).collect()
}

// ---------------------------------------------------------------------------
// Independent oracles

/// Direct-formula SSIM: explicit 2-D Gaussian window, per-window mean,
/// variance and covariance about the mean, no separable filtering.
fn ssim_oracle(a: &GrayMatrix, b: &GrayMatrix) -> f64 {
    const N: usize = 11;
    let sigma = 1.5f64;
    let mut w = [[0.0f64; N]; N];
    let mut total = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    for row in w.iter_mut() {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let (wd, ht) = (a.width, a.height);
    let mut sum = 0.0;
    let mut count = 0usize;
    for y0 in 0..=ht - N {
        for x0 in 0..=wd - N {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..N {
                for j in 0..N {
                    ma += w[i][j] * a.data[(y0 + i) * wd + x0 + j];
                    mb += w[i][j] * b.data[(y0 + i) * wd + x0 + j];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..N {
                for j in 0..N {
                    let da = a.data[(y0 + i) * wd + x0 + j] - ma;
                    let db = b.data[(y0 + i) * wd + x0 + j] - mb;
                    va += w[i][j] * da * da;
                    vb += w[i][j] * db * db;
                    cov += w[i][j] * da * db;
                }
            }
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    sum / count as f64
}

/// Facet elements normalized by hand, independent of the library's helpers.
fn oracle_elements(t: &ElementTrace, facet: Facet) -> Vec<String> {
    let canonical = TypeVocabulary::builtin().canonical();
    match facet {
        Facet::Text => t
            .texts
            .iter()
            .map(|s| s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase())
            .filter(|s| !s.is_empty())
            .collect(),
        Facet::Type => t
            .chart_types
            .iter()
            .map(|s| {
                let s = s.trim().to_lowercase();
                if canonical.contains(&s) {
                    s
                } else {
                    "other".to_string()
                }
            })
            .collect(),
        Facet::Color => t
            .colors
            .iter()
            .map(|c| {
                let h = c.trim().trim_start_matches('#').to_lowercase();
                match h.len() {
                    3 => h.chars().flat_map(|c| [c, c]).collect::<String>(),
                    8 => h[..6].to_string(),
                    _ => h,
                }
            })
            .collect(),
        Facet::Layout => t.layout.iter().map(|l| format!("{l:?}")).collect(),
    }
}

/// Brute-force multiset matching: each gold element claims the first unused equal generated element.
fn oracle_f1(gold: &ElementTrace, gen: &ElementTrace, facet: Facet) -> (f64, f64, f64, usize) {
    let g = oracle_elements(gold, facet);
    let p = oracle_elements(gen, facet);
    let mut used = vec![false; p.len()];
    let mut m = 0;
    for x in &g {
        if let Some(k) = (0..p.len()).find(|&k| !used[k] && &p[k] == x) {
            used[k] = true;
            m += 1;
        }
    }
    if g.is_empty() && p.is_empty() {
        return (1.0, 1.0, 1.0, 0);
    }
    let prec = if p.is_empty() { 0.0 } else { m as f64 / p.len() as f64 };
    let rec = if g.is_empty() { 0.0 } else { m as f64 / g.len() as f64 };
    let f1 = if prec + rec > 0.0 {
        2.0 * prec * rec / (prec + rec)
    } else {
        0.0
    };
    (prec, rec, f1, m)
}

// ---------------------------------------------------------------------------
// Criteria

fn verifier_identity() -> Result<String, String> {
    let start = Instant::now();
    let corpus = fixtures::builtin();
    let ocr = fixtures::fixture_ocr(&corpus);
    let mut c = Checks::default();
    c.check(corpus.len() >= 10, format!("only {} fixtures", corpus.len()));
    for f in &corpus {
        let img = imaging::decode_rgb(&f.reference_png).map_err(|e| format!("{}: {e}", f.name))?;
        let t = text_score(&img, &img, &ocr).map_err(|e| format!("{}: {e}", f.name))?;
        let col = color_score(&img, &img);
        let s = structure_score(&img, &img);
        c.check(t == 1.0, format!("{} text {t}", f.name));
        c.check(col == 1.0, format!("{} color {col}", f.name));
        c.check(s == 1.0, format!("{} structure {s}", f.name));
    }
    let elapsed = start.elapsed();
    c.check(elapsed < Duration::from_secs(10), format!("took {elapsed:?}"));
    c.note(format!("{} fixtures in {:.2}s", corpus.len(), elapsed.as_secs_f64()));
    c.finish()
}

fn ssim_oracle_equivalence() -> Result<String, String> {
    let mut rng = runner();
    let dims = (16usize..=64, 16usize..=64);
    let mut c = Checks::default();
    let (mut max_diff, mut max_asym) = (0.0f64, 0.0f64);
    for i in 0..200 {
        let (w, h) = sample(&mut rng, &dims);
        let a_data = sample(&mut rng, &prop::collection::vec(0.0f64..=255.0, w * h));
        let noise = sample(&mut rng, &prop::collection::vec(-40.0f64..=40.0, w * h));
        // Alternate unrelated pairs with correlated ones so both ends of the range are exercised.
        let b_data: Vec<f64> = if i % 2 == 0 {
            sample(&mut rng, &prop::collection::vec(0.0f64..=255.0, w * h))
        } else {
            a_data
                .iter()
                .zip(&noise)
                .map(|(a, n)| (a + n).clamp(0.0, 255.0))
                .collect()
        };
        let a = GrayMatrix::new(w, h, a_data);
        let b = GrayMatrix::new(w, h, b_data);
        let got = raw_ssim(&a, &b).map_err(|e| e.to_string())?;
        let rev = raw_ssim(&b, &a).map_err(|e| e.to_string())?;
        max_diff = max_diff.max((got - ssim_oracle(&a, &b)).abs());
        max_asym = max_asym.max((got - rev).abs());
    }
    c.check(max_diff <= 1e-6, format!("max |ssim - oracle| = {max_diff:e}"));
    c.check(max_asym <= 1e-9, format!("max asymmetry = {max_asym:e}"));
    c.note(format!(
        "200 pairs, max diff {max_diff:.1e}, max asymmetry {max_asym:.1e}"
    ));
    c.finish()
}

fn hsv_partition() -> Result<String, String> {
    let mut rng = runner();
    let mut c = Checks::default();
    for _ in 0..100 {
        let (w, h) = sample(&mut rng, &(1u32..=48, 1u32..=48));
        let px = sample(&mut rng, &prop::collection::vec(any::<[u8; 3]>(), (w * h) as usize));
        let img = RgbImage::from_fn(w, h, |x, y| Rgb(px[(y * w + x) as usize]));
        let hist = hsv_histogram(&img);
        let sum: u64 = hist.counts.iter().sum();
        c.check(sum == u64::from(w * h), format!("{w}x{h}: bins sum to {sum}"));
    }
    let pure = [
        ([255, 0, 0], ColorBin::Red),
        ([0, 255, 0], ColorBin::Green),
        ([0, 0, 255], ColorBin::Blue),
        ([255, 255, 255], ColorBin::White),
        ([0, 0, 0], ColorBin::Black),
        ([128, 128, 128], ColorBin::Gray),
    ];
    for (rgb, bin) in pure {
        let hist = hsv_histogram(&RgbImage::from_pixel(9, 7, Rgb(rgb)));
        let one_hot = hist
            .counts
            .iter()
            .enumerate()
            .all(|(i, &n)| n == if i == bin.index() { 63 } else { 0 });
        c.check(
            one_hot,
            format!("{rgb:?} -> {:?}, expected one-hot {bin:?}", hist.counts),
        );
    }
    c.note("100 random images, 6 pure canvases");
    c.finish()
}

fn jaccard_cosine_hand_cases() -> Result<String, String> {
    let mut c = Checks::default();
    let j = jaccard(&tokenize(&["a b c"]), &tokenize(&["b c d"]));
    c.check(j == 0.5, format!("{{a,b,c}}/{{b,c,d}} = {j}"));
    let j = jaccard(&tokenize(&["a b"]), &tokenize(&["c d"]));
    c.check(j == 0.0, format!("disjoint jaccard = {j}"));
    let j = jaccard(&tokenize(&["x y"]), &tokenize(&["y x"]));
    c.check(j == 1.0, format!("identical jaccard = {j}"));

    let red = RgbImage::from_pixel(20, 10, Rgb([255, 0, 0]));
    let half = RgbImage::from_fn(20, 10, |x, _| if x < 10 { Rgb([255, 0, 0]) } else { Rgb([0, 0, 255]) });
    let blue = RgbImage::from_pixel(20, 10, Rgb([0, 0, 255]));
    let s = color_score(&half, &red);
    c.check((s - 1.0 / 2f64.sqrt()).abs() <= 1e-9, format!("half/red cosine = {s}"));
    let s = color_score(&blue, &red);
    c.check(s == 0.0, format!("disjoint color = {s}"));
    let s = color_score(&half, &half);
    c.check(s == 1.0, format!("identical color = {s}"));
    let s = cosine_similarity(&[1, 0, 2], &[0, 5, 0]);
    c.check(s == 0.0, format!("disjoint cosine = {s}"));
    c.note("jaccard 0.5/0/1; cosine 1/sqrt2, 0, 1");
    c.finish()
}

fn loop_arithmetic() -> Result<String, String> {
    let mut c = Checks::default();

    let h = Harness::new(&[("p0", 1.0)], vec![reply(&fence("p0"), 100)]);
    let t = h
        .run("t0", |t, d| run_metal(t, &LoopConfig::default(), d))
        .map_err(|e| e.to_string())?;
    c.check(
        t.gateway_calls() == 1 && h.backend.calls() == 1,
        format!("pass@0: {} calls, expected 1", t.gateway_calls()),
    );

    let progs = [("p0", 0.3), ("p1", 0.6), ("p2", 0.95)];
    let h = Harness::new(&progs, full_script(&["p0", "p1", "p2"]));
    let t = h
        .run("t2", |t, d| run_metal(t, &LoopConfig::default(), d))
        .map_err(|e| e.to_string())?;
    c.check(
        t.gateway_calls() == 7 && t.rounds.len() == 3 && t.stopped_early,
        format!(
            "pass@2: {} calls over {} rounds, expected 7 over 3",
            t.gateway_calls(),
            t.rounds.len()
        ),
    );

    // Paper ordering critiques every scored round, including the passing one.
    let mut script = full_script(&["p0", "p1", "p2"]);
    script.extend((0..6).map(|_| reply("more notes", 10)));
    let h = Harness::new(&progs, script);
    let cfg = LoopConfig {
        paper_order: true,
        ..Default::default()
    };
    let t = h.run("t2p", |t, d| run_metal(t, &cfg, d)).map_err(|e| e.to_string())?;
    let paper_calls = t.gateway_calls();
    c.check(
        paper_calls == 13,
        format!(
            "pass@2 --paper-order: {paper_calls} calls (G + 2x(V,C,R) + V,C on the passing round), criterion expects 1 + 4*3 = 13"
        ),
    );

    let sources = ["q0", "q1", "q2", "q3", "q4", "q5"];
    let h = Harness::new(
        &[
            ("q0", 0.1),
            ("q1", 0.2),
            ("q2", 0.3),
            ("q3", 0.4),
            ("q4", 0.5),
            ("q5", 0.6),
        ],
        full_script(&sources),
    );
    let t = h
        .run("never", |t, d| run_metal(t, &LoopConfig::default(), d))
        .map_err(|e| e.to_string())?;
    c.check(
        t.rounds.len() == 5 && !t.stopped_early,
        format!("never-passing run: {} rounds, expected t_max = 5", t.rounds.len()),
    );

    let replay = || {
        let h = Harness::new(&progs, full_script(&["p0", "p1", "p2"]));
        let t = h
            .run("r", |t, d| run_metal(t, &LoopConfig::default(), d))
            .expect("replay run");
        serde_json::to_vec(&t).expect("serialize")
    };
    c.check(replay() == replay(), "replayed traces differ");
    c.note("1 / 7 calls; 5 rounds; replay identical");
    c.finish()
}

fn ablation_wiring() -> Result<String, String> {
    let mut c = Checks::default();
    let progs = [("p0", 0.3), ("p1", 0.5), ("p2", 0.95)];

    let script = vec![
        reply(&fence("p0"), 1),
        reply("visual", 1),
        reply(&fence("p1"), 1),
        reply("visual", 1),
        reply(&fence("p2"), 1),
    ];
    let h = Harness::new(&progs, script);
    let t = h
        .run("v", |t, d| {
            run_variant(t, Variant::VisualOnly, &LoopConfig::default(), d)
        })
        .map_err(|e| e.to_string())?;
    let code_entries =
        t.ledger.calls_for(AgentKind::CodeCritique) + t.rounds.iter().filter(|r| r.code_critique.is_some()).count();
    c.check(
        code_entries == 0,
        format!("METAL_V: {code_entries} code-critique entries"),
    );
    c.check(t.stopped_early, "METAL_V run did not reach the passing program");

    let script = vec![
        reply(&fence("p0"), 1),
        reply("code", 1),
        reply(&fence("p1"), 1),
        reply("code", 1),
        reply(&fence("p2"), 1),
    ];
    let h = Harness::new(&progs, script);
    let t = h
        .run("c", |t, d| run_variant(t, Variant::CodeOnly, &LoopConfig::default(), d))
        .map_err(|e| e.to_string())?;
    let visual_calls = t.ledger.calls_for(AgentKind::VisualCritique);
    c.check(
        visual_calls == 0,
        format!("METAL_C: {visual_calls} visual-critique calls"),
    );
    c.check(t.stopped_early, "METAL_C run did not reach the passing program");

    let unified = "Colors differ.\n---CODE CRITIQUE---\nSet the color argument.";
    let script = vec![
        reply(&fence("p0"), 1),
        reply(unified, 1),
        reply(&fence("p1"), 1),
        reply(unified, 1),
        reply(&fence("p2"), 1),
        reply(unified, 1),
        reply(unified, 1),
    ];
    let h = Harness::new(&progs, script);
    let t = h
        .run("s", |t, d| {
            run_variant(t, Variant::SingleCritique, &LoopConfig::default(), d)
        })
        .map_err(|e| e.to_string())?;
    let post_initial = t.rounds.len().saturating_sub(1);
    let per_round = (t.gateway_calls() - 1) as f64 / post_initial.max(1) as f64;
    c.check(
        post_initial > 0 && per_round == 3.0,
        format!("METAL_S: {per_round} calls per post-initial round (unified critique + revision), criterion expects 3"),
    );
    c.check(
        t.ledger.calls_for(AgentKind::VisualCritique) + t.ledger.calls_for(AgentKind::CodeCritique) == 0,
        "METAL_S called a separate critic",
    );
    c.note("METAL_V no code critique; METAL_C no visual critique");
    c.finish()
}

fn best_of_n_selection() -> Result<String, String> {
    let mut c = Checks::default();
    let vectors: [&[f64]; 5] = [
        &[0.5, 0.9, 0.7],
        &[0.8, 0.8],
        &[0.2, 0.4, 0.4, 0.1],
        &[0.6, 0.6, 0.6, 0.6],
        &[0.95, 0.97, 0.1],
    ];
    for v in vectors {
        let names: Vec<String> = (0..v.len()).map(|i| format!("cand{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let progs = scored(&refs, v);
        let h = Harness::new(&as_refs(&progs), refs.iter().map(|s| reply(&fence(s), 10)).collect());
        let t = h
            .run("bon", |t, d| run_best_of_n(t, v.len() as u32, d))
            .map_err(|e| e.to_string())?;
        // Oracle: lowest index attaining the maximum.
        let max = v.iter().cloned().fold(f64::MIN, f64::max);
        let want = v.iter().position(|&s| s == max).expect("non-empty");
        c.check(
            t.final_round == Some(want as u32)
                && t.final_program.as_ref().map(|p| p.source.as_str()) == Some(refs[want]),
            format!("{v:?}: picked {:?}, expected {want}", t.final_round),
        );
        c.check(
            t.gateway_calls() == v.len(),
            format!("{v:?}: {} calls", t.gateway_calls()),
        );
    }

    let h = Harness::new(&[("only", 0.55)], vec![reply(&fence("only"), 10)]);
    let bon = h.run("one", |t, d| run_best_of_n(t, 1, d)).map_err(|e| e.to_string())?;
    let h = Harness::new(&[("only", 0.55)], vec![reply(&fence("only"), 10)]);
    let direct = h.run("one", run_direct).map_err(|e| e.to_string())?;
    c.check(
        bon.final_program == direct.final_program
            && bon.rounds.len() == 1
            && bon.rounds[0].decision == direct.rounds[0].decision
            && bon.gateway_calls() == direct.gateway_calls(),
        "n=1 differs from direct prompting",
    );
    c.note("5 score vectors; n=1 equals direct");
    c.finish()
}

fn f1_oracle_equivalence() -> Result<String, String> {
    let mut c = Checks::default();
    let mut rng = runner();
    let text = prop::collection::vec(
        prop::sample::select(vec!["a", "b", "A ", "c  d", "C D", "", "Sales"]),
        0..7,
    );
    let ty = prop::collection::vec(
        prop::sample::select(vec!["bar", "Bar ", "line", "pie", "sankey", "other", "scatter"]),
        0..7,
    );
    let col = prop::collection::vec(
        prop::sample::select(vec!["#ff0000", "#F00", "#FF0000cc", "#00ff00", "#0000FF", "#00f"]),
        0..7,
    );
    let lay = prop::collection::vec(
        (1u32..=2, 1u32..=2, 1u32..=2).prop_map(|(r, c, i)| [r, c, i.min(r * c)]),
        0..5,
    );
    let trace = (text, ty, col, lay).prop_map(|(t, ty, co, la)| ElementTrace {
        texts: t.into_iter().map(String::from).collect(),
        chart_types: ty.into_iter().map(String::from).collect(),
        colors: co.into_iter().map(String::from).collect(),
        layout: la,
    });
    let mut mismatches = 0;
    for _ in 0..500 {
        let gold = sample(&mut rng, &trace);
        let gen = sample(&mut rng, &trace);
        for facet in Facet::ALL {
            let got = facet_f1(&gold, &gen, facet);
            let (p, r, f, m) = oracle_f1(&gold, &gen, facet);
            if (got.precision, got.recall, got.f1, got.matched) != (p, r, f, m) {
                if mismatches < 3 {
                    c.check(
                        false,
                        format!("{facet:?}: {got:?} vs oracle ({p}, {r}, {f}, {m}) on {gold:?} / {gen:?}"),
                    );
                }
                mismatches += 1;
            }
        }
    }
    c.check(mismatches == 0, format!("{mismatches} facet mismatches over 500 pairs"));

    let corpus = fixtures::builtin();
    let pinned: PinnedTraces = fixtures::pinned_traces(&corpus)?;
    for f in &corpus {
        let report = evaluate_task(&f.name, &f.gold_src, Some(&f.gold_src), &pinned).map_err(|e| e.to_string())?;
        let all_one = report
            .facets
            .iter()
            .all(|x: &FacetF1| x.precision == 1.0 && x.recall == 1.0 && x.f1 == 1.0);
        c.check(all_one, format!("{}: gold vs itself {:?}", f.name, report.facets));
    }

    let t = |v: &[&str]| ElementTrace {
        texts: v.iter().map(|s| s.to_string()).collect(),
        ..Default::default()
    };
    let hand = facet_f1(&t(&["A", "B", "C"]), &t(&["A", "B", "D"]), Facet::Text);
    let two_thirds = 2.0 / 3.0;
    c.check(
        [hand.precision, hand.recall, hand.f1]
            .iter()
            .all(|v| (v - two_thirds).abs() < 1e-12),
        format!("hand case {hand:?}"),
    );
    c.note(format!(
        "500 random pairs x 4 facets; {} fixtures gold-vs-gold",
        corpus.len()
    ));
    c.finish()
}

const WRONG_PROGRAM: &str = "import matplotlib.pyplot as plt\n\nfig, ax = plt.subplots(figsize=(3.2, 2.4), dpi=50)\nax.plot([0, 1, 2], [3, 1, 2], color=\"black\")\n";

fn hermetic_bench() -> Result<String, String> {
    let start = Instant::now();
    let mut c = Checks::default();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dataset = tmp.path().join("dataset");
    let corpus = fixtures::builtin();
    fixtures::export_dataset(&corpus, &dataset).map_err(|e| e.to_string())?;

    // Task i emits the gold program at round i % 3.
    let mut expected_calls = 0;
    for (i, f) in corpus.iter().enumerate() {
        let k = i % 3;
        let mut programs = vec![WRONG_PROGRAM; k];
        programs.push(&f.gold_src);
        let usage = serde_json::json!({"prompt_tokens": 50, "completion_tokens": 300});
        let mut steps = vec![serde_json::json!({"text": fence(programs[0]), "usage": usage})];
        for p in &programs[1..] {
            steps.push(serde_json::json!({"text": "The line should be an area fill.", "usage": usage}));
            steps.push(serde_json::json!({"text": "Use the data from the reference.", "usage": usage}));
            steps.push(serde_json::json!({"text": fence(p), "usage": usage}));
        }
        expected_calls += 1 + 3 * k;
        std::fs::write(
            dataset.join(&f.name).join("script.json"),
            serde_json::to_vec(&steps).unwrap(),
        )
        .map_err(|e| e.to_string())?;
    }
    let config = tmp.path().join("bench.toml");
    std::fs::write(&config, "[model]\nbackend = \"scripted\"\nscript = \"script.json\"\n")
        .map_err(|e| e.to_string())?;

    let out = Command::new(env!("CARGO_BIN_EXE_chartsmith"))
        .current_dir(tmp.path())
        .args(["bench"])
        .arg(&dataset)
        .args([
            "--config",
            "bench.toml",
            "--out",
            "runs",
            "--reports",
            "reports",
            "--run-id",
            "accept",
            "--workers",
            "4",
        ])
        .env_remove("CHARTSMITH_API_KEY")
        .env("HTTPS_PROXY", "http://127.0.0.1:9")
        .env("HTTP_PROXY", "http://127.0.0.1:9")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "bench exited {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).lines().last().unwrap_or("")
        ));
    }
    let elapsed = start.elapsed();

    let f1 = std::fs::read_to_string(tmp.path().join("reports/accept/f1.csv")).map_err(|e| e.to_string())?;
    let mut rows = 0;
    for line in f1.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let avg: f64 = cols
            .last()
            .and_then(|v| v.parse().ok())
            .ok_or(format!("bad row {line}"))?;
        c.check(avg == 1.0, format!("{}: average F1 {avg}", cols[0]));
        if cols[0] != "mean" {
            rows += 1;
        }
    }
    c.check(rows == corpus.len(), format!("{rows} task rows in f1.csv"));

    let records = RunDir::open(tmp.path().join("runs/accept"))
        .load_tasks()
        .map_err(|e| e.to_string())?;
    let calls: usize = records.iter().map(|r| r.trace.gateway_calls()).sum();
    c.check(
        calls == expected_calls,
        format!("{calls} gateway calls, expected {expected_calls}"),
    );
    c.check(elapsed < Duration::from_secs(120), format!("took {elapsed:?}"));
    c.note(format!(
        "{} tasks, {calls} calls, {:.1}s",
        corpus.len(),
        elapsed.as_secs_f64()
    ));
    c.finish()
}

fn scaling_monotonicity() -> Result<String, String> {
    let mut c = Checks::default();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = RunDir::new(tmp.path(), "scaled");

    // Scores improve per round (with one dip) and never pass, so every run uses all rounds.
    let curves: [&[f64]; 4] = [
        &[0.10, 0.30, 0.50, 0.60, 0.70, 0.80, 0.85, 0.88],
        &[0.20, 0.25, 0.45, 0.40, 0.65, 0.70, 0.72, 0.86],
        &[0.05, 0.50, 0.55, 0.60, 0.62, 0.75, 0.80, 0.81],
        &[0.30, 0.35, 0.36, 0.50, 0.58, 0.60, 0.70, 0.89],
    ];
    let cfg = LoopConfig {
        t_max: curves[0].len() as u32,
        ..Default::default()
    };
    let mut traces: Vec<RunTrace> = Vec::new();
    for (i, curve) in curves.iter().enumerate() {
        let names: Vec<String> = (0..curve.len()).map(|r| format!("task{i}_round{r}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let progs = scored(&refs, curve);
        let per = 60 + 20 * i as u64;
        let mut script = vec![reply(&fence(refs[0]), 400)];
        for next in &refs[1..] {
            script.push(reply("visual notes", 2 * per));
            script.push(reply("code notes", per));
            script.push(reply(&fence(next), 3 * per));
        }
        let h = Harness::new(&as_refs(&progs), script);
        let id = format!("task{i}");
        let trace = h.run(&id, |t, d| run_metal(t, &cfg, d)).map_err(|e| e.to_string())?;
        run.write_task(&TaskRecord {
            status: TaskStatus::Completed,
            error: None,
            trace: trace.clone(),
        })
        .map_err(|e| e.to_string())?;
        traces.push(trace);
    }
    run.write_manifest(&RunManifest {
        run_id: "scaled".into(),
        method: "metal".into(),
        seed: 0,
        tasks: traces.iter().map(|t| t.task_id.clone()).collect(),
        config: serde_json::json!({}),
    })
    .map_err(|e| e.to_string())?;

    let report = tmp.path().join("report");
    let out = Command::new(env!("CARGO_BIN_EXE_chartsmith"))
        .arg("report-scaling")
        .arg(run.root())
        .arg("--out")
        .arg(&report)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "report-scaling exited {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    let csv = std::fs::read_to_string(report.join("scaling.csv")).map_err(|e| e.to_string())?;
    let mut lines = csv.lines();
    let header = lines.next().unwrap_or("");
    c.check(
        header == "log2_tokens,mean_best_score,n_tasks",
        format!("header {header:?}"),
    );
    let rows: Vec<(u32, f64)> = lines
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            (cols[0].parse().unwrap_or(0), cols[1].parse().unwrap_or(f64::NAN))
        })
        .collect();
    let buckets: Vec<u32> = rows.iter().map(|r| r.0).collect();
    c.check(buckets == [9, 10, 11, 12, 13], format!("buckets {buckets:?}"));
    let monotone = rows.windows(2).all(|w| w[1].1 >= w[0].1);
    c.check(monotone, format!("best-score column not non-decreasing: {rows:?}"));

    // Oracle: per trace, best score among rounds whose program was affordable
    // within the budget (earlier rounds' calls plus this round's generation;
    // a round's own critiques come after its score); averaged over traces
    // that afford at least one round.
    for &(b, got) in &rows {
        let budget = 1u64 << b;
        let bests: Vec<f64> = traces
            .iter()
            .filter_map(|t| {
                let mut earlier = 0;
                let mut best: Option<f64> = None;
                for r in &t.rounds {
                    let own: u64 = r
                        .calls
                        .iter()
                        .filter(|c| c.agent == AgentKind::Generation)
                        .map(|c| c.usage.completion_tokens)
                        .sum();
                    let cost = earlier + own;
                    earlier += r.calls.iter().map(|c| c.usage.completion_tokens).sum::<u64>();
                    if cost <= budget {
                        best = Some(best.map_or(r.decision.scores.mean(), |x: f64| x.max(r.decision.scores.mean())));
                    }
                }
                best
            })
            .collect();
        let want = bests.iter().sum::<f64>() / bests.len() as f64;
        c.check((got - want).abs() < 1e-4, format!("2^{b}: {got} vs oracle {want}"));
    }
    c.note(
        rows.iter()
            .map(|(b, s)| format!("2^{b}={s:.3}"))
            .collect::<Vec<_>>()
            .join(" "),
    );
    c.finish()
}

type Criterion = fn() -> Result<String, String>;

fn main() {
    let criteria: [(&str, Criterion); 10] = [
        ("verifier identity", verifier_identity),
        ("SSIM oracle equivalence", ssim_oracle_equivalence),
        ("HSV partition", hsv_partition),
        ("Jaccard/cosine hand cases", jaccard_cosine_hand_cases),
        ("loop arithmetic", loop_arithmetic),
        ("ablation wiring", ablation_wiring),
        ("best-of-N selection", best_of_n_selection),
        ("F1 oracle equivalence", f1_oracle_equivalence),
        ("hermetic benchmark", hermetic_bench),
        ("scaling monotonicity", scaling_monotonicity),
    ];
    // Filter like libtest: `cargo test --test acceptance -- scaling`.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {failed} failing criteria");
    if failed > 0 {
        std::process::exit(1);
    }
}
