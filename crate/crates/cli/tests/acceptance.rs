//! Acceptance criteria. Prints one line per criterion and exits non-zero if
//! any gated criterion fails.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use slcl::corpus::{build_vocab, ingest, ingest_str, ClassSource, IngestConfig, Label, SentenceRecord};
use slcl::curriculum::{competence_at, CompetenceParams, CompetencePlan};
use slcl::difficulty::{fre_score, length_score, rarity_score, Metric, RarityNormalizer};
use slcl::eval::{perplexity, subset_report, vocab_overlap, PerplexityReport};
use slcl::experiment::{Experiment, ExperimentConfig, RunManifest};
use slcl::model::{finite_difference_check, mask_batch, randomize_params, Mode, ModelConfig, ModelState};
use slcl::stats::{bootstrap_median_one_sided, holm_adjust, wilcoxon_brute_force, wilcoxon_one_sided, Direction};
use slcl::synth::{generate, SynthConfig};

enum Verdict {
    Pass,
    Fail,
    Report,
}

struct Line {
    id: &'static str,
    title: &'static str,
    verdict: Verdict,
    detail: String,
    elapsed: Duration,
}

fn gate(ok: bool) -> Verdict {
    if ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

fn records_from(sl: &str, el: &str) -> Vec<SentenceRecord> {
    let cfg = IngestConfig::default();
    let mut r = ingest_str(sl, Label::SL, "sl", &cfg, 0).unwrap().records;
    let n = r.len() as u32;
    r.extend(ingest_str(el, Label::EL, "el", &cfg, n).unwrap().records);
    r
}

fn oracle_syllables(word: &str) -> usize {
    let w: String = word.to_lowercase().chars().filter(|c| c.is_alphabetic()).collect();
    let vowels = "aeiouy";
    let mut n = w.split(|c| !vowels.contains(c)).filter(|g| !g.is_empty()).count();
    let b = w.as_bytes();
    if n > 1 && b.len() >= 2 && b[b.len() - 1] == b'e' && !vowels.contains(b[b.len() - 2] as char) {
        n -= 1;
    }
    n.max(1)
}

fn criterion_1() -> (bool, String) {
    let synth = generate(&SynthConfig { articles: 60, min_sentences: 9, max_sentences: 9, ..Default::default() }).unwrap();
    let extra_sl = "#article 9000\nShe is the author of the Twilight series.\nToday.\nIt's 1999 and they're here!\n";
    let extra_el = "#article 9000\nThe committee's recommendations were unanimously adopted in 2004.\nRailroads, canals and turnpikes transformed commerce.\n";
    let mut records = records_from(&format!("{extra_sl}{}", synth.sl), &format!("{extra_el}{}", synth.el));
    records.truncate(1000);
    assert_eq!(records.len(), 1000);
    let vocab = build_vocab(&records, 2, 16_384).unwrap();
    vocab.assign_ids(&mut records);

    let mut counts: HashMap<&str, u64> = HashMap::new();
    for r in &records {
        for w in &r.words {
            *counts.entry(w.as_str()).or_default() += 1;
        }
    }
    let total: u64 = counts.values().sum();
    let unk: u64 = counts.values().filter(|&&c| c < 2).sum();
    let types = counts.len() as u64;
    let count = |w: &str| if counts[w] >= 2 { counts[w] } else { unk };

    let mut worst = 0.0f64;
    let mut bad = 0;
    for r in &records {
        let n = r.words.len() as f64;
        let len = r.words.len() as f64;
        let rarity_tok = -r.words.iter().map(|w| (count(w) as f64 / total as f64).ln()).sum::<f64>() / n;
        let rarity_typ = -r.words.iter().map(|w| (count(w) as f64 / types as f64).ln()).sum::<f64>() / n;
        let syl: usize = r.words.iter().map(|w| oracle_syllables(w)).sum();
        let fre = 206.835 - 1.015 * n - 84.6 * (syl as f64 / n);
        let got = [
            (length_score(r).unwrap(), len),
            (rarity_score(r, &vocab, RarityNormalizer::Tokens).unwrap(), rarity_tok),
            (rarity_score(r, &vocab, RarityNormalizer::Types).unwrap(), rarity_typ),
            (fre_score(r).unwrap(), fre),
        ];
        for (a, b) in got {
            let e = if a == b { 0.0 } else { (a - b).abs() / a.abs().max(b.abs()) };
            worst = worst.max(e);
            bad += (e > 1e-12) as usize;
        }
    }

    // worked examples
    let twilight = records_from("She is the author of the Twilight series.", "x");
    let ab = records_from("a a b\na b", "");
    let ab_vocab = build_vocab(&ab, 1, 100).unwrap();
    let r_ab = rarity_score(&ab[1], &ab_vocab, RarityNormalizer::Tokens).unwrap();
    let one = records_from("Today", "");
    let one_vocab = build_vocab(&one, 1, 100).unwrap();
    let fre_10_15 = slcl::difficulty::fre_from_counts(10, 15);
    let fre_1_1 = slcl::difficulty::fre_from_counts(1, 1);
    let fre_40_120 = slcl::difficulty::fre_from_counts(40, 120);
    let examples = [
        length_score(&twilight[0]).unwrap() == 8.0,
        length_score(&one[0]).unwrap() == 1.0,
        rel_close(r_ab, -0.5 * ((3.0f64 / 5.0).ln() + (2.0f64 / 5.0).ln()), 1e-15),
        (r_ab - 0.7136).abs() < 5e-5,
        rarity_score(&one[0], &one_vocab, RarityNormalizer::Tokens).unwrap() == 0.0,
        fre_10_15 == 206.835 - 1.015 * 10.0 - 84.6 * 1.5 && (fre_10_15 - 69.785).abs() < 1e-9,
        fre_1_1 == 206.835 - 1.015 - 84.6 && (fre_1_1 - 121.22).abs() < 1e-9,
        fre_40_120 == 206.835 - 1.015 * 40.0 - 84.6 * 3.0 && (fre_40_120 + 87.565).abs() < 1e-9,
    ];
    let ex_ok = examples.iter().filter(|&&b| b).count();
    (
        bad == 0 && ex_ok == examples.len(),
        format!(
            "4000 score comparisons, worst relative error {worst:.1e}, {bad} above 1e-12; {ex_ok}/{} worked examples exact",
            examples.len()
        ),
    )
}

fn criterion_2() -> (bool, String) {
    let c = |t, off| competence_at(t, 0.05, 50_000, off).unwrap();
    let values = [
        c(0, true) == 0.05,
        (c(25_000, true) - 0.50125f64.sqrt()).abs() < 1e-15 && (c(25_000, true) - 0.70799).abs() < 1e-5,
        (c(25_000, false) - 0.49875f64.sqrt()).abs() < 1e-15 && (c(25_000, false) - 0.70623).abs() < 1e-5,
        c(50_000, true) == 1.0 && c(50_000, false) == 1.0,
        c(123_456, true) == 1.0 && c(123_456, false) == 1.0,
    ];
    let n = 1000usize;
    let mut windows_ok = 0;
    let mut nested = true;
    for offset in [true, false] {
        let params = CompetenceParams { c0: 0.05, duration: 50_000, update_every: 5_000, use_c0_offset: offset };
        let plan = CompetencePlan { metric: Metric::Length, sorted_ids: (0..n as u32).collect(), params };
        let mut prev: Vec<u32> = Vec::new();
        for k in 0..100u64 {
            let t = k * 617;
            let t_anchor = t / 5_000 * 5_000;
            let cc = if offset {
                (t_anchor as f64 * (1.0 - 0.0025) / 50_000.0 + 0.0025).sqrt().min(1.0)
            } else {
                (t_anchor as f64 * (1.0 - 0.0025) / 50_000.0).sqrt().min(1.0)
            };
            let expected = if t >= 50_000 { n } else { ((cc * n as f64) - 1e-9).ceil() as usize };
            let w = plan.window_ids(t);
            windows_ok += (w.len() == expected) as usize;
            nested &= w.starts_with(&prev);
            prev = w.to_vec();
        }
        let first = plan.window_ids(0).len();
        if offset {
            windows_ok += (first == 50) as usize;
            windows_ok += (plan.window_ids(4_999) == plan.window_ids(0)) as usize;
            windows_ok += (plan.window_ids(50_000).len() == n) as usize;
        }
    }
    let vals_ok = values.iter().all(|&b| b);
    (
        vals_ok && windows_ok == 203 && nested,
        format!(
            "c(0)={}, c(25000)={:.5}/{:.5}, {}/203 window checks, nested={nested}",
            c(0, true),
            c(25_000, true),
            c(25_000, false),
            windows_ok
        ),
    )
}

fn criterion_3() -> (bool, String) {
    let cfg = ModelConfig { layers: 2, hidden: 8, heads: 2, ffn: 16, vocab_size: 20, max_len: 10, dropout: 0.0, seed: 21 };
    let mut state = ModelState::<f64>::init(cfg).unwrap();
    randomize_params(&mut state, 5);
    let rows = vec![vec![5u32, 9, 12, 7, 19, 6, 8, 11], vec![14, 5, 17, 10, 13]];
    let batch = (0..)
        .map(|s| mask_batch(&rows, 20, s, 0))
        .find(|b| (0..b.batch).all(|r| b.mask_positions[r * b.seq_len..(r + 1) * b.seq_len].iter().any(|&m| m)))
        .unwrap();
    let worst = finite_difference_check(&state, &batch, Mode::Eval, 1e-5).unwrap();
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let failing: Vec<&str> = worst.iter().filter(|w| w.1 >= 1e-4).map(|w| w.0.as_str()).collect();
    (
        failing.is_empty(),
        format!("{} tensors, worst relative error {max:.2e}, failing: {failing:?}", worst.len()),
    )
}

fn criterion_4(manifests: &[RunManifest]) -> (bool, String) {
    let synth = generate(&SynthConfig { articles: 20, ..Default::default() }).unwrap();
    let mut records = records_from(&synth.sl, &synth.el);
    let vocab = build_vocab(&records, 1, 16_384).unwrap();
    vocab.assign_ids(&mut records);
    let refs: Vec<&SentenceRecord> = records.iter().collect();
    let v = vocab.len();
    let cfg = ModelConfig { layers: 2, hidden: 16, heads: 2, ffn: 32, vocab_size: v, max_len: 128, dropout: 0.1, seed: 0 };
    let uniform = ModelState::<f32>::uniform(cfg.clone()).unwrap();
    let (ppl, count) = perplexity(&uniform, &refs, 7).unwrap();
    let uniform_ok = rel_close(ppl, v as f64, 1e-12);

    let mut reports: Vec<PerplexityReport> = Vec::new();
    for seed in 0..5 {
        let m = ModelState::<f32>::init(ModelConfig { seed, ..cfg.clone() }).unwrap();
        reports.push(subset_report(&m, &refs, seed).unwrap());
    }
    reports.push(subset_report(&uniform, &refs, 7).unwrap());
    reports.extend(manifests.iter().map(|m| m.result.test.clone()));
    let worst = reports.iter().map(|r| r.pooling_residual().abs()).fold(0.0, f64::max);
    (
        uniform_ok && worst < 1e-9,
        format!(
            "uniform model perplexity {ppl} over {count} masked tokens (|V| = {v}); pooling residual <= {worst:.1e} over {} reports",
            reports.len()
        ),
    )
}

fn criterion_5() -> (bool, String) {
    let mut fixtures = 0;
    let mut mismatches = 0;
    for n in 5..=10usize {
        for pattern in 0u32..(1 << n) {
            let d: Vec<f64> = (0..n).map(|i| if pattern >> i & 1 == 1 { (i + 1) as f64 } else { -((i + 1) as f64) }).collect();
            for dir in [Direction::Improves, Direction::Hurts] {
                fixtures += 1;
                mismatches += (wilcoxon_one_sided(&d, dir).unwrap().p != wilcoxon_brute_force(&d, dir)) as usize;
            }
        }
    }
    // tied magnitudes
    for d in [
        vec![-1.0, -1.0, 2.0, -3.0, -3.0, -3.0],
        vec![2.0, 2.0, 2.0, 2.0, -2.0, 5.0, -5.0],
        vec![-0.5, 0.5, -1.5, -1.5, 2.5, -2.5, -2.5, 4.0, 0.0, -9.0],
    ] {
        for dir in [Direction::Improves, Direction::Hurts] {
            fixtures += 1;
            mismatches += (wilcoxon_one_sided(&d, dir).unwrap().p != wilcoxon_brute_force(&d, dir)) as usize;
        }
    }
    let p32 = wilcoxon_one_sided(&[-1.0, -2.0, -3.0, -4.0, -5.0], Direction::Improves).unwrap().p;
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
    let holm = [
        close(&holm_adjust(&[0.01, 0.02, 0.05]).unwrap(), &[0.03, 0.04, 0.05]),
        holm_adjust(&[0.037]).unwrap() == vec![0.037],
        close(&holm_adjust(&[0.04, 0.03]).unwrap(), &[0.06, 0.06]),
    ];
    let b = 10_000;
    let favour: Vec<f64> = (1..=15).map(|i| -(i as f64) * 0.37).collect();
    let pb = bootstrap_median_one_sided(&favour, Direction::Improves, b, 42).unwrap();
    let ok = mismatches == 0 && p32 == 1.0 / 32.0 && holm.iter().all(|&h| h) && pb == 1.0 / (b + 1) as f64;
    (
        ok,
        format!(
            "{fixtures} Wilcoxon fixtures vs 2^n enumeration, {mismatches} mismatches; n=5 p={p32}; Holm {}/3; bootstrap p={pb:.6e} (1/(B+1)={:.6e})",
            holm.iter().filter(|&&h| h).count(),
            1.0 / (b + 1) as f64
        ),
    )
}

fn toy_overlap() -> bool {
    let m = vocab_overlap(&records_from("a b", "b c d")).unwrap();
    let same = vocab_overlap(&records_from("x y z", "z y x")).unwrap();
    (m.percent[0][1] - 100.0 / 3.0).abs() < 1e-9
        && (m.percent[1][0] - 50.0).abs() < 1e-9
        && m.percent[0][0] == 100.0
        && m.percent[1][1] == 100.0
        && same.percent.iter().flatten().all(|&p| p == 100.0)
}

fn criterion_8() -> (Verdict, String) {
    let toy = toy_overlap();
    match (std::env::var_os("SLCL_REAL_CORPUS_SL"), std::env::var_os("SLCL_REAL_CORPUS_EL")) {
        (Some(sl), Some(el)) => {
            let sources = [
                ClassSource { label: "SL".into(), path: PathBuf::from(sl) },
                ClassSource { label: "EL".into(), path: PathBuf::from(el) },
            ];
            match ingest(&sources, &IngestConfig::default()).and_then(|i| vocab_overlap(&i.records)) {
                Ok(m) => {
                    let ok = (m.percent[0][1] - 96.67).abs() <= 0.5 && (m.percent[1][0] - 86.06).abs() <= 0.5;
                    (
                        gate(ok && toy),
                        format!("real corpus: SL row {:.2}%, EL row {:.2}% (targets 96.67 / 86.06 +/- 0.5)", m.percent[0][1], m.percent[1][0]),
                    )
                }
                Err(e) => (Verdict::Fail, format!("real corpus could not be read: {e}")),
            }
        }
        _ => (gate(toy), format!("no real corpus supplied; toy overlap fixtures {}", if toy { "exact" } else { "wrong" })),
    }
}

fn micro_config(out: &Path) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/micro.json");
    let mut cfg = ExperimentConfig::load(&path).expect("micro config");
    cfg.output_dir = out.to_path_buf();
    cfg
}

fn run_micro(out: &Path) -> (Vec<RunManifest>, Duration) {
    let started = Instant::now();
    let exp = Experiment::new(micro_config(out)).unwrap();
    let summary = exp.run_all().unwrap();
    assert!(summary.complete(), "failed cells: {:?}", summary.failed);
    (exp.load_manifests().unwrap(), started.elapsed())
}

fn criterion_6(manifests: &[RunManifest]) -> ((bool, String), (bool, String)) {
    let mut per_strategy: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for m in manifests {
        let r = &m.result;
        let initial = r.validation_trace[0].loss;
        let last = r.phases.last().unwrap().best_loss;
        let e = per_strategy.entry(m.strategy.as_str()).or_default();
        e.0 += (last < initial) as usize;
        e.1 += 1;
    }
    let a_ok = per_strategy.values().all(|&(k, n)| k >= 4 && n == 5);
    let a_detail = per_strategy.iter().map(|(s, (k, n))| format!("{s} {k}/{n}")).collect::<Vec<_>>().join(", ");

    let sl = |name: &str| -> BTreeMap<u64, f64> {
        manifests.iter().filter(|m| m.strategy == name).map(|m| (m.seed, m.result.test.sl)).collect()
    };
    let (seq, base) = (sl("Sequential"), sl("BaselineSLEL"));
    let wins = seq.iter().filter(|(s, v)| **v <= base[s]).count();
    let mean = |m: &BTreeMap<u64, f64>| m.values().sum::<f64>() / m.len() as f64;
    (
        (a_ok, format!("validation loss below step 0 at early stop: {a_detail}")),
        (
            wins >= 3,
            format!(
                "Sequential SL PPL <= BaselineSLEL SL PPL in {wins}/5 seeds (means {:.2} vs {:.2})",
                mean(&seq),
                mean(&base)
            ),
        ),
    )
}

fn table_files(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = ["results.txt", "results.csv", "results.json", "significance.txt", "significance.csv", "significance.json"]
        .iter()
        .map(PathBuf::from)
        .collect();
    let runs = dir.join("runs");
    for s in fs::read_dir(&runs).unwrap() {
        let s = s.unwrap().path();
        for f in fs::read_dir(&s).unwrap() {
            let f = f.unwrap().path();
            if f.extension().is_some_and(|e| e == "json") && !f.to_string_lossy().ends_with(".ckpt.json") {
                files.push(f.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    files.sort();
    files
}

fn main() -> ExitCode {
    let mut lines = Vec::new();
    let mut timed = |id, title, limit: Duration, f: &mut dyn FnMut() -> (bool, String)| {
        let started = Instant::now();
        let (ok, detail) = f();
        let elapsed = started.elapsed();
        let within = elapsed < limit;
        let detail = if within { detail } else { format!("{detail}; exceeded {limit:?}") };
        lines.push(Line { id, title, verdict: gate(ok && within), detail, elapsed });
    };
    timed("1", "formula exactness", Duration::from_secs(1), &mut criterion_1);
    timed("2", "competence schedule", Duration::from_secs(1), &mut criterion_2);
    timed("3", "gradient correctness", Duration::from_secs(60), &mut criterion_3);
    timed("5", "statistics oracles", Duration::from_secs(30), &mut criterion_5);

    let first = tempfile::tempdir().unwrap();
    let (manifests, micro_time) = run_micro(first.path());
    timed("4", "perplexity identities", Duration::from_secs(5), &mut || criterion_4(&manifests));

    let ((a_ok, a_detail), (b_ok, b_detail)) = criterion_6(&manifests);
    let within = micro_time < Duration::from_secs(30 * 60);
    lines.push(Line {
        id: "6a",
        title: "micro-scale loss decrease",
        verdict: gate(a_ok && within),
        detail: format!("{a_detail}; {} runs in {:.0} s", manifests.len(), micro_time.as_secs_f64()),
        elapsed: micro_time,
    });
    lines.push(Line {
        id: "6b",
        title: "micro-scale SL trend (report only)",
        verdict: Verdict::Report,
        detail: format!("{b_detail}; directional echo {}", if b_ok { "present" } else { "absent" }),
        elapsed: Duration::ZERO,
    });

    let second = tempfile::tempdir().unwrap();
    let (_, rerun_time) = run_micro(second.path());
    let files = table_files(first.path());
    let differing: Vec<String> = files
        .iter()
        .filter(|f| fs::read(first.path().join(f)).ok() != fs::read(second.path().join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    lines.push(Line {
        id: "7",
        title: "end-to-end determinism",
        verdict: gate(differing.is_empty() && files.len() > 6),
        detail: format!("{} files compared byte-for-byte, differing: {differing:?}", files.len()),
        elapsed: rerun_time,
    });

    let started = Instant::now();
    let (verdict, detail) = criterion_8();
    lines.push(Line { id: "8", title: "vocabulary overlap", verdict, detail, elapsed: started.elapsed() });

    lines.sort_by_key(|l| l.id);
    let mut failed = 0;
    for l in &lines {
        let tag = match l.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => {
                failed += 1;
                "FAIL"
            }
            Verdict::Report => "INFO",
        };
        println!("criterion {:<2} {tag}  {}: {} [{:.2} s]", l.id, l.title, l.detail, l.elapsed.as_secs_f64());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
