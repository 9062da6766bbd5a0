//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use cci::cli::{run, stem, BUNDLED_SHOTS};
use cci::gateway::{StubBackend, Transcript};
use cci::io::{load_corpus, save_corpus};
use cci::solve::{solve, MonotonicClock};
use cci_core::corpus::{deduplicate, CommentType, Label, Split};
use cci_core::detector::{
    evaluate, gradcheck::gradient_check, loss, train, Detect, DetectorConfig, DetectorError, DetectorModel, EncodedCase, Prediction,
    SimilarityMode,
};
use cci_core::diffscript::{apply_edit_script, build_edit_script};
use cci_core::enhance::{iterative_enhance, EnhanceConfig};
use cci_core::evalkit::{bleu4, gleu, meteor, sari};
use cci_core::fixer::{kto_loss, kto_value, lora_forward, lora_merge, lora_param_count, KtoParams, KtoSample};
use cci_core::fixtures::{separable_corpus, separable_training_config};
use cci_core::linalg::Matrix;
use cci_core::semfilter::{majority_vote, semantic_filter, Decision, ShotExample, ShotSet, Verdict};
use cci_core::synfilter::{apply_syntactic_filters, classify_comment_change, is_case_change, is_lexical_change, is_stopword_change, is_typo_fix, FilterRule};
use cci_core::lexing::{code_vocabulary, tokenize_code, tokenize_comment};
use cci_core::{ChatBackend, CciCase, Corpus, TokenSeq};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

// 1 ------------------------------------------------------------------------

fn fired_rules(old: &str, new: &str, old_code: &str) -> Vec<FilterRule> {
    let (o, n) = (tokenize_comment(old), tokenize_comment(new));
    let vocab = code_vocabulary(&tokenize_code(old_code));
    [
        (is_typo_fix(&o, &n, &vocab), FilterRule::TypoFix),
        (is_case_change(&o, &n, &vocab), FilterRule::CaseChange),
        (is_stopword_change(&o, &n), FilterRule::StopwordChange),
        (is_lexical_change(&o, &n, &vocab), FilterRule::LexicalChange),
    ]
    .into_iter()
    .filter_map(|(hit, r)| hit.then_some(r))
    .collect()
}

fn filter_rules() -> Outcome {
    let t = Instant::now();
    let code = "public boolean allowed(InetAddress address) { return rules.permit(address); }";
    let cases = [
        (
            "Returns the result of interpretting the object as an instance of `Dial Region'.",
            "Returns the result of interpreting the object as an instance of `Dial Region'.",
            vec![FilterRule::TypoFix],
        ),
        (
            "Provides a string representation of the property.",
            "Provides the string representation of the property.",
            vec![FilterRule::StopwordChange],
        ),
        (
            "Check if specified address is allowed by current IPAccess rules.",
            "Checks if specified address is allowed by current IPAccess rules.",
            vec![FilterRule::LexicalChange],
        ),
        ("Returns The Cached Value Of This Node.", "Returns the cached value of this node.", vec![FilterRule::CaseChange]),
        (
            "@return the query object as a DBObject",
            "@return the query object as a Document",
            vec![],
        ),
    ];
    for (old, new, expected) in &cases {
        let fired = fired_rules(old, new, code);
        ensure!(&fired == expected, "`{old}` fired {fired:?}, expected {expected:?}");
        let verdict = classify_comment_change(old, new, code);
        let want = expected.first().copied().unwrap_or(FilterRule::None);
        ensure!(verdict.rule == want, "`{old}` classified {:?}", verdict.rule);
    }
    // The DBObject/Document change as a full record survives filtering.
    let fig = CciCase::new(
        "fig1",
        CommentType::Return,
        "@return the query object as a DBObject",
        "public DBObject getQueryObject() { return queryObject; }",
        "public Document getQueryObject() { return queryObject; }",
    )
    .with_new_comment("@return the query object as a Document")
    .with_label(Label::Inconsistent);
    let (kept, report) = apply_syntactic_filters(&Corpus::new(vec![fig]).unwrap());
    ensure!(kept.len() == 1 && report.total_removed() == 0, "fig1 case was filtered");
    let el = t.elapsed();
    ensure!(el < Duration::from_secs(1), "took {el:?}");
    Ok(format!("5 examples, {:.3}s", el.as_secs_f64()))
}

// 2 ------------------------------------------------------------------------

fn edit_script_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let alphabet = ["a", "b", "c", "d", "e", "return", "(", ")", ";", "x"];
    let seq = |rng: &mut ChaCha8Rng| -> TokenSeq {
        let n = rng.gen_range(0..20);
        TokenSeq::code(&(0..n).map(|_| *alphabet.choose(rng).unwrap()).collect::<Vec<_>>())
    };
    let mut ok = 0;
    for _ in 0..1000 {
        let (a, b) = (seq(&mut rng), seq(&mut rng));
        let script = build_edit_script(&a, &b);
        if apply_edit_script(&script, &a).map(|t| t.tokens) == Ok(b.tokens.clone()) {
            ok += 1;
        }
    }
    ensure!(ok == 1000, "{ok}/1000 round trips");
    for _ in 0..100 {
        let a = seq(&mut rng);
        if a.is_empty() {
            continue;
        }
        let s = build_edit_script(&a, &a);
        ensure!(
            matches!(s.spans.as_slice(), [cci_core::EditSpan::Keep(t)] if *t == a.tokens),
            "build(a, a) = {:?}",
            s.spans
        );
    }
    Ok("1000/1000".into())
}

// 3 ------------------------------------------------------------------------

fn grams(t: &[String], n: usize) -> Vec<Vec<String>> {
    if t.len() < n {
        vec![]
    } else {
        (0..=t.len() - n).map(|i| t[i..i + n].to_vec()).collect()
    }
}

fn distinct(v: Vec<Vec<String>>) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = vec![];
    for g in v {
        if !out.contains(&g) {
            out.push(g);
        }
    }
    out
}

fn count(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

/// BLEU-4 (or GLEU when `source` is given) from occurrence lists.
fn bleu_oracle(c: &[String], r: &[String], source: Option<&[String]>) -> f64 {
    if c.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let (cg, rg) = (grams(c, n), grams(r, n));
        let mut num: i64 = distinct(cg.clone()).iter().map(|g| count(&cg, g).min(count(&rg, g)) as i64).sum();
        if let Some(s) = source {
            let sg = grams(s, n);
            for g in distinct(sg.clone()) {
                if !rg.contains(&g) {
                    num -= count(&sg, &g).min(count(&cg, &g)) as i64;
                }
            }
            num = num.max(0);
        }
        let mut den = cg.len() as i64;
        if n > 1 && num == 0 {
            num += 1;
            den += 1;
        }
        if num == 0 || den == 0 {
            return 0.0;
        }
        log_sum += (num as f64 / den as f64).ln();
    }
    let bp = if c.len() < r.len() { (1.0 - r.len() as f64 / c.len() as f64).exp() } else { 1.0 };
    bp * (log_sum / 4.0).exp()
}

fn sari_oracle(s: &[String], c: &[String], r: &[String]) -> f64 {
    let set = |t: &[String], n| distinct(grams(t, n));
    let minus = |a: &[Vec<String>], b: &[Vec<String>]| a.iter().filter(|g| !b.contains(g)).cloned().collect::<Vec<_>>();
    let inter = |a: &[Vec<String>], b: &[Vec<String>]| a.iter().filter(|g| b.contains(g)).cloned().collect::<Vec<_>>();
    let f1 = |p: &[Vec<String>], g: &[Vec<String>]| {
        match (p.is_empty(), g.is_empty()) {
            (true, true) => return 1.0,
            (true, _) | (_, true) => return 0.0,
            _ => {}
        }
        let h = inter(p, g).len() as f64;
        let (pp, rr) = (h / p.len() as f64, h / g.len() as f64);
        if h == 0.0 {
            0.0
        } else {
            2.0 * pp * rr / (pp + rr)
        }
    };
    let prec = |p: &[Vec<String>], g: &[Vec<String>]| match (p.is_empty(), g.is_empty()) {
        (true, true) => 1.0,
        (true, _) | (_, true) => 0.0,
        _ => inter(p, g).len() as f64 / p.len() as f64,
    };
    (1..=4)
        .map(|n| {
            let (ss, cs, rs) = (set(s, n), set(c, n), set(r, n));
            (f1(&minus(&cs, &ss), &minus(&rs, &ss)) + f1(&inter(&cs, &ss), &inter(&rs, &ss)) + prec(&minus(&ss, &cs), &minus(&ss, &rs))) / 3.0
        })
        .sum::<f64>()
        / 4.0
}

/// METEOR for sentences without repeated tokens, where the alignment is forced.
fn meteor_oracle_unique(c: &[String], r: &[String]) -> f64 {
    let pairs: Vec<(usize, usize)> = c.iter().enumerate().filter_map(|(i, w)| r.iter().position(|x| x == w).map(|j| (i, j))).collect();
    let m = pairs.len();
    if m == 0 {
        return 0.0;
    }
    let chunks = 1 + pairs.windows(2).filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1)).count();
    let (p, rc) = (m as f64 / c.len() as f64, m as f64 / r.len() as f64);
    let fmean = 10.0 * p * rc / (rc + 9.0 * p);
    fmean * (1.0 - 0.5 * (chunks as f64 / m as f64).powi(3))
}

fn metric_sanity() -> Outcome {
    let r = toks("returns the current zone offset of this clock");
    ensure!(bleu4(&r, &r) == 1.0, "BLEU-4 identity");
    ensure!(gleu(&toks("returns the old offset"), &r, &r) == 1.0, "GLEU identity");
    let s = toks("returns the offset");
    ensure!(sari(&s, &s, &s).unwrap() == 1.0, "SARI no-edit fixed point");

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let alpha = ["a", "b", "c", "d", "e"];
    let sent = |rng: &mut ChaCha8Rng| (0..rng.gen_range(1..9)).map(|_| alpha.choose(rng).unwrap().to_string()).collect::<Vec<_>>();
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let (s, c, r) = (sent(&mut rng), sent(&mut rng), sent(&mut rng));
        for (got, want, what) in [
            (bleu4(&c, &r), bleu_oracle(&c, &r, None), "bleu"),
            (gleu(&s, &c, &r), bleu_oracle(&c, &r, Some(&s)), "gleu"),
            (sari(&s, &c, &r).unwrap(), sari_oracle(&s, &c, &r), "sari"),
        ] {
            let d = (got - want).abs();
            ensure!(d < 1e-9, "{what} {s:?} {c:?} {r:?}: {got} vs {want}");
            worst = worst.max(d);
        }
    }
    let words: Vec<String> = (0..12).map(|i| format!("w{i}")).collect();
    let ident = |w: &str| w.to_string();
    for _ in 0..300 {
        let mut c = words.clone();
        c.shuffle(&mut rng);
        c.truncate(rng.gen_range(1..10));
        let mut r = words.clone();
        r.shuffle(&mut rng);
        r.truncate(rng.gen_range(1..10));
        let d = (meteor(&c, &r, &ident) - meteor_oracle_unique(&c, &r)).abs();
        ensure!(d < 1e-9, "meteor {c:?} {r:?}");
        worst = worst.max(d);
    }
    let stemmed = meteor(&toks("checks the address"), &toks("check the address"), &stem);
    ensure!((stemmed - (1.0 - 1.0 / 54.0)).abs() < 1e-9, "stemmed meteor {stemmed}");
    Ok(format!("max oracle gap {worst:.1e}"))
}

// 4 ------------------------------------------------------------------------

fn grad_corpus() -> Corpus {
    let case = |id: &str, comment: &str, old: &str, new: &str, label| CciCase::new(id, CommentType::Return, comment, old, new).with_label(label);
    Corpus::new(vec![
        case("a", "@return the converted DBObject", "DBObject toDb(Object o) { return o; }", "Document toDb(Object o) { return o; }", Label::Inconsistent),
        case("b", "Returns the size of the list.", "int size() { return n; }", "int size() { log(n); return n; }", Label::Consistent),
        case("c", "@param instant the instant to use", "void set(Instant instant) {}", "void set(Partial partial) {}", Label::Inconsistent),
    ])
    .unwrap()
}

fn gradient_check_criterion() -> Outcome {
    let t = Instant::now();
    let corpus = grad_corpus();
    let mut total = 0;
    let mut worst: f64 = 0.0;
    for mode in [SimilarityMode::Unconditioned, SimilarityMode::LabelConditioned] {
        let config = DetectorConfig {
            embed_dim: 8,
            gru_hidden: 6,
            attention_heads: 2,
            vocab_size: 64,
            similarity: mode,
            ..DetectorConfig::default()
        };
        let model = DetectorModel::initialize(&corpus, &config).map_err(|e| e.to_string())?;
        let batch: Vec<EncodedCase> = corpus.cases.iter().map(|c| model.encode(c).unwrap()).collect();
        let report = gradient_check(&model.params, &batch, &config, 3, 1e-5, 11).map_err(|e| e.to_string())?;
        ensure!(report.checks.len() >= 100, "{mode:?}: only {} coordinates", report.checks.len());
        ensure!(report.tensors_covered().len() == model.params.layout().len(), "{mode:?}: tensors missed");
        ensure!(report.max_rel_err < 1e-4, "{mode:?}: max rel err {:.3e}", report.max_rel_err);
        total += report.checks.len();
        worst = worst.max(report.max_rel_err);
    }
    let el = t.elapsed();
    ensure!(el < Duration::from_secs(120), "took {el:?}");
    Ok(format!("{total} coords, max rel err {worst:.2e}, {:.1}s", el.as_secs_f64()))
}

// 5 ------------------------------------------------------------------------

fn loss_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let eps = 1e-7;
    let mut min_loss = f64::INFINITY;
    for i in 0..10_000 {
        let n = rng.gen_range(1..9);
        let d = rng.gen_range(1..6);
        let probs: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let labels: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_bool(0.5) as u8)).collect();
        let vecs = |rng: &mut ChaCha8Rng| (0..n).map(|_| (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect::<Vec<f64>>()).collect::<Vec<_>>();
        let (cs, ms) = (vecs(&mut rng), vecs(&mut rng));
        if i < 1000 {
            let bce = probs
                .iter()
                .zip(&labels)
                .map(|(p, y)| {
                    let p = p.clamp(eps, 1.0 - eps);
                    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
                })
                .sum::<f64>()
                / n as f64;
            let l0 = loss(&probs, &labels, &cs, &ms, 0.0, eps).map_err(|e| e.to_string())?;
            ensure!((l0 - bce).abs() < 1e-12, "lambda=0: {l0} vs {bce}");
        }
        let l1 = loss(&probs, &labels, &cs, &ms, 1.0, eps).map_err(|e| e.to_string())?;
        ensure!(l1 >= 0.0, "negative loss {l1}");
        min_loss = min_loss.min(l1);
    }
    Ok(format!("10000 batches, min loss {min_loss:.3e}"))
}

// 6 ------------------------------------------------------------------------

fn learnability() -> Outcome {
    let t = Instant::now();
    let corpus = separable_corpus(200, 42);
    let config = separable_training_config();
    ensure!(config.epochs <= 10, "{} epochs", config.epochs);
    let (tr, va, te) = (corpus.split(Split::Train), corpus.split(Split::Valid), corpus.split(Split::Test));
    let init = DetectorModel::initialize(&tr, &config).map_err(|e| e.to_string())?;
    let (model, _) = train(&init, &tr, Some(&va), &config).map_err(|e| e.to_string())?;
    let f1 = evaluate(&model, &te).map_err(|e| e.to_string())?.metrics.f1;
    let el = t.elapsed();
    ensure!(f1 >= 0.95, "held-out F1 {f1:.4}");
    ensure!(el < Duration::from_secs(300), "took {el:?}");
    Ok(format!("held-out F1 {f1:.4} on {} cases, {} epochs, {:.1}s", te.len(), config.epochs, el.as_secs_f64()))
}

// 7 ------------------------------------------------------------------------

const TEACHER_REPLY: &str = r#"[{"old_comment": "Returns the width of this box.", "new_comment": "Returns the negated width.",
 "old_code": "public int getWidth() { return this.width; }", "new_code": "public int getWidth() { return negate(this.width); }"},
 {"old_comment": "@return the label of the node", "new_comment": "@return the label",
 "old_code": "public String getLabel() { return this.label; }", "new_code": "public String getLabel() { log.trace(\"label\"); return this.label; }"}]"#;

fn enhancement_loop() -> Outcome {
    let d0 = separable_corpus(60, 7).split(Split::Train);
    let dc = DetectorConfig {
        embed_dim: 8,
        gru_hidden: 8,
        attention_heads: 2,
        epochs: 1,
        ..DetectorConfig::default()
    };
    let init = DetectorModel::initialize(&d0, &dc).map_err(|e| e.to_string())?;
    let teacher = StubBackend::fixed("teacher", TEACHER_REPLY);
    let cfg = EnhanceConfig {
        max_iterations: 3,
        convergence_delta: -1.0,
        sampling_rate: 0.5,
        ..EnhanceConfig::default()
    };
    let (out, hist) = iterative_enhance(&init, &d0, &teacher, &dc, &cfg).map_err(|e| e.to_string())?;
    let with_errors = hist.iterations.iter().filter(|r| r.misclassified > 0).count();
    ensure!(with_errors > 0, "no iteration had errors; growth untested");
    let sizes: Vec<usize> = hist.iterations.iter().map(|r| r.corpus_size).chain([out.len()]).collect();
    for (i, rec) in hist.iterations.iter().enumerate() {
        if rec.misclassified > 0 {
            ensure!(sizes[i + 1] > sizes[i], "iteration {i}: {} -> {}", sizes[i], sizes[i + 1]);
        }
    }
    let ids = d0.ids();
    for c in out.cases.iter().filter(|c| c.synthetic) {
        let parent = c.parent_id.as_deref().unwrap_or("");
        ensure!(ids.contains(parent), "{} has parent {parent} outside D0", c.id);
        ensure!(!d0.get(parent).unwrap().synthetic, "synthetic parent");
    }
    let again = iterative_enhance(&init, &d0, &teacher, &dc, &cfg).map_err(|e| e.to_string())?;
    ensure!(again.0 == out && again.1 == hist, "loop not deterministic");
    let zero = EnhanceConfig { max_iterations: 0, ..cfg };
    let (same, _) = iterative_enhance(&init, &d0, &teacher, &dc, &zero).map_err(|e| e.to_string())?;
    ensure!(same == d0, "max_iterations=0 changed D0");
    Ok(format!("sizes {sizes:?}"))
}

// 8 ------------------------------------------------------------------------

fn voting_truth_table() -> Outcome {
    let all = [Verdict::Inconsistent, Verdict::Consistent, Verdict::Unparseable];
    let mut rows = 0;
    for a in all {
        for b in all {
            for c in all {
                let v = [a, b, c];
                let inc = v.iter().filter(|x| **x == Verdict::Inconsistent).count();
                let (decision, unanimous) = majority_vote(&v).map_err(|e| e.to_string())?;
                ensure!((decision == Decision::Keep) == (inc >= 2), "{v:?} -> {decision:?}");
                ensure!(unanimous == (inc == 3), "{v:?} unanimous={unanimous}");
                rows += 1;
            }
        }
    }
    ensure!(majority_vote(&all[..2]).is_err(), "arity 2 accepted");

    // The same table through the filter with scripted voters.
    let shots = ShotSet::new(serde_json::from_str::<Vec<ShotExample>>(BUNDLED_SHOTS).unwrap()).unwrap();
    let mut cases = Vec::new();
    for bits in 0..8 {
        cases.push(
            CciCase::new(format!("p{bits}"), CommentType::Return, format!("@return case {bits}"), "int f() { return 1; }", "int f() { return 2; }")
                .with_label(Label::Inconsistent),
        );
    }
    cases.push(CciCase::new("neg", CommentType::Summary, "Does it.", "void f() {}", "void f() { g(); }").with_label(Label::Consistent));
    let corpus = Corpus::new(cases).unwrap();
    let voter = |bit: u32| {
        StubBackend::new(format!("v{bit}"), move |r| {
            let text = &r.messages.last().unwrap().content;
            let idx: u32 = text.rsplit("@return case ").next().unwrap().chars().next().unwrap().to_digit(10).unwrap();
            Ok(if idx >> bit & 1 == 1 { "INCONSISTENT".into() } else { "consistent.".into() })
        })
    };
    let vs = [voter(0), voter(1), voter(2)];
    let refs: Vec<&dyn ChatBackend> = vs.iter().map(|v| v as &dyn ChatBackend).collect();
    let (out, records) = semantic_filter(&corpus, &refs, &shots).map_err(|e| e.to_string())?;
    for (bits, rec) in records.iter().enumerate() {
        let inc = (bits as u32).count_ones();
        ensure!((rec.decision == Decision::Keep) == (inc >= 2), "filter case {bits}");
        ensure!(rec.unanimous == (inc == 3), "filter unanimous {bits}");
    }
    ensure!(out.len() == 4 + 1, "kept {}", out.len());
    Ok(format!("{rows} verdict rows + 8 filtered cases"))
}

// 9 ------------------------------------------------------------------------

fn kto_lora() -> Outcome {
    let p = KtoParams::default();
    for z0 in [0.0, 0.3, 2.5] {
        let v = kto_value(z0, z0, true, &p);
        ensure!(v == 0.5, "v(z0) = {v}");
    }
    let mut prev = f64::INFINITY;
    for i in 0..200 {
        let r = -10.0 + 0.1 * i as f64;
        let l = kto_loss(&[KtoSample { r, desirable: true }], 0.2, &p).map_err(|e| e.to_string())?;
        ensure!(l < prev, "kto_loss not decreasing at r={r}");
        prev = l;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for (d, k, r) in [(4, 6, 2), (8, 8, 1), (16, 5, 5), (3, 3, 3)] {
        let rand_m = |rows, cols, rng: &mut ChaCha8Rng| Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let (w0, b, a) = (rand_m(d, k, &mut rng), rand_m(d, r, &mut rng), rand_m(r, k, &mut rng));
        let x: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let unmerged = lora_forward(&w0, &a, &b, &x).map_err(|e| e.to_string())?;
        let merged = lora_merge(&w0, &a, &b).map_err(|e| e.to_string())?.matvec(&x).map_err(|e| e.to_string())?;
        for (u, m) in unmerged.iter().zip(&merged) {
            worst = worst.max((u - m).abs());
        }
        ensure!(lora_param_count(d, k, r) == a.data.len() + b.data.len(), "param count for {d}x{k} r={r}");
    }
    ensure!(worst <= 1e-12, "merge gap {worst:e}");
    Ok(format!("merge gap {worst:.1e}"))
}

// 10 -----------------------------------------------------------------------

fn dedup_criterion() -> Outcome {
    const UNIQUE: usize = 1000;
    const PLANTED: usize = 337;
    let base = |i: usize| {
        CciCase::new(
            format!("u{i}"),
            CommentType::Summary,
            format!("Computes value {i}."),
            format!("int f{i}() {{ return {i}; }}"),
            format!("int f{i}() {{ return {}; }}", i + 1),
        )
        .with_new_comment(format!("Computes value {}.", i + 1))
        .with_label(Label::Consistent)
    };
    let mut cases: Vec<CciCase> = (0..UNIQUE).map(base).collect();
    let mut expect_retained = Vec::new();
    for j in 0..PLANTED {
        let src = j % 300;
        let mut dup = base(src);
        dup.id = format!("d{j}");
        dup.old_code = dup.old_code.replace(' ', "\t ");
        dup.old_comment = format!("  {}\n", dup.old_comment);
        if j < 300 && j % 2 == 0 {
            dup.label = Some(Label::Inconsistent);
            expect_retained.push(dup.id.clone());
        }
        cases.push(dup);
    }
    let corpus = Corpus::new(cases).unwrap();
    let (once, report) = deduplicate(&corpus).map_err(|e| e.to_string())?;
    ensure!(report.removed_ids.len() == PLANTED, "removed {}", report.removed_ids.len());
    ensure!(once.len() + report.removed_ids.len() == corpus.len(), "size accounting");
    ensure!(report.retained_by_true_label == expect_retained.len(), "true-label groups {}", report.retained_by_true_label);
    for id in &expect_retained {
        ensure!(once.get(id).is_some(), "inconsistent duplicate {id} not retained");
    }
    let (twice, r2) = deduplicate(&once).map_err(|e| e.to_string())?;
    ensure!(twice == once && r2.removed_ids.is_empty(), "not idempotent");
    Ok(format!("{PLANTED} removed, {} kept by label", expect_retained.len()))
}

// 11 -----------------------------------------------------------------------

struct FlagEvery(usize);

impl Detect for FlagEvery {
    fn name(&self) -> &str {
        "flag-every"
    }
    fn detect(&self, case: &CciCase) -> Result<Prediction, DetectorError> {
        let i: usize = case.id.trim_start_matches("syn-").parse().unwrap();
        Ok(Prediction::from_probability(case.id.clone(), if i % self.0 == 0 { 0.9 } else { 0.1 }))
    }
}

fn routing() -> Outcome {
    let corpus = separable_corpus(100, 11);
    let detector = FlagEvery(10 / 3);
    let k = corpus.cases.iter().filter(|c| detector.detect(c).unwrap().verdict.is_inconsistent()).count();
    let latency = Duration::from_millis(4);
    let fixer = StubBackend::fixed("fixer", "/** Returns the negated value. */").with_latency(latency);
    let gated = solve(&corpus, Some(&detector), &fixer, &MonotonicClock::new());
    ensure!(fixer.calls() == k && gated.report.fixer_calls == k, "{} fixer calls for {k} flagged", fixer.calls());
    ensure!(gated.report.n == 100 && gated.report.flagged == k, "report n={} flagged={}", gated.report.n, gated.report.flagged);
    let mono_fixer = StubBackend::fixed("fixer", "/** Returns the negated value. */").with_latency(latency);
    let mono = solve(&corpus, None, &mono_fixer, &MonotonicClock::new());
    ensure!(mono_fixer.calls() == 100, "monolithic calls {}", mono_fixer.calls());
    let (g, m) = (gated.report.mean_case_time_s, mono.report.mean_case_time_s);
    ensure!(g < m, "gated {g:.4}s not below monolithic {m:.4}s");
    Ok(format!("k={k}, gated {:.2} ms/case < monolithic {:.2} ms/case", g * 1e3, m * 1e3))
}

// 12 -----------------------------------------------------------------------

fn raw_pipeline_corpus() -> Corpus {
    let mut cases: Vec<CciCase> = separable_corpus(80, 12)
        .cases
        .into_iter()
        .map(|c| {
            let new = if c.is_positive() { format!("{} The result is transformed.", c.old_comment) } else { c.old_comment.clone() };
            c.with_new_comment(new)
        })
        .collect();
    let mut dup = cases[0].clone();
    dup.id = "dup-0".into();
    dup.old_code = dup.old_code.replace(' ', "\t");
    cases.push(dup);
    cases.push(
        CciCase::new("typo-0", CommentType::Summary, "Recieves the next packet.", "Packet next() { return q.poll(); }", "Packet next() { return q.take(); }")
            .with_new_comment("Receives the next packet.")
            .with_label(Label::Inconsistent)
            .with_split(Split::Train),
    );
    Corpus::new(cases).unwrap()
}

const PIPELINE_TOML: &str = r#"
seed = 42

[detector]
embed_dim = 8
gru_hidden = 8
attention_heads = 2
epochs = 2
batch_size = 8

[enhance]
max_iterations = 2
sampling_rate = 0.5

[[voters]]
name = "v1"
kind = "replay"
replay_path = "voters.transcript.jsonl"

[[voters]]
name = "v2"
kind = "replay"
replay_path = "voters.transcript.jsonl"

[[voters]]
name = "v3"
kind = "replay"
replay_path = "voters.transcript.jsonl"

[fixer]
name = "fixer"
kind = "stub"
reply = "/** Returns the transformed value. */"
"#;

fn voter_stub(name: &str, transcript: Arc<Transcript>) -> StubBackend {
    let salt = name.bytes().map(u32::from).sum::<u32>();
    StubBackend::new(name, move |r| {
        let text = &r.messages.last().unwrap().content;
        let mut h = text.bytes().fold(salt, |a, b| a.wrapping_mul(31).wrapping_add(u32::from(b)));
        h ^= h >> 16;
        h = h.wrapping_mul(0x85eb_ca6b);
        h ^= h >> 13;
        Ok(if h % 4 != 0 { "INCONSISTENT".into() } else { "CONSISTENT".into() })
    })
    .with_transcript(transcript)
}

fn scrub(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(m) => {
            m.retain(|k, _| !(k.ends_with("time_s") || k.ends_with("times_s") || k == "latency_s" || k == "timestamp"));
            m.values_mut().for_each(scrub);
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(scrub),
        _ => {}
    }
}

fn run_pipeline(dir: &Path, setup: &Path) -> Result<(), String> {
    for f in ["raw.jsonl", "voters.transcript.jsonl"] {
        fs::copy(setup.join(f), dir.join(f)).map_err(|e| e.to_string())?;
    }
    let teacher = format!("\n[teacher]\nname = \"teacher\"\nkind = \"stub\"\nreply = '''{TEACHER_REPLY}'''\n");
    fs::write(dir.join("cfg.toml"), format!("{PIPELINE_TOML}{teacher}")).map_err(|e| e.to_string())?;
    let p = |n: &str| dir.join(n).display().to_string();
    let cfg = p("cfg.toml");
    let steps: Vec<Vec<String>> = [
        vec!["dedup", "--in", "raw.jsonl", "--out", "dedup.jsonl", "--report", "dedup.json"],
        vec!["filter-syntactic", "--in", "dedup.jsonl", "--out", "syn.jsonl", "--report", "syn.json"],
        vec!["filter-semantic", "--in", "syn.jsonl", "--out", "sem.jsonl", "--votes", "votes.jsonl"],
        vec!["train", "--in", "sem.jsonl", "--model", "model.json", "--history", "train.json"],
        vec!["enhance", "--in", "sem.jsonl", "--out", "enhanced.jsonl", "--history", "enhance.json"],
        vec!["train", "--in", "enhanced.jsonl", "--model", "model2.json", "--history", "train2.json"],
        vec!["solve", "--in", "sem.jsonl", "--model", "model2.json", "--out", "solved.jsonl", "--report", "timing.json"],
    ]
    .iter()
    .map(|s| {
        s.iter()
            .enumerate()
            .map(|(i, a)| if i > 0 && !a.starts_with("--") { p(a) } else { a.to_string() })
            .collect()
    })
    .collect();
    for step in steps {
        let mut argv = vec!["cci".to_string(), "--config".into(), cfg.clone()];
        argv.extend(step.iter().cloned());
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(argv, &mut out, &mut err);
        ensure!(code == 0, "`{}` exited {code}: {}", step[0], String::from_utf8_lossy(&err));
    }
    Ok(())
}

fn offline_determinism() -> Outcome {
    let t = Instant::now();
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let setup = root.path().join("setup");
    fs::create_dir_all(&setup).unwrap();
    let raw = raw_pipeline_corpus();
    save_corpus(&setup.join("raw.jsonl"), &raw).map_err(|e| e.to_string())?;

    // Record voter replies for exactly the requests the pipeline will make.
    let (deduped, _) = deduplicate(&raw).map_err(|e| e.to_string())?;
    let (syn, _) = apply_syntactic_filters(&deduped);
    let transcript = Transcript::append_to(&setup.join("voters.transcript.jsonl")).map_err(|e| e.to_string())?;
    let voters: Vec<StubBackend> = ["v1", "v2", "v3"].iter().map(|n| voter_stub(n, transcript.clone())).collect();
    let refs: Vec<&dyn ChatBackend> = voters.iter().map(|v| v as &dyn ChatBackend).collect();
    let shots = ShotSet::new(serde_json::from_str(BUNDLED_SHOTS).unwrap()).unwrap();
    semantic_filter(&syn, &refs, &shots).map_err(|e| e.to_string())?;
    drop(voters);
    drop(transcript);

    let runs = [root.path().join("run1"), root.path().join("run2")];
    for dir in &runs {
        fs::create_dir_all(dir).unwrap();
        run_pipeline(dir, &setup)?;
    }
    let votes = fs::read_to_string(runs[0].join("votes.jsonl")).unwrap();
    ensure!(!votes.contains("\"error\""), "replay missed a request");
    let sem = load_corpus(&runs[0].join("sem.jsonl"), false).map_err(|e| e.to_string())?.corpus;
    let syn_out = load_corpus(&runs[0].join("syn.jsonl"), false).map_err(|e| e.to_string())?.corpus;
    ensure!(syn_out.len() < raw.len() && sem.len() < syn_out.len(), "a filter removed nothing");
    let enhanced = load_corpus(&runs[0].join("enhanced.jsonl"), false).map_err(|e| e.to_string())?.corpus;

    let mut names: Vec<String> = fs::read_dir(&runs[0]).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    let mut compared = 0;
    let mut scrubbed = 0;
    for name in &names {
        let (a, b) = (fs::read(runs[0].join(name)).unwrap(), fs::read(runs[1].join(name)).map_err(|_| format!("{name} missing in run 2"))?);
        if a == b {
            compared += 1;
            continue;
        }
        // Only wall-clock fields may differ.
        let parse = |bytes: &[u8]| -> Vec<serde_json::Value> {
            let text = String::from_utf8_lossy(bytes);
            match serde_json::from_str::<serde_json::Value>(&text) {
                Ok(v) => vec![v],
                Err(_) => text.lines().filter_map(|l| serde_json::from_str(l).ok()).collect(),
            }
        };
        let (mut va, mut vb) = (parse(&a), parse(&b));
        va.iter_mut().for_each(scrub);
        vb.iter_mut().for_each(scrub);
        ensure!(!va.is_empty() && va == vb, "{name} differs beyond timing fields");
        scrubbed += 1;
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(runs[0].join("timing.json")).unwrap()).unwrap();
    let flagged = report["flagged"].as_u64().unwrap_or(0);
    ensure!(report["fixer_calls"].as_u64() == Some(flagged), "fixer calls != flagged");
    Ok(format!(
        "{} files: {compared} byte-identical, {scrubbed} equal modulo timing; {} -> {} -> {} -> {} cases, {:.1}s",
        names.len(),
        raw.len(),
        syn_out.len(),
        sem.len(),
        enhanced.len(),
        t.elapsed().as_secs_f64()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("filter-rule reproduction", filter_rules),
        ("edit-script round trip", edit_script_round_trip),
        ("metric sanity and oracles", metric_sanity),
        ("gradient check", gradient_check_criterion),
        ("loss identities", loss_identities),
        ("detector learnability", learnability),
        ("enhancement loop", enhancement_loop),
        ("voting truth table", voting_truth_table),
        ("KTO and LoRA math", kto_lora),
        ("dedup", dedup_criterion),
        ("end-to-end routing", routing),
        ("offline determinism", offline_determinism),
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if filter.as_deref().is_some_and(|pat| !name.contains(pat)) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
