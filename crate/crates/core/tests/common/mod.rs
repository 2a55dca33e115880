#![allow(dead_code)]

use std::collections::HashSet;

use codeorigin_core::corpus::{balanced_plan, Label, Language};
use codeorigin_core::preprocess::{strip_comments_with, StripOptions};
use ndarray::{Array1, Array2};
use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tree_sitter::{Node, Parser};

/// Contrastive loss by direct enumeration of anchors, positives and the
/// denominator set, in f64 without any stabilization.
pub fn supcon_brute(z: &Array2<f64>, labels: &[usize], tau: f64) -> Option<f64> {
    let n = z.nrows();
    let sim = |i: usize, j: usize| -> f64 { (0..z.ncols()).map(|k| z[[i, k]] * z[[j, k]]).sum::<f64>() / tau };
    let mut total = 0.0;
    let mut any = false;
    for i in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        any = true;
        let mut denom = 0.0;
        for a in 0..n {
            if a != i {
                denom += sim(i, a).exp();
            }
        }
        let mut inner = 0.0;
        for &p in &positives {
            inner += (sim(i, p).exp() / denom).ln();
        }
        total += -inner / positives.len() as f64;
    }
    any.then_some(total)
}

pub fn random_unit_rows(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut z: Array2<f64> = Array2::from_shape_fn((n, dim), |_| rng.gen_range(-1.0..1.0));
    for mut row in z.rows_mut() {
        let norm = row.dot(&row).sqrt().max(1e-9);
        row.mapv_inplace(|v| v / norm);
    }
    z
}

/// Labels for an `n`-row batch with at least one positive pair.
pub fn random_labels(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    loop {
        let l: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let ones = l.iter().filter(|&&v| v == 1).count();
        if ones >= 2 || n - ones >= 2 {
            return l;
        }
    }
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn numeric_grad(x: &Array2<f64>, eps: f64, mut f: impl FnMut(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut g = Array2::zeros(x.raw_dim());
    let mut probe = x.clone();
    for idx in ndarray::indices(x.raw_dim()) {
        let orig = probe[idx];
        probe[idx] = orig + eps;
        let up = f(&probe);
        probe[idx] = orig - eps;
        let down = f(&probe);
        probe[idx] = orig;
        g[idx] = (up - down) / (2.0 * eps);
    }
    g
}

pub fn numeric_grad_1d(x: &Array1<f64>, eps: f64, mut f: impl FnMut(&Array1<f64>) -> f64) -> Array1<f64> {
    let as2 = x.clone().insert_axis(ndarray::Axis(0));
    numeric_grad(&as2, eps, |m| f(&m.row(0).to_owned())).row(0).to_owned()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute difference for tiny gradients.
pub fn rel_error<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    let (mut d, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.into_iter().zip(b) {
        d += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    }
    let scale = na.sqrt().max(nb.sqrt());
    if scale < 1e-8 {
        d.sqrt()
    } else {
        d.sqrt() / scale
    }
}

/// Exact metrics by counting each (gold, pred) combination separately.
pub struct BruteMetrics {
    pub accuracy: Ratio<i64>,
    pub precision: [Ratio<i64>; 2],
    pub recall: [Ratio<i64>; 2],
    pub f1: [Ratio<i64>; 2],
    pub macro_f1: Ratio<i64>,
    pub macro_precision: Ratio<i64>,
    pub macro_recall: Ratio<i64>,
}

pub fn metrics_brute(preds: &[Label], gold: &[Label]) -> BruteMetrics {
    let frac = |a: i64, b: i64| if b == 0 { Ratio::from_integer(0) } else { Ratio::new(a, b) };
    let correct = preds.iter().zip(gold).filter(|(p, g)| p == g).count() as i64;
    let mut precision = [Ratio::from_integer(0); 2];
    let mut recall = precision;
    let mut f1 = precision;
    for c in Label::ALL {
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        for (p, g) in preds.iter().zip(gold) {
            match (*p == c, *g == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let k = c.index();
        precision[k] = frac(tp, tp + fp);
        recall[k] = frac(tp, tp + fn_);
        let s = precision[k] + recall[k];
        f1[k] = if s == Ratio::from_integer(0) {
            s
        } else {
            Ratio::from_integer(2) * precision[k] * recall[k] / s
        };
    }
    let half = Ratio::new(1, 2);
    BruteMetrics {
        accuracy: frac(correct, preds.len() as i64),
        macro_f1: (f1[0] + f1[1]) * half,
        macro_precision: (precision[0] + precision[1]) * half,
        macro_recall: (recall[0] + recall[1]) * half,
        precision,
        recall,
        f1,
    }
}

pub fn random_labels_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<Label> {
    let bias: f64 = rng.gen_range(0.0..1.0);
    (0..n)
        .map(|_| if rng.gen_bool(bias) { Label::Ai } else { Label::Human })
        .collect()
}

/// Checks one balanced plan; returns a description of the first violation.
pub fn check_balanced(n0: usize, n1: usize, b: usize, seed: u64) -> Result<(), String> {
    let items: Vec<(String, Label)> = (0..n0)
        .map(|i| (format!("h{i}"), Label::Human))
        .chain((0..n1).map(|i| (format!("a{i}"), Label::Ai)))
        .collect();
    let plan = balanced_plan(items.iter().map(|(id, l)| (id.as_str(), *l)), b, seed).map_err(|e| e.to_string())?;
    let expected = 2 * n0.min(n1) / b;
    if plan.batches.len() != expected {
        return Err(format!("({n0},{n1},{b}): {} batches, expected {expected}", plan.batches.len()));
    }
    let mut seen = HashSet::new();
    for (k, batch) in plan.batches.iter().enumerate() {
        let humans = batch.iter().filter(|id| id.starts_with('h')).count();
        let ais = batch.iter().filter(|id| id.starts_with('a')).count();
        if humans != b / 2 || ais != b / 2 {
            return Err(format!("({n0},{n1},{b}) batch {k}: {humans} human, {ais} ai"));
        }
        for id in batch {
            if !seen.insert(id.clone()) {
                return Err(format!("({n0},{n1},{b}): {id} repeated within the epoch"));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Generated source files with comments in awkward places.

const TRICKY_TEXT: [&str; 10] = [
    "plain",
    "has // slashes",
    "has /* star */ inside",
    "hash # sign",
    "url http://x.y/z",
    "quote \\\" escaped",
    "*/ closer",
    "tab\\tand\\nnewline",
    "",
    "a\\\\b",
];
const COMMENT_TEXT: [&str; 7] = [
    "note",
    "TODO: fix \"this\"",
    "contains 'quotes'",
    "nested /* not really",
    "code: x = y + 1;",
    "http://example.com",
    "",
];

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).unwrap()
}

fn java_file(rng: &mut ChaCha8Rng, k: usize) -> String {
    let mut s = String::new();
    if rng.gen_bool(0.5) {
        s.push_str(&format!("/* header {} */\n", pick(rng, &COMMENT_TEXT)));
    }
    s.push_str("import java.util.List;\n\n");
    if rng.gen_bool(0.6) {
        s.push_str(&format!("/**\n * Doc {}\n * @author x\n */\n", pick(rng, &COMMENT_TEXT)));
    }
    s.push_str(&format!("public class F{k} {{\n"));
    for m in 0..rng.gen_range(1..4) {
        if rng.gen_bool(0.4) {
            s.push_str(&format!("    // method {m} {}\n", pick(rng, &COMMENT_TEXT)));
        }
        s.push_str(&format!("    static int m{m}(int x) {{\n"));
        for i in 0..rng.gen_range(1..7) {
            let stmt = match rng.gen_range(0..7) {
                0 => format!("int v{i} = x + {};", rng.gen_range(0..100)),
                1 => format!("String s{i} = \"{}\";", pick(rng, &TRICKY_TEXT)),
                2 => format!("char c{i} = '{}';", pick(rng, &["/", "\\\"", "\\'", "#", "*"])),
                3 => format!("int/*{}*/w{i} = x/* mid */+ 1;", pick(rng, &["", "x", "y z"])),
                4 => format!("x = x {} {};", pick(rng, &["+", "-", "*", "/"]), rng.gen_range(1..9)),
                5 => format!("if (x > {i}) {{ x--; }} /* trailing {} */", pick(rng, &COMMENT_TEXT)),
                _ => format!("x = x / 2 /* divide */ / 1;"),
            };
            s.push_str("        ");
            s.push_str(&stmt);
            if rng.gen_bool(0.35) {
                s.push_str(&format!(" // {}", pick(rng, &COMMENT_TEXT)));
            }
            s.push('\n');
            if rng.gen_bool(0.15) {
                s.push_str("        /*\n         * multi\n         * line\n         */\n");
            }
        }
        s.push_str("        return x;\n    }\n");
    }
    s.push_str("}\n");
    s
}

fn python_file(rng: &mut ChaCha8Rng, k: usize) -> String {
    let mut s = String::new();
    if rng.gen_bool(0.5) {
        s.push_str("#!/usr/bin/env python3\n");
    }
    if rng.gen_bool(0.5) {
        s.push_str("\"\"\"Module docstring.\"\"\"\n");
    }
    s.push_str("import os  # for paths\n\n");
    for f in 0..rng.gen_range(1..4) {
        if rng.gen_bool(0.4) {
            s.push_str(&format!("# function {f} {}\n", pick(rng, &COMMENT_TEXT)));
        }
        s.push_str(&format!("def f{k}_{f}(x):\n"));
        if rng.gen_bool(0.5) {
            s.push_str(&format!("    \"\"\"Doc {}.\"\"\"\n", pick(rng, &["one", "two # not comment", "three"])));
        }
        for i in 0..rng.gen_range(1..7) {
            let stmt = match rng.gen_range(0..7) {
                0 => format!("v{i} = x + {}", rng.gen_range(0..100)),
                1 => format!("s{i} = \"{}\"", pick(rng, &TRICKY_TEXT)),
                2 => format!("s{i} = '{}'", pick(rng, &["# not", "it\\'s", "//", ""])),
                3 => format!("t{i} = \"\"\"line one # kept\nline two\"\"\""),
                4 => format!("f{i} = f\"{{x}} # {i}\""),
                5 => format!("if x > {i}:\n        # inner comment\n        x -= 1"),
                _ => format!("x = x * {}", rng.gen_range(1..5)),
            };
            s.push_str("    ");
            s.push_str(&stmt);
            if rng.gen_bool(0.35) {
                s.push_str(&format!("  # {}", pick(rng, &COMMENT_TEXT)));
            }
            s.push('\n');
            if rng.gen_bool(0.15) {
                s.push_str("    # standalone\n");
            }
        }
        s.push_str("    return x\n\n");
    }
    s
}

fn cpp_file(rng: &mut ChaCha8Rng, k: usize) -> String {
    let mut s = String::new();
    s.push_str("#include <vector> // containers\n");
    if rng.gen_bool(0.5) {
        s.push_str("#define LIMIT 10 /* bound */\n");
    }
    s.push('\n');
    for f in 0..rng.gen_range(1..4) {
        if rng.gen_bool(0.4) {
            s.push_str(&format!("/// function {f} {}\n", pick(rng, &COMMENT_TEXT)));
        }
        s.push_str(&format!("int f{k}_{f}(int x) {{\n"));
        for i in 0..rng.gen_range(1..7) {
            let stmt = match rng.gen_range(0..7) {
                0 => format!("int v{i} = x + {};", rng.gen_range(0..100)),
                1 => format!("const char* s{i} = \"{}\";", pick(rng, &TRICKY_TEXT)),
                2 => format!("char c{i} = '{}';", pick(rng, &["/", "\\\"", "\\'", "#", "*"])),
                3 => format!("const char* r{i} = R\"({})\";", pick(rng, &["a // b", "/* c */", "q\"q"])),
                4 => format!("x = x {} {};", pick(rng, &["+", "-", "*"]), rng.gen_range(1..9)),
                5 => format!("std::vector<int> w{i}/* init */{{1, 2}};"),
                _ => format!("x = x / 2 /* half */ / 1;"),
            };
            s.push_str("    ");
            s.push_str(&stmt);
            if rng.gen_bool(0.35) {
                s.push_str(&format!(" // {}", pick(rng, &COMMENT_TEXT)));
            }
            s.push('\n');
        }
        s.push_str("    return x;\n}\n\n");
    }
    s
}

/// `n` generated files cycling through Java, Python and C++.
pub fn code_corpus(n: usize, seed: u64) -> Vec<(String, Language)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| match k % 3 {
            0 => (java_file(&mut rng, k), Language::Java),
            1 => (python_file(&mut rng, k), Language::Python),
            _ => (cpp_file(&mut rng, k), Language::Cpp),
        })
        .collect()
}

fn parser(lang: Language) -> Parser {
    let grammar: tree_sitter::Language = match lang {
        Language::Java => tree_sitter_java::LANGUAGE.into(),
        Language::Python => tree_sitter_python::LANGUAGE.into(),
        Language::Cpp => tree_sitter_cpp::LANGUAGE.into(),
        Language::Other => panic!("no grammar"),
    };
    let mut p = Parser::new();
    p.set_language(&grammar).unwrap();
    p
}

fn is_comment(kind: &str) -> bool {
    matches!(kind, "comment" | "line_comment" | "block_comment")
}

fn is_string(kind: &str) -> bool {
    matches!(
        kind,
        "string_literal" | "character_literal" | "char_literal" | "raw_string_literal" | "string"
    )
}

struct Lexed {
    leaves: Vec<String>,
    strings: Vec<String>,
    comments: usize,
    has_error: bool,
}

fn lex(source: &str, lang: Language) -> Lexed {
    let tree = parser(lang).parse(source, None).unwrap();
    let mut out = Lexed {
        leaves: Vec::new(),
        strings: Vec::new(),
        comments: 0,
        has_error: tree.root_node().has_error(),
    };
    fn walk(node: Node, src: &[u8], out: &mut Lexed) {
        if is_comment(node.kind()) {
            out.comments += 1;
            return;
        }
        let text = || node.utf8_text(src).unwrap().to_string();
        if is_string(node.kind()) {
            out.strings.push(text());
        }
        if node.child_count() == 0 {
            let t = text();
            if !t.trim().is_empty() {
                out.leaves.push(t.trim().to_string());
            }
            return;
        }
        let mut c = node.walk();
        for child in node.children(&mut c) {
            walk(child, src, out);
        }
    }
    walk(tree.root_node(), source.as_bytes(), &mut out);
    out
}

/// Every property violation for one file: idempotence under the default
/// options, and token and literal preservation with docstrings kept.
pub fn preprocessor_violations(source: &str, lang: Language) -> Vec<String> {
    let mut v = Vec::new();
    let once = strip_comments_with(source, lang, StripOptions::default()).cleaned;
    let twice = strip_comments_with(&once, lang, StripOptions::default()).cleaned;
    if once != twice {
        v.push(format!("{lang:?}: not idempotent"));
    }
    let kept = strip_comments_with(source, lang, StripOptions { strip_docstrings: false }).cleaned;
    let before = lex(source, lang);
    let after = lex(&kept, lang);
    if before.has_error {
        v.push(format!("{lang:?}: generated file does not parse"));
    }
    if after.has_error && !before.has_error {
        v.push(format!("{lang:?}: stripped file does not parse"));
    }
    if before.leaves != after.leaves {
        let at = before.leaves.iter().zip(&after.leaves).position(|(a, b)| a != b);
        v.push(format!("{lang:?}: token sequence changed near {:?}", at.map(|i| &before.leaves[i])));
    }
    if before.strings != after.strings {
        v.push(format!("{lang:?}: string literals changed"));
    }
    if after.comments > 0 {
        v.push(format!("{lang:?}: {} comments survived", after.comments));
    }
    v
}
