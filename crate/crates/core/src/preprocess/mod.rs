//! Comment removal and whitespace normalization.
//!
//! | language | line       | block    | literals skipped                                   |
//! |----------|------------|----------|----------------------------------------------------|
//! | java     | `//`       | `/* */`  | `"…"`, `'…'`, text blocks `"""…"""`                |
//! | cpp      | `//` + `\` continuation | `/* */` | `"…"`, `'…'`, raw `R"d(…)d"`, digit separators |
//! | python   | `#`        | –        | `'…'`, `"…"`, triple-quoted, all prefixes (`r`, `b`, `f`, …) |
//! | other    | as cpp     | as cpp   | as cpp minus raw strings                           |
//!
//! Block comments never nest in any supported language. Python docstrings
//! are removed when [`StripOptions::strip_docstrings`] is set.

mod c_style;
mod python;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::Language;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StripOptions {
    pub strip_docstrings: bool,
}

impl Default for StripOptions {
    fn default() -> Self {
        StripOptions {
            strip_docstrings: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StripWarning {
    /// Language outside java/python/cpp; C-style rules were applied.
    UnsupportedLanguage,
    /// Block comment without terminator; stripped to end of input.
    UnterminatedBlockComment { offset: usize },
    /// String literal without terminator; the input is untouched from here on.
    UnterminatedString { offset: usize },
}

/// A byte range of the original that is absent from the cleaned text.
///
/// `filled` spans were replaced by a single space so that the tokens on
/// either side do not fuse (`a/**/b` becomes `a b`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovedSpan {
    pub start: usize,
    pub end: usize,
    pub filled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StripResult {
    pub cleaned: String,
    /// Sorted, disjoint.
    pub removed_spans: Vec<RemovedSpan>,
    pub language: Language,
    /// Bytes that belonged to comments or stripped docstrings.
    pub comment_bytes: usize,
    pub warnings: Vec<StripWarning>,
}

impl StripResult {
    pub fn degraded(&self) -> bool {
        self.warnings
            .iter()
            .any(|w| !matches!(w, StripWarning::UnsupportedLanguage))
    }
}

#[derive(Debug, Default)]
pub(crate) struct Scan {
    pub comments: Vec<Range<usize>>,
    pub warnings: Vec<StripWarning>,
}

pub fn strip_comments(source: &str, language: Language) -> StripResult {
    strip_comments_with(source, language, StripOptions::default())
}

pub fn strip_comments_with(source: &str, language: Language, options: StripOptions) -> StripResult {
    let mut scan = match language {
        Language::Java => c_style::scan(source, c_style::Dialect::Java),
        Language::Cpp => c_style::scan(source, c_style::Dialect::Cpp),
        Language::Python => python::scan(source, options.strip_docstrings),
        Language::Other => {
            log::warn!("no comment grammar for language `other`, using C-style rules");
            let mut s = c_style::scan(source, c_style::Dialect::Other);
            s.warnings.insert(0, StripWarning::UnsupportedLanguage);
            s
        }
    };
    scan.comments.retain(|r| !r.is_empty());
    let comment_bytes = scan.comments.iter().map(|r| r.len()).sum();
    let (rebuilt, removed_spans) = remove_spans(source, &scan.comments);
    StripResult {
        cleaned: normalize(&rebuilt),
        removed_spans,
        language,
        comment_bytes,
        warnings: scan.warnings,
    }
}

/// Deletes comment ranges line by line.
///
/// Lines left blank by a removal are dropped with their newline. Horizontal
/// whitespace that followed a comment at the start of a line's content is
/// dropped too, so indentation comes from the original line.
fn remove_spans(src: &str, comments: &[Range<usize>]) -> (String, Vec<RemovedSpan>) {
    let b = src.as_bytes();
    let n = b.len();
    let mut covered = vec![false; n];
    for r in comments {
        covered[r.clone()].iter_mut().for_each(|c| *c = true);
    }
    let in_comment = |i: usize| covered[i] && b[i] != b'\n';

    let mut out: Vec<u8> = Vec::with_capacity(n);
    let mut removed: Vec<RemovedSpan> = Vec::new();
    let mut record = |start: usize, end: usize, filled: bool| {
        if start >= end {
            return;
        }
        match removed.last_mut() {
            Some(last) if last.end == start && !last.filled && !filled => last.end = end,
            _ => removed.push(RemovedSpan { start, end, filled }),
        }
    };

    let mut ls = 0;
    while ls < n {
        let le = b[ls..].iter().position(|&c| c == b'\n').map_or(n, |p| p + ls);
        let next_line = if le < n { le + 1 } else { n };
        let touched = (ls..next_line).any(|i| covered[i]) || (ls > 0 && covered[ls - 1]);
        if !touched {
            out.extend_from_slice(&b[ls..next_line]);
            ls = next_line;
            continue;
        }
        let blank = (ls..le).all(|i| in_comment(i) || b[i].is_ascii_whitespace());
        if blank {
            record(ls, next_line, false);
            ls = next_line;
            continue;
        }
        let line_start = out.len();
        let mut content_started = false;
        let mut k = ls;
        while k < le {
            if !in_comment(k) {
                content_started |= !b[k].is_ascii_whitespace();
                out.push(b[k]);
                k += 1;
                continue;
            }
            let start = k;
            while k < le && in_comment(k) {
                k += 1;
            }
            if !content_started {
                while k < le && !in_comment(k) && matches!(b[k], b' ' | b'\t') {
                    k += 1;
                }
                record(start, k, false);
            } else {
                let prev = out[line_start..].last().copied();
                let next = (k < le).then(|| b[k]);
                let filled = matches!((prev, next), (Some(p), Some(q)) if fuses(p, q));
                if filled {
                    out.push(b' ');
                }
                record(start, k, filled);
            }
        }
        out.extend_from_slice(&b[le..next_line]);
        ls = next_line;
    }
    let text = match String::from_utf8(out) {
        Ok(s) => s,
        Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
    };
    (text, removed)
}

/// Whether two bytes could lex as one token if made adjacent.
fn fuses(prev: u8, next: u8) -> bool {
    const SEPARATORS: &[u8] = b"()[]{};,";
    !prev.is_ascii_whitespace()
        && !next.is_ascii_whitespace()
        && !SEPARATORS.contains(&prev)
        && !SEPARATORS.contains(&next)
}

/// Strips trailing whitespace on every line and collapses runs of blank
/// lines to a single blank line.
pub fn normalize(source: &str) -> String {
    let mut out = String::with_capacity(source.len());
    let mut prev_blank = false;
    let mut first = true;
    for line in source.split('\n') {
        let line = line.trim_end();
        let blank = line.is_empty();
        if blank && prev_blank {
            continue;
        }
        if !first {
            out.push('\n');
        }
        out.push_str(line);
        prev_blank = blank;
        first = false;
    }
    out
}

/// Applies a span list to `original`, used to check [`StripResult`]s.
pub fn apply_removed_spans(original: &str, spans: &[RemovedSpan]) -> String {
    let mut out = String::with_capacity(original.len());
    let mut at = 0;
    for s in spans {
        out.push_str(&original[at..s.start]);
        if s.filled {
            out.push(' ');
        }
        at = s.end;
    }
    out.push_str(&original[at..]);
    normalize(&out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn java_line_comment() {
        assert_eq!(strip_comments("int x = 5; // init", Language::Java).cleaned, "int x = 5;");
    }

    #[test]
    fn python_url_in_string() {
        let r = strip_comments("s = \"http://a.b\"  # note", Language::Python);
        assert_eq!(r.cleaned, "s = \"http://a.b\"");
        assert_eq!(r.comment_bytes, "# note".len());
    }

    #[test]
    fn cpp_block_comments() {
        let r = strip_comments("/* a */ int y; /* b */", Language::Cpp);
        assert_eq!(r.cleaned, "int y;");
        assert_eq!(apply_removed_spans("/* a */ int y; /* b */", &r.removed_spans), "int y;");
    }

    #[test]
    fn normalize_cases() {
        assert_eq!(normalize("a\n\n\n\nb"), "a\n\nb");
        assert_eq!(normalize("a\n\nb\nc"), "a\n\nb\nc");
        assert_eq!(normalize("x;   \n"), "x;\n");
    }

    #[test]
    fn comment_only_lines_disappear() {
        let src = "class A {\n    // hello\n    /* multi\n\n       line */\n    int x; /* tail */\n}\n";
        let r = strip_comments(src, Language::Java);
        assert_eq!(r.cleaned, "class A {\n    int x;\n}\n");
        assert_eq!(apply_removed_spans(src, &r.removed_spans), r.cleaned);
    }

    #[test]
    fn indentation_kept_before_leading_comment() {
        let r = strip_comments("if (a) {\n    /* why */ go();\n}", Language::Cpp);
        assert_eq!(r.cleaned, "if (a) {\n    go();\n}");
    }

    #[test]
    fn adjacent_tokens_do_not_fuse() {
        let r = strip_comments("int a/**/b = c+/* x */+d; f(/*arg*/);", Language::Cpp);
        assert_eq!(r.cleaned, "int a b = c+ +d; f();");
    }

    #[test]
    fn unterminated_block_strips_to_eof() {
        let r = strip_comments("int a;\n/* never closed\nint b;", Language::Java);
        assert_eq!(r.cleaned, "int a;\n");
        assert!(r.degraded());
    }

    #[test]
    fn unterminated_string_passes_through() {
        let src = "int a; // x\nchar *s = \"open // y\nint b; // z";
        let r = strip_comments(src, Language::Cpp);
        assert_eq!(r.cleaned, "int a;\nchar *s = \"open // y\nint b; // z");
        assert!(matches!(r.warnings[0], StripWarning::UnterminatedString { .. }));
    }

    #[test]
    fn other_language_falls_back() {
        let r = strip_comments("let x = 1; // c", Language::Other);
        assert_eq!(r.cleaned, "let x = 1;");
        assert_eq!(r.warnings, vec![StripWarning::UnsupportedLanguage]);
        assert!(!r.degraded());
    }

    #[test]
    fn python_docstrings_follow_flag() {
        let src = "def f():\n    \"\"\"Explain.\"\"\"\n    return 1\n";
        let on = strip_comments(src, Language::Python);
        assert_eq!(on.cleaned, "def f():\n    return 1\n");
        let off = strip_comments_with(
            src,
            Language::Python,
            StripOptions {
                strip_docstrings: false,
            },
        );
        assert_eq!(off.cleaned, src);
    }

    #[test]
    fn all_comments_leaves_nothing() {
        let r = strip_comments("// a\n/* b */\n", Language::Java);
        assert!(r.cleaned.trim().is_empty());
    }
}
