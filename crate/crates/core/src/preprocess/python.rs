//! Comment and docstring scanner for Python.

use std::ops::Range;

use super::{Scan, StripWarning};

const STRING_PREFIXES: &[&str] = &[
    "r", "u", "b", "f", "br", "rb", "fr", "rf", "t", "tr", "rt",
];

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Name(Range<usize>),
    Str(Range<usize>),
    Op(u8),
    Number,
    Newline,
}

pub(super) fn scan(src: &str, strip_docstrings: bool) -> Scan {
    let (tokens, mut scan) = tokenize(src);
    if strip_docstrings {
        scan.comments.extend(docstrings(src, &tokens));
        scan.comments.sort_by_key(|r| r.start);
    }
    scan
}

fn tokenize(src: &str) -> (Vec<(usize, Tok)>, Scan) {
    let b = src.as_bytes();
    let n = b.len();
    let mut scan = Scan::default();
    let mut toks = Vec::new();
    let mut depth = 0usize;
    let mut i = 0;
    while i < n {
        let c = b[i];
        match c {
            b'#' => {
                let end = b[i..].iter().position(|&x| x == b'\n').map_or(n, |p| p + i);
                scan.comments.push(i..end);
                i = end;
            }
            b'\\' if b.get(i + 1) == Some(&b'\n') => i += 2,
            b'\\' if b.get(i + 1) == Some(&b'\r') && b.get(i + 2) == Some(&b'\n') => i += 3,
            b'\n' => {
                if depth == 0 {
                    toks.push((i, Tok::Newline));
                }
                i += 1;
            }
            b'"' | b'\'' => match string_end(b, i) {
                Some(end) => {
                    toks.push((i, Tok::Str(i..end)));
                    i = end;
                }
                None => {
                    scan.warnings
                        .push(StripWarning::UnterminatedString { offset: i });
                    break;
                }
            },
            b'0'..=b'9' => {
                let start = i;
                while i < n {
                    let x = b[i];
                    if x.is_ascii_alphanumeric() || x == b'_' || x == b'.' {
                        i += 1;
                    } else if (x == b'+' || x == b'-')
                        && matches!(b[i - 1], b'e' | b'E')
                        && !b[start..].starts_with(b"0x")
                        && !b[start..].starts_with(b"0X")
                    {
                        i += 1;
                    } else {
                        break;
                    }
                }
                toks.push((start, Tok::Number));
            }
            _ if c.is_ascii_alphabetic() || c == b'_' || c >= 0x80 => {
                let start = i;
                while i < n && (b[i].is_ascii_alphanumeric() || b[i] == b'_' || b[i] >= 0x80) {
                    i += 1;
                }
                let word = src[start..i].to_ascii_lowercase();
                if matches!(b.get(i), Some(b'"' | b'\'')) && STRING_PREFIXES.contains(&word.as_str())
                {
                    match string_end(b, i) {
                        Some(end) => {
                            toks.push((start, Tok::Str(start..end)));
                            i = end;
                        }
                        None => {
                            scan.warnings
                                .push(StripWarning::UnterminatedString { offset: start });
                            break;
                        }
                    }
                } else {
                    toks.push((start, Tok::Name(start..i)));
                }
            }
            b'(' | b'[' | b'{' => {
                depth += 1;
                toks.push((i, Tok::Op(c)));
                i += 1;
            }
            b')' | b']' | b'}' => {
                depth = depth.saturating_sub(1);
                toks.push((i, Tok::Op(c)));
                i += 1;
            }
            _ if c.is_ascii_whitespace() => i += 1,
            _ => {
                toks.push((i, Tok::Op(c)));
                i += 1;
            }
        }
    }
    (toks, scan)
}

/// `quote` indexes the opening quote character. Escapes are honored for
/// termination in raw strings too (`r"\""` is one literal).
fn string_end(b: &[u8], quote: usize) -> Option<usize> {
    let q = b[quote];
    let triple = b.len() >= quote + 3 && b[quote + 1] == q && b[quote + 2] == q;
    let mut j = quote + if triple { 3 } else { 1 };
    while j < b.len() {
        let c = b[j];
        if c == b'\\' {
            j += 2;
        } else if triple {
            if c == q && b.len() >= j + 3 && b[j + 1] == q && b[j + 2] == q {
                return Some(j + 3);
            }
            j += 1;
        } else if c == q {
            return Some(j + 1);
        } else if c == b'\n' {
            return None;
        } else {
            j += 1;
        }
    }
    None
}

/// Spans of string-expression statements in docstring position: first
/// statement of the module, of a `def` body or of a `class` body.
///
/// A docstring that is the only statement of a `def`/`class` body is kept,
/// since removing it would leave an empty block.
fn docstrings(src: &str, toks: &[(usize, Tok)]) -> Vec<Range<usize>> {
    let lines: Vec<&[(usize, Tok)]> = toks
        .split(|(_, t)| *t == Tok::Newline)
        .filter(|l| !l.is_empty())
        .collect();
    let b = src.as_bytes();
    let column = |offset: usize| offset - b[..offset].iter().rposition(|&c| c == b'\n').map_or(0, |p| p + 1);

    let mut out = Vec::new();
    for (k, line) in lines.iter().enumerate() {
        if !line.iter().all(|(_, t)| matches!(t, Tok::Str(_))) {
            continue;
        }
        let module_level = k == 0;
        let after_header = k > 0 && is_block_header(src, lines[k - 1]);
        if !module_level && !after_header {
            continue;
        }
        if after_header {
            let indent = column(line[0].0);
            let has_sibling = lines
                .get(k + 1)
                .is_some_and(|next| column(next[0].0) >= indent);
            if !has_sibling {
                continue;
            }
        }
        let start = line[0].0;
        let end = match &line[line.len() - 1].1 {
            Tok::Str(r) => r.end,
            _ => unreachable!(),
        };
        out.push(start..end);
    }
    out
}

fn is_block_header(src: &str, line: &[(usize, Tok)]) -> bool {
    let word = |t: &Tok| match t {
        Tok::Name(r) => Some(&src[r.clone()]),
        _ => None,
    };
    let first = line.first().and_then(|(_, t)| word(t));
    let keyword = match first {
        Some("async") => line.get(1).and_then(|(_, t)| word(t)),
        other => other,
    };
    matches!(keyword, Some("def" | "class")) && matches!(line.last(), Some((_, Tok::Op(b':'))))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn removed(src: &str, docstrings: bool) -> Vec<&str> {
        scan(src, docstrings)
            .comments
            .into_iter()
            .map(|r| &src[r])
            .collect()
    }

    #[test]
    fn hash_comments_skip_strings() {
        let src = "s = \"http://a.b#x\"  # note\nt = '#'\n";
        assert_eq!(removed(src, true), vec!["# note"]);
    }

    #[test]
    fn docstring_positions() {
        let src = "\"\"\"Module.\"\"\"\nimport os\n\ndef f(x):\n    \"\"\"Doc.\n    More.\"\"\"\n    return x\n\nclass A:\n    'cls'\n    y = 1\n\nz = 'not a docstring'\n\"also not\"\n";
        assert_eq!(
            removed(src, true),
            vec!["\"\"\"Module.\"\"\"", "\"\"\"Doc.\n    More.\"\"\"", "'cls'"]
        );
        assert!(removed(src, false).is_empty());
    }

    #[test]
    fn sole_docstring_kept() {
        let src = "def f():\n    \"\"\"Only.\"\"\"\n\nx = 1\n";
        assert!(removed(src, true).is_empty());
    }

    #[test]
    fn prefixed_and_async() {
        let src = "async def g():\n    r'''raw \\d''' # c\n    return 1\n";
        assert_eq!(removed(src, true), vec!["r'''raw \\d'''", "# c"]);
    }

    #[test]
    fn multiline_header() {
        let src = "def f(a,\n      b):\n    \"doc\"\n    return a\n";
        assert_eq!(removed(src, true), vec!["\"doc\""]);
    }

    #[test]
    fn unterminated_string_stops() {
        let s = scan("x = 'abc\n# c\n", true);
        assert!(s.comments.is_empty());
        assert_eq!(s.warnings, vec![StripWarning::UnterminatedString { offset: 4 }]);
    }
}
