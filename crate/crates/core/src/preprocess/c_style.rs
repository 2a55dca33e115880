//! Comment scanner for Java, C++ and the C-style fallback.

use super::{Scan, StripWarning};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum Dialect {
    Java,
    Cpp,
    Other,
}

const RAW_PREFIXES: &[&[u8]] = &[b"R", b"u8R", b"uR", b"UR", b"LR"];

pub(super) fn scan(src: &str, dialect: Dialect) -> Scan {
    let b = src.as_bytes();
    let n = b.len();
    let mut scan = Scan::default();
    let mut i = 0;
    while i < n {
        let c = b[i];
        match c {
            b'/' if b.get(i + 1) == Some(&b'/') => {
                let end = line_comment_end(b, i + 2, dialect != Dialect::Java);
                scan.comments.push(i..end);
                i = end;
            }
            b'/' if b.get(i + 1) == Some(&b'*') => match find(b, i + 2, b"*/") {
                Some(close) => {
                    scan.comments.push(i..close + 2);
                    i = close + 2;
                }
                None => {
                    scan.comments.push(i..n);
                    scan.warnings
                        .push(StripWarning::UnterminatedBlockComment { offset: i });
                    i = n;
                }
            },
            b'"' => {
                let lit = if dialect == Dialect::Java && b[i..].starts_with(b"\"\"\"") {
                    quoted(b, i, b"\"\"\"", true)
                } else {
                    quoted(b, i, b"\"", false)
                };
                match lit {
                    Some(end) => i = end,
                    None => {
                        scan.warnings
                            .push(StripWarning::UnterminatedString { offset: i });
                        break;
                    }
                }
            }
            b'\'' => match quoted(b, i, b"'", false) {
                Some(end) => i = end,
                None => {
                    scan.warnings
                        .push(StripWarning::UnterminatedString { offset: i });
                    break;
                }
            },
            b'0'..=b'9' => i = number_end(b, i),
            _ if is_ident_start(c) => {
                let start = i;
                while i < n && is_ident_continue(b[i]) {
                    i += 1;
                }
                if dialect == Dialect::Cpp
                    && b.get(i) == Some(&b'"')
                    && RAW_PREFIXES.contains(&&b[start..i])
                {
                    match raw_string_end(b, i) {
                        Some(end) => i = end,
                        None => {
                            scan.warnings
                                .push(StripWarning::UnterminatedString { offset: start });
                            break;
                        }
                    }
                }
            }
            _ => i += 1,
        }
    }
    scan
}

fn is_ident_start(c: u8) -> bool {
    c.is_ascii_alphabetic() || c == b'_' || c == b'$' || c >= 0x80
}

fn is_ident_continue(c: u8) -> bool {
    is_ident_start(c) || c.is_ascii_digit()
}

/// End of a `//` comment (exclusive, before the newline). With
/// `continuation`, a backslash right before the newline extends the comment.
fn line_comment_end(b: &[u8], mut i: usize, continuation: bool) -> usize {
    while i < b.len() {
        if b[i] == b'\n' {
            let escaped = continuation
                && (i >= 1 && b[i - 1] == b'\\'
                    || i >= 2 && b[i - 1] == b'\r' && b[i - 2] == b'\\');
            if !escaped {
                return i;
            }
        }
        i += 1;
    }
    b.len()
}

fn find(b: &[u8], from: usize, needle: &[u8]) -> Option<usize> {
    b.get(from..)?
        .windows(needle.len())
        .position(|w| w == needle)
        .map(|p| p + from)
}

/// Skips a quoted literal starting at `start`. Returns the index one past
/// the closing delimiter, or `None` when unterminated. Single-line literals
/// end at an unescaped newline.
fn quoted(b: &[u8], start: usize, delim: &[u8], multiline: bool) -> Option<usize> {
    let mut j = start + delim.len();
    while j < b.len() {
        match b[j] {
            b'\\' => j += 2,
            b'\n' if !multiline => return None,
            _ if b[j..].starts_with(delim) => return Some(j + delim.len()),
            _ => j += 1,
        }
    }
    None
}

/// `R"delim( ... )delim"`; `quote` indexes the opening quote.
fn raw_string_end(b: &[u8], quote: usize) -> Option<usize> {
    let open = quote + 1;
    let paren = b[open..]
        .iter()
        .take(17)
        .position(|&c| c == b'(')?
        + open;
    let delim = &b[open..paren];
    if delim
        .iter()
        .any(|&c| c == b' ' || c == b')' || c == b'\\' || c == b'\n')
    {
        return None;
    }
    let mut closing = Vec::with_capacity(delim.len() + 2);
    closing.push(b')');
    closing.extend_from_slice(delim);
    closing.push(b'"');
    find(b, paren + 1, &closing).map(|p| p + closing.len())
}

/// Numeric literal, including digit separators (`1'000`) and exponents.
fn number_end(b: &[u8], mut i: usize) -> usize {
    let n = b.len();
    while i < n {
        let c = b[i];
        if c.is_ascii_alphanumeric() || c == b'_' || c == b'.' {
            i += 1;
        } else if c == b'\'' && i + 1 < n && b[i + 1].is_ascii_alphanumeric() {
            i += 1;
        } else if (c == b'+' || c == b'-') && matches!(b[i - 1], b'e' | b'E' | b'p' | b'P') {
            i += 1;
        } else {
            break;
        }
    }
    i
}
