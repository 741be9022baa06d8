//! Brace-matching function splitter for C and C-like C++.
//!
//! Not a parser: it skips comments, string and character literals and
//! preprocessor lines, then treats a top-level `{` as a function body when
//! the text before it looks like a declarator (`... name(...) qualifiers`).
//! `namespace` and `extern "C"` blocks are descended into; other top-level
//! blocks (structs, initialisers) are skipped whole.

/// One function definition, as a byte range of the original text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionSpan {
    pub name: String,
    /// First byte of the declarator.
    pub start: usize,
    /// One past the closing brace.
    pub end: usize,
    /// 1-based line of `start`.
    pub line: usize,
}

struct Lexer<'a> {
    b: &'a [u8],
}

impl Lexer<'_> {
    /// If a comment, literal or preprocessor line starts at `i`, returns
    /// the index just past it.
    fn skip_trivia(&self, i: usize, line_start: bool) -> Option<usize> {
        let b = self.b;
        match b[i] {
            b'/' if b.get(i + 1) == Some(&b'/') => Some(self.to_line_end(i)),
            b'/' if b.get(i + 1) == Some(&b'*') => {
                let mut j = i + 2;
                while j + 1 < b.len() && !(b[j] == b'*' && b[j + 1] == b'/') {
                    j += 1;
                }
                Some((j + 2).min(b.len()))
            }
            b'"' | b'\'' => Some(self.literal_end(i)),
            b'#' if line_start => Some(self.to_line_end(i)),
            _ => None,
        }
    }

    /// End of a line, honouring backslash continuations.
    fn to_line_end(&self, mut i: usize) -> usize {
        let b = self.b;
        while i < b.len() && b[i] != b'\n' {
            if b[i] == b'\\' && i + 1 < b.len() {
                i += 1;
            }
            i += 1;
        }
        i
    }

    fn literal_end(&self, i: usize) -> usize {
        let b = self.b;
        let quote = b[i];
        let mut j = i + 1;
        while j < b.len() && b[j] != quote && b[j] != b'\n' {
            if b[j] == b'\\' {
                j += 1;
            }
            j += 1;
        }
        (j + 1).min(b.len())
    }

    /// Index just past the `}` matching the `{` at `open`, or the end of
    /// input when unbalanced.
    fn block_end(&self, open: usize) -> usize {
        let b = self.b;
        let mut depth = 0usize;
        let mut i = open;
        let mut line_start = false;
        while i < b.len() {
            if let Some(next) = self.skip_trivia(i, line_start) {
                i = next;
                continue;
            }
            match b[i] {
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        return i + 1;
                    }
                }
                _ => {}
            }
            line_start = match b[i] {
                b'\n' => true,
                c if c.is_ascii_whitespace() => line_start,
                _ => false,
            };
            i += 1;
        }
        b.len()
    }
}

enum Header {
    Function(String),
    Scope,
    Other,
}

fn is_ident(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Identifier (possibly `::`-qualified or a destructor) ending at `end`.
fn ident_before(text: &str, end: usize) -> &str {
    let head = text[..end].trim_end();
    let start = head
        .char_indices()
        .rev()
        .find(|&(_, c)| !(is_ident(c) || c == ':' || c == '~'))
        .map_or(0, |(i, c)| i + c.len_utf8());
    &head[start..]
}

fn classify(header: &str) -> Header {
    let h = header.trim();
    let first = h.split(|c: char| !is_ident(c)).next().unwrap_or("");
    if first == "namespace" || (first == "extern" && h.contains('"') && !h.contains('(')) {
        return Header::Scope;
    }
    // Top-level paren groups as (open, close) byte indices.
    let mut groups = Vec::new();
    let mut depth = 0usize;
    let mut open = 0;
    for (i, c) in h.char_indices() {
        match c {
            '(' => {
                if depth == 0 {
                    open = i;
                }
                depth += 1;
            }
            ')' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    groups.push((open, i));
                }
            }
            '=' if depth == 0 => return Header::Other,
            _ => {}
        }
    }
    if depth != 0 {
        return Header::Other;
    }
    // The parameter list is the last group not introduced by an attribute.
    for &(open, close) in groups.iter().rev() {
        let name = ident_before(h, open);
        if name.is_empty() || name.starts_with("__attribute") || name == "__declspec" {
            continue;
        }
        if matches!(name, "if" | "while" | "for" | "switch" | "return" | "sizeof") {
            return Header::Other;
        }
        // Whatever follows the list must be qualifiers or a trailing type.
        let tail = &h[close + 1..];
        let plausible = tail
            .chars()
            .all(|c| is_ident(c) || c.is_whitespace() || "()*&:<>,-".contains(c));
        return if plausible {
            Header::Function(name.to_string())
        } else {
            Header::Other
        };
    }
    Header::Other
}

/// Every function definition in `src`, in source order.
pub fn split_functions(src: &str) -> Vec<FunctionSpan> {
    let lex = Lexer { b: src.as_bytes() };
    let b = lex.b;
    let mut out = Vec::new();
    let mut header = String::new();
    let mut header_start: Option<usize> = None;
    let mut line_start = true;
    let mut i = 0;
    while i < b.len() {
        if let Some(next) = lex.skip_trivia(i, line_start) {
            if b[i] == b'"' || b[i] == b'\'' {
                header_start.get_or_insert(i);
                header.push_str(&src[i..next]);
            } else {
                header.push(' ');
            }
            i = next;
            continue;
        }
        let c = b[i];
        line_start = match c {
            b'\n' => true,
            c if c.is_ascii_whitespace() => line_start,
            _ => false,
        };
        match c {
            b'{' => {
                match classify(&header) {
                    Header::Scope => i += 1,
                    Header::Function(name) => {
                        let end = lex.block_end(i);
                        let start = header_start.unwrap_or(i);
                        out.push(FunctionSpan {
                            name,
                            start,
                            end,
                            line: 1 + src[..start].matches('\n').count(),
                        });
                        i = end;
                    }
                    Header::Other => i = lex.block_end(i),
                }
                header.clear();
                header_start = None;
                continue;
            }
            b';' | b'}' => {
                header.clear();
                header_start = None;
            }
            _ => {
                if !c.is_ascii_whitespace() {
                    header_start.get_or_insert(i);
                }
                // Multi-byte characters are copied whole.
                let width = src[i..].chars().next().map_or(1, char::len_utf8);
                header.push_str(&src[i..i + width]);
                i += width;
                continue;
            }
        }
        i += 1;
    }
    out
}
