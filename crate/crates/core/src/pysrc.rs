//! Lexical analysis of Python solution sources.
//!
//! This is a line-oriented analyzer, not a parser: string literals and
//! comments are masked out, physical lines are grouped into logical lines by
//! bracket depth and backslash continuations, and blocks are recovered from
//! indentation. That is enough to locate stdin reads, loop extents, function
//! bodies and parameter lists in the kind of code benchmarks contain.

use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::sandbox::CONTRACT_SENTINEL;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("function `{0}` is not defined")]
    MissingFunction(String),
    #[error("line {line}: {message}")]
    Unsupported { line: usize, message: String },
}

/// Replaces string-literal contents and comments with spaces.
///
/// Quote characters and newlines are kept, so line structure and the shape of
/// the code survive. Unterminated triple-quoted strings are a syntax error.
pub fn mask(src: &str) -> Result<String, AnalysisError> {
    let b = src.as_bytes();
    let mut out = b.to_vec();
    let mut i = 0;
    let mut line = 1;
    while i < b.len() {
        let c = b[i];
        match c {
            b'\n' => {
                line += 1;
                i += 1;
            }
            b'#' => {
                while i < b.len() && b[i] != b'\n' {
                    out[i] = b' ';
                    i += 1;
                }
            }
            b'\'' | b'"' => {
                let triple = i + 2 < b.len() && b[i + 1] == c && b[i + 2] == c;
                let open_line = line;
                let qlen = if triple { 3 } else { 1 };
                i += qlen;
                let mut closed = false;
                while i < b.len() {
                    let d = b[i];
                    if d == b'\\' && i + 1 < b.len() {
                        out[i] = b' ';
                        if b[i + 1] == b'\n' {
                            line += 1;
                        } else {
                            out[i + 1] = b' ';
                        }
                        i += 2;
                        continue;
                    }
                    if d == b'\n' {
                        if !triple {
                            break;
                        }
                        line += 1;
                        i += 1;
                        continue;
                    }
                    if d == c && (!triple || (i + 2 < b.len() && b[i + 1] == c && b[i + 2] == c)) {
                        i += qlen;
                        closed = true;
                        break;
                    }
                    out[i] = b' ';
                    i += 1;
                }
                if triple && !closed {
                    return Err(AnalysisError::Syntax {
                        line: open_line,
                        message: "unterminated triple-quoted string".into(),
                    });
                }
            }
            _ => i += 1,
        }
    }
    // Only ASCII bytes were written over whole string/comment spans.
    Ok(String::from_utf8_lossy(&out).into_owned())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogicalLine {
    /// 0-based index of the first physical line.
    pub first: usize,
    /// 0-based index of the last physical line.
    pub last: usize,
    pub indent: usize,
    pub indent_text: String,
    /// Masked code of all physical lines joined by spaces.
    pub code: String,
}

impl LogicalLine {
    fn keyword(&self) -> &str {
        let t = self.code.trim_start();
        let end = t
            .find(|c: char| !(c.is_alphanumeric() || c == '_'))
            .unwrap_or(t.len());
        &t[..end]
    }

    /// Header of a compound statement (ends with a top-level colon).
    pub fn is_header(&self) -> bool {
        self.code.trim_end().ends_with(':') && !self.code.trim_start().starts_with("lambda")
            || self.inline_suite()
    }

    /// `for x in y: body` on one line.
    fn inline_suite(&self) -> bool {
        matches!(
            self.keyword(),
            "for" | "while" | "if" | "elif" | "else" | "with" | "try" | "except" | "finally" | "def" | "class" | "async"
        ) && top_level_colon(&self.code).is_some_and(|i| !self.code[i + 1..].trim().is_empty())
    }

    pub fn is_loop(&self) -> bool {
        let t = self.code.trim_start();
        matches!(self.keyword(), "for" | "while") || t.starts_with("async for")
    }

    fn is_scope(&self) -> bool {
        let t = self.code.trim_start();
        matches!(self.keyword(), "def" | "class") || t.starts_with("async def")
    }

    fn is_continuation_clause(&self) -> bool {
        matches!(self.keyword(), "elif" | "else" | "except" | "finally")
    }
}

fn top_level_colon(code: &str) -> Option<usize> {
    let mut depth = 0i32;
    let mut lambda_pending = 0;
    let bytes = code.as_bytes();
    for (i, &c) in bytes.iter().enumerate() {
        match c {
            b'(' | b'[' | b'{' => depth += 1,
            b')' | b']' | b'}' => depth -= 1,
            b':' if depth == 0 => {
                if lambda_pending > 0 {
                    lambda_pending -= 1;
                } else if !(i + 1 < bytes.len() && bytes[i + 1] == b'=') {
                    return Some(i);
                }
            }
            b'l' if depth == 0 && code[i..].starts_with("lambda") => {
                let before_ok = i == 0 || !(bytes[i - 1].is_ascii_alphanumeric() || bytes[i - 1] == b'_');
                let after = bytes.get(i + 6).copied().unwrap_or(b' ');
                if before_ok && !(after.is_ascii_alphanumeric() || after == b'_') {
                    lambda_pending += 1;
                }
            }
            _ => {}
        }
    }
    None
}

fn indent_of(line: &str) -> (usize, String) {
    let mut width = 0;
    let mut text = String::new();
    for ch in line.chars() {
        match ch {
            ' ' => width += 1,
            '\t' => width = (width / 8 + 1) * 8,
            '\x0c' => width = 0,
            _ => break,
        }
        text.push(ch);
    }
    (width, text)
}

/// Groups physical lines into logical lines; blank and comment-only lines are skipped.
pub fn logical_lines(src: &str) -> Result<Vec<LogicalLine>, AnalysisError> {
    let masked = mask(src)?;
    let physical: Vec<&str> = masked.split('\n').collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < physical.len() {
        if physical[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let first = i;
        let (indent, indent_text) = indent_of(physical[i]);
        let mut depth = 0i32;
        let mut code = String::new();
        loop {
            let text = physical[i];
            for c in text.bytes() {
                match c {
                    b'(' | b'[' | b'{' => depth += 1,
                    b')' | b']' | b'}' => depth -= 1,
                    _ => {}
                }
            }
            let trimmed = text.trim_end();
            let continued = trimmed.ends_with('\\');
            if !code.is_empty() {
                code.push(' ');
            }
            code.push_str(if continued { &trimmed[..trimmed.len() - 1] } else { text });
            if (depth > 0 || continued) && i + 1 < physical.len() {
                i += 1;
                continue;
            }
            break;
        }
        if depth > 0 {
            return Err(AnalysisError::Syntax {
                line: first + 1,
                message: "unclosed bracket".into(),
            });
        }
        out.push(LogicalLine {
            first,
            last: i,
            indent,
            indent_text,
            code,
        });
        i += 1;
    }
    Ok(out)
}

/// Index one past the last logical line belonging to the block opened at `header`,
/// including trailing `elif`/`else`/`except`/`finally` clauses.
fn block_end(lines: &[LogicalLine], header: usize) -> usize {
    let base = lines[header].indent;
    if lines[header].inline_suite() {
        let mut j = header + 1;
        while j < lines.len() && lines[j].indent == base && lines[j].is_continuation_clause() {
            j = block_end(lines, j);
        }
        return j;
    }
    let mut j = header + 1;
    loop {
        while j < lines.len() && lines[j].indent > base {
            j += 1;
        }
        if j < lines.len() && lines[j].indent == base && lines[j].is_continuation_clause() {
            if lines[j].inline_suite() {
                j += 1;
            } else {
                j += 1;
                continue;
            }
        }
        return j;
    }
}

/// Indices of blocks enclosing logical line `idx` (outermost first), plus the
/// line itself when it is a header.
fn enclosing_headers(lines: &[LogicalLine], idx: usize) -> Vec<usize> {
    let mut stack: Vec<usize> = Vec::new();
    for (j, l) in lines.iter().enumerate().take(idx + 1) {
        while let Some(&top) = stack.last() {
            let top_line = &lines[top];
            let inside = l.indent > top_line.indent && !top_line.inline_suite();
            if inside && j < block_end(lines, top) {
                break;
            }
            stack.pop();
        }
        if l.is_header() && j <= idx {
            stack.push(j);
        }
    }
    stack
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputRead {
    /// 1-based first line of the reading statement.
    pub line: usize,
    /// 1-based last line of the reading statement.
    pub stmt_end: usize,
    pub indent_text: String,
    /// Outermost enclosing loop (1-based header line, 1-based last line, indent).
    pub enclosing_loop: Option<(usize, usize, String)>,
    /// The read sits in a non-loop compound header; insertion goes after that block.
    pub header_block: Option<(usize, String)>,
}

fn re(pattern: &str) -> Regex {
    Regex::new(pattern).expect("static pattern")
}

struct ReadPatterns {
    assign_fn: Regex,
    assign_obj: Regex,
    from_import: Regex,
    lambda_assign: Regex,
    def_name: Regex,
}

fn read_patterns() -> &'static ReadPatterns {
    static P: OnceLock<ReadPatterns> = OnceLock::new();
    P.get_or_init(|| ReadPatterns {
        assign_fn: re(r"^\s*([A-Za-z_]\w*)\s*=\s*sys\s*\.\s*stdin\s*(?:\.\s*buffer\s*)?\.\s*(?:readline|readlines|read)\s*$"),
        assign_obj: re(r"^\s*([A-Za-z_]\w*)\s*=\s*sys\s*\.\s*stdin\s*(?:\.\s*buffer\s*)?$"),
        from_import: re(r"^\s*from\s+sys\s+import\s+(.*)$"),
        lambda_assign: re(r"^\s*([A-Za-z_]\w*)\s*=\s*lambda\b"),
        def_name: re(r"^\s*(?:async\s+)?def\s+([A-Za-z_]\w*)"),
    })
}

struct Readers {
    functions: HashSet<String>,
    objects: HashSet<String>,
}

impl Readers {
    fn call_regex(&self) -> Regex {
        let mut alts = vec![
            r"\binput\s*\(".to_string(),
            r"\bsys\s*\.\s*stdin\s*(?:\.\s*buffer\s*)?\.\s*(?:readline|readlines|read)\s*\(".to_string(),
            r"\bopen\s*\(\s*0\s*[,)]".to_string(),
            r"^\s*(?:async\s+)?for\b.*\bin\s+sys\s*\.\s*stdin\s*:".to_string(),
        ];
        for f in &self.functions {
            alts.push(format!(r"(?:^|[^.\w]){}\s*\(", regex::escape(f)));
        }
        for o in &self.objects {
            let o = regex::escape(o);
            alts.push(format!(r"(?:^|[^.\w]){o}\s*(?:\.\s*buffer\s*)?\.\s*(?:readline|readlines|read)\s*\("));
            alts.push(format!(r"^\s*(?:async\s+)?for\b.*\bin\s+{o}\s*:"));
        }
        re(&alts.join("|"))
    }
}

fn collect_readers(lines: &[LogicalLine]) -> Readers {
    let p = read_patterns();
    let mut readers = Readers {
        functions: HashSet::new(),
        objects: HashSet::new(),
    };
    for l in lines {
        if let Some(c) = p.assign_fn.captures(&l.code) {
            readers.functions.insert(c[1].to_string());
        } else if let Some(c) = p.assign_obj.captures(&l.code) {
            readers.objects.insert(c[1].to_string());
        } else if let Some(c) = p.from_import.captures(&l.code) {
            for item in c[1].trim().trim_matches(['(', ')']).split(',') {
                let mut parts = item.split_whitespace();
                if parts.next() == Some("stdin") {
                    let alias = match (parts.next(), parts.next()) {
                        (Some("as"), Some(a)) => a,
                        _ => "stdin",
                    };
                    readers.objects.insert(alias.to_string());
                }
            }
        }
    }
    // Helper callables wrapping a read (`ri = lambda: int(input())`,
    // `def ri(): return int(input())`) become readers themselves; iterate to
    // pick up helpers built on helpers.
    loop {
        let call = readers.call_regex();
        let before = readers.functions.len();
        for (idx, l) in lines.iter().enumerate() {
            if let Some(c) = p.lambda_assign.captures(&l.code) {
                if call.is_match(&l.code) {
                    readers.functions.insert(c[1].to_string());
                }
            } else if let Some(c) = p.def_name.captures(&l.code) {
                let end = block_end(lines, idx);
                let body = &lines[idx..end];
                let returns_read = body
                    .iter()
                    .any(|b| b.code.trim_start().starts_with("return") && call.is_match(&b.code))
                    || (l.inline_suite() && call.is_match(&l.code));
                if returns_read {
                    readers.functions.insert(c[1].to_string());
                }
            }
        }
        if readers.functions.len() == before {
            return readers;
        }
    }
}

/// Lines that only define a reader helper; reads there are not input sites.
fn is_reader_definition(lines: &[LogicalLine], idx: usize, readers: &Readers) -> bool {
    let p = read_patterns();
    let l = &lines[idx];
    if let Some(c) = p.lambda_assign.captures(&l.code) {
        return readers.functions.contains(&c[1]);
    }
    for h in enclosing_headers(lines, idx) {
        if let Some(c) = p.def_name.captures(&lines[h].code) {
            if readers.functions.contains(&c[1]) && l.code.trim_start().starts_with("return") {
                return true;
            }
            if h == idx && readers.functions.contains(&c[1]) {
                return true;
            }
        }
    }
    false
}

/// Locates every statement that reads standard input, in source order.
pub fn find_input_reads(src: &str) -> Result<Vec<InputRead>, AnalysisError> {
    let lines = logical_lines(src)?;
    let readers = collect_readers(&lines);
    let call = readers.call_regex();
    let mut reads = Vec::new();
    for (idx, l) in lines.iter().enumerate() {
        if !call.is_match(&l.code) || is_reader_definition(&lines, idx, &readers) {
            continue;
        }
        let headers = enclosing_headers(&lines, idx);
        // Only loops inside the innermost def/class scope enclose the read.
        let scope_start = headers
            .iter()
            .rposition(|&h| lines[h].is_scope() && h != idx)
            .map_or(0, |p| p + 1);
        let enclosing_loop = headers[scope_start..]
            .iter()
            .copied()
            .find(|&h| lines[h].is_loop())
            .map(|h| {
                let end = block_end(&lines, h);
                (lines[h].first + 1, lines[end - 1].last + 1, lines[h].indent_text.clone())
            });
        let header_block = (l.is_header() && !l.is_loop() && enclosing_loop.is_none()).then(|| {
            let end = block_end(&lines, idx);
            (lines[end - 1].last + 1, l.indent_text.clone())
        });
        reads.push(InputRead {
            line: l.first + 1,
            stmt_end: l.last + 1,
            indent_text: l.indent_text.clone(),
            enclosing_loop,
            header_block,
        });
    }
    Ok(reads)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parameter {
    pub name: String,
    pub has_default: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionInfo {
    /// 1-based line of the `def`.
    pub def_line: usize,
    /// 1-based line of the first body statement.
    pub body_line: usize,
    pub body_indent: String,
    pub params: Vec<Parameter>,
    pub var_positional: bool,
}

impl FunctionInfo {
    pub fn required_params(&self) -> usize {
        self.params.iter().filter(|p| !p.has_default).count()
    }
}

/// Finds the first top-level or nested `def name(...)`.
pub fn find_function(src: &str, name: &str) -> Result<FunctionInfo, AnalysisError> {
    let lines = logical_lines(src)?;
    let p = read_patterns();
    let idx = lines
        .iter()
        .position(|l| p.def_name.captures(&l.code).is_some_and(|c| &c[1] == name))
        .ok_or_else(|| AnalysisError::MissingFunction(name.to_string()))?;
    let header = &lines[idx];
    if header.inline_suite() {
        return Err(AnalysisError::Unsupported {
            line: header.first + 1,
            message: format!("body of `{name}` is on the def line"),
        });
    }
    let body = lines
        .get(idx + 1)
        .filter(|b| b.indent > header.indent)
        .ok_or_else(|| AnalysisError::Syntax {
            line: header.first + 1,
            message: format!("`{name}` has no body"),
        })?;
    let open = header.code.find('(').ok_or_else(|| AnalysisError::Syntax {
        line: header.first + 1,
        message: "def without parameter list".into(),
    })?;
    let mut depth = 0;
    let mut close = None;
    for (i, c) in header.code[open..].char_indices() {
        match c {
            '(' | '[' | '{' => depth += 1,
            ')' | ']' | '}' => {
                depth -= 1;
                if depth == 0 {
                    close = Some(open + i);
                    break;
                }
            }
            _ => {}
        }
    }
    let close = close.ok_or_else(|| AnalysisError::Syntax {
        line: header.first + 1,
        message: "unclosed parameter list".into(),
    })?;
    let mut params = Vec::new();
    let mut var_positional = false;
    for raw in split_top_level(&header.code[open + 1..close]) {
        let item = raw.trim();
        if item.is_empty() || item == "/" || item == "*" {
            continue;
        }
        if let Some(rest) = item.strip_prefix("**") {
            let _ = rest;
            continue;
        }
        if item.starts_with('*') {
            var_positional = true;
            continue;
        }
        let name_end = item
            .find(|c: char| !(c.is_alphanumeric() || c == '_'))
            .unwrap_or(item.len());
        let pname = &item[..name_end];
        if pname == "self" && params.is_empty() {
            continue;
        }
        params.push(Parameter {
            name: pname.to_string(),
            has_default: item.contains('='),
        });
    }
    Ok(FunctionInfo {
        def_line: header.first + 1,
        body_line: body.first + 1,
        body_indent: body.indent_text.clone(),
        params,
        var_positional,
    })
}

fn split_top_level(s: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '(' | '[' | '{' => depth += 1,
            ')' | ']' | '}' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&s[start..]);
    parts
}

/// Index of the top-level `,` separating an assert condition from its message.
pub fn split_assert_message(stmt: &str) -> (&str, Option<&str>) {
    let masked = mask(stmt).unwrap_or_else(|_| stmt.to_string());
    let mut depth = 0;
    for (i, c) in masked.char_indices() {
        match c {
            '(' | '[' | '{' => depth += 1,
            ')' | ']' | '}' => depth -= 1,
            ',' if depth == 0 => return (&stmt[..i], Some(&stmt[i + 1..])),
            _ => {}
        }
    }
    (stmt, None)
}

/// Where an inserted line goes relative to an existing 1-based line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Placement {
    Before(usize),
    After(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Insertion {
    pub placement: Placement,
    pub indent: String,
    pub text: String,
}

/// Inserts whole lines; insertions sharing a position keep their given order.
pub fn insert_lines(src: &str, insertions: &[Insertion]) -> Result<String, AnalysisError> {
    let mut lines: Vec<String> = src.split_inclusive('\n').map(str::to_string).collect();
    let n = lines.len();
    // Slot k holds lines placed between original line k and k+1 (0 = before line 1).
    let mut slots: Vec<Vec<String>> = vec![Vec::new(); n + 1];
    for ins in insertions {
        let slot = match ins.placement {
            Placement::Before(l) if (1..=n).contains(&l) => l - 1,
            Placement::After(l) if (1..=n).contains(&l) => l,
            _ => {
                return Err(AnalysisError::Unsupported {
                    line: match ins.placement {
                        Placement::Before(l) | Placement::After(l) => l,
                    },
                    message: "insertion line out of range".into(),
                })
            }
        };
        slots[slot].push(format!("{}{}", ins.indent, ins.text));
    }
    let mut out = String::with_capacity(src.len() + 64 * insertions.len());
    for (k, slot) in slots.into_iter().enumerate() {
        if k > 0 {
            let line = &mut lines[k - 1];
            if !line.ends_with('\n') && !slot.is_empty() {
                line.push('\n');
            }
            out.push_str(line);
        }
        let count = slot.len();
        for (j, text) in slot.into_iter().enumerate() {
            out.push_str(&text);
            let last_overall = k == n && j + 1 == count;
            if !last_overall || src.ends_with('\n') {
                out.push('\n');
            }
        }
    }
    Ok(out)
}

/// Removes every line carrying the contract sentinel, restoring the source
/// that [`insert_lines`] was applied to.
pub fn strip_contract_lines(src: &str) -> String {
    let lines: Vec<&str> = src.split_inclusive('\n').collect();
    let mut kept: Vec<&str> = Vec::with_capacity(lines.len());
    let mut trimmed_final_newline = false;
    for (i, line) in lines.iter().enumerate() {
        if line.contains(CONTRACT_SENTINEL) {
            if i + 1 == lines.len() && !line.ends_with('\n') {
                trimmed_final_newline = true;
            }
            continue;
        }
        kept.push(line);
    }
    let mut out: String = kept.concat();
    if trimmed_final_newline && out.ends_with('\n') {
        out.pop();
    }
    out
}
