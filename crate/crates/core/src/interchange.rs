//! Line-delimited problem interchange files.
//!
//! One JSON object per line, UTF-8, no blank lines between records (blank
//! lines are tolerated on input). Writing a loaded file back with
//! [`write_problems`] is byte-identical when the input was itself produced by
//! [`write_problems`].

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use crate::model::Problem;

#[derive(Debug, Error)]
pub enum InterchangeError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("record {record} (line {line}): field `{field}`: {message}")]
    Parse {
        record: usize,
        line: usize,
        field: String,
        message: String,
    },
    #[error("record {record} (line {line}): duplicate problem id `{id}` (first seen on line {first_line})")]
    Duplicate {
        record: usize,
        line: usize,
        id: String,
        first_line: usize,
    },
}

pub fn load_problems(path: impl AsRef<Path>) -> Result<Vec<Problem>, InterchangeError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| InterchangeError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_problems(&text)
}

pub fn parse_problems(text: &str) -> Result<Vec<Problem>, InterchangeError> {
    let mut problems = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut record = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        record += 1;
        let de = &mut serde_json::Deserializer::from_str(raw);
        let problem: Problem = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            InterchangeError::Parse {
                record,
                line,
                field: if field == "." { "<record>".into() } else { field },
                message: e.into_inner().to_string(),
            }
        })?;
        if let Err(msg) = problem.check() {
            let (field, message) = msg
                .split_once(": ")
                .map(|(f, m)| (f.to_string(), m.to_string()))
                .unwrap_or_else(|| ("<record>".to_string(), msg.clone()));
            return Err(InterchangeError::Parse {
                record,
                line,
                field,
                message,
            });
        }
        if let Some(&first_line) = seen.get(&problem.id) {
            return Err(InterchangeError::Duplicate {
                record,
                line,
                id: problem.id,
                first_line,
            });
        }
        seen.insert(problem.id.clone(), line);
        problems.push(problem);
    }
    Ok(problems)
}

pub fn render_problems(problems: &[Problem]) -> String {
    let mut out = String::new();
    for p in problems {
        out.push_str(&serde_json::to_string(p).expect("problem serializes"));
        out.push('\n');
    }
    out
}

/// Writes problems atomically (temp file + rename).
pub fn write_problems(path: impl AsRef<Path>, problems: &[Problem]) -> io::Result<()> {
    let path = path.as_ref();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(render_problems(problems).as_bytes())?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
