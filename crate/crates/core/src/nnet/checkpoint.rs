//! Text checkpoints for parameter vectors.
//!
//! ```text
//! nasmc-checkpoint 1
//! meta <key> <value>
//! slice <name> <d1>x<d2>... <v1> <v2> ...
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so a write/read
//! cycle is bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::params::{ParamVector, Slice};
use crate::error::{Error, Result};

const MAGIC: &str = "nasmc-checkpoint 1";

fn corrupt<T>(line: usize, msg: impl std::fmt::Display) -> Result<T> {
    Err(Error::Checkpoint(format!("corrupt checkpoint (line {line}): {msg}")))
}

pub fn to_string(meta: &BTreeMap<String, String>, params: &ParamVector) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    for (k, v) in meta {
        let _ = writeln!(out, "meta {k} {v}");
    }
    for s in params.layout() {
        let shape: Vec<String> = s.shape.iter().map(|d| d.to_string()).collect();
        let _ = write!(out, "slice {} {}", s.name, shape.join("x"));
        for v in s.as_ref().of(params.values()) {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    out
}

pub fn from_str(text: &str) -> Result<(BTreeMap<String, String>, ParamVector)> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == MAGIC => {}
        _ => return corrupt(1, "missing header"),
    }
    let mut meta = BTreeMap::new();
    let mut layout = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("meta") => {
                let key = match parts.next() {
                    Some(k) => k.to_string(),
                    None => return corrupt(lineno, "meta without key"),
                };
                let value: Vec<&str> = parts.collect();
                meta.insert(key, value.join(" "));
            }
            Some("slice") => {
                let name = match parts.next() {
                    Some(n) => n.to_string(),
                    None => return corrupt(lineno, "slice without name"),
                };
                let shape: Vec<usize> = match parts.next() {
                    Some(s) => match s.split('x').map(|d| d.parse::<usize>()).collect() {
                        Ok(v) => v,
                        Err(e) => return corrupt(lineno, format!("bad shape '{s}': {e}")),
                    },
                    None => return corrupt(lineno, "slice without shape"),
                };
                let offset = values.len();
                for tok in parts {
                    match tok.parse::<f64>() {
                        Ok(v) => values.push(v),
                        Err(e) => return corrupt(lineno, format!("bad value '{tok}': {e}")),
                    }
                }
                let slice = Slice { name, offset, shape };
                if values.len() - offset != slice.len() {
                    return corrupt(
                        lineno,
                        format!("slice '{}' has {} values, shape needs {}", slice.name, values.len() - offset, slice.len()),
                    );
                }
                layout.push(slice);
            }
            Some(other) => return corrupt(lineno, format!("unknown record '{other}'")),
            None => {}
        }
    }
    let params = ParamVector::from_parts(layout, values).map_err(|e| Error::Checkpoint(format!("corrupt checkpoint: {e}")))?;
    Ok((meta, params))
}

pub fn write(path: &Path, meta: &BTreeMap<String, String>, params: &ParamVector) -> Result<()> {
    std::fs::write(path, to_string(meta, params))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<(BTreeMap<String, String>, ParamVector)> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::Checkpoint(format!("checkpoint not found: {}", path.display()))),
        Err(e) => return Err(e.into()),
    };
    from_str(&text)
}
