//! `key = value` text format used for config files and config echoes.
//!
//! One pair per line; `#` starts a comment; blank lines are ignored. Keys keep
//! their file order.

use std::path::Path;

use crate::{Error, Result};

pub type Pairs = Vec<(String, String)>;

pub fn parse(text: &str, origin: &str) -> Result<Pairs> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            });
        };
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                message: "empty key".into(),
            });
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read(path: &Path) -> Result<Pairs> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, &path.display().to_string())
}

pub fn render(pairs: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        s.push_str(k);
        s.push_str(" = ");
        s.push_str(v);
        s.push('\n');
    }
    s
}

pub fn get<'a>(pairs: &'a [(String, String)], key: &str) -> Option<&'a str> {
    pairs
        .iter()
        .rev()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
}

pub fn parse_value<T: std::str::FromStr>(pairs: &[(String, String)], key: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match get(pairs, key) {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|e| Error::Config(format!("bad value `{v}` for `{key}`: {e}"))),
    }
}
