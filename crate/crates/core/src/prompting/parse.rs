use serde_json::{Map, Value};

use crate::error::{Error, Result};

use super::template::{DEFAULT_WORD_LIMIT, SUMMARY_PLACEMENT, SUMMARY_PREFIX};

/// Per-panel descriptions in raster order plus the summary sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetaDescriptions {
    pub rows: usize,
    pub cols: usize,
    pub descriptions: Vec<String>,
    pub summary: String,
    pub warnings: Vec<String>,
}

impl MetaDescriptions {
    pub fn get(&self, row: usize, col: usize) -> &str {
        &self.descriptions[row * self.cols + col]
    }

    /// The `{"rowR": {"imageC": ...}, "summary": ...}` shape the parser reads.
    pub fn to_json(&self) -> Value {
        let mut root = Map::new();
        for r in 0..self.rows {
            let row: Map<String, Value> = (0..self.cols)
                .map(|c| (format!("image{}", c + 1), Value::String(self.get(r, c).to_owned())))
                .collect();
            root.insert(format!("row{}", r + 1), Value::Object(row));
        }
        root.insert("summary".into(), Value::String(self.summary.clone()));
        Value::Object(root)
    }
}

/// Keeps the first `limit` whitespace-separated words.
pub fn truncate_words(text: &str, limit: usize) -> Option<String> {
    let words: Vec<&str> = text.split_whitespace().collect();
    (words.len() > limit).then(|| words[..limit].join(" "))
}

pub fn parse_meta_response(text: &str, rows: usize, cols: usize) -> Result<MetaDescriptions> {
    parse_meta_response_with_limit(text, rows, cols, DEFAULT_WORD_LIMIT)
}

pub fn parse_meta_response_with_limit(
    text: &str,
    rows: usize,
    cols: usize,
    word_limit: usize,
) -> Result<MetaDescriptions> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(format!("grid {rows}x{cols} has no panels")));
    }
    let value: Value = serde_json::from_str(text.trim())?;
    let root = value
        .as_object()
        .ok_or_else(|| Error::format("meta response", "top level is not an object"))?;

    let mut missing = Vec::new();
    let mut descriptions = Vec::with_capacity(rows * cols);
    let mut warnings = Vec::new();
    for r in 1..=rows {
        let key = format!("row{r}");
        let Some(row) = root.get(&key) else {
            missing.push(key);
            continue;
        };
        let row = row
            .as_object()
            .ok_or_else(|| Error::format("meta response", format!("{key} is not an object")))?;
        for c in 1..=cols {
            let path = format!("{key}.image{c}");
            match row.get(&format!("image{c}")) {
                None => missing.push(path),
                Some(Value::String(s)) => {
                    let s = s.trim();
                    match truncate_words(s, word_limit) {
                        Some(cut) => {
                            let w = format!("{path} exceeds {word_limit} words; truncated");
                            log::warn!("{w}");
                            warnings.push(w);
                            descriptions.push(cut);
                        }
                        None => descriptions.push(s.to_owned()),
                    }
                }
                Some(_) => return Err(Error::format("meta response", format!("{path} is not a string"))),
            }
        }
    }
    let summary = match root.get("summary") {
        None => {
            missing.push("summary".into());
            String::new()
        }
        Some(Value::String(s)) => s.trim().to_owned(),
        Some(_) => return Err(Error::format("meta response", "summary is not a string")),
    };
    if !missing.is_empty() {
        return Err(Error::MissingKeys(missing));
    }
    if !summary.starts_with(SUMMARY_PREFIX) {
        return Err(Error::format(
            "meta response",
            format!("summary does not start with \"{SUMMARY_PREFIX}\""),
        ));
    }
    if !summary.contains(SUMMARY_PLACEMENT) {
        let w = format!("summary lacks \"{SUMMARY_PLACEMENT}\"");
        log::warn!("{w}");
        warnings.push(w);
    }
    Ok(MetaDescriptions {
        rows,
        cols,
        descriptions,
        summary,
        warnings,
    })
}
