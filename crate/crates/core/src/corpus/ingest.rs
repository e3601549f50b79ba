use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use chrono::DateTime;
use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Post, PostStore};
use crate::{Error, Result};

/// Maps the archive's JSON field names onto post fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldSchema {
    pub user: String,
    pub timestamp: String,
    pub text: String,
    pub label: Option<String>,
}

impl Default for FieldSchema {
    fn default() -> Self {
        Self {
            user: "user_id".into(),
            timestamp: "timestamp".into(),
            text: "text".into(),
            label: Some("label".into()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub lines: usize,
    pub accepted: usize,
    pub skipped: usize,
}

pub fn ingest_posts(path: &Path, schema: &FieldSchema) -> Result<(PostStore, IngestReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(BufReader::new(file), schema)
}

pub fn ingest_reader(reader: impl BufRead, schema: &FieldSchema) -> Result<(PostStore, IngestReport)> {
    let mut store = PostStore::new();
    let mut report = IngestReport::default();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        report.lines += 1;
        match parse_line(&line, schema) {
            Ok(post) => {
                report.accepted += 1;
                store.push(post);
            }
            Err(reason) => {
                report.skipped += 1;
                warn!("skipping line {}: {reason}", lineno + 1);
            }
        }
    }
    store.sort();
    Ok((store, report))
}

fn scalar_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn parse_timestamp(v: &Value) -> Option<i64> {
    match v {
        Value::Number(n) => n.as_i64().or_else(|| n.as_f64().filter(|f| f.is_finite()).map(|f| f.floor() as i64)),
        Value::String(s) => s
            .trim()
            .parse::<i64>()
            .ok()
            .or_else(|| DateTime::parse_from_rfc3339(s.trim()).ok().map(|d| d.timestamp())),
        _ => None,
    }
}

fn parse_label(v: &Value) -> Option<bool> {
    match v {
        Value::Bool(b) => Some(*b),
        Value::Number(n) => match n.as_i64()? {
            1 => Some(true),
            0 | -1 => Some(false),
            _ => None,
        },
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "1" | "true" | "pos" | "positive" => Some(true),
            "0" | "-1" | "false" | "neg" | "negative" => Some(false),
            _ => None,
        },
        _ => None,
    }
}

fn parse_line(line: &str, schema: &FieldSchema) -> std::result::Result<Post, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("invalid json: {e}"))?;
    let obj = value.as_object().ok_or("not a json object")?;
    let field = |name: &str| obj.get(name).filter(|v| !v.is_null());

    let user_id = field(&schema.user)
        .and_then(scalar_string)
        .ok_or_else(|| format!("missing `{}`", schema.user))?;
    let timestamp = field(&schema.timestamp)
        .ok_or_else(|| format!("missing `{}`", schema.timestamp))
        .and_then(|v| parse_timestamp(v).ok_or_else(|| format!("unparseable `{}`", schema.timestamp)))?;
    let text = field(&schema.text)
        .and_then(Value::as_str)
        .ok_or_else(|| format!("missing `{}`", schema.text))?;
    if text.trim().is_empty() {
        return Err("empty text".into());
    }
    let label = match schema.label.as_deref().and_then(field) {
        Some(v) => Some(parse_label(v).ok_or("unparseable label")?),
        None => None,
    };
    let reserved = [&schema.user, &schema.timestamp, &schema.text];
    let metadata = obj
        .iter()
        .filter(|(k, _)| !reserved.contains(k) && Some(k.as_str()) != schema.label.as_deref())
        .filter_map(|(k, v)| scalar_string(v).map(|s| (k.clone(), s)))
        .collect();
    Ok(Post {
        user_id,
        timestamp,
        text: text.to_string(),
        label,
        metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ingest(s: &str) -> (PostStore, IngestReport) {
        ingest_reader(s.as_bytes(), &FieldSchema::default()).unwrap()
    }

    #[test]
    fn valid_lines_group_by_user() {
        let (store, report) = ingest(
            r#"{"user_id":"a","timestamp":10,"text":"hi"}
{"user_id":"b","timestamp":11,"text":"yo","label":1}
{"user_id":"a","timestamp":12,"text":"again"}"#,
        );
        assert_eq!(report.skipped, 0);
        assert_eq!(report.accepted, 3);
        assert_eq!(store.posts("a").unwrap().len(), 2);
        assert_eq!(store.label("b"), Some(true));
    }

    #[test]
    fn missing_text_is_skipped() {
        let (store, report) = ingest(
            r#"{"user_id":"a","timestamp":10}
{"user_id":"a","timestamp":11,"text":"ok"}
not json"#,
        );
        assert_eq!(report.skipped, 2);
        assert_eq!(store.post_count(), 1);
    }

    #[test]
    fn posts_sorted_per_user() {
        let (store, _) = ingest(
            r#"{"user_id":"a","timestamp":40,"text":"x"}
{"user_id":"b","timestamp":5,"text":"x"}
{"user_id":"a","timestamp":7,"text":"x"}
{"user_id":"b","timestamp":2,"text":"x"}"#,
        );
        // sort oracle over the raw timestamps
        for (user, raw) in [("a", vec![40, 7]), ("b", vec![5, 2])] {
            let mut expected = raw.clone();
            expected.sort_unstable();
            let got: Vec<i64> = store.posts(user).unwrap().iter().map(|p| p.timestamp).collect();
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn custom_schema_and_rfc3339() {
        let schema = FieldSchema {
            user: "author".into(),
            timestamp: "created".into(),
            text: "body".into(),
            label: None,
        };
        let line = r#"{"author":"x","created":"2020-03-01T00:00:00Z","body":"t","subreddit":"pics"}"#;
        let (store, _) = ingest_reader(line.as_bytes(), &schema).unwrap();
        let post = &store.posts("x").unwrap()[0];
        assert_eq!(post.timestamp, 1_583_020_800);
        assert_eq!(post.metadata.get("subreddit").map(String::as_str), Some("pics"));
    }

    #[test]
    fn unreadable_file_is_fatal() {
        let err = ingest_posts(Path::new("/nonexistent/posts.jsonl"), &FieldSchema::default());
        assert!(matches!(err, Err(Error::Io { .. })));
    }
}
