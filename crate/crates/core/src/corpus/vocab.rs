use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::{Error, Result};

pub const DEFAULT_MAX_VOCAB: usize = 500_000;

/// Term list with a bijective index and corpus frequencies.
///
/// Terms are ordered by frequency (descending) then lexicographically.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    freqs: Vec<u64>,
}

impl Vocabulary {
    /// Keeps terms with frequency >= `min_count`; when more than `max_size`
    /// survive, the most frequent are kept with ties broken lexicographically.
    pub fn from_counts(counts: impl IntoIterator<Item = (String, u64)>, min_count: u64, max_size: usize) -> Self {
        let mut entries: Vec<(String, u64)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        entries.truncate(max_size);
        let mut v = Vocabulary::default();
        for (t, c) in entries {
            v.index.insert(t.clone(), v.terms.len());
            v.terms.push(t);
            v.freqs.push(c);
        }
        v
    }

    pub fn from_streams<'a, I, S>(streams: I, min_count: u64, max_size: usize) -> Self
    where
        I: IntoIterator<Item = &'a S>,
        S: AsRef<[String]> + 'a + ?Sized,
    {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for s in streams {
            for t in s.as_ref() {
                if let Some(c) = counts.get_mut(t.as_str()) {
                    *c += 1;
                } else {
                    counts.insert(t.clone(), 1);
                }
            }
        }
        Self::from_counts(counts, min_count, max_size)
    }

    /// Keeps the given order; duplicate terms are rejected.
    pub fn from_ordered(entries: impl IntoIterator<Item = (String, u64)>) -> Result<Self> {
        let mut v = Vocabulary::default();
        for (t, c) in entries {
            if v.index.contains_key(&t) {
                return Err(Error::invalid("vocabulary", format!("duplicate term `{t}`")));
            }
            v.index.insert(t.clone(), v.terms.len());
            v.terms.push(t);
            v.freqs.push(c);
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn get(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn contains(&self, term: &str) -> bool {
        self.index.contains_key(term)
    }

    pub fn term(&self, i: usize) -> &str {
        &self.terms[i]
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn freq(&self, i: usize) -> u64 {
        self.freqs[i]
    }

    pub fn freqs(&self) -> &[u64] {
        &self.freqs
    }

    /// Zero for terms outside the vocabulary.
    pub fn freq_of(&self, term: &str) -> u64 {
        self.get(term).map_or(0, |i| self.freqs[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.terms.iter().map(String::as_str).zip(self.freqs.iter().copied())
    }

    /// `term,frequency` with a header row.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "term,frequency")?;
        for (t, c) in self.iter() {
            writeln!(w, "{},{c}", csv_field(t))?;
        }
        Ok(())
    }

    pub fn read_csv(r: impl BufRead) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if i == 0 && line.trim() == "term,frequency" {
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (term, freq) = split_last_field(&line).ok_or_else(|| Error::format("vocabulary csv", format!("line {}: `{line}`", i + 1)))?;
            let freq = freq
                .trim()
                .parse::<u64>()
                .map_err(|e| Error::format("vocabulary csv", format!("line {}: {e}", i + 1)))?;
            entries.push((term, freq));
        }
        Self::from_ordered(entries)
    }
}

/// Quotes a CSV field when needed.
pub(crate) fn csv_field(s: &str) -> std::borrow::Cow<'_, str> {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\"")).into()
    } else {
        s.into()
    }
}

/// Splits `field,last` where `field` may be quoted.
pub(crate) fn split_last_field(line: &str) -> Option<(String, &str)> {
    let idx = line.rfind(',')?;
    let (head, tail) = (&line[..idx], &line[idx + 1..]);
    let head = if head.len() >= 2 && head.starts_with('"') && head.ends_with('"') {
        head[1..head.len() - 1].replace("\"\"", "\"")
    } else {
        head.to_string()
    };
    Some((head, tail))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_keeps_frequent_then_lexicographic() {
        let counts = vec![("b".to_string(), 5), ("a".to_string(), 5), ("c".to_string(), 9), ("d".to_string(), 1)];
        let v = Vocabulary::from_counts(counts, 2, 2);
        assert_eq!(v.terms(), ["c", "a"]);
        assert!(v.freqs().iter().all(|&f| f >= 2));
        for (i, t) in v.terms().iter().enumerate() {
            assert_eq!(v.get(t), Some(i));
        }
    }

    #[test]
    fn csv_round_trip_with_awkward_terms() {
        let v = Vocabulary::from_ordered(vec![("a,b".to_string(), 3), ("q\"x".to_string(), 2), ("plain".to_string(), 1)]).unwrap();
        let mut buf = Vec::new();
        v.write_csv(&mut buf).unwrap();
        let back = Vocabulary::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, v);
    }
}
