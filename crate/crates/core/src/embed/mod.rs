//! Per-period CBOW embeddings and exact nearest-neighbour queries.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! magic  b"SEMSHEMB"
//! u32    version (1)
//! u64    |V|
//! u32    d
//! |V| x  { u32 byte length, UTF-8 term, u64 frequency }
//! |V|*d  f32, row-major, row i = term i
//! u32    metadata length, then that many bytes of JSON (training config and report)
//! ```
//!
//! The text format is the usual word2vec one: a `|V| d` header line followed by
//! `term v1 .. vd` per line.

mod cbow;
pub(crate) mod neighbors;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use cbow::{encode_sentences, train_cbow, train_cbow_tokens, EmbedConfig, TrainingReport, SUBSAMPLE_THRESHOLD};
pub use neighbors::{cosine_distance, neighborhood, Metric, NeighborIndex, Neighborhood};

use crate::corpus::Vocabulary;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SEMSHEMB";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSpace {
    pub name: String,
    vocab: Arc<Vocabulary>,
    dim: usize,
    vectors: Vec<f32>,
    config: EmbedConfig,
    report: TrainingReport,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    name: String,
    config: EmbedConfig,
    report: TrainingReport,
}

impl EmbeddingSpace {
    pub(crate) fn from_parts(vocab: Arc<Vocabulary>, dim: usize, vectors: Vec<f32>, config: EmbedConfig, report: TrainingReport) -> Self {
        Self {
            name: String::new(),
            vocab,
            dim,
            vectors,
            config,
            report,
        }
    }

    /// Wraps an existing matrix (row `i` = vocabulary term `i`).
    pub fn from_matrix(vocab: Arc<Vocabulary>, dim: usize, vectors: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding", "dimension must be positive"));
        }
        if vectors.len() != vocab.len() * dim {
            return Err(Error::invalid(
                "embedding",
                format!("matrix has {} values, expected {} x {}", vectors.len(), vocab.len(), dim),
            ));
        }
        if vectors.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("embedding matrix"));
        }
        let config = EmbedConfig { dim, ..EmbedConfig::default() };
        Ok(Self::from_parts(vocab, dim, vectors, config, TrainingReport::default()))
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, term: &str) -> Option<&[f32]> {
        self.vocab.get(term).map(|i| self.vector(i))
    }

    pub fn freq(&self, i: usize) -> u64 {
        self.vocab.freq(i)
    }

    pub fn config(&self) -> &EmbedConfig {
        &self.config
    }

    pub fn report(&self) -> &TrainingReport {
        &self.report
    }

    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for (term, freq) in self.vocab.iter() {
            w.write_all(&(term.len() as u32).to_le_bytes())?;
            w.write_all(term.as_bytes())?;
            w.write_all(&freq.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.vectors.len() * 4);
        for x in &self.vectors {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
        let meta = serde_json::to_vec(&Metadata {
            name: self.name.clone(),
            config: self.config.clone(),
            report: self.report.clone(),
        })?;
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(&meta)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        let bad = |d: &str| Error::format("embedding file", d);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let n = read_u64(&mut r)? as usize;
        let dim = read_u32(&mut r)? as usize;
        if dim == 0 {
            return Err(bad("zero dimension"));
        }
        let mut entries = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let len = read_u32(&mut r)? as usize;
            let mut bytes = vec![0u8; len];
            r.read_exact(&mut bytes).map_err(|_| bad("truncated vocabulary"))?;
            let term = String::from_utf8(bytes).map_err(|_| bad("term is not UTF-8"))?;
            entries.push((term, read_u64(&mut r)?));
        }
        let vocab = Arc::new(Vocabulary::from_ordered(entries)?);
        let mut raw = vec![0u8; n * dim * 4];
        r.read_exact(&mut raw).map_err(|_| bad("truncated matrix"))?;
        let vectors: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let mut space = Self::from_matrix(vocab, dim, vectors)?;
        if let Ok(len) = read_u32(&mut r) {
            let mut meta = vec![0u8; len as usize];
            r.read_exact(&mut meta).map_err(|_| bad("truncated metadata"))?;
            let meta: Metadata = serde_json::from_slice(&meta)?;
            space.name = meta.name;
            space.config = meta.config;
            space.report = meta.report;
        }
        Ok(space)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_binary(BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_binary(BufReader::new(f))
    }

    pub fn write_text(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{} {}", self.len(), self.dim)?;
        for i in 0..self.len() {
            write!(w, "{}", self.vocab.term(i))?;
            for x in self.vector(i) {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the text format. The format carries no frequencies, so they are
    /// taken from `freqs` when given and set to zero otherwise.
    pub fn read_text(r: impl BufRead, freqs: Option<&Vocabulary>) -> Result<Self> {
        let bad = |d: String| Error::format("embedding text", d);
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))??;
        let mut it = header.split_whitespace();
        let (n, dim): (usize, usize) = match (it.next().map(str::parse), it.next().map(str::parse)) {
            (Some(Ok(n)), Some(Ok(d))) => (n, d),
            _ => return Err(bad(format!("bad header `{header}`"))),
        };
        let mut entries = Vec::with_capacity(n);
        let mut vectors = Vec::with_capacity(n * dim);
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            let term = parts.next().unwrap_or_default().to_string();
            let before = vectors.len();
            for p in parts.filter(|p| !p.is_empty()) {
                vectors.push(p.parse::<f32>().map_err(|_| bad(format!("line {}: bad float `{p}`", lineno + 2)))?);
            }
            if vectors.len() - before != dim {
                return Err(bad(format!("line {}: expected {dim} values", lineno + 2)));
            }
            let freq = freqs.map_or(0, |v| v.freq_of(&term));
            entries.push((term, freq));
        }
        if entries.len() != n {
            return Err(bad(format!("header promises {n} rows, found {}", entries.len())));
        }
        Self::from_matrix(Arc::new(Vocabulary::from_ordered(entries)?), dim, vectors)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::format("embedding file", "truncated"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| Error::format("embedding file", "truncated"))?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> EmbeddingSpace {
        let vocab = Arc::new(Vocabulary::from_ordered(vec![("a".into(), 9), ("b_c".into(), 7), ("é".into(), 3)]).unwrap());
        EmbeddingSpace::from_matrix(vocab, 2, vec![1.0, 0.5, -0.25, 3.0, 1e-7, -2.5])
            .unwrap()
            .with_name("P")
    }

    #[test]
    fn binary_round_trip() {
        let s = space();
        let mut buf = Vec::new();
        s.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        let back = EmbeddingSpace::read_binary(&buf[..]).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn binary_rejects_truncation() {
        let mut buf = Vec::new();
        space().write_binary(&mut buf).unwrap();
        assert!(EmbeddingSpace::read_binary(&buf[..40]).is_err());
        buf[0] = b'X';
        assert!(EmbeddingSpace::read_binary(&buf[..]).is_err());
    }

    #[test]
    fn text_round_trip() {
        let s = space();
        let mut buf = Vec::new();
        s.write_text(&mut buf).unwrap();
        let back = EmbeddingSpace::read_text(&buf[..], Some(s.vocab())).unwrap();
        assert_eq!(back.vectors(), s.vectors());
        assert_eq!(back.vocab().freqs(), s.vocab().freqs());
    }

    #[test]
    fn rejects_shape_mismatch() {
        let vocab = Arc::new(Vocabulary::from_ordered(vec![("a".into(), 1)]).unwrap());
        assert!(EmbeddingSpace::from_matrix(vocab.clone(), 2, vec![1.0]).is_err());
        assert!(EmbeddingSpace::from_matrix(vocab, 1, vec![f32::NAN]).is_err());
    }
}
