use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Vocabulary;
use crate::error::{Error, Result};

/// Per-token vectors indexed like the vocabulary they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    /// Row-major `vocab_size × dim`.
    pub values: Vec<f64>,
    pub frozen: bool,
}

impl EmbeddingTable {
    /// Gaussian `N(0, std²)` table.
    pub fn random<R: Rng>(vocab_size: usize, dim: usize, std: f64, frozen: bool, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let values = (0..vocab_size * dim).map(|_| normal.sample(rng)).collect();
        EmbeddingTable { dim, values, frozen }
    }

    pub fn vocab_size(&self) -> usize {
        self.values.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.values[id * self.dim..(id + 1) * self.dim]
    }

    /// Reads the `V d` text format and maps it onto `vocab`. Tokens missing
    /// from the file get `N(0, 0.1²)` vectors drawn from `rng`. The result is
    /// frozen.
    pub fn parse<R: Rng>(text: &str, vocab: &Vocabulary, rng: &mut R) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::Empty("embedding file".into()))?;
        let mut fields = header.split_whitespace();
        let parse_usize = |s: Option<&str>| -> Result<usize> {
            s.and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Parse { line: 1, message: "expected header `V d`".into() })
        };
        let count = parse_usize(fields.next())?;
        let dim = parse_usize(fields.next())?;
        if dim == 0 {
            return Err(Error::Parse { line: 1, message: "embedding dimension must be positive".into() });
        }
        let mut found: HashMap<usize, Vec<f64>> = HashMap::new();
        let mut rows = 0;
        for (idx, line) in lines {
            let mut parts = line.split_whitespace();
            let token = parts.next().unwrap_or_default();
            let vector: Vec<f64> = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse { line: idx + 1, message: format!("bad float: {e}") })?;
            if vector.len() != dim {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected {dim} values, got {}", vector.len()),
                });
            }
            if let Some(id) = vocab.get(token) {
                found.insert(id, vector);
            }
            rows += 1;
        }
        if rows != count {
            return Err(Error::Parse { line: 1, message: format!("header announces {count} rows, file has {rows}") });
        }
        let mut table = EmbeddingTable::random(vocab.len(), dim, 0.1, true, rng);
        for (id, v) in found {
            table.values[id * dim..(id + 1) * dim].copy_from_slice(&v);
        }
        Ok(table)
    }

    pub fn write(&self, vocab: &Vocabulary) -> String {
        let mut out = format!("{} {}\n", self.vocab_size(), self.dim);
        for (id, token) in vocab.tokens().iter().enumerate() {
            out.push_str(token);
            for v in self.row(id) {
                out.push(' ');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}
