use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

/// Pretrained word vectors keyed by token.
#[derive(Clone, Debug, Default)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f64>>,
    /// Lines dropped for having the wrong number of values.
    pub skipped: usize,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            ..Default::default()
        }
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Reads `token v1 .. v_dim` lines. The first occurrence of a token wins.
pub fn read_embeddings(reader: impl BufRead, dim: usize, lowercase: bool) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::new(dim);
    for line in reader.lines() {
        let line = line.map_err(|e| Error::Data(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
        match values {
            Ok(v) if v.len() == dim => {
                let key = if lowercase {
                    token.to_lowercase()
                } else {
                    token.to_string()
                };
                table.vectors.entry(key).or_insert(v);
            }
            _ => table.skipped += 1,
        }
    }
    if table.vectors.is_empty() {
        return Err(Error::Data(format!(
            "no usable {dim}-dimensional vectors ({} lines skipped)",
            table.skipped
        )));
    }
    if table.skipped > 0 {
        log::warn!("skipped {} embedding lines of the wrong arity", table.skipped);
    }
    Ok(table)
}

pub fn load_embeddings(path: &Path, dim: usize, lowercase: bool) -> Result<EmbeddingTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(file), dim, lowercase)
}
