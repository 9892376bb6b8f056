//! Fixed-capacity FIFO store of unit-norm pattern vectors with exact top-K
//! inner-product retrieval.
//!
//! Rows are kept L2-normalized, so the inner product with a normalized query
//! is the cosine similarity. Retrieval returns plain copies of the rows; when
//! they are fed into a [`Graph`](crate::autograd::Graph) they enter as
//! constant leaves and never receive gradient.
//!
//! A `PatternMemory` has a single writer. Reads may run concurrently between
//! writes; callers provide the synchronization.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::par;

const MAGIC: &[u8; 4] = b"HMPM";
const VERSION: u32 = 1;

/// Scales `x` to unit L2 norm. Returns `None` for the zero vector, which the
/// memory skips on insert.
pub fn normalize_pattern(x: &[f64]) -> Option<Vec<f64>> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 && norm.is_finite() {
        Some(x.iter().map(|v| v / norm).collect())
    } else {
        None
    }
}

/// Queries scored together per pass over the memory.
const GROUP: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct PatternMemory {
    capacity: usize,
    dim: usize,
    buffer: Vec<f64>,
    cursor: usize,
    count: usize,
}

/// Top-K rows for one query, best first. Ties go to the lower buffer slot.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    /// `k_effective * dim` values, row-major.
    pub patterns: Vec<f64>,
    pub similarities: Vec<f64>,
    pub indices: Vec<usize>,
}

impl RetrievalResult {
    pub fn k_effective(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Retrieval for many queries at once. Every query gets the same
/// `k_effective = min(K, count)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchRetrieval {
    pub queries: usize,
    pub k_effective: usize,
    pub dim: usize,
    /// `[queries, k_effective, dim]`.
    pub patterns: Vec<f64>,
    /// `[queries, k_effective]`.
    pub similarities: Vec<f64>,
    pub indices: Vec<usize>,
}

impl PatternMemory {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::config(format!(
                "pattern memory needs positive capacity and dim, got {capacity} x {dim}"
            )));
        }
        Ok(Self {
            capacity,
            dim,
            buffer: vec![0.0; capacity * dim],
            cursor: 0,
            count: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn clear(&mut self) {
        self.buffer.iter_mut().for_each(|v| *v = 0.0);
        self.cursor = 0;
        self.count = 0;
    }

    /// Buffer slot `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.buffer[i * self.dim..(i + 1) * self.dim]
    }

    /// Overwrites slot `i` verbatim (no normalization). For tests that probe
    /// how stored values affect a model.
    pub fn overwrite_row(&mut self, i: usize, values: &[f64]) -> Result<()> {
        if i >= self.count || values.len() != self.dim {
            return Err(Error::shape(format!(
                "overwrite_row({i}) with {} values; memory holds {} rows of {}",
                values.len(),
                self.count,
                self.dim
            )));
        }
        self.buffer[i * self.dim..(i + 1) * self.dim].copy_from_slice(values);
        Ok(())
    }

    /// Stored rows from oldest to newest.
    pub fn rows_fifo(&self) -> Vec<&[f64]> {
        let start = if self.count < self.capacity {
            0
        } else {
            self.cursor
        };
        (0..self.count)
            .map(|k| self.row((start + k) % self.capacity))
            .collect()
    }

    /// Normalizes and stores one pattern. Returns `false` when it was the zero
    /// vector and got skipped.
    pub fn insert(&mut self, pattern: &[f64]) -> Result<bool> {
        if pattern.len() != self.dim {
            return Err(Error::shape(format!(
                "pattern of length {} for memory of dim {}",
                pattern.len(),
                self.dim
            )));
        }
        let Some(unit) = normalize_pattern(pattern) else {
            return Ok(false);
        };
        let at = self.cursor * self.dim;
        self.buffer[at..at + self.dim].copy_from_slice(&unit);
        self.cursor = (self.cursor + 1) % self.capacity;
        self.count = (self.count + 1).min(self.capacity);
        Ok(true)
    }

    /// Inserts `len / dim` patterns in order. Returns how many were stored.
    pub fn insert_batch(&mut self, patterns: &[f64]) -> Result<usize> {
        if !patterns.len().is_multiple_of(self.dim) {
            return Err(Error::shape(format!(
                "batch of {} values is not a whole number of dim-{} patterns",
                patterns.len(),
                self.dim
            )));
        }
        let mut stored = 0;
        for p in patterns.chunks_exact(self.dim) {
            stored += usize::from(self.insert(p)?);
        }
        Ok(stored)
    }

    fn scan(&self, query: &[f64], k: usize) -> Vec<(f64, usize)> {
        self.scan_group(&[query], k).pop().unwrap_or_default()
    }

    /// Top-k for up to [`GROUP`] queries in one pass over the rows. Each
    /// score is summed in feature order from 0.0, so it does not depend on
    /// how queries are grouped.
    fn scan_group(&self, queries: &[&[f64]], k: usize) -> Vec<Vec<(f64, usize)>> {
        let k = k.min(self.count);
        let g = queries.len();
        debug_assert!(g <= GROUP);
        // Kept sorted best-first. Rows are visited in slot order, so a later
        // row only displaces an entry on a strictly higher score.
        let mut best: Vec<Vec<(f64, usize)>> = (0..g).map(|_| Vec::with_capacity(k + 1)).collect();
        if k == 0 {
            return best;
        }
        // Feature-major copy of the queries: lanes[t][j] = queries[j][t].
        let mut lanes = vec![[0.0f64; GROUP]; self.dim];
        for (j, q) in queries.iter().enumerate() {
            for (lane, &v) in lanes.iter_mut().zip(q.iter()) {
                lane[j] = v;
            }
        }
        // Score a row must beat to enter each list; -inf until the list is full.
        let mut floor = [f64::NEG_INFINITY; GROUP];
        for i in 0..self.count {
            let row = self.row(i);
            let mut scores = [0.0f64; GROUP];
            for (&r, lane) in row.iter().zip(&lanes) {
                for j in 0..GROUP {
                    scores[j] += r * lane[j];
                }
            }
            if scores[..g].iter().zip(&floor[..g]).all(|(s, f)| s <= f) {
                continue;
            }
            for ((list, &s), f) in best.iter_mut().zip(&scores[..g]).zip(&mut floor) {
                if s <= *f {
                    continue;
                }
                let pos = list.partition_point(|&(b, _)| b >= s);
                list.insert(pos, (s, i));
                list.truncate(k);
                if list.len() == k {
                    *f = list[k - 1].0;
                }
            }
        }
        best
    }

    /// Exact top-K by inner product. An empty memory gives an empty result.
    pub fn top_k(&self, query: &[f64], k: usize) -> Result<RetrievalResult> {
        if query.len() != self.dim {
            return Err(Error::shape(format!(
                "query of length {} for memory of dim {}",
                query.len(),
                self.dim
            )));
        }
        let best = self.scan(query, k);
        let mut patterns = Vec::with_capacity(best.len() * self.dim);
        for &(_, i) in &best {
            patterns.extend_from_slice(self.row(i));
        }
        Ok(RetrievalResult {
            patterns,
            similarities: best.iter().map(|b| b.0).collect(),
            indices: best.iter().map(|b| b.1).collect(),
        })
    }

    /// Runs [`top_k`](Self::top_k) for each `dim`-long query in `queries`.
    pub fn top_k_batch(&self, queries: &[f64], k: usize) -> Result<BatchRetrieval> {
        if !queries.len().is_multiple_of(self.dim) {
            return Err(Error::shape(format!(
                "{} query values are not a whole number of dim-{} queries",
                queries.len(),
                self.dim
            )));
        }
        let rows: Vec<&[f64]> = queries.chunks_exact(self.dim).collect();
        let groups: Vec<&[&[f64]]> = rows.chunks(GROUP).collect();
        let per_query = par::map_slice(&groups, |qs| self.scan_group(qs, k)).into_iter().flatten();
        let k_effective = k.min(self.count);
        let mut out = BatchRetrieval {
            queries: rows.len(),
            k_effective,
            dim: self.dim,
            patterns: Vec::with_capacity(rows.len() * k_effective * self.dim),
            similarities: Vec::with_capacity(rows.len() * k_effective),
            indices: Vec::with_capacity(rows.len() * k_effective),
        };
        for best in per_query {
            for (s, i) in best {
                out.patterns.extend_from_slice(self.row(i));
                out.similarities.push(s);
                out.indices.push(i);
            }
        }
        Ok(out)
    }

    /// Binary snapshot: magic, version, capacity, dim, cursor, count, then
    /// `count` rows of little-endian `f64`.
    pub fn write_snapshot<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for v in [self.capacity, self.dim, self.cursor, self.count] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for v in &self.buffer[..self.count * self.dim] {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a pattern-memory snapshot".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != VERSION {
            return Err(Error::Format(format!(
                "pattern-memory snapshot version {version}, expected {VERSION}"
            )));
        }
        let mut fields = [0usize; 4];
        for f in &mut fields {
            let mut b8 = [0u8; 8];
            r.read_exact(&mut b8)?;
            *f = u64::from_le_bytes(b8) as usize;
        }
        let [capacity, dim, cursor, count] = fields;
        let mut mem = Self::new(capacity, dim)?;
        if count > capacity || cursor >= capacity || (count < capacity && cursor != count) {
            return Err(Error::Format(format!(
                "inconsistent snapshot header: capacity {capacity}, cursor {cursor}, count {count}"
            )));
        }
        for v in &mut mem.buffer[..count * dim] {
            let mut b8 = [0u8; 8];
            r.read_exact(&mut b8)?;
            *v = f64::from_le_bytes(b8);
        }
        mem.cursor = cursor;
        mem.count = count;
        Ok(mem)
    }
}
