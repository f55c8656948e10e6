//! Thresholded cosine-similarity graph over an [`EmbeddingSet`].
//!
//! Two items are joined when their cosine similarity reaches `theta`; the
//! edge weight is `1 / (1 - cs)`, so weights start at `1 / (1 - theta)` and
//! grow without bound as the similarity approaches one. Weights are capped at
//! [`MAX_EDGE_WEIGHT`] so that duplicate vectors stay finite.

use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::embedding_io::{EmbeddingSet, MIN_NORM};
use crate::parallel;

/// Largest weight an edge can carry; equals `1 / (1 - SIMILARITY_CAP)`.
pub const MAX_EDGE_WEIGHT: f64 = 1e9;

/// Similarities are treated as at most this value when mapped to a weight.
pub const SIMILARITY_CAP: f64 = 1.0 - 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("theta must lie in [0, 1) (at most 1 - 1e-9), got {0}")]
    ThetaOutOfRange(f64),
    #[error("cosine similarity of a zero-norm vector")]
    ZeroNorm,
    #[error("vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("cannot build a graph over an empty embedding set")]
    Empty,
    #[error("invalid edge ({0}, {1}): {2}")]
    InvalidEdge(usize, usize, &'static str),
}

pub fn validate_theta(theta: f64) -> Result<(), GraphError> {
    if (0.0..=SIMILARITY_CAP).contains(&theta) {
        Ok(())
    } else {
        Err(GraphError::ThetaOutOfRange(theta))
    }
}

/// Cosine similarity computed in `f64` and clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64, GraphError> {
    if a.len() != b.len() {
        return Err(GraphError::LengthMismatch(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na < MIN_NORM || nb < MIN_NORM {
        return Err(GraphError::ZeroNorm);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Maps a similarity to an edge weight: zero below `theta`, otherwise
/// `1 / (1 - cs)` capped at [`MAX_EDGE_WEIGHT`].
///
/// Weights in `[10^d, 10^(d+1))` are rounded to multiples of `10^(2d-13)`.
/// That spacing exceeds the error one ulp of `cs` causes after the
/// cancellation in `1 - cs`, so decimal similarities land on their decimal
/// weights (0.9 gives exactly 10, 0.95 exactly 20), and it stays far below
/// the precision of f32 embeddings. Rounding keeps the map monotone.
pub fn edge_weight(cs: f64, theta: f64) -> f64 {
    if cs < theta {
        return 0.0;
    }
    let w = 1.0 / (1.0 - cs);
    if w >= MAX_EDGE_WEIGHT {
        return MAX_EDGE_WEIGHT;
    }
    const POW10: [f64; 14] = [
        1e0, 1e1, 1e2, 1e3, 1e4, 1e5, 1e6, 1e7, 1e8, 1e9, 1e10, 1e11, 1e12, 1e13,
    ];
    // w >= 1 since cs >= theta >= 0, and w < 1e9, so d is in 0..=8.
    let d = (w.log10().floor() as i32).clamp(0, 8);
    let exp = 2 * d - 13;
    if exp < 0 {
        let scale = POW10[(-exp) as usize];
        (w * scale).round() / scale
    } else {
        let step = POW10[exp as usize];
        (w / step).round() * step
    }
}

/// Sparse undirected weighted graph in CSR layout.
///
/// Rows are sorted by neighbor index, every edge is stored in both
/// directions, and there are no self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
    weights: Vec<f64>,
    degrees: Vec<f64>,
    total_weight: f64,
    theta: f64,
}

impl SimilarityGraph {
    /// Builds a graph from an undirected edge list (each edge once, any
    /// orientation). Weights must be finite and positive.
    pub fn from_edges(
        n: usize,
        edges: &[(usize, usize, f64)],
        theta: f64,
    ) -> Result<Self, GraphError> {
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
        for &(a, b, w) in edges {
            if a >= n || b >= n {
                return Err(GraphError::InvalidEdge(a, b, "endpoint out of range"));
            }
            if a == b {
                return Err(GraphError::InvalidEdge(a, b, "self-loop"));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(GraphError::InvalidEdge(
                    a,
                    b,
                    "weight must be finite and positive",
                ));
            }
            rows[a].push((b as u32, w));
            rows[b].push((a as u32, w));
        }
        for (a, row) in rows.iter_mut().enumerate() {
            row.sort_by_key(|&(b, _)| b);
            if let Some(pair) = row.windows(2).find(|p| p[0].0 == p[1].0) {
                return Err(GraphError::InvalidEdge(
                    a,
                    pair[0].0 as usize,
                    "duplicate edge",
                ));
            }
        }
        Ok(Self::from_rows(rows, theta))
    }

    fn from_rows(rows: Vec<Vec<(u32, f64)>>, theta: f64) -> Self {
        let n = rows.len();
        let nnz = rows.iter().map(Vec::len).sum();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::with_capacity(nnz);
        let mut weights = Vec::with_capacity(nnz);
        let mut degrees = Vec::with_capacity(n);
        let mut total_weight = 0.0;
        offsets.push(0);
        for (a, row) in rows.into_iter().enumerate() {
            let mut k = 0.0;
            for (b, w) in row {
                k += w;
                if (b as usize) > a {
                    total_weight += w;
                }
                neighbors.push(b);
                weights.push(w);
            }
            degrees.push(k);
            offsets.push(neighbors.len());
        }
        Self {
            offsets,
            neighbors,
            weights,
            degrees,
            total_weight,
            theta,
        }
    }

    pub fn node_count(&self) -> usize {
        self.degrees.len()
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Weighted degree `k_a`.
    pub fn degree(&self, a: usize) -> f64 {
        self.degrees[a]
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    /// Sum of all edge weights, each undirected edge counted once.
    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    /// Neighbors of `a` in increasing index order.
    pub fn neighbors(&self, a: usize) -> impl ExactSizeIterator<Item = (usize, f64)> + '_ {
        let range = self.offsets[a]..self.offsets[a + 1];
        self.neighbors[range.clone()]
            .iter()
            .zip(&self.weights[range])
            .map(|(&b, &w)| (b as usize, w))
    }

    pub fn weight(&self, a: usize, b: usize) -> Option<f64> {
        let range = self.offsets[a]..self.offsets[a + 1];
        let row = &self.neighbors[range.clone()];
        row.binary_search(&(b as u32))
            .ok()
            .map(|i| self.weights[range.start + i])
    }

    /// Every undirected edge once as `(a, b, w)` with `a < b`, in row order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.node_count()).flat_map(move |a| {
            self.neighbors(a)
                .filter(move |&(b, _)| b > a)
                .map(move |(b, w)| (a, b, w))
        })
    }

    /// Graph restricted to `members`; local node `i` is `members[i]`.
    /// Original edge weights are kept.
    pub fn induced_subgraph(&self, members: &[usize]) -> SimilarityGraph {
        let mut local = vec![u32::MAX; self.node_count()];
        for (i, &m) in members.iter().enumerate() {
            local[m] = i as u32;
        }
        let rows = members
            .iter()
            .map(|&m| {
                let mut row: Vec<(u32, f64)> = self
                    .neighbors(m)
                    .filter(|&(b, _)| local[b] != u32::MAX)
                    .map(|(b, w)| (local[b], w))
                    .collect();
                row.sort_by_key(|&(b, _)| b);
                row
            })
            .collect();
        Self::from_rows(rows, self.theta)
    }

    /// Writes `src_id\tdst_id\tweight` for each undirected edge once, with
    /// the lower index first and weights at 12 significant digits.
    pub fn write_edge_tsv<W: Write>(&self, ids: &[String], mut w: W) -> io::Result<()> {
        for (a, b, weight) in self.edges() {
            writeln!(
                w,
                "{}\t{}\t{}",
                ids[a],
                ids[b],
                format_significant(weight, 12)
            )?;
        }
        Ok(())
    }
}

/// Formats like C's `%.{digits}g`.
pub fn format_significant(value: f64, digits: usize) -> String {
    if value == 0.0 || !value.is_finite() {
        return format!("{value}");
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, value);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let mantissa = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_fraction(&format!("{value:.decimals$}")).to_owned()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Builds the thresholded similarity graph with exact pairwise comparison.
///
/// Rows are processed in parallel on `threads` workers (0 = all cores); the
/// result does not depend on the thread count.
pub fn build_graph(
    emb: &EmbeddingSet,
    theta: f64,
    threads: usize,
) -> Result<SimilarityGraph, GraphError> {
    validate_theta(theta)?;
    if emb.is_empty() {
        return Err(GraphError::Empty);
    }
    let n = emb.len();
    let dim = emb.dim();
    let mut flat = Vec::with_capacity(n * dim);
    let mut norms = Vec::with_capacity(n);
    for v in emb.vectors() {
        let start = flat.len();
        flat.extend(v.iter().map(|&x| f64::from(x)));
        let norm = flat[start..].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < MIN_NORM {
            return Err(GraphError::ZeroNorm);
        }
        norms.push(norm);
    }
    let row = |a: usize| -> Vec<(u32, f64)> {
        let va = &flat[a * dim..(a + 1) * dim];
        let mut out = Vec::new();
        for b in a + 1..n {
            let vb = &flat[b * dim..(b + 1) * dim];
            let dot: f64 = va.iter().zip(vb).map(|(x, y)| x * y).sum();
            let cs = (dot / (norms[a] * norms[b])).clamp(-1.0, 1.0);
            if cs >= theta {
                out.push((b as u32, edge_weight(cs, theta)));
            }
        }
        out
    };
    let upper: Vec<Vec<(u32, f64)>> = parallel::install(threads, || {
        (0..n).into_par_iter().with_min_len(8).map(row).collect()
    });

    // Mirror the upper triangle. Visiting rows in order keeps every row
    // sorted: lower neighbors arrive ascending, then the upper part follows.
    let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
    for (a, up) in upper.iter().enumerate() {
        for &(b, w) in up {
            rows[b as usize].push((a as u32, w));
        }
    }
    for (row, up) in rows.iter_mut().zip(upper) {
        row.extend(up);
    }
    Ok(SimilarityGraph::from_rows(rows, theta))
}
