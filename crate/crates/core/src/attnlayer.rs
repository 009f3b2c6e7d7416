//! A single softmax attention layer over the features of one observation,
//! with rotary positions injected into queries and keys only.

use serde::{Deserialize, Serialize};

use crate::numerics::{DenseMatrix, SeededRng};
use crate::rotary::{attention_score, rotate, RotaryAngles, RotaryError};

#[derive(Debug, thiserror::Error)]
pub enum AttentionError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite measurement {0}")]
    NonFinite(f64),
    #[error("bin edges must be strictly ascending and finite")]
    BadEdges,
    #[error("length mismatch: {0}")]
    Shape(String),
    #[error("cannot aggregate an empty set of outputs")]
    Empty,
    #[error(transparent)]
    Rotary(#[from] RotaryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttentionConfig {
    /// Embedding width `D`; must be even.
    pub dim: usize,
    pub bins: usize,
    pub aggregation: Aggregation,
    /// Divide raw scores by `√D` before the softmax.
    pub scale_scores: bool,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            bins: 10,
            aggregation: Aggregation::Mean,
            scale_scores: true,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<(), AttentionError> {
        if self.dim == 0 || self.dim % 2 != 0 {
            return Err(AttentionError::InvalidConfig(format!(
                "dim = {} violates D = 2d (must be even and positive)",
                self.dim
            )));
        }
        if self.bins == 0 {
            return Err(AttentionError::InvalidConfig("bins must be at least 1".into()));
        }
        Ok(())
    }
}

/// 0 for `x ≤ 0` (zero or missing), otherwise the 1-based index of the
/// interval `[b_k, b_{k+1})` holding `x`, clamped to `1..=B`.
pub fn bin_value(x: f64, edges: &[f64]) -> Result<usize, AttentionError> {
    if !x.is_finite() {
        return Err(AttentionError::NonFinite(x));
    }
    if edges.len() < 2 {
        return Err(AttentionError::BadEdges);
    }
    if x <= 0.0 {
        return Ok(0);
    }
    let bins = edges.len() - 1;
    // number of edges <= x, so [b_{k-1}, b_k) maps to k
    let above = edges.partition_point(|&e| e <= x);
    Ok(above.clamp(1, bins))
}

/// Bin boundaries plus one embedding row per bin (row 0 is the zero/missing
/// token).
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    edges: Vec<f64>,
    table: DenseMatrix,
}

impl Codebook {
    pub fn new(edges: Vec<f64>, table: DenseMatrix) -> Result<Self, AttentionError> {
        if edges.len() < 2 || edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AttentionError::BadEdges);
        }
        if table.rows() != edges.len() {
            return Err(AttentionError::Shape(format!(
                "{} bins need {} table rows, got {}",
                edges.len() - 1,
                edges.len(),
                table.rows()
            )));
        }
        if !table.is_finite() {
            return Err(AttentionError::NonFinite(f64::NAN));
        }
        Ok(Self { edges, table })
    }

    /// Quantile edges over the positive training values and a frozen
    /// `N(0, 1/D)` table. Duplicate quantiles are merged, so the bin count
    /// can fall below `cfg.bins`; with no positive values a single bin
    /// `[0, 1)` is used.
    pub fn from_training(values: &[f64], cfg: &AttentionConfig, rng: &mut SeededRng) -> Result<Self, AttentionError> {
        cfg.validate()?;
        if let Some(&bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(AttentionError::NonFinite(bad));
        }
        let mut positive: Vec<f64> = values.iter().copied().filter(|&v| v > 0.0).collect();
        positive.sort_by(f64::total_cmp);
        let mut edges = vec![0.0];
        if !positive.is_empty() {
            let n = positive.len();
            for k in 1..cfg.bins {
                let q = positive[(k * n / cfg.bins).min(n - 1)];
                if q > *edges.last().unwrap() {
                    edges.push(q);
                }
            }
            let top = positive[n - 1];
            if top > *edges.last().unwrap() {
                edges.push(top);
            }
        }
        if edges.len() < 2 {
            edges.push(1.0);
        }
        let std = 1.0 / (cfg.dim as f64).sqrt();
        let table = DenseMatrix::from_fn(edges.len(), cfg.dim, |_, _| std * rng.normal());
        Self::new(edges, table)
    }

    pub fn bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn embedding(&self, bin: usize) -> &[f64] {
        self.table.row(bin)
    }
}

/// Looks up one embedding per measurement; returns an `M x D` matrix.
pub fn contextual_embed(codebook: &Codebook, row: &[f64]) -> Result<DenseMatrix, AttentionError> {
    let d = codebook.dim();
    let mut out = DenseMatrix::zeros(row.len(), d);
    for (j, &x) in row.iter().enumerate() {
        let bin = bin_value(x, codebook.edges())?;
        out.row_mut(j).copy_from_slice(codebook.embedding(bin));
    }
    Ok(out)
}

/// `R(φ)·v`.
pub fn fuse(v: &[f64], phi: &RotaryAngles) -> Result<Vec<f64>, AttentionError> {
    Ok(rotate(phi.as_slice(), v)?)
}

/// Frozen query, key and value projections.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub w_q: DenseMatrix,
    pub w_k: DenseMatrix,
    pub w_v: DenseMatrix,
}

impl AttentionWeights {
    /// Entries drawn from `N(0, 1/D)`.
    pub fn seeded(dim: usize, rng: &mut SeededRng) -> Self {
        let std = 1.0 / (dim as f64).sqrt();
        let mut draw = || DenseMatrix::from_fn(dim, dim, |_, _| std * rng.normal());
        let w_q = draw();
        let w_k = draw();
        let w_v = draw();
        Self { w_q, w_k, w_v }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            w_q: DenseMatrix::identity(dim),
            w_k: DenseMatrix::identity(dim),
            w_v: DenseMatrix::identity(dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    /// `M x D` contextual outputs.
    pub outputs: DenseMatrix,
    /// Row-stochastic `M x M` attention weights.
    pub attention: DenseMatrix,
}

/// Scores every feature pair with the relative rotary score, applies a
/// row softmax and mixes the projected values.
pub fn attention_layer(
    embeddings: &DenseMatrix,
    angles: &[RotaryAngles],
    weights: &AttentionWeights,
    scale_scores: bool,
) -> Result<AttentionOutput, AttentionError> {
    let (m, d) = (embeddings.rows(), embeddings.cols());
    if angles.len() != m {
        return Err(AttentionError::Shape(format!("{m} features but {} angle vectors", angles.len())));
    }
    for w in [&weights.w_q, &weights.w_k, &weights.w_v] {
        if w.rows() != d || w.cols() != d {
            return Err(AttentionError::Shape(format!(
                "projection is {}x{}, embeddings have width {d}",
                w.rows(),
                w.cols()
            )));
        }
    }
    let project = |w: &DenseMatrix| embeddings.matmul_t(w).map_err(|e| AttentionError::Shape(e.to_string()));
    let (q, k, v) = (project(&weights.w_q)?, project(&weights.w_k)?, project(&weights.w_v)?);
    let scale = if scale_scores { 1.0 / (d as f64).sqrt() } else { 1.0 };
    let mut attention = DenseMatrix::zeros(m, m);
    for a in 0..m {
        let row = attention.row_mut(a);
        for (b, slot) in row.iter_mut().enumerate() {
            *slot = scale * attention_score(q.row(a), k.row(b), &angles[a], &angles[b])?;
        }
        softmax_in_place(row);
    }
    let outputs = attention.matmul(&v).map_err(|e| AttentionError::Shape(e.to_string()))?;
    Ok(AttentionOutput { outputs, attention })
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

/// Column-wise mean or max over the feature outputs.
pub fn aggregate(outputs: &DenseMatrix, mode: Aggregation) -> Result<Vec<f64>, AttentionError> {
    let m = outputs.rows();
    if m == 0 {
        return Err(AttentionError::Empty);
    }
    let mut acc = outputs.row(0).to_vec();
    for i in 1..m {
        for (a, &x) in acc.iter_mut().zip(outputs.row(i)) {
            match mode {
                Aggregation::Mean => *a += x,
                Aggregation::Max => *a = a.max(x),
            }
        }
    }
    if mode == Aggregation::Mean {
        for a in acc.iter_mut() {
            *a /= m as f64;
        }
    }
    Ok(acc)
}
