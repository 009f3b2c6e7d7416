//! Hyperboloid embedding of a causal graph: a contrastive term that pulls
//! causally linked nodes together plus a PageRank-weighted pull towards the
//! origin, minimised with Riemannian SGD.

use serde::{Deserialize, Serialize};

use crate::discovery::CausalGraph;
use crate::manifold::{dist_hyperboloid, rsgd_step, to_poincare, HyperboloidPoint, ManifoldError, PoincarePoint};
use crate::numerics::SeededRng;

const PAGERANK_TOL: f64 = 1e-12;
const PAGERANK_MAX_ITER: usize = 100_000;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("node {0} out of range for {1} nodes")]
    InvalidNode(usize, usize),
    #[error("power iteration did not converge in {0} steps")]
    NoConvergence(usize),
    #[error("non-finite loss at epoch {0}")]
    NonFinite(usize),
    #[error("length mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingConfig {
    /// Manifold dimension `d`; points live in `R^{d+1}`.
    pub dim: usize,
    pub lambda_g: f64,
    pub hops: usize,
    /// Restart weight of the PageRank chain.
    pub restart: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Anchor nodes per step; `None` (or a value >= M) means full batch.
    pub batch_size: Option<usize>,
    /// Caps the negatives per node (sampled once per fit) for large graphs.
    pub max_negatives: Option<usize>,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            lambda_g: 0.1,
            hops: 2,
            restart: 0.15,
            learning_rate: 0.05,
            epochs: 1000,
            batch_size: None,
            max_negatives: None,
            seed: 0,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        let bad = |m: &str| Err(EmbedError::InvalidConfig(m.into()));
        if self.dim < 2 {
            return bad("dimension must be at least 2");
        }
        if !(self.lambda_g >= 0.0) {
            return bad("lambda_g must be >= 0");
        }
        if self.hops < 1 {
            return bad("hop radius must be at least 1");
        }
        if !(self.restart > 0.0 && self.restart < 1.0) {
            return bad("restart weight must lie in (0, 1)");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning rate must be > 0");
        }
        if self.batch_size == Some(0) {
            return bad("batch size must be positive");
        }
        if self.max_negatives == Some(0) {
            return bad("negative cap must be positive");
        }
        Ok(())
    }
}

/// Nodes joined to `m` by a directed path of at most `k` edges, in either
/// direction, excluding `m`; sorted ascending.
pub fn khop_positives(graph: &CausalGraph, m: usize, k: usize) -> Result<Vec<usize>, EmbedError> {
    let n = graph.num_nodes();
    if m >= n {
        return Err(EmbedError::InvalidNode(m, n));
    }
    let strengths = path_strengths(graph, m, k);
    Ok((0..n).filter(|&j| strengths[j] > 0.0).collect())
}

/// For every node, the largest product of `|weights|` along a directed path of
/// at most `k` edges between `m` and it (either orientation); 0 when none.
fn path_strengths(graph: &CausalGraph, m: usize, k: usize) -> Vec<f64> {
    let n = graph.num_nodes();
    let a = graph.adjacency();
    let mut best = vec![0.0f64; n];
    for forward in [true, false] {
        let mut frontier = vec![0.0f64; n];
        frontier[m] = 1.0;
        for _ in 0..k {
            let mut next = vec![0.0f64; n];
            for (u, &s) in frontier.iter().enumerate() {
                if s == 0.0 {
                    continue;
                }
                for (v, slot) in next.iter_mut().enumerate() {
                    let w = if forward { a[(u, v)] } else { a[(v, u)] };
                    if w != 0.0 {
                        *slot = slot.max(s * w.abs());
                    }
                }
            }
            for (b, &x) in best.iter_mut().zip(&next) {
                *b = b.max(x);
            }
            frontier = next;
        }
    }
    best[m] = 0.0;
    best
}

/// Positive and negative samples of every node.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveSets {
    /// `(n, weight)` pairs per node.
    pub positives: Vec<Vec<(usize, f64)>>,
    pub negatives: Vec<Vec<usize>>,
}

impl ContrastiveSets {
    /// Positives within `k` hops weighted by their strongest path (which is
    /// `|A_mn|` for a direct edge); negatives are all remaining nodes other
    /// than `m`, optionally subsampled to `max_negatives`.
    pub fn from_graph(graph: &CausalGraph, k: usize, max_negatives: Option<usize>, rng: &mut SeededRng) -> Self {
        let n = graph.num_nodes();
        let mut positives = Vec::with_capacity(n);
        let mut negatives = Vec::with_capacity(n);
        for m in 0..n {
            let s = path_strengths(graph, m, k);
            positives.push((0..n).filter(|&j| s[j] > 0.0).map(|j| (j, s[j])).collect());
            let mut neg: Vec<usize> = (0..n).filter(|&j| j != m && s[j] == 0.0).collect();
            if let Some(cap) = max_negatives {
                if neg.len() > cap {
                    for i in 0..cap {
                        let pick = i + rng.index(neg.len() - i);
                        neg.swap(i, pick);
                    }
                    neg.truncate(cap);
                    neg.sort_unstable();
                }
            }
            negatives.push(neg);
        }
        Self { positives, negatives }
    }

    pub fn num_nodes(&self) -> usize {
        self.positives.len()
    }
}

/// Stationary distribution of the restart chain built from the in-degree
/// normalised `|A|`: row `j` of the transition matrix spreads node `j`'s mass
/// over its parents in proportion to `|A_ij|`, or uniformly when `j` has no
/// parents. High values mark nodes that reach many others.
pub fn pagerank(graph: &CausalGraph, restart: f64) -> Result<Vec<f64>, EmbedError> {
    let m = graph.num_nodes();
    pagerank_from(graph, restart, &vec![1.0 / m.max(1) as f64; m])
}

/// [`pagerank`] iterated from an arbitrary positive `start` (normalised
/// first); the chain is irreducible, so the limit does not depend on it.
pub fn pagerank_from(graph: &CausalGraph, restart: f64, start: &[f64]) -> Result<Vec<f64>, EmbedError> {
    if !(restart > 0.0 && restart < 1.0) {
        return Err(EmbedError::InvalidConfig("restart weight must lie in (0, 1)".into()));
    }
    let m = graph.num_nodes();
    if m == 0 {
        return Err(EmbedError::InvalidConfig("graph has no nodes".into()));
    }
    let a = graph.adjacency();
    let in_weight: Vec<f64> = (0..m).map(|j| (0..m).map(|i| a[(i, j)].abs()).sum()).collect();
    if start.len() != m || start.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(EmbedError::Shape(format!("start vector must hold {m} positive finite values")));
    }
    let uniform = 1.0 / m as f64;
    let total: f64 = start.iter().sum();
    let mut pi: Vec<f64> = start.iter().map(|v| v / total).collect();
    for _ in 0..PAGERANK_MAX_ITER {
        let dangling: f64 = (0..m).filter(|&j| in_weight[j] == 0.0).map(|j| pi[j]).sum();
        let mut next = vec![restart * uniform + (1.0 - restart) * dangling * uniform; m];
        for j in 0..m {
            if in_weight[j] == 0.0 {
                continue;
            }
            let mass = (1.0 - restart) * pi[j] / in_weight[j];
            for (i, slot) in next.iter_mut().enumerate() {
                let w = a[(i, j)].abs();
                if w != 0.0 {
                    *slot += mass * w;
                }
            }
        }
        let total: f64 = next.iter().sum();
        for v in next.iter_mut() {
            *v /= total;
        }
        let resid: f64 = next.iter().zip(&pi).map(|(x, y)| (x - y).abs()).sum();
        pi = next;
        if resid < PAGERANK_TOL {
            return Ok(pi);
        }
    }
    Err(EmbedError::NoConvergence(PAGERANK_MAX_ITER))
}

/// `∂d_l(p, q)/∂p` in ambient coordinates, `(q0, -q̃) / sinh d`.
fn distance_grad(q: &HyperboloidPoint, d: f64, out: &mut [f64], scale: f64) {
    if d < 1e-12 {
        // the distance is not differentiable at p = q; take the zero subgradient
        return;
    }
    let c = scale / d.sinh();
    let qc = q.coords();
    out[0] += c * qc[0];
    for (o, &x) in out[1..].iter_mut().zip(&qc[1..]) {
        *o -= c * x;
    }
}

/// `L = (1/M) Σ_m [L_con(m) + λ_g π_m d_l(p_m, p_o)]` and its ambient-space
/// gradients. `L_con(m) = -Σ_{n∈pos} w_mn log softmax`, where the softmax
/// compares `exp(-d_mn)` against the negatives of `m`. Nodes without
/// positives contribute no contrastive term.
pub fn hyperbolic_loss(
    points: &[HyperboloidPoint],
    sets: &ContrastiveSets,
    pi: &[f64],
    lambda_g: f64,
) -> Result<(f64, Vec<Vec<f64>>), EmbedError> {
    let all: Vec<usize> = (0..points.len()).collect();
    anchor_loss(points, sets, pi, lambda_g, &all)
}

/// The loss restricted to the terms anchored at `anchors`, averaged over
/// them; gradients still reach every point those terms touch.
fn anchor_loss(
    points: &[HyperboloidPoint],
    sets: &ContrastiveSets,
    pi: &[f64],
    lambda_g: f64,
    anchors: &[usize],
) -> Result<(f64, Vec<Vec<f64>>), EmbedError> {
    let m = points.len();
    if sets.num_nodes() != m || pi.len() != m {
        return Err(EmbedError::Shape(format!(
            "{m} points, {} sample sets, {} PageRank entries",
            sets.num_nodes(),
            pi.len()
        )));
    }
    let dim = points.first().map_or(0, |p| p.coords().len());
    if points.iter().any(|p| p.coords().len() != dim) {
        return Err(EmbedError::Shape("points have different dimensions".into()));
    }
    let mut dist = vec![0.0; m * m];
    for i in 0..m {
        for j in (i + 1)..m {
            let d = dist_hyperboloid(&points[i], &points[j])?;
            dist[i * m + j] = d;
            dist[j * m + i] = d;
        }
    }
    let inv_m = 1.0 / anchors.len().max(1) as f64;
    let mut grads = vec![vec![0.0; dim]; m];
    let mut loss = 0.0;
    for &a in anchors {
        let negs = &sets.negatives[a];
        let neg_exp: Vec<f64> = negs.iter().map(|&n| (-dist[a * m + n]).exp()).collect();
        let s: f64 = neg_exp.iter().sum();
        for &(n, w) in &sets.positives[a] {
            let d = dist[a * m + n];
            let e = (-d).exp();
            // -log(e / (e + s)) = log(1 + s e^{d})
            loss += w * inv_m * (s * d.exp()).ln_1p();
            let denom = e + s;
            // ∂/∂d_pos = w s/(e + s); ∂/∂d_neg = -w e_neg/(e + s)
            let g_pos = w * inv_m * s / denom;
            if g_pos != 0.0 {
                let (lo, hi) = pair_mut(&mut grads, a, n);
                distance_grad(&points[n], d, lo, g_pos);
                distance_grad(&points[a], d, hi, g_pos);
            }
            for (&nn, &en) in negs.iter().zip(&neg_exp) {
                let g_neg = -w * inv_m * en / denom;
                let dn = dist[a * m + nn];
                let (lo, hi) = pair_mut(&mut grads, a, nn);
                distance_grad(&points[nn], dn, lo, g_neg);
                distance_grad(&points[a], dn, hi, g_neg);
            }
        }
        if lambda_g != 0.0 {
            let d0 = points[a].specificity();
            loss += lambda_g * inv_m * pi[a] * d0;
            if d0 >= 1e-12 {
                grads[a][0] += lambda_g * inv_m * pi[a] / d0.sinh();
            }
        }
    }
    if !loss.is_finite() {
        return Err(EmbedError::NonFinite(0));
    }
    Ok((loss, grads))
}

/// Mutable borrows of two distinct rows, in argument order.
fn pair_mut<T>(v: &mut [T], i: usize, j: usize) -> (&mut T, &mut T) {
    assert_ne!(i, j, "a node is never its own sample");
    if i < j {
        let (lo, hi) = v.split_at_mut(j);
        (&mut lo[i], &mut hi[0])
    } else {
        let (lo, hi) = v.split_at_mut(i);
        (&mut hi[0], &mut lo[j])
    }
}

/// Trained embedding with its training record.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperboloidEmbedding {
    pub points: Vec<HyperboloidPoint>,
    pub pagerank: Vec<f64>,
    pub loss_history: Vec<f64>,
    pub graph: CausalGraph,
}

impl HyperboloidEmbedding {
    pub fn poincare(&self) -> Vec<PoincarePoint> {
        self.points.iter().map(to_poincare).collect()
    }

    /// Pairwise `d_l` as a row-major `M x M` table.
    pub fn distances(&self) -> Result<Vec<f64>, EmbedError> {
        let m = self.points.len();
        let mut out = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    out[i * m + j] = dist_hyperboloid(&self.points[i], &self.points[j])?;
                }
            }
        }
        Ok(out)
    }
}

/// Initialises every node near the origin (`p̃ ~ N(0, 0.01²)`) and runs
/// Riemannian SGD: one full-batch step per epoch, or one step per shuffled
/// chunk of anchor nodes when `batch_size` is below `M`. The loss history
/// holds the full loss before each epoch and once more after the last one.
pub fn fit_embeddings(graph: &CausalGraph, cfg: &EmbeddingConfig) -> Result<HyperboloidEmbedding, EmbedError> {
    cfg.validate()?;
    let m = graph.num_nodes();
    if m < 2 {
        return Err(EmbedError::InvalidConfig(format!("need at least 2 nodes, got {m}")));
    }
    let mut init_rng = SeededRng::derive(cfg.seed, 20);
    let mut points = (0..m)
        .map(|_| HyperboloidPoint::from_spatial(&init_rng.normal_vec(cfg.dim, 0.01)))
        .collect::<Result<Vec<_>, _>>()?;
    let pi = pagerank(graph, cfg.restart)?;
    let sets = ContrastiveSets::from_graph(graph, cfg.hops, cfg.max_negatives, &mut SeededRng::derive(cfg.seed, 21));
    let mut order_rng = SeededRng::derive(cfg.seed, 22);
    let batch = cfg.batch_size.filter(|&b| b < m);
    let mut order: Vec<usize> = (0..m).collect();
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    let tag = |epoch: usize| {
        move |e: EmbedError| match e {
            EmbedError::NonFinite(_) => EmbedError::NonFinite(epoch),
            other => other,
        }
    };
    let step = |points: &[HyperboloidPoint], grads: &[Vec<f64>]| {
        points
            .iter()
            .zip(grads)
            .map(|(p, g)| rsgd_step(p, g, cfg.learning_rate))
            .collect::<Result<Vec<_>, _>>()
    };
    for epoch in 0..cfg.epochs {
        let (loss, grads) = hyperbolic_loss(&points, &sets, &pi, cfg.lambda_g).map_err(tag(epoch))?;
        history.push(loss);
        match batch {
            None => points = step(&points, &grads)?,
            Some(b) => {
                for i in (1..m).rev() {
                    order.swap(i, order_rng.index(i + 1));
                }
                for chunk in order.chunks(b) {
                    let (_, grads) = anchor_loss(&points, &sets, &pi, cfg.lambda_g, chunk).map_err(tag(epoch))?;
                    points = step(&points, &grads)?;
                }
            }
        }
    }
    if cfg.epochs > 0 {
        let (loss, _) = hyperbolic_loss(&points, &sets, &pi, cfg.lambda_g).map_err(tag(cfg.epochs))?;
        history.push(loss);
    }
    Ok(HyperboloidEmbedding {
        points,
        pagerank: pi,
        loss_history: history,
        graph: graph.clone(),
    })
}
