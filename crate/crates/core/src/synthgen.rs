//! Ground-truth DAGs by preferential attachment and nonlinear SEM sampling.

use serde::{Deserialize, Serialize};

use crate::numerics::{Activation, DenseMatrix, Mlp, NumericsError, SeededRng};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("graph contains a cycle through nodes {0:?}")]
    Cyclic(Vec<usize>),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Returns a topological order of the support of `adj` (entry `(i, j) != 0`
/// is the edge `i -> j`), or one directed cycle when none exists.
pub fn topological_order(adj: &DenseMatrix) -> Result<Vec<usize>, Vec<usize>> {
    let n = adj.rows();
    let mut indeg = vec![0usize; n];
    for i in 0..n {
        for j in 0..n {
            if adj[(i, j)] != 0.0 {
                indeg[j] += 1;
            }
        }
    }
    // smallest-index-first keeps the order deterministic
    let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|&j| indeg[j] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(&i) = ready.iter().next() {
        ready.remove(&i);
        order.push(i);
        for j in 0..n {
            if adj[(i, j)] != 0.0 {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    ready.insert(j);
                }
            }
        }
    }
    if order.len() == n {
        Ok(order)
    } else {
        Err(find_cycle(adj, &indeg))
    }
}

/// Walks backwards along incoming edges among the unsorted nodes until a
/// node repeats.
fn find_cycle(adj: &DenseMatrix, remaining_indeg: &[usize]) -> Vec<usize> {
    let n = adj.rows();
    let start = (0..n).find(|&j| remaining_indeg[j] > 0).unwrap_or(0);
    let mut seen = vec![usize::MAX; n];
    let mut path = Vec::new();
    let mut cur = start;
    loop {
        if seen[cur] != usize::MAX {
            let mut cycle = path[seen[cur]..].to_vec();
            cycle.reverse();
            return cycle;
        }
        seen[cur] = path.len();
        path.push(cur);
        match (0..n).find(|&i| remaining_indeg[i] > 0 && adj[(i, cur)] != 0.0) {
            Some(prev) => cur = prev,
            None => return path,
        }
    }
}

/// Weighted DAG with a cached topological order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDag {
    adjacency: DenseMatrix,
    order: Vec<usize>,
}

impl WeightedDag {
    pub fn from_adjacency(adjacency: DenseMatrix) -> Result<Self, SynthError> {
        if !adjacency.is_square() {
            return Err(NumericsError::NotSquare(adjacency.rows(), adjacency.cols()).into());
        }
        let order = topological_order(&adjacency).map_err(SynthError::Cyclic)?;
        Ok(Self { adjacency, order })
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn adjacency(&self) -> &DenseMatrix {
        &self.adjacency
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.num_nodes();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if self.adjacency[(i, j)] != 0.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.as_slice().iter().filter(|&&v| v != 0.0).count()
    }

    pub fn parents(&self, j: usize) -> Vec<usize> {
        (0..self.num_nodes()).filter(|&i| self.adjacency[(i, j)] != 0.0).collect()
    }
}

/// Barabási–Albert preferential attachment with edges oriented from the
/// earlier-arriving node to the later one. Edge entries are set to 1 as
/// placeholders until [`assign_weights`] runs.
///
/// Growth starts from a star with hub 0 and leaves `1..=m_attach`; every
/// later node attaches to `m_attach` distinct existing nodes drawn with
/// probability proportional to their degree.
pub fn gen_ba_dag(num_nodes: usize, m_attach: usize, rng: &mut SeededRng) -> Result<WeightedDag, SynthError> {
    if num_nodes < 2 {
        return Err(SynthError::InvalidParameter(format!("need at least 2 nodes, got {num_nodes}")));
    }
    if m_attach < 1 || m_attach >= num_nodes {
        return Err(SynthError::InvalidParameter(format!(
            "edges per new node must lie in [1, {num_nodes}), got {m_attach}"
        )));
    }
    let mut adj = DenseMatrix::zeros(num_nodes, num_nodes);
    // every endpoint appears once per incident edge
    let mut endpoints: Vec<usize> = Vec::new();
    for leaf in 1..=m_attach {
        adj[(0, leaf)] = 1.0;
        endpoints.extend([0, leaf]);
    }
    let mut targets: Vec<usize> = Vec::with_capacity(m_attach);
    for source in (m_attach + 1)..num_nodes {
        targets.clear();
        while targets.len() < m_attach {
            let pick = endpoints[rng.index(endpoints.len())];
            if !targets.contains(&pick) {
                targets.push(pick);
            }
        }
        targets.sort_unstable();
        for &t in &targets {
            adj[(t, source)] = 1.0;
            endpoints.extend([t, source]);
        }
    }
    WeightedDag::from_adjacency(adj)
}

/// Replaces every edge entry with a weight drawn uniformly from
/// `[-hi, -lo] ∪ [lo, hi]`.
pub fn assign_weights(dag: &WeightedDag, lo: f64, hi: f64, rng: &mut SeededRng) -> Result<WeightedDag, SynthError> {
    if !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
        return Err(SynthError::InvalidParameter(format!(
            "weight range needs 0 < lo <= hi, got [{lo}, {hi}]"
        )));
    }
    let mut adj = dag.adjacency.clone();
    for v in adj.as_mut_slice() {
        if *v != 0.0 {
            let magnitude = rng.uniform(lo, hi);
            *v = if rng.coin() { magnitude } else { -magnitude };
        }
    }
    Ok(WeightedDag {
        adjacency: adj,
        order: dag.order.clone(),
    })
}

/// How per-node assignment functions are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemOptions {
    /// Hidden width of each node's assignment MLP.
    pub hidden: usize,
    pub activation: Activation,
    /// Internal MLP weights are `N(0, weight_std²)`; `None` uses unit weights.
    pub weight_std: Option<f64>,
}

impl Default for SemOptions {
    fn default() -> Self {
        Self {
            hidden: 16,
            activation: Activation::Tanh,
            weight_std: Some(1.0),
        }
    }
}

/// Samples `n` rows from the nonlinear SEM `x_j = MLP_j(w ⊙ x_pa(j)) + z_j`,
/// `z_j ~ N(0, 1)`, visiting nodes in topological order.
pub fn simulate_sem(
    dag: &WeightedDag,
    n: usize,
    opts: &SemOptions,
    rng: &mut SeededRng,
) -> Result<DenseMatrix, SynthError> {
    if n == 0 {
        return Err(SynthError::InvalidParameter("sample count must be at least 1".into()));
    }
    if opts.hidden == 0 {
        return Err(SynthError::InvalidParameter("MLP width must be at least 1".into()));
    }
    // the cached order is trusted only if it still matches the adjacency
    let order = topological_order(&dag.adjacency).map_err(SynthError::Cyclic)?;
    let m = dag.num_nodes();

    let mut mechanisms: Vec<Option<Mlp>> = Vec::with_capacity(m);
    for j in 0..m {
        let k = dag.parents(j).len();
        if k == 0 {
            mechanisms.push(None);
            continue;
        }
        let widths = [k, opts.hidden, 1];
        let mlp = match opts.weight_std {
            Some(std) => Mlp::gaussian(&widths, opts.activation, std, rng)?,
            None => {
                let weights = widths
                    .windows(2)
                    .map(|w| DenseMatrix::from_fn(w[0], w[1], |_, _| 1.0))
                    .collect();
                Mlp::from_parts(weights, vec![vec![0.0; opts.hidden], vec![0.0]], opts.activation, Activation::Identity)?
            }
        };
        mechanisms.push(Some(mlp));
    }

    let noise = DenseMatrix::from_fn(n, m, |_, _| rng.normal());
    let mut x = DenseMatrix::zeros(n, m);
    for &j in &order {
        let parents = dag.parents(j);
        let mut col: Vec<f64> = noise.column(j);
        if let Some(mlp) = &mechanisms[j] {
            let inputs = DenseMatrix::from_fn(n, parents.len(), |r, c| {
                let p = parents[c];
                dag.adjacency[(p, j)] * x[(r, p)]
            });
            let out = mlp.forward(&inputs)?;
            for (v, o) in col.iter_mut().zip(out.as_slice()) {
                *v += o;
            }
        }
        for (r, v) in col.into_iter().enumerate() {
            x[(r, j)] = v;
        }
    }
    if !x.is_finite() {
        return Err(NumericsError::NonFinite("simulated data".into()).into());
    }
    Ok(x)
}
