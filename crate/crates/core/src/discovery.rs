//! Causal structure discovery with a SEM-shaped variational autoencoder under
//! a continuous acyclicity constraint.
//!
//! Convention: `A[(i, j)] != 0` is the edge `i -> j`. Rows of `X` are samples,
//! so the linear part of the SEM reads `X = X A + Z`.

use serde::{Deserialize, Serialize};

use crate::numerics::{mat_exp, Activation, AdamW, DenseMatrix, LuDecomposition, Mlp, MlpGrads, NumericsError, SeededRng};
use crate::synthgen::{topological_order, WeightedDag};

const LOG_VAR_BOUND: f64 = 8.0;
const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, thiserror::Error)]
pub enum DiscoveryError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("thresholded graph still has the cycle {0:?}; raise the threshold")]
    ResidualCycle(Vec<usize>),
    #[error("non-finite loss: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Hyperparameters of the augmented Lagrangian fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscoveryConfig {
    pub lambda_s: f64,
    pub tau: f64,
    pub rho0: f64,
    pub alpha0: f64,
    pub rho_growth: f64,
    pub h_decrease: f64,
    pub rho_max: f64,
    /// The fit stops as soon as `h(A)` falls below this.
    pub h_tol: f64,
    pub outer_iterations: usize,
    pub inner_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    /// Factorise `A = U Vᵀ` with this rank.
    pub rank: Option<usize>,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            lambda_s: 1.0,
            tau: 0.2,
            rho0: 1.0,
            alpha0: 0.0,
            rho_growth: 10.0,
            h_decrease: 0.25,
            rho_max: 1e16,
            h_tol: 1e-8,
            outer_iterations: 20,
            inner_epochs: 100,
            batch_size: 128,
            learning_rate: 3e-3,
            weight_decay: 0.01,
            hidden: 64,
            rank: None,
        }
    }
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<(), DiscoveryError> {
        let bad = |msg: &str| Err(DiscoveryError::InvalidConfig(msg.into()));
        if !(self.lambda_s >= 0.0) {
            return bad("lambda_s must be >= 0");
        }
        if !(self.tau > 0.0) {
            return bad("tau must be > 0");
        }
        if !(self.rho0 > 0.0) || !(self.rho_max >= self.rho0) {
            return bad("need 0 < rho0 <= rho_max");
        }
        if !self.alpha0.is_finite() {
            return bad("alpha0 must be finite");
        }
        if !(self.rho_growth > 1.0) {
            return bad("rho_growth must be > 1");
        }
        if !(self.h_decrease > 0.0 && self.h_decrease < 1.0) {
            return bad("h_decrease must lie in (0, 1)");
        }
        if !(self.h_tol > 0.0) {
            return bad("h_tol must be > 0");
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return bad("batch size and hidden width must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning rate must be > 0 and weight decay >= 0");
        }
        if self.rank == Some(0) {
            return bad("rank must be positive");
        }
        Ok(())
    }
}

/// `h(A) = tr(exp(A ⊙ A)) - M`.
pub fn acyclicity(a: &DenseMatrix) -> Result<f64, NumericsError> {
    let e = mat_exp(&a.hadamard(a)?)?;
    // roundoff can push the trace a hair below M
    Ok((e.trace() - a.rows() as f64).max(0.0))
}

/// `∇h(A) = exp(A ⊙ A)ᵀ ⊙ 2A`.
pub fn acyclicity_grad(a: &DenseMatrix) -> Result<DenseMatrix, NumericsError> {
    Ok(acyclicity_with_grad(a)?.1)
}

fn acyclicity_with_grad(a: &DenseMatrix) -> Result<(f64, DenseMatrix), NumericsError> {
    let e = mat_exp(&a.hadamard(a)?)?;
    let h = (e.trace() - a.rows() as f64).max(0.0);
    let et = e.transpose();
    let grad = DenseMatrix::from_fn(a.rows(), a.cols(), |i, j| 2.0 * a[(i, j)] * et[(i, j)]);
    Ok((h, grad))
}

/// Trainable adjacency, either dense or factorised.
#[derive(Debug, Clone, PartialEq)]
pub enum AdjacencyParam {
    Full(DenseMatrix),
    LowRank { u: DenseMatrix, v: DenseMatrix },
}

impl AdjacencyParam {
    fn num_nodes(&self) -> usize {
        match self {
            AdjacencyParam::Full(a) => a.rows(),
            AdjacencyParam::LowRank { u, .. } => u.rows(),
        }
    }

    fn num_params(&self) -> usize {
        match self {
            AdjacencyParam::Full(a) => a.as_slice().len(),
            AdjacencyParam::LowRank { u, v } => u.as_slice().len() + v.as_slice().len(),
        }
    }

    fn materialize(&self) -> DenseMatrix {
        let mut a = match self {
            AdjacencyParam::Full(a) => a.clone(),
            AdjacencyParam::LowRank { u, v } => u.matmul_t(v).expect("factor shapes agree"),
        };
        for i in 0..a.rows() {
            a[(i, i)] = 0.0;
        }
        a
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        match self {
            AdjacencyParam::Full(a) => out.extend_from_slice(a.as_slice()),
            AdjacencyParam::LowRank { u, v } => {
                out.extend_from_slice(u.as_slice());
                out.extend_from_slice(v.as_slice());
            }
        }
    }

    fn read_params(&mut self, src: &[f64]) -> usize {
        match self {
            AdjacencyParam::Full(a) => {
                let n = a.as_slice().len();
                a.as_mut_slice().copy_from_slice(&src[..n]);
                let m = a.rows();
                for i in 0..m {
                    a[(i, i)] = 0.0;
                }
                n
            }
            AdjacencyParam::LowRank { u, v } => {
                let nu = u.as_slice().len();
                let nv = v.as_slice().len();
                u.as_mut_slice().copy_from_slice(&src[..nu]);
                v.as_mut_slice().copy_from_slice(&src[nu..nu + nv]);
                nu + nv
            }
        }
    }

    /// Chain rule from `∂L/∂A` to the parameters, with the diagonal masked.
    fn write_grads(&self, grad_a: &DenseMatrix, out: &mut Vec<f64>) {
        let mut g = grad_a.clone();
        for i in 0..g.rows() {
            g[(i, i)] = 0.0;
        }
        match self {
            AdjacencyParam::Full(_) => out.extend_from_slice(g.as_slice()),
            AdjacencyParam::LowRank { u, v } => {
                out.extend_from_slice(g.matmul_unchecked(v).as_slice());
                out.extend_from_slice(g.t_matmul(u).expect("shapes agree").as_slice());
            }
        }
    }
}

/// Encoder `μ = f(X)(I - A)`, a log-variance head, and decoder
/// `X̂ = g(Z(I - A)⁻¹)`, with `f`, the head and `g` shared scalar MLPs
/// applied to every feature.
#[derive(Debug, Clone, PartialEq)]
pub struct SemVae {
    adjacency: AdjacencyParam,
    encoder: Mlp,
    log_var_head: Mlp,
    decoder: Mlp,
}

/// Gradients of the negative ELBO.
#[derive(Debug, Clone)]
pub struct SemVaeGrads {
    /// With respect to the materialised adjacency.
    pub adjacency: DenseMatrix,
    pub encoder: MlpGrads,
    pub log_var_head: MlpGrads,
    pub decoder: MlpGrads,
}

fn check_scalar_mlp(mlp: &Mlp, name: &str) -> Result<(), DiscoveryError> {
    if mlp.input_width() != 1 || mlp.output_width() != 1 {
        return Err(DiscoveryError::InvalidConfig(format!("{name} must map scalars to scalars")));
    }
    Ok(())
}

impl SemVae {
    /// Seeded initialisation: zero adjacency (small random factors in
    /// low-rank mode) and uniformly initialised 1-H-1 tanh networks.
    pub fn new(num_nodes: usize, cfg: &DiscoveryConfig, rng: &mut SeededRng) -> Result<Self, DiscoveryError> {
        cfg.validate()?;
        if num_nodes < 2 {
            return Err(DiscoveryError::InvalidData(format!("need at least 2 features, got {num_nodes}")));
        }
        let widths = [1, cfg.hidden, 1];
        let encoder = Mlp::new(&widths, Activation::Tanh, rng)?;
        let log_var_head = Mlp::new(&widths, Activation::Tanh, rng)?;
        let decoder = Mlp::new(&widths, Activation::Tanh, rng)?;
        let adjacency = match cfg.rank {
            None => AdjacencyParam::Full(DenseMatrix::zeros(num_nodes, num_nodes)),
            Some(r) => AdjacencyParam::LowRank {
                u: DenseMatrix::from_fn(num_nodes, r, |_, _| 0.1 * rng.normal()),
                v: DenseMatrix::from_fn(num_nodes, r, |_, _| 0.1 * rng.normal()),
            },
        };
        Ok(Self {
            adjacency,
            encoder,
            log_var_head,
            decoder,
        })
    }

    pub fn from_parts(
        adjacency: DenseMatrix,
        encoder: Mlp,
        log_var_head: Mlp,
        decoder: Mlp,
    ) -> Result<Self, DiscoveryError> {
        if !adjacency.is_square() {
            return Err(NumericsError::NotSquare(adjacency.rows(), adjacency.cols()).into());
        }
        check_scalar_mlp(&encoder, "encoder")?;
        check_scalar_mlp(&log_var_head, "log-variance head")?;
        check_scalar_mlp(&decoder, "decoder")?;
        let mut model = Self {
            adjacency: AdjacencyParam::Full(adjacency.clone()),
            encoder,
            log_var_head,
            decoder,
        };
        model.adjacency = AdjacencyParam::Full(AdjacencyParam::Full(adjacency).materialize());
        Ok(model)
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.num_nodes()
    }

    /// Current adjacency with a zero diagonal.
    pub fn adjacency(&self) -> DenseMatrix {
        self.adjacency.materialize()
    }

    pub fn adjacency_param(&self) -> &AdjacencyParam {
        &self.adjacency
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub fn num_params(&self) -> usize {
        self.adjacency.num_params() + self.encoder.num_params() + self.log_var_head.num_params() + self.decoder.num_params()
    }

    /// Flat parameters: adjacency, encoder, log-variance head, decoder.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.adjacency.write_params(&mut out);
        self.encoder.write_params(&mut out);
        self.log_var_head.write_params(&mut out);
        self.decoder.write_params(&mut out);
        out
    }

    pub fn set_params(&mut self, src: &[f64]) {
        assert_eq!(src.len(), self.num_params(), "parameter count mismatch");
        let mut pos = self.adjacency.read_params(src);
        pos += self.encoder.read_params(&src[pos..]);
        pos += self.log_var_head.read_params(&src[pos..]);
        self.decoder.read_params(&src[pos..]);
    }

    /// Flattens gradients into the [`SemVae::params`] layout, chaining the
    /// adjacency gradient through the factorisation when present.
    pub fn flatten_grads(&self, grads: &SemVaeGrads) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.adjacency.write_grads(&grads.adjacency, &mut out);
        grads.encoder.write_flat(&mut out);
        grads.log_var_head.write_flat(&mut out);
        grads.decoder.write_flat(&mut out);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }

    fn check_batch(&self, x: &DenseMatrix) -> Result<(), DiscoveryError> {
        if x.cols() != self.num_nodes() {
            return Err(DiscoveryError::InvalidData(format!(
                "batch has {} columns, model has {} features",
                x.cols(),
                self.num_nodes()
            )));
        }
        if x.rows() == 0 {
            return Err(DiscoveryError::InvalidData("empty batch".into()));
        }
        if !x.is_finite() {
            return Err(DiscoveryError::InvalidData("batch contains non-finite values".into()));
        }
        Ok(())
    }
}

/// Applies a scalar MLP to every entry of `x`.
fn as_column(x: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_vec(x.rows() * x.cols(), 1, x.as_slice().to_vec()).expect("finite input")
}

fn reshape(col: &DenseMatrix, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_vec(rows, cols, col.as_slice().to_vec())
        .unwrap_or_else(|_| DenseMatrix::from_fn(rows, cols, |i, j| col.as_slice()[i * cols + j]))
}

/// Returns the posterior mean `f(X)(I - A)` and the clamped log-variance.
pub fn encode(model: &SemVae, x: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix), DiscoveryError> {
    model.check_batch(x)?;
    let (b, m) = (x.rows(), x.cols());
    let a = model.adjacency();
    let f = reshape(&model.encoder.forward(&as_column(x))?, b, m);
    let mut mean = f.clone();
    mean.add_assign_scaled(&f.matmul_unchecked(&a), -1.0);
    let raw = reshape(&model.log_var_head.forward(&as_column(x))?, b, m);
    let log_var = raw.map(|v| v.clamp(-LOG_VAR_BOUND, LOG_VAR_BOUND));
    if !mean.is_finite() || !log_var.is_finite() {
        return Err(DiscoveryError::NonFinite("encoder output".into()));
    }
    Ok((mean, log_var))
}

/// Negative ELBO averaged over rows: Gaussian reconstruction NLL with unit
/// variance plus `KL(q(Z|X) || N(0, I))`, and its gradients. The noise of
/// the reparameterisation `Z = μ + exp(lv/2) ε` is drawn from `rng`.
pub fn elbo_loss(model: &SemVae, x: &DenseMatrix, rng: &mut SeededRng) -> Result<(f64, SemVaeGrads), DiscoveryError> {
    model.check_batch(x)?;
    let (b, m) = (x.rows(), x.cols());
    let inv_b = 1.0 / b as f64;
    let a = model.adjacency();
    let x_col = as_column(x);

    let enc_cache = model.encoder.forward_cached(&x_col)?;
    let f = reshape(enc_cache.output(), b, m);
    let mut mu = f.clone();
    mu.add_assign_scaled(&f.matmul_unchecked(&a), -1.0);

    let lv_cache = model.log_var_head.forward_cached(&x_col)?;
    let lv_raw = lv_cache.output().as_slice();
    let lv: Vec<f64> = lv_raw.iter().map(|v| v.clamp(-LOG_VAR_BOUND, LOG_VAR_BOUND)).collect();
    let sigma: Vec<f64> = lv.iter().map(|v| (0.5 * v).exp()).collect();
    let eps: Vec<f64> = (0..b * m).map(|_| rng.normal()).collect();
    let mut z = mu.clone();
    for ((zv, s), e) in z.as_mut_slice().iter_mut().zip(&sigma).zip(&eps) {
        *zv += s * e;
    }

    let i_minus_a = DenseMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { 0.0 } - a[(i, j)]);
    let lu = LuDecomposition::new(&i_minus_a)?;
    let y = lu.solve_right(&z);
    let dec_cache = model.decoder.forward_cached(&as_column(&y))?;
    let x_hat = dec_cache.output().as_slice();

    let mut recon = 0.0;
    let mut g_xhat = vec![0.0; b * m];
    for ((g, &xh), &xv) in g_xhat.iter_mut().zip(x_hat).zip(x.as_slice()) {
        let r = xh - xv;
        recon += 0.5 * r * r;
        *g = r * inv_b;
    }
    let mut kl = 0.0;
    for (&mv, &l) in mu.as_slice().iter().zip(&lv) {
        kl += 0.5 * (mv * mv + l.exp() - l - 1.0);
    }
    let loss = (recon + kl) * inv_b + m as f64 * HALF_LOG_2PI;
    if !loss.is_finite() {
        return Err(DiscoveryError::NonFinite(format!("reconstruction {recon}, KL {kl}")));
    }

    let (dec_grads, g_y_col) = model
        .decoder
        .backward(&dec_cache, &DenseMatrix::from_vec(b * m, 1, g_xhat)?)?;
    let g_y = reshape(&g_y_col, b, m);
    // Y = Z (I - A)⁻¹, so ∂L/∂Z = G_Y (I - A)⁻ᵀ and ∂L/∂A = Yᵀ ∂L/∂Z
    let g_z = lu.solve_right_transpose(&g_y);
    let mut grad_a = y.t_matmul(&g_z)?;

    let mut g_mu = g_z.clone();
    g_mu.add_assign_scaled(&mu, inv_b);
    let mut g_lv = vec![0.0; b * m];
    for k in 0..b * m {
        if lv_raw[k].abs() < LOG_VAR_BOUND {
            g_lv[k] = g_z.as_slice()[k] * eps[k] * 0.5 * sigma[k] + 0.5 * (lv[k].exp() - 1.0) * inv_b;
        }
    }
    // μ = F (I - A)
    grad_a.add_assign_scaled(&f.t_matmul(&g_mu)?, -1.0);
    let mut g_f = g_mu.clone();
    g_f.add_assign_scaled(&g_mu.matmul_t(&a)?, -1.0);

    let (enc_grads, _) = model.encoder.backward(&enc_cache, &as_column(&g_f))?;
    let (lv_grads, _) = model
        .log_var_head
        .backward(&lv_cache, &DenseMatrix::from_vec(b * m, 1, g_lv)?)?;

    Ok((
        loss,
        SemVaeGrads {
            adjacency: grad_a,
            encoder: enc_grads,
            log_var_head: lv_grads,
            decoder: dec_grads,
        },
    ))
}

/// Diagnostics of an augmented Lagrangian fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub h_final: f64,
    /// `h` fell below the tolerance within the outer budget.
    pub converged: bool,
    pub outer_iterations_run: usize,
    pub rho_final: f64,
    pub alpha_final: f64,
    /// `h(A)` after each outer iteration.
    pub h_history: Vec<f64>,
    /// Mean negative ELBO of the last epoch of each outer iteration.
    pub loss_curve: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: SemVae,
    pub report: FitReport,
}

/// Minimises `-ELBO + λ_s‖A‖₁ + (ρ/2)h(A)² + α h(A)` with AdamW, updating
/// `α ← α + ρ h` after every outer iteration and growing `ρ` whenever `h`
/// fails to shrink by `h_decrease`.
pub fn augmented_lagrangian_fit(x: &DenseMatrix, cfg: &DiscoveryConfig, seed: u64) -> Result<FitOutcome, DiscoveryError> {
    cfg.validate()?;
    let (n, m) = (x.rows(), x.cols());
    if m < 2 {
        return Err(DiscoveryError::InvalidData(format!("need at least 2 features, got {m}")));
    }
    if n < cfg.batch_size {
        return Err(DiscoveryError::InvalidData(format!(
            "{n} rows is fewer than the batch size {}",
            cfg.batch_size
        )));
    }
    if !x.is_finite() {
        return Err(DiscoveryError::InvalidData("data contains non-finite values".into()));
    }

    let mut model = SemVae::new(m, cfg, &mut SeededRng::derive(seed, 0))?;
    let mut batch_rng = SeededRng::derive(seed, 1);
    let mut noise_rng = SeededRng::derive(seed, 2);
    let mut params = model.params();
    let mut opt = AdamW::new(params.len(), cfg.weight_decay);

    let mut rho = cfg.rho0;
    let mut alpha = cfg.alpha0;
    let mut h_prev = f64::INFINITY;
    let mut h = acyclicity(&model.adjacency())?;
    let mut report = FitReport {
        h_final: h,
        converged: h < cfg.h_tol,
        outer_iterations_run: 0,
        rho_final: rho,
        alpha_final: alpha,
        h_history: Vec::new(),
        loss_curve: Vec::new(),
    };
    if cfg.inner_epochs == 0 || cfg.outer_iterations == 0 {
        return Ok(FitOutcome { model, report });
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut batch = DenseMatrix::zeros(cfg.batch_size, m);
    for outer in 0..cfg.outer_iterations {
        let lr = cfg.learning_rate / rho.log10().max(1.0);
        let mut epoch_loss = 0.0;
        for _ in 0..cfg.inner_epochs {
            for i in (1..n).rev() {
                order.swap(i, batch_rng.index(i + 1));
            }
            epoch_loss = 0.0;
            let mut batches = 0usize;
            for chunk in order.chunks(cfg.batch_size) {
                if chunk.len() != batch.rows() {
                    batch = DenseMatrix::zeros(chunk.len(), m);
                }
                for (r, &src) in chunk.iter().enumerate() {
                    batch.row_mut(r).copy_from_slice(x.row(src));
                }
                let (loss, grads) = elbo_loss(&model, &batch, &mut noise_rng)?;
                // the batch mean estimates the dataset-level ELBO divided by n
                let mut flat = model.flatten_grads(&grads);
                for g in flat.iter_mut() {
                    *g *= n as f64;
                }
                let a = model.adjacency();
                let (h_batch, grad_h) = acyclicity_with_grad(&a)?;
                let coeff = rho * h_batch + alpha;
                let penalty = DenseMatrix::from_fn(m, m, |i, j| cfg.lambda_s * sign(a[(i, j)]) + coeff * grad_h[(i, j)]);
                let mut penalty_flat = Vec::with_capacity(model.adjacency.num_params());
                model.adjacency.write_grads(&penalty, &mut penalty_flat);
                for (g, p) in flat.iter_mut().zip(&penalty_flat) {
                    *g += p;
                }
                opt.step(&mut params, &flat, lr);
                model.set_params(&params);
                // keep the optimiser copy in sync with the zeroed diagonal
                params = model.params();
                epoch_loss += loss;
                batches += 1;
            }
            epoch_loss /= batches as f64;
            if batch.rows() != cfg.batch_size {
                batch = DenseMatrix::zeros(cfg.batch_size, m);
            }
        }
        if !model.is_finite() {
            return Err(DiscoveryError::NonFinite(format!("parameters diverged in outer iteration {outer}")));
        }
        h = acyclicity(&model.adjacency())?;
        alpha += rho * h;
        if h > cfg.h_decrease * h_prev {
            rho = (rho * cfg.rho_growth).min(cfg.rho_max);
        }
        h_prev = h;
        report.h_history.push(h);
        report.loss_curve.push(epoch_loss);
        report.outer_iterations_run = outer + 1;
        if h < cfg.h_tol {
            break;
        }
    }
    report.h_final = h;
    report.converged = h < cfg.h_tol;
    report.rho_final = rho;
    report.alpha_final = alpha;
    Ok(FitOutcome { model, report })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Thresholded, acyclic weighted graph.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalGraph {
    num_nodes: usize,
    adjacency: DenseMatrix,
    /// `(from, to, weight)` in row-major order.
    edges: Vec<(usize, usize, f64)>,
}

impl CausalGraph {
    /// Keeps entries with `|A_ij| > τ` and checks the result is acyclic.
    pub fn from_weighted(a: &DenseMatrix, tau: f64) -> Result<Self, DiscoveryError> {
        if !a.is_square() {
            return Err(NumericsError::NotSquare(a.rows(), a.cols()).into());
        }
        if !(tau > 0.0) {
            return Err(DiscoveryError::InvalidConfig("tau must be > 0".into()));
        }
        let m = a.rows();
        let adjacency = DenseMatrix::from_fn(m, m, |i, j| {
            let v = a[(i, j)];
            if i != j && v.abs() > tau {
                v
            } else {
                0.0
            }
        });
        topological_order(&adjacency).map_err(DiscoveryError::ResidualCycle)?;
        let mut edges = Vec::new();
        for i in 0..m {
            for j in 0..m {
                if adjacency[(i, j)] != 0.0 {
                    edges.push((i, j, adjacency[(i, j)]));
                }
            }
        }
        Ok(Self {
            num_nodes: m,
            adjacency,
            edges,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn adjacency(&self) -> &DenseMatrix {
        &self.adjacency
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }
}

pub fn threshold_graph(model: &SemVae, tau: f64) -> Result<CausalGraph, DiscoveryError> {
    CausalGraph::from_weighted(&model.adjacency(), tau)
}

/// Structural Hamming distance: the number of unordered node pairs whose
/// edge state (absent, forward, backward) differs, so a reversal counts once.
pub fn shd(estimate: &CausalGraph, truth: &WeightedDag) -> Result<usize, DiscoveryError> {
    let m = estimate.num_nodes();
    if truth.num_nodes() != m {
        return Err(DiscoveryError::InvalidData(format!(
            "estimate has {m} nodes, truth has {}",
            truth.num_nodes()
        )));
    }
    Ok(shd_supports(estimate.adjacency(), truth.adjacency()))
}

pub(crate) fn shd_supports(a: &DenseMatrix, b: &DenseMatrix) -> usize {
    let m = a.rows();
    let state = |g: &DenseMatrix, i: usize, j: usize| (g[(i, j)] != 0.0, g[(j, i)] != 0.0);
    let mut count = 0;
    for i in 0..m {
        for j in (i + 1)..m {
            if state(a, i, j) != state(b, i, j) {
                count += 1;
            }
        }
    }
    count
}
