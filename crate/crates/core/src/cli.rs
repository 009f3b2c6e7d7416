//! Pipeline orchestration: configuration, the stage runners behind each
//! subcommand, and the artifact manifest.
//!
//! Every stage reads its inputs from and writes its outputs to one output
//! directory, so stages can run one at a time or chained by `pipeline`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::f64::consts::{FRAC_PI_4, PI};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::attnlayer::{
    aggregate, attention_layer, contextual_embed, AttentionConfig, AttentionError, AttentionWeights, Codebook,
};
use crate::discovery::{augmented_lagrangian_fit, shd, CausalGraph, DiscoveryConfig, DiscoveryError};
use crate::embed::{fit_embeddings, EmbedError, EmbeddingConfig};
use crate::manifold::{PoincarePoint, ManifoldError};
use crate::numerics::{Activation, DenseMatrix, NumericsError, SeededRng};
use crate::propbench::{
    accuracy_surface, attenuation_surface, collinear_monotonicity_check, distinguishability_check,
    generality_limit_sweep, orthonormal_pair, robustness_report, symmetric_pair, unbiasedness_report, chord_for,
    BenchError, DistinguishabilitySetup, NoiseModel, PropertyReport,
};
use crate::rotary::{angles_with_scale, RotaryAngles, RotaryError};
use crate::synthgen::{assign_weights, gen_ba_dag, simulate_sem, SemOptions, SynthError, WeightedDag};

/// Stage failure, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{stage}: numerical failure: {message}")]
    Numerical { stage: &'static str, message: String },
    #[error("{stage}: constraint violated: {message}")]
    Constraint { stage: &'static str, message: String },
}

impl CliError {
    /// 1 usage or I/O, 2 numerical failure, 3 constraint failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } => 1,
            CliError::Numerical { .. } => 2,
            CliError::Constraint { .. } => 3,
        }
    }

    fn usage(stage: &str, msg: impl std::fmt::Display) -> Self {
        CliError::Usage(format!("{stage}: {msg}"))
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }
}

fn numerics_err(stage: &'static str, e: NumericsError) -> CliError {
    match e {
        NumericsError::Shape(_) | NumericsError::Parse(_) | NumericsError::InvalidArgument(_) | NumericsError::NotSquare(..) => {
            CliError::usage(stage, e)
        }
        _ => CliError::Numerical { stage, message: e.to_string() },
    }
}

fn synth_err(e: SynthError) -> CliError {
    let stage = "synth";
    match e {
        SynthError::InvalidParameter(_) => CliError::usage(stage, e),
        SynthError::Cyclic(_) => CliError::Constraint { stage, message: e.to_string() },
        SynthError::Numerics(n) => numerics_err(stage, n),
    }
}

fn discovery_err(e: DiscoveryError) -> CliError {
    let stage = "discover";
    match e {
        DiscoveryError::InvalidConfig(_) | DiscoveryError::InvalidData(_) => CliError::usage(stage, e),
        DiscoveryError::ResidualCycle(_) => CliError::Constraint { stage, message: e.to_string() },
        DiscoveryError::NonFinite(_) => CliError::Numerical { stage, message: e.to_string() },
        DiscoveryError::Numerics(n) => numerics_err(stage, n),
    }
}

fn manifold_err(stage: &'static str, e: ManifoldError) -> CliError {
    match e {
        ManifoldError::NonFinite => CliError::Numerical { stage, message: e.to_string() },
        _ => CliError::usage(stage, e),
    }
}

fn embed_err(e: EmbedError) -> CliError {
    let stage = "embed";
    match e {
        EmbedError::InvalidConfig(_) | EmbedError::InvalidNode(..) | EmbedError::Shape(_) => CliError::usage(stage, e),
        EmbedError::Manifold(m) => manifold_err(stage, m),
        EmbedError::NoConvergence(_) | EmbedError::NonFinite(_) => CliError::Numerical { stage, message: e.to_string() },
    }
}

fn rotary_err(stage: &'static str, e: RotaryError) -> CliError {
    match e {
        RotaryError::NonFinite => CliError::Numerical { stage, message: e.to_string() },
        _ => CliError::usage(stage, e),
    }
}

fn attention_err(e: AttentionError) -> CliError {
    let stage = "attend";
    match e {
        AttentionError::NonFinite(_) => CliError::Numerical { stage, message: e.to_string() },
        AttentionError::Rotary(r) => rotary_err(stage, r),
        _ => CliError::usage(stage, e),
    }
}

fn bench_err(e: BenchError) -> CliError {
    match e {
        BenchError::Rotary(r) => rotary_err("validate", r),
        BenchError::InvalidArgument(_) => CliError::usage("validate", e),
    }
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_nodes: usize,
    pub m_attach: usize,
    pub samples: usize,
    pub weight_lo: f64,
    pub weight_hi: f64,
    /// Hidden width of the per-node MLPs of the generating SEM.
    pub hidden: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_nodes: 10,
            m_attach: 2,
            samples: 5000,
            weight_lo: 0.5,
            weight_hi: 2.0,
            hidden: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RotaryConfig {
    /// Scalar `c` in `φ = c·e`, within `(0, π/4]`.
    pub angle_scale: f64,
}

impl Default for RotaryConfig {
    fn default() -> Self {
        Self { angle_scale: FRAC_PI_4 }
    }
}

/// Grids and trial counts of the property experiments run by `validate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    /// Number of rotation planes; vectors live in `R^{2d}`.
    pub d: usize,
    pub surface_cells: usize,
    pub distance_min: f64,
    pub distance_max: f64,
    pub limit_points: usize,
    pub collinear_trials: usize,
    pub collinear_steps: usize,
    pub robustness_sigmas: Vec<f64>,
    pub robustness_max_n: usize,
    pub robustness_repetitions: usize,
    pub epsilons: Vec<f64>,
    pub unbiased_sigma_m: f64,
    pub unbiased_sigma_n: f64,
    pub unbiased_trials: usize,
    pub unbiased_tolerance: f64,
    pub accuracy_cells: usize,
    pub distinguish_trials: usize,
    pub distinguish_embedding_std: f64,
    pub distinguish_positional_std: f64,
    pub bootstrap_resamples: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            d: 64,
            surface_cells: 20,
            distance_min: 1.0,
            distance_max: 5.0,
            limit_points: 50,
            collinear_trials: 200,
            collinear_steps: 25,
            robustness_sigmas: vec![0.1, 0.2, 0.3],
            robustness_max_n: 100,
            robustness_repetitions: 100,
            epsilons: vec![0.5, 1.0],
            unbiased_sigma_m: PI / 12.0,
            unbiased_sigma_n: PI / 12.0,
            unbiased_trials: 100_000,
            unbiased_tolerance: 0.02,
            accuracy_cells: 21,
            distinguish_trials: 10_000,
            distinguish_embedding_std: 0.1,
            distinguish_positional_std: 0.02,
            bootstrap_resamples: 10_000,
        }
    }
}

impl BenchConfig {
    fn validate(&self) -> Result<(), String> {
        let positive = [
            ("bench.d", self.d),
            ("bench.surface_cells", self.surface_cells),
            ("bench.limit_points", self.limit_points),
            ("bench.collinear_trials", self.collinear_trials),
            ("bench.collinear_steps", self.collinear_steps),
            ("bench.robustness_max_n", self.robustness_max_n),
            ("bench.robustness_repetitions", self.robustness_repetitions),
            ("bench.unbiased_trials", self.unbiased_trials),
            ("bench.accuracy_cells", self.accuracy_cells),
            ("bench.bootstrap_resamples", self.bootstrap_resamples),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        if self.d < 2 {
            return Err("bench.d must be at least 2".into());
        }
        if self.distinguish_trials < 2 {
            return Err("bench.distinguish_trials must be at least 2".into());
        }
        if !(1.0 <= self.distance_min && self.distance_min <= self.distance_max) {
            return Err("bench.distance_min/max must satisfy 1 <= min <= max".into());
        }
        Ok(())
    }
}

/// Every stage's configuration plus the global seed and output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub synth: SynthConfig,
    pub discovery: DiscoveryConfig,
    pub embedding: EmbeddingConfig,
    pub rotary: RotaryConfig,
    pub attention: AttentionConfig,
    pub bench: BenchConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let embedding = EmbeddingConfig::default();
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            synth: SynthConfig::default(),
            discovery: DiscoveryConfig::default(),
            attention: AttentionConfig { dim: 2 * embedding.dim, ..AttentionConfig::default() },
            embedding,
            rotary: RotaryConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Field-level checks, including the cross-module `D = 2d`.
    pub fn validate(&self) -> Result<(), String> {
        let s = &self.synth;
        if s.num_nodes < 2 {
            return Err("synth.num_nodes must be at least 2".into());
        }
        if s.m_attach == 0 || s.m_attach >= s.num_nodes {
            return Err("synth.m_attach must lie in 1..num_nodes".into());
        }
        if s.samples == 0 || s.hidden == 0 {
            return Err("synth.samples and synth.hidden must be positive".into());
        }
        if !(s.weight_lo > 0.0 && s.weight_lo <= s.weight_hi && s.weight_hi.is_finite()) {
            return Err("synth.weight_lo/hi must satisfy 0 < lo <= hi".into());
        }
        self.discovery.validate().map_err(|e| format!("discovery: {e}"))?;
        self.embedding.validate().map_err(|e| format!("embedding: {e}"))?;
        self.attention.validate().map_err(|e| format!("attention: {e}"))?;
        if self.attention.dim != 2 * self.embedding.dim {
            return Err(format!(
                "attention.dim = {} but embedding.dim = {}: the D = 2d constraint requires attention.dim = {}",
                self.attention.dim,
                self.embedding.dim,
                2 * self.embedding.dim
            ));
        }
        let c = self.rotary.angle_scale;
        if !(c > 0.0 && c <= FRAC_PI_4) {
            return Err(format!("rotary.angle_scale = {c} must lie in (0, pi/4]"));
        }
        self.bench.validate()
    }
}

/// Parses, fills defaults and validates. Parse errors and unknown keys are
/// usage errors; violated constraints are constraint errors.
pub fn parse_config(text: &str) -> Result<PipelineConfig, CliError> {
    let cfg: PipelineConfig =
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
    cfg.validate().map_err(|message| CliError::Constraint { stage: "config", message })?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<PipelineConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config(&text)
}

pub fn save_config(cfg: &PipelineConfig, path: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(cfg).expect("config serialises");
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

// ---------------------------------------------------------------------------
// Artifact bookkeeping

#[derive(Debug, Clone, Serialize)]
struct StageRecord {
    name: &'static str,
    status: String,
    seconds: f64,
    seeds: BTreeMap<String, u64>,
    files: Vec<String>,
}

/// Output directory plus the record of what each stage wrote.
struct Workspace {
    out: PathBuf,
    stages: Vec<StageRecord>,
}

impl Workspace {
    fn open(out: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
        Ok(Self { out: out.to_path_buf(), stages: Vec::new() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn current(&mut self) -> &mut StageRecord {
        self.stages.last_mut().expect("a stage is running")
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.path(name);
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        self.current().files.push(name.to_string());
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &Value) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).expect("json serialises");
        self.write(name, &(text + "\n"))
    }

    fn seed(&mut self, label: &str, value: u64) {
        self.current().seeds.insert(label.to_string(), value);
    }

    /// Runs one stage, recording its timing and status even on failure.
    fn stage(
        &mut self,
        name: &'static str,
        f: impl FnOnce(&mut Self) -> Result<(), CliError>,
    ) -> Result<(), CliError> {
        eprintln!("[{name}] running");
        self.stages.push(StageRecord {
            name,
            status: "running".into(),
            seconds: 0.0,
            seeds: BTreeMap::new(),
            files: Vec::new(),
        });
        let start = Instant::now();
        let result = f(self);
        let record = self.current();
        record.seconds = start.elapsed().as_secs_f64();
        record.status = match &result {
            Ok(()) => "ok".into(),
            Err(e) => format!("error: {e}"),
        };
        eprintln!("[{name}] {} ({:.2} s)", record.status, record.seconds);
        result
    }

    /// `manifest.json`: config, per-stage timings and seeds, and the sha256
    /// of every file written in this run.
    fn write_manifest(&self, cfg: &PipelineConfig) -> Result<(), CliError> {
        let mut hashes = BTreeMap::new();
        for stage in &self.stages {
            for file in &stage.files {
                let path = self.path(file);
                let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
                hashes.insert(file.clone(), hex::encode(Sha256::digest(&bytes)));
            }
        }
        let manifest = json!({
            "seed": cfg.seed,
            "config": cfg,
            "stages": self.stages,
            "files": hashes,
        });
        let path = self.path("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("json serialises") + "\n";
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }
}

/// SHA-256 hex digests recorded in `manifest.json`, keyed by file name.
pub fn manifest_hashes(dir: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("manifest: {e}")))?;
    let files = value["files"].as_object().cloned().unwrap_or_default();
    Ok(files
        .into_iter()
        .map(|(k, v)| (k, v.as_str().unwrap_or_default().to_string()))
        .collect())
}

fn headers(prefix: &str, range: std::ops::Range<usize>) -> Vec<String> {
    range.map(|i| format!("{prefix}{i}")).collect()
}

/// Reads a numeric CSV, skipping a header line if the first field does not
/// parse as a number.
pub fn read_matrix(path: &Path) -> Result<DenseMatrix, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let first = text.lines().next().unwrap_or("");
    let has_header = first.split(',').next().is_some_and(|f| f.trim().parse::<f64>().is_err());
    DenseMatrix::from_csv(&text, has_header)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Stages

fn stage_synth(ws: &mut Workspace, cfg: &PipelineConfig) -> Result<(), CliError> {
    let s = &cfg.synth;
    let (graph_stream, weight_stream, data_stream) = (100, 101, 102);
    ws.seed("graph_stream", graph_stream);
    ws.seed("weight_stream", weight_stream);
    ws.seed("data_stream", data_stream);
    let dag = gen_ba_dag(s.num_nodes, s.m_attach, &mut SeededRng::derive(cfg.seed, graph_stream)).map_err(synth_err)?;
    let dag = assign_weights(&dag, s.weight_lo, s.weight_hi, &mut SeededRng::derive(cfg.seed, weight_stream))
        .map_err(synth_err)?;
    let opts = SemOptions { hidden: s.hidden, activation: Activation::Tanh, ..SemOptions::default() };
    let x = simulate_sem(&dag, s.samples, &opts, &mut SeededRng::derive(cfg.seed, data_stream)).map_err(synth_err)?;
    let names = headers("x", 0..s.num_nodes);
    ws.write("dag_true.csv", &dag.adjacency().to_csv(Some(&names)))?;
    ws.write("data.csv", &x.to_csv(Some(&names)))?;
    ws.write_json(
        "meta.json",
        &json!({
            "seed": cfg.seed,
            "num_nodes": s.num_nodes,
            "samples": s.samples,
            "num_edges": dag.num_edges(),
            "parameters": s,
        }),
    )
}

fn stage_discover(ws: &mut Workspace, cfg: &PipelineConfig, data: &Path, truth: Option<&Path>) -> Result<(), CliError> {
    let x = read_matrix(data)?;
    ws.seed("fit_seed", cfg.seed);
    let fit = augmented_lagrangian_fit(&x, &cfg.discovery, cfg.seed).map_err(discovery_err)?;
    let a = fit.model.adjacency();
    let names = headers("x", 0..a.rows());
    ws.write("A_raw.csv", &a.to_csv(Some(&names)))?;
    let mut metrics = json!({
        "h_final": fit.report.h_final,
        "converged": fit.report.converged,
        "outer_iterations_run": fit.report.outer_iterations_run,
        "rho_final": fit.report.rho_final,
        "alpha_final": fit.report.alpha_final,
        "h_history": fit.report.h_history,
        "loss_curve": fit.report.loss_curve,
        "tau": cfg.discovery.tau,
    });
    let graph = match CausalGraph::from_weighted(&a, cfg.discovery.tau) {
        Ok(g) => g,
        Err(e) => {
            metrics["acyclic"] = json!(false);
            metrics["error"] = json!(e.to_string());
            ws.write_json("discovery_metrics.json", &metrics)?;
            return Err(discovery_err(e));
        }
    };
    ws.write("A_thresholded.csv", &graph.adjacency().to_csv(Some(&names)))?;
    metrics["acyclic"] = json!(true);
    metrics["num_edges"] = json!(graph.edges().len());
    if let Some(truth) = truth {
        let t = read_matrix(truth)?;
        let dag = WeightedDag::from_adjacency(t).map_err(synth_err)?;
        metrics["shd"] = json!(shd(&graph, &dag).map_err(discovery_err)?);
    }
    ws.write_json("discovery_metrics.json", &metrics)
}

fn stage_embed(ws: &mut Workspace, cfg: &PipelineConfig, graph_path: &Path) -> Result<(), CliError> {
    let a = read_matrix(graph_path)?;
    // The file is already thresholded: keep every nonzero entry.
    let graph = CausalGraph::from_weighted(&a, f64::MIN_POSITIVE).map_err(discovery_err)?;
    let ecfg = EmbeddingConfig { seed: cfg.seed, ..cfg.embedding.clone() };
    ws.seed("embedding_seed", ecfg.seed);
    let emb = fit_embeddings(&graph, &ecfg).map_err(embed_err)?;
    let d = ecfg.dim;
    let hyper = DenseMatrix::from_rows(&emb.points.iter().map(|p| p.coords().to_vec()).collect::<Vec<_>>())
        .map_err(|e| numerics_err("embed", e))?;
    ws.write("embedding_hyperboloid.csv", &hyper.to_csv(Some(&headers("p", 0..d + 1))))?;
    let ball = DenseMatrix::from_rows(&emb.poincare().iter().map(|p| p.coords().to_vec()).collect::<Vec<_>>())
        .map_err(|e| numerics_err("embed", e))?;
    ws.write("embedding_poincare.csv", &ball.to_csv(Some(&headers("e", 1..d + 1))))?;
    let pr = DenseMatrix::from_vec(emb.pagerank.len(), 1, emb.pagerank.clone()).map_err(|e| numerics_err("embed", e))?;
    ws.write("pagerank.csv", &pr.to_csv(Some(&["pagerank".to_string()])))?;
    let specificity: Vec<f64> = emb.points.iter().map(|p| p.specificity()).collect();
    ws.write_json(
        "embed_metrics.json",
        &json!({
            "dim": d,
            "epochs": ecfg.epochs,
            "final_loss": emb.loss_history.last(),
            "loss_history": emb.loss_history,
            "specificity": specificity,
            "pagerank": emb.pagerank,
        }),
    )
}

fn load_angles(path: &Path, scale: f64) -> Result<Vec<RotaryAngles>, CliError> {
    let e = read_matrix(path)?;
    (0..e.rows())
        .map(|i| {
            let p = PoincarePoint::new(e.row(i).to_vec()).map_err(|err| manifold_err("encode", err))?;
            angles_with_scale(&p, scale).map_err(|err| rotary_err("encode", err))
        })
        .collect()
}

fn stage_encode(ws: &mut Workspace, cfg: &PipelineConfig, embedding: &Path) -> Result<(), CliError> {
    let angles = load_angles(embedding, cfg.rotary.angle_scale)?;
    let rows: Vec<Vec<f64>> = angles.iter().map(|a| a.as_slice().to_vec()).collect();
    let d = rows.first().map_or(0, Vec::len);
    let m = DenseMatrix::from_rows(&rows).map_err(|e| numerics_err("encode", e))?;
    ws.write("rotary_angles.csv", &m.to_csv(Some(&headers("phi", 1..d + 1))))
}

/// Fraction of observations whose values train the codebook edges.
const TRAIN_FRACTION: f64 = 0.8;

fn stage_attend(ws: &mut Workspace, cfg: &PipelineConfig, data: &Path, embedding: &Path) -> Result<(), CliError> {
    let x = read_matrix(data)?;
    let angles = load_angles(embedding, cfg.rotary.angle_scale)?;
    let acfg = &cfg.attention;
    if angles.len() != x.cols() {
        return Err(CliError::usage(
            "attend",
            format!("data has {} features but {} embeddings", x.cols(), angles.len()),
        ));
    }
    if let Some(a) = angles.first() {
        if 2 * a.len() != acfg.dim {
            return Err(CliError::Constraint {
                stage: "attend",
                message: format!("embeddings have d = {} but attention.dim = {} (D = 2d)", a.len(), acfg.dim),
            });
        }
    }
    let train_rows = ((x.rows() as f64 * TRAIN_FRACTION).ceil() as usize).clamp(1, x.rows().max(1));
    let train: Vec<f64> = (0..train_rows).flat_map(|i| x.row(i).to_vec()).collect();
    let (codebook_stream, weight_stream) = (300, 301);
    ws.seed("codebook_stream", codebook_stream);
    ws.seed("weight_stream", weight_stream);
    let codebook = Codebook::from_training(&train, acfg, &mut SeededRng::derive(cfg.seed, codebook_stream))
        .map_err(attention_err)?;
    let weights = AttentionWeights::seeded(acfg.dim, &mut SeededRng::derive(cfg.seed, weight_stream));
    let m = x.cols();
    let mut mean_attention = DenseMatrix::zeros(m, m);
    let mut observations = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let emb = contextual_embed(&codebook, x.row(i)).map_err(attention_err)?;
        let out = attention_layer(&emb, &angles, &weights, acfg.scale_scores).map_err(attention_err)?;
        mean_attention.add_assign_scaled(&out.attention, 1.0 / x.rows() as f64);
        observations.push(aggregate(&out.outputs, acfg.aggregation).map_err(attention_err)?);
    }
    let names = headers("x", 0..m);
    ws.write("attention_matrix.csv", &mean_attention.to_csv(Some(&names)))?;
    let obs = DenseMatrix::from_rows(&observations).map_err(|e| numerics_err("attend", e))?;
    ws.write("observation_embeddings.csv", &obs.to_csv(Some(&headers("h", 0..acfg.dim))))?;
    ws.write_json(
        "attend_meta.json",
        &json!({
            "train_rows": train_rows,
            "bin_edges": codebook.edges(),
            "aggregation": acfg.aggregation,
        }),
    )
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Runs every property experiment and writes `<name>.csv` and
/// `<name>_verdict.json` for each.
pub fn property_reports(cfg: &PipelineConfig) -> Result<Vec<PropertyReport>, BenchError> {
    let b = &cfg.bench;
    let seed = cfg.seed;
    let distances = linspace(b.distance_min, b.distance_max, b.surface_cells);
    let norms: Vec<f64> = (0..b.surface_cells).map(|i| (i as f64 + 0.5) / b.surface_cells as f64).collect();
    let mut reports = vec![
        attenuation_surface(seed, &distances, &norms, b.d)?,
        generality_limit_sweep(seed, &linspace(b.distance_min, b.distance_max, b.limit_points), b.d)?,
    ];
    let mut positive = collinear_monotonicity_check(seed, 1.0, b.collinear_trials, b.d, b.collinear_steps)?;
    positive.name = "collinear_positive".into();
    let mut negative = collinear_monotonicity_check(seed, -1.0, b.collinear_trials, b.d, b.collinear_steps)?;
    negative.name = "collinear_negative".into();
    reports.push(positive);
    reports.push(negative);
    let ns: Vec<usize> = (1..=b.robustness_max_n).collect();
    reports.push(robustness_report(seed, &b.robustness_sigmas, &ns, b.robustness_repetitions, &b.epsilons, b.d)?);
    reports.push(unbiasedness_report(
        b.unbiased_sigma_m,
        b.unbiased_sigma_n,
        b.unbiased_trials,
        seed,
        b.d,
        b.unbiased_tolerance,
    )?);
    let sigma_grid = linspace(0.0, PI / 12.0, b.accuracy_cells);
    reports.push(accuracy_surface(&sigma_grid, &sigma_grid)?);
    // Two encodings of norm 0.5 at Poincaré distance 1.
    let (u, w) = orthonormal_pair(&mut SeededRng::derive(seed, 400), b.d);
    let (e_m, e_n) = symmetric_pair(&u, &w, 0.5, chord_for(1.0, 0.5)).expect("chord fits the ball");
    reports.push(distinguishability_check(&DistinguishabilitySetup {
        trials: b.distinguish_trials,
        embedding_std: b.distinguish_embedding_std,
        positional: NoiseModel::isotropic(b.d, b.distinguish_positional_std)?,
        e_m,
        e_n,
        resamples: b.bootstrap_resamples,
        seed,
    })?);
    Ok(reports)
}

fn stage_validate(ws: &mut Workspace, cfg: &PipelineConfig) -> Result<(), CliError> {
    ws.seed("bench_seed", cfg.seed);
    let reports = property_reports(cfg).map_err(bench_err)?;
    let mut failed = Vec::new();
    for rep in &reports {
        ws.write(&format!("{}.csv", rep.name), &rep.to_csv())?;
        ws.write_json(&format!("{}_verdict.json", rep.name), &rep.verdict_json())?;
        if !rep.passed() {
            failed.push(rep.name.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Constraint { stage: "validate", message: format!("failed verdicts: {}", failed.join(", ")) })
    }
}

// ---------------------------------------------------------------------------
// Entry points

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Synth,
    Discover,
    Embed,
    Encode,
    Attend,
    Validate,
}

/// Where `run_pipeline` takes its inputs from.
#[derive(Debug, Clone, Default)]
pub struct PipelineInputs {
    pub skip: Vec<Stage>,
    /// Observational data to use instead of `data.csv` from `synth`.
    pub data: Option<PathBuf>,
}

/// Runs every stage not in `inputs.skip`, in order, writing
/// `manifest.json` even when a stage fails.
pub fn run_pipeline(cfg: &PipelineConfig, inputs: &PipelineInputs) -> Result<PathBuf, CliError> {
    let mut ws = Workspace::open(&cfg.output_dir)?;
    let result = run_stages(&mut ws, cfg, inputs);
    ws.write_manifest(cfg)?;
    result.map(|()| ws.out.clone())
}

fn run_stages(ws: &mut Workspace, cfg: &PipelineConfig, inputs: &PipelineInputs) -> Result<(), CliError> {
    let on = |s: Stage| !inputs.skip.contains(&s);
    let data = inputs.data.clone().unwrap_or_else(|| ws.path("data.csv"));
    if on(Stage::Synth) && inputs.data.is_some() {
        return Err(CliError::Usage("--data replaces synthetic data; add --skip synth".into()));
    }
    let mut truth = None;
    if on(Stage::Synth) {
        ws.stage("synth", |ws| stage_synth(ws, cfg))?;
        truth = Some(ws.path("dag_true.csv"));
    }
    if on(Stage::Discover) {
        ws.stage("discover", |ws| stage_discover(ws, cfg, &data, truth.as_deref()))?;
    }
    if on(Stage::Embed) {
        let graph = ws.path("A_thresholded.csv");
        ws.stage("embed", |ws| stage_embed(ws, cfg, &graph))?;
    }
    let embedding = ws.path("embedding_poincare.csv");
    if on(Stage::Encode) {
        ws.stage("encode", |ws| stage_encode(ws, cfg, &embedding))?;
    }
    if on(Stage::Attend) {
        ws.stage("attend", |ws| stage_attend(ws, cfg, &data, &embedding))?;
    }
    if on(Stage::Validate) {
        ws.stage("validate", |ws| stage_validate(ws, cfg))?;
    }
    Ok(())
}

#[derive(Debug, Parser)]
#[command(name = "cape", version, about = "Causal discovery, hyperbolic embedding and rotary attention encodings")]
pub struct Cli {
    /// JSON configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a weighted BA DAG and observational data from a nonlinear SEM.
    Synth,
    /// Learn a DAG from data and threshold it.
    Discover {
        /// Data CSV (default: <out>/data.csv).
        #[arg(long)]
        data: Option<PathBuf>,
        /// True adjacency for SHD (default: <out>/dag_true.csv when present).
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        lambda_s: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        rho0: Option<f64>,
        /// Factor A = U Vᵀ with this rank.
        #[arg(long)]
        low_rank: Option<usize>,
    },
    /// Embed the thresholded graph on the hyperboloid.
    Embed {
        /// Adjacency CSV (default: <out>/A_thresholded.csv).
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Caps the negatives per node.
        #[arg(long)]
        max_negatives: Option<usize>,
    },
    /// Convert Poincaré embeddings to rotary angles.
    Encode {
        /// Poincaré embedding CSV (default: <out>/embedding_poincare.csv).
        #[arg(long)]
        embedding: Option<PathBuf>,
    },
    /// Run the rotary attention layer over every observation.
    Attend {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        embedding: Option<PathBuf>,
    },
    /// Run the attention property experiments.
    Validate,
    /// Run all stages in order.
    Pipeline {
        #[arg(long, value_enum)]
        skip: Vec<Stage>,
        /// Use this data instead of the synthetic sample (requires --skip synth).
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn resolve_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    match &cli.command {
        Command::Discover { lambda_s, tau, rho0, low_rank, .. } => {
            let d = &mut cfg.discovery;
            d.lambda_s = lambda_s.unwrap_or(d.lambda_s);
            d.tau = tau.unwrap_or(d.tau);
            d.rho0 = rho0.unwrap_or(d.rho0);
            if low_rank.is_some() {
                d.rank = *low_rank;
            }
        }
        Command::Embed { max_negatives: Some(n), .. } => cfg.embedding.max_negatives = Some(*n),
        _ => {}
    }
    cfg.validate().map_err(|message| CliError::Constraint { stage: "config", message })?;
    Ok(cfg)
}

fn single_stage(
    cfg: &PipelineConfig,
    name: &'static str,
    f: impl FnOnce(&mut Workspace) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let mut ws = Workspace::open(&cfg.output_dir)?;
    let result = ws.stage(name, f);
    ws.write_manifest(cfg)?;
    result
}

/// Executes a parsed command line.
pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    let out = cfg.output_dir.clone();
    let or_out = |p: &Option<PathBuf>, name: &str| p.clone().unwrap_or_else(|| out.join(name));
    match &cli.command {
        Command::Synth => single_stage(&cfg, "synth", |ws| stage_synth(ws, &cfg)),
        Command::Discover { data, truth, .. } => {
            let data = or_out(data, "data.csv");
            let truth = truth.clone().or_else(|| Some(out.join("dag_true.csv")).filter(|p| p.exists()));
            single_stage(&cfg, "discover", |ws| stage_discover(ws, &cfg, &data, truth.as_deref()))
        }
        Command::Embed { graph, .. } => {
            let graph = or_out(graph, "A_thresholded.csv");
            single_stage(&cfg, "embed", |ws| stage_embed(ws, &cfg, &graph))
        }
        Command::Encode { embedding } => {
            let embedding = or_out(embedding, "embedding_poincare.csv");
            single_stage(&cfg, "encode", |ws| stage_encode(ws, &cfg, &embedding))
        }
        Command::Attend { data, embedding } => {
            let data = or_out(data, "data.csv");
            let embedding = or_out(embedding, "embedding_poincare.csv");
            single_stage(&cfg, "attend", |ws| stage_attend(ws, &cfg, &data, &embedding))
        }
        Command::Validate => single_stage(&cfg, "validate", |ws| stage_validate(ws, &cfg)),
        Command::Pipeline { skip, data } => {
            run_pipeline(&cfg, &PipelineInputs { skip: skip.clone(), data: data.clone() }).map(|_| ())
        }
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn main_entry() -> ExitCode {
    ExitCode::from(run(std::env::args_os()))
}
