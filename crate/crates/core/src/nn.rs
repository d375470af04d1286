//! Dual-stream GIN encoder, linear classifier, Adam and parameter
//! checkpoints.
//!
//! Node features are row vectors; a linear layer computes `H·W + b`.
//! Each stream runs `layers` GIN rounds, `h' = MLP((A+I)·h)` with
//! `MLP = relu ∘ linear ∘ dropout ∘ relu ∘ linear`, then mean-pools,
//! projects and L2-normalizes.

use std::io::{Read, Write};
use std::path::Path;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{SparseMatrix, Tape, Var};
use crate::losses::tape::BandRows;
use crate::losses::DualEmbedding;
use crate::spectral::{band_filter, one_hot_features, BandSplit, LaplacianKind, SpectralBasis};
use crate::{Error, Graph, Matrix, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub dropout: f64,
    pub share_streams: bool,
    pub lambda_low: f64,
    pub lambda_high: f64,
}

impl EncoderConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: 64,
            embed_dim: 64,
            layers: 3,
            dropout: 0.3,
            share_streams: false,
            lambda_low: std::f64::consts::FRAC_1_SQRT_2,
            lambda_high: std::f64::consts::FRAC_1_SQRT_2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.embed_dim == 0 || self.layers == 0 {
            return Err(Error::InvalidArgument(format!("encoder dimensions must be positive: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if !(self.lambda_low >= 0.0 && self.lambda_high >= 0.0) {
            return Err(Error::InvalidArgument("band weights must be non-negative".into()));
        }
        Ok(())
    }

    pub fn stream_count(&self) -> usize {
        if self.share_streams {
            1
        } else {
            2
        }
    }

    /// Shapes of every parameter tensor in declaration order.
    pub fn layout(&self) -> Vec<(String, (usize, usize))> {
        let mut out = Vec::new();
        let h = self.hidden_dim;
        for s in 0..self.stream_count() {
            let stream = if self.share_streams { "shared" } else { ["low", "high"][s] };
            for l in 0..self.layers {
                let d_in = if l == 0 { self.input_dim } else { h };
                out.push((format!("{stream}.gin{l}.w1"), (d_in, h)));
                out.push((format!("{stream}.gin{l}.b1"), (1, h)));
                out.push((format!("{stream}.gin{l}.w2"), (h, h)));
                out.push((format!("{stream}.gin{l}.b2"), (1, h)));
            }
            out.push((format!("{stream}.proj.w"), (h, self.embed_dim)));
            out.push((format!("{stream}.proj.b"), (1, self.embed_dim)));
        }
        out.push(("classifier.w".into(), (2 * self.embed_dim, 2)));
        out.push(("classifier.b".into(), (1, 2)));
        out
    }

    /// SHA-256 over a canonical rendering of every field.
    pub fn hash(&self) -> [u8; 32] {
        let canon = format!(
            "input_dim={};hidden_dim={};embed_dim={};layers={};dropout={:e};share_streams={};lambda_low={:e};lambda_high={:e}",
            self.input_dim,
            self.hidden_dim,
            self.embed_dim,
            self.layers,
            self.dropout,
            self.share_streams,
            self.lambda_low,
            self.lambda_high
        );
        Sha256::digest(canon.as_bytes()).into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Low,
    High,
}

/// Flat parameter list in [`EncoderConfig::layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: EncoderConfig,
    tensors: Vec<Matrix>,
}

const LAYER_TENSORS: usize = 4;

impl ModelParams {
    /// Uniform `±1/√fan_in` initialization for weights and biases.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = config.layout();
        let mut tensors = Vec::with_capacity(layout.len());
        let mut fan_in = 0;
        for (name, (r, c)) in &layout {
            // a bias shares the fan-in of the weight declared just before it
            if !name.ends_with(".b1") && !name.ends_with(".b2") && !name.ends_with(".b") {
                fan_in = *r;
            }
            let bound = 1.0 / (fan_in as f64).sqrt();
            tensors.push(Matrix::from_fn(*r, *c, |_, _| rng.gen_range(-bound..bound)));
        }
        Ok(Self { config, tensors })
    }

    pub fn from_tensors(config: EncoderConfig, tensors: Vec<Matrix>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != tensors.len() {
            return Err(Error::shape("params", format!("{} tensors, expected {}", tensors.len(), layout.len())));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.shape() != *shape {
                return Err(Error::shape("params", format!("{name} is {:?}, expected {shape:?}", t.shape())));
            }
            if !t.is_finite() {
                return Err(Error::numerical("params", format!("{name} has non-finite entries")));
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix] {
        &mut self.tensors
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data().len()).sum()
    }

    fn stream_base(&self, stream: Stream) -> usize {
        let per_stream = self.config.layers * LAYER_TENSORS + 2;
        match (stream, self.config.share_streams) {
            (Stream::High, false) => per_stream,
            _ => 0,
        }
    }

    fn classifier_base(&self) -> usize {
        self.tensors.len() - 2
    }

    /// Registers every tensor as a tape parameter.
    pub fn bind(&self, t: &mut Tape) -> Result<BoundParams> {
        let vars = self.tensors.iter().map(|m| t.param(m.clone())).collect::<Result<_>>()?;
        Ok(BoundParams { vars })
    }
}

/// Tape handles for a [`ModelParams`], same order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub vars: Vec<Var>,
}

/// Inverted-dropout mask source driven by a seeded stream.
pub struct DropoutSampler {
    rate: f64,
    rng: ChaCha8Rng,
}

impl DropoutSampler {
    pub fn new(rate: f64, seed: u64) -> Self {
        Self { rate, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn mask(&mut self, rows: usize, cols: usize) -> Matrix {
        let keep = 1.0 / (1.0 - self.rate);
        let rate = self.rate;
        let rng = &mut self.rng;
        Matrix::from_fn(rows, cols, |_, _| if rng.gen::<f64>() < rate { 0.0 } else { keep })
    }
}

/// Band-filtered node features of one graph, computed once.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub node_count: usize,
    pub edges: Vec<(usize, usize)>,
    pub x_low: Matrix,
    pub x_high: Matrix,
    pub label: Option<u8>,
}

impl PreparedGraph {
    pub fn new(g: &Graph, feature_dim: usize, cutoff_fraction: f64, kind: LaplacianKind) -> Result<Self> {
        if g.node_count() == 0 {
            return Err(Error::InvalidArgument("cannot encode an empty graph".into()));
        }
        let basis = SpectralBasis::of_graph(g, kind)?;
        let split = BandSplit::for_basis(cutoff_fraction, &basis)?;
        let (x_low, x_high) = band_filter(&basis, &one_hot_features(g, feature_dim)?, &split)?;
        Ok(Self {
            node_count: g.node_count(),
            edges: g.edges().to_vec(),
            x_low,
            x_high,
            label: g.class_label(),
        })
    }

    /// Prepares graphs in parallel; output order matches input order.
    pub fn prepare_all(graphs: &[Graph], feature_dim: usize, cutoff_fraction: f64, kind: LaplacianKind) -> Result<Vec<Self>> {
        graphs
            .par_iter()
            .map(|g| Self::new(g, feature_dim, cutoff_fraction, kind))
            .collect()
    }
}

/// Block-diagonal union of several graphs.
pub struct GraphBatch {
    /// `A + I` over all nodes of the batch.
    pub propagation: Rc<SparseMatrix>,
    /// Node offsets: graph `i` owns rows `offsets[i]..offsets[i+1]`.
    pub offsets: Vec<usize>,
    pub x_low: Matrix,
    pub x_high: Matrix,
}

impl GraphBatch {
    pub fn new(graphs: &[&PreparedGraph]) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let dim = graphs[0].x_low.cols();
        let total: usize = graphs.iter().map(|g| g.node_count).sum();
        let mut offsets = Vec::with_capacity(graphs.len() + 1);
        offsets.push(0);
        let mut triplets = Vec::new();
        let mut x_low = Vec::with_capacity(total * dim);
        let mut x_high = Vec::with_capacity(total * dim);
        for g in graphs {
            if g.x_low.cols() != dim {
                return Err(Error::shape("batch", format!("feature dim {} vs {dim}", g.x_low.cols())));
            }
            let base = *offsets.last().unwrap();
            for v in 0..g.node_count {
                triplets.push((base + v, base + v, 1.0));
            }
            for &(a, b) in &g.edges {
                triplets.push((base + a, base + b, 1.0));
                triplets.push((base + b, base + a, 1.0));
            }
            x_low.extend_from_slice(g.x_low.data());
            x_high.extend_from_slice(g.x_high.data());
            offsets.push(base + g.node_count);
        }
        Ok(Self {
            propagation: Rc::new(SparseMatrix::from_triplets(total, total, triplets)?),
            offsets,
            x_low: Matrix::from_vec(total, dim, x_low)?,
            x_high: Matrix::from_vec(total, dim, x_high)?,
        })
    }

    pub fn graph_count(&self) -> usize {
        self.offsets.len() - 1
    }
}

/// `(A+I)·H`: each node's own row plus its neighbours' rows.
pub fn gin_aggregate(t: &mut Tape, propagation: &Rc<SparseMatrix>, h: Var) -> Result<Var> {
    t.sparse_matmul(Rc::clone(propagation), h)
}

fn linear(t: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = t.matmul(x, w)?;
    t.add_bias(y, b)
}

/// One GIN round with ε = 0.
pub fn gin_layer(
    t: &mut Tape,
    propagation: &Rc<SparseMatrix>,
    h: Var,
    layer: &[Var],
    dropout: Option<&mut DropoutSampler>,
) -> Result<Var> {
    let agg = gin_aggregate(t, propagation, h)?;
    let hidden = linear(t, agg, layer[0], layer[1])?;
    let mut hidden = t.relu(hidden)?;
    if let Some(d) = dropout {
        let (r, c) = t.value(hidden).shape();
        let mask = Rc::new(d.mask(r, c));
        hidden = t.dropout(hidden, mask)?;
    }
    let out = linear(t, hidden, layer[2], layer[3])?;
    t.relu(out)
}

/// One stream: GIN rounds, mean pooling, projection, L2 normalization.
/// Returns `graphs × embed_dim` unit rows.
pub fn encode_stream(
    t: &mut Tape,
    params: &ModelParams,
    bound: &BoundParams,
    stream: Stream,
    batch: &GraphBatch,
    x: Var,
    mut dropout: Option<&mut DropoutSampler>,
) -> Result<Var> {
    let base = params.stream_base(stream);
    let mut h = x;
    for l in 0..params.config.layers {
        let start = base + l * LAYER_TENSORS;
        let layer = &bound.vars[start..start + LAYER_TENSORS];
        h = gin_layer(t, &batch.propagation, h, layer, dropout.as_deref_mut())?;
    }
    let pooled = t.segment_mean(h, &batch.offsets)?;
    let p = base + params.config.layers * LAYER_TENSORS;
    let z = linear(t, pooled, bound.vars[p], bound.vars[p + 1])?;
    t.l2_normalize_rows(z)
}

/// Both streams over a batch.
pub fn dual_encode(
    t: &mut Tape,
    params: &ModelParams,
    bound: &BoundParams,
    batch: &GraphBatch,
    mut dropout: Option<&mut DropoutSampler>,
) -> Result<BandRows> {
    let xl = t.constant(batch.x_low.clone())?;
    let xh = t.constant(batch.x_high.clone())?;
    let low = encode_stream(t, params, bound, Stream::Low, batch, xl, dropout.as_deref_mut())?;
    let high = encode_stream(t, params, bound, Stream::High, batch, xh, dropout)?;
    Ok(BandRows { low, high })
}

/// `concat(λ_l·z_low, λ_g·z_high)·W + b`.
pub fn classify(t: &mut Tape, params: &ModelParams, bound: &BoundParams, z: BandRows) -> Result<Var> {
    let c = params.classifier_base();
    let low = t.scale(z.low, params.config.lambda_low)?;
    let high = t.scale(z.high, params.config.lambda_high)?;
    let joint = t.concat(&[low, high])?;
    linear(t, joint, bound.vars[c], bound.vars[c + 1])
}

/// Eval-mode output for one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub embedding: DualEmbedding,
    pub logits: [f64; 2],
}

/// Eval-mode forward over many graphs, chunked and run in parallel.
/// Results keep input order and do not depend on the thread count.
pub fn infer(params: &ModelParams, graphs: &[&PreparedGraph]) -> Result<Vec<Inference>> {
    const CHUNK: usize = 64;
    let chunks: Vec<Vec<Inference>> = graphs
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<Vec<Inference>> {
            let batch = GraphBatch::new(chunk)?;
            let mut t = Tape::new();
            let bound = params.bind(&mut t)?;
            let z = dual_encode(&mut t, params, &bound, &batch, None)?;
            let logits = classify(&mut t, params, &bound, z)?;
            let (zl, zh, lg) = (t.value(z.low), t.value(z.high), t.value(logits));
            (0..chunk.len())
                .map(|i| {
                    Ok(Inference {
                        embedding: DualEmbedding::new(zl.row(i).to_vec(), zh.row(i).to_vec())?,
                        logits: [lg[(i, 0)], lg[(i, 1)]],
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[Matrix]) -> Self {
        let zeros: Vec<Matrix> = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self { m: zeros.clone(), v: zeros, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Bias-corrected Adam update in place.
pub fn adam_step(params: &mut [Matrix], grads: &[Matrix], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape("adam_step", format!("{} params, {} grads, {} states", params.len(), grads.len(), state.m.len())));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape("adam_step", format!("{:?} vs {:?}", p.shape(), g.shape())));
        }
    }
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let pd = p.data_mut();
        for (i, &gi) in g.data().iter().enumerate() {
            let mi = &mut m.data_mut()[i];
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            let mhat = *mi / bc1;
            let vi = &mut v.data_mut()[i];
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let vhat = *vi / bc2;
            pd[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

const MAGIC: &[u8; 8] = b"SPNETCK\0";
const CHECKPOINT_VERSION: u32 = 1;

/// Header (magic, version, config hash, value count) then the flat
/// little-endian parameter array.
pub fn write_checkpoint(params: &ModelParams, mut w: impl Write) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&params.config.hash())?;
    w.write_all(&(params.parameter_count() as u64).to_le_bytes())?;
    for t in &params.tensors {
        for x in t.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(config: &EncoderConfig, mut r: impl Read, source: &str) -> Result<ModelParams> {
    let io = |e: std::io::Error| Error::Parse { file: source.into(), message: format!("truncated checkpoint: {e}") };
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Parse { file: source.into(), message: "not a parameter checkpoint".into() });
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(io)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version(format!("checkpoint version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let mut hash = [0u8; 32];
    r.read_exact(&mut hash).map_err(io)?;
    if hash != config.hash() {
        return Err(Error::Version(format!(
            "checkpoint config hash {} does not match {}",
            hex::encode(hash),
            hex::encode(config.hash())
        )));
    }
    let mut count = [0u8; 8];
    r.read_exact(&mut count).map_err(io)?;
    let count = u64::from_le_bytes(count) as usize;
    let layout = config.layout();
    let expected: usize = layout.iter().map(|(_, (a, b))| a * b).sum();
    if count != expected {
        return Err(Error::Parse { file: source.into(), message: format!("{count} values, expected {expected}") });
    }
    let mut tensors = Vec::with_capacity(layout.len());
    let mut buf = [0u8; 8];
    for (_, (rows, cols)) in &layout {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            r.read_exact(&mut buf).map_err(io)?;
            data.push(f64::from_le_bytes(buf));
        }
        tensors.push(Matrix::from_vec(*rows, *cols, data)?);
    }
    if r.read(&mut buf).map_err(io)? != 0 {
        return Err(Error::Parse { file: source.into(), message: "trailing bytes after parameters".into() });
    }
    ModelParams::from_tensors(config.clone(), tensors)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(params, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(config: &EncoderConfig, path: &Path) -> Result<ModelParams> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(config, std::io::BufReader::new(file), &path.display().to_string())
}
