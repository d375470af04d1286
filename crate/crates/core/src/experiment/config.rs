//! Experiment configuration and its `key = value` file format.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dataset::SplitStatistic;
use crate::losses::{FmmdSign, LossWeights, NegativeTerm};
use crate::nn::{AdamConfig, EncoderConfig};
use crate::spectral::LaplacianKind;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub data_root: Option<PathBuf>,
    pub statistic: SplitStatistic,
    pub k: usize,
    pub split_seed: u64,
    pub source: usize,
    pub target: usize,
    pub layers: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub dropout: f64,
    pub share_streams: bool,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub tau: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub lambda_low: f64,
    pub lambda_high: f64,
    pub rho: f64,
    pub laplacian: LaplacianKind,
    pub fmmd_sign: FmmdSign,
    pub negative_term: NegativeTerm,
    pub seeds: Vec<u64>,
    pub use_smmi: bool,
    pub use_fmmd: bool,
    pub desk_scale: bool,
    pub desk_graphs_per_domain: usize,
    pub desk_epochs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: "Mutagenicity".into(),
            data_root: None,
            statistic: SplitStatistic::EdgeDensity,
            k: 4,
            split_seed: 0,
            source: 0,
            target: 1,
            layers: 3,
            hidden_dim: 64,
            embed_dim: 64,
            dropout: 0.3,
            share_streams: false,
            lr: 1e-3,
            epochs: 200,
            batch_size: 32,
            tau: 0.1,
            gamma1: 0.5,
            gamma2: 0.5,
            lambda_low: std::f64::consts::FRAC_1_SQRT_2,
            lambda_high: std::f64::consts::FRAC_1_SQRT_2,
            rho: 0.5,
            laplacian: LaplacianKind::Normalized,
            fmmd_sign: FmmdSign::Repulsive,
            negative_term: NegativeTerm::TargetNegatives,
            seeds: vec![0, 1, 2, 3, 4],
            use_smmi: true,
            use_fmmd: true,
            desk_scale: false,
            desk_graphs_per_domain: 300,
            desk_epochs: 50,
        }
    }
}

fn kind_str(k: LaplacianKind) -> &'static str {
    match k {
        LaplacianKind::Combinatorial => "combinatorial",
        LaplacianKind::Normalized => "normalized",
    }
}

fn negative_str(n: NegativeTerm) -> &'static str {
    match n {
        NegativeTerm::TargetNegatives => "target_negatives",
        NegativeTerm::TargetSelf => "target_self",
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.k < 2 {
            return bad(format!("k = {} must be at least 2", self.k));
        }
        if self.source >= self.k || self.target >= self.k {
            return bad(format!("domains {} and {} must be below k = {}", self.source, self.target, self.k));
        }
        if self.source == self.target {
            return bad("source and target domains must differ".into());
        }
        if self.layers == 0 || self.hidden_dim == 0 || self.embed_dim == 0 {
            return bad("encoder dimensions must be positive".into());
        }
        if !(self.lr > 0.0) || !(self.tau > 0.0) {
            return bad("lr and tau must be positive".into());
        }
        if self.epochs == 0 || self.desk_epochs == 0 || self.desk_graphs_per_domain < 2 {
            return bad("epoch and subsample counts must be positive".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch size {} must be at least 2", self.batch_size));
        }
        if !(self.gamma1 >= 0.0 && self.gamma2 >= 0.0) {
            return bad("loss weights must be non-negative".into());
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad(format!("rho = {} must lie in (0, 1)", self.rho));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        self.encoder(1).validate()
    }

    pub fn encoder(&self, input_dim: usize) -> EncoderConfig {
        EncoderConfig {
            input_dim,
            hidden_dim: self.hidden_dim,
            embed_dim: self.embed_dim,
            layers: self.layers,
            dropout: self.dropout,
            share_streams: self.share_streams,
            lambda_low: self.lambda_low,
            lambda_high: self.lambda_high,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::with_lr(self.lr)
    }

    /// Loss weights after applying the ablation switches.
    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            gamma_smmi: if self.use_smmi { self.gamma1 } else { 0.0 },
            gamma_fmmd: if self.use_fmmd { self.gamma2 } else { 0.0 },
            fmmd_sign: self.fmmd_sign,
        }
    }

    pub fn effective_epochs(&self) -> usize {
        if self.desk_scale {
            self.desk_epochs
        } else {
            self.epochs
        }
    }

    /// Every field except `data_root`, one `key = value` per line, in a
    /// fixed order. Parsing this text yields the same config.
    pub fn to_kv(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let mut lines = vec![
            ("dataset", self.dataset.clone()),
            ("statistic", self.statistic.as_str().into()),
            ("k", self.k.to_string()),
            ("split_seed", self.split_seed.to_string()),
            ("source", self.source.to_string()),
            ("target", self.target.to_string()),
            ("layers", self.layers.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("dropout", self.dropout.to_string()),
            ("share_streams", self.share_streams.to_string()),
            ("lr", self.lr.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("tau", self.tau.to_string()),
            ("gamma1", self.gamma1.to_string()),
            ("gamma2", self.gamma2.to_string()),
            ("lambda_low", self.lambda_low.to_string()),
            ("lambda_high", self.lambda_high.to_string()),
            ("rho", self.rho.to_string()),
            ("laplacian", kind_str(self.laplacian).into()),
            ("fmmd_sign", self.fmmd_sign.to_string()),
            ("negative_term", negative_str(self.negative_term).into()),
            ("seeds", seeds.join(",")),
            ("use_smmi", self.use_smmi.to_string()),
            ("use_fmmd", self.use_fmmd.to_string()),
            ("desk_scale", self.desk_scale.to_string()),
            ("desk_graphs_per_domain", self.desk_graphs_per_domain.to_string()),
            ("desk_epochs", self.desk_epochs.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in lines.drain(..) {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// SHA-256 of [`Self::to_kv`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_kv().as_bytes()))
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::InvalidArgument(format!("invalid value `{value}` for `{key}`"));
        macro_rules! num {
            () => {
                value.parse().map_err(|_| bad())?
            };
        }
        match key {
            "dataset" => self.dataset = value.to_string(),
            "data_root" => self.data_root = Some(PathBuf::from(value)),
            "statistic" => self.statistic = value.parse()?,
            "k" => self.k = num!(),
            "split_seed" => self.split_seed = num!(),
            "source" => self.source = num!(),
            "target" => self.target = num!(),
            "layers" => self.layers = num!(),
            "hidden_dim" => self.hidden_dim = num!(),
            "embed_dim" => self.embed_dim = num!(),
            "dropout" => self.dropout = num!(),
            "share_streams" => self.share_streams = parse_bool(value).ok_or_else(bad)?,
            "lr" => self.lr = num!(),
            "epochs" => self.epochs = num!(),
            "batch_size" => self.batch_size = num!(),
            "tau" => self.tau = num!(),
            "gamma1" => self.gamma1 = num!(),
            "gamma2" => self.gamma2 = num!(),
            "lambda_low" => self.lambda_low = num!(),
            "lambda_high" => self.lambda_high = num!(),
            "rho" => self.rho = num!(),
            "laplacian" => self.laplacian = value.parse()?,
            "fmmd_sign" => self.fmmd_sign = value.parse()?,
            "negative_term" => {
                self.negative_term = match value {
                    "target_negatives" => NegativeTerm::TargetNegatives,
                    "target_self" => NegativeTerm::TargetSelf,
                    _ => return Err(bad()),
                }
            }
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .map(|s| s.trim().parse::<u64>().map_err(|_| bad()))
                    .collect::<Result<_>>()?
            }
            "use_smmi" => self.use_smmi = parse_bool(value).ok_or_else(bad)?,
            "use_fmmd" => self.use_fmmd = parse_bool(value).ok_or_else(bad)?,
            "desk_scale" => self.desk_scale = parse_bool(value).ok_or_else(bad)?,
            "desk_graphs_per_domain" => self.desk_graphs_per_domain = num!(),
            "desk_epochs" => self.desk_epochs = num!(),
            other => return Err(Error::InvalidArgument(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("config line {}: expected `key = value`", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
