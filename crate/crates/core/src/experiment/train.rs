//! Corpus preparation, the joint objective and the training loop.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentConfig;
use crate::autodiff::{Tape, Var};
use crate::dataset::{derive_seed, parse_tudataset, resolve_dataset_dir, split_domains, DomainSplit, GraphDataset, Partition};
use crate::losses::tape::{self as loss_tape, AnchorGroup, PairTerm};
use crate::losses::{LossWeights, NegativeTerm};
use crate::nn::{
    adam_step, classify, dual_encode, infer, save_checkpoint, AdamState, BoundParams, DropoutSampler, GraphBatch,
    ModelParams, PreparedGraph,
};
use crate::pairing::{select_negatives, Member, PairingPlan, PseudoLabel};
use crate::{Error, Result};

// purpose tags for derived seeds
const SEED_INIT: u64 = 1;
const SEED_SHUFFLE: u64 = 2;
const SEED_DROPOUT: u64 = 3;
const SEED_SUBSAMPLE: u64 = 4;

/// A dataset with its domain split and band-filtered features for every
/// graph, shared read-only between runs.
pub struct Corpus {
    pub dataset: GraphDataset,
    pub split: DomainSplit,
    pub prepared: Vec<PreparedGraph>,
    pub feature_dim: usize,
    /// `(rho, laplacian)` the features were filtered with.
    pub filter_key: (u64, crate::spectral::LaplacianKind),
}

impl Corpus {
    pub fn new(dataset: GraphDataset, split: DomainSplit, cfg: &ExperimentConfig) -> Result<Self> {
        if split.dataset_hash != dataset.content_hash() || split.domain.len() != dataset.graphs.len() {
            return Err(Error::Version(format!(
                "split was built for dataset hash {}, not {}",
                split.dataset_hash,
                dataset.content_hash()
            )));
        }
        let feature_dim = dataset.num_node_labels();
        let prepared = PreparedGraph::prepare_all(&dataset.graphs, feature_dim, cfg.rho, cfg.laplacian)?;
        Ok(Self {
            dataset,
            split,
            prepared,
            feature_dim,
            filter_key: (cfg.rho.to_bits(), cfg.laplacian),
        })
    }

    /// Parses `cfg.dataset` under `root` and splits it per the config.
    pub fn load(root: &Path, cfg: &ExperimentConfig) -> Result<Self> {
        let dir = resolve_dataset_dir(root, &cfg.dataset).ok_or_else(|| Error::Parse {
            file: root.join(format!("{}_A.txt", cfg.dataset)).display().to_string(),
            message: "dataset files not found".into(),
        })?;
        let dataset = parse_tudataset(&dir, &cfg.dataset)?;
        let split = split_domains(&dataset, cfg.statistic, cfg.k, cfg.split_seed)?;
        Self::new(dataset, split, cfg)
    }

    fn check_compatible(&self, cfg: &ExperimentConfig) -> Result<()> {
        if self.filter_key != (cfg.rho.to_bits(), cfg.laplacian) {
            return Err(Error::InvalidArgument("corpus was filtered with a different rho or laplacian".into()));
        }
        if self.split.k != cfg.k {
            return Err(Error::InvalidArgument(format!("split has k = {}, config wants {}", self.split.k, cfg.k)));
        }
        Ok(())
    }

    /// Members of a domain partition, subsampled in desk-scale mode. The
    /// subsample is drawn over the whole domain with the split seed, so
    /// every run sees the same graphs.
    pub fn members(&self, cfg: &ExperimentConfig, domain: usize, partition: Partition) -> Vec<usize> {
        let keep: Option<BTreeSet<usize>> = cfg.desk_scale.then(|| {
            let mut all = self.split.domain_members(domain);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.split_seed, &[SEED_SUBSAMPLE, domain as u64]));
            all.shuffle(&mut rng);
            all.truncate(cfg.desk_graphs_per_domain);
            all.into_iter().collect()
        });
        self.split
            .members(domain, partition)
            .into_iter()
            .filter(|i| keep.as_ref().map_or(true, |k| k.contains(i)))
            .collect()
    }

    fn label(&self, i: usize) -> u8 {
        self.dataset.graphs[i].class_label().expect("dataset graphs are labelled")
    }
}

/// Row layout and loss structure of one mixed batch. Rows `0..sources`
/// are source graphs, the rest are target graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    pub graphs: Vec<usize>,
    pub source_count: usize,
    pub source_labels: Vec<usize>,
    pub pair_terms: Vec<PairTerm>,
    pub source_groups: Vec<AnchorGroup>,
    pub target_groups: Vec<AnchorGroup>,
}

impl BatchPlan {
    /// `pairs` are `(source row, target row)` positions inside the batch;
    /// `pseudo[r]` is the pseudo-label of target row `source_count + r`.
    pub fn new(
        graphs: Vec<usize>,
        source_labels: Vec<u8>,
        pseudo: &[PseudoLabel],
        pairs: &[(usize, usize)],
    ) -> Result<Self> {
        let s = source_labels.len();
        if graphs.len() != s + pseudo.len() {
            return Err(Error::shape("batch_plan", format!("{} graphs for {} + {} rows", graphs.len(), s, pseudo.len())));
        }
        let mut members: Vec<Member> = source_labels.iter().enumerate().map(|(i, &l)| Member::source(i, l)).collect();
        members.extend(pseudo.iter().enumerate().map(|(r, p)| Member::target(s + r, p)));
        let mut partner = vec![None; graphs.len()];
        for &(a, b) in pairs {
            partner[a] = Some(b);
            partner[b] = Some(a);
        }
        let pair_terms = pairs
            .iter()
            .map(|&(a, b)| PairTerm { source: a, target: b, negatives: select_negatives(&members[a], Some(b), &members) })
            .filter(|t| !t.negatives.is_empty())
            .collect();
        let groups = |range: std::ops::Range<usize>| -> Vec<AnchorGroup> {
            range
                .map(|i| AnchorGroup { anchor: i, negatives: select_negatives(&members[i], partner[i], &members) })
                .filter(|g| !g.negatives.is_empty())
                .collect()
        };
        let (source_groups, target_groups) = if pseudo.is_empty() {
            (Vec::new(), Vec::new())
        } else {
            (groups(0..s), groups(s..graphs.len()))
        };
        Ok(Self {
            graphs,
            source_count: s,
            source_labels: source_labels.iter().map(|&l| usize::from(l)).collect(),
            pair_terms,
            source_groups,
            target_groups,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveSettings {
    pub weights: LossWeights,
    pub tau: f64,
    pub lambda_low: f64,
    pub lambda_high: f64,
    pub negative_term: NegativeTerm,
}

impl ObjectiveSettings {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            weights: cfg.loss_weights(),
            tau: cfg.tau,
            lambda_low: cfg.lambda_low,
            lambda_high: cfg.lambda_high,
            negative_term: cfg.negative_term,
        }
    }
}

/// Tape handles of the objective's terms. A term is `None` when its weight
/// is zero or the batch offers nothing to contrast.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveVars {
    pub ce: Var,
    pub smmi: Option<Var>,
    pub fmmd: Option<Var>,
    pub total: Var,
}

/// Records `ce + γ₁·smmi + γ₂·fmmd` for one batch. With both weights zero
/// the total is the cross-entropy node itself.
pub fn record_objective(
    t: &mut Tape,
    params: &ModelParams,
    bound: &BoundParams,
    batch: &GraphBatch,
    plan: &BatchPlan,
    settings: &ObjectiveSettings,
    dropout: Option<&mut DropoutSampler>,
) -> Result<ObjectiveVars> {
    let z = dual_encode(t, params, bound, batch, dropout)?;
    let logits = classify(t, params, bound, z)?;
    let source_rows: Vec<usize> = (0..plan.source_count).collect();
    let source_logits = t.gather_rows(logits, &source_rows)?;
    let ce = t.softmax_cross_entropy(source_logits, &plan.source_labels)?;
    let w = settings.weights;

    let smmi = if w.gamma_smmi > 0.0 && !plan.pair_terms.is_empty() {
        Some(loss_tape::smmi(
            t,
            z,
            &plan.pair_terms,
            settings.tau,
            settings.lambda_low,
            settings.lambda_high,
            settings.negative_term,
        )?)
    } else {
        None
    };
    let fmmd = if w.gamma_fmmd > 0.0 && !(plan.source_groups.is_empty() && plan.target_groups.is_empty()) {
        Some(loss_tape::fmmd(t, z, &plan.source_groups, &plan.target_groups, w.fmmd_sign)?)
    } else {
        None
    };
    let mut total = ce;
    for (term, gamma) in [(smmi, w.gamma_smmi), (fmmd, w.gamma_fmmd)] {
        if let Some(v) = term {
            let scaled = t.scale(v, gamma)?;
            total = t.add(total, scaled)?;
        }
    }
    Ok(ObjectiveVars { ce, smmi, fmmd, total })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub ce: f64,
    pub smmi: f64,
    pub fmmd: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedRun {
    pub seed: u64,
    pub epochs: Vec<EpochLosses>,
    pub target_test_accuracy: f64,
    pub source_train_accuracy: f64,
    pub smmi_evaluations: usize,
    pub fmmd_evaluations: usize,
    #[serde(skip)]
    pub params: ModelParams,
    #[serde(skip)]
    pub wall_clock: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub config_hash: String,
    pub source: usize,
    pub target: usize,
    pub runs: Vec<SeedRun>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    #[serde(skip)]
    pub wall_clock: Duration,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Fraction of graphs whose argmax logit equals the class label. Ties
/// predict class 0.
pub fn accuracy(params: &ModelParams, corpus: &Corpus, graphs: &[usize]) -> Result<f64> {
    if graphs.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty partition".into()));
    }
    let refs: Vec<&PreparedGraph> = graphs.iter().map(|&i| &corpus.prepared[i]).collect();
    let out = infer(params, &refs)?;
    let correct = out
        .iter()
        .zip(graphs)
        .filter(|(inf, &i)| u8::from(inf.logits[1] > inf.logits[0]) == corpus.label(i))
        .count();
    Ok(correct as f64 / graphs.len() as f64)
}

/// Accuracy of a checkpoint on one domain partition.
pub fn evaluate(checkpoint: &Path, corpus: &Corpus, cfg: &ExperimentConfig, domain: usize, partition: Partition) -> Result<f64> {
    let params = crate::nn::load_checkpoint(&cfg.encoder(corpus.feature_dim), checkpoint)?;
    accuracy(&params, corpus, &corpus.members(cfg, domain, partition))
}

#[derive(Default)]
struct Running {
    ce: f64,
    smmi: (f64, usize),
    fmmd: (f64, usize),
    total: f64,
    batches: usize,
}

/// Trains one seed.
pub fn train_seed(corpus: &Corpus, cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    cfg.validate()?;
    corpus.check_compatible(cfg)?;
    let started = Instant::now();
    let sources = corpus.members(cfg, cfg.source, Partition::Train);
    let targets = corpus.members(cfg, cfg.target, Partition::Train);
    let target_test = corpus.members(cfg, cfg.target, Partition::Test);
    if sources.is_empty() || targets.is_empty() || target_test.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "domains {} → {} leave an empty partition ({} source train, {} target train, {} target test)",
            cfg.source,
            cfg.target,
            sources.len(),
            targets.len(),
            target_test.len()
        )));
    }
    let settings = ObjectiveSettings::from_config(cfg);
    let adapt = settings.weights.gamma_smmi > 0.0 || settings.weights.gamma_fmmd > 0.0;
    let mut params = ModelParams::init(cfg.encoder(corpus.feature_dim), derive_seed(seed, &[SEED_INIT]))?;
    let mut adam = AdamState::new(params.tensors());
    let adam_cfg = cfg.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[SEED_SHUFFLE]));
    let half = (cfg.batch_size / 2).max(1);
    let source_refs: Vec<&PreparedGraph> = sources.iter().map(|&i| &corpus.prepared[i]).collect();
    let target_refs: Vec<&PreparedGraph> = targets.iter().map(|&i| &corpus.prepared[i]).collect();

    let mut epochs = Vec::new();
    let (mut smmi_evals, mut fmmd_evals) = (0, 0);
    for epoch in 0..cfg.effective_epochs() {
        let plan = if adapt {
            let src = infer(&params, &source_refs)?;
            let tgt = infer(&params, &target_refs)?;
            let src_emb: Vec<_> = src.into_iter().map(|i| i.embedding).collect();
            let tgt_logits: Vec<[f64; 2]> = tgt.iter().map(|i| i.logits).collect();
            let tgt_emb: Vec<_> = tgt.into_iter().map(|i| i.embedding).collect();
            Some(PairingPlan::build(&src_emb, &tgt_emb, &tgt_logits)?)
        } else {
            None
        };
        let partner_of_source: Vec<Option<usize>> = match &plan {
            Some(p) => {
                let mut v = vec![None; sources.len()];
                for &(s, t) in &p.positives {
                    v[s] = Some(t);
                }
                v
            }
            None => Vec::new(),
        };

        let mut order: Vec<usize> = (0..sources.len()).collect();
        order.shuffle(&mut rng);
        let mut acc = Running::default();
        for (b, chunk) in order.chunks(half).enumerate() {
            let mut graphs: Vec<usize> = chunk.iter().map(|&s| sources[s]).collect();
            let labels: Vec<u8> = graphs.iter().map(|&g| corpus.label(g)).collect();
            let mut pseudo = Vec::new();
            let mut pairs = Vec::new();
            if let Some(plan) = &plan {
                // partners first, then random distinct targets up to an equal count
                let mut chosen: Vec<usize> = Vec::new();
                for (row, &s) in chunk.iter().enumerate() {
                    if let Some(t) = partner_of_source[s] {
                        pairs.push((row, chunk.len() + chosen.len()));
                        chosen.push(t);
                    }
                }
                let want = chunk.len().min(targets.len());
                if chosen.len() < want {
                    let taken: BTreeSet<usize> = chosen.iter().copied().collect();
                    let mut pool: Vec<usize> = (0..targets.len()).filter(|t| !taken.contains(t)).collect();
                    pool.shuffle(&mut rng);
                    chosen.extend(pool.into_iter().take(want - chosen.len()));
                }
                pseudo = chosen.iter().map(|&t| plan.pseudo_labels[t]).collect();
                graphs.extend(chosen.iter().map(|&t| targets[t]));
            }
            let batch_plan = BatchPlan::new(graphs, labels, &pseudo, &pairs)?;
            let refs: Vec<&PreparedGraph> = batch_plan.graphs.iter().map(|&i| &corpus.prepared[i]).collect();
            let batch = GraphBatch::new(&refs)?;
            let mut dropout = DropoutSampler::new(cfg.dropout, derive_seed(seed, &[SEED_DROPOUT, epoch as u64, b as u64]));
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape)?;
            let vars = record_objective(&mut tape, &params, &bound, &batch, &batch_plan, &settings, Some(&mut dropout))
                .map_err(|e| diverged(e, seed, epoch, b))?;
            let grads = tape.backward(vars.total)?;
            let grad_list: Vec<_> = bound
                .vars
                .iter()
                .zip(params.tensors())
                .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
                .collect();
            adam_step(params.tensors_mut(), &grad_list, &mut adam, &adam_cfg)?;
            if params.tensors().iter().any(|p| !p.is_finite()) {
                return Err(diverged(Error::numerical("adam_step", "non-finite parameters"), seed, epoch, b));
            }

            acc.ce += tape.scalar(vars.ce);
            acc.total += tape.scalar(vars.total);
            acc.batches += 1;
            if let Some(v) = vars.smmi {
                acc.smmi.0 += tape.scalar(v);
                acc.smmi.1 += 1;
                smmi_evals += 1;
            }
            if let Some(v) = vars.fmmd {
                acc.fmmd.0 += tape.scalar(v);
                acc.fmmd.1 += 1;
                fmmd_evals += 1;
            }
        }
        let n = acc.batches as f64;
        let mean = |(s, c): (f64, usize)| if c == 0 { 0.0 } else { s / c as f64 };
        let losses = EpochLosses { epoch, ce: acc.ce / n, smmi: mean(acc.smmi), fmmd: mean(acc.fmmd), total: acc.total / n };
        log::debug!("seed {seed} epoch {epoch}: {losses:?}");
        epochs.push(losses);
    }

    Ok(SeedRun {
        seed,
        epochs,
        target_test_accuracy: accuracy(&params, corpus, &target_test)?,
        source_train_accuracy: accuracy(&params, corpus, &sources)?,
        smmi_evaluations: smmi_evals,
        fmmd_evaluations: fmmd_evals,
        params,
        wall_clock: started.elapsed(),
    })
}

fn diverged(e: Error, seed: u64, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Numerical { op, detail } => Error::Numerical {
            op,
            detail: format!("{detail} (training diverged at seed {seed}, epoch {epoch}, batch {batch})"),
        },
        other => other,
    }
}

/// Trains every configured seed in parallel; results keep seed order.
pub fn train(corpus: &Corpus, cfg: &ExperimentConfig) -> Result<RunResult> {
    cfg.validate()?;
    let started = Instant::now();
    let runs: Vec<SeedRun> = cfg.seeds.par_iter().map(|&s| train_seed(corpus, cfg, s)).collect::<Result<_>>()?;
    let accs: Vec<f64> = runs.iter().map(|r| r.target_test_accuracy).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&accs);
    Ok(RunResult {
        config_hash: cfg.hash(),
        source: cfg.source,
        target: cfg.target,
        runs,
        mean_accuracy,
        std_accuracy,
        wall_clock: started.elapsed(),
    })
}

/// Writes `losses.csv`, `accuracy.csv`, one checkpoint per seed and the
/// JSON run manifest into `out`.
pub fn write_run(result: &RunResult, corpus: &Corpus, cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut losses = String::from("seed,epoch,ce,smmi,fmmd,total\n");
    let mut accs = String::from("seed,target_test_accuracy,source_train_accuracy\n");
    for r in &result.runs {
        for e in &r.epochs {
            losses.push_str(&format!("{},{},{:.10},{:.10},{:.10},{:.10}\n", r.seed, e.epoch, e.ce, e.smmi, e.fmmd, e.total));
        }
        accs.push_str(&format!("{},{:.6},{:.6}\n", r.seed, r.target_test_accuracy, r.source_train_accuracy));
        save_checkpoint(&r.params, &out.join(format!("checkpoint_seed{}.bin", r.seed)))?;
    }
    write_file(&out.join("losses.csv"), &losses)?;
    write_file(&out.join("accuracy.csv"), &accs)?;
    let manifest = serde_json::json!({
        "config": cfg,
        "config_hash": result.config_hash,
        "dataset_hash": corpus.dataset.content_hash(),
        "seeds": cfg.seeds,
        "metrics": {
            "mean_accuracy": result.mean_accuracy,
            "std_accuracy": result.std_accuracy,
            "per_seed": result.runs,
        },
    });
    write_file(&out.join("run_manifest.json"), &serde_json::to_string_pretty(&manifest).expect("serializable"))
}

pub(crate) fn write_file(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthetic_dataset, SplitStatistic};
    use crate::nn::EncoderConfig;
    use crate::Matrix;

    fn toy(count: usize) -> (Corpus, ExperimentConfig) {
        let cfg = ExperimentConfig {
            dataset: "TOY".into(),
            k: 2,
            hidden_dim: 8,
            embed_dim: 6,
            layers: 2,
            epochs: 2,
            batch_size: 8,
            lr: 1e-2,
            seeds: vec![0, 1],
            ..ExperimentConfig::default()
        };
        let ds = synthetic_dataset("TOY", count, 3).unwrap();
        let split = split_domains(&ds, SplitStatistic::EdgeDensity, 2, 0).unwrap();
        (Corpus::new(ds, split, &cfg).unwrap(), cfg)
    }

    #[test]
    fn two_epoch_smoke() {
        let (corpus, cfg) = toy(40);
        let r = train(&corpus, &cfg).unwrap();
        assert_eq!(r.runs.len(), 2);
        for run in &r.runs {
            assert_eq!(run.epochs.len(), 2);
            assert!(run.epochs.iter().all(|e| e.total.is_finite() && e.ce > 0.0));
            assert!((0.0..=1.0).contains(&run.target_test_accuracy));
            assert!(run.smmi_evaluations > 0 && run.fmmd_evaluations > 0);
        }
        let dir = tempfile::tempdir().unwrap();
        write_run(&r, &corpus, &cfg, dir.path()).unwrap();
        for f in ["losses.csv", "accuracy.csv", "run_manifest.json", "checkpoint_seed0.bin", "checkpoint_seed1.bin"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let acc = evaluate(&dir.path().join("checkpoint_seed1.bin"), &corpus, &cfg, 1, Partition::Test).unwrap();
        assert_eq!(acc, r.runs[1].target_test_accuracy);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let (corpus, cfg) = toy(40);
        let a = train(&corpus, &cfg).unwrap();
        let b = train(&corpus, &cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        for (x, y) in a.runs.iter().zip(&b.runs) {
            assert_eq!(x.params, y.params);
        }
    }

    #[test]
    fn control_run_is_pure_cross_entropy() {
        let (corpus, mut cfg) = toy(40);
        cfg.use_smmi = false;
        cfg.use_fmmd = false;
        let run = train_seed(&corpus, &cfg, 0).unwrap();
        assert_eq!((run.smmi_evaluations, run.fmmd_evaluations), (0, 0));
        for e in &run.epochs {
            assert_eq!(e.total.to_bits(), e.ce.to_bits());
        }
    }

    #[test]
    fn corpus_rejects_foreign_split() {
        let (corpus, cfg) = toy(40);
        let other = synthetic_dataset("TOY", 40, 4).unwrap();
        assert!(matches!(Corpus::new(other, corpus.split.clone(), &cfg), Err(Error::Version(_))));
        let wrong_rho = ExperimentConfig { rho: 0.25, ..cfg.clone() };
        assert!(train_seed(&corpus, &wrong_rho, 0).is_err());
    }

    fn constant_classifier(input_dim: usize) -> ModelParams {
        let cfg = EncoderConfig { hidden_dim: 4, embed_dim: 3, layers: 1, ..EncoderConfig::new(input_dim) };
        let tensors = cfg
            .layout()
            .iter()
            .map(|(name, (r, c))| {
                if name == "classifier.b" {
                    Matrix::from_vec(1, 2, vec![0.0, 1.0]).unwrap()
                } else if name.ends_with("proj.b") {
                    // keeps the embedding off the zero vector
                    Matrix::from_vec(*r, *c, vec![1.0; r * c]).unwrap()
                } else {
                    Matrix::zeros(*r, *c)
                }
            })
            .collect();
        ModelParams::from_tensors(cfg, tensors).unwrap()
    }

    #[test]
    fn accuracy_hand_counts() {
        let (corpus, _) = toy(40);
        let p = constant_classifier(corpus.feature_dim);
        // labels alternate 0,1,0,1,0 and every graph is predicted class 1
        assert_eq!(accuracy(&p, &corpus, &[0, 1, 2, 3, 4]).unwrap(), 0.4);
        assert_eq!(accuracy(&p, &corpus, &[1, 3]).unwrap(), 1.0);
        let all: Vec<usize> = (0..40).collect();
        assert_eq!(accuracy(&p, &corpus, &all).unwrap(), 0.5);
        assert!(accuracy(&p, &corpus, &[]).is_err());
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[0.5, 0.7, 0.9]);
        assert!((m - 0.7).abs() < 1e-15);
        assert!((s - 0.2).abs() < 1e-15);
        assert_eq!(mean_std(&[0.3]), (0.3, 0.0));
    }

    #[test]
    fn desk_scale_subsample_is_stable() {
        let (corpus, cfg) = toy(200);
        let desk = ExperimentConfig { desk_scale: true, desk_graphs_per_domain: 30, ..cfg };
        let a: Vec<usize> = [Partition::Train, Partition::Test]
            .iter()
            .flat_map(|&p| corpus.members(&desk, 0, p))
            .collect();
        assert_eq!(a.len(), 30);
        assert_eq!(corpus.members(&desk, 0, Partition::Train), corpus.members(&desk, 0, Partition::Train));
    }
}
