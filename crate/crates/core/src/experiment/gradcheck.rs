//! Finite-difference audit of every objective term on random small batches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::train::{record_objective, BatchPlan, ObjectiveSettings, ObjectiveVars};
use crate::autodiff::{check_gradients, GradCheckReport, Tape, Var};
use crate::dataset::derive_seed;
use crate::losses::{FmmdSign, LossWeights, NegativeTerm};
use crate::nn::{BoundParams, DropoutSampler, EncoderConfig, GraphBatch, ModelParams, PreparedGraph};
use crate::pairing::PseudoLabel;
use crate::spectral::LaplacianKind;
use crate::{Error, Graph, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Ce,
    Smmi,
    FmmdAttractive,
    FmmdRepulsive,
    Combined,
}

impl Term {
    pub const ALL: [Term; 5] = [Term::Ce, Term::Smmi, Term::FmmdAttractive, Term::FmmdRepulsive, Term::Combined];

    fn settings(self) -> ObjectiveSettings {
        let (gamma_smmi, gamma_fmmd, fmmd_sign) = match self {
            Term::Ce => (0.0, 0.0, FmmdSign::Repulsive),
            Term::Smmi => (1.0, 0.0, FmmdSign::Repulsive),
            Term::FmmdAttractive => (0.0, 1.0, FmmdSign::Attractive),
            Term::FmmdRepulsive => (0.0, 1.0, FmmdSign::Repulsive),
            Term::Combined => (0.5, 0.5, FmmdSign::Repulsive),
        };
        ObjectiveSettings {
            weights: LossWeights { gamma_smmi, gamma_fmmd, fmmd_sign },
            tau: 0.1,
            lambda_low: std::f64::consts::FRAC_1_SQRT_2,
            lambda_high: std::f64::consts::FRAC_1_SQRT_2,
            negative_term: NegativeTerm::TargetNegatives,
        }
    }

    fn pick(self, v: &ObjectiveVars) -> Result<Var> {
        let missing = || Error::Contract(format!("{self:?} term was not recorded"));
        match self {
            Term::Ce => Ok(v.ce),
            Term::Smmi => v.smmi.ok_or_else(missing),
            Term::FmmdAttractive | Term::FmmdRepulsive => v.fmmd.ok_or_else(missing),
            Term::Combined => Ok(v.total),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermReport {
    pub term: Term,
    pub report: GradCheckReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckSummary {
    pub seed: u64,
    pub batches: usize,
    pub terms: Vec<TermReport>,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// A random mixed batch: 4..=8 graphs of 2..=10 nodes, half source.
pub struct RandomBatch {
    pub graphs: Vec<PreparedGraph>,
    pub plan: BatchPlan,
}

pub const FEATURE_DIM: usize = 3;

pub fn random_batch(rng: &mut ChaCha8Rng) -> Result<RandomBatch> {
    let count = rng.gen_range(4..=8);
    let mut graphs = Vec::with_capacity(count);
    for _ in 0..count {
        let n = rng.gen_range(2..=10);
        let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.gen_range(0..v), v)).collect();
        for _ in 0..rng.gen_range(0..n) {
            let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
            if a != b {
                edges.push((a, b));
            }
        }
        let labels = (0..n).map(|_| rng.gen_range(0..FEATURE_DIM)).collect();
        let g = Graph::new(n, edges, labels, None)?;
        graphs.push(PreparedGraph::new(&g, FEATURE_DIM, 0.5, LaplacianKind::Normalized)?);
    }
    let sources = count / 2;
    let source_labels: Vec<u8> = (0..sources).map(|i| (i % 2) as u8).collect();
    let pseudo: Vec<PseudoLabel> = (sources..count)
        .map(|_| PseudoLabel { label: rng.gen_range(0..2), confidence: rng.gen_range(0.5..1.0) })
        .collect();
    let pairs: Vec<(usize, usize)> = (0..sources.min(count - sources)).map(|i| (i, sources + i)).collect();
    let plan = BatchPlan::new((0..count).collect(), source_labels, &pseudo, &pairs)?;
    Ok(RandomBatch { graphs, plan })
}

fn check_term(
    params: &ModelParams,
    batch: &RandomBatch,
    term: Term,
    dropout_seed: u64,
    entries: Option<&[(usize, usize)]>,
) -> Result<GradCheckReport> {
    let settings = term.settings();
    let refs: Vec<&PreparedGraph> = batch.graphs.iter().collect();
    let gb = GraphBatch::new(&refs)?;
    check_gradients(params.tensors(), entries, |t: &mut Tape, vars: &[Var]| {
        let bound = BoundParams { vars: vars.to_vec() };
        let mut drop = DropoutSampler::new(params.config().dropout, dropout_seed);
        let v = record_objective(t, params, &bound, &gb, &batch.plan, &settings, Some(&mut drop))?;
        term.pick(&v)
    })
}

/// Checks every term over `batches` random batches with narrow layers, so
/// every parameter entry is perturbed.
pub fn gradcheck(seed: u64, batches: usize) -> Result<GradcheckSummary> {
    if batches == 0 {
        return Err(Error::InvalidArgument("at least one batch is required".into()));
    }
    let cfg = EncoderConfig { hidden_dim: 5, embed_dim: 4, ..EncoderConfig::new(FEATURE_DIM) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports: Vec<TermReport> =
        Term::ALL.iter().map(|&term| TermReport { term, report: GradCheckReport::default() }).collect();
    for b in 0..batches {
        let batch = random_batch(&mut rng)?;
        let params = ModelParams::init(cfg.clone(), derive_seed(seed, &[b as u64]))?;
        for r in reports.iter_mut() {
            let rep = check_term(&params, &batch, r.term, derive_seed(seed, &[b as u64, 1]), None)?;
            r.report.merge(&rep);
        }
    }
    let max_rel_error = reports.iter().map(|r| r.report.max_rel_error).fold(0.0, f64::max);
    let passed = reports.iter().all(|r| r.report.passed() && r.report.checked > 0);
    Ok(GradcheckSummary { seed, batches, terms: reports, max_rel_error, passed })
}

/// Combined objective at the default widths, on `samples` random entries.
pub fn gradcheck_full_width(seed: u64, samples: usize) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = random_batch(&mut rng)?;
    let params = ModelParams::init(EncoderConfig::new(FEATURE_DIM), derive_seed(seed, &[0]))?;
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.data().len()).collect();
    let entries: Vec<(usize, usize)> = (0..samples)
        .map(|_| {
            let p = rng.gen_range(0..sizes.len());
            (p, rng.gen_range(0..sizes[p]))
        })
        .collect();
    check_term(&params, &batch, Term::Combined, derive_seed(seed, &[0, 1]), Some(&entries))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_gradcheck_passes() {
        let s = gradcheck(7, 2).unwrap();
        assert!(s.passed, "{s:?}");
        assert_eq!(s.terms.len(), 5);
    }

    #[test]
    fn random_batches_have_all_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let b = random_batch(&mut rng).unwrap();
            assert!(!b.plan.pair_terms.is_empty());
            assert!(!b.plan.source_groups.is_empty());
            for t in &b.plan.pair_terms {
                assert!(!t.negatives.contains(&t.source) && !t.negatives.contains(&t.target));
            }
        }
    }
}
