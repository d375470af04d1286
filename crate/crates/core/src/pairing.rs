//! Cross-domain positive pairs, target pseudo-labels and negative sets.

use rayon::prelude::*;
use serde::Serialize;

use crate::losses::DualEmbedding;
use crate::{Error, Matrix, Result};

/// Targets below this confidence stay out of negative pools.
pub const CONFIDENCE_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PseudoLabel {
    pub label: u8,
    pub confidence: f64,
}

impl PseudoLabel {
    pub fn is_confident(&self) -> bool {
        self.confidence >= CONFIDENCE_THRESHOLD
    }
}

/// Softmax argmax per row; ties go to class 0.
pub fn pseudo_label(logits: &[[f64; 2]]) -> Vec<PseudoLabel> {
    logits
        .iter()
        .map(|&[a, b]| {
            // p1 = σ(b − a)
            let p1 = 1.0 / (1.0 + (a - b).exp());
            if b > a {
                PseudoLabel { label: 1, confidence: p1 }
            } else {
                PseudoLabel { label: 0, confidence: 1.0 - p1 }
            }
        })
        .collect()
}

fn stack(embeds: &[DualEmbedding], high: bool) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = embeds
        .iter()
        .map(|e| if high { e.high().to_vec() } else { e.low().to_vec() })
        .collect();
    Matrix::from_rows(&rows)
}

const BLOCK: usize = 128;

/// Mutual nearest neighbours under the frequency kernel. For unit-norm
/// embeddings the kernel is `z_lᵀz_l' + z_gᵀz_g'`; argmax ties resolve to
/// the lower index. Pairs are sorted by source index.
pub fn mine_positive_pairs(sources: &[DualEmbedding], targets: &[DualEmbedding]) -> Result<Vec<(usize, usize)>> {
    if sources.is_empty() || targets.is_empty() {
        return Err(Error::InvalidArgument("pair mining needs non-empty source and target sets".into()));
    }
    let (tl, th) = (stack(targets, false)?.transpose(), stack(targets, true)?.transpose());
    let (sl, sh) = (stack(sources, false)?, stack(sources, true)?);
    let d_low = sl.cols();
    let d_high = sh.cols();

    // per block: best target for each source row, best source (value, index) per target
    let blocks: Vec<(Vec<usize>, Vec<(f64, usize)>)> = (0..sources.len())
        .step_by(BLOCK)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| -> Result<_> {
            let end = (start + BLOCK).min(sources.len());
            let rows = end - start;
            let bl = Matrix::from_vec(rows, d_low, sl.data()[start * d_low..end * d_low].to_vec())?;
            let bh = Matrix::from_vec(rows, d_high, sh.data()[start * d_high..end * d_high].to_vec())?;
            let k = bl.matmul(&tl)?.add(&bh.matmul(&th)?)?;
            let mut row_best = Vec::with_capacity(rows);
            let mut col_best = vec![(f64::NEG_INFINITY, usize::MAX); targets.len()];
            for r in 0..rows {
                let mut best = (f64::NEG_INFINITY, 0);
                for (j, &v) in k.row(r).iter().enumerate() {
                    if v > best.0 {
                        best = (v, j);
                    }
                    if v > col_best[j].0 {
                        col_best[j] = (v, start + r);
                    }
                }
                row_best.push(best.1);
            }
            Ok((row_best, col_best))
        })
        .collect::<Result<_>>()?;

    let mut nearest_target = Vec::with_capacity(sources.len());
    let mut nearest_source = vec![(f64::NEG_INFINITY, usize::MAX); targets.len()];
    for (rows, cols) in blocks {
        nearest_target.extend(rows);
        for (acc, c) in nearest_source.iter_mut().zip(cols) {
            if c.0 > acc.0 {
                *acc = c;
            }
        }
    }
    Ok(nearest_target
        .iter()
        .enumerate()
        .filter(|&(i, &j)| nearest_source[j].1 == i)
        .map(|(i, &j)| (i, j))
        .collect())
}

/// A batch member as seen by negative selection. `label` is the true label
/// for source graphs, the pseudo-label for confident targets and `None`
/// for targets below the confidence threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Member {
    pub index: usize,
    pub label: Option<u8>,
}

impl Member {
    pub fn source(index: usize, label: u8) -> Self {
        Self { index, label: Some(label) }
    }

    pub fn target(index: usize, pseudo: &PseudoLabel) -> Self {
        Self { index, label: pseudo.is_confident().then_some(pseudo.label) }
    }
}

/// Members whose known label differs from the anchor's, excluding the
/// anchor and its paired partner. Falls back to every other member when
/// that set is empty or the anchor's own label is unknown.
pub fn select_negatives(anchor: &Member, partner: Option<usize>, batch: &[Member]) -> Vec<usize> {
    let eligible = |m: &&Member| m.index != anchor.index && Some(m.index) != partner;
    if let Some(own) = anchor.label {
        let opposite: Vec<usize> = batch
            .iter()
            .filter(eligible)
            .filter(|m| m.label.is_some_and(|l| l != own))
            .map(|m| m.index)
            .collect();
        if !opposite.is_empty() {
            return opposite;
        }
    }
    batch.iter().filter(eligible).map(|m| m.index).collect()
}

/// Positive pairs and target pseudo-labels for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairingPlan {
    pub positives: Vec<(usize, usize)>,
    pub pseudo_labels: Vec<PseudoLabel>,
}

impl PairingPlan {
    pub fn build(sources: &[DualEmbedding], targets: &[DualEmbedding], target_logits: &[[f64; 2]]) -> Result<Self> {
        if targets.len() != target_logits.len() {
            return Err(Error::shape("pairing", format!("{} targets, {} logit rows", targets.len(), target_logits.len())));
        }
        Ok(Self {
            positives: mine_positive_pairs(sources, targets)?,
            pseudo_labels: pseudo_label(target_logits),
        })
    }

    /// Partner of each target under the positive pairs.
    pub fn partner_of_target(&self, target_count: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; target_count];
        for &(s, t) in &self.positives {
            out[t] = Some(s);
        }
        out
    }

    /// `kind,index,partner_or_label,confidence` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,index,value,confidence\n");
        for (a, b) in &self.positives {
            s.push_str(&format!("pair,{a},{b},\n"));
        }
        for (i, p) in self.pseudo_labels.iter().enumerate() {
            s.push_str(&format!("pseudo,{i},{},{:.6}\n", p.label, p.confidence));
        }
        s
    }
}
