//! Naive reference implementations shared by the integration tests and
//! the acceptance binary. They work on concatenated raw vectors with plain
//! loops and no log-domain tricks, so they share no code path with the
//! library.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specnet::autodiff::Tape;
use specnet::losses::tape::{self as loss_tape, AnchorGroup, BandRows, PairTerm};
use specnet::losses::{random_dual, ContrastiveBatch, DualEmbedding, FmmdSign, NegativeTerm};
use specnet::Matrix;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn weighted(z: &DualEmbedding, wl: f64, wg: f64) -> Vec<f64> {
    let mut v: Vec<f64> = z.low().iter().map(|x| wl * x).collect();
    v.extend(z.high().iter().map(|x| wg * x));
    v
}

/// `k(x, y)` as the inner product of the plain concatenations.
pub fn kernel(x: &DualEmbedding, y: &DualEmbedding) -> f64 {
    dot(&weighted(x, 1.0, 1.0), &weighted(y, 1.0, 1.0))
}

pub fn smmi(batch: &ContrastiveBatch) -> f64 {
    let sim = |a: &DualEmbedding, b: &DualEmbedding| {
        dot(&weighted(a, batch.lambda_low, batch.lambda_high), &weighted(b, batch.lambda_low, batch.lambda_high))
    };
    let mut total = 0.0;
    for (s, t) in &batch.positives {
        let mut denom = 0.0;
        for n in &batch.negatives {
            denom += (sim(s, n) / batch.tau).exp();
        }
        for n in &batch.negatives {
            denom += match batch.negative_term {
                NegativeTerm::TargetNegatives => (sim(t, n) / batch.tau).exp(),
                NegativeTerm::TargetSelf => (sim(t, t) / batch.tau).exp(),
            };
        }
        total += -((sim(s, t) / batch.tau).exp() / denom).ln();
    }
    total / batch.positives.len() as f64
}

pub fn smmi_decomposed(batch: &ContrastiveBatch) -> f64 {
    let p = batch.positives.len() as f64;
    let n = batch.negatives.len() as f64;
    let mut band = [0.0; 2];
    for (b, out) in band.iter_mut().enumerate() {
        let pick = |z: &DualEmbedding| if b == 0 { z.low().to_vec() } else { z.high().to_vec() };
        let mut pos = 0.0;
        let mut neg = 0.0;
        for (s, t) in &batch.positives {
            pos += dot(&pick(s), &pick(t));
            for z in &batch.negatives {
                neg += dot(&pick(s), &pick(z));
                neg += dot(&pick(t), &pick(z));
            }
        }
        *out = pos / p - neg / (2.0 * p * n);
    }
    let (l2, g2) = (batch.lambda_low * batch.lambda_low, batch.lambda_high * batch.lambda_high);
    -(l2 * band[0] + g2 * band[1]) / batch.tau
}

pub fn mmd2<T>(xs: &[T], ys: &[T], k: impl Fn(&T, &T) -> f64, biased: bool) -> f64 {
    let mut xx = 0.0;
    let mut xx_count = 0.0;
    for i in 0..xs.len() {
        for j in 0..xs.len() {
            if biased || i != j {
                xx += k(&xs[i], &xs[j]);
                xx_count += 1.0;
            }
        }
    }
    let mut yy = 0.0;
    let mut yy_count = 0.0;
    for i in 0..ys.len() {
        for j in 0..ys.len() {
            if biased || i != j {
                yy += k(&ys[i], &ys[j]);
                yy_count += 1.0;
            }
        }
    }
    let mut xy = 0.0;
    for x in xs {
        for y in ys {
            xy += k(x, y);
        }
    }
    xx / xx_count + yy / yy_count - 2.0 * xy / (xs.len() * ys.len()) as f64
}

/// Biased MMD² under the frequency kernel through its explicit feature
/// map: the squared distance between mean concatenated embeddings.
pub fn mmd2_feature_map(xs: &[DualEmbedding], ys: &[DualEmbedding]) -> f64 {
    let mean = |s: &[DualEmbedding]| {
        let mut m = vec![0.0; s[0].low().len() + s[0].high().len()];
        for z in s {
            for (a, b) in m.iter_mut().zip(weighted(z, 1.0, 1.0)) {
                *a += b / s.len() as f64;
            }
        }
        m
    };
    let (a, b) = (mean(xs), mean(ys));
    a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn fmmd(sources: &[DualEmbedding], targets: &[DualEmbedding], negatives: &[DualEmbedding], sign: FmmdSign) -> f64 {
    let mut s_total = 0.0;
    for s in sources {
        for n in negatives {
            s_total += kernel(s, n);
        }
    }
    let mut t_total = 0.0;
    for t in targets {
        for n in negatives {
            t_total += kernel(t, n);
        }
    }
    let nn = negatives.len() as f64;
    let b = s_total / (sources.len() as f64 * nn) + t_total / (targets.len() as f64 * nn);
    match sign {
        FmmdSign::Attractive => -b,
        FmmdSign::Repulsive => b,
    }
}

/// A random contrastive batch of at most 16 embeddings.
pub fn random_batch(rng: &mut ChaCha8Rng) -> ContrastiveBatch {
    let dim = rng.gen_range(2..=6);
    let pairs = rng.gen_range(1..=6);
    let negatives = rng.gen_range(1..=16 - 2 * pairs);
    let positives = (0..pairs).map(|_| (random_dual(dim, rng), random_dual(dim, rng))).collect();
    let negatives = (0..negatives).map(|_| random_dual(dim, rng)).collect();
    let tau = rng.gen_range(0.05..1.0);
    let ll: f64 = rng.gen_range(0.2..1.0);
    let mut b = ContrastiveBatch::new(positives, negatives, tau, ll, (1.0 - ll * ll).sqrt()).unwrap();
    if rng.gen_bool(0.5) {
        b.negative_term = NegativeTerm::TargetSelf;
    }
    b
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Rows: sources, then targets, then negatives.
fn stack(batch: &ContrastiveBatch, t: &mut Tape) -> BandRows {
    let rows: Vec<&DualEmbedding> = batch
        .positives
        .iter()
        .map(|p| &p.0)
        .chain(batch.positives.iter().map(|p| &p.1))
        .chain(&batch.negatives)
        .collect();
    let build = |f: fn(&DualEmbedding) -> &[f64]| {
        let d = f(rows[0]).len();
        Matrix::from_vec(rows.len(), d, rows.iter().flat_map(|z| f(z).to_vec()).collect()).unwrap()
    };
    BandRows {
        low: t.constant(build(DualEmbedding::low)).unwrap(),
        high: t.constant(build(DualEmbedding::high)).unwrap(),
    }
}

/// Forward value of the tape contrastive loss on `batch`.
pub fn tape_smmi(batch: &ContrastiveBatch) -> f64 {
    let mut t = Tape::new();
    let z = stack(batch, &mut t);
    let p = batch.positives.len();
    let negs: Vec<usize> = (2 * p..2 * p + batch.negatives.len()).collect();
    let terms: Vec<PairTerm> = (0..p).map(|i| PairTerm { source: i, target: p + i, negatives: negs.clone() }).collect();
    let v = loss_tape::smmi(&mut t, z, &terms, batch.tau, batch.lambda_low, batch.lambda_high, batch.negative_term)
        .unwrap();
    t.scalar(v)
}

/// Forward value of the tape alignment loss with every source and target
/// row contrasted against all negatives.
pub fn tape_fmmd(batch: &ContrastiveBatch, sign: FmmdSign) -> f64 {
    let mut t = Tape::new();
    let z = stack(batch, &mut t);
    let p = batch.positives.len();
    let negs: Vec<usize> = (2 * p..2 * p + batch.negatives.len()).collect();
    let group = |range: std::ops::Range<usize>| -> Vec<AnchorGroup> {
        range.map(|anchor| AnchorGroup { anchor, negatives: negs.clone() }).collect()
    };
    let v = loss_tape::fmmd(&mut t, z, &group(0..p), &group(p..2 * p), sign).unwrap();
    t.scalar(v)
}

pub fn sources(batch: &ContrastiveBatch) -> Vec<DualEmbedding> {
    batch.positives.iter().map(|p| p.0.clone()).collect()
}

pub fn targets(batch: &ContrastiveBatch) -> Vec<DualEmbedding> {
    batch.positives.iter().map(|p| p.1.clone()).collect()
}
