//! Training objectives: the frequency kernel, MMD estimators, the
//! frequency-split contrastive loss, the negative-sample alignment loss,
//! cross-entropy and the combined objective.
//!
//! Value-level functions operate on [`DualEmbedding`]s and are used for
//! reporting and auditing. The [`tape`] submodule records the same
//! objectives on an autodiff tape for training.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const UNIT_NORM_TOL: f64 = 1e-8;

/// Pair of unit-norm low/high-frequency embeddings of one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEmbedding {
    z_low: Vec<f64>,
    z_high: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl DualEmbedding {
    /// Accepts components that are already unit-norm within [`UNIT_NORM_TOL`].
    pub fn new(z_low: Vec<f64>, z_high: Vec<f64>) -> Result<Self> {
        for (name, v) in [("z_low", &z_low), ("z_high", &z_high)] {
            let n = norm(v);
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::Contract(format!("{name} has norm {n}, expected 1")));
            }
        }
        Ok(Self { z_low, z_high })
    }

    /// Normalizes both components; a zero component is an error.
    pub fn normalized(z_low: &[f64], z_high: &[f64]) -> Result<Self> {
        let unit = |v: &[f64], name: &str| -> Result<Vec<f64>> {
            let n = norm(v);
            if n == 0.0 || !n.is_finite() {
                return Err(Error::Contract(format!("{name} has zero norm")));
            }
            Ok(v.iter().map(|x| x / n).collect())
        };
        Ok(Self {
            z_low: unit(z_low, "z_low")?,
            z_high: unit(z_high, "z_high")?,
        })
    }

    pub fn low(&self) -> &[f64] {
        &self.z_low
    }

    pub fn high(&self) -> &[f64] {
        &self.z_high
    }

    /// `(λ_l·z_low ; λ_g·z_high)`
    pub fn weighted_concat(&self, lambda_low: f64, lambda_high: f64) -> Vec<f64> {
        self.z_low
            .iter()
            .map(|x| lambda_low * x)
            .chain(self.z_high.iter().map(|x| lambda_high * x))
            .collect()
    }
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Contract("zero-norm component in frequency kernel".into()));
    }
    if a.len() != b.len() {
        return Err(Error::shape("frequency_kernel", format!("{} vs {}", a.len(), b.len())));
    }
    Ok(dot(a, b) / (na * nb))
}

/// Per-band cosines `(cos θ_l, cos θ_g)`.
pub fn band_cosines(x: &DualEmbedding, y: &DualEmbedding) -> Result<(f64, f64)> {
    Ok((cosine(&x.z_low, &y.z_low)?, cosine(&x.z_high, &y.z_high)?))
}

/// `k(x, y) = cos θ_l + cos θ_g`, bounded by 2 in absolute value.
pub fn frequency_kernel(x: &DualEmbedding, y: &DualEmbedding) -> Result<f64> {
    let (l, g) = band_cosines(x, y)?;
    Ok(l + g)
}

/// `exp(−‖x−y‖² / 2σ²)`.
pub fn gaussian_kernel(x: &[f64], y: &[f64], sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("bandwidth {sigma} must be positive")));
    }
    if x.len() != y.len() {
        return Err(Error::shape("gaussian_kernel", format!("{} vs {}", x.len(), y.len())));
    }
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-d2 / (2.0 * sigma * sigma)).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MmdEstimator {
    /// V-statistic: within-set averages include `i = j`.
    Biased,
    /// U-statistic: within-set averages exclude `i = j`.
    #[default]
    Unbiased,
}

/// Squared MMD between samples `xs` and `ys` under `kernel`.
pub fn mmd2<T, K>(xs: &[T], ys: &[T], kernel: K, estimator: MmdEstimator) -> Result<f64>
where
    K: Fn(&T, &T) -> Result<f64>,
{
    let min = match estimator {
        MmdEstimator::Biased => 1,
        MmdEstimator::Unbiased => 2,
    };
    if xs.len() < min || ys.len() < min {
        return Err(Error::InvalidArgument(format!(
            "{estimator:?} MMD needs at least {min} samples per set, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    // every average sums its terms in sorted order, which makes the
    // estimate symmetric in its arguments and the biased MMD²(X, X) exactly 0
    let sorted_sum = |mut terms: Vec<f64>| {
        terms.sort_by(f64::total_cmp);
        terms.iter().sum::<f64>()
    };
    let within = |s: &[T]| -> Result<f64> {
        let mut terms = Vec::with_capacity(s.len() * s.len());
        for i in 0..s.len() {
            for j in 0..s.len() {
                if i == j && estimator == MmdEstimator::Unbiased {
                    continue;
                }
                terms.push(kernel(&s[i], &s[j])?);
            }
        }
        let total = sorted_sum(terms);
        let n = s.len() as f64;
        Ok(match estimator {
            MmdEstimator::Biased => total / (n * n),
            MmdEstimator::Unbiased => total / (n * (n - 1.0)),
        })
    };
    let mut cross_terms = Vec::with_capacity(xs.len() * ys.len());
    for x in xs {
        for y in ys {
            cross_terms.push(kernel(x, y)?);
        }
    }
    let cross = sorted_sum(cross_terms) / (xs.len() * ys.len()) as f64;
    Ok(within(xs)? + within(ys)? - 2.0 * cross)
}

/// Which quantity fills the second sum in the contrastive denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NegativeTerm {
    /// `Σ_n exp(z_tᵀ z_n / τ)`.
    #[default]
    TargetNegatives,
    /// `Σ_n exp(z_tᵀ z_t / τ)`: the target self-similarity, repeated per negative.
    TargetSelf,
}

#[derive(Debug, Clone)]
pub struct ContrastiveBatch {
    pub positives: Vec<(DualEmbedding, DualEmbedding)>,
    pub negatives: Vec<DualEmbedding>,
    pub tau: f64,
    pub lambda_low: f64,
    pub lambda_high: f64,
    pub negative_term: NegativeTerm,
}

impl ContrastiveBatch {
    pub fn new(
        positives: Vec<(DualEmbedding, DualEmbedding)>,
        negatives: Vec<DualEmbedding>,
        tau: f64,
        lambda_low: f64,
        lambda_high: f64,
    ) -> Result<Self> {
        let b = Self {
            positives,
            negatives,
            tau,
            lambda_low,
            lambda_high,
            negative_term: NegativeTerm::default(),
        };
        b.validate()?;
        Ok(b)
    }

    fn validate(&self) -> Result<()> {
        if self.positives.is_empty() || self.negatives.is_empty() {
            return Err(Error::InvalidArgument(
                "contrastive batch needs at least one positive pair and one negative".into(),
            ));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidArgument(format!("temperature {} must be positive", self.tau)));
        }
        if self.lambda_low < 0.0 || self.lambda_high < 0.0 {
            return Err(Error::InvalidArgument("band weights must be non-negative".into()));
        }
        Ok(())
    }

    /// `z_iᵀ z_j = λ_l² cos θ_l + λ_g² cos θ_g` for unit-norm components.
    pub fn similarity(&self, a: &DualEmbedding, b: &DualEmbedding) -> Result<f64> {
        let (l, g) = band_cosines(a, b)?;
        Ok(self.lambda_low.powi(2) * l + self.lambda_high.powi(2) * g)
    }
}

/// `log Σ exp(x_i)`, shifted by the maximum for stability.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Frequency-split contrastive loss over positive pairs and shared negatives.
pub fn smmi_loss(batch: &ContrastiveBatch) -> Result<f64> {
    batch.validate()?;
    let tau = batch.tau;
    let mut total = 0.0;
    for (s, t) in &batch.positives {
        let mut logits = Vec::with_capacity(2 * batch.negatives.len());
        for n in &batch.negatives {
            logits.push(batch.similarity(s, n)? / tau);
        }
        match batch.negative_term {
            NegativeTerm::TargetNegatives => {
                for n in &batch.negatives {
                    logits.push(batch.similarity(t, n)? / tau);
                }
            }
            NegativeTerm::TargetSelf => {
                let self_sim = batch.similarity(t, t)? / tau;
                logits.extend(std::iter::repeat(self_sim).take(batch.negatives.len()));
            }
        }
        total += logsumexp(&logits) - batch.similarity(s, t)? / tau;
    }
    Ok(total / batch.positives.len() as f64)
}

/// Band-separated surrogate of [`smmi_loss`]: attraction of positive pairs
/// minus half the mean repulsion against negatives, per band, weighted by
/// `λ²/τ`.
pub fn smmi_decomposed(batch: &ContrastiveBatch) -> Result<f64> {
    batch.validate()?;
    let p = batch.positives.len() as f64;
    let n = batch.negatives.len() as f64;
    let (mut pos_l, mut pos_g, mut neg_l, mut neg_g) = (0.0, 0.0, 0.0, 0.0);
    for (s, t) in &batch.positives {
        let (l, g) = band_cosines(s, t)?;
        pos_l += l;
        pos_g += g;
        for z in &batch.negatives {
            let (sl, sg) = band_cosines(s, z)?;
            let (tl, tg) = band_cosines(t, z)?;
            neg_l += sl + tl;
            neg_g += sg + tg;
        }
    }
    let low = pos_l / p - 0.5 * neg_l / (p * n);
    let high = pos_g / p - 0.5 * neg_g / (p * n);
    Ok(-(batch.lambda_low.powi(2) / batch.tau) * low - (batch.lambda_high.powi(2) / batch.tau) * high)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FmmdSign {
    /// `−B`: minimizing pulls negatives toward both domains.
    Attractive,
    /// `+B`: minimizing pushes negatives away from both domains.
    #[default]
    Repulsive,
}

impl FmmdSign {
    pub fn factor(self) -> f64 {
        match self {
            FmmdSign::Attractive => -1.0,
            FmmdSign::Repulsive => 1.0,
        }
    }
}

impl std::str::FromStr for FmmdSign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attractive" => Ok(Self::Attractive),
            "repulsive" => Ok(Self::Repulsive),
            other => Err(Error::InvalidArgument(format!("unknown fmmd sign `{other}`"))),
        }
    }
}

impl std::fmt::Display for FmmdSign {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FmmdSign::Attractive => "attractive",
            FmmdSign::Repulsive => "repulsive",
        })
    }
}

/// Alignment loss against negatives: `B = E[k(s,n)] + E[k(t,n)]`, returned
/// as `sign.factor() · B`.
pub fn fmmd_loss(
    sources: &[DualEmbedding],
    targets: &[DualEmbedding],
    negatives: &[DualEmbedding],
    sign: FmmdSign,
) -> Result<f64> {
    if sources.is_empty() || targets.is_empty() || negatives.is_empty() {
        return Err(Error::InvalidArgument("fmmd needs non-empty source, target and negative sets".into()));
    }
    let mean_kernel = |anchors: &[DualEmbedding]| -> Result<f64> {
        let mut total = 0.0;
        for a in anchors {
            for n in negatives {
                total += frequency_kernel(a, n)?;
            }
        }
        Ok(total / (anchors.len() * negatives.len()) as f64)
    };
    Ok(sign.factor() * (mean_kernel(sources)? + mean_kernel(targets)?))
}

/// Mean softmax cross-entropy.
pub fn cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::shape("cross_entropy", format!("{} rows for {} labels", logits.len(), labels.len())));
    }
    let mut total = 0.0;
    for (z, &y) in logits.iter().zip(labels) {
        if y >= z.len() {
            return Err(Error::InvalidArgument(format!("label {y} out of range for {} classes", z.len())));
        }
        total += logsumexp(z) - z[y];
    }
    Ok(total / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub gamma_smmi: f64,
    pub gamma_fmmd: f64,
    pub fmmd_sign: FmmdSign,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gamma_smmi: 0.5,
            gamma_fmmd: 0.5,
            fmmd_sign: FmmdSign::Repulsive,
        }
    }
}

/// `ce + γ₁·smmi + γ₂·fmmd`
pub fn total_loss(ce: f64, smmi: f64, fmmd: f64, w: &LossWeights) -> Result<f64> {
    if !(ce.is_finite() && smmi.is_finite() && fmmd.is_finite()) {
        return Err(Error::numerical("total_loss", format!("non-finite term ({ce}, {smmi}, {fmmd})")));
    }
    Ok(ce + w.gamma_smmi * smmi + w.gamma_fmmd * fmmd)
}

/// Empirical checks of the frequency kernel's boundedness, Lipschitz
/// behaviour and batch-mean concentration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelAudit {
    pub sample_count: usize,
    pub dim: usize,
    pub seed: u64,
    pub max_abs_kernel: f64,
    pub bound: f64,
    pub max_lipschitz_ratio: f64,
    pub lipschitz_pairs: usize,
    pub batch_mean_a: f64,
    pub batch_mean_b: f64,
    pub concentration_gap: f64,
    pub concentration_bound: f64,
    /// Estimated `E[k(X, X')]` for the sampling distribution.
    pub c_estimate: f64,
}

impl KernelAudit {
    pub fn bounded(&self) -> bool {
        self.max_abs_kernel <= self.bound
    }

    pub fn lipschitz_ok(&self) -> bool {
        self.max_lipschitz_ratio <= 2.0 + 1e-6
    }

    pub fn concentrated(&self) -> bool {
        self.concentration_gap <= self.concentration_bound
    }
}

/// Uniform direction on the unit sphere in `dim` dimensions.
pub fn random_unit(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

pub fn random_dual(dim: usize, rng: &mut impl Rng) -> DualEmbedding {
    DualEmbedding {
        z_low: random_unit(dim, rng),
        z_high: random_unit(dim, rng),
    }
}

fn perturbed(x: &DualEmbedding, scale: f64, rng: &mut impl Rng) -> DualEmbedding {
    let l: Vec<f64> = x.z_low.iter().map(|a| a + scale * rng.sample::<f64, _>(StandardNormal)).collect();
    let h: Vec<f64> = x.z_high.iter().map(|a| a + scale * rng.sample::<f64, _>(StandardNormal)).collect();
    DualEmbedding::normalized(&l, &h).expect("perturbation of a unit vector is non-zero")
}

fn concat_distance(a: &DualEmbedding, b: &DualEmbedding) -> f64 {
    let d2: f64 = a
        .z_low
        .iter()
        .zip(&b.z_low)
        .chain(a.z_high.iter().zip(&b.z_high))
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    d2.sqrt()
}

pub fn kernel_property_audit(sample_count: usize, seed: u64, dim: usize) -> Result<KernelAudit> {
    if sample_count < 1000 {
        return Err(Error::InvalidArgument(format!("audit needs at least 1000 samples, got {sample_count}")));
    }
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut max_abs: f64 = 0.0;
    for _ in 0..sample_count {
        let x = random_dual(dim, &mut rng);
        let y = random_dual(dim, &mut rng);
        max_abs = max_abs.max(frequency_kernel(&x, &y)?.abs());
    }

    // Independent pairs and small perturbations at several scales.
    let mut max_ratio: f64 = 0.0;
    let mut lipschitz_pairs = 0;
    for i in 0..sample_count {
        let x = random_dual(dim, &mut rng);
        let y = random_dual(dim, &mut rng);
        let (xp, yp) = match i % 4 {
            0 => (random_dual(dim, &mut rng), random_dual(dim, &mut rng)),
            k => {
                let s = 10f64.powi(-(k as i32));
                (perturbed(&x, s, &mut rng), perturbed(&y, s, &mut rng))
            }
        };
        let denom = concat_distance(&x, &xp) + concat_distance(&y, &yp);
        if denom == 0.0 {
            continue;
        }
        let num = (frequency_kernel(&x, &y)? - frequency_kernel(&xp, &yp)?).abs();
        max_ratio = max_ratio.max(num / denom);
        lipschitz_pairs += 1;
    }

    let batch_mean = |rng: &mut ChaCha8Rng| -> Result<f64> {
        let mut total = 0.0;
        for _ in 0..sample_count {
            let x = random_dual(dim, rng);
            let y = random_dual(dim, rng);
            total += frequency_kernel(&x, &y)?;
        }
        Ok(total / sample_count as f64)
    };
    let a = batch_mean(&mut rng)?;
    let b = batch_mean(&mut rng)?;

    Ok(KernelAudit {
        sample_count,
        dim,
        seed,
        max_abs_kernel: max_abs,
        bound: 2.0,
        max_lipschitz_ratio: max_ratio,
        lipschitz_pairs,
        batch_mean_a: a,
        batch_mean_b: b,
        concentration_gap: (a - b).abs(),
        concentration_bound: 3.0 / (sample_count as f64).sqrt(),
        c_estimate: 0.5 * (a + b),
    })
}

/// The same objectives recorded on an autodiff tape.
///
/// Embeddings live as rows of two `B×d` variables (`low`, `high`) whose
/// rows are already unit-norm; indices below refer to those rows.
pub mod tape {
    use super::{FmmdSign, NegativeTerm};
    use crate::autodiff::{Tape, Var};
    use crate::{Error, Result};

    #[derive(Debug, Clone, Copy)]
    pub struct BandRows {
        pub low: Var,
        pub high: Var,
    }

    /// Per-band cosines for index pairs, as two `P×1` columns.
    pub fn pair_cosines(t: &mut Tape, z: BandRows, pairs: &[(usize, usize)]) -> Result<(Var, Var)> {
        let (a, b): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let mut band = |v: Var| -> Result<Var> {
            let ra = t.gather_rows(v, &a)?;
            let rb = t.gather_rows(v, &b)?;
            let prod = t.mul(ra, rb)?;
            t.row_sum(prod)
        };
        let l = band(z.low)?;
        let g = band(z.high)?;
        Ok((l, g))
    }

    fn weighted_sim(t: &mut Tape, z: BandRows, pairs: &[(usize, usize)], wl: f64, wg: f64) -> Result<Var> {
        let (l, g) = pair_cosines(t, z, pairs)?;
        let l = t.scale(l, wl)?;
        let g = t.scale(g, wg)?;
        t.add(l, g)
    }

    /// One positive pair with its own negative set.
    #[derive(Debug, Clone, PartialEq)]
    pub struct PairTerm {
        pub source: usize,
        pub target: usize,
        pub negatives: Vec<usize>,
    }

    /// Mean over pairs of `logsumexp(sims/τ) − sim(s,t)/τ`.
    pub fn smmi(
        t: &mut Tape,
        z: BandRows,
        terms: &[PairTerm],
        tau: f64,
        lambda_low: f64,
        lambda_high: f64,
        negative_term: NegativeTerm,
    ) -> Result<Var> {
        if terms.is_empty() || terms.iter().any(|p| p.negatives.is_empty()) {
            return Err(Error::InvalidArgument("contrastive loss needs pairs with non-empty negatives".into()));
        }
        if !(tau > 0.0) {
            return Err(Error::InvalidArgument(format!("temperature {tau} must be positive")));
        }
        let (wl, wg) = (lambda_low * lambda_low, lambda_high * lambda_high);
        let positives: Vec<(usize, usize)> = terms.iter().map(|p| (p.source, p.target)).collect();
        let mut entries = Vec::new();
        let mut offsets = vec![0];
        for p in terms {
            entries.extend(p.negatives.iter().map(|&n| (p.source, n)));
            match negative_term {
                NegativeTerm::TargetNegatives => entries.extend(p.negatives.iter().map(|&n| (p.target, n))),
                NegativeTerm::TargetSelf => entries.extend(p.negatives.iter().map(|_| (p.target, p.target))),
            }
            offsets.push(entries.len());
        }
        let pos = weighted_sim(t, z, &positives, wl, wg)?;
        let pos = t.scale(pos, 1.0 / tau)?;
        let neg = weighted_sim(t, z, &entries, wl, wg)?;
        let neg = t.scale(neg, 1.0 / tau)?;
        let lse = t.segment_logsumexp(neg, &offsets)?;
        let per_pair = t.sub(lse, pos)?;
        t.mean(per_pair)
    }

    /// An anchor row and the rows it is contrasted against.
    #[derive(Debug, Clone, PartialEq)]
    pub struct AnchorGroup {
        pub anchor: usize,
        pub negatives: Vec<usize>,
    }

    fn mean_group_kernel(t: &mut Tape, z: BandRows, groups: &[AnchorGroup]) -> Result<Var> {
        let mut entries = Vec::new();
        let mut offsets = vec![0];
        for g in groups {
            if g.negatives.is_empty() {
                return Err(Error::InvalidArgument(format!("anchor {} has no negatives", g.anchor)));
            }
            entries.extend(g.negatives.iter().map(|&n| (g.anchor, n)));
            offsets.push(entries.len());
        }
        let k = weighted_sim(t, z, &entries, 1.0, 1.0)?;
        let per_anchor = t.segment_mean(k, &offsets)?;
        t.mean(per_anchor)
    }

    /// `sign · (E_s E_n k(s,n) + E_t E_n k(t,n))`. An empty target side
    /// contributes nothing.
    pub fn fmmd(
        t: &mut Tape,
        z: BandRows,
        source_groups: &[AnchorGroup],
        target_groups: &[AnchorGroup],
        sign: FmmdSign,
    ) -> Result<Var> {
        if source_groups.is_empty() && target_groups.is_empty() {
            return Err(Error::InvalidArgument("fmmd needs at least one anchor group".into()));
        }
        let mut parts = Vec::new();
        for groups in [source_groups, target_groups] {
            if !groups.is_empty() {
                parts.push(mean_group_kernel(t, z, groups)?);
            }
        }
        let b = if parts.len() == 2 { t.add(parts[0], parts[1])? } else { parts[0] };
        t.scale(b, sign.factor())
    }
}
