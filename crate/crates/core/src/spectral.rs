//! Graph Fourier transform, frequency band filters and spectral energy.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen::eigendecompose_sym;
use crate::graph::{laplacian, normalized_laplacian};
use crate::{Error, Graph, Matrix, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianKind {
    Combinatorial,
    #[default]
    Normalized,
}

impl std::str::FromStr for LaplacianKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "combinatorial" => Ok(Self::Combinatorial),
            "normalized" => Ok(Self::Normalized),
            other => Err(Error::InvalidArgument(format!("unknown laplacian kind `{other}`"))),
        }
    }
}

/// Laplacian eigenpairs of one graph. Eigenvectors are the columns of
/// `eigenvectors`, ordered by ascending eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
    pub source: LaplacianKind,
}

impl SpectralBasis {
    pub fn of_graph(g: &Graph, kind: LaplacianKind) -> Result<Self> {
        let l = match kind {
            LaplacianKind::Combinatorial => laplacian(g),
            LaplacianKind::Normalized => normalized_laplacian(g),
        };
        let eig = eigendecompose_sym(&l)?;
        Ok(Self {
            eigenvalues: eig.values,
            eigenvectors: eig.vectors,
            source: kind,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    fn check_rows(&self, x: &Matrix, op: &'static str) -> Result<()> {
        if x.rows() != self.dim() {
            return Err(Error::shape(
                op,
                format!("signal has {} rows, basis has dimension {}", x.rows(), self.dim()),
            ));
        }
        Ok(())
    }
}

/// Partition of spectral indices into a low band (the `⌈ρ·n⌉` smallest
/// eigenvalues) and a high band (the rest).
#[derive(Debug, Clone, PartialEq)]
pub struct BandSplit {
    pub cutoff_fraction: f64,
    pub low_indices: Vec<usize>,
    pub high_indices: Vec<usize>,
}

impl BandSplit {
    pub fn new(cutoff_fraction: f64, n: usize) -> Result<Self> {
        if !(cutoff_fraction > 0.0 && cutoff_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "cutoff fraction {cutoff_fraction} not in (0,1)"
            )));
        }
        let low = low_band_size(cutoff_fraction, n);
        Ok(Self {
            cutoff_fraction,
            low_indices: (0..low).collect(),
            high_indices: (low..n).collect(),
        })
    }

    pub fn for_basis(cutoff_fraction: f64, basis: &SpectralBasis) -> Result<Self> {
        Self::new(cutoff_fraction, basis.dim())
    }

    fn check(&self, basis: &SpectralBasis, op: &'static str) -> Result<()> {
        if self.low_indices.len() + self.high_indices.len() != basis.dim() {
            return Err(Error::shape(
                op,
                format!(
                    "band split covers {} indices, basis has {}",
                    self.low_indices.len() + self.high_indices.len(),
                    basis.dim()
                ),
            ));
        }
        Ok(())
    }
}

/// `⌈ρ·n⌉`, robust to products like `0.7 * 10 = 7.000000000000001`.
pub fn low_band_size(cutoff_fraction: f64, n: usize) -> usize {
    ((cutoff_fraction * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyProfile {
    pub low_energy: f64,
    pub high_energy: f64,
}

/// `X̂ = Uᵀ X`.
pub fn gft(basis: &SpectralBasis, x: &Matrix) -> Result<Matrix> {
    basis.check_rows(x, "gft")?;
    basis.eigenvectors.t_matmul(x)
}

/// `X = U X̂`.
pub fn igft(basis: &SpectralBasis, coeffs: &Matrix) -> Result<Matrix> {
    basis.check_rows(coeffs, "igft")?;
    basis.eigenvectors.matmul(coeffs)
}

fn project(basis: &SpectralBasis, x: &Matrix, indices: &[usize]) -> Result<Matrix> {
    let n = basis.dim();
    let u_band = Matrix::from_fn(n, indices.len(), |r, c| basis.eigenvectors[(r, indices[c])]);
    u_band.matmul(&u_band.t_matmul(x)?)
}

/// Splits a node signal into its low- and high-band spectral projections.
pub fn band_filter(basis: &SpectralBasis, x: &Matrix, split: &BandSplit) -> Result<(Matrix, Matrix)> {
    basis.check_rows(x, "band_filter")?;
    split.check(basis, "band_filter")?;
    let low = project(basis, x, &split.low_indices)?;
    let high = project(basis, x, &split.high_indices)?;
    Ok((low, high))
}

/// Fraction of squared GFT coefficient mass in each band; `(0.5, 0.5)`
/// for a zero signal.
pub fn spectral_energy(basis: &SpectralBasis, x: &Matrix, split: &BandSplit) -> Result<EnergyProfile> {
    split.check(basis, "spectral_energy")?;
    let coeffs = gft(basis, x)?;
    let row_energy = |i: usize| coeffs.row(i).iter().map(|v| v * v).sum::<f64>();
    let low: f64 = split.low_indices.iter().map(|&i| row_energy(i)).sum();
    let high: f64 = split.high_indices.iter().map(|&i| row_energy(i)).sum();
    let total = low + high;
    if total == 0.0 {
        return Ok(EnergyProfile {
            low_energy: 0.5,
            high_energy: 0.5,
        });
    }
    Ok(EnergyProfile {
        low_energy: low / total,
        high_energy: high / total,
    })
}

/// One-hot encoding of node labels into `dim` columns.
pub fn one_hot_features(g: &Graph, dim: usize) -> Result<Matrix> {
    let mut x = Matrix::zeros(g.node_count(), dim);
    for (v, &label) in g.node_labels().iter().enumerate() {
        if label >= dim {
            return Err(Error::InvalidArgument(format!(
                "node label {label} outside feature dimension {dim}"
            )));
        }
        x[(v, label)] = 1.0;
    }
    Ok(x)
}

/// Energy profile of one graph with one-hot node-label features.
pub fn graph_energy_profile(
    g: &Graph,
    feature_dim: usize,
    cutoff_fraction: f64,
    kind: LaplacianKind,
) -> Result<EnergyProfile> {
    let basis = SpectralBasis::of_graph(g, kind)?;
    let split = BandSplit::for_basis(cutoff_fraction, &basis)?;
    spectral_energy(&basis, &one_hot_features(g, feature_dim)?, &split)
}

/// Unweighted mean of per-graph energy profiles over a domain.
pub fn domain_energy_profile(
    domain: &[&Graph],
    feature_dim: usize,
    cutoff_fraction: f64,
    kind: LaplacianKind,
) -> Result<EnergyProfile> {
    if domain.is_empty() {
        return Err(Error::InvalidArgument("empty domain".into()));
    }
    let profiles: Vec<EnergyProfile> = domain
        .par_iter()
        .map(|g| graph_energy_profile(g, feature_dim, cutoff_fraction, kind))
        .collect::<Result<_>>()?;
    Ok(mean_profile(&profiles))
}

pub fn mean_profile(profiles: &[EnergyProfile]) -> EnergyProfile {
    let n = profiles.len() as f64;
    let (lo, hi) = profiles
        .iter()
        .fold((0.0, 0.0), |(l, h), p| (l + p.low_energy, h + p.high_energy));
    EnergyProfile {
        low_energy: lo / n,
        high_energy: hi / n,
    }
}

/// `(|low_a − low_b|, |high_a − high_b|)`.
pub fn profile_difference(a: &EnergyProfile, b: &EnergyProfile) -> (f64, f64) {
    (
        (a.low_energy - b.low_energy).abs(),
        (a.high_energy - b.high_energy).abs(),
    )
}

pub fn pairwise_spectral_difference(
    domain_a: &[&Graph],
    domain_b: &[&Graph],
    feature_dim: usize,
    cutoff_fraction: f64,
    kind: LaplacianKind,
) -> Result<(f64, f64)> {
    let a = domain_energy_profile(domain_a, feature_dim, cutoff_fraction, kind)?;
    let b = domain_energy_profile(domain_b, feature_dim, cutoff_fraction, kind)?;
    Ok(profile_difference(&a, &b))
}
