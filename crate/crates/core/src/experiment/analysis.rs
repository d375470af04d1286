//! Per-domain spectral energy, pairwise band differences and cyclomatic
//! number distributions.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use super::runs::write_csv;
use crate::dataset::{DomainSplit, GraphDataset};
use crate::graph::structural_profile;
use crate::spectral::{domain_energy_profile, profile_difference, EnergyProfile, LaplacianKind};
use crate::{Error, Graph, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CyclomaticSummary {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
    /// cyclomatic number → graph count
    pub histogram: BTreeMap<usize, usize>,
}

impl CyclomaticSummary {
    pub fn of(graphs: &[&Graph]) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::InvalidArgument("no graphs to summarize".into()));
        }
        let values: Vec<usize> = graphs.iter().map(|g| structural_profile(g).cyclomatic).collect();
        let mut histogram = BTreeMap::new();
        for &v in &values {
            *histogram.entry(v).or_insert(0) += 1;
        }
        Ok(Self {
            min: *values.iter().min().unwrap(),
            max: *values.iter().max().unwrap(),
            mean: values.iter().sum::<usize>() as f64 / values.len() as f64,
            histogram,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisBundle {
    pub energy: Vec<EnergyProfile>,
    /// `(domain_a, domain_b, Δlow, Δhigh)` for `a < b`.
    pub pair_differences: Vec<(usize, usize, f64, f64)>,
    pub cyclomatic: Vec<CyclomaticSummary>,
    pub overall_cyclomatic: CyclomaticSummary,
}

pub fn emit_analysis(ds: &GraphDataset, split: &DomainSplit, rho: f64, kind: LaplacianKind) -> Result<AnalysisBundle> {
    let dim = ds.num_node_labels();
    let domains: Vec<Vec<&Graph>> = (0..split.k)
        .map(|d| split.domain_members(d).into_iter().map(|i| &ds.graphs[i]).collect())
        .collect();
    let energy = domains
        .iter()
        .map(|gs| domain_energy_profile(gs, dim, rho, kind))
        .collect::<Result<Vec<_>>>()?;
    let mut pair_differences = Vec::new();
    for a in 0..split.k {
        for b in a + 1..split.k {
            let (dl, dh) = profile_difference(&energy[a], &energy[b]);
            pair_differences.push((a, b, dl, dh));
        }
    }
    let cyclomatic = domains.iter().map(|gs| CyclomaticSummary::of(gs)).collect::<Result<Vec<_>>>()?;
    let all: Vec<&Graph> = ds.graphs.iter().collect();
    Ok(AnalysisBundle { energy, pair_differences, cyclomatic, overall_cyclomatic: CyclomaticSummary::of(&all)? })
}

impl AnalysisBundle {
    pub fn energy_csv(&self) -> String {
        let mut s = String::from("domain,low_energy,high_energy\n");
        for (d, e) in self.energy.iter().enumerate() {
            s.push_str(&format!("{d},{:.10},{:.10}\n", e.low_energy, e.high_energy));
        }
        s
    }

    pub fn pairs_csv(&self) -> String {
        let mut s = String::from("domain_a,domain_b,delta_low,delta_high\n");
        for (a, b, dl, dh) in &self.pair_differences {
            s.push_str(&format!("{a},{b},{dl:.10},{dh:.10}\n"));
        }
        s
    }

    pub fn cyclomatic_histogram_csv(&self) -> String {
        let mut s = String::from("domain,cyclomatic,count\n");
        for (d, c) in self.cyclomatic.iter().enumerate() {
            for (v, n) in &c.histogram {
                s.push_str(&format!("{d},{v},{n}\n"));
            }
        }
        s
    }

    /// One row per domain plus an `all` row over the whole dataset.
    pub fn cyclomatic_summary_csv(&self) -> String {
        let mut s = String::from("domain,min,max,mean\n");
        let rows = self.cyclomatic.iter().enumerate().map(|(d, c)| (d.to_string(), c));
        for (name, c) in rows.chain(std::iter::once(("all".to_string(), &self.overall_cyclomatic))) {
            s.push_str(&format!("{name},{},{},{:.6}\n", c.min, c.max, c.mean));
        }
        s
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        write_csv(&out.join("energy.csv"), &self.energy_csv())?;
        write_csv(&out.join("pair_differences.csv"), &self.pairs_csv())?;
        write_csv(&out.join("cyclomatic_histogram.csv"), &self.cyclomatic_histogram_csv())?;
        write_csv(&out.join("cyclomatic_summary.csv"), &self.cyclomatic_summary_csv())
    }
}
