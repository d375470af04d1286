//! Multi-run workflows: transfer matrices, ablations and sensitivity sweeps.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::train::{train, write_file, Corpus, RunResult};
use crate::{Error, Result};

/// Ordered domain pairs `(i, j)` then `(j, i)` for `i < j`, the task order
/// of a transfer table.
pub fn transfer_tasks(k: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            out.push((i, j));
            out.push((j, i));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferCell {
    pub source: usize,
    pub target: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferMatrix {
    pub cells: Vec<TransferCell>,
    pub average: f64,
}

impl TransferMatrix {
    /// Header `stat,0-1,1-0,…,avg`, then a `mean` and a `std` row.
    pub fn to_csv(&self) -> String {
        let names: Vec<String> = self.cells.iter().map(|c| format!("{}-{}", c.source, c.target)).collect();
        let mean: Vec<String> = self.cells.iter().map(|c| format!("{:.6}", c.mean_accuracy)).collect();
        let std: Vec<String> = self.cells.iter().map(|c| format!("{:.6}", c.std_accuracy)).collect();
        let std_avg = self.cells.iter().map(|c| c.std_accuracy).sum::<f64>() / self.cells.len() as f64;
        format!(
            "stat,{},avg\nmean,{},{:.6}\nstd,{},{:.6}\n",
            names.join(","),
            mean.join(","),
            self.average,
            std.join(","),
            std_avg
        )
    }
}

/// Trains and evaluates every ordered domain pair with `template`'s
/// settings.
pub fn run_transfer_matrix(corpus: &Corpus, template: &ExperimentConfig) -> Result<TransferMatrix> {
    let tasks = transfer_tasks(template.k);
    let cells: Vec<TransferCell> = tasks
        .par_iter()
        .map(|&(source, target)| {
            let cfg = ExperimentConfig { source, target, ..template.clone() };
            let r = train(corpus, &cfg)?;
            log::info!("task {source}-{target}: {:.4} ± {:.4}", r.mean_accuracy, r.std_accuracy);
            Ok(TransferCell { source, target, mean_accuracy: r.mean_accuracy, std_accuracy: r.std_accuracy })
        })
        .collect::<Result<_>>()?;
    let average = cells.iter().map(|c| c.mean_accuracy).sum::<f64>() / cells.len() as f64;
    Ok(TransferMatrix { cells, average })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: &'static str,
    pub result: RunResult,
}

/// Full model, without the contrastive term and without the alignment
/// term, all on the same seeds.
pub fn ablate(corpus: &Corpus, cfg: &ExperimentConfig) -> Result<Vec<AblationRow>> {
    let variants = [
        ("full", cfg.clone()),
        ("without_smmi", ExperimentConfig { use_smmi: false, ..cfg.clone() }),
        ("without_fmmd", ExperimentConfig { use_fmmd: false, ..cfg.clone() }),
    ];
    variants
        .into_par_iter()
        .map(|(variant, c)| Ok(AblationRow { variant, result: train(corpus, &c)? }))
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant,mean_acc,std_acc,smmi_evaluations,fmmd_evaluations\n");
    for r in rows {
        let smmi: usize = r.result.runs.iter().map(|x| x.smmi_evaluations).sum();
        let fmmd: usize = r.result.runs.iter().map(|x| x.fmmd_evaluations).sum();
        s.push_str(&format!(
            "{},{:.6},{:.6},{smmi},{fmmd}\n",
            r.variant, r.result.mean_accuracy, r.result.std_accuracy
        ));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub tau: f64,
    pub gamma: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    /// Distinct configurations actually trained.
    pub executed: usize,
}

impl Sweep {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tau,gamma,mean_acc,std_acc\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{:.6},{:.6}\n", r.tau, r.gamma, r.mean_accuracy, r.std_accuracy));
        }
        s
    }
}

/// Cartesian product over `taus × gammas`, with `gamma` applied to both
/// loss weights. Grid points sharing a config hash train once.
pub fn sweep(corpus: &Corpus, cfg: &ExperimentConfig, taus: &[f64], gammas: &[f64]) -> Result<Sweep> {
    if taus.is_empty() || gammas.is_empty() {
        return Err(Error::InvalidArgument("sweep grids must be non-empty".into()));
    }
    let grid: Vec<(f64, f64, ExperimentConfig)> = taus
        .iter()
        .flat_map(|&tau| {
            gammas
                .iter()
                .map(move |&gamma| (tau, gamma, ExperimentConfig { tau, gamma1: gamma, gamma2: gamma, ..cfg.clone() }))
        })
        .collect();
    let unique: BTreeMap<String, &ExperimentConfig> = grid.iter().map(|(_, _, c)| (c.hash(), c)).collect();
    let results: BTreeMap<String, RunResult> = unique
        .into_par_iter()
        .map(|(h, c)| Ok((h, train(corpus, c)?)))
        .collect::<Result<_>>()?;
    let rows = grid
        .iter()
        .map(|(tau, gamma, c)| {
            let r = &results[&c.hash()];
            SweepRow { tau: *tau, gamma: *gamma, mean_accuracy: r.mean_accuracy, std_accuracy: r.std_accuracy }
        })
        .collect();
    Ok(Sweep { rows, executed: results.len() })
}

pub fn write_csv(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_file(path, body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{split_domains, synthetic_dataset, SplitStatistic};

    fn toy() -> (Corpus, ExperimentConfig) {
        let cfg = ExperimentConfig {
            k: 2,
            hidden_dim: 6,
            embed_dim: 4,
            layers: 1,
            epochs: 1,
            batch_size: 8,
            seeds: vec![0, 1],
            ..ExperimentConfig::default()
        };
        let ds = synthetic_dataset("TOY", 40, 5).unwrap();
        let split = split_domains(&ds, SplitStatistic::EdgeDensity, 2, 0).unwrap();
        (Corpus::new(ds, split, &cfg).unwrap(), cfg)
    }

    #[test]
    fn ablation_variants_skip_their_terms() {
        let (corpus, cfg) = toy();
        let rows = ablate(&corpus, &cfg).unwrap();
        let names: Vec<&str> = rows.iter().map(|r| r.variant).collect();
        assert_eq!(names, ["full", "without_smmi", "without_fmmd"]);
        let evals = |r: &AblationRow| {
            r.result.runs.iter().fold((0, 0), |(s, f), x| (s + x.smmi_evaluations, f + x.fmmd_evaluations))
        };
        let (s, f) = evals(&rows[0]);
        assert!(s > 0 && f > 0);
        let (s, f) = evals(&rows[1]);
        assert!(s == 0 && f > 0);
        let (s, f) = evals(&rows[2]);
        assert!(s > 0 && f == 0);
        assert_eq!(ablation_csv(&rows).lines().count(), 4);
    }

    #[test]
    fn sweep_trains_each_distinct_config_once() {
        let (corpus, cfg) = toy();
        let s = sweep(&corpus, &cfg, &[0.1, 0.5, 0.1, 0.5, 0.1], &[0.2, 0.2, 1.0, 1.0, 0.2]).unwrap();
        assert_eq!(s.rows.len(), 25);
        assert_eq!(s.executed, 4);
        assert_eq!(s.to_csv().lines().count(), 26);
        let same: Vec<&SweepRow> = s.rows.iter().filter(|r| r.tau == 0.1 && r.gamma == 0.2).collect();
        assert!(same.windows(2).all(|w| w[0].mean_accuracy == w[1].mean_accuracy));
        assert!(sweep(&corpus, &cfg, &[], &[0.1]).is_err());
    }

    #[test]
    fn task_order_for_four_domains() {
        let names: Vec<String> = transfer_tasks(4).iter().map(|(a, b)| format!("{a}-{b}")).collect();
        assert_eq!(names, ["0-1", "1-0", "0-2", "2-0", "0-3", "3-0", "1-2", "2-1", "1-3", "3-1", "2-3", "3-2"]);
    }

    #[test]
    fn matrix_csv_layout() {
        let cells: Vec<TransferCell> = transfer_tasks(4)
            .into_iter()
            .enumerate()
            .map(|(i, (source, target))| TransferCell { source, target, mean_accuracy: i as f64 / 12.0, std_accuracy: 0.0 })
            .collect();
        let average = cells.iter().map(|c| c.mean_accuracy).sum::<f64>() / 12.0;
        let m = TransferMatrix { cells, average };
        let csv = m.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "stat,0-1,1-0,0-2,2-0,0-3,3-0,1-2,2-1,1-3,3-1,2-3,3-2,avg");
        assert_eq!(lines[1].split(',').count(), 14);
        assert!(lines[1].ends_with(&format!("{:.6}", 66.0 / 144.0)));
    }
}
