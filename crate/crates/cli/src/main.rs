//! `specnet` command-line entry point.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use specnet::dataset::{
    load_split, parse_tudataset, render_split, resolve_dataset_dir, split_domains, GraphDataset, Partition,
};
use specnet::experiment::{
    ablate, ablation_csv, emit_analysis, evaluate, gradcheck, run_transfer_matrix, sweep, train, write_csv, write_run,
    Corpus, ExperimentConfig,
};
use specnet::losses::kernel_property_audit;
use specnet::{Error, Result};

#[derive(Parser)]
#[command(name = "specnet", version, about = "Frequency-split contrastive domain adaptation for graph classification")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a dataset and print its summary
    Prepare(Common),
    /// Build the quantile domain split and write its manifest
    Split(Common),
    /// Spectral energy, pairwise band differences and cyclomatic distributions per domain
    Analyze(Common),
    /// Train one source → target task over the configured seeds
    Train(Common),
    /// Accuracy of a checkpoint on one domain partition
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint written by `train`
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Domain to evaluate [default: the target domain]
        #[arg(long)]
        domain: Option<usize>,
        /// Partition to evaluate (train or test)
        #[arg(long, default_value = "test")]
        partition: String,
    },
    /// Train every ordered domain pair
    Matrix(Common),
    /// Full objective versus each loss term removed
    Ablate(Common),
    /// Temperature × loss-weight grid; the weight sets both gamma1 and gamma2
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.2,0.4,0.8")]
        taus: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5,0.75,1.0")]
        gammas: Vec<f64>,
    },
    /// Finite-difference check of every loss term on random batches
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        batches: usize,
    },
    /// Empirical boundedness, Lipschitz and concentration checks of the frequency kernel
    AuditKernel {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
    },
}

/// Flags shared by every command. Experiment flags override the config
/// file only when given on the command line.
#[derive(Args, Clone)]
struct Common {
    /// Directory holding the dataset files [default: config `data_root`]
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Dataset name
    #[arg(long, default_value = "Mutagenicity")]
    name: String,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// `key = value` experiment config file
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed: the split seed for `split`, the only training seed for training
    /// commands, the sampling seed for checks [default: config `split_seed` /
    /// `seeds` (0,1,2,3,4); 0 for checks]
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, 0 for one per core
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Split manifest to reuse instead of recomputing the split
    #[arg(long, value_name = "FILE")]
    split: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    source: usize,
    #[arg(long, default_value_t = 1)]
    target: usize,
    /// Number of quantile domains
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// Split statistic: edge_density, avg_degree or node_count
    #[arg(long, default_value = "edge_density")]
    statistic: String,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    /// Contrastive temperature
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    /// Contrastive loss weight
    #[arg(long, default_value_t = 0.5)]
    gamma1: f64,
    /// Alignment loss weight
    #[arg(long, default_value_t = 0.5)]
    gamma2: f64,
    /// Fraction of the spectrum in the low band
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    /// Alignment loss sign: attractive (−B) or repulsive (+B)
    #[arg(long, default_value = "repulsive", value_parser = ["attractive", "repulsive"])]
    fmmd_sign: String,
    /// Subsample domains and shorten training
    #[arg(long)]
    desk_scale: bool,
}

/// `(flag id, config key)` pairs applied when set on the command line.
const OVERRIDES: [(&str, &str); 12] = [
    ("name", "dataset"),
    ("data", "data_root"),
    ("source", "source"),
    ("target", "target"),
    ("k", "k"),
    ("statistic", "statistic"),
    ("epochs", "epochs"),
    ("tau", "tau"),
    ("gamma1", "gamma1"),
    ("gamma2", "gamma2"),
    ("rho", "rho"),
    ("fmmd_sign", "fmmd_sign"),
];

struct Ctx<'a> {
    common: &'a Common,
    matches: &'a ArgMatches,
}

impl Ctx<'_> {
    fn given(&self, id: &str) -> bool {
        self.matches.value_source(id) == Some(ValueSource::CommandLine)
    }

    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.common.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        for (id, key) in OVERRIDES {
            if self.given(id) {
                let raw = self.matches.get_raw(id).and_then(|mut v| v.next()).expect("flag has a value");
                cfg.set(key, &raw.to_string_lossy())?;
            }
        }
        if self.common.desk_scale {
            cfg.desk_scale = true;
        }
        if let Some(s) = self.common.seed {
            cfg.seeds = vec![s];
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out(&self) -> Result<&Path> {
        self.common.out.as_deref().ok_or_else(|| Error::InvalidArgument("--out is required".into()))
    }

    fn dataset(&self, cfg: &ExperimentConfig) -> Result<GraphDataset> {
        let root = cfg
            .data_root
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("--data (or `data_root` in the config) is required".into()))?;
        let dir = resolve_dataset_dir(root, &cfg.dataset).ok_or_else(|| Error::Parse {
            file: root.join(format!("{}_A.txt", cfg.dataset)).display().to_string(),
            message: "dataset files not found".into(),
        })?;
        parse_tudataset(&dir, &cfg.dataset)
    }

    fn corpus(&self, cfg: &ExperimentConfig) -> Result<Corpus> {
        let ds = self.dataset(cfg)?;
        let split = match &self.common.split {
            Some(p) => load_split(p, Some(&ds.content_hash()))?,
            None => split_domains(&ds, cfg.statistic, cfg.k, cfg.split_seed)?,
        };
        Corpus::new(ds, split, cfg)
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let body = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    write_csv(path, &body)
}

fn run(command: &Command, matches: &ArgMatches) -> Result<ExitCode> {
    let (common, sub) = match command {
        Command::Prepare(c)
        | Command::Split(c)
        | Command::Analyze(c)
        | Command::Train(c)
        | Command::Matrix(c)
        | Command::Ablate(c) => (c, matches),
        Command::Eval { common, .. }
        | Command::Sweep { common, .. }
        | Command::Gradcheck { common, .. }
        | Command::AuditKernel { common, .. } => (common, matches),
    };
    let sub = sub.subcommand().map(|(_, m)| m).expect("subcommand present");
    if common.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(common.jobs)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("--jobs: {e}")))?;
    }
    let ctx = Ctx { common, matches: sub };

    match command {
        Command::Prepare(_) => {
            let cfg = ctx.config()?;
            let ds = ctx.dataset(&cfg)?;
            let s = ds.stats();
            println!(
                "{}: {} graphs, mean {:.2} nodes, mean {:.2} edges, max cyclomatic {}, {} node labels",
                s.name, s.graph_count, s.mean_nodes, s.mean_edges, s.max_cyclomatic, s.node_label_count
            );
            println!("content hash {}", ds.content_hash());
            if let Some(out) = &common.out {
                let summary = serde_json::json!({ "stats": s, "content_hash": ds.content_hash() });
                write_json(&out.join("dataset_summary.json"), &summary)?;
            }
        }
        Command::Split(_) => {
            let mut cfg = ctx.config()?;
            if let Some(s) = common.seed {
                cfg.split_seed = s;
            }
            let out = ctx.out()?;
            let ds = ctx.dataset(&cfg)?;
            let split = split_domains(&ds, cfg.statistic, cfg.k, cfg.split_seed)?;
            write_csv(&out.join("split.txt"), &render_split(&split))?;
            let mut sizes = String::from("domain,train,test\n");
            for d in 0..split.k {
                let (tr, te) = (split.members(d, Partition::Train).len(), split.members(d, Partition::Test).len());
                sizes.push_str(&format!("{d},{tr},{te}\n"));
            }
            write_csv(&out.join("domain_sizes.csv"), &sizes)?;
            print!("{sizes}");
        }
        Command::Analyze(_) => {
            let cfg = ctx.config()?;
            let out = ctx.out()?;
            let corpus = ctx.corpus(&cfg)?;
            let bundle = emit_analysis(&corpus.dataset, &corpus.split, cfg.rho, cfg.laplacian)?;
            bundle.write(out)?;
            print!("{}{}", bundle.energy_csv(), bundle.pairs_csv());
        }
        Command::Train(_) => {
            let cfg = ctx.config()?;
            let out = ctx.out()?;
            let corpus = ctx.corpus(&cfg)?;
            let r = train(&corpus, &cfg)?;
            write_run(&r, &corpus, &cfg, out)?;
            for s in &r.runs {
                println!("seed {}: target test accuracy {:.4}", s.seed, s.target_test_accuracy);
            }
            println!("{}→{}: {:.4} ± {:.4}", r.source, r.target, r.mean_accuracy, r.std_accuracy);
        }
        Command::Eval { checkpoint, domain, partition, .. } => {
            let cfg = ctx.config()?;
            let corpus = ctx.corpus(&cfg)?;
            let partition: Partition = partition.parse()?;
            let domain = domain.unwrap_or(cfg.target);
            let acc = evaluate(checkpoint, &corpus, &cfg, domain, partition)?;
            println!("accuracy {acc:.6}");
            if let Some(out) = &common.out {
                let body = format!(
                    "checkpoint,domain,partition,accuracy\n{},{domain},{},{acc:.6}\n",
                    checkpoint.display(),
                    partition.as_str()
                );
                write_csv(&out.join("eval.csv"), &body)?;
            }
        }
        Command::Matrix(_) => {
            let cfg = ctx.config()?;
            let out = ctx.out()?;
            let m = run_transfer_matrix(&ctx.corpus(&cfg)?, &cfg)?;
            write_csv(&out.join("transfer_matrix.csv"), &m.to_csv())?;
            print!("{}", m.to_csv());
        }
        Command::Ablate(_) => {
            let cfg = ctx.config()?;
            let out = ctx.out()?;
            let rows = ablate(&ctx.corpus(&cfg)?, &cfg)?;
            write_csv(&out.join("ablation.csv"), &ablation_csv(&rows))?;
            print!("{}", ablation_csv(&rows));
        }
        Command::Sweep { taus, gammas, .. } => {
            let cfg = ctx.config()?;
            let out = ctx.out()?;
            let s = sweep(&ctx.corpus(&cfg)?, &cfg, taus, gammas)?;
            write_csv(&out.join("sweep.csv"), &s.to_csv())?;
            print!("{}", s.to_csv());
            log::info!("{} distinct configurations trained", s.executed);
        }
        Command::Gradcheck { batches, .. } => {
            let summary = gradcheck(common.seed.unwrap_or(0), *batches)?;
            for t in &summary.terms {
                println!(
                    "{:?}: max absolute error {:.3e}, max relative error above the absolute floor {:.3e}, {} entries, {} skipped at kinks",
                    t.term, t.report.max_abs_error, t.report.max_rel_error, t.report.checked, t.report.skipped_kinks
                );
            }
            println!("max relative error {:.3e}: {}", summary.max_rel_error, if summary.passed { "pass" } else { "FAIL" });
            if let Some(out) = &common.out {
                write_json(&out.join("gradcheck.json"), &summary)?;
            }
            if !summary.passed {
                return Ok(ExitCode::from(3));
            }
        }
        Command::AuditKernel { samples, dim, .. } => {
            let a = kernel_property_audit(*samples, common.seed.unwrap_or(0), *dim)?;
            let ok = a.bounded() && a.lipschitz_ok() && a.concentrated();
            println!("{}", serde_json::to_string_pretty(&a).expect("serializable"));
            println!(
                "bounded {}, lipschitz {}, concentrated {}",
                a.bounded(),
                a.lipschitz_ok(),
                a.concentrated()
            );
            if let Some(out) = &common.out {
                write_json(&out.join("kernel_audit.json"), &a)?;
            }
            if !ok {
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let level = std::env::var("SPECNET_LOG").unwrap_or_else(|_| "info".into());
    env_logger::Builder::new().parse_filters(&level).format_timestamp(None).init();

    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(&cli.command, &matches) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
