//! TUDataset text corpora, density-quantile domain splits and split
//! manifests.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::graph::structural_profile;
use crate::{Error, Graph, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GraphDataset {
    pub name: String,
    pub graphs: Vec<Graph>,
}

impl GraphDataset {
    /// Validates the dataset contract: non-empty, every graph labelled.
    pub fn new(name: impl Into<String>, graphs: Vec<Graph>) -> Result<Self> {
        let name = name.into();
        if graphs.is_empty() {
            return Err(Error::InvalidArgument(format!("dataset {name} has no graphs")));
        }
        if let Some(i) = graphs.iter().position(|g| g.class_label().is_none()) {
            return Err(Error::InvalidArgument(format!("graph {i} of {name} has no class label")));
        }
        Ok(Self { name, graphs })
    }

    pub fn class_count(&self) -> usize {
        2
    }

    /// One past the largest node label.
    pub fn num_node_labels(&self) -> usize {
        self.graphs
            .iter()
            .flat_map(|g| g.node_labels().iter().copied())
            .max()
            .map_or(1, |m| m + 1)
    }

    /// SHA-256 over a canonical rendering of the parsed graphs.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.name.as_bytes());
        for g in &self.graphs {
            h.update((g.node_count() as u64).to_le_bytes());
            h.update([g.class_label().unwrap_or(u8::MAX)]);
            for &l in g.node_labels() {
                h.update((l as u64).to_le_bytes());
            }
            h.update((g.edge_count() as u64).to_le_bytes());
            for &(a, b) in g.edges() {
                h.update((a as u64).to_le_bytes());
                h.update((b as u64).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn stats(&self) -> DatasetStats {
        let n = self.graphs.len() as f64;
        DatasetStats {
            name: self.name.clone(),
            graph_count: self.graphs.len(),
            mean_nodes: self.graphs.iter().map(|g| g.node_count() as f64).sum::<f64>() / n,
            mean_edges: self.graphs.iter().map(|g| g.edge_count() as f64).sum::<f64>() / n,
            max_cyclomatic: self.graphs.iter().map(|g| structural_profile(g).cyclomatic).max().unwrap_or(0),
            node_label_count: self.num_node_labels(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub name: String,
    pub graph_count: usize,
    pub mean_nodes: f64,
    pub mean_edges: f64,
    pub max_cyclomatic: usize,
    pub node_label_count: usize,
}

/// Finds the directory holding `{name}_A.txt` under `root`, trying the
/// common extraction layouts.
pub fn resolve_dataset_dir(root: &Path, name: &str) -> Option<PathBuf> {
    let file = format!("{name}_A.txt");
    [
        root.to_path_buf(),
        root.join(name),
        root.join(name).join(name),
        root.join(name).join("raw"),
    ]
    .into_iter()
    .find(|d| d.join(&file).is_file())
}

struct TextFile {
    path: PathBuf,
    text: String,
}

impl TextFile {
    fn read(dir: &Path, name: &str, suffix: &str) -> Result<Self> {
        let path = dir.join(format!("{name}_{suffix}.txt"));
        let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Parse {
                file: path.display().to_string(),
                message: "file not found".into(),
            },
            _ => Error::io(&path, e),
        })?;
        Ok(Self { path, text })
    }

    fn file(&self) -> String {
        self.path.display().to_string()
    }

    /// Non-blank lines with 1-based line numbers.
    fn lines(&self) -> impl Iterator<Item = (usize, &str)> {
        self.text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty())
    }

    fn integers(&self) -> Result<Vec<(usize, i64)>> {
        self.lines()
            .map(|(n, l)| {
                l.parse::<i64>().map(|v| (n, v)).map_err(|_| Error::Parse {
                    file: self.file(),
                    message: format!("line {n}: expected an integer, found `{l}`"),
                })
            })
            .collect()
    }
}

/// Reads a TUDataset directory (`_A`, `_graph_indicator`, `_graph_labels`,
/// optional `_node_labels`). Duplicate directed edges collapse to one
/// undirected edge; self-loops are dropped.
pub fn parse_tudataset(dir: &Path, name: &str) -> Result<GraphDataset> {
    let indicator = TextFile::read(dir, name, "graph_indicator")?;
    let labels = TextFile::read(dir, name, "graph_labels")?;
    let adjacency = TextFile::read(dir, name, "A")?;
    let node_label_file = match TextFile::read(dir, name, "node_labels") {
        Ok(f) => Some(f),
        Err(Error::Parse { .. }) => None,
        Err(e) => return Err(e),
    };

    let graph_labels = labels.integers()?;
    let graph_count = graph_labels.len();
    if graph_count == 0 {
        return Err(Error::Parse { file: labels.file(), message: "no graph labels".into() });
    }

    // node (0-based global) → (graph, local index)
    let mut owner = Vec::new();
    let mut sizes = vec![0usize; graph_count];
    for (line, g) in indicator.integers()? {
        if g < 1 || g as usize > graph_count {
            return Err(Error::Consistency {
                file: indicator.file(),
                line,
                message: format!("graph id {g} outside 1..={graph_count}"),
            });
        }
        let g = g as usize - 1;
        owner.push((g, sizes[g]));
        sizes[g] += 1;
    }
    if let Some(g) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::Consistency {
            file: indicator.file(),
            line: 0,
            message: format!("graph {} has no nodes", g + 1),
        });
    }

    let raw_node_labels: Vec<i64> = match &node_label_file {
        Some(f) => {
            let v: Vec<i64> = f.integers()?.into_iter().map(|(_, v)| v).collect();
            if v.len() != owner.len() {
                return Err(Error::Consistency {
                    file: f.file(),
                    line: v.len().min(owner.len()) + 1,
                    message: format!("{} node labels for {} nodes", v.len(), owner.len()),
                });
            }
            v
        }
        None => vec![0; owner.len()],
    };
    let vocab: BTreeMap<i64, usize> = raw_node_labels
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v, i))
        .collect();

    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); graph_count];
    let mut self_loops = 0usize;
    for (line, text) in adjacency.lines() {
        let bad = || Error::Parse {
            file: adjacency.file(),
            message: format!("line {line}: expected `i, j`, found `{text}`"),
        };
        let (a, b) = text.split_once(',').ok_or_else(bad)?;
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        let lookup = |v: usize| {
            (v >= 1 && v <= owner.len()).then(|| owner[v - 1]).ok_or_else(|| Error::Consistency {
                file: adjacency.file(),
                line,
                message: format!("node {v} outside 1..={}", owner.len()),
            })
        };
        let ((ga, la), (gb, lb)) = (lookup(a)?, lookup(b)?);
        if ga != gb {
            return Err(Error::Consistency {
                file: adjacency.file(),
                line,
                message: format!("edge ({a}, {b}) joins graphs {} and {}", ga + 1, gb + 1),
            });
        }
        if la == lb {
            self_loops += 1;
            continue;
        }
        edges[ga].push((la, lb));
    }
    if self_loops > 0 {
        log::warn!("{name}: dropped {self_loops} self-loop entries");
    }

    let classes: Vec<i64> = graph_labels.iter().map(|&(_, v)| v).collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() != 2 {
        return Err(Error::Parse {
            file: labels.file(),
            message: format!("expected exactly 2 classes, found {classes:?}"),
        });
    }

    let mut node_labels: Vec<Vec<usize>> = sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
    for (&(g, _), raw) in owner.iter().zip(&raw_node_labels) {
        node_labels[g].push(vocab[raw]);
    }
    let graphs = edges
        .into_iter()
        .zip(node_labels)
        .zip(&graph_labels)
        .enumerate()
        .map(|(i, ((e, nl), &(_, y)))| {
            let class = if y == classes[0] { 0 } else { 1 };
            Graph::new(sizes[i], e, nl, Some(class))
        })
        .collect::<Result<Vec<_>>>()?;
    GraphDataset::new(name, graphs)
}

/// Writes graphs in TUDataset text format (node labels always written).
pub fn write_tudataset(dir: &Path, name: &str, graphs: &[Graph]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (mut a, mut ind, mut gl, mut nl) = (String::new(), String::new(), String::new(), String::new());
    let mut base = 0;
    for (i, g) in graphs.iter().enumerate() {
        for &(u, v) in g.edges() {
            writeln!(a, "{}, {}", base + u + 1, base + v + 1).unwrap();
            writeln!(a, "{}, {}", base + v + 1, base + u + 1).unwrap();
        }
        for &l in g.node_labels() {
            writeln!(ind, "{}", i + 1).unwrap();
            writeln!(nl, "{l}").unwrap();
        }
        writeln!(gl, "{}", g.class_label().map_or(0, i64::from)).unwrap();
        base += g.node_count();
    }
    for (suffix, body) in [("A", a), ("graph_indicator", ind), ("graph_labels", gl), ("node_labels", nl)] {
        let path = dir.join(format!("{name}_{suffix}.txt"));
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitStatistic {
    #[default]
    EdgeDensity,
    AvgDegree,
    NodeCount,
}

impl SplitStatistic {
    pub fn of(self, g: &Graph) -> f64 {
        match self {
            Self::EdgeDensity => g.edge_density(),
            Self::AvgDegree => g.average_degree(),
            Self::NodeCount => g.node_count() as f64,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::EdgeDensity => "edge_density",
            Self::AvgDegree => "avg_degree",
            Self::NodeCount => "node_count",
        }
    }
}

impl std::str::FromStr for SplitStatistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edge_density" => Ok(Self::EdgeDensity),
            "avg_degree" => Ok(Self::AvgDegree),
            "node_count" => Ok(Self::NodeCount),
            other => Err(Error::InvalidArgument(format!("unknown split statistic `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    Test,
}

impl Partition {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Test => "test",
        }
    }
}

impl std::str::FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            other => Err(Error::InvalidArgument(format!("unknown partition `{other}`"))),
        }
    }
}

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainSplit {
    pub dataset_name: String,
    pub dataset_hash: String,
    pub statistic: SplitStatistic,
    pub k: usize,
    pub seed: u64,
    pub train_fraction: f64,
    /// Domain of each graph, by dataset index.
    pub domain: Vec<usize>,
    pub partition: Vec<Partition>,
}

impl DomainSplit {
    /// Graph indices of one domain and partition, ascending.
    pub fn members(&self, domain: usize, partition: Partition) -> Vec<usize> {
        (0..self.domain.len())
            .filter(|&i| self.domain[i] == domain && self.partition[i] == partition)
            .collect()
    }

    pub fn domain_members(&self, domain: usize) -> Vec<usize> {
        (0..self.domain.len()).filter(|&i| self.domain[i] == domain).collect()
    }

    pub fn domain_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &d in &self.domain {
            sizes[d] += 1;
        }
        sizes
    }
}

/// Quantile split: graphs sorted by `(statistic, index)` and cut into `k`
/// contiguous blocks, the first `n mod k` of them one larger. Each domain
/// is then divided into train/test, stratified by class.
pub fn split_domains(ds: &GraphDataset, statistic: SplitStatistic, k: usize, seed: u64) -> Result<DomainSplit> {
    split_domains_with_fraction(ds, statistic, k, seed, DEFAULT_TRAIN_FRACTION)
}

pub fn split_domains_with_fraction(
    ds: &GraphDataset,
    statistic: SplitStatistic,
    k: usize,
    seed: u64,
    train_fraction: f64,
) -> Result<DomainSplit> {
    let n = ds.graphs.len();
    if k < 2 || k > n {
        return Err(Error::InvalidArgument(format!("k = {k} must lie in 2..={n}")));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("train fraction {train_fraction} not in (0, 1)")));
    }
    let values: Vec<f64> = ds.graphs.iter().map(|g| statistic.of(g)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));

    let mut domain = vec![0; n];
    let (base, extra) = (n / k, n % k);
    let mut pos = 0;
    for d in 0..k {
        let size = base + usize::from(d < extra);
        for &g in &order[pos..pos + size] {
            domain[g] = d;
        }
        pos += size;
    }

    let mut partition = vec![Partition::Test; n];
    for d in 0..k {
        for class in 0..2u8 {
            let mut members: Vec<usize> = (0..n)
                .filter(|&i| domain[i] == d && ds.graphs[i].class_label() == Some(class))
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[d as u64, u64::from(class)]));
            members.shuffle(&mut rng);
            let train = (train_fraction * members.len() as f64).round() as usize;
            for &i in &members[..train] {
                partition[i] = Partition::Train;
            }
        }
    }
    Ok(DomainSplit {
        dataset_name: ds.name.clone(),
        dataset_hash: ds.content_hash(),
        statistic,
        k,
        seed,
        train_fraction,
        domain,
        partition,
    })
}

/// Independent stream seed for a purpose path under `seed`.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in path {
        h.update(p.to_le_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

const MANIFEST_VERSION: u32 = 1;
const MANIFEST_TITLE: &str = "# specnet split manifest";

fn manifest_body(s: &DomainSplit) -> String {
    let mut out = String::new();
    writeln!(out, "dataset={}", s.dataset_name).unwrap();
    writeln!(out, "dataset_hash={}", s.dataset_hash).unwrap();
    writeln!(out, "statistic={}", s.statistic.as_str()).unwrap();
    writeln!(out, "k={}", s.k).unwrap();
    writeln!(out, "seed={}", s.seed).unwrap();
    writeln!(out, "train_fraction={}", s.train_fraction).unwrap();
    out.push_str("graph_index,domain,partition\n");
    for (i, (d, p)) in s.domain.iter().zip(&s.partition).enumerate() {
        writeln!(out, "{i},{d},{}", p.as_str()).unwrap();
    }
    out
}

pub fn render_split(s: &DomainSplit) -> String {
    let body = manifest_body(s);
    let checksum = hex::encode(Sha256::digest(body.as_bytes()));
    format!("{MANIFEST_TITLE}\nversion={MANIFEST_VERSION}\nchecksum={checksum}\n{body}")
}

pub fn save_split(s: &DomainSplit, path: &Path) -> Result<()> {
    fs::write(path, render_split(s)).map_err(|e| Error::io(path, e))
}

/// Loads a manifest. With `expected_hash`, a manifest made from different
/// dataset content is rejected as a version error.
pub fn load_split(path: &Path, expected_hash: Option<&str>) -> Result<DomainSplit> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_split(&text, &path.display().to_string(), expected_hash)
}

pub fn parse_split(text: &str, file: &str, expected_hash: Option<&str>) -> Result<DomainSplit> {
    let parse_err = |message: String| Error::Parse { file: file.into(), message };
    let mut parts = text.splitn(4, '\n');
    let (title, version, checksum, body) = (
        parts.next().unwrap_or(""),
        parts.next().unwrap_or(""),
        parts.next().unwrap_or(""),
        parts.next().unwrap_or(""),
    );
    if title != MANIFEST_TITLE {
        return Err(parse_err("not a split manifest".into()));
    }
    match version.strip_prefix("version=").map(str::parse::<u32>) {
        Some(Ok(MANIFEST_VERSION)) => {}
        Some(Ok(v)) => return Err(Error::Version(format!("manifest version {v}, expected {MANIFEST_VERSION}"))),
        _ => return Err(parse_err(format!("bad version line `{version}`"))),
    }
    let expected = checksum
        .strip_prefix("checksum=")
        .ok_or_else(|| parse_err("missing checksum line".into()))?;
    let found = hex::encode(Sha256::digest(body.as_bytes()));
    if found != expected {
        return Err(Error::Checksum { expected: expected.into(), found });
    }

    let mut lines = body.lines();
    let mut header = BTreeMap::new();
    for line in lines.by_ref() {
        if line == "graph_index,domain,partition" {
            break;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| parse_err(format!("bad header line `{line}`")))?;
        header.insert(k, v);
    }
    let field = |k: &str| header.get(k).copied().ok_or_else(|| parse_err(format!("missing `{k}`")));
    let num = |k: &str| -> Result<u64> { field(k)?.parse().map_err(|_| parse_err(format!("bad `{k}`"))) };

    let dataset_hash = field("dataset_hash")?.to_string();
    if let Some(h) = expected_hash {
        if h != dataset_hash {
            return Err(Error::Version(format!("manifest built for dataset hash {dataset_hash}, data has {h}")));
        }
    }
    let k = num("k")? as usize;
    let mut domain = Vec::new();
    let mut partition = Vec::new();
    for (i, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        let ok = cols.len() == 3 && cols[0].parse::<usize>().ok() == Some(i);
        let d = cols.get(1).and_then(|d| d.parse::<usize>().ok()).filter(|&d| d < k);
        let p = match cols.get(2) {
            Some(&"train") => Some(Partition::Train),
            Some(&"test") => Some(Partition::Test),
            _ => None,
        };
        match (ok, d, p) {
            (true, Some(d), Some(p)) => {
                domain.push(d);
                partition.push(p);
            }
            _ => return Err(parse_err(format!("bad row `{line}`"))),
        }
    }
    Ok(DomainSplit {
        dataset_name: field("dataset")?.to_string(),
        dataset_hash,
        statistic: field("statistic")?.parse()?,
        k,
        seed: num("seed")?,
        train_fraction: field("train_fraction")?.parse().map_err(|_| parse_err("bad `train_fraction`".into()))?,
        domain,
        partition,
    })
}

/// Two-class synthetic corpus with graph sizes and densities spread wide
/// enough that quantile domains differ structurally. Class 1 graphs carry
/// extra chords and a different node-label mix.
pub fn synthetic_dataset(name: &str, count: usize, seed: u64) -> Result<GraphDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graphs = Vec::with_capacity(count);
    for i in 0..count {
        let class = (i % 2) as u8;
        let n = rng.gen_range(6..=22);
        let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.gen_range(0..v), v)).collect();
        let density = rng.gen_range(0.0..0.25);
        let chords = (density * n as f64) as usize + if class == 1 { 3 } else { 0 };
        for _ in 0..chords {
            let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
            if a != b {
                edges.push((a, b));
            }
        }
        let labels = (0..n)
            .map(|_| {
                let p: f64 = rng.gen();
                match (class, p) {
                    (0, p) if p < 0.6 => 0,
                    (0, p) if p < 0.9 => 1,
                    (1, p) if p < 0.3 => 0,
                    (1, p) if p < 0.5 => 1,
                    _ => 2,
                }
            })
            .collect();
        graphs.push(Graph::new(n, edges, labels, Some(class))?);
    }
    GraphDataset::new(name, graphs)
}
