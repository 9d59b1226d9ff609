//! Graph data model, dataset I/O, batching, stratified splits, and
//! synthetic classification tasks.
//!
//! Datasets are JSON lines: one object per graph with keys `nodes` (node
//! label ids), `edges` (undirected `[u, v]` pairs listed once, `u < v` when
//! written by this crate) and `y` (0 or 1).

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    NoNodes,
    #[error("node_labels length {labels} does not match num_nodes {nodes}")]
    LabelCount { labels: usize, nodes: usize },
    #[error("edge ({u}, {v}) out of range for {nodes} nodes")]
    EdgeOutOfRange { u: usize, v: usize, nodes: usize },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate undirected edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("graph label must be 0 or 1, got {0}")]
    BadLabel(usize),
    #[error("cannot batch an empty graph list")]
    EmptyBatch,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("k-fold needs k >= 2, got {0}")]
    BadFoldCount(usize),
    #[error("class {class} has {count} samples, fewer than k = {k}")]
    ClassTooSmall { class: usize, count: usize, k: usize },
    #[error("synthetic generation needs n >= 10, got {0}")]
    TooFewSamples(usize),
    #[error("unknown synthetic task `{0}`")]
    UnknownTask(String),
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Node-labeled undirected graph with a binary class label. Edges are stored
/// once per undirected pair, canonicalized to `u < v` and sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    pub num_nodes: usize,
    pub node_labels: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
    pub label: usize,
}

impl Graph {
    pub fn new(
        num_nodes: usize,
        node_labels: Vec<usize>,
        edges: Vec<(usize, usize)>,
        label: usize,
    ) -> Result<Self> {
        if num_nodes == 0 {
            return Err(GraphError::NoNodes);
        }
        if node_labels.len() != num_nodes {
            return Err(GraphError::LabelCount {
                labels: node_labels.len(),
                nodes: num_nodes,
            });
        }
        if label > 1 {
            return Err(GraphError::BadLabel(label));
        }
        let mut canonical: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for (u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(GraphError::EdgeOutOfRange { u, v, nodes: num_nodes });
            }
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            canonical.push((u.min(v), u.max(v)));
        }
        canonical.sort_unstable();
        for w in canonical.windows(2) {
            if w[0] == w[1] {
                return Err(GraphError::DuplicateEdge(w[0].0, w[0].1));
            }
        }
        Ok(Self {
            num_nodes,
            node_labels,
            edges: canonical,
            label,
        })
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.num_nodes];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Relabels nodes: old id `i` becomes `perm[i]`. `perm` must be a
    /// permutation of `0..num_nodes`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut labels = vec![0usize; self.num_nodes];
        for (old, &new) in perm.iter().enumerate() {
            labels[new] = self.node_labels[old];
        }
        let edges = self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        Self::new(self.num_nodes, labels, edges, self.label)
    }

    pub fn triangle_count(&self) -> usize {
        let mut adj = vec![false; self.num_nodes * self.num_nodes];
        for &(u, v) in &self.edges {
            adj[u * self.num_nodes + v] = true;
            adj[v * self.num_nodes + u] = true;
        }
        let n = self.num_nodes;
        let mut count = 0;
        for a in 0..n {
            for b in a + 1..n {
                if !adj[a * n + b] {
                    continue;
                }
                for c in b + 1..n {
                    if adj[a * n + c] && adj[b * n + c] {
                        count += 1;
                    }
                }
            }
        }
        count
    }
}

/// Directed edge arrays in canonical order (sorted by destination, then
/// source), so segment kernels see contiguous, reproducible neighborhoods.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EdgeList {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
}

impl EdgeList {
    pub fn from_pairs(mut pairs: Vec<(usize, usize)>) -> Self {
        pairs.sort_unstable_by_key(|&(s, d)| (d, s));
        Self {
            src: pairs.iter().map(|&(s, _)| s).collect(),
            dst: pairs.iter().map(|&(_, d)| d).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

/// Disjoint union of graphs with segment maps back to the originals. Every
/// undirected edge appears in both directions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchedGraph {
    pub node_labels: Vec<usize>,
    pub edges: EdgeList,
    pub node_to_graph: Vec<usize>,
    pub graph_labels: Vec<usize>,
    pub num_graphs: usize,
    pub num_nodes: usize,
    pub degrees: Vec<usize>,
}

/// Disjoint-union batch of `graphs` with per-graph node-id offsets.
pub fn batch(graphs: &[Graph]) -> Result<BatchedGraph> {
    if graphs.is_empty() {
        return Err(GraphError::EmptyBatch);
    }
    let num_nodes: usize = graphs.iter().map(|g| g.num_nodes).sum();
    let mut node_labels = Vec::with_capacity(num_nodes);
    let mut node_to_graph = Vec::with_capacity(num_nodes);
    let mut pairs = Vec::new();
    let mut graph_labels = Vec::with_capacity(graphs.len());
    let mut offset = 0;
    for (gi, g) in graphs.iter().enumerate() {
        node_labels.extend_from_slice(&g.node_labels);
        node_to_graph.extend(std::iter::repeat(gi).take(g.num_nodes));
        for &(u, v) in &g.edges {
            pairs.push((offset + u, offset + v));
            pairs.push((offset + v, offset + u));
        }
        graph_labels.push(g.label);
        offset += g.num_nodes;
    }
    let edges = EdgeList::from_pairs(pairs);
    let mut degrees = vec![0usize; num_nodes];
    for &d in &edges.dst {
        degrees[d] += 1;
    }
    Ok(BatchedGraph {
        node_labels,
        edges,
        node_to_graph,
        graph_labels,
        num_graphs: graphs.len(),
        num_nodes,
        degrees,
    })
}

/// Splits a batch back into its member graphs.
pub fn unbatch(batched: &BatchedGraph) -> Vec<Graph> {
    let mut starts = vec![0usize; batched.num_graphs + 1];
    for &g in &batched.node_to_graph {
        starts[g + 1] += 1;
    }
    for i in 1..starts.len() {
        starts[i] += starts[i - 1];
    }
    let mut edge_sets: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); batched.num_graphs];
    for (&s, &d) in batched.edges.src.iter().zip(&batched.edges.dst) {
        let g = batched.node_to_graph[s];
        let base = starts[g];
        let (u, v) = (s - base, d - base);
        edge_sets[g].insert((u.min(v), u.max(v)));
    }
    (0..batched.num_graphs)
        .map(|g| {
            let range = starts[g]..starts[g + 1];
            Graph::new(
                range.len(),
                batched.node_labels[range].to_vec(),
                edge_sets[g].iter().copied().collect(),
                batched.graph_labels[g],
            )
            .expect("batched graphs are valid by construction")
        })
        .collect()
}

/// A named collection of graphs sharing one node-label vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub graphs: Vec<Graph>,
    pub vocab_size: usize,
    pub name: String,
}

impl Dataset {
    pub fn from_graphs(graphs: Vec<Graph>, name: impl Into<String>) -> Result<Self> {
        if graphs.is_empty() {
            return Err(GraphError::EmptyDataset);
        }
        let vocab_size = graphs
            .iter()
            .flat_map(|g| g.node_labels.iter())
            .max()
            .map_or(1, |&m| m + 1);
        Ok(Self {
            graphs,
            vocab_size,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0usize; 2];
        for g in &self.graphs {
            counts[g.label] += 1;
        }
        counts
    }
}

#[derive(Serialize, Deserialize)]
struct GraphRecord {
    nodes: Vec<usize>,
    edges: Vec<[usize; 2]>,
    y: usize,
}

/// Parses a JSON-lines dataset file. The vocabulary size is inferred from
/// the largest node label seen.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    let mut graphs = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: GraphRecord =
            serde_json::from_str(line).map_err(|e| GraphError::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
        let graph = Graph::new(
            record.nodes.len(),
            record.nodes,
            record.edges.iter().map(|&[u, v]| (u, v)).collect(),
            record.y,
        )
        .map_err(|e| GraphError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        graphs.push(graph);
    }
    if graphs.is_empty() {
        return Err(GraphError::EmptyDataset);
    }
    Dataset::from_graphs(graphs, name)
}

/// Writes a dataset as JSON lines, one graph per line, undirected edges
/// emitted once with `u < v`.
pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = BufWriter::new(file);
    for g in &dataset.graphs {
        let record = GraphRecord {
            nodes: g.node_labels.clone(),
            edges: g.edges.iter().map(|&(u, v)| [u, v]).collect(),
            y: g.label,
        };
        let line = serde_json::to_string(&record).expect("graph record serializes");
        writeln!(out, "{line}").map_err(|source| GraphError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    out.flush().map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Stratified k-fold split: shuffles each class independently and deals
/// samples round-robin, so per-fold class ratios stay within one sample of
/// the global ratio. Deterministic for a fixed seed.
pub fn stratified_kfold(
    dataset: &Dataset,
    k: usize,
    seed: u64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 {
        return Err(GraphError::BadFoldCount(k));
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, g) in dataset.graphs.iter().enumerate() {
        by_class[g.label].push(i);
    }
    for (class, members) in by_class.iter().enumerate() {
        if members.len() < k {
            return Err(GraphError::ClassTooSmall {
                class,
                count: members.len(),
                k,
            });
        }
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut test_folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    for members in by_class.iter_mut() {
        members.shuffle(&mut rng);
        for (pos, &idx) in members.iter().enumerate() {
            test_folds[pos % k].push(idx);
        }
    }
    Ok(test_folds
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let in_test: BTreeSet<usize> = test.iter().copied().collect();
            let train: Vec<usize> = (0..dataset.len()).filter(|i| !in_test.contains(i)).collect();
            (train, test)
        })
        .collect())
}

/// Synthetic binary tasks with exact labeling rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticTask {
    /// Label 1 iff the maximum node degree is at least 4.
    DegreeThreshold,
    /// Label 1 iff the triangle count is odd.
    TriangleParity,
    /// Structural classes: path graphs are 0, star graphs are 1.
    StarVsPath,
}

impl std::str::FromStr for SyntheticTask {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "degree_threshold" => Ok(Self::DegreeThreshold),
            "triangle_parity" => Ok(Self::TriangleParity),
            "star_vs_path" => Ok(Self::StarVsPath),
            other => Err(GraphError::UnknownTask(other.to_string())),
        }
    }
}

impl fmt::Display for SyntheticTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::DegreeThreshold => "degree_threshold",
            Self::TriangleParity => "triangle_parity",
            Self::StarVsPath => "star_vs_path",
        };
        f.write_str(s)
    }
}

pub const SYNTHETIC_VOCAB: usize = 8;
const MIN_NODES: usize = 6;
const MAX_NODES: usize = 20;

fn random_node_labels(rng: &mut StdRng, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..SYNTHETIC_VOCAB)).collect()
}

fn random_gnp(rng: &mut StdRng, n: usize, p: f64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    edges
}

/// Relabels nodes by a random permutation so structure carries no positional
/// signal.
fn permute_graph(rng: &mut StdRng, g: &Graph) -> Graph {
    let mut perm: Vec<usize> = (0..g.num_nodes).collect();
    perm.shuffle(rng);
    g.permuted(&perm).expect("permutation preserves validity")
}

/// Generates `n` random graphs (6-20 nodes) labeled by the task's exact rule.
/// Each class is capped at 70% of the dataset so both classes always appear.
pub fn generate_synthetic(task: SyntheticTask, n: usize, seed: u64) -> Result<Dataset> {
    if n < 10 {
        return Err(GraphError::TooFewSamples(n));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let cap = (n * 7).div_ceil(10);
    let mut counts = [0usize; 2];
    let mut graphs = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while graphs.len() < n {
        attempts += 1;
        let over_budget = attempts > 200 * n;
        let g = sample_graph(task, &mut rng);
        if !over_budget && counts[g.label] >= cap {
            continue;
        }
        counts[g.label] += 1;
        graphs.push(g);
    }
    let mut dataset = Dataset::from_graphs(graphs, format!("{task}_{n}"))?;
    dataset.vocab_size = SYNTHETIC_VOCAB;
    Ok(dataset)
}

fn sample_graph(task: SyntheticTask, rng: &mut StdRng) -> Graph {
    let num_nodes = rng.gen_range(MIN_NODES..=MAX_NODES);
    match task {
        SyntheticTask::StarVsPath => {
            let is_star = rng.gen::<bool>();
            let edges: Vec<(usize, usize)> = if is_star {
                (1..num_nodes).map(|v| (0, v)).collect()
            } else {
                (1..num_nodes).map(|v| (v - 1, v)).collect()
            };
            let g = Graph::new(
                num_nodes,
                random_node_labels(rng, num_nodes),
                edges,
                usize::from(is_star),
            )
            .expect("construction is valid");
            permute_graph(rng, &g)
        }
        SyntheticTask::DegreeThreshold => {
            let p = rng.gen_range(0.10..0.45);
            let edges = random_gnp(rng, num_nodes, p);
            let mut g = Graph::new(num_nodes, random_node_labels(rng, num_nodes), edges, 0)
                .expect("construction is valid");
            g.label = usize::from(g.degrees().iter().copied().max().unwrap_or(0) >= 4);
            g
        }
        SyntheticTask::TriangleParity => {
            // Sparse regime: expected degree 1.2-3.0 keeps triangle counts
            // small, so parity stays tied to structure instead of turning
            // into label noise on dense graphs.
            let t = rng.gen_range(1.2..3.0);
            let p = t / (num_nodes as f64 - 1.0);
            let edges = random_gnp(rng, num_nodes, p);
            let mut g = Graph::new(num_nodes, random_node_labels(rng, num_nodes), edges, 0)
                .expect("construction is valid");
            g.label = g.triangle_count() % 2;
            g
        }
    }
}

/// Recomputes a graph's task label from scratch. Generation and tests both
/// go through graph-level recounts, but this is the single entry point the
/// CLI uses to re-verify emitted labels.
pub fn synthetic_label_oracle(task: SyntheticTask, g: &Graph) -> usize {
    match task {
        SyntheticTask::DegreeThreshold => {
            usize::from(g.degrees().iter().copied().max().unwrap_or(0) >= 4)
        }
        SyntheticTask::TriangleParity => g.triangle_count() % 2,
        SyntheticTask::StarVsPath => {
            let deg = g.degrees();
            let max_deg = deg.iter().copied().max().unwrap_or(0);
            // A star of >= 3 nodes has a hub of degree n-1; a path's maximum
            // degree is 2.
            usize::from(max_deg == g.num_nodes - 1 && g.num_nodes > 3)
        }
    }
}
