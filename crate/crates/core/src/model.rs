//! Model assembly: a declarative configuration describing aggregator sets,
//! merge/combine choices and structural flags, expanded into an embedding
//! table, a stack of aggregation layers, one or more readouts, and a
//! three-layer classifier head.

use std::path::Path;

use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::BatchedGraph;
use crate::layers::{
    aggregate_segments, Aggregator, AggregatorKind, CombineKind, GinLayer, HeteroLayer,
    HeteroReadout, LayerError, Linear, MergeKind, SageLayer,
};
use crate::tensor::{softmax_rows, BnBuffers, Forward, Init, Mode, ParamId, ParamSet, TensorError, ValueId};

pub const DEFAULT_EMBED_DIM: usize = 75;
pub const DEFAULT_ATT_HEADS: usize = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration:\n  - {}", violations.join("\n  - "))]
    Config { violations: Vec<String> },
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("node label {label} out of vocabulary (size {vocab})")]
    LabelOutOfVocab { label: usize, vocab: usize },
    #[error("unknown baseline kind `{0}` (expected `gin` or `sage`)")]
    UnknownBaseline(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

fn default_embed_dim() -> usize {
    DEFAULT_EMBED_DIM
}

fn default_att_heads() -> usize {
    DEFAULT_ATT_HEADS
}

/// The declarative model description: aggregator sets, merge and combine
/// choices, structural flags, and widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HagNetConfig {
    pub num_agg_layers: usize,
    pub agg_kinds: Vec<AggregatorKind>,
    pub agg_merge: MergeKind,
    pub combine: CombineKind,
    pub readout_kinds: Vec<AggregatorKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readout_merge: Option<MergeKind>,
    pub pyramid: bool,
    pub readout_tied: bool,
    pub dense_connections: bool,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_embed_dim")]
    pub hidden_dim: usize,
    pub vocab_size: usize,
    #[serde(default = "default_att_heads")]
    pub att_heads: usize,
}

impl HagNetConfig {
    /// Expert-tuned configuration: 5 layers, {max, mean} merged by sum,
    /// recurrent combine, {max, sum} readout merged by sum, pyramid with
    /// tied readouts and dense connections.
    pub fn cfg1(vocab_size: usize) -> Self {
        Self {
            num_agg_layers: 5,
            agg_kinds: vec![AggregatorKind::Max, AggregatorKind::Mean],
            agg_merge: MergeKind::Sum,
            combine: CombineKind::Rnn,
            readout_kinds: vec![AggregatorKind::Max, AggregatorKind::Sum],
            readout_merge: Some(MergeKind::Sum),
            pyramid: true,
            readout_tied: true,
            dense_connections: true,
            embed_dim: DEFAULT_EMBED_DIM,
            hidden_dim: DEFAULT_EMBED_DIM,
            vocab_size,
            att_heads: DEFAULT_ATT_HEADS,
        }
    }

    /// Grid-search winner: 5 layers, {max, sum} merged by sum, concat
    /// combine, single {max} readout, pyramid with tied readouts, no dense
    /// connections.
    pub fn cfg2(vocab_size: usize) -> Self {
        Self {
            num_agg_layers: 5,
            agg_kinds: vec![AggregatorKind::Max, AggregatorKind::Sum],
            agg_merge: MergeKind::Sum,
            combine: CombineKind::Cat,
            readout_kinds: vec![AggregatorKind::Max],
            readout_merge: None,
            pyramid: true,
            readout_tied: true,
            dense_connections: false,
            embed_dim: DEFAULT_EMBED_DIM,
            hidden_dim: DEFAULT_EMBED_DIM,
            vocab_size,
            att_heads: DEFAULT_ATT_HEADS,
        }
    }

    /// Collects every violated invariant; empty means the config is valid.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.num_agg_layers == 0 {
            v.push("num_agg_layers must be >= 1".to_string());
        }
        if self.agg_kinds.is_empty() {
            v.push("agg_kinds must be non-empty".to_string());
        }
        if has_duplicates(&self.agg_kinds) {
            v.push("agg_kinds must be duplicate-free".to_string());
        }
        if self.readout_kinds.is_empty() {
            v.push("readout_kinds must be non-empty".to_string());
        }
        if has_duplicates(&self.readout_kinds) {
            v.push("readout_kinds must be duplicate-free".to_string());
        }
        if self.readout_tied && !self.pyramid {
            v.push("readout_tied requires pyramid".to_string());
        }
        match (self.readout_kinds.len(), self.readout_merge) {
            (n, None) if n > 1 => {
                v.push("readout_merge is required when readout_kinds has more than one entry".to_string())
            }
            (1, Some(_)) => {
                v.push("readout_merge must be absent when readout_kinds has a single entry".to_string())
            }
            _ => {}
        }
        if self.embed_dim == 0 {
            v.push("embed_dim must be >= 1".to_string());
        }
        if self.hidden_dim == 0 {
            v.push("hidden_dim must be >= 1".to_string());
        }
        if self.vocab_size == 0 {
            v.push("vocab_size must be >= 1".to_string());
        }
        if self.att_heads == 0 {
            v.push("att_heads must be >= 1".to_string());
        }
        let uses_att = self.agg_kinds.contains(&AggregatorKind::Att)
            || self.readout_kinds.contains(&AggregatorKind::Att);
        if uses_att && self.att_heads > 0 {
            if self.agg_kinds.contains(&AggregatorKind::Att)
                && (self.embed_dim % self.att_heads != 0 || self.hidden_dim % self.att_heads != 0)
            {
                v.push(format!(
                    "att_heads {} must divide embed_dim {} and hidden_dim {}",
                    self.att_heads, self.embed_dim, self.hidden_dim
                ));
            }
            if self.readout_kinds.contains(&AggregatorKind::Att)
                && self.hidden_dim % self.att_heads != 0
            {
                v.push(format!(
                    "att_heads {} must divide hidden_dim {}",
                    self.att_heads, self.hidden_dim
                ));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let violations = self.violations();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Config { violations })
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> std::io::Result<serde_json::Result<Self>> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text))
    }
}

fn has_duplicates(kinds: &[AggregatorKind]) -> bool {
    for (i, a) in kinds.iter().enumerate() {
        if kinds[i + 1..].contains(a) {
            return true;
        }
    }
    false
}

/// Baseline architectures trained under the same protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Gin,
    Sage,
}

impl std::str::FromStr for BaselineKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gin" => Ok(Self::Gin),
            "sage" => Ok(Self::Sage),
            other => Err(ModelError::UnknownBaseline(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub depth: usize,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_embed_dim")]
    pub hidden_dim: usize,
    pub vocab_size: usize,
    /// Fixed epsilon of the GIN center term; unused for GraphSAGE.
    #[serde(default)]
    pub gin_eps: f64,
}

impl BaselineConfig {
    pub fn new(kind: BaselineKind, depth: usize, vocab_size: usize) -> Self {
        Self {
            kind,
            depth,
            embed_dim: DEFAULT_EMBED_DIM,
            hidden_dim: DEFAULT_EMBED_DIM,
            vocab_size,
            gin_eps: 0.0,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.depth == 0 {
            v.push("depth must be >= 1".to_string());
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            v.push("dims must be >= 1".to_string());
        }
        if self.vocab_size == 0 {
            v.push("vocab_size must be >= 1".to_string());
        }
        v
    }
}

/// What a model was built from; stored in checkpoints so eval can rebuild
/// the exact architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelSpec {
    HagNet(HagNetConfig),
    Baseline(BaselineConfig),
}

impl ModelSpec {
    pub fn vocab_size(&self) -> usize {
        match self {
            Self::HagNet(c) => c.vocab_size,
            Self::Baseline(c) => c.vocab_size,
        }
    }

    pub fn build(&self, seed: u64) -> Result<HagNetModel> {
        match self {
            Self::HagNet(c) => build(c.clone(), seed),
            Self::Baseline(c) => build_baseline(c.clone(), seed),
        }
    }

    pub fn display_name(&self) -> String {
        match self {
            Self::HagNet(_) => "hagnet".to_string(),
            Self::Baseline(c) => match c.kind {
                BaselineKind::Gin => "gin".to_string(),
                BaselineKind::Sage => "sage".to_string(),
            },
        }
    }
}

/// A spread of configurations covering both pyramid settings, dense
/// connections on and off, tied and untied readouts, every combine kind,
/// and aggregator subsets of sizes one and two. Used by invariance and
/// gradient test suites.
pub fn config_lattice(
    vocab_size: usize,
    embed_dim: usize,
    hidden_dim: usize,
    num_agg_layers: usize,
) -> Vec<HagNetConfig> {
    use AggregatorKind::{Att, Max, Mean, Sum};
    let base = |agg_kinds: Vec<AggregatorKind>,
                agg_merge: MergeKind,
                combine: CombineKind,
                readout_kinds: Vec<AggregatorKind>,
                readout_merge: Option<MergeKind>,
                pyramid: bool,
                readout_tied: bool,
                dense_connections: bool| HagNetConfig {
        num_agg_layers,
        agg_kinds,
        agg_merge,
        combine,
        readout_kinds,
        readout_merge,
        pyramid,
        readout_tied,
        dense_connections,
        embed_dim,
        hidden_dim,
        vocab_size,
        att_heads: 1,
    };
    vec![
        base(vec![Max, Mean], MergeKind::Sum, CombineKind::Rnn, vec![Max, Sum], Some(MergeKind::Sum), true, true, true),
        base(vec![Max, Sum], MergeKind::Sum, CombineKind::Cat, vec![Max], None, true, true, false),
        base(vec![Sum], MergeKind::Sum, CombineKind::Sum, vec![Mean], None, false, false, false),
        base(vec![Mean, Att], MergeKind::Cat, CombineKind::Max, vec![Sum], None, true, false, false),
        base(vec![Att], MergeKind::Sum, CombineKind::Rnn, vec![Att, Max], Some(MergeKind::Cat), false, false, true),
        base(vec![Max, Sum], MergeKind::Cat, CombineKind::Sum, vec![Sum, Mean], Some(MergeKind::Sum), true, true, true),
        base(vec![Mean], MergeKind::Sum, CombineKind::Cat, vec![Max], None, false, false, false),
        base(vec![Sum, Att], MergeKind::Sum, CombineKind::Cat, vec![Mean], None, true, false, true),
        base(vec![Max], MergeKind::Sum, CombineKind::Max, vec![Sum], None, false, false, false),
    ]
}

#[derive(Debug, Clone)]
enum Layer {
    Hetero(HeteroLayer),
    Gin(GinLayer),
    Sage(SageLayer),
}

#[derive(Debug, Clone)]
enum Readout {
    Hetero(HeteroReadout),
    /// Parameter-free sum pooling, used by the baselines.
    PlainSum,
}

/// A built model: trainables, batch-norm buffers, and the wiring flags.
#[derive(Debug, Clone)]
pub struct HagNetModel {
    spec: ModelSpec,
    pub params: ParamSet,
    pub buffers: BnBuffers,
    embedding: ParamId,
    layers: Vec<Layer>,
    readouts: Vec<Readout>,
    classifier: [Linear; 3],
    pyramid: bool,
    dense_connections: bool,
    vocab_size: usize,
}

/// Builds a HAG-Net from its configuration. Deterministic for a fixed seed:
/// parameters are allocated in a canonical order and initialized from one
/// seeded stream (Glorot-uniform linear maps, N(0, 0.01) embeddings).
pub fn build(config: HagNetConfig, seed: u64) -> Result<HagNetModel> {
    config.validate()?;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut ps = ParamSet::new();
    let mut bufs = BnBuffers::new();

    let embedding = ps.alloc(
        "embedding",
        &[config.vocab_size, config.embed_dim],
        Init::Normal(0.01),
        &mut rng,
    );

    let mut layers = Vec::with_capacity(config.num_agg_layers);
    for k in 0..config.num_agg_layers {
        let in_dim = if k == 0 { config.embed_dim } else { config.hidden_dim };
        layers.push(Layer::Hetero(HeteroLayer::new(
            &mut ps,
            &mut bufs,
            &mut rng,
            &format!("layer{k}"),
            in_dim,
            config.hidden_dim,
            &config.agg_kinds,
            config.agg_merge,
            config.combine,
            config.att_heads,
        )?));
    }

    let ro_merge = config.readout_merge.unwrap_or(MergeKind::Sum);
    let readout_count = if config.pyramid && !config.readout_tied {
        config.num_agg_layers
    } else {
        1
    };
    let mut readouts = Vec::with_capacity(readout_count);
    for r in 0..readout_count {
        let name = if readout_count == 1 { "readout".to_string() } else { format!("readout{r}") };
        readouts.push(Readout::Hetero(HeteroReadout::new(
            &mut ps,
            &mut bufs,
            &mut rng,
            &name,
            config.hidden_dim,
            &config.readout_kinds,
            ro_merge,
            config.att_heads,
        )?));
    }

    let classifier = build_classifier(&mut ps, &mut rng, config.hidden_dim);

    Ok(HagNetModel {
        vocab_size: config.vocab_size,
        pyramid: config.pyramid,
        dense_connections: config.dense_connections,
        spec: ModelSpec::HagNet(config),
        params: ps,
        buffers: bufs,
        embedding,
        layers,
        readouts,
        classifier,
    })
}

/// Builds a GIN or GraphSAGE baseline under the shared forward contract:
/// embedding, layer stack, single sum readout, identical classifier.
pub fn build_baseline(config: BaselineConfig, seed: u64) -> Result<HagNetModel> {
    let violations = config.violations();
    if !violations.is_empty() {
        return Err(ModelError::Config { violations });
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut ps = ParamSet::new();
    let mut bufs = BnBuffers::new();

    let embedding = ps.alloc(
        "embedding",
        &[config.vocab_size, config.embed_dim],
        Init::Normal(0.01),
        &mut rng,
    );

    let mut layers = Vec::with_capacity(config.depth);
    for k in 0..config.depth {
        let in_dim = if k == 0 { config.embed_dim } else { config.hidden_dim };
        let name = format!("layer{k}");
        layers.push(match config.kind {
            BaselineKind::Gin => Layer::Gin(GinLayer::new(
                &mut ps,
                &mut bufs,
                &mut rng,
                &name,
                in_dim,
                config.hidden_dim,
                config.gin_eps,
            )),
            BaselineKind::Sage => {
                Layer::Sage(SageLayer::new(&mut ps, &mut rng, &name, in_dim, config.hidden_dim))
            }
        });
    }

    let classifier = build_classifier(&mut ps, &mut rng, config.hidden_dim);

    Ok(HagNetModel {
        vocab_size: config.vocab_size,
        pyramid: false,
        dense_connections: false,
        spec: ModelSpec::Baseline(config),
        params: ps,
        buffers: bufs,
        embedding,
        layers,
        readouts: vec![Readout::PlainSum],
        classifier,
    })
}

fn build_classifier(ps: &mut ParamSet, rng: &mut StdRng, hidden: usize) -> [Linear; 3] {
    [
        Linear::new(ps, rng, "classifier.0", hidden, hidden, true),
        Linear::new(ps, rng, "classifier.1", hidden, hidden, true),
        Linear::new(ps, rng, "classifier.2", hidden, 2, true),
    ]
}

impl HagNetModel {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Number of distinct trainable tensors.
    pub fn trainable_tensor_count(&self) -> usize {
        self.params.len()
    }

    /// Total trainable scalar count.
    pub fn scalar_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// How many independent readout parameter sets exist (1 when tied).
    pub fn distinct_readout_sets(&self) -> usize {
        self.readouts.len()
    }

    /// Runs the network over a batch and returns the forward context plus
    /// the `[num_graphs x 2]` logits node.
    pub fn forward(&mut self, batched: &BatchedGraph, mode: Mode) -> Result<(Forward<'_>, ValueId)> {
        for &label in &batched.node_labels {
            if label >= self.vocab_size {
                return Err(ModelError::LabelOutOfVocab { label, vocab: self.vocab_size });
            }
        }
        let HagNetModel {
            params,
            buffers,
            embedding,
            layers,
            readouts,
            classifier,
            pyramid,
            dense_connections,
            ..
        } = self;
        let mut fw = Forward::new(params, buffers, mode);

        let table = fw.param(*embedding);
        let h0 = fw.tape.embedding_lookup(table, &batched.node_labels)?;

        let mut outs = Vec::with_capacity(layers.len());
        let mut input = h0;
        let mut dc_sum: Option<ValueId> = None;
        for layer in layers.iter() {
            let out = match layer {
                Layer::Hetero(l) => l.forward(&mut fw, input, &batched.edges, batched.num_nodes)?,
                Layer::Gin(l) => l.forward(&mut fw, input, &batched.edges, batched.num_nodes)?,
                Layer::Sage(l) => l.forward(&mut fw, input, &batched.edges, batched.num_nodes)?,
            };
            outs.push(out);
            input = if *dense_connections {
                let sum = match dc_sum {
                    None => out,
                    Some(s) => fw.tape.add(s, out)?,
                };
                dc_sum = Some(sum);
                sum
            } else {
                out
            };
        }

        let run_readout = |fw: &mut Forward, ro: &Readout, feats: ValueId| -> Result<ValueId> {
            Ok(match ro {
                Readout::Hetero(r) => {
                    r.forward(fw, feats, &batched.node_to_graph, batched.num_graphs)?
                }
                Readout::PlainSum => aggregate_segments(
                    fw,
                    &Aggregator::Sum,
                    feats,
                    &batched.node_to_graph,
                    batched.num_graphs,
                )?,
            })
        };

        let graph_repr = if *pyramid {
            let mut acc: Option<ValueId> = None;
            for (k, &out) in outs.iter().enumerate() {
                let ro = if readouts.len() == 1 { &readouts[0] } else { &readouts[k] };
                let r = run_readout(&mut fw, ro, out)?;
                acc = Some(match acc {
                    None => r,
                    Some(a) => fw.tape.add(a, r)?,
                });
            }
            acc.expect("at least one layer exists")
        } else {
            let last = *outs.last().expect("at least one layer exists");
            let ro = if readouts.len() == 1 { &readouts[0] } else { &readouts[layers.len() - 1] };
            run_readout(&mut fw, ro, last)?
        };

        let h = classifier[0].forward(&mut fw, graph_repr)?;
        let h = fw.tape.relu(h);
        let h = classifier[1].forward(&mut fw, h)?;
        let h = fw.tape.relu(h);
        let logits = classifier[2].forward(&mut fw, h)?;
        Ok((fw, logits))
    }

    /// Eval-mode logits as a flat `[num_graphs x 2]` row-major vector.
    pub fn eval_logits(&mut self, batched: &BatchedGraph) -> Result<Vec<f64>> {
        let (fw, logits) = self.forward(batched, Mode::Eval)?;
        Ok(fw.tape.data(logits).to_vec())
    }

    /// Eval-mode probability of class 1 per graph.
    pub fn eval_scores(&mut self, batched: &BatchedGraph) -> Result<Vec<f64>> {
        let logits = self.eval_logits(batched)?;
        let rows = logits.len() / 2;
        let probs = softmax_rows(&logits, rows, 2);
        Ok((0..rows).map(|r| probs[r * 2 + 1]).collect())
    }
}
