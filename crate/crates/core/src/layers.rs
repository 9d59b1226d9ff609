//! Aggregation kernels and layer types.
//!
//! A layer updates node features from a permutation-invariant summary of
//! each node's neighborhood; a readout pools node features per graph. The
//! heterogeneous variants run several distinct aggregation operators over
//! the same neighborhood (or graph), transform each branch, merge them, and
//! combine with the center features.
//!
//! All segment kernels consume edges in canonical order (sorted by
//! destination, then source), so sums accumulate identically no matter how
//! the caller ordered the edge list.

use std::borrow::Cow;

use rand::rngs::StdRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::EdgeList;
use crate::tensor::{BnBuffers, BnId, Forward, Init, ParamId, ParamSet, Result as TensorResult, ValueId};

#[derive(Debug, Error)]
pub enum LayerError {
    #[error("attention width {dim} is not divisible by {heads} heads")]
    BadHeadCount { dim: usize, heads: usize },
    #[error("merge `sum` needs equal branch widths, got {0:?}")]
    MergeWidthMismatch(Vec<usize>),
    #[error("layer needs at least one aggregator")]
    NoAggregators,
}

/// Neighborhood / readout aggregation operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregatorKind {
    Max,
    Sum,
    Mean,
    Att,
}

/// How parallel aggregation branches are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeKind {
    Cat,
    Sum,
}

/// How the merged neighborhood summary is combined with the center features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineKind {
    Sum,
    Max,
    Cat,
    Rnn,
}

// ── Parameter bundles ─────────────────────────────────────────────────────

/// Dense layer handles: `y = x W + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut StdRng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Self {
        let w = ps.alloc(format!("{name}.weight"), &[in_dim, out_dim], Init::GlorotUniform, rng);
        let b = bias.then(|| ps.alloc(format!("{name}.bias"), &[out_dim], Init::Zeros, rng));
        Self { w, b, in_dim, out_dim }
    }

    pub fn forward(&self, fw: &mut Forward, x: ValueId) -> TensorResult<ValueId> {
        let w = fw.param(self.w);
        let y = fw.tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = fw.param(b);
                fw.tape.add(y, b)
            }
            None => Ok(y),
        }
    }
}

/// One-hidden-layer MLP with relu and trailing batch normalization, the
/// transform used for every branch and post-combine map.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub lin1: Linear,
    pub lin2: Linear,
    pub bn_gamma: ParamId,
    pub bn_beta: ParamId,
    pub bn: BnId,
    pub out_dim: usize,
}

impl Mlp {
    pub fn new(
        ps: &mut ParamSet,
        bufs: &mut BnBuffers,
        rng: &mut StdRng,
        name: &str,
        in_dim: usize,
        hidden_dim: usize,
        out_dim: usize,
    ) -> Self {
        let lin1 = Linear::new(ps, rng, &format!("{name}.lin1"), in_dim, hidden_dim, true);
        let lin2 = Linear::new(ps, rng, &format!("{name}.lin2"), hidden_dim, out_dim, true);
        let bn_gamma = ps.alloc(format!("{name}.bn.gamma"), &[out_dim], Init::Ones, rng);
        let bn_beta = ps.alloc(format!("{name}.bn.beta"), &[out_dim], Init::Zeros, rng);
        let bn = bufs.alloc(out_dim);
        Self { lin1, lin2, bn_gamma, bn_beta, bn, out_dim }
    }

    pub fn forward(&self, fw: &mut Forward, x: ValueId) -> TensorResult<ValueId> {
        let h = self.lin1.forward(fw, x)?;
        let h = fw.tape.relu(h);
        let h = self.lin2.forward(fw, h)?;
        fw.batch_norm(h, self.bn_gamma, self.bn_beta, self.bn)
    }
}

/// Gated recurrent cell used by the `rnn` combine: the merged neighborhood
/// aggregate plays the hidden state, the center features the input.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub w_ir: ParamId,
    pub w_hr: ParamId,
    pub b_r: ParamId,
    pub w_iz: ParamId,
    pub w_hz: ParamId,
    pub b_z: ParamId,
    pub w_in: ParamId,
    pub b_in: ParamId,
    pub w_hn: ParamId,
    pub b_hn: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut StdRng,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
    ) -> Self {
        let mat = |ps: &mut ParamSet, rng: &mut StdRng, suffix: &str, rows: usize| {
            ps.alloc(format!("{name}.{suffix}"), &[rows, hidden_dim], Init::GlorotUniform, rng)
        };
        let w_ir = mat(ps, rng, "w_ir", input_dim);
        let w_hr = mat(ps, rng, "w_hr", hidden_dim);
        let b_r = ps.alloc(format!("{name}.b_r"), &[hidden_dim], Init::Zeros, rng);
        let w_iz = mat(ps, rng, "w_iz", input_dim);
        let w_hz = mat(ps, rng, "w_hz", hidden_dim);
        let b_z = ps.alloc(format!("{name}.b_z"), &[hidden_dim], Init::Zeros, rng);
        let w_in = mat(ps, rng, "w_in", input_dim);
        let b_in = ps.alloc(format!("{name}.b_in"), &[hidden_dim], Init::Zeros, rng);
        let w_hn = mat(ps, rng, "w_hn", hidden_dim);
        let b_hn = ps.alloc(format!("{name}.b_hn"), &[hidden_dim], Init::Zeros, rng);
        Self { w_ir, w_hr, b_r, w_iz, w_hz, b_z, w_in, b_in, w_hn, b_hn, input_dim, hidden_dim }
    }

    /// One step: reset gate r, update gate z, candidate n, output
    /// `(1 - z) * n + z * h`.
    pub fn forward(&self, fw: &mut Forward, x: ValueId, h: ValueId) -> TensorResult<ValueId> {
        let gate = |fw: &mut Forward, wi: ParamId, wh: ParamId, b: ParamId, x: ValueId, h: ValueId| -> TensorResult<ValueId> {
            let wi = fw.param(wi);
            let wh = fw.param(wh);
            let b = fw.param(b);
            let xi = fw.tape.matmul(x, wi)?;
            let hh = fw.tape.matmul(h, wh)?;
            let s = fw.tape.add(xi, hh)?;
            fw.tape.add(s, b)
        };
        let r_pre = gate(fw, self.w_ir, self.w_hr, self.b_r, x, h)?;
        let r = fw.tape.sigmoid(r_pre);
        let z_pre = gate(fw, self.w_iz, self.w_hz, self.b_z, x, h)?;
        let z = fw.tape.sigmoid(z_pre);

        let w_in = fw.param(self.w_in);
        let b_in = fw.param(self.b_in);
        let w_hn = fw.param(self.w_hn);
        let b_hn = fw.param(self.b_hn);
        let xi = fw.tape.matmul(x, w_in)?;
        let xi = fw.tape.add(xi, b_in)?;
        let hh = fw.tape.matmul(h, w_hn)?;
        let hh = fw.tape.add(hh, b_hn)?;
        let gated = fw.tape.mul(r, hh)?;
        let n_pre = fw.tape.add(xi, gated)?;
        let n = fw.tape.tanh(n_pre);

        let rows = fw.tape.shape(z)[0];
        let cols = self.hidden_dim;
        let ones = fw.tape.constant(vec![1.0; rows * cols], &[rows, cols])?;
        let one_minus_z = fw.tape.sub(ones, z)?;
        let a = fw.tape.mul(one_minus_z, n)?;
        let b = fw.tape.mul(z, h)?;
        fw.tape.add(a, b)
    }
}

/// Where attention queries come from: the center node's features (layers) or
/// a learned per-head query vector (readout, where there is no center).
#[derive(Debug, Clone)]
pub enum QuerySource {
    Center(ParamId),
    Learned(ParamId),
}

/// Scaled dot-product attention over a neighborhood or graph segment,
/// heads concatenated and projected back to the input width.
#[derive(Debug, Clone)]
pub struct Attention {
    pub query: QuerySource,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub heads: usize,
    pub dim: usize,
}

impl Attention {
    pub fn for_edges(
        ps: &mut ParamSet,
        rng: &mut StdRng,
        name: &str,
        dim: usize,
        heads: usize,
    ) -> std::result::Result<Self, LayerError> {
        if heads == 0 || dim % heads != 0 {
            return Err(LayerError::BadHeadCount { dim, heads });
        }
        Ok(Self {
            query: QuerySource::Center(ps.alloc(
                format!("{name}.wq"),
                &[dim, dim],
                Init::GlorotUniform,
                rng,
            )),
            wk: ps.alloc(format!("{name}.wk"), &[dim, dim], Init::GlorotUniform, rng),
            wv: ps.alloc(format!("{name}.wv"), &[dim, dim], Init::GlorotUniform, rng),
            wo: ps.alloc(format!("{name}.wo"), &[dim, dim], Init::GlorotUniform, rng),
            heads,
            dim,
        })
    }

    pub fn for_readout(
        ps: &mut ParamSet,
        rng: &mut StdRng,
        name: &str,
        dim: usize,
        heads: usize,
    ) -> std::result::Result<Self, LayerError> {
        if heads == 0 || dim % heads != 0 {
            return Err(LayerError::BadHeadCount { dim, heads });
        }
        Ok(Self {
            query: QuerySource::Learned(ps.alloc(
                format!("{name}.query"),
                &[1, dim],
                Init::Normal(0.1),
                rng,
            )),
            wk: ps.alloc(format!("{name}.wk"), &[dim, dim], Init::GlorotUniform, rng),
            wv: ps.alloc(format!("{name}.wv"), &[dim, dim], Init::GlorotUniform, rng),
            wo: ps.alloc(format!("{name}.wo"), &[dim, dim], Init::GlorotUniform, rng),
            heads,
            dim,
        })
    }

    /// Softmax weights per (edge, head); exposed so tests can assert they
    /// sum to one within each neighborhood.
    pub fn weights_for_edges(
        &self,
        fw: &mut Forward,
        feats: ValueId,
        center_feats: ValueId,
        edges: &EdgeList,
    ) -> TensorResult<ValueId> {
        let wk = fw.param(self.wk);
        let k = fw.tape.matmul(feats, wk)?;
        let q = match &self.query {
            QuerySource::Center(wq) => {
                let wq = fw.param(*wq);
                fw.tape.matmul(center_feats, wq)?
            }
            QuerySource::Learned(qp) => fw.param(*qp),
        };
        let qe = fw.tape.gather_rows(q, &edges.dst)?;
        let ke = fw.tape.gather_rows(k, &edges.src)?;
        let scores = fw.tape.rowwise_dot_heads(qe, ke, self.heads)?;
        let scores = fw.tape.scale(scores, 1.0 / ((self.dim / self.heads) as f64).sqrt());
        fw.tape.segment_softmax(scores, &edges.dst)
    }

    fn forward_edges(
        &self,
        fw: &mut Forward,
        feats: ValueId,
        center_feats: ValueId,
        edges: &EdgeList,
        num_nodes: usize,
    ) -> TensorResult<ValueId> {
        let alpha = self.weights_for_edges(fw, feats, center_feats, edges)?;
        let wv = fw.param(self.wv);
        let v = fw.tape.matmul(feats, wv)?;
        let ve = fw.tape.gather_rows(v, &edges.src)?;
        let weighted = fw.tape.mul_head_scale(ve, alpha, self.heads)?;
        let agg = fw.tape.scatter_add_rows(weighted, &edges.dst, num_nodes)?;
        let wo = fw.param(self.wo);
        fw.tape.matmul(agg, wo)
    }

    fn forward_segments(
        &self,
        fw: &mut Forward,
        feats: ValueId,
        seg: &[usize],
        num_segments: usize,
    ) -> TensorResult<ValueId> {
        let wk = fw.param(self.wk);
        let k = fw.tape.matmul(feats, wk)?;
        let q = match &self.query {
            QuerySource::Learned(qp) => fw.param(*qp),
            QuerySource::Center(wq) => {
                // No center exists for a whole-graph pool; project features
                // through wq and use each node as its own query.
                let wq = fw.param(*wq);
                fw.tape.matmul(feats, wq)?
            }
        };
        let rows = seg.len();
        let qe = if matches!(self.query, QuerySource::Learned(_)) {
            fw.tape.gather_rows(q, &vec![0usize; rows])?
        } else {
            q
        };
        let scores = fw.tape.rowwise_dot_heads(qe, k, self.heads)?;
        let scores = fw.tape.scale(scores, 1.0 / ((self.dim / self.heads) as f64).sqrt());
        let alpha = fw.tape.segment_softmax(scores, seg)?;
        let wv = fw.param(self.wv);
        let v = fw.tape.matmul(feats, wv)?;
        let weighted = fw.tape.mul_head_scale(v, alpha, self.heads)?;
        let agg = fw.tape.scatter_add_rows(weighted, seg, num_segments)?;
        let wo = fw.param(self.wo);
        fw.tape.matmul(agg, wo)
    }
}

/// A concrete aggregation operator: the stateless kinds, or attention with
/// its projections.
#[derive(Debug, Clone)]
pub enum Aggregator {
    Max,
    Sum,
    Mean,
    Att(Attention),
}

impl Aggregator {
    pub fn kind(&self) -> AggregatorKind {
        match self {
            Self::Max => AggregatorKind::Max,
            Self::Sum => AggregatorKind::Sum,
            Self::Mean => AggregatorKind::Mean,
            Self::Att(_) => AggregatorKind::Att,
        }
    }
}

fn is_canonical(edges: &EdgeList) -> bool {
    (1..edges.len()).all(|i| {
        (edges.dst[i - 1], edges.src[i - 1]) <= (edges.dst[i], edges.src[i])
    })
}

fn canonical_edges(edges: &EdgeList) -> Cow<'_, EdgeList> {
    if is_canonical(edges) {
        Cow::Borrowed(edges)
    } else {
        let pairs: Vec<(usize, usize)> = edges.src.iter().copied().zip(edges.dst.iter().copied()).collect();
        Cow::Owned(EdgeList::from_pairs(pairs))
    }
}

fn mean_factors(dst: &[usize], num_nodes: usize) -> Vec<f64> {
    let mut deg = vec![0usize; num_nodes];
    for &d in dst {
        deg[d] += 1;
    }
    deg.iter()
        .map(|&d| if d == 0 { 0.0 } else { 1.0 / d as f64 })
        .collect()
}

/// Neighborhood aggregation: row `v` of the output summarizes
/// `{feats[u] : u -> v}`. Isolated nodes get a zero row under every kind.
pub fn aggregate(
    fw: &mut Forward,
    agg: &Aggregator,
    feats: ValueId,
    edges: &EdgeList,
    center_feats: ValueId,
    num_nodes: usize,
) -> TensorResult<ValueId> {
    let edges = canonical_edges(edges);
    match agg {
        Aggregator::Sum => {
            let msgs = fw.tape.gather_rows(feats, &edges.src)?;
            fw.tape.scatter_add_rows(msgs, &edges.dst, num_nodes)
        }
        Aggregator::Max => {
            let msgs = fw.tape.gather_rows(feats, &edges.src)?;
            fw.tape.segment_max_rows(msgs, &edges.dst, num_nodes)
        }
        Aggregator::Mean => {
            let msgs = fw.tape.gather_rows(feats, &edges.src)?;
            let sums = fw.tape.scatter_add_rows(msgs, &edges.dst, num_nodes)?;
            let factors = mean_factors(&edges.dst, num_nodes);
            fw.tape.row_scale(sums, factors)
        }
        Aggregator::Att(att) => att.forward_edges(fw, feats, center_feats, &edges, num_nodes),
    }
}

/// Whole-graph aggregation over node segments (`seg` must be sorted, as
/// `node_to_graph` always is).
pub fn aggregate_segments(
    fw: &mut Forward,
    agg: &Aggregator,
    feats: ValueId,
    seg: &[usize],
    num_segments: usize,
) -> TensorResult<ValueId> {
    match agg {
        Aggregator::Sum => fw.tape.scatter_add_rows(feats, seg, num_segments),
        Aggregator::Max => fw.tape.segment_max_rows(feats, seg, num_segments),
        Aggregator::Mean => {
            let sums = fw.tape.scatter_add_rows(feats, seg, num_segments)?;
            let factors = mean_factors(seg, num_segments);
            fw.tape.row_scale(sums, factors)
        }
        Aggregator::Att(att) => att.forward_segments(fw, feats, seg, num_segments),
    }
}

// ── Heterogeneous aggregation layer ───────────────────────────────────────

/// Combine stage with its parameters.
#[derive(Debug, Clone)]
pub enum Combine {
    /// `(1 + eps) * center + merged`, with a width-matching projection on the
    /// center path when the widths differ. `eps` defaults to 0.
    Sum { center_eps: f64, center_proj: Option<Linear> },
    Max { center_proj: Option<Linear> },
    Cat,
    Rnn(GruCell),
}

impl Combine {
    pub fn kind(&self) -> CombineKind {
        match self {
            Self::Sum { .. } => CombineKind::Sum,
            Self::Max { .. } => CombineKind::Max,
            Self::Cat => CombineKind::Cat,
            Self::Rnn(_) => CombineKind::Rnn,
        }
    }

    fn output_dim(&self, center_dim: usize, merged_dim: usize) -> usize {
        match self {
            Self::Sum { .. } | Self::Max { .. } | Self::Rnn(_) => merged_dim,
            Self::Cat => center_dim + merged_dim,
        }
    }
}

/// One heterogeneous aggregation layer: per-branch aggregate + transform,
/// merge, combine with center, post-transform.
#[derive(Debug, Clone)]
pub struct HeteroLayer {
    pub aggregators: Vec<Aggregator>,
    pub phi: Vec<Option<Mlp>>,
    pub merge: MergeKind,
    pub combine: Combine,
    pub psi: Option<Mlp>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl HeteroLayer {
    /// Production constructor: every branch gets its own transform, the
    /// combine stage gets whatever parameters its kind needs, and the
    /// post-transform maps back to `hidden_dim`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        bufs: &mut BnBuffers,
        rng: &mut StdRng,
        name: &str,
        in_dim: usize,
        hidden_dim: usize,
        kinds: &[AggregatorKind],
        merge: MergeKind,
        combine: CombineKind,
        att_heads: usize,
    ) -> std::result::Result<Self, LayerError> {
        if kinds.is_empty() {
            return Err(LayerError::NoAggregators);
        }
        let mut aggregators = Vec::with_capacity(kinds.len());
        let mut phi = Vec::with_capacity(kinds.len());
        for (i, kind) in kinds.iter().enumerate() {
            aggregators.push(match kind {
                AggregatorKind::Max => Aggregator::Max,
                AggregatorKind::Sum => Aggregator::Sum,
                AggregatorKind::Mean => Aggregator::Mean,
                AggregatorKind::Att => Aggregator::Att(Attention::for_edges(
                    ps,
                    rng,
                    &format!("{name}.att{i}"),
                    in_dim,
                    att_heads,
                )?),
            });
            phi.push(Some(Mlp::new(
                ps,
                bufs,
                rng,
                &format!("{name}.phi{i}"),
                in_dim,
                hidden_dim,
                hidden_dim,
            )));
        }
        let merged_dim = match merge {
            MergeKind::Cat => hidden_dim * kinds.len(),
            MergeKind::Sum => hidden_dim,
        };
        let combine = match combine {
            CombineKind::Sum => Combine::Sum {
                center_eps: 0.0,
                center_proj: (in_dim != merged_dim).then(|| {
                    Linear::new(ps, rng, &format!("{name}.center_proj"), in_dim, merged_dim, false)
                }),
            },
            CombineKind::Max => Combine::Max {
                center_proj: (in_dim != merged_dim).then(|| {
                    Linear::new(ps, rng, &format!("{name}.center_proj"), in_dim, merged_dim, false)
                }),
            },
            CombineKind::Cat => Combine::Cat,
            CombineKind::Rnn => {
                Combine::Rnn(GruCell::new(ps, rng, &format!("{name}.gru"), in_dim, merged_dim))
            }
        };
        let combine_out = combine.output_dim(in_dim, merged_dim);
        let psi = Some(Mlp::new(ps, bufs, rng, &format!("{name}.psi"), combine_out, hidden_dim, hidden_dim));
        Ok(Self {
            aggregators,
            phi,
            merge,
            combine,
            psi,
            in_dim,
            out_dim: hidden_dim,
        })
    }

    /// Assembles a layer from explicit parts. Used by tests and the GIN
    /// specialization; validates the sum-merge width rule.
    pub fn from_parts(
        aggregators: Vec<Aggregator>,
        phi: Vec<Option<Mlp>>,
        merge: MergeKind,
        combine: Combine,
        psi: Option<Mlp>,
        in_dim: usize,
    ) -> std::result::Result<Self, LayerError> {
        if aggregators.is_empty() {
            return Err(LayerError::NoAggregators);
        }
        let widths: Vec<usize> = phi
            .iter()
            .map(|p| p.as_ref().map_or(in_dim, |m| m.out_dim))
            .collect();
        if merge == MergeKind::Sum && widths.windows(2).any(|w| w[0] != w[1]) {
            return Err(LayerError::MergeWidthMismatch(widths));
        }
        let merged_dim = match merge {
            MergeKind::Cat => widths.iter().sum(),
            MergeKind::Sum => widths[0],
        };
        let combine_out = combine.output_dim(in_dim, merged_dim);
        let out_dim = psi.as_ref().map_or(combine_out, |m| m.out_dim);
        Ok(Self { aggregators, phi, merge, combine, psi, in_dim, out_dim })
    }

    pub fn forward(
        &self,
        fw: &mut Forward,
        feats: ValueId,
        edges: &EdgeList,
        num_nodes: usize,
    ) -> TensorResult<ValueId> {
        let mut branches = Vec::with_capacity(self.aggregators.len());
        for (agg, phi) in self.aggregators.iter().zip(&self.phi) {
            let a = aggregate(fw, agg, feats, edges, feats, num_nodes)?;
            branches.push(match phi {
                Some(mlp) => mlp.forward(fw, a)?,
                None => a,
            });
        }
        let merged = merge_branches(fw, self.merge, &branches)?;
        let combined = match &self.combine {
            Combine::Sum { center_eps, center_proj } => {
                let mut center = feats;
                if let Some(proj) = center_proj {
                    center = proj.forward(fw, center)?;
                }
                if *center_eps != 0.0 {
                    center = fw.tape.scale(center, 1.0 + center_eps);
                }
                fw.tape.add(center, merged)?
            }
            Combine::Max { center_proj } => {
                let mut center = feats;
                if let Some(proj) = center_proj {
                    center = proj.forward(fw, center)?;
                }
                fw.tape.max2(center, merged)?
            }
            Combine::Cat => fw.tape.concat(&[feats, merged], 1)?,
            Combine::Rnn(gru) => gru.forward(fw, feats, merged)?,
        };
        match &self.psi {
            Some(mlp) => mlp.forward(fw, combined),
            None => Ok(combined),
        }
    }
}

fn merge_branches(fw: &mut Forward, merge: MergeKind, branches: &[ValueId]) -> TensorResult<ValueId> {
    match merge {
        MergeKind::Cat => fw.tape.concat(branches, 1),
        MergeKind::Sum => {
            let mut acc = branches[0];
            for &b in &branches[1..] {
                acc = fw.tape.add(acc, b)?;
            }
            Ok(acc)
        }
    }
}

// ── Heterogeneous readout ─────────────────────────────────────────────────

/// Whole-graph pooling with heterogeneous aggregations: per-branch segment
/// aggregate + transform, merge, post-transform.
#[derive(Debug, Clone)]
pub struct HeteroReadout {
    pub aggregators: Vec<Aggregator>,
    pub phi: Vec<Option<Mlp>>,
    pub merge: MergeKind,
    pub psi: Option<Mlp>,
    pub out_dim: usize,
}

impl HeteroReadout {
    pub fn new(
        ps: &mut ParamSet,
        bufs: &mut BnBuffers,
        rng: &mut StdRng,
        name: &str,
        dim: usize,
        kinds: &[AggregatorKind],
        merge: MergeKind,
        att_heads: usize,
    ) -> std::result::Result<Self, LayerError> {
        if kinds.is_empty() {
            return Err(LayerError::NoAggregators);
        }
        let mut aggregators = Vec::with_capacity(kinds.len());
        let mut phi = Vec::with_capacity(kinds.len());
        for (i, kind) in kinds.iter().enumerate() {
            aggregators.push(match kind {
                AggregatorKind::Max => Aggregator::Max,
                AggregatorKind::Sum => Aggregator::Sum,
                AggregatorKind::Mean => Aggregator::Mean,
                AggregatorKind::Att => Aggregator::Att(Attention::for_readout(
                    ps,
                    rng,
                    &format!("{name}.att{i}"),
                    dim,
                    att_heads,
                )?),
            });
            phi.push(Some(Mlp::new(ps, bufs, rng, &format!("{name}.phi{i}"), dim, dim, dim)));
        }
        let psi_in = match merge {
            MergeKind::Cat => dim * kinds.len(),
            MergeKind::Sum => dim,
        };
        let psi = Some(Mlp::new(ps, bufs, rng, &format!("{name}.psi"), psi_in, dim, dim));
        Ok(Self { aggregators, phi, merge, psi, out_dim: dim })
    }

    pub fn from_parts(
        aggregators: Vec<Aggregator>,
        phi: Vec<Option<Mlp>>,
        merge: MergeKind,
        psi: Option<Mlp>,
        dim: usize,
    ) -> std::result::Result<Self, LayerError> {
        if aggregators.is_empty() {
            return Err(LayerError::NoAggregators);
        }
        let widths: Vec<usize> = phi
            .iter()
            .map(|p| p.as_ref().map_or(dim, |m| m.out_dim))
            .collect();
        if merge == MergeKind::Sum && widths.windows(2).any(|w| w[0] != w[1]) {
            return Err(LayerError::MergeWidthMismatch(widths));
        }
        let merged: usize = match merge {
            MergeKind::Cat => widths.iter().sum(),
            MergeKind::Sum => widths[0],
        };
        let out_dim = psi.as_ref().map_or(merged, |m| m.out_dim);
        Ok(Self { aggregators, phi, merge, psi, out_dim })
    }

    pub fn forward(
        &self,
        fw: &mut Forward,
        feats: ValueId,
        node_to_graph: &[usize],
        num_graphs: usize,
    ) -> TensorResult<ValueId> {
        let mut branches = Vec::with_capacity(self.aggregators.len());
        for (agg, phi) in self.aggregators.iter().zip(&self.phi) {
            let a = aggregate_segments(fw, agg, feats, node_to_graph, num_graphs)?;
            branches.push(match phi {
                Some(mlp) => mlp.forward(fw, a)?,
                None => a,
            });
        }
        let merged = merge_branches(fw, self.merge, &branches)?;
        match &self.psi {
            Some(mlp) => mlp.forward(fw, merged),
            None => Ok(merged),
        }
    }
}

// ── Baseline layers ───────────────────────────────────────────────────────

/// Graph isomorphism layer: `mlp((1 + eps) * h_v + sum of neighbors)`.
#[derive(Debug, Clone)]
pub struct GinLayer {
    pub eps: f64,
    pub mlp: Option<Mlp>,
}

impl GinLayer {
    pub fn new(
        ps: &mut ParamSet,
        bufs: &mut BnBuffers,
        rng: &mut StdRng,
        name: &str,
        in_dim: usize,
        hidden_dim: usize,
        eps: f64,
    ) -> Self {
        Self {
            eps,
            mlp: Some(Mlp::new(ps, bufs, rng, name, in_dim, hidden_dim, hidden_dim)),
        }
    }

    pub fn forward(
        &self,
        fw: &mut Forward,
        feats: ValueId,
        edges: &EdgeList,
        num_nodes: usize,
    ) -> TensorResult<ValueId> {
        let neigh = aggregate(fw, &Aggregator::Sum, feats, edges, feats, num_nodes)?;
        let center = if self.eps != 0.0 {
            fw.tape.scale(feats, 1.0 + self.eps)
        } else {
            feats
        };
        let pre = fw.tape.add(center, neigh)?;
        match &self.mlp {
            Some(mlp) => mlp.forward(fw, pre),
            None => Ok(pre),
        }
    }
}

/// GraphSAGE layer: `phi1(h_v) + phi2(mean of neighbors)`.
#[derive(Debug, Clone)]
pub struct SageLayer {
    pub lin_self: Option<Linear>,
    pub lin_neigh: Option<Linear>,
}

impl SageLayer {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut StdRng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        Self {
            lin_self: Some(Linear::new(ps, rng, &format!("{name}.lin_self"), in_dim, out_dim, true)),
            lin_neigh: Some(Linear::new(ps, rng, &format!("{name}.lin_neigh"), in_dim, out_dim, true)),
        }
    }

    pub fn forward(
        &self,
        fw: &mut Forward,
        feats: ValueId,
        edges: &EdgeList,
        num_nodes: usize,
    ) -> TensorResult<ValueId> {
        let mean = aggregate(fw, &Aggregator::Mean, feats, edges, feats, num_nodes)?;
        let own = match &self.lin_self {
            Some(l) => l.forward(fw, feats)?,
            None => feats,
        };
        let neigh = match &self.lin_neigh {
            Some(l) => l.forward(fw, mean)?,
            None => mean,
        };
        fw.tape.add(own, neigh)
    }
}
