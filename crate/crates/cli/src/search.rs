//! Grid search over the configuration space.
//!
//! The space covers aggregator subsets of size one and two (larger
//! combinations are excluded by default), both merge operators, all four
//! combine choices, and the structural flags. Candidates run an
//! abbreviated k-fold protocol and are ranked by mean harmonic AuPR, ties
//! broken by lower convergence variance, then lower error rate.

use std::fs;
use std::path::Path;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use hagnet_core::graph::Dataset;
use hagnet_core::layers::{AggregatorKind, CombineKind, MergeKind};
use hagnet_core::model::{HagNetConfig, ModelSpec};
use hagnet_core::training::{run_kfold, MetricSummary, TrainOptions};

use crate::{CliError, Result};

/// Candidate configurations. Every generated point satisfies the config
/// invariants by construction.
#[derive(Debug, Clone)]
pub struct SearchSpace {
    pub candidates: Vec<HagNetConfig>,
}

const ALL_KINDS: [AggregatorKind; 4] = [
    AggregatorKind::Max,
    AggregatorKind::Sum,
    AggregatorKind::Mean,
    AggregatorKind::Att,
];

fn kind_subsets() -> Vec<Vec<AggregatorKind>> {
    let mut subsets: Vec<Vec<AggregatorKind>> = ALL_KINDS.iter().map(|&k| vec![k]).collect();
    for i in 0..ALL_KINDS.len() {
        for j in i + 1..ALL_KINDS.len() {
            subsets.push(vec![ALL_KINDS[i], ALL_KINDS[j]]);
        }
    }
    subsets
}

impl SearchSpace {
    /// The default space at the given widths and depth.
    pub fn full(vocab_size: usize, embed_dim: usize, hidden_dim: usize, num_agg_layers: usize) -> Self {
        let mut candidates = Vec::new();
        let structures = [(false, false), (true, false), (true, true)];
        for agg_kinds in kind_subsets() {
            let agg_merges: &[MergeKind] = if agg_kinds.len() == 1 {
                &[MergeKind::Sum]
            } else {
                &[MergeKind::Cat, MergeKind::Sum]
            };
            for &agg_merge in agg_merges {
                for combine in [CombineKind::Sum, CombineKind::Max, CombineKind::Cat, CombineKind::Rnn] {
                    for readout_kinds in kind_subsets() {
                        let ro_merges: &[Option<MergeKind>] = if readout_kinds.len() == 1 {
                            &[None]
                        } else {
                            &[Some(MergeKind::Cat), Some(MergeKind::Sum)]
                        };
                        for &readout_merge in ro_merges {
                            for &(pyramid, readout_tied) in &structures {
                                for dense_connections in [false, true] {
                                    candidates.push(HagNetConfig {
                                        num_agg_layers,
                                        agg_kinds: agg_kinds.clone(),
                                        agg_merge,
                                        combine,
                                        readout_kinds: readout_kinds.clone(),
                                        readout_merge,
                                        pyramid,
                                        readout_tied,
                                        dense_connections,
                                        embed_dim,
                                        hidden_dim,
                                        vocab_size,
                                        att_heads: 1,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        Self { candidates }
    }

    pub fn from_configs(candidates: Vec<HagNetConfig>) -> Self {
        Self { candidates }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchResult {
    pub rank: usize,
    pub aupr_harmonic: MetricSummary,
    pub error_rate: MetricSummary,
    pub mstd_error_rate: MetricSummary,
    pub config: HagNetConfig,
}

/// Trains up to `budget` uniformly sampled candidates (the whole space if
/// it fits) and returns them ranked.
pub fn run_search(
    dataset: &Dataset,
    space: &SearchSpace,
    budget: usize,
    opts: &TrainOptions,
) -> Result<Vec<SearchResult>> {
    if budget == 0 {
        return Err(CliError::validation("search budget must be >= 1"));
    }
    if space.is_empty() {
        return Err(CliError::validation("search space is empty"));
    }
    let selected: Vec<&HagNetConfig> = if budget >= space.len() {
        space.candidates.iter().collect()
    } else {
        let mut order: Vec<usize> = (0..space.len()).collect();
        let mut rng = StdRng::seed_from_u64(opts.seed ^ 0x5ea2c4);
        order.shuffle(&mut rng);
        order.truncate(budget);
        order.sort_unstable();
        order.iter().map(|&i| &space.candidates[i]).collect()
    };

    let outcomes: Vec<std::result::Result<(usize, MetricSummary, MetricSummary, MetricSummary), String>> =
        selected
            .par_iter()
            .enumerate()
            .map(|(i, config)| {
                let spec = ModelSpec::HagNet((*config).clone());
                run_kfold(dataset, &spec, opts)
                    .map(|report| {
                        (
                            i,
                            report.summary.aupr_harmonic,
                            report.summary.error_rate,
                            report.summary.mstd_error_rate,
                        )
                    })
                    .map_err(|e| format!("candidate {i}: {e}"))
            })
            .collect();

    let mut scored = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        let (i, aupr, er, mstd) = outcome.map_err(CliError::runtime)?;
        scored.push((i, aupr, er, mstd));
    }
    // Best AuPR first; ties broken by lower mstd, then lower ER, then the
    // candidate's position for full determinism.
    scored.sort_by(|a, b| {
        b.1.mean
            .partial_cmp(&a.1.mean)
            .unwrap()
            .then(a.3.mean.partial_cmp(&b.3.mean).unwrap())
            .then(a.2.mean.partial_cmp(&b.2.mean).unwrap())
            .then(a.0.cmp(&b.0))
    });
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(rank, (i, aupr, er, mstd))| SearchResult {
            rank: rank + 1,
            aupr_harmonic: aupr,
            error_rate: er,
            mstd_error_rate: mstd,
            config: selected[i].clone(),
        })
        .collect())
}

fn csv_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

pub fn write_ranked_csv(results: &[SearchResult], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from(
        "rank,aupr_harmonic_mean,aupr_harmonic_std,mstd_er_mean,error_rate_mean,error_rate_std,config\n",
    );
    for r in results {
        let config_json = serde_json::to_string(&r.config)?;
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.rank,
            r.aupr_harmonic.mean,
            r.aupr_harmonic.std,
            r.mstd_error_rate.mean,
            r.error_rate.mean,
            r.error_rate.std,
            csv_quote(&config_json)
        ));
    }
    fs::write(path, out)?;
    Ok(())
}
