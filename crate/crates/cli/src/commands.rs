//! Implementations behind the subcommands. The binary is a thin wrapper;
//! integration tests call these directly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hagnet_core::graph::{load_dataset, save_dataset, synthetic_label_oracle, SyntheticTask};
use hagnet_core::model::{BaselineConfig, BaselineKind, HagNetConfig, ModelSpec};
use hagnet_core::training::{
    evaluate, run_kfold_with_models, EvalMetrics, KfoldReport, KfoldSummary, OptimizerKind,
    TrainOptions,
};
use hagnet_core::metrics::ScoredPredictions;

use crate::args::{EvalArgs, GenerateArgs, ReportArgs, SearchArgs, TrainArgs};
use crate::manifest::{self, HashedFile, RunManifest};
use crate::report::{build_report, ReportRow};
use crate::search::{run_search, write_ranked_csv, SearchResult, SearchSpace};
use crate::{checkpoint, CliError, Result};

/// One fold's headline numbers plus the raw predictions they derive from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldDoc {
    pub fold: usize,
    pub seed: u64,
    pub error_rate: f64,
    pub accuracy: f64,
    pub auroc: f64,
    pub aupr_harmonic: f64,
    pub mstd_error_rate: f64,
    pub predictions: ScoredPredictions,
}

/// The `metrics.json` document. Deliberately timestamp-free so identical
/// runs serialize to identical bytes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsDoc {
    pub model: String,
    pub spec: ModelSpec,
    pub options: TrainOptions,
    pub dataset_sha256: String,
    pub folds: Vec<FoldDoc>,
    pub summary: KfoldSummary,
}

#[derive(Debug)]
pub struct TrainOutputs {
    pub out_dir: PathBuf,
    pub manifest_path: PathBuf,
    pub metrics_path: PathBuf,
    pub curve_paths: Vec<PathBuf>,
    pub checkpoint_paths: Vec<PathBuf>,
    pub report: KfoldReport,
    pub spec: ModelSpec,
    pub run_name: String,
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<PathBuf> {
    let task: SyntheticTask = args.task.parse()?;
    let dataset = hagnet_core::graph::generate_synthetic(task, args.n, args.seed)?;
    for g in &dataset.graphs {
        if g.label != synthetic_label_oracle(task, g) {
            return Err(CliError::runtime(format!(
                "label re-verification failed for a generated {task} graph"
            )));
        }
    }
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    save_dataset(&dataset, &args.out)?;
    let counts = dataset.class_counts();
    println!(
        "wrote {} graphs to {} (task {task}, class balance {} neg / {} pos, P ratio {:.3})",
        dataset.len(),
        args.out.display(),
        counts[0],
        counts[1],
        counts[1] as f64 / dataset.len() as f64
    );
    Ok(args.out.clone())
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind> {
    match s {
        "sgd" => Ok(OptimizerKind::Sgd),
        "adam" => Ok(OptimizerKind::Adam),
        other => Err(CliError::validation(format!(
            "unknown optimizer `{other}` (expected `sgd` or `adam`)"
        ))),
    }
}

fn resolve_spec(args: &TrainArgs, dataset_vocab: usize) -> Result<ModelSpec> {
    match (&args.config, &args.baseline) {
        (Some(path), None) => {
            let text = fs::read_to_string(path).map_err(|e| {
                CliError::validation(format!("cannot read config {}: {e}", path.display()))
            })?;
            let config: HagNetConfig = serde_json::from_str(&text).map_err(|e| {
                CliError::validation(format!("invalid config {}: {e}", path.display()))
            })?;
            let violations = config.violations();
            if !violations.is_empty() {
                return Err(CliError::validation(format!(
                    "config {} violates:\n  - {}",
                    path.display(),
                    violations.join("\n  - ")
                )));
            }
            if dataset_vocab > config.vocab_size {
                return Err(CliError::validation(format!(
                    "dataset vocabulary size {} exceeds config vocab_size {}",
                    dataset_vocab, config.vocab_size
                )));
            }
            Ok(ModelSpec::HagNet(config))
        }
        (None, Some(kind)) => {
            let kind: BaselineKind = kind.parse()?;
            Ok(ModelSpec::Baseline(BaselineConfig {
                kind,
                depth: args.layers,
                embed_dim: args.embed_dim,
                hidden_dim: args.hidden,
                vocab_size: dataset_vocab,
                gin_eps: 0.0,
            }))
        }
        (Some(_), Some(_)) => Err(CliError::validation(
            "--config and --baseline are mutually exclusive",
        )),
        (None, None) => Err(CliError::validation(
            "one of --config or --baseline is required",
        )),
    }
}

fn curve_csv(run: &hagnet_core::training::TrainRun) -> String {
    let mut out = String::from(
        "epoch,train_loss,eval_er,eval_auroc,eval_aupr_harmonic,\
         precision_pos,recall_pos,f1_pos,precision_neg,recall_neg,f1_neg\n",
    );
    for (epoch, (loss, m)) in run.train_loss.iter().zip(&run.eval_history).enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            epoch,
            loss,
            m.error_rate,
            m.auroc,
            m.aupr_harmonic,
            m.prf_positive.precision,
            m.prf_positive.recall,
            m.prf_positive.f1,
            m.prf_negative.precision,
            m.prf_negative.recall,
            m.prf_negative.f1,
        ));
    }
    out
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutputs> {
    let created = manifest::now_ms();
    let dataset = load_dataset(&args.dataset)?;
    let dataset_hash = manifest::sha256_file(&args.dataset)?;
    let spec = resolve_spec(args, dataset.vocab_size)?;
    let opts = TrainOptions {
        epochs: args.epochs,
        batch_size: args.batch_size,
        folds: args.folds,
        seed: args.seed,
        optimizer: args.optimizer.as_deref().map(parse_optimizer).transpose()?,
        learning_rate: args.lr,
    };

    let (report, models) = run_kfold_with_models(&dataset, &spec, &opts)?;

    fs::create_dir_all(&args.out)?;
    let mut curve_paths = Vec::new();
    for run in &report.folds {
        let path = args.out.join(format!("curves_fold{}.csv", run.fold));
        fs::write(&path, curve_csv(run))?;
        curve_paths.push(path);
    }
    let mut checkpoint_paths = Vec::new();
    for (run, model) in report.folds.iter().zip(&models) {
        let path = args.out.join(format!("checkpoint_fold{}.bin", run.fold));
        checkpoint::save(model, run.seed, &path)?;
        checkpoint_paths.push(path);
    }

    let doc = MetricsDoc {
        model: spec.display_name(),
        spec: spec.clone(),
        options: opts,
        dataset_sha256: dataset_hash.clone(),
        folds: report
            .folds
            .iter()
            .map(|r| FoldDoc {
                fold: r.fold,
                seed: r.seed,
                error_rate: r.final_metrics.error_rate,
                accuracy: r.final_metrics.accuracy,
                auroc: r.final_metrics.auroc,
                aupr_harmonic: r.final_metrics.aupr_harmonic,
                mstd_error_rate: r.mstd_error_rate,
                predictions: r.final_predictions.clone(),
            })
            .collect(),
        summary: report.summary,
    };
    let metrics_path = args.out.join("metrics.json");
    fs::write(&metrics_path, serde_json::to_string_pretty(&doc)? + "\n")?;

    let run_name = format!("{}_{}_s{}", spec.display_name(), dataset.name, args.seed);
    let dataset_abs = fs::canonicalize(&args.dataset).unwrap_or_else(|_| args.dataset.clone());
    let mut artifacts: Vec<HashedFile> = Vec::new();
    let rel = |p: &Path| -> String {
        p.file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_else(|| p.display().to_string())
    };
    for p in curve_paths.iter().chain(checkpoint_paths.iter()).chain([&metrics_path]) {
        artifacts.push(HashedFile {
            path: rel(p),
            sha256: manifest::sha256_file(p)?,
        });
    }
    let run_manifest = RunManifest {
        command: "train".to_string(),
        run_name: run_name.clone(),
        created_unix_ms: created,
        finished_unix_ms: manifest::now_ms(),
        seed: args.seed,
        spec: Some(serde_json::to_value(&spec)?),
        dataset: HashedFile {
            path: dataset_abs.display().to_string(),
            sha256: dataset_hash,
        },
        artifacts,
    };
    let manifest_path = args.out.join("manifest.json");
    run_manifest.save(&manifest_path)?;

    println!(
        "trained {} on {} ({} folds x {} epochs): ER {:.4}±{:.4}  AuPR(h) {:.4}±{:.4}  mstd(ER) {:.5}",
        spec.display_name(),
        dataset.name,
        args.folds,
        args.epochs,
        report.summary.error_rate.mean,
        report.summary.error_rate.std,
        report.summary.aupr_harmonic.mean,
        report.summary.aupr_harmonic.std,
        report.summary.mstd_error_rate.mean,
    );
    Ok(TrainOutputs {
        out_dir: args.out.clone(),
        manifest_path,
        metrics_path,
        curve_paths,
        checkpoint_paths,
        report,
        spec,
        run_name,
    })
}

/// The `eval` output document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalDoc {
    pub model: String,
    pub spec: ModelSpec,
    pub checkpoint_seed: u64,
    pub dataset_sha256: String,
    pub metrics: EvalMetrics,
    pub predictions: ScoredPredictions,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalDoc> {
    let (mut model, seed) = checkpoint::load(&args.checkpoint)?;
    let dataset = load_dataset(&args.dataset)?;
    if dataset.vocab_size > model.vocab_size() {
        return Err(CliError::validation(format!(
            "dataset vocabulary size {} exceeds the checkpoint's vocab_size {}",
            dataset.vocab_size,
            model.vocab_size()
        )));
    }
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let (predictions, metrics) = evaluate(&mut model, &dataset, &idx, 256)?;
    let doc = EvalDoc {
        model: model.spec().display_name(),
        spec: model.spec().clone(),
        checkpoint_seed: seed,
        dataset_sha256: manifest::sha256_file(&args.dataset)?,
        metrics,
        predictions,
    };
    let json = serde_json::to_string_pretty(&doc)? + "\n";
    match &args.out {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent)?;
                }
            }
            fs::write(path, json)?;
        }
        None => print!("{json}"),
    }
    Ok(doc)
}

pub fn cmd_search(args: &SearchArgs) -> Result<Vec<SearchResult>> {
    let dataset = load_dataset(&args.dataset)?;
    let space = SearchSpace::full(dataset.vocab_size, args.hidden, args.hidden, args.layers);
    let opts = TrainOptions {
        epochs: args.epochs,
        batch_size: args.batch_size,
        folds: args.folds,
        seed: args.seed,
        optimizer: None,
        learning_rate: None,
    };
    let results = run_search(&dataset, &space, args.budget, &opts)?;
    fs::create_dir_all(&args.out)?;
    let csv_path = args.out.join("search_results.csv");
    write_ranked_csv(&results, &csv_path)?;
    println!(
        "searched {} of {} candidates on {}; ranked results in {}",
        results.len(),
        space.len(),
        dataset.name,
        csv_path.display()
    );
    for r in results.iter().take(5) {
        println!(
            "  #{} AuPR(h) {:.4}±{:.4}  mstd(ER) {:.5}  ER {:.4}  agg {:?} merge {:?} combine {:?} ro {:?}",
            r.rank,
            r.aupr_harmonic.mean,
            r.aupr_harmonic.std,
            r.mstd_error_rate.mean,
            r.error_rate.mean,
            r.config.agg_kinds,
            r.config.agg_merge,
            r.config.combine,
            r.config.readout_kinds,
        );
    }
    Ok(results)
}

pub fn cmd_report(args: &ReportArgs) -> Result<(String, Vec<ReportRow>)> {
    let (table, rows) = build_report(&args.manifests, &args.out)?;
    print!("{table}");
    Ok((table, rows))
}
