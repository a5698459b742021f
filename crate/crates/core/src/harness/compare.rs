//! Running collectors side by side and tabulating their ensembles.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::collect::{
    run_auto_ensemble, run_baseline, save_all, write_jsonl, DataSplits, Method, RunOutput,
};
use crate::ensemble::{
    evaluate_ensemble, select_top_k, train_combiner, write_member_csv, CombineMode, CombinerFit,
    EnsembleEvaluation, EnsembleSpec, EnsembleSummary,
};
use crate::Result;

/// A finished collector run together with its evaluated ensemble.
#[derive(Debug, Clone)]
pub struct MethodResult {
    pub run: RunOutput,
    pub spec: EnsembleSpec,
    pub fit: Option<CombinerFit>,
    pub evaluation: EnsembleEvaluation,
}

/// Runs one collector and ensembles its members in the configured mode.
///
/// CE members are the `top_k` checkpoints by validation accuracy; every other
/// method uses the members its collector flagged.
pub fn run_method(
    cfg: &ExperimentConfig,
    method: Method,
    data: &DataSplits,
) -> Result<MethodResult> {
    let run = match method {
        Method::Ae => run_auto_ensemble(&cfg.ae_config(), data, cfg.seed)?,
        _ => run_baseline(method, &cfg.baselines, &cfg.train, data, cfg.seed)?,
    };
    let members = match method {
        Method::Ce => {
            let k = cfg.baselines.ce.top_k.min(run.checkpoints.len());
            select_top_k(&run.checkpoints, k, &data.val)?
        }
        _ => run.members(),
    };
    let (spec, fit) = build_ensemble(cfg, members, data)?;
    let evaluation = evaluate_ensemble(&spec, &data.test)?;
    Ok(MethodResult {
        run,
        spec,
        fit,
        evaluation,
    })
}

/// Builds the ensemble spec and fits the combiner on the validation split when
/// the mode is weighted.
pub fn build_ensemble(
    cfg: &ExperimentConfig,
    members: Vec<crate::collect::CheckpointRecord>,
    data: &DataSplits,
) -> Result<(EnsembleSpec, Option<CombinerFit>)> {
    let mut spec = EnsembleSpec::new(members, cfg.ensemble.mode)?;
    spec.combiner_lr = cfg.ensemble.combiner_lr;
    spec.combiner_steps = cfg.ensemble.combiner_steps;
    let fit = match spec.mode {
        CombineMode::Weighted => Some(train_combiner(&mut spec, &data.val)?),
        CombineMode::Simple => None,
    };
    Ok((spec, fit))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: Method,
    pub ensemble_acc: f64,
    pub best_single_acc: f64,
    /// `ensemble_acc - best_single_acc`.
    pub improvement: f64,
    pub avg_steps_per_member: f64,
    pub ensemble_size: usize,
}

impl ComparisonRow {
    pub fn new(method: Method, result: &MethodResult) -> Self {
        let e = &result.evaluation;
        let size = result.spec.len();
        Self {
            method,
            ensemble_acc: e.metrics.accuracy,
            best_single_acc: e.best_member_acc,
            improvement: e.metrics.accuracy - e.best_member_acc,
            avg_steps_per_member: result.run.total_steps as f64 / size as f64,
            ensemble_size: size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodFailure {
    pub method: Method,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub failures: Vec<MethodFailure>,
    /// Wall-clock time per method. Kept apart from the deterministic outputs.
    pub timings: Vec<(Method, Duration)>,
}

impl ComparisonReport {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Writes one method's checkpoints, step log, member table and summary into `dir`.
pub fn write_method_dir(result: &MethodResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_all(&result.run.checkpoints, dir.join("checkpoints"))?;
    write_jsonl(&result.run.log, fs::File::create(dir.join("log.jsonl"))?)?;
    write_member_csv(
        &result.spec,
        &result.evaluation,
        fs::File::create(dir.join("members.csv"))?,
    )?;
    let summary = EnsembleSummary::new(&result.spec, &result.evaluation);
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    Ok(())
}

/// Runs every method on the same data, model and seed. A failing method becomes
/// a failure entry rather than aborting the others. With `out`, each method
/// gets its own subdirectory.
pub fn compare_methods(
    cfg: &ExperimentConfig,
    methods: &[Method],
    out: Option<&Path>,
) -> Result<(ComparisonReport, Vec<(Method, MethodResult)>)> {
    cfg.validate()?;
    let data = cfg.data()?;
    let mut report = ComparisonReport::default();
    let mut results = Vec::new();
    for &method in methods {
        let started = Instant::now();
        let outcome = run_method(cfg, method, &data).and_then(|r| {
            if let Some(out) = out {
                write_method_dir(&r, &out.join(method.as_str()))?;
            }
            Ok(r)
        });
        report.timings.push((method, started.elapsed()));
        match outcome {
            Ok(r) => {
                report.rows.push(ComparisonRow::new(method, &r));
                results.push((method, r));
            }
            Err(e) => report.failures.push(MethodFailure {
                method,
                error: e.to_string(),
            }),
        }
    }
    Ok((report, results))
}
