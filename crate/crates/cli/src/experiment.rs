//! Orchestration of training runs: methods × seeds, the layer-reuse
//! ablation, and the artifacts they leave behind.

use std::path::Path;

use serde::{Deserialize, Serialize};

use lfd_core::a3c::{train, TrainInit, TrainSetup};
use lfd_core::demo::DemoDataset;
use lfd_core::eval::{summarize, write_curves_csv, ExperimentReport, LearningCurve};
use lfd_core::network::{load_model, save_model, LayerSet, ModelKind, ModelMeta};
use lfd_core::numeric::ParamSet;
use lfd_core::pretrain::{pretrain_classifier, PretrainOutcome};

use crate::config::{Mode, RunConfig};
use crate::rundir::RunDir;
use crate::{CliError, Result};

/// A classifier snapshot ready for transfer.
#[derive(Clone, Debug)]
pub struct Pretrained {
    pub params: ParamSet,
    pub meta: ModelMeta,
}

impl Pretrained {
    pub fn load(path: &Path) -> Result<Pretrained> {
        let (graph, meta) = load_model(path).map_err(|e| CliError::field("paths.pretrained", e))?;
        if meta.kind != ModelKind::Classifier {
            return Err(CliError::field("paths.pretrained", "snapshot is not a pre-trained classifier"));
        }
        Ok(Pretrained {
            params: graph.params().clone(),
            meta,
        })
    }

    pub fn from_outcome(outcome: &PretrainOutcome, game: &str) -> Pretrained {
        Pretrained {
            params: outcome.params.clone(),
            meta: outcome.model_meta(game),
        }
    }
}

/// Pre-trains a classifier with the configured network and settings.
pub fn pretrain(config: &RunConfig, dataset: &DemoDataset) -> Result<PretrainOutcome> {
    if dataset.meta.game != config.game.id {
        return Err(CliError::field(
            "paths.demos",
            format!("dataset is for {}, config for {}", dataset.meta.game, config.game.id),
        ));
    }
    let network = config.network_config()?;
    Ok(pretrain_classifier(dataset, &network, &config.pretrain)?)
}

/// How the agent's parameters start out in one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Random,
    Transfer(LayerSet),
}

pub fn train_setup(config: &RunConfig, mode: Mode, seed: u64, init: Init, pretrained: Option<&Pretrained>) -> Result<TrainSetup> {
    let network = config.network_config()?;
    let init = match init {
        Init::Random => TrainInit::Random,
        Init::Transfer(layers) => {
            let p = pretrained.ok_or_else(|| {
                CliError::field("paths.pretrained", format!("mode {mode} needs a pre-trained classifier"))
            })?;
            if p.meta.network != network {
                return Err(CliError::field(
                    "paths.pretrained",
                    "classifier network geometry differs from the configured network",
                ));
            }
            TrainInit::Pretrained {
                params: p.params.clone(),
                layers,
                tracked_max: p.meta.tracked_max,
            }
        }
    };
    Ok(TrainSetup {
        game: config.game.clone(),
        wrapper: config.wrapper.clone(),
        network,
        a3c: config.a3c_for(mode, seed),
        init,
    })
}

#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub curve: LearningCurve,
    pub final_params: ParamSet,
    pub global_step: u64,
    pub updates: u64,
    pub elapsed_s: f64,
    pub stopped_early: bool,
    pub error: Option<String>,
    /// Parameters scored at each evaluation point, by step.
    pub snapshots: Vec<(u64, ParamSet)>,
}

#[derive(Clone, Debug)]
pub struct MethodRun {
    pub name: String,
    pub mode: Mode,
    pub init: Init,
    pub runs: Vec<SeedRun>,
}

impl MethodRun {
    pub fn curves(&self) -> Vec<LearningCurve> {
        self.runs.iter().map(|r| r.curve.clone()).collect()
    }

    pub fn errors(&self) -> Vec<String> {
        self.runs
            .iter()
            .filter_map(|r| r.error.as_ref().map(|e| format!("{} seed {}: {e}", self.name, r.seed)))
            .collect()
    }
}

/// Trains one method on every configured seed, one seed after another.
pub fn run_method(
    config: &RunConfig,
    name: &str,
    mode: Mode,
    init: Init,
    pretrained: Option<&Pretrained>,
) -> Result<MethodRun> {
    let mut runs = Vec::new();
    for &seed in &config.seeds {
        let setup = train_setup(config, mode, seed, init, pretrained)?;
        tracing::info!(method = name, seed, "training");
        let out = train(&setup)?;
        tracing::info!(
            method = name,
            seed,
            auc = out.curve.auc().unwrap_or(f64::NAN),
            seconds = out.elapsed.as_secs_f64(),
            "finished"
        );
        runs.push(SeedRun {
            seed,
            curve: out.curve,
            final_params: out.final_params,
            global_step: out.global_step,
            updates: out.updates,
            elapsed_s: out.elapsed.as_secs_f64(),
            stopped_early: out.stopped_early,
            error: out.error,
            snapshots: out.snapshots,
        });
    }
    Ok(MethodRun {
        name: name.to_string(),
        mode,
        init,
        runs,
    })
}

fn default_init(mode: Mode, layers: LayerSet) -> Init {
    if mode.pretrained() {
        Init::Transfer(layers)
    } else {
        Init::Random
    }
}

/// Runs each listed method with the configured layer set; the report's
/// improvements are relative to the first method.
pub fn run_experiment(config: &RunConfig, modes: &[Mode], pretrained: Option<&Pretrained>) -> Result<Vec<MethodRun>> {
    modes
        .iter()
        .map(|&m| run_method(config, m.as_str(), m, default_init(m, config.layers), pretrained))
        .collect()
}

/// Transfers each of the five layer sets in turn, plus a run without any
/// transfer, all with the target mode of `mode`.
pub fn run_ablation(config: &RunConfig, mode: Mode, pretrained: &Pretrained) -> Result<Vec<MethodRun>> {
    let mut out = vec![run_method(config, "none", mode, Init::Random, None)?];
    for layers in LayerSet::ABLATION {
        out.push(run_method(config, layers.name(), mode, Init::Transfer(layers), Some(pretrained))?);
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedSummary {
    pub method: String,
    pub seed: u64,
    pub auc: Option<f64>,
    pub points: usize,
    pub global_step: u64,
    pub updates: u64,
    pub elapsed_s: f64,
    pub stopped_early: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub game: String,
    /// Absent when the curves could not be compared on one grid.
    pub summary: Option<ExperimentReport>,
    pub seeds: Vec<SeedSummary>,
}

pub fn report(config: &RunConfig, methods: &[MethodRun], baseline: &str) -> Result<RunReport> {
    let grouped: Vec<(String, Vec<LearningCurve>)> = methods.iter().map(|m| (m.name.clone(), m.curves())).collect();
    let summary = match summarize(&grouped, baseline) {
        Ok(s) => Some(s),
        Err(e) => {
            tracing::warn!(error = %e, "curves cannot be summarized together");
            None
        }
    };
    let seeds = methods
        .iter()
        .flat_map(|m| {
            m.runs.iter().map(move |r| SeedSummary {
                method: m.name.clone(),
                seed: r.seed,
                auc: r.curve.auc().ok(),
                points: r.curve.len(),
                global_step: r.global_step,
                updates: r.updates,
                elapsed_s: r.elapsed_s,
                stopped_early: r.stopped_early,
                error: r.error.clone(),
            })
        })
        .collect();
    Ok(RunReport {
        game: config.game.id.to_string(),
        summary,
        seeds,
    })
}

/// Curves as CSV (all seeds per method, and one file per seed), the agent
/// at every evaluation point, and the final agent of every seed.
pub fn write_method(dir: &RunDir, config: &RunConfig, run: &MethodRun) -> Result<()> {
    let curves = run.curves();
    let same_grid = curves.windows(2).all(|w| w[0].steps == w[1].steps);
    if same_grid && curves.iter().all(|c| !c.is_empty()) {
        write_curves_csv(dir.file(&format!("curves_{}.csv", run.name)), &curves)?;
    }
    let network = config.network_config()?;
    for r in &run.runs {
        if !r.curve.is_empty() {
            write_curves_csv(dir.file(&format!("curve_{}_seed{}.csv", run.name, r.seed)), std::slice::from_ref(&r.curve))?;
        }
        let meta = |step: u64| ModelMeta {
            game: Some(config.game.id.to_string()),
            step: Some(step),
            note: Some(format!("{} seed {}", run.name, r.seed)),
            ..ModelMeta::new(ModelKind::PolicyValue, network.clone())
        };
        for (step, params) in &r.snapshots {
            let name = format!("model_{}_seed{}_step{step}.snap", run.name, r.seed);
            save_model(dir.file(&name), params, &meta(*step))?;
        }
        save_model(
            dir.file(&format!("model_{}_seed{}.snap", run.name, r.seed)),
            &r.final_params,
            &meta(r.global_step),
        )?;
    }
    Ok(())
}
