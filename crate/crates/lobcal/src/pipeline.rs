//! End-to-end orchestration: prior sampling, simulation budgets, dataset
//! assembly, historical-data ingestion and parameter-recovery reports.

use std::io::Read;
use std::path::Path;

use lobcal_core::chiarella::{run_chiarella, ChiarellaError, ThetaChiarella};
use lobcal_core::facts::{self, FactsConfig, FactsError, StylisedFactReport};
use lobcal_core::features::{self, DataSplit, FeatureError, FeatureKind, SummarySeries};
use lobcal_core::prior::PriorSpec;
use lobcal_core::record::{read_snapshots_csv, RecordError, SimRecord};
use lobcal_core::rng::{derive_seed, seeded};
use lobcal_core::zi::{run_zi, ThetaZi, ZiError};
use lobcal_core::MarketSnapshot;
use lobcal_nn::Matrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ModelKind, RunConfig};
use crate::dataset::{CalibrationDataset, DatasetError, DatasetHeader, Provenance, Splits};
use crate::npe::{
    rmse_eval, sbc_eval, train_npe, FeatureInfo, ModelSpec, NpeError, NpeModel, PosteriorSummary,
    RmseReport, SbcReport, ThetaPrior, TrainHistory,
};

/// Re-draws allowed per run before giving up on it.
const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("configuration: {0}")]
    Config(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("ingestion: {0}")]
    Record(#[from] RecordError),
    #[error("features: {0}")]
    Feature(#[from] FeatureError),
    #[error("dataset: {0}")]
    Dataset(#[from] DatasetError),
    #[error("zi simulation: {0}")]
    Zi(#[from] ZiError),
    #[error("chiarella simulation: {0}")]
    Chiarella(ChiarellaError),
    #[error("{diverged} of {budget} runs diverged (limit {limit}); the prior or configuration is likely pathological")]
    TooManyDiverged {
        diverged: usize,
        budget: usize,
        limit: usize,
    },
    #[error("stylised facts: {0}")]
    Facts(#[from] FactsError),
    #[error(transparent)]
    Npe(#[from] NpeError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    /// 1 usage, 2 data, 3 numeric or training failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) | PipelineError::Config(_) => 1,
            PipelineError::TooManyDiverged { .. }
            | PipelineError::Chiarella(ChiarellaError::Diverged { .. }) => 3,
            PipelineError::Npe(NpeError::Diverged { .. } | NpeError::Flow(_)) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// `n` i.i.d. uniform draws from the log10 box, one per row.
pub fn sample_prior<R: Rng + ?Sized>(spec: &PriorSpec, n: usize, rng: &mut R) -> Matrix {
    let rows = spec.sample_n(n, rng);
    let mut data = Vec::with_capacity(n * spec.dim());
    for r in rows {
        data.extend(r);
    }
    Matrix::from_vec(n, spec.dim(), data)
}

/// One simulation at log10 parameters `theta`.
pub fn simulate(config: &RunConfig, theta: &[f64], seed: u64) -> Result<SimRecord> {
    let steps = config.simulation_steps();
    match config.model {
        ModelKind::Zi => {
            let t = ThetaZi::from_log10(theta)?;
            let c = lobcal_core::zi::ZiConfig {
                n_steps: steps,
                seed,
                ..config.zi
            };
            Ok(run_zi(&t, &c)?)
        }
        ModelKind::Chiarella => {
            let t = ThetaChiarella::from_log10(theta).map_err(PipelineError::Chiarella)?;
            let c = lobcal_core::chiarella::ChiarellaConfig {
                n_steps: steps,
                seed,
                ..config.chiarella
            };
            run_chiarella(&t, &c)
                .map(|r| r.record)
                .map_err(PipelineError::Chiarella)
        }
    }
}

fn extract(
    kind: FeatureKind,
    rows: &[MarketSnapshot],
    config: &RunConfig,
) -> Result<SummarySeries> {
    Ok(features::extract(
        kind,
        rows,
        config.len,
        config.sample_interval,
    )?)
}

struct RunOutput {
    theta: Vec<f64>,
    series: Vec<SummarySeries>,
    redraws: usize,
}

/// Simulates run `index`, re-drawing parameters after a divergence.
fn simulate_run(
    config: &RunConfig,
    prior: &PriorSpec,
    master: u64,
    index: usize,
) -> Result<RunOutput> {
    for attempt in 0..MAX_ATTEMPTS {
        let run_seed = derive_seed(derive_seed(master, index as u64), attempt as u64);
        let theta = prior.sample(&mut seeded(derive_seed(run_seed, 0)));
        match simulate(config, &theta, derive_seed(run_seed, 1)) {
            Ok(record) => {
                let series = config
                    .features
                    .iter()
                    .map(|&k| extract(k, &record.snapshots, config))
                    .collect::<Result<Vec<_>>>()?;
                return Ok(RunOutput {
                    theta,
                    series,
                    redraws: attempt,
                });
            }
            Err(PipelineError::Chiarella(ChiarellaError::Diverged { step, price })) => {
                log::debug!(
                    "run {index} attempt {attempt} diverged at step {step} (price {price})"
                );
            }
            Err(e) => return Err(e),
        }
    }
    Err(PipelineError::TooManyDiverged {
        diverged: MAX_ATTEMPTS,
        budget: 1,
        limit: 0,
    })
}

/// Simulates the budget in parallel and builds one dataset per configured
/// feature kind from the same simulations. Normalization statistics are
/// fitted on the training split only.
pub fn build_datasets(config: &RunConfig) -> Result<Vec<CalibrationDataset>> {
    if config.budget == 0 {
        return Err(PipelineError::Usage("budget must be positive".into()));
    }
    if config.features.is_empty() {
        return Err(PipelineError::Usage(
            "at least one feature kind is required".into(),
        ));
    }
    let prior = config.prior();
    let sim_master = derive_seed(config.seed, 1);
    let runs: Vec<RunOutput> = (0..config.budget)
        .into_par_iter()
        .map(|i| simulate_run(config, &prior, sim_master, i))
        .collect::<Result<Vec<_>>>()?;
    let redraws: usize = runs.iter().map(|r| r.redraws).sum();
    let limit = (config.max_diverged_fraction * config.budget as f64).floor() as usize;
    if redraws > limit {
        return Err(PipelineError::TooManyDiverged {
            diverged: redraws,
            budget: config.budget,
            limit,
        });
    }
    if redraws > 0 {
        log::info!("{redraws} diverged runs were re-drawn");
    }

    let mut perm: Vec<usize> = (0..config.budget).collect();
    perm.shuffle(&mut seeded(derive_seed(config.seed, 2)));
    let splits = Splits::from_permutation(&perm);

    let d = prior.dim();
    let mut theta = Vec::with_capacity(config.budget * d);
    for r in &runs {
        theta.extend_from_slice(&r.theta);
    }
    let theta = Matrix::from_vec(config.budget, d, theta);

    let mut out = Vec::with_capacity(config.features.len());
    for (k, &kind) in config.features.iter().enumerate() {
        let train_series: Vec<SummarySeries> = splits
            .train
            .iter()
            .map(|&i| runs[i].series[k].clone())
            .collect();
        let stats = features::fit_stats(&train_series, DataSplit::Train)?;
        let x_dim = config.len * kind.channels();
        let mut x = Vec::with_capacity(config.budget * x_dim);
        for r in &runs {
            x.extend(features::normalize(&r.series[k], &stats)?);
        }
        let header = DatasetHeader {
            model: config.model,
            feature: FeatureInfo {
                kind,
                len: config.len,
                sample_interval: config.sample_interval,
                stats,
            },
            prior: prior.clone(),
            n: config.budget,
            theta_dim: d,
            x_dim,
            splits: splits.clone(),
            provenance: Provenance {
                seed: config.seed,
                config_hash: config.hash(),
                redraws,
                content_hash: String::new(),
            },
        };
        out.push(CalibrationDataset::new(
            header,
            theta.clone(),
            Matrix::from_vec(config.budget, x_dim, x),
        )?);
    }
    Ok(out)
}

/// Dataset for the primary feature kind.
pub fn build_dataset(config: &RunConfig) -> Result<CalibrationDataset> {
    let mut c = config.clone();
    c.features.truncate(1);
    Ok(build_datasets(&c)?.remove(0))
}

/// Feature vector of a snapshot sequence, prepared exactly as the dataset's.
pub fn observation_from_snapshots(
    rows: &[MarketSnapshot],
    feature: &FeatureInfo,
) -> Result<Vec<f64>> {
    let series = features::extract(feature.kind, rows, feature.len, feature.sample_interval)?;
    Ok(features::normalize(&series, &feature.stats)?)
}

/// Reads a snapshot CSV (pre-cleaned continuous session) and returns its
/// normalized observation vector.
pub fn ingest_reader<R: Read>(input: R, feature: &FeatureInfo) -> Result<Vec<f64>> {
    let rows = read_snapshots_csv(input)?;
    observation_from_snapshots(&rows, feature)
}

pub fn ingest_historical(path: &Path, feature: &FeatureInfo) -> Result<Vec<f64>> {
    ingest_reader(std::fs::File::open(path)?, feature)
}

pub fn model_spec(ds: &CalibrationDataset) -> ModelSpec {
    ModelSpec {
        model_kind: ds.header.model.name().into(),
        feature: Some(ds.header.feature.clone()),
        prior: ThetaPrior::Uniform(ds.header.prior.clone()),
    }
}

/// Trains on the dataset's train split, stopping on its validation split.
pub fn train_on(ds: &CalibrationDataset, config: &RunConfig) -> Result<(NpeModel, TrainHistory)> {
    let train = ds.split(DataSplit::Train);
    let val = ds.split(DataSplit::Validation);
    Ok(train_npe(
        model_spec(ds),
        &train,
        &val,
        &config.train_config(),
    )?)
}

/// First `eval_points` pairs of the test split.
pub fn eval_pairs(ds: &CalibrationDataset, config: &RunConfig) -> crate::npe::Samples {
    let test = &ds.header.splits.test;
    let idx = &test[..config.eval_points.min(test.len())];
    crate::npe::Samples::new(ds.theta.select_rows(idx), ds.x.select_rows(idx))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs: usize,
    pub best_epoch: usize,
    pub initial_val_loss: f64,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

impl From<&TrainHistory> for TrainingSummary {
    fn from(h: &TrainHistory) -> Self {
        TrainingSummary {
            epochs: h.epochs.len(),
            best_epoch: h.best_epoch,
            initial_val_loss: h.initial_val_loss,
            best_val_loss: h.best_val_loss,
            stopped_early: h.stopped_early,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecovery {
    pub feature: FeatureKind,
    pub dataset_hash: String,
    pub model_hash: String,
    pub training: TrainingSummary,
    pub posterior: PosteriorSummary,
    /// Whether each true coordinate lies in the posterior's 90% interval.
    pub truth_in_90: Vec<bool>,
    pub rmse: RmseReport,
    pub sbc: SbcReport,
    /// Facts of a simulation at the posterior mean (same seed as the truth run).
    pub facts_at_posterior_mean: Option<StylisedFactReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub model: ModelKind,
    pub seed: u64,
    pub config_hash: String,
    pub budget: usize,
    pub len: usize,
    pub names: Vec<String>,
    pub truth: Vec<f64>,
    pub facts_at_truth: Option<StylisedFactReport>,
    pub features: Vec<FeatureRecovery>,
}

fn facts_of(record: &SimRecord) -> Option<StylisedFactReport> {
    match facts::report(record, &FactsConfig::default()) {
        Ok(r) => Some(r),
        Err(e) => {
            log::warn!("stylised facts unavailable: {e}");
            None
        }
    }
}

/// Draws a ground truth, simulates a pseudo-observation, trains on an
/// independent dataset per feature kind and reports posterior summaries,
/// RMSE against the prior-mean baseline, SBC and stylised facts.
pub fn end_to_end_recovery(config: &RunConfig) -> Result<RecoveryReport> {
    let prior = config.prior();
    let truth = prior.sample(&mut seeded(derive_seed(config.seed, 3)));
    let obs_seed = derive_seed(config.seed, 4);
    let observed = simulate(config, &truth, obs_seed)?;
    log::info!("ground truth {truth:?}");

    let datasets = build_datasets(config)?;
    let mut features_out = Vec::with_capacity(datasets.len());
    for ds in &datasets {
        let kind = ds.header.feature.kind;
        log::info!(
            "training on {} features ({} pairs)",
            kind.name(),
            ds.header.n
        );
        let (model, history) = train_on(ds, config)?;
        let x_obs = observation_from_snapshots(&observed.snapshots, &ds.header.feature)?;
        let post = model.posterior_for(&x_obs)?;
        let summary = post.summary(
            config.posterior_samples,
            &mut seeded(derive_seed(config.seed, 5)),
        );
        let truth_in_90 = truth
            .iter()
            .enumerate()
            .map(|(j, t)| summary.q05[j] <= *t && *t <= summary.q95[j])
            .collect();
        let pairs = eval_pairs(ds, config);
        let rmse = rmse_eval(
            &model,
            &pairs,
            config.posterior_samples,
            derive_seed(config.seed, 6),
        )?;
        let sbc = sbc_eval(
            &model,
            &pairs,
            config.sbc_samples,
            derive_seed(config.seed, 7),
        );
        let mean_theta: Vec<f64> = summary.mean.clone();
        let facts_at_posterior_mean = match simulate(config, &mean_theta, obs_seed) {
            Ok(r) => facts_of(&r),
            Err(e) => {
                log::warn!("simulation at the posterior mean failed: {e}");
                None
            }
        };
        features_out.push(FeatureRecovery {
            feature: kind,
            dataset_hash: ds.content_hash().to_string(),
            model_hash: model.param_hash(),
            training: TrainingSummary::from(&history),
            posterior: summary,
            truth_in_90,
            rmse,
            sbc,
            facts_at_posterior_mean,
        });
    }
    Ok(RecoveryReport {
        model: config.model,
        seed: config.seed,
        config_hash: config.hash(),
        budget: config.budget,
        len: config.len,
        names: prior.names.clone(),
        truth,
        facts_at_truth: facts_of(&observed),
        features: features_out,
    })
}
