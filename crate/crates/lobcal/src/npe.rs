//! Neural posterior estimation: an embedding network feeding a conditional
//! flow over standardized parameters, trained jointly on simulated pairs.

use std::io::Write;
use std::path::Path;

use lobcal_core::features::{FeatureKind, FeatureStats};
use lobcal_core::prior::PriorSpec;
use lobcal_core::rng::{derive_seed, seeded, SimRng};
use lobcal_nn::{
    Activation, Adam, EarlyStopping, Graph, Matrix, Mlp, Mode, ParamStore, PlateauScheduler,
    StopDecision, StoreError, TrainSchedule, Var,
};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::flow::{ConditionalFlow, FlowConfig, FlowError};

const MODEL_MAGIC: &str = "lobcal-model 1";
/// Observations evaluated per pass when nothing needs gradients.
const EVAL_CHUNK: usize = 512;

#[derive(Debug, Error)]
pub enum NpeError {
    #[error("observation has {got} values but the model expects {expected}")]
    InputMismatch { expected: usize, got: usize },
    #[error("parameter vector has {got} values but the prior has {expected}")]
    ThetaMismatch { expected: usize, got: usize },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("training diverged at epoch {epoch}: validation loss {loss}")]
    Diverged {
        epoch: usize,
        loss: f64,
        history: Box<TrainHistory>,
    },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Prior over the (log10) parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ThetaPrior {
    Uniform(PriorSpec),
    Normal {
        names: Vec<String>,
        mean: Vec<f64>,
        sd: Vec<f64>,
    },
}

impl ThetaPrior {
    pub fn dim(&self) -> usize {
        match self {
            ThetaPrior::Uniform(p) => p.dim(),
            ThetaPrior::Normal { mean, .. } => mean.len(),
        }
    }

    pub fn names(&self) -> &[String] {
        match self {
            ThetaPrior::Uniform(p) => &p.names,
            ThetaPrior::Normal { names, .. } => names,
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        match self {
            ThetaPrior::Uniform(p) => p.midpoint(),
            ThetaPrior::Normal { mean, .. } => mean.clone(),
        }
    }

    pub fn sd(&self) -> Vec<f64> {
        match self {
            ThetaPrior::Uniform(p) => p.sd(),
            ThetaPrior::Normal { sd, .. } => sd.clone(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            ThetaPrior::Uniform(p) => p.sample(rng),
            ThetaPrior::Normal { mean, sd, .. } => mean
                .iter()
                .zip(sd)
                .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        }
    }

    /// Box priors map to `[-1, 1]`; Gaussian priors to zero mean, unit sd.
    pub fn standardizer(&self) -> Standardizer {
        match self {
            ThetaPrior::Uniform(p) => Standardizer {
                shift: p.midpoint(),
                scale: p.width().iter().map(|w| w / 2.0).collect(),
            },
            ThetaPrior::Normal { mean, sd, .. } => Standardizer {
                shift: mean.clone(),
                scale: sd.clone(),
            },
        }
    }

    /// Whether `theta` lies in the prior's support box (always true for Gaussians).
    pub fn in_support(&self, theta: &[f64]) -> bool {
        match self {
            ThetaPrior::Uniform(p) => p.contains(theta),
            ThetaPrior::Normal { .. } => true,
        }
    }

    /// Closed-form expected RMSE of predicting every draw by the prior mean:
    /// `sqrt(mean_i var_i)`.
    pub fn baseline_rmse(&self) -> f64 {
        let sd = self.sd();
        (sd.iter().map(|s| s * s).sum::<f64>() / sd.len() as f64).sqrt()
    }
}

/// Affine map `theta_std = (theta - shift) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn forward(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(&self.shift)
            .zip(&self.scale)
            .map(|((t, m), s)| (t - m) / s)
            .collect()
    }

    pub fn inverse(&self, theta_std: &[f64]) -> Vec<f64> {
        theta_std
            .iter()
            .zip(&self.shift)
            .zip(&self.scale)
            .map(|((t, m), s)| t * s + m)
            .collect()
    }

    /// `ln |d theta_std / d theta|`, added to standardized log-densities.
    pub fn log_jacobian(&self) -> f64 {
        -self.scale.iter().map(|s| s.ln()).sum::<f64>()
    }
}

/// How observation vectors were produced, so new observations can be
/// prepared identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureInfo {
    pub kind: FeatureKind,
    pub len: usize,
    pub sample_interval: u64,
    pub stats: FeatureStats,
}

/// Everything that identifies a model apart from its trained weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub model_kind: String,
    pub input_dim: usize,
    pub feature: Option<FeatureInfo>,
    pub prior: ThetaPrior,
    /// Widths of the embedding layers after the input.
    pub embedding: Vec<usize>,
    pub flow: FlowConfig,
    pub dropout: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct NpeModel {
    pub header: ModelHeader,
    pub store: ParamStore,
    embed: Mlp,
    flow: ConditionalFlow,
    standardizer: Standardizer,
}

impl NpeModel {
    /// Builds the architecture with initial weights drawn from `header.seed`.
    pub fn new(header: ModelHeader) -> Self {
        let mut rng = seeded(derive_seed(header.seed, 0));
        let mut store = ParamStore::new();
        let mut sizes = vec![header.input_dim];
        sizes.extend_from_slice(&header.embedding);
        let embed = Mlp::new(
            &mut store,
            "embed",
            &sizes,
            Activation::Relu,
            Activation::Identity,
            header.dropout,
            &mut rng,
        );
        let context_dim = *sizes.last().expect("input size");
        let flow = ConditionalFlow::new(
            &mut store,
            "flow",
            header.prior.dim(),
            context_dim,
            header.flow.clone(),
            header.dropout,
            &mut rng,
        );
        let standardizer = header.prior.standardizer();
        NpeModel {
            header,
            store,
            embed,
            flow,
            standardizer,
        }
    }

    pub fn dim(&self) -> usize {
        self.header.prior.dim()
    }

    pub fn input_dim(&self) -> usize {
        self.header.input_dim
    }

    pub fn flow(&self) -> &ConditionalFlow {
        &self.flow
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    /// Evaluation-mode embedding of observation rows.
    pub fn embed(&self, x: &Matrix) -> Matrix {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let e = self
            .embed
            .apply(&mut g, &self.store, xv, Mode::Eval, &mut seeded(0));
        g.value(e).clone()
    }

    fn tape_log_prob<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        theta_std: Matrix,
        x: Matrix,
        mode: Mode,
        rng: &mut R,
    ) -> Var {
        let xv = g.input(x);
        let ctx = self.embed.apply(g, &self.store, xv, mode, rng);
        let tv = g.input(theta_std);
        self.flow.log_prob(g, &self.store, tv, ctx, mode, rng)
    }

    fn standardize_rows(&self, theta: &Matrix) -> Matrix {
        let rows: Vec<Vec<f64>> = (0..theta.rows())
            .map(|i| self.standardizer.forward(theta.row(i)))
            .collect();
        Matrix::from_rows(&rows)
    }

    /// Mean negative log-density of standardized parameters (evaluation mode).
    pub fn mean_loss(&self, data: &Samples) -> f64 {
        let mut total = 0.0;
        for start in (0..data.len()).step_by(EVAL_CHUNK) {
            let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(data.len())).collect();
            let batch = data.select(&idx);
            let mut g = Graph::new();
            let lp = self.tape_log_prob(
                &mut g,
                self.standardize_rows(&batch.theta),
                batch.x,
                Mode::Eval,
                &mut seeded(0),
            );
            total -= g.value(lp).sum();
        }
        total / data.len() as f64
    }

    fn check_obs(&self, obs: &[f64]) -> Result<(), NpeError> {
        if obs.len() != self.input_dim() {
            return Err(NpeError::InputMismatch {
                expected: self.input_dim(),
                got: obs.len(),
            });
        }
        Ok(())
    }

    /// Embeds the observation once; the returned posterior samples and
    /// evaluates densities in natural (log10) parameter space.
    pub fn posterior_for(&self, obs: &[f64]) -> Result<Posterior<'_>, NpeError> {
        self.check_obs(obs)?;
        Ok(Posterior {
            model: self,
            context: self.embed(&Matrix::row_vector(obs)),
        })
    }

    pub fn param_hash(&self) -> String {
        hex::encode(Sha256::digest(self.store.to_bytes()))
    }

    /// Header line, JSON header line, then the parameter store bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>, NpeError> {
        let mut out = Vec::new();
        writeln!(out, "{MODEL_MAGIC}")?;
        serde_json::to_writer(&mut out, &self.header)?;
        out.push(b'\n');
        out.extend_from_slice(&self.store.to_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NpeError> {
        let mut lines = bytes.splitn(3, |&b| b == b'\n');
        let magic = lines.next().unwrap_or_default();
        if magic != MODEL_MAGIC.as_bytes() {
            return Err(NpeError::Format("not a model file (bad first line)".into()));
        }
        let header_line = lines
            .next()
            .ok_or_else(|| NpeError::Format("missing header".into()))?;
        let header: ModelHeader = serde_json::from_slice(header_line)?;
        let params = lines
            .next()
            .ok_or_else(|| NpeError::Format("missing parameters".into()))?;
        let store = ParamStore::from_bytes(params)?;
        let mut model = NpeModel::new(header);
        model.store.copy_from(&store)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), NpeError> {
        crate::io::write_atomic(path, &self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NpeError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Draws parameter vectors from an approximate posterior.
pub trait PosteriorSampler {
    fn sample(&self, n: usize, rng: &mut SimRng) -> Vec<Vec<f64>>;
}

#[derive(Debug, Clone)]
pub struct Posterior<'a> {
    model: &'a NpeModel,
    context: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub names: Vec<String>,
    pub n_samples: usize,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub q05: Vec<f64>,
    pub median: Vec<f64>,
    pub q95: Vec<f64>,
    /// Fraction of draws outside the prior box (diagnostic; never clipped).
    pub outside_prior: f64,
}

impl Posterior<'_> {
    pub fn context(&self) -> &Matrix {
        &self.context
    }

    /// `ln q(theta | x)` in natural parameter space.
    pub fn log_prob(&self, theta: &[f64]) -> Result<f64, NpeError> {
        let m = self.model;
        if theta.len() != m.dim() {
            return Err(NpeError::ThetaMismatch {
                expected: m.dim(),
                got: theta.len(),
            });
        }
        let std = Matrix::row_vector(&m.standardizer.forward(theta));
        let lp = m.flow.log_prob_values(&m.store, &std, &self.context)?;
        Ok(lp[0] + m.standardizer.log_jacobian())
    }

    pub fn summary(&self, n: usize, rng: &mut SimRng) -> PosteriorSummary {
        let draws = self.sample(n, rng);
        summarize(&self.model.header.prior, &draws)
    }
}

impl PosteriorSampler for Posterior<'_> {
    fn sample(&self, n: usize, rng: &mut SimRng) -> Vec<Vec<f64>> {
        let m = self.model;
        let std = m.flow.sample(&m.store, &self.context, n, rng);
        (0..n).map(|i| m.standardizer.inverse(std.row(i))).collect()
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(prior: &ThetaPrior, draws: &[Vec<f64>]) -> PosteriorSummary {
    let d = prior.dim();
    let n = draws.len();
    let (mut mean, mut sd, mut q05, mut median, mut q95) = (vec![], vec![], vec![], vec![], vec![]);
    for j in 0..d {
        let mut col: Vec<f64> = draws.iter().map(|t| t[j]).collect();
        let m = col.iter().sum::<f64>() / n as f64;
        let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
        col.sort_by(f64::total_cmp);
        mean.push(m);
        sd.push(v.sqrt());
        q05.push(quantile(&col, 0.05));
        median.push(quantile(&col, 0.5));
        q95.push(quantile(&col, 0.95));
    }
    let outside = draws.iter().filter(|t| !prior.in_support(t)).count();
    PosteriorSummary {
        names: prior.names().to_vec(),
        n_samples: n,
        mean,
        sd,
        q05,
        median,
        q95,
        outside_prior: outside as f64 / n.max(1) as f64,
    }
}

/// Paired parameter and observation rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub theta: Matrix,
    pub x: Matrix,
}

impl Samples {
    pub fn new(theta: Matrix, x: Matrix) -> Self {
        assert_eq!(theta.rows(), x.rows(), "theta and x row counts differ");
        Samples { theta, x }
    }

    pub fn len(&self) -> usize {
        self.theta.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Samples {
        Samples {
            theta: self.theta.select_rows(idx),
            x: self.x.select_rows(idx),
        }
    }

    pub fn thetas(&self) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|i| self.theta.row(i).to_vec())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub schedule: TrainSchedule,
    pub flow: FlowConfig,
    pub embedding: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            schedule: TrainSchedule::default(),
            flow: FlowConfig::default(),
            embedding: vec![64, 64, 64, 256],
            seed: 0,
        }
    }
}

/// Model identity apart from the architecture and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub model_kind: String,
    pub feature: Option<FeatureInfo>,
    pub prior: ThetaPrior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Validation loss of the untrained model (epoch 0).
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Minimises the mean negative log-density of standardized parameters with
/// minibatch Adam; the embedding and flow are trained jointly. Only `train`
/// produces gradients; `val` drives the scheduler and early stopping. The
/// best-validation parameters are returned (the untrained model counts as
/// epoch 0).
pub fn train_npe(
    spec: ModelSpec,
    train: &Samples,
    val: &Samples,
    config: &TrainConfig,
) -> Result<(NpeModel, TrainHistory), NpeError> {
    if train.is_empty() {
        return Err(NpeError::EmptySplit("training"));
    }
    if val.is_empty() {
        return Err(NpeError::EmptySplit("validation"));
    }
    let s = &config.schedule;
    let header = ModelHeader {
        model_kind: spec.model_kind,
        input_dim: train.x.cols(),
        feature: spec.feature,
        prior: spec.prior,
        embedding: config.embedding.clone(),
        flow: config.flow.clone(),
        dropout: s.dropout,
        seed: config.seed,
    };
    let mut model = NpeModel::new(header);
    if train.theta.cols() != model.dim() {
        return Err(NpeError::ThetaMismatch {
            expected: model.dim(),
            got: train.theta.cols(),
        });
    }
    let train_std = Samples::new(model.standardize_rows(&train.theta), train.x.clone());
    let mut rng = seeded(derive_seed(config.seed, 1));
    let mut adam = Adam::new(&model.store, s.learning_rate);
    let mut plateau = PlateauScheduler::new(s.plateau_factor, s.plateau_patience);
    let mut stopper = EarlyStopping::new(s.stop_patience);

    let initial = model.mean_loss(val);
    let mut history = TrainHistory {
        initial_val_loss: initial,
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: initial,
        stopped_early: false,
    };
    if !initial.is_finite() {
        return Err(NpeError::Diverged {
            epoch: 0,
            loss: initial,
            history: Box::new(history),
        });
    }
    stopper.check(0, initial, &model.store);
    plateau.update(initial, adam.lr);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let batch = s.batch_size.max(1);
    for epoch in 1..=s.max_epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(batch) {
            let b = train_std.select(chunk);
            let mut g = Graph::new();
            let lp = model.tape_log_prob(&mut g, b.theta, b.x, Mode::Train, &mut rng);
            let mean = g.mean(lp);
            let loss = g.scale(mean, -1.0);
            sum += g.value(loss).item() * chunk.len() as f64;
            let grads = g
                .backward(loss)
                .expect("scalar loss")
                .for_store(&model.store);
            adam.step(&mut model.store, &grads);
        }
        let train_loss = sum / train.len() as f64;
        let val_loss = model.mean_loss(val);
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            learning_rate: adam.lr,
        });
        log::debug!(
            "epoch {epoch}: train {train_loss:.4} val {val_loss:.4} lr {:.2e}",
            adam.lr
        );
        if !val_loss.is_finite() {
            return Err(NpeError::Diverged {
                epoch,
                loss: val_loss,
                history: Box::new(history),
            });
        }
        adam.lr = plateau.update(val_loss, adam.lr);
        if stopper.check(epoch, val_loss, &model.store) == StopDecision::Stop {
            history.stopped_early = true;
            break;
        }
    }
    stopper.restore(&mut model.store);
    history.best_epoch = stopper.best_epoch();
    history.best_val_loss = stopper.best_loss();
    log::info!(
        "training finished after {} epochs; best epoch {} (val loss {:.4})",
        history.epochs.len(),
        history.best_epoch,
        history.best_val_loss
    );
    Ok((model, history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    pub n_points: usize,
    pub n_samples: usize,
    pub mean: f64,
    pub sd: f64,
    pub per_point: Vec<f64>,
    /// Per-dimension RMSE across points.
    pub per_dim: Vec<f64>,
    /// Per-dimension posterior sd averaged over points.
    pub mean_posterior_sd: Vec<f64>,
    /// Prior-mean predictor on the same points.
    pub baseline_mean: f64,
    pub baseline_sd: f64,
    /// Closed-form expectation of the prior-mean predictor's RMSE².
    pub baseline_expected: f64,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

/// Posterior-mean RMSE over test points. `sample(i, n, rng)` draws `n`
/// posterior samples for point `i`; point `i` uses the stream
/// `derive_seed(seed, i)`, so results do not depend on scheduling.
pub fn rmse_with<F>(
    prior: &ThetaPrior,
    truths: &[Vec<f64>],
    n_samples: usize,
    seed: u64,
    sample: F,
) -> RmseReport
where
    F: Fn(usize, usize, &mut SimRng) -> Vec<Vec<f64>> + Sync,
{
    let d = prior.dim();
    let stats: Vec<(Vec<f64>, Vec<f64>)> = (0..truths.len())
        .into_par_iter()
        .map(|i| {
            let draws = sample(i, n_samples, &mut seeded(derive_seed(seed, i as u64)));
            let s = summarize(prior, &draws);
            (s.mean, s.sd)
        })
        .collect();
    let per_point: Vec<f64> = stats
        .iter()
        .zip(truths)
        .map(|((m, _), t)| rmse(m, t))
        .collect();
    let prior_mean = prior.mean();
    let baseline: Vec<f64> = truths.iter().map(|t| rmse(&prior_mean, t)).collect();
    let n = truths.len().max(1) as f64;
    let per_dim = (0..d)
        .map(|j| {
            (stats
                .iter()
                .zip(truths)
                .map(|((m, _), t)| (m[j] - t[j]).powi(2))
                .sum::<f64>()
                / n)
                .sqrt()
        })
        .collect();
    let mean_posterior_sd = (0..d)
        .map(|j| stats.iter().map(|(_, s)| s[j]).sum::<f64>() / n)
        .collect();
    let (mean, sd) = mean_sd(&per_point);
    let (baseline_mean, baseline_sd) = mean_sd(&baseline);
    RmseReport {
        n_points: truths.len(),
        n_samples,
        mean,
        sd,
        per_point,
        per_dim,
        mean_posterior_sd,
        baseline_mean,
        baseline_sd,
        baseline_expected: prior.baseline_rmse(),
    }
}

/// Posterior-mean RMSE of a trained model on held-out pairs (log10 space).
pub fn rmse_eval(
    model: &NpeModel,
    test: &Samples,
    n_samples: usize,
    seed: u64,
) -> Result<RmseReport, NpeError> {
    let contexts = model.embed(&test.x);
    Ok(rmse_with(
        &model.header.prior,
        &test.thetas(),
        n_samples,
        seed,
        |i, n, rng| {
            let post = Posterior {
                model,
                context: contexts.select_rows(&[i]),
            };
            post.sample(n, rng)
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcReport {
    pub n_draws: usize,
    pub n_posterior: usize,
    pub bins: usize,
    /// Rank histogram per dimension.
    pub histograms: Vec<Vec<u64>>,
    pub chi_square: Vec<f64>,
    pub p_values: Vec<f64>,
    /// Per-dimension significance after Bonferroni correction.
    pub threshold: f64,
    pub passed: bool,
}

pub const SBC_BINS: usize = 10;
pub const SBC_SIGNIFICANCE: f64 = 0.01;

/// Chi-square uniformity test of ranks in `0..=n_posterior`, grouped into
/// `bins` bins whose expected counts account for uneven bin sizes.
pub fn rank_uniformity(ranks: &[usize], n_posterior: usize, bins: usize) -> (Vec<u64>, f64, f64) {
    let levels = n_posterior + 1;
    let bin_of = |r: usize| r * bins / levels;
    let mut hist = vec![0u64; bins];
    for &r in ranks {
        hist[bin_of(r)] += 1;
    }
    let mut width = vec![0usize; bins];
    for r in 0..levels {
        width[bin_of(r)] += 1;
    }
    let n = ranks.len() as f64;
    let chi2: f64 = hist
        .iter()
        .zip(&width)
        .map(|(&o, &w)| {
            let e = n * w as f64 / levels as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let p = 1.0
        - ChiSquared::new((bins - 1) as f64)
            .expect("positive dof")
            .cdf(chi2);
    (hist, chi2, p)
}

/// Simulation-based calibration. For each true parameter vector, the rank
/// of each coordinate among `n_posterior` draws from its posterior
/// (`sample(i, n, rng)`, conditioned on data simulated at `truths[i]`).
pub fn sbc_ranks<F>(truths: &[Vec<f64>], n_posterior: usize, seed: u64, sample: F) -> SbcReport
where
    F: Fn(usize, usize, &mut SimRng) -> Vec<Vec<f64>> + Sync,
{
    let d = truths.first().map_or(0, Vec::len);
    let ranks: Vec<Vec<usize>> = (0..truths.len())
        .into_par_iter()
        .map(|i| {
            let draws = sample(i, n_posterior, &mut seeded(derive_seed(seed, i as u64)));
            (0..d)
                .map(|j| draws.iter().filter(|s| s[j] < truths[i][j]).count())
                .collect()
        })
        .collect();
    let threshold = SBC_SIGNIFICANCE / d.max(1) as f64;
    if truths.is_empty() {
        return SbcReport {
            n_draws: 0,
            n_posterior,
            bins: SBC_BINS,
            histograms: Vec::new(),
            chi_square: Vec::new(),
            p_values: Vec::new(),
            threshold,
            passed: false,
        };
    }
    let mut report = SbcReport {
        n_draws: truths.len(),
        n_posterior,
        bins: SBC_BINS,
        histograms: Vec::with_capacity(d),
        chi_square: Vec::with_capacity(d),
        p_values: Vec::with_capacity(d),
        threshold,
        passed: true,
    };
    for j in 0..d {
        let col: Vec<usize> = ranks.iter().map(|r| r[j]).collect();
        let (hist, chi2, p) = rank_uniformity(&col, n_posterior, SBC_BINS);
        report.passed &= p >= threshold;
        report.histograms.push(hist);
        report.chi_square.push(chi2);
        report.p_values.push(p);
    }
    report
}

/// SBC of a trained model over held-out pairs, which are prior draws with
/// their simulations.
pub fn sbc_eval(model: &NpeModel, pairs: &Samples, n_posterior: usize, seed: u64) -> SbcReport {
    let contexts = model.embed(&pairs.x);
    sbc_ranks(&pairs.thetas(), n_posterior, seed, |i, n, rng| {
        let post = Posterior {
            model,
            context: contexts.select_rows(&[i]),
        };
        post.sample(n, rng)
    })
}
