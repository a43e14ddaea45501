use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lobcal::config::{ModelKind, RunConfig};
use lobcal::dataset::CalibrationDataset;
use lobcal::flow::Flavor;
use lobcal::npe::{rmse_eval, sbc_eval, NpeModel, PosteriorSampler};
use lobcal::pipeline::{self, PipelineError, Result};
use lobcal_core::facts::{self, FactsConfig};
use lobcal_core::features::{self, FeatureKind};
use lobcal_core::record::{read_snapshots_csv, read_trades_csv, SimRecord};
use lobcal_core::rng::seeded;

#[derive(Parser)]
#[command(
    name = "lobcal",
    version,
    about = "Simulate limit order book markets and calibrate them by neural posterior estimation"
)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct RunOverrides {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Simulator (zi, chiarella).
    #[arg(long)]
    model: Option<ModelKind>,
    /// Master seed for simulation, splits and training.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of simulations.
    #[arg(long)]
    budget: Option<usize>,
    /// Observation length in ticks.
    #[arg(long, alias = "steps")]
    len: Option<usize>,
    /// Feature kinds, comma separated (touch, vwap).
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<FeatureKind>>,
    /// Flow family (maf, nsf).
    #[arg(long)]
    flavor: Option<Flavor>,
    /// Training epoch cap.
    #[arg(long)]
    max_epochs: Option<usize>,
}

impl RunOverrides {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_toml(&std::fs::read_to_string(p)?)?,
            None => RunConfig::for_model(self.model.unwrap_or(ModelKind::Zi)),
        };
        if let Some(m) = self.model {
            c.model = m;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(b) = self.budget {
            c.budget = b;
        }
        if let Some(l) = self.len {
            c.len = l;
        }
        if let Some(f) = &self.features {
            c.features = f.clone();
        }
        if let Some(f) = self.flavor {
            c.flavor = Some(f);
        }
        if let Some(e) = self.max_epochs {
            c.train.schedule.max_epochs = e;
        }
        Ok(c)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one session and write its snapshot (and trade) CSV.
    Simulate {
        #[command(flatten)]
        run: RunOverrides,
        /// log10 parameters, comma separated; defaults to the prior midpoint.
        #[arg(
            long,
            alias = "theta-log10",
            value_delimiter = ',',
            allow_hyphen_values = true
        )]
        theta: Option<Vec<f64>>,
        /// Snapshot CSV (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Trade CSV.
        #[arg(long)]
        trades: Option<PathBuf>,
    },
    /// Extract the raw feature series of a snapshot CSV.
    Features {
        /// Snapshot CSV.
        #[arg(long = "in", alias = "input")]
        input: PathBuf,
        /// Feature kind (touch, vwap).
        #[arg(long, default_value = "vwap")]
        kind: FeatureKind,
        /// Series length in samples.
        #[arg(long, default_value_t = 600)]
        len: usize,
        /// Sampling interval in ticks.
        #[arg(long, default_value_t = 1)]
        interval: u64,
        /// Output CSV (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stylised-fact report of a snapshot CSV (plus trades, if given).
    Facts {
        /// Snapshot CSV.
        #[arg(long = "in", alias = "input")]
        input: PathBuf,
        /// Trade CSV for the volume-based metrics.
        #[arg(long)]
        trades: Option<PathBuf>,
        /// Report JSON (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a budget and persist the dataset of the first feature kind.
    BuildDataset {
        #[command(flatten)]
        run: RunOverrides,
        /// Dataset file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a posterior model on a dataset.
    Train {
        #[command(flatten)]
        run: RunOverrides,
        /// Dataset file.
        #[arg(long)]
        dataset: PathBuf,
        /// Model file.
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss history (JSON).
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Sample the posterior for an observed snapshot CSV.
    Infer {
        /// Model file.
        #[arg(long)]
        model: PathBuf,
        /// Observed snapshot CSV.
        #[arg(long)]
        obs: PathBuf,
        /// Posterior draws.
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Sampling seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Posterior draws as CSV (log10 parameters).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Posterior-mean RMSE on a dataset's test split.
    Evaluate {
        /// Model file.
        #[arg(long)]
        model: PathBuf,
        /// Dataset file.
        #[arg(long)]
        dataset: PathBuf,
        /// Test points evaluated.
        #[arg(long, default_value_t = 100)]
        points: usize,
        /// Posterior samples per point.
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Sampling seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report JSON (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulation-based calibration ranks on a dataset's test split.
    Sbc {
        /// Model file.
        #[arg(long)]
        model: PathBuf,
        /// Dataset file.
        #[arg(long)]
        dataset: PathBuf,
        /// Test pairs ranked.
        #[arg(long, default_value_t = 100)]
        draws: usize,
        /// Posterior draws per pair (L).
        #[arg(long, default_value_t = 100)]
        samples: usize,
        /// Sampling seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report JSON (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// End-to-end parameter recovery from a synthetic ground truth.
    Recover {
        #[command(flatten)]
        run: RunOverrides,
        /// Report JSON (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => lobcal::io::write_atomic(p, bytes)?,
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn json<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

fn check_compatible(model: &NpeModel, ds: &CalibrationDataset) -> Result<()> {
    if model.header.feature.as_ref() != Some(&ds.header.feature) {
        return Err(PipelineError::Usage(
            "the model was trained on a different feature encoding than this dataset".into(),
        ));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            run,
            theta,
            out,
            trades,
        } => {
            let c = run.resolve()?;
            let theta = theta.unwrap_or_else(|| c.prior().midpoint());
            if theta.len() != c.prior().dim() {
                return Err(PipelineError::Usage(format!(
                    "--theta needs {} log10 values ({}), got {}",
                    c.prior().dim(),
                    c.prior().names.join(", "),
                    theta.len()
                )));
            }
            let record = pipeline::simulate(&c, &theta, c.seed)?;
            let mut buf = Vec::new();
            record.write_snapshots_csv(&mut buf)?;
            emit(out.as_deref(), &buf)?;
            if let Some(p) = trades {
                let mut buf = Vec::new();
                record.write_trades_csv(&mut buf)?;
                lobcal::io::write_atomic(&p, &buf)?;
            }
        }
        Command::Features {
            input,
            kind,
            len,
            interval,
            out,
        } => {
            let rows = read_snapshots_csv(std::fs::File::open(input)?)?;
            let series = features::extract(kind, &rows, len, interval)?;
            // tick-major flat vector, one CSV row
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(series.values.iter().map(f64::to_string))
                .map_err(|e| PipelineError::Io(e.into()))?;
            let bytes = w
                .into_inner()
                .map_err(|e| PipelineError::Io(e.into_error()))?;
            emit(out.as_deref(), &bytes)?;
        }
        Command::Facts { input, trades, out } => {
            let snapshots = read_snapshots_csv(std::fs::File::open(input)?)?;
            let trades = match trades {
                Some(p) => read_trades_csv(std::fs::File::open(p)?)?,
                None => Vec::new(),
            };
            let report = facts::report(&SimRecord { snapshots, trades }, &FactsConfig::default())?;
            emit(out.as_deref(), &json(&report)?)?;
        }
        Command::BuildDataset { run, out } => {
            let c = run.resolve()?;
            let ds = pipeline::build_dataset(&c)?;
            ds.save(&out)?;
            log::info!("dataset {} written to {}", ds.content_hash(), out.display());
            println!("{}", ds.content_hash());
        }
        Command::Train {
            run,
            dataset,
            out,
            history,
        } => {
            let mut c = run.resolve()?;
            let ds = CalibrationDataset::load(&dataset)?;
            if run.model.is_none() && run.config.is_none() {
                c.model = ds.header.model;
            }
            let (model, hist) = pipeline::train_on(&ds, &c)?;
            model.save(&out).map_err(PipelineError::Npe)?;
            if let Some(p) = history {
                lobcal::io::write_atomic(&p, &json(&hist)?)?;
            }
            println!("{}", model.param_hash());
        }
        Command::Infer {
            model,
            obs,
            samples,
            seed,
            out,
        } => {
            let model = NpeModel::load(&model)?;
            let feature = model.header.feature.clone().ok_or_else(|| {
                PipelineError::Usage("model has no feature encoding to ingest with".into())
            })?;
            let x = pipeline::ingest_historical(&obs, &feature)?;
            let post = model.posterior_for(&x)?;
            let draws = post.sample(samples, &mut seeded(seed));
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(model.header.prior.names())
                .map_err(|e| PipelineError::Io(e.into()))?;
            for d in &draws {
                w.write_record(d.iter().map(f64::to_string))
                    .map_err(|e| PipelineError::Io(e.into()))?;
            }
            let bytes = w
                .into_inner()
                .map_err(|e| PipelineError::Io(e.into_error()))?;
            emit(out.as_deref(), &bytes)?;
            let s = lobcal::npe::summarize(&model.header.prior, &draws);
            for (j, name) in s.names.iter().enumerate() {
                log::info!(
                    "{name}: mean {:.4} sd {:.4} [{:.4}, {:.4}]",
                    s.mean[j],
                    s.sd[j],
                    s.q05[j],
                    s.q95[j]
                );
            }
        }
        Command::Evaluate {
            model,
            dataset,
            points,
            samples,
            seed,
            out,
        } => {
            let model = NpeModel::load(&model)?;
            let ds = CalibrationDataset::load(&dataset)?;
            check_compatible(&model, &ds)?;
            let c = RunConfig {
                eval_points: points,
                ..RunConfig::default()
            };
            let pairs = pipeline::eval_pairs(&ds, &c);
            let report = rmse_eval(&model, &pairs, samples, seed)?;
            emit(out.as_deref(), &json(&report)?)?;
        }
        Command::Sbc {
            model,
            dataset,
            draws,
            samples,
            seed,
            out,
        } => {
            let model = NpeModel::load(&model)?;
            let ds = CalibrationDataset::load(&dataset)?;
            check_compatible(&model, &ds)?;
            let c = RunConfig {
                eval_points: draws,
                ..RunConfig::default()
            };
            let pairs = pipeline::eval_pairs(&ds, &c);
            let report = sbc_eval(&model, &pairs, samples, seed);
            emit(out.as_deref(), &json(&report)?)?;
        }
        Command::Recover { run, out } => {
            let c = run.resolve()?;
            let report = pipeline::end_to_end_recovery(&c)?;
            emit(out.as_deref(), &json(&report)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
