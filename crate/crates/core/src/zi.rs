//! Zero-intelligence traders.
//!
//! `N_a` statistically identical agents each submit a limit order with
//! probability `alpha / N_a` and a market order with probability `mu / N_a`
//! per step, so `alpha` and `mu` are mean order counts per step. Limit
//! orders sit an exponential depth (rate `lambda`) away from the mid and
//! every resting order is cancelled with probability `delta` per step.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{self, DepthLaw, FlowError, IdSource, Placement};
use crate::lob::{MarketSnapshot, OrderBook, Price, Trade};
use crate::record::SimRecord;
use crate::rng::{seeded, SimRng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ZiError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("expected {expected} log10 parameters, got {got}")]
    Arity { expected: usize, got: usize },
}

fn param_err(name: &'static str, value: f64, reason: &'static str) -> ZiError {
    ZiError::Flow(FlowError::Parameter {
        name,
        value,
        reason,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaZi {
    pub alpha: f64,
    pub mu: f64,
    pub delta: f64,
    pub lambda: f64,
}

impl ThetaZi {
    pub const DIM: usize = 4;

    /// From `[log10 alpha, log10 mu, log10 delta, log10 lambda]`.
    pub fn from_log10(v: &[f64]) -> Result<Self, ZiError> {
        if v.len() != Self::DIM {
            return Err(ZiError::Arity {
                expected: Self::DIM,
                got: v.len(),
            });
        }
        let theta = ThetaZi {
            alpha: 10f64.powf(v[0]),
            mu: 10f64.powf(v[1]),
            delta: 10f64.powf(v[2]),
            lambda: 10f64.powf(v[3]),
        };
        theta.validate_rates()?;
        Ok(theta)
    }

    pub fn to_log10(&self) -> [f64; 4] {
        [
            self.alpha.log10(),
            self.mu.log10(),
            self.delta.log10(),
            self.lambda.log10(),
        ]
    }

    fn validate_rates(&self) -> Result<(), ZiError> {
        for (name, v) in [("alpha", self.alpha), ("mu", self.mu)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(param_err(
                    name,
                    v,
                    "order rate must be finite and non-negative",
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(param_err(
                "delta",
                self.delta,
                "cancel probability must lie in [0, 1]",
            ));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(param_err(
                "lambda",
                self.lambda,
                "depth rate must be positive",
            ));
        }
        Ok(())
    }

    /// Per-agent limit and market probabilities.
    pub fn per_agent(&self, n_agents: u64) -> Result<(f64, f64), ZiError> {
        self.validate_rates()?;
        let n = n_agents as f64;
        let (pl, pm) = (self.alpha / n, self.mu / n);
        if pl > 1.0 {
            return Err(param_err("alpha", self.alpha, "alpha / n_agents exceeds 1"));
        }
        if pm > 1.0 {
            return Err(param_err("mu", self.mu, "mu / n_agents exceeds 1"));
        }
        Ok((pl, pm))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZiConfig {
    pub n_agents: u64,
    pub n_steps: u64,
    pub initial_price: Price,
    pub seed: u64,
}

impl Default for ZiConfig {
    fn default() -> Self {
        ZiConfig {
            n_agents: 10_000,
            n_steps: 600,
            initial_price: 10_000,
            seed: 0,
        }
    }
}

impl ZiConfig {
    pub fn validate(&self) -> Result<(), ZiError> {
        if self.n_agents == 0 {
            return Err(param_err("n_agents", 0.0, "need at least one agent"));
        }
        if self.initial_price < 2 {
            return Err(param_err(
                "initial_price",
                self.initial_price as f64,
                "initial price must be at least two ticks",
            ));
        }
        Ok(())
    }
}

/// What happened during one step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    pub cancelled: u64,
    pub limit_orders: u64,
    pub market_orders: u64,
    pub trades: Vec<Trade>,
}

/// Scratch state threaded through consecutive steps of one session.
#[derive(Debug, Clone)]
pub struct ZiSession {
    pub book: OrderBook,
    pub ids: IdSource,
    pub rng: SimRng,
    /// When set, raw depth draws are appended here.
    pub raw_depths: Option<Vec<f64>>,
}

impl ZiSession {
    pub fn new(config: &ZiConfig) -> Self {
        ZiSession {
            book: OrderBook::new(config.initial_price),
            ids: IdSource::default(),
            rng: seeded(config.seed),
            raw_depths: None,
        }
    }
}

/// One timestep: cancellations, limit orders around the mid, market orders.
/// The book is observed after each phase into `observations`.
pub fn zi_step<R: Rng + ?Sized>(
    book: &mut OrderBook,
    ids: &mut IdSource,
    theta: &ThetaZi,
    config: &ZiConfig,
    rng: &mut R,
    observations: &mut Vec<MarketSnapshot>,
    raw_depths: Option<&mut Vec<f64>>,
) -> Result<StepReport, ZiError> {
    let (p_limit, p_market) = theta.per_agent(config.n_agents)?;
    let depth = DepthLaw::new(theta.lambda)?;
    let mut report = StepReport {
        cancelled: flow::cancel_phase(book, theta.delta, rng),
        ..Default::default()
    };
    flow::observe(book, observations);

    report.limit_orders = flow::binomial(rng, config.n_agents, p_limit);
    let mid = book.mid_price();
    report.trades = flow::limit_phase(
        book,
        report.limit_orders,
        mid,
        &depth,
        Placement::Passive,
        ids,
        rng,
        raw_depths,
    )?;
    flow::observe(book, observations);

    report.market_orders = flow::binomial(rng, config.n_agents, p_market);
    let market_trades = flow::market_phase(book, report.market_orders, ids, rng)?;
    report.trades.extend(market_trades);
    flow::observe(book, observations);
    Ok(report)
}

impl ZiSession {
    pub fn step(
        &mut self,
        theta: &ThetaZi,
        config: &ZiConfig,
        t: u64,
        record: &mut SimRecord,
    ) -> Result<StepReport, ZiError> {
        self.book.set_clock(t);
        let report = zi_step(
            &mut self.book,
            &mut self.ids,
            theta,
            config,
            &mut self.rng,
            &mut record.snapshots,
            self.raw_depths.as_mut(),
        )?;
        record.trades.extend_from_slice(&report.trades);
        Ok(report)
    }
}

/// Simulates one session of `config.n_steps` steps (timesteps `1..=n_steps`)
/// and expires the book at the end. Deterministic in `config.seed`.
pub fn run_zi(theta: &ThetaZi, config: &ZiConfig) -> Result<SimRecord, ZiError> {
    config.validate()?;
    theta.per_agent(config.n_agents)?;
    let mut session = ZiSession::new(config);
    let mut record = SimRecord {
        snapshots: Vec::with_capacity(config.n_steps as usize * flow::OBSERVATIONS_PER_STEP),
        trades: Vec::new(),
    };
    for t in 1..=config.n_steps {
        session.step(theta, config, t, &mut record)?;
    }
    session.book.clear_expired();
    Ok(record)
}
