//! Extended Chiarella dynamics on top of the order book.
//!
//! Aggregate demand per step is the sum of a fundamental term, two momentum
//! terms (slow and high-frequency trend followers) and Gaussian noise:
//!
//! ```text
//! d = kappa (v - p) dt
//!   + s_m  * beta    tanh(gamma_m  M)
//!   + s_hf * beta_hf tanh(gamma_hf M_hf)
//!   + sigma_n eps sqrt(dt)
//! p <- p + kyle_lambda * d
//! M <- (1 - alpha_m) M + alpha_m dp,   M_hf likewise with alpha_hf
//! ```
//!
//! `s_m` and `s_hf` are fixed demand units for the momentum terms. With both
//! equal to one the update is the textbook form; the defaults express the
//! momentum coefficients per trading day (like `kappa`) and `beta_hf` in
//! units of 1e-5 so every prior box maps onto comparable price moves.
//!
//! The book sees the model through two channels: a background of
//! zero-intelligence limit orders placed around the model price, and one
//! market order per step with side `sign(d)` and volume
//! `round(order_scale * |d|)`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{self, DepthLaw, FlowError, IdSource, Placement};
use crate::lob::{Order, OrderBook, Price, Side};
use crate::record::SimRecord;
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChiarellaError {
    #[error("simulation diverged at step {step}: model price {price}")]
    Diverged { step: u64, price: f64 },
    #[error("invalid configuration: {0}")]
    Config(&'static str),
    #[error("parameter `{name}` = {value} must be positive and finite")]
    Parameter { name: &'static str, value: f64 },
    #[error("expected {expected} log10 parameters, got {got}")]
    Arity { expected: usize, got: usize },
    #[error(transparent)]
    Flow(#[from] FlowError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaChiarella {
    pub sigma_n: f64,
    pub beta: f64,
    pub gamma_m: f64,
    pub kappa: f64,
    pub beta_hf: f64,
    pub gamma_hf: f64,
}

impl ThetaChiarella {
    pub const DIM: usize = 6;

    /// From log10 values ordered `(sigma_n, beta, gamma_m, kappa, beta_hf, gamma_hf)`.
    pub fn from_log10(v: &[f64]) -> Result<Self, ChiarellaError> {
        if v.len() != Self::DIM {
            return Err(ChiarellaError::Arity {
                expected: Self::DIM,
                got: v.len(),
            });
        }
        let p = |i: usize| 10f64.powf(v[i]);
        let theta = ThetaChiarella {
            sigma_n: p(0),
            beta: p(1),
            gamma_m: p(2),
            kappa: p(3),
            beta_hf: p(4),
            gamma_hf: p(5),
        };
        theta.validate()?;
        Ok(theta)
    }

    pub fn to_log10(&self) -> [f64; 6] {
        [
            self.sigma_n.log10(),
            self.beta.log10(),
            self.gamma_m.log10(),
            self.kappa.log10(),
            self.beta_hf.log10(),
            self.gamma_hf.log10(),
        ]
    }

    /// Components must be finite and non-negative (zero switches a term off).
    pub fn validate(&self) -> Result<(), ChiarellaError> {
        for (name, value) in [
            ("sigma_n", self.sigma_n),
            ("beta", self.beta),
            ("gamma_m", self.gamma_m),
            ("kappa", self.kappa),
            ("beta_hf", self.beta_hf),
            ("gamma_hf", self.gamma_hf),
        ] {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(ChiarellaError::Parameter { name, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FundamentalValue {
    /// Constant; `None` pins it to the initial price.
    Constant { value: Option<f64> },
    /// Gaussian random walk from the initial price.
    RandomWalk { step_std: f64 },
}

/// Zero-intelligence liquidity placed around the model price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundFlow {
    pub n_agents: u64,
    /// Mean limit orders per step.
    pub alpha: f64,
    pub delta: f64,
    /// Depth rate in ticks⁻¹.
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChiarellaConfig {
    pub dt: f64,
    pub kyle_lambda: f64,
    pub alpha_m: f64,
    pub alpha_hf: f64,
    pub momentum_scale: f64,
    pub hf_momentum_scale: f64,
    pub fundamental: FundamentalValue,
    pub order_scale: f64,
    pub background: BackgroundFlow,
    pub n_steps: u64,
    pub initial_price: Price,
    pub seed: u64,
}

/// One simulated second expressed in trading days (6.5 h session).
pub const SECOND_IN_DAYS: f64 = 1.0 / 23_400.0;

impl Default for ChiarellaConfig {
    fn default() -> Self {
        ChiarellaConfig {
            dt: SECOND_IN_DAYS,
            kyle_lambda: 2_340.0,
            alpha_m: 0.01,
            alpha_hf: 0.5,
            momentum_scale: SECOND_IN_DAYS,
            hf_momentum_scale: SECOND_IN_DAYS * 1e-5,
            fundamental: FundamentalValue::Constant { value: None },
            order_scale: 500.0,
            background: BackgroundFlow {
                n_agents: 1_000,
                alpha: 20.0,
                delta: 0.05,
                lambda: 0.5,
            },
            n_steps: 600,
            initial_price: 10_000,
            seed: 0,
        }
    }
}

impl ChiarellaConfig {
    pub fn validate(&self) -> Result<(), ChiarellaError> {
        if !(self.dt > 0.0) {
            return Err(ChiarellaError::Config("dt must be positive"));
        }
        if !(self.kyle_lambda > 0.0) {
            return Err(ChiarellaError::Config("kyle_lambda must be positive"));
        }
        if !(self.alpha_m > 0.0
            && self.alpha_m <= 1.0
            && self.alpha_hf > 0.0
            && self.alpha_hf <= 1.0)
        {
            return Err(ChiarellaError::Config(
                "trend decay rates must lie in (0, 1]",
            ));
        }
        if !(self.alpha_hf > self.alpha_m) {
            return Err(ChiarellaError::Config("alpha_hf must exceed alpha_m"));
        }
        if !(self.order_scale >= 0.0)
            || !(self.momentum_scale >= 0.0)
            || !(self.hf_momentum_scale >= 0.0)
        {
            return Err(ChiarellaError::Config("scales must be non-negative"));
        }
        if self.background.n_agents == 0
            || self.background.alpha / self.background.n_agents as f64 > 1.0
        {
            return Err(ChiarellaError::Config(
                "background alpha / n_agents must lie in [0, 1]",
            ));
        }
        if !(0.0..=1.0).contains(&self.background.delta) {
            return Err(ChiarellaError::Config(
                "background delta must lie in [0, 1]",
            ));
        }
        if self.initial_price < 2 {
            return Err(ChiarellaError::Config(
                "initial price must be at least two ticks",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiarellaState {
    pub price: f64,
    pub trend: f64,
    pub trend_hf: f64,
}

impl ChiarellaState {
    pub fn at(price: f64) -> Self {
        ChiarellaState {
            price,
            trend: 0.0,
            trend_hf: 0.0,
        }
    }
}

/// Per-class demand for one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Demand {
    pub fundamental: f64,
    pub momentum: f64,
    pub momentum_hf: f64,
    pub noise: f64,
}

impl Demand {
    pub fn total(&self) -> f64 {
        self.fundamental + self.momentum + self.momentum_hf + self.noise
    }
}

/// `kappa (v - p) dt`: buy when underpriced.
pub fn demand_fundamental(kappa: f64, value: f64, price: f64, dt: f64) -> f64 {
    kappa * (value - price) * dt
}

/// `beta tanh(gamma M)`, saturating at `±beta`.
pub fn demand_momentum(beta: f64, gamma: f64, trend: f64) -> f64 {
    beta * (gamma * trend).tanh()
}

/// Exponentially weighted moving average of price changes.
pub fn update_trend(trend: f64, alpha: f64, price_change: f64) -> f64 {
    (1.0 - alpha) * trend + alpha * price_change
}

/// Demand decomposition for a given state and noise draw.
pub fn demand(
    state: &ChiarellaState,
    theta: &ThetaChiarella,
    config: &ChiarellaConfig,
    value: f64,
    eps: f64,
) -> Demand {
    Demand {
        fundamental: demand_fundamental(theta.kappa, value, state.price, config.dt),
        momentum: config.momentum_scale * demand_momentum(theta.beta, theta.gamma_m, state.trend),
        momentum_hf: config.hf_momentum_scale
            * demand_momentum(theta.beta_hf, theta.gamma_hf, state.trend_hf),
        noise: theta.sigma_n * eps * config.dt.sqrt(),
    }
}

/// Advances the model price by one step using a fresh standard normal draw.
pub fn chiarella_step<R: Rng + ?Sized>(
    state: &ChiarellaState,
    theta: &ThetaChiarella,
    config: &ChiarellaConfig,
    value: f64,
    rng: &mut R,
) -> (ChiarellaState, Demand) {
    let eps: f64 = StandardNormal.sample(rng);
    step_with_noise(state, theta, config, value, eps)
}

pub fn step_with_noise(
    state: &ChiarellaState,
    theta: &ThetaChiarella,
    config: &ChiarellaConfig,
    value: f64,
    eps: f64,
) -> (ChiarellaState, Demand) {
    let d = demand(state, theta, config, value, eps);
    let dp = config.kyle_lambda * d.total();
    let next = ChiarellaState {
        price: state.price + dp,
        trend: update_trend(state.trend, config.alpha_m, dp),
        trend_hf: update_trend(state.trend_hf, config.alpha_hf, dp),
    };
    (next, d)
}

fn check_finite(state: &ChiarellaState, step: u64) -> Result<(), ChiarellaError> {
    let ok = state.price.is_finite() && state.trend.is_finite() && state.trend_hf.is_finite();
    if !ok || state.price < 2.0 {
        return Err(ChiarellaError::Diverged {
            step,
            price: state.price,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChiarellaRun {
    pub record: SimRecord,
    /// Model price after each step.
    pub model_prices: Vec<f64>,
    pub fundamental: Vec<f64>,
}

/// Simulates one session. Per step: model update, background cancellations,
/// background limit orders around the model price, then the demand market
/// order. The book is observed after each of the three book phases.
pub fn run_chiarella(
    theta: &ThetaChiarella,
    config: &ChiarellaConfig,
) -> Result<ChiarellaRun, ChiarellaError> {
    config.validate()?;
    theta.validate()?;
    let bg = config.background;
    let depth = DepthLaw::new(bg.lambda)?;
    let p_limit = bg.alpha / bg.n_agents as f64;

    // separate streams: the model path never depends on the book
    let mut model_rng = seeded(derive_seed(config.seed, 0));
    let mut rng = seeded(derive_seed(config.seed, 1));
    let mut book = OrderBook::new(config.initial_price);
    let mut ids = IdSource::default();
    let mut state = ChiarellaState::at(config.initial_price as f64);
    let mut value = match config.fundamental {
        FundamentalValue::Constant { value } => value.unwrap_or(config.initial_price as f64),
        FundamentalValue::RandomWalk { .. } => config.initial_price as f64,
    };
    let n = config.n_steps as usize;
    let mut run = ChiarellaRun {
        record: SimRecord {
            snapshots: Vec::with_capacity(n * flow::OBSERVATIONS_PER_STEP),
            trades: Vec::new(),
        },
        model_prices: Vec::with_capacity(n),
        fundamental: Vec::with_capacity(n),
    };

    for t in 1..=config.n_steps {
        book.set_clock(t);
        if let FundamentalValue::RandomWalk { step_std } = config.fundamental {
            let z: f64 = StandardNormal.sample(&mut model_rng);
            value += step_std * z;
        }
        let (next, d) = chiarella_step(&state, theta, config, value, &mut model_rng);
        check_finite(&next, t)?;
        state = next;
        run.model_prices.push(state.price);
        run.fundamental.push(value);

        flow::cancel_phase(&mut book, bg.delta, &mut rng);
        flow::observe(&book, &mut run.record.snapshots);

        let n_limit = flow::binomial(&mut rng, bg.n_agents, p_limit);
        let trades = flow::limit_phase(
            &mut book,
            n_limit,
            state.price,
            &depth,
            Placement::Marketable,
            &mut ids,
            &mut rng,
            None,
        )?;
        run.record.trades.extend(trades);
        flow::observe(&book, &mut run.record.snapshots);

        let total = d.total();
        let volume = (config.order_scale * total.abs()).round();
        if volume >= 1.0 && total != 0.0 {
            let side = if total > 0.0 { Side::Bid } else { Side::Ask };
            let fill = book
                .submit_market(Order::market(ids.next_id(), side, volume as u64, t))
                .map_err(FlowError::from)?;
            run.record.trades.extend(fill.trades);
        }
        flow::observe(&book, &mut run.record.snapshots);
    }
    book.clear_expired();
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_theta() -> ThetaChiarella {
        ThetaChiarella {
            sigma_n: 0.0,
            beta: 0.0,
            gamma_m: 0.0,
            kappa: 0.0,
            beta_hf: 0.0,
            gamma_hf: 0.0,
        }
    }

    #[test]
    fn fundamental_demand() {
        assert_eq!(demand_fundamental(0.7, 5.0, 5.0, 1.0), 0.0);
        assert!((demand_fundamental(0.5, 12.0, 10.0, 1.0) - 1.0).abs() < 1e-15);
        for (v, p) in [(3.0, 1.0), (1.0, 3.0), (-2.0, 4.0)] {
            let d = demand_fundamental(0.3, v, p, 0.1);
            assert_eq!(d.signum(), (v - p).signum());
        }
    }

    #[test]
    fn momentum_demand() {
        assert_eq!(demand_momentum(2.0, 1.0, 0.0), 0.0);
        assert!((demand_momentum(2.0, 1.0, 1.0) - 1.523_188_311_911_53).abs() < 1e-12);
        assert!((demand_momentum(2.0, 1.0, 1e6) - 2.0).abs() < 1e-12);
        assert!((demand_momentum(2.0, 1.0, -1e6) + 2.0).abs() < 1e-12);
        let mut prev = f64::NEG_INFINITY;
        for i in -50..50 {
            let d = demand_momentum(1.5, 0.3, i as f64 * 0.1);
            assert!(d > prev);
            prev = d;
        }
    }

    #[test]
    fn trend_update() {
        let mut m = 3.0;
        for _ in 0..10 {
            let next = update_trend(m, 0.2, 0.0);
            assert!((next - 0.8 * m).abs() < 1e-15);
            m = next;
        }
        assert_eq!(update_trend(7.0, 1.0, -2.5), -2.5);
        let mut m = 0.0;
        for _ in 0..2_000 {
            m = update_trend(m, 0.05, 1.7);
        }
        assert!((m - 1.7).abs() < 1e-12);
    }

    #[test]
    fn zero_parameters_hold_price() {
        let cfg = ChiarellaConfig::default();
        let mut s = ChiarellaState::at(100.0);
        let mut rng = seeded(1);
        for _ in 0..100 {
            s = chiarella_step(&s, &zero_theta(), &cfg, 120.0, &mut rng).0;
        }
        assert_eq!(s.price, 100.0);
    }

    #[test]
    fn decomposition_is_exact() {
        let cfg = ChiarellaConfig::default();
        let theta = ThetaChiarella::from_log10(&[-1.0, 0.0, 0.0, -0.5, 5.0, -1.0]).unwrap();
        let s = ChiarellaState {
            price: 10_010.0,
            trend: 0.4,
            trend_hf: -1.3,
        };
        let eps = 0.37;
        let (next, d) = step_with_noise(&s, &theta, &cfg, 10_000.0, eps);
        let parts = demand_fundamental(theta.kappa, 10_000.0, s.price, cfg.dt)
            + cfg.momentum_scale * demand_momentum(theta.beta, theta.gamma_m, s.trend)
            + cfg.hf_momentum_scale * demand_momentum(theta.beta_hf, theta.gamma_hf, s.trend_hf)
            + theta.sigma_n * eps * cfg.dt.sqrt();
        assert_eq!(d.total(), parts);
        assert_eq!(next.price, s.price + cfg.kyle_lambda * parts);
    }

    #[test]
    fn config_validation() {
        let mut cfg = ChiarellaConfig::default();
        cfg.alpha_hf = cfg.alpha_m;
        assert!(cfg.validate().is_err());
        let cfg = ChiarellaConfig {
            dt: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(ThetaChiarella::from_log10(&[0.0; 5]).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = ChiarellaConfig {
            n_steps: 50,
            kyle_lambda: 1e9,
            ..Default::default()
        };
        let theta = ThetaChiarella {
            sigma_n: 1.0,
            ..zero_theta()
        };
        assert!(matches!(
            run_chiarella(&theta, &cfg),
            Err(ChiarellaError::Diverged { .. })
        ));
    }
}
