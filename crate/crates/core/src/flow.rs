//! Stochastic order flow shared by the zero-intelligence traders and the
//! liquidity background of the Chiarella model.
//!
//! One step is three phases: cancellations, limit orders around a reference
//! price, then market orders. The book is observed after each phase.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Exp};
use thiserror::Error;

use crate::lob::{LobError, MarketSnapshot, Order, OrderBook, OrderId, Price, Side, Trade};

/// Book observations recorded per simulated step (one after each phase).
pub const OBSERVATIONS_PER_STEP: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("parameter `{name}` = {value} is invalid: {reason}")]
    Parameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error(transparent)]
    Book(#[from] LobError),
}

/// Monotone order ids for one session.
#[derive(Debug, Clone, Default)]
pub struct IdSource(OrderId);

impl IdSource {
    pub fn next_id(&mut self) -> OrderId {
        self.0 += 1;
        self.0
    }
}

/// Rounds a raw exponential draw to whole ticks and caps it at `max_depth`
/// so prices stay positive.
///
/// Depth is measured from the tick at or beyond the mid on the order's own
/// side, so depth 0 quotes at `floor(mid)` / `ceil(mid)`. That lets new
/// orders improve a two-tick spread; a one-tick floor would pin the touch
/// whenever the spread is even.
pub fn depth_from_draw(draw: f64, max_depth: i64) -> i64 {
    (draw.round() as i64).clamp(0, max_depth.max(0))
}

/// Depth sampler with rate `lambda` (mean depth `1/lambda` ticks).
#[derive(Debug, Clone, Copy)]
pub struct DepthLaw {
    exp: Exp<f64>,
}

impl DepthLaw {
    pub fn new(lambda: f64) -> Result<Self, FlowError> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(FlowError::Parameter {
                name: "lambda",
                value: lambda,
                reason: "depth rate must be positive",
            });
        }
        Ok(DepthLaw {
            exp: Exp::new(lambda).expect("positive rate"),
        })
    }

    pub fn draw_raw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.exp.sample(rng)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, max_depth: i64) -> i64 {
        depth_from_draw(self.draw_raw(rng), max_depth)
    }
}

/// Convenience wrapper: one depth draw for rate `lambda`, capped at `max_depth`.
pub fn sample_depth<R: Rng + ?Sized>(
    rng: &mut R,
    lambda: f64,
    max_depth: i64,
) -> Result<i64, FlowError> {
    Ok(DepthLaw::new(lambda)?.sample(rng, max_depth))
}

pub fn binomial<R: Rng + ?Sized>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial").sample(rng)
}

/// Cancels each resting order independently with probability `delta`.
///
/// The count is drawn as Binomial(N, delta) and that many distinct orders
/// are chosen uniformly, which has the same law as independent coin flips.
pub fn cancel_phase<R: Rng + ?Sized>(book: &mut OrderBook, delta: f64, rng: &mut R) -> u64 {
    let n = binomial(rng, book.resting_count() as u64, delta);
    for _ in 0..n {
        let ids = book.resting_ids();
        let id = ids[rng.random_range(0..ids.len())];
        book.cancel(id);
    }
    n
}

/// Largest depth keeping a bid placed at `floor(reference) - depth` at one
/// tick or more.
pub fn max_depth_below(reference: f64) -> i64 {
    reference.floor() as i64 - 1
}

/// How limit orders relate to the opposite side of the book.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    /// Never trade on arrival: bids stay below the best ask and asks above
    /// the best bid. Orders that cannot be placed passively are dropped.
    Passive,
    /// Orders go wherever the reference puts them and may execute.
    Marketable,
}

/// Submits `n` unit limit orders with fair-coin sides: bids at
/// `floor(reference) - D`, asks at `ceil(reference) + D`. `raw_depths`, when
/// given, receives the unrounded exponential draws. Returns trades and the
/// number of orders placed.
#[allow(clippy::too_many_arguments)]
pub fn limit_phase<R: Rng + ?Sized>(
    book: &mut OrderBook,
    n: u64,
    reference: f64,
    depth: &DepthLaw,
    placement: Placement,
    ids: &mut IdSource,
    rng: &mut R,
    mut raw_depths: Option<&mut Vec<f64>>,
) -> Result<Vec<Trade>, FlowError> {
    let mut trades = Vec::new();
    let max_depth = max_depth_below(reference);
    let t = book.clock();
    for _ in 0..n {
        let side = if rng.random_bool(0.5) {
            Side::Bid
        } else {
            Side::Ask
        };
        let raw = depth.draw_raw(rng);
        if let Some(out) = raw_depths.as_deref_mut() {
            out.push(raw);
        }
        let d = depth_from_draw(raw, max_depth);
        let mut price: Price = match side {
            Side::Bid => (reference.floor() as i64 - d).max(1),
            Side::Ask => reference.ceil() as i64 + d,
        };
        if placement == Placement::Passive {
            // the mid falls back to the last trade when a side is empty, so
            // the reference alone does not rule out a fill
            match side {
                Side::Bid => {
                    if let Some((ask, _)) = book.best_ask() {
                        price = price.min(ask - 1);
                    }
                }
                Side::Ask => {
                    if let Some((bid, _)) = book.best_bid() {
                        price = price.max(bid + 1);
                    }
                }
            }
            if price < 1 {
                continue;
            }
        }
        trades.extend(book.submit_limit(Order::limit(ids.next_id(), side, price, 1, t))?);
    }
    Ok(trades)
}

/// Submits `n` unit market orders with fair-coin sides.
pub fn market_phase<R: Rng + ?Sized>(
    book: &mut OrderBook,
    n: u64,
    ids: &mut IdSource,
    rng: &mut R,
) -> Result<Vec<Trade>, FlowError> {
    let mut trades = Vec::new();
    let t = book.clock();
    for _ in 0..n {
        let side = if rng.random_bool(0.5) {
            Side::Bid
        } else {
            Side::Ask
        };
        let fill = book.submit_market(Order::market(ids.next_id(), side, 1, t))?;
        trades.extend(fill.trades);
    }
    Ok(trades)
}

pub(crate) fn observe(book: &OrderBook, out: &mut Vec<MarketSnapshot>) {
    out.push(book.snapshot());
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn depth_floor_and_clamp() {
        assert_eq!(depth_from_draw(0.2, 100), 0);
        assert_eq!(depth_from_draw(0.7, 100), 1);
        assert_eq!(depth_from_draw(2.6, 100), 3);
        // mid 3 ticks: bid must stay at >= 1, so depth <= 2
        assert_eq!(depth_from_draw(10.0, max_depth_below(3.0)), 2);
        assert_eq!(depth_from_draw(10.0, max_depth_below(1.0)), 0);
    }

    #[test]
    fn rejects_bad_rate() {
        assert!(DepthLaw::new(0.0).is_err());
        assert!(DepthLaw::new(-1.0).is_err());
        assert!(sample_depth(&mut seeded(0), f64::NAN, 10).is_err());
    }

    #[test]
    fn depth_mean_matches_rounded_exponential() {
        // E[round(E)] for E ~ Exp(1) = sum_k k (e^{-(k-0.5)} - e^{-(k+0.5)}).
        let oracle: f64 = {
            let mut acc = 0.0;
            for k in 1..200 {
                let k = k as f64;
                acc += k * ((-(k - 0.5)).exp() - (-(k + 0.5)).exp());
            }
            acc
        };
        let law = DepthLaw::new(1.0).unwrap();
        let mut rng = seeded(11);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| law.sample(&mut rng, i64::MAX) as f64)
            .sum::<f64>()
            / n as f64;
        assert!((mean - oracle).abs() / oracle < 0.02, "{mean} vs {oracle}");
    }

    #[test]
    fn cancel_all_with_unit_probability() {
        let mut book = OrderBook::new(100);
        let mut ids = IdSource::default();
        let law = DepthLaw::new(0.5).unwrap();
        let mut rng = seeded(5);
        limit_phase(
            &mut book,
            50,
            100.0,
            &law,
            Placement::Passive,
            &mut ids,
            &mut rng,
            None,
        )
        .unwrap();
        assert_eq!(book.resting_count(), 50);
        assert_eq!(cancel_phase(&mut book, 1.0, &mut rng), 50);
        assert_eq!(book.resting_count(), 0);
    }

    #[test]
    fn passive_orders_never_fill_when_one_side_is_empty() {
        // only asks at 100..; the mid falls back to the last trade above them
        let mut book = OrderBook::new(100);
        book.submit_limit(Order::limit(1_000, Side::Ask, 100, 5, 0))
            .unwrap();
        book.submit_limit(Order::limit(1_001, Side::Bid, 100, 1, 0))
            .unwrap();
        assert_eq!(book.mid_price(), 100.0);
        assert_eq!(book.best_bid(), None);
        let law = DepthLaw::new(5.0).unwrap();
        let mut ids = IdSource::default();
        let mid = book.mid_price();
        let trades = limit_phase(
            &mut book,
            200,
            mid,
            &law,
            Placement::Passive,
            &mut ids,
            &mut seeded(1),
            None,
        )
        .unwrap();
        assert!(trades.is_empty());
        assert!(book.best_bid().unwrap().0 < book.best_ask().unwrap().0);
    }
}
