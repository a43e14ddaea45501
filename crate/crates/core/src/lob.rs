//! Continuous double auction limit order book.
//!
//! Prices are integer ticks (tick size 1). Resting orders queue FIFO within a
//! price level; incoming orders walk the opposite side best price first.
//! Cancellation is lazy: the order leaves the id index immediately and its
//! queue entry is skipped when it reaches the front of the level.

use std::collections::{BTreeMap, VecDeque};

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type OrderId = u64;
pub type Price = i64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LobError {
    #[error("invalid order {id}: {reason}")]
    InvalidOrder { id: OrderId, reason: &'static str },
    #[error("order id {0} is already resting in the book")]
    DuplicateId(OrderId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Bid,
    Ask,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Bid => Side::Ask,
            Side::Ask => Side::Bid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderKind {
    Limit { price: Price },
    Market,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Order {
    pub id: OrderId,
    pub side: Side,
    pub kind: OrderKind,
    pub volume: u64,
    pub submitted_at: u64,
    pub agent_id: u64,
}

impl Order {
    pub fn limit(id: OrderId, side: Side, price: Price, volume: u64, submitted_at: u64) -> Self {
        Order {
            id,
            side,
            kind: OrderKind::Limit { price },
            volume,
            submitted_at,
            agent_id: 0,
        }
    }

    pub fn market(id: OrderId, side: Side, volume: u64, submitted_at: u64) -> Self {
        Order {
            id,
            side,
            kind: OrderKind::Market,
            volume,
            submitted_at,
            agent_id: 0,
        }
    }

    pub fn with_agent(mut self, agent_id: u64) -> Self {
        self.agent_id = agent_id;
        self
    }

    pub fn price(&self) -> Option<Price> {
        match self.kind {
            OrderKind::Limit { price } => Some(price),
            OrderKind::Market => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trade {
    /// Always the maker's limit price.
    pub price: Price,
    pub volume: u64,
    pub aggressor_side: Side,
    pub maker_order_id: OrderId,
    pub taker_order_id: OrderId,
    pub timestep: u64,
}

/// Result of a market order. Volume that found no liquidity is dropped.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MarketFill {
    pub trades: Vec<Trade>,
    pub discarded: u64,
}

impl MarketFill {
    pub fn no_liquidity(&self) -> bool {
        self.trades.is_empty()
    }
}

/// Top-of-book view. The mid price is kept exactly as twice its value so
/// half-tick mids stay rational.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarketSnapshot {
    pub timestep: u64,
    pub best_bid: Option<Price>,
    pub best_bid_volume: u64,
    pub best_ask: Option<Price>,
    pub best_ask_volume: u64,
    pub mid_twice: i64,
    pub last_trade: Option<Price>,
}

impl MarketSnapshot {
    pub fn mid_price(&self) -> f64 {
        self.mid_twice as f64 / 2.0
    }

    pub fn spread(&self) -> Option<Price> {
        Some(self.best_ask? - self.best_bid?)
    }
}

#[derive(Debug, Clone, Default)]
struct Level {
    queue: VecDeque<(OrderId, u64)>,
    volume: u64,
    live: usize,
}

#[derive(Debug, Clone)]
struct Resting {
    side: Side,
    price: Price,
    volume: u64,
    seq: u64,
    slot: usize,
}

#[derive(Debug, Clone)]
pub struct OrderBook {
    bids: BTreeMap<Price, Level>,
    asks: BTreeMap<Price, Level>,
    orders: FxHashMap<OrderId, Resting>,
    resting_ids: Vec<OrderId>,
    next_seq: u64,
    clock: u64,
    last_trade: Option<Price>,
    initial_price: Price,
}

impl OrderBook {
    pub fn new(initial_price: Price) -> Self {
        OrderBook {
            bids: BTreeMap::new(),
            asks: BTreeMap::new(),
            orders: FxHashMap::default(),
            resting_ids: Vec::new(),
            next_seq: 0,
            clock: 0,
            last_trade: None,
            initial_price,
        }
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn set_clock(&mut self, timestep: u64) {
        self.clock = timestep;
    }

    pub fn initial_price(&self) -> Price {
        self.initial_price
    }

    pub fn last_trade(&self) -> Option<Price> {
        self.last_trade
    }

    pub fn best_bid(&self) -> Option<(Price, u64)> {
        self.bids.last_key_value().map(|(p, l)| (*p, l.volume))
    }

    pub fn best_ask(&self) -> Option<(Price, u64)> {
        self.asks.first_key_value().map(|(p, l)| (*p, l.volume))
    }

    /// Twice the mid price; falls back to the last trade, then the initial
    /// price, when either side is empty.
    pub fn mid_twice(&self) -> i64 {
        match (self.best_bid(), self.best_ask()) {
            (Some((b, _)), Some((a, _))) => b + a,
            _ => 2 * self.last_trade.unwrap_or(self.initial_price),
        }
    }

    pub fn mid_price(&self) -> f64 {
        self.mid_twice() as f64 / 2.0
    }

    pub fn resting_count(&self) -> usize {
        self.orders.len()
    }

    /// Ids of every resting order, in no particular order.
    pub fn resting_ids(&self) -> &[OrderId] {
        &self.resting_ids
    }

    pub fn depth_at(&self, side: Side, price: Price) -> u64 {
        let levels = match side {
            Side::Bid => &self.bids,
            Side::Ask => &self.asks,
        };
        levels.get(&price).map_or(0, |l| l.volume)
    }

    /// Aggregated `(price, volume)` levels, best first.
    pub fn levels(&self, side: Side) -> Vec<(Price, u64)> {
        match side {
            Side::Bid => self
                .bids
                .iter()
                .rev()
                .map(|(p, l)| (*p, l.volume))
                .collect(),
            Side::Ask => self.asks.iter().map(|(p, l)| (*p, l.volume)).collect(),
        }
    }

    /// Live orders at one level as `(id, remaining volume)` in queue order.
    pub fn queue_at(&self, side: Side, price: Price) -> Vec<(OrderId, u64)> {
        let levels = match side {
            Side::Bid => &self.bids,
            Side::Ask => &self.asks,
        };
        let Some(level) = levels.get(&price) else {
            return Vec::new();
        };
        level
            .queue
            .iter()
            .filter_map(|&(id, seq)| match self.orders.get(&id) {
                Some(r) if r.seq == seq => Some((id, r.volume)),
                _ => None,
            })
            .collect()
    }

    pub fn snapshot(&self) -> MarketSnapshot {
        let bid = self.best_bid();
        let ask = self.best_ask();
        MarketSnapshot {
            timestep: self.clock,
            best_bid: bid.map(|b| b.0),
            best_bid_volume: bid.map_or(0, |b| b.1),
            best_ask: ask.map(|a| a.0),
            best_ask_volume: ask.map_or(0, |a| a.1),
            mid_twice: self.mid_twice(),
            last_trade: self.last_trade,
        }
    }

    fn validate(&self, order: &Order) -> Result<(), LobError> {
        if order.volume == 0 {
            return Err(LobError::InvalidOrder {
                id: order.id,
                reason: "volume must be at least 1",
            });
        }
        if self.orders.contains_key(&order.id) {
            return Err(LobError::DuplicateId(order.id));
        }
        Ok(())
    }

    /// Matches the crossing part of a limit order and rests the remainder.
    pub fn submit_limit(&mut self, order: Order) -> Result<Vec<Trade>, LobError> {
        let OrderKind::Limit { price } = order.kind else {
            return Err(LobError::InvalidOrder {
                id: order.id,
                reason: "submit_limit requires a limit order",
            });
        };
        if price < 1 {
            return Err(LobError::InvalidOrder {
                id: order.id,
                reason: "limit price must be at least one tick",
            });
        }
        self.validate(&order)?;
        let mut trades = Vec::new();
        let remaining = self.execute(&order, Some(price), &mut trades);
        if remaining > 0 {
            self.rest(order.id, order.side, price, remaining);
        }
        Ok(trades)
    }

    /// Executes against the opposite side best first; unfillable volume is discarded.
    pub fn submit_market(&mut self, order: Order) -> Result<MarketFill, LobError> {
        if order.kind != OrderKind::Market {
            return Err(LobError::InvalidOrder {
                id: order.id,
                reason: "submit_market requires a market order",
            });
        }
        self.validate(&order)?;
        let mut trades = Vec::new();
        let discarded = self.execute(&order, None, &mut trades);
        Ok(MarketFill { trades, discarded })
    }

    fn rest(&mut self, id: OrderId, side: Side, price: Price, volume: u64) {
        let seq = self.next_seq;
        self.next_seq += 1;
        let level = match side {
            Side::Bid => self.bids.entry(price).or_default(),
            Side::Ask => self.asks.entry(price).or_default(),
        };
        level.queue.push_back((id, seq));
        level.volume += volume;
        level.live += 1;
        self.orders.insert(
            id,
            Resting {
                side,
                price,
                volume,
                seq,
                slot: self.resting_ids.len(),
            },
        );
        self.resting_ids.push(id);
    }

    fn unlink(&mut self, id: OrderId) -> Option<Resting> {
        let resting = self.orders.remove(&id)?;
        let last = self.resting_ids.len() - 1;
        self.resting_ids.swap_remove(resting.slot);
        if resting.slot != last {
            let moved = self.resting_ids[resting.slot];
            if let Some(r) = self.orders.get_mut(&moved) {
                r.slot = resting.slot;
            }
        }
        Some(resting)
    }

    /// Returns the unfilled volume.
    fn execute(&mut self, taker: &Order, limit: Option<Price>, trades: &mut Vec<Trade>) -> u64 {
        let mut remaining = taker.volume;
        while remaining > 0 {
            let best = match taker.side {
                Side::Bid => self.asks.first_key_value().map(|(p, _)| *p),
                Side::Ask => self.bids.last_key_value().map(|(p, _)| *p),
            };
            let Some(price) = best else { break };
            let crosses = match (taker.side, limit) {
                (_, None) => true,
                (Side::Bid, Some(lim)) => price <= lim,
                (Side::Ask, Some(lim)) => price >= lim,
            };
            if !crosses {
                break;
            }
            let levels = match taker.side {
                Side::Bid => &mut self.asks,
                Side::Ask => &mut self.bids,
            };
            let level = levels.get_mut(&price).expect("best level exists");
            // skip entries left behind by cancellations
            let maker_id = loop {
                let &(id, seq) = level.queue.front().expect("live level has a live order");
                match self.orders.get(&id) {
                    Some(r) if r.seq == seq => break id,
                    _ => {
                        level.queue.pop_front();
                    }
                }
            };
            let maker = self.orders.get_mut(&maker_id).expect("maker is resting");
            let fill = remaining.min(maker.volume);
            maker.volume -= fill;
            level.volume -= fill;
            remaining -= fill;
            trades.push(Trade {
                price,
                volume: fill,
                aggressor_side: taker.side,
                maker_order_id: maker_id,
                taker_order_id: taker.id,
                timestep: self.clock,
            });
            self.last_trade = Some(price);
            if maker.volume == 0 {
                level.queue.pop_front();
                level.live -= 1;
                if level.live == 0 {
                    levels.remove(&price);
                }
                self.unlink(maker_id);
            }
        }
        remaining
    }

    /// Removes a resting order. Absent ids are a no-op returning `false`.
    pub fn cancel(&mut self, id: OrderId) -> bool {
        let Some(resting) = self.unlink(id) else {
            return false;
        };
        let levels = match resting.side {
            Side::Bid => &mut self.bids,
            Side::Ask => &mut self.asks,
        };
        if let Some(level) = levels.get_mut(&resting.price) {
            level.volume -= resting.volume;
            level.live -= 1;
            if level.live == 0 {
                levels.remove(&resting.price);
            }
        }
        true
    }

    /// End-of-session expiry: drops every resting order.
    pub fn clear_expired(&mut self) -> usize {
        let n = self.orders.len();
        self.bids.clear();
        self.asks.clear();
        self.orders.clear();
        self.resting_ids.clear();
        n
    }
}
