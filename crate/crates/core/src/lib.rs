//! Desk-scale market simulation toolkit.
//!
//! * [`lob`] is a price-time-priority continuous double auction.
//! * [`zi`] and [`chiarella`] drive the book with zero-intelligence and
//!   extended Chiarella order flow.
//! * [`features`] turns snapshot records into fixed-length observation vectors.
//! * [`facts`] computes stylised-fact metrics for evaluation.

pub mod chiarella;
pub mod facts;
pub mod features;
pub mod flow;
pub mod lob;
pub mod prior;
pub mod record;
pub mod rng;
pub mod zi;

pub use lob::{MarketSnapshot, Order, OrderBook, OrderKind, Side, Trade};
pub use prior::PriorSpec;
pub use record::SimRecord;
