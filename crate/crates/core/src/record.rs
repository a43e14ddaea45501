//! Raw simulation output and its CSV form.
//!
//! The snapshot CSV has a mandatory header
//! `timestep,best_bid,best_bid_vol,best_ask,best_ask_vol,mid,last_trade`.
//! Empty sides and a missing last trade are empty cells. Prices are integer
//! ticks; `mid` may carry a `.5`. Several rows may share a timestep when a
//! simulator observes the book more than once per step; rows must be sorted
//! by timestep.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lob::{MarketSnapshot, Price, Side, Trade};

pub const SNAPSHOT_COLUMNS: [&str; 7] = [
    "timestep",
    "best_bid",
    "best_bid_vol",
    "best_ask",
    "best_ask_vol",
    "mid",
    "last_trade",
];

pub const TRADE_COLUMNS: [&str; 6] = [
    "timestep",
    "price",
    "volume",
    "aggressor_side",
    "maker_order_id",
    "taker_order_id",
];

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("line {line}, column `{column}`: cannot parse {value:?}")]
    BadCell {
        line: u64,
        column: &'static str,
        value: String,
    },
    #[error("line {line}: timestep {timestep} is earlier than the previous row")]
    Unsorted { line: u64, timestep: u64 },
    #[error("record has no rows")]
    Empty,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub snapshots: Vec<MarketSnapshot>,
    pub trades: Vec<Trade>,
}

impl SimRecord {
    pub fn last_timestep(&self) -> Option<u64> {
        self.snapshots.last().map(|s| s.timestep)
    }

    pub fn write_snapshots_csv<W: Write>(&self, out: W) -> Result<(), RecordError> {
        write_snapshots_csv(&self.snapshots, out)
    }

    pub fn write_trades_csv<W: Write>(&self, out: W) -> Result<(), RecordError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRADE_COLUMNS)?;
        for t in &self.trades {
            let side = match t.aggressor_side {
                Side::Bid => "bid",
                Side::Ask => "ask",
            };
            w.write_record([
                t.timestep.to_string(),
                t.price.to_string(),
                t.volume.to_string(),
                side.to_string(),
                t.maker_order_id.to_string(),
                t.taker_order_id.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn format_mid(mid_twice: i64) -> String {
    if mid_twice % 2 == 0 {
        (mid_twice / 2).to_string()
    } else {
        format!("{}", mid_twice as f64 / 2.0)
    }
}

pub fn write_snapshots_csv<W: Write>(rows: &[MarketSnapshot], out: W) -> Result<(), RecordError> {
    let opt = |p: Option<Price>| p.map(|v| v.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SNAPSHOT_COLUMNS)?;
    for s in rows {
        w.write_record([
            s.timestep.to_string(),
            opt(s.best_bid),
            s.best_bid_volume.to_string(),
            opt(s.best_ask),
            s.best_ask_volume.to_string(),
            format_mid(s.mid_twice),
            opt(s.last_trade),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cell(rec: &csv::StringRecord, idx: usize) -> &str {
    rec.get(idx).unwrap_or("").trim()
}

fn parse_u64(v: &str, line: u64, column: &'static str) -> Result<u64, RecordError> {
    v.parse().map_err(|_| RecordError::BadCell {
        line,
        column,
        value: v.to_string(),
    })
}

fn parse_opt_price(v: &str, line: u64, column: &'static str) -> Result<Option<Price>, RecordError> {
    if v.is_empty() {
        return Ok(None);
    }
    v.parse().map(Some).map_err(|_| RecordError::BadCell {
        line,
        column,
        value: v.to_string(),
    })
}

/// Reads a snapshot CSV. Columns are located by header name, so extra
/// columns and reordering are tolerated.
pub fn read_snapshots_csv<R: Read>(input: R) -> Result<Vec<MarketSnapshot>, RecordError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let mut idx = [0usize; 7];
    for (slot, name) in idx.iter_mut().zip(SNAPSHOT_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| RecordError::MissingColumn(name.to_string()))?;
    }
    let mut rows = Vec::new();
    let mut prev = 0u64;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i as u64 + 2;
        let timestep = parse_u64(cell(&rec, idx[0]), line, "timestep")?;
        if timestep < prev {
            return Err(RecordError::Unsorted { line, timestep });
        }
        prev = timestep;
        let best_bid = parse_opt_price(cell(&rec, idx[1]), line, "best_bid")?;
        let best_bid_volume = parse_u64(cell(&rec, idx[2]), line, "best_bid_vol")?;
        let best_ask = parse_opt_price(cell(&rec, idx[3]), line, "best_ask")?;
        let best_ask_volume = parse_u64(cell(&rec, idx[4]), line, "best_ask_vol")?;
        let mid_raw = cell(&rec, idx[5]);
        let mid: f64 = mid_raw.parse().map_err(|_| RecordError::BadCell {
            line,
            column: "mid",
            value: mid_raw.to_string(),
        })?;
        if !mid.is_finite() || mid <= 0.0 {
            return Err(RecordError::BadCell {
                line,
                column: "mid",
                value: mid_raw.to_string(),
            });
        }
        let last_trade = parse_opt_price(cell(&rec, idx[6]), line, "last_trade")?;
        rows.push(MarketSnapshot {
            timestep,
            best_bid,
            best_bid_volume,
            best_ask,
            best_ask_volume,
            mid_twice: (2.0 * mid).round() as i64,
            last_trade,
        });
    }
    if rows.is_empty() {
        return Err(RecordError::Empty);
    }
    Ok(rows)
}

/// Reads a trade CSV written by [`SimRecord::write_trades_csv`].
pub fn read_trades_csv<R: Read>(input: R) -> Result<Vec<Trade>, RecordError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let mut idx = [0usize; 6];
    for (slot, name) in idx.iter_mut().zip(TRADE_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| RecordError::MissingColumn(name.to_string()))?;
    }
    let mut trades = Vec::new();
    let mut prev = 0u64;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i as u64 + 2;
        let timestep = parse_u64(cell(&rec, idx[0]), line, "timestep")?;
        if timestep < prev {
            return Err(RecordError::Unsorted { line, timestep });
        }
        prev = timestep;
        let price_raw = cell(&rec, idx[1]);
        let price: Price = price_raw.parse().map_err(|_| RecordError::BadCell {
            line,
            column: "price",
            value: price_raw.to_string(),
        })?;
        let volume = parse_u64(cell(&rec, idx[2]), line, "volume")?;
        let aggressor_side = match cell(&rec, idx[3]) {
            "bid" => Side::Bid,
            "ask" => Side::Ask,
            other => {
                return Err(RecordError::BadCell {
                    line,
                    column: "aggressor_side",
                    value: other.to_string(),
                })
            }
        };
        trades.push(Trade {
            price,
            volume,
            aggressor_side,
            maker_order_id: parse_u64(cell(&rec, idx[4]), line, "maker_order_id")?,
            taker_order_id: parse_u64(cell(&rec, idx[5]), line, "taker_order_id")?,
            timestep,
        });
    }
    Ok(trades)
}
