//! Stylised-fact metrics for evaluating simulated and observed records.
//!
//! These never feed calibration. Estimator choices: Hurst exponent by
//! rescaled range with the Anis-Lloyd-Peters small-sample correction, Gamma
//! shape by the method of moments, price-impact exponent by log-log least
//! squares over logarithmic volume buckets.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::lob::MarketSnapshot;
use crate::record::SimRecord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FactsError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("metric undefined: {0}")]
    Undefined(&'static str),
}

pub type FactResult<T> = Result<T, FactsError>;

/// `r_t = ln(p_{t+h} / p_t)` for every `t` with `t + h < n`.
pub fn log_returns(prices: &[f64], horizon: usize) -> FactResult<Vec<f64>> {
    if horizon == 0 {
        return Err(FactsError::Input("horizon must be at least 1".into()));
    }
    if let Some(i) = prices.iter().position(|p| !(*p > 0.0)) {
        return Err(FactsError::Input(format!(
            "non-positive price {} at index {i}",
            prices[i]
        )));
    }
    if prices.len() <= horizon {
        return Ok(Vec::new());
    }
    Ok(prices
        .iter()
        .zip(&prices[horizon..])
        .map(|(a, b)| (b / a).ln())
        .collect())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn central_moment(x: &[f64], m: f64, k: i32) -> f64 {
    x.iter().map(|v| (v - m).powi(k)).sum::<f64>() / x.len() as f64
}

fn has_variance(x: &[f64]) -> bool {
    x.len() > 1 && x.iter().any(|v| *v != x[0])
}

/// Biased sample autocorrelation for lags `0..=max_lag`.
pub fn acf(series: &[f64], max_lag: usize) -> FactResult<Vec<f64>> {
    let n = series.len();
    if n <= max_lag {
        return Err(FactsError::Input(format!(
            "series of length {n} is too short for lag {max_lag}"
        )));
    }
    if !has_variance(series) {
        return Err(FactsError::Undefined(
            "autocorrelation of a constant series",
        ));
    }
    let m = mean(series);
    let dev: Vec<f64> = series.iter().map(|v| v - m).collect();
    let c0: f64 = dev.iter().map(|d| d * d).sum();
    Ok((0..=max_lag)
        .map(|k| dev.iter().zip(&dev[k..]).map(|(a, b)| a * b).sum::<f64>() / c0)
        .collect())
}

/// `(skewness, excess kurtosis)` from population moments.
pub fn moments(series: &[f64]) -> FactResult<(f64, f64)> {
    if !has_variance(series) {
        return Err(FactsError::Undefined("moments of a constant series"));
    }
    let m = mean(series);
    let m2 = central_moment(series, m, 2);
    let m3 = central_moment(series, m, 3);
    let m4 = central_moment(series, m, 4);
    Ok((m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0))
}

/// Anis-Lloyd expected R/S of `n` i.i.d. Gaussian values, with Peters'
/// `(n - 1/2) / n` factor.
pub fn expected_rescaled_range(n: usize) -> f64 {
    let nf = n as f64;
    let lead = if n <= 340 {
        (ln_gamma((nf - 1.0) / 2.0) - ln_gamma(nf / 2.0)).exp() / std::f64::consts::PI.sqrt()
    } else {
        1.0 / (nf * std::f64::consts::FRAC_PI_2).sqrt()
    };
    let sum: f64 = (1..n).map(|i| ((nf - i as f64) / i as f64).sqrt()).sum();
    (nf - 0.5) / nf * lead * sum
}

/// Mean R/S over the non-overlapping windows of length `w`.
pub fn rescaled_range(series: &[f64], w: usize) -> Option<f64> {
    let mut acc = 0.0;
    let mut count = 0;
    for chunk in series.chunks_exact(w) {
        let m = mean(chunk);
        let (mut cum, mut lo, mut hi) = (0.0f64, 0.0f64, 0.0f64);
        let mut ss = 0.0;
        for v in chunk {
            let d = v - m;
            cum += d;
            lo = lo.min(cum);
            hi = hi.max(cum);
            ss += d * d;
        }
        let s = (ss / w as f64).sqrt();
        if s > 0.0 {
            acc += (hi - lo) / s;
            count += 1;
        }
    }
    (count > 0).then(|| acc / count as f64)
}

pub const HURST_MIN_LEN: usize = 512;
const HURST_MIN_WINDOW: usize = 16;

/// Hurst exponent of an increment series (e.g. returns) by corrected R/S
/// over dyadic windows from 16 to half the series length.
pub fn hurst(series: &[f64]) -> FactResult<f64> {
    if series.len() < HURST_MIN_LEN {
        return Err(FactsError::Input(format!(
            "Hurst estimation needs at least {HURST_MIN_LEN} values, got {}",
            series.len()
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut w = HURST_MIN_WINDOW;
    while w <= series.len() / 2 {
        if let Some(rs) = rescaled_range(series, w) {
            xs.push((w as f64).ln());
            ys.push(rs.ln() - expected_rescaled_range(w).ln());
        }
        w *= 2;
    }
    if xs.len() < 2 {
        return Err(FactsError::Undefined("Hurst exponent of a constant series"));
    }
    Ok(0.5 + ols_slope(&xs, &ys)?)
}

pub fn ols_slope(x: &[f64], y: &[f64]) -> FactResult<f64> {
    if x.len() != y.len() || x.len() < 2 || !has_variance(x) {
        return Err(FactsError::Undefined(
            "regression needs two distinct abscissae",
        ));
    }
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    Ok(sxy / sxx)
}

pub fn pearson(a: &[f64], b: &[f64]) -> FactResult<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(FactsError::Input(
            "correlation needs two equal-length series of length >= 2".into(),
        ));
    }
    if !has_variance(a) || !has_variance(b) {
        return Err(FactsError::Undefined("correlation with a constant series"));
    }
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Population standard deviation of returns in each full window.
pub fn realized_volatility(returns: &[f64], window: usize) -> Vec<f64> {
    returns
        .chunks_exact(window.max(1))
        .map(|c| central_moment(c, mean(c), 2).sqrt())
        .collect()
}

fn window_sums(values: &[f64], window: usize) -> Vec<f64> {
    values
        .chunks_exact(window.max(1))
        .map(|c| c.iter().sum())
        .collect()
}

/// Correlation between windowed realized volatility and windowed traded volume.
/// `volumes[i]` is the volume traded over the same interval as `returns[i]`.
pub fn vol_volume_correlation(returns: &[f64], volumes: &[f64], window: usize) -> FactResult<f64> {
    if returns.len() != volumes.len() {
        return Err(FactsError::Input(
            "returns and volumes differ in length".into(),
        ));
    }
    pearson(
        &realized_volatility(returns, window),
        &window_sums(volumes, window),
    )
}

/// Correlation between windowed realized volatility and windowed mean return.
pub fn ret_vol_correlation(returns: &[f64], window: usize) -> FactResult<f64> {
    let means: Vec<f64> = returns.chunks_exact(window.max(1)).map(mean).collect();
    pearson(&realized_volatility(returns, window), &means)
}

/// Power-law exponent of `|price move|` against traded volume.
///
/// Observations with positive volume are bucketed by `floor(log2 V)`; the
/// slope of `ln mean|move|` on `ln mean V` across buckets is returned.
pub fn price_impact(volumes: &[f64], moves: &[f64]) -> FactResult<f64> {
    if volumes.len() != moves.len() {
        return Err(FactsError::Input(
            "volumes and moves differ in length".into(),
        ));
    }
    let mut buckets: std::collections::BTreeMap<i64, (f64, f64, usize)> = Default::default();
    for (&v, &m) in volumes.iter().zip(moves) {
        if v > 0.0 {
            let e = buckets
                .entry(v.log2().floor() as i64)
                .or_insert((0.0, 0.0, 0));
            e.0 += v;
            e.1 += m.abs();
            e.2 += 1;
        }
    }
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (sv, sm, n) in buckets.values() {
        if *sm > 0.0 {
            xs.push((sv / *n as f64).ln());
            ys.push((sm / *n as f64).ln());
        }
    }
    if xs.len() < 2 {
        return Err(FactsError::Undefined(
            "price impact needs two volume buckets with price moves",
        ));
    }
    ols_slope(&xs, &ys)
}

/// Method-of-moments Gamma shape `mean² / variance`.
pub fn fit_gamma(values: &[f64]) -> FactResult<f64> {
    if values.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(FactsError::Input(
            "Gamma fit needs finite non-negative values".into(),
        ));
    }
    if !has_variance(values) {
        return Err(FactsError::Undefined("Gamma shape of constant values"));
    }
    let m = mean(values);
    Ok(m * m / central_moment(values, m, 2))
}

/// 95% Bartlett band for the sample ACF of white noise of length `n`.
pub fn bartlett_band(n: usize) -> f64 {
    1.96 / (n as f64).sqrt()
}

/// Per-lag 95% bands from Bartlett's formula: under `rho_j = 0` for `j >= k`,
/// `var(r_k) ~ (1 + 2 sum_{j<k} r_j^2) / n`. Entry `k - 1` is the band for
/// lag `k`; lag 1 reduces to [`bartlett_band`].
pub fn bartlett_bands(acf: &[f64], n: usize) -> Vec<f64> {
    let mut acc = 1.0;
    acf.iter()
        .skip(1)
        .map(|r| {
            let band = 1.96 * (acc / n as f64).sqrt();
            acc += 2.0 * r * r;
            band
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactsConfig {
    pub max_lag: usize,
    pub horizons: [usize; 2],
    pub window: usize,
}

impl Default for FactsConfig {
    fn default() -> Self {
        FactsConfig {
            max_lag: 50,
            horizons: [1, 60],
            window: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonMoments {
    pub horizon: usize,
    pub skewness: Option<f64>,
    pub excess_kurtosis: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StylisedFactReport {
    pub n_ticks: usize,
    pub horizons: Vec<HorizonMoments>,
    pub acf_returns: Option<Vec<f64>>,
    pub acf_abs_returns: Option<Vec<f64>>,
    /// Bartlett bands for return-ACF lags `1..=max_lag`.
    pub bartlett_bands: Option<Vec<f64>>,
    /// Fraction of lags `1..=max_lag` whose return ACF lies inside its band.
    pub acf_within_band: Option<f64>,
    /// Fraction of lags `1..=max_lag` with positive absolute-return ACF.
    pub abs_acf_positive: Option<f64>,
    pub hurst: Option<f64>,
    pub vol_volume_corr: Option<f64>,
    pub ret_vol_corr: Option<f64>,
    pub impact_exponent: Option<f64>,
    pub gamma_shape_bid: Option<f64>,
    pub gamma_shape_ask: Option<f64>,
}

/// Per-tick view of a record: end-of-tick snapshot plus volume traded in the tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TickSeries {
    pub mids: Vec<f64>,
    pub traded: Vec<f64>,
    pub bid_volumes: Vec<f64>,
    pub ask_volumes: Vec<f64>,
}

/// Samples ticks `1..=last timestep` carrying the last observation forward.
pub fn tick_series(record: &SimRecord) -> TickSeries {
    let rows: &[MarketSnapshot] = &record.snapshots;
    let last = rows.last().map_or(0, |s| s.timestep) as usize;
    let mut traded = vec![0.0; last + 1];
    for t in &record.trades {
        if (t.timestep as usize) <= last {
            traded[t.timestep as usize] += t.volume as f64;
        }
    }
    let mut out = TickSeries {
        mids: Vec::with_capacity(last),
        traded: traded[1..].to_vec(),
        bid_volumes: Vec::new(),
        ask_volumes: Vec::new(),
    };
    let mut idx = 0;
    for k in 1..=last as u64 {
        while idx < rows.len() && rows[idx].timestep <= k {
            idx += 1;
        }
        let s = &rows[idx.saturating_sub(1)];
        out.mids.push(s.mid_price());
        if s.best_bid.is_some() {
            out.bid_volumes.push(s.best_bid_volume as f64);
        }
        if s.best_ask.is_some() {
            out.ask_volumes.push(s.best_ask_volume as f64);
        }
    }
    out
}

/// Impact observations: traded volume in each tick against the absolute mid
/// change across that tick.
pub fn impact_observations(ticks: &TickSeries) -> (Vec<f64>, Vec<f64>) {
    let moves: Vec<f64> = ticks.mids.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    (ticks.traded[1..].to_vec(), moves)
}

/// All metrics on one record. Undefined metrics are `None`.
pub fn report(record: &SimRecord, config: &FactsConfig) -> FactResult<StylisedFactReport> {
    let ticks = tick_series(record);
    let r1 = log_returns(&ticks.mids, 1)?;
    let horizons = config
        .horizons
        .iter()
        .map(|&h| {
            let r = log_returns(&ticks.mids, h)?;
            let m = moments(&r).ok();
            Ok(HorizonMoments {
                horizon: h,
                skewness: m.map(|m| m.0),
                excess_kurtosis: m.map(|m| m.1),
            })
        })
        .collect::<FactResult<Vec<_>>>()?;
    let abs: Vec<f64> = r1.iter().map(|r| r.abs()).collect();
    let acf_returns = acf(&r1, config.max_lag).ok();
    let acf_abs_returns = acf(&abs, config.max_lag).ok();
    let bands = acf_returns.as_ref().map(|a| bartlett_bands(a, r1.len()));
    let acf_within_band = acf_returns.as_ref().zip(bands.as_ref()).map(|(a, b)| {
        a[1..]
            .iter()
            .zip(b)
            .filter(|(v, band)| v.abs() <= **band)
            .count() as f64
            / config.max_lag as f64
    });
    let abs_acf_positive = acf_abs_returns
        .as_ref()
        .map(|a| a[1..].iter().filter(|v| **v > 0.0).count() as f64 / config.max_lag as f64);
    let (impact_v, impact_m) = impact_observations(&ticks);
    Ok(StylisedFactReport {
        n_ticks: ticks.mids.len(),
        horizons,
        acf_returns,
        acf_abs_returns,
        bartlett_bands: bands,
        acf_within_band,
        abs_acf_positive,
        hurst: hurst(&r1).ok(),
        vol_volume_corr: vol_volume_correlation(&r1, &ticks.traded[1..], config.window).ok(),
        ret_vol_corr: ret_vol_correlation(&r1, config.window).ok(),
        impact_exponent: price_impact(&impact_v, &impact_m).ok(),
        gamma_shape_bid: fit_gamma(&ticks.bid_volumes).ok(),
        gamma_shape_ask: fit_gamma(&ticks.ask_volumes).ok(),
    })
}
