//! Monotone rational-quadratic splines on `[-B, B]`, identity outside.
//!
//! Unconstrained parameters per dimension are laid out as
//! `[widths (K), heights (K), interior derivatives (K-1)]`. Widths and heights
//! pass through a softmax with a minimum share; derivatives through a shifted
//! softplus so an all-zero parameter vector is exactly the identity map. The
//! boundary derivatives are fixed at 1 so the spline joins the linear tails
//! smoothly.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplineSpec {
    pub bins: usize,
    pub bound: f64,
    pub min_width: f64,
    pub min_height: f64,
    pub min_derivative: f64,
}

impl Default for SplineSpec {
    fn default() -> Self {
        SplineSpec {
            bins: 8,
            bound: 3.0,
            min_width: 1e-3,
            min_height: 1e-3,
            min_derivative: 1e-3,
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl SplineSpec {
    /// Unconstrained parameters per transformed dimension.
    pub fn params_per_dim(&self) -> usize {
        3 * self.bins - 1
    }

    /// Offset making a zero raw derivative map to a derivative of exactly 1.
    pub fn derivative_shift(&self) -> f64 {
        (1.0 - self.min_derivative).exp_m1().ln()
    }

    pub fn knots(&self, raw: &[f64]) -> Knots {
        let k = self.bins;
        debug_assert_eq!(raw.len(), self.params_per_dim());
        let widths = softmax(&raw[..k]);
        let heights = softmax(&raw[k..2 * k]);
        Knots {
            xs: cumulative(&widths, self.min_width, self.bound),
            ys: cumulative(&heights, self.min_height, self.bound),
            ds: std::iter::once(1.0)
                .chain(
                    raw[2 * k..]
                        .iter()
                        .map(|&u| self.min_derivative + softplus(u + self.derivative_shift())),
                )
                .chain(std::iter::once(1.0))
                .collect(),
            widths,
            heights,
        }
    }

    /// `(y, ln dy/dx)`.
    pub fn forward(&self, raw: &[f64], x: f64) -> (f64, f64) {
        if !(-self.bound..=self.bound).contains(&x) {
            return (x, 0.0);
        }
        let kn = self.knots(raw);
        let b = kn.bin_of(x, &kn.xs);
        let (y, ld) = rq_forward(
            x,
            kn.xs[b],
            kn.xs[b + 1] - kn.xs[b],
            kn.ys[b],
            kn.ys[b + 1] - kn.ys[b],
            kn.ds[b],
            kn.ds[b + 1],
        );
        (y, ld)
    }

    /// `(x, ln dx/dy)` solving the bin's quadratic.
    pub fn inverse(&self, raw: &[f64], y: f64) -> (f64, f64) {
        if !(-self.bound..=self.bound).contains(&y) {
            return (y, 0.0);
        }
        let kn = self.knots(raw);
        let b = kn.bin_of(y, &kn.ys);
        let (xk, wk, yk, hk, dk, dk1) = (
            kn.xs[b],
            kn.xs[b + 1] - kn.xs[b],
            kn.ys[b],
            kn.ys[b + 1] - kn.ys[b],
            kn.ds[b],
            kn.ds[b + 1],
        );
        let s = hk / wk;
        let dy = y - yk;
        let c2 = dk1 + dk - 2.0 * s;
        let a = hk * (s - dk) + dy * c2;
        let bq = hk * dk - dy * c2;
        let c = -s * dy;
        let disc = (bq * bq - 4.0 * a * c).max(0.0);
        let xi = (2.0 * c / (-bq - disc.sqrt())).clamp(0.0, 1.0);
        let x = xk + xi * wk;
        let (_, ld) = rq_forward(x, xk, wk, yk, hk, dk, dk1);
        (x, -ld)
    }

    /// Forward pass with reverse-mode gradients: given upstream `gy` on `y`
    /// and `gl` on `ln dy/dx`, returns `dL/dx` and accumulates `dL/draw`.
    pub fn forward_backward(&self, raw: &[f64], x: f64, gy: f64, gl: f64, graw: &mut [f64]) -> f64 {
        if !(-self.bound..=self.bound).contains(&x) {
            return gy;
        }
        let k = self.bins;
        let kn = self.knots(raw);
        let b = kn.bin_of(x, &kn.xs);
        let seed = |i: usize, v: f64| Dual::var(v, i);
        let (y, ld) = rq_forward_dual(
            seed(0, x),
            seed(1, kn.xs[b]),
            seed(2, kn.xs[b + 1] - kn.xs[b]),
            seed(3, kn.ys[b]),
            seed(4, kn.ys[b + 1] - kn.ys[b]),
            seed(5, kn.ds[b]),
            seed(6, kn.ds[b + 1]),
        );
        let g: [f64; 7] = std::array::from_fn(|i| gy * y.d[i] + gl * ld.d[i]);

        // knot positions: x_b and x_{b+1} = x_b + w_b
        let mut gxs = vec![0.0; k + 1];
        gxs[b] += g[1] - g[2];
        gxs[b + 1] += g[2];
        let mut gys = vec![0.0; k + 1];
        gys[b] += g[3] - g[4];
        gys[b + 1] += g[4];
        backprop_cumulative(&gxs, &kn.widths, self.min_width, self.bound, &mut graw[..k]);
        backprop_cumulative(
            &gys,
            &kn.heights,
            self.min_height,
            self.bound,
            &mut graw[k..2 * k],
        );

        // interior derivatives j = 1..K-1 come from raw[2K + j - 1]
        let shift = self.derivative_shift();
        for (slot, gd) in [(b, g[5]), (b + 1, g[6])] {
            if slot >= 1 && slot < k {
                let u = raw[2 * k + slot - 1];
                graw[2 * k + slot - 1] += gd * sigmoid(u + shift);
            }
        }
        g[0]
    }
}

/// Normalized spline knots for one dimension.
#[derive(Debug, Clone)]
pub struct Knots {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub ds: Vec<f64>,
    widths: Vec<f64>,
    heights: Vec<f64>,
}

impl Knots {
    fn bin_of(&self, v: f64, edges: &[f64]) -> usize {
        let k = edges.len() - 1;
        // last edge with edges[j] <= v
        edges[1..k].partition_point(|&e| e <= v)
    }
}

fn softmax(u: &[f64]) -> Vec<f64> {
    let m = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = u.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Knot positions `-B, ..., B` from softmax shares with a minimum share each.
fn cumulative(shares: &[f64], min_share: f64, bound: f64) -> Vec<f64> {
    let k = shares.len();
    let scale = 1.0 - min_share * k as f64;
    let mut out = Vec::with_capacity(k + 1);
    let mut acc = 0.0;
    out.push(-bound);
    for s in &shares[..k - 1] {
        acc += min_share + scale * s;
        out.push(-bound + 2.0 * bound * acc);
    }
    out.push(bound);
    out
}

/// Chains gradients on knot positions back to the softmax logits.
fn backprop_cumulative(
    gknots: &[f64],
    shares: &[f64],
    min_share: f64,
    bound: f64,
    glogits: &mut [f64],
) {
    let k = shares.len();
    let scale = 1.0 - min_share * k as f64;
    // knot j (1..K-1) = -B + 2B * sum_{i<j} (min + scale * s_i)
    let mut gshare = vec![0.0; k];
    let mut suffix = 0.0;
    for i in (0..k - 1).rev() {
        suffix += gknots[i + 1];
        gshare[i] = 2.0 * bound * scale * suffix;
    }
    let dot: f64 = gshare.iter().zip(shares).map(|(g, s)| g * s).sum();
    for i in 0..k {
        glogits[i] += shares[i] * (gshare[i] - dot);
    }
}

fn rq_forward(x: f64, xk: f64, wk: f64, yk: f64, hk: f64, dk: f64, dk1: f64) -> (f64, f64) {
    let s = hk / wk;
    let xi = (x - xk) / wk;
    let om = 1.0 - xi;
    let den = s + (dk1 + dk - 2.0 * s) * xi * om;
    let y = yk + hk * (s * xi * xi + dk * xi * om) / den;
    let num = s * s * (dk1 * xi * xi + 2.0 * s * xi * om + dk * om * om);
    (y, num.ln() - 2.0 * den.ln())
}

/// Value with derivatives with respect to seven seeded inputs.
#[derive(Debug, Clone, Copy)]
struct Dual {
    v: f64,
    d: [f64; 7],
}

impl Dual {
    fn var(v: f64, i: usize) -> Self {
        let mut d = [0.0; 7];
        d[i] = 1.0;
        Dual { v, d }
    }

    fn constant(v: f64) -> Self {
        Dual { v, d: [0.0; 7] }
    }

    fn ln(self) -> Self {
        Dual {
            v: self.v.ln(),
            d: self.d.map(|x| x / self.v),
        }
    }
}

impl std::ops::Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual {
            v: self.v + o.v,
            d: std::array::from_fn(|i| self.d[i] + o.d[i]),
        }
    }
}

impl std::ops::Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual {
            v: self.v - o.v,
            d: std::array::from_fn(|i| self.d[i] - o.d[i]),
        }
    }
}

impl std::ops::Mul for Dual {
    type Output = Dual;
    #[allow(clippy::suspicious_arithmetic_impl)] // product rule
    fn mul(self, o: Dual) -> Dual {
        Dual {
            v: self.v * o.v,
            d: std::array::from_fn(|i| self.d[i] * o.v + self.v * o.d[i]),
        }
    }
}

impl std::ops::Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        let inv = 1.0 / o.v;
        Dual {
            v: self.v * inv,
            d: std::array::from_fn(|i| (self.d[i] - self.v * inv * o.d[i]) * inv),
        }
    }
}

impl std::ops::Mul<f64> for Dual {
    type Output = Dual;
    fn mul(self, c: f64) -> Dual {
        Dual {
            v: self.v * c,
            d: self.d.map(|x| x * c),
        }
    }
}

fn rq_forward_dual(
    x: Dual,
    xk: Dual,
    wk: Dual,
    yk: Dual,
    hk: Dual,
    dk: Dual,
    dk1: Dual,
) -> (Dual, Dual) {
    let one = Dual::constant(1.0);
    let s = hk / wk;
    let xi = (x - xk) / wk;
    let om = one - xi;
    let den = s + (dk1 + dk - s * 2.0) * xi * om;
    let y = yk + hk * (s * xi * xi + dk * xi * om) / den;
    let num = s * s * (dk1 * xi * xi + s * xi * om * 2.0 + dk * om * om);
    (y, num.ln() - den.ln() * 2.0)
}
