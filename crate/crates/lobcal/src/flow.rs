//! Conditional normalizing flows `q(theta | context)` built from masked
//! autoregressive transforms: affine (MAF) or rational-quadratic spline (NSF).
//!
//! The forward direction maps `theta` to the base variable `z`; transforms
//! are separated by a fixed reversal of the dimensions.

use std::f64::consts::PI;

use lobcal_nn::{Graph, Made, Matrix, Mode, ParamStore, SplineSpec, Var};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flavor {
    Maf,
    Nsf,
}

impl std::str::FromStr for Flavor {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "maf" => Ok(Flavor::Maf),
            "nsf" => Ok(Flavor::Nsf),
            other => Err(format!(
                "unknown flow flavor `{other}` (expected maf or nsf)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub flavor: Flavor,
    pub n_transforms: usize,
    /// Hidden widths of each conditioner network.
    pub hidden: Vec<usize>,
    pub spline: SplineSpec,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            flavor: Flavor::Nsf,
            n_transforms: 3,
            hidden: vec![128, 128],
            spline: SplineSpec::default(),
        }
    }
}

impl FlowConfig {
    pub fn with_flavor(flavor: Flavor) -> Self {
        FlowConfig {
            flavor,
            ..Self::default()
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("non-finite value produced by transform {transform}")]
    NonFinite { transform: usize },
}

/// `-d/2 ln(2 pi)`, the standard-normal log-density at the origin.
pub fn normal_log_norm(d: usize) -> f64 {
    -0.5 * d as f64 * (2.0 * PI).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalFlow {
    pub config: FlowConfig,
    pub dim: usize,
    pub context_dim: usize,
    pub conditioners: Vec<Made>,
}

impl ConditionalFlow {
    /// Every conditioner's output layer starts at zero, so a fresh flow is
    /// the identity and `log q` is the standard-normal log-density.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        context_dim: usize,
        config: FlowConfig,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        let per_dim = per_dim(&config);
        let conditioners = (0..config.n_transforms)
            .map(|t| {
                Made::new(
                    store,
                    &format!("{name}.t{t}"),
                    dim,
                    context_dim,
                    &config.hidden,
                    per_dim,
                    dropout,
                    rng,
                )
            })
            .collect();
        ConditionalFlow {
            config,
            dim,
            context_dim,
            conditioners,
        }
    }

    fn reversal(&self) -> Vec<usize> {
        (0..self.dim).rev().collect()
    }

    /// `theta -> z` on the tape. Returns `(z, log|det J|)` with shapes
    /// `n x d` and `n x 1`. `ctx` is `n x C` or a single `1 x C` row.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        theta: Var,
        ctx: Var,
        mode: Mode,
        rng: &mut R,
    ) -> (Var, Var) {
        let d = self.dim;
        let mut x = theta;
        let mut logdet: Option<Var> = None;
        for (t, made) in self.conditioners.iter().enumerate() {
            if t > 0 {
                x = g.permute_cols(x, self.reversal());
            }
            let cp = made.project_context(g, store, ctx);
            let params = made.apply(g, store, x, cp, mode, rng);
            let out = match self.config.flavor {
                Flavor::Maf => g.affine_ar(x, params),
                Flavor::Nsf => g.rq_spline(x, params, self.config.spline),
            };
            x = g.slice_cols(out, 0, d);
            let ld = g.slice_cols(out, d, d + 1);
            logdet = Some(match logdet {
                Some(acc) => g.add(acc, ld),
                None => ld,
            });
        }
        let logdet = logdet.unwrap_or_else(|| g.input(Matrix::zeros(g.shape(theta).0, 1)));
        (x, logdet)
    }

    /// `ln q(theta | ctx)` per row (`n x 1`).
    pub fn log_prob<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        theta: Var,
        ctx: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Var {
        let (z, logdet) = self.forward(g, store, theta, ctx, mode, rng);
        let sq = g.square(z);
        let ss = g.row_sum(sq);
        let base = g.scale(ss, -0.5);
        let lp = g.add(base, logdet);
        let n = g.shape(theta).0;
        let norm = g.input(Matrix::filled(n, 1, normal_log_norm(self.dim)));
        g.add(lp, norm)
    }

    /// Evaluation-mode `(z, log|det J|)` off the tape, checking every
    /// transform for non-finite output.
    pub fn forward_values(
        &self,
        store: &ParamStore,
        theta: &Matrix,
        ctx: &Matrix,
    ) -> Result<(Matrix, Vec<f64>), FlowError> {
        let d = self.dim;
        let mut x = theta.clone();
        let mut logdet = vec![0.0; theta.rows()];
        let mut rng = eval_rng();
        for (t, made) in self.conditioners.iter().enumerate() {
            let mut g = Graph::new();
            let mut xv = g.input(x);
            if t > 0 {
                xv = g.permute_cols(xv, self.reversal());
            }
            let cv = g.input(ctx.clone());
            let cp = made.project_context(&mut g, store, cv);
            let params = made.apply(&mut g, store, xv, cp, Mode::Eval, &mut rng);
            let out = match self.config.flavor {
                Flavor::Maf => g.affine_ar(xv, params),
                Flavor::Nsf => g.rq_spline(xv, params, self.config.spline),
            };
            let out = g.value(out);
            if !out.is_finite() {
                return Err(FlowError::NonFinite { transform: t });
            }
            for (i, l) in logdet.iter_mut().enumerate() {
                *l += out[(i, d)];
            }
            x = out.slice_cols(0, d);
        }
        Ok((x, logdet))
    }

    /// Evaluation-mode `ln q(theta | ctx)` per row.
    pub fn log_prob_values(
        &self,
        store: &ParamStore,
        theta: &Matrix,
        ctx: &Matrix,
    ) -> Result<Vec<f64>, FlowError> {
        let (z, logdet) = self.forward_values(store, theta, ctx)?;
        Ok((0..z.rows())
            .map(|i| {
                normal_log_norm(self.dim) - 0.5 * z.row(i).iter().map(|v| v * v).sum::<f64>()
                    + logdet[i]
            })
            .collect())
    }

    /// `z -> theta`. Each transform is inverted one dimension at a time,
    /// since dimension `i`'s parameters depend on the already-recovered
    /// dimensions `< i`.
    pub fn inverse(&self, store: &ParamStore, z: &Matrix, ctx: &Matrix) -> Matrix {
        let (n, d) = z.shape();
        let p = per_dim(&self.config);
        let mut rng = eval_rng();
        let mut y = z.clone();
        for (t, made) in self.conditioners.iter().enumerate().rev() {
            let ctx_proj = {
                let mut g = Graph::new();
                let cv = g.input(ctx.clone());
                made.project_context(&mut g, store, cv)
                    .map(|v| g.value(v).clone())
            };
            let mut x = Matrix::zeros(n, d);
            for i in 0..d {
                let mut g = Graph::new();
                let xv = g.input(x.clone());
                let cp = ctx_proj.as_ref().map(|m| g.input(m.clone()));
                let params = made.apply(&mut g, store, xv, cp, Mode::Eval, &mut rng);
                let params = g.value(params);
                for r in 0..n {
                    let raw = &params.row(r)[i * p..(i + 1) * p];
                    x[(r, i)] = match self.config.flavor {
                        Flavor::Maf => y[(r, i)] * raw[1].exp() + raw[0],
                        Flavor::Nsf => self.config.spline.inverse(raw, y[(r, i)]).0,
                    };
                }
            }
            y = if t > 0 {
                permute(&x, &self.reversal())
            } else {
                x
            };
        }
        y
    }

    /// `n` draws given a single `1 x C` context.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        store: &ParamStore,
        ctx: &Matrix,
        n: usize,
        rng: &mut R,
    ) -> Matrix {
        let z = Matrix::from_vec(
            n,
            self.dim,
            (0..n * self.dim)
                .map(|_| rng.sample(StandardNormal))
                .collect(),
        );
        self.inverse(store, &z, ctx)
    }
}

/// Evaluation mode draws nothing; any stream will do.
fn eval_rng() -> rand_chacha::ChaCha8Rng {
    rand_chacha::ChaCha8Rng::seed_from_u64(0)
}

fn per_dim(config: &FlowConfig) -> usize {
    match config.flavor {
        Flavor::Maf => 2,
        Flavor::Nsf => config.spline.params_per_dim(),
    }
}

/// Output column `j` is input column `perm[j]`; the reversal is its own inverse.
fn permute(m: &Matrix, perm: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for i in 0..m.rows() {
        for (j, &p) in perm.iter().enumerate() {
            out[(i, j)] = m[(i, p)];
        }
    }
    out
}
