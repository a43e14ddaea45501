//! Dense and masked (MADE) layers, dropout and multilayer perceptrons.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, Var};
use crate::matrix::Matrix;
use crate::store::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
        }
    }
}

/// Dropout is active only in `Train`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted dropout: zeroes each entry with probability `rate` and rescales
/// survivors by `1/(1-rate)`.
pub fn dropout<R: Rng + ?Sized>(g: &mut Graph, x: Var, rate: f64, mode: Mode, rng: &mut R) -> Var {
    if mode == Mode::Eval || rate <= 0.0 {
        return x;
    }
    let (n, m) = g.shape(x);
    let keep = 1.0 - rate;
    let mask = Matrix::from_vec(
        n,
        m,
        (0..n * m)
            .map(|_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect(),
    );
    g.mul_const(x, mask)
}

fn uniform_init<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Matrix {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect(),
    )
}

/// `y = x W + b` with `W` of shape `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub n_in: usize,
    pub n_out: usize,
}

impl Dense {
    /// Uniform fan-in initialisation `U(-1/sqrt(in), 1/sqrt(in))`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        n_in: usize,
        n_out: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            uniform_init(n_in, n_out, n_in, rng),
        );
        let bias = store.add(format!("{name}.bias"), uniform_init(1, n_out, n_in, rng));
        Dense {
            weight,
            bias,
            n_in,
            n_out,
        }
    }

    pub fn zeros(store: &mut ParamStore, name: &str, n_in: usize, n_out: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), Matrix::zeros(n_in, n_out));
        let bias = store.add(format!("{name}.bias"), Matrix::zeros(1, n_out));
        Dense {
            weight,
            bias,
            n_in,
            n_out,
        }
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        assert_eq!(g.shape(x).1, self.n_in, "dense input width");
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let xw = g.matmul(x, w);
        g.add_row(xw, b)
    }
}

/// Dense layer whose weights are multiplied elementwise by a fixed 0/1 mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedDense {
    pub dense: Dense,
    pub mask: Matrix,
}

impl MaskedDense {
    pub fn new(dense: Dense, mask: Matrix) -> Self {
        assert_eq!(mask.shape(), (dense.n_in, dense.n_out), "mask shape");
        MaskedDense { dense, mask }
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.dense.weight);
        let wm = g.mul_const(w, self.mask.clone());
        let b = g.param(store, self.dense.bias);
        let xw = g.matmul(x, wm);
        g.add_row(xw, b)
    }
}

/// MADE degrees and masks for `d` autoregressive inputs, the given hidden
/// widths, and `per_dim` outputs per input dimension (grouped by dimension).
///
/// Inputs carry degrees `1..=d`; hidden units cycle through `0..d`, where a
/// degree-0 unit sees no inputs (only the context). A hidden unit connects to
/// units of degree `<=` its own; output `i` (degree `i`) connects to hidden
/// units of degree `< i`, so output `i` depends only on inputs `< i`.
pub fn made_masks(d: usize, hidden: &[usize], per_dim: usize) -> Vec<Matrix> {
    let mut degrees: Vec<Vec<usize>> = vec![(1..=d).collect()];
    for &h in hidden {
        degrees.push((0..h).map(|k| k % d.max(1)).collect());
    }
    let mut masks = Vec::with_capacity(hidden.len() + 1);
    for pair in degrees.windows(2) {
        let (prev, next) = (&pair[0], &pair[1]);
        let mut m = Matrix::zeros(prev.len(), next.len());
        for (a, &da) in prev.iter().enumerate() {
            for (b, &db) in next.iter().enumerate() {
                if da <= db {
                    m[(a, b)] = 1.0;
                }
            }
        }
        masks.push(m);
    }
    let last = degrees.last().expect("input degrees");
    let mut m = Matrix::zeros(last.len(), d * per_dim);
    for (a, &da) in last.iter().enumerate() {
        for out in 0..d * per_dim {
            if da < out / per_dim + 1 {
                m[(a, out)] = 1.0;
            }
        }
    }
    masks.push(m);
    masks
}

/// Masked autoregressive network with an optional conditioning context that
/// feeds every first-layer hidden unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Made {
    pub layers: Vec<MaskedDense>,
    pub context: Option<ParamId>,
    pub dim: usize,
    pub per_dim: usize,
    pub dropout: f64,
}

impl Made {
    /// The output layer starts at zero so the network's initial output is 0.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        context_dim: usize,
        hidden: &[usize],
        per_dim: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        let masks = made_masks(dim, hidden, per_dim);
        let mut widths = vec![dim];
        widths.extend_from_slice(hidden);
        widths.push(dim * per_dim);
        let n = masks.len();
        let layers = masks
            .into_iter()
            .enumerate()
            .map(|(i, mask)| {
                let lname = format!("{name}.layer{i}");
                let dense = if i + 1 == n {
                    Dense::zeros(store, &lname, widths[i], widths[i + 1])
                } else {
                    Dense::new(store, &lname, widths[i], widths[i + 1], rng)
                };
                MaskedDense::new(dense, mask)
            })
            .collect();
        let context = (context_dim > 0 && !hidden.is_empty()).then(|| {
            store.add(
                format!("{name}.context"),
                uniform_init(context_dim, hidden[0], context_dim, rng),
            )
        });
        Made {
            layers,
            context,
            dim,
            per_dim,
            dropout,
        }
    }

    /// Projects a context (`n x C` or `1 x C`) onto the first hidden layer.
    pub fn project_context(&self, g: &mut Graph, store: &ParamStore, ctx: Var) -> Option<Var> {
        self.context.map(|c| {
            let w = g.param(store, c);
            g.matmul(ctx, w)
        })
    }

    /// Applies the network; `ctx_proj` is the output of [`Made::project_context`].
    pub fn apply<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        ctx_proj: Option<Var>,
        mode: Mode,
        rng: &mut R,
    ) -> Var {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(g, store, h);
            if i == 0 {
                if let Some(c) = ctx_proj {
                    h = if g.shape(c).0 == 1 && g.shape(h).0 != 1 {
                        g.add_row(h, c)
                    } else {
                        g.add(h, c)
                    };
                }
            }
            if i < last {
                h = g.relu(h);
                h = dropout(g, h, self.dropout, mode, rng);
            }
        }
        h
    }
}

/// Stack of dense layers; dropout follows every hidden activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activations: Vec<Activation>,
    pub dropout: f64,
}

impl Mlp {
    /// `sizes = [in, h1, ..., out]`; hidden layers use `hidden`, the last `output`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        assert!(
            sizes.len() >= 2,
            "an MLP needs at least input and output sizes"
        );
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                Dense::new(
                    store,
                    &format!("{name}.layer{i}"),
                    sizes[i],
                    sizes[i + 1],
                    rng,
                )
            })
            .collect();
        let activations = (0..n)
            .map(|i| if i + 1 == n { output } else { hidden })
            .collect();
        Mlp {
            layers,
            activations,
            dropout,
        }
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().expect("non-empty").n_out
    }

    pub fn apply<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Var {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, (layer, act)) in self.layers.iter().zip(&self.activations).enumerate() {
            h = layer.apply(g, store, h);
            h = act.apply(g, h);
            if i < last {
                h = dropout(g, h, self.dropout, mode, rng);
            }
        }
        h
    }
}
