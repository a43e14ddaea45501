//! Finite-difference validation of analytic gradients.
//!
//! The relative error of an entry is `|a - n| / max(|a|, |n|, 1e-3)`, so
//! near-zero gradients are compared absolutely at the `1e-3` scale.

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::layers::made_masks;
use crate::matrix::Matrix;
use crate::spline::SplineSpec;

pub const STEP: f64 = 1e-5;
pub const FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Largest relative error between the tape's gradient and central
/// differences, over every entry of every input. `f` must build a scalar.
pub fn check<F>(inputs: &[Matrix], f: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let eval = |values: &[Matrix]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|m| g.input(m.clone())).collect();
        let out = f(&mut g, &vars);
        (g, vars, out)
    };
    let (g, vars, out) = eval(inputs);
    let grads = g
        .backward(out)
        .expect("gradient check needs a scalar output");
    let mut worst: f64 = 0.0;
    let mut work = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v, inputs[k].shape());
        for e in 0..inputs[k].len() {
            let orig = work[k].data()[e];
            work[k].data_mut()[e] = orig + STEP;
            let (gp, _, op) = eval(&work);
            work[k].data_mut()[e] = orig - STEP;
            let (gm, _, om) = eval(&work);
            work[k].data_mut()[e] = orig;
            let numeric = (gp.value(op).item() - gm.value(om).item()) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic.data()[e], numeric));
        }
    }
    worst
}

fn random<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-1.5..1.5))
            .collect(),
    )
}

/// Values bounded away from zero, for the ReLU kink.
fn away_from_zero<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    random(rows, cols, rng).map(|v| {
        if v.abs() < 0.05 {
            v.signum() * 0.05 + v
        } else {
            v
        }
    })
}

/// Reduces a matrix to a scalar with fixed random weights so every entry's
/// gradient differs.
fn weighted_sum(g: &mut Graph, x: Var, weights: &Matrix) -> Var {
    let m = g.mul_const(x, weights.clone());
    g.sum(m)
}

/// Checks every graph primitive on random inputs; returns `(name, max rel err)`.
pub fn primitive_suite<R: Rng + ?Sized>(rng: &mut R) -> Vec<(&'static str, f64)> {
    let (n, m) = (3, 4);
    let a = random(n, m, rng);
    let b = random(n, m, rng);
    let w = random(n, m, rng);
    let wcol = random(n, 1, rng);
    let k = random(m, 2, rng);
    let w2 = random(n, 2, rng);
    let row = random(1, m, rng);
    let mut out: Vec<(&'static str, f64)> = Vec::new();

    out.push((
        "matmul",
        check(&[a.clone(), k.clone()], |g, v| {
            let y = g.matmul(v[0], v[1]);
            weighted_sum(g, y, &w2)
        }),
    ));
    out.push((
        "add_row",
        check(&[a.clone(), row.clone()], |g, v| {
            let y = g.add_row(v[0], v[1]);
            weighted_sum(g, y, &w)
        }),
    ));
    out.push((
        "add",
        check(&[a.clone(), b.clone()], |g, v| {
            let y = g.add(v[0], v[1]);
            weighted_sum(g, y, &w)
        }),
    ));
    out.push((
        "sub",
        check(&[a.clone(), b.clone()], |g, v| {
            let y = g.sub(v[0], v[1]);
            weighted_sum(g, y, &w)
        }),
    ));
    out.push((
        "mul",
        check(&[a.clone(), b.clone()], |g, v| {
            let y = g.mul(v[0], v[1]);
            weighted_sum(g, y, &w)
        }),
    ));
    out.push((
        "scale",
        check(std::slice::from_ref(&a), |g, v| {
            let y = g.scale(v[0], -2.5);
            weighted_sum(g, y, &w)
        }),
    ));
    out.push((
        "mul_const",
        check(std::slice::from_ref(&a), |g, v| weighted_sum(g, v[0], &w)),
    ));
    let kinked = away_from_zero(n, m, rng);
    out.push((
        "relu",
        check(&[kinked], |g, v| {
            let y = g.relu(v[0]);
            weighted_sum(g, y, &w)
        }),
    ));
    out.push((
        "tanh",
        check(std::slice::from_ref(&a), |g, v| {
            let y = g.tanh(v[0]);
            weighted_sum(g, y, &w)
        }),
    ));
    out.push((
        "exp",
        check(std::slice::from_ref(&a), |g, v| {
            let y = g.exp(v[0]);
            weighted_sum(g, y, &w)
        }),
    ));
    out.push((
        "softplus",
        check(std::slice::from_ref(&a), |g, v| {
            let y = g.softplus(v[0]);
            weighted_sum(g, y, &w)
        }),
    ));
    out.push((
        "square",
        check(std::slice::from_ref(&a), |g, v| {
            let y = g.square(v[0]);
            weighted_sum(g, y, &w)
        }),
    ));
    out.push((
        "row_sum",
        check(std::slice::from_ref(&a), |g, v| {
            let y = g.row_sum(v[0]);
            weighted_sum(g, y, &wcol)
        }),
    ));
    out.push((
        "sum",
        check(std::slice::from_ref(&a), |g, v| {
            let y = g.square(v[0]);
            g.sum(y)
        }),
    ));
    out.push((
        "mean",
        check(std::slice::from_ref(&a), |g, v| {
            let y = g.square(v[0]);
            g.mean(y)
        }),
    ));
    out.push((
        "slice_cols",
        check(std::slice::from_ref(&a), |g, v| {
            let y = g.slice_cols(v[0], 1, 3);
            weighted_sum(g, y, &w2)
        }),
    ));
    out.push((
        "permute_cols",
        check(std::slice::from_ref(&a), |g, v| {
            let y = g.permute_cols(v[0], vec![2, 0, 3, 1]);
            weighted_sum(g, y, &w)
        }),
    ));

    let spec = SplineSpec::default();
    let d = 2;
    let xs = random(n, d, rng).scale(2.0);
    let ps = random(n, d * spec.params_per_dim(), rng);
    let ws = random(n, d + 1, rng);
    out.push((
        "rq_spline",
        check(&[xs.clone(), ps], |g, v| {
            let y = g.rq_spline(v[0], v[1], spec);
            weighted_sum(g, y, &ws)
        }),
    ));
    let pa = random(n, 2 * d, rng);
    out.push((
        "affine_ar",
        check(&[xs, pa], |g, v| {
            let y = g.affine_ar(v[0], v[1]);
            weighted_sum(g, y, &ws)
        }),
    ));
    out
}

/// A random three-layer composite: dense -> activation -> (masked) dense ->
/// activation -> dense, reduced by a random head. Returns its max rel err.
pub fn random_composite<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let n = rng.random_range(1..=4);
    let d_in = rng.random_range(1..=4);
    let h1 = rng.random_range(2..=6);
    let h2 = rng.random_range(2..=6);
    let d_out = rng.random_range(1..=3);
    let acts: Vec<u8> = (0..2).map(|_| rng.random_range(0..4)).collect();
    let masked = rng.random_bool(0.5);
    let head: u8 = rng.random_range(0..3);
    let x = random(n, d_in, rng);
    let w1 = random(d_in, h1, rng);
    let b1 = random(1, h1, rng);
    let w2 = random(h1, h2, rng);
    let b2 = random(1, h2, rng);
    let w3 = random(h2, d_out, rng);
    let b3 = random(1, d_out, rng);
    let weights = random(n, d_out, rng);
    let mask = if masked {
        made_masks(h1, &[], h2.div_ceil(h1).max(1))[0].slice_cols(0, h2)
    } else {
        Matrix::filled(h1, h2, 1.0)
    };
    check(&[x, w1, b1, w2, b2, w3, b3], |g, v| {
        let activate = |g: &mut Graph, h: Var, which: u8| match which {
            0 => g.tanh(h),
            1 => g.softplus(h),
            2 => {
                let s = g.scale(h, 0.5);
                g.exp(s)
            }
            _ => g.relu(h),
        };
        let h = g.matmul(v[0], v[1]);
        let h = g.add_row(h, v[2]);
        let h = activate(g, h, acts[0]);
        let wm = g.mul_const(v[3], mask.clone());
        let h = g.matmul(h, wm);
        let h = g.add_row(h, v[4]);
        let h = activate(g, h, acts[1]);
        let h = g.matmul(h, v[5]);
        let y = g.add_row(h, v[6]);
        match head {
            0 => weighted_sum(g, y, &weights),
            1 => {
                let sq = g.square(y);
                g.mean(sq)
            }
            _ => {
                let r = g.row_sum(y);
                let t = g.tanh(r);
                g.sum(t)
            }
        }
    })
}
