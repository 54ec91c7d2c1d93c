//! Randomized gradient checks for every differentiable op in this crate.
//!
//! Each check builds a small random instance, projects the op's output onto
//! a random direction `w` so the scalar objective is `Σ w·y`, runs the
//! analytic backward with `grad_out = w`, and compares every input and
//! parameter gradient against central differences. Checks are generic over
//! the element type so they run at both `f32` and `f64`.

use rand::Rng;

use crate::activation::{
    leaky_relu_backward, leaky_relu_inplace, relu_backward, relu_inplace, sigmoid_backward,
    sigmoid_inplace, tanh_backward, tanh_inplace,
};
use crate::conv::{Conv2d, ConvTranspose2d};
use crate::dense::Dense;
use crate::embedding::Embedding;
use crate::gradcheck::{grad_check, GradReport};
use crate::loss;
use crate::lstm::{Lstm, LstmState};
use crate::param::Param;
use crate::rng::SessionRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Finite-difference step for `f32` checks.
pub const EPS_F32: f64 = 5e-2;
/// Finite-difference step for `f64` checks.
pub const EPS_F64: f64 = 1e-3;

fn eps<T: Scalar>() -> T {
    if std::mem::size_of::<T>() == 4 {
        T::lit(EPS_F32)
    } else {
        T::lit(EPS_F64)
    }
}

fn project<T: Scalar>(y: &[T], w: &[T]) -> f64 {
    y.iter().zip(w).map(|(a, b)| a.as_f64() * b.as_f64()).sum()
}

fn randn<T: Scalar>(rng: &mut SessionRng, n: usize) -> Vec<T> {
    (0..n).map(|_| T::sample_normal(rng)).collect()
}

fn scaled<T: Scalar>(v: Vec<T>, s: f64) -> Vec<T> {
    v.into_iter().map(|x| x * T::lit(s)).collect()
}

/// Checks a parameter tensor by perturbing its values in a clone of the
/// owning layer.
fn check_param<T, L, F>(
    layer: &L,
    get: fn(&mut L) -> &mut Param<T>,
    analytic: &[T],
    mut eval: F,
) -> GradReport
where
    T: Scalar,
    L: Clone,
    F: FnMut(&L) -> f64,
{
    let mut probe = layer.clone();
    let point = get(&mut probe).value.data().to_vec();
    grad_check(
        &point,
        analytic,
        |p| {
            get(&mut probe).value.data_mut().copy_from_slice(p);
            eval(&probe)
        },
        eps(),
    )
}

pub fn check_dense<T: Scalar>(seed: u64) -> GradReport {
    let mut rng = SessionRng::new(seed);
    let (inp, out, batch) = (
        rng.random_range(2..7),
        rng.random_range(2..6),
        rng.random_range(1..4),
    );
    let mut layer = Dense::<T>::new(inp, out, &mut rng);
    layer.bias.value = Tensor::randn(&[out], T::lit(0.5), &mut rng);
    let x = randn(&mut rng, inp * batch);
    let w = randn(&mut rng, out * batch);
    let dx = layer.backward(&x, &w, batch).expect("dense backward");
    let eval_x = |p: &[T]| project(&layer.forward(p, batch).unwrap(), &w);
    let r = grad_check(&x, &dx, eval_x, eps());
    let eval = |l: &Dense<T>| project(&l.forward(&x, batch).unwrap(), &w);
    r.merge(check_param(&layer, |l| &mut l.weight, &layer.weight.grad, eval))
        .merge(check_param(&layer, |l| &mut l.bias, &layer.bias.grad, eval))
}

pub fn check_conv2d<T: Scalar>(seed: u64) -> GradReport {
    let mut rng = SessionRng::new(seed);
    let cin = rng.random_range(1..3);
    let cout = rng.random_range(1..4);
    let k = rng.random_range(1..4);
    let s = rng.random_range(1..3);
    let h = k + rng.random_range(0..5);
    let wd = k + rng.random_range(0..5);
    let mut conv = Conv2d::<T>::new(cin, cout, k, s, &mut rng);
    conv.bias.value = Tensor::randn(&[cout], T::lit(0.5), &mut rng);
    let x = Tensor::randn(&[cin, h, wd], T::one(), &mut rng);
    let (y, cache) = conv.forward(&x).unwrap();
    let w = Tensor::randn(y.shape(), T::one(), &mut rng);
    let dx = conv.backward(&cache, &w).unwrap();
    let shape = x.shape().to_vec();
    let r = grad_check(
        x.data(),
        dx.data(),
        |p| {
            let t = Tensor::new(shape.clone(), p.to_vec()).unwrap();
            project(conv.forward(&t).unwrap().0.data(), w.data())
        },
        eps(),
    );
    let eval = |c: &Conv2d<T>| project(c.forward(&x).unwrap().0.data(), w.data());
    r.merge(check_param(&conv, |c| &mut c.kernel, &conv.kernel.grad, eval))
        .merge(check_param(&conv, |c| &mut c.bias, &conv.bias.grad, eval))
}

pub fn check_conv_transpose2d<T: Scalar>(seed: u64) -> GradReport {
    let mut rng = SessionRng::new(seed);
    let cin = rng.random_range(1..3);
    let cout = rng.random_range(1..4);
    let k = rng.random_range(1..4);
    let s = rng.random_range(1..3);
    let h = rng.random_range(1..4);
    let wd = rng.random_range(1..4);
    let pad = rng.random_range(0..s);
    let mut conv = ConvTranspose2d::<T>::new(cin, cout, k, s, &mut rng).with_output_padding(pad);
    conv.bias.value = Tensor::randn(&[cout], T::lit(0.5), &mut rng);
    let x = Tensor::randn(&[cin, h, wd], T::one(), &mut rng);
    let y = conv.forward(&x).unwrap();
    let w = Tensor::randn(y.shape(), T::one(), &mut rng);
    let dx = conv.backward(&x, &w).unwrap();
    let shape = x.shape().to_vec();
    let r = grad_check(
        x.data(),
        dx.data(),
        |p| {
            let t = Tensor::new(shape.clone(), p.to_vec()).unwrap();
            project(conv.forward(&t).unwrap().data(), w.data())
        },
        eps(),
    );
    let eval = |c: &ConvTranspose2d<T>| project(c.forward(&x).unwrap().data(), w.data());
    r.merge(check_param(&conv, |c| &mut c.kernel, &conv.kernel.grad, eval))
        .merge(check_param(&conv, |c| &mut c.bias, &conv.bias.grad, eval))
}

/// BPTT over a random sequence of length `len`, with gradients flowing into
/// both the per-step outputs and the final cell state.
pub fn check_lstm_bptt<T: Scalar>(seed: u64, len: usize) -> GradReport {
    let mut rng = SessionRng::new(seed);
    let (inp, hid) = (rng.random_range(2..5), rng.random_range(2..5));
    let mut cell = Lstm::<T>::new(inp, hid, &mut rng);
    let xs: Vec<Vec<T>> = (0..len).map(|_| randn(&mut rng, inp)).collect();
    let init = LstmState {
        h: scaled(randn(&mut rng, hid), 0.5),
        c: randn(&mut rng, hid),
    };
    let ws: Vec<Vec<T>> = (0..len).map(|_| randn(&mut rng, hid)).collect();
    let wc: Vec<T> = randn(&mut rng, hid);
    let objective = |cell: &Lstm<T>, xs: &[Vec<T>], init: &LstmState<T>| -> f64 {
        let (hs, last, _) = cell.forward_sequence(xs, init.clone()).unwrap();
        hs.iter().zip(&ws).map(|(h, w)| project(h, w)).sum::<f64>() + project(&last.c, &wc)
    };
    let (_, _, trace) = cell.forward_sequence(&xs, init.clone()).unwrap();
    let final_grad = LstmState {
        h: vec![T::zero(); hid],
        c: wc.clone(),
    };
    let (dxs, d0) = cell.backward_sequence(&trace, &ws, Some(&final_grad)).unwrap();

    let flat_x: Vec<T> = xs.iter().flatten().copied().collect();
    let flat_dx: Vec<T> = dxs.iter().flatten().copied().collect();
    let mut r = grad_check(
        &flat_x,
        &flat_dx,
        |p| {
            let seq: Vec<Vec<T>> = p.chunks(inp).map(<[T]>::to_vec).collect();
            objective(&cell, &seq, &init)
        },
        eps(),
    );
    r = r.merge(grad_check(
        &init.h,
        &d0.h,
        |p| {
            let s = LstmState {
                h: p.to_vec(),
                c: init.c.clone(),
            };
            objective(&cell, &xs, &s)
        },
        eps(),
    ));
    r = r.merge(grad_check(
        &init.c,
        &d0.c,
        |p| {
            let s = LstmState {
                h: init.h.clone(),
                c: p.to_vec(),
            };
            objective(&cell, &xs, &s)
        },
        eps(),
    ));
    let eval = |c: &Lstm<T>| objective(c, &xs, &init);
    r.merge(check_param(&cell, |c| &mut c.weight, &cell.weight.grad, eval))
        .merge(check_param(&cell, |c| &mut c.bias, &cell.bias.grad, eval))
}

pub fn check_embedding<T: Scalar>(seed: u64) -> GradReport {
    let mut rng = SessionRng::new(seed);
    let (vocab, dim) = (rng.random_range(3..8), rng.random_range(2..5));
    let mut emb = Embedding::<T>::new(vocab, dim, &mut rng);
    let ids: Vec<usize> = (0..5).map(|_| rng.random_range(0..vocab)).collect();
    let ws: Vec<Vec<T>> = ids.iter().map(|_| randn(&mut rng, dim)).collect();
    for (id, w) in ids.iter().zip(&ws) {
        emb.accumulate(*id, w);
    }
    let eval = |e: &Embedding<T>| {
        ids.iter()
            .zip(&ws)
            .map(|(&id, w)| project(e.lookup(id).unwrap(), w))
            .sum()
    };
    check_param(&emb, |e| &mut e.table, &emb.table.grad, eval)
}

fn check_activation<T: Scalar>(
    seed: u64,
    forward: fn(&mut [T]),
    backward: fn(&[T], &mut [T]),
    avoid_kink: bool,
) -> GradReport {
    let mut rng = SessionRng::new(seed);
    let n = rng.random_range(3..12);
    let mut x: Vec<T> = randn(&mut rng, n);
    if avoid_kink {
        // keep every stencil point on one side of the kink at 0
        let margin = T::lit(5.0) * eps::<T>();
        x.iter_mut().for_each(|v| {
            if v.abs() < margin {
                *v = v.signum() * margin + *v;
            }
        });
    }
    let w = randn(&mut rng, n);
    let mut y = x.clone();
    forward(&mut y);
    let mut g = w.clone();
    backward(&y, &mut g);
    grad_check(
        &x,
        &g,
        |p| {
            let mut y = p.to_vec();
            forward(&mut y);
            project(&y, &w)
        },
        eps(),
    )
}

pub fn check_relu<T: Scalar>(seed: u64) -> GradReport {
    check_activation::<T>(seed, relu_inplace, relu_backward, true)
}

pub fn check_leaky_relu<T: Scalar>(seed: u64) -> GradReport {
    check_activation::<T>(
        seed,
        |x| leaky_relu_inplace(x, T::lit(0.2)),
        |y, g| leaky_relu_backward(y, g, T::lit(0.2)),
        true,
    )
}

pub fn check_sigmoid<T: Scalar>(seed: u64) -> GradReport {
    check_activation::<T>(seed, sigmoid_inplace, sigmoid_backward, false)
}

pub fn check_tanh<T: Scalar>(seed: u64) -> GradReport {
    check_activation::<T>(seed, tanh_inplace, tanh_backward, false)
}

pub fn check_bce<T: Scalar>(seed: u64) -> GradReport {
    let mut rng = SessionRng::new(seed);
    let n = rng.random_range(2..10);
    let pred: Vec<T> = (0..n)
        .map(|_| T::lit(rng.random_range(0.15..0.85)))
        .collect();
    let target: Vec<T> = (0..n).map(|_| T::lit(rng.random_range(0.0..=1.0))).collect();
    let (_, g) = loss::bce(&pred, &target).unwrap();
    // the stencil must stay well inside (0, 1)
    let step = eps::<T>().min(T::lit(1e-2));
    grad_check(&pred, &g, |p| loss::bce(p, &target).unwrap().0, step)
}

pub fn check_bce_with_logits<T: Scalar>(seed: u64) -> GradReport {
    let mut rng = SessionRng::new(seed);
    let n = rng.random_range(2..10);
    let logits = scaled(randn(&mut rng, n), 2.0);
    let target: Vec<T> = (0..n).map(|_| T::lit(rng.random_range(0.0..=1.0))).collect();
    let (_, g) = loss::bce_with_logits(&logits, &target).unwrap();
    grad_check(
        &logits,
        &g,
        |p| loss::bce_with_logits(p, &target).unwrap().0,
        eps(),
    )
}

pub fn check_kl<T: Scalar>(seed: u64) -> GradReport {
    let mut rng = SessionRng::new(seed);
    let n = rng.random_range(2..10);
    let mu: Vec<T> = randn(&mut rng, n);
    let ls = scaled(randn(&mut rng, n), 0.5);
    let (_, dmu, dls) = loss::kl_gaussian(&mu, &ls).unwrap();
    grad_check(&mu, &dmu, |p| loss::kl_gaussian(p, &ls).unwrap().0, eps()).merge(grad_check(
        &ls,
        &dls,
        |p| loss::kl_gaussian(&mu, p).unwrap().0,
        eps(),
    ))
}

pub fn check_nll<T: Scalar>(seed: u64) -> GradReport {
    let mut rng = SessionRng::new(seed);
    let (steps, vocab) = (rng.random_range(1..5), rng.random_range(2..7));
    let logits: Vec<Vec<T>> = (0..steps).map(|_| randn(&mut rng, vocab)).collect();
    let targets: Vec<usize> = (0..steps).map(|_| rng.random_range(0..vocab)).collect();
    let (_, g) = loss::nll_sequence(&logits, &targets).unwrap();
    let flat: Vec<T> = logits.iter().flatten().copied().collect();
    let flat_g: Vec<T> = g.iter().flatten().copied().collect();
    grad_check(
        &flat,
        &flat_g,
        |p| {
            let l: Vec<Vec<T>> = p.chunks(vocab).map(<[T]>::to_vec).collect();
            loss::nll_sequence(&l, &targets).unwrap().0
        },
        eps(),
    )
}

pub fn check_mse<T: Scalar>(seed: u64) -> GradReport {
    let mut rng = SessionRng::new(seed);
    let n = rng.random_range(2..10);
    let pred: Vec<T> = randn(&mut rng, n);
    let target: Vec<T> = randn(&mut rng, n);
    let (_, g) = loss::mse(&pred, &target).unwrap();
    grad_check(&pred, &g, |p| loss::mse(p, &target).unwrap().0, eps())
}

/// Every op check at one seed, labelled.
pub fn all_op_checks<T: Scalar>(seed: u64) -> Vec<(&'static str, GradReport)> {
    vec![
        ("dense", check_dense::<T>(seed)),
        ("conv2d", check_conv2d::<T>(seed)),
        ("conv_transpose2d", check_conv_transpose2d::<T>(seed)),
        ("lstm_bptt", check_lstm_bptt::<T>(seed, 5)),
        ("embedding", check_embedding::<T>(seed)),
        ("relu", check_relu::<T>(seed)),
        ("leaky_relu", check_leaky_relu::<T>(seed)),
        ("sigmoid", check_sigmoid::<T>(seed)),
        ("tanh", check_tanh::<T>(seed)),
        ("bce", check_bce::<T>(seed)),
        ("bce_with_logits", check_bce_with_logits::<T>(seed)),
        ("kl_gaussian", check_kl::<T>(seed)),
        ("nll_sequence", check_nll::<T>(seed)),
        ("mse", check_mse::<T>(seed)),
    ]
}
