//! Single-layer LSTM with explicit backpropagation through time.
//!
//! Gate layout inside the fused `[4H, I+H]` weight is input, forget, cell,
//! output.

use rand::Rng;

use crate::activation::sigmoid;
use crate::error::{check_len, Result};
use crate::linalg::gemm;
use crate::param::{Module, Param};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T: Scalar = f32> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![T::zero(); hidden],
            c: vec![T::zero(); hidden],
        }
    }
}

#[derive(Debug, Clone)]
pub struct LstmStepCache<T: Scalar = f32> {
    xh: Vec<T>,
    /// activated gates, `[i | f | g | o]`
    gates: Vec<T>,
    c_prev: Vec<T>,
    tanh_c: Vec<T>,
}

/// Per-step caches of a forward pass, consumed by [`Lstm::backward_sequence`].
#[derive(Debug, Clone)]
pub struct LstmTrace<T: Scalar = f32> {
    pub steps: Vec<LstmStepCache<T>>,
}

impl<T: Scalar> Default for LstmTrace<T> {
    fn default() -> Self {
        Self { steps: Vec::new() }
    }
}

#[derive(Debug, Clone)]
pub struct Lstm<T: Scalar = f32> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl<T: Scalar> Lstm<T> {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let bound = T::lit(1.0 / (hidden_dim as f64).sqrt());
        let mut bias = vec![T::zero(); 4 * hidden_dim];
        // forget gate starts open
        bias[hidden_dim..2 * hidden_dim]
            .iter_mut()
            .for_each(|b| *b = T::one());
        Self {
            weight: Param::new(Tensor::uniform(
                &[4 * hidden_dim, input_dim + hidden_dim],
                bound,
                rng,
            )),
            bias: Param::new(Tensor::new(vec![4 * hidden_dim], bias).expect("bias shape")),
            input_dim,
            hidden_dim,
        }
    }

    pub fn zeroed(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            weight: Param::zeros(&[4 * hidden_dim, input_dim + hidden_dim]),
            bias: Param::zeros(&[4 * hidden_dim]),
            input_dim,
            hidden_dim,
        }
    }

    /// One step of the cell: `(h_t, c_t)` plus the cache for backward.
    pub fn step(
        &self,
        x: &[T],
        prev: &LstmState<T>,
    ) -> Result<(LstmState<T>, LstmStepCache<T>)> {
        let hd = self.hidden_dim;
        check_len("lstm input", x.len(), self.input_dim)?;
        check_len("lstm hidden", prev.h.len(), hd)?;
        check_len("lstm cell", prev.c.len(), hd)?;
        let mut xh = Vec::with_capacity(self.input_dim + hd);
        xh.extend_from_slice(x);
        xh.extend_from_slice(&prev.h);
        let mut gates = self.bias.data().to_vec();
        gemm(
            false,
            false,
            4 * hd,
            1,
            self.input_dim + hd,
            T::one(),
            self.weight.data(),
            &xh,
            T::one(),
            &mut gates,
        );
        for (j, a) in gates.iter_mut().enumerate() {
            *a = if (2 * hd..3 * hd).contains(&j) {
                a.tanh()
            } else {
                sigmoid(*a)
            };
        }
        let mut c = vec![T::zero(); hd];
        let mut h = vec![T::zero(); hd];
        let mut tanh_c = vec![T::zero(); hd];
        for j in 0..hd {
            let (i, f, g, o) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
            c[j] = f * prev.c[j] + i * g;
            tanh_c[j] = c[j].tanh();
            h[j] = o * tanh_c[j];
        }
        Ok((
            LstmState { h, c },
            LstmStepCache {
                xh,
                gates,
                c_prev: prev.c.clone(),
                tanh_c,
            },
        ))
    }

    /// Runs the cell over `xs`, returning every hidden output and the final state.
    pub fn forward_sequence(
        &self,
        xs: &[Vec<T>],
        init: LstmState<T>,
    ) -> Result<(Vec<Vec<T>>, LstmState<T>, LstmTrace<T>)> {
        let mut state = init;
        let mut outputs = Vec::with_capacity(xs.len());
        let mut trace = LstmTrace {
            steps: Vec::with_capacity(xs.len()),
        };
        for x in xs {
            let (next, cache) = self.step(x, &state)?;
            outputs.push(next.h.clone());
            trace.steps.push(cache);
            state = next;
        }
        Ok((outputs, state, trace))
    }

    /// Backward through one step. Returns `(dx, dh_prev, dc_prev)`.
    pub fn backward_step(
        &mut self,
        cache: &LstmStepCache<T>,
        dh: &[T],
        dc: &[T],
    ) -> (Vec<T>, Vec<T>, Vec<T>) {
        let hd = self.hidden_dim;
        let g = &cache.gates;
        let one = T::one();
        let mut da = vec![T::zero(); 4 * hd];
        let mut dc_prev = vec![T::zero(); hd];
        for j in 0..hd {
            let (i, f, gg, o) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
            let tc = cache.tanh_c[j];
            let d_o = dh[j] * tc;
            let dct = dc[j] + dh[j] * o * (one - tc * tc);
            let di = dct * gg;
            let dg = dct * i;
            let df = dct * cache.c_prev[j];
            dc_prev[j] = dct * f;
            da[j] = di * i * (one - i);
            da[hd + j] = df * f * (one - f);
            da[2 * hd + j] = dg * (one - gg * gg);
            da[3 * hd + j] = d_o * o * (one - o);
        }
        let in_dim = self.input_dim + hd;
        gemm(
            false,
            false,
            4 * hd,
            in_dim,
            1,
            one,
            &da,
            &cache.xh,
            one,
            &mut self.weight.grad,
        );
        for (b, d) in self.bias.grad.iter_mut().zip(&da) {
            *b += *d;
        }
        let mut dxh = vec![T::zero(); in_dim];
        gemm(
            true,
            false,
            in_dim,
            1,
            4 * hd,
            one,
            self.weight.data(),
            &da,
            T::zero(),
            &mut dxh,
        );
        let dh_prev = dxh.split_off(self.input_dim);
        (dxh, dh_prev, dc_prev)
    }

    /// Backpropagation through time. `d_outputs[t]` is the loss gradient with
    /// respect to the hidden output at step `t`; `d_final` optionally adds a
    /// gradient on the final `(h, c)`. Returns per-step input gradients and the
    /// gradient on the initial state.
    pub fn backward_sequence(
        &mut self,
        trace: &LstmTrace<T>,
        d_outputs: &[Vec<T>],
        d_final: Option<&LstmState<T>>,
    ) -> Result<(Vec<Vec<T>>, LstmState<T>)> {
        let hd = self.hidden_dim;
        check_len("lstm output grads", d_outputs.len(), trace.steps.len())?;
        let mut dh = d_final.map_or_else(|| vec![T::zero(); hd], |s| s.h.clone());
        let mut dc = d_final.map_or_else(|| vec![T::zero(); hd], |s| s.c.clone());
        let mut dxs = vec![Vec::new(); trace.steps.len()];
        for t in (0..trace.steps.len()).rev() {
            for (a, b) in dh.iter_mut().zip(&d_outputs[t]) {
                *a += *b;
            }
            let (dx, dh_prev, dc_prev) = self.backward_step(&trace.steps[t], &dh, &dc);
            dxs[t] = dx;
            dh = dh_prev;
            dc = dc_prev;
        }
        Ok((dxs, LstmState { h: dh, c: dc }))
    }
}

impl<T: Scalar> Module<T> for Lstm<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        vec![
            ("weight".into(), &mut self.weight),
            ("bias".into(), &mut self.bias),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_zero_hidden() {
        let cell = Lstm::<f32>::zeroed(5, 4);
        let (next, _) = cell.step(&[1.0, -2.0, 0.5, 3.0, 0.1], &LstmState::zeros(4)).unwrap();
        assert!(next.h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_sequence_matches_backward_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut a = Lstm::<f32>::new(3, 4, &mut rng);
        let mut b = a.clone();
        let x = vec![0.3, -0.2, 0.9];
        let init = LstmState {
            h: vec![0.1, 0.2, -0.1, 0.0],
            c: vec![0.5, -0.5, 0.2, 0.1],
        };
        let dh = vec![1.0, -0.5, 0.25, 2.0];
        let (_, _, trace) = a.forward_sequence(std::slice::from_ref(&x), init.clone()).unwrap();
        let (dxs, d0) = a.backward_sequence(&trace, std::slice::from_ref(&dh), None).unwrap();
        let (_, cache) = b.step(&x, &init).unwrap();
        let (dx, dh_prev, dc_prev) = b.backward_step(&cache, &dh, &[0.0f32; 4]);
        assert_eq!(dxs[0], dx);
        assert_eq!(d0.h, dh_prev);
        assert_eq!(d0.c, dc_prev);
        assert_eq!(a.weight.grad, b.weight.grad);
    }
}
