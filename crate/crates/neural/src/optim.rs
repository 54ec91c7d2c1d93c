use crate::param::Param;
use crate::scalar::Scalar;

/// Adam with bias correction. Moments live on each [`Param`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u64,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f32, beta1: f32, beta2: f32, eps: f32) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update over every parameter, reading their accumulated gradients.
    pub fn step<'a, T: Scalar>(&mut self, params: impl IntoIterator<Item = &'a mut Param<T>>) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1 as f64), T::lit(self.beta2 as f64));
        let (lr, eps) = (T::lit(self.lr as f64), T::lit(self.eps as f64));
        let one = T::one();
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        for p in params {
            let Param {
                value,
                grad,
                first_moment,
                second_moment,
            } = p;
            for (((w, &g), m), v) in value
                .data_mut()
                .iter_mut()
                .zip(grad.iter())
                .zip(first_moment.iter_mut())
                .zip(second_moment.iter_mut())
            {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Param::new(Tensor::new(vec![3], vec![1.0f32, -2.0, 0.5]).unwrap());
        let mut adam = Adam::new(1e-2);
        for _ in 0..10 {
            adam.step([&mut p]);
        }
        assert_eq!(p.data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        // With constant g the bias-corrected ratio m̂/√v̂ is exactly sign(g)
        // (up to ε), so every step moves by lr.
        let mut p = Param::new(Tensor::new(vec![2], vec![0.0f32, 0.0]).unwrap());
        let mut adam = Adam::new(1e-3);
        let mut last = p.data().to_vec();
        for i in 0..200 {
            p.grad = vec![0.3, -4.0];
            adam.step([&mut p]);
            if i >= 100 {
                let d0 = p.data()[0] - last[0];
                let d1 = p.data()[1] - last[1];
                assert!((d0 + 1e-3).abs() < 1e-6, "{d0}");
                assert!((d1 - 1e-3).abs() < 1e-6, "{d1}");
            }
            last = p.data().to_vec();
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut p = Param::new(Tensor::new(vec![3], vec![1.0f32, -0.8, 0.6]).unwrap());
        let mut adam = Adam::new(1e-2);
        for _ in 0..500 {
            p.grad = p.data().iter().map(|x| 2.0 * x).collect();
            adam.step([&mut p]);
        }
        assert!(p.data().iter().all(|x| x.abs() < 1e-3), "{:?}", p.data());
    }
}
