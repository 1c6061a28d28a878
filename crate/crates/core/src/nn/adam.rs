use super::params::ParamStore;
use super::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moments per parameter, in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }
}

/// Bias-corrected Adam update of every parameter, then zeroes the gradients.
pub fn adam_step<T: Scalar>(store: &mut ParamStore<T>, state: &mut AdamState<T>, cfg: &AdamConfig) {
    assert_eq!(state.m.len(), store.len(), "optimizer state does not match parameters");
    state.t += 1;
    let t = state.t as i32;
    let b1 = T::from_f64_lossy(cfg.beta1);
    let b2 = T::from_f64_lossy(cfg.beta2);
    let one = T::one();
    let corr1 = T::from_f64_lossy(1.0 - cfg.beta1.powi(t));
    let corr2 = T::from_f64_lossy(1.0 - cfg.beta2.powi(t));
    let lr = T::from_f64_lossy(cfg.lr);
    let eps = T::from_f64_lossy(cfg.eps);

    for ((param, m), v) in store.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let grads = param.grad.data();
        let values = param.value.data_mut();
        for (((p, &g), m), v) in values
            .iter_mut()
            .zip(grads)
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / corr1;
            let v_hat = *v / corr2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    store.zero_grads();
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[f64], grads: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::from_f64(1, values.len(), values)).unwrap();
        s.get_mut(id).grad = Tensor::from_f64(1, grads.len(), grads);
        s
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut s = store_with(&[1.0, 1.0, 1.0], &[0.3, -7.0, 1e-3]);
        let mut st = AdamState::new(&s);
        let cfg = AdamConfig::default();
        adam_step(&mut s, &mut st, &cfg);
        let w = s.value(s.id("w").unwrap()).data().to_vec();
        assert!((w[0] - (1.0 - 2e-4)).abs() < 1e-10);
        assert!((w[1] - (1.0 + 2e-4)).abs() < 1e-10);
        // ε matters only when |g| is comparable to it
        assert!((w[2] - (1.0 - 2e-4)).abs() < 1e-8);
        assert_eq!(st.t, 1);
        assert!(s.grad(s.id("w").unwrap()).data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_gradient_leaves_param_and_second_moment() {
        let mut s = store_with(&[0.5, -2.0], &[0.0, 0.0]);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &mut st, &AdamConfig::default());
        assert_eq!(s.value(s.id("w").unwrap()).data(), &[0.5, -2.0]);
        assert!(st.v[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut s = store_with(&[0.1, 0.2], &[0.5, -0.25]);
            let mut st = AdamState::new(&s);
            for _ in 0..3 {
                s.get_mut(s.id("w").unwrap()).grad = Tensor::from_f64(1, 2, &[0.5, -0.25]);
                adam_step(&mut s, &mut st, &AdamConfig::default());
            }
            (s.value(s.id("w").unwrap()).clone(), st)
        };
        assert_eq!(run(), run());
    }
}
