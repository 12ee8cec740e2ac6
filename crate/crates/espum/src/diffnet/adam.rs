//! Adam optimizer with bias correction.

use super::{DiffnetError, Network, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.004,
            beta1: 0.5,
            beta2: 0.98,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, one pair per parameter tensor, plus the
/// step counter `t`.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, net: &Network) -> Self {
        let m = net
            .params()
            .iter()
            .map(|p| Tensor::zeros(p.tensor.shape()))
            .collect();
        let v = net
            .params()
            .iter()
            .map(|p| Tensor::zeros(p.tensor.shape()))
            .collect();
        Self {
            config,
            step: 0,
            m,
            v,
        }
    }

    /// Apply one update from the gradients accumulated in `net`, then zero
    /// them so the next batch starts fresh.
    pub fn step(&mut self, net: &mut Network) -> Result<(), DiffnetError> {
        if self.m.len() != net.params().len() {
            return Err(DiffnetError::Shape(format!(
                "optimizer tracks {} tensors, network has {}",
                self.m.len(),
                net.params().len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (pi, p) in net.params_mut().iter_mut().enumerate() {
            for (i, g) in p.grad.values_mut().iter_mut().enumerate() {
                if !g.is_finite() {
                    return Err(DiffnetError::NonFinite(format!(
                        "gradient of {}[{i}]",
                        p.name
                    )));
                }
                let m = &mut self.m[pi].values_mut()[i];
                let v = &mut self.v[pi].values_mut()[i];
                *m = beta1 * *m + (1.0 - beta1) * *g;
                *v = beta2 * *v + (1.0 - beta2) * *g * *g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                p.tensor.values_mut()[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                *g = 0.0;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::{LayerSpec, NetworkSpec};

    fn one_param_net() -> Network {
        let spec = NetworkSpec::new(vec![LayerSpec::Conv1d {
            in_ch: 1,
            out_ch: 1,
            kernel: 1,
            stride: 1,
        }])
        .unwrap();
        Network::new(spec, 0)
    }

    #[test]
    fn first_step_moves_against_gradient_by_lr() {
        // After bias correction the first update is exactly lr * sign(g)
        // (up to eps), independent of |g|.
        let mut net = one_param_net();
        net.params_mut()[0].tensor.values_mut()[0] = 1.0;
        net.params_mut()[0].grad.values_mut()[0] = 0.5;
        let mut adam = AdamState::new(AdamConfig::default(), &net);
        adam.step(&mut net).unwrap();
        let w = net.params()[0].tensor.values()[0];
        assert!((w - (1.0 - 0.004)).abs() < 1e-6, "w = {w}");
    }

    #[test]
    fn grads_are_zeroed_after_step() {
        let mut net = one_param_net();
        net.params_mut()[0].grad.values_mut()[0] = 3.0;
        net.params_mut()[1].grad.values_mut()[0] = -2.0;
        let mut adam = AdamState::new(AdamConfig::default(), &net);
        adam.step(&mut net).unwrap();
        for p in net.params() {
            assert!(p.grad.values().iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn zero_gradient_leaves_params_fixed() {
        let mut net = one_param_net();
        net.params_mut()[0].tensor.values_mut()[0] = 0.7;
        let before: Vec<f64> = net.params().iter().flat_map(|p| p.tensor.values().to_vec()).collect();
        let mut adam = AdamState::new(AdamConfig::default(), &net);
        adam.step(&mut net).unwrap();
        let after: Vec<f64> = net.params().iter().flat_map(|p| p.tensor.values().to_vec()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut net = one_param_net();
        net.params_mut()[0].grad.values_mut()[0] = f64::NAN;
        let mut adam = AdamState::new(AdamConfig::default(), &net);
        assert!(matches!(
            adam.step(&mut net),
            Err(DiffnetError::NonFinite(_))
        ));
    }

    #[test]
    fn repeated_constant_gradient_descends() {
        let mut net = one_param_net();
        net.params_mut()[0].tensor.values_mut()[0] = 1.0;
        let mut adam = AdamState::new(AdamConfig::default(), &net);
        for _ in 0..100 {
            net.params_mut()[0].grad.values_mut()[0] = 1.0;
            adam.step(&mut net).unwrap();
        }
        let w = net.params()[0].tensor.values()[0];
        assert!(w < 1.0 - 0.3, "w = {w}");
    }
}
