use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{contract, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for a named parameter set.
///
/// Moments start at zero and are created lazily the first time a parameter
/// receives a gradient.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    m: IndexMap<String, Tensor>,
    v: IndexMap<String, Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            m: IndexMap::new(),
            v: IndexMap::new(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor> {
        self.m.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor> {
        self.v.get(name)
    }

    /// One bias-corrected Adam update of every parameter that has a gradient.
    ///
    /// All gradients are validated before any parameter changes, so a
    /// non-finite gradient leaves both `params` and the state untouched.
    pub fn step(
        &mut self,
        params: &mut IndexMap<String, Tensor>,
        grads: &IndexMap<String, Tensor>,
    ) -> Result<()> {
        for (name, g) in grads {
            let p = params
                .get(name)
                .ok_or_else(|| contract(format!("gradient for unknown parameter `{name}`")))?;
            if p.shape() != g.shape() {
                return Err(Error::Dimension {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let k = self.step as i32;
        let bc1 = 1.0 - beta1.powi(k);
        let bc2_sqrt = (1.0 - beta2.powi(k)).sqrt();
        let step_size = lr / bc1;

        for (name, g) in grads {
            let p = params.get_mut(name).expect("validated above");
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            let (p, m, v, g) = (p.data_mut(), m.data_mut(), v.data_mut(), g.data());
            let len = g.len();
            // Equal-length reslices let the compiler drop bounds checks.
            let (p, m, v) = (&mut p[..len], &mut m[..len], &mut v[..len]);
            let (c1, c2) = (1.0 - beta1, 1.0 - beta2);
            for i in 0..len {
                let gi = g[i];
                let mi = beta1 * m[i] + c1 * gi;
                let vi = beta2 * v[i] + c2 * gi * gi;
                m[i] = mi;
                v[i] = vi;
                p[i] -= step_size * mi / (vi.sqrt() / bc2_sqrt + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(name: &str, v: f64) -> IndexMap<String, Tensor> {
        IndexMap::from([(name.to_string(), Tensor::scalar(v))])
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = IndexMap::from([(
            "w".to_string(),
            Tensor::new([3], vec![1.0, -2.0, 3.0]).unwrap(),
        )]);
        let before = params.clone();
        let grads = IndexMap::from([("w".to_string(), Tensor::zeros([3]))]);
        let mut state = AdamState::new(AdamConfig::default());
        for _ in 0..5 {
            state.step(&mut params, &grads).unwrap();
        }
        assert_eq!(params, before);
        assert_eq!(state.step_count(), 5);
    }

    #[test]
    fn first_step_matches_hand_arithmetic() {
        let (lr, b1, b2, eps) = (1e-4_f64, 0.9_f64, 0.999_f64, 1e-8_f64);
        let g = 1.0_f64;
        // One step from zero moments, written out longhand.
        let m = (1.0 - b1) * g;
        let v = (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1);
        let denom = v.sqrt() / (1.0 - b2).sqrt() + eps;
        let expected = 0.5 - lr * m_hat / denom;

        let mut params = single("x", 0.5);
        let mut state = AdamState::new(AdamConfig::default());
        state.step(&mut params, &single("x", g)).unwrap();
        let got = params["x"].item().unwrap();
        assert_eq!(got, expected);
        assert!((got - (0.5 - 1e-4)).abs() < 1e-11);
        assert!(state.second_moment("x").unwrap().data()[0] >= 0.0);
    }

    #[test]
    fn descends_a_parabola() {
        let mut params = single("x", 1.0);
        let mut state = AdamState::new(AdamConfig::default());
        let mut prev = 1.0_f64;
        for _ in 0..100 {
            let x = params["x"].item().unwrap();
            state.step(&mut params, &single("x", 2.0 * x)).unwrap();
            let now = params["x"].item().unwrap().abs();
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter_and_changes_nothing() {
        let mut params = single("bias", 1.0);
        let mut state = AdamState::new(AdamConfig::default());
        let err = state
            .step(&mut params, &single("bias", f64::NAN))
            .unwrap_err();
        assert!(err.to_string().contains("bias"));
        assert_eq!(params["bias"].item().unwrap(), 1.0);
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn identical_inputs_give_bit_identical_outputs() {
        let run = || {
            let mut params =
                IndexMap::from([("w".to_string(), Tensor::new([2], vec![0.3, -0.7]).unwrap())]);
            let grads =
                IndexMap::from([("w".to_string(), Tensor::new([2], vec![0.11, 2.5]).unwrap())]);
            let mut state = AdamState::new(AdamConfig::default());
            for _ in 0..3 {
                state.step(&mut params, &grads).unwrap();
            }
            params["w"].data().to_vec()
        };
        let (a, b) = (run(), run());
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
