use serde::{Deserialize, Serialize};

use super::{NnError, Param, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept in `f64` regardless of the
/// parameter precision.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    /// Applies one update. Parameters must be passed in the same order on
    /// every call. Nothing is modified if any gradient is non-finite.
    pub fn step<T: Scalar>(&mut self, params: &mut [Param<'_, T>]) -> Result<(), NnError> {
        for p in params.iter() {
            if p.value.len() != p.grad.len() {
                return Err(super::shape_err(format!("{} gradient", p.name), &[p.value.len()], &[p.grad.len()]));
            }
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(NnError::NonFinite(p.name.clone()));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.value.len()) {
            return Err(NnError::Config("parameter layout changed between optimizer steps".into()));
        }

        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            eps,
        } = self.config;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i].as_f64();
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let update = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                p.value[i] = T::of(p.value[i].as_f64() - update);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param<'a>(value: &'a mut [f64], grad: &'a mut [f64]) -> Param<'a, f64> {
        Param {
            name: "w".into(),
            value,
            grad,
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut adam = Adam::new(AdamConfig::default());
        let (mut w, mut g) = (vec![0.3, -1.2], vec![0.0, 0.0]);
        for _ in 0..3 {
            adam.step(&mut [param(&mut w, &mut g)]).unwrap();
        }
        assert_eq!(w, vec![0.3, -1.2]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m1 = 0.1, v1 = 0.001; corrected both to 1, so the step is
        // lr * 1 / (1 + eps).
        let mut adam = Adam::new(AdamConfig::default());
        let (mut w, mut g) = (vec![0.0], vec![1.0]);
        adam.step(&mut [param(&mut w, &mut g)]).unwrap();
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((w[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let mut adam = Adam::new(AdamConfig {
            learning_rate: 0.0,
            ..AdamConfig::default()
        });
        let (mut w, mut g) = (vec![0.5], vec![3.0]);
        adam.step(&mut [param(&mut w, &mut g)]).unwrap();
        assert_eq!(w, vec![0.5]);
    }

    #[test]
    fn identical_state_gives_identical_updates() {
        let run = || {
            let mut adam = Adam::new(AdamConfig::default());
            let mut w = vec![0.1, 0.2, 0.3];
            for k in 0..5 {
                let mut g: Vec<f64> = w.iter().map(|x| x * k as f64 - 0.1).collect();
                adam.step(&mut [param(&mut w, &mut g)]).unwrap();
            }
            w
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut adam = Adam::new(AdamConfig::default());
        let (mut w, mut g) = (vec![1.0, 2.0], vec![0.1, f64::NAN]);
        let mut p = [Param {
            name: "layer2.conv2d.weight".into(),
            value: &mut w,
            grad: &mut g,
        }];
        match adam.step(&mut p) {
            Err(NnError::NonFinite(name)) => assert_eq!(name, "layer2.conv2d.weight"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(w, vec![1.0, 2.0]);
        assert_eq!(adam.steps(), 0);
    }
}
