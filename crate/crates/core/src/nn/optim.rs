use std::str::FromStr;

use super::Parameterized;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Adam,
    Sgd,
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(Algorithm::Adam),
            "sgd" => Ok(Algorithm::Sgd),
            _ => Err(Error::Config(format!("unknown optimizer `{s}` (adam or sgd)"))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Adam => "adam",
            Algorithm::Sgd => "sgd",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    /// L2 penalty added to the gradient.
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig {
            algorithm: Algorithm::Adam,
            learning_rate,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig {
            algorithm: Algorithm::Sgd,
            ..Self::adam(learning_rate)
        }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }
}

/// Optimizer state. Adam moments are allocated on the first step and follow
/// the parameter order of the model they are used with.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer<T> {
    pub config: OptimizerConfig,
    pub step_count: u64,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer {
            config,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    /// Applies one update to `params` using `grads`, which must have the same
    /// layout. Non-finite gradients abort the step before anything changes.
    pub fn step<P: Parameterized<T>>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grad_list = grads.params();
        let names: Vec<String> = params.params().into_iter().map(|(n, _)| n).collect();
        if names.len() != grad_list.len() {
            return Err(Error::shape("gradient layout differs from parameters"));
        }
        for ((name, g), pname) in grad_list.iter().zip(&names) {
            if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient {bad} in parameter group `{pname}` ({name})"
                )));
            }
        }
        let mut plist = params.params_mut();
        for (p, (_, g)) in plist.iter().zip(&grad_list) {
            if p.len() != g.len() {
                return Err(Error::shape("gradient buffer length differs from parameter"));
            }
        }

        let cfg = self.config;
        let lr = T::lit(cfg.learning_rate);
        let wd = T::lit(cfg.weight_decay);
        self.step_count += 1;
        match cfg.algorithm {
            Algorithm::Sgd => {
                for (p, (_, g)) in plist.iter_mut().zip(&grad_list) {
                    for (pv, &gv) in p.iter_mut().zip(g.iter()) {
                        let grad = gv + wd * *pv;
                        *pv -= lr * grad;
                    }
                }
            }
            Algorithm::Adam => {
                if self.first_moment.len() != plist.len() {
                    self.first_moment = plist.iter().map(|p| vec![T::zero(); p.len()]).collect();
                    self.second_moment = self.first_moment.clone();
                }
                let t = self.step_count as i32;
                let b1 = T::lit(cfg.beta1);
                let b2 = T::lit(cfg.beta2);
                let eps = T::lit(cfg.epsilon);
                let c1 = T::one() - b1.powi(t);
                let c2 = T::one() - b2.powi(t);
                for (k, (p, (_, g))) in plist.iter_mut().zip(&grad_list).enumerate() {
                    let m = &mut self.first_moment[k];
                    let v = &mut self.second_moment[k];
                    for i in 0..p.len() {
                        let grad = g[i] + wd * p[i];
                        m[i] = b1 * m[i] + (T::one() - b1) * grad;
                        v[i] = b2 * v[i] + (T::one() - b2) * grad * grad;
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone)]
    struct P(Vec<f64>);

    impl Parameterized<f64> for P {
        fn params(&self) -> Vec<(String, &[f64])> {
            vec![("p".into(), &self.0[..])]
        }
        fn params_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0[..]]
        }
    }

    #[test]
    fn zero_gradient_is_identity() {
        for cfg in [OptimizerConfig::adam(1e-3), OptimizerConfig::sgd(0.1)] {
            let mut p = P(vec![1.0, -2.0]);
            let mut opt = Optimizer::new(cfg);
            opt.step(&mut p, &P(vec![0.0, 0.0])).unwrap();
            assert_eq!(p.0, vec![1.0, -2.0]);
        }
    }

    #[test]
    fn sgd_step() {
        let mut p = P(vec![1.0]);
        Optimizer::new(OptimizerConfig::sgd(0.1))
            .step(&mut p, &P(vec![2.0]))
            .unwrap();
        assert!((p.0[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_weight_decay() {
        let mut p = P(vec![1.0]);
        Optimizer::new(OptimizerConfig::sgd(0.1).with_weight_decay(0.5))
            .step(&mut p, &P(vec![2.0]))
            .unwrap();
        assert!((p.0[0] - (1.0 - 0.1 * 2.5)).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step() {
        let mut p = P(vec![0.0]);
        let mut opt = Optimizer::new(OptimizerConfig::adam(1e-3));
        opt.step(&mut p, &P(vec![1.0])).unwrap();
        // m_hat = v_hat = 1 after bias correction
        assert!((p.0[0] + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(opt.step_count, 1);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        for cfg in [OptimizerConfig::adam(0.0), OptimizerConfig::sgd(0.0)] {
            let mut p = P(vec![0.3, 0.7]);
            let mut opt = Optimizer::new(cfg);
            for _ in 0..3 {
                opt.step(&mut p, &P(vec![5.0, -1.0])).unwrap();
            }
            assert_eq!(p.0, vec![0.3, 0.7]);
        }
    }

    #[test]
    fn non_finite_gradient_names_group() {
        let mut p = P(vec![1.0]);
        let err = Optimizer::new(OptimizerConfig::adam(1e-3))
            .step(&mut p, &P(vec![f64::NAN]))
            .unwrap_err();
        assert!(matches!(&err, Error::Numeric(m) if m.contains("`p`")), "{err}");
        assert_eq!(p.0, vec![1.0]);
    }
}
