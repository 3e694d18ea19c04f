//! First-order optimizers shared by the two training loops.

use serde::{Deserialize, Serialize};

/// Update rule applied to the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum OptMethod {
    Sgd,
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptMethod {
    pub fn adam() -> Self {
        OptMethod::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// Learning rate as a function of the iteration counter:
/// `base / (1 + decay·k)^power`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    #[serde(default)]
    pub decay: f64,
    #[serde(default = "default_power")]
    pub power: f64,
}

fn default_power() -> f64 {
    1.0
}

impl LrSchedule {
    pub fn constant(base: f64) -> Self {
        LrSchedule {
            base,
            decay: 0.0,
            power: 1.0,
        }
    }

    pub fn at(&self, k: u64) -> f64 {
        self.base / (1.0 + self.decay * k as f64).powf(self.power)
    }
}

/// Optimizer state over one flat parameter vector.
pub struct Optimizer {
    method: OptMethod,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Optimizer {
    pub fn new(method: OptMethod, n: usize) -> Self {
        let (m, v) = match method {
            OptMethod::Sgd => (Vec::new(), Vec::new()),
            OptMethod::Adam { .. } => (vec![0.0; n], vec![0.0; n]),
        };
        Optimizer { method, t: 0, m, v }
    }

    /// One descent step `θ ← θ − lr·direction(∇)`.
    pub fn step(&mut self, lr: f64, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        match self.method {
            OptMethod::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptMethod::Adam { beta1, beta2, eps } => {
                self.t += 1;
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let mhat = self.m[i] / bc1;
                    let vhat = self.v[i] / bc2;
                    params[i] -= lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step_is_plain_descent() {
        let mut opt = Optimizer::new(OptMethod::Sgd, 2);
        let mut p = vec![1.0, -2.0];
        opt.step(0.1, &mut p, &[10.0, -10.0]);
        assert!((p[0] - 0.0).abs() < 1e-14);
        assert!((p[1] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        // Minimize ½(p0−3)² + 2(p1+1)².
        let mut opt = Optimizer::new(OptMethod::adam(), 2);
        let mut p = vec![0.0, 0.0];
        for _ in 0..4000 {
            let grad = [p[0] - 3.0, 4.0 * (p[1] + 1.0)];
            opt.step(0.01, &mut p, &grad);
        }
        assert!((p[0] - 3.0).abs() < 1e-3);
        assert!((p[1] + 1.0).abs() < 1e-3);
    }

    #[test]
    fn schedule_decays() {
        let s = LrSchedule {
            base: 1.0,
            decay: 0.01,
            power: 0.5,
        };
        assert!((s.at(0) - 1.0).abs() < 1e-15);
        assert!(s.at(100) < s.at(10));
        let c = LrSchedule::constant(0.3);
        assert_eq!(c.at(0), c.at(1_000_000));
    }
}
