//! Interacting-particle simulation of the controlled dynamics.
//!
//! Particles follow the Euler-Maruyama discretization of
//! `dX = (b0²∇p(X) + ∇b̃(X)) dt + dW` on the torus, where `p` is the
//! adjoint state whose gradient gives the feedback control. After a
//! burn-in the empirical measure is accumulated into a histogram and the
//! running cost is time-averaged with the mean field slots filled from
//! the particle cloud itself.

use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::Field;
use crate::model::{Coupling, ModelError, ProblemSpec};

#[derive(Debug, Error)]
pub enum SdeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("local density estimation from particles requires d = 1 (got d = {0})")]
    LocalCouplingDimension(usize),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub particles: usize,
    pub dt: f64,
    pub steps: u64,
    #[serde(default)]
    pub burn_in: u64,
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Evaluate the running cost every this many post-burn-in steps.
    /// Consecutive steps are almost perfectly correlated at small `dt`,
    /// so a stride larger than 1 loses little information while skipping
    /// most of the cost evaluations.
    #[serde(default = "default_cost_stride")]
    pub cost_stride: u64,
    pub seed: u64,
}

fn default_bins() -> usize {
    64
}

fn default_cost_stride() -> u64 {
    1
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SdeError> {
        if self.particles == 0 || self.bins == 0 || self.steps == 0 {
            return Err(SdeError::InvalidConfig(
                "particles, bins and steps must be positive".into(),
            ));
        }
        if !(self.dt > 0.0) {
            return Err(SdeError::InvalidConfig("dt must be positive".into()));
        }
        if self.burn_in >= self.steps {
            return Err(SdeError::InvalidConfig(
                "burn_in must be smaller than steps".into(),
            ));
        }
        if self.cost_stride == 0 {
            return Err(SdeError::InvalidConfig("cost_stride must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimResult {
    /// Occupation density of the first coordinate, per bin, normalized so
    /// the bin average is 1.
    pub histogram: Vec<f64>,
    /// Running cost averaged over particles and post-burn-in steps.
    pub time_avg_cost: f64,
    pub particles: usize,
    pub steps: u64,
    pub burn_in: u64,
    pub dt: f64,
}

/// Runs the particle system under the feedback control `α = b0·∇p`.
pub fn simulate(spec: &ProblemSpec, p: &dyn Field, cfg: &SimConfig) -> Result<SimResult, SdeError> {
    cfg.validate()?;
    spec.validate()?;
    let d = spec.d;
    if spec.local_coupling != Coupling::None && d != 1 {
        return Err(SdeError::LocalCouplingDimension(d));
    }
    let n = cfg.particles;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = vec![0.0f64; n * d];
    for v in x.iter_mut() {
        *v = rng.gen::<f64>();
    }
    let sqrt_dt = cfg.dt.sqrt();
    let b0sq = spec.b0 * spec.b0;

    let bins = cfg.bins;
    let mut occupancy = vec![0u64; bins];
    let mut cost_acc = 0.0;
    let mut cost_samples = 0u64;

    let mut occupancy_total = 0u64;
    let mut xi = vec![0.0f64; d];
    for step in 0..cfg.steps {
        let measuring = step >= cfg.burn_in;
        // Fold the current cloud into the occupation histogram; the local
        // density estimate uses the whole accumulated occupation measure,
        // which is far less noisy than a single-step histogram.
        if measuring {
            for i in 0..n {
                let b = ((x[i * d] * bins as f64) as usize).min(bins - 1);
                occupancy[b] += 1;
            }
            occupancy_total += n as u64;
        }
        let costing = measuring && (step - cfg.burn_in) % cfg.cost_stride == 0;
        let mut step_cost = 0.0;
        for i in 0..n {
            xi.copy_from_slice(&x[i * d..(i + 1) * d]);
            let gp = p.grad(&xi);
            if costing {
                let alpha_sq: f64 = gp.iter().map(|g| (spec.b0 * g).powi(2)).sum();
                let g = match spec.local_coupling {
                    Coupling::None => 0.0,
                    _ => {
                        let b = ((xi[0] * bins as f64) as usize).min(bins - 1);
                        let density =
                            occupancy[b] as f64 * bins as f64 / occupancy_total as f64;
                        spec.local_coupling.g(density.max(1e-12))?
                    }
                };
                let pair = match &spec.f_tilde2 {
                    None => 0.0,
                    Some(kernel) => {
                        let j = (i + 1) % n;
                        kernel(&xi, &x[j * d..(j + 1) * d])
                    }
                };
                step_cost += 0.5 * alpha_sq + spec.f_tilde0.value(&xi) + g + pair;
            }
            let gb = spec.b_tilde.grad(&xi);
            for k in 0..d {
                let drift = b0sq * gp[k] + gb[k];
                let noise: f64 = rng.sample(StandardNormal);
                x[i * d + k] = (xi[k] + drift * cfg.dt + sqrt_dt * noise).rem_euclid(1.0);
            }
        }
        if costing {
            cost_acc += step_cost / n as f64;
            cost_samples += 1;
        }
    }

    let total: u64 = occupancy.iter().sum();
    let histogram = occupancy
        .iter()
        .map(|&c| c as f64 * bins as f64 / total as f64)
        .collect();
    Ok(SimResult {
        histogram,
        time_avg_cost: cost_acc / cost_samples as f64,
        particles: n,
        steps: cfg.steps,
        burn_in: cfg.burn_in,
        dt: cfg.dt,
    })
}

/// Total variation distance between the binned occupation measure and a
/// reference density on `[0,1)`, integrating the reference with a few
/// quadrature points per bin.
pub fn tv_distance(histogram: &[f64], density: impl Fn(f64) -> f64) -> f64 {
    let bins = histogram.len();
    let w = 1.0 / bins as f64;
    let sub = 8;
    let mut tv = 0.0;
    for (b, &h) in histogram.iter().enumerate() {
        let mut mass = 0.0;
        for s in 0..sub {
            let x = (b as f64 + (s as f64 + 0.5) / sub as f64) * w;
            mass += density(x);
        }
        mass *= w / sub as f64;
        tv += (h * w - mass).abs();
    }
    0.5 * tv
}

pub fn write_histogram_csv(path: &Path, result: &SimResult) -> Result<(), SdeError> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "bin_center,density")?;
    let bins = result.histogram.len();
    for (b, &h) in result.histogram.iter().enumerate() {
        writeln!(f, "{},{}", (b as f64 + 0.5) / bins as f64, h)?;
    }
    Ok(())
}
