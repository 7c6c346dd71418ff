//! Continuous-state affine Gaussian paths.
//!
//! Flow matching: `X_t = alpha(t) X_1 + sigma(t) xi` with `xi ~ N(0, I)`, whose
//! conditional velocity is affine in `x1`, so a model predicting `x1` induces a
//! velocity through the same affine map.
//!
//! Diffusion: a noising process `dXbar = sigma_t dWbar` run backward from
//! `t = 1` (data) to `t = 0`. The generative direction is `t: 0 -> 1`, the
//! data point `x0` is the endpoint at `t = 1`, and the accumulated variance at
//! time `t` is `v(t) = int_t^1 sigma_s^2 ds`. The probability flow velocity is
//! `(sigma_t^2 / 2) grad log p_t`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path::ConditionalPath;
use crate::rng::{self, StreamRng};

/// Times closer than this to 1 are treated as singular.
pub const SINGULAR_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AffineScheduler {
    /// `alpha = t`, `sigma = 1 - t`
    #[default]
    Linear,
    /// `alpha = t^a`, `sigma = (1 - t)^s`
    Polynomial { a: f64, s: f64 },
    /// `alpha = sin(pi t / 2)`, `sigma = cos(pi t / 2)`
    Cosine,
}

impl AffineScheduler {
    pub fn alpha(&self, t: f64) -> f64 {
        match self {
            AffineScheduler::Linear => t,
            AffineScheduler::Polynomial { a, .. } => t.powf(*a),
            AffineScheduler::Cosine => (std::f64::consts::FRAC_PI_2 * t).sin(),
        }
    }

    pub fn sigma(&self, t: f64) -> f64 {
        match self {
            AffineScheduler::Linear => 1.0 - t,
            AffineScheduler::Polynomial { s, .. } => (1.0 - t).powf(*s),
            AffineScheduler::Cosine => (std::f64::consts::FRAC_PI_2 * t).cos(),
        }
    }

    pub fn alpha_dot(&self, t: f64) -> f64 {
        match self {
            AffineScheduler::Linear => 1.0,
            AffineScheduler::Polynomial { a, .. } => a * t.powf(a - 1.0),
            AffineScheduler::Cosine => std::f64::consts::FRAC_PI_2 * (std::f64::consts::FRAC_PI_2 * t).cos(),
        }
    }

    pub fn sigma_dot(&self, t: f64) -> f64 {
        match self {
            AffineScheduler::Linear => -1.0,
            AffineScheduler::Polynomial { s, .. } => -s * (1.0 - t).powf(s - 1.0),
            AffineScheduler::Cosine => -std::f64::consts::FRAC_PI_2 * (std::f64::consts::FRAC_PI_2 * t).sin(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let AffineScheduler::Polynomial { a, s } = self {
            if !(*a > 0.0 && *s > 0.0) {
                return Err(Error::SchedulerInvalid(format!("exponents must be positive, got a = {a}, s = {s}")));
            }
        }
        let ends = [self.alpha(0.0), self.alpha(1.0) - 1.0, self.sigma(0.0) - 1.0, self.sigma(1.0)];
        if ends.iter().any(|e| e.abs() > 1e-12) {
            return Err(Error::SchedulerInvalid("need alpha(0)=0, alpha(1)=1, sigma(0)=1, sigma(1)=0".into()));
        }
        Ok(())
    }

    fn check_time(t: f64) -> Result<()> {
        if t >= 1.0 - SINGULAR_MARGIN {
            return Err(Error::SingularTime(t));
        }
        Ok(())
    }

    /// `x_t = alpha x1 + sigma xi` using the normal stream `(seed, index)`.
    pub fn sample_conditional(&self, x1: &[f64], t: f64, seed: u64, index: u64) -> Vec<f64> {
        self.sample_conditional_with(x1, t, &mut rng::stream(seed, index))
    }

    pub fn sample_conditional_with(&self, x1: &[f64], t: f64, rng: &mut StreamRng) -> Vec<f64> {
        let (a, s) = (self.alpha(t), self.sigma(t));
        x1.iter().map(|v| a * v + s * rng::normal(rng)).collect()
    }

    /// `u_t(x | x1) = alpha' x1 + sigma' (x - alpha x1) / sigma`
    pub fn cond_velocity(&self, t: f64, x: &[f64], x1: &[f64]) -> Result<Vec<f64>> {
        let v = AffineVelocity { scheduler: self.clone() };
        v.apply(t, x, x1)
    }
}

/// The map `x1 -> A_{t,x} x1 + b_{t,x}` induced by a scheduler:
/// `A = (alpha' - sigma' alpha / sigma) I`, `b = (sigma' / sigma) x`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AffineVelocity {
    pub scheduler: AffineScheduler,
}

impl AffineVelocity {
    /// The scalar multiple of the identity forming `A_{t,x}`.
    pub fn a_coef(&self, t: f64) -> Result<f64> {
        AffineScheduler::check_time(t)?;
        let s = &self.scheduler;
        Ok(s.alpha_dot(t) - s.sigma_dot(t) * s.alpha(t) / s.sigma(t))
    }

    pub fn b_at(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        AffineScheduler::check_time(t)?;
        let c = self.scheduler.sigma_dot(t) / self.scheduler.sigma(t);
        Ok(x.iter().map(|v| c * v).collect())
    }

    pub fn apply(&self, t: f64, x: &[f64], x1: &[f64]) -> Result<Vec<f64>> {
        let a = self.a_coef(t)?;
        let c = self.scheduler.sigma_dot(t) / self.scheduler.sigma(t);
        Ok(x.iter().zip(x1).map(|(xv, x1v)| a * x1v + c * xv).collect())
    }
}

/// `A_{t,x} x1_hat + b_{t,x}`
pub fn velocity_from_x1pred(velocity: &AffineVelocity, t: f64, x: &[f64], x1_hat: &[f64]) -> Result<Vec<f64>> {
    velocity.apply(t, x, x1_hat)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussComponent {
    pub mean: Vec<f64>,
    /// Diagonal covariance.
    pub var: Vec<f64>,
    pub weight: f64,
}

/// Gaussian mixture with diagonal covariances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmTarget {
    pub components: Vec<GaussComponent>,
}

impl GmmTarget {
    pub fn new(components: Vec<GaussComponent>) -> Result<Self> {
        let first = components.first().ok_or_else(|| Error::InvalidArgument("empty mixture".into()))?;
        let dim = first.mean.len();
        for c in &components {
            if c.mean.len() != dim || c.var.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: c.mean.len().min(c.var.len()) });
            }
            if c.var.iter().any(|v| !(*v > 0.0)) || !(c.weight >= 0.0) {
                return Err(Error::InvalidArgument("variances must be positive and weights nonnegative".into()));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("mixture weights sum to {total}")));
        }
        Ok(GmmTarget { components })
    }

    /// 1-D mixture `sum_k w_k N(m_k, sd_k^2)`.
    pub fn one_d(parts: &[(f64, f64, f64)]) -> Result<Self> {
        Self::new(
            parts
                .iter()
                .map(|&(m, sd, w)| GaussComponent { mean: vec![m], var: vec![sd * sd], weight: w })
                .collect(),
        )
    }

    /// Two equal-weight components at `+-mu` with standard deviation `sd`.
    pub fn symmetric_pair(mu: f64, sd: f64) -> Self {
        Self::one_d(&[(-mu, sd, 0.5), (mu, sd, 0.5)]).expect("valid mixture")
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for c in &self.components {
            m.iter_mut().zip(&c.mean).for_each(|(a, b)| *a += c.weight * b);
        }
        m
    }

    /// Per-coordinate variance.
    pub fn variance(&self) -> Vec<f64> {
        let m = self.mean();
        (0..self.dim())
            .map(|d| {
                self.components
                    .iter()
                    .map(|c| c.weight * (c.var[d] + (c.mean[d] - m[d]).powi(2)))
                    .sum()
            })
            .collect()
    }

    pub fn sample_with(&self, rng: &mut StreamRng) -> Vec<f64> {
        let weights: Vec<f64> = self.components.iter().map(|c| c.weight).collect();
        let c = &self.components[rng::categorical(rng, &weights)];
        c.mean.iter().zip(&c.var).map(|(m, v)| m + v.sqrt() * rng::normal(rng)).collect()
    }

    /// Density of `X_t = alpha X1 + sigma xi`.
    pub fn marginal_density(&self, scheduler: &AffineScheduler, t: f64, x: &[f64]) -> f64 {
        let (a, s) = (scheduler.alpha(t), scheduler.sigma(t));
        self.components
            .iter()
            .map(|c| c.weight * log_normal_diag(x, &c.mean, &c.var, a, s).exp())
            .sum()
    }

    /// `E[X1 | X_t = x]` in closed form: responsibilities under the marginal
    /// `N(alpha m_k, alpha^2 S_k + sigma^2)` and the per-component conjugate
    /// update `m_k + alpha S_k (x - alpha m_k) / (alpha^2 S_k + sigma^2)`.
    pub fn posterior_x1_mean(&self, scheduler: &AffineScheduler, t: f64, x: &[f64]) -> Vec<f64> {
        let (a, s) = (scheduler.alpha(t), scheduler.sigma(t));
        let logr: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.weight.ln() + log_normal_diag(x, &c.mean, &c.var, a, s))
            .collect();
        let top = logr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let r: Vec<f64> = logr.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = r.iter().sum();
        let mut out = vec![0.0; x.len()];
        for (c, rk) in self.components.iter().zip(&r) {
            for d in 0..x.len() {
                let v = a * a * c.var[d] + s * s;
                let m = c.mean[d] + a * c.var[d] * (x[d] - a * c.mean[d]) / v;
                out[d] += rk / total * m;
            }
        }
        out
    }

    /// Marginal velocity field `A E[X1 | x] + b`.
    pub fn marginal_velocity(&self, velocity: &AffineVelocity, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        velocity.apply(t, x, &self.posterior_x1_mean(&velocity.scheduler, t, x))
    }
}

fn log_normal_diag(x: &[f64], mean: &[f64], var: &[f64], a: f64, s: f64) -> f64 {
    x.iter()
        .zip(mean)
        .zip(var)
        .map(|((xv, m), v)| {
            let vt = a * a * v + s * s;
            -0.5 * ((xv - a * m).powi(2) / vt + (2.0 * std::f64::consts::PI * vt).ln())
        })
        .sum()
}

/// Flow-matching path with `x1`-prediction targets: `Z = X1 ~ target`,
/// `X_t | Z` from the scheduler, conditional target `F^Z = x1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowX1Path {
    pub target: GmmTarget,
    pub scheduler: AffineScheduler,
}

impl ConditionalPath for FlowX1Path {
    type Latent = Vec<f64>;
    type State = Vec<f64>;
    type View = [f64];

    fn sample(&self, t: f64, rng: &mut StreamRng) -> (Vec<f64>, Vec<f64>) {
        let x1 = self.target.sample_with(rng);
        let xt = self.scheduler.sample_conditional_with(&x1, t, rng);
        (x1, xt)
    }

    fn cond_target(&self, _t: f64, _x: &[f64], z: &Vec<f64>, out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        out.extend_from_slice(z);
        Ok(())
    }
}

/// Diffusion coefficient `sigma_t` of the noising process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SigmaSchedule {
    Constant { s: f64 },
    /// `sigma_t = s0 + (s1 - s0) t`
    Linear { s0: f64, s1: f64 },
}

impl SigmaSchedule {
    pub fn sigma(&self, t: f64) -> f64 {
        match self {
            SigmaSchedule::Constant { s } => *s,
            SigmaSchedule::Linear { s0, s1 } => s0 + (s1 - s0) * t,
        }
    }

    /// `v(t) = int_t^1 sigma_s^2 ds`
    pub fn accumulated_variance(&self, t: f64) -> f64 {
        match self {
            SigmaSchedule::Constant { s } => s * s * (1.0 - t),
            SigmaSchedule::Linear { s0, s1 } => {
                let slope = s1 - s0;
                if slope == 0.0 {
                    s0 * s0 * (1.0 - t)
                } else {
                    (s1.powi(3) - self.sigma(t).powi(3)) / (3.0 * slope)
                }
            }
        }
    }

    fn checked_variance(&self, t: f64) -> Result<f64> {
        let v = self.accumulated_variance(t);
        if !(v > 0.0) {
            return Err(Error::ZeroVariance(t));
        }
        Ok(v)
    }

    /// `x_t ~ N(x0, v(t) I)`
    pub fn sample_conditional_with(&self, x0: &[f64], t: f64, rng: &mut StreamRng) -> Vec<f64> {
        let sd = self.accumulated_variance(t).max(0.0).sqrt();
        x0.iter().map(|m| m + sd * rng::normal(rng)).collect()
    }
}

/// `grad_x log p_t(x | x0) = (x0 - x) / v(t)`
pub fn diffusion_cond_score(sched: &SigmaSchedule, t: f64, x: &[f64], x0: &[f64]) -> Result<Vec<f64>> {
    let v = sched.checked_variance(t)?;
    Ok(x.iter().zip(x0).map(|(xv, x0v)| (x0v - xv) / v).collect())
}

/// Probability flow velocity `(sigma_t^2 / 2) (A x0_hat + b)` with
/// `A = I / v(t)` and `b = -x / v(t)`.
pub fn velocity_from_x0pred(sched: &SigmaSchedule, t: f64, x: &[f64], x0_hat: &[f64]) -> Result<Vec<f64>> {
    let s2 = sched.sigma(t).powi(2);
    Ok(diffusion_cond_score(sched, t, x, x0_hat)?.into_iter().map(|g| 0.5 * s2 * g).collect())
}

/// Diffusion path with `x0`-prediction targets on a Gaussian-mixture data law.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionX0Path {
    pub data: GmmTarget,
    pub sigma: SigmaSchedule,
}

impl DiffusionX0Path {
    /// Density of `X_t`: each component widens by `v(t)`.
    pub fn marginal_density(&self, t: f64, x: &[f64]) -> f64 {
        let v = self.sigma.accumulated_variance(t);
        self.data
            .components
            .iter()
            .map(|c| {
                let var: Vec<f64> = c.var.iter().map(|s| s + v).collect();
                c.weight * log_normal_diag(x, &c.mean, &var, 1.0, 0.0).exp()
            })
            .sum()
    }

    /// `E[X0 | X_t = x]` by the conjugate update with noise variance `v(t)`.
    pub fn posterior_x0_mean(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let v = self.sigma.accumulated_variance(t);
        let logr: Vec<f64> = self
            .data
            .components
            .iter()
            .map(|c| {
                let var: Vec<f64> = c.var.iter().map(|s| s + v).collect();
                c.weight.ln() + log_normal_diag(x, &c.mean, &var, 1.0, 0.0)
            })
            .collect();
        let top = logr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let r: Vec<f64> = logr.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = r.iter().sum();
        let mut out = vec![0.0; x.len()];
        for (c, rk) in self.data.components.iter().zip(&r) {
            for d in 0..x.len() {
                let m = c.mean[d] + c.var[d] / (c.var[d] + v) * (x[d] - c.mean[d]);
                out[d] += rk / total * m;
            }
        }
        out
    }

    /// Marginal probability flow velocity.
    pub fn marginal_velocity(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        velocity_from_x0pred(&self.sigma, t, x, &self.posterior_x0_mean(t, x))
    }
}

impl ConditionalPath for DiffusionX0Path {
    type Latent = Vec<f64>;
    type State = Vec<f64>;
    type View = [f64];

    fn sample(&self, t: f64, rng: &mut StreamRng) -> (Vec<f64>, Vec<f64>) {
        let x0 = self.data.sample_with(rng);
        let xt = self.sigma.sample_conditional_with(&x0, t, rng);
        (x0, xt)
    }

    fn cond_target(&self, _t: f64, _x: &[f64], z: &Vec<f64>, out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        out.extend_from_slice(z);
        Ok(())
    }
}
