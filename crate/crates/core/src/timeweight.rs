//! Time distributions on `[0, 1]`, weighting functions, and the tilting
//! construction `D~(dt) = w(t) D(dt) / K` that turns a weighted expectation
//! into `K` times an unweighted one.
//!
//! Dominance of Lebesgue measure cannot be decided from finitely many density
//! queries, so every catalog entry declares the finite set of times where its
//! density (or weight) may vanish, and [`check_dominates`] scans a grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{self, eval_nudged, DEFAULT_PANELS};
use crate::rng::{self, StreamRng};

/// Largest grid supremum of `w` accepted when building a rejection sampler.
pub const WEIGHT_OVERFLOW_GUARD: f64 = 1e12;
/// Safety factor on the grid-estimated supremum used as the rejection bound.
pub const REJECTION_SAFETY: f64 = 1.1;
const MAX_REJECTIONS: usize = 10_000_000;

/// Monotone schedule `kappa: [0,1] -> [0,1]` with `kappa(0) = 0`, `kappa(1) = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KappaSchedule {
    Linear,
    Power { p: f64 },
    /// `sin^2(pi t / 2)`
    Cosine,
}

impl KappaSchedule {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            KappaSchedule::Linear => t,
            KappaSchedule::Power { p } => t.powf(*p),
            KappaSchedule::Cosine => (std::f64::consts::FRAC_PI_2 * t).sin().powi(2),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            KappaSchedule::Linear => 1.0,
            KappaSchedule::Power { p } => p * t.powf(p - 1.0),
            KappaSchedule::Cosine => std::f64::consts::FRAC_PI_2 * (std::f64::consts::PI * t).sin(),
        }
    }

    /// `kappa'(t) / (1 - kappa(t))`; infinite at `t = 1`.
    pub fn hazard(&self, t: f64) -> f64 {
        self.derivative(t) / (1.0 - self.value(t))
    }

    pub fn validate(&self) -> Result<()> {
        if let KappaSchedule::Power { p } = self {
            if !(*p > 0.0) || !p.is_finite() {
                return Err(Error::SchedulerInvalid(format!("power must be positive, got {p}")));
            }
        }
        if self.value(0.0).abs() > 1e-12 || (self.value(1.0) - 1.0).abs() > 1e-12 {
            return Err(Error::SchedulerInvalid("kappa(0) must be 0 and kappa(1) must be 1".into()));
        }
        for t in quad::linspace(1e-3, 1.0 - 1e-3, 999) {
            if !(self.derivative(t) > 0.0) {
                return Err(Error::SchedulerInvalid(format!("kappa not increasing at t = {t}")));
            }
        }
        Ok(())
    }
}

/// Nonnegative weighting function on `[0, 1]`, positive off a finite set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightFn {
    Constant { c: f64 },
    /// `slope * t + intercept`
    Linear { slope: f64, intercept: f64 },
    /// `(1 - t + eps)^(-power)`
    InvShift { eps: f64, power: f64 },
    /// `1 / h(t)` for the hazard `h = kappa' / (1 - kappa)`.
    InvHazard { kappa: KappaSchedule },
    Reciprocal { inner: Box<WeightFn> },
}

impl WeightFn {
    pub fn one() -> Self {
        WeightFn::Constant { c: 1.0 }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            WeightFn::Constant { c } => *c,
            WeightFn::Linear { slope, intercept } => slope * t + intercept,
            WeightFn::InvShift { eps, power } => (1.0 - t + eps).powf(-power),
            WeightFn::InvHazard { kappa } => (1.0 - kappa.value(t)) / kappa.derivative(t),
            WeightFn::Reciprocal { inner } => 1.0 / inner.eval(t),
        }
    }

    /// Times in `[0, 1]` where the weight may vanish (or, for a reciprocal,
    /// blow up).
    pub fn exception_set(&self) -> Vec<f64> {
        match self {
            WeightFn::Constant { .. } | WeightFn::InvShift { .. } => Vec::new(),
            WeightFn::Linear { slope, intercept } => {
                if *slope == 0.0 {
                    return Vec::new();
                }
                let root = -intercept / slope;
                if (0.0..=1.0).contains(&root) {
                    vec![root]
                } else {
                    Vec::new()
                }
            }
            WeightFn::InvHazard { .. } => vec![1.0],
            WeightFn::Reciprocal { inner } => inner.exception_set(),
        }
    }

    /// Checks nonnegativity on a grid and positivity off the exception set.
    pub fn validate(&self) -> Result<()> {
        if let WeightFn::InvShift { eps, .. } = self {
            if !(*eps > 0.0) {
                return Err(Error::InvalidArgument(format!("InvShift needs eps > 0, got {eps}")));
            }
        }
        let exceptions = self.exception_set();
        for t in quad::linspace(0.0, 1.0, 1001) {
            let v = eval_nudged(&|s| self.eval(s), t, 0.0, 1.0);
            let exempt = exceptions.iter().any(|e| (e - t).abs() < 1e-12);
            if v < 0.0 || v.is_nan() || (!exempt && v == 0.0) {
                return Err(Error::NonpositiveWeight { t, value: v });
            }
        }
        Ok(())
    }
}

/// Probability law on `[0, 1]` given by a density and a counter-based sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeDistribution {
    Uniform,
    Beta { a: f64, b: f64 },
    /// Exponential with the given rate, truncated to `[0, 1]`.
    TruncExp { rate: f64 },
    /// Uniform on `[lo, hi]`, zero elsewhere. Fails dominance unless `lo = 0, hi = 1`.
    UniformOn { lo: f64, hi: f64 },
    /// Density `w(t) base(t) / mass`, sampled by rejection against `base` with
    /// envelope `bound >= sup w`.
    Tilted {
        base: Box<TimeDistribution>,
        weight: WeightFn,
        mass: f64,
        bound: f64,
    },
}

impl TimeDistribution {
    pub fn density(&self, t: f64) -> f64 {
        if !(0.0..=1.0).contains(&t) {
            return 0.0;
        }
        match self {
            TimeDistribution::Uniform => 1.0,
            TimeDistribution::Beta { a, b } => {
                (-statrs::function::beta::ln_beta(*a, *b)).exp()
                    * t.powf(a - 1.0)
                    * (1.0 - t).powf(b - 1.0)
            }
            TimeDistribution::TruncExp { rate } => rate * (-rate * t).exp() / (1.0 - (-rate).exp()),
            TimeDistribution::UniformOn { lo, hi } => {
                if (*lo..=*hi).contains(&t) {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            TimeDistribution::Tilted { base, weight, mass, .. } => {
                weight.eval(t) * base.density(t) / mass
            }
        }
    }

    pub fn exception_set(&self) -> Vec<f64> {
        match self {
            TimeDistribution::Uniform | TimeDistribution::TruncExp { .. } => Vec::new(),
            TimeDistribution::UniformOn { .. } => Vec::new(),
            TimeDistribution::Beta { a, b } => {
                let mut e = Vec::new();
                if *a > 1.0 {
                    e.push(0.0);
                }
                if *b > 1.0 {
                    e.push(1.0);
                }
                e
            }
            TimeDistribution::Tilted { base, weight, .. } => {
                let mut e = base.exception_set();
                e.extend(weight.exception_set());
                e.sort_by(f64::total_cmp);
                e.dedup();
                e
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TimeDistribution::Beta { a, b } if !(*a > 0.0 && *b > 0.0) => Err(Error::InvalidArgument(
                format!("Beta parameters must be positive, got ({a}, {b})"),
            )),
            TimeDistribution::TruncExp { rate } if *rate == 0.0 || !rate.is_finite() => Err(
                Error::InvalidArgument(format!("truncated exponential rate must be nonzero, got {rate}")),
            ),
            TimeDistribution::UniformOn { lo, hi } if !(0.0 <= *lo && lo < hi && *hi <= 1.0) => Err(
                Error::InvalidArgument(format!("UniformOn needs 0 <= lo < hi <= 1, got [{lo}, {hi}]")),
            ),
            _ => Ok(()),
        }
    }

    /// Simpson integral of the density over `[0, 1]`.
    pub fn normalization(&self) -> f64 {
        quad::simpson_unit(&|t| self.density(t))
    }

    /// Draw sample `index` of the stream addressed by `seed`.
    pub fn sample(&self, seed: u64, index: u64) -> Result<f64> {
        self.sample_with(&mut rng::stream(seed, index))
    }

    pub fn sample_with(&self, rng: &mut StreamRng) -> Result<f64> {
        use rand::Rng;
        match self {
            TimeDistribution::Uniform => Ok(rng::uniform(rng)),
            TimeDistribution::Beta { a, b } => {
                let beta = rand_distr::Beta::new(*a, *b)
                    .map_err(|e| Error::InvalidArgument(format!("Beta({a}, {b}): {e}")))?;
                Ok(rng.sample(beta))
            }
            TimeDistribution::TruncExp { rate } => {
                let u = rng::uniform(rng);
                Ok(-(1.0 - u * (1.0 - (-rate).exp())).ln() / rate)
            }
            TimeDistribution::UniformOn { lo, hi } => Ok(lo + (hi - lo) * rng::uniform(rng)),
            TimeDistribution::Tilted { base, weight, bound, .. } => {
                for _ in 0..MAX_REJECTIONS {
                    let t = base.sample_with(rng)?;
                    if rng::uniform(rng) * bound <= weight.eval(t) {
                        return Ok(t);
                    }
                }
                Err(Error::InvalidArgument("rejection sampler failed to accept".into()))
            }
        }
    }
}

/// Tilt `dist` by `w`: returns `D~ = w D / K` and `K = E_D[w]`.
pub fn reweight(dist: &TimeDistribution, w: &WeightFn) -> Result<(TimeDistribution, f64)> {
    let mass = quad::simpson_unit(&|t| w.eval(t) * dist.density(t));
    if !(mass > 1e-14) {
        return Err(Error::ZeroMass(mass));
    }
    let sup = quad::linspace(0.0, 1.0, DEFAULT_PANELS + 1)
        .into_iter()
        .map(|t| eval_nudged(&|s| w.eval(s), t, 0.0, 1.0))
        .fold(0.0f64, f64::max);
    if !sup.is_finite() || sup > WEIGHT_OVERFLOW_GUARD {
        return Err(Error::UnboundedWeight(sup));
    }
    let tilted = TimeDistribution::Tilted {
        base: Box::new(dist.clone()),
        weight: w.clone(),
        mass,
        bound: REJECTION_SAFETY * sup,
    };
    Ok((tilted, mass))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedExpectation {
    /// Mean of `w(t) f(t)` over `n` draws from the distribution.
    pub mc: f64,
    pub mc_std_error: f64,
    /// Simpson integral of `w f density`.
    pub quad: f64,
}

/// Estimate `E_{t ~ dist}[w(t) f(t)]` by Monte Carlo and by quadrature.
pub fn expect_weighted(
    dist: &TimeDistribution,
    w: &WeightFn,
    f: &(dyn Fn(f64) -> f64 + Sync),
    n: usize,
    seed: u64,
) -> Result<WeightedExpectation> {
    let partials = rng::chunks(n, 4096)
        .into_par_iter()
        .map(|range| {
            let (mut s, mut s2) = (0.0, 0.0);
            for i in range {
                let t = dist.sample(seed, i as u64)?;
                let v = w.eval(t) * f(t);
                s += v;
                s2 += v * v;
            }
            Ok((s, s2))
        })
        .collect::<Result<Vec<_>>>()?;
    let (s, s2) = partials.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let nf = n as f64;
    let mean = s / nf;
    let var = ((s2 / nf - mean * mean) * nf / (nf - 1.0).max(1.0)).max(0.0);
    Ok(WeightedExpectation {
        mc: mean,
        mc_std_error: (var / nf).sqrt(),
        quad: quad::simpson_unit(&|t| w.eval(t) * f(t) * dist.density(t)),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominanceReport {
    pub pass: bool,
    pub grid_n: usize,
    pub violations: usize,
    pub first_violation: Option<f64>,
    /// Grid positivity is necessary for dominance of Lebesgue measure, not sufficient.
    pub note: &'static str,
}

/// Scan the density on `grid_n` equispaced points, ignoring declared exceptions.
pub fn check_dominates(dist: &TimeDistribution, grid_n: usize) -> Result<DominanceReport> {
    if grid_n < 100 {
        return Err(Error::InvalidArgument(format!("grid_n must be >= 100, got {grid_n}")));
    }
    let exceptions = dist.exception_set();
    let mut violations = 0;
    let mut first = None;
    for t in quad::linspace(0.0, 1.0, grid_n) {
        if exceptions.iter().any(|e| (e - t).abs() < 1e-12) {
            continue;
        }
        if !(dist.density(t) > 0.0) {
            violations += 1;
            first.get_or_insert(t);
        }
    }
    Ok(DominanceReport {
        pass: violations == 0,
        grid_n,
        violations,
        first_violation: first,
        note: "grid positivity check: necessary, not sufficient, for dominating Lebesgue measure",
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn beta22() -> TimeDistribution {
        TimeDistribution::Beta { a: 2.0, b: 2.0 }
    }

    #[test]
    fn linear_weight_on_uniform() {
        let w = WeightFn::Linear { slope: 2.0, intercept: 0.0 };
        let (tilted, k) = reweight(&TimeDistribution::Uniform, &w).unwrap();
        assert!((k - 1.0).abs() < 1e-12);
        for t in [0.1, 0.5, 0.9] {
            assert!((tilted.density(t) - 2.0 * t).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_weight_gives_same_law() {
        let (tilted, k) = reweight(&TimeDistribution::Uniform, &WeightFn::Constant { c: 5.0 }).unwrap();
        assert!((k - 5.0).abs() < 1e-12);
        assert!((tilted.density(0.3) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tilted_beta_normalizes() {
        let w = WeightFn::InvShift { eps: 0.1, power: 1.0 };
        let (tilted, k) = reweight(&beta22(), &w).unwrap();
        // independent check of K with a finer rule
        let k_fine = quad::simpson(&|t| 6.0 * t * (1.0 - t) / (1.1 - t), 0.0, 1.0, 40_000);
        assert!((k - k_fine).abs() < 1e-10);
        assert!((tilted.normalization() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_mass_rejected() {
        let w = WeightFn::Constant { c: 0.0 };
        assert!(matches!(reweight(&TimeDistribution::Uniform, &w), Err(Error::ZeroMass(_))));
    }

    #[test]
    fn unbounded_weight_rejected() {
        // 1/(1-t)^2 has an infinite sup at t = 1 even after nudging
        let w = WeightFn::InvShift { eps: 1e-9, power: 2.0 };
        assert!(matches!(reweight(&TimeDistribution::Uniform, &w), Err(Error::UnboundedWeight(_))));
    }

    #[test]
    fn weighted_expectation_examples() {
        let w = WeightFn::Linear { slope: 2.0, intercept: 0.0 };
        let e = expect_weighted(&TimeDistribution::Uniform, &w, &|t| t, 200_000, 3).unwrap();
        assert!((e.quad - 2.0 / 3.0).abs() < 1e-12);
        assert!((e.mc - 2.0 / 3.0).abs() < 4.0 * e.mc_std_error);

        let e = expect_weighted(&TimeDistribution::Uniform, &WeightFn::one(), &|_| 1.0, 1000, 3).unwrap();
        assert_eq!(e.mc, 1.0);
        assert!((e.quad - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_expectation_beta_sine() {
        let w = WeightFn::InvShift { eps: 0.1, power: 1.0 };
        let f = |t: f64| (std::f64::consts::PI * t).sin();
        let e = expect_weighted(&beta22(), &w, &f, 100_000, 11).unwrap();
        assert!((e.mc - e.quad).abs() < 3.0 * e.mc_std_error, "{e:?}");
    }

    #[test]
    fn dominance_checks() {
        assert!(check_dominates(&TimeDistribution::Uniform, 1000).unwrap().pass);
        assert_eq!(beta22().exception_set(), vec![0.0, 1.0]);
        assert!(check_dominates(&beta22(), 1000).unwrap().pass);
        let r = check_dominates(&TimeDistribution::UniformOn { lo: 0.3, hi: 1.0 }, 1000).unwrap();
        assert!(!r.pass);
        assert_eq!(r.first_violation, Some(0.0));
        assert!(check_dominates(&TimeDistribution::Uniform, 10).is_err());
    }

    #[test]
    fn samplers_match_their_densities() {
        for dist in [
            TimeDistribution::Uniform,
            beta22(),
            TimeDistribution::TruncExp { rate: 3.0 },
            reweight(&TimeDistribution::Uniform, &WeightFn::Linear { slope: 2.0, intercept: 0.0 })
                .unwrap()
                .0,
        ] {
            let n = 100_000;
            let mean: f64 = (0..n).map(|i| dist.sample(5, i).unwrap()).sum::<f64>() / n as f64;
            let exact = quad::simpson_unit(&|t| t * dist.density(t));
            // sd of t is at most 0.5
            assert!((mean - exact).abs() < 4.0 * 0.5 / (n as f64).sqrt(), "{dist:?}: {mean} vs {exact}");
        }
    }

    #[test]
    fn reweight_round_trip_recovers_density() {
        let w = WeightFn::InvShift { eps: 0.1, power: 2.0 };
        let inv = WeightFn::Reciprocal { inner: Box::new(w.clone()) };
        let (once, _) = reweight(&beta22(), &w).unwrap();
        let (twice, _) = reweight(&once, &inv).unwrap();
        for t in quad::linspace(0.0, 1.0, 1001) {
            assert!((twice.density(t) - beta22().density(t)).abs() < 1e-10, "t = {t}");
        }
    }

    #[test]
    fn kappa_schedules() {
        for k in [KappaSchedule::Linear, KappaSchedule::Power { p: 2.0 }, KappaSchedule::Cosine] {
            k.validate().unwrap();
            let t = 0.37;
            let h = 1e-6;
            let fd = (k.value(t + h) - k.value(t - h)) / (2.0 * h);
            assert!((fd - k.derivative(t)).abs() < 1e-8);
        }
        assert!((KappaSchedule::Linear.hazard(0.5) - 2.0).abs() < 1e-15);
        assert!(KappaSchedule::Power { p: -1.0 }.validate().is_err());
    }

    #[test]
    fn weight_validation() {
        WeightFn::Linear { slope: 2.0, intercept: 0.0 }.validate().unwrap();
        WeightFn::InvHazard { kappa: KappaSchedule::Linear }.validate().unwrap();
        assert!(WeightFn::Linear { slope: -2.0, intercept: 1.0 }.validate().is_err());
        assert!(WeightFn::Constant { c: 0.0 }.validate().is_err());
        let w = WeightFn::InvHazard { kappa: KappaSchedule::Linear };
        assert!((w.eval(0.25) - 0.75).abs() < 1e-15);
    }
}
