//! Forward simulation of learned generators and distances between the
//! simulated and target distributions.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flowpaths::{velocity_from_x1pred, AffineVelocity};
use crate::jumpkernels::JumpGenerator;
use crate::model::Predictor;
use crate::quad;
use crate::rng::{self, StreamRng};
use crate::timeweight::KappaSchedule;

/// Default CTMC readout time; hazards of masked paths blow up at 1.
pub const DEFAULT_T_MAX: f64 = 1.0 - 1e-4;
/// Central-difference step for KFE residuals.
pub const KFE_DT: f64 = 1e-4;
const MAX_RETRIES: usize = 100;
const TRAJ_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub n_trajectories: usize,
    pub dt: f64,
    pub t_max: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(n_trajectories: usize, seed: u64) -> Self {
        SimConfig { n_trajectories, dt: 1e-3, t_max: DEFAULT_T_MAX, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return Err(Error::InvalidArgument(format!("dt = {} outside (0, 0.1]", self.dt)));
        }
        if !(self.t_max > 0.9 && self.t_max < 1.0) {
            return Err(Error::InvalidArgument(format!("t_max = {} outside (0.9, 1)", self.t_max)));
        }
        if self.n_trajectories == 0 {
            return Err(Error::InvalidArgument("no trajectories".into()));
        }
        Ok(())
    }

    /// Upper bound `kappa(1) - kappa(t_max)` on the probability mass still
    /// unresolved when a masked trajectory is stopped at `t_max`.
    pub fn truncation_bias(&self, kappa: &KappaSchedule) -> f64 {
        1.0 - kappa.value(self.t_max)
    }
}

/// Simulated endpoint distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum EmpiricalDist {
    /// Visit counts per state.
    Counts(Vec<usize>),
    /// Row-major samples of dimension `dim`.
    Samples { dim: usize, data: Vec<f64> },
}

impl EmpiricalDist {
    pub fn len(&self) -> usize {
        match self {
            EmpiricalDist::Counts(c) => c.iter().sum(),
            EmpiricalDist::Samples { dim, data } => data.len() / dim,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frequencies(&self) -> Option<Vec<f64>> {
        match self {
            EmpiricalDist::Counts(c) => {
                let n = self.len() as f64;
                Some(c.iter().map(|&k| k as f64 / n).collect())
            }
            EmpiricalDist::Samples { .. } => None,
        }
    }

    /// Per-coordinate mean and (unbiased) variance of continuous samples.
    pub fn moments(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let EmpiricalDist::Samples { dim, data } = self else { return None };
        let n = (data.len() / dim) as f64;
        let mut mean = vec![0.0; *dim];
        for row in data.chunks(*dim) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; *dim];
        for row in data.chunks(*dim) {
            for k in 0..*dim {
                var[k] += (row[k] - mean[k]).powi(2);
            }
        }
        var.iter_mut().for_each(|v| *v /= n - 1.0);
        Some((mean, var))
    }

    /// Coordinate `k` of every sample.
    pub fn coordinate(&self, k: usize) -> Option<Vec<f64>> {
        let EmpiricalDist::Samples { dim, data } = self else { return None };
        Some(data.chunks(*dim).map(|r| r[k]).collect())
    }
}

/// A velocity field evaluated with per-worker scratch space.
pub trait Velocity: Sync {
    type Scratch: Default;
    fn dim(&self) -> usize;
    fn velocity(&self, t: f64, x: &[f64], scratch: &mut Self::Scratch, out: &mut Vec<f64>) -> Result<()>;
}

/// Closure velocity `f(t, x, out)`.
pub struct FnVelocity<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(f64, &[f64], &mut Vec<f64>) -> Result<()> + Sync> Velocity for FnVelocity<F> {
    type Scratch = ();

    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity(&self, t: f64, x: &[f64], _: &mut (), out: &mut Vec<f64>) -> Result<()> {
        (self.f)(t, x, out)
    }
}

/// Velocity of an `x1`-prediction model through the affine conversion.
pub struct X1PredVelocity<'a, M> {
    pub model: &'a M,
    pub affine: AffineVelocity,
    pub dim: usize,
}

impl<M: Predictor<[f64]>> Velocity for X1PredVelocity<'_, M> {
    type Scratch = (M::Scratch, Vec<f64>);

    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity(&self, t: f64, x: &[f64], scratch: &mut Self::Scratch, out: &mut Vec<f64>) -> Result<()> {
        self.model.predict_into(t, x, &mut scratch.0, &mut scratch.1);
        *out = velocity_from_x1pred(&self.affine, t, x, &scratch.1)?;
        Ok(())
    }
}

/// Euler integration from `x0 ~ N(0, I)` over `[0, 1]`.
pub fn euler_flow<V: Velocity>(v: &V, cfg: &SimConfig) -> Result<EmpiricalDist> {
    let dim = v.dim();
    euler_flow_from(v, cfg, |rng: &mut StreamRng, x: &mut Vec<f64>| {
        x.clear();
        x.extend((0..dim).map(|_| rng::normal(rng)));
    })
}

/// Euler integration with left-endpoint velocities; the last step is
/// shortened so that integration ends exactly at 1, and no velocity is ever
/// evaluated at `t = 1`.
pub fn euler_flow_from<V, I>(v: &V, cfg: &SimConfig, init: I) -> Result<EmpiricalDist>
where
    V: Velocity,
    I: Fn(&mut StreamRng, &mut Vec<f64>) + Sync,
{
    cfg.validate()?;
    let dim = v.dim();
    let n_steps = (1.0 / cfg.dt - 1e-9).ceil() as usize;
    let chunks: Vec<Vec<f64>> = rng::chunks(cfg.n_trajectories, TRAJ_CHUNK)
        .into_par_iter()
        .map(|range| {
            let mut scratch = V::Scratch::default();
            let mut x = Vec::with_capacity(dim);
            let mut u = Vec::with_capacity(dim);
            let mut out = Vec::with_capacity(range.len() * dim);
            for i in range {
                init(&mut rng::stream(cfg.seed, i as u64), &mut x);
                for k in 0..n_steps {
                    let t = k as f64 * cfg.dt;
                    let h = if k + 1 == n_steps { 1.0 - t } else { cfg.dt };
                    v.velocity(t, &x, &mut scratch, &mut u)?;
                    x.iter_mut().zip(&u).for_each(|(xi, ui)| *xi += h * ui);
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::TrajectoryDiverged(i));
                }
                out.extend_from_slice(&x);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(EmpiricalDist::Samples { dim, data: chunks.concat() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtmcResult {
    pub dist: EmpiricalDist,
    /// Average number of jumps per trajectory on `[0, t_max]`.
    pub mean_jumps: f64,
}

/// Simulate one path of `gen` from `x` by thinning with a local rate bound:
/// on a window `[t, t + d]` the bound is 1.5 times the larger endpoint exit
/// rate, doubled and retried whenever a proposal exceeds it.
fn thinning_path<G: JumpGenerator + ?Sized>(
    gen: &G,
    mut x: usize,
    t_max: f64,
    rng: &mut StreamRng,
    buf: &mut Vec<(usize, f64)>,
) -> Result<(usize, usize)> {
    let mut t = 0.0;
    let mut jumps = 0;
    while t < t_max {
        let d = (0.1f64).min(0.5 * (1.0 - t)).min(t_max - t);
        let end = t + d;
        let mut bound = 1.5 * gen.exit_rate(t, x).max(gen.exit_rate(end, x));
        let mut retries = 0;
        let mut s = t;
        loop {
            if bound <= 0.0 {
                s = end;
                break;
            }
            let tau = -rng::uniform(rng).max(f64::MIN_POSITIVE).ln() / bound;
            if s + tau >= end {
                s = end;
                break;
            }
            s += tau;
            gen.jumps(s, x, buf);
            let lam: f64 = buf.iter().map(|(_, r)| r).sum();
            if lam > bound {
                retries += 1;
                if retries > MAX_RETRIES {
                    return Err(Error::RateBoundExceeded { t: s });
                }
                bound *= 2.0;
                s = t;
                continue;
            }
            if rng::uniform(rng) * bound < lam {
                let w: Vec<f64> = buf.iter().map(|(_, r)| *r).collect();
                x = buf[rng::categorical(rng, &w)].0;
                jumps += 1;
                break;
            }
        }
        t = s;
    }
    Ok((x, jumps))
}

/// Simulate a mixture of generators: each trajectory draws a component
/// `k ~ weights` (for example a latent `z`), an initial state from `init`,
/// and runs `gens[k]` up to `cfg.t_max`.
pub fn ctmc_simulate_mixture<G: JumpGenerator>(
    gens: &[G],
    weights: &[f64],
    init: &[f64],
    cfg: &SimConfig,
) -> Result<CtmcResult> {
    cfg.validate()?;
    if gens.is_empty() || gens.len() != weights.len() {
        return Err(Error::InvalidArgument("one weight per generator required".into()));
    }
    let n_states = gens[0].n_states();
    if init.len() != n_states {
        return Err(Error::DimensionMismatch { expected: n_states, got: init.len() });
    }
    let partials: Vec<(Vec<usize>, usize)> = rng::chunks(cfg.n_trajectories, TRAJ_CHUNK)
        .into_par_iter()
        .map(|range| {
            let mut counts = vec![0; n_states];
            let mut total = 0;
            let mut buf = Vec::new();
            for i in range {
                let mut r = rng::stream(cfg.seed, i as u64);
                let k = if gens.len() == 1 { 0 } else { rng::categorical(&mut r, weights) };
                let x0 = rng::categorical(&mut r, init);
                let (x, j) = thinning_path(&gens[k], x0, cfg.t_max, &mut r, &mut buf)?;
                counts[x] += 1;
                total += j;
            }
            Ok((counts, total))
        })
        .collect::<Result<_>>()?;
    let mut counts = vec![0; n_states];
    let mut jumps = 0;
    for (c, j) in partials {
        counts.iter_mut().zip(c).for_each(|(a, b)| *a += b);
        jumps += j;
    }
    Ok(CtmcResult { dist: EmpiricalDist::Counts(counts), mean_jumps: jumps as f64 / cfg.n_trajectories as f64 })
}

pub fn ctmc_simulate<G: JumpGenerator>(gen: &G, init: &[f64], cfg: &SimConfig) -> Result<CtmcResult> {
    ctmc_simulate_mixture(std::slice::from_ref(gen), &[1.0], init, cfg)
}

/// The evaluation grid `[0.01, 0.99]` with `n` points.
pub fn kfe_grid(n: usize) -> Vec<f64> {
    quad::linspace(0.01, 0.99, n)
}

/// `max_{t, y} |d/dt p_t(y) - <p_t, L_t 1_y>|` with the time derivative by
/// central differences with step `dt`.
pub fn kfe_residual<G, P>(gen: &G, p: P, grid: &[f64], dt: f64) -> f64
where
    G: JumpGenerator + ?Sized,
    P: Fn(f64) -> Vec<f64>,
{
    let n = gen.n_states();
    let mut buf = Vec::new();
    let mut worst: f64 = 0.0;
    for &t in grid {
        let (up, dn, pt) = (p(t + dt), p(t - dt), p(t));
        // <p_t, L 1_y> = inflow(y) - outflow(y)
        let mut flux = vec![0.0; n];
        for x in 0..n {
            if pt[x] == 0.0 {
                continue;
            }
            gen.jumps(t, x, &mut buf);
            for &(y, r) in &buf {
                if y != x {
                    flux[y] += pt[x] * r;
                    flux[x] -= pt[x] * r;
                }
            }
        }
        for y in 0..n {
            let dp = (up[y] - dn[y]) / (2.0 * dt);
            worst = worst.max((dp - flux[y]).abs());
        }
    }
    worst
}

/// KFE residual of a 1-D flow in weak form, `|d/dt <p_t, f> - <p_t, u_t f'>|`
/// maximized over test functions and grid times, with spatial integrals by
/// Simpson on `[lo, hi]`.
pub fn kfe_residual_flow_1d<D, U>(
    density: D,
    velocity: U,
    tests: &[crate::linparam::TestFunction],
    grid: &[f64],
    (lo, hi): (f64, f64),
    panels: usize,
    dt: f64,
) -> Result<f64>
where
    D: Fn(f64, f64) -> f64,
    U: Fn(f64, f64) -> Result<f64>,
{
    let (xs, ws) = quad::simpson_rule(lo, hi, panels);
    let mut worst: f64 = 0.0;
    for &t in grid {
        let us: Vec<f64> = xs.iter().map(|&x| velocity(t, x)).collect::<Result<_>>()?;
        for f in tests {
            let pair = |s: f64| -> f64 { xs.iter().zip(&ws).map(|(&x, w)| w * density(s, x) * f.eval(&[x])).sum() };
            let dp = (pair(t + dt) - pair(t - dt)) / (2.0 * dt);
            let action: f64 = xs
                .iter()
                .zip(&ws)
                .zip(&us)
                .map(|((&x, w), u)| w * density(t, x) * u * f.grad(&[x])[0])
                .sum();
            worst = worst.max((dp - action).abs());
        }
    }
    Ok(worst)
}

/// Distance between a simulated distribution and a reference.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference<'a> {
    /// Exact probabilities on a finite space.
    Exact(&'a [f64]),
    Empirical(&'a EmpiricalDist),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceReport {
    /// Total variation, finite case.
    pub tv: Option<f64>,
    /// Energy distance, continuous case.
    pub energy: Option<f64>,
    /// Mean and standard deviation of the energy distance under random
    /// relabelling of the pooled samples.
    pub energy_null: Option<(f64, f64)>,
    pub mean_delta: Vec<f64>,
    pub var_delta: Vec<f64>,
}

impl DistanceReport {
    /// Standardized energy distance against its permutation null.
    pub fn energy_z(&self) -> Option<f64> {
        let (e, (m, s)) = (self.energy?, self.energy_null?);
        Some((e - m) / s.max(f64::MIN_POSITIVE))
    }
}

/// Number of relabellings in the energy-distance null.
pub const PERMUTATIONS: usize = 20;

pub fn dist_distance(a: &EmpiricalDist, b: Reference<'_>, seed: u64) -> Result<DistanceReport> {
    match (a, b) {
        (EmpiricalDist::Counts(_), Reference::Exact(p)) => {
            let q = a.frequencies().expect("counts");
            if q.len() != p.len() {
                return Err(Error::SupportMismatch(format!("{} states vs {}", q.len(), p.len())));
            }
            Ok(finite_report(&q, p))
        }
        (EmpiricalDist::Counts(_), Reference::Empirical(other @ EmpiricalDist::Counts(_))) => {
            let (q, p) = (a.frequencies().expect("counts"), other.frequencies().expect("counts"));
            if q.len() != p.len() {
                return Err(Error::SupportMismatch(format!("{} states vs {}", q.len(), p.len())));
            }
            Ok(finite_report(&q, &p))
        }
        (
            EmpiricalDist::Samples { dim, .. },
            Reference::Empirical(other @ EmpiricalDist::Samples { dim: d2, .. }),
        ) => {
            if dim != d2 {
                return Err(Error::SupportMismatch(format!("dimension {dim} vs {d2}")));
            }
            let (ma, va) = a.moments().expect("samples");
            let (mb, vb) = other.moments().expect("samples");
            let mean_delta = ma.iter().zip(&mb).map(|(x, y)| x - y).collect();
            let var_delta = va.iter().zip(&vb).map(|(x, y)| x - y).collect();
            let (energy, null) = if *dim == 1 {
                let xs = a.coordinate(0).expect("samples");
                let ys = other.coordinate(0).expect("samples");
                (Some(energy_distance_1d(&xs, &ys)), Some(permutation_null(&xs, &ys, seed)))
            } else {
                (None, None)
            };
            Ok(DistanceReport { tv: None, energy, energy_null: null, mean_delta, var_delta })
        }
        _ => Err(Error::SupportMismatch("finite and continuous distributions".into())),
    }
}

fn finite_report(q: &[f64], p: &[f64]) -> DistanceReport {
    let tv = 0.5 * q.iter().zip(p).map(|(a, b)| (a - b).abs()).sum::<f64>();
    DistanceReport { tv: Some(tv), energy: None, energy_null: None, mean_delta: Vec::new(), var_delta: Vec::new() }
}

/// `sum_{i<j} |v_i - v_j|` for sorted `v`.
fn pair_sum_sorted(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    v.iter().enumerate().map(|(i, x)| x * (2.0 * i as f64 - n + 1.0)).sum()
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// V-statistic energy distance `2E|X-Y| - E|X-X'| - E|Y-Y'|` in
/// `O(n log n)` via sorted pair sums.
pub fn energy_distance_1d(xs: &[f64], ys: &[f64]) -> f64 {
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let sxx = pair_sum_sorted(&sorted(xs));
    let syy = pair_sum_sorted(&sorted(ys));
    let mut all = xs.to_vec();
    all.extend_from_slice(ys);
    let sall = pair_sum_sorted(&sorted(&all));
    let sxy = sall - sxx - syy;
    2.0 * sxy / (n * m) - 2.0 * sxx / (n * n) - 2.0 * syy / (m * m)
}

fn permutation_null(xs: &[f64], ys: &[f64], seed: u64) -> (f64, f64) {
    use rand::seq::SliceRandom;
    let mut pooled = xs.to_vec();
    pooled.extend_from_slice(ys);
    let vals: Vec<f64> = (0..PERMUTATIONS)
        .into_par_iter()
        .map(|k| {
            let mut p = pooled.clone();
            p.shuffle(&mut rng::stream(seed, k as u64));
            let (a, b) = p.split_at(xs.len());
            energy_distance_1d(a, b)
        })
        .collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt();
    (mean, sd)
}

/// Draws of a 1-D reference sampler, for energy-distance comparisons.
pub fn reference_samples(n: usize, seed: u64, draw: impl Fn(&mut StreamRng) -> Vec<f64> + Sync) -> EmpiricalDist {
    let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(|i| draw(&mut rng::stream(seed, i as u64))).collect();
    let dim = rows.first().map_or(1, Vec::len);
    EmpiricalDist::Samples { dim, data: rows.concat() }
}
