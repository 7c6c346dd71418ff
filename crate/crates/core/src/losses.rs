//! Conditional and marginal generator matching losses.
//!
//! Two estimator tiers: Monte Carlo over `(t, Z, X_t)` draws for any
//! conditional path, and exact enumeration (finite states, Simpson in time)
//! for finite paths, where CGM and GM losses can be compared without noise.

use std::borrow::Borrow;
use std::collections::BTreeMap;

use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::bregman::{make_time_scaled, DivergenceSpec, FamilyName};
use crate::error::{Error, Result};
use crate::model::{FeatureMap, Link, ParamModel, Predictor};
use crate::path::{ConditionalPath, FinitePath};
use crate::quad;
use crate::rng::{self, StreamRng};
use crate::timeweight::{TimeDistribution, WeightFn};

/// Loss above which training is declared diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;
/// Simpson nodes in time for exact losses.
pub const EXACT_NODES: usize = 401;
const CHUNK: usize = 4096;

/// Per-point divergence `D_{t,x}`: a leaf family sized to the target at
/// `(t, x)`, optionally scaled by `c(t) > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceField {
    pub family: FamilyName,
    pub time_scale: Option<WeightFn>,
}

impl DivergenceField {
    pub fn new(family: FamilyName) -> Self {
        DivergenceField { family, time_scale: None }
    }

    pub fn time_scaled(family: FamilyName, c: WeightFn) -> Self {
        DivergenceField { family, time_scale: Some(c) }
    }

    fn scale(&self, t: f64) -> Result<f64> {
        match &self.time_scale {
            None => Ok(1.0),
            Some(c) => {
                let v = c.eval(t);
                if !(v > 0.0) {
                    return Err(Error::NonpositiveWeight { t, value: v });
                }
                Ok(v)
            }
        }
    }

    pub fn eval(&self, t: f64, a: &[f64], b: &[f64]) -> Result<f64> {
        Ok(self.scale(t)? * self.family.spec(a.len()).eval(a, b)?)
    }

    pub fn grad_b(&self, t: f64, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
        let s = self.scale(t)?;
        let mut g = self.family.spec(a.len()).grad_b(a, b)?;
        g.iter_mut().for_each(|v| *v *= s);
        Ok(g)
    }

    /// The same divergence as a standalone spec of dimension `dim`.
    pub fn as_spec(&self, dim: usize) -> DivergenceSpec {
        let base = self.family.spec(dim);
        match &self.time_scale {
            None => base,
            Some(c) => make_time_scaled(base, c.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    pub divergence: DivergenceField,
    pub time_dist: TimeDistribution,
    pub weight: WeightFn,
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

/// Mean and standard error from per-chunk `(sum, sum of squares)` pairs.
fn finish(partials: &[(f64, f64)], n: usize) -> Estimate {
    let (s, s2) = partials.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let nf = n as f64;
    let mean = s / nf;
    let var = ((s2 / nf - mean * mean) * nf / (nf - 1.0).max(1.0)).max(0.0);
    Estimate { value: mean, std_error: (var / nf).sqrt() }
}

/// One training/evaluation draw with its conditional target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<S> {
    pub t: f64,
    /// `w(t)` times any divergence time scale.
    pub weight: f64,
    pub x: S,
    pub target: Vec<f64>,
}

fn draw<P: ConditionalPath>(path: &P, spec: &LossSpec, rng: &mut StreamRng) -> Result<Sample<P::State>> {
    let t = spec.time_dist.sample_with(rng)?;
    let (z, x) = path.sample(t, rng);
    let mut target = Vec::new();
    path.cond_target(t, x.borrow(), &z, &mut target)?;
    let weight = spec.weight.eval(t) * spec.divergence.scale(t)?;
    Ok(Sample { t, weight, x, target })
}

/// The fixed set of `n_samples` draws addressed by `spec.seed`.
pub fn sample_set<P: ConditionalPath>(path: &P, spec: &LossSpec) -> Result<Vec<Sample<P::State>>> {
    let chunks: Vec<Vec<Sample<P::State>>> = rng::chunks(spec.n_samples, CHUNK)
        .into_par_iter()
        .map(|range| {
            range
                .map(|i| draw(path, spec, &mut rng::stream(spec.seed, i as u64)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

fn unscaled(field: &DivergenceField) -> DivergenceField {
    DivergenceField { family: field.family, time_scale: None }
}

/// Loss estimate and mean gradient over a materialized sample set.
pub fn loss_and_grad<S, V, M>(
    samples: &[Sample<S>],
    field: &DivergenceField,
    model: &M,
) -> Result<(Estimate, Vec<f64>)>
where
    S: Borrow<V> + Sync,
    V: ?Sized,
    M: Predictor<V>,
{
    let base = unscaled(field);
    let np = model.n_params();
    let partials: Vec<(f64, f64, Vec<f64>)> = rng::chunks(samples.len(), CHUNK)
        .into_par_iter()
        .map(|range| {
            let mut scratch = M::Scratch::default();
            let mut pred = Vec::new();
            let mut grad = vec![0.0; np];
            let (mut s, mut s2) = (0.0, 0.0);
            for smp in &samples[range] {
                if smp.target.is_empty() {
                    continue;
                }
                model.predict_into(smp.t, smp.x.borrow(), &mut scratch, &mut pred);
                let v = smp.weight * base.eval(smp.t, &smp.target, &pred)?;
                let g = base.grad_b(smp.t, &smp.target, &pred)?;
                model.vjp(&scratch, &g, smp.weight, &mut grad);
                s += v;
                s2 += v * v;
            }
            Ok((s, s2, grad))
        })
        .collect::<Result<_>>()?;
    let n = samples.len();
    let est = finish(&partials.iter().map(|p| (p.0, p.1)).collect::<Vec<_>>(), n);
    let mut grad = vec![0.0; np];
    for (_, _, g) in &partials {
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    grad.iter_mut().for_each(|g| *g /= n as f64);
    Ok((est, grad))
}

/// Monte Carlo CGM loss `E[w(t) D(F^Z(X_t), F^theta(X_t))]`, with draws
/// regenerated from the counter-based streams.
pub fn cgm_loss<P, M>(path: &P, spec: &LossSpec, model: &M) -> Result<Estimate>
where
    P: ConditionalPath,
    M: Predictor<P::View>,
{
    let base = unscaled(&spec.divergence);
    let partials: Vec<(f64, f64)> = rng::chunks(spec.n_samples, CHUNK)
        .into_par_iter()
        .map(|range| {
            let mut scratch = M::Scratch::default();
            let mut pred = Vec::new();
            let (mut s, mut s2) = (0.0, 0.0);
            for i in range {
                let smp = draw(path, spec, &mut rng::stream(spec.seed, i as u64))?;
                if smp.target.is_empty() {
                    continue;
                }
                model.predict_into(smp.t, smp.x.borrow(), &mut scratch, &mut pred);
                let v = smp.weight * base.eval(smp.t, &smp.target, &pred)?;
                s += v;
                s2 += v * v;
            }
            Ok((s, s2))
        })
        .collect::<Result<_>>()?;
    Ok(finish(&partials, spec.n_samples))
}

/// Pathwise MC gradient `E[w(t) J^T grad_b D(F^Z, F^theta)]` on the same
/// draws as [`cgm_loss`].
pub fn grad_loss<P, M>(path: &P, spec: &LossSpec, model: &M) -> Result<Vec<f64>>
where
    P: ConditionalPath,
    M: Predictor<P::View>,
{
    let samples = sample_set(path, spec)?;
    Ok(loss_and_grad(&samples, &spec.divergence, model)?.1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// Per-step geometric decay factor of the learning rate.
    pub decay: f64,
    /// Global index of the first step, for resumed runs.
    pub start_step: usize,
}

impl TrainConfig {
    pub fn lr_at(&self, step: usize) -> f64 {
        self.lr * self.decay.powi(step as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    pub std_error: Option<f64>,
}

/// Plain gradient descent on the fixed sample set. The trace records the loss
/// before each update plus the final loss.
pub fn train<P, M>(path: &P, spec: &LossSpec, model: &mut M, cfg: &TrainConfig) -> Result<Vec<TraceRow>>
where
    P: ConditionalPath,
    M: Predictor<P::View>,
{
    let samples = sample_set(path, spec)?;
    train_on(&samples, &spec.divergence, model, cfg)
}

pub fn train_on<S, V, M>(
    samples: &[Sample<S>],
    field: &DivergenceField,
    model: &mut M,
    cfg: &TrainConfig,
) -> Result<Vec<TraceRow>>
where
    S: Borrow<V> + Sync,
    V: ?Sized,
    M: Predictor<V>,
{
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    for k in 0..=cfg.steps {
        let step = cfg.start_step + k;
        let (est, grad) = loss_and_grad(samples, field, model)?;
        if !est.value.is_finite() || est.value > DIVERGENCE_THRESHOLD {
            return Err(Error::Diverged { step, loss: est.value });
        }
        trace.push(TraceRow { step, loss: est.value, std_error: Some(est.std_error) });
        if k == cfg.steps {
            break;
        }
        let lr = cfg.lr_at(step);
        model.theta_mut().iter_mut().zip(&grad).for_each(|(th, g)| *th -= lr * g);
    }
    Ok(trace)
}

/// The MC squared-error loss of an identity-link linear model as a quadratic
/// form `theta^T G theta - 2 b^T theta + c` over a fixed sample set (averaged
/// over samples, weights included). Exact for that sample set. `G` is stored
/// in compressed rows since local features make it sparse.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
    pub b: Vec<f64>,
    pub c: f64,
    pub n_samples: usize,
}

impl QuadraticForm {
    pub fn g_entry(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        match self.cols[lo..hi].binary_search(&j) {
            Ok(k) => self.vals[lo + k],
            Err(_) => 0.0,
        }
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let gt = self.g_times(theta);
        let quad: f64 = theta.iter().zip(&gt).map(|(a, b)| a * b).sum();
        let lin: f64 = theta.iter().zip(&self.b).map(|(a, b)| a * b).sum();
        quad - 2.0 * lin + self.c
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        self.g_times(theta).iter().zip(&self.b).map(|(gt, b)| 2.0 * (gt - b)).collect()
    }

    fn g_times(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let r = self.row_ptr[i]..self.row_ptr[i + 1];
                self.cols[r.clone()].iter().zip(&self.vals[r]).map(|(&j, g)| g * theta[j]).sum()
            })
            .collect()
    }

    /// Gershgorin bound on the spectrum of `D^-1/2 G D^-1/2`, `D = diag(G)`.
    pub fn scaled_spectral_bound(&self) -> f64 {
        let diag: Vec<f64> = (0..self.n).map(|i| self.g_entry(i, i)).collect();
        (0..self.n)
            .filter(|&i| diag[i] > 0.0)
            .map(|i| {
                let r = self.row_ptr[i]..self.row_ptr[i + 1];
                self.cols[r.clone()]
                    .iter()
                    .zip(&self.vals[r])
                    .filter(|(&j, _)| diag[j] > 0.0)
                    .map(|(&j, g)| g.abs() / (diag[i] * diag[j]).sqrt())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// Gradient descent in coordinates rescaled by `sqrt(G_ii)` (a fixed
    /// diagonal change of variables), with the step divided by
    /// [`Self::scaled_spectral_bound`] so any `lr < 2` is stable.
    /// Coordinates with `G_ii = 0` stay put.
    pub fn descend(&self, theta: &mut [f64], cfg: &TrainConfig) -> Vec<TraceRow> {
        let diag: Vec<f64> = (0..self.n).map(|i| self.g_entry(i, i)).collect();
        let bound = self.scaled_spectral_bound().max(f64::MIN_POSITIVE);
        let mut trace = Vec::with_capacity(cfg.steps + 1);
        for k in 0..=cfg.steps {
            let step = cfg.start_step + k;
            trace.push(TraceRow { step, loss: self.value(theta), std_error: None });
            if k == cfg.steps {
                break;
            }
            let lr = cfg.lr_at(step) / bound;
            let grad = self.gradient(theta);
            for i in 0..self.n {
                if diag[i] > 0.0 {
                    theta[i] -= lr * grad[i] / (2.0 * diag[i]);
                }
            }
        }
        trace
    }
}

type Partial = (FxHashMap<(u32, u32), f64>, Vec<f64>, f64);

/// Accumulate the quadratic form of the MSE loss for an identity-link model.
/// Partial sums over fixed chunks are merged in chunk order, so the result is
/// independent of the thread count.
pub fn least_squares_form<P, F>(path: &P, spec: &LossSpec, features: &F) -> Result<QuadraticForm>
where
    P: ConditionalPath,
    F: FeatureMap<P::View>,
{
    if spec.divergence.family != FamilyName::Mse {
        return Err(Error::InvalidArgument("quadratic form requires the mse family".into()));
    }
    let n = features.n_params();
    let partials: Vec<Partial> = rng::chunks(spec.n_samples, 1 << 16)
        .into_par_iter()
        .map(|range| {
            let mut g: FxHashMap<(u32, u32), f64> = FxHashMap::default();
            let mut b = vec![0.0; n];
            let mut c = 0.0;
            let mut design = crate::model::Design::default();
            for i in range {
                let smp = draw(path, spec, &mut rng::stream(spec.seed, i as u64))?;
                if smp.target.is_empty() {
                    continue;
                }
                features.design(smp.t, smp.x.borrow(), &mut design);
                let w = smp.weight;
                for &(o, p, cp) in &design.entries {
                    b[p] += w * cp * smp.target[o];
                    for &(o2, q, cq) in &design.entries {
                        if o2 == o {
                            *g.entry((p as u32, q as u32)).or_insert(0.0) += w * cp * cq;
                        }
                    }
                }
                c += w * smp.target.iter().map(|v| v * v).sum::<f64>();
            }
            Ok((g, b, c))
        })
        .collect::<Result<_>>()?;
    let mut total: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    let mut b = vec![0.0; n];
    let mut c = 0.0;
    for (g, bp, cp) in partials {
        for (k, v) in g {
            *total.entry(k).or_insert(0.0) += v;
        }
        b.iter_mut().zip(&bp).for_each(|(a, v)| *a += v);
        c += cp;
    }
    let nf = spec.n_samples as f64;
    let mut row_ptr = vec![0; n + 1];
    let mut cols = Vec::with_capacity(total.len());
    let mut vals = Vec::with_capacity(total.len());
    for ((p, q), v) in total {
        row_ptr[p as usize + 1] += 1;
        cols.push(q as usize);
        vals.push(v / nf);
    }
    for i in 0..n {
        row_ptr[i + 1] += row_ptr[i];
    }
    b.iter_mut().for_each(|v| *v /= nf);
    Ok(QuadraticForm { n, row_ptr, cols, vals, b, c: c / nf, n_samples: spec.n_samples })
}

/// Settings for exact enumeration on finite paths. The optional scalings give
/// `D(a(t) F_target, b(t) F^theta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactSpec {
    pub divergence: DivergenceField,
    pub time_dist: TimeDistribution,
    pub weight: WeightFn,
    pub nodes: usize,
    pub target_scale: Option<WeightFn>,
    pub pred_scale: Option<WeightFn>,
}

impl ExactSpec {
    pub fn new(divergence: DivergenceField, time_dist: TimeDistribution, weight: WeightFn) -> Self {
        ExactSpec { divergence, time_dist, weight, nodes: EXACT_NODES, target_scale: None, pred_scale: None }
    }

    /// Quadrature nodes with their combined factor `simpson weight * density * w`.
    fn time_nodes(&self) -> Vec<(f64, f64)> {
        let (nodes, weights) = quad::simpson_rule(0.0, 1.0, self.nodes - 1);
        nodes
            .into_iter()
            .zip(weights)
            .map(|(t, q)| {
                let dens = quad::eval_nudged(&|s| self.time_dist.density(s), t, 0.0, 1.0);
                (t, q * dens * self.weight.eval(t))
            })
            .filter(|(_, m)| *m != 0.0)
            .collect()
    }
}

fn scale_checked(w: &Option<WeightFn>, name: &'static str, t: f64) -> Result<f64> {
    match w {
        None => Ok(1.0),
        Some(w) => {
            let v = w.eval(t);
            if !(v > 0.0) {
                return Err(Error::NonpositiveScaling { name, t, value: v });
            }
            Ok(v)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn exact_loss<P, M>(path: &P, spec: &ExactSpec, model: &M, marginal: bool) -> Result<ExactValue>
where
    P: FinitePath + ?Sized,
    M: Predictor<usize>,
{
    let mut value = 0.0;
    let mut grad = vec![0.0; model.n_params()];
    let mut scratch = M::Scratch::default();
    let mut pred = Vec::new();
    let mut target = Vec::new();
    for (t, m) in spec.time_nodes() {
        let a = scale_checked(&spec.target_scale, "a", t)?;
        let b = scale_checked(&spec.pred_scale, "b", t)?;
        for x in 0..path.n_states() {
            if path.target_dim(x) == 0 {
                continue;
            }
            let px = path.marginal_prob(t, x);
            if px == 0.0 {
                continue;
            }
            model.predict_into(t, &x, &mut scratch, &mut pred);
            let slot: Vec<f64> = pred.iter().map(|v| b * v).collect();
            let mut terms: Vec<(f64, Vec<f64>)> = Vec::new();
            if marginal {
                let f = path.marginal_target(t, x)?.expect("positive marginal");
                terms.push((px, f));
            } else {
                for z in 0..path.n_latents() {
                    let pj = path.joint_prob(t, x, z);
                    if pj > 0.0 {
                        path.cond_target(t, x, z, &mut target);
                        terms.push((pj, target.clone()));
                    }
                }
            }
            for (p, f) in terms {
                let scaled: Vec<f64> = f.iter().map(|v| a * v).collect();
                let coef = m * p;
                value += coef * spec.divergence.eval(t, &scaled, &slot)?;
                let g: Vec<f64> = spec.divergence.grad_b(t, &scaled, &slot)?.iter().map(|v| b * v).collect();
                model.vjp(&scratch, &g, coef, &mut grad);
            }
        }
    }
    Ok(ExactValue { value, grad })
}

/// Exact CGM loss `sum_t sum_{x,z} p_t(x,z) w D(a F^z(x), b F^theta(x))`.
pub fn cgm_loss_exact<P: FinitePath + ?Sized, M: Predictor<usize>>(
    path: &P,
    spec: &ExactSpec,
    model: &M,
) -> Result<ExactValue> {
    exact_loss(path, spec, model, false)
}

/// Exact GM loss against the marginal target `F_t(x)`.
pub fn gm_loss_exact<P: FinitePath + ?Sized, M: Predictor<usize>>(
    path: &P,
    spec: &ExactSpec,
    model: &M,
) -> Result<ExactValue> {
    exact_loss(path, spec, model, true)
}

/// `E[w D(a F^Z, a F)]`, the theta-free part of the CGM loss.
pub fn posterior_spread_exact<P: FinitePath + ?Sized>(path: &P, spec: &ExactSpec) -> Result<f64> {
    let mut value = 0.0;
    let mut target = Vec::new();
    for (t, m) in spec.time_nodes() {
        let a = scale_checked(&spec.target_scale, "a", t)?;
        for x in 0..path.n_states() {
            if path.target_dim(x) == 0 {
                continue;
            }
            let Some(f) = path.marginal_target(t, x)? else { continue };
            let fa: Vec<f64> = f.iter().map(|v| a * v).collect();
            for z in 0..path.n_latents() {
                let pj = path.joint_prob(t, x, z);
                if pj == 0.0 {
                    continue;
                }
                path.cond_target(t, x, z, &mut target);
                if target == f {
                    continue;
                }
                let ta: Vec<f64> = target.iter().map(|v| a * v).collect();
                value += m * pj * spec.divergence.eval(t, &ta, &fa)?;
            }
        }
    }
    Ok(value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prop2Report {
    /// `L_cgm(theta_i) - L_gm(theta_i)`
    pub gaps: Vec<f64>,
    /// `max_i |g_i - g_1|`
    pub spread: f64,
    /// The directly computed `E[w D(F^Z, F)]`.
    pub direct: f64,
    /// `max_i |g_i - direct|`
    pub direct_residual: f64,
    /// `max_i |grad L_cgm - grad L_gm| / |grad L_gm|` (sup norms).
    pub grad_rel_error: f64,
}

/// Compare CGM and GM losses exactly at several parameter values.
pub fn prop2_gap_test<P, M>(path: &P, spec: &ExactSpec, models: &[M]) -> Result<Prop2Report>
where
    P: FinitePath + ?Sized,
    M: Predictor<usize>,
{
    if models.is_empty() {
        return Err(Error::InvalidArgument("gap test needs at least one model".into()));
    }
    let direct = posterior_spread_exact(path, spec)?;
    let mut gaps = Vec::new();
    let mut grad_rel_error: f64 = 0.0;
    for m in models {
        let c = cgm_loss_exact(path, spec, m)?;
        let g = gm_loss_exact(path, spec, m)?;
        gaps.push(c.value - g.value);
        let diff = c.grad.iter().zip(&g.grad).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = g.grad.iter().map(|v| v.abs()).fold(0.0, f64::max);
        grad_rel_error = grad_rel_error.max(if scale > 0.0 { diff / scale } else { diff });
    }
    let spread = gaps.iter().map(|g| (g - gaps[0]).abs()).fold(0.0, f64::max);
    let direct_residual = gaps.iter().map(|g| (g - direct).abs()).fold(0.0, f64::max);
    Ok(Prop2Report { gaps, spread, direct, direct_residual, grad_rel_error })
}

/// Minimize an exact loss whose gradient is separable across parameters
/// (one parameter per time node, state and output) by bisection on each
/// partial derivative inside `[lo, hi]`.
pub fn minimize_separable<M: Predictor<usize>>(
    model: &mut M,
    grad_at: impl Fn(&M) -> Result<Vec<f64>>,
    lo: f64,
    hi: f64,
    iters: usize,
) -> Result<()> {
    let n = model.n_params();
    let mut lo_v = vec![lo; n];
    let mut hi_v = vec![hi; n];
    for _ in 0..iters {
        for i in 0..n {
            model.theta_mut()[i] = 0.5 * (lo_v[i] + hi_v[i]);
        }
        let g = grad_at(model)?;
        for i in 0..n {
            let mid = model.theta()[i];
            if g[i] > 0.0 {
                hi_v[i] = mid;
            } else if g[i] < 0.0 {
                lo_v[i] = mid;
            } else {
                lo_v[i] = mid;
                hi_v[i] = mid;
            }
        }
    }
    for i in 0..n {
        model.theta_mut()[i] = 0.5 * (lo_v[i] + hi_v[i]);
    }
    Ok(())
}

/// Random parameter vectors for gap tests, `theta_i ~ N(0, scale^2)`.
pub fn random_thetas(n_params: usize, count: usize, scale: f64, seed: u64) -> Vec<Vec<f64>> {
    (0..count)
        .map(|k| {
            let mut r = rng::stream(seed, k as u64);
            (0..n_params).map(|_| scale * rng::normal(&mut r)).collect()
        })
        .collect()
}

/// Models sharing features and link with the given parameter vectors.
pub fn models_with<F: Clone + crate::model::Features>(
    features: &F,
    link: Link,
    thetas: Vec<Vec<f64>>,
) -> Result<Vec<ParamModel<F>>> {
    thetas.into_iter().map(|th| ParamModel::with_theta(features.clone(), link, th)).collect()
}
