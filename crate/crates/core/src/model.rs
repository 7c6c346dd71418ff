//! Parametric predictors `F_t^theta(x)` and their parameter Jacobians.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowpaths::AffineScheduler;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    /// Strictly positive outputs, for Poisson-domain targets.
    Exp,
    /// Outputs in `(0, 1)`, for BCE-domain targets.
    Sigmoid,
}

impl Link {
    pub fn apply(self, eta: f64) -> f64 {
        match self {
            Link::Identity => eta,
            Link::Exp => eta.exp(),
            Link::Sigmoid => {
                if eta >= 0.0 {
                    1.0 / (1.0 + (-eta).exp())
                } else {
                    let e = eta.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    pub fn derivative(self, eta: f64) -> f64 {
        match self {
            Link::Identity => 1.0,
            Link::Exp => eta.exp(),
            Link::Sigmoid => {
                let s = self.apply(eta);
                s * (1.0 - s)
            }
        }
    }

    /// Natural link for a divergence family's domain.
    pub fn for_family(family: crate::bregman::FamilyName) -> Link {
        match family {
            crate::bregman::FamilyName::Mse => Link::Identity,
            crate::bregman::FamilyName::Poisson => Link::Exp,
            crate::bregman::FamilyName::Bce => Link::Sigmoid,
        }
    }
}

/// A differentiable predictor with a flat parameter vector.
///
/// `predict_into` leaves intermediate values in the scratch space; `vjp` uses
/// them to accumulate `scale * J^T g` for the most recent prediction.
pub trait Predictor<X: ?Sized>: Sync {
    type Scratch: Default + Send;

    fn n_params(&self) -> usize;
    fn theta(&self) -> &[f64];
    fn theta_mut(&mut self) -> &mut [f64];
    fn predict_into(&self, t: f64, x: &X, scratch: &mut Self::Scratch, out: &mut Vec<f64>);
    fn vjp(&self, scratch: &Self::Scratch, g: &[f64], scale: f64, grad: &mut [f64]);

    fn predict(&self, t: f64, x: &X) -> Vec<f64> {
        let mut s = Self::Scratch::default();
        let mut out = Vec::new();
        self.predict_into(t, x, &mut s, &mut out);
        out
    }

    /// Dense Jacobian, one row per output.
    fn jacobian(&self, t: f64, x: &X) -> Vec<Vec<f64>> {
        let mut s = Self::Scratch::default();
        let mut out = Vec::new();
        self.predict_into(t, x, &mut s, &mut out);
        (0..out.len())
            .map(|i| {
                let mut e = vec![0.0; out.len()];
                e[i] = 1.0;
                let mut row = vec![0.0; self.n_params()];
                self.vjp(&s, &e, 1.0, &mut row);
                row
            })
            .collect()
    }
}

/// Sparse design matrix at one `(t, x)`: entries `(output, parameter, coefficient)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Design {
    pub dim: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl Design {
    pub fn reset(&mut self, dim: usize) {
        self.dim = dim;
        self.entries.clear();
    }

    pub fn push(&mut self, output: usize, param: usize, coef: f64) {
        self.entries.push((output, param, coef));
    }
}

/// Parameter count of a feature map, independent of the state type.
pub trait Features: Sync {
    fn n_params(&self) -> usize;
}

/// Features that make the pre-activation linear in the parameters.
pub trait FeatureMap<X: ?Sized>: Features {
    fn design(&self, t: f64, x: &X, out: &mut Design);
}

/// `F^theta(t, x) = link(Phi(t, x) theta)`
#[derive(Debug, Clone, PartialEq)]
pub struct ParamModel<F> {
    pub theta: Vec<f64>,
    pub features: F,
    pub link: Link,
}

#[derive(Debug, Default)]
pub struct LinearScratch {
    pub design: Design,
    pub eta: Vec<f64>,
}

impl<F> ParamModel<F> {
    pub fn zeros(features: F, link: Link) -> Self
    where
        F: Features,
    {
        let n = features.n_params();
        ParamModel { theta: vec![0.0; n], features, link }
    }

    pub fn with_theta(features: F, link: Link, theta: Vec<f64>) -> Result<Self>
    where
        F: Features,
    {
        if theta.len() != features.n_params() {
            return Err(Error::DimensionMismatch { expected: features.n_params(), got: theta.len() });
        }
        Ok(ParamModel { theta, features, link })
    }
}

impl<X: ?Sized, F: FeatureMap<X>> Predictor<X> for ParamModel<F> {
    type Scratch = LinearScratch;

    fn n_params(&self) -> usize {
        self.theta.len()
    }

    fn theta(&self) -> &[f64] {
        &self.theta
    }

    fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn predict_into(&self, t: f64, x: &X, s: &mut LinearScratch, out: &mut Vec<f64>) {
        self.features.design(t, x, &mut s.design);
        s.eta.clear();
        s.eta.resize(s.design.dim, 0.0);
        for &(o, p, c) in &s.design.entries {
            s.eta[o] += c * self.theta[p];
        }
        out.clear();
        out.extend(s.eta.iter().map(|&e| self.link.apply(e)));
    }

    fn vjp(&self, s: &LinearScratch, g: &[f64], scale: f64, grad: &mut [f64]) {
        for &(o, p, c) in &s.design.entries {
            grad[p] += scale * g[o] * self.link.derivative(s.eta[o]) * c;
        }
    }
}

/// Features `[alpha s^2 x / v, sigma^2 / v]` with `v = alpha^2 s^2 + sigma^2`,
/// for which the posterior mean of a 1-D Gaussian target `N(m, s^2)` is
/// exactly `theta = (1, m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosteriorFeatures {
    pub scheduler: AffineScheduler,
    pub var: f64,
}

impl Features for GaussianPosteriorFeatures {
    fn n_params(&self) -> usize {
        2
    }
}

impl FeatureMap<[f64]> for GaussianPosteriorFeatures {
    fn design(&self, t: f64, x: &[f64], out: &mut Design) {
        let (a, s) = (self.scheduler.alpha(t), self.scheduler.sigma(t));
        let v = a * a * self.var + s * s;
        out.reset(1);
        out.push(0, 0, a * self.var / v * x[0]);
        out.push(0, 1, s * s / v);
    }
}

/// Index and interpolation weight of `v` on sorted `nodes`: `v` lies in
/// `[nodes[i], nodes[i + 1]]` with weight `lam` on the right node. Values
/// outside the range are clamped to the end cells.
fn hat_cell(nodes: &[f64], v: f64) -> (usize, f64) {
    let n = nodes.len();
    if n == 1 {
        return (0, 0.0);
    }
    let v = v.clamp(nodes[0], nodes[n - 1]);
    let i = nodes.partition_point(|&u| u <= v).clamp(1, n - 1) - 1;
    let lam = (v - nodes[i]) / (nodes[i + 1] - nodes[i]);
    (i, lam)
}

/// Bilinear hat basis on a `(t, x)` grid for 1-D states; the parameter at
/// node `(i, j)` is the model's value there.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorHat {
    pub t_nodes: Vec<f64>,
    pub x_nodes: Vec<f64>,
}

impl TensorHat {
    pub fn new(t_nodes: Vec<f64>, x_nodes: Vec<f64>) -> Result<Self> {
        for nodes in [&t_nodes, &x_nodes] {
            if nodes.len() < 2 || nodes.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::InvalidArgument("hat nodes must be strictly increasing, at least 2".into()));
            }
        }
        Ok(TensorHat { t_nodes, x_nodes })
    }

    pub fn uniform(nt: usize, x_lo: f64, x_hi: f64, nx: usize) -> Result<Self> {
        Self::new(crate::quad::linspace(0.0, 1.0, nt), crate::quad::linspace(x_lo, x_hi, nx))
    }

    pub fn index(&self, i_t: usize, i_x: usize) -> usize {
        i_t * self.x_nodes.len() + i_x
    }
}

impl Features for TensorHat {
    fn n_params(&self) -> usize {
        self.t_nodes.len() * self.x_nodes.len()
    }
}

impl FeatureMap<[f64]> for TensorHat {
    fn design(&self, t: f64, x: &[f64], out: &mut Design) {
        out.reset(1);
        let (it, lt) = hat_cell(&self.t_nodes, t);
        let (ix, lx) = hat_cell(&self.x_nodes, x[0]);
        for (dt, wt) in [(0, 1.0 - lt), (1, lt)] {
            for (dx, wx) in [(0, 1.0 - lx), (1, lx)] {
                let w = wt * wx;
                if w != 0.0 {
                    out.push(0, self.index(it + dt, ix + dx), w);
                }
            }
        }
    }
}

/// Scalar basis in `t` used per (state, output) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeBasis {
    /// Legendre polynomials `P_0..P_degree` of `2t - 1`.
    Legendre { degree: usize },
    /// Indicators of `n` equal cells of `[0, 1]`.
    Cells { n: usize },
    /// Indicator of the nearest of the given nodes.
    Nodes { nodes: Vec<f64> },
}

impl TimeBasis {
    pub fn len(&self) -> usize {
        match self {
            TimeBasis::Legendre { degree } => degree + 1,
            TimeBasis::Cells { n } => *n,
            TimeBasis::Nodes { nodes } => nodes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Push `(index, value)` pairs of the nonzero basis functions at `t`.
    pub fn eval(&self, t: f64, out: &mut Vec<(usize, f64)>) {
        out.clear();
        match self {
            TimeBasis::Legendre { degree } => {
                let u = 2.0 * t - 1.0;
                let (mut prev, mut cur) = (1.0, u);
                out.push((0, 1.0));
                if *degree >= 1 {
                    out.push((1, u));
                }
                for k in 1..*degree {
                    let next = ((2 * k + 1) as f64 * u * cur - k as f64 * prev) / (k + 1) as f64;
                    prev = cur;
                    cur = next;
                    out.push((k + 1, cur));
                }
            }
            TimeBasis::Cells { n } => {
                let i = ((t * *n as f64).floor() as usize).min(n - 1);
                out.push((i, 1.0));
            }
            TimeBasis::Nodes { nodes } => {
                let j = nodes.partition_point(|&u| u < t);
                let i = if j == 0 {
                    0
                } else if j == nodes.len() || (t - nodes[j - 1]) <= (nodes[j] - t) {
                    j - 1
                } else {
                    j
                };
                out.push((i, 1.0));
            }
        }
    }
}

/// Separate time-basis coefficients for every (state, output) of a finite
/// space whose output dimension may vary by state.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteStateFeatures {
    pub basis: TimeBasis,
    pub dims: Vec<usize>,
    offsets: Vec<usize>,
}

impl FiniteStateFeatures {
    pub fn new(basis: TimeBasis, dims: Vec<usize>) -> Self {
        let nb = basis.len();
        let mut offsets = Vec::with_capacity(dims.len() + 1);
        let mut acc = 0;
        for d in &dims {
            offsets.push(acc);
            acc += d * nb;
        }
        offsets.push(acc);
        FiniteStateFeatures { basis, dims, offsets }
    }

    pub fn param_index(&self, x: usize, output: usize, k: usize) -> usize {
        self.offsets[x] + output * self.basis.len() + k
    }
}

impl Features for FiniteStateFeatures {
    fn n_params(&self) -> usize {
        *self.offsets.last().unwrap()
    }
}

impl FeatureMap<usize> for FiniteStateFeatures {
    fn design(&self, t: f64, x: &usize, out: &mut Design) {
        let mut vals = Vec::with_capacity(self.basis.len().min(8));
        self.basis.eval(t, &mut vals);
        out.reset(self.dims[*x]);
        for o in 0..self.dims[*x] {
            for &(k, v) in &vals {
                out.push(o, self.param_index(*x, o, k), v);
            }
        }
    }
}

/// Input encoding for the one-hidden-layer net.
pub trait Embed<X: ?Sized>: Sync {
    fn dim(&self) -> usize;
    fn embed(&self, t: f64, x: &X, out: &mut Vec<f64>);
}

/// `[t, x_1, ..., x_n]` for continuous states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeAndPoint {
    pub dim: usize,
}

impl Embed<[f64]> for TimeAndPoint {
    fn dim(&self) -> usize {
        self.dim + 1
    }

    fn embed(&self, t: f64, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(t);
        out.extend_from_slice(x);
    }
}

/// `[t, one_hot(x)]` for finite states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeAndOneHot {
    pub n_states: usize,
}

impl Embed<usize> for TimeAndOneHot {
    fn dim(&self) -> usize {
        self.n_states + 1
    }

    fn embed(&self, t: f64, x: &usize, out: &mut Vec<f64>) {
        out.clear();
        out.push(t);
        out.extend((0..self.n_states).map(|i| if i == *x { 1.0 } else { 0.0 }));
    }
}

/// `link(W2 tanh(W1 e(t, x) + b1) + b2)`, parameters stored as
/// `[W1 (row-major), b1, W2 (row-major), b2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<E> {
    pub embed: E,
    pub hidden: usize,
    pub d_out: usize,
    pub link: Link,
    pub theta: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct MlpScratch {
    input: Vec<f64>,
    act: Vec<f64>,
    eta: Vec<f64>,
}

impl<E> Mlp<E> {
    /// Weights drawn `N(0, 1/fan_in)` from the seed's stream, biases zero.
    pub fn new<X: ?Sized>(embed: E, hidden: usize, d_out: usize, link: Link, seed: u64) -> Self
    where
        E: Embed<X>,
    {
        let d_in = embed.dim();
        let n = hidden * d_in + hidden + d_out * hidden + d_out;
        let mut theta = vec![0.0; n];
        let mut r = rng::stream(seed, 0);
        for w in &mut theta[..hidden * d_in] {
            *w = rng::normal(&mut r) / (d_in as f64).sqrt();
        }
        let w2 = hidden * d_in + hidden;
        for w in &mut theta[w2..w2 + d_out * hidden] {
            *w = rng::normal(&mut r) / (hidden as f64).sqrt();
        }
        Mlp { embed, hidden, d_out, link, theta }
    }

    fn layout(&self, d_in: usize) -> (usize, usize, usize) {
        let b1 = self.hidden * d_in;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.d_out * self.hidden;
        (b1, w2, b2)
    }
}

impl<X: ?Sized, E: Embed<X>> Predictor<X> for Mlp<E> {
    type Scratch = MlpScratch;

    fn n_params(&self) -> usize {
        self.theta.len()
    }

    fn theta(&self) -> &[f64] {
        &self.theta
    }

    fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn predict_into(&self, t: f64, x: &X, s: &mut MlpScratch, out: &mut Vec<f64>) {
        self.embed.embed(t, x, &mut s.input);
        let d_in = s.input.len();
        let (b1, w2, b2) = self.layout(d_in);
        let th = &self.theta;
        s.act.clear();
        for h in 0..self.hidden {
            let row = &th[h * d_in..(h + 1) * d_in];
            let z: f64 = row.iter().zip(&s.input).map(|(w, v)| w * v).sum::<f64>() + th[b1 + h];
            s.act.push(z.tanh());
        }
        s.eta.clear();
        for o in 0..self.d_out {
            let row = &th[w2 + o * self.hidden..w2 + (o + 1) * self.hidden];
            s.eta.push(row.iter().zip(&s.act).map(|(w, a)| w * a).sum::<f64>() + th[b2 + o]);
        }
        out.clear();
        out.extend(s.eta.iter().map(|&e| self.link.apply(e)));
    }

    fn vjp(&self, s: &MlpScratch, g: &[f64], scale: f64, grad: &mut [f64]) {
        let d_in = s.input.len();
        let (b1, w2, b2) = self.layout(d_in);
        let th = &self.theta;
        let delta: Vec<f64> = (0..self.d_out)
            .map(|o| scale * g[o] * self.link.derivative(s.eta[o]))
            .collect();
        let mut back = vec![0.0; self.hidden];
        for (o, d) in delta.iter().enumerate() {
            grad[b2 + o] += d;
            for h in 0..self.hidden {
                grad[w2 + o * self.hidden + h] += d * s.act[h];
                back[h] += d * th[w2 + o * self.hidden + h];
            }
        }
        for h in 0..self.hidden {
            let dh = back[h] * (1.0 - s.act[h] * s.act[h]);
            grad[b1 + h] += dh;
            for (i, v) in s.input.iter().enumerate() {
                grad[h * d_in + i] += dh * v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check<X: ?Sized, P: Predictor<X> + Clone>(model: &P, t: f64, x: &X) {
        let jac = model.jacobian(t, x);
        for p in 0..model.n_params() {
            let h = 1e-6;
            let mut up = model.clone();
            up.theta_mut()[p] += h;
            let mut dn = model.clone();
            dn.theta_mut()[p] -= h;
            let (fu, fdn) = (up.predict(t, x), dn.predict(t, x));
            for o in 0..fu.len() {
                let fd = (fu[o] - fdn[o]) / (2.0 * h);
                let err = (fd - jac[o][p]).abs();
                assert!(err <= 1e-6 * fd.abs().max(1e-3), "param {p} output {o}: {fd} vs {}", jac[o][p]);
            }
        }
    }

    #[test]
    fn sigmoid_is_stable() {
        assert!(Link::Sigmoid.apply(-800.0) >= 0.0);
        assert_eq!(Link::Sigmoid.apply(0.0), 0.5);
        assert!((Link::Sigmoid.derivative(0.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn linear_jacobians_match_finite_differences() {
        let f = FiniteStateFeatures::new(TimeBasis::Legendre { degree: 3 }, vec![2, 0, 1]);
        for link in [Link::Identity, Link::Exp, Link::Sigmoid] {
            let theta: Vec<f64> = (0..f.n_params()).map(|i| 0.3 * (i as f64).sin()).collect();
            let m = ParamModel::with_theta(f.clone(), link, theta).unwrap();
            for x in 0..3 {
                fd_check(&m, 0.37, &x);
            }
        }
        let hat = TensorHat::uniform(5, -2.0, 2.0, 9).unwrap();
        let theta: Vec<f64> = (0..hat.n_params()).map(|i| (i as f64 * 0.7).cos()).collect();
        let m = ParamModel::with_theta(hat, Link::Identity, theta).unwrap();
        fd_check(&m, 0.61, &[0.3][..]);
    }

    #[test]
    fn mlp_jacobian_matches_finite_differences() {
        let m = Mlp::new(TimeAndPoint { dim: 2 }, 5, 2, Link::Exp, 3);
        fd_check(&m, 0.4, &[0.2, -0.7][..]);
        let m = Mlp::new(TimeAndOneHot { n_states: 3 }, 4, 2, Link::Sigmoid, 5);
        fd_check(&m, 0.8, &1usize);
    }

    #[test]
    fn hat_basis_interpolates() {
        let hat = TensorHat::uniform(3, -1.0, 1.0, 3).unwrap();
        // model value at nodes equals the node parameter, bilinear in between
        let theta: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let m = ParamModel::with_theta(hat, Link::Identity, theta).unwrap();
        assert_eq!(m.predict(0.5, &[0.0][..]), vec![4.0]);
        assert_eq!(m.predict(0.25, &[0.5][..]), vec![0.25 * 4.0 + 0.25 * 5.0 + 0.25 * 1.0 + 0.25 * 2.0]);
        // clamped outside the grid
        assert_eq!(m.predict(0.0, &[-7.0][..]), vec![0.0]);
    }

    #[test]
    fn legendre_values() {
        let b = TimeBasis::Legendre { degree: 3 };
        let mut v = Vec::new();
        b.eval(1.0, &mut v);
        assert!(v.iter().all(|(_, p)| (p - 1.0).abs() < 1e-15));
        b.eval(0.75, &mut v);
        let u: f64 = 0.5;
        assert!((v[2].1 - 0.5 * (3.0 * u * u - 1.0)).abs() < 1e-15);
        assert!((v[3].1 - 0.5 * (5.0 * u.powi(3) - 3.0 * u)).abs() < 1e-15);
    }

    #[test]
    fn node_basis_picks_nearest() {
        let b = TimeBasis::Nodes { nodes: vec![0.0, 0.5, 1.0] };
        let mut v = Vec::new();
        for (t, i) in [(0.0, 0), (0.24, 0), (0.26, 1), (0.5, 1), (0.9, 2), (1.0, 2)] {
            b.eval(t, &mut v);
            assert_eq!(v, vec![(i, 1.0)], "t = {t}");
        }
    }

    #[test]
    fn gaussian_features_recover_posterior() {
        let f = GaussianPosteriorFeatures { scheduler: AffineScheduler::Linear, var: 0.36 };
        let m = ParamModel::with_theta(f, Link::Identity, vec![1.0, 0.7]).unwrap();
        let g = crate::flowpaths::GmmTarget::one_d(&[(0.7, 0.6, 1.0)]).unwrap();
        for (t, x) in [(0.2, 0.1), (0.8, -1.3)] {
            let p = m.predict(t, &[x][..])[0];
            let e = g.posterior_x1_mean(&AffineScheduler::Linear, t, &[x])[0];
            assert!((p - e).abs() < 1e-14);
        }
    }
}
