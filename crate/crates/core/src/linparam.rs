//! Linear parameterizations `L_t f(x) = <K_{t,x} f, F_t(x)>_{V_{t,x}}` of
//! Markov generators, their marginalization over finite posteriors, and
//! direct sums of parameterizations.

use crate::bregman::{AtomicDistribution, DomainKind, DomainSpec, DomainType};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    Euclidean,
    /// `<v, w> = sum_i w_i v_i w_i`, e.g. hazard-weighted products on jump spaces.
    DiagWeights(Vec<f64>),
}

/// Finite-dimensional inner product space `V_{t,x}`.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSpace {
    pub dim: usize,
    pub metric: Metric,
}

impl InnerSpace {
    pub fn euclidean(dim: usize) -> Self {
        InnerSpace { dim, metric: Metric::Euclidean }
    }

    pub fn diag(weights: Vec<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0)) {
            return Err(Error::InvalidArgument(format!("metric weights must be positive, got {w}")));
        }
        Ok(InnerSpace { dim: weights.len(), metric: Metric::DiagWeights(weights) })
    }

    pub fn weight(&self, i: usize) -> f64 {
        match &self.metric {
            Metric::Euclidean => 1.0,
            Metric::DiagWeights(w) => w[i],
        }
    }

    pub fn pair(&self, kf: &[f64], f: &[f64]) -> Result<f64> {
        for v in [kf, f] {
            if v.len() != self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim, got: v.len() });
            }
        }
        Ok(match &self.metric {
            Metric::Euclidean => kf.iter().zip(f).map(|(a, b)| a * b).sum(),
            Metric::DiagWeights(w) => w.iter().zip(kf).zip(f).map(|((w, a), b)| w * a * b).sum(),
        })
    }

    pub fn norm(&self, v: &[f64]) -> Result<f64> {
        Ok(self.pair(v, v)?.sqrt())
    }

    /// Orthogonal sum: dimensions add, metric weights concatenate.
    pub fn direct_sum(spaces: &[InnerSpace]) -> InnerSpace {
        if spaces.iter().all(|s| s.metric == Metric::Euclidean) {
            return InnerSpace::euclidean(spaces.iter().map(|s| s.dim).sum());
        }
        let weights = spaces.iter().flat_map(|s| (0..s.dim).map(move |i| s.weight(i))).collect();
        InnerSpace { dim: spaces.iter().map(|s| s.dim).sum(), metric: Metric::DiagWeights(weights) }
    }
}

/// `sum_i w_i kf_i F_i` under the space's metric.
pub fn pair(space: &InnerSpace, kf: &[f64], f: &[f64]) -> Result<f64> {
    space.pair(kf, f)
}

/// Test functions. On finite state spaces every function is a test function;
/// on `R^n` a small catalog of smooth, rapidly decaying functions is used.
#[derive(Debug, Clone, PartialEq)]
pub enum TestFunction {
    /// `f(i) = values[i]` on a finite space.
    Table(Vec<f64>),
    /// `exp(-1 / (1 - r^2))` with `r = |x - center| / radius`, zero for `r >= 1`.
    Bump { center: Vec<f64>, radius: f64 },
    /// `p(<dir, x>) exp(-|x|^2 / (2 scale^2))` with polynomial coefficients in increasing degree.
    PolyGauss { dir: Vec<f64>, coeffs: Vec<f64>, scale: f64 },
    /// `sum_k c_k f_k`
    Combination(Vec<(f64, TestFunction)>),
}

impl TestFunction {
    pub fn indicator(n: usize, i: usize) -> Self {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        TestFunction::Table(v)
    }

    /// Value at finite state `i`.
    pub fn at_state(&self, i: usize) -> f64 {
        match self {
            TestFunction::Table(v) => v[i],
            TestFunction::Combination(parts) => parts.iter().map(|(c, f)| c * f.at_state(i)).sum(),
            _ => panic!("continuous test function evaluated on a finite state"),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Table(_) => panic!("finite-state test function evaluated on R^n"),
            TestFunction::Bump { center, radius } => {
                let r2 = dist2(x, center) / (radius * radius);
                if r2 >= 1.0 {
                    0.0
                } else {
                    (-1.0 / (1.0 - r2)).exp()
                }
            }
            TestFunction::PolyGauss { dir, coeffs, scale } => {
                let s = dot(dir, x);
                horner(coeffs, s) * (-dot(x, x) / (2.0 * scale * scale)).exp()
            }
            TestFunction::Combination(parts) => parts.iter().map(|(c, f)| c * f.eval(x)).sum(),
        }
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        match self {
            TestFunction::Table(_) => panic!("finite-state test function has no gradient"),
            TestFunction::Bump { center, radius } => {
                let r2 = dist2(x, center) / (radius * radius);
                if r2 >= 1.0 {
                    return vec![0.0; x.len()];
                }
                let q = 1.0 - r2;
                let v = (-1.0 / q).exp();
                // d/dx exp(-1/q) = exp(-1/q) q^-2 dq/dx, dq/dx = -2 (x - c) / radius^2
                x.iter()
                    .zip(center)
                    .map(|(xi, ci)| -v / (q * q) * 2.0 * (xi - ci) / (radius * radius))
                    .collect()
            }
            TestFunction::PolyGauss { dir, coeffs, scale } => {
                let s = dot(dir, x);
                let p = horner(coeffs, s);
                let dp = horner_derivative(coeffs, s);
                let g = (-dot(x, x) / (2.0 * scale * scale)).exp();
                x.iter()
                    .zip(dir)
                    .map(|(xi, di)| g * (dp * di - p * xi / (scale * scale)))
                    .collect()
            }
            TestFunction::Combination(parts) => {
                let mut out = vec![0.0; x.len()];
                for (c, f) in parts {
                    out.iter_mut().zip(f.grad(x)).for_each(|(o, g)| *o += c * g);
                }
                out
            }
        }
    }

    /// A fixed set of smooth test functions on `R^dim`.
    pub fn smooth_catalog(dim: usize) -> Vec<TestFunction> {
        let e0: Vec<f64> = (0..dim).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
        let diag: Vec<f64> = vec![1.0 / (dim as f64).sqrt(); dim];
        vec![
            TestFunction::Bump { center: vec![0.0; dim], radius: 2.0 },
            TestFunction::Bump { center: vec![0.7; dim], radius: 1.5 },
            TestFunction::PolyGauss { dir: e0.clone(), coeffs: vec![0.0, 1.0], scale: 1.5 },
            TestFunction::PolyGauss { dir: diag, coeffs: vec![1.0, -0.5, 0.25], scale: 2.0 },
            TestFunction::PolyGauss { dir: e0, coeffs: vec![0.0, 0.0, 0.0, 1.0], scale: 1.0 },
        ]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn horner(c: &[f64], s: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ck| acc * s + ck)
}

fn horner_derivative(c: &[f64], s: f64) -> f64 {
    c.iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (k, &ck)| acc * s + k as f64 * ck)
}

/// A linear parameterization evaluated pointwise at `(t, x)`.
pub trait LinearParam: Sync {
    type State: ?Sized;

    fn space_at(&self, t: f64, x: &Self::State) -> InnerSpace;

    /// `K_{t,x} f`, an element of `V_{t,x}`.
    fn apply_k(&self, t: f64, x: &Self::State, f: &TestFunction) -> Result<Vec<f64>>;

    /// The admissible set `Omega_{t,x}` for `F_t(x)`.
    fn admissible(&self, t: f64, x: &Self::State) -> DomainSpec;

    /// Generator action `<K_{t,x} f, F>`.
    fn action(&self, t: f64, x: &Self::State, f: &TestFunction, field: &[f64]) -> Result<f64> {
        let kf = self.apply_k(t, x, f)?;
        self.space_at(t, x).pair(&kf, field)
    }
}

/// Sum of parameterizations sharing a state type: spaces, `K` outputs and
/// admissible sets are concatenated block by block.
pub struct DirectSum<S: ?Sized> {
    pub blocks: Vec<Box<dyn LinearParam<State = S>>>,
}

impl<S: ?Sized> DirectSum<S> {
    pub fn new(blocks: Vec<Box<dyn LinearParam<State = S>>>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidArgument("direct sum needs at least one block".into()));
        }
        Ok(DirectSum { blocks })
    }

    /// Block offsets into the concatenated space at `(t, x)`.
    pub fn offsets(&self, t: f64, x: &S) -> Vec<usize> {
        let mut acc = 0;
        let mut out = vec![0];
        for b in &self.blocks {
            acc += b.space_at(t, x).dim;
            out.push(acc);
        }
        out
    }
}

impl<S: ?Sized> LinearParam for DirectSum<S> {
    type State = S;

    fn space_at(&self, t: f64, x: &S) -> InnerSpace {
        let spaces: Vec<InnerSpace> = self.blocks.iter().map(|b| b.space_at(t, x)).collect();
        InnerSpace::direct_sum(&spaces)
    }

    fn apply_k(&self, t: f64, x: &S, f: &TestFunction) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for b in &self.blocks {
            let kf = b.apply_k(t, x, f)?;
            let dim = b.space_at(t, x).dim;
            if kf.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: kf.len() });
            }
            out.extend(kf);
        }
        Ok(out)
    }

    fn admissible(&self, t: f64, x: &S) -> DomainSpec {
        let (mut lo, mut hi) = (Vec::new(), Vec::new());
        let mut domain_type = DomainType::Full;
        for b in &self.blocks {
            let d = b.admissible(t, x);
            if d.domain_type == DomainType::RelativeInterior {
                domain_type = DomainType::RelativeInterior;
            }
            for i in 0..d.dim() {
                let (l, h) = d.bounds(i);
                lo.push(l);
                hi.push(h);
            }
        }
        DomainSpec { kind: DomainKind::Box { lo, hi }, domain_type, margin: crate::bregman::INTERIOR_MARGIN }
    }
}

/// `F_t(x) = E_{Z ~ posterior}[F_t^Z(x)]`, with every conditional target and
/// the result checked against the admissible set.
pub fn marginal_f<Z>(
    posterior: &AtomicDistribution<Z>,
    f_cond: impl Fn(&Z) -> Vec<f64>,
    domain: &DomainSpec,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; domain.dim()];
    for (z, w) in posterior.atoms() {
        let fz = f_cond(z);
        domain.check_member(&fz)?;
        out.iter_mut().zip(&fz).for_each(|(o, v)| *o += w * v);
    }
    // convex combination of members; only round-off can push it outside
    for (i, v) in out.iter_mut().enumerate() {
        let (lo, hi) = domain.bounds(i);
        if *v < lo - 1e-12 * lo.abs().max(1.0) || *v > hi + 1e-12 * hi.abs().max(1.0) {
            return Err(Error::DomainViolation { index: i, value: *v });
        }
        *v = v.clamp(lo, hi);
    }
    Ok(out)
}

/// `|E_Z[<kf, F^Z>] - <kf, E_Z[F^Z]>|`
pub fn commutation_check<Z>(
    space: &InnerSpace,
    posterior: &AtomicDistribution<Z>,
    kf: &[f64],
    f_cond: impl Fn(&Z) -> Vec<f64>,
    domain: &DomainSpec,
) -> Result<f64> {
    let mut lhs = 0.0;
    for (z, w) in posterior.atoms() {
        lhs += w * space.pair(kf, &f_cond(z))?;
    }
    let rhs = space.pair(kf, &marginal_f(posterior, &f_cond, domain)?)?;
    Ok((lhs - rhs).abs())
}

/// Finite-state CTMC parameterization: `F` is the vector of rates to every
/// other state and `K f = (f(y) - f(x))_{y != x}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateParam {
    pub n_states: usize,
}

impl RateParam {
    /// The `j`-th target from state `x` (all states except `x`, in order).
    pub fn target(&self, x: usize, j: usize) -> usize {
        if j < x {
            j
        } else {
            j + 1
        }
    }
}

impl LinearParam for RateParam {
    type State = usize;

    fn space_at(&self, _t: f64, _x: &usize) -> InnerSpace {
        InnerSpace::euclidean(self.n_states - 1)
    }

    fn apply_k(&self, _t: f64, x: &usize, f: &TestFunction) -> Result<Vec<f64>> {
        let fx = f.at_state(*x);
        Ok((0..self.n_states - 1).map(|j| f.at_state(self.target(*x, j)) - fx).collect())
    }

    fn admissible(&self, _t: f64, _x: &usize) -> DomainSpec {
        DomainSpec {
            kind: DomainKind::NonnegOrthant(self.n_states - 1),
            domain_type: DomainType::RelativeInterior,
            margin: crate::bregman::INTERIOR_MARGIN,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn random_posterior(seed: u64, n: usize) -> AtomicDistribution<usize> {
        let mut r = rng::stream(seed, 0);
        AtomicDistribution::from_unnormalized((0..n).map(|i| (i, 0.05 + rng::uniform(&mut r))).collect())
            .unwrap()
    }

    #[test]
    fn pair_examples() {
        assert_eq!(InnerSpace::euclidean(2).pair(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        assert_eq!(InnerSpace::diag(vec![1.0, 2.0]).unwrap().pair(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 3.0);
        assert!(matches!(
            InnerSpace::euclidean(2).pair(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(InnerSpace::diag(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn marginal_examples() {
        let post = AtomicDistribution::new(vec![(0usize, 0.5), (1, 0.5)]).unwrap();
        let dom = DomainSpec::whole_space(1);
        let m = marginal_f(&post, |z| vec![[1.0, 3.0][*z]], &dom).unwrap();
        assert_eq!(m, vec![2.0]);
        let pm = AtomicDistribution::point_mass(1usize);
        assert_eq!(marginal_f(&pm, |z| vec![[1.0, 3.0][*z]], &dom).unwrap(), vec![3.0]);
    }

    #[test]
    fn marginal_matches_brute_force_sum() {
        let post = random_posterior(4, 8);
        let mut r = rng::stream(4, 1);
        let table: Vec<Vec<f64>> = (0..8).map(|_| (0..3).map(|_| 5.0 * rng::uniform(&mut r)).collect()).collect();
        let dom = DomainSpec::new(DomainKind::NonnegOrthant(3), DomainType::RelativeInterior).unwrap();
        let m = marginal_f(&post, |z| table[*z].clone(), &dom).unwrap();
        for k in 0..3 {
            let mut s = 0.0;
            for (z, w) in post.atoms() {
                s += w * table[*z][k];
            }
            assert!((m[k] - s).abs() < 1e-14);
        }
    }

    #[test]
    fn marginal_rejects_escaping_targets() {
        let post = AtomicDistribution::new(vec![(0usize, 0.5), (1, 0.5)]).unwrap();
        let dom = DomainSpec::new(DomainKind::NonnegOrthant(1), DomainType::RelativeInterior).unwrap();
        assert!(matches!(
            marginal_f(&post, |z| vec![[1.0, -3.0][*z]], &dom),
            Err(Error::DomainViolation { .. })
        ));
    }

    #[test]
    fn commutation_examples() {
        let dom = DomainSpec::whole_space(2);
        let space = InnerSpace::euclidean(2);
        let pm = AtomicDistribution::point_mass(0usize);
        assert_eq!(commutation_check(&space, &pm, &[1.0, 2.0], |_| vec![0.3, 0.7], &dom).unwrap(), 0.0);
        let two = AtomicDistribution::new(vec![(0usize, 0.5), (1, 0.5)]).unwrap();
        let f = |z: &usize| vec![*z as f64, 1.0 - *z as f64];
        assert!(commutation_check(&space, &two, &[1.0, 2.0], f, &dom).unwrap() < 1e-15);

        let post = random_posterior(8, 8);
        let mut r = rng::stream(8, 1);
        let space = InnerSpace::diag((0..2).map(|_| 0.1 + rng::uniform(&mut r)).collect()).unwrap();
        let table: Vec<Vec<f64>> = (0..8).map(|_| vec![rng::normal(&mut r), rng::normal(&mut r)]).collect();
        let kf = [rng::normal(&mut r), rng::normal(&mut r)];
        assert!(commutation_check(&space, &post, &kf, |z| table[*z].clone(), &dom).unwrap() < 1e-12);
    }

    struct Scalar(f64);

    impl LinearParam for Scalar {
        type State = [f64];
        fn space_at(&self, _t: f64, _x: &[f64]) -> InnerSpace {
            InnerSpace::euclidean(1)
        }
        fn apply_k(&self, _t: f64, x: &[f64], f: &TestFunction) -> Result<Vec<f64>> {
            Ok(vec![self.0 * f.grad(x)[0]])
        }
        fn admissible(&self, _t: f64, _x: &[f64]) -> DomainSpec {
            DomainSpec::whole_space(1)
        }
    }

    #[test]
    fn direct_sum_pairs_additively() {
        let sum = DirectSum::new(vec![Box::new(Scalar(2.0)) as Box<dyn LinearParam<State = [f64]>>, Box::new(Scalar(-0.5)), Box::new(Scalar(3.0))])
            .unwrap();
        let x = [0.3];
        let f = TestFunction::smooth_catalog(1).remove(2);
        assert_eq!(sum.space_at(0.5, &x).dim, 3);
        let field = [1.5, -2.0, 0.25];
        let total = sum.action(0.5, &x, &f, &field).unwrap();
        let parts: f64 = sum
            .blocks
            .iter()
            .zip(field)
            .map(|(b, v)| b.action(0.5, &x, &f, &[v]).unwrap())
            .sum();
        assert!((total - parts).abs() < 1e-12);
        assert_eq!(sum.offsets(0.5, &x), vec![0, 1, 2, 3]);
    }

    #[test]
    fn smooth_gradients_match_finite_differences() {
        for f in TestFunction::smooth_catalog(2) {
            for x in [[0.1, -0.4], [0.9, 0.6], [-1.2, 0.3]] {
                let g = f.grad(&x);
                for k in 0..2 {
                    let h = 1e-6;
                    let mut xp = x;
                    let mut xm = x;
                    xp[k] += h;
                    xm[k] -= h;
                    let fd = (f.eval(&xp) - f.eval(&xm)) / (2.0 * h);
                    assert!((fd - g[k]).abs() < 1e-7, "{f:?} at {x:?}: {fd} vs {}", g[k]);
                }
            }
        }
    }

    #[test]
    fn rate_param_generator() {
        let p = RateParam { n_states: 3 };
        let f = TestFunction::Table(vec![1.0, 4.0, 9.0]);
        assert_eq!(p.apply_k(0.0, &1, &f).unwrap(), vec![-3.0, 5.0]);
        // rates 2 -> 0 and 0.5 -> 2 from state 1
        assert_eq!(p.action(0.0, &1, &f, &[2.0, 0.5]).unwrap(), -3.5);
    }

    proptest! {
        #[test]
        fn k_apply_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
            let mut r = rng::stream(seed, 0);
            let fv: Vec<f64> = (0..4).map(|_| rng::normal(&mut r)).collect();
            let gv: Vec<f64> = (0..4).map(|_| rng::normal(&mut r)).collect();
            let combo = TestFunction::Combination(vec![
                (a, TestFunction::Table(fv.clone())),
                (b, TestFunction::Table(gv.clone())),
            ]);
            let p = RateParam { n_states: 4 };
            for x in 0..4 {
                let lhs = p.apply_k(0.3, &x, &combo).unwrap();
                let kf = p.apply_k(0.3, &x, &TestFunction::Table(fv.clone())).unwrap();
                let kg = p.apply_k(0.3, &x, &TestFunction::Table(gv.clone())).unwrap();
                for j in 0..3 {
                    prop_assert!((lhs[j] - (a * kf[j] + b * kg[j])).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn pair_is_bilinear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
            let mut r = rng::stream(seed, 0);
            let mut v = || (0..5).map(|_| rng::normal(&mut r)).collect::<Vec<f64>>();
            let (kf, f, g) = (v(), v(), v());
            let space = InnerSpace::diag(v().iter().map(|w| 0.1 + w.abs()).collect()).unwrap();
            let comb: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect();
            let lhs = space.pair(&kf, &comb).unwrap();
            let rhs = a * space.pair(&kf, &f).unwrap() + b * space.pair(&kf, &g).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
        }
    }
}
