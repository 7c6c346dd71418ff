//! Bregman divergence families on closed convex domains.
//!
//! `D(a, b) = phi(a) - phi(b) - <a - b, grad phi(b)>` with `a` anywhere in the
//! closed domain and `b` restricted to the set where `phi` is differentiable:
//! the whole domain for MSE, the relative interior for Poisson and BCE, whose
//! generators `x log x` and `x log x + (1-x) log(1-x)` only extend continuously
//! (with `0 log 0 = 0`) to the boundary.
//!
//! Families compose: a separable divergence sums components on consecutive
//! slices; a time-scaled divergence multiplies a base by `w(t) > 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeweight::WeightFn;

/// Default margin for "strictly interior" checks.
pub const INTERIOR_MARGIN: f64 = 1e-12;
/// Negative results down to this magnitude are treated as round-off and clamped.
pub const CLAMP_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainType {
    /// `phi` differentiable on the whole closed domain.
    Full,
    /// `phi` differentiable only on the relative interior.
    RelativeInterior,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DomainKind {
    WholeSpace(usize),
    /// Componentwise `[lo_i, hi_i]`; bounds may be infinite.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    NonnegOrthant(usize),
    UnitIntervalProduct(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub domain_type: DomainType,
    pub margin: f64,
}

impl DomainSpec {
    pub fn new(kind: DomainKind, domain_type: DomainType) -> Result<Self> {
        let spec = DomainSpec { kind, domain_type, margin: INTERIOR_MARGIN };
        if spec.dim() == 0 {
            return Err(Error::InvalidArgument("domain dimension must be >= 1".into()));
        }
        if let DomainKind::Box { lo, hi } = &spec.kind {
            if lo.len() != hi.len() {
                return Err(Error::DimensionMismatch { expected: lo.len(), got: hi.len() });
            }
            if let Some(i) = (0..lo.len()).find(|&i| !(lo[i] < hi[i])) {
                return Err(Error::InvalidArgument(format!(
                    "box bounds need lo < hi, coordinate {i}: [{}, {}]",
                    lo[i], hi[i]
                )));
            }
        }
        Ok(spec)
    }

    pub fn whole_space(dim: usize) -> Self {
        DomainSpec { kind: DomainKind::WholeSpace(dim), domain_type: DomainType::Full, margin: INTERIOR_MARGIN }
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.margin = margin;
        self
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            DomainKind::WholeSpace(d) | DomainKind::NonnegOrthant(d) | DomainKind::UnitIntervalProduct(d) => *d,
            DomainKind::Box { lo, .. } => lo.len(),
        }
    }

    pub fn bounds(&self, i: usize) -> (f64, f64) {
        match &self.kind {
            DomainKind::WholeSpace(_) => (f64::NEG_INFINITY, f64::INFINITY),
            DomainKind::Box { lo, hi } => (lo[i], hi[i]),
            DomainKind::NonnegOrthant(_) => (0.0, f64::INFINITY),
            DomainKind::UnitIntervalProduct(_) => (0.0, 1.0),
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(())
    }

    /// `a` in the closed domain.
    pub fn check_member(&self, a: &[f64]) -> Result<()> {
        self.check_dim(a)?;
        for (i, &v) in a.iter().enumerate() {
            let (lo, hi) = self.bounds(i);
            if !(lo <= v && v <= hi) {
                return Err(Error::DomainViolation { index: i, value: v });
            }
        }
        Ok(())
    }

    /// `b` in the differentiability set: the closed domain for `Full`, at
    /// least `margin` away from every finite bound otherwise.
    pub fn check_second_slot(&self, b: &[f64]) -> Result<()> {
        match self.domain_type {
            DomainType::Full => self.check_member(b).map_err(|e| match e {
                Error::DomainViolation { index, value } => Error::InteriorViolation { index, value },
                other => other,
            }),
            DomainType::RelativeInterior => {
                self.check_dim(b)?;
                for (i, &v) in b.iter().enumerate() {
                    let (lo, hi) = self.bounds(i);
                    if !(lo + self.margin < v && v < hi - self.margin) {
                        return Err(Error::InteriorViolation { index: i, value: v });
                    }
                }
                Ok(())
            }
        }
    }

    /// Cartesian product of domains; the result is a box with the stacked bounds.
    pub fn concat(parts: &[DomainSpec]) -> Result<DomainSpec> {
        let first = parts.first().ok_or_else(|| Error::InvalidArgument("empty product".into()))?;
        if parts.iter().any(|p| p.domain_type != first.domain_type) {
            return Err(Error::MixedDomainTypes);
        }
        let (mut lo, mut hi) = (Vec::new(), Vec::new());
        for p in parts {
            for i in 0..p.dim() {
                let (l, h) = p.bounds(i);
                lo.push(l);
                hi.push(h);
            }
        }
        let margin = parts.iter().map(|p| p.margin).fold(0.0, f64::max);
        Ok(DomainSpec { kind: DomainKind::Box { lo, hi }, domain_type: first.domain_type, margin })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    Mse,
    Poisson,
    Bce,
    TimeScaled { base: Box<DivergenceSpec>, weight: WeightFn },
    Separable(Vec<DivergenceSpec>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceSpec {
    pub family: Family,
    pub domain: DomainSpec,
}

/// Named leaf families, as used in configs and per-point divergence fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    Mse,
    Poisson,
    Bce,
}

impl FamilyName {
    pub const ALL: [FamilyName; 3] = [FamilyName::Mse, FamilyName::Poisson, FamilyName::Bce];

    pub fn spec(self, dim: usize) -> DivergenceSpec {
        match self {
            FamilyName::Mse => DivergenceSpec::mse(dim),
            FamilyName::Poisson => DivergenceSpec::poisson(dim),
            FamilyName::Bce => DivergenceSpec::bce(dim),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FamilyName::Mse => "mse",
            FamilyName::Poisson => "poisson",
            FamilyName::Bce => "bce",
        }
    }
}

impl std::str::FromStr for FamilyName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(FamilyName::Mse),
            "poisson" => Ok(FamilyName::Poisson),
            "bce" => Ok(FamilyName::Bce),
            other => Err(Error::InvalidArgument(format!("unknown divergence family '{other}'"))),
        }
    }
}

fn poisson_term(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        b
    } else {
        a * (a / b).ln() - a + b
    }
}

fn clamp(v: f64) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= -CLAMP_TOLERANCE {
        Ok(0.0)
    } else {
        Err(Error::NumericalInconsistency(v))
    }
}

impl DivergenceSpec {
    /// `||a - b||^2` on all of `R^dim`.
    pub fn mse(dim: usize) -> Self {
        DivergenceSpec { family: Family::Mse, domain: DomainSpec::whole_space(dim) }
    }

    /// Squared error restricted to a box (still differentiable up to the boundary).
    pub fn mse_on(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let domain = DomainSpec::new(DomainKind::Box { lo, hi }, DomainType::Full)?;
        Ok(DivergenceSpec { family: Family::Mse, domain })
    }

    /// `sum_i a_i log(a_i / b_i) - a_i + b_i` on the nonnegative orthant.
    pub fn poisson(dim: usize) -> Self {
        DivergenceSpec {
            family: Family::Poisson,
            domain: DomainSpec {
                kind: DomainKind::NonnegOrthant(dim),
                domain_type: DomainType::RelativeInterior,
                margin: INTERIOR_MARGIN,
            },
        }
    }

    /// Componentwise binary cross entropy divergence on `[0, 1]^dim`.
    pub fn bce(dim: usize) -> Self {
        DivergenceSpec {
            family: Family::Bce,
            domain: DomainSpec {
                kind: DomainKind::UnitIntervalProduct(dim),
                domain_type: DomainType::RelativeInterior,
                margin: INTERIOR_MARGIN,
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn domain_type(&self) -> DomainType {
        self.domain.domain_type
    }

    /// Evaluate without a time argument. Fails with `TimeRequired` for a
    /// time-scaled family whose weight is not constant.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        self.checked(a, b)?;
        self.raw_eval(None, a, b)
    }

    pub fn eval_at(&self, t: f64, a: &[f64], b: &[f64]) -> Result<f64> {
        self.checked(a, b)?;
        self.raw_eval(Some(t), a, b)
    }

    /// Gradient of `D(a, .)` at `b`.
    pub fn grad_b(&self, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
        self.checked(a, b)?;
        let mut out = Vec::with_capacity(b.len());
        self.raw_grad(None, a, b, &mut out)?;
        Ok(out)
    }

    pub fn grad_b_at(&self, t: f64, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
        self.checked(a, b)?;
        let mut out = Vec::with_capacity(b.len());
        self.raw_grad(Some(t), a, b, &mut out)?;
        Ok(out)
    }

    fn checked(&self, a: &[f64], b: &[f64]) -> Result<()> {
        self.domain.check_member(a)?;
        self.domain.check_second_slot(b)
    }

    fn scale_at(weight: &WeightFn, t: Option<f64>) -> Result<f64> {
        let (t, value) = match (t, weight) {
            (Some(t), w) => (t, w.eval(t)),
            (None, WeightFn::Constant { c }) => (f64::NAN, *c),
            (None, _) => return Err(Error::TimeRequired),
        };
        if !(value > 0.0) {
            return Err(Error::NonpositiveWeight { t, value });
        }
        Ok(value)
    }

    fn raw_eval(&self, t: Option<f64>, a: &[f64], b: &[f64]) -> Result<f64> {
        match &self.family {
            Family::Mse => clamp(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()),
            Family::Poisson => clamp(a.iter().zip(b).map(|(&x, &y)| poisson_term(x, y)).sum()),
            Family::Bce => clamp(
                a.iter()
                    .zip(b)
                    .map(|(&x, &y)| poisson_term(x, y) + poisson_term(1.0 - x, 1.0 - y))
                    .sum(),
            ),
            Family::TimeScaled { base, weight } => Ok(Self::scale_at(weight, t)? * base.raw_eval(t, a, b)?),
            Family::Separable(parts) => {
                let mut acc = 0.0;
                let mut offset = 0;
                for p in parts {
                    let d = p.dim();
                    acc += p.raw_eval(t, &a[offset..offset + d], &b[offset..offset + d])?;
                    offset += d;
                }
                Ok(acc)
            }
        }
    }

    fn raw_grad(&self, t: Option<f64>, a: &[f64], b: &[f64], out: &mut Vec<f64>) -> Result<()> {
        match &self.family {
            Family::Mse => out.extend(a.iter().zip(b).map(|(x, y)| 2.0 * (y - x))),
            Family::Poisson => out.extend(a.iter().zip(b).map(|(x, y)| 1.0 - x / y)),
            Family::Bce => out.extend(a.iter().zip(b).map(|(x, y)| (y - x) / (y * (1.0 - y)))),
            Family::TimeScaled { base, weight } => {
                let s = Self::scale_at(weight, t)?;
                let start = out.len();
                base.raw_grad(t, a, b, out)?;
                out[start..].iter_mut().for_each(|g| *g *= s);
            }
            Family::Separable(parts) => {
                let mut offset = 0;
                for p in parts {
                    let d = p.dim();
                    p.raw_grad(t, &a[offset..offset + d], &b[offset..offset + d], out)?;
                    offset += d;
                }
            }
        }
        Ok(())
    }

    /// Leaf families this divergence is built from, in slice order.
    pub fn leaves(&self) -> Vec<&DivergenceSpec> {
        match &self.family {
            Family::Separable(parts) => parts.iter().flat_map(|p| p.leaves()).collect(),
            Family::TimeScaled { base, .. } => base.leaves(),
            _ => vec![self],
        }
    }
}

/// Sum of component divergences acting on consecutive slices.
pub fn make_separable(components: Vec<DivergenceSpec>) -> Result<DivergenceSpec> {
    if components.is_empty() {
        return Err(Error::InvalidArgument("separable divergence needs components".into()));
    }
    let domains: Vec<DomainSpec> = components.iter().map(|c| c.domain.clone()).collect();
    let domain = DomainSpec::concat(&domains)?;
    Ok(DivergenceSpec { family: Family::Separable(components), domain })
}

/// `w(t) * base`; positivity of `w` is enforced at each evaluation.
pub fn make_time_scaled(base: DivergenceSpec, weight: WeightFn) -> DivergenceSpec {
    let domain = base.domain.clone();
    DivergenceSpec { family: Family::TimeScaled { base: Box::new(base), weight }, domain }
}

/// Finitely supported law: `(point, probability)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicDistribution<T = Vec<f64>> {
    atoms: Vec<(T, f64)>,
}

impl<T> AtomicDistribution<T> {
    pub fn new(atoms: Vec<(T, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidArgument("distribution needs at least one atom".into()));
        }
        if let Some((_, w)) = atoms.iter().find(|(_, w)| !(*w >= 0.0)) {
            return Err(Error::InvalidArgument(format!("negative atom weight {w}")));
        }
        let total: f64 = atoms.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("atom weights sum to {total}, not 1")));
        }
        Ok(AtomicDistribution { atoms })
    }

    /// Normalizes nonnegative weights with positive total.
    pub fn from_unnormalized(atoms: Vec<(T, f64)>) -> Result<Self> {
        let total: f64 = atoms.iter().map(|(_, w)| w).sum();
        if !(total > 0.0) {
            return Err(Error::ZeroRate);
        }
        Self::new(atoms.into_iter().map(|(x, w)| (x, w / total)).collect())
    }

    pub fn point_mass(x: T) -> Self {
        AtomicDistribution { atoms: vec![(x, 1.0)] }
    }

    pub fn atoms(&self) -> &[(T, f64)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// `sum_i w_i g(x_i)`
    pub fn expect(&self, mut g: impl FnMut(&T) -> f64) -> f64 {
        self.atoms.iter().map(|(x, w)| w * g(x)).sum()
    }
}

impl AtomicDistribution<Vec<f64>> {
    pub fn dim(&self) -> usize {
        self.atoms[0].0.len()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for (x, w) in &self.atoms {
            for (mi, xi) in m.iter_mut().zip(x) {
                *mi += w * xi;
            }
        }
        m
    }

    /// `E[D(X, y)]`
    pub fn expected_divergence(&self, spec: &DivergenceSpec, t: Option<f64>, y: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for (x, w) in &self.atoms {
            let d = match t {
                Some(t) => spec.eval_at(t, x, y)?,
                None => spec.eval(x, y)?,
            };
            acc += w * d;
        }
        Ok(acc)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MinimizerSearch {
    /// Dense grid on `[lo, hi]` with `n` points per axis (1-D or 2-D).
    Grid { lo: Vec<f64>, hi: Vec<f64>, n: usize },
    /// Gradient descent with backtracking from `start`.
    Descent { start: Vec<f64>, step_tol: f64, max_iter: usize, resolution: f64 },
}

impl MinimizerSearch {
    pub fn descent(start: Vec<f64>) -> Self {
        MinimizerSearch::Descent { start, step_tol: 1e-10, max_iter: 100_000, resolution: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizerReport {
    pub minimizer: Vec<f64>,
    pub mean: Vec<f64>,
    /// Euclidean distance between the search result and the mean.
    pub gap: f64,
    pub resolution: f64,
}

impl MinimizerReport {
    pub fn pass(&self) -> bool {
        self.gap < self.resolution
    }
}

fn check_mean_interior(spec: &DivergenceSpec, mean: &[f64]) -> Result<()> {
    spec.domain.check_second_slot(mean).map_err(|e| match e {
        Error::InteriorViolation { index, value } => Error::MeanOnBoundary { index, value },
        other => other,
    })
}

/// Locate the minimizer of `y -> E[D(X, y)]` by direct search and compare it
/// with the mean of `X`.
pub fn expectation_minimizer_check(
    spec: &DivergenceSpec,
    dist: &AtomicDistribution,
    t: Option<f64>,
    search: &MinimizerSearch,
) -> Result<MinimizerReport> {
    let mean = dist.mean();
    check_mean_interior(spec, &mean)?;
    let objective = |y: &[f64]| dist.expected_divergence(spec, t, y);
    let (minimizer, resolution) = match search {
        MinimizerSearch::Grid { lo, hi, n } => {
            let dim = spec.dim();
            if lo.len() != dim || hi.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: lo.len() });
            }
            if !(1..=2).contains(&dim) || *n < 2 {
                return Err(Error::InvalidArgument("grid search supports 1-D and 2-D with n >= 2".into()));
            }
            let axis = |k: usize| crate::quad::linspace(lo[k], hi[k], *n);
            let axes: Vec<Vec<f64>> = (0..dim).map(axis).collect();
            let resolution = (0..dim).map(|k| (hi[k] - lo[k]) / (*n - 1) as f64).fold(0.0, f64::max);
            let mut best: Option<(f64, Vec<f64>)> = None;
            let mut consider = |y: Vec<f64>| -> Result<()> {
                if spec.domain.check_second_slot(&y).is_err() {
                    return Ok(());
                }
                let v = objective(&y)?;
                if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
                    best = Some((v, y));
                }
                Ok(())
            };
            if dim == 1 {
                for &y in &axes[0] {
                    consider(vec![y])?;
                }
            } else {
                for &y0 in &axes[0] {
                    for &y1 in &axes[1] {
                        consider(vec![y0, y1])?;
                    }
                }
            }
            let (_, y) = best.ok_or_else(|| Error::InvalidArgument("no grid point inside the domain".into()))?;
            (y, resolution)
        }
        MinimizerSearch::Descent { start, step_tol, max_iter, resolution } => {
            spec.domain.check_second_slot(start)?;
            let mut y = start.clone();
            let mut fy = objective(&y)?;
            let mut step = 1.0;
            for _ in 0..*max_iter {
                let mut g = vec![0.0; y.len()];
                for (x, w) in dist.atoms() {
                    let gx = match t {
                        Some(t) => spec.grad_b_at(t, x, &y)?,
                        None => spec.grad_b(x, &y)?,
                    };
                    g.iter_mut().zip(gx).for_each(|(gi, v)| *gi += w * v);
                }
                let gnorm2: f64 = g.iter().map(|v| v * v).sum();
                if gnorm2 == 0.0 {
                    break;
                }
                step *= 2.0;
                let moved = loop {
                    let cand: Vec<f64> = y.iter().zip(&g).map(|(yi, gi)| yi - step * gi).collect();
                    if spec.domain.check_second_slot(&cand).is_ok() {
                        let fc = objective(&cand)?;
                        if fc <= fy - 0.5 * step * gnorm2 {
                            y = cand;
                            fy = fc;
                            break true;
                        }
                    }
                    step *= 0.5;
                    if step * gnorm2.sqrt() < step_tol * 1e-3 {
                        break false;
                    }
                };
                if !moved || step * gnorm2.sqrt() < *step_tol {
                    break;
                }
            }
            (y, *resolution)
        }
    };
    let gap = minimizer.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(MinimizerReport { minimizer, mean, gap, resolution })
}

/// `|E[D(X,y)] - D(E[X], y) - E[D(X, E[X])]|`
pub fn pythagorean_check(
    spec: &DivergenceSpec,
    dist: &AtomicDistribution,
    t: Option<f64>,
    y: &[f64],
) -> Result<f64> {
    let mean = dist.mean();
    check_mean_interior(spec, &mean)?;
    let total = dist.expected_divergence(spec, t, y)?;
    let head = match t {
        Some(t) => spec.eval_at(t, &mean, y)?,
        None => spec.eval(&mean, y)?,
    };
    let spread = dist.expected_divergence(spec, t, &mean)?;
    Ok((total - head - spread).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn atoms(pts: &[(f64, f64)]) -> AtomicDistribution {
        AtomicDistribution::new(pts.iter().map(|&(x, w)| (vec![x], w)).collect()).unwrap()
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(DivergenceSpec::mse(2).eval(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(DivergenceSpec::mse(1).eval(&[3.0], &[1.0]).unwrap(), 4.0);
        assert_eq!(DivergenceSpec::poisson(1).eval(&[0.0], &[2.0]).unwrap(), 2.0);
        let bce = DivergenceSpec::bce(1).eval(&[0.0], &[0.5]).unwrap();
        assert!((bce - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(DivergenceSpec::mse(1).grad_b(&[1.0], &[1.0]).unwrap(), vec![0.0]);
        assert_eq!(DivergenceSpec::poisson(1).grad_b(&[2.0], &[1.0]).unwrap(), vec![-1.0]);
    }

    #[test]
    fn boundary_rules() {
        let p = DivergenceSpec::poisson(1);
        assert!(matches!(p.eval(&[-0.1], &[1.0]), Err(Error::DomainViolation { .. })));
        assert!(matches!(p.eval(&[1.0], &[0.0]), Err(Error::InteriorViolation { .. })));
        let b = DivergenceSpec::bce(1);
        assert!(b.eval(&[1.0], &[0.3]).is_ok());
        assert!(matches!(b.eval(&[0.3], &[1.0]), Err(Error::InteriorViolation { .. })));
        assert!(matches!(b.grad_b(&[0.3], &[0.0]), Err(Error::InteriorViolation { .. })));
        assert!(matches!(
            DivergenceSpec::mse(2).eval(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn configurable_margin() {
        let mut p = DivergenceSpec::poisson(1);
        p.domain = p.domain.with_margin(1e-3);
        assert!(p.eval(&[1.0], &[5e-4]).is_err());
        assert!(p.eval(&[1.0], &[2e-3]).is_ok());
    }

    #[test]
    fn separable_examples() {
        let sep = make_separable(vec![DivergenceSpec::mse(1), DivergenceSpec::mse(1)]).unwrap();
        assert_eq!(sep.eval(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 5.0);
        let single = make_separable(vec![DivergenceSpec::poisson(1)]).unwrap();
        let d = DivergenceSpec::poisson(1);
        assert_eq!(single.eval(&[0.7], &[1.9]).unwrap(), d.eval(&[0.7], &[1.9]).unwrap());
        assert_eq!(
            make_separable(vec![DivergenceSpec::mse(1), DivergenceSpec::poisson(1)]),
            Err(Error::MixedDomainTypes)
        );
        assert!(make_separable(vec![]).is_err());
    }

    #[test]
    fn separable_mixed_families_sum_slices() {
        let sep = make_separable(vec![DivergenceSpec::bce(1), DivergenceSpec::poisson(1)]).unwrap();
        let mut rng = rng::stream(3, 0);
        for _ in 0..100 {
            let a = [rng::uniform(&mut rng), 3.0 * rng::uniform(&mut rng)];
            let b = [0.01 + 0.98 * rng::uniform(&mut rng), 0.01 + 3.0 * rng::uniform(&mut rng)];
            let expect = 0.0
                + DivergenceSpec::bce(1).eval(&a[..1], &b[..1]).unwrap()
                + DivergenceSpec::poisson(1).eval(&a[1..], &b[1..]).unwrap();
            assert_eq!(sep.eval(&a, &b).unwrap(), expect);
        }
        // separable domain is the product box
        assert!(sep.eval(&[1.0, 5.0], &[0.5, 0.5]).is_ok());
        assert!(sep.eval(&[1.5, 5.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn time_scaled_examples() {
        let base = DivergenceSpec::mse(1);
        let one = make_time_scaled(base.clone(), WeightFn::one());
        assert_eq!(one.eval_at(0.3, &[3.0], &[1.0]).unwrap(), base.eval(&[3.0], &[1.0]).unwrap());
        let two = make_time_scaled(base.clone(), WeightFn::Constant { c: 2.0 });
        for t in [0.0, 0.5, 1.0] {
            assert_eq!(two.eval_at(t, &[3.0], &[1.0]).unwrap(), 8.0);
        }
        let eps = make_time_scaled(base.clone(), WeightFn::InvShift { eps: 0.1, power: 2.0 });
        let v = eps.eval_at(0.5, &[3.0], &[1.0]).unwrap();
        assert!((v - 4.0 / 0.36).abs() < 1e-12);
        assert_eq!(eps.eval(&[3.0], &[1.0]), Err(Error::TimeRequired));
        let bad = make_time_scaled(base, WeightFn::Linear { slope: 1.0, intercept: 0.0 });
        assert!(matches!(bad.eval_at(0.0, &[1.0], &[0.0]), Err(Error::NonpositiveWeight { .. })));
    }

    #[test]
    fn minimizer_examples() {
        let grid = |lo: f64, hi: f64| MinimizerSearch::Grid { lo: vec![lo], hi: vec![hi], n: 10_001 };
        let r = expectation_minimizer_check(
            &DivergenceSpec::mse(1),
            &atoms(&[(0.0, 0.5), (2.0, 0.5)]),
            None,
            &grid(-5.0, 5.0),
        )
        .unwrap();
        assert!((r.minimizer[0] - 1.0).abs() < 1e-12 && r.pass());

        let r = expectation_minimizer_check(
            &DivergenceSpec::poisson(1),
            &atoms(&[(1.0, 0.25), (3.0, 0.75)]),
            None,
            &grid(0.0, 10.0),
        )
        .unwrap();
        assert!((r.minimizer[0] - 2.5).abs() <= r.resolution && r.pass(), "{r:?}");

        let r = expectation_minimizer_check(
            &DivergenceSpec::bce(1),
            &atoms(&[(0.0, 0.5), (1.0, 0.5)]),
            None,
            &grid(0.0, 1.0),
        )
        .unwrap();
        assert!((r.minimizer[0] - 0.5).abs() < 1e-12 && r.pass());
    }

    #[test]
    fn minimizer_rejects_boundary_mean() {
        let r = expectation_minimizer_check(
            &DivergenceSpec::bce(1),
            &atoms(&[(1.0, 1.0)]),
            None,
            &MinimizerSearch::descent(vec![0.5]),
        );
        assert!(matches!(r, Err(Error::MeanOnBoundary { .. })));
    }

    #[test]
    fn descent_finds_mean_in_higher_dims() {
        let dist = AtomicDistribution::new(vec![
            (vec![0.2, 1.0, 3.0], 0.3),
            (vec![0.9, 0.0, 1.0], 0.7),
        ])
        .unwrap();
        let r = expectation_minimizer_check(
            &DivergenceSpec::poisson(3),
            &dist,
            None,
            &MinimizerSearch::descent(vec![1.0, 1.0, 1.0]),
        )
        .unwrap();
        assert!(r.pass(), "{r:?}");
    }

    #[test]
    fn pythagorean_examples() {
        let dist = atoms(&[(0.0, 0.5), (2.0, 0.5)]);
        assert_eq!(pythagorean_check(&DivergenceSpec::mse(1), &dist, None, &[3.0]).unwrap(), 0.0);
        let seven = make_time_scaled(DivergenceSpec::mse(1), WeightFn::Constant { c: 7.0 });
        assert!(pythagorean_check(&seven, &dist, None, &[3.0]).unwrap() < 1e-12);
        let mut rng = rng::stream(9, 0);
        for _ in 0..50 {
            let pts: Vec<(f64, f64)> = (0..4).map(|_| (4.0 * rng::uniform(&mut rng), 1.0)).collect();
            let dist = AtomicDistribution::from_unnormalized(
                pts.iter().map(|&(x, w)| (vec![x], w)).collect(),
            )
            .unwrap();
            let y = [0.05 + 4.0 * rng::uniform(&mut rng)];
            assert!(pythagorean_check(&DivergenceSpec::poisson(1), &dist, None, &y).unwrap() < 1e-10);
        }
    }

    #[test]
    fn near_diagonal_cancellation_is_clamped() {
        let p = DivergenceSpec::poisson(1);
        let v = p.eval(&[1e8], &[1e8 * (1.0 + 1e-15)]).unwrap();
        assert!(v >= 0.0);
    }

    proptest! {
        #[test]
        fn bce_matches_two_poisson_terms(a in 0.0f64..=1.0, b in 0.001f64..0.999) {
            let bce = DivergenceSpec::bce(1).eval(&[a], &[b]).unwrap();
            let p = DivergenceSpec::poisson(1);
            let two = p.eval(&[a], &[b]).unwrap() + p.eval(&[1.0 - a], &[1.0 - b]).unwrap();
            prop_assert!((bce - two).abs() < 1e-12);
        }

        #[test]
        fn poisson_matches_definition(a in 0.01f64..10.0, b in 0.01f64..10.0) {
            let phi = |x: f64| x * x.ln();
            let direct = phi(a) - phi(b) - (a - b) * (1.0 + b.ln());
            let v = DivergenceSpec::poisson(1).eval(&[a], &[b]).unwrap();
            prop_assert!((v - direct.max(0.0)).abs() < 1e-9 * (1.0 + direct.abs()));
        }
    }
}
