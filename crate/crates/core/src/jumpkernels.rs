//! Atomic jump kernels `Q_t(dy; x) = sum_j h_{t,j}(x) R_{t,j}(x) delta_{Gamma_{t,j}(x)}`
//! on finite state spaces. Hazards `h` and targets `Gamma` are fixed by the
//! kernel; the rate multipliers `R` are what a model learns.

use crate::bregman::{AtomicDistribution, DomainKind, DomainSpec, DomainType, INTERIOR_MARGIN};
use crate::error::{Error, Result};
use crate::linparam::{InnerSpace, LinearParam, Metric, TestFunction};
use crate::path::FinitePath;
use crate::timeweight::KappaSchedule;

/// One atom of a jump kernel: jump target and hazard.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub target: usize,
    pub hazard: f64,
}

/// Hazards and targets of a kernel; multipliers are supplied separately.
pub trait JumpKernel: Sync {
    fn n_states(&self) -> usize;
    fn components(&self, t: f64, x: usize, out: &mut Vec<Component>);
}

/// `lambda_total = sum_j h_j R_j`
pub fn total_rate(components: &[Component], multipliers: &[f64]) -> f64 {
    components.iter().zip(multipliers).map(|(c, r)| c.hazard * r).sum()
}

/// Atoms at `Gamma_j` with weights `h_j R_j / lambda_total`; atoms sharing a
/// target are kept separate.
pub fn normalized_jump_dist(components: &[Component], multipliers: &[f64]) -> Result<AtomicDistribution<usize>> {
    let total = total_rate(components, multipliers);
    if !(total > 0.0) {
        return Err(Error::ZeroRate);
    }
    AtomicDistribution::from_unnormalized(
        components
            .iter()
            .zip(multipliers)
            .map(|(c, r)| (c.target, c.hazard * r))
            .collect(),
    )
}

/// `R_bar_j = E_{Z ~ posterior}[R_j^Z]`
pub fn marginal_multipliers<Z>(posterior: &AtomicDistribution<Z>, r_cond: impl Fn(&Z) -> Vec<f64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for (z, w) in posterior.atoms() {
        let r = r_cond(z);
        if out.is_empty() {
            out = vec![0.0; r.len()];
        }
        out.iter_mut().zip(&r).for_each(|(o, v)| *o += w * v);
    }
    out
}

/// `h * v`, the rate implied by a hazard-free prediction `v`.
pub fn hazard_rescaled_rates(v_pred: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::NonpositiveHazard(h));
    }
    Ok(v_pred.iter().map(|v| h * v).collect())
}

/// Outgoing jumps of a finite-state process as `(target, rate)` pairs.
pub trait JumpGenerator: Sync {
    fn n_states(&self) -> usize;
    fn jumps(&self, t: f64, x: usize, out: &mut Vec<(usize, f64)>);

    fn exit_rate(&self, t: f64, x: usize) -> f64 {
        let mut v = Vec::new();
        self.jumps(t, x, &mut v);
        v.iter().map(|(_, r)| r).sum()
    }
}

/// Generator with rates `h_j R_j` to `Gamma_j`, multipliers from a closure.
pub struct KernelGenerator<'a, K: ?Sized, M> {
    pub kernel: &'a K,
    pub multipliers: M,
}

impl<K, M> JumpGenerator for KernelGenerator<'_, K, M>
where
    K: JumpKernel + ?Sized,
    M: Fn(f64, usize) -> Vec<f64> + Sync,
{
    fn n_states(&self) -> usize {
        self.kernel.n_states()
    }

    fn jumps(&self, t: f64, x: usize, out: &mut Vec<(usize, f64)>) {
        out.clear();
        let mut comps = Vec::new();
        self.kernel.components(t, x, &mut comps);
        if comps.is_empty() {
            return;
        }
        let r = (self.multipliers)(t, x);
        out.extend(comps.iter().zip(&r).map(|(c, r)| (c.target, c.hazard * r)));
    }
}

/// The kernel as a linear parameterization: `V_{t,x} = R^{N_{t,x}}` with the
/// hazard-weighted product and `K f = (f(Gamma_j) - f(x))_j`, so that
/// `<K f, R> = sum_j h_j R_j (f(Gamma_j) - f(x))`.
pub struct KernelParam<'a, K: ?Sized>(pub &'a K);

impl<K: JumpKernel + ?Sized> LinearParam for KernelParam<'_, K> {
    type State = usize;

    fn space_at(&self, t: f64, x: &usize) -> InnerSpace {
        let mut comps = Vec::new();
        self.0.components(t, *x, &mut comps);
        InnerSpace { dim: comps.len(), metric: Metric::DiagWeights(comps.iter().map(|c| c.hazard).collect()) }
    }

    fn apply_k(&self, t: f64, x: &usize, f: &TestFunction) -> Result<Vec<f64>> {
        let mut comps = Vec::new();
        self.0.components(t, *x, &mut comps);
        let fx = f.at_state(*x);
        Ok(comps.iter().map(|c| f.at_state(c.target) - fx).collect())
    }

    fn admissible(&self, t: f64, x: &usize) -> DomainSpec {
        let mut comps = Vec::new();
        self.0.components(t, *x, &mut comps);
        DomainSpec {
            kind: DomainKind::NonnegOrthant(comps.len()),
            domain_type: DomainType::RelativeInterior,
            margin: INTERIOR_MARGIN,
        }
    }
}

/// Single-site masked path. State 0 is the mask and state `j + 1` is token
/// `j`; the latent is the clean token `z ~ prior`. Given `z`, the site stays
/// masked with probability `1 - kappa(t)` and shows `z` otherwise. The
/// conditional kernel has one component per token from the mask, hazard
/// `kappa' / (1 - kappa)` and multipliers `one_hot(z)`; token states absorb.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedPath {
    pub vocab: usize,
    pub prior: Vec<f64>,
    pub kappa: KappaSchedule,
}

pub const MASK: usize = 0;

impl MaskedPath {
    pub fn new(prior: Vec<f64>, kappa: KappaSchedule) -> Result<Self> {
        kappa.validate()?;
        if prior.is_empty() {
            return Err(Error::InvalidArgument("vocabulary must be nonempty".into()));
        }
        if prior.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::InvalidArgument("token prior must be positive".into()));
        }
        let total: f64 = prior.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("token prior sums to {total}")));
        }
        Ok(MaskedPath { vocab: prior.len(), prior, kappa })
    }

    pub fn uniform(vocab: usize, kappa: KappaSchedule) -> Result<Self> {
        Self::new(vec![1.0 / vocab as f64; vocab], kappa)
    }

    pub fn hazard(&self, t: f64) -> f64 {
        self.kappa.hazard(t)
    }

    pub fn token_state(j: usize) -> usize {
        j + 1
    }

    /// `p_0`: all mass on the mask.
    pub fn initial(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.vocab + 1];
        p[MASK] = 1.0;
        p
    }

    /// `p_1`: the token prior.
    pub fn terminal(&self) -> Vec<f64> {
        let mut p = vec![0.0];
        p.extend_from_slice(&self.prior);
        p
    }

    /// Process conditioned on `Z = z`.
    pub fn conditional_generator(&self, z: usize) -> KernelGenerator<'_, Self, impl Fn(f64, usize) -> Vec<f64> + Sync + '_> {
        let vocab = self.vocab;
        KernelGenerator {
            kernel: self,
            multipliers: move |_t: f64, _x: usize| (0..vocab).map(|j| if j == z { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// Marginal process, multipliers `E[R^Z | X_t = x]`.
    pub fn marginal_generator(&self) -> KernelGenerator<'_, Self, impl Fn(f64, usize) -> Vec<f64> + Sync + '_> {
        KernelGenerator {
            kernel: self,
            multipliers: move |t: f64, x: usize| {
                self.marginal_target(t, x).ok().flatten().unwrap_or_else(|| vec![0.0; self.vocab])
            },
        }
    }
}

impl JumpKernel for MaskedPath {
    fn n_states(&self) -> usize {
        self.vocab + 1
    }

    fn components(&self, t: f64, x: usize, out: &mut Vec<Component>) {
        out.clear();
        if x == MASK {
            let h = self.hazard(t);
            out.extend((0..self.vocab).map(|j| Component { target: Self::token_state(j), hazard: h }));
        }
    }
}

impl FinitePath for MaskedPath {
    fn n_states(&self) -> usize {
        self.vocab + 1
    }

    fn n_latents(&self) -> usize {
        self.vocab
    }

    fn joint_prob(&self, t: f64, x: usize, z: usize) -> f64 {
        let k = self.kappa.value(t);
        let cond = if x == MASK {
            1.0 - k
        } else if x == Self::token_state(z) {
            k
        } else {
            0.0
        };
        self.prior[z] * cond
    }

    fn target_dim(&self, x: usize) -> usize {
        if x == MASK {
            self.vocab
        } else {
            0
        }
    }

    fn cond_target(&self, _t: f64, x: usize, z: usize, out: &mut Vec<f64>) {
        out.clear();
        if x == MASK {
            out.extend((0..self.vocab).map(|j| if j == z { 1.0 } else { 0.0 }));
        }
    }

    fn target_domain(&self, x: usize) -> DomainSpec {
        DomainSpec {
            kind: DomainKind::UnitIntervalProduct(self.target_dim(x)),
            domain_type: DomainType::Full,
            margin: INTERIOR_MARGIN,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn comps(h: &[f64], targets: &[usize]) -> Vec<Component> {
        h.iter().zip(targets).map(|(&hazard, &target)| Component { target, hazard }).collect()
    }

    #[test]
    fn total_rate_examples() {
        let c = comps(&[1.0, 2.0], &[1, 2]);
        assert_eq!(total_rate(&c, &[0.5, 0.25]), 1.0);
        assert_eq!(total_rate(&c, &[0.0, 0.0]), 0.0);
        let mut r = rng::stream(2, 0);
        let h: Vec<f64> = (0..8).map(|_| rng::uniform(&mut r) + 0.1).collect();
        let m: Vec<f64> = (0..8).map(|_| 3.0 * rng::uniform(&mut r)).collect();
        let c = comps(&h, &[0, 1, 2, 3, 4, 5, 6, 7]);
        let mut brute = 0.0;
        for j in 0..8 {
            brute += h[j] * m[j];
        }
        assert!((total_rate(&c, &m) - brute).abs() < 1e-14);
    }

    #[test]
    fn jump_dist_examples() {
        let c = comps(&[1.0, 5.0], &[3, 4]);
        let d = normalized_jump_dist(&c, &[2.0, 0.0]).unwrap();
        assert_eq!(d.expect(|&y| (y == 3) as u8 as f64), 1.0);
        let c = comps(&[1.0, 1.0], &[1, 2]);
        let d = normalized_jump_dist(&c, &[1.0, 3.0]).unwrap();
        assert_eq!(d.atoms(), &[(1, 0.25), (2, 0.75)]);
        assert_eq!(normalized_jump_dist(&c, &[0.0, 0.0]), Err(Error::ZeroRate));
    }

    #[test]
    fn marginal_multiplier_examples() {
        let pm = AtomicDistribution::point_mass(1usize);
        assert_eq!(marginal_multipliers(&pm, |z| vec![*z as f64, 2.0]), vec![1.0, 2.0]);
        let two = AtomicDistribution::new(vec![(0usize, 0.5), (1, 0.5)]).unwrap();
        assert_eq!(marginal_multipliers(&two, |z| vec![2.0 * *z as f64]), vec![1.0]);
    }

    #[test]
    fn hazard_rescaling() {
        assert_eq!(hazard_rescaled_rates(&[1.0], 2.0).unwrap(), vec![2.0]);
        let u = [0.3, 1.7];
        let h = 3.0;
        let v: Vec<f64> = u.iter().map(|x| x / h).collect();
        let back = hazard_rescaled_rates(&v, h).unwrap();
        assert!(back.iter().zip(u).all(|(a, b)| (a - b).abs() < 1e-15));
        assert_eq!(hazard_rescaled_rates(&[1.0], 0.0), Err(Error::NonpositiveHazard(0.0)));
    }

    #[test]
    fn masked_path_posteriors() {
        let p = MaskedPath::uniform(2, KappaSchedule::Linear).unwrap();
        assert!((p.marginal_prob(0.5, MASK) - 0.5).abs() < 1e-15);
        let post = p.posterior(0.5, MASK).unwrap();
        assert_eq!(post.atoms(), &[(0, 0.5), (1, 0.5)]);
        let post = p.posterior(0.3, MaskedPath::token_state(1)).unwrap();
        assert_eq!(post.atoms(), &[(1, 1.0)]);
        assert_eq!(p.marginal_target(0.4, MASK).unwrap().unwrap(), vec![0.5, 0.5]);
        assert!(p.posterior(0.0, 1).is_none());
        assert!(MaskedPath::new(vec![0.5, 0.5], KappaSchedule::Power { p: -1.0 }).is_err());
    }

    #[test]
    fn marginal_total_rate_is_posterior_average() {
        let p = MaskedPath::new(vec![0.1, 0.2, 0.3, 0.4], KappaSchedule::Cosine).unwrap();
        let t = 0.37;
        let mut c = Vec::new();
        p.components(t, MASK, &mut c);
        let post = p.posterior(t, MASK).unwrap();
        let mut buf = Vec::new();
        let avg = post.expect(|z| {
            p.cond_target(t, MASK, *z, &mut buf);
            total_rate(&c, &buf)
        });
        let rbar = p.marginal_target(t, MASK).unwrap().unwrap();
        assert!((total_rate(&c, &rbar) - avg).abs() < 1e-14);
    }

    #[test]
    fn kernel_param_matches_generator_rates() {
        let p = MaskedPath::new(vec![0.25, 0.75], KappaSchedule::Linear).unwrap();
        let param = KernelParam(&p);
        let gen = p.marginal_generator();
        let f = TestFunction::Table(vec![0.5, -1.0, 2.0]);
        let t = 0.6;
        let r = p.marginal_target(t, MASK).unwrap().unwrap();
        let via_param = param.action(t, &MASK, &f, &r).unwrap();
        let mut jumps = Vec::new();
        gen.jumps(t, MASK, &mut jumps);
        let via_rates: f64 = jumps.iter().map(|(y, q)| q * (f.at_state(*y) - f.at_state(MASK))).sum();
        assert!((via_param - via_rates).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn hazard_weighted_norm_bound(seed in 0u64..5000) {
            let mut r = rng::stream(seed, 0);
            let n = 1 + (rng::uniform(&mut r) * 8.0) as usize;
            let h: Vec<f64> = (0..n).map(|_| 0.01 + 5.0 * rng::uniform(&mut r)).collect();
            let m: Vec<f64> = (0..n).map(|_| 3.0 * rng::uniform(&mut r)).collect();
            let space = InnerSpace::diag(h.clone()).unwrap();
            let c = h.iter().fold(0.0f64, |acc, hj| acc.max(hj.powf(-0.5)));
            let targets: Vec<usize> = (0..n).collect();
            let lam = total_rate(&comps(&h, &targets), &m);
            prop_assert!(space.norm(&m).unwrap() <= c * lam * (1.0 + 1e-12));
        }

        #[test]
        fn jump_weights_proportional(seed in 0u64..5000) {
            let mut r = rng::stream(seed, 1);
            let h: Vec<f64> = (0..6).map(|_| 0.1 + rng::uniform(&mut r)).collect();
            let m: Vec<f64> = (0..6).map(|_| 0.1 + rng::uniform(&mut r)).collect();
            let c = comps(&h, &[0, 1, 2, 3, 4, 5]);
            let d = normalized_jump_dist(&c, &m).unwrap();
            let lam = total_rate(&c, &m);
            let total: f64 = d.atoms().iter().map(|(_, w)| w).sum();
            prop_assert!((total - 1.0).abs() < 1e-14);
            for (j, (_, w)) in d.atoms().iter().enumerate() {
                prop_assert!((w - h[j] * m[j] / lam).abs() < 1e-14);
            }
        }
    }
}
