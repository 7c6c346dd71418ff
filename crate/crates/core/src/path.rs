//! Conditional probability paths: latent `Z`, states `X_t | Z`, and the
//! conditional targets `F_t^Z(x)` that parameterize the conditional generator.

use std::borrow::Borrow;

use crate::bregman::{AtomicDistribution, DomainSpec};
use crate::error::Result;
use crate::linparam::marginal_f;
use crate::rng::{self, StreamRng};

/// A path that can be sampled by the two-stage procedure and queried for
/// conditional targets.
pub trait ConditionalPath: Sync {
    type Latent: Send + Sync;
    type State: Send + Sync + Borrow<Self::View>;
    type View: ?Sized;

    /// Draw `(Z, X_t)` jointly at time `t`.
    fn sample(&self, t: f64, rng: &mut StreamRng) -> (Self::Latent, Self::State);

    /// Write `F_t^z(x)` into `out`; an empty target means no generator
    /// components at `x`, which contributes nothing to a loss.
    fn cond_target(&self, t: f64, x: &Self::View, z: &Self::Latent, out: &mut Vec<f64>) -> Result<()>;
}

/// Path on a finite state space with an enumerable latent and analytic
/// joint law `p_t(x, z)`.
pub trait FinitePath: Sync {
    fn n_states(&self) -> usize;
    fn n_latents(&self) -> usize;
    fn joint_prob(&self, t: f64, x: usize, z: usize) -> f64;
    fn target_dim(&self, x: usize) -> usize;
    fn cond_target(&self, t: f64, x: usize, z: usize, out: &mut Vec<f64>);
    /// The admissible set for targets at `x` (conditional and marginal).
    fn target_domain(&self, x: usize) -> DomainSpec;

    fn marginal_prob(&self, t: f64, x: usize) -> f64 {
        (0..self.n_latents()).map(|z| self.joint_prob(t, x, z)).sum()
    }

    fn marginal_probs(&self, t: f64) -> Vec<f64> {
        (0..self.n_states()).map(|x| self.marginal_prob(t, x)).collect()
    }

    /// `p_{Z|t}(. | x)`; `None` where `p_t(x) = 0`.
    fn posterior(&self, t: f64, x: usize) -> Option<AtomicDistribution<usize>> {
        let atoms: Vec<(usize, f64)> = (0..self.n_latents())
            .map(|z| (z, self.joint_prob(t, x, z)))
            .filter(|(_, p)| *p > 0.0)
            .collect();
        AtomicDistribution::from_unnormalized(atoms).ok()
    }

    /// `F_t(x) = E[F_t^Z(x) | X_t = x]`; `None` where `p_t(x) = 0`.
    fn marginal_target(&self, t: f64, x: usize) -> Result<Option<Vec<f64>>> {
        let Some(post) = self.posterior(t, x) else {
            return Ok(None);
        };
        let f = marginal_f(
            &post,
            |z| {
                let mut buf = Vec::new();
                self.cond_target(t, x, *z, &mut buf);
                buf
            },
            &self.target_domain(x),
        )?;
        Ok(Some(f))
    }
}

/// Sampling view of a finite path: `(x, z)` drawn from the joint table at `t`.
pub struct Sampled<'a, P: ?Sized>(pub &'a P);

impl<P: FinitePath + ?Sized> ConditionalPath for Sampled<'_, P> {
    type Latent = usize;
    type State = usize;
    type View = usize;

    fn sample(&self, t: f64, rng: &mut StreamRng) -> (usize, usize) {
        let nz = self.0.n_latents();
        let table: Vec<f64> = (0..self.0.n_states() * nz)
            .map(|k| self.0.joint_prob(t, k / nz, k % nz))
            .collect();
        let k = rng::categorical(rng, &table);
        (k % nz, k / nz)
    }

    fn cond_target(&self, t: f64, x: &usize, z: &usize, out: &mut Vec<f64>) -> Result<()> {
        self.0.cond_target(t, *x, *z, out);
        Ok(())
    }
}
