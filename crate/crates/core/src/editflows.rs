//! Rates on an augmented finite space `X x Z` and their marginalization over
//! the auxiliary coordinate.
//!
//! The joint path is the mixture `p_t = (1 - kappa) p0 + kappa p1` on
//! `X x Z`, generated by `u_t(y | s) = kappa' p0(s) p1(y) / p_t(s)` for
//! `y != s`. Summing a jump's rate over the new `z'` and averaging over
//! `z | x` gives `kappa' p0X(x) p1X(x') / pX_t(x)`, the rates of the mixture
//! path of the `X`-marginals.

use crate::bregman::{DomainKind, DomainSpec, DomainType, FamilyName, INTERIOR_MARGIN};
use crate::error::{Error, Result};
use crate::jumpkernels::{hazard_rescaled_rates, JumpGenerator};
use crate::losses::{cgm_loss_exact, gm_loss_exact, DivergenceField, ExactSpec, ExactValue};
use crate::model::Predictor;
use crate::path::FinitePath;
use crate::rng;
use crate::timeweight::{KappaSchedule, TimeDistribution, WeightFn};

#[derive(Debug, Clone, PartialEq)]
pub struct EFRateTable {
    pub nx: usize,
    pub nz: usize,
    /// Joint endpoint laws, indexed `x * nz + z`.
    pub p0: Vec<f64>,
    pub p1: Vec<f64>,
    pub kappa: KappaSchedule,
}

fn check_law(p: &[f64], n: usize) -> Result<()> {
    if p.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: p.len() });
    }
    if p.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidArgument("endpoint laws need full support".into()));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!("endpoint law sums to {s}")));
    }
    Ok(())
}

impl EFRateTable {
    pub fn new(nx: usize, nz: usize, p0: Vec<f64>, p1: Vec<f64>, kappa: KappaSchedule) -> Result<Self> {
        kappa.validate()?;
        if nx < 2 || nz == 0 {
            return Err(Error::InvalidArgument("need at least two x states and one z state".into()));
        }
        check_law(&p0, nx * nz)?;
        check_law(&p1, nx * nz)?;
        Ok(EFRateTable { nx, nz, p0, p1, kappa })
    }

    /// Endpoint laws with weights drawn uniformly from `[0.2, 1]`, normalized.
    pub fn random(nx: usize, nz: usize, kappa: KappaSchedule, seed: u64) -> Result<Self> {
        let mut r = rng::stream(seed, 0);
        let mut law = || {
            let w: Vec<f64> = (0..nx * nz).map(|_| 0.2 + 0.8 * rng::uniform(&mut r)).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|v| v / s).collect::<Vec<f64>>()
        };
        let (p0, p1) = (law(), law());
        Self::new(nx, nz, p0, p1, kappa)
    }

    pub fn index(&self, x: usize, z: usize) -> usize {
        x * self.nz + z
    }

    pub fn joint_probs(&self, t: f64) -> Vec<f64> {
        let k = self.kappa.value(t);
        self.p0.iter().zip(&self.p1).map(|(a, b)| (1.0 - k) * a + k * b).collect()
    }

    fn x_marginal(&self, p: &[f64]) -> Vec<f64> {
        p.chunks(self.nz).map(|c| c.iter().sum()).collect()
    }

    pub fn x_probs(&self, t: f64) -> Vec<f64> {
        self.x_marginal(&self.joint_probs(t))
    }

    /// Joint rate from state index `s` to `y`.
    pub fn rate(&self, t: f64, s: usize, y: usize) -> f64 {
        if s == y {
            return 0.0;
        }
        let k = self.kappa.value(t);
        let pt = (1.0 - k) * self.p0[s] + k * self.p1[s];
        self.kappa.derivative(t) * self.p0[s] * self.p1[y] / pt
    }

    /// Rates to each `x' != x` (in increasing order) after summing over `z'`.
    pub fn summed_rates(&self, t: f64, x: usize, z: usize) -> Vec<f64> {
        let s = self.index(x, z);
        (0..self.nx)
            .filter(|&x2| x2 != x)
            .map(|x2| (0..self.nz).map(|z2| self.rate(t, s, self.index(x2, z2))).sum())
            .collect()
    }

    /// Closed-form `X`-marginal rates in the same layout as [`Self::summed_rates`].
    pub fn x_rates(&self, t: f64, x: usize) -> Vec<f64> {
        let (a, b) = (self.x_marginal(&self.p0), self.x_marginal(&self.p1));
        let k = self.kappa.value(t);
        let px = (1.0 - k) * a[x] + k * b[x];
        let kd = self.kappa.derivative(t);
        (0..self.nx).filter(|&x2| x2 != x).map(|x2| kd * a[x] * b[x2] / px).collect()
    }

    /// Map a target slot back to its state.
    pub fn slot_state(x: usize, slot: usize) -> usize {
        if slot < x {
            slot
        } else {
            slot + 1
        }
    }

    pub fn joint_generator(&self) -> JointGenerator<'_> {
        JointGenerator(self)
    }

    pub fn x_generator(&self) -> XGenerator<'_, fn(&EFRateTable, f64, usize) -> Vec<f64>> {
        XGenerator { table: self, rates: EFRateTable::x_rates }
    }

    /// Marginal generator driven by any rate map in slot layout.
    pub fn x_generator_with<R: Fn(&EFRateTable, f64, usize) -> Vec<f64> + Sync>(&self, rates: R) -> XGenerator<'_, R> {
        XGenerator { table: self, rates }
    }
}

pub struct JointGenerator<'a>(&'a EFRateTable);

impl JumpGenerator for JointGenerator<'_> {
    fn n_states(&self) -> usize {
        self.0.nx * self.0.nz
    }

    fn jumps(&self, t: f64, s: usize, out: &mut Vec<(usize, f64)>) {
        out.clear();
        out.extend((0..self.n_states()).filter(|&y| y != s).map(|y| (y, self.0.rate(t, s, y))));
    }
}

pub struct XGenerator<'a, R> {
    table: &'a EFRateTable,
    rates: R,
}

impl<R: Fn(&EFRateTable, f64, usize) -> Vec<f64> + Sync> JumpGenerator for XGenerator<'_, R> {
    fn n_states(&self) -> usize {
        self.table.nx
    }

    fn jumps(&self, t: f64, x: usize, out: &mut Vec<(usize, f64)>) {
        out.clear();
        let r = (self.rates)(self.table, t, x);
        out.extend(r.into_iter().enumerate().map(|(k, v)| (EFRateTable::slot_state(x, k), v)));
    }
}

/// `X` is the state and `Z` the latent; the conditional target at `(x, z)` is
/// the rate vector summed over `z'`, so the marginal target is the
/// posterior-averaged rate vector.
impl FinitePath for EFRateTable {
    fn n_states(&self) -> usize {
        self.nx
    }

    fn n_latents(&self) -> usize {
        self.nz
    }

    fn joint_prob(&self, t: f64, x: usize, z: usize) -> f64 {
        let k = self.kappa.value(t);
        let s = self.index(x, z);
        (1.0 - k) * self.p0[s] + k * self.p1[s]
    }

    fn target_dim(&self, _x: usize) -> usize {
        self.nx - 1
    }

    fn cond_target(&self, t: f64, x: usize, z: usize, out: &mut Vec<f64>) {
        *out = self.summed_rates(t, x, z);
    }

    fn target_domain(&self, _x: usize) -> DomainSpec {
        DomainSpec { kind: DomainKind::NonnegOrthant(self.nx - 1), domain_type: DomainType::Full, margin: INTERIOR_MARGIN }
    }
}

/// Internal scalings `a`, `b` and external weight `w` of the rate loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EfLossSpec {
    pub divergence: DivergenceField,
    pub a: WeightFn,
    pub b: WeightFn,
    pub w: WeightFn,
    pub time_dist: TimeDistribution,
}

impl EfLossSpec {
    fn exact(&self) -> ExactSpec {
        ExactSpec {
            target_scale: Some(self.a.clone()),
            pred_scale: Some(self.b.clone()),
            ..ExactSpec::new(self.divergence.clone(), self.time_dist.clone(), self.w.clone())
        }
    }
}

/// `E[w D(a sum_z' u(., z' | x, z), b u^theta(. | x))]` over the joint path.
pub fn ef_loss<M: Predictor<usize>>(table: &EFRateTable, spec: &EfLossSpec, model: &M) -> Result<ExactValue> {
    cgm_loss_exact(table, &spec.exact(), model)
}

/// The same loss against the marginalized rates `a u(. | x)`.
pub fn ef_loss_marginal<M: Predictor<usize>>(table: &EFRateTable, spec: &EfLossSpec, model: &M) -> Result<ExactValue> {
    gm_loss_exact(table, &spec.exact(), model)
}

pub fn ef_gap_test<M: Predictor<usize>>(
    table: &EFRateTable,
    spec: &EfLossSpec,
    models: &[M],
) -> Result<crate::losses::Prop2Report> {
    crate::losses::prop2_gap_test(table, &spec.exact(), models)
}

/// `max_{t, x} |E[sum_z' u(., z' | x, z) | x] - u_X(. | x)|` against the
/// closed-form marginal rates.
pub fn marginalization_error(table: &EFRateTable, grid: &[f64]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &t in grid {
        for x in 0..table.nx {
            let m = table.marginal_target(t, x)?.expect("full support");
            let c = table.x_rates(t, x);
            worst = m.iter().zip(&c).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
        }
    }
    Ok(worst)
}

/// Per-point minimizer of `s -> E_z[D(a T_z, s)]` by bisection on each
/// coordinate of the gradient, for families whose gradient in the second
/// slot is coordinate-separable.
pub fn pointwise_minimizer(family: FamilyName, targets: &[(f64, Vec<f64>)]) -> Result<Vec<f64>> {
    let d = targets[0].1.len();
    let spec = family.spec(1);
    let hi0 = targets.iter().flat_map(|(_, v)| v.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    (0..d)
        .map(|k| {
            let grad = |s: f64| -> Result<f64> {
                targets.iter().map(|(p, v)| Ok(p * spec.grad_b(&[v[k]], &[s])?[0])).sum()
            };
            let (mut lo, mut hi) = match family {
                FamilyName::Mse => (-hi0 - 1.0, hi0 + 1.0),
                FamilyName::Poisson => (1e-300, hi0 + 1.0),
                FamilyName::Bce => (1e-15, 1.0 - 1e-15),
            };
            for _ in 0..2000 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if grad(mid)? > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            Ok(0.5 * (lo + hi))
        })
        .collect()
}

/// Hazard rescaling: with `a = 1/h` the per-point minimizer `v*` of
/// `E[D(T_z / h, v)]` satisfies `h v* = u_X`. Returns the largest
/// `|h v* - u_X|` over the probe times and all states.
pub fn hazard_rescaling_error(table: &EFRateTable, family: FamilyName, probes: &[f64]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &t in probes {
        let h = table.kappa.hazard(t);
        for x in 0..table.nx {
            let post = table.posterior(t, x).expect("full support");
            let targets: Vec<(f64, Vec<f64>)> = post
                .atoms()
                .iter()
                .map(|(z, p)| (*p, table.summed_rates(t, x, *z).iter().map(|v| v / h).collect()))
                .collect();
            let v = pointwise_minimizer(family, &targets)?;
            let u = hazard_rescaled_rates(&v, h)?;
            let exact = table.x_rates(t, x);
            worst = u.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneityRow {
    pub family: FamilyName,
    /// Loss with `a = b = c`, `w = 1`.
    pub internal: f64,
    /// Loss with `a = b = 1`, `w = c`.
    pub external: f64,
    pub rel_diff: f64,
}

impl HomogeneityRow {
    /// Whether the two scalings agree to round-off.
    pub fn equivalent(&self) -> bool {
        self.rel_diff < 1e-12
    }
}

/// Compare common internal scaling of both slots by `c(t)` with external
/// weighting by `c(t)`, for one family and model.
pub fn homogeneity_check<M: Predictor<usize>>(
    table: &EFRateTable,
    family: FamilyName,
    c: &WeightFn,
    time_dist: &TimeDistribution,
    model: &M,
) -> Result<HomogeneityRow> {
    let field = DivergenceField::new(family);
    let internal = EfLossSpec {
        divergence: field.clone(),
        a: c.clone(),
        b: c.clone(),
        w: WeightFn::one(),
        time_dist: time_dist.clone(),
    };
    let external = EfLossSpec { divergence: field, a: WeightFn::one(), b: WeightFn::one(), w: c.clone(), time_dist: time_dist.clone() };
    let li = ef_loss(table, &internal, model)?.value;
    let le = ef_loss(table, &external, model)?.value;
    Ok(HomogeneityRow { family, internal: li, external: le, rel_diff: (li - le).abs() / le.abs().max(f64::MIN_POSITIVE) })
}
