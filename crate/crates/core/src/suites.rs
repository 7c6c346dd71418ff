//! Verification suites. Each check becomes one [`CheckRecord`]; a record
//! with a tolerance passes iff `|value| <= tolerance`.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bregman::{
    expectation_minimizer_check, make_separable, make_time_scaled, pythagorean_check, AtomicDistribution, DivergenceSpec,
    DomainKind, DomainSpec, DomainType, FamilyName, MinimizerSearch,
};
use crate::editflows::{self, EFRateTable, EfLossSpec};
use crate::error::Result;
use crate::flowpaths::{AffineScheduler, AffineVelocity, GmmTarget};
use crate::jumpkernels::{marginal_multipliers, JumpGenerator, MaskedPath, MASK};
use crate::linparam::{commutation_check, marginal_f, InnerSpace, TestFunction};
use crate::losses::{
    gm_loss_exact, minimize_separable, models_with, prop2_gap_test, random_thetas, DivergenceField, ExactSpec,
};
use crate::model::{Features, FiniteStateFeatures, Link, ParamModel, TimeBasis};
use crate::path::FinitePath;
use crate::quad;
use crate::rng::{self, StreamRng};
use crate::simulate::{kfe_grid, kfe_residual, kfe_residual_flow_1d, KFE_DT};
use crate::timeweight::{expect_weighted, reweight, KappaSchedule, TimeDistribution, WeightFn};

pub const SUITES: [&str; 6] = ["bregman", "reweight", "prop1", "prop2", "editflows", "kfe"];

/// Columns of [`CheckRecord::csv_row`].
pub const CSV_HEADER: &str = "experiment,metric,value,std_error,tolerance,pass,wall_time_s";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub experiment: String,
    pub metric: String,
    pub value: f64,
    pub std_error: Option<f64>,
    pub tolerance: Option<f64>,
    pub pass: bool,
    pub wall_time_s: f64,
}

impl CheckRecord {
    pub fn within(experiment: &str, metric: impl Into<String>, value: f64, tolerance: f64) -> Self {
        CheckRecord {
            experiment: experiment.into(),
            metric: metric.into(),
            value,
            std_error: None,
            tolerance: Some(tolerance),
            pass: value.abs() <= tolerance,
            wall_time_s: 0.0,
        }
    }

    /// A record without a tolerance; `pass` is decided by the caller.
    pub fn flag(experiment: &str, metric: impl Into<String>, value: f64, pass: bool) -> Self {
        CheckRecord {
            experiment: experiment.into(),
            metric: metric.into(),
            value,
            std_error: None,
            tolerance: None,
            pass,
            wall_time_s: 0.0,
        }
    }

    pub fn with_std_error(mut self, se: f64) -> Self {
        self.std_error = Some(se);
        self
    }

    fn opt(v: Option<f64>) -> String {
        v.map_or(String::new(), |v| format!("{v:.16e}"))
    }

    /// One CSV line (no trailing newline); floats with 17 significant digits.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.16e},{},{},{},{:.6}",
            self.experiment,
            self.metric,
            self.value,
            Self::opt(self.std_error),
            Self::opt(self.tolerance),
            self.pass,
            self.wall_time_s
        )
    }

    /// The CSV line without the wall-time column, for reproducibility checks.
    pub fn csv_row_stable(&self) -> String {
        let row = self.csv_row();
        row[..row.rfind(',').expect("columns")].to_string()
    }
}

pub fn to_csv(records: &[CheckRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Multiply the first mask-to-token rate by this factor in the kfe suite.
    pub perturb_rate: Option<f64>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig { seed: 7, perturb_rate: None }
    }
}

/// Run one suite by name (`all` runs every suite in order).
pub fn run_suite(name: &str, cfg: &SuiteConfig) -> Result<Vec<CheckRecord>> {
    match name {
        "bregman" => bregman_suite(cfg),
        "reweight" => reweight_suite(cfg),
        "prop1" => prop1_suite(cfg),
        "prop2" => prop2_suite(cfg),
        "editflows" => editflows_suite(cfg),
        "kfe" => kfe_suite(cfg),
        "all" => {
            let mut out = Vec::new();
            for s in SUITES {
                out.extend(run_suite(s, cfg)?);
            }
            Ok(out)
        }
        other => Err(crate::Error::InvalidArgument(format!(
            "unknown suite `{other}`; valid suites: {}, all",
            SUITES.join(", ")
        ))),
    }
}

/// Run `f` and stamp its records with the elapsed time.
fn timed(f: impl FnOnce() -> Result<Vec<CheckRecord>>) -> Result<Vec<CheckRecord>> {
    let start = Instant::now();
    let mut recs = f()?;
    let dt = start.elapsed().as_secs_f64();
    recs.iter_mut().for_each(|r| r.wall_time_s = dt);
    Ok(recs)
}

fn unif(r: &mut StreamRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng::uniform(r)
}

/// Families exercised by the Bregman suite.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Case {
    Leaf(FamilyName),
    Separable,
    TimeScaled,
}

const CASES: [Case; 5] =
    [Case::Leaf(FamilyName::Mse), Case::Leaf(FamilyName::Poisson), Case::Leaf(FamilyName::Bce), Case::Separable, Case::TimeScaled];

impl Case {
    fn name(self) -> &'static str {
        match self {
            Case::Leaf(f) => f.as_str(),
            Case::Separable => "separable",
            Case::TimeScaled => "time_scaled",
        }
    }

    fn leaves(self, dim: usize) -> Vec<FamilyName> {
        match self {
            Case::Leaf(f) => vec![f; dim],
            Case::Separable => vec![FamilyName::Poisson, FamilyName::Bce, FamilyName::Bce],
            Case::TimeScaled => vec![FamilyName::Poisson; dim],
        }
    }

    fn dim(self, r: &mut StreamRng) -> usize {
        match self {
            Case::Separable => 3,
            _ => 1 + (rng::uniform(r) * 4.0) as usize,
        }
    }

    fn spec(self, dim: usize) -> Result<DivergenceSpec> {
        Ok(match self {
            Case::Leaf(f) => f.spec(dim),
            Case::Separable => make_separable(vec![DivergenceSpec::poisson(1), DivergenceSpec::bce(2)])?,
            Case::TimeScaled => make_time_scaled(DivergenceSpec::poisson(dim), WeightFn::InvShift { eps: 0.1, power: 2.0 }),
        })
    }

    fn time(self, r: &mut StreamRng) -> Option<f64> {
        (self == Case::TimeScaled).then(|| rng::uniform(r))
    }
}

fn eval(spec: &DivergenceSpec, t: Option<f64>, a: &[f64], b: &[f64]) -> Result<f64> {
    match t {
        Some(t) => spec.eval_at(t, a, b),
        None => spec.eval(a, b),
    }
}

/// Interior second-slot point for each leaf.
fn draw_interior(r: &mut StreamRng, leaves: &[FamilyName]) -> Vec<f64> {
    leaves
        .iter()
        .map(|f| match f {
            FamilyName::Mse => unif(r, -3.0, 3.0),
            FamilyName::Poisson => unif(r, 0.1, 5.0),
            FamilyName::Bce => unif(r, 0.05, 0.95),
        })
        .collect()
}

/// First-slot point, with boundary values drawn now and then.
fn draw_member(r: &mut StreamRng, leaves: &[FamilyName]) -> Vec<f64> {
    leaves
        .iter()
        .map(|f| {
            let edge = rng::uniform(r) < 0.15;
            match f {
                FamilyName::Mse => unif(r, -3.0, 3.0),
                FamilyName::Poisson if edge => 0.0,
                FamilyName::Poisson => unif(r, 0.0, 5.0),
                FamilyName::Bce if edge => (rng::uniform(r) < 0.5) as u8 as f64,
                FamilyName::Bce => unif(r, 0.0, 1.0),
            }
        })
        .collect()
}

fn bregman_suite(cfg: &SuiteConfig) -> Result<Vec<CheckRecord>> {
    let mut out = Vec::new();
    for (ci, case) in CASES.into_iter().enumerate() {
        let exp = format!("bregman/{}", case.name());
        let seed = rng::derive_seed(cfg.seed, 100 + ci as u64);
        out.extend(timed(|| {
            let mut recs = Vec::new();
            let mut r = rng::stream(seed, 0);

            // nonnegativity over 1000 random pairs
            let mut worst: f64 = 0.0;
            for _ in 0..1000 {
                let d = case.dim(&mut r);
                let leaves = case.leaves(d);
                let spec = case.spec(leaves.len())?;
                let (a, b, t) = (draw_member(&mut r, &leaves), draw_interior(&mut r, &leaves), case.time(&mut r));
                worst = worst.max(-eval(&spec, t, &a, &b)?);
            }
            recs.push(CheckRecord::within(&exp, "negativity_max", worst.max(0.0), 0.0));

            // D < 1e-12 iff |a - b| < 1e-8, on pairs drawn clear of the gap
            // between the two thresholds
            let mut mismatches = 0;
            for k in 0..1000 {
                let d = case.dim(&mut r);
                let leaves = case.leaves(d);
                let spec = case.spec(leaves.len())?;
                let b = draw_interior(&mut r, &leaves);
                let near = k % 2 == 0;
                let scale = if near { 10f64.powf(unif(&mut r, -14.0, -9.0)) } else { 10f64.powf(unif(&mut r, -3.0, -1.5)) };
                let dir: Vec<f64> = (0..b.len()).map(|_| rng::normal(&mut r)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                let a: Vec<f64> = b.iter().zip(&dir).map(|(b, u)| b + scale * u / norm).collect();
                let dist = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                let v = eval(&spec, case.time(&mut r), &a, &b)?;
                if (v < 1e-12) != (dist < 1e-8) {
                    mismatches += 1;
                }
            }
            recs.push(CheckRecord::within(&exp, "indiscernibles_mismatches", mismatches as f64, 0.0));

            // gradient against central differences at 100 interior points
            let mut worst_rel: f64 = 0.0;
            for _ in 0..100 {
                let d = case.dim(&mut r);
                let leaves = case.leaves(d);
                let spec = case.spec(leaves.len())?;
                let (a, b, t) = (draw_member(&mut r, &leaves), draw_interior(&mut r, &leaves), case.time(&mut r));
                let g = match t {
                    Some(t) => spec.grad_b_at(t, &a, &b)?,
                    None => spec.grad_b(&a, &b)?,
                };
                for i in 0..b.len() {
                    let h = 1e-6 * b[i].abs().max(1.0);
                    let (mut up, mut dn) = (b.clone(), b.clone());
                    up[i] += h;
                    dn[i] -= h;
                    let fd = (eval(&spec, t, &a, &up)? - eval(&spec, t, &a, &dn)?) / (2.0 * h);
                    worst_rel = worst_rel.max((fd - g[i]).abs() / g[i].abs().max(1e-3));
                }
            }
            recs.push(CheckRecord::within(&exp, "grad_fd_rel_error", worst_rel, 1e-6));

            // Pythagorean identity on random atomic distributions
            let mut worst_pyth: f64 = 0.0;
            for _ in 0..100 {
                let d = case.dim(&mut r);
                let leaves = case.leaves(d);
                let spec = case.spec(leaves.len())?;
                let n_atoms = 1 + (rng::uniform(&mut r) * 16.0) as usize;
                let atoms: Vec<(Vec<f64>, f64)> =
                    (0..n_atoms).map(|_| (draw_interior(&mut r, &leaves), unif(&mut r, 0.1, 1.0))).collect();
                let dist = AtomicDistribution::from_unnormalized(atoms)?;
                let y = draw_interior(&mut r, &leaves);
                worst_pyth = worst_pyth.max(pythagorean_check(&spec, &dist, case.time(&mut r), &y)?);
            }
            recs.push(CheckRecord::within(&exp, "pythagorean_residual", worst_pyth, 1e-10));

            // the expectation minimizer is the mean
            let mut worst_ratio: f64 = 0.0;
            for _ in 0..20 {
                let leaves = case.leaves(1);
                let spec = case.spec(leaves.len())?;
                let atoms: Vec<(Vec<f64>, f64)> = (0..5).map(|_| (draw_interior(&mut r, &leaves), unif(&mut r, 0.1, 1.0))).collect();
                let dist = AtomicDistribution::from_unnormalized(atoms)?;
                let search = if leaves.len() == 1 {
                    let (lo, hi) = match leaves[0] {
                        FamilyName::Mse => (-3.0, 3.0),
                        FamilyName::Poisson => (0.05, 5.0),
                        FamilyName::Bce => (0.01, 0.99),
                    };
                    MinimizerSearch::Grid { lo: vec![lo], hi: vec![hi], n: 20_001 }
                } else {
                    MinimizerSearch::descent(vec![0.5; leaves.len()])
                };
                let rep = expectation_minimizer_check(&spec, &dist, case.time(&mut r), &search)?;
                worst_ratio = worst_ratio.max(rep.gap / rep.resolution);
            }
            recs.push(CheckRecord::within(&exp, "minimizer_gap_over_resolution", worst_ratio, 1.0));
            Ok(recs)
        })?);
    }

    out.extend(timed(|| {
        let mut r = rng::stream(rng::derive_seed(cfg.seed, 150), 0);
        let parts = [DivergenceSpec::bce(2), DivergenceSpec::poisson(1), DivergenceSpec::bce(2)];
        let sep = make_separable(parts.to_vec())?;
        let leaves = [FamilyName::Bce, FamilyName::Bce, FamilyName::Poisson, FamilyName::Bce, FamilyName::Bce];
        let c = 2.75;
        let scaled = make_time_scaled(DivergenceSpec::poisson(3), WeightFn::Constant { c });
        let (mut sep_diff, mut ratio_diff): (f64, f64) = (0.0, 0.0);
        for _ in 0..200 {
            let (a, b) = (draw_member(&mut r, &leaves), draw_interior(&mut r, &leaves));
            let mut sum = 0.0;
            let mut off = 0;
            for p in &parts {
                let d = p.dim();
                sum += p.eval(&a[off..off + d], &b[off..off + d])?;
                off += d;
            }
            sep_diff = sep_diff.max((sep.eval(&a, &b)? - sum).abs());
            let (a3, b3) = (&a[2..5].iter().map(|v| v.abs()).collect::<Vec<_>>(), &b[2..5].iter().map(|v| v.abs()).collect::<Vec<_>>());
            let base = DivergenceSpec::poisson(3).eval(a3, b3)?;
            ratio_diff = ratio_diff.max((scaled.eval_at(rng::uniform(&mut r), a3, b3)? - c * base).abs());
        }
        Ok(vec![
            CheckRecord::within("bregman/separable", "sum_of_parts_diff", sep_diff, 0.0),
            CheckRecord::within("bregman/time_scaled", "constant_ratio_diff", ratio_diff, 0.0),
        ])
    })?);
    Ok(out)
}

fn reweight_dists() -> Vec<(&'static str, TimeDistribution)> {
    vec![
        ("uniform", TimeDistribution::Uniform),
        ("beta_2_2", TimeDistribution::Beta { a: 2.0, b: 2.0 }),
        ("beta_2_5", TimeDistribution::Beta { a: 2.0, b: 5.0 }),
        ("truncexp_3", TimeDistribution::TruncExp { rate: 3.0 }),
    ]
}

fn reweight_weights() -> Vec<(&'static str, WeightFn)> {
    vec![
        ("const_3", WeightFn::Constant { c: 3.0 }),
        ("linear", WeightFn::Linear { slope: 2.0, intercept: 0.5 }),
        ("invshift", WeightFn::InvShift { eps: 0.1, power: 2.0 }),
        ("inv_hazard", WeightFn::InvHazard { kappa: KappaSchedule::Linear }),
    ]
}

type TestFn = (&'static str, fn(f64) -> f64);

const REWEIGHT_TESTS: [TestFn; 4] = [
    ("one", |_| 1.0),
    ("t", |t| t),
    ("t2", |t| t * t),
    ("sin_pi_t", |t| (std::f64::consts::PI * t).sin()),
];

fn reweight_suite(cfg: &SuiteConfig) -> Result<Vec<CheckRecord>> {
    let mut out = Vec::new();
    for (di, (dname, dist)) in reweight_dists().into_iter().enumerate() {
        for (wi, (wname, w)) in reweight_weights().into_iter().enumerate() {
            let exp = format!("reweight/{dname}/{wname}");
            let seed = rng::derive_seed(cfg.seed, 200 + 10 * di as u64 + wi as u64);
            out.extend(timed(|| {
                let mut recs = Vec::new();
                let (tilted, k) = reweight(&dist, &w)?;
                recs.push(CheckRecord::within(&exp, "tilted_normalization", tilted.normalization() - 1.0, 1e-6));
                for (fname, f) in REWEIGHT_TESTS {
                    let lhs = expect_weighted(&dist, &w, &f, 1, seed)?.quad;
                    let rhs = expect_weighted(&tilted, &WeightFn::one(), &f, 20_000, seed)?;
                    let se = k * rhs.mc_std_error;
                    let tol = (3.0 * se).max(1e-8);
                    recs.push(CheckRecord::within(&exp, format!("identity_residual_{fname}"), lhs - k * rhs.mc, tol).with_std_error(se));
                }
                // tilting back by 1/w restores the base density, where 1/w is bounded
                if w.exception_set().is_empty() {
                    let (back, _) = reweight(&tilted, &WeightFn::Reciprocal { inner: Box::new(w.clone()) })?;
                    let diff = quad::linspace(0.001, 0.999, 999)
                        .into_iter()
                        .map(|t| (back.density(t) - dist.density(t)).abs())
                        .fold(0.0, f64::max);
                    recs.push(CheckRecord::within(&exp, "round_trip_density", diff, 1e-10));
                }
                Ok(recs)
            })?);
        }
    }
    Ok(out)
}

fn random_domain(r: &mut StreamRng) -> Result<DomainSpec> {
    let d = 1 + (rng::uniform(r) * 4.0) as usize;
    let kind = match (rng::uniform(r) * 3.0) as usize {
        0 => DomainKind::WholeSpace(d),
        1 => DomainKind::NonnegOrthant(d),
        _ => DomainKind::UnitIntervalProduct(d),
    };
    DomainSpec::new(kind, DomainType::Full)
}

fn draw_in(r: &mut StreamRng, dom: &DomainSpec) -> Vec<f64> {
    (0..dom.dim())
        .map(|i| match dom.bounds(i) {
            (lo, hi) if lo.is_finite() && hi.is_finite() => unif(r, lo, hi),
            (lo, _) if lo.is_finite() => lo + 4.0 * rng::uniform(r),
            _ => 4.0 * rng::normal(r),
        })
        .collect()
}

fn prop1_suite(cfg: &SuiteConfig) -> Result<Vec<CheckRecord>> {
    timed(|| {
        let mut r = rng::stream(rng::derive_seed(cfg.seed, 300), 0);
        let (mut marg, mut comm, mut outside, mut mult): (f64, f64, usize, f64) = (0.0, 0.0, 0, 0.0);
        for _ in 0..100 {
            let dom = random_domain(&mut r)?;
            let n_atoms = 1 + (rng::uniform(&mut r) * 8.0) as usize;
            let targets: Vec<Vec<f64>> = (0..n_atoms).map(|_| draw_in(&mut r, &dom)).collect();
            let post = AtomicDistribution::from_unnormalized((0..n_atoms).map(|z| (z, unif(&mut r, 0.05, 1.0))).collect())?;
            let f = marginal_f(&post, |z| targets[*z].clone(), &dom)?;
            // brute force in reverse atom order
            let mut brute = vec![0.0; dom.dim()];
            for (z, w) in post.atoms().iter().rev() {
                brute.iter_mut().zip(&targets[*z]).for_each(|(b, v)| *b += w * v);
            }
            marg = f.iter().zip(&brute).map(|(a, b)| (a - b).abs()).fold(marg, f64::max);
            if dom.check_member(&f).is_err() {
                outside += 1;
            }
            let space = InnerSpace::diag((0..dom.dim()).map(|_| unif(&mut r, 0.1, 3.0)).collect())?;
            let kf: Vec<f64> = (0..dom.dim()).map(|_| rng::normal(&mut r)).collect();
            comm = comm.max(commutation_check(&space, &post, &kf, |z| targets[*z].clone(), &dom)?);
            let rates: Vec<Vec<f64>> = (0..n_atoms).map(|_| (0..3).map(|_| 2.0 * rng::uniform(&mut r)).collect()).collect();
            let m = marginal_multipliers(&post, |z| rates[*z].clone());
            let brute: Vec<f64> =
                (0..3).map(|j| post.atoms().iter().rev().map(|(z, w)| w * rates[*z][j]).sum()).collect();
            mult = m.iter().zip(&brute).map(|(a, b)| (a - b).abs()).fold(mult, f64::max);
        }
        Ok(vec![
            CheckRecord::within("prop1", "marginal_f_vs_brute_force", marg, 1e-12),
            CheckRecord::within("prop1", "marginal_f_outside_domain", outside as f64, 0.0),
            CheckRecord::within("prop1", "commutation_residual", comm, 1e-12),
            CheckRecord::within("prop1", "marginal_multipliers_vs_brute_force", mult, 1e-12),
        ])
    })
}

fn masked_cases() -> Result<Vec<(&'static str, MaskedPath)>> {
    Ok(vec![
        ("v2", MaskedPath::uniform(2, KappaSchedule::Linear)?),
        ("v4", MaskedPath::new(vec![0.1, 0.2, 0.3, 0.4], KappaSchedule::Linear)?),
    ])
}

fn masked_features(p: &MaskedPath, basis: TimeBasis) -> FiniteStateFeatures {
    let mut dims = vec![0; p.vocab + 1];
    dims[MASK] = p.vocab;
    FiniteStateFeatures::new(basis, dims)
}

fn weightings() -> Vec<(&'static str, TimeDistribution, WeightFn)> {
    vec![
        ("w1", TimeDistribution::Uniform, WeightFn::one()),
        ("invshift", TimeDistribution::Uniform, WeightFn::InvShift { eps: 0.1, power: 2.0 }),
        ("beta22", TimeDistribution::Beta { a: 2.0, b: 2.0 }, WeightFn::one()),
    ]
}

fn prop2_suite(cfg: &SuiteConfig) -> Result<Vec<CheckRecord>> {
    let mut out = Vec::new();
    for (pname, path) in masked_cases()? {
        let features = masked_features(&path, TimeBasis::Legendre { degree: 2 });
        for (fi, family) in FamilyName::ALL.into_iter().enumerate() {
            let thetas = random_thetas(features.n_params(), 10, 1.0, rng::derive_seed(cfg.seed, 400 + fi as u64));
            let models = models_with(&features, Link::for_family(family), thetas)?;
            for (wname, dist, w) in weightings() {
                let exp = format!("prop2/{pname}/{}/{wname}", family.as_str());
                out.extend(timed(|| {
                    let spec = ExactSpec::new(DivergenceField::new(family), dist.clone(), w.clone());
                    let rep = prop2_gap_test(&path, &spec, &models)?;
                    Ok(vec![
                        CheckRecord::within(&exp, "gap_spread", rep.spread, 1e-9),
                        CheckRecord::within(&exp, "gap_vs_direct", rep.direct_residual, 1e-9),
                        CheckRecord::within(&exp, "grad_rel_error", rep.grad_rel_error, 1e-8),
                    ])
                })?);
            }
        }
    }

    // the minimizer of a pointwise-expressive model ignores the weighting
    out.extend(timed(|| {
        let path = MaskedPath::new(vec![0.3, 0.7], KappaSchedule::Linear)?;
        let nodes = quad::simpson_rule(0.0, 1.0, crate::losses::EXACT_NODES - 1).0;
        let features = masked_features(&path, TimeBasis::Nodes { nodes: nodes.clone() });
        let mut recs = Vec::new();
        for family in FamilyName::ALL {
            let fit = |w: WeightFn| -> Result<Vec<f64>> {
                let spec = ExactSpec::new(DivergenceField::new(family), TimeDistribution::Uniform, w);
                let mut m = ParamModel::zeros(features.clone(), Link::for_family(family));
                minimize_separable(&mut m, |m| Ok(gm_loss_exact(&path, &spec, m)?.grad), -12.0, 12.0, 80)?;
                Ok(m.theta)
            };
            let (a, b) = (fit(WeightFn::one())?, fit(WeightFn::InvShift { eps: 0.1, power: 2.0 })?);
            let mut worst: f64 = 0.0;
            for (k, &t) in nodes.iter().enumerate() {
                if path.marginal_prob(t, MASK) == 0.0 {
                    continue;
                }
                for o in 0..path.vocab {
                    let i = features.param_index(MASK, o, k);
                    worst = worst.max((a[i] - b[i]).abs());
                }
            }
            recs.push(CheckRecord::within(&format!("prop2/minimizer/{}", family.as_str()), "argmin_shift_under_reweighting", worst, 1e-6));
        }
        Ok(recs)
    })?);
    Ok(out)
}

fn editflows_suite(cfg: &SuiteConfig) -> Result<Vec<CheckRecord>> {
    let table = EFRateTable::random(3, 3, KappaSchedule::Linear, rng::derive_seed(cfg.seed, 500))?;
    let features = FiniteStateFeatures::new(TimeBasis::Legendre { degree: 2 }, vec![2, 2, 2]);
    let mut out = Vec::new();
    out.extend(timed(|| {
        let grid = kfe_grid(99);
        Ok(vec![
            CheckRecord::within("editflows", "marginalization_error", editflows::marginalization_error(&table, &quad::linspace(0.0, 1.0, 101))?, 1e-10),
            CheckRecord::within("editflows", "joint_kfe_residual", kfe_residual(&table.joint_generator(), |t| table.joint_probs(t), &grid, KFE_DT), 1e-6),
            CheckRecord::within("editflows", "marginal_kfe_residual", kfe_residual(&table.x_generator(), |t| table.x_probs(t), &grid, KFE_DT), 1e-6),
        ])
    })?);
    let scalings = [
        ("a1_b1", WeightFn::one(), WeightFn::one()),
        ("a_lin_b2", WeightFn::Linear { slope: 1.0, intercept: 0.5 }, WeightFn::Constant { c: 2.0 }),
        ("a_b_lin", WeightFn::Linear { slope: -0.5, intercept: 1.0 }, WeightFn::Linear { slope: -0.5, intercept: 1.0 }),
    ];
    for (fi, (family, link)) in [(FamilyName::Poisson, Link::Exp), (FamilyName::Mse, Link::Identity)].into_iter().enumerate() {
        let models = models_with(&features, link, random_thetas(features.n_params(), 10, 0.5, rng::derive_seed(cfg.seed, 510 + fi as u64)))?;
        for (sname, a, b) in scalings.clone() {
            let exp = format!("editflows/{}/{sname}", family.as_str());
            out.extend(timed(|| {
                let spec = EfLossSpec {
                    divergence: DivergenceField::new(family),
                    a,
                    b,
                    w: WeightFn::InvShift { eps: 0.1, power: 2.0 },
                    time_dist: TimeDistribution::Uniform,
                };
                let rep = editflows::ef_gap_test(&table, &spec, &models)?;
                Ok(vec![
                    CheckRecord::within(&exp, "gap_spread", rep.spread, 1e-9),
                    CheckRecord::within(&exp, "gap_vs_direct", rep.direct_residual, 1e-9),
                    CheckRecord::within(&exp, "grad_rel_error", rep.grad_rel_error, 1e-8),
                ])
            })?);
        }
        out.extend(timed(|| {
            let probes = quad::linspace(0.05, 0.95, 19);
            let err = editflows::hazard_rescaling_error(&table, family, &probes)?;
            let model = models.into_iter().next().expect("ten models");
            let row = editflows::homogeneity_check(
                &table,
                family,
                &WeightFn::Linear { slope: 1.0, intercept: 0.5 },
                &TimeDistribution::Uniform,
                &model,
            )?;
            let exp = format!("editflows/{}", family.as_str());
            // Poisson is 1-homogeneous so internal and external scaling agree;
            // mse is 2-homogeneous and is recorded, not asserted
            let homog = if family == FamilyName::Poisson {
                CheckRecord::within(&exp, "internal_vs_external_scaling_rel_diff", row.rel_diff, 1e-12)
            } else {
                CheckRecord::flag(&exp, "internal_vs_external_scaling_rel_diff", row.rel_diff, true)
            };
            Ok(vec![CheckRecord::within(&exp, "hazard_rescaling_error", err, 1e-8), homog])
        })?);
    }
    Ok(out)
}

/// Generator with one rate multiplied by a factor.
struct Perturbed<'a, G> {
    inner: &'a G,
    factor: f64,
}

impl<G: JumpGenerator> JumpGenerator for Perturbed<'_, G> {
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    fn jumps(&self, t: f64, x: usize, out: &mut Vec<(usize, f64)>) {
        self.inner.jumps(t, x, out);
        if let Some(first) = out.first_mut() {
            first.1 *= self.factor;
        }
    }
}

fn kfe_suite(cfg: &SuiteConfig) -> Result<Vec<CheckRecord>> {
    let mut out = Vec::new();
    for (name, path) in masked_cases()? {
        out.extend(timed(|| {
            let gen = path.marginal_generator();
            let grid = kfe_grid(99);
            let probs = |t: f64| path.marginal_probs(t);
            let res = match cfg.perturb_rate {
                Some(f) => kfe_residual(&Perturbed { inner: &gen, factor: f }, probs, &grid, KFE_DT),
                None => kfe_residual(&gen, probs, &grid, KFE_DT),
            };
            Ok(vec![CheckRecord::within(&format!("kfe/masked_{name}"), "max_residual", res, 1e-6)])
        })?);
    }
    out.extend(timed(|| {
        let target = GmmTarget::symmetric_pair(1.0, 0.5);
        let affine = AffineVelocity { scheduler: AffineScheduler::Linear };
        let res = kfe_residual_flow_1d(
            |t, x| target.marginal_density(&affine.scheduler, t, &[x]),
            |t, x| Ok(target.marginal_velocity(&affine, t, &[x])?[0]),
            &TestFunction::smooth_catalog(1),
            &quad::linspace(0.05, 0.95, 10),
            (-8.0, 8.0),
            2000,
            KFE_DT,
        )?;
        Ok(vec![CheckRecord::within("kfe/flow_gmm", "max_weak_residual", res, 1e-6)])
    })?);
    Ok(out)
}
