//! End-to-end runs: train a model, simulate it, and compare against the
//! analytic target.

use crate::bregman::FamilyName;
use crate::error::Result;
use crate::flowpaths::{AffineScheduler, AffineVelocity, FlowX1Path, GmmTarget};
use crate::jumpkernels::{KernelGenerator, MaskedPath, MASK};
use crate::losses::{least_squares_form, random_thetas, train, DivergenceField, LossSpec, TraceRow, TrainConfig};
use crate::model::{Features, FiniteStateFeatures, Link, ParamModel, Predictor, TensorHat, TimeBasis};
use crate::path::{FinitePath, Sampled};
use crate::quad;
use crate::rng;
use crate::simulate::{self, ctmc_simulate, dist_distance, euler_flow, Reference, SimConfig, X1PredVelocity};
use crate::timeweight::{KappaSchedule, TimeDistribution, WeightFn};

/// 1-D two-component mixture `0.5 N(-mu, sd^2) + 0.5 N(mu, sd^2)` learned by
/// an `x1`-predictor with tensor-product hat features.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowExperiment {
    pub mu: f64,
    pub sd: f64,
    pub eps: f64,
    pub t_nodes: usize,
    pub x_range: (f64, f64),
    pub x_nodes: usize,
    pub n_train: usize,
    pub steps: usize,
    pub lr: f64,
    pub n_traj: usize,
    pub dt: f64,
    pub probe_t: Vec<f64>,
    pub probe_x: Vec<f64>,
    pub seed: u64,
}

impl Default for FlowExperiment {
    fn default() -> Self {
        FlowExperiment {
            mu: 1.0,
            sd: 0.5,
            eps: 0.1,
            t_nodes: 21,
            x_range: (-4.0, 4.0),
            x_nodes: 41,
            n_train: 50_000_000,
            steps: 3000,
            lr: 1.0,
            n_traj: 50_000,
            dt: 1e-3,
            probe_t: vec![0.2, 0.4, 0.6, 0.8],
            probe_x: quad::linspace(-1.5, 1.5, 13),
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowOutcome {
    /// Largest probe deviation from the closed-form posterior mean, weighted run.
    pub probe_error: f64,
    /// Same for the run with `w = 1`.
    pub probe_error_unweighted: f64,
    /// Largest probe difference between the two runs.
    pub reweight_gap: f64,
    pub mean: f64,
    pub var: f64,
    pub target_mean: f64,
    pub target_var: f64,
    pub final_loss: f64,
    pub trace: Vec<TraceRow>,
}

impl FlowExperiment {
    pub fn target(&self) -> GmmTarget {
        GmmTarget::symmetric_pair(self.mu, self.sd)
    }

    pub fn path(&self) -> FlowX1Path {
        FlowX1Path { target: self.target(), scheduler: AffineScheduler::Linear }
    }

    pub fn features(&self) -> Result<TensorHat> {
        TensorHat::uniform(self.t_nodes, self.x_range.0, self.x_range.1, self.x_nodes)
    }

    /// Least-squares fit of the hat model on `n_train` draws with weight `w`.
    pub fn fit(&self, weight: WeightFn, seed: u64) -> Result<(ParamModel<TensorHat>, Vec<TraceRow>)> {
        let features = self.features()?;
        let spec = LossSpec {
            divergence: DivergenceField::new(FamilyName::Mse),
            time_dist: TimeDistribution::Uniform,
            weight,
            n_samples: self.n_train,
            seed,
        };
        let form = least_squares_form(&self.path(), &spec, &features)?;
        let mut theta = vec![0.0; features.n_params()];
        let cfg = TrainConfig { steps: self.steps, lr: self.lr, decay: 1.0, start_step: 0 };
        let trace = form.descend(&mut theta, &cfg);
        Ok((ParamModel::with_theta(features, Link::Identity, theta)?, trace))
    }

    fn probe_values(&self, m: &ParamModel<TensorHat>) -> Vec<f64> {
        self.probe_t.iter().flat_map(|&t| self.probe_x.iter().map(move |&x| m.predict(t, &[x][..])[0])).collect()
    }

    fn probe_truth(&self) -> Vec<f64> {
        let (target, sched) = (self.target(), AffineScheduler::Linear);
        self.probe_t
            .iter()
            .flat_map(|&t| self.probe_x.iter().map(|&x| target.posterior_x1_mean(&sched, t, &[x])[0]).collect::<Vec<_>>())
            .collect()
    }

    pub fn run(&self) -> Result<FlowOutcome> {
        let weighted = WeightFn::InvShift { eps: self.eps, power: 2.0 };
        // both fits share one sample set, so their difference isolates the weight
        let train_seed = rng::derive_seed(self.seed, 1);
        let (model, trace) = self.fit(weighted, train_seed)?;
        let (plain, _) = self.fit(WeightFn::one(), train_seed)?;
        let truth = self.probe_truth();
        let (pw, pu) = (self.probe_values(&model), self.probe_values(&plain));
        let max_dev = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);

        let v = X1PredVelocity { model: &model, affine: AffineVelocity { scheduler: AffineScheduler::Linear }, dim: 1 };
        let sim = SimConfig { dt: self.dt, ..SimConfig::new(self.n_traj, rng::derive_seed(self.seed, 3)) };
        let (mean, var) = euler_flow(&v, &sim)?.moments().expect("continuous samples");
        let target = self.target();
        Ok(FlowOutcome {
            probe_error: max_dev(&pw, &truth),
            probe_error_unweighted: max_dev(&pu, &truth),
            reweight_gap: max_dev(&pw, &pu),
            mean: mean[0],
            var: var[0],
            target_mean: target.mean()[0],
            target_var: target.variance()[0],
            final_loss: trace.last().map_or(f64::NAN, |r| r.loss),
            trace,
        })
    }
}

/// Masked single-site path whose mask-to-token multipliers are learned with
/// BCE and a sigmoid link, then simulated as a CTMC.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpExperiment {
    pub prior: Vec<f64>,
    pub degree: usize,
    pub n_train: usize,
    pub steps: usize,
    pub lr: f64,
    pub n_traj: usize,
    pub t_max: f64,
    pub kfe_points: usize,
    pub seed: u64,
}

impl Default for JumpExperiment {
    fn default() -> Self {
        JumpExperiment {
            prior: vec![0.3, 0.7],
            degree: 2,
            n_train: 200_000,
            steps: 600,
            lr: 4.0,
            n_traj: 50_000,
            t_max: simulate::DEFAULT_T_MAX,
            kfe_points: 99,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpOutcome {
    pub tv: f64,
    pub kfe_trained: f64,
    pub kfe_exact: f64,
    pub mean_jumps: f64,
    /// Largest multiplier error against the exact posterior on the KFE grid.
    pub posterior_error: f64,
    pub final_loss: f64,
    pub trace: Vec<TraceRow>,
}

impl JumpExperiment {
    pub fn path(&self) -> Result<MaskedPath> {
        MaskedPath::new(self.prior.clone(), KappaSchedule::Linear)
    }

    pub fn features(&self) -> FiniteStateFeatures {
        let v = self.prior.len();
        let mut dims = vec![0; v + 1];
        dims[MASK] = v;
        FiniteStateFeatures::new(TimeBasis::Legendre { degree: self.degree }, dims)
    }

    pub fn fit(&self, path: &MaskedPath) -> Result<(ParamModel<FiniteStateFeatures>, Vec<TraceRow>)> {
        let features = self.features();
        let theta = random_thetas(features.n_params(), 1, 1.0, rng::derive_seed(self.seed, 10)).remove(0);
        let mut model = ParamModel::with_theta(features, Link::Sigmoid, theta)?;
        let spec = LossSpec {
            divergence: DivergenceField::new(FamilyName::Bce),
            time_dist: TimeDistribution::Uniform,
            weight: WeightFn::one(),
            n_samples: self.n_train,
            seed: rng::derive_seed(self.seed, 11),
        };
        let cfg = TrainConfig { steps: self.steps, lr: self.lr, decay: 1.0, start_step: 0 };
        let trace = train(&Sampled(path), &spec, &mut model, &cfg)?;
        Ok((model, trace))
    }

    pub fn run(&self) -> Result<JumpOutcome> {
        let path = self.path()?;
        let (model, trace) = self.fit(&path)?;
        let learned = KernelGenerator {
            kernel: &path,
            multipliers: |t: f64, x: usize| if x == MASK { model.predict(t, &x) } else { Vec::new() },
        };
        let sim = SimConfig { t_max: self.t_max, ..SimConfig::new(self.n_traj, rng::derive_seed(self.seed, 12)) };
        let ctmc = ctmc_simulate(&learned, &path.initial(), &sim)?;
        let tv = dist_distance(&ctmc.dist, Reference::Exact(&path.terminal()), 0)?.tv.expect("finite");
        let grid = simulate::kfe_grid(self.kfe_points);
        let probs = |t: f64| path.marginal_probs(t);
        let kfe_trained = simulate::kfe_residual(&learned, probs, &grid, simulate::KFE_DT);
        let kfe_exact = simulate::kfe_residual(&path.marginal_generator(), probs, &grid, simulate::KFE_DT);
        let posterior_error = grid
            .iter()
            .flat_map(|&t| model.predict(t, &MASK).into_iter().zip(path.prior.clone()).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        Ok(JumpOutcome {
            tv,
            kfe_trained,
            kfe_exact,
            mean_jumps: ctmc.mean_jumps,
            posterior_error,
            final_loss: trace.last().map_or(f64::NAN, |r| r.loss),
            trace,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_flow_run_is_sane() {
        let e = FlowExperiment {
            t_nodes: 11,
            x_nodes: 41,
            n_train: 200_000,
            steps: 500,
            n_traj: 2000,
            dt: 1e-2,
            ..FlowExperiment::default()
        };
        let out = e.run().unwrap();
        assert!(out.probe_error < 0.15, "{out:?}");
        assert!(out.mean.abs() < 0.1 && (out.var - 1.25).abs() < 0.2, "{out:?}");
        assert!(out.trace.windows(2).all(|w| w[1].loss <= w[0].loss + 1e-12));
    }

    #[test]
    fn small_jump_run_is_sane() {
        let e = JumpExperiment { n_train: 20_000, steps: 200, n_traj: 5000, ..JumpExperiment::default() };
        let out = e.run().unwrap();
        assert!(out.kfe_exact < 1e-6);
        assert!(out.tv < 0.06 && out.posterior_error < 0.1, "{out:?}");
        assert!(out.trace.last().unwrap().loss < out.trace[0].loss);
    }
}
