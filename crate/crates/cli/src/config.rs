//! Experiment configuration, read from TOML with one table per concern.
//!
//! ```toml
//! kind = "jump_masked"
//! seed = 2024
//!
//! [divergence]
//! name = "bce"
//!
//! [time]
//! kind = "uniform"
//!
//! [weight]
//! kind = "constant"
//! c = 1.0
//!
//! [train]
//! steps = 600
//! ```
//!
//! Omitted fields take the per-kind defaults of the library experiments.

use std::path::{Path, PathBuf};

use gmkit::bregman::FamilyName;
use gmkit::experiments::{FlowExperiment, JumpExperiment};
use gmkit::model::Link;
use gmkit::timeweight::{KappaSchedule, TimeDistribution, WeightFn};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// 1-D Gaussian mixture, `x1`-prediction with tensor hat features.
    FlowX1,
    /// Single-site masked path with learned mask-to-token multipliers.
    JumpMasked,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::FlowX1 => "flow_x1",
            ExperimentKind::JumpMasked => "jump_masked",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ExperimentKind>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence: Option<DivergenceSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<TimeDistribution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<WeightFn>,
    #[serde(default)]
    pub path: PathSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub verify: VerifySection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DivergenceSection {
    pub name: FamilyName,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSection {
    /// Mixture component offset (`flow_x1`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    /// Mixture component standard deviation (`flow_x1`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sd: Option<f64>,
    /// Token distribution at `t = 1` (`jump_masked`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<KappaSchedule>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link: Option<Link>,
    /// Legendre degree of the time basis (`jump_masked`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_hi: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_trajectories: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    /// Scale one marginal rate in the kfe suite (sensitivity probe).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturb_rate: Option<f64>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn validate(&self) -> Result<(), CliError> {
        let positive = |name: &str, v: Option<f64>| match v {
            Some(v) if !(v > 0.0 && v.is_finite()) => Err(CliError::Config(format!("{name} must be positive, got {v}"))),
            _ => Ok(()),
        };
        positive("path.sd", self.path.sd)?;
        positive("train.lr", self.train.lr)?;
        positive("train.decay", self.train.decay)?;
        positive("sim.dt", self.sim.dt)?;
        positive("verify.perturb_rate", self.verify.perturb_rate)?;
        if let Some(p) = &self.path.prior {
            if p.len() < 2 || p.iter().any(|v| !(*v > 0.0)) || ((p.iter().sum::<f64>() - 1.0).abs() > 1e-9) {
                return Err(CliError::Config("path.prior must be a positive probability vector with at least 2 entries".into()));
            }
        }
        if let Some(k) = &self.path.kappa {
            k.validate().map_err(|e| CliError::Config(format!("path.kappa: {e}")))?;
        }
        if let (Some(lo), Some(hi)) = (self.model.x_lo, self.model.x_hi) {
            if !(lo < hi) {
                return Err(CliError::Config("model.x_lo must be below model.x_hi".into()));
            }
        }
        if let Some(w) = &self.weight {
            w.validate().map_err(|e| CliError::Config(format!("weight: {e}")))?;
        }
        if let Some(t) = &self.time {
            t.validate().map_err(|e| CliError::Config(format!("time: {e}")))?;
        }
        Ok(())
    }

    pub fn kind(&self) -> Result<ExperimentKind, CliError> {
        self.kind.ok_or_else(|| CliError::Config("`kind` is required (flow_x1 or jump_masked)".into()))
    }

    pub fn family(&self) -> Result<FamilyName, CliError> {
        let default = match self.kind()? {
            ExperimentKind::FlowX1 => FamilyName::Mse,
            ExperimentKind::JumpMasked => FamilyName::Bce,
        };
        let family = self.divergence.as_ref().map_or(default, |d| d.name);
        if self.kind()? == ExperimentKind::FlowX1 && family != FamilyName::Mse {
            return Err(CliError::Config("flow_x1 trains by least squares and needs divergence.name = \"mse\"".into()));
        }
        Ok(family)
    }

    pub fn time_dist(&self) -> TimeDistribution {
        self.time.clone().unwrap_or(TimeDistribution::Uniform)
    }

    pub fn weight_fn(&self) -> WeightFn {
        self.weight.clone().unwrap_or_else(|| match self.kind {
            Some(ExperimentKind::FlowX1) => WeightFn::InvShift { eps: FlowExperiment::default().eps, power: 2.0 },
            _ => WeightFn::one(),
        })
    }

    pub fn link(&self) -> Result<Link, CliError> {
        Ok(self.model.link.unwrap_or(Link::for_family(self.family()?)))
    }

    pub fn flow(&self) -> FlowExperiment {
        let d = FlowExperiment::default();
        FlowExperiment {
            mu: self.path.mu.unwrap_or(d.mu),
            sd: self.path.sd.unwrap_or(d.sd),
            t_nodes: self.model.t_nodes.unwrap_or(d.t_nodes),
            x_range: (self.model.x_lo.unwrap_or(d.x_range.0), self.model.x_hi.unwrap_or(d.x_range.1)),
            x_nodes: self.model.x_nodes.unwrap_or(d.x_nodes),
            n_train: self.train.n_samples.unwrap_or(d.n_train),
            steps: self.train.steps.unwrap_or(d.steps),
            lr: self.train.lr.unwrap_or(d.lr),
            n_traj: self.sim.n_trajectories.unwrap_or(d.n_traj),
            dt: self.sim.dt.unwrap_or(d.dt),
            seed: self.seed,
            ..d
        }
    }

    pub fn jump(&self) -> JumpExperiment {
        let d = JumpExperiment::default();
        JumpExperiment {
            prior: self.path.prior.clone().unwrap_or(d.prior),
            degree: self.model.degree.unwrap_or(d.degree),
            n_train: self.train.n_samples.unwrap_or(d.n_train),
            steps: self.train.steps.unwrap_or(d.steps),
            lr: self.train.lr.unwrap_or(d.lr),
            n_traj: self.sim.n_trajectories.unwrap_or(d.n_traj),
            t_max: self.sim.t_max.unwrap_or(d.t_max),
            seed: self.seed,
            ..d
        }
    }

    pub fn kappa(&self) -> KappaSchedule {
        self.path.kappa.clone().unwrap_or(KappaSchedule::Linear)
    }

    pub fn decay(&self) -> f64 {
        self.train.decay.unwrap_or(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
kind = "jump_masked"
seed = 11
out = "runs/a"

[divergence]
name = "poisson"

[time]
kind = "beta"
a = 2.0
b = 2.0

[weight]
kind = "inv_shift"
eps = 0.1
power = 2.0

[path]
prior = [0.25, 0.75]

[path.kappa]
kind = "power"
p = 2.0

[model]
degree = 3
link = "exp"

[train]
n_samples = 1000
steps = 5
lr = 0.5

[sim]
n_trajectories = 100
t_max = 0.999

[verify]
perturb_rate = 1.5
"#;

    #[test]
    fn round_trip_is_identity() {
        for text in [FULL, "seed = 3\n", "kind = \"flow_x1\"\nseed = 0\n[model]\nx_nodes = 9\n"] {
            let a = ExperimentConfig::parse(text).unwrap();
            let b = ExperimentConfig::parse(&a.to_toml()).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.to_toml(), b.to_toml());
        }
    }

    #[test]
    fn seed_is_mandatory_and_names_must_resolve() {
        assert!(ExperimentConfig::parse("kind = \"flow_x1\"\n").is_err());
        assert!(ExperimentConfig::parse("seed = 1\n[weight]\nkind = \"banana\"\n").is_err());
        assert!(ExperimentConfig::parse("seed = 1\n[divergence]\nname = \"kl\"\n").is_err());
        assert!(ExperimentConfig::parse("seed = 1\ncolour = 3\n").is_err());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        assert!(ExperimentConfig::parse("seed = 1\n[path]\nprior = [0.5, 0.6]\n").is_err());
        assert!(ExperimentConfig::parse("seed = 1\n[train]\nlr = -1.0\n").is_err());
        let flow_bce = ExperimentConfig::parse("kind = \"flow_x1\"\nseed = 1\n[divergence]\nname = \"bce\"\n").unwrap();
        assert!(flow_bce.family().is_err());
    }

    #[test]
    fn defaults_follow_the_library_experiments() {
        let c = ExperimentConfig::parse("kind = \"jump_masked\"\nseed = 9\n").unwrap();
        assert_eq!(c.jump(), JumpExperiment { seed: 9, ..JumpExperiment::default() });
        assert_eq!(c.link().unwrap(), Link::Sigmoid);
        let f = ExperimentConfig::parse(FULL).unwrap();
        assert_eq!(f.jump().prior, vec![0.25, 0.75]);
        assert_eq!(f.kappa(), KappaSchedule::Power { p: 2.0 });
    }
}
