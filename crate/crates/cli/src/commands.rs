use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gmkit::flowpaths::{AffineScheduler, AffineVelocity};
use gmkit::jumpkernels::{KernelGenerator, MaskedPath, MASK};
use gmkit::losses::{least_squares_form, random_thetas, train, DivergenceField, LossSpec, TraceRow, TrainConfig};
use gmkit::model::{Features, FiniteStateFeatures, ParamModel, Predictor, TensorHat};
use gmkit::path::{FinitePath, Sampled};
use gmkit::rng::derive_seed;
use gmkit::simulate::{self, ctmc_simulate, dist_distance, euler_flow, reference_samples, EmpiricalDist, Reference, SimConfig, X1PredVelocity};
use gmkit::suites::{run_suite, to_csv, CheckRecord, SuiteConfig, CSV_HEADER, SUITES};
use serde_json::json;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::theta::ThetaFile;
use crate::CliError;

pub const TRACE_HEADER: &str = "step,loss,std_error";
pub const TIDY_HEADER: &str = "experiment,t,metric,value";

/// Where and how loudly a command reports.
pub struct Ctx {
    pub out: PathBuf,
    pub quiet: bool,
}

impl Ctx {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        fs::create_dir_all(&self.out).map_err(|e| CliError::Io(format!("{}: {e}", self.out.display())))?;
        let path = self.out.join(name);
        fs::write(&path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

fn json_text(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).expect("json value") + "\n"
}

pub fn verify(ctx: &Ctx, suite: &str, cfg: &ExperimentConfig) -> Result<(), CliError> {
    if suite != "all" && !SUITES.contains(&suite) {
        return Err(CliError::Config(format!("unknown suite `{suite}`; valid suites: {}, all", SUITES.join(", "))));
    }
    let scfg = SuiteConfig { seed: cfg.seed, perturb_rate: cfg.verify.perturb_rate };
    let records = run_suite(suite, &scfg)?;
    let failed: Vec<&CheckRecord> = records.iter().filter(|r| !r.pass).collect();
    ctx.write(&format!("verify_{suite}.csv"), to_csv(&records))?;
    let summary = json!({
        "suite": suite,
        "seed": cfg.seed,
        "checks": records.len(),
        "failed": failed.len(),
        "pass": failed.is_empty(),
        "failures": failed.iter().map(|r| json!({"experiment": r.experiment, "metric": r.metric, "value": r.value, "tolerance": r.tolerance})).collect::<Vec<_>>(),
    });
    ctx.write(&format!("verify_{suite}.json"), json_text(&summary))?;
    for r in &failed {
        ctx.say(format!("FAIL {} {}: {:e} (tolerance {:?})", r.experiment, r.metric, r.value, r.tolerance));
    }
    ctx.say(format!("verify {suite}: {} checks, {} failed", records.len(), failed.len()));
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!("{} of {} checks failed", failed.len(), records.len())))
    }
}

fn trace_csv(trace: &[TraceRow]) -> String {
    let mut s = format!("{TRACE_HEADER}\n");
    for r in trace {
        let se = r.std_error.map_or(String::new(), |v| format!("{v:.16e}"));
        let _ = writeln!(s, "{},{:.16e},{se}", r.step, r.loss);
    }
    s
}

fn flow_model(cfg: &ExperimentConfig, theta: Vec<f64>) -> Result<ParamModel<TensorHat>, CliError> {
    Ok(ParamModel::with_theta(cfg.flow().features()?, cfg.link()?, theta)?)
}

fn jump_parts(cfg: &ExperimentConfig) -> Result<(MaskedPath, FiniteStateFeatures), CliError> {
    let e = cfg.jump();
    Ok((MaskedPath::new(e.prior.clone(), cfg.kappa())?, e.features()))
}

fn loss_spec(cfg: &ExperimentConfig, n_samples: usize) -> Result<LossSpec, CliError> {
    Ok(LossSpec {
        divergence: DivergenceField::new(cfg.family()?),
        time_dist: cfg.time_dist(),
        weight: cfg.weight_fn(),
        n_samples,
        seed: derive_seed(cfg.seed, 1),
    })
}

pub fn train_cmd(ctx: &Ctx, cfg: &ExperimentConfig, resume: Option<&Path>) -> Result<(), CliError> {
    let kind = cfg.kind()?;
    let resumed = resume.map(ThetaFile::load).transpose()?;
    let start_step = resumed.as_ref().map_or(0, |f| f.step);
    let (theta, trace, metrics) = match kind {
        ExperimentKind::FlowX1 => {
            let e = cfg.flow();
            let features = e.features()?;
            let mut theta = match &resumed {
                Some(f) => {
                    f.expect(kind, features.n_params())?;
                    f.theta.clone()
                }
                None => vec![0.0; features.n_params()],
            };
            ctx.say(format!("assembling least-squares form from {} samples", e.n_train));
            let form = least_squares_form(&e.path(), &loss_spec(cfg, e.n_train)?, &features)?;
            let tcfg = TrainConfig { steps: e.steps, lr: e.lr, decay: cfg.decay(), start_step };
            let trace = form.descend(&mut theta, &tcfg);
            if let Some(bad) = trace.iter().find(|r| !r.loss.is_finite()) {
                return Err(gmkit::Error::Diverged { step: bad.step, loss: bad.loss }.into());
            }
            let model = flow_model(cfg, theta.clone())?;
            let (target, sched) = (e.target(), AffineScheduler::Linear);
            let probe_error = e
                .probe_t
                .iter()
                .flat_map(|&t| e.probe_x.iter().map(move |&x| (t, x)))
                .map(|(t, x)| (model.predict(t, &[x][..])[0] - target.posterior_x1_mean(&sched, t, &[x])[0]).abs())
                .fold(0.0, f64::max);
            (theta, trace, json!({ "probe_error": probe_error }))
        }
        ExperimentKind::JumpMasked => {
            let e = cfg.jump();
            let (path, features) = jump_parts(cfg)?;
            let theta = match &resumed {
                Some(f) => {
                    f.expect(kind, features.n_params())?;
                    f.theta.clone()
                }
                None => random_thetas(features.n_params(), 1, 1.0, derive_seed(cfg.seed, 10)).remove(0),
            };
            let mut model = ParamModel::with_theta(features, cfg.link()?, theta)?;
            let tcfg = TrainConfig { steps: e.steps, lr: e.lr, decay: cfg.decay(), start_step };
            let trace = train(&Sampled(&path), &loss_spec(cfg, e.n_train)?, &mut model, &tcfg)?;
            let posterior_error = simulate::kfe_grid(e.kfe_points)
                .iter()
                .flat_map(|&t| model.predict(t, &MASK).into_iter().zip(&path.prior).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>())
                .fold(0.0, f64::max);
            (model.theta, trace, json!({ "posterior_error": posterior_error }))
        }
    };
    let last = trace.last().expect("trace has the initial row");
    let file = ThetaFile { kind, step: last.step, theta };
    ctx.write("theta.txt", file.render())?;
    ctx.write("trace.csv", trace_csv(&trace))?;
    let mut metrics = metrics;
    metrics["kind"] = json!(kind.as_str());
    metrics["step"] = json!(last.step);
    metrics["final_loss"] = json!(last.loss);
    metrics["n_params"] = json!(file.theta.len());
    ctx.write("metrics.json", json_text(&metrics))?;
    ctx.write("config.toml", cfg.to_toml())?;
    ctx.say(format!("trained to step {}: loss {:.6e}", last.step, last.loss));
    Ok(())
}

pub fn simulate_cmd(ctx: &Ctx, cfg: &ExperimentConfig, model_path: &Path) -> Result<(), CliError> {
    let kind = cfg.kind()?;
    let file = ThetaFile::load(model_path)?;
    match kind {
        ExperimentKind::FlowX1 => {
            let e = cfg.flow();
            file.expect(kind, e.features()?.n_params())?;
            let model = flow_model(cfg, file.theta.clone())?;
            let v = X1PredVelocity { model: &model, affine: AffineVelocity { scheduler: AffineScheduler::Linear }, dim: 1 };
            let sim = SimConfig { dt: e.dt, ..SimConfig::new(e.n_traj, derive_seed(cfg.seed, 3)) };
            let samples = euler_flow(&v, &sim)?;
            let target = e.target();
            let reference = reference_samples(e.n_traj, derive_seed(cfg.seed, 4), |r| target.sample_with(r));
            let rep = dist_distance(&samples, Reference::Empirical(&reference), derive_seed(cfg.seed, 5))?;
            let EmpiricalDist::Samples { data, .. } = &samples else { unreachable!("euler returns samples") };
            let mut csv = String::from("x\n");
            for x in data {
                let _ = writeln!(csv, "{x:.16e}");
            }
            ctx.write("samples.csv", csv)?;
            let report = json!({
                "kind": kind.as_str(),
                "n_trajectories": e.n_traj,
                "energy": rep.energy,
                "energy_null_mean": rep.energy_null.map(|n| n.0),
                "energy_null_sd": rep.energy_null.map(|n| n.1),
                "energy_z": rep.energy_z(),
                "mean_delta": rep.mean_delta,
                "var_delta": rep.var_delta,
            });
            ctx.write("distance.json", json_text(&report))?;
            ctx.say(format!("simulated {} trajectories: mean delta {:.4e}, variance delta {:.4e}", e.n_traj, rep.mean_delta[0], rep.var_delta[0]));
        }
        ExperimentKind::JumpMasked => {
            let e = cfg.jump();
            let (path, features) = jump_parts(cfg)?;
            file.expect(kind, features.n_params())?;
            let model = ParamModel::with_theta(features, cfg.link()?, file.theta.clone())?;
            let learned = KernelGenerator {
                kernel: &path,
                multipliers: |t: f64, x: usize| if x == MASK { model.predict(t, &x) } else { Vec::new() },
            };
            let sim = SimConfig { t_max: e.t_max, ..SimConfig::new(e.n_traj, derive_seed(cfg.seed, 12)) };
            let ctmc = ctmc_simulate(&learned, &path.initial(), &sim)?;
            let rep = dist_distance(&ctmc.dist, Reference::Exact(&path.terminal()), 0)?;
            let EmpiricalDist::Counts(counts) = &ctmc.dist else { unreachable!("ctmc returns counts") };
            let mut csv = String::from("state,count\n");
            for (s, c) in counts.iter().enumerate() {
                let _ = writeln!(csv, "{s},{c}");
            }
            ctx.write("counts.csv", csv)?;
            let probs = |t: f64| path.marginal_probs(t);
            let kfe = simulate::kfe_residual(&learned, probs, &simulate::kfe_grid(e.kfe_points), simulate::KFE_DT);
            let report = json!({
                "kind": kind.as_str(),
                "n_trajectories": e.n_traj,
                "tv": rep.tv,
                "mean_jumps": ctmc.mean_jumps,
                "kfe_residual": kfe,
                "truncation_bias": sim.truncation_bias(&path.kappa),
                "mean_delta": rep.mean_delta,
                "var_delta": rep.var_delta,
            });
            ctx.write("distance.json", json_text(&report))?;
            ctx.say(format!("simulated {} trajectories: TV {:.4e}, KFE residual {:.4e}", e.n_traj, rep.tv.unwrap_or(f64::NAN), kfe));
        }
    }
    Ok(())
}

fn parse_record(line: &str) -> Option<CheckRecord> {
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != 7 {
        return None;
    }
    let opt = |s: &str| if s.is_empty() { Some(None) } else { s.parse().ok().map(Some) };
    Some(CheckRecord {
        experiment: f[0].to_string(),
        metric: f[1].to_string(),
        value: f[2].parse().ok()?,
        std_error: opt(f[3])?,
        tolerance: opt(f[4])?,
        pass: f[5].parse().ok()?,
        wall_time_s: f[6].parse().ok()?,
    })
}

fn csv_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Config(format!("cannot read {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn report(ctx: &Ctx, dir: &Path) -> Result<(), CliError> {
    let mut records = Vec::new();
    let mut tidy = format!("{TIDY_HEADER}\n");
    for file in csv_files(dir)? {
        let text = fs::read_to_string(&file).map_err(|e| CliError::Io(format!("{}: {e}", file.display())))?;
        let mut lines = text.lines();
        let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("run").to_string();
        match lines.next() {
            Some(CSV_HEADER) => {
                for (i, line) in lines.enumerate() {
                    let r = parse_record(line)
                        .ok_or_else(|| CliError::Config(format!("{}: malformed record on line {}", file.display(), i + 2)))?;
                    let _ = writeln!(tidy, "{},,{},{:.16e}", r.experiment, r.metric, r.value);
                    records.push(r);
                }
            }
            Some(TRACE_HEADER) => {
                for line in lines {
                    if let Some((step, rest)) = line.split_once(',') {
                        let loss = rest.split(',').next().unwrap_or_default();
                        let _ = writeln!(tidy, "{stem},{step},loss,{loss}");
                    }
                }
            }
            _ => {}
        }
    }
    if records.is_empty() {
        return Err(CliError::EmptyResults(dir.display().to_string()));
    }
    let failed = records.iter().filter(|r| !r.pass).count();
    let mut md = String::from("# gmkit results\n\n");
    let _ = writeln!(md, "{} checks, {} failed.\n", records.len(), failed);
    md.push_str("| theorem | experiment | check | value | tolerance | pass |\n|---|---|---|---|---|---|\n");
    for r in &records {
        let theorem = r.experiment.split('/').next().unwrap_or_default();
        let tol = r.tolerance.map_or("-".to_string(), |t| format!("{t:.3e}"));
        let mark = if r.pass { "pass" } else { "**FAIL**" };
        let _ = writeln!(md, "| {theorem} | {} | {} | {:.6e} | {tol} | {mark} |", r.experiment, r.metric, r.value);
    }
    ctx.write("report.md", md)?;
    ctx.write("tidy.csv", tidy)?;
    ctx.say(format!("report: {} checks, {} failed", records.len(), failed));
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!("{failed} of {} checks failed", records.len())))
    }
}
