use gmkit::bregman::{DivergenceSpec, FamilyName};
use gmkit::flowpaths::{velocity_from_x1pred, AffineScheduler, AffineVelocity, GmmTarget};
use gmkit::jumpkernels::{MaskedPath, MASK};
use gmkit::losses::{cgm_loss_exact, grad_loss, DivergenceField, ExactSpec, LossSpec};
use gmkit::model::{FiniteStateFeatures, Link, ParamModel, TimeBasis};
use gmkit::path::Sampled;
use gmkit::quad;
use gmkit::timeweight::{reweight, KappaSchedule, TimeDistribution, WeightFn};
use proptest::prelude::*;

fn interior(family: FamilyName) -> impl Strategy<Value = f64> {
    match family {
        FamilyName::Mse => -5.0..5.0,
        FamilyName::Poisson => 1e-3..10.0,
        FamilyName::Bce => 1e-3..0.999,
    }
}

fn family() -> impl Strategy<Value = FamilyName> {
    prop_oneof![Just(FamilyName::Mse), Just(FamilyName::Poisson), Just(FamilyName::Bce)]
}

fn pair() -> impl Strategy<Value = (FamilyName, Vec<f64>, Vec<f64>)> {
    (family(), 1usize..5).prop_flat_map(|(f, d)| {
        (Just(f), prop::collection::vec(interior(f), d), prop::collection::vec(interior(f), d))
    })
}

proptest! {
    #[test]
    fn divergence_is_nonnegative_and_vanishes_on_the_diagonal((f, a, b) in pair()) {
        let spec = f.spec(a.len());
        prop_assert!(spec.eval(&a, &b).unwrap() >= 0.0);
        prop_assert!(spec.eval(&b, &b).unwrap().abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences((f, a, b) in pair()) {
        let spec = f.spec(a.len());
        let g = spec.grad_b(&a, &b).unwrap();
        for i in 0..b.len() {
            let h = 1e-6 * b[i].abs().clamp(1e-3, 1.0);
            let (mut up, mut dn) = (b.clone(), b.clone());
            up[i] += h;
            dn[i] -= h;
            if spec.domain.check_second_slot(&up).is_err() || spec.domain.check_second_slot(&dn).is_err() {
                continue;
            }
            let fd = (spec.eval(&a, &up).unwrap() - spec.eval(&a, &dn).unwrap()) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1.0), "{fd} vs {}", g[i]);
        }
    }

    #[test]
    fn tilted_density_integrates_to_one(c in 0.1f64..5.0, slope in 0.0f64..3.0, a in 1.0f64..4.0, b in 1.0f64..4.0) {
        let dist = TimeDistribution::Beta { a, b };
        let (tilted, k) = reweight(&dist, &WeightFn::Linear { slope, intercept: c }).unwrap();
        prop_assert!((tilted.normalization() - 1.0).abs() < 1e-6);
        prop_assert!(k >= c && k <= c + slope);
    }

    #[test]
    fn separable_sum_equals_parts(a in prop::collection::vec(1e-3f64..5.0, 3), b in prop::collection::vec(1e-3f64..0.999, 3)) {
        let sep = gmkit::bregman::make_separable(vec![DivergenceSpec::poisson(2), DivergenceSpec::bce(1)]).unwrap();
        let (x, y) = ([a[0], a[1], b[0]], [a[2], b[1], b[2]]);
        let parts = DivergenceSpec::poisson(2).eval(&x[..2], &y[..2]).unwrap() + DivergenceSpec::bce(1).eval(&x[2..], &y[2..]).unwrap();
        prop_assert_eq!(sep.eval(&x, &y).unwrap(), parts);
    }
}

#[test]
fn posterior_mean_prediction_reproduces_marginal_velocity() {
    let target = GmmTarget::one_d(&[(0.3, -1.2, 0.4), (0.7, 0.8, 0.6)]).unwrap();
    for scheduler in [AffineScheduler::Linear, AffineScheduler::Cosine] {
        let affine = AffineVelocity { scheduler: scheduler.clone() };
        for (i, t) in quad::linspace(0.02, 0.98, 40).into_iter().enumerate() {
            for k in 0..25 {
                let x = [-3.0 + 0.25 * k as f64 + 0.01 * i as f64];
                let x1 = target.posterior_x1_mean(&scheduler, t, &x);
                let via = velocity_from_x1pred(&affine, t, &x, &x1).unwrap()[0];
                let direct = target.marginal_velocity(&affine, t, &x).unwrap()[0];
                assert!((via - direct).abs() < 1e-10 * direct.abs().max(1.0), "t={t} x={x:?}: {via} vs {direct}");
            }
        }
    }
}

#[test]
fn monte_carlo_gradient_is_unbiased() {
    let path = MaskedPath::new(vec![0.2, 0.5, 0.3], KappaSchedule::Linear).unwrap();
    let mut dims = vec![0; 4];
    dims[MASK] = 3;
    let features = FiniteStateFeatures::new(TimeBasis::Legendre { degree: 2 }, dims);
    let theta: Vec<f64> = (0..9).map(|i| 0.3 * (i as f64 - 4.0)).collect();
    let model = ParamModel::with_theta(features, Link::Sigmoid, theta).unwrap();
    let (td, w) = (TimeDistribution::Beta { a: 2.0, b: 2.0 }, WeightFn::Linear { slope: 1.0, intercept: 0.5 });
    let div = DivergenceField::new(FamilyName::Bce);
    let exact = cgm_loss_exact(&path, &ExactSpec::new(div.clone(), td.clone(), w.clone()), &model).unwrap().grad;

    let runs: Vec<Vec<f64>> = (0..200)
        .map(|seed| {
            let spec = LossSpec { divergence: div.clone(), time_dist: td.clone(), weight: w.clone(), n_samples: 2000, seed };
            grad_loss(&Sampled(&path), &spec, &model).unwrap()
        })
        .collect();
    for i in 0..exact.len() {
        let mean = runs.iter().map(|g| g[i]).sum::<f64>() / 200.0;
        let var = runs.iter().map(|g| (g[i] - mean).powi(2)).sum::<f64>() / 199.0;
        let se = (var / 200.0).sqrt();
        assert!((mean - exact[i]).abs() <= 4.0 * se + 1e-12, "coordinate {i}: {mean} vs {} (se {se})", exact[i]);
    }
}
