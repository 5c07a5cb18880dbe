use nalgebra::DMatrix;
use proptest::prelude::*;
use transcount::basis::{difference_penalty, theta_penalty, BSplineBasis};
use transcount::data::{augment, load_csv, CountDataset, Schema};
use transcount::link::Link;
use transcount::scoring::{brier, log_score, rps};
use transcount::transition::{
    self, loglik_binary, loglik_direct, Smoother, TransitionProblem, TransitionSpec, Variant, VaryingSpec,
};

fn quine() -> CountDataset {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data");
    let schema = Schema::from_file(format!("{dir}/quine.schema.toml")).unwrap();
    load_csv(format!("{dir}/quine.csv"), &schema).unwrap()
}

fn smoother(k: u8) -> Smoother {
    match k % 3 {
        0 => Smoother::ThetaQuadratic,
        1 => Smoother::psplines(),
        _ => Smoother::PSplines {
            num_basis: Some(5),
            degree: 2,
            order: 2,
        },
    }
}

fn variant(k: u8, p: usize) -> Variant {
    match k % 3 {
        1 if p > 0 => Variant::ZeroSplit,
        2 if p > 0 => Variant::Varying(VaryingSpec::all()),
        _ => Variant::Basic,
    }
}

prop_compose! {
    fn instance()(n in 1usize..8, p in 0usize..3)
        (y in prop::collection::vec(0usize..7, n),
         x in prop::collection::vec(-2.0f64..2.0, n * p),
         p in Just(p),
         link in any::<bool>(),
         s in any::<u8>(),
         v in any::<u8>(),
         seed in prop::collection::vec(-1.5f64..1.5, 64))
        -> (CountDataset, TransitionSpec, Vec<f64>)
    {
        let n = y.len();
        let names = (0..p).map(|j| format!("x{j}")).collect();
        let data = CountDataset::new(y, DMatrix::from_row_slice(n, p, &x), names).unwrap();
        let spec = TransitionSpec {
            link: if link { Link::Logit } else { Link::Cloglog },
            smoother: smoother(s),
            lambda: 0.5,
            variant: variant(v, p),
            ..Default::default()
        };
        let dim = TransitionProblem::new(&data, &spec).unwrap().dim();
        let params = seed.iter().cycle().take(dim).copied().collect();
        (data, spec, params)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn binary_and_direct_likelihoods_agree((data, spec, params) in instance()) {
        let a = loglik_binary(&params, &augment(&data, true), &spec).unwrap();
        let b = loglik_direct(&params, &data, &spec).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()), "{a} vs {b}");
    }

    #[test]
    fn gradient_matches_central_differences((data, spec, params) in instance()) {
        let prob = TransitionProblem::new(&data, &spec).unwrap();
        let g = prob.gradient(&params).unwrap();
        let h = 1e-5;
        for k in 0..params.len() {
            let mut up = params.clone();
            let mut dn = params.clone();
            up[k] += h;
            dn[k] -= h;
            let fd = (prob.penalized_loglik(&up).unwrap() - prob.penalized_loglik(&dn).unwrap()) / (2.0 * h);
            let scale = g[k].abs().max(1e-2);
            prop_assert!((fd - g[k]).abs() / scale < 1e-6, "param {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn scores_nonnegative(w in prop::collection::vec(0.0f64..1.0, 1..12), y in 0usize..15) {
        let total: f64 = w.iter().sum();
        prop_assume!(total > 1e-6);
        let pmf: Vec<f64> = w.iter().map(|v| v / total).collect();
        prop_assert!(rps(y, &pmf, 30) >= 0.0);
        if y < pmf.len() {
            prop_assert!(brier(y, &pmf).unwrap() >= 0.0);
            prop_assert!(log_score(y, &pmf) >= 0.0);
        }
    }

    #[test]
    fn bspline_partition_of_unity(x in 0.0f64..=1.0, upper in 1usize..60, m in 4usize..21, degree in 1usize..4) {
        prop_assume!(m >= degree + 1);
        let basis = BSplineBasis::new(upper, m, degree).unwrap();
        let v = basis.eval(x * upper as f64).unwrap();
        prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(v.iter().all(|b| *b >= -1e-15));
    }
}

#[test]
fn degenerate_pmf_scores_zero() {
    let pmf = [0.0, 0.0, 1.0, 0.0];
    assert_eq!(rps(2, &pmf, 30), 0.0);
    assert_eq!(brier(2, &pmf).unwrap(), 0.0);
    assert_eq!(log_score(2, &pmf), 0.0);
}

#[test]
fn penalty_null_spaces() {
    let q = 12;
    let p1 = difference_penalty(q, 1).unwrap();
    let p2 = difference_penalty(q, 2).unwrap();
    let constant = vec![2.5; q];
    let linear: Vec<f64> = (0..q).map(|k| 0.7 - 0.3 * k as f64).collect();
    assert!(p1.quadratic_form(&constant).abs() < 1e-12);
    assert!(p2.quadratic_form(&constant).abs() < 1e-12);
    assert!(p2.quadratic_form(&linear).abs() < 1e-12);
    assert!(p1.quadratic_form(&linear) > 0.1);
    assert!(theta_penalty(q).unwrap().quadratic_form(&vec![-1.0; q + 1]).abs() < 1e-12);
}

#[test]
fn null_model_at_zero_penalty_gives_empirical_hazards() {
    let y = vec![0, 0, 0, 0, 1, 1, 1, 2, 2, 2, 2, 3, 3, 4, 5, 5, 0, 1, 2, 6];
    let max = 6;
    let data = CountDataset::intercept_only(y.clone());
    for spec in [
        TransitionSpec::theta_quadratic(0.0).with_max_category(max),
        TransitionSpec::theta_quadratic(0.0),
    ] {
        let m = transition::fit(&data, &spec).unwrap();
        let theta = m.theta();
        for r in 0..max {
            let reached = y.iter().filter(|&&v| v >= r).count() as f64;
            let passed = y.iter().filter(|&&v| v > r).count() as f64;
            let oracle = (passed / (reached - passed)).ln();
            assert!((theta[r] - oracle).abs() < 1e-8, "r = {r}: {} vs {oracle}", theta[r]);
        }
        // hazard 1 at the top observed category: intercept not estimable
        assert!(m.is_separated(&format!("theta[{max}]")));
    }
}

#[test]
fn predicted_pmfs_normalized() {
    let d = quine();
    for spec in [
        TransitionSpec::psplines(16.0),
        TransitionSpec::theta_quadratic(5.0),
        TransitionSpec::psplines(16.0).with_variant(Variant::ZeroSplit),
        TransitionSpec::psplines(16.0).with_variant(Variant::Varying(VaryingSpec::only(&["Lrn"]))),
    ] {
        let m = transition::fit(&d, &spec).unwrap();
        let dist = transition::predict_pmf(&m, &d.covariates).unwrap();
        for p in &dist.pmf {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|v| *v >= 0.0));
        }
    }
}

#[test]
fn huge_penalty_flattens_intercepts() {
    let d = quine();
    for spec in [TransitionSpec::psplines(1e8), TransitionSpec::theta_quadratic(1e8)] {
        let m = transition::fit(&d, &spec).unwrap();
        let theta = m.theta();
        let lo = theta.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi - lo < 1e-4, "{:?}: spread {}", spec.smoother, hi - lo);
    }
}

#[test]
fn varying_fit_at_huge_penalty_matches_basic() {
    let d = quine();
    let basic = transition::fit(&d, &TransitionSpec::psplines(16.0)).unwrap();
    let mut varying = VaryingSpec::all();
    for name in &d.column_names {
        varying.lambda_overrides.insert(name.clone(), 1e8);
    }
    let wide = transition::fit(&d, &TransitionSpec::psplines(16.0).with_variant(Variant::Varying(varying))).unwrap();
    for name in &d.column_names {
        let b = basic.coefficient(name).unwrap();
        let curve = wide.effect_curve(name).unwrap();
        for (r, v) in curve.iter().enumerate() {
            assert!((v - b).abs() < 1e-3, "{name} at {r}: {v} vs {b}");
        }
    }
}

#[test]
fn continuation_ratio_ratio_constant_for_basic_fit() {
    let d = quine();
    let m = transition::fit(&d, &TransitionSpec::psplines(16.0)).unwrap();
    // Eth, Sex, Edu:1, Edu:2, Edu:3, Lrn
    let x = DMatrix::from_row_slice(2, d.p(), &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let dist = transition::predict_pmf(&m, &x).unwrap();
    let ratio = |p: &[f64], r: usize| p[r + 1..].iter().sum::<f64>() / p[r];
    let expected = ["Eth", "Edu:2", "Lrn"].iter().map(|c| m.coefficient(c).unwrap()).sum::<f64>().exp();
    for r in 0..30 {
        let v = ratio(&dist.pmf[0], r) / ratio(&dist.pmf[1], r);
        assert!((v / expected - 1.0).abs() < 1e-12, "r = {r}: {v} vs {expected}");
    }
}
