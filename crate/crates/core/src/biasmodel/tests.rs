use super::*;
use crate::nuisance::ToleranceBounds;
use crate::seed::rng_from_seed;
use rand::Rng;

struct Problem {
    x: Vec<Vec<f64>>,
    pseudo: Vec<f64>,
    center: Vec<f64>,
    design: FoldedDesign,
}

fn problem(n: usize, d: usize, seed: u64) -> Problem {
    let mut rng = rng_from_seed(seed);
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.5..1.5)).collect())
        .collect();
    let pseudo: Vec<f64> = x
        .iter()
        .map(|r| 2.0 * r.first().copied().unwrap_or(0.0) + rng.random_range(-3.0..3.0))
        .collect();
    let center: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let split = SplitHalves::new(n, seed ^ 1).unwrap();
    let design = FoldedDesign::new(&x, split, &FeatureSubset::all(d), &KernelSpec::default()).unwrap();
    Problem {
        x,
        pseudo,
        center,
        design,
    }
}

fn parts(p: &Problem, delta: f64) -> SignalParts {
    SignalParts::new(p.pseudo.clone(), &ToleranceBounds::around(&p.center, delta).unwrap()).unwrap()
}

#[test]
fn zero_span_gives_zero_gradient() {
    let p = problem(40, 3, 1);
    let parts = parts(&p, 0.0);
    let obj = Objective::new(&p.design, &parts).unwrap();
    for arch in [Architecture::Constant, Architecture::Linear, Architecture::small_mlp()] {
        let model = BiasModel::init(arch, 3, 2).unwrap();
        let (_, grad) = statistic_and_gradient(&model, &obj).unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));
    }
}

#[test]
fn gradient_matches_central_differences() {
    for (case, arch) in [
        Architecture::Constant,
        Architecture::Linear,
        Architecture::Mlp(vec![5]),
        Architecture::Mlp(vec![6, 3]),
    ]
    .into_iter()
    .enumerate()
    {
        let p = problem(30, 2, 10 + case as u64);
        let parts = parts(&p, 1.5);
        let obj = Objective::new(&p.design, &parts).unwrap();
        let model = BiasModel::init(arch, 2, case as u64).unwrap();
        let (_, grad) = statistic_and_gradient(&model, &obj).unwrap();
        let at = |params: &[f64]| {
            let m = BiasModel::new(model.architecture.clone(), 2, params.to_vec()).unwrap();
            statistic_and_gradient(&m, &obj).unwrap().0
        };
        for k in 0..model.param_count() {
            let mut q = model.parameters.clone();
            q[k] += 1e-5;
            let up = at(&q);
            q[k] -= 2e-5;
            let fd = (up - at(&q)) / 2e-5;
            let rel = (fd - grad[k]).abs() / grad[k].abs().max(1e-6);
            assert!(rel <= 1e-4, "case {case} param {k}: {fd} vs {}", grad[k]);
        }
    }
}

#[test]
fn free_weight_gradient_matches_differences() {
    let p = problem(24, 2, 4);
    let parts = parts(&p, 2.0);
    let obj = Objective::new(&p.design, &parts).unwrap();
    let g: Vec<f64> = (0..24).map(|i| 0.1 + 0.8 * ((i * 5) % 7) as f64 / 7.0).collect();
    let (t, dg) = obj.abs_statistic_and_grad_g(&g).unwrap();
    assert!((t - obj.abs_statistic_at(&g).unwrap()).abs() < 1e-14);
    for r in 0..24 {
        let mut a = g.clone();
        a[r] += 1e-6;
        let mut b = g.clone();
        b[r] -= 1e-6;
        let fd = (obj.abs_statistic_at(&a).unwrap() - obj.abs_statistic_at(&b).unwrap()) / 2e-6;
        assert!((fd - dg[r]).abs() < 1e-6 * (1.0 + dg[r].abs()));
    }
}

#[test]
fn absolute_value_chain_uses_sign() {
    // Flipping every pseudo-outcome and the centre flips T but not |T|.
    let p = problem(30, 1, 7);
    let a = parts(&p, 1.0);
    let flipped = SignalParts::new(
        p.pseudo.iter().map(|v| -v).collect(),
        &ToleranceBounds::around(&p.center.iter().map(|v| -v).collect::<Vec<_>>(), 1.0).unwrap(),
    )
    .unwrap();
    let model = BiasModel::new(Architecture::Constant, 1, vec![0.0]).unwrap();
    let (ta, ga) = statistic_and_gradient(&model, &Objective::new(&p.design, &a).unwrap()).unwrap();
    let (tb, gb) = statistic_and_gradient(&model, &Objective::new(&p.design, &flipped).unwrap()).unwrap();
    assert!((ta - tb).abs() < 1e-10);
    // At theta = 0 the reflected signal is psi(g) -> -psi(1 - g), so the
    // derivative in theta changes sign.
    assert!((ga[0] + gb[0]).abs() < 1e-8 * (1.0 + ga[0].abs()));
}

#[test]
fn model_dimension_must_match_subset() {
    let p = problem(20, 3, 2);
    let parts = parts(&p, 1.0);
    let obj = Objective::new(&p.design, &parts).unwrap();
    let model = BiasModel::init(Architecture::Linear, 2, 0).unwrap();
    assert!(matches!(statistic_and_gradient(&model, &obj), Err(Error::Shape(_))));
}

#[test]
fn optimizer_records_the_minimum() {
    let p = problem(60, 2, 3);
    let parts = parts(&p, 2.0);
    let obj = Objective::new(&p.design, &parts).unwrap();
    let model = BiasModel::init(Architecture::small_mlp(), 2, 1).unwrap();
    let cfg = OptConfig {
        epochs: 200,
        record_trace: true,
        seed: 5,
        restarts: 2,
        ..OptConfig::default()
    };
    let res = optimize(&model, &obj, &cfg).unwrap();
    let trace = res.trace.as_ref().unwrap();
    let min = trace.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(res.min_abs_statistic, min);
    assert!(trace.iter().all(|&t| res.min_abs_statistic <= t));
    assert_eq!(trace[res.epoch_of_min], res.min_abs_statistic);
    // The stored model reproduces the recorded value.
    let (t, _) = statistic_and_gradient(&res.best_model, &obj).unwrap();
    assert!((t - res.min_abs_statistic).abs() < 1e-12);
    // The starting point bounds the minimum.
    assert!(res.min_abs_statistic <= statistic_and_gradient(&model, &obj).unwrap().0);
    assert_eq!(res, optimize(&model, &obj, &cfg).unwrap());
}

#[test]
fn wide_tolerance_is_accepted() {
    let p = problem(80, 2, 9);
    let parts = parts(&p, 50.0);
    let obj = Objective::new(&p.design, &parts).unwrap();
    let model = BiasModel::init(Architecture::Linear, 2, 0).unwrap();
    let cfg = OptConfig {
        epochs: 500,
        ..OptConfig::default()
    };
    let res = optimize(&model, &obj, &cfg).unwrap();
    assert!(res.min_abs_statistic < crate::crossu::half_normal_threshold(0.05));
}

#[test]
fn span_free_is_a_single_evaluation() {
    let p = problem(40, 2, 6);
    let parts = parts(&p, 0.0);
    let obj = Objective::new(&p.design, &parts).unwrap();
    let model = BiasModel::init(Architecture::Linear, 2, 0).unwrap();
    let res = optimize(&model, &obj, &OptConfig::default()).unwrap();
    assert_eq!(res.epochs_run, 1);
    let other = BiasModel::init(Architecture::Linear, 2, 99).unwrap();
    assert_eq!(res.min_abs_statistic, optimize(&other, &obj, &OptConfig::default()).unwrap().min_abs_statistic);
}

#[test]
fn early_stop_settings() {
    let p = problem(60, 2, 8);
    let parts = parts(&p, 30.0);
    let obj = Objective::new(&p.design, &parts).unwrap();
    let model = BiasModel::init(Architecture::Linear, 2, 0).unwrap();
    let cfg = OptConfig {
        stop_below: Some(1.0),
        ..OptConfig::default()
    };
    let res = optimize(&model, &obj, &cfg).unwrap();
    assert!(res.min_abs_statistic < 1.0);
    assert!(res.epochs_run < 6000);
    let cfg = OptConfig {
        patience: Some(0),
        ..OptConfig::default()
    };
    assert!(matches!(optimize(&model, &obj, &cfg), Err(Error::Config(_))));
}

#[test]
fn config_validation() {
    assert!(OptConfig { epochs: 0, ..OptConfig::default() }.validate().is_err());
    assert!(OptConfig { learning_rate: 0.0, ..OptConfig::default() }.validate().is_err());
    assert!(OptConfig { restarts: 0, ..OptConfig::default() }.validate().is_err());
    assert_eq!(OptConfig::for_architecture(&Architecture::large_mlp()).learning_rate, 0.01);
    assert_eq!(OptConfig::for_architecture(&Architecture::small_mlp()).learning_rate, 0.1);
}

#[test]
fn witness_endpoints() {
    let rows = vec![vec![0.0], vec![1.0], vec![2.0]];
    let half = BiasModel::new(Architecture::Constant, 1, vec![0.0]).unwrap();
    assert_eq!(witness_bias(&half, 57.0, &[true, false, true], &rows).unwrap(), 0.0);
    let one = BiasModel::new(Architecture::Constant, 1, vec![800.0]).unwrap();
    assert_eq!(witness_bias(&one, 57.0, &[true, true, true], &rows).unwrap(), 57.0);
    assert!(matches!(witness_bias(&one, 57.0, &[false; 3], &rows), Err(Error::Domain(_))));
    assert!(witness_bias(&one, -1.0, &[true; 3], &rows).is_err());
    let _ = &problem(8, 1, 0).x;
}

#[test]
fn futility_stop_keeps_hopeless_decisions() {
    let p = problem(80, 2, 12);
    let parts = parts(&p, 0.2);
    let obj = Objective::new(&p.design, &parts).unwrap();
    let model = BiasModel::init(Architecture::Linear, 2, 0).unwrap();
    let target = 1e-3;
    let full = optimize(&model, &obj, &OptConfig { epochs: 2000, ..OptConfig::default() }).unwrap();
    assert!(full.min_abs_statistic > target);
    let cfg = OptConfig {
        epochs: 2000,
        stop_below: Some(target),
        futility_window: Some(50),
        ..OptConfig::default()
    };
    let quick = optimize(&model, &obj, &cfg).unwrap();
    assert!(quick.epochs_run < 2000);
    assert!(quick.min_abs_statistic >= full.min_abs_statistic);
    assert!(OptConfig { futility_window: Some(0), ..OptConfig::default() }.validate().is_err());
}
