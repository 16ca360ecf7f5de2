use std::hint::black_box;

use biasbench_bench::{cate_test, fixture};
use biasbench_core::biasmodel::{optimize, statistic_and_gradient, Architecture, BiasModel, Objective, OptConfig};
use biasbench_core::crossu::cross_u;
use biasbench_core::dataset::FeatureSubset;
use biasbench_core::kernels::{cross_gram, KernelSpec};
use biasbench_core::nuisance::{fit_cate, RegressorSpec};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn kernels(c: &mut Criterion) {
    let mut g = c.benchmark_group("cross_gram");
    for n in [500, 2000] {
        let f = fixture(n, 100);
        let rows = f.trial.rows();
        let (a, b) = rows.split_at(n / 2);
        let subset = FeatureSubset::all(f.trial.dim());
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| cross_gram(black_box(a), black_box(b), &subset, &KernelSpec::default()))
        });
    }
    g.finish();
}

fn statistic(c: &mut Criterion) {
    let f = fixture(2000, 100);
    let test = cate_test(&f, Architecture::small_mlp());
    let m = test.design.m();
    let psi = &test.pseudo;
    c.bench_function("cross_u/m=1000", |bench| {
        bench.iter(|| cross_u(black_box(&psi[..m]), black_box(&psi[m..2 * m]), &test.design.gram))
    });

    let parts = test.parts_at(20.0).expect("parts");
    let obj = Objective::new(&test.design, &parts).expect("objective");
    let mut g = c.benchmark_group("statistic_and_gradient");
    for arch in [Architecture::Linear, Architecture::small_mlp(), Architecture::large_mlp()] {
        let model = BiasModel::init(arch.clone(), test.design.input_dim(), 3).expect("model");
        g.bench_function(arch.to_string(), |bench| {
            bench.iter(|| statistic_and_gradient(black_box(&model), &obj))
        });
    }
    g.finish();
}

fn optimizer(c: &mut Criterion) {
    let f = fixture(2000, 100);
    let test = cate_test(&f, Architecture::small_mlp());
    let parts = test.parts_at(30.0).expect("parts");
    let obj = Objective::new(&test.design, &parts).expect("objective");
    let model = test.init_model(4).expect("model");
    let cfg = OptConfig {
        epochs: 100,
        ..OptConfig::for_architecture(&Architecture::small_mlp())
    };
    let mut g = c.benchmark_group("optimize");
    g.sample_size(10);
    g.bench_function("small-mlp/100-epochs", |bench| {
        bench.iter(|| optimize(black_box(&model), &obj, &cfg))
    });
    g.finish();
}

fn nuisance(c: &mut Criterion) {
    let f = fixture(2000, 20_000);
    let rows = f.trial.rows();
    let mut g = c.benchmark_group("nuisance");
    g.sample_size(10);
    g.bench_function("knn_fit_predict/20000x2000", |bench| {
        bench.iter(|| fit_cate(black_box(&f.obs), RegressorSpec::Knn { k: None }).and_then(|cate| cate.predict_rows(&rows)))
    });
    g.finish();
}

criterion_group!(benches, kernels, statistic, optimizer, nuisance);
criterion_main!(benches);
