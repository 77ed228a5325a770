use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use normkd_bench::batch;
use normkd_core::{Objective, TemperatureRule};
use std::hint::black_box;

fn rules() -> Vec<(&'static str, TemperatureRule)> {
    vec![
        ("fixed", TemperatureRule::Fixed(4.0)),
        ("multiset", TemperatureRule::MultiSet(vec![1.0, 2.0, 4.0])),
        ("normstd", TemperatureRule::norm_std(2.0)),
    ]
}

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("loss_value");
    for classes in [10, 100] {
        let b = batch(64, classes, 1);
        for (name, rule) in rules() {
            let obj = Objective::with_rule(rule, 1.0, 1.0);
            group.bench_with_input(BenchmarkId::new(name, classes), &b, |bench, b| {
                bench.iter(|| {
                    obj.evaluate(black_box(&b.student), Some(&b.teacher), &b.labels)
                        .unwrap()
                })
            });
        }
    }
    group.finish();
}

fn gradient(c: &mut Criterion) {
    let mut group = c.benchmark_group("loss_grad");
    for classes in [10, 100] {
        let b = batch(64, classes, 2);
        for (name, rule) in rules() {
            let obj = Objective::with_rule(rule, 1.0, 1.0);
            group.bench_with_input(BenchmarkId::new(name, classes), &b, |bench, b| {
                bench.iter(|| {
                    obj.value_and_grad(black_box(&b.student), Some(&b.teacher), &b.labels)
                        .unwrap()
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, forward, gradient);
criterion_main!(benches);
