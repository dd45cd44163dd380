use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use fidam_bench::{dyck_model, nested, random_game};
use fidam_core::classifier::Arch;
use fidam_core::interactions::{hessian, integrated_hessians, sii_matrix, stii_matrix, CoalitionMode, MethodConfig};
use fidam_core::removal::{BaselineKind, BaselineSpec, Game, OutputMode, StaticBaseline, ValueFunction};

fn exact() -> MethodConfig {
    MethodConfig { coalition_mode: CoalitionMode::Exact, ..MethodConfig::default() }
}

fn shapley(c: &mut Criterion) {
    let mut group = c.benchmark_group("exact_indices");
    for n in [8, 10, 12] {
        let g = random_game(n, 1);
        group.bench_with_input(BenchmarkId::new("sii", n), &g, |b, g| b.iter(|| sii_matrix(g, 0, &exact()).unwrap()));
        group.bench_with_input(BenchmarkId::new("stii", n), &g, |b, g| b.iter(|| stii_matrix(g, 0, &exact()).unwrap()));
    }
    group.finish();
}

// Full coalition table through the model: 2^n forwards, prefix-shared.
fn coalition_table(c: &mut Criterion) {
    let (g, model) = dyck_model(Arch::Lstm);
    let mut group = c.benchmark_group("coalition_table");
    group.sample_size(10);
    for k in [4, 5, 6] {
        let x = nested(k);
        group.bench_with_input(BenchmarkId::new("lstm_static_zero", 2 * k), &x, |b, x| {
            b.iter(|| {
                let vf = ValueFunction::new(&model, &g, BaselineSpec::new(BaselineKind::StaticZero));
                let game = Game::with_static(vf, x, &StaticBaseline::Zero).unwrap();
                black_box(game.table().unwrap())
            })
        });
    }
    group.finish();
}

fn second_order(c: &mut Criterion) {
    let (_, model) = dyck_model(Arch::Lstm);
    let x = nested(6);
    let cfg = MethodConfig { ih_steps: 16, ..MethodConfig::default() };
    let out = OutputMode::LogitWellformed;
    let mut group = c.benchmark_group("second_order");
    group.sample_size(10);
    group.bench_function("hessian_n12", |b| b.iter(|| hessian(&model, &x, out, &cfg).unwrap()));
    group.bench_function("integrated_hessians_n12_16_steps", |b| {
        b.iter(|| integrated_hessians(&model, &x, &StaticBaseline::Zero, out, &cfg).unwrap())
    });
    group.finish();
}

criterion_group!(benches, shapley, coalition_table, second_order);
criterion_main!(benches);
