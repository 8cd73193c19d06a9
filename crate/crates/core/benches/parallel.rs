use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use stann::baselines::Autoregressive;
use stann::data::{synth, SynthKind, SynthParams};
use stann::exec::Exec;
use stann::model::StackConfig;
use stann::train::{rolling_origin_cv, StannForecaster, TrainConfig};

fn strategies() -> Vec<(&'static str, Exec)> {
    vec![
        ("sequential", Exec::Sequential),
        #[cfg(feature = "parallel")]
        ("parallel", Exec::Parallel),
    ]
}

fn cross_validation(c: &mut Criterion) {
    let p = SynthParams {
        series: 4,
        steps: 400,
        ..Default::default()
    };
    let frame = synth(SynthKind::Ar1Panel, &p, 1).expect("panel");
    let stack = StackConfig {
        width: 8,
        ..Default::default()
    };
    let stann = StannForecaster::new(TrainConfig {
        epochs: 10,
        train_window: 200,
        decoder_stack: stack,
        dynamic_stack: stack,
        ..Default::default()
    });
    let ar = Autoregressive::default();

    let mut group = c.benchmark_group("cv_4_origins");
    group.sample_size(10);
    for (label, exec) in strategies() {
        group.bench_with_input(BenchmarkId::new("stann", label), &exec, |b, &exec| {
            b.iter(|| rolling_origin_cv(frame.values(), 4, &stann, 200, 21, 4, exec).expect("cv"))
        });
        group.bench_with_input(BenchmarkId::new("ar", label), &exec, |b, &exec| {
            b.iter(|| rolling_origin_cv(frame.values(), 4, &ar, 200, 21, 4, exec).expect("cv"))
        });
    }
    group.finish();
}

criterion_group!(benches, cross_validation);
criterion_main!(benches);
