use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;
use valleyscope::annealer::{solve_sa, AnnealSchedule};
use valleyscope::gibbs::{gibbs_chain, relax_t0, DEFAULT_RELAX_SWEEPS};
use valleyscope::rbm::{cd_gradient, exact_log_partition};
use valleyscope::rng::stream_rng;
use valleyscope::valleys::escape_rate;
use valleyscope::{RbmParams, SpinState};
use valleyscope_bench::{digit_model, digit_problem};

fn random_visible(n: usize, seed: u64) -> Vec<i8> {
    (0..n)
        .map(|k| if (seed >> (k % 64)) & 1 == 1 { 1 } else { -1 })
        .collect()
}

fn rbm_kernels(c: &mut Criterion) {
    let params = digit_model(1);
    let v = random_visible(64, 0x9e37_79b9_7f4a_7c15);
    c.bench_function("free_energy_64x64", |b| {
        b.iter(|| params.free_energy(black_box(&v)).unwrap())
    });
    let batch: Vec<Vec<i8>> = (0..32)
        .map(|k| random_visible(64, 0x1234_5678_9abc_def0 ^ k))
        .collect();
    c.bench_function("cd5_gradient_64x64_batch32", |b| {
        b.iter(|| cd_gradient(&params, &batch, 5, 1.0, 7).unwrap())
    });
    let small = RbmParams::random_uniform(12, 8, 0.5, &mut stream_rng(2, 0));
    c.bench_function("exact_log_partition_12x8", |b| {
        b.iter(|| exact_log_partition(black_box(&small)).unwrap())
    });
}

fn sampling_kernels(c: &mut Criterion) {
    let params = digit_model(3);
    let v = random_visible(64, 0xdead_beef_cafe_f00d);
    c.bench_function("gibbs_chain_100_sweeps_64x64", |b| {
        b.iter_batched(
            || stream_rng(4, 0),
            |mut rng| gibbs_chain(&params, &v, 100, 1.0, &mut rng, None).unwrap(),
            BatchSize::SmallInput,
        )
    });
    let start = SpinState::new(v.clone(), vec![1; 64]);
    c.bench_function("relax_t0_64x64", |b| {
        b.iter_batched(
            || stream_rng(5, 0),
            |mut rng| relax_t0(&params, &start, DEFAULT_RELAX_SWEEPS, &mut rng, None).unwrap(),
            BatchSize::SmallInput,
        )
    });
    let problem = digit_problem(6);
    let schedule = AnnealSchedule {
        sweeps: 100,
        ..AnnealSchedule::default()
    };
    c.bench_function("solve_sa_2048_qubits_1_read_100_sweeps", |b| {
        b.iter(|| solve_sa(&problem, 1, &schedule, 8).unwrap())
    });
}

fn valley_kernels(c: &mut Criterion) {
    let params = RbmParams::random_uniform(8, 8, 0.5, &mut stream_rng(9, 0));
    let start = SpinState::new(vec![1; 8], vec![1; 8]);
    let id = relax_t0(
        &params,
        &start,
        DEFAULT_RELAX_SWEEPS,
        &mut stream_rng(10, 0),
        None,
    )
    .unwrap();
    c.bench_function("escape_rate_8x8_T0.5_10_trials", |b| {
        b.iter(|| escape_rate(&params, &id, 0.5, 10, 10_000, 11).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = rbm_kernels, sampling_kernels, valley_kernels
}
criterion_main!(benches);
