use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use doa_core::penalty::{weight_matrix_with, WeightPath};
use doa_core::subproblem::FicmraSolver;
use doa_core::{
    estimate_noise_power, recover_doas, run_cmra, run_icmra, synthesize_snapshots,
    vandermonde_decompose, ArrayGeometry, CMat, FicmraWhitener, IcmraConfig, NoiseMode,
    PenaltyKind, PenaltySpec, Scenario, Snapshots,
};
use std::hint::black_box;

fn setup(m: usize) -> (ArrayGeometry, Snapshots, CMat) {
    let geom = ArrayGeometry::ula(m).unwrap();
    let x =
        synthesize_snapshots(&geom, &Scenario::equal_power(vec![-1.0, 3.0], 10.0, 400, 7)).unwrap();
    let t = run_cmra(&x, &geom, None).unwrap().toeplitz();
    (geom, x, t)
}

fn weights(c: &mut Criterion) {
    let (_, _, t) = setup(7);
    let mut g = c.benchmark_group("weight");
    for kind in [PenaltyKind::Logarithm, PenaltyKind::Lp] {
        let spec = PenaltySpec::new(kind, 0.1, 2.0).unwrap();
        for (name, path) in [("fast", WeightPath::Fast), ("eigen", WeightPath::Eigen)] {
            g.bench_function(BenchmarkId::new(kind.to_string(), name), |b| {
                b.iter(|| weight_matrix_with(&spec, black_box(&t), path).unwrap())
            });
        }
    }
    g.finish();
}

fn ficmra_step(c: &mut Criterion) {
    let mut g = c.benchmark_group("ficmra_step");
    for m in [7, 14] {
        let (geom, x, t) = setup(m);
        let r_hat = x.sample_covariance();
        let sigma = estimate_noise_power(&r_hat, &geom, NoiseMode::Direct).unwrap();
        let spec = PenaltySpec::new(PenaltyKind::Logarithm, 0.1, 2.0).unwrap();
        let w = weight_matrix_with(&spec, &t, WeightPath::Fast).unwrap();
        g.bench_function(BenchmarkId::new("setup", m), |b| {
            b.iter(|| {
                FicmraSolver::new(
                    black_box(&r_hat),
                    sigma,
                    &geom,
                    FicmraWhitener::SampleCovariance,
                )
                .unwrap()
            })
        });
        let solver =
            FicmraSolver::new(&r_hat, sigma, &geom, FicmraWhitener::SampleCovariance).unwrap();
        g.bench_function(BenchmarkId::new("solve", m), |b| {
            b.iter(|| solver.solve(black_box(&w), 0.1).unwrap())
        });
    }
    g.finish();
}

fn decomposition(c: &mut Criterion) {
    let (_, _, t) = setup(7);
    c.bench_function("vandermonde_k2", |b| {
        b.iter(|| vandermonde_decompose(black_box(&t), 2).unwrap())
    });
}

fn end_to_end(c: &mut Criterion) {
    let (geom, x, _) = setup(7);
    let mut g = c.benchmark_group("end_to_end");
    g.sample_size(10);
    for (name, cfg) in [
        ("cmra", IcmraConfig::cmra()),
        ("icmra_log", IcmraConfig::icmra(PenaltyKind::Logarithm)),
        ("ficmra_log", IcmraConfig::ficmra(PenaltyKind::Logarithm)),
    ] {
        g.bench_function(name, |b| {
            b.iter(|| {
                let res = run_icmra(black_box(&x), &geom, &cfg).unwrap();
                recover_doas(&res.toeplitz(), doa_core::DEFAULT_RANK_ETA).unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, weights, ficmra_step, decomposition, end_to_end);
criterion_main!(benches);
