//! Kernel benchmarks. Run with the default `parallel` feature and again
//! with `--no-default-features` to compare the rayon path against the
//! sequential fallback:
//!
//! ```text
//! cargo bench -p bdsvie-core
//! cargo bench -p bdsvie-core --no-default-features
//! ```

use std::sync::Arc;

use bdsvie_core::bdsvie::{
    solve_bdsvie, SolverConfig, TerminalField, Variant, VolterraCoefficients,
};
use bdsvie_core::probability::{cond_expect, AlgebraLevel, NoiseModel, RandomField, TimeGrid};
use criterion::{criterion_group, criterion_main, Criterion};

fn model(n: usize) -> NoiseModel {
    NoiseModel::new(TimeGrid::new(1.0, n).unwrap())
}

fn bench_projection(c: &mut Criterion) {
    let n = 8;
    let nm = model(n);
    let f = nm
        .w_at(n)
        .mul_scalar_field(&nm.b_at(n))
        .map_atoms(1, |v, o| o[0] = (v[0] + 0.5).powi(3));
    c.bench_function("cond_expect_full_to_mid", |b| {
        b.iter(|| std::hint::black_box(cond_expect(&f, AlgebraLevel::f_t(n, n / 2))))
    });
}

fn bench_field_build(c: &mut Criterion) {
    let n = 9;
    c.bench_function("field_from_fn_4pow9", |b| {
        b.iter(|| {
            std::hint::black_box(RandomField::from_fn(AlgebraLevel::full(n), 1, |w, bb, out| {
                out[0] = (w as f64).sin() + (bb as f64).cos();
            }))
        })
    });
}

fn bench_solver(c: &mut Criterion) {
    let n = 5;
    let nm = model(n);
    let psi = TerminalField::uniform(&nm, nm.w_at(n)).unwrap();
    let coeffs = VolterraCoefficients {
        f: Arc::new(|_t, s, y, z, _w, out: &mut [f64]| out[0] = 0.3 * (y[0] + s).sin() - 0.2 * z[0]),
        g: Arc::new(|_t, _s, y, _z, _w, out: &mut [f64]| out[0] = 0.2 * y[0].cos()),
        c: 0.5,
        alpha: 0.05,
        variant: Variant::Simple,
        dim: 1,
    };
    let config = SolverConfig {
        picard_tol: 1e-9,
        ..SolverConfig::default()
    };
    c.bench_function("solve_bdsvie_n5_nonlinear", |b| {
        b.iter(|| std::hint::black_box(solve_bdsvie(&nm, &psi, &coeffs, &config).unwrap()))
    });
}

criterion_group!(kernels, bench_projection, bench_field_build, bench_solver);
criterion_main!(kernels);
