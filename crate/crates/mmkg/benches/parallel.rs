use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use mmkg::evolve::{step, RadialGrid, ReducedMkg, Scheme};
use mmkg::forward::{build_initial_data, GaussianPulse};
use mmkg::interior_profile::{AmTable, AmTableSpec, SourceProfile};
use mmkg::scattering_data::{default_rho_grid, AmplitudeFamily, KleinGordonAmplitudes};
use mmkg::Exec;

const EXECUTORS: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn evolution_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("rk4_step");
    for r_max in [100.0, 400.0] {
        let grid = RadialGrid::new(0.05, r_max).unwrap();
        let (a, ad, p, pd) = GaussianPulse::new(0.5).profiles(&grid);
        let state = build_initial_data(grid, a, ad, p, pd).unwrap().state();
        let scheme = Scheme::default();
        let dt = scheme.cfl * grid.dr;
        for (name, exec) in EXECUTORS {
            group.bench_with_input(BenchmarkId::new(name, grid.n), &state, |b, s| {
                b.iter(|| step(black_box(s), dt, &ReducedMkg, &scheme, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn interior_table(c: &mut Criterion) {
    let amps = KleinGordonAmplitudes::from_families(
        &AmplitudeFamily::Zero,
        &AmplitudeFamily::Power { re: 1.0, im: 0.0, exponent: 1.75 },
        0.0,
        1.0,
        default_rho_grid(),
    )
    .unwrap();
    let src = SourceProfile::from_amplitudes(&amps).unwrap();
    let spec = AmTableSpec {
        dq: 0.2,
        n_xi: 8,
        tol: 1e-6,
        ..AmTableSpec::default()
    };
    let mut group = c.benchmark_group("am_table");
    group.sample_size(10);
    for (name, exec) in EXECUTORS {
        group.bench_function(name, |b| b.iter(|| AmTable::build(black_box(&src), spec, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, evolution_step, interior_table);
criterion_main!(benches);
